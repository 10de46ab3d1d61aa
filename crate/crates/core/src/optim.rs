//! Adam with coupled L2 weight decay, and the plateau learning-rate rule.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.98, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Adam state for one parameter list. Weight decay is added to the gradient
/// before the moment updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        let zeros = |p: &Tensor<T>| Tensor::zeros(p.dims().to_vec());
        Self { config, m: params.iter().map(zeros).collect(), v: params.iter().map(zeros).collect(), t: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update. `grads[i] == None` leaves parameter `i` and its moments
    /// untouched.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Option<Tensor<T>>]) {
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::one() - b1.powi(self.t as i32);
        let bc2 = T::one() - b2.powi(self.t as i32);
        let (lr, eps, wd) = (T::lit(c.lr), T::lit(c.eps), T::lit(c.weight_decay));
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j] + wd * p[j];
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Whether larger or smaller validation values are better.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

/// Halves the learning rate after two consecutive validation rounds without
/// a strict improvement over the best value seen.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub orientation: Orientation,
    pub patience: usize,
    pub factor: f64,
    best: Option<f64>,
    bad_rounds: usize,
}

impl PlateauScheduler {
    pub fn new(orientation: Orientation) -> Self {
        Self { orientation, patience: 2, factor: 0.5, best: None, bad_rounds: 0 }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Records one validation value; returns `true` when it is a new best.
    pub fn observe(&mut self, metric: f64, lr: &mut f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(b) => match self.orientation {
                Orientation::HigherBetter => metric > b,
                Orientation::LowerBetter => metric < b,
            },
        };
        if improved {
            self.best = Some(metric);
            self.bad_rounds = 0;
        } else {
            self.bad_rounds += 1;
            if self.bad_rounds >= self.patience {
                *lr *= self.factor;
                self.bad_rounds = 0;
            }
        }
        improved
    }
}

/// Learning rate after replaying `history` through the plateau rule.
pub fn lr_plateau_step(history: &[f64], lr: f64, orientation: Orientation) -> f64 {
    let mut sched = PlateauScheduler::new(orientation);
    let mut lr = lr;
    for &m in history {
        sched.observe(m, &mut lr);
    }
    lr
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_traces() {
        use Orientation::*;
        assert_eq!(lr_plateau_step(&[0.5, 0.6, 0.7], 1e-3, HigherBetter), 1e-3);
        assert_eq!(lr_plateau_step(&[0.7, 0.69], 1e-3, HigherBetter), 1e-3);
        assert_eq!(lr_plateau_step(&[0.7, 0.69, 0.68], 1e-3, HigherBetter), 5e-4);
        assert_eq!(lr_plateau_step(&[1.0, 0.9, 0.95], 1e-3, LowerBetter), 1e-3);
        assert_eq!(lr_plateau_step(&[1.0, 0.9, 0.95, 0.97], 1e-3, LowerBetter), 5e-4);
        // counter resets after a reduction and after an improvement
        assert_eq!(lr_plateau_step(&[1.0, 1.1, 1.2, 1.3], 1.0, LowerBetter), 0.5);
        assert_eq!(lr_plateau_step(&[1.0, 1.1, 1.2, 1.3, 1.4], 1.0, LowerBetter), 0.25);
        assert_eq!(lr_plateau_step(&[1.0, 1.1, 0.9, 1.2], 1.0, LowerBetter), 1.0);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() };
        let mut p = vec![Tensor::<f64>::from_f64(vec![3], &[1.0, 2.0, 3.0]).unwrap()];
        let mut opt = Adam::new(cfg, &p);
        let g = Tensor::from_f64(vec![3], &[0.5, -2.0, 0.0]).unwrap();
        opt.step(&mut p, &[Some(g)]);
        let d = p[0].data();
        assert!((d[0] - 0.9).abs() < 1e-7);
        assert!((d[1] - 2.1).abs() < 1e-7);
        assert_eq!(d[2], 3.0);
    }

    #[test]
    fn zero_gradient_moves_only_through_weight_decay() {
        let p0 = vec![Tensor::<f64>::from_f64(vec![2], &[1.0, -1.0]).unwrap()];
        let zero = Some(Tensor::zeros(vec![2]));
        let mut p = p0.clone();
        Adam::new(AdamConfig { weight_decay: 0.0, ..Default::default() }, &p).step(&mut p, std::slice::from_ref(&zero));
        assert_eq!(p, p0);
        let mut p = p0.clone();
        Adam::new(AdamConfig::default(), &p).step(&mut p, &[zero]);
        assert!(p[0].data()[0] < 1.0 && p[0].data()[1] > -1.0);
    }

    #[test]
    fn frozen_slots_untouched() {
        let mut p = vec![Tensor::<f64>::full(vec![2], 1.0), Tensor::full(vec![2], 1.0)];
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, &[None, Some(Tensor::full(vec![2], 1.0))]);
        assert_eq!(p[0].data(), &[1.0, 1.0]);
        assert_eq!(opt.m[0].data(), &[0.0, 0.0]);
        assert!(p[1].data()[0] < 1.0);
    }
}
