use crate::autodiff::Var;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Per-sample negative log-likelihood of `labels` under softmax(`logits`).
///
/// `logits` is `n×K` (or a single length-`K` row); the result has length `n`.
pub fn cross_entropy<'t, T: Scalar>(logits: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let dims = logits.dims();
    let (n, k) = match *dims.as_slice() {
        [k] => (1, k),
        [n, k] => (n, k),
        _ => return shape_err(format!("cross entropy logits must be n×K, got {dims:?}")),
    };
    if labels.len() != n {
        return shape_err(format!("{} labels for {n} rows", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} outside 0..{k}")));
    }
    let idx: Vec<usize> = labels.iter().enumerate().map(|(i, &l)| i * k + l).collect();
    logits.log_softmax()?.gather(&idx)?.scale(-T::one())
}

/// Single-row form returning a scalar loss.
pub fn cross_entropy_row<'t, T: Scalar>(logits: Var<'t, T>, label: usize) -> Result<Var<'t, T>> {
    cross_entropy(logits, &[label])
}

/// `(s_i - ŝ_i)^2` elementwise.
pub fn mse_per_sample<'t, T: Scalar>(pred: Var<'t, T>, truth: Var<'t, T>) -> Result<Var<'t, T>> {
    if pred.dims() != truth.dims() {
        return shape_err(format!("mse: {:?} vs {:?}", pred.dims(), truth.dims()));
    }
    pred.sub(truth)?.square()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;
    use crate::testutil::{grad_check, random_tensor, rng};

    #[test]
    fn uniform_logits_give_ln_k() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::<f64>::zeros(vec![2, 10]));
        let l = cross_entropy(z, &[3, 9]).unwrap().value();
        for v in l.data() {
            assert!((v - 10f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_logit_gives_vanishing_loss() {
        let tape = Tape::new();
        let mut z = Tensor::<f64>::zeros(vec![10]);
        z.data_mut()[4] = 30.0;
        let l = cross_entropy_row(tape.constant(z), 4).unwrap().item().unwrap();
        assert!((0.0..1e-12).contains(&l));
    }

    #[test]
    fn matches_direct_evaluation() {
        let mut r = rng(5);
        for _ in 0..20 {
            let z = random_tensor(&mut r, &[4, 10]).map(|v| 5.0 * v);
            let labels = [0, 3, 7, 9];
            let tape = Tape::new();
            let l = cross_entropy(tape.constant(z.clone()), &labels).unwrap().value();
            for (i, &lab) in labels.iter().enumerate() {
                let row = &z.data()[i * 10..(i + 1) * 10];
                let denom: f64 = row.iter().map(|v| v.exp()).sum();
                // -Σ q log p with one-hot q
                let direct: f64 = -(0..10)
                    .map(|j| if j == lab { (row[j].exp() / denom).ln() } else { 0.0 })
                    .sum::<f64>();
                assert!((l.data()[i] - direct).abs() < 1e-12);
                assert!(l.data()[i] >= 0.0);
            }
        }
    }

    #[test]
    fn label_out_of_range() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::<f64>::zeros(vec![10]));
        assert!(matches!(cross_entropy_row(z, 10), Err(Error::Data(_))));
    }

    #[test]
    fn mse_cases_and_gradient() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::<f64>::from_f64(vec![2], &[2., 4.]).unwrap());
        let t = tape.constant(Tensor::<f64>::from_f64(vec![2], &[1., 3.]).unwrap());
        let l = mse_per_sample(p, t).unwrap();
        assert_eq!(l.value().data(), &[1., 1.]);
        assert_eq!(l.mean().unwrap().item().unwrap(), 1.0);
        assert_eq!(mse_per_sample(p, p).unwrap().value().data(), &[0., 0.]);
        let short = tape.constant(Tensor::<f64>::zeros(vec![3]));
        assert!(matches!(mse_per_sample(p, short), Err(Error::Shape(_))));

        let mut r = rng(6);
        let pred = random_tensor(&mut r, &[5]);
        let truth = random_tensor(&mut r, &[5]);
        let tp = Tape::new();
        let pv = tp.param(pred.clone());
        let g = tp
            .backward(mse_per_sample(pv, tp.constant(truth.clone())).unwrap().mean().unwrap())
            .unwrap()
            .wrt(pv);
        for i in 0..5 {
            let expect = 2.0 * (pred.data()[i] - truth.data()[i]) / 5.0;
            assert!((g.data()[i] - expect).abs() < 1e-14);
        }
        let err = grad_check(&[pred, truth], |_, v| mse_per_sample(v[0], v[1])?.mean());
        assert!(err < 1e-6);
    }
}
