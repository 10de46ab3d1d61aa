use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use super::{uniform, Bound, ParamId, ParamStore};
use crate::autodiff::Var;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

const GAMMA: f64 = 2.0;
const B: f64 = 1.0;

/// How the real-valued kernel estimate is turned into an odd size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KernelMode {
    /// Odd integer closest to the estimate, ties going up.
    NearestOdd,
    /// Smallest odd integer not below the estimate. Gives 7 at 1792 channels.
    #[default]
    CeilOdd,
}

impl fmt::Display for KernelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelMode::NearestOdd => "nearest_odd",
            KernelMode::CeilOdd => "ceil_odd",
        })
    }
}

impl FromStr for KernelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest_odd" => Ok(KernelMode::NearestOdd),
            "ceil_odd" => Ok(KernelMode::CeilOdd),
            other => Err(Error::Config(format!("unknown eca kernel mode {other:?}"))),
        }
    }
}

/// Attention kernel size for `channels` channels: `log2(C)/2 + 1/2` mapped to
/// an odd integer.
pub fn eca_kernel_size(channels: usize, mode: KernelMode) -> Result<usize> {
    if channels < 2 {
        return Err(Error::Param(format!("eca needs at least 2 channels, got {channels}")));
    }
    let t = (channels as f64).log2() / GAMMA + B / GAMMA;
    let k = match mode {
        KernelMode::NearestOdd => {
            let below = 2.0 * ((t - 1.0) / 2.0).floor() + 1.0;
            let above = below + 2.0;
            if t - below < above - t {
                below
            } else {
                above
            }
        }
        KernelMode::CeilOdd => {
            let c = t.ceil();
            if c % 2.0 == 0.0 {
                c + 1.0
            } else {
                c
            }
        }
    };
    Ok((k as usize).max(1))
}

/// Efficient channel attention: channel means, a shared 1-D convolution over
/// neighbouring channels, sigmoid gating.
#[derive(Clone, Debug, PartialEq)]
pub struct EcaBlock {
    pub channels: usize,
    pub mode: KernelMode,
    pub k: usize,
    pub kernel: ParamId,
}

impl EcaBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        mode: KernelMode,
    ) -> Result<Self> {
        let k = eca_kernel_size(channels, mode)?;
        let kernel = store.push(format!("{name}.kernel"), uniform(rng, vec![k], 1.0 / (k as f64).sqrt()));
        Ok(Self { channels, mode, k, kernel })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let dims = x.dims();
        if dims.len() != 3 || dims[0] != self.channels {
            return shape_err(format!("eca expects {} channels, got {dims:?}", self.channels));
        }
        let attention = x.global_avg_pool()?.conv1d_same(p.get(self.kernel))?.sigmoid()?;
        x.channel_scale(attention)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;
    use crate::testutil::{grad_check, random_tensor, rng};

    #[test]
    fn kernel_size_anchors() {
        assert_eq!(eca_kernel_size(1792, KernelMode::CeilOdd).unwrap(), 7);
        assert_eq!(eca_kernel_size(1792, KernelMode::NearestOdd).unwrap(), 5);
        assert_eq!(eca_kernel_size(448, KernelMode::CeilOdd).unwrap(), 5);
        assert_eq!(eca_kernel_size(448, KernelMode::NearestOdd).unwrap(), 5);
        assert!(matches!(eca_kernel_size(1, KernelMode::CeilOdd), Err(Error::Param(_))));
    }

    #[test]
    fn kernel_size_is_odd_and_matches_definition() {
        for c in 2..5000usize {
            let t = (c as f64).log2() / 2.0 + 0.5;
            let n = eca_kernel_size(c, KernelMode::NearestOdd).unwrap();
            let ce = eca_kernel_size(c, KernelMode::CeilOdd).unwrap();
            assert_eq!(n % 2, 1);
            assert_eq!(ce % 2, 1);
            assert!(ce as f64 >= t && (ce as f64) - t < 2.0);
            // no other odd integer is strictly closer
            for cand in (1..20).step_by(2) {
                assert!((n as f64 - t).abs() <= (cand as f64 - t).abs() + 1e-12);
            }
        }
    }

    #[test]
    fn zero_kernel_halves_input() {
        let mut store = ParamStore::<f64>::new();
        let block = EcaBlock::new(&mut store, &mut rng(0), "eca", 6, KernelMode::CeilOdd).unwrap();
        *store.get_mut(block.kernel) = Tensor::zeros(vec![block.k]);
        let x = random_tensor(&mut rng(1), &[6, 3, 4]);
        let tape = Tape::new();
        let p = store.bind(&tape, |_| false);
        let y = block.forward(&p, tape.constant(x.clone())).unwrap().value();
        assert_eq!(y, x.map(|v| v / 2.0));
    }

    #[test]
    fn output_shape_and_magnitude_contract() {
        let mut r = rng(2);
        for (c, h, w) in [(2, 1, 1), (8, 3, 5), (16, 2, 7)] {
            let mut store = ParamStore::<f64>::new();
            let block = EcaBlock::new(&mut store, &mut r, "eca", c, KernelMode::NearestOdd).unwrap();
            let x = random_tensor(&mut r, &[c, h, w]);
            let tape = Tape::new();
            let p = store.bind(&tape, |_| false);
            let y = block.forward(&p, tape.constant(x.clone())).unwrap().value();
            assert_eq!(y.dims(), x.dims());
            assert!(y.data().iter().zip(x.data()).all(|(a, b)| a.abs() <= b.abs()));
        }
        let mut store = ParamStore::<f64>::new();
        let block = EcaBlock::new(&mut store, &mut r, "eca", 4, KernelMode::CeilOdd).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape, |_| false);
        let wrong = tape.constant(Tensor::zeros(vec![5, 2, 2]));
        assert!(matches!(block.forward(&p, wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn gradient_through_block() {
        let mut r = rng(3);
        let mut store = ParamStore::<f64>::new();
        let block = EcaBlock::new(&mut store, &mut r, "eca", 9, KernelMode::CeilOdd).unwrap();
        let x = random_tensor(&mut r, &[9, 3, 3]);
        let kernel = store.get(block.kernel).clone();
        let err = grad_check(&[x, kernel], |_, v| {
            let p = Bound::from_vars(vec![v[1]]);
            block.forward(&p, v[0])?.square()?.sum()
        });
        assert!(err < 1e-4, "rel err {err}");
    }
}
