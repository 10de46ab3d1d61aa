//! Oracles and fixtures for the acceptance suite.

use std::time::Instant;

use amcr::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Floor on the relative-error denominator, so entries whose true gradient
/// is zero are judged by their absolute error.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values in `±[margin, 1)`, away from the relu kink.
pub fn away_from_zero(rng: &mut ChaCha8Rng, dims: &[usize], margin: f64) -> Tensor {
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(margin..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(dims.to_vec(), data).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Reduces any output to a scalar with fixed, non-uniform weights.
pub fn project<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>) -> amcr::Result<Var<'t, f64>> {
    let dims = y.dims();
    let n: usize = dims.iter().product();
    let r = (0..n).map(|j| 1.0 + 0.5 * (1.7 * j as f64 + 0.3).sin()).collect();
    y.mul(tape.constant(Tensor::new(dims, r)?))?.sum()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FdResult {
    pub max_rel: f64,
    pub max_abs: f64,
    pub entries: usize,
}

/// Tape gradients of a scalar function against central differences over
/// every entry of every input.
pub fn fd_check<F>(inputs: &[Tensor], f: F) -> FdResult
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> amcr::Result<Var<'t, f64>>,
{
    let eval = |ins: &[Tensor]| {
        let tape = Tape::new();
        let vars: Vec<_> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).unwrap().item().unwrap()
    };
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();
    let mut res = FdResult::default();
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + FD_STEP;
            let plus = eval(&work);
            work[i].data_mut()[j] = x - FD_STEP;
            let minus = eval(&work);
            work[i].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.data()[j];
            res.max_rel = res.max_rel.max(rel_err(a, numeric));
            res.max_abs = res.max_abs.max((a - numeric).abs());
            res.entries += 1;
        }
    }
    res
}

pub fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 }
}

/// One PASS / FAIL line per criterion, printed as it completes.
#[derive(Default)]
pub struct Report {
    failed: Vec<String>,
}

impl Report {
    pub fn run(&mut self, name: &str, f: impl FnOnce() -> (bool, String)) {
        let t0 = Instant::now();
        let (pass, detail) = f();
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {detail} [{:.1}s]", t0.elapsed().as_secs_f64());
        if !pass {
            self.failed.push(name.to_string());
        }
    }

    pub fn finish(self) {
        if self.failed.is_empty() {
            println!("acceptance: all criteria pass");
        } else {
            println!("acceptance: failing criteria: {}", self.failed.join(", "));
            std::process::exit(1);
        }
    }
}
