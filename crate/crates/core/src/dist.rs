//! Gamma, Beta and Dirichlet variates.
//!
//! Gamma draws use the Marsaglia–Tsang squeeze method. Shapes below one are
//! boosted through `G(a) = G(a + 1) · U^(1/a)`, carried out in log space
//! because for small concentrations the boosted value underflows `f64`.

use rand::distributions::Open01;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{FedError, Result};

/// Natural log of a Gamma(shape, 1) variate.
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.sample(Open01);
        return ln_gamma_variate(shape + 1.0, rng) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = rng.sample(Open01);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

pub fn gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    ln_gamma_variate(shape, rng).exp()
}

/// Beta(alpha, beta) as `X / (X + Y)` for independent gamma variates.
pub fn beta_sample<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> Result<f64> {
    check_shape("alpha", alpha)?;
    check_shape("beta", beta)?;
    let lx = ln_gamma_variate(alpha, rng);
    let ly = ln_gamma_variate(beta, rng);
    Ok(1.0 / (1.0 + (ly - lx).exp()))
}

/// Symmetric Dirichlet draw of dimension `k` with concentration `alpha`.
pub fn dirichlet_symmetric<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    check_shape("alpha", alpha)?;
    if k == 0 {
        return Err(FedError::Empty("dirichlet dimension"));
    }
    let logs: Vec<f64> = (0..k).map(|_| ln_gamma_variate(alpha, rng)).collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|&l| (l - m).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

/// Index drawn with probability proportional to `weights`; `None` if all are zero.
pub fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return None;
    }
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = Some(i);
        if target < acc {
            return Some(i);
        }
    }
    last
}

fn check_shape(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(FedError::InvalidParameter {
            name,
            reason: format!("must be positive and finite, got {v}"),
        })
    }
}
