//! Diagonal Gaussians (plain and on-tape), analytic KL, log-densities and
//! the Bernoulli likelihood.
//!
//! Log-variances are clamped to `[-LOG_VAR_BOUND, LOG_VAR_BOUND]` whenever a
//! Gaussian is built; Bernoulli probabilities are clamped to
//! `[PROB_FLOOR, 1 - PROB_FLOOR]`. These are the only silent projections in
//! the library.

use std::f64::consts::PI;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LOG_VAR_BOUND: f64 = 30.0;
pub const PROB_FLOOR: f64 = 1e-7;

fn half_log_2pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

/// `N(mean, diag(exp(log_var)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::invalid(format!(
                "mean has {} entries but log_var has {}",
                mean.len(),
                log_var.len()
            )));
        }
        let log_var = log_var.into_iter().map(|v| v.clamp(-LOG_VAR_BOUND, LOG_VAR_BOUND)).collect();
        Ok(DiagGaussian { mean, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian { mean: vec![0.0; dim], log_var: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|v| v.exp()).collect()
    }

    /// `mean + exp(log_var / 2) ⊙ eps`.
    pub fn reparam_sample(&self, eps: &[f64]) -> Result<Vec<f64>> {
        if eps.len() != self.dim() {
            return Err(Error::invalid(format!("eps has {} entries, expected {}", eps.len(), self.dim())));
        }
        Ok(self.mean.iter().zip(&self.log_var).zip(eps).map(|((m, lv), e)| m + (0.5 * lv).exp() * e).collect())
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::invalid(format!("point has {} entries, expected {}", z.len(), self.dim())));
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.log_var)
            .zip(z)
            .map(|((m, lv), z)| -half_log_2pi() - 0.5 * lv - 0.5 * (z - m).powi(2) / lv.exp())
            .sum())
    }
}

/// `KL(q || p)` for diagonal Gaussians.
pub fn kl_diag(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::invalid(format!("kl between dimensions {} and {}", q.dim(), p.dim())));
    }
    Ok(0.5
        * (0..q.dim())
            .map(|d| {
                let (lq, lp) = (q.log_var[d], p.log_var[d]);
                lp - lq - 1.0 + (lq - lp).exp() + (p.mean[d] - q.mean[d]).powi(2) / lp.exp()
            })
            .sum::<f64>())
}

/// `Σ x log p + (1-x) log(1-p)` with `p` clamped away from 0 and 1.
pub fn bernoulli_log_prob(probs: &[f64], x: &[f64]) -> Result<f64> {
    if probs.len() != x.len() {
        return Err(Error::invalid(format!("{} probabilities for {} observations", probs.len(), x.len())));
    }
    let mut total = 0.0;
    for (&p, &xi) in probs.iter().zip(x) {
        if xi != 0.0 && xi != 1.0 {
            return Err(Error::invalid(format!("bernoulli observation must be 0 or 1, got {xi}")));
        }
        let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        total += if xi == 1.0 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total)
}

/// Batched diagonal Gaussian on a tape; `mean` and `log_var` are `[batch, dim]`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVar {
    pub mean: Var,
    pub log_var: Var,
}

impl GaussianVar {
    /// Clamps `raw_log_var` into the admissible range.
    pub fn new(tape: &mut Tape, mean: Var, raw_log_var: Var) -> Result<Self> {
        if tape.shape(mean) != tape.shape(raw_log_var) {
            return Err(Error::Shape {
                op: "gaussian",
                lhs: tape.shape(mean).to_vec(),
                rhs: tape.shape(raw_log_var).to_vec(),
            });
        }
        let log_var = tape.clamp(raw_log_var, -LOG_VAR_BOUND, LOG_VAR_BOUND)?;
        Ok(GaussianVar { mean, log_var })
    }

    pub fn standard(tape: &mut Tape, batch: usize, dim: usize) -> Self {
        let mean = tape.constant(Tensor::zeros(&[batch, dim]));
        let log_var = tape.constant(Tensor::zeros(&[batch, dim]));
        GaussianVar { mean, log_var }
    }

    /// Row `r` as a plain Gaussian.
    pub fn row(&self, tape: &Tape, r: usize) -> DiagGaussian {
        DiagGaussian { mean: tape.value(self.mean).row(r).to_vec(), log_var: tape.value(self.log_var).row(r).to_vec() }
    }

    /// Reparameterized draw `mean + exp(log_var/2) ⊙ eps`.
    pub fn sample(&self, tape: &mut Tape, eps: Var) -> Result<Var> {
        let half = tape.scale(self.log_var, 0.5)?;
        let std = tape.exp(half)?;
        let noise = tape.mul(std, eps)?;
        tape.add(self.mean, noise)
    }

    /// Per-row `KL(self || p)`, shape `[batch]`.
    pub fn kl(&self, tape: &mut Tape, p: &GaussianVar) -> Result<Var> {
        let dlv = tape.sub(p.log_var, self.log_var)?;
        let neg = tape.neg(dlv)?;
        let ratio = tape.exp(neg)?;
        let dm = tape.sub(p.mean, self.mean)?;
        let dm2 = tape.square(dm)?;
        let inv = tape.neg(p.log_var)?;
        let inv = tape.exp(inv)?;
        let quad = tape.mul(dm2, inv)?;
        let a = tape.add(dlv, ratio)?;
        let a = tape.add(a, quad)?;
        let a = tape.add_scalar(a, -1.0)?;
        let rows = tape.row_sum(a)?;
        tape.scale(rows, 0.5)
    }

    /// Per-row `log N(z; mean, diag(exp(log_var)))`, shape `[batch]`.
    pub fn log_density(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let dz = tape.sub(z, self.mean)?;
        let dz2 = tape.square(dz)?;
        let inv = tape.neg(self.log_var)?;
        let inv = tape.exp(inv)?;
        let quad = tape.mul(dz2, inv)?;
        let inner = tape.add(quad, self.log_var)?;
        let rows = tape.row_sum(inner)?;
        let dim = tape.shape(z)[1] as f64;
        let scaled = tape.scale(rows, -0.5)?;
        tape.add_scalar(scaled, -dim * half_log_2pi())
    }
}

/// Per-row Bernoulli log-likelihood of binary `x` under `sigmoid(logits)`.
pub fn bernoulli_log_prob_rows(tape: &mut Tape, logits: Var, x: &Tensor) -> Result<Var> {
    if tape.shape(logits) != x.shape() {
        return Err(Error::Shape { op: "bernoulli", lhs: tape.shape(logits).to_vec(), rhs: x.shape().to_vec() });
    }
    let probs = tape.sigmoid(logits)?;
    bernoulli_log_prob_probs(tape, probs, x)
}

/// As [`bernoulli_log_prob_rows`] but from probabilities.
pub fn bernoulli_log_prob_probs(tape: &mut Tape, probs: Var, x: &Tensor) -> Result<Var> {
    let p = tape.clamp(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
    let logp = tape.log(p)?;
    let q = tape.scale(p, -1.0)?;
    let q = tape.add_scalar(q, 1.0)?;
    let logq = tape.log(q)?;
    let xv = tape.constant(x.clone());
    let notx = tape.constant(x.map(|v| 1.0 - v));
    let a = tape.mul(logp, xv)?;
    let b = tape.mul(logq, notx)?;
    let s = tape.add(a, b)?;
    tape.row_sum(s)
}

/// Per-row Gaussian log-likelihood of `x` with row means `mean` and
/// log-variances `log_var`, both shaped like `x`.
pub fn gaussian_log_prob_rows(tape: &mut Tape, mean: Var, log_var: Var, x: &Tensor) -> Result<Var> {
    if tape.shape(mean) != x.shape() {
        return Err(Error::Shape { op: "gaussian-emission", lhs: tape.shape(mean).to_vec(), rhs: x.shape().to_vec() });
    }
    let xv = tape.constant(x.clone());
    let g = GaussianVar { mean, log_var };
    g.log_density(tape, xv)
}
