//! Evaluation and counterfactual queries on a trained model, plus the exact
//! factorization check for linear-Gaussian systems.

use serde::{Deserialize, Serialize};

use crate::autodiff::{logsumexp, Tape};
use crate::data::{SequenceBatch, SequenceDataset};
use crate::error::{Error, Result};
use crate::gaussian::GaussianVar;
use crate::linear::{JointGaussian, LinearGaussianSystem, Mat, StructuredGaussian, Vector};
use crate::model::{column, Model, SimNoise, Trajectory};
use crate::rng::{Purpose, Rng, StreamKey};
use crate::tensor::Tensor;

/// Rows per tape when drawing importance samples.
const IS_CHUNK: usize = 512;

/// `log (1/S) Σ exp(w_s)`, stable for extreme weights.
pub fn is_estimate(log_weights: &[f64]) -> Result<f64> {
    if log_weights.is_empty() {
        return Err(Error::invalid("importance estimate needs at least one sample"));
    }
    Ok(logsumexp(log_weights)? - (log_weights.len() as f64).ln())
}

/// Log importance weights `log p(x, z | u) − log q(z | x, u)` for `samples`
/// posterior chains drawn by the recognition network for sequence `i` of
/// `data`. Draw `k` uses the `(seed, Proposal, round = i, sequence = k)` stream.
pub fn log_weights(model: &Model, data: &SequenceDataset, i: usize, samples: usize, seed: u64) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let s = model.latent_dim();
    let key = StreamKey::new(seed, Purpose::Proposal).round(i as u64);
    let mut out = Vec::with_capacity(samples);
    let mut start = 0;
    while start < samples {
        let m = IS_CHUNK.min(samples - start);
        let batch = SequenceBatch { ids: (start as u64..(start + m) as u64).collect(), ..data.batch(&vec![i; m]) };
        let mut tape = Tape::new();
        let p = model.params.bind_frozen(&mut tape);
        let inputs = model.rec.step_inputs(&batch.x, &batch.u)?;
        let features = model.rec.features(&mut tape, &p, &inputs)?;
        let eps: Vec<Tensor> = (0..batch.steps()).map(|t| key.normal_rows(&batch.ids, t as u32, s)).collect();
        let chain = model.rec.infer(&mut tape, &p, &features, &eps)?;
        let mut total = vec![0.0; m];
        for t in 0..batch.steps() {
            let prior = if t == 0 {
                GaussianVar::standard(&mut tape, m, s)
            } else {
                let u = tape.constant(batch.u[t - 1].clone());
                let dt = tape.constant(batch.dt[t - 1].clone());
                model.gen.transition(&mut tape, &p, chain[t - 1].z, u, dt)?
            };
            let lp = prior.log_density(&mut tape, chain[t].z)?;
            let lq = chain[t].q.log_density(&mut tape, chain[t].z)?;
            let ll = model.gen.log_likelihood(&mut tape, &p, chain[t].z, &batch.x[t])?;
            let mask = batch.mask[t].data();
            for (r, w) in total.iter_mut().enumerate() {
                *w += mask[r] * (tape.value(ll).data()[r] + tape.value(lp).data()[r] - tape.value(lq).data()[r]);
            }
        }
        if total.iter().any(|w| w.is_nan()) {
            return Err(Error::NonFinite(format!("importance weight of sequence {i}")));
        }
        out.extend(total);
        start += m;
    }
    Ok(out)
}

/// Importance-sampled `log p(x | u)` for every sequence of `data`.
pub fn is_loglik(model: &Model, data: &SequenceDataset, samples: usize, seed: u64) -> Result<Vec<f64>> {
    if data.obs_dim != model.obs_dim() || data.action_dim != model.action_dim() {
        return Err(Error::invalid("dataset dimensions do not match the model"));
    }
    (0..data.len).map(|i| is_estimate(&log_weights(model, data, i, samples, seed)?)).collect()
}

/// Importance-sampled `log p(x | u)` of a classical system with a Gaussian
/// chain as the proposal.
pub fn is_loglik_linear(
    sys: &LinearGaussianSystem,
    x: &[Vector],
    u: &[Vector],
    q: &StructuredGaussian,
    samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let sampler = q.sampler()?;
    let weights = (0..samples)
        .map(|_| {
            let z = sampler.sample(rng);
            Ok(sys.log_joint(x, u, &z)? - q.log_density(&z)?)
        })
        .collect::<Result<Vec<_>>>()?;
    is_estimate(&weights)
}

/// Per-step mean observations `[B,d]` from one posterior draw per row;
/// noise from `(seed, Posterior)` at the batch ids.
pub fn reconstruct(model: &Model, batch: &SequenceBatch, seed: u64) -> Result<Vec<Tensor>> {
    let s = model.latent_dim();
    let mut tape = Tape::new();
    let p = model.params.bind_frozen(&mut tape);
    let inputs = model.rec.step_inputs(&batch.x, &batch.u)?;
    let features = model.rec.features(&mut tape, &p, &inputs)?;
    let key = StreamKey::new(seed, Purpose::Posterior);
    let eps: Vec<Tensor> = (0..batch.steps()).map(|t| key.normal_rows(&batch.ids, t as u32, s)).collect();
    let chain = model.rec.infer(&mut tape, &p, &features, &eps)?;
    chain
        .iter()
        .zip(&batch.x)
        .map(|(step, x)| {
            let ind = model.gen.indicator_channel().map(|k| column(x, k));
            let raw = model.gen.emission(&mut tape, &p, step.z, ind.as_ref())?;
            Ok(model.gen.mean_observation(tape.value(raw)))
        })
        .collect()
}

/// Where the forecast starts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartState {
    /// One posterior draw per sample.
    #[default]
    Sample,
    /// The posterior mean, shared by all samples.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub channel: usize,
    pub value: f64,
}

/// A contrast between two future action sequences from the same observed
/// history. `prefix_x` has `t` steps and `prefix_u` has `t − 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterfactualQuery {
    pub prefix_x: Vec<Vec<f64>>,
    #[serde(default)]
    pub prefix_u: Vec<Vec<f64>>,
    pub factual: Vec<Vec<f64>>,
    pub alternative: Vec<Vec<f64>>,
    #[serde(default = "default_cf_samples")]
    pub num_samples: usize,
    /// `(channel, value)` interventions; only the indicator channel qualifies.
    #[serde(default)]
    pub do_assignments: Vec<(usize, f64)>,
    #[serde(default)]
    pub start: StartState,
    #[serde(default)]
    pub threshold: Option<Threshold>,
    #[serde(default)]
    pub seed: u64,
}

fn default_cf_samples() -> usize {
    1000
}

impl CounterfactualQuery {
    pub fn horizon(&self) -> usize {
        self.factual.len()
    }

    fn validate(&self, model: &Model) -> Result<Option<f64>> {
        let (d, c) = (model.obs_dim(), model.action_dim());
        if self.prefix_x.is_empty() || self.prefix_u.len() + 1 != self.prefix_x.len() {
            return Err(Error::invalid("prefix needs t observations and t - 1 actions"));
        }
        if self.factual.len() != self.alternative.len() {
            return Err(Error::invalid(format!(
                "factual and alternative futures differ in length ({} vs {})",
                self.factual.len(),
                self.alternative.len()
            )));
        }
        if self.num_samples == 0 {
            return Err(Error::invalid("num_samples must be positive"));
        }
        if self.prefix_x.iter().any(|v| v.len() != d)
            || self.prefix_u.iter().chain(&self.factual).chain(&self.alternative).any(|v| v.len() != c)
        {
            return Err(Error::invalid("observation or action width does not match the model"));
        }
        if let Some(th) = self.threshold {
            if th.channel >= d {
                return Err(Error::invalid(format!("threshold channel {} out of range", th.channel)));
            }
        }
        let mut value = None;
        for &(ch, v) in &self.do_assignments {
            if model.gen.indicator_channel() != Some(ch) {
                return Err(Error::invalid(format!(
                    "do-assignment on channel {ch}, which is not an indicator channel (indicator: {:?})",
                    model.gen.indicator_channel()
                )));
            }
            value = Some(v);
        }
        Ok(value)
    }
}

/// Per-step summaries of one branch; index 0 is the first forecast step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchSummary {
    pub latent_mean: Vec<Vec<f64>>,
    pub obs_mean: Vec<Vec<f64>>,
    pub above_threshold: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CounterfactualReport {
    pub query: CounterfactualQuery,
    pub filtered_latent_mean: Vec<f64>,
    pub factual: BranchSummary,
    pub alternative: BranchSummary,
    /// Alternative minus factual, with Monte Carlo standard errors.
    pub latent_difference: Vec<Vec<f64>>,
    pub latent_difference_stderr: Vec<Vec<f64>>,
    pub obs_difference: Vec<Vec<f64>>,
    pub obs_difference_stderr: Vec<Vec<f64>>,
}

/// Paired futures: `z[k]`, `means[k]` and `x[k]` are forecast step `k + 1`.
#[derive(Clone, Debug)]
pub struct CounterfactualSamples {
    pub start: Tensor,
    pub factual: Trajectory,
    pub alternative: Trajectory,
}

/// Round used for counterfactual noise.
const CF_ROUND: u64 = 1 << 32;

fn rows_of(vs: &[Vec<f64>], n: usize) -> Tensor {
    let w = vs.first().map_or(0, Vec::len);
    Tensor::from_parts(vec![n, w], (0..n).flat_map(|_| vs.iter().flatten().copied().take(w).collect::<Vec<_>>()).collect())
}

fn column_stats(t: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let n = t.rows() as f64;
    (0..t.cols())
        .map(|j| {
            let m = (0..t.rows()).map(|i| t.at(i, j)).sum::<f64>() / n;
            let var = if t.rows() > 1 { (0..t.rows()).map(|i| (t.at(i, j) - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            (m, (var / n).sqrt())
        })
        .unzip()
}

fn summarize(traj: &Trajectory, threshold: Option<Threshold>) -> BranchSummary {
    let steps = 1..traj.z.len();
    BranchSummary {
        latent_mean: steps.clone().map(|k| column_stats(&traj.z[k]).0).collect(),
        obs_mean: steps.clone().map(|k| column_stats(&traj.means[k]).0).collect(),
        above_threshold: match threshold {
            Some(th) => steps
                .map(|k| {
                    let m = &traj.means[k];
                    (0..m.rows()).filter(|&i| m.at(i, th.channel) > th.value).count() as f64 / m.rows() as f64
                })
                .collect(),
            None => Vec::new(),
        },
    }
}

/// Infers the latent state after the prefix, then rolls both branches
/// forward with identical noise, so any difference is due to the actions.
pub fn counterfactual(model: &Model, query: &CounterfactualQuery) -> Result<(CounterfactualReport, CounterfactualSamples)> {
    let intervention = query.validate(model)?;
    let (n, s, t) = (query.num_samples, model.latent_dim(), query.prefix_x.len());
    let ids: Vec<u64> = (0..n as u64).collect();
    let x: Vec<Tensor> = query.prefix_x.iter().map(|v| rows_of(std::slice::from_ref(v), n)).collect();
    let u: Vec<Tensor> = query.prefix_u.iter().map(|v| rows_of(std::slice::from_ref(v), n)).collect();
    let batch = SequenceBatch::dense(ids.clone(), x, u)?;

    let mut tape = Tape::new();
    let p = model.params.bind_frozen(&mut tape);
    let inputs = model.rec.step_inputs(&batch.x, &batch.u)?;
    let features = model.rec.features(&mut tape, &p, &inputs)?;
    let key = StreamKey::new(query.seed, Purpose::Posterior).round(CF_ROUND);
    let eps: Vec<Tensor> = (0..t).map(|k| key.normal_rows(&ids, k as u32, s)).collect();
    let chain = model.rec.infer(&mut tape, &p, &features, &eps)?;
    let last = chain.last().expect("non-empty prefix");
    let start = match query.start {
        StartState::Sample => tape.value(last.z).clone(),
        StartState::Mean => tape.value(last.q.mean).clone(),
    };

    let noise = SimNoise { seed: query.seed, round: CF_ROUND, ids, first_step: t as u32 };
    let dt = vec![Tensor::ones(&[n, 1]); query.horizon()];
    let fut = |acts: &[Vec<f64>]| -> Vec<Tensor> { acts.iter().map(|a| rows_of(std::slice::from_ref(a), n)).collect() };
    let factual = model.simulate(&start, &fut(&query.factual), &dt, &noise, intervention)?;
    let alternative = model.simulate(&start, &fut(&query.alternative), &dt, &noise, intervention)?;

    let diff = |a: &[Tensor], b: &[Tensor]| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut means = Vec::new();
        let mut errs = Vec::new();
        for k in 1..a.len() {
            let (m, e) = column_stats(&b[k].zip_map(&a[k], |p, q| p - q)?);
            means.push(m);
            errs.push(e);
        }
        Ok((means, errs))
    };
    let (latent_difference, latent_difference_stderr) = diff(&factual.z, &alternative.z)?;
    let (obs_difference, obs_difference_stderr) = diff(&factual.means, &alternative.means)?;
    let report = CounterfactualReport {
        query: query.clone(),
        filtered_latent_mean: column_stats(&start).0,
        factual: summarize(&factual, query.threshold),
        alternative: summarize(&alternative, query.threshold),
        latent_difference,
        latent_difference_stderr,
        obs_difference,
        obs_difference_stderr,
    };
    Ok((report, CounterfactualSamples { start, factual, alternative }))
}

/// Outcome of the factorization check; `per_step[k]` is the largest
/// deviation found for `z_{k+2}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FactorizationReport {
    pub max_deviation: f64,
    pub per_step: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Checks that `z_t | z_{t-1}, x_{1:T}` equals `z_t | z_{t-1}, x_{t:T}`
/// for every `t ≥ 2`: the coefficient maps, intercepts and covariances must
/// agree, observations before `t` must carry zero weight, and the
/// conditional means at the given data must match. `lag2` builds the joint
/// with an extra `z_{t-2} → z_t` edge, for which the check should fail.
pub fn check_factorization(
    sys: &LinearGaussianSystem,
    x: &[Vector],
    u: &[Vector],
    tol: f64,
    lag2: Option<&Mat>,
) -> Result<FactorizationReport> {
    if x.len() != u.len() + 1 || x.iter().any(|v| v.len() != sys.obs_dim()) {
        return Err(Error::invalid("check needs T observations of the system's width and T - 1 actions"));
    }
    let joint = JointGaussian::build(sys, u, lag2)?;
    let n = x.len();
    let all_x: Vec<usize> = (0..n).flat_map(|k| joint.x_indices(k)).collect();
    let x_vals: Vec<f64> = x.iter().flat_map(|v| v.iter().copied()).collect();
    let mut per_step = Vec::with_capacity(n.saturating_sub(1));
    for t in 1..n {
        let target = joint.z_indices(t);
        let prev = joint.z_indices(t - 1);
        let z_prev = joint.condition(&prev, &all_x, &Vector::from_column_slice(&x_vals))?.0;
        let full_given: Vec<usize> = prev.iter().chain(&all_x).copied().collect();
        let future_x: Vec<usize> = (t..n).flat_map(|k| joint.x_indices(k)).collect();
        let part_given: Vec<usize> = prev.iter().chain(&future_x).copied().collect();
        let full = joint.conditional(&target, &full_given)?;
        let part = joint.conditional(&target, &part_given)?;

        let s = prev.len();
        let d = sys.obs_dim();
        let past_cols = t * d;
        let full_prev = full.coef.columns(0, s).clone_owned();
        let full_past = full.coef.columns(s, past_cols).clone_owned();
        let full_future = full.coef.columns(s + past_cols, (n - t) * d).clone_owned();
        let part_prev = part.coef.columns(0, s).clone_owned();
        let part_future = part.coef.columns(s, (n - t) * d).clone_owned();

        let given_full: Vector = Vector::from_iterator(full_given.len(), z_prev.iter().copied().chain(x_vals.iter().copied()));
        let given_part: Vector =
            Vector::from_iterator(part_given.len(), z_prev.iter().copied().chain(x_vals[t * d..].iter().copied()));
        let mean_gap = full.mean_at(&given_full) - part.mean_at(&given_part);

        let dev = [
            max_abs_diff(&full_prev, &part_prev),
            max_abs_diff(&full_future, &part_future),
            full_past.iter().fold(0.0, |m, v| m.max(v.abs())),
            (&full.intercept - &part.intercept).amax(),
            max_abs_diff(&full.cov, &part.cov),
            mean_gap.amax(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        per_step.push(dev);
    }
    let max_deviation = per_step.iter().copied().fold(0.0, f64::max);
    Ok(FactorizationReport { max_deviation, per_step, tol, passed: max_deviation < tol })
}
