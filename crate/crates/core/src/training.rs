//! The variational bound, its optimization, and checkpoints.
//!
//! Every random draw is addressed by `(seed, purpose, round, sequence id,
//! step)`, and per-batch gradients are summed over fixed micro-batches in a
//! fixed order, so a run is bitwise reproducible for any worker count.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{Tape, Var};
use crate::data::{ntc, SequenceBatch, SequenceDataset};
use crate::error::{Error, Result};
use crate::gaussian::GaussianVar;
use crate::linear::{cholesky, gaussian_kl, Mat, StructuredGaussian, Vector};
use crate::model::{Model, ModelConfig};
use crate::nn::{clip_global_norm, dropout, AdamConfig, AdamState};
use crate::param::Bound;
use crate::rng::{Purpose, StreamKey};
use crate::tensor::Tensor;

/// Round used for evaluation noise, disjoint from every training round.
pub const EVAL_ROUND: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Reparameterized samples per bound evaluation.
    pub samples: usize,
    pub dropout: f64,
    /// Action noise amplitude as a fraction of the dataset's largest |u|.
    pub action_noise: f64,
    pub seed: u64,
    /// Evaluate on held-out data every this many epochs (0 disables).
    pub eval_every: usize,
    /// Threads used for gradient computation.
    pub workers: usize,
    /// Rows per gradient work unit; part of the reduction order.
    pub micro_batch: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 64,
            epochs: 30,
            samples: 1,
            dropout: 0.1,
            action_noise: 0.1,
            seed: 0,
            eval_every: 1,
            workers: 1,
            micro_batch: 16,
            clip_norm: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.samples == 0 || self.workers == 0 || self.micro_batch == 0 {
            return Err(Error::invalid("batch size, samples, workers and micro-batch must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.action_noise >= 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::invalid("action noise must be non-negative and the clip norm positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }
}

/// Tape handles of one bound evaluation. `per_row` is `[B]`; `recon[t]`
/// and `kl[t]` are `[B]` and already masked; `total` is the sum over rows.
#[derive(Clone, Debug)]
pub struct ElboTerms {
    pub total: Var,
    pub per_row: Var,
    pub recon: Vec<Var>,
    pub kl: Vec<Var>,
}

fn masked(tape: &mut Tape, v: Var, mask: &Tensor, what: &str, t: usize) -> Result<Var> {
    if !tape.value(v).all_finite() {
        return Err(Error::NonFinite(format!("{what} term at step {}", t + 1)));
    }
    let m = tape.constant(mask.clone());
    tape.mul(v, m)
}

fn accumulate(tape: &mut Tape, acc: Option<Var>, v: Var) -> Result<Var> {
    match acc {
        Some(a) => tape.add(a, v),
        None => Ok(v),
    }
}

/// The bound for a batch: per step `E_q[log p(x_t | z_t)]` by a
/// reparameterized draw, minus `KL(q(z_1) || N(0, I))` and
/// `KL(q(z_t | z_{t-1}) || p(z_t | z_{t-1}, u_{t-1}))` evaluated at the drawn
/// `z_{t-1}`. `rec_x` is what the recognition network sees (possibly with
/// dropout); the likelihood always uses `batch.x`. Posterior noise for
/// sample `k` at step `t` comes from `key` at step `k·T + t`.
pub fn elbo(
    model: &Model,
    tape: &mut Tape,
    p: &Bound,
    batch: &SequenceBatch,
    rec_x: &[Tensor],
    key: StreamKey,
    samples: usize,
) -> Result<ElboTerms> {
    let (n, s, b) = (batch.steps(), model.latent_dim(), batch.size());
    if rec_x.len() != n || samples == 0 {
        return Err(Error::invalid("recognition input must cover every step and samples must be positive"));
    }
    let inputs = model.rec.step_inputs(rec_x, &batch.u)?;
    let features = model.rec.features(tape, p, &inputs)?;
    let dts: Vec<Var> = batch.dt.iter().map(|d| tape.constant(d.clone())).collect();
    let us: Vec<Var> = batch.u.iter().map(|u| tape.constant(u.clone())).collect();
    let mut recon_acc: Vec<Option<Var>> = vec![None; n];
    let mut kl_acc: Vec<Option<Var>> = vec![None; n];
    for k in 0..samples {
        let eps: Vec<Tensor> = (0..n).map(|t| key.normal_rows(&batch.ids, (k * n + t) as u32, s)).collect();
        let chain = model.rec.infer(tape, p, &features, &eps)?;
        for t in 0..n {
            let ll = model.gen.log_likelihood(tape, p, chain[t].z, &batch.x[t])?;
            let prior = if t == 0 {
                GaussianVar::standard(tape, b, s)
            } else {
                model.gen.transition(tape, p, chain[t - 1].z, us[t - 1], dts[t - 1])?
            };
            let kl = chain[t].q.kl(tape, &prior)?;
            let ll = masked(tape, ll, &batch.mask[t], "reconstruction", t)?;
            let kl = masked(tape, kl, &batch.mask[t], "KL", t)?;
            recon_acc[t] = Some(accumulate(tape, recon_acc[t], ll)?);
            kl_acc[t] = Some(accumulate(tape, kl_acc[t], kl)?);
        }
    }
    let inv = 1.0 / samples as f64;
    let mut recon = Vec::with_capacity(n);
    let mut kl = Vec::with_capacity(n);
    let mut per_row: Option<Var> = None;
    for t in 0..n {
        let r = tape.scale(recon_acc[t].expect("every step visited"), inv)?;
        let k = tape.scale(kl_acc[t].expect("every step visited"), inv)?;
        let term = tape.sub(r, k)?;
        per_row = Some(accumulate(tape, per_row, term)?);
        recon.push(r);
        kl.push(k);
    }
    let per_row = per_row.expect("at least one step");
    let total = tape.sum(per_row)?;
    if !tape.value(total).all_finite() {
        return Err(Error::NonFinite("bound total".into()));
    }
    Ok(ElboTerms { total, per_row, recon, kl })
}

/// Sums of the bound and its parts over the rows of a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ElboSums {
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    pub rows: usize,
}

impl ElboSums {
    fn of(tape: &Tape, terms: &ElboTerms) -> Self {
        let sum = |vs: &[Var]| vs.iter().map(|v| tape.value(*v).sum()).sum::<f64>();
        ElboSums {
            elbo: tape.value(terms.total).item(),
            recon: sum(&terms.recon),
            kl: sum(&terms.kl),
            rows: tape.value(terms.per_row).len(),
        }
    }

    fn add(&mut self, o: &ElboSums) {
        self.elbo += o.elbo;
        self.recon += o.recon;
        self.kl += o.kl;
        self.rows += o.rows;
    }

    /// Per-sequence averages.
    pub fn mean(&self) -> ElboSummary {
        let n = self.rows.max(1) as f64;
        ElboSummary { elbo: self.elbo / n, recon: self.recon / n, kl: self.kl / n }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboSummary {
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
}

/// `KL(q || p)` for a Gaussian-chain posterior against the random-walk
/// prior `z_1 ~ N(0, I)`, `z_t ~ N(z_{t-1} + u_{t-1}, (dt/Δ) I)`, as the
/// per-step sum with every expectation over `q(z_{t-1})` taken in closed form.
pub fn random_walk_kl(q: &StructuredGaussian, u: &[Vector], dt: &[f64], delta: f64) -> Result<f64> {
    let s = q.dim();
    if u.len() + 1 != q.len() || dt.len() != u.len() {
        return Err(Error::invalid("random-walk KL needs T-1 actions and time gaps for a T-step posterior"));
    }
    let mut total = gaussian_kl(&q.m1, &q.p1, &Vector::zeros(s), &Mat::identity(s, s))?;
    let marg = q.marginals();
    for (t, step) in q.steps.iter().enumerate() {
        let var = dt[t] / delta;
        let (m_prev, p_prev) = &marg[t];
        let drift = &step.a - Mat::identity(s, s);
        let mean_gap = &drift * m_prev + &step.b - &u[t];
        let spread = (&drift * p_prev * drift.transpose()).trace();
        let log_det_s = 2.0 * cholesky(&step.s, "conditional covariance")?.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        total += 0.5
            * ((step.s.trace() + mean_gap.norm_squared() + spread) / var - s as f64 + s as f64 * var.ln() - log_det_s);
    }
    Ok(total)
}

/// Dropout on the recognition input and uniform action noise of amplitude
/// `amplitude`. Rows draw from their own `(seed, round, id)` streams.
pub fn regularize_batch(
    batch: &SequenceBatch,
    rate: f64,
    amplitude: f64,
    seed: u64,
    round: u64,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let drop_key = StreamKey::new(seed, Purpose::Dropout).round(round);
    let rec_x = if rate == 0.0 {
        batch.x.clone()
    } else {
        batch
            .x
            .iter()
            .enumerate()
            .map(|(t, x)| {
                let mut data = Vec::with_capacity(x.len());
                for (i, &id) in batch.ids.iter().enumerate() {
                    let mut rng = drop_key.sequence(id).step(t as u32).rng();
                    let row = Tensor::from_parts(vec![1, x.cols()], x.row(i).to_vec());
                    data.extend_from_slice(dropout(&row, rate, &mut rng, true)?.data());
                }
                Ok(Tensor::from_parts(x.shape().to_vec(), data))
            })
            .collect::<Result<_>>()?
    };
    let u = if amplitude == 0.0 {
        batch.u.clone()
    } else {
        let key = StreamKey::new(seed, Purpose::ActionNoise).round(round);
        batch
            .u
            .iter()
            .enumerate()
            .map(|(t, u)| {
                let noise = key.uniform_rows(&batch.ids, t as u32, u.cols());
                u.zip_map(&noise, |a, r| a + amplitude * (2.0 * r - 1.0))
            })
            .collect::<Result<_>>()?
    };
    Ok((rec_x, u))
}

fn micro_batches(indices: &[usize], size: usize) -> Vec<&[usize]> {
    indices.chunks(size).collect()
}

fn run_parallel<T: Send>(pool: Option<&rayon::ThreadPool>, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    match pool {
        Some(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        None => (0..n).map(f).collect(),
    }
}

fn build_pool(workers: usize) -> Result<Option<Arc<rayon::ThreadPool>>> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(|p| Some(Arc::new(p)))
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// Per-sequence averages of the bound over `data` without regularization.
/// Noise comes from the evaluation round of `seed`.
pub fn evaluate(model: &Model, data: &SequenceDataset, seed: u64, samples: usize, workers: usize) -> Result<ElboSummary> {
    Ok(evaluate_rows(model, data, seed, samples, workers)?.0.mean())
}

/// As [`evaluate`], also returning each sequence's bound.
pub fn evaluate_rows(
    model: &Model,
    data: &SequenceDataset,
    seed: u64,
    samples: usize,
    workers: usize,
) -> Result<(ElboSums, Vec<f64>)> {
    check_dims(model, data)?;
    let pool = build_pool(workers)?;
    let indices: Vec<usize> = (0..data.len).collect();
    let chunks = micro_batches(&indices, 64);
    let key = StreamKey::new(seed, Purpose::Posterior).round(EVAL_ROUND);
    let parts = run_parallel(pool.as_deref(), chunks.len(), |c| -> Result<(ElboSums, Vec<f64>)> {
        let batch = data.batch(chunks[c]);
        let mut tape = Tape::new();
        let p = model.params.bind_frozen(&mut tape);
        let terms = elbo(model, &mut tape, &p, &batch, &batch.x, key, samples)?;
        Ok((ElboSums::of(&tape, &terms), tape.value(terms.per_row).to_vec()))
    });
    let mut sums = ElboSums::default();
    let mut rows = Vec::with_capacity(data.len);
    for part in parts {
        let (s, r) = part?;
        sums.add(&s);
        rows.extend(r);
    }
    Ok((sums, rows))
}

fn check_dims(model: &Model, data: &SequenceDataset) -> Result<()> {
    if data.obs_dim != model.obs_dim() || data.action_dim != model.action_dim() {
        return Err(Error::invalid(format!(
            "dataset has obs/action dims {}/{}, model expects {}/{}",
            data.obs_dim,
            data.action_dim,
            model.obs_dim(),
            model.action_dim()
        )));
    }
    Ok(())
}

/// One row of the per-epoch log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    /// Updates whose gradient norm exceeded the clip threshold.
    pub clipped: usize,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,elbo,recon,kl";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.elbo, self.recon, self.kl)
    }
}

/// The per-epoch log as CSV text, header included.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from(EpochMetrics::CSV_HEADER);
    out.push('\n');
    for m in history {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub elbo: f64,
}

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub params: Vec<(String, Tensor)>,
    pub adam: AdamState,
    pub epoch: usize,
    pub step: u64,
    pub history: Vec<EpochMetrics>,
    pub eval_history: Vec<EvalRecord>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.model_config.clone(), 0)?;
        model.params.load(self.params.iter().map(|(n, t)| (n.as_str(), t)))?;
        Ok(model)
    }

    pub fn to_ntc(&self) -> Result<(String, Vec<(String, Tensor)>)> {
        let meta = json!({
            "kind": "checkpoint",
            "model_config": self.model_config,
            "train_config": self.train_config,
            "adam": { "config": self.adam.config, "t": self.adam.t },
            "epoch": self.epoch,
            "step": self.step,
            "elbo_history": self.history,
            "eval_history": self.eval_history,
        });
        let mut tensors = Vec::with_capacity(3 * self.params.len());
        for (name, t) in &self.params {
            tensors.push((format!("param.{name}"), t.clone()));
        }
        for (k, (name, _)) in self.params.iter().enumerate() {
            tensors.push((format!("adam.m.{name}"), self.adam.m[k].clone()));
            tensors.push((format!("adam.v.{name}"), self.adam.v[k].clone()));
        }
        Ok((serde_json::to_string(&meta)?, tensors))
    }

    pub fn from_ntc(metadata: &str, tensors: &[(String, Tensor)]) -> Result<Self> {
        #[derive(Deserialize)]
        struct AdamMeta {
            config: AdamConfig,
            t: u64,
        }
        #[derive(Deserialize)]
        struct Meta {
            kind: String,
            model_config: ModelConfig,
            train_config: TrainConfig,
            adam: AdamMeta,
            epoch: usize,
            step: u64,
            elbo_history: Vec<EpochMetrics>,
            eval_history: Vec<EvalRecord>,
        }
        let meta: Meta = serde_json::from_str(metadata)?;
        if meta.kind != "checkpoint" {
            return Err(Error::format(format!("container holds a {:?}, not a checkpoint", meta.kind)));
        }
        let get = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::format(format!("checkpoint has no tensor {name:?}")))
        };
        let params: Vec<(String, Tensor)> = tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix("param.").map(|s| (s.to_string(), t.clone())))
            .collect();
        let m = params.iter().map(|(n, _)| get(&format!("adam.m.{n}"))).collect::<Result<_>>()?;
        let v = params.iter().map(|(n, _)| get(&format!("adam.v.{n}"))).collect::<Result<_>>()?;
        let ck = Checkpoint {
            model_config: meta.model_config,
            train_config: meta.train_config,
            params,
            adam: AdamState { config: meta.adam.config, t: meta.adam.t, m, v },
            epoch: meta.epoch,
            step: meta.step,
            history: meta.elbo_history,
            eval_history: meta.eval_history,
        };
        ck.model()?;
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let (meta, tensors) = self.to_ntc()?;
        ntc::write(path, &meta, &tensors)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = ntc::read(path)?;
        Checkpoint::from_ntc(&file.metadata, &file.tensors)
    }
}

/// Minibatch stochastic optimization of the bound with Adam.
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    adam: AdamState,
    epoch: usize,
    step: u64,
    history: Vec<EpochMetrics>,
    eval_history: Vec<EvalRecord>,
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl Trainer {
    /// Fresh model initialized from `config.seed`.
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(model_config, config.seed)?;
        Trainer::with_model(model, config)
    }

    pub fn with_model(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(&model.params, config.adam());
        let pool = build_pool(config.workers)?;
        Ok(Trainer { model, config, adam, epoch: 0, step: 0, history: Vec::new(), eval_history: Vec::new(), pool })
    }

    /// Resumes from a checkpoint; `workers` may differ from the saved run.
    pub fn from_checkpoint(ck: &Checkpoint, workers: usize) -> Result<Self> {
        let config = TrainConfig { workers, ..ck.train_config.clone() };
        let mut t = Trainer::with_model(ck.model()?, config)?;
        t.adam = ck.adam.clone();
        t.epoch = ck.epoch;
        t.step = ck.step;
        t.history = ck.history.clone();
        t.eval_history = ck.eval_history.clone();
        Ok(t)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn eval_history(&self) -> &[EvalRecord] {
        &self.eval_history
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model_config: self.model.config.clone(),
            train_config: self.config.clone(),
            params: self.model.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            adam: self.adam.clone(),
            epoch: self.epoch,
            step: self.step,
            history: self.history.clone(),
            eval_history: self.eval_history.clone(),
        }
    }

    /// Gradient of the negative mean bound over `indices`; `round` addresses
    /// all noise of this update.
    fn batch_gradient(&self, data: &SequenceDataset, indices: &[usize], amplitude: f64, round: u64) -> Result<(Vec<Tensor>, ElboSums)> {
        let cfg = &self.config;
        let model = &self.model;
        let chunks = micro_batches(indices, cfg.micro_batch);
        let scale = -1.0 / indices.len() as f64;
        let key = StreamKey::new(cfg.seed, Purpose::Posterior).round(round);
        let parts = run_parallel(self.pool.as_deref(), chunks.len(), |c| -> Result<(Vec<Tensor>, ElboSums)> {
            let mut batch = data.batch(chunks[c]);
            let (rec_x, u) = regularize_batch(&batch, cfg.dropout, amplitude, cfg.seed, round)?;
            batch.u = u;
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape);
            let terms = elbo(model, &mut tape, &p, &batch, &rec_x, key, cfg.samples)?;
            let loss = tape.scale(terms.total, scale)?;
            let mut grads = tape.backward(loss)?;
            Ok((p.gradients(&mut grads), ElboSums::of(&tape, &terms)))
        });
        let mut total: Option<Vec<Tensor>> = None;
        let mut sums = ElboSums::default();
        for part in parts {
            let (g, s) = part?;
            sums.add(&s);
            total = Some(match total {
                None => g,
                Some(acc) => acc.iter().zip(&g).map(|(a, b)| a.zip_map(b, |x, y| x + y)).collect::<Result<_>>()?,
            });
        }
        Ok((total.expect("non-empty batch"), sums))
    }

    /// One pass over `data` in a seed-determined order. Each update is applied
    /// only after its bound and gradients are verified finite, so on error the
    /// trainer still holds the state after the last good update.
    pub fn train_epoch(&mut self, data: &SequenceDataset) -> Result<EpochMetrics> {
        check_dims(&self.model, data)?;
        let amplitude = self.config.action_noise * data.max_abs_action();
        let order = StreamKey::new(self.config.seed, Purpose::Shuffle).round(self.epoch as u64).rng().permutation(data.len);
        let mut sums = ElboSums::default();
        let mut clipped = 0;
        for batch in order.chunks(self.config.batch_size) {
            let (mut grads, s) = self.batch_gradient(data, batch, amplitude, self.step)?;
            if grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::NonFinite(format!("gradient at epoch {} update {}", self.epoch + 1, self.step)));
            }
            if clip_global_norm(&mut grads, self.config.clip_norm) > self.config.clip_norm {
                clipped += 1;
            }
            self.adam.step(&mut self.model.params, &grads)?;
            sums.add(&s);
            self.step += 1;
        }
        self.epoch += 1;
        let m = sums.mean();
        let metrics = EpochMetrics { epoch: self.epoch, elbo: m.elbo, recon: m.recon, kl: m.kl, clipped };
        self.history.push(metrics);
        Ok(metrics)
    }

    /// Trains until `config.epochs` epochs have run, evaluating on `eval` at
    /// the configured cadence. `on_epoch` sees the trainer after each epoch.
    pub fn fit(
        &mut self,
        data: &SequenceDataset,
        eval: Option<&SequenceDataset>,
        mut on_epoch: impl FnMut(&Trainer, &EpochMetrics) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < self.config.epochs {
            let metrics = self.train_epoch(data)?;
            if let (Some(ev), true) = (eval, self.config.eval_every > 0 && self.epoch.is_multiple_of(self.config.eval_every)) {
                let s = evaluate(&self.model, ev, self.config.seed, self.config.samples, self.config.workers)?;
                self.eval_history.push(EvalRecord { epoch: self.epoch, elbo: s.elbo });
            }
            on_epoch(self, &metrics)?;
        }
        Ok(())
    }
}

/// Trains a fresh model and returns the final checkpoint.
pub fn train(data: &SequenceDataset, model_config: ModelConfig, config: TrainConfig) -> Result<Checkpoint> {
    let mut t = Trainer::new(model_config, config)?;
    t.fit(data, None, |_, _| Ok(()))?;
    Ok(t.checkpoint())
}

/// Largest relative discrepancy `|a − n| / max(|a|, |n|, 1)` between the
/// reverse-mode gradient of the summed bound and central differences with
/// step `h`, over up to `per_tensor` random coordinates of every parameter.
pub fn gradient_check(
    model: &mut Model,
    batch: &SequenceBatch,
    key: StreamKey,
    per_tensor: usize,
    h: f64,
    rng: &mut crate::rng::Rng,
) -> Result<f64> {
    let value = |m: &Model| -> Result<f64> {
        let mut tape = Tape::new();
        let p = m.params.bind_frozen(&mut tape);
        let e = elbo(m, &mut tape, &p, batch, &batch.x, key, 1)?;
        Ok(tape.value(e.total).item())
    };
    let analytic = {
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape);
        let e = elbo(model, &mut tape, &p, batch, &batch.x, key, 1)?;
        let mut grads = tape.backward(e.total)?;
        p.gradients(&mut grads)
    };
    let ids: Vec<_> = model.params.ids().collect();
    let mut worst: f64 = 0.0;
    for (k, id) in ids.into_iter().enumerate() {
        let base = model.params.get(id).clone();
        let picks: Vec<usize> =
            if base.len() <= per_tensor { (0..base.len()).collect() } else { (0..per_tensor).map(|_| rng.below(base.len())).collect() };
        for j in picks {
            let shifted = |delta: f64| {
                let mut data = base.to_vec();
                data[j] += delta;
                Tensor::from_parts(base.shape().to_vec(), data)
            };
            model.params.set(id, shifted(h))?;
            let up = value(model);
            model.params.set(id, shifted(-h))?;
            let down = value(model);
            model.params.set(id, base.clone())?;
            let (a, n) = (analytic[k].data()[j], (up? - down?) / (2.0 * h));
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1.0));
        }
    }
    Ok(worst)
}
