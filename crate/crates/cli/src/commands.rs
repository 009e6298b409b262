//! generate, train, eval, sample and counterfactual.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dkf::data::cohort::{gen_linear_cohort, read_system, write_system, CohortPolicy};
use dkf::data::healing::{gen_healing, HealingConfig};
use dkf::data::{ntc, SequenceDataset};
use dkf::inference::{counterfactual as run_counterfactual, is_loglik, CounterfactualQuery, Threshold};
use dkf::linear::LinearGaussianSystem;
use dkf::model::{EmissionFamily, Model, ModelConfig, SimNoise};
use dkf::rng::Rng;
use dkf::training::{evaluate, metrics_csv, Checkpoint, Trainer};
use dkf::Tensor;
use serde::Serialize;
use serde_json::json;

use crate::config::{ensure_dir, Resolved, RunConfig, VERSION};
use crate::image::{pgm_grid, square_side};
use crate::{CounterfactualArgs, EvalArgs, GenerateArgs, Preset, SampleArgs, TrainArgs, UsageError};

const FULL_HEALING: f64 = 40_000.0;

/// The `.theta.ntc` file stored beside a linear-oracle dataset.
pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("theta.ntc")
}

fn check_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            bail!("output directory {} does not exist", parent.display());
        }
    }
    Ok(())
}

fn read_dataset(path: &Path) -> Result<SequenceDataset> {
    SequenceDataset::read(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::read(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

pub fn generate(a: &GenerateArgs) -> Result<bool> {
    check_parent(&a.out)?;
    let run = RunConfig::load(a.config.as_deref())?;
    if !(a.scale > 0.0) {
        return Err(UsageError("--scale must be positive".into()).into());
    }
    let mut ds = match a.preset {
        Preset::SmallHealing | Preset::LargeHealing => {
            let mut cfg = run.healing.clone().unwrap_or_else(|| HealingConfig {
                glyphs_per_class: if a.preset == Preset::LargeHealing { 100 } else { 1 },
                ..HealingConfig::default()
            });
            cfg.seed = a.seed;
            cfg.sequences = a.sequences.unwrap_or(((FULL_HEALING * a.scale).round() as usize).max(1));
            if let Some(t) = a.steps {
                cfg.steps = t;
            }
            cfg.validate().map_err(|e| UsageError(e.to_string()))?;
            gen_healing(&cfg)?
        }
        Preset::LinearOracle => {
            let sys = LinearGaussianSystem::random(a.latent_dim, a.obs_dim, a.action_dim, &mut Rng::from_seed(a.seed));
            let n = a.sequences.unwrap_or(1000);
            let mut ds = gen_linear_cohort(&sys, n, a.steps.unwrap_or(10), &CohortPolicy::Uniform { scale: 1.0 }, a.seed)?;
            let sidecar = sidecar_path(&a.out);
            write_system(&sidecar, &sys)?;
            ds.metadata["system"] = json!(sidecar.file_name().map(|f| f.to_string_lossy().into_owned()));
            ds
        }
    };
    ds.metadata["version"] = json!(VERSION);
    ds.write(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} sequences of {} steps ({} channels) to {}", ds.len, ds.steps, ds.obs_dim, a.out.display());
    Ok(true)
}

fn default_model(data: &SequenceDataset, linear: bool) -> ModelConfig {
    if linear {
        ModelConfig::linear_gaussian(ModelConfig::default().latent_dim, data.obs_dim, data.action_dim)
    } else {
        let family = if data.is_binary() { EmissionFamily::Bernoulli } else { EmissionFamily::Gaussian };
        ModelConfig { family, ..ModelConfig::new(ModelConfig::default().latent_dim, data.obs_dim, data.action_dim) }
    }
}

fn check_dims(cfg: &ModelConfig, data: &SequenceDataset) -> Result<()> {
    if cfg.obs_dim != data.obs_dim || cfg.action_dim != data.action_dim {
        bail!(
            "model expects {} observation and {} action channels but the dataset has {} and {}",
            cfg.obs_dim,
            cfg.action_dim,
            data.obs_dim,
            data.action_dim
        );
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<bool> {
    let mut run = RunConfig::load(a.config.as_deref())?;
    let data = read_dataset(&a.data)?;
    let eval = a.eval.as_deref().map(read_dataset).transpose()?;
    let mut model = run.model.take().unwrap_or_else(|| default_model(&data, a.linear));
    if let Some(s) = a.latent_dim {
        model.latent_dim = s;
    }
    if let Some(v) = a.variant {
        model.recognition.variant = v;
    }
    let t = &mut run.train;
    a.epochs.inspect(|v| t.epochs = *v);
    a.seed.inspect(|v| t.seed = *v);
    a.workers.inspect(|v| t.workers = *v);
    a.lr.inspect(|v| t.lr = *v);
    a.batch_size.inspect(|v| t.batch_size = *v);
    model.validate().map_err(|e| UsageError(e.to_string()))?;
    run.train.validate().map_err(|e| UsageError(e.to_string()))?;
    check_dims(&model, &data)?;
    if let Some(ev) = &eval {
        check_dims(&model, ev)?;
    }

    ensure_dir(&a.out)?;
    run.model = Some(model.clone());
    let mut resolved = Resolved::new("train", &run).input("data", &a.data);
    if let Some(p) = &a.eval {
        resolved = resolved.input("eval", p);
    }
    resolved.write(&a.out)?;

    let mut trainer = Trainer::new(model, run.train.clone())?;
    let updates = data.len.div_ceil(run.train.batch_size);
    let (metrics_path, ck_path) = (a.out.join("metrics.csv"), a.out.join("checkpoint.ntc"));
    trainer.fit(&data, eval.as_ref(), |t, m| {
        print!("epoch {:>3}  elbo {:.4}  recon {:.4}  kl {:.4}", m.epoch, m.elbo, m.recon, m.kl);
        if let Some(e) = t.eval_history().last().filter(|e| e.epoch == m.epoch) {
            print!("  held-out {:.4}", e.elbo);
        }
        if m.clipped > 0 {
            print!("  clipped {}/{updates}", m.clipped);
        }
        println!();
        fs::write(&metrics_path, metrics_csv(t.history()))?;
        t.checkpoint().write(&ck_path)
    })?;
    if trainer.history().is_empty() {
        fs::write(&metrics_path, metrics_csv(&[]))?;
        trainer.checkpoint().write(&ck_path)?;
    }
    if !trainer.eval_history().is_empty() {
        let mut csv = String::from("epoch,elbo\n");
        for e in trainer.eval_history() {
            csv.push_str(&format!("{},{}\n", e.epoch, e.elbo));
        }
        fs::write(a.out.join("eval.csv"), csv)?;
    }
    println!("checkpoint written to {}", ck_path.display());
    Ok(true)
}

#[derive(Serialize)]
struct EvalReport {
    version: &'static str,
    sequences: usize,
    elbo: f64,
    recon: f64,
    kl: f64,
    is_loglik_s1: f64,
    is_samples: usize,
    is_loglik: f64,
    kalman_loglik: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn eval(a: &EvalArgs) -> Result<bool> {
    if a.samples == 0 {
        return Err(UsageError("--samples must be positive".into()).into());
    }
    let model = read_checkpoint(&a.checkpoint)?.model()?;
    let mut data = read_dataset(&a.data)?;
    check_dims(&model.config, &data)?;
    if let Some(n) = a.limit.filter(|&n| n < data.len) {
        data = data.subset(&(0..n).collect::<Vec<_>>());
    }
    let bound = evaluate(&model, &data, a.seed, 1, a.workers)?;
    let s1 = mean(&is_loglik(&model, &data, 1, a.seed)?);
    let ss = mean(&is_loglik(&model, &data, a.samples, a.seed)?);

    let system = match &a.system {
        Some(p) => Some(read_system(p).with_context(|| format!("reading system {}", p.display()))?),
        None => {
            let p = sidecar_path(&a.data);
            p.is_file().then(|| read_system(&p)).transpose()?
        }
    };
    let kalman = system
        .map(|sys| -> Result<f64> {
            let mut total = 0.0;
            for i in 0..data.len {
                let valid = (0..data.steps).take_while(|&t| data.mask[i * data.steps + t] > 0.0).count();
                let (x, u) = data.sequence(i);
                total += sys.log_likelihood(&x[..valid], &u[..valid.saturating_sub(1)])?;
            }
            Ok(total / data.len as f64)
        })
        .transpose()?;

    println!("sequences              {}", data.len);
    println!("bound (S=1)            {:.4}  (recon {:.4}, kl {:.4})", bound.elbo, bound.recon, bound.kl);
    println!("IS log-likelihood      S=1 {:.4}   S={} {:.4}", s1, a.samples, ss);
    if let Some(k) = kalman {
        println!("exact log-likelihood   {k:.4}");
    }
    if let Some(out) = &a.out {
        check_parent(out)?;
        let report = EvalReport {
            version: VERSION,
            sequences: data.len,
            elbo: bound.elbo,
            recon: bound.recon,
            kl: bound.kl,
            is_loglik_s1: s1,
            is_samples: a.samples,
            is_loglik: ss,
            kalman_loglik: kalman,
        };
        fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(true)
}

#[derive(Serialize)]
struct SampleSettings {
    actions: Vec<f64>,
    rows: usize,
    steps: usize,
    seed: u64,
}

/// `[R, T, w]` from per-step `[R, w]` tensors, rows taken from several runs.
fn stack_runs(runs: &[&[Tensor]]) -> Result<Tensor> {
    let steps = runs[0].len();
    let w = runs[0][0].cols();
    let rows: usize = runs.iter().map(|r| r[0].rows()).sum();
    let mut data = Vec::with_capacity(rows * steps * w);
    for run in runs {
        for i in 0..run[0].rows() {
            for t in run.iter() {
                data.extend_from_slice(t.row(i));
            }
        }
    }
    Ok(Tensor::new(vec![rows, steps, w], data)?)
}

pub fn sample(a: &SampleArgs) -> Result<bool> {
    if a.actions.is_empty() || a.rows == 0 || a.steps == 0 {
        return Err(UsageError("need at least one action, one row and one step".into()).into());
    }
    let ck = read_checkpoint(&a.checkpoint)?;
    let model = ck.model()?;
    ensure_dir(&a.out)?;
    let settings = SampleSettings::from(a);
    Resolved::new("sample", &settings).input("checkpoint", &a.checkpoint).write(&a.out)?;

    let (n, c) = (a.rows, model.action_dim());
    // The same noise ids for every action value, so rows differ only by action.
    let noise = SimNoise { seed: a.seed, round: 0, ids: (0..n as u64).collect(), first_step: 0 };
    let dt = vec![Tensor::ones(&[n, 1]); a.steps - 1];
    let mut trajs = Vec::new();
    for &act in &a.actions {
        let u = vec![Tensor::full(&[n, c], act); a.steps - 1];
        trajs.push(model.prior_sample(&u, &dt, &noise)?);
    }
    let means = stack_runs(&trajs.iter().map(|t| t.means.as_slice()).collect::<Vec<_>>())?;
    let x = stack_runs(&trajs.iter().map(|t| t.x.as_slice()).collect::<Vec<_>>())?;
    let z = stack_runs(&trajs.iter().map(|t| t.z.as_slice()).collect::<Vec<_>>())?;
    let actions = Tensor::vector(a.actions.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect());
    let meta = serde_json::to_string(&json!({ "kind": "samples", "version": VERSION, "settings": settings }))?;
    let tensors = vec![("means".into(), means.clone()), ("x".into(), x), ("z".into(), z), ("actions".into(), actions)];
    ntc::write(&a.out.join("samples.ntc"), &meta, &tensors)?;

    let d = model.obs_dim();
    match square_side(d).filter(|_| model.config.family == EmissionFamily::Bernoulli) {
        Some(side) => {
            let rows = a.actions.len() * n;
            let grid = pgm_grid(rows, a.steps, side, |r, t| {
                let off = (r * a.steps + t) * d;
                means.data()[off..off + d].to_vec()
            });
            fs::write(a.out.join("grid.pgm"), grid)?;
            println!("wrote {rows}×{} grid of mean frames and raw samples to {}", a.steps, a.out.display());
        }
        None => println!("observations are not square images; wrote raw samples to {}", a.out.display()),
    }
    Ok(true)
}

impl From<&SampleArgs> for SampleSettings {
    fn from(a: &SampleArgs) -> Self {
        SampleSettings { actions: a.actions.clone(), rows: a.rows, steps: a.steps, seed: a.seed }
    }
}

pub fn counterfactual(a: &CounterfactualArgs) -> Result<bool> {
    let text = fs::read_to_string(&a.query).with_context(|| format!("reading query {}", a.query.display()))?;
    let mut query: CounterfactualQuery =
        serde_json::from_str(&text).map_err(|e| UsageError(format!("query {}: {e}", a.query.display())))?;
    a.samples.inspect(|v| query.num_samples = *v);
    a.seed.inspect(|v| query.seed = *v);
    if !a.do_assignments.is_empty() {
        query.do_assignments = a.do_assignments.clone();
    }
    if let Some((channel, value)) = a.threshold {
        query.threshold = Some(Threshold { channel, value });
    }
    let model: Model = read_checkpoint(&a.checkpoint)?.model()?;
    let (report, _) = run_counterfactual(&model, &query)?;

    ensure_dir(&a.out)?;
    Resolved::new("counterfactual", &query)
        .input("checkpoint", &a.checkpoint)
        .input("query", &a.query)
        .write(&a.out)?;
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    if query.threshold.is_some() {
        let mut csv = String::from("step,factual,alternative\n");
        for (k, (f, alt)) in report.factual.above_threshold.iter().zip(&report.alternative.above_threshold).enumerate() {
            csv.push_str(&format!("{},{f},{alt}\n", k + 1));
        }
        fs::write(a.out.join("threshold.csv"), csv)?;
    }
    println!("step  latent difference (± stderr)");
    for (k, (m, e)) in report.latent_difference.iter().zip(&report.latent_difference_stderr).enumerate() {
        let cells: Vec<String> = m.iter().zip(e).map(|(m, e)| format!("{m:+.4}±{e:.4}")).collect();
        println!("{:>4}  {}", k + 1, cells.join("  "));
    }
    Ok(true)
}
