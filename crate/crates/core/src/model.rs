//! The generative model: transition `G`, transition covariance `S`,
//! emission `F`, and the optional indicator channel whose value gates a
//! set of lab channels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gaussian::{bernoulli_log_prob_rows, GaussianVar, LOG_VAR_BOUND};
use crate::linear::{LinearGaussianSystem, Mat, Vector};
use crate::nn::{Activation, Initializer, Mlp};
use crate::param::{Bound, ParamId, ParamSet};
use crate::recognition::RecognitionNet;
use crate::rng::{Purpose, StreamKey};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Linear,
    Nonlinear,
    RandomWalk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionKind {
    Linear,
    Nonlinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionFamily {
    Bernoulli,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    LearnedDiagonalFixed,
    NetworkDiagonal,
}

/// Recognition network family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "q-indep")]
    QIndep,
    #[serde(rename = "q-lr")]
    QLr,
    #[serde(rename = "q-rnn")]
    QRnn,
    #[serde(rename = "q-brnn")]
    QBrnn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::QIndep, Variant::QLr, Variant::QRnn, Variant::QBrnn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::QIndep => "q-indep",
            Variant::QLr => "q-lr",
            Variant::QRnn => "q-rnn",
            Variant::QBrnn => "q-brnn",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s.to_ascii_lowercase()).ok_or_else(|| {
            let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
            Error::invalid(format!("unknown variant {s:?}; valid variants: {}", names.join(", ")))
        })
    }
}

/// A binary observation channel that gates `lab_channels`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorConfig {
    pub channel: usize,
    pub lab_channels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognitionConfig {
    pub variant: Variant,
    /// Hidden widths of the feature MLP (q-INDEP, q-LR).
    pub hidden: Vec<usize>,
    /// Output width of the feature MLP.
    pub feature_dim: usize,
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    pub combiner_hidden: Vec<usize>,
    /// Feed the sampled `z_{t-1}` to the combiner. Off gives a mean-field q.
    pub use_z_prev: bool,
}

impl Default for RecognitionConfig {
    fn default() -> Self {
        RecognitionConfig {
            variant: Variant::QBrnn,
            hidden: vec![128],
            feature_dim: 64,
            rnn_hidden: 32,
            rnn_layers: 2,
            combiner_hidden: vec![64],
            use_z_prev: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub transition: TransitionKind,
    pub emission: EmissionKind,
    pub family: EmissionFamily,
    pub covariance: CovarianceKind,
    pub indicator: Option<IndicatorConfig>,
    /// Hidden widths of the nonlinear transition, covariance and emission nets.
    pub hidden: Vec<usize>,
    /// Random-walk precision scale: `z_t ~ N(z_{t-1} + u_{t-1}, (dt/Δ) I)`.
    pub rw_delta: f64,
    pub recognition: RecognitionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 16,
            obs_dim: 784,
            action_dim: 1,
            transition: TransitionKind::Nonlinear,
            emission: EmissionKind::Nonlinear,
            family: EmissionFamily::Bernoulli,
            covariance: CovarianceKind::LearnedDiagonalFixed,
            indicator: None,
            hidden: vec![64, 64],
            rw_delta: 1.0,
            recognition: RecognitionConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn new(latent_dim: usize, obs_dim: usize, action_dim: usize) -> Self {
        ModelConfig { latent_dim, obs_dim, action_dim, ..ModelConfig::default() }
    }

    /// Linear transition and emission with Gaussian observations: the
    /// classical Kalman filter.
    pub fn linear_gaussian(latent_dim: usize, obs_dim: usize, action_dim: usize) -> Self {
        ModelConfig {
            transition: TransitionKind::Linear,
            emission: EmissionKind::Linear,
            family: EmissionFamily::Gaussian,
            ..ModelConfig::new(latent_dim, obs_dim, action_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.recognition;
        if self.latent_dim == 0 || self.obs_dim == 0 || self.action_dim == 0 {
            return Err(Error::invalid("latent, observation and action dimensions must be positive"));
        }
        if self.transition == TransitionKind::RandomWalk && self.action_dim != self.latent_dim {
            return Err(Error::invalid(format!(
                "random_walk transition needs action_dim == latent_dim, got {} and {}",
                self.action_dim, self.latent_dim
            )));
        }
        if !(self.rw_delta > 0.0 && self.rw_delta.is_finite()) {
            return Err(Error::invalid(format!("rw_delta must be positive, got {}", self.rw_delta)));
        }
        if self.hidden.contains(&0) || r.hidden.contains(&0) || r.combiner_hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if r.feature_dim == 0 || r.rnn_hidden == 0 || r.rnn_layers == 0 {
            return Err(Error::invalid("recognition widths and layer counts must be positive"));
        }
        if let Some(ind) = &self.indicator {
            if ind.channel >= self.obs_dim {
                return Err(Error::invalid(format!("indicator channel {} out of range", ind.channel)));
            }
            let mut seen = vec![false; self.obs_dim];
            for &c in &ind.lab_channels {
                if c >= self.obs_dim || c == ind.channel || std::mem::replace(&mut seen[c], true) {
                    return Err(Error::invalid(format!("invalid lab channel {c}")));
                }
            }
        }
        Ok(())
    }

    /// True when the model is exactly a classical linear-Gaussian system.
    pub fn is_linear_gaussian(&self) -> bool {
        matches!(self.transition, TransitionKind::Linear | TransitionKind::RandomWalk)
            && self.emission == EmissionKind::Linear
            && self.family == EmissionFamily::Gaussian
            && self.covariance == CovarianceKind::LearnedDiagonalFixed
            && self.indicator.is_none()
    }
}

#[derive(Clone, Debug)]
enum TransitionNet {
    /// `z G + u B` with `g: [s, s]`, `b: [c, s]` (right-multiplying forms).
    Linear { g: ParamId, b: ParamId },
    Nonlinear(Mlp),
    RandomWalk,
}

#[derive(Clone, Debug)]
enum CovarianceNet {
    Fixed(ParamId),
    Network(Mlp),
    RandomWalk,
}

#[derive(Clone, Debug)]
struct LabHead {
    net: Mlp,
    /// `[L, d]` one-hot rows placing the lab outputs.
    scatter: Tensor,
    /// 0 on lab channels, 1 elsewhere.
    keep: Vec<f64>,
}

/// Parameters and structure of `p(z, x | u)`.
#[derive(Clone, Debug)]
pub struct GenerativeNet {
    transition: TransitionNet,
    covariance: CovarianceNet,
    emission: Mlp,
    indicator: Option<usize>,
    lab: Option<LabHead>,
    emission_log_var: Option<ParamId>,
    family: EmissionFamily,
    latent_dim: usize,
    obs_dim: usize,
    rw_delta: f64,
}

fn dims(input: usize, hidden: &[usize], output: usize, linear: bool) -> Vec<usize> {
    let mut d = vec![input];
    if !linear {
        d.extend_from_slice(hidden);
    }
    d.push(output);
    d
}

fn broadcast_rows(tape: &mut Tape, row: Var, batch: usize) -> Result<Var> {
    let width = tape.shape(row)[0];
    let zeros = tape.constant(Tensor::zeros(&[batch, width]));
    tape.add_bias(zeros, row)
}

fn row_mask(batch: usize, mask: &[f64]) -> Tensor {
    let data = (0..batch).flat_map(|_| mask.iter().copied()).collect();
    Tensor::from_parts(vec![batch, mask.len()], data)
}

impl GenerativeNet {
    fn new(cfg: &ModelConfig, params: &mut ParamSet, init: &mut Initializer) -> Self {
        let (s, d, c) = (cfg.latent_dim, cfg.obs_dim, cfg.action_dim);
        let tanh = Activation::Tanh;
        let id = Activation::Identity;
        let transition = match cfg.transition {
            TransitionKind::Linear => TransitionNet::Linear {
                g: params.add("gen.trans.g", init.glorot(s, s)),
                b: params.add("gen.trans.b", init.glorot(c, s)),
            },
            TransitionKind::Nonlinear => TransitionNet::Nonlinear(Mlp::new(
                params,
                "gen.trans",
                &dims(s + c + 1, &cfg.hidden, s, false),
                tanh,
                id,
                init,
            )),
            TransitionKind::RandomWalk => TransitionNet::RandomWalk,
        };
        let covariance = match (cfg.transition, cfg.covariance) {
            (TransitionKind::RandomWalk, _) => CovarianceNet::RandomWalk,
            (_, CovarianceKind::LearnedDiagonalFixed) => {
                CovarianceNet::Fixed(params.add("gen.cov.log_var", Tensor::zeros(&[s])))
            }
            (_, CovarianceKind::NetworkDiagonal) => CovarianceNet::Network(Mlp::new(
                params,
                "gen.cov",
                &dims(s + c + 1, &cfg.hidden, s, false),
                tanh,
                id,
                init,
            )),
        };
        let linear = cfg.emission == EmissionKind::Linear;
        let emission = Mlp::new(params, "gen.emit", &dims(s, &cfg.hidden, d, linear), tanh, id, init);
        let lab = cfg.indicator.as_ref().filter(|i| !i.lab_channels.is_empty()).map(|ind| {
            let l = ind.lab_channels.len();
            let net = Mlp::new(params, "gen.lab", &dims(s + 1, &cfg.hidden, l, linear), tanh, id, init);
            let mut scatter = vec![0.0; l * d];
            let mut keep = vec![1.0; d];
            for (i, &ch) in ind.lab_channels.iter().enumerate() {
                scatter[i * d + ch] = 1.0;
                keep[ch] = 0.0;
            }
            LabHead { net, scatter: Tensor::from_parts(vec![l, d], scatter), keep }
        });
        let emission_log_var = match cfg.family {
            EmissionFamily::Gaussian => Some(params.add("gen.emit.log_var", Tensor::zeros(&[d]))),
            EmissionFamily::Bernoulli => None,
        };
        GenerativeNet {
            transition,
            covariance,
            emission,
            indicator: cfg.indicator.as_ref().map(|i| i.channel),
            lab,
            emission_log_var,
            family: cfg.family,
            latent_dim: s,
            obs_dim: d,
            rw_delta: cfg.rw_delta,
        }
    }

    /// `p(z_t | z_{t-1}, u_{t-1}, dt)` for a batch: `z_prev [B,s]`, `u [B,c]`, `dt [B,1]`.
    pub fn transition(&self, tape: &mut Tape, p: &Bound, z_prev: Var, u: Var, dt: Var) -> Result<GaussianVar> {
        let batch = tape.shape(z_prev)[0];
        let needs_input = matches!(self.transition, TransitionNet::Nonlinear(_))
            || matches!(self.covariance, CovarianceNet::Network(_));
        let input = if needs_input { Some(tape.concat_cols(&[z_prev, u, dt])?) } else { None };
        let mean = match &self.transition {
            TransitionNet::Linear { g, b } => {
                let a = tape.matmul(z_prev, p.var(*g))?;
                let c = tape.matmul(u, p.var(*b))?;
                tape.add(a, c)?
            }
            TransitionNet::Nonlinear(net) => net.forward(tape, p, input.expect("input built"))?,
            TransitionNet::RandomWalk => tape.add(z_prev, u)?,
        };
        let log_var = match &self.covariance {
            CovarianceNet::Fixed(lv) => broadcast_rows(tape, p.var(*lv), batch)?,
            CovarianceNet::Network(net) => net.forward(tape, p, input.expect("input built"))?,
            CovarianceNet::RandomWalk => {
                let log_dt = tape.log(dt)?;
                let ones = tape.constant(Tensor::ones(&[1, self.latent_dim]));
                let spread = tape.matmul(log_dt, ones)?;
                tape.add_scalar(spread, -self.rw_delta.ln())?
            }
        };
        GaussianVar::new(tape, mean, log_var)
    }

    fn main_head(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<Var> {
        self.emission.forward(tape, p, z)
    }

    fn with_lab(&self, tape: &mut Tape, p: &Bound, z: Var, main: Var, indicator: &Tensor) -> Result<Var> {
        let Some(lab) = &self.lab else { return Ok(main) };
        let batch = tape.shape(z)[0];
        if indicator.shape() != [batch, 1] {
            return Err(Error::Shape { op: "indicator", lhs: indicator.shape().to_vec(), rhs: vec![batch, 1] });
        }
        let ind = tape.constant(indicator.clone());
        let input = tape.concat_cols(&[z, ind])?;
        let lab_out = lab.net.forward(tape, p, input)?;
        let scatter = tape.constant(lab.scatter.clone());
        let placed = tape.matmul(lab_out, scatter)?;
        let keep = tape.constant(row_mask(batch, &lab.keep));
        let kept = tape.mul(main, keep)?;
        tape.add(kept, placed)
    }

    pub fn indicator_channel(&self) -> Option<usize> {
        self.indicator
    }

    /// Raw emission parameters `[B,d]`: logits for Bernoulli channels (and the
    /// indicator channel), means for Gaussian channels. `indicator` is the
    /// `[B,1]` indicator value fed to the lab head.
    pub fn emission(&self, tape: &mut Tape, p: &Bound, z: Var, indicator: Option<&Tensor>) -> Result<Var> {
        let main = self.main_head(tape, p, z)?;
        match (self.indicator, indicator) {
            (Some(_), Some(ind)) => self.with_lab(tape, p, z, main, ind),
            (Some(_), None) => Err(Error::invalid("indicator model needs an indicator input")),
            (None, Some(_)) => Err(Error::invalid("indicator input given to a model without an indicator")),
            (None, None) => Ok(main),
        }
    }

    /// Per-row `log p(x | z)`, shape `[B]`.
    pub fn log_likelihood(&self, tape: &mut Tape, p: &Bound, z: Var, x: &Tensor) -> Result<Var> {
        let indicator = self.indicator_channel().map(|k| column(x, k));
        let out = self.emission(tape, p, z, indicator.as_ref())?;
        match self.family {
            EmissionFamily::Bernoulli => bernoulli_log_prob_rows(tape, out, x),
            EmissionFamily::Gaussian => {
                let batch = x.rows();
                let lv = self.emission_log_var.expect("gaussian family has a log-variance");
                let lv = tape.clamp(p.var(lv), -LOG_VAR_BOUND, LOG_VAR_BOUND)?;
                let lv = broadcast_rows(tape, lv, batch)?;
                let xv = tape.constant(x.clone());
                let diff = tape.sub(xv, out)?;
                let sq = tape.square(diff)?;
                let nlv = tape.neg(lv)?;
                let prec = tape.exp(nlv)?;
                let quad = tape.mul(sq, prec)?;
                let inner = tape.add(quad, lv)?;
                let inner = tape.add_scalar(inner, (2.0 * std::f64::consts::PI).ln())?;
                let mut elem = tape.scale(inner, -0.5)?;
                if let Some(k) = self.indicator_channel() {
                    let mut mask = vec![1.0; self.obs_dim];
                    mask[k] = 0.0;
                    let m = tape.constant(row_mask(batch, &mask));
                    elem = tape.mul(elem, m)?;
                    let gauss = tape.row_sum(elem)?;
                    let logit = tape.slice_cols(out, k, k + 1)?;
                    let bern = bernoulli_log_prob_rows(tape, logit, &column(x, k))?;
                    return tape.add(gauss, bern);
                }
                tape.row_sum(elem)
            }
        }
    }

    /// Mean observation `[B,d]` from raw emission parameters: probabilities
    /// on Bernoulli channels, means on Gaussian channels.
    pub fn mean_observation(&self, raw: &Tensor) -> Tensor {
        match (self.family, self.indicator_channel()) {
            (EmissionFamily::Bernoulli, _) => raw.map(sigmoid),
            (EmissionFamily::Gaussian, None) => raw.clone(),
            (EmissionFamily::Gaussian, Some(k)) => {
                let d = self.obs_dim;
                let data = raw.data().iter().enumerate().map(|(i, &v)| if i % d == k { sigmoid(v) } else { v }).collect();
                Tensor::from_parts(raw.shape().to_vec(), data)
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub(crate) fn column(x: &Tensor, k: usize) -> Tensor {
    let data = (0..x.rows()).map(|i| x.at(i, k)).collect();
    Tensor::from_parts(vec![x.rows(), 1], data)
}

/// Noise addressing for simulation: transition draws at step `t` use
/// `(seed, Transition, id, first_step + t)` and emission draws use the
/// `Emission` purpose at the same step.
#[derive(Clone, Debug)]
pub struct SimNoise {
    pub seed: u64,
    pub round: u64,
    pub ids: Vec<u64>,
    pub first_step: u32,
}

/// A simulated batch: per step latent states `[B,s]`, mean observations and
/// sampled observations `[B,d]`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub z: Vec<Tensor>,
    pub means: Vec<Tensor>,
    pub x: Vec<Tensor>,
}

/// Generative and recognition networks sharing one parameter set (names
/// prefixed `gen.` and `rec.`).
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub gen: GenerativeNet,
    pub rec: RecognitionNet,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut init = Initializer::new(seed);
        let gen = GenerativeNet::new(&config, &mut params, &mut init);
        let rec = RecognitionNet::new(&config, &mut params, &mut init);
        Ok(Model { config, params, gen, rec })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.config.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.config.action_dim
    }

    /// Mean observation for a batch of latent states, evaluated off-tape.
    /// `indicator` overrides the indicator input; otherwise the indicator
    /// takes its own emitted probability thresholded by `uniform < p`
    /// from `indicator_draw`.
    pub fn emit(&self, z: &Tensor, indicator: IndicatorInput<'_>) -> Result<(Tensor, Option<Tensor>)> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let zv = tape.constant(z.clone());
        let main = self.gen.main_head(&mut tape, &p, zv)?;
        let Some(k) = self.gen.indicator_channel() else {
            if !matches!(indicator, IndicatorInput::Natural(None)) {
                return Err(Error::invalid("model has no indicator channel"));
            }
            return Ok((self.gen.mean_observation(tape.value(main)), None));
        };
        let ind = match indicator {
            IndicatorInput::Fixed(v) => Tensor::full(&[z.rows(), 1], v),
            IndicatorInput::Given(t) => t.clone(),
            IndicatorInput::Natural(Some(u)) => {
                let logits = tape.value(main);
                let data = (0..z.rows()).map(|i| if u.at(i, 0) < sigmoid(logits.at(i, k)) { 1.0 } else { 0.0 }).collect();
                Tensor::from_parts(vec![z.rows(), 1], data)
            }
            IndicatorInput::Natural(None) => return Err(Error::invalid("indicator model needs indicator draws")),
        };
        let raw = self.gen.with_lab(&mut tape, &p, zv, main, &ind)?;
        let mut mean = self.gen.mean_observation(tape.value(raw));
        if let IndicatorInput::Fixed(v) = indicator {
            let d = self.obs_dim();
            let data = mean.data().iter().enumerate().map(|(i, &m)| if i % d == k { v } else { m }).collect();
            mean = Tensor::from_parts(mean.shape().to_vec(), data);
        }
        Ok((mean, Some(ind)))
    }

    /// One transition draw off-tape: `z_prev [B,s]`, `u [B,c]`, `dt [B,1]`, `eps [B,s]`.
    pub fn step(&self, z_prev: &Tensor, u: &Tensor, dt: &Tensor, eps: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let (zv, uv, dv) = (tape.constant(z_prev.clone()), tape.constant(u.clone()), tape.constant(dt.clone()));
        let g = self.gen.transition(&mut tape, &p, zv, uv, dv)?;
        let e = tape.constant(eps.clone());
        let z = g.sample(&mut tape, e)?;
        Ok((tape.value(z).clone(), tape.value(g.mean).clone()))
    }

    /// Ancestral simulation from `z_first`, emitting at every step. `u` and
    /// `dt` hold one `[B,c]` / `[B,1]` entry per transition. `intervention`
    /// fixes the indicator channel (and the lab-head input) to a value.
    pub fn simulate(
        &self,
        z_first: &Tensor,
        u: &[Tensor],
        dt: &[Tensor],
        noise: &SimNoise,
        intervention: Option<f64>,
    ) -> Result<Trajectory> {
        if u.len() != dt.len() {
            return Err(Error::invalid(format!("{} actions but {} time gaps", u.len(), dt.len())));
        }
        let (s, d) = (self.latent_dim(), self.obs_dim());
        let trans = StreamKey::new(noise.seed, Purpose::Transition).round(noise.round);
        let emit = StreamKey::new(noise.seed, Purpose::Emission).round(noise.round);
        let mut out = Trajectory { z: vec![z_first.clone()], means: Vec::new(), x: Vec::new() };
        for t in 0..=u.len() {
            let step = noise.first_step + t as u32;
            if t > 0 {
                let eps = trans.normal_rows(&noise.ids, step, s);
                let (z, _) = self.step(&out.z[t - 1], &u[t - 1], &dt[t - 1], &eps)?;
                out.z.push(z);
            }
            // Per row: d + 1 uniforms (observations, then the indicator) followed
            // by d normals for Gaussian observation noise.
            let (uni, gauss) = emission_draws(&emit, &noise.ids, step, d);
            let ind_draw = column(&uni, d);
            let input = match (self.gen.indicator_channel(), intervention) {
                (None, Some(_)) => return Err(Error::invalid("intervention on a model without an indicator channel")),
                (None, None) => IndicatorInput::Natural(None),
                (Some(_), Some(v)) => IndicatorInput::Fixed(v),
                (Some(_), None) => IndicatorInput::Natural(Some(&ind_draw)),
            };
            let (mean, ind) = self.emit(&out.z[t], input)?;
            let x = self.sample_observation(&mean, ind.as_ref(), &uni, &gauss)?;
            out.means.push(mean);
            out.x.push(x);
        }
        Ok(out)
    }

    fn sample_observation(
        &self,
        mean: &Tensor,
        indicator: Option<&Tensor>,
        uniforms: &Tensor,
        normals: &Tensor,
    ) -> Result<Tensor> {
        let (b, d) = (mean.rows(), self.obs_dim());
        let k = self.gen.indicator_channel();
        let mut data = Vec::with_capacity(b * d);
        let std: Option<Vec<f64>> = self.gen.emission_log_var.map(|lv| {
            self.params.get(lv).data().iter().map(|v| (0.5 * v.clamp(-LOG_VAR_BOUND, LOG_VAR_BOUND)).exp()).collect()
        });
        for i in 0..b {
            for j in 0..d {
                let m = mean.at(i, j);
                let v = if Some(j) == k {
                    indicator.expect("indicator present").at(i, 0)
                } else if let Some(std) = &std {
                    m + std[j] * normals.at(i, j)
                } else if uniforms.at(i, j) < m {
                    1.0
                } else {
                    0.0
                };
                data.push(v);
            }
        }
        Ok(Tensor::from_parts(vec![b, d], data))
    }

    /// Samples `z_1 ~ N(0, I)` and simulates forward.
    pub fn prior_sample(&self, u: &[Tensor], dt: &[Tensor], noise: &SimNoise) -> Result<Trajectory> {
        let z1 = StreamKey::new(noise.seed, Purpose::Transition)
            .round(noise.round)
            .normal_rows(&noise.ids, noise.first_step, self.latent_dim());
        self.simulate(&z1, u, dt, noise, None)
    }

    /// The equivalent classical system (homogeneous unit time gaps).
    pub fn linear_system(&self) -> Result<LinearGaussianSystem> {
        let cfg = &self.config;
        if !cfg.is_linear_gaussian() {
            return Err(Error::invalid("model is not linear-Gaussian"));
        }
        let (s, c) = (cfg.latent_dim, cfg.action_dim);
        let to_mat = |t: &Tensor| Mat::from_row_slice(t.rows(), t.cols(), t.data());
        let (g, b, q) = match (&self.gen.transition, &self.gen.covariance) {
            (TransitionNet::Linear { g, b }, CovarianceNet::Fixed(lv)) => (
                to_mat(self.params.get(*g)).transpose(),
                to_mat(self.params.get(*b)).transpose(),
                diag_exp(self.params.get(*lv)),
            ),
            (TransitionNet::RandomWalk, _) => {
                (Mat::identity(s, s), Mat::identity(s, c), Mat::identity(s, s) / cfg.rw_delta)
            }
            _ => unreachable!("checked by is_linear_gaussian"),
        };
        let f = to_mat(self.params.get(self.gen.emission.weight(0))).transpose();
        let offset = Vector::from_column_slice(self.params.get(self.gen.emission.bias(0)).data());
        let r = diag_exp(self.params.get(self.gen.emission_log_var.expect("gaussian")));
        let mut sys = LinearGaussianSystem::new(g, b, q, f, r)?;
        sys.offset = offset;
        Ok(sys)
    }

    /// Overwrites the generative parameters with a classical system with
    /// diagonal noise, standard prior and linear transition.
    pub fn load_linear_system(&mut self, sys: &LinearGaussianSystem) -> Result<()> {
        let cfg = &self.config;
        if !cfg.is_linear_gaussian() || cfg.transition != TransitionKind::Linear {
            return Err(Error::invalid("only linear-transition linear-Gaussian models accept a system"));
        }
        let (s, d) = (cfg.latent_dim, cfg.obs_dim);
        if sys.latent_dim() != s || sys.obs_dim() != d || sys.action_dim() != cfg.action_dim {
            return Err(Error::invalid("system dimensions do not match the model"));
        }
        let off_diag = |m: &Mat| (0..m.nrows()).any(|i| (0..m.ncols()).any(|j| i != j && m[(i, j)] != 0.0));
        if off_diag(&sys.q) || off_diag(&sys.r) {
            return Err(Error::invalid("noise covariances must be diagonal"));
        }
        if sys.m0.iter().any(|v| *v != 0.0) || sys.p0 != Mat::identity(s, s) {
            return Err(Error::invalid("the model prior is fixed at N(0, I)"));
        }
        let from_mat = |m: &Mat| Tensor::from_parts(vec![m.nrows(), m.ncols()], m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect());
        let log_diag = |m: &Mat| Tensor::vector(m.diagonal().iter().map(|v| v.ln()).collect());
        let TransitionNet::Linear { g, b } = self.gen.transition else { unreachable!() };
        let CovarianceNet::Fixed(lv) = self.gen.covariance else { unreachable!() };
        self.params.set(g, from_mat(&sys.g.transpose()))?;
        self.params.set(b, from_mat(&sys.b.transpose()))?;
        self.params.set(lv, log_diag(&sys.q))?;
        self.params.set(self.gen.emission.weight(0), from_mat(&sys.f.transpose()))?;
        self.params.set(self.gen.emission.bias(0), Tensor::vector(sys.offset.iter().copied().collect()))?;
        self.params.set(self.gen.emission_log_var.expect("gaussian"), log_diag(&sys.r))?;
        Ok(())
    }
}

/// How the indicator channel is set when emitting off-tape.
#[derive(Clone, Copy, Debug)]
pub enum IndicatorInput<'a> {
    /// Drawn from its own emission probability with these `[B,1]`
    /// uniforms; `None` for models without an indicator.
    Natural(Option<&'a Tensor>),
    /// Observed values `[B,1]` (conditioning, not intervening).
    Given(&'a Tensor),
    /// The do-operator: the channel is fixed and its dependence on `z` cut.
    Fixed(f64),
}

fn emission_draws(key: &StreamKey, ids: &[u64], step: u32, d: usize) -> (Tensor, Tensor) {
    let (mut uni, mut gauss) = (Vec::with_capacity(ids.len() * (d + 1)), Vec::with_capacity(ids.len() * d));
    for &id in ids {
        let mut r = key.sequence(id).step(step).rng();
        uni.extend((0..=d).map(|_| r.uniform()));
        gauss.extend(r.normals(d));
    }
    (Tensor::from_parts(vec![ids.len(), d + 1], uni), Tensor::from_parts(vec![ids.len(), d], gauss))
}

fn diag_exp(t: &Tensor) -> Mat {
    Mat::from_diagonal(&Vector::from_iterator(t.len(), t.data().iter().map(|v| v.clamp(-LOG_VAR_BOUND, LOG_VAR_BOUND).exp())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn set(model: &mut Model, name: &str, t: Tensor) {
        let id = model.params.find(name).unwrap_or_else(|| panic!("no {name}"));
        model.params.set(id, t).unwrap();
    }

    fn transition_mean(model: &Model, z: &[f64], u: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let p = model.params.bind_frozen(&mut tape);
        let zv = tape.constant(Tensor::matrix(1, z.len(), z.to_vec()).unwrap());
        let uv = tape.constant(Tensor::matrix(1, u.len(), u.to_vec()).unwrap());
        let dv = tape.constant(Tensor::matrix(1, 1, vec![dt]).unwrap());
        let g = model.gen.transition(&mut tape, &p, zv, uv, dv).unwrap();
        (tape.value(g.mean).to_vec(), tape.value(g.log_var).to_vec())
    }

    #[test]
    fn linear_identity_transition() {
        let mut m = Model::new(ModelConfig::linear_gaussian(2, 3, 1), 1).unwrap();
        set(&mut m, "gen.trans.g", Tensor::eye(2));
        set(&mut m, "gen.trans.b", Tensor::zeros(&[1, 2]));
        assert_eq!(transition_mean(&m, &[0.3, -0.7], &[5.0], 1.0).0, vec![0.3, -0.7]);
    }

    #[test]
    fn random_walk_transition() {
        let cfg = ModelConfig { transition: TransitionKind::RandomWalk, rw_delta: 2.0, ..ModelConfig::new(2, 3, 2) };
        let m = Model::new(cfg, 1).unwrap();
        let (mean, lv) = transition_mean(&m, &[0.3, -0.7], &[1.0, 2.0], 0.5);
        assert_eq!(mean, vec![1.3, 1.3]);
        for v in lv {
            assert!((v - (0.5f64 / 2.0).ln()).abs() < 1e-15);
        }
        let bad = ModelConfig { transition: TransitionKind::RandomWalk, ..ModelConfig::new(2, 3, 1) };
        assert!(Model::new(bad, 1).is_err());
    }

    #[test]
    fn zero_linear_emission_gives_half() {
        let cfg = ModelConfig { emission: EmissionKind::Linear, ..ModelConfig::new(2, 5, 1) };
        let mut m = Model::new(cfg, 3).unwrap();
        set(&mut m, "gen.emit.l0.w", Tensor::zeros(&[2, 5]));
        let (mean, _) = m.emit(&Tensor::full(&[3, 2], 0.7), IndicatorInput::Natural(None)).unwrap();
        assert!(mean.data().iter().all(|v| *v == 0.5));
    }

    fn indicator_model() -> Model {
        let cfg = ModelConfig {
            indicator: Some(IndicatorConfig { channel: 0, lab_channels: vec![2, 3] }),
            ..ModelConfig::new(2, 4, 1)
        };
        Model::new(cfg, 4).unwrap()
    }

    #[test]
    fn indicator_channel_ignores_indicator_input() {
        let m = indicator_model();
        let z = Tensor::matrix(2, 2, vec![0.3, -0.2, 1.0, 0.5]).unwrap();
        let (a, _) = m.emit(&z, IndicatorInput::Fixed(0.0)).unwrap();
        let (b, _) = m.emit(&z, IndicatorInput::Given(&Tensor::full(&[2, 1], 1.0))).unwrap();
        let (c, _) = m.emit(&z, IndicatorInput::Given(&Tensor::full(&[2, 1], 0.0))).unwrap();
        for i in 0..2 {
            assert_eq!(b.at(i, 0), c.at(i, 0));
            assert_eq!(a.at(i, 1), b.at(i, 1));
            assert_ne!(b.at(i, 2), c.at(i, 2));
            assert_eq!(a.at(i, 0), 0.0);
        }
    }

    #[test]
    fn invalid_indicator_configs() {
        for ind in [
            IndicatorConfig { channel: 4, lab_channels: vec![] },
            IndicatorConfig { channel: 0, lab_channels: vec![0] },
            IndicatorConfig { channel: 0, lab_channels: vec![1, 1] },
        ] {
            let cfg = ModelConfig { indicator: Some(ind), ..ModelConfig::new(2, 4, 1) };
            assert!(Model::new(cfg, 0).is_err());
        }
    }

    #[test]
    fn degenerate_transition_keeps_state() {
        let mut m = Model::new(ModelConfig::linear_gaussian(2, 2, 2), 1).unwrap();
        set(&mut m, "gen.trans.g", Tensor::eye(2));
        set(&mut m, "gen.trans.b", Tensor::eye(2));
        set(&mut m, "gen.cov.log_var", Tensor::full(&[2], -30.0));
        let u = vec![Tensor::zeros(&[3, 2]); 4];
        let dt = vec![Tensor::ones(&[3, 1]); 4];
        let noise = SimNoise { seed: 9, round: 0, ids: vec![0, 1, 2], first_step: 0 };
        let tr = m.prior_sample(&u, &dt, &noise).unwrap();
        for z in &tr.z[1..] {
            assert!(z.zip_map(&tr.z[0], |a, b| (a - b).abs()).unwrap().max_abs() < 1e-5);
        }
        let again = m.prior_sample(&u, &dt, &noise).unwrap();
        assert_eq!(tr.x, again.x);
    }

    #[test]
    fn simulation_rows_do_not_depend_on_batch_position() {
        let m = Model::new(ModelConfig::new(3, 6, 1), 2).unwrap();
        let u = vec![Tensor::full(&[2, 1], 0.4); 3];
        let dt = vec![Tensor::ones(&[2, 1]); 3];
        let a = m.prior_sample(&u, &dt, &SimNoise { seed: 1, round: 0, ids: vec![10, 20], first_step: 0 }).unwrap();
        let b = m.prior_sample(&u, &dt, &SimNoise { seed: 1, round: 0, ids: vec![20, 10], first_step: 0 }).unwrap();
        for t in 0..4 {
            assert_eq!(a.x[t].row(0), b.x[t].row(1));
            assert_eq!(a.z[t].row(1), b.z[t].row(0));
        }
    }

    #[test]
    fn random_walk_second_step_variance() {
        // Var(z_2) = I + (dt/Δ) I
        let cfg = ModelConfig { transition: TransitionKind::RandomWalk, ..ModelConfig::new(1, 2, 1) };
        let m = Model::new(cfg, 1).unwrap();
        let n = 20_000;
        let ids: Vec<u64> = (0..n).collect();
        let noise = SimNoise { seed: 4, round: 0, ids, first_step: 0 };
        let tr = m
            .prior_sample(&[Tensor::zeros(&[n as usize, 1])], &[Tensor::ones(&[n as usize, 1])], &noise)
            .unwrap();
        let z2 = tr.z[1].data();
        let mean = z2.iter().sum::<f64>() / n as f64;
        let var = z2.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // sd of the sample variance ≈ 2·sqrt(2/n)
        assert!((var - 2.0).abs() < 3.0 * 2.0 * (2.0 / n as f64).sqrt(), "{var}");
    }

    #[test]
    fn linear_system_round_trip() {
        let mut rng = Rng::from_seed(5);
        let sys = LinearGaussianSystem::random(2, 3, 1, &mut rng);
        let mut m = Model::new(ModelConfig::linear_gaussian(2, 3, 1), 1).unwrap();
        m.load_linear_system(&sys).unwrap();
        let back = m.linear_system().unwrap();
        assert!((back.g - &sys.g).amax() < 1e-15);
        assert!((back.b - &sys.b).amax() < 1e-15);
        assert!((back.q - &sys.q).amax() < 1e-15);
        assert!((back.r - &sys.r).amax() < 1e-15);
        assert!((back.f - &sys.f).amax() < 1e-15);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("q-BRNN".parse::<Variant>().unwrap(), Variant::QBrnn);
        let err = "q-xyz".parse::<Variant>().unwrap_err().to_string();
        assert!(err.contains("q-indep") && err.contains("q-brnn"));
    }
}
