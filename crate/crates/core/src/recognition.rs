//! Recognition networks `q(z_t | z_{t-1}, window_t)`.
//!
//! Each variant turns the observations and actions into one feature vector
//! per step; a shared combiner maps `(feature_t, z_{t-1})` to a diagonal
//! Gaussian. The step input is `r_t = [x_t, u_t]` with `u_T = 0`.
//!
//! | variant | feature_t depends on |
//! |---------|----------------------|
//! | q-INDEP | `r_t` |
//! | q-LR    | `r_{t-1}, r_t, r_{t+1}` (zero padded) |
//! | q-RNN   | `r_1 .. r_t` |
//! | q-BRNN  | `r_1 .. r_T` |

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gaussian::GaussianVar;
use crate::model::{ModelConfig, Variant};
use crate::nn::{Activation, BiLstm, Initializer, Lstm, Mlp};
use crate::param::{Bound, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Extractor {
    Mlp(Mlp),
    Rnn(Lstm),
    Brnn(BiLstm),
}

#[derive(Clone, Debug)]
pub struct RecognitionNet {
    variant: Variant,
    extractor: Extractor,
    combiner: Mlp,
    latent_dim: usize,
    obs_dim: usize,
    action_dim: usize,
    use_z_prev: bool,
}

/// One posterior factor and its reparameterized draw, both `[B,s]`.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorStep {
    pub q: GaussianVar,
    pub z: Var,
}

impl RecognitionNet {
    pub(crate) fn new(cfg: &ModelConfig, params: &mut ParamSet, init: &mut Initializer) -> Self {
        let r = &cfg.recognition;
        let step_in = cfg.obs_dim + cfg.action_dim;
        let tanh = Activation::Tanh;
        let mlp = |params: &mut ParamSet, init: &mut Initializer, input: usize| {
            let mut dims = vec![input];
            dims.extend_from_slice(&r.hidden);
            dims.push(r.feature_dim);
            Mlp::new(params, "rec.feat", &dims, tanh, tanh, init)
        };
        let extractor = match r.variant {
            Variant::QIndep => Extractor::Mlp(mlp(params, init, step_in)),
            Variant::QLr => Extractor::Mlp(mlp(params, init, 3 * step_in)),
            Variant::QRnn => Extractor::Rnn(Lstm::new(params, "rec.rnn", step_in, r.rnn_hidden, r.rnn_layers, init)),
            Variant::QBrnn => {
                Extractor::Brnn(BiLstm::new(params, "rec.brnn", step_in, r.rnn_hidden, r.rnn_layers, init))
            }
        };
        let feature = match &extractor {
            Extractor::Mlp(m) => m.output_dim(),
            Extractor::Rnn(l) => l.hidden(),
            Extractor::Brnn(b) => b.output_dim(),
        };
        let mut dims = vec![feature + if r.use_z_prev { cfg.latent_dim } else { 0 }];
        dims.extend_from_slice(&r.combiner_hidden);
        dims.push(2 * cfg.latent_dim);
        let combiner = Mlp::new(params, "rec.comb", &dims, tanh, Activation::Identity, init);
        RecognitionNet {
            variant: r.variant,
            extractor,
            combiner,
            latent_dim: cfg.latent_dim,
            obs_dim: cfg.obs_dim,
            action_dim: cfg.action_dim,
            use_z_prev: r.use_z_prev,
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn combiner(&self) -> &Mlp {
        &self.combiner
    }

    /// `r_t = [x_t, u_t]` per step, `[B, d + c]`. `x` has `T` entries and
    /// `u` has `T - 1`.
    pub fn step_inputs(&self, x: &[Tensor], u: &[Tensor]) -> Result<Vec<Tensor>> {
        if x.is_empty() || u.len() + 1 != x.len() {
            return Err(Error::invalid(format!("{} steps need {} actions, got {}", x.len(), x.len().max(1) - 1, u.len())));
        }
        let (d, c) = (self.obs_dim, self.action_dim);
        let b = x[0].rows();
        (0..x.len())
            .map(|t| {
                if x[t].shape() != [b, d] || (t < u.len() && u[t].shape() != [b, c]) {
                    return Err(Error::Shape { op: "recognition-input", lhs: x[t].shape().to_vec(), rhs: vec![b, d] });
                }
                let mut data = Vec::with_capacity(b * (d + c));
                for i in 0..b {
                    data.extend_from_slice(x[t].row(i));
                    match u.get(t) {
                        Some(ut) => data.extend_from_slice(ut.row(i)),
                        None => data.extend(std::iter::repeat_n(0.0, c)),
                    }
                }
                Ok(Tensor::from_parts(vec![b, d + c], data))
            })
            .collect()
    }

    fn windows(inputs: &[Tensor]) -> Vec<Tensor> {
        let (b, w) = (inputs[0].rows(), inputs[0].cols());
        let zero = vec![0.0; w];
        (0..inputs.len())
            .map(|t| {
                let mut data = Vec::with_capacity(b * 3 * w);
                for i in 0..b {
                    let at = |k: Option<usize>| k.and_then(|k| inputs.get(k)).map_or(&zero[..], |r| r.row(i));
                    data.extend_from_slice(at(t.checked_sub(1)));
                    data.extend_from_slice(at(Some(t)));
                    data.extend_from_slice(at(Some(t + 1)));
                }
                Tensor::from_parts(vec![b, 3 * w], data)
            })
            .collect()
    }

    /// Per-step features from precomputed step inputs.
    pub fn features(&self, tape: &mut Tape, p: &Bound, inputs: &[Tensor]) -> Result<Vec<Var>> {
        let n = inputs.len();
        match &self.extractor {
            Extractor::Mlp(net) => {
                let per_step = if self.variant == Variant::QLr { Self::windows(inputs) } else { inputs.to_vec() };
                let b = per_step[0].rows();
                // One pass over all steps stacked time-major.
                let stacked = stack_rows(&per_step);
                let v = tape.constant(stacked);
                let out = net.forward(tape, p, v)?;
                (0..n).map(|t| tape.slice_rows(out, t * b, (t + 1) * b)).collect()
            }
            Extractor::Rnn(lstm) => {
                let seq: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
                lstm.forward(tape, p, &seq, None)
            }
            Extractor::Brnn(bi) => {
                let seq: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
                bi.run(tape, p, &seq)
            }
        }
    }

    /// Combiner on `[feature_t, z_prev]`; `z_prev = None` means zeros.
    pub fn posterior_step(&self, tape: &mut Tape, p: &Bound, feature: Var, z_prev: Option<Var>) -> Result<GaussianVar> {
        let input = if self.use_z_prev {
            let z = match z_prev {
                Some(z) => z,
                None => {
                    let b = tape.shape(feature)[0];
                    tape.constant(Tensor::zeros(&[b, self.latent_dim]))
                }
            };
            tape.concat_cols(&[feature, z])?
        } else {
            feature
        };
        let out = self.combiner.forward(tape, p, input)?;
        let s = self.latent_dim;
        let mean = tape.slice_cols(out, 0, s)?;
        let log_var = tape.slice_cols(out, s, 2 * s)?;
        GaussianVar::new(tape, mean, log_var)
    }

    /// The posterior chain: at each step the combiner sees the previous
    /// draw, and `eps[t]` (`[B,s]`) reparameterizes the new one.
    pub fn infer(&self, tape: &mut Tape, p: &Bound, features: &[Var], eps: &[Tensor]) -> Result<Vec<PosteriorStep>> {
        if features.len() != eps.len() {
            return Err(Error::invalid(format!("{} feature steps but {} noise steps", features.len(), eps.len())));
        }
        let mut out: Vec<PosteriorStep> = Vec::with_capacity(features.len());
        for (f, e) in features.iter().zip(eps) {
            let q = self.posterior_step(tape, p, *f, out.last().map(|s| s.z))?;
            let ev = tape.constant(e.clone());
            let z = q.sample(tape, ev)?;
            out.push(PosteriorStep { q, z });
        }
        Ok(out)
    }
}

/// Concatenates `[B, w]` tensors along rows.
pub(crate) fn stack_rows(parts: &[Tensor]) -> Tensor {
    let w = parts[0].cols();
    let rows = parts.iter().map(Tensor::rows).sum();
    let data = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::from_parts(vec![rows, w], data)
}
