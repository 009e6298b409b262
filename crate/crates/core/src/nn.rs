//! Neural building blocks: MLPs, LSTMs, bidirectional LSTMs, dropout,
//! initialization and the ADAM optimizer.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::param::{Bound, ParamId, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Glorot-uniform weights, zero biases.
pub struct Initializer {
    rng: Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer { rng: Rng::from_seed(seed) }
    }

    pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }

    pub fn glorot(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        let a = Self::glorot_bound(fan_in, fan_out);
        let data = (0..fan_in * fan_out).map(|_| self.rng.uniform_in(-a, a)).collect();
        Tensor::from_parts(vec![fan_in, fan_out], data)
    }
}

#[derive(Clone, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
    act: Activation,
}

/// Stack of affine layers, `x·W + b` followed by an activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
    dims: Vec<usize>,
}

impl Mlp {
    /// `dims` lists the input width, hidden widths and output width. Hidden
    /// layers use `hidden`; the last layer uses `output`.
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        init: &mut Initializer,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let w = params.add(format!("{prefix}.l{i}.w"), init.glorot(dims[i], dims[i + 1]));
                let b = params.add(format!("{prefix}.l{i}.b"), Tensor::zeros(&[dims[i + 1]]));
                Dense { w, b, act: if i + 1 == n { output } else { hidden } }
            })
            .collect();
        Mlp { layers, dims: dims.to_vec() }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Σ (fan_in + 1)·fan_out.
    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn weight(&self, layer: usize) -> ParamId {
        self.layers[layer].w
    }

    pub fn bias(&self, layer: usize) -> ParamId {
        self.layers[layer].b
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, input: Var) -> Result<Var> {
        let width = tape.shape(input).get(1).copied();
        if tape.shape(input).len() != 2 || width != Some(self.input_dim()) {
            return Err(Error::Shape {
                op: "mlp",
                lhs: tape.shape(input).to_vec(),
                rhs: vec![self.input_dim()],
            });
        }
        let mut h = input;
        for layer in &self.layers {
            let z = tape.matmul(h, p.var(layer.w))?;
            let z = tape.add_bias(z, p.var(layer.b))?;
            h = layer.act.apply(tape, z)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
struct LstmLayer {
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
}

/// Multi-layer LSTM. Gate columns are laid out as
/// `[input | forget | output | candidate]`, each `hidden` wide.
#[derive(Clone, Debug)]
pub struct Lstm {
    layers: Vec<LstmLayer>,
    input: usize,
    hidden: usize,
}

/// Hidden and cell state of one layer.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

pub const FORGET_BIAS: f64 = 1.0;

impl Lstm {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        num_layers: usize,
        init: &mut Initializer,
    ) -> Self {
        assert!(num_layers >= 1 && hidden >= 1);
        let layers = (0..num_layers)
            .map(|l| {
                let fan_in = if l == 0 { input } else { hidden };
                let w_x = params.add(format!("{prefix}.l{l}.w_x"), gate_weights(init, fan_in, hidden));
                let w_h = params.add(format!("{prefix}.l{l}.w_h"), gate_weights(init, hidden, hidden));
                let mut bias = vec![0.0; 4 * hidden];
                bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = FORGET_BIAS);
                let b = params.add(format!("{prefix}.l{l}.b"), Tensor::from_parts(vec![4 * hidden], bias));
                LstmLayer { w_x, w_h, b }
            })
            .collect();
        Lstm { layers, input, hidden }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.w_x, l.w_h, l.b]).collect()
    }

    /// Runs the recurrence over `seq` (each `[batch, input]`) and returns the
    /// top layer's hidden state at every step. `initial` gives per-layer
    /// starting states; zeros when `None`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, seq: &[Var], initial: Option<&[LstmState]>) -> Result<Vec<Var>> {
        if seq.is_empty() {
            return Err(Error::invalid("lstm needs at least one step"));
        }
        let batch = tape.shape(seq[0])[0];
        for x in seq {
            let s = tape.shape(*x);
            if s.len() != 2 || s[0] != batch || s[1] != self.input {
                return Err(Error::Shape { op: "lstm", lhs: s.to_vec(), rhs: vec![batch, self.input] });
            }
        }
        if let Some(init) = initial {
            if init.len() != self.layers.len() {
                return Err(Error::invalid("initial state needs one entry per layer"));
            }
        }
        let steps = seq.len();
        let mut inputs = seq.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            // Input projections for every step in one product.
            let stacked = if steps == 1 { inputs[0] } else { tape.concat_rows(&inputs)? };
            let xw = tape.matmul(stacked, p.var(layer.w_x))?;
            let xw = tape.add_bias(xw, p.var(layer.b))?;
            let mut state = initial.map(|s| s[l]);
            let mut outputs = Vec::with_capacity(steps);
            for t in 0..steps {
                let pre_x = if steps == 1 { xw } else { tape.slice_rows(xw, t * batch, (t + 1) * batch)? };
                let pre = match state {
                    Some(s) => {
                        let hw = tape.matmul(s.h, p.var(layer.w_h))?;
                        tape.add(pre_x, hw)?
                    }
                    None => pre_x,
                };
                let next = self.cell(tape, pre, state.map(|s| s.c))?;
                outputs.push(next.h);
                state = Some(next);
            }
            inputs = outputs;
        }
        Ok(inputs)
    }

    fn cell(&self, tape: &mut Tape, pre: Var, c_prev: Option<Var>) -> Result<LstmState> {
        let h = self.hidden;
        let i = tape.slice_cols(pre, 0, h)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice_cols(pre, h, 2 * h)?;
        let f = tape.sigmoid(f)?;
        let o = tape.slice_cols(pre, 2 * h, 3 * h)?;
        let o = tape.sigmoid(o)?;
        let g = tape.slice_cols(pre, 3 * h, 4 * h)?;
        let g = tape.tanh(g)?;
        let ig = tape.mul(i, g)?;
        let c = match c_prev {
            Some(c_prev) => {
                let fc = tape.mul(f, c_prev)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

fn gate_weights(init: &mut Initializer, fan_in: usize, hidden: usize) -> Tensor {
    let gates: Vec<Tensor> = (0..4).map(|_| init.glorot(fan_in, hidden)).collect();
    let mut data = Vec::with_capacity(fan_in * 4 * hidden);
    for r in 0..fan_in {
        for g in &gates {
            data.extend_from_slice(g.row(r));
        }
    }
    Tensor::from_parts(vec![fan_in, 4 * hidden], data)
}

/// Forward and backward LSTMs whose outputs are concatenated per step.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        num_layers: usize,
        init: &mut Initializer,
    ) -> Self {
        BiLstm {
            forward: Lstm::new(params, &format!("{prefix}.fwd"), input, hidden, num_layers, init),
            backward: Lstm::new(params, &format!("{prefix}.bwd"), input, hidden, num_layers, init),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden() + self.backward.hidden()
    }

    /// Step `t` of the output is `[fwd(x_1..x_t) | bwd(x_T..x_t)]`.
    pub fn run(&self, tape: &mut Tape, p: &Bound, seq: &[Var]) -> Result<Vec<Var>> {
        let fwd = self.forward.forward(tape, p, seq, None)?;
        let reversed: Vec<Var> = seq.iter().rev().cloned().collect();
        let mut bwd = self.backward.forward(tape, p, &reversed, None)?;
        bwd.reverse();
        fwd.into_iter().zip(bwd).map(|(f, b)| tape.concat_cols(&[f, b])).collect()
    }
}

/// Inverted dropout: zeroes each element with probability `rate` and scales
/// survivors by `1/(1-rate)`. Identity when `rate == 0` or outside training.
pub fn dropout(input: &Tensor, rate: f64, rng: &mut Rng, train: bool) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if !train || rate == 0.0 {
        return Ok(input.clone());
    }
    let keep = 1.0 / (1.0 - rate);
    let data = input.data().iter().map(|&x| if rng.uniform() < rate { 0.0 } else { x * keep }).collect();
    Tensor::new(input.shape().to_vec(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for every parameter of a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { config, t: 0, m: zeros.clone(), v: zeros }
    }

    /// One descent step on `params` given loss gradients `grads`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::Shape { op: "adam", lhs: params.get(id).shape().to_vec(), rhs: g.shape().to_vec() });
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {}", params.name(id))));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (k, (id, g)) in params.ids().zip(grads).enumerate() {
            let m: Vec<f64> =
                self.m[k].data().iter().zip(g.data()).map(|(m, g)| beta1 * m + (1.0 - beta1) * g).collect();
            let v: Vec<f64> =
                self.v[k].data().iter().zip(g.data()).map(|(v, g)| beta2 * v + (1.0 - beta2) * g * g).collect();
            let p: Vec<f64> = params
                .get(id)
                .data()
                .iter()
                .zip(m.iter().zip(&v))
                .map(|(p, (m, v))| p - lr * (m / bc1) / ((v / bc2).sqrt() + eps))
                .collect();
            let shape = g.shape().to_vec();
            params.set(id, Tensor::from_parts(shape.clone(), p))?;
            self.m[k] = Tensor::from_parts(shape.clone(), m);
            self.v[k] = Tensor::from_parts(shape, v);
        }
        Ok(())
    }
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data().iter()).map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g = g.map(|x| x * s);
        }
    }
    norm
}
