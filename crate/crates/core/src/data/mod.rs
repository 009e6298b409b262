//! Sequence datasets, synthetic generators and file formats.

pub mod cohort;
pub mod healing;
pub mod idx;
pub mod ntc;

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::linear::Vector;
use crate::tensor::Tensor;

/// `N` sequences of `T` steps: observations `x [N,T,d]`, actions
/// `u [N,T-1,c]`, time gaps `dt [N,T-1]` and a prefix-closed validity mask
/// `[N,T]`. Arrays are row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    pub len: usize,
    pub steps: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub dt: Vec<f64>,
    pub mask: Vec<f64>,
    /// Generator side information (ground truth, noise levels, ...).
    pub extras: Vec<(String, Tensor)>,
    pub metadata: Value,
}

/// A minibatch laid out per step: `x[t]` is `[B,d]`, `u[t]` is `[B,c]`,
/// `dt[t]` is `[B,1]` and `mask[t]` is `[B]`. `ids` address the random
/// streams of each row.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub ids: Vec<u64>,
    pub x: Vec<Tensor>,
    pub u: Vec<Tensor>,
    pub dt: Vec<Tensor>,
    pub mask: Vec<Tensor>,
}

impl SequenceBatch {
    pub fn size(&self) -> usize {
        self.ids.len()
    }

    pub fn steps(&self) -> usize {
        self.x.len()
    }

    /// A fully observed batch with unit time gaps.
    pub fn dense(ids: Vec<u64>, x: Vec<Tensor>, u: Vec<Tensor>) -> Result<Self> {
        let b = ids.len();
        if x.is_empty() || u.len() + 1 != x.len() || x.iter().chain(&u).any(|t| t.rank() != 2 || t.rows() != b) {
            return Err(Error::invalid("batch needs T observation and T-1 action matrices with one row per id"));
        }
        let dt = vec![Tensor::ones(&[b, 1]); u.len()];
        let mask = vec![Tensor::ones(&[b]); x.len()];
        Ok(SequenceBatch { ids, x, u, dt, mask })
    }

    /// Batch of one sequence from per-step vectors.
    pub fn single(id: u64, x: &[Vector], u: &[Vector]) -> Result<Self> {
        let row = |v: &Vector| Tensor::from_parts(vec![1, v.len()], v.iter().copied().collect());
        SequenceBatch::dense(vec![id], x.iter().map(row).collect(), u.iter().map(row).collect())
    }
}

fn tensor3(data: &[f64], a: usize, b: usize, c: usize) -> Option<Tensor> {
    (a * b * c > 0).then(|| Tensor::from_parts(vec![a, b, c], data.to_vec()))
}

impl SequenceDataset {
    pub fn new(
        steps: usize,
        obs_dim: usize,
        action_dim: usize,
        x: Vec<f64>,
        u: Vec<f64>,
        dt: Vec<f64>,
        mask: Vec<f64>,
    ) -> Result<Self> {
        if steps == 0 || obs_dim == 0 || action_dim == 0 {
            return Err(Error::invalid("steps, obs_dim and action_dim must be positive"));
        }
        let len = x.len() / (steps * obs_dim);
        let ds = SequenceDataset {
            len,
            steps,
            obs_dim,
            action_dim,
            x,
            u,
            dt,
            mask,
            extras: Vec::new(),
            metadata: Value::Null,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Fully observed, unit time gaps.
    pub fn dense(steps: usize, obs_dim: usize, action_dim: usize, x: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        let n = x.len() / (steps * obs_dim).max(1);
        SequenceDataset::new(steps, obs_dim, action_dim, x, u, vec![1.0; n * (steps - 1)], vec![1.0; n * steps])
    }

    pub fn validate(&self) -> Result<()> {
        let (n, t, d, c) = (self.len, self.steps, self.obs_dim, self.action_dim);
        if n == 0 {
            return Err(Error::invalid("dataset is empty"));
        }
        let expect = [("x", self.x.len(), n * t * d), ("u", self.u.len(), n * (t - 1) * c), ("dt", self.dt.len(), n * (t - 1)), ("mask", self.mask.len(), n * t)];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::invalid(format!("{name} has {got} values, expected {want}")));
            }
        }
        if self.x.iter().chain(&self.u).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset contains non-finite values".into()));
        }
        if self.dt.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("time gaps must be positive"));
        }
        for i in 0..n {
            let m = &self.mask[i * t..(i + 1) * t];
            if m.iter().any(|v| *v != 0.0 && *v != 1.0) || m.windows(2).any(|w| w[1] > w[0]) || m[0] != 1.0 {
                return Err(Error::invalid(format!("mask of sequence {i} is not a non-empty prefix")));
            }
        }
        Ok(())
    }

    pub fn is_binary(&self) -> bool {
        self.x.iter().all(|v| *v == 0.0 || *v == 1.0)
    }

    pub fn obs(&self, i: usize, t: usize) -> &[f64] {
        let d = self.obs_dim;
        let o = (i * self.steps + t) * d;
        &self.x[o..o + d]
    }

    pub fn action(&self, i: usize, t: usize) -> &[f64] {
        let c = self.action_dim;
        let o = (i * (self.steps - 1) + t) * c;
        &self.u[o..o + c]
    }

    pub fn max_abs_action(&self) -> f64 {
        self.u.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn extra(&self, name: &str) -> Option<&Tensor> {
        self.extras.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rows `indices` in order; row ids are the dataset indices.
    pub fn batch(&self, indices: &[usize]) -> SequenceBatch {
        let (t, d, c, b) = (self.steps, self.obs_dim, self.action_dim, indices.len());
        let gather = |width: usize, f: &dyn Fn(usize) -> Vec<f64>| -> Tensor {
            Tensor::from_parts(vec![b, width], indices.iter().flat_map(|&i| f(i)).collect())
        };
        SequenceBatch {
            ids: indices.iter().map(|&i| i as u64).collect(),
            x: (0..t).map(|s| gather(d, &|i| self.obs(i, s).to_vec())).collect(),
            u: (0..t - 1).map(|s| gather(c, &|i| self.action(i, s).to_vec())).collect(),
            dt: (0..t - 1).map(|s| gather(1, &|i| vec![self.dt[i * (t - 1) + s]])).collect(),
            mask: (0..t)
                .map(|s| Tensor::from_parts(vec![b], indices.iter().map(|&i| self.mask[i * t + s]).collect()))
                .collect(),
        }
    }

    /// Sequence `i` as per-step vectors `(x, u)`.
    pub fn sequence(&self, i: usize) -> (Vec<Vector>, Vec<Vector>) {
        let x = (0..self.steps).map(|t| Vector::from_column_slice(self.obs(i, t))).collect();
        let u = (0..self.steps - 1).map(|t| Vector::from_column_slice(self.action(i, t))).collect();
        (x, u)
    }

    /// The sequences at `indices` (extras indexed by sequence are sliced too).
    pub fn subset(&self, indices: &[usize]) -> SequenceDataset {
        let (t, d, c) = (self.steps, self.obs_dim, self.action_dim);
        let pick = |data: &[f64], w: usize| indices.iter().flat_map(|&i| data[i * w..(i + 1) * w].to_vec()).collect();
        let extras = self
            .extras
            .iter()
            .filter(|(_, v)| v.rank() >= 1 && v.shape()[0] == self.len)
            .map(|(n, v)| {
                let w = v.len() / self.len;
                let mut shape = v.shape().to_vec();
                shape[0] = indices.len();
                (n.clone(), Tensor::from_parts(shape, pick(v.data(), w)))
            })
            .collect();
        SequenceDataset {
            len: indices.len(),
            steps: t,
            obs_dim: d,
            action_dim: c,
            x: pick(&self.x, t * d),
            u: pick(&self.u, (t - 1) * c),
            dt: pick(&self.dt, t - 1),
            mask: pick(&self.mask, t),
            extras,
            metadata: self.metadata.clone(),
        }
    }

    /// First `n` sequences and the rest.
    pub fn split(&self, n: usize) -> (SequenceDataset, SequenceDataset) {
        let n = n.min(self.len);
        (self.subset(&(0..n).collect::<Vec<_>>()), self.subset(&(n..self.len).collect::<Vec<_>>()))
    }

    /// Named tensors for the container; `u` and `dt` are omitted when `T = 1`.
    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let (n, t, d, c) = (self.len, self.steps, self.obs_dim, self.action_dim);
        let mut out = vec![("x".to_string(), tensor3(&self.x, n, t, d).expect("non-empty"))];
        if let Some(u) = tensor3(&self.u, n, t - 1, c) {
            out.push(("u".into(), u));
            out.push(("dt".into(), Tensor::from_parts(vec![n, t - 1], self.dt.clone())));
        }
        out.push(("mask".into(), Tensor::from_parts(vec![n, t], self.mask.clone())));
        out.extend(self.extras.iter().map(|(k, v)| (format!("extra.{k}"), v.clone())));
        out
    }

    pub fn from_tensors(tensors: Vec<(String, Tensor)>, metadata: Value) -> Result<Self> {
        let get = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let x = get("x").ok_or_else(|| Error::format("dataset has no x tensor"))?;
        if x.rank() != 3 {
            return Err(Error::format("x must have rank 3"));
        }
        let (n, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let c = match get("u") {
            Some(u) if u.rank() == 3 => u.shape()[2],
            Some(_) => return Err(Error::format("u must have rank 3")),
            None => metadata.get("action_dim").and_then(Value::as_u64).unwrap_or(1) as usize,
        };
        let u = get("u").map(|v| v.to_vec()).unwrap_or_default();
        let dt = get("dt").map(|v| v.to_vec()).unwrap_or_default();
        let mask = get("mask").map(|v| v.to_vec()).unwrap_or_else(|| vec![1.0; n * t]);
        let mut ds = SequenceDataset::new(t, d, c, x.to_vec(), u, dt, mask)?;
        if ds.len != n {
            return Err(Error::format("inconsistent dataset dimensions"));
        }
        ds.extras = tensors
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix("extra.").map(|s| (s.to_string(), v)))
            .collect();
        ds.metadata = metadata;
        Ok(ds)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut meta = self.metadata.clone();
        if !meta.is_object() {
            meta = Value::Object(Default::default());
        }
        meta["action_dim"] = self.action_dim.into();
        ntc::write(path, &serde_json::to_string(&meta)?, &self.to_tensors())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = ntc::read(path)?;
        let meta = if file.metadata.is_empty() { Value::Null } else { serde_json::from_str(&file.metadata)? };
        SequenceDataset::from_tensors(file.tensors, meta)
    }
}
