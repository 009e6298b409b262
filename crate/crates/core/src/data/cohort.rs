//! Synthetic cohorts drawn ancestrally from a known model, used wherever an
//! exact reference is needed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ntc, SequenceDataset};
use crate::error::{Error, Result};
use crate::linear::{LinearGaussianSystem, Mat, Vector};
use crate::model::{Model, SimNoise};
use crate::rng::{Purpose, Rng, StreamKey};
use crate::tensor::Tensor;

/// How actions are drawn for each sequence and step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CohortPolicy {
    Zero,
    /// Independent `U[-scale, scale]` per component.
    Uniform { scale: f64 },
    /// Independent 0/1 treatment indicators with rate `p`.
    Bernoulli { p: f64 },
    /// The same action vector at every step.
    Constant { value: Vec<f64> },
}

impl CohortPolicy {
    fn draw(&self, c: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(match self {
            CohortPolicy::Zero => vec![0.0; c],
            CohortPolicy::Uniform { scale } => (0..c).map(|_| rng.uniform_in(-scale, *scale)).collect(),
            CohortPolicy::Bernoulli { p } => (0..c).map(|_| if rng.bernoulli(*p) { 1.0 } else { 0.0 }).collect(),
            CohortPolicy::Constant { value } => {
                if value.len() != c {
                    return Err(Error::invalid(format!("constant action has {} components, expected {c}", value.len())));
                }
                value.clone()
            }
        })
    }

    /// `[N, T-1, c]` actions, one `Action` stream per sequence.
    pub fn actions(&self, n: usize, steps: usize, c: usize, seed: u64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n * (steps - 1) * c);
        for i in 0..n {
            let mut rng = StreamKey::new(seed, Purpose::Action).sequence(i as u64).rng();
            for _ in 1..steps {
                out.extend(self.draw(c, &mut rng)?);
            }
        }
        Ok(out)
    }
}

/// `N` sequences of length `T` from a classical linear-Gaussian system.
/// The latent paths are kept as the `z [N,T,s]` extra.
pub fn gen_linear_cohort(
    sys: &LinearGaussianSystem,
    n: usize,
    steps: usize,
    policy: &CohortPolicy,
    seed: u64,
) -> Result<SequenceDataset> {
    sys.validate()?;
    if n == 0 || steps == 0 {
        return Err(Error::invalid("cohort needs at least one sequence and one step"));
    }
    let (s, d, c) = (sys.latent_dim(), sys.obs_dim(), sys.action_dim());
    let u = policy.actions(n, steps, c, seed)?;
    let (mut x, mut z) = (Vec::with_capacity(n * steps * d), Vec::with_capacity(n * steps * s));
    for i in 0..n {
        let acts: Vec<Vector> = (0..steps - 1)
            .map(|t| Vector::from_column_slice(&u[(i * (steps - 1) + t) * c..(i * (steps - 1) + t + 1) * c]))
            .collect();
        let mut rng = StreamKey::new(seed, Purpose::Cohort).sequence(i as u64).rng();
        let (zs, xs) = sys.sample(&acts, &mut rng)?;
        z.extend(zs.iter().flat_map(|v| v.iter().copied()));
        x.extend(xs.iter().flat_map(|v| v.iter().copied()));
    }
    let mut ds = SequenceDataset::dense(steps, d, c, x, u)?;
    ds.extras.push(("z".into(), Tensor::new(vec![n, steps, s], z)?));
    ds.metadata = json!({ "generator": "linear_cohort", "seed": seed, "policy": policy });
    Ok(ds)
}

/// `N` sequences sampled ancestrally from a (possibly nonlinear, possibly
/// indicator-gated) model with unit time gaps.
pub fn gen_model_cohort(model: &Model, n: usize, steps: usize, policy: &CohortPolicy, seed: u64) -> Result<SequenceDataset> {
    if n == 0 || steps == 0 {
        return Err(Error::invalid("cohort needs at least one sequence and one step"));
    }
    let (s, d, c) = (model.latent_dim(), model.obs_dim(), model.action_dim());
    let u = policy.actions(n, steps, c, seed)?;
    let per_step = |t: usize| {
        let data = (0..n).flat_map(|i| u[(i * (steps - 1) + t) * c..(i * (steps - 1) + t + 1) * c].to_vec()).collect();
        Tensor::from_parts(vec![n, c], data)
    };
    let us: Vec<Tensor> = (0..steps - 1).map(per_step).collect();
    let dts = vec![Tensor::ones(&[n, 1]); steps - 1];
    let noise = SimNoise { seed, round: 0, ids: (0..n as u64).collect(), first_step: 0 };
    let traj = model.prior_sample(&us, &dts, &noise)?;
    let gather = |ts: &[Tensor], w: usize| -> Vec<f64> {
        (0..n).flat_map(|i| ts.iter().flat_map(move |t| t.data()[i * w..(i + 1) * w].to_vec())).collect()
    };
    let mut ds = SequenceDataset::dense(steps, d, c, gather(&traj.x, d), u)?;
    ds.extras.push(("z".into(), Tensor::new(vec![n, steps, s], gather(&traj.z, s))?));
    ds.metadata = json!({ "generator": "model_cohort", "seed": seed, "policy": policy });
    Ok(ds)
}

fn mat_tensor(m: &Mat) -> Tensor {
    Tensor::from_parts(vec![m.nrows(), m.ncols()], m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect())
}

/// Named tensors `g, b, q, f, offset, r, m0, p0` for a system.
pub fn system_tensors(sys: &LinearGaussianSystem) -> Vec<(String, Tensor)> {
    vec![
        ("g".into(), mat_tensor(&sys.g)),
        ("b".into(), mat_tensor(&sys.b)),
        ("q".into(), mat_tensor(&sys.q)),
        ("f".into(), mat_tensor(&sys.f)),
        ("offset".into(), Tensor::vector(sys.offset.iter().copied().collect())),
        ("r".into(), mat_tensor(&sys.r)),
        ("m0".into(), Tensor::vector(sys.m0.iter().copied().collect())),
        ("p0".into(), mat_tensor(&sys.p0)),
    ]
}

pub fn system_from_tensors(tensors: &[(String, Tensor)]) -> Result<LinearGaussianSystem> {
    let get = |name: &str| {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::format(format!("system file has no {name:?} tensor")))
    };
    let mat = |name: &str| -> Result<Mat> {
        let t = get(name)?;
        if t.rank() != 2 {
            return Err(Error::format(format!("{name} must be a matrix")));
        }
        Ok(Mat::from_row_slice(t.rows(), t.cols(), t.data()))
    };
    let vector = |name: &str| get(name).map(|t| Vector::from_column_slice(t.data()));
    let sys = LinearGaussianSystem {
        g: mat("g")?,
        b: mat("b")?,
        q: mat("q")?,
        f: mat("f")?,
        offset: vector("offset")?,
        r: mat("r")?,
        m0: vector("m0")?,
        p0: mat("p0")?,
    };
    sys.validate()?;
    Ok(sys)
}

pub fn write_system(path: &Path, sys: &LinearGaussianSystem) -> Result<()> {
    ntc::write(path, r#"{"kind":"linear_gaussian_system"}"#, &system_tensors(sys))
}

pub fn read_system(path: &Path) -> Result<LinearGaussianSystem> {
    system_from_tensors(&ntc::read(path)?.tensors)
}
