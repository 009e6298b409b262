//! Exact linear-Gaussian machinery used as reference oracles: the Kalman
//! filter likelihood, the RTS smoother, dense joint Gaussians with
//! conditioning, analytic bounds for structured Gaussian posteriors, and the
//! joint random-walk prior.
//!
//! Model:
//! `z_1 ~ N(m0, P0)`, `z_t = G z_{t-1} + B u_{t-1} + w_t`, `w_t ~ N(0, Q)`,
//! `x_t = F z_t + c + v_t`, `v_t ~ N(0, R)`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub(crate) fn cholesky(m: &Mat, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    Cholesky::new(sym).ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

/// A factor `L` with `L Lᵀ = m` for symmetric positive semi-definite `m`
/// (Cholesky when definite, eigen-decomposition otherwise).
pub(crate) fn psd_factor(m: &Mat) -> Mat {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(c) = Cholesky::new(sym.clone()) {
        return c.l();
    }
    let eig = sym.symmetric_eigen();
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&root)
}

fn log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `log N(x; mean, cov)`.
pub fn mvn_log_density(x: &Vector, mean: &Vector, cov: &Mat) -> Result<f64> {
    let c = cholesky(cov, "covariance")?;
    let e = x - mean;
    let sol = c.solve(&e);
    Ok(-0.5 * (x.len() as f64 * (2.0 * PI).ln() + log_det(&c) + e.dot(&sol)))
}

/// `KL(N(mq, cq) || N(mp, cp))` for dense covariances.
pub fn gaussian_kl(mq: &Vector, cq: &Mat, mp: &Vector, cp: &Mat) -> Result<f64> {
    let lp = cholesky(cp, "prior covariance")?;
    let lq = cholesky(cq, "posterior covariance")?;
    let dm = mp - mq;
    let trace = lp.solve(cq).trace();
    Ok(0.5 * (trace - mq.len() as f64 + dm.dot(&lp.solve(&dm)) + log_det(&lp) - log_det(&lq)))
}

/// `KL(N(mq, cq) || N(mp, precision⁻¹))` with the prior given by its precision.
pub fn gaussian_kl_precision(mq: &Vector, cq: &Mat, mp: &Vector, precision: &Mat) -> Result<f64> {
    let lam = cholesky(precision, "prior precision")?;
    let lq = cholesky(cq, "posterior covariance")?;
    let dm = mp - mq;
    let trace = (precision * cq).trace();
    Ok(0.5 * (trace - mq.len() as f64 + dm.dot(&(precision * &dm)) - log_det(&lam) - log_det(&lq)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianSystem {
    pub g: Mat,
    pub b: Mat,
    pub q: Mat,
    pub f: Mat,
    pub offset: Vector,
    pub r: Mat,
    pub m0: Vector,
    pub p0: Mat,
}

/// Forward filter output, all indexed by step.
#[derive(Clone, Debug)]
pub struct FilterPass {
    pub predicted_means: Vec<Vector>,
    pub predicted_covs: Vec<Mat>,
    pub filtered_means: Vec<Vector>,
    pub filtered_covs: Vec<Mat>,
    pub log_likelihood: f64,
}

/// Smoothed marginals `p(z_t | x_{1:T})` and lag-one cross covariances
/// `cross[t] = Cov(z_t, z_{t-1} | x)` (`cross[0]` is unused and zero).
#[derive(Clone, Debug)]
pub struct Smoothed {
    pub means: Vec<Vector>,
    pub covs: Vec<Mat>,
    pub cross: Vec<Mat>,
}

impl LinearGaussianSystem {
    /// Standard prior `N(0, I)`, zero emission offset.
    pub fn new(g: Mat, b: Mat, q: Mat, f: Mat, r: Mat) -> Result<Self> {
        let s = g.nrows();
        let sys = LinearGaussianSystem {
            offset: Vector::zeros(f.nrows()),
            m0: Vector::zeros(s),
            p0: Mat::identity(s, s),
            g,
            b,
            q,
            f,
            r,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Random stable system with diagonal noise covariances.
    pub fn random(s: usize, d: usize, c: usize, rng: &mut Rng) -> Self {
        let mut m = |r: usize, k: usize, scale: f64| Mat::from_fn(r, k, |_, _| scale * rng.uniform_in(-1.0, 1.0));
        let g = m(s, s, 0.9 / (s as f64).sqrt());
        let b = m(s, c, 1.0);
        let f = m(d, s, 1.0);
        let q = Mat::from_diagonal(&Vector::from_fn(s, |_, _| rng.uniform_in(0.2, 1.0)));
        let r = Mat::from_diagonal(&Vector::from_fn(d, |_, _| rng.uniform_in(0.2, 1.0)));
        LinearGaussianSystem::new(g, b, q, f, r).expect("random system is well formed")
    }

    pub fn latent_dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (s, d) = (self.g.nrows(), self.f.nrows());
        let ok = self.g.ncols() == s
            && self.b.nrows() == s
            && self.q.shape() == (s, s)
            && self.f.ncols() == s
            && self.offset.len() == d
            && self.r.shape() == (d, d)
            && self.m0.len() == s
            && self.p0.shape() == (s, s);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("inconsistent linear-Gaussian system dimensions"))
        }
    }

    fn check_sequence(&self, x: &[Vector], u: &[Vector]) -> Result<()> {
        if x.is_empty() {
            return Err(Error::invalid("empty observation sequence"));
        }
        if u.len() + 1 != x.len() {
            return Err(Error::invalid(format!("{} observations need {} actions, got {}", x.len(), x.len() - 1, u.len())));
        }
        if x.iter().any(|v| v.len() != self.obs_dim()) || u.iter().any(|v| v.len() != self.action_dim()) {
            return Err(Error::invalid("observation or action width does not match the system"));
        }
        Ok(())
    }

    /// Ancestral sample `(z, x)`.
    pub fn sample(&self, u: &[Vector], rng: &mut Rng) -> Result<(Vec<Vector>, Vec<Vector>)> {
        self.validate()?;
        let (lp0, lq, lr) = (psd_factor(&self.p0), psd_factor(&self.q), psd_factor(&self.r));
        let (s, d) = (self.latent_dim(), self.obs_dim());
        let mut zs = Vec::with_capacity(u.len() + 1);
        let mut xs = Vec::with_capacity(u.len() + 1);
        let mut z = &self.m0 + &lp0 * Vector::from_vec(rng.normals(s));
        for t in 0..=u.len() {
            if t > 0 {
                z = &self.g * &z + &self.b * &u[t - 1] + &lq * Vector::from_vec(rng.normals(s));
            }
            xs.push(&self.f * &z + &self.offset + &lr * Vector::from_vec(rng.normals(d)));
            zs.push(z.clone());
        }
        Ok((zs, xs))
    }

    /// `log p(x, z | u)`.
    pub fn log_joint(&self, x: &[Vector], u: &[Vector], z: &[Vector]) -> Result<f64> {
        self.check_sequence(x, u)?;
        let mut total = mvn_log_density(&z[0], &self.m0, &self.p0)?;
        for t in 0..x.len() {
            if t > 0 {
                let mean = &self.g * &z[t - 1] + &self.b * &u[t - 1];
                total += mvn_log_density(&z[t], &mean, &self.q)?;
            }
            total += mvn_log_density(&x[t], &(&self.f * &z[t] + &self.offset), &self.r)?;
        }
        Ok(total)
    }

    /// Kalman filter with the prediction-error decomposition of `log p(x | u)`.
    pub fn filter(&self, x: &[Vector], u: &[Vector]) -> Result<FilterPass> {
        self.check_sequence(x, u)?;
        let s = self.latent_dim();
        let mut out = FilterPass {
            predicted_means: Vec::new(),
            predicted_covs: Vec::new(),
            filtered_means: Vec::new(),
            filtered_covs: Vec::new(),
            log_likelihood: 0.0,
        };
        let (mut m, mut p) = (self.m0.clone(), self.p0.clone());
        for t in 0..x.len() {
            if t > 0 {
                m = &self.g * &m + &self.b * &u[t - 1];
                p = &self.g * &p * self.g.transpose() + &self.q;
            }
            out.predicted_means.push(m.clone());
            out.predicted_covs.push(p.clone());
            let innov_cov = &self.f * &p * self.f.transpose() + &self.r;
            let chol = cholesky(&innov_cov, "innovation covariance")?;
            let e = &x[t] - &self.f * &m - &self.offset;
            out.log_likelihood +=
                -0.5 * (e.len() as f64 * (2.0 * PI).ln() + log_det(&chol) + e.dot(&chol.solve(&e)));
            // K = P Fᵀ S⁻¹, computed as (S⁻¹ F P)ᵀ.
            let gain = chol.solve(&(&self.f * &p)).transpose();
            m = &m + &gain * e;
            let ikf = Mat::identity(s, s) - &gain * &self.f;
            p = &ikf * &p * ikf.transpose() + &gain * &self.r * gain.transpose();
            out.filtered_means.push(m.clone());
            out.filtered_covs.push(p.clone());
        }
        Ok(out)
    }

    /// Exact `log p(x_{1:T} | u)`.
    pub fn log_likelihood(&self, x: &[Vector], u: &[Vector]) -> Result<f64> {
        Ok(self.filter(x, u)?.log_likelihood)
    }

    /// Rauch-Tung-Striebel smoother.
    pub fn smooth(&self, x: &[Vector], u: &[Vector]) -> Result<Smoothed> {
        let f = self.filter(x, u)?;
        let n = x.len();
        let s = self.latent_dim();
        let mut means = f.filtered_means.clone();
        let mut covs = f.filtered_covs.clone();
        let mut cross = vec![Mat::zeros(s, s); n];
        for t in (0..n.saturating_sub(1)).rev() {
            let pred = cholesky(&f.predicted_covs[t + 1], "predicted covariance")?;
            // J = P_t Gᵀ P_pred⁻¹, computed as (P_pred⁻¹ G P_t)ᵀ.
            let j = pred.solve(&(&self.g * &f.filtered_covs[t])).transpose();
            means[t] = &f.filtered_means[t] + &j * (&means[t + 1] - &f.predicted_means[t + 1]);
            covs[t] = &f.filtered_covs[t] + &j * (&covs[t + 1] - &f.predicted_covs[t + 1]) * j.transpose();
            cross[t + 1] = &covs[t + 1] * j.transpose();
        }
        Ok(Smoothed { means, covs, cross })
    }

    /// The exact posterior `p(z | x, u)` in structured form
    /// `p(z_1 | x) Π p(z_t | z_{t-1}, x)`.
    pub fn exact_posterior(&self, x: &[Vector], u: &[Vector]) -> Result<StructuredGaussian> {
        let sm = self.smooth(x, u)?;
        let mut steps = Vec::with_capacity(x.len() - 1);
        for t in 1..x.len() {
            let prev = cholesky(&sm.covs[t - 1], "smoothed covariance")?;
            let a = prev.solve(&sm.cross[t].transpose()).transpose();
            let b = &sm.means[t] - &a * &sm.means[t - 1];
            let s = &sm.covs[t] - &a * sm.cross[t].transpose();
            steps.push(ConditionalStep { a, b, s: (&s + s.transpose()) * 0.5 });
        }
        Ok(StructuredGaussian { m1: sm.means[0].clone(), p1: sm.covs[0].clone(), steps })
    }

    /// Variational bound with every expectation evaluated in closed form.
    pub fn analytic_bound(&self, x: &[Vector], u: &[Vector], q: &StructuredGaussian) -> Result<f64> {
        self.check_sequence(x, u)?;
        if q.len() != x.len() {
            return Err(Error::invalid(format!("posterior has {} steps, data has {}", q.len(), x.len())));
        }
        let marg = q.marginals();
        let r_chol = cholesky(&self.r, "R")?;
        let q_chol = cholesky(&self.q, "Q")?;
        let mut bound = 0.0;
        for (t, (m, p)) in marg.iter().enumerate() {
            let fpf = &self.f * p * self.f.transpose();
            bound += mvn_log_density(&x[t], &(&self.f * m + &self.offset), &self.r)? - 0.5 * r_chol.solve(&fpf).trace();
        }
        bound -= gaussian_kl(&q.m1, &q.p1, &self.m0, &self.p0)?;
        let s = self.latent_dim() as f64;
        for (t, step) in q.steps.iter().enumerate() {
            let (m_prev, p_prev) = &marg[t];
            let diff_map = &step.a - &self.g;
            let mean_diff = &diff_map * m_prev + &step.b - &self.b * &u[t];
            let quad = mean_diff.dot(&q_chol.solve(&mean_diff))
                + q_chol.solve(&(&diff_map * p_prev * diff_map.transpose())).trace();
            let s_chol = cholesky(&step.s, "conditional covariance")?;
            let kl = 0.5 * (q_chol.solve(&step.s).trace() - s + log_det(&q_chol) - log_det(&s_chol) + quad);
            bound -= kl;
        }
        Ok(bound)
    }
}

/// One factor `N(z_t; A z_{t-1} + b, S)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalStep {
    pub a: Mat,
    pub b: Vector,
    pub s: Mat,
}

/// Gaussian Markov chain `N(z_1; m1, P1) Π N(z_t; A_t z_{t-1} + b_t, S_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredGaussian {
    pub m1: Vector,
    pub p1: Mat,
    pub steps: Vec<ConditionalStep>,
}

impl StructuredGaussian {
    pub fn len(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.m1.len()
    }

    pub fn marginals(&self) -> Vec<(Vector, Mat)> {
        let mut out = vec![(self.m1.clone(), self.p1.clone())];
        for st in &self.steps {
            let (m, p) = out.last().expect("non-empty");
            let next = (&st.a * m + &st.b, &st.a * p * st.a.transpose() + &st.s);
            out.push(next);
        }
        out
    }

    /// Mean and covariance of the stacked vector `[z_1; ...; z_T]`.
    pub fn joint(&self) -> (Vector, Mat) {
        let (s, n) = (self.dim(), self.len());
        let mut mean = Vector::zeros(s * n);
        let mut cov = Mat::zeros(s * n, s * n);
        let marg = self.marginals();
        for (t, (m, p)) in marg.iter().enumerate() {
            mean.rows_mut(t * s, s).copy_from(m);
            cov.view_mut((t * s, t * s), (s, s)).copy_from(p);
            // Cov(z_t, z_j) = A_t Cov(z_{t-1}, z_j) for j < t.
            for j in 0..t {
                let prev = cov.view(((t - 1) * s, j * s), (s, s)).clone_owned();
                let block = &self.steps[t - 1].a * prev;
                cov.view_mut((t * s, j * s), (s, s)).copy_from(&block);
                cov.view_mut((j * s, t * s), (s, s)).copy_from(&block.transpose());
            }
        }
        (mean, cov)
    }

    /// Multiplies every covariance by `exp(delta)` (adds `delta` to each log-variance).
    pub fn widen(&self, delta: f64) -> Self {
        let k = delta.exp();
        StructuredGaussian {
            m1: self.m1.clone(),
            p1: &self.p1 * k,
            steps: self.steps.iter().map(|st| ConditionalStep { a: st.a.clone(), b: st.b.clone(), s: &st.s * k }).collect(),
        }
    }

    pub fn sampler(&self) -> Result<StructuredSampler<'_>> {
        let l1 = cholesky(&self.p1, "P1")?.l();
        let ls = self.steps.iter().map(|st| cholesky(&st.s, "S").map(|c| c.l())).collect::<Result<_>>()?;
        Ok(StructuredSampler { q: self, l1, ls })
    }

    pub fn log_density(&self, z: &[Vector]) -> Result<f64> {
        if z.len() != self.len() {
            return Err(Error::invalid(format!("{} points for a {}-step chain", z.len(), self.len())));
        }
        let mut total = mvn_log_density(&z[0], &self.m1, &self.p1)?;
        for (t, st) in self.steps.iter().enumerate() {
            total += mvn_log_density(&z[t + 1], &(&st.a * &z[t] + &st.b), &st.s)?;
        }
        Ok(total)
    }
}

/// Ancestral sampler with cached Cholesky factors.
pub struct StructuredSampler<'a> {
    q: &'a StructuredGaussian,
    l1: Mat,
    ls: Vec<Mat>,
}

impl StructuredSampler<'_> {
    pub fn sample(&self, rng: &mut Rng) -> Vec<Vector> {
        let s = self.q.dim();
        let mut z = vec![&self.q.m1 + &self.l1 * Vector::from_vec(rng.normals(s))];
        for (st, l) in self.q.steps.iter().zip(&self.ls) {
            let prev = z.last().expect("non-empty");
            z.push(&st.a * prev + &st.b + l * Vector::from_vec(rng.normals(s)));
        }
        z
    }
}

/// Dense joint Gaussian over `[z_1..z_T, x_1..x_T]`.
#[derive(Clone, Debug)]
pub struct JointGaussian {
    pub mean: Vector,
    pub cov: Mat,
    latent_dim: usize,
    obs_dim: usize,
    steps: usize,
}

/// `target | given ~ N(coef · given + intercept, cov)`.
#[derive(Clone, Debug)]
pub struct AffineConditional {
    pub coef: Mat,
    pub intercept: Vector,
    pub cov: Mat,
}

impl AffineConditional {
    pub fn mean_at(&self, given: &Vector) -> Vector {
        &self.coef * given + &self.intercept
    }
}

impl JointGaussian {
    /// Assembles the joint of the system. `lag2` adds a `z_{t-2} → z_t`
    /// edge `H z_{t-2}`, which breaks the Markov structure.
    pub fn build(sys: &LinearGaussianSystem, u: &[Vector], lag2: Option<&Mat>) -> Result<Self> {
        sys.validate()?;
        let (s, d, n) = (sys.latent_dim(), sys.obs_dim(), u.len() + 1);
        let noise_dim = (s + d) * n;
        let mut noise_cov = Mat::zeros(noise_dim, noise_dim);
        noise_cov.view_mut((0, 0), (s, s)).copy_from(&sys.p0);
        for t in 1..n {
            noise_cov.view_mut((t * s, t * s), (s, s)).copy_from(&sys.q);
        }
        for t in 0..n {
            let o = s * n + t * d;
            noise_cov.view_mut((o, o), (d, d)).copy_from(&sys.r);
        }

        // z_t = L_t ε + k_t
        let mut loads: Vec<Mat> = Vec::with_capacity(n);
        let mut shifts: Vec<Vector> = Vec::with_capacity(n);
        for t in 0..n {
            let mut l = Mat::zeros(s, noise_dim);
            l.view_mut((0, t * s), (s, s)).copy_from(&Mat::identity(s, s));
            let mut k = if t == 0 { sys.m0.clone() } else { &sys.b * &u[t - 1] };
            if t > 0 {
                l += &sys.g * &loads[t - 1];
                k += &sys.g * &shifts[t - 1];
            }
            if let (Some(h), true) = (lag2, t > 1) {
                l += h * &loads[t - 2];
                k += h * &shifts[t - 2];
            }
            loads.push(l);
            shifts.push(k);
        }

        let total = (s + d) * n;
        let mut map = Mat::zeros(total, noise_dim);
        let mut mean = Vector::zeros(total);
        for t in 0..n {
            map.view_mut((t * s, 0), (s, noise_dim)).copy_from(&loads[t]);
            mean.rows_mut(t * s, s).copy_from(&shifts[t]);
            let row = s * n + t * d;
            let mut xl = &sys.f * &loads[t];
            for k in 0..d {
                xl[(k, s * n + t * d + k)] += 1.0;
            }
            map.view_mut((row, 0), (d, noise_dim)).copy_from(&xl);
            mean.rows_mut(row, d).copy_from(&(&sys.f * &shifts[t] + &sys.offset));
        }
        let cov = &map * noise_cov * map.transpose();
        Ok(JointGaussian { mean, cov, latent_dim: s, obs_dim: d, steps: n })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Indices of `z_t` (0-based step).
    pub fn z_indices(&self, t: usize) -> Vec<usize> {
        (t * self.latent_dim..(t + 1) * self.latent_dim).collect()
    }

    /// Indices of `x_t` (0-based step).
    pub fn x_indices(&self, t: usize) -> Vec<usize> {
        let o = self.latent_dim * self.steps + t * self.obs_dim;
        (o..o + self.obs_dim).collect()
    }

    fn sub(&self, rows: &[usize], cols: &[usize]) -> Mat {
        Mat::from_fn(rows.len(), cols.len(), |i, j| self.cov[(rows[i], cols[j])])
    }

    fn sub_mean(&self, idx: &[usize]) -> Vector {
        Vector::from_fn(idx.len(), |i, _| self.mean[idx[i]])
    }

    /// The affine conditional of `target` given `given`.
    pub fn conditional(&self, target: &[usize], given: &[usize]) -> Result<AffineConditional> {
        let syy = self.sub(given, given);
        let chol = cholesky(&syy, "conditioning covariance")?;
        let szy = self.sub(target, given);
        let coef = chol.solve(&szy.transpose()).transpose();
        let intercept = self.sub_mean(target) - &coef * self.sub_mean(given);
        let cov = self.sub(target, target) - &coef * szy.transpose();
        Ok(AffineConditional { coef, intercept, cov: (&cov + cov.transpose()) * 0.5 })
    }

    /// Mean and covariance of `target` after observing `given = values`.
    pub fn condition(&self, target: &[usize], given: &[usize], values: &Vector) -> Result<(Vector, Mat)> {
        let c = self.conditional(target, given)?;
        Ok((c.mean_at(values), c.cov))
    }
}

/// Joint Gaussian prior of a random walk in natural parameters.
#[derive(Clone, Debug)]
pub struct JointPrior {
    pub mean: Vector,
    pub precision: Mat,
    pub log_det_precision: f64,
}

/// Prior over `[z_1..z_T]` for `z_1 ~ N(0, I)`,
/// `z_t ~ N(z_{t-1} + u_{t-1}, (dt_{t-1}/Δ) I)`. The precision is block
/// tridiagonal; with unit gaps its diagonal is `[(1+Δ)I, 2ΔI, ..., ΔI]` and
/// its off-diagonal blocks are `-ΔI`.
pub fn joint_prior_random_walk(u: &[Vector], dt: &[f64], delta: f64, dim: usize) -> Result<JointPrior> {
    if u.len() != dt.len() {
        return Err(Error::invalid(format!("{} actions but {} time gaps", u.len(), dt.len())));
    }
    if !(delta > 0.0) || dt.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("random-walk precision and time gaps must be positive"));
    }
    if u.iter().any(|v| v.len() != dim) {
        return Err(Error::invalid("random-walk actions must have the latent dimension"));
    }
    let n = u.len() + 1;
    let lam: Vec<f64> = dt.iter().map(|g| delta / g).collect();
    let mut mean = Vector::zeros(dim * n);
    for t in 1..n {
        let prev = mean.rows((t - 1) * dim, dim).clone_owned();
        mean.rows_mut(t * dim, dim).copy_from(&(prev + &u[t - 1]));
    }
    let mut precision = Mat::zeros(dim * n, dim * n);
    for t in 0..n {
        let mut diag = if t == 0 { 1.0 } else { lam[t - 1] };
        if t + 1 < n {
            diag += lam[t];
        }
        for k in 0..dim {
            precision[(t * dim + k, t * dim + k)] = diag;
            if t + 1 < n {
                precision[(t * dim + k, (t + 1) * dim + k)] = -lam[t];
                precision[((t + 1) * dim + k, t * dim + k)] = -lam[t];
            }
        }
    }
    let log_det_precision = dim as f64 * lam.iter().map(|l| l.ln()).sum::<f64>();
    Ok(JointPrior { mean, precision, log_det_precision })
}

/// Stacks per-step vectors into one column.
pub fn stack(vs: &[Vector]) -> Vector {
    Vector::from_iterator(vs.iter().map(|v| v.len()).sum(), vs.iter().flat_map(|v| v.iter().copied()))
}
