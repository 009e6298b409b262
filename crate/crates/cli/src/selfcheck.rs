//! Gradient, KL and factorization checks on random instances.

use anyhow::Result;
use dkf::data::SequenceDataset;
use dkf::inference::check_factorization;
use dkf::linear::{gaussian_kl_precision, joint_prior_random_walk, LinearGaussianSystem, Vector};
use dkf::model::{EmissionFamily, Model, ModelConfig, TransitionKind, Variant};
use dkf::rng::{Purpose, Rng, StreamKey};
use dkf::training::{gradient_check, random_walk_kl};

use crate::{SelfcheckArgs, UsageError};

struct Check {
    name: &'static str,
    cases: usize,
    deviation: f64,
    tol: f64,
}

impl Check {
    fn passed(&self) -> bool {
        self.deviation.is_finite() && self.deviation < self.tol
    }
}

fn small_model(variant: Variant, family: EmissionFamily, transition: TransitionKind, rng: &mut Rng) -> Result<Model> {
    let (s, d) = (1 + rng.below(3), 1 + rng.below(4));
    let mut cfg = ModelConfig::new(s, d, 1);
    cfg.family = family;
    cfg.transition = transition;
    cfg.hidden = vec![4];
    cfg.recognition.variant = variant;
    cfg.recognition.hidden = vec![4];
    cfg.recognition.feature_dim = 3;
    cfg.recognition.rnn_hidden = 3;
    cfg.recognition.combiner_hidden = vec![4];
    Ok(Model::new(cfg, rng.next_u64())?)
}

fn gradients(args: &SelfcheckArgs, rng: &mut Rng) -> Result<Check> {
    let mut check = Check { name: "gradients", cases: 0, deviation: 0.0, tol: args.grad_tol };
    for variant in Variant::ALL {
        for family in [EmissionFamily::Bernoulli, EmissionFamily::Gaussian] {
            for transition in [TransitionKind::Linear, TransitionKind::Nonlinear] {
                for _ in 0..args.instances {
                    let mut model = small_model(variant, family, transition, rng)?;
                    let (d, steps, n) = (model.obs_dim(), 1 + rng.below(4), 2);
                    let x = (0..n * steps * d)
                        .map(|_| match family {
                            EmissionFamily::Bernoulli => f64::from(u8::from(rng.bernoulli(0.5))),
                            EmissionFamily::Gaussian => rng.normal(),
                        })
                        .collect();
                    let u = (0..n * (steps - 1)).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                    let data = SequenceDataset::dense(steps, d, 1, x, u)?;
                    let key = StreamKey::new(rng.next_u64(), Purpose::Posterior);
                    let dev = gradient_check(&mut model, &data.batch(&[0, 1]), key, 2, 1e-5, rng)?;
                    check.deviation = check.deviation.max(dev);
                    check.cases += 1;
                }
            }
        }
    }
    Ok(check)
}

fn random_problem(
    rng: &mut Rng,
    max_latent: usize,
    max_steps: usize,
) -> Result<(LinearGaussianSystem, Vec<Vector>, Vec<Vector>)> {
    let (s, d, steps) = (2 + rng.below(max_latent - 1), 2 + rng.below(3), 4 + rng.below(max_steps - 3));
    let sys = LinearGaussianSystem::random(s, d, 1, rng);
    let u: Vec<Vector> = (1..steps).map(|_| Vector::from_vec(rng.normals(1))).collect();
    let (_, x) = sys.sample(&u, rng)?;
    Ok((sys, x, u))
}

fn kl_oracle(args: &SelfcheckArgs, rng: &mut Rng) -> Result<Check> {
    let mut check = Check { name: "kl-oracle", cases: 0, deviation: 0.0, tol: args.tol };
    for delta in [0.5, 1.0, 2.0] {
        for _ in 0..args.instances {
            let (sys, x, u) = random_problem(rng, 4, 6)?;
            let s = sys.latent_dim();
            let q = sys.exact_posterior(&x, &u)?.widen(rng.uniform_in(-0.2, 0.5));
            let shifts: Vec<Vector> = u.iter().map(|_| Vector::from_vec(rng.normals(s))).collect();
            let dt: Vec<f64> = u.iter().map(|_| rng.uniform_in(0.5, 2.0)).collect();
            let prior = joint_prior_random_walk(&shifts, &dt, delta, s)?;
            let (mq, cq) = q.joint();
            let joint = gaussian_kl_precision(&mq, &cq, &prior.mean, &prior.precision)?;
            let factored = random_walk_kl(&q, &shifts, &dt, delta)?;
            check.deviation = check.deviation.max((joint - factored).abs());
            check.cases += 1;
        }
    }
    Ok(check)
}

fn factorization(args: &SelfcheckArgs, rng: &mut Rng) -> Result<Check> {
    let mut check = Check { name: "factorization", cases: 0, deviation: 0.0, tol: args.tol };
    for _ in 0..8 * args.instances {
        let (sys, x, u) = random_problem(rng, 7, 9)?;
        let report = check_factorization(&sys, &x, &u, args.tol, None)?;
        check.deviation = check.deviation.max(report.max_deviation);
        check.cases += 1;
    }
    Ok(check)
}

/// Runs every check and prints one line each; `Ok(false)` when any fails.
pub fn run(args: &SelfcheckArgs) -> Result<bool> {
    if args.instances == 0 || !(args.tol > 0.0) || !(args.grad_tol > 0.0) {
        return Err(UsageError("--instances, --tol and --grad-tol must be positive".into()).into());
    }
    let mut rng = Rng::from_seed(args.seed);
    let checks = [gradients(args, &mut rng)?, kl_oracle(args, &mut rng)?, factorization(args, &mut rng)?];
    for c in &checks {
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        println!("{verdict}  {:<14} {:>4} cases  max deviation {:.3e}  tol {:.1e}", c.name, c.cases, c.deviation, c.tol);
    }
    Ok(checks.iter().all(Check::passed))
}
