//! Statistical relations between the bound, importance sampling and the
//! exact likelihood on linear-Gaussian models with learned recognition nets.

use dkf::data::cohort::{gen_linear_cohort, CohortPolicy};
use dkf::inference::is_loglik;
use dkf::linear::LinearGaussianSystem;
use dkf::model::{Model, ModelConfig, Variant};
use dkf::rng::Rng;
use dkf::training::evaluate_rows;

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn linear_model(sys: &LinearGaussianSystem, variant: Variant, seed: u64) -> Model {
    let mut cfg = ModelConfig::linear_gaussian(sys.latent_dim(), sys.obs_dim(), sys.action_dim());
    cfg.recognition.variant = variant;
    cfg.recognition.hidden = vec![8];
    cfg.recognition.feature_dim = 6;
    cfg.recognition.rnn_hidden = 4;
    cfg.recognition.combiner_hidden = vec![6];
    let mut model = Model::new(cfg, seed).unwrap();
    model.load_linear_system(sys).unwrap();
    model
}

#[test]
fn bound_never_exceeds_the_exact_log_likelihood() {
    let mut rng = Rng::from_seed(12);
    for pair in 0..100u64 {
        let sys = LinearGaussianSystem::random(2, 2, 1, &mut rng);
        let data = gen_linear_cohort(&sys, 1, 4, &CohortPolicy::Uniform { scale: 1.0 }, pair).unwrap();
        let (x, u) = data.sequence(0);
        let exact = sys.log_likelihood(&x, &u).unwrap();
        let model = linear_model(&sys, Variant::ALL[pair as usize % 4], pair);
        let draws: Vec<f64> = (0..40).map(|s| evaluate_rows(&model, &data, s, 1, 1).unwrap().1[0]).collect();
        let (m, se) = mean_and_stderr(&draws);
        assert!(m <= exact + 3.0 * se, "pair {pair}: bound {m} ± {se} above exact {exact}");
    }
}

#[test]
fn importance_sampling_dominates_the_bound_and_improves_with_samples() {
    let mut rng = Rng::from_seed(21);
    let sys = LinearGaussianSystem::random(2, 2, 1, &mut rng);
    let data = gen_linear_cohort(&sys, 1, 4, &CohortPolicy::Uniform { scale: 1.0 }, 3).unwrap();
    let (x, u) = data.sequence(0);
    let exact = sys.log_likelihood(&x, &u).unwrap();
    let model = linear_model(&sys, Variant::QBrnn, 4);

    let seeds = 0..50u64;
    let bound: Vec<f64> = seeds.clone().map(|s| evaluate_rows(&model, &data, s, 1, 1).unwrap().1[0]).collect();
    let s1: Vec<f64> = seeds.clone().map(|s| is_loglik(&model, &data, 1, s).unwrap()[0]).collect();
    let s100: Vec<f64> = seeds.map(|s| is_loglik(&model, &data, 100, s).unwrap()[0]).collect();
    let ((mb, eb), (m1, e1), (m100, e100)) = (mean_and_stderr(&bound), mean_and_stderr(&s1), mean_and_stderr(&s100));

    assert!(m100 >= m1 - 3.0 * (e1 * e1 + e100 * e100).sqrt(), "S=100 {m100} ± {e100} vs S=1 {m1} ± {e1}");
    assert!(m100 >= mb - 3.0 * (eb * eb + e100 * e100).sqrt(), "S=100 {m100} vs bound {mb}");
    // The large-sample estimate approaches the exact value from below.
    assert!(m100 <= exact + 3.0 * e100, "S=100 {m100} ± {e100} above exact {exact}");
}
