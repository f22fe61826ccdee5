use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Weibull};
use windspde::inference::{explore, Component, ComponentKind, ExploreOptions, LatentGaussianModel, Likelihood, Strategy};
use windspde::priors::{pc_prior_logpdf, weibull_logpdf, PcPriorSpec, PrecisionPrior};
use windspde::sparse::CsrMatrix;
use windspde_oracles::quad;

fn shape_only(n: usize, alpha: f64, seed: u64) -> (LatentGaussianModel, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Weibull::new(1.0, alpha).unwrap();
    let y: Vec<f64> = (0..n).map(|_| w.sample(&mut rng)).collect();
    let model = LatentGaussianModel::new(vec![], Likelihood::Weibull { prior: PcPriorSpec::default() }, y.clone(), CsrMatrix::zeros(n, 0)).unwrap();
    (model, y)
}

#[test]
fn shape_posterior_matches_quadrature() {
    let (model, y) = shape_only(500, 1.5, 11);
    let res = explore(&model, &ExploreOptions::default()).unwrap();
    let wsum: f64 = res.design.iter().map(|d| d.weight).sum();
    assert!((wsum - 1.0).abs() < 1e-12);

    let spec = PcPriorSpec::default();
    let log_post = |t: f64| {
        let a = t.exp();
        y.iter().map(|&v| weibull_logpdf(v, a, 1.0).unwrap()).sum::<f64>() + pc_prior_logpdf(a, &spec) + t
    };
    let m = &res.marginals[0];
    let peak = m.internal.iter().map(|&t| log_post(t)).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = (m.internal[0] - 1.0, m.internal[m.internal.len() - 1] + 1.0);
    let z = quad::integrate(|t| (log_post(t) - peak).exp(), lo, hi, 1e-12);
    let diff: Vec<f64> = m.internal.iter().zip(&m.internal_density).map(|(&t, p)| (p - (log_post(t) - peak).exp() / z).abs()).collect();
    let l1 = quad::trapezoid(&m.internal, &diff);
    assert!(l1 < 0.01, "L1 = {l1}");
    let mass = quad::trapezoid(&m.internal, &m.internal_density);
    assert!((mass - 1.0).abs() < 1e-3);
    assert!((m.natural_mean - 1.5).abs() < 4.0 * m.natural_sd);
}

#[test]
fn fixed_hyper_gaussian_pipeline_is_exact() {
    let n = 6;
    let y = vec![0.3, -0.2, 1.1, 0.4, -0.6, 0.0];
    let trip: Vec<(usize, usize, f64)> = (0..n).flat_map(|i| [(i, 0, 1.0), (i, 1 + i % 3, 1.0)]).collect();
    let m = CsrMatrix::from_triplets(n, 4, &trip);
    let comps = vec![
        Component::new("b", 1, ComponentKind::Fixed { precision: 1.0 }),
        Component::new("u", 3, ComponentKind::Iid { prior: PrecisionPrior::default() }).constrained(),
    ];
    let model = LatentGaussianModel::new(comps, Likelihood::Gaussian { prior: PrecisionPrior::default() }, y.clone(), m.clone())
        .unwrap()
        .fix("lik.log_precision", 0.5)
        .unwrap()
        .fix("u.log_precision", 1.0)
        .unwrap();
    let res = explore(&model, &ExploreOptions::default()).unwrap();
    assert_eq!(res.design.len(), 1);

    // Exact conditioning in dense form.
    use nalgebra::{DMatrix, DVector};
    let mut s = DMatrix::<f64>::zeros(4, 4);
    s[(0, 0)] = 1.0;
    for i in 1..4 {
        s[(i, i)] = (-1.0f64).exp();
    }
    let a = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 1.0, 1.0]);
    let sa = &s * a.transpose();
    let s = &s - &sa * sa.transpose() / (&a * &sa)[(0, 0)];
    let md = m.to_dense();
    let cy = &md * &s * md.transpose() + DMatrix::identity(n, n) * (-0.5f64).exp();
    let k = &s * md.transpose() * cy.clone().try_inverse().unwrap();
    let mean = &k * DVector::from_vec(y);
    let cov = &s - &k * &md * &s;
    for i in 0..4 {
        assert!((res.latent_mean[i] - mean[i]).abs() < 1e-8);
        assert!((res.latent_sd[i] - cov[(i, i)].sqrt()).abs() < 1e-8);
    }
}

#[test]
fn grid_rejects_many_hyperparameters() {
    let (model, _) = shape_only(50, 1.2, 1);
    let model2 = LatentGaussianModel::new(
        vec![
            Component::new("a", 3, ComponentKind::Iid { prior: PrecisionPrior::default() }),
            Component::new("b", 3, ComponentKind::Iid { prior: PrecisionPrior::default() }),
        ],
        Likelihood::Weibull { prior: PcPriorSpec::default() },
        model.y.clone(),
        CsrMatrix::from_triplets(50, 6, &(0..50).flat_map(|i| [(i, i % 3, 1.0), (i, 3 + i % 3, 1.0)]).collect::<Vec<_>>()),
    )
    .unwrap();
    let opts = ExploreOptions { strategy: Strategy::Grid, ..Default::default() };
    assert!(matches!(explore(&model2, &opts), Err(windspde::Error::Config(_))));
}

#[test]
fn exploration_is_deterministic() {
    let (model, _) = shape_only(200, 2.0, 5);
    let a = explore(&model, &ExploreOptions::default()).unwrap();
    let b = explore(&model, &ExploreOptions::default()).unwrap();
    assert_eq!(a, b);
}
