use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use windspde::ingest::{StationTable, WindRecord};
use windspde::latent::{ar1_precision, build_design, build_model, record_locations, rw2_precision, LatentState, ModelSpec, PriorSpec, Switches};
use windspde::mesh::{build_mesh, MeshSpec};
use windspde::simulate::{simulate_design, SimulationSpec};
use windspde::Error;
use windspde_oracles::dense;

fn fixture(n: usize, switches: Switches) -> (Vec<WindRecord>, ModelSpec) {
    let records = simulate_design(&SimulationSpec { n, ..Default::default() }, &StationTable::wasa(), 9).unwrap();
    let mesh = build_mesh(&record_locations(&records), &MeshSpec::new(1.0, 1.0, 0.3, 0.3, 0.95)).unwrap();
    let spec = ModelSpec::from_records(&records, Arc::new(mesh), PriorSpec::default(), switches).unwrap();
    (records, spec)
}

fn random_state(spec: &ModelSpec, seed: u64) -> LatentState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..spec.latent_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    LatentState::from_vec(spec, &v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn assembled_predictor_matches_per_record_eta(seed in 0u64..1000) {
        let (records, spec) = fixture(150, Switches::default());
        let design = build_design(&records, &spec).unwrap();
        let state = random_state(&spec, seed);
        let via_matrix = design.predictor(&spec).mul_vec(&state.to_vec());
        let direct = design.eta(&spec, &state);
        for (a, b) in via_matrix.iter().zip(&direct) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eta_is_linear_in_the_latent_state(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (records, spec) = fixture(80, Switches::default());
        let design = build_design(&records, &spec).unwrap();
        let s1 = random_state(&spec, seed).to_vec();
        let s2 = random_state(&spec, seed + 7).to_vec();
        let mix: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| a * x + b * y).collect();
        let e1 = design.eta(&spec, &LatentState::from_vec(&spec, &s1).unwrap());
        let e2 = design.eta(&spec, &LatentState::from_vec(&spec, &s2).unwrap());
        let em = design.eta(&spec, &LatentState::from_vec(&spec, &mix).unwrap());
        for i in 0..em.len() {
            prop_assert!((em[i] - (a * e1[i] + b * e2[i])).abs() < 1e-11);
        }
    }

    #[test]
    fn ar1_precision_inverts_to_the_ar1_covariance(n in 1usize..9, rho in -0.95f64..0.95, prec in 0.1f64..10.0) {
        let q = ar1_precision(n, rho, prec).unwrap().to_dense();
        let cov = dense::inverse(&q);
        for i in 0..n {
            for j in 0..n {
                let expect = rho.powi((i as i32 - j as i32).abs()) / prec;
                prop_assert!((cov[(i, j)] - expect).abs() < 1e-9 * (1.0 + expect.abs()));
            }
        }
    }
}

#[test]
fn easterly_record_row() {
    let (mut records, spec) = fixture(40, Switches::default());
    let d = 90.0f64.to_radians();
    records[0].wind_direct_avg = 90.0;
    records[0].cos_direct = d.cos();
    records[0].sin_direct = d.sin();
    let design = build_design(&records, &spec).unwrap();
    let x = design.x[0];
    assert_eq!(x[0], 1.0);
    assert!(x[1].abs() < 1e-15);
    assert_eq!(x[2], 1.0);
}

#[test]
fn rw2_null_space_is_constant_and_linear() {
    let q = rw2_precision(6, 2.5).unwrap();
    let ones = vec![1.0; 6];
    let line: Vec<f64> = (0..6).map(|i| i as f64).collect();
    assert!(q.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
    assert!(q.mul_vec(&line).iter().all(|v| v.abs() < 1e-12));
    assert!(rw2_precision(2, 1.0).is_err());
}

#[test]
fn unknown_altitude_and_month_are_data_errors() {
    let (mut records, spec) = fixture(40, Switches::default());
    records[3].altitude = 33.0;
    match build_design(&records, &spec) {
        Err(Error::Data(m)) => assert!(m.contains("33")),
        other => panic!("expected a data error, got {other:?}"),
    }
    let (mut records, spec) = fixture(40, Switches::default());
    records[1].f_month = 13;
    assert!(matches!(build_design(&records, &spec), Err(Error::Data(_))));
}

#[test]
fn switches_remove_components() {
    let (records, full) = fixture(60, Switches::default());
    let (_, bare) = fixture(60, Switches { spline: false, f_month: false, c_month: false, spatial: false });
    assert_eq!(bare.latent_len(), 3);
    let m_full = build_model(&records, &full).unwrap();
    let m_bare = build_model(&records, &bare).unwrap();
    assert_eq!(m_full.n_latent(), full.latent_len());
    assert_eq!(m_bare.n_latent(), 3);
    assert_eq!(m_bare.all_hypers().len(), 1);
    assert_eq!(m_full.all_hypers().len(), 8);
}

#[test]
fn empty_records_give_an_empty_design() {
    let (_, spec) = fixture(40, Switches::default());
    let design = build_design(&[], &spec).unwrap();
    assert!(design.x.is_empty());
    assert_eq!(design.predictor(&spec).nrows(), 0);
}
