use pann_core::datagen::{
    build_dataset, fixture_model, genogden_fixture, ogden_fixture, parse_experimental, sample_genogden_params,
    sample_ogden_params, Dataset, DefGradSampler, SampleConfig, StressMeasure,
};
use pann_core::kinematics::{admissible, discriminant, invariants_u, spectral, stretch_invariants, DefGrad};
use pann_core::linalg;
use pann_core::loading::{
    compressible_mode_stress, incompressible_mode_stress, mode_defgrad, mode_stress, solve_transverse_from, Mode,
    ModeSpec,
};
use pann_core::models::{EnergyModel, ModelKind};
use pann_core::training::{data_loss, r_squared, train, TrainConfig, TrainData};
use proptest::prelude::*;

/// Plain bisection on the transverse stress, as an independent oracle.
fn bisect(model: &EnergyModel, spec: &ModeSpec) -> f64 {
    let l = spec.lambda;
    let r = |t: f64| match spec.mode {
        Mode::UT => model.principal_stress([l, t, t]).unwrap()[1],
        Mode::ET => model.principal_stress([l, l, t]).unwrap()[2],
        Mode::PS => model.principal_stress([l, 1.0, t]).unwrap()[2],
    };
    let (mut lo, mut hi) = (0.05, 20.0);
    assert!(r(lo) < 0.0 && r(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if r(mid) > 0.0 {
            hi = mid
        } else {
            lo = mid
        }
    }
    0.5 * (lo + hi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn modes_are_isochoric(mode in prop_oneof![Just(Mode::UT), Just(Mode::ET), Just(Mode::PS)], l in 0.3f64..4.0) {
        let f = mode_defgrad(&ModeSpec::new(mode, l).unwrap());
        prop_assert!((f.det() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_decomposition_reconstructs_b(e in prop::array::uniform9(-0.4f64..0.4)) {
        let mut m = linalg::IDENTITY;
        for i in 0..3 { for j in 0..3 { m[i][j] += e[3 * i + j]; } }
        prop_assume!(linalg::det(&m) > 0.1);
        let f = DefGrad::new(m).unwrap();
        let s = spectral(&f).unwrap();
        let b = f.left_cauchy_green();
        prop_assert!(linalg::frobenius(&linalg::sub(&s.reconstruct_left_cauchy_green(), &b)) < 1e-10 * (1.0 + linalg::frobenius(&b)));
        prop_assert!(s.stretches[0] >= s.stretches[1] && s.stretches[1] >= s.stretches[2]);
        let (i1, i2, i3) = invariants_u(&s);
        prop_assert!(discriminant(i1, i2, i3) >= -1e-9 * (1.0 + i1.powi(6)));
    }

    #[test]
    fn discriminant_factorizes(a in 0.1f64..4.0, b in 0.1f64..4.0, c in 0.1f64..4.0) {
        let (i1, i2, i3) = stretch_invariants(&[a, b, c]);
        let expect = ((a - b) * (b - c) * (c - a)).powi(2);
        prop_assert!((discriminant(i1, i2, i3) - expect).abs() <= 1e-9 * (1.0 + i1.powi(6)));
    }

    #[test]
    fn newton_agrees_with_bisection(fixture in 1usize..=10, mode in prop_oneof![Just(Mode::UT), Just(Mode::ET), Just(Mode::PS)], l in 0.6f64..1.8) {
        let m = EnergyModel::ogden_compressible(ogden_fixture(fixture).unwrap()).unwrap();
        let spec = ModeSpec::new(mode, l).unwrap();
        let r = compressible_mode_stress(&m, &spec).unwrap();
        let t = bisect(&m, &spec);
        let k = if mode == Mode::UT { 1 } else { 2 };
        prop_assert!((r.stretches[k] - t).abs() < 1e-8, "{} vs {}", r.stretches[k], t);
        prop_assert!(r.stresses[k].abs() < 1e-8 * (1.0 + r.stresses[0].abs()));
    }

    #[test]
    fn transverse_solve_ignores_the_seed(guess in 0.05f64..20.0, l in 0.7f64..1.5) {
        let m = EnergyModel::gen_ogden(genogden_fixture(3).unwrap()).unwrap();
        let spec = ModeSpec::new(Mode::UT, l).unwrap();
        let a = solve_transverse_from(&m, &spec, guess).unwrap();
        let b = compressible_mode_stress(&m, &spec).unwrap();
        prop_assert!((a.stretches[1] - b.stretches[1]).abs() < 1e-9);
        prop_assert!((a.stresses[0] - b.stresses[0]).abs() < 1e-8 * (1.0 + b.stresses[0].abs()));
    }

    #[test]
    fn sampled_parameters_are_valid(seed in any::<u64>()) {
        let o = sample_ogden_params(seed);
        prop_assert!(EnergyModel::ogden_compressible(o.clone()).is_ok());
        prop_assert!(o.mu.iter().zip(&o.alpha).all(|(m, a)| m * a > 0.0 && a.abs() >= 1.0));
        prop_assert!((1.0..=2.0).contains(&o.beta));
        let g = sample_genogden_params(seed);
        prop_assert!(g.c_i0.iter().chain(&g.c_0j).all(|c| *c >= 0.1 && *c <= 3.0));
        prop_assert!((2..=3).contains(&g.c_i0.len()) && (2..=3).contains(&g.c_0j.len()));
        prop_assert!(EnergyModel::gen_ogden(g).is_ok());
    }
}

#[test]
fn one_term_ogden_matches_closed_forms() {
    let (mu, alpha) = (0.7, 2.6);
    let m = EnergyModel::ogden_incompressible(vec![mu], vec![alpha]).unwrap();
    let c = 2.0 * mu / alpha;
    for l in [0.5, 0.8, 1.0, 1.3, 2.0, 3.5] {
        let ut = incompressible_mode_stress(&m, &ModeSpec::new(Mode::UT, l).unwrap()).unwrap();
        let ut_exact = c * (l.powf(alpha) - l.powf(-alpha / 2.0));
        assert!((ut[0] - ut_exact).abs() <= 1e-10 * (1.0 + ut_exact.abs()));
        let et = incompressible_mode_stress(&m, &ModeSpec::new(Mode::ET, l).unwrap()).unwrap();
        let et_exact = c * (l.powf(alpha) - l.powf(-2.0 * alpha));
        assert!((et[0] - et_exact).abs() <= 1e-10 * (1.0 + et_exact.abs()));
        let ps = incompressible_mode_stress(&m, &ModeSpec::new(Mode::PS, l).unwrap()).unwrap();
        let ps_exact = c * (l.powf(alpha) - l.powf(-alpha));
        assert!((ps[0] - ps_exact).abs() <= 1e-10 * (1.0 + ps_exact.abs()));
    }
}

#[test]
fn pure_shear_at_unit_stretch_is_stress_free() {
    for i in 1..=10 {
        for m in [EnergyModel::ogden_compressible(ogden_fixture(i).unwrap()).unwrap(), EnergyModel::gen_ogden(genogden_fixture(i).unwrap()).unwrap()] {
            let r = mode_stress(&m, &ModeSpec::new(Mode::PS, 1.0).unwrap()).unwrap();
            assert!((r.stretches[2] - 1.0).abs() < 1e-9);
            assert!(r.stresses.iter().all(|s| s.abs() < 1e-9));
        }
    }
}

#[test]
fn sampler_is_deterministic_and_admissible() {
    let a = build_dataset(&SampleConfig { delta: 0.2, n: 50, seed: 11 }, &fixture_model("ogden-fixture:2").unwrap()).unwrap();
    let b = build_dataset(&SampleConfig { delta: 0.2, n: 50, seed: 11 }, &fixture_model("ogden-fixture:2").unwrap()).unwrap();
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    let mut s = DefGradSampler::new(0.3, 4).unwrap();
    for _ in 0..10_000 {
        let f = s.sample().unwrap();
        assert!(f.det() > 0.0);
        let (i1, i2, i3) = invariants_u(&spectral(&f).unwrap());
        assert!(admissible(i1, i2, i3));
    }
    assert!(s.acceptance_rate() > 0.5);
}

#[test]
fn dataset_round_trips_through_jsonl() {
    let d = build_dataset(&SampleConfig { delta: 0.3, n: 20, seed: 3 }, &fixture_model("genogden-fixture:4").unwrap()).unwrap();
    let back = Dataset::read_jsonl(d.to_jsonl().as_bytes()).unwrap();
    assert_eq!(back, d);
    assert_eq!(back.fingerprint(), d.fingerprint());
}

#[test]
fn near_identity_sample_is_nearly_stress_free() {
    let d = build_dataset(&SampleConfig { delta: 1e-9, n: 1, seed: 0 }, &fixture_model("ogden-fixture:1").unwrap()).unwrap();
    assert!(d.records[0].sigma.iter().all(|s| s.abs() < 1e-6));
}

#[test]
fn ground_truth_reproduces_experimental_curves() {
    let truth = EnergyModel::ogden_incompressible(vec![0.63, 0.0012, -0.01], vec![1.3, 5.0, -2.0]).unwrap();
    let mut csv = String::from("mode,stretch,stress,measure\n");
    for mode in Mode::ALL {
        for i in 0..12 {
            let l = 1.05 + 0.4 * i as f64;
            let s = incompressible_mode_stress(&truth, &ModeSpec::new(mode, l).unwrap()).unwrap()[0];
            csv.push_str(&format!("{mode},{l},{:?},nominal\n", s / l));
        }
    }
    let pts = parse_experimental(csv.as_bytes(), None).unwrap();
    assert_eq!(pts.len(), 36);
    assert!(pts.iter().all(|p| p.measure == StressMeasure::Nominal));
    assert!(data_loss(&truth, &TrainData::from_experimental(&pts)).unwrap() < 1e-24);
    for (_, r2) in r_squared(&truth, &pts).unwrap() {
        assert!((r2 - 1.0).abs() < 1e-12);
    }
}

#[test]
fn short_training_run_reduces_the_loss_reproducibly() {
    let truth = fixture_model("ogden-fixture:5").unwrap();
    let tr = TrainData::from_dataset(&build_dataset(&SampleConfig { delta: 0.2, n: 40, seed: 0 }, &truth).unwrap()).unwrap();
    let cfg = TrainConfig { epochs: 300, log_every: 50, seed: 2, ..TrainConfig::default() };
    let (m1, r1) = train(&cfg, &tr, None).unwrap();
    let (m2, r2) = train(&cfg, &tr, None).unwrap();
    assert_eq!(m1.to_json(), m2.to_json());
    assert_eq!(r1.to_json(), r2.to_json());
    assert!(r1.final_train_mse < r1.history[0].train_loss);
    assert_eq!(r1.history.last().unwrap().epoch, 300);
    assert!(r1.history.iter().all(|p| p.train_loss.is_finite()));
    // the trained model is stress free in the reference configuration
    let s = m1.cauchy_stress(&DefGrad::identity()).unwrap();
    assert!(linalg::frobenius(&s) < 1e-10);
    assert_eq!(m1.kind(), ModelKind::LambdaPann);
}

#[test]
fn gated_training_prunes_parameters() {
    let truth = EnergyModel::ogden_incompressible(vec![0.63, 0.0012, -0.01], vec![1.3, 5.0, -2.0]).unwrap();
    let mut csv = String::from("mode,stretch,stress,measure\n");
    for i in 0..15 {
        let l = 1.0 + 0.3 * i as f64;
        let s = incompressible_mode_stress(&truth, &ModeSpec::new(Mode::UT, l).unwrap()).unwrap()[0];
        csv.push_str(&format!("UT,{l},{s:?},cauchy\n"));
    }
    let tr = TrainData::from_experimental(&parse_experimental(csv.as_bytes(), None).unwrap());
    let cfg = TrainConfig { epochs: 400, l0_factor: 1e-2, lr: 1e-2, log_every: 100, ..TrainConfig::default() };
    let (_, r) = train(&cfg, &tr, None).unwrap();
    assert!(r.final_active_params <= r.initial_active_params);
    assert!(r.history.iter().all(|p| p.train_loss.is_finite()));
}
