//! End-to-end acceptance run: prints one `PASS`/`FAIL`/`SKIPPED` line per
//! criterion. Outcomes of the empirical training comparisons are reported,
//! not enforced, unless `PANN_ACCEPTANCE_STRICT=1` is set; crashes and
//! errors always fail the target.
//!
//! `PANN_TRELOAR_CSV=<path>` enables the experimental-fit criterion on
//! user-supplied curves (`mode,stretch,stress,measure`).

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use pann_core::autodiff::Eval;
use pann_core::datagen::{
    fixture_model, genogden_fixture, load_experimental, ogden_fixture, ExperimentalPoint, StressMeasure,
};
use pann_core::kinematics::{discriminant, stretch_invariants, DefGrad};
use pann_core::linalg;
use pann_core::loading::{compressible_mode_stress, incompressible_mode_stress, Mode, ModeSpec};
use pann_core::models::{EnergyModel, ModelKind, NeuralModel};
use pann_core::networks::icnn_forward;
use pann_core::training::{
    data_loss, loss_gradient, median_benchmark, r_squared, train, ArchSpec, BenchData, BenchReport,
    TrainConfig, TrainData, TrainReport,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass: Some(pass), detail: detail.into() }
    }
    fn skipped(detail: impl Into<String>) -> Self {
        Self { pass: None, detail: detail.into() }
    }
}

fn neural_kinds() -> [ModelKind; 4] {
    [ModelKind::LambdaPann, ModelKind::LambdaPannNophi, ModelKind::LambdaPannAdditive, ModelKind::IPann]
}

/// One model of every kind, calibrated.
fn zoo(seed: u64) -> Vec<EnergyModel> {
    let mut v: Vec<EnergyModel> = neural_kinds()
        .into_iter()
        .map(|k| {
            let w = if k == ModelKind::IPann { 23 } else { 10 };
            EnergyModel::Neural(NeuralModel::new(k, 2, w, 3.0, seed).unwrap())
        })
        .collect();
    v.push(EnergyModel::ogden_compressible(ogden_fixture(1).unwrap()).unwrap());
    v.push(EnergyModel::ogden_incompressible(vec![0.63, 0.0012, -0.01], vec![1.3, 5.0, -2.0]).unwrap());
    v.push(EnergyModel::gen_ogden(genogden_fixture(1).unwrap()).unwrap());
    let mut ledret = EnergyModel::ledret(vec![1.5, -1.2], vec![1.4], 0.5).unwrap();
    ledret.calibrate().unwrap();
    v.push(ledret);
    assert_eq!(v.len(), ModelKind::ALL.len());
    v
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let models = zoo(3);
    let mut perm_ok = true;
    for _ in 0..100 {
        let [a, b, c]: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.2..4.0));
        for m in &models {
            let e = m.energy_at([a, b, c]).unwrap().to_bits();
            for p in [[a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
                perm_ok &= m.energy_at(p).unwrap().to_bits() == e;
            }
        }
    }

    let mut worst_convexity = f64::NEG_INFINITY;
    for m in models.iter().filter_map(EnergyModel::as_neural) {
        let f = |x: &[f64]| {
            let mut g = Eval::<f64>::new();
            let y = m.arch.psi_nn_args(&mut g, &m.params, x);
            g.check().unwrap();
            y
        };
        let n = m.arch.num_args();
        for _ in 0..500 {
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..3.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..3.0)).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let (fa, fb) = (f(&a), f(&b));
            let excess = f(&mid) - 0.5 * (fa + fb) - 1e-9 * (1.0 + fa.abs() + fb.abs());
            worst_convexity = worst_convexity.max(excess);
        }
    }

    let mut mono_ok = true;
    for m in models.iter().filter_map(EnergyModel::as_neural) {
        for s in m.arch.stacks().into_iter().filter(|s| s.monotone) {
            for _ in 0..200 {
                let x: Vec<f64> = (0..s.in_dim).map(|_| rng.gen_range(-2.0..3.0)).collect();
                let mut y = x.clone();
                let k = rng.gen_range(0..s.in_dim);
                y[k] += rng.gen_range(0.0..1.0);
                mono_ok &= icnn_forward(s, &m.params, &y).unwrap() >= icnn_forward(s, &m.params, &x).unwrap() - 1e-12;
            }
        }
    }

    let mut worst_ref = 0.0f64;
    for m in &models {
        let s = if m.is_incompressible() {
            // only deviatoric stress is defined: the pressure-eliminated mode stresses
            let mut worst = 0.0f64;
            for mode in Mode::ALL {
                let s = incompressible_mode_stress(m, &ModeSpec::new(mode, 1.0).unwrap()).unwrap();
                worst = s.iter().fold(worst, |w, x| w.max(x.abs()));
            }
            worst
        } else {
            linalg::frobenius(&m.cauchy_stress(&DefGrad::identity()).unwrap())
        };
        worst_ref = worst_ref.max(s);
    }
    let pass = perm_ok && worst_convexity <= 0.0 && mono_ok && worst_ref <= 1e-10;
    Outcome::check(
        pass,
        format!(
            "permutation exact: {perm_ok}; worst midpoint excess {worst_convexity:.2e} (2000 segments); monotone stacks: {mono_ok}; max |σ(I)| {worst_ref:.2e}"
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let models = zoo(5);
    let h = 1e-6;
    let mut worst_stretch = 0.0f64;
    for m in &models {
        for _ in 0..100 {
            let l: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.5..2.0));
            let g = m.dpsi_dstretch_at(l).unwrap();
            let scale = g.iter().fold(1e-3f64, |acc, x| acc.max(x.abs()));
            for k in 0..3 {
                let (mut lp, mut lm) = (l, l);
                lp[k] += h;
                lm[k] -= h;
                let fd = (m.energy_at(lp).unwrap() - m.energy_at(lm).unwrap()) / (2.0 * h);
                worst_stretch = worst_stretch.max((fd - g[k]).abs() / scale);
            }
        }
    }

    let mut worst_param = 0.0f64;
    let truth = fixture_model("ogden-fixture:3").unwrap();
    for m in models.iter().filter_map(EnergyModel::as_neural) {
        for _ in 0..100 {
            let f = loop {
                let mut f = linalg::IDENTITY;
                for row in f.iter_mut() {
                    for x in row.iter_mut() {
                        *x += rng.gen_range(-0.3..0.3);
                    }
                }
                if let Ok(f) = DefGrad::new(f) {
                    break f;
                }
            };
            let record = pann_core::datagen::Dataset {
                meta: pann_core::datagen::DatasetMeta {
                    truth_kind: "probe".into(),
                    truth_fingerprint: String::new(),
                    delta: 0.3,
                    n: 1,
                    seed: 0,
                    generator_version: String::new(),
                    acceptance_rate: 1.0,
                },
                records: vec![pann_core::datagen::Record { f, sigma: linalg::sym_to_six(&truth.cauchy_stress(&f).unwrap()) }],
            };
            let data = TrainData::from_dataset(&record).unwrap();
            let (_, grad) = loss_gradient(m, &data).unwrap();
            let dir: Vec<f64> = (0..grad.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let eval = |t: f64| {
                let mut p = m.clone();
                for (w, d) in p.params.iter_mut().zip(&dir) {
                    *w += t * d;
                }
                p.set_offsets();
                data_loss(&EnergyModel::Neural(p), &data).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let ad: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            let scale = grad.iter().fold(ad.abs(), |acc, g| acc.max(g.abs())).max(1e-8);
            worst_param = worst_param.max((fd - ad).abs() / scale);
        }
    }
    Outcome::check(
        worst_stretch <= 1e-6 && worst_param <= 1e-6,
        format!("worst relative error: ∂ψ/∂λ {worst_stretch:.2e} (8 kinds × 100 states), parameters {worst_param:.2e} (4 kinds × 100 states)"),
    )
}

fn bisect_transverse(model: &EnergyModel, spec: &ModeSpec) -> f64 {
    let l = spec.lambda;
    let r = |t: f64| match spec.mode {
        Mode::UT => model.principal_stress([l, t, t]).unwrap()[1],
        Mode::ET => model.principal_stress([l, l, t]).unwrap()[2],
        Mode::PS => model.principal_stress([l, 1.0, t]).unwrap()[2],
    };
    let (mut lo, mut hi) = (0.05, 20.0);
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

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_disc = 0.0f64;
    for _ in 0..1000 {
        let [a, b, c]: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.5..2.0));
        let (i1, i2, i3) = stretch_invariants(&[a, b, c]);
        let exact = ((a - b) * (b - c) * (c - a)).powi(2);
        worst_disc = worst_disc.max((discriminant(i1, i2, i3) - exact).abs());
    }

    let (mu, alpha) = (1.3, 2.7);
    let ogden = EnergyModel::ogden_incompressible(vec![mu], vec![alpha]).unwrap();
    let c = 2.0 * mu / alpha;
    let mut worst_closed = 0.0f64;
    for i in 0..40 {
        let l = 0.5 + 0.1 * i as f64;
        let ut = incompressible_mode_stress(&ogden, &ModeSpec::new(Mode::UT, l).unwrap()).unwrap()[0];
        let et = incompressible_mode_stress(&ogden, &ModeSpec::new(Mode::ET, l).unwrap()).unwrap()[0];
        let ut_exact = c * (l.powf(alpha) - l.powf(-alpha / 2.0));
        let et_exact = c * (l.powf(alpha) - l.powf(-2.0 * alpha));
        worst_closed = worst_closed.max((ut - ut_exact).abs() / (1.0 + ut_exact.abs()));
        worst_closed = worst_closed.max((et - et_exact).abs() / (1.0 + et_exact.abs()));
    }

    let fixture = EnergyModel::ogden_compressible(ogden_fixture(1).unwrap()).unwrap();
    let mut worst_root = 0.0f64;
    for mode in Mode::ALL {
        for i in 0..30 {
            let spec = ModeSpec::new(mode, 0.6 + 0.04 * i as f64).unwrap();
            let r = compressible_mode_stress(&fixture, &spec).unwrap();
            let k = if mode == Mode::UT { 1 } else { 2 };
            worst_root = worst_root.max((r.stretches[k] - bisect_transverse(&fixture, &spec)).abs());
        }
    }
    Outcome::check(
        worst_disc <= 1e-9 && worst_closed <= 1e-10 && worst_root <= 1e-8,
        format!(
            "discriminant {worst_disc:.2e} (1000 triples); one-term Ogden UT/ET {worst_closed:.2e}; Newton vs bisection {worst_root:.2e} (fixture 1, 90 states)"
        ),
    )
}

/// Fraction of 1000-epoch windows over which the training loss did not increase.
fn non_increasing_fraction(rep: &TrainReport) -> f64 {
    let h = &rep.history;
    let windows: Vec<bool> = h
        .iter()
        .filter_map(|p| p.epoch.checked_sub(1000).and_then(|e| rep.loss_at(e)).map(|q| p.train_loss <= q.train_loss))
        .collect();
    windows.iter().filter(|&&b| b).count() as f64 / windows.len().max(1) as f64
}

/// Runs a median benchmark and keeps every individual report, keyed by
/// `(architecture label, fixture name)`.
fn bench(suite: &str, fixtures: &[usize], archs: &[ArchSpec], epochs: usize) -> (BenchReport, Vec<(String, String, TrainReport)>) {
    let fx: Vec<(String, EnergyModel)> = fixtures
        .iter()
        .map(|i| {
            let name = format!("{suite}-fixture:{i}");
            let m = fixture_model(&name).unwrap();
            (name, m)
        })
        .collect();
    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let mut runs = Vec::new();
    let report = median_benchmark(archs, &fx, &cfg, &BenchData::default(), |a, f, r| {
        eprintln!("    {:<28} {:<20} train {:.3e}  extrap {:.3e}", a.label(), f, r.final_train_mse, r.final_extrap_mse.unwrap_or(f64::NAN));
        runs.push((a.label(), f.to_string(), r.clone()));
    })
    .unwrap();
    (report, runs)
}

fn find<'a>(runs: &'a [(String, String, TrainReport)], arch: &ArchSpec, fixture: &str) -> &'a TrainReport {
    runs.iter().find(|(a, f, _)| *a == arch.label() && f == fixture).map(|(_, _, r)| r).unwrap()
}

/// Full λ-PANN training loss on GenOgden fixture 1: final and at 5000 epochs.
struct Reference {
    last: f64,
    at_5k: f64,
}

fn criteria_4_and_5(epochs: usize) -> (Outcome, Outcome, Reference) {
    let lambda = ArchSpec::new(ModelKind::LambdaPann);
    let ipann = ArchSpec::new(ModelKind::IPann);
    // fixture 5 doubles as the single-fixture fit of criterion 4
    let (ogden, ogden_runs) = bench("ogden", &[5, 1, 2], &[lambda, ipann], epochs);
    let fit = find(&ogden_runs, &lambda, "ogden-fixture:5");
    let window = non_increasing_fraction(fit);
    let c4 = Outcome::check(
        fit.final_train_mse <= 1e-3 && window >= 0.95,
        format!(
            "fixture 5, {epochs} epochs: training MSE {:.3e} (target ≤ 1e-3); non-increasing 1000-epoch windows {:.1}%",
            fit.final_train_mse,
            100.0 * window
        ),
    );

    let (gen, gen_runs) = bench("genogden", &[1, 2, 3], &[lambda, ipann], epochs);
    let (l_ex, i_ex) = (ogden.archs[0].final_median_extrap(), ogden.archs[1].final_median_extrap());
    let (l_tr, i_tr) = (gen.archs[0].final_median_train(), gen.archs[1].final_median_train());
    let c5 = Outcome::check(
        l_ex <= i_ex && i_tr <= l_tr,
        format!(
            "Ogden 5,1,2 median extrapolation: λ-PANN {l_ex:.3e} vs I-PANN {i_ex:.3e}; GenOgden 1,2,3 median training: I-PANN {i_tr:.3e} vs λ-PANN {l_tr:.3e}"
        ),
    );
    let full = find(&gen_runs, &lambda, "genogden-fixture:1");
    let reference = Reference { last: full.final_train_mse, at_5k: full.loss_at(5000.min(epochs)).unwrap().train_loss };
    (c4, c5, reference)
}

fn criterion_6(epochs: usize, full: &Reference) -> Outcome {
    let truth = fixture_model("genogden-fixture:1").unwrap();
    let (tr, _) = pann_core::training::fixture_data(&truth, &BenchData::default()).unwrap();
    let run = |arch, epochs| {
        let cfg = TrainConfig { arch, epochs, ..TrainConfig::default() };
        train(&cfg, &tr, None).unwrap().1.final_train_mse
    };
    let additive = run(ModelKind::LambdaPannAdditive, epochs);
    let nophi_5k = run(ModelKind::LambdaPannNophi, 5000.min(epochs));
    Outcome::check(
        additive >= 2.0 * full.last && nophi_5k >= full.at_5k,
        format!(
            "GenOgden fixture 1: additive {additive:.3e} vs full {:.3e} at {epochs} epochs (ratio {:.2}, target ≥ 2); no-φ {nophi_5k:.3e} vs full {:.3e} at 5000 epochs",
            full.last,
            additive / full.last,
            full.at_5k
        ),
    )
}

fn experimental_fit(points: &[ExperimentalPoint], epochs: usize) -> (std::collections::BTreeMap<Mode, f64>, usize, usize) {
    let train_pts: Vec<ExperimentalPoint> = points.iter().filter(|p| p.spec.mode != Mode::PS).cloned().collect();
    let cfg = TrainConfig { epochs, l0_factor: 1e-4, ..TrainConfig::default() };
    let (model, rep) = train(&cfg, &TrainData::from_experimental(&train_pts), None).unwrap();
    let r2 = r_squared(&model, points).unwrap().into_iter().collect();
    (r2, rep.initial_active_params, rep.final_active_params)
}

fn r2_verdict(r2: &std::collections::BTreeMap<Mode, f64>) -> bool {
    r2.iter().all(|(m, v)| if *m == Mode::PS { *v > 0.98 } else { *v > 0.99 })
}

fn criterion_7(epochs: usize) -> Outcome {
    let Ok(path) = std::env::var("PANN_TRELOAR_CSV") else {
        // proxy on curves of a classic three-term Ogden fit of Treloar's rubber
        let truth = EnergyModel::ogden_incompressible(vec![0.63, 0.0012, -0.01], vec![1.3, 5.0, -2.0]).unwrap();
        let mut pts = Vec::new();
        for (mode, lmax) in [(Mode::UT, 7.0), (Mode::ET, 4.5), (Mode::PS, 5.0)] {
            for i in 0..15 {
                let spec = ModeSpec::new(mode, 1.0 + (lmax - 1.0) * i as f64 / 14.0).unwrap();
                let s = incompressible_mode_stress(&truth, &spec).unwrap()[0];
                pts.push(ExperimentalPoint { spec, stress: s / spec.lambda, measure: StressMeasure::Nominal });
            }
        }
        let (r2, a0, a1) = experimental_fit(&pts, epochs);
        return Outcome::skipped(format!(
            "no PANN_TRELOAR_CSV; proxy on synthetic Ogden curves, UT+ET fitted for {epochs} epochs: R² {} (target met: {}); active parameters {a0} → {a1}",
            fmt_r2(&r2),
            r2_verdict(&r2) && a1 < a0
        ));
    };
    let points = load_experimental(Path::new(&path), None).unwrap();
    let (r2, a0, a1) = experimental_fit(&points, epochs);
    Outcome::check(r2_verdict(&r2) && a1 < a0, format!("{path}, UT+ET fitted for {epochs} epochs: R² {}; active parameters {a0} → {a1}", fmt_r2(&r2)))
}

fn fmt_r2(r2: &std::collections::BTreeMap<Mode, f64>) -> String {
    r2.iter().map(|(m, v)| format!("{m} {v:.4}")).collect::<Vec<_>>().join(", ")
}

fn run_cli(dir: &Path, args: &[String]) {
    let out = Command::new(env!("CARGO_BIN_EXE_pann")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let commands = [
        s(&["--quiet", "gen", "--truth", "ogden-fixture:4", "--delta", "0.2", "--n", "40", "--out", "tr.jsonl"]),
        s(&["--quiet", "gen", "--truth", "ogden-fixture:4", "--delta", "0.3", "--n", "40", "--seed", "1", "--out", "te.jsonl"]),
        s(&["--quiet", "train", "--epochs", "200", "--data", "tr.jsonl", "--eval", "te.jsonl", "--out", "m.json"]),
        s(&["--quiet", "eval", "--model", "m.json", "--data", "te.jsonl", "--out", "e.json"]),
        s(&["--quiet", "curves", "--model", "m.json", "--out", "c.csv"]),
        s(&["--quiet", "export", "--truth", "genogden-fixture:7", "--out", "g.json"]),
        s(&["--quiet", "bench", "--suite", "genogden", "--fixtures", "1,2", "--archs", "lambda-pann:p=2,i-pann", "--epochs", "30", "--out-dir", "b"]),
    ];
    let manifests = ["tr.manifest.json", "te.manifest.json", "m.manifest.json", "e.manifest.json", "c.manifest.json", "g.manifest.json", "b/bench.manifest.json"];
    for c in &commands {
        run_cli(d, c);
    }
    let mut checked = 0;
    let mut mismatched = Vec::new();
    for m in manifests {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join(m)).unwrap()).unwrap();
        let argv: Vec<String> = v["argv"].as_array().unwrap().iter().skip(1).map(|a| a.as_str().unwrap().to_string()).collect();
        run_cli(Path::new(v["cwd"].as_str().unwrap()), &argv);
        for o in v["outputs"].as_array().unwrap() {
            let path = d.join(o["path"].as_str().unwrap());
            let hash: String = Sha256::digest(fs::read(&path).unwrap()).iter().map(|b| format!("{b:02x}")).collect();
            checked += 1;
            if hash != o["sha256"].as_str().unwrap() {
                mismatched.push(path.display().to_string());
            }
        }
    }
    Outcome::check(mismatched.is_empty(), format!("{checked} artifacts from {} commands re-run from their manifests; mismatches: {mismatched:?}", manifests.len()))
}

fn main() {
    let strict = std::env::var("PANN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let override_epochs: Option<usize> = std::env::var("PANN_ACCEPTANCE_EPOCHS").ok().and_then(|v| v.parse().ok());
    let epochs = override_epochs.unwrap_or(20_000);
    // the experimental fit names no budget: the training default applies
    let fit_epochs = override_epochs.unwrap_or(TrainConfig::default().epochs);
    let started = Instant::now();
    let mut outcomes: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        let tag = match o.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIPPED",
        };
        println!("criterion {n}: {tag} — {}  [{:.0} s]", o.detail, started.elapsed().as_secs_f64());
        outcomes.push((n, o));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(8, criterion_8());
    let (c4, c5, reference) = criteria_4_and_5(epochs);
    report(4, c4);
    report(5, c5);
    report(6, criterion_6(epochs, &reference));
    report(7, criterion_7(fit_epochs));

    outcomes.sort_by_key(|(n, _)| *n);
    let failed: Vec<usize> = outcomes.iter().filter(|(_, o)| o.pass == Some(false)).map(|(n, _)| *n).collect();
    println!("summary: {} passed, {} failed {failed:?}, {} skipped", outcomes.iter().filter(|(_, o)| o.pass == Some(true)).count(), failed.len(), outcomes.iter().filter(|(_, o)| o.pass.is_none()).count());
    // guarantees (1–3, 8) must hold; the training comparisons are reported
    let hard: Vec<usize> = failed.iter().copied().filter(|n| [1, 2, 3, 8].contains(n)).collect();
    if !hard.is_empty() || (strict && !failed.is_empty()) {
        std::process::exit(1);
    }
}
