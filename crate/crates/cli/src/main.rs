use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use pann_core::datagen::{self, build_dataset, Dataset, ExperimentalPoint, SampleConfig, StressMeasure};
use pann_core::loading::{incompressible_mode_stress, mode_stress, Mode, ModeSpec};
use pann_core::models::EnergyModel;
use pann_core::training::{self, ArchSpec, BenchData, TrainConfig, TrainData};
use pann_core::{DataError, ModelKind, TrainError};

#[derive(Debug, Parser)]
#[command(name = "pann", version, about = "Polyconvex principal-stretch neural hyperelasticity")]
struct Cli {
    /// Seed used by commands that do not set their own.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic dataset from a ground-truth material.
    Gen(GenArgs),
    /// Train a neural energy on a dataset or on experimental curves.
    Train(TrainArgs),
    /// Evaluate a model file on a dataset or on experimental curves.
    Eval(EvalArgs),
    /// Stress-stretch curves of the homogeneous test modes.
    Curves(CurvesArgs),
    /// Median-loss comparison of architectures over the built-in fixtures.
    Bench(BenchArgs),
    /// Write a built-in ground-truth material as a model file.
    Export(ExportArgs),
}

#[derive(Debug, Args, Serialize)]
struct GenArgs {
    /// `ogden-fixture:N`, `genogden-fixture:N` or a model file.
    #[arg(long)]
    truth: String,
    #[arg(long, allow_negative_numbers = true)]
    delta: f64,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long, default_value = "lambda-pann")]
    arch: String,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    p: f64,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Neurons per layer (10; 23 for i-pann).
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
    lr: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    l0_factor: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset (`.jsonl`) or experimental curves (`.csv`).
    #[arg(long)]
    data: PathBuf,
    /// Evaluation set; for curves, defaults to the modes held out of training.
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Modes used for training when `--data` holds experimental curves.
    #[arg(long, default_value = "ut,et")]
    train_modes: String,
    /// Convert experimental stresses into this measure before fitting.
    #[arg(long)]
    measure: Option<String>,
    #[arg(long, default_value_t = 100)]
    log_every: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CurvesArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "ut,et,ps")]
    modes: String,
    #[arg(long, default_value_t = 0.7)]
    lmin: f64,
    #[arg(long, default_value_t = 1.4)]
    lmax: f64,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Half-width of the training sampling box, reported as the training domain.
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    /// `auto` (model decides), `incompressible` or `compressible`.
    #[arg(long, default_value = "auto")]
    path: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    /// `ogden` or `genogden`.
    #[arg(long)]
    suite: String,
    #[arg(long, default_value = "lambda-pann:p=1,lambda-pann:p=3,i-pann")]
    archs: String,
    /// Fixture indices (1-based, comma separated).
    #[arg(long, default_value = "1,2,3,4,5,6,7,8,9,10")]
    fixtures: String,
    #[arg(long, default_value_t = 20_000)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ExportArgs {
    #[arg(long)]
    truth: String,
    #[arg(long)]
    out: PathBuf,
}

/// Distinguishes bad invocations (exit 2) from failures while running (exit 3).
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidConfig(m) => Failure::Usage(m),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(m) => Failure::Usage(m),
            TrainError::Data(DataError::InvalidConfig(m)) => Failure::Usage(m),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    argv: Vec<String>,
    /// Relative paths in `argv` resolve against this directory.
    cwd: String,
    seed: u64,
    config: &'a C,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn artifacts(paths: &[&Path]) -> anyhow::Result<Vec<Artifact>> {
    paths.iter().map(|p| Ok(Artifact { path: p.display().to_string(), sha256: sha256_file(p)? })).collect()
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

struct Ctx {
    seed: u64,
    manifest: Option<PathBuf>,
    quiet: bool,
    argv: Vec<String>,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn write_manifest<C: Serialize>(
        &self,
        command: &'static str,
        seed: u64,
        config: &C,
        main_out: &Path,
        inputs: &[&Path],
        outputs: &[&Path],
    ) -> anyhow::Result<()> {
        let m = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: self.argv.clone(),
            cwd: std::env::current_dir().map(|d| d.display().to_string()).unwrap_or_default(),
            seed,
            config,
            inputs: artifacts(inputs)?,
            outputs: artifacts(outputs)?,
        };
        let path = self.manifest.clone().unwrap_or_else(|| sibling(main_out, ".manifest.json"));
        write_file(&path, &(serde_json::to_string_pretty(&m)? + "\n"))
    }
}

fn load_truth(spec: &str) -> Result<EnergyModel, Failure> {
    if spec.contains("-fixture:") {
        return Ok(datagen::fixture_model(spec)?);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(usage(format!("ground truth `{spec}` is neither a fixture nor an existing model file")));
    }
    load_model(path)
}

fn load_model(path: &Path) -> Result<EnergyModel, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    EnergyModel::from_json(&text).with_context(|| format!("loading model {}", path.display())).map_err(Failure::Runtime)
}

fn parse_modes(s: &str) -> Result<Vec<Mode>, Failure> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.parse::<Mode>().map_err(usage)).collect()
}

fn is_csv(p: &Path) -> bool {
    p.extension().map(|e| e.eq_ignore_ascii_case("csv")).unwrap_or(false)
}

/// Splits `kind:opt=v,kind2,...` on commas, attaching bare `key=value`
/// tokens to the preceding architecture.
fn parse_arch_list(s: &str) -> Result<Vec<ArchSpec>, Failure> {
    let mut groups: Vec<String> = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let is_option = tok.contains('=') && !tok.contains(':');
        match groups.last_mut() {
            Some(last) if is_option => {
                last.push(if last.contains(':') { ',' } else { ':' });
                last.push_str(tok);
            }
            _ if is_option => return Err(usage(format!("option `{tok}` precedes any architecture"))),
            _ => groups.push(tok.to_string()),
        }
    }
    if groups.is_empty() {
        return Err(usage("no architectures given"));
    }
    groups.iter().map(|g| g.parse::<ArchSpec>().map_err(usage)).collect()
}

fn cmd_gen(ctx: &Ctx, a: &GenArgs) -> Result<(), Failure> {
    let seed = a.seed.unwrap_or(ctx.seed);
    let cfg = SampleConfig { delta: a.delta, n: a.n, seed };
    cfg.validate()?;
    let truth = load_truth(&a.truth)?;
    if truth.is_incompressible() {
        return Err(usage("ground truth must be compressible to evaluate general deformation gradients"));
    }
    let data = build_dataset(&cfg, &truth)?;
    data.save(&a.out).map_err(|e| Failure::Runtime(e.into()))?;
    ctx.say(format!(
        "wrote {} records to {} (acceptance rate {:.4})",
        data.records.len(),
        a.out.display(),
        data.meta.acceptance_rate
    ));
    ctx.write_manifest("gen", seed, a, &a.out, &[], &[&a.out])?;
    Ok(())
}

fn load_points(path: &Path, measure: Option<StressMeasure>) -> Result<Vec<ExperimentalPoint>, Failure> {
    datagen::load_experimental(path, measure).with_context(|| format!("loading {}", path.display())).map_err(Failure::Runtime)
}

fn load_synthetic(path: &Path) -> Result<TrainData, Failure> {
    let d = Dataset::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(TrainData::from_dataset(&d)?)
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<(), Failure> {
    let kind: ModelKind = a.arch.parse().map_err(usage)?;
    let measure = a.measure.as_deref().map(str::parse::<StressMeasure>).transpose().map_err(usage)?;
    let seed = a.seed.unwrap_or(ctx.seed);
    let cfg = TrainConfig {
        arch: kind,
        p: a.p,
        layers: a.layers,
        width: a.width.unwrap_or(if kind == ModelKind::IPann { 23 } else { 10 }),
        lr: a.lr,
        epochs: a.epochs,
        l0_factor: a.l0_factor,
        seed,
        loss_stress_measure: measure,
        log_every: a.log_every,
    };
    cfg.validate()?;
    let mut inputs: Vec<&Path> = vec![&a.data];
    let (train_data, eval_data) = if is_csv(&a.data) {
        let modes = parse_modes(&a.train_modes)?;
        let pts = load_points(&a.data, measure)?;
        let (tr, held): (Vec<_>, Vec<_>) = pts.into_iter().partition(|p| modes.contains(&p.spec.mode));
        let ev = match &a.eval {
            Some(p) => load_points(p, measure)?,
            None => held,
        };
        let ev = (!ev.is_empty()).then(|| TrainData::from_experimental(&ev));
        (TrainData::from_experimental(&tr), ev)
    } else {
        let ev = a.eval.as_deref().map(load_synthetic).transpose()?;
        (load_synthetic(&a.data)?, ev)
    };
    if let Some(e) = &a.eval {
        inputs.push(e);
    }
    if train_data.is_empty() {
        return Err(usage("training data is empty"));
    }
    let quiet = ctx.quiet;
    let log_stride = (cfg.epochs / 10).max(cfg.log_every);
    let (model, report) = training::train_with_progress(&cfg, &train_data, eval_data.as_ref(), |p| {
        if !quiet && (p.epoch % log_stride == 0 || p.epoch == cfg.epochs) {
            match p.extrap_loss {
                Some(e) => println!("epoch {:>7}  train {:.6e}  eval {:.6e}  active {}", p.epoch, p.train_loss, e, p.active_params),
                None => println!("epoch {:>7}  train {:.6e}  active {}", p.epoch, p.train_loss, p.active_params),
            }
        }
    })?;
    let report_path = sibling(&a.out, ".report.json");
    let csv_path = sibling(&a.out, ".loss.csv");
    write_file(&a.out, &(model.to_json() + "\n"))?;
    write_file(&report_path, &(report.to_json() + "\n"))?;
    write_file(&csv_path, &report.loss_csv())?;
    ctx.say(format!("final train loss {:.6e}", report.final_train_mse));
    if let Some(e) = report.final_extrap_mse {
        ctx.say(format!("final eval loss {e:.6e}"));
    }
    if let Some(r2) = &report.r_squared {
        for (m, v) in r2 {
            ctx.say(format!("R2 {m}: {v:.5}"));
        }
    }
    log::info!("training took {:.1} s", report.wall_clock_seconds);
    ctx.write_manifest("train", seed, &cfg, &a.out, &inputs, &[&a.out, &report_path, &csv_path])?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    model_kind: String,
    records: usize,
    mse: f64,
    r_squared: Option<std::collections::BTreeMap<String, f64>>,
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let out = if is_csv(&a.data) {
        let pts = load_points(&a.data, None)?;
        let r2 = training::r_squared(&model, &pts)?;
        let td = TrainData::from_experimental(&pts);
        EvalOutput {
            model_kind: model.kind().to_string(),
            records: pts.len(),
            mse: training::data_loss(&model, &td)?,
            r_squared: Some(r2.into_iter().map(|(m, v)| (m.to_string(), v)).collect()),
        }
    } else {
        if model.is_incompressible() {
            return Err(usage("incompressible models cannot be evaluated on general deformation data"));
        }
        let td = load_synthetic(&a.data)?;
        EvalOutput { model_kind: model.kind().to_string(), records: td.len(), mse: training::data_loss(&model, &td)?, r_squared: None }
    };
    let text = serde_json::to_string_pretty(&out).map_err(anyhow::Error::from)? + "\n";
    match &a.out {
        Some(p) => {
            write_file(p, &text)?;
            ctx.say(format!("mse {:.6e}", out.mse));
            ctx.write_manifest("eval", ctx.seed, a, p, &[&a.model, &a.data], &[p])?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_curves(ctx: &Ctx, a: &CurvesArgs) -> Result<(), Failure> {
    if !(a.lmin > 0.0 && a.lmax >= a.lmin) || a.steps == 0 {
        return Err(usage("need 0 < lmin <= lmax and steps > 0"));
    }
    let modes = parse_modes(&a.modes)?;
    let model = load_model(&a.model)?;
    let incompressible_path = match a.path.as_str() {
        "auto" => model.is_incompressible(),
        "incompressible" => true,
        "compressible" if model.is_incompressible() => {
            return Err(usage("model is incompressible; the compressible path is unavailable"))
        }
        "compressible" => false,
        other => return Err(usage(format!("unknown path `{other}`"))),
    };
    let mut out = String::new();
    out.push_str(&format!("# model: {} ({})\n", a.model.display(), model.kind()));
    out.push_str(&format!("# path: {}\n", if incompressible_path { "incompressible" } else { "compressible" }));
    out.push_str(&format!("# grid: lmin={:?} lmax={:?} steps={}\n", a.lmin, a.lmax, a.steps));
    out.push_str(&format!("# training_domain: [{:?}, {:?}]\n", 1.0 - a.delta, 1.0 + a.delta));
    out.push_str("mode,stretch,sigma,transverse_stretch,in_training_domain\n");
    for mode in modes {
        for spec in training::stretch_grid(mode, a.lmin, a.lmax, a.steps) {
            let spec = ModeSpec::new(spec.mode, spec.lambda).map_err(|e| usage(e.to_string()))?;
            let (sigma, transverse) = if incompressible_path {
                let s = incompressible_mode_stress(&model, &spec).map_err(anyhow::Error::from)?;
                (s[0], spec.stretches()[2])
            } else {
                let r = mode_stress(&model, &spec).map_err(anyhow::Error::from)?;
                (r.stresses[0], r.stretches[2])
            };
            let inside = (spec.lambda - 1.0).abs() <= a.delta;
            out.push_str(&format!("{},{:?},{:?},{:?},{}\n", mode, spec.lambda, sigma, transverse, inside));
        }
    }
    write_file(&a.out, &out)?;
    ctx.say(format!("wrote {}", a.out.display()));
    ctx.write_manifest("curves", ctx.seed, a, &a.out, &[&a.model], &[&a.out])?;
    Ok(())
}

fn cmd_bench(ctx: &Ctx, a: &BenchArgs) -> Result<(), Failure> {
    let archs = parse_arch_list(&a.archs)?;
    let indices: Vec<usize> = a
        .fixtures
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| usage(format!("bad fixture index `{t}`"))))
        .collect::<Result<_, _>>()?;
    let family = match a.suite.as_str() {
        "ogden" => "ogden-fixture",
        "genogden" => "genogden-fixture",
        other => return Err(usage(format!("unknown suite `{other}` (expected ogden or genogden)"))),
    };
    let fixtures: Vec<(String, EnergyModel)> = indices
        .iter()
        .map(|i| {
            let name = format!("{family}:{i}");
            datagen::fixture_model(&name).map(|m| (name, m))
        })
        .collect::<Result<_, _>>()?;
    let seed = a.seed.unwrap_or(ctx.seed);
    let base = TrainConfig { epochs: a.epochs, lr: a.lr, seed, ..TrainConfig::default() };
    base.validate()?;
    let data = BenchData {
        train: SampleConfig { delta: 0.2, n: 200, seed },
        extrap: SampleConfig { delta: 0.3, n: 500, seed: seed.wrapping_add(1) },
    };
    let quiet = ctx.quiet;
    let report = training::median_benchmark(&archs, &fixtures, &base, &data, |arch, name, rep| {
        if !quiet {
            println!(
                "{:<32} {:<20} train {:.4e}  extrap {:.4e}",
                arch.label(),
                name,
                rep.final_train_mse,
                rep.final_extrap_mse.unwrap_or(f64::NAN)
            );
        }
    })?;
    fs::create_dir_all(&a.out_dir)?;
    let mut outputs = Vec::new();
    for ab in &report.archs {
        let p = a.out_dir.join(format!("{}.csv", ab.label));
        write_file(&p, &ab.loss_csv())?;
        outputs.push(p);
    }
    let summary = a.out_dir.join("summary.txt");
    write_file(&summary, &report.summary())?;
    let json = a.out_dir.join("bench.json");
    write_file(&json, &(serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)? + "\n"))?;
    outputs.push(summary);
    outputs.push(json.clone());
    ctx.say(report.summary());
    let out_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    ctx.write_manifest("bench", seed, a, &json, &[], &out_refs)?;
    Ok(())
}

fn cmd_export(ctx: &Ctx, a: &ExportArgs) -> Result<(), Failure> {
    let model = load_truth(&a.truth)?;
    write_file(&a.out, &(model.to_json() + "\n"))?;
    ctx.say(format!("wrote {} ({})", a.out.display(), model.kind()));
    ctx.write_manifest("export", ctx.seed, a, &a.out, &[], &[&a.out])?;
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "error" } else { "warn" }))
        .init();
    let ctx = Ctx { seed: cli.seed, manifest: cli.manifest.clone(), quiet: cli.quiet, argv };
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Curves(a) => cmd_curves(&ctx, a),
        Command::Bench(a) => cmd_bench(&ctx, a),
        Command::Export(a) => cmd_export(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
