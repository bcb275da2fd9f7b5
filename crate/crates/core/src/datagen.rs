//! Synthetic ground truth: built-in material tables, parameter samplers,
//! rejection sampling of deformation gradients, JSON-lines datasets and the
//! experimental CSV loader.

use std::fmt;
use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::DataError;
use crate::kinematics::{admissible, invariants_u, spectral, DefGrad};
use crate::linalg::{self, Mat3};
use crate::loading::{Mode, ModeSpec};
use crate::models::{hex, EnergyModel, GenOgdenParams, OgdenParams};

pub const GENERATOR_VERSION: &str = concat!("pann-datagen/", env!("CARGO_PKG_VERSION"));
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 1_000_000;

/// Ten compressible Ogden materials: μ₁..μ₃, α₁..α₃, κ, β.
pub const OGDEN_TABLE: [[f64; 8]; 10] = [
    [-2.933, 0.101, 2.832, -1.019, 3.711, 2.08, 47.592, 1.963],
    [0.621, -1.396, 0.775, 4.878, -3.244, 1.075, 53.929, 1.241],
    [1.786, -2.949, 1.163, 1.263, -1.174, 2.581, 37.179, 1.206],
    [3.62, -2.375, -1.244, 1.268, -1.29, -1.796, 17.555, 1.109],
    [-0.866, 0.375, 0.491, -1.672, 3.934, 2.634, 13.146, 1.938],
    [1.827, -2.39, 0.563, 2.061, -1.537, 2.208, 15.135, 1.325],
    [0.294, 0.963, -1.258, 2.62, 1.593, -3.729, 12.592, 1.652],
    [-1.544, 2.315, -0.771, -2.943, 1.548, -2.374, 22.143, 1.307],
    [-0.195, -2.232, 2.427, -3.508, -1.861, 1.604, 27.666, 1.109],
    [-0.052, -2.509, 2.561, -1.535, -1.568, 1.874, 22.642, 1.256],
];

/// Ten generalized Ogden materials: c₁₀, c₂₀, c₃₀, c₀₁, c₀₂, c₀₃, κ (`None` = term absent).
#[allow(clippy::approx_constant)]
pub const GENOGDEN_TABLE: [[Option<f64>; 7]; 10] = [
    [Some(1.583), Some(0.133), None, Some(2.9), Some(0.342), Some(0.248), Some(0.873)],
    [Some(1.302), Some(0.261), Some(0.246), Some(0.668), Some(0.245), Some(0.143), Some(0.831)],
    [Some(0.875), Some(0.181), None, Some(1.433), Some(0.312), Some(0.229), Some(0.804)],
    [Some(0.786), Some(0.577), None, Some(1.268), Some(1.334), None, Some(0.86)],
    [Some(1.221), Some(0.126), None, Some(2.874), Some(0.228), None, Some(0.493)],
    [Some(0.909), Some(0.318), Some(0.18), Some(2.604), Some(0.238), None, Some(0.743)],
    [Some(2.892), Some(0.248), None, Some(0.869), Some(0.312), Some(0.246), Some(0.931)],
    [Some(0.567), Some(0.533), Some(0.408), Some(0.253), Some(0.236), None, Some(0.954)],
    [Some(0.967), Some(0.906), Some(0.241), Some(0.341), Some(0.185), None, Some(0.968)],
    [Some(2.234), Some(0.13), None, Some(2.762), Some(0.109), None, Some(0.391)],
];

/// Row `index` (1-based) of the Ogden table.
pub fn ogden_fixture(index: usize) -> Option<OgdenParams> {
    let r = OGDEN_TABLE.get(index.checked_sub(1)?)?;
    Some(OgdenParams { mu: r[0..3].to_vec(), alpha: r[3..6].to_vec(), kappa: r[6], beta: r[7] })
}

/// Row `index` (1-based) of the generalized Ogden table.
pub fn genogden_fixture(index: usize) -> Option<GenOgdenParams> {
    let r = GENOGDEN_TABLE.get(index.checked_sub(1)?)?;
    Some(GenOgdenParams {
        c_i0: r[0..3].iter().flatten().copied().collect(),
        c_0j: r[3..6].iter().flatten().copied().collect(),
        kappa: r[6].unwrap_or(0.0),
    })
}

/// Parses `ogden-fixture:N` / `genogden-fixture:N` into a ground-truth model.
pub fn fixture_model(spec: &str) -> Result<EnergyModel, DataError> {
    let (family, idx) = spec
        .split_once(':')
        .ok_or_else(|| DataError::InvalidConfig(format!("expected <family>-fixture:<1..10>, got `{spec}`")))?;
    let idx: usize = idx.trim().parse().map_err(|_| DataError::InvalidConfig(format!("bad fixture index in `{spec}`")))?;
    let bad = || DataError::InvalidConfig(format!("fixture index must be 1..10, got {idx}"));
    match family {
        "ogden-fixture" => Ok(EnergyModel::ogden_compressible(ogden_fixture(idx).ok_or_else(bad)?)?),
        "genogden-fixture" => Ok(EnergyModel::gen_ogden(genogden_fixture(idx).ok_or_else(bad)?)?),
        other => Err(DataError::InvalidConfig(format!("unknown fixture family `{other}`"))),
    }
}

/// Flips `mu`'s sign when it disagrees with `alpha`'s.
pub fn sign_match(mu: f64, alpha: f64) -> f64 {
    if mu * alpha < 0.0 {
        -mu
    } else {
        mu
    }
}

/// Three sign-matched Ogden terms, `κ ∼ U(10, 55)`, `β ∼ U(1, 2)`.
pub fn sample_ogden_params(seed: u64) -> OgdenParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut mu = Vec::with_capacity(3);
        let mut alpha = Vec::with_capacity(3);
        for _ in 0..3 {
            let m: f64 = rng.gen_range(-5.0..5.0);
            let mag: f64 = rng.gen_range(1.0..5.0);
            let a = if rng.gen_bool(0.5) { mag } else { -mag };
            mu.push(sign_match(m, a));
            alpha.push(a);
        }
        let kappa = rng.gen_range(10.0..55.0);
        let beta = rng.gen_range(1.0..2.0);
        let p = OgdenParams { mu, alpha, kappa, beta };
        // only μ = 0 or |α| = 1 exactly can fail; redraw in that case
        if p.validate(true).is_ok() {
            return p;
        }
    }
}

pub fn sample_genogden_params(seed: u64) -> GenOgdenParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(2..=3);
    let n = rng.gen_range(2..=3);
    let c_i0 = (0..m).map(|_| rng.gen_range(0.1..3.0)).collect();
    let c_0j = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
    let kappa = rng.gen_range(0.1..1.0);
    GenOgdenParams { c_i0, c_0j, kappa }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub delta: f64,
    pub n: usize,
    pub seed: u64,
}

impl SampleConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(DataError::InvalidConfig(format!("delta must be positive, got {}", self.delta)));
        }
        if self.n == 0 {
            return Err(DataError::InvalidConfig("n must be positive".into()));
        }
        Ok(())
    }
}

/// Rejection sampler `Fᵢⱼ = δᵢⱼ + U(−δ, δ)` restricted to admissible stretch
/// invariants and `det F > 0`.
pub struct DefGradSampler {
    delta: f64,
    rng: ChaCha8Rng,
    pub accepted: usize,
    pub rejected: usize,
}

impl DefGradSampler {
    pub fn new(delta: f64, seed: u64) -> Result<Self, DataError> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(DataError::InvalidConfig(format!("delta must be positive, got {delta}")));
        }
        Ok(Self { delta, rng: ChaCha8Rng::seed_from_u64(seed), accepted: 0, rejected: 0 })
    }

    pub fn acceptance_rate(&self) -> f64 {
        let total = self.accepted + self.rejected;
        if total == 0 {
            1.0
        } else {
            self.accepted as f64 / total as f64
        }
    }

    fn draw(&mut self) -> Mat3 {
        let mut f = linalg::IDENTITY;
        for row in f.iter_mut() {
            for x in row.iter_mut() {
                *x += self.rng.gen_range(-self.delta..self.delta);
            }
        }
        f
    }

    pub fn sample(&mut self) -> Result<DefGrad, DataError> {
        for _ in 0..MAX_CONSECUTIVE_REJECTIONS {
            let f = self.draw();
            if let Ok(f) = DefGrad::new(f) {
                if let Ok(s) = spectral(&f) {
                    let (i1, i2, i3) = invariants_u(&s);
                    if admissible(i1, i2, i3) {
                        self.accepted += 1;
                        return Ok(f);
                    }
                }
            }
            self.rejected += 1;
        }
        Err(DataError::RejectionOverflow(MAX_CONSECUTIVE_REJECTIONS))
    }
}

/// First sample of the configured stream.
pub fn sample_defgrad(cfg: &SampleConfig) -> Result<DefGrad, DataError> {
    DefGradSampler::new(cfg.delta, cfg.seed)?.sample()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub truth_kind: String,
    pub truth_fingerprint: String,
    pub delta: f64,
    pub n: usize,
    pub seed: u64,
    pub generator_version: String,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub f: DefGrad,
    /// Cauchy stress as `xx, yy, zz, xy, xz, yz`.
    pub sigma: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordLine {
    #[serde(rename = "F")]
    f: [f64; 9],
    sigma: [f64; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<Record>,
}

pub fn build_dataset(cfg: &SampleConfig, truth: &EnergyModel) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let mut sampler = DefGradSampler::new(cfg.delta, cfg.seed)?;
    let mut records = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let f = sampler.sample()?;
        let sigma = truth.cauchy_stress(&f)?;
        records.push(Record { f, sigma: linalg::sym_to_six(&sigma) });
    }
    Ok(Dataset {
        meta: DatasetMeta {
            truth_kind: truth.kind().to_string(),
            truth_fingerprint: truth.fingerprint(),
            delta: cfg.delta,
            n: cfg.n,
            seed: cfg.seed,
            generator_version: GENERATOR_VERSION.to_string(),
            acceptance_rate: sampler.acceptance_rate(),
        },
        records,
    })
}

impl Dataset {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), DataError> {
        writeln!(w, "{}", serde_json::to_string(&self.meta).expect("metadata serializes"))?;
        for r in &self.records {
            let line = RecordLine { f: r.f.to_row_major(), sigma: r.sigma };
            writeln!(w, "{}", serde_json::to_string(&line).expect("record serializes"))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, DataError> {
        let mut lines = r.lines().enumerate();
        let meta = match lines.next() {
            Some((_, line)) => serde_json::from_str::<DatasetMeta>(&line?)
                .map_err(|e| DataError::Format { line: 1, message: format!("header: {e}") })?,
            None => return Err(DataError::Format { line: 1, message: "empty dataset file".into() }),
        };
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordLine =
                serde_json::from_str(&line).map_err(|e| DataError::Format { line: i + 1, message: e.to_string() })?;
            let f = DefGrad::new(DefGrad::from_row_major(&rec.f).matrix().to_owned())
                .map_err(|e| DataError::Format { line: i + 1, message: e.to_string() })?;
            records.push(Record { f, sigma: rec.sigma });
        }
        Ok(Self { meta, records })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let file = fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// SHA-256 of the serialized dataset.
    pub fn fingerprint(&self) -> String {
        hex(&Sha256::digest(self.to_jsonl().as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StressMeasure {
    Cauchy,
    Nominal,
}

impl StressMeasure {
    /// Converts a principal Cauchy stress along the loading axis (stretch
    /// `lambda`, incompressible state) into this measure.
    pub fn from_cauchy(&self, sigma: f64, lambda: f64) -> f64 {
        match self {
            StressMeasure::Cauchy => sigma,
            StressMeasure::Nominal => sigma / lambda,
        }
    }

    pub fn to_cauchy(&self, value: f64, lambda: f64) -> f64 {
        match self {
            StressMeasure::Cauchy => value,
            StressMeasure::Nominal => value * lambda,
        }
    }
}

impl fmt::Display for StressMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StressMeasure::Cauchy => "cauchy",
            StressMeasure::Nominal => "nominal",
        })
    }
}

impl FromStr for StressMeasure {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cauchy" => Ok(StressMeasure::Cauchy),
            "nominal" => Ok(StressMeasure::Nominal),
            other => Err(format!("unknown stress measure `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentalPoint {
    pub spec: ModeSpec,
    /// Axial stress in `measure`.
    pub stress: f64,
    pub measure: StressMeasure,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    mode: String,
    stretch: f64,
    stress: f64,
    measure: String,
}

/// Parses `mode,stretch,stress,measure` rows. With `target` set, every stress
/// is converted into that measure.
pub fn parse_experimental<R: Read>(r: R, target: Option<StressMeasure>) -> Result<Vec<ExperimentalPoint>, DataError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(r);
    let headers = reader.headers().map_err(|e| DataError::Format { line: 1, message: e.to_string() })?.clone();
    if headers.is_empty() {
        log::warn!("experimental data file is empty");
        return Ok(Vec::new());
    }
    let expected = ["mode", "stretch", "stress", "measure"];
    if headers.iter().map(|h| h.to_ascii_lowercase()).collect::<Vec<_>>() != expected {
        return Err(DataError::Format { line: 1, message: format!("expected header `{}`", expected.join(",")) });
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| DataError::Format {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let parsed: CsvRow = row.deserialize(None).map_err(|e| DataError::Format { line, message: e.to_string() })?;
        let mode: Mode = parsed.mode.parse().map_err(|_| DataError::UnknownMode { line, token: parsed.mode.clone() })?;
        let measure: StressMeasure =
            parsed.measure.parse().map_err(|m| DataError::Format { line, message: m })?;
        let spec = ModeSpec::new(mode, parsed.stretch).map_err(|e| DataError::Format { line, message: e.to_string() })?;
        let (stress, measure) = match target {
            Some(t) if t != measure => (t.from_cauchy(measure.to_cauchy(parsed.stress, spec.lambda), spec.lambda), t),
            _ => (parsed.stress, measure),
        };
        out.push(ExperimentalPoint { spec, stress, measure });
    }
    if out.is_empty() {
        log::warn!("experimental data file has no records");
    }
    Ok(out)
}

pub fn load_experimental(path: &Path, target: Option<StressMeasure>) -> Result<Vec<ExperimentalPoint>, DataError> {
    parse_experimental(fs::File::open(path)?, target)
}
