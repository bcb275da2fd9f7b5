//! Full-batch Adam training of the neural energies against stress data,
//! hard-concrete L0 sparsification, median benchmarks and fit metrics.
//!
//! Every training target is a set of linear functionals of the stretch
//! derivatives `ψₐ = ∂ψ/∂λₐ` (spectral assembly of the Cauchy stress for
//! general deformations, the pressure-eliminated axial stress for test
//! modes). Parameter gradients therefore need `∂ψₐ/∂θ`, which a reverse sweep
//! over a jet-valued tape (values carrying their stretch tangent) delivers
//! in one pass per record.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DualValue, Eval, Jet, NodeId, Tape};
use crate::datagen::{build_dataset, Dataset, ExperimentalPoint, SampleConfig, StressMeasure};
use crate::error::TrainError;
use crate::kinematics::spectral;
use crate::linalg::{self, Vec3};
use crate::loading::{incompressible_mode_stress, Mode, ModeSpec};
use crate::models::{EnergyModel, ModelKind, NeuralArch, NeuralModel};

/// Gate logit at initialization (drop probability 0.1).
pub const INITIAL_LOG_ALPHA: f64 = 2.197_224_577_336_219_6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: ModelKind,
    pub p: f64,
    pub layers: usize,
    pub width: usize,
    pub lr: f64,
    pub epochs: usize,
    pub l0_factor: f64,
    pub seed: u64,
    /// Experimental targets are converted into this measure before fitting.
    pub loss_stress_measure: Option<StressMeasure>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: ModelKind::LambdaPann,
            p: 3.0,
            layers: 2,
            width: 10,
            lr: 1e-3,
            epochs: 100_000,
            l0_factor: 0.0,
            seed: 0,
            loss_stress_measure: None,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.arch.is_neural() {
            return Err(TrainError::InvalidConfig(format!("`{}` has no trainable network", self.arch)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be positive".into()));
        }
        if !(self.p >= 1.0) {
            return Err(TrainError::InvalidConfig(format!("p must be >= 1, got {}", self.p)));
        }
        if !(self.l0_factor >= 0.0) {
            return Err(TrainError::InvalidConfig("l0_factor must be non-negative".into()));
        }
        if self.log_every == 0 {
            return Err(TrainError::InvalidConfig("log_every must be positive".into()));
        }
        Ok(())
    }
}

/// One fitting target: `yₖ = Σₐ W[k][a] ψₐ` compared with `targets[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub stretches: Vec3,
    pub weights: Vec<Vec3>,
    pub targets: Vec<f64>,
    /// Set for test-mode points (used for per-mode metrics).
    pub mode: Option<Mode>,
}

impl FitRecord {
    fn predict(&self, dpsi: &Vec3) -> impl Iterator<Item = f64> + '_ {
        let d = *dpsi;
        self.weights.iter().map(move |w| w[0] * d[0] + w[1] * d[1] + w[2] * d[2])
    }

    /// Record loss and `∂loss/∂ψₐ`.
    fn loss_and_sensitivity(&self, dpsi: &Vec3) -> (f64, Vec3) {
        let k = self.targets.len() as f64;
        let mut loss = 0.0;
        let mut sens = [0.0; 3];
        for ((pred, t), w) in self.predict(dpsi).zip(&self.targets).zip(&self.weights) {
            let r = pred - t;
            loss += r * r;
            for a in 0..3 {
                sens[a] += 2.0 * r * w[a] / k;
            }
        }
        (loss / k, sens)
    }
}

/// Fitting targets with a fingerprint of the source data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub records: Vec<FitRecord>,
    pub fingerprint: String,
}

impl TrainData {
    /// Six independent Cauchy components per record.
    pub fn from_dataset(d: &Dataset) -> Result<Self, TrainError> {
        let mut records = Vec::with_capacity(d.records.len());
        for r in &d.records {
            let s = spectral(&r.f).map_err(|e| TrainError::Model(e.into()))?;
            let weights = (0..6)
                .map(|k| {
                    [0, 1, 2].map(|a| {
                        let n = s.directions[a];
                        let nn = linalg::sym_to_six(&linalg::outer(&n, &n));
                        s.stretches[a] / s.j * nn[k]
                    })
                })
                .collect();
            records.push(FitRecord { stretches: s.stretches, weights, targets: r.sigma.to_vec(), mode: None });
        }
        Ok(Self { records, fingerprint: d.fingerprint() })
    }

    /// Axial stress of each test-mode point, in its declared measure.
    pub fn from_experimental(points: &[ExperimentalPoint]) -> Self {
        let records = points
            .iter()
            .map(|p| {
                let s = p.spec.stretches();
                let scale = p.measure.from_cauchy(1.0, p.spec.lambda);
                // axial stress after pressure elimination through the free direction
                let w = match p.spec.mode {
                    Mode::UT => [s[0], -s[1], 0.0],
                    Mode::ET | Mode::PS => [s[0], 0.0, -s[2]],
                };
                FitRecord { stretches: s, weights: vec![w.map(|x| x * scale)], targets: vec![p.stress], mode: Some(p.spec.mode) }
            })
            .collect();
        let text: String = points
            .iter()
            .map(|p| format!("{},{:?},{:?},{}\n", p.spec.mode, p.spec.lambda, p.stress, p.measure))
            .collect();
        Self { records, fingerprint: crate::models::hex(&<sha2::Sha256 as sha2::Digest>::digest(text.as_bytes())) }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Descending order of the stretches, ties kept in index order.
fn canonical_order(l: &Vec3) -> [usize; 3] {
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| l[b].total_cmp(&l[a]));
    idx
}

/// `∂ψ^growth/∂λₐ = ε(2J − J⁻²)J/λₐ`.
fn growth_gradient(stretches: &Vec3, epsilon: f64) -> Vec3 {
    let j = stretches[0] * stretches[1] * stretches[2];
    let dg = epsilon * (2.0 * j - 1.0 / (j * j));
    stretches.map(|l| dg * j / l)
}

/// Stretch gradient of `ψᴺᴺ` by forward jets (no tape).
fn psi_nn_tangent(arch: &NeuralArch, params: &[Jet], stretches: &Vec3) -> Jet {
    let mut g = Eval::<Jet>::new();
    let order = canonical_order(stretches);
    let l = order.map(|i| Jet::variable(stretches[i], i));
    arch.psi_nn(&mut g, params, l)
}

fn neural_dpsi(n: &NeuralModel, params: &[Jet], stretches: &Vec3) -> Vec3 {
    let y = psi_nn_tangent(&n.arch, params, stretches);
    let gr = growth_gradient(stretches, n.epsilon);
    [0, 1, 2].map(|a| y.d[a] - n.offsets[a] + gr[a])
}

fn model_dpsi(model: &EnergyModel, jets: Option<&[Jet]>, stretches: &Vec3) -> Result<Vec3, TrainError> {
    match (model, jets) {
        (EnergyModel::Neural(n), Some(p)) => Ok(neural_dpsi(n, p, stretches)),
        _ => Ok(model.dpsi_dstretch_at(*stretches)?),
    }
}

fn jet_params(model: &EnergyModel) -> Option<Vec<Jet>> {
    model.as_neural().map(|n| n.effective_params().into_iter().map(Jet::constant).collect())
}

/// Mean record loss (no sparsity penalty).
pub fn data_loss(model: &EnergyModel, data: &TrainData) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let jets = jet_params(model);
    let mut total = 0.0;
    for (i, r) in data.records.iter().enumerate() {
        let d = model_dpsi(model, jets.as_deref(), &r.stretches)?;
        let (l, _) = r.loss_and_sensitivity(&d);
        if !l.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch: 0, record: Some(i) });
        }
        total += l;
    }
    Ok(total / data.len() as f64)
}

/// Data loss plus `l0_factor · Σ P(gate ≠ 0)` when the model carries gates.
pub fn loss(model: &EnergyModel, data: &TrainData, l0_factor: f64) -> Result<f64, TrainError> {
    Ok(data_loss(model, data)? + l0_factor * expected_l0(model))
}

fn expected_l0(model: &EnergyModel) -> f64 {
    match model.as_neural() {
        Some(NeuralModel { log_alpha: Some(la), gate, .. }) => la.iter().map(|a| gate.expected_l0(*a).0).sum(),
        _ => 0.0,
    }
}

/// Reusable reverse-over-forward evaluator for parameter gradients.
struct GradientEngine {
    tape: Tape<Jet>,
    leaves: Vec<NodeId>,
    adj: Vec<Jet>,
}

impl GradientEngine {
    fn new() -> Self {
        Self { tape: Tape::new(), leaves: Vec::new(), adj: Vec::new() }
    }

    /// Puts the parameters on a fresh tape as leaves.
    fn load(&mut self, params: &[f64]) {
        self.tape.clear();
        self.leaves.clear();
        for &w in params {
            self.leaves.push(self.tape.input(Jet::constant(w)));
        }
    }

    /// Records `ψᴺᴺ` at `stretches` on top of the parameter leaves and
    /// returns its jet value.
    fn record(&mut self, arch: &NeuralArch, stretches: &Vec3) -> Result<(NodeId, Jet), TrainError> {
        self.tape.truncate(self.leaves.len());
        let order = canonical_order(stretches);
        let l = order.map(|i| self.tape.input(Jet::variable(stretches[i], i)));
        let out = arch.psi_nn(&mut self.tape, &self.leaves, l);
        self.tape.check().map_err(|e| TrainError::Model(e.into()))?;
        Ok((out, self.tape.node_value(out)))
    }

    /// Adds `Σₐ sens[a] ∂²ψᴺᴺ/∂θ∂λₐ` into `grad`.
    fn backprop(&mut self, out: NodeId, sens: Vec3, grad: &mut [f64]) {
        self.adj.clear();
        self.adj.resize(self.tape.len(), Jet::zero());
        self.adj[out.index()] = Jet::new(0.0, sens);
        self.tape.sweep(&mut self.adj);
        for (g, leaf) in grad.iter_mut().zip(&self.leaves) {
            *g += self.adj[leaf.index()].v;
        }
    }
}

/// Loss and its gradient in the effective parameters `eff`, including the
/// dependence of the stress offsets on the parameters.
fn loss_and_effective_gradient(
    engine: &mut GradientEngine,
    arch: &NeuralArch,
    eff: &[f64],
    epsilon: f64,
    data: &TrainData,
    epoch: usize,
) -> Result<(f64, Vec<f64>), TrainError> {
    let n = data.len() as f64;
    let mut grad = vec![0.0; eff.len()];
    engine.load(eff);
    let (_, id_val) = engine.record(arch, &[1.0, 1.0, 1.0])?;
    let offsets = id_val.d.map(|d| d + epsilon);
    let mut offset_sens = [0.0; 3];
    let mut total = 0.0;
    for (i, r) in data.records.iter().enumerate() {
        let (out, y) = engine.record(arch, &r.stretches)?;
        let gr = growth_gradient(&r.stretches, epsilon);
        let dpsi = [0, 1, 2].map(|a| y.d[a] - offsets[a] + gr[a]);
        let (l, sens) = r.loss_and_sensitivity(&dpsi);
        if !l.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, record: Some(i) });
        }
        total += l;
        let sens = sens.map(|s| s / n);
        for a in 0..3 {
            offset_sens[a] -= sens[a];
        }
        engine.backprop(out, sens, &mut grad);
    }
    // offsets o = ∂ψᴺᴺ/∂λ|_I + ε depend on θ as well
    let (id_out, _) = engine.record(arch, &[1.0, 1.0, 1.0])?;
    engine.backprop(id_out, offset_sens, &mut grad);
    Ok((total / n, grad))
}

/// Data loss and its gradient in the raw parameters (test-time gates, offsets
/// recalibrated as a function of the parameters).
pub fn loss_gradient(model: &NeuralModel, data: &TrainData) -> Result<(f64, Vec<f64>), TrainError> {
    if data.is_empty() {
        return Err(TrainError::InvalidConfig("empty training data".into()));
    }
    let eff = model.effective_params();
    let mut engine = GradientEngine::new();
    let (l, mut g) = loss_and_effective_gradient(&mut engine, &model.arch, &eff, model.epsilon, data, 0)?;
    if let Some(la) = &model.log_alpha {
        for (gi, a) in g.iter_mut().zip(la) {
            *gi *= model.gate.deterministic(*a);
        }
    }
    Ok((l, g))
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub extrap_loss: Option<f64>,
    pub active_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub num_params: usize,
    pub data_fingerprint: String,
    pub history: Vec<LossPoint>,
    pub final_train_mse: f64,
    pub final_extrap_mse: Option<f64>,
    pub r_squared: Option<BTreeMap<String, f64>>,
    pub initial_active_params: usize,
    pub final_active_params: usize,
    /// Not serialized so that reports of identical runs stay byte-identical.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `epoch,train_loss,extrap_loss,active_params` rows.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,extrap_loss,active_params\n");
        for p in &self.history {
            let ex = p.extrap_loss.map(|x| format!("{x:e}")).unwrap_or_default();
            out.push_str(&format!("{},{:e},{},{}\n", p.epoch, p.train_loss, ex, p.active_params));
        }
        out
    }

    pub fn loss_at(&self, epoch: usize) -> Option<&LossPoint> {
        self.history.iter().find(|p| p.epoch == epoch)
    }
}

pub fn train(cfg: &TrainConfig, train_data: &TrainData, eval_data: Option<&TrainData>) -> Result<(EnergyModel, TrainReport), TrainError> {
    train_with_progress(cfg, train_data, eval_data, |_| {})
}

/// Full-batch Adam; `progress` sees every logged point.
pub fn train_with_progress(
    cfg: &TrainConfig,
    train_data: &TrainData,
    eval_data: Option<&TrainData>,
    mut progress: impl FnMut(&LossPoint),
) -> Result<(EnergyModel, TrainReport), TrainError> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(TrainError::InvalidConfig("empty training data".into()));
    }
    let started = Instant::now();
    let mut nm = NeuralModel::new(cfg.arch, cfg.layers, cfg.width, cfg.p, cfg.seed)?;
    let gated = cfg.l0_factor > 0.0;
    if gated {
        nm.enable_gates(INITIAL_LOG_ALPHA);
    }
    nm.data_fingerprint = Some(train_data.fingerprint.clone());
    let n = nm.num_params();
    let mut adam_w = Adam::new(n);
    let mut adam_a = Adam::new(n);
    let mut engine = GradientEngine::new();
    let mut eff = vec![0.0; n];
    let mut gate_val = vec![1.0; n];
    let mut gate_grad = vec![0.0; n];
    let initial_active = nm.active_params();
    let mut history = Vec::new();

    for epoch in 0..cfg.epochs {
        // gate noise: stream keyed on (seed, epoch), one draw per weight in order
        if let Some(la) = &nm.log_alpha {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64);
            for i in 0..n {
                let u: f64 = rng.gen::<f64>().clamp(1e-12, 1.0 - 1e-12);
                let (z, dz) = nm.gate.sample_with_grad(la[i], u);
                gate_val[i] = z;
                gate_grad[i] = dz;
            }
        }
        for i in 0..n {
            eff[i] = nm.params[i] * gate_val[i];
        }
        let (l, g_eff) = loss_and_effective_gradient(&mut engine, &nm.arch, &eff, nm.epsilon, train_data, epoch)?;
        let penalty = match &nm.log_alpha {
            Some(la) => cfg.l0_factor * la.iter().map(|a| nm.gate.expected_l0(*a).0).sum::<f64>(),
            None => 0.0,
        };
        let train_loss = l + penalty;
        if !train_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, record: None });
        }
        if epoch % cfg.log_every == 0 {
            let point = log_point(&nm, epoch, train_loss, eval_data)?;
            progress(&point);
            history.push(point);
        }

        let g_raw: Vec<f64> = (0..n).map(|i| g_eff[i] * gate_val[i]).collect();
        if let Some(la) = nm.log_alpha.as_mut() {
            let g_la: Vec<f64> = (0..n)
                .map(|i| g_eff[i] * nm.params[i] * gate_grad[i] + cfg.l0_factor * nm.gate.expected_l0(la[i]).1)
                .collect();
            adam_a.step(la, &g_la, cfg.lr);
        }
        adam_w.step(&mut nm.params, &g_raw, cfg.lr);
        nm.project_constraints();
        nm.set_offsets();
    }

    let model = EnergyModel::Neural(nm);
    let final_train = data_loss(&model, train_data)?;
    let final_extrap = eval_data.map(|d| data_loss(&model, d)).transpose()?;
    let final_point = LossPoint {
        epoch: cfg.epochs,
        train_loss: final_train + cfg.l0_factor * expected_l0(&model),
        extrap_loss: final_extrap,
        active_params: model.as_neural().map(|m| m.active_params()).unwrap_or(0),
    };
    progress(&final_point);
    history.push(final_point);
    let r2 = if train_data.records.iter().any(|r| r.mode.is_some()) {
        let mut map = BTreeMap::new();
        for d in std::iter::once(train_data).chain(eval_data) {
            if let Ok(v) = r_squared_records(&model, &d.records) {
                for (m, r) in v {
                    map.insert(m.to_string(), r);
                }
            }
        }
        Some(map)
    } else {
        None
    };
    let nm = model.as_neural().expect("neural");
    let report = TrainReport {
        config: cfg.clone(),
        num_params: n,
        data_fingerprint: train_data.fingerprint.clone(),
        history,
        final_train_mse: final_train,
        final_extrap_mse: final_extrap,
        r_squared: r2,
        initial_active_params: initial_active,
        final_active_params: nm.active_params(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

fn log_point(nm: &NeuralModel, epoch: usize, train_loss: f64, eval: Option<&TrainData>) -> Result<LossPoint, TrainError> {
    let extrap = match eval {
        Some(d) => {
            // evaluation uses test-time gates and freshly calibrated offsets
            let mut frozen = nm.clone();
            frozen.set_offsets();
            Some(data_loss(&EnergyModel::Neural(frozen), d)?)
        }
        None => None,
    };
    Ok(LossPoint { epoch, train_loss, extrap_loss: extrap, active_params: nm.active_params() })
}

/// `1 − SS_res/SS_tot` per mode over test-mode points, in each point's measure.
pub fn r_squared(model: &EnergyModel, points: &[ExperimentalPoint]) -> Result<Vec<(Mode, f64)>, TrainError> {
    if points.is_empty() {
        return Err(TrainError::InvalidConfig("no curves to evaluate".into()));
    }
    let mut out = Vec::new();
    for mode in Mode::ALL {
        let pts: Vec<_> = points.iter().filter(|p| p.spec.mode == mode).collect();
        if pts.is_empty() {
            continue;
        }
        let mut obs = Vec::with_capacity(pts.len());
        let mut pred = Vec::with_capacity(pts.len());
        for p in pts {
            let s = incompressible_mode_stress(model, &p.spec)?;
            pred.push(p.measure.from_cauchy(s[0], p.spec.lambda));
            obs.push(p.stress);
        }
        out.push((mode, r2(&obs, &pred, mode)?));
    }
    Ok(out)
}

fn r_squared_records(model: &EnergyModel, records: &[FitRecord]) -> Result<Vec<(Mode, f64)>, TrainError> {
    let jets = jet_params(model);
    let mut out = Vec::new();
    for mode in Mode::ALL {
        let mut obs = Vec::new();
        let mut pred = Vec::new();
        for r in records.iter().filter(|r| r.mode == Some(mode)) {
            let d = model_dpsi(model, jets.as_deref(), &r.stretches)?;
            pred.extend(r.predict(&d));
            obs.extend(&r.targets);
        }
        if !obs.is_empty() {
            out.push((mode, r2(&obs, &pred, mode)?));
        }
    }
    Ok(out)
}

fn r2(obs: &[f64], pred: &[f64], mode: Mode) -> Result<f64, TrainError> {
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let ss_tot: f64 = obs.iter().map(|o| (o - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(TrainError::DegenerateVariance(mode.to_string()));
    }
    let ss_res: f64 = obs.iter().zip(pred).map(|(o, p)| (o - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Architecture selector `kind[:p=..,layers=..,width=..]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ModelKind,
    pub p: f64,
    pub layers: usize,
    pub width: usize,
}

impl ArchSpec {
    pub fn new(kind: ModelKind) -> Self {
        let width = if kind == ModelKind::IPann { 23 } else { 10 };
        Self { kind, p: 3.0, layers: 2, width }
    }

    pub fn label(&self) -> String {
        match self.kind {
            ModelKind::IPann => format!("{}-l{}w{}", self.kind, self.layers, self.width),
            _ => format!("{}-p{}-l{}w{}", self.kind, self.p, self.layers, self.width),
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig { arch: self.kind, p: self.p, layers: self.layers, width: self.width, ..base.clone() }
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for ArchSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, opts) = match s.split_once(':') {
            Some((k, o)) => (k, Some(o)),
            None => (s, None),
        };
        let kind: ModelKind = kind.trim().parse()?;
        if !kind.is_neural() {
            return Err(format!("`{kind}` is not a trainable architecture"));
        }
        let mut spec = ArchSpec::new(kind);
        for kv in opts.into_iter().flat_map(|o| o.split(',')) {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected key=value, got `{kv}`"))?;
            let bad = |_| format!("bad value for `{k}`: `{v}`");
            match k.trim() {
                "p" => spec.p = v.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "layers" => spec.layers = v.trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "width" => spec.width = v.trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                other => return Err(format!("unknown architecture option `{other}`")),
            }
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianPoint {
    pub epoch: usize,
    pub median_train: f64,
    pub median_extrap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchBenchmark {
    pub arch: ArchSpec,
    pub label: String,
    pub history: Vec<MedianPoint>,
    pub final_train: Vec<f64>,
    pub final_extrap: Vec<f64>,
}

impl ArchBenchmark {
    pub fn final_median_train(&self) -> f64 {
        median(&self.final_train)
    }

    pub fn final_median_extrap(&self) -> f64 {
        median(&self.final_extrap)
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,median_train_loss,median_extrap_loss\n");
        for p in &self.history {
            let ex = p.median_extrap.map(|x| format!("{x:e}")).unwrap_or_default();
            out.push_str(&format!("{},{:e},{}\n", p.epoch, p.median_train, ex));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub fixtures: Vec<String>,
    pub archs: Vec<ArchBenchmark>,
}

impl BenchReport {
    /// Plain-text table of final medians.
    pub fn summary(&self) -> String {
        let mut out = format!("{:<36} {:>16} {:>16}\n", "arch", "median_train", "median_extrap");
        for a in &self.archs {
            out.push_str(&format!("{:<36} {:>16.6e} {:>16.6e}\n", a.label, a.final_median_train(), a.final_median_extrap()));
        }
        out
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Sampling protocol of a benchmark: training and extrapolation sets share
/// their deformation gradients across fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchData {
    pub train: SampleConfig,
    pub extrap: SampleConfig,
}

impl Default for BenchData {
    fn default() -> Self {
        Self { train: SampleConfig { delta: 0.2, n: 200, seed: 0 }, extrap: SampleConfig { delta: 0.3, n: 500, seed: 1 } }
    }
}

/// Builds the train/extrapolation sets of one ground truth.
pub fn fixture_data(truth: &EnergyModel, data: &BenchData) -> Result<(TrainData, TrainData), TrainError> {
    let tr = build_dataset(&data.train, truth)?;
    let ex = build_dataset(&data.extrap, truth)?;
    Ok((TrainData::from_dataset(&tr)?, TrainData::from_dataset(&ex)?))
}

/// Trains every architecture on every fixture and reports medians.
pub fn median_benchmark(
    archs: &[ArchSpec],
    fixtures: &[(String, EnergyModel)],
    cfg: &TrainConfig,
    data: &BenchData,
    mut on_run: impl FnMut(&ArchSpec, &str, &TrainReport),
) -> Result<BenchReport, TrainError> {
    if fixtures.is_empty() || archs.is_empty() {
        return Err(TrainError::InvalidConfig("benchmark needs at least one fixture and one architecture".into()));
    }
    let sets: Vec<(TrainData, TrainData)> =
        fixtures.iter().map(|(_, m)| fixture_data(m, data)).collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for arch in archs {
        let acfg = arch.apply(cfg);
        let mut reports = Vec::new();
        for ((name, _), (tr, ex)) in fixtures.iter().zip(&sets) {
            let (_, rep) = train(&acfg, tr, Some(ex))?;
            on_run(arch, name, &rep);
            reports.push(rep);
        }
        let history = reports[0]
            .history
            .iter()
            .enumerate()
            .map(|(i, p)| MedianPoint {
                epoch: p.epoch,
                median_train: median(&reports.iter().map(|r| r.history[i].train_loss).collect::<Vec<_>>()),
                median_extrap: Some(median(
                    &reports.iter().map(|r| r.history[i].extrap_loss.unwrap_or(f64::NAN)).collect::<Vec<_>>(),
                )),
            })
            .collect();
        out.push(ArchBenchmark {
            arch: *arch,
            label: arch.label(),
            history,
            final_train: reports.iter().map(|r| r.final_train_mse).collect(),
            final_extrap: reports.iter().map(|r| r.final_extrap_mse.unwrap_or(f64::NAN)).collect(),
        });
    }
    Ok(BenchReport { fixtures: fixtures.iter().map(|(n, _)| n.clone()).collect(), archs: out })
}

/// Mode specs on a uniform stretch grid.
pub fn stretch_grid(mode: Mode, lmin: f64, lmax: f64, steps: usize) -> Vec<ModeSpec> {
    (0..steps)
        .map(|i| {
            let t = if steps > 1 { i as f64 / (steps - 1) as f64 } else { 0.0 };
            ModeSpec { mode, lambda: lmin + t * (lmax - lmin) }
        })
        .collect()
}
