//! Strain-energy models behind one interface: the principal-stretch PANN and
//! its ablations, the invariant-based PANN baseline, and closed-form
//! Ogden-family energies.
//!
//! Every energy is written once against [`Graph`] as a function of the three
//! principal stretches, so the same code yields values, exact stretch
//! derivatives (reverse tape) and parameter sensitivities of stresses
//! (jet-valued tape, see the training module).

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Eval, Graph, Jet, Tape};
use crate::error::ModelError;
use crate::kinematics::{spectral, DefGrad, SpectralState};
use crate::linalg::{Mat3, Vec3};
use crate::networks::{HardConcrete, HolderSet, LayerStack, ParamAllocator};

pub const SCHEMA_VERSION: u32 = 1;
/// Growth-term weight `ε` in `ε(1/J + J²)`.
pub const DEFAULT_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LambdaPann,
    LambdaPannNophi,
    LambdaPannAdditive,
    IPann,
    OgdenIncompressible,
    OgdenCompressible,
    OgdenGeneralizedInvariant,
    OgdenLedret,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::LambdaPann,
        ModelKind::LambdaPannNophi,
        ModelKind::LambdaPannAdditive,
        ModelKind::IPann,
        ModelKind::OgdenIncompressible,
        ModelKind::OgdenCompressible,
        ModelKind::OgdenGeneralizedInvariant,
        ModelKind::OgdenLedret,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::LambdaPann => "lambda-pann",
            ModelKind::LambdaPannNophi => "lambda-pann-nophi",
            ModelKind::LambdaPannAdditive => "lambda-pann-additive",
            ModelKind::IPann => "i-pann",
            ModelKind::OgdenIncompressible => "ogden-incompressible",
            ModelKind::OgdenCompressible => "ogden-compressible",
            ModelKind::OgdenGeneralizedInvariant => "ogden-generalized-invariant",
            ModelKind::OgdenLedret => "ogden-ledret",
        }
    }

    pub fn is_neural(&self) -> bool {
        matches!(
            self,
            ModelKind::LambdaPann | ModelKind::LambdaPannNophi | ModelKind::LambdaPannAdditive | ModelKind::IPann
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .iter()
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown model kind `{s}`"))
    }
}

/// Parameters of the Ogden energies. `kappa`/`beta` are ignored by the
/// incompressible form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OgdenParams {
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
    pub kappa: f64,
    pub beta: f64,
}

impl OgdenParams {
    /// Polyconvexity conditions `μᵢαᵢ > 0`, `|αᵢ| > 1` (and `κ, β > 0` when compressible).
    pub fn validate(&self, compressible: bool) -> Result<(), ModelError> {
        if self.mu.len() != self.alpha.len() || self.mu.is_empty() {
            return Err(ModelError::InvalidParams("mu and alpha must be non-empty and equally long".into()));
        }
        for (i, (m, a)) in self.mu.iter().zip(&self.alpha).enumerate() {
            if !(m * a > 0.0) || !(a.abs() > 1.0) {
                return Err(ModelError::InvalidParams(format!("term {i}: need mu*alpha > 0 and |alpha| > 1 (mu={m}, alpha={a})")));
            }
        }
        if compressible && !(self.kappa > 0.0 && self.beta > 0.0) {
            return Err(ModelError::InvalidParams(format!("need kappa > 0 and beta > 0 (kappa={}, beta={})", self.kappa, self.beta)));
        }
        Ok(())
    }
}

/// Invariant-based generalized Ogden coefficients; `c_i0[k]` multiplies
/// `(Ī₁ - 3)^{k+1}` and `c_0j[k]` multiplies `(Ī₂^{3/2} - 3√3)^{k+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenOgdenParams {
    pub c_i0: Vec<f64>,
    pub c_0j: Vec<f64>,
    pub kappa: f64,
}

impl GenOgdenParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.c_i0.iter().chain(&self.c_0j).chain(std::iter::once(&self.kappa)).any(|c| !(*c >= 0.0)) {
            return Err(ModelError::InvalidParams("generalized Ogden coefficients must be non-negative".into()));
        }
        Ok(())
    }
}

/// General Ogden expansion in the eigenvalues of `U` and `cof U` with the
/// volumetric closure `κ(J² + J⁻² - 2)`. `offsets` are filled by calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeDretParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub kappa: f64,
    #[serde(default)]
    pub offsets: [f64; 3],
}

/// Wiring of a neural energy.
#[derive(Debug, Clone, PartialEq)]
pub enum NeuralArch {
    /// `ψᴺᴺ(ψ_F, ψ_cofF, J, -2J)` through a monotone convex outer stack.
    Nested { psi_f: HolderSet, psi_cof: HolderSet, outer: LayerStack },
    /// `ψ_F + ψ_cofF + ψ_J(J)`.
    Additive { psi_f: HolderSet, psi_cof: HolderSet, psi_j: LayerStack },
    /// `ψᴺᴺ(I₁, I₂, J, -2J)` with `I₁ = tr C`, `I₂ = tr cof C`.
    Invariant { stack: LayerStack },
}

impl NeuralArch {
    pub fn build(kind: ModelKind, layers: usize, width: usize, p: f64) -> Result<(Self, usize), ModelError> {
        if layers == 0 || width == 0 {
            return Err(ModelError::InvalidParams("layers and width must be positive".into()));
        }
        if !(p >= 1.0) {
            return Err(ModelError::InvalidParams(format!("deep-set exponent must be >= 1, got {p}")));
        }
        let widths = vec![width; layers];
        let mut alloc = ParamAllocator::new();
        let arch = match kind {
            ModelKind::LambdaPann | ModelKind::LambdaPannNophi => {
                let with_phi = kind == ModelKind::LambdaPann;
                let psi_f = HolderSet::new(&mut alloc, &widths, p, with_phi);
                let psi_cof = HolderSet::new(&mut alloc, &widths, p, with_phi);
                let outer = alloc.stack(4, widths.clone(), true, false);
                NeuralArch::Nested { psi_f, psi_cof, outer }
            }
            ModelKind::LambdaPannAdditive => {
                let psi_f = HolderSet::new(&mut alloc, &widths, p, true);
                let psi_cof = HolderSet::new(&mut alloc, &widths, p, true);
                let psi_j = alloc.stack(1, widths.clone(), false, false);
                NeuralArch::Additive { psi_f, psi_cof, psi_j }
            }
            ModelKind::IPann => NeuralArch::Invariant { stack: alloc.stack(4, widths.clone(), true, false) },
            other => return Err(ModelError::InvalidParams(format!("`{other}` is not a neural kind"))),
        };
        Ok((arch, alloc.total()))
    }

    pub fn stacks(&self) -> Vec<&LayerStack> {
        match self {
            NeuralArch::Nested { psi_f, psi_cof, outer } => {
                psi_f.stacks().chain(psi_cof.stacks()).chain(std::iter::once(outer)).collect()
            }
            NeuralArch::Additive { psi_f, psi_cof, psi_j } => {
                psi_f.stacks().chain(psi_cof.stacks()).chain(std::iter::once(psi_j)).collect()
            }
            NeuralArch::Invariant { stack } => vec![stack],
        }
    }

    /// `ψᴺᴺ` at stretches `l` (any order; callers pass descending order for
    /// bitwise permutation invariance).
    pub fn psi_nn<G: Graph>(&self, g: &mut G, params: &[G::Var], l: [G::Var; 3]) -> G::Var {
        let l01 = g.mul(l[0], l[1]);
        let j = g.mul(l01, l[2]);
        let cof = [g.mul(l[1], l[2]), g.mul(l[0], l[2]), l01];
        match self {
            NeuralArch::Nested { .. } | NeuralArch::Additive { .. } => {
                self.psi_nn_args(g, params, &[l[0], l[1], l[2], cof[0], cof[1], cof[2], j])
            }
            NeuralArch::Invariant { .. } => {
                let sq = l.map(|x| g.mul(x, x));
                let i1 = g.sum(&sq);
                let csq = cof.map(|x| g.mul(x, x));
                let i2 = g.sum(&csq);
                self.psi_nn_args(g, params, &[i1, i2, j])
            }
        }
    }

    /// `ψᴺᴺ` on its polyconvex arguments: `(x₁..x₃, y₁..y₃, J)` standing for
    /// the stretches, their pairwise products and the Jacobian, or
    /// `(I₁, I₂, J)` for the invariant wiring. The `-2J` channel is derived.
    pub fn psi_nn_args<G: Graph>(&self, g: &mut G, params: &[G::Var], args: &[G::Var]) -> G::Var {
        match self {
            NeuralArch::Nested { psi_f, psi_cof, outer } => {
                let pf = psi_f.forward(g, params, [args[0], args[1], args[2]]);
                let pc = psi_cof.forward(g, params, [args[3], args[4], args[5]]);
                let mj = g.scale(args[6], -2.0);
                outer.forward(g, params, &[pf, pc, args[6], mj])
            }
            NeuralArch::Additive { psi_f, psi_cof, psi_j } => {
                let pf = psi_f.forward(g, params, [args[0], args[1], args[2]]);
                let pc = psi_cof.forward(g, params, [args[3], args[4], args[5]]);
                let pj = psi_j.forward(g, params, &[args[6]]);
                let s = g.add(pf, pc);
                g.add(s, pj)
            }
            NeuralArch::Invariant { stack } => {
                let mj = g.scale(args[2], -2.0);
                stack.forward(g, params, &[args[0], args[1], args[2], mj])
            }
        }
    }

    /// Number of polyconvex arguments taken by [`NeuralArch::psi_nn_args`].
    pub fn num_args(&self) -> usize {
        match self {
            NeuralArch::Invariant { .. } => 3,
            _ => 7,
        }
    }
}

/// Growth term `ε(1/J + J²)`.
pub fn growth<G: Graph>(g: &mut G, j: G::Var, epsilon: f64) -> G::Var {
    let inv = g.powf(j, -1.0);
    let sq = g.mul(j, j);
    let s = g.add(inv, sq);
    g.scale(s, epsilon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    pub kind: ModelKind,
    pub layers: usize,
    pub width: usize,
    pub p: f64,
    pub arch: NeuralArch,
    /// Raw parameters; constrained entries are kept non-negative by projection.
    pub params: Vec<f64>,
    pub constrained: Vec<bool>,
    /// Per-parameter hard-concrete gate logits, when L0 sparsification is on.
    pub log_alpha: Option<Vec<f64>>,
    pub gate: HardConcrete,
    pub offsets: Vec3,
    /// `ψᴺᴺ(1,1,1,1,1,1,1,-2)`.
    pub psi_ref: f64,
    pub epsilon: f64,
    pub data_fingerprint: Option<String>,
}

impl NeuralModel {
    /// Freshly initialized, calibrated model.
    pub fn new(kind: ModelKind, layers: usize, width: usize, p: f64, seed: u64) -> Result<Self, ModelError> {
        let (arch, n) = NeuralArch::build(kind, layers, width, p)?;
        let mut params = vec![0.0; n];
        let mut constrained = vec![false; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in arch.stacks() {
            s.initialize(&mut rng, &mut params);
            s.mark_constrained(&mut constrained);
        }
        let mut m = Self {
            kind,
            layers,
            width,
            p,
            arch,
            params,
            constrained,
            log_alpha: None,
            gate: HardConcrete::default(),
            offsets: [0.0; 3],
            psi_ref: 0.0,
            epsilon: DEFAULT_EPSILON,
            data_fingerprint: None,
        };
        m.set_offsets();
        Ok(m)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Parameters with test-time gates applied.
    pub fn effective_params(&self) -> Vec<f64> {
        match &self.log_alpha {
            None => self.params.clone(),
            Some(la) => self.params.iter().zip(la).map(|(w, a)| w * self.gate.deterministic(*a)).collect(),
        }
    }

    /// Parameters whose test-time gate is non-zero (all of them without gates).
    pub fn active_params(&self) -> usize {
        match &self.log_alpha {
            None => self.params.len(),
            Some(la) => la.iter().filter(|a| self.gate.deterministic(**a) != 0.0).count(),
        }
    }

    pub fn enable_gates(&mut self, initial_log_alpha: f64) {
        self.log_alpha = Some(vec![initial_log_alpha; self.params.len()]);
        self.set_offsets();
    }

    pub fn project_constraints(&mut self) {
        for s in self.arch.stacks() {
            s.project_constraints(&mut self.params);
        }
    }

    /// Recomputes the energy shift and the stress offsets
    /// `oₐ = ∂ψᴺᴺ/∂λₐ|_I + ∂ψ^growth/∂λₐ|_I` from the current parameters.
    pub fn set_offsets(&mut self) {
        let eff = self.effective_params();
        let (psi, d) = identity_response(&self.arch, &eff);
        self.psi_ref = psi;
        // ∂/∂λₐ ε(1/J + J²) at J = 1 is ε(2 - 1) = ε
        self.offsets = d.map(|x| x + self.epsilon);
    }

    /// Total energy on an arbitrary graph; `params` are the effective parameters.
    pub fn energy_graph<G: Graph>(&self, g: &mut G, params: &[G::Var], l: [G::Var; 3]) -> G::Var {
        let nn = self.arch.psi_nn(g, params, l);
        let mut e = g.add_const(nn, -self.psi_ref);
        for a in 0..3 {
            let shifted = g.add_const(l[a], -1.0);
            let t = g.scale(shifted, -self.offsets[a]);
            e = g.add(e, t);
        }
        let l01 = g.mul(l[0], l[1]);
        let j = g.mul(l01, l[2]);
        let gr = growth(g, j, self.epsilon);
        g.add(e, gr)
    }
}

/// `ψᴺᴺ` and its stretch gradient at `F = I`.
pub fn identity_response(arch: &NeuralArch, params: &[f64]) -> (f64, Vec3) {
    let mut g = Eval::<Jet>::new();
    let p: Vec<Jet> = params.iter().map(|&w| Jet::constant(w)).collect();
    let l = [0, 1, 2].map(|a| Jet::variable(1.0, a));
    let out = arch.psi_nn(&mut g, &p, l);
    (out.v, out.d)
}

use crate::autodiff::DualValue;

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum EnergyModel {
    Neural(NeuralModel),
    Ogden { params: OgdenParams, compressible: bool },
    GenOgden(GenOgdenParams),
    LeDret(LeDretParams),
}

/// Descending-order permutation of three values.
fn canonical_order(l: &Vec3) -> [usize; 3] {
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| l[b].total_cmp(&l[a]));
    idx
}

impl EnergyModel {
    pub fn ogden_compressible(params: OgdenParams) -> Result<Self, ModelError> {
        params.validate(true)?;
        Ok(EnergyModel::Ogden { params, compressible: true })
    }

    pub fn ogden_incompressible(mu: Vec<f64>, alpha: Vec<f64>) -> Result<Self, ModelError> {
        let params = OgdenParams { mu, alpha, kappa: 0.0, beta: 0.0 };
        params.validate(false)?;
        Ok(EnergyModel::Ogden { params, compressible: false })
    }

    pub fn gen_ogden(params: GenOgdenParams) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(EnergyModel::GenOgden(params))
    }

    pub fn ledret(a: Vec<f64>, b: Vec<f64>, kappa: f64) -> Result<Self, ModelError> {
        if !(kappa >= 0.0) {
            return Err(ModelError::InvalidParams("kappa must be non-negative".into()));
        }
        Ok(EnergyModel::LeDret(LeDretParams { a, b, kappa, offsets: [0.0; 3] }))
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            EnergyModel::Neural(n) => n.kind,
            EnergyModel::Ogden { compressible: true, .. } => ModelKind::OgdenCompressible,
            EnergyModel::Ogden { compressible: false, .. } => ModelKind::OgdenIncompressible,
            EnergyModel::GenOgden(_) => ModelKind::OgdenGeneralizedInvariant,
            EnergyModel::LeDret(_) => ModelKind::OgdenLedret,
        }
    }

    pub fn is_incompressible(&self) -> bool {
        matches!(self, EnergyModel::Ogden { compressible: false, .. })
    }

    pub fn as_neural(&self) -> Option<&NeuralModel> {
        match self {
            EnergyModel::Neural(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_neural_mut(&mut self) -> Option<&mut NeuralModel> {
        match self {
            EnergyModel::Neural(n) => Some(n),
            _ => None,
        }
    }

    /// Brings the model to a stress-free reference state: stress offsets for
    /// the neural kinds and the general Ogden expansion; a no-op for the
    /// closed forms that are normalized analytically.
    pub fn calibrate(&mut self) -> Result<(), ModelError> {
        match self {
            EnergyModel::Neural(n) => n.set_offsets(),
            EnergyModel::LeDret(p) => {
                p.offsets = [0.0; 3];
                let d = stretch_gradient(self, [1.0, 1.0, 1.0])?;
                if let EnergyModel::LeDret(p) = self {
                    p.offsets = d;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Energy graph at stretches already in descending order.
    fn energy_sorted<G: Graph>(&self, g: &mut G, neural_params: Option<&[G::Var]>, l: [G::Var; 3]) -> G::Var {
        match self {
            EnergyModel::Neural(n) => n.energy_graph(g, neural_params.expect("neural parameters"), l),
            EnergyModel::Ogden { params, compressible } => ogden_energy(g, params, *compressible, l),
            EnergyModel::GenOgden(p) => gen_ogden_energy(g, p, l),
            EnergyModel::LeDret(p) => ledret_energy_graph(g, p, l),
        }
    }

    /// Strain energy at arbitrary (unordered) stretches.
    pub fn energy_at(&self, stretches: Vec3) -> Result<f64, ModelError> {
        let order = canonical_order(&stretches);
        let mut g = Eval::<f64>::new();
        let l = order.map(|i| stretches[i]);
        let e = match self {
            EnergyModel::Neural(n) => {
                let p = n.effective_params();
                self.energy_sorted(&mut g, Some(&p), l)
            }
            _ => self.energy_sorted(&mut g, None, l),
        };
        g.check()?;
        Ok(e)
    }

    pub fn energy(&self, s: &SpectralState) -> Result<f64, ModelError> {
        self.energy_at(s.stretches)
    }

    /// Exact `∂ψ/∂λₐ` from a reverse sweep, at arbitrary (unordered) stretches.
    pub fn dpsi_dstretch_at(&self, stretches: Vec3) -> Result<Vec3, ModelError> {
        stretch_gradient(self, stretches)
    }

    pub fn dpsi_dstretch(&self, s: &SpectralState) -> Result<Vec3, ModelError> {
        stretch_gradient(self, s.stretches)
    }

    /// Principal Cauchy stresses `σₐ = (λₐ/J) ∂ψ/∂λₐ`.
    pub fn principal_stress(&self, stretches: Vec3) -> Result<Vec3, ModelError> {
        let d = self.dpsi_dstretch_at(stretches)?;
        let j = stretches[0] * stretches[1] * stretches[2];
        Ok([0, 1, 2].map(|a| stretches[a] / j * d[a]))
    }

    /// Cauchy stress `σ = Σ (λₐ/J)(∂ψ/∂λₐ) nₐ⊗nₐ`.
    pub fn cauchy_stress(&self, f: &DefGrad) -> Result<Mat3, ModelError> {
        if self.is_incompressible() {
            return Err(ModelError::IncompressibleUnsupported(self.kind().to_string()));
        }
        let s = spectral(f)?;
        let d = self.dpsi_dstretch(&s)?;
        Ok(assemble_stress(&s, &d))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from_model(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Format {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        file.into_model()
    }

    /// SHA-256 of the serialized model.
    pub fn fingerprint(&self) -> String {
        hex(&Sha256::digest(self.to_json().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `σ = Σₐ (λₐ/J) ψₐ nₐ⊗nₐ`.
pub fn assemble_stress(s: &SpectralState, dpsi: &Vec3) -> Mat3 {
    let mut sigma = [[0.0; 3]; 3];
    for a in 0..3 {
        let c = s.stretches[a] / s.j * dpsi[a];
        let n = &s.directions[a];
        for i in 0..3 {
            for k in 0..3 {
                sigma[i][k] += c * n[i] * n[k];
            }
        }
    }
    // exact symmetry
    for i in 0..3 {
        for k in (i + 1)..3 {
            let avg = 0.5 * (sigma[i][k] + sigma[k][i]);
            sigma[i][k] = avg;
            sigma[k][i] = avg;
        }
    }
    sigma
}

fn stretch_gradient(model: &EnergyModel, stretches: Vec3) -> Result<Vec3, ModelError> {
    let order = canonical_order(&stretches);
    let mut tape = Tape::<f64>::new();
    let leaves = order.map(|i| tape.input(stretches[i]));
    let out = match model {
        EnergyModel::Neural(n) => {
            let eff = n.effective_params();
            let p: Vec<_> = eff.iter().map(|&w| tape.input(w)).collect();
            model.energy_sorted(&mut tape, Some(&p), leaves)
        }
        _ => model.energy_sorted(&mut tape, None, leaves),
    };
    let grad = tape.gradient(out, &leaves)?;
    let mut d = [0.0; 3];
    for (k, &i) in order.iter().enumerate() {
        d[i] = grad[k];
    }
    Ok(d)
}

fn jacobian<G: Graph>(g: &mut G, l: &[G::Var; 3]) -> G::Var {
    let l01 = g.mul(l[0], l[1]);
    g.mul(l01, l[2])
}

fn ogden_energy<G: Graph>(g: &mut G, p: &OgdenParams, compressible: bool, l: [G::Var; 3]) -> G::Var {
    let mut e = g.constant(0.0);
    if compressible {
        let j = jacobian(g, &l);
        let jm = g.powf(j, -1.0 / 3.0);
        let bar = l.map(|x| g.mul(jm, x));
        for (mu, alpha) in p.mu.iter().zip(&p.alpha) {
            let terms = bar.map(|x| g.powf(x, *alpha));
            let s = g.sum(&terms);
            let s = g.add_const(s, -3.0);
            let t = g.scale(s, mu / alpha);
            e = g.add(e, t);
        }
        let lnj = g.ln(j);
        let lnj = g.scale(lnj, p.beta);
        let jb = g.powf(j, -p.beta);
        let v = g.add(lnj, jb);
        let v = g.add_const(v, -1.0);
        let v = g.scale(v, p.kappa / (p.beta * p.beta));
        g.add(e, v)
    } else {
        for (mu, alpha) in p.mu.iter().zip(&p.alpha) {
            let terms = l.map(|x| g.powf(x, *alpha));
            let s = g.sum(&terms);
            let s = g.add_const(s, -3.0);
            let t = g.scale(s, 2.0 * mu / (alpha * alpha));
            e = g.add(e, t);
        }
        e
    }
}

fn volumetric_quadratic<G: Graph>(g: &mut G, j: G::Var, kappa: f64) -> G::Var {
    let j2 = g.mul(j, j);
    let jm2 = g.powf(j, -2.0);
    let v = g.add(j2, jm2);
    let v = g.add_const(v, -2.0);
    g.scale(v, kappa)
}

fn gen_ogden_energy<G: Graph>(g: &mut G, p: &GenOgdenParams, l: [G::Var; 3]) -> G::Var {
    let j = jacobian(g, &l);
    let sq = l.map(|x| g.mul(x, x));
    let i1 = g.sum(&sq);
    let cof = [g.mul(l[1], l[2]), g.mul(l[0], l[2]), g.mul(l[0], l[1])];
    let csq = cof.map(|x| g.mul(x, x));
    let i2 = g.sum(&csq);
    let j23 = g.powf(j, -2.0 / 3.0);
    let j43 = g.powf(j, -4.0 / 3.0);
    let i1b = g.mul(j23, i1);
    let i2b = g.mul(j43, i2);
    let x1 = g.add_const(i1b, -3.0);
    let i2b32 = g.powf(i2b, 1.5);
    let x2 = g.add_const(i2b32, -3.0 * 3f64.sqrt());
    let mut e = volumetric_quadratic(g, j, p.kappa);
    for (k, c) in p.c_i0.iter().enumerate() {
        let t = g.powi(x1, k as u32 + 1);
        let t = g.scale(t, *c);
        e = g.add(e, t);
    }
    for (k, c) in p.c_0j.iter().enumerate() {
        let t = g.powi(x2, k as u32 + 1);
        let t = g.scale(t, *c);
        e = g.add(e, t);
    }
    e
}

fn ledret_energy_graph<G: Graph>(g: &mut G, p: &LeDretParams, l: [G::Var; 3]) -> G::Var {
    let j = jacobian(g, &l);
    let cof = [g.mul(l[1], l[2]), g.mul(l[0], l[2]), g.mul(l[0], l[1])];
    let mut e = volumetric_quadratic(g, j, p.kappa);
    for a in &p.a {
        let terms = l.map(|x| g.powf(x, *a));
        let s = g.sum(&terms);
        let t = g.scale(s, *a);
        e = g.add(e, t);
    }
    for b in &p.b {
        let terms = cof.map(|x| g.powf(x, *b));
        let s = g.sum(&terms);
        let t = g.scale(s, *b);
        e = g.add(e, t);
    }
    for a in 0..3 {
        if p.offsets[a] != 0.0 {
            let shifted = g.add_const(l[a], -1.0);
            let t = g.scale(shifted, -p.offsets[a]);
            e = g.add(e, t);
        }
    }
    e
}

/// Invariant-based PANN energy; errors unless `model` is an I-PANN.
pub fn i_pann_energy(model: &EnergyModel, s: &SpectralState) -> Result<f64, ModelError> {
    match model {
        EnergyModel::Neural(n) if n.kind == ModelKind::IPann => model.energy(s),
        other => Err(ModelError::InvalidParams(format!("expected an i-pann model, got `{}`", other.kind()))),
    }
}

/// General Ogden expansion energy at the given state.
pub fn ledret_energy(params: &LeDretParams, s: &SpectralState) -> Result<f64, ModelError> {
    EnergyModel::LeDret(params.clone()).energy(s)
}

// ---------------------------------------------------------------- persistence

#[derive(Debug, Serialize, Deserialize)]
struct NeuralFile {
    layers: usize,
    width: usize,
    p: f64,
    epsilon: f64,
    params: Vec<f64>,
    log_alpha: Option<Vec<f64>>,
    gate: HardConcrete,
    offsets: Vec3,
    psi_ref: f64,
    data_fingerprint: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum ModelBody {
    LambdaPann(NeuralFile),
    LambdaPannNophi(NeuralFile),
    LambdaPannAdditive(NeuralFile),
    IPann(NeuralFile),
    OgdenIncompressible(OgdenParams),
    OgdenCompressible(OgdenParams),
    OgdenGeneralizedInvariant(GenOgdenParams),
    OgdenLedret(LeDretParams),
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    #[serde(flatten)]
    body: ModelBody,
}

impl ModelFile {
    fn from_model(m: &EnergyModel) -> Self {
        let body = match m {
            EnergyModel::Neural(n) => {
                let f = NeuralFile {
                    layers: n.layers,
                    width: n.width,
                    p: n.p,
                    epsilon: n.epsilon,
                    params: n.params.clone(),
                    log_alpha: n.log_alpha.clone(),
                    gate: n.gate,
                    offsets: n.offsets,
                    psi_ref: n.psi_ref,
                    data_fingerprint: n.data_fingerprint.clone(),
                };
                match n.kind {
                    ModelKind::LambdaPann => ModelBody::LambdaPann(f),
                    ModelKind::LambdaPannNophi => ModelBody::LambdaPannNophi(f),
                    ModelKind::LambdaPannAdditive => ModelBody::LambdaPannAdditive(f),
                    _ => ModelBody::IPann(f),
                }
            }
            EnergyModel::Ogden { params, compressible: true } => ModelBody::OgdenCompressible(params.clone()),
            EnergyModel::Ogden { params, compressible: false } => ModelBody::OgdenIncompressible(params.clone()),
            EnergyModel::GenOgden(p) => ModelBody::OgdenGeneralizedInvariant(p.clone()),
            EnergyModel::LeDret(p) => ModelBody::OgdenLedret(p.clone()),
        };
        Self { schema_version: SCHEMA_VERSION, body }
    }

    fn into_model(self) -> Result<EnergyModel, ModelError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ModelError::Format {
                line: 0,
                column: 0,
                message: format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version),
            });
        }
        let neural = |kind: ModelKind, f: NeuralFile| -> Result<EnergyModel, ModelError> {
            let (arch, n) = NeuralArch::build(kind, f.layers, f.width, f.p)?;
            if f.params.len() != n {
                return Err(ModelError::Format {
                    line: 0,
                    column: 0,
                    message: format!("expected {n} parameters for this architecture, found {}", f.params.len()),
                });
            }
            if let Some(la) = &f.log_alpha {
                if la.len() != n {
                    return Err(ModelError::Format { line: 0, column: 0, message: "log_alpha length mismatch".into() });
                }
            }
            let mut constrained = vec![false; n];
            for s in arch.stacks() {
                s.mark_constrained(&mut constrained);
            }
            Ok(EnergyModel::Neural(NeuralModel {
                kind,
                layers: f.layers,
                width: f.width,
                p: f.p,
                arch,
                params: f.params,
                constrained,
                log_alpha: f.log_alpha,
                gate: f.gate,
                offsets: f.offsets,
                psi_ref: f.psi_ref,
                epsilon: f.epsilon,
                data_fingerprint: f.data_fingerprint,
            }))
        };
        match self.body {
            ModelBody::LambdaPann(f) => neural(ModelKind::LambdaPann, f),
            ModelBody::LambdaPannNophi(f) => neural(ModelKind::LambdaPannNophi, f),
            ModelBody::LambdaPannAdditive(f) => neural(ModelKind::LambdaPannAdditive, f),
            ModelBody::IPann(f) => neural(ModelKind::IPann, f),
            ModelBody::OgdenIncompressible(p) => {
                p.validate(false)?;
                Ok(EnergyModel::Ogden { params: p, compressible: false })
            }
            ModelBody::OgdenCompressible(p) => EnergyModel::ogden_compressible(p),
            ModelBody::OgdenGeneralizedInvariant(p) => EnergyModel::gen_ogden(p),
            ModelBody::OgdenLedret(p) => Ok(EnergyModel::LeDret(p)),
        }
    }
}
