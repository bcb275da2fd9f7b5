//! Input-convex feed-forward stacks, the Hölder power deep set and hard-concrete
//! L0 gates.
//!
//! Network parameters live in one flat `f64` buffer owned by the model; a
//! [`LayerStack`] only describes where its weights sit in that buffer. Each
//! neuron's weights are contiguous: `[W_z row | W_x row | bias]`, so a neuron
//! evaluates as a single fused dot product.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eval, Graph};
use crate::error::NetworkError;

/// Layout of one input-convex network inside a flat parameter buffer.
///
/// ```text
/// z₁     = softplus(W_x⁰ x + b⁰)
/// zₗ₊₁   = softplus(W_zˡ zₗ + W_xˡ x + bˡ)
/// out    = W_zᴸ z_L + W_xᴸ x + bᴸ        (softplus'd when `positive_output`)
/// ```
///
/// Every `W_z` entry is constrained non-negative; with `monotone` set the
/// pass-through `W_x` entries are too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    pub in_dim: usize,
    pub widths: Vec<usize>,
    pub monotone: bool,
    pub positive_output: bool,
    pub offset: usize,
}

/// Hands out consecutive parameter ranges while a model is being laid out.
#[derive(Debug, Default)]
pub struct ParamAllocator {
    next: usize,
}

impl ParamAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stack(&mut self, in_dim: usize, widths: Vec<usize>, monotone: bool, positive_output: bool) -> LayerStack {
        let s = LayerStack { in_dim, widths, monotone, positive_output, offset: self.next };
        self.next += s.num_params();
        s
    }

    pub fn total(&self) -> usize {
        self.next
    }
}

/// One neuron's slice of the parameter buffer.
#[derive(Debug, Clone, Copy)]
struct Row {
    start: usize,
    n_z: usize,
    n_x: usize,
}

impl Row {
    fn len(&self) -> usize {
        self.n_z + self.n_x + 1
    }
}

impl LayerStack {
    pub fn num_params(&self) -> usize {
        self.rows().iter().map(|(_, r)| r.len()).sum()
    }

    /// `(layer, row)` for every neuron, the output neuron last.
    fn rows(&self) -> Vec<(usize, Row)> {
        let n_hidden = self.widths.len();
        let mut out = Vec::new();
        let mut start = self.offset;
        for l in 0..=n_hidden {
            let n_z = if l == 0 { 0 } else { self.widths[l - 1] };
            let count = if l < n_hidden { self.widths[l] } else { 1 };
            for _ in 0..count {
                let r = Row { start, n_z, n_x: self.in_dim };
                start += r.len();
                out.push((l, r));
            }
        }
        out
    }

    /// Marks constrained (non-negative) entries in `mask`, indexed like the flat buffer.
    pub fn mark_constrained(&self, mask: &mut [bool]) {
        for (_, r) in self.rows() {
            for k in 0..r.n_z {
                mask[r.start + k] = true;
            }
            if self.monotone {
                for k in 0..r.n_x {
                    mask[r.start + r.n_z + k] = true;
                }
            }
        }
    }

    /// Uniform(-r, r) weights with `r = sqrt(6 / (fan_in + fan_out))`; constrained
    /// entries take the absolute value; biases start at zero.
    pub fn initialize<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut [f64]) {
        let n_layers = self.widths.len() + 1;
        for (l, r) in self.rows() {
            let fan_out = if l + 1 < n_layers { self.widths.get(l + 1).copied().unwrap_or(1) } else { 1 };
            let fan_in = r.n_z + r.n_x;
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for k in 0..fan_in {
                let w: f64 = rng.gen_range(-bound..bound);
                let constrained = k < r.n_z || self.monotone;
                params[r.start + k] = if constrained { w.abs() } else { w };
            }
            params[r.start + fan_in] = 0.0;
        }
    }

    /// Clips constrained raw weights at zero.
    pub fn project_constraints(&self, params: &mut [f64]) {
        for (_, r) in self.rows() {
            let end = if self.monotone { r.n_z + r.n_x } else { r.n_z };
            for w in &mut params[r.start..r.start + end] {
                if *w < 0.0 {
                    *w = 0.0;
                }
            }
        }
    }

    /// Generic forward pass; `params` is the model's full (effective) parameter vector.
    pub fn forward<G: Graph>(&self, g: &mut G, params: &[G::Var], x: &[G::Var]) -> G::Var {
        debug_assert_eq!(x.len(), self.in_dim);
        let n_hidden = self.widths.len();
        let max_w = self.widths.iter().copied().max().unwrap_or(0);
        let mut z: Vec<G::Var> = Vec::with_capacity(max_w);
        let mut input: Vec<G::Var> = Vec::with_capacity(max_w + self.in_dim);
        let mut start = self.offset;
        for l in 0..=n_hidden {
            let n_z = if l == 0 { 0 } else { self.widths[l - 1] };
            let count = if l < n_hidden { self.widths[l] } else { 1 };
            input.clear();
            input.extend_from_slice(&z);
            input.extend_from_slice(x);
            let n_in = n_z + self.in_dim;
            z.clear();
            for _ in 0..count {
                let pre = g.dot(&params[start..start + n_in], &input, params[start + n_in]);
                start += n_in + 1;
                if l < n_hidden {
                    z.push(g.softplus(pre));
                } else {
                    return if self.positive_output { g.softplus(pre) } else { pre };
                }
            }
        }
        unreachable!("stack has an output neuron")
    }
}

/// Shape-checked scalar forward pass.
pub fn icnn_forward(stack: &LayerStack, params: &[f64], x: &[f64]) -> Result<f64, NetworkError> {
    if x.len() != stack.in_dim {
        return Err(NetworkError::DimensionMismatch { expected: stack.in_dim, got: x.len() });
    }
    let needed = stack.offset + stack.num_params();
    if params.len() < needed {
        return Err(NetworkError::DimensionMismatch { expected: needed, got: params.len() });
    }
    let mut g = Eval::<f64>::new();
    Ok(stack.forward(&mut g, params, x))
}

/// Permutation-invariant `ρ([Σᵢ φ(xᵢ)^p]^{1/p})`. Without `phi` the raw inputs
/// enter the reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderSet {
    pub phi: Option<LayerStack>,
    pub rho: LayerStack,
    pub p: f64,
}

impl HolderSet {
    pub fn new(alloc: &mut ParamAllocator, widths: &[usize], p: f64, with_phi: bool) -> Self {
        let phi = with_phi.then(|| alloc.stack(1, widths.to_vec(), false, true));
        let rho = alloc.stack(1, widths.to_vec(), true, false);
        Self { phi, rho, p }
    }

    pub fn stacks(&self) -> impl Iterator<Item = &LayerStack> {
        self.phi.iter().chain(std::iter::once(&self.rho))
    }

    pub fn forward<G: Graph>(&self, g: &mut G, params: &[G::Var], x: [G::Var; 3]) -> G::Var {
        let t = match &self.phi {
            Some(phi) => x.map(|xi| phi.forward(g, params, &[xi])),
            None => x,
        };
        let r = g.p_root(&t, self.p);
        self.rho.forward(g, params, &[r])
    }
}

pub fn holder_forward(hs: &HolderSet, params: &[f64], x1: f64, x2: f64, x3: f64) -> f64 {
    let mut g = Eval::<f64>::new();
    hs.forward(&mut g, params, [x1, x2, x3])
}

/// Hard-concrete relaxation of a binary gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardConcrete {
    pub temperature: f64,
    pub stretch_lo: f64,
    pub stretch_hi: f64,
}

impl Default for HardConcrete {
    fn default() -> Self {
        Self { temperature: 2.0 / 3.0, stretch_lo: -0.1, stretch_hi: 1.1 }
    }
}

impl HardConcrete {
    /// Stochastic gate for uniform draw `u ∈ (0,1)`; also returns `∂gate/∂log_alpha`.
    pub fn sample_with_grad(&self, log_alpha: f64, u: f64) -> (f64, f64) {
        let logit = (u.ln() - (1.0 - u).ln() + log_alpha) / self.temperature;
        let s = crate::autodiff::sigmoid(logit);
        self.stretch_and_clamp(s, s * (1.0 - s) / self.temperature)
    }

    pub fn sample(&self, log_alpha: f64, u: f64) -> f64 {
        self.sample_with_grad(log_alpha, u).0
    }

    /// Test-time gate `min(1, max(0, sigmoid(log_alpha)(hi - lo) + lo))`.
    pub fn deterministic(&self, log_alpha: f64) -> f64 {
        let s = crate::autodiff::sigmoid(log_alpha);
        self.stretch_and_clamp(s, 0.0).0
    }

    fn stretch_and_clamp(&self, s: f64, ds: f64) -> (f64, f64) {
        let span = self.stretch_hi - self.stretch_lo;
        let stretched = s * span + self.stretch_lo;
        if stretched <= 0.0 {
            (0.0, 0.0)
        } else if stretched >= 1.0 {
            (1.0, 0.0)
        } else {
            (stretched, span * ds)
        }
    }

    /// Probability that the gate is non-zero, with its derivative in `log_alpha`.
    pub fn expected_l0(&self, log_alpha: f64) -> (f64, f64) {
        let shift = self.temperature * (-self.stretch_lo / self.stretch_hi).ln();
        let s = crate::autodiff::sigmoid(log_alpha - shift);
        (s, s * (1.0 - s))
    }
}

/// Gate draw per the hard-concrete law.
pub fn l0_gate_sample(log_alpha: f64, temperature: f64, stretch_lo: f64, stretch_hi: f64, u: f64) -> f64 {
    HardConcrete { temperature, stretch_lo, stretch_hi }.sample(log_alpha, u)
}
