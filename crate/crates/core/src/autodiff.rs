//! Reverse-mode differentiation on an append-only tape.
//!
//! The tape is generic over its node value type. With `f64` values it is a
//! classic scalar reverse-mode engine. With [`Jet`] values every node also
//! carries its derivatives with respect to the three principal stretches, so a
//! single reverse sweep differentiates *stretch derivatives* (and therefore
//! stresses) with respect to network parameters.
//!
//! Model code is written once against the [`Graph`] trait and runs either on a
//! recording [`Tape`] or on the non-recording [`Eval`].

use std::fmt::Debug;

use crate::error::AutodiffError;

/// Value type carried by tape nodes.
pub trait DualValue: Copy + Debug + PartialEq + 'static {
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn neg(self) -> Self;
    fn scale(self, c: f64) -> Self;
    fn is_zero(&self) -> bool;
    /// Applies a scalar function given `f(x₀)`, `f'(x₀)` and `f''(x₀)`;
    /// returns `f(x)` and `f'(x)` in this value type.
    fn chain(self, f0: f64, f1: f64, f2: f64) -> (Self, Self);
    /// Reverse accumulation `adj_x += adj_y ⊗ ∂y/∂x`.
    fn accumulate(acc: &mut Self, adj_y: &Self, partial: &Self);

    fn zero() -> Self {
        Self::constant(0.0)
    }
    fn recip(self) -> Self {
        let x = self.value();
        let inv = 1.0 / x;
        self.chain(inv, -inv * inv, 2.0 * inv * inv * inv).0
    }
    fn div(self, o: Self) -> Self {
        self.mul(o.recip())
    }
}

impl DualValue for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn neg(self) -> Self {
        -self
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn chain(self, f0: f64, f1: f64, _f2: f64) -> (Self, Self) {
        (f0, f1)
    }
    fn accumulate(acc: &mut Self, adj_y: &Self, partial: &Self) {
        *acc += adj_y * partial;
    }
    fn div(self, o: Self) -> Self {
        self / o
    }
}

/// First-order jet in three directions: a value and its gradient with respect
/// to the principal stretches.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub v: f64,
    pub d: [f64; 3],
}

impl Jet {
    pub fn new(v: f64, d: [f64; 3]) -> Self {
        Self { v, d }
    }

    /// Seed for independent variable `axis`.
    pub fn variable(v: f64, axis: usize) -> Self {
        let mut d = [0.0; 3];
        d[axis] = 1.0;
        Self { v, d }
    }
}

impl DualValue for Jet {
    fn constant(v: f64) -> Self {
        Self { v, d: [0.0; 3] }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn add(self, o: Self) -> Self {
        Self { v: self.v + o.v, d: [self.d[0] + o.d[0], self.d[1] + o.d[1], self.d[2] + o.d[2]] }
    }
    fn sub(self, o: Self) -> Self {
        Self { v: self.v - o.v, d: [self.d[0] - o.d[0], self.d[1] - o.d[1], self.d[2] - o.d[2]] }
    }
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d: [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
                self.d[2] * o.v + self.v * o.d[2],
            ],
        }
    }
    fn neg(self) -> Self {
        Self { v: -self.v, d: [-self.d[0], -self.d[1], -self.d[2]] }
    }
    fn scale(self, c: f64) -> Self {
        Self { v: self.v * c, d: [self.d[0] * c, self.d[1] * c, self.d[2] * c] }
    }
    fn is_zero(&self) -> bool {
        self.v == 0.0 && self.d == [0.0; 3]
    }
    fn chain(self, f0: f64, f1: f64, f2: f64) -> (Self, Self) {
        (
            Self { v: f0, d: [f1 * self.d[0], f1 * self.d[1], f1 * self.d[2]] },
            Self { v: f1, d: [f2 * self.d[0], f2 * self.d[1], f2 * self.d[2]] },
        )
    }
    fn accumulate(acc: &mut Self, adj_y: &Self, p: &Self) {
        // y₀ = f(x₀), yₖ = Σ ∂f/∂x · xₖ  ⇒
        // x̄₀ += ȳ₀ p₀ + Σₖ ȳₖ pₖ,  x̄ₖ += ȳₖ p₀
        acc.v += adj_y.v * p.v + adj_y.d[0] * p.d[0] + adj_y.d[1] * p.d[1] + adj_y.d[2] * p.d[2];
        acc.d[0] += adj_y.d[0] * p.v;
        acc.d[1] += adj_y.d[1] * p.v;
        acc.d[2] += adj_y.d[2] * p.v;
    }
}

/// Numerically guarded softplus `max(x,0) + ln(1 + e^{-|x|})`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Supported primitives for [`Tape::record`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    /// Real exponent, positive base.
    Pow(f64),
    Exp,
    Log,
    Softplus,
    /// `(Σ tᵢ^p)^{1/p}` over positive operands.
    PRoot(f64),
    /// Operands `[w₁..wₙ, x₁..xₙ, bias]`, value `Σ wᵢxᵢ + bias`.
    Dot,
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Neg => "neg",
            Primitive::Pow(_) => "pow",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Softplus => "softplus",
            Primitive::PRoot(_) => "p-root",
            Primitive::Dot => "dot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpTag {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    Pow,
    Exp,
    Log,
    Softplus,
    PRoot,
    Dot,
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Builder interface shared by the recording tape and plain evaluation.
pub trait Graph {
    type Var: Copy + Debug;

    fn constant(&mut self, v: f64) -> Self::Var;
    fn value(&self, x: Self::Var) -> f64;
    fn add(&mut self, a: Self::Var, b: Self::Var) -> Self::Var;
    fn sub(&mut self, a: Self::Var, b: Self::Var) -> Self::Var;
    fn mul(&mut self, a: Self::Var, b: Self::Var) -> Self::Var;
    fn div(&mut self, a: Self::Var, b: Self::Var) -> Self::Var;
    fn neg(&mut self, a: Self::Var) -> Self::Var;
    /// `c · a` for a constant `c`.
    fn scale(&mut self, a: Self::Var, c: f64) -> Self::Var;
    fn powf(&mut self, a: Self::Var, p: f64) -> Self::Var;
    fn exp(&mut self, a: Self::Var) -> Self::Var;
    fn ln(&mut self, a: Self::Var) -> Self::Var;
    fn softplus(&mut self, a: Self::Var) -> Self::Var;
    /// `Σ wᵢxᵢ + bias`, summed in index order.
    fn dot(&mut self, w: &[Self::Var], x: &[Self::Var], bias: Self::Var) -> Self::Var;
    /// `(Σ tᵢ^p)^{1/p}` with the terms summed in ascending value order.
    fn p_root(&mut self, t: &[Self::Var], p: f64) -> Self::Var;

    fn add_const(&mut self, a: Self::Var, c: f64) -> Self::Var {
        let k = self.constant(c);
        self.add(a, k)
    }

    /// Non-negative integer power by repeated multiplication (no domain restriction).
    fn powi(&mut self, a: Self::Var, n: u32) -> Self::Var {
        let mut acc = self.constant(1.0);
        for _ in 0..n {
            acc = self.mul(acc, a);
        }
        acc
    }

    fn sum(&mut self, xs: &[Self::Var]) -> Self::Var {
        let mut acc = self.constant(0.0);
        for &x in xs {
            acc = self.add(acc, x);
        }
        acc
    }
}

fn unary_derivs(op: Primitive, x: f64) -> Result<(f64, f64, f64), AutodiffError> {
    let domain = |arg| AutodiffError::DomainError { op: op.name(), arg };
    Ok(match op {
        Primitive::Pow(p) => {
            if !(x > 0.0) {
                return Err(domain(x));
            }
            let xp2 = x.powf(p - 2.0);
            (xp2 * x * x, p * xp2 * x, p * (p - 1.0) * xp2)
        }
        Primitive::Exp => {
            let e = x.exp();
            (e, e, e)
        }
        Primitive::Log => {
            if !(x > 0.0) {
                return Err(domain(x));
            }
            (x.ln(), 1.0 / x, -1.0 / (x * x))
        }
        Primitive::Softplus => {
            let s = sigmoid(x);
            (softplus(x), s, s * (1.0 - s))
        }
        _ => unreachable!("not a unary primitive"),
    })
}

/// Non-recording evaluation with the same arithmetic as [`Tape`].
#[derive(Debug, Default)]
pub struct Eval<V = f64> {
    error: Option<AutodiffError>,
    _v: std::marker::PhantomData<V>,
}

impl<V: DualValue> Eval<V> {
    pub fn new() -> Self {
        Self { error: None, _v: std::marker::PhantomData }
    }

    pub fn error(&self) -> Option<&AutodiffError> {
        self.error.as_ref()
    }

    pub fn check(&self) -> Result<(), AutodiffError> {
        self.error.clone().map_or(Ok(()), Err)
    }

    fn unary(&mut self, op: Primitive, a: V) -> V {
        match unary_derivs(op, a.value()) {
            Ok((f0, f1, f2)) => a.chain(f0, f1, f2).0,
            Err(e) => {
                self.error.get_or_insert(e);
                V::constant(f64::NAN)
            }
        }
    }
}

impl<V: DualValue> Graph for Eval<V> {
    type Var = V;

    fn constant(&mut self, v: f64) -> V {
        V::constant(v)
    }
    fn value(&self, x: V) -> f64 {
        x.value()
    }
    fn add(&mut self, a: V, b: V) -> V {
        a.add(b)
    }
    fn sub(&mut self, a: V, b: V) -> V {
        a.sub(b)
    }
    fn mul(&mut self, a: V, b: V) -> V {
        a.mul(b)
    }
    fn div(&mut self, a: V, b: V) -> V {
        if b.value() == 0.0 {
            self.error.get_or_insert(AutodiffError::DomainError { op: "div", arg: 0.0 });
            return V::constant(f64::NAN);
        }
        a.div(b)
    }
    fn neg(&mut self, a: V) -> V {
        a.neg()
    }
    fn scale(&mut self, a: V, c: f64) -> V {
        a.scale(c)
    }
    fn powf(&mut self, a: V, p: f64) -> V {
        self.unary(Primitive::Pow(p), a)
    }
    fn exp(&mut self, a: V) -> V {
        self.unary(Primitive::Exp, a)
    }
    fn ln(&mut self, a: V) -> V {
        self.unary(Primitive::Log, a)
    }
    fn softplus(&mut self, a: V) -> V {
        self.unary(Primitive::Softplus, a)
    }
    fn dot(&mut self, w: &[V], x: &[V], bias: V) -> V {
        debug_assert_eq!(w.len(), x.len());
        let mut acc = bias;
        for (wi, xi) in w.iter().zip(x) {
            acc = acc.add(wi.mul(*xi));
        }
        acc
    }
    fn p_root(&mut self, t: &[V], p: f64) -> V {
        let mut order: Vec<usize> = (0..t.len()).collect();
        order.sort_by(|&i, &k| t[i].value().total_cmp(&t[k].value()));
        let mut s = V::zero();
        for &i in &order {
            let tp = self.unary(Primitive::Pow(p), t[i]);
            s = s.add(tp);
        }
        self.unary(Primitive::Pow(1.0 / p), s)
    }
}

/// Append-only record of primitive evaluations.
#[derive(Debug, Clone)]
pub struct Tape<V = f64> {
    values: Vec<V>,
    tags: Vec<OpTag>,
    edge_start: Vec<u32>,
    edge_parent: Vec<u32>,
    edge_partial: Vec<V>,
    error: Option<AutodiffError>,
}

impl<V: DualValue> Default for Tape<V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<V: DualValue> Tape<V> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            tags: Vec::new(),
            edge_start: vec![0],
            edge_parent: Vec::new(),
            edge_partial: Vec::new(),
            error: None,
        }
    }

    /// Drops all nodes but keeps allocated capacity.
    pub fn clear(&mut self) {
        self.values.clear();
        self.tags.clear();
        self.edge_start.clear();
        self.edge_start.push(0);
        self.edge_parent.clear();
        self.edge_partial.clear();
        self.error = None;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Drops every node recorded after the first `len`; earlier handles stay valid.
    pub fn truncate(&mut self, len: usize) {
        if len >= self.values.len() {
            return;
        }
        self.values.truncate(len);
        self.tags.truncate(len);
        self.edge_start.truncate(len + 1);
        let edges = self.edge_start[len] as usize;
        self.edge_parent.truncate(edges);
        self.edge_partial.truncate(edges);
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Independent input or constant.
    pub fn input(&mut self, v: V) -> NodeId {
        self.push_node(OpTag::Leaf, v)
    }

    pub fn node_value(&self, n: NodeId) -> V {
        self.values[n.index()]
    }

    pub fn parents(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        let (s, e) = (self.edge_start[n.index()] as usize, self.edge_start[n.index() + 1] as usize);
        self.edge_parent[s..e].iter().map(|&p| NodeId(p))
    }

    /// First domain error raised while recording, if any.
    pub fn check(&self) -> Result<(), AutodiffError> {
        self.error.clone().map_or(Ok(()), Err)
    }

    fn push_node(&mut self, tag: OpTag, v: V) -> NodeId {
        let id = self.values.len() as u32;
        self.values.push(v);
        self.tags.push(tag);
        self.edge_start.push(self.edge_parent.len() as u32);
        NodeId(id)
    }

    #[inline]
    fn edge(&mut self, parent: NodeId, partial: V) {
        self.edge_parent.push(parent.0);
        self.edge_partial.push(partial);
    }

    fn fail(&mut self, e: AutodiffError) -> NodeId {
        self.error.get_or_insert(e);
        self.push_node(OpTag::Leaf, V::constant(f64::NAN))
    }

    fn unary_node(&mut self, op: Primitive, tag: OpTag, a: NodeId) -> NodeId {
        let x = self.values[a.index()];
        match unary_derivs(op, x.value()) {
            Ok((f0, f1, f2)) => {
                let (y, dy) = x.chain(f0, f1, f2);
                self.edge(a, dy);
                self.push_node(tag, y)
            }
            Err(e) => self.fail(e),
        }
    }

    /// Records `primitive` applied to `operands` after validating arity and handles.
    pub fn record(&mut self, primitive: Primitive, operands: &[NodeId]) -> Result<NodeId, AutodiffError> {
        for o in operands {
            if o.index() >= self.values.len() {
                return Err(AutodiffError::UnknownOperand(o.index()));
            }
        }
        let arity = |expected: usize| -> Result<(), AutodiffError> {
            if operands.len() != expected {
                Err(AutodiffError::Arity { op: primitive.name(), expected, got: operands.len() })
            } else {
                Ok(())
            }
        };
        let before = self.error.clone();
        self.error = None;
        let node = match primitive {
            Primitive::Add => {
                arity(2)?;
                self.add(operands[0], operands[1])
            }
            Primitive::Sub => {
                arity(2)?;
                self.sub(operands[0], operands[1])
            }
            Primitive::Mul => {
                arity(2)?;
                self.mul(operands[0], operands[1])
            }
            Primitive::Div => {
                arity(2)?;
                self.div(operands[0], operands[1])
            }
            Primitive::Neg => {
                arity(1)?;
                self.neg(operands[0])
            }
            Primitive::Pow(p) => {
                arity(1)?;
                self.powf(operands[0], p)
            }
            Primitive::Exp => {
                arity(1)?;
                self.exp(operands[0])
            }
            Primitive::Log => {
                arity(1)?;
                self.ln(operands[0])
            }
            Primitive::Softplus => {
                arity(1)?;
                self.softplus(operands[0])
            }
            Primitive::PRoot(p) => {
                if operands.is_empty() {
                    return Err(AutodiffError::Arity { op: "p-root", expected: 1, got: 0 });
                }
                for o in operands {
                    let v = self.values[o.index()].value();
                    if !(v > 0.0) {
                        self.error = before;
                        return Err(AutodiffError::DomainError { op: "p-root", arg: v });
                    }
                }
                self.p_root(operands, p)
            }
            Primitive::Dot => {
                if operands.len() % 2 != 1 {
                    return Err(AutodiffError::Arity { op: "dot", expected: 2 * (operands.len() / 2) + 1, got: operands.len() });
                }
                let n = operands.len() / 2;
                let (w, rest) = operands.split_at(n);
                let (x, b) = rest.split_at(n);
                self.dot(w, x, b[0])
            }
        };
        match self.error.take() {
            Some(e) => {
                self.error = before.or(Some(e.clone()));
                Err(e)
            }
            None => {
                self.error = before;
                Ok(node)
            }
        }
    }

    /// Reverse sweep from `output` seeded with `seed`; returns the adjoint of
    /// every node up to and including `output`.
    pub fn adjoints(&self, output: NodeId, seed: V) -> Vec<V> {
        let n = output.index() + 1;
        let mut adj = vec![V::zero(); n];
        adj[output.index()] = seed;
        self.sweep(&mut adj);
        adj
    }

    /// Reverse sweep over caller-provided adjoint storage seeded in place.
    /// Nodes beyond `adj.len()` are ignored.
    pub fn sweep(&self, adj: &mut [V]) {
        let n = adj.len().min(self.values.len());
        for i in (0..n).rev() {
            let (head, tail) = adj.split_at_mut(i);
            let a = tail[0];
            if a.is_zero() {
                continue;
            }
            let (s, e) = (self.edge_start[i] as usize, self.edge_start[i + 1] as usize);
            // parents are always recorded before their children, so every
            // parent adjoint lives in `head`
            for (&p, w) in self.edge_parent[s..e].iter().zip(&self.edge_partial[s..e]) {
                V::accumulate(&mut head[p as usize], &a, w);
            }
        }
    }
}

impl Tape<f64> {
    /// Exact partial derivatives of `output` with respect to each handle in `wrt`.
    pub fn gradient(&self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<f64>, AutodiffError> {
        self.check()?;
        let adj = self.adjoints(output, 1.0);
        Ok(wrt.iter().map(|w| adj.get(w.index()).copied().unwrap_or(0.0)).collect())
    }
}

impl<V: DualValue> Graph for Tape<V> {
    type Var = NodeId;

    fn constant(&mut self, v: f64) -> NodeId {
        self.push_node(OpTag::Leaf, V::constant(v))
    }
    fn value(&self, x: NodeId) -> f64 {
        self.values[x.index()].value()
    }
    fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a.index()].add(self.values[b.index()]);
        let one = V::constant(1.0);
        self.edge(a, one);
        self.edge(b, one);
        self.push_node(OpTag::Add, v)
    }
    fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a.index()].sub(self.values[b.index()]);
        self.edge(a, V::constant(1.0));
        self.edge(b, V::constant(-1.0));
        self.push_node(OpTag::Sub, v)
    }
    fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.values[a.index()], self.values[b.index()]);
        self.edge(a, vb);
        self.edge(b, va);
        self.push_node(OpTag::Mul, va.mul(vb))
    }
    fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.values[a.index()], self.values[b.index()]);
        if vb.value() == 0.0 {
            return self.fail(AutodiffError::DomainError { op: "div", arg: 0.0 });
        }
        let inv = vb.recip();
        let y = va.mul(inv);
        self.edge(a, inv);
        self.edge(b, y.mul(inv).neg());
        self.push_node(OpTag::Div, y)
    }
    fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.index()].neg();
        self.edge(a, V::constant(-1.0));
        self.push_node(OpTag::Neg, v)
    }
    fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.values[a.index()].scale(c);
        self.edge(a, V::constant(c));
        self.push_node(OpTag::Scale, v)
    }
    fn powf(&mut self, a: NodeId, p: f64) -> NodeId {
        self.unary_node(Primitive::Pow(p), OpTag::Pow, a)
    }
    fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary_node(Primitive::Exp, OpTag::Exp, a)
    }
    fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary_node(Primitive::Log, OpTag::Log, a)
    }
    fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary_node(Primitive::Softplus, OpTag::Softplus, a)
    }
    fn dot(&mut self, w: &[NodeId], x: &[NodeId], bias: NodeId) -> NodeId {
        debug_assert_eq!(w.len(), x.len());
        self.edge_parent.reserve(2 * w.len() + 1);
        self.edge_partial.reserve(2 * w.len() + 1);
        let mut acc = self.values[bias.index()];
        for (wi, xi) in w.iter().zip(x) {
            let (vw, vx) = (self.values[wi.index()], self.values[xi.index()]);
            acc = acc.add(vw.mul(vx));
            self.edge(*wi, vx);
            self.edge(*xi, vw);
        }
        self.edge(bias, V::constant(1.0));
        self.push_node(OpTag::Dot, acc)
    }
    fn p_root(&mut self, t: &[NodeId], p: f64) -> NodeId {
        let mut order: Vec<NodeId> = t.to_vec();
        order.sort_by(|a, b| self.values[a.index()].value().total_cmp(&self.values[b.index()].value()));
        let mut s = V::zero();
        for o in &order {
            match unary_derivs(Primitive::Pow(p), self.values[o.index()].value()) {
                Ok((f0, f1, f2)) => s = s.add(self.values[o.index()].chain(f0, f1, f2).0),
                Err(e) => return self.fail(e),
            }
        }
        let r = match unary_derivs(Primitive::Pow(1.0 / p), s.value()) {
            Ok((f0, f1, f2)) => s.chain(f0, f1, f2).0,
            Err(e) => return self.fail(e),
        };
        // ∂r/∂tᵢ = tᵢ^{p-1} r^{1-p}
        let r_pow = match unary_derivs(Primitive::Pow(1.0 - p), r.value()) {
            Ok((f0, f1, f2)) => r.chain(f0, f1, f2).0,
            Err(e) => return self.fail(e),
        };
        for o in &order {
            let ti = self.values[o.index()];
            let tp = match unary_derivs(Primitive::Pow(p - 1.0), ti.value()) {
                Ok((f0, f1, f2)) => ti.chain(f0, f1, f2).0,
                Err(e) => return self.fail(e),
            };
            self.edge(*o, tp.mul(r_pow));
        }
        self.push_node(OpTag::PRoot, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_at_zero() {
        let mut t = Tape::<f64>::new();
        let x = t.input(0.0);
        let y = t.record(Primitive::Softplus, &[x]).unwrap();
        assert!((t.value(y) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(t.gradient(y, &[x]).unwrap(), vec![0.5]);
    }

    #[test]
    fn softplus_does_not_overflow() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
    }

    #[test]
    fn pow_with_table_exponent() {
        let mut t = Tape::<f64>::new();
        let x = t.input(2.0);
        let y = t.record(Primitive::Pow(3.711), &[x]).unwrap();
        assert!((t.value(y) - 2f64.powf(3.711)).abs() < 1e-12);
        assert!((t.value(y) - 13.0955).abs() < 1e-4);
    }

    #[test]
    fn p_root_of_ones() {
        let mut t = Tape::<f64>::new();
        let xs: Vec<_> = (0..3).map(|_| t.input(1.0)).collect();
        let y = t.record(Primitive::PRoot(3.0), &xs).unwrap();
        assert!((t.value(y) - 3f64.powf(1.0 / 3.0)).abs() < 1e-14);
        assert!((t.value(y) - 1.44225).abs() < 1e-5);
    }

    #[test]
    fn square_derivative() {
        let mut t = Tape::<f64>::new();
        let x = t.input(3.0);
        let y = t.record(Primitive::Mul, &[x, x]).unwrap();
        assert_eq!(t.gradient(y, &[x]).unwrap(), vec![6.0]);
    }

    #[test]
    fn cubic_plus_product() {
        let mut t = Tape::<f64>::new();
        let x = t.input(2.0);
        let y = t.input(5.0);
        let x3 = t.powi(x, 3);
        let xy = t.mul(x, y);
        let f = t.add(x3, xy);
        assert_eq!(t.value(f), 18.0);
        assert_eq!(t.gradient(f, &[x, y]).unwrap(), vec![17.0, 2.0]);
    }

    #[test]
    fn domain_errors() {
        let mut t = Tape::<f64>::new();
        let z = t.input(0.0);
        let m = t.input(-1.0);
        assert!(matches!(t.record(Primitive::Log, &[z]), Err(AutodiffError::DomainError { op: "log", .. })));
        assert!(matches!(t.record(Primitive::Pow(0.5), &[m]), Err(AutodiffError::DomainError { op: "pow", .. })));
        let one = t.input(1.0);
        assert!(matches!(t.record(Primitive::Div, &[one, z]), Err(AutodiffError::DomainError { op: "div", .. })));
        assert!(matches!(t.record(Primitive::PRoot(2.0), &[one, m]), Err(AutodiffError::DomainError { .. })));
        assert!(t.record(Primitive::Add, &[one]).is_err());
        assert!(t.record(Primitive::Add, &[one, NodeId(999)]).is_err());
    }

    #[test]
    fn parents_precede_children() {
        let mut t = Tape::<f64>::new();
        let a = t.input(1.5);
        let b = t.input(0.5);
        let c = t.mul(a, b);
        let d = t.softplus(c);
        let e = t.dot(&[a, b], &[c, d], a);
        for n in [c, d, e] {
            for p in t.parents(n) {
                assert!(p < n);
            }
        }
    }

    #[test]
    fn jet_tape_matches_forward_eval() {
        // f(λ) = softplus(λ₀λ₁) + (λ₀² + λ₂²)^{1/2}
        let build = |g: &mut Tape<Jet>| {
            let l: Vec<_> = (0..3).map(|a| g.input(Jet::variable([1.3, 0.9, 1.1][a], a))).collect();
            let m = g.mul(l[0], l[1]);
            let s = g.softplus(m);
            let r = g.p_root(&[l[0], l[2]], 2.0);
            g.add(s, r)
        };
        let mut t = Tape::<Jet>::new();
        let out = build(&mut t);
        let v = t.node_value(out);
        let mut e = Eval::<Jet>::new();
        let l: Vec<_> = (0..3).map(|a| Jet::variable([1.3, 0.9, 1.1][a], a)).collect();
        let m = e.mul(l[0], l[1]);
        let s = e.softplus(m);
        let r = e.p_root(&[l[0], l[2]], 2.0);
        let w = e.add(s, r);
        assert!((v.v - w.v).abs() < 1e-15);
        for k in 0..3 {
            assert!((v.d[k] - w.d[k]).abs() < 1e-15);
        }
    }
}
