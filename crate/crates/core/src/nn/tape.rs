//! Reverse-mode tape over dense matrices.
//!
//! Every forward operation appends a node holding its value and the handles of
//! its inputs; [`Tape::backward`] replays the nodes in reverse to produce exact
//! gradients of a scalar (1×1) node. Only the handful of operations the model
//! zoo uses are supported.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Axis};

use super::params::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::kernel;

/// Lower/upper clamp applied to probabilities inside binary cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

/// Kernel bandwidth for the differentiable MMD² loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median of pooled pairwise distances, differentiated through the
    /// selected pair(s).
    Median,
}

#[derive(Debug)]
struct MmdTrace {
    sigma: f64,
    /// `(row_a, row_b, weight)` pairs that define σ; empty when σ is constant.
    median_pairs: Vec<(usize, usize, f64)>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Dense { input: Var, weight: Var, bias: Var },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    Reverse { input: Var, lambda: f64 },
    Mse { pred: Var, target: Arc<Matrix> },
    Bce { pred: Var, target: Arc<Matrix> },
    BceLogits { logits: Var, target: Arc<Matrix> },
    MmdSq { x: Var, y: Var, trace: MmdTrace },
    Ortho { shared: Var, private: Var },
    Weighted(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Arc<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of forward operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    anchors: Option<Vec<Arc<Matrix>>>,
    reversal_inputs: Vec<Var>,
    track_branches: bool,
    branch_hash: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Tape {
    pub fn new() -> Self {
        Self {
            branch_hash: FNV_OFFSET,
            ..Self::default()
        }
    }

    /// Tape whose gradient-reversal nodes are linearised around `anchors`
    /// (the reversal inputs of an earlier, unperturbed pass).
    ///
    /// Forward values are `a - λ (x - a)`: equal to `x` at the anchor point,
    /// with Jacobian `-λ I`. Finite differences of such a tape therefore
    /// reproduce the gradients the reversal layer reports.
    pub fn with_reversal_anchors(anchors: Vec<Arc<Matrix>>) -> Self {
        Self {
            anchors: Some(anchors),
            ..Self::new()
        }
    }

    /// Record a hash of every discrete branch taken (ReLU masks, clamp hits,
    /// median pair selection). Used by the gradient checker to detect kinks.
    pub fn track_branches(&mut self) {
        self.track_branches = true;
    }

    pub fn branch_signature(&self) -> u64 {
        self.branch_hash
    }

    /// Inputs of the gradient-reversal nodes, in recording order.
    pub fn reversal_inputs(&self) -> Vec<Arc<Matrix>> {
        self.reversal_inputs
            .iter()
            .map(|v| Arc::clone(&self.nodes[v.0].value))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Matrix>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn mix(&mut self, bits: u64) {
        if self.track_branches {
            self.branch_hash ^= bits;
            self.branch_hash = self.branch_hash.wrapping_mul(FNV_PRIME);
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Constant input; gradients are still reported for it by [`Gradients::wrt`].
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant that never needs a gradient (data batches).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push_shared(store.shared(id), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    /// `input · weightᵀ + bias`, with `bias` a 1×out row.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if x.ncols() != w.ncols() {
            return Err(Error::Shape {
                context: "dense input vs weight",
                left: x.dim(),
                right: w.dim(),
            });
        }
        if b.dim() != (1, w.nrows()) {
            return Err(Error::Shape {
                context: "dense bias vs weight",
                left: b.dim(),
                right: w.dim(),
            });
        }
        let mut out = x.dot(&w.t());
        out += b;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(out, Op::Dense { input, weight, bias }, rg))
    }

    pub fn activation(&mut self, kind: Activation, input: Var) -> Var {
        match kind {
            Activation::Relu => self.relu(input),
            Activation::Sigmoid => self.sigmoid(input),
            Activation::Identity => input,
        }
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).mapv(|v| if v > 0.0 { v } else { 0.0 });
        if self.track_branches {
            let mut h = FNV_OFFSET;
            for &v in self.value(input).iter() {
                h = (h ^ u64::from(v > 0.0)).wrapping_mul(FNV_PRIME);
            }
            self.mix(h);
        }
        let rg = self.rg(input);
        self.push(out, Op::Relu(input), rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).mapv(sigmoid);
        let rg = self.rg(input);
        self.push(out, Op::Sigmoid(input), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dim() != y.dim() {
            return Err(Error::Shape {
                context: "elementwise add",
                left: x.dim(),
                right: y.dim(),
            });
        }
        let out = x + y;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.nrows() != y.nrows() {
            return Err(Error::Shape {
                context: "column concatenation",
                left: x.dim(),
                right: y.dim(),
            });
        }
        let out = ndarray::concatenate(Axis(1), &[x.view(), y.view()]).expect("rows checked");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.ncols() {
            return Err(Error::Shape {
                context: "row concatenation",
                left: x.dim(),
                right: y.dim(),
            });
        }
        let out = kernel::stack_rows(x, y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatRows(a, b), rg))
    }

    /// Gradient reversal: identity forward, gradient scaled by `-lambda` backward.
    pub fn reverse_gradient(&mut self, input: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "gradient reversal lambda must be finite and >= 0, got {lambda}"
            )));
        }
        let k = self.reversal_inputs.len();
        self.reversal_inputs.push(input);
        let x = Arc::clone(&self.nodes[input.0].value);
        let value = match self.anchors.as_ref().and_then(|a| a.get(k)) {
            Some(anchor) if anchor.dim() == x.dim() => {
                Arc::new(anchor.as_ref() - &((x.as_ref() - anchor.as_ref()) * lambda))
            }
            _ => x,
        };
        let rg = self.rg(input);
        Ok(self.push_shared(value, Op::Reverse { input, lambda }, rg))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: Arc<Matrix>) -> Result<Var> {
        let p = self.value(pred);
        if p.dim() != target.dim() {
            return Err(Error::Shape {
                context: "mse prediction vs target",
                left: p.dim(),
                right: target.dim(),
            });
        }
        let loss = mse(p, &target);
        let rg = self.rg(pred);
        Ok(self.push(scalar(loss), Op::Mse { pred, target }, rg))
    }

    /// Mean binary cross-entropy with probabilities clamped to
    /// `[BCE_CLAMP, 1 - BCE_CLAMP]`.
    pub fn bce(&mut self, pred: Var, target: Arc<Matrix>) -> Result<Var> {
        let p = self.value(pred);
        if p.dim() != target.dim() {
            return Err(Error::Shape {
                context: "bce prediction vs target",
                left: p.dim(),
                right: target.dim(),
            });
        }
        let loss = bce(p, &target);
        if self.track_branches {
            let clamped = p
                .iter()
                .filter(|&&v| !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&v))
                .count();
            self.mix(clamped as u64);
        }
        let rg = self.rg(pred);
        Ok(self.push(scalar(loss), Op::Bce { pred, target }, rg))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)`, computed without
    /// clamping so the gradient `sigmoid(x) - t` never vanishes.
    pub fn bce_logits(&mut self, logits: Var, target: Arc<Matrix>) -> Result<Var> {
        let x = self.value(logits);
        if x.dim() != target.dim() {
            return Err(Error::Shape {
                context: "bce logits vs target",
                left: x.dim(),
                right: target.dim(),
            });
        }
        let loss = bce_logits(x, &target);
        let rg = self.rg(logits);
        Ok(self.push(scalar(loss), Op::BceLogits { logits, target }, rg))
    }

    /// Biased (V-statistic) squared MMD between the rows of `x` and `y` under a
    /// Gaussian kernel `exp(-‖a-b‖² / 2σ²)`.
    pub fn mmd_sq(&mut self, x: Var, y: Var, bandwidth: Bandwidth) -> Result<Var> {
        let (xv, yv) = (self.value(x), self.value(y));
        if xv.ncols() != yv.ncols() {
            return Err(Error::Shape {
                context: "mmd inputs",
                left: xv.dim(),
                right: yv.dim(),
            });
        }
        if xv.nrows() == 0 || yv.nrows() == 0 {
            return Err(Error::invalid("mmd needs at least one row per sample set"));
        }
        let z = kernel::stack_rows(xv, yv);
        let sq = kernel::squared_distances(&z);
        let trace = match bandwidth {
            Bandwidth::Fixed(sigma) => MmdTrace {
                sigma,
                median_pairs: Vec::new(),
            },
            Bandwidth::Median => match kernel::median_distance(&sq) {
                Some(med) if med.value > 0.0 => MmdTrace {
                    sigma: med.value,
                    median_pairs: med.pairs,
                },
                _ => MmdTrace {
                    sigma: 1.0,
                    median_pairs: Vec::new(),
                },
            },
        };
        let m = xv.nrows();
        if self.track_branches {
            for &(a, b, _) in &trace.median_pairs {
                self.mix(((a as u64) << 32) | b as u64);
            }
        }
        let value = mmd_sq_from_distances(&sq, m, trace.sigma);
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(scalar(value), Op::MmdSq { x, y, trace }, rg))
    }

    /// Orthogonality penalty `‖Sᵀ P‖²_F / b²`.
    pub fn ortho(&mut self, shared: Var, private: Var) -> Result<Var> {
        let (sv, pv) = (self.value(shared), self.value(private));
        if sv.dim() != pv.dim() {
            return Err(Error::Shape {
                context: "orthogonality shared vs private",
                left: sv.dim(),
                right: pv.dim(),
            });
        }
        let b = sv.nrows() as f64;
        let m = sv.t().dot(pv);
        let value = m.iter().map(|v| v * v).sum::<f64>() / (b * b);
        let rg = self.rg(shared) || self.rg(private);
        Ok(self.push(scalar(value), Op::Ortho { shared, private }, rg))
    }

    /// Linear combination of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let val = self.value(v);
            if val.dim() != (1, 1) {
                return Err(Error::Shape {
                    context: "weighted sum of scalars",
                    left: val.dim(),
                    right: (1, 1),
                });
            }
            total += w * val[[0, 0]];
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        Ok(self.push(scalar(total), Op::Weighted(terms.to_vec()), rg))
    }

    /// Gradients of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.dim() != (1, 1) {
            return Err(Error::Shape {
                context: "backward requires a scalar loss",
                left: lv.dim(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Dense { input, weight, bias } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    if self.rg(*input) {
                        accumulate(&mut grads, *input, g.dot(w));
                    }
                    if self.rg(*weight) {
                        accumulate(&mut grads, *weight, g.t().dot(x));
                    }
                    if self.rg(*bias) {
                        accumulate(&mut grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
                Op::Relu(input) => {
                    let x = self.value(*input);
                    let mut gi = g;
                    gi.zip_mut_with(x, |gv, &xv| {
                        if xv <= 0.0 {
                            *gv = 0.0
                        }
                    });
                    accumulate(&mut grads, *input, gi);
                }
                Op::Sigmoid(input) => {
                    let mut gi = g;
                    gi.zip_mut_with(&node.value, |gv, &y| *gv *= y * (1.0 - y));
                    accumulate(&mut grads, *input, gi);
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let split = self.value(*a).ncols();
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.slice(s![.., ..split]).to_owned());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.slice(s![.., split..]).to_owned());
                    }
                }
                Op::ConcatRows(a, b) => {
                    let split = self.value(*a).nrows();
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.slice(s![..split, ..]).to_owned());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.slice(s![split.., ..]).to_owned());
                    }
                }
                Op::Reverse { input, lambda } => {
                    accumulate(&mut grads, *input, g * -*lambda);
                }
                Op::Mse { pred, target } => {
                    let p = self.value(*pred);
                    let scale = 2.0 * g[[0, 0]] / p.len() as f64;
                    let gi = (p - target.as_ref()) * scale;
                    accumulate(&mut grads, *pred, gi);
                }
                Op::Bce { pred, target } => {
                    let p = self.value(*pred);
                    let scale = g[[0, 0]] / p.len() as f64;
                    let mut gi = Matrix::zeros(p.dim());
                    ndarray::Zip::from(&mut gi)
                        .and(p)
                        .and(target.as_ref())
                        .for_each(|gv, &pv, &t| {
                            if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&pv) {
                                *gv = scale * (-t / pv + (1.0 - t) / (1.0 - pv));
                            }
                        });
                    accumulate(&mut grads, *pred, gi);
                }
                Op::BceLogits { logits, target } => {
                    let x = self.value(*logits);
                    let scale = g[[0, 0]] / x.len() as f64;
                    let mut gi = x.mapv(sigmoid);
                    gi.zip_mut_with(target.as_ref(), |gv, &t| *gv = scale * (*gv - t));
                    accumulate(&mut grads, *logits, gi);
                }
                Op::MmdSq { x, y, trace } => {
                    let (gx, gy) = mmd_sq_backward(self.value(*x), self.value(*y), trace);
                    let up = g[[0, 0]];
                    if self.rg(*x) {
                        accumulate(&mut grads, *x, gx * up);
                    }
                    if self.rg(*y) {
                        accumulate(&mut grads, *y, gy * up);
                    }
                }
                Op::Ortho { shared, private } => {
                    let sv = self.value(*shared);
                    let pv = self.value(*private);
                    let b = sv.nrows() as f64;
                    let scale = 2.0 * g[[0, 0]] / (b * b);
                    let m = sv.t().dot(pv);
                    if self.rg(*shared) {
                        accumulate(&mut grads, *shared, pv.dot(&m.t()) * scale);
                    }
                    if self.rg(*private) {
                        accumulate(&mut grads, *private, sv.dot(&m) * scale);
                    }
                }
                Op::Weighted(terms) => {
                    let up = g[[0, 0]];
                    for &(v, w) in terms {
                        if self.rg(v) {
                            accumulate(&mut grads, v, scalar(up * w));
                        }
                    }
                }
            }
        }

        let params = self
            .params
            .iter()
            .filter_map(|(&id, &v)| grads.get(v.0).and_then(|g| g.clone()).map(|g| (id, g)))
            .collect();
        Ok(Gradients { nodes: grads, params })
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: HashMap<ParamId, Matrix>,
}

impl Gradients {
    /// Gradient for a leaf created with [`Tape::input`] or [`Tape::param`].
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.params.iter().map(|(&id, g)| (id, g))
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

fn scalar(v: f64) -> Matrix {
    Matrix::from_elem((1, 1), v)
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn mse(pred: &Matrix, target: &Matrix) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

pub fn bce(pred: &Matrix, target: &Matrix) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target.iter())
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

/// Mean of `softplus(x) - t·x`, the cross-entropy of `sigmoid(x)` against `t`.
pub fn bce_logits(logits: &Matrix, target: &Matrix) -> f64 {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(target.iter())
        .map(|(&x, &t)| x.max(0.0) - t * x + (-x.abs()).exp().ln_1p())
        .sum::<f64>()
        / n
}

/// Pair weight in the pooled double sum: 1/m² within X, 1/n² within Y,
/// -1/(mn) across.
fn pair_weight(i: usize, j: usize, m: usize, n: usize) -> f64 {
    match (i < m, j < m) {
        (true, true) => 1.0 / (m * m) as f64,
        (false, false) => 1.0 / (n * n) as f64,
        _ => -1.0 / (m * n) as f64,
    }
}

/// Biased MMD² from pooled squared distances; the first `m` rows are X.
pub(crate) fn mmd_sq_from_distances(sq: &Matrix, m: usize, sigma: f64) -> f64 {
    let total = sq.nrows();
    let n = total - m;
    let denom = 2.0 * sigma * sigma;
    let mut acc = 0.0;
    for i in 0..total {
        for j in 0..total {
            acc += pair_weight(i, j, m, n) * (-sq[[i, j]] / denom).exp();
        }
    }
    acc
}

fn mmd_sq_backward(x: &Matrix, y: &Matrix, trace: &MmdTrace) -> (Matrix, Matrix) {
    let m = x.nrows();
    let n = y.nrows();
    let z = kernel::stack_rows(x, y);
    let sq = kernel::squared_distances(&z);
    let total = m + n;
    let sigma = trace.sigma;
    let s2 = sigma * sigma;
    let mut gz = Matrix::zeros(z.dim());
    let mut dl_dsigma = 0.0;
    for i in 0..total {
        for j in 0..total {
            if i == j {
                continue;
            }
            let w = pair_weight(i, j, m, n);
            let k = (-sq[[i, j]] / (2.0 * s2)).exp();
            dl_dsigma += w * k * sq[[i, j]] / (s2 * sigma);
            let c = -2.0 * w * k / s2;
            for col in 0..z.ncols() {
                gz[[i, col]] += c * (z[[i, col]] - z[[j, col]]);
            }
        }
    }
    for &(a, b, weight) in &trace.median_pairs {
        let d = sq[[a, b]].sqrt();
        if d == 0.0 {
            continue;
        }
        let scale = dl_dsigma * weight / d;
        for col in 0..z.ncols() {
            let diff = z[[a, col]] - z[[b, col]];
            gz[[a, col]] += scale * diff;
            gz[[b, col]] -= scale * diff;
        }
    }
    let gx = gz.slice(s![..m, ..]).to_owned();
    let gy = gz.slice(s![m.., ..]).to_owned();
    (gx, gy)
}
