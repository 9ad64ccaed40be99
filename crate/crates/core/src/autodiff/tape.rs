use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::gemm;
use super::{AutodiffError, Tensor};

type Result<T> = std::result::Result<T, AutodiffError>;

/// Elementwise functions with closed-form derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Unary {
    Relu,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Square,
    Recip,
    Atanh,
    Asinh,
    Acosh,
    /// `tanh(√s)/√s`, smooth at `s = 0`.
    TanhRatio,
    /// `atanh(√s)/√s`, smooth at `s = 0`.
    AtanhRatio,
}

// Below this argument the ratio functions switch to their Maclaurin series.
const SERIES_CUTOFF: f64 = 1e-3;

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::Tanh => "tanh",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Sqrt => "sqrt",
            Unary::Square => "square",
            Unary::Recip => "recip",
            Unary::Atanh => "atanh",
            Unary::Asinh => "asinh",
            Unary::Acosh => "acosh",
            Unary::TanhRatio => "tanh_ratio",
            Unary::AtanhRatio => "atanh_ratio",
        }
    }

    fn check_domain(self, x: f64) -> std::result::Result<(), &'static str> {
        let ok = match self {
            Unary::Log => x > 0.0,
            Unary::Sqrt | Unary::TanhRatio => x >= 0.0,
            Unary::Recip => x != 0.0,
            Unary::Atanh => x.abs() < 1.0,
            Unary::AtanhRatio => (0.0..1.0).contains(&x),
            Unary::Acosh => x >= 1.0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(match self {
                Unary::Log => "argument must be positive",
                Unary::Sqrt | Unary::TanhRatio => "argument must be non-negative",
                Unary::Recip => "argument must be non-zero",
                Unary::Atanh => "argument must lie in (-1, 1)",
                Unary::AtanhRatio => "argument must lie in [0, 1)",
                _ => "argument must be at least 1",
            })
        }
    }

    pub(crate) fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Recip => 1.0 / x,
            Unary::Atanh => x.atanh(),
            Unary::Asinh => x.asinh(),
            Unary::Acosh => x.acosh(),
            Unary::TanhRatio => tanh_ratio(x),
            Unary::AtanhRatio => atanh_ratio(x),
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Tanh => 1.0 - y * y,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sqrt => 0.5 / y,
            Unary::Square => 2.0 * x,
            Unary::Recip => -y * y,
            Unary::Atanh => 1.0 / (1.0 - x * x),
            Unary::Asinh => 1.0 / (1.0 + x * x).sqrt(),
            Unary::Acosh => 1.0 / ((x - 1.0) * (x + 1.0)).sqrt(),
            Unary::TanhRatio => tanh_ratio_derivative(x),
            Unary::AtanhRatio => atanh_ratio_derivative(x),
        }
    }
}

pub(crate) fn tanh_ratio(s: f64) -> f64 {
    if s < SERIES_CUTOFF {
        1.0 - s / 3.0 + s * s * (2.0 / 15.0) - s.powi(3) * (17.0 / 315.0)
            + s.powi(4) * (62.0 / 2835.0)
            - s.powi(5) * (1382.0 / 155925.0)
    } else {
        let u = s.sqrt();
        u.tanh() / u
    }
}

fn tanh_ratio_derivative(s: f64) -> f64 {
    if s < SERIES_CUTOFF {
        -1.0 / 3.0 + s * (4.0 / 15.0) - s * s * (51.0 / 315.0) + s.powi(3) * (248.0 / 2835.0)
            - s.powi(4) * (6910.0 / 155925.0)
    } else {
        let u = s.sqrt();
        let t = u.tanh();
        (u * (1.0 - t * t) - t) / (2.0 * u * s)
    }
}

pub(crate) fn atanh_ratio(s: f64) -> f64 {
    if s < SERIES_CUTOFF {
        (0..7).map(|k| s.powi(k) / (2 * k + 1) as f64).sum()
    } else {
        let u = s.sqrt();
        u.atanh() / u
    }
}

fn atanh_ratio_derivative(s: f64) -> f64 {
    if s < SERIES_CUTOFF {
        (1..7)
            .map(|k| k as f64 * s.powi(k - 1) / (2 * k + 1) as f64)
            .sum()
    } else {
        let u = s.sqrt();
        (u / (1.0 - s) - u.atanh()) / (2.0 * u * s)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MulScalarVar(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Unary(usize, Unary),
    Clamp(usize, f64, f64),
    Minimum(usize, usize),
    Maximum(usize, usize),
    SumAll(usize),
    MeanAll(usize),
    SumAxis(usize),
    Expand(usize),
    RowNorm(usize),
    L2Norm(usize),
    LogSoftmax(usize),
    Gather(usize, Rc<[usize]>),
    SelectRows(usize, Rc<[usize]>),
    SliceCols(usize, usize),
    Reshape(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    retain: bool,
}

/// Define-by-run record of tensor operations.
///
/// A tape is rebuilt for every forward pass. Nodes are appended in evaluation
/// order, so parents always precede their children and a single reverse sweep
/// visits each node once.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by [`Tape::backward`]: every leaf that requires a
/// gradient plus any node marked with [`Tape::retain`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of its shape when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a differentiable leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant: no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Keeps the gradient of an intermediate node after [`Tape::backward`].
    pub fn retain(&self, var: Var<'_>) {
        self.nodes.borrow_mut()[var.id].retain = true;
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            retain: false,
        });
        Var { tape: self, id }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.numel() != 1 {
            return Err(AutodiffError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.id + 1];
        let mut kept: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::filled(root_value.shape(), 1.0));

        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            propagate(&nodes, id, &g, &mut grads);
            if node.retain || matches!(node.op, Op::Leaf) {
                kept[id] = Some(g);
            }
        }
        Ok(Gradients { grads: kept })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn zip3_map(a: &Tensor, b: &Tensor, c: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .zip(c.data())
            .map(|((&x, &y), &z)| f(x, y, z))
            .collect(),
    )
}

fn propagate(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.scale(-1.0));
        }
        Op::Mul(a, b) => {
            if nodes[*a].requires_grad {
                accumulate(grads, nodes, *a, zip_map(g, val(*b), |g, y| g * y));
            }
            if nodes[*b].requires_grad {
                accumulate(grads, nodes, *b, zip_map(g, val(*a), |g, x| g * x));
            }
        }
        Op::Div(a, b) => {
            if nodes[*a].requires_grad {
                accumulate(grads, nodes, *a, zip_map(g, val(*b), |g, y| g / y));
            }
            if nodes[*b].requires_grad {
                accumulate(
                    grads,
                    nodes,
                    *b,
                    zip3_map(g, out, val(*b), |g, q, y| -g * q / y),
                );
            }
        }
        Op::Scale(a, alpha) => accumulate(grads, nodes, *a, g.scale(*alpha)),
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g.clone()),
        Op::MulScalarVar(t, s) => {
            let sv = val(*s).item();
            if nodes[*t].requires_grad {
                accumulate(grads, nodes, *t, g.scale(sv));
            }
            if nodes[*s].requires_grad {
                let dot: f64 = g
                    .data()
                    .iter()
                    .zip(val(*t).data())
                    .map(|(a, b)| a * b)
                    .sum();
                accumulate(
                    grads,
                    nodes,
                    *s,
                    Tensor::from_parts(val(*s).shape().to_vec(), vec![dot]),
                );
            }
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if nodes[*a].requires_grad {
                // dA = G Bᵀ
                let d = gemm(m, n, k, g.data(), false, bv.data(), true);
                accumulate(grads, nodes, *a, Tensor::from_parts(vec![m, k], d));
            }
            if nodes[*b].requires_grad {
                // dB = Aᵀ G
                let d = gemm(k, m, n, av.data(), true, g.data(), false);
                accumulate(grads, nodes, *b, Tensor::from_parts(vec![k, n], d));
            }
        }
        Op::Transpose(a) => accumulate(grads, nodes, *a, g.transpose()),
        Op::Unary(a, f) => {
            let x = val(*a);
            accumulate(
                grads,
                nodes,
                *a,
                zip3_map(g, x, out, |g, x, y| {
                    if g == 0.0 {
                        0.0
                    } else {
                        g * f.derivative(x, y)
                    }
                }),
            );
        }
        Op::Clamp(a, lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            accumulate(
                grads,
                nodes,
                *a,
                zip_map(g, val(*a), |g, x| if x >= lo && x <= hi { g } else { 0.0 }),
            );
        }
        Op::Minimum(a, b) | Op::Maximum(a, b) => {
            let pick_a_when_le = matches!(nodes[id].op, Op::Minimum(..));
            let (av, bv) = (val(*a), val(*b));
            let chooses_a = |x: f64, y: f64| if pick_a_when_le { x <= y } else { x >= y };
            accumulate(
                grads,
                nodes,
                *a,
                zip3_map(g, av, bv, |g, x, y| if chooses_a(x, y) { g } else { 0.0 }),
            );
            accumulate(
                grads,
                nodes,
                *b,
                zip3_map(g, av, bv, |g, x, y| if chooses_a(x, y) { 0.0 } else { g }),
            );
        }
        Op::SumAll(a) => {
            accumulate(grads, nodes, *a, Tensor::filled(val(*a).shape(), g.item()));
        }
        Op::MeanAll(a) => {
            let n = val(*a).numel() as f64;
            accumulate(
                grads,
                nodes,
                *a,
                Tensor::filled(val(*a).shape(), g.item() / n),
            );
        }
        // Sum-reduction and broadcast are each other's adjoint.
        Op::SumAxis(a) => accumulate(grads, nodes, *a, broadcast_2d(g, val(*a).shape())),
        Op::Expand(a) => accumulate(grads, nodes, *a, reduce_2d(g, val(*a).shape())),
        Op::RowNorm(a) => {
            let x = val(*a);
            let c = x.cols();
            let mut d = vec![0.0; x.numel()];
            for r in 0..x.rows() {
                let norm = out.data()[r];
                if norm > 0.0 {
                    let s = g.data()[r] / norm;
                    for j in 0..c {
                        d[r * c + j] = s * x.data()[r * c + j];
                    }
                }
            }
            accumulate(grads, nodes, *a, Tensor::from_parts(x.shape().to_vec(), d));
        }
        Op::L2Norm(a) => {
            let x = val(*a);
            let norm = out.item();
            let d = if norm > 0.0 {
                x.scale(g.item() / norm)
            } else {
                Tensor::zeros(x.shape())
            };
            accumulate(grads, nodes, *a, d);
        }
        Op::LogSoftmax(a) => {
            let c = out.cols();
            let mut d = vec![0.0; out.numel()];
            for r in 0..out.rows() {
                let grow = &g.data()[r * c..(r + 1) * c];
                let total: f64 = grow.iter().sum();
                for j in 0..c {
                    d[r * c + j] = grow[j] - out.data()[r * c + j].exp() * total;
                }
            }
            accumulate(
                grads,
                nodes,
                *a,
                Tensor::from_parts(out.shape().to_vec(), d),
            );
        }
        Op::Gather(a, idx) => {
            let x = val(*a);
            let c = x.cols();
            let mut d = vec![0.0; x.numel()];
            for (r, &j) in idx.iter().enumerate() {
                d[r * c + j] += g.data()[r];
            }
            accumulate(grads, nodes, *a, Tensor::from_parts(x.shape().to_vec(), d));
        }
        Op::SelectRows(a, idx) => {
            let x = val(*a);
            let c = x.cols();
            let mut d = vec![0.0; x.numel()];
            for (r, &src) in idx.iter().enumerate() {
                for j in 0..c {
                    d[src * c + j] += g.data()[r * c + j];
                }
            }
            accumulate(grads, nodes, *a, Tensor::from_parts(x.shape().to_vec(), d));
        }
        Op::SliceCols(a, start) => {
            let x = val(*a);
            let (c, w) = (x.cols(), out.cols());
            let mut d = vec![0.0; x.numel()];
            for r in 0..x.rows() {
                d[r * c + start..r * c + start + w].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
            }
            accumulate(grads, nodes, *a, Tensor::from_parts(x.shape().to_vec(), d));
        }
        Op::Reshape(a) => {
            accumulate(
                grads,
                nodes,
                *a,
                Tensor::from_parts(val(*a).shape().to_vec(), g.data().to_vec()),
            );
        }
    }
}

/// Broadcasts a 2-D tensor with unit extents up to `shape`.
fn broadcast_2d(t: &Tensor, shape: &[usize]) -> Tensor {
    let (rows, cols) = (shape[0], shape[1]);
    let (tr, tc) = (t.rows(), t.cols());
    let mut d = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            d.push(t.data()[(if tr == 1 { 0 } else { r }) * tc + if tc == 1 { 0 } else { c }]);
        }
    }
    Tensor::from_parts(shape.to_vec(), d)
}

/// Sums a 2-D tensor down to `shape`, whose extents are either 1 or full.
fn reduce_2d(t: &Tensor, shape: &[usize]) -> Tensor {
    let (rows, cols) = (shape[0], shape[1]);
    let tc = t.cols();
    let mut d = vec![0.0; rows * cols];
    for r in 0..t.rows() {
        for c in 0..tc {
            let rr = if rows == 1 { 0 } else { r };
            let cc = if cols == 1 { 0 } else { c };
            d[rr * cols + cc] += t.data()[r * tc + c];
        }
    }
    Tensor::from_parts(shape.to_vec(), d)
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Value of a single-element variable.
    pub fn item(self) -> f64 {
        self.value().item()
    }

    fn record(self, value: Tensor, op: Op, parents: &[usize]) -> Var<'t> {
        let rg = parents.iter().any(|&p| self.tape.requires_grad(p));
        self.tape.push(value, op, rg)
    }

    fn same_shape(self, other: Var<'t>, op: &'static str) -> Result<(Rc<Tensor>, Rc<Tensor>)> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        Ok((a, b))
    }

    fn require_2d(self, op: &'static str) -> Result<Rc<Tensor>> {
        let v = self.value();
        if v.shape().len() != 2 {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: v.shape().to_vec(),
                rhs: vec![],
            });
        }
        Ok(v)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other, "add")?;
        Ok(self.record(
            zip_map(&a, &b, |x, y| x + y),
            Op::Add(self.id, other.id),
            &[self.id, other.id],
        ))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other, "sub")?;
        Ok(self.record(
            zip_map(&a, &b, |x, y| x - y),
            Op::Sub(self.id, other.id),
            &[self.id, other.id],
        ))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other, "mul")?;
        Ok(self.record(
            zip_map(&a, &b, |x, y| x * y),
            Op::Mul(self.id, other.id),
            &[self.id, other.id],
        ))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other, "div")?;
        if b.data().contains(&0.0) {
            return Err(AutodiffError::Domain {
                op: "div",
                detail: "division by zero",
            });
        }
        Ok(self.record(
            zip_map(&a, &b, |x, y| x / y),
            Op::Div(self.id, other.id),
            &[self.id, other.id],
        ))
    }

    pub fn scale(self, alpha: f64) -> Var<'t> {
        let v = self.value().scale(alpha);
        self.record(v, Op::Scale(self.id, alpha), &[self.id])
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.record(v, Op::AddScalar(self.id), &[self.id])
    }

    /// Multiplies every entry by a single-element variable.
    pub fn mul_scalar(self, s: Var<'t>) -> Result<Var<'t>> {
        let sv = s.value();
        if sv.numel() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_scalar",
                lhs: self.shape(),
                rhs: sv.shape().to_vec(),
            });
        }
        let v = self.value().scale(sv.item());
        Ok(self.record(v, Op::MulScalarVar(self.id, s.id), &[self.id, s.id]))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let d = gemm(m, k, n, a.data(), false, b.data(), false);
        Ok(self.record(
            Tensor::from_parts(vec![m, n], d),
            Op::MatMul(self.id, other.id),
            &[self.id, other.id],
        ))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul(other.transpose()?)
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let v = self.require_2d("transpose")?;
        Ok(self.record(v.transpose(), Op::Transpose(self.id), &[self.id]))
    }

    fn unary(self, f: Unary) -> Result<Var<'t>> {
        let v = self.value();
        for &x in v.data() {
            if let Err(detail) = f.check_domain(x) {
                return Err(AutodiffError::Domain {
                    op: f.name(),
                    detail,
                });
            }
        }
        Ok(self.record(v.map(|x| f.eval(x)), Op::Unary(self.id, f), &[self.id]))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Unary::Relu).expect("relu is total")
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Unary::Tanh).expect("tanh is total")
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Unary::Exp).expect("exp is total")
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Unary::Square).expect("square is total")
    }

    pub fn asinh(self) -> Var<'t> {
        self.unary(Unary::Asinh).expect("asinh is total")
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary(Unary::Log)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(Unary::Sqrt)
    }

    pub fn recip(self) -> Result<Var<'t>> {
        self.unary(Unary::Recip)
    }

    pub fn atanh(self) -> Result<Var<'t>> {
        self.unary(Unary::Atanh)
    }

    pub fn acosh(self) -> Result<Var<'t>> {
        self.unary(Unary::Acosh)
    }

    /// `tanh(√s)/√s` evaluated elementwise, with limit 1 at `s = 0`.
    pub fn tanh_ratio(self) -> Result<Var<'t>> {
        self.unary(Unary::TanhRatio)
    }

    /// `atanh(√s)/√s` evaluated elementwise, with limit 1 at `s = 0`.
    pub fn atanh_ratio(self) -> Result<Var<'t>> {
        self.unary(Unary::AtanhRatio)
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let v = self.value().map(|x| x.clamp(lo, hi));
        self.record(v, Op::Clamp(self.id, lo, hi), &[self.id])
    }

    pub fn minimum(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other, "minimum")?;
        Ok(self.record(
            zip_map(&a, &b, |x, y| if x <= y { x } else { y }),
            Op::Minimum(self.id, other.id),
            &[self.id, other.id],
        ))
    }

    pub fn maximum(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other, "maximum")?;
        Ok(self.record(
            zip_map(&a, &b, |x, y| if x >= y { x } else { y }),
            Op::Maximum(self.id, other.id),
            &[self.id, other.id],
        ))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.record(Tensor::scalar(s), Op::SumAll(self.id), &[self.id])
    }

    pub fn mean(self) -> Var<'t> {
        let v = self.value();
        let m = v.sum() / v.numel() as f64;
        self.record(Tensor::scalar(m), Op::MeanAll(self.id), &[self.id])
    }

    /// Sum along `axis` of a 2-D tensor, keeping the reduced axis with extent 1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let v = self.require_2d("sum_axis")?;
        let (r, c) = (v.rows(), v.cols());
        let out = match axis {
            0 => {
                let mut d = vec![0.0; c];
                for i in 0..r {
                    for (j, acc) in d.iter_mut().enumerate() {
                        *acc += v.data()[i * c + j];
                    }
                }
                Tensor::from_parts(vec![1, c], d)
            }
            1 => Tensor::from_parts(vec![r, 1], (0..r).map(|i| v.row(i).iter().sum()).collect()),
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "sum_axis",
                    lhs: v.shape().to_vec(),
                    rhs: vec![axis],
                })
            }
        };
        Ok(self.record(out, Op::SumAxis(self.id), &[self.id]))
    }

    /// Per-row sums of a `B×n` tensor as `B×1`.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        self.sum_axis(1)
    }

    /// Explicit broadcast of a 2-D tensor with unit extents to `shape`.
    pub fn expand(self, shape: [usize; 2]) -> Result<Var<'t>> {
        let v = self.require_2d("expand")?;
        let ok = (v.rows() == 1 || v.rows() == shape[0]) && (v.cols() == 1 || v.cols() == shape[1]);
        if !ok {
            return Err(AutodiffError::ShapeMismatch {
                op: "expand",
                lhs: v.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        if v.shape() == shape {
            return Ok(self);
        }
        Ok(self.record(broadcast_2d(&v, &shape), Op::Expand(self.id), &[self.id]))
    }

    /// Euclidean norm of each row, as `B×1`.
    pub fn row_norm(self) -> Result<Var<'t>> {
        let v = self.require_2d("row_norm")?;
        let out = (0..v.rows())
            .map(|i| v.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        Ok(self.record(
            Tensor::from_parts(vec![v.rows(), 1], out),
            Op::RowNorm(self.id),
            &[self.id],
        ))
    }

    /// Euclidean norm of all entries.
    pub fn l2_norm(self) -> Var<'t> {
        let n = self.value().norm();
        self.record(Tensor::scalar(n), Op::L2Norm(self.id), &[self.id])
    }

    /// Row-wise log-softmax of logits.
    pub fn log_softmax(self) -> Result<Var<'t>> {
        let v = self.require_2d("log_softmax")?;
        let c = v.cols();
        let mut d = Vec::with_capacity(v.numel());
        for i in 0..v.rows() {
            let row = v.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            d.extend(row.iter().map(|x| x - lse));
        }
        debug_assert_eq!(d.len(), v.rows() * c);
        Ok(self.record(
            Tensor::from_parts(v.shape().to_vec(), d),
            Op::LogSoftmax(self.id),
            &[self.id],
        ))
    }

    /// Picks `self[r, index[r]]` for each row, as `B×1`.
    pub fn gather(self, index: &[usize]) -> Result<Var<'t>> {
        let v = self.require_2d("gather")?;
        if index.len() != v.rows() || index.iter().any(|&j| j >= v.cols()) {
            return Err(AutodiffError::ShapeMismatch {
                op: "gather",
                lhs: v.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let d = index
            .iter()
            .enumerate()
            .map(|(r, &j)| v.get(r, j))
            .collect();
        Ok(self.record(
            Tensor::from_parts(vec![v.rows(), 1], d),
            Op::Gather(self.id, index.into()),
            &[self.id],
        ))
    }

    /// Row selection with repetition allowed.
    pub fn select_rows(self, index: &[usize]) -> Result<Var<'t>> {
        let v = self.require_2d("select_rows")?;
        if index.iter().any(|&r| r >= v.rows()) {
            return Err(AutodiffError::ShapeMismatch {
                op: "select_rows",
                lhs: v.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let mut d = Vec::with_capacity(index.len() * v.cols());
        for &r in index {
            d.extend_from_slice(v.row(r));
        }
        Ok(self.record(
            Tensor::from_parts(vec![index.len(), v.cols()], d),
            Op::SelectRows(self.id, index.into()),
            &[self.id],
        ))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = self.require_2d("slice_cols")?;
        if start >= end || end > v.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                lhs: v.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let mut d = Vec::with_capacity(v.rows() * (end - start));
        for i in 0..v.rows() {
            d.extend_from_slice(&v.row(i)[start..end]);
        }
        Ok(self.record(
            Tensor::from_parts(vec![v.rows(), end - start], d),
            Op::SliceCols(self.id, start),
            &[self.id],
        ))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.record(v, Op::Reshape(self.id), &[self.id]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_series_meets_closed_form() {
        for &s in &[SERIES_CUTOFF * 0.999, SERIES_CUTOFF * 1.001] {
            let u: f64 = s.sqrt();
            assert!((tanh_ratio(s) - u.tanh() / u).abs() < 1e-14);
            assert!((atanh_ratio(s) - u.atanh() / u).abs() < 1e-14);
        }
        let below = tanh_ratio_derivative(SERIES_CUTOFF * 0.999);
        let above = tanh_ratio_derivative(SERIES_CUTOFF * 1.001);
        assert!((below - above).abs() < 1e-6);
        let below = atanh_ratio_derivative(SERIES_CUTOFF * 0.999);
        let above = atanh_ratio_derivative(SERIES_CUTOFF * 1.001);
        assert!((below - above).abs() < 1e-6);
        assert_eq!(tanh_ratio(0.0), 1.0);
        assert_eq!(atanh_ratio(0.0), 1.0);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 2]));
        let err = a.add(b).unwrap_err().to_string();
        assert!(
            err.contains("add") && err.contains("[2, 3]") && err.contains("[2, 2]"),
            "{err}"
        );
        let err = a.matmul(a).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 0.0]).unwrap());
        assert!(matches!(
            a.log(),
            Err(AutodiffError::Domain { op: "log", .. })
        ));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(
            tape.backward(a),
            Err(AutodiffError::NonScalarRoot { .. })
        ));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let c = tape.constant(Tensor::vector(vec![3.0, 4.0]).unwrap());
        let y = a.mul(c).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn retained_intermediate_keeps_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let h = a.scale(3.0);
        tape.retain(h);
        let y = h.square().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(h).unwrap().data(), &[6.0, 12.0]);
        assert_eq!(g.get(a).unwrap().data(), &[18.0, 36.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(2.0));
        let y = a.mul(a).unwrap().add(a).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(a).unwrap().item(), 5.0);
    }
}
