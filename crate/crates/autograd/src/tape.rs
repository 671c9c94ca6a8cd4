//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied during one forward pass. Nodes
//! are appended in evaluation order, so the node list is already a
//! topological order and [`Tape::backward`] is a single reverse sweep.
//! A tape is built, differentiated once and dropped each training step.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use crate::array::{gemm, NumArray};
use crate::error::{dim_err, Error, Result};
use crate::linalg::spd_inverse;
use crate::params::{GradMap, ParamStore};

/// Reduction axis. `Rows` collapses the row dimension (`[m, n] -> [1, n]`),
/// `Cols` collapses the column dimension (`[m, n] -> [m, 1]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Primitive identifiers, as recorded on each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Sum,
    Mean,
    Concat,
    Slice,
    Gather,
    SegmentSum,
    SquaredL2,
    Reshape,
    Transpose,
    Clamp,
    SpdInvTrace,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Sum(usize, Option<Axis>),
    Mean(usize, Option<Axis>),
    Concat(Vec<usize>, Axis),
    Slice {
        src: usize,
        axis: Axis,
        start: usize,
    },
    Gather {
        src: usize,
        index: Vec<usize>,
    },
    SegmentSum {
        src: usize,
        index: Vec<usize>,
    },
    SquaredL2(usize),
    Reshape(usize),
    Transpose(usize),
    Clamp(usize, f64, f64),
    SpdInvTrace {
        src: usize,
        inverse: NumArray,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::Concat(..) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Gather { .. } => OpKind::Gather,
            Op::SegmentSum { .. } => OpKind::SegmentSum,
            Op::SquaredL2(_) => OpKind::SquaredL2,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Clamp(..) => OpKind::Clamp,
            Op::SpdInvTrace { .. } => OpKind::SpdInvTrace,
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: NumArray,
    requires_grad: bool,
}

type TrainableFilter = Box<dyn Fn(&str) -> bool>;

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<String, usize>>,
    frozen: RefCell<HashMap<String, usize>>,
    trainable: Option<TrainableFilter>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape on which only parameters accepted by `filter` receive
    /// gradients; all others enter the graph as constants.
    pub fn with_trainable(filter: impl Fn(&str) -> bool + 'static) -> Self {
        Self {
            trainable: Some(Box::new(filter)),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: NumArray, requires_grad: bool) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::Numeric {
                op: op_name(op.kind()),
                detail: "produced a non-finite value".into(),
            });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn leaf(&self, value: NumArray, requires_grad: bool) -> Result<Var<'_>> {
        if !value.is_matrix() {
            let (r, c) = (value.rows(), value.cols());
            let value = value.reshaped(vec![r, c])?;
            return self.push(Op::Leaf, value, requires_grad);
        }
        self.push(Op::Leaf, value, requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: NumArray) -> Result<Var<'_>> {
        self.leaf(value, false)
    }

    /// A free leaf whose gradient can be read back with [`Gradients::wrt`].
    pub fn variable(&self, value: NumArray) -> Result<Var<'_>> {
        self.leaf(value, true)
    }

    /// The named parameter as a leaf. Repeated lookups return the same node.
    pub fn param(&self, store: &ParamStore, name: &str) -> Result<Var<'_>> {
        if let Some(&id) = self.params.borrow().get(name).or(self.frozen.borrow().get(name)) {
            return Ok(Var { tape: self, id });
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .clone();
        let trainable = self.trainable.as_ref().is_none_or(|f| f(name));
        let var = self.leaf(value, trainable)?;
        let cache = if trainable { &self.params } else { &self.frozen };
        cache.borrow_mut().insert(name.to_string(), var.id);
        Ok(var)
    }

    /// Generic entry point for the parameter-free primitives.
    pub fn apply<'t>(&'t self, kind: OpKind, operands: &[Var<'t>]) -> Result<Var<'t>> {
        let arity = |n: usize| {
            if operands.len() == n {
                Ok(())
            } else {
                Err(Error::Contract(format!(
                    "{} takes {n} operand(s), got {}",
                    op_name(kind),
                    operands.len()
                )))
            }
        };
        match kind {
            OpKind::MatMul => arity(2).and_then(|_| operands[0].matmul(operands[1])),
            OpKind::Add => arity(2).and_then(|_| operands[0].add(operands[1])),
            OpKind::Sub => arity(2).and_then(|_| operands[0].sub(operands[1])),
            OpKind::Mul => arity(2).and_then(|_| operands[0].mul(operands[1])),
            OpKind::Relu => arity(1).and_then(|_| operands[0].relu()),
            OpKind::Sigmoid => arity(1).and_then(|_| operands[0].sigmoid()),
            OpKind::Tanh => arity(1).and_then(|_| operands[0].tanh()),
            OpKind::Exp => arity(1).and_then(|_| operands[0].exp()),
            OpKind::Log => arity(1).and_then(|_| operands[0].log()),
            OpKind::Sum => arity(1).and_then(|_| operands[0].sum()),
            OpKind::Mean => arity(1).and_then(|_| operands[0].mean()),
            OpKind::SquaredL2 => arity(1).and_then(|_| operands[0].squared_l2()),
            OpKind::Transpose => arity(1).and_then(|_| operands[0].transpose()),
            OpKind::SpdInvTrace => arity(1).and_then(|_| operands[0].spd_inv_trace()),
            OpKind::Concat => Var::concat(operands, Axis::Cols),
            other => Err(Error::Contract(format!(
                "{} needs extra arguments; use the dedicated method",
                op_name(other)
            ))),
        }
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<NumArray>> = Vec::new();
        grads.resize_with(loss.id + 1, || None);
        if root.requires_grad {
            grads[loss.id] = Some(NumArray::scalar(1.0));
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.borrow().clone(),
        })
    }
}

fn accumulate(grads: &mut [Option<NumArray>], nodes: &[Node], id: usize, contribution: NumArray) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

/// Sums `g` (shaped like a broadcast output) down to `shape`.
fn unbroadcast(g: &NumArray, rows: usize, cols: usize) -> NumArray {
    if g.rows() == rows && g.cols() == cols {
        return g.clone();
    }
    let mut out = NumArray::zeros(rows, cols);
    let gc = g.cols();
    if rows == 1 && gc == cols {
        for g_row in g.data().chunks_exact(gc) {
            for (o, v) in out.data_mut().iter_mut().zip(g_row) {
                *o += v;
            }
        }
        return out;
    }
    for r in 0..g.rows() {
        for c in 0..gc {
            let (rr, cc) = (if rows == 1 { 0 } else { r }, if cols == 1 { 0 } else { c });
            let v = out.get(rr, cc) + g.data()[r * gc + c];
            out.set(rr, cc, v);
        }
    }
    out
}

fn broadcast_index(rows: usize, cols: usize, r: usize, c: usize) -> usize {
    (if rows == 1 { 0 } else { r }) * cols + if cols == 1 { 0 } else { c }
}

fn backprop_node(nodes: &[Node], id: usize, g: &NumArray, grads: &mut [Option<NumArray>]) {
    let node = &nodes[id];
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            // Accumulate straight into an existing gradient; weights reused
            // across time steps would otherwise allocate every step.
            if wants(a) {
                match &mut grads[a] {
                    Some(ga) => gemm(g, false, val(b), true, ga, 1.0),
                    slot @ None => {
                        let mut ga = NumArray::zeros(val(a).rows(), val(a).cols());
                        gemm(g, false, val(b), true, &mut ga, 0.0);
                        *slot = Some(ga);
                    }
                }
            }
            if wants(b) {
                match &mut grads[b] {
                    Some(gb) => gemm(val(a), true, g, false, gb, 1.0),
                    slot @ None => {
                        let mut gb = NumArray::zeros(val(b).rows(), val(b).cols());
                        gemm(val(a), true, g, false, &mut gb, 0.0);
                        *slot = Some(gb);
                    }
                }
            }
        }
        &Op::Add(a, b) | &Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if wants(a) {
                accumulate(grads, nodes, a, unbroadcast(g, val(a).rows(), val(a).cols()));
            }
            if wants(b) {
                let gb = unbroadcast(g, val(b).rows(), val(b).cols()).map(|v| sign * v);
                accumulate(grads, nodes, b, gb);
            }
        }
        &Op::Mul(a, b) => {
            let (rows, cols) = (g.rows(), g.cols());
            let (av, bv) = (val(a), val(b));
            for (this, other) in [(a, bv), (b, av)] {
                if !wants(this) {
                    continue;
                }
                let mut full = NumArray::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        let o = other.data()[broadcast_index(other.rows(), other.cols(), r, c)];
                        full.set(r, c, g.get(r, c) * o);
                    }
                }
                let t = val(this);
                accumulate(grads, nodes, this, unbroadcast(&full, t.rows(), t.cols()));
            }
        }
        &Op::Scale(a, s) => accumulate(grads, nodes, a, g.map(|v| v * s)),
        &Op::Relu(a) => {
            let x = val(a);
            let ga = zip_map(g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
            accumulate(grads, nodes, a, ga);
        }
        &Op::Sigmoid(a) => {
            let ga = zip_map(g, &node.value, |gv, s| gv * s * (1.0 - s));
            accumulate(grads, nodes, a, ga);
        }
        &Op::Tanh(a) => {
            let ga = zip_map(g, &node.value, |gv, t| gv * (1.0 - t * t));
            accumulate(grads, nodes, a, ga);
        }
        &Op::Exp(a) => accumulate(grads, nodes, a, zip_map(g, &node.value, |gv, e| gv * e)),
        &Op::Log(a) => accumulate(grads, nodes, a, zip_map(g, val(a), |gv, x| gv / x)),
        &Op::Sum(a, axis) | &Op::Mean(a, axis) => {
            let x = val(a);
            let (rows, cols) = (x.rows(), x.cols());
            let count = match axis {
                None => (rows * cols) as f64,
                Some(Axis::Rows) => rows as f64,
                Some(Axis::Cols) => cols as f64,
            };
            let scale = if matches!(node.op, Op::Mean(..)) { 1.0 / count } else { 1.0 };
            let mut ga = NumArray::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    ga.set(r, c, scale * g.data()[broadcast_index(g.rows(), g.cols(), r, c)]);
                }
            }
            accumulate(grads, nodes, a, ga);
        }
        Op::Concat(parts, axis) => {
            let mut offset = 0;
            for &p in parts {
                let pv = val(p);
                let (pr, pc) = (pv.rows(), pv.cols());
                if wants(p) {
                    let mut gp = NumArray::zeros(pr, pc);
                    for r in 0..pr {
                        for c in 0..pc {
                            let v = match axis {
                                Axis::Rows => g.get(offset + r, c),
                                Axis::Cols => g.get(r, offset + c),
                            };
                            gp.set(r, c, v);
                        }
                    }
                    accumulate(grads, nodes, p, gp);
                }
                offset += match axis {
                    Axis::Rows => pr,
                    Axis::Cols => pc,
                };
            }
        }
        &Op::Slice { src, axis, start } => {
            let s = val(src);
            let mut gs = NumArray::zeros(s.rows(), s.cols());
            for r in 0..g.rows() {
                for c in 0..g.cols() {
                    let (rr, cc) = match axis {
                        Axis::Rows => (start + r, c),
                        Axis::Cols => (r, start + c),
                    };
                    gs.set(rr, cc, g.get(r, c));
                }
            }
            accumulate(grads, nodes, src, gs);
        }
        Op::Gather { src, index } => {
            let s = val(*src);
            let cols = s.cols();
            let mut gs = NumArray::zeros(s.rows(), cols);
            for (out_row, &src_row) in index.iter().enumerate() {
                let dst = &mut gs.data_mut()[src_row * cols..(src_row + 1) * cols];
                for (d, v) in dst.iter_mut().zip(g.row_slice(out_row)) {
                    *d += v;
                }
            }
            accumulate(grads, nodes, *src, gs);
        }
        Op::SegmentSum { src, index } => {
            let s = val(*src);
            let cols = s.cols();
            let mut gs = NumArray::zeros(s.rows(), cols);
            for (src_row, &seg) in index.iter().enumerate() {
                gs.data_mut()[src_row * cols..(src_row + 1) * cols]
                    .copy_from_slice(g.row_slice(seg));
            }
            accumulate(grads, nodes, *src, gs);
        }
        &Op::SquaredL2(a) => {
            let x = val(a);
            let mut ga = NumArray::zeros(x.rows(), x.cols());
            for r in 0..x.rows() {
                for c in 0..x.cols() {
                    let gv = g.data()[broadcast_index(g.rows(), g.cols(), r, c)];
                    ga.set(r, c, 2.0 * x.get(r, c) * gv);
                }
            }
            accumulate(grads, nodes, a, ga);
        }
        &Op::Reshape(a) => {
            let x = val(a);
            let ga = g.clone().reshaped(x.shape().to_vec()).expect("reshape sizes agree");
            accumulate(grads, nodes, a, ga);
        }
        &Op::Transpose(a) => accumulate(grads, nodes, a, g.transposed()),
        &Op::Clamp(a, lo, hi) => {
            let ga = zip_map(g, val(a), |gv, x| if x >= lo && x <= hi { gv } else { 0.0 });
            accumulate(grads, nodes, a, ga);
        }
        Op::SpdInvTrace { src, inverse } => {
            // d tr(X⁻¹) = -X⁻¹ X⁻¹ (X symmetric)
            let gv = g.item();
            let sq = inverse.matmul(inverse).expect("square");
            accumulate(grads, nodes, *src, sq.map(|v| -gv * v));
        }
    }
}

fn zip_map(a: &NumArray, b: &NumArray, f: impl Fn(f64, f64) -> f64) -> NumArray {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    NumArray::new(a.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn op_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Leaf => "leaf",
        OpKind::MatMul => "matmul",
        OpKind::Add => "add",
        OpKind::Sub => "subtract",
        OpKind::Mul => "multiply",
        OpKind::Scale => "scale",
        OpKind::Relu => "relu",
        OpKind::Sigmoid => "sigmoid",
        OpKind::Tanh => "tanh",
        OpKind::Exp => "exp",
        OpKind::Log => "log",
        OpKind::Sum => "sum",
        OpKind::Mean => "mean",
        OpKind::Concat => "concat",
        OpKind::Slice => "slice",
        OpKind::Gather => "gather",
        OpKind::SegmentSum => "segment-sum",
        OpKind::SquaredL2 => "squared-l2",
        OpKind::Reshape => "reshape",
        OpKind::Transpose => "transpose",
        OpKind::Clamp => "clamp",
        OpKind::SpdInvTrace => "spd-inverse-trace",
    }
}

fn broadcast_shape(op: &'static str, a: &NumArray, b: &NumArray) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    match (dim(a.rows(), b.rows()), dim(a.cols(), b.cols())) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(dim_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()))),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrow of the computed value.
    pub fn value(&self) -> Ref<'t, NumArray> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> (usize, usize) {
        let v = self.value();
        (v.rows(), v.cols())
    }

    pub fn op_kind(&self) -> OpKind {
        self.tape.nodes.borrow()[self.id].op.kind()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn rg(&self) -> bool {
        self.requires_grad()
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands belong to different tapes".into()))
        }
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let out = self.value().matmul(&rhs.value())?;
        self.tape.push(Op::MatMul(self.id, rhs.id), out, self.rg() || rhs.rg())
    }

    fn binary(
        self,
        rhs: Var<'t>,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let out = {
            let (a, b) = (self.value(), rhs.value());
            let (rows, cols) = broadcast_shape(name, &a, &b)?;
            let mut out = NumArray::zeros(rows, cols);
            if a.rows() == rows && a.cols() == cols && b.rows() == rows && b.cols() == cols {
                for ((o, &x), &y) in out.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                    *o = f(x, y);
                }
            } else if a.rows() == rows && a.cols() == cols && b.rows() == 1 && b.cols() == cols {
                // Row vector against a matrix, e.g. a bias.
                for (o_row, a_row) in out.data_mut().chunks_exact_mut(cols).zip(a.data().chunks_exact(cols)) {
                    for ((o, &x), &y) in o_row.iter_mut().zip(a_row).zip(b.data()) {
                        *o = f(x, y);
                    }
                }
            } else {
                for r in 0..rows {
                    for c in 0..cols {
                        let x = a.data()[broadcast_index(a.rows(), a.cols(), r, c)];
                        let y = b.data()[broadcast_index(b.rows(), b.cols(), r, c)];
                        out.set(r, c, f(x, y));
                    }
                }
            }
            out
        };
        self.tape.push(op, out, self.rg() || rhs.rg())
    }

    /// Elementwise sum. `rhs` may be a `[1, n]` row, `[m, 1]` column or
    /// `[1, 1]` scalar broadcast against `self` (and vice versa).
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, Op::Add(self.id, rhs.id), "add", |a, b| a + b)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, Op::Sub(self.id, rhs.id), "subtract", |a, b| a - b)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, Op::Mul(self.id, rhs.id), "multiply", |a, b| a * b)
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        let out = self.value().map(|v| v * s);
        self.tape.push(Op::Scale(self.id, s), out, self.rg())
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t>> {
        let c = self.tape.constant(NumArray::scalar(s))?;
        self.add(c)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let out = self.value().map(f);
        self.tape.push(op, out, self.rg())
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(Op::Relu(self.id), |v| v.max(0.0))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid(self.id), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        if let Some(bad) = self.value().data().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Numeric {
                op: "log",
                detail: format!("argument {bad} is outside the domain (0, inf)"),
            });
        }
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.unary(Op::Clamp(self.id, lo, hi), |v| v.clamp(lo, hi))
    }

    fn reduce(self, axis: Option<Axis>, mean: bool, square: bool) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            let (rows, cols) = (x.rows(), x.cols());
            let f = |v: f64| if square { v * v } else { v };
            let (mut out, count) = match axis {
                None => (NumArray::scalar(x.data().iter().map(|&v| f(v)).sum()), rows * cols),
                Some(Axis::Rows) => {
                    let mut o = NumArray::zeros(1, cols);
                    for r in 0..rows {
                        for (d, &v) in o.data_mut().iter_mut().zip(x.row_slice(r)) {
                            *d += f(v);
                        }
                    }
                    (o, rows)
                }
                Some(Axis::Cols) => {
                    let data = (0..rows).map(|r| x.row_slice(r).iter().map(|&v| f(v)).sum()).collect();
                    (NumArray::column(data), cols)
                }
            };
            if mean {
                if count == 0 {
                    return Err(dim_err("mean", "mean over an empty axis"));
                }
                let inv = 1.0 / count as f64;
                out.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            out
        };
        let op = match (mean, square) {
            (true, _) => Op::Mean(self.id, axis),
            (false, true) => Op::SquaredL2(self.id),
            (false, false) => Op::Sum(self.id, axis),
        };
        self.tape.push(op, out, self.rg())
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.reduce(None, false, false)
    }

    pub fn sum_axis(self, axis: Axis) -> Result<Var<'t>> {
        self.reduce(Some(axis), false, false)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.reduce(None, true, false)
    }

    pub fn mean_axis(self, axis: Axis) -> Result<Var<'t>> {
        self.reduce(Some(axis), true, false)
    }

    /// Sum of squares over every entry.
    pub fn squared_l2(self) -> Result<Var<'t>> {
        self.reduce(None, false, true)
    }

    /// Sum of squares along an axis, e.g. `Axis::Cols` gives per-row norms².
    pub fn squared_l2_axis(self, axis: Axis) -> Result<Var<'t>> {
        self.reduce(Some(axis), false, true)
    }

    pub fn concat(parts: &[Var<'t>], axis: Axis) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| dim_err("concat", "no operands"))?;
        let tape = first.tape;
        let mut rg = false;
        let out = {
            let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
            for p in parts {
                first.same_tape(p)?;
                rg |= p.rg();
            }
            match axis {
                Axis::Cols => {
                    let rows = values[0].rows();
                    if values.iter().any(|v| v.rows() != rows) {
                        return Err(dim_err("concat", "row counts differ"));
                    }
                    let cols: usize = values.iter().map(|v| v.cols()).sum();
                    let mut data = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        for v in &values {
                            data.extend_from_slice(v.row_slice(r));
                        }
                    }
                    NumArray::matrix(rows, cols, data)?
                }
                Axis::Rows => {
                    let cols = values[0].cols();
                    if values.iter().any(|v| v.cols() != cols) {
                        return Err(dim_err("concat", "column counts differ"));
                    }
                    let rows: usize = values.iter().map(|v| v.rows()).sum();
                    let mut data = Vec::with_capacity(rows * cols);
                    for v in &values {
                        data.extend_from_slice(v.data());
                    }
                    NumArray::matrix(rows, cols, data)?
                }
            }
        };
        tape.push(Op::Concat(parts.iter().map(|p| p.id).collect(), axis), out, rg)
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(self, axis: Axis, start: usize, end: usize) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            let (rows, cols) = (x.rows(), x.cols());
            let extent = match axis {
                Axis::Rows => rows,
                Axis::Cols => cols,
            };
            if start > end || end > extent {
                return Err(dim_err(
                    "slice",
                    format!("range {start}..{end} out of bounds for {:?} on {axis:?}", x.shape()),
                ));
            }
            match axis {
                Axis::Rows => NumArray::matrix(end - start, cols, x.data()[start * cols..end * cols].to_vec())?,
                Axis::Cols => {
                    let w = end - start;
                    let mut data = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        data.extend_from_slice(&x.row_slice(r)[start..end]);
                    }
                    NumArray::matrix(rows, w, data)?
                }
            }
        };
        self.tape.push(
            Op::Slice {
                src: self.id,
                axis,
                start,
            },
            out,
            self.rg(),
        )
    }

    /// Row selection: output row `k` is input row `index[k]`.
    pub fn gather_rows(self, index: &[usize]) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            let (rows, cols) = (x.rows(), x.cols());
            if let Some(bad) = index.iter().find(|&&i| i >= rows) {
                return Err(dim_err("gather", format!("row {bad} out of {rows}")));
            }
            let mut data = Vec::with_capacity(index.len() * cols);
            for &i in index {
                data.extend_from_slice(x.row_slice(i));
            }
            NumArray::matrix(index.len(), cols, data)?
        };
        self.tape.push(
            Op::Gather {
                src: self.id,
                index: index.to_vec(),
            },
            out,
            self.rg(),
        )
    }

    /// Sums source row `r` into output row `index[r]`; output has
    /// `segments` rows, empty segments are zero.
    pub fn segment_sum(self, index: &[usize], segments: usize) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            let cols = x.cols();
            if index.len() != x.rows() {
                return Err(dim_err(
                    "segment-sum",
                    format!("{} indices for {} rows", index.len(), x.rows()),
                ));
            }
            if let Some(bad) = index.iter().find(|&&i| i >= segments) {
                return Err(dim_err("segment-sum", format!("segment {bad} out of {segments}")));
            }
            let mut out = NumArray::zeros(segments, cols);
            for (r, &seg) in index.iter().enumerate() {
                let dst = &mut out.data_mut()[seg * cols..(seg + 1) * cols];
                for (d, v) in dst.iter_mut().zip(x.row_slice(r)) {
                    *d += v;
                }
            }
            out
        };
        self.tape.push(
            Op::SegmentSum {
                src: self.id,
                index: index.to_vec(),
            },
            out,
            self.rg(),
        )
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let out = self.value().clone().reshaped(vec![rows, cols])?;
        self.tape.push(Op::Reshape(self.id), out, self.rg())
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let out = self.value().transposed();
        self.tape.push(Op::Transpose(self.id), out, self.rg())
    }

    /// `tr(X⁻¹)` for a symmetric positive-definite `X`, through a Cholesky
    /// factorization (one jitter retry, see [`crate::linalg::spd_inverse`]).
    pub fn spd_inv_trace(self) -> Result<Var<'t>> {
        let inverse = spd_inverse(&self.value())?;
        let n = inverse.rows();
        let trace = (0..n).map(|i| inverse.get(i, i)).sum();
        self.tape.push(
            Op::SpdInvTrace {
                src: self.id,
                inverse,
            },
            NumArray::scalar(trace),
            self.rg(),
        )
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<NumArray>>,
    params: HashMap<String, usize>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if it was reached.
    pub fn wrt(&self, var: Var<'_>) -> Option<&NumArray> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradients for every trainable parameter recorded on the tape;
    /// parameters in `store` that were not reached get zeros.
    pub fn for_params(&self, store: &ParamStore) -> GradMap {
        self.collect(store, |_| true)
    }

    /// Like [`Gradients::for_params`], restricted to names accepted by `keep`.
    pub fn collect(&self, store: &ParamStore, keep: impl Fn(&str) -> bool) -> GradMap {
        let mut out = GradMap::new();
        for (name, value) in store.iter() {
            if !keep(name) {
                continue;
            }
            let g = self
                .params
                .get(name)
                .and_then(|&id| self.grads.get(id).and_then(Option::as_ref))
                .cloned()
                .unwrap_or_else(|| {
                    NumArray::new(value.shape().to_vec(), vec![0.0; value.len()]).expect("shape")
                });
            out.insert(name.to_string(), g);
        }
        out
    }
}
