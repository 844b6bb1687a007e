use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Local gradient rule of a node, with the ids of its parents.
#[derive(Clone)]
enum Op<S> {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    AddRow(usize, usize),
    AddCol(usize, usize),
    Tanh(usize),
    Softplus(usize),
    RowL2Normalize(usize, S),
    LogSoftmaxRows(usize),
    LogSumExpRows(usize),
    MaskedFill(usize, Rc<[bool]>),
    Sum(usize),
    WeightedSum(usize, Rc<Tensor<S>>),
    GatherRows(usize, Rc<[usize]>),
    GroupMeanRows(usize, usize),
}

struct Node<S> {
    value: Tensor<S>,
    grad: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Creation-ordered list of nodes; ids are topologically sorted by
/// construction, since an op can only reference nodes that already exist.
pub struct Tape<S> {
    nodes: RefCell<Vec<Node<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar> {
    tape: &'t Tape<S>,
    id: usize,
}

impl<S: Scalar> fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{}({r}x{c})", self.id)
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input (parameter or feature matrix).
    pub fn leaf(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Constant, false)
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        let (r, c) = value.shape();
        nodes.push(Node {
            value,
            grad: Tensor::zeros(r, c),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Tensor<S>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Resets every accumulated gradient to zero.
    pub fn zero_grads(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad.data_mut().iter_mut().for_each(|g| *g = S::zero());
        }
    }

    /// Reverse sweep from a 1x1 root. Gradients are accumulated into the
    /// stored per-node gradients, so a second call without
    /// [`Tape::zero_grads`] doubles them.
    pub fn backward(&self, root: Var<'_, S>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if root.id >= nodes.len() || !std::ptr::eq(root.tape, self) {
            return Err(Error::contract("root does not belong to this tape"));
        }
        if nodes[root.id].value.shape() != (1, 1) {
            let (r, c) = nodes[root.id].value.shape();
            return Err(Error::contract(format!("backward root must be 1x1, got {r}x{c}")));
        }
        let mut local: Vec<Option<Tensor<S>>> = vec![None; root.id + 1];
        local[root.id] = Some(Tensor::scalar(S::one()));

        for id in (0..=root.id).rev() {
            let Some(g) = local[id].take() else { continue };
            if nodes[id].requires_grad {
                propagate(&nodes, id, &g, &mut local);
            }
            nodes[id].grad.add_assign(&g);
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(nodes: &[Node<S>], local: &mut [Option<Tensor<S>>], id: usize, g: Tensor<S>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut local[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn propagate<S: Scalar>(nodes: &[Node<S>], id: usize, g: &Tensor<S>, local: &mut [Option<Tensor<S>>]) {
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf | Op::Constant => {}
        Op::MatMul(a, b) => {
            let ga = g.matmul_t(val(*b)).expect("shapes checked at construction");
            let gb = val(*a).t_matmul(g).expect("shapes checked at construction");
            accumulate(nodes, local, *a, ga);
            accumulate(nodes, local, *b, gb);
        }
        Op::Transpose(a) => accumulate(nodes, local, *a, g.transpose()),
        Op::Add(a, b) => {
            accumulate(nodes, local, *a, g.clone());
            accumulate(nodes, local, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, local, *a, g.clone());
            accumulate(nodes, local, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            accumulate(nodes, local, *a, g.zip_map(val(*b), |x, y| x * y));
            accumulate(nodes, local, *b, g.zip_map(val(*a), |x, y| x * y));
        }
        Op::Scale(a, c) => {
            let c = *c;
            accumulate(nodes, local, *a, g.map(|v| v * c));
        }
        Op::AddRow(a, row) => {
            let col_sums = Tensor::from_fn(1, g.cols(), |_, c| {
                (0..g.rows()).fold(S::zero(), |acc, r| acc + g.get(r, c))
            });
            accumulate(nodes, local, *a, g.clone());
            accumulate(nodes, local, *row, col_sums);
        }
        Op::AddCol(a, col) => {
            let row_sums = Tensor::from_fn(g.rows(), 1, |r, _| g.row(r).iter().copied().sum());
            accumulate(nodes, local, *a, g.clone());
            accumulate(nodes, local, *col, row_sums);
        }
        Op::Tanh(a) => {
            let y = &nodes[id].value;
            accumulate(nodes, local, *a, g.zip_map(y, |gv, yv| gv * (S::one() - yv * yv)));
        }
        Op::Softplus(a) => {
            accumulate(nodes, local, *a, g.zip_map(val(*a), |gv, x| gv * x.sigmoid()));
        }
        Op::RowL2Normalize(a, eps) => {
            let x = val(*a);
            let y = &nodes[id].value;
            let mut ga = g.clone();
            for r in 0..x.rows() {
                let norm = x.row(r).iter().fold(S::zero(), |acc, &v| acc + v * v).sqrt();
                let out = ga.row_mut(r);
                if norm > *eps {
                    let dot = g
                        .row(r)
                        .iter()
                        .zip(y.row(r))
                        .fold(S::zero(), |acc, (&gv, &yv)| acc + gv * yv);
                    for (o, &yv) in out.iter_mut().zip(y.row(r)) {
                        *o = (*o - yv * dot) / norm;
                    }
                } else {
                    // max() picked the constant eps: no gradient through the norm.
                    for o in out.iter_mut() {
                        *o /= *eps;
                    }
                }
            }
            accumulate(nodes, local, *a, ga);
        }
        Op::LogSoftmaxRows(a) => {
            let y = &nodes[id].value;
            let mut ga = g.clone();
            for r in 0..y.rows() {
                let gsum: S = g.row(r).iter().copied().sum();
                for (o, &yv) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                    *o -= yv.exp() * gsum;
                }
            }
            accumulate(nodes, local, *a, ga);
        }
        Op::LogSumExpRows(a) => {
            let x = val(*a);
            let lse = &nodes[id].value;
            let ga = Tensor::from_fn(x.rows(), x.cols(), |r, c| {
                g.get(r, 0) * (x.get(r, c) - lse.get(r, 0)).exp()
            });
            accumulate(nodes, local, *a, ga);
        }
        Op::MaskedFill(a, mask) => {
            let mut ga = g.clone();
            for (v, &m) in ga.data_mut().iter_mut().zip(mask.iter()) {
                if m {
                    *v = S::zero();
                }
            }
            accumulate(nodes, local, *a, ga);
        }
        Op::Sum(a) => {
            let (r, c) = val(*a).shape();
            accumulate(nodes, local, *a, Tensor::full(r, c, g.item()));
        }
        Op::WeightedSum(a, w) => {
            let s = g.item();
            accumulate(nodes, local, *a, w.map(|v| v * s));
        }
        Op::GatherRows(a, idx) => {
            let (r, c) = val(*a).shape();
            let mut ga = Tensor::zeros(r, c);
            for (k, &src) in idx.iter().enumerate() {
                for (o, &v) in ga.row_mut(src).iter_mut().zip(g.row(k)) {
                    *o += v;
                }
            }
            accumulate(nodes, local, *a, ga);
        }
        Op::GroupMeanRows(a, fold) => {
            let inv = S::one() / S::from_count(*fold);
            let (r, c) = val(*a).shape();
            let ga = Tensor::from_fn(r, c, |i, j| g.get(i / fold, j) * inv);
            accumulate(nodes, local, *a, ga);
        }
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.value_ref(self.id).shape()
    }

    pub fn value(&self) -> Tensor<S> {
        self.tape.value_ref(self.id).clone()
    }

    /// Value of a 1x1 node.
    pub fn item(&self) -> S {
        self.tape.value_ref(self.id).item()
    }

    pub fn grad(&self) -> Tensor<S> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    fn same_tape(&self, other: &Var<'t, S>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::contract("operands live on different tapes"))
        }
    }

    fn unary(&self, op: Op<S>, f: impl FnOnce(&Tensor<S>) -> Tensor<S>) -> Var<'t, S> {
        let out = f(&self.tape.value_ref(self.id));
        let req = self.tape.requires(&[self.id]);
        self.tape.push(out, op, req)
    }

    fn binary(
        &self,
        other: &Var<'t, S>,
        op: Op<S>,
        f: impl FnOnce(&Tensor<S>, &Tensor<S>) -> Result<Tensor<S>>,
    ) -> Result<Var<'t, S>> {
        self.same_tape(other)?;
        let out = {
            let a = self.tape.value_ref(self.id);
            let b = self.tape.value_ref(other.id);
            f(&a, &b)?
        };
        let req = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(out, op, req))
    }

    fn same_shape(a: &Tensor<S>, b: &Tensor<S>, what: &str) -> Result<()> {
        if a.shape() == b.shape() {
            Ok(())
        } else {
            Err(Error::dim(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())))
        }
    }

    pub fn matmul(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| a.matmul(b))
    }

    pub fn transpose(&self) -> Var<'t, S> {
        self.unary(Op::Transpose(self.id), Tensor::transpose)
    }

    pub fn add(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| {
            Self::same_shape(a, b, "add")?;
            Ok(a.zip_map(b, |x, y| x + y))
        })
    }

    pub fn sub(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| {
            Self::same_shape(a, b, "sub")?;
            Ok(a.zip_map(b, |x, y| x - y))
        })
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| {
            Self::same_shape(a, b, "mul")?;
            Ok(a.zip_map(b, |x, y| x * y))
        })
    }

    pub fn scale(&self, c: S) -> Var<'t, S> {
        self.unary(Op::Scale(self.id, c), |a| a.map(|v| v * c))
    }

    pub fn neg(&self) -> Var<'t, S> {
        self.scale(-S::one())
    }

    /// Adds a 1xC row vector to every row (bias).
    pub fn add_row(&self, row: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(row, Op::AddRow(self.id, row.id), |a, r| a.add_row_vector(r))
    }

    /// Adds an Rx1 column vector to every column.
    pub fn add_col(&self, col: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(col, Op::AddCol(self.id, col.id), |a, c| {
            if c.shape() != (a.rows(), 1) {
                return Err(Error::dim(format!(
                    "cannot broadcast {:?} over columns of {:?}",
                    c.shape(),
                    a.shape()
                )));
            }
            let mut out = a.clone();
            for r in 0..a.rows() {
                let cv = c.get(r, 0);
                out.row_mut(r).iter_mut().for_each(|v| *v += cv);
            }
            Ok(out)
        })
    }

    pub fn tanh(&self) -> Var<'t, S> {
        self.unary(Op::Tanh(self.id), |a| a.map(S::tanh))
    }

    pub fn softplus(&self) -> Var<'t, S> {
        self.unary(Op::Softplus(self.id), |a| a.map(S::softplus))
    }

    pub fn row_l2_normalize(&self, eps: S) -> Var<'t, S> {
        self.unary(Op::RowL2Normalize(self.id, eps), |a| a.row_l2_normalize(eps))
    }

    pub fn log_softmax_rows(&self) -> Var<'t, S> {
        self.unary(Op::LogSoftmaxRows(self.id), Tensor::log_softmax_rows)
    }

    /// Row-wise log-sum-exp as an Rx1 column.
    pub fn logsumexp_rows(&self) -> Var<'t, S> {
        self.unary(Op::LogSumExpRows(self.id), Tensor::logsumexp_rows)
    }

    /// Replaces entries where `mask` is true by `fill`; those entries pass no
    /// gradient.
    pub fn masked_fill(&self, mask: &[bool], fill: S) -> Result<Var<'t, S>> {
        let (r, c) = self.shape();
        if mask.len() != r * c {
            return Err(Error::dim(format!(
                "mask of {} entries for a {r}x{c} input",
                mask.len()
            )));
        }
        let mask: Rc<[bool]> = mask.into();
        Ok(self.unary(Op::MaskedFill(self.id, mask.clone()), |a| {
            let mut out = a.clone();
            for (v, &m) in out.data_mut().iter_mut().zip(mask.iter()) {
                if m {
                    *v = fill;
                }
            }
            out
        }))
    }

    pub fn sum(&self) -> Var<'t, S> {
        self.unary(Op::Sum(self.id), |a| Tensor::scalar(a.sum()))
    }

    /// `Σ w∘self` against constant weights, as a 1x1 node. Zero weights
    /// contribute an exact `+0`.
    pub fn weighted_sum(&self, weights: &Tensor<S>) -> Result<Var<'t, S>> {
        let (r, c) = self.shape();
        if weights.shape() != (r, c) {
            return Err(Error::dim(format!("weights {:?} for a {r}x{c} input", weights.shape())));
        }
        let w = Rc::new(weights.clone());
        Ok(self.unary(Op::WeightedSum(self.id, w.clone()), |a| {
            let mut acc = S::zero();
            for (&x, &wv) in a.data().iter().zip(w.data()) {
                if wv != S::zero() {
                    acc += wv * x;
                }
            }
            Tensor::scalar(acc)
        }))
    }

    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<'t, S>> {
        let out = self.tape.value_ref(self.id).gather_rows(indices)?;
        let req = self.tape.requires(&[self.id]);
        Ok(self.tape.push(out, Op::GatherRows(self.id, indices.into()), req))
    }

    /// Mean over each run of `fold` consecutive rows.
    pub fn group_mean_rows(&self, fold: usize) -> Result<Var<'t, S>> {
        let out = self.tape.value_ref(self.id).group_mean_rows(fold)?;
        let req = self.tape.requires(&[self.id]);
        Ok(self.tape.push(out, Op::GroupMeanRows(self.id, fold), req))
    }

    /// Same value, cut from the gradient graph.
    pub fn detach(&self) -> Var<'t, S> {
        self.tape.constant(self.value())
    }
}
