//! Reverse-mode differentiation over a recorded tape.
//!
//! Every forward pass records its operations on a fresh [`Tape`]. Nodes are
//! appended in evaluation order, so [`Tape::backward`] walks them in exact
//! reverse. Parameters live in a [`ParamStore`] and enter the tape through
//! [`Tape::param`], which creates at most one leaf per parameter so that each
//! parameter collects a single accumulated gradient.

use std::collections::HashMap;
use std::fmt;

use super::tensor::{self, gemm_nt, gemm_tn, softmax_in_place, Tensor};
use crate::error::{dim_err, input_err, numeric_err, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Non-trainable entries are buffers (e.g. standardization statistics).
    pub trainable: bool,
}

/// Named parameter registry. Insertion order is the canonical order used by
/// checkpoints and optimizers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.iter().filter(|(_, e)| e.trainable).map(|(id, _)| id)
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Replaces a value, keeping the shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.entries[id.0];
        if slot.value.shape() != value.shape() {
            return Err(dim_err!(
                "parameter {} has shape {:?}, got {:?}",
                slot.name,
                slot.value.shape(),
                value.shape()
            ));
        }
        slot.value = value;
        Ok(())
    }
}

/// One gradient per trainable parameter, indexed like the store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .iter()
                .map(|(_, e)| e.trainable.then(|| Tensor::zeros(e.value.shape())))
                .collect(),
        }
    }

    /// `None` for buffers.
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Operation implemented outside the tape (fused kernels such as attention).
///
/// `backward` receives the input values, the forward output and the upstream
/// gradient, and must add each input's gradient into `grad_inputs` (same order
/// and lengths as `inputs`).
pub trait TapeFunction: fmt::Debug {
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &[f64],
        grad_inputs: &mut [Vec<f64>],
    );
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    SoftmaxRows(Var),
    MeanRows(Var),
    SumAll(Var),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    Im2Col3x3 { x: Var, h: usize, w: usize, c: usize },
    AvgPool2 { x: Var, h: usize, w: usize, c: usize },
    CrossEntropy { logits: Var, labels: Vec<usize> },
    Custom { inputs: Vec<Var>, func: Box<dyn TapeFunction> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRowBias(a, b) => vec![*a, *b],
            Op::Relu(a)
            | Op::Scale(a, _)
            | Op::MulConst(a, _)
            | Op::SoftmaxRows(a)
            | Op::MeanRows(a)
            | Op::SumAll(a)
            | Op::Reshape(a)
            | Op::GatherRows(a, _) => vec![*a],
            Op::Im2Col3x3 { x, .. } | Op::AvgPool2 { x, .. } => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::ConcatRows(parts) => parts.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// True when some parameter lies upstream of this node.
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = matches!(op, Op::Param(_)) || op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Parameter leaf. Repeated calls for the same id return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id));
        self.param_leaves.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(dim_err!("add: {:?} vs {:?}", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a bias vector (length = cols) to every row.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        let c = x.cols();
        if b.numel() != c {
            return Err(dim_err!("bias of length {} for {c} columns", b.numel()));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRowBias(a, bias)))
    }

    /// `a · w + b`, the usual affine layer.
    pub fn linear(&mut self, a: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(a, w)?;
        self.add_row_bias(y, b)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Relu(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| v * s).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Scale(a, s))
    }

    /// Element-wise product with a constant of the same length.
    pub fn mul_const(&mut self, a: Var, factor: Vec<f64>) -> Result<Var> {
        let x = self.value(a);
        if factor.len() != x.numel() {
            return Err(dim_err!(
                "constant of length {} for tensor with {} elements",
                factor.len(),
                x.numel()
            ));
        }
        let data = x.data().iter().zip(&factor).map(|(v, f)| v * f).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulConst(a, factor)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = tensor::softmax_rows(self.value(a))?;
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Mean over rows: `[n×c] → [1×c]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        let mut out = vec![0.0; c];
        for row in x.data().chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / r as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let out = Tensor::new(vec![1, c], out).expect("positive extent");
        self.push(out, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::filled(&[1], s), Op::SumAll(a))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| input_err!("concat of zero tensors"))?;
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(dim_err!("concat_rows: {} vs {c} columns", t.cols()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, c], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Selects rows by index (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.as_matrix()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(input_err!("row index {bad} out of range for {r} rows"));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::new(vec![idx.len(), c], data)?;
        Ok(self.push(out, Op::GatherRows(a, idx)))
    }

    /// Unfolds 3×3 zero-padded neighbourhoods of an `[h, w, c]` image into an
    /// `[h·w, 9·c]` matrix, so a same-size 3×3 convolution becomes a matmul.
    pub fn im2col3x3(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (h, w, c) = match *x.shape() {
            [h, w, c] => (h, w, c),
            ref s => return Err(dim_err!("im2col expects [h, w, c], got {s:?}")),
        };
        let mut cols = vec![0.0; h * w * 9 * c];
        let src = x.data();
        for y in 0..h {
            for xx in 0..w {
                let dst = &mut cols[(y * w + xx) * 9 * c..(y * w + xx + 1) * 9 * c];
                for (tap, (dy, dx)) in TAPS.iter().enumerate() {
                    let (sy, sx) = (y as isize + dy, xx as isize + dx);
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        continue;
                    }
                    let s = (sy as usize * w + sx as usize) * c;
                    dst[tap * c..(tap + 1) * c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
        let out = Tensor::new(vec![h * w, 9 * c], cols)?;
        Ok(self.push(out, Op::Im2Col3x3 { x: a, h, w, c }))
    }

    /// 2×2 average pooling with stride 2 on an `[h, w, c]` image.
    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (h, w, c) = match *x.shape() {
            [h, w, c] if h % 2 == 0 && w % 2 == 0 => (h, w, c),
            ref s => return Err(dim_err!("avg_pool2 expects even [h, w, c], got {s:?}")),
        };
        let (oh, ow) = (h / 2, w / 2);
        let src = x.data();
        let mut out = vec![0.0; oh * ow * c];
        for y in 0..oh {
            for xx in 0..ow {
                let o = &mut out[(y * ow + xx) * c..(y * ow + xx + 1) * c];
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let s = ((2 * y + dy) * w + 2 * xx + dx) * c;
                    for (ov, sv) in o.iter_mut().zip(&src[s..s + c]) {
                        *ov += 0.25 * sv;
                    }
                }
            }
        }
        let out = Tensor::new(vec![oh, ow, c], out)?;
        Ok(self.push(out, Op::AvgPool2 { x: a, h, w, c }))
    }

    /// Mean cross-entropy of row-wise softmax against class ids.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let loss = cross_entropy_value(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::filled(&[1], loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Records an externally computed output together with its backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, func: Box<dyn TapeFunction>) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                func,
            },
        )
    }

    /// Backpropagates from a scalar node. Returns one gradient per trainable
    /// parameter of `store`; parameters not reached get zeros.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(dim_err!("backward needs a scalar, got {:?}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::zeros_like(store);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let node = &self.nodes[idx];
            let needs = |v: &Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    if let Some(Some(slot)) = out.grads.get_mut(id.0) {
                        for (s, gv) in slot.data_mut().iter_mut().zip(&g) {
                            *s += gv;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = (av.rows(), av.cols());
                    let p = bv.cols();
                    if needs(a) {
                        gemm_nt(&g, bv.data(), acc(&mut grads, *a, m * k), m, p, k);
                    }
                    if needs(b) {
                        gemm_tn(av.data(), &g, acc(&mut grads, *b, k * p), m, k, p);
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if needs(v) {
                            add_into(acc(&mut grads, *v, g.len()), &g);
                        }
                    }
                }
                Op::AddRowBias(a, b) => {
                    if needs(a) {
                        add_into(acc(&mut grads, *a, g.len()), &g);
                    }
                    let c = self.value(*b).numel();
                    let gb = acc(&mut grads, *b, c);
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((s, gv), xv) in ga.iter_mut().zip(&g).zip(x) {
                        if *xv > 0.0 {
                            *s += gv;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for (t, gv) in ga.iter_mut().zip(&g) {
                        *t += s * gv;
                    }
                }
                Op::MulConst(a, f) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for ((t, gv), fv) in ga.iter_mut().zip(&g).zip(f) {
                        *t += gv * fv;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.data();
                    let c = node.value.cols();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((yr, gr), tr) in y.chunks(c).zip(g.chunks(c)).zip(ga.chunks_mut(c)) {
                        let inner = tensor::dot(yr, gr);
                        for ((t, yv), gv) in tr.iter_mut().zip(yr).zip(gr) {
                            *t += yv * (gv - inner);
                        }
                    }
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let inv = 1.0 / x.rows() as f64;
                    let ga = acc(&mut grads, *a, x.numel());
                    for row in ga.chunks_mut(x.cols()) {
                        for (t, gv) in row.iter_mut().zip(&g) {
                            *t += gv * inv;
                        }
                    }
                }
                Op::SumAll(a) => {
                    let n = self.value(*a).numel();
                    acc(&mut grads, *a, n).iter_mut().for_each(|t| *t += g[0]);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        add_into(acc(&mut grads, p, n), &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Reshape(a) => add_into(acc(&mut grads, *a, g.len()), &g),
                Op::GatherRows(a, idx) => {
                    let x = self.value(*a);
                    let c = x.cols();
                    let ga = acc(&mut grads, *a, x.numel());
                    for (row, &i) in g.chunks(c).zip(idx) {
                        add_into(&mut ga[i * c..(i + 1) * c], row);
                    }
                }
                Op::Im2Col3x3 { x, .. } if !needs(x) => {}
                Op::Im2Col3x3 { x, h, w, c } => {
                    let (h, w, c) = (*h, *w, *c);
                    let gx = acc(&mut grads, *x, h * w * c);
                    for y in 0..h {
                        for xx in 0..w {
                            let src = &g[(y * w + xx) * 9 * c..(y * w + xx + 1) * 9 * c];
                            for (tap, (dy, dx)) in TAPS.iter().enumerate() {
                                let (sy, sx) = (y as isize + dy, xx as isize + dx);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let d = (sy as usize * w + sx as usize) * c;
                                add_into(&mut gx[d..d + c], &src[tap * c..(tap + 1) * c]);
                            }
                        }
                    }
                }
                Op::AvgPool2 { x, h, w, c } => {
                    let (h, w, c) = (*h, *w, *c);
                    let (oh, ow) = (h / 2, w / 2);
                    let gx = acc(&mut grads, *x, h * w * c);
                    for y in 0..oh {
                        for xx in 0..ow {
                            let src = &g[(y * ow + xx) * c..(y * ow + xx + 1) * c];
                            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                let d = ((2 * y + dy) * w + 2 * xx + dx) * c;
                                for (t, sv) in gx[d..d + c].iter_mut().zip(src) {
                                    *t += 0.25 * sv;
                                }
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, labels } => {
                    let x = self.value(*logits);
                    let c = x.cols();
                    let b = labels.len() as f64;
                    let gl = acc(&mut grads, *logits, x.numel());
                    for ((row, t), &label) in x.data().chunks(c).zip(gl.chunks_mut(c)).zip(labels) {
                        let mut p = row.to_vec();
                        softmax_in_place(&mut p);
                        p[label] -= 1.0;
                        for (tv, pv) in t.iter_mut().zip(&p) {
                            *tv += g[0] * pv / b;
                        }
                    }
                }
                Op::Custom { inputs, func } => {
                    let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                    let mut local: Vec<Vec<f64>> =
                        values.iter().map(|t| vec![0.0; t.numel()]).collect();
                    func.backward(&values, &node.value, &g, &mut local);
                    for (&v, lg) in inputs.iter().zip(&local).filter(|(v, _)| needs(v)) {
                        add_into(acc(&mut grads, v, lg.len()), lg);
                    }
                }
            }
        }
        for (id, g) in out.iter() {
            if !g.is_finite() {
                return Err(numeric_err!(
                    "gradient of {} is not finite",
                    store.entry(id).name
                ));
            }
        }
        Ok(out)
    }
}

const TAPS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Mean negative log-softmax of the true class. `logits` is `[b × classes]`.
pub fn cross_entropy_value(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, c) = logits.as_matrix()?;
    if labels.len() != b {
        return Err(dim_err!("{} labels for {b} logit rows", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(input_err!("label {bad} out of range for {c} classes"));
    }
    logits.ensure_finite("logits")?;
    let mut total = 0.0;
    for (row, &label) in logits.data().chunks(c).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / b as f64)
}
