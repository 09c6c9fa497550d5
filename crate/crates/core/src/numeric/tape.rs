//! Recording tape for reverse-mode differentiation.
//!
//! Every forward operation appends a node holding its output value and a
//! backward rule. [`Tape::backward`] walks the nodes in exact reverse order,
//! accumulating gradients additively where a value fans out, and returns the
//! gradient of every parameter registered on the tape.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use super::tensor::{dot, gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::{NumericError, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Hand-written vector-Jacobian product of one recorded operation.
///
/// `needs[i]` tells whether input `i` wants a gradient; the returned vector
/// has one entry per input and may leave unneeded entries as `None`.
pub trait BackwardRule: Send {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>>;
}

enum Op {
    Constant,
    Param(ParamId),
    Apply {
        inputs: Vec<Var>,
        rule: Box<dyn BackwardRule>,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients of the parameters registered on a tape.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// `self += factor * other`, adding entries missing from `self`.
    pub fn accumulate(&mut self, other: &Gradients, factor: f64) {
        for (id, g) in &other.grads {
            match self.grads.get_mut(id) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += factor * b;
                    }
                }
                None => {
                    let mut g = g.clone();
                    g.scale_assign(factor);
                    self.grads.insert(*id, g);
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            g.scale_assign(factor);
        }
    }

    pub fn clear(&mut self) {
        self.grads.clear();
    }
}

/// Records a computation graph for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    registry: BTreeMap<ParamId, Vec<usize>>,
    consumed: bool,
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

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Arc::new(t), Op::Constant, false)
    }

    /// Records parameter `id` of `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.shared(id), Op::Param(id), true);
        self.registry.entry(id).or_default().push(v.0);
        v
    }

    fn push(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an operation whose output was computed by the caller.
    pub fn apply(&mut self, inputs: &[Var], output: Tensor, rule: Box<dyn BackwardRule>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(
            Arc::new(output),
            Op::Apply {
                inputs: inputs.to_vec(),
                rule,
            },
            requires_grad,
        )
    }

    /// Runs the reverse sweep from a scalar `loss`.
    ///
    /// Can be called once per recording; a second call reports a stale tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NumericError> {
        if self.consumed {
            return Err(NumericError::StaleTape);
        }
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(NumericError::NonScalarRoot {
                shape: root.shape().to_vec(),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(root.shape(), 1.0));

        let mut out = Gradients::default();
        for (&id, nodes) in &self.registry {
            out.grads.insert(id, Tensor::zeros(self.nodes[nodes[0]].value.shape()));
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    if let Some(acc) = out.grads.get_mut(id) {
                        acc.add_assign(&g);
                    }
                }
                Op::Apply { inputs, rule } => {
                    if !node.requires_grad {
                        continue;
                    }
                    let values: Vec<&Tensor> = inputs.iter().map(|v| self.nodes[v.0].value.as_ref()).collect();
                    let needs: Vec<bool> = inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
                    let input_grads = rule.backward(&values, &node.value, &g, &needs);
                    for ((v, gi), need) in inputs.iter().zip(input_grads).zip(&needs) {
                        if let (Some(gi), true) = (gi, need) {
                            match &mut grads[v.0] {
                                Some(acc) => acc.add_assign(&gi),
                                slot @ None => *slot = Some(gi),
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    // ------------------------------------------------------------------
    // Built-in operations

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(NumericError::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.apply(&[a, b], out, Box::new(MatMulRule { m, k, n })))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary(a, b, "add", |x, y| x + y, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary(a, b, "sub", |x, y| x - y, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary(a, b, "mul", |x, y| x * y, BinaryKind::Mul)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        kind: BinaryKind,
    ) -> Result<Var, NumericError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NumericError::ShapeMismatch {
                op,
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.apply(&[a, b], out, Box::new(BinaryRule(kind))))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(factor);
        self.apply(&[a], out, Box::new(ScaleRule(factor)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = v.max(0.0);
        }
        self.apply(&[a], out, Box::new(ReluRule))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.apply(&[a], out, Box::new(SumRule))
    }

    /// Sum of several scalar values.
    pub fn sum_scalars(&mut self, xs: &[Var]) -> Result<Var, NumericError> {
        let mut total = 0.0;
        for &x in xs {
            let v = self.value(x);
            if v.len() != 1 {
                return Err(NumericError::ShapeMismatch {
                    op: "sum_scalars",
                    left: v.shape().to_vec(),
                    right: vec![],
                });
            }
            total += v.item();
        }
        Ok(self.apply(xs, Tensor::scalar(total), Box::new(SumScalarsRule)))
    }

    /// Row-wise softmax. Masked (`false`) entries come out exactly zero.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var, NumericError> {
        let xv = self.value(x);
        if let Some(m) = mask {
            if m.len() != xv.len() {
                return Err(NumericError::ShapeMismatch {
                    op: "softmax_rows",
                    left: xv.shape().to_vec(),
                    right: vec![m.len()],
                });
            }
        }
        let out = softmax_rows_value(xv, mask)?;
        Ok(self.apply(&[x], out, Box::new(SoftmaxRule)))
    }

    /// Mean over the rows of an `L×d` matrix, giving a length-`d` vector.
    pub fn mean_pool(&mut self, x: Var) -> Result<Var, NumericError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(NumericError::EmptyInput { op: "mean_pool" });
        }
        let (l, d) = (xv.rows(), xv.cols());
        let out = segment_mean_value(xv, &[0..l])?.reshape(vec![d])?;
        Ok(self.apply(&[x], out, Box::new(SegmentMeanRule { segments: vec![0..l] })))
    }

    /// Mean of each contiguous row range, stacked as an `N×d` matrix.
    pub fn segment_mean(&mut self, x: Var, segments: &[Range<usize>]) -> Result<Var, NumericError> {
        let out = segment_mean_value(self.value(x), segments)?;
        Ok(self.apply(
            &[x],
            out,
            Box::new(SegmentMeanRule {
                segments: segments.to_vec(),
            }),
        ))
    }

    /// Selects rows by index (embedding lookup).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, NumericError> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if idx.is_empty() {
            return Err(NumericError::EmptyInput { op: "gather_rows" });
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(NumericError::IndexOutOfRange { index: i, len: r });
            }
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::new(vec![idx.len(), c], data)?;
        Ok(self.apply(
            &[x],
            out,
            Box::new(GatherRule {
                idx: idx.to_vec(),
                rows: r,
            }),
        ))
    }

    /// Root-mean-square normalisation of each row with a learned gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var, NumericError> {
        let (xv, gv) = (self.value(x), self.value(gain));
        let d = xv.cols();
        if gv.len() != d {
            return Err(NumericError::ShapeMismatch {
                op: "rms_norm",
                left: xv.shape().to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        let mut inv = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let ir = 1.0 / (ms + eps).sqrt();
            inv.push(ir);
            for (o, (&xi, &gi)) in out.row_mut(r).iter_mut().zip(row.iter().zip(gv.data())) {
                *o = xi * ir * gi;
            }
        }
        Ok(self.apply(&[x, gain], out, Box::new(RmsNormRule { inv })))
    }

    /// Cosine similarity of two vectors, clamped to `[-1, 1]`.
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var, NumericError> {
        let (uv, vv) = (self.value(u), self.value(v));
        if uv.len() != vv.len() {
            return Err(NumericError::ShapeMismatch {
                op: "cosine",
                left: uv.shape().to_vec(),
                right: vv.shape().to_vec(),
            });
        }
        let nu = norm(uv.data());
        let nv = norm(vv.data());
        if nu == 0.0 {
            return Err(NumericError::ZeroNorm { index: 0 });
        }
        if nv == 0.0 {
            return Err(NumericError::ZeroNorm { index: 1 });
        }
        let c = if uv.data() == vv.data() {
            1.0
        } else {
            (dot(uv.data(), vv.data()) / (nu * nv)).clamp(-1.0, 1.0)
        };
        Ok(self.apply(&[u, v], Tensor::scalar(c), Box::new(CosineRule { nu, nv })))
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Stable row-wise softmax used by both the tape op and fused kernels.
pub fn softmax_rows_value(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor, NumericError> {
    let (r, c) = (x.rows(), x.cols());
    let mut out = x.clone();
    for i in 0..r {
        let keep = |j: usize| mask.is_none_or(|m| m[i * c + j]);
        let row = x.row(i);
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if keep(j) && v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(NumericError::FullyMaskedRow { row: i });
        }
        let o = out.row_mut(i);
        let mut z = 0.0;
        for j in 0..c {
            if keep(j) {
                o[j] = (row[j] - max).exp();
                z += o[j];
            } else {
                o[j] = 0.0;
            }
        }
        for v in o.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

fn segment_mean_value(x: &Tensor, segments: &[Range<usize>]) -> Result<Tensor, NumericError> {
    let d = x.cols();
    if segments.is_empty() {
        return Err(NumericError::EmptyInput { op: "segment_mean" });
    }
    let mut out = vec![0.0; segments.len() * d];
    for (s, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return Err(NumericError::EmptyInput { op: "segment_mean" });
        }
        if seg.end > x.rows() {
            return Err(NumericError::IndexOutOfRange {
                index: seg.end - 1,
                len: x.rows(),
            });
        }
        let o = &mut out[s * d..(s + 1) * d];
        for r in seg.clone() {
            for (a, b) in o.iter_mut().zip(x.row(r)) {
                *a += b;
            }
        }
        let inv = 1.0 / seg.len() as f64;
        for a in o.iter_mut() {
            *a *= inv;
        }
    }
    Tensor::new(vec![segments.len(), d], out)
}

// ----------------------------------------------------------------------
// Backward rules

struct MatMulRule {
    m: usize,
    k: usize,
    n: usize,
}

impl BackwardRule for MatMulRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k, n) = (self.m, self.k, self.n);
        let da = needs[0].then(|| {
            let mut da = vec![0.0; m * k];
            gemm_nt_acc(g.data(), b.data(), &mut da, m, n, k);
            Tensor::new(vec![m, k], da).expect("matmul grad shape")
        });
        let db = needs[1].then(|| {
            let mut db = vec![0.0; k * n];
            gemm_tn_acc(a.data(), g.data(), &mut db, m, k, n);
            Tensor::new(vec![k, n], db).expect("matmul grad shape")
        });
        vec![da, db]
    }
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

struct BinaryRule(BinaryKind);

impl BackwardRule for BinaryRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        match self.0 {
            BinaryKind::Add => vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())],
            BinaryKind::Sub => vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| {
                    let mut t = g.clone();
                    t.scale_assign(-1.0);
                    t
                }),
            ],
            BinaryKind::Mul => {
                let times = |other: &Tensor| {
                    let mut t = g.clone();
                    for (a, b) in t.data_mut().iter_mut().zip(other.data()) {
                        *a *= b;
                    }
                    t
                };
                vec![needs[0].then(|| times(inputs[1])), needs[1].then(|| times(inputs[0]))]
            }
        }
    }
}

struct ScaleRule(f64);

impl BackwardRule for ScaleRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut t = g.clone();
        t.scale_assign(self.0);
        vec![Some(t)]
    }
}

struct ReluRule;

impl BackwardRule for ReluRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut t = g.clone();
        for (d, &x) in t.data_mut().iter_mut().zip(inputs[0].data()) {
            if x <= 0.0 {
                *d = 0.0;
            }
        }
        vec![Some(t)]
    }
}

struct SumRule;

impl BackwardRule for SumRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(inputs[0].shape(), g.item()))]
    }
}

struct SumScalarsRule;

impl BackwardRule for SumScalarsRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        inputs
            .iter()
            .zip(needs)
            .map(|(x, &n)| n.then(|| Tensor::full(x.shape(), g.item())))
            .collect()
    }
}

struct SoftmaxRule;

impl BackwardRule for SoftmaxRule {
    fn backward(&self, _: &[&Tensor], y: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut dx = y.clone();
        for i in 0..y.rows() {
            let (yr, gr) = (y.row(i), g.row(i));
            let s = dot(yr, gr);
            for (o, (&yj, &gj)) in dx.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                *o = yj * (gj - s);
            }
        }
        vec![Some(dx)]
    }
}

struct SegmentMeanRule {
    segments: Vec<Range<usize>>,
}

impl BackwardRule for SegmentMeanRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let d = x.cols();
        let mut dx = Tensor::zeros(x.shape());
        for (s, seg) in self.segments.iter().enumerate() {
            let inv = 1.0 / seg.len() as f64;
            let gs = &g.data()[s * d..(s + 1) * d];
            for r in seg.clone() {
                for (o, &gv) in dx.row_mut(r).iter_mut().zip(gs) {
                    *o += gv * inv;
                }
            }
        }
        vec![Some(dx)]
    }
}

struct GatherRule {
    idx: Vec<usize>,
    rows: usize,
}

impl BackwardRule for GatherRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        debug_assert_eq!(x.rows(), self.rows);
        let mut dx = Tensor::zeros(x.shape());
        for (k, &i) in self.idx.iter().enumerate() {
            for (o, &gv) in dx.row_mut(i).iter_mut().zip(g.row(k)) {
                *o += gv;
            }
        }
        vec![Some(dx)]
    }
}

struct RmsNormRule {
    inv: Vec<f64>,
}

impl BackwardRule for RmsNormRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, gain) = (inputs[0], inputs[1]);
        let d = x.cols();
        let mut dx = needs[0].then(|| Tensor::zeros(x.shape()));
        let mut dgain = needs[1].then(|| Tensor::zeros(gain.shape()));
        for r in 0..x.rows() {
            let (xr, gr, ir) = (x.row(r), g.row(r), self.inv[r]);
            if let Some(dg) = dgain.as_mut() {
                for (o, (&xv, &gv)) in dg.data_mut().iter_mut().zip(xr.iter().zip(gr)) {
                    *o += gv * xv * ir;
                }
            }
            if let Some(dx) = dx.as_mut() {
                let s: f64 = (0..d).map(|j| gr[j] * gain.data()[j] * xr[j]).sum();
                let c = ir * ir * ir * s / d as f64;
                for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                    *o = gr[j] * gain.data()[j] * ir - xr[j] * c;
                }
            }
        }
        vec![dx, dgain]
    }
}

struct CosineRule {
    nu: f64,
    nv: f64,
}

impl BackwardRule for CosineRule {
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (u, v) = (inputs[0], inputs[1]);
        let (c, gv) = (out.item(), g.item());
        let grad = |a: &Tensor, na: f64, b: &Tensor, nb: f64| {
            let mut t = a.clone();
            for (o, (&ai, &bi)) in t.data_mut().iter_mut().zip(a.data().iter().zip(b.data())) {
                *o = gv * (bi / (na * nb) - c * ai / (na * na));
            }
            t
        };
        vec![
            needs[0].then(|| grad(u, self.nu, v, self.nv)),
            needs[1].then(|| grad(v, self.nv, u, self.nu)),
        ]
    }
}
