//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only tape. Every builder method evaluates its
//! operation eagerly and records the inputs it needs for the backward pass,
//! so node ids are already a topological order. [`Graph::backward`] walks the
//! tape once in reverse and never touches forward values, which makes it
//! safe to call repeatedly on the same graph.
//!
//! ```
//! use pvn_core::graph::Graph;
//! use pvn_core::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = g.square(x).unwrap();
//! let loss = g.sum(sq).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0, 6.0]);
//! ```

use crate::error::{shape_err, Error, Result};
use crate::tensor::{matmul_into, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Slice { src: NodeId, offset: usize },
    Reshape { src: NodeId },
    Transpose { src: NodeId },
    MatMul { a: NodeId, b: NodeId },
    AddBias { a: NodeId, bias: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { src: NodeId, factor: f64 },
    Relu { src: NodeId },
    Tanh { src: NodeId },
    SoftmaxRows { src: NodeId, temperature: f64 },
    ConcatRows { parts: Vec<NodeId> },
    Sum { src: NodeId },
    Mean { src: NodeId },
    Square { src: NodeId },
    KlRows { pred: NodeId, target: Tensor, floor: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `id`; zeros if the root does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

fn check_finite(name: &str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("output of {name}")))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op) -> Result<NodeId> {
        check_finite(name, &value)?;
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Adds an input tensor. Gradients are available for every leaf.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { value, op: Op::Leaf });
        NodeId(self.nodes.len() - 1)
    }

    /// A contiguous window of `src`'s flat data, reshaped to `shape`.
    pub fn slice(&mut self, src: NodeId, offset: usize, shape: &[usize]) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        let data = self.value(src).data();
        if offset + n > data.len() {
            return Err(shape_err(format!(
                "slice [{offset}, {}) out of range for length {}",
                offset + n,
                data.len()
            )));
        }
        let value = Tensor::from_parts_unchecked(shape.to_vec(), data[offset..offset + n].to_vec());
        self.push("slice", value, Op::Slice { src, offset })
    }

    pub fn reshape(&mut self, src: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(src).reshape(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape { src })
    }

    pub fn transpose(&mut self, src: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(src).as_matrix_dims()?;
        let d = self.value(src).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.push("transpose", Tensor::from_parts_unchecked(vec![c, r], out), Op::Transpose { src })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, k) = self.value(a).as_matrix_dims()?;
        let (k2, m) = self.value(b).as_matrix_dims()?;
        if k != k2 {
            return Err(shape_err(format!(
                "matmul of {:?} by {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        self.push("matmul", Tensor::from_parts_unchecked(vec![n, m], out), Op::MatMul { a, b })
    }

    /// Adds a length-`c` bias to every row of an `r x c` matrix.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(a).as_matrix_dims()?;
        if self.value(bias).len() != c {
            return Err(shape_err(format!(
                "bias of length {} for {c} columns",
                self.value(bias).len()
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        self.push("add_bias", Tensor::from_parts_unchecked(vec![r, c], out), Op::AddBias { a, bias })
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(format!(
                "{what} of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts_unchecked(va.shape().to_vec(), data)
    }

    fn map(&self, src: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(src);
        Tensor::from_parts_unchecked(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push("add", v, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push("sub", v, Op::Sub { a, b })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push("mul", v, Op::Mul { a, b })
    }

    pub fn scale(&mut self, src: NodeId, factor: f64) -> Result<NodeId> {
        let v = self.map(src, |x| x * factor);
        self.push("scale", v, Op::Scale { src, factor })
    }

    pub fn relu(&mut self, src: NodeId) -> Result<NodeId> {
        let v = self.map(src, |x| x.max(0.0));
        self.push("relu", v, Op::Relu { src })
    }

    pub fn tanh(&mut self, src: NodeId) -> Result<NodeId> {
        let v = self.map(src, f64::tanh);
        self.push("tanh", v, Op::Tanh { src })
    }

    /// Row-wise `softmax(x / temperature)`.
    pub fn softmax_rows(&mut self, src: NodeId, temperature: f64) -> Result<NodeId> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!("softmax temperature {temperature}")));
        }
        let (r, c) = self.value(src).as_matrix_dims()?;
        let mut out = self.value(src).data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row, temperature);
        }
        let shape = self.value(src).shape().to_vec();
        debug_assert_eq!(r * c, out.len());
        self.push("softmax", Tensor::from_parts_unchecked(shape, out), Op::SoftmaxRows { src, temperature })
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero parts".into()))?;
        let (_, c) = self.value(*first).as_matrix_dims()?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, pc) = self.value(p).as_matrix_dims()?;
            if pc != c {
                return Err(shape_err(format!("concat of {c} and {pc} columns")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        self.push("concat", Tensor::from_parts_unchecked(vec![rows, c], data), Op::ConcatRows { parts: parts.to_vec() })
    }

    pub fn sum(&mut self, src: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(src).sum());
        self.push("sum", v, Op::Sum { src })
    }

    pub fn mean(&mut self, src: NodeId) -> Result<NodeId> {
        let t = self.value(src);
        if t.is_empty() {
            return Err(Error::InvalidArgument("mean of empty tensor".into()));
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", v, Op::Mean { src })
    }

    pub fn square(&mut self, src: NodeId) -> Result<NodeId> {
        let v = self.map(src, |x| x * x);
        self.push("square", v, Op::Square { src })
    }

    /// Mean over rows of `KL(target_row || pred_row)`. Predictions are
    /// floored at `floor` inside the logarithm; `0 * log 0` counts as zero.
    pub fn kl_rows(&mut self, pred: NodeId, target: Tensor, floor: f64) -> Result<NodeId> {
        if self.value(pred).shape() != target.shape() {
            return Err(shape_err(format!(
                "kl of prediction {:?} against target {:?}",
                self.value(pred).shape(),
                target.shape()
            )));
        }
        let (r, _) = target.as_matrix_dims()?;
        let total: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| kl_term(t, p, floor))
            .sum();
        let v = Tensor::scalar(total / r as f64);
        self.push("kl", v, Op::KlRows { pred, target, floor })
    }

    /// Gradients of the scalar node `root` with respect to every node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(root_value.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let shaped = |id: NodeId, data: Vec<f64>| {
            Tensor::from_parts_unchecked(self.value(id).shape().to_vec(), data)
        };
        match op {
            Op::Leaf => {}
            Op::Slice { src, offset } => {
                let mut full = vec![0.0; self.value(*src).len()];
                full[*offset..*offset + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *src, shaped(*src, full));
            }
            Op::Reshape { src } => {
                self.accumulate(grads, *src, shaped(*src, g.data().to_vec()));
            }
            Op::Transpose { src } => {
                let (r, c) = self.value(*src).as_matrix_dims().expect("checked at build");
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        data[i * c + j] = g.data()[j * r + i];
                    }
                }
                self.accumulate(grads, *src, shaped(*src, data));
            }
            Op::MatMul { a, b } => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (n, k) = va.as_matrix_dims().expect("checked at build");
                let (_, m) = vb.as_matrix_dims().expect("checked at build");
                // dA = G B^T, dB = A^T G
                let mut da = vec![0.0; n * k];
                let mut db = vec![0.0; k * m];
                let (ad, bd, gd) = (va.data(), vb.data(), g.data());
                for r in 0..n {
                    let grow = &gd[r * m..(r + 1) * m];
                    for kk in 0..k {
                        let brow = &bd[kk * m..(kk + 1) * m];
                        da[r * k + kk] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        let av = ad[r * k + kk];
                        if av != 0.0 {
                            for (d, &gv) in db[kk * m..(kk + 1) * m].iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, shaped(*a, da));
                self.accumulate(grads, *b, shaped(*b, db));
            }
            Op::AddBias { a, bias } => {
                let c = self.value(*bias).len();
                let mut db = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                self.accumulate(grads, *a, shaped(*a, g.data().to_vec()));
                self.accumulate(grads, *bias, shaped(*bias, db));
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, shaped(*a, g.data().to_vec()));
                self.accumulate(grads, *b, shaped(*b, g.data().to_vec()));
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, shaped(*a, g.data().to_vec()));
                self.accumulate(grads, *b, shaped(*b, g.data().iter().map(|v| -v).collect()));
            }
            Op::Mul { a, b } => {
                let da = g.data().iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                let db = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                self.accumulate(grads, *a, shaped(*a, da));
                self.accumulate(grads, *b, shaped(*b, db));
            }
            Op::Scale { src, factor } => {
                self.accumulate(grads, *src, shaped(*src, g.data().iter().map(|v| v * factor).collect()));
            }
            Op::Relu { src } => {
                let d = g
                    .data()
                    .iter()
                    .zip(self.value(*src).data())
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *src, shaped(*src, d));
            }
            Op::Tanh { src } => {
                let d = g.data().iter().zip(out.data()).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                self.accumulate(grads, *src, shaped(*src, d));
            }
            Op::SoftmaxRows { src, temperature } => {
                let (_, c) = out.as_matrix_dims().expect("checked at build");
                let mut d = vec![0.0; out.len()];
                for ((drow, yrow), grow) in d.chunks_mut(c).zip(out.data().chunks(c)).zip(g.data().chunks(c)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, gv)| y * gv).sum();
                    for ((dv, y), gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dv = y * (gv - dot) / temperature;
                    }
                }
                self.accumulate(grads, *src, shaped(*src, d));
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, shaped(p, g.data()[offset..offset + n].to_vec()));
                    offset += n;
                }
            }
            Op::Sum { src } => {
                let n = self.value(*src).len();
                self.accumulate(grads, *src, shaped(*src, vec![g.data()[0]; n]));
            }
            Op::Mean { src } => {
                let n = self.value(*src).len();
                self.accumulate(grads, *src, shaped(*src, vec![g.data()[0] / n as f64; n]));
            }
            Op::Square { src } => {
                let d = g.data().iter().zip(self.value(*src).data()).map(|(gv, x)| 2.0 * x * gv).collect();
                self.accumulate(grads, *src, shaped(*src, d));
            }
            Op::KlRows { pred, target, floor } => {
                let (r, _) = target.as_matrix_dims().expect("checked at build");
                let scale = g.data()[0] / r as f64;
                let d = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| if t > 0.0 && p > *floor { -scale * t / p } else { 0.0 })
                    .collect();
                self.accumulate(grads, *pred, shaped(*pred, d));
            }
        }
    }
}

/// One `t * ln(t / max(p, floor))` term of a KL divergence.
pub(crate) fn kl_term(t: f64, p: f64, floor: f64) -> f64 {
    if t > 0.0 {
        t * (t.ln() - p.max(floor).ln())
    } else {
        0.0
    }
}

/// In-place `softmax(x / temperature)` of one row, max-shifted for stability.
pub(crate) fn softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) / temperature).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let mut g = Graph::new();
        let p = g.leaf(t(&[5], &[0.3, -1.0, 2.0, 4.0, 0.0]));
        let s = g.sum(p).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(p).data(), &[1.0; 5]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let p = g.leaf(t(&[2], &[1.0, 2.0]));
        let r = g.relu(p).unwrap();
        assert!(matches!(g.backward(r), Err(Error::NonScalarRoot(s)) if s == vec![2]));
    }

    #[test]
    fn backward_is_repeatable() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2, 2], &[1.0, -2.0, 0.5, 3.0]));
        let b = g.leaf(t(&[2, 1], &[0.7, -0.1]));
        let ab = g.matmul(a, b).unwrap();
        let sm = g.softmax_rows(ab, 1.0).unwrap();
        let sq = g.square(sm).unwrap();
        let s = g.sum(sq).unwrap();
        let before = g.value(ab).clone();
        let g1 = g.backward(s).unwrap();
        let g2 = g.backward(s).unwrap();
        assert_eq!(g1.wrt(a), g2.wrt(a));
        assert_eq!(g1.wrt(b), g2.wrt(b));
        assert_eq!(&before, g.value(ab));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2], &[1.0, 2.0]));
        let unused = g.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let s = g.sum(a).unwrap();
        assert_eq!(g.backward(s).unwrap().wrt(unused).data(), &[0.0; 3]);
    }

    #[test]
    fn shape_errors_are_descriptive() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2, 3], &[0.0; 6]));
        let b = g.leaf(t(&[2, 3], &[0.0; 6]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_overflow_is_stable() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[1, 3], &[1000.0, 1000.0, -1000.0]));
        let s = g.softmax_rows(a, 1.0).unwrap();
        let v = g.value(s).data();
        assert!((v[0] - 0.5).abs() < 1e-12 && v[2] == 0.0);
    }

    #[test]
    fn non_finite_intermediate_errors() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[1], &[1e300]));
        assert!(matches!(g.scale(a, 1e300), Err(Error::NonFinite(_))));
    }
}
