//! Reverse-mode differentiation tape.
//!
//! A [`Graph`] records one forward pass as an append-only list of nodes.
//! Node ids are handed out in creation order and operations may only
//! reference earlier ids, so the id order *is* a topological order and the
//! backward pass is a single reverse walk. Gradient accumulation is additive:
//! a node consumed k times receives the sum of k contributions. Nodes created
//! with [`Graph::constant`] never receive gradients.

use super::kernels::{self, ConvDims};
use super::{four_dims, two_dims, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VarId(usize);

/// Node counts per operation kind; the objective cost test asserts on these.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpTally {
    pub matmul: usize,
    pub conv2d: usize,
    pub maxpool2d: usize,
    pub relu: usize,
    pub relu_gauss_mean: usize,
    pub softmax_cross_entropy: usize,
}

enum Op {
    Leaf,
    Add(VarId, VarId),
    AddBias { x: VarId, bias: VarId },
    Mul(VarId, VarId),
    Scale(VarId, f64),
    Relu(VarId),
    Sqrt(VarId),
    Reshape(VarId),
    Sum(VarId),
    Matmul(VarId, VarId),
    Conv2d {
        x: VarId,
        w: VarId,
        bias: Option<VarId>,
        dims: ConvDims,
    },
    MaxPool2d {
        x: VarId,
        argmax: Vec<u32>,
        n: usize,
        in_image: usize,
    },
    ReluGaussMean {
        mu: VarId,
        sigma: VarId,
        rows: usize,
        phi: Vec<f64>,
        pdf: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: VarId,
        labels: Vec<usize>,
        probs: Vec<f64>,
        rows: usize,
        classes: usize,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// One forward pass worth of recorded operations. Dropped (or reused by
/// dropping) after the backward pass; no higher-order derivatives.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> VarId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        VarId(self.nodes.len() - 1)
    }

    fn requires(&self, id: VarId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(value, true, Op::Leaf)
    }

    /// Non-differentiable leaf (an input, label encoding, variance image...).
    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of `id`, if backward reached it.
    pub fn grad(&self, id: VarId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn tally(&self) -> OpTally {
        let mut t = OpTally::default();
        for n in &self.nodes {
            match n.op {
                Op::Matmul(..) => t.matmul += 1,
                Op::Conv2d { .. } => t.conv2d += 1,
                Op::MaxPool2d { .. } => t.maxpool2d += 1,
                Op::Relu(_) => t.relu += 1,
                Op::ReluGaussMean { .. } => t.relu_gauss_mean += 1,
                Op::SoftmaxCrossEntropy { .. } => t.softmax_cross_entropy += 1,
                _ => {}
            }
        }
        t
    }

    // -- elementwise and structural ops --------------------------------------

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape {
                op: "add",
                details: format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += v;
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    /// x (N x d) plus a length-d bias broadcast over rows.
    pub fn add_bias(&mut self, x: VarId, bias: VarId) -> Result<VarId> {
        let [n, d] = *two_dims(self.value(x).shape(), "add_bias")?;
        if self.value(bias).shape() != [d] {
            return Err(Error::Shape {
                op: "add_bias",
                details: format!(
                    "bias {:?} does not match row width {d}",
                    self.value(bias).shape()
                ),
            });
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for i in 0..n {
            let row = &mut out.data_mut()[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] += b[j];
            }
        }
        let rg = self.requires(x) || self.requires(bias);
        Ok(self.push(out, rg, Op::AddBias { x, bias }))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape {
                op: "mul",
                details: format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(out, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: VarId, c: f64) -> VarId {
        let out = self.value(x).map(|v| c * v);
        let rg = self.requires(x);
        self.push(out, rg, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let mut out = Tensor::zeros(self.value(x).shape());
        kernels::relu_forward(self.value(x).data(), out.data_mut());
        let rg = self.requires(x);
        self.push(out, rg, Op::Relu(x))
    }

    /// Elementwise square root. Inputs must be >= 0 (variances); the
    /// derivative at exactly 0 is taken as 0 so zero-variance coordinates do
    /// not poison gradients with infinities.
    pub fn sqrt(&mut self, x: VarId) -> Result<VarId> {
        if self.value(x).data().iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("sqrt of a negative value".into()));
        }
        let out = self.value(x).map(f64::sqrt);
        let rg = self.requires(x);
        Ok(self.push(out, rg, Op::Sqrt(x)))
    }

    pub fn reshape(&mut self, x: VarId, shape: &[usize]) -> Result<VarId> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.requires(x);
        Ok(self.push(out, rg, Op::Reshape(x)))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: VarId) -> VarId {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.requires(x);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    // -- layer ops ------------------------------------------------------------

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let [m, ka] = *two_dims(self.value(a).shape(), "matmul")?;
        let [kb, n] = *two_dims(self.value(b).shape(), "matmul")?;
        if ka != kb {
            return Err(Error::Shape {
                op: "matmul",
                details: format!("inner dimensions disagree: [{m}, {ka}] x [{kb}, {n}]"),
            });
        }
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul_nn(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            m,
            ka,
            n,
        );
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(out, rg, Op::Matmul(a, b)))
    }

    pub fn conv2d(
        &mut self,
        x: VarId,
        w: VarId,
        bias: Option<VarId>,
        stride: usize,
        padding: usize,
    ) -> Result<VarId> {
        let xs = four_dims(self.value(x).shape(), "conv2d")?;
        let ws = four_dims(self.value(w).shape(), "conv2d")?;
        let dims = kernels::conv_dims(xs, ws, stride, padding)?;
        if let Some(b) = bias {
            if self.value(b).shape() != [dims.f] {
                return Err(Error::Shape {
                    op: "conv2d",
                    details: format!(
                        "bias {:?} does not match {} filters",
                        self.value(b).shape(),
                        dims.f
                    ),
                });
            }
        }
        let mut out = Tensor::zeros(&[dims.n, dims.f, dims.ho, dims.wo]);
        kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            &dims,
            out.data_mut(),
        );
        let rg = self.requires(x)
            || self.requires(w)
            || bias.map(|b| self.requires(b)).unwrap_or(false);
        Ok(self.push(out, rg, Op::Conv2d { x, w, bias, dims }))
    }

    pub fn maxpool2d(&mut self, x: VarId, k: usize, stride: usize) -> Result<VarId> {
        let xs = four_dims(self.value(x).shape(), "maxpool2d")?;
        let (ho, wo) = kernels::pool_dims(xs, k, stride)?;
        let [n, c, h, w] = *xs;
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let mut argmax = vec![0u32; n * c * ho * wo];
        kernels::maxpool2d_forward(self.value(x).data(), xs, k, stride, out.data_mut(), &mut argmax);
        let rg = self.requires(x);
        Ok(self.push(
            out,
            rg,
            Op::MaxPool2d {
                x,
                argmax,
                n,
                in_image: c * h * w,
            },
        ))
    }

    /// Gaussian-ReLU mean T(mu, sigma), elementwise. `sigma` must either
    /// match `mu`'s shape or match with a leading extent of 1, in which case
    /// the single sigma block is broadcast across mu's leading dimension.
    pub fn relu_gauss_mean(&mut self, mu: VarId, sigma: VarId) -> Result<VarId> {
        let ms = self.value(mu).shape().to_vec();
        let ss = self.value(sigma).shape().to_vec();
        let rows = if ms == ss {
            1
        } else if !ss.is_empty() && ss[0] == 1 && !ms.is_empty() && ms[1..] == ss[1..] {
            ms[0]
        } else {
            return Err(Error::Shape {
                op: "relu_gauss_mean",
                details: format!("mu {ms:?} vs sigma {ss:?}"),
            });
        };
        if self.value(sigma).data().iter().any(|&s| s < 0.0) {
            return Err(Error::Domain("relu_gauss_mean requires sigma >= 0".into()));
        }
        let numel = self.value(mu).numel();
        let mut out = Tensor::zeros(&ms);
        let mut phi = vec![0.0; numel];
        let mut pdf = vec![0.0; numel];
        kernels::relu_gauss_mean_forward(
            self.value(mu).data(),
            self.value(sigma).data(),
            rows.max(1),
            out.data_mut(),
            &mut phi,
            &mut pdf,
        );
        let rg = self.requires(mu) || self.requires(sigma);
        Ok(self.push(
            out,
            rg,
            Op::ReluGaussMean {
                mu,
                sigma,
                rows: rows.max(1),
                phi,
                pdf,
            },
        ))
    }

    pub fn softmax_cross_entropy(&mut self, logits: VarId, labels: &[usize]) -> Result<VarId> {
        let [n, d] = *two_dims(self.value(logits).shape(), "softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                details: format!("{n} rows vs {} labels", labels.len()),
            });
        }
        let (loss, probs) = kernels::softmax_ce_forward(self.value(logits).data(), labels, n, d)?;
        let rg = self.requires(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                rows: n,
                classes: d,
            },
        ))
    }

    // -- backward -------------------------------------------------------------

    /// Accumulates d(root)/d(node) into every reachable non-constant node.
    /// Each call propagates a fresh unit seed from the root, so calling twice
    /// doubles the stored gradients.
    pub fn backward(&mut self, root: VarId) -> Result<()> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar root, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        if !self.nodes[root.0].requires_grad {
            // Root does not depend on any differentiable leaf; nothing to do.
            return Ok(());
        }
        // Per-call gradients, flushed into the persistent buffers at the end.
        let mut grads: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if let Some(ga) = scratch(&mut grads, &self.nodes, *a) {
                        axpy(ga, &g, 1.0);
                    }
                    if let Some(gb) = scratch(&mut grads, &self.nodes, *b) {
                        axpy(gb, &g, 1.0);
                    }
                }
                Op::AddBias { x, bias } => {
                    if let Some(gx) = scratch(&mut grads, &self.nodes, *x) {
                        axpy(gx, &g, 1.0);
                    }
                    if let Some(gb) = scratch(&mut grads, &self.nodes, *bias) {
                        let d = gb.len();
                        for row in g.chunks_exact(d) {
                            for j in 0..d {
                                gb[j] += row[j];
                            }
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let bv = self.nodes[b.0].value.data();
                    if let Some(ga) = scratch(&mut grads, &self.nodes, *a) {
                        for k in 0..g.len() {
                            ga[k] += g[k] * bv[k];
                        }
                    }
                    let av = self.nodes[a.0].value.data();
                    if let Some(gb) = scratch(&mut grads, &self.nodes, *b) {
                        for k in 0..g.len() {
                            gb[k] += g[k] * av[k];
                        }
                    }
                }
                Op::Scale(x, c) => {
                    if let Some(gx) = scratch(&mut grads, &self.nodes, *x) {
                        axpy(gx, &g, *c);
                    }
                }
                Op::Relu(x) => {
                    let out_vals = node.value.data();
                    if let Some(gx) = scratch(&mut grads, &self.nodes, *x) {
                        kernels::relu_backward(out_vals, &g, gx);
                    }
                }
                Op::Sqrt(x) => {
                    let out_vals = node.value.data();
                    if let Some(gx) = scratch(&mut grads, &self.nodes, *x) {
                        for k in 0..g.len() {
                            if out_vals[k] > 0.0 {
                                gx[k] += g[k] * 0.5 / out_vals[k];
                            }
                        }
                    }
                }
                Op::Reshape(x) => {
                    if let Some(gx) = scratch(&mut grads, &self.nodes, *x) {
                        axpy(gx, &g, 1.0);
                    }
                }
                Op::Sum(x) => {
                    if let Some(gx) = scratch(&mut grads, &self.nodes, *x) {
                        let gv = g[0];
                        for v in gx.iter_mut() {
                            *v += gv;
                        }
                    }
                }
                Op::Matmul(a, b) => {
                    let [m, k] = *two_dims(self.nodes[a.0].value.shape(), "matmul").unwrap();
                    let n = self.nodes[b.0].value.shape()[1];
                    let bv = self.nodes[b.0].value.data();
                    if let Some(ga) = scratch(&mut grads, &self.nodes, *a) {
                        // ga += g * b^T
                        kernels::matmul_nt(&g, bv, ga, m, n, k, true);
                    }
                    let av = self.nodes[a.0].value.data();
                    if self.nodes[b.0].requires_grad {
                        let mut tmp = vec![0.0; k * n];
                        // gb += a^T * g
                        kernels::matmul_tn(av, &g, &mut tmp, m, k, n);
                        let gb = scratch(&mut grads, &self.nodes, *b).unwrap();
                        axpy(gb, &tmp, 1.0);
                    }
                }
                Op::Conv2d { x, w, bias, dims } => {
                    let xv = self.nodes[x.0].value.data();
                    let wv = self.nodes[w.0].value.data();
                    let want_x = self.nodes[x.0].requires_grad;
                    let want_w = self.nodes[w.0].requires_grad;
                    let want_b = bias.map(|b| self.nodes[b.0].requires_grad).unwrap_or(false);
                    let mut gx = want_x.then(|| vec![0.0; xv.len()]);
                    let mut gw = want_w.then(|| vec![0.0; wv.len()]);
                    let mut gb = want_b.then(|| vec![0.0; dims.f]);
                    kernels::conv2d_backward(
                        xv,
                        wv,
                        &g,
                        dims,
                        gx.as_deref_mut(),
                        gw.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    if let Some(gxv) = gx {
                        axpy(scratch(&mut grads, &self.nodes, *x).unwrap(), &gxv, 1.0);
                    }
                    if let Some(gwv) = gw {
                        axpy(scratch(&mut grads, &self.nodes, *w).unwrap(), &gwv, 1.0);
                    }
                    if let (Some(gbv), Some(b)) = (gb, *bias) {
                        axpy(scratch(&mut grads, &self.nodes, b).unwrap(), &gbv, 1.0);
                    }
                }
                Op::MaxPool2d {
                    x,
                    argmax,
                    n,
                    in_image,
                } => {
                    if let Some(gx) = scratch(&mut grads, &self.nodes, *x) {
                        kernels::maxpool2d_backward(argmax, &g, gx, *n, *in_image);
                    }
                }
                Op::ReluGaussMean {
                    mu,
                    sigma,
                    rows,
                    phi,
                    pdf,
                } => {
                    if self.nodes[mu.0].requires_grad {
                        let gmu = scratch(&mut grads, &self.nodes, *mu).unwrap();
                        kernels::relu_gauss_mean_backward(phi, pdf, &g, *rows, Some(gmu), None);
                    }
                    if self.nodes[sigma.0].requires_grad {
                        let gs = scratch(&mut grads, &self.nodes, *sigma).unwrap();
                        kernels::relu_gauss_mean_backward(phi, pdf, &g, *rows, None, Some(gs));
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                    rows,
                    classes,
                } => {
                    if let Some(gx) = scratch(&mut grads, &self.nodes, *logits) {
                        kernels::softmax_ce_backward(probs, labels, *rows, *classes, g[0], gx);
                    }
                }
            }
            grads[i] = Some(g);
        }

        for (i, gv) in grads.into_iter().enumerate() {
            let Some(gv) = gv else { continue };
            let node = &mut self.nodes[i];
            let numel = node.value.numel();
            let dst = node.grad.get_or_insert_with(|| vec![0.0; numel]);
            axpy(dst, &gv, 1.0);
        }
        Ok(())
    }
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// Per-call gradient buffer of a node, created zeroed on first touch.
/// Returns None for constants, which never receive gradients.
fn scratch<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: VarId,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[id.0].requires_grad {
        return None;
    }
    let numel = nodes[id.0].value.numel();
    Some(grads[id.0].get_or_insert_with(|| vec![0.0; numel]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn rand_tensor(shape: &[usize], r: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn fanout_doubles_gradient() {
        // Using a node twice sums both contributions.
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![3.0]));
        let a = g.add(x, x).unwrap();
        let s = g.sum(a);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn constants_never_receive_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![2.0]));
        let c = g.constant(Tensor::from_vec(vec![5.0]));
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[5.0]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn relu_gauss_mean_rejects_negative_sigma() {
        let mut g = Graph::new();
        let mu = g.leaf(Tensor::from_vec(vec![0.0]));
        let s = g.leaf(Tensor::from_vec(vec![-1.0]));
        assert!(matches!(
            g.relu_gauss_mean(mu, s),
            Err(Error::Domain(_))
        ));
    }

    /// Central finite differences through a scalar-valued rebuild closure.
    fn gradcheck(
        build: impl Fn(&mut Graph, &[Tensor]) -> (VarId, Vec<VarId>),
        inputs: &[Tensor],
        tol: f64,
    ) {
        let mut g = Graph::new();
        let (loss, ids) = build(&mut g, inputs);
        g.backward(loss).unwrap();
        let grads: Vec<Vec<f64>> = ids
            .iter()
            .map(|&id| g.grad(id).unwrap_or(&vec![0.0; g.value(id).numel()]).to_vec())
            .collect();

        let h = 1e-4;
        for (ti, t) in inputs.iter().enumerate() {
            for e in 0..t.numel() {
                let mut plus = inputs.to_vec();
                plus[ti].data_mut()[e] += h;
                let mut minus = inputs.to_vec();
                minus[ti].data_mut()[e] -= h;
                let mut gp = Graph::new();
                let (lp, _) = build(&mut gp, &plus);
                let mut gm = Graph::new();
                let (lm, _) = build(&mut gm, &minus);
                let fd = (gp.value(lp).item().unwrap() - gm.value(lm).item().unwrap())
                    / (2.0 * h);
                let an = grads[ti][e];
                let denom = fd.abs().max(an.abs());
                let ok = if denom < 1e-6 {
                    (fd - an).abs() <= 1e-6
                } else {
                    (fd - an).abs() / denom <= tol
                };
                assert!(ok, "input {ti} elem {e}: analytic {an} vs fd {fd}");
            }
        }
    }

    #[test]
    fn gradcheck_composite_graph() {
        // conv -> relu -> pool -> flatten -> matmul -> bias -> ce, plus the
        // gauss-mean branch, all in one graph.
        let mut r = rng::stream(21, &[1]);
        let x = rand_tensor(&[2, 2, 6, 6], &mut r);
        let w = rand_tensor(&[3, 2, 3, 3], &mut r);
        let b = rand_tensor(&[3], &mut r);
        let fcw = rand_tensor(&[27, 4], &mut r);
        let fcb = rand_tensor(&[4], &mut r);
        let inputs = vec![x, w, b, fcw, fcb];
        gradcheck(
            |g, inp| {
                let x = g.leaf(inp[0].clone());
                let w = g.leaf(inp[1].clone());
                let b = g.leaf(inp[2].clone());
                let fcw = g.leaf(inp[3].clone());
                let fcb = g.leaf(inp[4].clone());
                let c = g.conv2d(x, w, Some(b), 1, 0).unwrap();
                let a = g.relu(c);
                let p = g.maxpool2d(a, 2, 1).unwrap();
                let f = g.reshape(p, &[2, 27]).unwrap();
                let z = g.matmul(f, fcw).unwrap();
                let z = g.add_bias(z, fcb).unwrap();
                let loss = g.softmax_cross_entropy(z, &[1, 3]).unwrap();
                (loss, vec![x, w, b, fcw, fcb])
            },
            &inputs,
            1e-4,
        );
    }

    #[test]
    fn gradcheck_gauss_mean_with_broadcast() {
        let mut r = rng::stream(22, &[2]);
        let mu = rand_tensor(&[3, 4], &mut r);
        let sig = Tensor::new(
            vec![1, 4],
            (0..4).map(|_| r.random_range(0.2..1.5)).collect(),
        )
        .unwrap();
        gradcheck(
            |g, inp| {
                let mu = g.leaf(inp[0].clone());
                let sig = g.leaf(inp[1].clone());
                let t = g.relu_gauss_mean(mu, sig).unwrap();
                let sq = g.mul(t, t).unwrap();
                (g.sum(sq), vec![mu, sig])
            },
            &[mu, sig],
            1e-4,
        );
    }

    #[test]
    fn gradcheck_sqrt_and_scale() {
        let mut r = rng::stream(23, &[3]);
        let x = Tensor::new(
            vec![5],
            (0..5).map(|_| r.random_range(0.1..2.0)).collect(),
        )
        .unwrap();
        gradcheck(
            |g, inp| {
                let x = g.leaf(inp[0].clone());
                let s = g.sqrt(x).unwrap();
                let sc = g.scale(s, 2.5);
                (g.sum(sc), vec![x])
            },
            &[x],
            1e-4,
        );
    }

    #[test]
    fn tally_counts_ops() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 4, 4]));
        let w = g.leaf(Tensor::zeros(&[1, 1, 3, 3]));
        let c = g.conv2d(x, w, None, 1, 1).unwrap();
        let _ = g.relu(c);
        let t = g.tally();
        assert_eq!(t.conv2d, 1);
        assert_eq!(t.relu, 1);
        assert_eq!(t.matmul, 0);
    }
}
