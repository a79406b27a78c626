//! Reverse-mode automatic differentiation over a dynamically recorded tape.
//!
//! Every forward operation appends one node to the [`Tape`]; nodes reference
//! only earlier nodes, so insertion order is already a topological order.
//! [`Tape::backward`] replays the node list in reverse, accumulating vector-
//! Jacobian products additively into each input, which makes fan-out (one
//! value consumed by several ops) correct by construction. Replay order is
//! fixed by the recording, so identical tapes produce bit-identical
//! gradients. A tape is rebuilt for each forward pass and carries no state
//! between passes.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on the [`Tape`] that created it.
///
/// Handles are plain indices: using a `Var` on any other tape is a logic
/// error and panics on out-of-range access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Exp(Var),
    Ln(Var),
    /// `ln(max(x, floor))`; gradient is `1/x` where `x >= floor`, else 0.
    LnClamped { x: Var, floor: f64 },
    /// `max(x, c)` elementwise; gradient passes only where `x > c`.
    MaxConst { x: Var, c: f64 },
    Scale { x: Var, c: f64 },
    AddConst { x: Var },
    Sum(Var),
    Mean(Var),
    Matmul(Var, Var),
    /// `[n, f]` plus a rank-1 `[f]` bias broadcast over rows.
    AddBias { x: Var, b: Var },
    /// Row-wise softmax with max-subtraction.
    Softmax(Var),
    /// Batch normalization using the batch's own statistics (training mode).
    /// `xhat` and `inv_std` are saved from the forward pass for the backward.
    BnTrain { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    /// Batch normalization against fixed external statistics (eval mode).
    BnEval { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// A Wengert list: the recorded computation of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

enum Broadcast {
    Elementwise,
    ScalarLhs,
    ScalarRhs,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable leaf (a parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Registers a non-differentiable leaf (data, masks, frozen statistics).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` root with respect to `v`, if any was
    /// accumulated.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, grad: None, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ── Elementwise binary ops (scalar `[1]` operands broadcast) ──

    fn broadcast_kind(&self, a: Var, b: Var, op: &str) -> Result<Broadcast> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            Ok(Broadcast::Elementwise)
        } else if self.value(a).is_scalar() {
            Ok(Broadcast::ScalarLhs)
        } else if self.value(b).is_scalar() {
            Ok(Broadcast::ScalarRhs)
        } else {
            Err(Error::Contract(format!(
                "{op}: shapes {sa:?} and {sb:?} neither match nor broadcast"
            )))
        }
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op_name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let kind = self.broadcast_kind(a, b, op_name)?;
        let (va, vb) = (self.value(a), self.value(b));
        let (shape, data) = match kind {
            Broadcast::Elementwise => (
                va.shape().to_vec(),
                va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::ScalarRhs => {
                let s = vb.data()[0];
                (va.shape().to_vec(), va.data().iter().map(|&x| f(x, s)).collect())
            }
            Broadcast::ScalarLhs => {
                let s = va.data()[0];
                (vb.shape().to_vec(), vb.data().iter().map(|&y| f(s, y)).collect())
            }
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, needs, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().iter().any(|&y| y == 0.0) {
            return Err(Error::Domain("div: zero divisor".into()));
        }
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    // ── Elementwise unary ops ──

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| f(e)).collect())?;
        let needs = self.needs(x);
        Ok(self.push(t, needs, op))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// Natural logarithm; errors on any non-positive entry.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&e| e <= 0.0) {
            return Err(Error::Domain(format!("ln: non-positive input {bad}")));
        }
        self.unary(x, f64::ln, Op::Ln(x))
    }

    /// `ln(max(x, floor))` with `floor > 0`; total on all finite inputs.
    pub fn ln_clamped(&mut self, x: Var, floor: f64) -> Result<Var> {
        if !(floor > 0.0) {
            return Err(Error::Contract(format!("ln_clamped: floor {floor} must be > 0")));
        }
        self.unary(x, |e| e.max(floor).ln(), Op::LnClamped { x, floor })
    }

    /// Elementwise `max(x, c)`; `relu` is `max_const(x, 0.0)`.
    pub fn max_const(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, |e| e.max(c), Op::MaxConst { x, c })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.max_const(x, 0.0)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        if !c.is_finite() {
            return Err(Error::Domain(format!("scale: non-finite factor {c}")));
        }
        self.unary(x, |e| e * c, Op::Scale { x, c })
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        if !c.is_finite() {
            return Err(Error::Domain(format!("add_const: non-finite addend {c}")));
        }
        self.unary(x, |e| e + c, Op::AddConst { x })
    }

    // ── Reductions ──

    /// Sum of all entries, shape `[1]`. Accumulates in flat index order.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(s)?, needs, Op::Sum(x)))
    }

    /// Mean of all entries, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(s / n)?, needs, Op::Mean(x)))
    }

    // ── Linear algebra ──

    /// Rank-2 matrix product `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ka) = self.value(a).dims2()?;
        let (kb, m) = self.value(b).dims2()?;
        if ka != kb {
            return Err(Error::Contract(format!(
                "matmul: inner dims differ ({ka} vs {kb})"
            )));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for l in 0..ka {
                let aval = da[i * ka + l];
                for j in 0..m {
                    out[i * m + j] += aval * db[l * m + j];
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, needs, Op::Matmul(a, b)))
    }

    /// Adds a rank-1 bias `[f]` to every row of `[n, f]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, f) = self.value(x).dims2()?;
        let vb = self.value(b);
        if vb.shape() != [f] {
            return Err(Error::Contract(format!(
                "add_bias: bias shape {:?} does not match feature count {f}",
                vb.shape()
            )));
        }
        let (dx, db) = (self.value(x).data(), vb.data());
        let mut out = vec![0.0; n * f];
        for i in 0..n {
            for j in 0..f {
                out[i * f + j] = dx[i * f + j] + db[j];
            }
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(Tensor::new(vec![n, f], out)?, needs, Op::AddBias { x, b }))
    }

    /// Row-wise softmax of a rank-2 tensor, numerically stabilized by
    /// subtracting each row's maximum before exponentiation.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (n, c) = self.value(x).dims2()?;
        let d = self.value(x).data();
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let row = &d[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                out[i * c + j] = e;
                s += e;
            }
            for j in 0..c {
                out[i * c + j] /= s;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![n, c], out)?, needs, Op::Softmax(x)))
    }

    // ── Batch normalization ──

    /// Training-mode batch normalization of `[n, f]` against the batch's own
    /// per-feature statistics (biased variance, i.e. divided by `n`).
    ///
    /// Returns the output together with the batch mean and biased batch
    /// variance so the caller can fold them into running statistics.
    /// Gradients flow through the statistics into `x` as well as through
    /// `gamma` and `beta`.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (n, f) = self.value(x).dims2()?;
        self.check_bn_affine(gamma, beta, f)?;
        let d = self.value(x).data();
        // Two-pass statistics: mean, then squared deviations.
        let mut mean = vec![0.0; f];
        for i in 0..n {
            for j in 0..f {
                mean[j] += d[i * f + j];
            }
        }
        for mj in mean.iter_mut() {
            *mj /= n as f64;
        }
        let mut var = vec![0.0; f];
        for i in 0..n {
            for j in 0..f {
                let dev = d[i * f + j] - mean[j];
                var[j] += dev * dev;
            }
        }
        for vj in var.iter_mut() {
            *vj /= n as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * f];
        for i in 0..n {
            for j in 0..f {
                xhat[i * f + j] = (d[i * f + j] - mean[j]) * inv_std[j];
            }
        }
        let out = self.bn_affine_out(&xhat, gamma, beta, n, f)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let v = self.push(out, needs, Op::BnTrain { x, gamma, beta, xhat, inv_std });
        Ok((v, mean, var))
    }

    /// Eval-mode batch normalization of `[n, f]` against fixed external
    /// statistics. Pure: normalizes row-independently and saves nothing back.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (n, f) = self.value(x).dims2()?;
        self.check_bn_affine(gamma, beta, f)?;
        if mean.len() != f || var.len() != f {
            return Err(Error::Contract(format!(
                "batch_norm_eval: statistics of length {}/{} do not match feature count {f}",
                mean.len(),
                var.len()
            )));
        }
        let d = self.value(x).data();
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * f];
        for i in 0..n {
            for j in 0..f {
                xhat[i * f + j] = (d[i * f + j] - mean[j]) * inv_std[j];
            }
        }
        let out = self.bn_affine_out(&xhat, gamma, beta, n, f)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(out, needs, Op::BnEval { x, gamma, beta, xhat, inv_std }))
    }

    fn check_bn_affine(&self, gamma: Var, beta: Var, f: usize) -> Result<()> {
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [f] {
                return Err(Error::Contract(format!(
                    "batch norm: {name} shape {:?} does not match feature count {f}",
                    self.value(v).shape()
                )));
            }
        }
        Ok(())
    }

    fn bn_affine_out(&self, xhat: &[f64], gamma: Var, beta: Var, n: usize, f: usize) -> Result<Tensor> {
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0; n * f];
        for i in 0..n {
            for j in 0..f {
                out[i * f + j] = g[j] * xhat[i * f + j] + b[j];
            }
        }
        Tensor::new(vec![n, f], out)
    }

    // ── Backward ──

    /// Reverse-accumulates gradients of the scalar `root` into every node
    /// that (transitively) requires them. Grads are reset first, so repeated
    /// calls on the same tape each start from zero.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be a scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &rest[0];
            let g = node.grad.as_ref().expect("checked above");
            propagate(before, node, g)?;
        }
        Ok(())
    }
}

/// Adds `contribution(i)` into the grad buffer of `target`, allocating zeros
/// on first touch. Skips nodes that do not require gradients.
fn accumulate(nodes: &mut [Node], target: Var, len: usize, contribution: impl Fn(usize) -> f64) {
    let node = &mut nodes[target.0];
    if !node.needs_grad {
        return;
    }
    let buf = node.grad.get_or_insert_with(|| vec![0.0; len]);
    for (i, slot) in buf.iter_mut().enumerate() {
        *slot += contribution(i);
    }
}

/// Vector-Jacobian product of one node, scattered into its inputs.
fn propagate(nodes: &mut [Node], node: &Node, g: &[f64]) -> Result<()> {
    // Helper closures read input values from `nodes` (all inputs precede the
    // node on the tape, so they live in `nodes`).
    let val = |v: Var| -> &Tensor { &nodes[v.0].value };
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            let (a, b) = (*a, *b);
            binary_backward(nodes, a, b, g, |_, _, gi| gi, |_, _, gi| gi);
        }
        Op::Sub(a, b) => {
            let (a, b) = (*a, *b);
            binary_backward(nodes, a, b, g, |_, _, gi| gi, |_, _, gi| -gi);
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            binary_backward(nodes, a, b, g, |_, y, gi| gi * y, |x, _, gi| gi * x);
        }
        Op::Div(a, b) => {
            let (a, b) = (*a, *b);
            binary_backward(nodes, a, b, g, |_, y, gi| gi / y, |x, y, gi| -gi * x / (y * y));
        }
        Op::Exp(x) => {
            let y = node.value.data();
            accumulate(nodes, *x, y.len(), |i| g[i] * y[i]);
        }
        Op::Ln(x) => {
            let xv: Vec<f64> = val(*x).data().to_vec();
            accumulate(nodes, *x, xv.len(), |i| g[i] / xv[i]);
        }
        Op::LnClamped { x, floor } => {
            let floor = *floor;
            let xv: Vec<f64> = val(*x).data().to_vec();
            accumulate(nodes, *x, xv.len(), |i| {
                if xv[i] >= floor { g[i] / xv[i] } else { 0.0 }
            });
        }
        Op::MaxConst { x, c } => {
            let c = *c;
            let xv: Vec<f64> = val(*x).data().to_vec();
            accumulate(nodes, *x, xv.len(), |i| if xv[i] > c { g[i] } else { 0.0 });
        }
        Op::Scale { x, c } => {
            let c = *c;
            accumulate(nodes, *x, g.len(), |i| g[i] * c);
        }
        Op::AddConst { x, .. } => {
            accumulate(nodes, *x, g.len(), |i| g[i]);
        }
        Op::Sum(x) => {
            let n = val(*x).len();
            let gs = g[0];
            accumulate(nodes, *x, n, |_| gs);
        }
        Op::Mean(x) => {
            let n = val(*x).len();
            let gs = g[0] / n as f64;
            accumulate(nodes, *x, n, |_| gs);
        }
        Op::Matmul(a, b) => {
            let (a, b) = (*a, *b);
            let (n, k) = val(a).dims2()?;
            let (_, m) = val(b).dims2()?;
            let (da, db): (Vec<f64>, Vec<f64>) = (val(a).data().to_vec(), val(b).data().to_vec());
            // dA = G · Bᵀ
            accumulate(nodes, a, n * k, |flat| {
                let (i, l) = (flat / k, flat % k);
                let mut s = 0.0;
                for j in 0..m {
                    s += g[i * m + j] * db[l * m + j];
                }
                s
            });
            // dB = Aᵀ · G
            accumulate(nodes, b, k * m, |flat| {
                let (l, j) = (flat / m, flat % m);
                let mut s = 0.0;
                for i in 0..n {
                    s += da[i * k + l] * g[i * m + j];
                }
                s
            });
        }
        Op::AddBias { x, b } => {
            let (x, b) = (*x, *b);
            let (n, f) = val(x).dims2()?;
            accumulate(nodes, x, n * f, |i| g[i]);
            accumulate(nodes, b, f, |j| {
                let mut s = 0.0;
                for i in 0..n {
                    s += g[i * f + j];
                }
                s
            });
        }
        Op::Softmax(x) => {
            let (n, c) = node.value.dims2()?;
            let p = node.value.data();
            let mut dx = vec![0.0; n * c];
            for i in 0..n {
                let mut dot = 0.0;
                for j in 0..c {
                    dot += g[i * c + j] * p[i * c + j];
                }
                for j in 0..c {
                    dx[i * c + j] = p[i * c + j] * (g[i * c + j] - dot);
                }
            }
            accumulate(nodes, *x, n * c, |i| dx[i]);
        }
        Op::BnTrain { x, gamma, beta, xhat, inv_std } => {
            let (x, gamma, beta) = (*x, *gamma, *beta);
            let (n, f) = val(x).dims2()?;
            let gvals: Vec<f64> = val(gamma).data().to_vec();
            // dxhat = g * gamma; per-feature sums feed the statistics terms.
            let mut sum_dxhat = vec![0.0; f];
            let mut sum_dxhat_xhat = vec![0.0; f];
            for i in 0..n {
                for j in 0..f {
                    let dxh = g[i * f + j] * gvals[j];
                    sum_dxhat[j] += dxh;
                    sum_dxhat_xhat[j] += dxh * xhat[i * f + j];
                }
            }
            let nf = n as f64;
            let mut dx = vec![0.0; n * f];
            for i in 0..n {
                for j in 0..f {
                    let dxh = g[i * f + j] * gvals[j];
                    dx[i * f + j] = inv_std[j]
                        * (dxh - sum_dxhat[j] / nf - xhat[i * f + j] * sum_dxhat_xhat[j] / nf);
                }
            }
            accumulate(nodes, x, n * f, |i| dx[i]);
            bn_affine_backward(nodes, gamma, beta, xhat, g, n, f);
        }
        Op::BnEval { x, gamma, beta, xhat, inv_std } => {
            let (x, gamma, beta) = (*x, *gamma, *beta);
            let (n, f) = val(x).dims2()?;
            let gvals: Vec<f64> = val(gamma).data().to_vec();
            let inv: Vec<f64> = inv_std.clone();
            accumulate(nodes, x, n * f, |i| g[i] * gvals[i % f] * inv[i % f]);
            bn_affine_backward(nodes, gamma, beta, xhat, g, n, f);
        }
    }
    Ok(())
}

fn bn_affine_backward(
    nodes: &mut [Node],
    gamma: Var,
    beta: Var,
    xhat: &[f64],
    g: &[f64],
    n: usize,
    f: usize,
) {
    accumulate(nodes, gamma, f, |j| {
        let mut s = 0.0;
        for i in 0..n {
            s += g[i * f + j] * xhat[i * f + j];
        }
        s
    });
    accumulate(nodes, beta, f, |j| {
        let mut s = 0.0;
        for i in 0..n {
            s += g[i * f + j];
        }
        s
    });
}

/// Backward for elementwise binary ops with optional scalar broadcast.
/// `fa(x, y, g) -> da`, `fb(x, y, g) -> db` are the per-element partials.
fn binary_backward(
    nodes: &mut [Node],
    a: Var,
    b: Var,
    g: &[f64],
    fa: impl Fn(f64, f64, f64) -> f64,
    fb: impl Fn(f64, f64, f64) -> f64,
) {
    let (la, lb) = (nodes[a.0].value.len(), nodes[b.0].value.len());
    let av: Vec<f64> = nodes[a.0].value.data().to_vec();
    let bv: Vec<f64> = nodes[b.0].value.data().to_vec();
    let at = |i: usize| if la == 1 { av[0] } else { av[i] };
    let bt = |i: usize| if lb == 1 { bv[0] } else { bv[i] };
    if la == 1 && g.len() > 1 {
        // Broadcast scalar on the left: its grad is the sum over elements.
        accumulate(nodes, a, 1, |_| {
            let mut s = 0.0;
            for (i, &gi) in g.iter().enumerate() {
                s += fa(at(i), bt(i), gi);
            }
            s
        });
    } else {
        accumulate(nodes, a, la, |i| fa(at(i), bt(i), g[i]));
    }
    if lb == 1 && g.len() > 1 {
        accumulate(nodes, b, 1, |_| {
            let mut s = 0.0;
            for (i, &gi) in g.iter().enumerate() {
                s += fb(at(i), bt(i), gi);
            }
            s
        });
    } else {
        accumulate(nodes, b, lb, |i| fb(at(i), bt(i), g[i]));
    }
}
