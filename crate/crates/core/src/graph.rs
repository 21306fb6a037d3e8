//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! A graph is built fresh for every training step and then dropped.

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which axis a normalization reduces over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormAxis {
    /// Per feature, over the rows of the batch.
    Batch,
    /// Per sample, over its features.
    Layer,
}

/// Batch statistics produced by a normalization node.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    DivConst(Var, f64),
    Relu(Var),
    Sum(Var),
    L2Norm(Var),
    RoundSte(Var),
    Clamp(Var, f64, f64),
    Stack(Vec<Var>),
    Normalize {
        x: Var,
        gamma: Var,
        beta: Var,
        axis: NormAxis,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    SoftmaxXent {
        logits: Var,
        probs: Tensor,
        labels: Vec<usize>,
    },
    LogSoftmax {
        x: Var,
        probs: Tensor,
    },
    Scalar2 {
        a: Var,
        b: Var,
        da: f64,
        db: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch { op, left: a.shape().to_vec(), right: b.shape().to_vec() }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, &[])
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.shape().len() != 2 {
            return Err(Error::invalid(format!("transpose needs a matrix, got {:?}", x.shape())));
        }
        let out = x.transpose();
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(op, x, y));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise quotient. The caller guarantees a nonzero denominator.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x / y);
        Ok(self.push(out, Op::Div(a, b), &[a, b]))
    }

    fn row_broadcast_check(&self, op: &'static str, x: Var, r: Var) -> Result<(usize, usize)> {
        let (xv, rv) = (self.value(x), self.value(r));
        if xv.shape().len() != 2 || rv.shape().len() != 1 || xv.cols() != rv.len() {
            return Err(mismatch(op, xv, rv));
        }
        Ok((xv.rows(), xv.cols()))
    }

    /// `x[i, j] + r[j]`.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (m, n) = self.row_broadcast_check("add_row", x, r)?;
        let (xv, rv) = (self.value(x).data(), self.value(r).data());
        let data = (0..m * n).map(|k| xv[k] + rv[k % n]).collect();
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(out, Op::AddRow(x, r), &[x, r]))
    }

    /// `x[i, j] * r[j]`, i.e. `x · diag(r)`.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (m, n) = self.row_broadcast_check("mul_row", x, r)?;
        let (xv, rv) = (self.value(x).data(), self.value(r).data());
        let data = (0..m * n).map(|k| xv[k] * rv[k % n]).collect();
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(out, Op::MulRow(x, r), &[x, r]))
    }

    /// Tensor times a one-element node.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(mismatch("mul_scalar", self.value(x), self.value(s)));
        }
        let k = self.item(s);
        let out = self.value(x).map(|v| v * k);
        Ok(self.push(out, Op::MulScalar(x, s), &[x, s]))
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    /// Add a constant.
    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::Shift(x), &[x])
    }

    /// Divide by a nonzero constant.
    pub fn div_const(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v / c);
        self.push(out, Op::DivConst(x, c), &[x])
    }

    /// `c * x + shift` with constants `c` and `shift`.
    pub fn affine(&mut self, x: Var, c: f64, shift: f64) -> Var {
        let scaled = self.scale(x, c);
        self.shift(scaled, shift)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu(x), &[x])
    }

    /// `max(0, x)`; identical to [`Graph::relu`].
    pub fn max_zero(&mut self, x: Var) -> Var {
        self.relu(x)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// Euclidean norm of all entries. The gradient at the zero vector is zero.
    pub fn l2_norm(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).frobenius());
        self.push(out, Op::L2Norm(x), &[x])
    }

    /// Round to nearest (ties away from zero) with an identity backward.
    pub fn round_ste(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::round);
        self.push(out, Op::RoundSte(x), &[x])
    }

    /// Elementwise clamp to `[lo, hi]`.
    ///
    /// Equal to `hi - relu(hi - lo - relu(x - lo))`; the backward pass uses
    /// that composition's derivative, which is 1 strictly inside the range
    /// and 0 elsewhere.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo < hi) {
            return Err(Error::invalid(format!("clamp range [{lo}, {hi}] is empty")));
        }
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        Ok(self.push(out, Op::Clamp(x, lo, hi), &[x]))
    }

    /// Concatenate scalars into a vector.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("stack of zero scalars"));
        }
        let mut data = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if !v.is_scalar() {
                return Err(Error::invalid(format!("stack expects scalars, got {:?}", v.shape())));
            }
            data.push(v.item());
        }
        Ok(self.push(Tensor::vector(data), Op::Stack(parts.to_vec()), parts))
    }

    /// Training-mode batch normalization of a `(batch, features)` matrix.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, NormStats)> {
        self.normalize(x, gamma, beta, eps, NormAxis::Batch)
    }

    /// Layer normalization of a `(batch, features)` matrix.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, NormStats)> {
        self.normalize(x, gamma, beta, eps, NormAxis::Layer)
    }

    pub fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        axis: NormAxis,
    ) -> Result<(Var, NormStats)> {
        if !(eps > 0.0) {
            return Err(Error::invalid(format!("normalization epsilon must be positive, got {eps}")));
        }
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Error::invalid(format!("normalization expects a matrix, got {:?}", xv.shape())));
        }
        let (m, n) = (xv.rows(), xv.cols());
        for p in [gamma, beta] {
            let pv = self.value(p);
            if pv.shape() != [n] {
                return Err(mismatch("normalize", xv, pv));
            }
        }
        let (groups, size) = match axis {
            NormAxis::Batch => (n, m),
            NormAxis::Layer => (m, n),
        };
        if size < 2 {
            return Err(Error::invalid(match axis {
                NormAxis::Batch => "batch normalization needs a batch of at least 2".to_string(),
                NormAxis::Layer => "layer normalization needs at least 2 features".to_string(),
            }));
        }
        let at = |g: usize, k: usize| match axis {
            NormAxis::Batch => k * n + g,
            NormAxis::Layer => g * n + k,
        };
        let data = xv.data();
        let mut mean = vec![0.0; groups];
        let mut var = vec![0.0; groups];
        let mut inv_std = vec![0.0; groups];
        let mut xhat = vec![0.0; m * n];
        for g in 0..groups {
            let mu = (0..size).map(|k| data[at(g, k)]).sum::<f64>() / size as f64;
            let v = (0..size).map(|k| (data[at(g, k)] - mu).powi(2)).sum::<f64>() / size as f64;
            let is = 1.0 / (v + eps).sqrt();
            for k in 0..size {
                let idx = at(g, k);
                xhat[idx] = (data[idx] - mu) * is;
            }
            mean[g] = mu;
            var[g] = v;
            inv_std[g] = is;
        }
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let out: Vec<f64> = (0..m * n).map(|k| gv[k % n] * xhat[k] + bv[k % n]).collect();
        let out = Tensor::new(vec![m, n], out)?;
        let xhat = Tensor::new(vec![m, n], xhat)?;
        let stats = NormStats { mean, var, eps };
        let node = self.push(
            out,
            Op::Normalize { x, gamma, beta, axis, xhat, inv_std },
            &[x, gamma, beta],
        );
        Ok((node, stats))
    }

    /// Mean softmax cross-entropy of `(batch, classes)` logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if z.shape().len() != 2 || z.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "logits {:?} do not match {} labels",
                z.shape(),
                labels.len()
            )));
        }
        let (b, c) = (z.rows(), z.cols());
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
            return Err(Error::invalid(format!("label {l} at row {i} out of range for {c} classes")));
        }
        let probs = softmax_rows(z);
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let row = z.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[l];
        }
        let out = Tensor::scalar(loss / b as f64);
        Ok(self.push(out, Op::SoftmaxXent { logits, probs, labels: labels.to_vec() }, &[logits]))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let z = self.value(x);
        if z.shape().len() != 2 {
            return Err(Error::invalid(format!("log_softmax expects a matrix, got {:?}", z.shape())));
        }
        let probs = softmax_rows(z);
        let mut out = Vec::with_capacity(z.len());
        for i in 0..z.rows() {
            let row = z.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        let out = Tensor::new(z.shape().to_vec(), out)?;
        Ok(self.push(out, Op::LogSoftmax { x, probs }, &[x]))
    }

    /// A scalar function of two scalar nodes whose value and partial
    /// derivatives were computed by the caller.
    pub fn scalar_fn2(&mut self, a: Var, b: Var, value: f64, da: f64, db: f64) -> Result<Var> {
        if !self.value(a).is_scalar() || !self.value(b).is_scalar() {
            return Err(mismatch("scalar_fn2", self.value(a), self.value(b)));
        }
        Ok(self.push(Tensor::scalar(value), Op::Scalar2 { a, b, da, db }, &[a, b]))
    }

    /// Propagate gradients from a scalar `loss` to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.value(loss);
        if !root.is_scalar() {
            return Err(Error::invalid(format!("backward needs a scalar loss, got shape {:?}", root.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.unwrap_or_else(|| Tensor::zeros(n.value.shape())))
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => {
                    for (a, d) in t.data_mut().iter_mut().zip(delta.data()) {
                        *a += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.nodes[a.0].needs_grad {
                    let bt = bv.transpose();
                    let mut da = vec![0.0; m * k];
                    matmul_into(g.data(), bt.data(), &mut da, m, n, k);
                    acc(*a, Tensor::new(vec![m, k], da).unwrap());
                }
                if self.nodes[b.0].needs_grad {
                    let at = av.transpose();
                    let mut db = vec![0.0; k * n];
                    matmul_into(at.data(), g.data(), &mut db, k, m, n);
                    acc(*b, Tensor::new(vec![k, n], db).unwrap());
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(*a, zip_map(g, val(*b), |x, y| x * y));
                acc(*b, zip_map(g, val(*a), |x, y| x * y));
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, zip_map(g, bv, |x, y| x / y));
                let db: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(av.data().iter().zip(bv.data()))
                    .map(|(&gi, (&ai, &bi))| -gi * ai / (bi * bi))
                    .collect();
                acc(*b, Tensor::new(bv.shape().to_vec(), db).unwrap());
            }
            Op::AddRow(x, r) => {
                let n = val(*r).len();
                let mut dr = vec![0.0; n];
                for (k, gv) in g.data().iter().enumerate() {
                    dr[k % n] += gv;
                }
                acc(*x, g.clone());
                acc(*r, Tensor::vector(dr));
            }
            Op::MulRow(x, r) => {
                let (xv, rv) = (val(*x).data(), val(*r).data());
                let n = rv.len();
                let dx: Vec<f64> = g.data().iter().enumerate().map(|(k, gv)| gv * rv[k % n]).collect();
                let mut dr = vec![0.0; n];
                for (k, gv) in g.data().iter().enumerate() {
                    dr[k % n] += gv * xv[k];
                }
                acc(*x, Tensor::new(g.shape().to_vec(), dx).unwrap());
                acc(*r, Tensor::vector(dr));
            }
            Op::MulScalar(x, s) => {
                let k = val(*s).item();
                let ds: f64 = g.data().iter().zip(val(*x).data()).map(|(a, b)| a * b).sum();
                acc(*x, g.map(|v| v * k));
                acc(*s, Tensor::full(val(*s).shape(), ds));
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
            Op::Shift(x) => acc(*x, g.clone()),
            Op::DivConst(x, c) => acc(*x, g.map(|v| v / c)),
            Op::Relu(x) => acc(*x, zip_map(g, val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })),
            Op::Sum(x) => acc(*x, Tensor::full(val(*x).shape(), g.item())),
            Op::L2Norm(x) => {
                let n = node.value.item();
                let gv = g.item();
                let dx = if n == 0.0 {
                    Tensor::zeros(val(*x).shape())
                } else {
                    val(*x).map(|v| gv * v / n)
                };
                acc(*x, dx);
            }
            Op::RoundSte(x) => acc(*x, g.clone()),
            Op::Clamp(x, lo, hi) => acc(
                *x,
                zip_map(g, val(*x), |gv, xv| if xv > *lo && xv < *hi { gv } else { 0.0 }),
            ),
            Op::Stack(parts) => {
                for (p, &gv) in parts.iter().zip(g.data()) {
                    acc(*p, Tensor::full(val(*p).shape(), gv));
                }
            }
            Op::Normalize { x, gamma, beta, axis, xhat, inv_std } => {
                let (m, n) = (xhat.rows(), xhat.cols());
                let gm = val(*gamma).data();
                let gd = g.data();
                let xh = xhat.data();
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                let mut dxhat = vec![0.0; m * n];
                for k in 0..m * n {
                    let j = k % n;
                    dgamma[j] += gd[k] * xh[k];
                    dbeta[j] += gd[k];
                    dxhat[k] = gd[k] * gm[j];
                }
                if self.nodes[x.0].needs_grad {
                    let (groups, size) = match axis {
                        NormAxis::Batch => (n, m),
                        NormAxis::Layer => (m, n),
                    };
                    let at = |grp: usize, k: usize| match axis {
                        NormAxis::Batch => k * n + grp,
                        NormAxis::Layer => grp * n + k,
                    };
                    let mut dx = vec![0.0; m * n];
                    let sz = size as f64;
                    for grp in 0..groups {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for k in 0..size {
                            let i = at(grp, k);
                            s1 += dxhat[i];
                            s2 += dxhat[i] * xh[i];
                        }
                        for k in 0..size {
                            let i = at(grp, k);
                            dx[i] = inv_std[grp] / sz * (sz * dxhat[i] - s1 - xh[i] * s2);
                        }
                    }
                    acc(*x, Tensor::new(vec![m, n], dx).unwrap());
                }
                acc(*gamma, Tensor::vector(dgamma));
                acc(*beta, Tensor::vector(dbeta));
            }
            Op::SoftmaxXent { logits, probs, labels } => {
                let (b, c) = (probs.rows(), probs.cols());
                let scale = g.item() / b as f64;
                let mut d = probs.data().to_vec();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * c + l] -= 1.0;
                }
                d.iter_mut().for_each(|v| *v *= scale);
                acc(*logits, Tensor::new(vec![b, c], d).unwrap());
            }
            Op::LogSoftmax { x, probs } => {
                let c = probs.cols();
                let mut d = vec![0.0; probs.len()];
                for i in 0..probs.rows() {
                    let gs: f64 = g.row(i).iter().sum();
                    for j in 0..c {
                        d[i * c + j] = g.get2(i, j) - probs.get2(i, j) * gs;
                    }
                }
                acc(*x, Tensor::new(probs.shape().to_vec(), d).unwrap());
            }
            Op::Scalar2 { a, b, da, db } => {
                let gv = g.item();
                acc(*a, Tensor::full(val(*a).shape(), gv * da));
                acc(*b, Tensor::full(val(*b).shape(), gv * db));
            }
        }
    }
}

fn softmax_rows(z: &Tensor) -> Tensor {
    let mut out = Vec::with_capacity(z.len());
    for i in 0..z.rows() {
        let row = z.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::new(z.shape().to_vec(), out).expect("shape preserved")
}

/// Result of [`Graph::backward`]: one gradient per node, shaped like its value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> &Tensor {
        &self.grads[v.0]
    }

    pub fn into_vec(self) -> Vec<Tensor> {
        self.grads
    }
}
