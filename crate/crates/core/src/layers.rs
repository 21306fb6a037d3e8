//! Re-parameterizations of a dense layer's weight matrix.
//!
//! Every compressible layer stores a base weight `W` of shape
//! `(d_out, d_in)` (or the SVD factors of one) together with the mask
//! variables whose exact zeros delete structure:
//!
//! | kind                  | effective weight                     |
//! |-----------------------|--------------------------------------|
//! | pruned                | `W · diag(α)`                        |
//! | unstructured          | `W ⊙ A`                              |
//! | low-rank              | `U · diag(β) · V`                    |
//! | pruned + low-rank     | `U · diag(β) · V · diag(α)`          |
//! | quantized             | nested bit ladder over `W_b`         |
//! | pruned + unstructured | `(W ⊙ B) · diag(α)`                  |
//! | pruned + quantized    | `ladder(W) · diag(α)`                |
//!
//! `α` always masks the layer's input features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamId;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Dense,
    Pruned,
    Unstructured,
    LowRank,
    PrunedLowRank,
    Quantized,
    PrunedUnstructured,
    PrunedQuantized,
}

impl LayerKind {
    pub const ALL: [LayerKind; 8] = [
        LayerKind::Dense,
        LayerKind::Pruned,
        LayerKind::Unstructured,
        LayerKind::LowRank,
        LayerKind::PrunedLowRank,
        LayerKind::Quantized,
        LayerKind::PrunedUnstructured,
        LayerKind::PrunedQuantized,
    ];

    pub fn has_input_mask(self) -> bool {
        matches!(
            self,
            LayerKind::Pruned
                | LayerKind::PrunedLowRank
                | LayerKind::PrunedUnstructured
                | LayerKind::PrunedQuantized
        )
    }

    pub fn is_quantized(self) -> bool {
        matches!(self, LayerKind::Quantized | LayerKind::PrunedQuantized)
    }
}

/// Bit-width selection ladder over rungs `b_0 < b_1 < … < b_m`.
///
/// The effective weight is
/// `a_0 · (W_{b_0} + a_1 (W_{b_1} − W_{b_0} + a_2 (W_{b_2} − W_{b_1} + …)))`
/// where `a_0` only exists when the full ladder (allowing zero bits) is enabled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantLadder<I> {
    pub bits: Vec<u32>,
    pub first: Option<I>,
    /// One mask per rung above the lowest.
    pub masks: Vec<I>,
    /// Quantization range `(r_l, r_u)` per rung.
    pub ranges: Vec<(f64, f64)>,
}

impl<I: Copy> QuantLadder<I> {
    pub fn map<J>(&self, f: impl Fn(I) -> J) -> QuantLadder<J> {
        QuantLadder {
            bits: self.bits.clone(),
            first: self.first.map(&f),
            masks: self.masks.iter().map(|&m| f(m)).collect(),
            ranges: self.ranges.clone(),
        }
    }

    pub fn mask_ids(&self) -> Vec<I> {
        self.first.iter().copied().chain(self.masks.iter().copied()).collect()
    }
}

/// Parameter references for one layer, generic over stored ids or bound graph nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Parameterization<I> {
    Dense { weight: I },
    Pruned { weight: I, alpha: I },
    Unstructured { weight: I, mask: I },
    LowRank { u: I, beta: I, v: I },
    PrunedLowRank { u: I, beta: I, v: I, alpha: I },
    Quantized { weight: I, ladder: QuantLadder<I> },
    PrunedUnstructured { weight: I, mask: I, alpha: I },
    PrunedQuantized { weight: I, ladder: QuantLadder<I>, alpha: I },
}

impl<I: Copy> Parameterization<I> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Parameterization::Dense { .. } => LayerKind::Dense,
            Parameterization::Pruned { .. } => LayerKind::Pruned,
            Parameterization::Unstructured { .. } => LayerKind::Unstructured,
            Parameterization::LowRank { .. } => LayerKind::LowRank,
            Parameterization::PrunedLowRank { .. } => LayerKind::PrunedLowRank,
            Parameterization::Quantized { .. } => LayerKind::Quantized,
            Parameterization::PrunedUnstructured { .. } => LayerKind::PrunedUnstructured,
            Parameterization::PrunedQuantized { .. } => LayerKind::PrunedQuantized,
        }
    }

    pub fn map<J>(&self, f: impl Fn(I) -> J) -> Parameterization<J> {
        use Parameterization as P;
        match self {
            P::Dense { weight } => P::Dense { weight: f(*weight) },
            P::Pruned { weight, alpha } => P::Pruned { weight: f(*weight), alpha: f(*alpha) },
            P::Unstructured { weight, mask } => P::Unstructured { weight: f(*weight), mask: f(*mask) },
            P::LowRank { u, beta, v } => P::LowRank { u: f(*u), beta: f(*beta), v: f(*v) },
            P::PrunedLowRank { u, beta, v, alpha } => P::PrunedLowRank {
                u: f(*u),
                beta: f(*beta),
                v: f(*v),
                alpha: f(*alpha),
            },
            P::Quantized { weight, ladder } => P::Quantized { weight: f(*weight), ladder: ladder.map(&f) },
            P::PrunedUnstructured { weight, mask, alpha } => P::PrunedUnstructured {
                weight: f(*weight),
                mask: f(*mask),
                alpha: f(*alpha),
            },
            P::PrunedQuantized { weight, ladder, alpha } => P::PrunedQuantized {
                weight: f(*weight),
                ladder: ladder.map(&f),
                alpha: f(*alpha),
            },
        }
    }

    /// The input-feature mask `α`, if this kind has one.
    pub fn input_mask(&self) -> Option<I> {
        match self {
            Parameterization::Pruned { alpha, .. }
            | Parameterization::PrunedLowRank { alpha, .. }
            | Parameterization::PrunedUnstructured { alpha, .. }
            | Parameterization::PrunedQuantized { alpha, .. } => Some(*alpha),
            _ => None,
        }
    }

    pub fn ladder(&self) -> Option<&QuantLadder<I>> {
        match self {
            Parameterization::Quantized { ladder, .. } | Parameterization::PrunedQuantized { ladder, .. } => {
                Some(ladder)
            }
            _ => None,
        }
    }

    /// The matrix whose Frobenius norm is reported as "the layer's weight".
    pub fn primary_weight(&self) -> I {
        match self {
            Parameterization::Dense { weight }
            | Parameterization::Pruned { weight, .. }
            | Parameterization::Unstructured { weight, .. }
            | Parameterization::Quantized { weight, .. }
            | Parameterization::PrunedUnstructured { weight, .. }
            | Parameterization::PrunedQuantized { weight, .. } => *weight,
            Parameterization::LowRank { v, .. } | Parameterization::PrunedLowRank { v, .. } => *v,
        }
    }
}

/// One linear layer `y = x · W_effᵀ + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressibleLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub param: Parameterization<ParamId>,
    pub bias: Option<ParamId>,
}

/// `clip(W; r_l, r_u) = r_u − ReLU(r_u − r_l − ReLU(W − r_l))`, as a graph node.
pub fn clip(g: &mut Graph, w: Var, lo: f64, hi: f64) -> Result<Var> {
    if !(lo < hi) {
        return Err(Error::invalid(format!("clip range requires r_l < r_u, got [{lo}, {hi}]")));
    }
    g.clamp(w, lo, hi)
}

fn grid_step(lo: f64, hi: f64, bits: u32) -> Result<f64> {
    if bits == 0 || bits > 52 {
        return Err(Error::invalid(format!("bit-width must be in 1..=52, got {bits}")));
    }
    if !(lo < hi) {
        return Err(Error::invalid(format!("quantization range requires r_l < r_u, got [{lo}, {hi}]")));
    }
    Ok((hi - lo) / ((1u64 << bits) - 1) as f64)
}

/// Uniform `b`-bit quantization of one value onto the `2^b` grid over `[lo, hi]`.
pub fn quantize_value(w: f64, lo: f64, hi: f64, bits: u32) -> Result<f64> {
    let step = grid_step(lo, hi, bits)?;
    Ok(lo + step * ((w.clamp(lo, hi) - lo) / step).round())
}

/// `b`-bit quantization as a graph node; rounding goes through the
/// straight-through estimator so `W` still receives gradients.
pub fn quantize_b(g: &mut Graph, w: Var, lo: f64, hi: f64, bits: u32) -> Result<Var> {
    let step = grid_step(lo, hi, bits)?;
    let c = clip(g, w, lo, hi)?;
    let t = g.shift(c, -lo);
    let t = g.div_const(t, step);
    let r = g.round_ste(t);
    let r = g.scale(r, step);
    Ok(g.shift(r, lo))
}

fn ladder_weight(g: &mut Graph, w: Var, ladder: &QuantLadder<Var>) -> Result<Var> {
    let m = ladder.bits.len();
    if m == 0 || ladder.masks.len() + 1 != m || ladder.ranges.len() != m {
        return Err(Error::invalid(format!(
            "ladder with {} rungs needs {} masks and {} ranges, got {} and {}",
            m,
            m.saturating_sub(1),
            m,
            ladder.masks.len(),
            ladder.ranges.len()
        )));
    }
    let mut q = Vec::with_capacity(m);
    for (&b, &(lo, hi)) in ladder.bits.iter().zip(&ladder.ranges) {
        q.push(quantize_b(g, w, lo, hi, b)?);
    }
    let mut inner: Option<Var> = None;
    for k in (1..m).rev() {
        let mut delta = g.sub(q[k], q[k - 1])?;
        if let Some(i) = inner {
            delta = g.add(delta, i)?;
        }
        inner = Some(g.mul_scalar(delta, ladder.masks[k - 1])?);
    }
    let mut out = match inner {
        Some(i) => g.add(q[0], i)?,
        None => q[0],
    };
    if let Some(a0) = ladder.first {
        out = g.mul_scalar(out, a0)?;
    }
    Ok(out)
}

/// The effective `(d_out, d_in)` weight matrix of a bound layer.
pub fn effective_weight(g: &mut Graph, p: &Parameterization<Var>) -> Result<Var> {
    use Parameterization as P;
    match p {
        P::Dense { weight } => Ok(*weight),
        P::Pruned { weight, alpha } => g.mul_row(*weight, *alpha),
        P::Unstructured { weight, mask } => g.mul(*weight, *mask),
        P::LowRank { u, beta, v } => {
            let ub = g.mul_row(*u, *beta)?;
            g.matmul(ub, *v)
        }
        P::PrunedLowRank { u, beta, v, alpha } => {
            let ub = g.mul_row(*u, *beta)?;
            let w = g.matmul(ub, *v)?;
            g.mul_row(w, *alpha)
        }
        P::Quantized { weight, ladder } => ladder_weight(g, *weight, ladder),
        P::PrunedUnstructured { weight, mask, alpha } => {
            let wm = g.mul(*weight, *mask)?;
            g.mul_row(wm, *alpha)
        }
        P::PrunedQuantized { weight, ladder, alpha } => {
            let wq = ladder_weight(g, *weight, ladder)?;
            g.mul_row(wq, *alpha)
        }
    }
}

/// Project a mask value to `{0, 1}` at threshold 0.5.
pub fn project_bit(a: f64) -> f64 {
    if a >= 0.5 {
        1.0
    } else {
        0.0
    }
}

/// Bit-width selected by a ladder whose masks are exactly 0 or 1.
///
/// Returns 0 when the full ladder's lowest-rung mask is off.
pub fn selected_bits(bits: &[u32], first: Option<f64>, masks: &[f64]) -> u32 {
    if first == Some(0.0) {
        return 0;
    }
    let mut b = bits[0];
    for (k, &a) in masks.iter().enumerate() {
        if a == 0.0 {
            break;
        }
        b = bits[k + 1];
    }
    b
}

/// SVD warm start: `W = U · diag(β) · V` with `β` nonnegative and nonincreasing.
///
/// `W` is `(d_out, d_in)`; `U` is `(d_out, r)`, `V` is `(r, d_in)` with `r = min(d_out, d_in)`.
pub fn svd_init(w: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    if w.shape().len() != 2 {
        return Err(Error::Svd(format!("expected a matrix, got shape {:?}", w.shape())));
    }
    if !w.is_finite() {
        return Err(Error::Svd("matrix has non-finite entries".into()));
    }
    let (m, n) = (w.rows(), w.cols());
    let r = m.min(n);
    let mat = nalgebra::DMatrix::from_row_slice(m, n, w.data());
    let svd = mat
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Svd(format!("no convergence for {m}x{n} matrix")))?;
    let u = svd.u.as_ref().ok_or_else(|| Error::Svd("missing U".into()))?;
    let vt = svd.v_t.as_ref().ok_or_else(|| Error::Svd("missing Vᵀ".into()))?;
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut u_out = vec![0.0; m * r];
    let mut v_out = vec![0.0; r * n];
    let mut beta = Vec::with_capacity(r);
    for (k, &src) in order.iter().enumerate() {
        beta.push(svd.singular_values[src]);
        for i in 0..m {
            u_out[i * r + k] = u[(i, src)];
        }
        for j in 0..n {
            v_out[k * n + j] = vt[(src, j)];
        }
    }
    Ok((Tensor::matrix(m, r, u_out)?, Tensor::vector(beta), Tensor::matrix(r, n, v_out)?))
}
