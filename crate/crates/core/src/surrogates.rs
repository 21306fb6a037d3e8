//! Differentiable FLOPs surrogates and exact nonzero-based FLOP counts.
//!
//! All counts are MACs; quantized layers are weighted by their bit-width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{LayerKind, Parameterization, QuantLadder};
use crate::model::{nonzero_indices, Bound, Model};
use crate::params::ParamRole;

/// Below this Euclidean norm a mask is treated as dead.
pub const EPS_DEAD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurrogateKind {
    #[serde(rename = "l1")]
    L1,
    #[default]
    #[serde(rename = "l1l2")]
    L1L2,
}

impl std::str::FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(SurrogateKind::L1),
            "l1l2" => Ok(SurrogateKind::L1L2),
            other => Err(Error::Config(format!("unknown surrogate `{other}` (expected l1 or l1l2)"))),
        }
    }
}

/// Form of the bit-width cost term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantVariant {
    /// `Σv / ‖v‖₂ · d_in · d_out`.
    #[default]
    Ratio,
    /// `Σv · d_in · d_out`.
    Numerator,
}

/// A differentiable count together with whether its mask is dead.
#[derive(Clone, Copy, Debug)]
pub struct Count {
    pub value: Var,
    pub dead: bool,
}

/// The mask on a layer's outputs: the next layer's input mask, or all ones.
#[derive(Clone, Copy, Debug)]
pub enum NextMask {
    Mask(Var),
    Ones(usize),
}

fn check_nonnegative(g: &Graph, alpha: Var, name: &str) -> Result<()> {
    match g.value(alpha).data().iter().position(|&a| a < 0.0 || a.is_nan()) {
        Some(index) => Err(Error::NegativeMask {
            name: name.to_string(),
            index,
            value: g.value(alpha).data()[index],
        }),
        None => Ok(()),
    }
}

/// `√d · Σα / ‖α‖₂`, a scale-invariant proxy for `‖α‖₀`.
///
/// A mask whose norm is below [`EPS_DEAD`] yields a constant zero.
pub fn l1l2_count(g: &mut Graph, alpha: Var) -> Result<Count> {
    check_nonnegative(g, alpha, "mask")?;
    let d = g.value(alpha).len() as f64;
    if g.value(alpha).frobenius() < EPS_DEAD {
        return Ok(Count { value: g.scalar(0.0), dead: true });
    }
    let s = g.sum(alpha);
    let n = g.l2_norm(alpha);
    let r = g.div(s, n)?;
    Ok(Count { value: g.scale(r, d.sqrt()), dead: false })
}

/// `‖α‖₁` of a nonnegative mask.
pub fn l1_count(g: &mut Graph, alpha: Var) -> Result<Count> {
    check_nonnegative(g, alpha, "mask")?;
    let dead = g.value(alpha).frobenius() < EPS_DEAD;
    Ok(Count { value: g.sum(alpha), dead })
}

pub(crate) fn count(g: &mut Graph, kind: SurrogateKind, mask: NextMask) -> Result<Count> {
    match (mask, kind) {
        (NextMask::Ones(d), _) => Ok(Count { value: g.scalar(d as f64), dead: false }),
        (NextMask::Mask(a), SurrogateKind::L1L2) => l1l2_count(g, a),
        (NextMask::Mask(a), SurrogateKind::L1) => l1_count(g, a),
    }
}

/// `‖α_i‖₁ · ‖α_{i+1}‖₁`.
pub fn l1_surrogate(g: &mut Graph, alpha: Var, next: NextMask) -> Result<Var> {
    let a = l1_count(g, alpha)?.value;
    let b = count(g, SurrogateKind::L1, next)?.value;
    g.mul(a, b)
}

/// Weighted indicator vector `v_k = b_k · a_0 ⋯ a_k · (1 − a_{k+1})` of a bit ladder.
///
/// `a_0` is 1 unless the full ladder is enabled; the mask above the top rung is 0.
pub fn quant_vector(g: &mut Graph, ladder: &QuantLadder<Var>) -> Result<Var> {
    let m = ladder.bits.len();
    if m == 0 || ladder.masks.len() + 1 != m {
        return Err(Error::invalid(format!(
            "ladder with {m} rungs needs {} masks, got {}",
            m.saturating_sub(1),
            ladder.masks.len()
        )));
    }
    for &a in &ladder.mask_ids() {
        let v = g.value(a);
        if !v.is_scalar() {
            return Err(Error::invalid(format!("bit mask must be a scalar, got shape {:?}", v.shape())));
        }
        let x = v.item();
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::invalid(format!("bit mask {x} lies outside [0, 1]")));
        }
    }
    let mut prod = match ladder.first {
        Some(a0) => a0,
        None => g.scalar(1.0),
    };
    let mut parts = Vec::with_capacity(m);
    for k in 0..m {
        let term = match ladder.masks.get(k) {
            Some(&next) => {
                let off = g.affine(next, -1.0, 1.0);
                let t = g.mul(prod, off)?;
                prod = g.mul(prod, next)?;
                t
            }
            None => prod,
        };
        parts.push(g.scale(term, f64::from(ladder.bits[k])));
    }
    g.stack(&parts)
}

/// Bit-cost factor of a ladder: the verbatim ratio or its numerator.
pub fn quant_factor(g: &mut Graph, ladder: &QuantLadder<Var>, variant: QuantVariant) -> Result<Count> {
    let v = quant_vector(g, ladder)?;
    match variant {
        QuantVariant::Numerator => {
            let dead = g.value(v).frobenius() < EPS_DEAD;
            Ok(Count { value: g.sum(v), dead })
        }
        QuantVariant::Ratio => {
            if g.value(v).frobenius() < EPS_DEAD {
                return Ok(Count { value: g.scalar(0.0), dead: true });
            }
            let s = g.sum(v);
            let n = g.l2_norm(v);
            Ok(Count { value: g.div(s, n)?, dead: false })
        }
    }
}

/// Surrogate cost of one layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerCost {
    pub value: Var,
    /// The layer's own mask is dead.
    pub dead: bool,
}

/// FLOPs surrogate of a bound layer of shape `(d_out, d_in)`.
///
/// The `l1` kind is only defined for dense and pruned layers.
pub fn flops_surrogate(
    g: &mut Graph,
    layer: &Parameterization<Var>,
    d_in: usize,
    d_out: usize,
    next: NextMask,
    kind: SurrogateKind,
    variant: QuantVariant,
) -> Result<LayerCost> {
    use Parameterization as P;
    if let NextMask::Mask(a) = next {
        if g.value(a).len() != d_out {
            return Err(Error::invalid(format!(
                "next mask has length {} but the layer has {d_out} outputs",
                g.value(a).len()
            )));
        }
    }
    if let Some(a) = layer.input_mask() {
        if g.value(a).len() != d_in {
            return Err(Error::invalid(format!(
                "input mask has length {} but the layer has {d_in} inputs",
                g.value(a).len()
            )));
        }
    }
    if kind == SurrogateKind::L1 && !matches!(layer.kind(), LayerKind::Dense | LayerKind::Pruned) {
        return Err(Error::Config(format!("the l1 surrogate is only defined for pruning, not {:?}", layer.kind())));
    }
    let (di, dout) = (d_in as f64, d_out as f64);
    Ok(match layer {
        P::Dense { .. } => {
            let n = count(g, kind, next)?;
            LayerCost { value: g.scale(n.value, di), dead: false }
        }
        P::Pruned { alpha, .. } => {
            let a = count(g, kind, NextMask::Mask(*alpha))?;
            let n = count(g, kind, next)?;
            LayerCost { value: g.mul(a.value, n.value)?, dead: a.dead }
        }
        P::Unstructured { mask, .. } => {
            let c = l1l2_count(g, *mask)?;
            LayerCost { value: c.value, dead: c.dead }
        }
        P::PrunedUnstructured { mask, alpha, .. } => {
            check_nonnegative(g, *alpha, "alpha")?;
            let m = g.mul_row(*mask, *alpha)?;
            let c = l1l2_count(g, m)?;
            LayerCost { value: c.value, dead: c.dead }
        }
        P::LowRank { beta, .. } => {
            let c = l1l2_count(g, *beta)?;
            LayerCost { value: g.scale(c.value, di + dout), dead: c.dead }
        }
        P::PrunedLowRank { beta, alpha, .. } => {
            let a = l1l2_count(g, *alpha)?;
            let n = count(g, kind, next)?;
            let width = g.add(a.value, n.value)?;
            let c = l1l2_count(g, *beta)?;
            LayerCost { value: g.mul(width, c.value)?, dead: a.dead || c.dead }
        }
        P::Quantized { ladder, .. } => {
            let q = quant_factor(g, ladder, variant)?;
            LayerCost { value: g.scale(q.value, di * dout), dead: q.dead }
        }
        P::PrunedQuantized { ladder, alpha, .. } => {
            let q = quant_factor(g, ladder, variant)?;
            let a = l1l2_count(g, *alpha)?;
            let n = count(g, kind, next)?;
            let an = g.mul(a.value, n.value)?;
            LayerCost { value: g.mul(q.value, an)?, dead: q.dead || a.dead }
        }
    })
}

/// Output mask of layer `i` of a bound model.
pub fn next_mask(model: &Model, bound: &Bound, i: usize) -> NextMask {
    match model.next_mask(i) {
        Some(id) => NextMask::Mask(bound.var(id)),
        None => NextMask::Ones(model.layers[i].d_out),
    }
}

/// Reject any negative mask value, naming the offending parameter.
pub fn check_masks(model: &Model) -> Result<()> {
    for p in model.store.iter() {
        if matches!(p.role, ParamRole::Mask | ParamRole::BitMask) {
            if let Some(index) = p.value.data().iter().position(|&a| a < 0.0 || a.is_nan()) {
                return Err(Error::NegativeMask { name: p.name.clone(), index, value: p.value.data()[index] });
            }
        }
    }
    Ok(())
}

/// Model-level surrogate and the indices of layers whose masks are dead.
#[derive(Clone, Debug)]
pub struct Regularizer {
    pub value: Var,
    pub dead_layers: Vec<usize>,
}

/// Sum of per-layer FLOPs surrogates.
pub fn flops_regularizer(
    g: &mut Graph,
    model: &Model,
    bound: &Bound,
    kind: SurrogateKind,
    variant: QuantVariant,
) -> Result<Regularizer> {
    check_masks(model)?;
    let mut terms = Vec::with_capacity(model.depth());
    let mut dead_layers = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        let next = next_mask(model, bound, i);
        let cost = flops_surrogate(g, &bound.layers[i], layer.d_in, layer.d_out, next, kind, variant)?;
        if cost.dead {
            dead_layers.push(i);
        }
        terms.push(cost.value);
    }
    let stacked = g.stack(&terms)?;
    Ok(Regularizer { value: g.sum(stacked), dead_layers })
}

/// Per-layer exact MAC counts from strict nonzeros, bit masks projected to `{0, 1}`.
///
/// A layer's output width is the nonzero count of the next layer's input
/// mask; unstructured entries are counted only on surviving output rows.
pub fn exact_flops_per_layer(model: &Model) -> Vec<u64> {
    let value = |id| model.store.value(id);
    model
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let rows: Vec<usize> = match model.next_mask(i) {
                Some(id) => nonzero_indices(value(id).data()),
                None => (0..layer.d_out).collect(),
            };
            let next = rows.len() as u64;
            let width = match layer.param.input_mask() {
                Some(id) => value(id).count_nonzero() as u64,
                None => layer.d_in as u64,
            };
            let bits = model.layer_bits(i).map_or(1, u64::from);
            match &layer.param {
                Parameterization::Dense { .. } | Parameterization::Pruned { .. } => width * next,
                Parameterization::Quantized { .. } | Parameterization::PrunedQuantized { .. } => bits * width * next,
                Parameterization::LowRank { beta, .. } | Parameterization::PrunedLowRank { beta, .. } => {
                    (width + next) * value(*beta).count_nonzero() as u64
                }
                Parameterization::Unstructured { mask, .. } | Parameterization::PrunedUnstructured { mask, .. } => {
                    let m = value(*mask);
                    let alpha = layer.param.input_mask().map(|id| value(id));
                    rows.iter()
                        .map(|&r| {
                            (0..layer.d_in)
                                .filter(|&c| m.get2(r, c) != 0.0 && alpha.is_none_or(|a| a.data()[c] != 0.0))
                                .count() as u64
                        })
                        .sum()
                }
            }
        })
        .collect()
}

pub fn exact_flops(model: &Model) -> u64 {
    exact_flops_per_layer(model).iter().sum()
}
