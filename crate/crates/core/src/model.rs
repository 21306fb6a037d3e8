//! Feed-forward networks of compressible layers and exact extraction of
//! the compressed architecture they encode.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{
    effective_weight, project_bit, quantize_value, selected_bits, svd_init, CompressibleLayer, LayerKind,
    Parameterization, QuantLadder,
};
use crate::params::{ParamId, ParamRole, ParamStore};
use crate::tensor::Tensor;

/// Bits per weight charged to layers that are not quantized.
pub const FULL_PRECISION_BITS: u32 = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    #[default]
    None,
    Batch,
}

fn default_true() -> bool {
    true
}

fn default_eps() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub norm: NormKind,
    #[serde(default = "default_true")]
    pub bias: bool,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
}

impl Architecture {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths().iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("layer widths must be positive: {:?}", self.widths())));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config("norm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Initial value of pruning and sparsity masks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MaskInit {
    Ones,
    Uniform { lo: f64, hi: f64 },
}

impl Default for MaskInit {
    fn default() -> Self {
        MaskInit::Ones
    }
}

fn default_ladder_bits() -> Vec<u32> {
    vec![1, 2, 4, 8, 16]
}

fn default_bit_init() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    #[serde(default = "default_ladder_bits")]
    pub bits: Vec<u32>,
    /// Also learn a mask on the lowest rung (allows zero bits).
    #[serde(default)]
    pub full_ladder: bool,
    #[serde(default = "default_bit_init")]
    pub mask_init: f64,
    /// Per-rung `(r_l, r_u)`; defaults to the weight's min/max shared by all rungs.
    #[serde(default)]
    pub ranges: Option<Vec<(f64, f64)>>,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self { bits: default_ladder_bits(), full_ladder: false, mask_init: 1.0, ranges: None }
    }
}

/// How to re-parameterize a pre-trained dense model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub kinds: Vec<LayerKind>,
    #[serde(default)]
    pub mask_init: MaskInit,
    #[serde(default)]
    pub ladder: LadderConfig,
}

impl CompressionPlan {
    pub fn uniform(kind: LayerKind, layers: usize) -> Self {
        Self { kinds: vec![kind; layers], mask_init: MaskInit::Ones, ladder: LadderConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub store: ParamStore,
    pub layers: Vec<CompressibleLayer>,
    /// Normalization after each layer; the last entry is always `None`.
    pub norms: Vec<Option<NormParams>>,
    pub norm_eps: f64,
}

/// A model's parameters placed on a graph.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
    pub layers: Vec<Parameterization<Var>>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

fn mask_tensor(shape: &[usize], init: MaskInit, rng: &mut impl Rng) -> Result<Tensor> {
    match init {
        MaskInit::Ones => Ok(Tensor::ones(shape)),
        MaskInit::Uniform { lo, hi } => {
            if !(0.0 <= lo && lo < hi) {
                return Err(Error::Config(format!("mask init range [{lo}, {hi}) is invalid")));
            }
            let n: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
        }
    }
}

impl Model {
    /// Randomly initialized dense network (He-normal weights, zero biases).
    pub fn dense(arch: &Architecture, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let widths = arch.widths();
        let depth = widths.len() - 1;
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(depth);
        let mut norms = Vec::with_capacity(depth);
        for i in 0..depth {
            let (d_in, d_out) = (widths[i], widths[i + 1]);
            let gain = if i + 1 == depth { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / d_in as f64).sqrt()).expect("positive std");
            let w: Vec<f64> = (0..d_in * d_out).map(|_| normal.sample(rng)).collect();
            let weight = store.add(format!("layer{i}.weight"), ParamRole::Weight, Tensor::matrix(d_out, d_in, w)?);
            let bias = arch
                .bias
                .then(|| store.add(format!("layer{i}.bias"), ParamRole::Weight, Tensor::zeros(&[d_out])));
            layers.push(CompressibleLayer { d_in, d_out, param: Parameterization::Dense { weight }, bias });
            let norm = (i + 1 < depth && arch.norm == NormKind::Batch).then(|| NormParams {
                gamma: store.add(format!("norm{i}.gamma"), ParamRole::Weight, Tensor::ones(&[d_out])),
                beta: store.add(format!("norm{i}.beta"), ParamRole::Weight, Tensor::zeros(&[d_out])),
            });
            norms.push(norm);
        }
        Ok(Self { store, layers, norms, norm_eps: arch.norm_eps })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty model").d_out
    }

    /// Dense weight matrix of layer `i` as it would be computed right now.
    pub fn effective_weight(&self, i: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind_constant(&mut g);
        let w = effective_weight(&mut g, &bound.layers[i])?;
        Ok(g.value(w).clone())
    }

    /// Re-parameterize every layer of a pre-trained model according to `plan`.
    ///
    /// Existing effective weights become the base weights (or their SVD
    /// factors); biases and normalization parameters are copied.
    pub fn compress(&self, plan: &CompressionPlan, rng: &mut impl Rng) -> Result<Model> {
        if plan.kinds.len() != self.depth() {
            return Err(Error::Config(format!(
                "plan has {} layer kinds for a {}-layer model",
                plan.kinds.len(),
                self.depth()
            )));
        }
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(self.depth());
        let mut norms = Vec::with_capacity(self.depth());
        for (i, (layer, &kind)) in self.layers.iter().zip(&plan.kinds).enumerate() {
            let w = self.effective_weight(i)?;
            let (d_in, d_out) = (layer.d_in, layer.d_out);
            let add_alpha = |store: &mut ParamStore, rng: &mut _| -> Result<ParamId> {
                Ok(store.add(format!("layer{i}.alpha"), ParamRole::Mask, mask_tensor(&[d_in], plan.mask_init, rng)?))
            };
            let param = match kind {
                LayerKind::Dense => Parameterization::Dense { weight: store.add(format!("layer{i}.weight"), ParamRole::Weight, w) },
                LayerKind::Pruned => {
                    let weight = store.add(format!("layer{i}.weight"), ParamRole::Weight, w);
                    Parameterization::Pruned { weight, alpha: add_alpha(&mut store, rng)? }
                }
                LayerKind::Unstructured | LayerKind::PrunedUnstructured => {
                    let weight = store.add(format!("layer{i}.weight"), ParamRole::Weight, w);
                    let mask = store.add(
                        format!("layer{i}.mask"),
                        ParamRole::Mask,
                        mask_tensor(&[d_out, d_in], plan.mask_init, rng)?,
                    );
                    if kind == LayerKind::Unstructured {
                        Parameterization::Unstructured { weight, mask }
                    } else {
                        Parameterization::PrunedUnstructured { weight, mask, alpha: add_alpha(&mut store, rng)? }
                    }
                }
                LayerKind::LowRank | LayerKind::PrunedLowRank => {
                    let (u, beta, v) = svd_init(&w)?;
                    let u = store.add(format!("layer{i}.u"), ParamRole::Weight, u);
                    let beta = store.add(format!("layer{i}.beta"), ParamRole::Mask, beta);
                    let v = store.add(format!("layer{i}.v"), ParamRole::Weight, v);
                    if kind == LayerKind::LowRank {
                        Parameterization::LowRank { u, beta, v }
                    } else {
                        Parameterization::PrunedLowRank { u, beta, v, alpha: add_alpha(&mut store, rng)? }
                    }
                }
                LayerKind::Quantized | LayerKind::PrunedQuantized => {
                    let ladder = Self::new_ladder(&mut store, i, &w, &plan.ladder)?;
                    let weight = store.add(format!("layer{i}.weight"), ParamRole::Weight, w);
                    if kind == LayerKind::Quantized {
                        Parameterization::Quantized { weight, ladder }
                    } else {
                        Parameterization::PrunedQuantized { weight, ladder, alpha: add_alpha(&mut store, rng)? }
                    }
                }
            };
            let bias = layer
                .bias
                .map(|b| store.add(format!("layer{i}.bias"), ParamRole::Weight, self.store.value(b).clone()));
            layers.push(CompressibleLayer { d_in, d_out, param, bias });
            norms.push(self.norms[i].map(|n| NormParams {
                gamma: store.add(format!("norm{i}.gamma"), ParamRole::Weight, self.store.value(n.gamma).clone()),
                beta: store.add(format!("norm{i}.beta"), ParamRole::Weight, self.store.value(n.beta).clone()),
            }));
        }
        Ok(Model { store, layers, norms, norm_eps: self.norm_eps })
    }

    fn new_ladder(store: &mut ParamStore, i: usize, w: &Tensor, cfg: &LadderConfig) -> Result<QuantLadder<ParamId>> {
        if cfg.bits.is_empty() || cfg.bits.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Config(format!("ladder bits must be strictly increasing: {:?}", cfg.bits)));
        }
        if !(0.0..=1.0).contains(&cfg.mask_init) {
            return Err(Error::Config("bit mask init must lie in [0, 1]".into()));
        }
        let ranges = match &cfg.ranges {
            Some(r) if r.len() == cfg.bits.len() => r.clone(),
            Some(r) => {
                return Err(Error::Config(format!("{} ranges given for {} rungs", r.len(), cfg.bits.len())))
            }
            None => {
                let lo = w.data().iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = w.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
                vec![(lo, hi); cfg.bits.len()]
            }
        };
        if let Some((lo, hi)) = ranges.iter().find(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config(format!("quantization range [{lo}, {hi}] needs r_l < r_u")));
        }
        let first = cfg.full_ladder.then(|| {
            store.add(format!("layer{i}.bits{}", cfg.bits[0]), ParamRole::BitMask, Tensor::scalar(cfg.mask_init))
        });
        let masks = cfg.bits[1..]
            .iter()
            .map(|b| store.add(format!("layer{i}.bits{b}"), ParamRole::BitMask, Tensor::scalar(cfg.mask_init)))
            .collect();
        Ok(QuantLadder { bits: cfg.bits.clone(), first, masks, ranges })
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self.store.bind(g);
        self.bound_from(vars)
    }

    pub fn bind_constant(&self, g: &mut Graph) -> Bound {
        let vars = self.store.bind_constant(g);
        self.bound_from(vars)
    }

    fn bound_from(&self, vars: Vec<Var>) -> Bound {
        let layers = self.layers.iter().map(|l| l.param.map(|id| vars[id.0])).collect();
        Bound { vars, layers }
    }

    /// Masked forward pass producing `(batch, output_dim)` outputs.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let depth = self.depth();
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = effective_weight(g, &bound.layers[i])?;
            h = linear(g, h, w, layer.bias.map(|b| bound.var(b)))?;
            if i + 1 < depth {
                if let Some(n) = self.norms[i] {
                    h = g.batch_norm(h, bound.var(n.gamma), bound.var(n.beta), self.norm_eps)?.0;
                }
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Evaluate the masked model on a batch without recording gradients.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind_constant(&mut g);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &bound, xv)?;
        Ok(g.value(out).clone())
    }

    /// `(name, id)` of every pruning/sparsity/rank mask and bit mask.
    pub fn masks(&self) -> Vec<(String, ParamId)> {
        self.store
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p.role, ParamRole::Mask | ParamRole::BitMask))
            .map(|(i, p)| (p.name.clone(), ParamId(i)))
            .collect()
    }

    /// Input mask of layer `i + 1`, i.e. the mask on layer `i`'s outputs.
    pub fn next_mask(&self, i: usize) -> Option<ParamId> {
        self.layers.get(i + 1).and_then(|l| l.param.input_mask())
    }

    /// Snap every bit mask to `{0, 1}` at threshold 0.5.
    pub fn project_bit_masks(&mut self) {
        for p in self.store.iter_mut() {
            if p.role == ParamRole::BitMask {
                p.value = p.value.map(project_bit);
            }
        }
    }

    /// Bit-width a quantized layer currently encodes, after projecting its masks.
    pub fn layer_bits(&self, i: usize) -> Option<u32> {
        let ladder = self.layers[i].param.ladder()?;
        let first = ladder.first.map(|id| project_bit(self.store.value(id).item()));
        let masks: Vec<f64> = ladder.masks.iter().map(|&id| project_bit(self.store.value(id).item())).collect();
        Some(selected_bits(&ladder.bits, first, &masks))
    }

    /// Frobenius norm of each layer's primary weight matrix.
    pub fn weight_norms(&self) -> Vec<f64> {
        self.layers.iter().map(|l| self.store.value(l.param.primary_weight()).frobenius()).collect()
    }

    /// Materialize the compressed architecture the masks encode.
    ///
    /// Zero input-mask entries delete the corresponding feature from this
    /// layer and from the layer producing it; zero rank entries truncate
    /// the factors; bit masks are projected to `{0, 1}` and the selected
    /// grid is materialized. No thresholding is applied to anything else.
    pub fn extract(&self) -> Result<ExtractedModel> {
        let mut model = self.clone();
        model.project_bit_masks();
        let depth = model.depth();

        let mut keep_in: Vec<Vec<usize>> = Vec::with_capacity(depth);
        for (i, layer) in model.layers.iter().enumerate() {
            let keep = match layer.param.input_mask() {
                Some(id) => nonzero_indices(model.store.value(id).data()),
                None => (0..layer.d_in).collect(),
            };
            if keep.is_empty() {
                return Err(Error::DeadLayer { layer: i });
            }
            keep_in.push(keep);
        }

        let mut layers = Vec::with_capacity(depth);
        for (i, layer) in model.layers.iter().enumerate() {
            let cols = &keep_in[i];
            let rows: Vec<usize> = if model.next_mask(i).is_some() {
                keep_in[i + 1].clone()
            } else {
                (0..layer.d_out).collect()
            };
            let value = |id: ParamId| model.store.value(id);
            let mut bits = None;
            let mut input_scale = None;
            let weights = match &layer.param {
                Parameterization::Dense { .. } | Parameterization::Pruned { .. } => {
                    let w = model.effective_weight(i)?.select_rows(&rows).select_cols(cols);
                    ExtractedWeights::Dense { values: w.into_data() }
                }
                Parameterization::Quantized { weight, ladder } | Parameterization::PrunedQuantized { weight, ladder, .. } => {
                    let b = model.layer_bits(i).expect("quantized layer");
                    if b == 0 {
                        return Err(Error::DeadLayer { layer: i });
                    }
                    let rung = ladder.bits.iter().position(|&r| r == b).expect("selected rung");
                    let (lo, hi) = ladder.ranges[rung];
                    let w = value(*weight).select_rows(&rows).select_cols(cols);
                    let q = w
                        .data()
                        .iter()
                        .map(|&x| quantize_value(x, lo, hi, b))
                        .collect::<Result<Vec<_>>>()?;
                    bits = Some(b);
                    if let Some(alpha) = layer.param.input_mask() {
                        input_scale = Some(value(alpha).select(cols).into_data());
                    }
                    ExtractedWeights::Dense { values: q }
                }
                Parameterization::Unstructured { mask, .. } | Parameterization::PrunedUnstructured { mask, .. } => {
                    let w = model.effective_weight(i)?;
                    let pattern = value(*mask);
                    let (mut r_idx, mut c_idx, mut vals) = (Vec::new(), Vec::new(), Vec::new());
                    for (ri, &r) in rows.iter().enumerate() {
                        for (ci, &c) in cols.iter().enumerate() {
                            if pattern.get2(r, c) != 0.0 {
                                r_idx.push(ri);
                                c_idx.push(ci);
                                vals.push(w.get2(r, c));
                            }
                        }
                    }
                    if vals.is_empty() {
                        return Err(Error::DeadLayer { layer: i });
                    }
                    ExtractedWeights::Sparse { rows: r_idx, cols: c_idx, values: vals }
                }
                Parameterization::LowRank { u, beta, v } | Parameterization::PrunedLowRank { u, beta, v, .. } => {
                    let beta_v = value(*beta);
                    let ranks = nonzero_indices(beta_v.data());
                    if ranks.is_empty() {
                        return Err(Error::DeadLayer { layer: i });
                    }
                    let mut ub = value(*u).select_rows(&rows).select_cols(&ranks);
                    let rk = ranks.len();
                    for r in 0..ub.rows() {
                        for (k, &src) in ranks.iter().enumerate() {
                            ub.set2(r, k, ub.get2(r, k) * beta_v.data()[src]);
                        }
                    }
                    let mut vv = value(*v).select_rows(&ranks);
                    if let Some(alpha) = layer.param.input_mask() {
                        let a = value(alpha).data();
                        for k in 0..rk {
                            for j in 0..vv.cols() {
                                vv.set2(k, j, vv.get2(k, j) * a[j]);
                            }
                        }
                    }
                    let vv = vv.select_cols(cols);
                    ExtractedWeights::Factored { rank: rk, u: ub.into_data(), v: vv.into_data() }
                }
            };
            let bias = layer.bias.map(|b| value(b).select(&rows).into_data());
            let norm = model.norms[i].map(|n| ExtractedNorm {
                gamma: value(n.gamma).select(&rows).into_data(),
                beta: value(n.beta).select(&rows).into_data(),
                eps: model.norm_eps,
            });
            layers.push(ExtractedLayer {
                kind: layer.param.kind(),
                d_in: cols.len(),
                d_out: rows.len(),
                bits,
                weights,
                input_scale,
                bias,
                norm,
            });
        }

        let mut out = ExtractedModel {
            input_dim: model.input_dim(),
            input_indices: keep_in[0].clone(),
            layers,
            exact_flops: 0,
            parameter_bits: 0,
        };
        out.exact_flops = out.layers.iter().map(ExtractedLayer::flops).sum();
        out.parameter_bits = out.layers.iter().map(ExtractedLayer::parameter_bits).sum();
        Ok(out)
    }
}

pub(crate) fn nonzero_indices(v: &[f64]) -> Vec<usize> {
    v.iter().enumerate().filter(|(_, &a)| a != 0.0).map(|(i, _)| i).collect()
}

/// `x · wᵀ (+ b)`.
fn linear(g: &mut Graph, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
    let wt = g.transpose(w)?;
    let z = g.matmul(x, wt)?;
    match bias {
        Some(b) => g.add_row(z, b),
        None => Ok(z),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "kebab-case")]
pub enum ExtractedWeights {
    /// Row-major `(d_out, d_in)`.
    Dense { values: Vec<f64> },
    /// Coordinate list of the surviving entries.
    Sparse { rows: Vec<usize>, cols: Vec<usize>, values: Vec<f64> },
    /// `W = U · V` with row-major `U: (d_out, rank)` and `V: (rank, d_in)`.
    Factored { rank: usize, u: Vec<f64>, v: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractedNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractedLayer {
    pub kind: LayerKind,
    pub d_in: usize,
    pub d_out: usize,
    pub bits: Option<u32>,
    pub weights: ExtractedWeights,
    /// Per-input multiplier applied before a quantized matrix.
    pub input_scale: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
    pub norm: Option<ExtractedNorm>,
}

impl ExtractedLayer {
    /// MAC count, weighted by bit-width for quantized layers.
    pub fn flops(&self) -> u64 {
        let (i, o) = (self.d_in as u64, self.d_out as u64);
        let base = match &self.weights {
            ExtractedWeights::Dense { .. } => i * o,
            ExtractedWeights::Sparse { values, .. } => values.len() as u64,
            ExtractedWeights::Factored { rank, .. } => (i + o) * *rank as u64,
        };
        base * self.bits.map_or(1, u64::from)
    }

    pub fn parameter_count(&self) -> u64 {
        let (i, o) = (self.d_in as u64, self.d_out as u64);
        match &self.weights {
            ExtractedWeights::Dense { .. } => i * o,
            ExtractedWeights::Sparse { values, .. } => values.len() as u64,
            ExtractedWeights::Factored { rank, .. } => (i + o) * *rank as u64,
        }
    }

    /// Storage for the weight matrix (biases and norm parameters excluded).
    pub fn parameter_bits(&self) -> u64 {
        self.parameter_count() * u64::from(self.bits.unwrap_or(FULL_PRECISION_BITS))
    }

    pub fn dense_weight(&self) -> Result<Tensor> {
        let (o, i) = (self.d_out, self.d_in);
        match &self.weights {
            ExtractedWeights::Dense { values } => Tensor::matrix(o, i, values.clone()),
            ExtractedWeights::Sparse { rows, cols, values } => {
                let mut t = Tensor::zeros(&[o, i]);
                for ((&r, &c), &v) in rows.iter().zip(cols).zip(values) {
                    t.set2(r, c, v);
                }
                Ok(t)
            }
            ExtractedWeights::Factored { rank, u, v } => {
                Tensor::matrix(o, *rank, u.clone())?.matmul(&Tensor::matrix(*rank, i, v.clone())?)
            }
        }
    }
}

/// A compressed network with concrete reduced dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractedModel {
    /// Width of the raw input the model is fed.
    pub input_dim: usize,
    /// Raw input features that survived pruning.
    pub input_indices: Vec<usize>,
    pub layers: Vec<ExtractedLayer>,
    pub exact_flops: u64,
    pub parameter_bits: u64,
}

impl ExtractedModel {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.input_dim {
            return Err(Error::invalid(format!(
                "extracted model expects (batch, {}), got {:?}",
                self.input_dim,
                x.shape()
            )));
        }
        let mut g = Graph::new();
        let mut h = g.constant(x.select_cols(&self.input_indices));
        let depth = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(scale) = &layer.input_scale {
                let s = g.constant(Tensor::vector(scale.clone()));
                h = g.mul_row(h, s)?;
            }
            h = match &layer.weights {
                ExtractedWeights::Factored { rank, u, v } => {
                    let v = g.constant(Tensor::matrix(*rank, layer.d_in, v.clone())?);
                    let u = g.constant(Tensor::matrix(layer.d_out, *rank, u.clone())?);
                    let z = linear(&mut g, h, v, None)?;
                    linear(&mut g, z, u, None)?
                }
                _ => {
                    let w = g.constant(layer.dense_weight()?);
                    linear(&mut g, h, w, None)?
                }
            };
            if let Some(b) = &layer.bias {
                let b = g.constant(Tensor::vector(b.clone()));
                h = g.add_row(h, b)?;
            }
            if i + 1 < depth {
                if let Some(n) = &layer.norm {
                    let gamma = g.constant(Tensor::vector(n.gamma.clone()));
                    let beta = g.constant(Tensor::vector(n.beta.clone()));
                    h = g.batch_norm(h, gamma, beta, n.eps)?.0;
                }
                h = g.relu(h);
            }
        }
        Ok(g.value(h).clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
