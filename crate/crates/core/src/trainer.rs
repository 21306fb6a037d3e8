//! The regularized training loop: task loss plus λ-weighted cost surrogate,
//! projected optimizer steps, linear λ annealing and a λ = 0 fine-tune phase.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Target};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::latency::{latency_reg, LatencyTable};
use crate::model::{Bound, Model};
use crate::optim::{step_projected, OptimizerKind, OptimizerState};
use crate::params::ParamRole;
use crate::surrogates::{exact_flops, flops_regularizer, QuantVariant, Regularizer, SurrogateKind};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Cosine decay to zero over all steps of both phases.
    Cosine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostModel {
    #[default]
    Flops,
    Latency,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizerSpec {
    pub surrogate: SurrogateKind,
    pub cost: CostModel,
    pub quant_variant: QuantVariant,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistillPhases {
    #[default]
    Both,
    Prune,
    Finetune,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub enabled: bool,
    pub coefficient: f64,
    pub temperature: f64,
    pub phases: DistillPhases,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { enabled: false, coefficient: 1.0, temperature: 1.0, phases: DistillPhases::Both }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeadLayerPolicy {
    /// Freeze the dead layer's surrogate at zero and keep training.
    #[default]
    Continue,
    Abort,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Learning rate for masks; defaults to `lr`.
    pub mask_lr: Option<f64>,
    pub schedule: Schedule,
    pub lambda_max: f64,
    pub anneal_steps: usize,
    pub steps: usize,
    pub finetune_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub distill: DistillConfig,
    pub dead_layer: DeadLayerPolicy,
    pub regularizer: RegularizerSpec,
    /// Record a history row every this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::adam(),
            lr: 1e-3,
            mask_lr: None,
            schedule: Schedule::Constant,
            lambda_max: 0.0,
            anneal_steps: 0,
            steps: 100,
            finetune_steps: 0,
            batch_size: 64,
            seed: 0,
            distill: DistillConfig::default(),
            dead_layer: DeadLayerPolicy::Continue,
            regularizer: RegularizerSpec::default(),
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.steps < 1 {
            return bad("steps must be at least 1");
        }
        if !(self.lambda_max >= 0.0) || !self.lambda_max.is_finite() {
            return bad("lambda_max must be finite and nonnegative");
        }
        if !(self.lr > 0.0) || self.mask_lr.is_some_and(|m| !(m > 0.0)) {
            return bad("learning rates must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.distill.temperature > 0.0) || self.distill.coefficient < 0.0 {
            return bad("distillation needs temperature > 0 and coefficient >= 0");
        }
        if self.log_every < 1 {
            return bad("log_every must be at least 1");
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.steps + self.finetune_steps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Prune,
    Finetune,
    Final,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Prune => "prune",
            Phase::Finetune => "finetune",
            Phase::Final => "final",
        })
    }
}

/// `λ_max · min(1, step / anneal_steps)`, and zero while fine-tuning.
pub fn anneal_lambda(step: usize, cfg: &TrainConfig, phase: Phase) -> f64 {
    if phase == Phase::Finetune {
        return 0.0;
    }
    if cfg.anneal_steps == 0 {
        return cfg.lambda_max;
    }
    cfg.lambda_max * (step as f64 / cfg.anneal_steps as f64).min(1.0)
}

pub fn learning_rate(step: usize, cfg: &TrainConfig, base: f64) -> f64 {
    match cfg.schedule {
        Schedule::Constant => base,
        Schedule::Cosine => {
            let t = step as f64 / cfg.total_steps() as f64;
            0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

fn log_softmax_rows(z: &Tensor) -> Tensor {
    let (r, c) = (z.rows(), z.cols());
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = z.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    Tensor::matrix(r, c, out).expect("same shape")
}

/// `coef · T² · KL(softmax(t/T) ‖ softmax(s/T))`, averaged over the batch.
/// The teacher logits are constants.
pub fn distill_loss(g: &mut Graph, teacher: &Tensor, student: Var, temperature: f64, coefficient: f64) -> Result<Var> {
    if teacher.shape() != g.value(student).shape() || teacher.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "distill_loss",
            left: teacher.shape().to_vec(),
            right: g.value(student).shape().to_vec(),
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("distillation temperature must be positive"));
    }
    let log_p = log_softmax_rows(&teacher.map(|v| v / temperature));
    let p = log_p.map(f64::exp);
    let entropy_term: f64 = p.data().iter().zip(log_p.data()).map(|(a, b)| a * b).sum();
    let pv = g.constant(p);
    let s = g.scale(student, 1.0 / temperature);
    let log_q = g.log_softmax(s)?;
    let cross = g.mul(pv, log_q)?;
    let cross = g.sum(cross);
    let kl = g.affine(cross, -1.0, entropy_term);
    let batch = teacher.rows() as f64;
    Ok(g.scale(kl, coefficient * temperature * temperature / batch))
}

/// Mean squared error between `(batch, 1)` predictions and targets.
pub fn mse_loss(g: &mut Graph, pred: Var, target: &[f64]) -> Result<Var> {
    let y = g.constant(Tensor::matrix(target.len(), 1, target.to_vec())?);
    let d = g.sub(pred, y)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / target.len() as f64))
}

pub fn task_loss(g: &mut Graph, out: Var, target: &Target) -> Result<Var> {
    match target {
        Target::Classes { labels, .. } => g.softmax_cross_entropy(out, labels),
        Target::Values(v) => mse_loss(g, out, v),
    }
}

/// Cost surrogate of a bound model.
pub fn regularizer(
    g: &mut Graph,
    model: &Model,
    bound: &Bound,
    spec: &RegularizerSpec,
    table: Option<&LatencyTable>,
) -> Result<Regularizer> {
    match spec.cost {
        CostModel::Flops => flops_regularizer(g, model, bound, spec.surrogate, spec.quant_variant),
        CostModel::Latency => {
            let table = table.ok_or_else(|| Error::Config("latency cost needs a latency table".into()))?;
            latency_reg(g, model, bound, table, spec.surrogate)
        }
    }
}

pub struct Objective {
    pub loss: Var,
    pub task: Var,
    pub surrogate: Regularizer,
}

/// `task + distill + λ·R`. The surrogate is always evaluated but only
/// joins the loss when `λ > 0`.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    g: &mut Graph,
    model: &Model,
    bound: &Bound,
    x: &Tensor,
    target: &Target,
    lambda: f64,
    cfg: &TrainConfig,
    teacher_logits: Option<&Tensor>,
    table: Option<&LatencyTable>,
) -> Result<Objective> {
    let xv = g.constant(x.clone());
    let out = model.forward(g, bound, xv)?;
    let task = task_loss(g, out, target)?;
    let mut loss = task;
    if let Some(t) = teacher_logits {
        let d = distill_loss(g, t, out, cfg.distill.temperature, cfg.distill.coefficient)?;
        loss = g.add(loss, d)?;
    }
    let surrogate = regularizer(g, model, bound, &cfg.regularizer, table)?;
    if lambda > 0.0 {
        let r = g.scale(surrogate.value, lambda);
        loss = g.add(loss, r)?;
    }
    Ok(Objective { loss, task, surrogate })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub phase: Phase,
    pub lambda: f64,
    pub lr: f64,
    pub loss: f64,
    pub task_loss: f64,
    pub surrogate: f64,
    pub exact_flops: u64,
    /// Smallest entry over all masks.
    pub mask_min: f64,
    /// `(mean |α|, variance of |α|)` per mask, in [`History::masks`] order.
    pub mask_stats: Vec<(f64, f64)>,
    pub weight_norms: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub masks: Vec<String>,
    pub layers: usize,
    pub rows: Vec<MetricsRow>,
}

impl History {
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["step", "phase", "lambda", "lr", "loss", "task_loss", "surrogate", "exact_flops", "mask_min"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for m in &self.masks {
            h.push(format!("{m}.mean"));
            h.push(format!("{m}.var"));
        }
        h.extend((0..self.layers).map(|i| format!("layer{i}.weight_fro")));
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for r in &self.rows {
            let mut cells = vec![
                r.step.to_string(),
                r.phase.to_string(),
                r.lambda.to_string(),
                r.lr.to_string(),
                r.loss.to_string(),
                r.task_loss.to_string(),
                r.surrogate.to_string(),
                r.exact_flops.to_string(),
                r.mask_min.to_string(),
            ];
            for (m, v) in &r.mask_stats {
                cells.push(m.to_string());
                cells.push(v.to_string());
            }
            cells.extend(r.weight_norms.iter().map(f64::to_string));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Mean and variance of `|α|`.
pub fn mask_stats(values: &[f64]) -> (f64, f64) {
    let d = values.len() as f64;
    let mean = values.iter().map(|a| a.abs()).sum::<f64>() / d;
    let var = values.iter().map(|a| (a.abs() - mean).powi(2)).sum::<f64>() / d;
    (mean, var)
}

fn mask_min(model: &Model) -> f64 {
    model
        .store
        .iter()
        .filter(|p| matches!(p.role, ParamRole::Mask | ParamRole::BitMask))
        .flat_map(|p| p.value.data().iter().copied())
        .fold(f64::INFINITY, f64::min)
}

/// Training failure with the last finite model and the history so far.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: Error,
    pub step: usize,
    pub last_good: Box<Model>,
    pub history: History,
}

impl fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training aborted at step {}: {}", self.step, self.error)
    }
}

impl std::error::Error for TrainAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

struct Sampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, cursor: 0, rng }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let n = self.order.len();
        if size >= n {
            return (0..n).collect();
        }
        if self.cursor + size > n {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let b = self.order[self.cursor..self.cursor + size].to_vec();
        self.cursor += size;
        b
    }
}

/// A training run in progress.
pub struct Session<'a> {
    pub model: Model,
    pub opt: OptimizerState,
    pub step: usize,
    pub history: History,
    cfg: &'a TrainConfig,
    data: &'a Dataset,
    teacher: Option<&'a Model>,
    table: Option<&'a LatencyTable>,
    sampler: Sampler,
}

impl<'a> Session<'a> {
    pub fn new(
        model: Model,
        data: &'a Dataset,
        cfg: &'a TrainConfig,
        teacher: Option<&'a Model>,
        table: Option<&'a LatencyTable>,
    ) -> Result<Self> {
        cfg.validate()?;
        if data.features() != model.input_dim() {
            return Err(Error::Config(format!(
                "data has {} features but the model expects {}",
                data.features(),
                model.input_dim()
            )));
        }
        if cfg.distill.enabled && teacher.is_none() {
            return Err(Error::Config("distillation is enabled but no teacher model was given".into()));
        }
        let history = History {
            masks: model.masks().into_iter().map(|(n, _)| n).collect(),
            layers: model.depth(),
            rows: Vec::new(),
        };
        Ok(Self {
            opt: OptimizerState::new(cfg.optimizer, &model.store),
            model,
            step: 0,
            history,
            cfg,
            data,
            teacher,
            table,
            sampler: Sampler::new(data.len(), cfg.seed),
        })
    }

    pub fn phase(&self) -> Phase {
        if self.step < self.cfg.steps {
            Phase::Prune
        } else {
            Phase::Finetune
        }
    }

    fn distill_active(&self, phase: Phase) -> bool {
        self.cfg.distill.enabled
            && match self.cfg.distill.phases {
                DistillPhases::Both => true,
                DistillPhases::Prune => phase == Phase::Prune,
                DistillPhases::Finetune => phase == Phase::Finetune,
            }
    }

    /// Fix the architecture: snap bit masks to `{0, 1}` and freeze them,
    /// and freeze every zero mask entry.
    fn enter_finetune(&mut self) {
        self.model.project_bit_masks();
        for p in self.model.store.iter_mut() {
            if p.role == ParamRole::BitMask {
                p.role = ParamRole::Frozen;
            }
        }
        self.opt.lock_zero_masks(&self.model.store);
    }

    fn evaluate_row(&self, phase: Phase, lambda: f64, lr: f64, batch: &[usize]) -> Result<(MetricsRow, Graph, Objective, Bound)> {
        let sub = self.data.subset(batch);
        let teacher_logits = match self.teacher {
            Some(t) if self.distill_active(phase) => Some(t.predict(&sub.x)?),
            _ => None,
        };
        let mut g = Graph::new();
        let bound = self.model.bind(&mut g);
        let obj = objective(&mut g, &self.model, &bound, &sub.x, &sub.target, lambda, self.cfg, teacher_logits.as_ref(), self.table)?;
        let masks = self.model.masks();
        let row = MetricsRow {
            step: self.step,
            phase,
            lambda,
            lr,
            loss: g.item(obj.loss),
            task_loss: g.item(obj.task),
            surrogate: g.item(obj.surrogate.value),
            exact_flops: exact_flops(&self.model),
            mask_min: mask_min(&self.model),
            mask_stats: masks.iter().map(|(_, id)| mask_stats(self.model.store.value(*id).data())).collect(),
            weight_norms: self.model.weight_norms(),
        };
        Ok((row, g, obj, bound))
    }

    /// One projected optimizer step on the next batch.
    pub fn step(&mut self) -> Result<()> {
        if self.step == self.cfg.steps {
            self.enter_finetune();
        }
        let phase = self.phase();
        let lambda = anneal_lambda(self.step, self.cfg, phase);
        let lr = learning_rate(self.step, self.cfg, self.cfg.lr);
        let mask_lr = learning_rate(self.step, self.cfg, self.cfg.mask_lr.unwrap_or(self.cfg.lr));
        let batch = self.sampler.next(self.cfg.batch_size);
        let (row, g, obj, bound) = self.evaluate_row(phase, lambda, lr, &batch)?;
        if !row.loss.is_finite() {
            return Err(Error::Diverged { step: self.step });
        }
        if self.cfg.dead_layer == DeadLayerPolicy::Abort {
            if let Some(&layer) = obj.surrogate.dead_layers.first() {
                return Err(Error::DeadLayer { layer });
            }
        }
        let grads = g.backward(obj.loss)?;
        let grads: Vec<Tensor> = bound.vars.iter().map(|&v| grads.wrt(v).clone()).collect();
        step_projected(&mut self.model.store, &grads, &mut self.opt, |role| match role {
            ParamRole::Mask | ParamRole::BitMask => mask_lr,
            _ => lr,
        })?;
        if self.step % self.cfg.log_every == 0 {
            self.history.rows.push(row);
        }
        self.step += 1;
        Ok(())
    }

    /// Record the state after the last step, evaluated on one more batch.
    pub fn record_final(&mut self) -> Result<()> {
        let last = self.step.saturating_sub(1);
        let phase = if last < self.cfg.steps { Phase::Prune } else { Phase::Finetune };
        let lambda = anneal_lambda(last, self.cfg, phase);
        let lr = learning_rate(self.step, self.cfg, self.cfg.lr);
        let batch = self.sampler.next(self.cfg.batch_size);
        let (mut row, ..) = self.evaluate_row(phase, lambda, lr, &batch)?;
        row.phase = Phase::Final;
        self.history.rows.push(row);
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: History,
}

/// Run the annealed compression phase followed by the fine-tune phase.
pub fn train(
    model: Model,
    data: &Dataset,
    cfg: &TrainConfig,
    teacher: Option<&Model>,
    table: Option<&LatencyTable>,
) -> std::result::Result<TrainOutcome, TrainAbort> {
    let abort = |error, step, model: &Model, history: &History| TrainAbort {
        error,
        step,
        last_good: Box::new(model.clone()),
        history: history.clone(),
    };
    let mut s = match Session::new(model.clone(), data, cfg, teacher, table) {
        Ok(s) => s,
        Err(e) => return Err(abort(e, 0, &model, &History::default())),
    };
    while s.step < cfg.total_steps() {
        let before = s.model.clone();
        if let Err(e) = s.step() {
            return Err(abort(e, s.step, &before, &s.history));
        }
        if s.model.store.iter().any(|p| !p.value.is_finite()) {
            let e = Error::Diverged { step: s.step - 1 };
            return Err(abort(e, s.step - 1, &before, &s.history));
        }
    }
    if let Err(e) = s.record_final() {
        return Err(abort(e, s.step, &s.model, &s.history));
    }
    Ok(TrainOutcome { model: s.model, history: s.history })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Loss and, for classification, accuracy of precomputed outputs.
pub fn score_outputs(out: &Tensor, target: &Target) -> Result<Evaluation> {
    let mut g = Graph::new();
    let o = g.constant(out.clone());
    let loss = task_loss(&mut g, o, target)?;
    let accuracy = match target {
        Target::Classes { labels, .. } => {
            let hits = labels
                .iter()
                .enumerate()
                .filter(|(i, &l)| {
                    let row = out.row(*i);
                    (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b }) == l
                })
                .count();
            Some(hits as f64 / labels.len() as f64)
        }
        Target::Values(_) => None,
    };
    Ok(Evaluation { loss: g.item(loss), accuracy })
}

/// Full-batch evaluation of the masked model.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<Evaluation> {
    score_outputs(&model.predict(&data.x)?, &data.target)
}
