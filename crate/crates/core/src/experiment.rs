//! Experiment recipes driven by a JSON spec. Each writes CSV tables and a
//! `report.json` summary into an output directory.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{gen_clusters, gen_sparse_regression, load_idx, Dataset};
use crate::error::{Error, Result};
use crate::latency::{profile_table, LatencyTable, ProfileConfig};
use crate::layers::LayerKind;
use crate::model::{Architecture, CompressionPlan, ExtractedModel, LadderConfig, MaskInit, Model};
use crate::stats::spearman;
use crate::surrogates::{exact_flops, SurrogateKind};
use crate::trainer::{evaluate, score_outputs, train, CostModel, Evaluation, History, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    #[serde(rename = "ablation-l1-vs-l1l2")]
    Ablation,
    QuantBitwidth,
    LatencyVsFlops,
    LambdaSweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    /// IDX image/label pair; `fallback` is used when the files are absent.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        fallback: Option<Box<DatasetSpec>>,
    },
    Clusters {
        n: usize,
        informative: usize,
        noise_features: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    SparseRegression {
        n: usize,
        d: usize,
        k: usize,
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Idx { images, labels, limit, fallback } => {
                if !(images.exists() && labels.exists()) {
                    if let Some(f) = fallback {
                        return f.load();
                    }
                }
                let ds = load_idx(images, labels)?;
                Ok(match limit {
                    Some(n) if *n < ds.len() => ds.subset(&(0..*n).collect::<Vec<_>>()),
                    _ => ds,
                })
            }
            DatasetSpec::Clusters { n, informative, noise_features, separation, seed } => {
                gen_clusters(*n, *informative, *noise_features, *separation, *seed)
            }
            DatasetSpec::SparseRegression { n, d, k, noise, seed } => gen_sparse_regression(*n, *d, *k, *noise, *seed),
        }
    }
}

fn default_test_fraction() -> f64 {
    0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment: ExperimentId,
    pub dataset: DatasetSpec,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    pub architecture: Architecture,
    /// Per-layer parameterization; defaults depend on the experiment.
    #[serde(default)]
    pub kinds: Option<Vec<LayerKind>>,
    #[serde(default)]
    pub mask_init: MaskInit,
    #[serde(default)]
    pub ladder: LadderConfig,
    /// Dense warm-start training; skipped when absent.
    #[serde(default)]
    pub pretrain: Option<TrainConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    /// λ values for the latency-cost sweep.
    #[serde(default)]
    pub latency_lambdas: Vec<f64>,
    /// Fixed bit-widths of the uniform quantization baselines.
    #[serde(default)]
    pub fixed_bits: Vec<u32>,
    #[serde(default)]
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub profile: Option<ProfileConfig>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if let Some(k) = &self.kinds {
            if k.len() != self.architecture.hidden.len() + 1 {
                return Err(Error::Config(format!(
                    "{} kinds given for {} layers",
                    k.len(),
                    self.architecture.hidden.len() + 1
                )));
            }
        }
        if let DatasetSpec::Idx { images, labels, fallback: None, .. } = &self.dataset {
            for p in [images, labels] {
                if !p.exists() {
                    return Err(Error::Config(format!("dataset file {} does not exist", p.display())));
                }
            }
        }
        if let Some(t) = &self.table {
            if !t.exists() {
                return Err(Error::Config(format!("latency table {} does not exist", t.display())));
            }
        }
        self.train.validate()?;
        if let Some(p) = &self.pretrain {
            p.validate()?;
        }
        let needs_lambdas = matches!(self.experiment, ExperimentId::QuantBitwidth | ExperimentId::LambdaSweep | ExperimentId::LatencyVsFlops);
        if needs_lambdas && self.lambdas.is_empty() {
            return Err(Error::Config("this experiment needs a non-empty `lambdas` list".into()));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.architecture.hidden.len() + 1
    }

    pub fn plan(&self, default: LayerKind) -> CompressionPlan {
        CompressionPlan {
            kinds: self.kinds.clone().unwrap_or_else(|| vec![default; self.depth()]),
            mask_init: self.mask_init,
            ladder: self.ladder.clone(),
        }
    }
}

/// Data split and the dense warm-start model shared by every run.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub dense: Model,
    pub dataset_name: String,
}

pub fn prepare(spec: &ExperimentSpec) -> Result<Prepared> {
    let data = spec.dataset.load()?;
    if data.features() != spec.architecture.input_dim {
        return Err(Error::Config(format!(
            "dataset has {} features but input_dim is {}",
            data.features(),
            spec.architecture.input_dim
        )));
    }
    let (test, train_set) = data.split(spec.test_fraction, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut dense = Model::dense(&spec.architecture, &mut rng)?;
    if let Some(cfg) = &spec.pretrain {
        let mut cfg = cfg.clone();
        cfg.lambda_max = 0.0;
        cfg.regularizer.surrogate = SurrogateKind::L1L2;
        cfg.regularizer.cost = CostModel::Flops;
        cfg.distill.enabled = false;
        dense = train(dense, &train_set, &cfg, None, None).map_err(|a| a.error)?.model;
    }
    Ok(Prepared { dataset_name: data.name.clone(), train: train_set, test, dense })
}

/// Outcome of one compression run.
#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub lambda: f64,
    pub exact_flops: u64,
    pub parameter_bits: Option<u64>,
    pub layer_bits: Vec<Option<u32>>,
    pub test: Evaluation,
    pub extracted_test: Option<Evaluation>,
    /// Set when extraction found a dead layer.
    pub degenerate: Option<String>,
    #[serde(skip)]
    pub model: Model,
    #[serde(skip)]
    pub extracted: Option<ExtractedModel>,
    #[serde(skip)]
    pub history: History,
}

fn write(out_dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let p = out_dir.join(name);
    std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))
}

fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        debug_assert_eq!(r.len(), header.len());
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn opt(v: Option<impl ToString>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Compress `dense` per `plan`, train it and extract the result.
///
/// A training abort saves the partial history as `<tag>.partial.csv` and
/// propagates the error.
#[allow(clippy::too_many_arguments)]
pub fn run_point(
    prepared: &Prepared,
    plan: &CompressionPlan,
    cfg: &TrainConfig,
    init_seed: u64,
    table: Option<&LatencyTable>,
    out_dir: &Path,
    tag: &str,
) -> Result<RunResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let student = prepared.dense.compress(plan, &mut rng)?;
    let teacher = cfg.distill.enabled.then_some(&prepared.dense);
    let outcome = match train(student, &prepared.train, cfg, teacher, table) {
        Ok(o) => o,
        Err(abort) => {
            write(out_dir, &format!("{tag}.partial.csv"), &abort.history.to_csv())?;
            return Err(abort.error);
        }
    };
    let model = outcome.model;
    let test = evaluate(&model, &prepared.test)?;
    let layer_bits = (0..model.depth()).map(|i| model.layer_bits(i)).collect();
    let (extracted, degenerate) = match model.extract() {
        Ok(e) => (Some(e), None),
        Err(e @ Error::DeadLayer { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let extracted_test = match &extracted {
        Some(e) => Some(evaluate_extracted(e, &prepared.test)?),
        None => None,
    };
    Ok(RunResult {
        lambda: cfg.lambda_max,
        exact_flops: exact_flops(&model),
        parameter_bits: extracted.as_ref().map(|e| e.parameter_bits),
        layer_bits,
        test,
        extracted_test,
        degenerate,
        model,
        extracted,
        history: outcome.history,
    })
}

pub fn evaluate_extracted(model: &ExtractedModel, data: &Dataset) -> Result<Evaluation> {
    score_outputs(&model.forward(&data.x)?, &data.target)
}

/// Summary of one arm of the surrogate ablation.
#[derive(Clone, Debug, Serialize)]
pub struct AblationArm {
    pub surrogate: SurrogateKind,
    pub d: usize,
    pub mask_mean_start: f64,
    pub mask_mean_end: f64,
    pub mask_var_start: f64,
    pub mask_var_end: f64,
    pub nonzero_end: usize,
    pub zero_fraction: f64,
    /// Entries in `(0, 1e-6)`.
    pub near_zero: usize,
    pub weight_fro_start: f64,
    pub weight_fro_end: f64,
    /// Rank correlation between the run's surrogate and exact FLOPs over checkpoints.
    pub spearman: Option<f64>,
    pub min_mask_seen: f64,
    pub test_accuracy: Option<f64>,
    #[serde(skip)]
    pub history: History,
    #[serde(skip)]
    pub final_mask: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub dataset: String,
    pub initial_checksum: [u64; 2],
    pub l1: AblationArm,
    pub l1l2: AblationArm,
}

fn ablation_arm(prepared: &Prepared, spec: &ExperimentSpec, kind: SurrogateKind, out_dir: &Path) -> Result<(AblationArm, u64)> {
    let plan = spec.plan(LayerKind::Pruned);
    let mut cfg = spec.train.clone();
    cfg.regularizer.surrogate = kind;
    cfg.regularizer.cost = CostModel::Flops;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let checksum = prepared.dense.compress(&plan, &mut rng)?.store.checksum();
    let tag = match kind {
        SurrogateKind::L1 => "l1",
        SurrogateKind::L1L2 => "l1l2",
    };
    let run = run_point(prepared, &plan, &cfg, spec.seed, None, out_dir, &format!("history_{tag}"))?;
    let alpha_id = run.model.layers[0]
        .param
        .input_mask()
        .ok_or_else(|| Error::Config("the ablation needs a pruned first layer".into()))?;
    let alpha = run.model.store.value(alpha_id).data().to_vec();
    let rows = &run.history.rows;
    let (first, last) = (&rows[0], rows.last().expect("history has a final row"));
    let surrogate: Vec<f64> = rows.iter().map(|r| r.surrogate).collect();
    let flops: Vec<f64> = rows.iter().map(|r| r.exact_flops as f64).collect();
    let d = alpha.len();
    let arm = AblationArm {
        surrogate: kind,
        d,
        mask_mean_start: first.mask_stats[0].0,
        mask_mean_end: last.mask_stats[0].0,
        mask_var_start: first.mask_stats[0].1,
        mask_var_end: last.mask_stats[0].1,
        nonzero_end: alpha.iter().filter(|&&a| a != 0.0).count(),
        zero_fraction: alpha.iter().filter(|&&a| a == 0.0).count() as f64 / d as f64,
        near_zero: alpha.iter().filter(|&&a| a > 0.0 && a < 1e-6).count(),
        weight_fro_start: first.weight_norms[0],
        weight_fro_end: last.weight_norms[0],
        spearman: spearman(&surrogate, &flops),
        min_mask_seen: rows.iter().map(|r| r.mask_min).fold(f64::INFINITY, f64::min),
        test_accuracy: run.test.accuracy,
        history: run.history,
        final_mask: alpha,
    };
    write(out_dir, &format!("history_{tag}.csv"), &arm.history.to_csv())?;
    Ok((arm, checksum))
}

/// Two runs from the same warm start that differ only in surrogate kind.
pub fn run_ablation(spec: &ExperimentSpec, out_dir: &Path) -> Result<AblationReport> {
    let prepared = prepare(spec)?;
    let (l1, c1) = ablation_arm(&prepared, spec, SurrogateKind::L1, out_dir)?;
    let (l1l2, c2) = ablation_arm(&prepared, spec, SurrogateKind::L1L2, out_dir)?;
    if l1.history.rows.len() != l1l2.history.rows.len() {
        return Err(Error::invalid("ablation runs recorded different numbers of rows"));
    }
    let pairs = l1.history.rows.iter().zip(&l1l2.history.rows);
    let mut mean = Vec::new();
    let mut var = Vec::new();
    let mut proxy = Vec::new();
    let mut fro = Vec::new();
    for (a, b) in pairs {
        let step = a.step.to_string();
        mean.push(vec![step.clone(), a.mask_stats[0].0.to_string(), b.mask_stats[0].0.to_string()]);
        var.push(vec![step.clone(), a.mask_stats[0].1.to_string(), b.mask_stats[0].1.to_string()]);
        proxy.push(vec![
            step.clone(),
            a.surrogate.to_string(),
            a.exact_flops.to_string(),
            b.surrogate.to_string(),
            b.exact_flops.to_string(),
        ]);
        fro.push(vec![step, a.weight_norms[0].to_string(), b.weight_norms[0].to_string()]);
    }
    write(out_dir, "ablation_mask_mean.csv", &csv(&["step", "l1", "l1l2"], &mean))?;
    write(out_dir, "ablation_mask_var.csv", &csv(&["step", "l1", "l1l2"], &var))?;
    write(
        out_dir,
        "ablation_surrogate_flops.csv",
        &csv(&["step", "l1_surrogate", "l1_exact_flops", "l1l2_surrogate", "l1l2_exact_flops"], &proxy),
    )?;
    write(out_dir, "ablation_weight_norm.csv", &csv(&["step", "l1", "l1l2"], &fro))?;
    let report = AblationReport { dataset: prepared.dataset_name.clone(), initial_checksum: [c1, c2], l1, l1l2 };
    write(out_dir, "report.json", &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct QuantRow {
    /// `fixed-<b>` for uniform baselines, `learned` for λ-sweep points.
    pub run: String,
    pub result: RunResult,
}

#[derive(Clone, Debug, Serialize)]
pub struct QuantReport {
    pub dataset: String,
    pub rows: Vec<QuantRow>,
}

fn quant_csv(rows: &[QuantRow], depth: usize) -> String {
    let mut header = vec!["run".to_string(), "lambda".into()];
    header.extend((0..depth).map(|i| format!("layer{i}_bits")));
    header.extend(["parameter_bits", "exact_flops", "test_accuracy", "extracted_accuracy"].map(String::from));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut c = vec![r.run.clone(), r.result.lambda.to_string()];
            c.extend(r.result.layer_bits.iter().map(|b| opt(*b)));
            c.push(opt(r.result.parameter_bits));
            c.push(r.result.exact_flops.to_string());
            c.push(opt(r.result.test.accuracy));
            c.push(opt(r.result.extracted_test.and_then(|e| e.accuracy)));
            c
        })
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    csv(&h, &body)
}

/// Learned per-layer bit-widths over a λ sweep versus uniform fixed-bit baselines.
pub fn run_quant(spec: &ExperimentSpec, out_dir: &Path) -> Result<QuantReport> {
    let prepared = prepare(spec)?;
    let mut rows = Vec::new();
    for &b in &spec.fixed_bits {
        let mut plan = spec.plan(LayerKind::Quantized);
        plan.ladder = LadderConfig { bits: vec![b], full_ladder: false, mask_init: 1.0, ranges: None };
        let mut cfg = spec.train.clone();
        cfg.lambda_max = 0.0;
        let result = run_point(&prepared, &plan, &cfg, spec.seed, None, out_dir, &format!("fixed{b}"))?;
        rows.push(QuantRow { run: format!("fixed-{b}"), result });
    }
    for (i, &lambda) in spec.lambdas.iter().enumerate() {
        let plan = spec.plan(LayerKind::Quantized);
        let mut cfg = spec.train.clone();
        cfg.lambda_max = lambda;
        cfg.seed = spec.train.seed + i as u64;
        let result = run_point(&prepared, &plan, &cfg, spec.seed, None, out_dir, &format!("learned{i}"))?;
        rows.push(QuantRow { run: "learned".into(), result });
    }
    write(out_dir, "quant_bitwidth.csv", &quant_csv(&rows, spec.depth()))?;
    let report = QuantReport { dataset: prepared.dataset_name, rows };
    write(out_dir, "report.json", &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Table latency of an extracted model: `Σ T(d_in', d_out')`.
pub fn extracted_latency(model: &ExtractedModel, table: &LatencyTable) -> Result<f64> {
    let mut total = 0.0;
    for l in &model.layers {
        total += table.interpolate_value(l.d_in as f64, l.d_out as f64)?.0;
    }
    Ok(total)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub cost: CostModel,
    pub latency_ms: Option<f64>,
    pub result: RunResult,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub dataset: String,
    pub points: Vec<SweepPoint>,
}

fn sweep(
    prepared: &Prepared,
    spec: &ExperimentSpec,
    cost: CostModel,
    lambdas: &[f64],
    table: Option<&LatencyTable>,
    out_dir: &Path,
) -> Result<Vec<SweepPoint>> {
    let plan = spec.plan(LayerKind::Pruned);
    let mut points = Vec::with_capacity(lambdas.len());
    for (i, &lambda) in lambdas.iter().enumerate() {
        let mut cfg = spec.train.clone();
        cfg.lambda_max = lambda;
        cfg.regularizer.cost = cost;
        cfg.seed = spec.train.seed + i as u64;
        let tag = format!("{}{i}", if cost == CostModel::Flops { "flops" } else { "latency" });
        let result = run_point(prepared, &plan, &cfg, spec.seed + i as u64, table, out_dir, &tag)?;
        let latency_ms = match (&result.extracted, table) {
            (Some(e), Some(t)) => Some(extracted_latency(e, t)?),
            _ => None,
        };
        points.push(SweepPoint { cost, latency_ms, result });
    }
    Ok(points)
}

fn sweep_csv(points: &[SweepPoint]) -> String {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                match p.cost {
                    CostModel::Flops => "flops".into(),
                    CostModel::Latency => "latency".into(),
                },
                p.result.lambda.to_string(),
                p.result.exact_flops.to_string(),
                opt(p.latency_ms),
                opt(p.result.parameter_bits),
                opt(p.result.test.accuracy),
                p.result.test.loss.to_string(),
            ]
        })
        .collect();
    csv(&["cost", "lambda", "exact_flops", "latency_ms", "parameter_bits", "test_accuracy", "test_loss"], &rows)
}

pub fn load_or_profile_table(spec: &ExperimentSpec) -> Result<LatencyTable> {
    if let Some(p) = &spec.table {
        return LatencyTable::load(p);
    }
    let widths = spec.architecture.widths();
    let max = *widths.iter().max().expect("non-empty");
    let cfg = spec.profile.clone().unwrap_or_else(|| ProfileConfig::new(max, max));
    profile_table(&cfg)
}

/// FLOPs-cost and latency-cost λ sweeps, both scored against one latency table.
pub fn run_latency_vs_flops(spec: &ExperimentSpec, out_dir: &Path) -> Result<SweepReport> {
    let table = load_or_profile_table(spec)?;
    write(out_dir, "latency_table.csv", &table.to_csv())?;
    let prepared = prepare(spec)?;
    let lat_lambdas = if spec.latency_lambdas.is_empty() { &spec.lambdas } else { &spec.latency_lambdas };
    let mut points = sweep(&prepared, spec, CostModel::Flops, &spec.lambdas, Some(&table), out_dir)?;
    points.extend(sweep(&prepared, spec, CostModel::Latency, lat_lambdas, Some(&table), out_dir)?);
    write(out_dir, "latency_vs_flops.csv", &sweep_csv(&points))?;
    let report = SweepReport { dataset: prepared.dataset_name, points };
    write(out_dir, "report.json", &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// `(λ, exact FLOPs, accuracy)` frontier.
pub fn run_lambda_sweep(spec: &ExperimentSpec, out_dir: &Path) -> Result<SweepReport> {
    let prepared = prepare(spec)?;
    let table = match (spec.train.regularizer.cost, &spec.table) {
        (CostModel::Latency, _) | (_, Some(_)) => Some(load_or_profile_table(spec)?),
        _ => None,
    };
    let points = sweep(&prepared, spec, spec.train.regularizer.cost, &spec.lambdas, table.as_ref(), out_dir)?;
    write(out_dir, "lambda_sweep.csv", &sweep_csv(&points))?;
    let report = SweepReport { dataset: prepared.dataset_name, points };
    write(out_dir, "report.json", &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Run whichever experiment the spec names; returns the `report.json` text.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<String> {
    let json = match spec.experiment {
        ExperimentId::Ablation => serde_json::to_string_pretty(&run_ablation(spec, out_dir)?)?,
        ExperimentId::QuantBitwidth => serde_json::to_string_pretty(&run_quant(spec, out_dir)?)?,
        ExperimentId::LatencyVsFlops => serde_json::to_string_pretty(&run_latency_vs_flops(spec, out_dir)?)?,
        ExperimentId::LambdaSweep => serde_json::to_string_pretty(&run_lambda_sweep(spec, out_dir)?)?,
    };
    Ok(json)
}

/// Single compression run: history, trained model and extracted model.
pub fn run_train(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunResult> {
    let prepared = prepare(spec)?;
    let table = match spec.train.regularizer.cost {
        CostModel::Latency => Some(load_or_profile_table(spec)?),
        CostModel::Flops => None,
    };
    let plan = spec.plan(LayerKind::Pruned);
    let result = run_point(&prepared, &plan, &spec.train, spec.seed, table.as_ref(), out_dir, "history")?;
    write(out_dir, "history.csv", &result.history.to_csv())?;
    write(out_dir, "model.json", &serde_json::to_string_pretty(&result.model)?)?;
    if let Some(e) = &result.extracted {
        write(out_dir, "extracted.json", &e.to_json()?)?;
    }
    write(out_dir, "report.json", &serde_json::to_string_pretty(&result)?)?;
    Ok(result)
}
