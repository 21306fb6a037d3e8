//! Finite-difference gradient harness and the catalogue of differentiable
//! operations it is run against.

#![allow(dead_code)]

use flopreg::graph::{Graph, Var};
use flopreg::latency::LatencyTable;
use flopreg::layers::{effective_weight, Parameterization, QuantLadder};
use flopreg::model::{Architecture, CompressionPlan, Model, NormKind};
use flopreg::surrogates::{
    flops_surrogate, l1_count, l1_surrogate, l1l2_count, quant_factor, NextMask, QuantVariant, SurrogateKind,
};
use flopreg::trainer::{distill_loss, mse_loss, objective, TrainConfig};
use flopreg::data::Target;
use flopreg::layers::LayerKind;
use flopreg::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;

pub struct Input {
    pub value: Tensor,
    pub checked: bool,
}

pub fn leaf(value: Tensor) -> Input {
    Input { value, checked: true }
}

pub fn fixed(value: Tensor) -> Input {
    Input { value, checked: false }
}

pub type Build = fn(&mut Graph, &[Var]) -> flopreg::Result<Var>;

pub struct Case {
    pub name: &'static str,
    pub gen: fn(&mut ChaCha8Rng) -> Vec<Input>,
    pub build: Build,
}

pub fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Normal entries pushed at least `gap` away from every point in `kinks`.
pub fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], kinks: &[f64], gap: f64) -> Tensor {
    let mut t = normal(rng, shape);
    for v in t.data_mut() {
        while kinks.iter().any(|k| (*v - k).abs() < gap) {
            *v = StandardNormal.sample(rng);
        }
    }
    t
}

/// Worst elementwise `|autodiff − fd| / (|fd| + 1e-8)` over the checked inputs.
///
/// `eval` returns the scalar value and the gradient for every input. The
/// numerical derivative uses the fourth-order central stencil.
pub fn fd_check(inputs: &[Tensor], checked: &[bool], eval: &dyn Fn(&[Tensor]) -> (f64, Vec<Tensor>)) -> f64 {
    let (_, grads) = eval(inputs);
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (i, x) in inputs.iter().enumerate() {
        if !checked[i] {
            continue;
        }
        for j in 0..x.len() {
            let x0 = x.data()[j];
            let h = FD_STEP * x0.abs().max(1.0);
            let mut at = |d: f64| {
                probe[i].data_mut()[j] = x0 + d;
                let v = eval(&probe).0;
                probe[i].data_mut()[j] = x0;
                v
            };
            let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
            let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let ad = grads[i].data()[j];
            let rel = (ad - fd).abs() / (fd.abs() + 1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

fn graph_eval(build: Build, projection: &Option<Tensor>, xs: &[Tensor]) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
    let out = build(&mut g, &vars).expect("case builds");
    let loss = match projection {
        None => out,
        Some(r) => {
            let rv = g.constant(r.clone());
            let m = g.mul(out, rv).unwrap();
            g.sum(m)
        }
    };
    let value = g.item(loss);
    let grads = g.backward(loss).unwrap();
    (value, vars.iter().map(|&v| grads.wrt(v).clone()).collect())
}

/// Worst relative error of `case` over `instances` random draws.
pub fn check_case(case: &Case, instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inputs = (case.gen)(&mut rng);
        let values: Vec<Tensor> = inputs.iter().map(|i| i.value.clone()).collect();
        let checked: Vec<bool> = inputs.iter().map(|i| i.checked).collect();
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|x| g.leaf(x.clone())).collect();
        let out = (case.build)(&mut g, &vars).expect("case builds");
        let shape = g.value(out).shape().to_vec();
        let projection = (!g.value(out).is_scalar()).then(|| normal(&mut rng, &shape));
        let rel = fd_check(&values, &checked, &|xs| graph_eval(case.build, &projection, xs));
        worst = worst.max(rel);
    }
    worst
}

fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    normal(rng, &[r, c])
}

fn mask(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    uniform(rng, &[n], 0.1, 2.0)
}

fn bits(rng: &mut ChaCha8Rng) -> Tensor {
    uniform(rng, &[], 0.1, 0.9)
}

fn ladder(vars: &[Var], first: usize) -> QuantLadder<Var> {
    QuantLadder {
        bits: vec![2, 4, 8],
        first: None,
        masks: vec![vars[first], vars[first + 1]],
        ranges: vec![(-1.5, 1.5); 3],
    }
}

fn table() -> LatencyTable {
    let rows: Vec<Vec<f64>> = (0..9)
        .map(|i| (0..9).map(|j| if i == 0 || j == 0 { 0.0 } else { 0.3 * (i * j) as f64 + 0.1 * ((i + 2 * j) % 5) as f64 }).collect())
        .collect();
    LatencyTable::from_rows(&rows).unwrap()
}

fn off_grid(rng: &mut ChaCha8Rng) -> Tensor {
    let cell = rng.random_range(0..8) as f64;
    Tensor::scalar(cell + rng.random_range(0.05..0.95))
}

fn surrogate_case(kind: SurrogateKind) -> impl Fn(&mut Graph, &Parameterization<Var>, usize, usize, NextMask) -> flopreg::Result<Var> {
    move |g, p, di, dout, next| Ok(flops_surrogate(g, p, di, dout, next, kind, QuantVariant::Ratio)?.value)
}

/// Every differentiable primitive and every surrogate, under both surrogate kinds where defined.
pub fn catalogue() -> Vec<Case> {
    vec![
        Case { name: "matmul", gen: |r| vec![leaf(mat(r, 3, 4)), leaf(mat(r, 4, 2))], build: |g, v| g.matmul(v[0], v[1]) },
        Case { name: "transpose", gen: |r| vec![leaf(mat(r, 3, 4))], build: |g, v| g.transpose(v[0]) },
        Case { name: "add", gen: |r| vec![leaf(mat(r, 2, 3)), leaf(mat(r, 2, 3))], build: |g, v| g.add(v[0], v[1]) },
        Case { name: "sub", gen: |r| vec![leaf(mat(r, 2, 3)), leaf(mat(r, 2, 3))], build: |g, v| g.sub(v[0], v[1]) },
        Case { name: "mul", gen: |r| vec![leaf(mat(r, 2, 3)), leaf(mat(r, 2, 3))], build: |g, v| g.mul(v[0], v[1]) },
        Case {
            name: "div",
            gen: |r| vec![leaf(mat(r, 2, 3)), leaf(away_from(r, &[2, 3], &[0.0], 0.5))],
            build: |g, v| g.div(v[0], v[1]),
        },
        Case { name: "add_row", gen: |r| vec![leaf(mat(r, 3, 4)), leaf(normal(r, &[4]))], build: |g, v| g.add_row(v[0], v[1]) },
        Case { name: "mul_row", gen: |r| vec![leaf(mat(r, 3, 4)), leaf(normal(r, &[4]))], build: |g, v| g.mul_row(v[0], v[1]) },
        Case { name: "mul_scalar", gen: |r| vec![leaf(mat(r, 3, 2)), leaf(normal(r, &[]))], build: |g, v| g.mul_scalar(v[0], v[1]) },
        Case { name: "scale", gen: |r| vec![leaf(mat(r, 2, 2))], build: |g, v| Ok(g.scale(v[0], -1.7)) },
        Case { name: "shift", gen: |r| vec![leaf(mat(r, 2, 2))], build: |g, v| Ok(g.shift(v[0], 0.3)) },
        Case { name: "div_const", gen: |r| vec![leaf(mat(r, 2, 2))], build: |g, v| Ok(g.div_const(v[0], 3.0)) },
        Case { name: "affine", gen: |r| vec![leaf(mat(r, 2, 2))], build: |g, v| Ok(g.affine(v[0], 0.5, -2.0)) },
        Case { name: "relu", gen: |r| vec![leaf(away_from(r, &[3, 3], &[0.0], 0.01))], build: |g, v| Ok(g.relu(v[0])) },
        Case { name: "max_zero", gen: |r| vec![leaf(away_from(r, &[5], &[0.0], 0.01))], build: |g, v| Ok(g.max_zero(v[0])) },
        Case { name: "sum", gen: |r| vec![leaf(mat(r, 3, 3))], build: |g, v| Ok(g.sum(v[0])) },
        Case { name: "l2_norm", gen: |r| vec![leaf(mat(r, 2, 3))], build: |g, v| Ok(g.l2_norm(v[0])) },
        Case {
            name: "clamp",
            gen: |r| vec![leaf(away_from(r, &[4, 3], &[-0.5, 0.5], 0.01))],
            build: |g, v| g.clamp(v[0], -0.5, 0.5),
        },
        Case {
            name: "stack",
            gen: |r| vec![leaf(mat(r, 2, 2)), leaf(normal(r, &[3]))],
            build: |g, v| {
                let a = g.sum(v[0]);
                let b = g.l2_norm(v[1]);
                g.stack(&[a, b])
            },
        },
        Case {
            name: "batch_norm",
            gen: |r| vec![leaf(mat(r, 6, 3)), leaf(uniform(r, &[3], 0.5, 2.0)), leaf(normal(r, &[3]))],
            build: |g, v| Ok(g.batch_norm(v[0], v[1], v[2], 1e-3)?.0),
        },
        Case {
            name: "layer_norm",
            gen: |r| vec![leaf(mat(r, 3, 5)), leaf(uniform(r, &[5], 0.5, 2.0)), leaf(normal(r, &[5]))],
            build: |g, v| Ok(g.layer_norm(v[0], v[1], v[2], 1e-3)?.0),
        },
        Case {
            name: "softmax_cross_entropy",
            gen: |r| vec![leaf(mat(r, 4, 3))],
            build: |g, v| g.softmax_cross_entropy(v[0], &[0, 2, 1, 2]),
        },
        Case { name: "log_softmax", gen: |r| vec![leaf(mat(r, 3, 4))], build: |g, v| g.log_softmax(v[0]) },
        Case {
            name: "interpolate",
            gen: |r| vec![leaf(off_grid(r)), leaf(off_grid(r))],
            build: |g, v| table().interpolate(g, v[0], v[1]),
        },
        Case {
            name: "distill_loss",
            gen: |r| vec![leaf(mat(r, 3, 4)), fixed(mat(r, 3, 4))],
            build: |g, v| {
                let teacher = g.value(v[1]).clone();
                distill_loss(g, &teacher, v[0], 2.0, 0.7)
            },
        },
        Case {
            name: "mse_loss",
            gen: |r| vec![leaf(mat(r, 5, 1))],
            build: |g, v| mse_loss(g, v[0], &[0.1, -0.4, 1.2, 0.0, 2.0]),
        },
        Case { name: "l1l2_count", gen: |r| vec![leaf(mask(r, 7))], build: |g, v| Ok(l1l2_count(g, v[0])?.value) },
        Case { name: "l1_count", gen: |r| vec![leaf(mask(r, 7))], build: |g, v| Ok(l1_count(g, v[0])?.value) },
        Case {
            name: "l1_surrogate",
            gen: |r| vec![leaf(mask(r, 5)), leaf(mask(r, 3))],
            build: |g, v| l1_surrogate(g, v[0], NextMask::Mask(v[1])),
        },
        Case {
            name: "flops_dense_l1",
            gen: |r| vec![fixed(mat(r, 3, 5)), leaf(mask(r, 3))],
            build: |g, v| surrogate_case(SurrogateKind::L1)(g, &Parameterization::Dense { weight: v[0] }, 5, 3, NextMask::Mask(v[1])),
        },
        Case {
            name: "flops_dense_l1l2",
            gen: |r| vec![fixed(mat(r, 3, 5)), leaf(mask(r, 3))],
            build: |g, v| surrogate_case(SurrogateKind::L1L2)(g, &Parameterization::Dense { weight: v[0] }, 5, 3, NextMask::Mask(v[1])),
        },
        Case {
            name: "flops_pruned_l1",
            gen: |r| vec![fixed(mat(r, 3, 5)), leaf(mask(r, 5)), leaf(mask(r, 3))],
            build: |g, v| {
                let p = Parameterization::Pruned { weight: v[0], alpha: v[1] };
                surrogate_case(SurrogateKind::L1)(g, &p, 5, 3, NextMask::Mask(v[2]))
            },
        },
        Case {
            name: "flops_pruned_l1l2",
            gen: |r| vec![fixed(mat(r, 3, 5)), leaf(mask(r, 5)), leaf(mask(r, 3))],
            build: |g, v| {
                let p = Parameterization::Pruned { weight: v[0], alpha: v[1] };
                surrogate_case(SurrogateKind::L1L2)(g, &p, 5, 3, NextMask::Mask(v[2]))
            },
        },
        Case {
            name: "flops_unstructured",
            gen: |r| vec![fixed(mat(r, 3, 4)), leaf(uniform(r, &[3, 4], 0.1, 2.0))],
            build: |g, v| {
                let p = Parameterization::Unstructured { weight: v[0], mask: v[1] };
                surrogate_case(SurrogateKind::L1L2)(g, &p, 4, 3, NextMask::Ones(3))
            },
        },
        Case {
            name: "flops_pruned_unstructured",
            gen: |r| vec![fixed(mat(r, 3, 4)), leaf(uniform(r, &[3, 4], 0.1, 2.0)), leaf(mask(r, 4))],
            build: |g, v| {
                let p = Parameterization::PrunedUnstructured { weight: v[0], mask: v[1], alpha: v[2] };
                surrogate_case(SurrogateKind::L1L2)(g, &p, 4, 3, NextMask::Ones(3))
            },
        },
        Case {
            name: "flops_low_rank",
            gen: |r| vec![fixed(mat(r, 3, 3)), leaf(mask(r, 3)), fixed(mat(r, 3, 4))],
            build: |g, v| {
                let p = Parameterization::LowRank { u: v[0], beta: v[1], v: v[2] };
                surrogate_case(SurrogateKind::L1L2)(g, &p, 4, 3, NextMask::Ones(3))
            },
        },
        Case {
            name: "flops_pruned_low_rank",
            gen: |r| vec![fixed(mat(r, 3, 3)), leaf(mask(r, 3)), fixed(mat(r, 3, 4)), leaf(mask(r, 4)), leaf(mask(r, 3))],
            build: |g, v| {
                let p = Parameterization::PrunedLowRank { u: v[0], beta: v[1], v: v[2], alpha: v[3] };
                surrogate_case(SurrogateKind::L1L2)(g, &p, 4, 3, NextMask::Mask(v[4]))
            },
        },
        Case {
            name: "flops_quantized_ratio",
            gen: |r| vec![fixed(mat(r, 3, 4)), leaf(bits(r)), leaf(bits(r))],
            build: |g, v| {
                let p = Parameterization::Quantized { weight: v[0], ladder: ladder(v, 1) };
                Ok(flops_surrogate(g, &p, 4, 3, NextMask::Ones(3), SurrogateKind::L1L2, QuantVariant::Ratio)?.value)
            },
        },
        Case {
            name: "flops_quantized_numerator",
            gen: |r| vec![fixed(mat(r, 3, 4)), leaf(bits(r)), leaf(bits(r))],
            build: |g, v| {
                let p = Parameterization::Quantized { weight: v[0], ladder: ladder(v, 1) };
                Ok(flops_surrogate(g, &p, 4, 3, NextMask::Ones(3), SurrogateKind::L1L2, QuantVariant::Numerator)?.value)
            },
        },
        Case {
            name: "flops_pruned_quantized",
            gen: |r| vec![fixed(mat(r, 3, 4)), leaf(bits(r)), leaf(bits(r)), leaf(mask(r, 4)), leaf(mask(r, 3))],
            build: |g, v| {
                let p = Parameterization::PrunedQuantized { weight: v[0], ladder: ladder(v, 1), alpha: v[3] };
                surrogate_case(SurrogateKind::L1L2)(g, &p, 4, 3, NextMask::Mask(v[4]))
            },
        },
        Case {
            // The ratio is scale-invariant in the leading mask, so its
            // gradient there is zero; the numerator exercises it.
            name: "quant_factor_full_ladder",
            gen: |r| vec![leaf(bits(r)), leaf(bits(r)), leaf(bits(r))],
            build: |g, v| {
                let l = QuantLadder { bits: vec![2, 4, 8], first: Some(v[0]), masks: vec![v[1], v[2]], ranges: vec![(-1.0, 1.0); 3] };
                Ok(quant_factor(g, &l, QuantVariant::Numerator)?.value)
            },
        },
        Case {
            name: "weight_pruned",
            gen: |r| vec![leaf(mat(r, 3, 4)), leaf(mask(r, 4))],
            build: |g, v| effective_weight(g, &Parameterization::Pruned { weight: v[0], alpha: v[1] }),
        },
        Case {
            name: "weight_unstructured",
            gen: |r| vec![leaf(mat(r, 3, 4)), leaf(uniform(r, &[3, 4], 0.1, 2.0))],
            build: |g, v| effective_weight(g, &Parameterization::Unstructured { weight: v[0], mask: v[1] }),
        },
        Case {
            name: "weight_low_rank",
            gen: |r| vec![leaf(mat(r, 3, 3)), leaf(mask(r, 3)), leaf(mat(r, 3, 4)), leaf(mask(r, 4))],
            build: |g, v| effective_weight(g, &Parameterization::PrunedLowRank { u: v[0], beta: v[1], v: v[2], alpha: v[3] }),
        },
        Case {
            name: "weight_pruned_unstructured",
            gen: |r| vec![leaf(mat(r, 3, 4)), leaf(uniform(r, &[3, 4], 0.1, 2.0)), leaf(mask(r, 4))],
            build: |g, v| effective_weight(g, &Parameterization::PrunedUnstructured { weight: v[0], mask: v[1], alpha: v[2] }),
        },
        Case {
            // Rounding is piecewise constant in W, so only the masks are checked.
            name: "weight_quantized_masks",
            gen: |r| vec![fixed(mat(r, 3, 4)), leaf(bits(r)), leaf(bits(r)), leaf(mask(r, 4))],
            build: |g, v| effective_weight(g, &Parameterization::PrunedQuantized { weight: v[0], ladder: ladder(v, 1), alpha: v[3] }),
        },
    ]
}

/// A one-hidden-layer pruned FFN with batch norm, the full training
/// objective, and a finite-difference check over every parameter.
pub fn check_model_objective(kind: SurrogateKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture { input_dim: 5, hidden: vec![4], output_dim: 3, norm: NormKind::Batch, bias: true, norm_eps: 1e-3 };
    let dense = Model::dense(&arch, &mut rng).unwrap();
    let mut model = dense.compress(&CompressionPlan::uniform(LayerKind::Pruned, 2), &mut rng).unwrap();
    for p in model.store.iter_mut() {
        if p.role == flopreg::params::ParamRole::Mask {
            p.value = uniform(&mut rng, p.value.shape(), 0.2, 1.5);
        }
    }
    let x = normal(&mut rng, &[6, 5]);
    let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
    let target = Target::Classes { labels, classes: 3 };
    let mut cfg = TrainConfig::default();
    cfg.regularizer.surrogate = kind;
    let values: Vec<Tensor> = model.store.iter().map(|p| p.value.clone()).collect();
    // Batch norm cancels the first bias, so its gradient is exactly zero and
    // a relative finite-difference comparison would only measure roundoff.
    let cancelled: Vec<bool> = model.store.iter().map(|p| p.name == "layer0.bias").collect();
    let checked: Vec<bool> = cancelled.iter().map(|c| !c).collect();
    let eval = |xs: &[Tensor]| {
        let mut m = model.clone();
        for (p, v) in m.store.iter_mut().zip(xs) {
            p.value = v.clone();
        }
        let mut g = Graph::new();
        let bound = m.bind(&mut g);
        let obj = objective(&mut g, &m, &bound, &x, &target, 0.01, &cfg, None, None).unwrap();
        let grads = g.backward(obj.loss).unwrap();
        (g.item(obj.loss), bound.vars.iter().map(|&v| grads.wrt(v).clone()).collect())
    };
    let rel = fd_check(&values, &checked, &eval);
    let (_, grads) = eval(&values);
    for (g, _) in grads.iter().zip(&cancelled).filter(|(_, &c)| c) {
        assert!(g.data().iter().all(|v| v.abs() <= 1e-12), "bias before batch norm has gradient {g:?}");
    }
    model.store = flopreg::params::ParamStore::new();
    rel
}

pub fn frobenius_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
