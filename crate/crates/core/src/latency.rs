//! Matrix-vector latency lookup tables.
//!
//! Entry `(d1, d2)` is the time in milliseconds to multiply a `d1 × d2`
//! matrix by a length-`d2` vector. Grid indices equal dimension values,
//! so row and column 0 stand for empty operands and are pinned to zero.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::LayerKind;
use crate::model::{Bound, Model};
use crate::surrogates::{check_masks, count, next_mask, NextMask, Regularizer, SurrogateKind};

const HEADER: &str = "latency-table v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Measured,
    Interpolated,
}

impl Provenance {
    fn flag(self) -> &'static str {
        match self {
            Provenance::Measured => "m",
            Provenance::Interpolated => "i",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    d1: usize,
    d2: usize,
    values: Vec<f64>,
    provenance: Option<Vec<Provenance>>,
}

impl LatencyTable {
    pub fn new(d1: usize, d2: usize, values: Vec<f64>, provenance: Option<Vec<Provenance>>) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return Err(Error::Table(format!("dimensions must be positive, got {d1}x{d2}")));
        }
        if values.len() != d1 * d2 {
            return Err(Error::Table(format!("{d1}x{d2} table needs {} values, got {}", d1 * d2, values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Table(format!(
                "entry at row {}, column {} is {} (must be finite and nonnegative)",
                i / d2 + 1,
                i % d2 + 1,
                values[i]
            )));
        }
        if let Some(p) = &provenance {
            if p.len() != values.len() {
                return Err(Error::Table(format!("provenance has {} flags for {} entries", p.len(), values.len())));
            }
        }
        Ok(Self { d1, d2, values, provenance })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d2 = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != d2) {
            return Err(Error::Table(format!("row {} has {} values, expected {d2}", r + 1, rows[r].len())));
        }
        Self::new(rows.len(), d2, rows.concat(), None)
    }

    /// `(D1, D2)`; valid query indices are `0..=D1-1` and `0..=D2-1`.
    pub fn dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.d2 + y]
    }

    pub fn provenance(&self) -> Option<&[Provenance]> {
        self.provenance.as_deref()
    }

    fn lerp_y(&self, x: usize, y0: usize, fy: f64) -> f64 {
        let a = self.get(x, y0);
        if fy > 0.0 {
            a + (self.get(x, y0 + 1) - a) * fy
        } else {
            a
        }
    }

    /// Bilinear value and partial derivatives at a fractional index.
    ///
    /// Queries are clamped to the grid (with zero slope outside it). At an
    /// integer coordinate the slope is taken from the cell below it.
    pub fn interpolate_value(&self, x: f64, y: f64) -> Result<(f64, f64, f64)> {
        if x.is_nan() || y.is_nan() {
            return Err(Error::Table(format!("NaN query ({x}, {y})")));
        }
        let (xmax, ymax) = ((self.d1 - 1) as f64, (self.d2 - 1) as f64);
        let (xc, yc) = (x.clamp(0.0, xmax), y.clamp(0.0, ymax));
        let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
        let (fx, fy) = (xc - x0 as f64, yc - y0 as f64);

        let t1 = self.get(x0, y0);
        let t1 = if fx > 0.0 { t1 + (self.get(x0 + 1, y0) - t1) * fx } else { t1 };
        let value = if fy > 0.0 {
            let t2 = self.get(x0, y0 + 1);
            let t2 = if fx > 0.0 { t2 + (self.get(x0 + 1, y0 + 1) - t2) * fx } else { t2 };
            t1 + (t2 - t1) * fy
        } else {
            t1
        };

        let inside_x = x == xc;
        let dx = if self.d1 < 2 || !inside_x {
            0.0
        } else {
            let cx = if fx > 0.0 { x0 } else { x0.saturating_sub(1) };
            self.lerp_y(cx + 1, y0, fy) - self.lerp_y(cx, y0, fy)
        };
        let inside_y = y == yc;
        let dy = if self.d2 < 2 || !inside_y {
            0.0
        } else {
            let cy = if fy > 0.0 { y0 } else { y0.saturating_sub(1) };
            let at = |yy: usize| {
                let a = self.get(x0, yy);
                if fx > 0.0 {
                    a + (self.get(x0 + 1, yy) - a) * fx
                } else {
                    a
                }
            };
            at(cy + 1) - at(cy)
        };
        Ok((value, dx, dy))
    }

    /// Differentiable lookup at scalar graph nodes.
    pub fn interpolate(&self, g: &mut Graph, x: Var, y: Var) -> Result<Var> {
        let (v, dx, dy) = self.interpolate_value(g.item(x), g.item(y))?;
        g.scalar_fn2(x, y, v, dx, dy)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{HEADER} {} {}\n", self.d1, self.d2);
        for r in 0..self.d1 {
            let row: Vec<String> = (0..self.d2).map(|c| self.get(r, c).to_string()).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        if let Some(p) = &self.provenance {
            for r in 0..self.d1 {
                let row: Vec<&str> = p[r * self.d2..(r + 1) * self.d2].iter().map(|f| f.flag()).collect();
                let _ = writeln!(s, "{}", row.join(","));
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Table("empty file".into()))?;
        let dims = header
            .strip_prefix(HEADER)
            .map(|rest| rest.split_whitespace().map(str::parse::<usize>).collect::<Vec<_>>());
        let (d1, d2) = match dims.as_deref() {
            Some([Ok(a), Ok(b)]) if *a > 0 && *b > 0 => (*a, *b),
            _ => return Err(Error::Table(format!("malformed header `{header}` (expected `{HEADER} D1 D2`)"))),
        };
        let body: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
        let mut values = Vec::with_capacity(d1 * d2);
        for r in 0..d1 {
            let line = body.get(r).ok_or_else(|| Error::Table(format!("row {} missing: header declares {d1} rows", r + 1)))?;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != d2 {
                return Err(Error::Table(format!("row {} has {} columns, expected {d2}", r + 1, cells.len())));
            }
            for (c, cell) in cells.iter().enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::Table(format!("row {}, column {}: `{}` is not a number", r + 1, c + 1, cell.trim()))
                })?;
                values.push(v);
            }
        }
        let provenance = match body.len() {
            n if n == d1 => None,
            n if n == 2 * d1 => {
                let mut flags = Vec::with_capacity(d1 * d2);
                for r in 0..d1 {
                    let cells: Vec<&str> = body[d1 + r].split(',').collect();
                    if cells.len() != d2 {
                        return Err(Error::Table(format!(
                            "provenance row {} has {} columns, expected {d2}",
                            r + 1,
                            cells.len()
                        )));
                    }
                    for (c, cell) in cells.iter().enumerate() {
                        flags.push(match cell.trim() {
                            "m" => Provenance::Measured,
                            "i" => Provenance::Interpolated,
                            other => {
                                return Err(Error::Table(format!(
                                    "provenance row {}, column {}: unknown flag `{other}`",
                                    r + 1,
                                    c + 1
                                )))
                            }
                        });
                    }
                }
                Some(flags)
            }
            n if n < 2 * d1 && n > d1 => {
                return Err(Error::Table(format!("provenance row {} missing", n - d1 + 1)));
            }
            n => return Err(Error::Table(format!("{n} data lines after the header, expected {d1} or {}", 2 * d1))),
        };
        Self::new(d1, d2, values, provenance)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_csv(&text)
    }
}

fn default_theta() -> usize {
    8
}
fn default_k() -> usize {
    6
}
fn default_reps() -> usize {
    5
}
fn default_warmup() -> usize {
    2
}
fn default_min_sample_ns() -> u64 {
    50_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    /// Largest row dimension β.
    pub max_in: usize,
    /// Largest column dimension γ.
    pub max_out: usize,
    #[serde(default = "default_theta")]
    pub theta: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Minimum wall time of one timed sample; shorter runs are batched.
    #[serde(default = "default_min_sample_ns")]
    pub min_sample_ns: u64,
}

impl ProfileConfig {
    pub fn new(max_in: usize, max_out: usize) -> Self {
        Self {
            max_in,
            max_out,
            theta: default_theta(),
            k: default_k(),
            repetitions: default_reps(),
            warmup: default_warmup(),
            min_sample_ns: default_min_sample_ns(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta < 1 {
            return Err(Error::Config("theta must be at least 1".into()));
        }
        if self.repetitions < 3 {
            return Err(Error::Config("at least 3 repetitions are required".into()));
        }
        if self.theta >= self.max_in || self.theta >= self.max_out {
            return Err(Error::Config(format!(
                "theta {} must be below both caps ({}, {})",
                self.theta, self.max_in, self.max_out
            )));
        }
        Ok(())
    }
}

/// Sampled values along one axis: every value in `(cap − θ, cap]` plus
/// `k` floor-midpoints of `(0, cap − θ]`, each raising the lower limit.
pub fn sample_axis(cap: usize, theta: usize, k: usize) -> Vec<usize> {
    let hi = cap.saturating_sub(theta);
    let mut out: Vec<usize> = (hi + 1..=cap).collect();
    let mut lo = 0;
    for _ in 0..k {
        let mid = (lo + hi) / 2;
        if mid == lo {
            break;
        }
        out.push(mid);
        lo = mid;
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// `P_in × P_out` for caps `(β, γ)`.
pub fn sample_points(beta: usize, gamma: usize, theta: usize, k: usize) -> Result<Vec<(usize, usize)>> {
    if theta >= beta || theta >= gamma {
        return Err(Error::Config(format!("theta {theta} must be below both caps ({beta}, {gamma})")));
    }
    let p_in = sample_axis(beta, theta, k);
    let p_out = sample_axis(gamma, theta, k);
    Ok(p_in.iter().flat_map(|&a| p_out.iter().map(move |&b| (a, b))).collect())
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median host wall time in milliseconds of a `d1 × d2` matrix-vector product.
pub fn profile_matvec(d1: usize, d2: usize, cfg: &ProfileConfig) -> Result<f64> {
    if d1 == 0 || d2 == 0 {
        return Err(Error::invalid(format!("matvec dims must be positive, got {d1}x{d2}")));
    }
    let a: Vec<f64> = (0..d1 * d2).map(|i| ((i % 97) as f64) * 0.01 - 0.48).collect();
    let x: Vec<f64> = (0..d2).map(|i| ((i % 13) as f64) * 0.1 - 0.6).collect();
    let mut y = vec![0.0; d1];
    let mut run = |reps: usize| {
        for _ in 0..reps {
            for (r, out) in y.iter_mut().enumerate() {
                let row = &a[r * d2..(r + 1) * d2];
                *out = row.iter().zip(&x).map(|(p, q)| p * q).sum();
            }
            std::hint::black_box(&mut y);
        }
    };
    run(cfg.warmup.max(1));
    let mut inner = 1usize;
    loop {
        let t = Instant::now();
        run(inner);
        if t.elapsed().as_nanos() as u64 >= cfg.min_sample_ns || inner >= 1 << 24 {
            break;
        }
        inner *= 2;
    }
    let mut samples = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions {
        let t = Instant::now();
        run(inner);
        samples.push(t.elapsed().as_secs_f64() * 1e3 / inner as f64);
    }
    Ok(median(&mut samples))
}

fn bracket(axis: &[usize], v: usize) -> (usize, usize) {
    match axis.binary_search(&v) {
        Ok(i) => (axis[i], axis[i]),
        Err(i) => (axis[i - 1], axis[i]),
    }
}

/// Build a dense table from sampled measurements, filling every other entry
/// by bilinear interpolation between the surrounding measured rows and columns.
pub fn build_table(cfg: &ProfileConfig, mut measure: impl FnMut(usize, usize) -> Result<f64>) -> Result<LatencyTable> {
    cfg.validate()?;
    let mut xs = sample_axis(cfg.max_in, cfg.theta, cfg.k);
    let mut ys = sample_axis(cfg.max_out, cfg.theta, cfg.k);
    xs.insert(0, 0);
    ys.insert(0, 0);
    let (d1, d2) = (cfg.max_in + 1, cfg.max_out + 1);
    let mut known = vec![f64::NAN; d1 * d2];
    for &x in &xs {
        for &y in &ys {
            known[x * d2 + y] = if x == 0 || y == 0 { 0.0 } else { measure(x, y)? };
        }
    }
    let mut values = vec![0.0; d1 * d2];
    let mut flags = vec![Provenance::Interpolated; d1 * d2];
    for x in 0..d1 {
        let (xa, xb) = bracket(&xs, x);
        let fx = if xa == xb { 0.0 } else { (x - xa) as f64 / (xb - xa) as f64 };
        for y in 0..d2 {
            let (ya, yb) = bracket(&ys, y);
            let fy = if ya == yb { 0.0 } else { (y - ya) as f64 / (yb - ya) as f64 };
            let k = |a: usize, b: usize| known[a * d2 + b];
            let t1 = k(xa, ya) + (k(xb, ya) - k(xa, ya)) * fx;
            let t2 = k(xa, yb) + (k(xb, yb) - k(xa, yb)) * fx;
            values[x * d2 + y] = t1 + (t2 - t1) * fy;
            if xa == xb && ya == yb {
                flags[x * d2 + y] = Provenance::Measured;
            }
        }
    }
    LatencyTable::new(d1, d2, values, Some(flags))
}

/// Profile the host and build a table.
pub fn profile_table(cfg: &ProfileConfig) -> Result<LatencyTable> {
    build_table(cfg, |a, b| profile_matvec(a, b, cfg))
}

/// `Σ_i T(count(α_i), count(α_{i+1}))` over the model's layers.
///
/// Supports dense, pruned and pruned low-rank layers.
pub fn latency_reg(g: &mut Graph, model: &Model, bound: &Bound, table: &LatencyTable, kind: SurrogateKind) -> Result<Regularizer> {
    check_masks(model)?;
    let (d1, d2) = table.dims();
    let mut terms = Vec::with_capacity(model.depth());
    let mut dead_layers = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        if !matches!(layer.param.kind(), LayerKind::Dense | LayerKind::Pruned | LayerKind::PrunedLowRank) {
            return Err(Error::Config(format!(
                "latency cost supports pruned layers only; layer {i} is {:?}",
                layer.param.kind()
            )));
        }
        if layer.d_in >= d1 || layer.d_out >= d2 {
            return Err(Error::Table(format!(
                "layer {i} is {}x{} but the table covers at most {}x{}",
                layer.d_in,
                layer.d_out,
                d1 - 1,
                d2 - 1
            )));
        }
        let input = match layer.param.input_mask() {
            Some(id) => NextMask::Mask(bound.var(id)),
            None => NextMask::Ones(layer.d_in),
        };
        let x = count(g, kind, input)?;
        let y = count(g, kind, next_mask(model, bound, i))?;
        if x.dead {
            dead_layers.push(i);
            terms.push(g.scalar(0.0));
        } else {
            terms.push(table.interpolate(g, x.value, y.value)?);
        }
    }
    let stacked = g.stack(&terms)?;
    Ok(Regularizer { value: g.sum(stacked), dead_layers })
}
