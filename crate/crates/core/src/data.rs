//! Datasets: IDX image files and synthetic stand-ins.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Classes { labels: Vec<usize>, classes: usize },
    Values(Vec<f64>),
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Classes { labels, .. } => labels.len(),
            Target::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Target {
        match self {
            Target::Classes { labels, classes } => {
                Target::Classes { labels: idx.iter().map(|&i| labels[i]).collect(), classes: *classes }
            }
            Target::Values(v) => Target::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    /// `(n, features)`.
    pub x: Tensor,
    pub target: Target,
    /// Planted informative features, when known.
    pub support: Option<Vec<usize>>,
    /// Planted coefficients for synthetic regression.
    pub coefficients: Option<Vec<f64>>,
    pub noise: Option<f64>,
    pub normalized: bool,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { x: self.x.select_rows(idx), target: self.target.select(idx), ..self.clone() }
    }

    /// Deterministic shuffled split into `(first, rest)` with `fraction` of the rows first.
    pub fn split(&self, fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((self.len() as f64 * fraction).round() as usize).clamp(1, self.len() - 1);
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }
}

fn idx_err(path: &str, offset: usize, message: impl Into<String>) -> Error {
    Error::Idx { path: path.to_string(), offset, message: message.into() }
}

fn read_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| idx_err(path, offset, "truncated header"))
}

/// Parse an IDX image file into `(n, rows·cols)` values in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &str) -> Result<Tensor> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES {
        return Err(idx_err(path, 0, format!("magic {magic:#010x}, expected {IDX_IMAGES:#010x}")));
    }
    let n = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let size = rows * cols;
    let payload = &bytes[16..];
    if n == 0 || size == 0 {
        return Err(idx_err(path, 4, "empty image set"));
    }
    if payload.len() < n * size {
        return Err(idx_err(
            path,
            bytes.len(),
            format!("truncated payload: {} bytes for {n} images of {rows}x{cols}", payload.len()),
        ));
    }
    let data = payload[..n * size].iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::matrix(n, size, data)
}

pub fn parse_idx_labels(bytes: &[u8], path: &str) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IDX_LABELS {
        return Err(idx_err(path, 0, format!("magic {magic:#010x}, expected {IDX_LABELS:#010x}")));
    }
    let n = read_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(idx_err(path, bytes.len(), format!("truncated payload: {} labels for {n}", payload.len())));
    }
    Ok(payload[..n].iter().map(|&b| b as usize).collect())
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ib = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lb = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let x = parse_idx_images(&ib, &ip.display().to_string())?;
    let y = parse_idx_labels(&lb, &lp.display().to_string())?;
    if x.rows() != y.len() {
        return Err(idx_err(
            &lp.display().to_string(),
            4,
            format!("{} labels for {} images", y.len(), x.rows()),
        ));
    }
    let classes = y.iter().max().map_or(1, |m| m + 1);
    Ok(Dataset {
        name: "idx-images".into(),
        x,
        target: Target::Classes { labels: y, classes },
        support: None,
        coefficients: None,
        noise: None,
        normalized: true,
    })
}

fn random_support(d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d).collect();
    idx.shuffle(rng);
    let mut s = idx[..k].to_vec();
    s.sort_unstable();
    s
}

/// `y = X w* + σ ε` with a standard-normal design and a `k`-sparse `w*` of unit magnitudes.
pub fn gen_sparse_regression(n: usize, d: usize, k: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 || k > d {
        return Err(Error::Config(format!("invalid sparse regression sizes n={n}, d={d}, k={k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let support = random_support(d, k, &mut rng);
    let mut w = vec![0.0; d];
    for &j in &support {
        w[j] = if rand::Rng::random_bool(&mut rng, 0.5) { 1.0 } else { -1.0 };
    }
    let x: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y = (0..n)
        .map(|i| {
            let clean: f64 = x[i * d..(i + 1) * d].iter().zip(&w).map(|(a, b)| a * b).sum();
            let e: f64 = StandardNormal.sample(&mut rng);
            clean + noise * e
        })
        .collect();
    Ok(Dataset {
        name: "synthetic-regression".into(),
        x: Tensor::matrix(n, d, x)?,
        target: Target::Values(y),
        support: Some(support),
        coefficients: Some(w),
        noise: Some(noise),
        normalized: false,
    })
}

/// Two Gaussian clusters separated along `informative` planted features; the
/// remaining features are pure noise.
pub fn gen_clusters(n: usize, informative: usize, noise_features: usize, separation: f64, seed: u64) -> Result<Dataset> {
    let d = informative + noise_features;
    if n < 2 || informative == 0 {
        return Err(Error::Config(format!("invalid cluster sizes n={n}, informative={informative}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let support = random_support(d, informative, &mut rng);
    let mut direction = vec![0.0; d];
    for &j in &support {
        direction[j] = if rand::Rng::random_bool(&mut rng, 0.5) { 1.0 } else { -1.0 };
    }
    let mut x = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let sign = if c == 1 { 1.0 } else { -1.0 };
        for &dir in &direction {
            let e: f64 = StandardNormal.sample(&mut rng);
            x.push(e + sign * 0.5 * separation * dir);
        }
        labels.push(c);
    }
    Ok(Dataset {
        name: "synthetic-clusters".into(),
        x: Tensor::matrix(n, d, x)?,
        target: Target::Classes { labels, classes: 2 },
        support: Some(support),
        coefficients: None,
        noise: None,
        normalized: false,
    })
}
