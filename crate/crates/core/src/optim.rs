//! First-order optimizers with nonnegativity projection on masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamRole, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    /// Entries that no update may touch, per parameter.
    locked: Vec<Option<Vec<bool>>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let v = match kind {
            OptimizerKind::Adam { .. } => zeros.clone(),
            OptimizerKind::Sgd => Vec::new(),
        };
        let m = match kind {
            OptimizerKind::Adam { .. } => zeros,
            OptimizerKind::Sgd => Vec::new(),
        };
        Self { kind, step: 0, m, v, locked: vec![None; store.len()] }
    }

    /// Freeze every mask entry that is currently exactly zero.
    pub fn lock_zero_masks(&mut self, store: &ParamStore) {
        for (slot, p) in self.locked.iter_mut().zip(store.iter()) {
            if p.role == ParamRole::Mask {
                *slot = Some(p.value.data().iter().map(|&a| a == 0.0).collect());
            }
        }
    }
}

/// One optimizer update followed by projection of masks onto their feasible sets.
///
/// `lr_of(role)` gives the learning rate per parameter role. All gradients
/// are checked before anything is modified.
pub fn step_projected(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr_of: impl Fn(ParamRole) -> f64,
) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::invalid(format!("{} gradients for {} parameters", grads.len(), store.len())));
    }
    for (p, g) in store.iter().zip(grads) {
        if g.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch { op: "step", left: p.value.shape().to_vec(), right: g.shape().to_vec() });
        }
        if p.role != ParamRole::Frozen && !g.is_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    for (i, (p, g)) in store.iter_mut().zip(grads).enumerate() {
        if p.role == ParamRole::Frozen {
            continue;
        }
        let lr = lr_of(p.role);
        let locked = state.locked[i].as_deref();
        let w = p.value.data_mut();
        match state.kind {
            OptimizerKind::Sgd => {
                for (j, (w, &g)) in w.iter_mut().zip(g.data()).enumerate() {
                    if locked.is_some_and(|l| l[j]) {
                        continue;
                    }
                    *w -= lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for j in 0..w.len() {
                    if locked.is_some_and(|l| l[j]) {
                        continue;
                    }
                    let g = g.data()[j];
                    m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                    v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                    w[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                }
            }
        }
        match p.role {
            ParamRole::Mask => w.iter_mut().for_each(|a| *a = a.max(0.0)),
            ParamRole::BitMask => w.iter_mut().for_each(|a| *a = a.clamp(0.0, 1.0)),
            _ => {}
        }
    }
    Ok(())
}
