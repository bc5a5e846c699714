//! Training objectives: summed binary cross-entropy, center loss with joint
//! supervision, and pseudo-Huber wrapping of the cross-entropy term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Ce,
    CeCenter,
    HuberCe,
}

/// `[loss]` section of a model config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight of the center term.
    pub lambda: f64,
    /// Pseudo-Huber scale.
    pub delta: f64,
    /// Probabilities are clamped to `[eps, 1 − eps]` before the loss.
    pub clamp_eps: f64,
    /// Wrap each class term instead of the per-video sum.
    pub huber_per_class: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Ce,
            lambda: 0.001,
            delta: 1.0,
            clamp_eps: 1e-6,
            huber_per_class: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.kind == LossKind::HuberCe && !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::Config(format!("clamp_eps must lie in (0, 0.5), got {}", self.clamp_eps)));
        }
        Ok(())
    }
}

/// One trainable center per class, `[C, d_e]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterTable {
    pub id: ParamId,
    pub classes: usize,
    pub dim: usize,
}

pub const CENTER_PARAM: &str = "loss.centers";
pub const CENTER_INIT_STD: f64 = 0.1;

impl CenterTable {
    /// Entries drawn i.i.d. from `N(0, 0.01)`.
    pub fn register(store: &mut ParamStore, classes: usize, dim: usize, rng: &RngStream) -> Result<Self> {
        let mut t = rng.derive_named(CENTER_PARAM).gaussian(&[classes, dim]);
        t.values_mut().iter_mut().for_each(|v| *v *= CENTER_INIT_STD);
        Ok(Self {
            id: store.add(CENTER_PARAM, t)?,
            classes,
            dim,
        })
    }
}

/// Dense 0/1 target vector for a label set.
pub fn targets(labels: &[u32], classes: usize) -> Result<Vec<f64>> {
    let mut y = vec![0.0; classes];
    for &l in labels {
        *y.get_mut(l as usize)
            .ok_or_else(|| Error::Data(format!("label {l} outside [0, {classes})")))? = 1.0;
    }
    Ok(y)
}

/// `Σ_c −[y_c ln p_c + (1 − y_c) ln(1 − p_c)]`; `probs` must already be clamped.
pub fn cross_entropy(tape: &mut Tape, probs: Var, labels: &[u32]) -> Result<Var> {
    let y = targets(labels, tape.value(probs).len())?;
    tape.bce(probs, y)
}

/// `(1/N) Σ_{k∈y} ‖e − c_k‖²`.
pub fn center_loss(tape: &mut Tape, embedding: Var, table: &CenterTable, labels: &[u32]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::UndefinedMetric("center loss of an empty label set".into()));
    }
    let centers = tape.param(table.id);
    let idx: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    tape.center_loss(embedding, centers, &idx)
}

/// `ce + λ·lc`.
pub fn joint_loss(tape: &mut Tape, ce: Var, lc: Var, lambda: f64) -> Result<Var> {
    let weighted = tape.scale(lc, lambda);
    tape.add(ce, weighted)
}

/// `δ²(√(1 + (x/δ)²) − 1)` elementwise.
pub fn pseudo_huber(tape: &mut Tape, x: Var, delta: f64) -> Result<Var> {
    tape.pseudo_huber(x, delta)
}

/// Per-video objective under `cfg`. Videos without labels contribute no center term.
pub fn video_loss(
    tape: &mut Tape,
    cfg: &LossConfig,
    probs: Var,
    embedding: Var,
    labels: &[u32],
    centers: Option<&CenterTable>,
) -> Result<Var> {
    match cfg.kind {
        LossKind::Ce => cross_entropy(tape, probs, labels),
        LossKind::CeCenter => {
            let ce = cross_entropy(tape, probs, labels)?;
            let table = centers.ok_or_else(|| Error::Config("center loss needs a center table".into()))?;
            if labels.is_empty() {
                return Ok(ce);
            }
            let lc = center_loss(tape, embedding, table, labels)?;
            joint_loss(tape, ce, lc, cfg.lambda)
        }
        LossKind::HuberCe if cfg.huber_per_class => {
            let y = targets(labels, tape.value(probs).len())?;
            let terms = tape.bce_terms(probs, y)?;
            let wrapped = pseudo_huber(tape, terms, cfg.delta)?;
            Ok(tape.sum_all(wrapped))
        }
        LossKind::HuberCe => {
            let ce = cross_entropy(tape, probs, labels)?;
            pseudo_huber(tape, ce, cfg.delta)
        }
    }
}

/// Scalar helpers mirroring the tape ops, for reporting and oracles.
pub fn cross_entropy_value(probs: &[f64], labels: &[u32]) -> Result<f64> {
    let y = targets(labels, probs.len())?;
    Ok(crate::numerics::kernels::bce(probs, &y))
}

pub fn pseudo_huber_value(x: f64, delta: f64) -> f64 {
    crate::numerics::kernels::pseudo_huber(x, delta)
}

/// Clamp helper shared by the model and tests.
pub fn clamp_probs(tape: &mut Tape, probs: Var, eps: f64) -> Var {
    tape.clamp(probs, eps, 1.0 - eps)
}

/// Mean distance of each row of `embeddings` to its labels' centers.
pub fn mean_center_distance(centers: &Tensor, embeddings: &[(Vec<f64>, Vec<u32>)]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (e, labels) in embeddings {
        for &l in labels {
            let d: f64 = e.iter().zip(centers.row(l as usize)).map(|(a, b)| (a - b).powi(2)).sum();
            total += d.sqrt();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}
