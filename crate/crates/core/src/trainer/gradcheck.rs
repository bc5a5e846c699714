use serde::{Deserialize, Serialize};

use crate::classifier::HeadKind;
use crate::data::Dataset;
use crate::error::Result;
use crate::loss::LossKind;
use crate::numerics::{check_gradients, worst, GroupError, Mode, RngStream, Tensor};
use crate::parallel::{self, Execution};
use crate::pooling::{FeatureSequence, PoolingKind};

use super::{Model, ModelConfig};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Small sizes that keep finite differences cheap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckDims {
    /// Frame width `D`.
    pub input_dim: usize,
    /// LSTM cell / CNN channels `d`.
    pub cell: usize,
    pub classes: usize,
    pub experts: usize,
    pub frames: usize,
    /// Hidden width of the 2-layer mixture and the MLP.
    pub hidden: usize,
}

impl Default for GradcheckDims {
    fn default() -> Self {
        Self {
            input_dim: 6,
            cell: 5,
            classes: 4,
            experts: 2,
            frames: 6,
            hidden: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub pipeline: String,
    pub groups: Vec<GroupError>,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Short `pooling/head/label/loss` tag.
pub fn pipeline_name(cfg: &ModelConfig) -> String {
    format!(
        "{:?}/{:?}/{}/{:?}",
        cfg.pooling.kind,
        cfg.classifier.kind,
        if cfg.label.enabled { "label" } else { "nolabel" },
        cfg.loss.kind
    )
    .to_lowercase()
}

/// `cfg` shrunk to `dims`; label and loss coefficients are made non-trivial
/// so every term contributes a gradient.
pub fn shrink(cfg: &ModelConfig, dims: &GradcheckDims) -> ModelConfig {
    let mut c = cfg.clone();
    c.pooling.cell_size = dims.cell;
    c.pooling.cnn_channels = dims.cell;
    c.pooling.cnn_window = c.pooling.cnn_window.min(dims.frames);
    c.classifier.experts = dims.experts;
    c.classifier.moe2_hidden = dims.hidden;
    c.classifier.mlp_hidden = dims.hidden;
    c.classifier.m2m_cell_size = dims.cell;
    if c.label.enabled && c.label.beta == 0.0 && c.label.gamma == 0.0 {
        c.label.beta = 0.3;
        c.label.gamma = 0.2;
    }
    if c.loss.kind == LossKind::CeCenter && c.loss.lambda < 0.1 {
        c.loss.lambda = 0.5;
    }
    c
}

fn probe_dataset(dims: &GradcheckDims, seed: u64) -> Result<Dataset> {
    let mut rng = RngStream::new(seed).derive_named("gradcheck-data");
    let mut videos = Vec::new();
    for v in 0..2 * dims.classes {
        let frames = rng.gaussian(&[dims.frames, dims.input_dim]);
        let mut labels = vec![(v % dims.classes) as u32];
        if v % 2 == 0 {
            labels.push(((v + 1) % dims.classes) as u32);
        }
        videos.push(FeatureSequence::new(format!("g{v}"), labels, frames)?);
    }
    Dataset::new(dims.classes, dims.input_dim, videos)
}

/// Full-pipeline gradients (every parameter group and the frame input)
/// against central differences, in train mode with fixed dropout and noise draws.
pub fn gradcheck(cfg: &ModelConfig, dims: &GradcheckDims, fault: Option<&'static str>) -> Result<GradcheckReport> {
    let cfg = shrink(cfg, dims);
    let ds = probe_dataset(dims, cfg.seed)?;
    let model = Model::for_dataset(&cfg, &ds, Execution::Sequential)?;
    let video = &ds.videos[0];
    let frames: Tensor = video.frames.clone();
    let groups = check_gradients(&model.store, &[frames], GRADCHECK_STEP, fault, |tape, ins| {
        let mut rng = RngStream::new(cfg.seed).derive_named("gradcheck-draws");
        model.loss(tape, ins[0], &video.labels, &mut rng, Mode::Train)
    })?;
    let max_rel_err = worst(&groups);
    Ok(GradcheckReport {
        pipeline: pipeline_name(&cfg),
        groups,
        max_rel_err,
        passed: max_rel_err < GRADCHECK_TOL,
    })
}

/// Every shipped pipeline: each pooling variant with each pooled head, the
/// many-to-many head on raw frames, each with the label layer off and on,
/// under every loss.
pub fn pipeline_grid(base: &ModelConfig) -> Vec<ModelConfig> {
    let poolings = [
        PoolingKind::Lstm,
        PoolingKind::Cnn,
        PoolingKind::Position,
        PoolingKind::Attention,
        PoolingKind::AdaptiveNoise,
    ];
    let mut pipes: Vec<(PoolingKind, HeadKind)> = Vec::new();
    for p in poolings {
        for h in [HeadKind::Moe, HeadKind::Moe2, HeadKind::Mlp] {
            pipes.push((p, h));
        }
    }
    pipes.push((PoolingKind::None, HeadKind::ManyToMany));
    let mut out = Vec::new();
    for (p, h) in pipes {
        for label in [false, true] {
            for loss in [LossKind::Ce, LossKind::CeCenter, LossKind::HuberCe] {
                let mut c = base.clone();
                c.pooling.kind = p;
                c.classifier.kind = h;
                c.label.enabled = label;
                c.loss.kind = loss;
                out.push(c);
            }
        }
    }
    out
}

pub fn gradcheck_grid(base: &ModelConfig, dims: &GradcheckDims, exec: Execution) -> Vec<Result<GradcheckReport>> {
    let grid = pipeline_grid(base);
    parallel::map_slice(exec, &grid, |_, c| gradcheck(c, dims, None))
}
