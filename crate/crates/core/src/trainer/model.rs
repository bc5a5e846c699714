use crate::classifier::Head;
use crate::data::{label_stats, Dataset, LabelStats};
use crate::error::{Error, Result};
use crate::labelgraph::{build_cooccurrence, build_correlation, LabelLayer};
use crate::loss::{clamp_probs, video_loss, CenterTable, LossKind};
use crate::numerics::{Mode, ParamStore, RngStream, Tape, Tensor, Var};
use crate::parallel::Execution;
use crate::pooling::{Encoder, FeatureSequence};

use super::ModelConfig;

/// Probabilities after the label layer and clamp, plus the center-loss embedding.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub probs: Var,
    pub embedding: Var,
}

/// A configured pipeline with its parameters and the training-set statistics
/// it depends on (label counts for adaptive noise, the correlation matrix).
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub input_dim: usize,
    pub num_classes: usize,
    pub stats: LabelStats,
    pub store: ParamStore,
    pub encoder: Option<Encoder>,
    pub head: Head,
    pub label: Option<LabelLayer>,
    pub centers: Option<CenterTable>,
}

impl Model {
    /// Builds a freshly initialized model. `correlation` is required when the
    /// label layer is enabled.
    pub fn build(
        config: &ModelConfig,
        input_dim: usize,
        num_classes: usize,
        stats: LabelStats,
        correlation: Option<Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::Config("input width and class count must be positive".into()));
        }
        if stats.num_classes() != num_classes {
            return Err(Error::Config(format!(
                "label statistics cover {} classes, model has {num_classes}",
                stats.num_classes()
            )));
        }
        let rng = RngStream::new(config.seed).derive_named("init");
        let mut store = ParamStore::new();
        let (encoder, head_in) = if config.classifier.kind == crate::classifier::HeadKind::ManyToMany {
            (None, input_dim)
        } else {
            let enc = Encoder::build(&config.pooling, input_dim, &mut store, &rng)?;
            let out = enc.output_dim(input_dim);
            (Some(enc), out)
        };
        let head = Head::build(&config.classifier, head_in, num_classes, &mut store, &rng)?;
        let label = if config.label.enabled {
            let m = correlation.ok_or_else(|| Error::Config("label layer needs a correlation matrix".into()))?;
            if m.shape() != [num_classes, num_classes] {
                return Err(Error::dim("correlation", m.shape(), &[num_classes, num_classes]));
            }
            Some(LabelLayer::build(&config.label, m, &mut store)?)
        } else {
            None
        };
        let centers = if config.loss.kind == LossKind::CeCenter {
            Some(CenterTable::register(&mut store, num_classes, head.embedding_dim(head_in), &rng)?)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            input_dim,
            num_classes,
            stats,
            store,
            encoder,
            head,
            label,
            centers,
        })
    }

    /// Builds a model whose statistics come from `train`.
    pub fn for_dataset(config: &ModelConfig, train: &Dataset, exec: Execution) -> Result<Self> {
        let stats = label_stats(train);
        let correlation = if config.label.enabled {
            let co = build_cooccurrence(train, exec)?;
            Some(build_correlation(
                &co,
                config.label.normalization,
                config.label.sparsity_threshold,
            ))
        } else {
            None
        };
        Self::build(config, train.dim, train.num_classes, stats, correlation)
    }

    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.dim != self.input_dim || ds.num_classes != self.num_classes {
            return Err(Error::Config(format!(
                "dataset is {}-dimensional with {} classes, model expects {} and {}",
                ds.dim, ds.num_classes, self.input_dim, self.num_classes
            )));
        }
        Ok(())
    }

    pub fn min_frames(&self) -> usize {
        self.encoder.as_ref().map_or(1, Encoder::min_frames)
    }

    /// Pipeline on a frames variable already on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        frames: Var,
        labels: &[u32],
        rng: &mut RngStream,
        mode: Mode,
    ) -> Result<Forward> {
        let input = match &self.encoder {
            Some(enc) => enc.forward(tape, frames, labels, &self.stats, rng, mode)?,
            None => frames,
        };
        let out = self.head.forward(tape, input, rng, mode)?;
        let mixed = match &self.label {
            Some(l) => l.apply(tape, out.probs)?,
            None => out.probs,
        };
        Ok(Forward {
            probs: clamp_probs(tape, mixed, self.config.loss.clamp_eps),
            embedding: out.embedding,
        })
    }

    /// Per-video training objective.
    pub fn loss(&self, tape: &mut Tape, frames: Var, labels: &[u32], rng: &mut RngStream, mode: Mode) -> Result<Var> {
        let f = self.forward(tape, frames, labels, rng, mode)?;
        video_loss(tape, &self.config.loss, f.probs, f.embedding, labels, self.centers.as_ref())
    }

    /// Eval-mode class probabilities.
    pub fn predict(&self, video: &FeatureSequence) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let frames = tape.constant(video.frames.clone());
        let mut rng = RngStream::new(0);
        let f = self.forward(&mut tape, frames, &video.labels, &mut rng, Mode::Eval)?;
        Ok(tape.value(f.probs).values().to_vec())
    }

    /// Eval-mode center-loss embedding.
    pub fn embed(&self, video: &FeatureSequence) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let frames = tape.constant(video.frames.clone());
        let mut rng = RngStream::new(0);
        let f = self.forward(&mut tape, frames, &video.labels, &mut rng, Mode::Eval)?;
        Ok(tape.value(f.embedding).values().to_vec())
    }
}
