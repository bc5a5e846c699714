use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierConfig, HeadKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::labelgraph::LabelConfig;
use crate::loss::LossConfig;
use crate::metrics::format_confidence;
use crate::parallel::{self, Execution};
use crate::pooling::{PoolingConfig, PoolingKind};

use super::{evaluate, train, AdamState, Model, ModelConfig};

/// The pipeline stage a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Pooling,
    Classifier,
    Labelgraph,
    Loss,
}

impl FromStr for Component {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooling" => Ok(Self::Pooling),
            "classifier" => Ok(Self::Classifier),
            "labelgraph" | "label" => Ok(Self::Labelgraph),
            "loss" => Ok(Self::Loss),
            _ => Err(Error::Config(format!(
                "unknown component `{s}` (expected pooling, classifier, labelgraph or loss)"
            ))),
        }
    }
}

impl Component {
    pub fn section(self) -> &'static str {
        match self {
            Self::Pooling => "pooling",
            Self::Classifier => "classifier",
            Self::Labelgraph => "label",
            Self::Loss => "loss",
        }
    }
}

/// One `[[candidates]]` entry: a name and a replacement for one config section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub name: String,
    pub pooling: Option<PoolingConfig>,
    pub classifier: Option<ClassifierConfig>,
    pub label: Option<LabelConfig>,
    pub loss: Option<LossConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateFile {
    candidates: Vec<Candidate>,
}

pub fn parse_candidates(text: &str) -> Result<Vec<Candidate>> {
    let f: CandidateFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if f.candidates.is_empty() {
        return Err(Error::Config("candidate file lists no candidates".into()));
    }
    Ok(f.candidates)
}

/// `base` with the candidate's section swapped in. A many-to-many classifier
/// candidate also switches pooling off, since that head reads frames directly.
pub fn apply_candidate(base: &ModelConfig, component: Component, cand: &Candidate) -> Result<ModelConfig> {
    let sections = [
        ("pooling", cand.pooling.is_some()),
        ("classifier", cand.classifier.is_some()),
        ("label", cand.label.is_some()),
        ("loss", cand.loss.is_some()),
    ];
    if let Some((other, _)) = sections.iter().find(|(s, set)| *set && *s != component.section()) {
        return Err(Error::Config(format!(
            "candidate `{}` sets [{other}] but the sweep varies [{}]",
            cand.name,
            component.section()
        )));
    }
    let missing = || Error::Config(format!("candidate `{}` has no [{}] section", cand.name, component.section()));
    let mut cfg = base.clone();
    match component {
        Component::Pooling => cfg.pooling = cand.pooling.clone().ok_or_else(missing)?,
        Component::Classifier => {
            cfg.classifier = cand.classifier.clone().ok_or_else(missing)?;
            if cfg.classifier.kind == HeadKind::ManyToMany {
                cfg.pooling.kind = PoolingKind::None;
            }
        }
        Component::Labelgraph => cfg.label = cand.label.clone().ok_or_else(missing)?,
        Component::Loss => cfg.loss = cand.loss.clone().ok_or_else(missing)?,
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub name: String,
    pub gap: Option<f64>,
    pub seed: u64,
    pub steps: u64,
    pub runtime_secs: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub component: Component,
    /// Successful rows by GAP descending (ties by candidate order), then failures.
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows.first().filter(|r| r.gap.is_some())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,method,gap_at_k,seed,steps,runtime_s,status\n");
        for (rank, r) in self.rows.iter().enumerate() {
            let gap = r.gap.map(format_confidence).unwrap_or_default();
            let status = match &r.error {
                None => "ok".to_string(),
                Some(e) => format!("failed: {}", e.replace([',', '\n'], ";")),
            };
            let _ = writeln!(
                out,
                "{},{},{gap},{},{},{:.3},{status}",
                rank + 1,
                r.name,
                r.seed,
                r.steps,
                r.runtime_secs
            );
        }
        out
    }
}

fn run_candidate(cfg: &ModelConfig, train_ds: &Dataset, val: &Dataset, exec: Execution) -> Result<(f64, u64)> {
    let mut model = Model::for_dataset(cfg, train_ds, exec)?;
    let mut adam = AdamState::from_config(&model.store, &cfg.train);
    train(&mut model, &mut adam, train_ds, None, exec, &mut |_, _| Ok(()))?;
    let (gap, _) = evaluate(&model, val, cfg.train.eval_k, exec)?;
    Ok((gap, adam.t))
}

/// Trains and scores one model per candidate with every other component
/// fixed at `base`. A failing candidate yields a failed row.
pub fn greedy_sweep(
    base: &ModelConfig,
    component: Component,
    candidates: &[Candidate],
    train_ds: &Dataset,
    val: &Dataset,
    exec: Execution,
) -> SweepReport {
    let mut rows = parallel::map_slice(exec, candidates, |index, cand| {
        let start = Instant::now();
        let outcome = apply_candidate(base, component, cand).and_then(|cfg| run_candidate(&cfg, train_ds, val, exec));
        let runtime_secs = start.elapsed().as_secs_f64();
        let (gap, steps, error) = match outcome {
            Ok((g, s)) => (Some(g), s, None),
            Err(e) => (None, 0, Some(format!("{}: {e}", e.kind()))),
        };
        SweepRow {
            index,
            name: cand.name.clone(),
            gap,
            seed: base.seed,
            steps,
            runtime_secs,
            error,
        }
    });
    rows.sort_by(|a, b| match (a.gap, b.gap) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.index.cmp(&b.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    });
    SweepReport { component, rows }
}
