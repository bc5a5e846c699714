//! Synthetic imbalanced multi-label dataset generation, the `Y8MS` binary
//! dataset format, and per-class label statistics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};
use crate::parallel::{self, Execution};
use crate::pooling::FeatureSequence;

pub const DATASET_MAGIC: &[u8; 4] = b"Y8MS";
pub const DATASET_VERSION: u8 = 1;

pub const SPLITS: [&str; 3] = ["train", "validate", "test"];

/// A collection of videos sharing one class count and feature width.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub dim: usize,
    pub videos: Vec<FeatureSequence>,
}

impl Dataset {
    pub fn new(num_classes: usize, dim: usize, videos: Vec<FeatureSequence>) -> Result<Self> {
        let ds = Self {
            num_classes,
            dim,
            videos,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for v in &self.videos {
            if v.dim() != self.dim {
                return Err(Error::Data(format!(
                    "video {} has width {}, dataset expects {}",
                    v.video_id,
                    v.dim(),
                    self.dim
                )));
            }
            if let Some(&bad) = v.labels.iter().find(|&&l| l as usize >= self.num_classes) {
                return Err(Error::Data(format!(
                    "video {} has label {bad} outside [0, {})",
                    v.video_id, self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Concatenate another split with the same dimensions.
    pub fn merged(&self, other: &Dataset) -> Result<Dataset> {
        if self.num_classes != other.num_classes || self.dim != other.dim {
            return Err(Error::Data("cannot merge datasets of different dimensions".into()));
        }
        let mut videos = self.videos.clone();
        videos.extend(other.videos.iter().cloned());
        Ok(Dataset {
            num_classes: self.num_classes,
            dim: self.dim,
            videos,
        })
    }
}

// ---------------------------------------------------------------------------
// Label statistics

/// Per-class example counts.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LabelStats {
    pub counts: Vec<u64>,
    pub total_videos: u64,
}

impl LabelStats {
    pub fn count(&self, class: u32) -> u64 {
        self.counts.get(class as usize).copied().unwrap_or(0)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }
}

pub fn label_stats(ds: &Dataset) -> LabelStats {
    let mut counts = vec![0u64; ds.num_classes];
    for v in &ds.videos {
        for &l in &v.labels {
            counts[l as usize] += 1;
        }
    }
    LabelStats {
        counts,
        total_videos: ds.videos.len() as u64,
    }
}

/// `class_id,count` rows.
pub fn label_stats_csv(stats: &LabelStats) -> String {
    let mut out = String::from("class_id,count\n");
    for (c, n) in stats.counts.iter().enumerate() {
        let _ = writeln!(out, "{c},{n}");
    }
    out
}

// ---------------------------------------------------------------------------
// Generator

/// Parameters of the synthetic generator. Every key has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// Total videos across all three splits.
    pub num_videos: usize,
    pub num_classes: usize,
    /// Feature width (visual part followed by audio part).
    pub dim: usize,
    /// Trailing columns treated as the separately normalized audio part.
    pub audio_dim: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub num_label_groups: usize,
    /// Group and within-group class popularity ∝ rank^(−exponent).
    pub imbalance_exponent: f64,
    pub noise_sigma: f64,
    pub max_labels: usize,
    /// L2-normalize the visual and audio parts of every frame.
    pub l2_normalize: bool,
    pub train_fraction: f64,
    pub validate_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_videos: 5000,
            num_classes: 50,
            dim: 64,
            audio_dim: 16,
            t_min: 5,
            t_max: 30,
            num_label_groups: 10,
            imbalance_exponent: 1.0,
            noise_sigma: 0.1,
            max_labels: 4,
            l2_normalize: true,
            train_fraction: 0.8,
            validate_fraction: 0.1,
            seed: 17,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.t_min < 5 {
            return fail(format!("t_min must be at least 5, got {}", self.t_min));
        }
        if self.t_max < self.t_min {
            return fail(format!("t_max {} < t_min {}", self.t_max, self.t_min));
        }
        if self.num_label_groups == 0 || self.num_classes < self.num_label_groups {
            return fail(format!(
                "need 1 <= num_label_groups <= num_classes, got {} groups for {} classes",
                self.num_label_groups, self.num_classes
            ));
        }
        if !(self.imbalance_exponent >= 0.0 && self.imbalance_exponent.is_finite()) {
            return fail("imbalance_exponent must be finite and >= 0".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be finite and >= 0".into());
        }
        if self.dim == 0 || self.audio_dim >= self.dim {
            return fail(format!("need 0 <= audio_dim < dim, got {} / {}", self.audio_dim, self.dim));
        }
        if self.max_labels == 0 {
            return fail("max_labels must be positive".into());
        }
        let tv = self.train_fraction + self.validate_fraction;
        if self.train_fraction <= 0.0 || self.validate_fraction < 0.0 || tv > 1.0 {
            return fail("split fractions must satisfy 0 < train, 0 <= validate, train + validate <= 1".into());
        }
        if self.split_sizes()[0] < self.num_classes {
            return fail(format!(
                "training split of {} videos cannot cover {} classes",
                self.split_sizes()[0],
                self.num_classes
            ));
        }
        Ok(())
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        let n = self.num_videos;
        let train = ((n as f64 * self.train_fraction).round() as usize).min(n);
        let val = ((n as f64 * self.validate_fraction).round() as usize).min(n - train);
        [train, val, n - train - val]
    }

    /// Group owning `class` (contiguous, balanced blocks).
    pub fn group_of(&self, class: usize) -> usize {
        class * self.num_label_groups / self.num_classes
    }

    pub fn group_members(&self, group: usize) -> Vec<usize> {
        (0..self.num_classes).filter(|&c| self.group_of(c) == group).collect()
    }
}

/// Train / validate / test splits produced by [`generate_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSplits {
    pub train: Dataset,
    pub validate: Dataset,
    pub test: Dataset,
}

impl GeneratedSplits {
    pub fn split(&self, name: &str) -> Option<&Dataset> {
        match name {
            "train" => Some(&self.train),
            "validate" => Some(&self.validate),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

fn random_unit(rng: &mut RngStream, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn power_weights(n: usize, exponent: f64) -> Vec<f64> {
    (0..n).map(|r| ((r + 1) as f64).powf(-exponent)).collect()
}

/// Class prototypes: each class direction mixes its group's direction with
/// a class-specific one, so classes of one group are similar but separable.
pub fn class_prototypes(spec: &DatasetSpec) -> Vec<Vec<f64>> {
    let mut rng = RngStream::new(spec.seed).derive_named("prototypes");
    let groups: Vec<Vec<f64>> = (0..spec.num_label_groups).map(|_| random_unit(&mut rng, spec.dim)).collect();
    (0..spec.num_classes)
        .map(|c| {
            let own = random_unit(&mut rng, spec.dim);
            let g = &groups[spec.group_of(c)];
            let mut p: Vec<f64> = g.iter().zip(&own).map(|(a, b)| 0.6 * a + 0.8 * b).collect();
            normalize(&mut p);
            p
        })
        .collect()
}

/// Draw up to `k` distinct members proportionally to `weights`.
fn sample_without_replacement(rng: &mut RngStream, members: &[usize], weights: &[f64], k: usize) -> Vec<usize> {
    let mut pool: Vec<(usize, f64)> = members.iter().copied().zip(weights.iter().copied()).collect();
    let mut out = Vec::with_capacity(k);
    while out.len() < k && !pool.is_empty() {
        let w: Vec<f64> = pool.iter().map(|p| p.1).collect();
        let i = rng.weighted_index(&w);
        out.push(pool.remove(i).0);
    }
    out
}

fn generate_video(spec: &DatasetSpec, protos: &[Vec<f64>], index: usize) -> Result<FeatureSequence> {
    let mut rng = RngStream::new(spec.seed).derive(index as u64);
    let group_w = power_weights(spec.num_label_groups, spec.imbalance_exponent);

    // The first `num_classes` videos each start from a distinct class so that
    // every class has at least one training example.
    let (group, primary) = if index < spec.num_classes {
        (spec.group_of(index), index)
    } else {
        let g = rng.weighted_index(&group_w);
        let members = spec.group_members(g);
        let w = power_weights(members.len(), spec.imbalance_exponent);
        (g, members[rng.weighted_index(&w)])
    };
    let members = spec.group_members(group);
    let member_w = power_weights(members.len(), spec.imbalance_exponent);
    let n_labels = 1 + rng.index(spec.max_labels.min(members.len()));
    let (others, other_w): (Vec<usize>, Vec<f64>) = members
        .iter()
        .zip(&member_w)
        .filter(|(c, _)| **c != primary)
        .map(|(c, w)| (*c, *w))
        .unzip();
    let secondary = sample_without_replacement(&mut rng, &others, &other_w, n_labels - 1);

    let steps = spec.t_min + rng.index(spec.t_max - spec.t_min + 1);
    let main_len = ((steps as f64) * (0.5 + 0.3 * rng.uniform())).ceil() as usize;
    let main_len = main_len.clamp(steps.div_ceil(2), steps);
    let main_start = rng.index(steps - main_len + 1);
    let background = random_unit(&mut rng, spec.dim);

    let d = spec.dim;
    let visual = d - spec.audio_dim;
    let mut frames = Vec::with_capacity(steps * d);
    for t in 0..steps {
        let source: &[f64] = if (main_start..main_start + main_len).contains(&t) {
            &protos[primary]
        } else if !secondary.is_empty() && rng.uniform() < 0.8 {
            &protos[secondary[rng.index(secondary.len())]]
        } else {
            &background
        };
        let mut frame: Vec<f64> = source.iter().map(|p| p + spec.noise_sigma * rng.normal()).collect();
        if spec.l2_normalize {
            normalize(&mut frame[..visual]);
            normalize(&mut frame[visual..]);
        }
        // Stored as 32-bit; keep the in-memory copy identical to what is written.
        frames.extend(frame.iter().map(|v| *v as f32 as f64));
    }
    let mut labels: Vec<u32> = secondary.iter().map(|&c| c as u32).collect();
    labels.push(primary as u32);
    FeatureSequence::new(format!("vid{index:06}"), labels, Tensor::new(&[steps, d], frames)?)
}

/// Deterministic under `spec.seed`; independent of thread count.
pub fn generate_dataset(spec: &DatasetSpec, exec: Execution) -> Result<GeneratedSplits> {
    spec.validate()?;
    let protos = class_prototypes(spec);
    let videos = parallel::map_range(exec, spec.num_videos, |i| generate_video(spec, &protos, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let [n_train, n_val, _] = spec.split_sizes();
    let mut it = videos.into_iter();
    let mut take = |n: usize| Dataset {
        num_classes: spec.num_classes,
        dim: spec.dim,
        videos: it.by_ref().take(n).collect(),
    };
    let train = take(n_train);
    let validate = take(n_val);
    let test = take(usize::MAX);
    Ok(GeneratedSplits { train, validate, test })
}

/// Writes `train.y8ms`, `validate.y8ms`, `test.y8ms` and `dataset.toml`.
pub fn write_splits(splits: &GeneratedSplits, spec: &DatasetSpec, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for name in SPLITS {
        write_dataset(splits.split(name).expect("known split"), &dir.join(format!("{name}.y8ms")))?;
    }
    let text = toml::to_string(spec).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("dataset.toml"), text)?;
    Ok(())
}

pub fn read_split(dir: &Path, name: &str) -> Result<Dataset> {
    read_dataset(&dir.join(format!("{name}.y8ms")))
}

// ---------------------------------------------------------------------------
// Y8MS binary format

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.push(DATASET_VERSION);
    out.extend_from_slice(&u32_of(ds.num_classes)?.to_le_bytes());
    out.extend_from_slice(&u32_of(ds.dim)?.to_le_bytes());
    for v in &ds.videos {
        if v.dim() != ds.dim {
            return Err(Error::Data(format!("video {} width {} != {}", v.video_id, v.dim(), ds.dim)));
        }
        let id = v.video_id.as_bytes();
        out.extend_from_slice(&u32_of(id.len())?.to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&u32_of(v.labels.len())?.to_le_bytes());
        for l in &v.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out.extend_from_slice(&u32_of(v.num_frames())?.to_le_bytes());
        for x in v.frames.values() {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_of(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Data(format!("{n} does not fit in 32 bits")))
}

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    pub(crate) fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4, "magic")? != DATASET_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, expected Y8MS".into(),
        });
    }
    let version = cur.u8("version")?;
    if version != DATASET_VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let num_classes = cur.u32("class count")? as usize;
    let dim = cur.u32("feature width")? as usize;
    if dim == 0 {
        return Err(cur.err("feature width must be positive"));
    }
    let mut videos = Vec::new();
    while !cur.at_end() {
        let start = cur.offset();
        let id_len = cur.u32("id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "video id")?)
            .map_err(|_| Error::Format {
                offset: start + 4,
                msg: "video id is not UTF-8".into(),
            })?
            .to_string();
        let n_labels = cur.u32("label count")? as usize;
        let mut labels = Vec::with_capacity(n_labels.min(1024));
        for _ in 0..n_labels {
            let l = cur.u32("label")?;
            if l as usize >= num_classes {
                return Err(cur.err(format!("label {l} outside [0, {num_classes})")));
            }
            labels.push(l);
        }
        let steps = cur.u32("frame count")? as usize;
        if steps == 0 {
            return Err(cur.err("video has zero frames"));
        }
        let n = steps
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| cur.err("frame block size overflows"))?;
        let raw = cur.take(n, "frames")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        videos.push(FeatureSequence::new(id, labels, Tensor::new(&[steps, dim], values)?)?);
    }
    Ok(Dataset {
        num_classes,
        dim,
        videos,
    })
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}
