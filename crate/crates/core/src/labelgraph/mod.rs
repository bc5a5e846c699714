//! Label co-occurrence statistics and the label-correlation mixing layer
//! `O_c = α·O_h + β·M·O_h + γ·M′·O_h`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Cursor, Dataset};
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::parallel::{self, Execution};

pub const MATRIX_MAGIC: &[u8; 4] = b"LGC1";

/// How co-occurrence counts become correlations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `n_ij / √(n_ii · n_jj)`; symmetric.
    #[default]
    Ochiai,
    /// `n_ij / n_ii`, the conditional frequency of `j` given `i`.
    Conditional,
}

/// `[label]` section of a model config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub enabled: bool,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub normalization: Normalization,
    /// Correlations below this value are zeroed.
    pub sparsity_threshold: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            normalization: Normalization::Ochiai,
            sparsity_threshold: 0.0,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if ![self.alpha, self.beta, self.gamma, self.sparsity_threshold]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Config("label layer coefficients must be finite".into()));
        }
        if self.sparsity_threshold < 0.0 {
            return Err(Error::Config("sparsity_threshold must be >= 0".into()));
        }
        Ok(())
    }
}

/// Symmetric `C×C` table: diagonal holds per-class video counts,
/// off-diagonal the number of videos carrying both labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cooccurrence {
    pub num_classes: usize,
    pub counts: Vec<u64>,
}

impl Cooccurrence {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.num_classes + j]
    }

    fn add_labels(&mut self, labels: &[u32]) -> Result<()> {
        let c = self.num_classes;
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
            return Err(Error::Data(format!("label {bad} outside [0, {c})")));
        }
        for &a in labels {
            for &b in labels {
                self.counts[a as usize * c + b as usize] += 1;
            }
        }
        Ok(())
    }

    /// `class_i,class_j,count` rows for non-zero entries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_i,class_j,count\n");
        for i in 0..self.num_classes {
            for j in 0..self.num_classes {
                let n = self.get(i, j);
                if n > 0 {
                    out.push_str(&format!("{i},{j},{n}\n"));
                }
            }
        }
        out
    }
}

const SHARD: usize = 256;

/// Pairwise label counts. Shards of videos are counted independently and
/// summed in shard order.
pub fn build_cooccurrence(ds: &Dataset, exec: Execution) -> Result<Cooccurrence> {
    let shards = parallel::map_chunks(exec, &ds.videos, SHARD, |_, chunk| {
        let mut t = Cooccurrence::zeros(ds.num_classes);
        for v in chunk {
            t.add_labels(&v.labels)?;
        }
        Ok::<_, Error>(t)
    });
    let mut total = Cooccurrence::zeros(ds.num_classes);
    for shard in shards {
        let shard = shard?;
        total.counts.iter_mut().zip(&shard.counts).for_each(|(a, b)| *a += b);
    }
    Ok(total)
}

/// Correlation matrix from counts. Rows or columns of unseen classes are zero.
pub fn build_correlation(co: &Cooccurrence, norm: Normalization, threshold: f64) -> Tensor {
    let c = co.num_classes;
    let mut m = Tensor::zeros(&[c.max(1), c.max(1)]);
    for i in 0..c {
        for j in 0..c {
            let (nij, nii, njj) = (co.get(i, j) as f64, co.get(i, i) as f64, co.get(j, j) as f64);
            let v = match norm {
                Normalization::Ochiai if nii > 0.0 && njj > 0.0 => nij / (nii * njj).sqrt(),
                Normalization::Conditional if nii > 0.0 => nij / nii,
                _ => 0.0,
            };
            m.values_mut()[i * c + j] = if v < threshold { 0.0 } else { v };
        }
    }
    m
}

/// Fixed `M` plus the trainable copy `M′` initialized to the same values.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelLayer {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub m: Tensor,
    pub m_prime: ParamId,
}

pub const M_PRIME_PARAM: &str = "label.m_prime";

impl LabelLayer {
    pub fn build(cfg: &LabelConfig, m: Tensor, store: &mut ParamStore) -> Result<Self> {
        cfg.validate()?;
        let m_prime = store.add(M_PRIME_PARAM, m.clone())?;
        Ok(Self {
            alpha: cfg.alpha,
            beta: cfg.beta,
            gamma: cfg.gamma,
            m,
            m_prime,
        })
    }

    /// Linear mix of the head scores; no clamping. Zero-coefficient terms are skipped.
    pub fn apply(&self, tape: &mut Tape, scores: Var) -> Result<Var> {
        let c = self.m.rows();
        if tape.value(scores).len() != c {
            return Err(Error::dim("label_layer", tape.shape(scores), self.m.shape()));
        }
        let mut out = tape.scale(scores, self.alpha);
        if self.beta != 0.0 {
            let m = tape.constant(self.m.clone());
            let mo = tape.matmul_nt(scores, m)?;
            let mo = tape.scale(mo, self.beta);
            out = tape.add(out, mo)?;
        }
        if self.gamma != 0.0 {
            let mp = tape.param(self.m_prime);
            let mo = tape.matmul_nt(scores, mp)?;
            let mo = tape.scale(mo, self.gamma);
            out = tape.add(out, mo)?;
        }
        Ok(out)
    }
}

/// `LGC1`, `C` as u32 LE, then `C²` f64 LE row-major.
pub fn encode_matrix(m: &Tensor) -> Result<Vec<u8>> {
    let c = m.rows();
    if m.shape() != [c, c] {
        return Err(Error::Data(format!("correlation matrix must be square, got {:?}", m.shape())));
    }
    let c32 = u32::try_from(c).map_err(|_| Error::Data("matrix too large".into()))?;
    let mut out = Vec::with_capacity(8 + 8 * c * c);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&c32.to_le_bytes());
    for v in m.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4, "magic")? != MATRIX_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, expected LGC1".into(),
        });
    }
    let c = cur.u32("class count")? as usize;
    if c == 0 {
        return Err(cur.err("class count must be positive"));
    }
    let mut values = Vec::with_capacity(c * c);
    for _ in 0..c * c {
        values.push(cur.f64("matrix entry")?);
    }
    if !cur.at_end() {
        return Err(cur.err("trailing bytes after matrix"));
    }
    Tensor::new(&[c, c], values)
}

pub fn write_matrix(m: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_matrix(m)?)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Tensor> {
    decode_matrix(&fs::read(path)?)
}
