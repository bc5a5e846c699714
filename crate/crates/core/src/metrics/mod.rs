//! Top-K extraction, GAP@K, and the prediction CSV format.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 20;
pub const CSV_HEADER: &str = "VideoId,LabelConfidencePairs";

/// `(class_id, confidence)`.
pub type Pair = (u32, f64);

/// Descending confidence, then ascending class id.
fn rank_order(a: &Pair, b: &Pair) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Sorts pairs into ranking order.
pub fn rank_pairs(pairs: &mut [Pair]) {
    pairs.sort_by(rank_order);
}

/// The `min(k, C)` highest scores, confidence descending, ties by class id.
pub fn top_k(scores: &[f64], k: usize) -> Vec<Pair> {
    let mut pairs: Vec<Pair> = scores.iter().enumerate().map(|(c, &s)| (c as u32, s)).collect();
    pairs.sort_by(rank_order);
    pairs.truncate(k);
    pairs
}

/// One row of a prediction file.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoPrediction {
    pub video_id: String,
    /// Confidence-descending, no duplicate classes.
    pub pairs: Vec<Pair>,
}

impl VideoPrediction {
    /// Top-K of `scores`, each confidence rounded to what the CSV stores.
    pub fn from_scores(video_id: impl Into<String>, scores: &[f64], k: usize) -> Self {
        let mut pairs: Vec<Pair> = top_k(scores, scores.len())
            .into_iter()
            .map(|(c, s)| (c, quantize(s)))
            .collect();
        pairs.sort_by(rank_order);
        pairs.truncate(k);
        Self {
            video_id: video_id.into(),
            pairs,
        }
    }
}

/// GAP over the pooled top-`k` pairs of every video, normalized by the total
/// number of ground-truth labels. `truth[i]` belongs to `preds[i]`.
pub fn gap_at_k(preds: &[VideoPrediction], truth: &[Vec<u32>], k: usize) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} ground-truth rows",
            preds.len(),
            truth.len()
        )));
    }
    let total: usize = truth.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::UndefinedMetric("GAP with no ground-truth labels".into()));
    }
    // (confidence, video, class, positive)
    let mut pooled: Vec<(f64, usize, u32, bool)> = Vec::new();
    for (v, (p, t)) in preds.iter().zip(truth).enumerate() {
        let mut pairs = p.pairs.clone();
        pairs.sort_by(rank_order);
        for &(c, s) in pairs.iter().take(k) {
            pooled.push((s, v, c, t.contains(&c)));
        }
    }
    pooled.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (i, &(_, _, _, pos)) in pooled.iter().enumerate() {
        if pos {
            hits += 1;
            acc += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(acc / total as f64)
}

/// Nearest double to `x` printed with 6 significant digits.
pub fn quantize(x: f64) -> f64 {
    format_confidence(x).parse().unwrap_or(x)
}

/// C `%g` formatting with 6 significant digits.
pub fn format_confidence(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{x:.*}", (5 - exp) as usize)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn predictions_to_csv(rows: &[VideoPrediction]) -> String {
    let mut out = String::with_capacity(64 * rows.len() + 32);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.video_id);
        out.push(',');
        for (i, (c, s)) in r.pairs.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{c} {}", format_confidence(*s));
        }
        out.push('\n');
    }
    out
}

pub fn predictions_from_csv(text: &str) -> Result<Vec<VideoPrediction>> {
    let mut offset = 0u64;
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().unwrap_or("");
    if header.trim_end_matches(['\r', '\n']) != CSV_HEADER {
        return Err(Error::Format {
            offset: 0,
            msg: format!("expected header `{CSV_HEADER}`"),
        });
    }
    offset += header.len() as u64;
    let mut rows = Vec::new();
    for raw in lines {
        let line = raw.trim_end_matches(['\r', '\n']);
        let bad = |msg: String| Error::Format { offset, msg };
        if line.is_empty() {
            offset += raw.len() as u64;
            continue;
        }
        let (id, rest) = line
            .split_once(',')
            .ok_or_else(|| bad("row has no comma".into()))?;
        if id.is_empty() {
            return Err(bad("empty video id".into()));
        }
        let toks: Vec<&str> = rest.split_whitespace().collect();
        if !toks.len().is_multiple_of(2) {
            return Err(bad(format!("odd number of fields in row `{id}`")));
        }
        let mut pairs = Vec::with_capacity(toks.len() / 2);
        for ch in toks.chunks(2) {
            let c: u32 = ch[0].parse().map_err(|_| bad(format!("bad class id `{}`", ch[0])))?;
            let s: f64 = ch[1].parse().map_err(|_| bad(format!("bad confidence `{}`", ch[1])))?;
            if !(0.0..=1.0).contains(&s) {
                return Err(bad(format!("confidence {s} outside [0,1]")));
            }
            if pairs.iter().any(|p: &Pair| p.0 == c) {
                return Err(bad(format!("duplicate class {c} in row `{id}`")));
            }
            pairs.push((c, s));
        }
        rows.push(VideoPrediction {
            video_id: id.to_string(),
            pairs,
        });
        offset += raw.len() as u64;
    }
    Ok(rows)
}

pub fn write_predictions(rows: &[VideoPrediction], path: &Path) -> Result<()> {
    fs::write(path, predictions_to_csv(rows))?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<VideoPrediction>> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Format {
        offset: e.utf8_error().valid_up_to() as u64,
        msg: "prediction file is not UTF-8".into(),
    })?;
    predictions_from_csv(&text)
}
