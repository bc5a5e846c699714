use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::metrics::{quantize, rank_pairs, Pair, VideoPrediction};

/// Per video and class, the mean confidence across members (a class missing
/// from a member's top-K counts as 0), re-ranked and cut to `k`.
/// Rows follow the first member's order.
pub fn ensemble_average(members: &[Vec<VideoPrediction>], k: usize) -> Result<Vec<VideoPrediction>> {
    let Some(first) = members.first() else {
        return Err(Error::Input("ensemble needs at least one member".into()));
    };
    let ids: HashSet<&str> = first.iter().map(|r| r.video_id.as_str()).collect();
    if ids.len() != first.len() {
        return Err(Error::Input("member 0 repeats a video id".into()));
    }
    let mut indexed: Vec<HashMap<&str, &VideoPrediction>> = Vec::with_capacity(members.len());
    for (m, rows) in members.iter().enumerate() {
        let map: HashMap<&str, &VideoPrediction> = rows.iter().map(|r| (r.video_id.as_str(), r)).collect();
        let these: HashSet<&str> = map.keys().copied().collect();
        if map.len() != rows.len() || these != ids {
            let mut missing: Vec<&str> = ids.difference(&these).copied().collect();
            let mut extra: Vec<&str> = these.difference(&ids).copied().collect();
            missing.sort_unstable();
            extra.sort_unstable();
            return Err(Error::Input(format!(
                "member {m} video ids differ from member 0: missing {missing:?}, extra {extra:?}{}",
                if map.len() != rows.len() { ", duplicates present" } else { "" }
            )));
        }
        indexed.push(map);
    }
    let n = members.len() as f64;
    Ok(first
        .iter()
        .map(|row| {
            let mut sums: BTreeMap<u32, f64> = BTreeMap::new();
            for member in &indexed {
                for &(c, s) in &member[row.video_id.as_str()].pairs {
                    *sums.entry(c).or_insert(0.0) += s;
                }
            }
            let mut pairs: Vec<Pair> = sums.into_iter().map(|(c, s)| (c, quantize(s / n))).collect();
            rank_pairs(&mut pairs);
            pairs.truncate(k);
            VideoPrediction {
                video_id: row.video_id.clone(),
                pairs,
            }
        })
        .collect())
}
