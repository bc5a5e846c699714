use std::fs;
use std::path::Path;

use crate::data::{Cursor, LabelStats};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::{AdamState, Model, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MVCK";
pub const CHECKPOINT_VERSION: u8 = 1;

fn put_u32(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Data(format!("{n} does not fit in 32 bits")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Layout (little-endian): magic, version, config TOML (u32 length + bytes),
/// SHA-256 of that TOML, input width, class count, label statistics,
/// optional correlation matrix, named parameters, Adam state.
pub fn encode_checkpoint(model: &Model, adam: &AdamState) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    let toml = model.config.to_toml();
    put_u32(&mut out, toml.len())?;
    out.extend_from_slice(toml.as_bytes());
    out.extend_from_slice(&model.config.hash());
    put_u32(&mut out, model.input_dim)?;
    put_u32(&mut out, model.num_classes)?;
    out.extend_from_slice(&model.stats.total_videos.to_le_bytes());
    for c in &model.stats.counts {
        out.extend_from_slice(&c.to_le_bytes());
    }
    match &model.label {
        Some(l) => {
            out.push(1);
            put_f64s(&mut out, l.m.values());
        }
        None => out.push(0),
    }
    put_u32(&mut out, model.store.len())?;
    for (_, name, t) in model.store.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        put_f64s(&mut out, t.values());
    }
    if adam.m.len() != model.store.len() {
        return Err(Error::dim("checkpoint", &[adam.m.len()], &[model.store.len()]));
    }
    put_f64s(&mut out, &[adam.beta1, adam.beta2, adam.epsilon]);
    out.extend_from_slice(&adam.t.to_le_bytes());
    for (m, v) in adam.m.iter().zip(&adam.v) {
        put_f64s(&mut out, m);
        put_f64s(&mut out, v);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, AdamState)> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, expected MVCK".into(),
        });
    }
    let version = cur.u8("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported checkpoint version {version}"),
        });
    }
    let toml_len = cur.u32("config length")? as usize;
    let toml_at = cur.offset();
    let toml = std::str::from_utf8(cur.take(toml_len, "config")?).map_err(|_| Error::Format {
        offset: toml_at,
        msg: "config is not UTF-8".into(),
    })?;
    let config = ModelConfig::from_toml(toml).map_err(|e| Error::Format {
        offset: toml_at,
        msg: format!("embedded config: {e}"),
    })?;
    let hash_at = cur.offset();
    if cur.take(32, "config hash")? != config.hash() {
        return Err(Error::Format {
            offset: hash_at,
            msg: "config hash does not match embedded config".into(),
        });
    }
    let input_dim = cur.u32("input width")? as usize;
    let num_classes = cur.u32("class count")? as usize;
    if num_classes == 0 || num_classes > bytes.len() {
        return Err(cur.err(format!("implausible class count {num_classes}")));
    }
    let total_videos = cur.u64("video count")?;
    let mut counts = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        counts.push(cur.u64("label count")?);
    }
    let stats = LabelStats { counts, total_videos };
    let matrix = match cur.u8("matrix flag")? {
        0 => None,
        1 => {
            let n = num_classes * num_classes;
            if n * 8 > bytes.len() {
                return Err(cur.err("correlation matrix exceeds file size"));
            }
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(cur.f64("matrix entry")?);
            }
            Some(Tensor::new(&[num_classes, num_classes], v)?)
        }
        f => return Err(cur.err(format!("bad matrix flag {f}"))),
    };
    let mut model = Model::build(&config, input_dim, num_classes, stats, matrix).map_err(|e| Error::Format {
        offset: cur.offset(),
        msg: format!("cannot rebuild model: {e}"),
    })?;
    let n_params = cur.u32("parameter count")? as usize;
    if n_params != model.store.len() {
        return Err(cur.err(format!("{n_params} parameters stored, config implies {}", model.store.len())));
    }
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids.iter().copied() {
        let at = cur.offset();
        let name_len = cur.u32("parameter name length")? as usize;
        let name = cur.take(name_len, "parameter name")?;
        if name != model.store.name(id).as_bytes() {
            return Err(Error::Format {
                offset: at,
                msg: format!("expected parameter `{}`", model.store.name(id)),
            });
        }
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(cur.u32("extent")? as usize);
        }
        if shape != model.store.get(id).shape() {
            return Err(Error::Format {
                offset: at,
                msg: format!(
                    "parameter `{}` has shape {shape:?}, expected {:?}",
                    model.store.name(id),
                    model.store.get(id).shape()
                ),
            });
        }
        for v in model.store.get_mut(id).values_mut() {
            *v = cur.f64("parameter value")?;
        }
    }
    let (beta1, beta2, epsilon) = (cur.f64("beta1")?, cur.f64("beta2")?, cur.f64("epsilon")?);
    let mut adam = AdamState::new(&model.store, beta1, beta2, epsilon);
    adam.t = cur.u64("step")?;
    for k in 0..ids.len() {
        for slot in [&mut adam.m[k], &mut adam.v[k]] {
            for x in slot.iter_mut() {
                *x = cur.f64("moment")?;
            }
        }
    }
    if !cur.at_end() {
        return Err(cur.err("trailing bytes after checkpoint"));
    }
    Ok((model, adam))
}

pub fn write_checkpoint(model: &Model, adam: &AdamState, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model, adam)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(Model, AdamState)> {
    decode_checkpoint(&fs::read(path)?)
}
