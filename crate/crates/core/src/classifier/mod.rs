//! Classification heads: per-class probabilities from a pooled vector
//! (or, for the many-to-many head, straight from the frame sequence).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Mode, ParamId, ParamStore, RngStream, Tape, Var};
use crate::pooling::{lstm_recurrence, LstmOptions, LstmParams, LAYER_NORM_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    #[default]
    Moe,
    Moe2,
    Mlp,
    ManyToMany,
}

/// `[classifier]` section of a model config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub kind: HeadKind,
    /// Experts per class `E`.
    pub experts: usize,
    /// Shared hidden width `h` of the 2-layer mixture.
    pub moe2_hidden: usize,
    pub mlp_hidden: usize,
    pub mlp_layer_norm: bool,
    pub m2m_cell_size: usize,
    pub m2m_layer_norm: bool,
    /// Drop probability on the recurrent hidden state of the many-to-many LSTM.
    pub m2m_drop_prob: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            kind: HeadKind::Moe,
            experts: 2,
            moe2_hidden: 64,
            mlp_hidden: 256,
            mlp_layer_norm: true,
            m2m_cell_size: 64,
            m2m_layer_norm: false,
            m2m_drop_prob: 0.2,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.experts == 0 {
            return Err(Error::Config("experts must be at least 1".into()));
        }
        if self.moe2_hidden == 0 || self.mlp_hidden == 0 || self.m2m_cell_size == 0 {
            return Err(Error::Config("classifier sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.m2m_drop_prob) {
            return Err(Error::Config(format!("m2m_drop_prob {} outside [0,1)", self.m2m_drop_prob)));
        }
        Ok(())
    }
}

/// Per-class mixture of `E` sigmoid experts. Weights are `[C, E, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MoeParams {
    pub classes: usize,
    pub experts: usize,
    pub expert_w: ParamId,
    pub expert_b: ParamId,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
}

impl MoeParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        classes: usize,
        experts: usize,
        rng: &RngStream,
    ) -> Result<Self> {
        let shape = [classes, experts, input_dim];
        Ok(Self {
            classes,
            experts,
            expert_w: store.add_glorot(&format!("{prefix}.expert_w"), &shape, input_dim, experts, rng)?,
            expert_b: store.add_filled(&format!("{prefix}.expert_b"), &[classes, experts], 0.0)?,
            gate_w: store.add_glorot(&format!("{prefix}.gate_w"), &shape, input_dim, experts, rng)?,
            gate_b: store.add_filled(&format!("{prefix}.gate_b"), &[classes, experts], 0.0)?,
        })
    }
}

/// Shared hidden projections feeding a [`MoeParams`] mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct Moe2Params {
    pub hidden: usize,
    pub w_e: ParamId,
    pub b_e: ParamId,
    pub w_g: ParamId,
    pub b_g: ParamId,
    /// Mixture over the `h`-dimensional projections (`v_e`, `v_g`).
    pub mixture: MoeParams,
}

impl Moe2Params {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        classes: usize,
        experts: usize,
        rng: &RngStream,
    ) -> Result<Self> {
        Ok(Self {
            hidden,
            w_e: store.add_glorot(&format!("{prefix}.w_e"), &[hidden, input_dim], input_dim, hidden, rng)?,
            b_e: store.add_filled(&format!("{prefix}.b_e"), &[hidden], 0.0)?,
            w_g: store.add_glorot(&format!("{prefix}.w_g"), &[hidden, input_dim], input_dim, hidden, rng)?,
            b_g: store.add_filled(&format!("{prefix}.b_g"), &[hidden], 0.0)?,
            mixture: MoeParams::register(store, &format!("{prefix}.v"), hidden, classes, experts, rng)?,
        })
    }
}

/// Intermediate values of a mixture head, for inspection.
#[derive(Clone, Copy, Debug)]
pub struct MoeTrace {
    pub probs: Var,
    /// `[C, E]` expert probabilities.
    pub experts: Var,
    /// `[C, E]` gate weights, each row on the simplex.
    pub gates: Var,
}

fn mixture(tape: &mut Tape, x_expert: Var, x_gate: Var, p: &MoeParams) -> Result<MoeTrace> {
    let ce = [p.classes, p.experts];
    let logits = |tape: &mut Tape, x: Var, w: ParamId, b: ParamId| -> Result<Var> {
        let (w, b) = (tape.param(w), tape.param(b));
        let z = tape.matmul_nt(x, w)?;
        let z = tape.add(z, b)?;
        tape.reshape(z, &ce)
    };
    let ze = logits(tape, x_expert, p.expert_w, p.expert_b)?;
    let zg = logits(tape, x_gate, p.gate_w, p.gate_b)?;
    let experts = tape.sigmoid(ze);
    let gates = tape.softmax(zg);
    let weighted = tape.mul(gates, experts)?;
    Ok(MoeTrace {
        probs: tape.sum_axis1(weighted),
        experts,
        gates,
    })
}

/// `O[c] = Σ_i softmax_i(⟨w_g^{c,i}, x⟩ + b) · σ(⟨w_e^{c,i}, x⟩ + b)`.
pub fn moe_score(tape: &mut Tape, x: Var, p: &MoeParams) -> Result<MoeTrace> {
    mixture(tape, x, x, p)
}

/// Mixture over the shared projections `W_e x + b′_e` and `W_g x + b′_g`.
pub fn moe2_score(tape: &mut Tape, x: Var, p: &Moe2Params) -> Result<MoeTrace> {
    let project = |tape: &mut Tape, w: ParamId, b: ParamId| -> Result<Var> {
        let (w, b) = (tape.param(w), tape.param(b));
        let z = tape.matmul_nt(x, w)?;
        tape.add(z, b)
    };
    let he = project(tape, p.w_e, p.b_e)?;
    let hg = project(tape, p.w_g, p.b_g)?;
    mixture(tape, he, hg, &p.mixture)
}

pub const MLP_LAYERS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct MlpLayer {
    /// `[in, out]`.
    pub w: ParamId,
    pub b: ParamId,
    pub ln: Option<(ParamId, ParamId)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub width: usize,
    pub hidden: Vec<MlpLayer>,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl MlpParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        width: usize,
        classes: usize,
        layer_norm: bool,
        rng: &RngStream,
    ) -> Result<Self> {
        let mut hidden = Vec::with_capacity(MLP_LAYERS);
        let mut fan_in = input_dim;
        for l in 0..MLP_LAYERS {
            let w = store.add_glorot(&format!("{prefix}.w{l}"), &[fan_in, width], fan_in, width, rng)?;
            let b = store.add_filled(&format!("{prefix}.b{l}"), &[width], 0.0)?;
            let ln = if layer_norm {
                Some((
                    store.add_filled(&format!("{prefix}.ln_gain{l}"), &[width], 1.0)?,
                    store.add_filled(&format!("{prefix}.ln_bias{l}"), &[width], 0.0)?,
                ))
            } else {
                None
            };
            hidden.push(MlpLayer { w, b, ln });
            fan_in = width;
        }
        Ok(Self {
            width,
            hidden,
            out_w: store.add_glorot(&format!("{prefix}.out_w"), &[width, classes], width, classes, rng)?,
            out_b: store.add_filled(&format!("{prefix}.out_b"), &[classes], 0.0)?,
        })
    }
}

/// Returns `(probs, last hidden activation)`.
pub fn mlp_score(tape: &mut Tape, x: Var, p: &MlpParams) -> Result<(Var, Var)> {
    let mut a = x;
    for layer in &p.hidden {
        let (w, b) = (tape.param(layer.w), tape.param(layer.b));
        let z = tape.matmul(a, w)?;
        let mut z = tape.add(z, b)?;
        if let Some((gain, bias)) = layer.ln {
            let (gain, bias) = (tape.param(gain), tape.param(bias));
            z = tape.layer_norm(z, gain, bias, LAYER_NORM_EPS)?;
        }
        a = tape.relu(z);
    }
    let (w, b) = (tape.param(p.out_w), tape.param(p.out_b));
    let z = tape.matmul(a, w)?;
    let z = tape.add(z, b)?;
    Ok((tape.sigmoid(z), a))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManyToManyParams {
    pub lstm: LstmParams,
    pub opts: LstmOptions,
    /// `[d, C]`.
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl ManyToManyParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        cell: usize,
        classes: usize,
        layer_norm: bool,
        drop_prob: f64,
        rng: &RngStream,
    ) -> Result<Self> {
        Ok(Self {
            lstm: LstmParams::register(store, &format!("{prefix}.lstm"), input_dim, cell, layer_norm, rng)?,
            opts: LstmOptions {
                use_input_sum: false,
                use_candidate_sum: false,
                layer_norm,
                drop_prob,
            },
            head_w: store.add_glorot(&format!("{prefix}.head_w"), &[cell, classes], cell, classes, rng)?,
            head_b: store.add_filled(&format!("{prefix}.head_b"), &[classes], 0.0)?,
        })
    }
}

/// Per-step sigmoid scores averaged over time. Returns `(probs, mean hidden state)`.
pub fn many_to_many_score(
    tape: &mut Tape,
    frames: Var,
    p: &ManyToManyParams,
    rng: &mut RngStream,
    mode: Mode,
) -> Result<(Var, Var)> {
    let trace = lstm_recurrence(tape, frames, &p.lstm, &p.opts, rng, mode)?;
    let steps = trace.hidden.len() as f64;
    let s = tape.stack(&trace.hidden)?;
    let (w, b) = (tape.param(p.head_w), tape.param(p.head_b));
    let z = tape.matmul(s, w)?;
    let z = tape.add_row(z, b)?;
    let per_step = tape.sigmoid(z);
    let total = tape.sum_axis0(per_step);
    let probs = tape.scale(total, 1.0 / steps);
    let hidden = tape.sum_axis0(s);
    Ok((probs, tape.scale(hidden, 1.0 / steps)))
}

/// Head output: class probabilities and the representation used by center loss.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    pub probs: Var,
    pub embedding: Var,
}

/// A configured head bound to its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Moe(MoeParams),
    Moe2(Moe2Params),
    Mlp(MlpParams),
    ManyToMany(ManyToManyParams),
}

impl Head {
    /// `input_dim` is the pooled width, or the frame width for the many-to-many head.
    pub fn build(
        cfg: &ClassifierConfig,
        input_dim: usize,
        classes: usize,
        store: &mut ParamStore,
        rng: &RngStream,
    ) -> Result<Self> {
        cfg.validate()?;
        if classes == 0 {
            return Err(Error::Config("number of classes must be positive".into()));
        }
        Ok(match cfg.kind {
            HeadKind::Moe => Head::Moe(MoeParams::register(store, "head.moe", input_dim, classes, cfg.experts, rng)?),
            HeadKind::Moe2 => Head::Moe2(Moe2Params::register(
                store,
                "head.moe2",
                input_dim,
                cfg.moe2_hidden,
                classes,
                cfg.experts,
                rng,
            )?),
            HeadKind::Mlp => Head::Mlp(MlpParams::register(
                store,
                "head.mlp",
                input_dim,
                cfg.mlp_hidden,
                classes,
                cfg.mlp_layer_norm,
                rng,
            )?),
            HeadKind::ManyToMany => Head::ManyToMany(ManyToManyParams::register(
                store,
                "head.m2m",
                input_dim,
                cfg.m2m_cell_size,
                classes,
                cfg.m2m_layer_norm,
                cfg.m2m_drop_prob,
                rng,
            )?),
        })
    }

    /// True when the head consumes raw frames instead of a pooled vector.
    pub fn takes_frames(&self) -> bool {
        matches!(self, Head::ManyToMany(_))
    }

    pub fn embedding_dim(&self, input_dim: usize) -> usize {
        match self {
            Head::Moe(_) | Head::Moe2(_) => input_dim,
            Head::Mlp(p) => p.width,
            Head::ManyToMany(p) => p.lstm.cell,
        }
    }

    pub fn forward(&self, tape: &mut Tape, input: Var, rng: &mut RngStream, mode: Mode) -> Result<HeadOutput> {
        match self {
            Head::Moe(p) => Ok(HeadOutput {
                probs: moe_score(tape, input, p)?.probs,
                embedding: input,
            }),
            Head::Moe2(p) => Ok(HeadOutput {
                probs: moe2_score(tape, input, p)?.probs,
                embedding: input,
            }),
            Head::Mlp(p) => {
                let (probs, embedding) = mlp_score(tape, input, p)?;
                Ok(HeadOutput { probs, embedding })
            }
            Head::ManyToMany(p) => {
                let (probs, embedding) = many_to_many_score(tape, input, p, rng, mode)?;
                Ok(HeadOutput { probs, embedding })
            }
        }
    }
}
