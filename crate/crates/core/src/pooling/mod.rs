//! Sequence pooling encoders: `T×D` frame features to one fixed-length vector.

use serde::{Deserialize, Serialize};

use crate::data::LabelStats;
use crate::error::{Error, Result};
use crate::numerics::{Mode, ParamId, ParamStore, RngStream, Tape, Tensor, Var};

/// One video: a `T×D` frame matrix with its label set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    /// Sorted, de-duplicated class ids.
    pub labels: Vec<u32>,
    pub frames: Tensor,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, mut labels: Vec<u32>, frames: Tensor) -> Result<Self> {
        if frames.shape().len() != 2 {
            return Err(Error::Data(format!("frames must be T×D, got shape {:?}", frames.shape())));
        }
        labels.sort_unstable();
        labels.dedup();
        Ok(Self {
            video_id: video_id.into(),
            labels,
            frames,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoolingKind {
    #[default]
    Lstm,
    Cnn,
    Position,
    Attention,
    AdaptiveNoise,
    /// No pooling stage; only valid with the many-to-many head.
    None,
}

/// How a configured dropout rate is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DropoutRateMeaning {
    /// The rate is the probability of keeping a unit.
    #[default]
    Keep,
    /// The rate is the probability of zeroing a unit.
    Drop,
}

/// `[pooling]` section of a model config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolingConfig {
    pub kind: PoolingKind,
    /// LSTM cell size `d`.
    pub cell_size: usize,
    /// Append the frame sum to the LSTM output.
    pub use_input_sum: bool,
    /// Append the sum of per-step candidate activations to the LSTM output.
    pub use_candidate_sum: bool,
    /// Normalize every LSTM gate pre-activation.
    pub layer_norm: bool,
    pub dropout_rate: f64,
    pub dropout_rate_means: DropoutRateMeaning,
    /// CNN output channels.
    pub cnn_channels: usize,
    /// CNN temporal window `c_v`.
    pub cnn_window: usize,
    /// Divides the self-attention logits.
    pub attention_temperature: f64,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self {
            kind: PoolingKind::Lstm,
            cell_size: 64,
            use_input_sum: true,
            use_candidate_sum: true,
            layer_norm: false,
            dropout_rate: 0.8,
            dropout_rate_means: DropoutRateMeaning::Keep,
            cnn_channels: 64,
            cnn_window: 5,
            attention_temperature: 1.0,
        }
    }
}

impl PoolingConfig {
    pub fn drop_prob(&self) -> f64 {
        match self.dropout_rate_means {
            DropoutRateMeaning::Keep => 1.0 - self.dropout_rate,
            DropoutRateMeaning::Drop => self.dropout_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0,1]", self.dropout_rate)));
        }
        if !(0.0..1.0).contains(&self.drop_prob()) {
            return Err(Error::Config(format!(
                "dropout_rate {} read as `{:?}` gives drop probability {} outside [0,1)",
                self.dropout_rate,
                self.dropout_rate_means,
                self.drop_prob()
            )));
        }
        if self.cell_size == 0 || self.cnn_channels == 0 || self.cnn_window == 0 {
            return Err(Error::Config("pooling sizes must be positive".into()));
        }
        if self.attention_temperature <= 0.0 || !self.attention_temperature.is_finite() {
            return Err(Error::Config("attention_temperature must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// LSTM

/// Gate order throughout: input, forget, output, candidate.
pub const GATES: [&str; 4] = ["i", "f", "o", "g"];

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub cell: usize,
    /// `D×d` input projections.
    pub u: [ParamId; 4],
    /// `d×d` recurrent projections.
    pub w: [ParamId; 4],
    pub b: [ParamId; 4],
    /// Per-gate layer-norm `(gain, bias)`.
    pub ln: Option<[(ParamId, ParamId); 4]>,
}

impl LstmParams {
    /// Glorot weights, zero biases except the forget gate at `+1`.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        cell: usize,
        layer_norm: bool,
        rng: &RngStream,
    ) -> Result<Self> {
        let mut u = Vec::new();
        let mut w = Vec::new();
        let mut b = Vec::new();
        let mut ln = Vec::new();
        for g in GATES {
            u.push(store.add_glorot(&format!("{prefix}.u_{g}"), &[input_dim, cell], input_dim, cell, rng)?);
            w.push(store.add_glorot(&format!("{prefix}.w_{g}"), &[cell, cell], cell, cell, rng)?);
            let bias = if g == "f" { 1.0 } else { 0.0 };
            b.push(store.add_filled(&format!("{prefix}.b_{g}"), &[cell], bias)?);
            if layer_norm {
                let gain = store.add_filled(&format!("{prefix}.ln_gain_{g}"), &[cell], 1.0)?;
                let beta = store.add_filled(&format!("{prefix}.ln_bias_{g}"), &[cell], bias)?;
                ln.push((gain, beta));
            }
        }
        let four = |v: Vec<ParamId>| -> [ParamId; 4] { v.try_into().expect("four gates") };
        Ok(Self {
            input_dim,
            cell,
            u: four(u),
            w: four(w),
            b: four(b),
            ln: if layer_norm {
                Some(ln.try_into().expect("four gates"))
            } else {
                None
            },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LstmOptions {
    pub use_input_sum: bool,
    pub use_candidate_sum: bool,
    pub layer_norm: bool,
    pub drop_prob: f64,
}

/// Per-step states of one LSTM pass.
pub struct LstmTrace {
    pub cell: Vec<Var>,
    pub hidden: Vec<Var>,
    pub candidate: Vec<Var>,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Runs the gated recurrence from zero state. Dropout (train mode only)
/// is applied to the hidden state where it feeds the next step.
pub fn lstm_recurrence(
    tape: &mut Tape,
    frames: Var,
    p: &LstmParams,
    opts: &LstmOptions,
    rng: &mut RngStream,
    mode: Mode,
) -> Result<LstmTrace> {
    let shape = tape.shape(frames).to_vec();
    if shape.len() != 2 || shape[1] != p.input_dim {
        return Err(Error::dim("lstm", &shape, &[p.input_dim, p.cell]));
    }
    if opts.layer_norm && p.ln.is_none() {
        return Err(Error::Config("layer_norm requested but LSTM has no normalization parameters".into()));
    }
    let steps = shape[0];
    let mut proj = Vec::with_capacity(4);
    for k in 0..4 {
        let u = tape.param(p.u[k]);
        proj.push(tape.matmul(frames, u)?);
    }
    let zero = tape.constant(Tensor::zeros(&[p.cell]));
    let (mut c_prev, mut s_in) = (zero, zero);
    let mut trace = LstmTrace {
        cell: Vec::with_capacity(steps),
        hidden: Vec::with_capacity(steps),
        candidate: Vec::with_capacity(steps),
    };
    for t in 0..steps {
        let mut gates = [zero; 4];
        for k in 0..4 {
            let xt = tape.row(proj[k], t)?;
            let w = tape.param(p.w[k]);
            let rec = tape.matmul(s_in, w)?;
            let b = tape.param(p.b[k]);
            let pre = tape.add(xt, rec)?;
            let mut pre = tape.add(pre, b)?;
            if opts.layer_norm {
                let (gain, beta) = p.ln.expect("checked above")[k];
                let (gain, beta) = (tape.param(gain), tape.param(beta));
                pre = tape.layer_norm(pre, gain, beta, LAYER_NORM_EPS)?;
            }
            gates[k] = if k == 3 { tape.tanh(pre) } else { tape.sigmoid(pre) };
        }
        let [i, f, o, g] = gates;
        let keep = tape.mul(c_prev, f)?;
        let write = tape.mul(g, i)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let s = tape.mul(tc, o)?;
        trace.cell.push(c);
        trace.hidden.push(s);
        trace.candidate.push(g);
        c_prev = c;
        s_in = tape.dropout(s, opts.drop_prob, mode, rng)?;
    }
    Ok(trace)
}

/// `[c_T, s_T]`, optionally followed by `Σ_t I_t` and `Σ_t g_t`.
pub fn encode_lstm(
    tape: &mut Tape,
    frames: Var,
    p: &LstmParams,
    opts: &LstmOptions,
    rng: &mut RngStream,
    mode: Mode,
) -> Result<Var> {
    let trace = lstm_recurrence(tape, frames, p, opts, rng, mode)?;
    let mut parts = vec![*trace.cell.last().expect("T >= 1"), *trace.hidden.last().expect("T >= 1")];
    if opts.use_input_sum {
        parts.push(tape.sum_axis0(frames));
    }
    if opts.use_candidate_sum {
        let g = tape.stack(&trace.candidate)?;
        parts.push(tape.sum_axis0(g));
    }
    Ok(tape.concat(&parts))
}

// ---------------------------------------------------------------------------
// Parameter-free and convolutional encoders

/// Temporal convolution (stride 1, full feature height), ReLU, max over time.
/// `w_conv` is `[window, D, channels]`.
pub fn encode_cnn(tape: &mut Tape, frames: Var, w_conv: Var, b_conv: Var) -> Result<Var> {
    let ws = tape.shape(w_conv).to_vec();
    let fs = tape.shape(frames).to_vec();
    if ws.len() != 3 || fs.len() != 2 || ws[1] != fs[1] || tape.value(b_conv).len() != ws[2] {
        return Err(Error::dim("cnn", &fs, &ws));
    }
    let windows = tape.unfold(frames, ws[0])?;
    let z = tape.matmul(windows, w_conv)?;
    let z = tape.add_row(z, b_conv)?;
    let a = tape.relu(z);
    Ok(tape.max_axis0(a))
}

/// `L[i,j] = (1 − i/T) − (j/D)(1 − 2i/T)` with 1-based `i, j`.
pub fn pe_matrix(steps: usize, dim: usize) -> Tensor {
    let mut l = Tensor::zeros(&[steps.max(1), dim.max(1)]);
    let (tf, df) = (steps as f64, dim as f64);
    for i in 1..=steps {
        for j in 1..=dim {
            let (fi, fj) = (i as f64, j as f64);
            l.values_mut()[(i - 1) * dim + (j - 1)] = (1.0 - fi / tf) - (fj / df) * (1.0 - 2.0 * fi / tf);
        }
    }
    l
}

/// Frames weighted elementwise by [`pe_matrix`], then summed over time.
pub fn encode_position(tape: &mut Tape, frames: Var) -> Result<Var> {
    let (t, d) = {
        let v = tape.value(frames);
        (v.rows(), v.cols())
    };
    let l = tape.constant(pe_matrix(t, d));
    let weighted = tape.mul(frames, l)?;
    Ok(tape.sum_axis0(weighted))
}

/// Softmax over `t` of `Σ_i ⟨I_t, I_i⟩ / temperature`, and the weighted frame sum.
pub fn encode_self_attention(tape: &mut Tape, frames: Var, temperature: f64) -> Result<(Var, Var)> {
    let total = tape.sum_axis0(frames);
    let logits = tape.matmul_nt(total, frames)?;
    let logits = if temperature == 1.0 {
        logits
    } else {
        tape.scale(logits, 1.0 / temperature)
    };
    let weights = tape.softmax(logits);
    let pooled = tape.matmul(weights, frames)?;
    Ok((pooled, weights))
}

/// Mean inverse class frequency of a video's labels.
pub fn adaptive_noise_gamma(labels: &[u32], stats: &LabelStats) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Stats("adaptive noise needs a non-empty label set".into()));
    }
    let mut acc = 0.0;
    for &y in labels {
        let s = stats.count(y);
        if s == 0 {
            return Err(Error::Stats(format!("class {y} has zero training examples")));
        }
        acc += 1.0 / s as f64;
    }
    Ok(acc / labels.len() as f64)
}

/// Train mode adds `γ·Z` (fresh `Z ~ N(0, I)` per frame) before sum pooling;
/// eval mode is a plain frame sum.
pub fn encode_adaptive_noise(
    tape: &mut Tape,
    frames: Var,
    labels: &[u32],
    stats: &LabelStats,
    rng: &mut RngStream,
    mode: Mode,
) -> Result<Var> {
    if mode == Mode::Eval {
        return Ok(tape.sum_axis0(frames));
    }
    let gamma = adaptive_noise_gamma(labels, stats)?;
    let shape = tape.shape(frames).to_vec();
    let mut noise = rng.gaussian(&shape);
    noise.values_mut().iter_mut().for_each(|z| *z *= gamma);
    let noise = tape.constant(noise);
    let noisy = tape.add(frames, noise)?;
    Ok(tape.sum_axis0(noisy))
}

// ---------------------------------------------------------------------------

/// A configured pooling stage bound to its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    Lstm { params: LstmParams, opts: LstmOptions },
    Cnn {
        w: ParamId,
        b: ParamId,
        window: usize,
        channels: usize,
    },
    Position,
    Attention { temperature: f64 },
    AdaptiveNoise,
}

impl Encoder {
    pub fn build(cfg: &PoolingConfig, input_dim: usize, store: &mut ParamStore, rng: &RngStream) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.kind {
            PoolingKind::Lstm => Encoder::Lstm {
                params: LstmParams::register(store, "pool.lstm", input_dim, cfg.cell_size, cfg.layer_norm, rng)?,
                opts: LstmOptions {
                    use_input_sum: cfg.use_input_sum,
                    use_candidate_sum: cfg.use_candidate_sum,
                    layer_norm: cfg.layer_norm,
                    drop_prob: cfg.drop_prob(),
                },
            },
            PoolingKind::Cnn => {
                let (win, ch) = (cfg.cnn_window, cfg.cnn_channels);
                let w = store.add_glorot("pool.cnn.w", &[win, input_dim, ch], win * input_dim, ch, rng)?;
                let b = store.add_filled("pool.cnn.b", &[ch], 0.0)?;
                Encoder::Cnn {
                    w,
                    b,
                    window: win,
                    channels: ch,
                }
            }
            PoolingKind::Position => Encoder::Position,
            PoolingKind::Attention => Encoder::Attention {
                temperature: cfg.attention_temperature,
            },
            PoolingKind::AdaptiveNoise => Encoder::AdaptiveNoise,
            PoolingKind::None => {
                return Err(Error::Config("pooling kind `none` has no encoder".into()));
            }
        })
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            Encoder::Lstm { params, opts } => {
                2 * params.cell
                    + if opts.use_input_sum { input_dim } else { 0 }
                    + if opts.use_candidate_sum { params.cell } else { 0 }
            }
            Encoder::Cnn { channels, .. } => *channels,
            _ => input_dim,
        }
    }

    pub fn min_frames(&self) -> usize {
        match self {
            Encoder::Cnn { window, .. } => *window,
            _ => 1,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        frames: Var,
        labels: &[u32],
        stats: &LabelStats,
        rng: &mut RngStream,
        mode: Mode,
    ) -> Result<Var> {
        match self {
            Encoder::Lstm { params, opts } => encode_lstm(tape, frames, params, opts, rng, mode),
            Encoder::Cnn { w, b, .. } => {
                let (w, b) = (tape.param(*w), tape.param(*b));
                encode_cnn(tape, frames, w, b)
            }
            Encoder::Position => encode_position(tape, frames),
            Encoder::Attention { temperature } => Ok(encode_self_attention(tape, frames, *temperature)?.0),
            Encoder::AdaptiveNoise => encode_adaptive_noise(tape, frames, labels, stats, rng, mode),
        }
    }
}
