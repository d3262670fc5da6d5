//! The network forward pass, written against a tape so gradients come along.
//!
//! Stage order: feature-channel attention → convolutional position encoding
//! → channel compression → time slicing → temporal attention blocks →
//! global-average-pool classifier. Ablated stages are skipped entirely.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::{BlockParams, HeadParams, ModelParams, PosencParams, SpatialParams};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::numcore::{Tape, TensorId};

/// Spatial attention output plus the row-stochastic score matrix.
pub struct SpatialAttentionTrace {
    pub output: TensorId,
    pub attention: TensorId,
}

/// Feature-channel attention: every channel's time course is one token.
///
/// `Q = Wq Z + bq` (and likewise K, V) mix channels; scores
/// `softmax(QKᵀ/√d_k)` are `C_f × C_f`; the weighted values are added back
/// onto the input. Spatial dropout hits the attention output in training.
pub fn spatial_attention(
    tape: &mut Tape,
    z: TensorId,
    p: &SpatialParams<TensorId>,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<SpatialAttentionTrace> {
    let (c_f, _t) = tape.shape(z);
    if c_f < 2 {
        return Err(Error::Config(format!(
            "spatial attention needs at least 2 feature channels, got {c_f}"
        )));
    }
    let q = tape.matmul(p.wq, z)?;
    let q = tape.add_col(q, p.bq)?;
    let k = tape.matmul(p.wk, z)?;
    let k = tape.add_col(k, p.bk)?;
    let v = tape.matmul(p.wv, z)?;
    let v = tape.add_col(v, p.bv)?;

    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (c_f as f64).sqrt());
    let attention = tape.softmax_rows(scaled)?;
    let context = tape.matmul(attention, v)?;
    let dropped = tape.dropout(context, cfg.dropout_spatial, training, rng)?;
    let output = tape.add(z, dropped)?;
    Ok(SpatialAttentionTrace { output, attention })
}

/// Depthwise temporal convolution added back onto its input, so an untrained
/// kernel cannot destroy the signal.
pub fn position_encode(
    tape: &mut Tape,
    x: TensorId,
    p: &PosencParams<TensorId>,
) -> Result<TensorId> {
    let conv = tape.conv1d_time(x, p.kernel, p.bias)?;
    tape.add(x, conv)
}

/// Mean over the feature-channel dimension: `C_f × T -> 1 × T`.
///
/// Parameter-free; the channels were already weighted by the attention stage.
pub fn compress_channels(tape: &mut Tape, x: TensorId) -> TensorId {
    tape.mean_rows(x)
}

/// Cut the compressed signal into contiguous non-overlapping `1 × d` slices:
/// slice `i` holds samples `[i·d, (i+1)·d)`. Row-major reshape, so
/// concatenating the rows reconstructs the signal exactly.
pub fn slice_time(tape: &mut Tape, x: TensorId, d: usize) -> Result<TensorId> {
    let (rows, t) = tape.shape(x);
    if rows != 1 {
        return Err(Error::shape("slice_time", (rows, t), (1, t)));
    }
    if d == 0 || t % d != 0 {
        return Err(Error::Config(format!(
            "T = {t} is not divisible by slice width {d}; adjust the trial window or the slice size"
        )));
    }
    tape.reshape(x, t / d, d)
}

/// Multi-head attention output plus per-head score matrices.
pub struct MhaTrace {
    pub output: TensorId,
    pub head_attentions: Vec<TensorId>,
}

/// Self-attention over slices with `h` heads, each scaled by `√(d_k/h)`,
/// concatenated and projected by `W^o`. Temporal dropout hits the projected
/// output in training mode.
pub fn multi_head_attention(
    tape: &mut Tape,
    x: TensorId,
    block: &BlockParams<TensorId>,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<MhaTrace> {
    let h = cfg.n_heads;
    if h == 0 || cfg.d_k % h != 0 || cfg.d_v % h != 0 {
        return Err(Error::Config(format!(
            "d_k = {} and d_v = {} must be divisible by h = {}",
            cfg.d_k, cfg.d_v, h
        )));
    }
    let dkh = cfg.d_k / h;
    let dvh = cfg.d_v / h;

    let q_all = tape.matmul(x, block.wq)?;
    let k_all = tape.matmul(x, block.wk)?;
    let v_all = tape.matmul(x, block.wv)?;

    let mut heads = Vec::with_capacity(h);
    let mut head_attentions = Vec::with_capacity(h);
    for i in 0..h {
        let qi = tape.slice_cols(q_all, i * dkh, dkh)?;
        let ki = tape.slice_cols(k_all, i * dkh, dkh)?;
        let vi = tape.slice_cols(v_all, i * dvh, dvh)?;
        let kt = tape.transpose(ki);
        let scores = tape.matmul(qi, kt)?;
        let scaled = tape.scale(scores, 1.0 / (dkh as f64).sqrt());
        let attn = tape.softmax_rows(scaled)?;
        let ctx = tape.matmul(attn, vi)?;
        heads.push(ctx);
        head_attentions.push(attn);
    }
    let concat = tape.concat_cols(&heads)?;
    let projected = tape.matmul(concat, block.wo)?;
    let output = tape.dropout(projected, cfg.dropout_temporal, training, rng)?;
    Ok(MhaTrace {
        output,
        head_attentions,
    })
}

/// Pre-norm transformer block: `X₁ = X + MHA(LN(X))`, then
/// `X₂ = X₁ + FF(LN(X₁))` with `FF = Linear → GeLU → dropout → Linear`.
pub fn temporal_block(
    tape: &mut Tape,
    x: TensorId,
    block: &BlockParams<TensorId>,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    let normed = tape.layer_norm(x, block.ln_gain, block.ln_bias, cfg.ln_eps)?;
    let mha = multi_head_attention(tape, normed, block, cfg, training, rng)?;
    let x1 = tape.add(x, mha.output)?;

    let Some(ff) = &block.ff else {
        return Ok(x1);
    };
    let normed2 = tape.layer_norm(x1, ff.ln_gain, ff.ln_bias, cfg.ln_eps)?;
    let inner = tape.matmul(normed2, ff.w1)?;
    let inner = tape.add_row(inner, ff.b1)?;
    let act = tape.gelu(inner);
    let act = tape.dropout(act, cfg.dropout_temporal, training, rng)?;
    let out = tape.matmul(act, ff.w2)?;
    let out = tape.add_row(out, ff.b2)?;
    tape.add(x1, out)
}

/// Classifier head outputs.
pub struct ClassifyTrace {
    pub logits: TensorId,
    pub probabilities: TensorId,
}

/// Global average pooling over slices, layer norm, fully-connected layer,
/// softmax probabilities.
pub fn classify(
    tape: &mut Tape,
    x: TensorId,
    head: &HeadParams<TensorId>,
    cfg: &ModelConfig,
) -> Result<ClassifyTrace> {
    let pooled = tape.mean_rows(x);
    let normed = tape.layer_norm(pooled, head.ln_gain, head.ln_bias, cfg.ln_eps)?;
    let logits = tape.matmul(normed, head.fc_w)?;
    let logits = tape.add_row(logits, head.fc_b)?;
    let probabilities = tape.softmax_rows(logits)?;
    Ok(ClassifyTrace {
        logits,
        probabilities,
    })
}

/// Outputs of one full forward pass.
pub struct ForwardTrace {
    pub logits: TensorId,
    pub probabilities: TensorId,
}

/// Run the full network on one spatially filtered trial `Z (C_f × T)`.
pub fn forward(
    tape: &mut Tape,
    z: &Mat,
    params: &ModelParams<TensorId>,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardTrace> {
    if z.rows() != cfg.n_feature_channels || z.cols() != cfg.t_samples {
        return Err(Error::shape(
            "forward",
            (z.rows(), z.cols()),
            (cfg.n_feature_channels, cfg.t_samples),
        ));
    }
    let input = tape.leaf(z.data().to_vec(), z.rows(), z.cols(), false);
    let mut x = input;
    if let Some(spatial) = &params.spatial {
        x = spatial_attention(tape, x, spatial, cfg, training, rng)?.output;
    }
    if let Some(posenc) = &params.posenc {
        x = position_encode(tape, x, posenc)?;
    }
    let compressed = compress_channels(tape, x);
    let mut tokens = slice_time(tape, compressed, cfg.slice_d)?;
    for block in &params.blocks {
        tokens = temporal_block(tape, tokens, block, cfg, training, rng)?;
    }
    let out = classify(tape, tokens, &params.head, cfg)?;
    Ok(ForwardTrace {
        logits: out.logits,
        probabilities: out.probabilities,
    })
}
