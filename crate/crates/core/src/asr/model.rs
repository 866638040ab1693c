//! Transformer encoder-decoder with a convolutional front end and a CTC head.
//! Layers use pre-norm residual connections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{IrisError, Result};
use crate::nn::{self, init, Forward};
use crate::params::ParameterStore;
use crate::signal::FeatureMatrix;
use crate::tensor::Tensor;

use super::config::AsrConfig;
use super::vocab::{TokenSequence, EOS, SOS};

const CONV_KERNEL: usize = 3;

pub fn init_params(store: &mut ParameterStore, cfg: &AsrConfig, seed: u64) -> Result<()> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    let (c, d, v) = (cfg.frontend_channels, cfg.model_dim, cfg.vocab_size);
    let k2 = CONV_KERNEL * CONV_KERNEL;
    store.insert(
        "asr.frontend.conv0.weight",
        init::uniform(&[c, 1, CONV_KERNEL, CONV_KERNEL], (6.0 / k2 as f64).sqrt(), &mut rng),
    )?;
    store.insert("asr.frontend.conv0.bias", Tensor::zeros(&[c]))?;
    store.insert(
        "asr.frontend.conv1.weight",
        init::uniform(&[c, c, CONV_KERNEL, CONV_KERNEL], (6.0 / (c * k2) as f64).sqrt(), &mut rng),
    )?;
    store.insert("asr.frontend.conv1.bias", Tensor::zeros(&[c]))?;
    nn::add_linear(store, "asr.frontend.out", c * cfg.reduced_input_dim(), d, &mut rng)?;
    for i in 0..cfg.encoder_layers {
        let p = format!("asr.encoder.{i}");
        nn::add_layer_norm(store, &format!("{p}.norm1"), d)?;
        nn::add_attention(store, &format!("{p}.self_attn"), d, &mut rng)?;
        nn::add_layer_norm(store, &format!("{p}.norm2"), d)?;
        nn::add_linear(store, &format!("{p}.ffn.in"), d, cfg.ffn_dim, &mut rng)?;
        nn::add_linear(store, &format!("{p}.ffn.out"), cfg.ffn_dim, d, &mut rng)?;
    }
    nn::add_layer_norm(store, "asr.encoder.norm", d)?;
    nn::add_linear(store, "asr.ctc", d, v, &mut rng)?;
    store.insert("asr.decoder.embed", init::uniform(&[v, d], 1.0 / (d as f64).sqrt(), &mut rng))?;
    for i in 0..cfg.decoder_layers {
        let p = format!("asr.decoder.{i}");
        nn::add_layer_norm(store, &format!("{p}.norm1"), d)?;
        nn::add_attention(store, &format!("{p}.self_attn"), d, &mut rng)?;
        nn::add_layer_norm(store, &format!("{p}.norm2"), d)?;
        nn::add_attention(store, &format!("{p}.src_attn"), d, &mut rng)?;
        nn::add_layer_norm(store, &format!("{p}.norm3"), d)?;
        nn::add_linear(store, &format!("{p}.ffn.in"), d, cfg.ffn_dim, &mut rng)?;
        nn::add_linear(store, &format!("{p}.ffn.out"), cfg.ffn_dim, d, &mut rng)?;
    }
    nn::add_layer_norm(store, "asr.decoder.norm", d)?;
    nn::add_linear(store, "asr.decoder.out", d, v, &mut rng)
}

/// Checks that `store` matches the shapes `cfg` implies for every `asr.*`
/// recognizer parameter (the feature projection is not included).
pub fn check_params(store: &ParameterStore, cfg: &AsrConfig) -> Result<()> {
    let mut expected = ParameterStore::new();
    init_params(&mut expected, cfg, 0)?;
    for (name, t) in expected.iter() {
        store.expect(name, t.shape())?;
    }
    Ok(())
}

fn conv_out(len: usize, stride: usize) -> usize {
    // kernel 3, padding 1
    (len - 1) / stride + 1
}

/// Encoder frames for `frames` input frames.
pub fn subsampled_frames(frames: usize, cfg: &AsrConfig) -> Result<usize> {
    let [s0, s1] = cfg.time_strides()?;
    if frames < s0 * s1 {
        return Err(IrisError::InvalidArgument(format!(
            "{frames} feature frames are fewer than the front end's reduction {}",
            s0 * s1
        )));
    }
    Ok(conv_out(conv_out(frames, s0), s1))
}

/// Two 3x3 convolutions (padding 1, ReLU) striding time and frequency, then
/// a per-frame affine map of the flattened channels to `model_dim`.
pub fn subsample_graph(fw: &mut Forward, x: Var, cfg: &AsrConfig) -> Result<Var> {
    let (frames, dim) = fw.g.value(x).dims2()?;
    if dim != cfg.input_dim {
        return Err(IrisError::shape(
            "subsample_frontend",
            format!("features have dim {dim}, recognizer expects {}", cfg.input_dim),
        ));
    }
    subsampled_frames(frames, cfg)?;
    let [s0, s1] = cfg.time_strides()?;
    let c = cfg.frontend_channels;
    let mut h = fw.g.reshape(x, &[1, frames, dim])?;
    for (i, s) in [s0, s1].into_iter().enumerate() {
        let w = fw.param(&format!("asr.frontend.conv{i}.weight"))?;
        let b = fw.param(&format!("asr.frontend.conv{i}.bias"))?;
        let y = fw.g.conv2d(h, w, Some(b), (s, 2), (1, 1))?;
        h = fw.g.relu(y);
    }
    let shape = fw.g.shape(h).to_vec();
    let (t, f) = (shape[1], shape[2]);
    // channels x time x freq -> time x (channels * freq)
    let idx: Vec<Option<usize>> = (0..t)
        .flat_map(|ti| (0..c).flat_map(move |ci| (0..f).map(move |fi| Some((ci * t + ti) * f + fi))))
        .collect();
    let flat = fw.g.gather(h, &idx, &[t, c * f])?;
    nn::linear(fw, "asr.frontend.out", flat)
}

/// Fixed sinusoidal position table, `len x dim`.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let rate = 10000f64.powf(-((i / 2 * 2) as f64) / dim as f64);
            let a = pos as f64 * rate;
            data[pos * dim + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::from_parts(vec![len, dim], data)
}

fn add_positions(fw: &mut Forward, x: Var, dim: usize, dropout: f64) -> Result<Var> {
    let len = fw.g.shape(x)[0];
    let scaled = fw.g.scale(x, (dim as f64).sqrt());
    let pe = fw.g.constant(positional_encoding(len, dim));
    let y = fw.g.add(scaled, pe)?;
    fw.dropout(y, dropout)
}

fn feed_forward(fw: &mut Forward, prefix: &str, x: Var, dropout: f64) -> Result<Var> {
    let h = nn::linear(fw, &format!("{prefix}.in"), x)?;
    let h = fw.g.relu(h);
    let h = fw.dropout(h, dropout)?;
    nn::linear(fw, &format!("{prefix}.out"), h)
}

fn residual(fw: &mut Forward, x: Var, branch: Var, dropout: f64) -> Result<Var> {
    let b = fw.dropout(branch, dropout)?;
    fw.g.add(x, b)
}

/// Encoder output, `t_enc x model_dim`, for a `frames x input_dim` node.
pub fn encoder_graph(fw: &mut Forward, features: Var, cfg: &AsrConfig) -> Result<Var> {
    let d = cfg.model_dim;
    let x = subsample_graph(fw, features, cfg)?;
    let mut x = add_positions(fw, x, d, cfg.dropout)?;
    for i in 0..cfg.encoder_layers {
        let p = format!("asr.encoder.{i}");
        let h = nn::layer_norm(fw, &format!("{p}.norm1"), x)?;
        let a = nn::multi_head_attention(fw, &format!("{p}.self_attn"), h, h, cfg.heads, None)?;
        x = residual(fw, x, a, cfg.dropout)?;
        let h = nn::layer_norm(fw, &format!("{p}.norm2"), x)?;
        let f = feed_forward(fw, &format!("{p}.ffn"), h, cfg.dropout)?;
        x = residual(fw, x, f, cfg.dropout)?;
    }
    nn::layer_norm(fw, "asr.encoder.norm", x)
}

/// CTC log-probabilities, `t_enc x vocab`.
pub fn ctc_log_probs_graph(fw: &mut Forward, encoded: Var) -> Result<Var> {
    let logits = nn::linear(fw, "asr.ctc", encoded)?;
    fw.g.log_softmax_rows(logits)
}

/// Decoder logits, one row per input token, attending causally to the
/// inputs and fully to `encoded`.
pub fn decoder_graph(fw: &mut Forward, encoded: Var, inputs: &[usize], cfg: &AsrConfig) -> Result<Var> {
    let (d, v, u) = (cfg.model_dim, cfg.vocab_size, inputs.len());
    if u == 0 {
        return Err(IrisError::InvalidArgument("decoder needs at least one input token".into()));
    }
    if let Some(&bad) = inputs.iter().find(|&&id| id >= v) {
        return Err(IrisError::InvalidArgument(format!(
            "decoder input id {bad} outside vocabulary of {v}"
        )));
    }
    let embed = fw.param_shaped("asr.decoder.embed", &[v, d])?;
    let idx: Vec<Option<usize>> = inputs
        .iter()
        .flat_map(|&id| (0..d).map(move |c| Some(id * d + c)))
        .collect();
    let e = fw.g.gather(embed, &idx, &[u, d])?;
    let mut x = add_positions(fw, e, d, cfg.dropout)?;
    let causal: Vec<bool> = (0..u * u).map(|k| k % u <= k / u).collect();
    for i in 0..cfg.decoder_layers {
        let p = format!("asr.decoder.{i}");
        let h = nn::layer_norm(fw, &format!("{p}.norm1"), x)?;
        let a = nn::multi_head_attention(fw, &format!("{p}.self_attn"), h, h, cfg.heads, Some(&causal))?;
        x = residual(fw, x, a, cfg.dropout)?;
        let h = nn::layer_norm(fw, &format!("{p}.norm2"), x)?;
        let a = nn::multi_head_attention(fw, &format!("{p}.src_attn"), h, encoded, cfg.heads, None)?;
        x = residual(fw, x, a, cfg.dropout)?;
        let h = nn::layer_norm(fw, &format!("{p}.norm3"), x)?;
        let f = feed_forward(fw, &format!("{p}.ffn"), h, cfg.dropout)?;
        x = residual(fw, x, f, cfg.dropout)?;
    }
    let x = nn::layer_norm(fw, "asr.decoder.norm", x)?;
    nn::linear(fw, "asr.decoder.out", x)
}

/// Mean over rows of `-sum_k q_k log p_k` with
/// `q = (1 - smoothing) onehot(target) + smoothing / vocab`.
pub fn label_smoothed_nll(g: &mut Graph, log_probs: Var, targets: &[usize], smoothing: f64) -> Result<Var> {
    let (rows, vocab) = g.value(log_probs).dims2()?;
    if rows != targets.len() {
        return Err(IrisError::shape(
            "label_smoothed_nll",
            format!("{rows} rows for {} targets", targets.len()),
        ));
    }
    let mut q = vec![smoothing / vocab as f64; rows * vocab];
    for (r, &t) in targets.iter().enumerate() {
        if t >= vocab {
            return Err(IrisError::InvalidArgument(format!("target {t} outside vocabulary of {vocab}")));
        }
        q[r * vocab + t] += 1.0 - smoothing;
    }
    let q = g.constant(Tensor::from_parts(vec![rows, vocab], q));
    let dot = g.dot(log_probs, q)?;
    Ok(g.scale(dot, -1.0 / rows as f64))
}

/// `ctc_weight * ctc + (1 - ctc_weight) * attention`.
pub fn joint_asr_loss(g: &mut Graph, ctc: Var, attention: Var, ctc_weight: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&ctc_weight) {
        return Err(IrisError::InvalidArgument(format!(
            "CTC weight {ctc_weight} outside [0, 1]"
        )));
    }
    if ctc_weight == 0.0 {
        return Ok(attention);
    }
    if ctc_weight == 1.0 {
        return Ok(ctc);
    }
    let a = g.scale(ctc, ctc_weight);
    let b = g.scale(attention, 1.0 - ctc_weight);
    g.add(a, b)
}

/// Scalar form of [`joint_asr_loss`].
pub fn joint_loss_value(ctc: f64, attention: f64, ctc_weight: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&ctc_weight) {
        return Err(IrisError::InvalidArgument(format!(
            "CTC weight {ctc_weight} outside [0, 1]"
        )));
    }
    Ok(ctc_weight * ctc + (1.0 - ctc_weight) * attention)
}

/// Teacher-forced attention branch output for one transcript.
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    pub loss: Var,
    /// Positions (including end-of-sentence) whose argmax equals the target.
    pub correct: usize,
    pub positions: usize,
}

pub fn attention_loss_graph(
    fw: &mut Forward,
    encoded: Var,
    target: &TokenSequence,
    cfg: &AsrConfig,
) -> Result<AttentionOutput> {
    if target.is_empty() {
        return Err(IrisError::InvalidArgument("attention loss needs a non-empty target".into()));
    }
    let inputs: Vec<usize> = std::iter::once(SOS).chain(target.ids.iter().copied()).collect();
    let outputs: Vec<usize> = target.ids.iter().copied().chain(std::iter::once(EOS)).collect();
    let logits = decoder_graph(fw, encoded, &inputs, cfg)?;
    let lp = fw.g.log_softmax_rows(logits)?;
    let correct = fw
        .g
        .value(lp)
        .data()
        .chunks(cfg.vocab_size)
        .zip(&outputs)
        .filter(|(row, &t)| argmax(row) == t)
        .count();
    let loss = label_smoothed_nll(&mut fw.g, lp, &outputs, cfg.label_smoothing)?;
    Ok(AttentionOutput {
        loss,
        correct,
        positions: outputs.len(),
    })
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// All loss terms of one utterance.
#[derive(Debug, Clone, Copy)]
pub struct AsrLossVars {
    pub total: Var,
    pub ctc: Var,
    pub attention: Var,
    pub correct: usize,
    pub positions: usize,
}

/// Joint CTC/attention loss of a `frames x input_dim` feature node.
pub fn asr_loss_graph(
    fw: &mut Forward,
    features: Var,
    target: &TokenSequence,
    cfg: &AsrConfig,
) -> Result<AsrLossVars> {
    let enc = encoder_graph(fw, features, cfg)?;
    let lp = ctc_log_probs_graph(fw, enc)?;
    let ctc = super::ctc::ctc_loss(&mut fw.g, lp, &target.ids)?;
    let att = attention_loss_graph(fw, enc, target, cfg)?;
    let total = joint_asr_loss(&mut fw.g, ctc, att.loss, cfg.ctc_weight)?;
    Ok(AsrLossVars {
        total,
        ctc,
        attention: att.loss,
        correct: att.correct,
        positions: att.positions,
    })
}

/// Encoder output for a feature matrix, in evaluation mode.
pub fn encode(features: &FeatureMatrix, params: &ParameterStore, cfg: &AsrConfig) -> Result<Tensor> {
    let mut fw = Forward::eval(params);
    let x = fw.g.constant(features.to_tensor());
    let y = encoder_graph(&mut fw, x, cfg)?;
    Ok(fw.g.value(y).clone())
}

/// Teacher-forced attention loss of `target` given an encoder output.
pub fn attention_loss(
    encoder_out: &Tensor,
    target: &TokenSequence,
    params: &ParameterStore,
    cfg: &AsrConfig,
) -> Result<f64> {
    let mut fw = Forward::eval(params);
    let enc = fw.g.constant(encoder_out.clone());
    let out = attention_loss_graph(&mut fw, enc, target, cfg)?;
    Ok(fw.g.scalar(out.loss))
}

/// Front-end output for a feature matrix, in evaluation mode.
pub fn subsample_frontend(features: &FeatureMatrix, params: &ParameterStore, cfg: &AsrConfig) -> Result<Tensor> {
    let mut fw = Forward::eval(params);
    let x = fw.g.constant(features.to_tensor());
    let y = subsample_graph(&mut fw, x, cfg)?;
    Ok(fw.g.value(y).clone())
}
