//! Conv-TasNet enhancement: a learned conv encoder, a TCN mask estimator and
//! a transposed-conv decoder, all in the `se` partition.
//!
//! Signal path for a waveform of `len` samples:
//!
//! ```text
//! wave [1 x len] -> conv1d(L, stride) -> ReLU -> rep [N x F]
//! rep -> gLN -> 1x1 to B -> R x X dilated blocks -> sum of skips -> PReLU
//!     -> 1x1 to N -> sigmoid -> mask [N x F]
//! mask * rep -> conv_transpose1d(L, stride) -> zero-pad to len
//! ```
//!
//! Each block is `1x1 (B->H), PReLU, gLN, depthwise conv (P taps, dilation
//! 2^x, symmetric padding), PReLU, gLN`, followed by a 1x1 residual output
//! and a 1x1 skip output, both back to B channels.

mod sisnr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use sisnr::{si_snr, si_snr_graph, si_snr_loss, si_snr_uncapped, SI_SNR_CAP_DB, SI_SNR_EPS};

use crate::autodiff::{Axis, Conv1dSpec, Var};
use crate::error::{IrisError, Result};
use crate::nn::{init, Forward};
use crate::params::ParameterStore;
use crate::signal::WaveformBuffer;
use crate::tensor::Tensor;

const GLN_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TasNetConfig {
    pub n_filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub bottleneck: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub blocks_per_repeat: usize,
    pub repeats: usize,
}

impl Default for TasNetConfig {
    fn default() -> Self {
        Self {
            n_filters: 256,
            kernel: 40,
            stride: 20,
            bottleneck: 256,
            conv_channels: 512,
            conv_kernel: 3,
            blocks_per_repeat: 4,
            repeats: 2,
        }
    }
}

impl TasNetConfig {
    /// Narrow channels for CPU experiments; the kernel, stride, block and
    /// repeat counts keep their full-size values.
    pub fn toy() -> Self {
        Self {
            n_filters: 64,
            bottleneck: 32,
            conv_channels: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_filters", self.n_filters),
            ("kernel", self.kernel),
            ("stride", self.stride),
            ("bottleneck", self.bottleneck),
            ("conv_channels", self.conv_channels),
            ("conv_kernel", self.conv_kernel),
            ("blocks_per_repeat", self.blocks_per_repeat),
            ("repeats", self.repeats),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(IrisError::Config(format!("se.{name} must be positive")));
        }
        if self.stride > self.kernel {
            return Err(IrisError::Config(format!(
                "se.stride {} exceeds se.kernel {}",
                self.stride, self.kernel
            )));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(IrisError::Config(
                "se.conv_kernel must be odd for length-preserving padding".into(),
            ));
        }
        Ok(())
    }

    /// Encoder frames for a waveform of `len` samples.
    pub fn frames(&self, len: usize) -> Option<usize> {
        Conv1dSpec::strided(self.stride).output_len(len, self.kernel)
    }

    fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.repeats * self.blocks_per_repeat)
            .map(move |i| (i, 1usize << (i % self.blocks_per_repeat)))
    }
}

/// Output of [`enhance`].
#[derive(Debug, Clone)]
pub struct EnhancementOutput {
    pub enhanced: WaveformBuffer,
    pub mask: Tensor,
    pub encoder_frames: usize,
}

/// Adds freshly initialized `se.*` parameters to `store`.
pub fn init_params(store: &mut ParameterStore, cfg: &TasNetConfig, seed: u64) -> Result<()> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_5e);
    let (n, l, b, h, p) = (
        cfg.n_filters,
        cfg.kernel,
        cfg.bottleneck,
        cfg.conv_channels,
        cfg.conv_kernel,
    );
    store.insert("se.encoder.weight", init::fan_in(&[n, 1, l], l, &mut rng))?;
    store.insert("se.separator.norm.gain", Tensor::full(&[n], 1.0))?;
    store.insert("se.separator.norm.bias", Tensor::zeros(&[n]))?;
    store.insert("se.separator.bottleneck.weight", init::fan_in(&[b, n], n, &mut rng))?;
    store.insert("se.separator.bottleneck.bias", Tensor::zeros(&[b]))?;
    for (i, _) in cfg.blocks() {
        let pre = format!("se.tcn.{i}");
        store.insert(format!("{pre}.conv_in.weight"), init::fan_in(&[h, b], b, &mut rng))?;
        store.insert(format!("{pre}.conv_in.bias"), Tensor::zeros(&[h]))?;
        store.insert(format!("{pre}.prelu1"), Tensor::scalar(0.25))?;
        store.insert(format!("{pre}.norm1.gain"), Tensor::full(&[h], 1.0))?;
        store.insert(format!("{pre}.norm1.bias"), Tensor::zeros(&[h]))?;
        store.insert(format!("{pre}.depthwise.weight"), init::fan_in(&[h, p], p, &mut rng))?;
        store.insert(format!("{pre}.depthwise.bias"), Tensor::zeros(&[h]))?;
        store.insert(format!("{pre}.prelu2"), Tensor::scalar(0.25))?;
        store.insert(format!("{pre}.norm2.gain"), Tensor::full(&[h], 1.0))?;
        store.insert(format!("{pre}.norm2.bias"), Tensor::zeros(&[h]))?;
        store.insert(format!("{pre}.residual.weight"), init::fan_in(&[b, h], h, &mut rng))?;
        store.insert(format!("{pre}.residual.bias"), Tensor::zeros(&[b]))?;
        store.insert(format!("{pre}.skip.weight"), init::fan_in(&[b, h], h, &mut rng))?;
        store.insert(format!("{pre}.skip.bias"), Tensor::zeros(&[b]))?;
    }
    store.insert("se.mask.prelu", Tensor::scalar(0.25))?;
    store.insert("se.mask.weight", init::fan_in(&[n, b], b, &mut rng))?;
    store.insert("se.mask.bias", Tensor::zeros(&[n]))?;
    store.insert("se.decoder.weight", init::fan_in(&[n, 1, l], n, &mut rng))?;
    Ok(())
}

/// Checks that `store` holds every `se.*` parameter `cfg` needs, with the
/// right shapes.
pub fn check_params(store: &ParameterStore, cfg: &TasNetConfig) -> Result<()> {
    let mut expected = ParameterStore::new();
    init_params(&mut expected, cfg, 0)?;
    for (name, t) in expected.iter() {
        store.expect(name, t.shape())?;
    }
    Ok(())
}

fn pointwise(fw: &mut Forward, prefix: &str, x: Var) -> Result<Var> {
    let w = fw.param(&format!("{prefix}.weight"))?;
    let b = fw.param(&format!("{prefix}.bias"))?;
    let y = fw.g.matmul(w, x)?;
    fw.g.add_col(y, b)
}

fn global_norm(fw: &mut Forward, prefix: &str, x: Var) -> Result<Var> {
    let gain = fw.param(&format!("{prefix}.gain"))?;
    let bias = fw.param(&format!("{prefix}.bias"))?;
    global_layer_norm(&mut fw.g, x, gain, bias, GLN_EPS)
}

/// Normalizes a `channels x frames` input jointly over both axes, then
/// applies a per-channel gain and bias.
pub fn global_layer_norm(
    g: &mut crate::autodiff::Graph,
    input: Var,
    gain: Var,
    bias: Var,
    epsilon: f64,
) -> Result<Var> {
    let n = g.standardize(input, Axis::All, epsilon)?;
    let scaled = g.mul_col(n, gain)?;
    g.add_col(scaled, bias)
}

/// Encoder: bias-free strided conv followed by ReLU, `N x frames`.
pub fn tasnet_encode(fw: &mut Forward, wave: Var, cfg: &TasNetConfig) -> Result<Var> {
    let len = fw.g.shape(wave).last().copied().unwrap_or(0);
    if len < cfg.kernel {
        return Err(IrisError::InvalidArgument(format!(
            "waveform of {len} samples is shorter than the {}-sample encoder kernel",
            cfg.kernel
        )));
    }
    let w = fw.param_shaped("se.encoder.weight", &[cfg.n_filters, 1, cfg.kernel])?;
    let y = fw.g.conv1d(wave, w, None, Conv1dSpec::strided(cfg.stride))?;
    Ok(fw.g.relu(y))
}

/// TCN mask estimator; output has the representation's shape, values in (0, 1).
pub fn tasnet_mask(fw: &mut Forward, rep: Var, cfg: &TasNetConfig) -> Result<Var> {
    let (b, h, p) = (cfg.bottleneck, cfg.conv_channels, cfg.conv_kernel);
    fw.params()
        .expect("se.separator.bottleneck.weight", &[b, cfg.n_filters])?;
    let normed = global_norm(fw, "se.separator.norm", rep)?;
    let mut x = pointwise(fw, "se.separator.bottleneck", normed)?;
    let mut skip_sum: Option<Var> = None;
    for (i, dilation) in cfg.blocks() {
        let pre = format!("se.tcn.{i}");
        fw.params().expect(&format!("{pre}.depthwise.weight"), &[h, p])?;
        let y = pointwise(fw, &format!("{pre}.conv_in"), x)?;
        let a1 = fw.param(&format!("{pre}.prelu1"))?;
        let y = fw.g.prelu(y, a1)?;
        let y = global_norm(fw, &format!("{pre}.norm1"), y)?;
        let dw = fw.param(&format!("{pre}.depthwise.weight"))?;
        let db = fw.param(&format!("{pre}.depthwise.bias"))?;
        let spec = Conv1dSpec {
            stride: 1,
            padding: dilation * (p - 1) / 2,
            dilation,
        };
        let y = fw.g.depthwise_conv1d(y, dw, Some(db), spec)?;
        let a2 = fw.param(&format!("{pre}.prelu2"))?;
        let y = fw.g.prelu(y, a2)?;
        let y = global_norm(fw, &format!("{pre}.norm2"), y)?;
        let res = pointwise(fw, &format!("{pre}.residual"), y)?;
        let skip = pointwise(fw, &format!("{pre}.skip"), y)?;
        x = fw.g.add(x, res)?;
        skip_sum = Some(match skip_sum {
            Some(s) => fw.g.add(s, skip)?,
            None => skip,
        });
    }
    let s = skip_sum.unwrap_or(x);
    let a = fw.param("se.mask.prelu")?;
    let s = fw.g.prelu(s, a)?;
    let m = pointwise(fw, "se.mask", s)?;
    Ok(fw.g.sigmoid(m))
}

/// Decoder: transposed conv back to one channel, zero-padded to `len`.
pub fn tasnet_decode(fw: &mut Forward, masked: Var, len: usize, cfg: &TasNetConfig) -> Result<Var> {
    let w = fw.param_shaped("se.decoder.weight", &[cfg.n_filters, 1, cfg.kernel])?;
    let y = fw.g.conv_transpose1d(masked, w, cfg.stride)?;
    let produced = fw.g.shape(y)[1];
    if produced == len {
        return Ok(y);
    }
    let idx: Vec<Option<usize>> = (0..len).map(|i| (i < produced).then_some(i)).collect();
    fw.g.gather(y, &idx, &[1, len])
}

/// Mask source for [`enhance_graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    #[default]
    Estimated,
    /// Bypasses the TCN with an all-ones mask.
    Unit,
}

/// Graph nodes produced by one enhancement pass.
#[derive(Debug, Clone, Copy)]
pub struct EnhanceVars {
    pub enhanced: Var,
    pub mask: Var,
    pub representation: Var,
}

/// Enhancement of a `1 x len` waveform node.
pub fn enhance_graph(
    fw: &mut Forward,
    wave: Var,
    cfg: &TasNetConfig,
    mode: MaskMode,
) -> Result<EnhanceVars> {
    let len = fw.g.shape(wave)[1];
    let rep = tasnet_encode(fw, wave, cfg)?;
    let mask = match mode {
        MaskMode::Estimated => tasnet_mask(fw, rep, cfg)?,
        MaskMode::Unit => {
            let shape = fw.g.shape(rep).to_vec();
            fw.g.constant(Tensor::full(&shape, 1.0))
        }
    };
    let masked = fw.g.mul(mask, rep)?;
    let enhanced = tasnet_decode(fw, masked, len, cfg)?;
    Ok(EnhanceVars {
        enhanced,
        mask,
        representation: rep,
    })
}

pub(crate) fn wave_tensor(wave: &WaveformBuffer) -> Tensor {
    Tensor::from_parts(vec![1, wave.len()], wave.samples().to_vec())
}

/// Runs the enhancement module on one waveform.
pub fn enhance(wave: &WaveformBuffer, params: &ParameterStore, cfg: &TasNetConfig) -> Result<EnhancementOutput> {
    let mut fw = Forward::eval(params);
    let x = fw.g.constant(wave_tensor(wave));
    let vars = enhance_graph(&mut fw, x, cfg, MaskMode::Estimated)?;
    let enhanced = WaveformBuffer::new(fw.g.value(vars.enhanced).data().to_vec())?;
    let mask = fw.g.value(vars.mask).clone();
    Ok(EnhancementOutput {
        enhanced,
        encoder_frames: mask.shape()[1],
        mask,
    })
}
