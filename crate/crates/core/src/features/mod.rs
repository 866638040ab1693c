//! Feature extraction in front of the recognizer: log-Mel filterbanks or a
//! frozen self-supervised-representation stand-in, the trainable projection
//! of the latter, and SpecAugment masking.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Axis, Conv1dSpec, Var};
use crate::error::{IrisError, Result};
use crate::nn::{self, Forward};
use crate::params::{ParameterStore, Partition};
use crate::signal::{
    self, FeatureMatrix, WaveformBuffer, Window, FBANK_FFT_SIZE, FBANK_FRAME_LENGTH,
    FBANK_FRAME_SHIFT, FBANK_NUM_FILTERS, LOG_FLOOR, SAMPLE_RATE,
};
use crate::tensor::Tensor;

/// Output width of the learned-representation stub.
pub const SSLR_DIM: usize = 1024;
/// Width after the trainable projection.
pub const PROJECTION_DIM: usize = 128;
/// Epsilon of per-utterance mean/variance normalization of filterbanks.
pub const MVN_EPS: f64 = 1e-5;

const SSLR_KERNELS: [usize; 5] = [10, 8, 8, 4, 4];
const SSLR_STRIDES: [usize; 5] = [5, 4, 4, 2, 2];
const SSLR_CHANNELS: [usize; 5] = [64, 128, 128, 256, SSLR_DIM];
const SSLR_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureExtractorKind {
    Fbank,
    SslrStub { seed: u64 },
}

impl FeatureExtractorKind {
    pub fn output_dim(&self) -> usize {
        match self {
            Self::Fbank => FBANK_NUM_FILTERS,
            Self::SslrStub { .. } => SSLR_DIM,
        }
    }

    /// Width fed to the recognizer after projection.
    pub fn model_input_dim(&self) -> usize {
        match self {
            Self::Fbank => FBANK_NUM_FILTERS,
            Self::SslrStub { .. } => PROJECTION_DIM,
        }
    }

    /// Seconds between consecutive feature frames.
    pub fn frame_shift(&self) -> f64 {
        match self {
            Self::Fbank => FBANK_FRAME_SHIFT as f64 / SAMPLE_RATE as f64,
            Self::SslrStub { .. } => {
                SSLR_STRIDES.iter().product::<usize>() as f64 / SAMPLE_RATE as f64
            }
        }
    }

    /// Frames produced for a waveform of `len` samples.
    pub fn frames(&self, len: usize) -> Option<usize> {
        match self {
            Self::Fbank => signal::frame_count(len, FBANK_FRAME_LENGTH, FBANK_FRAME_SHIFT),
            Self::SslrStub { .. } => SSLR_KERNELS
                .iter()
                .zip(SSLR_STRIDES)
                .try_fold(len, |l, (&k, s)| Conv1dSpec::strided(s).output_len(l, k)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Fbank => "fbank",
            Self::SslrStub { .. } => "sslr_stub",
        }
    }

    /// Parses a `feature.kind` value; `seed` is used by `sslr_stub` only.
    pub fn parse(kind: &str, seed: u64) -> Result<Self> {
        match kind {
            "fbank" => Ok(Self::Fbank),
            "sslr_stub" => Ok(Self::SslrStub { seed }),
            other => Err(IrisError::Config(format!(
                "unknown feature.kind `{other}` (expected fbank or sslr_stub)"
            ))),
        }
    }
}

impl fmt::Display for FeatureExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureExtractorKind {
    type Err = IrisError;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, 0)
    }
}

/// Adds the stub's conv weights to `store` and freezes the `sslr` partition.
/// The weights depend only on `seed`.
pub fn init_sslr_params(store: &mut ParameterStore, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c_in = 1;
    for (i, (&k, &c_out)) in SSLR_KERNELS.iter().zip(&SSLR_CHANNELS).enumerate() {
        // He-uniform keeps activations from shrinking through the ReLU stack.
        let bound = (6.0 / (c_in * k) as f64).sqrt();
        store.insert(
            format!("sslr.conv{i}.weight"),
            nn::init::uniform(&[c_out, c_in, k], bound, &mut rng),
        )?;
        c_in = c_out;
    }
    store.set_frozen(Partition::Sslr, true);
    Ok(())
}

/// Adds the trainable 1024 -> 128 projection to the `asr` partition.
pub fn init_projection(store: &mut ParameterStore, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e0f_u64);
    nn::add_linear(store, "asr.projection", SSLR_DIM, PROJECTION_DIM, &mut rng)
}

fn hann_dft_bases() -> (Tensor, Tensor) {
    let bins = FBANK_FFT_SIZE / 2 + 1;
    let mut cos = vec![0.0; FBANK_FRAME_LENGTH * bins];
    let mut sin = vec![0.0; FBANK_FRAME_LENGTH * bins];
    let window = Window::Hann.coefficients(FBANK_FRAME_LENGTH);
    for (n, w) in window.iter().enumerate() {
        for k in 0..bins {
            let phase = 2.0 * std::f64::consts::PI * ((n * k) % FBANK_FFT_SIZE) as f64
                / FBANK_FFT_SIZE as f64;
            cos[n * bins + k] = w * phase.cos();
            sin[n * bins + k] = w * phase.sin();
        }
    }
    (
        Tensor::from_parts(vec![FBANK_FRAME_LENGTH, bins], cos),
        Tensor::from_parts(vec![FBANK_FRAME_LENGTH, bins], sin),
    )
}

fn too_short(len: usize, kind: FeatureExtractorKind) -> IrisError {
    IrisError::InvalidArgument(format!(
        "waveform of {len} samples is too short for {kind} features"
    ))
}

/// Differentiable log-Mel filterbank of a `1 x len` waveform node, as a
/// `frames x 80` node. Uses a windowed DFT matrix instead of an FFT, so it
/// agrees with [`signal::log_mel_fbank`] to rounding error.
pub fn fbank_graph(fw: &mut Forward, wave: Var) -> Result<Var> {
    let len = fw.g.shape(wave)[1];
    let frames = FeatureExtractorKind::Fbank
        .frames(len)
        .ok_or_else(|| too_short(len, FeatureExtractorKind::Fbank))?;
    let idx: Vec<Option<usize>> = (0..frames)
        .flat_map(|f| (0..FBANK_FRAME_LENGTH).map(move |i| Some(f * FBANK_FRAME_SHIFT + i)))
        .collect();
    let framed = fw.g.gather(wave, &idx, &[frames, FBANK_FRAME_LENGTH])?;
    let (cos, sin) = hann_dft_bases();
    let cos = fw.g.constant(cos);
    let sin = fw.g.constant(sin);
    let re = fw.g.matmul(framed, cos)?;
    let im = fw.g.matmul(framed, sin)?;
    let re2 = fw.g.square(re);
    let im2 = fw.g.square(im);
    let power = fw.g.add(re2, im2)?;
    let mel = signal::mel_filterbank_matrix(
        FBANK_NUM_FILTERS,
        FBANK_FFT_SIZE / 2 + 1,
        SAMPLE_RATE,
        0.0,
        SAMPLE_RATE as f64 / 2.0,
    )?;
    let mel = fw.g.constant(mel);
    let energies = fw.g.matmul_t(power, mel)?;
    let floored = fw.g.affine(energies, 1.0, LOG_FLOOR);
    Ok(fw.g.log(floored))
}

/// Differentiable stub features of a `1 x len` waveform node, `frames x 1024`.
pub fn sslr_graph(fw: &mut Forward, wave: Var) -> Result<Var> {
    let len = fw.g.shape(wave)[1];
    let kind = FeatureExtractorKind::SslrStub { seed: 0 };
    kind.frames(len).ok_or_else(|| too_short(len, kind))?;
    let mut x = wave;
    let mut c_in = 1;
    for (i, ((&k, &s), &c_out)) in SSLR_KERNELS
        .iter()
        .zip(&SSLR_STRIDES)
        .zip(&SSLR_CHANNELS)
        .enumerate()
    {
        let w = fw.param_shaped(&format!("sslr.conv{i}.weight"), &[c_out, c_in, k])?;
        let y = fw.g.conv1d(x, w, None, Conv1dSpec::strided(s))?;
        x = fw.g.relu(y);
        c_in = c_out;
    }
    let t = fw.g.transpose(x)?;
    fw.g.standardize(t, Axis::Rows, SSLR_NORM_EPS)
}

/// Raw features of a waveform node, before normalization or projection.
pub fn features_graph(fw: &mut Forward, wave: Var, kind: FeatureExtractorKind) -> Result<Var> {
    match kind {
        FeatureExtractorKind::Fbank => fbank_graph(fw, wave),
        FeatureExtractorKind::SslrStub { .. } => sslr_graph(fw, wave),
    }
}

/// Raw features of one waveform. The filterbank path delegates to
/// [`signal::log_mel_fbank`]; the stub path needs `sslr.*` in `params`.
pub fn extract_features(
    wave: &WaveformBuffer,
    kind: FeatureExtractorKind,
    params: &ParameterStore,
) -> Result<FeatureMatrix> {
    match kind {
        FeatureExtractorKind::Fbank => signal::log_mel_fbank(wave, FBANK_NUM_FILTERS),
        FeatureExtractorKind::SslrStub { .. } => {
            let mut fw = Forward::eval(params);
            let x = fw.g.constant(Tensor::from_parts(
                vec![1, wave.len()],
                wave.samples().to_vec(),
            ));
            let y = sslr_graph(&mut fw, x)?;
            FeatureMatrix::from_tensor(fw.g.value(y), kind.frame_shift())
        }
    }
}

/// Per-frame affine projection node when `asr.projection.*` exists,
/// otherwise the input itself.
pub fn project_graph(fw: &mut Forward, x: Var) -> Result<Var> {
    if !fw.params().contains("asr.projection.weight") {
        return Ok(x);
    }
    let w = fw.params().get("asr.projection.weight")?;
    let (fan_in, _) = w.dims2()?;
    let dim = fw.g.shape(x)[1];
    if dim != fan_in {
        return Err(IrisError::shape(
            "project_features",
            format!("features have dim {dim}, projection expects {fan_in}"),
        ));
    }
    nn::linear(fw, "asr.projection", x)
}

/// Applies the projection in `params` (identity when it has none).
pub fn project_features(features: &FeatureMatrix, params: &ParameterStore) -> Result<FeatureMatrix> {
    let mut fw = Forward::eval(params);
    let x = fw.g.constant(features.to_tensor());
    let y = project_graph(&mut fw, x)?;
    FeatureMatrix::from_tensor(fw.g.value(y), features.frame_shift())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecAugmentPolicy {
    pub num_time_masks: usize,
    pub max_time_width: usize,
    pub num_freq_masks: usize,
    pub max_freq_width: usize,
    pub enabled: bool,
}

impl Default for SpecAugmentPolicy {
    fn default() -> Self {
        Self {
            num_time_masks: 2,
            max_time_width: 20,
            num_freq_masks: 2,
            max_freq_width: 10,
            enabled: true,
        }
    }
}

impl SpecAugmentPolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    /// Keep-flags for a `frames x dim` matrix (`false` = masked). Widths are
    /// drawn from `0..=max` and clamped to the matrix extent.
    pub fn keep_mask(&self, frames: usize, dim: usize, seed: u64) -> Vec<bool> {
        let mut keep = vec![true; frames * dim];
        if !self.enabled {
            return keep;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..self.num_time_masks {
            let w = rng.random_range(0..=self.max_time_width).min(frames);
            let start = rng.random_range(0..=frames - w);
            for t in start..start + w {
                keep[t * dim..(t + 1) * dim].fill(false);
            }
        }
        for _ in 0..self.num_freq_masks {
            let w = rng.random_range(0..=self.max_freq_width).min(dim);
            let start = rng.random_range(0..=dim - w);
            for t in 0..frames {
                keep[t * dim + start..t * dim + start + w].fill(false);
            }
        }
        keep
    }
}

/// Zeroes seeded time and frequency stripes; other cells are untouched.
pub fn spec_augment(features: &FeatureMatrix, policy: &SpecAugmentPolicy, rng_seed: u64) -> FeatureMatrix {
    let keep = policy.keep_mask(features.frames(), features.dim(), rng_seed);
    let mut out = features.clone();
    for (v, k) in out.values_mut().iter_mut().zip(keep) {
        if !k {
            *v = 0.0;
        }
    }
    out
}

/// SpecAugment on a graph node; gradients of masked cells are zero.
pub fn spec_augment_graph(
    fw: &mut Forward,
    x: Var,
    policy: &SpecAugmentPolicy,
    rng_seed: u64,
) -> Result<Var> {
    if !policy.enabled {
        return Ok(x);
    }
    let (frames, dim) = fw.g.value(x).dims2()?;
    let keep = policy.keep_mask(frames, dim, rng_seed);
    let m = fw
        .g
        .constant(Tensor::from_parts(vec![frames, dim], keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()));
    fw.g.mul(x, m)
}

/// Per-utterance mean/variance normalization node over frames.
pub fn normalize_graph(fw: &mut Forward, x: Var) -> Result<Var> {
    fw.g.standardize(x, Axis::Cols, MVN_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize) -> WaveformBuffer {
        WaveformBuffer::new(
            (0..len)
                .map(|t| 0.3 * (t as f64 * 0.07).sin() + 0.1 * (t as f64 * 0.71).cos())
                .collect(),
        )
        .unwrap()
    }

    fn sslr_store(seed: u64) -> ParameterStore {
        let mut s = ParameterStore::new();
        init_sslr_params(&mut s, seed).unwrap();
        s
    }

    #[test]
    fn sslr_stub_has_full_width_and_twenty_ms_shift() {
        let store = sslr_store(5);
        assert!(store.is_frozen(Partition::Sslr));
        let kind = FeatureExtractorKind::SslrStub { seed: 5 };
        let f = extract_features(&tone(16000), kind, &store).unwrap();
        assert_eq!(f.dim(), 1024);
        assert_eq!(Some(f.frames()), kind.frames(16000));
        assert!((kind.frame_shift() - 0.02).abs() < 1e-15);
        let again = extract_features(&tone(16000), kind, &sslr_store(5)).unwrap();
        assert_eq!(f.values(), again.values());
    }

    #[test]
    fn fbank_graph_matches_fft_path() {
        let w = tone(3000);
        let direct = signal::log_mel_fbank(&w, 80).unwrap();
        let store = ParameterStore::new();
        let mut fw = Forward::eval(&store);
        let x = fw.g.constant(Tensor::from_parts(vec![1, w.len()], w.samples().to_vec()));
        let y = fbank_graph(&mut fw, x).unwrap();
        let v = fw.g.value(y);
        assert_eq!(v.shape(), &[direct.frames(), 80]);
        let worst = v
            .data()
            .iter()
            .zip(direct.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
        let via_kind = extract_features(&w, FeatureExtractorKind::Fbank, &store).unwrap();
        assert_eq!(via_kind, direct);
    }

    #[test]
    fn projection_is_affine_and_checks_width() {
        let mut store = ParameterStore::new();
        store.insert("asr.projection.weight", Tensor::matrix(2, 1, vec![0.5, -2.0]).unwrap()).unwrap();
        store.insert("asr.projection.bias", Tensor::vector(vec![0.25])).unwrap();
        let f = FeatureMatrix::new(1, 2, vec![3.0, 1.0], 0.02).unwrap();
        let p = project_features(&f, &store).unwrap();
        assert_eq!(p.values(), &[0.5 * 3.0 - 2.0 * 1.0 + 0.25]);
        let wrong = FeatureMatrix::new(1, 3, vec![3.0, 1.0, 0.0], 0.02).unwrap();
        assert!(project_features(&wrong, &store).is_err());
        let none = ParameterStore::new();
        assert_eq!(project_features(&wrong, &none).unwrap(), wrong);
    }

    #[test]
    fn spec_augment_zero_widths_is_identity() {
        let f = FeatureMatrix::new(10, 4, (0..40).map(|v| v as f64 + 1.0).collect(), 0.01).unwrap();
        let p = SpecAugmentPolicy {
            max_time_width: 0,
            max_freq_width: 0,
            ..Default::default()
        };
        assert_eq!(spec_augment(&f, &p, 7), f);
        assert_eq!(spec_augment(&f, &SpecAugmentPolicy::disabled(), 7), f);
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!("mfcc".parse::<FeatureExtractorKind>().is_err());
        assert_eq!(FeatureExtractorKind::parse("sslr_stub", 9).unwrap(), FeatureExtractorKind::SslrStub { seed: 9 });
    }
}
