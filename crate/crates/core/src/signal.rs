//! Waveforms, framing, spectra and log-Mel filterbank features.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{IrisError, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;

/// Log floor added before taking the logarithm of filterbank energies.
pub const LOG_FLOOR: f64 = 1e-10;

/// Fbank geometry: 25 ms window, 10 ms shift, 512-point FFT.
pub const FBANK_FRAME_LENGTH: usize = 400;
pub const FBANK_FRAME_SHIFT: usize = 160;
pub const FBANK_FFT_SIZE: usize = 512;
pub const FBANK_NUM_FILTERS: usize = 80;

/// Mono audio at 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformBuffer {
    samples: Vec<f64>,
}

impl WaveformBuffer {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(IrisError::InvalidArgument("waveform is empty".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(IrisError::InvalidArgument(format!(
                "waveform sample {i} is not finite"
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn power(&self) -> f64 {
        self.energy() / self.samples.len() as f64
    }
}

/// Time-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    values: Vec<f64>,
    frame_shift: f64,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, values: Vec<f64>, frame_shift: f64) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(IrisError::InvalidArgument(format!(
                "feature matrix needs >= 1 frame and dim, got {frames}x{dim}"
            )));
        }
        if values.len() != frames * dim {
            return Err(IrisError::shape(
                "feature_matrix",
                format!("{frames}x{dim} needs {} values, got {}", frames * dim, values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IrisError::InvalidArgument("feature values must be finite".into()));
        }
        Ok(Self {
            frames,
            dim,
            values,
            frame_shift,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame_shift(&self) -> f64 {
        self.frame_shift
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.values[t * self.dim + d]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.frames, self.dim], self.values.clone())
    }

    pub fn from_tensor(t: &Tensor, frame_shift: f64) -> Result<Self> {
        let (r, c) = t.dims2()?;
        Self::new(r, c, t.data().to_vec(), frame_shift)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Hann,
}

impl Window {
    /// Periodic Hann window of `n` taps (`w[0] = 0`).
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

/// Number of frames produced by [`frame_signal`].
pub fn frame_count(len: usize, frame_length: usize, frame_shift: usize) -> Option<usize> {
    if frame_shift == 0 || frame_length == 0 || len < frame_length {
        return None;
    }
    Some((len - frame_length) / frame_shift + 1)
}

/// Splits a waveform into windowed frames, a `frames x frame_length` matrix.
pub fn frame_signal(
    wave: &WaveformBuffer,
    frame_length: usize,
    frame_shift: usize,
    window: Window,
) -> Result<Tensor> {
    let frames = frame_count(wave.len(), frame_length, frame_shift).ok_or_else(|| {
        IrisError::InvalidArgument(format!(
            "waveform of {} samples is shorter than one {frame_length}-sample frame",
            wave.len()
        ))
    })?;
    let w = window.coefficients(frame_length);
    let s = wave.samples();
    let mut data = Vec::with_capacity(frames * frame_length);
    for f in 0..frames {
        let seg = &s[f * frame_shift..f * frame_shift + frame_length];
        data.extend(seg.iter().zip(&w).map(|(x, w)| x * w));
    }
    Ok(Tensor::from_parts(vec![frames, frame_length], data))
}

/// Reusable FFT plan for power spectra of a fixed size.
pub struct PowerSpectrum {
    size: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl PowerSpectrum {
    pub fn new(size: usize) -> Result<Self> {
        if !size.is_power_of_two() || size < 2 {
            return Err(IrisError::InvalidArgument(format!(
                "FFT size {size} is not a power of two"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(size);
        Ok(Self { size, fft })
    }

    /// `|DFT|²` at bins `0..=size/2` of `frame`, zero-padded to the plan size.
    pub fn compute(&self, frame: &[f64]) -> Result<Vec<f64>> {
        if frame.len() > self.size {
            return Err(IrisError::InvalidArgument(format!(
                "frame of {} samples exceeds FFT size {}",
                frame.len(),
                self.size
            )));
        }
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(self.size, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        Ok(buf[..=self.size / 2].iter().map(|c| c.norm_sqr()).collect())
    }
}

/// Power spectrum of a frame whose length is a power of two.
pub fn power_spectrum(frame: &[f64]) -> Result<Vec<f64>> {
    PowerSpectrum::new(frame.len())?.compute(frame)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with centers equally spaced on the mel scale, a
/// `num_filters x fft_bins` matrix. Bin `k` sits at `k * sr / (2 (fft_bins - 1))` Hz.
pub fn mel_filterbank_matrix(
    num_filters: usize,
    fft_bins: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<Tensor> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(IrisError::InvalidArgument(format!(
            "mel range {f_min}..{f_max} Hz must satisfy 0 <= f_min < f_max <= {nyquist}"
        )));
    }
    if num_filters < 2 || fft_bins < 2 {
        return Err(IrisError::InvalidArgument(format!(
            "need >= 2 filters and bins, got {num_filters} and {fft_bins}"
        )));
    }
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let mut edges: Vec<f64> = (0..num_filters + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (num_filters + 1) as f64))
        .collect();
    // pin the outer edges so the mel round trip cannot leak past the range
    edges[0] = f_min;
    edges[num_filters + 1] = f_max;
    let bin_hz = nyquist / (fft_bins - 1) as f64;
    let mut data = vec![0.0; num_filters * fft_bins];
    for m in 0..num_filters {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..fft_bins {
            let f = k as f64 * bin_hz;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            data[m * fft_bins + k] = w;
        }
    }
    Ok(Tensor::from_parts(vec![num_filters, fft_bins], data))
}

/// Center frequencies (Hz) of the filters built by [`mel_filterbank_matrix`].
pub fn mel_centers(num_filters: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    (1..=num_filters)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (num_filters + 1) as f64))
        .collect()
}

/// `log(mel · |DFT|² + floor)` per 25 ms frame at a 10 ms shift.
pub fn log_mel_fbank(wave: &WaveformBuffer, num_filters: usize) -> Result<FeatureMatrix> {
    let frames = frame_signal(wave, FBANK_FRAME_LENGTH, FBANK_FRAME_SHIFT, Window::Hann)?;
    let n_frames = frames.shape()[0];
    let bins = FBANK_FFT_SIZE / 2 + 1;
    let mel = mel_filterbank_matrix(num_filters, bins, SAMPLE_RATE, 0.0, SAMPLE_RATE as f64 / 2.0)?;
    let plan = PowerSpectrum::new(FBANK_FFT_SIZE)?;
    let mut values = Vec::with_capacity(n_frames * num_filters);
    for frame in frames.data().chunks(FBANK_FRAME_LENGTH) {
        let power = plan.compute(frame)?;
        for filt in mel.data().chunks(bins) {
            let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            values.push((e + LOG_FLOOR).ln());
        }
    }
    FeatureMatrix::new(
        n_frames,
        num_filters,
        values,
        FBANK_FRAME_SHIFT as f64 / SAMPLE_RATE as f64,
    )
}

/// Per-utterance mean and variance normalization of every feature dimension.
pub fn normalize_mean_variance(features: &mut FeatureMatrix, eps: f64) {
    let (frames, dim) = (features.frames(), features.dim());
    let values = features.values_mut();
    for d in 0..dim {
        let mean = (0..frames).map(|t| values[t * dim + d]).sum::<f64>() / frames as f64;
        let var = (0..frames)
            .map(|t| (values[t * dim + d] - mean).powi(2))
            .sum::<f64>()
            / frames as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for t in 0..frames {
            values[t * dim + d] = (values[t * dim + d] - mean) * inv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_power(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn frame_count_formula() {
        let wave = WaveformBuffer::new(vec![0.1; 560]).unwrap();
        let frames = frame_signal(&wave, 400, 160, Window::Hann).unwrap();
        assert_eq!(frames.shape(), &[2, 400]);
        assert!(frame_signal(&WaveformBuffer::new(vec![0.0; 399]).unwrap(), 400, 160, Window::Hann).is_err());
    }

    #[test]
    fn hann_zeroes_first_sample_of_each_frame() {
        let wave = WaveformBuffer::new((0..1000).map(|v| 1.0 + v as f64).collect()).unwrap();
        let frames = frame_signal(&wave, 400, 160, Window::Hann).unwrap();
        for row in frames.data().chunks(400) {
            assert_eq!(row[0], 0.0);
        }
    }

    #[test]
    fn second_frame_of_ramp_matches_hand_product() {
        let ramp: Vec<f64> = (0..700).map(|v| v as f64 / 700.0).collect();
        let wave = WaveformBuffer::new(ramp.clone()).unwrap();
        let frames = frame_signal(&wave, 400, 160, Window::Hann).unwrap();
        for n in 0..400 {
            let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / 400.0).cos();
            assert!((frames.at2(1, n) - w * ramp[160 + n]).abs() < 1e-15);
        }
    }

    #[test]
    fn power_spectrum_of_zero_frame_is_zero() {
        assert!(power_spectrum(&[0.0; 16]).unwrap().iter().all(|&v| v == 0.0));
        assert!(power_spectrum(&[0.0; 12]).is_err());
    }

    #[test]
    fn cosine_on_bin_concentrates_energy() {
        let n = 64;
        let k = 5;
        let frame: Vec<f64> = (0..n).map(|t| (2.0 * PI * (k * t) as f64 / n as f64).cos()).collect();
        let p = power_spectrum(&frame).unwrap();
        let peak = p[k];
        for (i, v) in p.iter().enumerate() {
            if i != k {
                assert!(*v < 1e-10 * peak, "bin {i}: {v}");
            }
        }
    }

    #[test]
    fn power_spectrum_matches_direct_dft() {
        let frame = [0.3, -1.2, 0.8, 0.05, -0.6, 2.0, -0.1, 0.9];
        let fast = power_spectrum(&frame).unwrap();
        let slow = naive_power(&frame);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn mel_filters_are_single_peaked_and_vanish_at_range_ends() {
        for (nf, bins) in [(4, 257), (80, 257), (23, 129)] {
            let m = mel_filterbank_matrix(nf, bins, SAMPLE_RATE, 0.0, 8000.0).unwrap();
            for row in m.data().chunks(bins) {
                assert_eq!(row[0], 0.0);
                assert_eq!(row[bins - 1], 0.0);
                assert!(row.iter().all(|&v| v >= 0.0));
                let max = row.iter().cloned().fold(0.0, f64::max);
                assert!(max > 0.0);
                assert_eq!(row.iter().filter(|&&v| v == max).count(), 1);
                let peak = row.iter().position(|&v| v == max).unwrap();
                assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
                assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
            }
            let centers = mel_centers(nf, 0.0, 8000.0);
            assert!(centers.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(mel_filterbank_matrix(4, 257, SAMPLE_RATE, 100.0, 9000.0).is_err());
        assert!(mel_filterbank_matrix(4, 257, SAMPLE_RATE, 500.0, 500.0).is_err());
    }

    #[test]
    fn mel_triangle_weight_matches_scalar_formula() {
        // Four filters on 0-8 kHz: five equal steps in mel.
        let m = mel_filterbank_matrix(4, 257, SAMPLE_RATE, 0.0, 8000.0).unwrap();
        let mel_top = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        let edge = |i: f64| 700.0 * (10f64.powf(mel_top * i / 5.0 / 2595.0) - 1.0);
        let (left, center, right) = (edge(2.0), edge(3.0), edge(4.0));
        // filter index 2 spans edges 2..4; pick a bin on each slope
        for k in [60usize, 90, 130, 200] {
            let f = k as f64 * 31.25;
            let expect = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            assert!((m.at2(2, k) - expect).abs() < 1e-9, "bin {k}");
        }
        assert!(m.at2(2, 90) > 0.0);
    }

    #[test]
    fn silence_maps_to_log_floor() {
        let wave = WaveformBuffer::new(vec![0.0; 1600]).unwrap();
        let f = log_mel_fbank(&wave, 80).unwrap();
        assert_eq!(f.frames(), frame_count(1600, 400, 160).unwrap());
        assert_eq!(f.dim(), 80);
        assert!(f.values().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn tone_peaks_in_the_filter_containing_it() {
        let wave = WaveformBuffer::new(
            (0..4000)
                .map(|t| 0.5 * (2.0 * PI * 440.0 * t as f64 / 16000.0).sin())
                .collect(),
        )
        .unwrap();
        let f = log_mel_fbank(&wave, 80).unwrap();
        let centers = mel_centers(80, 0.0, 8000.0);
        // the filter whose center is nearest 440 Hz on the mel scale
        let expect = centers
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (hz_to_mel(*a.1) - hz_to_mel(440.0))
                    .abs()
                    .total_cmp(&(hz_to_mel(*b.1) - hz_to_mel(440.0)).abs())
            })
            .unwrap()
            .0;
        let row = f.row(f.frames() / 2);
        let arg = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(arg, expect);
    }
}
