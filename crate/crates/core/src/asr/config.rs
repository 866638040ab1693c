use crate::error::{IrisError, Result};

/// Recognizer architecture and loss weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsrConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub model_dim: usize,
    pub dropout: f64,
    /// Weight of the CTC term in the training loss.
    pub ctc_weight: f64,
    /// Total time reduction of the convolutional front end for 10 ms input.
    pub subsample_factor: usize,
    pub label_smoothing: f64,
    /// Channels of the two front-end convolutions.
    pub frontend_channels: usize,
    /// Width of the feature frames entering the front end.
    pub input_dim: usize,
    /// Shift of the feature frames entering the front end, in milliseconds.
    pub input_shift_ms: usize,
    pub vocab_size: usize,
}

impl Default for AsrConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 12,
            decoder_layers: 6,
            heads: 4,
            ffn_dim: 2048,
            model_dim: 256,
            dropout: 0.1,
            ctc_weight: 0.3,
            subsample_factor: 4,
            label_smoothing: 0.1,
            frontend_channels: 256,
            input_dim: 80,
            input_shift_ms: 10,
            vocab_size: 30,
        }
    }
}

/// Effective frame shift of the encoder output, in milliseconds.
pub const ENCODER_SHIFT_MS: usize = 40;

impl AsrConfig {
    /// Small recognizer for CPU experiments.
    pub fn toy() -> Self {
        Self {
            encoder_layers: 2,
            decoder_layers: 1,
            ffn_dim: 256,
            model_dim: 64,
            frontend_channels: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("model_dim", self.model_dim),
            ("frontend_channels", self.frontend_channels),
            ("input_dim", self.input_dim),
            ("input_shift_ms", self.input_shift_ms),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(IrisError::Config(format!("asr.{name} must be positive")));
        }
        if self.model_dim % self.heads != 0 {
            return Err(IrisError::Config(format!(
                "asr.model_dim {} is not divisible by asr.heads {}",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..=1.0).contains(&self.ctc_weight) {
            return Err(IrisError::Config(format!(
                "asr.ctc_weight {} outside [0, 1]",
                self.ctc_weight
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(IrisError::Config(
                "asr.dropout and asr.label_smoothing must lie in [0, 1)".into(),
            ));
        }
        if self.vocab_size < 5 {
            return Err(IrisError::Config(
                "asr.vocab_size must cover the 4 specials and at least one character".into(),
            ));
        }
        self.time_strides()?;
        Ok(())
    }

    /// Time strides of the two front-end convolutions. Inputs at 10 ms are
    /// reduced by `subsample_factor`; coarser inputs by proportionally less,
    /// so the encoder always runs at 40 ms.
    pub fn time_strides(&self) -> Result<[usize; 2]> {
        if self.subsample_factor != 4 || ENCODER_SHIFT_MS % self.input_shift_ms != 0 {
            return Err(IrisError::Config(format!(
                "front end supports 4x subsampling of 10/20/40 ms input, got factor {} at {} ms",
                self.subsample_factor, self.input_shift_ms
            )));
        }
        match ENCODER_SHIFT_MS / self.input_shift_ms {
            4 => Ok([2, 2]),
            2 => Ok([2, 1]),
            1 => Ok([1, 1]),
            r => Err(IrisError::Config(format!("unsupported time reduction {r}"))),
        }
    }

    /// Feature width after the two stride-2 frequency reductions.
    pub fn reduced_input_dim(&self) -> usize {
        let half = |n: usize| (n - 1) / 2 + 1;
        half(half(self.input_dim))
    }
}
