//! Joint CTC/attention recognizer: vocabulary, Transformer model, losses,
//! character n-gram LM and beam-search decoding.

mod beam;
mod config;
pub mod ctc;
mod lm;
mod model;
mod vocab;

pub use beam::{
    beam_search, beam_search_decode, ctc_log_probs, AttentionScorer, DecodeOptions, DecoderScorer,
    Hypothesis,
};
pub use config::{AsrConfig, ENCODER_SHIFT_MS};
pub use ctc::{ctc_loss, ctc_loss_and_grad, min_frames, CtcPrefixScorer, CtcPrefixState};
pub use lm::NgramLm;
pub use model::{
    asr_loss_graph, attention_loss, attention_loss_graph, check_params, ctc_log_probs_graph,
    decoder_graph, encode, encoder_graph, init_params, joint_asr_loss, joint_loss_value,
    label_smoothed_nll, positional_encoding, subsample_frontend, subsample_graph,
    subsampled_frames, AsrLossVars, AttentionOutput,
};
pub use vocab::{TokenSequence, Vocabulary, BLANK, EOS, SOS, UNK};
