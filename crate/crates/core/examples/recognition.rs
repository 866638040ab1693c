//! Trains the joint CTC/attention recognizer on filterbank features of a few
//! clean and noisy utterances, then decodes them with beam search and a
//! character language model.
//!
//!     cargo run --release --example recognition

use iris::asr::TokenSequence;
use iris::config::ExperimentConfig;
use iris::eval::{wer, Unit, WerBreakdown};
use iris::experiment::{train_lm, vocabulary, CorpusSplits};
use iris::features::FeatureExtractorKind;
use iris::pipeline::{recognize, ModelConfig};
use iris::training::TrainConfig;

fn main() -> iris::Result<()> {
    let cfg = ExperimentConfig::toy(5);
    let data = CorpusSplits::generate(&cfg)?;
    let train: Vec<_> = data.train.iter().take(24).cloned().collect();
    let vocab = vocabulary(&cfg);
    let model = ModelConfig::toy(FeatureExtractorKind::Fbank, vocab.len());
    let tc = TrainConfig {
        epochs: 60,
        seed: 5,
        ..TrainConfig::default()
    };
    let out = iris::training::pretrain_asr(&train, &train, &vocab, &model, &tc)?;
    if let Some(last) = out.log.last() {
        println!("after {} epochs: teacher-forced accuracy {:.3}", last.epoch, last.validation);
    }

    let lm = train_lm(&cfg, &vocab, &data.train);
    let mut total = WerBreakdown::default();
    for u in train.iter().take(8) {
        let ids = recognize(&u.noisy, &model, &out.params, false, &cfg.decode, Some(&lm))?;
        let hyp = vocab.decode(&TokenSequence { ids });
        println!("{:>10}  ref {:<8} hyp {}", u.id, u.text, hyp);
        total = total + wer(&u.text, &hyp, Unit::Char)?;
    }
    println!("character error rate {:.2}%", total.wer());
    Ok(())
}
