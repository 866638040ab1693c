//! Keeps a checkpoint per epoch, selects the best by validation accuracy and
//! averages them, then saves and reloads the result.
//!
//!     cargo run --release --example averaging

use iris::config::ExperimentConfig;
use iris::experiment::{average_best, vocabulary, CorpusSplits};
use iris::training::{pipeline_accuracy, pretrain_asr, select_best_checkpoints, Checkpoint, TrainConfig};

fn main() -> iris::Result<()> {
    let mut cfg = ExperimentConfig::toy(4);
    cfg.corpus.n_train = 40;
    cfg.corpus.n_dev = 10;
    cfg.corpus.n_test = 1;
    let data = CorpusSplits::generate(&cfg)?;
    let vocab = vocabulary(&cfg);
    let tc = TrainConfig {
        epochs: 8,
        warmup_steps: 10,
        ..cfg.asr_train
    };
    let out = pretrain_asr(&data.train, &data.dev, &vocab, &cfg.model, &tc)?;
    for c in &out.checkpoints {
        println!("epoch {:>2} dev accuracy {:.3}", c.epoch, c.validation);
    }
    let k = 3;
    let chosen: Vec<usize> = select_best_checkpoints(&out.checkpoints, k).iter().map(|c| c.epoch).collect();
    let avg = average_best(&out.checkpoints, k)?;
    // Checkpoints omit the frozen extractor; put it back before decoding.
    let mut params = avg.params.clone();
    cfg.model.restore_frozen(&mut params)?;
    let acc = pipeline_accuracy(&params, &cfg.model, &vocab, &data.dev, false)?;
    println!("average of epochs {chosen:?}: dev accuracy {acc:.3}");

    let path = std::env::temp_dir().join("iris-averaged.ckpt");
    avg.save(&path)?;
    let back = Checkpoint::load(&path, Some(cfg.model.fingerprint()))?;
    println!("reloaded {} tensors from {}", back.params.len(), path.display());
    Ok(())
}
