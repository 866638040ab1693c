//! Pre-trains both modules, fine-tunes the four freeze/update combinations
//! and prints the WER report. Defaults are reduced so the run takes a few
//! minutes; pass `key=value` overrides to change them.
//!
//!     cargo run --release --example regime_matrix -- corpus.n_train=120

use iris::config::{Config, ExperimentConfig};
use iris::experiment::{pretrain, regime_matrix, CorpusSplits};

const QUICK: &[&str] = &[
    "corpus.n_train=60",
    "corpus.n_dev=12",
    "corpus.n_test=12",
    "train.se_epochs=6",
    "train.asr_epochs=10",
    "train.ft_epochs=3",
    "train.warmup_steps=20",
    "train.average_k=3",
];

fn main() -> iris::Result<()> {
    let mut c = Config::new();
    for o in QUICK.iter().map(|s| s.to_string()).chain(std::env::args().skip(1)) {
        c.apply_override(&o)?;
    }
    let cfg = ExperimentConfig::from_config(&c, 1)?;
    let data = CorpusSplits::generate(&cfg)?;
    let pre = pretrain(&cfg, &data)?;
    println!("pre-trained: dev SI-SNR {:.2} dB, dev accuracy {:.3}", pre.se.validation, pre.asr.validation);
    let (report, _) = regime_matrix(&cfg, &data, &pre, None)?;
    print!("{}", report.to_csv()?);
    Ok(())
}
