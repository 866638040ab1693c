//! Pre-trains the Conv-TasNet front end on simulated mixtures and reports the
//! dev SI-SNR against the unprocessed input after every epoch.
//!
//!     cargo run --release --example enhancement

use iris::config::ExperimentConfig;
use iris::enhance::si_snr;
use iris::experiment::CorpusSplits;
use iris::training::{pretrain_se, TrainConfig};

fn main() -> iris::Result<()> {
    let mut cfg = ExperimentConfig::toy(3);
    cfg.corpus.n_train = 60;
    cfg.corpus.n_dev = 12;
    cfg.corpus.n_test = 1;
    let data = CorpusSplits::generate(&cfg)?;

    let noisy: Vec<f64> = data
        .dev
        .iter()
        .filter_map(|u| u.reference().map(|r| si_snr(&u.noisy, r)))
        .collect::<iris::Result<_>>()?;
    let baseline = noisy.iter().sum::<f64>() / noisy.len() as f64;
    println!("unprocessed dev SI-SNR {baseline:.2} dB");

    let train = TrainConfig {
        epochs: 14,
        warmup_steps: 20,
        ..cfg.se_train
    };
    let out = pretrain_se(&data.train, &data.dev, &cfg.model, &train)?;
    for r in &out.log {
        println!(
            "epoch {:>2}  loss {:>7.3}  dev {:>6.2} dB ({:+.2})",
            r.epoch,
            r.train_loss,
            r.validation,
            r.validation - baseline
        );
    }
    Ok(())
}
