//! Trains the five initialization-study models for a few epochs and writes
//! their dev-accuracy curves as CSV and SVG.
//!
//!     cargo run --release --example init_study -- [out_dir]

use std::path::PathBuf;

use iris::config::{Config, ExperimentConfig};
use iris::eval::{accuracy_plot, emit_report, training_log_csv};
use iris::experiment::{init_study, pretrain, CorpusSplits};

fn main() -> iris::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("iris-init-study"));
    let mut c = Config::new();
    for o in ["corpus.n_train=40", "corpus.n_dev=10", "corpus.n_test=1", "train.se_epochs=4", "train.asr_epochs=6"] {
        c.apply_override(o)?;
    }
    let cfg = ExperimentConfig::from_config(&c, 2)?;
    let data = CorpusSplits::generate(&cfg)?;
    let pre = pretrain(&cfg, &data)?;
    let series = init_study(&cfg, &data, &pre, 3)?;
    for s in &series {
        let acc: Vec<String> = s.records.iter().map(|r| format!("{:.3}", r.validation)).collect();
        println!("{:<20} {}", s.name, acc.join(" "));
    }
    emit_report(&out, "init_study", &training_log_csv(&series)?, &accuracy_plot("dev accuracy", &series))?;
    println!("curves written under {}", out.display());
    Ok(())
}
