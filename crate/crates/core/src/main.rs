use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use iris::config::{Config, ExperimentConfig};
use iris::corpus::{build_corpus, Manifest, Split, MANIFEST_FILE};
use iris::eval::{self, Plot, Recognizer, RegimeReport, TrainingSeries};
use iris::experiment::{self, CorpusSplits};
use iris::params::Partition;
use iris::training::{self, Checkpoint, TrainOutcome, TrainRegime};
use iris::{IrisError, Result};

#[derive(Parser)]
#[command(name = "iris", version, about = "Noise-robust ASR experiments on a synthetic corpus")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one configuration value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, default_value_t = 0, global = true)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the corpus: WAV files plus manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the enhancement module.
    TrainSe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the recognizer.
    TrainAsr {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune the composed pipeline under one regime.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        se: Option<PathBuf>,
        #[arg(long)]
        asr: Option<PathBuf>,
        /// FT_SE, FT_ASR, FT_SE+ASR, no-FT or an initialization-study model;
        /// without it the `regime.*` keys are used.
        #[arg(long)]
        regime: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average the k best of the given checkpoints.
    Average {
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Write hypotheses of one split.
    Decode {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one split: metrics CSV and hypotheses.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot a training log or regime report CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train, fine-tune all four combinations and score them.
    RegimeMatrix {
        /// Existing corpus; generated in memory when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn experiment_config(g: &Global) -> Result<ExperimentConfig> {
    ExperimentConfig::from_config(&raw_config(g)?, g.seed)
}

fn raw_config(g: &Global) -> Result<Config> {
    let mut c = match &g.config {
        Some(p) => Config::load(p)?,
        None => Config::new(),
    };
    for o in &g.overrides {
        c.apply_override(o)?;
    }
    Ok(c)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| IrisError::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| IrisError::io(path, e))
}

fn load_data(dir: &Path) -> Result<(Manifest, CorpusSplits)> {
    let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
    let splits = CorpusSplits::load(&manifest)?;
    Ok((manifest, splits))
}

/// Saves every epoch checkpoint, the averaged one and the training log.
fn save_run(out: &Path, name: &str, run: &TrainOutcome, k: usize) -> Result<()> {
    create_dir(out)?;
    for c in &run.checkpoints {
        c.save(&out.join(format!("epoch-{:03}.ckpt", c.epoch)))?;
    }
    experiment::average_best(&run.checkpoints, k)?.save(&out.join("averaged.ckpt"))?;
    let series = [TrainingSeries {
        name: name.into(),
        records: run.log.clone(),
    }];
    let plot = Plot {
        y_label: "validation".into(),
        ..eval::accuracy_plot(name, &series)
    };
    eval::emit_report(out, "training_log", &eval::training_log_csv(&series)?, &plot)
}

fn load_model(cfg: &ExperimentConfig, path: &Path) -> Result<iris::params::ParameterStore> {
    let ckpt = Checkpoint::load(path, Some(cfg.model.fingerprint()))?;
    let mut params = ckpt.params;
    cfg.model.restore_frozen(&mut params)?;
    Ok(params)
}

fn regime_by_name(name: &str) -> Result<TrainRegime> {
    TrainRegime::fine_tune_matrix()
        .into_iter()
        .find(|r| r.name == name)
        .map(Ok)
        .unwrap_or_else(|| TrainRegime::init_study(name))
}

fn run(cli: Cli) -> Result<i32> {
    let g = &cli.global;
    let evaluate = matches!(cli.command, Command::Evaluate { .. });
    match cli.command {
        Command::GenData { out } => {
            let cfg = experiment_config(g)?;
            create_dir(&out)?;
            let manifest = build_corpus(&cfg.corpus, cfg.seed, &out)?;
            experiment::vocabulary(&cfg).save(&out.join("vocab.txt"))?;
            println!("{} utterances written to {}", manifest.records.len(), out.display());
        }
        Command::TrainSe { data, out } => {
            let cfg = experiment_config(g)?;
            let (_, splits) = load_data(&data)?;
            let run = training::pretrain_se(&splits.train, &splits.dev, &cfg.model, &cfg.se_train)?;
            save_run(&out, "pretrain-se", &run, cfg.average_k)?;
        }
        Command::TrainAsr { data, out } => {
            let cfg = experiment_config(g)?;
            let (_, splits) = load_data(&data)?;
            let vocab = experiment::vocabulary(&cfg);
            let run = training::pretrain_asr(&splits.train, &splits.dev, &vocab, &cfg.model, &cfg.asr_train)?;
            save_run(&out, "pretrain-asr", &run, cfg.average_k)?;
        }
        Command::Finetune { data, se, asr, regime, out } => {
            let cfg = experiment_config(g)?;
            let regime = match regime {
                Some(name) => regime_by_name(&name)?,
                None => {
                    let raw = raw_config(g)?;
                    TrainRegime::from_config(|k| raw.raw(k).map(String::from))?
                }
            };
            let (_, splits) = load_data(&data)?;
            let fp = Some(cfg.model.fingerprint());
            let se = se.map(|p| Checkpoint::load(&p, fp)).transpose()?;
            let asr = asr.map(|p| Checkpoint::load(&p, fp)).transpose()?;
            let start = training::assemble_params(&cfg.model, &regime, se.as_ref(), asr.as_ref(), cfg.finetune.seed)?;
            let vocab = experiment::vocabulary(&cfg);
            let run = training::finetune_iris(start, &splits.train, &splits.dev, &vocab, &cfg.model, &regime, &cfg.finetune)?;
            save_run(&out, &regime.name, &run, cfg.average_k)?;
        }
        Command::Average { k, out, checkpoints } => {
            let list = checkpoints
                .iter()
                .map(|p| Checkpoint::load(p, None))
                .collect::<Result<Vec<_>>>()?;
            experiment::average_best(&list, k)?.save(&out)?;
        }
        Command::Decode { data, model, split, out } | Command::Evaluate { data, model, split, out } => {
            let cfg = experiment_config(g)?;
            let params = load_model(&cfg, &model)?;
            let manifest = Manifest::load(&data.join(MANIFEST_FILE))?;
            let train = manifest.load_split(Split::Train)?;
            let vocab = experiment::vocabulary(&cfg);
            let lm = experiment::train_lm(&cfg, &vocab, &train);
            let rec = Recognizer {
                model: &cfg.model,
                params: &params,
                with_se: params.has_partition(Partition::Se),
                decode: &cfg.decode,
                lm: Some(&lm),
                vocab: &vocab,
            };
            let result = eval::evaluate_set(&manifest, split, &rec, cfg.unit);
            for (id, msg) in &result.failures {
                log::error!("{id}: {msg}");
            }
            if evaluate {
                create_dir(&out)?;
                result.write_hypotheses(&out.join(format!("hyp_{split}.txt")))?;
                let report = RegimeReport {
                    rows: vec![eval::ReportRow {
                        regime: model.display().to_string(),
                        split: split.to_string(),
                        seed: cfg.seed,
                        wer: result.wer.wer(),
                        si_snr_db: result.si_snr_db,
                        substitutions: result.wer.substitutions,
                        deletions: result.wer.deletions,
                        insertions: result.wer.insertions,
                        ref_words: result.wer.ref_words,
                    }],
                };
                write(&out.join("metrics.csv"), &report.to_csv()?)?;
                println!("{split}: WER {:.2}% over {} tokens", result.wer.wer(), result.wer.ref_words);
            } else {
                result.write_hypotheses(&out)?;
            }
            return Ok(result.exit_code());
        }
        Command::Report { input, out } => {
            let text = fs::read_to_string(&input).map_err(|e| IrisError::io(&input, e))?;
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string();
            let plot = if text.starts_with("series,") {
                training_log_plot(&text)?
            } else {
                regime_plot(&RegimeReport::from_csv(&text)?)
            };
            eval::emit_report(&out, &stem, &text, &plot)?;
        }
        Command::RegimeMatrix { data, out } => {
            let cfg = experiment_config(g)?;
            let splits = match data {
                Some(d) => load_data(&d)?.1,
                None => CorpusSplits::generate(&cfg)?,
            };
            create_dir(&out)?;
            let pre = experiment::pretrain(&cfg, &splits)?;
            let (report, _) = experiment::regime_matrix(&cfg, &splits, &pre, Some(&out.join("hyp")))?;
            let csv = report.to_csv()?;
            eval::emit_report(&out, "regime_matrix", &csv, &regime_plot(&report))?;
            print!("{csv}");
        }
    }
    Ok(0)
}

fn training_log_plot(text: &str) -> Result<Plot> {
    let mut series: Vec<TrainingSeries> = Vec::new();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").to_string();
        let parse = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|_| IrisError::Config(format!("bad number `{}` in training log", field(i))))
        };
        let record = training::EpochRecord {
            epoch: parse(1)? as usize,
            train_loss: parse(2)?,
            validation: parse(3)?,
        };
        match series.iter_mut().find(|s| s.name == field(0)) {
            Some(s) => s.records.push(record),
            None => series.push(TrainingSeries {
                name: field(0),
                records: vec![record],
            }),
        }
    }
    Ok(eval::accuracy_plot("validation by epoch", &series))
}

fn regime_plot(report: &RegimeReport) -> Plot {
    let mut splits: Vec<String> = report.rows.iter().map(|r| r.split.clone()).collect();
    splits.dedup();
    let regimes: Vec<String> = TrainRegime::fine_tune_matrix().iter().map(|r| r.name.clone()).collect();
    Plot {
        title: format!("WER by regime ({})", regimes.join(", ")),
        x_label: "regime index".into(),
        y_label: "WER (%)".into(),
        series: splits
            .iter()
            .map(|s| {
                let pts = regimes
                    .iter()
                    .enumerate()
                    .filter_map(|(i, name)| report.mean_wer(name, s).map(|w| (i as f64, w)))
                    .collect();
                (s.clone(), pts)
            })
            .collect(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
