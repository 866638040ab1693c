//! Acceptance report. Prints one line per criterion and exits non-zero when
//! any criterion fails. Criteria 4, 6 and 7 share one pre-training run per
//! seed; each is charged only for the stages it needs.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iris::asr::{ctc_loss_and_grad, min_frames, DecodeOptions, TokenSequence};
use iris::config::ExperimentConfig;
use iris::corpus::Split;
use iris::enhance::{si_snr, si_snr_uncapped};
use iris::eval::{align, wer, RegimeReport, Unit, WerBreakdown};
use iris::experiment::{
    average_best, regime_matrix, run_regime, vocabulary, CorpusSplits, Pretrained,
};
use iris::features::FeatureExtractorKind;
use iris::gradcheck::GradCheckOptions;
use iris::params::ParameterStore;
use iris::pipeline::{recognize, ModelConfig};
use iris::tensor::Tensor;
use iris::training::{
    average_checkpoints, pretrain_asr, pretrain_se, select_best_checkpoints, Checkpoint, Fingerprint, TrainConfig,
    TrainRegime, ValidationMetric,
};

const SEEDS: [u64; 3] = [1, 2, 3];
const MATRIX: [&str; 4] = ["no-FT", "FT_SE", "FT_ASR", "FT_SE+ASR"];

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Runs `f`, turning panics into failures.
fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    })
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let t = Instant::now();
    let out = guarded(f);
    (out, t.elapsed())
}

struct Line {
    id: usize,
    outcome: Outcome,
    elapsed: Duration,
    budget: Duration,
}

impl Line {
    fn passed(&self) -> bool {
        self.outcome.is_ok() && self.elapsed <= self.budget
    }

    fn print(&self) {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let detail = match &self.outcome {
            Ok(d) | Err(d) => d,
        };
        let over = if self.outcome.is_ok() && self.elapsed > self.budget { " over budget" } else { "" };
        println!(
            "criterion {:>2}: {verdict} {detail} ({:.1}s of {:.0}s{over})",
            self.id,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs_f64()
        );
    }
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn gradient_oracle() -> Outcome {
    let opts = |seed, samples| GradCheckOptions {
        samples,
        seed,
        ..GradCheckOptions::default()
    };
    let (mut cases, mut coords, mut kinked, mut worst) = (0, 0, 0, 0.0f64);
    for seed in 1..=10u64 {
        let mut all: Vec<(common::GradCase, usize)> = common::op_cases(seed).into_iter().map(|c| (c, 48)).collect();
        all.push((common::composition_case(seed, "se."), 16));
        all.push((common::composition_case(seed, "asr."), 16));
        for (case, samples) in all {
            let r = case.check(opts(seed, samples)).map_err(|e| format!("{} seed {seed}: {e}", case.name))?;
            if !r.passed() {
                return Err(format!("{} seed {seed}: worst {:?}", case.name, r.worst()));
            }
            cases += 1;
            coords += r.checks.len();
            kinked += r.kinked.len();
            worst = worst.max(r.max_rel_error);
        }
    }
    Ok(format!(
        "{cases} cases over 10 seeds, {coords} coordinates, max rel error {worst:.1e}, {kinked} kink-straddling stencils resampled"
    ))
}

fn ctc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let targets: Vec<Vec<usize>> = common::all_strings(&['1', '2'], 3)
        .iter()
        .map(|s| s.chars().map(|c| c.to_digit(10).unwrap() as usize).collect())
        .collect();
    let (mut n, mut worst) = (0, 0.0f64);
    for frames in 1..=6 {
        for target in &targets {
            let lp: Vec<Vec<f64>> = (0..frames)
                .map(|_| {
                    let logits: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let lse = logits.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
                    logits.iter().map(|v| v - lse).collect()
                })
                .collect();
            let oracle = common::ctc_brute_force(&lp, target);
            let t = Tensor::new(vec![frames, 3], lp.concat()).unwrap();
            match ctc_loss_and_grad(&t, target) {
                Ok((loss, _)) => {
                    let err = (loss - oracle).abs();
                    if err >= 1e-6 {
                        return Err(format!("t={frames} target {target:?}: {loss} vs {oracle}"));
                    }
                    worst = worst.max(err);
                }
                Err(_) if frames < min_frames(target) && oracle.is_infinite() => {}
                Err(e) => return Err(format!("t={frames} target {target:?}: {e}")),
            }
            n += 1;
        }
    }
    Ok(format!("{n} (length, target) pairs, max abs error {worst:.1e}"))
}

fn si_snr_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let s: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = s.iter().map(|v| v + 0.5 * rng.random_range(-1.0..1.0)).collect();
        let base = si_snr_uncapped(&x, &s).unwrap();
        for alpha in [0.1, 1.0, 10.0] {
            let xs: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            worst = worst.max((si_snr_uncapped(&xs, &s).unwrap() - base).abs());
        }
        let beta = rng.random_range(0.01..100.0);
        let ss: Vec<f64> = s.iter().map(|v| v * beta).collect();
        worst = worst.max((si_snr_uncapped(&x, &ss).unwrap() - base).abs());
    }
    let n = 512;
    let tone = |k: f64| (0..n).map(move |i| (2.0 * std::f64::consts::PI * k * i as f64 / n as f64).sin());
    let s: Vec<f64> = tone(8.0).collect();
    let x: Vec<f64> = tone(8.0).zip(tone(21.0)).map(|(a, b)| a + b).collect();
    let zero = si_snr_uncapped(&x, &s).unwrap();
    ensure(
        worst < 1e-6 && zero.abs() < 1e-6,
        format!("max scale deviation {worst:.1e} dB, orthogonal construction {zero:.1e} dB"),
    )
}

fn asr_overfit() -> Outcome {
    let cfg = ExperimentConfig::toy(1);
    let data = CorpusSplits::generate(&cfg).map_err(|e| e.to_string())?;
    let train: Vec<_> = data.train.iter().take(64).cloned().collect();
    let vocab = vocabulary(&cfg);
    let model = ModelConfig::toy(FeatureExtractorKind::Fbank, vocab.len());
    let tc = TrainConfig {
        epochs: 200,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = pretrain_asr(&train, &train, &vocab, &model, &tc).map_err(|e| e.to_string())?;
    let mut total = WerBreakdown::default();
    for u in &train {
        let ids = recognize(&u.noisy, &model, &out.params, false, &DecodeOptions::default(), None)
            .map_err(|e| format!("{}: {e}", u.id))?;
        let hyp = vocab.decode(&TokenSequence { ids });
        total = total + wer(&u.text, &hyp, Unit::Char).unwrap();
    }
    let cer = total.wer();
    ensure(cer <= 2.0, format!("char error {cer:.2}% on 64 training utterances after 200 epochs"))
}

fn freeze_contracts() -> Outcome {
    let bad = common::freeze_violations(2);
    ensure(bad.is_empty(), if bad.is_empty() { "9 regimes, 2 pre-training stages".into() } else { bad.join("; ") })
}

fn ckpt(epoch: usize, validation: f64, values: Vec<f64>) -> Checkpoint {
    let mut params = ParameterStore::new();
    params.insert("asr.w", Tensor::vector(values)).unwrap();
    Checkpoint {
        params,
        epoch,
        validation,
        metric: ValidationMetric::Accuracy,
        fingerprint: Fingerprint::of("acceptance"),
    }
}

fn checkpoint_averaging() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let n = rng.random_range(1..12);
        let k = rng.random_range(1..8);
        let vals: Vec<u8> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
        let list: Vec<Checkpoint> =
            (0..n).map(|i| ckpt(i, vals[i] as f64 / 4.0, rows[i].clone())).collect();
        let best = select_best_checkpoints(&list, k);
        // Best validation first; among equals the later epoch wins.
        let mut order: Vec<(u8, usize)> = vals.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        order.sort_by(|a, b| b.cmp(a));
        let want: Vec<usize> = order.iter().take(k).map(|&(_, i)| i).collect();
        let got: Vec<usize> = best.iter().map(|c| c.epoch).collect();
        if got != want {
            return Err(format!("selection {got:?}, expected {want:?}"));
        }
        let avg = average_checkpoints(&best).map_err(|e| e.to_string())?;
        for j in 0..5 {
            let mean = want.iter().map(|&i| rows[i][j]).sum::<f64>() / want.len() as f64;
            worst = worst.max((avg.get("asr.w").unwrap().data()[j] - mean).abs());
        }
    }
    let c = ckpt(3, 0.9, vec![0.1, -2.5, 3.75, 1e-3]);
    let many: Vec<Checkpoint> = (0..10).map(|e| Checkpoint { epoch: e, ..c.clone() }).collect();
    let avg = average_best(&many, 10).map_err(|e| e.to_string())?;
    let identity = avg
        .params
        .get("asr.w")
        .unwrap()
        .data()
        .iter()
        .zip(c.params.get("asr.w").unwrap().data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(
        worst < 1e-7 && identity < 1e-7,
        format!("300 selections, mean deviation {worst:.1e}, identity deviation {identity:.1e}"),
    )
}

fn cli_determinism() -> (Outcome, Duration) {
    timed(|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut reports = Vec::new();
        for run in ["a", "b"] {
            let out = dir.path().join(run);
            let mut cmd = Command::new(env!("CARGO_BIN_EXE_iris"));
            cmd.args(["--seed", "7"]);
            for o in common::TINY_OVERRIDES {
                cmd.args(["--set", o]);
            }
            cmd.arg("regime-matrix").arg("--out").arg(&out);
            let status = cmd.output().map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!("run {run} exited with {}", status.status));
            }
            reports.push(std::fs::read(out.join("regime_matrix.csv")).map_err(|e| e.to_string())?);
        }
        ensure(
            reports[0] == reports[1] && !reports[0].is_empty(),
            format!("two command-line runs, {} report bytes each, identical: {}", reports[0].len(), reports[0] == reports[1]),
        )
    })
}

fn wer_oracle() -> Outcome {
    let alphabet = ['a', 'b', 'c'];
    let strings = common::all_strings(&alphabet, 6);
    let chars = |s: &str| s.chars().collect::<Vec<_>>();
    let mut pairs = 0usize;
    for r in &strings {
        let dist = common::edit_script_distances(r, &alphabet, 6);
        let rc = chars(r);
        for h in &strings {
            let got = align(&rc, &chars(h)).errors();
            if got != dist[h] {
                return Err(format!("{r:?} -> {h:?}: {got} vs {}", dist[h]));
            }
            pairs += 1;
        }
    }
    Ok(format!("{pairs} string pairs up to length 6"))
}

/// Pre-training, fine-tuning matrix and the two initialization-study models
/// for one seed, with the time spent in each stage.
struct SeedRun {
    seed: u64,
    noisy_dev: f64,
    enhanced_dev: f64,
    se_time: Duration,
    report: RegimeReport,
    matrix_time: Duration,
    init_acc: f64,
    random_acc: f64,
    init_time: Duration,
}

fn run_seed(seed: u64) -> Result<SeedRun, String> {
    let cfg = ExperimentConfig::toy(seed);
    let data = CorpusSplits::generate(&cfg).map_err(|e| e.to_string())?;
    let refs: Vec<f64> = data
        .dev
        .iter()
        .filter_map(|u| u.reference().map(|r| si_snr(&u.noisy, r).unwrap()))
        .collect();
    let noisy_dev = refs.iter().sum::<f64>() / refs.len() as f64;

    let t = Instant::now();
    let se_log = pretrain_se(&data.train, &data.dev, &cfg.model, &cfg.se_train).map_err(|e| e.to_string())?;
    let se_time = t.elapsed();
    let enhanced_dev = se_log.log.last().ok_or("no enhancement epochs")?.validation;

    let t = Instant::now();
    let vocab = vocabulary(&cfg);
    let asr_log = pretrain_asr(&data.train, &data.dev, &vocab, &cfg.model, &cfg.asr_train).map_err(|e| e.to_string())?;
    let pre = Pretrained {
        se: average_best(&se_log.checkpoints, cfg.average_k).map_err(|e| e.to_string())?,
        asr: average_best(&asr_log.checkpoints, cfg.average_k).map_err(|e| e.to_string())?,
        se_log,
        asr_log,
    };
    let (report, _) = regime_matrix(&cfg, &data, &pre, None).map_err(|e| e.to_string())?;
    let matrix_time = t.elapsed() + se_time;

    let t = Instant::now();
    let acc = |name: &str| -> Result<f64, String> {
        let regime = TrainRegime::init_study(name).map_err(|e| e.to_string())?;
        let run = run_regime(&cfg, &data, &pre, &regime, 1).map_err(|e| e.to_string())?;
        Ok(run.outcome.log[0].validation)
    };
    let init_acc = acc("IRIS-init-FT_SE+ASR")?;
    let random_acc = acc("IRIS-random")?;
    let init_time = t.elapsed();
    debug_assert_eq!(data.get(Split::Test).len(), cfg.corpus.n_test);
    Ok(SeedRun {
        seed,
        noisy_dev,
        enhanced_dev,
        se_time,
        report,
        matrix_time,
        init_acc,
        random_acc,
        init_time,
    })
}

fn enhancement_gain(runs: &[SeedRun]) -> Outcome {
    let parts: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {} {:+.2} dB", r.seed, r.enhanced_dev - r.noisy_dev))
        .collect();
    ensure(runs.iter().all(|r| r.enhanced_dev - r.noisy_dev >= 5.0), format!("dev SI-SNR gain {}", parts.join(", ")))
}

fn regime_ordering(runs: &[SeedRun]) -> Outcome {
    let mut all = RegimeReport::default();
    for r in runs {
        all.rows.extend(r.report.rows.iter().cloned());
    }
    let m: Vec<f64> = MATRIX
        .iter()
        .map(|name| all.mean_wer(name, "test-sim").ok_or(format!("no test rows for {name}")))
        .collect::<Result<_, _>>()?;
    let (none, se, asr, both) = (m[0], m[1], m[2], m[3]);
    let detail = format!(
        "mean test WER no-FT {none:.2}, FT_SE {se:.2}, FT_ASR {asr:.2}, FT_SE+ASR {both:.2}"
    );
    ensure(both <= se && se <= none && both <= asr, detail)
}

fn init_ablation(runs: &[SeedRun]) -> Outcome {
    let parts: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {} {:.3} vs {:.3}", r.seed, r.init_acc, r.random_acc))
        .collect();
    ensure(
        runs.iter().all(|r| r.init_acc > r.random_acc),
        format!("dev accuracy after one epoch, initialized vs random: {}", parts.join(", ")),
    )
}

fn main() {
    let mut lines = Vec::new();
    let mut push = |id, (outcome, elapsed): (Outcome, Duration), budget| {
        let line = Line {
            id,
            outcome,
            elapsed,
            budget,
        };
        line.print();
        lines.push(line);
    };

    push(1, timed(gradient_oracle), minutes(5));
    push(2, timed(ctc_oracle), minutes(1));
    push(3, timed(si_snr_properties), Duration::from_secs(10));

    let t = Instant::now();
    let runs: Result<Vec<SeedRun>, String> = SEEDS
        .iter()
        .map(|&s| catch_unwind(AssertUnwindSafe(|| run_seed(s))).unwrap_or_else(|_| Err(format!("seed {s} panicked"))))
        .collect();
    let shared = t.elapsed();
    let (c4, c6, c7) = match &runs {
        Ok(runs) => {
            let sum = |f: fn(&SeedRun) -> Duration| runs.iter().map(f).sum::<Duration>();
            (
                (guarded(|| enhancement_gain(runs)), sum(|r| r.se_time)),
                (guarded(|| regime_ordering(runs)), sum(|r| r.matrix_time)),
                (guarded(|| init_ablation(runs)), sum(|r| r.init_time)),
            )
        }
        Err(e) => (
            (Err(e.clone()), shared),
            (Err(e.clone()), shared),
            (Err(e.clone()), shared),
        ),
    };
    let pipeline = match &runs {
        Ok(runs) => runs[0].matrix_time,
        Err(_) => shared,
    };
    push(4, c4, minutes(15));
    push(5, timed(asr_overfit), minutes(10));
    push(6, c6, minutes(45));
    push(7, c7, minutes(20));
    push(8, timed(freeze_contracts), minutes(2));
    push(9, timed(checkpoint_averaging), minutes(1));
    push(10, cli_determinism(), 2 * pipeline);
    push(11, timed(wer_oracle), minutes(1));

    let passed = lines.iter().filter(|l| l.passed()).count();
    println!("acceptance: {passed}/{} criteria passed", lines.len());
    if passed != lines.len() {
        std::process::exit(1);
    }
}
