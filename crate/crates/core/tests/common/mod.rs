//! Oracles and fixtures shared by the integration tests and the acceptance
//! runner.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iris::asr::{self, AsrConfig, TokenSequence, Vocabulary};
use iris::autodiff::{Axis, Conv1dSpec, Var};
use iris::enhance::{self, si_snr_graph, MaskMode, TasNetConfig};
use iris::features::{self, FeatureExtractorKind, SpecAugmentPolicy};
use iris::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use iris::nn::{self, Forward};
use iris::params::ParameterStore;
use iris::pipeline::{utterance_loss_graph, ModelConfig, PassOptions};
use iris::signal::WaveformBuffer;
use iris::tensor::Tensor;
use iris::Result;

type Build = Box<dyn Fn(&mut Forward) -> Result<Var> + Sync>;

/// One differentiable function of named parameters.
pub struct GradCase {
    pub name: &'static str,
    pub params: ParameterStore,
    /// Parameters the check differentiates with respect to.
    pub wrt: Vec<String>,
    pub build: Build,
}

impl GradCase {
    pub fn check(&self, opts: GradCheckOptions) -> Result<GradCheckReport> {
        grad_check(&self.params, &self.wrt, |fw| (self.build)(fw), opts)
    }
}

/// Values in `[lo, hi]`.
pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..=hi)).collect()).unwrap()
}

/// Values with magnitude in `[0.2, 1]` and random sign, so kinks at zero
/// are never within a finite-difference step.
pub fn signed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..=1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contracts `y` with a fixed random tensor so every output element
/// contributes with a distinct weight.
fn readout(fw: &mut Forward, y: Var, seed: u64) -> Result<Var> {
    let shape = fw.g.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = fw.g.constant(uniform(&mut rng, &shape, -1.0, 1.0));
    fw.g.dot(y, w)
}

struct CaseBuilder {
    rng: ChaCha8Rng,
    seed: u64,
    params: ParameterStore,
    wrt: Vec<String>,
}

impl CaseBuilder {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            params: ParameterStore::new(),
            wrt: Vec::new(),
        }
    }

    fn input(mut self, name: &str, t: impl FnOnce(&mut ChaCha8Rng) -> Tensor) -> Self {
        let full = format!("asr.{name}");
        let value = t(&mut self.rng);
        self.params.insert(full.clone(), value).unwrap();
        self.wrt.push(full);
        self
    }

    fn signed(self, name: &str, shape: &'static [usize]) -> Self {
        self.input(name, |r| signed(r, shape))
    }

    fn positive(self, name: &str, shape: &'static [usize]) -> Self {
        self.input(name, |r| uniform(r, shape, 0.5, 1.5))
    }

    /// Finishes the case; `f` maps the named inputs to any tensor, which is
    /// then contracted to a scalar.
    fn done<F>(self, name: &'static str, f: F) -> GradCase
    where
        F: Fn(&mut Forward, &[Var]) -> Result<Var> + Sync + 'static,
    {
        let names = self.wrt.clone();
        let seed = self.seed;
        GradCase {
            name,
            params: self.params,
            wrt: self.wrt,
            build: Box::new(move |fw| {
                let vars = names.iter().map(|n| fw.param(n)).collect::<Result<Vec<_>>>()?;
                let y = f(fw, &vars)?;
                if fw.g.value(y).numel() == 1 {
                    Ok(y)
                } else {
                    readout(fw, y, seed)
                }
            }),
        }
    }
}

/// One case per differentiable primitive of the graph plus the composite
/// layers built from them.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    let b = || CaseBuilder::new(seed);
    let mut cases = vec![
        b().signed("a", &[3, 4]).signed("b", &[3, 4]).done("add", |fw, v| fw.g.add(v[0], v[1])),
        b().signed("a", &[3, 4]).signed("b", &[3, 4]).done("sub", |fw, v| fw.g.sub(v[0], v[1])),
        b().signed("a", &[3, 4]).signed("b", &[3, 4]).done("mul", |fw, v| fw.g.mul(v[0], v[1])),
        b().signed("a", &[3, 4]).positive("b", &[3, 4]).done("div", |fw, v| fw.g.div(v[0], v[1])),
        b().signed("a", &[3, 4]).signed("s", &[1]).done("add_scalar", |fw, v| fw.g.add_scalar(v[0], v[1])),
        b().signed("a", &[3, 4]).signed("s", &[1]).done("mul_scalar", |fw, v| fw.g.mul_scalar(v[0], v[1])),
        b().signed("a", &[3, 4]).done("affine", |fw, v| Ok(fw.g.affine(v[0], -1.7, 0.3))),
        b().signed("a", &[3, 4]).done("scale", |fw, v| Ok(fw.g.scale(v[0], 2.5))),
        b().signed("a", &[3, 4]).done("neg", |fw, v| Ok(fw.g.neg(v[0]))),
        b().signed("a", &[3, 4]).signed("r", &[4]).done("add_row", |fw, v| fw.g.add_row(v[0], v[1])),
        b().signed("a", &[3, 4]).signed("r", &[4]).done("mul_row", |fw, v| fw.g.mul_row(v[0], v[1])),
        b().signed("a", &[3, 4]).signed("c", &[3]).done("add_col", |fw, v| fw.g.add_col(v[0], v[1])),
        b().signed("a", &[3, 4]).signed("c", &[3]).done("mul_col", |fw, v| fw.g.mul_col(v[0], v[1])),
        b().signed("a", &[3, 4]).signed("b", &[4, 5]).done("matmul", |fw, v| fw.g.matmul(v[0], v[1])),
        b().signed("a", &[3, 4]).signed("b", &[5, 4]).done("matmul_t", |fw, v| fw.g.matmul_t(v[0], v[1])),
        b().signed("a", &[3, 4]).done("relu", |fw, v| Ok(fw.g.relu(v[0]))),
        b().signed("a", &[3, 4]).done("sigmoid", |fw, v| Ok(fw.g.sigmoid(v[0]))),
        b().signed("a", &[3, 4]).done("exp", |fw, v| Ok(fw.g.exp(v[0]))),
        b().positive("a", &[3, 4]).done("log", |fw, v| Ok(fw.g.log(v[0]))),
        b().positive("a", &[3, 4]).done("sqrt", |fw, v| Ok(fw.g.sqrt(v[0]))),
        b().signed("a", &[3, 4]).done("square", |fw, v| Ok(fw.g.square(v[0]))),
        b().signed("a", &[3, 4]).signed("s", &[1]).done("prelu", |fw, v| fw.g.prelu(v[0], v[1])),
        b().signed("a", &[3, 4]).done("sum", |fw, v| {
            let s = fw.g.sum(v[0]);
            Ok(fw.g.square(s))
        }),
        b().signed("a", &[3, 4]).done("mean", |fw, v| {
            let s = fw.g.mean(v[0]);
            Ok(fw.g.exp(s))
        }),
        b().signed("a", &[3, 4]).signed("b", &[3, 4]).done("dot", |fw, v| fw.g.dot(v[0], v[1])),
        b().signed("a", &[3, 4]).done("transpose", |fw, v| fw.g.transpose(v[0])),
        b().signed("a", &[3, 4]).done("reshape", |fw, v| fw.g.reshape(v[0], &[2, 6])),
        b().signed("a", &[3, 4]).done("gather", |fw, v| {
            let idx = [Some(5), None, Some(0), Some(5), Some(11), Some(3)];
            fw.g.gather(v[0], &idx, &[2, 3])
        }),
        b().signed("a", &[3, 5]).done("narrow_cols", |fw, v| fw.g.narrow_cols(v[0], 1, 3)),
        b().signed("a", &[3, 2]).signed("b", &[3, 4]).done("concat_cols", |fw, v| fw.g.concat_cols(&[v[0], v[1]])),
        b().signed("a", &[2, 4]).signed("b", &[3, 4]).done("concat_rows", |fw, v| fw.g.concat_rows(&[v[0], v[1]])),
        b().signed("x", &[2, 11]).signed("w", &[3, 2, 3]).signed("bias", &[3]).done("conv1d", |fw, v| {
            let spec = Conv1dSpec {
                stride: 2,
                padding: 2,
                dilation: 2,
            };
            fw.g.conv1d(v[0], v[1], Some(v[2]), spec)
        }),
        b().signed("x", &[3, 9]).signed("w", &[3, 3]).signed("bias", &[3]).done("depthwise_conv1d", |fw, v| {
            let spec = Conv1dSpec {
                stride: 1,
                padding: 2,
                dilation: 2,
            };
            fw.g.depthwise_conv1d(v[0], v[1], Some(v[2]), spec)
        }),
        b().signed("x", &[3, 5]).signed("w", &[3, 1, 4]).done("conv_transpose1d", |fw, v| {
            fw.g.conv_transpose1d(v[0], v[1], 2)
        }),
        b().signed("x", &[2, 7, 6]).signed("w", &[3, 2, 3, 3]).signed("bias", &[3]).done("conv2d", |fw, v| {
            fw.g.conv2d(v[0], v[1], Some(v[2]), (2, 2), (1, 0))
        }),
        b().signed("a", &[3, 5]).done("standardize_all", |fw, v| fw.g.standardize(v[0], Axis::All, 1e-5)),
        b().signed("a", &[3, 5]).done("standardize_rows", |fw, v| fw.g.standardize(v[0], Axis::Rows, 1e-5)),
        b().signed("a", &[4, 3]).done("standardize_cols", |fw, v| fw.g.standardize(v[0], Axis::Cols, 1e-5)),
        b().signed("a", &[3, 4]).done("softmax_rows", |fw, v| fw.g.softmax_rows(v[0], None)),
        b().signed("a", &[3, 3]).done("softmax_rows_masked", |fw, v| {
            let causal: Vec<bool> = (0..9).map(|k| k % 3 <= k / 3).collect();
            fw.g.softmax_rows(v[0], Some(&causal))
        }),
        b().signed("a", &[3, 4]).done("log_softmax_rows", |fw, v| fw.g.log_softmax_rows(v[0])),
        b().signed("a", &[6, 4]).done("ctc_loss", |fw, v| {
            let lp = fw.g.log_softmax_rows(v[0])?;
            asr::ctc_loss(&mut fw.g, lp, &[1, 3, 3])
        }),
        b().signed("est", &[1, 64]).done("si_snr", |fw, v| {
            let reference: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
            si_snr_graph(&mut fw.g, v[0], &reference)
        }),
        b().signed("a", &[3, 5]).done("label_smoothed_nll", |fw, v| {
            let lp = fw.g.log_softmax_rows(v[0])?;
            asr::label_smoothed_nll(&mut fw.g, lp, &[4, 0, 2], 0.1)
        }),
        b().signed("c", &[1]).signed("a", &[1]).done("joint_asr_loss", |fw, v| {
            let c = fw.g.square(v[0]);
            asr::joint_asr_loss(&mut fw.g, c, v[1], 0.3)
        }),
        b().signed("x", &[4, 6]).done("spec_augment", |fw, v| {
            let policy = SpecAugmentPolicy {
                num_time_masks: 1,
                max_time_width: 2,
                num_freq_masks: 1,
                max_freq_width: 2,
                enabled: true,
            };
            features::spec_augment_graph(fw, v[0], &policy, 3)
        }),
        b().signed("x", &[5, 3]).done("normalize", |fw, v| features::normalize_graph(fw, v[0])),
        b().signed("x", &[4, 6]).signed("gain", &[4]).signed("bias", &[4]).done("global_layer_norm", |fw, v| {
            enhance::global_layer_norm(&mut fw.g, v[0], v[1], v[2], 1e-8)
        }),
    ];
    cases.extend(layer_cases(seed));
    cases
}

/// Store with the given extra parameters, all differentiated.
fn layer_case(
    name: &'static str,
    params: ParameterStore,
    build: impl Fn(&mut Forward) -> Result<Var> + Sync + 'static,
    seed: u64,
) -> GradCase {
    let wrt = params.names().cloned().collect();
    GradCase {
        name,
        params,
        wrt,
        build: Box::new(move |fw| {
            let y = build(fw)?;
            if fw.g.value(y).numel() == 1 {
                Ok(y)
            } else {
                readout(fw, y, seed)
            }
        }),
    }
}

fn layer_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a7e);
    let mut out = Vec::new();

    let mut p = ParameterStore::new();
    p.insert("asr.x", signed(&mut rng, &[3, 4])).unwrap();
    nn::add_linear(&mut p, "asr.lin", 4, 5, &mut rng).unwrap();
    out.push(layer_case("linear", p, |fw| {
        let x = fw.param("asr.x")?;
        nn::linear(fw, "asr.lin", x)
    }, seed));

    let mut p = ParameterStore::new();
    p.insert("asr.x", signed(&mut rng, &[3, 4])).unwrap();
    nn::add_layer_norm(&mut p, "asr.ln", 4).unwrap();
    p.set("asr.ln.gain", signed(&mut rng, &[4])).unwrap();
    p.set("asr.ln.bias", signed(&mut rng, &[4])).unwrap();
    out.push(layer_case("layer_norm", p, |fw| {
        let x = fw.param("asr.x")?;
        nn::layer_norm(fw, "asr.ln", x)
    }, seed));

    let mut p = ParameterStore::new();
    p.insert("asr.q", signed(&mut rng, &[3, 4])).unwrap();
    p.insert("asr.m", signed(&mut rng, &[5, 4])).unwrap();
    nn::add_attention(&mut p, "asr.att", 4, &mut rng).unwrap();
    out.push(layer_case("multi_head_attention", p, |fw| {
        let q = fw.param("asr.q")?;
        let m = fw.param("asr.m")?;
        nn::multi_head_attention(fw, "asr.att", q, m, 2, None)
    }, seed));

    let mut p = ParameterStore::new();
    p.insert("asr.wave", signed(&mut rng, &[1, 800])).unwrap();
    out.push(layer_case("fbank", p, |fw| {
        let w = fw.param("asr.wave")?;
        features::fbank_graph(fw, w)
    }, seed));

    let mut p = ParameterStore::new();
    p.insert("asr.wave", signed(&mut rng, &[1, 1200])).unwrap();
    features::init_sslr_params(&mut p, seed).unwrap();
    p.set_frozen(iris::params::Partition::Sslr, false);
    out.push(layer_case("sslr_stub", p, |fw| {
        let w = fw.param("asr.wave")?;
        features::sslr_graph(fw, w)
    }, seed));

    let mut p = ParameterStore::new();
    p.insert("asr.feats", signed(&mut rng, &[3, features::SSLR_DIM])).unwrap();
    features::init_projection(&mut p, seed).unwrap();
    out.push(layer_case("projection", p, |fw| {
        let x = fw.param("asr.feats")?;
        features::project_graph(fw, x)
    }, seed));

    let se = tiny_tasnet();
    let mut p = ParameterStore::new();
    p.insert("asr.wave", signed(&mut rng, &[1, 200])).unwrap();
    enhance::init_params(&mut p, &se, seed).unwrap();
    out.push(layer_case("tasnet", p, move |fw| {
        let w = fw.param("asr.wave")?;
        Ok(enhance::enhance_graph(fw, w, &se, MaskMode::Estimated)?.enhanced)
    }, seed));

    let cfg = tiny_asr(8, 7);
    let mut p = ParameterStore::new();
    p.insert("asr.feats", signed(&mut rng, &[20, 8])).unwrap();
    asr::init_params(&mut p, &cfg, seed).unwrap();
    out.push(layer_case("recognizer", p, move |fw| {
        let x = fw.param("asr.feats")?;
        let target = TokenSequence::new(vec![4, 5, 4], cfg.vocab_size)?;
        Ok(asr::asr_loss_graph(fw, x, &target, &cfg)?.total)
    }, seed));
    out
}

pub fn tiny_tasnet() -> TasNetConfig {
    TasNetConfig {
        n_filters: 6,
        kernel: 16,
        stride: 8,
        bottleneck: 5,
        conv_channels: 6,
        conv_kernel: 3,
        blocks_per_repeat: 2,
        repeats: 1,
    }
}

pub fn tiny_asr(input_dim: usize, vocab_size: usize) -> AsrConfig {
    AsrConfig {
        encoder_layers: 1,
        decoder_layers: 1,
        heads: 2,
        ffn_dim: 12,
        model_dim: 8,
        dropout: 0.0,
        frontend_channels: 3,
        input_dim,
        input_shift_ms: 10,
        vocab_size,
        ..AsrConfig::toy()
    }
}

/// Enhancement, frozen stub features, projection and the joint recognizer
/// loss with the enhancement term added at weight one. Gradients are checked
/// for the parameters whose names start with `prefix`.
pub fn composition_case(seed: u64, prefix: &str) -> GradCase {
    let vocab = Vocabulary::from_chars("abc".chars());
    let feature = FeatureExtractorKind::SslrStub { seed: 99 };
    let mut model = ModelConfig::toy(feature, vocab.len());
    model.se = tiny_tasnet();
    model.asr = AsrConfig {
        input_dim: model.asr.input_dim,
        input_shift_ms: model.asr.input_shift_ms,
        ..tiny_asr(0, vocab.len())
    };
    let params = model.init_params(seed, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0de);
    let len = 6400;
    let clean: Vec<f64> = (0..len)
        .map(|i| 0.5 * (i as f64 * 0.05).sin() + 0.3 * (i as f64 * 0.013).sin())
        .collect();
    let noisy: Vec<f64> = clean.iter().map(|c| c + rng.random_range(-0.2..0.2)).collect();
    let clean = WaveformBuffer::new(clean).unwrap();
    let noisy = WaveformBuffer::new(noisy).unwrap();
    let target = vocab.encode("abca");
    let wrt = params
        .names()
        .filter(|n| n.starts_with(prefix))
        .cloned()
        .collect();
    GradCase {
        name: "full_composition",
        params,
        wrt,
        build: Box::new(move |fw| {
            let opts = PassOptions {
                with_se: true,
                augment: None,
            };
            let l = utterance_loss_graph(fw, &noisy, Some(&clean), &target, &model, opts)?;
            let enh = l.enhancement.expect("reference given");
            fw.g.add(l.asr.total, enh)
        }),
    }
}

/// Exhaustive CTC negative log-likelihood: every frame-level path whose
/// collapse equals `target`, summed in the log domain.
pub fn ctc_brute_force(log_probs: &[Vec<f64>], target: &[usize]) -> f64 {
    let frames = log_probs.len();
    let vocab = log_probs[0].len();
    let mut terms = Vec::new();
    let mut path = vec![0usize; frames];
    loop {
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &k in &path {
            if Some(k) != prev && k != asr::BLANK {
                collapsed.push(k);
            }
            prev = Some(k);
        }
        if collapsed == target {
            terms.push(path.iter().enumerate().map(|(t, &k)| log_probs[t][k]).sum::<f64>());
        }
        let mut i = 0;
        while i < frames {
            path[i] += 1;
            if path[i] < vocab {
                break;
            }
            path[i] = 0;
            i += 1;
        }
        if i == frames {
            break;
        }
    }
    if terms.is_empty() {
        return f64::INFINITY;
    }
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    -(m + terms.iter().map(|x| (x - m).exp()).sum::<f64>().ln())
}

/// Minimum edit cost over every script that turns `r` into `h`, found by
/// exhaustive recursion without memoization.
pub fn edit_distance_brute_force<T: PartialEq>(r: &[T], h: &[T]) -> usize {
    match (r.split_first(), h.split_first()) {
        (None, _) => h.len(),
        (_, None) => r.len(),
        (Some((a, rr)), Some((b, hh))) => {
            let sub = edit_distance_brute_force(rr, hh) + usize::from(a != b);
            let del = edit_distance_brute_force(rr, h) + 1;
            let ins = edit_distance_brute_force(r, hh) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Every string of length `0..=max_len` over `alphabet`.
pub fn all_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s| alphabet.iter().map(move |c| format!("{s}{c}")))
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out
}

/// Overrides that shrink the corpus, the model and every schedule so a full
/// pipeline run takes seconds.
pub const TINY_OVERRIDES: &[&str] = &[
    "corpus.n_train=8",
    "corpus.n_dev=3",
    "corpus.n_test=3",
    "corpus.clean_fraction=0.25",
    "se.n_filters=16",
    "se.bottleneck=8",
    "se.conv_channels=16",
    "se.repeats=1",
    "asr.model_dim=16",
    "asr.ffn_dim=32",
    "asr.encoder_layers=1",
    "asr.frontend_channels=4",
    "train.batch_size=4",
    "train.warmup_steps=2",
    "train.se_epochs=2",
    "train.asr_epochs=2",
    "train.ft_epochs=2",
    "train.average_k=2",
    "decode.beam=2",
    "decode.max_len=8",
];

pub fn tiny_config() -> iris::config::Config {
    let mut c = iris::config::Config::new();
    for o in TINY_OVERRIDES {
        c.apply_override(o).unwrap();
    }
    c
}

pub fn tiny_experiment(seed: u64) -> (iris::config::ExperimentConfig, iris::experiment::CorpusSplits) {
    let cfg = iris::config::ExperimentConfig::from_config(&tiny_config(), seed).unwrap();
    let data = iris::experiment::CorpusSplits::generate(&cfg).unwrap();
    (cfg, data)
}

/// Shortest edit-script length from `source` to every string of length
/// `<= max_len` over `alphabet`, by breadth-first search where each move is
/// one insertion, deletion or substitution. Substitutions can be applied
/// first, then deletions, then insertions, so no optimal script passes
/// through a string longer than both endpoints.
pub fn edit_script_distances(
    source: &str,
    alphabet: &[char],
    max_len: usize,
) -> std::collections::HashMap<String, usize> {
    use std::collections::{HashMap, VecDeque};
    let mut dist = HashMap::from([(source.to_string(), 0usize)]);
    let mut queue = VecDeque::from([source.to_string()]);
    while let Some(s) = queue.pop_front() {
        let d = dist[&s];
        let chars: Vec<char> = s.chars().collect();
        let mut next = Vec::new();
        for i in 0..chars.len() {
            let mut del = chars.clone();
            del.remove(i);
            next.push(del);
            for &c in alphabet {
                if c != chars[i] {
                    let mut sub = chars.clone();
                    sub[i] = c;
                    next.push(sub);
                }
            }
        }
        if chars.len() < max_len {
            for i in 0..=chars.len() {
                for &c in alphabet {
                    let mut ins = chars.clone();
                    ins.insert(i, c);
                    next.push(ins);
                }
            }
        }
        for n in next {
            let n: String = n.into_iter().collect();
            if !dist.contains_key(&n) {
                dist.insert(n.clone(), d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

fn partition_hashes(
    p: &iris::params::ParameterStore,
) -> std::collections::BTreeMap<iris::params::Partition, [u8; 32]> {
    use iris::params::Partition;
    Partition::ALL
        .iter()
        .filter(|&&q| p.has_partition(q))
        .map(|&q| (q, p.partition_hash(q)))
        .collect()
}

/// Trains one epoch of every matrix and initialization-study regime from
/// tiny pre-trained modules and lists each partition that moved outside its
/// regime's update set, or failed to move inside it. Checkpoints are
/// inspected too.
pub fn freeze_violations(seed: u64) -> Vec<String> {
    use iris::experiment::{vocabulary, Pretrained};
    use iris::params::Partition;
    use iris::training::{
        assemble_params, finetune_iris, pretrain_asr, pretrain_se, TrainConfig, TrainRegime, INIT_STUDY_MODELS,
    };
    let one_epoch = |c: &TrainConfig| TrainConfig { epochs: 1, ..*c };
    let (cfg, data) = tiny_experiment(seed);
    let vocab = vocabulary(&cfg);
    let stub = cfg.model.init_params(0, false).unwrap().partition_hash(Partition::Sslr);
    let mut bad = Vec::new();

    let se = pretrain_se(&data.train, &data.dev, &cfg.model, &one_epoch(&cfg.se_train)).unwrap();
    if se.params.has_partition(Partition::Asr) {
        bad.push("enhancement pre-training created recognizer parameters".into());
    }
    let asr = pretrain_asr(&data.train, &data.dev, &vocab, &cfg.model, &one_epoch(&cfg.asr_train)).unwrap();
    if asr.params.has_partition(Partition::Se) {
        bad.push("recognizer pre-training created enhancement parameters".into());
    }
    if asr.params.partition_hash(Partition::Sslr) != stub {
        bad.push("recognizer pre-training moved the frozen extractor".into());
    }
    let pre = Pretrained {
        se: se.checkpoints[0].clone(),
        asr: asr.checkpoints[0].clone(),
        se_log: se,
        asr_log: asr,
    };

    let mut regimes: Vec<TrainRegime> = TrainRegime::fine_tune_matrix().to_vec();
    regimes.extend(INIT_STUDY_MODELS.iter().map(|n| TrainRegime::init_study(n).unwrap()));
    for regime in regimes {
        let start = assemble_params(&cfg.model, &regime, Some(&pre.se), Some(&pre.asr), 5).unwrap();
        let before = partition_hashes(&start);
        let out = finetune_iris(start, &data.train, &data.dev, &vocab, &cfg.model, &regime, &one_epoch(&cfg.finetune))
            .unwrap();
        let after = partition_hashes(&out.params);
        if after.get(&Partition::Sslr) != Some(&stub) {
            bad.push(format!("{}: extractor differs from the stub", regime.name));
        }
        for (part, h) in &before {
            if regime.update.contains(part) {
                if after[part] == *h {
                    bad.push(format!("{}: {part} did not train", regime.name));
                }
                continue;
            }
            if after[part] != *h {
                bad.push(format!("{}: {part} moved", regime.name));
            }
            for c in &out.checkpoints {
                if c.params.has_partition(*part) && c.params.partition_hash(*part) != *h {
                    bad.push(format!("{}: {part} moved in epoch {} checkpoint", regime.name, c.epoch));
                }
            }
        }
    }
    bad
}
