//! Synthetic noisy-speech corpus: characters rendered as two-tone chords,
//! mixed with white, hum or babble-like noise at a controlled SNR.

mod wav;

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use wav::{encode_pcm16, quantize, read_wav, write_wav};

use crate::error::{IrisError, Result};
use crate::seed;
use crate::signal::{WaveformBuffer, SAMPLE_RATE};

/// Samples per character (120 ms).
pub const SEGMENT_LEN: usize = 1920;
/// Overlap between consecutive characters (10 ms).
pub const CROSSFADE_LEN: usize = 160;
/// Characters that have an acoustic rendering.
pub const CHAR_TABLE: &str = "abcdefghijklmnopqrstuvwxyz";
pub const DEFAULT_ALPHABET: &str = "abcdefgh";

const BASE_HZ: f64 = 250.0;
const SPACING_HZ: f64 = 175.0;
const UPPER_RATIO: f64 = 1.5;
const LOWER_AMP: f64 = 0.12;
const UPPER_AMP: f64 = 0.08;
const PEAK_LIMIT: f64 = 0.95;

/// Length of the rendering of `chars` characters.
pub fn synth_length(chars: usize) -> usize {
    if chars == 0 {
        return 0;
    }
    chars * (SEGMENT_LEN - CROSSFADE_LEN) + CROSSFADE_LEN
}

/// Lower and upper tone of a character's chord, in Hz.
pub fn chord(c: char) -> Result<(f64, f64)> {
    let i = CHAR_TABLE
        .find(c)
        .ok_or_else(|| IrisError::InvalidArgument(format!("character `{c}` has no acoustic rendering")))?;
    let f0 = BASE_HZ + SPACING_HZ * i as f64;
    Ok((f0, f0 * UPPER_RATIO))
}

/// Renders `text` as overlapping chord segments with linear cross-fades.
/// Each segment's amplitude is jittered by a factor in `[0.8, 1.0]` drawn
/// from `seed`.
pub fn synth_utterance(text: &str, seed: u64) -> Result<WaveformBuffer> {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return Err(IrisError::InvalidArgument("cannot render empty text".into()));
    }
    let chords = chars.iter().map(|&c| chord(c)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hop = SEGMENT_LEN - CROSSFADE_LEN;
    let mut out = vec![0.0; synth_length(chars.len())];
    let sr = SAMPLE_RATE as f64;
    for (k, (lo, hi)) in chords.into_iter().enumerate() {
        let gain = 0.8 + 0.2 * rng.random::<f64>();
        for n in 0..SEGMENT_LEN {
            let env = if n < CROSSFADE_LEN {
                n as f64 / CROSSFADE_LEN as f64
            } else if n >= SEGMENT_LEN - CROSSFADE_LEN {
                (SEGMENT_LEN - n) as f64 / CROSSFADE_LEN as f64
            } else {
                1.0
            };
            let t = n as f64 / sr;
            let v = LOWER_AMP * (2.0 * std::f64::consts::PI * lo * t).sin()
                + UPPER_AMP * (2.0 * std::f64::consts::PI * hi * t).sin();
            out[k * hop + n] += gain * env * v;
        }
    }
    WaveformBuffer::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Babble,
    Hum,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Babble, NoiseKind::Hum];
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::White => "white",
            NoiseKind::Babble => "babble",
            NoiseKind::Hum => "hum",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = IrisError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "babble" => Ok(NoiseKind::Babble),
            "hum" => Ok(NoiseKind::Hum),
            other => Err(IrisError::Config(format!("unknown noise kind `{other}`"))),
        }
    }
}

/// Unscaled noise of `len` samples.
pub fn generate_noise(kind: NoiseKind, len: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = SAMPLE_RATE as f64;
    Ok(match kind {
        NoiseKind::White => (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        NoiseKind::Hum => {
            let p1: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let p3: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            (0..len)
                .map(|n| {
                    let t = n as f64 / sr;
                    (std::f64::consts::TAU * 50.0 * t + p1).sin()
                        + 0.5 * (std::f64::consts::TAU * 150.0 * t + p3).sin()
                })
                .collect()
        }
        NoiseKind::Babble => {
            let table: Vec<char> = CHAR_TABLE.chars().collect();
            let mut acc = vec![0.0; len];
            for _ in 0..3 {
                let n_chars = len / (SEGMENT_LEN - CROSSFADE_LEN) + 2;
                let text: String = (0..n_chars).map(|_| table[rng.random_range(0..table.len())]).collect();
                let talker = synth_utterance(&text, rng.random())?;
                let offset = rng.random_range(0..SEGMENT_LEN);
                let gain = 0.5 + rng.random::<f64>();
                for (i, a) in acc.iter_mut().enumerate() {
                    *a += gain * talker.samples()[(i + offset) % talker.len()];
                }
            }
            acc
        }
    })
}

/// Amplitude factor that brings noise of power `noise_power` to `snr_db`
/// below a signal of power `clean_power`.
pub fn noise_scale(clean_power: f64, noise_power: f64, snr_db: f64) -> Result<f64> {
    if !(clean_power > 0.0) {
        return Err(IrisError::InvalidArgument("clean signal is silent; SNR is undefined".into()));
    }
    if !(noise_power > 0.0) || !snr_db.is_finite() {
        return Err(IrisError::InvalidArgument(format!(
            "need positive noise power and finite SNR, got {noise_power} and {snr_db}"
        )));
    }
    Ok((clean_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// Adds `noise` scaled to `snr_db`; returns the mixture and the scale used.
pub fn mix_at_snr(clean: &WaveformBuffer, noise: &[f64], snr_db: f64) -> Result<(WaveformBuffer, f64)> {
    if noise.len() != clean.len() {
        return Err(IrisError::InvalidArgument(format!(
            "noise has {} samples, clean has {}",
            noise.len(),
            clean.len()
        )));
    }
    let noise_power = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    let scale = noise_scale(clean.power(), noise_power, snr_db)?;
    let mixed = clean.samples().iter().zip(noise).map(|(c, n)| c + scale * n).collect();
    Ok((WaveformBuffer::new(mixed)?, scale))
}

pub fn mix_noise(clean: &WaveformBuffer, kind: NoiseKind, snr_db: f64, seed: u64) -> Result<WaveformBuffer> {
    let noise = generate_noise(kind, clean.len(), seed)?;
    Ok(mix_at_snr(clean, &noise, snr_db)?.0)
}

/// `10 log10(P(clean) / P(noisy - clean))`.
pub fn measure_snr(clean: &WaveformBuffer, noisy: &WaveformBuffer) -> Result<f64> {
    if clean.len() != noisy.len() {
        return Err(IrisError::InvalidArgument("clean and noisy lengths differ".into()));
    }
    let noise: f64 = clean
        .samples()
        .iter()
        .zip(noisy.samples())
        .map(|(c, n)| (n - c) * (n - c))
        .sum::<f64>()
        / clean.len() as f64;
    Ok(10.0 * (clean.power() / noise).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = IrisError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(IrisError::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Whether an utterance has a separate clean reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UtteranceKind {
    Simulated,
    /// Clean speech used as-is; `noisy == clean`.
    Clean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub clean: WaveformBuffer,
    pub noisy: WaveformBuffer,
    pub snr_db: Option<f64>,
    pub split: Split,
    pub kind: UtteranceKind,
}

impl Utterance {
    /// Clean reference for enhancement training, if there is one.
    pub fn reference(&self) -> Option<&WaveformBuffer> {
        (self.kind == UtteranceKind::Simulated).then_some(&self.clean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub alphabet: String,
    /// Inclusive range of characters per utterance.
    pub text_len: (usize, usize),
    /// SNR range (dB) of train and dev mixtures.
    pub snr_range: (f64, f64),
    /// SNR (dB) of every test mixture.
    pub test_snr_db: f64,
    /// Fraction of training utterances kept clean.
    pub clean_fraction: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_dev: 40,
            n_test: 40,
            alphabet: DEFAULT_ALPHABET.into(),
            text_len: (3, 6),
            snr_range: (0.0, 10.0),
            test_snr_db: 0.0,
            clean_fraction: 0.1,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 {
            return Err(IrisError::Config("corpus split sizes must be at least 1".into()));
        }
        let chars: Vec<char> = self.alphabet.chars().collect();
        let mut unique = chars.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != chars.len() || chars.len() < 5 {
            return Err(IrisError::Config(format!(
                "corpus.alphabet `{}` needs at least 5 distinct characters",
                self.alphabet
            )));
        }
        for &c in &chars {
            chord(c)?;
        }
        let (lo, hi) = self.text_len;
        if lo == 0 || lo > hi {
            return Err(IrisError::Config(format!("invalid corpus.text_len {lo}..{hi}")));
        }
        let in_range = |v: f64| (-5.0..=20.0).contains(&v);
        let (a, b) = self.snr_range;
        if !(in_range(a) && in_range(b) && a <= b && in_range(self.test_snr_db)) {
            return Err(IrisError::Config(format!(
                "SNRs must lie in [-5, 20] dB, got {a}..{b} and test {}",
                self.test_snr_db
            )));
        }
        if !(0.0..=1.0).contains(&self.clean_fraction) {
            return Err(IrisError::Config("corpus.clean_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn ids(&self) -> Vec<(String, Split)> {
        let mut out = Vec::new();
        for (split, n) in [(Split::Train, self.n_train), (Split::Dev, self.n_dev), (Split::Test, self.n_test)] {
            out.extend((0..n).map(|i| (format!("{split}-{i:04}"), split)));
        }
        out
    }
}

fn make_utterance(spec: &CorpusSpec, corpus_seed: u64, id: &str, split: Split) -> Result<Utterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_str(corpus_seed, id));
    let alphabet: Vec<char> = spec.alphabet.chars().collect();
    let len = rng.random_range(spec.text_len.0..=spec.text_len.1);
    let text: String = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
    let clean = synth_utterance(&text, rng.random())?;
    let keep_clean = split == Split::Train && rng.random::<f64>() < spec.clean_fraction;
    let kind = NoiseKind::ALL[rng.random_range(0..NoiseKind::ALL.len())];
    let snr = match split {
        Split::Test => spec.test_snr_db,
        _ => spec.snr_range.0 + (spec.snr_range.1 - spec.snr_range.0) * rng.random::<f64>(),
    };
    let noise_seed: u64 = rng.random();
    if keep_clean {
        let clean = quantize(&clean);
        return Ok(Utterance {
            id: id.to_string(),
            text,
            noisy: clean.clone(),
            clean,
            snr_db: None,
            split,
            kind: UtteranceKind::Clean,
        });
    }
    let noisy = mix_noise(&clean, kind, snr, noise_seed)?;
    let peak = noisy.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (clean, noisy) = if peak > PEAK_LIMIT {
        let g = PEAK_LIMIT / peak;
        let scale = |w: &WaveformBuffer| WaveformBuffer::new(w.samples().iter().map(|v| v * g).collect());
        (scale(&clean)?, scale(&noisy)?)
    } else {
        (clean, noisy)
    };
    Ok(Utterance {
        id: id.to_string(),
        text,
        clean: quantize(&clean),
        noisy: quantize(&noisy),
        snr_db: Some(snr),
        split,
        kind: UtteranceKind::Simulated,
    })
}

/// All utterances of a corpus, exactly as they read back from disk after
/// [`build_corpus`]. Each utterance depends only on `(spec, seed, id)`.
pub fn generate_utterances(spec: &CorpusSpec, seed: u64) -> Result<Vec<Utterance>> {
    spec.validate()?;
    spec.ids()
        .par_iter()
        .map(|(id, split)| make_utterance(spec, seed, id, *split))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub noisy_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_path: Option<PathBuf>,
    pub text: String,
    pub split: Split,
    pub snr_db: Option<f64>,
}

/// Corpus index; relative paths resolve against `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| IrisError::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| IrisError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
                IrisError::Config(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            if rec.text.is_empty() {
                return Err(IrisError::Config(format!("{}:{}: empty transcript", path.display(), i + 1)));
            }
            records.push(rec);
        }
        let mut ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(IrisError::Config(format!("duplicate utterance id `{}`", w[0])));
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        fs::write(path, out).map_err(|e| IrisError::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Reads the audio of one record.
    pub fn load_record(&self, rec: &ManifestRecord) -> Result<Utterance> {
        let noisy = read_wav(&self.resolve(&rec.noisy_path))?;
        let (clean, kind) = match &rec.clean_path {
            Some(p) => (read_wav(&self.resolve(p))?, UtteranceKind::Simulated),
            None => (noisy.clone(), UtteranceKind::Clean),
        };
        if clean.len() != noisy.len() {
            return Err(IrisError::InvalidArgument(format!(
                "utterance {}: clean and noisy lengths differ",
                rec.id
            )));
        }
        Ok(Utterance {
            id: rec.id.clone(),
            text: rec.text.clone(),
            clean,
            noisy,
            snr_db: rec.snr_db,
            split: rec.split,
            kind,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Utterance>> {
        self.split(split).map(|r| self.load_record(r)).collect()
    }
}

/// Generates the corpus under `out_dir`: `wav/<id>_noisy.wav`,
/// `wav/<id>_clean.wav` for simulated utterances, and `manifest.jsonl`.
pub fn build_corpus(spec: &CorpusSpec, seed: u64, out_dir: &Path) -> Result<Manifest> {
    let utterances = generate_utterances(spec, seed)?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| IrisError::io(&wav_dir, e))?;
    let records = utterances
        .par_iter()
        .map(|u| {
            let noisy_rel = PathBuf::from("wav").join(format!("{}_noisy.wav", u.id));
            write_wav(&out_dir.join(&noisy_rel), &u.noisy)?;
            let clean_path = match u.kind {
                UtteranceKind::Simulated => {
                    let rel = PathBuf::from("wav").join(format!("{}_clean.wav", u.id));
                    write_wav(&out_dir.join(&rel), &u.clean)?;
                    Some(rel)
                }
                UtteranceKind::Clean => None,
            };
            Ok(ManifestRecord {
                id: u.id.clone(),
                noisy_path: noisy_rel,
                clean_path,
                text: u.text.clone(),
                split: u.split,
                snr_db: u.snr_db,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        records,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    let mut f = fs::File::create(out_dir.join("corpus.txt")).map_err(|e| IrisError::io(out_dir, e))?;
    writeln!(f, "seed = {seed}\nalphabet = {}", spec.alphabet).map_err(|e| IrisError::io(out_dir, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_follows_segment_formula() {
        let w = synth_utterance("abc", 1).unwrap();
        assert_eq!(w.len(), 3 * (1920 - 160) + 160);
        assert_eq!(w, synth_utterance("abc", 1).unwrap());
        assert!(synth_utterance("ab1", 1).is_err());
    }

    #[test]
    fn fundamentals_are_spaced() {
        let f: Vec<f64> = CHAR_TABLE.chars().map(|c| chord(c).unwrap().0).collect();
        assert!(f.windows(2).all(|w| w[1] - w[0] >= 150.0));
        assert!(chord('z').unwrap().1 < SAMPLE_RATE as f64 / 2.0);
    }

    #[test]
    fn equal_power_scales() {
        assert!((noise_scale(2.0, 2.0, 0.0).unwrap() - 1.0).abs() < 1e-9);
        assert!((noise_scale(2.0, 2.0, 20.0 * 2f64.log10()).unwrap() - 0.5).abs() < 1e-6);
        assert!(noise_scale(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn silent_clean_is_rejected() {
        let silent = WaveformBuffer::new(vec![0.0; 100]).unwrap();
        assert!(mix_noise(&silent, NoiseKind::White, 5.0, 1).is_err());
    }
}
