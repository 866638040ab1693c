mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use iris::corpus::{
    build_corpus, generate_utterances, measure_snr, mix_at_snr, CorpusSpec, Manifest, Split, UtteranceKind,
    MANIFEST_FILE,
};
use iris::features::{self, spec_augment, FeatureExtractorKind, SpecAugmentPolicy};
use iris::signal::{FeatureMatrix, WaveformBuffer};

fn small_spec() -> CorpusSpec {
    CorpusSpec {
        n_train: 12,
        n_dev: 4,
        n_test: 4,
        ..CorpusSpec::default()
    }
}

#[test]
fn generation_is_a_pure_function_of_spec_and_seed() {
    let a = generate_utterances(&small_spec(), 9).unwrap();
    let b = generate_utterances(&small_spec(), 9).unwrap();
    assert_eq!(a, b);
    let c = generate_utterances(&small_spec(), 10).unwrap();
    assert_ne!(a, c);
}

#[test]
fn splits_are_disjoint_and_simulated_items_carry_references() {
    let utts = generate_utterances(&small_spec(), 3).unwrap();
    let ids = |s: Split| utts.iter().filter(|u| u.split == s).map(|u| u.id.clone()).collect::<BTreeSet<_>>();
    let (tr, dv, te) = (ids(Split::Train), ids(Split::Dev), ids(Split::Test));
    assert_eq!(tr.len() + dv.len() + te.len(), utts.len());
    assert!(tr.is_disjoint(&dv) && tr.is_disjoint(&te) && dv.is_disjoint(&te));
    for u in &utts {
        assert_eq!(u.noisy.len(), u.clean.len());
        assert!(!u.text.is_empty());
        match u.kind {
            UtteranceKind::Simulated => {
                assert!(u.reference().is_some());
                let snr = u.snr_db.unwrap();
                assert!((measure_snr(&u.clean, &u.noisy).unwrap() - snr).abs() < 0.01);
            }
            UtteranceKind::Clean => assert_eq!(u.noisy, u.clean),
        }
    }
}

#[test]
fn stored_corpus_keeps_recorded_snr() {
    let dir = tempfile::tempdir().unwrap();
    let written = build_corpus(&small_spec(), 5, dir.path()).unwrap();
    let manifest = Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.records, written.records);
    let ids: BTreeSet<_> = manifest.records.iter().map(|r| r.id.clone()).collect();
    assert_eq!(ids.len(), manifest.records.len());
    for split in Split::ALL {
        for u in manifest.load_split(split).unwrap() {
            assert!(!u.text.is_empty());
            if let Some(snr) = u.snr_db {
                assert!((measure_snr(&u.clean, &u.noisy).unwrap() - snr).abs() < 0.01, "{}", u.id);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mixing_hits_the_requested_snr(seed in any::<u64>(), snr in -5.0f64..20.0) {
        let clean = iris::corpus::synth_utterance("abc", seed).unwrap();
        let noise = common::uniform(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed), &[clean.len()], -1.0, 1.0);
        let (noisy, _) = mix_at_snr(&clean, noise.data(), snr).unwrap();
        prop_assert!((measure_snr(&clean, &noisy).unwrap() - snr).abs() < 1e-9);
    }

    #[test]
    fn spec_augment_only_zeroes_masked_cells(seed in any::<u64>(), frames in 1usize..40, dim in 1usize..20) {
        let values = common::uniform(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed), &[frames, dim], 0.5, 1.0);
        let fm = FeatureMatrix::new(frames, dim, values.into_data(), 0.01).unwrap();
        let policy = SpecAugmentPolicy::default();
        let out = spec_augment(&fm, &policy, seed);
        let keep = policy.keep_mask(frames, dim, seed);
        for ((a, b), k) in fm.values().iter().zip(out.values()).zip(keep) {
            if k { prop_assert_eq!(a, b) } else { prop_assert_eq!(*b, 0.0) }
        }
        prop_assert_eq!(spec_augment(&fm, &SpecAugmentPolicy::disabled(), seed), fm);
    }
}

#[test]
fn feature_extraction_and_projection_are_pure() {
    let kind = FeatureExtractorKind::SslrStub { seed: 3 };
    let mut params = iris::params::ParameterStore::new();
    features::init_sslr_params(&mut params, 3).unwrap();
    features::init_projection(&mut params, 4).unwrap();
    let wave = WaveformBuffer::new((0..4000).map(|i| (i as f64 * 0.01).sin()).collect()).unwrap();
    let a = features::extract_features(&wave, kind, &params).unwrap();
    let b = features::extract_features(&wave, kind, &params).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        features::project_features(&a, &params).unwrap(),
        features::project_features(&b, &params).unwrap()
    );
    let fb = features::extract_features(&wave, FeatureExtractorKind::Fbank, &params).unwrap();
    assert_eq!(fb, features::extract_features(&wave, FeatureExtractorKind::Fbank, &params).unwrap());
}
