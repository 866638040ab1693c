mod common;

use iris::gradcheck::GradCheckOptions;

fn opts(seed: u64, samples: usize) -> GradCheckOptions {
    GradCheckOptions {
        samples,
        seed,
        ..GradCheckOptions::default()
    }
}

#[test]
fn every_op_matches_central_differences() {
    for seed in [1, 2] {
        for case in common::op_cases(seed) {
            let report = case.check(opts(seed, 48)).unwrap();
            assert!(
                report.passed(),
                "{} seed {seed}: worst {:?}, non-finite {:?}",
                case.name,
                report.worst(),
                report.non_finite
            );
        }
    }
}

#[test]
fn full_composition_matches_central_differences() {
    for prefix in ["se.", "asr."] {
        let case = common::composition_case(5, prefix);
        let report = case.check(opts(5, 16)).unwrap();
        assert!(report.passed(), "{prefix} worst {:?}", report.worst());
        assert_eq!(report.checks.len(), 16);
    }
}
