//! Compares reverse-mode gradients of a small two-layer network against
//! central differences.
//!
//!     cargo run --release --example gradient_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iris::gradcheck::{grad_check, GradCheckOptions};
use iris::nn::{add_linear, linear};
use iris::params::ParameterStore;
use iris::tensor::Tensor;

fn main() -> iris::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParameterStore::new();
    add_linear(&mut params, "asr.hidden", 6, 8, &mut rng)?;
    add_linear(&mut params, "asr.out", 8, 3, &mut rng)?;
    let input = Tensor::new(vec![4, 6], (0..24).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect())?;

    let names: Vec<String> = params.names().cloned().collect();
    let report = grad_check(
        &params,
        &names,
        |fw| {
            let x = fw.g.constant(input.clone());
            let h = linear(fw, "asr.hidden", x)?;
            let h = fw.g.relu(h);
            let y = linear(fw, "asr.out", h)?;
            let y = fw.g.square(y);
            Ok(fw.g.sum(y))
        },
        GradCheckOptions {
            samples: 40,
            ..GradCheckOptions::default()
        },
    )?;
    println!(
        "{} coordinates checked, {} skipped at activation kinks, max relative error {:.2e}: {}",
        report.checks.len(),
        report.kinked.len(),
        report.max_rel_error,
        if report.passed() { "pass" } else { "FAIL" }
    );
    Ok(())
}
