//! Finite-difference gradient oracle.
//!
//! Reverse-mode gradients are compared against central differences
//! `(f(x+h) - f(x-h)) / 2h` at sampled coordinates. All arithmetic runs in
//! `f64`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::{IrisError, Result};
use crate::nn::Forward;
use crate::params::ParameterStore;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates to sample; every coordinate is checked when this is at
    /// least the total count.
    pub samples: usize,
    pub seed: u64,
    /// Gradients smaller than this are compared in absolute terms: the error
    /// is divided by `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            samples: 16,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checks: Vec<CoordinateCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Coordinates where the function was not finite.
    pub non_finite: Vec<(String, usize)>,
    /// Coordinates skipped because the stencil crosses a ReLU kink.
    pub kinked: Vec<(String, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.non_finite.is_empty() && !self.checks.is_empty() && self.max_rel_error < self.tolerance
    }

    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn evaluate<F>(params: &ParameterStore, f: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut Forward) -> Result<Var>,
{
    let mut fw = Forward::eval(params);
    let out = f(&mut fw)?;
    if fw.g.value(out).numel() != 1 {
        return Err(IrisError::shape(
            "grad_check",
            format!("function must be scalar, got {:?}", fw.g.shape(out)),
        ));
    }
    Ok((fw.g.scalar(out), fw.g.activation_pattern()))
}

/// Compares reverse-mode gradients of `f` with respect to `names` against
/// central differences.
///
/// A coordinate whose `±step` perturbation moves any ReLU or PReLU input
/// across zero is not differentiable over the stencil; it is listed in
/// [`GradCheckReport::kinked`] and another coordinate is drawn in its place.
pub fn grad_check<F>(
    params: &ParameterStore,
    names: &[String],
    f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Forward) -> Result<Var>,
{
    let selected: BTreeSet<String> = names.iter().cloned().collect();
    let mut fw = Forward::with_trainable(params, selected.clone());
    let out = f(&mut fw)?;
    let base = fw.g.value(out).data()[0];
    let base_pattern = fw.g.activation_pattern();
    let grads = fw.gradients(out)?;

    let mut coords: Vec<(String, usize)> = Vec::new();
    for name in &selected {
        let n = params.get(name)?.numel();
        coords.extend((0..n).map(|i| (name.clone(), i)));
    }
    coords.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));

    let mut report = GradCheckReport {
        checks: Vec::with_capacity(opts.samples.min(coords.len())),
        max_rel_error: 0.0,
        tolerance: opts.tolerance,
        non_finite: Vec::new(),
        kinked: Vec::new(),
    };
    if !base.is_finite() {
        report.non_finite.push(("<base point>".into(), 0));
        return Ok(report);
    }
    let mut probe = params.clone();
    for (name, index) in coords {
        if report.checks.len() >= opts.samples {
            break;
        }
        let original = params.get(&name)?.data()[index];
        probe.get_mut(&name)?.data_mut()[index] = original + opts.step;
        let (plus, plus_pattern) = evaluate(&probe, &f)?;
        probe.get_mut(&name)?.data_mut()[index] = original - opts.step;
        let (minus, minus_pattern) = evaluate(&probe, &f)?;
        probe.get_mut(&name)?.data_mut()[index] = original;
        if !plus.is_finite() || !minus.is_finite() {
            report.non_finite.push((name, index));
            continue;
        }
        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            report.kinked.push((name, index));
            continue;
        }
        let numeric = (plus - minus) / (2.0 * opts.step);
        let analytic = grads.get(&name).map(|g| g[index]).unwrap_or(0.0);
        let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
        let rel_error = (analytic - numeric).abs() / denom;
        report.max_rel_error = report.max_rel_error.max(rel_error);
        report.checks.push(CoordinateCheck {
            name,
            index,
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(report)
}
