//! Scale-invariant signal-to-noise ratio, as a metric and as a loss.

use crate::autodiff::{Graph, Var};
use crate::error::{IrisError, Result};
use crate::signal::WaveformBuffer;
use crate::tensor::Tensor;

pub const SI_SNR_EPS: f64 = 1e-8;
pub const SI_SNR_CAP_DB: f64 = 60.0;

const DB_PER_NEPER: f64 = 10.0 / std::f64::consts::LN_10;

fn centered_reference(reference: &[f64], estimate_len: usize) -> Result<Vec<f64>> {
    if reference.len() != estimate_len {
        return Err(IrisError::InvalidArgument(format!(
            "estimate has {estimate_len} samples, reference has {}",
            reference.len()
        )));
    }
    if reference.len() < 2 {
        return Err(IrisError::InvalidArgument(
            "SI-SNR needs at least 2 samples".into(),
        ));
    }
    let mean = reference.iter().sum::<f64>() / reference.len() as f64;
    let centered: Vec<f64> = reference.iter().map(|v| v - mean).collect();
    if centered.iter().all(|&v| v == 0.0) {
        return Err(IrisError::InvalidArgument(
            "reference is constant; its projection is undefined".into(),
        ));
    }
    Ok(centered)
}

/// SI-SNR in dB without the metric cap.
pub fn si_snr_uncapped(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    let r = centered_reference(reference, estimate.len())?;
    let mean = estimate.iter().sum::<f64>() / estimate.len() as f64;
    let e: Vec<f64> = estimate.iter().map(|v| v - mean).collect();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    let alpha = e.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let (mut target, mut noise) = (0.0, 0.0);
    for (ev, rv) in e.iter().zip(&r) {
        let s = alpha * rv;
        target += s * s;
        noise += (ev - s) * (ev - s);
    }
    Ok(10.0 * (target / (noise + SI_SNR_EPS)).log10())
}

/// SI-SNR in dB, capped at [`SI_SNR_CAP_DB`].
pub fn si_snr(estimate: &WaveformBuffer, reference: &WaveformBuffer) -> Result<f64> {
    si_snr_uncapped(estimate.samples(), reference.samples()).map(|v| v.min(SI_SNR_CAP_DB))
}

/// Differentiable, uncapped SI-SNR of an estimate node against a fixed
/// reference. The estimate may have any shape with `reference.len()` values.
pub fn si_snr_graph(g: &mut Graph, estimate: Var, reference: &[f64]) -> Result<Var> {
    let len = g.value(estimate).numel();
    let r = centered_reference(reference, len)?;
    let rr: f64 = r.iter().map(|v| v * v).sum();
    let shape = g.shape(estimate).to_vec();
    let r = g.constant(Tensor::new(shape, r)?);
    let mean = g.mean(estimate);
    let neg_mean = g.neg(mean);
    let e = g.add_scalar(estimate, neg_mean)?;
    let proj = g.dot(e, r)?;
    let alpha = g.scale(proj, 1.0 / rr);
    let target = g.mul_scalar(r, alpha)?;
    let noise = g.sub(e, target)?;
    let t2 = g.square(target);
    let t_energy = g.sum(t2);
    let n2 = g.square(noise);
    let n_energy = g.sum(n2);
    let n_energy = g.affine(n_energy, 1.0, SI_SNR_EPS);
    let ratio = g.div(t_energy, n_energy)?;
    let ln = g.log(ratio);
    Ok(g.scale(ln, DB_PER_NEPER))
}

/// Mean of `-SI-SNR` over `(estimate, reference)` pairs.
pub fn si_snr_loss(g: &mut Graph, batch: &[(Var, &[f64])]) -> Result<Var> {
    if batch.is_empty() {
        return Err(IrisError::InvalidArgument("si_snr_loss needs a non-empty batch".into()));
    }
    let mut total: Option<Var> = None;
    for (est, reference) in batch {
        let s = si_snr_graph(g, *est, reference)?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let total = total.expect("non-empty batch");
    Ok(g.scale(total, -1.0 / batch.len() as f64))
}
