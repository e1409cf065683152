use crate::numerics::{Tape, Var};

/// Lower bound on the per-basin standard deviation in the NSE loss.
pub const NSE_STD_FLOOR: f64 = 1e-6;

fn nse_weights(stds: &[f64]) -> Vec<f64> {
    stds.iter().map(|s| 1.0 / s.max(NSE_STD_FLOOR).powi(2)).collect()
}

/// Batch mean of `sum_t (sim - obs)^2 / std_b^2` for `pred[B x F]`.
pub fn nse_loss(tape: &mut Tape, pred: Var, targets: &[f64], stds: &[f64]) -> Var {
    tape.weighted_sse(pred, targets, &nse_weights(stds))
}

/// Value-only form of [`nse_loss`] over rows of predictions and targets.
pub fn nse_loss_value(pred: &[Vec<f64>], targets: &[Vec<f64>], stds: &[f64]) -> f64 {
    let weights = nse_weights(stds);
    let total: f64 = pred
        .iter()
        .zip(targets)
        .zip(&weights)
        .map(|((p, t), w)| w * p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    total / pred.len() as f64
}
