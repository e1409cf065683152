/// Learning rate at optimizer step `step` (0-based): linear warm-up from 0
/// to `peak` over the first epoch, then linear decay to 0 at `total_steps`.
///
/// With no steps after the first epoch the rate only warms up.
pub fn lr_schedule(step: u64, total_steps: u64, steps_per_epoch: u64, peak: f64) -> f64 {
    let warm = steps_per_epoch.max(1);
    if step <= warm || total_steps <= warm {
        return peak * (step.min(warm) as f64 / warm as f64);
    }
    let left = total_steps.saturating_sub(step);
    peak * left as f64 / (total_steps - warm) as f64
}
