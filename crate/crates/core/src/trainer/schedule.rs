use crate::error::{contract, Result};

/// Release weight of the contrastive-consistency term at step `t` of
/// `total`: zero through the first half, then a linear ramp reaching 1 at
/// `t = total`.
pub fn alpha_schedule(t: usize, total: usize) -> Result<f64> {
    if total == 0 || t > total {
        return Err(contract!("alpha_schedule: step {t} outside [0, {total}]"));
    }
    let ramp = (2 * t) as f64 - total as f64;
    Ok((ramp / total as f64).max(0.0))
}

/// Linear warm-up from 0 to `peak` over the first `warmup_fraction * total`
/// steps, then linear decay to 0 at `t = total`.
pub fn lr_schedule(t: usize, total: usize, warmup_fraction: f64, peak: f64) -> Result<f64> {
    if total == 0 || t > total {
        return Err(contract!("lr_schedule: step {t} outside [0, {total}]"));
    }
    if !(0.0..1.0).contains(&warmup_fraction) {
        return Err(contract!("warmup fraction {warmup_fraction} outside [0, 1)"));
    }
    let warmup = warmup_fraction * total as f64;
    let t = t as f64;
    let total = total as f64;
    Ok(if t < warmup {
        peak * t / warmup
    } else {
        peak * (total - t) / (total - warmup)
    })
}
