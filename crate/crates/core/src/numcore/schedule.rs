/// Linear warmup from 0 to `lr_max` over `warmup_steps`, then half-cosine
/// decay to 0 at `total_steps`. Steps outside `[0, total_steps]` clamp.
pub fn cosine_lr(step: usize, total_steps: usize, warmup_steps: usize, lr_max: f64) -> f64 {
    let step = step.min(total_steps);
    if step < warmup_steps {
        return lr_max * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps);
    if span == 0 {
        return lr_max;
    }
    let progress = (step - warmup_steps) as f64 / span as f64;
    0.5 * lr_max * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Default warmup length: the first tenth of training, i.e. a peak after
/// the 2nd of 20 epochs scaled to the run length.
pub fn default_warmup(total_steps: usize) -> usize {
    let w = (total_steps as f64 / 10.0).round() as usize;
    w.min(total_steps.saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_end_and_midpoint() {
        let (total, warm, lr) = (1000, 100, 1e-3);
        assert_eq!(cosine_lr(warm, total, warm, lr), lr);
        assert!(cosine_lr(total, total, warm, lr).abs() < 1e-18);
        let mid = warm + (total - warm) / 2;
        assert!((cosine_lr(mid, total, warm, lr) - lr / 2.0).abs() < 1e-15);
        assert_eq!(cosine_lr(0, total, warm, lr), 0.0);
        assert!((cosine_lr(50, total, warm, lr) - lr / 2.0).abs() < 1e-15);
    }

    #[test]
    fn clamps_past_the_end() {
        assert_eq!(cosine_lr(5000, 1000, 100, 1e-3), cosine_lr(1000, 1000, 100, 1e-3));
    }

    #[test]
    fn peak_is_the_maximum() {
        let (total, warm) = (390, default_warmup(390));
        assert_eq!(warm, 39);
        let peak = (0..=total).max_by(|&a, &b| {
            cosine_lr(a, total, warm, 1.0).partial_cmp(&cosine_lr(b, total, warm, 1.0)).unwrap()
        });
        assert_eq!(peak, Some(warm));
    }
}
