//! Step-decay learning rate.

use crate::config::ScheduleConfig;

/// `base_lr * decay_rate^floor(epoch / decay_step)`.
pub fn lr_at(epoch: usize, cfg: &ScheduleConfig) -> f64 {
    let k = epoch / cfg.decay_step.max(1);
    cfg.base_lr * cfg.decay_rate.powi(k.min(i32::MAX as usize) as i32)
}
