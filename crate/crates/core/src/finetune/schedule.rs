use serde::{Deserialize, Serialize};

/// Learning-rate multiplier over `total` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    /// `0.5 * (1 + cos(pi * t / T))`
    #[default]
    Cosine,
    /// `(1 - t / T)^power`
    Polynomial { power: f64 },
    Constant,
}

impl Schedule {
    /// Multiplier at step `step` of `total`; 1 at step 0 and 0 at step `total`
    /// for the decaying schedules.
    pub fn multiplier(self, step: usize, total: usize) -> f64 {
        if total == 0 {
            return 1.0;
        }
        let progress = (step.min(total) as f64) / total as f64;
        match self {
            Schedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()),
            Schedule::Polynomial { power } => (1.0 - progress).powf(power),
            Schedule::Constant => 1.0,
        }
    }
}
