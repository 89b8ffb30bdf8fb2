use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scheduler {
    Constant,
    /// Cosine annealing to `min_lr`, advanced once every `every` minibatch
    /// iterations. `period` counts those advances; when absent it is the
    /// whole run.
    Cosine {
        min_lr: f64,
        #[serde(default)]
        period: Option<u64>,
        #[serde(default = "ten")]
        every: u64,
    },
    /// Multiplies by `gamma` every `every` epochs.
    Multistep { gamma: f64, every: usize },
}

fn ten() -> u64 {
    10
}

impl Scheduler {
    pub fn cosine(min_lr: f64) -> Self {
        Scheduler::Cosine {
            min_lr,
            period: None,
            every: 10,
        }
    }

    pub fn multistep(gamma: f64, every: usize) -> Self {
        Scheduler::Multistep { gamma, every }
    }

    /// Rate at `epoch` / global minibatch `iteration`, for a run of
    /// `total_iterations`.
    pub fn lr_at(&self, init: f64, epoch: usize, iteration: u64, total_iterations: u64) -> f64 {
        match *self {
            Scheduler::Constant => init,
            Scheduler::Cosine {
                min_lr,
                period,
                every,
            } => {
                let every = every.max(1);
                let k_max = period.unwrap_or(total_iterations.div_ceil(every)).max(1);
                let k = (iteration / every).min(k_max);
                cosine(init, min_lr, k, k_max)
            }
            Scheduler::Multistep { gamma, every } => {
                init * gamma.powi((epoch / every.max(1)) as i32)
            }
        }
    }
}

/// `min + ½(init − min)(1 + cos(π·k/K))`
pub fn cosine(init: f64, min_lr: f64, k: u64, k_max: u64) -> f64 {
    min_lr + 0.5 * (init - min_lr) * (1.0 + (PI * k as f64 / k_max as f64).cos())
}
