use super::tape::{BnStats, Tape, Var};
use crate::error::{Error, Result};

/// Running statistics for batch normalization through time: one mean and
/// variance vector per timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct BnttStats {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
    pub momentum: f64,
}

impl BnttStats {
    pub fn new(steps: usize, channels: usize) -> Self {
        Self {
            mean: vec![vec![0.0; channels]; steps],
            var: vec![vec![1.0; channels]; steps],
            momentum: 0.1,
        }
    }

    pub fn steps(&self) -> usize {
        self.mean.len()
    }
}

/// How a BNTT layer picks its statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnttMode {
    /// Batch statistics, running estimates updated.
    Train,
    /// Batch statistics, running estimates left alone.
    Probe,
    /// Running estimates only.
    Eval,
}

/// Normalizes `x` at timestep `t` with the statistics and affine parameters
/// owned by that timestep. `gamma` and `beta` are `[T × C]`.
pub fn bntt_step(
    tape: &mut Tape,
    x: Var,
    t: usize,
    gamma: Var,
    beta: Var,
    stats: &mut BnttStats,
    mode: BnttMode,
) -> Result<Var> {
    if t >= stats.steps() {
        return Err(Error::InvalidArgument(format!(
            "timestep {t} outside the {} steps covered by BNTT",
            stats.steps()
        )));
    }
    let g = tape.row(gamma, t)?;
    let b = tape.row(beta, t)?;
    match mode {
        BnttMode::Eval => {
            let (y, _) = tape.batch_norm(
                x,
                g,
                b,
                BnStats::Running {
                    mean: &stats.mean[t],
                    var: &stats.var[t],
                },
            )?;
            Ok(y)
        }
        BnttMode::Train | BnttMode::Probe => {
            let (y, batch) = tape.batch_norm(x, g, b, BnStats::Batch)?;
            if mode == BnttMode::Train {
                let (mean, var) = batch.expect("batch statistics");
                let m = stats.momentum;
                for (r, v) in stats.mean[t].iter_mut().zip(mean) {
                    *r = (1.0 - m) * *r + m * v;
                }
                for (r, v) in stats.var[t].iter_mut().zip(var) {
                    *r = (1.0 - m) * *r + m * v;
                }
            }
            Ok(y)
        }
    }
}
