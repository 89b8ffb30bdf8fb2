//! Leaky integrate-and-fire dynamics.
//!
//! One step of a layer integrates the weighted input into the membrane
//! potential, applies the reset driven by the previous step's spikes and
//! fires where the normalized potential crosses zero:
//!
//! ```text
//! U'  = λ·U + I − V_th·O_prev        (soft reset)
//! U'  = λ·(U ⊙ (1 − O_prev)) + I     (hard reset)
//! Z   = U'/V_th − 1
//! O   = H(Z)
//! ```
//!
//! Leak and threshold are per-layer scalars and may be trained.

use serde::{Deserialize, Serialize};

use crate::engine::{SpikeMode, SurrogateConfig, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const LEAK_MIN: f64 = 1e-3;
pub const LEAK_MAX: f64 = 1.0 - 1e-3;
pub const THRESHOLD_MIN: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    Hard,
    #[default]
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub leak: f64,
    pub threshold: f64,
    #[serde(default)]
    pub reset: ResetMode,
    #[serde(default = "yes")]
    pub learnable: bool,
}

fn yes() -> bool {
    true
}

impl Default for LifParams {
    /// Leak 0.6 with a unit threshold, soft reset, learnable.
    ///
    /// Hidden-layer currents are batch-normalized to unit variance, so the
    /// threshold starts on that scale; see [`LifParams::high_threshold`] for the
    /// larger initial threshold used with unnormalized currents.
    fn default() -> Self {
        Self {
            leak: 0.6,
            threshold: 1.0,
            reset: ResetMode::Soft,
            learnable: true,
        }
    }
}

impl LifParams {
    /// Leak 0.6, threshold 15.
    pub fn high_threshold() -> Self {
        Self {
            leak: 0.6,
            threshold: 15.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.leak > 0.0 && self.leak < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "leak must lie in (0, 1), got {}",
                self.leak
            )));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    /// Pulls leak and threshold back into their valid ranges.
    pub fn clamp(self) -> Self {
        Self {
            leak: clamp_leak(self.leak),
            threshold: clamp_threshold(self.threshold),
            ..self
        }
    }
}

pub fn clamp_leak(leak: f64) -> f64 {
    leak.clamp(LEAK_MIN, LEAK_MAX)
}

pub fn clamp_threshold(threshold: f64) -> f64 {
    threshold.max(THRESHOLD_MIN)
}

/// Membrane potential and last emitted spikes of one layer.
#[derive(Clone, Copy, Debug)]
pub struct LifState {
    pub u: Var,
    pub o_prev: Var,
}

impl LifState {
    /// Resting state: zero potential, no previous spikes.
    pub fn zeros(tape: &mut Tape, shape: &[usize]) -> Result<Self> {
        let u = tape.constant(Tensor::zeros(shape))?;
        Ok(Self { u, o_prev: u })
    }
}

/// On-tape handles for a layer's leak and threshold scalars.
#[derive(Clone, Copy, Debug)]
pub struct LifScalars {
    pub leak: Var,
    pub threshold: Var,
}

impl LifScalars {
    /// Registers the scalars, as parameters when `params.learnable`.
    pub fn register(tape: &mut Tape, params: &LifParams) -> Result<Self> {
        let leak = tape.leaf(Tensor::scalar(params.leak), params.learnable)?;
        let threshold = tape.leaf(Tensor::scalar(params.threshold), params.learnable)?;
        Ok(Self { leak, threshold })
    }
}

/// Advances one LIF layer by one timestep. `input` is the full synaptic
/// current for this step, skip payloads included.
pub fn lif_step(
    tape: &mut Tape,
    state: &LifState,
    input: Var,
    scalars: &LifScalars,
    reset: ResetMode,
    surrogate: SurrogateConfig,
    mode: SpikeMode,
) -> Result<(Var, LifState)> {
    let (su, si) = (tape.value(state.u).shape(), tape.value(input).shape());
    if su != si {
        return Err(Error::Shape(format!(
            "lif_step: membrane {su:?} but input {si:?}"
        )));
    }
    let retained = match reset {
        ResetMode::Soft => state.u,
        ResetMode::Hard => {
            let keep = tape.affine(state.o_prev, -1.0, 1.0)?;
            tape.mul(state.u, keep)?
        }
    };
    let leaked = tape.scale_by(retained, scalars.leak)?;
    let mut u = tape.add(leaked, input)?;
    if reset == ResetMode::Soft {
        let sub = tape.scale_by(state.o_prev, scalars.threshold)?;
        u = tape.sub(u, sub)?;
    }
    let ratio = tape.div_by(u, scalars.threshold)?;
    let z = tape.affine(ratio, 1.0, -1.0)?;
    let spikes = tape.spike(z, surrogate, mode)?;
    Ok((spikes, LifState { u, o_prev: spikes }))
}

/// Non-spiking leaky integrator: `U' = λ·U + I`. Used for readout layers.
pub fn integrate_step(tape: &mut Tape, u: Var, input: Var, leak: Var) -> Result<Var> {
    let leaked = tape.scale_by(u, leak)?;
    tape.add(leaked, input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::gradcheck::{check, random};

    struct Run {
        potentials: Vec<Vec<f64>>,
        spikes: Vec<Vec<f64>>,
    }

    fn run(params: LifParams, u0: &[f64], inputs: &[Vec<f64>]) -> Run {
        let mut tape = Tape::new();
        let n = u0.len();
        let scalars = LifScalars::register(&mut tape, &params).unwrap();
        let u = tape.constant(Tensor::new(vec![1, n], u0.to_vec()).unwrap()).unwrap();
        let o = tape.constant(Tensor::zeros(&[1, n])).unwrap();
        let mut state = LifState { u, o_prev: o };
        let mut out = Run {
            potentials: vec![],
            spikes: vec![],
        };
        for x in inputs {
            let x = tape.constant(Tensor::new(vec![1, n], x.clone()).unwrap()).unwrap();
            let (s, next) = lif_step(
                &mut tape,
                &state,
                x,
                &scalars,
                params.reset,
                SurrogateConfig::default(),
                SpikeMode::Hard,
            )
            .unwrap();
            out.potentials.push(tape.value(next.u).data().to_vec());
            out.spikes.push(tape.value(s).data().to_vec());
            state = next;
        }
        out
    }

    #[test]
    fn resting_neuron_stays_silent() {
        let r = run(LifParams::high_threshold(), &[0.0], &[vec![0.0]]);
        assert_eq!(r.potentials[0], vec![0.0]);
        assert_eq!(r.spikes[0], vec![0.0]);
    }

    #[test]
    fn constant_input_geometric_series() {
        let r = run(LifParams::high_threshold(), &[0.0], &vec![vec![3.0]; 3]);
        assert!((r.potentials[2][0] - 5.88).abs() < 1e-12);
        assert!(r.spikes.iter().all(|s| s[0] == 0.0));
    }

    #[test]
    fn threshold_crossing_and_resets() {
        // λ at its upper clamp stands in for λ = 1 in a hand trace.
        for reset in [ResetMode::Soft, ResetMode::Hard] {
            let params = LifParams {
                leak: 0.999,
                threshold: 15.0,
                reset,
                learnable: false,
            };
            let r = run(params, &[14.0 / 0.999], &[vec![2.0], vec![0.0]]);
            assert!((r.potentials[0][0] - 16.0).abs() < 1e-12);
            assert_eq!(r.spikes[0], vec![1.0]);
            let expected = match reset {
                ResetMode::Soft => 0.999 * 16.0 - 15.0,
                ResetMode::Hard => 0.0,
            };
            assert!((r.potentials[1][0] - expected).abs() < 1e-12, "{reset:?}");
        }
    }

    #[test]
    fn clamp_examples() {
        let p = LifParams {
            leak: 1.2,
            threshold: -1.0,
            ..LifParams::default()
        }
        .clamp();
        assert_eq!(p.leak, 0.999);
        assert_eq!(p.threshold, 0.01);
        let ok = LifParams::high_threshold();
        assert_eq!(ok.clamp(), ok);
        assert_eq!(clamp_leak(0.0), 1e-3);
    }

    #[test]
    fn validate_ranges() {
        assert!(LifParams::default().validate().is_ok());
        assert!(LifParams { leak: 1.0, ..LifParams::default() }.validate().is_err());
        assert!(LifParams { threshold: 0.0, ..LifParams::default() }.validate().is_err());
    }

    #[test]
    fn shape_mismatch() {
        let mut tape = Tape::new();
        let scalars = LifScalars::register(&mut tape, &LifParams::default()).unwrap();
        let state = LifState::zeros(&mut tape, &[2, 3]).unwrap();
        let x = tape.constant(Tensor::zeros(&[2, 4])).unwrap();
        let r = lif_step(
            &mut tape,
            &state,
            x,
            &scalars,
            ResetMode::Soft,
            SurrogateConfig::default(),
            SpikeMode::Hard,
        );
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn unrolled_chain_gradient() {
        for reset in [ResetMode::Soft, ResetMode::Hard] {
            let params = [
                random(&[2, 3], 30).map(|v| v * 2.0),
                Tensor::scalar(0.6),
                Tensor::scalar(0.8),
            ];
            let errs = check(&params, |t, v| {
                let scalars = LifScalars {
                    leak: v[1],
                    threshold: v[2],
                };
                let mut state = LifState::zeros(t, &[1, 3])?;
                let mut outs = vec![];
                for step in 0..3 {
                    let x = t.constant(random(&[1, 2], 40 + step))?;
                    let i = t.matmul(x, v[0])?;
                    let (s, next) = lif_step(
                        t,
                        &state,
                        i,
                        &scalars,
                        reset,
                        SurrogateConfig::default(),
                        SpikeMode::SoftForward,
                    )?;
                    outs.push(s);
                    state = next;
                }
                let total = t.add_n(&outs)?;
                let sq = t.mul(total, total)?;
                t.sum(sq)
            });
            assert!(errs.iter().all(|&e| e <= 1e-4), "{reset:?}: {errs:?}");
        }
    }
}
