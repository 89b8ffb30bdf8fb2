use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sharpness of the arctangent surrogate gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub alpha: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self { alpha: 2.0 }
    }
}

impl SurrogateConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "surrogate sharpness must be positive, got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    /// `g(z) = α / (2 (1 + (π/2 · α · z)²))`
    pub fn derivative(&self, z: f64) -> f64 {
        let s = FRAC_PI_2 * self.alpha * z;
        self.alpha / (2.0 * (1.0 + s * s))
    }

    /// Smooth primitive of [`derivative`](Self::derivative), rising from 0
    /// to 1 with value 1/2 at the origin.
    pub fn primitive(&self, z: f64) -> f64 {
        (FRAC_PI_2 * self.alpha * z).atan() / PI + 0.5
    }
}

/// Forward behaviour of the spike nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpikeMode {
    /// Heaviside forward, surrogate backward. Used for all training.
    #[default]
    Hard,
    /// Surrogate primitive forward, so that finite differences agree with the
    /// analytic gradient. Gradient checks only.
    SoftForward,
}

/// Heaviside step with the strict convention: spike iff `z > 0`.
pub fn heaviside(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}
