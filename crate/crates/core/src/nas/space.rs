use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::SurrogateConfig;
use crate::error::{Error, Result};
use crate::graph::{Activation, ArchSpec, InputSpec, LayerSpec, Merge, TSkipEdge};
use crate::neuron::LifParams;

/// How hidden layers are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerChoice {
    Dense {
        units: [usize; 2],
    },
    Conv {
        channels: [usize; 2],
        kernels: Vec<usize>,
        strides: Vec<usize>,
    },
}

/// Bounds for random architecture search. Ranges are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub input: InputSpec,
    pub outputs: usize,
    /// Number of sampled hidden layers.
    pub depth_range: [usize; 2],
    pub layer: LayerChoice,
    /// Fixed layers placed after the sampled ones and before the readout.
    #[serde(default)]
    pub tail: Vec<LayerSpec>,
    pub tskip_count_range: [usize; 2],
    pub delta_t_range: [usize; 2],
    #[serde(default = "concat_only")]
    pub merges: Vec<Merge>,
    /// Permitted `(origin, destination)` node pairs; any distinct pair
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_pairs: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    pub alpha: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_budget: Option<usize>,
    #[serde(default)]
    pub neuron: LifParams,
    #[serde(default = "yes")]
    pub bntt: bool,
}

fn concat_only() -> Vec<Merge> {
    vec![Merge::Concat]
}

fn yes() -> bool {
    true
}

/// Rejection-sampling attempts before a space is declared infeasible.
pub const MAX_ATTEMPTS: usize = 1000;

fn draw(rng: &mut impl Rng, [lo, hi]: [usize; 2]) -> usize {
    rng.gen_range(lo..=hi)
}

impl SearchSpace {
    /// Named presets: `shd`, `ssc`, `shd-large`, `ssc-large`, `dvs`, `flow`.
    pub fn preset(name: &str) -> Result<Self> {
        let audio = |outputs, budget, depth: [usize; 2], units: [usize; 2]| SearchSpace {
            timesteps: 99,
            input: InputSpec::vector(700),
            outputs,
            depth_range: depth,
            layer: LayerChoice::Dense { units },
            tail: vec![],
            tskip_count_range: [1, 2],
            delta_t_range: [10, 45],
            merges: concat_only(),
            allowed_pairs: None,
            alpha: false,
            param_budget: Some(budget),
            neuron: LifParams::default(),
            bntt: true,
        };
        let vision = |timesteps, dt, budget, outputs| SearchSpace {
            timesteps,
            input: InputSpec::image(2, 64, 64),
            outputs,
            depth_range: [3, 5],
            layer: LayerChoice::Conv {
                channels: [32, 128],
                kernels: vec![1, 3, 5],
                strides: vec![1],
            },
            tail: vec![LayerSpec::conv(1, 32, 11, Activation::Lif)],
            tskip_count_range: [1, 2],
            delta_t_range: dt,
            merges: concat_only(),
            allowed_pairs: None,
            alpha: true,
            param_budget: budget,
            neuron: LifParams::default(),
            bntt: true,
        };
        Ok(match name {
            "shd" => audio(20, 300_000, [2, 4], [32, 384]),
            "ssc" => audio(35, 300_000, [2, 4], [32, 384]),
            "shd-large" => audio(20, 1_300_000, [3, 6], [64, 1024]),
            "ssc-large" => audio(35, 1_300_000, [3, 6], [64, 1024]),
            "dvs" => vision(30, [5, 14], Some(600_000), 11),
            "flow" => vision(10, [2, 6], None, 2),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown preset '{other}' (shd, ssc, shd-large, ssc-large, dvs, flow)"
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let [lo, hi] = self.delta_t_range;
        if lo < 1 || lo > hi || hi >= self.timesteps {
            return bad(format!(
                "Δt range [{lo}, {hi}] must lie within [1, {}]",
                self.timesteps.saturating_sub(1)
            ));
        }
        for (name, [a, b]) in [
            ("depth_range", self.depth_range),
            ("tskip_count_range", self.tskip_count_range),
        ] {
            if a > b {
                return bad(format!("{name} [{a}, {b}] is empty"));
            }
        }
        match &self.layer {
            LayerChoice::Dense { units: [a, b] } | LayerChoice::Conv { channels: [a, b], .. }
                if *a == 0 || a > b =>
            {
                return bad(format!("layer size range [{a}, {b}] is empty"));
            }
            LayerChoice::Conv {
                kernels, strides, ..
            } if kernels.is_empty() || strides.is_empty() => {
                return bad("kernel and stride choices must be non-empty".into());
            }
            _ => {}
        }
        if self.merges.is_empty() {
            return bad("at least one merge operator is required".into());
        }
        if self.param_budget == Some(0) {
            return bad("parameter budget must be positive".into());
        }
        Ok(())
    }

    fn draw_layer(&self, rng: &mut impl Rng) -> LayerSpec {
        match &self.layer {
            LayerChoice::Dense { units } => LayerSpec::dense(draw(rng, *units), Activation::Lif),
            LayerChoice::Conv {
                channels,
                kernels,
                strides,
            } => LayerSpec::conv(
                *kernels.choose(rng).expect("kernels"),
                draw(rng, *channels),
                *strides.choose(rng).expect("strides"),
                Activation::Lif,
            ),
        }
    }

    /// One uniform draw per dimension, without the budget check.
    fn propose(&self, rng: &mut impl Rng) -> ArchSpec {
        let hidden = draw(rng, self.depth_range);
        let mut layers: Vec<LayerSpec> = (0..hidden).map(|_| self.draw_layer(rng)).collect();
        layers.extend(self.tail.iter().copied());
        layers.push(LayerSpec::dense(self.outputs, Activation::Integrator));
        let depth = layers.len();
        let pairs: Vec<(usize, usize)> = match &self.allowed_pairs {
            Some(p) => p
                .iter()
                .copied()
                .filter(|&(o, d)| o <= depth && d <= depth)
                .collect(),
            None => (0..=depth)
                .flat_map(|o| (1..=depth).filter(move |&d| d != o).map(move |d| (o, d)))
                .collect(),
        };
        let n_skips = draw(rng, self.tskip_count_range);
        let mut tskips = Vec::with_capacity(n_skips);
        for _ in 0..n_skips {
            let Some(&(origin, destination)) = pairs.choose(rng) else {
                break;
            };
            let backward = origin > destination;
            tskips.push(TSkipEdge {
                origin,
                destination,
                delta_t: draw(rng, self.delta_t_range),
                merge: *self.merges.choose(rng).expect("merges"),
                alpha_enabled: self.alpha && !backward,
                alpha_raw: 0.0,
            });
        }
        ArchSpec {
            timesteps: self.timesteps,
            input: self.input,
            layers,
            tskips,
            neuron: self.neuron,
            surrogate: SurrogateConfig::default(),
            bntt: self.bntt,
        }
    }

    /// Whether `spec` is valid and within budget.
    pub fn admits(&self, spec: &ArchSpec) -> bool {
        spec.validate().is_ok()
            && match self.param_budget {
                Some(b) => spec.param_count().is_ok_and(|n| n <= b),
                None => true,
            }
    }

    /// Rejection-samples an admissible architecture.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<ArchSpec> {
        self.validate()?;
        for _ in 0..MAX_ATTEMPTS {
            let spec = self.propose(rng);
            if self.admits(&spec) {
                return Ok(spec);
            }
        }
        Err(Error::Infeasible(format!(
            "no admissible architecture in {MAX_ATTEMPTS} draws (budget {:?})",
            self.param_budget
        )))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let space: Self = serde_json::from_str(s)?;
        space.validate()?;
        Ok(space)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn tiny() -> SearchSpace {
        SearchSpace {
            timesteps: 8,
            input: InputSpec::vector(6),
            outputs: 3,
            depth_range: [1, 1],
            layer: LayerChoice::Dense { units: [5, 5] },
            tail: vec![],
            tskip_count_range: [1, 1],
            delta_t_range: [2, 2],
            merges: vec![Merge::Add],
            allowed_pairs: Some(vec![(0, 2)]),
            alpha: false,
            param_budget: None,
            neuron: LifParams::default(),
            bntt: false,
        }
    }

    #[test]
    fn single_admissible_config() {
        let space = tiny();
        let mut rng = seed::stream(0, "t", 0);
        let first = space.sample(&mut rng).unwrap();
        for _ in 0..20 {
            assert_eq!(space.sample(&mut rng).unwrap(), first);
        }
        assert_eq!(first.tskips, vec![TSkipEdge::new(0, 2, 2, Merge::Add)]);
    }

    #[test]
    fn presets_sample_within_constraints() {
        for (name, dt) in [("shd", [10, 45]), ("ssc", [10, 45]), ("dvs", [5, 14]), ("flow", [2, 6])] {
            let space = SearchSpace::preset(name).unwrap();
            let mut rng = seed::stream(1, name, 0);
            let n = if name == "shd" { 10_000 } else { 300 };
            for _ in 0..n {
                let s = space.sample(&mut rng).unwrap();
                assert!(s.validate().is_ok());
                assert!(s.tskips.iter().all(|e| e.delta_t >= dt[0] && e.delta_t <= dt[1]));
                if let Some(b) = space.param_budget {
                    assert!(s.param_count().unwrap() <= b);
                }
            }
        }
        assert!(SearchSpace::preset("mnist").is_err());
    }

    #[test]
    fn seeded_sequences_repeat() {
        let space = SearchSpace::preset("shd").unwrap();
        let draw = |s| {
            let mut rng = seed::stream(s, "x", 0);
            (0..5).map(|_| space.sample(&mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn infeasible_budget() {
        let space = SearchSpace {
            param_budget: Some(10),
            ..tiny()
        };
        let mut rng = seed::stream(0, "t", 0);
        assert!(matches!(space.sample(&mut rng), Err(Error::Infeasible(_))));
    }

    #[test]
    fn rejects_bad_ranges() {
        let mut s = tiny();
        s.delta_t_range = [0, 3];
        assert!(s.validate().is_err());
        s.delta_t_range = [2, 8];
        assert!(s.validate().is_err());
        let json = serde_json::to_string(&tiny()).unwrap();
        assert_eq!(SearchSpace::from_json(&json).unwrap(), tiny());
    }
}
