use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::Tape;
use crate::error::{Error, Result};
use crate::graph::{Activation, Mode, Network};

/// Energy per synaptic operation at 45 nm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    /// Joules per accumulate (spiking layers).
    pub e_ac: f64,
    /// Joules per multiply-accumulate (analog layers).
    pub e_mac: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            e_ac: 0.9e-12,
            e_mac: 4.6e-12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Snn,
    Ann,
}

/// Operation profile of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerOps {
    pub name: String,
    pub kind: OpKind,
    /// Neurons.
    pub n: f64,
    /// Synaptic connections per neuron.
    pub c: f64,
    /// Average spikes per neuron per sample over the whole window.
    pub m: f64,
    pub timesteps: usize,
}

impl LayerOps {
    /// `T·N·C·M` for spiking layers, `N·C` for analog ones.
    pub fn ops(&self) -> f64 {
        match self.kind {
            OpKind::Snn => self.timesteps as f64 * self.n * self.c * self.m,
            OpKind::Ann => self.n * self.c,
        }
    }

    pub fn energy(&self, model: &EnergyModel) -> f64 {
        self.ops()
            * match self.kind {
                OpKind::Snn => model.e_ac,
                OpKind::Ann => model.e_mac,
            }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerEnergy {
    pub name: String,
    pub kind: OpKind,
    pub ops: f64,
    pub spike_rate: f64,
    pub energy_j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub layers: Vec<LayerEnergy>,
    pub total_ops: f64,
    pub total_energy_j: f64,
    /// Mean `M` over spiking layers.
    pub mean_spike_rate: f64,
    pub params: Option<usize>,
    pub timesteps: usize,
}

impl EnergyReport {
    pub fn total_energy_mj(&self) -> f64 {
        self.total_energy_j * 1e3
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kind,ops,spike_rate,energy_j\n");
        for l in &self.layers {
            let kind = match l.kind {
                OpKind::Snn => "snn",
                OpKind::Ann => "ann",
            };
            writeln!(s, "{},{kind},{},{},{}", l.name, l.ops, l.spike_rate, l.energy_j).unwrap();
        }
        writeln!(s, "total,,{},{},{}", self.total_ops, self.mean_spike_rate, self.total_energy_j).unwrap();
        s
    }

    /// Summary in the columns #Params, #OPS, spike rate and E_total. The
    /// spike rate is shown as `M` and as a percentage of `T`.
    pub fn table(&self) -> String {
        let params = self
            .params
            .map_or("-".to_string(), |p| format!("{:.3}", p as f64 / 1e6));
        let pct = if self.timesteps > 0 {
            100.0 * self.mean_spike_rate / self.timesteps as f64
        } else {
            0.0
        };
        let mut s = String::new();
        writeln!(s, "{:>14} {:>14} {:>10} {:>10} {:>12}", "#Params (M)", "#OPS", "M", "M/T (%)", "E_total (mJ)").unwrap();
        writeln!(
            s,
            "{params:>14} {:>14.4e} {:>10.4} {:>10.3} {:>12.5}",
            self.total_ops,
            self.mean_spike_rate,
            pct,
            self.total_energy_mj()
        )
        .unwrap();
        s
    }
}

/// Average spikes per neuron per sample.
pub fn spike_rate(total_spikes: f64, neurons: usize, samples: usize) -> f64 {
    if neurons == 0 || samples == 0 {
        return 0.0;
    }
    total_spikes / (neurons as f64 * samples as f64)
}

pub fn energy_total(profile: &[LayerOps], model: &EnergyModel) -> EnergyReport {
    let layers: Vec<LayerEnergy> = profile
        .iter()
        .map(|l| LayerEnergy {
            name: l.name.clone(),
            kind: l.kind,
            ops: l.ops(),
            spike_rate: l.m,
            energy_j: l.energy(model),
        })
        .collect();
    let snn: Vec<f64> = profile.iter().filter(|l| l.kind == OpKind::Snn).map(|l| l.m).collect();
    EnergyReport {
        total_ops: layers.iter().map(|l| l.ops).sum(),
        total_energy_j: layers.iter().map(|l| l.energy_j).sum(),
        mean_spike_rate: if snn.is_empty() { 0.0 } else { snn.iter().sum::<f64>() / snn.len() as f64 },
        layers,
        params: None,
        timesteps: profile.first().map_or(0, |l| l.timesteps),
    }
}

/// Energy of a spiking network from its total operation count.
pub fn snn_energy_from_ops(ops: f64, model: &EnergyModel) -> f64 {
    ops * model.e_ac
}

/// Measures per-layer spike rates over `data` in evaluation mode and builds
/// the operation profile. Spiking layers use their own rate; the
/// non-spiking readout uses the rate of the layer feeding it; rectifier
/// layers, and a readout fed by one, count as dense analog layers.
pub fn profile_network(net: &mut Network, data: &Dataset, batch_size: usize) -> Result<Vec<LayerOps>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no samples to profile".into()));
    }
    let depth = net.spec().depth();
    let mut counts = vec![0.0; depth + 1];
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(batch_size.max(1)) {
        let (x, _) = data.batch(idx)?;
        let mut tape = Tape::new();
        let trace = net.forward(&mut tape, &x, Mode::Eval)?;
        for (c, s) in counts.iter_mut().zip(&trace.spike_counts) {
            *c += s;
        }
    }
    let spec = net.spec().clone();
    let shapes = net.shapes().clone();
    let samples = data.len();
    let rate = |node: usize| spike_rate(counts[node], shapes.node_size(node), samples);
    Ok(spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let layer = i + 1;
            let c = shapes.fan_in(&spec, layer) as f64;
            let (kind, m) = match l.activation {
                Activation::Lif => (OpKind::Snn, rate(layer)),
                Activation::Integrator => match layer.checked_sub(2).map(|j| spec.layers[j].activation) {
                    Some(Activation::Relu) => (OpKind::Ann, 0.0),
                    _ => (OpKind::Snn, rate(layer - 1)),
                },
                Activation::Relu => (OpKind::Ann, 0.0),
            };
            LayerOps {
                name: format!("layer{layer}"),
                kind,
                n: shapes.node_size(layer) as f64,
                c,
                m,
                timesteps: spec.timesteps,
            }
        })
        .collect())
}
