//! Task metrics and the synaptic-operation energy model.

mod energy;
mod task;

pub use energy::{
    energy_total, profile_network, snn_energy_from_ops, spike_rate, EnergyModel, EnergyReport,
    LayerEnergy, LayerOps, OpKind,
};
pub use task::{accuracy, aee};
