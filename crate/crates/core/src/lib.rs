//! Spiking neural networks with temporally delayed skip connections.

pub mod data;
pub mod engine;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod nas;
pub mod neuron;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/neurons.md")]
    mod neurons {}
    #[doc = include_str!("../../../book/src/skips.md")]
    mod skips {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/search.md")]
    mod search {}
    #[doc = include_str!("../../../book/src/energy.md")]
    mod energy {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
