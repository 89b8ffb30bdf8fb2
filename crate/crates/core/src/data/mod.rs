//! Event ingestion, temporal binning and synthetic recall tasks.

mod binning;
mod dataset;
mod events;
mod synth;

pub use binning::{bin_audio, bin_events, BinningConfig};
pub use dataset::{load_manifest, Dataset, Manifest, ManifestEntry, StreamKind};
pub use events::{AudioSpike, AudioSpikeStream, Event, EventStream};
pub use synth::{
    export_audio, gen_delayed_recall, inject_noise, last_step_guess, recall_oracle, RecallConfig,
    STEP_US,
};
