//! Layer graphs with temporal skip connections, and their unrolled execution.
//!
//! A TSkip edge carries the output of node `origin` into the input of layer
//! `destination` after `delta_t` steps. Node 0 is the network input. Forward
//! edges (`origin < destination`) may have zero delay, which is an ordinary
//! skip; backward edges need at least one step.
//!
//! ```
//! use tskip::graph::{ArchSpec, Merge, TSkipEdge};
//!
//! let spec = ArchSpec::from_architecture("700-124-288-144-20", 99)
//!     .unwrap()
//!     .with_tskip(TSkipEdge::new(3, 1, 24, Merge::Concat));
//! assert!(spec.validate().is_ok());
//! ```

mod buffer;
mod network;
mod shortcut;
mod spec;

pub use buffer::DelayBuffer;
pub use network::{ForwardTrace, Mode, Network, Param, ParamStore, RunOutput};
pub use shortcut::ShortcutMatrix;
pub use spec::{
    parse_architecture, Activation, ArchSpec, InputSpec, LayerKind, LayerSpec, Merge, Shapes,
    TSkipEdge, Violation,
};
