//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Operations are recorded on a [`Tape`] as they execute. Calling
//! [`Tape::backward`] on a scalar replays the tape in reverse and returns the
//! gradient of every leaf created with [`Tape::param`].
//!
//! The spike nonlinearity ([`Tape::spike`]) emits a Heaviside step in the
//! forward pass and routes gradients through the arctangent surrogate
//! derivative ([`SurrogateConfig::derivative`]).
//!
//! ```
//! use tskip::engine::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::from_rows(&[&[1.0], &[2.0]])).unwrap();
//! let x = tape.constant(Tensor::from_rows(&[&[3.0, 4.0]])).unwrap();
//! let y = tape.matmul(x, w).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(tape.value(y).data(), &[11.0]);
//! assert_eq!(grads.get(w).unwrap().data(), &[3.0, 4.0]);
//! ```

mod bntt;
mod kernels;
mod surrogate;
mod tape;
mod tensor;

pub use bntt::{bntt_step, BnttMode, BnttStats};
pub use kernels::same_extent;
pub use surrogate::{heaviside, SpikeMode, SurrogateConfig};
pub use tape::{BnStats, Gradients, Tape, Var, BN_EPS};
pub use tensor::Tensor;
