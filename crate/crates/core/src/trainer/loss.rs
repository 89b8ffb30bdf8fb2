use serde::{Deserialize, Serialize};

use crate::engine::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared error against one-hot targets.
    Mse,
    #[default]
    CrossEntropy,
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {l} outside {classes} classes"
            )));
        }
        t.data_mut()[i * classes + l] = 1.0;
    }
    Ok(t)
}

/// Classification loss of `readout[b × classes]`.
pub fn classification_loss(
    tape: &mut Tape,
    readout: Var,
    labels: &[usize],
    kind: LossKind,
) -> Result<Var> {
    match kind {
        LossKind::Mse => {
            let classes = tape.value(readout).shape().last().copied().unwrap_or(0);
            let target = one_hot(labels, classes)?;
            tape.mse(readout, &target)
        }
        LossKind::CrossEntropy => tape.cross_entropy(readout, labels),
    }
}
