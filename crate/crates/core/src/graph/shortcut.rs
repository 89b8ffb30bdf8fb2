use rand::seq::SliceRandom;

use crate::engine::{Tape, Var};
use crate::error::{Error, Result};

/// Fixed channel selection that resizes a skip payload to the destination's
/// channel count. Never trained.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShortcutMatrix {
    pub source_channels: usize,
    pub target_channels: usize,
    pub selection: Vec<usize>,
    pub seed: u64,
}

impl ShortcutMatrix {
    /// Equal sizes give the identity. Shrinking samples without replacement;
    /// growing uses every source channel once and fills the rest at random.
    pub fn new(source_channels: usize, target_channels: usize, seed: u64) -> Self {
        let mut rng = crate::seed::stream(seed, "shortcut", 0);
        let selection = if source_channels == target_channels {
            (0..source_channels).collect()
        } else if target_channels <= source_channels {
            let mut all: Vec<usize> = (0..source_channels).collect();
            all.shuffle(&mut rng);
            all.truncate(target_channels);
            all
        } else {
            use rand::Rng;
            let mut sel: Vec<usize> = (0..source_channels).collect();
            while sel.len() < target_channels {
                sel.push(rng.gen_range(0..source_channels));
            }
            sel.shuffle(&mut rng);
            sel
        };
        Self {
            source_channels,
            target_channels,
            selection,
            seed,
        }
    }

    pub fn from_selection(source_channels: usize, selection: Vec<usize>) -> Result<Self> {
        if let Some(bad) = selection.iter().find(|&&s| s >= source_channels) {
            return Err(Error::InvalidArgument(format!(
                "shortcut index {bad} out of range for {source_channels} channels"
            )));
        }
        Ok(Self {
            source_channels,
            target_channels: selection.len(),
            selection,
            seed: 0,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.source_channels == self.target_channels
            && self.selection.iter().enumerate().all(|(i, &s)| i == s)
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let c = tape.value(x).channels();
        if c != self.source_channels {
            return Err(Error::Shape(format!(
                "shortcut expects {} channels, got {c}",
                self.source_channels
            )));
        }
        if self.is_identity() {
            return Ok(x);
        }
        tape.select_channels(x, &self.selection)
    }
}
