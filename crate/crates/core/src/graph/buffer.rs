use crate::error::{Error, Result};

/// Ring of the last `capacity` values of one node, indexed by timestep.
/// Reads before the start of the sequence return the zero value.
#[derive(Clone, Debug)]
pub struct DelayBuffer<T> {
    slots: Vec<Option<(usize, T)>>,
    zero: T,
}

impl<T: Clone> DelayBuffer<T> {
    /// A buffer serving delays up to `max_delay`.
    pub fn new(max_delay: usize, zero: T) -> Self {
        Self {
            slots: vec![None; max_delay + 1],
            zero,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn write(&mut self, step: usize, value: T) {
        let cap = self.slots.len();
        self.slots[step % cap] = Some((step, value));
    }

    /// The value written at `now - delta`.
    pub fn read(&self, now: usize, delta: usize) -> Result<T> {
        if delta > now {
            return Ok(self.zero.clone());
        }
        if delta >= self.slots.len() {
            return Err(Error::InvalidArgument(format!(
                "delay {delta} exceeds buffer capacity {}",
                self.slots.len()
            )));
        }
        let want = now - delta;
        match &self.slots[want % self.slots.len()] {
            Some((step, v)) if *step == want => Ok(v.clone()),
            _ => Err(Error::InvalidArgument(format!(
                "step {want} not available at step {now}"
            ))),
        }
    }
}
