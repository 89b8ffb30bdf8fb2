use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::binning::BinningConfig;
use super::dataset::{Dataset, Manifest, ManifestEntry, StreamKind};
use super::events::{AudioSpike, AudioSpikeStream};
use crate::engine::Tensor;
use crate::error::{io_err, Error, Result};
use crate::seed;

/// Delayed recall: a symbol shown at step `t0` must be reported when a
/// marker appears at `t0 + delay`.
///
/// Inputs have `classes + 1` channels: one per symbol and a marker channel.
/// With `noise > 0` every class appears `max(1, round(noise·T/classes))`
/// times at distinct steps, so symbol counts carry no label information and
/// only the symbol exactly `delay` steps before the marker does.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallConfig {
    pub delay: usize,
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub samples: usize,
    #[serde(default = "ten")]
    pub classes: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn ten() -> usize {
    10
}

impl RecallConfig {
    pub fn copies_per_class(&self) -> usize {
        if self.noise <= 0.0 {
            0
        } else {
            ((self.noise * self.timesteps as f64 / self.classes as f64).round() as usize).max(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delay >= self.timesteps {
            return Err(Error::InvalidArgument(format!(
                "delay {} must be shorter than the sequence ({})",
                self.delay, self.timesteps
            )));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::InvalidArgument(format!(
                "noise must lie in [0, 1], got {}",
                self.noise
            )));
        }
        if self.copies_per_class() * self.classes > self.timesteps {
            return Err(Error::InvalidArgument(format!(
                "{} symbols per class do not fit in {} steps",
                self.copies_per_class(),
                self.timesteps
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.classes + 1
    }
}

pub fn gen_delayed_recall(cfg: &RecallConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (t_len, c, d) = (cfg.timesteps, cfg.classes, cfg.delay);
    let ch = cfg.channels();
    let k = cfg.copies_per_class();
    let mut inputs = Vec::with_capacity(cfg.samples);
    let mut labels = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let mut rng = seed::stream(cfg.seed, "recall", i as u64);
        let label = i % c;
        let t0 = rng.gen_range(0..t_len - d);
        let mut x = vec![0.0; t_len * ch];
        x[t0 * ch + label] = 1.0;
        if k > 0 {
            let mut steps: Vec<usize> = (0..t_len).filter(|&s| s != t0).collect();
            steps.shuffle(&mut rng);
            let mut symbols: Vec<usize> = (0..c)
                .flat_map(|s| std::iter::repeat(s).take(if s == label { k - 1 } else { k }))
                .collect();
            symbols.shuffle(&mut rng);
            for (&s, &sym) in steps.iter().zip(&symbols) {
                x[s * ch + sym] = 1.0;
            }
        }
        x[(t0 + d) * ch + c] = 1.0;
        inputs.push(Tensor::new(vec![t_len, ch], x)?);
        labels.push(label);
    }
    Dataset::new(inputs, labels, c)
}

/// Reads the symbol `delay` steps before the marker.
pub fn recall_oracle(sample: &Tensor, delay: usize, classes: usize) -> Option<usize> {
    let ch = classes + 1;
    let steps = sample.shape()[0];
    let d = sample.data();
    let marker = (0..steps).find(|&t| d[t * ch + classes] != 0.0)?;
    let t0 = marker.checked_sub(delay)?;
    (0..classes).find(|&s| d[t0 * ch + s] != 0.0)
}

/// Guesses from the final step alone: the symbol shown there, or class 0.
pub fn last_step_guess(sample: &Tensor, classes: usize) -> usize {
    let ch = classes + 1;
    let last = sample.shape()[0] - 1;
    let d = sample.data();
    (0..classes).find(|&s| d[last * ch + s] != 0.0).unwrap_or(0)
}

/// Turns each zero cell into a spike with probability `rate`.
pub fn inject_noise(x: &Tensor, rate: f64, seed: u64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "noise rate must lie in [0, 1], got {rate}"
        )));
    }
    let mut rng = seed::stream(seed, "noise", 0);
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v == 0.0 && rng.gen::<f64>() < rate {
            *v = 1.0;
        }
    }
    Ok(out)
}

/// Microseconds per step used by [`export_audio`].
pub const STEP_US: u64 = 1000;

/// Writes every sample as an `x,t_us` CSV under `dir` and returns a
/// manifest that bins them back to the same tensors.
pub fn export_audio(dir: &Path, train: &Dataset, test: &Dataset) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let shape = train.sample_shape();
    if shape.len() != 2 {
        return Err(Error::Shape(format!(
            "audio export needs [T × units] samples, got {shape:?}"
        )));
    }
    let (steps, units) = (shape[0], shape[1]);
    let write = |split: &str, data: &Dataset| -> Result<Vec<ManifestEntry>> {
        let mut entries = Vec::with_capacity(data.len());
        for (i, (x, &label)) in data.inputs.iter().zip(&data.labels).enumerate() {
            let spikes = x
                .data()
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(j, _)| AudioSpike {
                    unit: j % units,
                    t_us: (j / units) as u64 * STEP_US + STEP_US / 2,
                })
                .collect();
            let name = format!("{split}_{i:05}.csv");
            let path = dir.join(&name);
            let stream = AudioSpikeStream {
                spikes,
                num_units: units,
            };
            std::fs::write(&path, stream.to_csv()).map_err(io_err(&path))?;
            entries.push(ManifestEntry {
                path: name.into(),
                label,
            });
        }
        Ok(entries)
    };
    let train_entries = write("train", train)?;
    let test_entries = write("test", test)?;
    Ok(Manifest {
        kind: StreamKind::Audio,
        binning: BinningConfig {
            timesteps: steps,
            window_us: steps as u64 * STEP_US,
            polarity_channels: false,
            count: false,
        },
        units: Some(units),
        sensor: None,
        classes: train.classes,
        train: train_entries,
        test: test_entries,
    })
}
