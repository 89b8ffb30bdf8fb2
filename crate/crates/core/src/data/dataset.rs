use std::fs::File;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::binning::{bin_audio, bin_events, BinningConfig};
use super::events::{AudioSpikeStream, EventStream};
use crate::engine::Tensor;
use crate::error::{io_err, Error, Result};

/// Labeled samples, each a `[T × …]` spike tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(first) = inputs.first() {
            if let Some(bad) = inputs.iter().find(|x| x.shape() != first.shape()) {
                return Err(Error::Shape(format!(
                    "samples disagree in shape: {:?} vs {:?}",
                    first.shape(),
                    bad.shape()
                )));
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {l} outside {classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// `[T, …]` of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        self.inputs.first().map_or(&[], |x| x.shape())
    }

    /// Stacks the chosen samples into `[T × b × …]`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let shape = self.sample_shape();
        if shape.is_empty() || indices.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let steps = shape[0];
        let inner: usize = shape[1..].iter().product();
        let b = indices.len();
        let mut data = vec![0.0; steps * b * inner];
        for (j, &i) in indices.iter().enumerate() {
            let src = self.inputs[i].data();
            for t in 0..steps {
                let dst = (t * b + j) * inner;
                data[dst..dst + inner].copy_from_slice(&src[t * inner..(t + 1) * inner]);
            }
        }
        let mut out_shape = vec![steps, b];
        out_shape.extend_from_slice(&shape[1..]);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::new(out_shape, data)?, labels))
    }

    /// Minibatch index lists covering a seeded permutation.
    pub fn batches(&self, batch_size: usize, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Fraction of samples per class.
    pub fn label_frequencies(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.classes];
        for &l in &self.labels {
            f[l] += 1.0;
        }
        let n = self.len().max(1) as f64;
        f.iter().map(|c| c / n).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    /// `x,t_us` rows.
    Audio,
    /// `x,y,t_us,p` rows.
    Visual,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

/// Lists event files and labels for a train and a test split. Relative
/// paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: StreamKind,
    pub binning: BinningConfig,
    /// Audio units, or `[width, height]` for camera data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor: Option<[usize; 2]>,
    pub classes: usize,
    pub train: Vec<ManifestEntry>,
    #[serde(default)]
    pub test: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }

    fn load_one(&self, root: &Path, entry: &ManifestEntry) -> Result<Tensor> {
        let path = root.join(&entry.path);
        let file = File::open(&path).map_err(io_err(&path))?;
        let located = |e: Error| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        };
        match self.kind {
            StreamKind::Audio => {
                let s = AudioSpikeStream::parse(file, self.units).map_err(located)?;
                bin_audio(&s, &self.binning)
            }
            StreamKind::Visual => {
                let sensor = self.sensor.map(|[w, h]| (w, h));
                let s = EventStream::parse(file, sensor).map_err(located)?;
                bin_events(&s, &self.binning)
            }
        }
    }

    fn load_split(&self, root: &Path, entries: &[ManifestEntry]) -> Result<Dataset> {
        let inputs = entries
            .iter()
            .map(|e| self.load_one(root, e))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(inputs, entries.iter().map(|e| e.label).collect(), self.classes)
    }

    /// Reads and bins every listed file; returns `(train, test)`.
    pub fn load(&self, root: &Path) -> Result<(Dataset, Dataset)> {
        Ok((
            self.load_split(root, &self.train)?,
            self.load_split(root, &self.test)?,
        ))
    }
}

/// Reads a manifest file and loads both splits.
pub fn load_manifest(path: &Path) -> Result<(Dataset, Dataset)> {
    let m = Manifest::read(path)?;
    m.load(path.parent().unwrap_or(Path::new(".")))
}
