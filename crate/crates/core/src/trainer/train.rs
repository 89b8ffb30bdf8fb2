use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::{classification_loss, LossKind};
use super::optim::{adam_step, clip_global_norm, AdamState};
use super::schedule::Scheduler;
use crate::data::Dataset;
use crate::engine::Tape;
use crate::error::{io_err, Error, Result};
use crate::graph::{Activation, ForwardTrace, Mode, Network};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub scheduler: Scheduler,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
    /// Global gradient-norm ceiling.
    #[serde(default = "ten")]
    pub clip_norm: f64,
    /// Stop once test accuracy reaches this fraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_accuracy: Option<f64>,
}

fn ten() -> f64 {
    10.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 50,
            lr_init: 1e-3,
            scheduler: Scheduler::cosine(5e-6),
            loss: LossKind::CrossEntropy,
            dropout: 0.0,
            seed: 0,
            clip_norm: 10.0,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init > 0.0) {
            return Err(Error::InvalidArgument("lr_init must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument("dropout must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub spike_rate: f64,
    pub lr: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "epoch,split,loss,accuracy,spike_rate,lr";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.split, self.loss, self.accuracy, self.spike_rate, self.lr
        )
    }
}

/// Append-only metrics CSV.
pub struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(f);
        writeln!(out, "{}", MetricsRow::HEADER).map_err(io_err(path))?;
        Ok(Self { out })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.csv_line())
            .and_then(|_| self.out.flush())
            .map_err(io_err("metrics log"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    /// Fraction of spiking-layer neuron-steps that fired.
    pub spike_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<MetricsRow>,
    pub epochs_run: usize,
    pub final_test: Option<EvalResult>,
}

/// `(spikes, neuron-steps)` over the hidden, non-readout layers.
fn activity(net: &Network, trace: &ForwardTrace) -> (f64, f64) {
    let steps = trace.outputs.len() as f64;
    let mut spikes = 0.0;
    let mut slots = 0.0;
    for (i, l) in net.spec().layers.iter().enumerate() {
        if l.activation == Activation::Integrator {
            continue;
        }
        spikes += trace.spike_counts[i + 1];
        slots += (net.shapes().node_size(i + 1) * trace.batch) as f64 * steps;
    }
    (spikes, slots)
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(m) => Error::Divergence(format!("epoch {epoch}: {m}")),
        other => other,
    }
}

struct BatchOut {
    loss: f64,
    correct: usize,
    spikes: f64,
    slots: f64,
}

fn run_batch(
    net: &mut Network,
    data: &Dataset,
    idx: &[usize],
    kind: LossKind,
    mode: Mode,
) -> Result<(Tape, ForwardTrace, crate::engine::Var, BatchOut)> {
    let (x, y) = data.batch(idx)?;
    let mut tape = Tape::new();
    let trace = net.forward(&mut tape, &x, mode)?;
    let readout = trace.readout_mean(&mut tape)?;
    let loss = classification_loss(&mut tape, readout, &y, kind)?;
    let preds = tape.value(readout).argmax_rows();
    let correct = preds.iter().zip(&y).filter(|(p, t)| p == t).count();
    let (spikes, slots) = activity(net, &trace);
    let out = BatchOut {
        loss: tape.value(loss).item(),
        correct,
        spikes,
        slots,
    };
    Ok((tape, trace, loss, out))
}

/// Loss, accuracy and spike rate with running normalization statistics.
pub fn evaluate(net: &mut Network, data: &Dataset, kind: LossKind, batch_size: usize) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let (mut loss, mut correct, mut spikes, mut slots) = (0.0, 0, 0.0, 0.0);
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(batch_size.max(1)) {
        let (_, _, _, b) = run_batch(net, data, idx, kind, Mode::Eval)?;
        loss += b.loss * idx.len() as f64;
        correct += b.correct;
        spikes += b.spikes;
        slots += b.slots;
    }
    Ok(EvalResult {
        loss: loss / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        spike_rate: if slots > 0.0 { spikes / slots } else { 0.0 },
    })
}

/// Minibatch BPTT with Adam. `on_epoch` sees each epoch's metrics rows as
/// they are produced.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&[MetricsRow]) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    net.dropout = cfg.dropout;
    let mut adam = AdamState::new(net.params());
    let mut rng = seed::stream(cfg.seed, "batches", 0);
    let per_epoch = train_set.len().div_ceil(cfg.batch_size) as u64;
    let total = per_epoch * cfg.epochs as u64;
    let mut iteration = 0u64;
    let mut rows = Vec::new();
    let mut final_test = None;
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        let (mut loss_sum, mut correct, mut spikes, mut slots) = (0.0, 0, 0.0, 0.0);
        let mut lr = cfg.lr_init;
        for idx in train_set.batches(cfg.batch_size, &mut rng) {
            if idx.len() < 2 {
                // batch statistics need two samples
                continue;
            }
            lr = cfg.scheduler.lr_at(cfg.lr_init, epoch, iteration, total);
            let (tape, trace, loss, b) =
                run_batch(net, train_set, &idx, cfg.loss, Mode::Train).map_err(|e| diverged(epoch, e))?;
            if !b.loss.is_finite() {
                return Err(Error::Divergence(format!("epoch {epoch}: loss is {}", b.loss)));
            }
            let g = tape.backward(loss).map_err(|e| diverged(epoch, e))?;
            let mut grads: Vec<_> = trace.params.iter().map(|&v| g.get(v).cloned()).collect();
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam_step(net.params_mut(), &grads, &mut adam, lr)?;
            net.clamp_neurons();
            loss_sum += b.loss * idx.len() as f64;
            correct += b.correct;
            spikes += b.spikes;
            slots += b.slots;
            iteration += 1;
        }
        let n = train_set.len() as f64;
        let mut epoch_rows = vec![MetricsRow {
            epoch,
            split: "train".into(),
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
            spike_rate: if slots > 0.0 { spikes / slots } else { 0.0 },
            lr,
        }];
        epochs_run = epoch + 1;
        let mut reached = false;
        if let Some(test) = test_set {
            let r = evaluate(net, test, cfg.loss, cfg.batch_size)?;
            epoch_rows.push(MetricsRow {
                epoch,
                split: "test".into(),
                loss: r.loss,
                accuracy: r.accuracy,
                spike_rate: r.spike_rate,
                lr,
            });
            reached = cfg.target_accuracy.is_some_and(|t| r.accuracy >= t);
            final_test = Some(r);
        }
        on_epoch(&epoch_rows)?;
        rows.extend(epoch_rows);
        if reached {
            break;
        }
    }
    Ok(TrainReport {
        rows,
        epochs_run,
        final_test,
    })
}
