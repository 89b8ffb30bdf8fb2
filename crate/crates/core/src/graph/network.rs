use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::buffer::DelayBuffer;
use super::shortcut::ShortcutMatrix;
use super::spec::{Activation, ArchSpec, LayerKind, Merge, Shapes};
use crate::engine::{bntt_step, BnttMode, BnttStats, SpikeMode, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::neuron::{clamp_leak, clamp_threshold, integrate_step, lif_step, LifScalars, LifState};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Named tensors owned by a network, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
}

impl ParamStore {
    fn push(&mut self, name: String, value: Tensor, trainable: bool) -> usize {
        self.entries.push(Param {
            name,
            value,
            trainable,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.entries[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.entries[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].value)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.entries[i].value)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerParams {
    weight: usize,
    bias: usize,
    bntt: Option<(usize, usize)>,
    leak: Option<usize>,
    threshold: Option<usize>,
}

/// Execution mode of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running estimates updated, dropout active.
    Train,
    /// Running statistics, no dropout.
    Eval,
    /// Batch statistics without touching running estimates or dropout.
    Probe,
}

impl From<Mode> for BnttMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Train => BnttMode::Train,
            Mode::Eval => BnttMode::Eval,
            Mode::Probe => BnttMode::Probe,
        }
    }
}

/// Handles produced by one unrolled forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// One handle per entry of the network's [`ParamStore`].
    pub params: Vec<Var>,
    /// Output of the last layer at each step.
    pub outputs: Vec<Var>,
    /// `nodes[t][n]`: node `n`'s output at step `t`; node 0 is the input.
    pub nodes: Vec<Vec<Var>>,
    /// Nonzero outputs per node summed over steps and batch. Integrator
    /// readouts emit no spikes and count zero.
    pub spike_counts: Vec<f64>,
    pub batch: usize,
}

impl ForwardTrace {
    /// Last-layer output averaged over all steps.
    pub fn readout_mean(&self, tape: &mut Tape) -> Result<Var> {
        let total = tape.add_n(&self.outputs)?;
        tape.affine(total, 1.0 / self.outputs.len() as f64, 0.0)
    }
}

/// Values of a forward pass, detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub outputs: Vec<Tensor>,
    pub spike_counts: Vec<f64>,
}

/// A built network: parameters, shortcuts and BNTT statistics for one
/// [`ArchSpec`].
#[derive(Clone, Debug)]
pub struct Network {
    spec: ArchSpec,
    shapes: Shapes,
    params: ParamStore,
    layers: Vec<LayerParams>,
    alphas: Vec<Option<usize>>,
    shortcuts: Vec<ShortcutMatrix>,
    bntt: Vec<Option<BnttStats>>,
    seed: u64,
    /// Inverted dropout on the inputs of layers 2 and above, training only.
    pub dropout: f64,
    pub spike_mode: SpikeMode,
    rng: ChaCha8Rng,
}

impl Network {
    /// Validates `spec` and initializes weights from `seed`.
    pub fn new(spec: ArchSpec, seed: u64) -> Result<Self> {
        spec.check()?;
        let shapes = spec.infer_shapes().map_err(Error::Validation)?;
        let mut rng = seed::stream(seed, "init", 0);
        let mut params = ParamStore::default();
        let mut layers = Vec::with_capacity(spec.depth());
        let mut bntt = Vec::with_capacity(spec.depth());
        let t = spec.timesteps;
        for (i, l) in spec.layers.iter().enumerate() {
            let layer = i + 1;
            let fan_in = shapes.fan_in(&spec, layer);
            let out = l.out_channels();
            let wshape = match l.kind {
                LayerKind::Dense { .. } => vec![fan_in, out],
                LayerKind::Conv2d { kernel, .. } => {
                    vec![out, shapes.inputs[i][0], kernel, kernel]
                }
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = wshape.iter().product();
            let w = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            let weight = params.push(format!("layer{layer}.weight"), Tensor::new(wshape, w)?, true);
            let bias = params.push(format!("layer{layer}.bias"), Tensor::zeros(&[out]), true);
            let norm = if spec.layer_has_bntt(layer) {
                bntt.push(Some(BnttStats::new(t, out)));
                Some((
                    params.push(format!("layer{layer}.bntt_gamma"), Tensor::ones(&[t, out]), true),
                    params.push(format!("layer{layer}.bntt_beta"), Tensor::zeros(&[t, out]), true),
                ))
            } else {
                bntt.push(None);
                None
            };
            let learn = spec.neuron.learnable;
            let (leak, threshold) = match l.activation {
                Activation::Lif => (
                    Some(params.push(
                        format!("layer{layer}.leak"),
                        Tensor::scalar(spec.neuron.leak),
                        learn,
                    )),
                    Some(params.push(
                        format!("layer{layer}.threshold"),
                        Tensor::scalar(spec.neuron.threshold),
                        learn,
                    )),
                ),
                Activation::Integrator => (
                    Some(params.push(
                        format!("layer{layer}.leak"),
                        Tensor::scalar(spec.neuron.leak),
                        learn,
                    )),
                    None,
                ),
                Activation::Relu => (None, None),
            };
            layers.push(LayerParams {
                weight,
                bias,
                bntt: norm,
                leak,
                threshold,
            });
        }
        let mut alphas = Vec::with_capacity(spec.tskips.len());
        let mut shortcuts = Vec::with_capacity(spec.tskips.len());
        for (i, e) in spec.tskips.iter().enumerate() {
            alphas.push(e.alpha_enabled.then(|| {
                params.push(format!("tskip{i}.alpha_raw"), Tensor::scalar(e.alpha_raw), true)
            }));
            shortcuts.push(ShortcutMatrix::new(
                shapes.nodes[e.origin][0],
                shapes.nodes[e.destination - 1][0],
                seed::derive_seed(seed, "shortcut", i as u64),
            ));
        }
        Ok(Self {
            spec,
            shapes,
            params,
            layers,
            alphas,
            shortcuts,
            bntt,
            seed,
            dropout: 0.0,
            spike_mode: SpikeMode::Hard,
            rng: seed::stream(seed, "dropout", 0),
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &Shapes {
        &self.shapes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn shortcuts(&self) -> &[ShortcutMatrix] {
        &self.shortcuts
    }

    /// Running statistics per layer; `None` for layers without BNTT.
    pub fn bntt_stats(&self) -> &[Option<BnttStats>] {
        &self.bntt
    }

    pub fn bntt_stats_mut(&mut self) -> &mut [Option<BnttStats>] {
        &mut self.bntt
    }

    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Pulls every leak and threshold back into its valid range.
    pub fn clamp_neurons(&mut self) {
        for l in &self.layers {
            if let Some(i) = l.leak {
                let v = &mut self.params.get_mut(i).value.data_mut()[0];
                *v = clamp_leak(*v);
            }
            if let Some(i) = l.threshold {
                let v = &mut self.params.get_mut(i).value.data_mut()[0];
                *v = clamp_threshold(*v);
            }
        }
    }

    /// Unrolls the network over `input[T × b × …]` on `tape`.
    pub fn forward(&mut self, tape: &mut Tape, input: &Tensor, mode: Mode) -> Result<ForwardTrace> {
        let steps = self.spec.timesteps;
        let shape = input.shape();
        if shape.len() < 3 || shape[0] != steps || shape[2..] != self.shapes.nodes[0][..] {
            return Err(Error::Shape(format!(
                "input {:?} does not match [T={steps}, batch, {:?}]",
                shape, self.shapes.nodes[0]
            )));
        }
        let batch = shape[1];
        let depth = self.spec.depth();
        let pv = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), p.trainable))
            .collect::<Result<Vec<_>>>()?;

        let mut max_delay: Vec<Option<usize>> = vec![None; depth + 1];
        for e in &self.spec.tskips {
            let m = &mut max_delay[e.origin];
            *m = Some(m.map_or(e.delta_t, |d| d.max(e.delta_t)));
        }
        let mut buffers = Vec::with_capacity(depth + 1);
        for (n, d) in max_delay.iter().enumerate() {
            buffers.push(match d {
                Some(d) => {
                    let mut s = vec![batch];
                    s.extend_from_slice(&self.shapes.nodes[n]);
                    Some(DelayBuffer::new(*d, tape.constant(Tensor::zeros(&s))?))
                }
                None => None,
            });
        }

        enum State {
            Lif(LifState),
            Potential(Var),
            Stateless,
        }
        let mut states = Vec::with_capacity(depth);
        for (i, l) in self.spec.layers.iter().enumerate() {
            let mut s = vec![batch];
            s.extend_from_slice(&self.shapes.nodes[i + 1]);
            states.push(match l.activation {
                Activation::Lif => State::Lif(LifState::zeros(tape, &s)?),
                Activation::Integrator => State::Potential(tape.constant(Tensor::zeros(&s))?),
                Activation::Relu => State::Stateless,
            });
        }

        let mut trace = ForwardTrace {
            params: pv.clone(),
            outputs: Vec::with_capacity(steps),
            nodes: Vec::with_capacity(steps),
            spike_counts: vec![0.0; depth + 1],
            batch,
        };
        for t in 0..steps {
            let frame = input.frame(t);
            trace.spike_counts[0] += nonzero(&frame);
            let x0 = tape.constant(frame)?;
            let mut nodes = vec![x0];
            if let Some(b) = &mut buffers[0] {
                b.write(t, x0);
            }
            for l in 1..=depth {
                let spec_l = self.spec.layers[l - 1];
                let lp = self.layers[l - 1];
                let mut x = self.merge(tape, l, t, nodes[l - 1], &nodes, &buffers, &pv)?;
                if mode == Mode::Train && self.dropout > 0.0 && l >= 2 {
                    x = self.drop(tape, x)?;
                }
                let a = match spec_l.kind {
                    LayerKind::Dense { .. } => {
                        if tape.value(x).ndim() > 2 {
                            let n = tape.value(x).numel() / batch;
                            x = tape.reshape(x, &[batch, n])?;
                        }
                        tape.matmul(x, pv[lp.weight])?
                    }
                    LayerKind::Conv2d { stride, .. } => tape.conv2d(x, pv[lp.weight], stride)?,
                };
                let mut a = tape.add_bias(a, pv[lp.bias])?;
                if let Some((g, b)) = lp.bntt {
                    let stats = self.bntt[l - 1].as_mut().expect("bntt stats");
                    a = bntt_step(tape, a, t, pv[g], pv[b], stats, mode.into())?;
                }
                let out = match &mut states[l - 1] {
                    State::Lif(state) => {
                        let scalars = LifScalars {
                            leak: pv[lp.leak.expect("leak")],
                            threshold: pv[lp.threshold.expect("threshold")],
                        };
                        let (o, next) = lif_step(
                            tape,
                            state,
                            a,
                            &scalars,
                            self.spec.neuron.reset,
                            self.spec.surrogate,
                            self.spike_mode,
                        )?;
                        *state = next;
                        trace.spike_counts[l] += nonzero(tape.value(o));
                        o
                    }
                    State::Potential(u) => {
                        *u = integrate_step(tape, *u, a, pv[lp.leak.expect("leak")])?;
                        *u
                    }
                    State::Stateless => {
                        let o = tape.relu(a)?;
                        trace.spike_counts[l] += nonzero(tape.value(o));
                        o
                    }
                };
                if let Some(b) = &mut buffers[l] {
                    b.write(t, out);
                }
                nodes.push(out);
            }
            trace.outputs.push(nodes[depth]);
            trace.nodes.push(nodes);
        }
        Ok(trace)
    }

    /// Forward pass on a private tape, returning plain values.
    pub fn run(&mut self, input: &Tensor, mode: Mode) -> Result<RunOutput> {
        let mut tape = Tape::new();
        let trace = self.forward(&mut tape, input, mode)?;
        Ok(RunOutput {
            outputs: trace.outputs.iter().map(|&v| tape.value(v).clone()).collect(),
            spike_counts: trace.spike_counts,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn merge(
        &self,
        tape: &mut Tape,
        layer: usize,
        t: usize,
        base: Var,
        nodes: &[Var],
        buffers: &[Option<DelayBuffer<Var>>],
        pv: &[Var],
    ) -> Result<Var> {
        let mut acc = base;
        for pass in [Merge::Add, Merge::Concat] {
            for (i, e) in self.spec.tskips.iter().enumerate() {
                if e.destination != layer || e.merge != pass {
                    continue;
                }
                let named = |err: Error| Error::Shape(format!("tskip {i} ({e}): {err}"));
                let buffer = buffers[e.origin].as_ref().expect("buffer for skip origin");
                let mut payload = buffer.read(t, e.delta_t)?;
                if let Some(a) = self.alphas[i] {
                    let current = nodes[e.origin];
                    let w = tape.sigmoid(pv[a])?;
                    let rest = tape.affine(w, -1.0, 1.0)?;
                    let now = tape.scale_by(current, w)?;
                    let past = tape.scale_by(payload, rest)?;
                    payload = tape.add(now, past)?;
                }
                let payload = self.shortcuts[i].apply(tape, payload).map_err(named)?;
                acc = match e.merge {
                    Merge::Add => tape.add(acc, payload),
                    Merge::Concat => tape.concat(acc, payload),
                }
                .map_err(named)?;
            }
        }
        Ok(acc)
    }

    fn drop(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let p = self.dropout;
        let keep = 1.0 / (1.0 - p);
        let shape = tape.value(x).shape().to_vec();
        let n = tape.value(x).numel();
        let mask = (0..n)
            .map(|_| if self.rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mask = tape.constant(Tensor::new(shape, mask)?)?;
        tape.mul(x, mask)
    }
}

fn nonzero(t: &Tensor) -> f64 {
    t.data().iter().filter(|&&v| v != 0.0).count() as f64
}
