use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{same_extent, SurrogateConfig};
use crate::error::{Error, Result};
use crate::neuron::LifParams;

/// Per-sample shape of the network input: `channels` alone for vector data,
/// plus `height` and `width` for event frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

impl InputSpec {
    pub fn vector(channels: usize) -> Self {
        Self {
            channels,
            height: None,
            width: None,
        }
    }

    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height: Some(height),
            width: Some(width),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match (self.height, self.width) {
            (Some(h), Some(w)) => vec![self.channels, h, w],
            _ => vec![self.channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Dense {
        units: usize,
    },
    Conv2d {
        kernel: usize,
        channels: usize,
        stride: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Spiking leaky integrate-and-fire.
    #[default]
    Lif,
    /// Conventional rectifier, for hybrid networks.
    Relu,
    /// Non-spiking leaky integrator. Only valid as the final layer.
    Integrator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default)]
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(units: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense { units },
            activation,
        }
    }

    pub fn conv(kernel: usize, channels: usize, stride: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Conv2d {
                kernel,
                channels,
                stride,
            },
            activation,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            LayerKind::Dense { units } => units,
            LayerKind::Conv2d { channels, .. } => channels,
        }
    }
}

/// Parses a single layer token: `124` (dense), `124*2` (dense; the suffix
/// marks a concatenating skip and is informational) or `3c80s1` (3×3 kernel,
/// 80 channels, stride 1).
impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tok = s.trim();
        let bad = || Error::InvalidArgument(format!("unrecognized layer token '{tok}'"));
        let core = tok.split('*').next().unwrap_or(tok);
        if let Some((k, rest)) = core.split_once('c') {
            let (c, st) = rest.split_once('s').ok_or_else(bad)?;
            let parse = |v: &str| v.parse::<usize>().map_err(|_| bad());
            return Ok(Self::conv(parse(k)?, parse(c)?, parse(st)?, Activation::Lif));
        }
        let units = core.parse::<usize>().map_err(|_| bad())?;
        Ok(Self::dense(units, Activation::Lif))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Merge {
    #[default]
    Concat,
    Add,
}

/// A skip connection carrying the origin's output `delta_t` steps late.
/// Node 0 is the network input; layers are numbered from 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TSkipEdge {
    pub origin: usize,
    pub destination: usize,
    pub delta_t: usize,
    #[serde(default)]
    pub merge: Merge,
    #[serde(default)]
    pub alpha_enabled: bool,
    /// Initial pre-sigmoid mixing weight; 0 gives α = 0.5.
    #[serde(default)]
    pub alpha_raw: f64,
}

impl TSkipEdge {
    pub fn new(origin: usize, destination: usize, delta_t: usize, merge: Merge) -> Self {
        Self {
            origin,
            destination,
            delta_t,
            merge,
            alpha_enabled: false,
            alpha_raw: 0.0,
        }
    }

    pub fn is_backward(&self) -> bool {
        self.origin > self.destination
    }
}

impl fmt::Display for TSkipEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}→{} Δt={} {:?}{}",
            self.origin,
            self.destination,
            self.delta_t,
            self.merge,
            if self.alpha_enabled { " α" } else { "" }
        )
    }
}

/// Layer graph with temporal skips, unrolled over `timesteps` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArchSpec")]
pub struct ArchSpec {
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub tskips: Vec<TSkipEdge>,
    #[serde(default)]
    pub neuron: LifParams,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    /// Batch normalization through time on hidden layers.
    #[serde(default = "yes")]
    pub bntt: bool,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LayerEntry {
    Short(String),
    Full(LayerSpec),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArchSpec {
    #[serde(rename = "T")]
    timesteps: usize,
    #[serde(default)]
    input: Option<InputSpec>,
    #[serde(default)]
    layers: Option<Vec<LayerEntry>>,
    #[serde(default)]
    architecture: Option<String>,
    #[serde(default)]
    tskips: Vec<TSkipEdge>,
    #[serde(default)]
    neuron: LifParams,
    #[serde(default)]
    surrogate: SurrogateConfig,
    #[serde(default = "yes")]
    bntt: bool,
}

impl TryFrom<RawArchSpec> for ArchSpec {
    type Error = Error;

    fn try_from(raw: RawArchSpec) -> Result<Self> {
        let (input, layers) = match (raw.architecture, raw.input, raw.layers) {
            (Some(arch), None, None) => parse_architecture(&arch)?,
            (None, Some(input), Some(entries)) => {
                let n = entries.len();
                let layers = entries
                    .into_iter()
                    .enumerate()
                    .map(|(i, e)| match e {
                        LayerEntry::Full(l) => Ok(l),
                        LayerEntry::Short(s) => {
                            let mut l: LayerSpec = s.parse()?;
                            if i + 1 == n {
                                l.activation = Activation::Integrator;
                            }
                            Ok(l)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                (input, layers)
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "give either `architecture` or both `input` and `layers`".into(),
                ))
            }
        };
        Ok(ArchSpec {
            timesteps: raw.timesteps,
            input,
            layers,
            tskips: raw.tskips,
            neuron: raw.neuron,
            surrogate: raw.surrogate,
            bntt: raw.bntt,
        })
    }
}

/// Parses `700-124-288-144-20` or `2x64x64-3c80s1-1c32s11-11`: the first
/// token is the input, hidden layers are spiking and the last layer is a
/// non-spiking readout.
pub fn parse_architecture(s: &str) -> Result<(InputSpec, Vec<LayerSpec>)> {
    let mut tokens = s.split('-').map(str::trim).filter(|t| !t.is_empty());
    let first = tokens
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty architecture string".into()))?;
    let dims = first
        .split('*')
        .next()
        .unwrap_or(first)
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad input token '{first}'")))?;
    let input = match dims.as_slice() {
        [c] => InputSpec::vector(*c),
        [c, h, w] => InputSpec::image(*c, *h, *w),
        _ => return Err(Error::InvalidArgument(format!("bad input token '{first}'"))),
    };
    let mut layers = tokens.map(LayerSpec::from_str).collect::<Result<Vec<_>>>()?;
    if let Some(last) = layers.last_mut() {
        last.activation = Activation::Integrator;
    }
    Ok((input, layers))
}

/// A broken [`ArchSpec`] invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    NoLayers,
    ZeroTimesteps,
    BadLayer { layer: usize, reason: String },
    IntegratorNotLast { layer: usize },
    BadNeuron(String),
    EdgeOutOfRange { edge: usize, depth: usize },
    IntoInput { edge: usize },
    SelfLoop { edge: usize },
    SameStepCycle { edge: usize },
    DelayTooLong { edge: usize, delta_t: usize, timesteps: usize },
    AlphaOnBackwardEdge { edge: usize },
    MergeShape { edge: usize, reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoLayers => write!(f, "network has no layers"),
            Violation::ZeroTimesteps => write!(f, "sequence length must be at least 1"),
            Violation::BadLayer { layer, reason } => write!(f, "layer {layer}: {reason}"),
            Violation::IntegratorNotLast { layer } => {
                write!(f, "layer {layer}: integrator activation is only allowed on the last layer")
            }
            Violation::BadNeuron(r) => write!(f, "neuron parameters: {r}"),
            Violation::EdgeOutOfRange { edge, depth } => {
                write!(f, "tskip {edge}: layer index outside [0, {depth}]")
            }
            Violation::IntoInput { edge } => write!(f, "tskip {edge}: destination is the input"),
            Violation::SelfLoop { edge } => {
                write!(f, "tskip {edge}: origin and destination are the same layer")
            }
            Violation::SameStepCycle { edge } => {
                write!(f, "tskip {edge}: same-step cycle (backward edge needs Δt ≥ 1)")
            }
            Violation::DelayTooLong {
                edge,
                delta_t,
                timesteps,
            } => write!(
                f,
                "tskip {edge}: delay exceeds sequence length (Δt = {delta_t}, T = {timesteps})"
            ),
            Violation::AlphaOnBackwardEdge { edge } => write!(
                f,
                "tskip {edge}: α mixing needs the origin's current output, unavailable on a backward edge"
            ),
            Violation::MergeShape { edge, reason } => write!(f, "tskip {edge}: {reason}"),
        }
    }
}

/// Per-sample shapes of every node and every layer's merged input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shapes {
    /// `nodes[0]` is the input, `nodes[l]` the output of layer `l`.
    pub nodes: Vec<Vec<usize>>,
    /// `inputs[l - 1]` is the merged input of layer `l`.
    pub inputs: Vec<Vec<usize>>,
}

impl Shapes {
    pub fn node_size(&self, node: usize) -> usize {
        self.nodes[node].iter().product()
    }

    /// Synaptic fan-in of layer `l` (1-based).
    pub fn fan_in(&self, spec: &ArchSpec, layer: usize) -> usize {
        let input = &self.inputs[layer - 1];
        match spec.layers[layer - 1].kind {
            LayerKind::Dense { .. } => input.iter().product(),
            LayerKind::Conv2d { kernel, .. } => input[0] * kernel * kernel,
        }
    }
}

impl ArchSpec {
    /// Builds a spec from an architecture string such as `700-124-288-144-20`.
    pub fn from_architecture(arch: &str, timesteps: usize) -> Result<Self> {
        let (input, layers) = parse_architecture(arch)?;
        Ok(Self {
            timesteps,
            input,
            layers,
            tskips: vec![],
            neuron: LifParams::default(),
            surrogate: SurrogateConfig::default(),
            bntt: true,
        })
    }

    pub fn with_tskip(mut self, edge: TSkipEdge) -> Self {
        self.tskips.push(edge);
        self
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ArchSpec serializes")
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::error::io_err(path))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(crate::error::io_err(path))
    }

    /// Whether layer `l` (1-based) is normalized through time.
    pub fn layer_has_bntt(&self, layer: usize) -> bool {
        self.bntt && self.layers[layer - 1].activation != Activation::Integrator
    }

    /// Checks every structural invariant, collecting all violations.
    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        if self.layers.is_empty() {
            v.push(Violation::NoLayers);
        }
        if self.timesteps == 0 {
            v.push(Violation::ZeroTimesteps);
        }
        if let Err(e) = self.neuron.validate() {
            v.push(Violation::BadNeuron(e.to_string()));
        }
        let depth = self.depth();
        for (i, l) in self.layers.iter().enumerate() {
            if l.activation == Activation::Integrator && i + 1 != depth {
                v.push(Violation::IntegratorNotLast { layer: i + 1 });
            }
            let zero = match l.kind {
                LayerKind::Dense { units } => units == 0,
                LayerKind::Conv2d {
                    kernel,
                    channels,
                    stride,
                } => kernel == 0 || channels == 0 || stride == 0,
            };
            if zero {
                v.push(Violation::BadLayer {
                    layer: i + 1,
                    reason: "sizes must be positive".into(),
                });
            }
        }
        if self.input.channels == 0 {
            v.push(Violation::BadLayer {
                layer: 0,
                reason: "input needs at least one channel".into(),
            });
        }
        for (i, e) in self.tskips.iter().enumerate() {
            if e.origin > depth || e.destination > depth {
                v.push(Violation::EdgeOutOfRange { edge: i, depth });
                continue;
            }
            if e.destination == 0 {
                v.push(Violation::IntoInput { edge: i });
            }
            if e.origin == e.destination {
                v.push(Violation::SelfLoop { edge: i });
            } else if e.is_backward() {
                if e.delta_t == 0 {
                    v.push(Violation::SameStepCycle { edge: i });
                }
                if e.alpha_enabled {
                    v.push(Violation::AlphaOnBackwardEdge { edge: i });
                }
            }
            if self.timesteps > 0 && e.delta_t >= self.timesteps {
                v.push(Violation::DelayTooLong {
                    edge: i,
                    delta_t: e.delta_t,
                    timesteps: self.timesteps,
                });
            }
        }
        if v.is_empty() {
            if let Err(mut shape_v) = self.infer_shapes() {
                v.append(&mut shape_v);
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// Like [`validate`](Self::validate), as a crate error.
    pub fn check(&self) -> Result<()> {
        self.validate().map_err(Error::Validation)
    }

    /// Propagates per-sample shapes through the graph. Assumes the edge
    /// indices are in range.
    pub fn infer_shapes(&self) -> std::result::Result<Shapes, Vec<Violation>> {
        let mut v = Vec::new();
        let mut nodes = vec![self.input.shape()];
        // Outputs of every layer are needed before backward edges can be
        // checked, so compute the plain chain first.
        for (i, l) in self.layers.iter().enumerate() {
            let prev = &nodes[i];
            let out = match l.kind {
                LayerKind::Dense { units } => vec![units],
                LayerKind::Conv2d {
                    channels, stride, ..
                } => {
                    if prev.len() != 3 {
                        v.push(Violation::BadLayer {
                            layer: i + 1,
                            reason: "convolution needs a channels×height×width input".into(),
                        });
                        vec![channels, 1, 1]
                    } else {
                        vec![
                            channels,
                            same_extent(prev[1], stride.max(1)),
                            same_extent(prev[2], stride.max(1)),
                        ]
                    }
                }
            };
            nodes.push(out);
        }
        let mut inputs = Vec::with_capacity(self.depth());
        for l in 1..=self.depth() {
            let base = nodes[l - 1].clone();
            let mut merged = base.clone();
            for (i, e) in self.tskips.iter().enumerate() {
                if e.destination != l || e.origin > self.depth() {
                    continue;
                }
                let src = &nodes[e.origin];
                if src.len() != base.len() || src[1..] != base[1..] {
                    v.push(Violation::MergeShape {
                        edge: i,
                        reason: format!(
                            "payload {:?} cannot merge with layer input {:?}",
                            src, base
                        ),
                    });
                    continue;
                }
                if e.merge == Merge::Concat {
                    merged[0] += base[0];
                }
            }
            inputs.push(merged);
        }
        if v.is_empty() {
            Ok(Shapes { nodes, inputs })
        } else {
            Err(v)
        }
    }

    /// Exact number of trainable scalars: weights and biases, per-timestep
    /// BNTT scale and shift, learnable leak and threshold, and one mixing
    /// weight per α-enabled skip.
    pub fn param_count(&self) -> Result<usize> {
        let shapes = self
            .infer_shapes()
            .map_err(Error::Validation)?;
        let mut total = 0;
        for (i, l) in self.layers.iter().enumerate() {
            let layer = i + 1;
            let out = l.out_channels();
            total += shapes.fan_in(self, layer) * out + out;
            if self.layer_has_bntt(layer) {
                total += 2 * self.timesteps * out;
            }
            if self.neuron.learnable {
                total += match l.activation {
                    Activation::Lif => 2,
                    Activation::Integrator => 1,
                    Activation::Relu => 0,
                };
            }
        }
        total += self.tskips.iter().filter(|e| e.alpha_enabled).count();
        Ok(total)
    }
}
