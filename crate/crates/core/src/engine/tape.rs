use super::kernels::{self, ConvGeom};
use super::surrogate::{heaviside, SpikeMode, SurrogateConfig};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Epsilon guarding the batch-norm variance.
pub const BN_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Statistics used by [`Tape::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum BnStats<'a> {
    /// Normalize with the statistics of the current batch.
    Batch,
    /// Normalize with externally tracked running statistics.
    Running { mean: &'a [f64], var: &'a [f64] },
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    AddBias { x: Var, bias: Var, channels: usize, inner: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    ScaleBy { x: Var, s: Var },
    DivBy { x: Var, s: Var },
    Sigmoid(Var),
    Relu(Var),
    Spike { z: Var, surrogate: SurrogateConfig },
    Concat { a: Var, b: Var, outer: usize, a_inner: usize, b_inner: usize },
    Select { x: Var, selection: Vec<usize>, outer: usize, src_c: usize, inner: usize },
    Reshape(Var),
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    Row { x: Var, row: usize, width: usize },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
        channels: usize,
        inner: usize,
    },
    Sum(Var),
    AddN(Vec<Var>),
    Mse { pred: Var, target: Vec<f64> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64>, classes: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::ScaleBy { .. } => "scale_by",
            Op::DivBy { .. } => "div_by",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Spike { .. } => "spike",
            Op::Concat { .. } => "concat",
            Op::Select { .. } => "select_channels",
            Op::Reshape(_) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::Row { .. } => "row",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Sum(_) => "sum",
            Op::AddN(_) => "add_n",
            Op::Mse { .. } => "mse",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::AddBias { x, bias, .. } => vec![*x, *bias],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Affine { x, .. } => vec![*x],
            Op::ScaleBy { x, s } | Op::DivBy { x, s } => vec![*x, *s],
            Op::Sigmoid(x) | Op::Relu(x) | Op::Reshape(x) | Op::Sum(x) => vec![*x],
            Op::Spike { z, .. } => vec![*z],
            Op::Concat { a, b, .. } => vec![*a, *b],
            Op::Select { x, .. } | Op::Row { x, .. } => vec![*x],
            Op::Conv2d { x, k, .. } => vec![*x, *k],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::AddN(vs) => vs.clone(),
            Op::Mse { pred, .. } => vec![*pred],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Every operation pushes one node whose inputs were pushed earlier, so the
/// node order is already a topological order and [`Tape::backward`] is a
/// single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn is_scalar(t: &Tensor) -> bool {
    t.numel() == 1
}

/// Splits a shape at the channel axis into (outer, channels, inner).
fn channel_split(shape: &[usize]) -> (usize, usize, usize) {
    match shape.len() {
        0 => (1, 1, 1),
        1 => (1, shape[0], 1),
        _ => (shape[0], shape[1], shape[2..].iter().product()),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("leaf".into()));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, m, k, n })
    }

    /// Adds `bias[c]` along the channel axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (outer, channels, inner) = channel_split(xv.shape());
        let bv = self.value(bias);
        if bv.numel() != channels {
            return Err(Error::Shape(format!(
                "add_bias: {} biases for {} channels",
                bv.numel(),
                channels
            )));
        }
        let mut out = xv.data().to_vec();
        for o in 0..outer {
            for c in 0..channels {
                let base = (o * channels + c) * inner;
                for v in &mut out[base..base + inner] {
                    *v += bv.data()[c];
                }
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(t, Op::AddBias { x, bias, channels, inner })
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, name)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b))
    }

    /// `scale · x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let t = self.value(x).map(|v| scale * v + shift);
        self.push(t, Op::Affine { x, scale })
    }

    /// `s · x` for a one-element `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if !is_scalar(sv) {
            return Err(Error::Shape(format!("scale_by: factor has shape {:?}", sv.shape())));
        }
        let f = sv.item();
        let t = self.value(x).map(|v| f * v);
        self.push(t, Op::ScaleBy { x, s })
    }

    /// `x / s` for a one-element `s`.
    pub fn div_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if !is_scalar(sv) {
            return Err(Error::Shape(format!("div_by: divisor has shape {:?}", sv.shape())));
        }
        let f = sv.item();
        let t = self.value(x).map(|v| v / f);
        self.push(t, Op::DivBy { x, s })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(sigmoid);
        self.push(t, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push(t, Op::Relu(x))
    }

    /// Spike nonlinearity. The backward pass always uses the arctangent
    /// surrogate derivative; `mode` only changes the forward value.
    pub fn spike(&mut self, z: Var, surrogate: SurrogateConfig, mode: SpikeMode) -> Result<Var> {
        let t = match mode {
            SpikeMode::Hard => self.value(z).map(heaviside),
            SpikeMode::SoftForward => self.value(z).map(|v| surrogate.primitive(v)),
        };
        self.push(t, Op::Spike { z, surrogate })
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let compatible = sa.len() == sb.len()
            && !sa.is_empty()
            && sa
                .iter()
                .zip(sb)
                .enumerate()
                .all(|(i, (x, y))| i == 1 || sa.len() == 1 || x == y);
        if !compatible {
            return Err(Error::Shape(format!("concat: {sa:?} with {sb:?}")));
        }
        let (outer, ca, inner) = channel_split(sa);
        let (_, cb, _) = channel_split(sb);
        let (a_inner, b_inner) = (ca * inner, cb * inner);
        let mut data = Vec::with_capacity(av.numel() + bv.numel());
        for o in 0..outer {
            data.extend_from_slice(&av.data()[o * a_inner..(o + 1) * a_inner]);
            data.extend_from_slice(&bv.data()[o * b_inner..(o + 1) * b_inner]);
        }
        let mut shape = sa.to_vec();
        if shape.len() == 1 {
            shape[0] = ca + cb;
        } else {
            shape[1] = ca + cb;
        }
        let t = Tensor::new(shape, data)?;
        self.push(t, Op::Concat { a, b, outer, a_inner, b_inner })
    }

    /// Output channel `i` is a copy of input channel `selection[i]`.
    pub fn select_channels(&mut self, x: Var, selection: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (outer, src_c, inner) = channel_split(xv.shape());
        if let Some(bad) = selection.iter().find(|&&s| s >= src_c) {
            return Err(Error::Shape(format!(
                "select_channels: index {bad} out of range for {src_c} channels"
            )));
        }
        let mut data = Vec::with_capacity(outer * selection.len() * inner);
        for o in 0..outer {
            for &s in selection {
                let base = (o * src_c + s) * inner;
                data.extend_from_slice(&xv.data()[base..base + inner]);
            }
        }
        let mut shape = xv.shape().to_vec();
        if shape.len() == 1 {
            shape[0] = selection.len();
        } else {
            shape[1] = selection.len();
        }
        let t = Tensor::new(shape, data)?;
        self.push(
            t,
            Op::Select {
                x,
                selection: selection.to_vec(),
                outer,
                src_c,
                inner,
            },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push(t, Op::Reshape(x))
    }

    /// Same-padded cross-correlation of `x[b×c×h×w]` with `k[o×c×kh×kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let (sx, sk) = (self.value(x).shape(), self.value(k).shape());
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[1] || stride == 0 {
            return Err(Error::Shape(format!(
                "conv2d: input {sx:?}, kernel {sk:?}, stride {stride}"
            )));
        }
        let geom = ConvGeom::new(sx, sk, stride);
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(k).data(), &geom);
        let t = Tensor::new(vec![geom.batch, geom.out_c, geom.oh, geom.ow], out)?;
        self.push(t, Op::Conv2d { x, k, geom })
    }

    /// Row `row` of a 2-D tensor, as a 1-D tensor.
    pub fn row(&mut self, x: Var, row: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 || row >= xv.shape()[0] {
            return Err(Error::Shape(format!("row {row} of {:?}", xv.shape())));
        }
        let width = xv.shape()[1];
        let t = Tensor::new(vec![width], xv.data()[row * width..(row + 1) * width].to_vec())?;
        self.push(t, Op::Row { x, row, width })
    }

    /// Per-channel normalization followed by the affine map `γ·x̂ + β`.
    ///
    /// With [`BnStats::Batch`] the mean and (biased) variance of the batch
    /// are used and returned so the caller can update running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: BnStats<'_>,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        let xv = self.value(x);
        let (outer, channels, inner) = channel_split(xv.shape());
        if self.value(gamma).numel() != channels || self.value(beta).numel() != channels {
            return Err(Error::Shape(format!(
                "batch_norm: affine parameters do not match {channels} channels"
            )));
        }
        let n = (outer * inner) as f64;
        let (mean, var, batch_stats) = match stats {
            BnStats::Batch => {
                if outer < 2 {
                    return Err(Error::InvalidArgument(
                        "batch normalization with batch statistics needs at least 2 samples".into(),
                    ));
                }
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for o in 0..outer {
                    for c in 0..channels {
                        let base = (o * channels + c) * inner;
                        mean[c] += xv.data()[base..base + inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                for o in 0..outer {
                    for c in 0..channels {
                        let base = (o * channels + c) * inner;
                        var[c] += xv.data()[base..base + inner]
                            .iter()
                            .map(|v| (v - mean[c]).powi(2))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                (mean, var, true)
            }
            BnStats::Running { mean, var } => {
                if mean.len() != channels || var.len() != channels {
                    return Err(Error::Shape("batch_norm: running statistics size".into()));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xv.numel()];
        let mut out = vec![0.0; xv.numel()];
        for o in 0..outer {
            for c in 0..channels {
                let base = (o * channels + c) * inner;
                for i in base..base + inner {
                    xhat[i] = (xv.data()[i] - mean[c]) * inv_std[c];
                    out[i] = g[c] * xhat[i] + b[c];
                }
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let v = self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
                channels,
                inner,
            },
        )?;
        Ok((v, batch_stats.then_some((mean, var))))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(x).sum());
        self.push(t, Op::Sum(x))
    }

    /// Element-wise sum of equally shaped values.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Shape("add_n of nothing".into()))?;
        let mut acc = self.value(*first).clone();
        for &x in &xs[1..] {
            let xv = self.value(x);
            same_shape(&acc, xv, "add_n")?;
            for (a, b) in acc.data_mut().iter_mut().zip(xv.data()) {
                *a += b;
            }
        }
        self.push(acc, Op::AddN(xs.to_vec()))
    }

    /// Mean squared difference against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let pv = self.value(pred);
        same_shape(pv, target, "mse")?;
        let n = pv.numel() as f64;
        let loss = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
            / n;
        let target = target.data().to_vec();
        self.push(Tensor::scalar(loss), Op::Mse { pred, target })
    }

    /// Mean softmax cross-entropy of `logits[b×c]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.ndim() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::Shape(format!(
                "cross_entropy: logits {:?} for {} labels",
                lv.shape(),
                labels.len()
            )));
        }
        let classes = lv.shape()[1];
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Shape(format!("cross_entropy: label {bad} >= {classes}")));
        }
        let mut probs = vec![0.0; lv.numel()];
        let mut loss = 0.0;
        for (i, row) in lv.data().chunks(classes).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for (j, v) in row.iter().enumerate() {
                probs[i * classes + j] = (v - max).exp() / z;
            }
            loss += z.ln() + max - row[labels[i]];
        }
        loss /= labels.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                classes,
            },
        )
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument("loss is not on this tape".into()));
        }
        if !is_scalar(self.value(loss)) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                out[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads: out })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                if let Some(da) = self.slot(grads, *a) {
                    kernels::matmul_bt_acc(g, val(*b), da, *m, *k, *n);
                }
                if let Some(db) = self.slot(grads, *b) {
                    kernels::matmul_at_acc(val(*a), g, db, *m, *k, *n);
                }
            }
            Op::AddBias { x, bias, channels, inner } => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(db) = self.slot(grads, *bias) {
                    for (i, gv) in g.iter().enumerate() {
                        db[(i / inner) % channels] += gv;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(d) = self.slot(grads, *b) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(val(*b)) {
                        *d += g * y;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(val(*a)) {
                        *d += g * x;
                    }
                }
            }
            Op::Affine { x, scale } => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += scale * g);
                }
            }
            Op::ScaleBy { x, s } => {
                let f = val(*s)[0];
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += f * g);
                }
                if let Some(ds) = self.slot(grads, *s) {
                    ds[0] += g.iter().zip(val(*x)).map(|(g, x)| g * x).sum::<f64>();
                }
            }
            Op::DivBy { x, s } => {
                let f = val(*s)[0];
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g / f);
                }
                if let Some(ds) = self.slot(grads, *s) {
                    ds[0] -= g.iter().zip(val(*x)).map(|(g, x)| g * x).sum::<f64>() / (f * f);
                }
            }
            Op::Sigmoid(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(node.value.data()) {
                        *d += g * y * (1.0 - y);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, g), xv) in d.iter_mut().zip(g).zip(val(*x)) {
                        if *xv > 0.0 {
                            *d += g;
                        }
                    }
                }
            }
            Op::Spike { z, surrogate } => {
                if let Some(d) = self.slot(grads, *z) {
                    for ((d, g), zv) in d.iter_mut().zip(g).zip(val(*z)) {
                        *d += g * surrogate.derivative(*zv);
                    }
                }
            }
            Op::Concat { a, b, outer, a_inner, b_inner } => {
                let row = a_inner + b_inner;
                if let Some(d) = self.slot(grads, *a) {
                    for o in 0..*outer {
                        for i in 0..*a_inner {
                            d[o * a_inner + i] += g[o * row + i];
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for o in 0..*outer {
                        for i in 0..*b_inner {
                            d[o * b_inner + i] += g[o * row + a_inner + i];
                        }
                    }
                }
            }
            Op::Select { x, selection, outer, src_c, inner } => {
                if let Some(d) = self.slot(grads, *x) {
                    let out_c = selection.len();
                    for o in 0..*outer {
                        for (j, &s) in selection.iter().enumerate() {
                            let src = (o * src_c + s) * inner;
                            let dst = (o * out_c + j) * inner;
                            for i in 0..*inner {
                                d[src + i] += g[dst + i];
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            Op::Conv2d { x, k, geom } => {
                let (xv, kv) = (val(*x), val(*k));
                let mut dx = self.nodes[x.0].requires_grad.then(|| vec![0.0; xv.len()]);
                let mut dk = self.nodes[k.0].requires_grad.then(|| vec![0.0; kv.len()]);
                kernels::conv2d_backward(xv, kv, g, geom, dx.as_deref_mut(), dk.as_deref_mut());
                if let (Some(src), Some(d)) = (dx, self.slot(grads, *x)) {
                    d.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
                if let (Some(src), Some(d)) = (dk, self.slot(grads, *k)) {
                    d.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
            Op::Row { x, row, width } => {
                if let Some(d) = self.slot(grads, *x) {
                    for i in 0..*width {
                        d[row * width + i] += g[i];
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
                channels,
                inner,
            } => {
                let gam = val(*gamma);
                let c_of = |i: usize| (i / inner) % channels;
                if let Some(d) = self.slot(grads, *gamma) {
                    for (i, gv) in g.iter().enumerate() {
                        d[c_of(i)] += gv * xhat[i];
                    }
                }
                if let Some(d) = self.slot(grads, *beta) {
                    for (i, gv) in g.iter().enumerate() {
                        d[c_of(i)] += gv;
                    }
                }
                if let Some(d) = self.slot(grads, *x) {
                    if *batch_stats {
                        // dx = inv_std/n · (n·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), per channel
                        let n = (g.len() / channels) as f64;
                        let mut sum_dxhat = vec![0.0; *channels];
                        let mut sum_dxhat_xhat = vec![0.0; *channels];
                        for (i, gv) in g.iter().enumerate() {
                            let c = c_of(i);
                            let dxhat = gv * gam[c];
                            sum_dxhat[c] += dxhat;
                            sum_dxhat_xhat[c] += dxhat * xhat[i];
                        }
                        for (i, gv) in g.iter().enumerate() {
                            let c = c_of(i);
                            let dxhat = gv * gam[c];
                            d[i] += inv_std[c] / n
                                * (n * dxhat - sum_dxhat[c] - xhat[i] * sum_dxhat_xhat[c]);
                        }
                    } else {
                        for (i, gv) in g.iter().enumerate() {
                            let c = c_of(i);
                            d[i] += gv * gam[c] * inv_std[c];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::AddN(xs) => {
                for &x in xs {
                    if let Some(d) = self.slot(grads, x) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Mse { pred, target } => {
                if let Some(d) = self.slot(grads, *pred) {
                    let n = target.len() as f64;
                    for ((d, p), t) in d.iter_mut().zip(val(*pred)).zip(target) {
                        *d += g[0] * 2.0 * (p - t) / n;
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs, classes } => {
                if let Some(d) = self.slot(grads, *logits) {
                    let b = labels.len() as f64;
                    for (i, &l) in labels.iter().enumerate() {
                        for j in 0..*classes {
                            let onehot = if j == l { 1.0 } else { 0.0 };
                            d[i * classes + j] += g[0] * (probs[i * classes + j] - onehot) / b;
                        }
                    }
                }
            }
        }
    }
}
