#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tskip::engine::{SpikeMode, SurrogateConfig, Tape, Tensor};
use tskip::graph::{Activation, ArchSpec, InputSpec, LayerSpec, Merge, Mode, Network, TSkipEdge};
use tskip::neuron::{lif_step, LifParams, LifScalars, LifState, ResetMode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn binary(shape: &[usize], p: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| (rng.gen::<f64>() < p) as u8 as f64).collect()).unwrap()
}

/// Random valid dense graph: LIF hidden layers, integrator readout, and a
/// handful of forward and backward skips.
pub fn random_dense_spec(rng: &mut impl Rng, timesteps: usize, bntt: bool) -> ArchSpec {
    let depth = rng.gen_range(2..=4);
    let mut layers: Vec<LayerSpec> = (1..depth)
        .map(|_| LayerSpec::dense(rng.gen_range(2..=6), Activation::Lif))
        .collect();
    layers.push(LayerSpec::dense(rng.gen_range(2..=4), Activation::Integrator));
    let mut spec = ArchSpec {
        timesteps,
        input: InputSpec::vector(rng.gen_range(2..=5)),
        layers,
        tskips: Vec::new(),
        neuron: LifParams::default(),
        surrogate: Default::default(),
        bntt,
    };
    let wanted = rng.gen_range(0..=3);
    let mut tries = 0;
    while spec.tskips.len() < wanted && tries < 100 {
        tries += 1;
        let mut edge = TSkipEdge::new(
            rng.gen_range(0..depth),
            rng.gen_range(1..=depth),
            rng.gen_range(0..timesteps),
            if rng.gen_bool(0.5) { Merge::Add } else { Merge::Concat },
        );
        if !edge.is_backward() && rng.gen_bool(0.3) {
            edge.alpha_enabled = true;
            edge.alpha_raw = rng.gen_range(-1.0..1.0);
        }
        let mut next = spec.clone();
        next.tskips.push(edge);
        if next.validate().is_ok() {
            spec = next;
        }
    }
    spec
}

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn loss(net: &mut Network, x: &Tensor, labels: &[usize]) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let trace = net.forward(&mut tape, x, Mode::Train).unwrap();
    let logits = trace.readout_mean(&mut tape).unwrap();
    let l = tape.cross_entropy(logits, labels).unwrap();
    let grads = tape.backward(l).unwrap();
    let g = trace
        .params
        .iter()
        .zip(net.params().iter())
        .map(|(&v, p)| grads.get_or_zeros(v, p.value.shape()))
        .collect();
    (tape.value(l).item(), g)
}

/// Relative error of the full BPTT gradient against central differences
/// over every trainable scalar.
pub fn grad_error(spec: ArchSpec, seed: u64) -> f64 {
    let mut r = rng(seed);
    let t = spec.timesteps;
    let mut shape = vec![t, 3];
    shape.extend(spec.input.shape());
    let outputs = spec.layers.last().unwrap().out_channels();
    let x = uniform(&shape, 0.0, 1.5, &mut r);
    let labels: Vec<usize> = (0..3).map(|_| r.gen_range(0..outputs)).collect();
    let mut net = Network::new(spec, seed).unwrap();
    net.spike_mode = SpikeMode::SoftForward;
    let (_, analytic) = loss(&mut net, &x, &labels);
    let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
    for pi in 0..net.params().len() {
        if !net.params().get(pi).trainable {
            continue;
        }
        for i in 0..net.params().get(pi).value.numel() {
            let orig = net.params().get(pi).value.data()[i];
            net.params_mut().get_mut(pi).value.data_mut()[i] = orig + H;
            let plus = loss(&mut net, &x, &labels).0;
            net.params_mut().get_mut(pi).value.data_mut()[i] = orig - H;
            let minus = loss(&mut net, &x, &labels).0;
            net.params_mut().get_mut(pi).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic[pi].data()[i];
            diff += (a - numeric).powi(2);
            norm_a += a * a;
            norm_n += numeric * numeric;
        }
    }
    diff.sqrt() / norm_a.sqrt().max(norm_n.sqrt()).max(1e-12)
}

pub fn conv_spec(r: &mut impl Rng) -> ArchSpec {
    let t = r.gen_range(2..=4);
    let stride = r.gen_range(1..=2);
    let mut spec = ArchSpec {
        timesteps: t,
        input: InputSpec::image(2, 4, 4),
        layers: vec![
            LayerSpec::conv(3, r.gen_range(2..=3), 1, Activation::Lif),
            LayerSpec::conv(3, 2, stride, Activation::Lif),
            LayerSpec::dense(3, Activation::Integrator),
        ],
        tskips: vec![],
        neuron: LifParams::default(),
        surrogate: Default::default(),
        bntt: r.gen_bool(0.5),
    };
    if stride == 1 {
        spec.tskips.push(TSkipEdge::new(1, 2, r.gen_range(0..t), Merge::Concat));
    } else {
        spec.tskips.push(TSkipEdge::new(0, 1, r.gen_range(1..t), Merge::Concat));
    }
    spec
}

pub fn identity_net(width: usize, depth: usize, t: usize, edges: Vec<TSkipEdge>) -> Network {
    let spec = ArchSpec {
        timesteps: t,
        input: InputSpec::vector(width),
        layers: vec![LayerSpec::dense(width, Activation::Relu); depth],
        tskips: edges,
        neuron: LifParams::default(),
        surrogate: Default::default(),
        bntt: false,
    };
    let mut net = Network::new(spec, 0).unwrap();
    for l in 1..=depth {
        let w = net.params_mut().by_name_mut(&format!("layer{l}.weight")).unwrap();
        let mut eye = vec![0.0; width * width];
        for i in 0..width {
            eye[i * width + i] = 1.0;
        }
        *w = Tensor::new(vec![width, width], eye).unwrap();
    }
    net
}

/// Plain LIF network with optional same-step residuals, written without the
/// tape. Returns the readout potential at every step, `[T][b][out]`.
pub fn reference_forward(net: &Network, x: &Tensor, residuals: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let spec = net.spec();
    let p = net.params();
    let t_len = spec.timesteps;
    let batch = x.shape()[1];
    let depth = spec.depth();
    let sizes: Vec<usize> = (0..=depth).map(|n| net.shapes().node_size(n)).collect();
    let mut u: Vec<Vec<f64>> = (1..=depth).map(|l| vec![0.0; batch * sizes[l]]).collect();
    let mut o_prev: Vec<Vec<f64>> = u.clone();
    let mut readouts = Vec::new();
    for t in 0..t_len {
        let mut nodes: Vec<Vec<f64>> = vec![x.frame(t).data().to_vec()];
        for l in 1..=depth {
            let mut input = nodes[l - 1].clone();
            for &(origin, dest) in residuals {
                if dest == l {
                    for (a, b) in input.iter_mut().zip(&nodes[origin]) {
                        *a += *b;
                    }
                }
            }
            let w = p.by_name(&format!("layer{l}.weight")).unwrap().data();
            let bias = p.by_name(&format!("layer{l}.bias")).unwrap().data();
            let (k, n) = (sizes[l - 1], sizes[l]);
            let mut a = vec![0.0; batch * n];
            for s in 0..batch {
                for j in 0..n {
                    let mut acc = 0.0;
                    for q in 0..k {
                        let xv = input[s * k + q];
                        if xv != 0.0 {
                            acc += xv * w[q * n + j];
                        }
                    }
                    a[s * n + j] = acc + bias[j];
                }
            }
            let leak = p.by_name(&format!("layer{l}.leak")).unwrap().item();
            let out = if spec.layers[l - 1].activation == Activation::Integrator {
                for (uv, av) in u[l - 1].iter_mut().zip(&a) {
                    *uv = leak * *uv + av;
                }
                u[l - 1].clone()
            } else {
                let thr = p.by_name(&format!("layer{l}.threshold")).unwrap().item();
                let mut o = vec![0.0; batch * n];
                for i in 0..batch * n {
                    let next = (leak * u[l - 1][i] + a[i]) - thr * o_prev[l - 1][i];
                    u[l - 1][i] = next;
                    o[i] = if next / thr - 1.0 > 0.0 { 1.0 } else { 0.0 };
                }
                o_prev[l - 1] = o.clone();
                o
            };
            nodes.push(out);
        }
        readouts.push(nodes[depth].clone());
    }
    readouts
}

pub fn residual_spec(t: usize, edges: Vec<TSkipEdge>) -> ArchSpec {
    ArchSpec {
        timesteps: t,
        input: InputSpec::vector(6),
        layers: vec![
            LayerSpec::dense(6, Activation::Lif),
            LayerSpec::dense(6, Activation::Lif),
            LayerSpec::dense(6, Activation::Lif),
            LayerSpec::dense(3, Activation::Integrator),
        ],
        tskips: edges,
        neuron: LifParams::default(),
        surrogate: Default::default(),
        bntt: false,
    }
}

pub fn assert_matches_reference(spec: ArchSpec, residuals: &[(usize, usize)], seed: u64) {
    let t = spec.timesteps;
    let mut net = Network::new(spec, seed).unwrap();
    let x = binary(&[t, 4, 6], 0.4, &mut rng(seed));
    let expected = reference_forward(&net, &x, residuals);
    let got = net.run(&x, Mode::Eval).unwrap();
    let mut spikes = 0.0;
    for (step, (g, e)) in got.outputs.iter().zip(&expected).enumerate() {
        let same = g.data().iter().zip(e).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "step {step}: {:?} vs {:?}", g.data(), e);
    }
    spikes += got.spike_counts[1..got.spike_counts.len() - 1].iter().sum::<f64>();
    assert!(spikes > 0.0, "reference comparison needs some spiking");
}


/// Identity ReLU network with an additive skip from the input to layer 2:
/// the output must be `x_t + x_{t-Δt}` exactly.
pub fn shift_is_exact(t: usize, dt: usize, seed: u64) -> Result<(), String> {
    let x = uniform(&[t, 2, 3], 0.0, 4.0, &mut rng(seed));
    let mut net = identity_net(3, 2, t, vec![TSkipEdge::new(0, 2, dt, Merge::Add)]);
    let out = net.run(&x, Mode::Eval).map_err(|e| e.to_string())?;
    for (s, o) in out.outputs.iter().enumerate() {
        let now = x.frame(s);
        for (i, &v) in o.data().iter().enumerate() {
            let past = if s >= dt { x.frame(s - dt).data()[i] } else { 0.0 };
            if v != now.data()[i] + past {
                return Err(format!("dt {dt} step {s}: {v} vs {}", now.data()[i] + past));
            }
        }
    }
    Ok(())
}

fn frames_equal(a: &Tensor, b: &Tensor) -> bool {
    a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Flips every input cell from a random step `s` on and checks that no
/// output before `s` moves, with and without batch statistics.
pub fn causal_case(case: u64, r: &mut impl Rng) -> Result<(), String> {
    let t = r.gen_range(3..=8);
    let bntt = r.gen_bool(0.5);
    let spec = random_dense_spec(r, t, bntt);
    let channels = spec.input.channels;
    let x = binary(&[t, 3, channels], 0.5, r);
    let s = r.gen_range(1..t);
    let mut y = x.clone();
    let per = 3 * channels;
    for v in &mut y.data_mut()[s * per..] {
        *v = 1.0 - *v;
    }
    for mode in [Mode::Eval, Mode::Probe] {
        let a = Network::new(spec.clone(), case).unwrap().run(&x, mode).unwrap();
        let b = Network::new(spec.clone(), case).unwrap().run(&y, mode).unwrap();
        if let Some(step) = (0..s).find(|&k| !frames_equal(&a.outputs[k], &b.outputs[k])) {
            return Err(format!(
                "case {case}: step {step} changed by input at {s} ({:?})",
                spec.tskips
            ));
        }
    }
    Ok(())
}

/// Runs one neuron for `steps` with the given per-step input and returns
/// `(U, O)` after every step.
pub fn simulate(leak: f64, threshold: f64, u0: f64, input: impl Fn(usize) -> f64, steps: usize) -> Vec<(f64, f64)> {
    let mut tape = Tape::new();
    let params = LifParams {
        leak,
        threshold,
        ..LifParams::default()
    };
    let scalars = LifScalars::register(&mut tape, &params).unwrap();
    let mut state = LifState {
        u: tape.constant(Tensor::scalar(u0)).unwrap(),
        o_prev: tape.constant(Tensor::scalar(0.0)).unwrap(),
    };
    let mut out = Vec::new();
    for t in 0..steps {
        let i = tape.constant(Tensor::scalar(input(t))).unwrap();
        let (o, next) = lif_step(
            &mut tape,
            &state,
            i,
            &scalars,
            ResetMode::Soft,
            SurrogateConfig::default(),
            SpikeMode::Hard,
        )
        .unwrap();
        state = next;
        out.push((tape.value(state.u).item(), tape.value(o).item()));
    }
    out
}

