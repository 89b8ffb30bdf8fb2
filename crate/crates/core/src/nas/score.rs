use nalgebra::DMatrix;
use serde::Serialize;

use crate::engine::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{Activation, ArchSpec, Mode, Network};

/// Ridge added to the kernel before the log-determinant.
pub const KERNEL_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateScore {
    pub spec: ArchSpec,
    pub score: f64,
    pub seed: u64,
    pub params: usize,
    /// No spiking layer fired on the probe batch.
    pub degenerate: bool,
}

/// Scores an untrained network on a probe batch.
pub trait Scorer: Sync {
    /// Returns `(score, degenerate)`.
    fn score(&self, net: &mut Network, probe: &Tensor) -> Result<(f64, bool)>;
}

/// Sparsity-aware Hamming kernel.
///
/// For every LIF layer the binary spike train of each probe sample is
/// flattened over time and neurons. Samples `i` and `j` contribute
/// `|a_i ∧ a_j| / n_l`, which equals the number of units active in either
/// minus their Hamming distance, scaled by `n_l = max(1, spikes in the
/// layer over the whole batch)` so silent layers cannot dominate.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sahd;

impl Scorer for Sahd {
    fn score(&self, net: &mut Network, probe: &Tensor) -> Result<(f64, bool)> {
        let (k, silent) = sahd_kernel(net, probe)?;
        Ok((log_det_ridge(&k, KERNEL_EPS), silent))
    }
}

/// The `B × B` kernel and whether every spiking layer stayed silent.
pub fn sahd_kernel(net: &mut Network, probe: &Tensor) -> Result<(DMatrix<f64>, bool)> {
    let b = probe.shape().get(1).copied().unwrap_or(0);
    if b < 2 {
        return Err(Error::InvalidArgument("probe batch needs at least two samples".into()));
    }
    let mut tape = Tape::new();
    let trace = net.forward(&mut tape, probe, Mode::Probe)?;
    let mut k = DMatrix::<f64>::zeros(b, b);
    let mut silent = true;
    for (i, layer) in net.spec().layers.iter().enumerate() {
        if layer.activation != Activation::Lif {
            continue;
        }
        let node = i + 1;
        let per = net.shapes().node_size(node);
        // active positions of each sample, over all steps
        let mut codes: Vec<Vec<u32>> = vec![Vec::new(); b];
        for (t, nodes) in trace.nodes.iter().enumerate() {
            let v = tape.value(nodes[node]).data();
            for (s, code) in codes.iter_mut().enumerate() {
                for (u, &x) in v[s * per..(s + 1) * per].iter().enumerate() {
                    if x != 0.0 {
                        code.push((t * per + u) as u32);
                    }
                }
            }
        }
        let total: usize = codes.iter().map(Vec::len).sum();
        if total > 0 {
            silent = false;
        }
        let norm = total.max(1) as f64;
        for i in 0..b {
            for j in i..b {
                let shared = intersect(&codes[i], &codes[j]) as f64 / norm;
                k[(i, j)] += shared;
                if i != j {
                    k[(j, i)] += shared;
                }
            }
        }
    }
    Ok((k, silent))
}

/// Size of the intersection of two sorted index lists.
fn intersect(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// `log det(K + εI)` of a symmetric PSD matrix, via its eigenvalues.
pub fn log_det_ridge(k: &DMatrix<f64>, eps: f64) -> f64 {
    let n = k.nrows();
    let reg = k + DMatrix::<f64>::identity(n, n) * eps;
    match reg.clone().cholesky() {
        Some(c) => 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        None => reg
            .symmetric_eigenvalues()
            .iter()
            .map(|&l| l.max(eps * 1e-3).ln())
            .sum(),
    }
}

/// Builds the network for `spec` from `seed` and scores it.
pub fn sahd_score(spec: &ArchSpec, probe: &Tensor, seed: u64) -> Result<CandidateScore> {
    score_with(&Sahd, spec, probe, seed)
}

pub fn score_with(scorer: &dyn Scorer, spec: &ArchSpec, probe: &Tensor, seed: u64) -> Result<CandidateScore> {
    let mut net = Network::new(spec.clone(), seed)?;
    let (score, degenerate) = scorer.score(&mut net, probe)?;
    Ok(CandidateScore {
        spec: spec.clone(),
        score,
        seed,
        params: net.param_count(),
        degenerate,
    })
}
