use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::score::{score_with, CandidateScore, Scorer};
use super::space::SearchSpace;
use crate::engine::Tensor;
use crate::error::{io_err, Error, Result};
use crate::graph::ArchSpec;
use crate::seed;

#[derive(Clone, Debug)]
pub struct SearchConfig {
    pub candidates: usize,
    pub top_k: usize,
    pub seed: u64,
    pub parallel: bool,
}

/// Samples `cfg.candidates` architectures, appends `extra`, scores all of
/// them at initialization and returns the `top_k` best, highest first.
/// Candidate `i` draws its architecture and weights from streams derived
/// from the master seed, so the ranking does not depend on scheduling.
pub fn random_search(
    space: &SearchSpace,
    probe: &Tensor,
    cfg: &SearchConfig,
    scorer: &dyn Scorer,
    extra: &[ArchSpec],
) -> Result<Vec<CandidateScore>> {
    let total = cfg.candidates + extra.len();
    if cfg.top_k == 0 || cfg.top_k > total {
        return Err(Error::InvalidArgument(format!(
            "top_k {} must lie in [1, {total}]",
            cfg.top_k
        )));
    }
    let mut specs = Vec::with_capacity(total);
    for i in 0..cfg.candidates {
        let mut rng = seed::stream(cfg.seed, "sample", i as u64);
        specs.push(space.sample(&mut rng)?);
    }
    specs.extend(extra.iter().cloned());
    let eval = |(i, spec): (usize, &ArchSpec)| {
        score_with(scorer, spec, probe, seed::derive_seed(cfg.seed, "init", i as u64))
    };
    let scored: Vec<CandidateScore> = if cfg.parallel {
        specs.par_iter().enumerate().map(eval).collect::<Result<_>>()?
    } else {
        specs.iter().enumerate().map(eval).collect::<Result<_>>()?
    };
    let mut order: Vec<usize> = (0..scored.len()).collect();
    // stable: equal scores keep sampling order
    order.sort_by(|&a, &b| scored[b].score.total_cmp(&scored[a].score));
    Ok(order
        .into_iter()
        .take(cfg.top_k)
        .map(|i| scored[i].clone())
        .collect())
}

/// Writes `report.csv` and one spec file per ranked candidate into `dir`.
pub fn write_report(dir: &Path, ranked: &[CandidateScore]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut csv = String::from("rank,score,params,depth,tskips,spec_path\n");
    for (r, c) in ranked.iter().enumerate() {
        let name = format!("rank_{:03}.json", r + 1);
        c.spec.write(&dir.join(&name))?;
        let skips = c
            .spec
            .tskips
            .iter()
            .map(|e| format!("{}>{}@{}", e.origin, e.destination, e.delta_t))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r + 1,
            c.score,
            c.params,
            c.spec.depth(),
            skips,
            name
        )
        .expect("string write");
    }
    let path = dir.join("report.csv");
    std::fs::write(&path, csv).map_err(io_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nas::Sahd;

    fn space() -> SearchSpace {
        let mut s = SearchSpace::preset("shd").unwrap();
        s.timesteps = 12;
        s.input = crate::graph::InputSpec::vector(10);
        s.outputs = 3;
        s.depth_range = [1, 2];
        s.layer = crate::nas::LayerChoice::Dense { units: [4, 12] };
        s.delta_t_range = [1, 5];
        s.param_budget = Some(2_000);
        s
    }

    fn probe() -> Tensor {
        crate::engine::gradcheck::random(&[12, 6, 10], 1).map(|v| (v > 0.2) as u8 as f64)
    }

    #[test]
    fn n_equals_k_returns_all_sorted() {
        let cfg = SearchConfig {
            candidates: 5,
            top_k: 5,
            seed: 3,
            parallel: false,
        };
        let r = random_search(&space(), &probe(), &cfg, &Sahd, &[]).unwrap();
        assert_eq!(r.len(), 5);
        assert!(r.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(random_search(&space(), &probe(), &SearchConfig { top_k: 6, ..cfg }, &Sahd, &[]).is_err());
    }

    #[test]
    fn parallel_matches_serial() {
        let cfg = SearchConfig {
            candidates: 12,
            top_k: 12,
            seed: 9,
            parallel: false,
        };
        let a = random_search(&space(), &probe(), &cfg, &Sahd, &[]).unwrap();
        let b = random_search(&space(), &probe(), &SearchConfig { parallel: true, ..cfg }, &Sahd, &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn report_files() {
        let cfg = SearchConfig {
            candidates: 3,
            top_k: 2,
            seed: 1,
            parallel: false,
        };
        let r = random_search(&space(), &probe(), &cfg, &Sahd, &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &r).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("rank,score,params,depth,tskips,spec_path"));
        let back = ArchSpec::read(&dir.path().join("rank_001.json")).unwrap();
        assert_eq!(back, r[0].spec);
    }
}
