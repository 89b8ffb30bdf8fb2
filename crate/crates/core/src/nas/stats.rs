use num_bigint::BigUint;

use crate::error::{Error, Result};

/// Kendall rank correlation with the τ-b tie correction.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need two equal-length lists of at least two values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = (a[i] - a[j]).partial_cmp(&0.0).unwrap_or(std::cmp::Ordering::Equal) as i64;
            let db = (b[i] - b[j]).partial_cmp(&0.0).unwrap_or(std::cmp::Ordering::Equal) as i64;
            match (da, db) {
                (0, 0) => {
                    ties_a += 1;
                    ties_b += 1;
                }
                (0, _) => ties_a += 1,
                (_, 0) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denom = (((pairs - ties_a) * (pairs - ties_b)) as f64).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((concordant - discordant) as f64 / denom)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TskipSpaceSize {
    /// Ordered pairs of distinct graph nodes.
    pub edge_slots: u64,
    /// Edge slots times delay values.
    pub annotated_slots: u64,
    /// Number of subsets of annotated slots.
    pub total_configs: BigUint,
}

/// Counts skip configurations over `n_nodes` graph nodes (input included)
/// with `n_delay_values` candidate delays per edge. A configuration is any
/// subset of `(origin, destination, Δt)` triples.
pub fn count_tskip_space(n_nodes: u64, n_delay_values: u64) -> Result<TskipSpaceSize> {
    if n_nodes < 2 {
        return Err(Error::InvalidArgument("need at least two nodes".into()));
    }
    let edge_slots = n_nodes * (n_nodes - 1);
    let annotated_slots = edge_slots * n_delay_values;
    Ok(TskipSpaceSize {
        edge_slots,
        annotated_slots,
        total_configs: BigUint::from(1u8) << annotated_slots,
    })
}
