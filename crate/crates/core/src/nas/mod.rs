//! Training-free search over skip configurations.
//!
//! Candidates are drawn from a [`SearchSpace`] under a parameter budget and
//! ranked by the log-determinant of a spike-pattern similarity kernel
//! computed on a probe batch at initialization.

mod score;
mod search;
mod space;
mod stats;

pub use score::{log_det_ridge, sahd_kernel, sahd_score, score_with, CandidateScore, Sahd, Scorer, KERNEL_EPS};
pub use search::{random_search, write_report, SearchConfig};
pub use space::{LayerChoice, SearchSpace, MAX_ATTEMPTS};
pub use stats::{count_tskip_space, kendall_tau, TskipSpaceSize};
