use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Top-1 accuracy; ties resolve to the lowest class index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::Shape(format!(
            "logits {:?} for {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Average endpoint error between `[n × 2]` flow fields.
pub fn aee(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    if pred.shape() != gt.shape() || pred.ndim() != 2 || pred.shape()[1] != 2 {
        return Err(Error::Shape(format!(
            "flow fields {:?} and {:?} must both be [n × 2]",
            pred.shape(),
            gt.shape()
        )));
    }
    let n = pred.shape()[0];
    if n == 0 {
        return Err(Error::InvalidArgument("empty flow field".into()));
    }
    let total: f64 = pred
        .data()
        .chunks_exact(2)
        .zip(gt.data().chunks_exact(2))
        .map(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1]))
        .sum();
    Ok(total / n as f64)
}
