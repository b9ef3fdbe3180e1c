use thiserror::Error;

use crate::nodes::Label;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no labels to score")]
    Empty,
    #[error("label {0} is not binary")]
    NonBinary(Label),
}

/// Unweighted mean of the SUPPORTS and REFUTES F1 scores. A class with no true
/// positives, false positives or false negatives scores 0.
pub fn macro_f1(preds: &[Label], golds: &[Label]) -> Result<f64, MetricError> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(&l) = preds.iter().chain(golds).find(|l| **l == Label::Uncertain) {
        return Err(MetricError::NonBinary(l));
    }
    let f1 = |class: Label| {
        let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
        for (&p, &g) in preds.iter().zip(golds) {
            match (p == class, g == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            f64::from(2 * tp) / f64::from(denom)
        }
    };
    Ok((f1(Label::Supports) + f1(Label::Refutes)) / 2.0)
}
