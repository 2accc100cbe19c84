//! Strict accuracy, loose macro and loose micro precision/recall/F1 for
//! multi-label predictions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndiff::Tensor;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: predictions {pred:?} vs gold {gold:?}")]
    ShapeMismatch { pred: (usize, usize), gold: (usize, usize) },
    #[error("evaluation needs at least one instance")]
    Empty,
    #[error("matrix entries must be 0 or 1")]
    NotBinary,
}

/// Evaluation summary. Raw pooled counts ride along so downstream tables
/// can recompute the ratios.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub instances: usize,
    pub strict_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub pooled_intersection: usize,
    pub pooled_predicted: usize,
    pub pooled_gold: usize,
}

/// Harmonic mean, zero when both inputs are zero.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn check_binary(m: &Tensor) -> Result<(), MetricsError> {
    if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(MetricsError::NotBinary);
    }
    Ok(())
}

/// Evaluate binary predictions against gold labels.
///
/// Per-instance precision/recall with an empty denominator counts 1 when
/// both sets are empty and 0 otherwise; that keeps perfect-empty instances
/// from dragging the macro averages down.
pub fn evaluate(pred: &Tensor, gold: &Tensor) -> Result<MetricsReport, MetricsError> {
    if pred.shape() != gold.shape() {
        return Err(MetricsError::ShapeMismatch { pred: pred.shape(), gold: gold.shape() });
    }
    if pred.rows() == 0 {
        return Err(MetricsError::Empty);
    }
    check_binary(pred)?;
    check_binary(gold)?;

    let instances = pred.rows();
    let n = pred.cols();
    let mut exact = 0usize;
    let mut macro_p_sum = 0.0;
    let mut macro_r_sum = 0.0;
    let mut pooled_intersection = 0usize;
    let mut pooled_predicted = 0usize;
    let mut pooled_gold = 0usize;

    for i in 0..instances {
        let mut inter = 0usize;
        let mut n_pred = 0usize;
        let mut n_gold = 0usize;
        let mut equal = true;
        for j in 0..n {
            let p = pred.get(i, j) == 1.0;
            let g = gold.get(i, j) == 1.0;
            if p != g {
                equal = false;
            }
            inter += usize::from(p && g);
            n_pred += usize::from(p);
            n_gold += usize::from(g);
        }
        exact += usize::from(equal);
        macro_p_sum += if n_pred > 0 {
            inter as f64 / n_pred as f64
        } else {
            f64::from(n_gold == 0)
        };
        macro_r_sum += if n_gold > 0 {
            inter as f64 / n_gold as f64
        } else {
            f64::from(n_pred == 0)
        };
        pooled_intersection += inter;
        pooled_predicted += n_pred;
        pooled_gold += n_gold;
    }

    let macro_precision = macro_p_sum / instances as f64;
    let macro_recall = macro_r_sum / instances as f64;
    let micro_precision = if pooled_predicted > 0 {
        pooled_intersection as f64 / pooled_predicted as f64
    } else {
        f64::from(pooled_gold == 0)
    };
    let micro_recall = if pooled_gold > 0 {
        pooled_intersection as f64 / pooled_gold as f64
    } else {
        f64::from(pooled_predicted == 0)
    };

    Ok(MetricsReport {
        instances,
        strict_accuracy: exact as f64 / instances as f64,
        macro_precision,
        macro_recall,
        macro_f1: f1(macro_precision, macro_recall),
        micro_precision,
        micro_recall,
        micro_f1: f1(micro_precision, micro_recall),
        pooled_intersection,
        pooled_predicted,
        pooled_gold,
    })
}

impl MetricsReport {
    /// Aligned text table with the Accuracy / Macro / Micro layout.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<10} {:>9} {:>9} {:>9}\n", "", "Accuracy", "Macro-F1", "Micro-F1"));
        out.push_str(&format!(
            "{:<10} {:>9.4} {:>9.4} {:>9.4}\n",
            "score", self.strict_accuracy, self.macro_f1, self.micro_f1
        ));
        out.push_str(&format!(
            "macro P/R {:>9.4} {:>9.4}\nmicro P/R {:>9.4} {:>9.4}\n",
            self.macro_precision, self.macro_recall, self.micro_precision, self.micro_recall
        ));
        out.push_str(&format!("instances {:>9}\n", self.instances));
        out
    }
}
