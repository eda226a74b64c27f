//! Multi-label metrics. Scores are real (higher means more likely
//! positive), decisions and truth are 0/1.

use ndarray::ArrayView2;

use crate::error::{PmlError, Result};

fn check_shapes<A, B>(a: &ArrayView2<A>, b: &ArrayView2<B>, what: &'static str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(PmlError::Dimension {
            expected: b.len(),
            actual: a.len(),
            context: what,
        });
    }
    Ok(())
}

/// Mean fraction of mis-ordered (positive, negative) pairs; ties count ½.
/// Instances without a positive or without a negative label are skipped.
pub fn ranking_loss(scores: ArrayView2<f64>, truth: ArrayView2<u8>) -> Result<f64> {
    check_shapes(&scores, &truth, "ranking loss")?;
    let mut total = 0.0;
    let mut counted = 0usize;
    for (s, y) in scores.rows().into_iter().zip(truth.rows()) {
        let pos: Vec<f64> = s.iter().zip(y).filter(|(_, &t)| t == 1).map(|(&v, _)| v).collect();
        let neg: Vec<f64> = s.iter().zip(y).filter(|(_, &t)| t == 0).map(|(&v, _)| v).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut bad = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p < n {
                    bad += 1.0;
                } else if p == n {
                    bad += 0.5;
                }
            }
        }
        total += bad / (pos.len() * neg.len()) as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(PmlError::Metric(
            "ranking loss: no instance has both a positive and a negative label".into(),
        ));
    }
    Ok(total / counted as f64)
}

/// Fraction of disagreeing cells.
pub fn hamming_loss(decisions: ArrayView2<u8>, truth: ArrayView2<u8>) -> Result<f64> {
    check_shapes(&decisions, &truth, "hamming loss")?;
    if truth.is_empty() {
        return Err(PmlError::Metric("hamming loss of an empty matrix".into()));
    }
    let wrong = decisions.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Mean depth, divided by L, needed to cover every positive label when
/// labels are visited by descending score (ties by ascending index).
/// Instances without a positive label are skipped.
pub fn coverage_error(scores: ArrayView2<f64>, truth: ArrayView2<u8>) -> Result<f64> {
    check_shapes(&scores, &truth, "coverage error")?;
    let l = scores.ncols();
    let mut total = 0.0;
    let mut counted = 0usize;
    for (s, y) in scores.rows().into_iter().zip(truth.rows()) {
        if !y.iter().any(|&t| t == 1) {
            continue;
        }
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        let depth = order.iter().rposition(|&j| y[j] == 1).expect("has a positive") + 1;
        total += depth as f64 / l as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(PmlError::Metric("coverage error: no instance has a positive label".into()));
    }
    Ok(total / counted as f64)
}

/// `2TP / (2TP + FP + FN)` pooled over all cells, 0 when nothing is positive.
pub fn micro_f1(decisions: ArrayView2<u8>, truth: ArrayView2<u8>) -> Result<f64> {
    check_shapes(&decisions, &truth, "micro-F1")?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&d, &t) in decisions.iter().zip(truth) {
        match (d, t) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}

/// Mean normalized Hamming distance between pseudo labels and truth.
pub fn epsilon_pseudo(pseudo: ArrayView2<u8>, truth: ArrayView2<u8>) -> Result<f64> {
    hamming_loss(pseudo, truth)
}

/// `1[score ≥ threshold]`.
pub fn decisions(scores: ArrayView2<f64>, threshold: f64) -> ndarray::Array2<u8> {
    scores.mapv(|s| u8::from(s >= threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn ranking_loss_extremes() {
        let y = arr2(&[[1u8, 0, 1, 0]]);
        let good = arr2(&[[0.9, 0.1, 0.8, 0.2]]);
        let bad = arr2(&[[0.1, 0.9, 0.2, 0.8]]);
        assert_eq!(ranking_loss(good.view(), y.view()).unwrap(), 0.0);
        assert_eq!(ranking_loss(bad.view(), y.view()).unwrap(), 1.0);
        let flat = arr2(&[[0.5, 0.5, 0.5, 0.5]]);
        assert_eq!(ranking_loss(flat.view(), y.view()).unwrap(), 0.5);
        let all_pos = arr2(&[[1u8, 1, 1, 1]]);
        assert!(ranking_loss(good.view(), all_pos.view()).is_err());
    }

    #[test]
    fn hamming_extremes() {
        let a = arr2(&[[1u8, 0], [0, 1]]);
        let c = a.mapv(|v| 1 - v);
        assert_eq!(hamming_loss(a.view(), a.view()).unwrap(), 0.0);
        assert_eq!(hamming_loss(c.view(), a.view()).unwrap(), 1.0);
    }

    #[test]
    fn coverage_first_and_last() {
        let y = arr2(&[[0u8, 0, 1, 0, 0]]);
        let first = arr2(&[[0.1, 0.2, 0.9, 0.3, 0.0]]);
        let last = arr2(&[[0.5, 0.6, -1.0, 0.7, 0.8]]);
        assert!((coverage_error(first.view(), y.view()).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(coverage_error(last.view(), y.view()).unwrap(), 1.0);
    }

    #[test]
    fn micro_f1_cases() {
        let t = arr2(&[[1u8, 1, 0, 0]]);
        assert_eq!(micro_f1(t.view(), t.view()).unwrap(), 1.0);
        let d = arr2(&[[1u8, 0, 1, 0], [1, 0, 0, 0]]);
        let t2 = arr2(&[[1u8, 1, 0, 0], [1, 0, 0, 0]]);
        // TP 2, FP 1, FN 1
        assert!((micro_f1(d.view(), t2.view()).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let none = arr2(&[[0u8, 0, 0, 0]]);
        assert_eq!(micro_f1(none.view(), t.view()).unwrap(), 0.0);
    }
}
