//! Scalar kernels shared by the losses, policies and statistics.

/// Lower/upper clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross-entropy between a logit and a (possibly soft) target,
/// in the overflow-free form `max(u,0) - u z + ln(1 + e^{-|u|})`.
#[inline]
pub fn bce_with_logits(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// d/du of [`bce_with_logits`].
#[inline]
pub fn bce_with_logits_grad(logit: f64, target: f64) -> f64 {
    sigmoid(logit) - target
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mid-ranks (1-based, ties share the average rank) in ascending order of `values`.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Spearman rank correlation (Pearson correlation of mid-ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&mid_ranks(a), &mid_ranks(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_matches_probability_form() {
        for &(u, z) in &[(0.0, 1.0), (2.5, 0.0), (-3.0, 1.0), (1.2, 0.3), (-40.0, 0.0)] {
            let p = clamp_prob(sigmoid(u));
            let naive = -(z * p.ln() + (1.0 - z) * (1.0 - p).ln());
            assert!((bce_with_logits(u, z) - naive).abs() < 1e-9, "u={u} z={z}");
        }
        assert!((bce_with_logits(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        // large logits stay finite
        assert!(bce_with_logits(800.0, 0.0).is_finite());
        assert!(bce_with_logits(-800.0, 1.0).is_finite());
    }

    #[test]
    fn mid_ranks_average_ties() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(mid_ranks(&[1.0, 1.0, 2.0, 2.0]), vec![1.5, 1.5, 3.5, 3.5]);
    }

    #[test]
    fn spearman_of_monotone_is_one() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [10.0, 20.0, 35.0, 100.0];
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
        let c = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&a, &c) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_and_lse_agree() {
        let v = [0.3, -1.0, 2.0, 1e-3];
        let s = softmax(&v);
        let lse = log_sum_exp(&v);
        for (vi, si) in v.iter().zip(&s) {
            assert!(((vi - lse).exp() - si).abs() < 1e-15);
        }
    }
}
