//! Rank tables and the Friedman / Iman–Davenport test, with the
//! regularized incomplete gamma and beta functions behind the p-values.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{PmlError, Result};
use crate::math::mid_ranks;

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut sum = 1.0 / a;
    let mut term = sum;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 − P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_continued_fraction(a, x)
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Upper tail of the chi-squared distribution with `dof` degrees of freedom.
pub fn chi2_sf(x: f64, dof: f64) -> f64 {
    gamma_q(dof / 2.0, x / 2.0)
}

/// Upper tail of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    beta_inc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))
}

/// Per-dataset ranks (1 = best, ties share mid-ranks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    /// `ranks[[dataset, method]]`.
    pub ranks: Array2<f64>,
}

impl RankTable {
    /// Ranks each dataset row of `values` (datasets × methods).
    pub fn from_values(
        methods: Vec<String>,
        datasets: Vec<String>,
        values: &Array2<f64>,
        higher_is_better: bool,
    ) -> Result<RankTable> {
        if values.dim() != (datasets.len(), methods.len()) {
            return Err(PmlError::Dimension {
                expected: datasets.len() * methods.len(),
                actual: values.len(),
                context: "rank table values",
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PmlError::InvalidData("rank table has a missing or non-finite cell".into()));
        }
        let mut ranks = Array2::zeros(values.raw_dim());
        for (i, row) in values.rows().into_iter().enumerate() {
            let keyed: Vec<f64> = row.iter().map(|&v| if higher_is_better { -v } else { v }).collect();
            for (j, r) in mid_ranks(&keyed).into_iter().enumerate() {
                ranks[[i, j]] = r;
            }
        }
        Ok(RankTable {
            methods,
            datasets,
            ranks,
        })
    }

    pub fn average_ranks(&self) -> Vec<f64> {
        self.ranks
            .mean_axis(ndarray::Axis(0))
            .map(|a| a.to_vec())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub k: usize,
    pub n: usize,
    pub chi2: f64,
    pub p_chi2: f64,
    /// `+∞` when `χ² ≥ N(k−1)`.
    pub f: f64,
    pub p_f: f64,
}

/// Friedman χ² and the Iman–Davenport F from the average ranks of `k`
/// methods over `n` datasets.
pub fn friedman_from_average_ranks(avg: &[f64], n: usize) -> Result<FriedmanResult> {
    let k = avg.len();
    if k < 2 {
        return Err(PmlError::Metric("k ≥ 2 required".into()));
    }
    if n < 2 {
        return Err(PmlError::Metric("N ≥ 2 required".into()));
    }
    let (kf, nf) = (k as f64, n as f64);
    let sum_sq: f64 = avg.iter().map(|r| r * r).sum();
    let chi2 = 12.0 * nf / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0).powi(2) / 4.0);
    let p_chi2 = chi2_sf(chi2, kf - 1.0);
    let denom = nf * (kf - 1.0) - chi2;
    let (f, p_f) = if denom <= 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (nf - 1.0) * chi2 / denom;
        (f, f_sf(f, kf - 1.0, (kf - 1.0) * (nf - 1.0)))
    };
    Ok(FriedmanResult {
        k,
        n,
        chi2,
        p_chi2,
        f,
        p_f,
    })
}

pub fn friedman_test(table: &RankTable) -> Result<FriedmanResult> {
    friedman_from_average_ranks(&table.average_ranks(), table.datasets.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_of_integers() {
        for (n, fact) in [(1.0, 1.0), (2.0, 1.0), (5.0, 24.0), (10.0, 362_880.0)] {
            assert!((ln_gamma(n) - f64::ln(fact)).abs() < 1e-12);
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn chi2_two_dof_is_exponential() {
        for x in [0.1, 1.0, 4.0, 30.0] {
            assert!((chi2_sf(x, 2.0) - (-x / 2.0).exp()).abs() < 1e-13);
        }
    }

    #[test]
    fn beta_symmetry_and_uniform() {
        assert!((beta_inc(1.0, 1.0, 0.3) - 0.3).abs() < 1e-14);
        let v = beta_inc(2.5, 4.0, 0.35);
        assert!((v + beta_inc(4.0, 2.5, 0.65) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn all_tied_gives_zero() {
        let r = friedman_from_average_ranks(&[2.5; 4], 6).unwrap();
        assert!(r.chi2.abs() < 1e-12);
        assert!((r.p_chi2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_method_rejected() {
        let err = friedman_from_average_ranks(&[1.0], 5).unwrap_err();
        assert!(err.to_string().contains("k ≥ 2 required"));
    }

    #[test]
    fn saturated_statistic_reports_infinite_f() {
        // every dataset ranks the methods identically
        let r = friedman_from_average_ranks(&[1.0, 2.0, 3.0], 4).unwrap();
        assert!((r.chi2 - 8.0).abs() < 1e-12);
        assert!(r.f.is_infinite());
        assert_eq!(r.p_f, 0.0);
    }

    #[test]
    fn identical_methods_share_mid_rank() {
        let values = ndarray::arr2(&[[0.3, 0.3], [0.1, 0.1]]);
        let t = RankTable::from_values(vec!["a".into(), "b".into()], vec!["x".into(), "y".into()], &values, false).unwrap();
        assert!(t.ranks.iter().all(|&r| r == 1.5));
    }
}
