//! Brute-force oracles over enumerable instances, the finite-difference
//! gradient suite, synthetic data with known truth, and the report that
//! `verify` prints.

mod gradcheck;
mod report;
mod synthetic;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{PmlError, Result};
use crate::math::sigmoid;
use crate::seed::Rng;

pub use gradcheck::{encode_jvp_check, gradient_suite, BlockCheck, GradientSuiteConfig};
pub use report::{run_verification, Check, VerificationOptions, VerificationReport, REPORT_SCHEMA};
pub use report::{equivalence_check, excess_risk_check, gradient_suite_check, stationarity_checks, unbiasedness_check};
pub use synthetic::{excess_risk_probe, make_synthetic, ProbePoint, SyntheticSpec};

/// An instance small enough to enumerate every admissible action.
///
/// `losses[mask]` is the loss of the action whose bit `i` is the decision on
/// `candidates[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyInstance {
    pub x: Vec<f64>,
    pub n_labels: usize,
    pub candidates: Vec<usize>,
    pub losses: Vec<f64>,
}

impl TinyInstance {
    pub fn new(x: Vec<f64>, n_labels: usize, candidates: Vec<usize>, losses: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() > 8 || n_labels == 0 || n_labels > 3 {
            return Err(PmlError::Config("tiny instances need 1 ≤ d ≤ 8 and 1 ≤ L ≤ 3".into()));
        }
        if candidates.windows(2).any(|w| w[0] >= w[1]) || candidates.iter().any(|&j| j >= n_labels) {
            return Err(PmlError::Config("candidates must be increasing label indices".into()));
        }
        if losses.len() != 1 << candidates.len() {
            return Err(PmlError::Config(format!(
                "loss table needs {} entries, got {}",
                1 << candidates.len(),
                losses.len()
            )));
        }
        if losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(PmlError::Config("losses must be finite and non-negative".into()));
        }
        Ok(TinyInstance {
            x,
            n_labels,
            candidates,
            losses,
        })
    }

    /// A random instance with losses in `[0, 1)`.
    pub fn random(rng: &mut Rng) -> TinyInstance {
        let d = rng.random_range(1..=8);
        let l = rng.random_range(1..=3);
        let candidates: Vec<usize> = (0..l).filter(|_| rng.random_bool(0.7)).collect();
        let x = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let losses = (0..1 << candidates.len()).map(|_| rng.random()).collect();
        TinyInstance::new(x, l, candidates, losses).expect("valid by construction")
    }

    pub fn action_count(&self) -> usize {
        self.losses.len()
    }

    /// Full label vector of action `mask`.
    pub fn action(&self, mask: usize) -> Vec<u8> {
        let mut z = vec![0u8; self.n_labels];
        for (bit, &j) in self.candidates.iter().enumerate() {
            z[j] = ((mask >> bit) & 1) as u8;
        }
        z
    }

    /// `p_j = σ(θ_j · x)` on candidates, 0 elsewhere. `θ` is `L × d`.
    pub fn probabilities(&self, theta: &Array2<f64>) -> Vec<f64> {
        let x = Array1::from(self.x.clone());
        let mut p = vec![0.0; self.n_labels];
        for &j in &self.candidates {
            p[j] = sigmoid(theta.row(j).dot(&x));
        }
        p
    }

    /// `π(Z)` of action `mask` under the factorized Bernoulli policy.
    pub fn action_probability(&self, p: &[f64], mask: usize) -> f64 {
        self.candidates
            .iter()
            .enumerate()
            .map(|(bit, &j)| if (mask >> bit) & 1 == 1 { p[j] } else { 1.0 - p[j] })
            .product()
    }

    /// Mask of the loss-minimizing action (lowest mask on ties).
    pub fn best_action(&self) -> usize {
        (0..self.action_count())
            .min_by(|&a, &b| self.losses[a].total_cmp(&self.losses[b]).then(a.cmp(&b)))
            .expect("at least one action")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnCheck {
    /// `J(π) = −Σ_Z π(Z) ℓ(Z)`.
    pub ret: f64,
    /// `R = E_π[ℓ]`, enumerated over full label vectors.
    pub risk: f64,
}

/// Exact return by enumeration over candidate masks, and the risk by a
/// separate enumeration over every `Z ∈ {0,1}^L`, skipping inadmissible ones.
pub fn exact_return(inst: &TinyInstance, p: &[f64]) -> ReturnCheck {
    let ret = -(0..inst.action_count())
        .map(|m| inst.action_probability(p, m) * inst.losses[m])
        .sum::<f64>();
    let mut risk = 0.0;
    'outer: for z in 0..1usize << inst.n_labels {
        let mut prob = 1.0;
        let mut mask = 0;
        for j in 0..inst.n_labels {
            let on = (z >> j) & 1 == 1;
            match inst.candidates.iter().position(|&c| c == j) {
                Some(bit) => {
                    prob *= if on { p[j] } else { 1.0 - p[j] };
                    if on {
                        mask |= 1 << bit;
                    }
                }
                None if on => continue 'outer,
                None => {}
            }
        }
        risk += prob * inst.losses[mask];
    }
    ReturnCheck { ret, risk }
}

/// `∇ log π(Z)` with respect to θ (`L × d`): `(Z_j − p_j) x` on candidates.
pub fn score_function(inst: &TinyInstance, theta: &Array2<f64>, mask: usize) -> Array2<f64> {
    let p = inst.probabilities(theta);
    let z = inst.action(mask);
    let mut g = Array2::zeros(theta.raw_dim());
    for &j in &inst.candidates {
        for (f, &xf) in inst.x.iter().enumerate() {
            g[[j, f]] = (f64::from(z[j]) - p[j]) * xf;
        }
    }
    g
}

/// Exact `∇_θ Σ_Z π_θ(Z) ℓ(Z)`.
pub fn analytic_gradient(inst: &TinyInstance, theta: &Array2<f64>) -> Array2<f64> {
    let p = inst.probabilities(theta);
    let mut g = Array2::zeros(theta.raw_dim());
    for m in 0..inst.action_count() {
        let w = inst.losses[m] * inst.action_probability(&p, m);
        g.scaled_add(w, &score_function(inst, theta, m));
    }
    g
}

/// Expected loss `F(θ)`.
pub fn expected_loss(inst: &TinyInstance, theta: &Array2<f64>) -> f64 {
    -exact_return(inst, &inst.probabilities(theta)).ret
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Array2<f64>,
    pub std_error: Array2<f64>,
    pub second_moment: f64,
    pub max_norm: f64,
    /// `M · L_π` from the enumeration.
    pub norm_bound: f64,
    /// Samples with `‖g‖ > M · L_π`.
    pub violations: usize,
}

/// Monte Carlo moments of `g = ℓ(Z) ∇ log π(Z)`.
pub fn estimator_moments(inst: &TinyInstance, theta: &Array2<f64>, samples: usize, rng: &mut Rng) -> Moments {
    let p = inst.probabilities(theta);
    let scores: Vec<Array2<f64>> = (0..inst.action_count())
        .map(|m| score_function(inst, theta, m))
        .collect();
    let max_loss = inst.losses.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let max_score = scores
        .iter()
        .map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let norm_bound = max_loss * max_score;
    let mut sum = Array2::<f64>::zeros(theta.raw_dim());
    let mut sum_sq = Array2::<f64>::zeros(theta.raw_dim());
    let mut second = 0.0;
    let mut max_norm = 0.0f64;
    let mut violations = 0;
    for _ in 0..samples {
        let mut mask = 0;
        for (bit, &j) in inst.candidates.iter().enumerate() {
            if rng.random::<f64>() < p[j] {
                mask |= 1 << bit;
            }
        }
        let g = &scores[mask] * inst.losses[mask];
        let sq: f64 = g.iter().map(|v| v * v).sum();
        second += sq;
        max_norm = max_norm.max(sq.sqrt());
        if sq.sqrt() > norm_bound * (1.0 + 1e-12) {
            violations += 1;
        }
        sum += &g;
        sum_sq += &g.mapv(|v| v * v);
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean.mapv(|m| m * m)).mapv(|v| v.max(0.0) * n / (n - 1.0));
    Moments {
        std_error: var.mapv(|v| (v / n).sqrt()),
        mean,
        second_moment: second / n,
        max_norm,
        norm_bound,
        violations,
    }
}

/// Per-epoch record of a stochastic descent run on an enumerable task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePoint {
    pub epoch: usize,
    /// Norm of the epoch-averaged REINFORCE estimate.
    pub estimated: f64,
    /// Norm of the exact gradient at the end of the epoch.
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Actions sampled per instance and averaged in each step's estimate.
    pub samples_per_step: usize,
    /// `α_t = α0 / (1 + t/τ)`.
    pub alpha0: f64,
    pub tau: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            epochs: 40,
            steps_per_epoch: 50,
            samples_per_step: 32,
            alpha0: 0.25,
            tau: 1000.0,
        }
    }
}

/// Mean expected loss of a task sharing one θ.
pub fn task_loss(task: &[TinyInstance], theta: &Array2<f64>) -> f64 {
    task.iter().map(|i| expected_loss(i, theta)).sum::<f64>() / task.len() as f64
}

pub fn task_gradient(task: &[TinyInstance], theta: &Array2<f64>) -> Array2<f64> {
    let mut g = Array2::zeros(theta.raw_dim());
    for inst in task {
        g += &analytic_gradient(inst, theta);
    }
    g / task.len() as f64
}

/// Runs REINFORCE descent on `task` from `theta0` (one action per instance
/// per sample) and reports gradient norms every epoch.
pub fn stationarity_trace(
    task: &[TinyInstance],
    theta0: &Array2<f64>,
    cfg: &TraceConfig,
    rng: &mut Rng,
) -> Vec<TracePoint> {
    let mut theta = theta0.clone();
    let mut t = 0usize;
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut acc = Array2::<f64>::zeros(theta.raw_dim());
        for _ in 0..cfg.steps_per_epoch {
            let mut g = Array2::<f64>::zeros(theta.raw_dim());
            for inst in task {
                let p = inst.probabilities(&theta);
                for _ in 0..cfg.samples_per_step {
                    let mut mask = 0;
                    for (bit, &j) in inst.candidates.iter().enumerate() {
                        if rng.random::<f64>() < p[j] {
                            mask |= 1 << bit;
                        }
                    }
                    g.scaled_add(inst.losses[mask], &score_function(inst, &theta, mask));
                }
            }
            g /= (task.len() * cfg.samples_per_step) as f64;
            acc += &g;
            let alpha = cfg.alpha0 / (1.0 + t as f64 / cfg.tau);
            theta.scaled_add(-alpha, &g);
            t += 1;
        }
        acc /= cfg.steps_per_epoch as f64;
        let norm = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
        trace.push(TracePoint {
            epoch,
            estimated: norm(&acc),
            exact: norm(&task_gradient(task, &theta)),
        });
    }
    trace
}

/// Two one-label instances sharing a scalar θ whose mean expected loss
/// `(σ(θ) + 1 − σ(θ/2)) / 2` has an interior minimum.
pub fn interior_optimum_task() -> Vec<TinyInstance> {
    vec![
        TinyInstance::new(vec![1.0], 1, vec![0], vec![0.0, 1.0]).expect("valid"),
        TinyInstance::new(vec![0.5], 1, vec![0], vec![1.0, 0.0]).expect("valid"),
    ]
}

/// Root of the scalar task gradient on `[lo, hi]` by bisection.
pub fn scalar_stationary_point(task: &[TinyInstance], lo: f64, hi: f64) -> Result<f64> {
    let grad = |t: f64| task_gradient(task, &Array2::from_elem((1, 1), t))[[0, 0]];
    let (mut a, mut b) = (lo, hi);
    let (ga, gb) = (grad(a), grad(b));
    if ga.signum() == gb.signum() {
        return Err(PmlError::Verification("gradient does not change sign on the bracket".into()));
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if grad(m).signum() == ga.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Mean of the first and last quartile of a series.
pub fn quartile_means(series: &[f64]) -> (f64, f64) {
    let q = (series.len() / 4).max(1);
    let first = series[..q].iter().sum::<f64>() / q as f64;
    let last = series[series.len() - q..].iter().sum::<f64>() / q as f64;
    (first, last)
}
