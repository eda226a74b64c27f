use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    analytic_gradient, estimator_moments, excess_risk_probe, exact_return, expected_loss, gradient_suite,
    interior_optimum_task, make_synthetic, quartile_means, scalar_stationary_point, stationarity_trace,
    GradientSuiteConfig, SyntheticSpec, TinyInstance, TraceConfig,
};
use crate::error::Result;
use crate::eval::downstream::DownstreamConfig;
use crate::eval::metrics;
use crate::seed;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationOptions {
    pub seed: u64,
    /// Fault injection: corrupt the BCE derivative in the gradient suite.
    pub mutate_bce: bool,
}

/// One line of the report: `passed` is `measured <= tolerance` unless the
/// check says otherwise in `detail`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Check {
        Check {
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
            detail: detail.into(),
        }
    }

    fn at_least(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Check {
        Check {
            name: name.into(),
            measured,
            tolerance,
            passed: measured >= tolerance,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

pub const REPORT_SCHEMA: &str = "pmlfs-verify/1";

fn random_theta(inst: &TinyInstance, rng: &mut seed::Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((inst.n_labels, inst.x.len()), || rng.random_range(-1.5..1.5))
}

fn random_policy(inst: &TinyInstance, rng: &mut seed::Rng) -> Vec<f64> {
    (0..inst.n_labels)
        .map(|j| if inst.candidates.contains(&j) { rng.random() } else { 0.0 })
        .collect()
}

/// Largest `|mean − exact| / SE` over all components, SE floored at 1e-12.
fn z_score(mean: &Array2<f64>, se: &Array2<f64>, exact: &Array2<f64>) -> f64 {
    mean.iter()
        .zip(se)
        .zip(exact)
        .map(|((m, s), e)| {
            let d = (m - e).abs();
            if *s == 0.0 {
                if d < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                d / s
            }
        })
        .fold(0.0, f64::max)
}

pub fn equivalence_check(seed_value: u64) -> Check {
    let mut rng = seed::derived_rng(seed_value, "verify/equivalence");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let inst = TinyInstance::random(&mut rng);
        for _ in 0..20 {
            let p = random_policy(&inst, &mut rng);
            let r = exact_return(&inst, &p);
            worst = worst.max((r.ret + r.risk).abs());
        }
    }
    Check::at_most("return_risk_equivalence", worst, 1e-12, "max |J + R| over 100 instances × 20 policies")
}

pub fn unbiasedness_check(seed_value: u64, samples: usize) -> (Check, Check) {
    let mut rng = seed::derived_rng(seed_value, "verify/unbiasedness");
    let mut cases = vec![(
        TinyInstance::new(vec![1.0], 1, vec![0], vec![0.0, 1.0]).expect("valid"),
        Array2::zeros((1, 1)),
    )];
    while cases.len() < 21 {
        let inst = TinyInstance::random(&mut rng);
        if inst.candidates.is_empty() {
            continue;
        }
        let theta = random_theta(&inst, &mut rng);
        cases.push((inst, theta));
    }
    let mut worst_z = 0.0f64;
    let mut violations = 0;
    let mut worst_ratio = 0.0f64;
    for (inst, theta) in &cases {
        let m = estimator_moments(inst, theta, samples, &mut rng);
        worst_z = worst_z.max(z_score(&m.mean, &m.std_error, &analytic_gradient(inst, theta)));
        violations += m.violations;
        if m.norm_bound > 0.0 {
            worst_ratio = worst_ratio.max(m.second_moment / (m.norm_bound * m.norm_bound));
        }
    }
    (
        Check::at_most(
            "reinforce_unbiasedness",
            worst_z,
            3.0,
            format!("max standard-error distance over {} cases × {samples} samples", cases.len()),
        ),
        Check {
            name: "second_moment_bound".into(),
            measured: violations as f64,
            tolerance: 0.0,
            passed: violations == 0 && worst_ratio <= 1.0,
            detail: format!("samples with ‖g‖ > M·L_π; worst E‖g‖²/(M·L_π)² = {worst_ratio:.4}"),
        },
    )
}

pub fn monte_carlo_return_check(seed_value: u64) -> Check {
    let mut rng = seed::derived_rng(seed_value, "verify/mc-return");
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let inst = TinyInstance::random(&mut rng);
        let p = random_policy(&inst, &mut rng);
        let exact = exact_return(&inst, &p).ret;
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let mut mask = 0;
            for (bit, &j) in inst.candidates.iter().enumerate() {
                if rng.random::<f64>() < p[j] {
                    mask |= 1 << bit;
                }
            }
            let r = -inst.losses[mask];
            s += r;
            s2 += r * r;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
        let z = if se == 0.0 { (mean - exact).abs() / 1e-12 } else { (mean - exact).abs() / se };
        worst = worst.max(z);
    }
    Check::at_most("monte_carlo_return", worst, 4.0, "standard errors between sampled and enumerated return")
}

pub fn optimality_check(seed_value: u64) -> Check {
    let mut rng = seed::derived_rng(seed_value, "verify/optimality");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let inst = TinyInstance::random(&mut rng);
        let best = inst.best_action();
        let z = inst.action(best);
        let p: Vec<f64> = z.iter().map(|&v| f64::from(v)).collect();
        let j_star = exact_return(&inst, &p).ret;
        let min_loss = inst.losses.iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.max((j_star + min_loss).abs());
        // no other deterministic policy does better
        for m in 0..inst.action_count() {
            let pm: Vec<f64> = inst.action(m).iter().map(|&v| f64::from(v)).collect();
            if exact_return(&inst, &pm).ret > j_star {
                worst = f64::INFINITY;
            }
        }
    }
    Check::at_most("optimal_action_return", worst, 1e-15, "|J* + min ℓ| for point masses on argmin ℓ")
}

pub fn policy_gradient_fd_check(seed_value: u64) -> Check {
    let mut rng = seed::derived_rng(seed_value, "verify/policy-fd");
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let inst = TinyInstance::random(&mut rng);
        let theta = random_theta(&inst, &mut rng);
        let g = analytic_gradient(&inst, &theta);
        let h = 1e-6;
        for idx in ndarray::indices(theta.raw_dim()) {
            let mut up = theta.clone();
            up[idx] += h;
            let mut dn = theta.clone();
            dn[idx] -= h;
            let fd = (expected_loss(&inst, &up) - expected_loss(&inst, &dn)) / (2.0 * h);
            worst = worst.max((fd - g[idx]).abs());
        }
    }
    Check::at_most("policy_gradient_fd", worst, 1e-8, "max |analytic − central difference| on tiny instances")
}

pub fn stationarity_checks(seed_value: u64) -> Result<(Check, Check)> {
    let task = interior_optimum_task();
    let cfg = TraceConfig::default();
    let mut worst_ratio = 0.0f64;
    for s in 0..5 {
        let mut rng = seed::derived_rng(seed_value, &format!("verify/trace{s}"));
        let trace = stationarity_trace(&task, &Array2::from_elem((1, 1), 0.0), &cfg, &mut rng);
        let est: Vec<f64> = trace.iter().map(|t| t.estimated).collect();
        let (first, last) = quartile_means(&est);
        worst_ratio = worst_ratio.max(last / first);
    }
    let root = scalar_stationary_point(&task, -20.0, 0.0)?;
    let mut rng = seed::derived_rng(seed_value, "verify/trace-optimum");
    let trace = stationarity_trace(&task, &Array2::from_elem((1, 1), root), &cfg, &mut rng);
    // noise floor: 4 standard errors of an epoch mean of single-sample
    // estimates bounded by max ‖g‖ = max ℓ · max |x| = 1
    let floor = 4.0 / ((cfg.steps_per_epoch * cfg.samples_per_step) as f64).sqrt();
    let peak = trace.iter().map(|t| t.estimated).fold(0.0, f64::max);
    Ok((
        Check::at_most(
            "stationarity_trend",
            worst_ratio,
            0.5,
            "worst final/first quartile ratio of the estimated gradient norm over 5 seeds from θ = 0",
        ),
        Check::at_most(
            "stationary_start_stays_flat",
            peak,
            floor,
            format!("peak estimated norm when started at the analytic optimum θ* = {root:.6}"),
        ),
    ))
}

pub fn synthetic_baseline_check(seed_value: u64) -> Result<Check> {
    let spec = SyntheticSpec {
        n: 20_000,
        d: 8,
        labels: 4,
        informative: 4,
        candidate_noise: 0.2,
        seed: seed::derive(seed_value, "verify/synthetic"),
        ..SyntheticSpec::default()
    };
    let ds = make_synthetic(&spec)?;
    let truth = ds.truth().expect("synthetic truth");
    let eps = metrics::epsilon_pseudo(ds.candidate_matrix().view(), truth.view())?;
    let neg_frac = truth.iter().filter(|&&v| v == 0).count() as f64 / truth.len() as f64;
    Ok(Check::at_most(
        "synthetic_noise_level",
        (eps - 0.2 * neg_frac).abs(),
        0.01,
        format!("|ε(all candidates) − 0.2 × negative fraction|, ε = {eps:.4}"),
    ))
}

pub fn excess_risk_check(seed_value: u64) -> Result<Check> {
    let rates = [0.0, 0.1, 0.2, 0.4];
    let mut rhos = Vec::new();
    for s in 0..5 {
        let spec = SyntheticSpec {
            seed: seed::derive(seed_value, &format!("verify/probe{s}")),
            ..SyntheticSpec::default()
        };
        rhos.push(excess_risk_probe(&spec, &rates, &DownstreamConfig::default())?.1);
    }
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    Ok(Check::at_least(
        "excess_risk_trend",
        mean,
        0.8,
        format!("mean Spearman ρ(ε_pseudo, test risk) over 5 seeds: {rhos:?}"),
    ))
}

pub fn gradient_suite_check(mutate_bce: bool) -> Result<Check> {
    let checks = gradient_suite(&GradientSuiteConfig {
        mutate_bce,
        ..GradientSuiteConfig::default()
    })?;
    let worst = checks.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    let failing: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.block.as_str()).collect();
    Ok(Check::at_most(
        "encoder_gradient_fd",
        worst,
        1e-4,
        if failing.is_empty() {
            format!("{} blocks", checks.len())
        } else {
            format!("failing blocks: {}", failing.join(", "))
        },
    ))
}

/// Runs every oracle and collects the outcome.
pub fn run_verification(opts: &VerificationOptions) -> Result<VerificationReport> {
    let mut checks = vec![
        equivalence_check(opts.seed),
        optimality_check(opts.seed),
        monte_carlo_return_check(opts.seed),
        policy_gradient_fd_check(opts.seed),
    ];
    let (unbiased, bound) = unbiasedness_check(opts.seed, 100_000);
    checks.push(unbiased);
    checks.push(bound);
    let (trend, flat) = stationarity_checks(opts.seed)?;
    checks.push(trend);
    checks.push(flat);
    checks.push(gradient_suite_check(opts.mutate_bce)?);
    checks.push(synthetic_baseline_check(opts.seed)?);
    checks.push(excess_risk_check(opts.seed)?);
    Ok(VerificationReport {
        schema: REPORT_SCHEMA.into(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
