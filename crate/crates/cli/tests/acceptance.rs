//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero on any failure not listed in `KNOWN_GAPS`.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use pmlfs::data::inject_candidate_noise;
use pmlfs::encoder::{init_parameters, EncoderConfig};
use pmlfs::eval::metrics::{coverage_error, hamming_loss, micro_f1, ranking_loss};
use pmlfs::eval::stats::friedman_from_average_ranks;
use pmlfs::harness::{cmd_budget_curve, cmd_run, desk_cv_config, DataSource, RunConfig};
use pmlfs::seed;
use pmlfs::stage1::{export_pseudo_labels, policy_probabilities_batch, sample_action, LabelMode, Stage1Config, Stage1Trainer};
use pmlfs::stage2::{rollout_batch, Stage2Config};
use pmlfs::verify::{
    analytic_gradient, equivalence_check, excess_risk_check, gradient_suite_check, make_synthetic,
    unbiasedness_check, SyntheticSpec, TinyInstance,
};
use rand::Rng as _;

/// Criterion parts that are known not to hold; see the README.
const KNOWN_GAPS: [&str; 2] = ["6:hl", "8:eps"];

struct Outcome {
    id: usize,
    name: &'static str,
    /// Failing parts, tagged `id:part`.
    failed: Vec<String>,
    detail: String,
}

impl Outcome {
    fn new(id: usize, name: &'static str) -> Outcome {
        Outcome {
            id,
            name,
            failed: Vec::new(),
            detail: String::new(),
        }
    }

    fn part(&mut self, tag: &str, ok: bool, detail: String) {
        if !ok {
            self.failed.push(format!("{}:{tag}", self.id));
        }
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(&detail);
    }

    fn unexpected(&self) -> Vec<&String> {
        self.failed.iter().filter(|f| !KNOWN_GAPS.contains(&f.as_str())).collect()
    }
}

fn c1_equivalence() -> Outcome {
    let mut o = Outcome::new(1, "return/risk equivalence");
    let t = Instant::now();
    let c = equivalence_check(0);
    let secs = t.elapsed().as_secs_f64();
    o.part("value", c.passed, format!("max |J + R| = {:.2e}", c.measured));
    o.part("time", secs < 5.0, format!("{secs:.2} s"));
    o
}

fn c2_gradients() -> Outcome {
    let mut o = Outcome::new(2, "gradient suite");
    let t = Instant::now();
    let c = gradient_suite_check(false).expect("gradient suite runs");
    let secs = t.elapsed().as_secs_f64();
    o.part("value", c.passed, format!("max relative error {:.2e} ({})", c.measured, c.detail));
    o.part("time", secs < 60.0, format!("{secs:.1} s"));
    let mutated = gradient_suite_check(true).expect("gradient suite runs");
    o.part("mutant", !mutated.passed, format!("corrupted BCE caught: {}", !mutated.passed));
    o
}

fn c3_c4_reinforce() -> (Outcome, Outcome) {
    let mut o3 = Outcome::new(3, "REINFORCE unbiasedness");
    let mut o4 = Outcome::new(4, "second-moment bound");
    let bern = TinyInstance::new(vec![1.0], 1, vec![0], vec![0.0, 1.0]).unwrap();
    let g = analytic_gradient(&bern, &Array2::zeros((1, 1)))[[0, 0]];
    o3.part("analytic", (g - 0.25).abs() < 1e-15, format!("dF/dθ(0) = {g}"));
    let (unbiased, bound) = unbiasedness_check(0, 100_000);
    o3.part("mc", unbiased.passed, format!("worst {:.2} SE ({})", unbiased.measured, unbiased.detail));
    o4.part("bound", bound.passed, format!("{} violations; {}", bound.measured, bound.detail));
    (o3, o4)
}

fn c5_metrics() -> Outcome {
    let mut o = Outcome::new(5, "metric oracles");
    let mut rng = seed::rng(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=20);
        let l = rng.random_range(2..=8);
        let s = Array2::from_shape_fn((n, l), |_| f64::from(rng.random_range(0..6u8)) / 5.0);
        let mut y = Array2::from_shape_fn((n, l), |_| rng.random_range(0..2u8));
        for mut row in y.rows_mut() {
            row[0] = 1;
            row[l - 1] = 0;
        }
        let z = Array2::from_shape_fn((n, l), |_| rng.random_range(0..2u8));
        let (mut rl, mut ce) = (0.0, 0.0);
        let (mut wrong, mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let (mut bad, mut pairs, mut depth) = (0.0, 0.0, 0usize);
            for j in 0..l {
                if y[[i, j]] == 1 {
                    let ahead = (0..l).filter(|&k| s[[i, k]] > s[[i, j]] || (s[[i, k]] == s[[i, j]] && k < j)).count();
                    depth = depth.max(ahead + 1);
                }
                for k in 0..l {
                    if y[[i, j]] == 1 && y[[i, k]] == 0 {
                        pairs += 1.0;
                        bad += if s[[i, j]] < s[[i, k]] { 1.0 } else if s[[i, j]] == s[[i, k]] { 0.5 } else { 0.0 };
                    }
                }
                match (z[[i, j]], y[[i, j]]) {
                    (1, 1) => tp += 1.0,
                    (1, 0) => {
                        fp += 1.0;
                        wrong += 1.0
                    }
                    (0, 1) => {
                        fn_ += 1.0;
                        wrong += 1.0
                    }
                    _ => {}
                }
            }
            rl += bad / pairs / n as f64;
            ce += depth as f64 / l as f64 / n as f64;
        }
        let f1: f64 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        for (got, want) in [
            (ranking_loss(s.view(), y.view()).unwrap(), rl),
            (coverage_error(s.view(), y.view()).unwrap(), ce),
            (hamming_loss(z.view(), y.view()).unwrap(), wrong / (n * l) as f64),
            (micro_f1(z.view(), y.view()).unwrap(), f1),
        ] {
            worst = worst.max((got - want).abs());
        }
    }
    o.part("oracle", worst < 1e-12, format!("max deviation {worst:.1e} over 200 pairs"));
    o
}

fn c6_friedman() -> Outcome {
    let mut o = Outcome::new(6, "Friedman reproduction");
    let rows: [(&str, [f64; 9], f64, f64); 4] = [
        ("rl", [1.167, 3.333, 3.556, 3.556, 8.000, 5.333, 5.722, 6.556, 7.778], 49.70, 17.83),
        ("f1", [1.333, 3.556, 4.667, 6.722, 6.889, 6.000, 5.611, 5.222, 5.000], 28.32, 5.19),
        ("hl", [1.667, 8.111, 5.000, 4.167, 4.333, 6.333, 6.500, 4.333, 4.556], 32.19, 6.47),
        ("ce", [3.500, 3.278, 1.833, 3.611, 7.222, 5.722, 6.667, 6.056, 7.111], 37.18, 8.54),
    ];
    for (tag, ranks, chi2, f) in rows {
        let r = friedman_from_average_ranks(&ranks, 9).unwrap();
        let ok = (r.chi2 - chi2).abs() <= 0.05 && (r.f - f).abs() <= 0.05;
        o.part(tag, ok, format!("{tag} χ² {:.3} (want {chi2}) F {:.3} (want {f})", r.chi2, r.f));
    }
    o
}

fn c7_constraints() -> Outcome {
    let mut o = Outcome::new(7, "constraint invariants");
    let spec = SyntheticSpec { n: 200, d: 12, labels: 6, informative: 6, seed: 7, ..SyntheticSpec::default() };
    let ds = inject_candidate_noise(&make_synthetic(&spec).unwrap(), 0.3, 7).unwrap();
    let store = init_parameters(&EncoderConfig::desk(7), ds.n_features(), ds.n_labels()).unwrap();
    let p = policy_probabilities_batch(&store, ds.features().view(), ds.candidates()).unwrap();
    let mut rng = seed::rng(7);
    let mut bad1 = 0;
    for k in 0..10_000 {
        let i = k % ds.n_instances();
        let a = sample_action(p.row(i), &ds.candidates()[i], &mut rng);
        bad1 += (0..ds.n_labels()).filter(|&j| a.z[j] == 1 && !ds.candidates()[i].contains(&j)).count();
    }
    let cfg = Stage1Config { epochs: 3, lr_pol: 1e-2, lr_disc: 1e-2, ..Stage1Config::default() };
    let mut trainer = Stage1Trainer::new(store, cfg.clone()).unwrap();
    trainer.train(&ds).unwrap();
    for mode in [LabelMode::Hard, LabelMode::Soft] {
        let t = export_pseudo_labels(&trainer.store, &ds, &Stage1Config { mode, ..cfg.clone() }, 3).unwrap().targets();
        for i in 0..ds.n_instances() {
            bad1 += (0..ds.n_labels()).filter(|&j| t[[i, j]] != 0.0 && !ds.candidates()[i].contains(&j)).count();
        }
    }
    o.part("stage1", bad1 == 0, format!("{bad1} non-candidate positives in 10^4 samples + exports"));

    let s2 = Stage2Config { budget: 5, ..Stage2Config::default() };
    let ids: Vec<usize> = (0..ds.n_instances()).collect();
    let (mut trajectories, mut bad2) = (0, 0);
    while trajectories < 10_000 {
        let r = rollout_batch(&trainer.store, ds.features().view(), &ids, &s2, &mut rng, false).unwrap();
        for t in &r.trajectories {
            let mut sorted = t.actions.clone();
            sorted.sort_unstable();
            sorted.dedup();
            let popcount = t.final_mask(ds.n_features()).iter().filter(|&&v| v == 1).count();
            if sorted.len() != t.actions.len() || popcount != s2.budget.min(ds.n_features()) {
                bad2 += 1;
            }
        }
        trajectories += r.trajectories.len();
    }
    o.part("stage2", bad2 == 0, format!("{bad2} bad of {trajectories} trajectories"));
    o
}

fn desk_run(seed_value: u64, root: &Path) -> RunConfig {
    let data = DataSource::Synthetic(SyntheticSpec { n: 555, d: 49, labels: 6, seed: seed_value, ..SyntheticSpec::default() });
    let mut cv = desk_cv_config();
    cv.dataset_id = data.default_id();
    cv.noise_rate = 0.2;
    cv.folds = 5;
    cv.budgets = vec![20];
    cv.stage2.budget = 20;
    cv.master_seed = seed_value;
    RunConfig { data, cv, output_dir: Some(root.to_path_buf()) }
}

fn c8_desk(root: &Path) -> Outcome {
    let mut o = Outcome::new(8, "end-to-end desk run");
    let t = Instant::now();
    let (mut f1_wins, mut eps_wins, mut slowest) = (0, 0, 0.0f64);
    let mut lines = Vec::new();
    for s in 0..10 {
        let start = Instant::now();
        let mut cfg = desk_run(s, root);
        cfg.cv.random_control = true;
        let out = cmd_run(&cfg).expect("desk run");
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let learned = mean(out.records.iter().map(|r| r.micro_f1).collect());
        let random = mean(out.control_records().iter().map(|r| r.micro_f1).collect());
        let eps = mean(out.folds.iter().map(|f| f.epsilon_pseudo).collect());
        let base = mean(out.folds.iter().map(|f| f.epsilon_baseline).collect());
        f1_wins += usize::from(learned > random);
        eps_wins += usize::from(eps < base);
        lines.push(format!("s{s} F1 {learned:.3}/{random:.3} ε {eps:.3}/{base:.3}"));
    }
    let total = t.elapsed().as_secs_f64();
    o.part("time", slowest < 600.0, format!("slowest seed {slowest:.0} s, total {total:.0} s"));
    o.part("ranking", f1_wins >= 9, format!("learned beats random Micro-F1 in {f1_wins}/10"));
    o.part("eps", eps_wins >= 9, format!("ε_pseudo below all-candidates baseline in {eps_wins}/10"));
    println!("    {}", lines.join(" | "));
    o
}

fn c9_budget_curve(root: &Path) -> Outcome {
    let mut o = Outcome::new(9, "budget-curve trend");
    let grid = [2, 5, 10, 20, 30, 40];
    let (mut f1, mut rl) = (0.0, 0.0);
    for s in 0..5 {
        let (_, curve) = cmd_budget_curve(&desk_run(s, root), &grid).expect("budget curve");
        f1 += curve.spearman["micro_f1"] / 5.0;
        rl += curve.spearman["rl"] / 5.0;
    }
    o.part("f1", f1 > 0.6, format!("mean ρ(Micro-F1, budget) = {f1:.3}"));
    o.part("rl", rl < -0.6, format!("mean ρ(RL, budget) = {rl:.3}"));
    o
}

fn c10_excess_risk() -> Outcome {
    let mut o = Outcome::new(10, "excess-risk trend");
    let c = excess_risk_check(0).expect("probe runs");
    o.part("rho", c.passed, format!("mean ρ = {:.3} ({})", c.measured, c.detail));
    o
}

fn c11_determinism(root: &Path) -> Outcome {
    let mut o = Outcome::new(11, "CLI determinism");
    let bin = env!("CARGO_BIN_EXE_pmlfs");
    let run = |out: &Path, args: &[&str]| -> Vec<u8> {
        let res = Command::new(bin).args(args).arg("--output-dir").arg(out).output().expect("spawn pmlfs");
        assert!(res.status.success(), "pmlfs {args:?} failed: {}", String::from_utf8_lossy(&res.stderr));
        res.stdout
    };
    let run_args = [
        "run", "--synthetic", "n=120,d=10,L=4,seed=3", "--noise", "0.2", "--folds", "3", "--budgets", "3,6",
        "--preset", "desk", "--stage1-epochs", "3", "--stage2-epochs", "3", "--random-control", "--seed", "3",
    ];
    let (a, b) = (root.join("det-a"), root.join("det-b"));
    let same_stdout = run(&a, &run_args) == run(&b, &run_args);
    let files = |dir: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = walk(dir)
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()))
            .collect();
        v.sort();
        v
    };
    let (fa, fb) = (files(&a), files(&b));
    o.part("run", same_stdout && fa == fb && !fa.is_empty(), format!("run: {} CSVs byte-identical: {}", fa.len(), fa == fb));

    let results: Vec<String> = fa
        .iter()
        .filter(|(n, _)| n.contains("results-") || n.contains("control-"))
        .map(|(n, _)| a.join(n).display().to_string())
        .collect();
    let mut stats_args = vec!["stats"];
    stats_args.extend(results.iter().map(String::as_str));
    let (sa, sb) = (root.join("stats-a"), root.join("stats-b"));
    let same = run(&sa, &stats_args) == run(&sb, &stats_args) && files(&sa) == files(&sb);
    o.part("stats", same, format!("stats: identical {same}"));

    let curve_args = [
        "budget-curve", "--synthetic", "n=90,d=8,L=3,seed=1", "--folds", "3", "--preset", "desk", "--stage1-epochs", "2",
        "--stage2-epochs", "2", "--grid", "2,4,8",
    ];
    let (ba, bb) = (root.join("curve-a"), root.join("curve-b"));
    let same = run(&ba, &curve_args) == run(&bb, &curve_args) && files(&ba) == files(&bb);
    o.part("budget-curve", same, format!("budget-curve: identical {same}"));
    o
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).into_iter().flatten().flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let mut outcomes = vec![c1_equivalence(), c2_gradients()];
    let (o3, o4) = c3_c4_reinforce();
    outcomes.extend([o3, o4, c5_metrics(), c6_friedman(), c7_constraints()]);
    for o in outcomes.iter() {
        report(o);
    }
    let tail = [c8_desk(root), c9_budget_curve(root), c10_excess_risk(), c11_determinism(root)];
    for o in tail.iter() {
        report(o);
    }
    outcomes.extend(tail);

    let unexpected: Vec<String> = outcomes.iter().flat_map(|o| o.unexpected()).cloned().collect();
    let known: Vec<String> = outcomes.iter().flat_map(|o| o.failed.iter()).filter(|f| KNOWN_GAPS.contains(&f.as_str())).cloned().collect();
    let passed = outcomes.iter().filter(|o| o.failed.is_empty()).count();
    println!("acceptance: {passed}/{} criteria pass; known gaps failing: {known:?}", outcomes.len());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

fn report(o: &Outcome) {
    let status = if o.failed.is_empty() { "PASS" } else { "FAIL" };
    let note = if !o.failed.is_empty() && o.unexpected().is_empty() { " [known gap]" } else { "" };
    println!("{status} {:>2} {:<28} {}{note}", o.id, o.name, o.detail);
}
