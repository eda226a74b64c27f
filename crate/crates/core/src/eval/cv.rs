//! Cross-validated end-to-end runs.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::downstream::{train_downstream, DownstreamConfig};
use super::metrics;
use crate::data::{inject_candidate_noise, kfold_split, Dataset, FoldSplit, Standardizer};
use crate::encoder::{EncoderConfig, ParameterStore};
use crate::error::{PmlError, Result};
use crate::seed;
use crate::stage1::{EpochStats, PseudoTargets, Stage1Config, Stage1Trainer};
use crate::stage2::{global_ranking, FeatureRanking, Stage2Config, Stage2Stats, Stage2Trainer, Trajectory};

/// Where the feature order used downstream comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingSource {
    Learned,
    /// A uniform random permutation per fold.
    Random,
    /// Features in index order.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub dataset_id: String,
    pub encoder: EncoderConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub downstream: DownstreamConfig,
    /// Candidate noise injected into training folds of truth-only data.
    pub noise_rate: f64,
    pub folds: usize,
    pub budgets: Vec<usize>,
    pub ranking: RankingSource,
    /// Also score a random ranking at every budget.
    pub random_control: bool,
    pub record_trajectories: bool,
    pub master_seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            dataset_id: "dataset".into(),
            encoder: EncoderConfig::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            downstream: DownstreamConfig::default(),
            noise_rate: 0.2,
            folds: 5,
            budgets: vec![20],
            ranking: RankingSource::Learned,
            random_control: false,
            record_trajectories: false,
            master_seed: 0,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return Err(PmlError::Config("budgets must be a non-empty list of positive sizes".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(PmlError::Config("noise rate must lie in [0, 1]".into()));
        }
        if self.folds < 2 {
            return Err(PmlError::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub dataset: String,
    pub fold: usize,
    pub budget: usize,
    pub ranking_loss: f64,
    pub hamming_loss: f64,
    pub coverage_error: f64,
    pub micro_f1: f64,
    pub epsilon_pseudo: f64,
    pub seed: u64,
}

pub const RESULTS_HEADER: &str = "dataset,fold,budget,rl,hl,ce,micro_f1,eps_pseudo,seed";

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.dataset,
            self.fold,
            self.budget,
            self.ranking_loss,
            self.hamming_loss,
            self.coverage_error,
            self.micro_f1,
            self.epsilon_pseudo,
            self.seed
        )
    }

    pub fn in_unit_range(&self) -> bool {
        [
            self.ranking_loss,
            self.hamming_loss,
            self.coverage_error,
            self.micro_f1,
            self.epsilon_pseudo,
        ]
        .iter()
        .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }
}

pub fn write_results_csv(path: impl AsRef<Path>, records: &[MetricsRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| PmlError::io(format!("writing {}", path.display()), e))
}

/// Ground truth of test rows. This is the only label source metrics see.
#[derive(Debug, Clone)]
pub struct HeldOutTruth {
    indices: Vec<usize>,
    labels: Array2<u8>,
}

impl HeldOutTruth {
    pub fn from_dataset(ds: &Dataset, test: &[usize]) -> Result<HeldOutTruth> {
        let truth = ds
            .truth()
            .ok_or_else(|| PmlError::InvalidData("evaluation needs ground-truth labels".into()))?;
        Ok(HeldOutTruth {
            indices: test.to_vec(),
            labels: truth.select(Axis(0), test),
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn labels(&self) -> ArrayView2<'_, u8> {
        self.labels.view()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub ranking_loss: f64,
    pub hamming_loss: f64,
    pub coverage_error: f64,
    pub micro_f1: f64,
}

/// Fits the downstream model on `features` of the training rows and scores
/// it on the test rows against `truth`.
pub fn evaluate_subset(
    train_x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    test_x: ArrayView2<f64>,
    truth: &HeldOutTruth,
    features: &[usize],
    cfg: &DownstreamConfig,
) -> Result<Scores> {
    let tr = train_x.select(Axis(1), features);
    let te = test_x.select(Axis(1), features);
    let model = train_downstream(tr.view(), targets, cfg)?;
    let scores = model.scores(te.view())?;
    let decisions = metrics::decisions(scores.view(), 0.5);
    Ok(Scores {
        ranking_loss: metrics::ranking_loss(scores.view(), truth.labels())?,
        hamming_loss: metrics::hamming_loss(decisions.view(), truth.labels())?,
        coverage_error: metrics::coverage_error(scores.view(), truth.labels())?,
        micro_f1: metrics::micro_f1(decisions.view(), truth.labels())?,
    })
}

/// Everything a fold produced.
pub struct FoldOutcome {
    pub fold: usize,
    pub records: Vec<MetricsRecord>,
    /// Same budgets scored with a random ranking, when requested.
    pub control_records: Vec<MetricsRecord>,
    pub epsilon_pseudo: f64,
    /// ε of using every candidate as a positive.
    pub epsilon_baseline: f64,
    pub ranking: FeatureRanking,
    pub pseudo: PseudoTargets,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Rows whose truth reached a metric.
    pub evaluated_indices: Vec<usize>,
    pub stage1_history: Vec<EpochStats>,
    pub stage2_history: Vec<Stage2Stats>,
    pub trajectories: Vec<Trajectory>,
    pub store: ParameterStore,
}

impl FoldOutcome {
    /// Checks that only held-out rows were evaluated.
    pub fn audit(&self) -> Result<()> {
        let train: std::collections::HashSet<_> = self.train_indices.iter().collect();
        let test: std::collections::HashSet<_> = self.test_indices.iter().collect();
        for i in &self.evaluated_indices {
            if !test.contains(i) || train.contains(i) {
                return Err(PmlError::Verification(format!(
                    "fold {}: row {i} evaluated outside the held-out split",
                    self.fold
                )));
            }
        }
        Ok(())
    }
}

fn random_order(d: usize, master: u64, fold: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut seed::derived_rng(master, &format!("fold{fold}/random-ranking")));
    order
}

/// Runs one fold of the two-stage pipeline.
pub fn run_fold(ds: &Dataset, split: &FoldSplit, fold: usize, cfg: &CvConfig) -> Result<FoldOutcome> {
    let master = cfg.master_seed;
    let label = |s: &str| seed::derive(master, &format!("fold{fold}/{s}"));
    let train_idx = split.train_indices(fold);
    let test_idx = split.test_indices(fold);
    let truth = HeldOutTruth::from_dataset(ds, &test_idx)?;

    let mut train = ds.subset(&train_idx);
    if ds.candidates_from_truth() && cfg.noise_rate > 0.0 {
        train = inject_candidate_noise(&train, cfg.noise_rate, label("noise"))?;
    }
    let scaler = Standardizer::fit(train.features());
    let train = train.with_features(scaler.apply(train.features())?)?;
    let test_x = scaler.apply(&ds.features().select(Axis(0), &test_idx))?;

    let encoder_cfg = EncoderConfig {
        seed: label("encoder"),
        ..cfg.encoder.clone()
    };
    let store = ParameterStore::new(&encoder_cfg, ds.n_features(), ds.n_labels())?;
    let mut s1 = Stage1Trainer::new(
        store,
        Stage1Config {
            seed: label("stage1"),
            ..cfg.stage1.clone()
        },
    )?;
    s1.train(&train)?;
    let pseudo = s1.export(&train)?;
    let targets = pseudo.targets();
    let train_truth = train.truth().expect("checked above");
    let epsilon_pseudo = metrics::epsilon_pseudo(pseudo.binary(cfg.stage1.threshold).view(), train_truth.view())?;
    let epsilon_baseline = metrics::epsilon_pseudo(train.candidate_matrix().view(), train_truth.view())?;
    let stage1_history = s1.history.clone();

    let s2_cfg = Stage2Config {
        seed: label("stage2"),
        ..cfg.stage2.clone()
    };
    let mut s2 = Stage2Trainer::new(s1.store, s2_cfg.clone())?;
    s2.record_trajectories = cfg.record_trajectories;
    s2.train(train.features().view(), targets.view())?;
    let ranking = match cfg.ranking {
        RankingSource::Learned => {
            let mut rng = seed::derived_rng(master, &format!("fold{fold}/ranking"));
            global_ranking(&s2.store, train.features().view(), &s2_cfg, &mut rng)?.0
        }
        RankingSource::Random => {
            let order = random_order(ds.n_features(), master, fold);
            let d = order.len();
            let mut scores = vec![0.0; d];
            for (r, &f) in order.iter().enumerate() {
                scores[f] = (d - r) as f64 / d as f64;
            }
            FeatureRanking { scores, order }
        }
        RankingSource::Identity => FeatureRanking::from_scores(vec![1.0; ds.n_features()]),
    };

    let d = ds.n_features();
    let score_budgets = |order: &[usize]| -> Result<Vec<MetricsRecord>> {
        cfg.budgets
            .iter()
            .map(|&k| {
                let k = k.min(d);
                let s = evaluate_subset(
                    train.features().view(),
                    targets.view(),
                    test_x.view(),
                    &truth,
                    &order[..k],
                    &cfg.downstream,
                )?;
                Ok(MetricsRecord {
                    dataset: cfg.dataset_id.clone(),
                    fold,
                    budget: k,
                    ranking_loss: s.ranking_loss,
                    hamming_loss: s.hamming_loss,
                    coverage_error: s.coverage_error,
                    micro_f1: s.micro_f1,
                    epsilon_pseudo,
                    seed: master,
                })
            })
            .collect()
    };
    let records = score_budgets(&ranking.order)?;
    let control_records = if cfg.random_control {
        score_budgets(&random_order(d, master, fold))?
    } else {
        Vec::new()
    };

    Ok(FoldOutcome {
        fold,
        records,
        control_records,
        epsilon_pseudo,
        epsilon_baseline,
        ranking,
        pseudo,
        train_indices: train_idx,
        test_indices: test_idx,
        evaluated_indices: truth.indices().to_vec(),
        stage1_history,
        stage2_history: s2.history,
        trajectories: s2.recorded,
        store: s2.store,
    })
}

/// Runs every fold (in parallel) and returns them in fold order.
pub fn run_cv(ds: &Dataset, cfg: &CvConfig) -> Result<Vec<FoldOutcome>> {
    cfg.validate()?;
    if ds.truth().is_none() {
        return Err(PmlError::InvalidData("cross-validation needs ground-truth labels".into()));
    }
    let split = kfold_split(ds.n_instances(), cfg.folds, seed::derive(cfg.master_seed, "split"))?;
    let outcomes: Vec<FoldOutcome> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| run_fold(ds, &split, f, cfg).map_err(|e| e.in_fold(f)))
        .collect::<Result<_>>()?;
    for o in &outcomes {
        o.audit()?;
    }
    Ok(outcomes)
}

pub fn collect_records(outcomes: &[FoldOutcome]) -> Vec<MetricsRecord> {
    outcomes.iter().flat_map(|o| o.records.iter().cloned()).collect()
}
