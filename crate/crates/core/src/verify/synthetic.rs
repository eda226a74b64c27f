use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{inject_candidate_noise, kfold_split, Dataset, Standardizer};
use crate::error::{PmlError, Result};
use crate::eval::downstream::{train_downstream, DownstreamConfig};
use crate::eval::metrics;
use crate::math::spearman;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub labels: usize,
    /// Number of feature columns with non-zero generative weight.
    pub informative: usize,
    /// `labels × d` generative weights; drawn from the seed when absent.
    pub weights: Option<Array2<f64>>,
    /// Probability of flipping each truth bit after generation.
    pub label_noise: f64,
    /// Rate passed to candidate-noise injection.
    pub candidate_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 555,
            d: 49,
            labels: 6,
            informative: 10,
            weights: None,
            label_noise: 0.0,
            candidate_noise: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.labels == 0 {
            return Err(PmlError::Config("synthetic n, d and L must be at least 1".into()));
        }
        if self.informative == 0 || self.informative > self.d {
            return Err(PmlError::Config("informative must lie in 1..=d".into()));
        }
        if let Some(w) = &self.weights {
            if w.dim() != (self.labels, self.d) {
                return Err(PmlError::Config("weight matrix must be labels × d".into()));
            }
        }
        for r in [self.label_noise, self.candidate_noise] {
            if !(0.0..=1.0).contains(&r) {
                return Err(PmlError::Config("noise rates must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// The generative weights: given, or standard normal on a random subset
    /// of `informative` columns and zero elsewhere.
    pub fn generative_weights(&self) -> Array2<f64> {
        if let Some(w) = &self.weights {
            return w.clone();
        }
        let mut rng = seed::derived_rng(self.seed, "synthetic/weights");
        let mut cols: Vec<usize> = (0..self.d).collect();
        cols.shuffle(&mut rng);
        let mut w = Array2::zeros((self.labels, self.d));
        for &c in &cols[..self.informative] {
            for l in 0..self.labels {
                w[[l, c]] = rng.sample(StandardNormal);
            }
        }
        w
    }
}

/// Standard-normal features and `truth = 1[σ(Wx) ≥ ½]`, with bit flips at
/// `label_noise`; rows without a positive are redrawn. Candidates are the
/// truth plus injected noise at `candidate_noise` (truth-only when 0).
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let w = spec.generative_weights();
    let mut rng = seed::derived_rng(spec.seed, "synthetic/rows");
    let mut x = Array2::zeros((spec.n, spec.d));
    let mut y = Array2::<u8>::zeros((spec.n, spec.labels));
    for i in 0..spec.n {
        for attempt in 0.. {
            if attempt == 10_000 {
                return Err(PmlError::Config("synthetic spec cannot produce a positive label".into()));
            }
            let row: Array1<f64> = (0..spec.d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let logits = w.dot(&row);
            let labels: Vec<u8> = logits
                .iter()
                .map(|&s| {
                    let t = u8::from(crate::math::sigmoid(s) >= 0.5);
                    if rng.random::<f64>() < spec.label_noise {
                        1 - t
                    } else {
                        t
                    }
                })
                .collect();
            if labels.contains(&1) {
                x.row_mut(i).assign(&row);
                y.row_mut(i).assign(&Array1::from(labels));
                break;
            }
        }
    }
    let ds = Dataset::from_truth(x, y)?;
    if spec.candidate_noise > 0.0 {
        inject_candidate_noise(&ds, spec.candidate_noise, seed::derive(spec.seed, "synthetic/candidates"))
    } else {
        Ok(ds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbePoint {
    pub rate: f64,
    pub epsilon_pseudo: f64,
    /// Mean squared error of predicted probabilities against test truth.
    pub risk: f64,
}

/// Trains the downstream model on pseudo labels carrying injected false
/// positives at each `rate` and measures held-out risk. Returns the points
/// and the Spearman correlation of risk with ε_pseudo.
pub fn excess_risk_probe(
    spec: &SyntheticSpec,
    rates: &[f64],
    downstream: &DownstreamConfig,
) -> Result<(Vec<ProbePoint>, f64)> {
    let ds = make_synthetic(&SyntheticSpec {
        candidate_noise: 0.0,
        ..spec.clone()
    })?;
    let split = kfold_split(ds.n_instances(), 5, seed::derive(spec.seed, "probe/split"))?;
    let (train_idx, test_idx) = (split.train_indices(0), split.test_indices(0));
    let train = ds.subset(&train_idx);
    let scaler = Standardizer::fit(train.features());
    let train_x = scaler.apply(train.features())?;
    let test_x = scaler.apply(&ds.features().select(Axis(0), &test_idx))?;
    let test_truth = ds.truth().expect("synthetic truth").select(Axis(0), &test_idx);
    let train_truth = train.truth().expect("synthetic truth");
    let mut points = Vec::with_capacity(rates.len());
    for (k, &rate) in rates.iter().enumerate() {
        let noisy = inject_candidate_noise(&train, rate, seed::derive(spec.seed, &format!("probe/noise{k}")))?;
        let pseudo = noisy.candidate_matrix();
        let eps = metrics::epsilon_pseudo(pseudo.view(), train_truth.view())?;
        let model = train_downstream(train_x.view(), pseudo.mapv(f64::from).view(), downstream)?;
        let p = model.scores(test_x.view())?;
        let risk = p
            .iter()
            .zip(&test_truth)
            .map(|(&q, &t)| (q - f64::from(t)).powi(2))
            .sum::<f64>()
            / p.len() as f64;
        points.push(ProbePoint {
            rate,
            epsilon_pseudo: eps,
            risk,
        });
    }
    let eps: Vec<f64> = points.iter().map(|p| p.epsilon_pseudo).collect();
    let risk: Vec<f64> = points.iter().map(|p| p.risk).collect();
    Ok((points, spearman(&eps, &risk)))
}
