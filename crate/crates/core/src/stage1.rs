//! Candidate-set disambiguation.
//!
//! The label policy draws one Bernoulli per candidate label from
//! `σ(θ_j·φ(O))`; non-candidates are pinned to zero. The sampled vector `Z`
//! supervises the discriminative head through a mean BCE loss plus a
//! minibatch kNN smoothness penalty, and the negated loss is the reward for
//! a REINFORCE step on θ with the representation held fixed.

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::encoder::{self, Group, Optimizer, OptimizerKind, ParameterStore};
use crate::error::{PmlError, Result};
use crate::math::{bce_with_logits, bce_with_logits_grad, clamp_prob, sigmoid};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    Hard,
    Soft,
}

impl std::str::FromStr for LabelMode {
    type Err = PmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(LabelMode::Hard),
            "soft" => Ok(LabelMode::Soft),
            other => Err(PmlError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_disc: f64,
    pub lr_pol: f64,
    pub lambda_struct: f64,
    pub knn_k: usize,
    pub mode: LabelMode,
    pub threshold: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            epochs: 30,
            batch_size: 32,
            lr_disc: 1e-3,
            lr_pol: 1e-4,
            lambda_struct: 0.01,
            knn_k: 5,
            mode: LabelMode::Hard,
            threshold: 0.5,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PmlError::Config(format!("stage1: {m}")));
        if !(self.lr_disc >= 0.0 && self.lr_pol >= 0.0) || !self.lr_disc.is_finite() || !self.lr_pol.is_finite() {
            return bad("learning rates must be finite and non-negative");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lambda_struct >= 0.0) {
            return bad("lambda_struct must be non-negative");
        }
        Ok(())
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

/// Hard pseudo labels with the stamp of the run that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub labels: Array2<u8>,
    pub config_hash: String,
    pub epoch: usize,
}

/// What Stage 1 hands to Stage 2.
#[derive(Debug, Clone, PartialEq)]
pub enum PseudoTargets {
    Hard(PseudoLabels),
    Soft(Array2<f64>),
}

impl PseudoTargets {
    /// Targets on the probability scale.
    pub fn targets(&self) -> Array2<f64> {
        match self {
            PseudoTargets::Hard(p) => p.labels.mapv(f64::from),
            PseudoTargets::Soft(p) => p.clone(),
        }
    }

    /// Binary view used for ε_pseudo; soft targets are thresholded at `threshold`.
    pub fn binary(&self, threshold: f64) -> Array2<u8> {
        match self {
            PseudoTargets::Hard(p) => p.labels.clone(),
            PseudoTargets::Soft(p) => p.mapv(|v| u8::from(v > 0.0 && v >= threshold)),
        }
    }
}

/// Stacks `[x_i, mask(C_i)]` rows.
pub fn observations(features: ArrayView2<f64>, candidates: &[Vec<usize>], n_labels: usize) -> Array2<f64> {
    let d = features.ncols();
    let mut obs = Array2::zeros((features.nrows(), d + n_labels));
    for (i, cand) in candidates.iter().enumerate() {
        obs.row_mut(i).slice_mut(ndarray::s![..d]).assign(&features.row(i));
        for &j in cand {
            obs[[i, d + j]] = 1.0;
        }
    }
    obs
}

fn mask_probabilities(logits: &Array2<f64>, candidates: &[Vec<usize>]) -> Array2<f64> {
    let mut p = Array2::zeros(logits.raw_dim());
    for (i, cand) in candidates.iter().enumerate() {
        for &j in cand {
            p[[i, j]] = sigmoid(logits[[i, j]]);
        }
    }
    p
}

/// `p_j = σ(θ_j·φ(O))` on candidates, 0 elsewhere.
pub fn policy_probabilities(
    store: &ParameterStore,
    features: ArrayView1<f64>,
    candidates: &[usize],
) -> Result<Array1<f64>> {
    let x = features.insert_axis(ndarray::Axis(0));
    let p = policy_probabilities_batch(store, x, &[candidates.to_vec()])?;
    Ok(p.row(0).to_owned())
}

pub fn policy_probabilities_batch(
    store: &ParameterStore,
    features: ArrayView2<f64>,
    candidates: &[Vec<usize>],
) -> Result<Array2<f64>> {
    let obs = observations(features, candidates, store.n_labels());
    let (repr, _) = encoder::encode_batch(store, obs.view())?;
    let logits = encoder::label_logits(store, &repr)?;
    Ok(mask_probabilities(&logits, candidates))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub z: Vec<u8>,
    pub log_prob: f64,
}

/// `log π(Z|O)` over the candidates, with clamped probabilities.
pub fn log_prob(p: ArrayView1<f64>, candidates: &[usize], z: &[u8]) -> f64 {
    candidates
        .iter()
        .map(|&j| {
            let pj = clamp_prob(p[j]);
            if z[j] == 1 {
                pj.ln()
            } else {
                (1.0 - pj).ln()
            }
        })
        .sum()
}

/// Draws `Z_j ~ Bernoulli(p_j)` for each candidate in ascending order.
pub fn sample_action(p: ArrayView1<f64>, candidates: &[usize], rng: &mut Rng) -> Action {
    let mut z = vec![0u8; p.len()];
    for &j in candidates {
        let u: f64 = rng.random();
        z[j] = u8::from(u < p[j]);
    }
    let log_prob = log_prob(p, candidates, &z);
    Action { z, log_prob }
}

/// Directed k nearest neighbours of every row (Euclidean, self excluded,
/// distance ties broken by lower index). `k` is truncated to `B - 1`.
pub fn knn_graph(features: ArrayView2<f64>, k: usize) -> Vec<Vec<usize>> {
    let b = features.nrows();
    let k = k.min(b.saturating_sub(1));
    (0..b)
        .map(|i| {
            let mut dist: Vec<(f64, usize)> = (0..b)
                .filter(|&j| j != i)
                .map(|j| {
                    let d2: f64 = features
                        .row(i)
                        .iter()
                        .zip(features.row(j))
                        .map(|(a, c)| (a - c) * (a - c))
                        .sum();
                    (d2, j)
                })
                .collect();
            dist.sort_by(|a, c| a.0.total_cmp(&c.0).then(a.1.cmp(&c.1)));
            dist.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// `R = 1/(B k) Σ_i Σ_{j∈kNN(i)} ‖U_i − U_j‖²`, 0 for a batch of one.
pub fn graph_regularizer(u: &Array2<f64>, features: ArrayView2<f64>, k: usize) -> f64 {
    graph_regularizer_with_grad(u, features, k).0
}

/// The regularizer and its gradient with respect to `u`.
pub fn graph_regularizer_with_grad(
    u: &Array2<f64>,
    features: ArrayView2<f64>,
    k: usize,
) -> (f64, Array2<f64>) {
    let b = u.nrows();
    let mut grad = Array2::zeros(u.raw_dim());
    let k_eff = k.min(b.saturating_sub(1));
    if k_eff == 0 {
        return (0.0, grad);
    }
    let norm = 1.0 / (b * k_eff) as f64;
    let mut total = 0.0;
    for (i, nbrs) in knn_graph(features, k).iter().enumerate() {
        for &j in nbrs {
            let diff = &u.row(i) - &u.row(j);
            total += diff.dot(&diff);
            grad.row_mut(i).scaled_add(2.0 * norm, &diff);
            grad.row_mut(j).scaled_add(-2.0 * norm, &diff);
        }
    }
    (total * norm, grad)
}

/// Mean over the batch of the per-label-averaged BCE, plus `λ·graph`.
pub fn disc_loss(u: &Array2<f64>, z: &Array2<f64>, lambda_struct: f64, graph: f64) -> f64 {
    let cells = u.len() as f64;
    let bce: f64 = u.iter().zip(z).map(|(&ui, &zi)| bce_with_logits(ui, zi)).sum();
    bce / cells + lambda_struct * graph
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub disc_loss: f64,
    pub reward: f64,
    pub mean_log_prob: f64,
    /// Norm of the θ gradient of the policy loss before the step.
    pub policy_grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_disc_loss: f64,
    pub mean_reward: f64,
    pub mean_policy_grad_norm: f64,
}

/// Stage-1 training state: the shared store plus optimizer and rng.
pub struct Stage1Trainer {
    pub store: ParameterStore,
    pub cfg: Stage1Config,
    optimizer: Optimizer,
    rng: Rng,
    epoch: usize,
    pub history: Vec<EpochStats>,
    /// Every sampled action, for invariant checks.
    pub record_actions: bool,
    pub recorded: Vec<(usize, Vec<u8>)>,
}

impl Stage1Trainer {
    pub fn new(store: ParameterStore, cfg: Stage1Config) -> Result<Self> {
        cfg.validate()?;
        let optimizer = Optimizer::new(cfg.optimizer, &store);
        let rng = seed::derived_rng(cfg.seed, "stage1/train");
        Ok(Stage1Trainer {
            store,
            cfg,
            optimizer,
            rng,
            epoch: 0,
            history: Vec::new(),
            record_actions: false,
            recorded: Vec::new(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One REINFORCE step on the rows `batch` of `ds`.
    ///
    /// The discriminator (encoder and head) descends `ℓ_disc` at `lr_disc`;
    /// θ descends `−r · mean log π` at `lr_pol` with `r = −ℓ_disc` and the
    /// representation treated as a constant. A non-finite loss or update
    /// leaves the store untouched.
    pub fn reinforce_update(&mut self, ds: &Dataset, batch: &[usize]) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(PmlError::InvalidData("empty batch".into()));
        }
        let labels = ds.n_labels();
        let feats = ds.features().select(ndarray::Axis(0), batch);
        let cands: Vec<Vec<usize>> = batch.iter().map(|&i| ds.candidates()[i].clone()).collect();
        let obs = observations(feats.view(), &cands, labels);

        self.store.zero_grads();
        let (repr, tape) = encoder::encode_batch(&self.store, obs.view())?;
        let u = encoder::disc_logits(&self.store, &repr)?;
        let pol_logits = encoder::label_logits(&self.store, &repr)?;
        let p = mask_probabilities(&pol_logits, &cands);

        let b = batch.len();
        let mut z = Array2::<f64>::zeros((b, labels));
        let mut log_probs = Vec::with_capacity(b);
        let mut active = Vec::with_capacity(b);
        for (r, cand) in cands.iter().enumerate() {
            if cand.is_empty() {
                continue;
            }
            let action = sample_action(p.row(r), cand, &mut self.rng);
            for (j, &zj) in action.z.iter().enumerate() {
                z[[r, j]] = f64::from(zj);
            }
            if self.record_actions {
                self.recorded.push((batch[r], action.z.clone()));
            }
            log_probs.push(action.log_prob);
            active.push(r);
        }

        let (graph, graph_grad) = graph_regularizer_with_grad(&u, feats.view(), self.cfg.knn_k);
        let loss = disc_loss(&u, &z, self.cfg.lambda_struct, graph);
        if !loss.is_finite() {
            return Err(PmlError::NumericAbort("stage-1 discriminative loss".into()));
        }
        let reward = -loss;

        let cells = (b * labels) as f64;
        let mut d_u = Array2::zeros(u.raw_dim());
        ndarray::Zip::from(&mut d_u)
            .and(&u)
            .and(&z)
            .for_each(|g, &ui, &zi| *g = bce_with_logits_grad(ui, zi) / cells);
        d_u.scaled_add(self.cfg.lambda_struct, &graph_grad);
        let d_repr = encoder::disc_backward(&mut self.store, &repr, &d_u)?;
        encoder::encoder_backward(&mut self.store, &tape, &d_repr)?;

        // d(−r · mean log π)/d logit_ij = −r (Z_ij − p_ij) / |active|
        let mut d_pol = Array2::zeros(pol_logits.raw_dim());
        let mean_log_prob = if active.is_empty() {
            0.0
        } else {
            let scale = -reward / active.len() as f64;
            for &r in &active {
                for &j in &cands[r] {
                    d_pol[[r, j]] = scale * (z[[r, j]] - p[[r, j]]);
                }
            }
            log_probs.iter().sum::<f64>() / active.len() as f64
        };
        // the returned representation adjoint is dropped: φ is detached here
        encoder::label_policy_backward(&mut self.store, &repr, &d_pol)?;
        let policy_grad_norm = self.store.grad_norm(&[Group::LabelPolicy]);

        self.optimizer.step(
            &mut self.store,
            &[
                (Group::Encoder, self.cfg.lr_disc),
                (Group::DiscHead, self.cfg.lr_disc),
                (Group::LabelPolicy, self.cfg.lr_pol),
            ],
        )?;
        Ok(StepStats {
            disc_loss: loss,
            reward,
            mean_log_prob,
            policy_grad_norm,
        })
    }

    /// One pass over `ds` in a freshly shuffled order.
    pub fn train_epoch(&mut self, ds: &Dataset) -> Result<EpochStats> {
        let mut order: Vec<usize> = (0..ds.n_instances()).collect();
        order.shuffle(&mut self.rng);
        let mut stats = Vec::new();
        for batch in order.chunks(self.cfg.batch_size) {
            stats.push(self.reinforce_update(ds, batch)?);
        }
        let n = stats.len().max(1) as f64;
        let epoch = EpochStats {
            epoch: self.epoch,
            mean_disc_loss: stats.iter().map(|s| s.disc_loss).sum::<f64>() / n,
            mean_reward: stats.iter().map(|s| s.reward).sum::<f64>() / n,
            mean_policy_grad_norm: stats.iter().map(|s| s.policy_grad_norm).sum::<f64>() / n,
        };
        self.epoch += 1;
        self.history.push(epoch);
        Ok(epoch)
    }

    pub fn train(&mut self, ds: &Dataset) -> Result<&[EpochStats]> {
        for _ in 0..self.cfg.epochs {
            self.train_epoch(ds)?;
        }
        Ok(&self.history)
    }

    pub fn export(&self, ds: &Dataset) -> Result<PseudoTargets> {
        export_pseudo_labels(&self.store, ds, &self.cfg, self.epoch)
    }
}

/// Thresholded (hard) or masked-probability (soft) pseudo labels for every
/// row of `ds`. Ties at the threshold count as positive.
pub fn export_pseudo_labels(
    store: &ParameterStore,
    ds: &Dataset,
    cfg: &Stage1Config,
    epoch: usize,
) -> Result<PseudoTargets> {
    let p = policy_probabilities_batch(store, ds.features().view(), ds.candidates())?;
    Ok(match cfg.mode {
        LabelMode::Soft => PseudoTargets::Soft(p),
        LabelMode::Hard => {
            let mut labels = Array2::zeros(p.raw_dim());
            for (i, cand) in ds.candidates().iter().enumerate() {
                for &j in cand {
                    labels[[i, j]] = u8::from(p[[i, j]] >= cfg.threshold);
                }
            }
            PseudoTargets::Hard(PseudoLabels {
                labels,
                config_hash: cfg.hash(),
                epoch,
            })
        }
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PseudoSidecar {
    pub config_hash: String,
    pub mode: LabelMode,
    pub epochs: usize,
    pub final_disc_loss: Option<f64>,
    pub final_reward: Option<f64>,
}

/// Writes `instance_id,z_1,…,z_L` rows to `path` and the JSON sidecar next
/// to it (`<path>.json`). `ids` maps rows to dataset instance ids.
pub fn write_pseudo_labels(
    path: impl AsRef<Path>,
    targets: &PseudoTargets,
    ids: &[usize],
    sidecar: &PseudoSidecar,
) -> Result<()> {
    let path = path.as_ref();
    let m = targets.targets();
    let mut out = String::from("instance_id");
    for j in 1..=m.ncols() {
        out.push_str(&format!(",z_{j}"));
    }
    out.push('\n');
    for (row, &id) in m.rows().into_iter().zip(ids) {
        out.push_str(&id.to_string());
        for v in row {
            match targets {
                PseudoTargets::Hard(_) => out.push_str(&format!(",{}", *v as u8)),
                PseudoTargets::Soft(_) => out.push_str(&format!(",{v}")),
            }
        }
        out.push('\n');
    }
    let io = |e| PmlError::io(format!("writing {}", path.display()), e);
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(io)?;
    let side = path.with_extension("json");
    std::fs::write(&side, serde_json::to_string_pretty(sidecar)? + "\n")
        .map_err(|e| PmlError::io(format!("writing {}", side.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, EncoderVariant};

    fn tiny_store(d: usize, l: usize) -> ParameterStore {
        let cfg = EncoderConfig {
            model_width: 8,
            head_count: 2,
            layer_count: 1,
            feedforward_width: 8,
            variant: EncoderVariant::Mlp,
            seed: 11,
        };
        ParameterStore::new(&cfg, d, l).unwrap()
    }

    fn tiny_dataset() -> Dataset {
        let mut rng = seed::rng(5);
        let x = Array2::from_shape_simple_fn((12, 3), || rng.random_range(-1.0..1.0));
        let cands: Vec<Vec<usize>> = (0..12)
            .map(|i| match i % 4 {
                0 => vec![0, 1],
                1 => vec![2],
                2 => vec![],
                _ => vec![0, 1, 2, 3],
            })
            .collect();
        Dataset::new(x, None, cands, 4).unwrap()
    }

    #[test]
    fn zero_theta_gives_half_on_candidates() {
        let mut store = tiny_store(3, 4);
        let id = store.label_policy_id();
        store.value_mut(id).fill(0.0);
        let p = policy_probabilities(&store, ndarray::arr1(&[0.3, -0.2, 1.0]).view(), &[1, 3]).unwrap();
        assert_eq!(p.to_vec(), vec![0.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn coin_log_prob() {
        let p = ndarray::arr1(&[0.5]);
        let mut rng = seed::rng(0);
        for _ in 0..4 {
            let a = sample_action(p.view(), &[0], &mut rng);
            assert!((a.log_prob + std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_probabilities_are_deterministic() {
        let p = ndarray::arr1(&[1.0, 0.0, 1.0]);
        let mut rng = seed::rng(0);
        let a = sample_action(p.view(), &[0, 1, 2], &mut rng);
        assert_eq!(a.z, vec![1, 0, 1]);
        assert!(a.log_prob.abs() < 1e-11);
    }

    #[test]
    fn two_point_graph() {
        let u = ndarray::arr2(&[[1.0, 2.0], [0.0, 4.0]]);
        let x = ndarray::arr2(&[[0.0], [1.0]]);
        // both points are each other's neighbour: 2‖v‖² / (2·1)
        assert!((graph_regularizer(&u, x.view(), 5) - 5.0).abs() < 1e-15);
        let same = ndarray::arr2(&[[1.0, 2.0], [1.0, 2.0]]);
        assert_eq!(graph_regularizer(&same, x.view(), 1), 0.0);
        assert_eq!(graph_regularizer(&u.slice(ndarray::s![..1, ..]).to_owned(), x.slice(ndarray::s![..1, ..]), 3), 0.0);
    }

    #[test]
    fn graph_gradient_matches_differences() {
        let mut rng = seed::rng(9);
        let u = Array2::from_shape_simple_fn((6, 3), || rng.random_range(-1.0..1.0));
        let x = Array2::from_shape_simple_fn((6, 2), || rng.random_range(-1.0..1.0));
        let (_, g) = graph_regularizer_with_grad(&u, x.view(), 2);
        let h = 1e-6;
        for idx in [(0, 0), (3, 2), (5, 1)] {
            let mut up = u.clone();
            up[idx] += h;
            let mut dn = u.clone();
            dn[idx] -= h;
            let fd = (graph_regularizer(&up, x.view(), 2) - graph_regularizer(&dn, x.view(), 2)) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn single_label_ln2() {
        let u = ndarray::arr2(&[[0.0]]);
        let z = ndarray::arr2(&[[1.0]]);
        assert!((disc_loss(&u, &z, 0.0, 123.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn zero_rates_freeze_parameters() {
        let ds = tiny_dataset();
        let cfg = Stage1Config {
            lr_disc: 0.0,
            lr_pol: 0.0,
            batch_size: 4,
            ..Stage1Config::default()
        };
        let mut t = Stage1Trainer::new(tiny_store(3, 4), cfg).unwrap();
        let before = t.store.clone();
        let s = t.reinforce_update(&ds, &[0, 1, 2, 3]).unwrap();
        assert!(s.reward < 0.0);
        for id in before.ids() {
            assert_eq!(before.value(id), t.store.value(id));
        }
    }

    #[test]
    fn policy_step_is_detached() {
        let ds = tiny_dataset();
        let cfg = Stage1Config {
            lr_disc: 0.0,
            lr_pol: 0.1,
            ..Stage1Config::default()
        };
        let mut t = Stage1Trainer::new(tiny_store(3, 4), cfg).unwrap();
        let before = t.store.clone();
        t.reinforce_update(&ds, &[0, 3, 7, 11]).unwrap();
        let mut theta_moved = false;
        for id in before.ids() {
            if before.spec(id).group == Group::LabelPolicy {
                theta_moved |= before.value(id) != t.store.value(id);
            } else {
                assert_eq!(before.value(id), t.store.value(id), "{}", before.spec(id).name);
            }
        }
        assert!(theta_moved);
    }

    #[test]
    fn exports_respect_candidates() {
        let ds = tiny_dataset();
        let mut t = Stage1Trainer::new(
            tiny_store(3, 4),
            Stage1Config {
                epochs: 2,
                batch_size: 5,
                lr_pol: 0.05,
                ..Stage1Config::default()
            },
        )
        .unwrap();
        t.record_actions = true;
        t.train(&ds).unwrap();
        for (i, z) in &t.recorded {
            for (j, &zj) in z.iter().enumerate() {
                assert!(zj == 0 || ds.candidates()[*i].contains(&j));
            }
        }
        let PseudoTargets::Hard(p) = t.export(&ds).unwrap() else {
            panic!("hard mode")
        };
        let cm = ds.candidate_matrix();
        assert!(p.labels.iter().zip(&cm).all(|(&z, &c)| z <= c));
        assert!(p.labels.row(2).iter().all(|&v| v == 0));
    }

    #[test]
    fn zero_theta_exports_full_candidates() {
        let ds = tiny_dataset();
        let mut store = tiny_store(3, 4);
        let id = store.label_policy_id();
        store.value_mut(id).fill(0.0);
        let PseudoTargets::Hard(p) = export_pseudo_labels(&store, &ds, &Stage1Config::default(), 0).unwrap() else {
            panic!()
        };
        assert_eq!(p.labels, ds.candidate_matrix());
    }
}
