//! Budgeted sequential feature selection.
//!
//! A rollout reveals `T = min(k_fs, d)` features one at a time. At step `t`
//! the encoder sees `m_t ⊙ x` (label slots zeroed), the feature policy
//! scores every feature, already revealed ones are pushed to `-1e9`, and
//! the next feature is drawn from the softmax. The terminal reward is the
//! negated pseudo-label BCE of the discriminative head on `m_T ⊙ x`.

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, Group, Optimizer, OptimizerKind, ParameterStore, Tape};
use crate::error::{PmlError, Result};
use crate::math::{bce_with_logits, bce_with_logits_grad, log_sum_exp, softmax};
use crate::seed::{self, Rng};

/// Added to the logits of already revealed features.
pub const MASK_PENALTY: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub budget: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_fs: f64,
    pub lambda_fs: f64,
    pub baseline_momentum: f64,
    pub action_temperature: f64,
    pub rollouts_per_instance: usize,
    pub freeze_encoder: bool,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            budget: 20,
            epochs: 20,
            batch_size: 32,
            lr_fs: 1e-3,
            lambda_fs: 1.0,
            baseline_momentum: 0.9,
            action_temperature: 1.0,
            rollouts_per_instance: 8,
            freeze_encoder: false,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PmlError::Config(format!("stage2: {m}")));
        if self.budget == 0 {
            return bad("budget must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.baseline_momentum) {
            return bad("baseline_momentum must lie in [0, 1]");
        }
        if !(self.action_temperature > 0.0) || !self.action_temperature.is_finite() {
            return bad("action_temperature must be positive");
        }
        if !(self.lr_fs >= 0.0) || !self.lr_fs.is_finite() {
            return bad("lr_fs must be finite and non-negative");
        }
        if !(self.lambda_fs >= 0.0) {
            return bad("lambda_fs must be non-negative");
        }
        if self.batch_size == 0 || self.rollouts_per_instance == 0 {
            return bad("batch_size and rollouts_per_instance must be at least 1");
        }
        Ok(())
    }

    pub fn horizon(&self, d: usize) -> usize {
        self.budget.min(d)
    }
}

/// Paper budget rule: at most 20 features below 100 dimensions, else 20%.
pub fn budget_for(d: usize) -> usize {
    if d < 100 {
        d.min(20)
    } else {
        (0.2 * d as f64).round() as usize
    }
}

pub fn baseline_update(b: f64, r: f64, beta: f64) -> f64 {
    (1.0 - beta) * b + beta * r
}

/// One episode. Masks are implied by `actions`: `m_t` has the bits of
/// `actions[..t]` set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub instance: usize,
    pub actions: Vec<usize>,
    pub log_prob: f64,
    pub reward: f64,
    /// Masked, temperature-scaled logits seen at each step.
    #[serde(skip)]
    pub step_logits: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn mask(&self, d: usize, t: usize) -> Vec<u8> {
        let mut m = vec![0u8; d];
        for &a in &self.actions[..t] {
            m[a] = 1;
        }
        m
    }

    pub fn final_mask(&self, d: usize) -> Vec<u8> {
        self.mask(d, self.actions.len())
    }
}

/// Encoder input `[m ⊙ x, 0_L]` for each row.
fn masked_observations(features: ArrayView2<f64>, masks: &Array2<f64>, n_labels: usize) -> Array2<f64> {
    let d = features.ncols();
    let mut obs = Array2::zeros((features.nrows(), d + n_labels));
    obs.slice_mut(ndarray::s![.., ..d]).assign(&(&features * masks));
    obs
}

struct StepCache {
    repr: Array2<f64>,
    tape: Tape,
    probs: Array2<f64>,
    actions: Vec<usize>,
}

/// Rollouts of a batch with the activations needed for the policy gradient.
pub struct Rollouts {
    pub trajectories: Vec<Trajectory>,
    pub final_masks: Array2<f64>,
    steps: Vec<StepCache>,
    temperature: f64,
}

/// Rolls out every row of `features` in lock-step. `instances` labels the
/// rows in the returned trajectories. With `record` false the per-step
/// activations are dropped and no gradient can be taken.
pub fn rollout_batch(
    store: &ParameterStore,
    features: ArrayView2<f64>,
    instances: &[usize],
    cfg: &Stage2Config,
    rng: &mut Rng,
    record: bool,
) -> Result<Rollouts> {
    let (b, d) = features.dim();
    if d != store.n_features() {
        return Err(PmlError::Dimension {
            expected: store.n_features(),
            actual: d,
            context: "rollout features",
        });
    }
    let horizon = cfg.horizon(d);
    let mut masks = Array2::<f64>::zeros((b, d));
    let mut trajectories: Vec<Trajectory> = instances
        .iter()
        .map(|&instance| Trajectory {
            instance,
            actions: Vec::with_capacity(horizon),
            log_prob: 0.0,
            reward: 0.0,
            step_logits: Vec::with_capacity(horizon),
        })
        .collect();
    let mut steps = Vec::new();
    for _ in 0..horizon {
        let obs = masked_observations(features, &masks, store.n_labels());
        let (repr, tape) = encoder::encode_batch(store, obs.view())?;
        let raw = encoder::feature_logits(store, &repr)?;
        let mut probs = Array2::zeros((b, d));
        let mut actions = Vec::with_capacity(b);
        for (r, traj) in trajectories.iter_mut().enumerate() {
            let logits: Vec<f64> = (0..d)
                .map(|f| {
                    let scaled = raw[[r, f]] / cfg.action_temperature;
                    if masks[[r, f]] == 1.0 {
                        scaled + MASK_PENALTY
                    } else {
                        scaled
                    }
                })
                .collect();
            let pi = softmax(&logits);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut choice = None;
            for (f, &p) in pi.iter().enumerate() {
                if masks[[r, f]] == 1.0 {
                    continue;
                }
                acc += p;
                choice = Some(f);
                if u < acc {
                    break;
                }
            }
            let a = choice.expect("horizon never exceeds d");
            traj.log_prob += logits[a] - log_sum_exp(&logits);
            traj.actions.push(a);
            masks[[r, a]] = 1.0;
            probs.row_mut(r).assign(&ndarray::Array1::from(pi));
            actions.push(a);
            traj.step_logits.push(logits);
        }
        if record {
            steps.push(StepCache {
                repr,
                tape,
                probs,
                actions,
            });
        }
    }
    Ok(Rollouts {
        trajectories,
        final_masks: masks,
        steps,
        temperature: cfg.action_temperature,
    })
}

/// A single-instance rollout.
pub fn rollout(store: &ParameterStore, x: ArrayView1<f64>, cfg: &Stage2Config, rng: &mut Rng) -> Result<Trajectory> {
    let rows = x.insert_axis(Axis(0));
    let mut r = rollout_batch(store, rows, &[0], cfg, rng, false)?;
    Ok(r.trajectories.remove(0))
}

impl Rollouts {
    /// Adds `Σ_i w_i ∇ log π(τ_i)` to the gradients of ψ and the encoder.
    pub fn accumulate_log_prob_grad(&self, store: &mut ParameterStore, weights: &[f64]) -> Result<()> {
        if self.steps.is_empty() {
            return Err(PmlError::BackwardWithoutForward);
        }
        for step in &self.steps {
            // d log softmax(z/τ)_a / dz = (onehot(a) - π) / τ
            let mut d_logits = step.probs.mapv(|p| -p);
            for (r, &a) in step.actions.iter().enumerate() {
                d_logits[[r, a]] += 1.0;
                d_logits.row_mut(r).mapv_inplace(|g| g * weights[r] / self.temperature);
            }
            let d_repr = encoder::feature_backward(store, &step.repr, &d_logits)?;
            encoder::encoder_backward(store, &step.tape, &d_repr)?;
        }
        Ok(())
    }
}

/// Per-row `(1/L) Σ_j BCE(ŝ_j, y_j)` and the logits.
fn supervised_rows(
    store: &ParameterStore,
    features: ArrayView2<f64>,
    masks: &Array2<f64>,
    targets: ArrayView2<f64>,
) -> Result<(Vec<f64>, Array2<f64>, Array2<f64>, Tape)> {
    let obs = masked_observations(features, masks, store.n_labels());
    let (repr, tape) = encoder::encode_batch(store, obs.view())?;
    let s = encoder::disc_logits(store, &repr)?;
    let l = s.ncols() as f64;
    let losses = s
        .rows()
        .into_iter()
        .zip(targets.rows())
        .map(|(si, yi)| si.iter().zip(yi).map(|(&u, &y)| bce_with_logits(u, y)).sum::<f64>() / l)
        .collect();
    Ok((losses, s, repr, tape))
}

/// Pseudo-label BCE of the discriminative head on `m ⊙ x`.
pub fn supervised_loss(
    store: &ParameterStore,
    x: ArrayView1<f64>,
    pseudo: ArrayView1<f64>,
    mask: &[u8],
) -> Result<f64> {
    let m = Array2::from_shape_fn((1, mask.len()), |(_, f)| f64::from(mask[f]));
    let (losses, ..) = supervised_rows(store, x.insert_axis(Axis(0)), &m, pseudo.insert_axis(Axis(0)))?;
    Ok(losses[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stage2Stats {
    pub sup_loss: f64,
    pub reward: f64,
    pub advantage: f64,
    pub baseline: f64,
}

pub struct Stage2Trainer {
    pub store: ParameterStore,
    pub cfg: Stage2Config,
    pub baseline: f64,
    optimizer: Optimizer,
    rng: Rng,
    pub history: Vec<Stage2Stats>,
    pub record_trajectories: bool,
    pub recorded: Vec<Trajectory>,
}

impl Stage2Trainer {
    pub fn new(store: ParameterStore, cfg: Stage2Config) -> Result<Self> {
        cfg.validate()?;
        let optimizer = Optimizer::new(cfg.optimizer, &store);
        let rng = seed::derived_rng(cfg.seed, "stage2/train");
        Ok(Stage2Trainer {
            store,
            cfg,
            baseline: 0.0,
            optimizer,
            rng,
            history: Vec::new(),
            record_trajectories: false,
            recorded: Vec::new(),
        })
    }

    /// One joint step on rows `batch` of `features` against `targets`:
    /// `L_sup + λ_fs · L_pg` with `L_pg = −(r − b) · mean log π`, then the
    /// baseline moves towards the batch reward.
    pub fn step(&mut self, features: ArrayView2<f64>, targets: ArrayView2<f64>, batch: &[usize]) -> Result<Stage2Stats> {
        if batch.is_empty() {
            return Err(PmlError::InvalidData("empty batch".into()));
        }
        let x = features.select(Axis(0), batch);
        let y = targets.select(Axis(0), batch);
        let b = batch.len();
        self.store.zero_grads();
        let mut roll = rollout_batch(&self.store, x.view(), batch, &self.cfg, &mut self.rng, true)?;
        let (losses, s, repr, tape) = supervised_rows(&self.store, x.view(), &roll.final_masks, y.view())?;
        let sup = losses.iter().sum::<f64>() / b as f64;
        if !sup.is_finite() {
            return Err(PmlError::NumericAbort("stage-2 supervised loss".into()));
        }
        let reward = -sup;
        let advantage = reward - self.baseline;

        let cells = s.len() as f64;
        let mut d_s = Array2::zeros(s.raw_dim());
        ndarray::Zip::from(&mut d_s)
            .and(&s)
            .and(&y)
            .for_each(|g, &u, &t| *g = bce_with_logits_grad(u, t) / cells);
        let d_repr = encoder::disc_backward(&mut self.store, &repr, &d_s)?;
        encoder::encoder_backward(&mut self.store, &tape, &d_repr)?;
        if self.cfg.lambda_fs != 0.0 {
            let w = -self.cfg.lambda_fs * advantage / b as f64;
            roll.accumulate_log_prob_grad(&mut self.store, &vec![w; b])?;
        }

        let encoder_lr = if self.cfg.freeze_encoder { 0.0 } else { self.cfg.lr_fs };
        self.optimizer.step(
            &mut self.store,
            &[
                (Group::Encoder, encoder_lr),
                (Group::DiscHead, self.cfg.lr_fs),
                (Group::FeaturePolicy, self.cfg.lr_fs),
            ],
        )?;
        self.baseline = baseline_update(self.baseline, reward, self.cfg.baseline_momentum);
        if self.record_trajectories {
            for (t, &l) in roll.trajectories.iter_mut().zip(&losses) {
                t.reward = -l;
            }
            self.recorded.append(&mut roll.trajectories);
        }
        let stats = Stage2Stats {
            sup_loss: sup,
            reward,
            advantage,
            baseline: self.baseline,
        };
        self.history.push(stats);
        Ok(stats)
    }

    pub fn train(&mut self, features: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<()> {
        if targets.nrows() != features.nrows() {
            return Err(PmlError::Dimension {
                expected: features.nrows(),
                actual: targets.nrows(),
                context: "pseudo-label rows",
            });
        }
        let mut order: Vec<usize> = (0..features.nrows()).collect();
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for batch in order.chunks(self.cfg.batch_size) {
                self.step(features, targets, batch)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub scores: Vec<f64>,
    pub order: Vec<usize>,
}

impl FeatureRanking {
    /// Sorts by descending score, ties by ascending index.
    pub fn from_scores(scores: Vec<f64>) -> FeatureRanking {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        FeatureRanking { scores, order }
    }

    /// Selection frequency of each feature over `trajectories`.
    pub fn from_trajectories(d: usize, trajectories: &[Trajectory]) -> FeatureRanking {
        let mut counts = vec![0.0; d];
        for t in trajectories {
            for &a in &t.actions {
                counts[a] += 1.0;
            }
        }
        let total = trajectories.len().max(1) as f64;
        FeatureRanking::from_scores(counts.into_iter().map(|c| c / total).collect())
    }

    pub fn top(&self, k: usize) -> Vec<usize> {
        self.order[..k.min(self.order.len())].to_vec()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("rank,feature_index,score\n");
        for (rank, &f) in self.order.iter().enumerate() {
            out.push_str(&format!("{rank},{f},{}\n", self.scores[f]));
        }
        std::fs::write(path, out).map_err(|e| PmlError::io(format!("writing {}", path.display()), e))
    }
}

/// Selection-frequency ranking from `rollouts_per_instance` fresh rollouts of
/// every row of `features`, drawn from `rng`. Also returns the trajectories.
pub fn global_ranking(
    store: &ParameterStore,
    features: ArrayView2<f64>,
    cfg: &Stage2Config,
    rng: &mut Rng,
) -> Result<(FeatureRanking, Vec<Trajectory>)> {
    let ids: Vec<usize> = (0..features.nrows()).collect();
    let mut all = Vec::with_capacity(ids.len() * cfg.rollouts_per_instance);
    for _ in 0..cfg.rollouts_per_instance {
        for chunk in ids.chunks(256) {
            let x = features.select(Axis(0), chunk);
            all.extend(rollout_batch(store, x.view(), chunk, cfg, rng, false)?.trajectories);
        }
    }
    Ok((FeatureRanking::from_trajectories(features.ncols(), &all), all))
}

#[derive(Serialize)]
struct TrajectoryLine<'a> {
    instance: usize,
    mask: String,
    actions: &'a [usize],
    log_prob: f64,
    reward: f64,
}

/// JSON lines, one per trajectory.
pub fn write_trajectory_log(path: impl AsRef<Path>, d: usize, trajectories: &[Trajectory]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for t in trajectories {
        let mask: String = t.final_mask(d).iter().map(|&b| if b == 1 { '1' } else { '0' }).collect();
        let line = TrajectoryLine {
            instance: t.instance,
            mask,
            actions: &t.actions,
            log_prob: t.log_prob,
            reward: t.reward,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| PmlError::io(format!("writing {}", path.display()), e))
}
