use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, EncoderConfig, EncoderVariant, ParameterStore};
use crate::error::Result;
use crate::math::{bce_with_logits, bce_with_logits_grad};
use crate::seed::{self, Rng};
use crate::stage1::{graph_regularizer, graph_regularizer_with_grad, observations};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSuiteConfig {
    pub encoder: EncoderConfig,
    pub n_features: usize,
    pub n_labels: usize,
    pub batch: usize,
    pub inputs: usize,
    pub step: f64,
    pub lambda_struct: f64,
    /// Corrupts the BCE derivative used by the analytic pass.
    pub mutate_bce: bool,
    pub seed: u64,
}

impl Default for GradientSuiteConfig {
    fn default() -> Self {
        GradientSuiteConfig {
            encoder: EncoderConfig {
                model_width: 16,
                head_count: 4,
                layer_count: 2,
                feedforward_width: 64,
                variant: EncoderVariant::Transformer,
                seed: 17,
            },
            n_features: 5,
            n_labels: 3,
            batch: 4,
            inputs: 10,
            step: 1e-5,
            lambda_struct: 0.5,
            mutate_bce: false,
            seed: 23,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub block: String,
    /// Worst `‖analytic − fd‖ / (‖analytic‖ + 1e-8)` over the inputs.
    pub relative_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

struct Probe {
    obs: Array2<f64>,
    features: Array2<f64>,
    targets: Array2<f64>,
    label_adj: Array2<f64>,
    feature_adj: Array2<f64>,
}

fn random_probe(cfg: &GradientSuiteConfig, rng: &mut Rng) -> Probe {
    let (b, d, l) = (cfg.batch, cfg.n_features, cfg.n_labels);
    let features = Array2::from_shape_simple_fn((b, d), || rng.random_range(-2.0..2.0));
    let candidates: Vec<Vec<usize>> = (0..b).map(|_| (0..l).filter(|_| rng.random_bool(0.6)).collect()).collect();
    let obs = observations(features.view(), &candidates, l);
    let targets = Array2::from_shape_fn((b, l), |(i, j)| {
        if candidates[i].contains(&j) && rng.random_bool(0.5) {
            1.0
        } else {
            0.0
        }
    });
    Probe {
        obs,
        features,
        targets,
        label_adj: Array2::from_shape_simple_fn((b, l), || rng.random_range(-1.0..1.0)),
        feature_adj: Array2::from_shape_simple_fn((b, d), || rng.random_range(-1.0..1.0)),
    }
}

/// Scalar objective touching every block: the Stage-1 discriminative loss
/// plus random linear functionals of the label and feature policy logits.
fn objective(store: &ParameterStore, probe: &Probe, cfg: &GradientSuiteConfig) -> Result<f64> {
    let (repr, _) = encoder::encode_batch(store, probe.obs.view())?;
    let u = encoder::disc_logits(store, &repr)?;
    let bce: f64 = u.iter().zip(&probe.targets).map(|(&a, &z)| bce_with_logits(a, z)).sum::<f64>() / u.len() as f64;
    let graph = graph_regularizer(&u, probe.features.view(), 2);
    let lab = (&encoder::label_logits(store, &repr)? * &probe.label_adj).sum();
    let feat = (&encoder::feature_logits(store, &repr)? * &probe.feature_adj).sum();
    Ok(bce + cfg.lambda_struct * graph + lab + feat)
}

fn analytic(store: &mut ParameterStore, probe: &Probe, cfg: &GradientSuiteConfig) -> Result<()> {
    store.zero_grads();
    let (repr, tape) = encoder::encode_batch(store, probe.obs.view())?;
    let u = encoder::disc_logits(store, &repr)?;
    let cells = u.len() as f64;
    let mut d_u = Array2::zeros(u.raw_dim());
    ndarray::Zip::from(&mut d_u)
        .and(&u)
        .and(&probe.targets)
        .for_each(|g, &a, &z| {
            let dg = if cfg.mutate_bce {
                crate::math::sigmoid(a) * 0.9 - z
            } else {
                bce_with_logits_grad(a, z)
            };
            *g = dg / cells;
        });
    let (_, graph_grad) = graph_regularizer_with_grad(&u, probe.features.view(), 2);
    d_u.scaled_add(cfg.lambda_struct, &graph_grad);
    let mut d_repr = encoder::disc_backward(store, &repr, &d_u)?;
    d_repr += &encoder::label_policy_backward(store, &repr, &probe.label_adj)?;
    d_repr += &encoder::feature_backward(store, &repr, &probe.feature_adj)?;
    encoder::encoder_backward(store, &tape, &d_repr)?;
    Ok(())
}

/// Central finite differences against the reverse pass for every block.
pub fn gradient_suite(cfg: &GradientSuiteConfig) -> Result<Vec<BlockCheck>> {
    let mut store = ParameterStore::new(&cfg.encoder, cfg.n_features, cfg.n_labels)?;
    let mut rng = seed::rng(cfg.seed);
    let blocks: Vec<_> = store.ids().collect();
    let mut checks: Vec<BlockCheck> = blocks
        .iter()
        .map(|&id| BlockCheck {
            block: store.spec(id).name.clone(),
            relative_error: 0.0,
            max_abs_error: 0.0,
            passed: true,
        })
        .collect();
    for _ in 0..cfg.inputs {
        let probe = random_probe(cfg, &mut rng);
        analytic(&mut store, &probe, cfg)?;
        for (check, &id) in checks.iter_mut().zip(&blocks) {
            let grad = store.grad(id).clone();
            let mut fd = Array2::zeros(grad.raw_dim());
            for idx in ndarray::indices(grad.raw_dim()) {
                let orig = store.value(id)[idx];
                store.value_mut(id)[idx] = orig + cfg.step;
                let up = objective(&store, &probe, cfg)?;
                store.value_mut(id)[idx] = orig - cfg.step;
                let dn = objective(&store, &probe, cfg)?;
                store.value_mut(id)[idx] = orig;
                fd[idx] = (up - dn) / (2.0 * cfg.step);
            }
            let diff = &grad - &fd;
            let norm = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rel = norm(&diff) / (norm(&grad) + 1e-8);
            check.relative_error = check.relative_error.max(rel);
            check.max_abs_error = diff.iter().fold(check.max_abs_error, |m, v| m.max(v.abs()));
        }
    }
    for c in &mut checks {
        c.passed = c.relative_error < 1e-4;
    }
    Ok(checks)
}

/// `uᵀ J v` of the encoder at `x` from the reverse pass versus central
/// differences along `v` with step `h`. Returns the relative error.
pub fn encode_jvp_check(store: &mut ParameterStore, x: &Array1<f64>, rng: &mut Rng, h: f64) -> Result<f64> {
    let v = Array1::from_shape_simple_fn(x.len(), || rng.random_range(-1.0..1.0));
    let u = Array2::from_shape_simple_fn((1, store.model_width()), || rng.random_range(-1.0..1.0));
    store.zero_grads();
    let (_, tape) = encoder::encode_batch(store, x.view().insert_axis(ndarray::Axis(0)))?;
    let d_in = encoder::encoder_backward(store, &tape, &u)?;
    let analytic = d_in.row(0).dot(&v);
    let up = encoder::encode(store, (x + &(&v * h)).view())?;
    let dn = encoder::encode(store, (x - &(&v * h)).view())?;
    let fd = u.row(0).dot(&(up - dn)) / (2.0 * h);
    Ok((analytic - fd).abs() / (analytic.abs() + 1e-8))
}
