use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{LinearIds, NormIds, ParameterStore};
use crate::error::{PmlError, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn linear(store: &ParameterStore, ids: LinearIds, x: &Array2<f64>) -> Array2<f64> {
    let w = &store.values[ids.w.0];
    let b = store.values[ids.b.0].row(0);
    let mut y = x.dot(w);
    y += &b;
    y
}

/// Accumulates into `ids` and returns the input adjoint.
fn linear_backward(
    grads: &mut [Array2<f64>],
    values: &[Array2<f64>],
    ids: LinearIds,
    x: &Array2<f64>,
    dy: &Array2<f64>,
) -> Array2<f64> {
    grads[ids.w.0] += &x.t().dot(dy);
    grads[ids.b.0].row_mut(0).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    dy.dot(&values[ids.w.0].t())
}

struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(store: &ParameterStore, ids: NormIds, x: &Array2<f64>) -> (Array2<f64>, NormCache) {
    let width = x.ncols() as f64;
    let mean = x.mean_axis(Axis(1)).expect("non-empty width");
    let mut xhat = x - &mean.view().insert_axis(Axis(1));
    let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / width;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    xhat *= &inv_std.view().insert_axis(Axis(1));
    let mut y = &xhat * &store.values[ids.gain.0].row(0);
    y += &store.values[ids.shift.0].row(0);
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_backward(
    grads: &mut [Array2<f64>],
    values: &[Array2<f64>],
    ids: NormIds,
    cache: &NormCache,
    dy: &Array2<f64>,
) -> Array2<f64> {
    grads[ids.gain.0]
        .row_mut(0)
        .scaled_add(1.0, &(dy * &cache.xhat).sum_axis(Axis(0)));
    grads[ids.shift.0].row_mut(0).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    let dxhat = dy * &values[ids.gain.0].row(0);
    let width = dy.ncols() as f64;
    let m1 = dxhat.sum_axis(Axis(1)) / width;
    let m2 = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / width;
    let mut dx = dxhat - &m1.view().insert_axis(Axis(1));
    dx -= &(&cache.xhat * &m2.view().insert_axis(Axis(1)));
    dx *= &cache.inv_std.view().insert_axis(Axis(1));
    dx
}

struct AttentionCache {
    input: Array2<f64>,
    value: Array2<f64>,
    norm: NormCache,
}

struct LayerCache {
    attention: Option<AttentionCache>,
    ff_in: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    norm2: Option<NormCache>,
}

/// Activations recorded by a forward pass, consumed by [`encoder_backward`].
pub struct Tape {
    version: u64,
    recorded: bool,
    input: Array2<f64>,
    layers: Vec<LayerCache>,
}

impl Tape {
    /// A tape with nothing recorded; backward on it fails.
    pub fn empty() -> Tape {
        Tape {
            version: 0,
            recorded: false,
            input: Array2::zeros((0, 0)),
            layers: Vec::new(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }
}

/// Encodes a single observation (features followed by the label mask).
pub fn encode(store: &ParameterStore, observation: ArrayView1<f64>) -> Result<Array1<f64>> {
    let batch = observation.insert_axis(Axis(0));
    let (repr, _) = encode_batch(store, batch)?;
    Ok(repr.row(0).to_owned())
}

/// Encodes a batch of observations, one per row.
pub fn encode_batch(store: &ParameterStore, inputs: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
    if inputs.ncols() != store.input_dim() {
        return Err(PmlError::Dimension {
            expected: store.input_dim(),
            actual: inputs.ncols(),
            context: "encoder input",
        });
    }
    let input = inputs.to_owned();
    let mut h = linear(store, store.layout.input, &input);
    let mut layers = Vec::with_capacity(store.layout.layers.len());
    let heads = store.config.head_count;
    let head_dim = store.config.model_width / heads;
    for ids in &store.layout.layers {
        let layer_input = h;
        let (ff_in, attention) = match ids.attention {
            Some(a) => {
                let q = linear(store, a.q, &layer_input);
                let k = linear(store, a.k, &layer_input);
                let v = linear(store, a.v, &layer_input);
                // Each head attends over the sequence, which is one token long:
                // the softmax weight is exactly 1 whatever the score.
                let mut mixed = Array2::zeros(v.raw_dim());
                for hd in 0..heads {
                    let cols = hd * head_dim..(hd + 1) * head_dim;
                    for r in 0..v.nrows() {
                        let score = q
                            .row(r)
                            .slice(ndarray::s![cols.clone()])
                            .dot(&k.row(r).slice(ndarray::s![cols.clone()]))
                            / (head_dim as f64).sqrt();
                        let weight = (score - crate::math::log_sum_exp(&[score])).exp();
                        mixed
                            .row_mut(r)
                            .slice_mut(ndarray::s![cols.clone()])
                            .scaled_add(weight, &v.row(r).slice(ndarray::s![cols.clone()]));
                    }
                }
                let out = linear(store, a.o, &mixed);
                let (normed, norm) = layer_norm(store, a.norm, &(&layer_input + &out));
                (
                    normed,
                    Some(AttentionCache {
                        input: layer_input,
                        value: mixed,
                        norm,
                    }),
                )
            }
            None => (layer_input, None),
        };
        let pre_act = linear(store, ids.ff1, &ff_in);
        let act = pre_act.mapv(gelu);
        let ff_out = linear(store, ids.ff2, &act);
        let summed = &ff_in + &ff_out;
        let (out, norm2) = match ids.norm2 {
            Some(n) => {
                let (y, c) = layer_norm(store, n, &summed);
                (y, Some(c))
            }
            None => (summed, None),
        };
        layers.push(LayerCache {
            attention,
            ff_in,
            pre_act,
            act,
            norm2,
        });
        h = out;
    }
    if !h.iter().all(|v| v.is_finite()) {
        return Err(PmlError::NumericAbort("encoder forward".into()));
    }
    Ok((
        h,
        Tape {
            version: store.version,
            recorded: true,
            input,
            layers,
        },
    ))
}

/// Accumulates encoder gradients for the adjoint `d_repr` of the
/// representation and returns the adjoint of the input.
pub fn encoder_backward(
    store: &mut ParameterStore,
    tape: &Tape,
    d_repr: &Array2<f64>,
) -> Result<Array2<f64>> {
    if !tape.recorded {
        return Err(PmlError::BackwardWithoutForward);
    }
    if tape.version != store.version {
        return Err(PmlError::StaleTape {
            tape: tape.version,
            store: store.version,
        });
    }
    if d_repr.dim() != (tape.batch_size(), store.model_width()) {
        return Err(PmlError::Dimension {
            expected: store.model_width(),
            actual: d_repr.ncols(),
            context: "representation adjoint",
        });
    }
    let layout = store.layout.clone();
    let (values, grads) = store.split_mut();
    let mut dh = d_repr.clone();
    for (ids, cache) in layout.layers.iter().zip(&tape.layers).rev() {
        let d_sum = match (ids.norm2, &cache.norm2) {
            (Some(n), Some(c)) => layer_norm_backward(grads, values, n, c, &dh),
            _ => dh,
        };
        let d_act = linear_backward(grads, values, ids.ff2, &cache.act, &d_sum);
        let d_pre = &d_act * &cache.pre_act.mapv(gelu_grad);
        let mut d_ff_in = linear_backward(grads, values, ids.ff1, &cache.ff_in, &d_pre);
        d_ff_in += &d_sum;
        dh = match (ids.attention, &cache.attention) {
            (Some(a), Some(c)) => {
                let d_res = layer_norm_backward(grads, values, a.norm, &c.norm, &d_ff_in);
                let d_mixed = linear_backward(grads, values, a.o, &c.value, &d_res);
                // unit attention weight: value adjoint passes straight through,
                // query and key receive nothing
                let mut d_in = linear_backward(grads, values, a.v, &c.input, &d_mixed);
                d_in += &d_res;
                d_in
            }
            _ => d_ff_in,
        };
    }
    Ok(linear_backward(grads, values, layout.input, &tape.input, &dh))
}

fn check_repr(store: &ParameterStore, repr: &Array2<f64>) -> Result<()> {
    if repr.ncols() != store.model_width() {
        return Err(PmlError::Dimension {
            expected: store.model_width(),
            actual: repr.ncols(),
            context: "representation",
        });
    }
    Ok(())
}

fn check_adjoint(repr: &Array2<f64>, d: &Array2<f64>, width: usize) -> Result<()> {
    if d.nrows() != repr.nrows() || d.ncols() != width {
        return Err(PmlError::Dimension {
            expected: width,
            actual: d.ncols(),
            context: "head adjoint",
        });
    }
    Ok(())
}

/// Discriminative head logits U, one row per representation.
pub fn disc_logits(store: &ParameterStore, repr: &Array2<f64>) -> Result<Array2<f64>> {
    check_repr(store, repr)?;
    Ok(linear(store, store.layout.disc, repr))
}

pub fn disc_backward(
    store: &mut ParameterStore,
    repr: &Array2<f64>,
    d_logits: &Array2<f64>,
) -> Result<Array2<f64>> {
    check_repr(store, repr)?;
    check_adjoint(repr, d_logits, store.n_labels)?;
    let ids = store.layout.disc;
    let (values, grads) = store.split_mut();
    Ok(linear_backward(grads, values, ids, repr, d_logits))
}

/// Label-policy logits θ_j·φ, without bias.
pub fn label_logits(store: &ParameterStore, repr: &Array2<f64>) -> Result<Array2<f64>> {
    check_repr(store, repr)?;
    Ok(repr.dot(&store.values[store.layout.label_policy.0]))
}

pub fn label_policy_backward(
    store: &mut ParameterStore,
    repr: &Array2<f64>,
    d_logits: &Array2<f64>,
) -> Result<Array2<f64>> {
    check_repr(store, repr)?;
    check_adjoint(repr, d_logits, store.n_labels)?;
    let id = store.layout.label_policy;
    store.grads[id.0] += &repr.t().dot(d_logits);
    Ok(d_logits.dot(&store.values[id.0].t()))
}

/// Feature-policy logits ψ·h + b, before temperature and masking.
pub fn feature_logits(store: &ParameterStore, repr: &Array2<f64>) -> Result<Array2<f64>> {
    check_repr(store, repr)?;
    Ok(linear(store, store.layout.feature_policy, repr))
}

pub fn feature_backward(
    store: &mut ParameterStore,
    repr: &Array2<f64>,
    d_logits: &Array2<f64>,
) -> Result<Array2<f64>> {
    check_repr(store, repr)?;
    check_adjoint(repr, d_logits, store.n_features)?;
    let ids = store.layout.feature_policy;
    let (values, grads) = store.split_mut();
    Ok(linear_backward(grads, values, ids, repr, d_logits))
}
