use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{Group, ParameterStore};
use crate::error::{PmlError, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer with per-block state.
///
/// A step only touches the requested groups. New values are computed for
/// all of them before anything is written; if one is non-finite the step
/// returns [`PmlError::NumericAbort`] and the store and moments are left
/// as they were.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    steps: Vec<u32>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, store: &ParameterStore) -> Optimizer {
        let zeros = || {
            store
                .values
                .iter()
                .map(|v| Array2::zeros(v.raw_dim()))
                .collect::<Vec<_>>()
        };
        let (first, second) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (zeros(), zeros()),
        };
        Optimizer {
            kind,
            first,
            second,
            steps: vec![0; store.values.len()],
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Descends the current gradients of every block whose group appears in
    /// `plan`, at that group's rate. Groups with rate 0 are left untouched.
    pub fn step(&mut self, store: &mut ParameterStore, plan: &[(Group, f64)]) -> Result<()> {
        let rate = |g: Group| plan.iter().find(|(pg, _)| *pg == g).map(|&(_, lr)| lr);
        let ids: Vec<(usize, f64)> = (0..store.specs.len())
            .filter_map(|i| rate(store.specs[i].group).map(|lr| (i, lr)))
            .filter(|&(_, lr)| lr != 0.0)
            .collect();
        if ids.is_empty() {
            return Ok(());
        }
        let mut staged = Vec::with_capacity(ids.len());
        for &(i, lr) in &ids {
            let w = &store.values[i];
            let g = &store.grads[i];
            let update = match self.kind {
                OptimizerKind::Sgd => (w - &(g * lr), None),
                OptimizerKind::Adam => {
                    let t = self.steps[i] as i32 + 1;
                    let m = &self.first[i] * BETA1 + &(g * (1.0 - BETA1));
                    let v = &self.second[i] * BETA2 + &(g.mapv(|x| x * x) * (1.0 - BETA2));
                    let c1 = 1.0 - BETA1.powi(t);
                    let c2 = 1.0 - BETA2.powi(t);
                    let mut next = w.clone();
                    ndarray::Zip::from(&mut next)
                        .and(&m)
                        .and(&v)
                        .for_each(|w, &m, &v| *w -= lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS));
                    (next, Some((m, v)))
                }
            };
            if !update.0.iter().all(|x| x.is_finite()) {
                return Err(PmlError::NumericAbort(format!(
                    "update of `{}`",
                    store.specs[i].name
                )));
            }
            staged.push(update);
        }
        store.version += 1;
        for (&(i, _), (next, moments)) in ids.iter().zip(staged) {
            store.values[i] = next;
            if let Some((m, v)) = moments {
                self.first[i] = m;
                self.second[i] = v;
            }
            self.steps[i] += 1;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn store() -> ParameterStore {
        ParameterStore::new(
            &EncoderConfig {
                model_width: 4,
                head_count: 1,
                layer_count: 1,
                feedforward_width: 4,
                ..EncoderConfig::default()
            },
            2,
            2,
        )
        .unwrap()
    }

    #[test]
    fn sgd_moves_only_requested_group() {
        let mut s = store();
        for g in s.grads.iter_mut() {
            g.fill(1.0);
        }
        let before = s.values.clone();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &s);
        opt.step(&mut s, &[(Group::LabelPolicy, 0.1)]).unwrap();
        for (i, spec) in s.specs.iter().enumerate() {
            if spec.group == Group::LabelPolicy {
                assert!(s.values[i].iter().zip(&before[i]).all(|(a, b)| (a - (b - 0.1)).abs() < 1e-15));
            } else {
                assert_eq!(s.values[i], before[i]);
            }
        }
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut s = store();
        for g in s.grads.iter_mut() {
            g.fill(-3.0);
        }
        let before = s.values.clone();
        let mut opt = Optimizer::new(OptimizerKind::Adam, &s);
        opt.step(&mut s, &[(Group::Encoder, 0.01)]).unwrap();
        let id = s.find("input.w").unwrap();
        for (a, b) in s.values[id.0].iter().zip(&before[id.0]) {
            assert!((a - b - 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_step_is_rolled_back() {
        let mut s = store();
        let id = s.find("disc.w").unwrap();
        s.grads[id.0][[0, 0]] = f64::NAN;
        let before = s.values.clone();
        let version = s.version;
        let mut opt = Optimizer::new(OptimizerKind::Adam, &s);
        let err = opt.step(&mut s, &[(Group::Encoder, 0.1), (Group::DiscHead, 0.1)]);
        assert!(matches!(err, Err(PmlError::NumericAbort(_))));
        assert_eq!(s.values, before);
        assert_eq!(s.version, version);
    }
}
