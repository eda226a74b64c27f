//! Downstream classifiers trained on a feature subset.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{PmlError, Result};
use crate::math::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DownstreamKind {
    LinearOvr,
    Mlknn,
}

impl std::str::FromStr for DownstreamKind {
    type Err = PmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-ovr" => Ok(DownstreamKind::LinearOvr),
            "mlknn" => Ok(DownstreamKind::Mlknn),
            other => Err(PmlError::Config(format!("unknown downstream classifier `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamConfig {
    pub kind: DownstreamKind,
    /// Gradient-descent iterations of the linear model.
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Neighbours and Laplace smoothing of ML-kNN.
    pub knn_k: usize,
    pub smoothing: f64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        DownstreamConfig {
            kind: DownstreamKind::LinearOvr,
            iterations: 300,
            learning_rate: 0.5,
            l2: 1e-3,
            knn_k: 10,
            smoothing: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Predictor {
    Linear {
        weights: Array2<f64>,
        bias: Array1<f64>,
        /// Labels whose training targets were constant, with that constant.
        constant: Vec<Option<f64>>,
    },
    Mlknn(Mlknn),
}

impl Predictor {
    /// Per-label probabilities.
    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Predictor::Linear {
                weights,
                bias,
                constant,
            } => {
                if x.ncols() != weights.nrows() {
                    return Err(PmlError::Dimension {
                        expected: weights.nrows(),
                        actual: x.ncols(),
                        context: "downstream features",
                    });
                }
                let mut s = (x.dot(weights) + bias).mapv(sigmoid);
                for (j, c) in constant.iter().enumerate() {
                    if let Some(c) = c {
                        s.column_mut(j).fill(*c);
                    }
                }
                Ok(s)
            }
            Predictor::Mlknn(m) => m.scores(x),
        }
    }

    pub fn decisions(&self, x: ArrayView2<f64>) -> Result<Array2<u8>> {
        Ok(super::metrics::decisions(self.scores(x)?.view(), 0.5))
    }
}

/// Fits a classifier on `x` against targets in [0, 1] (soft targets allowed
/// for the linear model; ML-kNN thresholds them at ½).
pub fn train_downstream(x: ArrayView2<f64>, targets: ArrayView2<f64>, cfg: &DownstreamConfig) -> Result<Predictor> {
    if x.ncols() == 0 {
        return Err(PmlError::Config("downstream feature subset is empty".into()));
    }
    if x.nrows() != targets.nrows() || x.nrows() == 0 {
        return Err(PmlError::Dimension {
            expected: x.nrows(),
            actual: targets.nrows(),
            context: "downstream targets",
        });
    }
    match cfg.kind {
        DownstreamKind::LinearOvr => Ok(fit_linear(x, targets, cfg)),
        DownstreamKind::Mlknn => Ok(Predictor::Mlknn(Mlknn::fit(
            x,
            targets.mapv(|t| u8::from(t >= 0.5)).view(),
            cfg.knn_k,
            cfg.smoothing,
        ))),
    }
}

fn fit_linear(x: ArrayView2<f64>, y: ArrayView2<f64>, cfg: &DownstreamConfig) -> Predictor {
    let (n, p) = x.dim();
    let l = y.ncols();
    let constant: Vec<Option<f64>> = y
        .columns()
        .into_iter()
        .map(|c| {
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (hi - lo < 1e-12).then_some(lo)
        })
        .collect();
    let mut w = Array2::<f64>::zeros((p, l));
    let mut b = Array1::<f64>::zeros(l);
    let inv_n = 1.0 / n as f64;
    for _ in 0..cfg.iterations {
        let residual = (x.dot(&w) + &b).mapv(sigmoid) - y;
        let gw = x.t().dot(&residual) * inv_n + &w * cfg.l2;
        let gb = residual.sum_axis(Axis(0)) * inv_n;
        w.scaled_add(-cfg.learning_rate, &gw);
        b.scaled_add(-cfg.learning_rate, &gb);
    }
    Predictor::Linear {
        weights: w,
        bias: b,
        constant,
    }
}

/// ML-kNN: label posteriors from neighbour label counts with Laplace
/// smoothing `s`.
#[derive(Debug, Clone)]
pub struct Mlknn {
    train: Array2<f64>,
    k: usize,
    prior: Vec<f64>,
    /// `likelihood[h][l][c]` = P(c of k neighbours carry l | H_h).
    likelihood: [Vec<Vec<f64>>; 2],
    labels: Array2<u8>,
}

fn nearest(train: &ArrayView2<f64>, q: ndarray::ArrayView1<f64>, k: usize, skip: Option<usize>) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = train
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, i)| i).collect()
}

impl Mlknn {
    pub fn fit(x: ArrayView2<f64>, y: ArrayView2<u8>, k: usize, s: f64) -> Mlknn {
        let (n, l) = y.dim();
        let k = k.min(n.saturating_sub(1)).max(1);
        let prior: Vec<f64> = (0..l)
            .map(|j| (s + y.column(j).iter().map(|&v| f64::from(v)).sum::<f64>()) / (2.0 * s + n as f64))
            .collect();
        let mut counts = [vec![vec![0.0; k + 1]; l], vec![vec![0.0; k + 1]; l]];
        for i in 0..n {
            let nb = nearest(&x, x.row(i), k, Some(i));
            for j in 0..l {
                let c = nb.iter().filter(|&&m| y[[m, j]] == 1).count();
                counts[usize::from(y[[i, j]])][j][c] += 1.0;
            }
        }
        let likelihood = counts.map(|per_label| {
            per_label
                .into_iter()
                .map(|cs| {
                    let total: f64 = cs.iter().sum();
                    cs.iter().map(|c| (s + c) / (s * (k + 1) as f64 + total)).collect()
                })
                .collect()
        });
        Mlknn {
            train: x.to_owned(),
            k,
            prior,
            likelihood,
            labels: y.to_owned(),
        }
    }

    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.train.ncols() {
            return Err(PmlError::Dimension {
                expected: self.train.ncols(),
                actual: x.ncols(),
                context: "ML-kNN features",
            });
        }
        let l = self.prior.len();
        let mut out = Array2::zeros((x.nrows(), l));
        for (r, q) in x.rows().into_iter().enumerate() {
            let nb = nearest(&self.train.view(), q, self.k, None);
            for j in 0..l {
                let c = nb.iter().filter(|&&m| self.labels[[m, j]] == 1).count();
                let p1 = self.prior[j] * self.likelihood[1][j][c];
                let p0 = (1.0 - self.prior[j]) * self.likelihood[0][j][c];
                out[[r, j]] = p1 / (p1 + p0);
            }
        }
        Ok(out)
    }
}
