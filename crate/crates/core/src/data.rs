//! Dataset representation, the text formats, candidate-noise injection,
//! standardization and k-fold splitting.
//!
//! ## Text formats
//!
//! Both formats start with a header line `#pml n=<n> d=<d> L=<L>` followed by
//! exactly `n` instance lines made of up to three `|`-separated blocks:
//!
//! ```text
//! f_1,...,f_d | y_1,...,y_L | c_1;c_2;...     (dense)
//! i:v i:v ... | y_1,...,y_L | c_1;c_2;...     (sparse, 0-based feature index)
//! ```
//!
//! The truth block may be left empty for purely partial data, in which case
//! the candidate block is required. When the candidate block is absent the
//! candidate set defaults to the positive labels of the truth block. Label
//! and candidate indices are 0-based.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{PmlError, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Csv,
    SparseLibfmt,
}

impl std::str::FromStr for DataFormat {
    type Err = PmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "sparse" | "sparse-libfmt" => Ok(DataFormat::SparseLibfmt),
            other => Err(PmlError::Config(format!("unknown data format `{other}`"))),
        }
    }
}

/// Feature matrix, optional ground truth and per-instance candidate sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    truth: Option<Array2<u8>>,
    candidates: Vec<Vec<usize>>,
    n_labels: usize,
    /// True when the candidate sets were copied from the truth block rather
    /// than observed (the file had no candidate block).
    candidates_from_truth: bool,
    pub feature_names: Option<Vec<String>>,
    pub label_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset and checks every structural invariant.
    pub fn new(
        features: Array2<f64>,
        truth: Option<Array2<u8>>,
        candidates: Vec<Vec<usize>>,
        n_labels: usize,
    ) -> Result<Self> {
        let ds = Dataset {
            features,
            truth,
            candidates,
            n_labels,
            candidates_from_truth: false,
            feature_names: None,
            label_names: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Dataset whose candidate sets are the positive labels of `truth`.
    pub fn from_truth(features: Array2<f64>, truth: Array2<u8>) -> Result<Self> {
        let n_labels = truth.ncols();
        let candidates = positives(&truth);
        let mut ds = Dataset::new(features, Some(truth), candidates, n_labels)?;
        ds.candidates_from_truth = true;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let (n, d) = self.features.dim();
        if n == 0 || d == 0 || self.n_labels == 0 {
            return Err(PmlError::InvalidData(format!(
                "n, d and L must be at least 1 (got n={n}, d={d}, L={})",
                self.n_labels
            )));
        }
        if let Some(pos) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(PmlError::InvalidData(format!(
                "non-finite feature at instance {}, column {}",
                pos / d,
                pos % d
            )));
        }
        if self.candidates.len() != n {
            return Err(PmlError::InvalidData(format!(
                "{} candidate rows for {n} instances",
                self.candidates.len()
            )));
        }
        if let Some(truth) = &self.truth {
            if truth.dim() != (n, self.n_labels) {
                return Err(PmlError::InvalidData(format!(
                    "truth matrix is {:?}, expected ({n}, {})",
                    truth.dim(),
                    self.n_labels
                )));
            }
            if truth.iter().any(|&v| v > 1) {
                return Err(PmlError::InvalidData("truth entries must be 0 or 1".into()));
            }
        }
        for (i, row) in self.candidates.iter().enumerate() {
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(PmlError::InvalidData(format!(
                    "candidate indices of instance {i} are not strictly increasing"
                )));
            }
            if let Some(&bad) = row.iter().find(|&&j| j >= self.n_labels) {
                return Err(PmlError::InvalidData(format!(
                    "instance {i}: candidate label {bad} >= L={}",
                    self.n_labels
                )));
            }
            if let Some(truth) = &self.truth {
                for j in 0..self.n_labels {
                    if truth[[i, j]] == 1 && row.binary_search(&j).is_err() {
                        return Err(PmlError::InvalidData(format!(
                            "instance {i}: true label {j} missing from candidate set"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_instances(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn truth(&self) -> Option<&Array2<u8>> {
        self.truth.as_ref()
    }

    pub fn candidates(&self) -> &[Vec<usize>] {
        &self.candidates
    }

    pub fn candidates_from_truth(&self) -> bool {
        self.candidates_from_truth
    }

    /// n × L 0/1 matrix of candidate membership.
    pub fn candidate_matrix(&self) -> Array2<u8> {
        let mut m = Array2::zeros((self.n_instances(), self.n_labels));
        for (i, row) in self.candidates.iter().enumerate() {
            for &j in row {
                m[[i, j]] = 1;
            }
        }
        m
    }

    /// Instances whose candidate set is empty. Stage 1 treats every label of
    /// these rows as negative.
    pub fn empty_candidate_rows(&self) -> Vec<usize> {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_empty())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            truth: self.truth.as_ref().map(|t| t.select(Axis(0), indices)),
            candidates: indices.iter().map(|&i| self.candidates[i].clone()).collect(),
            n_labels: self.n_labels,
            candidates_from_truth: self.candidates_from_truth,
            feature_names: self.feature_names.clone(),
            label_names: self.label_names.clone(),
        }
    }

    pub fn with_features(&self, features: Array2<f64>) -> Result<Dataset> {
        if features.nrows() != self.n_instances() {
            return Err(PmlError::Dimension {
                expected: self.n_instances(),
                actual: features.nrows(),
                context: "replacement feature rows",
            });
        }
        let mut out = self.clone();
        out.features = features;
        out.validate()?;
        Ok(out)
    }
}

pub fn positives(truth: &Array2<u8>) -> Vec<Vec<usize>> {
    truth
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &v)| v == 1)
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// file IO

struct Header {
    n: usize,
    d: usize,
    labels: usize,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> PmlError {
    PmlError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_header(path: &Path, line: &str) -> Result<Header> {
    let rest = line
        .trim()
        .strip_prefix("#pml")
        .ok_or_else(|| parse_err(path, 1, "header must start with `#pml`"))?;
    let (mut n, mut d, mut labels) = (None, None, None);
    for token in rest.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| parse_err(path, 1, format!("malformed header field `{token}`")))?;
        let value: usize = value
            .parse()
            .map_err(|_| parse_err(path, 1, format!("header value `{token}` is not an integer")))?;
        match key {
            "n" => n = Some(value),
            "d" => d = Some(value),
            "L" => labels = Some(value),
            other => return Err(parse_err(path, 1, format!("unknown header key `{other}`"))),
        }
    }
    match (n, d, labels) {
        (Some(n), Some(d), Some(labels)) if n > 0 && d > 0 && labels > 0 => {
            Ok(Header { n, d, labels })
        }
        _ => Err(parse_err(path, 1, "header needs positive n=, d= and L=")),
    }
}

fn parse_f64(path: &Path, line: usize, token: &str) -> Result<f64> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("`{}` is not a number", token.trim())))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite feature `{}`", token.trim())));
    }
    Ok(v)
}

/// Reads a dataset in either text format.
pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| PmlError::io(format!("reading {}", path.display()), e))?;
    parse_dataset(&text, format, path)
}

/// Parses dataset text; `origin` only labels error messages.
pub fn parse_dataset(text: &str, format: DataFormat, origin: &Path) -> Result<Dataset> {
    let path: PathBuf = origin.to_path_buf();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| parse_err(&path, 1, "empty file"))?;
    let header = parse_header(&path, header_line)?;
    let Header { n, d, labels } = header;

    let mut features = Array2::<f64>::zeros((n, d));
    let mut truth = Array2::<u8>::zeros((n, labels));
    let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut has_truth: Option<bool> = None;
    let mut has_candidates: Option<bool> = None;
    let mut row = 0usize;

    for (line_no, line) in lines {
        if row == n {
            return Err(parse_err(&path, line_no, format!("more than n={n} instance lines")));
        }
        let blocks: Vec<&str> = line.split('|').collect();
        if blocks.len() > 3 {
            return Err(parse_err(&path, line_no, "more than three `|` blocks"));
        }

        match format {
            DataFormat::Csv => {
                let cells: Vec<&str> = blocks[0].split(',').collect();
                if cells.len() != d {
                    return Err(parse_err(
                        &path,
                        line_no,
                        format!("expected {d} features, found {}", cells.len()),
                    ));
                }
                for (c, cell) in cells.iter().enumerate() {
                    features[[row, c]] = parse_f64(&path, line_no, cell)?;
                }
            }
            DataFormat::SparseLibfmt => {
                for pair in blocks[0]
                    .split(|ch: char| ch.is_whitespace() || ch == ',')
                    .filter(|s| !s.is_empty())
                {
                    let (idx, value) = pair.split_once(':').ok_or_else(|| {
                        parse_err(&path, line_no, format!("expected index:value, got `{pair}`"))
                    })?;
                    let idx: usize = idx.parse().map_err(|_| {
                        parse_err(&path, line_no, format!("bad feature index `{idx}`"))
                    })?;
                    if idx >= d {
                        return Err(parse_err(
                            &path,
                            line_no,
                            format!("feature index {idx} >= d={d}"),
                        ));
                    }
                    features[[row, idx]] = parse_f64(&path, line_no, value)?;
                }
            }
        }

        let truth_block = blocks.get(1).map(|s| s.trim()).unwrap_or("");
        let row_has_truth = !truth_block.is_empty();
        if *has_truth.get_or_insert(row_has_truth) != row_has_truth {
            return Err(parse_err(&path, line_no, "truth block present on some rows only"));
        }
        if row_has_truth {
            let cells: Vec<&str> = truth_block.split(',').collect();
            if cells.len() != labels {
                return Err(parse_err(
                    &path,
                    line_no,
                    format!("expected {labels} labels, found {}", cells.len()),
                ));
            }
            for (j, cell) in cells.iter().enumerate() {
                truth[[row, j]] = match cell.trim() {
                    "0" => 0,
                    "1" => 1,
                    other => {
                        return Err(parse_err(
                            &path,
                            line_no,
                            format!("label value `{other}` is not 0 or 1"),
                        ))
                    }
                };
            }
        }

        let row_has_cands = blocks.len() == 3;
        if *has_candidates.get_or_insert(row_has_cands) != row_has_cands {
            return Err(parse_err(&path, line_no, "candidate block present on some rows only"));
        }
        if row_has_cands {
            let mut set = Vec::new();
            for tok in blocks[2].split(';').map(str::trim).filter(|s| !s.is_empty()) {
                let j: usize = tok.parse().map_err(|_| {
                    parse_err(&path, line_no, format!("bad candidate index `{tok}`"))
                })?;
                if j >= labels {
                    return Err(parse_err(
                        &path,
                        line_no,
                        format!("candidate label {j} >= L={labels}"),
                    ));
                }
                set.push(j);
            }
            set.sort_unstable();
            set.dedup();
            candidates.push(set);
        }
        row += 1;
    }
    if row != n {
        return Err(parse_err(
            &path,
            text.lines().count(),
            format!("header declares n={n} but found {row} instance lines"),
        ));
    }

    let truth = if has_truth.unwrap_or(false) { Some(truth) } else { None };
    match (truth, has_candidates.unwrap_or(false)) {
        (Some(t), false) => Dataset::from_truth(features, t),
        (t, true) => Dataset::new(features, t, candidates, labels),
        (None, false) => Err(parse_err(&path, 1, "rows carry neither truth nor candidates")),
    }
}

fn format_dataset(ds: &Dataset, format: DataFormat) -> String {
    let (n, d) = ds.features.dim();
    let mut out = String::new();
    let _ = writeln!(out, "#pml n={n} d={d} L={}", ds.n_labels);
    for i in 0..n {
        match format {
            DataFormat::Csv => {
                for c in 0..d {
                    if c > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{}", ds.features[[i, c]]);
                }
            }
            DataFormat::SparseLibfmt => {
                let mut first = true;
                for c in 0..d {
                    let v = ds.features[[i, c]];
                    if v != 0.0 {
                        if !first {
                            out.push(' ');
                        }
                        first = false;
                        let _ = write!(out, "{c}:{v}");
                    }
                }
            }
        }
        out.push_str(" | ");
        if let Some(t) = &ds.truth {
            for j in 0..ds.n_labels {
                if j > 0 {
                    out.push(',');
                }
                out.push(if t[[i, j]] == 1 { '1' } else { '0' });
            }
        }
        if !ds.candidates_from_truth || ds.truth.is_none() {
            out.push_str(" | ");
            for (k, j) in ds.candidates[i].iter().enumerate() {
                if k > 0 {
                    out.push(';');
                }
                let _ = write!(out, "{j}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>, format: DataFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_dataset(ds, format))
        .map_err(|e| PmlError::io(format!("writing {}", path.display()), e))
}

// ---------------------------------------------------------------------------
// noise, standardization, folds

/// Adds each truly negative label to the candidate set independently with
/// probability `rate`. True positives are always kept.
pub fn inject_candidate_noise(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(PmlError::Config(format!("noise rate {rate} outside [0, 1]")));
    }
    let truth = ds
        .truth
        .as_ref()
        .ok_or_else(|| PmlError::InvalidData("noise injection needs ground truth".into()))?;
    let mut rng = seed::rng(seed);
    let mut candidates = Vec::with_capacity(ds.n_instances());
    for row in truth.rows() {
        let mut set = Vec::new();
        for (j, &y) in row.iter().enumerate() {
            // one draw per negative cell, row-major
            if y == 1 || rng.random::<f64>() < rate {
                set.push(j);
            }
        }
        candidates.push(set);
    }
    let mut out = ds.clone();
    out.candidates = candidates;
    out.candidates_from_truth = false;
    Ok(out)
}

/// Per-feature mean and scale of a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Columns with zero variance; these map to exactly 0.
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(features: &Array2<f64>) -> Standardizer {
        let n = features.nrows() as f64;
        let mut mean = Vec::with_capacity(features.ncols());
        let mut scale = Vec::with_capacity(features.ncols());
        let mut constant = Vec::with_capacity(features.ncols());
        for col in features.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let sd = var.sqrt();
            let degenerate = sd <= 1e-12 * m.abs().max(1.0);
            mean.push(m);
            scale.push(if degenerate { 1.0 } else { sd });
            constant.push(degenerate);
        }
        Standardizer {
            mean,
            scale,
            constant,
        }
    }

    pub fn apply(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.mean.len() {
            return Err(PmlError::Dimension {
                expected: self.mean.len(),
                actual: features.ncols(),
                context: "standardizer columns",
            });
        }
        let mut out = features.clone();
        for (c, mut col) in out.columns_mut().into_iter().enumerate() {
            if self.constant[c] {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|v| (v - self.mean[c]) / self.scale[c]);
            }
        }
        Ok(out)
    }
}

/// Standardizes a dataset with its own statistics.
pub fn standardize_features(ds: &Dataset) -> Result<(Dataset, Standardizer)> {
    let st = Standardizer::fit(&ds.features);
    let features = st.apply(&ds.features)?;
    Ok((ds.with_features(features)?, st))
}

/// Assignment of every instance to one of `fold_count` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_count: usize,
    pub assignments: Vec<usize>,
}

impl FoldSplit {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded permutation followed by round-robin fold assignment.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 || k > n {
        return Err(PmlError::Config(format!(
            "fold count k={k} must satisfy 2 <= k <= n={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut assignments = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = pos % k;
    }
    Ok(FoldSplit {
        fold_count: k,
        assignments,
    })
}

pub fn column_means(features: &Array2<f64>) -> Array1<f64> {
    features.mean_axis(Axis(0)).expect("non-empty matrix")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> Dataset {
        Dataset::new(
            array![[0.5, -1.0, 2.25], [3.0, 0.0, -0.125]],
            Some(array![[1, 0], [0, 1]]),
            vec![vec![0, 1], vec![1]],
            2,
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_small() {
        let ds = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        save_dataset(&ds, &path, DataFormat::Csv).unwrap();
        let back = load_dataset(&path, DataFormat::Csv).unwrap();
        assert_eq!(back, ds);
        let sparse = dir.path().join("toy.sparse");
        save_dataset(&ds, &sparse, DataFormat::SparseLibfmt).unwrap();
        assert_eq!(load_dataset(&sparse, DataFormat::SparseLibfmt).unwrap(), ds);
    }

    #[test]
    fn missing_candidate_block_defaults_to_truth() {
        let text = "#pml n=2 d=1 L=3\n1.0 | 1,0,1\n2.0 | 0,1,0\n";
        let ds = parse_dataset(text, DataFormat::Csv, Path::new("mem")).unwrap();
        assert_eq!(ds.candidates(), &[vec![0, 2], vec![1]]);
        assert!(ds.candidates_from_truth());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let cases = [
            ("pml n=1 d=1 L=1\n1 | 1\n", 1),
            ("#pml n=2 d=2 L=1\n1,2 | 1\n3 | 1\n", 3),
            ("#pml n=1 d=1 L=2\n1 | 1,0 | 0;2\n", 2),
            ("#pml n=1 d=2 L=1\n1,nan | 1\n", 2),
            ("#pml n=1 d=2 L=1\n1,inf | 1\n", 2),
        ];
        for (text, expected_line) in cases {
            match parse_dataset(text, DataFormat::Csv, Path::new("mem")) {
                Err(PmlError::Parse { line, .. }) => assert_eq!(line, expected_line, "{text}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn candidates_must_cover_truth() {
        let err = Dataset::new(array![[1.0]], Some(array![[1, 1]]), vec![vec![0]], 2);
        assert!(matches!(err, Err(PmlError::InvalidData(_))));
    }

    #[test]
    fn noise_extremes() {
        let ds = toy();
        let zero = inject_candidate_noise(&ds, 0.0, 3).unwrap();
        assert_eq!(zero.candidates(), &[vec![0], vec![1]]);
        let full = inject_candidate_noise(&ds, 1.0, 3).unwrap();
        assert_eq!(full.candidates(), &[vec![0, 1], vec![0, 1]]);
        assert!(inject_candidate_noise(&ds, 1.5, 3).is_err());
        assert!(inject_candidate_noise(&ds, -0.1, 3).is_err());
    }

    #[test]
    fn standardize_degenerate_columns() {
        let ds = Dataset::from_truth(
            array![[0.1, -1.0], [0.1, 1.0], [0.1, -1.0], [0.1, 1.0]],
            array![[1], [1], [1], [1]],
        )
        .unwrap();
        let (out, st) = standardize_features(&ds).unwrap();
        assert!(out.features().column(0).iter().all(|&v| v == 0.0));
        assert_eq!(st.scale[0], 1.0);
        assert_eq!(out.features().column(1).to_vec(), vec![-1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn kfold_sizes() {
        let split = kfold_split(10, 5, 1).unwrap();
        assert_eq!(split.fold_sizes(), vec![2; 5]);
        let mut sizes = kfold_split(11, 5, 1).unwrap().fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
        assert!(kfold_split(4, 5, 0).is_err());
        assert!(kfold_split(4, 1, 0).is_err());
    }
}
