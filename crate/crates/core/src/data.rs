//! Labelled feature matrices: CSV loading, a synthetic Gaussian-cluster task,
//! the held-out split, standardisation and minibatching.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                left: features.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                classes: num_classes,
            });
        }
        if !features.is_finite() {
            return Err(Error::InvalidArgument(
                "dataset features must be finite".into(),
            ));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Parses `label,f1,f2,...` lines. Blank lines are skipped.
pub fn parse_csv(text: &str, origin: &str) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut dim: Option<usize> = None;
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label_field = fields.next().unwrap_or_default();
        let label: usize = label_field.parse().map_err(|_| {
            err(
                lineno,
                format!("label `{label_field}` is not a class index"),
            )
        })?;
        let start = values.len();
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| err(lineno, format!("`{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite value `{f}`")));
            }
            values.push(v);
        }
        let width = values.len() - start;
        match dim {
            None if width == 0 => return Err(err(lineno, "row has no features".into())),
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(err(lineno, format!("expected {d} features, found {width}")))
            }
            Some(_) => {}
        }
        labels.push(label);
    }
    let dim = dim.ok_or_else(|| err(0, "no data rows".into()))?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let features = Matrix::from_vec(labels.len(), dim, values)?;
    Dataset::new(features, labels, num_classes)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, &path.display().to_string())
}

/// Writes the dataset in the format `load_csv` reads. Floats use Rust's
/// shortest round-trip formatting, so a reload is exact.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (r, &y) in dataset.labels.iter().enumerate() {
        out.push_str(&y.to_string());
        for v in dataset.features.row(r) {
            out.push(',');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub separation: f64,
    pub seed: u64,
}

/// `classes` unit-covariance Gaussian clusters whose means lie on a sphere of
/// radius `separation`. Rows are grouped by class.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.dim == 0 || spec.per_class == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic task needs positive classes, dim and per_class, got {spec:?}"
        )));
    }
    if !(spec.separation >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "separation must be non-negative, got {}",
            spec.separation
        )));
    }
    let mut rng = Rng::new(spec.seed);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let mut dir = rng.gaussian_vec(spec.dim, 0.0, 1.0);
            let norm = crate::linalg::norm2(&dir).max(1e-300);
            dir.iter_mut().for_each(|v| *v *= spec.separation / norm);
            dir
        })
        .collect();
    let n = spec.classes * spec.per_class;
    let mut values = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..spec.per_class {
            values.extend(mean.iter().map(|m| m + rng.gaussian()));
            labels.push(k);
        }
    }
    Dataset::new(Matrix::from_vec(n, spec.dim, values)?, labels, spec.classes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub cv_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            cv_fraction: 0.10,
            seed: 0,
        }
    }
}

/// Seeded shuffle; the first `⌈cv_fraction · N⌉` rows become the held-out set.
/// Returns `(train, cv)`.
pub fn split_cv(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.cv_fraction > 0.0 && spec.cv_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cv_fraction must lie in (0, 1), got {}",
            spec.cv_fraction
        )));
    }
    if dataset.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 examples to split, got {}",
            dataset.len()
        )));
    }
    let order = Rng::new(spec.seed).permutation(dataset.len());
    let n_cv = (spec.cv_fraction * dataset.len() as f64).ceil() as usize;
    let n_cv = n_cv.min(dataset.len() - 1);
    let (cv_idx, train_idx) = order.split_at(n_cv);
    Ok((dataset.subset(train_idx), dataset.subset(cv_idx)))
}

/// Per-dimension affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &Matrix) -> Self {
        let n = features.rows().max(1) as f64;
        let mean: Vec<f64> = features.column_sums().into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; features.cols()];
        for r in 0..features.rows() {
            for ((v, x), m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        // Constant columns are left unscaled.
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, dataset: &mut Dataset) {
        let f = &mut dataset.features;
        for r in 0..f.rows() {
            for ((x, m), s) in f.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *x = (*x - m) * s;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

/// Seeded shuffle then `⌊N / B⌋` full batches in order; the remainder is
/// dropped.
pub fn minibatches(
    dataset: &Dataset,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<Vec<Minibatch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument(
            "minibatch size must be positive".into(),
        ));
    }
    if batch_size > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "minibatch size {batch_size} exceeds dataset size {}",
            dataset.len()
        )));
    }
    let order = Rng::new(epoch_seed).permutation(dataset.len());
    Ok(order
        .chunks_exact(batch_size)
        .map(|idx| Minibatch {
            features: dataset.features.select_rows(idx),
            labels: idx.iter().map(|&i| dataset.labels[i]).collect(),
        })
        .collect())
}
