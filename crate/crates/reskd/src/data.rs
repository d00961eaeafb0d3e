//! Labeled datasets: synthetic generators, validation splits, CSV I/O.
//!
//! Every generator is a pure function of its seed and parameters. The CSV
//! format is `f0,…,f{d-1},label` with a header row.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A labeled dataset: one feature row per sample plus class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Vec<usize>,
    /// Number of classes.
    pub k: usize,
}

impl Dataset {
    pub fn new(x: Matrix, labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.len() != x.rows() {
            return Err(Error::shape(
                "Dataset::new",
                format!("{} labels", x.rows()),
                format!("{}", labels.len()),
            ));
        }
        if k < 1 {
            return Err(Error::Domain("class count must be >= 1".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Domain(format!("label {bad} out of range for k={k}")));
        }
        if !x.is_finite() {
            return Err(Error::Domain("dataset features contain non-finite values".into()));
        }
        Ok(Dataset { x, labels, k })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.x.cols()
    }

    /// Rows of this dataset at the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
        }
    }
}

/// Standard normal via Box-Muller, driven by the given RNG.
fn sample_gaussian(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.random::<f64>();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.random::<f64>();
        return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    }
}

/// `k` Gaussian clusters in `d` dimensions at seeded random centers, with
/// `n_per_class` points each (class-major order).
pub fn gen_blobs(seed: u64, n_per_class: usize, k: usize, d: usize, spread: f64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::Domain(format!("blobs need k >= 2 classes, got {k}")));
    }
    if d < 2 {
        return Err(Error::Domain(format!("blobs need d >= 2 dimensions, got {d}")));
    }
    if n_per_class == 0 {
        return Err(Error::Domain("n_per_class must be >= 1".into()));
    }
    if spread < 0.0 || !spread.is_finite() {
        return Err(Error::Domain(format!("spread must be >= 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-4.0..4.0)).collect())
        .collect();
    let mut data = Vec::with_capacity(k * n_per_class * d);
    let mut labels = Vec::with_capacity(k * n_per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &cj in center {
                data.push(cj + spread * sample_gaussian(&mut rng));
            }
            labels.push(c);
        }
    }
    Dataset::new(Matrix::from_vec(k * n_per_class, d, data)?, labels, k)
}

/// Innermost spiral radius. Keeping the arms away from the origin (and at a
/// coordinate scale where tanh units leave their linear regime under
/// uniform initialization) is what makes the curves learnable by the
/// bias-free networks in this crate.
pub const SPIRAL_INNER_RADIUS: f64 = 0.3;
/// Outermost spiral radius.
pub const SPIRAL_OUTER_RADIUS: f64 = 2.0;

/// Noise-free point of the two-spirals curve: class `c` in `{0, 1}`, arc
/// position `i` of `n`.
pub fn spiral_point(c: usize, i: usize, n: usize, turns: f64) -> (f64, f64) {
    let u = (i as f64 + 0.5) / n as f64;
    let r = SPIRAL_INNER_RADIUS + (SPIRAL_OUTER_RADIUS - SPIRAL_INNER_RADIUS) * u;
    let phi = std::f64::consts::TAU * turns * u + std::f64::consts::PI * c as f64;
    (r * phi.cos(), r * phi.sin())
}

/// Two interleaved spirals (two classes, two features) with Gaussian noise
/// of standard deviation `noise` on both coordinates.
pub fn gen_spirals(seed: u64, n_per_class: usize, turns: f64, noise: f64) -> Result<Dataset> {
    if turns <= 0.0 || !turns.is_finite() {
        return Err(Error::Domain(format!("turns must be > 0, got {turns}")));
    }
    if n_per_class == 0 {
        return Err(Error::Domain("n_per_class must be >= 1".into()));
    }
    if noise < 0.0 || !noise.is_finite() {
        return Err(Error::Domain(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n_per_class * 2);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for c in 0..2 {
        for i in 0..n_per_class {
            let (px, py) = spiral_point(c, i, n_per_class, turns);
            data.push(px + noise * sample_gaussian(&mut rng));
            data.push(py + noise * sample_gaussian(&mut rng));
            labels.push(c);
        }
    }
    Dataset::new(Matrix::from_vec(2 * n_per_class, 2, data)?, labels, 2)
}

/// Splits off a validation set: `round(fraction · N)` samples drawn
/// uniformly without replacement, seeded. Both halves keep the original
/// sample order. Returns `(train_remainder, validation)`.
pub fn split_validation(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::Domain(format!(
            "validation fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = data.len();
    let n_val = (fraction * n as f64).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::Domain(format!(
            "validation fraction {fraction} yields a degenerate split ({n_val} of {n})"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut val_idx: Vec<usize> = indices[..n_val].to_vec();
    let mut train_idx: Vec<usize> = indices[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((data.subset(&train_idx), data.subset(&val_idx)))
}

/// Writes a dataset as CSV with header `f0,…,f{d-1},label`.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.feature_dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    for i in 0..data.len() {
        let mut record: Vec<String> = data.x.row(i).iter().map(|v| format!("{v}")).collect();
        record.push(data.labels[i].to_string());
        w.write_record(&record)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset_csv`]. The class count is the
/// largest label plus one.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let name = path.display().to_string();
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::parse(name.clone(), e.to_string()))?;
    let headers = r
        .headers()
        .map_err(|e| Error::parse(name.clone(), e.to_string()))?
        .clone();
    if headers.len() < 2 || headers.iter().last() != Some("label") {
        return Err(Error::parse(
            name,
            "expected header f0,…,f{d-1},label".to_string(),
        ));
    }
    let d = headers.len() - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(name.clone(), e.to_string()))?;
        if rec.len() != d + 1 {
            return Err(Error::parse(
                name,
                format!("row {}: expected {} fields, got {}", line + 2, d + 1, rec.len()),
            ));
        }
        for j in 0..d {
            let v: f64 = rec[j]
                .parse()
                .map_err(|_| Error::parse(name.clone(), format!("row {}: bad float {:?}", line + 2, &rec[j])))?;
            data.push(v);
        }
        let label: usize = rec[d]
            .parse()
            .map_err(|_| Error::parse(name.clone(), format!("row {}: bad label {:?}", line + 2, &rec[d])))?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::parse(name, "dataset has no rows".to_string()));
    }
    let k = labels.iter().max().copied().unwrap_or(0) + 1;
    let rows = labels.len();
    Dataset::new(Matrix::from_vec(rows, d, data)?, labels, k)
}

/// Pretty-prints any serializable value as JSON with sorted keys.
pub fn to_sorted_json<T: serde::Serialize>(value: &T) -> Result<String> {
    // serde_json's Map is a BTreeMap, so going through Value sorts keys.
    let v = serde_json::to_value(value)
        .map_err(|e| Error::parse("json", e.to_string()))?;
    serde_json::to_string_pretty(&v).map_err(|e| Error::parse("json", e.to_string()))
}

/// Writes sorted pretty JSON to a file (with trailing newline).
pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(to_sorted_json(value)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}
