//! Representational dissimilarity matrices and the statistics used to
//! compare them.
//!
//! All comparisons run on the upper triangle (`i < j`, row-major). The
//! evaluation pipeline order is fixed: average subjects first, then
//! normalize.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Scalar, Tensor};

/// Largest tolerated `|d[i][j] - d[j][i]|`.
pub const SYMMETRY_TOL: f64 = 1e-6;
/// Largest tolerated `|d[i][i]|`; accepted diagonals are set to exactly 0.
pub const DIAGONAL_TOL: f64 = 1e-9;

/// Symmetric, non-negative, zero-diagonal `n × n` matrix, `n >= 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rdm {
    n: usize,
    d: Vec<f64>,
}

impl Rdm {
    /// Validates a row-major `n × n` buffer.
    pub fn new(n: usize, mut d: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidRdm(format!("need n >= 2, got {n}")));
        }
        if d.len() != n * n {
            return Err(Error::InvalidRdm(format!("{} values for a {n}x{n} matrix", d.len())));
        }
        for i in 0..n {
            for j in 0..n {
                let v = d[i * n + j];
                if !v.is_finite() {
                    return Err(Error::InvalidRdm(format!("non-finite entry at ({i}, {j})")));
                }
                if v < 0.0 {
                    return Err(Error::InvalidRdm(format!("negative entry {v} at ({i}, {j})")));
                }
                if i == j && v.abs() > DIAGONAL_TOL {
                    return Err(Error::InvalidRdm(format!("diagonal entry {v} at {i}")));
                }
                if j > i && (v - d[j * n + i]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidRdm(format!(
                        "asymmetric at ({i}, {j}): {v} vs {}",
                        d[j * n + i]
                    )));
                }
            }
        }
        for i in 0..n {
            d[i * n + i] = 0.0;
        }
        Ok(Self { n, d })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidRdm("rows are not square".into()));
        }
        Self::new(n, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }

    pub fn upper_triangle(&self) -> UpperTriangle {
        let n = self.n;
        let mut values = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                values.push(self.get(i, j));
            }
        }
        UpperTriangle { n, values }
    }

    fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n;
        self.d.iter().enumerate().filter(move |(k, _)| k / n != k % n).map(|(_, &v)| v)
    }
}

/// Canonical `i < j` flattening of an `n × n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct UpperTriangle {
    n: usize,
    values: Vec<f64>,
}

impl UpperTriangle {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 || values.len() != n * (n - 1) / 2 {
            return Err(Error::InvalidRdm(format!(
                "{} values is not an upper triangle of a {n}x{n} matrix",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mirrors the triangle into a full matrix with zero diagonal.
    pub fn to_rdm(&self) -> Result<Rdm> {
        let n = self.n;
        let mut d = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                d[i * n + j] = self.values[k];
                d[j * n + i] = self.values[k];
                k += 1;
            }
        }
        Rdm::new(n, d)
    }
}

/// Min-max maps the off-diagonal entries onto `[0, 1]`.
pub fn normalize_rdm(rdm: &Rdm) -> Result<Rdm> {
    let (lo, hi) = rdm
        .off_diagonal()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        return Err(Error::DegenerateRdm(format!("all off-diagonal entries equal {lo}")));
    }
    let n = rdm.n;
    let range = hi - lo;
    let d = rdm
        .d
        .iter()
        .enumerate()
        .map(|(k, &v)| if k / n == k % n { 0.0 } else { (v - lo) / range })
        .collect();
    Rdm::new(n, d)
}

/// Elementwise mean across subjects.
pub fn group_average(rdms: &[Rdm]) -> Result<Rdm> {
    let first = rdms.first().ok_or(Error::Empty("group_average needs at least one rdm"))?;
    if let Some(bad) = rdms.iter().find(|r| r.n != first.n) {
        return Err(Error::InvalidRdm(format!("size mismatch: {} vs {}", bad.n, first.n)));
    }
    let k = rdms.len() as f64;
    let d = (0..first.d.len())
        .map(|idx| rdms.iter().map(|r| r.d[idx]).sum::<f64>() / k)
        .collect();
    Rdm::new(first.n, d)
}

/// Fractional ranks starting at 1; tied values share the mean of the ranks
/// they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("lengths {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation of two vectors (Pearson on average ranks).
pub fn spearman_values(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Spearman correlation between the upper triangles of two RDMs.
pub fn spearman(a: &Rdm, b: &Rdm) -> Result<f64> {
    if a.n != b.n {
        return Err(Error::InvalidRdm(format!("size mismatch: {} vs {}", a.n, b.n)));
    }
    if a.n * (a.n - 1) / 2 < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two pairs".into()));
    }
    spearman_values(a.upper_triangle().values(), b.upper_triangle().values())
}

fn check_subjects(subjects: &[Rdm]) -> Result<()> {
    if subjects.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "noise ceiling needs at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    Ok(())
}

/// Mean leave-one-subject-out Spearman correlation.
pub fn noise_ceiling_lower(subjects: &[Rdm]) -> Result<f64> {
    check_subjects(subjects)?;
    let mut total = 0.0;
    for s in 0..subjects.len() {
        let others: Vec<Rdm> = subjects
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != s)
            .map(|(_, r)| r.clone())
            .collect();
        total += spearman(&subjects[s], &group_average(&others)?)?;
    }
    Ok(total / subjects.len() as f64)
}

/// Mean correlation of each subject with the full group mean (self included).
pub fn noise_ceiling_upper(subjects: &[Rdm]) -> Result<f64> {
    check_subjects(subjects)?;
    let mean = group_average(subjects)?;
    let mut total = 0.0;
    for s in subjects {
        total += spearman(s, &mean)?;
    }
    Ok(total / subjects.len() as f64)
}

/// Noise-normalized explained variance in percent, `100 · (r / ceiling)²`.
pub fn explained_variance(r: f64, ceiling: f64) -> Result<f64> {
    if ceiling.is_nan() || ceiling <= 0.0 {
        return Err(Error::InvalidArgument(format!("ceiling must be positive, got {ceiling}")));
    }
    let q = r / ceiling;
    Ok(100.0 * q * q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub target: String,
    pub spearman_r: f64,
    /// Present when at least two subject RDMs were given.
    pub noise_ceiling_lower: Option<f64>,
    pub noise_ceiling_upper: Option<f64>,
    /// Against the lower ceiling when present, otherwise against 1.
    /// Squaring discards the sign of `spearman_r`.
    pub explained_variance_pct: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "target_name,spearman_r,noise_ceiling_lower,explained_variance_pct";

    /// Scores `pred` against the subject mean of `targets`.
    pub fn evaluate(target: impl Into<String>, pred: &Rdm, targets: &[Rdm]) -> Result<Self> {
        let mean = group_average(targets)?;
        let spearman_r = spearman(pred, &mean)?;
        let (lower, upper) = if targets.len() >= 2 {
            (Some(noise_ceiling_lower(targets)?), Some(noise_ceiling_upper(targets)?))
        } else {
            (None, None)
        };
        let explained_variance_pct = explained_variance(spearman_r, lower.unwrap_or(1.0))?;
        Ok(Self {
            target: target.into(),
            spearman_r,
            noise_ceiling_lower: lower,
            noise_ceiling_upper: upper,
            explained_variance_pct,
        })
    }

    /// One CSV row; the ceiling cell is empty without a ceiling.
    pub fn to_csv_row(&self) -> String {
        let mut s = String::new();
        let ceiling = self.noise_ceiling_lower.map(|c| format!("{c:.6}")).unwrap_or_default();
        write!(
            s,
            "{},{:.6},{},{:.6}",
            self.target, self.spearman_r, ceiling, self.explained_variance_pct
        )
        .expect("string write");
        s
    }
}

/// Predicted RDM over `images` (each `[C, H, W]`). Entry `(i, j)` is the mean
/// of both pair orders, clamped below at 0.
pub fn predict_rdm<T: Scalar>(model: &Model<T>, images: &[Tensor<T>]) -> Result<Rdm> {
    let n = images.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 images, got {n}")));
    }
    let refs: Vec<&Tensor<T>> = images.iter().collect();
    let features = model.embed(&Tensor::stack(&refs)?)?;
    let mut idx_a = Vec::with_capacity(n * (n - 1));
    let mut idx_b = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                idx_a.push(i);
                idx_b.push(j);
            }
        }
    }
    const CHUNK: usize = 256;
    let mut preds = Vec::with_capacity(idx_a.len());
    for (ca, cb) in idx_a.chunks(CHUNK).zip(idx_b.chunks(CHUNK)) {
        preds.extend(model.head_on_features(&features, ca, cb)?);
    }
    let mut d = vec![0.0; n * n];
    for ((&i, &j), p) in idx_a.iter().zip(&idx_b).zip(&preds) {
        d[i * n + j] += p.as_f64();
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = ((d[i * n + j] + d[j * n + i]) / 2.0).max(0.0);
            if !v.is_finite() {
                return Err(Error::InvalidRdm(format!("non-finite prediction for pair ({i}, {j})")));
            }
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Rdm::new(n, out)
}
