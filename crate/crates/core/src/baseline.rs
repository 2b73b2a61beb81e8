//! Regression baseline: the best linear combination of fixed layer RDMs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rsa::{spearman, Rdm, UpperTriangle};

/// Ridge damping added to every diagonal entry of the normal equations.
pub const RIDGE_LAMBDA: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct BaselineFit {
    /// One weight per layer RDM, in input order.
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Combined triangle, clamped below at 0.
    pub fitted: Rdm,
    pub spearman: f64,
}

/// Least-squares fit of `Σ w_k · triu(layer_k) + w_0` to `triu(target)`.
pub fn baseline_fit(layers: &[Rdm], target: &Rdm) -> Result<BaselineFit> {
    if layers.is_empty() {
        return Err(Error::Empty("baseline_fit needs at least one layer rdm"));
    }
    let n = target.n();
    if let Some(bad) = layers.iter().find(|l| l.n() != n) {
        return Err(Error::InvalidRdm(format!("layer rdm is {}x{0}, target is {n}x{n}", bad.n())));
    }
    let y = target.upper_triangle();
    let m = y.values().len();
    let k = layers.len() + 1;
    let triangles: Vec<UpperTriangle> = layers.iter().map(Rdm::upper_triangle).collect();
    let design = DMatrix::from_fn(m, k, |row, col| {
        if col == 0 {
            1.0
        } else {
            triangles[col - 1].values()[row]
        }
    });
    let rhs = DVector::from_column_slice(y.values());

    let mut normal = design.transpose() * &design;
    for i in 0..k {
        normal[(i, i)] += RIDGE_LAMBDA;
    }
    let xty = design.transpose() * rhs;
    let beta = normal
        .cholesky()
        .ok_or_else(|| Error::Singular("normal equations are not positive definite".into()))?
        .solve(&xty);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Singular("solution is not finite".into()));
    }

    let combined: Vec<f64> = (design * &beta).iter().map(|v| v.max(0.0)).collect();
    let fitted = UpperTriangle::new(n, combined)?.to_rdm()?;
    let spearman = spearman(&fitted, target)?;
    Ok(BaselineFit {
        weights: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        fitted,
        spearman,
    })
}
