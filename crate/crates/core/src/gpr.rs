//! Heteroscedastic GP regression on observed deformations.
//!
//! Each inlier reference point carries one or more noisy displacement labels
//! ("annotations"). They are fused per point by precision weighting and the
//! fused labels are regressed with a zero-mean GP over the whole reference:
//!
//! ```text
//! mu    = K_RC (K_CC + D)^-1 delta
//! Sigma = K_RR - K_RC (K_CC + D)^-1 K_CR
//! ```
//!
//! where `C` are the inliers and `D` the fused per-point noise variances.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::kernels::{cholesky, GramMatrix, LowRankCorrection};
use crate::types::PosteriorDeformation;

/// A single noisy label of a reference point's displacement.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub ref_index: usize,
    pub target_index: usize,
    /// `s_j - r̄_i`
    pub deformation: Vec<f64>,
    pub variance: f64,
}

/// Precision-weighted fusion of the annotations of one reference point.
///
/// Returns `(delta_hat, sigma2_eff)` with `1/sigma2_eff = Σ 1/σ_j²` and
/// `delta_hat = sigma2_eff Σ δ_j/σ_j²`. An infinite variance contributes
/// nothing; at least one must be finite.
pub fn aggregate_annotations(annotations: &[Annotation]) -> Result<(Vec<f64>, f64)> {
    let first = annotations.first().ok_or(Error::NoAnnotation)?;
    let d = first.deformation.len();
    let mut precision = 0.0;
    let mut weighted = vec![0.0; d];
    for a in annotations {
        if !(a.variance > 0.0) {
            return Err(Error::InvalidInput(format!(
                "annotation ({}, {}) has variance {}",
                a.ref_index, a.target_index, a.variance
            )));
        }
        if a.deformation.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: a.deformation.len(),
            });
        }
        let w = 1.0 / a.variance;
        precision += w;
        for (acc, v) in weighted.iter_mut().zip(&a.deformation) {
            *acc += w * v;
        }
    }
    if precision == 0.0 {
        return Err(Error::InvalidInput("every annotation has infinite variance".into()));
    }
    let sigma2 = 1.0 / precision;
    Ok((weighted.into_iter().map(|v| v * sigma2).collect(), sigma2))
}

/// GP posterior of the displacement at every reference point given fused
/// labels at `inliers`.
///
/// `delta_hat` is `|inliers| x d`. Isotropic kernels use one `|C| x |C|`
/// factorization shared by all coordinates; kernels with a PCA term add a
/// low-rank update on top of it.
pub fn gpr_posterior(
    gram: &GramMatrix,
    inliers: &[usize],
    delta_hat: &DMatrix<f64>,
    sigma2_eff: &[f64],
) -> Result<PosteriorDeformation> {
    let n = gram.n();
    let d = gram.dim;
    let nc = inliers.len();
    if nc == 0 {
        return Err(Error::AllMissing);
    }
    if delta_hat.nrows() != nc || sigma2_eff.len() != nc {
        return Err(Error::DimensionMismatch {
            expected: nc,
            got: delta_hat.nrows().min(sigma2_eff.len()),
        });
    }
    if delta_hat.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: delta_hat.ncols(),
        });
    }
    if let Some(bad) = sigma2_eff.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidInput(format!("label variance {bad} is not positive")));
    }
    if let Some(&bad) = inliers.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidInput(format!("inlier index {bad} out of range")));
    }

    let gj = gram.jittered();
    let mut a = gj.select_rows(inliers).select_columns(inliers);
    for (k, s) in sigma2_eff.iter().enumerate() {
        a[(k, k)] += s;
    }
    let chol = cholesky(a)?;
    let k_cr = gj.select_rows(inliers);

    match &gram.correction {
        None => {
            let alpha = chol.solve(delta_hat);
            let mu = k_cr.transpose() * alpha;
            let mut v = k_cr;
            chol.l().solve_lower_triangular_mut(&mut v);
            let var_diag = (0..n).map(|i| gj[(i, i)] - v.column(i).norm_squared()).collect();
            Ok(PosteriorDeformation { mu, var_diag })
        }
        Some(corr) => general_posterior(gram, &gj, corr, inliers, &chol, delta_hat),
    }
}

/// Solves `(B ⊗ I_d) X = Y` where `chol` factors `B` and rows of `Y` are in
/// point-major order.
fn block_solve(chol: &Cholesky<f64, Dyn>, y: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let nc = y.nrows() / d;
    let cols = y.ncols();
    // Stack coordinate c of every column side by side: (nc) x (d * cols).
    let mut stacked = DMatrix::zeros(nc, d * cols);
    for i in 0..nc {
        for c in 0..d {
            for j in 0..cols {
                stacked[(i, c * cols + j)] = y[(i * d + c, j)];
            }
        }
    }
    chol.solve_mut(&mut stacked);
    let mut out = DMatrix::zeros(y.nrows(), cols);
    for i in 0..nc {
        for c in 0..d {
            for j in 0..cols {
                out[(i * d + c, j)] = stacked[(i, c * cols + j)];
            }
        }
    }
    out
}

fn general_posterior(
    gram: &GramMatrix,
    gj: &DMatrix<f64>,
    corr: &LowRankCorrection,
    inliers: &[usize],
    chol: &Cholesky<f64, Dyn>,
    delta_hat: &DMatrix<f64>,
) -> Result<PosteriorDeformation> {
    let n = gram.n();
    let d = gram.dim;
    let nc = inliers.len();
    let m = corr.lambda.len();

    let rows_c: Vec<usize> = inliers.iter().flat_map(|&i| (0..d).map(move |c| i * d + c)).collect();
    let u_c = corr.u.select_rows(&rows_c);
    let ul = &corr.u * DMatrix::from_diagonal(&corr.lambda);

    // Cross covariance K_CR over the stacked coordinates.
    let mut k_cr = &u_c * DMatrix::from_diagonal(&corr.lambda) * corr.u.transpose();
    for (a, &i) in inliers.iter().enumerate() {
        for j in 0..n {
            let g = gj[(i, j)];
            for c in 0..d {
                k_cr[(a * d + c, j * d + c)] += g;
            }
        }
    }

    // Woodbury: (B + U Λ Uᵀ)^-1 = B^-1 - B^-1 U S^-1 Uᵀ B^-1, S = Λ^-1 + Uᵀ B^-1 U.
    let w = block_solve(chol, &u_c, d);
    let mut s = u_c.transpose() * &w;
    for k in 0..m {
        s[(k, k)] += 1.0 / corr.lambda[k];
    }
    let s_chol = cholesky(s)?;
    let apply_inv = |y: &DMatrix<f64>| -> DMatrix<f64> {
        let by = block_solve(chol, y, d);
        let corr_term = s_chol.solve(&(u_c.transpose() * &by));
        by - &w * corr_term
    };

    let delta_flat = DMatrix::from_fn(nc * d, 1, |r, _| delta_hat[(r / d, r % d)]);
    let z = apply_inv(&delta_flat);
    let mu_flat = k_cr.transpose() * z;
    let mu = DMatrix::from_fn(n, d, |i, c| mu_flat[(i * d + c, 0)]);

    let solved = apply_inv(&k_cr);
    let var_diag = (0..n)
        .map(|i| {
            let mut total = 0.0;
            for c in 0..d {
                let col = i * d + c;
                let prior = gj[(i, i)] + ul.row(col).dot(&corr.u.row(col));
                total += prior - k_cr.column(col).dot(&solved.column(col));
            }
            total / d as f64
        })
        .collect();
    Ok(PosteriorDeformation { mu, var_diag })
}
