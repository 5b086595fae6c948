//! The outer registration loop.
//!
//! Each iteration: correspondences against the current deformed reference,
//! GP posterior of the displacement given the fused labels, move the
//! reference to `r + mu`, then refresh the registration variances.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::correspondence::{
    annotate, closest_point_correspondence, responsibilities, threshold, ResponsibilityInputs,
};
use crate::error::{Error, Result};
use crate::gpr::gpr_posterior;
use crate::kernels::{assemble_gram, KernelSpec};
use crate::types::{
    sq_dist, validate_config, AnnotatedDeformations, CorrespondenceMode, CorrespondenceState, IterationRecord,
    PointSet, RegistrationConfig, RegistrationResult, VarianceMode,
};

/// Lower bound applied to every registration variance.
pub const SIGMA2_FLOOR: f64 = 1e-12;

/// Registration variance update.
///
/// Per point: `(Σ_j p_ij |s_j - r̄_i|² / ν_i + d post_var_i) / d`, keeping
/// `previous[i]` where `ν_i = 0`. Scalar: one value pooled over all pairs.
/// Results are floored at [`SIGMA2_FLOOR`].
pub fn update_sigma2(
    p: &DMatrix<f64>,
    nu: &[f64],
    target: &PointSet,
    deformed_ref: &PointSet,
    post_var: &[f64],
    previous: &[f64],
    mode: VarianceMode,
) -> Result<Vec<f64>> {
    let nr = deformed_ref.len();
    let d = deformed_ref.dim() as f64;
    if p.nrows() != nr || p.ncols() != target.len() || nu.len() != nr || post_var.len() != nr || previous.len() != nr {
        return Err(Error::DimensionMismatch {
            expected: nr,
            got: p.nrows(),
        });
    }
    if nu.iter().all(|v| *v == 0.0) {
        return Err(Error::NoMass);
    }

    let residual = |i: usize| -> f64 {
        let r = deformed_ref.point(i);
        (0..target.len())
            .filter(|&j| p[(i, j)] > 0.0)
            .map(|j| p[(i, j)] * sq_dist(target.point(j), r))
            .sum()
    };

    let out = match mode {
        VarianceMode::PerPoint => (0..nr)
            .map(|i| {
                if nu[i] == 0.0 {
                    previous[i]
                } else {
                    ((residual(i) / nu[i] + d * post_var[i]) / d).max(SIGMA2_FLOOR)
                }
            })
            .collect(),
        VarianceMode::Scalar => {
            let mass: f64 = nu.iter().sum();
            let total: f64 = (0..nr).map(|i| residual(i) + d * nu[i] * post_var[i]).sum();
            vec![(total / (d * mass)).max(SIGMA2_FLOOR); nr]
        }
    };
    Ok(out)
}

/// Scale-aware default for the initial registration variance: the squared
/// mean nearest-neighbour distance of the reference.
pub fn default_sigma2_init(reference: &PointSet) -> f64 {
    let nn = reference.mean_nn_distance();
    if nn > 0.0 {
        nn * nn
    } else {
        1.0
    }
}

fn mean_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.norm()).sum::<f64>() / m.nrows() as f64
}

/// Fits `reference` to `target`.
///
/// A run that finds no inlier, or no deformation at all, in its first
/// iteration is returned with `failed = true`. A later iteration without inliers stops the run with
/// `collapsed = true` and the last iterate that had inliers.
pub fn register(
    reference: &PointSet,
    target: &PointSet,
    kernel: &KernelSpec,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    let cfg = validate_config(cfg.clone())?;
    if reference.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            got: target.dim(),
        });
    }
    let nr = reference.len();
    let d = reference.dim();

    let gram = assemble_gram(kernel, reference, cfg.jitter)?;

    let base = if cfg.pre_center {
        let shift: Vec<f64> = target
            .centroid()
            .iter()
            .zip(reference.centroid())
            .map(|(t, r)| t - r)
            .collect();
        reference.displaced(&DMatrix::from_fn(nr, d, |_, k| shift[k]))?
    } else {
        reference.clone()
    };

    let sigma2_0 = cfg.sigma2_init.unwrap_or_else(|| default_sigma2_init(reference));
    let mut sigma2 = vec![sigma2_0; nr];
    let mut post_var = vec![0.0; nr];
    let mut deformed = base.clone();
    let mut mu_prev = DMatrix::<f64>::zeros(nr, d);
    let mut last_state: Option<CorrespondenceState> = None;
    let mut trace = Vec::new();
    let conv_floor = 1e-3 * reference.mean_nn_distance().max(f64::MIN_POSITIVE);
    let started = Instant::now();

    for iter in 1..=cfg.max_iters {
        let at = |e: Error| Error::AtIteration {
            iteration: iter,
            source: Box::new(e),
        };

        let (state, ann) = match correspond(&cfg, target, &base, &deformed, &sigma2, &post_var).map_err(at)? {
            (state, Some(ann)) => (state, ann),
            (state, None) => {
                let failed = iter == 1;
                let state = if failed {
                    state
                } else {
                    last_state.expect("earlier iteration kept a state")
                };
                log::warn!(
                    "iteration {iter}: every reference point is missing; {}",
                    if failed { "registration failed" } else { "stopping" }
                );
                return Ok(RegistrationResult {
                    deformed_reference: deformed,
                    state,
                    sigma2,
                    iters: iter,
                    converged: false,
                    failed,
                    collapsed: !failed,
                    trace,
                });
            }
        };

        let delta = DMatrix::from_fn(ann.inliers.len(), d, |k, c| ann.delta_hat[k][c]);
        let post = gpr_posterior(&gram, &ann.inliers, &delta, &ann.sigma2_eff).map_err(at)?;
        deformed = base.displaced(&post.mu).map_err(at)?;
        post_var = post.var_diag.iter().map(|v| v.max(0.0)).collect();

        let mode = match cfg.correspondence_mode {
            CorrespondenceMode::MultiAnnotator => cfg.variance_mode,
            CorrespondenceMode::ClosestPoint => VarianceMode::Scalar,
        };
        sigma2 = update_sigma2(&state.p, &state.nu, target, &deformed, &post_var, &sigma2, mode).map_err(at)?;

        if iter == 1 && post.mu.iter().all(|v| *v == 0.0) {
            log::warn!("iteration 1: no deformation found; registration failed");
            return Ok(RegistrationResult {
                deformed_reference: deformed,
                state,
                sigma2,
                iters: 1,
                converged: false,
                failed: true,
                collapsed: false,
                trace,
            });
        }

        let mean_disp = mean_norm(&post.mu);
        let change = mean_norm(&(&post.mu - &mu_prev));
        let record = IterationRecord {
            iter,
            mean_displacement: mean_disp,
            displacement_change: change,
            n_inliers: state.inliers.len(),
            n_missing: state.missing.len(),
            mean_sigma2: sigma2.iter().sum::<f64>() / nr as f64,
            min_sigma2: sigma2.iter().copied().fold(f64::INFINITY, f64::min),
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        log::debug!("{record}");
        trace.push(record);
        mu_prev = post.mu;
        last_state = Some(state);

        if iter > 1 && change < cfg.rel_tol * mean_disp.max(conv_floor) {
            return Ok(RegistrationResult {
                deformed_reference: deformed,
                state: last_state.unwrap(),
                sigma2,
                iters: iter,
                converged: true,
                failed: false,
                collapsed: false,
                trace,
            });
        }
    }

    Ok(RegistrationResult {
        deformed_reference: deformed,
        state: last_state.expect("at least one iteration ran"),
        sigma2,
        iters: cfg.max_iters,
        converged: false,
        failed: false,
        collapsed: false,
        trace,
    })
}

/// Correspondence step of one iteration; `None` labels when every
/// reference point is missing.
fn correspond(
    cfg: &RegistrationConfig,
    target: &PointSet,
    base: &PointSet,
    deformed: &PointSet,
    sigma2: &[f64],
    post_var: &[f64],
) -> Result<(CorrespondenceState, Option<AnnotatedDeformations>)> {
    match cfg.correspondence_mode {
        CorrespondenceMode::MultiAnnotator => {
            let inp = ResponsibilityInputs {
                target,
                reference: base,
                deformed_ref: deformed,
                sigma2,
                post_var,
                omega: cfg.omega,
            };
            let state = threshold(responsibilities(&inp)?.p, cfg.p_min, cfg.threshold_mode);
            if state.inliers.is_empty() {
                return Ok((state, None));
            }
            let ann = annotate(&state, target, base, sigma2)?;
            Ok((state, Some(ann)))
        }
        CorrespondenceMode::ClosestPoint => {
            let noise = sigma2.iter().sum::<f64>() / sigma2.len() as f64;
            let (state, ann) = closest_point_correspondence(target, base, deformed, noise)?;
            Ok((state, Some(ann)))
        }
    }
}
