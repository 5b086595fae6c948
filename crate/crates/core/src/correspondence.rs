//! Soft correspondences between the deformed reference and the target.
//!
//! Every target point is explained either by a uniform outlier component or
//! by an isotropic Gaussian centred at one deformed reference point, each
//! with its own variance. Pairs whose responsibility clears `p_min` become
//! annotations of the reference point's displacement with variance
//! `sigma_i² / p_ij`; reference points with no such pair are missing.
//!
//! Labels are measured from the undeformed reference, `s_j - r_i`, so that
//! the GP posterior mean is the full displacement `r̄ = r + mu`. In the first
//! iteration `r̄ = r` and the two origins coincide.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{sq_dist, AnnotatedDeformations, CorrespondenceState, PointSet, ThresholdMode};

#[derive(Clone, Copy, Debug)]
pub struct ResponsibilityInputs<'a> {
    pub target: &'a PointSet,
    /// Undeformed reference; labels are displacements from it.
    pub reference: &'a PointSet,
    pub deformed_ref: &'a PointSet,
    /// Per-point registration variance.
    pub sigma2: &'a [f64],
    /// Per-point scalar posterior variance; the trace term is `d * post_var`.
    pub post_var: &'a [f64],
    pub omega: f64,
}

impl ResponsibilityInputs<'_> {
    fn check(&self) -> Result<()> {
        let n = self.deformed_ref.len();
        if self.reference.len() != n || self.reference.dim() != self.deformed_ref.dim() {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.reference.len(),
            });
        }
        if self.target.dim() != self.deformed_ref.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.deformed_ref.dim(),
                got: self.target.dim(),
            });
        }
        if self.sigma2.len() != n || self.post_var.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.sigma2.len().min(self.post_var.len()),
            });
        }
        if let Some(s) = self.sigma2.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "registration variance {s} is not positive"
            )));
        }
        if let Some(v) = self.post_var.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!("posterior variance {v} is negative")));
        }
        if !(self.omega >= 0.0 && self.omega < 1.0) {
            return Err(Error::InvalidInput(format!("omega {} outside [0, 1)", self.omega)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Responsibilities {
    /// `N_R x N_S`
    pub p: DMatrix<f64>,
    /// Columns whose Gaussian terms all vanished (returned as zeros).
    pub underflow_columns: usize,
}

/// Posterior probability that target `j` was generated by reference `i`.
///
/// Evaluated in log space with a per-column maximum shift; the outlier term
/// `ω N_R / N_S` enters after exponentiation.
pub fn responsibilities(inp: &ResponsibilityInputs<'_>) -> Result<Responsibilities> {
    inp.check()?;
    let nr = inp.deformed_ref.len();
    let ns = inp.target.len();
    let d = inp.deformed_ref.dim() as f64;
    let omega = inp.omega;
    let two_pi = 2.0 * std::f64::consts::PI;

    // Terms of log<φ_ij> that do not depend on j.
    let offsets: Vec<f64> = (0..nr)
        .map(|i| {
            let s2 = inp.sigma2[i];
            -0.5 * d * (two_pi * s2).ln() - d * inp.post_var[i] / (2.0 * s2)
        })
        .collect();
    let outlier = omega * nr as f64 / ns as f64;

    let columns: Vec<(Vec<f64>, bool)> = (0..ns)
        .into_par_iter()
        .map(|j| {
            let s = inp.target.point(j);
            let logs: Vec<f64> = (0..nr)
                .map(|i| offsets[i] - sq_dist(s, inp.deformed_ref.point(i)) / (2.0 * inp.sigma2[i]))
                .collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return (vec![0.0; nr], true);
            }
            let shifted: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = shifted.iter().sum();
            // outlier * exp(-max) may overflow to inf, which correctly sends p to 0.
            let background = if outlier > 0.0 { outlier * (-max).exp() } else { 0.0 };
            let denom = background + (1.0 - omega) * total;
            let col = shifted.iter().map(|e| (1.0 - omega) * e / denom).collect();
            (col, false)
        })
        .collect();

    let mut p = DMatrix::zeros(nr, ns);
    let mut underflow_columns = 0;
    for (j, (col, under)) in columns.into_iter().enumerate() {
        underflow_columns += usize::from(under);
        for (i, v) in col.into_iter().enumerate() {
            p[(i, j)] = v;
        }
    }
    if underflow_columns > 0 {
        log::debug!("responsibilities: {underflow_columns} columns underflowed");
    }
    Ok(Responsibilities { p, underflow_columns })
}

/// Upper bound on a fused label variance. Reached only when a point's
/// accepted responsibilities are denormal; such a label carries no weight.
pub const LABEL_VARIANCE_CAP: f64 = 1e100;

/// Label variance of pair `(i, j)`: `sigma2_i / p_ij`.
pub fn annotator_variance(sigma2_i: f64, p_ij: f64) -> Result<f64> {
    if !(p_ij > 0.0) {
        return Err(Error::ExcludedPair);
    }
    Ok(sigma2_i / p_ij)
}

/// Splits the reference into inliers and missing points.
///
/// With `ThresholdMode::On` a pair is accepted when `p_ij > p_min`, with
/// `Off` whenever `p_ij > 0`. `nu` always sums the full row.
pub fn threshold(p: DMatrix<f64>, p_min: f64, mode: ThresholdMode) -> CorrespondenceState {
    let cut = match mode {
        ThresholdMode::On => p_min,
        ThresholdMode::Off => 0.0,
    };
    let corr_sets = p
        .row_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &v)| v > cut)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    CorrespondenceState::from_sets(p, corr_sets)
}

/// Fuses the accepted pairs of every inlier into one label per point:
/// `delta_i = Σ_j p_ij (s_j - reference_i) / ν_i` with variance
/// `sigma2_i / ν_i`, where `ν_i` sums the accepted pairs. This equals
/// precision-weighted fusion of the per-pair labels.
pub fn annotate(
    state: &CorrespondenceState,
    target: &PointSet,
    reference: &PointSet,
    sigma2: &[f64],
) -> Result<AnnotatedDeformations> {
    let mut out = AnnotatedDeformations {
        inliers: state.inliers.clone(),
        delta_hat: Vec::with_capacity(state.inliers.len()),
        sigma2_eff: Vec::with_capacity(state.inliers.len()),
        annotator_var: Vec::new(),
    };
    let d = reference.dim();
    for &i in &state.inliers {
        let r = reference.point(i);
        // Fused in precision space: weights p_ij stay finite where the
        // individual variances sigma2_i / p_ij overflow.
        let mut mass = 0.0;
        let mut delta = vec![0.0; d];
        for &j in &state.corr_sets[i] {
            let p = state.p[(i, j)];
            out.annotator_var.push((i, j, annotator_variance(sigma2[i], p)?));
            mass += p;
            for ((acc, s), r) in delta.iter_mut().zip(target.point(j)).zip(r) {
                *acc += p * (s - r);
            }
        }
        delta.iter_mut().for_each(|v| *v /= mass);
        out.delta_hat.push(delta);
        out.sigma2_eff.push((sigma2[i] / mass).min(LABEL_VARIANCE_CAP));
    }
    Ok(out)
}

/// Responsibilities, thresholding and label fusion in one step.
///
/// Fails with [`Error::AllMissing`] when no reference point keeps a
/// correspondence.
pub fn get_correspondences(
    inp: &ResponsibilityInputs<'_>,
    p_min: f64,
    mode: ThresholdMode,
) -> Result<(CorrespondenceState, AnnotatedDeformations)> {
    let resp = responsibilities(inp)?;
    let state = threshold(resp.p, p_min, mode);
    if state.inliers.is_empty() {
        return Err(Error::AllMissing);
    }
    let ann = annotate(&state, inp.target, inp.reference, inp.sigma2)?;
    Ok((state, ann))
}

/// Hard assignment of every deformed reference point to its
/// Euclidean-nearest target point (lowest index on ties), each with label
/// variance `sigma_n2`. Labels are `s_j - reference_i`.
pub fn closest_point_correspondence(
    target: &PointSet,
    reference: &PointSet,
    deformed_ref: &PointSet,
    sigma_n2: f64,
) -> Result<(CorrespondenceState, AnnotatedDeformations)> {
    if reference.len() != deformed_ref.len() {
        return Err(Error::DimensionMismatch {
            expected: deformed_ref.len(),
            got: reference.len(),
        });
    }
    if target.dim() != deformed_ref.dim() || reference.dim() != deformed_ref.dim() {
        return Err(Error::DimensionMismatch {
            expected: deformed_ref.dim(),
            got: target.dim(),
        });
    }
    if !(sigma_n2 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "label variance {sigma_n2} is not positive"
        )));
    }
    let nr = deformed_ref.len();
    let nearest: Vec<usize> = (0..nr)
        .into_par_iter()
        .map(|i| {
            let r = deformed_ref.point(i);
            let mut best = (f64::INFINITY, 0);
            for (j, s) in target.iter().enumerate() {
                let dist = sq_dist(r, s);
                if dist < best.0 {
                    best = (dist, j);
                }
            }
            best.1
        })
        .collect();

    let mut p = DMatrix::zeros(nr, target.len());
    for (i, &j) in nearest.iter().enumerate() {
        p[(i, j)] = 1.0;
    }
    let state = CorrespondenceState::from_sets(p, nearest.iter().map(|&j| vec![j]).collect());
    let ann = AnnotatedDeformations {
        inliers: (0..nr).collect(),
        delta_hat: nearest
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                target
                    .point(j)
                    .iter()
                    .zip(reference.point(i))
                    .map(|(s, r)| s - r)
                    .collect()
            })
            .collect(),
        sigma2_eff: vec![sigma_n2; nr],
        annotator_var: nearest.iter().enumerate().map(|(i, &j)| (i, j, sigma_n2)).collect(),
    };
    Ok((state, ann))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, d: usize, rng: &mut ChaCha8Rng) -> PointSet {
        PointSet::new(d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn inputs<'a>(
        s: &'a PointSet,
        r: &'a PointSet,
        s2: &'a [f64],
        pv: &'a [f64],
        omega: f64,
    ) -> ResponsibilityInputs<'a> {
        ResponsibilityInputs {
            target: s,
            reference: r,
            deformed_ref: r,
            sigma2: s2,
            post_var: pv,
            omega,
        }
    }

    #[test]
    fn single_candidate() {
        let s = PointSet::from_points(&[[0.3, 0.1]]).unwrap();
        let r = PointSet::from_points(&[[5.0, -2.0]]).unwrap();
        let p = responsibilities(&inputs(&s, &r, &[0.01], &[0.0], 0.0)).unwrap().p;
        assert_eq!(p[(0, 0)], 1.0);
    }

    #[test]
    fn symmetric_pair() {
        let s = PointSet::from_points(&[[0.0, 0.0]]).unwrap();
        let r = PointSet::from_points(&[[1.0, 0.0], [0.0, -1.0]]).unwrap();
        let p = responsibilities(&inputs(&s, &r, &[0.3, 0.3], &[0.0, 0.0], 0.0))
            .unwrap()
            .p;
        assert_eq!(p[(0, 0)], 0.5);
        assert_eq!(p[(1, 0)], 0.5);
    }

    /// Direct evaluation of the mixture posterior without log-space shifts.
    fn naive_p(s: &PointSet, r: &PointSet, s2: &[f64], pv: &[f64], omega: f64) -> DMatrix<f64> {
        let d = r.dim() as f64;
        let (nr, ns) = (r.len(), s.len());
        let phi = DMatrix::from_fn(nr, ns, |i, j| {
            let dist: f64 = (0..r.dim()).map(|k| (s.point(j)[k] - r.point(i)[k]).powi(2)).sum();
            (2.0 * std::f64::consts::PI * s2[i]).powf(-d / 2.0)
                * (-dist / (2.0 * s2[i])).exp()
                * (-(d * pv[i]) / (2.0 * s2[i])).exp()
        });
        DMatrix::from_fn(nr, ns, |i, j| {
            let col: f64 = (0..nr).map(|k| phi[(k, j)]).sum();
            (1.0 - omega) * phi[(i, j)] / (omega * nr as f64 / ns as f64 + (1.0 - omega) * col)
        })
    }

    #[test]
    fn matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let r = random_set(3, 2, &mut rng);
            let s = random_set(4, 2, &mut rng);
            let s2: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..0.8)).collect();
            let pv: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..0.1)).collect();
            let got = responsibilities(&inputs(&s, &r, &s2, &pv, 0.3)).unwrap().p;
            let want = naive_p(&s, &r, &s2, &pv, 0.3);
            for (a, b) in got.iter().zip(want.iter()) {
                assert_relative_eq!(*a, *b, max_relative = 1e-12, epsilon = 1e-300);
            }
        }
    }

    #[test]
    fn far_target_with_outlier_term_gets_zero() {
        let s = PointSet::from_points(&[[1e4, 1e4]]).unwrap();
        let r = PointSet::from_points(&[[0.0, 0.0], [0.1, 0.0]]).unwrap();
        let p = responsibilities(&inputs(&s, &r, &[1e-3, 1e-3], &[0.0, 0.0], 0.1))
            .unwrap()
            .p;
        assert!(p.iter().all(|v| *v == 0.0));
        // without the outlier term the nearest centroid still wins
        let p = responsibilities(&inputs(&s, &r, &[1e-3, 1e-3], &[0.0, 0.0], 0.0))
            .unwrap()
            .p;
        assert_relative_eq!(p.column(0).sum(), 1.0, max_relative = 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn annotator_variance_examples() {
        assert_eq!(annotator_variance(0.5, 0.25).unwrap(), 2.0);
        assert_eq!(annotator_variance(0.7, 1.0).unwrap(), 0.7);
        assert!(matches!(annotator_variance(0.7, 0.0), Err(Error::ExcludedPair)));
        let mut last = 0.0;
        for k in 1..=6 {
            let v = annotator_variance(0.5, 10f64.powi(-k)).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn threshold_examples() {
        let st = threshold(DMatrix::from_row_slice(1, 2, &[0.9, 0.001]), 0.01, ThresholdMode::On);
        assert_eq!(st.corr_sets[0], vec![0]);
        assert!(st.missing.is_empty());
        assert_relative_eq!(st.nu[0], 0.901);

        let p = DMatrix::from_row_slice(2, 3, &[0.5, 0.3, 0.2, 0.005, 0.002, 0.0]);
        let st = threshold(p.clone(), 0.01, ThresholdMode::On);
        assert_eq!(st.missing, vec![1]);
        assert_eq!(st.inliers, vec![0]);
        assert_relative_eq!(st.nu[1], 0.007);
        let st = threshold(p, 0.01, ThresholdMode::Off);
        assert!(st.missing.is_empty());
        assert_eq!(st.corr_sets[1], vec![0, 1]);
    }

    #[test]
    fn singleton_and_midpoint_labels() {
        let s = PointSet::from_points(&[[1.0, 2.0]]).unwrap();
        let r = PointSet::from_points(&[[0.5, 0.0]]).unwrap();
        let (st, ann) = get_correspondences(&inputs(&s, &r, &[0.4], &[0.0], 0.0), 0.01, ThresholdMode::On).unwrap();
        assert_eq!(st.inliers, vec![0]);
        assert_eq!(ann.delta_hat[0], vec![0.5, 2.0]);
        assert_eq!(ann.sigma2_eff[0], 0.4);

        // two targets, each split evenly between two mirrored reference points
        let s = PointSet::from_points(&[[-1.0, 0.0], [1.0, 0.0]]).unwrap();
        let r = PointSet::from_points(&[[0.0, 0.5], [0.0, -0.5]]).unwrap();
        let (st, ann) =
            get_correspondences(&inputs(&s, &r, &[0.3; 2], &[0.0; 2], 0.0), 0.01, ThresholdMode::On).unwrap();
        assert_eq!(st.p[(0, 0)], 0.5);
        assert_eq!(st.p[(0, 1)], 0.5);
        assert_relative_eq!(ann.sigma2_eff[0], 0.3, max_relative = 1e-15);
        assert_relative_eq!(ann.delta_hat[0][0], 0.0);
        assert_relative_eq!(ann.delta_hat[0][1], -0.5);

        // two reference points at equal distance share a target: p = 0.5
        let s = PointSet::from_points(&[[0.0, 0.0], [10.0, 0.0]]).unwrap();
        let r = PointSet::from_points(&[[0.0, 1.0], [0.0, -1.0], [10.0, 0.0]]).unwrap();
        let (st, _) = get_correspondences(&inputs(&s, &r, &[0.5; 3], &[0.0; 3], 0.0), 0.01, ThresholdMode::On).unwrap();
        assert_eq!(st.p[(0, 0)], 0.5);
        assert_eq!(st.p[(1, 0)], 0.5);
    }

    #[test]
    fn all_missing_is_an_error() {
        let s = PointSet::from_points(&[[100.0, 0.0]]).unwrap();
        let r = PointSet::from_points(&[[0.0, 0.0], [0.0, 1.0]]).unwrap();
        let res = get_correspondences(&inputs(&s, &r, &[0.01; 2], &[0.0; 2], 0.5), 0.01, ThresholdMode::On);
        assert!(matches!(res, Err(Error::AllMissing)));
    }

    #[test]
    fn closed_form_barycenter() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let r = random_set(5, 2, &mut rng);
            let s = random_set(7, 2, &mut rng);
            let s2: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..0.5)).collect();
            let pv = vec![0.0; 5];
            let (st, ann) = get_correspondences(&inputs(&s, &r, &s2, &pv, 0.2), 0.01, ThresholdMode::On).unwrap();
            for (k, &i) in ann.inliers.iter().enumerate() {
                let w: f64 = st.corr_sets[i].iter().map(|&j| st.p[(i, j)]).sum();
                assert_relative_eq!(ann.sigma2_eff[k], s2[i] / w, max_relative = 1e-12);
                for c in 0..2 {
                    let bary = st.corr_sets[i]
                        .iter()
                        .map(|&j| st.p[(i, j)] * s.point(j)[c])
                        .sum::<f64>()
                        / w;
                    assert_relative_eq!(
                        ann.delta_hat[k][c],
                        bary - r.point(i)[c],
                        max_relative = 1e-12,
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn denormal_responsibilities_fuse_without_overflow() {
        let target = PointSet::new(2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let reference = PointSet::new(2, vec![0.0, 0.0]).unwrap();
        let p = DMatrix::from_row_slice(1, 2, &[1e-310, 1e-320]);
        let state = threshold(p, 0.01, ThresholdMode::Off);
        let ann = annotate(&state, &target, &reference, &[2.0]).unwrap();
        assert!(ann.sigma2_eff[0].is_finite());
        assert!(ann.delta_hat[0].iter().all(|v| v.is_finite()));
        assert!(ann.annotator_var.iter().all(|(_, _, v)| *v == f64::INFINITY));
    }

    #[test]
    fn closest_point_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_set(10, 2, &mut rng);
        let (st, ann) = closest_point_correspondence(&r, &r, &r, 0.1).unwrap();
        assert!(st.missing.is_empty());
        assert!(ann.delta_hat.iter().flatten().all(|v| *v == 0.0));

        let one = PointSet::from_points(&[[0.2, 0.2]]).unwrap();
        let (st, _) = closest_point_correspondence(&one, &r, &r, 0.1).unwrap();
        assert!(st.corr_sets.iter().all(|c| c == &vec![0]));

        let s = random_set(10, 2, &mut rng);
        let (st, ann) = closest_point_correspondence(&s, &r, &r, 0.1).unwrap();
        for i in 0..10 {
            let mut best = 0;
            for j in 1..10 {
                let dj: f64 = (0..2).map(|k| (s.point(j)[k] - r.point(i)[k]).powi(2)).sum();
                let db: f64 = (0..2).map(|k| (s.point(best)[k] - r.point(i)[k]).powi(2)).sum();
                if dj < db {
                    best = j;
                }
            }
            assert_eq!(st.corr_sets[i], vec![best]);
            assert_eq!(ann.sigma2_eff[i], 0.1);
        }

        // ties go to the lowest target index
        let s = PointSet::from_points(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let r = PointSet::from_points(&[[0.0, 0.0]]).unwrap();
        assert_eq!(
            closest_point_correspondence(&s, &r, &r, 1.0).unwrap().0.corr_sets[0],
            vec![0]
        );
    }

    proptest! {
        #[test]
        fn columns_sum_to_one_without_outliers(seed in 0u64..5000, nr in 1usize..8, ns in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_set(nr, 3, &mut rng);
            let s = random_set(ns, 3, &mut rng);
            let s2: Vec<f64> = (0..nr).map(|_| rng.random_range(1e-3..1.0)).collect();
            let pv: Vec<f64> = (0..nr).map(|_| rng.random_range(0.0..0.1)).collect();
            let p = responsibilities(&inputs(&s, &r, &s2, &pv, 0.0)).unwrap().p;
            for col in p.column_iter() {
                prop_assert!((col.sum() - 1.0).abs() <= 1e-12);
                prop_assert!(col.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn nonincreasing_in_omega(seed in 0u64..5000, w1 in 0.0f64..0.99, w2 in 0.0f64..0.99) {
            let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_set(4, 2, &mut rng);
            let s = random_set(5, 2, &mut rng);
            let s2: Vec<f64> = (0..4).map(|_| rng.random_range(1e-2..1.0)).collect();
            let pv = vec![0.0; 4];
            let a = responsibilities(&inputs(&s, &r, &s2, &pv, lo)).unwrap().p;
            let b = responsibilities(&inputs(&s, &r, &s2, &pv, hi)).unwrap().p;
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!(*y <= *x * (1.0 + 1e-12));
            }
        }

        #[test]
        fn column_scale_cancels(seed in 0u64..5000, shift in 0.0f64..5.0) {
            // Inflating every posterior variance by t multiplies <φ_ij> by
            // exp(-d t / (2 σ²)); with a common σ² that is a per-column constant.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_set(4, 2, &mut rng);
            let s = random_set(3, 2, &mut rng);
            let s2 = vec![0.2; 4];
            let a = responsibilities(&inputs(&s, &r, &s2, &[0.0; 4], 0.0)).unwrap().p;
            let b = responsibilities(&inputs(&s, &r, &s2, &[shift; 4], 0.0)).unwrap().p;
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
