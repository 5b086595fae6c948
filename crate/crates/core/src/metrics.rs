//! Evaluation of a registration against the ground truth of a synthetic
//! instance.
//!
//! Distances are squared Euclidean and averaged over reference points.
//! Undefined metrics (empty subsets, empty denominators) come back as `None`
//! rather than zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::SyntheticInstance;
use crate::types::{PointSet, RegistrationResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    Missing,
    NonMissing,
}

/// Mean of `‖r̄_i − s*_i‖²` over the reference points selected by `subset`.
pub fn mean_sq_distance_points(
    deformed: &PointSet,
    ground_truth: &PointSet,
    missing_mask: &[bool],
    subset: Subset,
) -> Result<Option<f64>> {
    if deformed.len() != ground_truth.len() || deformed.len() != missing_mask.len() {
        return Err(Error::DimensionMismatch {
            expected: ground_truth.len(),
            got: deformed.len(),
        });
    }
    if deformed.dim() != ground_truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: ground_truth.dim(),
            got: deformed.dim(),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &missing) in missing_mask.iter().enumerate() {
        let keep = match subset {
            Subset::All => true,
            Subset::Missing => missing,
            Subset::NonMissing => !missing,
        };
        if keep {
            sum += deformed
                .point(i)
                .iter()
                .zip(ground_truth.point(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            count += 1;
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Distance error of a registration; failed registrations are rejected.
pub fn mean_sq_distance(
    result: &RegistrationResult,
    instance: &SyntheticInstance,
    subset: Subset,
) -> Result<Option<f64>> {
    if result.failed {
        return Err(Error::FailedRegistration);
    }
    mean_sq_distance_points(
        &result.deformed_reference,
        &instance.ground_truth,
        &instance.missing_mask,
        subset,
    )
}

/// Fraction of registrations that did not fail; `None` for an empty list.
pub fn success_ratio<'a, I>(results: I) -> Option<f64>
where
    I: IntoIterator<Item = &'a RegistrationResult>,
{
    success_ratio_flags(results.into_iter().map(|r| !r.failed))
}

pub fn success_ratio_flags<I: IntoIterator<Item = bool>>(ok: I) -> Option<f64> {
    let (mut n, mut good) = (0usize, 0usize);
    for s in ok {
        n += 1;
        good += s as usize;
    }
    (n > 0).then(|| good as f64 / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

/// Recall and precision of the predicted missing set against the true one.
pub fn detection_scores(predicted: &[usize], truth_mask: &[bool]) -> Result<Detection> {
    if let Some(&i) = predicted.iter().find(|&&i| i >= truth_mask.len()) {
        return Err(Error::InvalidInput(format!(
            "predicted missing index {i} out of range for {} reference points",
            truth_mask.len()
        )));
    }
    let mut pred = vec![false; truth_mask.len()];
    for &i in predicted {
        pred[i] = true;
    }
    let hit = pred.iter().zip(truth_mask).filter(|(p, t)| **p && **t).count();
    let n_true = truth_mask.iter().filter(|t| **t).count();
    let n_pred = pred.iter().filter(|p| **p).count();
    Ok(Detection {
        recall: (n_true > 0).then(|| hit as f64 / n_true as f64),
        precision: (n_pred > 0).then(|| hit as f64 / n_pred as f64),
    })
}

pub fn missing_detection(result: &RegistrationResult, instance: &SyntheticInstance) -> Result<Detection> {
    if result.state.n_ref() != instance.missing_mask.len() {
        return Err(Error::DimensionMismatch {
            expected: instance.missing_mask.len(),
            got: result.state.n_ref(),
        });
    }
    detection_scores(&result.state.missing, &instance.missing_mask)
}
