//! Domain types shared by every stage of the pipeline.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of `dim`-dimensional points with stable integer ids.
///
/// Coordinates are stored row-major (point after point). Indices, not
/// coordinates, identify points everywhere else in the crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PointSetRepr", into = "PointSetRepr")]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
    ids: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PointSetRepr {
    dim: usize,
    coords: Vec<f64>,
    ids: Vec<usize>,
}

impl TryFrom<PointSetRepr> for PointSet {
    type Error = Error;

    fn try_from(r: PointSetRepr) -> Result<Self> {
        PointSet::with_ids(r.dim, r.coords, r.ids)
    }
}

impl From<PointSet> for PointSetRepr {
    fn from(p: PointSet) -> Self {
        PointSetRepr {
            dim: p.dim,
            coords: p.coords,
            ids: p.ids,
        }
    }
}

impl PointSet {
    /// Builds a point set from flat row-major coordinates; ids are `0..N`.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        let n = coords.len() / dim;
        Self::with_ids(dim, coords, (0..n).collect())
    }

    pub fn with_ids(dim: usize, coords: Vec<f64>, ids: Vec<usize>) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidInput(format!(
                "point dimension must be 2 or 3, got {dim}"
            )));
        }
        if coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "{} coordinates do not form a nonempty set of {dim}-d points",
                coords.len()
            )));
        }
        if let Some(k) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinate in point {}",
                k / dim
            )));
        }
        let n = coords.len() / dim;
        if ids.len() != n {
            return Err(Error::InvalidInput(format!("{} ids for {n} points", ids.len())));
        }
        let mut seen = vec![false; n];
        for &id in &ids {
            if id >= n || seen[id] {
                return Err(Error::InvalidInput("ids must be a permutation of 0..N".into()));
            }
            seen[id] = true;
        }
        Ok(PointSet { dim, coords, ids })
    }

    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let dim = points
            .first()
            .map(|p| p.as_ref().len())
            .ok_or_else(|| Error::InvalidInput("empty point set".into()))?;
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "point {i} has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        Self::new(dim, coords)
    }

    /// Builds a point set from an `N x d` matrix (one point per row).
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = m.shape();
        let mut coords = Vec::with_capacity(n * d);
        for i in 0..n {
            coords.extend(m.row(i).iter());
        }
        Self::new(d, coords)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Flat row-major coordinates (length `N * dim`).
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// `N x d` matrix, one point per row.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.coords)
    }

    /// Returns the points at `indices`, renumbered `0..indices.len()`.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        Self::new(self.dim, coords)
    }

    /// Adds a per-point displacement (`N x d`, one row per point).
    pub fn displaced(&self, disp: &DMatrix<f64>) -> Result<Self> {
        if disp.nrows() != self.len() || disp.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: disp.nrows(),
            });
        }
        let mut coords = self.coords.clone();
        for (i, chunk) in coords.chunks_exact_mut(self.dim).enumerate() {
            for (k, c) in chunk.iter_mut().enumerate() {
                *c += disp[(i, k)];
            }
        }
        PointSet::with_ids(self.dim, coords, self.ids.clone())
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for p in self.iter() {
            for (ck, pk) in c.iter_mut().zip(p) {
                *ck += pk;
            }
        }
        let n = self.len() as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.iter() {
            for k in 0..self.dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Largest pairwise Euclidean distance.
    pub fn diameter(&self) -> f64 {
        let n = self.len();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(sq_dist(self.point(i), self.point(j)));
            }
        }
        best.sqrt()
    }

    /// Mean distance from each point to its nearest other point (0 for a
    /// single point).
    pub fn mean_nn_distance(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let total: f64 = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| sq_dist(self.point(i), self.point(j)))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .sum();
        total / n as f64
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// One registration variance per reference point.
    PerPoint,
    /// A single variance shared by all reference points.
    Scalar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrespondenceMode {
    MultiAnnotator,
    ClosestPoint,
}

/// Parameters of one registration run.
///
/// `sigma2_init` and `jitter` are scale dependent; `None` selects
/// the defaults derived from the reference (squared mean nearest-neighbour
/// distance) and from the Gram diagonal (`1e-8` times its mean).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub omega: f64,
    pub p_min: f64,
    pub sigma2_init: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub jitter: Option<f64>,
    pub variance_mode: VarianceMode,
    pub threshold_mode: ThresholdMode,
    pub correspondence_mode: CorrespondenceMode,
    pub seed: u64,
    /// Translate the reference onto the target centroid before fitting.
    pub pre_center: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            omega: 0.1,
            p_min: 0.01,
            sigma2_init: None,
            max_iters: 200,
            rel_tol: 1e-5,
            jitter: None,
            variance_mode: VarianceMode::PerPoint,
            threshold_mode: ThresholdMode::On,
            correspondence_mode: CorrespondenceMode::MultiAnnotator,
            seed: 0,
            pre_center: false,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(self) -> Result<Self> {
        validate_config(self)
    }
}

/// Returns `cfg` unchanged when every field is in range.
pub fn validate_config(cfg: RegistrationConfig) -> Result<RegistrationConfig> {
    if !(cfg.omega >= 0.0 && cfg.omega < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "omega must be < 1 and >= 0 (got {})",
            cfg.omega
        )));
    }
    if !(cfg.p_min > 0.0 && cfg.p_min < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "p_min must lie in (0, 1) (got {})",
            cfg.p_min
        )));
    }
    if let Some(s) = cfg.sigma2_init {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma2_init must be positive (got {s})")));
        }
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
    }
    if !(cfg.rel_tol >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "rel_tol must be nonnegative (got {})",
            cfg.rel_tol
        )));
    }
    if let Some(j) = cfg.jitter {
        if !(j >= 0.0 && j.is_finite()) {
            return Err(Error::InvalidConfig(format!("jitter must be nonnegative (got {j})")));
        }
    }
    Ok(cfg)
}

/// Soft correspondences and the inlier/missing split of the reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceState {
    /// `N_R x N_S` responsibilities.
    pub p: DMatrix<f64>,
    /// Row sums of `p` over all target points.
    pub nu: Vec<f64>,
    /// Target indices accepted as correspondences of each reference point.
    pub corr_sets: Vec<Vec<usize>>,
    pub inliers: Vec<usize>,
    pub missing: Vec<usize>,
}

impl CorrespondenceState {
    /// Builds the state from responsibilities and per-point accepted sets;
    /// points with an empty set become missing.
    pub fn from_sets(p: DMatrix<f64>, corr_sets: Vec<Vec<usize>>) -> Self {
        let nu = p.row_iter().map(|r| r.sum()).collect();
        let (inliers, missing) = (0..corr_sets.len()).partition(|&i| !corr_sets[i].is_empty());
        CorrespondenceState {
            p,
            nu,
            corr_sets,
            inliers,
            missing,
        }
    }

    pub fn n_ref(&self) -> usize {
        self.corr_sets.len()
    }

    pub fn is_missing(&self, i: usize) -> bool {
        self.corr_sets[i].is_empty()
    }
}

/// Fused deformation labels of the inlier reference points.
///
/// `delta_hat[k]` and `sigma2_eff[k]` belong to reference point `inliers[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDeformations {
    pub inliers: Vec<usize>,
    pub delta_hat: Vec<Vec<f64>>,
    pub sigma2_eff: Vec<f64>,
    /// `(i, j, variance)` for every annotation that entered the fusion.
    pub annotator_var: Vec<(usize, usize, f64)>,
}

/// GP posterior over the displacement of every reference point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDeformation {
    /// `N_R x d` posterior mean displacement.
    pub mu: DMatrix<f64>,
    /// Per-point scalar posterior variance; the d x d block is
    /// `var_diag[i] * I` for isotropic kernels and its trace over `d` otherwise.
    pub var_diag: Vec<f64>,
}

/// One row of the per-iteration trace. Equality ignores `elapsed_ms`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub mean_displacement: f64,
    pub displacement_change: f64,
    pub n_inliers: usize,
    pub n_missing: usize,
    pub mean_sigma2: f64,
    pub min_sigma2: f64,
    pub elapsed_ms: f64,
}

impl PartialEq for IterationRecord {
    fn eq(&self, o: &Self) -> bool {
        self.iter == o.iter
            && self.mean_displacement == o.mean_displacement
            && self.displacement_change == o.displacement_change
            && self.n_inliers == o.n_inliers
            && self.n_missing == o.n_missing
            && self.mean_sigma2 == o.mean_sigma2
            && self.min_sigma2 == o.min_sigma2
    }
}

impl fmt::Display for IterationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} mean_disp={:.6e} disp_change={:.6e} inliers={} missing={} mean_sigma2={:.6e} min_sigma2={:.6e} elapsed_ms={:.3}",
            self.iter,
            self.mean_displacement,
            self.displacement_change,
            self.n_inliers,
            self.n_missing,
            self.mean_sigma2,
            self.min_sigma2,
            self.elapsed_ms
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub deformed_reference: PointSet,
    pub state: CorrespondenceState,
    pub sigma2: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    /// No inlier annotations in the first iteration.
    pub failed: bool,
    /// Every reference point became missing after the first iteration; the
    /// result holds the last iterate that still had inliers.
    pub collapsed: bool,
    pub trace: Vec<IterationRecord>,
}
