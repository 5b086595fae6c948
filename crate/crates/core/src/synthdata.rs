//! Seeded benchmark instances: non-rigid RBF warps, a box-shaped missing
//! region, uniform outliers, Gaussian noise and a small rotation.
//!
//! Everything is a pure function of its inputs and seed. Each stage draws
//! from its own ChaCha stream so changing one stage's parameters does not
//! shift the random numbers seen by the others.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PointSet;

const STREAM_WARP: u64 = 1;
const STREAM_ROTATION: u64 = 2;
const STREAM_MISSING: u64 = 3;
const STREAM_OUTLIERS: u64 = 4;
const STREAM_NOISE: u64 = 5;

/// Amplitude of one deformation level.
pub const WARP_AMPLITUDE_PER_LEVEL: f64 = 0.04;
/// RBF bandwidth used by the deformation levels.
pub const WARP_BANDWIDTH: f64 = 0.5;
/// Control points used by the deformation levels.
pub const WARP_CONTROLS: usize = 6;
/// Noise standard deviation of one noise level.
pub const NOISE_STD_PER_LEVEL: f64 = 0.01;

pub fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpSpec {
    pub amplitude: f64,
    pub bandwidth: f64,
    pub n_controls: usize,
}

impl WarpSpec {
    pub fn identity() -> Self {
        WarpSpec {
            amplitude: 0.0,
            bandwidth: WARP_BANDWIDTH,
            n_controls: WARP_CONTROLS,
        }
    }

    /// Deformation level `level` (0 = rigid). Level 1 is the calibration
    /// level; amplitude grows linearly with the level.
    pub fn level(level: u32) -> Self {
        WarpSpec {
            amplitude: WARP_AMPLITUDE_PER_LEVEL * level as f64,
            bandwidth: WARP_BANDWIDTH,
            n_controls: WARP_CONTROLS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingCenter {
    Index(usize),
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationSpec {
    pub warp: WarpSpec,
    /// Side of the axis-aligned removal box.
    pub missing_width: f64,
    pub missing_center: MissingCenter,
    /// Outliers added, as a fraction of the reference size.
    pub outlier_ratio: f64,
    pub noise_std: f64,
    pub rotation_max: f64,
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            warp: WarpSpec::level(1),
            missing_width: 0.0,
            missing_center: MissingCenter::Random,
            outlier_ratio: 0.0,
            noise_std: 0.0,
            rotation_max: 0.1,
            seed: 0,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        let w = &self.warp;
        for (name, v) in [
            ("warp amplitude", w.amplitude),
            ("missing width", self.missing_width),
            ("outlier ratio", self.outlier_ratio),
            ("noise std", self.noise_std),
            ("rotation max", self.rotation_max),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be >= 0 (got {v})")));
            }
        }
        if w.amplitude > 0.0 && !(w.bandwidth > 0.0 && w.bandwidth.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "warp bandwidth must be positive (got {})",
                w.bandwidth
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInstance {
    pub target: PointSet,
    /// Complete deformed shape without noise, indexed like the reference.
    pub ground_truth: PointSet,
    /// Per reference index: removed from the target.
    pub missing_mask: Vec<bool>,
    /// Per target index: drawn as an outlier.
    pub outlier_mask: Vec<bool>,
    /// Per target index: the reference index it was generated from.
    pub target_source: Vec<Option<usize>>,
}

/// Sum of Gaussian radial basis displacements.
#[derive(Clone, Debug, PartialEq)]
pub struct RbfWarp {
    pub controls: Vec<Vec<f64>>,
    pub coefficients: Vec<Vec<f64>>,
    pub bandwidth: f64,
}

impl RbfWarp {
    /// Draws control points uniformly from `points` (without replacement when
    /// possible) and coefficients from `Normal(0, amplitude²)`.
    pub fn sample<R: Rng>(
        points: &PointSet,
        amplitude: f64,
        bandwidth: f64,
        n_controls: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if amplitude > 0.0 && !(bandwidth > 0.0) {
            return Err(Error::InvalidInput("warp bandwidth must be positive".into()));
        }
        if amplitude == 0.0 || n_controls == 0 {
            return Ok(RbfWarp {
                controls: vec![],
                coefficients: vec![],
                bandwidth,
            });
        }
        let n = points.len();
        let idx: Vec<usize> = if n_controls <= n {
            sample(rng, n, n_controls).into_vec()
        } else {
            (0..n_controls).map(|_| rng.random_range(0..n)).collect()
        };
        let normal = Normal::new(0.0, amplitude).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let controls = idx.iter().map(|&i| points.point(i).to_vec()).collect();
        let coefficients = idx
            .iter()
            .map(|_| (0..points.dim()).map(|_| normal.sample(rng)).collect())
            .collect();
        Ok(RbfWarp {
            controls,
            coefficients,
            bandwidth,
        })
    }

    pub fn displacement(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (z, c) in self.controls.iter().zip(&self.coefficients) {
            let r2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            let w = (-r2 / (2.0 * self.bandwidth * self.bandwidth)).exp();
            for (o, ck) in out.iter_mut().zip(c) {
                *o += w * ck;
            }
        }
        out
    }

    pub fn apply(&self, points: &PointSet) -> Result<PointSet> {
        if self.controls.is_empty() {
            return Ok(points.clone());
        }
        let coords = points
            .iter()
            .flat_map(|p| {
                let d = self.displacement(p);
                p.iter().zip(d).map(|(a, b)| a + b).collect::<Vec<_>>()
            })
            .collect();
        PointSet::new(points.dim(), coords)
    }
}

/// Warps `points` with a freshly drawn [`RbfWarp`]; amplitude 0 is the identity.
pub fn warp_rbf(points: &PointSet, amplitude: f64, bandwidth: f64, n_controls: usize, seed: u64) -> Result<PointSet> {
    let mut rng = stage_rng(seed, STREAM_WARP);
    RbfWarp::sample(points, amplitude, bandwidth, n_controls, &mut rng)?.apply(points)
}

/// Removes every point whose coordinates all lie within `width / 2` of the
/// point at `center_index`. Returns the kept points and the removal mask.
pub fn apply_structured_missing(points: &PointSet, center_index: usize, width: f64) -> Result<(PointSet, Vec<bool>)> {
    if center_index >= points.len() {
        return Err(Error::InvalidInput(format!(
            "missing-region center {center_index} out of range"
        )));
    }
    if !(width >= 0.0) {
        return Err(Error::InvalidInput(format!("missing width must be >= 0 (got {width})")));
    }
    let center = points.point(center_index);
    let half = width / 2.0;
    let mask: Vec<bool> = points
        .iter()
        .map(|p| width > 0.0 && p.iter().zip(center).all(|(a, c)| (a - c).abs() <= half))
        .collect();
    let kept: Vec<usize> = (0..points.len()).filter(|&i| !mask[i]).collect();
    if kept.is_empty() {
        return Err(Error::DegenerateInstance(format!(
            "a missing box of width {width} removes every point"
        )));
    }
    Ok((points.select(&kept)?, mask))
}

/// Appends `round(ratio * n_ref)` points drawn uniformly from the bounding
/// box of `points` scaled 1.1x about its center.
pub fn add_outliers(points: &PointSet, n_ref: usize, ratio: f64, seed: u64) -> Result<(PointSet, Vec<bool>)> {
    let mut rng = stage_rng(seed, STREAM_OUTLIERS);
    add_outliers_with(points, n_ref, ratio, &mut rng)
}

fn add_outliers_with<R: Rng>(
    points: &PointSet,
    n_ref: usize,
    ratio: f64,
    rng: &mut R,
) -> Result<(PointSet, Vec<bool>)> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidInput(format!("outlier ratio must be >= 0 (got {ratio})")));
    }
    let count = (ratio * n_ref as f64).round() as usize;
    let (lo, hi) = expanded_box(points);
    let mut coords = points.coords().to_vec();
    for _ in 0..count {
        for k in 0..points.dim() {
            coords.push(if hi[k] > lo[k] {
                rng.random_range(lo[k]..hi[k])
            } else {
                lo[k]
            });
        }
    }
    let mut mask = vec![false; points.len()];
    mask.resize(points.len() + count, true);
    Ok((PointSet::new(points.dim(), coords)?, mask))
}

/// Bounding box of `points` scaled by 1.1 about its center.
pub fn expanded_box(points: &PointSet) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = points.bounding_box();
    let lo2 = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| 0.5 * (l + h) - 0.55 * (h - l))
        .collect();
    let hi2 = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| 0.5 * (l + h) + 0.55 * (h - l))
        .collect();
    (lo2, hi2)
}

/// Adds iid `Normal(0, std²)` noise to every coordinate.
pub fn add_noise(points: &PointSet, std: f64, seed: u64) -> Result<PointSet> {
    let mut rng = stage_rng(seed, STREAM_NOISE);
    add_noise_with(points, std, &mut rng)
}

fn add_noise_with<R: Rng>(points: &PointSet, std: f64, rng: &mut R) -> Result<PointSet> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::InvalidInput(format!("noise std must be >= 0 (got {std})")));
    }
    if std == 0.0 {
        return Ok(points.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let coords = points.coords().iter().map(|c| c + normal.sample(rng)).collect();
    PointSet::new(points.dim(), coords)
}

/// Rotates about the centroid by an angle drawn from
/// `Uniform(-max_angle, max_angle)`; 3-d rotations use a random axis.
fn rotate_random<R: Rng>(points: &PointSet, max_angle: f64, rng: &mut R) -> Result<PointSet> {
    if max_angle == 0.0 {
        return Ok(points.clone());
    }
    let angle = rng.random_range(-max_angle..max_angle);
    let c = points.centroid();
    let (sin, cos) = angle.sin_cos();
    let rot: Vec<[f64; 3]> = match points.dim() {
        2 => vec![[cos, -sin, 0.0], [sin, cos, 0.0]],
        _ => {
            let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
            let t = 1.0 - cos;
            vec![
                [cos + x * x * t, x * y * t - z * sin, x * z * t + y * sin],
                [y * x * t + z * sin, cos + y * y * t, y * z * t - x * sin],
                [z * x * t - y * sin, z * y * t + x * sin, cos + z * z * t],
            ]
        }
    };
    let d = points.dim();
    let coords = points
        .iter()
        .flat_map(|p| {
            let rel: Vec<f64> = p.iter().zip(&c).map(|(a, b)| a - b).collect();
            (0..d)
                .map(|r| c[r] + (0..d).map(|k| rot[r][k] * rel[k]).sum::<f64>())
                .collect::<Vec<_>>()
        })
        .collect();
    PointSet::new(d, coords)
}

/// Builds one benchmark instance from `reference`.
///
/// The warp and rotation produce the ground truth; the target is the ground
/// truth minus the missing box, plus outliers, plus noise on every point.
pub fn generate(reference: &PointSet, spec: &PerturbationSpec) -> Result<SyntheticInstance> {
    spec.validate()?;
    let n = reference.len();
    let w = &spec.warp;
    let mut rng = stage_rng(spec.seed, STREAM_WARP);
    let warped = RbfWarp::sample(reference, w.amplitude, w.bandwidth, w.n_controls, &mut rng)?.apply(reference)?;
    let ground_truth = rotate_random(&warped, spec.rotation_max, &mut stage_rng(spec.seed, STREAM_ROTATION))?;

    let center = match spec.missing_center {
        MissingCenter::Index(i) => i,
        MissingCenter::Random => stage_rng(spec.seed, STREAM_MISSING).random_range(0..n),
    };
    let (kept, missing_mask) = apply_structured_missing(&ground_truth, center, spec.missing_width)?;
    let mut target_source: Vec<Option<usize>> = (0..n).filter(|&i| !missing_mask[i]).map(Some).collect();

    let (with_outliers, outlier_mask) =
        add_outliers_with(&kept, n, spec.outlier_ratio, &mut stage_rng(spec.seed, STREAM_OUTLIERS))?;
    target_source.resize(with_outliers.len(), None);
    let target = add_noise_with(&with_outliers, spec.noise_std, &mut stage_rng(spec.seed, STREAM_NOISE))?;

    Ok(SyntheticInstance {
        target,
        ground_truth,
        missing_mask,
        outlier_mask,
        target_source,
    })
}

/// A 98-point fish outline (body, dorsal fin and forked tail), resampled to
/// equal arc length. Spans roughly `[-1, 1] x [-0.45, 0.55]`.
pub fn fish() -> PointSet {
    fish_with(98)
}

pub fn fish_with(n: usize) -> PointSet {
    let mut outline: Vec<[f64; 2]> = Vec::new();
    let (cx, a, b) = (0.2, 0.82, 0.38);
    let body = |t: f64| [cx + a * t.cos(), b * t.sin()];
    // Upper body from the snout back to the tail root.
    let t0 = 0.0f64;
    let t1 = std::f64::consts::PI - 0.3;
    for k in 0..=24 {
        let t = t0 + (t1 - t0) * k as f64 / 24.0;
        let [x, y] = body(t);
        // dorsal fin over x in [-0.2, 0.4]
        let fin = if (-0.2..=0.4).contains(&x) {
            0.17 * (1.0 - ((x - 0.15) / 0.3).abs()).max(0.0)
        } else {
            0.0
        };
        outline.push([x, y + fin]);
    }
    let root = body(t1);
    outline.push([root[0] - 0.2, 0.40]);
    outline.push([root[0] - 0.24, 0.47]);
    outline.push([root[0] - 0.12, 0.0]);
    outline.push([root[0] - 0.24, -0.47]);
    outline.push([root[0] - 0.2, -0.40]);
    for k in 0..=24 {
        let t = std::f64::consts::PI + 0.3 + (std::f64::consts::PI - 0.3) * k as f64 / 24.0;
        outline.push(body(t));
    }
    resample_closed(&outline, n)
}

fn resample_closed(outline: &[[f64; 2]], n: usize) -> PointSet {
    let m = outline.len();
    let seg = |k: usize| -> f64 {
        let (a, b) = (outline[k], outline[(k + 1) % m]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    };
    let total: f64 = (0..m).map(seg).sum();
    let step = total / n as f64;
    let mut coords = Vec::with_capacity(2 * n);
    let (mut k, mut acc) = (0, 0.0);
    for q in 0..n {
        let target = q as f64 * step;
        while acc + seg(k) < target {
            acc += seg(k);
            k += 1;
        }
        let (a, b) = (outline[k], outline[(k + 1) % m]);
        let t = if seg(k) > 0.0 { (target - acc) / seg(k) } else { 0.0 };
        coords.push(a[0] + t * (b[0] - a[0]));
        coords.push(a[1] + t * (b[1] - a[1]));
    }
    PointSet::new(2, coords).expect("fish outline is finite")
}

/// `n` points spread over an ellipsoid surface (Fibonacci lattice).
pub fn ellipsoid(n: usize, axes: [f64; 3]) -> PointSet {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let coords = (0..n)
        .flat_map(|k| {
            let y = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * k as f64;
            [axes[0] * r * phi.cos(), axes[1] * y, axes[2] * r * phi.sin()]
        })
        .collect();
    PointSet::new(3, coords).expect("ellipsoid points are finite")
}
