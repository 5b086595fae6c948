//! Dense reference computations shared by the integration tests. They work
//! on the fully expanded `N*d` covariance and never touch the structured
//! solvers under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfgp::kernels::{KernelSpec, PcaKernel};
use sfgp::PointSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(n: usize, d: usize, rng: &mut ChaCha8Rng) -> PointSet {
    PointSet::new(d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random PCA kernel anchored at `anchor` with orthonormal eigenvectors.
pub fn random_pca(anchor: &PointSet, rank: usize, rng: &mut ChaCha8Rng) -> KernelSpec {
    let nd = anchor.len() * anchor.dim();
    let raw = DMatrix::from_fn(nd, rank, |_, _| rng.random_range(-1.0..1.0));
    let q = raw.qr().q();
    let mut eigenvalues: Vec<f64> = (0..rank).map(|_| rng.random_range(0.05..1.0)).collect();
    eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());
    KernelSpec::Pca(PcaKernel {
        eigenvalues,
        eigenvectors: q,
        anchor: anchor.clone(),
    })
}

/// Prior covariance of the stacked displacement (point-major, `i*d + k`),
/// evaluated entry by entry from the kernel definition.
pub fn dense_prior(spec: &KernelSpec, pts: &PointSet) -> DMatrix<f64> {
    let n = pts.len();
    let d = pts.dim();
    match spec {
        KernelSpec::SquaredExponential { amplitude, lengthscale } => DMatrix::from_fn(n * d, n * d, |a, b| {
            if a % d != b % d {
                return 0.0;
            }
            let (x, y) = (pts.point(a / d), pts.point(b / d));
            let r2: f64 = x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum();
            amplitude * (-r2 / (2.0 * lengthscale * lengthscale)).exp()
        }),
        KernelSpec::Pca(p) => {
            let mut k = DMatrix::zeros(n * d, n * d);
            for (m, lambda) in p.eigenvalues.iter().enumerate() {
                let u = p.eigenvectors.column(m);
                k += *lambda * u * u.transpose();
            }
            k
        }
        KernelSpec::Sum { parts } => parts
            .iter()
            .fold(DMatrix::zeros(n * d, n * d), |acc, p| acc + dense_prior(p, pts)),
        KernelSpec::Scaled { factor, inner } => *factor * dense_prior(inner, pts),
    }
}

pub fn add_jitter(mut k: DMatrix<f64>, jitter: f64) -> DMatrix<f64> {
    for i in 0..k.nrows() {
        k[(i, i)] += jitter;
    }
    k
}

/// Joint-normal conditioning of the full displacement on noisy observations
/// of the inlier points. Returns the posterior mean (`N x d`) and the
/// posterior variance of every coordinate (`N x d`).
pub fn dense_conditioning(
    k: &DMatrix<f64>,
    d: usize,
    inliers: &[usize],
    y: &DMatrix<f64>,
    noise: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let nd = k.nrows();
    let obs: Vec<usize> = inliers.iter().flat_map(|&i| (0..d).map(move |c| i * d + c)).collect();
    let m = obs.len();
    let mut kcc = DMatrix::from_fn(m, m, |a, b| k[(obs[a], obs[b])]);
    for a in 0..m {
        kcc[(a, a)] += noise[a / d];
    }
    let kac = DMatrix::from_fn(nd, m, |a, b| k[(a, obs[b])]);
    let yv = DVector::from_fn(m, |a, _| y[(a / d, a % d)]);
    let chol = kcc.cholesky().expect("observed covariance is SPD");
    let mean = &kac * chol.solve(&yv);
    let w = chol.solve(&kac.transpose());
    let cov = k - &kac * w;
    let n = nd / d;
    (
        DMatrix::from_fn(n, d, |i, c| mean[i * d + c]),
        DMatrix::from_fn(n, d, |i, c| cov[(i * d + c, i * d + c)]),
    )
}

/// Variational posterior of the deformation written with explicit inverses:
/// `Σ = (K⁻¹ + D_ν D_ς⁻¹)⁻¹`, `μ = Σ D_ν D_ς⁻¹ (D_ν⁻¹ P s − r)`.
pub fn variational_posterior(
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    target: &PointSet,
    reference: &PointSet,
    sigma2: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = reference.len();
    let d = reference.dim();
    let nu: Vec<f64> = (0..n).map(|i| p.row(i).sum()).collect();
    let prec = DMatrix::from_fn(
        n * d,
        n * d,
        |a, b| if a == b { nu[a / d] / sigma2[a / d] } else { 0.0 },
    );
    let kinv = k.clone().try_inverse().expect("prior is invertible");
    let sigma = (kinv + &prec).try_inverse().expect("posterior precision is invertible");
    let s = target.to_matrix();
    let ps = p * &s;
    let rhs = DVector::from_fn(n * d, |a, _| {
        ps[(a / d, a % d)] / nu[a / d] - reference.point(a / d)[a % d]
    });
    let mu = &sigma * (&prec * rhs);
    (
        DMatrix::from_fn(n, d, |i, c| mu[i * d + c]),
        DMatrix::from_fn(n, d, |i, c| sigma[(i * d + c, i * d + c)]),
    )
}

/// `‖a - b‖∞ ≤ tol · max(‖b‖∞, floor)`.
pub fn close_rel(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    rel_err(a, b) <= tol
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = b.amax().max(1e-300);
    (a - b).amax() / scale
}

/// Responsibilities evaluated literally, without log-space shifting.
pub fn naive_responsibilities(
    target: &PointSet,
    deformed: &PointSet,
    sigma2: &[f64],
    post_var: &[f64],
    omega: f64,
) -> DMatrix<f64> {
    let (nr, ns, d) = (deformed.len(), target.len(), deformed.dim() as f64);
    let phi = DMatrix::from_fn(nr, ns, |i, j| {
        let r2: f64 = target
            .point(j)
            .iter()
            .zip(deformed.point(i))
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        (2.0 * std::f64::consts::PI * sigma2[i]).powf(-d / 2.0)
            * (-r2 / (2.0 * sigma2[i])).exp()
            * (-d * post_var[i] / (2.0 * sigma2[i])).exp()
    });
    DMatrix::from_fn(nr, ns, |i, j| {
        let col: f64 = phi.column(j).sum();
        (1.0 - omega) * phi[(i, j)] / (omega * nr as f64 / ns as f64 + (1.0 - omega) * col)
    })
}
