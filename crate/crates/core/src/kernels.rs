//! Kernels over reference points and their Gram matrices.
//!
//! All scalar kernels act on each output coordinate independently, so the
//! covariance of the stacked `N*d` displacement vector (point-major order)
//! is `G ⊗ I_d`. The PCA kernel is the exception: it couples coordinates
//! across points and dimensions and is carried as a low-rank term
//! `U diag(λ) Uᵀ` next to the scalar part.

use std::fs;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{sq_dist, PointSet};

/// Relative jitter applied to the mean Gram diagonal when none is given.
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-8;

/// Eigenvalues below this fraction of the largest are treated as zero.
const SPECTRUM_RTOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `a² exp(-|x - y|² / (2 ℓ²))`; `amplitude` holds the variance `a²`.
    SquaredExponential {
        amplitude: f64,
        lengthscale: f64,
    },
    Pca(PcaKernel),
    Sum {
        parts: Vec<KernelSpec>,
    },
    Scaled {
        factor: f64,
        inner: Box<KernelSpec>,
    },
}

/// Truncated sample covariance of registered training deformations.
///
/// Only defined on the points of `anchor`; `eigenvectors` has one column of
/// length `N * d` per eigenvalue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaKernel {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub anchor: PointSet,
}

impl KernelSpec {
    pub fn squared_exponential(amplitude: f64, lengthscale: f64) -> Self {
        KernelSpec::SquaredExponential { amplitude, lengthscale }
    }

    pub fn sum(parts: Vec<KernelSpec>) -> Self {
        KernelSpec::Sum { parts }
    }

    pub fn scaled(factor: f64, inner: KernelSpec) -> Self {
        KernelSpec::Scaled {
            factor,
            inner: Box::new(inner),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::SquaredExponential { amplitude, lengthscale } => {
                if !(*amplitude > 0.0 && amplitude.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "kernel amplitude must be positive (got {amplitude})"
                    )));
                }
                if !(*lengthscale > 0.0 && lengthscale.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "kernel lengthscale must be positive (got {lengthscale})"
                    )));
                }
                Ok(())
            }
            KernelSpec::Pca(pca) => pca.validate(),
            KernelSpec::Sum { parts } => {
                if parts.is_empty() {
                    return Err(Error::InvalidInput("empty kernel sum".into()));
                }
                parts.iter().try_for_each(KernelSpec::validate)
            }
            KernelSpec::Scaled { factor, inner } => {
                if !(*factor > 0.0 && factor.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "kernel scale factor must be positive (got {factor})"
                    )));
                }
                inner.validate()
            }
        }
    }

    pub fn has_pca(&self) -> bool {
        match self {
            KernelSpec::SquaredExponential { .. } => false,
            KernelSpec::Pca(_) => true,
            KernelSpec::Sum { parts } => parts.iter().any(KernelSpec::has_pca),
            KernelSpec::Scaled { inner, .. } => inner.has_pca(),
        }
    }
}

impl PcaKernel {
    fn validate(&self) -> Result<()> {
        let nd = self.anchor.len() * self.anchor.dim();
        if self.eigenvectors.nrows() != nd || self.eigenvectors.ncols() != self.eigenvalues.len() {
            return Err(Error::InvalidInput(format!(
                "pca eigenvectors are {}x{}, expected {nd}x{}",
                self.eigenvectors.nrows(),
                self.eigenvectors.ncols(),
                self.eigenvalues.len()
            )));
        }
        if self.eigenvalues.is_empty() {
            return Err(Error::InvalidInput("pca kernel has no eigenpairs".into()));
        }
        if self.eigenvalues.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidInput("pca eigenvalues must be positive".into()));
        }
        if self.eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidInput("pca eigenvalues must be nonincreasing".into()));
        }
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Evaluates a non-PCA kernel at two points.
pub fn eval_scalar_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    eval(spec, sq_dist(x, y))
}

fn eval(spec: &KernelSpec, r2: f64) -> Result<f64> {
    match spec {
        KernelSpec::SquaredExponential { amplitude, lengthscale } => {
            Ok(amplitude * (-r2 / (2.0 * lengthscale * lengthscale)).exp())
        }
        KernelSpec::Pca(_) => Err(Error::UnsupportedEvaluation),
        KernelSpec::Sum { parts } => parts.iter().map(|p| eval(p, r2)).sum(),
        KernelSpec::Scaled { factor, inner } => Ok(factor * eval(inner, r2)?),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockStructure {
    /// `K = G ⊗ I_d`
    IsotropicBlock,
    /// `K = G ⊗ I_d + U diag(λ) Uᵀ`
    GeneralBlock,
}

/// Low-rank term `U diag(λ) Uᵀ` over the stacked `N*d` displacement.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankCorrection {
    pub u: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

/// Prior covariance of the reference displacements.
///
/// The effective prior is `(g + jitter I) ⊗ I_d` plus the optional low-rank
/// correction.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub g: DMatrix<f64>,
    pub jitter: f64,
    pub dim: usize,
    pub correction: Option<LowRankCorrection>,
}

impl GramMatrix {
    pub fn structure(&self) -> BlockStructure {
        if self.correction.is_some() {
            BlockStructure::GeneralBlock
        } else {
            BlockStructure::IsotropicBlock
        }
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    /// `g + jitter I`.
    pub fn jittered(&self) -> DMatrix<f64> {
        let mut g = self.g.clone();
        for i in 0..g.nrows() {
            g[(i, i)] += self.jitter;
        }
        g
    }

    /// Prior variance of coordinate `k` of point `i` (diagonal of the full
    /// `N*d` covariance).
    pub fn prior_var(&self, i: usize, k: usize) -> f64 {
        let mut v = self.g[(i, i)] + self.jitter;
        if let Some(c) = &self.correction {
            let row = i * self.dim + k;
            v += (0..c.lambda.len())
                .map(|m| c.u[(row, m)] * c.u[(row, m)] * c.lambda[m])
                .sum::<f64>();
        }
        v
    }

    /// Materializes the full `N*d x N*d` prior covariance. Only meant for
    /// small problems and diagnostics.
    pub fn expanded(&self) -> DMatrix<f64> {
        let n = self.n();
        let d = self.dim;
        let gj = self.jittered();
        let mut k = DMatrix::zeros(n * d, n * d);
        for i in 0..n {
            for j in 0..n {
                for c in 0..d {
                    k[(i * d + c, j * d + c)] = gj[(i, j)];
                }
            }
        }
        if let Some(c) = &self.correction {
            let ul = &c.u * DMatrix::from_diagonal(&c.lambda);
            k += ul * c.u.transpose();
        }
        k
    }
}

/// Default jitter: a small fraction of the mean prior variance.
pub fn default_jitter(g: &DMatrix<f64>, correction: Option<&LowRankCorrection>, dim: usize) -> f64 {
    let n = g.nrows().max(1) as f64;
    let mut mean = g.diagonal().sum() / n;
    if let Some(c) = correction {
        let low: f64 = (0..c.u.nrows())
            .map(|r| {
                (0..c.lambda.len())
                    .map(|m| c.u[(r, m)].powi(2) * c.lambda[m])
                    .sum::<f64>()
            })
            .sum();
        mean += low / (n * dim as f64);
    }
    DEFAULT_RELATIVE_JITTER * mean
}

/// Assembles the Gram matrix of `spec` over `reference`.
///
/// `jitter = None` selects [`default_jitter`]. Fails when `g + jitter I` has
/// no Cholesky factor.
pub fn assemble_gram(spec: &KernelSpec, reference: &PointSet, jitter: Option<f64>) -> Result<GramMatrix> {
    spec.validate()?;
    let n = reference.len();
    let d = reference.dim();
    let mut g = DMatrix::zeros(n, n);
    let mut u_parts: Vec<DMatrix<f64>> = Vec::new();
    let mut l_parts: Vec<f64> = Vec::new();
    accumulate(spec, reference, 1.0, &mut g, &mut u_parts, &mut l_parts)?;

    let correction = if u_parts.is_empty() {
        None
    } else {
        let cols: usize = u_parts.iter().map(|u| u.ncols()).sum();
        let mut u = DMatrix::zeros(n * d, cols);
        let mut at = 0;
        for part in &u_parts {
            u.columns_mut(at, part.ncols()).copy_from(part);
            at += part.ncols();
        }
        Some(LowRankCorrection {
            u,
            lambda: DVector::from_vec(l_parts),
        })
    };
    let jitter = jitter.unwrap_or_else(|| default_jitter(&g, correction.as_ref(), d));
    let gram = GramMatrix {
        g,
        jitter,
        dim: d,
        correction,
    };
    cholesky(gram.jittered())?;
    Ok(gram)
}

fn accumulate(
    spec: &KernelSpec,
    reference: &PointSet,
    scale: f64,
    g: &mut DMatrix<f64>,
    u_parts: &mut Vec<DMatrix<f64>>,
    l_parts: &mut Vec<f64>,
) -> Result<()> {
    match spec {
        KernelSpec::Pca(pca) => {
            if pca.anchor.dim() != reference.dim()
                || pca.anchor.len() != reference.len()
                || pca.anchor.coords() != reference.coords()
            {
                return Err(Error::AnchorMismatch);
            }
            u_parts.push(pca.eigenvectors.clone());
            l_parts.extend(pca.eigenvalues.iter().map(|l| scale * l));
            Ok(())
        }
        KernelSpec::Sum { parts } => parts
            .iter()
            .try_for_each(|p| accumulate(p, reference, scale, g, u_parts, l_parts)),
        KernelSpec::Scaled { factor, inner } => accumulate(inner, reference, scale * factor, g, u_parts, l_parts),
        KernelSpec::SquaredExponential { .. } => {
            let n = reference.len();
            let rows: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    (0..n)
                        .map(|j| eval(spec, sq_dist(reference.point(i), reference.point(j))))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<_>>()?;
            for (i, row) in rows.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    g[(i, j)] += scale * v;
                }
            }
            Ok(())
        }
    }
}

/// Cholesky factorization that reports the failing pivot.
pub fn cholesky(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    match Cholesky::new(m.clone()) {
        Some(c) => Ok(c),
        None => Err(Error::NotPositiveDefinite {
            pivot: failing_pivot(&m),
        }),
    }
}

fn failing_pivot(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            return diag;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    f64::NAN
}

/// Builds a PCA kernel from training deformations (each of length `N*d`,
/// point-major) of the `anchor` reference.
///
/// The samples are mean-centred and the top `rank` eigenpairs of their
/// sample covariance (normalized by `n - 1`) are kept.
pub fn build_pca_kernel(training: &[Vec<f64>], rank: usize, anchor: &PointSet) -> Result<KernelSpec> {
    let nd = anchor.len() * anchor.dim();
    let n = training.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "pca kernel needs at least two training samples".into(),
        ));
    }
    if let Some(bad) = training.iter().find(|t| t.len() != nd) {
        return Err(Error::DimensionMismatch {
            expected: nd,
            got: bad.len(),
        });
    }
    if rank == 0 {
        return Err(Error::InvalidInput("pca rank must be at least 1".into()));
    }

    let mut x = DMatrix::from_fn(n, nd, |s, c| training[s][c]);
    let mean = x.row_mean();
    for mut row in x.row_iter_mut() {
        row -= &mean;
    }

    // Eigenpairs of the n x n Gram X Xᵀ share the nonzero spectrum of XᵀX.
    let denom = (n - 1) as f64;
    let small = (&x * x.transpose()) / denom;
    let eig = SymmetricEigen::new(small);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    // Rounding noise left after centring identical samples is not spectrum.
    let scale = training.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let noise = (f64::EPSILON * scale).powi(2) * (nd * n) as f64;
    let cut = (SPECTRUM_RTOL * top).max(noise);
    let available = order.iter().filter(|&&k| eig.eigenvalues[k] > cut).count();
    if rank > available {
        return Err(Error::RankTooLarge {
            requested: rank,
            available,
        });
    }

    let mut vecs = DMatrix::zeros(nd, rank);
    let mut vals = Vec::with_capacity(rank);
    for (m, &k) in order.iter().take(rank).enumerate() {
        let lambda = eig.eigenvalues[k];
        let mut v = x.transpose() * eig.eigenvectors.column(k);
        v /= v.norm();
        vecs.set_column(m, &v);
        vals.push(lambda);
    }
    Ok(KernelSpec::Pca(PcaKernel {
        eigenvalues: vals,
        eigenvectors: vecs,
        anchor: anchor.clone(),
    }))
}

/// SHA-256 over the anchor's dimension, size and coordinate bytes.
pub fn anchor_hash(anchor: &PointSet) -> String {
    let mut h = Sha256::new();
    h.update((anchor.dim() as u64).to_le_bytes());
    h.update((anchor.len() as u64).to_le_bytes());
    for c in anchor.coords() {
        h.update(c.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

const SPECTRUM_FORMAT: &str = "sfgp-pca-spectrum";

#[derive(Serialize, Deserialize)]
struct SpectrumFile {
    format: String,
    version: u32,
    dim: usize,
    n_points: usize,
    anchor_hash: String,
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<Vec<f64>>,
}

/// Writes the spectrum of a trained PCA kernel as JSON.
pub fn save_spectrum(pca: &PcaKernel, path: &Path) -> Result<()> {
    let file = SpectrumFile {
        format: SPECTRUM_FORMAT.into(),
        version: 1,
        dim: pca.anchor.dim(),
        n_points: pca.anchor.len(),
        anchor_hash: anchor_hash(&pca.anchor),
        eigenvalues: pca.eigenvalues.clone(),
        eigenvectors: pca
            .eigenvectors
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect(),
    };
    fs::write(path, serde_json::to_vec_pretty(&file)?)?;
    Ok(())
}

/// Reads a spectrum file and attaches it to `anchor`, which must hash to the
/// value recorded at training time.
pub fn load_spectrum(path: &Path, anchor: &PointSet) -> Result<PcaKernel> {
    let file: SpectrumFile = serde_json::from_slice(&fs::read(path)?)?;
    if file.format != SPECTRUM_FORMAT {
        return Err(Error::Parse(format!("unknown spectrum format {:?}", file.format)));
    }
    if file.anchor_hash != anchor_hash(anchor) {
        return Err(Error::AnchorMismatch);
    }
    let nd = file.dim * file.n_points;
    if file.eigenvectors.iter().any(|v| v.len() != nd) {
        return Err(Error::Parse("eigenvector length does not match anchor".into()));
    }
    let m = file.eigenvectors.len();
    let pca = PcaKernel {
        eigenvalues: file.eigenvalues,
        eigenvectors: DMatrix::from_fn(nd, m, |r, c| file.eigenvectors[c][r]),
        anchor: anchor.clone(),
    };
    pca.validate()?;
    Ok(pca)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointSet::new(d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn se_values() {
        let se = KernelSpec::squared_exponential(1.0, 1.0);
        assert_eq!(eval_scalar_kernel(&se, &[0.3, 0.2], &[0.3, 0.2]).unwrap(), 1.0);
        let se2 = KernelSpec::squared_exponential(2.0, 1.0);
        let v = eval_scalar_kernel(&se2, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_relative_eq!(v, 2.0 * (-1.0f64).exp(), max_relative = 1e-15);
        assert!((v - 0.7358).abs() < 1e-4);
        let comp = KernelSpec::sum(vec![
            KernelSpec::squared_exponential(1.0, 1.0),
            KernelSpec::scaled(0.5, KernelSpec::squared_exponential(1.0, 2.0)),
        ]);
        assert_eq!(eval_scalar_kernel(&comp, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.5);
    }

    #[test]
    fn pca_is_not_pointwise() {
        let anchor = random_points(3, 2, 1);
        let spec = KernelSpec::Pca(PcaKernel {
            eigenvalues: vec![1.0],
            eigenvectors: DMatrix::from_element(6, 1, 1.0 / 6f64.sqrt()),
            anchor,
        });
        assert!(matches!(
            eval_scalar_kernel(&spec, &[0.0, 0.0], &[0.0, 0.0]),
            Err(Error::UnsupportedEvaluation)
        ));
    }

    #[test]
    fn rejects_invalid_specs() {
        let p = random_points(3, 2, 0);
        assert!(assemble_gram(&KernelSpec::squared_exponential(0.0, 1.0), &p, None).is_err());
        assert!(assemble_gram(&KernelSpec::squared_exponential(1.0, -1.0), &p, None).is_err());
        assert!(assemble_gram(&KernelSpec::sum(vec![]), &p, None).is_err());
        let s = KernelSpec::scaled(0.0, KernelSpec::squared_exponential(1.0, 1.0));
        assert!(assemble_gram(&s, &p, None).is_err());
    }

    #[test]
    fn small_grams() {
        let one = PointSet::from_points(&[[0.5, 0.5]]).unwrap();
        let g = assemble_gram(&KernelSpec::squared_exponential(1.0, 1.0), &one, Some(0.0)).unwrap();
        assert_eq!(g.g, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(g.structure(), BlockStructure::IsotropicBlock);

        let line = PointSet::from_points(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        let g = assemble_gram(&KernelSpec::squared_exponential(1.0, 1.0), &line, Some(0.0)).unwrap();
        assert_relative_eq!(g.g[(0, 1)], (-0.5f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(g.g[(1, 2)], (-0.5f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(g.g[(0, 2)], (-2.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn random_gram_is_positive_definite() {
        let p = random_points(10, 2, 7);
        let g = assemble_gram(&KernelSpec::squared_exponential(1.0, 0.5), &p, Some(1e-8)).unwrap();
        let eig = SymmetricEigen::new(g.jittered());
        assert!(eig.eigenvalues.iter().all(|&l| l > 0.0), "{:?}", eig.eigenvalues);
    }

    #[test]
    fn duplicate_points_fail_without_jitter() {
        let p = PointSet::from_points(&[[0.0, 0.0], [0.0, 0.0]]).unwrap();
        let err = assemble_gram(&KernelSpec::squared_exponential(1.0, 1.0), &p, Some(0.0)).unwrap_err();
        match err {
            Error::NotPositiveDefinite { pivot } => assert!(pivot <= 0.0),
            e => panic!("unexpected {e}"),
        }
        assert!(assemble_gram(&KernelSpec::squared_exponential(1.0, 1.0), &p, Some(1e-6)).is_ok());
    }

    #[test]
    fn pca_two_symmetric_samples() {
        let anchor = random_points(2, 2, 3);
        let a = vec![1.0, 2.0, -1.0, 0.5];
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        let KernelSpec::Pca(pca) = build_pca_kernel(&[a.clone(), b], 1, &anchor).unwrap() else {
            unreachable!()
        };
        let norm2: f64 = a.iter().map(|v| v * v).sum();
        // samples ±a: covariance = 2 a aᵀ / (2 - 1)
        assert_relative_eq!(pca.eigenvalues[0], 2.0 * norm2, max_relative = 1e-12);
        let v = pca.eigenvectors.column(0);
        let cos = v.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>() / norm2.sqrt();
        assert_relative_eq!(cos.abs(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn pca_rank_and_degenerate_errors() {
        let anchor = random_points(2, 2, 3);
        let s = vec![0.1, 0.2, 0.3, 0.4];
        assert!(matches!(
            build_pca_kernel(&[s.clone(), s.clone(), s.clone()], 1, &anchor),
            Err(Error::RankTooLarge { available: 0, .. })
        ));
        let t = vec![0.0; 4];
        assert!(matches!(
            build_pca_kernel(&[s.clone(), t.clone()], 2, &anchor),
            Err(Error::RankTooLarge {
                requested: 2,
                available: 1
            })
        ));
        assert!(build_pca_kernel(&[s], 1, &anchor).is_err());
        assert!(build_pca_kernel(&[vec![0.0; 3], t], 1, &anchor).is_err());
    }

    #[test]
    fn pca_matches_truncated_covariance() {
        // 5 samples of a 3-point 2-d shape: 6 coordinates.
        let anchor = random_points(3, 2, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let KernelSpec::Pca(pca) = build_pca_kernel(&samples, 3, &anchor).unwrap() else {
            unreachable!()
        };

        // Oracle: full eigendecomposition of the 6x6 sample covariance.
        let n = samples.len() as f64;
        let mean: Vec<f64> = (0..6).map(|c| samples.iter().map(|s| s[c]).sum::<f64>() / n).collect();
        let cov = DMatrix::from_fn(6, 6, |a, b| {
            samples.iter().map(|s| (s[a] - mean[a]) * (s[b] - mean[b])).sum::<f64>() / (n - 1.0)
        });
        let eig = SymmetricEigen::new(cov);
        let mut idx: Vec<usize> = (0..6).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut truncated = DMatrix::zeros(6, 6);
        for &k in idx.iter().take(3) {
            let v = eig.eigenvectors.column(k);
            truncated += eig.eigenvalues[k] * v * v.transpose();
        }
        for (m, &k) in idx.iter().take(3).enumerate() {
            assert_relative_eq!(pca.eigenvalues[m], eig.eigenvalues[k], max_relative = 1e-10);
        }

        let gram = assemble_gram(&KernelSpec::Pca(pca), &anchor, Some(0.0)).unwrap_err();
        // A pure PCA kernel has no scalar part; it needs jitter to factor.
        assert!(matches!(gram, Error::NotPositiveDefinite { .. }));
        let KernelSpec::Pca(pca) = build_pca_kernel(&samples, 3, &anchor).unwrap() else {
            unreachable!()
        };
        let gram = assemble_gram(&KernelSpec::Pca(pca), &anchor, Some(1e-9)).unwrap();
        assert_eq!(gram.structure(), BlockStructure::GeneralBlock);
        let mut k = gram.expanded();
        for i in 0..6 {
            k[(i, i)] -= 1e-9;
        }
        let diff = (&k - &truncated).norm() / truncated.norm();
        assert!(diff < 1e-10, "relative Frobenius error {diff}");
        assert_relative_eq!(k.norm(), truncated.norm(), max_relative = 1e-10);
    }

    #[test]
    fn pca_anchor_must_match() {
        let anchor = random_points(3, 2, 1);
        let other = random_points(3, 2, 2);
        let samples = vec![vec![1.0; 6], vec![0.0; 6], vec![0.5, 0.0, 0.0, 0.0, 0.0, 1.0]];
        let spec = build_pca_kernel(&samples, 1, &anchor).unwrap();
        assert!(matches!(
            assemble_gram(&spec, &other, Some(1e-6)),
            Err(Error::AnchorMismatch)
        ));
        assert!(assemble_gram(&spec, &anchor, None).is_ok());
    }

    #[test]
    fn spectrum_file_round_trip() {
        let anchor = random_points(4, 3, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let KernelSpec::Pca(pca) = build_pca_kernel(&samples, 4, &anchor).unwrap() else {
            unreachable!()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spectrum.json");
        save_spectrum(&pca, &path).unwrap();
        assert_eq!(load_spectrum(&path, &anchor).unwrap(), pca);
        let moved = random_points(4, 3, 10);
        assert!(matches!(load_spectrum(&path, &moved), Err(Error::AnchorMismatch)));
    }

    #[test]
    fn isotropic_solve_equals_expanded_solve() {
        for seed in 0..5 {
            let n = 2 + seed as usize;
            let p = random_points(n, 3, 100 + seed);
            let gram = assemble_gram(&KernelSpec::squared_exponential(1.0, 0.7), &p, Some(1e-3)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rhs = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));

            let chol = cholesky(gram.jittered()).unwrap();
            let per_column = chol.solve(&rhs);

            let big = gram.expanded();
            let flat = DVector::from_fn(n * 3, |r, _| rhs[(r / 3, r % 3)]);
            let dense = big.lu().solve(&flat).unwrap();
            for i in 0..n {
                for c in 0..3 {
                    assert_relative_eq!(per_column[(i, c)], dense[i * 3 + c], max_relative = 1e-9);
                }
            }
        }
    }

    fn arb_se() -> impl Strategy<Value = KernelSpec> {
        (0.1f64..3.0, 0.1f64..2.0).prop_map(|(a, l)| KernelSpec::squared_exponential(a, l))
    }

    fn arb_spec() -> impl Strategy<Value = KernelSpec> {
        arb_se().prop_recursive(2, 6, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..3).prop_map(KernelSpec::sum),
                (0.1f64..4.0, inner).prop_map(|(c, k)| KernelSpec::scaled(c, k)),
            ]
        })
    }

    proptest! {
        #[test]
        fn gram_symmetric_and_spd(spec in arb_spec(), seed in 0u64..1000, n in 1usize..12) {
            let p = random_points(n, 2, seed);
            let gram = assemble_gram(&spec, &p, None).unwrap();
            let g = &gram.g;
            for i in 0..n {
                for j in 0..n {
                    let scale = g[(i, j)].abs().max(g[(j, i)].abs()).max(f64::MIN_POSITIVE);
                    prop_assert!((g[(i, j)] - g[(j, i)]).abs() <= 1e-12 * scale);
                }
            }
            prop_assert!(Cholesky::new(gram.jittered()).is_some());
        }

        #[test]
        fn kernel_symmetric(spec in arb_spec(), x in prop::array::uniform3(-2.0f64..2.0), y in prop::array::uniform3(-2.0f64..2.0)) {
            prop_assert_eq!(eval_scalar_kernel(&spec, &x, &y).unwrap(), eval_scalar_kernel(&spec, &y, &x).unwrap());
        }

        #[test]
        fn composition_is_linear(a in arb_spec(), b in arb_spec(), c in 0.1f64..5.0, seed in 0u64..1000) {
            let p = random_points(6, 3, seed);
            let ga = assemble_gram(&a, &p, Some(0.0)).unwrap().g;
            let gb = assemble_gram(&b, &p, Some(0.0)).unwrap().g;
            let gs = assemble_gram(&KernelSpec::sum(vec![a.clone(), b]), &p, Some(0.0)).unwrap().g;
            let gc = assemble_gram(&KernelSpec::scaled(c, a), &p, Some(0.0)).unwrap().g;
            for i in 0..6 {
                for j in 0..6 {
                    let sum = ga[(i, j)] + gb[(i, j)];
                    prop_assert!((gs[(i, j)] - sum).abs() <= 1e-12 * sum.abs());
                    let sc = c * ga[(i, j)];
                    prop_assert!((gc[(i, j)] - sc).abs() <= 1e-12 * sc.abs());
                }
            }
        }
    }
}
