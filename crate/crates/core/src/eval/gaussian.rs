use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Regularizer added to both covariances when either is near-singular.
pub const FRECHET_EPS: f64 = 1e-6;
/// Largest discarded imaginary part of the matrix square root's spectrum.
pub const IMAGINARY_TOLERANCE: f64 = 1e-3;

/// Sample mean and unbiased covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub sample_count: usize,
    /// Set when the covariance is rank-deficient by construction (`dim >= n`).
    pub singular_warning: Option<String>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "covariance undefined for {n} sample(s); need at least 2"
        )));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::Shape("feature vectors must share one non-zero length".into()));
    }
    let data = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = DVector::from_fn(d, |j, _| data.column(j).sum() / n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| data[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let covariance = (&cov + cov.transpose()) * 0.5;
    let singular_warning = (d >= n).then(|| {
        format!("covariance of {n} samples in {d} dimensions is singular (rank at most {})", n - 1)
    });
    Ok(GaussianStats {
        mean,
        covariance,
        sample_count: n,
        singular_warning,
    })
}

fn symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Principal square root of a symmetric positive semi-definite matrix;
/// negative round-off eigenvalues are clamped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetric(m));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn near_singular(m: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(symmetric(m)).eigenvalues;
    let scale = eig.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    eig.iter().any(|&l| l <= FRECHET_EPS * scale)
}

/// `‖μ1 − μ2‖² + Tr(Σ1 + Σ2 − 2 (Σ1 Σ2)^½)`.
///
/// The trace of `(Σ1 Σ2)^½` is taken from the spectrum of the symmetric
/// product `Σ1^½ Σ2 Σ1^½`, which shares its eigenvalues with `Σ1 Σ2`. A
/// negative eigenvalue corresponds to an imaginary root: it is dropped when
/// its root is below [`IMAGINARY_TOLERANCE`] and rejected otherwise. When
/// either covariance is near-singular, `εI` is added to both before all
/// three trace terms, so identical inputs still give exactly zero.
pub fn frechet_distance(g1: &GaussianStats, g2: &GaussianStats) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::Shape(format!(
            "cannot compare {}-dimensional and {}-dimensional statistics",
            g1.dim(),
            g2.dim()
        )));
    }
    let mut s1 = symmetric(&g1.covariance);
    let mut s2 = symmetric(&g2.covariance);
    if near_singular(&s1) || near_singular(&s2) {
        let eps = DMatrix::identity(g1.dim(), g1.dim()) * FRECHET_EPS;
        s1 += &eps;
        s2 += &eps;
    }
    let root1 = psd_sqrt(&s1);
    let inner = symmetric(&(&root1 * &s2 * &root1));
    let spectrum = SymmetricEigen::new(inner).eigenvalues;
    let mut trace_sqrt = 0.0;
    for &l in spectrum.iter() {
        if l >= 0.0 {
            trace_sqrt += l.sqrt();
        } else if (-l).sqrt() >= IMAGINARY_TOLERANCE {
            return Err(Error::Numerical(format!(
                "ill-conditioned covariance product (imaginary component {:.3e})",
                (-l).sqrt()
            )));
        }
    }
    let diff = &g1.mean - &g2.mean;
    let d = diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * trace_sqrt;
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats(mean: Vec<f64>, cov: DMatrix<f64>) -> GaussianStats {
        GaussianStats {
            mean: DVector::from_vec(mean),
            covariance: cov,
            sample_count: 100,
            singular_warning: None,
        }
    }

    #[test]
    fn two_scalar_samples() {
        let g = fit_gaussian(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(g.mean[0], 1.0);
        assert_eq!(g.covariance[(0, 0)], 2.0);
    }

    #[test]
    fn identical_vectors_have_zero_covariance() {
        let g = fit_gaussian(&vec![vec![1.5, -2.0, 3.0]; 4]).unwrap();
        assert!(g.covariance.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_samples() {
        let err = fit_gaussian(&[vec![1.0]]).unwrap_err();
        assert!(err.to_string().contains("covariance undefined"));
    }

    #[test]
    fn rank_deficient_sets_warning() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let feats: Vec<Vec<f64>> = (0..6).map(|_| (0..2048).map(|_| rng.random::<f64>()).collect()).collect();
        assert!(fit_gaussian(&feats).unwrap().singular_warning.is_some());
        let feats: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        assert!(fit_gaussian(&feats).unwrap().singular_warning.is_none());
    }

    #[test]
    fn matches_nested_loop_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (n, d) = (rng.random_range(2..9), rng.random_range(1..6));
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
            let g = fit_gaussian(&x).unwrap();
            for a in 0..d {
                let ma: f64 = x.iter().map(|r| r[a]).sum::<f64>() / n as f64;
                assert!((g.mean[a] - ma).abs() < 1e-10);
                for b in 0..d {
                    let mb: f64 = x.iter().map(|r| r[b]).sum::<f64>() / n as f64;
                    let mut s = 0.0;
                    for r in &x {
                        s += (r[a] - ma) * (r[b] - mb);
                    }
                    assert!((g.covariance[(a, b)] - s / (n - 1) as f64).abs() < 1e-10);
                }
            }
            assert!((&g.covariance - g.covariance.transpose()).amax() <= 1e-10);
        }
    }

    #[test]
    fn diagonal_example() {
        let a = stats(vec![0.0, 0.0], DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])));
        let b = stats(vec![0.0, 0.0], DMatrix::identity(2, 2));
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_shift_example() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let a = stats(vec![3.0, 4.0], cov.clone());
        let b = stats(vec![0.0, 0.0], cov);
        assert!((frechet_distance(&a, &b).unwrap() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn diagonal_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let d = rng.random_range(1..8);
            let m1: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m2: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v1: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..5.0)).collect();
            let v2: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..5.0)).collect();
            let expected: f64 = (0..d)
                .map(|i| (m1[i] - m2[i]).powi(2) + v1[i] + v2[i] - 2.0 * (v1[i] * v2[i]).sqrt())
                .sum();
            let a = stats(m1, DMatrix::from_diagonal(&DVector::from_vec(v1)));
            let b = stats(m2, DMatrix::from_diagonal(&DVector::from_vec(v2)));
            assert!((frechet_distance(&a, &b).unwrap() - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn self_distance_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [3, 10, 50] {
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..8).map(|_| rng.random::<f64>()).collect()).collect();
            let g = fit_gaussian(&x).unwrap();
            assert!(frechet_distance(&g, &g).unwrap().abs() < 1e-5, "n={n}");
        }
    }

    #[test]
    fn non_negative_and_symmetric_for_random_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let d = rng.random_range(1..6);
            let mk = |rng: &mut ChaCha8Rng| {
                let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                stats(
                    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    &a * a.transpose() + DMatrix::identity(d, d) * 0.1,
                )
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            let ab = frechet_distance(&a, &b).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - frechet_distance(&b, &a).unwrap()).abs() < 1e-8 * (1.0 + ab));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let a = stats(vec![0.0], DMatrix::identity(1, 1));
        let b = stats(vec![0.0, 0.0], DMatrix::identity(2, 2));
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let bad = stats(vec![0.0, 0.0], DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])));
        let good = stats(vec![0.0, 0.0], DMatrix::identity(2, 2));
        let err = frechet_distance(&good, &bad).unwrap_err();
        assert!(err.to_string().contains("ill-conditioned covariance product"));
    }
}
