use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use super::EvalError;
use crate::imagecore::{gaussian_blur, GrayImage};
use crate::minutiae::sobel;

pub const ORIENTATION_BINS: usize = 32;
pub const MAGNITUDE_BINS: usize = 16;
pub const GRID: usize = 4;
pub const FEATURE_DIM: usize = ORIENTATION_BINS + MAGNITUDE_BINS + GRID * GRID;

/// Eigenvalues down to this far below zero count as rounding noise.
const PSD_SLACK: f64 = 1e-8;
/// Pre-smoothing for the gradients: keeps ridge-scale structure and
/// suppresses pixel noise.
const GRADIENT_SIGMA: f64 = 1.0;

/// 64 numbers in fixed order:
///
/// * `0..32` ridge orientation histogram over `[0, π)`, each pixel voting
///   with its gradient magnitude, divided by the pixel count;
/// * `32..48` fraction of pixels per gradient magnitude bin over `[0, 1]`
///   (larger values land in the last bin); pixels without gradient are not
///   counted;
/// * `48..64` mean intensity of a 4×4 block grid, row-major.
///
/// Gradients are Sobel responses of the image blurred with σ = 1, divided
/// by 4 so that a full black-to-white step has magnitude 1.
pub fn feature_vector(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let (gx, gy) = sobel(gaussian_blur(img, GRADIENT_SIGMA).data(), w, h);
    let n = (w * h) as f64;
    let mut f = vec![0.0; FEATURE_DIM];
    for (&dx, &dy) in gx.iter().zip(&gy) {
        let (dx, dy) = (dx / 4.0, -dy / 4.0);
        let mag = dx.hypot(dy);
        // blurring a constant can leave rounding-level gradients
        if mag < 1e-12 {
            continue;
        }
        // ridges run perpendicular to the gradient
        let ridge = (dy.atan2(dx) + PI / 2.0).rem_euclid(PI);
        let ob = ((ridge / PI * ORIENTATION_BINS as f64) as usize).min(ORIENTATION_BINS - 1);
        f[ob] += mag / n;
        let mb = ((mag * MAGNITUDE_BINS as f64) as usize).min(MAGNITUDE_BINS - 1);
        f[ORIENTATION_BINS + mb] += 1.0 / n;
    }
    for gy in 0..GRID {
        for gx in 0..GRID {
            let (x0, x1) = (gx * w / GRID, (gx + 1) * w / GRID);
            let (y0, y1) = (gy * h / GRID, (gy + 1) * h / GRID);
            let mut s = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    s += img.get(x, y);
                }
            }
            f[ORIENTATION_BINS + MAGNITUDE_BINS + gy * GRID + gx] =
                s / ((x1 - x0) * (y1 - y0)).max(1) as f64;
        }
    }
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample mean and unbiased covariance of the rows.
    pub fn from_vectors(rows: &[Vec<f64>]) -> Result<Self, EvalError> {
        if rows.len() < 2 {
            return Err(EvalError::InsufficientSamples {
                needed: 2,
                got: rows.len(),
            });
        }
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = DVector::zeros(dim);
        for r in rows {
            mean += DVector::from_column_slice(r);
        }
        mean /= n;
        let mut cov = DMatrix::zeros(dim, dim);
        for r in rows {
            let d = DVector::from_column_slice(r) - &mean;
            cov += &d * d.transpose();
        }
        cov /= n - 1.0;
        // exact symmetry regardless of accumulation order
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self { mean, cov })
    }
}

pub fn fit_stats(images: &[GrayImage]) -> Result<FeatureStats, EvalError> {
    let rows: Vec<Vec<f64>> = images.par_iter().map(feature_vector).collect();
    FeatureStats::from_vectors(&rows)
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, EvalError> {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min < -PSD_SLACK {
        return Err(EvalError::NotPsd {
            min_eigenvalue: min,
        });
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `‖μ1 − μ2‖² + tr(Σ1 + Σ2 − 2 (Σ1 Σ2)^½)`.
///
/// The trace of the product root is taken as the trace of
/// `(√Σ1 Σ2 √Σ1)^½`, which is symmetric and shares its eigenvalues.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64, EvalError> {
    if a.dim() != b.dim() || a.cov.nrows() != b.cov.nrows() {
        return Err(EvalError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let root_a = psd_sqrt(&a.cov)?;
    psd_sqrt(&b.cov)?;
    let inner = &root_a * &b.cov * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let cross: f64 = eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()).sum();
    let mean_term = (&a.mean - &b.mean).norm_squared();
    Ok((mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross).max(0.0))
}
