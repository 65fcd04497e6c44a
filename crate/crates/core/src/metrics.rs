//! Image similarity and deformation-parameter error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Geometry, ImageGrid};
use crate::scalar::Real;
use crate::warp::{AffineParams, DeformationField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimOptions {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimOptions {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03 }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn real_view<T: Real>(u: &ImageGrid<T>) -> Vec<f64> {
    let m = if u.is_complex() { u.magnitude() } else { u.clone() };
    m.values().iter().map(|x| x.to_f64_lossy()).collect()
}

/// Separable "valid" filtering of an `n0 x n1` image.
fn filter_valid(x: &[f64], n0: usize, n1: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len();
    let (m0, m1) = (n0 + 1 - k, n1 + 1 - k);
    let mut rows = vec![0.0; n0 * m1];
    for i in 0..n0 {
        for j in 0..m1 {
            rows[i * m1 + j] = (0..k).map(|b| w[b] * x[i * n1 + j + b]).sum();
        }
    }
    let mut out = vec![0.0; m0 * m1];
    for i in 0..m0 {
        for j in 0..m1 {
            out[i * m1 + j] = (0..k).map(|a| w[a] * rows[(i + a) * m1 + j]).sum();
        }
    }
    out
}

/// Mean structural similarity over all fully contained Gaussian windows.
/// Complex images are compared by magnitude; the dynamic range is the joint
/// max minus min of both images.
pub fn ssim_with<T: Real>(a: &ImageGrid<T>, b: &ImageGrid<T>, opts: &SsimOptions) -> Result<f64> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(Error::ShapeMismatch(format!("ssim of {:?} and {:?}", a.shape(), b.shape())));
    }
    let (n0, n1) = (a.shape()[0], a.shape()[1]);
    if n0 < opts.window || n1 < opts.window {
        return Err(Error::ShapeMismatch(format!("image {:?} is smaller than the ssim window", a.shape())));
    }
    let (x, y) = (real_view(a), real_view(b));
    let lo = x.iter().chain(&y).cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().chain(&y).cloned().fold(f64::NEG_INFINITY, f64::max);
    let l = if hi > lo { hi - lo } else { 1.0 };
    let (c1, c2) = ((opts.k1 * l).powi(2), (opts.k2 * l).powi(2));
    let w = gaussian_window(opts.window, opts.sigma);
    let mu_x = filter_valid(&x, n0, n1, &w);
    let mu_y = filter_valid(&y, n0, n1, &w);
    let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(s, t)| s * t).collect::<Vec<_>>();
    let exx = filter_valid(&sq(&x, &x), n0, n1, &w);
    let eyy = filter_valid(&sq(&y, &y), n0, n1, &w);
    let exy = filter_valid(&sq(&x, &y), n0, n1, &w);
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let (vx, vy, cxy) = (exx[i] - mx * mx, eyy[i] - my * my, exy[i] - mx * my);
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

pub fn ssim<T: Real>(a: &ImageGrid<T>, b: &ImageGrid<T>) -> Result<f64> {
    ssim_with(a, b, &SsimOptions::default())
}

/// `100 |phi - phi_gt| / |phi_gt|` on deviation-from-identity parameters.
pub fn relative_difference(phi: &[f64], phi_gt: &[f64]) -> Result<f64> {
    if phi.len() != phi_gt.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} parameters", phi.len(), phi_gt.len())));
    }
    let den = phi_gt.iter().map(|x| x * x).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::DomainError("relative difference to the identity is undefined".into()));
    }
    let num = phi.iter().zip(phi_gt).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(100.0 * num / den)
}

/// Largest distance, in pixels of `grid`, between the two affine maps over
/// the pixel centers.
pub fn max_displacement_px(phi: &AffineParams<f64>, reference: &AffineParams<f64>, grid: &Geometry<f64>) -> f64 {
    let a = DeformationField::from_fn(grid, |x| phi.apply(x).to_vec());
    let b = DeformationField::from_fn(grid, |x| reference.apply(x).to_vec());
    a.max_distance_px(&b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ssim: f64,
    /// Absent when the true deformation is not affine.
    pub rd_percent: Option<f64>,
    pub max_displacement_px: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> ImageGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::real(Geometry::square(n), (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Direct per-window evaluation with an explicit 2-D kernel.
    fn ssim_brute(a: &ImageGrid<f64>, b: &ImageGrid<f64>) -> f64 {
        let n = a.shape()[0];
        let (x, y) = (a.values(), b.values());
        let lo = x.iter().chain(y).cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().chain(y).cloned().fold(f64::NEG_INFINITY, f64::max);
        let l = hi - lo;
        let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
        let mut k = [[0.0; 11]; 11];
        let mut ks = 0.0;
        for (i, row) in k.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let r2 = ((i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5);
                *v = (-r2).exp();
                ks += *v;
            }
        }
        let mut total = 0.0;
        let m = n - 10;
        for p in 0..m {
            for q in 0..m {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let w = k[i][j] / ks;
                        let (s, t) = (x[(p + i) * n + q + j], y[(p + i) * n + q + j]);
                        mx += w * s;
                        my += w * t;
                        sxx += w * s * s;
                        syy += w * t * t;
                        sxy += w * s * t;
                    }
                }
                let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total / (m * m) as f64
    }

    #[test]
    fn matches_direct_windows() {
        for seed in 0..4 {
            let (a, b) = (random(20, seed), random(20, seed + 50));
            let b = b.with_values(b.values().iter().zip(a.values()).map(|(s, t)| 0.5 * s + t).collect());
            assert!((ssim(&a, &b).unwrap() - ssim_brute(&a, &b)).abs() <= 1e-9);
        }
    }

    #[test]
    fn identical_images() {
        let a = random(24, 1);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offset_lowers_similarity() {
        let a = random(24, 2);
        let mut last = 1.0;
        for off in [0.1, 0.5, 2.0] {
            let b = a.with_values(a.values().iter().map(|x| x + off).collect());
            let s = ssim(&a, &b).unwrap();
            assert!(s < last);
            last = s;
        }
    }

    #[test]
    fn symmetric_and_bounded() {
        for seed in 0..10 {
            let (a, b) = (random(16, seed), random(16, seed + 100));
            let (s, t) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            assert!((s - t).abs() <= 1e-12 && s <= 1.0);
        }
    }

    #[test]
    fn rd_examples() {
        let gt = [0.1, -0.2, 0.05, 0.0, 0.3, -0.1];
        assert_eq!(relative_difference(&gt, &gt).unwrap(), 0.0);
        assert!((relative_difference(&[0.0; 6], &gt).unwrap() - 100.0).abs() < 1e-12);
        let double: Vec<f64> = gt.iter().map(|x| 2.0 * x).collect();
        assert!((relative_difference(&double, &gt).unwrap() - 100.0).abs() < 1e-12);
        assert!(relative_difference(&gt, &[0.0; 6]).is_err());
    }
}
