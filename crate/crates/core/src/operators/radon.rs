//! Parallel-beam line integrals with exact ray/pixel intersection lengths.
//!
//! Angles are equispaced in `(0, pi]`; the detector has `bins` equal bins
//! across `[-half_width, half_width]` and each bin integrates along the line
//! through its center. The system matrix is stored row-wise (one row per
//! ray) and reused verbatim by the backprojection.

use crate::error::{Error, Result};
use crate::grid::Geometry;
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct Radon<T> {
    domain: Geometry<T>,
    angles: Vec<T>,
    bins: usize,
    half_width: T,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<T>,
}

impl<T: Real> Radon<T> {
    pub fn new(domain: &Geometry<T>, n_angles: usize, bins: usize, half_width: T) -> Result<Self> {
        if domain.dim() != 2 {
            return Err(Error::ShapeMismatch("Radon transform is 2-D".into()));
        }
        if n_angles == 0 || bins == 0 || !(half_width > T::zero()) {
            return Err(Error::ParamError("Radon needs angles, bins and a positive detector width".into()));
        }
        let angles: Vec<T> =
            (1..=n_angles).map(|k| T::PI() * T::from_usize_lossy(k) / T::from_usize_lossy(n_angles)).collect();
        let bin_width = T::lit(2.0) * half_width / T::from_usize_lossy(bins);
        let mut row_ptr = Vec::with_capacity(n_angles * bins + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        let mut scratch = Vec::new();
        for &theta in &angles {
            let (s, c) = theta.sin_cos();
            for b in 0..bins {
                let offset = -half_width + (T::from_usize_lossy(b) + T::lit(0.5)) * bin_width;
                trace_ray(domain, [offset * c, offset * s], [-s, c], &mut scratch, &mut cols, &mut vals);
                row_ptr.push(cols.len());
            }
        }
        Ok(Self { domain: domain.clone(), angles, bins, half_width, row_ptr, cols, vals })
    }

    pub fn domain(&self) -> &Geometry<T> {
        &self.domain
    }

    pub fn angles(&self) -> &[T] {
        &self.angles
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn n_rays(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Sinogram grid: angle along axis 0, detector offset along axis 1.
    pub fn range_geometry(&self) -> Geometry<T> {
        let na = T::from_usize_lossy(self.angles.len());
        let bw = T::lit(2.0) * self.half_width / T::from_usize_lossy(self.bins);
        Geometry::new(
            vec![self.angles.len(), self.bins],
            vec![T::PI() / (T::lit(2.0) * na), -self.half_width],
            vec![T::PI() / na, bw],
        )
        .expect("sinogram geometry")
    }

    /// Entries `(pixel, length)` of ray `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().map(|&c| c as usize).zip(self.vals[span].iter().copied())
    }

    pub fn forward(&self, u: &[T]) -> Vec<T> {
        (0..self.n_rays())
            .map(|r| {
                let span = self.row_ptr[r]..self.row_ptr[r + 1];
                self.cols[span.clone()].iter().zip(&self.vals[span]).map(|(&c, &w)| w * u[c as usize]).sum()
            })
            .collect()
    }

    pub fn backward(&self, y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.domain.n_pixels()];
        for (r, &yr) in y.iter().enumerate() {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            for (&c, &w) in self.cols[span.clone()].iter().zip(&self.vals[span]) {
                out[c as usize] += w * yr;
            }
        }
        out
    }
}

/// Appends the pixels crossed by the line `start + t * dir` (unit `dir`)
/// together with the crossing lengths.
fn trace_ray<T: Real>(
    g: &Geometry<T>,
    start: [T; 2],
    dir: [T; 2],
    crossings: &mut Vec<T>,
    cols: &mut Vec<u32>,
    vals: &mut Vec<T>,
) {
    let tiny = T::lit(1e-12);
    let mut t_lo = T::neg_infinity();
    let mut t_hi = T::infinity();
    for a in 0..2 {
        let (lo, hi) = g.extent(a);
        if dir[a].abs() <= tiny {
            if start[a] < lo || start[a] >= hi {
                return;
            }
        } else {
            let t0 = (lo - start[a]) / dir[a];
            let t1 = (hi - start[a]) / dir[a];
            t_lo = t_lo.max(t0.min(t1));
            t_hi = t_hi.min(t0.max(t1));
        }
    }
    if !(t_hi > t_lo) {
        return;
    }
    crossings.clear();
    crossings.push(t_lo);
    crossings.push(t_hi);
    for a in 0..2 {
        if dir[a].abs() <= tiny {
            continue;
        }
        let (h, o) = (g.spacing()[a], g.origin()[a]);
        for m in 1..g.shape()[a] {
            let plane = o + T::from_usize_lossy(m) * h;
            let t = (plane - start[a]) / dir[a];
            if t > t_lo && t < t_hi {
                crossings.push(t);
            }
        }
    }
    crossings.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite crossings"));
    let n1 = g.shape()[1];
    for w in crossings.windows(2) {
        let len = w[1] - w[0];
        if !(len > tiny) {
            continue;
        }
        let mid = (w[0] + w[1]) * T::lit(0.5);
        let mut idx = [0usize; 2];
        for a in 0..2 {
            let x = start[a] + mid * dir[a];
            let k = ((x - g.origin()[a]) / g.spacing()[a]).floor();
            let k = k.to_isize().unwrap_or(0).clamp(0, g.shape()[a] as isize - 1);
            idx[a] = k as usize;
        }
        cols.push((idx[0] * n1 + idx[1]) as u32);
        vals.push(len);
    }
}
