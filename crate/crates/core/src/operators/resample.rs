//! Area-weighted resampling between two regular 2-D grids.
//!
//! Each target pixel receives the average of the source image over the
//! target pixel's footprint, treating the source as piecewise constant.
//! Block averaging (coarser target) and replication (finer target) are the
//! nested special cases.

use crate::error::{Error, Result};
use crate::grid::{Geometry, ImageGrid};
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct AreaResample<T> {
    source: Geometry<T>,
    target: Geometry<T>,
    /// Per axis, per target pixel: `(source index, weight)`.
    weights: [Vec<Vec<(usize, T)>>; 2],
}

fn axis_weights<T: Real>(src: &Geometry<T>, tgt: &Geometry<T>, axis: usize) -> Vec<Vec<(usize, T)>> {
    let (hs, os) = (src.spacing()[axis], src.origin()[axis]);
    let (ht, ot) = (tgt.spacing()[axis], tgt.origin()[axis]);
    let ns = src.shape()[axis];
    let eps = T::lit(1e-12);
    (0..tgt.shape()[axis])
        .map(|p| {
            let lo = ot + T::from_usize_lossy(p) * ht;
            let hi = lo + ht;
            let first = ((lo - os) / hs + eps).floor().max(T::zero()).to_usize().unwrap_or(0);
            let mut row = Vec::new();
            let mut k = first;
            while k < ns {
                let slo = os + T::from_usize_lossy(k) * hs;
                if slo >= hi - eps * hs {
                    break;
                }
                let overlap = (slo + hs).min(hi) - slo.max(lo);
                if overlap > eps * hs {
                    row.push((k, overlap / ht));
                }
                k += 1;
            }
            row
        })
        .collect()
}

impl<T: Real> AreaResample<T> {
    pub fn new(source: &Geometry<T>, target: &Geometry<T>) -> Result<Self> {
        if source.dim() != 2 || target.dim() != 2 {
            return Err(Error::ShapeMismatch("area resampling is 2-D".into()));
        }
        let weights = [axis_weights(source, target, 0), axis_weights(source, target, 1)];
        Ok(Self { source: source.clone(), target: target.clone(), weights })
    }

    pub fn source(&self) -> &Geometry<T> {
        &self.source
    }

    pub fn target(&self) -> &Geometry<T> {
        &self.target
    }

    pub fn forward(&self, u: &[T], channels: usize) -> Vec<T> {
        let [s0, s1] = [self.source.shape()[0], self.source.shape()[1]];
        let [t0, t1] = [self.target.shape()[0], self.target.shape()[1]];
        // along axis 1
        let mut tmp = vec![T::zero(); s0 * t1 * channels];
        for i in 0..s0 {
            for (q, row) in self.weights[1].iter().enumerate() {
                for &(k, w) in row {
                    for c in 0..channels {
                        tmp[(i * t1 + q) * channels + c] += w * u[(i * s1 + k) * channels + c];
                    }
                }
            }
        }
        let mut out = vec![T::zero(); t0 * t1 * channels];
        for (p, row) in self.weights[0].iter().enumerate() {
            for &(k, w) in row {
                let src = &tmp[k * t1 * channels..(k + 1) * t1 * channels];
                let dst = &mut out[p * t1 * channels..(p + 1) * t1 * channels];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        out
    }

    pub fn backward(&self, y: &[T], channels: usize) -> Vec<T> {
        let [s0, s1] = [self.source.shape()[0], self.source.shape()[1]];
        let t1 = self.target.shape()[1];
        let mut tmp = vec![T::zero(); s0 * t1 * channels];
        for (p, row) in self.weights[0].iter().enumerate() {
            for &(k, w) in row {
                let src = &y[p * t1 * channels..(p + 1) * t1 * channels];
                let dst = &mut tmp[k * t1 * channels..(k + 1) * t1 * channels];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        let mut out = vec![T::zero(); s0 * s1 * channels];
        for i in 0..s0 {
            for (q, row) in self.weights[1].iter().enumerate() {
                for &(k, w) in row {
                    for c in 0..channels {
                        out[(i * s1 + k) * channels + c] += w * tmp[(i * t1 + q) * channels + c];
                    }
                }
            }
        }
        out
    }

    pub fn apply_image(&self, u: &ImageGrid<T>) -> Result<ImageGrid<T>> {
        if !u.geometry().matches(&self.source) {
            return Err(Error::ShapeMismatch(format!(
                "resample source {:?} vs image {:?}",
                self.source.shape(),
                u.shape()
            )));
        }
        ImageGrid::new(self.target.clone(), u.channels(), self.forward(u.values(), u.channels()))
    }
}
