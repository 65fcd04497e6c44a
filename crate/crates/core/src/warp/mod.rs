//! Biquadratic B-spline interpolation `J(u; phi)`.
//!
//! The spline of an image is built by a per-axis prefilter with half-sample
//! mirror extension of the coefficients, so the spline is symmetric about the
//! domain boundary. Sample positions are clamped to the domain, which makes
//! the warp C^1 in the deformation everywhere.
//!
//! A [`WarpPlan`] caches the 3x3 synthesis weights of one deformation field;
//! the warp, its adjoint in `u` and its derivative in `phi` all reuse them.

mod param;

pub use param::{
    affine_field, affine_param_adjoint, rigid_field, rigid_param_jacobian_adjoint, AffineParams, Parametrization,
    RigidParams,
};

use crate::error::{Error, Result};
use crate::grid::{Geometry, ImageGrid, VectorField};
use crate::scalar::Real;

/// Deformation sampled at the pixel centers of an output grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField<T> {
    geometry: Geometry<T>,
    positions: Vec<T>,
}

impl<T: Real> DeformationField<T> {
    pub fn new(geometry: Geometry<T>, positions: Vec<T>) -> Result<Self> {
        if positions.len() != geometry.n_pixels() * geometry.dim() {
            return Err(Error::ShapeMismatch(format!(
                "deformation needs {} entries, got {}",
                geometry.n_pixels() * geometry.dim(),
                positions.len()
            )));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::DomainError("deformation entries must be finite".into()));
        }
        Ok(Self { geometry, positions })
    }

    pub fn identity(geometry: &Geometry<T>) -> Self {
        Self { positions: geometry.centers(), geometry: geometry.clone() }
    }

    /// Field `x -> f(x)` evaluated at every pixel center.
    pub fn from_fn(geometry: &Geometry<T>, mut f: impl FnMut(&[T]) -> Vec<T>) -> Self {
        let d = geometry.dim();
        let positions = geometry
            .centers()
            .chunks_exact(d)
            .flat_map(|x| {
                let y = f(x);
                assert_eq!(y.len(), d);
                y
            })
            .collect();
        Self { geometry: geometry.clone(), positions }
    }

    pub fn geometry(&self) -> &Geometry<T> {
        &self.geometry
    }

    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    /// Largest displacement `|phi(x) - x|`, measured in pixels of `self`.
    pub fn max_displacement_px(&self) -> T {
        let g = &self.geometry;
        let d = g.dim();
        let h = g.spacing().iter().copied().fold(T::infinity(), T::min);
        g.centers()
            .chunks_exact(d)
            .zip(self.positions.chunks_exact(d))
            .map(|(x, y)| x.iter().zip(y).map(|(&a, &b)| (b - a) * (b - a)).sum::<T>().sqrt())
            .fold(T::zero(), T::max)
            / h
    }

    /// Largest distance between two fields on the same grid, in pixels.
    pub fn max_distance_px(&self, other: &Self) -> T {
        let d = self.geometry.dim();
        let h = self.geometry.spacing().iter().copied().fold(T::infinity(), T::min);
        self.positions
            .chunks_exact(d)
            .zip(other.positions.chunks_exact(d))
            .map(|(x, y)| x.iter().zip(y).map(|(&a, &b)| (b - a) * (b - a)).sum::<T>().sqrt())
            .fold(T::zero(), T::max)
            / h
    }
}

/// Quadratic B-spline coefficients of an image.
#[derive(Clone, Debug)]
pub struct SplineRep<T> {
    geometry: Geometry<T>,
    channels: usize,
    coeffs: Vec<T>,
}

impl<T: Real> SplineRep<T> {
    pub fn geometry(&self) -> &Geometry<T> {
        &self.geometry
    }

    pub fn coefficients(&self) -> &[T] {
        &self.coeffs
    }

    /// Spline value of channel `c` at physical position `x`.
    pub fn eval(&self, c: usize, x: &[T]) -> T {
        let k = Kernel::at(&self.geometry, x);
        let n1 = self.geometry.shape()[1];
        let mut acc = T::zero();
        for a in 0..3 {
            for b in 0..3 {
                acc += k.w0[a] * k.w1[b] * self.coeffs[(k.i0[a] * n1 + k.i1[b]) * self.channels + c];
            }
        }
        acc
    }

    /// Spatial gradient (physical units) of channel `c` at position `x`.
    pub fn eval_gradient(&self, c: usize, x: &[T]) -> [T; 2] {
        let k = Kernel::at(&self.geometry, x);
        let n1 = self.geometry.shape()[1];
        let mut g = [T::zero(); 2];
        for a in 0..3 {
            for b in 0..3 {
                let v = self.coeffs[(k.i0[a] * n1 + k.i1[b]) * self.channels + c];
                g[0] += k.d0[a] * k.w1[b] * v;
                g[1] += k.w0[a] * k.d1[b] * v;
            }
        }
        g
    }
}

fn check_spline_shape<T: Real>(g: &Geometry<T>) -> Result<()> {
    if g.dim() != 2 {
        return Err(Error::ShapeMismatch(format!("spline interpolation is 2-D, got {}-D", g.dim())));
    }
    for (axis, &len) in g.shape().iter().enumerate() {
        if len < 3 {
            return Err(Error::ShapeTooSmall { axis, len });
        }
    }
    Ok(())
}

/// Spline coefficients interpolating `u` at its pixel centers.
pub fn build_spline<T: Real>(u: &ImageGrid<T>) -> Result<SplineRep<T>> {
    check_spline_shape(u.geometry())?;
    let mut coeffs = u.values().to_vec();
    prefilter(u.shape(), u.channels(), &mut coeffs);
    Ok(SplineRep { geometry: u.geometry().clone(), channels: u.channels(), coeffs })
}

/// Solves the symmetric interpolation system along both axes in place.
///
/// The system matrix is its own transpose, so the same routine also applies
/// the transposed inverse needed by the warp adjoint.
fn prefilter<T: Real>(shape: &[usize], channels: usize, data: &mut [T]) {
    let (n0, n1) = (shape[0], shape[1]);
    let row = n1 * channels;
    // axis 0: sweep over whole rows
    let t0 = Thomas::new(n0);
    for i in 0..n0 {
        let inv = t0.inv_denom[i];
        if i == 0 {
            data[..row].iter_mut().for_each(|v| *v *= inv);
        } else {
            let (prev, cur) = data.split_at_mut(i * row);
            let prev = &prev[(i - 1) * row..];
            for (v, &p) in cur[..row].iter_mut().zip(prev) {
                *v = (*v - t0.off * p) * inv;
            }
        }
    }
    for i in (0..n0 - 1).rev() {
        let cp = t0.cprime[i];
        let (cur, next) = data.split_at_mut((i + 1) * row);
        let cur = &mut cur[i * row..];
        for (v, &nx) in cur.iter_mut().zip(&next[..row]) {
            *v -= cp * nx;
        }
    }
    // axis 1: within each row, stride = channels
    let t1 = Thomas::new(n1);
    for r in data.chunks_exact_mut(row) {
        for c in 0..channels {
            r[c] *= t1.inv_denom[0];
            for j in 1..n1 {
                r[j * channels + c] = (r[j * channels + c] - t1.off * r[(j - 1) * channels + c]) * t1.inv_denom[j];
            }
            for j in (0..n1 - 1).rev() {
                let next = r[(j + 1) * channels + c];
                r[j * channels + c] -= t1.cprime[j] * next;
            }
        }
    }
}

/// Precomputed Thomas factorization of the tridiagonal interpolation matrix
/// with diagonal (7/8, 3/4, ..., 3/4, 7/8) and off-diagonal 1/8.
struct Thomas<T> {
    off: T,
    cprime: Vec<T>,
    inv_denom: Vec<T>,
}

impl<T: Real> Thomas<T> {
    fn new(n: usize) -> Self {
        let off = T::lit(0.125);
        let diag = |i: usize| if i == 0 || i + 1 == n { T::lit(0.875) } else { T::lit(0.75) };
        let mut cprime = vec![T::zero(); n];
        let mut inv_denom = vec![T::zero(); n];
        let mut prev = T::zero();
        for i in 0..n {
            let denom = diag(i) - off * prev;
            inv_denom[i] = T::one() / denom;
            cprime[i] = off * inv_denom[i];
            prev = cprime[i];
        }
        Self { off, cprime, inv_denom }
    }
}

#[inline]
fn mirror(k: isize, n: usize) -> usize {
    let n = n as isize;
    let m = if k < 0 {
        -k - 1
    } else if k >= n {
        2 * n - k - 1
    } else {
        k
    };
    m.clamp(0, n - 1) as usize
}

/// Tensor-product kernel at one sample position.
struct Kernel<T> {
    i0: [usize; 3],
    i1: [usize; 3],
    w0: [T; 3],
    w1: [T; 3],
    d0: [T; 3],
    d1: [T; 3],
}

impl<T: Real> Kernel<T> {
    fn at(g: &Geometry<T>, x: &[T]) -> Self {
        let (i0, w0, d0) = axis_kernel(g, 0, x[0]);
        let (i1, w1, d1) = axis_kernel(g, 1, x[1]);
        Self { i0, i1, w0, w1, d0, d1 }
    }
}

/// Indices, weights and derivative weights (per physical unit) along one axis.
#[inline]
fn axis_kernel<T: Real>(g: &Geometry<T>, axis: usize, x: T) -> ([usize; 3], [T; 3], [T; 3]) {
    let n = g.shape()[axis];
    let half = T::lit(0.5);
    let lo = -half;
    let hi = T::from_usize_lossy(n) - half;
    let t = g.continuous_index(axis, x);
    let clamped = !(t > lo && t < hi);
    let t = t.max(lo).min(hi);
    let k0 = (t + half).floor();
    let delta = t - k0;
    let k0 = k0.to_isize().unwrap_or(0);
    let a = half - delta;
    let b = half + delta;
    let w = [half * a * a, T::lit(0.75) - delta * delta, half * b * b];
    let d = if clamped {
        [T::zero(); 3]
    } else {
        let inv_h = T::one() / g.spacing()[axis];
        [-a * inv_h, -T::lit(2.0) * delta * inv_h, b * inv_h]
    };
    let idx = [mirror(k0 - 1, n), mirror(k0, n), mirror(k0 + 1, n)];
    (idx, w, d)
}

/// Interpolation weights of one deformation field against a source grid.
#[derive(Clone, Debug)]
pub struct WarpPlan<T> {
    source: Geometry<T>,
    output: Geometry<T>,
    idx: Vec<[u32; 6]>,
    weights: Vec<[T; 6]>,
    dweights: Vec<[T; 6]>,
}

impl<T: Real> WarpPlan<T> {
    pub fn new(source: &Geometry<T>, field: &DeformationField<T>) -> Result<Self> {
        check_spline_shape(source)?;
        if field.geometry().dim() != 2 {
            return Err(Error::ShapeMismatch("deformation field must be 2-D".into()));
        }
        let n = field.geometry().n_pixels();
        let mut idx = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut dweights = Vec::with_capacity(n);
        for x in field.positions().chunks_exact(2) {
            let k = Kernel::at(source, x);
            idx.push([k.i0[0] as u32, k.i0[1] as u32, k.i0[2] as u32, k.i1[0] as u32, k.i1[1] as u32, k.i1[2] as u32]);
            weights.push([k.w0[0], k.w0[1], k.w0[2], k.w1[0], k.w1[1], k.w1[2]]);
            dweights.push([k.d0[0], k.d0[1], k.d0[2], k.d1[0], k.d1[1], k.d1[2]]);
        }
        Ok(Self { source: source.clone(), output: field.geometry().clone(), idx, weights, dweights })
    }

    pub fn source(&self) -> &Geometry<T> {
        &self.source
    }

    pub fn output(&self) -> &Geometry<T> {
        &self.output
    }

    fn check_source(&self, u: &ImageGrid<T>) -> Result<()> {
        if !u.geometry().matches(&self.source) {
            return Err(Error::ShapeMismatch(format!(
                "image shape {:?} does not match warp source {:?}",
                u.shape(),
                self.source.shape()
            )));
        }
        Ok(())
    }

    /// Samples the spline with coefficients `coeffs` at every deformed position.
    fn synthesize(&self, coeffs: &[T], channels: usize) -> Vec<T> {
        let n1 = self.source.shape()[1];
        let mut out = vec![T::zero(); self.idx.len() * channels];
        for (p, (ix, w)) in self.idx.iter().zip(&self.weights).enumerate() {
            for c in 0..channels {
                let mut acc = T::zero();
                for a in 0..3 {
                    let row = ix[a] as usize * n1;
                    let mut racc = T::zero();
                    for b in 0..3 {
                        racc += w[3 + b] * coeffs[(row + ix[3 + b] as usize) * channels + c];
                    }
                    acc += w[a] * racc;
                }
                out[p * channels + c] = acc;
            }
        }
        out
    }

    /// `J(u; phi)`.
    pub fn warp(&self, u: &ImageGrid<T>) -> Result<ImageGrid<T>> {
        self.check_source(u)?;
        let mut coeffs = u.values().to_vec();
        prefilter(u.shape(), u.channels(), &mut coeffs);
        let values = self.synthesize(&coeffs, u.channels());
        ImageGrid::new(self.output.clone(), u.channels(), values)
    }

    /// Transpose of `u -> J(u; phi)` applied to an image `y` on the output grid.
    pub fn adjoint(&self, y: &ImageGrid<T>) -> Result<ImageGrid<T>> {
        if !y.geometry().matches(&self.output) {
            return Err(Error::ShapeMismatch(format!(
                "adjoint input shape {:?} does not match warp output {:?}",
                y.shape(),
                self.output.shape()
            )));
        }
        let channels = y.channels();
        let n1 = self.source.shape()[1];
        let mut acc = vec![T::zero(); self.source.n_pixels() * channels];
        for (p, (ix, w)) in self.idx.iter().zip(&self.weights).enumerate() {
            for c in 0..channels {
                let yv = y.values()[p * channels + c];
                if yv == T::zero() {
                    continue;
                }
                for a in 0..3 {
                    let row = ix[a] as usize * n1;
                    let wa = w[a] * yv;
                    for b in 0..3 {
                        acc[(row + ix[3 + b] as usize) * channels + c] += wa * w[3 + b];
                    }
                }
            }
        }
        prefilter(self.source.shape(), channels, &mut acc);
        ImageGrid::new(self.source.clone(), channels, acc)
    }

    /// Spatial gradient of the spline of `u` at every deformed position:
    /// `channels * 2` numbers per output pixel.
    pub fn dphi(&self, u: &ImageGrid<T>) -> Result<VectorField<T>> {
        self.check_source(u)?;
        let channels = u.channels();
        let mut coeffs = u.values().to_vec();
        prefilter(u.shape(), channels, &mut coeffs);
        let n1 = self.source.shape()[1];
        let mut out = vec![T::zero(); self.idx.len() * channels * 2];
        for (p, ((ix, w), dw)) in self.idx.iter().zip(&self.weights).zip(&self.dweights).enumerate() {
            for c in 0..channels {
                let mut g0 = T::zero();
                let mut g1 = T::zero();
                for a in 0..3 {
                    let row = ix[a] as usize * n1;
                    for b in 0..3 {
                        let v = coeffs[(row + ix[3 + b] as usize) * channels + c];
                        g0 += dw[a] * w[3 + b] * v;
                        g1 += w[a] * dw[3 + b] * v;
                    }
                }
                out[(p * channels + c) * 2] = g0;
                out[(p * channels + c) * 2 + 1] = g1;
            }
        }
        VectorField::new(self.output.clone(), channels, out)
    }
}

/// `J(u; phi)`: spline of `u` sampled at the positions of `phi`.
pub fn warp<T: Real>(u: &ImageGrid<T>, phi: &DeformationField<T>) -> Result<ImageGrid<T>> {
    WarpPlan::new(u.geometry(), phi)?.warp(u)
}

/// Derivative of `J(u; phi)` with respect to each `phi_i`.
pub fn warp_dphi<T: Real>(u: &ImageGrid<T>, phi: &DeformationField<T>) -> Result<VectorField<T>> {
    WarpPlan::new(u.geometry(), phi)?.dphi(u)
}

/// Transpose of `u -> J(u; phi)` for `u` on `source`.
pub fn warp_adjoint_u<T: Real>(
    phi: &DeformationField<T>,
    y: &ImageGrid<T>,
    source: &Geometry<T>,
) -> Result<ImageGrid<T>> {
    WarpPlan::new(source, phi)?.adjoint(y)
}
