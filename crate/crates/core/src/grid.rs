//! Image container on a regular grid and the forward-difference calculus on it.
//!
//! Pixel `k` along axis `a` sits at `origin[a] + (k + 1/2) * spacing[a]`. The
//! default geometry covers `[-1, 1]^d`. Complex images are stored as two
//! interleaved real channels (`re, im, re, im, ...`).
//!
//! Differences are taken in pixel units (no division by the spacing), with
//! the last difference along each axis set to zero.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Shape, origin and spacing of a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry<T> {
    shape: Vec<usize>,
    origin: Vec<T>,
    spacing: Vec<T>,
}

impl<T: Real> Geometry<T> {
    pub fn new(shape: Vec<usize>, origin: Vec<T>, spacing: Vec<T>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::ShapeMismatch("grid needs at least one axis".into()));
        }
        if shape.len() != origin.len() || shape.len() != spacing.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape has {} axes but origin/spacing have {}/{}",
                shape.len(),
                origin.len(),
                spacing.len()
            )));
        }
        if let Some(a) = shape.iter().position(|&n| n == 0) {
            return Err(Error::ShapeMismatch(format!("axis {a} has zero length")));
        }
        if spacing.iter().any(|&h| !(h > T::zero()) || !h.is_finite()) {
            return Err(Error::ParamError("grid spacing must be positive and finite".into()));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::ParamError("grid origin must be finite".into()));
        }
        Ok(Self { shape, origin, spacing })
    }

    /// Grid of the given shape covering `[-1, 1]^d`.
    pub fn domain(shape: &[usize]) -> Self {
        let two = T::lit(2.0);
        Self {
            shape: shape.to_vec(),
            origin: vec![-T::one(); shape.len()],
            spacing: shape.iter().map(|&n| two / T::from_usize_lossy(n)).collect(),
        }
    }

    /// Square `n x n` grid covering `[-1, 1]^2`.
    pub fn square(n: usize) -> Self {
        Self::domain(&[n, n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn origin(&self) -> &[T] {
        &self.origin
    }

    pub fn spacing(&self) -> &[T] {
        &self.spacing
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn n_pixels(&self) -> usize {
        self.shape.iter().product()
    }

    /// Physical coordinate of pixel `index` along `axis`.
    #[inline]
    pub fn coord(&self, axis: usize, index: usize) -> T {
        self.origin[axis] + (T::from_usize_lossy(index) + T::lit(0.5)) * self.spacing[axis]
    }

    /// Continuous pixel index of physical coordinate `x` along `axis`; pixel
    /// centers map to integers.
    #[inline]
    pub fn continuous_index(&self, axis: usize, x: T) -> T {
        (x - self.origin[axis]) / self.spacing[axis] - T::lit(0.5)
    }

    /// Coordinates of every pixel center along one axis.
    pub fn axis_coords(&self, axis: usize) -> Vec<T> {
        (0..self.shape[axis]).map(|k| self.coord(axis, k)).collect()
    }

    /// Pixel-major list of pixel-center positions (`n_pixels * dim` values).
    pub fn centers(&self) -> Vec<T> {
        let d = self.dim();
        let n = self.n_pixels();
        let mut out = vec![T::zero(); n * d];
        let mut idx = vec![0usize; d];
        for p in 0..n {
            for a in 0..d {
                out[p * d + a] = self.coord(a, idx[a]);
            }
            increment(&mut idx, &self.shape);
        }
        out
    }

    /// Lower and upper physical bounds of the grid along `axis`.
    pub fn extent(&self, axis: usize) -> (T, T) {
        let lo = self.origin[axis];
        (lo, lo + T::from_usize_lossy(self.shape[axis]) * self.spacing[axis])
    }

    /// Same grid geometry, with tolerance on the floating point metadata.
    pub fn matches(&self, other: &Self) -> bool {
        let tol = T::lit(1e-9);
        self.shape == other.shape
            && self.origin.iter().zip(&other.origin).all(|(&a, &b)| (a - b).abs() <= tol)
            && self.spacing.iter().zip(&other.spacing).all(|(&a, &b)| (a - b).abs() <= tol)
    }

    pub fn cast<U: Real>(&self) -> Geometry<U> {
        Geometry {
            shape: self.shape.clone(),
            origin: self.origin.iter().map(|&x| U::lit(x.to_f64_lossy())).collect(),
            spacing: self.spacing.iter().map(|&x| U::lit(x.to_f64_lossy())).collect(),
        }
    }
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < shape[a] {
            return;
        }
        idx[a] = 0;
    }
}

/// Pixel values on a regular grid; one real channel or two (complex).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid<T> {
    geometry: Geometry<T>,
    channels: usize,
    values: Vec<T>,
}

impl<T: Real> ImageGrid<T> {
    pub fn new(geometry: Geometry<T>, channels: usize, values: Vec<T>) -> Result<Self> {
        if channels != 1 && channels != 2 {
            return Err(Error::FieldMismatch(format!("images have 1 (real) or 2 (complex) channels, got {channels}")));
        }
        let expected = channels * geometry.n_pixels();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!("expected {expected} values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError("image values must be finite".into()));
        }
        Ok(Self { geometry, channels, values })
    }

    pub fn zeros(geometry: Geometry<T>, channels: usize) -> Self {
        let n = geometry.n_pixels() * channels;
        Self { geometry, channels, values: vec![T::zero(); n] }
    }

    pub fn constant(geometry: Geometry<T>, value: T) -> Self {
        let n = geometry.n_pixels();
        Self { geometry, channels: 1, values: vec![value; n] }
    }

    /// Real image sampled from `f` at every pixel center.
    pub fn from_fn(geometry: Geometry<T>, mut f: impl FnMut(&[T]) -> T) -> Self {
        let d = geometry.dim();
        let centers = geometry.centers();
        let values = centers.chunks_exact(d).map(&mut f).collect();
        Self { geometry, channels: 1, values }
    }

    /// Real image on `geometry` from row-major values.
    pub fn real(geometry: Geometry<T>, values: Vec<T>) -> Result<Self> {
        Self::new(geometry, 1, values)
    }

    /// Complex image with the given real part and zero imaginary part.
    pub fn complex_from_real(re: &Self) -> Self {
        assert_eq!(re.channels, 1);
        let mut values = Vec::with_capacity(2 * re.values.len());
        for &x in &re.values {
            values.push(x);
            values.push(T::zero());
        }
        Self { geometry: re.geometry.clone(), channels: 2, values }
    }

    /// Same geometry and channel layout with new values.
    pub fn with_values(&self, values: Vec<T>) -> Self {
        assert_eq!(values.len(), self.values.len(), "value count must match");
        Self { geometry: self.geometry.clone(), channels: self.channels, values }
    }

    pub fn zeros_like(&self) -> Self {
        self.with_values(vec![T::zero(); self.values.len()])
    }

    pub fn geometry(&self) -> &Geometry<T> {
        &self.geometry
    }

    pub fn shape(&self) -> &[usize] {
        self.geometry.shape()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_complex(&self) -> bool {
        self.channels == 2
    }

    pub fn n_pixels(&self) -> usize {
        self.geometry.n_pixels()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Per-pixel modulus; real images map to their absolute value.
    pub fn magnitude(&self) -> Self {
        let values = if self.channels == 2 {
            self.values.chunks_exact(2).map(|c| c[0].hypot(c[1])).collect()
        } else {
            self.values.iter().map(|v| v.abs()).collect()
        };
        Self { geometry: self.geometry.clone(), channels: 1, values }
    }

    /// Real images unchanged, complex images by modulus.
    pub fn to_real(&self) -> Self {
        if self.channels == 1 {
            self.clone()
        } else {
            self.magnitude()
        }
    }

    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::from_usize_lossy(self.values.len())
    }

    pub fn min_max(&self) -> (T, T) {
        self.values.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn cast<U: Real>(&self) -> ImageGrid<U> {
        ImageGrid {
            geometry: self.geometry.cast(),
            channels: self.channels,
            values: self.values.iter().map(|&x| U::lit(x.to_f64_lossy())).collect(),
        }
    }
}

/// Per-pixel stack of `channels * dim` gradient components.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<T> {
    geometry: Geometry<T>,
    channels: usize,
    values: Vec<T>,
}

impl<T: Real> VectorField<T> {
    pub fn new(geometry: Geometry<T>, channels: usize, values: Vec<T>) -> Result<Self> {
        let expected = channels * geometry.dim() * geometry.n_pixels();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!("vector field expects {expected} values, got {}", values.len())));
        }
        Ok(Self { geometry, channels, values })
    }

    pub fn zeros(geometry: Geometry<T>, channels: usize) -> Self {
        let n = channels * geometry.dim() * geometry.n_pixels();
        Self { geometry, channels, values: vec![T::zero(); n] }
    }

    pub fn geometry(&self) -> &Geometry<T> {
        &self.geometry
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    /// Number of components stored per pixel.
    pub fn stride(&self) -> usize {
        self.channels * self.geometry.dim()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Components of pixel `p`.
    pub fn at(&self, p: usize) -> &[T] {
        let s = self.stride();
        &self.values[p * s..(p + 1) * s]
    }

    /// Largest per-pixel Euclidean norm.
    pub fn max_norm(&self) -> T {
        self.values
            .chunks_exact(self.stride())
            .map(|v| v.iter().map(|&x| x * x).sum::<T>().sqrt())
            .fold(T::zero(), T::max)
    }
}

/// Forward differences of `u` (zero last difference per axis).
pub fn gradient<T: Real>(u: &ImageGrid<T>) -> VectorField<T> {
    let mut out = vec![T::zero(); u.values.len() * u.geometry.dim()];
    gradient_into(u.shape(), u.channels, &u.values, &mut out);
    VectorField { geometry: u.geometry.clone(), channels: u.channels, values: out }
}

/// Negative adjoint of [`gradient`].
pub fn divergence<T: Real>(w: &VectorField<T>) -> ImageGrid<T> {
    let mut out = vec![T::zero(); w.channels * w.geometry.n_pixels()];
    divergence_into(w.geometry.shape(), w.channels, &w.values, &mut out);
    ImageGrid { geometry: w.geometry.clone(), channels: w.channels, values: out }
}

/// Slice-level gradient kernel; `out` holds `channels * dim` entries per pixel.
pub fn gradient_into<T: Real>(shape: &[usize], channels: usize, u: &[T], out: &mut [T]) {
    let d = shape.len();
    let n: usize = shape.iter().product();
    debug_assert_eq!(u.len(), n * channels);
    debug_assert_eq!(out.len(), n * channels * d);
    out.iter_mut().for_each(|x| *x = T::zero());
    let mut stride = 1;
    for a in (0..d).rev() {
        let len = shape[a];
        let outer = n / (len * stride);
        for o in 0..outer {
            for i in 0..len.saturating_sub(1) {
                let base = (o * len + i) * stride;
                for j in 0..stride {
                    let p = base + j;
                    let q = p + stride;
                    for c in 0..channels {
                        out[(p * channels + c) * d + a] = u[q * channels + c] - u[p * channels + c];
                    }
                }
            }
        }
        stride *= len;
    }
}

/// Slice-level divergence kernel, the exact negative transpose of [`gradient_into`].
pub fn divergence_into<T: Real>(shape: &[usize], channels: usize, w: &[T], out: &mut [T]) {
    let d = shape.len();
    let n: usize = shape.iter().product();
    debug_assert_eq!(w.len(), n * channels * d);
    debug_assert_eq!(out.len(), n * channels);
    out.iter_mut().for_each(|x| *x = T::zero());
    let mut stride = 1;
    for a in (0..d).rev() {
        let len = shape[a];
        let outer = n / (len * stride);
        for o in 0..outer {
            for i in 0..len {
                let base = (o * len + i) * stride;
                for j in 0..stride {
                    let p = base + j;
                    for c in 0..channels {
                        let mut acc = T::zero();
                        if i + 1 < len {
                            acc += w[(p * channels + c) * d + a];
                        }
                        if i > 0 {
                            acc -= w[((p - stride) * channels + c) * d + a];
                        }
                        out[p * channels + c] += acc;
                    }
                }
            }
        }
        stride *= len;
    }
}
