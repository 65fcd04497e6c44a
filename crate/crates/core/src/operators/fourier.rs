//! Masked Fourier sampling of complex images.
//!
//! Frequencies are signed integer pairs defined against a reference grid
//! size `N`. On an `n`-pixel grid the operator is the orthonormal DFT scaled
//! by `sqrt(N / n)` per axis and multiplied by the half-pixel phase
//! `exp(-i pi k / n)`, which makes every discretization sample the same
//! continuous Fourier coefficients. At `n = N` it is unitary.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Geometry, ImageGrid};
use crate::scalar::Real;

/// Retained frequencies on a reference grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingMask {
    pub reference: [usize; 2],
    pub frequencies: Vec<[i64; 2]>,
}

fn freq_range(n: usize) -> (i64, i64) {
    let n = n as i64;
    (-(n / 2), (n - 1) / 2)
}

impl SamplingMask {
    /// `spokes` rays leaving DC at angles `2 pi k / spokes`, united with a
    /// centered `lowpass x lowpass` block.
    pub fn radial(n: usize, spokes: usize, lowpass: usize) -> Self {
        let (lo, hi) = freq_range(n);
        let mut freqs = vec![[0i64, 0i64]];
        let radius = n as f64 / 2.0;
        for s in 0..spokes {
            let angle = 2.0 * std::f64::consts::PI * s as f64 / spokes as f64;
            let (sin, cos) = angle.sin_cos();
            let steps = (2.0 * radius).ceil() as usize;
            for t in 0..=steps {
                let r = 0.5 * t as f64;
                let k = [(r * cos).round() as i64, (r * sin).round() as i64];
                if k.iter().all(|&v| v >= lo && v <= hi) {
                    freqs.push(k);
                }
            }
        }
        let l = lowpass as i64;
        for a in -(l / 2)..(l - l / 2) {
            for b in -(l / 2)..(l - l / 2) {
                if a >= lo && a <= hi && b >= lo && b <= hi {
                    freqs.push([a, b]);
                }
            }
        }
        freqs.sort_unstable();
        freqs.dedup();
        Self { reference: [n, n], frequencies: freqs }
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn retained_fraction(&self) -> f64 {
        self.frequencies.len() as f64 / (self.reference[0] * self.reference[1]) as f64
    }

    /// Dense 0/1 picture of the mask in centered (fftshift) layout.
    pub fn to_image(&self) -> ImageGrid<f64> {
        let [n0, n1] = self.reference;
        let mut v = vec![0.0; n0 * n1];
        for k in &self.frequencies {
            let i = (k[0] + (n0 / 2) as i64) as usize;
            let j = (k[1] + (n1 / 2) as i64) as usize;
            v[i * n1 + j] = 1.0;
        }
        ImageGrid::real(Geometry::domain(&[n0, n1]), v).expect("mask image")
    }
}

/// 2-D FFT plans for one grid shape.
#[derive(Clone)]
struct Fft2<T: Real> {
    shape: [usize; 2],
    fwd: [Arc<dyn Fft<T>>; 2],
    inv: [Arc<dyn Fft<T>>; 2],
}

impl<T: Real> Fft2<T> {
    fn new(shape: [usize; 2]) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            shape,
            fwd: [planner.plan_fft_forward(shape[0]), planner.plan_fft_forward(shape[1])],
            inv: [planner.plan_fft_inverse(shape[0]), planner.plan_fft_inverse(shape[1])],
        }
    }

    /// Unnormalized transform in place (rows, then columns).
    fn run(&self, data: &mut [Complex<T>], inverse: bool) {
        let [n0, n1] = self.shape;
        let plans = if inverse { &self.inv } else { &self.fwd };
        for row in data.chunks_exact_mut(n1) {
            plans[1].process(row);
        }
        let mut col = vec![Complex::new(T::zero(), T::zero()); n0];
        for j in 0..n1 {
            for i in 0..n0 {
                col[i] = data[i * n1 + j];
            }
            plans[0].process(&mut col);
            for i in 0..n0 {
                data[i * n1 + j] = col[i];
            }
        }
    }
}

/// Retained coefficient: position in the DFT array and its complex weight.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    index: usize,
    weight: Complex<T>,
}

#[derive(Clone)]
pub struct FourierMask<T: Real> {
    domain: Geometry<T>,
    mask: SamplingMask,
    taps: Vec<Tap<T>>,
    fft: Fft2<T>,
}

impl<T: Real> fmt::Debug for FourierMask<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierMask")
            .field("shape", &self.domain.shape())
            .field("reference", &self.mask.reference)
            .field("retained", &self.taps.len())
            .finish()
    }
}

impl<T: Real> FourierMask<T> {
    /// Operator on `domain` sampling every frequency of `mask`. Frequencies
    /// the grid does not resolve (outside `-n/2 <= k < n/2`) read as zero, so
    /// the data space is the same on every grid.
    pub fn new(domain: &Geometry<T>, mask: &SamplingMask) -> Result<Self> {
        if domain.dim() != 2 {
            return Err(Error::ShapeMismatch("Fourier sampling is 2-D".into()));
        }
        let n = [domain.shape()[0], domain.shape()[1]];
        let [r0, r1] = mask.reference;
        let gain = T::lit(((r0 * r1) as f64).sqrt() / (n[0] * n[1]) as f64);
        let (lo0, hi0) = freq_range(n[0]);
        let (lo1, hi1) = freq_range(n[1]);
        let taps = mask
            .frequencies
            .iter()
            .map(|k| {
                if k[0] < lo0 || k[0] > hi0 || k[1] < lo1 || k[1] > hi1 {
                    return Tap { index: 0, weight: Complex::new(T::zero(), T::zero()) };
                }
                let i = k[0].rem_euclid(n[0] as i64) as usize;
                let j = k[1].rem_euclid(n[1] as i64) as usize;
                let angle = -std::f64::consts::PI * (k[0] as f64 / n[0] as f64 + k[1] as f64 / n[1] as f64);
                let (s, c) = angle.sin_cos();
                Tap { index: i * n[1] + j, weight: Complex::new(T::lit(c), T::lit(s)) * gain }
            })
            .collect();
        Ok(Self { domain: domain.clone(), mask: mask.clone(), taps, fft: Fft2::new(n) })
    }

    pub fn domain(&self) -> &Geometry<T> {
        &self.domain
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    /// Number of mask frequencies this grid resolves.
    pub fn resolved(&self) -> usize {
        self.taps.iter().filter(|t| t.weight.re != T::zero() || t.weight.im != T::zero()).count()
    }

    pub fn range_geometry(&self) -> Geometry<T> {
        Geometry::new(vec![self.taps.len().max(1)], vec![T::zero()], vec![T::one()]).expect("range")
    }

    pub fn n_data(&self) -> usize {
        self.taps.len()
    }

    /// Complex values (interleaved) of the retained coefficients.
    pub fn forward(&self, u: &[T]) -> Vec<T> {
        let mut buf: Vec<Complex<T>> = u.chunks_exact(2).map(|c| Complex::new(c[0], c[1])).collect();
        self.fft.run(&mut buf, false);
        let mut out = Vec::with_capacity(2 * self.taps.len());
        for tap in &self.taps {
            let z = buf[tap.index] * tap.weight;
            out.push(z.re);
            out.push(z.im);
        }
        out
    }

    pub fn backward(&self, y: &[T]) -> Vec<T> {
        let n = self.domain.n_pixels();
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for (tap, c) in self.taps.iter().zip(y.chunks_exact(2)) {
            buf[tap.index] += Complex::new(c[0], c[1]) * tap.weight.conj();
        }
        self.fft.run(&mut buf, true);
        let mut out = Vec::with_capacity(2 * n);
        for z in buf {
            out.push(z.re);
            out.push(z.im);
        }
        out
    }
}
