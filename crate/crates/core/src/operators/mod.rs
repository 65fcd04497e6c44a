//! Linear forward models with exact adjoints.

mod fourier;
mod radon;
mod resample;

pub use fourier::{FourierMask, SamplingMask};
pub use radon::Radon;
pub use resample::AreaResample;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Geometry, ImageGrid};
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub enum OperatorKind<T: Real> {
    Identity,
    FourierMask(FourierMask<T>),
    Radon(Radon<T>),
    Downsample(AreaResample<T>),
}

/// `A = scale * K` for one of the supported kernels `K`.
#[derive(Clone, Debug)]
pub struct LinearOperator<T: Real> {
    domain: Geometry<T>,
    range: Geometry<T>,
    channels: usize,
    kind: OperatorKind<T>,
    scale: T,
}

impl<T: Real> LinearOperator<T> {
    pub fn identity(domain: &Geometry<T>, channels: usize) -> Result<Self> {
        if channels != 1 && channels != 2 {
            return Err(Error::ShapeMismatch(format!("{channels} channels")));
        }
        Ok(Self {
            domain: domain.clone(),
            range: domain.clone(),
            channels,
            kind: OperatorKind::Identity,
            scale: T::one(),
        })
    }

    pub fn fourier(domain: &Geometry<T>, mask: &SamplingMask) -> Result<Self> {
        let op = FourierMask::new(domain, mask)?;
        if op.resolved() == 0 {
            return Err(Error::ParamError("sampling mask retains no frequency on this grid".into()));
        }
        Ok(Self {
            domain: domain.clone(),
            range: op.range_geometry(),
            channels: 2,
            kind: OperatorKind::FourierMask(op),
            scale: T::one(),
        })
    }

    pub fn radon(domain: &Geometry<T>, n_angles: usize, bins: usize, half_width: T) -> Result<Self> {
        let op = Radon::new(domain, n_angles, bins, half_width)?;
        Ok(Self {
            domain: domain.clone(),
            range: op.range_geometry(),
            channels: 1,
            kind: OperatorKind::Radon(op),
            scale: T::one(),
        })
    }

    /// Area average onto `data`, a grid covering the same box as `domain`.
    pub fn resample(domain: &Geometry<T>, data: &Geometry<T>) -> Result<Self> {
        let op = AreaResample::new(domain, data)?;
        Ok(Self {
            domain: domain.clone(),
            range: data.clone(),
            channels: 1,
            kind: OperatorKind::Downsample(op),
            scale: T::one(),
        })
    }

    /// Block average over `factor x factor` cells.
    pub fn downsample(domain: &Geometry<T>, factor: usize) -> Result<Self> {
        if factor == 0 || domain.dim() != 2 || domain.shape().iter().any(|&n| n % factor != 0) {
            return Err(Error::ShapeMismatch(format!("shape {:?} is not divisible by {factor}", domain.shape())));
        }
        let f = T::from_usize_lossy(factor);
        let data = Geometry::new(
            domain.shape().iter().map(|&n| n / factor).collect(),
            domain.origin().to_vec(),
            domain.spacing().iter().map(|&h| h * f).collect(),
        )?;
        Self::resample(domain, &data)
    }

    pub fn with_scale(mut self, scale: T) -> Self {
        self.scale = scale;
        self
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn kind(&self) -> &OperatorKind<T> {
        &self.kind
    }

    pub fn domain(&self) -> &Geometry<T> {
        &self.domain
    }

    pub fn range(&self) -> &Geometry<T> {
        &self.range
    }

    /// Channels of both the image and the data (2 = complex).
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data_len(&self) -> usize {
        self.range.n_pixels() * self.channels
    }

    pub fn zero_data(&self) -> ImageGrid<T> {
        ImageGrid::zeros(self.range.clone(), self.channels)
    }

    fn check(&self, x: &ImageGrid<T>, expect: &Geometry<T>, what: &str) -> Result<()> {
        if x.shape() != expect.shape() {
            return Err(Error::ShapeMismatch(format!("{what} shape {:?}, expected {:?}", x.shape(), expect.shape())));
        }
        if x.channels() != self.channels {
            return Err(Error::FieldMismatch(format!(
                "{what} has {} channel(s), operator expects {}",
                x.channels(),
                self.channels
            )));
        }
        Ok(())
    }

    pub fn apply(&self, u: &ImageGrid<T>) -> Result<ImageGrid<T>> {
        self.check(u, &self.domain, "image")?;
        ImageGrid::new(self.range.clone(), self.channels, self.apply_raw(u.values()))
    }

    pub fn adjoint(&self, y: &ImageGrid<T>) -> Result<ImageGrid<T>> {
        self.check(y, &self.range, "data")?;
        ImageGrid::new(self.domain.clone(), self.channels, self.adjoint_raw(y.values()))
    }

    /// Unchecked forward on interleaved values.
    pub fn apply_raw(&self, u: &[T]) -> Vec<T> {
        let mut out = match &self.kind {
            OperatorKind::Identity => u.to_vec(),
            OperatorKind::FourierMask(op) => op.forward(u),
            OperatorKind::Radon(op) => op.forward(u),
            OperatorKind::Downsample(op) => op.forward(u, self.channels),
        };
        self.rescale(&mut out);
        out
    }

    pub fn adjoint_raw(&self, y: &[T]) -> Vec<T> {
        let mut out = match &self.kind {
            OperatorKind::Identity => y.to_vec(),
            OperatorKind::FourierMask(op) => op.backward(y),
            OperatorKind::Radon(op) => op.backward(y),
            OperatorKind::Downsample(op) => op.backward(y, self.channels),
        };
        self.rescale(&mut out);
        out
    }

    fn rescale(&self, v: &mut [T]) {
        if self.scale != T::one() {
            v.iter_mut().for_each(|x| *x *= self.scale);
        }
    }
}

fn default_half_width() -> f64 {
    std::f64::consts::SQRT_2
}

/// Resolution-independent operator description. [`OperatorSpec::build`]
/// instantiates it on any image grid over the same physical domain, so the
/// same data can be fitted at every scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Identity {
        #[serde(default)]
        complex: bool,
    },
    /// Radial spokes plus a centered low-pass block on a `size x size`
    /// reference frequency grid.
    FourierMask { size: usize, spokes: usize, lowpass: usize },
    Radon {
        angles: usize,
        bins: usize,
        #[serde(default = "default_half_width")]
        half_width: f64,
    },
    /// Area average onto a fixed data grid of shape `data_shape`.
    Downsample { data_shape: [usize; 2] },
}

impl OperatorSpec {
    pub fn is_complex(&self) -> bool {
        matches!(self, Self::FourierMask { .. } | Self::Identity { complex: true })
    }

    /// Operator on `domain`, multiplied by `scale`.
    pub fn build<T: Real>(&self, domain: &Geometry<T>, scale: T) -> Result<LinearOperator<T>> {
        let op = match self {
            Self::Identity { complex } => LinearOperator::identity(domain, if *complex { 2 } else { 1 }),
            Self::FourierMask { size, spokes, lowpass } => {
                LinearOperator::fourier(domain, &SamplingMask::radial(*size, *spokes, *lowpass))
            }
            Self::Radon { angles, bins, half_width } => {
                LinearOperator::radon(domain, *angles, *bins, T::lit(*half_width))
            }
            Self::Downsample { data_shape } => {
                let (lo0, hi0) = domain.extent(0);
                let (lo1, hi1) = domain.extent(1);
                let data = Geometry::new(
                    data_shape.to_vec(),
                    vec![lo0, lo1],
                    vec![
                        (hi0 - lo0) / T::from_usize_lossy(data_shape[0]),
                        (hi1 - lo1) / T::from_usize_lossy(data_shape[1]),
                    ],
                )?;
                LinearOperator::resample(domain, &data)
            }
        }?;
        Ok(op.with_scale(scale))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn adjoint_gap(op: &LinearOperator<f64>, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random(op.domain().n_pixels() * op.channels(), &mut rng);
        let y = random(op.data_len(), &mut rng);
        let au = op.apply_raw(&u);
        let aty = op.adjoint_raw(&y);
        let lhs: f64 = au.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&aty).map(|(a, b)| a * b).sum();
        (lhs - rhs).abs() / lhs.abs().max(rhs.abs())
    }

    #[test]
    fn adjoint_identity_every_kind() {
        let g = Geometry::<f64>::domain(&[48, 64]);
        let ops = [
            LinearOperator::identity(&g, 1).unwrap(),
            LinearOperator::identity(&g, 2).unwrap(),
            LinearOperator::fourier(&g, &SamplingMask::radial(64, 15, 10)).unwrap(),
            LinearOperator::radon(&g, 30, 40, std::f64::consts::SQRT_2).unwrap().with_scale(3.0),
            LinearOperator::downsample(&g, 4).unwrap(),
            OperatorSpec::Downsample { data_shape: [20, 30] }.build(&g, 1.0).unwrap(),
            OperatorSpec::Downsample { data_shape: [96, 128] }.build(&g, 1.0).unwrap(),
        ];
        for (i, op) in ops.iter().enumerate() {
            let gap = adjoint_gap(op, i as u64);
            assert!(gap <= 1e-10, "operator {i}: {gap:e}");
        }
    }

    #[test]
    fn identity_is_copy() {
        let g = Geometry::<f64>::square(8);
        let op = LinearOperator::identity(&g, 1).unwrap();
        let u = ImageGrid::from_fn(g, |x| x[0] - 2.0 * x[1]);
        assert_eq!(op.apply(&u).unwrap().values(), u.values());
        assert_eq!(op.adjoint(&u).unwrap().values(), u.values());
    }

    #[test]
    fn radon_disk_center_profile() {
        let rho = 0.5;
        let g = Geometry::<f64>::square(128);
        // exact pixel-coverage of the disk by supersampling
        let u = ImageGrid::from_fn(g.clone(), |x| {
            let h = 2.0 / 128.0;
            let mut hits = 0;
            for a in 0..8 {
                for b in 0..8 {
                    let p = x[0] + h * ((a as f64 + 0.5) / 8.0 - 0.5);
                    let q = x[1] + h * ((b as f64 + 0.5) / 8.0 - 0.5);
                    hits += (p * p + q * q <= rho * rho) as usize;
                }
            }
            hits as f64 / 64.0
        });
        // an odd bin count puts a bin center at s = 0
        let op = LinearOperator::radon(&g, 12, 191, std::f64::consts::SQRT_2).unwrap();
        let sino = op.apply(&u).unwrap();
        let expect = 2.0 * rho;
        for a in 0..12 {
            let v = sino.values()[a * 191 + 95];
            assert!((v - expect).abs() / expect <= 0.02, "angle {a}: {v}");
        }
    }

    #[test]
    fn radon_is_nonnegative() {
        let g = Geometry::<f64>::square(32);
        let op = LinearOperator::radon(&g, 20, 50, std::f64::consts::SQRT_2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..g.n_pixels()).map(|_| rng.random_range(0.0..1.0)).collect();
        assert!(op.apply_raw(&u).iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn fourier_constant_has_only_dc() {
        let n = 32;
        let c = 1.7;
        let g = Geometry::<f64>::square(n);
        let op = LinearOperator::fourier(&g, &SamplingMask::radial(n, 15, 10)).unwrap();
        let u = ImageGrid::complex_from_real(&ImageGrid::constant(g, c));
        let y = op.apply(&u).unwrap();
        let OperatorKind::FourierMask(f) = op.kind() else { unreachable!() };
        for (k, z) in f.mask().frequencies.iter().zip(y.values().chunks(2)) {
            let expect = if *k == [0, 0] { c * n as f64 } else { 0.0 };
            assert!((z[0] - expect).abs() < 1e-10 && z[1].abs() < 1e-10, "{k:?}: {z:?}");
        }
    }

    #[test]
    fn fourier_is_unitary_on_reference_grid() {
        let n = 16;
        let all: Vec<[i64; 2]> = (-8..8).flat_map(|a| (-8..8).map(move |b| [a, b])).collect();
        let mask = SamplingMask { reference: [n, n], frequencies: all };
        let g = Geometry::<f64>::square(n);
        let op = LinearOperator::fourier(&g, &mask).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random(2 * n * n, &mut rng);
        let back = op.adjoint_raw(&op.apply_raw(&u));
        let err = u.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn fourier_is_consistent_across_resolutions() {
        // a piecewise-constant image refined by replication keeps its
        // low-frequency coefficients up to the pixel transfer function
        let mask = SamplingMask::radial(64, 15, 10);
        let coarse = Geometry::<f64>::square(16);
        let fine = Geometry::<f64>::square(64);
        let u = ImageGrid::from_fn(coarse.clone(), |x| (3.0 * x[0]).sin() + x[1]);
        let up = LinearOperator::resample(&coarse, &fine).unwrap().apply(&u).unwrap();
        let a = LinearOperator::fourier(&coarse, &mask).unwrap();
        let b = LinearOperator::fourier(&fine, &mask).unwrap();
        let ya = a.apply(&ImageGrid::complex_from_real(&u)).unwrap();
        let yb = b.apply(&ImageGrid::complex_from_real(&up)).unwrap();
        let OperatorKind::FourierMask(fa) = a.kind() else { unreachable!() };
        let sinc = |x: f64| if x == 0.0 { 1.0 } else { x.sin() / x };
        assert_eq!(ya.values().len(), yb.values().len());
        for (ka, (za, zb)) in fa.mask().frequencies.iter().zip(ya.values().chunks(2).zip(yb.values().chunks(2))) {
            if ka.iter().any(|&k| !(-8..8).contains(&k)) {
                // not resolved on the coarse grid
                assert_eq!(za, [0.0, 0.0]);
                continue;
            }
            // ratio of fine/coarse pixel transfer functions
            let t: f64 = ka
                .iter()
                .map(|&k| {
                    let w = std::f64::consts::PI * k as f64;
                    sinc(w / 16.0) / sinc(w / 64.0)
                })
                .product();
            // replication is exact, so the coarse DFT times the transfer
            // ratio reproduces the fine one
            let diff = ((za[0] * t - zb[0]).powi(2) + (za[1] * t - zb[1]).powi(2)).sqrt();
            assert!(diff < 1e-9 * (1.0 + zb[0].abs() + zb[1].abs()), "{ka:?}: {za:?} {zb:?} {t}");
        }
    }

    #[test]
    fn default_mask_fraction() {
        let mask = SamplingMask::radial(256, 15, 10);
        let f = mask.retained_fraction();
        assert!((0.02..=0.05).contains(&f), "{f}");
        assert!(mask.frequencies.contains(&[0, 0]));
        let mut sorted = mask.frequencies.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), mask.len());
    }

    #[test]
    fn downsample_adjoint_of_one_hot() {
        let g = Geometry::<f64>::square(16);
        let op = LinearOperator::downsample(&g, 4).unwrap();
        let mut y = op.zero_data();
        y.values_mut()[4 + 2] = 1.0; // data pixel (1, 2)
        let back = op.adjoint(&y).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let inside = (4..8).contains(&i) && (8..12).contains(&j);
                let expect = if inside { 1.0 / 16.0 } else { 0.0 };
                assert!((back.values()[i * 16 + j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let g = Geometry::<f64>::square(8);
        let op = LinearOperator::fourier(&g, &SamplingMask::radial(8, 15, 4)).unwrap();
        let real = ImageGrid::constant(g.clone(), 1.0);
        assert!(matches!(op.apply(&real), Err(Error::FieldMismatch(_))));
        let radon = LinearOperator::radon(&g, 4, 4, 1.5).unwrap();
        assert!(matches!(radon.apply(&ImageGrid::complex_from_real(&real)), Err(Error::FieldMismatch(_))));
        let wrong = ImageGrid::constant(Geometry::square(4), 1.0);
        assert!(matches!(radon.apply(&wrong), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = OperatorSpec::Radon { angles: 10, bins: 12, half_width: 1.5 };
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<OperatorSpec>(&s).unwrap(), spec);
        assert!(serde_json::from_str::<OperatorSpec>(r#"{"kind":"radon","angles":1,"bins":2,"typo":1}"#).is_err());
    }
}
