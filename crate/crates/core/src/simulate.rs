//! Synthetic phantoms, ground-truth deformations and noisy measurements.
//!
//! The ground truth `u_gt` is aligned with the side information `v`; the
//! measurements are generated from `u_gt o phi_gt`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Geometry, ImageGrid};
use crate::operators::OperatorSpec;
use crate::warp::{warp, AffineParams, DeformationField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    /// Nested ellipses.
    Brain,
    /// Blocks, roads and a pond.
    Urban,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    /// Center, semi-axes, rotation.
    Ellipse([f64; 2], [f64; 2], f64),
    /// Center, half-widths, rotation.
    Rect([f64; 2], [f64; 2], f64),
}

impl Shape {
    fn contains(&self, x: [f64; 2]) -> bool {
        let (c, a, t, round) = match *self {
            Shape::Ellipse(c, a, t) => (c, a, t, true),
            Shape::Rect(c, a, t) => (c, a, t, false),
        };
        let (s, co) = t.sin_cos();
        let d = [x[0] - c[0], x[1] - c[1]];
        let p = [(co * d[0] + s * d[1]) / a[0], (-s * d[0] + co * d[1]) / a[1]];
        if round {
            p[0] * p[0] + p[1] * p[1] <= 1.0
        } else {
            p[0].abs() <= 1.0 && p[1].abs() <= 1.0
        }
    }
}

/// One painted region: `u` value (`None` keeps what lies below, making the
/// region visible in `v` only) and the index of the enclosing region.
struct Region {
    shape: Shape,
    u: Option<f64>,
    parent: Option<usize>,
}

fn regions(kind: PhantomKind) -> Vec<Region> {
    use Shape::*;
    let r = |shape, u, parent| Region { shape, u: Some(u), parent };
    match kind {
        PhantomKind::Brain => vec![
            r(Ellipse([0.0, 0.0], [0.60, 0.72], 0.0), 0.25, None),
            r(Ellipse([0.0, -0.01], [0.53, 0.65], 0.0), 0.55, Some(0)),
            r(Ellipse([-0.05, -0.17], [0.09, 0.22], 0.35), 0.9, Some(1)),
            r(Ellipse([-0.05, 0.17], [0.09, 0.22], -0.35), 0.9, Some(1)),
            r(Ellipse([0.33, 0.0], [0.15, 0.07], 0.0), 0.35, Some(1)),
            r(Ellipse([-0.4, 0.28], [0.08, 0.08], 0.0), 1.0, Some(1)),
            r(Ellipse([-0.38, -0.25], [0.06, 0.09], 0.5), 0.75, Some(1)),
            r(Ellipse([0.22, 0.32], [0.07, 0.05], 0.0), 0.7, Some(1)),
            Region { shape: Ellipse([0.28, -0.34], [0.08, 0.08], 0.0), u: None, parent: Some(1) },
        ],
        PhantomKind::Urban => vec![
            r(Rect([0.0, 0.0], [0.7, 0.7], 0.0), 0.3, None),
            r(Rect([-0.35, -0.35], [0.2, 0.18], 0.1), 0.8, Some(0)),
            r(Rect([-0.35, 0.3], [0.16, 0.24], -0.05), 0.6, Some(0)),
            r(Rect([0.3, -0.3], [0.22, 0.14], 0.0), 1.0, Some(0)),
            r(Rect([0.0, 0.0], [0.04, 0.68], 0.0), 0.1, Some(0)),
            r(Rect([0.0, 0.0], [0.68, 0.04], 0.0), 0.1, Some(0)),
            r(Ellipse([0.35, 0.35], [0.18, 0.14], 0.3), 0.5, Some(0)),
            r(Rect([0.36, 0.34], [0.06, 0.05], 0.0), 0.9, Some(6)),
            Region { shape: Rect([-0.32, -0.34], [0.06, 0.05], 0.0), u: None, parent: Some(1) },
        ],
    }
}

/// Piecewise-constant ground truth `u_gt` in `[0, 1]` and side information
/// `v` with the same edges (plus one extra structure) but independently
/// drawn contrasts. Pixels are 4 x 4 supersampled.
pub fn make_phantom(kind: PhantomKind, n: usize, seed: u64) -> Result<(ImageGrid<f64>, ImageGrid<f64>)> {
    if n < 32 {
        return Err(Error::ParamError(format!("phantom size {n} is below 32")));
    }
    let regions = regions(kind);
    // v contrasts: independent draws that differ from the enclosing region
    // by at least 0.3, so every u edge remains an edge in v
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v_vals: Vec<f64> = Vec::with_capacity(regions.len());
    for reg in &regions {
        let outer = reg.parent.map_or(0.0, |p| v_vals[p]);
        let val = loop {
            let c: f64 = rng.random_range(0.1..1.0);
            if (c - outer).abs() >= 0.3 {
                break c;
            }
        };
        v_vals.push(val);
    }
    let sub = 4;
    let g = Geometry::square(n);
    let h = g.spacing()[0];
    let (mut u, mut v) = (vec![0.0; n * n], vec![0.0; n * n]);
    for i in 0..n {
        for j in 0..n {
            let (mut su, mut sv) = (0.0, 0.0);
            for a in 0..sub {
                for b in 0..sub {
                    let x = [
                        g.coord(0, i) + h * ((a as f64 + 0.5) / sub as f64 - 0.5),
                        g.coord(1, j) + h * ((b as f64 + 0.5) / sub as f64 - 0.5),
                    ];
                    let (mut pu, mut pv) = (0.0, 0.0);
                    for (reg, &vv) in regions.iter().zip(&v_vals) {
                        if reg.shape.contains(x) {
                            if let Some(val) = reg.u {
                                pu = val;
                            }
                            pv = vv;
                        }
                    }
                    su += pu;
                    sv += pv;
                }
            }
            let w = (sub * sub) as f64;
            u[i * n + j] = su / w;
            v[i * n + j] = sv / w;
        }
    }
    Ok((ImageGrid::real(g.clone(), u)?, ImageGrid::real(g, v)?))
}

fn rigid_b_default_pet() -> [f64; 2] {
    [0.02, 0.08]
}

/// Ground-truth deformation between side information and data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DeformationSpec {
    Identity,
    /// `x -> R_theta x + b`.
    Rigid {
        #[serde(default = "default_theta")]
        theta: f64,
        #[serde(default = "rigid_b_default_pet")]
        b: [f64; 2],
    },
    /// `x -> scale R_theta x + b`.
    Zoom {
        scale: f64,
        theta: f64,
        b: [f64; 2],
    },
    /// `x -> [[1, a], [0, 1]] x + b`.
    Shear {
        a: f64,
        b: [f64; 2],
    },
    /// Rigid motion plus `amplitude * (x2^2, -x1^3)`.
    Nonlinear {
        theta: f64,
        b: [f64; 2],
        amplitude: f64,
    },
}

fn default_theta() -> f64 {
    0.1
}

impl DeformationSpec {
    /// Magnetic-resonance test case: zoom 0.85, angle 0.1, shift (-0.02, -0.08).
    pub fn mri_zoom() -> Self {
        Self::Zoom { scale: 0.85, theta: 0.1, b: [-0.02, -0.08] }
    }

    /// Emission tomography test case: angle `theta`, shift (0.02, 0.08).
    pub fn pet_rigid(theta: f64) -> Self {
        Self::Rigid { theta, b: [0.02, 0.08] }
    }

    /// Super-resolution test cases.
    pub fn superres_rigid() -> Self {
        Self::Rigid { theta: 0.1, b: [0.06, -0.04] }
    }

    pub fn superres_shear() -> Self {
        Self::Shear { a: 0.08, b: [0.06, -0.04] }
    }

    pub fn superres_nonlinear() -> Self {
        Self::Nonlinear { theta: 0.1, b: [0.06, -0.04], amplitude: 0.05 }
    }

    /// Affine parameters (deviation from the identity) if the deformation is affine.
    pub fn affine(&self) -> Option<AffineParams<f64>> {
        match *self {
            Self::Identity => Some(AffineParams::zero()),
            Self::Rigid { theta, b } => Some(AffineParams::rigid(theta, b)),
            Self::Zoom { scale, theta, b } => Some(AffineParams::zoom_rigid(scale, theta, b)),
            Self::Shear { a, b } => Some(AffineParams::shear(a, b)),
            Self::Nonlinear { .. } => None,
        }
    }

    pub fn apply(&self, x: &[f64]) -> [f64; 2] {
        match *self {
            Self::Nonlinear { theta, b, amplitude } => {
                let r = AffineParams::rigid(theta, b).apply(x);
                [r[0] + amplitude * x[1] * x[1], r[1] - amplitude * x[0].powi(3)]
            }
            _ => self.affine().expect("affine deformation").apply(x),
        }
    }
}

/// Dense ground-truth field at the pixel centers of `grid`.
pub fn ground_truth_field(spec: &DeformationSpec, grid: &Geometry<f64>) -> DeformationField<f64> {
    DeformationField::from_fn(grid, |x| spec.apply(x).to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseSpec {
    None,
    /// Additive white noise with standard deviation `relative * rms(clean)`.
    Gaussian {
        relative: f64,
    },
    /// Poisson counts with mean `c A u + background`, `c` chosen so that the
    /// expected total equals `budget`.
    Poisson {
        #[serde(default = "default_background")]
        background: f64,
        budget: f64,
    },
}

fn default_background() -> f64 {
    7.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub phantom: PhantomKind,
    /// Pixels per axis of the ground truth and side information.
    pub size: usize,
    pub operator: OperatorSpec,
    pub deformation: DeformationSpec,
    pub noise: NoiseSpec,
    pub seed: u64,
}

/// A simulated problem instance.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: SimulationConfig,
    /// Measurements on the operator's range grid.
    pub f: ImageGrid<f64>,
    /// Global operator factor used for the simulation (count scaling).
    pub scale: f64,
    pub v: ImageGrid<f64>,
    pub u_gt: ImageGrid<f64>,
    /// `u_gt o phi_gt`, the image that generated the data.
    pub u_deformed: ImageGrid<f64>,
    /// Background rate for Poisson data (zero otherwise).
    pub background: f64,
}

impl Dataset {
    pub fn phi_gt(&self) -> Option<AffineParams<f64>> {
        self.config.deformation.affine()
    }

    pub fn target_geometry(&self) -> &Geometry<f64> {
        self.u_gt.geometry()
    }
}

/// Deterministic dataset for `config`.
pub fn simulate_dataset(config: &SimulationConfig) -> Result<Dataset> {
    let (u_gt, v) = make_phantom(config.phantom, config.size, config.seed)?;
    let grid = u_gt.geometry().clone();
    let field = ground_truth_field(&config.deformation, &grid);
    let deformed_real = warp(&u_gt, &field)?;
    let complex = config.operator.is_complex();
    let u_deformed = if complex { ImageGrid::complex_from_real(&deformed_real) } else { deformed_real };
    let op = config.operator.build(&grid, 1.0)?;
    let clean = op.apply(&u_deformed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let (values, scale, background) = match config.noise {
        NoiseSpec::None => (clean.values().to_vec(), 1.0, 0.0),
        NoiseSpec::Gaussian { relative } => {
            if !(relative >= 0.0) {
                return Err(Error::ConfigError {
                    field: "noise.relative".into(),
                    reason: "must be nonnegative".into(),
                });
            }
            let c = clean.values();
            let rms = (c.iter().map(|x| x * x).sum::<f64>() / (c.len() / clean.channels()) as f64).sqrt();
            let sigma = relative * rms / (clean.channels() as f64).sqrt();
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            (c.iter().map(|&x| x + sigma * normal.sample(&mut rng)).collect(), 1.0, 0.0)
        }
        NoiseSpec::Poisson { background, budget } => {
            if complex {
                return Err(Error::ConfigError {
                    field: "noise".into(),
                    reason: "Poisson noise needs real data".into(),
                });
            }
            if !(background > 0.0) {
                return Err(Error::ConfigError { field: "noise.background".into(), reason: "must be positive".into() });
            }
            let m = clean.values().len() as f64;
            let total: f64 = clean.values().iter().sum();
            let scale = (budget - background * m) / total;
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::ConfigError {
                    field: "noise.budget".into(),
                    reason: format!("budget {budget} does not exceed the background total {}", background * m),
                });
            }
            let counts = clean
                .values()
                .iter()
                .map(|&x| {
                    let mean = (scale * x + background).max(1e-12);
                    Poisson::new(mean).expect("positive mean").sample(&mut rng)
                })
                .collect();
            (counts, scale, background)
        }
    };
    Ok(Dataset {
        config: config.clone(),
        f: ImageGrid::new(clean.geometry().clone(), clean.channels(), values)?,
        scale,
        v,
        u_gt,
        u_deformed,
        background,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::gradient;

    fn edge_mask(u: &ImageGrid<f64>) -> Vec<bool> {
        let g = gradient(u);
        let norms: Vec<f64> = g.values().chunks(2).map(|w| (w[0] * w[0] + w[1] * w[1]).sqrt()).collect();
        let max = norms.iter().cloned().fold(0.0, f64::max);
        norms.iter().map(|&x| x > 0.1 * max).collect()
    }

    #[test]
    fn side_information_shares_edges() {
        for kind in [PhantomKind::Brain, PhantomKind::Urban] {
            for seed in 0..4 {
                let (u, v) = make_phantom(kind, 64, seed).unwrap();
                let (eu, ev) = (edge_mask(&u), edge_mask(&v));
                let total = eu.iter().filter(|&&e| e).count();
                let shared = eu.iter().zip(&ev).filter(|(&a, &b)| a && b).count();
                assert!(shared as f64 >= 0.9 * total as f64, "{kind:?} seed {seed}: {shared}/{total}");

                let (mu, mv) = (u.mean(), v.mean());
                let cov: f64 = u.values().iter().zip(v.values()).map(|(a, b)| (a - mu) * (b - mv)).sum();
                let su: f64 = u.values().iter().map(|a| (a - mu).powi(2)).sum();
                let sv: f64 = v.values().iter().map(|b| (b - mv).powi(2)).sum();
                assert!(cov / (su * sv).sqrt() < 0.95);
                assert_eq!(u.values()[0], 0.0);
                let (lo, hi) = u.min_max();
                assert!(lo >= 0.0 && hi <= 1.0);
            }
        }
    }

    #[test]
    fn field_examples() {
        let g = Geometry::square(32);
        let id = ground_truth_field(&DeformationSpec::Rigid { theta: 0.0, b: [0.0, 0.0] }, &g);
        assert_eq!(id.positions(), DeformationField::identity(&g).positions());
        assert_eq!(DeformationSpec::mri_zoom().apply(&[0.0, 0.0]), [-0.02, -0.08]);
        let nl = DeformationSpec::superres_nonlinear().apply(&[1.0, 1.0]);
        let r = DeformationSpec::superres_rigid().apply(&[1.0, 1.0]);
        assert!((nl[0] - r[0] - 0.05).abs() < 1e-15 && (nl[1] - r[1] + 0.05).abs() < 1e-15);
    }

    #[test]
    fn noiseless_identity_data_is_forward_model() {
        let cfg = SimulationConfig {
            phantom: PhantomKind::Brain,
            size: 32,
            operator: OperatorSpec::Radon { angles: 10, bins: 20, half_width: 2f64.sqrt() },
            deformation: DeformationSpec::Identity,
            noise: NoiseSpec::None,
            seed: 1,
        };
        let d = simulate_dataset(&cfg).unwrap();
        let op = cfg.operator.build(d.u_gt.geometry(), 1.0).unwrap();
        let expect = op.apply(&d.u_gt).unwrap();
        for (a, b) in d.f.values().iter().zip(expect.values()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn poisson_data_is_seeded_and_meets_budget() {
        let cfg = SimulationConfig {
            phantom: PhantomKind::Brain,
            size: 48,
            operator: OperatorSpec::Radon { angles: 30, bins: 40, half_width: 2f64.sqrt() },
            deformation: DeformationSpec::pet_rigid(0.1),
            noise: NoiseSpec::Poisson { background: 7.0, budget: 1e5 },
            seed: 3,
        };
        let a = simulate_dataset(&cfg).unwrap();
        let b = simulate_dataset(&cfg).unwrap();
        assert_eq!(a.f.values(), b.f.values());
        assert!(a.f.values().iter().all(|&x| x >= 0.0 && x.fract() == 0.0));
        let op = cfg.operator.build(a.u_gt.geometry(), a.scale).unwrap();
        let expected: f64 = op.apply(&a.u_deformed).unwrap().values().iter().map(|x| x + 7.0).sum();
        assert!((expected - 1e5).abs() <= 1e-3 * 1e5);
    }
}
