//! Three-step comparison method: a reconstruction without side information,
//! mutual-information registration of the side information to it, and a
//! second reconstruction with the registered deformation held fixed.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::scalar::Real;
use crate::scalespace::{
    downsample_image, run_scalespace, upsample_image, ScaleSchedule, ScaleSpaceConfig, ScaleSpaceInput,
    ScaleSpaceResult,
};
use crate::warp::{AffineParams, Parametrization, RigidParams, WarpPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiConfig {
    pub bins: usize,
    /// Number of resolution levels, each half the size of the next.
    pub pyramid_levels: usize,
    /// Rotation angles tried at the coarsest level.
    pub start_angles: Vec<f64>,
    /// Initial simplex edge at the coarsest level; halved per level.
    pub simplex_step: f64,
    /// Nelder-Mead iterations per start and level.
    pub max_iters: u64,
    /// Coarsest level size below which levels are dropped.
    pub min_size: usize,
    /// Fresh-simplex restarts from the best point at the finest level.
    pub restarts: usize,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self {
            bins: 32,
            pyramid_levels: 2,
            start_angles: (-3..=3).map(|k| 0.2 * k as f64).collect(),
            simplex_step: 0.1,
            max_iters: 300,
            min_size: 16,
            restarts: 2,
        }
    }
}

impl MiConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::ConfigError { field: field.into(), reason: reason.into() });
        if self.bins < 8 {
            return bad("mi.bins", "must be at least 8");
        }
        if self.pyramid_levels < 1 {
            return bad("mi.pyramid_levels", "must be at least 1");
        }
        if self.start_angles.is_empty() {
            return bad("mi.start_angles", "must not be empty");
        }
        if !(self.simplex_step > 0.0) {
            return bad("mi.simplex_step", "must be positive");
        }
        Ok(())
    }
}

fn real_values<T: Real>(u: &ImageGrid<T>) -> Vec<f64> {
    let m = if u.is_complex() { u.magnitude() } else { u.clone() };
    m.values().iter().map(|x| x.to_f64_lossy()).collect()
}

/// Continuous bin coordinates in `[0, bins - 1]` over the min-max range.
fn bin_coords(x: &[f64], bins: usize) -> Vec<f64> {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; x.len()];
    }
    let s = (bins - 1) as f64 / (hi - lo);
    x.iter().map(|&v| ((v - lo) * s).clamp(0.0, (bins - 1) as f64)).collect()
}

fn mi_values(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let (ta, tb) = (bin_coords(a, bins), bin_coords(b, bins));
    let mut joint = vec![0.0; bins * bins];
    for (&x, &y) in ta.iter().zip(&tb) {
        let (i, j) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - i as f64, y - j as f64);
        let (i1, j1) = ((i + 1).min(bins - 1), (j + 1).min(bins - 1));
        joint[i * bins + j] += (1.0 - fx) * (1.0 - fy);
        joint[i1 * bins + j] += fx * (1.0 - fy);
        joint[i * bins + j1] += (1.0 - fx) * fy;
        joint[i1 * bins + j1] += fx * fy;
    }
    let total = a.len() as f64;
    let mut pa = vec![0.0; bins];
    let mut pb = vec![0.0; bins];
    for i in 0..bins {
        for j in 0..bins {
            let p = joint[i * bins + j] / total;
            pa[i] += p;
            pb[j] += p;
        }
    }
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let p = joint[i * bins + j] / total;
            if p > 0.0 {
                mi += p * (p / (pa[i] * pb[j])).ln();
            }
        }
    }
    mi
}

/// Mutual information (natural log) of the joint intensity histogram with
/// `bins x bins` cells and linear (partial-volume) binning.
pub fn mutual_information<T: Real>(a: &ImageGrid<T>, b: &ImageGrid<T>, bins: usize) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("mutual information of {:?} and {:?}", a.shape(), b.shape())));
    }
    if bins < 2 {
        return Err(Error::ParamError("at least two histogram bins are needed".into()));
    }
    Ok(mi_values(&real_values(a), &real_values(b), bins))
}

/// Outcome of [`mi_register`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    /// Parameters in the requested parametrization.
    pub params: Vec<f64>,
    pub affine: AffineParams<f64>,
    pub mi: f64,
    pub mi_identity: f64,
    /// Set when the best candidate improves on the identity by less than 1e-6.
    pub failed: bool,
}

fn resample_to(v: &ImageGrid<f64>, n: usize) -> Result<ImageGrid<f64>> {
    let m = v.shape()[0];
    if v.shape() != [m, m] {
        return Err(Error::ShapeMismatch(format!("square images expected, got {:?}", v.shape())));
    }
    if m >= n {
        downsample_image(v, n)
    } else {
        upsample_image(v, n)
    }
}

struct MiCost<'a> {
    v: &'a ImageGrid<f64>,
    target: &'a [f64],
    param: Parametrization,
    bins: usize,
}

impl MiCost<'_> {
    fn mi(&self, p: &[f64]) -> Result<f64> {
        let field = self.param.field(p, self.v.geometry())?;
        let w = WarpPlan::new(self.v.geometry(), &field)?.warp(self.v)?;
        Ok(mi_values(w.values(), self.target, self.bins))
    }
}

impl CostFunction for MiCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(-self.mi(p)?)
    }
}

fn start_params(param: Parametrization, theta: f64) -> Vec<f64> {
    match param {
        Parametrization::Affine => AffineParams::rigid(theta, [0.0, 0.0]).as_slice().to_vec(),
        Parametrization::Rigid => RigidParams::new(theta, [0.0, 0.0]).to_vec(),
    }
}

fn nelder_mead(cost: MiCost<'_>, x0: Vec<f64>, step: f64, iters: u64) -> Result<(Vec<f64>, f64)> {
    let mut simplex = vec![x0.clone()];
    for i in 0..x0.len() {
        let mut x = x0.clone();
        x[i] += step;
        simplex.push(x);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-10)
        .map_err(|e| Error::ParamError(format!("simplex setup: {e}")))?;
    let res = Executor::new(cost, solver)
        .configure(|s| s.max_iters(iters))
        .run()
        .map_err(|e| Error::DomainError(format!("registration search: {e}")))?;
    let state = res.state();
    let best = state.get_best_param().cloned().unwrap_or(x0);
    Ok((best, -state.get_best_cost()))
}

/// Parameters `phi` maximizing `MI(v o P(phi), target)`.
///
/// The side information is resampled to the target grid. A pyramid of
/// area-averaged copies is searched coarse to fine with Nelder-Mead; every
/// start angle is refined on every level, restarted at the finest one, and
/// the best final candidate wins (ties go to the earlier start).
pub fn mi_register<T: Real>(
    v: &ImageGrid<T>,
    target: &ImageGrid<T>,
    param: Parametrization,
    cfg: &MiConfig,
) -> Result<Registration> {
    cfg.validate()?;
    let n = target.shape()[0];
    if target.shape() != [n, n] {
        return Err(Error::ShapeMismatch(format!("square target expected, got {:?}", target.shape())));
    }
    let target = ImageGrid::real(target.geometry().cast(), real_values(target))?;
    let v = resample_to(&ImageGrid::real(v.geometry().cast(), real_values(v))?, n)?;

    let mut sizes: Vec<usize> = (0..cfg.pyramid_levels)
        .map(|l| n >> (cfg.pyramid_levels - 1 - l))
        .filter(|&m| m >= cfg.min_size.min(n))
        .collect();
    sizes.dedup();
    let mut candidates: Vec<Vec<f64>> = cfg.start_angles.iter().map(|&t| start_params(param, t)).collect();
    let mut scores = vec![f64::NEG_INFINITY; candidates.len()];
    let mut step = cfg.simplex_step;
    for (level, &m) in sizes.iter().enumerate() {
        let vl = downsample_image(&v, m)?;
        let tl = downsample_image(&target, m)?;
        let restarts = if level + 1 == sizes.len() { cfg.restarts } else { 0 };
        for (c, s) in candidates.iter_mut().zip(scores.iter_mut()) {
            let cost = || MiCost { v: &vl, target: tl.values(), param, bins: cfg.bins };
            let (mut best, mut mi) = nelder_mead(cost(), c.clone(), step, cfg.max_iters)?;
            for _ in 0..restarts {
                let (p, m) = nelder_mead(cost(), best.clone(), step, cfg.max_iters)?;
                if m <= mi + 1e-9 {
                    break;
                }
                (best, mi) = (p, m);
            }
            *c = best;
            *s = mi;
        }
        step *= 0.5;
    }
    let (mut best, mut best_mi) = (0, f64::NEG_INFINITY);
    for (k, &s) in scores.iter().enumerate() {
        if s > best_mi {
            best = k;
            best_mi = s;
        }
    }
    let full = MiCost { v: &v, target: target.values(), param, bins: cfg.bins };
    let mi_identity = full.mi(&vec![0.0; param.n_params()])?;
    let params = candidates.swap_remove(best);
    let failed = best_mi - mi_identity < 1e-6;
    if failed {
        warn!("registration did not improve on the identity (MI {best_mi:.6} vs {mi_identity:.6})");
    }
    Ok(Registration { affine: param.to_affine(&params)?, params, mi: best_mi, mi_identity, failed })
}

/// Artifacts of all three steps.
#[derive(Clone, Debug)]
pub struct ThreeStepReport<T> {
    pub initial: ScaleSpaceResult<T>,
    pub registration: Registration,
    pub result: ScaleSpaceResult<T>,
}

/// Schedules and settings for [`three_step`].
#[derive(Clone, Debug)]
pub struct ThreeStepConfig<T> {
    /// Schedule of the first, side-information-free reconstruction.
    pub tv_schedule: ScaleSchedule,
    /// Schedule of the final reconstruction.
    pub schedule: ScaleSchedule,
    pub recon: ScaleSpaceConfig<T>,
    pub mi: MiConfig,
}

/// Runs the three steps; the last one shares all machinery with the joint
/// method except that the parameters stay frozen.
pub fn three_step<T: Real>(input: &ScaleSpaceInput<'_, T>, cfg: &ThreeStepConfig<T>) -> Result<ThreeStepReport<T>> {
    let mut tv_cfg = cfg.recon.clone();
    tv_cfg.gamma = T::zero();
    tv_cfg.palm.update_phi = false;
    let initial = run_scalespace(input, &cfg.tv_schedule, &tv_cfg, None)?;
    info!("three-step: initial reconstruction done");

    let registration = mi_register(input.side, &initial.u, cfg.recon.param, &cfg.mi)?;
    info!("three-step: registered with MI {:.4} (identity {:.4})", registration.mi, registration.mi_identity);

    let phi: Vec<T> = registration.params.iter().map(|&p| T::lit(p)).collect();
    let result = frozen_reconstruction(input, &cfg.schedule, &cfg.recon, phi)?;
    Ok(ThreeStepReport { initial, registration, result })
}

/// Reconstruction with the parameters fixed at `phi`.
pub fn frozen_reconstruction<T: Real>(
    input: &ScaleSpaceInput<'_, T>,
    schedule: &ScaleSchedule,
    cfg: &ScaleSpaceConfig<T>,
    phi: Vec<T>,
) -> Result<ScaleSpaceResult<T>> {
    let mut frozen = cfg.clone();
    frozen.palm.update_phi = false;
    run_scalespace(input, schedule, &frozen, Some(phi))
}
