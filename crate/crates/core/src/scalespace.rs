//! Coarse-to-fine driver: a sequence of PALM runs on increasing resolutions
//! with decreasing regularization weights.
//!
//! The measured data never changes; each stage rebuilds the forward operator
//! on its own grid, down-samples the side information and up-samples the
//! previous image. Deformation parameters live in physical coordinates and
//! carry over untouched.

use log::info;
use serde::{Deserialize, Serialize};

use crate::dtv::{DtvContext, ProxOptions};
use crate::error::{Error, Result};
use crate::fidelity::Fidelity;
use crate::grid::{Geometry, ImageGrid};
use crate::operators::{AreaResample, OperatorSpec};
use crate::palm::{palm_run, IterationLog, PalmOptions, PalmState, Problem};
use crate::scalar::Real;
use crate::warp::{DeformationField, Parametrization, WarpPlan};

/// Resolutions (pixels per axis), regularization weights and iterations
/// per stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSchedule {
    pub resolutions: Vec<usize>,
    pub alphas: Vec<f64>,
    pub iterations: usize,
}

impl ScaleSchedule {
    pub fn new(resolutions: Vec<usize>, alphas: Vec<f64>, iterations: usize) -> Result<Self> {
        let s = Self { resolutions, alphas, iterations };
        s.validate()?;
        Ok(s)
    }

    /// `m` stages halving the target resolution, weights `base * factor^(m-1-i)`.
    pub fn halvings(target: usize, m: usize, base: f64, factor: f64, iterations: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::ScheduleError("at least one stage is required".into()));
        }
        let resolutions: Vec<usize> = (0..m).rev().map(|i| target >> i).collect();
        let alphas = (0..m).map(|i| base * factor.powi((m - 1 - i) as i32)).collect();
        Self::new(resolutions, alphas, iterations)
    }

    pub fn stages(&self) -> usize {
        self.resolutions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::ScheduleError("resolutions: at least one stage is required".into()));
        }
        if self.alphas.len() != self.resolutions.len() {
            return Err(Error::ScheduleError(format!(
                "alphas: {} weights for {} resolutions",
                self.alphas.len(),
                self.resolutions.len()
            )));
        }
        if self.resolutions.iter().any(|&n| n < 3) {
            return Err(Error::ScheduleError("resolutions: every stage needs at least 3 pixels per axis".into()));
        }
        if self.resolutions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::ScheduleError("resolutions: must be strictly increasing".into()));
        }
        if self.alphas.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::ScheduleError("alphas: must be positive and finite".into()));
        }
        if self.alphas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::ScheduleError("alphas: must be strictly decreasing".into()));
        }
        if self.iterations == 0 {
            return Err(Error::ScheduleError("iterations: must be at least 1".into()));
        }
        Ok(())
    }

    pub fn target(&self) -> usize {
        *self.resolutions.last().expect("validated schedule")
    }
}

/// Square `n x n` grid covering the same box as `g`.
pub fn regrid<T: Real>(g: &Geometry<T>, n: usize) -> Result<Geometry<T>> {
    if g.dim() != 2 {
        return Err(Error::ShapeMismatch("scale space works on 2-D grids".into()));
    }
    let (lo0, hi0) = g.extent(0);
    let (lo1, hi1) = g.extent(1);
    let nn = T::from_usize_lossy(n);
    Geometry::new(vec![n, n], vec![lo0, lo1], vec![(hi0 - lo0) / nn, (hi1 - lo1) / nn])
}

/// Area average of `v` onto an `n x n` grid over the same box.
pub fn downsample_image<T: Real>(v: &ImageGrid<T>, n: usize) -> Result<ImageGrid<T>> {
    if v.shape().iter().any(|&s| n > s) {
        return Err(Error::ParamError(format!("cannot down-sample {:?} to {n}", v.shape())));
    }
    let target = regrid(v.geometry(), n)?;
    if target.matches(v.geometry()) {
        return Ok(v.clone());
    }
    AreaResample::new(v.geometry(), &target)?.apply_image(v)
}

/// Quadratic spline of `u` evaluated at the pixel centers of an `n x n` grid.
pub fn upsample_image<T: Real>(u: &ImageGrid<T>, n: usize) -> Result<ImageGrid<T>> {
    if u.shape().iter().any(|&s| n < s) {
        return Err(Error::ParamError(format!("cannot up-sample {:?} to {n}", u.shape())));
    }
    let target = regrid(u.geometry(), n)?;
    if target.matches(u.geometry()) {
        return Ok(u.clone());
    }
    WarpPlan::new(u.geometry(), &DeformationField::identity(&target))?.warp(u)
}

/// Fixed inputs of a scale-space run.
#[derive(Clone, Copy, Debug)]
pub struct ScaleSpaceInput<'a, T: Real> {
    pub operator: &'a OperatorSpec,
    /// Global factor multiplying the operator (e.g. a count budget).
    pub scale: T,
    pub fidelity: &'a Fidelity<T>,
    /// Side information on its native grid.
    pub side: &'a ImageGrid<T>,
    /// Grid of the final reconstruction.
    pub target: &'a Geometry<T>,
}

#[derive(Clone, Debug)]
pub struct ScaleSpaceConfig<T> {
    pub gamma: T,
    pub eps_rel: T,
    pub nonneg: bool,
    pub param: Parametrization,
    pub palm: PalmOptions<T>,
    /// Step sizes at the first stage.
    pub sigma0: T,
    pub tau0: T,
}

impl<T: Real> Default for ScaleSpaceConfig<T> {
    fn default() -> Self {
        Self {
            gamma: T::lit(crate::dtv::DEFAULT_GAMMA),
            eps_rel: T::lit(crate::dtv::DEFAULT_EPS_REL),
            nonneg: false,
            param: Parametrization::Affine,
            palm: PalmOptions::default(),
            sigma0: T::one(),
            tau0: T::one(),
        }
    }
}

impl<T: Real> ScaleSpaceConfig<T> {
    pub fn with_prox(mut self, prox: ProxOptions<T>) -> Self {
        self.palm.prox = prox;
        self
    }
}

#[derive(Clone, Debug)]
pub struct StageReport<T> {
    pub resolution: usize,
    pub alpha: T,
    pub eps: T,
    pub history: Vec<IterationLog<T>>,
    pub u: ImageGrid<T>,
    pub phi: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct ScaleSpaceResult<T> {
    pub u: ImageGrid<T>,
    pub phi: Vec<T>,
    pub stages: Vec<StageReport<T>>,
}

/// Runs every stage of `schedule`, starting from `phi0` (zero if `None`).
pub fn run_scalespace<T: Real>(
    input: &ScaleSpaceInput<'_, T>,
    schedule: &ScaleSchedule,
    cfg: &ScaleSpaceConfig<T>,
    phi0: Option<Vec<T>>,
) -> Result<ScaleSpaceResult<T>> {
    schedule.validate()?;
    let target_n = input.target.shape()[0];
    if input.target.shape() != [target_n, target_n] || schedule.target() != target_n {
        return Err(Error::ScheduleError(format!(
            "resolutions: last stage {} must equal the target grid {:?}",
            schedule.target(),
            input.target.shape()
        )));
    }
    let phi = phi0.unwrap_or_else(|| vec![T::zero(); cfg.param.n_params()]);
    let channels = if input.operator.is_complex() { 2 } else { 1 };
    let mut state: Option<PalmState<T>> = None;
    let mut stages = Vec::with_capacity(schedule.stages());
    let mut opts = cfg.palm.clone();
    opts.iterations = schedule.iterations;

    for (&n, &alpha) in schedule.resolutions.iter().zip(&schedule.alphas) {
        let geometry = regrid(input.target, n)?;
        let op = match input.operator {
            OperatorSpec::Identity { complex } if n != target_n => {
                if *complex {
                    return Err(Error::ScheduleError("complex denoising supports a single stage only".into()));
                }
                OperatorSpec::Downsample { data_shape: [target_n, target_n] }.build(&geometry, input.scale)?
            }
            spec => spec.build(&geometry, input.scale)?,
        };
        let v = downsample_image(input.side, n)?;
        let alpha_t = T::lit(alpha);
        let reg = DtvContext::new(&v, cfg.gamma, cfg.eps_rel, alpha_t, cfg.nonneg)?;
        let problem = Problem::new(&op, input.fidelity, &reg, cfg.param)?;

        let mut st = match state.take() {
            None => PalmState::new(ImageGrid::zeros(geometry.clone(), channels), phi.clone())
                .with_steps(cfg.sigma0, cfg.tau0),
            Some(prev) => {
                let mut u = upsample_image(&prev.u, n)?;
                if cfg.nonneg {
                    u.values_mut().iter_mut().for_each(|x| *x = x.max(T::zero()));
                }
                let mut next = PalmState::new(u, prev.phi).with_steps(prev.sigma, prev.tau);
                next.prox.reset();
                next
            }
        };
        info!("stage {n}x{n}: alpha {alpha:e}, {} iterations", opts.iterations);
        palm_run(&mut st, &problem, &opts)?;
        opts.warmup = 0;
        let history = std::mem::take(&mut st.history);
        if let Some(last) = history.last() {
            info!("stage {n}x{n} done: objective {:e}", last.objective);
        }
        stages.push(StageReport {
            resolution: n,
            alpha: alpha_t,
            eps: reg.eps(),
            history,
            u: st.u.clone(),
            phi: st.phi.clone(),
        });
        state = Some(st);
    }
    let st = state.expect("at least one stage");
    Ok(ScaleSpaceResult { u: st.u, phi: st.phi, stages })
}
