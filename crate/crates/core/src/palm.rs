//! Proximal alternating linearized minimization over the image `u` and the
//! deformation parameters `phi`.
//!
//! The smooth coupling term is `H(u, phi) = D(A J(u; P(phi)); f)`. One outer
//! iteration takes a proximal gradient step in `u` (prox of the weighted
//! regularizer) followed by a gradient step in `phi` evaluated at the new
//! `u`. Both steps backtrack on the descent-lemma surrogate.

use log::{debug, trace};

use crate::dtv::{DtvContext, ProxOptions, ProxState};
use crate::error::{Error, Result};
use crate::fidelity::Fidelity;
use crate::grid::{Geometry, ImageGrid, VectorField};
use crate::operators::LinearOperator;
use crate::scalar::{dot, norm_sq, Real};
use crate::warp::{Parametrization, WarpPlan};

/// Everything that stays fixed during one PALM run.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a, T: Real> {
    pub op: &'a LinearOperator<T>,
    pub fidelity: &'a Fidelity<T>,
    pub reg: &'a DtvContext<T>,
    pub param: Parametrization,
}

/// Cached forward evaluation at one `(u, phi)`.
struct Point<T: Real> {
    plan: WarpPlan<T>,
    data: Vec<T>,
    h: T,
}

impl<'a, T: Real> Problem<'a, T> {
    pub fn new(
        op: &'a LinearOperator<T>,
        fidelity: &'a Fidelity<T>,
        reg: &'a DtvContext<T>,
        param: Parametrization,
    ) -> Result<Self> {
        if fidelity.data().len() != op.data_len() {
            return Err(Error::ShapeMismatch(format!(
                "data has {} values, operator produces {}",
                fidelity.data().len(),
                op.data_len()
            )));
        }
        if reg.geometry().shape() != op.domain().shape() {
            return Err(Error::ShapeMismatch("regularizer and operator live on different grids".into()));
        }
        Ok(Self { op, fidelity, reg, param })
    }

    pub fn geometry(&self) -> &Geometry<T> {
        self.op.domain()
    }

    fn check_u(&self, u: &ImageGrid<T>) -> Result<()> {
        if !u.geometry().matches(self.geometry()) {
            return Err(Error::ShapeMismatch(format!(
                "image {:?} vs operator {:?}",
                u.shape(),
                self.geometry().shape()
            )));
        }
        if u.channels() != self.op.channels() {
            return Err(Error::FieldMismatch("image and operator disagree on complex values".into()));
        }
        Ok(())
    }

    fn plan(&self, phi: &[T]) -> Result<WarpPlan<T>> {
        let field = self.param.field(phi, self.geometry())?;
        WarpPlan::new(self.geometry(), &field)
    }

    /// Forward model at `(u, phi)`; `h` is `+inf` outside the fidelity domain.
    fn point(&self, u: &ImageGrid<T>, phi: &[T]) -> Result<Point<T>> {
        let plan = self.plan(phi)?;
        let data = self.op.apply_raw(plan.warp(u)?.values());
        let h = self.fidelity.value_or_inf(&data);
        Ok(Point { plan, data, h })
    }

    /// `A^* dD(A u_phi)` on the image grid.
    fn backprojected_residual(&self, p: &Point<T>) -> Result<ImageGrid<T>> {
        let g = self.fidelity.gradient(&p.data)?;
        ImageGrid::new(self.geometry().clone(), self.op.channels(), self.op.adjoint_raw(&g))
    }

    fn grad_u_at(&self, p: &Point<T>) -> Result<ImageGrid<T>> {
        p.plan.adjoint(&self.backprojected_residual(p)?)
    }

    fn grad_phi_at(&self, u: &ImageGrid<T>, phi: &[T], p: &Point<T>) -> Result<Vec<T>> {
        let r = self.backprojected_residual(p)?;
        let du = p.plan.dphi(u)?;
        let ch = u.channels();
        let mut g = vec![T::zero(); 2 * u.n_pixels()];
        for (i, gi) in g.chunks_exact_mut(2).enumerate() {
            for c in 0..ch {
                let rv = r.values()[i * ch + c];
                let d = &du.values()[(i * ch + c) * 2..(i * ch + c) * 2 + 2];
                gi[0] += rv * d[0];
                gi[1] += rv * d[1];
            }
        }
        let field = VectorField::new(self.geometry().clone(), 1, g)?;
        self.param.jacobian_adjoint(phi, &field, self.geometry())
    }

    /// `H(u, phi)`.
    pub fn smooth_value(&self, u: &ImageGrid<T>, phi: &[T]) -> Result<T> {
        self.check_u(u)?;
        let plan = self.plan(phi)?;
        self.fidelity.value(&self.op.apply_raw(plan.warp(u)?.values()))
    }

    /// Full objective `H(u, phi) + alpha dTV(u)` (plus the constraint).
    pub fn objective(&self, u: &ImageGrid<T>, phi: &[T]) -> Result<T> {
        Ok(self.smooth_value(u, phi)? + self.reg.penalty(u)?)
    }

    /// Gradient of `H` with respect to `u`.
    pub fn grad_u(&self, u: &ImageGrid<T>, phi: &[T]) -> Result<ImageGrid<T>> {
        self.check_u(u)?;
        let p = self.point(u, phi)?;
        self.grad_u_at(&p)
    }

    /// Gradient of `H` with respect to `phi`.
    pub fn grad_phi(&self, u: &ImageGrid<T>, phi: &[T]) -> Result<Vec<T>> {
        self.check_u(u)?;
        let p = self.point(u, phi)?;
        self.grad_phi_at(u, phi, &p)
    }
}

#[derive(Clone, Debug)]
pub struct PalmOptions<T> {
    pub iterations: usize,
    pub grow: T,
    pub shrink: T,
    pub max_halvings: usize,
    pub prox: ProxOptions<T>,
    /// When false the parameters stay frozen and only `u` is updated.
    pub update_phi: bool,
    /// Leading iterations in which only `u` is updated.
    pub warmup: usize,
}

impl<T: Real> Default for PalmOptions<T> {
    fn default() -> Self {
        Self {
            iterations: 500,
            grow: T::lit(2.0),
            shrink: T::lit(0.5),
            max_halvings: 30,
            prox: ProxOptions::default(),
            update_phi: true,
            warmup: 0,
        }
    }
}

/// One logged outer iteration (iteration 0 is the starting point).
#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog<T> {
    pub iteration: usize,
    pub objective: T,
    pub sigma: T,
    pub tau: T,
    pub phi: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct PalmState<T> {
    pub u: ImageGrid<T>,
    pub phi: Vec<T>,
    pub sigma: T,
    pub tau: T,
    pub prox: ProxState<T>,
    pub history: Vec<IterationLog<T>>,
}

impl<T: Real> PalmState<T> {
    pub fn new(u: ImageGrid<T>, phi: Vec<T>) -> Self {
        Self { u, phi, sigma: T::one(), tau: T::one(), prox: ProxState::default(), history: Vec::new() }
    }

    pub fn with_steps(mut self, sigma: T, tau: T) -> Self {
        self.sigma = sigma;
        self.tau = tau;
        self
    }

    pub fn objectives(&self) -> Vec<T> {
        self.history.iter().map(|l| l.objective).collect()
    }
}

fn slack<T: Real>(h: T) -> T {
    T::lit(64.0) * T::epsilon() * (T::one() + h.abs())
}

/// Runs `opts.iterations` outer iterations starting from `state`.
pub fn palm_run<T: Real>(state: &mut PalmState<T>, problem: &Problem<'_, T>, opts: &PalmOptions<T>) -> Result<()> {
    problem.check_u(&state.u)?;
    problem.param.to_affine(&state.phi)?;
    if !(state.sigma > T::zero() && state.tau > T::zero()) {
        return Err(Error::ParamError("step sizes must be positive".into()));
    }
    let reg = problem.reg;
    let mut current = problem.point(&state.u, &state.phi)?;
    if !current.h.is_finite() {
        return Err(Error::DomainError("starting point lies outside the fidelity domain".into()));
    }
    let mut penalty = reg.penalty(&state.u)?;
    state.history.push(IterationLog {
        iteration: 0,
        objective: current.h + penalty,
        sigma: state.sigma,
        tau: state.tau,
        phi: state.phi.clone(),
    });

    for k in 1..=opts.iterations {
        // u-step
        let g = problem.grad_u_at(&current)?;
        let mut sigma = state.sigma;
        let mut halvings = 0;
        let mut grow = true;
        loop {
            let z =
                state.u.with_values(state.u.values().iter().zip(g.values()).map(|(&u, &gu)| u - sigma * gu).collect());
            let res = reg.prox(&z, sigma, &opts.prox, &mut state.prox)?;
            // keep u when the inexact prox is worse than not moving
            let lambda = sigma * reg.alpha();
            let at_u = T::lit(0.5) * sigma * sigma * norm_sq(g.values()) + lambda * reg.value(&state.u)?;
            let stay = res.primal > at_u;
            let candidate = if stay { state.u.clone() } else { res.y };
            let delta: Vec<T> = candidate.values().iter().zip(state.u.values()).map(|(&a, &b)| a - b).collect();
            if delta.iter().all(|&d| d == T::zero()) {
                grow = !stay;
                break;
            }
            let next = problem.point(&candidate, &state.phi)?;
            let bound = current.h + dot(g.values(), &delta) + norm_sq(&delta) / (T::lit(2.0) * sigma);
            if next.h <= bound + slack(current.h) {
                state.u = candidate;
                current = next;
                break;
            }
            halvings += 1;
            if halvings > opts.max_halvings {
                return Err(Error::BacktrackExhausted { block: "u", halvings });
            }
            sigma *= opts.shrink;
            trace!("u-step backtrack: sigma = {sigma}");
        }
        state.sigma = if grow { sigma * opts.grow } else { sigma };
        let accepted_sigma = sigma;

        // phi-step at the updated u
        let mut accepted_tau = state.tau;
        if opts.update_phi && k > opts.warmup {
            let g = problem.grad_phi_at(&state.u, &state.phi, &current)?;
            let gn = norm_sq(&g);
            let mut tau = state.tau;
            let mut halvings = 0;
            if gn > T::zero() {
                loop {
                    let trial: Vec<T> = state.phi.iter().zip(&g).map(|(&p, &gp)| p - tau * gp).collect();
                    let next = problem.point(&state.u, &trial)?;
                    if next.h <= current.h - T::lit(0.5) * tau * gn + slack(current.h) {
                        state.phi = trial;
                        current = next;
                        break;
                    }
                    halvings += 1;
                    if halvings > opts.max_halvings {
                        return Err(Error::BacktrackExhausted { block: "phi", halvings });
                    }
                    tau *= opts.shrink;
                }
            }
            accepted_tau = tau;
            state.tau = tau * opts.grow;
        }

        penalty = reg.penalty(&state.u)?;
        let objective = current.h + penalty;
        debug!("iteration {k}: objective {objective:e}, sigma {accepted_sigma:e}, tau {accepted_tau:e}");
        state.history.push(IterationLog {
            iteration: k,
            objective,
            sigma: accepted_sigma,
            tau: accepted_tau,
            phi: state.phi.clone(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::OperatorSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_phantom(g: &Geometry<f64>) -> ImageGrid<f64> {
        ImageGrid::from_fn(g.clone(), |x| {
            (-(4.0 * (x[0] - 0.2).powi(2) + 6.0 * (x[1] + 0.1).powi(2))).exp() + 0.3 * (2.0 * x[0] + x[1]).cos() + 0.5
        })
    }

    #[test]
    fn identity_problem_gradient_is_residual() {
        let g = Geometry::<f64>::square(12);
        let op = LinearOperator::identity(&g, 1).unwrap();
        let f = smooth_phantom(&g);
        let fid = Fidelity::l2(f.values().to_vec()).unwrap();
        let reg = DtvContext::tv(&g, 0.1, false).unwrap();
        let p = Problem::new(&op, &fid, &reg, Parametrization::Affine).unwrap();
        let u = ImageGrid::from_fn(g, |x| x[0] * x[1]);
        let gu = p.grad_u(&u, &[0.0; 6]).unwrap();
        for ((a, b), c) in gu.values().iter().zip(u.values()).zip(f.values()) {
            assert!((a - (b - c)).abs() < 1e-12);
        }
        assert!(p.grad_u(&f, &[0.0; 6]).unwrap().values().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn constant_image_has_no_parameter_gradient() {
        let g = Geometry::<f64>::square(12);
        let op = LinearOperator::identity(&g, 1).unwrap();
        let fid = Fidelity::l2(smooth_phantom(&g).values().to_vec()).unwrap();
        let reg = DtvContext::tv(&g, 0.1, false).unwrap();
        let p = Problem::new(&op, &fid, &reg, Parametrization::Affine).unwrap();
        let u = ImageGrid::constant(g, 0.7);
        let gp = p.grad_phi(&u, &[0.01, 0.0, 0.0, -0.02, 0.05, 0.0]).unwrap();
        assert!(gp.iter().all(|x| x.abs() < 1e-12), "{gp:?}");
    }

    #[test]
    fn fixed_point_is_kept() {
        let g = Geometry::<f64>::square(12);
        let op = LinearOperator::identity(&g, 1).unwrap();
        let u = ImageGrid::constant(g.clone(), 0.4);
        let fid = Fidelity::l2(u.values().to_vec()).unwrap();
        let reg = DtvContext::tv(&g, 0.1, true).unwrap();
        let p = Problem::new(&op, &fid, &reg, Parametrization::Affine).unwrap();
        let mut state = PalmState::new(u.clone(), vec![0.0; 6]);
        palm_run(&mut state, &p, &PalmOptions { iterations: 5, ..Default::default() }).unwrap();
        assert_eq!(state.u.values(), u.values());
        // the spline of a constant is constant up to rounding in the prefilter
        assert!(state.phi.iter().all(|p| p.abs() < 1e-20), "{:?}", state.phi);
    }

    #[test]
    fn denoising_reduces_to_one_prox() {
        let g = Geometry::<f64>::square(16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = ImageGrid::real(g.clone(), (0..256).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let alpha = 0.15;
        let op = LinearOperator::identity(&g, 1).unwrap();
        let fid = Fidelity::l2(f.values().to_vec()).unwrap();
        let reg = DtvContext::tv(&g, alpha, false).unwrap();
        let p = Problem::new(&op, &fid, &reg, Parametrization::Affine).unwrap();
        let mut state = PalmState::new(ImageGrid::zeros(g.clone(), 1), vec![0.0; 6]);
        let opts = PalmOptions {
            iterations: 200,
            update_phi: false,
            prox: ProxOptions { max_iters: 500, tol: 1e-12, check_every: 10 },
            ..Default::default()
        };
        palm_run(&mut state, &p, &opts).unwrap();
        let strict = ProxOptions { max_iters: 20_000, tol: 1e-14, check_every: 50 };
        let reference = reg.prox(&f, 1.0, &strict, &mut ProxState::default()).unwrap().y;
        let rms =
            (state.u.values().iter().zip(reference.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 256.0).sqrt();
        assert!(rms <= 1e-4, "{rms}");
        let obj = state.objectives();
        assert!(obj.windows(2).all(|w| w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs())));
    }

    #[test]
    fn exhausted_backtracking_is_reported() {
        let g = Geometry::<f64>::square(8);
        let op = LinearOperator::identity(&g, 1).unwrap().with_scale(1e6);
        let fid = Fidelity::l2(vec![1.0; 64]).unwrap();
        let reg = DtvContext::tv(&g, 1e-3, false).unwrap();
        let p = Problem::new(&op, &fid, &reg, Parametrization::Affine).unwrap();
        let mut state = PalmState::new(ImageGrid::zeros(g, 1), vec![0.0; 6]);
        let opts = PalmOptions { iterations: 1, max_halvings: 5, update_phi: false, ..Default::default() };
        assert!(matches!(palm_run(&mut state, &p, &opts), Err(Error::BacktrackExhausted { block: "u", .. })));
    }

    #[test]
    fn mismatched_data_is_rejected() {
        let g = Geometry::<f64>::square(8);
        let op = OperatorSpec::FourierMask { size: 8, spokes: 15, lowpass: 4 }.build(&g, 1.0).unwrap();
        let fid = Fidelity::l2(vec![0.0; 3]).unwrap();
        let reg = DtvContext::tv(&g, 1.0, false).unwrap();
        assert!(Problem::new(&op, &fid, &reg, Parametrization::Affine).is_err());
    }
}
