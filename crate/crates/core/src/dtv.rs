//! Directional total variation and its proximal operator.
//!
//! `dTV(u; v) = sum_i |P_i grad u_i|` with `P_i = I - xi_i xi_i^T` and
//! `xi_i = gamma grad v_i / sqrt(|grad v_i|^2 + eps^2)`. For complex `u` the
//! same `P_i` acts on the real and imaginary gradients and the norm runs over
//! both. The prox of `lambda dTV` (optionally plus a nonnegativity
//! constraint) is computed by fast gradient projection on the dual.

use crate::error::{Error, Result};
use crate::grid::{divergence_into, gradient_into, Geometry, ImageGrid, VectorField};
use crate::scalar::Real;

/// Default attenuation of the side-information directions.
pub const DEFAULT_GAMMA: f64 = 0.9995;
/// Default `eps` relative to the largest side-information gradient.
pub const DEFAULT_EPS_REL: f64 = 0.01;

/// Regularizer data built from one side-information image.
#[derive(Clone, Debug)]
pub struct DtvContext<T> {
    xi: VectorField<T>,
    gamma: T,
    eps: T,
    alpha: T,
    nonneg: bool,
}

/// Normalized side-information gradients and the `eps` actually used.
pub fn xi_field<T: Real>(v: &ImageGrid<T>, gamma: T, eps_rel: T) -> Result<(VectorField<T>, T)> {
    if !(gamma >= T::zero() && gamma < T::one()) {
        return Err(Error::ParamError(format!("gamma = {gamma} is outside [0, 1)")));
    }
    if !(eps_rel > T::zero()) {
        return Err(Error::ParamError(format!("eps_rel = {eps_rel} must be positive")));
    }
    if v.is_complex() {
        return Err(Error::FieldMismatch("side information must be real".into()));
    }
    let d = v.geometry().dim();
    let mut g = vec![T::zero(); v.n_pixels() * d];
    gradient_into(v.shape(), 1, v.values(), &mut g);
    let max = g.chunks_exact(d).map(|w| w.iter().map(|&x| x * x).sum::<T>().sqrt()).fold(T::zero(), T::max);
    let eps = if max > T::zero() { eps_rel * max } else { eps_rel };
    let eps2 = eps * eps;
    for w in g.chunks_exact_mut(d) {
        let s = gamma / (w.iter().map(|&x| x * x).sum::<T>() + eps2).sqrt();
        w.iter_mut().for_each(|x| *x *= s);
    }
    Ok((VectorField::new(v.geometry().clone(), 1, g)?, eps))
}

impl<T: Real> DtvContext<T> {
    pub fn new(v: &ImageGrid<T>, gamma: T, eps_rel: T, alpha: T, nonneg: bool) -> Result<Self> {
        if !(alpha > T::zero()) {
            return Err(Error::ParamError(format!("alpha = {alpha} must be positive")));
        }
        let (xi, eps) = xi_field(v, gamma, eps_rel)?;
        Ok(Self { xi, gamma, eps, alpha, nonneg })
    }

    /// Plain total variation (no side information) on `geometry`.
    pub fn tv(geometry: &Geometry<T>, alpha: T, nonneg: bool) -> Result<Self> {
        Self::new(&ImageGrid::zeros(geometry.clone(), 1), T::zero(), T::one(), alpha, nonneg)
    }

    pub fn xi(&self) -> &VectorField<T> {
        &self.xi
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn nonneg(&self) -> bool {
        self.nonneg
    }

    pub fn with_alpha(mut self, alpha: T) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn geometry(&self) -> &Geometry<T> {
        self.xi.geometry()
    }

    /// Applies `P_i` in place to each channel's gradient of `w`.
    fn project(&self, channels: usize, w: &mut [T]) {
        let d = self.xi.dim();
        for (xi, wp) in self.xi.values().chunks_exact(d).zip(w.chunks_exact_mut(d * channels)) {
            for wc in wp.chunks_exact_mut(d) {
                let s: T = xi.iter().zip(wc.iter()).map(|(&a, &b)| a * b).sum();
                for (x, &e) in wc.iter_mut().zip(xi) {
                    *x -= s * e;
                }
            }
        }
    }

    fn check(&self, u: &ImageGrid<T>) -> Result<()> {
        if u.shape() != self.geometry().shape() {
            return Err(Error::ShapeMismatch(format!(
                "image {:?} vs side information {:?}",
                u.shape(),
                self.geometry().shape()
            )));
        }
        Ok(())
    }

    fn value_raw(&self, shape: &[usize], channels: usize, u: &[T], scratch: &mut Vec<T>) -> T {
        let d = shape.len();
        scratch.resize(u.len() * d, T::zero());
        gradient_into(shape, channels, u, scratch);
        self.project(channels, scratch);
        scratch.chunks_exact(d * channels).map(|w| w.iter().map(|&x| x * x).sum::<T>().sqrt()).sum()
    }

    /// `dTV(u; v)` without the weight `alpha`.
    pub fn value(&self, u: &ImageGrid<T>) -> Result<T> {
        self.check(u)?;
        Ok(self.value_raw(u.shape(), u.channels(), u.values(), &mut Vec::new()))
    }

    /// `alpha dTV(u; v)` plus the indicator of the constraint (`+inf` if
    /// violated).
    pub fn penalty(&self, u: &ImageGrid<T>) -> Result<T> {
        let v = self.alpha * self.value(u)?;
        if self.nonneg && u.values().iter().any(|&x| x < T::zero()) {
            return Ok(T::infinity());
        }
        Ok(v)
    }

    /// Approximate `argmin_y 1/2 |y - z|^2 + t alpha dTV(y) (+ i_+(y))`.
    ///
    /// `state` carries the dual variable between calls (warm start); pass a
    /// fresh [`ProxState::default`] for a cold start.
    pub fn prox(
        &self,
        z: &ImageGrid<T>,
        t: T,
        opts: &ProxOptions<T>,
        state: &mut ProxState<T>,
    ) -> Result<ProxResult<T>> {
        if !(t > T::zero()) {
            return Err(Error::ParamError(format!("prox step t = {t} must be positive")));
        }
        self.check(z)?;
        if self.nonneg && z.is_complex() {
            return Err(Error::FieldMismatch("nonnegativity needs a real image".into()));
        }
        let lambda = t * self.alpha;
        let shape = z.shape().to_vec();
        let ch = z.channels();
        let d = shape.len();
        let stride = d * ch;
        let nq = z.n_pixels() * stride;
        let zv = z.values();

        // dual iterate stored as q / lambda so it survives step-size changes
        if state.q.len() != nq {
            state.q = vec![T::zero(); nq];
        }
        let mut q: Vec<T> = state.q.iter().map(|&x| x * lambda).collect();
        project_ball(&mut q, stride, lambda);
        let mut q_old = q.clone();
        let mut r = q.clone();
        let mut pq = vec![T::zero(); nq];
        let mut div = vec![T::zero(); zv.len()];
        let mut y = vec![T::zero(); zv.len()];
        let mut grad = vec![T::zero(); nq];
        let mut scratch = Vec::new();
        let step = T::one() / T::lit(4.0 * d as f64);
        let mut tk = T::one();

        let primal_of = |y: &[T], scratch: &mut Vec<T>| -> T {
            let fit: T = y.iter().zip(zv).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() * T::lit(0.5);
            fit + lambda * self.value_raw(&shape, ch, y, scratch)
        };

        // y(q) = proj(z + div(P q)); returns <q, P grad y> in `grad`
        let recover = |q: &[T], pq: &mut [T], div: &mut [T], y: &mut [T], grad: &mut [T]| {
            pq.copy_from_slice(q);
            self.project(ch, pq);
            divergence_into(&shape, ch, pq, div);
            for ((yi, &zi), &di) in y.iter_mut().zip(zv).zip(div.iter()) {
                let v = zi + di;
                *yi = if self.nonneg { v.max(T::zero()) } else { v };
            }
            gradient_into(&shape, ch, y, grad);
            self.project(ch, grad);
        };

        let mut gap = T::infinity();
        let mut primal = T::zero();
        let mut iterations = 0;
        for k in 1..=opts.max_iters.max(1) {
            iterations = k;
            recover(&r, &mut pq, &mut div, &mut y, &mut grad);
            std::mem::swap(&mut q, &mut q_old);
            for ((qi, &ri), &gi) in q.iter_mut().zip(&r).zip(&grad) {
                *qi = ri + step * gi;
            }
            project_ball(&mut q, stride, lambda);

            // restart the momentum when it opposes the step just taken
            let align: T = q.iter().zip(&r).zip(&q_old).map(|((&a, &b), &c)| (a - b) * (a - c)).sum();
            let t_next = (T::one() + (T::one() + T::lit(4.0) * tk * tk).sqrt()) * T::lit(0.5);
            if align < T::zero() {
                tk = T::one();
                r.copy_from_slice(&q);
            } else {
                let beta = (tk - T::one()) / t_next;
                for ((ri, &a), &b) in r.iter_mut().zip(&q).zip(&q_old) {
                    *ri = a + beta * (a - b);
                }
                tk = t_next;
            }

            if k % opts.check_every.max(1) == 0 || k == opts.max_iters {
                recover(&q, &mut pq, &mut div, &mut y, &mut grad);
                let fit: T = y.iter().zip(zv).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() * T::lit(0.5);
                let dual = fit + q.iter().zip(&grad).map(|(&a, &b)| a * b).sum::<T>();
                primal = primal_of(&y, &mut scratch);
                gap = (primal - dual).max(T::zero());
                if gap <= opts.tol * (T::one() + primal.abs()) {
                    break;
                }
            }
        }
        let inv = T::one() / lambda;
        state.q = q.iter().map(|&x| x * inv).collect();
        Ok(ProxResult { y: ImageGrid::new(z.geometry().clone(), ch, y)?, gap, primal, iterations })
    }
}

fn project_ball<T: Real>(q: &mut [T], stride: usize, radius: T) {
    for w in q.chunks_exact_mut(stride) {
        let n = w.iter().map(|&x| x * x).sum::<T>().sqrt();
        if n > radius {
            let s = radius / n;
            w.iter_mut().for_each(|x| *x *= s);
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ProxOptions<T> {
    pub max_iters: usize,
    /// Stop once the duality gap is at most `tol * (1 + |primal|)`.
    pub tol: T,
    /// Gap evaluation period (each evaluation costs one extra iteration).
    pub check_every: usize,
}

impl<T: Real> Default for ProxOptions<T> {
    fn default() -> Self {
        Self { max_iters: 100, tol: T::lit(1e-6), check_every: 10 }
    }
}

/// Dual variable carried between prox evaluations.
#[derive(Clone, Debug, Default)]
pub struct ProxState<T> {
    q: Vec<T>,
}

impl<T> ProxState<T> {
    pub fn reset(&mut self) {
        self.q.clear();
    }
}

#[derive(Clone, Debug)]
pub struct ProxResult<T> {
    pub y: ImageGrid<T>,
    /// Duality gap certificate of `y`.
    pub gap: T,
    /// Prox objective `1/2 |y - z|^2 + t alpha dTV(y)` at `y`.
    pub primal: T,
    pub iterations: usize,
}

/// Plain isotropic total variation `sum_i |grad u_i|`.
pub fn tv_value<T: Real>(u: &ImageGrid<T>) -> T {
    let d = u.geometry().dim();
    let mut g = vec![T::zero(); u.values().len() * d];
    gradient_into(u.shape(), u.channels(), u.values(), &mut g);
    g.chunks_exact(d * u.channels()).map(|w| w.iter().map(|&x| x * x).sum::<T>().sqrt()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step_image(n: usize) -> ImageGrid<f64> {
        ImageGrid::from_fn(Geometry::square(n), |x| if x[0] + 0.3 * x[1] > 0.1 { 1.0 } else { 0.0 })
    }

    fn random_image(n: usize, seed: u64) -> ImageGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect();
        ImageGrid::real(Geometry::square(n), v).unwrap()
    }

    fn rms(a: &ImageGrid<f64>, b: &ImageGrid<f64>) -> f64 {
        let s: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum();
        (s / a.values().len() as f64).sqrt()
    }

    #[test]
    fn gamma_zero_is_tv_bitwise() {
        let v = step_image(20);
        let u = random_image(20, 1);
        let ctx = DtvContext::new(&v, 0.0, 0.01, 1.0, false).unwrap();
        assert!(ctx.xi().values().iter().all(|&x| x == 0.0));
        assert_eq!(ctx.value(&u).unwrap().to_bits(), tv_value(&u).to_bits());
    }

    #[test]
    fn constant_side_information_gives_zero_xi() {
        let v = ImageGrid::constant(Geometry::square(8), 2.0);
        let (xi, eps) = xi_field(&v, 0.9995, 0.01).unwrap();
        assert!(xi.values().iter().all(|&x| x == 0.0));
        assert_eq!(eps, 0.01);
        assert!(xi_field(&v, 1.0, 0.01).is_err());
    }

    #[test]
    fn sharp_edges_saturate_xi() {
        let v = step_image(32);
        let gamma = 0.9995;
        let (xi, _) = xi_field(&v, gamma, 0.01).unwrap();
        let m = xi.max_norm();
        assert!(m > 0.99 * gamma && m < gamma, "{m}");
    }

    #[test]
    fn side_information_attenuates_own_edges() {
        let v = step_image(32);
        let ctx = DtvContext::new(&v, 0.9995, 0.01, 1.0, false).unwrap();
        assert!(ctx.value(&v).unwrap() < 0.01 * tv_value(&v));
        let c = ImageGrid::constant(Geometry::square(32), 4.0);
        assert_eq!(ctx.value(&c).unwrap(), 0.0);
    }

    #[test]
    fn tiny_weight_returns_projection() {
        let z = random_image(12, 3).with_values(random_image(12, 3).values().iter().map(|x| x - 0.5).collect());
        let ctx = DtvContext::tv(z.geometry(), 1e-14, true).unwrap();
        let r = ctx.prox(&z, 1.0, &ProxOptions::default(), &mut ProxState::default()).unwrap();
        for (y, zz) in r.y.values().iter().zip(z.values()) {
            assert!((y - zz.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_input_is_fixed() {
        let z = ImageGrid::constant(Geometry::square(10), -0.7);
        let ctx = DtvContext::tv(z.geometry(), 0.3, false).unwrap();
        let r = ctx.prox(&z, 2.0, &ProxOptions::default(), &mut ProxState::default()).unwrap();
        assert!(rms(&r.y, &z) < 1e-14);
    }

    #[test]
    fn matches_long_run_reference() {
        let z = random_image(16, 7);
        let ctx = DtvContext::tv(z.geometry(), 0.1, false).unwrap();
        let long = ProxOptions { max_iters: 100_000, tol: 0.0, check_every: 1000 };
        let reference = ctx.prox(&z, 1.0, &long, &mut ProxState::default()).unwrap();
        let opts = ProxOptions { max_iters: 2000, tol: 1e-8, check_every: 10 };
        let r = ctx.prox(&z, 1.0, &opts, &mut ProxState::default()).unwrap();
        assert!(r.gap <= 1e-8 * (1.0 + r.primal), "gap {} after {}", r.gap, r.iterations);
        assert!(rms(&r.y, &reference.y) <= 1e-6);
    }

    #[test]
    fn nonneg_output_and_shrinkage() {
        let v = step_image(16);
        let ctx = DtvContext::new(&v, 0.9995, 0.01, 0.2, true).unwrap();
        for seed in 0..5 {
            let z =
                random_image(16, seed).with_values(random_image(16, seed).values().iter().map(|x| x - 0.3).collect());
            let r = ctx.prox(&z, 0.5, &ProxOptions::default(), &mut ProxState::default()).unwrap();
            assert!(r.y.values().iter().all(|&x| x >= -1e-12));
            let zp = z.with_values(z.values().iter().map(|x| x.max(0.0)).collect());
            assert!(ctx.value(&r.y).unwrap() <= ctx.value(&zp).unwrap() + 1e-10);
        }
    }

    #[test]
    fn warm_start_reaches_tolerance_faster() {
        let v = step_image(24);
        let ctx = DtvContext::new(&v, 0.9995, 0.01, 0.05, false).unwrap();
        let z = random_image(24, 11);
        let opts = ProxOptions { max_iters: 5000, tol: 1e-9, check_every: 5 };
        let mut state = ProxState::default();
        let cold = ctx.prox(&z, 1.0, &opts, &mut state).unwrap();
        let warm = ctx.prox(&z, 1.0, &opts, &mut state).unwrap();
        assert!(warm.iterations < cold.iterations, "{} vs {}", warm.iterations, cold.iterations);
    }

    #[test]
    fn complex_prox_couples_channels() {
        let re = random_image(12, 5);
        let z = ImageGrid::new(re.geometry().clone(), 2, re.values().iter().flat_map(|&x| [x, 0.0]).collect()).unwrap();
        // a real image embedded as complex has the same prox as its real part
        let ctx = DtvContext::tv(z.geometry(), 0.05, false).unwrap();
        let opts = ProxOptions { max_iters: 3000, tol: 1e-10, check_every: 10 };
        let a = ctx.prox(&z, 1.0, &opts, &mut ProxState::default()).unwrap();
        let b = ctx.prox(&re, 1.0, &opts, &mut ProxState::default()).unwrap();
        for (p, &q) in a.y.values().chunks(2).zip(b.y.values()) {
            assert!((p[0] - q).abs() < 1e-7 && p[1].abs() < 1e-12);
        }
    }
}
