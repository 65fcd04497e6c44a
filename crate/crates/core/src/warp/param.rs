//! Low-dimensional deformation families and the adjoints of their Jacobians.
//!
//! Affine parameters are stored as a deviation from the identity:
//! `x -> [[1 + p1, p2], [p3, 1 + p4]] x + (p5, p6)`, so all-zero parameters
//! give the identity field.

use serde::{Deserialize, Serialize};

use super::DeformationField;
use crate::error::{Error, Result};
use crate::grid::{Geometry, VectorField};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams<T>(pub [T; 6]);

impl<T: Real> AffineParams<T> {
    pub fn zero() -> Self {
        Self([T::zero(); 6])
    }

    /// Parameters of `x -> m x + b`.
    pub fn from_matrix(m: [[T; 2]; 2], b: [T; 2]) -> Self {
        Self([m[0][0] - T::one(), m[0][1], m[1][0], m[1][1] - T::one(), b[0], b[1]])
    }

    /// `x -> scale * R_theta x + b`.
    pub fn zoom_rigid(scale: T, theta: T, b: [T; 2]) -> Self {
        let (s, c) = theta.sin_cos();
        Self::from_matrix([[scale * c, -scale * s], [scale * s, scale * c]], b)
    }

    pub fn rigid(theta: T, b: [T; 2]) -> Self {
        Self::zoom_rigid(T::one(), theta, b)
    }

    /// `x -> S_a x + b` with `S_a = [[1, a], [0, 1]]`.
    pub fn shear(a: T, b: [T; 2]) -> Self {
        Self::from_matrix([[T::one(), a], [T::zero(), T::one()]], b)
    }

    pub fn matrix(&self) -> [[T; 2]; 2] {
        let p = &self.0;
        [[T::one() + p[0], p[1]], [p[2], T::one() + p[3]]]
    }

    pub fn translation(&self) -> [T; 2] {
        [self.0[4], self.0[5]]
    }

    pub fn apply(&self, x: &[T]) -> [T; 2] {
        let m = self.matrix();
        [m[0][0] * x[0] + m[0][1] * x[1] + self.0[4], m[1][0] * x[0] + m[1][1] * x[1] + self.0[5]]
    }

    /// Parameters of the inverse map, if the matrix is invertible.
    pub fn inverse(&self) -> Option<Self> {
        let m = self.matrix();
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() <= T::epsilon() {
            return None;
        }
        let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
        let b = self.translation();
        let nb = [-(inv[0][0] * b[0] + inv[0][1] * b[1]), -(inv[1][0] * b[0] + inv[1][1] * b[1])];
        Some(Self::from_matrix(inv, nb))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn from_slice(p: &[T]) -> Result<Self> {
        let arr: [T; 6] = p
            .try_into()
            .map_err(|_| Error::ParamError(format!("affine parameters need 6 entries, got {}", p.len())))?;
        Ok(Self(arr))
    }
}

/// Rotation by `theta` followed by translation `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidParams<T> {
    pub theta: T,
    pub b: [T; 2],
}

impl<T: Real> RigidParams<T> {
    /// Normalizes the angle into `(-pi, pi]`.
    pub fn new(theta: T, b: [T; 2]) -> Self {
        let two_pi = T::TAU();
        let mut t = theta % two_pi;
        if t <= -T::PI() {
            t += two_pi;
        } else if t > T::PI() {
            t -= two_pi;
        }
        Self { theta: t, b }
    }

    pub fn to_vec(&self) -> Vec<T> {
        vec![self.theta, self.b[0], self.b[1]]
    }

    pub fn to_affine(&self) -> AffineParams<T> {
        AffineParams::rigid(self.theta, self.b)
    }
}

/// `P(phi)` for affine parameters on every pixel center of `grid`.
pub fn affine_field<T: Real>(p: &AffineParams<T>, grid: &Geometry<T>) -> DeformationField<T> {
    DeformationField::from_fn(grid, |x| p.apply(x).to_vec())
}

/// `P* g`: adjoint of the (linear) affine parametrization applied to a
/// per-pixel 2-vector field.
pub fn affine_param_adjoint<T: Real>(g: &VectorField<T>, grid: &Geometry<T>) -> AffineParams<T> {
    affine_adjoint_raw(g.values(), grid)
}

fn affine_adjoint_raw<T: Real>(g: &[T], grid: &Geometry<T>) -> AffineParams<T> {
    let mut out = [T::zero(); 6];
    let x1 = grid.axis_coords(0);
    let x2 = grid.axis_coords(1);
    let n1 = grid.shape()[1];
    for (i, &a) in x1.iter().enumerate() {
        for (j, &b) in x2.iter().enumerate() {
            let p = i * n1 + j;
            let (g1, g2) = (g[2 * p], g[2 * p + 1]);
            out[0] += g1 * a;
            out[1] += g1 * b;
            out[2] += g2 * a;
            out[3] += g2 * b;
            out[4] += g1;
            out[5] += g2;
        }
    }
    AffineParams(out)
}

pub fn rigid_field<T: Real>(r: &RigidParams<T>, grid: &Geometry<T>) -> DeformationField<T> {
    affine_field(&r.to_affine(), grid)
}

/// Adjoint of the Jacobian of `(theta, b) -> (x -> R_theta x + b)` at `r`,
/// applied to `g`; returns `(d_theta, d_b)`.
pub fn rigid_param_jacobian_adjoint<T: Real>(
    r: &RigidParams<T>,
    g: &VectorField<T>,
    grid: &Geometry<T>,
) -> (T, [T; 2]) {
    rigid_adjoint_raw(r.theta, g.values(), grid)
}

fn rigid_adjoint_raw<T: Real>(theta: T, g: &[T], grid: &Geometry<T>) -> (T, [T; 2]) {
    // d/dtheta R_theta = [[-s, -c], [c, -s]]
    let (s, c) = theta.sin_cos();
    let x1 = grid.axis_coords(0);
    let x2 = grid.axis_coords(1);
    let n1 = grid.shape()[1];
    let mut dtheta = T::zero();
    let mut db = [T::zero(); 2];
    for (i, &a) in x1.iter().enumerate() {
        for (j, &b) in x2.iter().enumerate() {
            let p = i * n1 + j;
            let (g1, g2) = (g[2 * p], g[2 * p + 1]);
            dtheta += g1 * (-s * a - c * b) + g2 * (c * a - s * b);
            db[0] += g1;
            db[1] += g2;
        }
    }
    (dtheta, db)
}

/// Which parametric family the solver optimizes over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parametrization {
    /// Six parameters, deviation from the identity.
    #[default]
    Affine,
    /// `(theta, b1, b2)`.
    Rigid,
}

impl Parametrization {
    pub fn n_params(self) -> usize {
        match self {
            Parametrization::Affine => 6,
            Parametrization::Rigid => 3,
        }
    }

    fn check<T>(self, params: &[T]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::ParamError(format!(
                "{self:?} parametrization takes {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        Ok(())
    }

    /// Equivalent affine parameters (deviation from identity).
    pub fn to_affine<T: Real>(self, params: &[T]) -> Result<AffineParams<T>> {
        self.check(params)?;
        Ok(match self {
            Parametrization::Affine => AffineParams::from_slice(params)?,
            Parametrization::Rigid => AffineParams::rigid(params[0], [params[1], params[2]]),
        })
    }

    pub fn field<T: Real>(self, params: &[T], grid: &Geometry<T>) -> Result<DeformationField<T>> {
        Ok(affine_field(&self.to_affine(params)?, grid))
    }

    /// `dP(params)^* g` for a per-pixel 2-vector field `g` on `grid`.
    pub fn jacobian_adjoint<T: Real>(self, params: &[T], g: &VectorField<T>, grid: &Geometry<T>) -> Result<Vec<T>> {
        self.check(params)?;
        if g.channels() != 1 || g.dim() != 2 || g.geometry().shape() != grid.shape() {
            return Err(Error::ShapeMismatch("parameter adjoint expects one 2-vector per pixel".into()));
        }
        Ok(match self {
            Parametrization::Affine => affine_adjoint_raw(g.values(), grid).0.to_vec(),
            Parametrization::Rigid => {
                let (dt, db) = rigid_adjoint_raw(params[0], g.values(), grid);
                vec![dt, db[0], db[1]]
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vf(g: &Geometry<f64>, seed: u64) -> VectorField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VectorField::new(g.clone(), 1, (0..2 * g.n_pixels()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_params_is_identity() {
        let g = Geometry::<f64>::square(5);
        let f = affine_field(&AffineParams::zero(), &g);
        assert_eq!(f.positions(), DeformationField::identity(&g).positions());
    }

    #[test]
    fn pure_translation() {
        let g = Geometry::<f64>::square(4);
        let f = affine_field(&AffineParams([0.0, 0.0, 0.0, 0.0, 0.06, -0.04]), &g);
        for (x, y) in g.centers().chunks_exact(2).zip(f.positions().chunks_exact(2)) {
            assert!((y[0] - x[0] - 0.06).abs() < 1e-15 && (y[1] - x[1] + 0.04).abs() < 1e-15);
        }
    }

    #[test]
    fn zoom_rigid_matrix_deviation() {
        let p = AffineParams::zoom_rigid(0.85, 0.1, [-0.02, -0.08]);
        let (s, c) = 0.1f64.sin_cos();
        let expect = [0.85 * c - 1.0, -0.85 * s, 0.85 * s, 0.85 * c - 1.0, -0.02, -0.08];
        for (a, b) in p.0.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(p.apply(&[0.0, 0.0]), [-0.02, -0.08]);
    }

    #[test]
    fn inverse_composes_to_identity() {
        let p: AffineParams<f64> = AffineParams::zoom_rigid(0.85, 0.3, [0.1, -0.2]);
        let q = p.inverse().unwrap();
        let y = q.apply(&p.apply(&[0.3, -0.7]));
        assert!((y[0] - 0.3).abs() < 1e-14 && (y[1] + 0.7).abs() < 1e-14);
    }

    #[test]
    fn adjoint_of_zero_field() {
        let g = Geometry::<f64>::square(5);
        let z = VectorField::zeros(g.clone(), 1);
        assert_eq!(affine_param_adjoint(&z, &g), AffineParams::zero());
    }

    #[test]
    fn affine_adjoint_matches_dense_matrix() {
        let g = Geometry::<f64>::square(5);
        let id = g.centers();
        // columns of the linear map params -> P(params) - id
        let cols: Vec<Vec<f64>> = (0..6)
            .map(|k| {
                let mut e = [0.0; 6];
                e[k] = 1.0;
                affine_field(&AffineParams(e), &g).positions().iter().zip(&id).map(|(a, b)| a - b).collect()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi: Vec<f64> = (0..6).map(|_| rng.random_range(-0.2..0.2)).collect();
        let gv = random_vf(&g, 2);
        let pg = affine_param_adjoint(&gv, &g);
        let field: Vec<f64> = affine_field(&AffineParams::from_slice(&phi).unwrap(), &g)
            .positions()
            .iter()
            .zip(&id)
            .map(|(a, b)| a - b)
            .collect();
        assert!((dot(&field, gv.values()) - dot(&phi, &pg.0)).abs() <= 1e-12);
        for k in 0..6 {
            assert!((dot(&cols[k], gv.values()) - pg.0[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_field_adjoint_on_symmetric_grid() {
        let g = Geometry::<f64>::square(5);
        let mut v = vec![0.0; 50];
        v.iter_mut().step_by(2).for_each(|x| *x = 1.0);
        let gv = VectorField::new(g.clone(), 1, v).unwrap();
        let p = affine_param_adjoint(&gv, &g);
        let expect = [0.0, 0.0, 0.0, 0.0, 25.0, 0.0];
        for (a, b) in p.0.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rigid_identity_and_pet_field() {
        let g = Geometry::<f64>::square(6);
        let id = rigid_field(&RigidParams::new(0.0, [0.0, 0.0]), &g);
        assert_eq!(id.positions(), g.centers().as_slice());
        let r = RigidParams::new(0.1, [0.02, 0.08]);
        let f = rigid_field(&r, &g);
        let (s, c) = 0.1f64.sin_cos();
        for (x, y) in g.centers().chunks_exact(2).zip(f.positions().chunks_exact(2)) {
            assert!((y[0] - (c * x[0] - s * x[1] + 0.02)).abs() < 1e-15);
            assert!((y[1] - (s * x[0] + c * x[1] + 0.08)).abs() < 1e-15);
        }
    }

    #[test]
    fn rigid_angle_canonical_range() {
        let r = RigidParams::new(3.0 * std::f64::consts::PI, [0.0, 0.0]);
        assert!((r.theta - std::f64::consts::PI).abs() < 1e-12);
        let r = RigidParams::new(-std::f64::consts::PI, [0.0, 0.0]);
        assert!((r.theta - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn rigid_jacobian_adjoint_matches_finite_differences() {
        let g = Geometry::<f64>::square(7);
        let r = RigidParams::new(0.37, [0.05, -0.1]);
        let gv = random_vf(&g, 9);
        let (dt, db) = rigid_param_jacobian_adjoint(&r, &gv, &g);
        let h = 1e-6;
        let objective =
            |p: [f64; 3]| dot(rigid_field(&RigidParams::new(p[0], [p[1], p[2]]), &g).positions(), gv.values());
        let base = [r.theta, r.b[0], r.b[1]];
        let analytic = [dt, db[0], db[1]];
        for k in 0..3 {
            let mut pp = base;
            let mut pm = base;
            pp[k] += h;
            pm[k] -= h;
            let fd = (objective(pp) - objective(pm)) / (2.0 * h);
            assert!(
                (fd - analytic[k]).abs() <= 1e-8 * analytic[k].abs().max(1.0),
                "param {k}: {fd} vs {}",
                analytic[k]
            );
        }
    }

    #[test]
    fn parametrization_dispatch() {
        let g = Geometry::<f64>::square(4);
        let gv = random_vf(&g, 3);
        let a = Parametrization::Affine.jacobian_adjoint(&[0.0; 6], &gv, &g).unwrap();
        assert_eq!(a, affine_param_adjoint(&gv, &g).0.to_vec());
        assert!(Parametrization::Rigid.field(&[0.0; 6], &g).is_err());
        let aff = Parametrization::Rigid.to_affine(&[0.1, 0.02, 0.08]).unwrap();
        assert_eq!(aff, AffineParams::rigid(0.1, [0.02, 0.08]));
    }
}
