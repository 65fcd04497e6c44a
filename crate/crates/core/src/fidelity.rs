//! Smooth data-fidelity terms `D(z; f)` with their gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FidelityKind {
    L2,
    Kl,
}

/// Least squares `1/2 |z - f|^2`, or the Kullback-Leibler divergence
/// `sum (z + r) - f + f log(f / (z + r))` for Poisson counts `f` with a
/// constant background `r`.
#[derive(Clone, Debug)]
pub struct Fidelity<T> {
    kind: FidelityKind,
    data: Vec<T>,
    background: T,
}

impl<T: Real> Fidelity<T> {
    pub fn l2(data: Vec<T>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError("non-finite data".into()));
        }
        Ok(Self { kind: FidelityKind::L2, data, background: T::zero() })
    }

    pub fn kl(data: Vec<T>, background: T) -> Result<Self> {
        if !(background > T::zero()) {
            return Err(Error::DomainError("Kullback-Leibler background must be positive".into()));
        }
        if data.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
            return Err(Error::DomainError("Kullback-Leibler data must be finite and nonnegative".into()));
        }
        Ok(Self { kind: FidelityKind::Kl, data, background })
    }

    pub fn new(kind: FidelityKind, data: Vec<T>, background: T) -> Result<Self> {
        match kind {
            FidelityKind::L2 => Self::l2(data),
            FidelityKind::Kl => Self::kl(data, background),
        }
    }

    pub fn kind(&self) -> FidelityKind {
        self.kind
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn background(&self) -> T {
        self.background
    }

    fn check(&self, z: &[T]) -> Result<()> {
        if z.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!("data length {} vs {}", z.len(), self.data.len())));
        }
        if self.kind == FidelityKind::Kl {
            if let Some(i) = z.iter().position(|&v| !(v + self.background > T::zero())) {
                return Err(Error::DomainError(format!("z + r <= 0 at index {i}")));
            }
        }
        Ok(())
    }

    pub fn value(&self, z: &[T]) -> Result<T> {
        self.check(z)?;
        Ok(self.value_unchecked(z))
    }

    /// Value, or `+inf` outside the domain (used by line searches).
    pub fn value_or_inf(&self, z: &[T]) -> T {
        match self.check(z) {
            Ok(()) => self.value_unchecked(z),
            Err(_) => T::infinity(),
        }
    }

    fn value_unchecked(&self, z: &[T]) -> T {
        match self.kind {
            FidelityKind::L2 => {
                let s: T = z.iter().zip(&self.data).map(|(&a, &b)| (a - b) * (a - b)).sum();
                s * T::lit(0.5)
            }
            FidelityKind::Kl => z
                .iter()
                .zip(&self.data)
                .map(|(&zi, &fi)| {
                    let m = zi + self.background;
                    if fi > T::zero() {
                        m - fi + fi * (fi / m).ln()
                    } else {
                        m
                    }
                })
                .sum(),
        }
    }

    pub fn gradient(&self, z: &[T]) -> Result<Vec<T>> {
        self.check(z)?;
        Ok(match self.kind {
            FidelityKind::L2 => z.iter().zip(&self.data).map(|(&a, &b)| a - b).collect(),
            FidelityKind::Kl => {
                z.iter().zip(&self.data).map(|(&zi, &fi)| T::one() - fi / (zi + self.background)).collect()
            }
        })
    }
}
