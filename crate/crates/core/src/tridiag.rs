//! Tridiagonal matrices and the Thomas algorithm, real or complex.

use num_complex::Complex64;
pub use scalar::Scalar;

use crate::error::{Error, Result};

/// Minimal scalar abstraction so one solver serves `f64` and `Complex64`.
mod scalar {
    use num_complex::Complex64;
    use std::ops::{Add, Div, Mul, Neg, Sub};

    pub trait Scalar:
        Copy
        + Add<Output = Self>
        + Sub<Output = Self>
        + Mul<Output = Self>
        + Div<Output = Self>
        + Neg<Output = Self>
        + From<f64>
    {
        fn modulus(self) -> f64;
    }

    impl Scalar for f64 {
        fn modulus(self) -> f64 {
            self.abs()
        }
    }

    impl Scalar for Complex64 {
        fn modulus(self) -> f64 {
            self.norm()
        }
    }
}

/// Symmetric real tridiagonal matrix: `diag[i]` and `off[i]` = entry `(i, i+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let n = self.len();
        assert_eq!(x.len(), n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let mut v = T::from(self.diag[i]) * x[i];
            if i > 0 {
                v = v + T::from(self.off[i - 1]) * x[i - 1];
            }
            if i + 1 < n {
                v = v + T::from(self.off[i]) * x[i + 1];
            }
            y.push(v);
        }
        y
    }

    /// `self + shift * I`.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            diag: self.diag.iter().map(|d| d + shift).collect(),
            off: self.off.clone(),
        }
    }

    pub fn factor(&self) -> Result<Factored<f64>> {
        Factored::new(self.off.clone(), self.diag.clone(), self.off.clone())
    }

    /// Factorization of `a * I + b * self` for complex `a`, `b`.
    pub fn factor_affine(&self, a: Complex64, b: Complex64) -> Result<Factored<Complex64>> {
        let diag = self.diag.iter().map(|&d| a + b * d).collect();
        let off: Vec<Complex64> = self.off.iter().map(|&o| b * o).collect();
        Factored::new(off.clone(), diag, off)
    }
}

/// LU factors of a general tridiagonal matrix (no pivoting).
#[derive(Debug, Clone)]
pub struct Factored<T> {
    lower: Vec<T>,
    upper: Vec<T>,
    // modified pivots
    pivots: Vec<T>,
}

impl<T: Scalar> Factored<T> {
    /// `sub[i]` = entry `(i+1, i)`, `sup[i]` = entry `(i, i+1)`.
    pub fn new(sub: Vec<T>, diag: Vec<T>, sup: Vec<T>) -> Result<Self> {
        let n = diag.len();
        if n == 0 || sub.len() + 1 != n || sup.len() + 1 != n {
            return Err(Error::SolveFailure("inconsistent tridiagonal sizes".into()));
        }
        let scale = diag.iter().fold(0.0f64, |m, d| m.max(d.modulus()));
        let mut pivots = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n - 1);
        pivots.push(diag[0]);
        for i in 1..n {
            let prev = pivots[i - 1];
            if !(prev.modulus() > 1e-300 * scale.max(1.0)) {
                return Err(Error::SolveFailure(format!("zero pivot at row {}", i - 1)));
            }
            let l = sub[i - 1] / prev;
            lower.push(l);
            pivots.push(diag[i] - l * sup[i - 1]);
        }
        if !(pivots[n - 1].modulus() > 0.0) {
            return Err(Error::SolveFailure("singular matrix".into()));
        }
        Ok(Self {
            lower,
            upper: sup,
            pivots,
        })
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let n = self.pivots.len();
        assert_eq!(rhs.len(), n);
        let mut y = rhs.to_vec();
        for i in 1..n {
            y[i] = y[i] - self.lower[i - 1] * y[i - 1];
        }
        y[n - 1] = y[n - 1] / self.pivots[n - 1];
        for i in (0..n - 1).rev() {
            y[i] = (y[i] - self.upper[i] * y[i + 1]) / self.pivots[i];
        }
        y
    }

    pub fn solve_in_place(&self, y: &mut [T]) {
        let n = self.pivots.len();
        assert_eq!(y.len(), n);
        for i in 1..n {
            y[i] = y[i] - self.lower[i - 1] * y[i - 1];
        }
        y[n - 1] = y[n - 1] / self.pivots[n - 1];
        for i in (0..n - 1).rev() {
            y[i] = (y[i] - self.upper[i] * y[i + 1]) / self.pivots[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn real_solve_roundtrip() {
        let m = SymTridiag {
            diag: vec![4.0, 5.0, 6.0, 7.0],
            off: vec![1.0, -2.0, 0.5],
        };
        let x = vec![1.0, -1.0, 2.0, 0.25];
        let b = m.apply(&x);
        let sol = m.factor().unwrap().solve(&b);
        for (a, e) in sol.iter().zip(&x) {
            assert_relative_eq!(a, e, epsilon = 1e-13);
        }
    }

    #[test]
    fn complex_affine_solve() {
        let m = SymTridiag {
            diag: vec![2.0, 2.0, 2.0],
            off: vec![-1.0, -1.0],
        };
        let a = Complex64::new(1.0, 0.0);
        let b = Complex64::new(0.0, 0.3);
        let f = m.factor_affine(a, b).unwrap();
        let x = vec![
            Complex64::new(1.0, 2.0),
            Complex64::new(-0.5, 0.0),
            Complex64::new(0.0, 1.0),
        ];
        let mx = m.apply(&x);
        let rhs: Vec<Complex64> = x.iter().zip(&mx).map(|(xi, mi)| a * xi + b * mi).collect();
        let sol = f.solve(&rhs);
        for (s, e) in sol.iter().zip(&x) {
            assert!((s - e).norm() < 1e-13);
        }
    }

    #[test]
    fn singular_is_reported() {
        let m = SymTridiag {
            diag: vec![0.0, 1.0],
            off: vec![1.0],
        };
        assert!(matches!(m.factor(), Err(Error::SolveFailure(_))));
    }
}
