//! Uniform mesh on `[-L, L]`, sampled fields, trapezoidal quadrature and the
//! weighted norms used by the rest of the crate.
//!
//! The mesh always has an odd number of nodes so that `x = 0` is a node: the
//! delta potential is lumped onto that node and every weight involving `|x|`
//! has its kink there.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    half_width: f64,
    node_count: usize,
}

impl Grid {
    pub fn new(half_width: f64, node_count: usize) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::NonPositiveL(half_width));
        }
        if node_count < 3 {
            return Err(Error::TooFewNodes(node_count));
        }
        if node_count % 2 == 0 {
            return Err(Error::EvenN(node_count));
        }
        Ok(Self {
            half_width,
            node_count,
        })
    }

    /// Grid with the requested spacing, rounded so that `L / h` is an integer.
    pub fn with_spacing(half_width: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::NonPositiveL(spacing));
        }
        let half = (half_width / spacing).round() as usize;
        Self::new(half_width, 2 * half.max(1) + 1)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn len(&self) -> usize {
        self.node_count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.node_count - 1) as f64
    }

    pub fn center(&self) -> usize {
        (self.node_count - 1) / 2
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        let c = self.center() as isize;
        (i as isize - c) as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.node_count).map(|i| self.x(i)).collect()
    }

    /// Trapezoid weights: `h` in the interior, `h/2` at the two endpoints.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        if i == 0 || i + 1 == self.node_count {
            0.5 * h
        } else {
            h
        }
    }

    /// Same grid refined by a factor of two (the old nodes are kept).
    pub fn refined(&self) -> Self {
        Self {
            half_width: self.half_width,
            node_count: 2 * self.node_count - 1,
        }
    }

    /// Trapezoidal integral of real samples.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.node_count);
        values
            .iter()
            .enumerate()
            .map(|(i, v)| self.weight(i) * v)
            .sum()
    }
}

/// Samples of a function on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    grid: Grid,
    values: Vec<T>,
}

pub type ComplexField = Field<Complex64>;
pub type RealField = Field<f64>;

impl<T: Copy> Field<T> {
    pub fn from_values(grid: Grid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> T) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.x(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at_center(&self) -> T {
        self.values[self.grid.center()]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Field<U> {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise map that also sees the node coordinate.
    pub fn map_x<U: Copy>(&self, f: impl Fn(f64, T) -> U) -> Field<U> {
        Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .enumerate()
                .map(|(i, &v)| f(self.grid.x(i), v))
                .collect(),
        }
    }

    pub fn zip_with<U: Copy, V: Copy>(
        &self,
        other: &Field<U>,
        f: impl Fn(T, U) -> V,
    ) -> Result<Field<V>> {
        self.check_grid(other)?;
        Ok(Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_grid<U>(&self, other: &Field<U>) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

impl ComplexField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|v| v * c)
    }

    pub fn real_part(&self) -> RealField {
        self.map(|v| v.re)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Multiplies by `i`.
    pub fn times_i(&self) -> Self {
        self.map(|v| v * I)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: Complex64, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + c * b)
    }
}

impl RealField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn to_complex(&self) -> ComplexField {
        self.map(|v| Complex64::new(v, 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

macro_rules! field_binop {
    ($tr:ident, $method:ident, $op:tt) => {
        impl<T> $tr<&Field<T>> for &Field<T>
        where
            T: Copy + $tr<Output = T>,
        {
            type Output = Field<T>;

            fn $method(self, rhs: &Field<T>) -> Field<T> {
                assert_eq!(self.grid, rhs.grid, "fields live on different grids");
                Field {
                    grid: self.grid,
                    values: self
                        .values
                        .iter()
                        .zip(&rhs.values)
                        .map(|(&a, &b)| a $op b)
                        .collect(),
                }
            }
        }
    };
}

field_binop!(Add, add, +);
field_binop!(Sub, sub, -);

impl<T> Neg for &Field<T>
where
    T: Copy + Neg<Output = T>,
{
    type Output = Field<T>;

    fn neg(self) -> Field<T> {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&a| -a).collect(),
        }
    }
}

impl Mul<&ComplexField> for f64 {
    type Output = ComplexField;

    fn mul(self, rhs: &ComplexField) -> ComplexField {
        rhs.map(|v| v * self)
    }
}

impl Mul<&ComplexField> for Complex64 {
    type Output = ComplexField;

    fn mul(self, rhs: &ComplexField) -> ComplexField {
        rhs.map(|v| v * self)
    }
}

impl Mul<&RealField> for f64 {
    type Output = RealField;

    fn mul(self, rhs: &RealField) -> RealField {
        rhs.map(|v| v * self)
    }
}

/// The real bilinear pairing `<f, g> = Re ∫ f conj(g) dx` (trapezoid rule).
pub fn inner(f: &ComplexField, g: &ComplexField) -> Result<f64> {
    f.check_grid(g)?;
    let grid = f.grid;
    Ok(f.values
        .iter()
        .zip(&g.values)
        .enumerate()
        .map(|(i, (a, b))| grid.weight(i) * (a.re * b.re + a.im * b.im))
        .sum())
}

/// Real-field version of [`inner`].
pub fn inner_real(f: &RealField, g: &RealField) -> Result<f64> {
    f.check_grid(g)?;
    let grid = f.grid;
    Ok(f.values
        .iter()
        .zip(&g.values)
        .enumerate()
        .map(|(i, (a, b))| grid.weight(i) * a * b)
        .sum())
}

/// Centered differences in the interior, second-order one-sided stencils at
/// the two endpoints.
pub fn derivative(f: &ComplexField) -> ComplexField {
    let n = f.len();
    let h = f.grid.spacing();
    let v = &f.values;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    }
    if n >= 3 {
        out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
        out[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    }
    Field {
        grid: f.grid,
        values: out,
    }
}

/// `<x> = (1 + x^2)^{1/2}`.
#[inline]
pub fn japanese_bracket(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormKind {
    L2,
    /// `‖e^{γ|x|} u‖_{L²}`
    L2Gamma(f64),
    H1,
    /// `‖e^{γ|x|} u‖_{H¹}`
    H1Gamma(f64),
    /// `‖e^{-γ|x|} u‖_{H¹}`
    H1MinusGamma(f64),
    /// `(‖w'‖² + ‖<x>^{-2} w‖²)^{1/2}`
    X,
}

fn weighted(f: &ComplexField, gamma: f64) -> ComplexField {
    f.map_x(|x, v| v * (gamma * x.abs()).exp())
}

fn l2_sq(f: &ComplexField) -> f64 {
    let grid = f.grid;
    f.values
        .iter()
        .enumerate()
        .map(|(i, v)| grid.weight(i) * v.norm_sqr())
        .sum()
}

fn h1_sq(f: &ComplexField) -> f64 {
    l2_sq(f) + l2_sq(&derivative(f))
}

pub fn norm(f: &ComplexField, kind: NormKind) -> Result<f64> {
    let sq = match kind {
        NormKind::L2 => l2_sq(f),
        NormKind::L2Gamma(g) => l2_sq(&weighted(f, g)),
        NormKind::H1 => h1_sq(f),
        NormKind::H1Gamma(g) => h1_sq(&weighted(f, g)),
        NormKind::H1MinusGamma(g) => h1_sq(&weighted(f, -g)),
        NormKind::X => {
            let decayed = f.map_x(|x, v| v / (1.0 + x * x));
            l2_sq(&derivative(f)) + l2_sq(&decayed)
        }
    };
    if !sq.is_finite() {
        return Err(Error::NonFinite("norm"));
    }
    Ok(sq.sqrt())
}

pub fn norm_real(f: &RealField, kind: NormKind) -> Result<f64> {
    norm(&f.to_complex(), kind)
}

/// Smooth random field: a sum of `bumps` complex gaussians with centers in
/// `[-window, window]` and widths in `[0.5, 3]`, normalized to unit `H¹`.
pub fn random_smooth_field<R: rand::Rng>(
    grid: Grid,
    rng: &mut R,
    bumps: usize,
    window: f64,
) -> ComplexField {
    let params: Vec<(f64, f64, f64, Complex64)> = (0..bumps)
        .map(|_| {
            let c = rng.gen_range(-window..=window);
            let w = rng.gen_range(0.5..3.0);
            let k = rng.gen_range(-2.0..2.0);
            let a = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            (c, w, k, a)
        })
        .collect();
    let f = ComplexField::from_fn(grid, |x| {
        params
            .iter()
            .map(|&(c, w, k, a)| {
                let t = (x - c) / w;
                a * (-t * t).exp() * Complex64::from_polar(1.0, k * x)
            })
            .sum()
    });
    let n = norm(&f, NormKind::H1).unwrap_or(1.0);
    f.map(|v| v / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn phi(grid: Grid) -> ComplexField {
        ComplexField::from_fn(grid, |x| {
            Complex64::new((0.5f64).sqrt() * (-0.5 * x.abs()).exp(), 0.0)
        })
    }

    #[test]
    fn grid_examples() {
        let g = Grid::new(40.0, 4001).unwrap();
        assert_relative_eq!(g.spacing(), 0.02, epsilon = 1e-15);
        assert_eq!(g.x(2000), 0.0);
        assert_eq!(g.x(0), -40.0);
        assert_eq!(g.x(4000), 40.0);

        let g = Grid::new(1.0, 3).unwrap();
        assert_eq!(g.nodes(), vec![-1.0, 0.0, 1.0]);

        assert_eq!(Grid::new(40.0, 4000), Err(Error::EvenN(4000)));
        assert_eq!(Grid::new(0.0, 11), Err(Error::NonPositiveL(0.0)));
        assert_eq!(Grid::new(-1.0, 11), Err(Error::NonPositiveL(-1.0)));
        assert_eq!(Grid::new(1.0, 1), Err(Error::TooFewNodes(1)));
    }

    #[test]
    fn with_spacing_hits_requested_h() {
        let g = Grid::with_spacing(40.0, 0.01).unwrap();
        assert_eq!(g.len(), 8001);
        assert_eq!(g.refined().len(), 16001);
        assert_relative_eq!(g.refined().spacing(), 0.005, epsilon = 1e-15);
    }

    #[test]
    fn phi_is_normalized_and_orthogonal_to_i_phi() {
        let g = Grid::new(40.0, 4001).unwrap();
        let p = phi(g);
        assert_relative_eq!(inner(&p, &p).unwrap(), 1.0, epsilon = 1e-4);
        assert_relative_eq!(norm(&p, NormKind::L2).unwrap(), 1.0, epsilon = 1e-4);
        assert_eq!(inner(&p, &p.times_i()).unwrap(), 0.0);
    }

    #[test]
    fn weighted_l2_against_fine_quadrature() {
        // ∫ e^{0.4|x|} (1/2) e^{-|x|} dx = 1/0.6 on ℝ; the truncation at L=40
        // is e^{-24} and negligible. The oracle is a 10x finer trapezoid.
        let g = Grid::new(40.0, 4001).unwrap();
        let fine = Grid::new(40.0, 40001).unwrap();
        let coarse = norm(&phi(g), NormKind::L2Gamma(0.2)).unwrap();
        let oracle = norm(&phi(fine), NormKind::L2Gamma(0.2)).unwrap();
        assert!(coarse > 1.0);
        assert_relative_eq!(oracle, (1.0f64 / 0.6).sqrt(), epsilon = 1e-6);
        assert_relative_eq!(coarse, oracle, epsilon = 1e-4);
    }

    #[test]
    fn derivative_examples() {
        let g = Grid::new(3.0, 601).unwrap();
        let c = ComplexField::from_fn(g, |_| Complex64::new(2.5, -1.0));
        assert!(derivative(&c).max_abs() < 1e-12);

        let lin = ComplexField::from_fn(g, |x| Complex64::new(x, 0.0));
        let d = derivative(&lin);
        for v in d.values() {
            assert_relative_eq!(v.re, 1.0, epsilon = 1e-10);
        }

        let mut errs = Vec::new();
        for n in [301, 601] {
            let g = Grid::new(3.0, n).unwrap();
            let s = ComplexField::from_fn(g, |x| Complex64::new(x.sin(), 0.0));
            let d = derivative(&s);
            let err = (1..n - 1)
                .map(|i| (d.values()[i].re - g.x(i).cos()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        // second order: halving h divides the error by ~4
        assert!(errs[0] < 1e-3);
        assert!(errs[1] < errs[0] / 3.5);
    }

    #[test]
    fn norm_kinds_of_zero_and_gamma_zero() {
        let g = Grid::new(5.0, 101).unwrap();
        let z = ComplexField::zeros(g);
        for k in [
            NormKind::L2,
            NormKind::L2Gamma(0.3),
            NormKind::H1,
            NormKind::H1Gamma(0.3),
            NormKind::H1MinusGamma(0.3),
            NormKind::X,
        ] {
            assert_eq!(norm(&z, k).unwrap(), 0.0);
        }
        let f = ComplexField::from_fn(g, |x| Complex64::new((-x * x).exp(), x.sin()));
        assert_eq!(
            norm(&f, NormKind::H1Gamma(0.0)).unwrap(),
            norm(&f, NormKind::H1).unwrap()
        );
    }

    #[test]
    fn non_finite_is_reported() {
        let g = Grid::new(1.0, 5).unwrap();
        let mut f = ComplexField::zeros(g);
        f.values_mut()[2] = Complex64::new(f64::NAN, 0.0);
        assert_eq!(norm(&f, NormKind::L2), Err(Error::NonFinite("norm")));
    }

    #[test]
    fn refinement_convergence_of_norms() {
        let f = |x: f64| Complex64::new((-x * x).exp() * (2.0 * x).sin(), (-0.5 * x * x).exp());
        let mut prev: Option<f64> = None;
        let mut diffs = Vec::new();
        let mut g = Grid::new(8.0, 201).unwrap();
        for _ in 0..4 {
            let v = norm(&ComplexField::from_fn(g, f), NormKind::H1).unwrap();
            if let Some(p) = prev {
                diffs.push((v - p).abs());
            }
            prev = Some(v);
            g = g.refined();
        }
        for w in diffs.windows(2) {
            assert!(w[1] < w[0] / 3.5, "{diffs:?}");
        }
    }

    #[test]
    fn grid_mismatch() {
        let a = ComplexField::zeros(Grid::new(1.0, 5).unwrap());
        let b = ComplexField::zeros(Grid::new(1.0, 7).unwrap());
        assert_eq!(inner(&a, &b), Err(Error::GridMismatch));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn field_strategy() -> impl Strategy<Value = ComplexField> {
            proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 41).prop_map(|v| {
                let g = Grid::new(2.0, 41).unwrap();
                ComplexField::from_values(
                    g,
                    v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect(),
                )
                .unwrap()
            })
        }

        proptest! {
            #[test]
            fn inner_symmetric(f in field_strategy(), g in field_strategy()) {
                let a = inner(&f, &g).unwrap();
                let b = inner(&g, &f).unwrap();
                prop_assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
            }

            #[test]
            fn quadrature_consistency(f in field_strategy()) {
                let n = norm(&f, NormKind::L2).unwrap();
                let ip = inner(&f, &f).unwrap();
                prop_assert!((n * n - ip).abs() <= 1e-13 * (1.0 + ip));
            }

            #[test]
            fn norms_absolutely_homogeneous(f in field_strategy(), c in -5.0f64..5.0) {
                let scaled = c * &f;
                for k in [NormKind::L2, NormKind::H1, NormKind::L2Gamma(0.2),
                          NormKind::H1MinusGamma(0.2), NormKind::X] {
                    let a = norm(&scaled, k).unwrap();
                    let b = c.abs() * norm(&f, k).unwrap();
                    prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
                }
            }
        }
    }
}
