//! Spatial discretization of the interval `O = (0, L)`: interior-node grids,
//! nodal fields with implicit homogeneous Dirichlet boundary, the discrete
//! Dirichlet Laplacian and its first eigenvalue, and rectangle-rule norms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid of `n` interior nodes on `(0, L)` with spacing `h = L/(n+1)`.
///
/// Boundary values are implicit ghost zeros, matching the homogeneous
/// Dirichlet condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalGrid {
    length: f64,
    n: usize,
    h: f64,
}

impl IntervalGrid {
    pub fn new(length: f64, n: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "domain length must be positive and finite, got {length}"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!(
                "interior node count must be >= 2, got {n}"
            )));
        }
        let h = length / (n + 1) as f64;
        Ok(Self { length, n, h })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Position of interior node `i` (0-based): `x_i = (i+1) h`.
    pub fn node(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.h
    }

    /// Iterator over interior node positions.
    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.node(i))
    }

    /// Smallest eigenvalue of `-Lap_h` for the tridiagonal Dirichlet stencil:
    /// `(2/h^2) (1 - cos(pi h / L))`.
    pub fn first_eigenvalue_discrete(&self) -> f64 {
        2.0 / (self.h * self.h) * (1.0 - (std::f64::consts::PI * self.h / self.length).cos())
    }

    /// Continuum first eigenvalue `pi^2 / L^2` of the Dirichlet Laplacian.
    pub fn first_eigenvalue_continuum(&self) -> f64 {
        let pi = std::f64::consts::PI;
        pi * pi / (self.length * self.length)
    }

    /// First discrete eigenvector, samples of `sin(pi x / L)` (not normalized).
    pub fn first_eigenvector(&self) -> Field {
        Field::from_fn(*self, |x| (std::f64::consts::PI * x / self.length).sin())
    }
}

/// Nodal values of a function on the interior nodes of an [`IntervalGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: IntervalGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: IntervalGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::InvalidGrid(format!(
                "field length {} does not match grid node count {}",
                values.len(),
                grid.n()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: IntervalGrid) -> Self {
        Self {
            values: vec![0.0; grid.n()],
            grid,
        }
    }

    pub fn from_fn(grid: IntervalGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().map(f).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> IntervalGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| s * v).collect(),
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        debug_assert_eq!(self.values.len(), other.values.len());
        Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn axpy(&mut self, a: f64, x: &Field) {
        debug_assert_eq!(self.values.len(), x.values.len());
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// L2 inner product with rectangle-rule weight `h`.
    pub fn inner_l2(&self, other: &Field) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.grid.h()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn norm_l2_sq(&self) -> f64 {
        self.inner_l2(self)
    }

    pub fn norm_l2(&self) -> f64 {
        self.norm_l2_sq().sqrt()
    }

    /// Discrete `||grad f||_{L2}^2`: forward differences over the `n+1` gaps
    /// with ghost zeros at both boundary ends.
    pub fn seminorm_h1_sq(&self) -> f64 {
        let h = self.grid.h();
        let mut sum = 0.0;
        let mut prev = 0.0;
        for &v in &self.values {
            let d = v - prev;
            sum += d * d;
            prev = v;
        }
        sum += prev * prev; // gap to the right ghost zero
        sum / h
    }

    pub fn seminorm_h1(&self) -> f64 {
        self.seminorm_h1_sq().sqrt()
    }

    /// `||f||_{L^p}` by rectangle-rule quadrature of `|f|^p`. Rejects `p < 1`.
    pub fn norm_lp(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "L^p norm requires finite p >= 1, got {p}"
            )));
        }
        Ok(self.norm_lp_pow(p)?.powf(1.0 / p))
    }

    /// `||f||_{L^p}^p` (the quadrature sum itself, without the root).
    pub fn norm_lp_pow(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "L^p norm requires finite p >= 1, got {p}"
            )));
        }
        Ok(self.grid.h() * self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>())
    }
}

/// Discrete Dirichlet Laplacian `(1/h^2) tridiag(1, -2, 1)` on an
/// [`IntervalGrid`]. Symmetric negative definite.
#[derive(Debug, Clone, Copy)]
pub struct DirichletLaplacian {
    grid: IntervalGrid,
}

impl DirichletLaplacian {
    pub fn new(grid: IntervalGrid) -> Self {
        Self { grid }
    }

    pub fn grid(&self) -> IntervalGrid {
        self.grid
    }

    pub fn apply(&self, f: &Field) -> Field {
        let n = self.grid.n();
        let h2 = self.grid.h() * self.grid.h();
        let v = f.values();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let left = if i > 0 { v[i - 1] } else { 0.0 };
            let right = if i + 1 < n { v[i + 1] } else { 0.0 };
            out[i] = (left - 2.0 * v[i] + right) / h2;
        }
        Field {
            grid: self.grid,
            values: out,
        }
    }

    /// Dense matrix form, for small-`n` inspection and tests.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let n = self.grid.n();
        let h2 = self.grid.h() * self.grid.h();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            m[i][i] = -2.0 / h2;
            if i > 0 {
                m[i][i - 1] = 1.0 / h2;
            }
            if i + 1 < n {
                m[i][i + 1] = 1.0 / h2;
            }
        }
        m
    }

    /// Quadratic form `h * f^T (Lap f)`; nonpositive for every field.
    pub fn quadratic_form(&self, f: &Field) -> f64 {
        f.inner_l2(&self.apply(f))
    }

    /// Solves `(I - c * Lap) x = rhs` by the Thomas algorithm. The system is
    /// symmetric positive definite for `c >= 0`, so the sweep is stable.
    pub fn solve_implicit(&self, c: f64, rhs: &Field) -> Field {
        let n = self.grid.n();
        let h2 = self.grid.h() * self.grid.h();
        let diag = 1.0 + 2.0 * c / h2;
        let off = -c / h2;
        if c == 0.0 {
            return rhs.clone();
        }
        let b = rhs.values();
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        cp[0] = off / diag;
        dp[0] = b[0] / diag;
        for i in 1..n {
            let denom = diag - off * cp[i - 1];
            cp[i] = off / denom;
            dp[i] = (b[i] - off * dp[i - 1]) / denom;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = dp[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = dp[i] - cp[i] * x[i + 1];
        }
        Field {
            grid: self.grid,
            values: x,
        }
    }
}
