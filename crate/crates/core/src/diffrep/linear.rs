use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::{DiffRep, View, ViewDistribution};
use crate::error::{check_dim, Error, Result};

/// `f(theta) = A theta` on a single view.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRep {
    matrix: DMatrix<f64>,
}

impl LinearRep {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Parameter("linear rep needs a non-empty matrix".into()));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter("linear rep matrix has non-finite entries".into()));
        }
        Ok(Self { matrix })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        for r in rows {
            check_dim("linear rep row", p, r.len())?;
        }
        Self::new(DMatrix::from_fn(m, p, |i, j| rows[i][j]))
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    fn check_view(view: &View) -> Result<()> {
        match view {
            View::Whole => Ok(()),
            View::Window { .. } => Err(Error::Parameter(
                "single-view representation cannot render a window".into(),
            )),
        }
    }
}

impl DiffRep for LinearRep {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn param_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn lattice_size(&self) -> usize {
        self.matrix.nrows()
    }

    fn view_distribution(&self) -> ViewDistribution {
        ViewDistribution::Singleton
    }

    fn sites(&self, view: &View) -> Result<Vec<usize>> {
        Self::check_view(view)?;
        Ok((0..self.output_dim()).collect())
    }

    fn render(&self, theta: &[f64], view: &View) -> Result<Vec<f64>> {
        self.jvp(theta, view, theta)
    }

    fn jvp(&self, theta: &[f64], view: &View, v: &[f64]) -> Result<Vec<f64>> {
        Self::check_view(view)?;
        check_dim("linear rep parameters", self.param_dim(), theta.len())?;
        check_dim("linear rep tangent", self.param_dim(), v.len())?;
        Ok((&self.matrix * DVector::from_column_slice(v)).as_slice().to_vec())
    }

    fn vjp(&self, theta: &[f64], view: &View, w: &[f64]) -> Result<Vec<f64>> {
        Self::check_view(view)?;
        check_dim("linear rep parameters", self.param_dim(), theta.len())?;
        check_dim("linear rep cotangent", self.output_dim(), w.len())?;
        Ok(self
            .matrix
            .tr_mul(&DVector::from_column_slice(w))
            .as_slice()
            .to_vec())
    }

    fn render_lattice(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.render(theta, &View::Whole)
    }

    fn lattice_shape(&self) -> (usize, usize, usize) {
        (1, self.output_dim(), 1)
    }

    fn zero_render_params(&self) -> Option<Vec<f64>> {
        Some(vec![0.0; self.param_dim()])
    }

    fn random_params(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.param_dim()).map(|_| StandardNormal.sample(rng)).collect()
    }
}

/// Periodic signal on `grid` points restricted to its lowest real Fourier
/// modes. Parameters are coefficients of the unnormalized basis
/// `1, cos(2 pi x), sin(2 pi x), cos(4 pi x), sin(4 pi x), ...` sampled at `x = j / grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowPassRep {
    grid: usize,
    inner: LinearRep,
}

impl LowPassRep {
    pub fn new(grid: usize, n_basis: usize) -> Result<Self> {
        if n_basis == 0 || n_basis > grid {
            return Err(Error::Parameter(format!(
                "need 1 <= n_basis <= grid, got n_basis = {n_basis}, grid = {grid}"
            )));
        }
        let basis = DMatrix::from_fn(grid, n_basis, |j, b| {
            let x = j as f64 / grid as f64;
            if b == 0 {
                1.0
            } else {
                let k = b.div_ceil(2) as f64;
                if b % 2 == 1 {
                    (2.0 * PI * k * x).cos()
                } else {
                    (2.0 * PI * k * x).sin()
                }
            }
        });
        Ok(Self {
            grid,
            inner: LinearRep::new(basis)?,
        })
    }

    /// Keeps the lowest `fraction` of the grid's real Fourier modes (at least one).
    pub fn with_fraction(grid: usize, fraction: f64) -> Result<Self> {
        let n = ((grid as f64 * fraction).round() as usize).clamp(1, grid);
        Self::new(grid, n)
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        self.inner.matrix()
    }

    /// Orthogonal projector onto the span of the retained modes.
    pub fn range_projector(&self) -> DMatrix<f64> {
        let q = self.basis().clone().qr().q();
        &q * q.transpose()
    }

    /// `(I - P_range) x`.
    pub fn out_of_range(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("low-pass residual", self.grid, x.len())?;
        let v = DVector::from_column_slice(x);
        let r = &v - self.range_projector() * &v;
        Ok(r.as_slice().to_vec())
    }
}

impl DiffRep for LowPassRep {
    fn name(&self) -> &'static str {
        "lowpass"
    }
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn output_dim(&self) -> usize {
        self.grid
    }
    fn lattice_size(&self) -> usize {
        self.grid
    }
    fn view_distribution(&self) -> ViewDistribution {
        ViewDistribution::Singleton
    }
    fn sites(&self, view: &View) -> Result<Vec<usize>> {
        self.inner.sites(view)
    }
    fn render(&self, theta: &[f64], view: &View) -> Result<Vec<f64>> {
        self.inner.render(theta, view)
    }
    fn jvp(&self, theta: &[f64], view: &View, v: &[f64]) -> Result<Vec<f64>> {
        self.inner.jvp(theta, view, v)
    }
    fn vjp(&self, theta: &[f64], view: &View, w: &[f64]) -> Result<Vec<f64>> {
        self.inner.vjp(theta, view, w)
    }
    fn render_lattice(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.inner.render_lattice(theta)
    }
    fn lattice_shape(&self) -> (usize, usize, usize) {
        (1, self.grid, 1)
    }
    fn zero_render_params(&self) -> Option<Vec<f64>> {
        self.inner.zero_render_params()
    }
    fn random_params(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.inner.random_params(rng)
    }
}
