//! Uniform 1-D grids and finite-difference Schrödinger operators.

pub mod banded;
pub mod operator;

pub use banded::{Band, BandLu};
pub use operator::{ComplexOperator, LowRank, ShiftedSolver};

use crate::error::{invalid, Error, Result};
use crate::C64;
use nalgebra::DVector;

/// Uniform grid `x_k = x_min + k·h`, `k = 0..n_points`, Dirichlet outside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid1D {
    n_points: usize,
    x_min: f64,
    x_max: f64,
}

impl Grid1D {
    pub fn new(n_points: usize, x_min: f64, x_max: f64) -> Result<Self> {
        if n_points < 3 {
            return invalid(format!("grid needs at least 3 points, got {n_points}"));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return invalid(format!("grid bounds must satisfy x_min < x_max, got [{x_min}, {x_max}]"));
        }
        Ok(Grid1D { n_points, x_min, x_max })
    }

    /// Symmetric box `[-half_width, half_width]`.
    pub fn symmetric(n_points: usize, half_width: f64) -> Result<Self> {
        Self::new(n_points, -half_width, half_width)
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }
    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }
    pub fn x(&self, k: usize) -> f64 {
        self.x_min + k as f64 * self.h()
    }
    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.x(k)).collect()
    }
}

/// Amplitudes with the quadrature weight of the inner product `<u,v> = w·Σ conj(u_k) v_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub amps: DVector<C64>,
    pub weight: f64,
}

impl StateVector {
    pub fn new(amps: DVector<C64>, weight: f64) -> Self {
        assert!(weight > 0.0, "inner-product weight must be positive");
        StateVector { amps, weight }
    }

    /// State on a grid: weight `h`.
    pub fn on_grid(amps: DVector<C64>, grid: &Grid1D) -> Self {
        Self::new(amps, grid.h())
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps.dotc(&other.amps) * self.weight
    }

    pub fn norm(&self) -> f64 {
        (self.amps.norm_squared() * self.weight).sqrt()
    }

    pub fn normalized(&self) -> StateVector {
        let n = self.norm();
        StateVector { amps: &self.amps / C64::new(n, 0.0), weight: self.weight }
    }

    /// Coefficients in the orthonormal basis, `√w·amps`.
    pub fn coefficients(&self) -> DVector<C64> {
        &self.amps * C64::new(self.weight.sqrt(), 0.0)
    }

    pub fn from_coefficients(c: &DVector<C64>, weight: f64) -> StateVector {
        StateVector::new(c / C64::new(weight.sqrt(), 0.0), weight)
    }
}

/// `-½·D₂` with Dirichlet boundary.
pub fn build_laplacian(grid: &Grid1D) -> ComplexOperator {
    let n = grid.n_points();
    let h2 = grid.h() * grid.h();
    let d = vec![C64::new(1.0 / h2, 0.0); n];
    let off = vec![C64::new(-0.5 / h2, 0.0); n - 1];
    ComplexOperator::from_band(Band::tridiagonal(&off, &d, &off)).with_hermitian(true)
}

/// `-½·D₂ + diag(v(x_k))`.
pub fn build_hamiltonian(grid: &Grid1D, v: impl Fn(f64) -> f64) -> Result<ComplexOperator> {
    let samples = grid
        .points()
        .into_iter()
        .map(|x| {
            let y = v(x);
            if y.is_finite() {
                Ok(y)
            } else {
                Err(Error::NonFinitePotential { x })
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(build_laplacian(grid).add(&ComplexOperator::from_real_diagonal(&samples)))
}

/// `e^{-2θ}·(-½·D₂) + diag(v(e^θ x_k))`.
pub fn build_dilated_hamiltonian(
    grid: &Grid1D,
    v_analytic: impl Fn(C64) -> C64,
    theta: C64,
) -> Result<ComplexOperator> {
    let kin = build_laplacian(grid).scale((-2.0 * theta).exp());
    let e = theta.exp();
    let samples = grid
        .points()
        .into_iter()
        .map(|x| {
            let y = v_analytic(e * x);
            if y.re.is_finite() && y.im.is_finite() {
                Ok(y)
            } else {
                Err(Error::NonFinitePotential { x })
            }
        })
        .collect::<Result<Vec<C64>>>()?;
    let real_theta = theta.im == 0.0;
    let pot = ComplexOperator::from_diagonal(&samples);
    let hermitian = real_theta && samples.iter().all(|z| z.im == 0.0);
    Ok(kin.add(&pot).with_hermitian(hermitian))
}
