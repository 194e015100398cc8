//! Periodic grids on flat complex tori with Fourier differentiation.
//!
//! A complex n-torus (n = 1 or 2) is discretized as `N` points per real
//! axis on the cube `[0, L)^{2n}`; the complex coordinate `z^a` occupies
//! the two real axes `(x^a, y^a)`. Axes are ordered `x1, y1, x2, y2` and
//! stored row-major with the last axis fastest.
//!
//! Complex derivatives are spectral:
//!
//! ```text
//! d/dz^a    = (d/dx^a - i d/dy^a) / 2
//! d/dzbar^a = (d/dx^a + i d/dy^a) / 2
//! ```
//!
//! with wavenumbers k in {-N/2, ..., N/2-1} per axis and the Nyquist
//! derivative coefficient set to zero. All reductions run in a fixed
//! sequential order so repeated runs are bit-identical.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{HkError, Result};

pub type C64 = Complex64;

/// Periodic grid on the torus `R^{2n} / (L Z)^{2n}`.
#[derive(Debug, PartialEq)]
pub struct Grid {
    /// Complex dimension (1 or 2).
    pub n: usize,
    /// Points per real axis. Must be even and at least 8.
    pub points_per_axis: usize,
    /// Period per real axis.
    pub length: f64,
}

impl Grid {
    /// Builds a grid, validating the discretization parameters.
    pub fn new(n: usize, points_per_axis: usize, length: f64) -> Result<Arc<Grid>> {
        if n != 1 && n != 2 {
            return Err(HkError::ConfigInvalid(format!(
                "complex dimension must be 1 or 2, got {n}"
            )));
        }
        if points_per_axis < 8 || !points_per_axis.is_multiple_of(2) {
            return Err(HkError::ConfigInvalid(format!(
                "points per axis must be even and >= 8, got {points_per_axis}"
            )));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(HkError::ConfigInvalid(format!(
                "period must be positive and finite, got {length}"
            )));
        }
        Ok(Arc::new(Grid {
            n,
            points_per_axis,
            length,
        }))
    }

    /// Number of real axes (2n).
    pub fn axes(&self) -> usize {
        2 * self.n
    }

    /// Grid spacing h = L/N.
    pub fn spacing(&self) -> f64 {
        self.length / self.points_per_axis as f64
    }

    /// Total number of grid points N^{2n}.
    pub fn num_points(&self) -> usize {
        self.points_per_axis.pow(self.axes() as u32)
    }

    /// Stride of `axis` in the flat row-major layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.points_per_axis.pow((self.axes() - 1 - axis) as u32)
    }

    /// Decomposes a flat index into per-axis indices (unused axes zero).
    pub fn decompose(&self, mut idx: usize) -> [usize; 4] {
        let mut out = [0usize; 4];
        for a in (0..self.axes()).rev() {
            out[a] = idx % self.points_per_axis;
            idx /= self.points_per_axis;
        }
        out
    }

    /// Physical coordinates of a flat index (unused axes zero).
    pub fn coords(&self, idx: usize) -> [f64; 4] {
        let ji = self.decompose(idx);
        let h = self.spacing();
        [
            ji[0] as f64 * h,
            ji[1] as f64 * h,
            ji[2] as f64 * h,
            ji[3] as f64 * h,
        ]
    }

    /// Integer wavenumber of spectral index `j` on one axis.
    fn wavenumber(&self, j: usize) -> i64 {
        let np = self.points_per_axis as i64;
        let j = j as i64;
        if j < np / 2 {
            j
        } else {
            j - np
        }
    }

    /// Angular derivative factor 2*pi*k/L with the Nyquist mode zeroed.
    fn omega(&self, j: usize) -> f64 {
        let np = self.points_per_axis;
        if j == np / 2 {
            0.0
        } else {
            2.0 * std::f64::consts::PI * self.wavenumber(j) as f64 / self.length
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// One complex value per grid point. Real-valued quantities carry a zero
/// imaginary part.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub data: Vec<C64>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<Grid>) -> ScalarField {
        ScalarField {
            grid: grid.clone(),
            data: vec![C64::new(0.0, 0.0); grid.num_points()],
        }
    }

    pub fn constant(grid: &Arc<Grid>, value: C64) -> ScalarField {
        ScalarField {
            grid: grid.clone(),
            data: vec![value; grid.num_points()],
        }
    }

    /// Builds a field by evaluating `f` at the coordinates of every point.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64; 4]) -> C64) -> ScalarField {
        let data = (0..grid.num_points()).map(|i| f(&grid.coords(i))).collect();
        ScalarField {
            grid: grid.clone(),
            data,
        }
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        self.grid == other.grid
    }

    fn check_same_grid(&self, other: &ScalarField, what: &str) -> Result<()> {
        if !self.same_grid(other) {
            return Err(HkError::ShapeMismatch(format!(
                "{what}: fields live on different grids"
            )));
        }
        Ok(())
    }

    /// Mean over grid points (the zero-frequency component).
    pub fn mean(&self) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for v in &self.data {
            acc += v;
        }
        acc / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    pub fn max_abs_im(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.im.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &ScalarField, f: impl Fn(C64, C64) -> C64) -> ScalarField {
        debug_assert!(self.same_grid(other));
        ScalarField {
            grid: self.grid.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, s: C64) -> ScalarField {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        self.zip(other, |a, b| a * b)
    }

    /// Forward transform over all axes (unnormalized).
    pub(crate) fn to_spectral(&self) -> Vec<C64> {
        let mut data = self.data.clone();
        for axis in 0..self.grid.axes() {
            fft_axis(&self.grid, &mut data, axis, false);
        }
        data
    }

    /// Inverse of [`to_spectral`], including the 1/N normalization per axis.
    pub(crate) fn from_spectral(grid: &Arc<Grid>, mut data: Vec<C64>) -> ScalarField {
        for axis in 0..grid.axes() {
            fft_axis(grid, &mut data, axis, true);
        }
        let norm = 1.0 / grid.num_points() as f64;
        for v in &mut data {
            *v *= norm;
        }
        ScalarField {
            grid: grid.clone(),
            data,
        }
    }

    /// Spectral holomorphic derivative d/dz^alpha.
    pub fn d_dz(&self, alpha: usize) -> Result<ScalarField> {
        self.complex_derivative(alpha, false)
    }

    /// Spectral antiholomorphic derivative d/dzbar^alpha.
    pub fn d_dzbar(&self, alpha: usize) -> Result<ScalarField> {
        self.complex_derivative(alpha, true)
    }

    fn complex_derivative(&self, alpha: usize, bar: bool) -> Result<ScalarField> {
        let grid = &self.grid;
        if alpha >= grid.n {
            return Err(HkError::ConfigInvalid(format!(
                "axis index {alpha} out of range for n = {}",
                grid.n
            )));
        }
        if !self.is_finite() {
            return Err(HkError::NonFinite("derivative input".into()));
        }
        let ax_x = 2 * alpha;
        let ax_y = 2 * alpha + 1;
        let np = grid.points_per_axis;
        let mut hat = self.to_spectral();
        // d/dz = (i*wx + wy)/2, d/dzbar = (i*wx - wy)/2 per spectral coefficient.
        let sign = if bar { -1.0 } else { 1.0 };
        for idx in 0..hat.len() {
            let ji = index_on_axes(grid, idx);
            let wx = grid.omega(ji[ax_x] % np);
            let wy = grid.omega(ji[ax_y] % np);
            hat[idx] *= C64::new(sign * 0.5 * wy, 0.5 * wx);
        }
        Ok(ScalarField::from_spectral(grid, hat))
    }

    /// Trapezoid-rule integral `h^{2n} * sum(f * density)`, spectrally
    /// accurate on periodic data.
    pub fn integrate(&self, density: &ScalarField) -> Result<C64> {
        self.check_same_grid(density, "integrate")?;
        let mut acc = C64::new(0.0, 0.0);
        for (a, b) in self.data.iter().zip(density.data.iter()) {
            acc += a * b;
        }
        let h = self.grid.spacing();
        Ok(acc * h.powi(self.grid.axes() as i32))
    }

    /// 2/3-rule truncation: zeroes every Fourier coefficient whose index
    /// exceeds floor(N/3) in absolute value on any axis. Idempotent.
    pub fn dealias(&self) -> ScalarField {
        let grid = &self.grid;
        let cutoff = (grid.points_per_axis / 3) as i64;
        let mut hat = self.to_spectral();
        for idx in 0..hat.len() {
            let ji = index_on_axes(grid, idx);
            for a in 0..grid.axes() {
                if grid.wavenumber(ji[a]).abs() > cutoff {
                    hat[idx] = C64::new(0.0, 0.0);
                    break;
                }
            }
        }
        ScalarField::from_spectral(grid, hat)
    }
}

/// Per-axis spectral indices of a flat index.
fn index_on_axes(grid: &Grid, idx: usize) -> [usize; 4] {
    grid.decompose(idx)
}

/// In-place FFT along one axis of the row-major hypercube.
fn fft_axis(grid: &Grid, data: &mut [C64], axis: usize, inverse: bool) {
    let np = grid.points_per_axis;
    let stride = grid.stride(axis);
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(np)
        } else {
            p.plan_fft_forward(np)
        }
    });
    let mut line = vec![C64::new(0.0, 0.0); np];
    let block = np * stride;
    let nblocks = data.len() / block;
    for b in 0..nblocks {
        for inner in 0..stride {
            let base = b * block + inner;
            for k in 0..np {
                line[k] = data[base + k * stride];
            }
            fft.process(&mut line);
            for k in 0..np {
                data[base + k * stride] = line[k];
            }
        }
    }
}
