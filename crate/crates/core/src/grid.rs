//! Doubly periodic grids, scalar/vector fields and spectral calculus.
//!
//! Fields live on the torus `[0, L)^2` sampled on an `n x n` grid, stored
//! row-major with rows along `y`: `values[row * n + col]` is the sample at
//! `(x, y) = (col * h, row * h)`.
//!
//! Transform convention: the forward transform is unnormalized
//! (`c_k = sum_x f(x) e^{-i k x}`), the inverse carries the `1/n^2` factor.
//! A constant field `c` therefore has a single nonzero coefficient `c * n^2`
//! at the zero mode.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Coordinate axis of the periodic box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

struct GridInner {
    n: usize,
    length: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Square periodic grid with cached FFT plans. Cheap to clone.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n", &self.inner.n)
            .field("length", &self.inner.length)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.n == other.inner.n && self.inner.length == other.inner.length)
    }
}

impl Grid {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 8, got {n}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("box length must be positive, got {length}")));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Self { inner: Arc::new(GridInner { n, length, forward, inverse }) })
    }

    /// `n x n` grid on the standard `2 pi` box.
    pub fn periodic(n: usize) -> Result<Self> {
        Self::new(n, 2.0 * PI)
    }

    pub fn n(&self) -> usize {
        self.inner.n
    }

    pub fn length(&self) -> f64 {
        self.inner.length
    }

    pub fn spacing(&self) -> f64 {
        self.inner.length / self.inner.n as f64
    }

    /// Number of grid points, `n^2`.
    pub fn size(&self) -> usize {
        self.inner.n * self.inner.n
    }

    /// Base frequency `2 pi / L`.
    pub fn k0(&self) -> f64 {
        2.0 * PI / self.inner.length
    }

    /// Quadrature weight of one grid cell, `h^2`.
    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h * h
    }

    /// Signed integer wavenumber of FFT index `i`; the Nyquist index maps to `+n/2`.
    pub fn mode(&self, i: usize) -> i64 {
        let n = self.inner.n;
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Physical wavenumber used for differentiation; zero at the Nyquist index.
    pub fn diff_wavenumber(&self, i: usize) -> f64 {
        if i == self.inner.n / 2 {
            0.0
        } else {
            self.mode(i) as f64 * self.k0()
        }
    }

    /// Largest retained integer wavenumber of the 2/3 rule.
    pub fn dealias_cutoff(&self) -> i64 {
        (self.inner.n / 3) as i64
    }

    pub fn coords(&self, index: usize) -> (f64, f64) {
        let n = self.inner.n;
        let h = self.spacing();
        ((index % n) as f64 * h, (index / n) as f64 * h)
    }

    fn fft2(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.inner.n;
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(buf, &mut scratch);
        transpose(buf, n);
        plan.process_with_scratch(buf, &mut scratch);
        transpose(buf, n);
    }

    pub(crate) fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft2(&mut buf, &self.inner.forward);
        buf
    }

    pub(crate) fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.fft2(&mut spec, &self.inner.inverse);
        let scale = 1.0 / self.size() as f64;
        spec.iter().map(|c| c.re * scale).collect()
    }
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for r in 0..n {
        for c in r + 1..n {
            buf.swap(r * n + c, c * n + r);
        }
    }
}

/// Unnormalized forward transform of a field.
pub fn transform_forward(field: &ScalarField) -> Result<Vec<Complex64>> {
    field.check_finite()?;
    Ok(field.spectrum().to_vec())
}

/// Inverse transform; the imaginary part of the result is discarded.
pub fn transform_backward(grid: &Grid, spectrum: Vec<Complex64>) -> Result<ScalarField> {
    if spectrum.len() != grid.size() {
        return Err(Error::GridMismatch);
    }
    if spectrum.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(Error::NonFinite("spectrum"));
    }
    Ok(ScalarField::from_spectrum(grid, spectrum))
}

/// Real scalar field on a periodic grid with a lazily computed spectrum.
#[derive(Clone)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    spectrum: OnceLock<Vec<Complex64>>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("grid", &self.grid)
            .field("min", &self.min())
            .field("max", &self.max())
            .finish()
    }
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self::from_raw(grid, vec![value; grid.size()])
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.size())
            .map(|i| {
                let (x, y) = grid.coords(i);
                f(x, y)
            })
            .collect();
        Self::from_raw(grid, values)
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.size() {
            return Err(Error::GridMismatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values"));
        }
        Ok(Self::from_raw(grid, values))
    }

    pub(crate) fn from_raw(grid: &Grid, values: Vec<f64>) -> Self {
        Self { grid: grid.clone(), values, spectrum: OnceLock::new() }
    }

    /// Field whose physical values are the real part of the inverse transform.
    pub fn from_spectrum(grid: &Grid, spectrum: Vec<Complex64>) -> Self {
        Self::from_raw(grid, grid.inverse_real(spectrum))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the samples; drops the cached spectrum.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.spectrum = OnceLock::new();
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn spectrum(&self) -> &[Complex64] {
        self.spectrum.get_or_init(|| self.grid.forward_real(&self.values))
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("field values"))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::from_raw(&self.grid, values)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `int_T f g dx` by the periodic trapezoid rule.
    pub fn inner(&self, other: &Self) -> f64 {
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        s * self.grid.cell_area()
    }

    /// `L^2` norm over the torus.
    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Applies a Fourier multiplier given as a function of the FFT indices `(col, row)`.
    pub fn apply_multiplier(&self, m: impl Fn(usize, usize) -> Complex64) -> Self {
        let n = self.grid.n();
        let spec: Vec<Complex64> = self
            .spectrum()
            .iter()
            .enumerate()
            .map(|(idx, &c)| c * m(idx % n, idx / n))
            .collect();
        Self::from_spectrum(&self.grid, spec)
    }

    /// Same as [`apply_multiplier`](Self::apply_multiplier) for a real multiplier.
    pub fn apply_real_multiplier(&self, m: impl Fn(usize, usize) -> f64) -> Self {
        let n = self.grid.n();
        let spec: Vec<Complex64> = self
            .spectrum()
            .iter()
            .enumerate()
            .map(|(idx, &c)| c * m(idx % n, idx / n))
            .collect();
        Self::from_spectrum(&self.grid, spec)
    }

    pub fn derivative(&self, axis: Axis) -> Self {
        let g = &self.grid;
        match axis {
            Axis::X => self.apply_multiplier(|c, _| I * g.diff_wavenumber(c)),
            Axis::Y => self.apply_multiplier(|_, r| I * g.diff_wavenumber(r)),
        }
    }

    pub fn gradient(&self) -> VectorField {
        VectorField::new(self.derivative(Axis::X), self.derivative(Axis::Y))
    }

    /// `grad^perp s = (-d_y s, d_x s)`.
    pub fn perp_gradient(&self) -> VectorField {
        VectorField::new(-self.derivative(Axis::Y), self.derivative(Axis::X))
    }

    pub fn laplacian(&self) -> Self {
        let g = &self.grid;
        self.apply_real_multiplier(|c, r| {
            let kx = g.diff_wavenumber(c);
            let ky = g.diff_wavenumber(r);
            -(kx * kx + ky * ky)
        })
    }

    /// 2/3-rule truncation: zero every mode with `|k_x|` or `|k_y|` above `n/3`.
    pub fn dealias(&self) -> Self {
        let g = &self.grid;
        let cut = g.dealias_cutoff();
        self.apply_real_multiplier(|c, r| {
            if g.mode(c).abs() > cut || g.mode(r).abs() > cut {
                0.0
            } else {
                1.0
            }
        })
    }

    /// Removes the mean.
    pub fn mean_free(&self) -> Self {
        let m = self.mean();
        self.map(|v| v - m)
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl Neg for ScalarField {
    type Output = ScalarField;
    fn neg(mut self) -> ScalarField {
        for v in self.values_mut() {
            *v = -*v;
        }
        self
    }
}

/// Two-component field sharing one grid.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn new(x: ScalarField, y: ScalarField) -> Self {
        assert_eq!(x.grid(), y.grid(), "vector components must share one grid");
        Self { x, y }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::new(ScalarField::zeros(grid), ScalarField::zeros(grid))
    }

    pub fn from_fn(grid: &Grid, fx: impl Fn(f64, f64) -> f64, fy: impl Fn(f64, f64) -> f64) -> Self {
        Self::new(ScalarField::from_fn(grid, fx), ScalarField::from_fn(grid, fy))
    }

    pub fn grid(&self) -> &Grid {
        self.x.grid()
    }

    pub fn map_components(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Self {
        Self::new(f(&self.x), f(&self.y))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_components(|c| c.scale(s))
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        Self::new(self.x.axpy(s, &other.x), self.y.axpy(s, &other.y))
    }

    /// Pointwise multiplication of both components by a scalar field.
    pub fn mul_scalar(&self, s: &ScalarField) -> Self {
        Self::new(&self.x * s, &self.y * s)
    }

    /// Pointwise dot product.
    pub fn dot(&self, other: &Self) -> ScalarField {
        let n2 = self.x.values().len();
        let vals = (0..n2)
            .map(|i| {
                self.x.values()[i] * other.x.values()[i] + self.y.values()[i] * other.y.values()[i]
            })
            .collect();
        ScalarField::from_raw(self.grid(), vals)
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> ScalarField {
        self.x.zip_map(&self.y, |a, b| a.hypot(b))
    }

    /// `v^perp = (-v_2, v_1)`.
    pub fn perp(&self) -> Self {
        Self::new(-self.y.clone(), self.x.clone())
    }

    pub fn divergence(&self) -> ScalarField {
        &self.x.derivative(Axis::X) + &self.y.derivative(Axis::Y)
    }

    /// Vorticity `d_1 v_2 - d_2 v_1`.
    pub fn curl(&self) -> ScalarField {
        &self.y.derivative(Axis::X) - &self.x.derivative(Axis::Y)
    }

    pub fn laplacian(&self) -> Self {
        self.map_components(ScalarField::laplacian)
    }

    pub fn dealias(&self) -> Self {
        self.map_components(ScalarField::dealias)
    }

    /// `(self . grad) target`, formed pointwise in physical space (not dealiased).
    pub fn advect(&self, target: &Self) -> Self {
        Self::new(self.advect_scalar(&target.x), self.advect_scalar(&target.y))
    }

    /// `self . grad s`, formed pointwise (not dealiased).
    pub fn advect_scalar(&self, s: &ScalarField) -> ScalarField {
        self.dot(&s.gradient())
    }

    pub fn inner(&self, other: &Self) -> f64 {
        self.x.inner(&other.x) + self.y.inner(&other.y)
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.magnitude().max_abs()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for &VectorField {
    type Output = VectorField;
    fn add(self, rhs: &VectorField) -> VectorField {
        VectorField::new(&self.x + &rhs.x, &self.y + &rhs.y)
    }
}

impl Sub for &VectorField {
    type Output = VectorField;
    fn sub(self, rhs: &VectorField) -> VectorField {
        VectorField::new(&self.x - &rhs.x, &self.y - &rhs.y)
    }
}

impl Neg for VectorField {
    type Output = VectorField;
    fn neg(self) -> VectorField {
        VectorField::new(-self.x, -self.y)
    }
}

/// Velocity gradient in the row/column convention `(grad v)_{ij} = d_i v_j`.
pub fn gradient_matrix(v: &VectorField) -> [[ScalarField; 2]; 2] {
    let (gx, gy) = (v.x.gradient(), v.y.gradient());
    [[gx.x.clone(), gy.x.clone()], [gx.y, gy.y]]
}

/// `grad^perp v`, with columns `grad^perp v_1 | grad^perp v_2`.
pub fn perp_gradient_matrix(v: &VectorField) -> [[ScalarField; 2]; 2] {
    let (px, py) = (v.x.perp_gradient(), v.y.perp_gradient());
    [[px.x.clone(), py.x.clone()], [px.y, py.y]]
}

/// Max-norm over all four entries of `grad v^perp - grad^perp v + curl(v) I`.
///
/// The off-diagonal entries of `grad v^perp - grad^perp v` equal `+-div v`, so
/// the residual vanishes only for solenoidal `v`; for general fields it
/// returns `max |div v|`.
pub fn gradient_matrix_identity_check(v: &VectorField) -> f64 {
    let grad_perp_v = gradient_matrix(&v.perp());
    let perp_grad_v = perp_gradient_matrix(v);
    let omega = v.curl();
    let mut worst = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            let mut entry = &grad_perp_v[i][j] - &perp_grad_v[i][j];
            if i == j {
                entry = &entry + &omega;
            }
            worst = worst.max(entry.max_abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid {
        Grid::periodic(n).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::periodic(4).is_err());
        assert!(Grid::periodic(24).is_err());
        assert!(Grid::new(16, -1.0).is_err());
    }

    #[test]
    fn constant_field_has_only_the_zero_mode() {
        let g = grid(8);
        let f = ScalarField::constant(&g, 2.5);
        let spec = transform_forward(&f).unwrap();
        assert!((spec[0].re - 2.5 * 64.0).abs() < 1e-12);
        assert!(spec[1..].iter().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn cosine_has_two_conjugate_modes() {
        let g = grid(8);
        let f = ScalarField::from_fn(&g, |x, _| x.cos());
        let spec = f.spectrum();
        // row 0, columns 1 and n-1
        assert!((spec[1].re - 32.0).abs() < 1e-12 && spec[1].im.abs() < 1e-12);
        assert!((spec[7].re - 32.0).abs() < 1e-12 && spec[7].im.abs() < 1e-12);
        let others = spec.iter().enumerate().filter(|(i, _)| *i != 1 && *i != 7);
        assert!(others.map(|(_, c)| c.norm()).fold(0.0, f64::max) < 1e-12);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let g = grid(8);
        let mut v = vec![0.0; 64];
        v[3] = f64::NAN;
        assert!(ScalarField::from_values(&g, v).is_err());
        let mut f = ScalarField::zeros(&g);
        f.values_mut()[0] = f64::INFINITY;
        assert!(transform_forward(&f).is_err());
    }

    #[test]
    fn mutation_invalidates_spectrum() {
        let g = grid(8);
        let mut f = ScalarField::constant(&g, 1.0);
        assert!((f.spectrum()[0].re - 64.0).abs() < 1e-12);
        f.values_mut().iter_mut().for_each(|v| *v = 3.0);
        assert!((f.spectrum()[0].re - 192.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_of_sine() {
        let g = grid(32);
        let f = ScalarField::from_fn(&g, |x, _| x.sin());
        let d = f.derivative(Axis::X);
        let exact = ScalarField::from_fn(&g, |x, _| x.cos());
        assert!((&d - &exact).max_abs() < 1e-12);
        assert!(f.derivative(Axis::Y).max_abs() < 1e-12);
    }

    #[test]
    fn laplacian_of_product_mode() {
        let g = grid(32);
        let f = ScalarField::from_fn(&g, |x, y| (2.0 * x).sin() * (3.0 * y).cos());
        let lap = f.laplacian();
        assert!((&lap - &f.scale(-13.0)).max_abs() < 1e-11);
    }

    #[test]
    fn nonstandard_box_length_scales_derivatives() {
        let g = Grid::new(32, 1.0).unwrap();
        let k = 2.0 * PI;
        let f = ScalarField::from_fn(&g, |x, _| (k * x).sin());
        let d = f.derivative(Axis::X);
        let exact = ScalarField::from_fn(&g, |x, _| k * (k * x).cos());
        assert!((&d - &exact).max_abs() < 1e-10);
    }

    #[test]
    fn nyquist_mode_has_zero_derivative() {
        let g = grid(8);
        let f = ScalarField::from_fn(&g, |x, _| (4.0 * x).cos());
        assert!(f.derivative(Axis::X).max_abs() < 1e-13);
    }

    #[test]
    fn perp_and_curl_conventions() {
        let g = grid(16);
        let v = VectorField::new(ScalarField::constant(&g, 1.0), ScalarField::zeros(&g));
        let p = v.perp();
        assert!(p.x.max_abs() < 1e-15);
        assert!((&p.y - &ScalarField::constant(&g, 1.0)).max_abs() < 1e-15);

        let psi = ScalarField::from_fn(&g, |x, y| x.sin() * y.sin());
        let u = psi.perp_gradient();
        let omega = u.curl();
        let exact = ScalarField::from_fn(&g, |x, y| -2.0 * x.sin() * y.sin());
        assert!((&omega - &exact).max_abs() < 1e-12);
        assert!(psi.gradient().curl().max_abs() < 1e-12);
        assert!(u.divergence().max_abs() < 1e-12);
    }

    #[test]
    fn gradient_identity_on_rotational_field() {
        let g = grid(32);
        let v = VectorField::from_fn(&g, |_, y| y.sin(), |x, _| x.sin());
        assert!(gradient_matrix_identity_check(&v) < 1e-11);
        assert_eq!(gradient_matrix_identity_check(&VectorField::zeros(&g)), 0.0);
    }

    #[test]
    fn gradient_identity_entries_by_finite_differences() {
        // v = (sin y, sin x): grad v^perp - grad^perp v + omega I entrywise
        // from centred differences of the analytic components.
        let h = 1e-5;
        let v1 = |_x: f64, y: f64| y.sin();
        let v2 = |x: f64, _y: f64| x.sin();
        let d = |f: &dyn Fn(f64, f64) -> f64, axis: usize, x: f64, y: f64| {
            if axis == 0 {
                (f(x + h, y) - f(x - h, y)) / (2.0 * h)
            } else {
                (f(x, y + h) - f(x, y - h)) / (2.0 * h)
            }
        };
        let mut worst = 0.0f64;
        for &(x, y) in &[(0.3, 1.1), (2.0, 4.5), (5.1, 0.2)] {
            let d1v1 = d(&v1, 0, x, y);
            let d2v1 = d(&v1, 1, x, y);
            let d1v2 = d(&v2, 0, x, y);
            let d2v2 = d(&v2, 1, x, y);
            let omega = d1v2 - d2v1;
            let gp = [[-d1v2, d1v1], [-d2v2, d2v1]];
            let pg = [[-d2v1, -d2v2], [d1v1, d1v2]];
            for i in 0..2 {
                for j in 0..2 {
                    let e = gp[i][j] - pg[i][j] + if i == j { omega } else { 0.0 };
                    worst = worst.max(e.abs());
                }
            }
        }
        assert!(worst < 1e-9);
    }

    #[test]
    fn gradient_identity_residual_is_divergence_for_gradients() {
        let g = grid(32);
        let phi = ScalarField::from_fn(&g, |x, y| x.sin() * (2.0 * y).cos());
        let v = phi.gradient();
        let r = gradient_matrix_identity_check(&v);
        assert!((r - v.divergence().max_abs()).abs() < 1e-10);
    }

    #[test]
    fn dealias_behaviour() {
        let g = grid(32);
        let low = ScalarField::from_fn(&g, |x, y| (3.0 * x).cos() * (10.0 * y).sin());
        assert!((&low.dealias() - &low).max_abs() < 1e-13);
        let high = ScalarField::from_fn(&g, |x, _| (15.0 * x).cos());
        assert!(high.dealias().max_abs() < 1e-13);
    }

    #[test]
    fn parseval() {
        let g = grid(16);
        let f = ScalarField::from_fn(&g, |x, y| (x + 2.0 * y).sin() + 0.3 * (3.0 * x).cos() + 0.7);
        let spec_sq: f64 = f.spectrum().iter().map(|c| c.norm_sqr()).sum();
        let n2 = g.size() as f64;
        let spectral = (spec_sq / n2 * g.cell_area()).sqrt();
        assert!((spectral - f.l2_norm()).abs() < 1e-12 * f.l2_norm());
    }
}
