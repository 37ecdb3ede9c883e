//! Pressure solves: `-div(a grad P) = div F` with a variable coefficient, and
//! the constant-coefficient Leray projection.
//!
//! The variable-coefficient problem is solved by preconditioned conjugate
//! gradients on the Fourier coefficients of `P`. The operator is applied
//! pseudo-spectrally (gradient in Fourier space, product with `a` on the grid),
//! which keeps it symmetric positive semi-definite; its kernel is the mean
//! mode plus the Nyquist modes that spectral differentiation annihilates, and
//! iterates are kept orthogonal to it. The preconditioner is the exact inverse
//! of `-mean(a) Laplacian`.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticSettings {
    /// Relative residual target `||div(a grad P) + div F|| / ||div F||`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EllipticSettings {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500 }
    }
}

impl EllipticSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidConfig(format!("elliptic tolerance must lie in (0, 1), got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("elliptic max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// One variable-coefficient pressure problem `-div(a grad P) = div(flux)`.
#[derive(Debug, Clone, Copy)]
pub struct EllipticProblem<'a> {
    pub a: &'a ScalarField,
    pub flux: &'a VectorField,
    /// Lower ellipticity bound `a_*`; defaults to `min a`.
    pub a_lower: Option<f64>,
    pub initial_guess: Option<&'a ScalarField>,
    pub settings: EllipticSettings,
}

impl<'a> EllipticProblem<'a> {
    pub fn new(a: &'a ScalarField, flux: &'a VectorField) -> Self {
        Self { a, flux, a_lower: None, initial_guess: None, settings: EllipticSettings::default() }
    }

    pub fn with_settings(mut self, settings: EllipticSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_guess(mut self, guess: Option<&'a ScalarField>) -> Self {
        self.initial_guess = guess;
        self
    }

    pub fn with_lower_bound(mut self, a_lower: f64) -> Self {
        self.a_lower = Some(a_lower);
        self
    }
}

#[derive(Debug, Clone)]
pub struct EllipticSolution {
    /// Mean-zero solution.
    pub pressure: ScalarField,
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
    pub history: Vec<f64>,
    /// `a_*`, `||grad P||_2` and `||F||_2` for the energy bound `a_* ||grad P|| <= ||F||`.
    pub a_lower: f64,
    pub grad_norm: f64,
    pub flux_norm: f64,
}

impl EllipticSolution {
    /// `a_* ||grad P||_2 <= (1 + slack) ||F||_2`.
    pub fn energy_bound_holds(&self, slack: f64) -> bool {
        self.a_lower * self.grad_norm <= (1.0 + slack) * self.flux_norm
    }
}

struct SpectralOps<'g> {
    grid: &'g Grid,
    kx: Vec<f64>,
    ky: Vec<f64>,
}

impl<'g> SpectralOps<'g> {
    fn new(grid: &'g Grid) -> Self {
        let n = grid.n();
        let mut kx = Vec::with_capacity(grid.size());
        let mut ky = Vec::with_capacity(grid.size());
        for r in 0..n {
            for c in 0..n {
                kx.push(grid.diff_wavenumber(c));
                ky.push(grid.diff_wavenumber(r));
            }
        }
        Self { grid, kx, ky }
    }

    fn k2(&self, i: usize) -> f64 {
        self.kx[i] * self.kx[i] + self.ky[i] * self.ky[i]
    }

    /// Squared L^2 norm of the field with coefficients `v`, via Parseval.
    fn norm_sq(&self, v: &[Complex64]) -> f64 {
        let s: f64 = v.iter().map(|c| c.norm_sqr()).sum();
        s * self.grid.cell_area() / self.grid.size() as f64
    }

    fn dot(&self, u: &[Complex64], v: &[Complex64]) -> f64 {
        u.iter().zip(v).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
    }

    /// Projects out the kernel of the operator (modes with zero differentiation
    /// wavenumber) and restores the conjugate symmetry of a real field, which
    /// rounding breaks when the data is itself at rounding level.
    fn project(&self, v: &mut [Complex64]) {
        let n = self.grid.n();
        for r in 0..n {
            for c in 0..n {
                let i = r * n + c;
                let j = ((n - r) % n) * n + (n - c) % n;
                if j < i {
                    continue;
                }
                if self.k2(i) == 0.0 {
                    v[i] = Complex64::default();
                    v[j] = Complex64::default();
                    continue;
                }
                let s = 0.5 * (v[i] + v[j].conj());
                v[i] = s;
                v[j] = s.conj();
            }
        }
    }

    fn divergence(&self, fx: &[Complex64], fy: &[Complex64]) -> Vec<Complex64> {
        (0..fx.len()).map(|i| I * (self.kx[i] * fx[i] + self.ky[i] * fy[i])).collect()
    }

    /// `-div(a grad p)` in coefficient space.
    fn apply(&self, a: &[f64], p: &[Complex64]) -> Vec<Complex64> {
        let gx: Vec<Complex64> = (0..p.len()).map(|i| I * self.kx[i] * p[i]).collect();
        let gy: Vec<Complex64> = (0..p.len()).map(|i| I * self.ky[i] * p[i]).collect();
        let gx = self.grid.inverse_real(gx);
        let gy = self.grid.inverse_real(gy);
        let fx: Vec<f64> = gx.iter().zip(a).map(|(g, a)| g * a).collect();
        let fy: Vec<f64> = gy.iter().zip(a).map(|(g, a)| g * a).collect();
        let fx = self.grid.forward_real(&fx);
        let fy = self.grid.forward_real(&fy);
        self.divergence(&fx, &fy).into_iter().map(|c| -c).collect()
    }

    fn precondition(&self, a_mean: f64, r: &[Complex64]) -> Vec<Complex64> {
        (0..r.len())
            .map(|i| {
                let k2 = self.k2(i);
                if k2 == 0.0 {
                    Complex64::default()
                } else {
                    r[i] / (a_mean * k2)
                }
            })
            .collect()
    }
}

/// Solves `-div(a grad P) = div(F)` for mean-zero `P`.
pub fn solve_variable_poisson(problem: &EllipticProblem<'_>) -> Result<EllipticSolution> {
    let grid = problem.a.grid();
    if problem.flux.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if !problem.a.is_finite() || !problem.flux.is_finite() {
        return Err(Error::NonFinite("elliptic data"));
    }
    let a_min = problem.a.min();
    let a_lower = problem.a_lower.unwrap_or(a_min);
    if a_lower <= 0.0 || a_min < a_lower {
        return Err(Error::CoefficientBelowBound { min: a_min, bound: a_lower.max(0.0) });
    }
    let EllipticSettings { tol, max_iter } = problem.settings;
    let ops = SpectralOps::new(grid);
    let a = problem.a.values();
    let a_mean = problem.a.mean();
    let flux_norm = problem.flux.l2_norm();

    let mut b = ops.divergence(problem.flux.x.spectrum(), problem.flux.y.spectrum());
    ops.project(&mut b);
    let b_norm = ops.norm_sq(&b).sqrt();
    let finish = |x: Vec<Complex64>, iterations, residual, history| {
        let pressure = ScalarField::from_spectrum(grid, x).mean_free();
        let grad_norm = pressure.gradient().l2_norm();
        EllipticSolution { pressure, iterations, residual, history, a_lower, grad_norm, flux_norm }
    };
    if b_norm == 0.0 {
        return Ok(finish(vec![Complex64::default(); grid.size()], 0, 0.0, Vec::new()));
    }

    let mut x = match problem.initial_guess {
        Some(g) if g.grid() == grid => g.spectrum().to_vec(),
        _ => vec![Complex64::default(); grid.size()],
    };
    ops.project(&mut x);

    let mut history = Vec::new();
    let mut iterations = 0;
    // Outer loop restarts from the true residual whenever the recursive one
    // has converged but the true one has not.
    loop {
        let ax = ops.apply(a, &x);
        let mut r: Vec<Complex64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
        ops.project(&mut r);
        let rel = ops.norm_sq(&r).sqrt() / b_norm;
        history.push(rel);
        if rel <= tol {
            return Ok(finish(x, iterations, rel, history));
        }
        if iterations >= max_iter {
            return Err(Error::EllipticNonConvergence { iterations, residual: rel, history });
        }
        let mut z = ops.precondition(a_mean, &r);
        let mut p = z.clone();
        let mut rz = ops.dot(&r, &z);
        while iterations < max_iter {
            iterations += 1;
            let ap = ops.apply(a, &p);
            let pap = ops.dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for i in 0..x.len() {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            ops.project(&mut r);
            let rel = ops.norm_sq(&r).sqrt() / b_norm;
            history.push(rel);
            if rel <= tol {
                break;
            }
            z = ops.precondition(a_mean, &r);
            let rz_new = ops.dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..p.len() {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}

/// Divergence-free part `v - grad Lap^{-1} div v`.
pub fn leray_project(v: &VectorField) -> VectorField {
    let grid = v.grid();
    let ops = SpectralOps::new(grid);
    let vx = v.x.spectrum();
    let vy = v.y.spectrum();
    let mut px = Vec::with_capacity(vx.len());
    let mut py = Vec::with_capacity(vy.len());
    for i in 0..vx.len() {
        let k2 = ops.k2(i);
        if k2 == 0.0 {
            px.push(vx[i]);
            py.push(vy[i]);
        } else {
            let kv = (ops.kx[i] * vx[i] + ops.ky[i] * vy[i]) / k2;
            px.push(vx[i] - ops.kx[i] * kv);
            py.push(vy[i] - ops.ky[i] * kv);
        }
    }
    VectorField::new(ScalarField::from_spectrum(grid, px), ScalarField::from_spectrum(grid, py))
}
