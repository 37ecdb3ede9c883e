//! Built-in smooth initial data: a modulated density and a solenoidal velocity
//! `u0 = grad^perp psi0` built from a small set of stream-function modes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeShape {
    SinSin,
    SinCos,
    CosSin,
    CosCos,
}

/// One stream-function term `amplitude * shape(kx x, ky y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamMode {
    pub kx: i32,
    pub ky: i32,
    pub amplitude: f64,
    #[serde(default = "default_shape")]
    pub shape: ModeShape,
}

fn default_shape() -> ModeShape {
    ModeShape::SinSin
}

impl StreamMode {
    fn eval(&self, x: f64, y: f64) -> f64 {
        let (ax, ay) = (self.kx as f64 * x, self.ky as f64 * y);
        let v = match self.shape {
            ModeShape::SinSin => ax.sin() * ay.sin(),
            ModeShape::SinCos => ax.sin() * ay.cos(),
            ModeShape::CosSin => ax.cos() * ay.sin(),
            ModeShape::CosCos => ax.cos() * ay.cos(),
        };
        self.amplitude * v
    }
}

/// `rho0 = rho_mean (1 + delta_rho cos(k1 x) cos(k2 y))`, `u0 = mean_velocity + grad^perp psi0`
/// with `psi0` the sum of the stream-function modes.
///
/// Coordinates are scaled by `2 pi / L` so the same descriptor is periodic on any box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialData {
    pub rho_mean: f64,
    pub delta_rho: f64,
    pub k1: i32,
    pub k2: i32,
    pub modes: Vec<StreamMode>,
    /// Extra stream-function modes with seeded random amplitudes.
    pub random_modes: usize,
    pub random_amplitude: f64,
    pub random_max_wavenumber: i32,
    /// Uniform background flow added to `grad^perp psi0`.
    pub mean_velocity: [f64; 2],
}

impl Default for InitialData {
    fn default() -> Self {
        Self {
            rho_mean: 1.0,
            delta_rho: 0.2,
            k1: 1,
            k2: 1,
            modes: vec![StreamMode { kx: 1, ky: 1, amplitude: 1.0, shape: ModeShape::SinSin }],
            random_modes: 0,
            random_amplitude: 0.1,
            random_max_wavenumber: 4,
            mean_velocity: [0.0, 0.0],
        }
    }
}

impl InitialData {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_mean > 0.0 && self.rho_mean.is_finite()) {
            return Err(Error::InvalidConfig("initial.rho_mean must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.delta_rho.abs()) {
            return Err(Error::InvalidConfig("initial.delta_rho must satisfy |delta_rho| < 1".into()));
        }
        if !self.mean_velocity.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("initial.mean_velocity must be finite".into()));
        }
        if self.random_modes > 0 && self.random_max_wavenumber < 1 {
            return Err(Error::InvalidConfig("initial.random_max_wavenumber must be >= 1".into()));
        }
        Ok(())
    }

    pub fn density(&self, grid: &Grid) -> ScalarField {
        let s = grid.k0();
        let (k1, k2) = (self.k1 as f64 * s, self.k2 as f64 * s);
        ScalarField::from_fn(grid, |x, y| {
            self.rho_mean * (1.0 + self.delta_rho * (k1 * x).cos() * (k2 * y).cos())
        })
    }

    /// All stream-function modes, the random ones drawn deterministically from `seed`.
    pub fn stream_modes(&self, seed: u64) -> Vec<StreamMode> {
        let mut modes = self.modes.clone();
        if self.random_modes > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kmax = self.random_max_wavenumber;
            let shapes = [ModeShape::SinSin, ModeShape::SinCos, ModeShape::CosSin, ModeShape::CosCos];
            for _ in 0..self.random_modes {
                modes.push(StreamMode {
                    kx: rng.random_range(0..=kmax),
                    ky: rng.random_range(0..=kmax),
                    amplitude: self.random_amplitude * rng.random_range(-1.0..1.0),
                    shape: shapes[rng.random_range(0..4)],
                });
            }
        }
        modes
    }

    pub fn stream_function(&self, grid: &Grid, seed: u64) -> ScalarField {
        let s = grid.k0();
        let modes = self.stream_modes(seed);
        ScalarField::from_fn(grid, |x, y| modes.iter().map(|m| m.eval(s * x, s * y)).sum())
    }

    pub fn velocity(&self, grid: &Grid, seed: u64) -> VectorField {
        let [cx, cy] = self.mean_velocity;
        let u = self.stream_function(grid, seed).perp_gradient();
        if cx == 0.0 && cy == 0.0 {
            return u;
        }
        VectorField::new(u.x.map(|v| v + cx), u.y.map(|v| v + cy))
    }
}

/// Seeded random real field whose Fourier support is `|k_x|, |k_y| <= k_max` (in units of
/// `k0`), with uniform coefficients in `[-1, 1]`.
pub fn random_band_limited(grid: &Grid, k_max: i32, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = grid.k0();
    let mut terms = Vec::new();
    for kx in 0..=k_max {
        for ky in -k_max..=k_max {
            if kx == 0 && ky < 0 {
                continue;
            }
            let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            terms.push((kx as f64 * s, ky as f64 * s, a, if kx == 0 && ky == 0 { 0.0 } else { b }));
        }
    }
    ScalarField::from_fn(grid, |x, y| {
        terms.iter().map(|&(kx, ky, a, b)| a * (kx * x + ky * y).cos() + b * (kx * x + ky * y).sin()).sum()
    })
}
