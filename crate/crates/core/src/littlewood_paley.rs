//! Dyadic frequency analysis on the periodic lattice.
//!
//! Frequencies are measured in units of the base wavenumber `k0 = 2 pi / L`, so the
//! annuli `3/4 2^j <= |xi| / k0 <= 8/3 2^j` sit on the integer lattice of Fourier modes.
//! The `j = -1` block is the low-frequency ball and carries the mean mode.

use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex64;
use rayon::prelude::*;

use crate::grid::{Grid, ScalarField, VectorField};
use crate::{Error, Result};

/// Inner radius of the low-frequency ball on which `chi = 1`.
pub const CHI_FLAT: f64 = 0.75;
/// Outer radius of the support of `chi`.
pub const CHI_SUPPORT: f64 = 4.0 / 3.0;
/// Relative taper width `gamma` with `CHI_FLAT (1 + gamma) = CHI_SUPPORT`.
pub const TAPER: f64 = 7.0 / 9.0;

/// C-infinity radial profile: 1 on `[0, 1]`, tapering to 0 at `1 + TAPER`.
pub fn theta(r: f64) -> f64 {
    if r <= 1.0 {
        return 1.0;
    }
    let x = (r - 1.0) / TAPER;
    if x >= 1.0 {
        return 0.0;
    }
    (1.0 - 1.0 / (1.0 - x * x)).exp()
}

/// Low-frequency cutoff `chi(xi)` for a dimensionless radius `|xi| / k0`.
pub fn chi(radius: f64) -> f64 {
    theta(radius / CHI_FLAT)
}

/// Annulus multiplier `phi(xi) = chi(xi / 2) - chi(xi)`.
pub fn phi(radius: f64) -> f64 {
    chi(radius / 2.0) - chi(radius)
}

/// Immutable set of block multipliers sampled on the lattice of one grid.
#[derive(Clone)]
pub struct DyadicPartition {
    grid: Grid,
    radius: Vec<f64>,
    chi: Vec<f64>,
    phi: Vec<Vec<f64>>,
    j_max: i64,
}

impl fmt::Debug for DyadicPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DyadicPartition")
            .field("n", &self.grid.n())
            .field("length", &self.grid.length())
            .field("j_max", &self.j_max)
            .finish()
    }
}

/// Builds `chi` and `phi(2^-j .)` for every block whose annulus meets the lattice.
pub fn build_partition(grid: &Grid) -> DyadicPartition {
    let n = grid.n();
    let radius: Vec<f64> = (0..grid.size())
        .map(|idx| {
            let (kx, ky) = (grid.mode(idx % n) as f64, grid.mode(idx / n) as f64);
            kx.hypot(ky)
        })
        .collect();
    let r_max = radius.iter().cloned().fold(0.0, f64::max);
    let mut j_max = -1;
    while CHI_FLAT * 2f64.powi(j_max as i32 + 1) < r_max {
        j_max += 1;
    }
    let chi_values = radius.iter().map(|&r| chi(r)).collect();
    let phi_values = (0..=j_max)
        .map(|j| {
            let scale = 2f64.powi(j as i32);
            radius.iter().map(|&r| phi(r / scale)).collect()
        })
        .collect();
    DyadicPartition { grid: grid.clone(), radius, chi: chi_values, phi: phi_values, j_max }
}

impl DyadicPartition {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn j_max(&self) -> i64 {
        self.j_max
    }

    /// Block indices `-1..=j_max`.
    pub fn indices(&self) -> impl Iterator<Item = i64> + Clone {
        -1..=self.j_max
    }

    pub fn block_count(&self) -> usize {
        (self.j_max + 2) as usize
    }

    /// Dimensionless lattice radius `|xi| / k0` of every FFT index.
    pub fn radius(&self) -> &[f64] {
        &self.radius
    }

    pub fn chi(&self) -> &[f64] {
        &self.chi
    }

    fn check_index(&self, j: i64) -> Result<()> {
        if (-1..=self.j_max).contains(&j) {
            Ok(())
        } else {
            Err(Error::OutOfRange { index: j, lo: -1, hi: self.j_max })
        }
    }

    /// Multiplier of block `j`: `chi` for `j = -1`, `phi(2^-j .)` otherwise.
    pub fn multiplier(&self, j: i64) -> Result<&[f64]> {
        self.check_index(j)?;
        Ok(if j < 0 { &self.chi } else { &self.phi[j as usize] })
    }

    /// `max |chi + sum_j phi_j - 1|` over the lattice.
    pub fn partition_residual(&self) -> f64 {
        (0..self.radius.len())
            .map(|i| {
                let total = self.chi[i] + self.phi.iter().map(|p| p[i]).sum::<f64>();
                (total - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    fn check_grid(&self, field: &ScalarField) -> Result<()> {
        if field.grid() == &self.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

fn apply(field: &ScalarField, m: &[f64]) -> ScalarField {
    let spec = field.spectrum().iter().zip(m).map(|(c, w)| c * *w).collect();
    ScalarField::from_spectrum(field.grid(), spec)
}

/// Continuous `L^2` norm computed from the spectrum with a radial weight per index.
fn weighted_norm(field: &ScalarField, weight: impl Fn(usize) -> f64) -> f64 {
    let g = field.grid();
    let n2 = g.size() as f64;
    let s: f64 = field.spectrum().iter().enumerate().map(|(i, c)| weight(i) * c.norm_sqr()).sum();
    (s.max(0.0)).sqrt() * g.length() / n2
}

/// `Delta_j field` for `j` in `-1..=j_max`.
pub fn dyadic_block(partition: &DyadicPartition, field: &ScalarField, j: i64) -> Result<ScalarField> {
    partition.check_grid(field)?;
    Ok(apply(field, partition.multiplier(j)?))
}

/// `S_j field = sum_{k <= j-1} Delta_k field`, for `j` in `-1..=j_max + 1`.
pub fn low_cutoff(partition: &DyadicPartition, field: &ScalarField, j: i64) -> Result<ScalarField> {
    partition.check_grid(field)?;
    if !(-1..=partition.j_max + 1).contains(&j) {
        return Err(Error::OutOfRange { index: j, lo: -1, hi: partition.j_max + 1 });
    }
    if j == -1 {
        return Ok(ScalarField::zeros(field.grid()));
    }
    let scale = 2f64.powi(j as i32);
    let m: Vec<f64> = partition.radius.iter().map(|&r| chi(r / scale)).collect();
    Ok(apply(field, &m))
}

/// All blocks `Delta_{-1}, ..., Delta_{j_max}`, computed in parallel.
pub fn blocks(partition: &DyadicPartition, field: &ScalarField) -> Result<Vec<ScalarField>> {
    partition.check_grid(field)?;
    field.spectrum();
    Ok(partition
        .indices()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&j| apply(field, partition.multiplier(j).expect("index in range")))
        .collect())
}

/// `||Delta_j field||_2` for every block, from the spectrum.
pub fn block_l2_norms(partition: &DyadicPartition, field: &ScalarField) -> Result<Vec<f64>> {
    partition.check_grid(field)?;
    Ok(partition
        .indices()
        .map(|j| {
            let m = partition.multiplier(j).expect("index in range");
            weighted_norm(field, |i| m[i] * m[i])
        })
        .collect())
}

/// Block norms of a vector field: the component norms combined in `l^2`.
pub fn vector_block_l2_norms(partition: &DyadicPartition, v: &VectorField) -> Result<Vec<f64>> {
    let bx = block_l2_norms(partition, &v.x)?;
    let by = block_l2_norms(partition, &v.y)?;
    Ok(bx.iter().zip(&by).map(|(a, b)| a.hypot(*b)).collect())
}

/// Grid maxima `max |Delta_j field|`. These approximate the `L^inf` block norms.
pub fn block_sup_norms(partition: &DyadicPartition, field: &ScalarField) -> Result<Vec<f64>> {
    Ok(blocks(partition, field)?.iter().map(ScalarField::max_abs).collect())
}

/// `(sum (1 + |xi|^2)^s |u_hat(xi)|^2)^(1/2)`, normalised so that `s = 0` gives the `L^2` norm.
pub fn sobolev_norm(field: &ScalarField, s: f64) -> f64 {
    let g = field.grid();
    let n = g.n();
    let k0 = g.k0();
    weighted_norm(field, |i| {
        let kx = g.mode(i % n) as f64 * k0;
        let ky = g.mode(i / n) as f64 * k0;
        (1.0 + kx * kx + ky * ky).powf(s)
    })
}

fn weighted_lr(norms: &[f64], s: f64, r: f64) -> f64 {
    let terms = norms.iter().enumerate().map(|(i, &b)| 2f64.powf((i as f64 - 1.0) * s) * b);
    if r.is_infinite() {
        terms.fold(0.0, f64::max)
    } else {
        terms.map(|t| t.powf(r)).sum::<f64>().powf(1.0 / r)
    }
}

/// `(sum_j 2^(jsr) ||Delta_j field||_2^r)^(1/r)`; `r = f64::INFINITY` gives the supremum.
pub fn besov_norm(partition: &DyadicPartition, field: &ScalarField, s: f64, r: f64) -> Result<f64> {
    if !(r >= 1.0) {
        return Err(Error::InvalidConfig(format!("Besov exponent r = {r} must be at least 1")));
    }
    Ok(weighted_lr(&block_l2_norms(partition, field)?, s, r))
}

/// Time integrability exponent of a Chemin-Lerner norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeExponent {
    One,
    Two,
    Infinity,
}

impl TimeExponent {
    pub fn label(self) -> &'static str {
        match self {
            TimeExponent::One => "1",
            TimeExponent::Two => "2",
            TimeExponent::Infinity => "inf",
        }
    }

    /// `L^q` norm of nodal samples with trapezoid weights.
    fn norm(self, values: impl Iterator<Item = f64>, weights: &[f64]) -> f64 {
        match self {
            TimeExponent::Infinity => values.fold(0.0, |m, v| m.max(v.abs())),
            TimeExponent::One => values.zip(weights).map(|(v, w)| w * v.abs()).sum(),
            TimeExponent::Two => values.zip(weights).map(|(v, w)| w * v * v).sum::<f64>().sqrt(),
        }
    }
}

impl FromStr for TimeExponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" => Ok(TimeExponent::One),
            "2" => Ok(TimeExponent::Two),
            "inf" | "infinity" => Ok(TimeExponent::Infinity),
            other => Err(Error::InvalidConfig(format!("time exponent must be 1, 2 or inf, got {other:?}"))),
        }
    }
}

impl fmt::Display for TimeExponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Block `L^2` norms of a trajectory sampled at uniform times `k dt`.
#[derive(Clone, Debug)]
pub struct BlockSeries {
    pub dt: f64,
    /// `norms[k][j + 1] = ||Delta_j u(t_k)||_2`.
    pub norms: Vec<Vec<f64>>,
}

impl BlockSeries {
    fn checked(dt: f64, norms: Vec<Vec<f64>>) -> Result<Self> {
        if norms.is_empty() {
            return Err(Error::RaggedSeries("empty series".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::RaggedSeries(format!("time step {dt} is not positive")));
        }
        let width = norms[0].len();
        if norms.iter().any(|row| row.len() != width) {
            return Err(Error::RaggedSeries("samples have different block counts".into()));
        }
        Ok(Self { dt, norms })
    }

    pub fn from_scalars(partition: &DyadicPartition, series: &[ScalarField], dt: f64) -> Result<Self> {
        if series.iter().any(|f| f.grid() != partition.grid()) {
            return Err(Error::RaggedSeries("samples live on different grids".into()));
        }
        let norms = series.par_iter().map(|f| block_l2_norms(partition, f)).collect::<Result<_>>()?;
        Self::checked(dt, norms)
    }

    pub fn from_vectors(partition: &DyadicPartition, series: &[VectorField], dt: f64) -> Result<Self> {
        if series.iter().any(|f| f.grid() != partition.grid()) {
            return Err(Error::RaggedSeries("samples live on different grids".into()));
        }
        let norms = series.par_iter().map(|v| vector_block_l2_norms(partition, v)).collect::<Result<_>>()?;
        Self::checked(dt, norms)
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    fn weights(&self) -> Vec<f64> {
        let m = self.norms.len();
        (0..m)
            .map(|k| if m == 1 { 0.0 } else if k == 0 || k == m - 1 { 0.5 * self.dt } else { self.dt })
            .collect()
    }

    /// `(sum_j 2^(2js) ||Delta_j u||_{L^q_T L^2}^2)^(1/2)`.
    pub fn chemin_lerner(&self, q: TimeExponent, s: f64) -> f64 {
        let w = self.weights();
        let per_block: Vec<f64> =
            (0..self.norms[0].len()).map(|j| q.norm(self.norms.iter().map(|row| row[j]), &w)).collect();
        weighted_lr(&per_block, s, 2.0)
    }

    /// `|| ||u(t)||_{B^s_{2,2}} ||_{L^q_T}`, the norm with time integration outermost.
    pub fn time_besov(&self, q: TimeExponent, s: f64) -> f64 {
        let w = self.weights();
        q.norm(self.norms.iter().map(|row| weighted_lr(row, s, 2.0)), &w)
    }

    /// Both sides of `||u||_{L~2 H^(s+1)} <= ||u||_{L~inf H^s}^(1/2) ||u||_{L~1 H^(s+2)}^(1/2)`.
    pub fn interpolation(&self, s: f64) -> InterpolationCheck {
        let lhs = self.chemin_lerner(TimeExponent::Two, s + 1.0);
        let rhs = (self.chemin_lerner(TimeExponent::Infinity, s) * self.chemin_lerner(TimeExponent::One, s + 2.0)).sqrt();
        InterpolationCheck { lhs, rhs }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpolationCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl InterpolationCheck {
    /// Holds up to a relative rounding allowance.
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.lhs <= self.rhs * (1.0 + rel_tol)
    }
}

/// Chemin-Lerner norm `L~^q_T B^s_{2,2}` of a scalar series sampled every `dt`.
pub fn chemin_lerner_norm(
    partition: &DyadicPartition,
    series: &[ScalarField],
    dt: f64,
    q: TimeExponent,
    s: f64,
) -> Result<f64> {
    Ok(BlockSeries::from_scalars(partition, series, dt)?.chemin_lerner(q, s))
}

/// Trigonometric interpolation onto a grid `factor` times finer. Nyquist modes are split
/// evenly between `+n/2` and `-n/2` so the refined field stays real and pointwise equal.
pub fn refine(field: &ScalarField, factor: usize) -> Result<ScalarField> {
    let g = field.grid();
    if factor == 1 {
        return Ok(field.clone());
    }
    let n = g.n();
    let fine = Grid::new(n * factor, g.length())?;
    let nf = fine.n();
    let wrap = |m: i64| m.rem_euclid(nf as i64) as usize;
    let targets = |i: usize| -> Vec<(usize, f64)> {
        let m = g.mode(i);
        if n.is_multiple_of(2) && m == (n / 2) as i64 {
            vec![(wrap(m), 0.5), (wrap(-m), 0.5)]
        } else {
            vec![(wrap(m), 1.0)]
        }
    };
    let gain = (factor * factor) as f64;
    let mut spec = vec![Complex64::default(); fine.size()];
    for (idx, &c) in field.spectrum().iter().enumerate() {
        for &(r, wr) in &targets(idx / n) {
            for &(col, wc) in &targets(idx % n) {
                spec[r * nf + col] += c * (gain * wr * wc);
            }
        }
    }
    Ok(ScalarField::from_spectrum(&fine, spec))
}

/// Bony decomposition on the twice refined grid.
#[derive(Clone, Debug)]
pub struct BonyDecomposition {
    /// `T_u v = sum_j S_{j-1} u Delta_j v`.
    pub low_high: ScalarField,
    /// `T_v u`.
    pub high_low: ScalarField,
    /// `R(u, v) = sum_{|k - j| <= 1} Delta_j u Delta_k v`.
    pub remainder: ScalarField,
    /// Pointwise product `u v` on the refined grid.
    pub product: ScalarField,
}

impl BonyDecomposition {
    pub fn reconstruction(&self) -> ScalarField {
        &(&self.low_high + &self.high_low) + &self.remainder
    }

    /// `L^2` norm of `T_u v + T_v u + R - u v`.
    pub fn residual(&self) -> f64 {
        (&self.reconstruction() - &self.product).l2_norm()
    }
}

fn paraproduct(low: &[ScalarField], high: &[ScalarField]) -> ScalarField {
    let grid = low[0].grid();
    let mut acc = ScalarField::zeros(grid);
    let mut cutoff = ScalarField::zeros(grid);
    // block index b = j + 1; S_{j-1} = sum of blocks b' <= b - 2
    for b in 0..high.len() {
        if b >= 2 {
            cutoff = &cutoff + &low[b - 2];
            acc = &acc + &(&cutoff * &high[b]);
        }
    }
    acc
}

/// `(T_u v, T_v u, R(u, v))` with all products formed on a grid refined by two.
pub fn bony_decompose(partition: &DyadicPartition, u: &ScalarField, v: &ScalarField) -> Result<BonyDecomposition> {
    let fine = |f: &ScalarField| -> Result<Vec<ScalarField>> {
        blocks(partition, f)?.iter().map(|b| refine(b, 2)).collect()
    };
    let (bu, bv) = rayon::join(|| fine(u), || fine(v));
    let (bu, bv) = (bu?, bv?);
    let low_high = paraproduct(&bu, &bv);
    let high_low = paraproduct(&bv, &bu);
    let mut remainder = ScalarField::zeros(bu[0].grid());
    for b in 0..bu.len() {
        for c in b.saturating_sub(1)..(b + 2).min(bv.len()) {
            remainder = &remainder + &(&bu[b] * &bv[c]);
        }
    }
    let product = &refine(u, 2)? * &refine(v, 2)?;
    Ok(BonyDecomposition { low_high, high_low, remainder, product })
}

/// `||grad^k Delta_j f||_2 / ((2^j k0)^k ||Delta_j f||_2)`.
pub fn bernstein_ratio(partition: &DyadicPartition, field: &ScalarField, j: i64, k_derivs: u32) -> Result<f64> {
    partition.check_grid(field)?;
    let m = partition.multiplier(j)?;
    let base = weighted_norm(field, |i| m[i] * m[i]);
    let tiny = 1e-14 * weighted_norm(field, |_| 1.0);
    if !(base > tiny) {
        return Err(Error::ZeroBlock(j));
    }
    let r = &partition.radius;
    let num = weighted_norm(field, |i| m[i] * m[i] * r[i].powi(2 * k_derivs as i32));
    Ok(num / (base * 2f64.powi(j as i32 * k_derivs as i32)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid {
        Grid::periodic(n).unwrap()
    }

    fn random_field(g: &Grid, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..g.size()).map(|_| rng.random_range(-1.0..1.0)).collect();
        ScalarField::from_values(g, values).unwrap()
    }

    fn mode(g: &Grid, kx: f64, ky: f64) -> ScalarField {
        ScalarField::from_fn(g, |x, y| (kx * x + ky * y).cos())
    }

    #[test]
    fn taper_profile() {
        assert_eq!(theta(0.3), 1.0);
        assert_eq!(theta(1.0), 1.0);
        assert_eq!(theta(1.0 + TAPER), 0.0);
        assert!(theta(1.5) > 0.0 && theta(1.5) < 1.0);
        assert!((CHI_FLAT * (1.0 + TAPER) - CHI_SUPPORT).abs() < 1e-15);
        assert_eq!(chi(0.0), 1.0);
        let mut prev = 1.0;
        for i in 0..400 {
            let c = chi(i as f64 * 0.005);
            assert!(c <= prev && (0.0..=1.0).contains(&c));
            prev = c;
        }
    }

    #[test]
    fn partition_of_unity_and_supports() {
        for n in [8, 16, 32, 64, 128] {
            let p = build_partition(&grid(n));
            assert!(p.partition_residual() < 1e-12, "n = {n}");
            for j in p.indices() {
                let m = p.multiplier(j).unwrap();
                for (i, &w) in m.iter().enumerate() {
                    assert!((0.0..=1.0).contains(&w));
                    let r = p.radius()[i];
                    if w > 0.0 {
                        if j < 0 {
                            assert!(r < CHI_SUPPORT);
                        } else {
                            let s = 2f64.powi(j as i32);
                            assert!(r > 0.75 * s && r < 8.0 / 3.0 * s, "j = {j} r = {r}");
                        }
                    }
                }
                if j >= 0 {
                    assert!(m.iter().any(|&w| w > 0.0), "block {j} misses the lattice");
                }
            }
        }
    }

    #[test]
    fn top_block_for_powers_of_two() {
        for n in [8, 16, 32, 64, 128, 256] {
            let p = build_partition(&grid(n));
            assert_eq!(p.j_max(), (n as f64 / 3.0).log2().ceil() as i64);
        }
    }

    #[test]
    fn scaled_torus_uses_lattice_radius() {
        let a = build_partition(&Grid::new(32, 1.0).unwrap());
        let b = build_partition(&grid(32));
        assert_eq!(a.j_max(), b.j_max());
        assert_eq!(a.chi(), b.chi());
    }

    #[test]
    fn constant_field_lives_in_low_block() {
        let g = grid(32);
        let p = build_partition(&g);
        let c = ScalarField::constant(&g, 2.5);
        let low = dyadic_block(&p, &c, -1).unwrap();
        assert!((&low - &c).max_abs() < 1e-14);
        for j in 0..=p.j_max() {
            assert!(dyadic_block(&p, &c, j).unwrap().max_abs() < 1e-14);
        }
    }

    #[test]
    fn out_of_range_blocks() {
        let g = grid(16);
        let p = build_partition(&g);
        let f = random_field(&g, 1);
        assert!(matches!(dyadic_block(&p, &f, -2), Err(Error::OutOfRange { .. })));
        assert!(matches!(dyadic_block(&p, &f, p.j_max() + 1), Err(Error::OutOfRange { .. })));
        assert!(low_cutoff(&p, &f, p.j_max() + 1).is_ok());
        assert!(low_cutoff(&p, &f, p.j_max() + 2).is_err());
        let other = random_field(&grid(8), 1);
        assert!(matches!(dyadic_block(&p, &other, 0), Err(Error::GridMismatch)));
    }

    #[test]
    fn pure_mode_support() {
        let g = grid(64);
        let p = build_partition(&g);
        for j in 0..=4 {
            let k = 2f64.powi(j);
            let f = mode(&g, k, 0.0);
            for b in p.indices() {
                let norm = dyadic_block(&p, &f, b).unwrap().l2_norm();
                if (b - j as i64).abs() > 1 {
                    assert!(norm < 1e-13, "mode {k} leaks into block {b}");
                }
            }
        }
    }

    #[test]
    fn reconstruction_and_low_cutoff() {
        let g = grid(32);
        let p = build_partition(&g);
        let f = random_field(&g, 7);
        let parts = blocks(&p, &f).unwrap();
        let mut sum = ScalarField::zeros(&g);
        for (b, part) in parts.iter().enumerate() {
            let j = b as i64 - 1;
            let s = low_cutoff(&p, &f, j).unwrap();
            assert!((&s - &sum).max_abs() < 1e-12, "S_{j}");
            sum = &sum + part;
        }
        assert!((&sum - &f).max_abs() < 1e-11);
        assert!((&low_cutoff(&p, &f, p.j_max() + 1).unwrap() - &f).max_abs() < 1e-11);
    }

    #[test]
    fn almost_orthogonality() {
        let g = grid(64);
        let p = build_partition(&g);
        let f = random_field(&g, 3);
        for j in p.indices() {
            let dj = dyadic_block(&p, &f, j).unwrap();
            for k in p.indices() {
                if (j - k).abs() >= 2 {
                    assert!(dyadic_block(&p, &dj, k).unwrap().max_abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn sobolev_single_mode_oracle() {
        let g = grid(32);
        let (a, k) = (1.7, 5.0);
        let f = mode(&g, k, 0.0).scale(a);
        for s in [-1.0, 0.0, 0.5, 2.0] {
            let expected = (1.0 + k * k).powf(s / 2.0) * a * (2.0 * PI) / 2f64.sqrt();
            assert!((sobolev_norm(&f, s) - expected).abs() < 1e-11 * expected);
        }
        assert!((sobolev_norm(&f, 0.0) - f.l2_norm()).abs() < 1e-12);
        let z = ScalarField::zeros(&g);
        let p = build_partition(&g);
        assert_eq!(sobolev_norm(&z, 1.0), 0.0);
        assert_eq!(besov_norm(&p, &z, 1.0, 2.0).unwrap(), 0.0);
        assert!(besov_norm(&p, &f, 1.0, 0.5).is_err());
    }

    #[test]
    fn besov_exponents_are_ordered() {
        let g = grid(32);
        let p = build_partition(&g);
        let f = random_field(&g, 11);
        let b1 = besov_norm(&p, &f, 0.5, 1.0).unwrap();
        let b2 = besov_norm(&p, &f, 0.5, 2.0).unwrap();
        let binf = besov_norm(&p, &f, 0.5, f64::INFINITY).unwrap();
        assert!(binf <= b2 && b2 <= b1);
    }

    #[test]
    fn chemin_lerner_constant_series() {
        let g = grid(16);
        let p = build_partition(&g);
        let f = random_field(&g, 5);
        let series = vec![f.clone(); 6];
        let static_norm = besov_norm(&p, &f, 0.7, 2.0).unwrap();
        let cl = chemin_lerner_norm(&p, &series, 0.1, TimeExponent::Infinity, 0.7).unwrap();
        assert!((cl - static_norm).abs() < 1e-12 * static_norm);
        let cl1 = chemin_lerner_norm(&p, &series, 0.1, TimeExponent::One, 0.7).unwrap();
        assert!((cl1 - 0.5 * static_norm).abs() < 1e-12 * static_norm);
    }

    #[test]
    fn ragged_series_rejected() {
        let p = build_partition(&grid(16));
        let mixed = vec![random_field(&grid(16), 1), random_field(&grid(8), 2)];
        assert!(matches!(
            chemin_lerner_norm(&p, &mixed, 0.1, TimeExponent::Two, 0.0),
            Err(Error::RaggedSeries(_))
        ));
        assert!(chemin_lerner_norm(&p, &[], 0.1, TimeExponent::Two, 0.0).is_err());
        let one = vec![random_field(&grid(16), 1)];
        assert!(chemin_lerner_norm(&p, &one, 0.0, TimeExponent::Two, 0.0).is_err());
    }

    #[test]
    fn time_exponent_parsing() {
        assert_eq!("inf".parse::<TimeExponent>().unwrap(), TimeExponent::Infinity);
        assert_eq!("1".parse::<TimeExponent>().unwrap(), TimeExponent::One);
        assert_eq!(TimeExponent::Two.to_string(), "2");
        assert!("3".parse::<TimeExponent>().is_err());
    }

    #[test]
    fn refine_preserves_samples() {
        let g = grid(16);
        let f = random_field(&g, 9);
        let r = refine(&f, 2).unwrap();
        assert_eq!(r.grid().n(), 32);
        for row in 0..16 {
            for col in 0..16 {
                let a = f.values()[row * 16 + col];
                let b = r.values()[2 * row * 32 + 2 * col];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bony_trivial_cases() {
        let g = grid(32);
        let p = build_partition(&g);
        let u = random_field(&g, 21);
        let one = ScalarField::constant(&g, 1.0);
        let d = bony_decompose(&p, &u, &one).unwrap();
        assert!(d.low_high.max_abs() < 1e-13);
        assert!(d.residual() < 1e-10);
        let z = ScalarField::zeros(&g);
        let d = bony_decompose(&p, &z, &u).unwrap();
        assert_eq!(d.low_high.max_abs(), 0.0);
        assert_eq!(d.high_low.max_abs(), 0.0);
        assert_eq!(d.remainder.max_abs(), 0.0);
    }

    #[test]
    fn paraproduct_localization() {
        let g = grid(32);
        let p = build_partition(&g);
        let fine = build_partition(&Grid::periodic(64).unwrap());
        let u = random_field(&g, 31);
        let v = random_field(&g, 32);
        for k in 0..=p.j_max() {
            let s = refine(&low_cutoff(&p, &u, k - 1).unwrap(), 2).unwrap();
            let d = refine(&dyadic_block(&p, &v, k).unwrap(), 2).unwrap();
            let prod = &s * &d;
            for j in fine.indices() {
                if (j - k).abs() >= 5 {
                    assert!(dyadic_block(&fine, &prod, j).unwrap().max_abs() < 1e-12, "j = {j} k = {k}");
                }
            }
        }
    }

    #[test]
    fn bernstein_single_modes() {
        let g = grid(64);
        let p = build_partition(&g);
        for j in 0..=4 {
            let f = mode(&g, 2f64.powi(j), 0.0);
            assert!((bernstein_ratio(&p, &f, j as i64, 1).unwrap() - 1.0).abs() < 1e-12);
            assert!((bernstein_ratio(&p, &f, j as i64, 2).unwrap() - 1.0).abs() < 1e-12);
        }
        let edge = mode(&g, 12.0, 1.0);
        let r = bernstein_ratio(&p, &edge, 4, 1).unwrap();
        assert!((r - 145f64.sqrt() / 16.0).abs() < 1e-12);
        assert!((r - 0.75).abs() < 0.01);
        let exact_edge = mode(&g, 12.0, 0.0);
        assert!(matches!(bernstein_ratio(&p, &exact_edge, 4, 1), Err(Error::ZeroBlock(4))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn reconstruction_is_identity(seed in any::<u64>()) {
            let g = grid(32);
            let p = build_partition(&g);
            let f = random_field(&g, seed);
            let sum = blocks(&p, &f).unwrap().iter().fold(ScalarField::zeros(&g), |acc, b| &acc + b);
            prop_assert!((&sum - &f).max_abs() < 1e-11);
        }

        #[test]
        fn bony_reconstruction(seed in any::<u64>()) {
            let g = grid(32);
            let p = build_partition(&g);
            let u = random_field(&g, seed);
            let v = random_field(&g, seed.wrapping_add(1));
            prop_assert!(bony_decompose(&p, &u, &v).unwrap().residual() < 1e-10);
        }

        #[test]
        fn sobolev_besov_equivalence(seed in any::<u64>(), s in -1.0f64..1.5) {
            let g = grid(32);
            let p = build_partition(&g);
            let f = random_field(&g, seed);
            let ratio = sobolev_norm(&f, s) / besov_norm(&p, &f, s, 2.0).unwrap();
            prop_assert!(ratio > 1.0 / 3.0 && ratio < 3.0, "ratio {}", ratio);
        }

        #[test]
        fn bernstein_bracket(seed in any::<u64>()) {
            let g = grid(32);
            let p = build_partition(&g);
            let f = random_field(&g, seed);
            for j in 0..=p.j_max() {
                let r = bernstein_ratio(&p, &f, j, 1).unwrap();
                prop_assert!((0.75..=8.0 / 3.0).contains(&r), "j = {} ratio {}", j, r);
            }
        }

        #[test]
        fn chemin_lerner_orderings(seed in any::<u64>(), s in -0.5f64..1.0, len in 2usize..7) {
            let g = grid(16);
            let p = build_partition(&g);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let series: Vec<ScalarField> =
                (0..len).map(|_| random_field(&g, rng.random())).collect();
            let bs = BlockSeries::from_scalars(&p, &series, 0.05).unwrap();
            let l2 = bs.chemin_lerner(TimeExponent::Two, s);
            prop_assert!((l2 - bs.time_besov(TimeExponent::Two, s)).abs() <= 1e-12 * l2);
            prop_assert!(bs.chemin_lerner(TimeExponent::Infinity, s) >= bs.time_besov(TimeExponent::Infinity, s) * (1.0 - 1e-12));
            prop_assert!(bs.chemin_lerner(TimeExponent::One, s) <= bs.time_besov(TimeExponent::One, s) * (1.0 + 1e-12));
            prop_assert!(bs.interpolation(s).holds(1e-12));
        }
    }
}
