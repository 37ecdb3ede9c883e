//! Fixed-point construction of regularized solutions: alternate transport of
//! the density along the previous velocity with a linear Stokes-type solve
//! transported by `U^n = u^n - grad^perp g(rho^{n+1})`.
//!
//! Trajectories are stored densely at the inner step together with their time
//! derivatives; values between nodes come from cubic Hermite interpolation.

use crate::dynamics::{check_density, density_tendency, momentum_tendency, Formulation, RhsContext, State};
use crate::diagnostics::pde_residual;
use crate::elliptic::{leray_project, EllipticSettings};
use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField};
use crate::viscosity::ViscosityLaw;
use crate::dynamics::DIVERGENCE_CLEANUP;

/// Column order of `picard.csv`.
pub const PICARD_COLUMNS: [&str; 3] = ["n", "d_n", "residual_n"];

/// Fields that can be combined linearly.
pub trait Blend: Clone {
    fn blend(terms: &[(f64, &Self)]) -> Self;
    fn l2_norm(&self) -> f64;
}

impl Blend for ScalarField {
    fn blend(terms: &[(f64, &Self)]) -> Self {
        let (c0, f0) = terms[0];
        terms[1..].iter().fold(f0.scale(c0), |acc, (c, f)| acc.axpy(*c, f))
    }

    fn l2_norm(&self) -> f64 {
        ScalarField::l2_norm(self)
    }
}

impl Blend for VectorField {
    fn blend(terms: &[(f64, &Self)]) -> Self {
        let (c0, f0) = terms[0];
        terms[1..].iter().fold(f0.scale(c0), |acc, (c, f)| acc.axpy(*c, f))
    }

    fn l2_norm(&self) -> f64 {
        VectorField::l2_norm(self)
    }
}

/// Node values `y_k = y(k dt)` and rates `y'_k`, `k = 0..=steps`.
#[derive(Debug, Clone)]
pub struct TimeSeries<F> {
    pub dt: f64,
    pub values: Vec<F>,
    pub rates: Vec<F>,
}

impl<F: Blend> TimeSeries<F> {
    /// A time-independent series.
    pub fn constant(value: F, zero: F, dt: f64, steps: usize) -> Self {
        Self { dt, values: vec![value; steps + 1], rates: vec![zero; steps + 1] }
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|k| k as f64 * self.dt).collect()
    }

    pub fn last(&self) -> &F {
        self.values.last().expect("non-empty series")
    }

    /// Cubic Hermite value at the midpoint of `[t_k, t_{k+1}]`:
    /// `(y_k + y_{k+1})/2 + dt/8 (y'_k - y'_{k+1})`.
    pub fn midpoint(&self, k: usize) -> F {
        let h = self.dt;
        F::blend(&[
            (0.5, &self.values[k]),
            (0.5, &self.values[k + 1]),
            (h / 8.0, &self.rates[k]),
            (-h / 8.0, &self.rates[k + 1]),
        ])
    }

    /// `sup_k ||self_k - other_k||`.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        if self.values.len() != other.values.len() {
            return Err(Error::RaggedSeries(format!(
                "{} vs {} nodes",
                self.values.len(),
                other.values.len()
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| F::blend(&[(1.0, a), (-1.0, b)]).l2_norm())
            .fold(0.0, f64::max))
    }
}

pub type DensitySeries = TimeSeries<ScalarField>;
pub type VelocitySeries = TimeSeries<VectorField>;

/// Iteration controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConfig {
    pub epsilon: f64,
    pub t_end: f64,
    pub n_max: usize,
    pub tol: f64,
    pub dt: f64,
    pub elliptic: EllipticSettings,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { epsilon: 0.01, t_end: 0.1, n_max: 40, tol: 1e-10, dt: 1e-3, elliptic: EllipticSettings::default() }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidConfig(format!("picard.epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("picard.tol must be positive".into()));
        }
        if !(self.dt > 0.0 && self.t_end > 0.0 && self.dt <= self.t_end) {
            return Err(Error::InvalidConfig("picard needs 0 < dt <= T".into()));
        }
        if self.n_max == 0 {
            return Err(Error::InvalidConfig("picard.n_max must be >= 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil() as usize
    }

    /// Inner step adjusted so that an integer number of steps lands on `t_end`.
    pub fn inner_dt(&self) -> f64 {
        self.t_end / self.steps() as f64
    }
}

fn rk4<F: Blend>(y: &F, h: f64, mut f: impl FnMut(usize, &F) -> Result<F>) -> Result<(F, F)> {
    let k1 = f(0, y)?;
    let k2 = f(1, &F::blend(&[(1.0, y), (0.5 * h, &k1)]))?;
    let k3 = f(1, &F::blend(&[(1.0, y), (0.5 * h, &k2)]))?;
    let k4 = f(2, &F::blend(&[(1.0, y), (h, &k3)]))?;
    let next = F::blend(&[(1.0, y), (h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)]);
    Ok((next, k1))
}

/// Solves `(d_t + u.grad) rho = 0` along a prescribed velocity trajectory by RK4.
pub fn transport_density(law: &ViscosityLaw, u: &VelocitySeries, rho0: &ScalarField) -> Result<DensitySeries> {
    let h = u.dt;
    let mut values = vec![rho0.clone()];
    let mut rates = Vec::with_capacity(u.values.len());
    for k in 0..u.steps() {
        let mid = u.midpoint(k);
        let stage_u = [&u.values[k], &mid, &u.values[k + 1]];
        let (next, rate) = rk4(&values[k], h, |s, r| Ok(density_tendency(r, stage_u[s])))?;
        if !next.is_finite() {
            return Err(Error::NonFinite("transported density"));
        }
        check_density(law, &next)?;
        rates.push(rate);
        values.push(next);
    }
    rates.push(density_tendency(values.last().unwrap(), u.last()));
    Ok(DensitySeries { dt: h, values, rates })
}

/// Velocity trajectory of the linear problem and its pressure gradients.
#[derive(Debug, Clone)]
pub struct StokesSolution {
    pub u: VelocitySeries,
    pub grad_pi: Vec<VectorField>,
    pub max_iters: usize,
}

/// Solves `(d_t + U.grad)u + a grad Pi - eps a Lap u = 0`, `div u = 0` by RK4,
/// with `a` and `U` sampled at nodes and midpoints: entry `k` of the midpoint
/// slices belongs to `[t_k, t_{k+1}]`.
pub fn linear_stokes_solve(
    ctx: &RhsContext<'_>,
    a_nodes: &[ScalarField],
    a_mid: &[ScalarField],
    big_u_nodes: &[VectorField],
    big_u_mid: &[VectorField],
    u0: &VectorField,
    epsilon: f64,
    dt: f64,
) -> Result<StokesSolution> {
    let steps = a_mid.len();
    if a_nodes.len() != steps + 1 || big_u_nodes.len() != steps + 1 || big_u_mid.len() != steps {
        return Err(Error::RaggedSeries("coefficient and transport samples disagree".into()));
    }
    let mut values = vec![u0.clone()];
    let mut rates = Vec::with_capacity(steps + 1);
    let mut grad_pi = Vec::with_capacity(steps + 1);
    let mut max_iters = 0;
    for k in 0..steps {
        let a = [&a_nodes[k], &a_mid[k], &a_nodes[k + 1]];
        let tr = [&big_u_nodes[k], &big_u_mid[k], &big_u_nodes[k + 1]];
        let mut node_pressure = None;
        let (mut next, rate) = rk4(&values[k], dt, |s, u| {
            let (du, p, it) = momentum_tendency(ctx, a[s], tr[s], u, epsilon)?;
            max_iters = max_iters.max(it);
            if node_pressure.is_none() {
                node_pressure = Some(p);
            }
            Ok(du)
        })?;
        if !next.is_finite() {
            return Err(Error::NonFinite("Stokes velocity"));
        }
        if next.divergence().max_abs() > DIVERGENCE_CLEANUP {
            next = leray_project(&next);
        }
        grad_pi.push(node_pressure.expect("first stage ran").gradient());
        rates.push(rate);
        values.push(next);
    }
    let (du, p, it) = momentum_tendency(ctx, &a_nodes[steps], &big_u_nodes[steps], &values[steps], epsilon)?;
    max_iters = max_iters.max(it);
    rates.push(du);
    grad_pi.push(p.gradient());
    Ok(StokesSolution { u: VelocitySeries { dt, values, rates }, grad_pi, max_iters })
}

/// Fourth-order central difference of node values at interior node `k`.
fn central_rate<F: Blend>(values: &[F], k: usize, dt: f64) -> F {
    let c = 1.0 / (12.0 * dt);
    F::blend(&[
        (-c, &values[k + 2]),
        (8.0 * c, &values[k + 1]),
        (-8.0 * c, &values[k - 1]),
        (c, &values[k - 2]),
    ])
}

/// Residual of a stored trajectory as a solution of the regularized (or, for
/// `epsilon = 0`, reduced) system: the supremum over interior nodes of
/// `||rho_t + u.grad rho|| + ||u_t + (U.grad)u - eps a Lap u + a grad Pi||`,
/// with time derivatives from fourth-order central differences of the nodes and
/// `Pi` solved afresh at each node.
pub fn trajectory_residual(
    law: &ViscosityLaw,
    epsilon: f64,
    rho: &[ScalarField],
    u: &[VectorField],
    dt: f64,
    settings: EllipticSettings,
) -> Result<f64> {
    if rho.len() != u.len() {
        return Err(Error::RaggedSeries(format!("{} densities vs {} velocities", rho.len(), u.len())));
    }
    if rho.len() < 5 {
        return Err(Error::RaggedSeries("residual needs at least 5 nodes".into()));
    }
    let formulation = if epsilon == 0.0 { Formulation::Reduced } else { Formulation::Regularized { epsilon } };
    let mut worst = 0.0f64;
    for k in 2..rho.len() - 2 {
        let state = State { rho: rho[k].clone(), u: u[k].clone(), t: k as f64 * dt };
        let du = central_rate(u, k, dt);
        let drho = central_rate(rho, k, dt);
        let mom = pde_residual(law, formulation, &state, None, &du, settings)?;
        let dens = (&drho - &density_tendency(&rho[k], &u[k])).l2_norm();
        worst = worst.max(mom + dens);
    }
    Ok(worst)
}

/// One row of the iteration history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardIterate {
    /// Index of the new iterate (`1` for the first update of the initial guess).
    pub n: usize,
    /// `sup_t ||u^n - u^{n-1}|| + sup_t ||rho^n - rho^{n-1}||`.
    pub distance: f64,
    pub residual: f64,
}

impl PicardIterate {
    pub fn csv_row(&self) -> String {
        format!("{},{:.17e},{:.17e}", self.n, self.distance, self.residual)
    }
}

#[derive(Debug, Clone)]
pub struct PicardReport {
    pub history: Vec<PicardIterate>,
    pub converged: bool,
    /// Set when the distance grew for three consecutive iterations.
    pub diverged: bool,
    pub rho: DensitySeries,
    pub u: VelocitySeries,
    pub grad_pi: Vec<VectorField>,
}

impl PicardReport {
    pub fn csv_header() -> String {
        PICARD_COLUMNS.join(",")
    }

    /// Ratios `d_{n+1} / d_n`.
    pub fn ratios(&self) -> Vec<f64> {
        self.history.windows(2).map(|w| w[1].distance / w[0].distance).collect()
    }
}

/// Runs the iteration from `(rho^0, u^0, grad Pi^0) = (mean rho0, 0, 0)`.
pub fn picard_run(
    law: &ViscosityLaw,
    rho0: &ScalarField,
    u0: &VectorField,
    config: &PicardConfig,
) -> Result<PicardReport> {
    config.validate()?;
    check_density(law, rho0)?;
    let grid = rho0.grid();
    let steps = config.steps();
    let dt = config.inner_dt();
    let ctx = RhsContext::new(law).with_settings(config.elliptic);

    let mut rho = DensitySeries::constant(
        ScalarField::constant(grid, rho0.mean()),
        ScalarField::zeros(grid),
        dt,
        steps,
    );
    let mut u = VelocitySeries::constant(VectorField::zeros(grid), VectorField::zeros(grid), dt, steps);
    let mut grad_pi = vec![VectorField::zeros(grid); steps + 1];
    let mut history: Vec<PicardIterate> = Vec::new();
    let mut growth = 0;
    let (mut converged, mut diverged) = (false, false);

    for n in 1..=config.n_max {
        let rho_next = transport_density(law, &u, rho0)?;
        let a_nodes: Vec<ScalarField> = rho_next.values.iter().map(|r| r.map(f64::recip)).collect();
        let mut a_mid = Vec::with_capacity(steps);
        let mut big_u_mid = Vec::with_capacity(steps);
        for k in 0..steps {
            let r = rho_next.midpoint(k);
            check_density(law, &r)?;
            big_u_mid.push(&u.midpoint(k) - &law.g_eval(&r)?.perp_gradient());
            a_mid.push(r.map(f64::recip));
        }
        let big_u_nodes = rho_next
            .values
            .iter()
            .zip(&u.values)
            .map(|(r, v)| Ok(v - &law.g_eval(r)?.perp_gradient()))
            .collect::<Result<Vec<_>>>()?;
        let stokes =
            linear_stokes_solve(&ctx, &a_nodes, &a_mid, &big_u_nodes, &big_u_mid, u0, config.epsilon, dt)?;

        let distance = stokes.u.sup_distance(&u)? + rho_next.sup_distance(&rho)?;
        let residual = trajectory_residual(
            law,
            config.epsilon,
            &rho_next.values,
            &stokes.u.values,
            dt,
            config.elliptic,
        )
        .or_else(|e| match e {
            Error::RaggedSeries(_) => Ok(f64::NAN),
            other => Err(other),
        })?;
        if let Some(prev) = history.last() {
            growth = if distance > prev.distance { growth + 1 } else { 0 };
        }
        history.push(PicardIterate { n, distance, residual });
        rho = rho_next;
        u = stokes.u;
        grad_pi = stokes.grad_pi;
        if distance < config.tol {
            converged = true;
            break;
        }
        if growth >= 3 {
            diverged = true;
            break;
        }
    }
    Ok(PicardReport { history, converged, diverged, rho, u, grad_pi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn law() -> ViscosityLaw {
        ViscosityLaw::power_law(1.0, 0.0, 1.0, 0.5).unwrap()
    }

    fn steady(v: VectorField, dt: f64, steps: usize) -> VelocitySeries {
        let z = VectorField::zeros(v.grid());
        VelocitySeries::constant(v, z, dt, steps)
    }

    #[test]
    fn hermite_midpoint_is_exact_for_cubics() {
        let g = Grid::periodic(8).unwrap();
        let one = ScalarField::constant(&g, 1.0);
        let p = |t: f64| 1.0 + 2.0 * t - t * t + 0.5 * t * t * t;
        let dp = |t: f64| 2.0 - 2.0 * t + 1.5 * t * t;
        let s = DensitySeries {
            dt: 0.3,
            values: vec![one.scale(p(0.0)), one.scale(p(0.3))],
            rates: vec![one.scale(dp(0.0)), one.scale(dp(0.3))],
        };
        assert!((s.midpoint(0).mean() - p(0.15)).abs() < 1e-14);
    }

    #[test]
    fn transport_by_zero_velocity_is_identity() {
        let g = Grid::periodic(16).unwrap();
        let rho0 = ScalarField::from_fn(&g, |x, y| 1.0 + 0.2 * x.cos() * y.sin());
        let out = transport_density(&law(), &steady(VectorField::zeros(&g), 0.01, 5), &rho0).unwrap();
        assert!(out.values.iter().all(|r| r.values() == rho0.values()));
    }

    #[test]
    fn transport_by_rigid_rotation_keeps_radial_bump() {
        // stream function depending on r only gives a rotation that leaves any
        // radial profile unchanged; use a periodic "radius" built from cosines
        let g = Grid::periodic(32).unwrap();
        let q = ScalarField::from_fn(&g, |x, y| 2.0 - x.cos() - y.cos());
        let rho0 = q.map(|v| 1.0 + 0.1 * v);
        let u = q.map(|v| 0.3 * v).perp_gradient();
        let out = transport_density(&law(), &steady(u, 0.01, 20), &rho0).unwrap();
        assert!((out.last() - &rho0).max_abs() < 1e-12);
    }

    #[test]
    fn transport_by_translation_matches_shift() {
        let g = Grid::periodic(32).unwrap();
        let c = 0.7;
        let rho0 = ScalarField::from_fn(&g, |x, y| 1.0 + 0.2 * x.sin() * (2.0 * y).cos());
        let u = VectorField::new(ScalarField::constant(&g, c), ScalarField::zeros(&g));
        let (dt, steps) = (0.005, 100);
        let out = transport_density(&law(), &steady(u, dt, steps), &rho0).unwrap();
        let t = dt * steps as f64;
        let exact = ScalarField::from_fn(&g, |x, y| 1.0 + 0.2 * (x - c * t).sin() * (2.0 * y).cos());
        assert!((out.last() - &exact).max_abs() < 1e-9);
        let (lo, hi) = (rho0.min(), rho0.max());
        let slack = 1e-6 * (hi - lo);
        assert!(out.values.iter().all(|r| r.min() >= lo - slack && r.max() <= hi + slack));
    }

    #[test]
    fn stokes_heat_mode_decay() {
        let g = Grid::periodic(16).unwrap();
        let (eps, a_bar, dt, steps) = (0.2, 0.8, 0.01, 50);
        let a = ScalarField::constant(&g, a_bar);
        let zero = VectorField::zeros(&g);
        let u0 = ScalarField::from_fn(&g, |x, y| (2.0 * x).sin() * y.sin()).perp_gradient();
        let law = law();
        let ctx = RhsContext::new(&law);
        let sol = linear_stokes_solve(
            &ctx,
            &vec![a.clone(); steps + 1],
            &vec![a; steps],
            &vec![zero.clone(); steps + 1],
            &vec![zero; steps],
            &u0,
            eps,
            dt,
        )
        .unwrap();
        // |k|^2 = 5
        let factor = (-eps * a_bar * 5.0 * dt * steps as f64).exp();
        assert!((sol.u.last() - &u0.scale(factor)).max_abs() < 1e-9);
    }

    #[test]
    fn stokes_zero_data_and_pure_transport() {
        let g = Grid::periodic(32).unwrap();
        let law = law();
        let ctx = RhsContext::new(&law);
        let (dt, steps) = (0.005, 40);
        let a = ScalarField::constant(&g, 1.0);
        let tr = ScalarField::from_fn(&g, |x, y| x.sin() * y.sin()).perp_gradient();
        let rest = linear_stokes_solve(
            &ctx,
            &vec![a.clone(); steps + 1],
            &vec![a.clone(); steps],
            &vec![tr.clone(); steps + 1],
            &vec![tr.clone(); steps],
            &VectorField::zeros(&g),
            0.0,
            dt,
        )
        .unwrap();
        assert!(rest.u.values.iter().all(|v| v.max_abs() == 0.0));
        assert!(rest.grad_pi.iter().all(|v| v.max_abs() == 0.0));

        let u0 = ScalarField::from_fn(&g, |x, y| (x + 2.0 * y).cos() + 0.5 * (3.0 * x).sin()).perp_gradient();
        let sol = linear_stokes_solve(
            &ctx,
            &vec![a.clone(); steps + 1],
            &vec![a; steps],
            &vec![tr.clone(); steps + 1],
            &vec![tr; steps],
            &u0,
            0.0,
            dt,
        )
        .unwrap();
        let rel = (sol.u.last().l2_norm() - u0.l2_norm()).abs() / u0.l2_norm();
        assert!(rel < 1e-8, "{rel}");
        assert!(sol.u.values.iter().all(|v| v.divergence().max_abs() < 1e-9));
    }

    #[test]
    fn rest_state_converges_in_two_iterations() {
        let g = Grid::periodic(16).unwrap();
        let rho0 = ScalarField::from_fn(&g, |x, y| 1.0 + 0.2 * x.cos() * y.cos());
        let cfg = PicardConfig { t_end: 0.02, dt: 0.005, ..Default::default() };
        let rep = picard_run(&law(), &rho0, &VectorField::zeros(&g), &cfg).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.history.len(), 2);
        assert!(rep.history[0].distance > 0.0);
        assert_eq!(rep.history[1].distance, 0.0);
    }

    #[test]
    fn constant_density_iteration_contracts() {
        let g = Grid::periodic(16).unwrap();
        let rho0 = ScalarField::constant(&g, 1.0);
        let u0 = ScalarField::from_fn(&g, |x, y| x.sin() * y.sin() + 0.3 * (2.0 * x - y).cos()).perp_gradient();
        let cfg = PicardConfig { t_end: 0.1, dt: 0.005, ..Default::default() };
        let rep = picard_run(&law(), &rho0, &u0, &cfg).unwrap();
        assert!(rep.converged, "{:?}", rep.history);
        assert!(rep.ratios()[1..].iter().all(|r| *r < 1.0), "{:?}", rep.ratios());
    }
}
