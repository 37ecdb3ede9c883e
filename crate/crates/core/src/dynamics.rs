//! Right-hand sides and time integration for the four formulations of the
//! odd-viscosity system:
//!
//! * `Original`: momentum with the full odd stress divergence and pressure `pi`;
//! * `Reduced`: `u` transported by the effective velocity `U = u - grad^perp g(rho)`
//!   with modified pressure `Pi = pi - f(rho) omega`;
//! * `Elsasser`: `u` and `U` both evolved, each transported by the other;
//! * `Regularized(eps)`: the reduced system plus `eps a Lap u`.
//!
//! All products, including the pressure term `a grad P`, are formed on the grid
//! and truncated by the 2/3 rule, so band-limited data stays band-limited.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;

use crate::diagnostics::{self, DiagnosticsRecord};
use crate::elliptic::{leray_project, solve_variable_poisson, EllipticProblem, EllipticSettings};
use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField};
use crate::viscosity::ViscosityLaw;

/// Divergence drift above which velocities are re-projected after a step.
pub const DIVERGENCE_CLEANUP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Formulation {
    Original,
    Reduced,
    Elsasser,
    Regularized { epsilon: f64 },
}

impl Formulation {
    pub fn name(&self) -> &'static str {
        match self {
            Formulation::Original => "original",
            Formulation::Reduced => "reduced",
            Formulation::Elsasser => "elsasser",
            Formulation::Regularized { .. } => "regularized",
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            Formulation::Regularized { epsilon } => *epsilon,
            _ => 0.0,
        }
    }
}

/// Density, velocity and time.
#[derive(Debug, Clone)]
pub struct State {
    pub rho: ScalarField,
    pub u: VectorField,
    pub t: f64,
}

impl State {
    pub fn new(rho: ScalarField, u: VectorField, t: f64) -> Result<Self> {
        if rho.grid() != u.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { rho, u, t })
    }
}

/// State plus an independently carried effective velocity.
#[derive(Debug, Clone)]
pub struct ExtendedState {
    pub state: State,
    pub big_u: VectorField,
}

impl ExtendedState {
    /// Initializes the carried velocity consistently, `U = u - grad^perp g(rho)`.
    pub fn consistent(law: &ViscosityLaw, state: State) -> Result<Self> {
        let big_u = effective_velocity(law, &state.rho, &state.u)?;
        Ok(Self { state, big_u })
    }
}

/// Time derivatives of the evolved fields plus the pressure that produced them.
#[derive(Debug, Clone)]
pub struct Tendency {
    pub drho: ScalarField,
    pub du: VectorField,
    /// Only for the Elsasser formulation.
    pub d_big_u: Option<VectorField>,
    /// `pi` for the original formulation, `Pi` otherwise; mean zero.
    pub pressure: ScalarField,
    pub pressure_iters: usize,
}

/// Inputs shared by all right-hand sides.
#[derive(Debug, Clone, Copy)]
pub struct RhsContext<'a> {
    pub law: &'a ViscosityLaw,
    pub settings: EllipticSettings,
    pub pressure_guess: Option<&'a ScalarField>,
}

impl<'a> RhsContext<'a> {
    pub fn new(law: &'a ViscosityLaw) -> Self {
        Self { law, settings: EllipticSettings::default(), pressure_guess: None }
    }

    pub fn with_settings(mut self, settings: EllipticSettings) -> Self {
        self.settings = settings;
        self
    }
}

pub(crate) fn check_density(law: &ViscosityLaw, rho: &ScalarField) -> Result<()> {
    let min = rho.min();
    if !rho.is_finite() {
        return Err(Error::NonFinite("density"));
    }
    if min < law.rho_star() {
        return Err(Error::VacuumProximity { min, rho_star: law.rho_star() });
    }
    Ok(())
}

/// `div(f(rho) (grad u^perp + grad^perp u))` through its transport form
/// `(grad f . grad) u^perp + f Lap u^perp + (grad f . grad^perp) u`, dealiased.
pub fn odd_stress_divergence(law: &ViscosityLaw, rho: &ScalarField, u: &VectorField) -> Result<VectorField> {
    let f = law.f_eval(rho)?;
    let grad_f = f.gradient();
    let u_perp = u.perp();
    let first = grad_f.advect(&u_perp);
    let second = u_perp.laplacian().mul_scalar(&f);
    // (grad f . grad^perp) w = -d_x f d_y w + d_y f d_x w
    let perp_dir = VectorField::new(grad_f.y.clone(), -grad_f.x.clone());
    let third = perp_dir.advect(u);
    Ok((&(&first + &second) + &third).dealias())
}

/// `U = u - grad^perp g(rho)`.
pub fn effective_velocity(law: &ViscosityLaw, rho: &ScalarField, u: &VectorField) -> Result<VectorField> {
    let g = law.g_eval(rho)?;
    Ok(u - &g.perp_gradient())
}

/// `pi = Pi + f(rho) omega`, mean-zero gauge.
pub fn recover_pressure(
    law: &ViscosityLaw,
    rho: &ScalarField,
    u: &VectorField,
    big_pi: &ScalarField,
) -> Result<ScalarField> {
    let f = law.f_eval(rho)?;
    Ok((big_pi + &(&f * &u.curl())).mean_free())
}

/// `-u.grad rho`, dealiased.
pub fn density_tendency(rho: &ScalarField, u: &VectorField) -> ScalarField {
    -u.advect_scalar(rho).dealias()
}

/// Solves `-div(a grad P) = div(flux)` and returns `(P, a grad P, iterations)`.
fn pressure_solve(
    ctx: &RhsContext<'_>,
    a: &ScalarField,
    flux: &VectorField,
) -> Result<(ScalarField, VectorField, usize)> {
    let problem = EllipticProblem::new(a, flux)
        .with_settings(ctx.settings)
        .with_guess(ctx.pressure_guess);
    let sol = solve_variable_poisson(&problem)?;
    let a_grad = sol.pressure.gradient().mul_scalar(a).dealias();
    Ok((sol.pressure, a_grad, sol.iterations))
}

/// Velocity tendency `-(V.grad)u + eps a Lap u - a grad P` for a given transport
/// field `V` and coefficient `a`, with `-div(a grad P) = div((V.grad)u - eps a Lap u)`.
/// Returns the tendency, `P` and the solver iteration count.
pub fn momentum_tendency(
    ctx: &RhsContext<'_>,
    a: &ScalarField,
    transport: &VectorField,
    u: &VectorField,
    epsilon: f64,
) -> Result<(VectorField, ScalarField, usize)> {
    let mut flux = transport.advect(u).dealias();
    if epsilon != 0.0 {
        let visc = u.laplacian().mul_scalar(a).dealias();
        flux = flux.axpy(-epsilon, &visc);
    }
    let (pressure, a_grad, iters) = pressure_solve(ctx, a, &flux)?;
    Ok((-(&flux + &a_grad), pressure, iters))
}

fn reduced_like(ctx: &RhsContext<'_>, state: &State, epsilon: f64) -> Result<Tendency> {
    let State { rho, u, .. } = state;
    check_density(ctx.law, rho)?;
    let big_u = effective_velocity(ctx.law, rho, u)?;
    let a = rho.map(f64::recip);
    let (du, pressure, pressure_iters) = momentum_tendency(ctx, &a, &big_u, u, epsilon)?;
    Ok(Tendency { drho: density_tendency(rho, u), du, d_big_u: None, pressure, pressure_iters })
}

/// Reduced system: `rho_t = -u.grad rho`, `u_t = -(U.grad)u - a grad Pi`.
pub fn rhs_reduced(ctx: &RhsContext<'_>, state: &State) -> Result<Tendency> {
    reduced_like(ctx, state, 0.0)
}

/// Regularized system: the reduced system plus `eps a Lap u`.
pub fn rhs_regularized(ctx: &RhsContext<'_>, state: &State, epsilon: f64) -> Result<Tendency> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    reduced_like(ctx, state, epsilon)
}

/// Original system: `u_t = -(u.grad)u - a grad pi - a div(f (grad u^perp + grad^perp u))`.
pub fn rhs_original(ctx: &RhsContext<'_>, state: &State) -> Result<Tendency> {
    let State { rho, u, .. } = state;
    check_density(ctx.law, rho)?;
    let a = rho.map(f64::recip);
    let stress = odd_stress_divergence(ctx.law, rho, u)?;
    let flux = &u.advect(u).dealias() + &stress.mul_scalar(&a).dealias();
    let (pressure, a_grad, pressure_iters) = pressure_solve(ctx, &a, &flux)?;
    Ok(Tendency {
        drho: density_tendency(rho, u),
        du: -(&flux + &a_grad),
        d_big_u: None,
        pressure,
        pressure_iters,
    })
}

/// Elsasser system with the carried `U`: `u_t = -(U.grad)u - a grad Pi`,
/// `U_t = -(u.grad)U - a grad Pi`, one pressure from the `u` equation.
pub fn rhs_elsasser(ctx: &RhsContext<'_>, ext: &ExtendedState) -> Result<Tendency> {
    let State { rho, u, .. } = &ext.state;
    check_density(ctx.law, rho)?;
    let big_u = &ext.big_u;
    let a = rho.map(f64::recip);
    let flux = big_u.advect(u).dealias();
    let (pressure, a_grad, pressure_iters) = pressure_solve(ctx, &a, &flux)?;
    let flux_big = u.advect(big_u).dealias();
    Ok(Tendency {
        drho: density_tendency(rho, u),
        du: -(&flux + &a_grad),
        d_big_u: Some(-(&flux_big + &a_grad)),
        pressure,
        pressure_iters,
    })
}

/// Evaluates the right-hand side of `formulation`.
pub fn rhs(
    ctx: &RhsContext<'_>,
    formulation: Formulation,
    state: &State,
    big_u: Option<&VectorField>,
) -> Result<Tendency> {
    match formulation {
        Formulation::Original => rhs_original(ctx, state),
        Formulation::Reduced => rhs_reduced(ctx, state),
        Formulation::Regularized { epsilon } => rhs_regularized(ctx, state, epsilon),
        Formulation::Elsasser => {
            let big_u = big_u.ok_or_else(|| {
                Error::InvalidConfig("the Elsasser formulation needs a carried U".into())
            })?;
            let ext = ExtendedState { state: state.clone(), big_u: big_u.clone() };
            rhs_elsasser(ctx, &ext)
        }
    }
}

/// Linear combination `y + sum_i c_i k_i` over component lists.
fn combine(y: &[ScalarField], terms: &[(f64, &[ScalarField])]) -> Vec<ScalarField> {
    y.iter()
        .enumerate()
        .map(|(i, base)| {
            let mut vals = base.values().to_vec();
            for (c, k) in terms {
                for (v, kv) in vals.iter_mut().zip(k[i].values()) {
                    *v += c * kv;
                }
            }
            ScalarField::from_raw(base.grid(), vals)
        })
        .collect()
}

/// Classical fourth-order Runge-Kutta step for an autonomous system.
pub fn rk4_step<F>(mut f: F, y: &[ScalarField], dt: f64) -> Result<Vec<ScalarField>>
where
    F: FnMut(&[ScalarField]) -> Result<Vec<ScalarField>>,
{
    let k1 = f(y)?;
    let k2 = f(&combine(y, &[(0.5 * dt, &k1)]))?;
    let k3 = f(&combine(y, &[(0.5 * dt, &k2)]))?;
    let k4 = f(&combine(y, &[(dt, &k3)]))?;
    Ok(combine(
        y,
        &[(dt / 6.0, &k1), (dt / 3.0, &k2), (dt / 3.0, &k3), (dt / 6.0, &k4)],
    ))
}

/// Diagonal linear operator `L` in Fourier space, applied per component;
/// `None` entries mean `L = 0` on that component.
pub struct DiagonalLinear {
    pub symbol: Vec<f64>,
    pub components: Vec<bool>,
}

impl DiagonalLinear {
    fn exp(&self, y: &[ScalarField], h: f64) -> Vec<ScalarField> {
        y.iter()
            .zip(&self.components)
            .map(|(f, &on)| {
                if !on {
                    return f.clone();
                }
                let spec: Vec<Complex64> =
                    f.spectrum().iter().zip(&self.symbol).map(|(c, l)| c * (l * h).exp()).collect();
                ScalarField::from_spectrum(f.grid(), spec)
            })
            .collect()
    }

    fn apply(&self, y: &[ScalarField]) -> Vec<ScalarField> {
        y.iter()
            .zip(&self.components)
            .map(|(f, &on)| {
                if !on {
                    return ScalarField::zeros(f.grid());
                }
                let spec: Vec<Complex64> =
                    f.spectrum().iter().zip(&self.symbol).map(|(c, l)| c * l).collect();
                ScalarField::from_spectrum(f.grid(), spec)
            })
            .collect()
    }
}

/// Integrating-factor (Lawson) RK4 for `y' = L y + N(y)` where `f = L y + N(y)`
/// is the full right-hand side and `L` is treated exactly.
pub fn if_rk4_step<F>(mut f: F, linear: &DiagonalLinear, y: &[ScalarField], dt: f64) -> Result<Vec<ScalarField>>
where
    F: FnMut(&[ScalarField]) -> Result<Vec<ScalarField>>,
{
    let mut nonlinear = |z: &[ScalarField]| -> Result<Vec<ScalarField>> {
        let full = f(z)?;
        let lin = linear.apply(z);
        Ok(full.iter().zip(&lin).map(|(a, b)| a - b).collect())
    };
    let half = |z: &[ScalarField]| linear.exp(z, 0.5 * dt);
    let k1 = nonlinear(y)?;
    let y_half = half(y);
    let k2 = nonlinear(&half(&combine(y, &[(0.5 * dt, &k1)])))?;
    let k3 = nonlinear(&combine(&y_half, &[(0.5 * dt, &k2)]))?;
    let k4 = nonlinear(&combine(&linear.exp(y, dt), &[(dt, &half(&k3))]))?;
    let e_k1 = linear.exp(&k1, dt);
    let k23: Vec<ScalarField> = k2.iter().zip(&k3).map(|(a, b)| a + b).collect();
    let e_k23 = half(&k23);
    Ok(combine(
        &linear.exp(y, dt),
        &[(dt / 6.0, &e_k1), (dt / 3.0, &e_k23), (dt / 6.0, &k4)],
    ))
}

/// Integration controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub formulation: Formulation,
    /// Fixed time step; when absent the step is chosen from the CFL number each step.
    pub dt: Option<f64>,
    pub cfl: f64,
    pub t_end: f64,
    /// Treat `eps mean(a) Lap u` exactly (regularized runs only).
    pub integrating_factor: bool,
    /// Diagnostics are recorded every `output_every` steps (and at the end).
    pub output_every: usize,
    pub elliptic: EllipticSettings,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            formulation: Formulation::Reduced,
            dt: Some(1e-3),
            cfl: 0.5,
            t_end: 1.0,
            integrating_factor: false,
            output_every: 10,
            elliptic: EllipticSettings::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
            }
        }
        if !(self.cfl > 0.0) {
            return Err(Error::InvalidConfig("cfl must be positive".into()));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidConfig("t_end must be non-negative".into()));
        }
        if let Formulation::Regularized { epsilon } = self.formulation {
            if !(epsilon > 0.0 && epsilon <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "regularization epsilon must lie in (0, 1], got {epsilon}"
                )));
            }
        }
        if self.output_every == 0 {
            return Err(Error::InvalidConfig("output cadence must be >= 1".into()));
        }
        Ok(())
    }
}

/// A running simulation of one formulation.
pub struct Simulation {
    law: ViscosityLaw,
    config: SimConfig,
    state: State,
    big_u: Option<VectorField>,
    pressure: RefCell<Option<ScalarField>>,
    last_iters: usize,
    steps: usize,
}

impl Simulation {
    pub fn new(law: ViscosityLaw, initial: State, config: SimConfig) -> Result<Self> {
        config.validate()?;
        check_density(&law, &initial.rho)?;
        law.validate_range(initial.rho.max())?;
        let big_u = match config.formulation {
            Formulation::Elsasser => Some(effective_velocity(&law, &initial.rho, &initial.u)?),
            _ => None,
        };
        Ok(Self {
            law,
            config,
            state: initial,
            big_u,
            pressure: RefCell::new(None),
            last_iters: 0,
            steps: 0,
        })
    }

    /// Starts an Elsasser run from an explicit carried `U`.
    pub fn with_carried_velocity(mut self, big_u: VectorField) -> Result<Self> {
        if self.config.formulation != Formulation::Elsasser {
            return Err(Error::InvalidConfig("carried U only applies to the Elsasser formulation".into()));
        }
        self.big_u = Some(big_u);
        Ok(self)
    }

    pub fn law(&self) -> &ViscosityLaw {
        &self.law
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// The carried `U` (Elsasser runs only).
    pub fn carried_velocity(&self) -> Option<&VectorField> {
        self.big_u.as_ref()
    }

    /// `U` as evolved (Elsasser) or as computed from `(rho, u)`.
    pub fn big_u(&self) -> Result<VectorField> {
        match &self.big_u {
            Some(v) => Ok(v.clone()),
            None => effective_velocity(&self.law, &self.state.rho, &self.state.u),
        }
    }

    /// Most recent pressure (`pi` for the original formulation, `Pi` otherwise).
    pub fn last_pressure(&self) -> Option<ScalarField> {
        self.pressure.borrow().clone()
    }

    pub fn last_pressure_iters(&self) -> usize {
        self.last_iters
    }

    pub fn ctx(&self) -> RhsContext<'_> {
        RhsContext::new(&self.law).with_settings(self.config.elliptic)
    }

    /// Tendency at the current state, with a cold pressure start.
    pub fn tendency(&self) -> Result<Tendency> {
        rhs(&self.ctx(), self.config.formulation, &self.state, self.big_u.as_ref())
    }

    /// Largest stable step `cfl h / max(|u|, |U|)`.
    pub fn cfl_limit(&self) -> Result<f64> {
        let speed = self.state.u.max_abs().max(self.big_u()?.max_abs());
        let h = self.state.rho.grid().spacing();
        Ok(if speed > 0.0 { self.config.cfl * h / speed } else { f64::INFINITY })
    }

    fn components(&self) -> Vec<ScalarField> {
        let mut y = vec![self.state.rho.clone(), self.state.u.x.clone(), self.state.u.y.clone()];
        if let Some(b) = &self.big_u {
            y.push(b.x.clone());
            y.push(b.y.clone());
        }
        y
    }

    /// Advances by `dt` (checked against the CFL limit).
    pub fn step_by(&mut self, dt: f64) -> Result<()> {
        let limit = self.cfl_limit()?;
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, limit });
        }
        let formulation = self.config.formulation;
        let settings = self.config.elliptic;
        let law = &self.law;
        let pressure = &self.pressure;
        let mut iters = 0usize;
        let mut eval = |y: &[ScalarField]| -> Result<Vec<ScalarField>> {
            if y.iter().any(|f| !f.is_finite()) {
                return Err(Error::NonFinite("stage state"));
            }
            let state = State { rho: y[0].clone(), u: VectorField::new(y[1].clone(), y[2].clone()), t: 0.0 };
            let big_u = (y.len() == 5).then(|| VectorField::new(y[3].clone(), y[4].clone()));
            let guess = pressure.borrow().clone();
            let ctx = RhsContext { law, settings, pressure_guess: guess.as_ref() };
            let tend = rhs(&ctx, formulation, &state, big_u.as_ref())?;
            iters = iters.max(tend.pressure_iters);
            *pressure.borrow_mut() = Some(tend.pressure);
            let mut out = vec![tend.drho, tend.du.x, tend.du.y];
            if let Some(d) = tend.d_big_u {
                out.push(d.x);
                out.push(d.y);
            }
            Ok(out)
        };
        let y = self.components();
        let next = match formulation {
            Formulation::Regularized { epsilon } if self.config.integrating_factor => {
                let grid = self.state.rho.grid().clone();
                let a_mean = self.state.rho.map(f64::recip).mean();
                let n = grid.n();
                let symbol = (0..grid.size())
                    .map(|i| {
                        let kx = grid.diff_wavenumber(i % n);
                        let ky = grid.diff_wavenumber(i / n);
                        -epsilon * a_mean * (kx * kx + ky * ky)
                    })
                    .collect();
                let linear = DiagonalLinear { symbol, components: vec![false, true, true] };
                if_rk4_step(&mut eval, &linear, &y, dt)?
            }
            _ => rk4_step(&mut eval, &y, dt)?,
        };
        if next.iter().any(|f| !f.is_finite()) {
            return Err(Error::NonFinite("state after step"));
        }
        let mut it = next.into_iter();
        let rho = it.next().unwrap();
        let mut u = VectorField::new(it.next().unwrap(), it.next().unwrap());
        let mut big_u = match (it.next(), it.next()) {
            (Some(x), Some(y)) => Some(VectorField::new(x, y)),
            _ => None,
        };
        // u and U are projected together so the constraint U - u sees one linear map
        let drift = big_u
            .as_ref()
            .map_or(0.0, |b| b.divergence().max_abs())
            .max(u.divergence().max_abs());
        if drift > DIVERGENCE_CLEANUP {
            u = leray_project(&u);
            big_u = big_u.map(|b| leray_project(&b));
        }
        if big_u.is_some() {
            self.big_u = big_u;
        }
        check_density(&self.law, &rho)?;
        self.state = State { rho, u, t: self.state.t + dt };
        self.last_iters = iters;
        self.steps += 1;
        Ok(())
    }

    /// Advances to `t_end`, calling `observer` after every step.
    pub fn run_until(
        &mut self,
        t_end: f64,
        mut observer: impl FnMut(&Simulation) -> Result<()>,
    ) -> Result<()> {
        let t0 = self.state.t;
        let tiny = 1e-12 * t_end.abs().max(1.0);
        match self.config.dt {
            Some(dt) => {
                let span = t_end - t0;
                if span <= tiny {
                    return Ok(());
                }
                let steps = (span / dt - 1e-9).ceil().max(1.0) as usize;
                for k in 1..=steps {
                    let target = if k == steps { t_end } else { t0 + k as f64 * dt };
                    let h = target - self.state.t;
                    self.step_by(h)?;
                    self.state.t = target;
                    observer(self)?;
                }
            }
            None => {
                while self.state.t < t_end - tiny {
                    let h = self.cfl_limit()?.min(t_end - self.state.t);
                    self.step_by(h)?;
                    observer(self)?;
                }
            }
        }
        Ok(())
    }

    pub fn record(&self) -> Result<DiagnosticsRecord> {
        diagnostics::record(self)
    }
}

/// Output of [`simulate`]: sampled states and their diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub carried: Vec<Option<VectorField>>,
    pub records: Vec<DiagnosticsRecord>,
}

/// Runs `config` from `initial`, sampling every `output_every` steps and at the end.
pub fn simulate(law: &ViscosityLaw, initial: State, config: SimConfig) -> Result<Trajectory> {
    let mut sim = Simulation::new(law.clone(), initial, config)?;
    let mut traj = Trajectory { states: Vec::new(), carried: Vec::new(), records: Vec::new() };
    let push = |sim: &Simulation, traj: &mut Trajectory| -> Result<()> {
        traj.records.push(sim.record()?);
        traj.states.push(sim.state().clone());
        traj.carried.push(sim.carried_velocity().cloned());
        Ok(())
    };
    push(&sim, &mut traj)?;
    let every = config.output_every;
    let t_end = config.t_end;
    sim.run_until(t_end, |s| {
        let last = (s.time() - t_end).abs() <= 1e-12 * t_end.abs().max(1.0);
        if s.steps() % every == 0 || last {
            push(s, &mut traj)?;
        }
        Ok(())
    })?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Axis, Grid};
    use crate::initial::InitialData;

    fn grid(n: usize) -> Grid {
        Grid::periodic(n).unwrap()
    }

    fn smooth_state(g: &Grid) -> State {
        let rho = ScalarField::from_fn(g, |x, y| 1.0 + 0.2 * x.cos() * y.cos() + 0.05 * (x + 2.0 * y).sin());
        let psi = ScalarField::from_fn(g, |x, y| x.sin() * y.sin() + 0.3 * (2.0 * x - y).cos());
        State::new(rho, psi.perp_gradient(), 0.0).unwrap()
    }

    fn linear_law() -> ViscosityLaw {
        ViscosityLaw::power_law(1.0, 0.0, 1.0, 0.5).unwrap()
    }

    /// Direct tensor route: `(div A)_i = sum_j d_j A_{ji}` with `A = f (grad u^perp + grad^perp u)`.
    fn stress_direct(law: &ViscosityLaw, rho: &ScalarField, u: &VectorField) -> VectorField {
        let f = law.f_eval(rho).unwrap();
        let gp = crate::grid::gradient_matrix(&u.perp());
        let pg = crate::grid::perp_gradient_matrix(u);
        let m = |j: usize, i: usize| &f * &(&gp[j][i] + &pg[j][i]);
        let comp = |i: usize| &m(0, i).derivative(Axis::X) + &m(1, i).derivative(Axis::Y);
        VectorField::new(comp(0), comp(1)).dealias()
    }

    #[test]
    fn odd_stress_constant_density() {
        let g = grid(32);
        let law = linear_law();
        let rho = ScalarField::constant(&g, 2.0);
        let u = smooth_state(&g).u;
        let t = odd_stress_divergence(&law, &rho, &u).unwrap();
        let expected = u.perp().laplacian().scale(2.0);
        assert!((&t - &expected).max_abs() < 1e-11);
        let zero = odd_stress_divergence(&law, &rho, &VectorField::zeros(&g)).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn odd_stress_matches_direct_tensor_divergence() {
        let g = grid(64);
        let law = ViscosityLaw::power_law(0.7, 0.3, 2.0, 0.5).unwrap();
        let s = smooth_state(&g);
        // band-limited density keeps f(rho) band-limited for a quadratic law
        let t = odd_stress_divergence(&law, &s.rho, &s.u).unwrap();
        let d = stress_direct(&law, &s.rho, &s.u);
        assert!((&t - &d).max_abs() < 1e-9, "{}", (&t - &d).max_abs());
    }

    #[test]
    fn effective_velocity_cases() {
        let g = grid(64);
        let law = linear_law();
        let u = smooth_state(&g).u;
        let flat = ScalarField::constant(&g, 1.3);
        assert!((&effective_velocity(&law, &flat, &u).unwrap() - &u).max_abs() < 1e-12);

        let rho = smooth_state(&g).rho;
        let big_u = effective_velocity(&law, &rho, &u).unwrap();
        let expected = &u - &rho.map(f64::ln).perp_gradient().scale(2.0);
        assert!((&big_u - &expected).max_abs() < 1e-12);
        assert!(big_u.divergence().max_abs() < 1e-10);

        // f = rho^2, u = 0: U = -grad^perp(4 (rho - 1)) = (4 d_y rho, -4 d_x rho),
        // rho = 1 + 0.1 cos x  =>  U = (0, 0.4 sin x); check against centred differences.
        let law2 = ViscosityLaw::power_law(1.0, 0.0, 2.0, 0.8).unwrap();
        let rho2 = ScalarField::from_fn(&g, |x, _| 1.0 + 0.1 * x.cos());
        let u2 = effective_velocity(&law2, &rho2, &VectorField::zeros(&g)).unwrap();
        let h = 1e-5;
        let gfun = |x: f64| 4.0 * (1.0 + 0.1 * x.cos() - 0.8);
        let mut worst = 0.0f64;
        for i in 0..g.size() {
            let (x, _) = g.coords(i);
            let dgdx = (gfun(x + h) - gfun(x - h)) / (2.0 * h);
            worst = worst.max((u2.y.values()[i] + dgdx).abs()).max(u2.x.values()[i].abs());
        }
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn rest_state_is_steady() {
        let g = grid(32);
        let law = linear_law();
        let s = State::new(smooth_state(&g).rho, VectorField::zeros(&g), 0.0).unwrap();
        let ctx = RhsContext::new(&law);
        for tend in [rhs_reduced(&ctx, &s).unwrap(), rhs_original(&ctx, &s).unwrap()] {
            assert_eq!(tend.drho.max_abs(), 0.0);
            assert_eq!(tend.du.max_abs(), 0.0);
        }
    }

    #[test]
    fn reduced_tendency_is_solenoidal_and_energy_neutral() {
        let g = grid(64);
        let law = linear_law();
        let s = smooth_state(&g);
        let tend = rhs_reduced(&RhsContext::new(&law), &s).unwrap();
        assert!(tend.du.divergence().l2_norm() < 1e-8);
        // d/dt int rho |u|^2 = int rho_t |u|^2 + 2 int rho u . u_t
        let u2 = s.u.dot(&s.u);
        let rate = tend.drho.inner(&u2) + 2.0 * s.u.mul_scalar(&s.rho).inner(&tend.du);
        assert!(rate.abs() < 1e-9, "{rate}");
    }

    #[test]
    fn constant_density_reduces_to_euler() {
        let g = grid(32);
        let law = linear_law();
        let s = State::new(ScalarField::constant(&g, 1.0), smooth_state(&g).u, 0.0).unwrap();
        let tend = rhs_reduced(&RhsContext::new(&law), &s).unwrap();
        let euler = -leray_project(&s.u.advect(&s.u).dealias());
        assert!((&tend.du - &euler).max_abs() < 1e-9);
    }

    #[test]
    fn original_matches_reduced_and_pressures_agree() {
        let g = grid(64);
        let law = ViscosityLaw::power_law(0.8, 0.1, 1.5, 0.5).unwrap();
        let s = smooth_state(&g);
        let ctx = RhsContext::new(&law);
        let red = rhs_reduced(&ctx, &s).unwrap();
        let orig = rhs_original(&ctx, &s).unwrap();
        assert!((&red.du - &orig.du).l2_norm() < 1e-8, "{}", (&red.du - &orig.du).l2_norm());
        let pi = recover_pressure(&law, &s.rho, &s.u, &red.pressure).unwrap();
        let diff = (&pi.gradient() - &orig.pressure.gradient()).l2_norm();
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn recover_pressure_constant_law() {
        let g = grid(32);
        let law = ViscosityLaw::constant(0.7, 0.5).unwrap();
        let s = smooth_state(&g);
        let pi0 = ScalarField::from_fn(&g, |x, y| (x - y).sin());
        let pi = recover_pressure(&law, &s.rho, &s.u, &pi0).unwrap();
        let expected = (&pi0 + &s.u.curl().scale(0.7)).mean_free();
        assert!((&pi - &expected).max_abs() < 1e-13);
        let still = VectorField::new(ScalarField::constant(&g, 0.4), ScalarField::constant(&g, -0.1));
        let pi2 = recover_pressure(&law, &s.rho, &still, &pi0).unwrap();
        assert!((&pi2 - &pi0).max_abs() < 1e-13);
    }

    #[test]
    fn elsasser_consistency_on_consistent_state() {
        let g = grid(64);
        let law = ViscosityLaw::power_law(1.0, 0.0, 2.0, 0.5).unwrap();
        let s = smooth_state(&g);
        let ext = ExtendedState::consistent(&law, s.clone()).unwrap();
        let ctx = RhsContext::new(&law);
        let els = rhs_elsasser(&ctx, &ext).unwrap();
        let red = rhs_reduced(&ctx, &s).unwrap();
        assert!((&els.du - &red.du).max_abs() < 1e-12);
        // (d_t + U.grad) rho = -u.grad rho + U.grad rho
        let transport = &els.drho + &ext.big_u.advect_scalar(&s.rho).dealias();
        assert!(transport.l2_norm() < 1e-9, "{}", transport.l2_norm());
        let dbu = els.d_big_u.unwrap();
        assert!(dbu.divergence().l2_norm() < 1e-8);
    }

    #[test]
    fn elsasser_with_flat_density_is_euler_twice() {
        let g = grid(32);
        let law = linear_law();
        let s = State::new(ScalarField::constant(&g, 1.0), smooth_state(&g).u, 0.0).unwrap();
        let ext = ExtendedState::consistent(&law, s).unwrap();
        let t = rhs_elsasser(&RhsContext::new(&law), &ext).unwrap();
        assert!((&t.du - t.d_big_u.as_ref().unwrap()).max_abs() < 1e-12);
    }

    #[test]
    fn regularized_zero_epsilon_is_reduced_bitwise() {
        let g = grid(32);
        let law = linear_law();
        let s = smooth_state(&g);
        let ctx = RhsContext::new(&law);
        let a = rhs_regularized(&ctx, &s, 0.0).unwrap();
        let b = rhs_reduced(&ctx, &s).unwrap();
        assert_eq!(a.du.x.values(), b.du.x.values());
        assert_eq!(a.du.y.values(), b.du.y.values());
        assert!(rhs_regularized(&ctx, &s, 1.5).is_err());
    }

    #[test]
    fn regularized_energy_identity() {
        let g = grid(64);
        let law = linear_law();
        let s = smooth_state(&g);
        let eps = 0.05;
        let tend = rhs_regularized(&RhsContext::new(&law), &s, eps).unwrap();
        let u2 = s.u.dot(&s.u);
        let rate = 0.5 * (tend.drho.inner(&u2) + 2.0 * s.u.mul_scalar(&s.rho).inner(&tend.du));
        let grad_sq = s.u.x.gradient().inner(&s.u.x.gradient()) + s.u.y.gradient().inner(&s.u.y.gradient());
        assert!((rate + eps * grad_sq).abs() < 1e-9, "{} vs {}", rate, -eps * grad_sq);
    }

    fn taylor_green(g: &Grid, rho_bar: f64) -> State {
        let psi = ScalarField::from_fn(g, |x, y| x.sin() * y.sin());
        State::new(ScalarField::constant(g, rho_bar), psi.perp_gradient(), 0.0).unwrap()
    }

    #[test]
    fn regularized_taylor_green_decay() {
        let g = grid(32);
        let law = linear_law();
        let (eps, rho_bar, t_end) = (0.1, 1.25, 0.5);
        for integrating_factor in [false, true] {
            let cfg = SimConfig {
                formulation: Formulation::Regularized { epsilon: eps },
                dt: Some(5e-3),
                t_end,
                integrating_factor,
                ..Default::default()
            };
            let initial = taylor_green(&g, rho_bar);
            let mut sim = Simulation::new(law.clone(), initial.clone(), cfg).unwrap();
            sim.run_until(t_end, |_| Ok(())).unwrap();
            // amplitude decays like exp(-eps k^2 t / rho_bar) with k^2 = 2
            let factor = (-2.0 * eps * t_end / rho_bar).exp();
            let expected = initial.u.scale(factor);
            let err = (&sim.state().u - &expected).max_abs();
            assert!(err < 1e-9, "if={integrating_factor} err={err}");
            let e0 = initial.u.l2_norm().powi(2);
            let e1 = sim.state().u.l2_norm().powi(2);
            assert!((e1 / e0 - (-4.0 * eps * t_end / rho_bar).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_velocity_is_fixed_in_time() {
        let g = grid(32);
        let law = linear_law();
        let s = State::new(InitialData::default().density(&g), VectorField::zeros(&g), 0.0).unwrap();
        let cfg = SimConfig { t_end: 0.05, dt: Some(1e-2), ..Default::default() };
        let mut sim = Simulation::new(law, s.clone(), cfg).unwrap();
        sim.run_until(0.05, |_| Ok(())).unwrap();
        assert_eq!(sim.state().rho.values(), s.rho.values());
        assert_eq!(sim.state().u.max_abs(), 0.0);
        assert!((sim.time() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn cfl_and_vacuum_guards() {
        let g = grid(32);
        let law = linear_law();
        let s = smooth_state(&g);
        let cfg = SimConfig { dt: Some(1.0), t_end: 1.0, ..Default::default() };
        let mut sim = Simulation::new(law.clone(), s.clone(), cfg).unwrap();
        assert!(matches!(sim.step_by(1.0), Err(Error::CflViolation { .. })));

        let tight = law.with_rho_star(0.95).unwrap();
        assert!(matches!(
            Simulation::new(tight, s, SimConfig::default()),
            Err(Error::VacuumProximity { .. })
        ));
    }

    #[test]
    fn cfl_driven_steps_land_on_end_time() {
        let g = grid(16);
        let law = linear_law();
        let s = smooth_state(&g);
        let cfg = SimConfig { dt: None, t_end: 0.1, ..Default::default() };
        let traj = simulate(&law, s, cfg).unwrap();
        assert!((traj.states.last().unwrap().t - 0.1).abs() < 1e-12);
    }
}
