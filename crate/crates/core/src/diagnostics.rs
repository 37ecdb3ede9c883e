//! Energies, constraint residuals, PDE residuals and the two-solution
//! stability (Gronwall) check.

use crate::dynamics::{
    effective_velocity, rhs, Formulation, RhsContext, SimConfig, Simulation, State,
};
use crate::elliptic::{solve_variable_poisson, EllipticProblem, EllipticSettings};
use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField};
use crate::viscosity::ViscosityLaw;

/// Column order of `diag.csv`.
pub const DIAG_COLUMNS: [&str; 12] = [
    "t",
    "E_u",
    "E_U",
    "div_u_max",
    "div_U_max",
    "elsasser_residual",
    "rho_min",
    "rho_max",
    "rho_mean",
    "pde_residual",
    "pressure_iters",
    "steps",
];

/// Per-output scalars of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// `||sqrt(rho) u||`.
    pub e_u: f64,
    /// `||sqrt(rho) U||` with `U = u - grad^perp g(rho)`.
    pub e_big_u: f64,
    pub div_u_max: f64,
    pub div_big_u_max: f64,
    /// `||U_carried - (u - grad^perp g(rho))||`; zero without a carried `U`.
    pub elsasser_residual: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_mean: f64,
    pub pde_residual: f64,
    pub pressure_iters: usize,
    pub steps: usize,
}

impl DiagnosticsRecord {
    pub fn csv_header() -> String {
        DIAG_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{}",
            self.t,
            self.e_u,
            self.e_big_u,
            self.div_u_max,
            self.div_big_u_max,
            self.elsasser_residual,
            self.rho_min,
            self.rho_max,
            self.rho_mean,
            self.pde_residual,
            self.pressure_iters,
            self.steps,
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.e_u,
            self.e_big_u,
            self.div_u_max,
            self.div_big_u_max,
            self.elsasser_residual,
            self.rho_min,
            self.rho_max,
            self.rho_mean,
            self.pde_residual,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// `||sqrt(rho) v||_2`.
pub fn weighted_energy(rho: &ScalarField, v: &VectorField) -> Result<f64> {
    let min = rho.min();
    if !(min > 0.0) {
        return Err(Error::VacuumProximity { min, rho_star: 0.0 });
    }
    Ok(v.dot(v).inner(rho).sqrt())
}

/// L2 norm of the momentum equation of `formulation` at `state`, with the time
/// derivative replaced by `du` and the pressure re-solved from the state alone:
/// `du + N + a grad P` where `-div(a grad P) = div N`.
///
/// For the original formulation `N = (u.grad)u + a T`; otherwise
/// `N = (U.grad)u - eps a Lap u` with `U` carried (Elsasser) or computed.
pub fn pde_residual(
    law: &ViscosityLaw,
    formulation: Formulation,
    state: &State,
    big_u: Option<&VectorField>,
    du: &VectorField,
    settings: EllipticSettings,
) -> Result<f64> {
    let State { rho, u, .. } = state;
    let a = rho.map(f64::recip);
    let flux = match formulation {
        Formulation::Original => {
            let t = crate::dynamics::odd_stress_divergence(law, rho, u)?;
            &u.advect(u).dealias() + &t.mul_scalar(&a).dealias()
        }
        _ => {
            let computed;
            let big_u = match (formulation, big_u) {
                (Formulation::Elsasser, Some(b)) => b,
                _ => {
                    computed = effective_velocity(law, rho, u)?;
                    &computed
                }
            };
            let mut flux = big_u.advect(u).dealias();
            let eps = formulation.epsilon();
            if eps != 0.0 {
                flux = flux.axpy(-eps, &u.laplacian().mul_scalar(&a).dealias());
            }
            flux
        }
    };
    let sol = solve_variable_poisson(&EllipticProblem::new(&a, &flux).with_settings(settings))?;
    let a_grad = sol.pressure.gradient().mul_scalar(&a);
    Ok((&(du + &flux) + &a_grad).l2_norm())
}

/// Diagnostics of the current simulation state.
pub fn record(sim: &Simulation) -> Result<DiagnosticsRecord> {
    let law = sim.law();
    let state = sim.state();
    let rho = &state.rho;
    let computed_u = effective_velocity(law, rho, &state.u)?;
    let carried = sim.carried_velocity();
    let elsasser_residual = carried.map_or(0.0, |c| (c - &computed_u).l2_norm());
    let div_big_u_max = carried.unwrap_or(&computed_u).divergence().max_abs();
    let formulation = sim.config().formulation;
    let settings = sim.config().elliptic;
    let tend = rhs(&RhsContext::new(law).with_settings(settings), formulation, state, carried)?;
    let pde = pde_residual(law, formulation, state, carried, &tend.du, settings)?;
    let rec = DiagnosticsRecord {
        t: state.t,
        e_u: weighted_energy(rho, &state.u)?,
        e_big_u: weighted_energy(rho, &computed_u)?,
        div_u_max: state.u.divergence().max_abs(),
        div_big_u_max,
        elsasser_residual,
        rho_min: rho.min(),
        rho_max: rho.max(),
        rho_mean: rho.mean(),
        pde_residual: pde,
        pressure_iters: if sim.steps() == 0 { tend.pressure_iters } else { sim.last_pressure_iters() },
        steps: sim.steps(),
    };
    if !rec.is_finite() {
        return Err(Error::NonFinite("diagnostics record"));
    }
    Ok(rec)
}

/// Column order of `stability.csv`.
pub const STABILITY_COLUMNS: [&str; 5] = ["delta", "t", "D", "I", "envelope"];

/// Output of [`stability_twin`].
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub delta: f64,
    pub times: Vec<f64>,
    /// `||(drho, du, dU)||^2`.
    pub distance: Vec<f64>,
    /// `||grad rho2||_inf + ||grad u2||_inf + ||grad U2||_inf + ||grad Pi2||_inf` (grid maxima).
    pub indicator: Vec<f64>,
    /// Trapezoidal `int_0^t I`.
    pub integral: Vec<f64>,
    pub constant: f64,
    pub envelope: Vec<f64>,
    pub pass: bool,
}

/// Upper end of the constant search.
pub const MAX_CONSTANT: f64 = 1e6;

impl StabilityReport {
    /// `C exp(C int I) D(0)` at every sample.
    pub fn envelope_for(&self, c: f64) -> Vec<f64> {
        let d0 = self.distance.first().copied().unwrap_or(0.0);
        self.integral.iter().map(|s| c * (c * s).exp() * d0).collect()
    }

    pub fn holds_for(&self, c: f64) -> bool {
        envelope_holds(&self.distance, &self.integral, c)
    }

    /// Re-evaluates the envelope and pass flag for a given constant.
    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self.envelope = self.envelope_for(c);
        self.pass = c.is_finite() && self.holds_for(c);
        self
    }

    pub fn csv_header() -> String {
        STABILITY_COLUMNS.join(",")
    }

    pub fn csv_rows(&self) -> Vec<String> {
        (0..self.times.len())
            .map(|k| {
                format!(
                    "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                    self.delta,
                    self.times[k], self.distance[k], self.indicator[k], self.envelope[k]
                )
            })
            .collect()
    }
}

fn envelope_holds(distance: &[f64], integral: &[f64], c: f64) -> bool {
    let d0 = distance.first().copied().unwrap_or(0.0);
    distance.iter().zip(integral).all(|(d, s)| *d <= c * (c * s).exp() * d0)
}

/// Smallest `C >= 1` (within rounding) with `D(t) <= C exp(C int I) D(0)` at every
/// sample, by golden-section search on `log C` over `[1, MAX_CONSTANT]`;
/// `None` if even `MAX_CONSTANT` fails.
pub fn fit_constant(distance: &[f64], integral: &[f64]) -> Option<f64> {
    if envelope_holds(distance, integral, 1.0) {
        return Some(1.0);
    }
    if !envelope_holds(distance, integral, MAX_CONSTANT) {
        return None;
    }
    // slack(C) = |log max_t D / env_C|; zero exactly at the feasibility boundary
    let d0 = distance[0];
    let slack = |log_c: f64| {
        let c = log_c.exp();
        let worst = distance
            .iter()
            .zip(integral)
            .map(|(d, s)| d.ln() - (c.ln() + c * s + d0.ln()))
            .fold(f64::NEG_INFINITY, f64::max);
        worst.abs()
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, MAX_CONSTANT.ln());
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (slack(x1), slack(x2));
    while hi - lo > 1e-12 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = slack(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = slack(x2);
        }
    }
    let mut c = hi.exp();
    while !envelope_holds(distance, integral, c) {
        c *= 1.0 + 1e-12;
    }
    Some(c)
}

/// Common constant for several reports: feasibility is monotone in `C`, so the
/// largest individual fit works for all of them.
pub fn fit_common_constant(reports: &[StabilityReport]) -> Option<f64> {
    let mut c = 1.0f64;
    for r in reports {
        c = c.max(fit_constant(&r.distance, &r.integral)?);
    }
    Some(c)
}

/// Fixed perturbation shapes, normalized so that `||(drho, du)||_2 = delta`
/// with the two parts of equal size.
pub fn twin_perturbation(state: &State, delta: f64) -> State {
    let g = state.rho.grid();
    let s = g.k0();
    let shape_rho = ScalarField::from_fn(g, |x, y| (s * (2.0 * x + y)).cos() + 0.5 * (s * (x - 2.0 * y)).sin());
    let psi = ScalarField::from_fn(g, |x, y| (s * (x + 2.0 * y)).sin() + 0.5 * (s * (2.0 * x - y)).cos());
    let shape_u = psi.perp_gradient();
    let part = delta / 2f64.sqrt();
    let drho = shape_rho.scale(part / shape_rho.l2_norm());
    let du = shape_u.scale(part / shape_u.l2_norm());
    State { rho: &state.rho + &drho, u: &state.u + &du, t: state.t }
}

/// Runs the reference solution and a copy perturbed by [`twin_perturbation`]
/// concurrently on the same fixed time grid and fits the Gronwall envelope.
/// The indicator `I` is taken from the reference run.
pub fn stability_twin(
    law: &ViscosityLaw,
    reference: &State,
    config: SimConfig,
    delta: f64,
) -> Result<StabilityReport> {
    if config.dt.is_none() {
        return Err(Error::InvalidConfig("twin runs need a fixed dt".into()));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidConfig(format!("delta must be non-negative, got {delta}")));
    }
    let perturbed = twin_perturbation(reference, delta);
    let sample = |init: &State, with_indicator: bool| -> Result<Vec<(State, VectorField, f64)>> {
        let mut sim = Simulation::new(law.clone(), init.clone(), config)?;
        let mut out = Vec::new();
        let mut push = |sim: &Simulation| -> Result<()> {
            let st = sim.state().clone();
            let big_u = sim.big_u()?;
            let ind = if with_indicator { indicator(sim, &big_u)? } else { 0.0 };
            out.push((st, big_u, ind));
            Ok(())
        };
        push(&sim)?;
        let every = config.output_every;
        let t_end = config.t_end;
        sim.run_until(t_end, |s| {
            let last = (s.time() - t_end).abs() <= 1e-12 * t_end.abs().max(1.0);
            if s.steps() % every == 0 || last {
                push(s)?;
            }
            Ok(())
        })?;
        Ok(out)
    };
    let (a, b) = rayon::join(|| sample(reference, true), || sample(&perturbed, false));
    let (a, b) = (a?, b?);
    let mut report = StabilityReport {
        delta,
        times: Vec::with_capacity(a.len()),
        distance: Vec::with_capacity(a.len()),
        indicator: Vec::with_capacity(a.len()),
        integral: Vec::with_capacity(a.len()),
        constant: 1.0,
        envelope: Vec::new(),
        pass: false,
    };
    let mut acc = 0.0;
    for (k, ((s2, u2, i2), (s1, u1, _))) in a.iter().zip(&b).enumerate() {
        let d = (&s1.rho - &s2.rho).l2_norm().powi(2)
            + (&s1.u - &s2.u).l2_norm().powi(2)
            + (u1 - u2).l2_norm().powi(2);
        if k > 0 {
            acc += 0.5 * (s2.t - report.times[k - 1]) * (i2 + report.indicator[k - 1]);
        }
        report.times.push(s2.t);
        report.distance.push(d);
        report.indicator.push(*i2);
        report.integral.push(acc);
    }
    match fit_constant(&report.distance, &report.integral) {
        Some(c) => {
            report.constant = c;
            report.pass = true;
        }
        None => report.constant = f64::INFINITY,
    }
    report.envelope = report.envelope_for(report.constant.min(MAX_CONSTANT));
    Ok(report)
}

fn grad_max(v: &VectorField) -> f64 {
    let gx = v.x.gradient();
    let gy = v.y.gradient();
    let g = gx.x.map(|x| x * x);
    let sum = [&gx.y, &gy.x, &gy.y].iter().fold(g, |acc, c| &acc + &c.map(|x| x * x));
    sum.max().sqrt()
}

fn indicator(sim: &Simulation, big_u: &VectorField) -> Result<f64> {
    let state = sim.state();
    let pressure = sim.tendency()?.pressure;
    Ok(state.rho.gradient().magnitude().max()
        + grad_max(&state.u)
        + grad_max(big_u)
        + pressure.gradient().magnitude().max())
}
