//! Density-dependent odd-viscosity coefficient `f(rho)` and the potential
//! `g(rho) = int_{rho_*}^{rho} 2 f'(r) / r dr` defining the effective velocity.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::ScalarField;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Functional form of `f`.
#[derive(Clone)]
pub enum LawKind {
    /// `f(rho) = a rho^alpha + b`.
    PowerLaw { a: f64, b: f64, alpha: f64 },
    Constant(f64),
    /// User-supplied `f` and `f'`; `g` is obtained by adaptive quadrature.
    Custom { f: ScalarFn, f_prime: ScalarFn },
}

impl fmt::Debug for LawKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LawKind::PowerLaw { a, b, alpha } => {
                write!(f, "PowerLaw {{ a: {a}, b: {b}, alpha: {alpha} }}")
            }
            LawKind::Constant(c) => write!(f, "Constant({c})"),
            LawKind::Custom { .. } => write!(f, "Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ViscosityLaw {
    kind: LawKind,
    rho_star: f64,
}

const QUAD_TOL: f64 = 1e-12;
const QUAD_MAX_DEPTH: u32 = 48;

impl ViscosityLaw {
    pub fn new(kind: LawKind, rho_star: f64) -> Result<Self> {
        if !(rho_star.is_finite() && rho_star > 0.0) {
            return Err(Error::InvalidViscosity(format!("rho_star must be positive, got {rho_star}")));
        }
        if let LawKind::PowerLaw { a, b, alpha } = kind {
            if !(a.is_finite() && b.is_finite() && alpha.is_finite()) {
                return Err(Error::InvalidViscosity("non-finite power-law coefficient".into()));
            }
        }
        Ok(Self { kind, rho_star })
    }

    pub fn power_law(a: f64, b: f64, alpha: f64, rho_star: f64) -> Result<Self> {
        Self::new(LawKind::PowerLaw { a, b, alpha }, rho_star)
    }

    pub fn constant(c: f64, rho_star: f64) -> Result<Self> {
        Self::new(LawKind::Constant(c), rho_star)
    }

    pub fn custom(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
        rho_star: f64,
    ) -> Result<Self> {
        Self::new(LawKind::Custom { f: Arc::new(f), f_prime: Arc::new(f_prime) }, rho_star)
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    pub fn rho_star(&self) -> f64 {
        self.rho_star
    }

    /// Same law re-anchored at a different lower density.
    pub fn with_rho_star(&self, rho_star: f64) -> Result<Self> {
        Self::new(self.kind.clone(), rho_star)
    }

    /// True when `f' == 0` identically, i.e. the odd stress is absorbed by the pressure.
    pub fn is_constant(&self) -> bool {
        match self.kind {
            LawKind::Constant(_) => true,
            LawKind::PowerLaw { a, alpha, .. } => a == 0.0 || alpha == 0.0,
            LawKind::Custom { .. } => false,
        }
    }

    /// Checks that `f` is a diffeomorphism on `[rho_*, rho_max]` (non-constant laws only).
    pub fn validate_range(&self, rho_max: f64) -> Result<()> {
        if rho_max < self.rho_star {
            return Err(Error::InvalidViscosity(format!(
                "density range [{}, {rho_max}] is empty",
                self.rho_star
            )));
        }
        if self.is_constant() {
            return Ok(());
        }
        const SAMPLES: usize = 257;
        let mut sign = 0.0;
        for i in 0..SAMPLES {
            let r = self.rho_star + (rho_max - self.rho_star) * i as f64 / (SAMPLES - 1) as f64;
            let d = self.f_prime(r);
            if !d.is_finite() || d == 0.0 || (sign != 0.0 && d.signum() != sign) {
                return Err(Error::InvalidViscosity(format!(
                    "f' vanishes or changes sign near rho = {r:.6}; f must be a diffeomorphism on the density range"
                )));
            }
            sign = d.signum();
        }
        Ok(())
    }

    pub fn f(&self, rho: f64) -> f64 {
        match &self.kind {
            LawKind::PowerLaw { a, b, alpha } => a * rho.powf(*alpha) + b,
            LawKind::Constant(c) => *c,
            LawKind::Custom { f, .. } => f(rho),
        }
    }

    pub fn f_prime(&self, rho: f64) -> f64 {
        match &self.kind {
            LawKind::PowerLaw { a, alpha, .. } => {
                if *alpha == 0.0 {
                    0.0
                } else {
                    a * alpha * rho.powf(alpha - 1.0)
                }
            }
            LawKind::Constant(_) => 0.0,
            LawKind::Custom { f_prime, .. } => f_prime(rho),
        }
    }

    /// `g'(rho) = 2 f'(rho) / rho`.
    pub fn g_prime(&self, rho: f64) -> f64 {
        2.0 * self.f_prime(rho) / rho
    }

    /// `g(rho)`, closed form for power laws, adaptive quadrature otherwise.
    pub fn g(&self, rho: f64) -> Result<f64> {
        if rho == self.rho_star {
            return Ok(0.0);
        }
        match self.kind {
            LawKind::Constant(_) => Ok(0.0),
            LawKind::PowerLaw { a, alpha, .. } => {
                if a == 0.0 || alpha == 0.0 {
                    Ok(0.0)
                } else if alpha == 1.0 {
                    Ok(2.0 * a * (rho / self.rho_star).ln())
                } else {
                    let e = alpha - 1.0;
                    Ok(2.0 * a * alpha / e * (rho.powf(e) - self.rho_star.powf(e)))
                }
            }
            LawKind::Custom { .. } => self.g_by_quadrature(rho),
        }
    }

    /// `g(rho)` by adaptive Simpson quadrature of `2 f'(r) / r`, for any law.
    pub fn g_by_quadrature(&self, rho: f64) -> Result<f64> {
        let lo = self.rho_star;
        if rho == lo {
            return Ok(0.0);
        }
        let integrand = |r: f64| self.g_prime(r);
        let (a, b) = (lo, rho);
        let fa = integrand(a);
        let fb = integrand(b);
        let m = 0.5 * (a + b);
        let fm = integrand(m);
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        adaptive_simpson(&integrand, a, b, fa, fm, fb, whole, QUAD_TOL, QUAD_MAX_DEPTH)
            .ok_or(Error::Quadrature(rho))
    }

    fn check_density(&self, rho: &ScalarField) -> Result<()> {
        let min = rho.min();
        if !min.is_finite() {
            return Err(Error::NonFinite("density"));
        }
        if min < self.rho_star {
            return Err(Error::VacuumProximity { min, rho_star: self.rho_star });
        }
        Ok(())
    }

    pub fn f_eval(&self, rho: &ScalarField) -> Result<ScalarField> {
        self.check_density(rho)?;
        Ok(rho.map(|r| self.f(r)))
    }

    pub fn f_prime_eval(&self, rho: &ScalarField) -> Result<ScalarField> {
        self.check_density(rho)?;
        Ok(rho.map(|r| self.f_prime(r)))
    }

    pub fn g_eval(&self, rho: &ScalarField) -> Result<ScalarField> {
        self.check_density(rho)?;
        if self.is_constant() {
            return Ok(ScalarField::zeros(rho.grid()));
        }
        let vals = rho.values().iter().map(|&r| self.g(r)).collect::<Result<Vec<_>>>()?;
        ScalarField::from_values(rho.grid(), vals)
    }

    pub fn g_prime_eval(&self, rho: &ScalarField) -> Result<ScalarField> {
        self.check_density(rho)?;
        Ok(rho.map(|r| self.g_prime(r)))
    }
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Option<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return None;
    }
    if delta.abs() <= 15.0 * tol.max(1e-15 * (left + right).abs()) {
        return Some(left + right + delta / 15.0);
    }
    if depth == 0 {
        return None;
    }
    let l = adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let r = adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Some(l + r)
}
