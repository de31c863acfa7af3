//! Single-bump constrained critical points: the explicit limit profile,
//! a normalized Sobolev gradient flow, and Newton refinement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot_l2, h1v_unchecked, Field, GridSpec};
use crate::gluing::{newton_extended, NewtonOptions};
use crate::model::Model;

/// A field u with multiplier lambda solving the Euler-Lagrange equation at
/// mass |u|_2^2 = mass, together with its residual diagnostics.
#[derive(Debug, Clone)]
pub struct ConstrainedCriticalPoint {
    pub u: Field,
    pub lambda: f64,
    pub mass: f64,
    /// sup-norm of -u'' + V u - f(u) - lambda u.
    pub residual: f64,
    /// | |u|_2^2 - mass |.
    pub constraint_violation: f64,
}

impl ConstrainedCriticalPoint {
    pub fn evaluate(u: Field, lambda: f64, mass: f64, model: &Model) -> Self {
        let residual = model.l2_residual(&u, lambda).sup_norm();
        let constraint_violation = (u.mass() - mass).abs();
        Self {
            u,
            lambda,
            mass,
            residual,
            constraint_violation,
        }
    }

    pub fn summary(&self, model: &Model) -> PointSummary {
        PointSummary {
            lambda: self.lambda,
            mass: self.mass,
            residual: self.residual,
            constraint_violation: self.constraint_violation,
            energy: model.energy(&self.u),
            peak: self.u.max(),
            min_value: self.u.min(),
        }
    }
}

/// Scalar diagnostics of a critical point, for reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointSummary {
    pub lambda: f64,
    pub mass: f64,
    pub residual: f64,
    pub constraint_violation: f64,
    pub energy: f64,
    pub peak: f64,
    pub min_value: f64,
}

/// The positive even solution of -u'' + vbar u = |u|^{p-2} u on the line,
/// centered at `center` and sampled at the nearest periodic image:
/// vbar^{1/(p-2)} [ (p/2) sech^2((p-2) sqrt(vbar) x / 2) ]^{1/(p-2)}.
pub fn limit_profile(grid: GridSpec, p: f64, vbar: f64, center: f64) -> Result<Field> {
    check_profile_args(p, vbar)?;
    let q = 1.0 / (p - 2.0);
    let b = 0.5 * (p - 2.0) * vbar.sqrt();
    let amp = (0.5 * p * vbar).powf(q);
    Field::from_fn(grid, |x| {
        let y = wrap(x - center, grid.length());
        amp * sech(b * y).powf(2.0 * q)
    })
}

/// Exact x-derivative of [`limit_profile`]: -sqrt(vbar) tanh(b x) u(x).
pub fn limit_profile_derivative(grid: GridSpec, p: f64, vbar: f64, center: f64) -> Result<Field> {
    let u = limit_profile(grid, p, vbar, center)?;
    let b = 0.5 * (p - 2.0) * vbar.sqrt();
    let vals = u
        .values()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let y = wrap(grid.coord(i) - center, grid.length());
            -vbar.sqrt() * (b * y).tanh() * s
        })
        .collect();
    Field::new(grid, vals)
}

fn check_profile_args(p: f64, vbar: f64) -> Result<()> {
    if !(p.is_finite() && p > 2.0) {
        return Err(Error::InvalidParameter(format!("exponent p = {p} must exceed 2")));
    }
    if !(vbar.is_finite() && vbar > 0.0) {
        return Err(Error::InvalidParameter(format!("vbar = {vbar} must be positive")));
    }
    Ok(())
}

fn sech(t: f64) -> f64 {
    // cosh overflows near |t| = 710; the profile is zero there anyway.
    if t.abs() > 700.0 {
        0.0
    } else {
        1.0 / t.cosh()
    }
}

/// Representative of y modulo `length` in [-length/2, length/2).
fn wrap(y: f64, length: f64) -> f64 {
    (y + 0.5 * length).rem_euclid(length) - 0.5 * length
}

/// Settings for [`normalized_flow`].
#[derive(Debug, Clone, Copy)]
pub struct FlowOptions {
    pub step: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            step: 0.5,
            tol: 1e-7,
            max_iter: 5000,
        }
    }
}

/// Projected H1 gradient descent of the energy on the sphere |u|_2^2 = alpha,
/// renormalizing after every step. Stops once the projected gradient has
/// H1 norm below `tol`.
pub fn normalized_flow(
    u_init: &Field,
    alpha: f64,
    model: &Model,
    opts: FlowOptions,
) -> Result<ConstrainedCriticalPoint> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("mass {alpha} must be positive")));
    }
    if u_init.mass() == 0.0 {
        return Err(Error::InvalidField("initial field is zero".into()));
    }
    let grid = u_init.grid();
    let bottom = model.positive_bottom(&grid)?;
    let pot = &model.potential;
    let mut u = u_init.normalized_to(alpha);
    let mut energy = model.energy(&u);
    let mut step = opts.step;
    let mut gnorm = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let grad = model.h1_gradient(&u)?;
        let su = model.apply_s(&u, bottom)?;
        let mu = dot_l2(&grad, &u) / dot_l2(&su, &u);
        let g = grad.lin_comb(1.0, &su, -mu);
        gnorm = h1v_unchecked(&g, &g, pot).max(0.0).sqrt();
        if gnorm <= opts.tol {
            let lambda = model.lagrange_multiplier(&u);
            return Ok(ConstrainedCriticalPoint::evaluate(u, lambda, alpha, model));
        }
        let mut accepted = false;
        for _ in 0..30 {
            let trial = u.lin_comb(1.0, &g, -step).normalized_to(alpha);
            let e = model.energy(&trial);
            if e <= energy + 1e-14 * energy.abs().max(1.0) {
                u = trial;
                energy = e;
                accepted = true;
                step = (step * 1.2).min(opts.step);
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::FlowStalled {
        iterations: opts.max_iter,
        residual: gnorm,
    })
}

/// Multiplier of u in the original gauge.
pub fn lagrange_multiplier(u: &Field, model: &Model) -> f64 {
    model.lagrange_multiplier(u)
}

/// Node of smallest V within one period around the origin.
pub fn potential_minimum(grid: &GridSpec, model: &Model) -> f64 {
    let period = model.potential.period().unwrap_or(0.0).min(grid.length());
    let mut best = (f64::INFINITY, 0.0);
    for x in grid.coords() {
        if x.abs() <= 0.5 * period + 1e-12 {
            let v = model.potential.value(x);
            if v < best.0 - 1e-14 {
                best = (v, x);
            }
        }
    }
    best.1
}

/// Limit profile with the width of the line solution of mass alpha at the
/// mean of V, centered at `center` and rescaled to mass exactly alpha.
pub fn initial_guess(grid: GridSpec, model: &Model, alpha: f64, center: f64) -> Result<Field> {
    let p = model.nonlinearity.exponent;
    let base = limit_profile(grid, p, 1.0, center)?.mass();
    // mass(w_kappa) = kappa^{2/(p-2) - 1/2} mass(w_1)
    let e = 2.0 / (p - 2.0) - 0.5;
    let kappa = if e.abs() > 1e-3 {
        (alpha / base).powf(1.0 / e).clamp(0.05, 20.0)
    } else {
        1.0
    };
    Ok(limit_profile(grid, p, kappa, center)?.normalized_to(alpha))
}

/// Exact ground state of mass alpha for a constant potential c: the limit
/// profile at vbar = c - lambda, with kappa = vbar from the mass scaling.
pub fn soliton_of_mass(grid: GridSpec, model: &Model, alpha: f64, center: f64) -> Result<ConstrainedCriticalPoint> {
    if !model.potential.is_constant() {
        return Err(Error::Precondition("closed-form soliton needs a constant potential".into()));
    }
    let p = model.nonlinearity.exponent;
    if model.nonlinearity.coupling != 1.0 {
        return Err(Error::Precondition("closed-form soliton needs the focusing power".into()));
    }
    let e = 2.0 / (p - 2.0) - 0.5;
    if e.abs() < 1e-12 {
        return Err(Error::CriticalExponent { p });
    }
    let base = limit_profile(grid, p, 1.0, center)?.mass();
    let kappa = (alpha / base).powf(1.0 / e);
    let c = model.potential.value(0.0);
    let u = limit_profile(grid, p, kappa, center)?;
    Ok(ConstrainedCriticalPoint::evaluate(u, c - kappa, alpha, model))
}

/// Flow to a local minimizer of mass alpha centered at `center`, then
/// refine with constrained Newton.
pub fn local_minimizer(
    grid: GridSpec,
    model: &Model,
    alpha: f64,
    center: f64,
    flow: FlowOptions,
    newton: NewtonOptions,
) -> Result<ConstrainedCriticalPoint> {
    let guess = initial_guess(grid, model, alpha, center)?;
    let coarse = normalized_flow(&guess, alpha, model, flow)?;
    let refined = newton_extended(&coarse.u, coarse.lambda, alpha, model, newton, None)?;
    Ok(refined.point)
}
