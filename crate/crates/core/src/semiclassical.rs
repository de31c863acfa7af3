//! Single peaks concentrating at a nondegenerate critical point of V, in
//! the rescaled frame x -> V(eps x), and the checks built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{apply_real_symbol, dot_l2, Field, GridSpec};
use crate::linalg::{self, SymmetricSolver};
use crate::model::{Model, Nonlinearity, Potential};
use crate::spectra::{
    constrained_morse_index, free_morse_index, z_vector, LinearizedOperator, MorseCount, SpectralOptions,
};
use crate::stationary::{limit_profile, limit_profile_derivative, ConstrainedCriticalPoint};

/// Free equation -u'' + V(eps x) u = |u|^{p-2} u on a fixed grid.
#[derive(Debug, Clone)]
pub struct SemiclassicalProblem {
    pub grid: GridSpec,
    /// V in the original variable, with V(0) = 1 and V'(0) = 0.
    pub potential: Potential,
    pub nonlinearity: Nonlinearity,
}

impl SemiclassicalProblem {
    pub fn new(grid: GridSpec, potential: Potential, p: f64) -> Result<Self> {
        let (v0, v1, _) = potential.derivatives(0.0);
        if (v0 - 1.0).abs() > 1e-12 || v1.abs() > 1e-12 {
            return Err(Error::Precondition(format!(
                "need V(0) = 1 and V'(0) = 0, got {v0} and {v1}"
            )));
        }
        Ok(Self {
            grid,
            potential,
            nonlinearity: Nonlinearity::power(p)?,
        })
    }

    pub fn exponent(&self) -> f64 {
        self.nonlinearity.exponent
    }

    /// The model with V replaced by V(eps x).
    pub fn model(&self, eps: f64) -> Model {
        Model::new(self.potential.scaled(eps), self.nonlinearity)
    }

    /// V''(0) in the original variable.
    pub fn curvature(&self) -> f64 {
        self.potential.derivatives(0.0).2
    }

    /// Number of negative directions of the Hessian of V at 0.
    pub fn m_v(&self) -> usize {
        usize::from(self.curvature() < 0.0)
    }

    /// The eps = 0 solution u_0.
    pub fn limit(&self) -> Result<Field> {
        limit_profile(self.grid, self.exponent(), 1.0, 0.0)
    }
}

/// Settings for [`rescaled_solve`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RescaledOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for RescaledOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 30,
            max_halvings: 6,
        }
    }
}

/// A converged rescaled peak with its Newton step count.
#[derive(Debug, Clone)]
pub struct RescaledSolution {
    pub eps: f64,
    /// Multiplier 0; mass is the rescaled |u_eps|_2^2.
    pub point: ConstrainedCriticalPoint,
    pub iterations: usize,
}

impl RescaledSolution {
    /// |ubar_eps|_2^2 = eps |u_eps|_2^2.
    pub fn unrescaled_mass(&self) -> f64 {
        self.eps * self.point.mass
    }
}

/// Newton on -u'' + V(eps x) u - |u|^{p-2} u = 0 from `seed`, or from the
/// limit profile when no seed is given.
pub fn rescaled_solve(
    problem: &SemiclassicalProblem,
    eps: f64,
    seed: Option<&Field>,
    opts: RescaledOptions,
) -> Result<RescaledSolution> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be nonnegative")));
    }
    let model = problem.model(eps);
    let mut u = match seed {
        Some(s) => s.clone(),
        None => problem.limit()?,
    };
    let d2 = linalg::neg_laplacian_matrix(&problem.grid);
    let mut r = model.l2_residual(&u, 0.0);
    let mut res = r.sup_norm();
    let mut iterations = 0;
    while res > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::ContinuationNeeded { eps, residual: res });
        }
        let diag = model.linearized_diagonal(&u, 0.0);
        let mut jac = d2.clone();
        for (i, d) in diag.iter().enumerate() {
            jac[(i, i)] += d;
        }
        let step = Field::from_vec(problem.grid, SymmetricSolver::new(&jac).solve(r.values())?);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial = u.lin_comb(1.0, &step, -t);
            let tr = model.l2_residual(&trial, 0.0);
            let tres = tr.sup_norm();
            if tres.is_finite() && tres < res {
                u = trial;
                r = tr;
                res = tres;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            return Err(Error::ContinuationNeeded { eps, residual: res });
        }
    }
    let mass = u.mass();
    Ok(RescaledSolution {
        eps,
        point: ConstrainedCriticalPoint::evaluate(u, 0.0, mass, &model),
        iterations,
    })
}

/// Peaks along a descending list of eps, each seeding the next.
#[derive(Debug, Clone)]
pub struct EpsilonFamily {
    pub problem: SemiclassicalProblem,
    pub members: Vec<RescaledSolution>,
}

impl EpsilonFamily {
    pub fn masses(&self) -> Vec<(f64, f64)> {
        self.members.iter().map(|m| (m.eps, m.unrescaled_mass())).collect()
    }
}

pub fn continue_family(
    problem: &SemiclassicalProblem,
    eps_list: &[f64],
    opts: RescaledOptions,
) -> Result<EpsilonFamily> {
    if eps_list.is_empty() {
        return Err(Error::InvalidParameter("empty eps list".into()));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("eps list must be strictly descending".into()));
    }
    let mut members: Vec<RescaledSolution> = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let seed = members.last().map(|m| &m.point.u);
        members.push(rescaled_solve(problem, eps, seed, opts)?);
    }
    Ok(EpsilonFamily {
        problem: problem.clone(),
        members,
    })
}

/// (z_*, u_0)_2 computed and in closed form.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CriterionValue {
    pub p: f64,
    pub numeric: f64,
    pub analytic: f64,
    /// |u_0|_2^2 on the grid.
    pub mass: f64,
}

impl CriterionValue {
    pub fn relative_error(&self) -> f64 {
        (self.numeric - self.analytic).abs() / self.analytic.abs()
    }
}

/// z_* solves (-d^2/dx^2 + 1 - (p-1) u_0^{p-2}) z = u_0 with z orthogonal to
/// the kernel direction u_0'; the value is (z_*, u_0)_2, against
/// (1/4 - 1/(p-2)) |u_0|_2^2.
pub fn criterion_value(grid: GridSpec, p: f64) -> Result<CriterionValue> {
    if (p - 6.0).abs() < 1e-12 {
        return Err(Error::CriticalExponent { p });
    }
    let model = Model::new(Potential::constant(1.0), Nonlinearity::power(p)?);
    let u0 = limit_profile(grid, p, 1.0, 0.0)?;
    let d = limit_profile_derivative(grid, p, 1.0, 0.0)?;
    let m = grid.points();
    let diag = model.linearized_diagonal(&u0, 0.0);
    let mut a = linalg::Matrix::zeros(m + 1, m + 1);
    let lap = linalg::schrodinger_matrix(&grid, &diag);
    for j in 0..m {
        for i in 0..m {
            a[(i, j)] = lap[(i, j)];
        }
        a[(j, m)] = d.values()[j];
        a[(m, j)] = d.values()[j];
    }
    let mut rhs = u0.values().to_vec();
    rhs.push(0.0);
    let sol = SymmetricSolver::new(&a).solve(&rhs)?;
    let z = Field::from_vec(grid, sol[..m].to_vec());
    let mass = u0.mass();
    Ok(CriterionValue {
        p,
        numeric: dot_l2(&z, &u0),
        analytic: (0.25 - 1.0 / (p - 2.0)) * mass,
        mass,
    })
}

/// (z_eps, u_eps)_2 for one family member; None when L_eps is numerically
/// singular.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ZRow {
    pub eps: f64,
    pub z_dot_u: Option<f64>,
    pub target: f64,
}

impl ZRow {
    pub fn gap(&self) -> Option<f64> {
        self.z_dot_u.map(|z| (z - self.target).abs())
    }
}

pub fn z_eps_check(family: &EpsilonFamily, opts: &SpectralOptions) -> Result<Vec<ZRow>> {
    let target = criterion_value(family.problem.grid, family.problem.exponent())?.numeric;
    let mut rows = Vec::with_capacity(family.members.len());
    for m in &family.members {
        let model = family.problem.model(m.eps);
        let z_dot_u = match z_vector(&m.point.u, 0.0, &model, opts) {
            Ok(z) => Some(dot_l2(&z, &m.point.u)),
            Err(Error::NotFreelyNondegenerate { .. }) => None,
            Err(e) => return Err(e),
        };
        rows.push(ZRow {
            eps: m.eps,
            z_dot_u,
            target,
        });
    }
    Ok(rows)
}

/// Peak position: the maximizing node, refined by a parabola through its
/// neighbors.
pub fn peak_location(u: &Field) -> f64 {
    let g = u.grid();
    let m = g.points();
    let i = u.argmax();
    let (a, b, c) = (u.values()[(i + m - 1) % m], u.values()[i], u.values()[(i + 1) % m]);
    let den = a - 2.0 * b + c;
    let shift = if den != 0.0 { 0.5 * (a - c) / den } else { 0.0 };
    g.coord(i) + shift.clamp(-0.5, 0.5) * g.spacing()
}

/// Rayleigh value of L_eps on the translation mode u_0'(. - x_eps) against
/// its predicted leading term eps^2 V''(0) |u_0|_2^2 / 2.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TranslationRow {
    pub eps: f64,
    pub peak: f64,
    pub rayleigh: f64,
    pub predicted: f64,
}

impl TranslationRow {
    pub fn ratio(&self) -> f64 {
        self.rayleigh / self.predicted
    }
}

pub fn translation_mode_estimate(family: &EpsilonFamily) -> Result<Vec<TranslationRow>> {
    let pb = &family.problem;
    let p = pb.exponent();
    let u0_mass = pb.limit()?.mass();
    let mut rows = Vec::with_capacity(family.members.len());
    for m in &family.members {
        let model = pb.model(m.eps);
        let peak = peak_location(&m.point.u);
        let mode = limit_profile_derivative(pb.grid, p, 1.0, peak)?;
        let op = LinearizedOperator::at(&m.point.u, 0.0, &model);
        let rayleigh = dot_l2(&op.apply_field(&mode), &mode);
        rows.push(TranslationRow {
            eps: m.eps,
            peak,
            rayleigh,
            predicted: 0.5 * m.eps * m.eps * pb.curvature() * u0_mass,
        });
    }
    Ok(rows)
}

/// Measured and predicted indices of one family member.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MorseRow {
    pub eps: f64,
    pub m_f: usize,
    pub m: usize,
    pub expected_m_f: usize,
    pub expected_m: usize,
    /// Near-zero eigenvalues make the count unreliable.
    pub flagged: bool,
    pub free: MorseCount,
}

impl MorseRow {
    pub fn matches(&self) -> bool {
        self.m_f == self.expected_m_f && self.m == self.expected_m
    }
}

/// m_f = m_V + 1; m = m_V below the mass-critical exponent, m_V + 1 above.
pub fn morse_check(family: &EpsilonFamily, opts: &SpectralOptions) -> Result<Vec<MorseRow>> {
    let pb = &family.problem;
    let m_v = pb.m_v();
    let expected_m = if pb.nonlinearity.is_mass_subcritical() { m_v } else { m_v + 1 };
    let mut rows = Vec::with_capacity(family.members.len());
    for mem in &family.members {
        let model = pb.model(mem.eps);
        let free = free_morse_index(&mem.point.u, 0.0, &model, opts)?;
        let cons = constrained_morse_index(&mem.point.u, 0.0, &model, opts)?;
        rows.push(MorseRow {
            eps: mem.eps,
            m_f: free.count,
            m: cons.count,
            expected_m_f: m_v + 1,
            expected_m,
            flagged: free.ambiguous() || cons.ambiguous(),
            free,
        });
    }
    Ok(rows)
}

/// Distance of u_eps to the recentered limit profile, divided by eps^2.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateRow {
    pub eps: f64,
    pub h2_distance: f64,
    pub scaled: f64,
}

pub fn h2_rate_table(family: &EpsilonFamily) -> Result<Vec<RateRow>> {
    let pb = &family.problem;
    let sym: Vec<f64> = pb.grid.wavenumbers().iter().map(|k| 1.0 + k * k).collect();
    let mut rows = Vec::with_capacity(family.members.len());
    for m in &family.members {
        let u0 = limit_profile(pb.grid, pb.exponent(), 1.0, peak_location(&m.point.u))?;
        let diff = m.point.u.sub(&u0);
        let w = Field::from_vec(pb.grid, apply_real_symbol(diff.values(), &sym));
        let h2_distance = w.l2_norm();
        rows.push(RateRow {
            eps: m.eps,
            h2_distance,
            scaled: h2_distance / (m.eps * m.eps),
        });
    }
    Ok(rows)
}

/// Peak whose unrescaled mass equals alpha / n.
#[derive(Debug, Clone)]
pub struct SelectedPeak {
    pub target: f64,
    pub solution: RescaledSolution,
    pub secant_steps: usize,
}

/// Interpolate eps on the family's mass curve, then secant re-solves until
/// the unrescaled mass matches alpha / n to `tol`.
pub fn select_mass_epsilon(
    alpha: f64,
    n: usize,
    family: &EpsilonFamily,
    tol: f64,
    opts: RescaledOptions,
) -> Result<SelectedPeak> {
    if n == 0 || !(alpha > 0.0) {
        return Err(Error::InvalidParameter("need alpha > 0 and n >= 1".into()));
    }
    let target = alpha / n as f64;
    let curve = family.masses();
    let inc = curve.windows(2).all(|w| w[1].1 > w[0].1);
    let dec = curve.windows(2).all(|w| w[1].1 < w[0].1);
    if !(inc || dec) {
        return Err(Error::Precondition("the family mass curve is not monotone".into()));
    }
    let low = curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let high = curve.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    if !(target >= low && target <= high) {
        return Err(Error::OutOfRange { target, low, high });
    }
    let k = curve
        .windows(2)
        .position(|w| (w[0].1 - target) * (w[1].1 - target) <= 0.0)
        .unwrap_or(0);
    let (e0, m0) = curve[k];
    let (e1, m1) = curve.get(k + 1).copied().unwrap_or(curve[k]);
    let mut eps = if m1 != m0 { e0 + (target - m0) * (e1 - e0) / (m1 - m0) } else { e0 };
    let nearest = if (eps - e0).abs() <= (eps - e1).abs() { k } else { (k + 1).min(curve.len() - 1) };
    let mut prev = (curve[nearest].0, curve[nearest].1);
    let mut sol = rescaled_solve(&family.problem, eps, Some(&family.members[nearest].point.u), opts)?;
    let mut steps = 0;
    while (sol.unrescaled_mass() - target).abs() > tol {
        if steps == 30 {
            return Err(Error::ContinuationNeeded {
                eps,
                residual: (sol.unrescaled_mass() - target).abs(),
            });
        }
        let cur = (eps, sol.unrescaled_mass());
        let slope = (cur.1 - prev.1) / (cur.0 - prev.0);
        if !slope.is_finite() || slope == 0.0 {
            return Err(Error::ContinuationNeeded {
                eps,
                residual: (cur.1 - target).abs(),
            });
        }
        eps = cur.0 + (target - cur.1) / slope;
        prev = cur;
        sol = rescaled_solve(&family.problem, eps, Some(&sol.point.u), opts)?;
        steps += 1;
    }
    Ok(SelectedPeak {
        target,
        solution: sol,
        secant_steps: steps,
    })
}
