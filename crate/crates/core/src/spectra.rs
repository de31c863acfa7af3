//! Spectral diagnostics of a constrained critical point u with multiplier
//! lambda, all for the linearized operator
//!
//!   L = -d^2/dx^2 + V - lambda - f'(u)
//!
//! on the grid: the free Morse index m_f (negative eigenvalues of L), the
//! constrained index m (negative eigenvalues of L on u^perp), the vector
//! z with L z = u and the sign of (z, u)_2, and the unstable eigenvalue
//! of the Hamiltonian linearization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gluing::{bump_support, BumpConfig};
use crate::grid::{
    apply_real_symbol, dot_l2, laplacian_symbol, pcg, random_smooth_field, translate, Field,
    GridSpec,
};
use crate::linalg::{self, Cholesky, Complement, SymmetricSolver};
use crate::model::Model;
use crate::stationary::ConstrainedCriticalPoint;

/// Settings shared by the spectral routines.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectralOptions {
    /// Eigenvalues with |mu| <= this times the spectral radius estimate
    /// count as numerically zero.
    pub zero_threshold_rel: f64,
    /// Largest grid handled by dense eigensolves.
    pub dense_limit: usize,
    /// Initial number of eigenvalues requested from the iterative solver.
    pub iterative_count: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            zero_threshold_rel: 1e-6,
            dense_limit: 4096,
            iterative_count: 12,
        }
    }
}

/// L = -d^2/dx^2 + diag(d) on a grid.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    grid: GridSpec,
    diag: Vec<f64>,
}

impl LinearizedOperator {
    pub fn new(grid: GridSpec, diag: Vec<f64>) -> Self {
        assert_eq!(diag.len(), grid.points());
        Self { grid, diag }
    }

    /// -d^2/dx^2 + V - lambda - f'(u).
    pub fn at(u: &Field, lambda: f64, model: &Model) -> Self {
        Self::new(u.grid(), model.linearized_diagonal(u, lambda))
    }

    /// -d^2/dx^2 + V - lambda - |u|^{p-2}, the operator of the imaginary part.
    pub fn imaginary_part(u: &Field, lambda: f64, model: &Model) -> Self {
        let vs = model.potential.samples(&u.grid());
        let diag = vs
            .iter()
            .zip(u.values())
            .map(|(v, s)| v - lambda - model.nonlinearity.ratio(*s))
            .collect();
        Self::new(u.grid(), diag)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn matrix(&self) -> linalg::Matrix {
        linalg::schrodinger_matrix(&self.grid, &self.diag)
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut y = apply_real_symbol(v, &laplacian_symbol(&self.grid));
        for ((yi, vi), d) in y.iter_mut().zip(v).zip(&self.diag) {
            *yi += d * vi;
        }
        y
    }

    pub fn apply_field(&self, v: &Field) -> Field {
        Field::from_vec(self.grid, self.apply(v.values()))
    }

    /// k_max^2 + max |d|, an upper bound for the spectral radius.
    pub fn radius_estimate(&self) -> f64 {
        let k = self.grid.max_wavenumber();
        k * k + self.diag.iter().fold(0.0f64, |a, d| a.max(d.abs()))
    }
}

/// Eigenvalue count below -threshold, with the near-zero eigenvalues.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MorseCount {
    pub count: usize,
    pub threshold: f64,
    /// Eigenvalues in [-threshold, threshold]; nonempty means ambiguous.
    pub near_zero: Vec<f64>,
    /// The lowest computed eigenvalues in nondecreasing order.
    pub lowest: Vec<f64>,
    /// False if the iterative solver never reached an eigenvalue above the threshold.
    pub complete: bool,
}

impl MorseCount {
    fn from_values(values: &[f64], threshold: f64, complete: bool) -> Self {
        Self {
            count: values.iter().filter(|&&v| v < -threshold).count(),
            threshold,
            near_zero: values.iter().copied().filter(|v| v.abs() <= threshold).collect(),
            lowest: values.iter().copied().take(12).collect(),
            complete,
        }
    }

    pub fn ambiguous(&self) -> bool {
        !self.near_zero.is_empty() || !self.complete
    }

    /// Smallest |eigenvalue| among the computed ones.
    pub fn gap(&self) -> f64 {
        self.lowest.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()))
    }
}

/// Lowest eigenvalues of L, restricted to q^perp when `constraint` is
/// given. Dense below the size limit; otherwise shift-invert subspace iteration,
/// doubling the request until an eigenvalue above `threshold` appears.
pub fn lowest_eigenvalues(
    op: &LinearizedOperator,
    constraint: Option<&Field>,
    threshold: f64,
    opts: &SpectralOptions,
) -> Result<(Vec<f64>, bool)> {
    let m = op.grid.points();
    if m <= opts.dense_limit {
        let a = op.matrix();
        let vals = match constraint {
            Some(q) => linalg::sym_eigenvalues(&Complement::new(q.values())?.project(&a))?,
            None => linalg::sym_eigenvalues(&a)?,
        };
        return Ok((vals, true));
    }
    let mut count = opts.iterative_count.max(2);
    loop {
        let pairs = subspace_lowest(op, constraint.map(|q| q.values()), count)?;
        let vals: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let top = vals.last().copied().unwrap_or(f64::NEG_INFINITY);
        if top > threshold || count >= m / 2 {
            return Ok((vals, top > threshold));
        }
        count *= 2;
    }
}

fn threshold(op: &LinearizedOperator, opts: &SpectralOptions) -> f64 {
    opts.zero_threshold_rel * op.radius_estimate()
}

/// Number of negative eigenvalues of L.
pub fn free_morse_index(u: &Field, lambda: f64, model: &Model, opts: &SpectralOptions) -> Result<MorseCount> {
    let op = LinearizedOperator::at(u, lambda, model);
    let t = threshold(&op, opts);
    let (vals, complete) = lowest_eigenvalues(&op, None, t, opts)?;
    Ok(MorseCount::from_values(&vals, t, complete))
}

/// Number of negative eigenvalues of L on the tangent space u^perp.
pub fn constrained_morse_index(
    u: &Field,
    lambda: f64,
    model: &Model,
    opts: &SpectralOptions,
) -> Result<MorseCount> {
    let op = LinearizedOperator::at(u, lambda, model);
    let t = threshold(&op, opts);
    let (vals, complete) = lowest_eigenvalues(&op, Some(u), t, opts)?;
    Ok(MorseCount::from_values(&vals, t, complete))
}

/// Solve L z = u. Requires L to be invertible beyond the zero threshold.
pub fn z_vector(u: &Field, lambda: f64, model: &Model, opts: &SpectralOptions) -> Result<Field> {
    let op = LinearizedOperator::at(u, lambda, model);
    let t = threshold(&op, opts);
    let (vals, _) = lowest_eigenvalues(&op, None, t, opts)?;
    let gap = vals.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if gap <= t {
        return Err(Error::NotFreelyNondegenerate { gap });
    }
    solve_linearized(&op, u, opts)
}

fn solve_linearized(op: &LinearizedOperator, u: &Field, opts: &SpectralOptions) -> Result<Field> {
    if op.grid.points() <= opts.dense_limit {
        let z = SymmetricSolver::new(&op.matrix()).solve(u.values())?;
        return Ok(Field::from_vec(op.grid, z));
    }
    deflated_solve(op, u.values(), opts).map(|z| Field::from_vec(op.grid, z))
}

/// Sign pattern of (z, u)_2 together with the index relation it forces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    /// (z, u)_2 < 0 and m_f = m + 1.
    FullyNondegenerateNeg,
    /// (z, u)_2 > 0 and m_f = m.
    FullyNondegeneratePos,
    Degenerate,
}

/// Combined spectral report for a constrained critical point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    pub m: usize,
    pub m_f: usize,
    pub z_dot_u: f64,
    pub free_gap: f64,
    pub constrained_gap: f64,
    pub threshold: f64,
    pub classification: Classification,
    /// Whether the sign of (z, u)_2 agrees with m_f - m.
    pub consistent: bool,
    pub free: MorseCount,
    pub constrained: MorseCount,
}

pub fn classify(u: &Field, lambda: f64, model: &Model, opts: &SpectralOptions) -> Result<SpectralReport> {
    let op = LinearizedOperator::at(u, lambda, model);
    let t = threshold(&op, opts);
    let (fv, fc) = lowest_eigenvalues(&op, None, t, opts)?;
    let free = MorseCount::from_values(&fv, t, fc);
    let (cv, cc) = lowest_eigenvalues(&op, Some(u), t, opts)?;
    let constrained = MorseCount::from_values(&cv, t, cc);
    let free_gap = free.gap();
    let constrained_gap = constrained.gap();
    let z_dot_u = if free_gap > t {
        dot_l2(&solve_linearized(&op, u, opts)?, u)
    } else {
        f64::NAN
    };
    let (m, m_f) = (constrained.count, free.count);
    let clean = !free.ambiguous() && !constrained.ambiguous() && z_dot_u.is_finite() && z_dot_u != 0.0;
    let expected = if z_dot_u < 0.0 { m + 1 } else { m };
    let consistent = clean && m_f == expected;
    let classification = if !consistent {
        Classification::Degenerate
    } else if z_dot_u < 0.0 {
        Classification::FullyNondegenerateNeg
    } else {
        Classification::FullyNondegeneratePos
    };
    Ok(SpectralReport {
        m,
        m_f,
        z_dot_u,
        free_gap,
        constrained_gap,
        threshold: t,
        classification,
        consistent,
        free,
        constrained,
    })
}

/// Comparison of z for a glued solution with translates of z for the bump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZTranslateReport {
    /// Largest relative L2 discrepancy over the bump windows.
    pub window_discrepancy: f64,
    /// (z_a, u_a)_2 and n (z_bar, u_bar)_2.
    pub z_dot_u: f64,
    pub predicted_z_dot_u: f64,
    pub relative_scalar_gap: f64,
}

/// Near each bump T_{a_i} ubar, z for the glued solution should look like
/// the translate of z for ubar. Compared on windows of two decay lengths.
pub fn z_translate_check(
    ubar: &ConstrainedCriticalPoint,
    glued: &ConstrainedCriticalPoint,
    cfg: &BumpConfig,
    model: &Model,
    opts: &SpectralOptions,
) -> Result<ZTranslateReport> {
    let zb = z_vector(&ubar.u, ubar.lambda, model, opts)?;
    let za = z_vector(&glued.u, glued.lambda, model, opts)?;
    let grid = ubar.u.grid();
    let (c, _) = bump_support(&ubar.u);
    // Two decay lengths 1/sqrt(gamma - lambda) on either side of each bump.
    let gamma = model.potential.spectrum_bottom(&grid)?;
    let r = 2.0 / (gamma - ubar.lambda).max(1e-12).sqrt();
    let len = grid.length();
    let mut worst: f64 = 0.0;
    for &a in cfg.offsets() {
        let shifted = translate(&zb, a)?;
        let center = c + a as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..grid.points() {
            let y = (grid.coord(i) - center + 0.5 * len).rem_euclid(len) - 0.5 * len;
            if y.abs() <= r {
                let d = za.values()[i] - shifted.values()[i];
                num += d * d;
                den += shifted.values()[i] * shifted.values()[i];
            }
        }
        worst = worst.max((num / den).sqrt());
    }
    let z_dot_u = dot_l2(&za, &glued.u);
    let predicted = cfg.n() as f64 * dot_l2(&zb, &ubar.u);
    Ok(ZTranslateReport {
        window_discrepancy: worst,
        z_dot_u,
        predicted_z_dot_u: predicted,
        relative_scalar_gap: ((z_dot_u - predicted) / predicted).abs(),
    })
}

/// Unstable eigenvalue rho of the Hamiltonian linearization at phi and
/// its eigenvector w = (v, w2), normalized by |v|_2 = 1.
#[derive(Debug, Clone)]
pub struct InstabilityResult {
    pub rho: f64,
    /// Smallest generalized eigenvalue mu = -rho^2.
    pub mu: f64,
    pub beta: f64,
    pub v: Field,
    pub w2: Field,
    /// |(-L2 w2 - rho v, L1 v - rho w2)| / |w|.
    pub residual: f64,
    /// sup |L2 phi|.
    pub kernel_residual: f64,
    /// Smallest eigenvalue of L2 on phi^perp.
    pub l2_positivity: f64,
}

/// Scalar summary of an [`InstabilityResult`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstabilitySummary {
    pub rho: f64,
    pub mu: f64,
    pub beta: f64,
    pub residual: f64,
    pub kernel_residual: f64,
    pub l2_positivity: f64,
}

impl InstabilityResult {
    pub fn summary(&self) -> InstabilitySummary {
        InstabilitySummary {
            rho: self.rho,
            mu: self.mu,
            beta: self.beta,
            residual: self.residual,
            kernel_residual: self.kernel_residual,
            l2_positivity: self.l2_positivity,
        }
    }
}

/// Solve the generalized problem Q^T L1 Q x = mu Q^T L2 Q x on phi^perp,
/// where Q^T L2 Q is positive definite; for mu < 0 set rho = sqrt(-mu) and
/// build the eigenvector of [[0, -L2], [L1, 0]] with eigenvalue rho.
pub fn instability_eigenvalue(
    phi: &ConstrainedCriticalPoint,
    model: &Model,
    opts: &SpectralOptions,
) -> Result<InstabilityResult> {
    let u = &phi.u;
    let grid = u.grid();
    if u.min() <= 0.0 {
        return Err(Error::Precondition("the standing wave must be positive".into()));
    }
    let bottom = model.potential.spectrum_bottom(&grid)?;
    if phi.lambda >= bottom {
        return Err(Error::Precondition(format!(
            "lambda = {} must lie below the spectrum bottom {bottom}",
            phi.lambda
        )));
    }
    let l1 = LinearizedOperator::at(u, phi.lambda, model);
    let l2 = LinearizedOperator::imaginary_part(u, phi.lambda, model);
    let kernel_residual = l2.apply_field(u).sup_norm();
    if kernel_residual > 1e-6 {
        return Err(Error::Precondition(format!(
            "phi is not a solution: |L2 phi|_inf = {kernel_residual:e}"
        )));
    }
    let q = Complement::new(u.values())?;
    let a1 = q.project(&l1.matrix());
    let a2 = q.project(&l2.matrix());
    let t = threshold(&l1, opts);
    let chol = match Cholesky::new(&a2) {
        Some(c) => c,
        None => {
            let e = linalg::sym_eigenvalues(&a2)?[0];
            return Err(Error::PositivityViolation { eigenvalue: e });
        }
    };
    let l2_positivity = linalg::sym_eigenvalues(&a2)?[0];
    if l2_positivity <= 0.0 {
        return Err(Error::PositivityViolation {
            eigenvalue: l2_positivity,
        });
    }
    // A1 y = mu A2^{-1} y with A2 = C C^T becomes C^T A1 C x = mu x, y = C x.
    let c = chol.lower();
    let n = a1.nrows();
    let a1c = &a1 * &c;
    let b = c.transpose() * &a1c;
    let b = faer::Mat::from_fn(n, n, |i, j| 0.5 * (b[(i, j)] + b[(j, i)]));
    let (vals, vecs) = linalg::sym_eigen(&b)?;
    let mu = vals[0];
    if mu >= -t {
        return Err(Error::NoInstability { mu });
    }
    let x = linalg::column(&vecs, 0);
    let y = linalg::mat_vec(&c, &x);
    let mut v = Field::from_vec(grid, q.embed(&y));
    v = v.scale(1.0 / v.l2_norm());
    let rho = (-mu).sqrt();
    let l1v = l1.apply_field(&v);
    let beta = dot_l2(&l1v, u) / u.mass();
    let l2inv_v = Field::from_vec(grid, q.embed(&chol.solve(&q.restrict(v.values()))));
    let w2 = l2inv_v.lin_comb(-rho, u, beta / rho);
    let r1 = l2.apply_field(&w2).lin_comb(-1.0, &v, -rho);
    let r2 = l1v.lin_comb(1.0, &w2, -rho);
    let residual = ((r1.mass() + r2.mass()) / (v.mass() + w2.mass())).sqrt();
    Ok(InstabilityResult {
        rho,
        mu,
        beta,
        v,
        w2,
        residual,
        kernel_residual,
        l2_positivity,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn orthogonalize(x: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(x, q);
            for (xi, qi) in x.iter_mut().zip(q) {
                *xi -= c * qi;
            }
        }
    }
}

fn orthonormalize(vs: &mut Vec<Vec<f64>>) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vs.len());
    for v in vs.drain(..) {
        let mut x = v;
        orthogonalize(&mut x, &out);
        let n = dot(&x, &x).sqrt();
        if n > 1e-12 {
            out.push(x.iter().map(|a| a / n).collect());
        }
    }
    *vs = out;
}

/// Lowest `count` eigenpairs of L (on q^perp if given) by block inverse
/// iteration with Rayleigh-Ritz, using (L - sigma)^{-1} for sigma below
/// the spectrum. The block carries guard vectors so that clustered
/// eigenvalues are resolved.
fn subspace_lowest(
    op: &LinearizedOperator,
    constraint: Option<&[f64]>,
    count: usize,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let grid = op.grid;
    let m = grid.points();
    let dmin = op.diag.iter().copied().fold(f64::INFINITY, f64::min);
    let sigma = dmin - 1.0;
    let mean = op.diag.iter().sum::<f64>() / m as f64;
    let c = (mean - sigma).max(1.0);
    let sym = laplacian_symbol(&grid);
    let prec_sym: Vec<f64> = sym.iter().map(|k| 1.0 / (k + c)).collect();
    let qhat: Option<Vec<f64>> = constraint.map(|q| {
        let n = dot(q, q).sqrt();
        q.iter().map(|v| v / n).collect()
    });
    let project = |x: &mut Vec<f64>| {
        if let Some(q) = &qhat {
            let c = dot(x, q);
            for (xi, qi) in x.iter_mut().zip(q) {
                *xi -= c * qi;
            }
        }
    };
    let apply_l = |x: &[f64]| {
        let mut y = op.apply(x);
        project(&mut y);
        y
    };
    let shifted = |x: &[f64]| {
        let mut y = apply_l(x);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi -= sigma * xi;
        }
        y
    };
    let prec = |x: &[f64]| {
        let mut y = apply_real_symbol(x, &prec_sym);
        project(&mut y);
        y
    };
    let dim = m - usize::from(constraint.is_some());
    let block = (count + count / 2 + 4).min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut xs: Vec<Vec<f64>> = (0..block)
        .map(|_| {
            let mut v = random_smooth_field(grid, grid.max_wavenumber(), &mut rng).into_values();
            project(&mut v);
            v
        })
        .collect();
    orthonormalize(&mut xs);
    let scale = op.radius_estimate();
    for _ in 0..2000 {
        let mut ys = Vec::with_capacity(xs.len());
        for x in &xs {
            let mut y = pcg(&shifted, &prec, x, 1e-13, 4000)?;
            project(&mut y);
            ys.push(y);
        }
        orthonormalize(&mut ys);
        let lys: Vec<Vec<f64>> = ys.iter().map(|y| apply_l(y)).collect();
        let k = ys.len();
        let h = faer::Mat::from_fn(k, k, |i, j| 0.5 * (dot(&ys[i], &lys[j]) + dot(&ys[j], &lys[i])));
        let (vals, vecs) = linalg::sym_eigen(&h)?;
        xs = (0..k)
            .map(|j| {
                let mut x = vec![0.0; m];
                for (r, y) in ys.iter().enumerate() {
                    let s = vecs[(r, j)];
                    for (xi, yi) in x.iter_mut().zip(y) {
                        *xi += s * yi;
                    }
                }
                x
            })
            .collect();
        let converged = (0..count.min(k)).all(|j| {
            let lx = apply_l(&xs[j]);
            let r: f64 = lx
                .iter()
                .zip(&xs[j])
                .map(|(a, b)| (a - vals[j] * b).powi(2))
                .sum::<f64>()
                .sqrt();
            r <= 1e-10 * scale
        });
        if converged {
            return Ok((0..count.min(k)).map(|j| (vals[j], xs[j].clone())).collect());
        }
    }
    Err(Error::Linalg(format!(
        "subspace iteration did not converge for the {count} lowest eigenvalues"
    )))
}

/// L z = b on large grids: the part of b along the low eigenvectors is
/// inverted exactly, the rest by CG where L is positive.
fn deflated_solve(op: &LinearizedOperator, b: &[f64], opts: &SpectralOptions) -> Result<Vec<f64>> {
    let t = threshold(op, opts);
    let mut count = opts.iterative_count.max(2);
    let pairs = loop {
        let pairs = subspace_lowest(op, None, count)?;
        if pairs.last().map(|p| p.0 > t).unwrap_or(false) || count >= op.grid.points() / 2 {
            break pairs;
        }
        count *= 2;
    };
    let low: Vec<&(f64, Vec<f64>)> = pairs.iter().filter(|p| p.0 <= t.max(0.0) + 1.0).collect();
    let vecs: Vec<Vec<f64>> = low.iter().map(|p| p.1.clone()).collect();
    let mut z = vec![0.0; b.len()];
    let mut rest = b.to_vec();
    for (lam, v) in low.iter().map(|p| (p.0, &p.1)) {
        let c = dot(b, v);
        for i in 0..z.len() {
            z[i] += c / lam * v[i];
        }
    }
    orthogonalize(&mut rest, &vecs);
    let grid = op.grid;
    let mean = op.diag.iter().sum::<f64>() / op.diag.len() as f64;
    let c = mean.max(1.0);
    let prec_sym: Vec<f64> = laplacian_symbol(&grid).iter().map(|k| 1.0 / (k + c)).collect();
    let apply = |x: &[f64]| {
        let mut y = op.apply(x);
        orthogonalize(&mut y, &vecs);
        y
    };
    let prec = |x: &[f64]| {
        let mut y = apply_real_symbol(x, &prec_sym);
        orthogonalize(&mut y, &vecs);
        y
    };
    let zr = pcg(apply, prec, &rest, 1e-12, 4000)?;
    for (zi, r) in z.iter_mut().zip(zr) {
        *zi += r;
    }
    Ok(z)
}
