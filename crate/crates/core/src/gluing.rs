//! Multibump gluing: superpose translated copies of a single bump and
//! correct the superposition to an exact critical point of the energy on
//! the mass sphere by Newton iteration on the extended Lagrangian
//!
//!   G(u, lambda) = Phi(u) - lambda/2 (|u|_2^2 - alpha).
//!
//! Newton steps solve the symmetric bordered system
//!
//!   [ h L    -h u ] [du]     [h r]
//!   [ -h u^T   0  ] [dl] = - [ c ]
//!
//! with L = -d^2/dx^2 + V - lambda - f'(u), r the L2 residual and
//! c = -(|u|_2^2 - alpha)/2. Sizes are measured in the H1 + R metric
//! G = diag(h K, 1), K = -d^2/dx^2 + V.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot_l2, h1v_unchecked, random_smooth_field, translate, Field, GridSpec};
use crate::linalg::{self, Matrix, SymmetricSolver};
use crate::model::Model;
use crate::stationary::ConstrainedCriticalPoint;

/// Integer offsets of the bumps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BumpConfig {
    offsets: Vec<i64>,
}

impl BumpConfig {
    pub fn new(offsets: Vec<i64>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::InvalidParameter("at least one bump is required".into()));
        }
        let mut sorted = offsets.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("bump offsets must be distinct".into()));
        }
        Ok(Self { offsets })
    }

    /// n bumps spaced d apart, centered on the origin as far as integers allow.
    pub fn evenly_spaced(n: usize, d: u64) -> Result<Self> {
        if n == 0 || (n > 1 && d == 0) {
            return Err(Error::InvalidParameter("need n >= 1 and d >= 1".into()));
        }
        let d = d as i64;
        let start = -((n as i64 - 1) * d) / 2;
        Self::new((0..n as i64).map(|i| start + i * d).collect())
    }

    pub fn offsets(&self) -> &[i64] {
        &self.offsets
    }

    pub fn n(&self) -> usize {
        self.offsets.len()
    }

    /// Minimum pairwise distance; None for a single bump.
    pub fn separation(&self) -> Option<u64> {
        let mut sorted = self.offsets.clone();
        sorted.sort_unstable();
        sorted.windows(2).map(|w| (w[1] - w[0]) as u64).min()
    }
}

/// Center and radius of the region where |u| exceeds e^{-10} max |u|.
pub fn bump_support(u: &Field) -> (f64, f64) {
    let g = u.grid();
    let peak = u.sup_norm();
    let imax = u
        .values()
        .iter()
        .enumerate()
        .fold(0, |b, (i, v)| if v.abs() > u.values()[b].abs() { i } else { b });
    let c = g.coord(imax);
    let cut = (-10.0f64).exp() * peak;
    let len = g.length();
    let mut r: f64 = 0.0;
    for (i, v) in u.values().iter().enumerate() {
        if v.abs() >= cut {
            let y = (g.coord(i) - c + 0.5 * len).rem_euclid(len) - 0.5 * len;
            r = r.max(y.abs());
        }
    }
    (c, r)
}

/// v = sum_i T_{a_i} ubar. Every translated support must stay inside the box.
pub fn superpose(ubar: &Field, cfg: &BumpConfig) -> Result<Field> {
    let g = ubar.grid();
    let (c, r) = bump_support(ubar);
    let l = g.half_width_f64();
    for &a in cfg.offsets() {
        if (c + a as f64).abs() + r >= l {
            return Err(Error::InvalidParameter(format!(
                "bump at offset {a} (support radius {r:.3}) does not fit in [-{l}, {l})"
            )));
        }
    }
    let mut v = Field::zeros(g);
    for &a in cfg.offsets() {
        v = v.add(&translate(ubar, a)?);
    }
    Ok(v)
}

/// (u, lambda) on the extended space.
#[derive(Debug, Clone)]
pub struct ExtendedPoint {
    pub u: Field,
    pub lambda: f64,
}

/// Gradient of G in H1 + R: (u - S f(u) - lambda S u, -(|u|_2^2 - alpha)/2).
pub fn extended_gradient(pt: &ExtendedPoint, alpha: f64, model: &Model) -> Result<(Field, f64)> {
    let bottom = model.positive_bottom(&pt.u.grid())?;
    let sf = model.apply_s(&model.nonlinearity.apply(&pt.u), bottom)?;
    let su = model.apply_s(&pt.u, bottom)?;
    let g = pt.u.sub(&sf).lin_comb(1.0, &su, -pt.lambda);
    Ok((g, -0.5 * (pt.u.mass() - alpha)))
}

/// Bordered Hessian applied to (v, mu):
/// (v - S(f'(u) v) - lambda S v - mu S u, -(u, v)_2).
pub fn bordered_apply(pt: &ExtendedPoint, model: &Model, v: &Field, mu: f64) -> Result<(Field, f64)> {
    let bottom = model.positive_bottom(&pt.u.grid())?;
    let fv = Field::from_vec(
        v.grid(),
        pt.u.values()
            .iter()
            .zip(v.values())
            .map(|(s, w)| model.nonlinearity.derivative(*s) * w)
            .collect(),
    );
    let rhs = fv.lin_comb(1.0, v, pt.lambda).lin_comb(1.0, &pt.u, mu);
    let s = model.apply_s(&rhs, bottom)?;
    Ok((v.sub(&s), -dot_l2(&pt.u, v)))
}

/// H1 + R norm of the extended gradient, from the L2 residual r:
/// sqrt((S r, r)_2 + c^2).
pub fn extended_residual_norm(u: &Field, lambda: f64, alpha: f64, model: &Model, bottom: f64) -> Result<f64> {
    let r = model.l2_residual(u, lambda);
    let sr = model.apply_s(&r, bottom)?;
    let c = -0.5 * (u.mass() - alpha);
    Ok((dot_l2(&sr, &r).max(0.0) + c * c).sqrt())
}

/// Assembled, factored bordered system at a point.
pub struct BorderedSystem<'a> {
    model: &'a Model,
    u: Field,
    bottom: f64,
    diag: Vec<f64>,
    solver: SymmetricSolver,
}

impl<'a> BorderedSystem<'a> {
    /// `d2` is the dense -d^2/dx^2 for the grid of u.
    pub fn new(u: &Field, lambda: f64, model: &'a Model, d2: &Matrix, bottom: f64) -> Self {
        let grid = u.grid();
        let m = grid.points();
        let h = grid.spacing();
        let diag = model.linearized_diagonal(u, lambda);
        let mut a = Matrix::zeros(m + 1, m + 1);
        for j in 0..m {
            for i in 0..m {
                a[(i, j)] = h * d2[(i, j)];
            }
            a[(j, j)] += h * diag[j];
            a[(j, m)] = -h * u.values()[j];
            a[(m, j)] = -h * u.values()[j];
        }
        Self {
            model,
            u: u.clone(),
            bottom,
            diag,
            solver: SymmetricSolver::new(&a),
        }
    }

    fn grid(&self) -> GridSpec {
        self.u.grid()
    }

    /// Solve A x = b for the assembled symmetric matrix.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solver.solve(b)
    }

    fn g_norm(&self, v: &Field, mu: f64) -> f64 {
        (h1v_unchecked(v, v, &self.model.potential).max(0.0) + mu * mu).sqrt()
    }

    /// T x = (K^{-1}(L v - mu u), -(u, v)_2), the H1 representation.
    fn apply_t(&self, v: &Field, mu: f64) -> Result<(Field, f64)> {
        let lv = crate::grid::laplacian_apply(v)?;
        let vals: Vec<f64> = lv
            .values()
            .iter()
            .zip(v.values())
            .zip(&self.diag)
            .zip(self.u.values())
            .map(|(((l, x), d), s)| l + d * x - mu * s)
            .collect();
        let w = self.model.apply_s(&Field::from_vec(self.grid(), vals), self.bottom)?;
        Ok((w, -dot_l2(&self.u, v)))
    }

    /// T^{-1} x = A^{-1} G x.
    fn apply_tinv(&self, v: &Field, mu: f64) -> Result<(Field, f64)> {
        let h = self.grid().spacing();
        let kv = crate::grid::laplacian_apply(v)?;
        let vs = self.model.potential.samples(&self.grid());
        let mut b: Vec<f64> = kv
            .values()
            .iter()
            .zip(v.values())
            .zip(&vs)
            .map(|((l, x), w)| h * (l + w * x))
            .collect();
        b.push(mu);
        let mut x = self.solve(&b)?;
        let m = x.pop().expect("bordered vector");
        Ok((Field::from_vec(self.grid(), x), m))
    }

    /// Estimate of the smallest singular value of T in the G metric,
    /// by power iteration on T^{-1}.
    pub fn sigma_min(&self, seed: u64) -> Result<f64> {
        self.power_estimate(seed, true).map(|n| 1.0 / n)
    }

    /// Estimate of the G-operator norm of T.
    pub fn norm_estimate(&self, seed: u64) -> Result<f64> {
        self.power_estimate(seed, false)
    }

    fn power_estimate(&self, seed: u64, inverse: bool) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = random_smooth_field(self.grid(), 20.0, &mut rng);
        let mut mu: f64 = rng.random_range(-1.0..1.0);
        let n0 = self.g_norm(&v, mu);
        v = v.scale(1.0 / n0);
        mu /= n0;
        let mut est = 0.0;
        for _ in 0..50 {
            let (w, nu) = if inverse {
                self.apply_tinv(&v, mu)?
            } else {
                self.apply_t(&v, mu)?
            };
            let n = self.g_norm(&w, nu);
            if !n.is_finite() || n == 0.0 {
                return Ok(if inverse { f64::INFINITY } else { 0.0 });
            }
            let done = (n - est).abs() <= 1e-6 * n;
            est = n;
            v = w.scale(1.0 / n);
            mu = nu / n;
            if done {
                break;
            }
        }
        Ok(est)
    }
}

/// Settings for [`newton_extended`].
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Target for the H1 + R norm of the extended gradient.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 30,
            max_halvings: 6,
        }
    }
}

/// Result of a Newton solve on the extended Lagrangian.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub point: ConstrainedCriticalPoint,
    pub iterations: usize,
    /// Extended-gradient norms, starting with the initial point.
    pub residual_history: Vec<f64>,
}

/// Damped Newton on grad G = 0 from (u0, lambda0). A step is halved up to
/// `max_halvings` times while the residual grows; three consecutive
/// increases abort with a gluing failure.
pub fn newton_extended(
    u0: &Field,
    lambda0: f64,
    alpha: f64,
    model: &Model,
    opts: NewtonOptions,
    separation: Option<u64>,
) -> Result<NewtonOutcome> {
    let grid = u0.grid();
    let bottom = model.positive_bottom(&grid)?;
    let d2 = linalg::neg_laplacian_matrix(&grid);
    let h = grid.spacing();
    let m = grid.points();
    let mut u = u0.clone();
    let mut lambda = lambda0;
    let mut res = extended_residual_norm(&u, lambda, alpha, model, bottom)?;
    let mut history = vec![res];
    let mut increases = 0;
    let mut iterations = 0;
    // Roundoff floor of the residual evaluation.
    let floor = 1e-13 * (1.0 + u.sup_norm()) * (1.0 + grid.max_wavenumber());
    while res > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::GluingFailed {
                separation,
                residuals: history,
            });
        }
        let sys = BorderedSystem::new(&u, lambda, model, &d2, bottom);
        let r = model.l2_residual(&u, lambda);
        let c = -0.5 * (u.mass() - alpha);
        let mut b: Vec<f64> = r.values().iter().map(|x| -h * x).collect();
        b.push(-c);
        let mut x = sys.solve(&b)?;
        let dl = x.pop().expect("bordered vector");
        let du = Field::from_vec(grid, x);
        let mut t = 1.0;
        let mut trial = (u.lin_comb(1.0, &du, t), lambda + t * dl);
        let mut trial_res = extended_residual_norm(&trial.0, trial.1, alpha, model, bottom)?;
        let mut halvings = 0;
        while !(trial_res < res) && halvings < opts.max_halvings {
            t *= 0.5;
            halvings += 1;
            trial = (u.lin_comb(1.0, &du, t), lambda + t * dl);
            trial_res = extended_residual_norm(&trial.0, trial.1, alpha, model, bottom)?;
        }
        iterations += 1;
        if !trial_res.is_finite() {
            return Err(Error::GluingFailed {
                separation,
                residuals: history,
            });
        }
        if trial_res >= res {
            if res <= floor.max(opts.tol * 100.0) {
                // Stagnation at roundoff level counts as convergence.
                break;
            }
            increases += 1;
        } else {
            increases = 0;
        }
        u = trial.0;
        lambda = trial.1;
        res = trial_res;
        history.push(res);
        if increases >= 3 {
            return Err(Error::GluingFailed {
                separation,
                residuals: history,
            });
        }
        debug_assert_eq!(u.len(), m);
    }
    Ok(NewtonOutcome {
        point: ConstrainedCriticalPoint::evaluate(u, lambda, alpha, model),
        iterations,
        residual_history: history,
    })
}

/// Settings for [`glue`].
#[derive(Debug, Clone, Copy)]
pub struct GlueOptions {
    pub newton: NewtonOptions,
    /// Largest admissible extended-gradient norm at the superposition.
    pub initial_threshold: f64,
    /// Seed for the conditioning estimates.
    pub seed: u64,
}

impl Default for GlueOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            initial_threshold: 0.5,
            seed: 7,
        }
    }
}

/// Output of [`glue`].
#[derive(Debug, Clone)]
pub struct GlueResult {
    pub point: ConstrainedCriticalPoint,
    pub superposition: Field,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// |u_a - v|_{H1} in the V-weighted norm.
    pub distance_h1: f64,
    /// |lambda_a - lambda_bar|.
    pub lambda_shift: f64,
    /// sigma_min of the bordered Hessian at the superposition.
    pub sigma_min: f64,
    pub operator_norm: f64,
}

/// Glue n translated copies of ubar into a critical point of mass alpha.
pub fn glue(
    ubar: &ConstrainedCriticalPoint,
    cfg: &BumpConfig,
    alpha: f64,
    model: &Model,
    opts: GlueOptions,
) -> Result<GlueResult> {
    let n = cfg.n() as f64;
    if (alpha - n * ubar.mass).abs() > 1e-12 * alpha.abs().max(1.0) {
        return Err(Error::Precondition(format!(
            "alpha = {alpha} differs from n * bump mass = {}",
            n * ubar.mass
        )));
    }
    for &a in cfg.offsets() {
        if !model.potential.is_period_multiple(a as f64) {
            return Err(Error::InvalidParameter(format!(
                "offset {a} is not a multiple of the potential period"
            )));
        }
    }
    let grid = ubar.u.grid();
    let bottom = model.positive_bottom(&grid)?;
    let v = superpose(&ubar.u, cfg)?;
    let sep = cfg.separation();
    let r0 = extended_residual_norm(&v, ubar.lambda, alpha, model, bottom)?;
    if r0 > opts.initial_threshold {
        return Err(Error::GluingFailed {
            separation: sep,
            residuals: vec![r0],
        });
    }
    let d2 = linalg::neg_laplacian_matrix(&grid);
    let sys = BorderedSystem::new(&v, ubar.lambda, model, &d2, bottom);
    let sigma_min = sys.sigma_min(opts.seed)?;
    let operator_norm = sys.norm_estimate(opts.seed)?;
    if !(sigma_min >= 1e-10 * operator_norm) {
        return Err(Error::DegenerateSuperposition {
            sigma_min,
            norm: operator_norm,
        });
    }
    drop(sys);
    let out = newton_extended(&v, ubar.lambda, alpha, model, opts.newton, sep)?;
    let diff = out.point.u.sub(&v);
    let distance_h1 = h1v_unchecked(&diff, &diff, &model.potential).max(0.0).sqrt();
    let lambda_shift = (out.point.lambda - ubar.lambda).abs();
    Ok(GlueResult {
        point: out.point,
        superposition: v,
        iterations: out.iterations,
        residual_history: out.residual_history,
        distance_h1,
        lambda_shift,
        sigma_min,
        operator_norm,
    })
}

/// Settings for [`shadowing_certificate`].
#[derive(Debug, Clone, Copy)]
pub struct CertificateOptions {
    pub delta: f64,
    pub q: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Sampled check of the fixed-point conditions at v0. The Lipschitz part
/// is estimated from random points of the ball, so this is a heuristic,
/// not a proof.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShadowingReport {
    pub residual_norm: f64,
    pub inverse_norm: f64,
    pub lipschitz_sample: f64,
    pub delta: f64,
    pub q: f64,
    pub samples: usize,
    /// T is an isomorphism (sigma_min above 1e-10 of the norm).
    pub isomorphism: bool,
    /// |h(v0)| < delta (1 - q) / |T^{-1}|.
    pub residual_small: bool,
    /// sampled sup |dh(y) - T| <= q / |T^{-1}|.
    pub derivative_close: bool,
    pub heuristic: bool,
}

impl ShadowingReport {
    pub fn all_hold(&self) -> bool {
        self.isomorphism && self.residual_small && self.derivative_close
    }
}

pub fn shadowing_certificate(
    pt0: &ExtendedPoint,
    alpha: f64,
    model: &Model,
    opts: CertificateOptions,
) -> Result<ShadowingReport> {
    if !(opts.q > 0.0 && opts.q < 1.0) {
        return Err(Error::InvalidParameter("q must lie in (0, 1)".into()));
    }
    let grid = pt0.u.grid();
    let bottom = model.positive_bottom(&grid)?;
    let d2 = linalg::neg_laplacian_matrix(&grid);
    let sys = BorderedSystem::new(&pt0.u, pt0.lambda, model, &d2, bottom);
    let sigma = sys.sigma_min(opts.seed)?;
    let norm = sys.norm_estimate(opts.seed)?;
    let inverse_norm = 1.0 / sigma;
    let residual_norm = extended_residual_norm(&pt0.u, pt0.lambda, alpha, model, bottom)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut lip: f64 = 0.0;
    for _ in 0..opts.samples {
        let dir = random_smooth_field(grid, 20.0, &mut rng);
        let dmu: f64 = rng.random_range(-1.0..1.0);
        let n = (h1v_unchecked(&dir, &dir, &model.potential) + dmu * dmu).sqrt();
        let rad: f64 = opts.delta * rng.random_range(0.0..1.0f64).max(1e-3);
        let y = ExtendedPoint {
            u: pt0.u.lin_comb(1.0, &dir, rad / n),
            lambda: pt0.lambda + rad * dmu / n,
        };
        lip = lip.max(derivative_gap(pt0, &y, model, bottom, rng.random())?);
    }
    Ok(ShadowingReport {
        residual_norm,
        inverse_norm,
        lipschitz_sample: lip,
        delta: opts.delta,
        q: opts.q,
        samples: opts.samples,
        isomorphism: sigma >= 1e-10 * norm,
        residual_small: residual_norm < opts.delta * (1.0 - opts.q) / inverse_norm,
        derivative_close: lip <= opts.q / inverse_norm,
        heuristic: true,
    })
}

/// G-operator norm of dh(y) - dh(x) by power iteration. The difference
/// acts as (v, mu) -> (-S((f'(y) - f'(x) + dlambda) v + mu (y - x)), -(y - x, v)_2).
fn derivative_gap(x: &ExtendedPoint, y: &ExtendedPoint, model: &Model, bottom: f64, seed: u64) -> Result<f64> {
    let grid = x.u.grid();
    let nl = &model.nonlinearity;
    let dl = y.lambda - x.lambda;
    let coef: Vec<f64> = x
        .u
        .values()
        .iter()
        .zip(y.u.values())
        .map(|(a, b)| nl.derivative(*b) - nl.derivative(*a) + dl)
        .collect();
    let du = y.u.sub(&x.u);
    let g_norm = |v: &Field, mu: f64| (h1v_unchecked(v, v, &model.potential).max(0.0) + mu * mu).sqrt();
    let apply = |v: &Field, mu: f64| -> Result<(Field, f64)> {
        let vals: Vec<f64> = v
            .values()
            .iter()
            .zip(&coef)
            .zip(du.values())
            .map(|((a, c), d)| c * a + mu * d)
            .collect();
        let s = model.apply_s(&Field::from_vec(grid, vals), bottom)?;
        Ok((s.scale(-1.0), -dot_l2(&du, v)))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = random_smooth_field(grid, 20.0, &mut rng);
    let mut mu: f64 = rng.random_range(-1.0..1.0);
    let n0 = g_norm(&v, mu);
    v = v.scale(1.0 / n0);
    mu /= n0;
    let mut est = 0.0;
    for _ in 0..40 {
        let (w, nu) = apply(&v, mu)?;
        let n = g_norm(&w, nu);
        if n == 0.0 {
            return Ok(0.0);
        }
        let done = (n - est).abs() <= 1e-6 * n;
        est = n;
        v = w.scale(1.0 / n);
        mu = nu / n;
        if done {
            break;
        }
    }
    Ok(est)
}
