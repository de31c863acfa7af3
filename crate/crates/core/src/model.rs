//! Potentials, power nonlinearities and the energy functional.

use std::f64::consts::PI;

use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    dot_l2, fft_complex, gradient_pairing, laplacian_apply, solve_shifted, Field, GridSpec,
};
use crate::linalg;

/// Shape of a potential with unit period before scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PotentialKind {
    Constant { value: f64 },
    /// 1 + amplitude * cos(2 pi y).
    Cosine { amplitude: f64 },
    /// Samples over one period [0, 1), linearly interpolated.
    Tabulated { samples: Vec<f64> },
}

/// V(x) = base(scale * x) + shift, periodic with period 1/scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub kind: PotentialKind,
    pub shift: f64,
    pub scale: f64,
}

impl Potential {
    pub fn constant(value: f64) -> Self {
        Self {
            kind: PotentialKind::Constant { value },
            shift: 0.0,
            scale: 1.0,
        }
    }

    /// 1 + amplitude * cos(2 pi x) + shift.
    pub fn cosine(amplitude: f64, shift: f64) -> Self {
        Self {
            kind: PotentialKind::Cosine { amplitude },
            shift,
            scale: 1.0,
        }
    }

    pub fn tabulated(samples: Vec<f64>, shift: f64) -> Result<Self> {
        if samples.len() < 2 || samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "tabulated potential needs at least two finite samples".into(),
            ));
        }
        Ok(Self {
            kind: PotentialKind::Tabulated { samples },
            shift,
            scale: 1.0,
        })
    }

    /// x -> V(eps * x). eps = 0 freezes the potential at V(0).
    pub fn scaled(&self, eps: f64) -> Self {
        if eps == 0.0 {
            return Self::constant(self.value(0.0));
        }
        let mut out = self.clone();
        out.scale *= eps;
        out
    }

    pub fn with_shift(&self, extra: f64) -> Self {
        let mut out = self.clone();
        out.shift += extra;
        out
    }

    pub fn is_constant(&self) -> bool {
        match &self.kind {
            PotentialKind::Constant { .. } => true,
            PotentialKind::Cosine { amplitude } => *amplitude == 0.0,
            PotentialKind::Tabulated { samples } => samples.iter().all(|v| *v == samples[0]),
        }
    }

    /// Period in x, or None for constant potentials.
    pub fn period(&self) -> Option<f64> {
        if self.is_constant() {
            None
        } else {
            Some(1.0 / self.scale)
        }
    }

    fn base(&self, y: f64) -> f64 {
        match &self.kind {
            PotentialKind::Constant { value } => *value,
            PotentialKind::Cosine { amplitude } => 1.0 + amplitude * (2.0 * PI * y).cos(),
            PotentialKind::Tabulated { samples } => {
                let n = samples.len();
                let t = y.rem_euclid(1.0) * n as f64;
                let i = t.floor() as usize % n;
                let frac = t - t.floor();
                samples[i] * (1.0 - frac) + samples[(i + 1) % n] * frac
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.base(self.scale * x) + self.shift
    }

    /// (V, V', V'') at x. Exact for constant and cosine kinds, central
    /// differences on the table otherwise.
    pub fn derivatives(&self, x: f64) -> (f64, f64, f64) {
        let s = self.scale;
        match &self.kind {
            PotentialKind::Constant { .. } => (self.value(x), 0.0, 0.0),
            PotentialKind::Cosine { amplitude } => {
                let w = 2.0 * PI;
                let y = s * x;
                (
                    self.value(x),
                    -amplitude * w * s * (w * y).sin(),
                    -amplitude * w * w * s * s * (w * y).cos(),
                )
            }
            PotentialKind::Tabulated { samples } => {
                let d = 1.0 / (samples.len() as f64 * s);
                let (a, b, c) = (self.value(x - d), self.value(x), self.value(x + d));
                (b, (c - a) / (2.0 * d), (c - 2.0 * b + a) / (d * d))
            }
        }
    }

    pub fn samples(&self, grid: &GridSpec) -> Vec<f64> {
        grid.coords().into_iter().map(|x| self.value(x)).collect()
    }

    /// Number of grid cells per period, when the period is a whole number
    /// of cells and divides the box.
    pub fn cells_per_period(&self, grid: &GridSpec) -> Option<usize> {
        let p = self.period()?;
        let cells = p / grid.spacing();
        let rc = cells.round();
        if rc < 1.0 || (cells - rc).abs() > 1e-9 * cells.max(1.0) {
            return None;
        }
        let rc = rc as usize;
        (grid.points() % rc == 0).then_some(rc)
    }

    /// Whether x -> x + a is a symmetry of V.
    pub fn is_period_multiple(&self, a: f64) -> bool {
        match self.period() {
            None => true,
            Some(p) => {
                let q = a / p;
                (q - q.round()).abs() <= 1e-9 * q.abs().max(1.0)
            }
        }
    }

    /// Lowest eigenvalue of the discretized -d^2/dx^2 + V on the box, from
    /// its exact decomposition into Bloch sectors when V is commensurate
    /// with the grid, or a full dense eigensolve otherwise.
    pub fn spectrum_bottom(&self, grid: &GridSpec) -> Result<f64> {
        if self.is_constant() {
            return Ok(self.value(0.0));
        }
        let vs = self.samples(grid);
        let m = grid.points();
        let nc = self.cells_per_period(grid).unwrap_or(m);
        if nc == m {
            let a = linalg::schrodinger_matrix(grid, &vs);
            return Ok(linalg::sym_eigenvalues(&a)?[0]);
        }
        let sectors = m / nc;
        let mut cell: Vec<c64> = vs[..nc].iter().map(|&v| c64::new(v, 0.0)).collect();
        fft_complex(&mut cell);
        for z in cell.iter_mut() {
            *z /= nc as f64;
        }
        let base = 2.0 * PI / grid.length();
        let mut bottom = f64::INFINITY;
        for r in 0..sectors {
            let ks: Vec<f64> = (0..nc)
                .map(|j| {
                    let mm = (r + sectors * j) % m;
                    let f = if mm < m / 2 { mm as f64 } else { mm as f64 - m as f64 };
                    base * f
                })
                .collect();
            let a = Mat::from_fn(nc, nc, |i, j| {
                let mut z = cell[(i + nc - j) % nc];
                if i == j {
                    z += c64::new(ks[i] * ks[i], 0.0);
                }
                z
            });
            bottom = bottom.min(linalg::hermitian_eigenvalues(&a)?[0]);
        }
        Ok(bottom)
    }

    /// Error unless the bottom of the spectrum is positive.
    pub fn require_positive(&self, grid: &GridSpec) -> Result<()> {
        let vs = self.samples(grid);
        if vs.iter().all(|v| *v > 0.0) {
            return Ok(());
        }
        let gamma = self.spectrum_bottom(grid)?;
        if gamma <= 0.0 {
            return Err(Error::AssumptionViolation { gamma });
        }
        Ok(())
    }
}

/// f(s) = c |s|^{p-2} s. The coupling c is 1 except for the linear test
/// case c = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub exponent: f64,
    pub coupling: f64,
}

impl Nonlinearity {
    pub fn power(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > 2.0) {
            return Err(Error::InvalidParameter(format!("exponent p = {p} must exceed 2")));
        }
        Ok(Self {
            exponent: p,
            coupling: 1.0,
        })
    }

    /// f = 0.
    pub fn linear() -> Self {
        Self {
            exponent: 4.0,
            coupling: 0.0,
        }
    }

    pub fn is_mass_subcritical(&self) -> bool {
        self.exponent < 6.0
    }

    /// c |s|^{p-2}.
    pub fn ratio(&self, s: f64) -> f64 {
        self.coupling * s.abs().powf(self.exponent - 2.0)
    }

    pub fn f(&self, s: f64) -> f64 {
        self.ratio(s) * s
    }

    pub fn primitive(&self, s: f64) -> f64 {
        self.coupling * s.abs().powf(self.exponent) / self.exponent
    }

    pub fn derivative(&self, s: f64) -> f64 {
        (self.exponent - 1.0) * self.ratio(s)
    }

    pub fn apply(&self, u: &Field) -> Field {
        u.map(|s| self.f(s))
    }
}

/// A potential together with a nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub potential: Potential,
    pub nonlinearity: Nonlinearity,
}

impl Model {
    pub fn new(potential: Potential, nonlinearity: Nonlinearity) -> Self {
        Self {
            potential,
            nonlinearity,
        }
    }

    /// Phi(u) = 1/2 int (u'^2 + V u^2) - int F(u).
    pub fn energy(&self, u: &Field) -> f64 {
        let g = u.grid();
        let vs = self.potential.samples(&g);
        let h = g.spacing();
        let pot: f64 = u.values().iter().zip(&vs).map(|(a, v)| v * a * a).sum();
        let nl: f64 = u.values().iter().map(|&s| self.nonlinearity.primitive(s)).sum();
        0.5 * (gradient_pairing(u, u) + h * pot) - h * nl
    }

    /// -u'' + V u - f(u) - lambda u.
    pub fn l2_residual(&self, u: &Field, lambda: f64) -> Field {
        let lap = laplacian_apply(u).expect("field values are finite");
        let vs = self.potential.samples(&u.grid());
        let vals = lap
            .values()
            .iter()
            .zip(u.values())
            .zip(&vs)
            .map(|((l, s), v)| l + (v - lambda) * s - self.nonlinearity.f(*s))
            .collect();
        Field::from_vec(u.grid(), vals)
    }

    /// Solve (-d^2/dx^2 + V - shift) z = g, reusing the sampled potential.
    pub fn resolvent(&self, g: &Field, shift: f64) -> Result<Field> {
        crate::grid::resolvent_solve(g, &self.potential, shift)
    }

    /// S = (-d^2/dx^2 + V)^{-1} on a grid where the operator is known to
    /// be positive with bottom `bottom`.
    pub(crate) fn apply_s(&self, g: &Field, bottom: f64) -> Result<Field> {
        let grid = g.grid();
        let vs = self.potential.samples(&grid);
        Ok(Field::from_vec(
            grid,
            solve_shifted(&grid, &vs, 0.0, bottom, g.values())?,
        ))
    }

    /// Gradient of Phi in the V-weighted H1 inner product: u - S f(u).
    pub fn h1_gradient(&self, u: &Field) -> Result<Field> {
        let bottom = self.positive_bottom(&u.grid())?;
        let sf = self.apply_s(&self.nonlinearity.apply(u), bottom)?;
        Ok(u.sub(&sf))
    }

    /// Bottom of the spectrum of -d^2/dx^2 + V, required positive.
    pub fn positive_bottom(&self, grid: &GridSpec) -> Result<f64> {
        let b = self.potential.spectrum_bottom(grid)?;
        if b <= 0.0 {
            return Err(Error::AssumptionViolation { gamma: b });
        }
        Ok(b)
    }

    /// V - lambda - f'(u), the diagonal part of the linearized operator.
    pub fn linearized_diagonal(&self, u: &Field, lambda: f64) -> Vec<f64> {
        let vs = self.potential.samples(&u.grid());
        vs.iter()
            .zip(u.values())
            .map(|(v, s)| v - lambda - self.nonlinearity.derivative(*s))
            .collect()
    }

    /// Phi''(u)(v, w) - lambda (v, w)_2, exactly symmetric in (v, w).
    pub fn hessian_form(&self, u: &Field, lambda: f64, v: &Field, w: &Field) -> f64 {
        let d = self.linearized_diagonal(u, lambda);
        let h = u.grid().spacing();
        let pot: f64 = v
            .values()
            .iter()
            .zip(w.values())
            .zip(&d)
            .map(|((a, b), c)| c * (a * b))
            .sum();
        gradient_pairing(v, w) + h * pot
    }

    /// (-u'' + V u - f(u), u)_2 / |u|_2^2.
    pub fn lagrange_multiplier(&self, u: &Field) -> f64 {
        let r = self.l2_residual(u, 0.0);
        dot_l2(&r, u) / u.mass()
    }
}
