//! Periodic grid on [-L, L), sampled fields and Fourier-spectral operators.
//!
//! The Laplacian uses the symbol k^2 with the Nyquist mode kept; the first
//! derivative zeroes the Nyquist mode. Quadrature is the trapezoid rule
//! h * sum, which is spectrally accurate for periodic integrands.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Potential;

/// Uniform periodic grid: `points` nodes on [-half_width, half_width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    half_width: u32,
    points: usize,
}

impl GridSpec {
    /// Requires M >= 64 even and L a positive integer. Integer translations
    /// are exact shifts only on aligned grids, see [`GridSpec::is_aligned`].
    pub fn new(half_width: u32, points: usize) -> Result<Self> {
        if half_width == 0 {
            return Err(Error::InvalidGrid("half-width L must be a positive integer".into()));
        }
        if points < 64 || points % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "point count {points} must be even and at least 64"
            )));
        }
        Ok(Self { half_width, points })
    }

    /// Like [`GridSpec::new`], additionally requiring M to be a multiple
    /// of 2L.
    pub fn aligned(half_width: u32, points: usize) -> Result<Self> {
        let g = Self::new(half_width, points)?;
        if !g.is_aligned() {
            return Err(Error::InvalidGrid(format!(
                "point count {points} is not a multiple of 2L = {}",
                2 * half_width
            )));
        }
        Ok(g)
    }

    /// M is a multiple of 2L, so h divides 1 and integer translations are
    /// whole numbers of cells.
    pub fn is_aligned(&self) -> bool {
        self.points % (2 * self.half_width as usize) == 0
    }

    pub fn half_width(&self) -> u32 {
        self.half_width
    }

    pub fn half_width_f64(&self) -> f64 {
        self.half_width as f64
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn length(&self) -> f64 {
        2.0 * self.half_width as f64
    }

    pub fn spacing(&self) -> f64 {
        self.length() / self.points as f64
    }

    /// Grid cells per unit length; meaningful on aligned grids.
    pub fn points_per_unit(&self) -> usize {
        self.points / (2 * self.half_width as usize)
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width_f64() + i as f64 * self.spacing()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.coord(i)).collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let m = self.points as i64;
        let base = 2.0 * PI / self.length();
        (0..m)
            .map(|j| {
                let f = if j < m / 2 { j } else { j - m };
                base * f as f64
            })
            .collect()
    }

    /// Largest |k| resolved by the grid.
    pub fn max_wavenumber(&self) -> f64 {
        PI / self.spacing()
    }

    /// Index of the node nearest to `x` (periodically wrapped).
    pub fn nearest_index(&self, x: f64) -> usize {
        let t = ((x + self.half_width_f64()) / self.spacing()).round() as i64;
        t.rem_euclid(self.points as i64) as usize
    }
}

/// Real samples of a function on a grid. Values are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.points() {
            return Err(Error::InvalidField(format!(
                "expected {} samples, got {}",
                grid.points(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite sample at index {i}")));
        }
        Ok(Self { grid, values })
    }

    /// Callers guarantee length and finiteness.
    pub(crate) fn from_vec(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.points());
        Self { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::from_vec(grid, vec![0.0; grid.points()])
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.coords().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Squared L2 norm h * sum u^2.
    pub fn mass(&self) -> f64 {
        self.grid.spacing() * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn l2_norm(&self) -> f64 {
        self.mass().sqrt()
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_vec(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// a * self + b * other.
    pub fn lin_comb(&self, a: f64, other: &Field, b: f64) -> Field {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        Field::from_vec(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }

    pub fn add(&self, other: &Field) -> Field {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.lin_comb(1.0, other, -1.0)
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Field) -> Field {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        Field::from_vec(
            self.grid,
            self.values.iter().zip(&other.values).map(|(x, y)| x * y).collect(),
        )
    }

    /// Rescale to squared L2 norm `alpha`.
    pub fn normalized_to(&self, alpha: f64) -> Field {
        self.scale((alpha / self.mass()).sqrt())
    }
}

fn check_same(u: &Field, v: &Field) -> Result<()> {
    if u.grid != v.grid {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Arc<FftPair> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<FftPair>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("fft cache poisoned");
    map.entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(FftPair {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

/// Unnormalized forward DFT of complex samples.
pub(crate) fn fft_complex(data: &mut [Complex64]) {
    plans(data.len()).forward.process(data);
}

/// Inverse DFT including the 1/M normalization.
pub(crate) fn ifft_complex(data: &mut [Complex64]) {
    let n = data.len();
    plans(n).inverse.process(data);
    let s = 1.0 / n as f64;
    for z in data.iter_mut() {
        *z *= s;
    }
}

pub(crate) fn fft_real(values: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_complex(&mut buf);
    buf
}

/// Multiply the spectrum of real samples by a real symbol that is even in k.
pub(crate) fn apply_real_symbol(values: &[f64], symbol: &[f64]) -> Vec<f64> {
    let mut buf = fft_real(values);
    for (z, s) in buf.iter_mut().zip(symbol) {
        *z *= *s;
    }
    ifft_complex(&mut buf);
    buf.into_iter().map(|z| z.re).collect()
}

/// Symbol k^2 of -d^2/dx^2.
pub(crate) fn laplacian_symbol(grid: &GridSpec) -> Vec<f64> {
    grid.wavenumbers().into_iter().map(|k| k * k).collect()
}

/// Spectral -u''. Output is real; the imaginary roundoff is discarded.
pub fn laplacian_apply(u: &Field) -> Result<Field> {
    if u.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidField("non-finite input".into()));
    }
    let sym = laplacian_symbol(&u.grid);
    Ok(Field::from_vec(u.grid, apply_real_symbol(&u.values, &sym)))
}

/// Spectral u' with the Nyquist mode zeroed.
pub fn derivative(u: &Field) -> Field {
    let ks = u.grid.wavenumbers();
    let m = u.grid.points();
    let mut buf = fft_real(&u.values);
    for (j, z) in buf.iter_mut().enumerate() {
        *z = if j == m / 2 {
            Complex64::new(0.0, 0.0)
        } else {
            *z * Complex64::new(0.0, ks[j])
        };
    }
    ifft_complex(&mut buf);
    Field::from_vec(u.grid, buf.into_iter().map(|z| z.re).collect())
}

/// (u, v)_2 = h * sum u v.
pub fn inner_l2(u: &Field, v: &Field) -> Result<f64> {
    check_same(u, v)?;
    Ok(dot_l2(u, v))
}

pub(crate) fn dot_l2(u: &Field, v: &Field) -> f64 {
    u.grid.spacing() * u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum::<f64>()
}

/// Spectral int u' v' dx, computed from the Fourier pairing so that it is
/// exactly symmetric in (u, v).
pub(crate) fn gradient_pairing(u: &Field, v: &Field) -> f64 {
    let uh = fft_real(&u.values);
    let vh = fft_real(&v.values);
    let ks = u.grid.wavenumbers();
    let m = u.grid.points() as f64;
    let s: f64 = uh
        .iter()
        .zip(&vh)
        .zip(&ks)
        .map(|((a, b), k)| k * k * (a.re * b.re + a.im * b.im))
        .sum();
    u.grid.spacing() * s / m
}

/// <u, v> = int (u' v' + V u v) dx. Needs the spectrum of -d^2/dx^2 + V
/// to be bounded below by a positive constant.
pub fn inner_h1v(u: &Field, v: &Field, potential: &Potential) -> Result<f64> {
    check_same(u, v)?;
    potential.require_positive(&u.grid)?;
    Ok(h1v_unchecked(u, v, potential))
}

pub(crate) fn h1v_unchecked(u: &Field, v: &Field, potential: &Potential) -> f64 {
    let vs = potential.samples(&u.grid);
    let h = u.grid.spacing();
    let pot: f64 = u
        .values
        .iter()
        .zip(&v.values)
        .zip(&vs)
        .map(|((a, b), w)| w * a * b)
        .sum();
    gradient_pairing(u, v) + h * pot
}

/// T_a u(x) = u(x - a) for an integer shift a with |a| < 2L.
pub fn translate(u: &Field, a: i64) -> Result<Field> {
    let two_l = 2 * u.grid.half_width() as i64;
    if a.abs() >= two_l {
        return Err(Error::InvalidParameter(format!(
            "translation {a} must satisfy |a| < 2L = {two_l}"
        )));
    }
    if !u.grid.is_aligned() {
        return Err(Error::MisalignedTranslation {
            offset: a as f64,
            spacing: u.grid.spacing(),
        });
    }
    let cells = a * u.grid.points_per_unit() as i64;
    Ok(roll(u, cells))
}

/// Translation by a real offset that must be a whole number of cells.
pub fn translate_by(u: &Field, offset: f64) -> Result<Field> {
    let h = u.grid.spacing();
    let cells = offset / h;
    let rounded = cells.round();
    if (cells - rounded).abs() > 1e-9 * cells.abs().max(1.0) {
        return Err(Error::MisalignedTranslation { offset, spacing: h });
    }
    if offset.abs() >= u.grid.length() {
        return Err(Error::InvalidParameter(format!(
            "translation {offset} must satisfy |a| < 2L"
        )));
    }
    Ok(roll(u, rounded as i64))
}

/// out[i] = u[i - cells], periodically.
pub(crate) fn roll(u: &Field, cells: i64) -> Field {
    let m = u.grid.points() as i64;
    let values = (0..m)
        .map(|i| u.values[(i - cells).rem_euclid(m) as usize])
        .collect();
    Field::from_vec(u.grid, values)
}

/// Solve (-d^2/dx^2 + V - shift) z = g. The shift must lie strictly below
/// the bottom of the spectrum.
pub fn resolvent_solve(g: &Field, potential: &Potential, shift: f64) -> Result<Field> {
    let grid = g.grid;
    let vs = potential.samples(&grid);
    let vmin = vs.iter().copied().fold(f64::INFINITY, f64::min);
    let bottom = if shift < vmin {
        vmin
    } else {
        let b = potential.spectrum_bottom(&grid)?;
        let gap = b - shift;
        if gap <= 1e-12 * b.abs().max(1.0) {
            return Err(Error::SingularOperator { gap });
        }
        b
    };
    Ok(Field::from_vec(
        grid,
        solve_shifted(&grid, &vs, shift, bottom, &g.values)?,
    ))
}

/// Constant potentials are divided out in Fourier space; otherwise PCG with
/// the preconditioner (k^2 + c)^{-1}.
pub(crate) fn solve_shifted(
    grid: &GridSpec,
    vs: &[f64],
    shift: f64,
    bottom: f64,
    g: &[f64],
) -> Result<Vec<f64>> {
    let sym = laplacian_symbol(grid);
    let vmin = vs.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = vs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if vmax - vmin == 0.0 {
        let c = vmin - shift;
        let inv: Vec<f64> = sym.iter().map(|k2| 1.0 / (k2 + c)).collect();
        return Ok(apply_real_symbol(g, &inv));
    }
    let mean = vs.iter().sum::<f64>() / vs.len() as f64;
    let c = (mean - shift).max(bottom - shift);
    let prec: Vec<f64> = sym.iter().map(|k2| 1.0 / (k2 + c)).collect();
    let shifted: Vec<f64> = vs.iter().map(|v| v - shift).collect();
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut y = apply_real_symbol(x, &sym);
        for ((yi, xi), w) in y.iter_mut().zip(x).zip(&shifted) {
            *yi += w * xi;
        }
        y
    };
    pcg(apply, |r| apply_real_symbol(r, &prec), g, 1e-13, 2000)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients for a symmetric positive operator.
/// Stops when the true residual satisfies |r|_inf <= rtol * |b|_inf.
pub(crate) fn pcg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    prec: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = sup(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let target = rtol * bnorm;
    let mut x = prec(b);
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z = prec(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut best = (sup(&r), x.clone());
    for it in 0..max_iter {
        if sup(&r) <= target {
            return Ok(x);
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let a = rz / pap;
        for i in 0..n {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        if (it + 1) % 20 == 0 {
            let ax = apply(&x);
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
        }
        let rn = sup(&r);
        if rn < best.0 {
            best = (rn, x.clone());
        }
        z = prec(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    // Accept a stagnated iterate if it sits at the roundoff floor.
    let ax = apply(&best.1);
    let rn = sup(&b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect::<Vec<_>>());
    if rn <= 1e3 * target {
        return Ok(best.1);
    }
    Err(Error::Linalg(format!(
        "conjugate gradients did not converge (residual {rn:e}, target {target:e})"
    )))
}

/// Smooth random field with Fourier modes |k| <= kmax and unit-scale amplitudes.
pub fn random_smooth_field(grid: GridSpec, kmax: f64, rng: &mut impl Rng) -> Field {
    let ks = grid.wavenumbers();
    let m = grid.points();
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..=m / 2 {
        if ks[j].abs() > kmax {
            continue;
        }
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = if j == 0 || j == m / 2 {
            0.0
        } else {
            rng.random_range(-1.0..1.0)
        };
        buf[j] = Complex64::new(a, b);
        if j != 0 && j != m / 2 {
            buf[m - j] = Complex64::new(a, -b);
        }
    }
    ifft_complex(&mut buf);
    let vals: Vec<f64> = buf.into_iter().map(|z| z.re).collect();
    let f = Field::from_vec(grid, vals);
    let s = f.sup_norm();
    if s > 0.0 {
        f.scale(1.0 / s)
    } else {
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(8, 256).unwrap()
    }

    #[test]
    fn test_grid_validation() {
        assert!(GridSpec::new(8, 60).is_err());
        assert!(GridSpec::new(8, 65).is_err());
        assert!(GridSpec::new(3, 64).unwrap().is_aligned() == false);
        assert!(GridSpec::aligned(3, 64).is_err());
        assert!(GridSpec::new(0, 64).is_err());
        let u = Field::zeros(GridSpec::new(40, 4096).unwrap());
        assert!(matches!(translate(&u, 1), Err(Error::MisalignedTranslation { .. })));
        let g = GridSpec::new(4, 64).unwrap();
        assert_eq!(g.points_per_unit(), 8);
        assert_eq!(g.spacing(), 0.125);
    }

    #[test]
    fn test_laplacian_of_cosine() {
        let g = grid();
        let k = 2.0 * PI * 3.0 / 16.0;
        let u = Field::from_fn(g, |x| (k * x).cos()).unwrap();
        let lu = laplacian_apply(&u).unwrap();
        for (a, b) in lu.values().iter().zip(u.values()) {
            assert!((a - k * k * b).abs() < 1e-12);
        }
    }

    #[test]
    fn test_derivative_of_sine() {
        let g = grid();
        let k = 2.0 * PI * 5.0 / 16.0;
        let u = Field::from_fn(g, |x| (k * x).sin()).unwrap();
        let du = derivative(&u);
        for (i, a) in du.values().iter().enumerate() {
            assert!((a - k * (k * g.coord(i)).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn test_translate_matches_shift() {
        let g = grid();
        let u = Field::from_fn(g, |x| (-2.0 * (x - 1.0) * (x - 1.0)).exp()).unwrap();
        let t = translate(&u, 2).unwrap();
        let expected = Field::from_fn(g, |x| (-2.0 * (x - 3.0) * (x - 3.0)).exp()).unwrap();
        assert!(t.sub(&expected).sup_norm() < 1e-12);
        assert!(translate(&u, 16).is_err());
        assert!(matches!(
            translate_by(&u, 0.01),
            Err(Error::MisalignedTranslation { .. })
        ));
    }

    #[test]
    fn test_resolvent_constant_potential() {
        let g = grid();
        let v = Potential::constant(1.0);
        let u = Field::from_fn(g, |x| 1.0 / (x).cosh()).unwrap();
        let lu = laplacian_apply(&u).unwrap().add(&u);
        let z = resolvent_solve(&lu, &v, 0.0).unwrap();
        assert!(z.sub(&u).sup_norm() < 1e-12);
    }

    #[test]
    fn test_resolvent_cosine_potential() {
        let g = grid();
        let v = Potential::cosine(0.5, 0.0);
        let u = Field::from_fn(g, |x| (-(x * x)).exp()).unwrap();
        let vs = v.samples(&g);
        let ku = laplacian_apply(&u).unwrap();
        let rhs: Vec<f64> = ku
            .values()
            .iter()
            .zip(u.values())
            .zip(&vs)
            .map(|((a, b), w)| a + (w - 0.2) * b)
            .collect();
        let rhs = Field::new(g, rhs).unwrap();
        let z = resolvent_solve(&rhs, &v, 0.2).unwrap();
        assert!(z.sub(&u).sup_norm() < 1e-11);
    }

    #[test]
    fn test_resolvent_rejects_spectral_shift() {
        let g = grid();
        let v = Potential::cosine(0.5, 0.0);
        let u = Field::from_fn(g, |x| (-(x * x)).exp()).unwrap();
        let b = v.spectrum_bottom(&g).unwrap();
        assert!(matches!(
            resolvent_solve(&u, &v, b + 0.01),
            Err(Error::SingularOperator { .. })
        ));
    }

    #[test]
    fn test_inner_products_reject_mismatch() {
        let u = Field::zeros(grid());
        let w = Field::zeros(GridSpec::new(8, 128).unwrap());
        assert!(matches!(inner_l2(&u, &w), Err(Error::GridMismatch)));
    }

    #[test]
    fn test_inner_h1v_requires_positive_operator() {
        let g = grid();
        let u = Field::from_fn(g, |x| (-(x * x)).exp()).unwrap();
        let v = Potential::cosine(0.5, -1.0);
        assert!(matches!(
            inner_h1v(&u, &u, &v),
            Err(Error::AssumptionViolation { .. })
        ));
    }

    #[test]
    fn test_non_finite_field_rejected() {
        let g = grid();
        let mut vals = vec![0.0; g.points()];
        vals[3] = f64::NAN;
        assert!(Field::new(g, vals).is_err());
    }
}
