//! Time evolution of i psi_t + psi'' - V psi + |psi|^{p-2} psi = 0, written
//! as psi_t = i(-psi'' + V psi - |psi|^{p-2} psi), by Strang splitting:
//! half a kinetic step exp(i k^2 dt/2) in Fourier space, a full pointwise
//! phase step exp(i (V - |psi|^{p-2}) dt), and another half kinetic step.
//! Standing waves phi e^{i lambda t} are exact solutions of the flow.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fft_complex, ifft_complex, Field, GridSpec};
use crate::model::Model;

/// Complex samples on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: GridSpec,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.points() {
            return Err(Error::InvalidField("wrong number of samples".into()));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidField("non-finite sample".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_real(u: &Field) -> Self {
        Self {
            grid: u.grid(),
            values: u.values().iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.spacing() * self.values.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|z| z * c).collect(),
        }
    }

    pub fn real_part(&self) -> Field {
        Field::from_vec(self.grid, self.values.iter().map(|z| z.re).collect())
    }

    pub fn imag_part(&self) -> Field {
        Field::from_vec(self.grid, self.values.iter().map(|z| z.im).collect())
    }
}

/// int |psi'|^2 computed in Fourier space.
fn kinetic(psi: &ComplexField) -> f64 {
    let mut buf = psi.values.clone();
    fft_complex(&mut buf);
    let ks = psi.grid.wavenumbers();
    let m = psi.grid.points() as f64;
    psi.grid.spacing() * buf.iter().zip(&ks).map(|(z, k)| k * k * z.norm_sqr()).sum::<f64>() / m
}

/// 1/2 int (|psi'|^2 + V |psi|^2) - int |psi|^p / p.
pub fn energy(psi: &ComplexField, model: &Model) -> f64 {
    let vs = model.potential.samples(&psi.grid);
    let h = psi.grid.spacing();
    let pot: f64 = psi.values.iter().zip(&vs).map(|(z, v)| v * z.norm_sqr()).sum();
    let nl: f64 = psi.values.iter().map(|z| model.nonlinearity.primitive(z.norm())).sum();
    0.5 * (kinetic(psi) + h * pot) - h * nl
}

/// min over theta of |psi - phi e^{i theta}|_{H1}, with
/// |w|_{H1}^2 = int |w'|^2 + |w|^2. The orbit of phi e^{i lambda t} is
/// the full phase circle unless lambda = 0, where it is phi alone.
pub fn orbit_distance(psi: &ComplexField, phi: &Field, lambda: f64) -> f64 {
    let grid = psi.grid;
    let ks = grid.wavenumbers();
    let mut a = psi.values.clone();
    fft_complex(&mut a);
    let mut b: Vec<Complex64> = phi.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_complex(&mut b);
    let theta = if lambda == 0.0 {
        0.0
    } else {
        // <psi, phi>_{H1} = sum (k^2 + 1) psi_hat conj(phi_hat); the
        // minimizing phase is its argument.
        let s: Complex64 = a
            .iter()
            .zip(&b)
            .zip(&ks)
            .map(|((x, y), k)| x * y.conj() * (k * k + 1.0))
            .sum();
        s.arg()
    };
    let rot = Complex64::from_polar(1.0, theta);
    let m = grid.points() as f64;
    let d2: f64 = a
        .iter()
        .zip(&b)
        .zip(&ks)
        .map(|((x, y), k)| (k * k + 1.0) * (x - y * rot).norm_sqr())
        .sum();
    (grid.spacing() * d2 / m).sqrt()
}

/// Settings for [`propagate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropagateOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Steps between recorded samples.
    pub record_stride: usize,
    /// Steps between stored snapshots; 0 stores none.
    pub snapshot_stride: usize,
    /// Largest tolerated relative mass drift.
    pub mass_tolerance: f64,
    /// Stop once the recorded orbit distance reaches this level.
    pub stop_distance: Option<f64>,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 1.0,
            record_stride: 10,
            snapshot_stride: 0,
            mass_tolerance: 1e-10,
            stop_distance: None,
        }
    }
}

/// One recorded time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    /// NaN when no reference standing wave was given.
    pub orbit_distance: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub snapshots: Vec<(f64, ComplexField)>,
    pub final_state: ComplexField,
}

impl Trajectory {
    /// First recorded time at which the orbit distance reaches `level`.
    pub fn exit_time(&self, level: f64) -> Option<f64> {
        self.points.iter().find(|p| p.orbit_distance >= level).map(|p| p.t)
    }

    pub fn max_mass_drift(&self) -> f64 {
        let m0 = self.points[0].mass;
        self.points.iter().fold(0.0, |a, p| a.max(((p.mass - m0) / m0).abs()))
    }

    pub fn max_energy_drift(&self) -> f64 {
        let e0 = self.points[0].energy;
        self.points.iter().fold(0.0, |a, p| a.max((p.energy - e0).abs()))
    }
}

/// Integrate from psi0 up to t_end. With `reference = (phi, lambda)` the
/// orbit distance to phi e^{i lambda t} is recorded.
pub fn propagate(
    psi0: &ComplexField,
    model: &Model,
    opts: &PropagateOptions,
    reference: Option<(&Field, f64)>,
) -> Result<Trajectory> {
    if !(opts.dt > 0.0 && opts.t_end >= 0.0 && opts.record_stride > 0) {
        return Err(Error::InvalidParameter("need dt > 0, t_end >= 0, record_stride > 0".into()));
    }
    let grid = psi0.grid;
    let steps = (opts.t_end / opts.dt).round() as usize;
    let dt = if steps > 0 { opts.t_end / steps as f64 } else { opts.dt };
    let half: Vec<Complex64> = grid
        .wavenumbers()
        .iter()
        .map(|k| Complex64::from_polar(1.0, k * k * 0.5 * dt))
        .collect();
    let vs = model.potential.samples(&grid);
    let nl = model.nonlinearity;
    let record = |psi: &ComplexField, t: f64| TrajectoryPoint {
        t,
        mass: psi.mass(),
        energy: energy(psi, model),
        orbit_distance: reference
            .map(|(phi, lambda)| orbit_distance(psi, phi, lambda))
            .unwrap_or(f64::NAN),
    };
    let mut psi = psi0.clone();
    let mut points = vec![record(&psi, 0.0)];
    let m0 = points[0].mass;
    let mut snapshots = Vec::new();
    if opts.snapshot_stride > 0 {
        snapshots.push((0.0, psi.clone()));
    }
    let mut buf = psi.values.clone();
    for step in 1..=steps {
        fft_complex(&mut buf);
        buf.iter_mut().zip(&half).for_each(|(z, e)| *z *= e);
        ifft_complex(&mut buf);
        for (z, v) in buf.iter_mut().zip(&vs) {
            let phase = (v - nl.ratio(z.norm())) * dt;
            *z *= Complex64::from_polar(1.0, phase);
        }
        fft_complex(&mut buf);
        buf.iter_mut().zip(&half).for_each(|(z, e)| *z *= e);
        ifft_complex(&mut buf);
        let t = step as f64 * dt;
        let rec = step % opts.record_stride == 0 || step == steps;
        let snap = opts.snapshot_stride > 0 && step % opts.snapshot_stride == 0;
        if rec || snap {
            psi.values.copy_from_slice(&buf);
            if buf.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::IntegratorFault { drift: f64::INFINITY });
            }
        }
        if rec {
            let p = record(&psi, t);
            let drift = ((p.mass - m0) / m0).abs();
            if drift > opts.mass_tolerance {
                return Err(Error::IntegratorFault { drift });
            }
            let done = opts.stop_distance.is_some_and(|s| p.orbit_distance >= s);
            points.push(p);
            if done {
                break;
            }
        }
        if snap {
            snapshots.push((t, psi.clone()));
        }
    }
    psi.values.copy_from_slice(&buf);
    Ok(Trajectory {
        points,
        snapshots,
        final_state: psi,
    })
}

/// phi + amplitude v, renormalized to the mass of phi.
pub fn seed_perturbation(phi: &Field, v: &Field, amplitude: f64) -> ComplexField {
    let w = phi.lin_comb(1.0, v, amplitude).normalized_to(phi.mass());
    ComplexField::from_real(&w)
}

/// phi + amplitude (w1 + i w2), renormalized to the mass of phi. Seeds a
/// pure eigenmode of the linearization when (w1, w2) is one.
pub fn seed_mode(phi: &Field, w1: &Field, w2: &Field, amplitude: f64) -> Result<ComplexField> {
    let vals = phi
        .values()
        .iter()
        .zip(w1.values())
        .zip(w2.values())
        .map(|((p, a), b)| Complex64::new(p + amplitude * a, amplitude * b))
        .collect();
    let psi = ComplexField::new(phi.grid(), vals)?;
    let s = (phi.mass() / psi.mass()).sqrt();
    Ok(psi.scale(Complex64::new(s, 0.0)))
}

/// Least-squares fit of log(orbit distance) against t.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GrowthFit {
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
}

/// Fit on the samples with t in [t0, t1]. All distances there must lie in
/// [1e-6, 1e-1], the regime where the linearization governs the growth.
pub fn growth_rate_fit(traj: &Trajectory, window: (f64, f64)) -> Result<GrowthFit> {
    let pts: Vec<&TrajectoryPoint> = traj
        .points
        .iter()
        .filter(|p| p.t >= window.0 && p.t <= window.1)
        .collect();
    if pts.len() < 3 {
        return Err(Error::FitRejected(format!("only {} samples in the window", pts.len())));
    }
    if let Some(p) = pts
        .iter()
        .find(|p| !(p.orbit_distance >= 1e-6 && p.orbit_distance <= 1e-1))
    {
        return Err(Error::FitRejected(format!(
            "distance {} at t = {} outside [1e-6, 1e-1]",
            p.orbit_distance, p.t
        )));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.t).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.orbit_distance.ln()).collect();
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    Ok(GrowthFit {
        rate: slope,
        intercept,
        r_squared: r2,
        t_start: xs[0],
        t_end: xs[xs.len() - 1],
        samples: xs.len(),
    })
}

/// Time window from the first sample with distance >= lo to the last
/// sample before the distance first reaches hi.
pub fn linear_regime_window(traj: &Trajectory, lo: f64, hi: f64) -> Option<(f64, f64)> {
    let start = traj.points.iter().position(|p| p.orbit_distance >= lo)?;
    let stop = traj.points[start..]
        .iter()
        .position(|p| p.orbit_distance >= hi)
        .map(|i| start + i)?;
    (stop > start + 2).then(|| (traj.points[start].t, traj.points[stop - 1].t))
}

/// Ordinary least squares: (slope, intercept, R^2).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Nonlinearity, Potential};
    use crate::stationary::limit_profile;

    #[test]
    fn test_linear_fit_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (s, c, r2) = linear_fit(&xs, &ys);
        assert!((s - 2.0).abs() < 1e-14 && (c - 1.0).abs() < 1e-14 && (r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn test_orbit_distance_ignores_phase() {
        let g = GridSpec::new(16, 256).unwrap();
        let phi = limit_profile(g, 4.0, 1.0, 0.0).unwrap();
        let psi = ComplexField::from_real(&phi).scale(Complex64::from_polar(1.0, 1.3));
        assert!(orbit_distance(&psi, &phi, -0.5) < 1e-12);
        assert!(orbit_distance(&psi, &phi, 0.0) > 0.1);
    }

    #[test]
    fn test_linear_free_evolution_matches_fourier_phase() {
        let g = GridSpec::new(16, 256).unwrap();
        let model = Model::new(Potential::constant(0.0), Nonlinearity::linear());
        let k = 2.0 * std::f64::consts::PI * 2.0 / 32.0;
        let u = Field::from_fn(g, |x| (k * x).cos()).unwrap();
        let opts = PropagateOptions {
            dt: 0.01,
            t_end: 1.0,
            ..Default::default()
        };
        let tr = propagate(&ComplexField::from_real(&u), &model, &opts, None).unwrap();
        let expected = Complex64::from_polar(1.0, k * k);
        for (z, v) in tr.final_state.values().iter().zip(u.values()) {
            assert!((z - expected * v).norm() < 1e-12);
        }
    }

    #[test]
    fn test_fit_rejects_out_of_range_distances() {
        let points = (0..10)
            .map(|i| TrajectoryPoint {
                t: i as f64,
                mass: 1.0,
                energy: 0.0,
                orbit_distance: 1e-8 * (i as f64).exp(),
            })
            .collect();
        let g = GridSpec::new(16, 256).unwrap();
        let tr = Trajectory {
            points,
            snapshots: vec![],
            final_state: ComplexField::from_real(&Field::zeros(g)),
        };
        assert!(matches!(growth_rate_fit(&tr, (0.0, 9.0)), Err(Error::FitRejected(_))));
        let fit = growth_rate_fit(&tr, (5.0, 9.0)).unwrap();
        assert!((fit.rate - 1.0).abs() < 1e-10);
    }
}
