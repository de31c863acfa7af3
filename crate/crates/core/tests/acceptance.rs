//! Acceptance criteria, one PASS/FAIL line each.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use multibump::dynamics::{
    growth_rate_fit, linear_fit, linear_regime_window, orbit_distance, propagate, seed_mode, seed_perturbation,
    PropagateOptions,
};
use multibump::gluing::{
    glue, newton_extended, shadowing_certificate, superpose, BumpConfig, CertificateOptions, ExtendedPoint,
    GlueOptions, GlueResult, NewtonOptions,
};
use multibump::grid::{inner_h1v, inner_l2, random_smooth_field};
use multibump::semiclassical::{
    continue_family, criterion_value, morse_check, select_mass_epsilon, translation_mode_estimate,
    RescaledOptions, SemiclassicalProblem,
};
use multibump::spectra::{classify, instability_eigenvalue, LinearizedOperator, SpectralOptions};
use multibump::stationary::{limit_profile, local_minimizer, ConstrainedCriticalPoint, FlowOptions};
use multibump::{linalg, GridSpec, Model, Nonlinearity, Potential};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const BUMP_MASS: f64 = 5.0;

fn base() -> &'static (Model, ConstrainedCriticalPoint) {
    static CELL: OnceLock<(Model, ConstrainedCriticalPoint)> = OnceLock::new();
    CELL.get_or_init(|| {
        let grid = GridSpec::aligned(28, 896).unwrap();
        let model = Model::new(Potential::cosine(0.5, 0.0), Nonlinearity::power(4.0).unwrap());
        let ubar = local_minimizer(grid, &model, BUMP_MASS, 0.5, FlowOptions::default(), NewtonOptions::default())
            .unwrap();
        (model, ubar)
    })
}

fn ac1() -> Outcome {
    let t = Instant::now();
    let grid = GridSpec::new(40, 4096).map_err(|e| e.to_string())?;
    let model = Model::new(Potential::constant(1.0), Nonlinearity::power(4.0).unwrap());
    let u = limit_profile(grid, 4.0, 1.0, 0.0).map_err(|e| e.to_string())?;
    let res = model.l2_residual(&u, 0.0).sup_norm();
    let mass = u.mass();
    let secs = t.elapsed().as_secs_f64();
    check(
        res < 1e-8 && (mass - 4.0).abs() < 1e-8 && secs < 1.0,
        format!("residual {res:.2e}, |u0|^2 - 4 = {:.2e}, {secs:.3}s", mass - 4.0),
    )
}

fn ac2() -> Outcome {
    let t = Instant::now();
    let grid = GridSpec::new(40, 4096).map_err(|e| e.to_string())?;
    let diag = grid.coords().iter().map(|x| 1.0 - 6.0 / x.cosh().powi(2)).collect();
    let op = LinearizedOperator::new(grid, diag);
    let vals = linalg::sym_eigenvalues(&op.matrix()).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    check(
        (vals[0] + 3.0).abs() < 1e-6 && vals[1].abs() < 1e-6 && secs < 30.0,
        format!("lowest {:.12}, {:.3e}; {secs:.1}s", vals[0], vals[1]),
    )
}

fn ac3() -> Outcome {
    let grid = GridSpec::new(30, 1440).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [4.0, 5.5, 6.5, 8.0] {
        let c = criterion_value(grid, p).map_err(|e| e.to_string())?;
        ok &= c.relative_error() < 1e-4 && (c.numeric > 0.0) == (p > 6.0);
        parts.push(format!("p={p}: {:.6} vs {:.6} (rel {:.1e})", c.numeric, c.analytic, c.relative_error()));
    }
    check(ok, parts.join("; "))
}

struct Sweep {
    rows: Vec<(u64, GlueResult, usize, usize)>,
    secs: f64,
}

fn sweep(n: usize) -> Result<Sweep, String> {
    let (model, ubar) = base();
    let t = Instant::now();
    let mut rows = Vec::new();
    for d in [8u64, 12, 16] {
        let cfg = BumpConfig::evenly_spaced(n, d).map_err(|e| e.to_string())?;
        let out = glue(ubar, &cfg, n as f64 * BUMP_MASS, model, GlueOptions::default())
            .map_err(|e| format!("n={n} d={d}: {e}"))?;
        let r = classify(&out.point.u, out.point.lambda, model, &SpectralOptions::default())
            .map_err(|e| e.to_string())?;
        rows.push((d, out, r.m, r.m_f));
    }
    Ok(Sweep {
        rows,
        secs: t.elapsed().as_secs_f64(),
    })
}

fn sweeps() -> &'static Result<(Sweep, Sweep), String> {
    static CELL: OnceLock<Result<(Sweep, Sweep), String>> = OnceLock::new();
    CELL.get_or_init(|| Ok((sweep(2)?, sweep(3)?)))
}

fn ac4() -> Outcome {
    let (s2, s3) = sweeps().as_ref().map_err(|e| e.clone())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (n, s) in [(2usize, s2), (3, s3)] {
        let ds: Vec<f64> = s.rows.iter().map(|r| r.0 as f64).collect();
        let logs: Vec<f64> = s.rows.iter().map(|r| r.1.distance_h1.ln()).collect();
        let (slope, _, r2) = linear_fit(&ds, &logs);
        let iters = s.rows.iter().map(|r| r.1.iterations).max().unwrap_or(0);
        let shifts: Vec<f64> = s.rows.iter().map(|r| r.1.lambda_shift).collect();
        let shrinking = shifts.windows(2).all(|w| w[1] < w[0]);
        let idx_ok = s.rows.iter().all(|r| r.2 == n - 1);
        let pos = s.rows.iter().all(|r| r.1.point.u.min() > 0.0);
        ok &= iters <= 10 && slope < 0.0 && r2 > 0.99 && shrinking && idx_ok && pos && s.secs < 120.0;
        parts.push(format!(
            "n={n}: iters<={iters}, log-distance slope {slope:.3} R2 {r2:.5}, |dlambda| {:?}, m {:?}, min>0 {pos}, {:.1}s",
            shifts.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>(),
            s.rows.iter().map(|r| r.2).collect::<Vec<_>>(),
            s.secs
        ));
    }
    check(ok, parts.join("; "))
}

fn ac5() -> Outcome {
    let (model, ubar) = base();
    let single = classify(&ubar.u, ubar.lambda, model, &SpectralOptions::default()).map_err(|e| e.to_string())?;
    let (s2, s3) = sweeps().as_ref().map_err(|e| e.clone())?;
    let mut ok = true;
    let mut parts = vec![format!("bump m={} m_f={}", single.m, single.m_f)];
    for (n, s) in [(2usize, s2), (3, s3)] {
        let last = s.rows.last().unwrap();
        let r = classify(&last.1.point.u, last.1.point.lambda, model, &SpectralOptions::default())
            .map_err(|e| e.to_string())?;
        let predicted = if r.z_dot_u < 0.0 { n * (single.m + 1) - 1 } else { n * single.m };
        ok &= r.m_f == n * single.m_f && r.m == predicted && r.z_dot_u < 0.0;
        parts.push(format!("p=4 n={n}: m_f={} m={} (z.u {:.3} -> {predicted})", r.m_f, r.m, r.z_dot_u));
    }
    let grid = GridSpec::aligned(30, 1440).unwrap();
    let pb = SemiclassicalProblem::new(grid, Potential::cosine(-0.25, 0.25), 8.0).map_err(|e| e.to_string())?;
    let fam = continue_family(&pb, &[0.25, 0.2, 0.15], RescaledOptions::default()).map_err(|e| e.to_string())?;
    let alpha = 2.0 * fam.members[1].unrescaled_mass();
    let sel = select_mass_epsilon(alpha, 2, &fam, 1e-12, RescaledOptions::default()).map_err(|e| e.to_string())?;
    let m8 = pb.model(sel.solution.eps);
    let b8 = &sel.solution.point;
    let one = classify(&b8.u, 0.0, &m8, &SpectralOptions::default()).map_err(|e| e.to_string())?;
    let cfg = BumpConfig::new(vec![-10, 10]).unwrap();
    let out = glue(b8, &cfg, 2.0 * b8.mass, &m8, GlueOptions::default()).map_err(|e| e.to_string())?;
    let r = classify(&out.point.u, out.point.lambda, &m8, &SpectralOptions::default()).map_err(|e| e.to_string())?;
    let predicted = if r.z_dot_u < 0.0 { 2 * (one.m + 1) - 1 } else { 2 * one.m };
    ok &= r.m_f == 2 * one.m_f && r.m == predicted && r.z_dot_u > 0.0 && r.m == 2;
    parts.push(format!(
        "p=8 eps={:.4} n=2: bump m={} m_f={}, glued m_f={} m={} (z.u {:.3} -> {predicted})",
        sel.solution.eps, one.m, one.m_f, r.m_f, r.m, r.z_dot_u
    ));
    check(ok, parts.join("; "))
}

fn ac6() -> Outcome {
    let grid = GridSpec::aligned(30, 1440).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, v) in [("min", Potential::cosine(-0.25, 0.25)), ("max", Potential::cosine(0.25, -0.25))] {
        let pb = SemiclassicalProblem::new(grid, v, 4.0).map_err(|e| e.to_string())?;
        let fam = continue_family(&pb, &[0.2, 0.1, 0.05], RescaledOptions::default()).map_err(|e| e.to_string())?;
        let rows = morse_check(&fam, &SpectralOptions::default()).map_err(|e| e.to_string())?;
        let usable: Vec<_> = rows.iter().filter(|r| !r.flagged).collect();
        ok &= !usable.is_empty() && usable.iter().all(|r| r.m_f == pb.m_v() + 1);
        let t = translation_mode_estimate(&fam).map_err(|e| e.to_string())?;
        let ratio = t.last().unwrap().ratio();
        ok &= (ratio - 1.0).abs() < 0.1;
        parts.push(format!(
            "V-{label} (m_V={}): m_f {:?} (flagged {}), ratio at eps=0.05 {ratio:.4}",
            pb.m_v(),
            rows.iter().map(|r| r.m_f).collect::<Vec<_>>(),
            rows.len() - usable.len()
        ));
    }
    check(ok, parts.join("; "))
}

fn soliton(p: f64) -> (Model, ConstrainedCriticalPoint) {
    let grid = GridSpec::new(20, 1024).unwrap();
    let model = Model::new(Potential::constant(1.0), Nonlinearity::power(p).unwrap());
    let u = limit_profile(grid, p, 2.0, 0.0).unwrap();
    let mass = u.mass();
    let pt = ConstrainedCriticalPoint::evaluate(u, -1.0, mass, &model);
    (model, pt)
}

fn ac7() -> Outcome {
    let (model, phi) = soliton(8.0);
    let inst = instability_eigenvalue(&phi, &model, &SpectralOptions::default()).map_err(|e| e.to_string())?;
    let hard = inst.rho > 0.0 && inst.residual < 1e-8;
    let psi0 = seed_mode(&phi.u, &inst.v, &inst.w2, 1e-5).map_err(|e| e.to_string())?;
    let opts = PropagateOptions {
        dt: 1e-4,
        t_end: 40.0,
        record_stride: 100,
        stop_distance: Some(5e-2),
        ..Default::default()
    };
    let tr = propagate(&psi0, &model, &opts, Some((&phi.u, phi.lambda))).map_err(|e| e.to_string())?;
    let exit = tr.exit_time(1e-2);
    let window = linear_regime_window(&tr, 1e-4, 1e-2).ok_or("no linear regime")?;
    let fit = growth_rate_fit(&tr, window).map_err(|e| e.to_string())?;
    let heuristic = (fit.rate - inst.rho).abs() <= 0.15 * inst.rho;

    let (m4, phi4) = soliton(4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = random_smooth_field(phi4.u.grid(), 8.0, &mut rng);
    let psi4 = seed_perturbation(&phi4.u, &noise, 1e-5);
    let d0 = orbit_distance(&psi4, &phi4.u, phi4.lambda);
    let opts4 = PropagateOptions {
        dt: 1e-3,
        t_end: 50.0,
        record_stride: 100,
        ..Default::default()
    };
    let tr4 = propagate(&psi4, &m4, &opts4, Some((&phi4.u, phi4.lambda))).map_err(|e| e.to_string())?;
    let worst4 = tr4.points.iter().fold(0.0f64, |a, p| a.max(p.orbit_distance));
    let stable = tr4.exit_time(1e-2).is_none();
    check(
        hard && heuristic && stable && exit.is_some_and(|t| t < 40.0),
        format!(
            "rho {:.6}, residual {:.1e}; growth fit {:.6} (R2 {:.6}, {:+.2}%, heuristic), exit t={:?}; p=4 control max distance {worst4:.2e} from {d0:.2e}",
            inst.rho,
            inst.residual,
            fit.rate,
            fit.r_squared,
            100.0 * (fit.rate / inst.rho - 1.0),
            exit
        ),
    )
}

fn ac8() -> Outcome {
    let grid = GridSpec::aligned(16, 512).unwrap();
    let pot = Potential::cosine(0.5, 0.2);
    let model = Model::new(pot.clone(), Nonlinearity::power(4.0).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_grad: f64 = 0.0;
    let mut worst_form: f64 = 0.0;
    for _ in 0..20 {
        let u = random_smooth_field(grid, 6.0, &mut rng);
        let v = random_smooth_field(grid, 8.0, &mut rng);
        let lambda: f64 = rng.random_range(-1.0..0.5);
        let g = model.h1_gradient(&u).map_err(|e| e.to_string())?;
        let sr = model.resolvent(&model.l2_residual(&u, 0.0), 0.0).map_err(|e| e.to_string())?;
        worst_grad = worst_grad.max(g.sub(&sr).sup_norm() / sr.sup_norm().max(1.0));
        let op = LinearizedOperator::at(&u, lambda, &model);
        let a = inner_l2(&op.apply_field(&v), &v).unwrap();
        let b = model.hessian_form(&u, lambda, &v, &v);
        worst_form = worst_form.max((a - b).abs() / b.abs().max(1.0));
    }
    let u = random_smooth_field(grid, 6.0, &mut rng);
    let v = random_smooth_field(grid, 8.0, &mut rng);
    let w = random_smooth_field(grid, 8.0, &mut rng);
    let lambda = -0.3;
    let grad = inner_h1v(&model.h1_gradient(&u).unwrap(), &v, &pot).unwrap();
    let hess = model.hessian_form(&u, lambda, &v, &w);
    let fd_err = |s: f64| {
        let e = |t: f64| model.energy(&u.lin_comb(1.0, &v, t)) - 0.5 * lambda * u.lin_comb(1.0, &v, t).mass();
        let e0 = (e(s) - e(-s)) / (2.0 * s) + lambda * inner_l2(&u, &v).unwrap();
        let r = |t: f64| inner_l2(&model.l2_residual(&u.lin_comb(1.0, &v, t), lambda), &w).unwrap();
        let h0 = (r(s) - r(-s)) / (2.0 * s);
        ((e0 - grad).abs(), (h0 - hess).abs())
    };
    let (g1, h1) = fd_err(1e-2);
    let (g2, h2) = fd_err(5e-3);
    let (rg, rh) = (g1 / g2, h1 / h2);
    let order_ok = (3.5..4.5).contains(&rg) && (3.5..4.5).contains(&rh);
    check(
        worst_grad < 1e-9 && worst_form < 1e-9 && order_ok,
        format!(
            "max gradient gap {worst_grad:.1e}, max form gap {worst_form:.1e}; FD error ratios at step halving: gradient {rg:.3}, Hessian {rh:.3}"
        ),
    )
}

fn ac9() -> Outcome {
    let (model, ubar) = base();
    let alpha = 2.0 * BUMP_MASS;
    let cfg = BumpConfig::evenly_spaced(2, 16).unwrap();
    let v = superpose(&ubar.u, &cfg).map_err(|e| e.to_string())?;
    let copts = CertificateOptions {
        delta: 0.1,
        q: 0.5,
        samples: 4,
        seed: 3,
    };
    let rep = shadowing_certificate(
        &ExtendedPoint {
            u: v.clone(),
            lambda: ubar.lambda,
        },
        alpha,
        model,
        copts,
    )
    .map_err(|e| e.to_string())?;
    let reference = glue(ubar, &cfg, alpha, model, GlueOptions::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let dir = random_smooth_field(v.grid(), 10.0, &mut rng);
        let dmu: f64 = rng.random_range(-1.0..1.0);
        let n = (inner_h1v(&dir, &dir, &model.potential).unwrap() + dmu * dmu).sqrt();
        let r = 0.5 * rep.delta;
        let start = v.lin_comb(1.0, &dir, r / n);
        let out = newton_extended(&start, ubar.lambda + r * dmu / n, alpha, model, NewtonOptions::default(), Some(16))
            .map_err(|e| e.to_string())?;
        worst = worst
            .max(out.point.u.sub(&reference.point.u).sup_norm())
            .max((out.point.lambda - reference.point.lambda).abs());
    }
    check(
        rep.all_hold() && worst < 1e-8,
        format!(
            "certificate holds {} (delta {}, |h| {:.1e}, |T^-1| {:.2}); 5 restarts at radius delta/2 agree to {worst:.1e}",
            rep.all_hold(),
            rep.delta,
            rep.residual_norm,
            rep.inverse_norm
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("AC1 closed-form soliton", ac1),
        ("AC2 Poschl-Teller anchor", ac2),
        ("AC3 criterion value and sign flip", ac3),
        ("AC4 gluing sweep", ac4),
        ("AC5 index formulas", ac5),
        ("AC6 semiclassical Morse counts", ac6),
        ("AC7 instability", ac7),
        ("AC8 cross-representation identities", ac8),
        ("AC9 uniqueness in the ball", ac9),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("PASS {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d} [{secs:.1}s]");
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
