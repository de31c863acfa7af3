use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use multibump::dynamics::{
    growth_rate_fit, linear_regime_window, propagate, seed_mode, seed_perturbation, ComplexField, PropagateOptions,
};
use multibump::gluing::{glue as glue_bumps, BumpConfig, GlueOptions, GlueResult, NewtonOptions};
use multibump::grid::random_smooth_field;
use multibump::io::{self, num, write_complex_field_binary, write_eigenvalues, write_trajectory};
use multibump::semiclassical::{
    continue_family, criterion_value, h2_rate_table, morse_check, select_mass_epsilon, translation_mode_estimate,
    z_eps_check, RescaledOptions, SemiclassicalProblem,
};
use multibump::spectra::{classify, instability_eigenvalue, SpectralOptions, SpectralReport};
use multibump::stationary::{local_minimizer, soliton_of_mass, ConstrainedCriticalPoint, FlowOptions};
use multibump::{Error, Field, Model};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{RunConfig, Seeding};
use crate::output::{io_err, opt_num, read_json, write_report, write_table};
use crate::{CliError, Context};

fn spectral_options(cfg: &RunConfig) -> SpectralOptions {
    SpectralOptions {
        zero_threshold_rel: cfg.solver.zero_threshold_rel,
        ..Default::default()
    }
}

fn newton_options(cfg: &RunConfig) -> NewtonOptions {
    NewtonOptions {
        tol: cfg.solver.newton_tol,
        max_iter: cfg.solver.newton_max_iter,
        ..Default::default()
    }
}

fn glue_options(cfg: &RunConfig) -> GlueOptions {
    GlueOptions {
        newton: newton_options(cfg),
        ..Default::default()
    }
}

fn bump_mass(cfg: &RunConfig) -> f64 {
    cfg.mass / cfg.bumps.n as f64
}

fn write_fields(ctx: &Context, stem: &str, u: &Field) -> Result<(), CliError> {
    io::write_field(&ctx.out.join(format!("{stem}.csv")), u).map_err(io_err)?;
    io::write_field(&ctx.out.join(format!("{stem}.bin")), u).map_err(io_err)
}

fn write_spectrum_tables(ctx: &Context, stem: &str, r: &SpectralReport) -> Result<(), CliError> {
    let free = BufWriter::new(File::create(ctx.out.join(format!("{stem}_free.csv"))).map_err(io_err)?);
    write_eigenvalues(free, &r.free.lowest).map_err(io_err)?;
    let cons = BufWriter::new(File::create(ctx.out.join(format!("{stem}_constrained.csv"))).map_err(io_err)?);
    write_eigenvalues(cons, &r.constrained.lowest).map_err(io_err)
}

/// Single bump of mass alpha: closed form for constant V, flow plus Newton otherwise.
fn solve_bump(cfg: &RunConfig, model: &Model, p: f64, alpha: f64) -> Result<(ConstrainedCriticalPoint, &'static str), CliError> {
    let grid = cfg.grid();
    let model = Model::new(model.potential.clone(), cfg.nonlinearity_with(p));
    if model.potential.is_constant() && !cfg.nonlinearity.linear {
        return Ok((soliton_of_mass(grid, &model, alpha, cfg.bumps.center)?, "closed_form"));
    }
    let flow = FlowOptions {
        tol: cfg.solver.flow_tol,
        max_iter: cfg.solver.flow_max_iter,
        ..Default::default()
    };
    let pt = local_minimizer(grid, &model, alpha, cfg.bumps.center, flow, newton_options(cfg))?;
    Ok((pt, "flow_newton"))
}

pub fn groundstate(ctx: &Context) -> Result<ConstrainedCriticalPoint, CliError> {
    let cfg = &ctx.cfg;
    let model = cfg.model();
    let (pt, method) = solve_bump(cfg, &model, cfg.nonlinearity.p, bump_mass(cfg))?;
    write_fields(ctx, "groundstate", &pt.u)?;
    let report = classify(&pt.u, pt.lambda, &model, &spectral_options(cfg))?;
    write_spectrum_tables(ctx, "groundstate_eigenvalues", &report)?;
    let s = pt.summary(&model);
    write_report(
        ctx,
        "groundstate",
        "groundstate.json",
        json!({
            "lambda": s.lambda,
            "mass": s.mass,
            "residual": s.residual,
            "energy": s.energy,
            "constraint_violation": s.constraint_violation,
            "peak": s.peak,
            "min_value": s.min_value,
            "method": method,
            "field_file": "groundstate.csv",
            "field_binary": "groundstate.bin",
            "spectral": report,
        }),
    )?;
    Ok(pt)
}

/// The ground state written by an earlier run on the same config, or a fresh one.
fn base_point(ctx: &Context) -> Result<ConstrainedCriticalPoint, CliError> {
    let model = ctx.cfg.model();
    if let Some(v) = read_json(&ctx.out.join("groundstate.json")) {
        let same = v["meta"]["config_sha256"].as_str() == Some(ctx.config_hash.as_str());
        if let (true, Some(lambda)) = (same, v["lambda"].as_f64()) {
            if let Ok(u) = io::read_field(&ctx.out.join("groundstate.bin")) {
                if u.grid() == ctx.cfg.grid() {
                    return Ok(ConstrainedCriticalPoint::evaluate(u, lambda, bump_mass(&ctx.cfg), &model));
                }
            }
        }
    }
    groundstate(ctx)
}

fn configurations(cfg: &RunConfig, n: usize) -> Result<Vec<BumpConfig>, CliError> {
    if n == cfg.bumps.n && !cfg.bumps.offsets.is_empty() {
        return Ok(vec![BumpConfig::new(cfg.bumps.offsets.clone())?]);
    }
    if cfg.bumps.separations.is_empty() {
        return Err(CliError::Config("bumps.separations or bumps.offsets must be given".into()));
    }
    cfg.bumps
        .separations
        .iter()
        .map(|&d| BumpConfig::evenly_spaced(n, d).map_err(CliError::from))
        .collect()
}

struct GlueRow {
    cfg: BumpConfig,
    outcome: Result<(GlueResult, SpectralReport), Error>,
}

fn glue_one(ubar: &ConstrainedCriticalPoint, bc: &BumpConfig, model: &Model, cfg: &RunConfig) -> GlueRow {
    let alpha = bc.n() as f64 * ubar.mass;
    let outcome = glue_bumps(ubar, bc, alpha, model, glue_options(cfg)).and_then(|g| {
        let r = classify(&g.point.u, g.point.lambda, model, &spectral_options(cfg))?;
        Ok((g, r))
    });
    GlueRow { cfg: bc.clone(), outcome }
}

fn label(bc: &BumpConfig) -> String {
    match bc.separation() {
        Some(d) => format!("n{}_d{d}", bc.n()),
        None => format!(
            "n{}_a{}",
            bc.n(),
            bc.offsets().iter().map(|a| a.to_string()).collect::<Vec<_>>().join("_")
        ),
    }
}

fn offsets_cell(bc: &BumpConfig) -> String {
    bc.offsets().iter().map(|a| a.to_string()).collect::<Vec<_>>().join(";")
}

const GLUE_HEADER: [&str; 13] = [
    "n",
    "d",
    "offsets",
    "newton_iters",
    "distance_h1",
    "lambda_shift",
    "sigma_min",
    "m",
    "m_f",
    "z_dot_u",
    "classification",
    "residual",
    "status",
];

fn glue_cells(row: &GlueRow) -> Vec<String> {
    let mut cells = vec![
        row.cfg.n().to_string(),
        row.cfg.separation().map(|d| d.to_string()).unwrap_or_default(),
        offsets_cell(&row.cfg),
    ];
    match &row.outcome {
        Ok((g, r)) => cells.extend([
            g.iterations.to_string(),
            num(g.distance_h1),
            num(g.lambda_shift),
            num(g.sigma_min),
            r.m.to_string(),
            r.m_f.to_string(),
            num(r.z_dot_u),
            serde_json::to_value(r.classification)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            num(g.point.residual),
            "ok".into(),
        ]),
        Err(e) => {
            let iters = match e {
                Error::GluingFailed { residuals, .. } => residuals.len().saturating_sub(1).to_string(),
                _ => String::new(),
            };
            cells.push(iters);
            cells.extend(std::iter::repeat_n(String::new(), 8));
            cells.push(format!("failed: {}", e.to_string().replace(',', ";")));
        }
    }
    cells
}

fn write_glue_point(ctx: &Context, command: &str, row: &GlueRow, base_lambda: f64) -> Result<(), CliError> {
    let Ok((g, r)) = &row.outcome else {
        return Ok(());
    };
    let stem = format!("glue_{}", label(&row.cfg));
    io::write_field(&ctx.out.join(format!("{stem}.bin")), &g.point.u).map_err(io_err)?;
    write_report(
        ctx,
        command,
        &format!("{stem}.json"),
        json!({
            "offsets": row.cfg.offsets(),
            "lambda": g.point.lambda,
            "base_lambda": base_lambda,
            "mass": g.point.mass,
            "residual": g.point.residual,
            "constraint_violation": g.point.constraint_violation,
            "min_value": g.point.u.min(),
            "newton_iters": g.iterations,
            "residual_history": g.residual_history,
            "distance_h1": g.distance_h1,
            "lambda_shift": g.lambda_shift,
            "sigma_min": g.sigma_min,
            "operator_norm": g.operator_norm,
            "field_binary": format!("{stem}.bin"),
            "spectral": r,
        }),
    )
}

pub fn glue(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let model = cfg.model();
    let ubar = base_point(ctx)?;
    let configs = configurations(cfg, cfg.bumps.n)?;
    let rows: Vec<GlueRow> = ctx
        .pool()?
        .install(|| configs.par_iter().map(|bc| glue_one(&ubar, bc, &model, cfg)).collect());
    write_table(ctx, "glue_sweep.csv", &GLUE_HEADER, rows.iter().map(glue_cells).collect())?;
    for row in &rows {
        write_glue_point(ctx, "glue", row, ubar.lambda)?;
    }
    let ok = rows.iter().filter(|r| r.outcome.is_ok()).count();
    write_report(
        ctx,
        "glue",
        "glue.json",
        json!({
            "base_lambda": ubar.lambda,
            "bump_mass": ubar.mass,
            "n": cfg.bumps.n,
            "configurations": rows.len(),
            "succeeded": ok,
            "table": "glue_sweep.csv",
        }),
    )?;
    if ok == 0 {
        let first = rows.into_iter().find_map(|r| r.outcome.err());
        return Err(first.map(CliError::from).unwrap_or_else(|| CliError::Solver("no configuration".into())));
    }
    Ok(())
}

/// Field from file with its multiplier; the residual must be below the configured tolerance.
fn checked_point(ctx: &Context, path: &Path, lambda: Option<f64>) -> Result<(ConstrainedCriticalPoint, Model), CliError> {
    let model = ctx.cfg.model();
    let u = io::read_field(path).map_err(|e| match e {
        Error::Io(io) => CliError::Precondition(format!("cannot read {}: {io}", path.display())),
        other => CliError::from(other),
    })?;
    let lambda = lambda.unwrap_or_else(|| model.lagrange_multiplier(&u));
    let mass = u.mass();
    let pt = ConstrainedCriticalPoint::evaluate(u, lambda, mass, &model);
    if !(pt.residual <= ctx.cfg.solver.residual_tol) {
        return Err(CliError::Precondition(format!(
            "field residual {:e} exceeds residual_tol {:e}",
            pt.residual, ctx.cfg.solver.residual_tol
        )));
    }
    Ok((pt, model))
}

pub fn spectrum(ctx: &Context, field: &Path, lambda: Option<f64>) -> Result<(), CliError> {
    let (pt, model) = checked_point(ctx, field, lambda)?;
    let report = classify(&pt.u, pt.lambda, &model, &spectral_options(&ctx.cfg))?;
    write_spectrum_tables(ctx, "spectrum_eigenvalues", &report)?;
    write_report(
        ctx,
        "spectrum",
        "spectrum.json",
        json!({
            "field": field.file_name().map(|s| s.to_string_lossy().into_owned()),
            "lambda": pt.lambda,
            "mass": pt.mass,
            "residual": pt.residual,
            "spectral": report,
        }),
    )
}

pub fn evolve(ctx: &Context, field: Option<&Path>) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let dy = &cfg.dynamics;
    let (phi, model) = match field {
        Some(path) => checked_point(ctx, path, None)?,
        None => (base_point(ctx)?, cfg.model()),
    };
    let instability = instability_eigenvalue(&phi, &model, &spectral_options(cfg));
    let psi0 = match dy.seeding {
        Seeding::None => ComplexField::from_real(&phi.u),
        Seeding::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(dy.seed);
            let w = random_smooth_field(phi.u.grid(), 8.0, &mut rng);
            let w = w.scale(1.0 / w.mass().sqrt());
            seed_perturbation(&phi.u, &w, dy.amplitude)
        }
        Seeding::Eigenvector => {
            let inst = instability.as_ref().map_err(|e| CliError::Precondition(e.to_string()))?;
            seed_mode(&phi.u, &inst.v, &inst.w2, dy.amplitude)?
        }
    };
    let opts = PropagateOptions {
        dt: dy.dt,
        t_end: dy.t_end,
        record_stride: dy.record_stride,
        snapshot_stride: ctx.snapshot_stride,
        stop_distance: dy.stop_distance,
        ..Default::default()
    };
    let traj = propagate(&psi0, &model, &opts, Some((&phi.u, phi.lambda)))?;
    write_trajectory(BufWriter::new(File::create(ctx.out.join("trajectory.csv")).map_err(io_err)?), &traj)
        .map_err(io_err)?;
    let mut snapshots = Vec::new();
    for (k, (t, psi)) in traj.snapshots.iter().enumerate() {
        let name = format!("snapshot_{k:05}.bin");
        write_complex_field_binary(BufWriter::new(File::create(ctx.out.join(&name)).map_err(io_err)?), psi)
            .map_err(io_err)?;
        snapshots.push(json!({"t": t, "file": name}));
    }
    let rho = instability.as_ref().ok().map(|i| i.rho);
    let fit = linear_regime_window(&traj, 1e-4, dy.exit_level.max(2e-3))
        .map(|w| growth_rate_fit(&traj, w))
        .transpose()
        .ok()
        .flatten();
    let max_distance = traj.points.iter().fold(0.0f64, |a, p| a.max(p.orbit_distance));
    let last = traj.points.last().map(|p| p.t).unwrap_or(0.0);
    write_report(
        ctx,
        "evolve",
        "evolve.json",
        json!({
            "lambda": phi.lambda,
            "residual": phi.residual,
            "seeding": dy.seeding,
            "amplitude": dy.amplitude,
            "dt": dy.dt,
            "t_end": dy.t_end,
            "t_final": last,
            "stopped_early": last + 0.5 * dy.dt < dy.t_end,
            "instability": instability.as_ref().ok().map(|i| i.summary()),
            "instability_error": instability.as_ref().err().map(|e| e.to_string()),
            "growth_fit": fit,
            "growth_relative_error": match (fit, rho) {
                (Some(f), Some(r)) => Some((f.rate - r) / r),
                _ => None,
            },
            "exit_level": dy.exit_level,
            "exit_time": traj.exit_time(dy.exit_level),
            "max_orbit_distance": max_distance,
            "max_mass_drift": traj.max_mass_drift(),
            "max_energy_drift": traj.max_energy_drift(),
            "trajectory": "trajectory.csv",
            "snapshots": snapshots,
        }),
    )
}

pub fn semiclassical(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let sc = cfg
        .semiclassical
        .as_ref()
        .ok_or_else(|| CliError::Config("the [semiclassical] table is required".into()))?;
    let opts = spectral_options(cfg);
    let ropts = RescaledOptions {
        tol: cfg.solver.newton_tol.max(1e-10),
        max_iter: cfg.solver.newton_max_iter,
        ..Default::default()
    };
    let p = cfg.nonlinearity.p;
    let pb = SemiclassicalProblem::new(cfg.grid(), cfg.potential(), p)?;
    let family = continue_family(&pb, &sc.eps_list, ropts)?;
    let z = match z_eps_check(&family, &opts) {
        Ok(z) => z,
        Err(Error::CriticalExponent { .. }) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let trans = translation_mode_estimate(&family)?;
    let morse = morse_check(&family, &opts)?;
    let rates = h2_rate_table(&family)?;
    let rows = family
        .members
        .iter()
        .enumerate()
        .map(|(k, m)| {
            vec![
                num(m.eps),
                num(m.unrescaled_mass()),
                num(trans[k].peak),
                morse[k].m.to_string(),
                morse[k].m_f.to_string(),
                opt_num(z.get(k).and_then(|r| r.z_dot_u)),
                num(trans[k].ratio()),
            ]
        })
        .collect();
    write_table(
        ctx,
        "family.csv",
        &["eps", "mass", "x_eps", "m", "m_f", "z_dot_u", "rayleigh_ratio"],
        rows,
    )?;
    write_table(
        ctx,
        "morse.csv",
        &["eps", "m", "m_f", "expected_m", "expected_m_f", "flagged", "matches"],
        morse
            .iter()
            .map(|r| {
                vec![
                    num(r.eps),
                    r.m.to_string(),
                    r.m_f.to_string(),
                    r.expected_m.to_string(),
                    r.expected_m_f.to_string(),
                    r.flagged.to_string(),
                    r.matches().to_string(),
                ]
            })
            .collect(),
    )?;
    write_table(
        ctx,
        "rates.csv",
        &["eps", "h2_distance", "scaled"],
        rates.iter().map(|r| vec![num(r.eps), num(r.h2_distance), num(r.scaled)]).collect(),
    )?;
    let criterion = match criterion_value(cfg.grid(), p) {
        Ok(c) => json!({
            "p": c.p,
            "numeric": c.numeric,
            "analytic": c.analytic,
            "mass": c.mass,
            "relative_error": c.relative_error(),
            "positive": c.numeric > 0.0,
            "p_above_six": p > 6.0,
        }),
        Err(Error::CriticalExponent { .. }) => Value::Null,
        Err(e) => return Err(e.into()),
    };
    let glued = match sc.glue_n {
        Some(n) => Some(semiclassical_glue(ctx, &family, n, &sc.glue_offsets, ropts)?),
        None => None,
    };
    write_report(
        ctx,
        "semiclassical",
        "semiclassical.json",
        json!({
            "p": p,
            "m_v": pb.m_v(),
            "curvature": pb.curvature(),
            "criterion": criterion,
            "z_rows": z,
            "morse_all_match": morse.iter().all(|r| r.matches()),
            "family": "family.csv",
            "glue": glued,
        }),
    )
}

fn semiclassical_glue(
    ctx: &Context,
    family: &multibump::semiclassical::EpsilonFamily,
    n: usize,
    offsets: &[i64],
    ropts: RescaledOptions,
) -> Result<Value, CliError> {
    let cfg = &ctx.cfg;
    let opts = spectral_options(cfg);
    let sel = select_mass_epsilon(cfg.mass, n, family, 1e-12, ropts)?;
    let model = family.problem.model(sel.solution.eps);
    let base = &sel.solution.point;
    let single = classify(&base.u, base.lambda, &model, &opts)?;
    let bc = BumpConfig::new(offsets.to_vec())?;
    let g = glue_bumps(base, &bc, n as f64 * base.mass, &model, glue_options(cfg))?;
    let r = classify(&g.point.u, g.point.lambda, &model, &opts)?;
    io::write_field(&ctx.out.join("semiclassical_glue.bin"), &g.point.u).map_err(io_err)?;
    let m_v = family.problem.m_v();
    let predicted_m = if family.problem.nonlinearity.is_mass_subcritical() {
        n * (m_v + 1) - 1
    } else {
        n * (m_v + 1)
    };
    Ok(json!({
        "eps": sel.solution.eps,
        "secant_steps": sel.secant_steps,
        "bump_mass_unrescaled": sel.solution.unrescaled_mass(),
        "offsets": offsets,
        "bump": {"m": single.m, "m_f": single.m_f, "z_dot_u": single.z_dot_u},
        "newton_iters": g.iterations,
        "residual": g.point.residual,
        "lambda": g.point.lambda,
        "m": r.m,
        "m_f": r.m_f,
        "z_dot_u": r.z_dot_u,
        "classification": r.classification,
        "predicted_m": predicted_m,
        "predicted_m_f": n * (m_v + 1),
        "matches": r.m == predicted_m && r.m_f == n * (m_v + 1),
        "field_binary": "semiclassical_glue.bin",
    }))
}

pub fn sweep(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let sw = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("the [sweep] table is required".into()))?;
    let counts = if sw.counts.is_empty() { vec![cfg.bumps.n] } else { sw.counts.clone() };
    let model = cfg.model();
    let alpha = bump_mass(cfg);
    let pool = ctx.pool()?;
    let bases: Vec<Result<(ConstrainedCriticalPoint, SpectralReport, Model), Error>> = pool.install(|| {
        sw.exponents
            .par_iter()
            .map(|&p| {
                let m = Model::new(model.potential.clone(), cfg.nonlinearity_with(p));
                let (pt, _) = solve_bump(cfg, &m, p, alpha).map_err(|e| Error::Precondition(e.to_string()))?;
                let r = classify(&pt.u, pt.lambda, &m, &spectral_options(cfg))?;
                Ok((pt, r, m))
            })
            .collect()
    });
    let mut jobs = Vec::new();
    for (k, _) in sw.exponents.iter().enumerate() {
        for &n in &counts {
            for bc in configurations(cfg, n)? {
                jobs.push((k, bc));
            }
        }
    }
    let rows: Vec<Option<GlueRow>> = pool.install(|| {
        jobs.par_iter()
            .map(|(k, bc)| bases[*k].as_ref().ok().map(|(pt, _, m)| glue_one(pt, bc, m, cfg)))
            .collect()
    });
    let mut header = vec!["p", "bump_m", "bump_m_f", "bump_z_dot_u", "predicted_m"];
    header.extend(GLUE_HEADER);
    let mut table = Vec::new();
    let mut ok = 0;
    for ((k, bc), row) in jobs.iter().zip(&rows) {
        let p = sw.exponents[*k];
        let mut cells = vec![num(p)];
        match (&bases[*k], row) {
            (Ok((_, r, _)), Some(row)) => {
                let predicted = if r.z_dot_u < 0.0 { bc.n() * (r.m + 1) - 1 } else { bc.n() * r.m };
                cells.extend([r.m.to_string(), r.m_f.to_string(), num(r.z_dot_u), predicted.to_string()]);
                cells.extend(glue_cells(row));
                ok += usize::from(row.outcome.is_ok());
            }
            (base, _) => {
                let msg = base.as_ref().err().map(|e| e.to_string()).unwrap_or_default();
                cells.extend(std::iter::repeat_n(String::new(), 4));
                cells.extend([bc.n().to_string(), opt_num(bc.separation().map(|d| d as f64)), offsets_cell(bc)]);
                cells.extend(std::iter::repeat_n(String::new(), GLUE_HEADER.len() - 4));
                cells.push(format!("failed: base point: {}", msg.replace(',', ";")));
            }
        }
        table.push(cells);
    }
    write_table(ctx, "sweep.csv", &header, table)?;
    write_report(
        ctx,
        "sweep",
        "sweep.json",
        json!({
            "exponents": sw.exponents,
            "counts": counts,
            "bump_mass": alpha,
            "bases": bases.iter().zip(&sw.exponents).map(|(b, p)| match b {
                Ok((pt, r, _)) => json!({"p": p, "lambda": pt.lambda, "residual": pt.residual, "m": r.m, "m_f": r.m_f, "z_dot_u": r.z_dot_u}),
                Err(e) => json!({"p": p, "error": e.to_string()}),
            }).collect::<Vec<_>>(),
            "configurations": jobs.len(),
            "succeeded": ok,
            "table": "sweep.csv",
        }),
    )?;
    if ok == 0 {
        return Err(CliError::Solver("no sweep configuration succeeded".into()));
    }
    Ok(())
}
