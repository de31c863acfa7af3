use rand::SeedableRng;
use multibump::dynamics::{
    growth_rate_fit, linear_regime_window, orbit_distance, propagate, seed_mode, seed_perturbation, ComplexField,
    PropagateOptions,
};
use multibump::spectra::{instability_eigenvalue, SpectralOptions};
use multibump::stationary::{limit_profile, ConstrainedCriticalPoint};
use multibump::grid::random_smooth_field;
use multibump::{Error, Field, GridSpec, Model, Nonlinearity, Potential};

fn soliton(p: f64, lambda: f64) -> (Model, ConstrainedCriticalPoint) {
    let grid = GridSpec::new(20, 1024).unwrap();
    let model = Model::new(Potential::constant(1.0), Nonlinearity::power(p).unwrap());
    let u = limit_profile(grid, p, 1.0 - lambda, 0.0).unwrap();
    let mass = u.mass();
    let pt = ConstrainedCriticalPoint::evaluate(u, lambda, mass, &model);
    (model, pt)
}

#[test]
fn supercritical_soliton_has_a_real_unstable_eigenvalue() {
    let (model, phi) = soliton(8.0, -1.0);
    let inst = instability_eigenvalue(&phi, &model, &SpectralOptions::default()).unwrap();
    println!("rho = {} residual = {:e}", inst.rho, inst.residual);
    assert!(inst.rho > 0.0);
    assert!(inst.residual < 1e-8);
    assert!(inst.kernel_residual < 1e-6);
    assert!(inst.l2_positivity > 0.0);
}

#[test]
fn subcritical_soliton_has_no_instability() {
    let (model, phi) = soliton(4.0, -1.0);
    let err = instability_eigenvalue(&phi, &model, &SpectralOptions::default()).unwrap_err();
    assert!(matches!(err, Error::NoInstability { .. }), "{err}");
}

#[test]
fn sign_changing_profile_is_rejected() {
    let (model, phi) = soliton(8.0, -1.0);
    let g = phi.u.grid();
    let bad = phi.u.lin_comb(1.0, &Field::from_fn(g, |x| x.sin()).unwrap(), 1.0);
    let pt = ConstrainedCriticalPoint::evaluate(bad, phi.lambda, phi.mass, &model);
    assert!(matches!(
        instability_eigenvalue(&pt, &model, &SpectralOptions::default()),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn standing_wave_stays_on_its_orbit() {
    let (model, phi) = soliton(4.0, -1.0);
    let opts = PropagateOptions {
        dt: 2e-4,
        t_end: 20.0,
        record_stride: 500,
        ..Default::default()
    };
    let tr = propagate(&ComplexField::from_real(&phi.u), &model, &opts, Some((&phi.u, phi.lambda))).unwrap();
    let worst = tr.points.iter().fold(0.0f64, |a, p| a.max(p.orbit_distance));
    println!("max orbit distance {worst:e}, energy drift {:e}", tr.max_energy_drift());
    assert!(worst < 1e-6);
    assert!(tr.max_mass_drift() < 1e-10);
    assert!(tr.max_energy_drift() < 1e-8);
}

#[test]
fn energy_drift_is_second_order_in_dt() {
    let (model, phi) = soliton(4.0, -1.0);
    let psi = seed_perturbation(&phi.u, &Field::from_fn(phi.u.grid(), |x| (-x * x).exp()).unwrap(), 0.05);
    let drift = |dt: f64| {
        let opts = PropagateOptions {
            dt,
            t_end: 1.0,
            record_stride: 1,
            ..Default::default()
        };
        propagate(&psi, &model, &opts, None).unwrap().max_energy_drift()
    };
    let (a, b) = (drift(0.01), drift(0.005));
    println!("drift ratio {}", a / b);
    assert!(a / b > 3.0 && a / b < 5.0);
}

#[test]
fn unstable_soliton_leaves_and_stable_one_stays() {
    let (model, phi) = soliton(8.0, -1.0);
    let inst = instability_eigenvalue(&phi, &model, &SpectralOptions::default()).unwrap();
    let psi0 = seed_mode(&phi.u, &inst.v, &inst.w2, 1e-5).unwrap();
    let opts = PropagateOptions {
        dt: 1e-4,
        t_end: 40.0,
        record_stride: 100,
        stop_distance: Some(5e-2),
        ..Default::default()
    };
    let tr = propagate(&psi0, &model, &opts, Some((&phi.u, phi.lambda))).unwrap();
    let exit = tr.exit_time(1e-2);
    let window = linear_regime_window(&tr, 1e-4, 1e-2).unwrap();
    let fit = growth_rate_fit(&tr, window).unwrap();
    println!("rho {} fit {:?} exit {exit:?}", inst.rho, fit);
    assert!(exit.unwrap() < 40.0);
    assert!((fit.rate - inst.rho).abs() <= 0.15 * inst.rho);

    let (model4, phi4) = soliton(4.0, -1.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let noise = random_smooth_field(phi4.u.grid(), 8.0, &mut rng);
    let psi0 = seed_perturbation(&phi4.u, &noise, 1e-5);
    let d0 = orbit_distance(&psi0, &phi4.u, phi4.lambda);
    let opts = PropagateOptions {
        dt: 1e-3,
        t_end: 50.0,
        record_stride: 100,
        ..Default::default()
    };
    let tr = propagate(&psi0, &model4, &opts, Some((&phi4.u, phi4.lambda))).unwrap();
    let worst = tr.points.iter().fold(0.0f64, |a, p| a.max(p.orbit_distance));
    println!("p=4 initial {d0:e} max {worst:e}");
    assert!(tr.exit_time(1e-2).is_none());
    assert!(worst < 1e-3);
}

