use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_multibump"));
    c.env_remove("MULTIBUMP_OUT");
    c
}

fn reference(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\n{}", o.status, String::from_utf8_lossy(&o.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn column(table: &[Vec<String>], name: &str) -> Vec<String> {
    let k = table[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    table[1..].iter().map(|r| r[k].clone()).collect()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn sech_regression_is_exact_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&["groundstate"], &reference("sech.toml"), &a));
    ok(&run(&["groundstate"], &reference("sech.toml"), &b));
    let g = json(&a.join("groundstate.json"));
    assert!(g["residual"].as_f64().unwrap() < 1e-8, "{g}");
    assert!(g["lambda"].as_f64().unwrap().abs() < 1e-12);
    assert!((g["peak"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(g["meta"]["config_sha256"].as_str().unwrap().len(), 64);
    assert!(g["meta"]["versions"]["multibump"].is_string());
    for f in ["groundstate.json", "groundstate.csv", "groundstate.bin", "groundstate_eigenvalues_free.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn invalid_configs_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(reference("sech.toml")).unwrap();
    for bad in [
        text.replace("p = 4.0", "p = 2.0"),
        text.replace("p = 4.0", "p = 1.5"),
        text.replace("M = 1200", "M = 1201"),
        format!("{text}\n[solver]\nnewton_tolerance = 1e-9\n"),
    ] {
        let cfg = write_config(dir.path(), &bad);
        let o = run(&["groundstate"], &cfg, &dir.path().join("out"));
        assert_eq!(o.status.code(), Some(2), "{bad}");
    }
    let o = run(&["semiclassical"], &reference("sech.toml"), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_directory_falls_back_to_the_environment() {
    let dir = TempDir::new().unwrap();
    let env_out = dir.path().join("env");
    let o = bin()
        .args(["groundstate", "--config"])
        .arg(reference("sech.toml"))
        .env("MULTIBUMP_OUT", &env_out)
        .output()
        .unwrap();
    ok(&o);
    assert!(env_out.join("groundstate.json").exists());
}

#[test]
fn tampered_field_fails_the_residual_precondition() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("gs");
    ok(&run(&["groundstate"], &reference("sech.toml"), &out));
    let clean = out.join("groundstate.csv");
    let o = run(&["spectrum", "--field", clean.to_str().unwrap()], &reference("sech.toml"), &dir.path().join("s"));
    ok(&o);
    let text = std::fs::read_to_string(&clean).unwrap();
    let noisy: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| match (i, l.split_once(',')) {
            (0, _) | (_, None) => l.to_owned(),
            (_, Some((x, v))) => {
                let v: f64 = v.parse().unwrap();
                format!("{x},{}", v + 1e-4 * ((i * 7919) % 13) as f64 / 13.0)
            }
        })
        .collect();
    let tampered = dir.path().join("tampered.csv");
    std::fs::write(&tampered, noisy.join("\n") + "\n").unwrap();
    let o = run(&["spectrum", "--field", tampered.to_str().unwrap()], &reference("sech.toml"), &dir.path().join("t"));
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let missing = dir.path().join("missing.bin");
    let o = run(&["spectrum", "--field", missing.to_str().unwrap()], &reference("sech.toml"), &dir.path().join("t"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn linear_hook_has_no_negative_directions() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(reference("sech.toml")).unwrap().replace("p = 4.0", "p = 4.0\nlinear = true");
    let cfg = write_config(dir.path(), &text);
    let (l, m) = (30.0, 1200usize);
    let mut body = String::from("x,value\n");
    for i in 0..m {
        body.push_str(&format!("{},0.5\n", -l + 2.0 * l * i as f64 / m as f64));
    }
    let field = dir.path().join("flat.csv");
    std::fs::write(&field, body).unwrap();
    ok(&run(&["spectrum", "--field", field.to_str().unwrap()], &cfg, &dir.path().join("out")));
    let s = json(&dir.path().join("out/spectrum.json"));
    assert_eq!(s["spectral"]["m_f"], 0);
    assert_eq!(s["spectral"]["m"], 0);
    assert!((s["lambda"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn two_and_three_bump_sweeps_follow_the_index_formula() {
    let dir = TempDir::new().unwrap();
    for (name, n) in [("glue_n2.toml", 2usize), ("glue_n3.toml", 3)] {
        let out = dir.path().join(name);
        ok(&run(&["glue"], &reference(name), &out));
        let t = csv(&out.join("glue_sweep.csv"));
        assert_eq!(column(&t, "d"), ["4", "8", "12", "16"]);
        let status = column(&t, "status");
        assert!(status[0].starts_with("failed"), "{status:?}");
        assert!(status[1..].iter().all(|s| s == "ok"), "{status:?}");
        assert!(column(&t, "m")[1..].iter().all(|m| *m == (n - 1).to_string()));
        assert!(column(&t, "m_f")[1..].iter().all(|m| *m == n.to_string()));
        let dist: Vec<f64> = column(&t, "distance_h1")[1..].iter().map(|s| s.parse().unwrap()).collect();
        assert!(dist.windows(2).all(|w| w[1] < w[0]));
        let point = json(&out.join(format!("glue_n{n}_d16.json")));
        assert!(point["min_value"].as_f64().unwrap() > 0.0);
        let field = out.join(format!("glue_n{n}_d16.bin"));
        ok(&run(&["spectrum", "--field", field.to_str().unwrap()], &reference(name), &out.join("spectrum")));
        let s = json(&out.join("spectrum/spectrum.json"));
        assert_eq!(s["spectral"]["classification"], "fully_nondegenerate_neg");
    }
}

#[test]
fn glue_reuses_a_matching_ground_state() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    ok(&run(&["groundstate"], &reference("glue_n2.toml"), &out));
    let before = std::fs::read(out.join("groundstate.json")).unwrap();
    ok(&run(&["glue"], &reference("glue_n2.toml"), &out));
    let fresh = dir.path().join("f");
    ok(&run(&["glue"], &reference("glue_n2.toml"), &fresh));
    assert_eq!(std::fs::read(out.join("groundstate.json")).unwrap(), before);
    assert_eq!(
        std::fs::read(out.join("glue_sweep.csv")).unwrap(),
        std::fs::read(fresh.join("glue_sweep.csv")).unwrap()
    );
}

#[test]
fn supercritical_evolution_reports_the_growth_rate() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let o = bin()
        .args(["evolve", "--snapshot-stride", "5000", "--config"])
        .arg(reference("evolve_p8.toml"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    ok(&o);
    let e = json(&out.join("evolve.json"));
    let rho = e["instability"]["rho"].as_f64().unwrap();
    let rate = e["growth_fit"]["rate"].as_f64().unwrap();
    assert!(((rate - rho) / rho).abs() < 1e-2, "rate {rate} rho {rho}");
    assert!(e["exit_time"].as_f64().is_some());
    let snaps = e["snapshots"].as_array().unwrap();
    assert!(!snaps.is_empty());
    let first = out.join(snaps[0]["file"].as_str().unwrap());
    assert_eq!(std::fs::metadata(first).unwrap().len(), 16 + 16 * 1024);
    let t = csv(&out.join("trajectory.csv"));
    assert_eq!(t[0], ["t", "mass", "energy", "orbit_distance"]);
}

#[test]
fn unperturbed_and_subcritical_runs_stay_near_the_orbit() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(reference("evolve_p4.toml"))
        .unwrap()
        .replace("seeding = \"random\"", "seeding = \"none\"");
    let cfg = write_config(dir.path(), &text);
    ok(&run(&["evolve"], &cfg, &dir.path().join("flat")));
    let e = json(&dir.path().join("flat/evolve.json"));
    assert!(e["max_orbit_distance"].as_f64().unwrap() < 1e-6, "{e}");
    assert!(e["exit_time"].is_null());

    let text = std::fs::read_to_string(reference("evolve_p8.toml"))
        .unwrap()
        .replace("seeding = \"eigenvector\"", "seeding = \"none\"")
        .replace("t_end = 6.0", "t_end = 0.2");
    let cfg = write_config(dir.path(), &text);
    ok(&run(&["evolve"], &cfg, &dir.path().join("flat8")));
    let e = json(&dir.path().join("flat8/evolve.json"));
    assert!(e["max_orbit_distance"].as_f64().unwrap() < 1e-5, "{e}");

    ok(&run(&["evolve"], &reference("evolve_p4.toml"), &dir.path().join("sub")));
    let e = json(&dir.path().join("sub/evolve.json"));
    assert!(e["exit_time"].is_null());
    assert!(e["max_orbit_distance"].as_f64().unwrap() < 1e-3);
    assert!(e["instability"].is_null());

    let text = std::fs::read_to_string(reference("evolve_p4.toml"))
        .unwrap()
        .replace("seeding = \"random\"", "seeding = \"eigenvector\"");
    let cfg = write_config(dir.path(), &text);
    let o = run(&["evolve"], &cfg, &dir.path().join("none"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn semiclassical_family_tables_match_the_predictions() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("p4");
    ok(&run(&["semiclassical"], &reference("semiclassical_p4.toml"), &out));
    let t = csv(&out.join("family.csv"));
    assert_eq!(t[0], ["eps", "mass", "x_eps", "m", "m_f", "z_dot_u", "rayleigh_ratio"]);
    assert!(column(&t, "m").iter().all(|m| m == "0"));
    assert!(column(&t, "m_f").iter().all(|m| m == "1"));
    assert!(column(&t, "z_dot_u").iter().all(|z| z.parse::<f64>().unwrap() < 0.0));
    let s = json(&out.join("semiclassical.json"));
    assert_eq!(s["morse_all_match"], true);
    assert_eq!(s["criterion"]["positive"], false);
    assert!(s["criterion"]["relative_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn mass_matched_two_peak_glue_follows_the_supercritical_formula() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("c");
    ok(&run(&["semiclassical"], &reference("pair_p8.toml"), &out));
    let s = json(&out.join("semiclassical.json"));
    let g = &s["glue"];
    assert_eq!(g["m"], 2);
    assert_eq!(g["m_f"], 2);
    assert_eq!(g["matches"], true);
    assert_eq!(s["criterion"]["positive"], true);
}

#[test]
fn sweep_is_independent_of_the_job_count() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&["sweep", "--jobs", "1"], &reference("sweep.toml"), &a));
    ok(&run(&["sweep", "--jobs", "3"], &reference("sweep.toml"), &b));
    assert_eq!(std::fs::read(a.join("sweep.csv")).unwrap(), std::fs::read(b.join("sweep.csv")).unwrap());
    let t = csv(&a.join("sweep.csv"));
    assert_eq!(t.len(), 1 + 2 * 2 * 2);
    assert_eq!(column(&t, "m"), column(&t, "predicted_m"));
}
