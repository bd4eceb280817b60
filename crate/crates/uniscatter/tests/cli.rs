use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};
use uniscatter::config::{grid, parse_theta_list, StateSpec};
use uniscatter::{parse_str, ConfigErrors};
use uniscatter_core::walk::Deviation;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uniscatter"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn minimal() -> Value {
    json!({
        "model": {
            "half_width": 64,
            "coin_left": { "a": 1.0, "b": 0.0 },
            "coin_right": { "a": 1.0, "b": 0.0 }
        }
    })
}

fn hadamard(l: usize) -> Value {
    let h = FRAC_1_SQRT_2;
    json!({
        "model": {
            "half_width": l,
            "coin_left": { "a": h, "b": h, "delta": PI },
            "coin_right": { "a": h, "b": h, "delta": PI },
            "deviation": { "kind": "table", "sites": [
                { "x": 0, "coin": { "a": 0.4, "alpha": 0.3, "beta": -0.5, "delta": 3.0 } },
                { "x": 1, "coin": { "a": 0.4, "alpha": 0.3, "beta": -0.5, "delta": 3.0 } }
            ]},
            "decay": { "kappa_left": 10.0, "eps_left": 1.0, "kappa_right": 10.0, "eps_right": 1.0 }
        }
    })
}

fn errors(v: &Value) -> ConfigErrors {
    parse_str(&v.to_string()).expect_err("config should be rejected")
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, v.to_string()).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: &Path) -> (i32, String, String) {
    let o = bin().args(args).arg("--config").arg(config).arg("--out").arg(out).output().unwrap();
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stdout).into(), String::from_utf8_lossy(&o.stderr).into())
}

#[test]
fn minimal_identity_config_parses_with_defaults() {
    let cfg = parse_str(&minimal().to_string()).unwrap();
    assert_eq!(cfg.model.half_width, 64);
    assert_eq!(cfg.model.field.deviation, Deviation::None);
    assert_eq!(cfg.model.s, 1.0);
    assert_eq!(cfg.numerics.eps, vec![0.04, 0.02, 0.01]);
    assert_eq!(cfg.run.threads, 1);
    assert!(cfg.run.thetas.is_empty());
    // the horizon belongs to the smallest ε and scales as 1/ε above it
    assert_eq!(cfg.numerics.paired_steps(), vec![38, 75, 150]);
}

#[test]
fn out_of_range_coin_is_named_by_path() {
    let mut v = minimal();
    v["model"]["coin_right"]["a"] = json!(1.2);
    let e = errors(&v);
    assert!(e.mentions("model.coin_right.a"), "{e}");
    assert!(e.to_string().contains("model.coin_right.a: 1.2 outside (0, 1]"));
}

#[test]
fn asymptote_needs_positive_transmission_amplitude() {
    let mut v = minimal();
    v["model"]["coin_left"] = json!({ "a": 0.0, "b": 1.0 });
    assert!(errors(&v).mentions("model.coin_left.a"));
    // a local defect coin may be a pure reflector
    v["model"]["coin_left"] = json!({ "a": 1.0 });
    v["model"]["deviation"] = json!({ "kind": "table", "sites": [{ "x": 0, "coin": { "a": 0.0 } }] });
    v["model"]["decay"] = json!({ "kappa_left": 4.0, "kappa_right": 4.0 });
    parse_str(&v.to_string()).unwrap();
}

#[test]
fn all_violations_are_reported_together() {
    let v = json!({
        "model": {
            "half_width": 2,
            "coin_left": { "a": 0.6, "b": 0.6 },
            "coin_right": { "a": 1.0, "gamma": 0.1 },
            "s": 0.5
        },
        "numerics": { "n_theta": 1000, "eps_schedule": [0.01, 0.02], "eps_order": 1 },
        "run": { "threads": 0, "colour": "blue" },
        "extra": 1
    });
    let e = errors(&v);
    for path in [
        "model.half_width",
        "model.coin_left",
        "model.coin_right.gamma",
        "model.s",
        "numerics.n_theta",
        "numerics.eps_schedule",
        "run.threads",
        "run.colour",
        "extra",
    ] {
        assert!(e.mentions(path), "{path} missing from\n{e}");
    }
    assert!(e.0.len() >= 9);
}

#[test]
fn missing_fields_and_bad_shapes() {
    let e = errors(&json!({ "model": { "coin_left": { "b": 0.5 } } }));
    for path in ["model.half_width", "model.coin_left.a", "model.coin_right"] {
        assert!(e.mentions(path), "{path}: {e}");
    }
    assert!(errors(&json!([1, 2])).mentions(""));
    let e = parse_str("{ not json").unwrap_err();
    assert!(e.to_string().contains("invalid JSON"));
}

#[test]
fn generator_seeds_must_be_hermitian_contractions() {
    let mut v = minimal();
    v["model"]["deviation"] = json!({
        "kind": "generator",
        "seed_left": [[[0.2, 0.0], [0.1, 0.3]], [[0.1, 0.3], [0.0, 0.0]]],
        "seed_right": [[[2.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]
    });
    let e = errors(&v);
    assert!(e.mentions("model.deviation.seed_left"));
    assert!(e.mentions("model.deviation.seed_right"));
    v["model"]["deviation"]["seed_left"] = json!([[[0.2, 0.0], [0.1, 0.3]], [[0.1, -0.3], [0.0, 0.0]]]);
    v["model"]["deviation"]["seed_right"] = json!([[[0.5, 0.0], [0.0, 0.0]], [[0.0, 0.0], [-0.5, 0.0]]]);
    assert!(matches!(parse_str(&v.to_string()).unwrap().model.field.deviation, Deviation::Generator { .. }));
}

#[test]
fn run_block_angles_and_states() {
    let mut v = minimal();
    v["run"] = json!({
        "theta_grid": { "start": 0.5, "end": 1.0, "count": 3 },
        "states": [
            { "kind": "packet", "side": "left", "moving": "right", "theta": 0.2 },
            { "kind": "local", "radius": 2, "seed": 9 }
        ]
    });
    let cfg = parse_str(&v.to_string()).unwrap();
    assert_eq!(cfg.run.thetas, vec![0.5, 0.75, 1.0]);
    assert!(matches!(cfg.run.states[0], StateSpec::Packet { sigma, center: 0, right_moving: true, .. } if sigma == 0.1));
    assert_eq!(cfg.run.states[1], StateSpec::Local { radius: 2, seed: 9 });

    v["run"]["theta"] = json!([0.1]);
    v["run"]["states"][0]["side"] = json!("up");
    let e = errors(&v);
    assert!(e.mentions("run.theta_grid"));
    assert!(e.mentions("run.states[0].side"));

    assert_eq!(grid(1.0, 2.0, 1), vec![1.0]);
    assert_eq!(parse_theta_list("1.0, 1.25,2").unwrap(), vec![1.0, 1.25, 2.0]);
    assert!(parse_theta_list("1.0,x").is_err());
}

#[test]
fn shipped_example_configs_parse() {
    let mut n = 0;
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        uniscatter::parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn spectrum_writes_hadamard_thresholds() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run(&["spectrum"], &configs().join("hadamard.json"), tmp.path());
    assert_eq!(code, 0);
    assert!(stdout.starts_with("thresholds:"));
    let text = fs::read_to_string(tmp.path().join("thresholds.csv")).unwrap();
    let got: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    // roots of sin θ = ±1/√2 in [0, 2π)
    let s = FRAC_1_SQRT_2.asin();
    let want = [s, PI - s, PI + s, 2.0 * PI - s];
    assert_eq!(got.len(), 4);
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-8, "{g} vs {w}");
    }
    let arcs = fs::read_to_string(tmp.path().join("arcs.csv")).unwrap();
    let mult: Vec<usize> = arcs.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(mult, vec![0, 4, 0, 4]);
    let bands = fs::read_to_string(tmp.path().join("bands.csv")).unwrap();
    assert_eq!(bands.lines().count(), 1 + 2 * 2 * 512);
}

#[test]
fn verify_passes_on_free_hadamard() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, stdout, stderr) = run(&["verify"], &configs().join("free_hadamard.json"), tmp.path());
    assert_eq!(code, 0, "{stdout}{stderr}");
    let summary: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(summary["all_pass"], json!(true));
    for c in summary["checks"].as_array().unwrap() {
        assert!(c["residual"].as_f64().unwrap() <= c["tolerance"].as_f64().unwrap());
    }
}

#[test]
fn exit_codes_follow_failure_class() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    // parse
    let bad = write_config(tmp.path(), "bad.json", &json!({ "model": { "half_width": 64 } }));
    let (code, _, stderr) = run(&["spectrum"], &bad, &out);
    assert_eq!(code, 1);
    assert!(stderr.contains("model.coin_left"));
    assert_eq!(run(&["spectrum"], &tmp.path().join("absent.json"), &out).0, 1);
    assert_eq!(bin().args(["spectrum"]).output().unwrap().status.code(), Some(1));
    // precondition: an angle on a threshold, and an evolution longer than the window allows
    let cfg = write_config(tmp.path(), "h.json", &hadamard(128));
    let (code, _, stderr) = run(&["smatrix", "--theta", "0.7854"], &cfg, &out);
    assert_eq!(code, 2, "{stderr}");
    let mut v = hadamard(64);
    v["numerics"] = json!({ "horizon": 400 });
    v["run"] = json!({ "states": [{ "kind": "local", "radius": 3, "seed": 1 }] });
    let cfg = write_config(tmp.path(), "short.json", &v);
    let (code, _, stderr) = run(&["waveops"], &cfg, &out);
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("wrap"));
}

fn smatrix_bytes(tmp: &Path, threads: &str, tag: &str) -> (String, String) {
    let mut v = hadamard(512);
    v["numerics"] = json!({ "horizon": 100 });
    v["run"] = json!({ "theta": [0.0, 3.0], "seed": 3 });
    let cfg = write_config(tmp, "det.json", &v);
    let out = tmp.join(tag);
    let (code, stdout, stderr) = run(&["smatrix", "--threads", threads], &cfg, &out);
    assert_eq!(code, 0, "{stdout}{stderr}");
    (fs::read_to_string(out.join("smatrix.csv")).unwrap(), fs::read_to_string(out.join("coefficients.csv")).unwrap())
}

#[test]
fn smatrix_csv_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = smatrix_bytes(tmp.path(), "1", "a");
    let b = smatrix_bytes(tmp.path(), "1", "b");
    assert_eq!(a, b);
    assert_eq!(a, smatrix_bytes(tmp.path(), "3", "c"));

    let header = a.0.lines().next().unwrap();
    for col in ["theta", "d_theta_sq", "source", "schedule", "re", "im", "pm_bis_plus", "pm_bis_minus"] {
        assert!(header.split(',').any(|h| h == col), "{col}");
    }
    let rows: Vec<Vec<&str>> = a.0.lines().skip(1).map(|l| l.split(',').collect()).collect();
    // two angles, three sources, d² = 16 entries each
    assert_eq!(rows.len(), 2 * 3 * 16);
    for source in ["formula_plus", "formula_minus", "packet_oracle"] {
        assert_eq!(rows.iter().filter(|r| r[2] == source).count(), 32);
    }
    assert!(rows.iter().all(|r| r[1] == "16"));
    // 9 significant digits
    assert!(rows.iter().all(|r| r[0].split('e').next().unwrap().len() == 10));
}
