//! End-to-end tests that drive the installed binary the way a user
//! would: encode, twirl, sample, postprocess, test, experiment.

use std::path::Path;
use std::process::{Command, Output};

use mgverify_core::circuit::Circuit;
use mgverify_core::experiments::brickwork_circuit;
use mgverify_core::matchgate::C64;
use nalgebra::Matrix2;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mgverify"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Three qubits, a couple of single-qubit rotations and CZs: the kind
/// of circuit the encoder accepts.
fn base_circuit() -> Circuit {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let h = Matrix2::new(
        C64::new(s, 0.0),
        C64::new(s, 0.0),
        C64::new(s, 0.0),
        C64::new(-s, 0.0),
    );
    let t = Matrix2::new(
        C64::new(1.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::from_polar(1.0, std::f64::consts::FRAC_PI_4),
    );
    let mut c = Circuit::new(3);
    c.push_single_qubit(0, h);
    c.push_cz(0, 1);
    c.push_single_qubit(1, t);
    c.push_cz(1, 2);
    c.push_single_qubit(2, h);
    c
}

fn read_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .expect("readable")
        .lines()
        .map(str::to_owned)
        .collect()
}

#[test]
fn test_subcommand_keeps_null_on_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("x.txt");
    std::fs::write(&samples, "0101\n1100\n0011\n0101\n1110\n0001\n").unwrap();
    let report = dir.path().join("report.json");

    let out = run_ok(
        bin()
            .arg("test")
            .args(["--a"])
            .arg(&samples)
            .args(["--b"])
            .arg(&samples)
            .args(["--out"])
            .arg(&report),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("keep-null"), "stdout: {stdout}");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report["keep_null"], serde_json::json!(true));
    assert_eq!(report["a"]["sha256"], report["b"]["sha256"]);
    assert_eq!(report["outcomes"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("report.json.manifest.json").is_file());
}

#[test]
fn test_subcommand_accepts_value_files_and_permutations() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    std::fs::write(&a, "0.25\n1.5\n-3.0\n0.75\n").unwrap();
    std::fs::write(&b, "0.25\n1.5\n-3.0\n0.75\n").unwrap();
    run_ok(
        bin()
            .arg("test")
            .args(["--a"])
            .arg(&a)
            .args(["--b"])
            .arg(&b)
            .args(["--map", "values", "--test", "ks"]),
    );

    std::fs::write(&a, "01\n10\n11\n00\n01\n").unwrap();
    std::fs::write(&b, "01\n10\n11\n00\n01\n").unwrap();
    run_ok(
        bin()
            .arg("test")
            .args(["--a"])
            .arg(&a)
            .args(["--b"])
            .arg(&b)
            .args(["--map", "perm:1,0"]),
    );
    run_ok(
        bin()
            .arg("test")
            .args(["--a"])
            .arg(&a)
            .args(["--b"])
            .arg(&b)
            .args(["--map", "perm:seed:9"]),
    );
}

#[test]
fn encode_fswap_yields_a_simulable_double_width_circuit() {
    let dir = tempfile::tempdir().unwrap();
    let base_path = dir.path().join("base.json");
    base_circuit().save(&base_path).unwrap();
    let out_path = dir.path().join("encoded.json");

    let out = run_ok(
        bin()
            .arg("encode")
            .args(["--in"])
            .arg(&base_path)
            .args(["--mode", "fswap", "--out"])
            .arg(&out_path),
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("simulable: true"));

    let encoded = Circuit::load(&out_path).unwrap();
    assert_eq!(encoded.width(), 6);
    assert!(encoded.is_classically_simulable());
    assert!(dir.path().join("encoded.json.manifest.json").is_file());
}

#[test]
fn encode_gadget_modes_append_resource_registers() {
    let dir = tempfile::tempdir().unwrap();
    let base_path = dir.path().join("base.json");
    base_circuit().save(&base_path).unwrap();

    for (mode, simulable) in [("gadget-m", false), ("gadget-mprime", true)] {
        let out_path = dir.path().join(format!("{mode}.json"));
        run_ok(
            bin()
                .arg("encode")
                .args(["--in"])
                .arg(&base_path)
                .args(["--mode", mode, "--out"])
                .arg(&out_path),
        );
        let encoded = Circuit::load(&out_path).unwrap();
        // 6 data lines plus four resource lines per encoded CZ.
        assert_eq!(encoded.width(), 6 + 4 * 2);
        assert_eq!(encoded.data_width(), 6);
        assert_eq!(encoded.is_classically_simulable(), simulable);
    }
}

#[test]
fn twirl_sample_postprocess_pipeline_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let base_path = dir.path().join("base.json");
    base_circuit().save(&base_path).unwrap();
    let circuit_path = dir.path().join("circuit.json");
    run_ok(
        bin()
            .arg("encode")
            .args(["--in"])
            .arg(&base_path)
            .args(["--mode", "fswap", "--out"])
            .arg(&circuit_path),
    );

    let bindings_path = dir.path().join("bindings.json");
    let out = run_ok(
        bin()
            .arg("twirl")
            .args(["--circuit"])
            .arg(&circuit_path)
            .args(["--p-c", "0.005", "--gamma", "0.05", "--seed", "11", "--out"])
            .arg(&bindings_path),
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("gate channels"));

    let samples_path = dir.path().join("samples.txt");
    run_ok(
        bin()
            .arg("sample")
            .args(["--circuit"])
            .arg(&circuit_path)
            .args(["--bindings"])
            .arg(&bindings_path)
            .args(["--shots", "120", "--seed", "4", "--out"])
            .arg(&samples_path),
    );
    let rows = read_lines(&samples_path);
    assert_eq!(rows.len(), 120);
    assert!(rows
        .iter()
        .all(|r| r.len() == 6 && r.bytes().all(|b| b == b'0' || b == b'1')));

    // Same bindings, fresh shot noise: the tests should keep the null.
    let samples_b = dir.path().join("samples_b.txt");
    run_ok(
        bin()
            .arg("sample")
            .args(["--circuit"])
            .arg(&circuit_path)
            .args(["--bindings"])
            .arg(&bindings_path)
            .args(["--shots", "120", "--seed", "5", "--out"])
            .arg(&samples_b),
    );
    let out = run_ok(
        bin()
            .arg("test")
            .args(["--a"])
            .arg(&samples_path)
            .args(["--b"])
            .arg(&samples_b)
            .args(["--alpha", "0.01"]),
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("overall:"));

    let energies_path = dir.path().join("energies.txt");
    run_ok(
        bin()
            .arg("postprocess")
            .args(["--circuit"])
            .arg(&circuit_path)
            .args(["--in"])
            .arg(&samples_path)
            .args(["--out"])
            .arg(&energies_path),
    );
    let energies = read_lines(&energies_path);
    assert_eq!(energies.len(), 120);
    for line in &energies {
        let value: f64 = line.parse().expect("energy lines are floats");
        assert!(value.is_finite());
    }
}

#[test]
fn sample_without_noise_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let base_path = dir.path().join("base.json");
    base_circuit().save(&base_path).unwrap();
    let circuit_path = dir.path().join("circuit.json");
    run_ok(
        bin()
            .arg("encode")
            .args(["--in"])
            .arg(&base_path)
            .args(["--mode", "fswap", "--out"])
            .arg(&circuit_path),
    );
    let first = dir.path().join("s1.txt");
    let second = dir.path().join("s2.txt");
    for path in [&first, &second] {
        run_ok(
            bin()
                .arg("sample")
                .args(["--circuit"])
                .arg(&circuit_path)
                .args(["--shots", "40", "--seed", "77", "--out"])
                .arg(path),
        );
    }
    assert_eq!(
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap()
    );
}

#[test]
fn experiment_grid_writes_results_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let circuit_path = dir.path().join("circuit.json");
    brickwork_circuit(4, 2, 7)
        .unwrap()
        .save(&circuit_path)
        .unwrap();

    let cfg = serde_json::json!({
        "kind": "grid",
        "circuit": circuit_path,
        "p_c": 0.005,
        "gamma": 0.05,
        "p_c_factors": [1.0],
        "gamma_factors": [0.0, 4.0],
        "shots": 60,
        "reps": 25,
        "seed": 3,
        "postprocess": false
    });
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out_dir = dir.path().join("run");

    let out = run_ok(
        bin()
            .args(["experiment", "grid", "--config"])
            .arg(&cfg_path)
            .args(["--out"])
            .arg(&out_dir),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("grid experiment"), "stdout: {stdout}");

    let results = out_dir.join("results.csv");
    let manifest = out_dir.join("manifest.json");
    assert!(results.is_file());
    assert!(manifest.is_file());
    assert!(out_dir.join("plotdata").join("power_vs_distance.csv").is_file());

    let lines = read_lines(&results);
    assert_eq!(lines.len(), 3, "header plus one row per gamma factor");
    assert!(lines[0].starts_with("label,"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(manifest["kind"], serde_json::json!("grid"));
    assert_eq!(manifest["rows"], serde_json::json!(2));
    assert_eq!(manifest["seed"], serde_json::json!(3));
    assert_eq!(
        manifest["config_sha256"].as_str().map(str::len),
        Some(64)
    );
}

#[test]
fn usage_errors_exit_with_code_two() {
    let missing = Path::new("/nonexistent/never.json");

    let out = bin()
        .arg("encode")
        .args(["--in"])
        .arg(missing)
        .args(["--mode", "fswap", "--out", "/tmp/x.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args(["experiment", "nonsense"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    std::fs::write(&a, "01\n10\n").unwrap();
    let out = bin()
        .arg("test")
        .args(["--a"])
        .arg(&a)
        .args(["--b"])
        .arg(&a)
        .args(["--map", "perm:0,2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "bad permutation must be a usage error");

    // Clap's own parse errors also exit with 2.
    let out = bin().arg("sample").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .arg("twirl")
        .args(["--circuit", "/tmp/nope.json", "--out", "/tmp/b.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "twirl needs a model source");
}
