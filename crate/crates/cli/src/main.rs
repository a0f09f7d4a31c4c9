//! `mgverify` — command-line front end for the matchgate verification
//! toolkit.
//!
//! Subcommands: `encode` (base circuit -> verification circuit),
//! `twirl` (attach twirled noise bindings), `sample` (weak sampling),
//! `test` (two-sample tests on sample files), `postprocess` (energy
//! mapping) and `experiment` (grid/drift/perturb/haar drivers).
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime
//! failure. Every run writes a manifest beside its outputs.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use mgverify_core::circuit::Circuit;
use mgverify_core::encoding::{encode_universal, replace_cz_with_fswap};
use mgverify_core::experiments::{run_experiment_to_dir, ExperimentConfig, ExperimentKind};
use mgverify_core::gadget::{gadgetize, MagicKind};
use mgverify_core::gaussian::weak_sample;
use mgverify_core::noise::{Bindings, ErrorModelConfig};
use mgverify_core::postproc::{energy_coefficients, postprocess_samples, write_energies};
use mgverify_core::stats::{self, run_test, TestKind, TestOutcome};

#[derive(Parser)]
#[command(
    name = "mgverify",
    version,
    about = "Build, sample and statistically compare classically simulable verification circuits"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EncodeMode {
    /// Replace every encoded CZ by a fermionic swap (fully simulable).
    Fswap,
    /// Teleport every CZ through an entangled four-qubit resource.
    GadgetM,
    /// Same gadget wiring loaded with the simulable resource state,
    /// which turns every CZ into a fermionic swap.
    GadgetMprime,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TestChoice {
    Ks,
    Es,
    Both,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encode a base circuit (single-qubit gates + CZ) into a
    /// verification circuit on twice as many qubits.
    Encode {
        /// Base circuit JSON.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: EncodeMode,
        /// Output circuit JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build twirled per-op noise bindings for a circuit.
    Twirl {
        #[arg(long)]
        circuit: PathBuf,
        /// Error model JSON; alternative to the individual flags.
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Crosstalk probability.
        #[arg(long)]
        p_c: Option<f64>,
        /// Overrotation scale.
        #[arg(long)]
        gamma: Option<f64>,
        /// End-of-circuit drift ratio.
        #[arg(long)]
        gamma_tilde: Option<f64>,
        /// Channel-coefficient perturbation radius.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Classical measurement flip probability.
        #[arg(long)]
        measurement_flip: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output bindings JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Weakly sample data-register bitstrings from a simulable circuit.
    Sample {
        #[arg(long)]
        circuit: PathBuf,
        /// Pre-built bindings JSON (from `twirl`).
        #[arg(long)]
        bindings: Option<PathBuf>,
        /// Error model JSON to bind on the fly.
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        shots: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file, one bitstring per line.
        #[arg(long)]
        out: PathBuf,
    },
    /// Decide whether two sample files stem from the same distribution.
    Test {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = TestChoice::Both)]
        test: TestChoice,
        #[arg(long, default_value_t = stats::DEFAULT_ALPHA)]
        alpha: f64,
        /// Bit-to-real map: `perm:identity`, `perm:seed:<n>`,
        /// `perm:<i,j,...>`, or `values` for files of plain reals.
        #[arg(long, default_value = "perm:identity")]
        map: String,
        /// Optional JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Map sampled bitstrings to energies of the circuit-conjugated
    /// occupation Hamiltonian.
    Postprocess {
        #[arg(long)]
        circuit: PathBuf,
        /// Sample file, one bitstring per line.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output file, one energy per line.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a configured experiment and write results.csv, plot data and
    /// a manifest.
    Experiment {
        /// grid | drift | perturb | haar (defaults to the config's kind).
        kind: Option<String>,
        /// Experiment configuration JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Error carrying the intended process exit code.
struct CliError {
    code: i32,
    message: String,
}

type CliResult<T> = Result<T, CliError>;

/// Input loading and validation problems: exit 2.
fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError {
        code: 2,
        message: e.to_string(),
    }
}

/// Failures while computing or writing results: exit 3.
fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError {
        code: 3,
        message: e.to_string(),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(usage)?;
    Ok(sha256_hex(&bytes))
}

/// Write `<output>.manifest.json` next to a produced file.
fn write_manifest(
    output: &Path,
    subcommand: &str,
    seed: Option<u64>,
    inputs: &[(&str, &Path)],
    extra: serde_json::Value,
) -> CliResult<()> {
    let mut input_map = serde_json::Map::new();
    for (name, path) in inputs {
        input_map.insert(
            (*name).to_string(),
            serde_json::json!({
                "path": path.display().to_string(),
                "sha256": file_sha256(path)?,
            }),
        );
    }
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": subcommand,
        "seed": seed,
        "inputs": serde_json::Value::Object(input_map),
        "output": output.display().to_string(),
        "output_sha256": file_sha256(output)?,
        "created_unix": created,
        "parameters": extra,
    });
    let name = format!(
        "{}.manifest.json",
        output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "output".into())
    );
    let path = output.parent().unwrap_or_else(|| Path::new(".")).join(name);
    let text = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
    std::fs::write(path, text + "\n").map_err(runtime)
}

fn load_circuit(path: &Path) -> CliResult<Circuit> {
    Circuit::load(path).map_err(usage)
}

fn run(cmd: Cmd) -> CliResult<()> {
    match cmd {
        Cmd::Encode { input, mode, out } => cmd_encode(&input, mode, &out),
        Cmd::Twirl {
            circuit,
            noise,
            p_c,
            gamma,
            gamma_tilde,
            epsilon,
            measurement_flip,
            seed,
            out,
        } => {
            let model = resolve_model(
                noise.as_deref(),
                p_c,
                gamma,
                gamma_tilde,
                epsilon,
                measurement_flip,
                seed,
            )?;
            cmd_twirl(&circuit, &model, &out)
        }
        Cmd::Sample {
            circuit,
            bindings,
            noise,
            shots,
            seed,
            out,
        } => cmd_sample(&circuit, bindings.as_deref(), noise.as_deref(), shots, seed, &out),
        Cmd::Test {
            a,
            b,
            test,
            alpha,
            map,
            out,
        } => cmd_test(&a, &b, test, alpha, &map, out.as_deref()),
        Cmd::Postprocess {
            circuit,
            input,
            out,
        } => cmd_postprocess(&circuit, &input, &out),
        Cmd::Experiment { kind, config, out } => cmd_experiment(kind.as_deref(), config.as_deref(), out.as_deref()),
    }
}

fn cmd_encode(input: &Path, mode: EncodeMode, out: &Path) -> CliResult<()> {
    let base = load_circuit(input)?;
    let encoded = encode_universal(&base).map_err(usage)?;
    let transformed = match mode {
        EncodeMode::Fswap => replace_cz_with_fswap(&encoded).map_err(runtime)?,
        EncodeMode::GadgetM => gadgetize(&encoded, MagicKind::M).map_err(runtime)?,
        EncodeMode::GadgetMprime => gadgetize(&encoded, MagicKind::MPrime).map_err(runtime)?,
    };
    transformed.save(out).map_err(runtime)?;
    let mode_name = match mode {
        EncodeMode::Fswap => "fswap",
        EncodeMode::GadgetM => "gadget-m",
        EncodeMode::GadgetMprime => "gadget-mprime",
    };
    write_manifest(
        out,
        "encode",
        None,
        &[("in", input)],
        serde_json::json!({ "mode": mode_name }),
    )?;
    println!(
        "encoded {} -> {} ({} qubits, {} ops, simulable: {})",
        input.display(),
        out.display(),
        transformed.width(),
        transformed.ops.len(),
        transformed.is_classically_simulable()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn resolve_model(
    noise: Option<&Path>,
    p_c: Option<f64>,
    gamma: Option<f64>,
    gamma_tilde: Option<f64>,
    epsilon: Option<f64>,
    measurement_flip: Option<f64>,
    seed: u64,
) -> CliResult<ErrorModelConfig> {
    let mut model = match noise {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(usage)?;
            serde_json::from_str::<ErrorModelConfig>(&text).map_err(usage)?
        }
        None => {
            let (Some(p), Some(g)) = (p_c, gamma) else {
                return Err(usage(
                    "provide either --noise <file> or both --p-c and --gamma",
                ));
            };
            ErrorModelConfig::new(p, g)
        }
    };
    if let Some(p) = p_c {
        model.p_c = p;
    }
    if let Some(g) = gamma {
        model.gamma = g;
    }
    if gamma_tilde.is_some() {
        model.gamma_tilde = gamma_tilde;
    }
    if epsilon.is_some() {
        model.epsilon = epsilon;
    }
    if measurement_flip.is_some() {
        model.measurement_flip = measurement_flip;
    }
    if seed != 0 {
        model.seed = seed;
    }
    if model.p_c < 0.0 || model.gamma < 0.0 {
        return Err(usage("error parameters must be nonnegative"));
    }
    Ok(model)
}

fn cmd_twirl(circuit_path: &Path, model: &ErrorModelConfig, out: &Path) -> CliResult<()> {
    let circuit = load_circuit(circuit_path)?;
    let bindings = model.bind(&circuit).map_err(runtime)?;
    let text = serde_json::to_string_pretty(&bindings.to_json()).map_err(runtime)?;
    std::fs::write(out, text + "\n").map_err(runtime)?;
    write_manifest(
        out,
        "twirl",
        Some(model.seed),
        &[("circuit", circuit_path)],
        serde_json::to_value(model).map_err(runtime)?,
    )?;
    println!(
        "bound {} gate channels and {} measurement channels -> {}",
        bindings.gate.len(),
        bindings.measure.len(),
        out.display()
    );
    Ok(())
}

fn cmd_sample(
    circuit_path: &Path,
    bindings_path: Option<&Path>,
    noise_path: Option<&Path>,
    shots: usize,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    if shots == 0 {
        return Err(usage("--shots must be >= 1"));
    }
    if bindings_path.is_some() && noise_path.is_some() {
        return Err(usage("--bindings and --noise are mutually exclusive"));
    }
    let circuit = load_circuit(circuit_path)?;
    let bindings = match (bindings_path, noise_path) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(usage)?;
            let value: serde_json::Value = serde_json::from_str(&text).map_err(usage)?;
            Bindings::from_json(&value).map_err(usage)?
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(usage)?;
            let model: ErrorModelConfig = serde_json::from_str(&text).map_err(usage)?;
            model.bind(&circuit).map_err(runtime)?
        }
        (None, None) => Bindings::none(),
    };
    let samples = weak_sample(&circuit, &bindings, shots, seed).map_err(runtime)?;
    let mut text = String::with_capacity(samples.len() * (circuit.data_width() + 1));
    for row in &samples {
        for b in row {
            text.push(if *b == 0 { '0' } else { '1' });
        }
        text.push('\n');
    }
    std::fs::write(out, text).map_err(runtime)?;
    let mut inputs: Vec<(&str, &Path)> = vec![("circuit", circuit_path)];
    if let Some(p) = bindings_path {
        inputs.push(("bindings", p));
    }
    if let Some(p) = noise_path {
        inputs.push(("noise", p));
    }
    write_manifest(
        out,
        "sample",
        Some(seed),
        &inputs,
        serde_json::json!({ "shots": shots }),
    )?;
    println!(
        "wrote {} samples of width {} -> {}",
        samples.len(),
        circuit.data_width(),
        out.display()
    );
    Ok(())
}

enum SampleMap {
    Perm(PermSpec),
    Values,
}

enum PermSpec {
    Identity,
    Seeded(u64),
    Explicit(Vec<usize>),
}

fn parse_map(spec: &str) -> CliResult<SampleMap> {
    if spec == "values" {
        return Ok(SampleMap::Values);
    }
    let Some(rest) = spec.strip_prefix("perm:") else {
        return Err(usage(format!(
            "unknown map {spec:?}; expected perm:identity, perm:seed:<n>, perm:<i,j,...> or values"
        )));
    };
    if rest == "identity" {
        return Ok(SampleMap::Perm(PermSpec::Identity));
    }
    if let Some(seed_text) = rest.strip_prefix("seed:") {
        let seed: u64 = seed_text
            .parse()
            .map_err(|_| usage(format!("bad permutation seed {seed_text:?}")))?;
        return Ok(SampleMap::Perm(PermSpec::Seeded(seed)));
    }
    let indices: Vec<usize> = rest
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("bad permutation list {rest:?}")))?;
    Ok(SampleMap::Perm(PermSpec::Explicit(indices)))
}

enum FileSamples {
    Bits(Vec<Vec<u8>>),
    Values(Vec<f64>),
}

fn read_samples(path: &Path, force_values: bool) -> CliResult<FileSamples> {
    let text = std::fs::read_to_string(path).map_err(usage)?;
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.is_empty() {
        return Err(usage(format!("{} contains no samples", path.display())));
    }
    let looks_binary = lines
        .iter()
        .all(|l| l.len() == lines[0].len() && l.bytes().all(|b| b == b'0' || b == b'1'));
    if looks_binary && !force_values {
        let rows = lines
            .iter()
            .map(|l| l.bytes().map(|b| b - b'0').collect::<Vec<u8>>())
            .collect();
        return Ok(FileSamples::Bits(rows));
    }
    let values = lines
        .iter()
        .map(|l| l.parse::<f64>())
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(FileSamples::Values(values))
}

fn to_reals(samples: FileSamples, perm: &PermSpec, path: &Path) -> CliResult<Vec<f64>> {
    match samples {
        FileSamples::Values(v) => Ok(v),
        FileSamples::Bits(rows) => {
            let n = rows[0].len();
            let perm: Vec<usize> = match perm {
                PermSpec::Identity => (0..n).collect(),
                PermSpec::Seeded(seed) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                    stats::random_permutation(n, &mut rng)
                }
                PermSpec::Explicit(p) => {
                    let mut seen = vec![false; n];
                    if p.len() != n || p.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
                        return Err(usage(format!(
                            "permutation {p:?} does not permute {n} bits ({})",
                            path.display()
                        )));
                    }
                    p.clone()
                }
            };
            stats::map_samples(&rows, &perm).map_err(usage)
        }
    }
}

fn cmd_test(
    a: &Path,
    b: &Path,
    choice: TestChoice,
    alpha: f64,
    map_spec: &str,
    out: Option<&Path>,
) -> CliResult<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(usage(format!("--alpha must lie in (0, 1), got {alpha}")));
    }
    let map = parse_map(map_spec)?;
    let (sa, sb) = (
        read_samples(a, matches!(map, SampleMap::Values))?,
        read_samples(b, matches!(map, SampleMap::Values))?,
    );
    if let (FileSamples::Bits(ra), FileSamples::Bits(rb)) = (&sa, &sb) {
        if ra[0].len() != rb[0].len() {
            return Err(usage(format!(
                "sample widths differ: {} vs {} bits",
                ra[0].len(),
                rb[0].len()
            )));
        }
    }
    let perm = match &map {
        SampleMap::Perm(p) => p,
        SampleMap::Values => &PermSpec::Identity,
    };
    let xs = to_reals(sa, perm, a)?;
    let ys = to_reals(sb, perm, b)?;
    let kinds: &[TestKind] = match choice {
        TestChoice::Ks => &[TestKind::Ks],
        TestChoice::Es => &[TestKind::Es],
        TestChoice::Both => &[TestKind::Ks, TestKind::Es],
    };
    let mut outcomes: Vec<TestOutcome> = Vec::new();
    for &kind in kinds {
        let outcome = run_test(kind, &xs, &ys, alpha).map_err(runtime)?;
        println!(
            "{}: {} (statistic {:.6}, p = {:.6})",
            outcome.test.name(),
            if outcome.reject { "reject" } else { "keep" },
            outcome.statistic,
            outcome.p_value
        );
        outcomes.push(outcome);
    }
    let keep_null = outcomes.iter().all(|o| !o.reject);
    println!("overall: {}", if keep_null { "keep-null" } else { "reject-null" });
    if let Some(out_path) = out {
        let report = serde_json::json!({
            "alpha": alpha,
            "map": map_spec,
            "a": { "path": a.display().to_string(), "sha256": file_sha256(a)?, "samples": xs.len() },
            "b": { "path": b.display().to_string(), "sha256": file_sha256(b)?, "samples": ys.len() },
            "outcomes": outcomes,
            "keep_null": keep_null,
        });
        let text = serde_json::to_string_pretty(&report).map_err(runtime)?;
        std::fs::write(out_path, text + "\n").map_err(runtime)?;
        write_manifest(
            out_path,
            "test",
            None,
            &[("a", a), ("b", b)],
            serde_json::json!({ "alpha": alpha, "map": map_spec }),
        )?;
    }
    Ok(())
}

fn cmd_postprocess(circuit_path: &Path, input: &Path, out: &Path) -> CliResult<()> {
    let circuit = load_circuit(circuit_path)?;
    let map = energy_coefficients(&circuit).map_err(usage)?;
    let FileSamples::Bits(rows) = read_samples(input, false)? else {
        return Err(usage(format!(
            "{} must contain bitstrings, one per line",
            input.display()
        )));
    };
    let energies = postprocess_samples(&rows, &map).map_err(usage)?;
    write_energies(out, &energies).map_err(runtime)?;
    write_manifest(
        out,
        "postprocess",
        None,
        &[("circuit", circuit_path), ("in", input)],
        serde_json::json!({ "samples": energies.len() }),
    )?;
    println!(
        "mapped {} samples through {} weights -> {}",
        energies.len(),
        map.weights().len(),
        out.display()
    );
    Ok(())
}

fn cmd_experiment(
    kind: Option<&str>,
    config: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::load(path).map_err(usage)?,
        None => ExperimentConfig::default(),
    };
    if let Some(k) = kind {
        cfg.kind = k.parse::<ExperimentKind>().map_err(usage)?;
    }
    cfg.validate().map_err(usage)?;
    let out_dir: PathBuf = match (out, &cfg.out_dir) {
        (Some(dir), _) => dir.to_path_buf(),
        (None, Some(dir)) => dir.clone(),
        (None, None) => PathBuf::from(format!("mgverify-{}", cfg.kind)),
    };
    let summary = run_experiment_to_dir(&cfg, &out_dir).map_err(runtime)?;
    println!(
        "{} experiment: {} rows in {:.1}s -> {}",
        summary.kind,
        summary.rows,
        summary.wall_secs,
        summary.results_csv.display()
    );
    println!("plot data: {}", summary.plotdata.display());
    println!("manifest:  {}", summary.manifest.display());
    Ok(())
}
