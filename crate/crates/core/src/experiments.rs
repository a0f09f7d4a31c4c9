//! Experiment drivers: error-parameter grids, drift and perturbation
//! sweeps, and the random-state distinguishability study, together with
//! CSV/JSON result persistence.
//!
//! Every driver is deterministic: work items derive their RNG stream
//! from the configured seed and their own parameters, never from
//! enumeration order or thread schedule, so re-running a configuration
//! reproduces `results.csv` byte for byte.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::circuit::{Circuit, CircuitOp, GateGenerator};
use crate::dense;
use crate::encoding::{encoded_subspace_weight, fswap_generator};
use crate::error::{Error, Result};
use crate::gaussian::{output_distribution, CovarianceState};
use crate::matchgate::{Matchgate, PairGen};
use crate::noise::ErrorModelConfig;
use crate::par;
use crate::postproc::energy_coefficients;
use crate::stats::{self, PowerEstimate, TestKind};

/// Width of the canonical benchmark circuit.
pub const REFERENCE_WIDTH: usize = 10;
/// Depth (brickwork layers) of the canonical benchmark circuit.
pub const REFERENCE_LAYERS: usize = 9;
/// Reference crosstalk probability.
pub const REFERENCE_P_C: f64 = 5e-3;
/// Reference overrotation scale.
pub const REFERENCE_GAMMA: f64 = 0.05;

// ---------------------------------------------------------------------------
// Deterministic seed derivation
// ---------------------------------------------------------------------------

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a list of values into one seed. The result depends only on the
/// values, so tasks keyed this way are independent of evaluation order.
fn seed_chain(parts: &[u64]) -> u64 {
    let mut acc = 0x243f_6a88_85a3_08d3u64;
    for &p in parts {
        acc = mix64(acc ^ p);
    }
    acc
}

// ---------------------------------------------------------------------------
// Benchmark circuits
// ---------------------------------------------------------------------------

/// Nearest-neighbour brickwork of `exp(i beta YY)` gates: even layers
/// start the gate ladder at line 0, odd layers at line 1. Angles are
/// drawn uniformly from [-pi/2, pi/2) in (layer, position) order.
pub fn brickwork_circuit(width: usize, layers: usize, angle_seed: u64) -> Result<Circuit> {
    if width < 2 {
        return Err(Error::InvalidConfig(format!(
            "brickwork needs width >= 2, got {width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(angle_seed);
    let mut circuit = Circuit::new(width);
    for layer in 0..layers {
        let mut q = layer % 2;
        while q + 1 < width {
            let beta: f64 = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
            let gate = Matchgate::from_generator(&[(PairGen::YY, beta)])?;
            circuit.push_generated_gate(
                q,
                gate,
                GateGenerator {
                    terms: vec![(PairGen::YY, beta)],
                    layer,
                },
            );
            q += 2;
        }
    }
    circuit.meta.insert("family".into(), "yy-brickwork".into());
    circuit.meta.insert("angle_seed".into(), angle_seed.into());
    Ok(circuit)
}

/// The canonical 10-qubit, depth-9 benchmark circuit with angles frozen
/// from the given seed. The copy shipped under `data/` uses seed 0.
pub fn reference_circuit(angle_seed: u64) -> Result<Circuit> {
    brickwork_circuit(REFERENCE_WIDTH, REFERENCE_LAYERS, angle_seed)
}

/// Replace every generated matchgate by the fermionic swap (keeping its
/// layer), the gate set used by the resource-free protocol variant.
pub fn fswap_variant(circuit: &Circuit) -> Circuit {
    let mut out = Circuit::with_data_width(circuit.width(), circuit.data_width());
    out.meta = circuit.meta.clone();
    out.meta.insert("variant".into(), "fswap".into());
    for op in &circuit.ops {
        match op {
            CircuitOp::Matchgate {
                q,
                generator: Some(g),
                ..
            } => {
                out.push_generated_gate(
                    *q,
                    Matchgate::fswap(),
                    GateGenerator {
                        terms: fswap_generator(),
                        layer: g.layer,
                    },
                );
            }
            other => out.ops.push(other.clone()),
        }
    }
    out
}

/// Concatenate `k` copies of a measurement-free circuit, shifting layer
/// indices so drift schedules see the combined depth.
pub fn concatenated(circuit: &Circuit, k: usize) -> Result<Circuit> {
    if k == 0 {
        return Err(Error::InvalidConfig(
            "concatenation factor must be >= 1".into(),
        ));
    }
    if k > 1
        && circuit.ops.iter().any(|op| {
            matches!(
                op,
                CircuitOp::MeasureZ { .. } | CircuitOp::Correction { .. }
            )
        })
    {
        return Err(Error::UnsupportedOp(
            "cannot concatenate circuits with measurements".into(),
        ));
    }
    let span = circuit
        .ops
        .iter()
        .filter_map(|op| match op {
            CircuitOp::Matchgate {
                generator: Some(g), ..
            } => Some(g.layer + 1),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    let mut out = Circuit::with_data_width(circuit.width(), circuit.data_width());
    out.meta = circuit.meta.clone();
    for rep in 0..k {
        for op in &circuit.ops {
            match op {
                CircuitOp::Matchgate {
                    q,
                    gate,
                    generator: Some(g),
                } => out.push_generated_gate(
                    *q,
                    gate.clone(),
                    GateGenerator {
                        terms: g.terms.clone(),
                        layer: g.layer + rep * span,
                    },
                ),
                other => out.ops.push(other.clone()),
            }
        }
    }
    if k > 1 {
        out.meta.insert("concat".into(), (k as u64).into());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which driver a configuration runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// Sweep a grid of (crosstalk, overrotation) multipliers.
    #[default]
    Grid,
    /// Sweep the end-of-circuit drift ratio of the overrotation scale.
    Drift,
    /// Sweep the radius of random channel-coefficient perturbations.
    Perturb,
    /// Distinguishability of random-state pairs vs sample budget.
    Haar,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Grid => "grid",
            ExperimentKind::Drift => "drift",
            ExperimentKind::Perturb => "perturb",
            ExperimentKind::Haar => "haar",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grid" => Ok(ExperimentKind::Grid),
            "drift" => Ok(ExperimentKind::Drift),
            "perturb" | "perturbation" => Ok(ExperimentKind::Perturb),
            "haar" => Ok(ExperimentKind::Haar),
            other => Err(Error::InvalidConfig(format!(
                "unknown experiment kind {other:?} (expected grid|drift|perturb|haar)"
            ))),
        }
    }
}

/// Settings of the random-state distinguishability study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HaarConfig {
    /// Number of state pairs per (family, width).
    pub pairs: usize,
    /// Register widths to study.
    pub widths: Vec<usize>,
    /// Sample budgets M to study.
    pub shot_grid: Vec<usize>,
    /// Significance levels to report.
    pub alphas: Vec<f64>,
    /// Repetitions used to estimate the per-pair keep probability.
    pub inner_reps: usize,
}

impl Default for HaarConfig {
    fn default() -> Self {
        HaarConfig {
            pairs: 2000,
            widths: vec![7, 8, 9, 10],
            shot_grid: vec![50, 100, 200, 400],
            alphas: vec![0.1, 0.05, 0.01],
            inner_reps: 25,
        }
    }
}

/// One experiment run, fully determined by this value (plus the shipped
/// circuit when `circuit` is unset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Path of the circuit to study; `null` selects the built-in
    /// reference brickwork circuit (angle seed 0).
    pub circuit: Option<PathBuf>,
    /// Reference crosstalk probability.
    pub p_c: f64,
    /// Reference overrotation scale.
    pub gamma: f64,
    /// Grid multipliers applied to `p_c`.
    pub p_c_factors: Vec<f64>,
    /// Grid multipliers applied to `gamma`.
    pub gamma_factors: Vec<f64>,
    /// Drift ratios; 1 reproduces the static reference model.
    pub gamma_tilde_values: Vec<f64>,
    /// Perturbation radii; 0 reproduces the reference channels.
    pub epsilon_values: Vec<f64>,
    /// Samples per side and repetition (M).
    pub shots: usize,
    pub alpha: f64,
    /// Monte-Carlo repetitions per row.
    pub reps: usize,
    pub seed: u64,
    /// Also test energy-mapped samples.
    pub postprocess: bool,
    /// Record the doubled-subspace weight of each output distribution.
    pub subspace_weight: bool,
    /// Classical outcome-flip probability applied per output bit.
    pub measurement_flip: Option<f64>,
    /// Circuit repetition factor (noise amplification).
    pub concat: usize,
    /// Default output directory for the CLI.
    pub out_dir: Option<PathBuf>,
    pub haar: HaarConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Grid,
            circuit: None,
            p_c: REFERENCE_P_C,
            gamma: REFERENCE_GAMMA,
            p_c_factors: vec![0.0, 0.5, 1.0, 2.0, 4.0],
            gamma_factors: vec![0.0, 0.5, 1.0, 2.0, 4.0],
            gamma_tilde_values: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
            epsilon_values: vec![0.0, 0.005, 0.01, 0.02, 0.05, 0.1],
            shots: 400,
            alpha: 0.05,
            reps: 1000,
            seed: 0,
            postprocess: true,
            subspace_weight: false,
            measurement_flip: None,
            concat: 1,
            out_dir: None,
            haar: HaarConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be >= 1".into()));
        }
        if self.shots == 0 {
            return Err(Error::InvalidConfig("shots must be >= 1".into()));
        }
        if self.concat == 0 {
            return Err(Error::InvalidConfig("concat must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.p_c < 0.0 || self.gamma < 0.0 {
            return Err(Error::InvalidConfig(
                "reference error parameters must be nonnegative".into(),
            ));
        }
        if let Some(f) = self.measurement_flip {
            if !(0.0..=0.5).contains(&f) {
                return Err(Error::InvalidConfig(format!(
                    "measurement flip probability must lie in [0, 0.5], got {f}"
                )));
            }
        }
        let nonempty = |name: &str, v: &[f64]| -> Result<()> {
            if v.is_empty() {
                return Err(Error::InvalidConfig(format!("{name} must be nonempty")));
            }
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must contain finite nonnegative values"
                )));
            }
            Ok(())
        };
        match self.kind {
            ExperimentKind::Grid => {
                nonempty("p_c_factors", &self.p_c_factors)?;
                nonempty("gamma_factors", &self.gamma_factors)?;
            }
            ExperimentKind::Drift => nonempty("gamma_tilde_values", &self.gamma_tilde_values)?,
            ExperimentKind::Perturb => nonempty("epsilon_values", &self.epsilon_values)?,
            ExperimentKind::Haar => {
                let h = &self.haar;
                if h.pairs == 0 || h.inner_reps == 0 {
                    return Err(Error::InvalidConfig(
                        "haar.pairs and haar.inner_reps must be >= 1".into(),
                    ));
                }
                if h.widths.is_empty() || h.shot_grid.is_empty() || h.alphas.is_empty() {
                    return Err(Error::InvalidConfig(
                        "haar.widths, haar.shot_grid and haar.alphas must be nonempty".into(),
                    ));
                }
                if h.widths.iter().any(|&n| n == 0 || n > 16) {
                    return Err(Error::InvalidConfig(
                        "haar.widths must lie in 1..=16".into(),
                    ));
                }
                if h.shot_grid.iter().any(|&m| m == 0) {
                    return Err(Error::InvalidConfig(
                        "haar.shot_grid entries must be >= 1".into(),
                    ));
                }
                if h.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
                    return Err(Error::InvalidConfig(
                        "haar.alphas must lie in (0, 1)".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Canonical JSON used for hashing; field order is fixed by the
    /// struct, so equal configs serialize identically.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn sha256(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json()?.as_bytes());
        Ok(hex_string(&hasher.finalize()))
    }

    /// Load the configured circuit (or build the reference circuit) and
    /// apply the concatenation factor.
    pub fn resolve_circuit(&self) -> Result<Circuit> {
        let base = match &self.circuit {
            Some(path) => Circuit::load(path)?,
            None => reference_circuit(0)?,
        };
        concatenated(&base, self.concat)
    }

    fn reference_model(&self) -> ErrorModelConfig {
        let mut model = ErrorModelConfig::new(self.p_c, self.gamma);
        model.measurement_flip = self.measurement_flip;
        model.seed = self.seed;
        model
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

// ---------------------------------------------------------------------------
// Output distributions
// ---------------------------------------------------------------------------

/// Mix each output bit with flip probability `f` (classical readout
/// error applied to a distribution over the data register).
fn apply_flip_map(probs: &mut [f64], f: f64) {
    if f == 0.0 {
        return;
    }
    let dim = probs.len();
    let n = dim.trailing_zeros() as usize;
    for q in 0..n {
        let mask = 1usize << (n - 1 - q);
        for idx in 0..dim {
            if idx & mask == 0 {
                let a = probs[idx];
                let b = probs[idx | mask];
                probs[idx] = (1.0 - f) * a + f * b;
                probs[idx | mask] = (1.0 - f) * b + f * a;
            }
        }
    }
}

/// Exact output distribution of the noisy randomized-compiled circuit
/// over its data register.
pub fn output_diag(circuit: &Circuit, model: &ErrorModelConfig) -> Result<Vec<f64>> {
    let bindings = model.bind(circuit)?;
    let rho = dense::rc_output_state(circuit, &bindings)?;
    let mut probs = rho.diag();
    let mut total = 0.0;
    for p in &mut probs {
        if *p < 0.0 {
            if *p < -1e-9 {
                return Err(Error::InvalidDistribution(format!(
                    "negative output probability {p}"
                )));
            }
            *p = 0.0;
        }
        total += *p;
    }
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!(
            "output probabilities sum to {total}"
        )));
    }
    for p in &mut probs {
        *p /= total;
    }
    if let Some(f) = model.measurement_flip {
        // Measured circuits already receive their flips through the
        // per-measurement bindings.
        let has_measures = circuit
            .ops
            .iter()
            .any(|op| matches!(op, CircuitOp::MeasureZ { .. }));
        if !has_measures {
            apply_flip_map(&mut probs, f);
        }
    }
    Ok(probs)
}

// ---------------------------------------------------------------------------
// Power estimation for a pair of distributions
// ---------------------------------------------------------------------------

struct PairPowers {
    ks: PowerEstimate,
    es: PowerEstimate,
    ks_energy: Option<PowerEstimate>,
    es_energy: Option<PowerEstimate>,
}

fn estimate_from_bools(kept: &[bool]) -> PowerEstimate {
    let reps = kept.len();
    let successes = kept.iter().filter(|&&b| b).count();
    let (ci_low, ci_high) = stats::wilson_interval(successes, reps);
    PowerEstimate {
        keep_rate: successes as f64 / reps as f64,
        ci_low,
        ci_high,
        reps,
    }
}

/// Estimate keep probabilities of both tests on `shots` fresh samples
/// per side and repetition. Both tests see the same draws; outcomes are
/// mapped to reals with the fixed binary-weight map (qubit order as-is),
/// the optional energy map is likewise fixed.
fn pair_powers(
    p: &[f64],
    q: &[f64],
    n_bits: usize,
    energies: Option<&[f64]>,
    shots: usize,
    alpha: f64,
    reps: usize,
    seed: u64,
) -> Result<PairPowers> {
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be >= 1".into()));
    }
    let outcomes: Vec<Result<(bool, bool, Option<bool>, Option<bool>)>> =
        par::map_indexed(reps, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let xi = dense::sample_indices(p, shots, &mut rng);
            let yi = dense::sample_indices(q, shots, &mut rng);
            let perm: Vec<usize> = (0..n_bits).collect();
            let to_value = |idx: usize| -> Result<f64> {
                stats::bits_to_int(&dense::index_to_bits(idx, n_bits), &perm)
            };
            let xs = xi
                .iter()
                .map(|&ix| to_value(ix))
                .collect::<Result<Vec<_>>>()?;
            let ys = yi
                .iter()
                .map(|&iy| to_value(iy))
                .collect::<Result<Vec<_>>>()?;
            let ks = stats::keeps_null(TestKind::Ks, &xs, &ys, alpha)?;
            let es = stats::keeps_null(TestKind::Es, &xs, &ys, alpha)?;
            let (ks_e, es_e) = match energies {
                Some(table) => {
                    let xe: Vec<f64> = xi.iter().map(|&ix| table[ix]).collect();
                    let ye: Vec<f64> = yi.iter().map(|&iy| table[iy]).collect();
                    (
                        Some(stats::keeps_null(TestKind::Ks, &xe, &ye, alpha)?),
                        Some(stats::keeps_null(TestKind::Es, &xe, &ye, alpha)?),
                    )
                }
                None => (None, None),
            };
            Ok((ks, es, ks_e, es_e))
        });
    let mut ks = Vec::with_capacity(reps);
    let mut es = Vec::with_capacity(reps);
    let mut ks_e = Vec::new();
    let mut es_e = Vec::new();
    for o in outcomes {
        let (a, b, c, d) = o?;
        ks.push(a);
        es.push(b);
        if let Some(v) = c {
            ks_e.push(v);
        }
        if let Some(v) = d {
            es_e.push(v);
        }
    }
    Ok(PairPowers {
        ks: estimate_from_bools(&ks),
        es: estimate_from_bools(&es),
        ks_energy: (!ks_e.is_empty()).then(|| estimate_from_bools(&ks_e)),
        es_energy: (!es_e.is_empty()).then(|| estimate_from_bools(&es_e)),
    })
}

// ---------------------------------------------------------------------------
// Parameter sweeps
// ---------------------------------------------------------------------------

/// One evaluated sweep point.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub label: String,
    pub p_c: f64,
    pub gamma: f64,
    /// Drift ratio of the row's model; 1 means a static schedule.
    pub gamma_tilde: f64,
    /// Perturbation radius of the row's model.
    pub epsilon: f64,
    /// Euclidean distance between the two output distributions.
    pub diag_distance: f64,
    /// Weight of the doubled-string subspace, when tracked.
    pub subspace_weight: Option<f64>,
    pub ks: PowerEstimate,
    pub es: PowerEstimate,
    pub ks_energy: Option<PowerEstimate>,
    pub es_energy: Option<PowerEstimate>,
    pub wall_secs: f64,
}

struct RowSpec {
    label: String,
    model: ErrorModelConfig,
    gamma_tilde: f64,
    epsilon: f64,
}

fn sweep(cfg: &ExperimentConfig, circuit: &Circuit, specs: Vec<RowSpec>) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    circuit.validate()?;
    let n_bits = circuit.data_width();
    if cfg.subspace_weight && n_bits % 2 != 0 {
        return Err(Error::InvalidConfig(
            "subspace weight tracking needs an even register width".into(),
        ));
    }
    let reference = output_diag(circuit, &cfg.reference_model())?;
    let energies: Option<Vec<f64>> = if cfg.postprocess {
        let map = energy_coefficients(circuit)?;
        Some(
            (0..1usize << n_bits)
                .map(|ix| map.energy_of_index(ix))
                .collect(),
        )
    } else {
        None
    };
    let rows: Vec<Result<ResultRow>> = par::map_items(specs, |spec| {
        let start = Instant::now();
        let probs = output_diag(circuit, &spec.model)?;
        let diag_dist = dense::diag_distance(&reference, &probs)?;
        let row_seed = seed_chain(&[
            cfg.seed,
            spec.model.p_c.to_bits(),
            spec.model.gamma.to_bits(),
            spec.gamma_tilde.to_bits(),
            spec.epsilon.to_bits(),
        ]);
        let powers = pair_powers(
            &reference,
            &probs,
            n_bits,
            energies.as_deref(),
            cfg.shots,
            cfg.alpha,
            cfg.reps,
            row_seed,
        )?;
        let subspace = if cfg.subspace_weight {
            Some(encoded_subspace_weight(&probs, n_bits / 2)?)
        } else {
            None
        };
        Ok(ResultRow {
            label: spec.label,
            p_c: spec.model.p_c,
            gamma: spec.model.gamma,
            gamma_tilde: spec.gamma_tilde,
            epsilon: spec.epsilon,
            diag_distance: diag_dist,
            subspace_weight: subspace,
            ks: powers.ks,
            es: powers.es,
            ks_energy: powers.ks_energy,
            es_energy: powers.es_energy,
            wall_secs: start.elapsed().as_secs_f64(),
        })
    });
    rows.into_iter().collect()
}

/// Sweep the grid of (crosstalk, overrotation) multipliers against the
/// reference point.
pub fn run_grid_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let circuit = cfg.resolve_circuit()?;
    run_grid_on(cfg, &circuit)
}

/// Grid sweep on an explicit circuit.
pub fn run_grid_on(cfg: &ExperimentConfig, circuit: &Circuit) -> Result<Vec<ResultRow>> {
    let mut specs = Vec::new();
    for &fp in &cfg.p_c_factors {
        for &fg in &cfg.gamma_factors {
            let mut model = cfg.reference_model();
            model.p_c = cfg.p_c * fp;
            model.gamma = cfg.gamma * fg;
            specs.push(RowSpec {
                label: format!("pc_x{fp}_gamma_x{fg}"),
                model,
                gamma_tilde: 1.0,
                epsilon: 0.0,
            });
        }
    }
    sweep(cfg, circuit, specs)
}

/// Sweep drift ratios: the alternate model ramps the overrotation scale
/// linearly across layers towards `gamma * gamma_tilde`.
pub fn run_drift_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let circuit = cfg.resolve_circuit()?;
    let mut specs = Vec::new();
    for &gt in &cfg.gamma_tilde_values {
        let mut model = cfg.reference_model();
        model.gamma_tilde = Some(gt);
        specs.push(RowSpec {
            label: format!("gamma_tilde_{gt}"),
            model,
            gamma_tilde: gt,
            epsilon: 0.0,
        });
    }
    sweep(cfg, &circuit, specs)
}

/// Sweep perturbation radii: every gate channel's coefficient vector is
/// displaced by a random direction of the given length.
pub fn run_perturbation_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let circuit = cfg.resolve_circuit()?;
    let mut specs = Vec::new();
    for &eps in &cfg.epsilon_values {
        let mut model = cfg.reference_model();
        model.epsilon = (eps > 0.0).then_some(eps);
        specs.push(RowSpec {
            label: format!("epsilon_{eps}"),
            model,
            gamma_tilde: 1.0,
            epsilon: eps,
        });
    }
    sweep(cfg, &circuit, specs)
}

// ---------------------------------------------------------------------------
// Random-state distinguishability study
// ---------------------------------------------------------------------------

/// Draw an orthogonal matrix uniformly from SO(dim): QR of a Gaussian
/// matrix with the R-diagonal sign correction, then one column flip if
/// the determinant is negative.
pub fn haar_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let a: DMatrix<f64> = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    if q.determinant() < 0.0 {
        for i in 0..dim {
            q[(i, 0)] = -q[(i, 0)];
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StateFamily {
    /// Gaussian states from orthogonal rotations of the vacuum.
    MgHaar,
    /// Dense states with independent complex-Gaussian amplitudes.
    Haar,
    /// Two handles to one Gaussian state (calibration).
    Identical,
}

impl StateFamily {
    const ALL: [StateFamily; 3] = [
        StateFamily::MgHaar,
        StateFamily::Haar,
        StateFamily::Identical,
    ];

    fn label(self) -> &'static str {
        match self {
            StateFamily::MgHaar => "mg-haar",
            StateFamily::Haar => "haar",
            StateFamily::Identical => "identical",
        }
    }

    fn tag(self) -> u64 {
        match self {
            StateFamily::MgHaar => 1,
            StateFamily::Haar => 2,
            StateFamily::Identical => 3,
        }
    }
}

fn gaussian_random_diag(n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let rotation = haar_orthogonal(2 * n, rng);
    let state = CovarianceState::from_orthogonal(n, &rotation)?;
    output_distribution(&state, n)
}

fn dense_random_diag(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let amps = crate::oracle::random_state(n, rng);
    amps.iter().map(|a| a.norm_sqr()).collect()
}

/// One line of the distinguishability table.
#[derive(Debug, Clone)]
pub struct HaarRow {
    pub family: String,
    pub n: usize,
    pub shots: usize,
    pub alpha: f64,
    pub pairs: usize,
    pub inner_reps: usize,
    /// Pairs whose estimated keep probability was at most alpha.
    pub ks_successes: usize,
    pub ks_ratio: f64,
    pub ks_ci_low: f64,
    pub ks_ci_high: f64,
    pub es_successes: usize,
    pub es_ratio: f64,
    pub es_ci_low: f64,
    pub es_ci_high: f64,
    /// Mean keep probability over all pairs and repetitions.
    pub mean_ks_keep: f64,
    pub mean_es_keep: f64,
}

/// Count, per (family, width, sample budget, alpha), how many random
/// state pairs the tests distinguish: a pair counts as a success when
/// its estimated keep probability is at most alpha.
pub fn run_haar_experiment(cfg: &ExperimentConfig) -> Result<Vec<HaarRow>> {
    cfg.validate()?;
    let h = &cfg.haar;
    let mut rows = Vec::new();
    for family in StateFamily::ALL {
        for &n in &h.widths {
            // per pair: keep counts per (shot grid index, alpha) for both tests
            let per_pair: Vec<Result<Vec<Vec<(usize, usize)>>>> = par::map_indexed(h.pairs, |k| {
                let pair_seed = seed_chain(&[cfg.seed, family.tag(), n as u64, k as u64]);
                let mut prep = ChaCha8Rng::seed_from_u64(pair_seed);
                prep.set_stream(0);
                let (p, q) = match family {
                    StateFamily::MgHaar => (
                        gaussian_random_diag(n, &mut prep)?,
                        gaussian_random_diag(n, &mut prep)?,
                    ),
                    StateFamily::Haar => (
                        dense_random_diag(n, &mut prep),
                        dense_random_diag(n, &mut prep),
                    ),
                    StateFamily::Identical => {
                        let p = gaussian_random_diag(n, &mut prep)?;
                        (p.clone(), p)
                    }
                };
                // keep counts per (shot grid index, alpha); each rep is
                // tested once and its p-values thresholded per alpha.
                let mut counts = vec![vec![(0usize, 0usize); h.alphas.len()]; h.shot_grid.len()];
                for (mi, &m) in h.shot_grid.iter().enumerate() {
                    for rep in 0..h.inner_reps {
                        let mut rng = ChaCha8Rng::seed_from_u64(pair_seed);
                        rng.set_stream(1 + (mi * h.inner_reps + rep) as u64);
                        let xi = dense::sample_indices(&p, m, &mut rng);
                        let yi = dense::sample_indices(&q, m, &mut rng);
                        let perm: Vec<usize> = (0..n).collect();
                        let to_value = |idx: usize| -> Result<f64> {
                            stats::bits_to_int(&dense::index_to_bits(idx, n), &perm)
                        };
                        let xs = xi
                            .iter()
                            .map(|&ix| to_value(ix))
                            .collect::<Result<Vec<_>>>()?;
                        let ys = yi
                            .iter()
                            .map(|&iy| to_value(iy))
                            .collect::<Result<Vec<_>>>()?;
                        let ks_p = stats::run_test(TestKind::Ks, &xs, &ys, cfg.alpha)?.p_value;
                        // Degenerate quartile spread: fall back to the KS
                        // decision, matching `keeps_null`.
                        let es_p = match stats::run_test(TestKind::Es, &xs, &ys, cfg.alpha) {
                            Ok(outcome) => Some(outcome.p_value),
                            Err(Error::DegenerateSample(_)) => None,
                            Err(e) => return Err(e),
                        };
                        for (ai, &alpha) in h.alphas.iter().enumerate() {
                            if ks_p >= alpha {
                                counts[mi][ai].0 += 1;
                            }
                            if es_p.unwrap_or(ks_p) >= alpha {
                                counts[mi][ai].1 += 1;
                            }
                        }
                    }
                }
                Ok(counts)
            });
            let mut collected = Vec::with_capacity(h.pairs);
            for c in per_pair {
                collected.push(c?);
            }
            for (mi, &m) in h.shot_grid.iter().enumerate() {
                for (ai, &alpha) in h.alphas.iter().enumerate() {
                    let keep_rates: Vec<(f64, f64)> = collected
                        .iter()
                        .map(|counts| {
                            (
                                counts[mi][ai].0 as f64 / h.inner_reps as f64,
                                counts[mi][ai].1 as f64 / h.inner_reps as f64,
                            )
                        })
                        .collect();
                    let mean_ks = keep_rates.iter().map(|r| r.0).sum::<f64>() / h.pairs as f64;
                    let mean_es = keep_rates.iter().map(|r| r.1).sum::<f64>() / h.pairs as f64;
                    let ks_successes = keep_rates
                        .iter()
                        .filter(|r| stats::distinguish_success(r.0, alpha))
                        .count();
                    let es_successes = keep_rates
                        .iter()
                        .filter(|r| stats::distinguish_success(r.1, alpha))
                        .count();
                    let (ks_lo, ks_hi) = stats::wilson_interval(ks_successes, h.pairs);
                    let (es_lo, es_hi) = stats::wilson_interval(es_successes, h.pairs);
                    rows.push(HaarRow {
                        family: family.label().to_string(),
                        n,
                        shots: m,
                        alpha,
                        pairs: h.pairs,
                        inner_reps: h.inner_reps,
                        ks_successes,
                        ks_ratio: ks_successes as f64 / h.pairs as f64,
                        ks_ci_low: ks_lo,
                        ks_ci_high: ks_hi,
                        es_successes,
                        es_ratio: es_successes as f64 / h.pairs as f64,
                        es_ci_low: es_lo,
                        es_ci_high: es_hi,
                        mean_ks_keep: mean_ks,
                        mean_es_keep: mean_es,
                    });
                }
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const SWEEP_HEADER: &str = "label,p_c,gamma,gamma_tilde,epsilon,diag_distance,subspace_weight,\
ks_keep,ks_ci_low,ks_ci_high,es_keep,es_ci_low,es_ci_high,\
ks_energy_keep,ks_energy_ci_low,ks_energy_ci_high,\
es_energy_keep,es_energy_ci_low,es_energy_ci_high,reps";

/// Render sweep rows as CSV (timing deliberately excluded so identical
/// configurations reproduce identical bytes).
pub fn sweep_rows_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for row in rows {
        let est =
            |e: &Option<PowerEstimate>, f: fn(&PowerEstimate) -> f64| fmt_opt(e.as_ref().map(f));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.label,
            row.p_c,
            row.gamma,
            row.gamma_tilde,
            row.epsilon,
            row.diag_distance,
            fmt_opt(row.subspace_weight),
            row.ks.keep_rate,
            row.ks.ci_low,
            row.ks.ci_high,
            row.es.keep_rate,
            row.es.ci_low,
            row.es.ci_high,
            est(&row.ks_energy, |e| e.keep_rate),
            est(&row.ks_energy, |e| e.ci_low),
            est(&row.ks_energy, |e| e.ci_high),
            est(&row.es_energy, |e| e.keep_rate),
            est(&row.es_energy, |e| e.ci_low),
            est(&row.es_energy, |e| e.ci_high),
            row.ks.reps,
        ));
    }
    out
}

const HAAR_HEADER: &str = "family,n,shots,alpha,pairs,inner_reps,\
ks_successes,ks_ratio,ks_ci_low,ks_ci_high,\
es_successes,es_ratio,es_ci_low,es_ci_high,mean_ks_keep,mean_es_keep";

pub fn haar_rows_csv(rows: &[HaarRow]) -> String {
    let mut out = String::from(HAAR_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.family,
            r.n,
            r.shots,
            r.alpha,
            r.pairs,
            r.inner_reps,
            r.ks_successes,
            r.ks_ratio,
            r.ks_ci_low,
            r.ks_ci_high,
            r.es_successes,
            r.es_ratio,
            r.es_ci_low,
            r.es_ci_high,
            r.mean_ks_keep,
            r.mean_es_keep,
        ));
    }
    out
}

/// Distance-sorted keep-rate curves, the axes of the power-vs-distance
/// plots.
pub fn sweep_plotdata_csv(rows: &[ResultRow]) -> String {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.diag_distance.total_cmp(&b.diag_distance));
    let mut out = String::from(
        "diag_distance,ks_keep,ks_ci_low,ks_ci_high,es_keep,es_ci_low,es_ci_high,\
ks_energy_keep,es_energy_keep",
    );
    out.push('\n');
    for row in sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.diag_distance,
            row.ks.keep_rate,
            row.ks.ci_low,
            row.ks.ci_high,
            row.es.keep_rate,
            row.es.ci_low,
            row.es.ci_high,
            fmt_opt(row.ks_energy.as_ref().map(|e| e.keep_rate)),
            fmt_opt(row.es_energy.as_ref().map(|e| e.keep_rate)),
        ));
    }
    out
}

/// Success-ratio curves vs sample budget.
pub fn haar_plotdata_csv(rows: &[HaarRow]) -> String {
    let mut out = String::from("family,n,alpha,shots,ks_ratio,es_ratio");
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.family, r.n, r.alpha, r.shots, r.ks_ratio, r.es_ratio
        ));
    }
    out
}

/// Paths produced by one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub kind: ExperimentKind,
    pub rows: usize,
    pub results_csv: PathBuf,
    pub manifest: PathBuf,
    pub plotdata: PathBuf,
    pub wall_secs: f64,
}

/// Run the configured experiment and write `results.csv`,
/// `manifest.json` and a `plotdata/` curve file into `out_dir`.
pub fn run_experiment_to_dir(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let start = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let plot_dir = out_dir.join("plotdata");
    std::fs::create_dir_all(&plot_dir)?;

    let (rows, results_text, plot_name, plot_text, row_walls): (
        usize,
        String,
        &'static str,
        String,
        Vec<f64>,
    ) = match cfg.kind {
        ExperimentKind::Grid | ExperimentKind::Drift | ExperimentKind::Perturb => {
            let rows = match cfg.kind {
                ExperimentKind::Grid => run_grid_experiment(cfg)?,
                ExperimentKind::Drift => run_drift_experiment(cfg)?,
                _ => run_perturbation_experiment(cfg)?,
            };
            let name = match cfg.kind {
                ExperimentKind::Grid => "power_vs_distance.csv",
                ExperimentKind::Drift => "drift_power_vs_distance.csv",
                _ => "perturbation_power_vs_distance.csv",
            };
            let walls = rows.iter().map(|r| r.wall_secs).collect();
            (
                rows.len(),
                sweep_rows_csv(&rows),
                name,
                sweep_plotdata_csv(&rows),
                walls,
            )
        }
        ExperimentKind::Haar => {
            let rows = run_haar_experiment(cfg)?;
            (
                rows.len(),
                haar_rows_csv(&rows),
                "ratio_vs_shots.csv",
                haar_plotdata_csv(&rows),
                Vec::new(),
            )
        }
    };

    let results_csv = out_dir.join("results.csv");
    std::fs::write(&results_csv, &results_text)?;
    let plot_path = plot_dir.join(plot_name);
    std::fs::write(&plot_path, &plot_text)?;

    let wall_secs = start.elapsed().as_secs_f64();
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "kind": cfg.kind.name(),
        "seed": cfg.seed,
        "config_sha256": cfg.sha256()?,
        "config": serde_json::to_value(cfg)?,
        "rows": rows,
        "created_unix": created,
        "wall_secs": wall_secs,
        "row_wall_secs": row_walls,
    });
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    Ok(ExperimentOutput {
        kind: cfg.kind,
        rows,
        results_csv,
        manifest: manifest_path,
        plotdata: plot_path,
        wall_secs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn repo_data_path(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../data")
            .join(name)
    }

    #[test]
    fn brickwork_has_the_documented_shape() {
        let c = reference_circuit(0).unwrap();
        assert_eq!(c.width(), 10);
        assert_eq!(c.ops.len(), 41);
        c.validate().unwrap();
        assert!(c.is_classically_simulable());
        let mut by_layer = vec![0usize; REFERENCE_LAYERS];
        for op in &c.ops {
            match op {
                CircuitOp::Matchgate {
                    q,
                    generator: Some(g),
                    ..
                } => {
                    assert_eq!(g.terms.len(), 1);
                    let (pg, beta) = g.terms[0];
                    assert_eq!(pg, PairGen::YY);
                    assert!((-FRAC_PI_2..FRAC_PI_2).contains(&beta));
                    assert_eq!(q % 2, g.layer % 2);
                    by_layer[g.layer] += 1;
                }
                other => panic!("unexpected op {other:?}"),
            }
        }
        assert_eq!(by_layer, vec![5, 4, 5, 4, 5, 4, 5, 4, 5]);
        // determinism
        let again = reference_circuit(0).unwrap();
        assert_eq!(c.to_json(), again.to_json());
        assert_ne!(
            c.to_json(),
            reference_circuit(1).unwrap().to_json(),
            "different angle seeds give different circuits"
        );
    }

    #[test]
    fn shipped_reference_circuit_is_the_seed0_build() {
        let path = repo_data_path("reference_circuit.json");
        let shipped = Circuit::load(&path).unwrap_or_else(|e| {
            panic!(
                "missing or unreadable {} ({e}); regenerate with \
                 `cargo test -p mgverify-core regenerate_reference_circuit -- --ignored`",
                path.display()
            )
        });
        assert_eq!(shipped.to_json(), reference_circuit(0).unwrap().to_json());
    }

    /// Writes the canonical circuit file; run manually when the builder
    /// changes on purpose.
    #[test]
    #[ignore]
    fn regenerate_reference_circuit() {
        let dir = repo_data_path("");
        std::fs::create_dir_all(&dir).unwrap();
        reference_circuit(0)
            .unwrap()
            .save(repo_data_path("reference_circuit.json"))
            .unwrap();
    }

    #[test]
    fn fswap_variant_swaps_every_generated_gate() {
        let base = reference_circuit(3).unwrap();
        let swapped = fswap_variant(&base);
        assert_eq!(swapped.ops.len(), base.ops.len());
        let fswap = Matchgate::fswap();
        for (orig, new) in base.ops.iter().zip(&swapped.ops) {
            let (
                CircuitOp::Matchgate {
                    q: q0,
                    generator: Some(g0),
                    ..
                },
                CircuitOp::Matchgate {
                    q: q1,
                    gate,
                    generator: Some(g1),
                },
            ) = (orig, new)
            else {
                panic!("expected generated matchgates");
            };
            assert_eq!(q0, q1);
            assert_eq!(g0.layer, g1.layer);
            assert_eq!(g1.terms, fswap_generator());
            assert_abs_diff_eq!(
                (gate.matrix() - fswap.matrix()).norm(),
                0.0,
                epsilon = 1e-15
            );
        }
        assert_eq!(
            swapped.meta.get("variant"),
            Some(&serde_json::Value::from("fswap"))
        );
    }

    #[test]
    fn concatenation_repeats_ops_and_shifts_layers() {
        let base = brickwork_circuit(4, 3, 5).unwrap();
        let doubled = concatenated(&base, 2).unwrap();
        assert_eq!(doubled.ops.len(), 2 * base.ops.len());
        doubled.validate().unwrap();
        for (i, op) in doubled.ops.iter().enumerate() {
            let CircuitOp::Matchgate {
                generator: Some(g), ..
            } = op
            else {
                panic!("expected generated gate");
            };
            let base_layer = match &base.ops[i % base.ops.len()] {
                CircuitOp::Matchgate {
                    generator: Some(g), ..
                } => g.layer,
                _ => unreachable!(),
            };
            let rep = i / base.ops.len();
            assert_eq!(g.layer, base_layer + rep * 3);
        }
        let same = concatenated(&base, 1).unwrap();
        assert_eq!(same.to_json(), base.to_json());

        let mut measured = Circuit::new(2);
        measured.push_measure(0, "m0");
        assert!(concatenated(&measured, 2).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let good = ExperimentConfig::default();
        good.validate().unwrap();

        let mut bad = good.clone();
        bad.reps = 0;
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.concat = 0;
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.alpha = 1.0;
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.p_c_factors.clear();
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.kind = ExperimentKind::Haar;
        bad.haar.widths = vec![40];
        assert!(bad.validate().is_err());

        // round trip through JSON keeps every field
        let text = serde_json::to_string(&good).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, good);
        assert_eq!(good.sha256().unwrap(), back.sha256().unwrap());
        assert_eq!(good.sha256().unwrap().len(), 64);

        // kinds parse from CLI-style strings
        assert_eq!(
            "grid".parse::<ExperimentKind>().unwrap(),
            ExperimentKind::Grid
        );
        assert_eq!(
            "perturbation".parse::<ExperimentKind>().unwrap(),
            ExperimentKind::Perturb
        );
        assert!("fancy".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn noiseless_output_diag_matches_the_pure_state() {
        let circuit = brickwork_circuit(4, 3, 11).unwrap();
        let model = ErrorModelConfig::new(0.0, 0.0);
        let diag = output_diag(&circuit, &model).unwrap();
        let ideal = dense::run_unitary(&circuit, None).unwrap().probabilities();
        for (a, b) in diag.iter().zip(&ideal) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let noisy = output_diag(&circuit, &ErrorModelConfig::new(5e-3, 0.05)).unwrap();
        assert_abs_diff_eq!(noisy.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert!(dense::diag_distance(&diag, &noisy).unwrap() > 1e-6);
    }

    #[test]
    fn flip_map_mixes_each_bit() {
        // width 2: start from a point mass on |00>
        let mut probs = vec![1.0, 0.0, 0.0, 0.0];
        apply_flip_map(&mut probs, 0.25);
        assert_abs_diff_eq!(probs[0], 0.75 * 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(probs[1], 0.75 * 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(probs[2], 0.25 * 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(probs[3], 0.25 * 0.25, epsilon = 1e-15);

        let circuit = brickwork_circuit(2, 1, 2).unwrap();
        let mut model = ErrorModelConfig::new(0.0, 0.0);
        model.measurement_flip = Some(0.1);
        let flipped = output_diag(&circuit, &model).unwrap();
        assert_abs_diff_eq!(flipped.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let mut manual = dense::run_unitary(&circuit, None).unwrap().probabilities();
        apply_flip_map(&mut manual, 0.1);
        for (a, b) in flipped.iter().zip(&manual) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn pair_powers_is_deterministic_and_calibrated() {
        let p = vec![0.25; 4];
        let q = vec![0.25; 4];
        let energies: Vec<f64> = (0..4).map(|ix| ix as f64).collect();
        let a = pair_powers(&p, &q, 2, Some(&energies), 100, 0.05, 200, 9).unwrap();
        let b = pair_powers(&p, &q, 2, Some(&energies), 100, 0.05, 200, 9).unwrap();
        assert_eq!(a.ks.keep_rate, b.ks.keep_rate);
        assert_eq!(a.es.keep_rate, b.es.keep_rate);
        assert!(a.ks.keep_rate >= 0.85, "ks keep {}", a.ks.keep_rate);
        assert!(a.es.keep_rate >= 0.85, "es keep {}", a.es.keep_rate);
        let far = vec![0.97, 0.01, 0.01, 0.01];
        let c = pair_powers(&p, &far, 2, None, 100, 0.05, 200, 9).unwrap();
        assert!(c.ks.keep_rate <= 0.05, "ks keep {}", c.ks.keep_rate);
    }

    fn small_grid_config(dir: &Path) -> ExperimentConfig {
        let circuit = brickwork_circuit(4, 3, 7).unwrap();
        let path = dir.join("circuit.json");
        circuit.save(&path).unwrap();
        ExperimentConfig {
            circuit: Some(path),
            p_c_factors: vec![1.0],
            gamma_factors: vec![0.0, 1.0, 4.0],
            gamma_tilde_values: vec![1.0, 8.0],
            epsilon_values: vec![0.0, 0.3],
            shots: 120,
            reps: 80,
            seed: 5,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn grid_rows_are_calibrated_and_order_independent() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_grid_config(dir.path());
        let rows = run_grid_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        for row in &rows {
            assert!(row.ks.keep_rate >= 0.0 && row.ks.keep_rate <= 1.0);
            assert!(row.wall_secs > 0.0);
            assert!(row.ks_energy.is_some() && row.es_energy.is_some());
        }
        let self_row = rows.iter().find(|r| r.label == "pc_x1_gamma_x1").unwrap();
        assert!(self_row.diag_distance < 1e-12);
        assert!(
            self_row.ks.keep_rate >= 1.0 - 2.0 * cfg.alpha - 0.05,
            "self keep {}",
            self_row.ks.keep_rate
        );
        let strong = rows.iter().find(|r| r.label == "pc_x1_gamma_x4").unwrap();
        assert!(strong.diag_distance > self_row.diag_distance);

        // permuting the grid only permutes the rows
        let mut permuted_cfg = cfg.clone();
        permuted_cfg.gamma_factors = vec![4.0, 1.0, 0.0];
        let permuted = run_grid_experiment(&permuted_cfg).unwrap();
        for row in &rows {
            let twin = permuted.iter().find(|r| r.label == row.label).unwrap();
            assert_eq!(twin.diag_distance, row.diag_distance);
            assert_eq!(twin.ks.keep_rate, row.ks.keep_rate);
            assert_eq!(twin.es.keep_rate, row.es.keep_rate);
        }
    }

    #[test]
    fn drift_ratio_one_reproduces_the_reference() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_grid_config(dir.path());
        cfg.kind = ExperimentKind::Drift;
        let rows = run_drift_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        let calib = &rows[0];
        assert_eq!(calib.gamma_tilde, 1.0);
        assert!(
            calib.diag_distance < 1e-12,
            "distance {}",
            calib.diag_distance
        );
        assert!(calib.ks.keep_rate >= 1.0 - 2.0 * cfg.alpha - 0.05);
        assert!(rows[1].diag_distance > calib.diag_distance);
    }

    #[test]
    fn zero_perturbation_reproduces_the_reference() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_grid_config(dir.path());
        cfg.kind = ExperimentKind::Perturb;
        let rows = run_perturbation_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].epsilon, 0.0);
        assert!(rows[0].diag_distance <= 1e-15);
        assert!(
            rows[1].diag_distance > 1e-5,
            "distance {}",
            rows[1].diag_distance
        );
    }

    #[test]
    fn haar_orthogonal_is_special_orthogonal_with_uniform_moments() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for dim in [2usize, 6, 14] {
            let q = haar_orthogonal(dim, &mut rng);
            let defect = (&q * q.transpose() - DMatrix::<f64>::identity(dim, dim))
                .abs()
                .max();
            assert!(defect < 1e-12, "orthogonality defect {defect}");
            assert_abs_diff_eq!(q.determinant(), 1.0, epsilon = 1e-10);
        }
        // E[Q_00^2] = 1/dim over many draws
        let dim = 6;
        let draws = 10_000;
        let samples: Vec<f64> = (0..draws)
            .map(|_| {
                let q = haar_orthogonal(dim, &mut rng);
                q[(0, 0)] * q[(0, 0)]
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / draws as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws as f64;
        let band = 4.0 * (var / draws as f64).sqrt();
        assert!(
            (mean - 1.0 / dim as f64).abs() <= band,
            "mean {mean} vs {} +- {band}",
            1.0 / dim as f64
        );
    }

    #[test]
    fn distinguishability_study_separates_the_families() {
        let cfg = ExperimentConfig {
            kind: ExperimentKind::Haar,
            haar: HaarConfig {
                pairs: 40,
                widths: vec![4],
                shot_grid: vec![20, 80],
                alphas: vec![0.05],
                inner_reps: 10,
            },
            seed: 2,
            ..ExperimentConfig::default()
        };
        let rows = run_haar_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 3 * 2);
        for r in &rows {
            assert!(r.ks_ratio >= 0.0 && r.ks_ratio <= 1.0);
            assert!(r.ks_ci_low <= r.ks_ratio && r.ks_ratio <= r.ks_ci_high);
        }
        let ratio = |family: &str, shots: usize| {
            rows.iter()
                .find(|r| r.family == family && r.shots == shots)
                .unwrap()
        };
        // identical pairs stay calibrated
        let calib = ratio("identical", 80);
        assert!(
            1.0 - calib.mean_ks_keep <= 2.0 * cfg.alpha + 0.1,
            "identical rejection {}",
            1.0 - calib.mean_ks_keep
        );
        // more samples never hurt the Gaussian family
        assert!(ratio("mg-haar", 80).ks_ratio >= ratio("mg-haar", 20).ks_ratio);
        // determinism
        let again = run_haar_experiment(&cfg).unwrap();
        assert_eq!(again.len(), rows.len());
        for (a, b) in rows.iter().zip(&again) {
            assert_eq!(a.ks_successes, b.ks_successes);
            assert_eq!(a.es_successes, b.es_successes);
        }
    }

    #[test]
    fn experiment_writes_reproducible_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_grid_config(dir.path());
        cfg.p_c_factors = vec![1.0];
        cfg.gamma_factors = vec![0.0, 1.0];
        cfg.reps = 30;
        cfg.shots = 60;
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let summary = run_experiment_to_dir(&cfg, &out_a).unwrap();
        assert_eq!(summary.rows, 2);
        let csv_a = std::fs::read_to_string(out_a.join("results.csv")).unwrap();
        assert!(csv_a.starts_with("label,"));
        assert_eq!(csv_a.lines().count(), 3);
        let plot = std::fs::read_to_string(out_a.join("plotdata/power_vs_distance.csv")).unwrap();
        assert!(plot.starts_with("diag_distance,"));
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out_a.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(
            manifest["config_sha256"],
            serde_json::json!(cfg.sha256().unwrap())
        );
        assert_eq!(manifest["rows"], serde_json::json!(2));
        assert_eq!(
            manifest["version"],
            serde_json::json!(env!("CARGO_PKG_VERSION"))
        );

        run_experiment_to_dir(&cfg, &out_b).unwrap();
        let csv_b = std::fs::read_to_string(out_b.join("results.csv")).unwrap();
        assert_eq!(
            csv_a, csv_b,
            "identical config and seed must reproduce bytes"
        );
    }
}
