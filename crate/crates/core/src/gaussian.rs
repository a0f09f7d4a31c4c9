//! Covariance-matrix simulation of matchgate circuits.
//!
//! A pure fermionic Gaussian state on n qubits is fully described by the
//! real antisymmetric 2n x 2n matrix `Gamma_ab = i <psi| c_a c_b |psi>`
//! (a != b). Matchgates rotate the four modes of their qubit pair,
//! Pauli words flip mode signs, and Z measurements are rank-2 updates,
//! so every operation a randomized-compiled verification circuit
//! performs costs at most O(n^2). This is the production simulator; the
//! dense backend exists to check it.

use nalgebra::{DMatrix, Matrix4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::circuit::{Circuit, CircuitOp};
use crate::error::{Error, Result};
use crate::noise::{Bindings, PauliChannel};
use crate::pauli::PauliString;

/// Probability floor below which a measurement branch is rejected.
pub const MIN_BRANCH_PROB: f64 = 1e-12;
/// Projections between purity checks.
const PURITY_STRIDE: usize = 16;
/// Purity defect that triggers reorthogonalization.
const PURITY_TRIGGER: f64 = 1e-8;

/// Pure Gaussian state tracked through its Majorana covariance matrix.
#[derive(Debug, Clone)]
pub struct CovarianceState {
    n: usize,
    gamma: DMatrix<f64>,
    projections: usize,
}

impl CovarianceState {
    /// The all-zeros computational state: per-qubit blocks
    /// `[[0, -1], [1, 0]]` on modes (2q, 2q+1).
    pub fn vacuum(n: usize) -> Self {
        let mut gamma = DMatrix::zeros(2 * n, 2 * n);
        for q in 0..n {
            gamma[(2 * q, 2 * q + 1)] = -1.0;
            gamma[(2 * q + 1, 2 * q)] = 1.0;
        }
        CovarianceState {
            n,
            gamma,
            projections: 0,
        }
    }

    /// Vacuum conjugated by a global mode rotation: Gamma = R Gamma0 R^T.
    /// R must be orthogonal within 1e-9.
    pub fn from_orthogonal(n: usize, r: &DMatrix<f64>) -> Result<Self> {
        if r.nrows() != 2 * n || r.ncols() != 2 * n {
            return Err(Error::LengthMismatch(format!(
                "rotation {}x{} for {n} qubits",
                r.nrows(),
                r.ncols()
            )));
        }
        let dev = (r.transpose() * r - DMatrix::identity(2 * n, 2 * n))
            .iter()
            .map(|x| x.abs())
            .fold(0.0, f64::max);
        if dev > 1e-9 {
            return Err(Error::NotOrthogonal(dev));
        }
        let mut state = CovarianceState::vacuum(n);
        state.gamma = r * &state.gamma * r.transpose();
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn entry(&self, a: usize, b: usize) -> f64 {
        self.gamma[(a, b)]
    }

    /// Apply a matchgate on (q, q+1) through its 4x4 mode rotation.
    pub fn apply_rotation4(&mut self, q: usize, r: &Matrix4<f64>) -> Result<()> {
        if q + 1 >= self.n {
            return Err(Error::IndexOutOfRange {
                index: q + 1,
                width: self.n,
            });
        }
        let base = 2 * q;
        let m = 2 * self.n;
        // Gamma <- R Gamma R^T touching only four rows and four columns.
        for c in 0..m {
            let mut v = [0.0; 4];
            for (i, slot) in v.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += r[(i, k)] * self.gamma[(base + k, c)];
                }
                *slot = acc;
            }
            for (i, val) in v.iter().enumerate() {
                self.gamma[(base + i, c)] = *val;
            }
        }
        for rw in 0..m {
            let mut v = [0.0; 4];
            for (j, slot) in v.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += self.gamma[(rw, base + k)] * r[(j, k)];
                }
                *slot = acc;
            }
            for (j, val) in v.iter().enumerate() {
                self.gamma[(rw, base + j)] = *val;
            }
        }
        Ok(())
    }

    /// Conjugate by a Pauli word: modes pick up the word's Majorana
    /// signs, so entries flip wherever exactly one index is flipped.
    pub fn apply_pauli(&mut self, word: &PauliString) -> Result<()> {
        if word.n() != self.n {
            return Err(Error::LengthMismatch(format!(
                "word width {} != {}",
                word.n(),
                self.n
            )));
        }
        let signs = word.majorana_signs();
        let flips: Vec<usize> = signs
            .iter()
            .enumerate()
            .filter(|(_, s)| **s < 0)
            .map(|(a, _)| a)
            .collect();
        self.apply_mode_flips(&flips);
        Ok(())
    }

    fn apply_mode_flips(&mut self, flips: &[usize]) {
        let m = 2 * self.n;
        for &f in flips {
            for c in 0..m {
                self.gamma[(f, c)] = -self.gamma[(f, c)];
            }
            for r in 0..m {
                self.gamma[(r, f)] = -self.gamma[(r, f)];
            }
        }
    }

    /// Probability of reading 1 on qubit k: (1 + Gamma_{2k,2k+1}) / 2.
    pub fn prob_one(&self, k: usize) -> f64 {
        0.5 * (1.0 + self.gamma[(2 * k, 2 * k + 1)])
    }

    /// Project qubit k onto a Z outcome; returns the branch probability.
    ///
    /// With (i, j) = (2k, 2k+1) and lambda = 2 outcome - 1, the
    /// post-measurement covariance is
    /// `Gamma'_ab = Gamma_ab + lambda (Gamma_ib Gamma_ja - Gamma_ia Gamma_jb) / (2p)`
    /// away from the measured pair, whose own block becomes +-1.
    pub fn project_z(&mut self, k: usize, outcome: u8) -> Result<f64> {
        if k >= self.n {
            return Err(Error::IndexOutOfRange {
                index: k,
                width: self.n,
            });
        }
        let i = 2 * k;
        let j = 2 * k + 1;
        let lam = if outcome == 1 { 1.0 } else { -1.0 };
        let p = 0.5 * (1.0 + lam * self.gamma[(i, j)]);
        if p < MIN_BRANCH_PROB {
            return Err(Error::ZeroProbabilityBranch {
                qubit: k,
                outcome,
                prob: p,
            });
        }
        let m = 2 * self.n;
        let gi: Vec<f64> = (0..m).map(|c| self.gamma[(i, c)]).collect();
        let gj: Vec<f64> = (0..m).map(|c| self.gamma[(j, c)]).collect();
        let scale = lam / (2.0 * p);
        for a in 0..m {
            if a == i || a == j {
                continue;
            }
            for b in (a + 1)..m {
                if b == i || b == j {
                    continue;
                }
                let val = self.gamma[(a, b)] + scale * (gi[b] * gj[a] - gi[a] * gj[b]);
                self.gamma[(a, b)] = val;
                self.gamma[(b, a)] = -val;
            }
        }
        for c in 0..m {
            self.gamma[(i, c)] = 0.0;
            self.gamma[(j, c)] = 0.0;
            self.gamma[(c, i)] = 0.0;
            self.gamma[(c, j)] = 0.0;
        }
        self.gamma[(i, j)] = lam;
        self.gamma[(j, i)] = -lam;
        self.projections += 1;
        if self.projections % PURITY_STRIDE == 0 && self.purity_defect() > PURITY_TRIGGER {
            self.reorthogonalize();
        }
        Ok(p)
    }

    /// Sample a Z measurement on qubit k, collapsing the state.
    pub fn measure_z<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Result<u8> {
        let p1 = self.prob_one(k);
        let outcome = if rng.random::<f64>() < p1 { 1 } else { 0 };
        self.project_z(k, outcome)?;
        Ok(outcome)
    }

    /// Max-abs deviation of Gamma Gamma^T from the identity; zero for a
    /// pure Gaussian state.
    pub fn purity_defect(&self) -> f64 {
        (&self.gamma * self.gamma.transpose() - DMatrix::identity(2 * self.n, 2 * self.n))
            .iter()
            .map(|x| x.abs())
            .fold(0.0, f64::max)
    }

    /// Snap Gamma back to the orthogonal antisymmetric manifold via its
    /// polar factor (the polar factor of an antisymmetric matrix is
    /// itself antisymmetric; re-antisymmetrize to kill roundoff).
    fn reorthogonalize(&mut self) {
        let svd = self.gamma.clone().svd(true, true);
        let (u, vt) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
        let q = u * vt;
        self.gamma = (&q - q.transpose()) * 0.5;
    }
}

/// A circuit compiled for repeated weak sampling: matchgates become 4x4
/// mode rotations, Pauli words and channel entries become mode-flip
/// sets, correction tables become per-key flip sets.
pub struct CompiledCircuit {
    width: usize,
    data_width: usize,
    labels: Vec<String>,
    steps: Vec<Step>,
}

struct ChannelSampler {
    cumulative: Vec<f64>,
    flips: Vec<Vec<usize>>,
}

impl ChannelSampler {
    fn new(channel: &PauliChannel) -> Self {
        let mut cumulative = Vec::with_capacity(channel.entries().len());
        let mut flips = Vec::with_capacity(channel.entries().len());
        let mut acc = 0.0;
        for (word, c) in channel.entries() {
            acc += c;
            cumulative.push(acc);
            flips.push(flip_set(word));
        }
        ChannelSampler { cumulative, flips }
    }

    fn sample<'a, R: Rng + ?Sized>(&'a self, rng: &mut R) -> &'a [usize] {
        let total = *self.cumulative.last().expect("non-empty channel");
        let u: f64 = rng.random::<f64>() * total;
        let idx = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.flips.len() - 1);
        &self.flips[idx]
    }
}

fn flip_set(word: &PauliString) -> Vec<usize> {
    word.majorana_signs()
        .iter()
        .enumerate()
        .filter(|(_, s)| **s < 0)
        .map(|(a, _)| a)
        .collect()
}

enum Step {
    Rotate {
        q: usize,
        r: Matrix4<f64>,
    },
    Flips(Vec<usize>),
    Channel(ChannelSampler),
    Measure {
        q: usize,
        label_idx: usize,
        channel: Option<ChannelSampler>,
    },
    Correction {
        key_indices: Vec<usize>,
        /// Flip set per key value, key bits packed first-listed-first.
        by_key: Vec<Vec<usize>>,
    },
}

/// Compile a classically simulable circuit plus its noise bindings.
pub fn compile(circuit: &Circuit, bindings: &Bindings) -> Result<CompiledCircuit> {
    circuit.validate()?;
    let mut labels: Vec<String> = Vec::new();
    let mut steps = Vec::new();
    for (idx, op) in circuit.ops.iter().enumerate() {
        match op {
            CircuitOp::Matchgate { q, gate, .. } => {
                steps.push(Step::Rotate {
                    q: *q,
                    r: gate.orthogonal()?,
                });
                if let Some(ch) = bindings.gate.get(&idx) {
                    steps.push(Step::Channel(ChannelSampler::new(ch)));
                }
            }
            CircuitOp::Pauli { word } => {
                steps.push(Step::Flips(flip_set(word)));
                if let Some(ch) = bindings.gate.get(&idx) {
                    steps.push(Step::Channel(ChannelSampler::new(ch)));
                }
            }
            CircuitOp::MeasureZ { q, label } => {
                let label_idx = labels.len();
                labels.push(label.clone());
                let channel = bindings
                    .measure
                    .get(&idx)
                    .map(|mb| ChannelSampler::new(&mb.channel));
                steps.push(Step::Measure {
                    q: *q,
                    label_idx,
                    channel,
                });
            }
            CircuitOp::Correction {
                gadget,
                keys,
                table,
            } => {
                let key_indices = keys
                    .iter()
                    .map(|k| {
                        labels.iter().position(|l| l == k).ok_or_else(|| {
                            Error::CorrectionLookup(format!(
                                "gadget {gadget}: key {k:?} references an unmeasured label"
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let kbits = keys.len();
                let mut by_key = vec![Vec::new(); 1 << kbits];
                for (key, word) in table {
                    let mut v = 0usize;
                    for (t, ch) in key.chars().enumerate() {
                        if ch == '1' {
                            v |= 1 << (kbits - 1 - t);
                        }
                    }
                    by_key[v] = flip_set(word);
                }
                steps.push(Step::Correction {
                    key_indices,
                    by_key,
                });
            }
            CircuitOp::Cz { .. } | CircuitOp::SingleQubit { .. } => {
                return Err(Error::UnsupportedOp(
                    "weak simulation requires an encoded circuit (matchgates, \
                     Pauli words, measurements and corrections only)"
                        .into(),
                ));
            }
        }
    }
    Ok(CompiledCircuit {
        width: circuit.width(),
        data_width: circuit.data_width(),
        labels,
        steps,
    })
}

impl CompiledCircuit {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data_width(&self) -> usize {
        self.data_width
    }

    /// Run one shot: evolve the vacuum through every step, then read the
    /// data register qubit by qubit.
    pub fn run_shot<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<u8>> {
        let mut state = self.evolve_shot(rng)?;
        let mut bits = Vec::with_capacity(self.data_width);
        for q in 0..self.data_width {
            bits.push(state.measure_z(q, rng)?);
        }
        Ok(bits)
    }

    /// Evolve one shot through all steps without the final readout.
    pub fn evolve_shot<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CovarianceState> {
        let mut state = CovarianceState::vacuum(self.width);
        let mut outcomes = vec![0u8; self.labels.len()];
        for step in &self.steps {
            match step {
                Step::Rotate { q, r } => state.apply_rotation4(*q, r)?,
                Step::Flips(flips) => state.apply_mode_flips(flips),
                Step::Channel(sampler) => {
                    let flips = sampler.sample(rng).to_vec();
                    state.apply_mode_flips(&flips);
                }
                Step::Measure {
                    q,
                    label_idx,
                    channel,
                } => {
                    if let Some(sampler) = channel {
                        let flips = sampler.sample(rng).to_vec();
                        state.apply_mode_flips(&flips);
                    }
                    outcomes[*label_idx] = state.measure_z(*q, rng)?;
                }
                Step::Correction {
                    key_indices,
                    by_key,
                } => {
                    let mut v = 0usize;
                    let kbits = key_indices.len();
                    for (t, &li) in key_indices.iter().enumerate() {
                        if outcomes[li] == 1 {
                            v |= 1 << (kbits - 1 - t);
                        }
                    }
                    let flips = by_key[v].clone();
                    state.apply_mode_flips(&flips);
                }
            }
        }
        Ok(state)
    }
}

/// Weakly sample `shots` data-register bitstrings from a noisy
/// randomized-compiled circuit. Each shot draws its own RNG stream from
/// the seed, so results do not depend on thread scheduling.
pub fn weak_sample(
    circuit: &Circuit,
    bindings: &Bindings,
    shots: usize,
    seed: u64,
) -> Result<Vec<Vec<u8>>> {
    let compiled = compile(circuit, bindings)?;
    crate::par::map_indexed(shots, |shot| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(shot as u64);
        compiled.run_shot(&mut rng)
    })
    .into_iter()
    .collect()
}

/// Sample full bitstrings directly from a prepared Gaussian state.
pub fn sample_from_state(state: &CovarianceState, shots: usize, seed: u64) -> Result<Vec<Vec<u8>>> {
    crate::par::map_indexed(shots, |shot| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(shot as u64);
        let mut s = state.clone();
        let mut bits = Vec::with_capacity(state.n());
        for q in 0..state.n() {
            bits.push(s.measure_z(q, &mut rng)?);
        }
        Ok(bits)
    })
    .into_iter()
    .collect()
}

/// Evolve the vacuum through a measurement-free simulable circuit.
pub fn evolve_circuit(circuit: &Circuit) -> Result<CovarianceState> {
    let mut state = CovarianceState::vacuum(circuit.width());
    for op in &circuit.ops {
        match op {
            CircuitOp::Matchgate { q, gate, .. } => {
                state.apply_rotation4(*q, &gate.orthogonal()?)?
            }
            CircuitOp::Pauli { word } => state.apply_pauli(word)?,
            other => {
                return Err(Error::UnsupportedOp(format!(
                    "covariance evolution of {other:?}"
                )))
            }
        }
    }
    Ok(state)
}

/// Exact output distribution of a Gaussian state over the first `width`
/// qubits, by walking the binary tree of conditional probabilities with
/// one rank-2 projection per edge. Distributionally identical to weak
/// sampling, at cost 2^(width+1) O(n^2) updates.
pub fn output_distribution(state: &CovarianceState, width: usize) -> Result<Vec<f64>> {
    if width > state.n() {
        return Err(Error::IndexOutOfRange {
            index: width,
            width: state.n(),
        });
    }
    let mut out = vec![0.0; 1 << width];
    fill_distribution(state, 0, width, 1.0, 0, &mut out)?;
    let total: f64 = out.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!(
            "tree probabilities sum to {total}"
        )));
    }
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

fn fill_distribution(
    state: &CovarianceState,
    q: usize,
    width: usize,
    weight: f64,
    idx: usize,
    out: &mut [f64],
) -> Result<()> {
    if q == width {
        out[idx] = weight;
        return Ok(());
    }
    let p1 = state.prob_one(q);
    for outcome in [0u8, 1u8] {
        let p = if outcome == 1 { p1 } else { 1.0 - p1 };
        if p < MIN_BRANCH_PROB || weight * p < 1e-15 {
            continue;
        }
        let mut child = state.clone();
        child.project_z(q, outcome)?;
        let bit = (outcome as usize) << (width - 1 - q);
        fill_distribution(&child, q + 1, width, weight * p, idx | bit, out)?;
    }
    Ok(())
}
