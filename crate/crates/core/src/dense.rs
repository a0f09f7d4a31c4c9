//! Dense statevector and density-matrix simulation.
//!
//! This is the exact reference backend: it scales exponentially and is
//! meant for validating the covariance-matrix simulator and for
//! computing ground-truth output states of noisy randomized-compiled
//! circuits at small width. Basis-state index bit `n-1-q` holds qubit
//! `q` (qubit 0 is the most significant bit).

use std::collections::BTreeMap;
use std::io::{Read as _, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::circuit::{Circuit, CircuitOp};
use crate::error::{Error, Result};
use crate::matchgate::C64;
use crate::noise::{Bindings, PauliChannel};
use crate::pauli::PauliString;

/// Branches with probability below this are dropped during enumeration.
pub const BRANCH_CUTOFF: f64 = 1e-14;
/// Hard cap on simultaneously live branches in `rc_output_state`.
pub const BRANCH_BUDGET: usize = 1 << 16;

const MAGIC: &[u8; 8] = b"MGVSTATE";

/// Pure state on `n` qubits as a flat amplitude vector of length 2^n.
#[derive(Debug, Clone)]
pub struct DenseVector {
    n: usize,
    amps: Vec<C64>,
}

impl DenseVector {
    pub fn zero_state(n: usize) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n];
        amps[0] = C64::new(1.0, 0.0);
        DenseVector { n, amps }
    }

    pub fn from_amps(n: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != 1 << n {
            return Err(Error::LengthMismatch(format!(
                "{} amplitudes for {n} qubits",
                amps.len()
            )));
        }
        Ok(DenseVector { n, amps })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amps(&self) -> &[C64] {
        &self.amps
    }

    pub fn as_dvector(&self) -> DVector<C64> {
        DVector::from_column_slice(&self.amps)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalize(&mut self) {
        let norm = self.norm_sqr().sqrt();
        if norm > 0.0 {
            for a in &mut self.amps {
                *a /= C64::new(norm, 0.0);
            }
        }
    }

    pub fn inner(&self, other: &DenseVector) -> C64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Apply a 2x2 unitary on qubit `q`.
    pub fn apply_single(&mut self, q: usize, u: &Matrix2<C64>) -> Result<()> {
        self.check_qubit(q)?;
        let shift = self.n - 1 - q;
        let bit = 1usize << shift;
        for base in 0..self.amps.len() {
            if base & bit != 0 {
                continue;
            }
            let a0 = self.amps[base];
            let a1 = self.amps[base | bit];
            self.amps[base] = u[(0, 0)] * a0 + u[(0, 1)] * a1;
            self.amps[base | bit] = u[(1, 0)] * a0 + u[(1, 1)] * a1;
        }
        Ok(())
    }

    /// Apply a 4x4 unitary on the adjacent pair (q, q+1); the first
    /// qubit of the pair is the more significant bit of the local index.
    pub fn apply_pair(&mut self, q: usize, u: &Matrix4<C64>) -> Result<()> {
        self.check_qubit(q + 1)?;
        let s2 = self.n - 2 - q;
        let mask = 3usize << s2;
        for base in 0..self.amps.len() {
            if base & mask != 0 {
                continue;
            }
            let mut local = [C64::new(0.0, 0.0); 4];
            for (k, slot) in local.iter_mut().enumerate() {
                *slot = self.amps[base | (k << s2)];
            }
            for (i, row) in u.row_iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..4 {
                    acc += row[k] * local[k];
                }
                self.amps[base | (i << s2)] = acc;
            }
        }
        Ok(())
    }

    pub fn apply_cz(&mut self, a: usize, b: usize) -> Result<()> {
        self.check_qubit(a)?;
        self.check_qubit(b)?;
        let bit_a = 1usize << (self.n - 1 - a);
        let bit_b = 1usize << (self.n - 1 - b);
        for (idx, amp) in self.amps.iter_mut().enumerate() {
            if idx & bit_a != 0 && idx & bit_b != 0 {
                *amp = -*amp;
            }
        }
        Ok(())
    }

    /// Apply a Pauli word including its exact phase (i per Y letter).
    pub fn apply_pauli(&mut self, word: &PauliString) -> Result<()> {
        if word.n() != self.n {
            return Err(Error::LengthMismatch(format!(
                "word width {} != {}",
                word.n(),
                self.n
            )));
        }
        let xm = word.x_mask() as usize;
        let zm = word.z_mask() as usize;
        let ys = word
            .letters()
            .iter()
            .filter(|p| p.has_x() && p.has_z())
            .count();
        let y_phase = C64::new(0.0, 1.0).powu(ys as u32);
        let mut out = vec![C64::new(0.0, 0.0); self.amps.len()];
        for (idx, amp) in self.amps.iter().enumerate() {
            let sign = if (idx & zm).count_ones() % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            out[idx ^ xm] = y_phase * C64::new(sign, 0.0) * amp;
        }
        self.amps = out;
        Ok(())
    }

    /// Apply a unitary on an arbitrary ascending qubit set (gather /
    /// scatter); used for gadget table derivation and small oracles.
    pub fn apply_on(&mut self, qubits: &[usize], u: &DMatrix<C64>) -> Result<()> {
        let k = qubits.len();
        if u.nrows() != 1 << k || u.ncols() != 1 << k {
            return Err(Error::LengthMismatch(format!(
                "matrix {}x{} on {k} qubits",
                u.nrows(),
                u.ncols()
            )));
        }
        for &q in qubits {
            self.check_qubit(q)?;
        }
        let shifts: Vec<usize> = qubits.iter().map(|&q| self.n - 1 - q).collect();
        let group_mask: usize = shifts.iter().map(|&s| 1usize << s).sum();
        let mut local = vec![C64::new(0.0, 0.0); 1 << k];
        for base in 0..self.amps.len() {
            if base & group_mask != 0 {
                continue;
            }
            for (j, slot) in local.iter_mut().enumerate() {
                let mut idx = base;
                for (pos, &s) in shifts.iter().enumerate() {
                    if (j >> (k - 1 - pos)) & 1 == 1 {
                        idx |= 1 << s;
                    }
                }
                *slot = self.amps[idx];
            }
            for i in 0..(1 << k) {
                let mut idx = base;
                for (pos, &s) in shifts.iter().enumerate() {
                    if (i >> (k - 1 - pos)) & 1 == 1 {
                        idx |= 1 << s;
                    }
                }
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..(1 << k) {
                    acc += u[(i, j)] * local[j];
                }
                self.amps[idx] = acc;
            }
        }
        Ok(())
    }

    /// Probability of reading outcome 1 on qubit q.
    pub fn prob_one(&self, q: usize) -> Result<f64> {
        self.check_qubit(q)?;
        let bit = 1usize << (self.n - 1 - q);
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(idx, _)| idx & bit != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Project qubit q onto `outcome` without renormalizing; returns the
    /// branch probability.
    pub fn project_z(&mut self, q: usize, outcome: u8) -> Result<f64> {
        self.check_qubit(q)?;
        let bit = 1usize << (self.n - 1 - q);
        let keep = if outcome == 1 { bit } else { 0 };
        let mut p = 0.0;
        for (idx, amp) in self.amps.iter_mut().enumerate() {
            if idx & bit == keep {
                p += amp.norm_sqr();
            } else {
                *amp = C64::new(0.0, 0.0);
            }
        }
        Ok(p)
    }

    /// Measure qubit q, collapsing and renormalizing.
    pub fn measure_z<R: Rng + ?Sized>(&mut self, q: usize, rng: &mut R) -> Result<u8> {
        let p1 = self.prob_one(q)?;
        let outcome = if rng.random::<f64>() < p1 { 1 } else { 0 };
        let p = self.project_z(q, outcome)?;
        if p <= 0.0 {
            return Err(Error::ZeroProbabilityBranch {
                qubit: q,
                outcome,
                prob: p,
            });
        }
        let scale = C64::new(1.0 / p.sqrt(), 0.0);
        for a in &mut self.amps {
            *a *= scale;
        }
        Ok(outcome)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n {
            return Err(Error::IndexOutOfRange {
                index: q,
                width: self.n,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_dump(path, 0, self.n, &self.amps)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (kind, n, data) = load_dump(path)?;
        if kind != 0 {
            return Err(Error::MalformedDump(format!(
                "expected vector dump, found kind {kind}"
            )));
        }
        DenseVector::from_amps(n, data)
    }
}

/// Mixed state on `n` qubits as a row-major 2^n x 2^n matrix.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    n: usize,
    rho: Vec<C64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix {
            n,
            rho: vec![C64::new(0.0, 0.0); 1 << (2 * n)],
        }
    }

    pub fn from_pure(psi: &DenseVector) -> Self {
        let dim = 1usize << psi.n;
        let mut rho = vec![C64::new(0.0, 0.0); dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                rho[r * dim + c] = psi.amps[r] * psi.amps[c].conj();
            }
        }
        DenseMatrix { n: psi.n, rho }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn entry(&self, r: usize, c: usize) -> C64 {
        self.rho[r * self.dim() + c]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.rho[i * self.dim() + i].re)
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.rho {
            *v *= C64::new(s, 0.0);
        }
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) {
        for (a, b) in self.rho.iter_mut().zip(&other.rho) {
            *a += b;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.rho[i * self.dim() + i].re)
            .collect()
    }

    pub fn as_dmatrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.dim(), self.dim(), |r, c| self.rho[r * self.dim() + c])
    }

    /// rho -> U rho U^dag for U on an ascending qubit set.
    pub fn apply_on(&mut self, qubits: &[usize], u: &DMatrix<C64>) -> Result<()> {
        let dim = self.dim();
        // Columns of rho are states: apply U to each column, then to each
        // row of the result with U conjugated.
        let mut work = DenseVector {
            n: self.n,
            amps: vec![C64::new(0.0, 0.0); dim],
        };
        for c in 0..dim {
            for r in 0..dim {
                work.amps[r] = self.rho[r * dim + c];
            }
            work.apply_on(qubits, u)?;
            for r in 0..dim {
                self.rho[r * dim + c] = work.amps[r];
            }
        }
        let u_conj = u.map(|z| z.conj());
        for r in 0..dim {
            for c in 0..dim {
                work.amps[c] = self.rho[r * dim + c];
            }
            work.apply_on(qubits, &u_conj)?;
            for c in 0..dim {
                self.rho[r * dim + c] = work.amps[c];
            }
        }
        Ok(())
    }

    pub fn apply_pair(&mut self, q: usize, u: &Matrix4<C64>) -> Result<()> {
        let wide = DMatrix::from_fn(4, 4, |i, j| u[(i, j)]);
        self.apply_on(&[q, q + 1], &wide)
    }

    pub fn apply_cz(&mut self, a: usize, b: usize) -> Result<()> {
        let dim = self.dim();
        let bit_a = 1usize << (self.n - 1 - a);
        let bit_b = 1usize << (self.n - 1 - b);
        let flips = |idx: usize| idx & bit_a != 0 && idx & bit_b != 0;
        for r in 0..dim {
            for c in 0..dim {
                if flips(r) != flips(c) {
                    self.rho[r * dim + c] = -self.rho[r * dim + c];
                }
            }
        }
        Ok(())
    }

    /// rho -> P rho P (Pauli conjugation; the word's phase cancels).
    pub fn apply_pauli(&mut self, word: &PauliString) -> Result<()> {
        if word.n() != self.n {
            return Err(Error::LengthMismatch(format!(
                "word width {} != {}",
                word.n(),
                self.n
            )));
        }
        let dim = self.dim();
        let xm = word.x_mask() as usize;
        let zm = word.z_mask() as usize;
        let mut out = vec![C64::new(0.0, 0.0); self.rho.len()];
        for r in 0..dim {
            for c in 0..dim {
                let sign = if ((r ^ c) & zm).count_ones() % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                out[(r ^ xm) * dim + (c ^ xm)] = C64::new(sign, 0.0) * self.rho[r * dim + c];
            }
        }
        self.rho = out;
        Ok(())
    }

    /// Apply a Pauli channel, grouping entries by their X-mask so the
    /// cost is (number of distinct flip patterns) x 4^n.
    pub fn apply_pauli_channel(&mut self, channel: &PauliChannel) -> Result<()> {
        if channel.n() != self.n {
            return Err(Error::LengthMismatch(format!(
                "channel width {} != {}",
                channel.n(),
                self.n
            )));
        }
        let dim = self.dim();
        let mut groups: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for (word, c) in channel.entries() {
            groups
                .entry(word.x_mask() as usize)
                .or_default()
                .push((word.z_mask() as usize, *c));
        }
        let mut out = vec![C64::new(0.0, 0.0); self.rho.len()];
        for (xm, zs) in groups {
            // The phase weight of a group depends only on d = r ^ c, so tabulate
            // it once per group instead of re-deriving it for every entry.
            let mut weight = vec![0.0f64; dim];
            for (d, w) in weight.iter_mut().enumerate() {
                for &(zm, coeff) in &zs {
                    if (d & zm).count_ones() % 2 == 0 {
                        *w += coeff;
                    } else {
                        *w -= coeff;
                    }
                }
            }
            for r in 0..dim {
                for c in 0..dim {
                    out[(r ^ xm) * dim + (c ^ xm)] += weight[r ^ c] * self.rho[r * dim + c];
                }
            }
        }
        self.rho = out;
        Ok(())
    }

    /// Project qubit q onto `outcome` (unnormalized); returns the branch
    /// probability.
    pub fn project_z(&mut self, q: usize, outcome: u8) -> Result<f64> {
        if q >= self.n {
            return Err(Error::IndexOutOfRange {
                index: q,
                width: self.n,
            });
        }
        let dim = self.dim();
        let bit = 1usize << (self.n - 1 - q);
        let keep = if outcome == 1 { bit } else { 0 };
        let mut p = 0.0;
        for r in 0..dim {
            for c in 0..dim {
                if r & bit == keep && c & bit == keep {
                    if r == c {
                        p += self.rho[r * dim + c].re;
                    }
                } else {
                    self.rho[r * dim + c] = C64::new(0.0, 0.0);
                }
            }
        }
        Ok(p)
    }

    /// Trace out everything except the first `keep` qubits.
    pub fn partial_trace_to_prefix(&self, keep: usize) -> Result<DenseMatrix> {
        if keep > self.n {
            return Err(Error::IndexOutOfRange {
                index: keep,
                width: self.n,
            });
        }
        let m = self.n - keep;
        let dim_keep = 1usize << keep;
        let dim_rest = 1usize << m;
        let dim = self.dim();
        let mut out = DenseMatrix::zeros(keep);
        for r in 0..dim_keep {
            for c in 0..dim_keep {
                let mut acc = C64::new(0.0, 0.0);
                for t in 0..dim_rest {
                    acc += self.rho[((r << m) | t) * dim + ((c << m) | t)];
                }
                out.rho[r * dim_keep + c] = acc;
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_dump(path, 1, self.n, &self.rho)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (kind, n, data) = load_dump(path)?;
        if kind != 1 {
            return Err(Error::MalformedDump(format!(
                "expected matrix dump, found kind {kind}"
            )));
        }
        if data.len() != 1 << (2 * n) {
            return Err(Error::MalformedDump(format!(
                "matrix dump length {} for {n} qubits",
                data.len()
            )));
        }
        Ok(DenseMatrix { n, rho: data })
    }
}

/// Half the trace norm of rho - sigma.
pub fn trace_distance(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if a.n != b.n {
        return Err(Error::LengthMismatch(format!(
            "states on {} and {} qubits",
            a.n, b.n
        )));
    }
    let diff = a.as_dmatrix() - b.as_dmatrix();
    // The difference of density matrices is Hermitian.
    let herm_dev = (&diff - diff.adjoint())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if herm_dev > 1e-9 {
        return Err(Error::InvalidDistribution(format!(
            "difference is not Hermitian (deviation {herm_dev:.3e})"
        )));
    }
    let sym = (&diff + diff.adjoint()) * C64::new(0.5, 0.0);
    let eig = sym.symmetric_eigenvalues();
    Ok(0.5 * eig.iter().map(|l| l.abs()).sum::<f64>())
}

/// Euclidean distance between two diagonal probability vectors.
pub fn diag_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(format!(
            "diagonals of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter()
        .zip(q)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Draw `m` basis-state indices from a probability vector.
pub fn sample_indices<R: Rng + ?Sized>(probs: &[f64], m: usize, rng: &mut R) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in probs {
        acc += p.max(0.0);
        cumulative.push(acc);
    }
    let total = acc;
    (0..m)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            cumulative.partition_point(|&c| c <= u).min(probs.len() - 1)
        })
        .collect()
}

/// Index -> bit row under the register convention (qubit 0 first).
pub fn index_to_bits(idx: usize, n: usize) -> Vec<u8> {
    (0..n).map(|q| ((idx >> (n - 1 - q)) & 1) as u8).collect()
}

fn apply_gate_to_vector(psi: &mut DenseVector, op: &CircuitOp) -> Result<()> {
    match op {
        CircuitOp::Matchgate { q, gate, .. } => psi.apply_pair(*q, &gate.matrix()),
        CircuitOp::Cz { a, b } => psi.apply_cz(*a, *b),
        CircuitOp::SingleQubit { q, u } => psi.apply_single(*q, u),
        CircuitOp::Pauli { word } => psi.apply_pauli(word),
        _ => Err(Error::UnsupportedOp(
            "measurement inside unitary evolution".into(),
        )),
    }
}

/// Run a measurement-free circuit on |0...0> (or a supplied state).
pub fn run_unitary(circuit: &Circuit, initial: Option<DenseVector>) -> Result<DenseVector> {
    let mut psi = match initial {
        Some(p) => {
            if p.n() != circuit.width() {
                return Err(Error::LengthMismatch(format!(
                    "initial state width {} != circuit width {}",
                    p.n(),
                    circuit.width()
                )));
            }
            p
        }
        None => DenseVector::zero_state(circuit.width()),
    };
    for op in &circuit.ops {
        apply_gate_to_vector(&mut psi, op)?;
    }
    Ok(psi)
}

/// One resolved measurement branch of a noiseless adaptive circuit.
#[derive(Debug, Clone)]
pub struct PureBranch {
    pub outcomes: BTreeMap<String, u8>,
    pub probability: f64,
    pub state: DenseVector,
}

/// Enumerate every measurement branch of a noiseless circuit, applying
/// adaptive corrections along the way. States come back normalized.
pub fn enumerate_pure_branches(circuit: &Circuit) -> Result<Vec<PureBranch>> {
    struct Live {
        outcomes: BTreeMap<String, u8>,
        weight: f64,
        psi: DenseVector,
    }
    let mut live = vec![Live {
        outcomes: BTreeMap::new(),
        weight: 1.0,
        psi: DenseVector::zero_state(circuit.width()),
    }];
    for op in &circuit.ops {
        match op {
            CircuitOp::MeasureZ { q, label } => {
                let mut next = Vec::with_capacity(live.len() * 2);
                for branch in live {
                    for outcome in [0u8, 1u8] {
                        let mut psi = branch.psi.clone();
                        let p = psi.project_z(*q, outcome)?;
                        let w = branch.weight * p;
                        if w < BRANCH_CUTOFF {
                            continue;
                        }
                        let scale = C64::new(1.0 / p.sqrt(), 0.0);
                        for a in &mut psi.amps {
                            *a *= scale;
                        }
                        let mut outcomes = branch.outcomes.clone();
                        outcomes.insert(label.clone(), outcome);
                        next.push(Live {
                            outcomes,
                            weight: w,
                            psi,
                        });
                    }
                    if next.len() > BRANCH_BUDGET {
                        return Err(Error::InvalidConfig(format!(
                            "branch budget {BRANCH_BUDGET} exceeded"
                        )));
                    }
                }
                live = next;
            }
            CircuitOp::Correction {
                gadget,
                keys,
                table,
            } => {
                for branch in &mut live {
                    let key: String = keys
                        .iter()
                        .map(|k| {
                            branch
                                .outcomes
                                .get(k)
                                .map(|b| char::from(b'0' + b))
                                .ok_or_else(|| {
                                    Error::CorrectionLookup(format!(
                                        "gadget {gadget}: outcome {k:?} not yet recorded"
                                    ))
                                })
                        })
                        .collect::<Result<String>>()?;
                    let word = table.get(&key).ok_or_else(|| {
                        Error::CorrectionLookup(format!(
                            "gadget {gadget}: no entry for outcome key {key:?}"
                        ))
                    })?;
                    branch.psi.apply_pauli(word)?;
                }
            }
            other => {
                for branch in &mut live {
                    apply_gate_to_vector(&mut branch.psi, other)?;
                }
            }
        }
    }
    Ok(live
        .into_iter()
        .map(|b| PureBranch {
            outcomes: b.outcomes,
            probability: b.weight,
            state: b.psi,
        })
        .collect())
}

fn apply_correction_matrix(
    rho: &mut DenseMatrix,
    outcomes: &BTreeMap<String, u8>,
    gadget: usize,
    keys: &[String],
    table: &BTreeMap<String, PauliString>,
) -> Result<()> {
    let key: String = keys
        .iter()
        .map(|k| {
            outcomes
                .get(k)
                .map(|b| char::from(b'0' + b))
                .ok_or_else(|| {
                    Error::CorrectionLookup(format!(
                        "gadget {gadget}: outcome {k:?} not yet recorded"
                    ))
                })
        })
        .collect::<Result<String>>()?;
    let word = table.get(&key).ok_or_else(|| {
        Error::CorrectionLookup(format!("gadget {gadget}: no entry for outcome key {key:?}"))
    })?;
    rho.apply_pauli(word)
}

/// Exact mixed-state output of a noisy randomized-compiled circuit,
/// reduced to the data register: all measurement branches are followed
/// (with weights carried unnormalized), each gate channel is applied
/// right after its gate, and measurement-error channels act just before
/// their projector.
pub fn rc_output_state(circuit: &Circuit, bindings: &Bindings) -> Result<DenseMatrix> {
    struct Live {
        outcomes: BTreeMap<String, u8>,
        rho: DenseMatrix,
    }
    let n = circuit.width();
    let mut live = vec![Live {
        outcomes: BTreeMap::new(),
        rho: DenseMatrix::from_pure(&DenseVector::zero_state(n)),
    }];
    for (idx, op) in circuit.ops.iter().enumerate() {
        match op {
            CircuitOp::MeasureZ { q, label } => {
                let mut next = Vec::with_capacity(live.len() * 2);
                for branch in live {
                    let mut noisy = branch.rho;
                    if let Some(mb) = bindings.measure.get(&idx) {
                        noisy.apply_pauli_channel(&mb.channel)?;
                    }
                    for outcome in [0u8, 1u8] {
                        let mut rho = noisy.clone();
                        let p = rho.project_z(*q, outcome)?;
                        if p < BRANCH_CUTOFF {
                            continue;
                        }
                        let mut outcomes = branch.outcomes.clone();
                        outcomes.insert(label.clone(), outcome);
                        next.push(Live { outcomes, rho });
                    }
                    if next.len() > BRANCH_BUDGET {
                        return Err(Error::InvalidConfig(format!(
                            "branch budget {BRANCH_BUDGET} exceeded"
                        )));
                    }
                }
                live = next;
            }
            CircuitOp::Correction {
                gadget,
                keys,
                table,
            } => {
                for branch in &mut live {
                    apply_correction_matrix(
                        &mut branch.rho,
                        &branch.outcomes,
                        *gadget,
                        keys,
                        table,
                    )?;
                }
            }
            CircuitOp::Matchgate { q, gate, .. } => {
                for branch in &mut live {
                    branch.rho.apply_pair(*q, &gate.matrix())?;
                    if let Some(ch) = bindings.gate.get(&idx) {
                        branch.rho.apply_pauli_channel(ch)?;
                    }
                }
            }
            CircuitOp::Cz { a, b } => {
                for branch in &mut live {
                    branch.rho.apply_cz(*a, *b)?;
                    if let Some(ch) = bindings.gate.get(&idx) {
                        branch.rho.apply_pauli_channel(ch)?;
                    }
                }
            }
            CircuitOp::SingleQubit { q, u } => {
                let wide = DMatrix::from_fn(2, 2, |i, j| u[(i, j)]);
                for branch in &mut live {
                    branch.rho.apply_on(&[*q], &wide)?;
                    if let Some(ch) = bindings.gate.get(&idx) {
                        branch.rho.apply_pauli_channel(ch)?;
                    }
                }
            }
            CircuitOp::Pauli { word } => {
                for branch in &mut live {
                    branch.rho.apply_pauli(word)?;
                }
            }
        }
    }
    let mut total = DenseMatrix::zeros(n);
    for branch in live {
        total.add_assign(&branch.rho);
    }
    total.partial_trace_to_prefix(circuit.data_width())
}

/// Monte-Carlo estimate of the same output state from `shots` pure
/// trajectories: channels are unraveled by sampling one Pauli word per
/// gate (and per measurement channel) and measurement outcomes are
/// sampled, not enumerated.
pub fn mc_rc_output_state(
    circuit: &Circuit,
    bindings: &Bindings,
    shots: usize,
    seed: u64,
) -> Result<DenseMatrix> {
    let n = circuit.width();
    let chunks = crate::par::map_indexed(shots, |shot| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(shot as u64);
        run_trajectory(circuit, bindings, &mut rng)
    });
    let mut total = DenseMatrix::zeros(circuit.data_width());
    for psi in chunks {
        let psi = psi?;
        debug_assert_eq!(psi.n(), n);
        let rho = DenseMatrix::from_pure(&psi);
        total.add_assign(&rho.partial_trace_to_prefix(circuit.data_width())?);
    }
    total.scale(1.0 / shots as f64);
    Ok(total)
}

fn run_trajectory<R: Rng + ?Sized>(
    circuit: &Circuit,
    bindings: &Bindings,
    rng: &mut R,
) -> Result<DenseVector> {
    let mut psi = DenseVector::zero_state(circuit.width());
    let mut outcomes: BTreeMap<String, u8> = BTreeMap::new();
    for (idx, op) in circuit.ops.iter().enumerate() {
        match op {
            CircuitOp::MeasureZ { q, label } => {
                if let Some(mb) = bindings.measure.get(&idx) {
                    let word = mb.channel.sample(rng).clone();
                    psi.apply_pauli(&word)?;
                }
                let outcome = psi.measure_z(*q, rng)?;
                outcomes.insert(label.clone(), outcome);
            }
            CircuitOp::Correction {
                gadget,
                keys,
                table,
            } => {
                let key: String = keys
                    .iter()
                    .map(|k| {
                        outcomes
                            .get(k)
                            .map(|b| char::from(b'0' + b))
                            .ok_or_else(|| {
                                Error::CorrectionLookup(format!(
                                    "gadget {gadget}: outcome {k:?} not yet recorded"
                                ))
                            })
                    })
                    .collect::<Result<String>>()?;
                let word = table.get(&key).ok_or_else(|| {
                    Error::CorrectionLookup(format!(
                        "gadget {gadget}: no entry for outcome key {key:?}"
                    ))
                })?;
                psi.apply_pauli(word)?;
            }
            other => {
                apply_gate_to_vector(&mut psi, other)?;
                if let Some(ch) = bindings.gate.get(&idx) {
                    let word = ch.sample(rng).clone();
                    psi.apply_pauli(&word)?;
                }
            }
        }
    }
    Ok(psi)
}

fn save_dump(path: &Path, kind: u8, n: usize, data: &[C64]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let mut header = [0u8; 16];
    header[..8].copy_from_slice(MAGIC);
    header[8] = kind;
    header[9] = n as u8;
    file.write_all(&header)?;
    let mut buf = Vec::with_capacity(data.len() * 16);
    for z in data {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

fn load_dump(path: &Path) -> Result<(u8, usize, Vec<C64>)> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)?;
    if &header[..8] != MAGIC {
        return Err(Error::MalformedDump("bad magic bytes".into()));
    }
    let kind = header[8];
    let n = header[9] as usize;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)?;
    if raw.len() % 16 != 0 {
        return Err(Error::MalformedDump(format!(
            "payload length {} is not a multiple of 16",
            raw.len()
        )));
    }
    let data = raw
        .chunks_exact(16)
        .map(|c| {
            C64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok((kind, n, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matchgate::Matchgate;
    use crate::oracle;
    use crate::pauli::PauliString;
    use approx::assert_abs_diff_eq;

    fn random_circuit(n: usize, gates: usize, seed: u64) -> Circuit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = Circuit::new(n);
        for _ in 0..gates {
            let q = rng.random_range(0..n - 1);
            let u1 = oracle::haar_unitary(2, &mut rng);
            let mut u2 = oracle::haar_unitary(2, &mut rng);
            // Align determinants so (u1, u2) form a valid gate.
            let d1 = u1[(0, 0)] * u1[(1, 1)] - u1[(0, 1)] * u1[(1, 0)];
            let d2 = u2[(0, 0)] * u2[(1, 1)] - u2[(0, 1)] * u2[(1, 0)];
            let phase = (d1 / d2).sqrt();
            u2 *= phase;
            let g = Matchgate::from_blocks(
                &Matrix2::new(u1[(0, 0)], u1[(0, 1)], u1[(1, 0)], u1[(1, 1)]),
                &Matrix2::new(u2[(0, 0)], u2[(0, 1)], u2[(1, 0)], u2[(1, 1)]),
            )
            .unwrap();
            c.push_matchgate(q, g);
        }
        c
    }

    #[test]
    fn matchgate_application_matches_embedded_unitary() {
        let c = random_circuit(4, 6, 3);
        let psi = run_unitary(&c, None).unwrap();
        // Oracle: multiply embedded 16x16 matrices.
        let dim = 16;
        let mut full = DMatrix::<C64>::identity(dim, dim);
        for op in &c.ops {
            if let CircuitOp::Matchgate { q, gate, .. } = op {
                let wide = DMatrix::from_fn(4, 4, |i, j| gate.matrix()[(i, j)]);
                full = oracle::embed_unitary(4, &[*q, *q + 1], &wide) * full;
            }
        }
        for idx in 0..dim {
            assert_abs_diff_eq!(psi.amps()[idx].re, full[(idx, 0)].re, epsilon = 1e-12);
            assert_abs_diff_eq!(psi.amps()[idx].im, full[(idx, 0)].im, epsilon = 1e-12);
        }
    }

    #[test]
    fn pauli_application_matches_oracle_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let psi0 = oracle::random_state(3, &mut rng);
        let word: PauliString = "XYZ".parse().unwrap();
        let mut psi = DenseVector::from_amps(3, psi0.iter().copied().collect()).unwrap();
        psi.apply_pauli(&word).unwrap();
        let expect = oracle::pauli_word_matrix(&word) * DVector::from_column_slice(&psi0);
        for idx in 0..8 {
            assert_abs_diff_eq!(psi.amps()[idx].re, expect[idx].re, epsilon = 1e-12);
            assert_abs_diff_eq!(psi.amps()[idx].im, expect[idx].im, epsilon = 1e-12);
        }
    }

    #[test]
    fn cz_is_diagonal_sign() {
        let mut psi = DenseVector::zero_state(2);
        psi.apply_single(0, &crate::matchgate::hadamard2()).unwrap();
        psi.apply_single(1, &crate::matchgate::hadamard2()).unwrap();
        psi.apply_cz(0, 1).unwrap();
        let a = psi.amps();
        assert_abs_diff_eq!(a[0].re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(a[3].re, -0.5, epsilon = 1e-15);
    }

    #[test]
    fn measurement_statistics_match_probabilities() {
        let mut base = DenseVector::zero_state(1);
        // cos(0.4)|0> + sin(0.4)|1>.
        let u = Matrix2::new(
            C64::new(0.4f64.cos(), 0.0),
            C64::new(-(0.4f64.sin()), 0.0),
            C64::new(0.4f64.sin(), 0.0),
            C64::new(0.4f64.cos(), 0.0),
        );
        base.apply_single(0, &u).unwrap();
        let p1 = base.prob_one(0).unwrap();
        assert_abs_diff_eq!(p1, 0.4f64.sin().powi(2), epsilon = 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ones = 0u32;
        for _ in 0..4000 {
            let mut psi = base.clone();
            ones += psi.measure_z(0, &mut rng).unwrap() as u32;
        }
        assert!((ones as f64 / 4000.0 - p1).abs() < 0.02);
    }

    #[test]
    fn pauli_channel_on_matrix_matches_term_by_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let psi = oracle::random_state(3, &mut rng);
        let amps: Vec<C64> = psi.iter().copied().collect();
        let base = DenseMatrix::from_pure(&DenseVector::from_amps(3, amps).unwrap());
        let channel = crate::noise::crosstalk_channel(3, 0, 2, 0.3).unwrap();
        let mut fast = base.clone();
        fast.apply_pauli_channel(&channel).unwrap();
        let mut slow = DenseMatrix::zeros(3);
        for (word, c) in channel.entries() {
            let mut t = base.clone();
            t.apply_pauli(word).unwrap();
            t.scale(*c);
            slow.add_assign(&t);
        }
        for r in 0..8 {
            for c in 0..8 {
                assert_abs_diff_eq!(
                    (fast.entry(r, c) - slow.entry(r, c)).norm(),
                    0.0,
                    epsilon = 1e-13
                );
            }
        }
    }

    #[test]
    fn partial_trace_of_product_state_keeps_prefix() {
        // |psi> = |+>|1>: tracing out qubit 1 leaves |+><+|.
        let mut psi = DenseVector::zero_state(2);
        psi.apply_single(1, &crate::matchgate::pauli_x2()).unwrap();
        psi.apply_single(0, &crate::matchgate::hadamard2()).unwrap();
        let rho = DenseMatrix::from_pure(&psi);
        let red = rho.partial_trace_to_prefix(1).unwrap();
        assert_abs_diff_eq!(red.entry(0, 1).re, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(red.trace(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn trace_distance_of_orthogonal_pures_is_one() {
        let a = DenseMatrix::from_pure(&DenseVector::zero_state(1));
        let mut one = DenseVector::zero_state(1);
        one.apply_pauli(&"X".parse().unwrap()).unwrap();
        let b = DenseMatrix::from_pure(&one);
        assert_abs_diff_eq!(trace_distance(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(trace_distance(&a, &a).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn branch_enumeration_reproduces_born_rule() {
        // H on qubit 0, measure, then X on qubit 1 if... no correction:
        // both branches carry probability 1/2.
        let mut c = Circuit::new(2);
        let h = Matchgate::from_single_qubit(&crate::matchgate::hadamard2()).unwrap();
        c.push_matchgate(0, h);
        c.push_measure(0, "m");
        let branches = enumerate_pure_branches(&c).unwrap();
        assert_eq!(branches.len(), 2);
        for b in &branches {
            assert_abs_diff_eq!(b.probability, 0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(b.state.norm_sqr(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_and_trajectory_outputs_agree_for_small_noisy_circuit() {
        let mut circuit = random_circuit(3, 4, 5);
        circuit.push_pauli("IZI".parse().unwrap());
        let mut bindings = Bindings::none();
        bindings
            .gate
            .insert(1, crate::noise::crosstalk_channel(3, 1, 2, 0.2).unwrap());
        let exact = rc_output_state(&circuit, &bindings).unwrap();
        let mc = mc_rc_output_state(&circuit, &bindings, 6000, 7).unwrap();
        let d = trace_distance(&exact, &mc).unwrap();
        assert!(d < 0.05, "trace distance {d} too large");
    }

    #[test]
    fn rc_output_reduces_to_data_register() {
        let mut c = Circuit::with_data_width(2, 1);
        let h = Matchgate::from_single_qubit(&crate::matchgate::hadamard2()).unwrap();
        c.push_matchgate(0, h);
        let rho = rc_output_state(&c, &Bindings::none()).unwrap();
        assert_eq!(rho.n(), 1);
        assert_abs_diff_eq!(rho.trace(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dump_roundtrip_vector_and_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let mut psi = DenseVector::zero_state(2);
        psi.apply_single(0, &crate::matchgate::hadamard2()).unwrap();
        let vp = dir.path().join("state.mgvstate");
        psi.save(&vp).unwrap();
        let back = DenseVector::load(&vp).unwrap();
        assert_eq!(back.n(), 2);
        for i in 0..4 {
            assert_abs_diff_eq!((back.amps()[i] - psi.amps()[i]).norm(), 0.0, epsilon = 0.0);
        }
        let rho = DenseMatrix::from_pure(&psi);
        let mp = dir.path().join("rho.mgvstate");
        rho.save(&mp).unwrap();
        let back = DenseMatrix::load(&mp).unwrap();
        assert_abs_diff_eq!(back.trace(), 1.0, epsilon = 1e-15);
        assert!(DenseVector::load(&mp).is_err());
    }

    #[test]
    fn sample_indices_follows_distribution() {
        let probs = [0.1, 0.2, 0.3, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let idx = sample_indices(&probs, 40_000, &mut rng);
        let mut counts = [0usize; 4];
        for i in idx {
            counts[i] += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            assert!((c as f64 / 40_000.0 - probs[k]).abs() < 0.01);
        }
    }

    #[test]
    fn index_bit_convention_puts_qubit_zero_first() {
        assert_eq!(index_to_bits(0b100, 3), vec![1, 0, 0]);
        assert_eq!(index_to_bits(0b011, 3), vec![0, 1, 1]);
    }
}
