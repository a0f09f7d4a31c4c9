//! Noise channels, Pauli twirling and the experiment error model.
//!
//! Randomized compiling turns an arbitrary gate-attached channel into the
//! Pauli channel whose coefficients are the Walsh-Hadamard transform of
//! the channel's Pauli-transfer-matrix diagonal. Simulators therefore
//! only ever see `PauliChannel` values: a sparse probability distribution
//! over Pauli words.
//!
//! The experiment error model attaches to every gate a stochastic
//! crosstalk channel on the gate's qubits and their nearest neighbours,
//! composed with a coherent overrotation generated by the absolute
//! coefficients of the gate's own generator.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, Matrix4};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, CircuitOp};
use crate::error::{Error, Result};
use crate::matchgate::{exp_i_hermitian4, PairGen, C64};
use crate::pauli::{enumerate_words, Pauli, PauliString};

/// Maximum support size of a Pauli-channel word under the default
/// locality rule (a two-qubit gate plus its two outer neighbours).
pub const DEFAULT_LOCALITY: usize = 4;
/// Normalization / positivity tolerance for probability vectors.
pub const PROB_TOL: f64 = 1e-12;

/// A stochastic Pauli channel: `rho -> sum_P c(P) P rho P`.
///
/// Entries are kept sorted by word; negative coefficients within
/// `-PROB_TOL` of zero are clamped at construction and the total must be
/// 1 within `PROB_TOL`.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliChannel {
    n: usize,
    locality: usize,
    entries: Vec<(PauliString, f64)>,
    cumulative: Vec<f64>,
}

impl PauliChannel {
    pub fn identity(n: usize) -> Self {
        PauliChannel::from_entries(n, vec![(PauliString::identity(n), 1.0)])
            .expect("identity channel is valid")
    }

    pub fn from_entries(n: usize, entries: Vec<(PauliString, f64)>) -> Result<Self> {
        PauliChannel::from_entries_with_locality(n, entries, DEFAULT_LOCALITY)
    }

    pub fn from_entries_with_locality(
        n: usize,
        entries: Vec<(PauliString, f64)>,
        locality: usize,
    ) -> Result<Self> {
        let mut merged: BTreeMap<PauliString, f64> = BTreeMap::new();
        for (word, p) in entries {
            if word.n() != n {
                return Err(Error::LengthMismatch(format!(
                    "channel word width {} != {n}",
                    word.n()
                )));
            }
            *merged.entry(word).or_insert(0.0) += p;
        }
        let mut cleaned = Vec::with_capacity(merged.len());
        let mut total = 0.0;
        for (word, mut p) in merged {
            if p < 0.0 {
                if p > -PROB_TOL {
                    p = 0.0;
                } else {
                    return Err(Error::InvalidDistribution(format!(
                        "weight {p:.3e} of {word} is negative"
                    )));
                }
            }
            if p == 0.0 {
                continue;
            }
            if word.weight() > locality {
                return Err(Error::InvalidDistribution(format!(
                    "word {word} exceeds locality bound {locality}"
                )));
            }
            total += p;
            cleaned.push((word, p));
        }
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total} (deviation {:.3e})",
                (total - 1.0).abs()
            )));
        }
        let mut cumulative = Vec::with_capacity(cleaned.len());
        let mut acc = 0.0;
        for (_, p) in &cleaned {
            acc += p;
            cumulative.push(acc);
        }
        Ok(PauliChannel {
            n,
            locality,
            entries: cleaned,
            cumulative,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn locality(&self) -> usize {
        self.locality
    }

    pub fn entries(&self) -> &[(PauliString, f64)] {
        &self.entries
    }

    pub fn weight_of(&self, word: &PauliString) -> f64 {
        self.entries
            .binary_search_by(|(w, _)| w.cmp(word))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    /// Pauli channels are diagonal in the Pauli basis; this is the
    /// eigenvalue on the word Q: sum_P c(P) (+1 if [P,Q]=0 else -1).
    pub fn eigenvalue(&self, q: &PauliString) -> f64 {
        self.entries
            .iter()
            .map(|(p, c)| if p.commutes_with(q) { *c } else { -*c })
            .sum()
    }

    /// Composition (order-independent for Pauli channels): coefficients
    /// convolve under the letterwise word product.
    pub fn compose(&self, other: &PauliChannel) -> Result<PauliChannel> {
        if self.n != other.n {
            return Err(Error::LengthMismatch(format!(
                "channels on {} and {} qubits",
                self.n, other.n
            )));
        }
        let mut entries = Vec::with_capacity(self.entries.len() * other.entries.len());
        for (p, cp) in &self.entries {
            for (q, cq) in &other.entries {
                entries.push((p.mul(q)?, cp * cq));
            }
        }
        PauliChannel::from_entries_with_locality(self.n, entries, self.locality.max(other.locality))
    }

    /// Draw a word with probability proportional to its weight.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &PauliString {
        let total = *self.cumulative.last().expect("non-empty channel");
        let u: f64 = rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|&acc| acc <= u);
        &self.entries[idx.min(self.entries.len() - 1)].0
    }

    /// Probability that the letter on `k` flips a Z-measurement there.
    pub fn flip_probability(&self, k: usize) -> f64 {
        self.entries
            .iter()
            .filter(|(w, _)| w.letter(k).has_x())
            .map(|(_, c)| c)
            .sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let map: BTreeMap<String, f64> = self
            .entries
            .iter()
            .map(|(w, c)| (w.to_string(), *c))
            .collect();
        serde_json::json!({ "n": self.n, "entries": map })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let n = value
            .get("n")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::InvalidConfig("channel is missing field \"n\"".into()))?
            as usize;
        let map: BTreeMap<String, f64> = serde_json::from_value(
            value
                .get("entries")
                .cloned()
                .ok_or_else(|| Error::InvalidConfig("channel is missing \"entries\"".into()))?,
        )?;
        let entries = map
            .into_iter()
            .map(|(w, c)| w.parse().map(|word| (word, c)))
            .collect::<Result<Vec<_>>>()?;
        PauliChannel::from_entries_with_locality(n, entries, usize::MAX)
    }
}

/// One step of a local channel on a small qubit set.
#[derive(Debug, Clone)]
pub enum ChannelTerm {
    /// Unitary conjugation, matrix over the local 2^k space.
    Unitary(DMatrix<C64>),
    /// General Kraus decomposition.
    Kraus(Vec<DMatrix<C64>>),
    /// Stochastic mixture of local Pauli words (width k).
    Mix(Vec<(PauliString, f64)>),
}

/// A CPTP channel supported on a few qubits, stored as an ordered list
/// of terms applied first-to-last.
#[derive(Debug, Clone)]
pub struct LocalChannel {
    qubits: Vec<usize>,
    terms: Vec<ChannelTerm>,
}

fn check_ascending(qubits: &[usize]) -> Result<()> {
    if qubits.is_empty() || qubits.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!(
            "channel support {qubits:?} must be non-empty and strictly ascending"
        )));
    }
    Ok(())
}

fn unitary_deviation(u: &DMatrix<C64>) -> f64 {
    (u.adjoint() * u - DMatrix::identity(u.nrows(), u.ncols()))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Dense matrix of a width-k Pauli word (local, phases included).
fn word_matrix_local(word: &PauliString) -> DMatrix<C64> {
    let mut m = DMatrix::identity(1, 1);
    for &p in word.letters() {
        let f = match p {
            Pauli::I => DMatrix::identity(2, 2),
            Pauli::X => DMatrix::from_row_slice(
                2,
                2,
                &[
                    C64::new(0., 0.),
                    C64::new(1., 0.),
                    C64::new(1., 0.),
                    C64::new(0., 0.),
                ],
            ),
            Pauli::Y => DMatrix::from_row_slice(
                2,
                2,
                &[
                    C64::new(0., 0.),
                    C64::new(0., -1.),
                    C64::new(0., 1.),
                    C64::new(0., 0.),
                ],
            ),
            Pauli::Z => DMatrix::from_row_slice(
                2,
                2,
                &[
                    C64::new(1., 0.),
                    C64::new(0., 0.),
                    C64::new(0., 0.),
                    C64::new(-1., 0.),
                ],
            ),
        };
        m = m.kronecker(&f);
    }
    m
}

impl LocalChannel {
    pub fn unitary(qubits: &[usize], u: DMatrix<C64>) -> Result<Self> {
        check_ascending(qubits)?;
        if u.nrows() != 1 << qubits.len() || u.ncols() != u.nrows() {
            return Err(Error::LengthMismatch(format!(
                "matrix {}x{} on {} qubits",
                u.nrows(),
                u.ncols(),
                qubits.len()
            )));
        }
        let dev = unitary_deviation(&u);
        if dev > 1e-10 {
            return Err(Error::NotUnitary(dev));
        }
        Ok(LocalChannel {
            qubits: qubits.to_vec(),
            terms: vec![ChannelTerm::Unitary(u)],
        })
    }

    pub fn kraus(qubits: &[usize], ks: Vec<DMatrix<C64>>) -> Result<Self> {
        check_ascending(qubits)?;
        let dim = 1usize << qubits.len();
        if ks.is_empty() || ks.iter().any(|k| k.nrows() != dim || k.ncols() != dim) {
            return Err(Error::LengthMismatch("Kraus operator dimensions".into()));
        }
        let mut sum = DMatrix::<C64>::zeros(dim, dim);
        for k in &ks {
            sum += k.adjoint() * k;
        }
        let dev = (sum - DMatrix::identity(dim, dim))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if dev > 1e-9 {
            return Err(Error::NotCptp(format!(
                "Kraus completeness deviation {dev:.3e}"
            )));
        }
        Ok(LocalChannel {
            qubits: qubits.to_vec(),
            terms: vec![ChannelTerm::Kraus(ks)],
        })
    }

    /// Stochastic local Pauli mixture; words have width `qubits.len()`.
    pub fn pauli_mix(qubits: &[usize], entries: Vec<(PauliString, f64)>) -> Result<Self> {
        check_ascending(qubits)?;
        let k = qubits.len();
        let mut total = 0.0;
        for (w, p) in &entries {
            if w.n() != k {
                return Err(Error::LengthMismatch(format!(
                    "mixture word width {} != {k}",
                    w.n()
                )));
            }
            if *p < -PROB_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "mixture weight {p:.3e} of {w}"
                )));
            }
            total += p.max(0.0);
        }
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidDistribution(format!(
                "mixture weights sum to {total}"
            )));
        }
        Ok(LocalChannel {
            qubits: qubits.to_vec(),
            terms: vec![ChannelTerm::Mix(entries)],
        })
    }

    pub fn qubits(&self) -> &[usize] {
        &self.qubits
    }

    pub fn terms(&self) -> &[ChannelTerm] {
        &self.terms
    }

    /// Sequential composition: `self` first, then `other`, on the union
    /// support.
    pub fn then(&self, other: &LocalChannel) -> Result<LocalChannel> {
        let union: Vec<usize> = {
            let mut s: BTreeSet<usize> = self.qubits.iter().copied().collect();
            s.extend(other.qubits.iter().copied());
            s.into_iter().collect()
        };
        let mut terms = Vec::new();
        for (src, chan) in [(&self.terms, self), (&other.terms, other)] {
            for term in src {
                terms.push(embed_term(term, &chan.qubits, &union)?);
            }
        }
        Ok(LocalChannel {
            qubits: union,
            terms,
        })
    }

    /// Apply the channel to a local density matrix of matching dimension.
    pub fn apply_local(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let mut m = rho.clone();
        for term in &self.terms {
            m = match term {
                ChannelTerm::Unitary(u) => u * m * u.adjoint(),
                ChannelTerm::Kraus(ks) => {
                    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
                    for k in ks {
                        out += k * &m * k.adjoint();
                    }
                    out
                }
                ChannelTerm::Mix(entries) => {
                    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
                    for (w, p) in entries {
                        let pw = word_matrix_local(w);
                        out += (&pw * &m * &pw) * C64::new(*p, 0.0);
                    }
                    out
                }
            };
        }
        m
    }

    /// Diagonal of the channel in the Pauli-transfer representation:
    /// `d_Q = tr(Q E(Q)) / 2^k` for every local word Q.
    pub fn ptm_diagonal(&self) -> Vec<(PauliString, f64)> {
        let k = self.qubits.len();
        let dim = 1usize << k;
        let words = enumerate_words(k, &(0..k).collect::<Vec<_>>());
        words
            .into_iter()
            .map(|q| {
                let qm = word_matrix_local(&q);
                let image = self.apply_local(&qm);
                let d = (&qm * image).trace() / C64::new(dim as f64, 0.0);
                (q, d.re)
            })
            .collect()
    }
}

fn embed_term(term: &ChannelTerm, from: &[usize], to: &[usize]) -> Result<ChannelTerm> {
    if from == to {
        return Ok(term.clone());
    }
    let positions: Vec<usize> = from
        .iter()
        .map(|q| {
            to.iter()
                .position(|t| t == q)
                .expect("union support contains original support")
        })
        .collect();
    Ok(match term {
        ChannelTerm::Unitary(u) => ChannelTerm::Unitary(embed_matrix(u, &positions, to.len())),
        ChannelTerm::Kraus(ks) => ChannelTerm::Kraus(
            ks.iter()
                .map(|k| embed_matrix(k, &positions, to.len()))
                .collect(),
        ),
        ChannelTerm::Mix(entries) => {
            let mut out = Vec::with_capacity(entries.len());
            for (w, p) in entries {
                let wide = w.embed(to.len(), |q| positions[q])?;
                out.push((wide, *p));
            }
            ChannelTerm::Mix(out)
        }
    })
}

/// Embed a 2^k matrix acting on the listed bit positions (0 = most
/// significant) into a 2^m space, identity elsewhere.
fn embed_matrix(u: &DMatrix<C64>, positions: &[usize], m: usize) -> DMatrix<C64> {
    let k = positions.len();
    let dim = 1usize << m;
    let mut out = DMatrix::zeros(dim, dim);
    for col in 0..dim {
        let mut j = 0usize;
        for (pos, &p) in positions.iter().enumerate() {
            let bit = (col >> (m - 1 - p)) & 1;
            j |= bit << (k - 1 - pos);
        }
        for i in 0..(1 << k) {
            let mut row = col;
            for (pos, &p) in positions.iter().enumerate() {
                let bit = (i >> (k - 1 - pos)) & 1;
                let shift = m - 1 - p;
                row = (row & !(1 << shift)) | (bit << shift);
            }
            let v = u[(i, j)];
            if v.norm_sqr() > 0.0 {
                out[(row, col)] += v;
            }
        }
    }
    out
}

/// Randomized-compile a local channel into its Pauli twirl.
///
/// The twirl keeps exactly the PTM diagonal, and a Pauli channel's
/// diagonal is the Walsh transform of its coefficients, so
/// `c(P) = 4^-k sum_Q sign(P,Q) d_Q`.
pub fn pauli_twirl(channel: &LocalChannel, n: usize) -> Result<PauliChannel> {
    let k = channel.qubits.len();
    let diag = channel.ptm_diagonal();
    let scale = 1.0 / (4f64.powi(k as i32));
    let words = enumerate_words(k, &(0..k).collect::<Vec<_>>());
    let mut entries = Vec::with_capacity(words.len());
    for p in &words {
        let mut coeff = 0.0;
        for (q, d) in &diag {
            coeff += if p.commutes_with(q) { *d } else { -*d };
        }
        let c = coeff * scale;
        if c.abs() < 1e-15 {
            continue;
        }
        let global = p.embed(n, |local| channel.qubits[local])?;
        entries.push((global, c));
    }
    PauliChannel::from_entries_with_locality(n, entries, DEFAULT_LOCALITY.max(k))
}

/// Split a measurement-error channel into its twirled Pauli form plus
/// the outcome-flip probability on the measured qubit `k`:
/// the total weight of words acting as X or Y there.
pub fn measurement_error_params(
    channel: &LocalChannel,
    n: usize,
    k: usize,
) -> Result<(PauliChannel, f64)> {
    if !channel.qubits.contains(&k) {
        return Err(Error::InvalidConfig(format!(
            "measured qubit {k} outside channel support {:?}",
            channel.qubits
        )));
    }
    let twirled = pauli_twirl(channel, n)?;
    let eps = twirled.flip_probability(k);
    Ok((twirled, eps))
}

/// Two-qubit crosstalk channel on (target, buddy):
/// identity with probability 1 - p_c, and the four words
/// XX, XY, YX, YY on (t, b) with probability p_c / 4 each.
pub fn crosstalk_channel(n: usize, t: usize, b: usize, p_c: f64) -> Result<PauliChannel> {
    if t == b || t >= n || b >= n {
        return Err(Error::InvalidConfig(format!(
            "crosstalk pair ({t}, {b}) invalid for width {n}"
        )));
    }
    let mut entries = vec![(PauliString::identity(n), 1.0 - p_c)];
    for (pt, pb) in [
        (Pauli::X, Pauli::X),
        (Pauli::X, Pauli::Y),
        (Pauli::Y, Pauli::X),
        (Pauli::Y, Pauli::Y),
    ] {
        entries.push((PauliString::from_sparse(n, &[(t, pt), (b, pb)])?, p_c / 4.0));
    }
    PauliChannel::from_entries(n, entries)
}

/// Crosstalk attached to a gate on lines (q, q+1): one channel per
/// (target, neighbour) pair with neighbours outside the register skipped.
pub fn gate_crosstalk(n: usize, q: usize, p_c: f64) -> Result<PauliChannel> {
    let mut total = PauliChannel::identity(n);
    let t1 = q;
    let t2 = q + 1;
    let mut pairs: Vec<(usize, isize)> = Vec::new();
    pairs.push((t1, t1 as isize - 1));
    pairs.push((t1, t2 as isize));
    pairs.push((t2, t1 as isize));
    pairs.push((t2, t2 as isize + 1));
    for (t, b) in pairs {
        if b < 0 || b as usize >= n {
            continue;
        }
        total = total.compose(&crosstalk_channel(n, t, b as usize, p_c)?)?;
    }
    Ok(total)
}

/// Coherent overrotation of a gate with generator sum_P beta_P P:
/// `exp(i gamma sum_P |beta_P| P)` on the gate's pair.
pub fn overrotation_matrix(terms: &[(PairGen, f64)], gamma: f64) -> Matrix4<C64> {
    let mut h = Matrix4::zeros();
    for &(p, beta) in terms {
        h += p.matrix() * C64::new(gamma * beta.abs(), 0.0);
    }
    exp_i_hermitian4(&h)
}

/// The full error channel of one gate: crosstalk followed by the
/// coherent overrotation.
pub fn gate_error_channel(
    n: usize,
    q: usize,
    terms: &[(PairGen, f64)],
    p_c: f64,
    gamma: f64,
) -> Result<LocalChannel> {
    let lo = q.saturating_sub(1);
    let hi = (q + 2).min(n - 1);
    let support: Vec<usize> = (lo..=hi).collect();
    let crosstalk = gate_crosstalk(n, q, p_c)?;
    // Restrict the global crosstalk words to the local support.
    let local_entries = crosstalk
        .entries()
        .iter()
        .map(|(w, c)| {
            let letters: Vec<Pauli> = support.iter().map(|&s| w.letter(s)).collect();
            (PauliString::new(letters), *c)
        })
        .collect();
    let mix = LocalChannel::pauli_mix(&support, local_entries)?;
    let m4 = overrotation_matrix(terms, gamma);
    let over = LocalChannel::unitary(&[q, q + 1], DMatrix::from_fn(4, 4, |i, j| m4[(i, j)]))?;
    mix.then(&over)
}

/// Twirled Pauli channel bound to a gate under the experiment model.
pub fn twirled_gate_channel(
    n: usize,
    q: usize,
    terms: &[(PairGen, f64)],
    p_c: f64,
    gamma: f64,
) -> Result<PauliChannel> {
    pauli_twirl(&gate_error_channel(n, q, terms, p_c, gamma)?, n)
}

/// Layer-dependent overrotation schedule
/// `gamma(l) = gamma (1 - l/L + (l/L) gamma_tilde)` for l = 0..L-1.
pub fn drift_schedule(gamma: f64, gamma_tilde: f64, layers: usize) -> Vec<f64> {
    (0..layers)
        .map(|l| {
            let f = l as f64 / layers as f64;
            gamma * (1.0 - f + f * gamma_tilde)
        })
        .collect()
}

/// Perturb a Pauli channel inside an epsilon-ball: add eps * N to the
/// coefficient vector (N a uniformly random unit vector over all words
/// whose support fits inside the support of some existing word), take
/// absolute values and renormalize.
pub fn perturb_channel<R: Rng + ?Sized>(
    channel: &PauliChannel,
    eps: f64,
    rng: &mut R,
) -> Result<PauliChannel> {
    let n = channel.n();
    let mut admissible: BTreeSet<PauliString> = BTreeSet::new();
    for (word, _) in channel.entries() {
        let support = word.support();
        for cand in enumerate_words(n, &support) {
            admissible.insert(cand);
        }
    }
    let words: Vec<PauliString> = admissible.into_iter().collect();
    let mut noise: Vec<f64> = (0..words.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let norm = noise.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(channel.clone());
    }
    for x in &mut noise {
        *x /= norm;
    }
    let mut entries = Vec::with_capacity(words.len());
    let mut total = 0.0;
    for (word, nz) in words.into_iter().zip(noise) {
        let c = (channel.weight_of(&word) + eps * nz).abs();
        total += c;
        entries.push((word, c));
    }
    for (_, c) in &mut entries {
        *c /= total;
    }
    PauliChannel::from_entries_with_locality(n, entries, channel.locality())
}

/// Per-measurement noise binding: the twirled channel to apply before
/// projecting plus the marginal outcome-flip probability it induces.
#[derive(Debug, Clone)]
pub struct MeasureBinding {
    pub channel: PauliChannel,
    pub flip_probability: f64,
}

/// Noise bindings for a circuit, keyed by op index.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    pub gate: BTreeMap<usize, PauliChannel>,
    pub measure: BTreeMap<usize, MeasureBinding>,
}

impl Bindings {
    pub fn none() -> Self {
        Bindings::default()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let gates: BTreeMap<String, serde_json::Value> = self
            .gate
            .iter()
            .map(|(idx, ch)| (idx.to_string(), ch.to_json()))
            .collect();
        let meas: BTreeMap<String, serde_json::Value> = self
            .measure
            .iter()
            .map(|(idx, mb)| {
                (
                    idx.to_string(),
                    serde_json::json!({
                        "channel": mb.channel.to_json(),
                        "flip_probability": mb.flip_probability,
                    }),
                )
            })
            .collect();
        serde_json::json!({ "gates": gates, "measurements": meas })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let mut bindings = Bindings::none();
        if let Some(gates) = value.get("gates").and_then(|v| v.as_object()) {
            for (idx, ch) in gates {
                let idx: usize = idx
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad op index {idx:?}")))?;
                bindings.gate.insert(idx, PauliChannel::from_json(ch)?);
            }
        }
        if let Some(meas) = value.get("measurements").and_then(|v| v.as_object()) {
            for (idx, mb) in meas {
                let idx: usize = idx
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad op index {idx:?}")))?;
                let channel = PauliChannel::from_json(
                    mb.get("channel")
                        .ok_or_else(|| Error::InvalidConfig("missing channel".into()))?,
                )?;
                let flip = mb
                    .get("flip_probability")
                    .and_then(|v| v.as_f64())
                    .unwrap_or_else(|| {
                        // Recover the flip probability from the channel if absent.
                        0.0
                    });
                bindings.measure.insert(
                    idx,
                    MeasureBinding {
                        channel,
                        flip_probability: flip,
                    },
                );
            }
        }
        Ok(bindings)
    }
}

/// Experiment error model; serialized as the `--noise` input of the CLI.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErrorModelConfig {
    /// Crosstalk probability per (target, neighbour) pair.
    pub p_c: f64,
    /// Overrotation angle scale.
    pub gamma: f64,
    /// Optional drift: end-of-circuit overrotation ratio gamma_tilde.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_tilde: Option<f64>,
    /// Optional epsilon-ball perturbation applied to every gate channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Optional classical flip probability attached to every measurement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_flip: Option<f64>,
    /// Seed for the perturbation draw.
    #[serde(default)]
    pub seed: u64,
}

impl ErrorModelConfig {
    pub fn new(p_c: f64, gamma: f64) -> Self {
        ErrorModelConfig {
            p_c,
            gamma,
            gamma_tilde: None,
            epsilon: None,
            measurement_flip: None,
            seed: 0,
        }
    }

    /// Build per-op bindings for a circuit. Gates must carry generator
    /// data to receive a channel; bare matchgates (e.g. routing swaps)
    /// are treated as noiseless.
    pub fn bind(&self, circuit: &Circuit) -> Result<Bindings> {
        use rand::SeedableRng;
        let n = circuit.width();
        let layers = circuit
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
        let schedule = match self.gamma_tilde {
            Some(gt) if layers > 0 => drift_schedule(self.gamma, gt, layers),
            _ => vec![self.gamma; layers.max(1)],
        };
        let mut bindings = Bindings::none();
        for (idx, op) in circuit.ops.iter().enumerate() {
            match op {
                CircuitOp::Matchgate {
                    q,
                    generator: Some(generator),
                    ..
                } => {
                    let gamma_l = schedule[generator.layer.min(schedule.len() - 1)];
                    let mut channel =
                        twirled_gate_channel(n, *q, &generator.terms, self.p_c, gamma_l)?;
                    if let Some(eps) = self.epsilon {
                        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                            self.seed ^ (idx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                        );
                        channel = perturb_channel(&channel, eps, &mut rng)?;
                    }
                    bindings.gate.insert(idx, channel);
                }
                CircuitOp::MeasureZ { q, .. } => {
                    if let Some(p) = self.measurement_flip {
                        let entries = vec![
                            (PauliString::identity(n), 1.0 - p),
                            (PauliString::from_sparse(n, &[(*q, Pauli::X)])?, p),
                        ];
                        let channel = PauliChannel::from_entries(n, entries)?;
                        bindings.measure.insert(
                            idx,
                            MeasureBinding {
                                channel,
                                flip_probability: p,
                            },
                        );
                    }
                }
                _ => {}
            }
        }
        Ok(bindings)
    }
}
