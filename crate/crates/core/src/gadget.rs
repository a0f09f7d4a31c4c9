//! Magic-state gadgets: teleported CZ gates and their corrections.
//!
//! A CZ between adjacent lines is replaced by gate teleportation through
//! a four-qubit resource state parked next to the data pair: couple each
//! data line to its neighbouring resource line with G(H,H), measure the
//! four outer lines, apply an outcome-keyed Pauli correction to the two
//! surviving middle lines (which now hold the teleported data), and
//! route everything back. With the entangled resource state the gadget
//! realizes CZ but leaves the Gaussian world; with its fermionic cousin
//! it realizes the fermionic swap while staying classically simulable.

use std::collections::BTreeMap;

use nalgebra::Matrix4;

use crate::circuit::{Circuit, CircuitOp, GateGenerator};
use crate::dense::DenseVector;
use crate::encoding::fswap_generator;
use crate::error::{Error, Result};
use crate::matchgate::{hadamard2, Matchgate, C64};
use crate::pauli::{Pauli, PauliString};

/// Which resource state a gadget consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MagicKind {
    /// Entangled resource enabling CZ: 1/2 (|0000> + |0011> + |1100> - |1111>).
    M,
    /// Gaussian resource enabling fSWAP: 1/2 (|0000> + |0101> + |1010> - |1111>).
    MPrime,
}

impl MagicKind {
    pub fn label(self) -> &'static str {
        match self {
            MagicKind::M => "M",
            MagicKind::MPrime => "Mprime",
        }
    }
}

/// The 16-amplitude resource state vector.
pub fn magic_state(kind: MagicKind) -> DenseVector {
    let mut amps = vec![C64::new(0.0, 0.0); 16];
    let half = C64::new(0.5, 0.0);
    match kind {
        MagicKind::M => {
            amps[0b0000] = half;
            amps[0b0011] = half;
            amps[0b1100] = half;
            amps[0b1111] = -half;
        }
        MagicKind::MPrime => {
            amps[0b0000] = half;
            amps[0b0101] = half;
            amps[0b1010] = half;
            amps[0b1111] = -half;
        }
    }
    DenseVector::from_amps(4, amps).expect("16 amplitudes")
}

/// Ops preparing the resource state from |0000> on lines m1..m1+3.
/// Both preparations start from two G(H,H) pair-entanglers; M needs one
/// genuine CZ while M' finishes with a fermionic swap and therefore
/// stays inside the matchgate family.
pub fn magic_prep_ops(kind: MagicKind, m1: usize) -> Vec<CircuitOp> {
    let ghh = Matchgate::from_single_qubit(&hadamard2()).expect("G(H,H)");
    let mut ops = vec![
        CircuitOp::Matchgate {
            q: m1,
            gate: ghh.clone(),
            generator: None,
        },
        CircuitOp::Matchgate {
            q: m1 + 2,
            gate: ghh,
            generator: None,
        },
    ];
    match kind {
        MagicKind::M => ops.push(CircuitOp::Cz {
            a: m1 + 1,
            b: m1 + 2,
        }),
        MagicKind::MPrime => ops.push(CircuitOp::Matchgate {
            q: m1 + 1,
            gate: Matchgate::fswap(),
            generator: None,
        }),
    }
    ops
}

/// The deterministic two-qubit gate each kind teleports.
fn target_gate(kind: MagicKind) -> Matrix4<C64> {
    match kind {
        MagicKind::M => {
            let mut m = Matrix4::identity();
            m[(3, 3)] = C64::new(-1.0, 0.0);
            m
        }
        MagicKind::MPrime => *Matchgate::fswap().matrix(),
    }
}

/// Swap the two letters of a width-2 word (conjugation by SWAP).
fn swap_conjugate(word: &PauliString) -> PauliString {
    PauliString::new(vec![word.letter(1), word.letter(0)])
}

/// Derive the outcome -> correction table by brute force on the minimal
/// six-line layout (data, four resource lines, data).
///
/// For every outcome tuple (a, b, c, d) of the four measured lines the
/// surviving middle pair holds the teleported data up to a Pauli; the
/// table entry is the lexicographically first width-2 word aligning the
/// branch with the target gate on two independent random inputs.
pub fn derive_gadget_corrections(kind: MagicKind) -> Result<BTreeMap<String, PauliString>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x6d61676963);
    let inputs: Vec<DenseVector> = (0..2)
        .map(|_| {
            let v = crate::oracle::random_state(2, &mut rng);
            DenseVector::from_amps(2, v.iter().copied().collect()).expect("4 amplitudes")
        })
        .collect();
    let target = target_gate(kind);
    let candidates: Vec<PauliString> = {
        let mut v = Vec::with_capacity(16);
        for p1 in Pauli::ALL {
            for p2 in Pauli::ALL {
                v.push(PauliString::new(vec![p1, p2]));
            }
        }
        v.sort();
        v
    };
    let mut table = BTreeMap::new();
    for key_val in 0..16usize {
        let key: String = (0..4)
            .map(|t| char::from(b'0' + ((key_val >> (3 - t)) & 1) as u8))
            .collect();
        let outcomes = [
            ((key_val >> 3) & 1) as u8,
            ((key_val >> 2) & 1) as u8,
            ((key_val >> 1) & 1) as u8,
            (key_val & 1) as u8,
        ];
        let mut chosen: Option<PauliString> = None;
        'candidates: for word in &candidates {
            for input in &inputs {
                let branch = gadget_branch(kind, input, outcomes)?;
                let mut expect = input.clone();
                expect.apply_pair(0, &target)?;
                let mut corrected = branch;
                corrected.apply_pauli(word)?;
                // Normalize the branch; teleportation gives probability
                // 1/16 so the norm must be 1/4.
                let norm = corrected.norm_sqr().sqrt();
                if norm < 1e-9 {
                    continue 'candidates;
                }
                let overlap = expect.inner(&corrected).norm() / norm;
                if (overlap - 1.0).abs() > 1e-10 {
                    continue 'candidates;
                }
            }
            chosen = Some(word.clone());
            break;
        }
        let word = chosen.ok_or_else(|| {
            Error::CorrectionSearch(format!(
                "no Pauli correction aligns outcome {key} for kind {}",
                kind.label()
            ))
        })?;
        table.insert(key, word);
    }
    Ok(table)
}

/// Unnormalized state of the middle pair after running the gadget on
/// `input` (two data qubits) and projecting the measured lines onto the
/// given (a, b, c, d).
fn gadget_branch(kind: MagicKind, input: &DenseVector, outcomes: [u8; 4]) -> Result<DenseVector> {
    // Six lines: 0 = first data, 1..=4 = resource, 5 = second data.
    let magic = magic_state(kind);
    let mut amps = vec![C64::new(0.0, 0.0); 64];
    for x in 0..2usize {
        for y in 0..2usize {
            let phi = input.amps()[(x << 1) | y];
            for m in 0..16usize {
                amps[(x << 5) | (m << 1) | y] = phi * magic.amps()[m];
            }
        }
    }
    let mut psi = DenseVector::from_amps(6, amps)?;
    let ghh = Matchgate::from_single_qubit(&hadamard2())?;
    psi.apply_pair(0, &ghh.matrix())?;
    psi.apply_pair(4, &ghh.matrix())?;
    for (line, bit) in [
        (0usize, outcomes[0]),
        (1, outcomes[1]),
        (4, outcomes[2]),
        (5, outcomes[3]),
    ] {
        psi.project_z(line, bit)?;
    }
    // Extract the middle pair (lines 2, 3): the other lines are fixed to
    // the projected outcomes.
    let fixed = ((outcomes[0] as usize) << 5)
        | ((outcomes[1] as usize) << 4)
        | ((outcomes[2] as usize) << 1)
        | (outcomes[3] as usize);
    let mut out = vec![C64::new(0.0, 0.0); 4];
    for (d, slot) in out.iter_mut().enumerate() {
        *slot = psi.amps()[fixed | (d << 2)];
    }
    DenseVector::from_amps(2, out)
}

/// Layout bookkeeping for one gadget instance.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GadgetLayout {
    pub gadget: usize,
    /// First line of the home block of the four resource qubits.
    pub block: usize,
    /// The adjacent pair the replaced CZ acted on.
    pub site: [usize; 2],
    /// Measurement labels in (a, b, c, d) order.
    pub labels: [String; 4],
}

fn identity_word(n: usize) -> PauliString {
    PauliString::identity(n)
}

fn x_word(n: usize, q: usize) -> Result<PauliString> {
    PauliString::from_sparse(n, &[(q, Pauli::X)])
}

fn push_fswap(out: &mut Circuit, q: usize, noisy: bool) {
    if noisy {
        out.push_generated_gate(
            q,
            Matchgate::fswap(),
            GateGenerator {
                terms: fswap_generator(),
                layer: 0,
            },
        );
    } else {
        out.push_matchgate(q, Matchgate::fswap());
    }
}

/// Replace every nearest-neighbour CZ of an encoded circuit by a
/// teleportation gadget. The output has width n + 4r (r = number of
/// CZs) with the original n lines as the data register; each gadget's
/// resource block starts life after the data lines, is routed next to
/// its site, consumed, and its measured lines are flipped back to |0>
/// and parked at the home block again.
pub fn gadgetize(circuit: &Circuit, kind: MagicKind) -> Result<Circuit> {
    circuit.validate()?;
    let n = circuit.width();
    let r = circuit
        .ops
        .iter()
        .filter(|op| matches!(op, CircuitOp::Cz { .. }))
        .count();
    if r == 0 {
        return Ok(circuit.clone());
    }
    let table = derive_gadget_corrections(kind)?;
    let width = n + 4 * r;
    let mut out = Circuit::with_data_width(width, n);
    let mut layouts: Vec<GadgetLayout> = Vec::with_capacity(r);
    let mut gadget = 0usize;
    for op in &circuit.ops {
        match op {
            CircuitOp::Matchgate { q, gate, generator } => {
                out.ops.push(CircuitOp::Matchgate {
                    q: *q,
                    gate: gate.clone(),
                    generator: generator.clone(),
                });
            }
            CircuitOp::Pauli { word } => {
                out.push_pauli(word.embed(width, |q| q)?);
            }
            CircuitOp::Cz { a, b } => {
                let (i, j) = (*a.min(b), *a.max(b));
                if j != i + 1 {
                    return Err(Error::NonAdjacent(*a, *b));
                }
                gadget += 1;
                let block = n + 4 * (gadget - 1);
                let labels: [String; 4] =
                    ["a", "b", "c", "d"].map(|suffix| format!("g{gadget}{suffix}"));
                emit_gadget(&mut out, kind, &table, i, block, gadget, &labels)?;
                layouts.push(GadgetLayout {
                    gadget,
                    block,
                    site: [i, j],
                    labels,
                });
            }
            other => {
                return Err(Error::UnsupportedOp(format!(
                    "gadgetize expects an encoded circuit, found {other:?}"
                )))
            }
        }
    }
    out.meta.insert(
        "gadgets".into(),
        serde_json::to_value(&layouts).expect("layouts serialize"),
    );
    out.meta.insert(
        "magic_kind".into(),
        serde_json::Value::String(kind.label().into()),
    );
    Ok(out)
}

fn emit_gadget(
    out: &mut Circuit,
    kind: MagicKind,
    table: &BTreeMap<String, PauliString>,
    i: usize,
    block: usize,
    gadget: usize,
    labels: &[String; 4],
) -> Result<()> {
    let width = out.width();
    // Prepare the resource state at its home block.
    for op in magic_prep_ops(kind, block) {
        out.ops.push(op);
    }
    // Route the block down so the resource lines sit at i+1..i+4,
    // pushing the old line i+1 (the second data qubit) out to i+5. The
    // resource state has even parity in every component, so the crossing
    // lines pick up no fermionic phase.
    let mut p = block;
    while p > i + 1 {
        for q in [p - 1, p, p + 1, p + 2] {
            push_fswap(out, q, false);
        }
        p -= 1;
    }
    // Couple each data line to its resource neighbour and measure the
    // four outer lines.
    let ghh = Matchgate::from_single_qubit(&hadamard2())?;
    out.push_matchgate(i, ghh.clone());
    out.push_matchgate(i + 4, ghh);
    for (line, label) in [
        (i, &labels[0]),
        (i + 1, &labels[1]),
        (i + 4, &labels[2]),
        (i + 5, &labels[3]),
    ] {
        out.push_measure(line, label.clone());
    }
    // Retire measured lines to |0> before anything else moves: flip on
    // outcome 1.
    for (line, label) in [
        (i, &labels[0]),
        (i + 1, &labels[1]),
        (i + 4, &labels[2]),
        (i + 5, &labels[3]),
    ] {
        let mut flip = BTreeMap::new();
        flip.insert("0".to_string(), identity_word(width));
        flip.insert("1".to_string(), x_word(width, line)?);
        out.ops.push(CircuitOp::Correction {
            gadget,
            keys: vec![label.clone()],
            table: flip,
        });
    }
    // Outcome-keyed correction on the teleported pair (i+2, i+3).
    let mut wide_table = BTreeMap::new();
    for (key, word) in table {
        wide_table.insert(key.clone(), word.embed(width, |local| i + 2 + local)?);
    }
    out.ops.push(CircuitOp::Correction {
        gadget,
        keys: labels.to_vec(),
        table: wide_table,
    });
    // Bring the data pair home from (i+2, i+3) through the retired |0>
    // lines (swapping against |0> is phase-free).
    for q in [i + 1, i, i + 2, i + 1] {
        push_fswap(out, q, false);
    }
    // Park the four |0> lines back at the home block, undoing the
    // earlier displacement of everything in between.
    let mut p = i + 2;
    while p < block {
        for q in [p + 3, p + 2, p + 1, p] {
            push_fswap(out, q, false);
        }
        p += 1;
    }
    Ok(())
}

/// The gadget table for the Gaussian resource equals the entangled
/// resource's table conjugated by SWAP.
pub fn swap_conjugated_table(
    table: &BTreeMap<String, PauliString>,
) -> BTreeMap<String, PauliString> {
    table
        .iter()
        .map(|(k, w)| (k.clone(), swap_conjugate(w)))
        .collect()
}
