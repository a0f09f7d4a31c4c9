//! Encoding universal circuits into matchgate form.
//!
//! A base circuit over single-qubit gates and CZ on m qubits becomes a
//! width-2m circuit: logical qubit i owns the physical line pair
//! (2i, 2i+1), a single-qubit gate A becomes the matchgate G(A, A) on
//! its pair, and logical SWAPs are chains of four fermionic swaps.
//! Every amplitude of the base circuit on |x> reappears as the encoded
//! amplitude on the doubled string |x1 x1 x2 x2 ...>.

use crate::circuit::{Circuit, CircuitOp, GateGenerator};
use crate::error::{Error, Result};
use crate::matchgate::{Matchgate, PairGen};

/// Generator of the fermionic swap, used for overrotation noise:
/// fSWAP = exp(i sum) up to a global phase, with every coefficient of
/// magnitude pi/4.
pub fn fswap_generator() -> Vec<(PairGen, f64)> {
    use std::f64::consts::FRAC_PI_4;
    vec![
        (PairGen::XX, -FRAC_PI_4),
        (PairGen::YY, -FRAC_PI_4),
        (PairGen::ZI, -FRAC_PI_4),
        (PairGen::IZ, -FRAC_PI_4),
    ]
}

/// First-line indices of the four physical fSWAPs realizing the logical
/// SWAP(k, k+1) on encoded pairs, in application order.
pub fn logical_swap_sites(k: usize) -> [usize; 4] {
    [2 * k + 1, 2 * k, 2 * k + 2, 2 * k + 1]
}

fn push_logical_swap(out: &mut Circuit, k: usize) {
    for q in logical_swap_sites(k) {
        out.push_matchgate(q, Matchgate::fswap());
    }
}

/// Encode a base circuit (single-qubit gates and CZ only) into a
/// doubled-width circuit of matchgates plus nearest-neighbour CZs.
/// Non-adjacent CZs are routed with logical bubble swaps.
pub fn encode_universal(base: &Circuit) -> Result<Circuit> {
    base.validate()?;
    let m = base.width();
    let mut out = Circuit::new(2 * m);
    for op in &base.ops {
        match op {
            CircuitOp::SingleQubit { q, u } => {
                out.push_matchgate(2 * q, Matchgate::from_single_qubit(u)?);
            }
            CircuitOp::Cz { a, b } => {
                let (lo, hi) = (*a.min(b), *a.max(b));
                if lo == hi {
                    return Err(Error::InvalidConfig(format!("CZ({a}, {b}) is degenerate")));
                }
                // Bubble the upper logical qubit down next to the lower.
                for j in ((lo + 1)..hi).rev() {
                    push_logical_swap(&mut out, j);
                }
                out.push_cz(2 * lo + 1, 2 * lo + 2);
                for j in (lo + 1)..hi {
                    push_logical_swap(&mut out, j);
                }
            }
            other => {
                return Err(Error::UnsupportedOp(format!(
                    "base circuits admit single-qubit gates and CZ only, found {other:?}"
                )))
            }
        }
    }
    Ok(out)
}

/// Replace every nearest-neighbour CZ by the fermionic swap (the
/// resourceless variant of the protocol). The new gates carry the fSWAP
/// generator so noise models can attach overrotations; layer indices
/// are not reconstructed (gates report layer 0).
pub fn replace_cz_with_fswap(circuit: &Circuit) -> Result<Circuit> {
    let mut out = Circuit::with_data_width(circuit.width(), circuit.data_width());
    out.meta = circuit.meta.clone();
    for op in &circuit.ops {
        match op {
            CircuitOp::Cz { a, b } => {
                let (lo, hi) = (*a.min(b), *a.max(b));
                if hi != lo + 1 {
                    return Err(Error::NonAdjacent(*a, *b));
                }
                out.push_generated_gate(
                    lo,
                    Matchgate::fswap(),
                    GateGenerator {
                        terms: fswap_generator(),
                        layer: 0,
                    },
                );
            }
            other => out.ops.push(other.clone()),
        }
    }
    Ok(out)
}

/// Basis index of the doubled string |x1 x1 ... xm xm| for a logical
/// index x on m qubits.
pub fn doubled_index(x: usize, m: usize) -> usize {
    let mut out = 0usize;
    for i in 0..m {
        let bit = (x >> (m - 1 - i)) & 1;
        out |= bit * (0b11 << (2 * m - 2 - 2 * i));
    }
    out
}

/// Total probability carried by the encoded subspace: the weight of a
/// width-2m distribution on doubled strings.
pub fn encoded_subspace_weight(probs: &[f64], m: usize) -> Result<f64> {
    if probs.len() != 1 << (2 * m) {
        return Err(Error::LengthMismatch(format!(
            "{} probabilities for m = {m}",
            probs.len()
        )));
    }
    Ok((0..1usize << m).map(|x| probs[doubled_index(x, m)]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense;
    use crate::oracle;
    use nalgebra::Matrix2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_base(m: usize, gates: usize, seed: u64) -> Circuit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = Circuit::new(m);
        for g in 0..gates {
            if m >= 2 && g % 3 == 2 {
                let a = rng.random_range(0..m);
                let b = loop {
                    let b = rng.random_range(0..m);
                    if b != a {
                        break b;
                    }
                };
                c.push_cz(a, b);
            } else {
                let q = rng.random_range(0..m);
                let u = oracle::haar_unitary(2, &mut rng);
                c.push_single_qubit(q, Matrix2::new(u[(0, 0)], u[(0, 1)], u[(1, 0)], u[(1, 1)]));
            }
        }
        c
    }

    #[test]
    fn encoded_amplitudes_match_base_amplitudes() {
        for (m, seed) in [(2usize, 1u64), (3, 2), (3, 3)] {
            let base = random_base(m, 8, seed);
            let logical = dense::run_unitary(&base, None).unwrap();
            let encoded = encode_universal(&base).unwrap();
            let physical = dense::run_unitary(&encoded, None).unwrap();
            for x in 0..1usize << m {
                let got = physical.amps()[doubled_index(x, m)];
                let expect = logical.amps()[x];
                assert!(
                    (got - expect).norm() < 1e-9,
                    "amplitude mismatch at x={x} (m={m}, seed={seed}): {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn encoded_subspace_carries_all_weight() {
        let base = random_base(3, 10, 9);
        let encoded = encode_universal(&base).unwrap();
        let physical = dense::run_unitary(&encoded, None).unwrap();
        let w = encoded_subspace_weight(&physical.probabilities(), 3).unwrap();
        assert!((w - 1.0).abs() < 1e-12, "encoded weight {w}");
    }

    #[test]
    fn encoded_ops_are_matchgates_and_adjacent_cz() {
        let base = random_base(4, 12, 4);
        let encoded = encode_universal(&base).unwrap();
        let mut mg = 0usize;
        let mut cz = 0usize;
        for op in &encoded.ops {
            match op {
                CircuitOp::Matchgate { .. } => mg += 1,
                CircuitOp::Cz { a, b } => {
                    cz += 1;
                    assert_eq!(*b, *a + 1, "CZ must be nearest-neighbour");
                }
                other => panic!("unexpected op {other:?}"),
            }
        }
        let s = base
            .ops
            .iter()
            .filter(|o| matches!(o, CircuitOp::SingleQubit { .. }))
            .count();
        let r = base
            .ops
            .iter()
            .filter(|o| matches!(o, CircuitOp::Cz { .. }))
            .count();
        assert_eq!(cz, r);
        assert!(
            mg <= s + r * (8 * base.width() - 1),
            "matchgate count {mg} exceeds bound"
        );
    }

    #[test]
    fn fswap_replacement_is_classically_simulable() {
        let base = random_base(3, 9, 6);
        let encoded = encode_universal(&base).unwrap();
        let swapped = replace_cz_with_fswap(&encoded).unwrap();
        assert!(swapped.is_classically_simulable());
        assert_eq!(swapped.ops.len(), encoded.ops.len());
    }

    #[test]
    fn fswap_generator_reproduces_the_gate_action() {
        // The exponential of the generator equals fSWAP up to a global
        // phase, so the two gates share their mode rotation.
        let from_gen = Matchgate::from_generator(&fswap_generator()).unwrap();
        let direct = Matchgate::fswap();
        let diff = from_gen.orthogonal().unwrap() - direct.orthogonal().unwrap();
        let worst = diff.iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "mode rotations differ by {worst}");
    }

    #[test]
    fn doubled_index_places_pairs() {
        // m = 2: x = 0b10 -> |1 1 0 0| = 0b1100.
        assert_eq!(doubled_index(0b10, 2), 0b1100);
        assert_eq!(doubled_index(0b01, 2), 0b0011);
        assert_eq!(doubled_index(0b11, 3), 0b001111);
    }

    #[test]
    fn rejects_non_base_ops() {
        let mut c = Circuit::new(2);
        c.push_matchgate(0, Matchgate::fswap());
        assert!(matches!(encode_universal(&c), Err(Error::UnsupportedOp(_))));
    }
}
