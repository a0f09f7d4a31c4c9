//! Energy post-processing of sampled bitstrings.
//!
//! A noiseless matchgate circuit U conjugates the input Hamiltonian
//! `H_in = -sum_k Z_k` into `H_out = U H_in U^dag = i sum_ij h_ij c_i c_j`,
//! and each sampled bitstring x is mapped to the diagonal energy
//! `f(x) = <x|H_out|x>`.  Because only same-qubit Majorana pairs have a
//! nonzero diagonal matrix element in the computational basis, f
//! evaluates in O(n) per sample from the per-qubit weights stored here.
//! Feeding energies instead of raw integers to the two-sample tests
//! concentrates ideal samples near the ground energy and tends to
//! sharpen the tests' power against noisy data.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::circuit::Circuit;
use crate::error::{Error, Result};

/// Antisymmetry tolerance of the conjugated coefficient matrix.
const ANTISYMMETRY_TOL: f64 = 1e-10;

/// Coefficient matrix of `H_in = -sum_k Z_k` as `i sum h_ij c_i c_j`.
///
/// Z_k = -i c_{2k} c_{2k+1}, so each per-qubit block carries +1/2 above
/// the diagonal.
pub fn input_coefficients(n: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        h[(2 * k, 2 * k + 1)] = 0.5;
        h[(2 * k + 1, 2 * k)] = -0.5;
    }
    h
}

/// The conjugated Hamiltonian of a matchgate circuit, reduced to the
/// per-qubit weights that determine the diagonal energy.
#[derive(Debug, Clone)]
pub struct EnergyMap {
    n: usize,
    h: DMatrix<f64>,
    weights: Vec<f64>,
}

impl EnergyMap {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Full antisymmetric coefficient matrix of H_out.
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Per-qubit weights: `f(x) = sum_k w_k (-1)^(x_k)`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Diagonal energy of one bitstring.
    pub fn energy(&self, bits: &[u8]) -> Result<f64> {
        if bits.len() != self.n {
            return Err(Error::LengthMismatch(format!(
                "bitstring length {} does not match register width {}",
                bits.len(),
                self.n
            )));
        }
        Ok(self
            .weights
            .iter()
            .zip(bits)
            .map(|(w, &b)| if b == 0 { *w } else { -*w })
            .sum())
    }

    /// Diagonal energy of a basis index (qubit 0 is the most
    /// significant bit).
    pub fn energy_of_index(&self, index: usize) -> f64 {
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            let bit = (index >> (self.n - 1 - k)) & 1;
            acc += if bit == 0 { *w } else { -*w };
        }
        acc
    }
}

/// Conjugate `H_in` through a noiseless matchgate circuit.
///
/// The circuit may contain matchgates and Pauli words only; any other
/// operation has no single mode rotation and is rejected.
pub fn energy_coefficients(circuit: &Circuit) -> Result<EnergyMap> {
    let n = circuit.width();
    if n == 0 {
        return Err(Error::InvalidConfig(
            "energy map needs at least one qubit".into(),
        ));
    }
    let r = circuit.total_orthogonal()?;
    let h = &r * input_coefficients(n) * r.transpose();
    let defect = (&h + h.transpose())
        .iter()
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    if defect > ANTISYMMETRY_TOL {
        return Err(Error::NotOrthogonal(defect));
    }
    let weights = (0..n).map(|k| -2.0 * h[(2 * k, 2 * k + 1)]).collect();
    Ok(EnergyMap { n, h, weights })
}

/// Map every sampled bitstring to its diagonal energy.
pub fn postprocess_samples(samples: &[Vec<u8>], map: &EnergyMap) -> Result<Vec<f64>> {
    samples.iter().map(|bits| map.energy(bits)).collect()
}

/// Write one energy per line with 17 significant digits.
pub fn write_energies<P: AsRef<Path>>(path: P, values: &[f64]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in values {
        writeln!(out, "{v:.16e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense;
    use crate::matchgate::{Matchgate, PairGen, C64};
    use crate::oracle;
    use crate::pauli::PauliString;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_h_in(n: usize) -> DMatrix<C64> {
        let dim = 1usize << n;
        let mut h = DMatrix::<C64>::zeros(dim, dim);
        for k in 0..n {
            let z = PauliString::from_sparse(n, &[(k, crate::pauli::Pauli::Z)]).unwrap();
            h -= oracle::pauli_word_matrix(&z);
        }
        h
    }

    fn coefficient_hamiltonian(n: usize, h: &DMatrix<f64>) -> DMatrix<C64> {
        let dim = 1usize << n;
        let mut out = DMatrix::<C64>::zeros(dim, dim);
        for i in 0..2 * n {
            for j in 0..2 * n {
                if h[(i, j)] == 0.0 {
                    continue;
                }
                let prod = oracle::majorana_matrix(n, i) * oracle::majorana_matrix(n, j);
                out += prod * C64::new(0.0, h[(i, j)]);
            }
        }
        out
    }

    fn random_mg_circuit(n: usize, ops: usize, seed: u64) -> Circuit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = Circuit::new(n);
        for _ in 0..ops {
            let q = rng.random_range(0..n - 1);
            match rng.random_range(0..3u32) {
                0 => {
                    let u = oracle::haar_unitary(2, &mut rng);
                    c.push_matchgate(
                        q,
                        Matchgate::from_single_qubit(&Matrix2::new(
                            u[(0, 0)],
                            u[(0, 1)],
                            u[(1, 0)],
                            u[(1, 1)],
                        ))
                        .unwrap(),
                    );
                }
                1 => c.push_matchgate(q, Matchgate::fswap()),
                _ => {
                    let terms: Vec<(PairGen, f64)> = PairGen::ALL
                        .iter()
                        .map(|&p| (p, rng.random_range(-1.5..1.5)))
                        .collect();
                    c.push_matchgate(q, Matchgate::from_generator(&terms).unwrap());
                }
            }
        }
        c
    }

    #[test]
    fn identity_circuit_reproduces_the_input_weights() {
        let c = Circuit::new(3);
        let em = energy_coefficients(&c).unwrap();
        assert_eq!(em.weights(), &[-1.0, -1.0, -1.0]);
        assert_eq!(em.energy(&[0, 0, 0]).unwrap(), -3.0);
        assert_eq!(em.energy(&[0, 1, 0]).unwrap(), -1.0);
        assert_eq!(em.energy(&[1, 1, 1]).unwrap(), 3.0);
        assert_eq!(em.energy_of_index(0b010), -1.0);
        assert!(em.energy(&[0, 0]).is_err());
    }

    #[test]
    fn fswap_relabels_the_qubit_weights() {
        // fSWAP exchanges the two mode pairs; the uniform input weights
        // are invariant, which pins the sign convention of the blocks.
        let mut c = Circuit::new(2);
        c.push_matchgate(0, Matchgate::fswap());
        let em = energy_coefficients(&c).unwrap();
        assert_abs_diff_eq!(em.weights()[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(em.weights()[1], -1.0, epsilon = 1e-12);
        let expect = input_coefficients(2);
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(em.coefficients()[(i, j)], expect[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn conjugated_coefficients_match_the_dense_hamiltonian() {
        let n = 4;
        let c = random_mg_circuit(n, 10, 17);
        let em = energy_coefficients(&c).unwrap();

        // Assemble U as a dense matrix.
        let dim = 1usize << n;
        let mut u = DMatrix::<C64>::identity(dim, dim);
        for op in &c.ops {
            if let crate::circuit::CircuitOp::Matchgate { q, gate, .. } = op {
                let m4 = gate.matrix();
                let big = oracle::embed_unitary(
                    n,
                    &[*q, *q + 1],
                    &DMatrix::from_fn(4, 4, |r, cc| m4[(r, cc)]),
                );
                u = big * u;
            } else {
                panic!("unexpected op");
            }
        }
        let expect = &u * dense_h_in(n) * u.adjoint();
        let got = coefficient_hamiltonian(n, em.coefficients());
        let dev = (&got - &expect)
            .iter()
            .map(|x| x.norm())
            .fold(0.0, f64::max);
        assert!(dev < 1e-9, "H_out deviation {dev}");

        // The per-qubit weights reproduce the dense diagonal.
        for x in 0..dim {
            assert_abs_diff_eq!(em.energy_of_index(x), expect[(x, x)].re, epsilon = 1e-9);
            assert!(expect[(x, x)].im.abs() < 1e-9);
        }
    }

    #[test]
    fn pauli_frames_only_flip_signs_consistently() {
        let n = 3;
        let mut c = random_mg_circuit(n, 6, 23);
        c.push_pauli("XYZ".parse().unwrap());
        let em = energy_coefficients(&c).unwrap();
        let defect = (em.coefficients() + em.coefficients().transpose())
            .iter()
            .map(|x| x.abs())
            .fold(0.0, f64::max);
        assert!(defect < 1e-10);
        // Still a valid energy map: the full conjugated Hamiltonian has
        // the input ground energy in the ideal output state.
        let state = dense::run_unitary(&c, None).unwrap();
        let (gamma, dev) = oracle::covariance_of(n, state.amps());
        assert!(dev < 1e-9);
        let mut expect = 0.0;
        for i in 0..2 * n {
            for j in 0..2 * n {
                expect += em.coefficients()[(i, j)] * gamma[(i, j)];
            }
        }
        assert_abs_diff_eq!(expect, -(n as f64), epsilon = 1e-9);
    }

    #[test]
    fn full_hamiltonian_expectation_is_the_ground_energy() {
        // tr(H_out rho_ideal) = -n for the complete coefficient matrix.
        // Only the same-qubit pair weights survive in a single f(x)
        // evaluation, but the expectation against the exact covariance
        // needs every entry; this separates the two roles of h.
        for seed in [3u64, 9, 27] {
            let n = 5;
            let c = random_mg_circuit(n, 14, seed);
            let em = energy_coefficients(&c).unwrap();
            let state = dense::run_unitary(&c, None).unwrap();
            let (gamma, dev) = oracle::covariance_of(n, state.amps());
            assert!(dev < 1e-9);
            let mut expect = 0.0;
            for i in 0..2 * n {
                for j in 0..2 * n {
                    expect += em.coefficients()[(i, j)] * gamma[(i, j)];
                }
            }
            assert_abs_diff_eq!(expect, -(n as f64), epsilon = 1e-9);
        }
    }

    #[test]
    fn rejects_non_matchgate_operations() {
        let mut c = Circuit::new(2);
        c.push_cz(0, 1);
        assert!(matches!(
            energy_coefficients(&c),
            Err(Error::UnsupportedOp(_))
        ));
        let mut c = Circuit::new(2);
        c.push_measure(0, "a");
        assert!(energy_coefficients(&c).is_err());
    }

    #[test]
    fn samples_map_elementwise_and_serialize_at_full_precision() {
        let c = random_mg_circuit(3, 8, 31);
        let em = energy_coefficients(&c).unwrap();
        let samples = vec![vec![0, 0, 0], vec![1, 0, 1], vec![0, 1, 0]];
        let vals = postprocess_samples(&samples, &em).unwrap();
        assert_eq!(vals.len(), 3);
        for (bits, v) in samples.iter().zip(&vals) {
            assert_eq!(em.energy(bits).unwrap(), *v);
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("energies.csv");
        write_energies(&path, &vals).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let back: Vec<f64> = text.lines().map(|l| l.parse::<f64>().unwrap()).collect();
        for (a, b) in vals.iter().zip(&back) {
            assert_eq!(a, b, "17 significant digits round-trip exactly");
        }
    }

    #[test]
    fn noiseless_basis_state_output_gives_a_constant_energy() {
        // A circuit of fSWAPs and Pauli flips keeps |0..0> a basis
        // state, so every ideal sample has the same energy.
        let mut c = Circuit::new(3);
        c.push_pauli(PauliString::from_sparse(3, &[(0, crate::pauli::Pauli::X)]).unwrap());
        c.push_matchgate(1, Matchgate::fswap());
        c.push_matchgate(0, Matchgate::fswap());
        let em = energy_coefficients(&c).unwrap();
        let state = dense::run_unitary(&c, None).unwrap();
        let probs = state.probabilities();
        let support: Vec<usize> = probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 1e-12)
            .map(|(x, _)| x)
            .collect();
        assert_eq!(support.len(), 1);
        let e = em.energy_of_index(support[0]);
        assert_abs_diff_eq!(e, -3.0, epsilon = 1e-9);
    }
}
