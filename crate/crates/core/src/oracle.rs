//! Brute-force dense reference layer.
//!
//! Everything in this module is built directly from Kronecker products of
//! explicit 2x2 matrices, with no shortcuts shared with the optimized
//! simulation paths. It exists so that derived quantities (mode
//! rotations, conjugation signs, covariance matrices, gadget correction
//! tables) can be cross-checked against an independent computation; it
//! is deliberately slow and capped at small register widths.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matchgate::C64;
use crate::pauli::{Pauli, PauliString};

fn c(re: f64, im: f64) -> C64 {
    Complex64::new(re, im)
}

pub fn m2(entries: [[C64; 2]; 2]) -> DMatrix<C64> {
    DMatrix::from_row_slice(
        2,
        2,
        &[entries[0][0], entries[0][1], entries[1][0], entries[1][1]],
    )
}

pub fn id2() -> DMatrix<C64> {
    DMatrix::identity(2, 2)
}
pub fn x2() -> DMatrix<C64> {
    m2([[c(0., 0.), c(1., 0.)], [c(1., 0.), c(0., 0.)]])
}
pub fn y2() -> DMatrix<C64> {
    m2([[c(0., 0.), c(0., -1.)], [c(0., 1.), c(0., 0.)]])
}
pub fn z2() -> DMatrix<C64> {
    m2([[c(1., 0.), c(0., 0.)], [c(0., 0.), c(-1., 0.)]])
}

pub fn letter_matrix(p: Pauli) -> DMatrix<C64> {
    match p {
        Pauli::I => id2(),
        Pauli::X => x2(),
        Pauli::Y => y2(),
        Pauli::Z => z2(),
    }
}

/// Kronecker chain with qubit 0 as the most significant factor.
pub fn kron_chain(factors: &[DMatrix<C64>]) -> DMatrix<C64> {
    let mut m = DMatrix::identity(1, 1);
    for f in factors {
        m = m.kronecker(f);
    }
    m
}

/// Dense matrix of a Pauli word, phases included.
pub fn pauli_word_matrix(word: &PauliString) -> DMatrix<C64> {
    let factors: Vec<_> = word.letters().iter().map(|&p| letter_matrix(p)).collect();
    kron_chain(&factors)
}

/// Dense Jordan-Wigner Majorana operator for `mode` on `n` qubits:
/// Z-string up to the owning qubit, then X (even mode) or Y (odd mode).
pub fn majorana_matrix(n: usize, mode: usize) -> DMatrix<C64> {
    assert!(mode < 2 * n);
    let q = mode / 2;
    let mut factors = Vec::with_capacity(n);
    for k in 0..n {
        factors.push(if k < q {
            z2()
        } else if k == q {
            if mode % 2 == 0 {
                x2()
            } else {
                y2()
            }
        } else {
            id2()
        });
    }
    kron_chain(&factors)
}

/// Embed a unitary on the listed qubits (ascending significance order as
/// given) into the full 2^n space.
pub fn embed_unitary(n: usize, qubits: &[usize], u: &DMatrix<C64>) -> DMatrix<C64> {
    let k = qubits.len();
    assert_eq!(u.nrows(), 1 << k);
    let dim = 1usize << n;
    let mut out = DMatrix::zeros(dim, dim);
    for col in 0..dim {
        let mut j = 0usize;
        for (pos, &q) in qubits.iter().enumerate() {
            let bit = (col >> (n - 1 - q)) & 1;
            j |= bit << (k - 1 - pos);
        }
        for i in 0..(1 << k) {
            let mut row = col;
            for (pos, &q) in qubits.iter().enumerate() {
                let bit = (i >> (k - 1 - pos)) & 1;
                let shift = n - 1 - q;
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

/// Mode rotation of a unitary by direct conjugation of every dense
/// Majorana operator: U c_j U^dag = sum_i R_ij c_i. Returns (R, worst
/// imaginary part), leaving validation to the caller.
pub fn conjugation_orthogonal(n: usize, u: &DMatrix<C64>) -> (DMatrix<f64>, f64) {
    let dim = 1usize << n;
    let cs: Vec<_> = (0..2 * n).map(|m| majorana_matrix(n, m)).collect();
    let udag = u.adjoint();
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    let mut worst_im: f64 = 0.0;
    for j in 0..2 * n {
        let conj = u * &cs[j] * &udag;
        for i in 0..2 * n {
            let tr = (&cs[i] * &conj).trace() / c(dim as f64, 0.0);
            worst_im = worst_im.max(tr.im.abs());
            r[(i, j)] = tr.re;
        }
    }
    (r, worst_im)
}

/// Covariance matrix of a pure state: Gamma_ab = i <psi| c_a c_b |psi>
/// for a != b, zero on the diagonal. Returns (Gamma, worst deviation
/// from the expected real/antisymmetric structure).
pub fn covariance_of(n: usize, psi: &[C64]) -> (DMatrix<f64>, f64) {
    let v = DVector::from_column_slice(psi);
    let applied: Vec<DVector<C64>> = (0..2 * n).map(|m| majorana_matrix(n, m) * &v).collect();
    let mut g = DMatrix::zeros(2 * n, 2 * n);
    let mut worst: f64 = 0.0;
    for a in 0..2 * n {
        for b in 0..2 * n {
            if a == b {
                continue;
            }
            let e = applied[a].dotc(&applied[b]) * c(0., 1.);
            worst = worst.max(e.im.abs());
            g[(a, b)] = e.re;
        }
    }
    (g, worst)
}

/// Norm of Lambda |psi x psi| with Lambda = sum_i c_i (x) c_i; zero
/// exactly on pure fermionic Gaussian states.
pub fn gaussianity_defect(n: usize, psi: &[C64]) -> f64 {
    let v = DVector::from_column_slice(psi);
    let applied: Vec<DVector<C64>> = (0..2 * n).map(|m| majorana_matrix(n, m) * &v).collect();
    let mut total = c(0., 0.);
    for a in 0..2 * n {
        for b in 0..2 * n {
            let overlap = applied[a].dotc(&applied[b]);
            total += overlap * overlap;
        }
    }
    assert!(total.im.abs() < 1e-9);
    total.re.max(0.0).sqrt()
}

/// Haar-random unitary via QR of a complex Gaussian matrix with the
/// phase of the R diagonal absorbed into Q.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<C64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| {
        c(StandardNormal.sample(rng), StandardNormal.sample(rng))
    });
    let qr = g.qr();
    let rdiag: Vec<C64> = (0..dim).map(|i| qr.r()[(i, i)]).collect();
    let mut q = qr.q();
    for j in 0..dim {
        let phase = rdiag[j] / c(rdiag[j].norm(), 0.0);
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Uniformly random pure state on n qubits.
pub fn random_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<C64> {
    let dim = 1usize << n;
    let mut v: Vec<C64> = (0..dim)
        .map(|_| c(StandardNormal.sample(rng), StandardNormal.sample(rng)))
        .collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in &mut v {
        *z /= norm;
    }
    v
}

pub fn fidelity(a: &[C64], b: &[C64]) -> f64 {
    let overlap: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    overlap.norm_sqr()
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
