//! Two-qubit matchgates G(U1, U2) stored as explicit 4x4 matrices.
//!
//! In the pair basis (|00>, |01>, |10>, |11>) a matchgate acts as U1 on
//! the even-parity span {|00>, |11>} and U2 on the odd-parity span
//! {|01>, |10>}, with det U1 = det U2. The first qubit of the pair is the
//! more significant bit.
//!
//! Matrices are the source of truth; the rotation-angle view
//! (alpha1, alpha2, beta, gamma, phase) is computed on demand and only
//! exists for gates of the form
//! `exp(i*phase) (e^{i a1 Z} (x) e^{i a2 Z}) exp(i(beta XX + gamma YY))`.

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Unitarity / block-structure tolerance for gate validation.
pub const GATE_TOL: f64 = 1e-10;
/// Tolerance on the orthogonality of a mode-rotation matrix derived from
/// a matchgate.
pub const ORTHOGONAL_TOL: f64 = 1e-12;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Kronecker product with the first factor on the more significant qubit.
pub fn kron2(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
    let mut m = Matrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    m[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    m
}

pub fn pauli_i2() -> Matrix2<C64> {
    Matrix2::identity()
}
pub fn pauli_x2() -> Matrix2<C64> {
    Matrix2::new(c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.))
}
pub fn pauli_y2() -> Matrix2<C64> {
    Matrix2::new(c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.))
}
pub fn pauli_z2() -> Matrix2<C64> {
    Matrix2::new(c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.))
}
pub fn hadamard2() -> Matrix2<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Matrix2::new(c(s, 0.), c(s, 0.), c(s, 0.), c(-s, 0.))
}

/// The four Majorana operators restricted to a pair of adjacent qubits:
/// c0 = X(x)I, c1 = Y(x)I, c2 = Z(x)X, c3 = Z(x)Y.
pub fn local_majoranas() -> [Matrix4<C64>; 4] {
    [
        kron2(&pauli_x2(), &pauli_i2()),
        kron2(&pauli_y2(), &pauli_i2()),
        kron2(&pauli_z2(), &pauli_x2()),
        kron2(&pauli_z2(), &pauli_y2()),
    ]
}

/// Quadratic generators of the matchgate group on a qubit pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum PairGen {
    XX,
    XY,
    YX,
    YY,
    /// Z on the first qubit of the pair.
    ZI,
    /// Z on the second qubit of the pair.
    IZ,
}

impl PairGen {
    pub const ALL: [PairGen; 6] = [
        PairGen::XX,
        PairGen::XY,
        PairGen::YX,
        PairGen::YY,
        PairGen::ZI,
        PairGen::IZ,
    ];

    pub fn matrix(self) -> Matrix4<C64> {
        match self {
            PairGen::XX => kron2(&pauli_x2(), &pauli_x2()),
            PairGen::XY => kron2(&pauli_x2(), &pauli_y2()),
            PairGen::YX => kron2(&pauli_y2(), &pauli_x2()),
            PairGen::YY => kron2(&pauli_y2(), &pauli_y2()),
            PairGen::ZI => kron2(&pauli_z2(), &pauli_i2()),
            PairGen::IZ => kron2(&pauli_i2(), &pauli_z2()),
        }
    }
}

/// exp(i H) for a small Hermitian matrix, by scaling and squaring a
/// Taylor series; accurate to machine precision for the norms used here.
pub fn exp_i_hermitian4(h: &Matrix4<C64>) -> Matrix4<C64> {
    let mut a = h.map(|z| z * C64::i());
    let norm = a.iter().map(|z| z.norm()).fold(0.0, f64::max) * 4.0;
    let mut squarings = 0u32;
    while norm / 2f64.powi(squarings as i32) > 0.5 {
        squarings += 1;
    }
    a /= C64::new(2f64.powi(squarings as i32), 0.0);
    let mut result = Matrix4::identity();
    let mut term = Matrix4::identity();
    for k in 1..=18 {
        term = (term * a) / C64::new(k as f64, 0.0);
        result += term;
    }
    for _ in 0..squarings {
        result = result * result;
    }
    result
}

fn max_abs4(m: &Matrix4<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
fn max_abs2(m: &Matrix2<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn det2(u: &Matrix2<C64>) -> C64 {
    u[(0, 0)] * u[(1, 1)] - u[(0, 1)] * u[(1, 0)]
}

fn is_unitary2(u: &Matrix2<C64>) -> bool {
    let d = u.adjoint() * u - Matrix2::identity();
    d.iter().map(|z| z.norm()).fold(0.0, f64::max) <= GATE_TOL
}

/// Rotation-angle view of a matchgate of XX/YY form; see module docs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XyView {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    pub gamma: f64,
    pub phase: f64,
}

impl XyView {
    /// Rebuild the 4x4 matrix this view describes.
    pub fn matrix(&self) -> Matrix4<C64> {
        let zrot = |a: f64| {
            Matrix2::new(
                C64::from_polar(1.0, a),
                c(0., 0.),
                c(0., 0.),
                C64::from_polar(1.0, -a),
            )
        };
        let local = kron2(&zrot(self.alpha1), &zrot(self.alpha2));
        let h = PairGen::XX.matrix() * c(self.beta, 0.) + PairGen::YY.matrix() * c(self.gamma, 0.);
        local * exp_i_hermitian4(&h) * C64::from_polar(1.0, self.phase)
    }
}

/// A validated two-qubit matchgate.
#[derive(Debug, Clone, PartialEq)]
pub struct Matchgate {
    m: Matrix4<C64>,
}

impl Matchgate {
    /// Validate and wrap an explicit 4x4 matrix.
    pub fn new(m: Matrix4<C64>) -> Result<Self> {
        let dev = max_abs4(&(m.adjoint() * m - Matrix4::identity()));
        if dev > GATE_TOL {
            return Err(Error::NotUnitary(dev));
        }
        // Off-block entries mix parity sectors and must vanish.
        let off = [
            (0usize, 1usize),
            (0, 2),
            (1, 0),
            (1, 3),
            (2, 0),
            (2, 3),
            (3, 1),
            (3, 2),
        ];
        let leak = off
            .iter()
            .map(|&(i, j)| m[(i, j)].norm())
            .fold(0.0, f64::max);
        if leak > GATE_TOL {
            return Err(Error::NotMatchgate(format!(
                "parity-mixing entries of size {leak:.3e}"
            )));
        }
        let mg = Matchgate { m };
        let dd = (det2(&mg.u1()) - det2(&mg.u2())).norm();
        if dd > GATE_TOL {
            return Err(Error::NotMatchgate(format!(
                "block determinants differ by {dd:.3e}"
            )));
        }
        Ok(mg)
    }

    /// G(U1, U2) from its even- and odd-parity blocks.
    pub fn from_blocks(u1: &Matrix2<C64>, u2: &Matrix2<C64>) -> Result<Self> {
        if !is_unitary2(u1) || !is_unitary2(u2) {
            return Err(Error::NotUnitary(f64::NAN));
        }
        let dd = (det2(u1) - det2(u2)).norm();
        if dd > GATE_TOL {
            return Err(Error::NotMatchgate(format!(
                "block determinants differ by {dd:.3e}"
            )));
        }
        let mut m = Matrix4::zeros();
        m[(0, 0)] = u1[(0, 0)];
        m[(0, 3)] = u1[(0, 1)];
        m[(3, 0)] = u1[(1, 0)];
        m[(3, 3)] = u1[(1, 1)];
        m[(1, 1)] = u2[(0, 0)];
        m[(1, 2)] = u2[(0, 1)];
        m[(2, 1)] = u2[(1, 0)];
        m[(2, 2)] = u2[(1, 1)];
        Ok(Matchgate { m })
    }

    /// Encoded single-qubit gate G(A, A).
    pub fn from_single_qubit(a: &Matrix2<C64>) -> Result<Self> {
        Matchgate::from_blocks(a, a)
    }

    /// The fermionic swap G(Z, X) = CZ * SWAP.
    pub fn fswap() -> Self {
        Matchgate::from_blocks(&pauli_z2(), &pauli_x2()).expect("fswap is a matchgate")
    }

    pub fn identity() -> Self {
        Matchgate {
            m: Matrix4::identity(),
        }
    }

    /// exp(i sum_k beta_k P_k) over the quadratic generators.
    pub fn from_generator(terms: &[(PairGen, f64)]) -> Result<Self> {
        let mut h = Matrix4::zeros();
        for &(p, beta) in terms {
            h += p.matrix() * c(beta, 0.);
        }
        Matchgate::new(exp_i_hermitian4(&h))
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.m
    }

    /// Even-parity block acting on span{|00>, |11>}.
    pub fn u1(&self) -> Matrix2<C64> {
        Matrix2::new(
            self.m[(0, 0)],
            self.m[(0, 3)],
            self.m[(3, 0)],
            self.m[(3, 3)],
        )
    }

    /// Odd-parity block acting on span{|01>, |10>}.
    pub fn u2(&self) -> Matrix2<C64> {
        Matrix2::new(
            self.m[(1, 1)],
            self.m[(1, 2)],
            self.m[(2, 1)],
            self.m[(2, 2)],
        )
    }

    /// The 4x4 mode rotation R with M c_j M^dag = sum_i R_ij c_i, in the
    /// pair's local Majorana basis. R is validated to be real orthogonal.
    pub fn orthogonal(&self) -> Result<Matrix4<f64>> {
        let cs = local_majoranas();
        let mdag = self.m.adjoint();
        let mut r = Matrix4::zeros();
        let mut worst_im = 0.0f64;
        for j in 0..4 {
            let conj = self.m * cs[j] * mdag;
            for i in 0..4 {
                // tr(c_i c_k) = 4 delta_ik.
                let entry = (cs[i] * conj).trace() / c(4.0, 0.0);
                worst_im = worst_im.max(entry.im.abs());
                r[(i, j)] = entry.re;
            }
        }
        if worst_im > ORTHOGONAL_TOL {
            return Err(Error::NotOrthogonal(worst_im));
        }
        let dev = (r.transpose() * r - Matrix4::identity())
            .iter()
            .map(|x| x.abs())
            .fold(0.0, f64::max);
        if dev > ORTHOGONAL_TOL {
            return Err(Error::NotOrthogonal(dev));
        }
        Ok(r)
    }

    /// Attempt to express the gate in the XX/YY rotation-angle view.
    /// Returns None for matchgates outside that family.
    pub fn xy_view(&self) -> Option<XyView> {
        let u1 = self.u1();
        let u2 = self.u2();
        let phase = det2(&u1).arg() / 2.0;
        let unphase = C64::from_polar(1.0, -phase);
        let (b1, c1) = su2_z_then_x(&(u1 * unphase))?;
        let (b2, c2) = su2_z_then_x(&(u2 * unphase))?;
        let view = XyView {
            alpha1: (b1 + b2) / 2.0,
            alpha2: (b1 - b2) / 2.0,
            beta: (c1 + c2) / 2.0,
            gamma: (c2 - c1) / 2.0,
            phase,
        };
        let dev = max_abs4(&(view.matrix() - self.m));
        if dev <= 1e-9 {
            Some(view)
        } else {
            None
        }
    }
}

/// Decompose an SU(2)-like matrix as e^{i b Z} e^{i c X}, if possible.
fn su2_z_then_x(v: &Matrix2<C64>) -> Option<(f64, f64)> {
    let v00 = v[(0, 0)];
    let v01 = v[(0, 1)];
    let b = if v00.norm() >= v01.norm() {
        v00.arg()
    } else {
        // v01 = i e^{ib} sin(c); pick sin(c) > 0.
        v01.arg() - std::f64::consts::FRAC_PI_2
    };
    let eb = C64::from_polar(1.0, -b);
    let cos_c = (v00 * eb).re;
    let sin_c = (v01 * eb * c(0., -1.)).re;
    let cval = sin_c.atan2(cos_c);
    // Consistency of the assumed form is checked by the caller via
    // reconstruction, so no further validation here.
    Some((b, cval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fswap_is_cz_times_swap() {
        let f = Matchgate::fswap();
        let m = f.matrix();
        let mut expect = Matrix4::zeros();
        expect[(0, 0)] = c(1., 0.);
        expect[(2, 1)] = c(1., 0.);
        expect[(1, 2)] = c(1., 0.);
        expect[(3, 3)] = c(-1., 0.);
        assert_abs_diff_eq!(max_abs4(&(m - expect)), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cz_is_rejected() {
        let mut cz = Matrix4::identity();
        cz[(3, 3)] = c(-1., 0.);
        // CZ has det U1 = -1 and det U2 = +1.
        assert!(matches!(Matchgate::new(cz), Err(Error::NotMatchgate(_))));
    }

    #[test]
    fn parity_mixing_matrix_is_rejected() {
        // SWAP alone mixes nothing, but a Hadamard on one qubit does.
        let m = kron2(&hadamard2(), &pauli_i2());
        assert!(Matchgate::new(m).is_err());
    }

    #[test]
    fn encoded_single_qubit_gate_is_a_matchgate() {
        let a = Matrix2::new(c(0.6, 0.0), c(0.0, 0.8), c(0.0, 0.8), c(0.6, 0.0));
        let g = Matchgate::from_single_qubit(&a).unwrap();
        assert_abs_diff_eq!(
            max_abs2(&(g.u1() - a)) + max_abs2(&(g.u2() - a)),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn generator_exponential_matches_closed_form() {
        // exp(i b XX) = cos(b) I + i sin(b) XX.
        let b = 0.37;
        let g = Matchgate::from_generator(&[(PairGen::XX, b)]).unwrap();
        let expect = Matrix4::identity() * c(b.cos(), 0.0) + PairGen::XX.matrix() * c(0.0, b.sin());
        assert_abs_diff_eq!(max_abs4(&(g.matrix() - expect)), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn orthogonal_of_identity_is_identity() {
        let r = Matchgate::identity().orthogonal().unwrap();
        assert_abs_diff_eq!(
            (r - Matrix4::identity())
                .iter()
                .map(|x| x.abs())
                .fold(0.0, f64::max),
            0.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn orthogonal_is_multiplicative() {
        let a = Matchgate::from_generator(&[(PairGen::XX, 0.3), (PairGen::ZI, -0.9)]).unwrap();
        let b = Matchgate::from_generator(&[(PairGen::YY, 1.1), (PairGen::XY, 0.2)]).unwrap();
        let ab = Matchgate::new(a.matrix() * b.matrix()).unwrap();
        let dev = (ab.orthogonal().unwrap() - a.orthogonal().unwrap() * b.orthogonal().unwrap())
            .iter()
            .map(|x| x.abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-12, "homomorphism deviation {dev}");
    }

    #[test]
    fn xy_view_roundtrips_for_xx_yy_gates() {
        let view = XyView {
            alpha1: 0.3,
            alpha2: -1.2,
            beta: 0.7,
            gamma: -0.25,
            phase: 0.4,
        };
        let g = Matchgate::new(view.matrix()).unwrap();
        let got = g.xy_view().expect("view exists");
        assert_abs_diff_eq!(
            max_abs4(&(got.matrix() - view.matrix())),
            0.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn xy_view_absent_for_generic_matchgates() {
        // G(H', H') with H' = e^{i pi/4 Y} is not of the XX/YY form since
        // its blocks need a trailing Z rotation.
        let t = std::f64::consts::FRAC_PI_4;
        let hrot = Matrix2::new(
            c(t.cos(), 0.),
            c(-t.sin(), 0.),
            c(t.sin(), 0.),
            c(t.cos(), 0.),
        );
        let g = Matchgate::from_blocks(&hrot, &pauli_i2()).unwrap();
        assert!(g.xy_view().is_none());
    }
}
