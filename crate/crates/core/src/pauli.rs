//! Pauli letters, Pauli words and their action on Majorana modes.
//!
//! Qubit `q` (0-based) owns the two Majorana modes `2q` and `2q + 1`,
//! realised under the Jordan-Wigner convention
//!
//! ```text
//! c_{2q}   = Z_0 ... Z_{q-1} X_q
//! c_{2q+1} = Z_0 ... Z_{q-1} Y_q
//! ```
//!
//! Conjugating a mode by a Pauli word only ever produces a sign,
//! `P c_i P = s_i c_i`, so Pauli gates act on covariance matrices as
//! diagonal orthogonal matrices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Single-qubit Pauli letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn to_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    pub fn from_char(c: char) -> Result<Pauli> {
        match c {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            _ => Err(Error::InvalidConfig(format!("invalid Pauli letter {c:?}"))),
        }
    }

    /// True when the two letters anticommute (both non-identity and
    /// different).
    pub fn anticommutes(self, other: Pauli) -> bool {
        self != Pauli::I && other != Pauli::I && self != other
    }

    /// Letter X-component under the symplectic convention: X and Y flip
    /// basis states.
    pub fn has_x(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    /// Letter Z-component: Z and Y pick up a sign on |1>.
    pub fn has_z(self) -> bool {
        matches!(self, Pauli::Z | Pauli::Y)
    }
}

/// P * Q letterwise with the overall phase dropped.
impl std::ops::Mul for Pauli {
    type Output = Pauli;
    fn mul(self, rhs: Pauli) -> Pauli {
        use Pauli::*;
        match (self, rhs) {
            (I, p) | (p, I) => p,
            (a, b) if a == b => I,
            (X, Y) | (Y, X) => Z,
            (Y, Z) | (Z, Y) => X,
            (Z, X) | (X, Z) => Y,
            _ => unreachable!(),
        }
    }
}

/// A Pauli word on a fixed-width register; phases are never tracked.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    letters: Vec<Pauli>,
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        PauliString {
            letters: vec![Pauli::I; n],
        }
    }

    pub fn new(letters: Vec<Pauli>) -> Self {
        PauliString { letters }
    }

    /// Build a word of width `n` from sparse (qubit, letter) pairs.
    pub fn from_sparse(n: usize, pairs: &[(usize, Pauli)]) -> Result<Self> {
        let mut letters = vec![Pauli::I; n];
        for &(q, p) in pairs {
            if q >= n {
                return Err(Error::IndexOutOfRange { index: q, width: n });
            }
            letters[q] = letters[q] * p;
        }
        Ok(PauliString { letters })
    }

    pub fn n(&self) -> usize {
        self.letters.len()
    }

    pub fn letter(&self, q: usize) -> Pauli {
        self.letters[q]
    }

    pub fn letters(&self) -> &[Pauli] {
        &self.letters
    }

    pub fn is_identity(&self) -> bool {
        self.letters.iter().all(|&p| p == Pauli::I)
    }

    /// Indices of non-identity letters.
    pub fn support(&self) -> Vec<usize> {
        self.letters
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != Pauli::I)
            .map(|(q, _)| q)
            .collect()
    }

    pub fn weight(&self) -> usize {
        self.letters.iter().filter(|&&p| p != Pauli::I).count()
    }

    /// Letterwise product with phases dropped.
    pub fn mul(&self, other: &PauliString) -> Result<PauliString> {
        if self.n() != other.n() {
            return Err(Error::LengthMismatch(format!(
                "pauli words of widths {} and {}",
                self.n(),
                other.n()
            )));
        }
        Ok(PauliString {
            letters: self
                .letters
                .iter()
                .zip(&other.letters)
                .map(|(&a, &b)| a * b)
                .collect(),
        })
    }

    /// True when the words commute as operators.
    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let anti = self
            .letters
            .iter()
            .zip(&other.letters)
            .filter(|(&a, &b)| a.anticommutes(b))
            .count();
        anti % 2 == 0
    }

    /// Signs `s_i` with `P c_i P = s_i c_i` for all `2n` Majorana modes.
    ///
    /// Mode `2q` carries the letter X on qubit `q`, mode `2q + 1` the
    /// letter Y, both preceded by a Z-string; the sign is the commutation
    /// sign of the word with that Jordan-Wigner string.
    pub fn majorana_signs(&self) -> Vec<i8> {
        let n = self.n();
        let mut signs = vec![1i8; 2 * n];
        // Running count of anticommutations of the word with the Z-prefix.
        let mut prefix_anti = 0usize;
        for q in 0..n {
            let here = self.letters[q];
            let anti_x = prefix_anti + usize::from(here.anticommutes(Pauli::X));
            let anti_y = prefix_anti + usize::from(here.anticommutes(Pauli::Y));
            signs[2 * q] = if anti_x % 2 == 0 { 1 } else { -1 };
            signs[2 * q + 1] = if anti_y % 2 == 0 { 1 } else { -1 };
            prefix_anti += usize::from(here.anticommutes(Pauli::Z));
        }
        signs
    }

    /// Bit mask of letters with an X component (flips basis states).
    /// Only valid for widths <= 64; the mask uses bit `n - 1 - q` for
    /// qubit `q` so that qubit 0 is the most significant bit.
    pub fn x_mask(&self) -> u64 {
        let n = self.n();
        assert!(n <= 64, "mask only defined for widths <= 64");
        let mut m = 0u64;
        for (q, p) in self.letters.iter().enumerate() {
            if p.has_x() {
                m |= 1u64 << (n - 1 - q);
            }
        }
        m
    }

    /// Bit mask of letters with a Z component (signs on |1>).
    pub fn z_mask(&self) -> u64 {
        let n = self.n();
        assert!(n <= 64, "mask only defined for widths <= 64");
        let mut m = 0u64;
        for (q, p) in self.letters.iter().enumerate() {
            if p.has_z() {
                m |= 1u64 << (n - 1 - q);
            }
        }
        m
    }

    /// Embed the word into a wider register with qubit `q` mapped to
    /// `offset_map(q)`.
    pub fn embed(&self, width: usize, map: impl Fn(usize) -> usize) -> Result<PauliString> {
        let mut pairs = Vec::new();
        for (q, &p) in self.letters.iter().enumerate() {
            if p != Pauli::I {
                pairs.push((map(q), p));
            }
        }
        PauliString::from_sparse(width, &pairs)
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.letters {
            write!(f, "{}", p.to_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let letters = s.chars().map(Pauli::from_char).collect::<Result<_>>()?;
        Ok(PauliString { letters })
    }
}

impl Serialize for PauliString {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PauliString {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Enumerate all `4^k` Pauli words on `support` within a register of
/// width `n`, identity elsewhere.
pub fn enumerate_words(n: usize, support: &[usize]) -> Vec<PauliString> {
    let k = support.len();
    let mut out = Vec::with_capacity(4usize.pow(k as u32));
    for idx in 0..4usize.pow(k as u32) {
        let mut letters = vec![Pauli::I; n];
        let mut rem = idx;
        for &q in support {
            letters[q] = Pauli::ALL[rem % 4];
            rem /= 4;
        }
        out.push(PauliString { letters });
    }
    out
}
