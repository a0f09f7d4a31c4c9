//! Circuit intermediate representation and its JSON file format.
//!
//! A circuit is a fixed-width register plus an ordered op list. Encoded
//! and verification circuits contain matchgates (on adjacent line pairs),
//! nearest-neighbour CZ gates, Pauli words, Z-measurements and adaptive
//! Pauli corrections. Base (pre-encoding) circuits may additionally hold
//! arbitrary single-qubit gates and far CZ gates.
//!
//! The file format stores one object per op, discriminated by `"kind"`:
//! `mg`, `sq`, `cz`, `pauli`, `measure`, `correction`. Complex numbers
//! are `[re, im]` pairs and all indices are 0-based.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, Matrix2, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matchgate::{Matchgate, PairGen, C64};
use crate::pauli::PauliString;

/// Generator data attached to a noisy gate: the Hermitian exponent of
/// the ideal gate (as quadratic-generator terms) and the layer the gate
/// sits in, used by layer-dependent noise schedules.
#[derive(Debug, Clone, PartialEq)]
pub struct GateGenerator {
    pub terms: Vec<(PairGen, f64)>,
    pub layer: usize,
}

/// One circuit operation.
#[derive(Debug, Clone)]
pub enum CircuitOp {
    /// Matchgate on lines (q, q+1).
    Matchgate {
        q: usize,
        gate: Matchgate,
        generator: Option<GateGenerator>,
    },
    /// Controlled-Z between two (not necessarily adjacent) lines.
    Cz { a: usize, b: usize },
    /// Arbitrary single-qubit gate; only allowed in base circuits.
    SingleQubit { q: usize, u: Matrix2<C64> },
    /// Pauli word over the full register.
    Pauli { word: PauliString },
    /// Destructive Z-basis measurement of one line, recorded under `label`.
    MeasureZ { q: usize, label: String },
    /// Adaptive Pauli correction: the outcomes recorded under `keys`
    /// (concatenated in order) select a word from `table`.
    Correction {
        gadget: usize,
        keys: Vec<String>,
        table: BTreeMap<String, PauliString>,
    },
}

/// A fixed-width circuit. `data_width` distinguishes the data register
/// from appended gadget registers; plain circuits have
/// `data_width == width`.
#[derive(Debug, Clone)]
pub struct Circuit {
    width: usize,
    data_width: usize,
    pub ops: Vec<CircuitOp>,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl Circuit {
    pub fn new(width: usize) -> Self {
        Circuit {
            width,
            data_width: width,
            ops: Vec::new(),
            meta: serde_json::Map::new(),
        }
    }

    pub fn with_data_width(width: usize, data_width: usize) -> Self {
        assert!(data_width <= width);
        Circuit {
            width,
            data_width,
            ops: Vec::new(),
            meta: serde_json::Map::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data_width(&self) -> usize {
        self.data_width
    }

    pub fn push_matchgate(&mut self, q: usize, gate: Matchgate) {
        self.ops.push(CircuitOp::Matchgate {
            q,
            gate,
            generator: None,
        });
    }

    pub fn push_generated_gate(&mut self, q: usize, gate: Matchgate, gen: GateGenerator) {
        self.ops.push(CircuitOp::Matchgate {
            q,
            gate,
            generator: Some(gen),
        });
    }

    pub fn push_cz(&mut self, a: usize, b: usize) {
        self.ops.push(CircuitOp::Cz { a, b });
    }

    pub fn push_single_qubit(&mut self, q: usize, u: Matrix2<C64>) {
        self.ops.push(CircuitOp::SingleQubit { q, u });
    }

    pub fn push_pauli(&mut self, word: PauliString) {
        self.ops.push(CircuitOp::Pauli { word });
    }

    pub fn push_measure(&mut self, q: usize, label: impl Into<String>) {
        self.ops.push(CircuitOp::MeasureZ {
            q,
            label: label.into(),
        });
    }

    /// Check all structural invariants; returns the first violation.
    pub fn validate(&self) -> Result<()> {
        let n = self.width;
        let mut labels = BTreeSet::new();
        for (idx, op) in self.ops.iter().enumerate() {
            let fail = |msg: String| Err(Error::InvalidConfig(format!("op {idx}: {msg}")));
            match op {
                CircuitOp::Matchgate { q, .. } => {
                    if q + 1 >= n {
                        return fail(format!("matchgate pair ({q}, {}) exceeds width {n}", q + 1));
                    }
                }
                CircuitOp::Cz { a, b } => {
                    if *a == *b || *a >= n || *b >= n {
                        return fail(format!("cz lines ({a}, {b}) invalid for width {n}"));
                    }
                }
                CircuitOp::SingleQubit { q, u } => {
                    if *q >= n {
                        return fail(format!("single-qubit line {q} exceeds width {n}"));
                    }
                    let dev = (u.adjoint() * u - Matrix2::identity())
                        .iter()
                        .map(|z| z.norm())
                        .fold(0.0, f64::max);
                    if dev > crate::matchgate::GATE_TOL {
                        return Err(Error::NotUnitary(dev));
                    }
                }
                CircuitOp::Pauli { word } => {
                    if word.n() != n {
                        return fail(format!("pauli word width {} != {n}", word.n()));
                    }
                }
                CircuitOp::MeasureZ { q, label } => {
                    if *q >= n {
                        return fail(format!("measured line {q} exceeds width {n}"));
                    }
                    if !labels.insert(label.clone()) {
                        return fail(format!("duplicate measurement label {label:?}"));
                    }
                }
                CircuitOp::Correction { keys, table, .. } => {
                    if keys.is_empty() {
                        return fail("correction with empty key list".into());
                    }
                    let expect = 1usize << keys.len();
                    if table.len() != expect {
                        return fail(format!(
                            "correction table has {} entries, expected {expect}",
                            table.len()
                        ));
                    }
                    for (key, word) in table {
                        if key.len() != keys.len() || !key.chars().all(|c| c == '0' || c == '1') {
                            return fail(format!("malformed correction key {key:?}"));
                        }
                        if word.n() != n {
                            return fail(format!("correction word width {} != {n}", word.n()));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// True when every op can be processed by the covariance simulator.
    pub fn is_classically_simulable(&self) -> bool {
        self.ops.iter().all(|op| {
            matches!(
                op,
                CircuitOp::Matchgate { .. }
                    | CircuitOp::Pauli { .. }
                    | CircuitOp::MeasureZ { .. }
                    | CircuitOp::Correction { .. }
            )
        })
    }

    /// Total mode rotation of a measurement-free matchgate/Pauli circuit.
    pub fn total_orthogonal(&self) -> Result<DMatrix<f64>> {
        let mut r = DMatrix::<f64>::identity(2 * self.width, 2 * self.width);
        for op in &self.ops {
            match op {
                CircuitOp::Matchgate { q, gate, .. } => {
                    let block = gate.orthogonal()?;
                    left_multiply_block(&mut r, 2 * q, &block);
                }
                CircuitOp::Pauli { word } => {
                    let signs = word.majorana_signs();
                    for (row, s) in signs.iter().enumerate() {
                        if *s < 0 {
                            for c in 0..2 * self.width {
                                r[(row, c)] = -r[(row, c)];
                            }
                        }
                    }
                }
                other => {
                    return Err(Error::UnsupportedOp(format!(
                        "total mode rotation undefined for {other:?}"
                    )))
                }
            }
        }
        Ok(r)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let ops: Vec<OpJson> = self.ops.iter().map(OpJson::from_op).collect();
        let mut root = serde_json::Map::new();
        root.insert("n".into(), self.width.into());
        if self.data_width != self.width {
            root.insert("data_n".into(), self.data_width.into());
        }
        root.insert(
            "ops".into(),
            serde_json::to_value(ops).expect("op serialization cannot fail"),
        );
        root.insert("meta".into(), serde_json::Value::Object(self.meta.clone()));
        serde_json::Value::Object(root)
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidConfig("circuit file is not a JSON object".into()))?;
        let width = obj
            .get("n")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::InvalidConfig("circuit is missing field \"n\"".into()))?
            as usize;
        let data_width = obj
            .get("data_n")
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .unwrap_or(width);
        if data_width > width {
            return Err(Error::InvalidConfig(format!(
                "data_n {data_width} exceeds n {width}"
            )));
        }
        let ops_value = obj
            .get("ops")
            .cloned()
            .ok_or_else(|| Error::InvalidConfig("circuit is missing field \"ops\"".into()))?;
        let ops_json: Vec<OpJson> = serde_json::from_value(ops_value)?;
        let ops = ops_json
            .into_iter()
            .map(|o| o.into_op())
            .collect::<Result<Vec<_>>>()?;
        let meta = obj
            .get("meta")
            .and_then(|v| v.as_object())
            .cloned()
            .unwrap_or_default();
        let circuit = Circuit {
            width,
            data_width,
            ops,
            meta,
        };
        circuit.validate()?;
        Ok(circuit)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        Circuit::from_json(&value)
    }
}

/// r[block_rows, :] <- m4 * r[block_rows, :], the embedded left action of
/// a 4x4 mode rotation starting at `row0`.
fn left_multiply_block(r: &mut DMatrix<f64>, row0: usize, m4: &Matrix4<f64>) {
    let cols = r.ncols();
    let mut scratch = [0.0f64; 4];
    for c in 0..cols {
        for (i, s) in scratch.iter_mut().enumerate() {
            *s = (0..4).map(|j| m4[(i, j)] * r[(row0 + j, c)]).sum();
        }
        for i in 0..4 {
            r[(row0 + i, c)] = scratch[i];
        }
    }
}

fn matrix_to_rows(m: &DMatrix<C64>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| [m[(i, j)].re, m[(i, j)].im])
                .collect()
        })
        .collect()
}

fn rows_to_matrix(rows: &[Vec<[f64; 2]>], dim: usize) -> Result<DMatrix<C64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidConfig(format!("matrix is not {dim}x{dim}")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| {
        C64::new(rows[i][j][0], rows[i][j][1])
    }))
}

#[derive(Serialize, Deserialize)]
struct GenJson {
    terms: Vec<(String, f64)>,
    layer: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum OpJson {
    Mg {
        q: usize,
        u: Vec<Vec<[f64; 2]>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gen: Option<GenJson>,
    },
    Sq {
        q: usize,
        u: Vec<Vec<[f64; 2]>>,
    },
    Cz {
        q1: usize,
        q2: usize,
    },
    Pauli {
        word: String,
    },
    Measure {
        q: usize,
        label: String,
    },
    Correction {
        gadget: usize,
        keys: Vec<String>,
        table: BTreeMap<String, String>,
    },
}

fn pair_gen_name(p: PairGen) -> &'static str {
    match p {
        PairGen::XX => "XX",
        PairGen::XY => "XY",
        PairGen::YX => "YX",
        PairGen::YY => "YY",
        PairGen::ZI => "ZI",
        PairGen::IZ => "IZ",
    }
}

fn pair_gen_from_name(s: &str) -> Result<PairGen> {
    Ok(match s {
        "XX" => PairGen::XX,
        "XY" => PairGen::XY,
        "YX" => PairGen::YX,
        "YY" => PairGen::YY,
        "ZI" => PairGen::ZI,
        "IZ" => PairGen::IZ,
        _ => {
            return Err(Error::InvalidConfig(format!(
                "unknown generator term {s:?}"
            )))
        }
    })
}

impl OpJson {
    fn from_op(op: &CircuitOp) -> OpJson {
        match op {
            CircuitOp::Matchgate { q, gate, generator } => {
                let m = gate.matrix();
                let dm = DMatrix::from_fn(4, 4, |i, j| m[(i, j)]);
                OpJson::Mg {
                    q: *q,
                    u: matrix_to_rows(&dm),
                    gen: generator.as_ref().map(|g| GenJson {
                        terms: g
                            .terms
                            .iter()
                            .map(|&(p, b)| (pair_gen_name(p).to_string(), b))
                            .collect(),
                        layer: g.layer,
                    }),
                }
            }
            CircuitOp::SingleQubit { q, u } => {
                let dm = DMatrix::from_fn(2, 2, |i, j| u[(i, j)]);
                OpJson::Sq {
                    q: *q,
                    u: matrix_to_rows(&dm),
                }
            }
            CircuitOp::Cz { a, b } => OpJson::Cz { q1: *a, q2: *b },
            CircuitOp::Pauli { word } => OpJson::Pauli {
                word: word.to_string(),
            },
            CircuitOp::MeasureZ { q, label } => OpJson::Measure {
                q: *q,
                label: label.clone(),
            },
            CircuitOp::Correction {
                gadget,
                keys,
                table,
            } => OpJson::Correction {
                gadget: *gadget,
                keys: keys.clone(),
                table: table
                    .iter()
                    .map(|(k, w)| (k.clone(), w.to_string()))
                    .collect(),
            },
        }
    }

    fn into_op(self) -> Result<CircuitOp> {
        Ok(match self {
            OpJson::Mg { q, u, gen } => {
                let dm = rows_to_matrix(&u, 4)?;
                let m4 = Matrix4::from_fn(|i, j| dm[(i, j)]);
                let generator = match gen {
                    None => None,
                    Some(g) => Some(GateGenerator {
                        terms: g
                            .terms
                            .iter()
                            .map(|(name, b)| pair_gen_from_name(name).map(|p| (p, *b)))
                            .collect::<Result<Vec<_>>>()?,
                        layer: g.layer,
                    }),
                };
                CircuitOp::Matchgate {
                    q,
                    gate: Matchgate::new(m4)?,
                    generator,
                }
            }
            OpJson::Sq { q, u } => {
                let dm = rows_to_matrix(&u, 2)?;
                CircuitOp::SingleQubit {
                    q,
                    u: Matrix2::from_fn(|i, j| dm[(i, j)]),
                }
            }
            OpJson::Cz { q1, q2 } => CircuitOp::Cz { a: q1, b: q2 },
            OpJson::Pauli { word } => CircuitOp::Pauli {
                word: word.parse()?,
            },
            OpJson::Measure { q, label } => CircuitOp::MeasureZ { q, label },
            OpJson::Correction {
                gadget,
                keys,
                table,
            } => CircuitOp::Correction {
                gadget,
                keys,
                table: table
                    .into_iter()
                    .map(|(k, w)| w.parse().map(|word| (k, word)))
                    .collect::<Result<BTreeMap<_, _>>>()?,
            },
        })
    }
}
