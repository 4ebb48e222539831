//! Circuit data model, validation, JSON serialization, and full-unitary
//! assembly for small registers.
//!
//! Wire format (one JSON document per circuit):
//!
//! ```json
//! {"n": 2, "gates": [
//!   {"kind": "single", "q": 0, "u": M2},
//!   {"kind": "two", "i": 0, "j": 1, "m": M4},
//!   {"kind": "cu", "i": 0, "j": 1, "basis": [V2, V2], "b": M2, "c": M2}
//! ]}
//! ```
//!
//! where `M2`/`M4` are row-major arrays of `[re, im]` pairs and `V2` is a
//! 2-entry array of `[re, im]`. Gate list index 0 is applied first; tensor
//! slot 0 is the most significant bit of computational-basis indices.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dense::DMat;
use crate::error::Error;
use crate::gate::{BasisControlledGate, ControlSlot};
use crate::mat::{Mat2, Mat4, QubitBasis, Vec2, ZERO};

/// Default cap on the register size for dense (`2^n`-sized) operations.
pub const DEFAULT_CAP: usize = 10;

/// One gate of a circuit, acting on the mixed register.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    Single {
        q: usize,
        u: Mat2,
    },
    Two {
        i: usize,
        j: usize,
        m: Mat4,
    },
    /// A two-qubit gate already in basis-controlled form, controlled on `i`.
    TwoDecomposed {
        i: usize,
        j: usize,
        g: BasisControlledGate,
    },
}

/// A validated circuit on `n` qubits; immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub n: usize,
    pub gates: Vec<Gate>,
}

// --- raw wire types -------------------------------------------------------

type Pair = [f64; 2];

#[derive(Serialize, Deserialize)]
struct RawCircuit {
    n: usize,
    gates: Vec<RawGate>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawGate {
    Single {
        q: usize,
        u: Vec<Pair>,
    },
    Two {
        i: usize,
        j: usize,
        m: Vec<Pair>,
    },
    Cu {
        i: usize,
        j: usize,
        basis: [Vec<Pair>; 2],
        b: Vec<Pair>,
        c: Vec<Pair>,
    },
}

fn c_of(p: Pair) -> C64 {
    C64::new(p[0], p[1])
}

fn pair_of(c: C64) -> Pair {
    [c.re, c.im]
}

fn mat2_of(pairs: &[Pair]) -> Result<Mat2, Error> {
    if pairs.len() != 4 {
        return Err(Error::Schema(format!(
            "expected 4 complex entries for a 2x2 matrix, got {}",
            pairs.len()
        )));
    }
    Ok(Mat2([
        [c_of(pairs[0]), c_of(pairs[1])],
        [c_of(pairs[2]), c_of(pairs[3])],
    ]))
}

fn mat4_of(pairs: &[Pair]) -> Result<Mat4, Error> {
    if pairs.len() != 16 {
        return Err(Error::Schema(format!(
            "expected 16 complex entries for a 4x4 matrix, got {}",
            pairs.len()
        )));
    }
    let mut m = [[ZERO; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = c_of(pairs[4 * i + j]);
        }
    }
    Ok(Mat4(m))
}

fn vec2_of(pairs: &[Pair]) -> Result<Vec2, Error> {
    if pairs.len() != 2 {
        return Err(Error::Schema(format!(
            "expected 2 complex entries for a state vector, got {}",
            pairs.len()
        )));
    }
    Ok(Vec2([c_of(pairs[0]), c_of(pairs[1])]))
}

pub(crate) fn mat2_pairs(m: &Mat2) -> Vec<Pair> {
    m.0.iter().flatten().map(|&c| pair_of(c)).collect()
}

fn mat4_pairs(m: &Mat4) -> Vec<Pair> {
    m.0.iter().flatten().map(|&c| pair_of(c)).collect()
}

pub(crate) fn vec2_pairs(v: &Vec2) -> Vec<Pair> {
    v.0.iter().map(|&c| pair_of(c)).collect()
}

// --- parse / serialize ----------------------------------------------------

impl Circuit {
    pub fn new(n: usize, gates: Vec<Gate>) -> Result<Self, Error> {
        let c = Circuit { n, gates };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<(), Error> {
        if self.n == 0 {
            return Err(Error::Schema("circuit must have at least one qubit".into()));
        }
        for (idx, g) in self.gates.iter().enumerate() {
            match g {
                Gate::Single { q, u } => {
                    if *q >= self.n {
                        return Err(Error::Index(idx));
                    }
                    if !u.is_finite() || !u.is_unitary() {
                        return Err(Error::NonUnitary { gate: Some(idx) });
                    }
                }
                Gate::Two { i, j, m } => {
                    if *i >= self.n || *j >= self.n || i == j {
                        return Err(Error::Index(idx));
                    }
                    if !m.is_finite() || !m.is_unitary() {
                        return Err(Error::NonUnitary { gate: Some(idx) });
                    }
                }
                Gate::TwoDecomposed { i, j, g } => {
                    if *i >= self.n || *j >= self.n || i == j {
                        return Err(Error::Index(idx));
                    }
                    if g.control_basis.validate().is_err()
                        || !g.branch0.is_finite()
                        || !g.branch0.is_unitary()
                        || !g.branch1.is_finite()
                        || !g.branch1.is_unitary()
                    {
                        return Err(Error::NonUnitary { gate: Some(idx) });
                    }
                }
            }
        }
        Ok(())
    }

    /// Parse and validate a circuit document.
    pub fn parse(text: &[u8]) -> Result<Self, Error> {
        let raw: RawCircuit =
            serde_json::from_slice(text).map_err(|e| Error::Schema(e.to_string()))?;
        let mut gates = Vec::with_capacity(raw.gates.len());
        for g in &raw.gates {
            gates.push(match g {
                RawGate::Single { q, u } => Gate::Single {
                    q: *q,
                    u: mat2_of(u)?,
                },
                RawGate::Two { i, j, m } => Gate::Two {
                    i: *i,
                    j: *j,
                    m: mat4_of(m)?,
                },
                RawGate::Cu { i, j, basis, b, c } => {
                    let qb = QubitBasis {
                        v0: vec2_of(&basis[0])?,
                        v1: vec2_of(&basis[1])?,
                    };
                    Gate::TwoDecomposed {
                        i: *i,
                        j: *j,
                        g: BasisControlledGate::new(
                            ControlSlot::First,
                            qb,
                            mat2_of(b)?,
                            mat2_of(c)?,
                        ),
                    }
                }
            });
        }
        Circuit::new(raw.n, gates)
    }

    /// Serialize to the wire format; `parse` of the output reproduces the
    /// circuit exactly (f64 round trip).
    pub fn serialize(&self) -> Vec<u8> {
        let gates = self
            .gates
            .iter()
            .map(|g| match g {
                Gate::Single { q, u } => RawGate::Single {
                    q: *q,
                    u: mat2_pairs(u),
                },
                Gate::Two { i, j, m } => RawGate::Two {
                    i: *i,
                    j: *j,
                    m: mat4_pairs(m),
                },
                Gate::TwoDecomposed { i, j, g } => RawGate::Cu {
                    i: *i,
                    j: *j,
                    basis: [
                        vec2_pairs(&g.control_basis.v0),
                        vec2_pairs(&g.control_basis.v1),
                    ],
                    b: mat2_pairs(&g.branch0),
                    c: mat2_pairs(&g.branch1),
                },
            })
            .collect();
        serde_json::to_vec(&RawCircuit { n: self.n, gates }).expect("serialization cannot fail")
    }

    /// Exact ordered product of the gate embeddings: gate 0 is applied
    /// first, so the result is `U_r ... U_1`.
    pub fn build_full_unitary(&self, cap: usize) -> Result<DMat, Error> {
        if self.n > cap {
            return Err(Error::TooLarge { n: self.n, cap });
        }
        let dim = 1usize << self.n;
        let mut total = DMat::identity(dim);
        for g in &self.gates {
            for col in 0..dim {
                let mut column: Vec<C64> = (0..dim).map(|r| total.at(r, col)).collect();
                apply_gate_to_state(g, self.n, &mut column);
                for r in 0..dim {
                    total.set(r, col, column[r]);
                }
            }
        }
        Ok(total)
    }
}

/// Bit position (from the least significant end) of tensor slot `q`.
#[inline]
pub fn bit_of(n: usize, q: usize) -> usize {
    n - 1 - q
}

/// Apply one gate to a dense `2^n` state vector in place.
pub fn apply_gate_to_state(g: &Gate, n: usize, state: &mut [C64]) {
    match g {
        Gate::Single { q, u } => apply_single(n, *q, u, state),
        Gate::Two { i, j, m } => apply_two(n, *i, *j, m, state),
        Gate::TwoDecomposed { i, j, g } => apply_two(n, *i, *j, &g.to_matrix(), state),
    }
}

pub fn apply_single(n: usize, q: usize, u: &Mat2, state: &mut [C64]) {
    let bit = 1usize << bit_of(n, q);
    let dim = state.len();
    for r in 0..dim {
        if r & bit != 0 {
            continue;
        }
        let r1 = r | bit;
        let (a, b) = (state[r], state[r1]);
        state[r] = u.0[0][0] * a + u.0[0][1] * b;
        state[r1] = u.0[1][0] * a + u.0[1][1] * b;
    }
}

pub fn apply_two(n: usize, i: usize, j: usize, m: &Mat4, state: &mut [C64]) {
    let bi = 1usize << bit_of(n, i);
    let bj = 1usize << bit_of(n, j);
    let dim = state.len();
    for r in 0..dim {
        if r & bi != 0 || r & bj != 0 {
            continue;
        }
        // Rows ordered as (qubit i bit, qubit j bit) = 00, 01, 10, 11.
        let idx = [r, r | bj, r | bi, r | bi | bj];
        let mut old = [ZERO; 4];
        for k in 0..4 {
            old[k] = state[idx[k]];
        }
        for k in 0..4 {
            let mut acc = ZERO;
            for l in 0..4 {
                acc += m.0[k][l] * old[l];
            }
            state[idx[k]] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::ONE;
    use crate::testutil::{haar_mat2, haar_mat4, test_rng};
    use rand::RngCore;

    fn cnot() -> Mat4 {
        let mut m = [[ZERO; 4]; 4];
        m[0][0] = ONE;
        m[1][1] = ONE;
        m[2][3] = ONE;
        m[3][2] = ONE;
        Mat4(m)
    }

    fn cnot_doc() -> String {
        let m: Vec<[f64; 2]> = cnot().0.iter().flatten().map(|c| [c.re, c.im]).collect();
        format!(
            "{{\"n\":2,\"gates\":[{{\"kind\":\"two\",\"i\":0,\"j\":1,\"m\":{}}}]}}",
            serde_json::to_string(&m).unwrap()
        )
    }

    #[test]
    fn parse_schema_sample() {
        let c = Circuit::parse(cnot_doc().as_bytes()).unwrap();
        assert_eq!(c.n, 2);
        assert_eq!(c.gates.len(), 1);
    }

    #[test]
    fn parse_rejects_scaled_matrix() {
        let doc = cnot_doc().replace("[1.0,0.0]", "[1.1,0.0]");
        match Circuit::parse(doc.as_bytes()) {
            Err(Error::NonUnitary { gate: Some(0) }) => {}
            other => panic!("expected NonUnitary(0), got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_out_of_range_index() {
        let doc = cnot_doc().replace("\"j\":1", "\"j\":2");
        match Circuit::parse(doc.as_bytes()) {
            Err(Error::Index(0)) => {}
            other => panic!("expected IndexError(0), got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_malformed_documents() {
        assert!(matches!(
            Circuit::parse(b"{\"gates\": []}"),
            Err(Error::Schema(_))
        ));
        assert!(matches!(Circuit::parse(b"not json"), Err(Error::Schema(_))));
    }

    #[test]
    fn serialize_round_trip_is_exact() {
        let mut rng = test_rng(41);
        for _ in 0..50 {
            let n = 2 + (rng.next_u64() % 3) as usize;
            let mut gates = Vec::new();
            for _ in 0..5 {
                match rng.next_u64() % 3 {
                    0 => gates.push(Gate::Single {
                        q: (rng.next_u64() as usize) % n,
                        u: haar_mat2(&mut rng),
                    }),
                    1 => {
                        let i = (rng.next_u64() as usize) % n;
                        let j = (i + 1 + (rng.next_u64() as usize) % (n - 1)) % n;
                        gates.push(Gate::Two {
                            i,
                            j,
                            m: haar_mat4(&mut rng),
                        });
                    }
                    _ => {
                        let i = (rng.next_u64() as usize) % n;
                        let j = (i + 1 + (rng.next_u64() as usize) % (n - 1)) % n;
                        gates.push(Gate::TwoDecomposed {
                            i,
                            j,
                            g: BasisControlledGate::new(
                                ControlSlot::First,
                                QubitBasis::from_v0(crate::testutil::haar_state2(&mut rng)),
                                haar_mat2(&mut rng),
                                haar_mat2(&mut rng),
                            ),
                        });
                    }
                }
            }
            let c = Circuit::new(n, gates).unwrap();
            let back = Circuit::parse(&c.serialize()).unwrap();
            assert_eq!(c, back);
        }
    }

    #[test]
    fn full_unitary_examples() {
        let empty = Circuit::new(3, vec![]).unwrap();
        let u = empty.build_full_unitary(DEFAULT_CAP).unwrap();
        assert!(u.frobenius_distance(&DMat::identity(8)) < 1e-15);

        let single_cnot = Circuit::new(
            2,
            vec![Gate::Two {
                i: 0,
                j: 1,
                m: cnot(),
            }],
        )
        .unwrap();
        let u = single_cnot.build_full_unitary(DEFAULT_CAP).unwrap();
        assert!(u.frobenius_distance(&DMat::from_mat4(&cnot())) < 1e-15);

        // CNOT₁₂ then CNOT₂₁ is (x,y) -> (y, x⊕y): computed by multiplying
        // the two 4x4 embeddings directly.
        let cnot21 = Circuit::new(
            2,
            vec![
                Gate::Two {
                    i: 0,
                    j: 1,
                    m: cnot(),
                },
                Gate::Two {
                    i: 1,
                    j: 0,
                    m: cnot(),
                },
            ],
        )
        .unwrap();
        let u = cnot21.build_full_unitary(DEFAULT_CAP).unwrap();
        let mut expect = DMat::zeros(4);
        // |00>->|00>, |01>->|11>, |10>->|01>, |11>->|10>.
        expect.set(0, 0, ONE);
        expect.set(3, 1, ONE);
        expect.set(1, 2, ONE);
        expect.set(2, 3, ONE);
        assert!(u.frobenius_distance(&expect) < 1e-15);
    }

    #[test]
    fn full_unitary_respects_cap() {
        let c = Circuit::new(5, vec![]).unwrap();
        assert!(matches!(
            c.build_full_unitary(4),
            Err(Error::TooLarge { n: 5, cap: 4 })
        ));
    }

    #[test]
    fn full_unitary_is_unitary_and_msb_convention_holds() {
        let mut rng = test_rng(42);
        let n = 3;
        let u2 = haar_mat2(&mut rng);
        let c = Circuit::new(n, vec![Gate::Single { q: 0, u: u2 }]).unwrap();
        let u = c.build_full_unitary(DEFAULT_CAP).unwrap();
        assert!(u.unitary_defect() <= n as f64 * crate::mat::TOL_UNITARY);
        // Slot 0 is the most significant bit: u acts on the top half vs
        // bottom half of the index space.
        let expect = {
            let mut m = DMat::zeros(8);
            for bi in 0..2 {
                for bj in 0..2 {
                    for rest in 0..4 {
                        m.set(bi * 4 + rest, bj * 4 + rest, u2.0[bi][bj]);
                    }
                }
            }
            m
        };
        assert!(u.frobenius_distance(&expect) < 1e-12);
    }
}
