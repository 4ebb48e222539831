//! Dense complex linear algebra on 2x2 and 4x4 matrices and 2- and
//! 4-dimensional vectors, with the fixed tolerances used throughout the
//! crate.
//!
//! Everything here is plain value types; operations are pure and cheap
//! enough to copy freely.

use num_complex::Complex64 as C64;

use crate::error::Error;

/// Unitarity defect bound: `‖M†M − I‖_F ≤ TOL_UNITARY` for matrices tagged unitary.
pub const TOL_UNITARY: f64 = 1e-9;
/// Eigenpair residual bound: `‖U·v − λ·v‖ ≤ TOL_EIG`.
pub const TOL_EIG: f64 = 1e-9;
/// Commutator / off-diagonal threshold for "these commute" and "this is diagonal".
pub const TOL_COMMUTE: f64 = 1e-8;
/// Proportionality threshold for `B ≈ φ·A`.
pub const TOL_PROP: f64 = 1e-8;
/// Eigenvalue gap below which a 2x2 (or a 4x4 cluster) is treated as degenerate.
pub const TOL_DEGENERATE: f64 = 1e-8;
/// Product test threshold: `|det(reshape(v))| ≤ TOL_PRODUCT` declares a 4-vector product.
pub const TOL_PRODUCT: f64 = 1e-8;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// A 2-dimensional complex vector (a single-qubit state when unit norm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2(pub [C64; 2]);

/// A 4-dimensional complex vector (a two-qubit state when unit norm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec4(pub [C64; 4]);

/// A dense 2x2 complex matrix, row major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[C64; 2]; 2]);

/// A dense 4x4 complex matrix, row major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat4(pub [[C64; 4]; 4]);

impl Vec2 {
    pub const KET0: Vec2 = Vec2([ONE, ZERO]);
    pub const KET1: Vec2 = Vec2([ZERO, ONE]);

    pub fn new(a: C64, b: C64) -> Self {
        Vec2([a, b])
    }

    /// Hermitian inner product `⟨self|other⟩`, conjugate-linear in `self`.
    pub fn inner(&self, other: &Vec2) -> C64 {
        self.0[0].conj() * other.0[0] + self.0[1].conj() * other.0[1]
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).re.sqrt()
    }

    pub fn scale(&self, s: C64) -> Vec2 {
        Vec2([self.0[0] * s, self.0[1] * s])
    }

    pub fn sub(&self, other: &Vec2) -> Vec2 {
        Vec2([self.0[0] - other.0[0], self.0[1] - other.0[1]])
    }

    pub fn normalized(&self) -> Vec2 {
        self.scale(C64::new(1.0 / self.norm(), 0.0))
    }

    /// The orthogonal complement `(-b̄, ā)`; unit norm whenever `self` is.
    pub fn perp(&self) -> Vec2 {
        Vec2([-self.0[1].conj(), self.0[0].conj()])
    }

    /// Rescale by a global phase so the largest-modulus component is real
    /// positive (ties broken by the lower index).
    pub fn phase_canonical(&self) -> Vec2 {
        let (a, b) = (self.0[0].norm(), self.0[1].norm());
        let pivot = if b > a + 1e-12 { self.0[1] } else { self.0[0] };
        if pivot.norm() == 0.0 {
            return *self;
        }
        self.scale(pivot.conj() / C64::new(pivot.norm(), 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Kronecker product, `self` on the first tensor slot.
    pub fn kron(&self, other: &Vec2) -> Vec4 {
        let mut out = [ZERO; 4];
        for i in 0..2 {
            for j in 0..2 {
                out[2 * i + j] = self.0[i] * other.0[j];
            }
        }
        Vec4(out)
    }
}

impl Vec4 {
    pub fn inner(&self, other: &Vec4) -> C64 {
        (0..4).map(|k| self.0[k].conj() * other.0[k]).sum()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).re.sqrt()
    }

    pub fn scale(&self, s: C64) -> Vec4 {
        Vec4([self.0[0] * s, self.0[1] * s, self.0[2] * s, self.0[3] * s])
    }

    pub fn add(&self, other: &Vec4) -> Vec4 {
        let mut out = [ZERO; 4];
        for k in 0..4 {
            out[k] = self.0[k] + other.0[k];
        }
        Vec4(out)
    }

    pub fn sub(&self, other: &Vec4) -> Vec4 {
        let mut out = [ZERO; 4];
        for k in 0..4 {
            out[k] = self.0[k] - other.0[k];
        }
        Vec4(out)
    }

    pub fn normalized(&self) -> Vec4 {
        self.scale(C64::new(1.0 / self.norm(), 0.0))
    }

    /// Row-major 2x2 reshape: a product vector `a⊗b` reshapes to the rank-one
    /// matrix `a·bᵀ`, so `|det| ≤ TOL_PRODUCT` is the product test.
    pub fn reshape(&self) -> Mat2 {
        Mat2([[self.0[0], self.0[1]], [self.0[2], self.0[3]]])
    }
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[ONE, ZERO], [ZERO, ONE]]);

    pub fn from_rows(r0: [C64; 2], r1: [C64; 2]) -> Self {
        Mat2([r0, r1])
    }

    pub fn mul(&self, other: &Mat2) -> Mat2 {
        let mut out = [[ZERO; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    out[i][j] += self.0[i][k] * other.0[k][j];
                }
            }
        }
        Mat2(out)
    }

    pub fn dagger(&self) -> Mat2 {
        Mat2([
            [self.0[0][0].conj(), self.0[1][0].conj()],
            [self.0[0][1].conj(), self.0[1][1].conj()],
        ])
    }

    pub fn add(&self, other: &Mat2) -> Mat2 {
        let mut out = [[ZERO; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = self.0[i][j] + other.0[i][j];
            }
        }
        Mat2(out)
    }

    pub fn sub(&self, other: &Mat2) -> Mat2 {
        let mut out = [[ZERO; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = self.0[i][j] - other.0[i][j];
            }
        }
        Mat2(out)
    }

    pub fn scale(&self, s: C64) -> Mat2 {
        let mut out = self.0;
        for row in out.iter_mut() {
            for e in row.iter_mut() {
                *e *= s;
            }
        }
        Mat2(out)
    }

    pub fn apply(&self, v: &Vec2) -> Vec2 {
        Vec2([
            self.0[0][0] * v.0[0] + self.0[0][1] * v.0[1],
            self.0[1][0] * v.0[0] + self.0[1][1] * v.0[1],
        ])
    }

    pub fn trace(&self) -> C64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> C64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn frobenius_distance(&self, other: &Mat2) -> f64 {
        self.sub(other).frobenius_norm()
    }

    pub fn is_unitary(&self) -> bool {
        self.dagger().mul(self).frobenius_distance(&Mat2::IDENTITY) <= TOL_UNITARY
    }

    pub fn is_finite(&self) -> bool {
        self.0
            .iter()
            .flatten()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Outer product `|a⟩⟨b|`.
    pub fn outer(a: &Vec2, b: &Vec2) -> Mat2 {
        let mut out = [[ZERO; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = a.0[i] * b.0[j].conj();
            }
        }
        Mat2(out)
    }

    pub fn kron(&self, other: &Mat2) -> Mat4 {
        let mut out = [[ZERO; 4]; 4];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        out[2 * i + k][2 * j + l] = self.0[i][j] * other.0[k][l];
                    }
                }
            }
        }
        Mat4(out)
    }
}

impl Mat4 {
    pub const fn identity() -> Mat4 {
        let mut out = [[ZERO; 4]; 4];
        let mut i = 0;
        while i < 4 {
            out[i][i] = ONE;
            i += 1;
        }
        Mat4(out)
    }

    pub fn mul(&self, other: &Mat4) -> Mat4 {
        let mut out = [[ZERO; 4]; 4];
        for i in 0..4 {
            for k in 0..4 {
                let a = self.0[i][k];
                if a == ZERO {
                    continue;
                }
                for j in 0..4 {
                    out[i][j] += a * other.0[k][j];
                }
            }
        }
        Mat4(out)
    }

    pub fn dagger(&self) -> Mat4 {
        let mut out = [[ZERO; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = self.0[j][i].conj();
            }
        }
        Mat4(out)
    }

    pub fn sub(&self, other: &Mat4) -> Mat4 {
        let mut out = [[ZERO; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = self.0[i][j] - other.0[i][j];
            }
        }
        Mat4(out)
    }

    pub fn apply(&self, v: &Vec4) -> Vec4 {
        let mut out = [ZERO; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i] += self.0[i][j] * v.0[j];
            }
        }
        Vec4(out)
    }

    pub fn trace(&self) -> C64 {
        (0..4).map(|i| self.0[i][i]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn frobenius_distance(&self, other: &Mat4) -> f64 {
        self.sub(other).frobenius_norm()
    }

    pub fn is_unitary(&self) -> bool {
        self.dagger()
            .mul(self)
            .frobenius_distance(&Mat4::identity())
            <= TOL_UNITARY
    }

    pub fn is_finite(&self) -> bool {
        self.0
            .iter()
            .flatten()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// An orthonormal pair of single-qubit states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitBasis {
    pub v0: Vec2,
    pub v1: Vec2,
}

impl QubitBasis {
    pub const COMPUTATIONAL: QubitBasis = QubitBasis {
        v0: Vec2::KET0,
        v1: Vec2::KET1,
    };

    /// Build from `v0` alone; `v1` is the orthogonal complement.
    pub fn from_v0(v0: Vec2) -> Self {
        let v0 = v0.normalized();
        QubitBasis { v0, v1: v0.perp() }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let n0 = (self.v0.norm() - 1.0).abs();
        let n1 = (self.v1.norm() - 1.0).abs();
        let ov = self.v0.inner(&self.v1).norm();
        if n0 > TOL_UNITARY || n1 > TOL_UNITARY || ov > TOL_UNITARY {
            return Err(Error::NonUnitary { gate: None });
        }
        Ok(())
    }

    /// Change-of-basis matrix with `v0`, `v1` as columns.
    pub fn as_matrix(&self) -> Mat2 {
        Mat2([[self.v0.0[0], self.v1.0[0]], [self.v0.0[1], self.v1.0[1]]])
    }

    /// True when `other` spans the same pair of rays, in either order.
    pub fn matches(&self, other: &QubitBasis, tol: f64) -> Option<bool> {
        let straight = self.v0.inner(&other.v0).norm() >= 1.0 - tol
            && self.v1.inner(&other.v1).norm() >= 1.0 - tol;
        if straight {
            return Some(false);
        }
        let swapped = self.v0.inner(&other.v1).norm() >= 1.0 - tol
            && self.v1.inner(&other.v0).norm() >= 1.0 - tol;
        if swapped {
            return Some(true);
        }
        None
    }
}

/// One eigenvalue/eigenvector pair of a 2x2 unitary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenPair2 {
    pub value: C64,
    pub vector: Vec2,
}

fn vector_order_key(p: &EigenPair2, q: &EigenPair2) -> std::cmp::Ordering {
    // Larger |v[0]| first; ties by larger Re λ, then larger Im λ.
    let (a, b) = (p.vector.0[0].norm(), q.vector.0[0].norm());
    if (a - b).abs() > 1e-12 {
        return b.partial_cmp(&a).unwrap();
    }
    let (ra, rb) = (p.value.re, q.value.re);
    if (ra - rb).abs() > 1e-12 {
        return rb.partial_cmp(&ra).unwrap();
    }
    q.value.im.partial_cmp(&p.value.im).unwrap()
}

/// Closed-form eigendecomposition of a 2x2 unitary.
///
/// Degenerate spectra (gap at most [`TOL_DEGENERATE`]) return the
/// computational basis with the common eigenvalue, which makes outputs
/// reproducible. Eigenvectors are phase-canonicalised and their order is
/// deterministic.
pub fn eig2(u: &Mat2) -> Result<(EigenPair2, EigenPair2), Error> {
    if !u.is_unitary() {
        return Err(Error::NonUnitary { gate: None });
    }
    let tr = u.trace();
    let det = u.det();
    let disc = tr * tr - det.scale_c(4.0);
    let sq = disc.sqrt();
    let l1 = (tr + sq).scale_c(0.5);
    let l2 = (tr - sq).scale_c(0.5);
    if (l1 - l2).norm() <= TOL_DEGENERATE {
        let common = {
            let m = tr.scale_c(0.5);
            m / C64::new(m.norm(), 0.0)
        };
        return Ok((
            EigenPair2 {
                value: common,
                vector: Vec2::KET0,
            },
            EigenPair2 {
                value: common,
                vector: Vec2::KET1,
            },
        ));
    }

    let vector_for = |l: C64| -> Vec2 {
        // Null vector of (U − λ): either column-style candidate works; keep
        // the one with the larger norm for stability.
        let c1 = Vec2::new(u.0[0][1], l - u.0[0][0]);
        let c2 = Vec2::new(l - u.0[1][1], u.0[1][0]);
        let v = if c1.norm() >= c2.norm() { c1 } else { c2 };
        v.normalized().phase_canonical()
    };

    let v1 = vector_for(l1);
    // The complement of an eigenvector of a unitary is exactly the other
    // eigenvector; this keeps the returned pair orthonormal by construction.
    let v2 = v1.perp().phase_canonical();

    let unit = |l: C64| l / C64::new(l.norm(), 0.0);
    let p = EigenPair2 {
        value: unit(l1),
        vector: v1,
    };
    let q = EigenPair2 {
        value: unit(l2),
        vector: v2,
    };
    match vector_order_key(&p, &q) {
        std::cmp::Ordering::Greater => Ok((q, p)),
        _ => Ok((p, q)),
    }
}

/// `‖AB − BA‖_F`; commuting is declared at [`TOL_COMMUTE`].
pub fn commutator_norm(a: &Mat2, b: &Mat2) -> f64 {
    a.mul(b).sub(&b.mul(a)).frobenius_norm()
}

/// Unit-modulus `φ` with `‖B − φA‖_F ≤ TOL_PROP`, if one exists.
///
/// The candidate phase is read off the largest-modulus entry of `A`.
pub fn proportionality_phase(a: &Mat2, b: &Mat2) -> Option<C64> {
    let mut best = (0usize, 0usize);
    let mut best_mod = -1.0;
    for i in 0..2 {
        for j in 0..2 {
            let m = a.0[i][j].norm();
            if m > best_mod {
                best_mod = m;
                best = (i, j);
            }
        }
    }
    if best_mod <= 1e-12 {
        return None;
    }
    let raw = b.0[best.0][best.1] / a.0[best.0][best.1];
    if raw.norm() <= 1e-12 {
        return None;
    }
    let phi = raw / C64::new(raw.norm(), 0.0);
    if b.frobenius_distance(&a.scale(phi)) <= TOL_PROP {
        Some(phi)
    } else {
        None
    }
}

/// True iff `V†MV` is diagonal within [`TOL_COMMUTE`], where `V` has the
/// basis vectors as columns.
pub fn is_diagonal_in(m: &Mat2, basis: &QubitBasis) -> bool {
    let v = basis.as_matrix();
    let d = v.dagger().mul(m).mul(&v);
    d.0[0][1].norm() <= TOL_COMMUTE && d.0[1][0].norm() <= TOL_COMMUTE
}

/// Branch pair of a 2x2 matrix conjugated into `basis`: `(⟨v0|M v0⟩, ...)`
/// as the full transformed matrix. Helper for phase extraction.
pub fn in_basis(m: &Mat2, basis: &QubitBasis) -> Mat2 {
    let v = basis.as_matrix();
    v.dagger().mul(m).mul(&v)
}

trait ScaleC {
    fn scale_c(self, s: f64) -> Self;
}

impl ScaleC for C64 {
    fn scale_c(self, s: f64) -> Self {
        C64::new(self.re * s, self.im * s)
    }
}
