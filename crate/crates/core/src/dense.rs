//! Dense complex matrices of arbitrary dimension and the eigensolver for
//! normal (in practice, unitary) matrices.
//!
//! The eigensolver diagonalises the commuting Hermitian parts
//! `H = (U + U†)/2` and `S = (U − U†)/2i` in two stages: a complex Jacobi
//! sweep on `H`, then a Jacobi pass on `S` projected into each eigenvalue
//! cluster of `H`. For a unitary input this yields an orthonormal
//! eigenbasis without ever running a non-Hermitian iteration.

use num_complex::Complex64 as C64;
use rand::RngCore;

use crate::mat::{Mat2, Mat4, Vec2, ONE, ZERO};

/// Dense square complex matrix, row major.
#[derive(Debug, Clone, PartialEq)]
pub struct DMat {
    pub dim: usize,
    pub data: Vec<C64>,
}

impl DMat {
    pub fn zeros(dim: usize) -> Self {
        DMat {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = DMat::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn from_mat4(m: &Mat4) -> Self {
        let mut out = DMat::zeros(4);
        for i in 0..4 {
            for j in 0..4 {
                out.set(i, j, m.0[i][j]);
            }
        }
        out
    }

    pub fn to_mat4(&self) -> Mat4 {
        assert_eq!(self.dim, 4);
        let mut out = [[ZERO; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = self.at(i, j);
            }
        }
        Mat4(out)
    }

    pub fn mul(&self, other: &DMat) -> DMat {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = DMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.at(i, k);
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.at(k, j);
                }
            }
        }
        out
    }

    pub fn dagger(&self) -> DMat {
        let n = self.dim;
        let mut out = DMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, self.at(j, i).conj());
            }
        }
        out
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let n = self.dim;
        let mut out = vec![ZERO; n];
        for i in 0..n {
            let mut acc = ZERO;
            for j in 0..n {
                acc += self.at(i, j) * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.at(i, i)).sum()
    }

    pub fn frobenius_distance(&self, other: &DMat) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn unitary_defect(&self) -> f64 {
        self.dagger()
            .mul(self)
            .frobenius_distance(&DMat::identity(self.dim))
    }
}

pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn vec_norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Jacobi eigendecomposition of a Hermitian matrix.
///
/// Returns eigenvalues (ascending) and the matrix of eigenvectors as
/// columns. Off-diagonal mass is annihilated pairwise until it falls below
/// `dim² · 1e-14 · scale`.
pub fn hermitian_eig(a: &DMat) -> (Vec<f64>, DMat) {
    let n = a.dim;
    let mut m = a.clone();
    let mut q = DMat::identity(n);
    let scale = m
        .data
        .iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max)
        .max(1e-300);
    let tol = 1e-15 * scale;

    for _sweep in 0..60 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for r in (p + 1)..n {
                off = off.max(m.at(p, r).norm());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = m.at(p, r);
                if apr.norm() <= tol * 1e-2 {
                    continue;
                }
                let app = m.at(p, p).re;
                let arr = m.at(r, r).re;
                // Complex Jacobi rotation: with a_pr = |a_pr| e^{iφ}, the
                // rotation [[c, s e^{iφ}], [−s e^{−iφ}, c]] with real c, s
                // annihilates the (p, r) entry.
                let abs = apr.norm();
                let phase = apr / C64::new(abs, 0.0);
                let d = (app - arr) / 2.0;
                let t = if d.abs() < 1e-300 {
                    1.0
                } else {
                    let signd = if d >= 0.0 { 1.0 } else { -1.0 };
                    signd * abs / (d.abs() + (d * d + abs * abs).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let sp = C64::new(s, 0.0) * phase;

                // Columns (right multiplication by G).
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkr = m.at(k, r);
                    m.set(k, p, mkp.scale(c) + mkr * sp.conj());
                    m.set(k, r, mkr.scale(c) - mkp * sp);
                }
                // Rows (left multiplication by G†).
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mrk = m.at(r, k);
                    m.set(p, k, mpk.scale(c) + mrk * sp);
                    m.set(r, k, mrk.scale(c) - mpk * sp.conj());
                }
                // Accumulate eigenvectors.
                for k in 0..n {
                    let qkp = q.at(k, p);
                    let qkr = q.at(k, r);
                    q.set(k, p, qkp.scale(c) + qkr * sp.conj());
                    q.set(k, r, qkr.scale(c) - qkp * sp);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let vals: Vec<f64> = (0..n).map(|i| m.at(i, i).re).collect();
    order.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap());
    let mut sorted_vals = Vec::with_capacity(n);
    let mut sorted_q = DMat::zeros(n);
    for (col, &idx) in order.iter().enumerate() {
        sorted_vals.push(vals[idx]);
        for k in 0..n {
            sorted_q.set(k, col, q.at(k, idx));
        }
    }
    (sorted_vals, sorted_q)
}

trait Scale {
    fn scale(self, s: f64) -> Self;
}
impl Scale for C64 {
    fn scale(self, s: f64) -> Self {
        C64::new(self.re * s, self.im * s)
    }
}

/// Eigendecomposition of a unitary (more generally, normal) matrix.
///
/// Returns unit-modulus eigenvalues with an orthonormal eigenbasis,
/// ordered by eigenvalue angle in `[0, 2π)`. Eigenvalues closer than
/// `cluster_gap` may have their eigenvectors mixed within the cluster,
/// which is harmless for callers that cluster at that same gap.
pub fn unitary_eig(u: &DMat, cluster_gap: f64) -> Vec<(C64, Vec<C64>)> {
    let n = u.dim;
    let ud = u.dagger();
    let mut h = DMat::zeros(n);
    let mut s = DMat::zeros(n);
    let half = C64::new(0.5, 0.0);
    let halfi = C64::new(0.0, -0.5);
    for k in 0..n * n {
        h.data[k] = (u.data[k] + ud.data[k]) * half;
        s.data[k] = (u.data[k] - ud.data[k]) * halfi;
    }

    let (hvals, hq) = hermitian_eig(&h);

    // Cluster the eigenvalues of H by adjacent gap.
    let mut clusters: Vec<(usize, usize)> = Vec::new();
    let mut start = 0usize;
    for i in 1..=n {
        if i == n || (hvals[i] - hvals[i - 1]).abs() > cluster_gap {
            clusters.push((start, i));
            start = i;
        }
    }

    let mut pairs: Vec<(C64, Vec<C64>)> = Vec::with_capacity(n);
    for &(lo, hi) in &clusters {
        let d = hi - lo;
        let cols: Vec<Vec<C64>> = (lo..hi)
            .map(|c| (0..n).map(|k| hq.at(k, c)).collect())
            .collect();
        if d == 1 {
            pairs.push((ZERO, cols.into_iter().next().unwrap()));
            continue;
        }
        // Project S into the cluster and rediagonalise.
        let mut sc = DMat::zeros(d);
        let s_cols: Vec<Vec<C64>> = cols.iter().map(|c| s.apply(c)).collect();
        for a in 0..d {
            for b in 0..d {
                sc.set(a, b, inner(&cols[a], &s_cols[b]));
            }
        }
        let (_svals, w) = hermitian_eig(&sc);
        for b in 0..d {
            let mut v = vec![ZERO; n];
            for a in 0..d {
                let coeff = w.at(a, b);
                for k in 0..n {
                    v[k] += cols[a][k] * coeff;
                }
            }
            pairs.push((ZERO, v));
        }
    }

    // Eigenvalues by Rayleigh quotient, normalised to the unit circle.
    for (lam, v) in pairs.iter_mut() {
        let uv = u.apply(v);
        let raw = inner(v, &uv);
        *lam = if raw.norm() > 0.0 {
            raw / C64::new(raw.norm(), 0.0)
        } else {
            raw
        };
    }

    pairs.sort_by(|a, b| {
        let ta = a.0.arg().rem_euclid(2.0 * std::f64::consts::PI);
        let tb = b.0.arg().rem_euclid(2.0 * std::f64::consts::PI);
        ta.partial_cmp(&tb).unwrap()
    });
    pairs
}

fn uniform_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard complex Gaussian via Box-Muller.
pub fn gaussian_c64(rng: &mut impl RngCore) -> C64 {
    let u1 = uniform_f64(rng).max(1e-300);
    let u2 = uniform_f64(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let th = 2.0 * std::f64::consts::PI * u2;
    // Real and imaginary parts each N(0, 1/2); scale is irrelevant here.
    C64::new(r * th.cos(), r * th.sin())
}

/// Haar-random unitary of the given dimension: Ginibre ensemble followed by
/// modified Gram-Schmidt with positive diagonal.
pub fn haar_unitary(dim: usize, rng: &mut impl RngCore) -> DMat {
    let mut cols: Vec<Vec<C64>> = (0..dim)
        .map(|_| (0..dim).map(|_| gaussian_c64(rng)).collect())
        .collect();
    for j in 0..dim {
        for i in 0..j {
            let cols_i = cols[i].clone();
            let proj = inner(&cols_i, &cols[j]);
            for k in 0..dim {
                cols[j][k] -= proj * cols_i[k];
            }
        }
        let nrm = vec_norm(&cols[j]);
        for k in 0..dim {
            cols[j][k] /= C64::new(nrm, 0.0);
        }
    }
    let mut m = DMat::zeros(dim);
    for j in 0..dim {
        for i in 0..dim {
            m.set(i, j, cols[j][i]);
        }
    }
    m
}

/// Haar-random 2x2 unitary: uniform SU(2) point times a uniform phase.
pub fn haar_mat2(rng: &mut impl RngCore) -> Mat2 {
    let a = gaussian_c64(rng);
    let b = gaussian_c64(rng);
    let nrm = (a.norm_sqr() + b.norm_sqr()).sqrt();
    let (a, b) = (a / nrm, b / nrm);
    let phase = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * uniform_f64(rng));
    Mat2([
        [a * phase, -b.conj() * phase],
        [b * phase, a.conj() * phase],
    ])
}

/// Haar-random 4x4 unitary.
pub fn haar_mat4(rng: &mut impl RngCore) -> Mat4 {
    haar_unitary(4, rng).to_mat4()
}

/// Haar-random single-qubit state.
pub fn haar_state2(rng: &mut impl RngCore) -> Vec2 {
    let v = Vec2::new(gaussian_c64(rng), gaussian_c64(rng));
    v.normalized()
}
