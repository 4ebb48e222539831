//! Classical simulation of accepted circuits: uniform sampling of a
//! product eigenvector, eigenphase evaluation by factor-wise evolution,
//! and Monte-Carlo estimation of the normalized trace.
//!
//! A label string of `n` fair coins selects one of `2^n` orthonormal
//! product eigenvectors: basis-pinned lines take their basis state, free
//! lines an eigenvector of their accumulated single, and target lines an
//! eigenvector of the 2x2 action selected by their controllers' labels.
//! The eigenphase is read off by evolving the factors through the
//! admitted ledger and multiplying the per-factor overlaps.

use num_complex::Complex64 as C64;
use rand::RngCore;
use serde::Serialize;

use crate::classifier::{steps_action, AdmittedOp, Classification, Role};
use crate::error::Error;
use crate::gate::{control_branch, BasisControlledGate, ControlSlot};
use crate::mat::{eig2, Vec2};
use crate::rng::{coin, stream_rng};

/// Measurement basis of the clean qubit: X reads `Re λ`, Y reads `Im λ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MeasBasis {
    X,
    Y,
}

impl std::str::FromStr for MeasBasis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "X" | "x" => Ok(MeasBasis::X),
            "Y" | "y" => Ok(MeasBasis::Y),
            other => Err(Error::Parameter(format!("unknown basis {other:?}"))),
        }
    }
}

/// A sampled product eigenvector: one single-qubit factor per line plus
/// the label bits that selected it.
#[derive(Debug, Clone)]
pub struct ProductEigenvector {
    pub factors: Vec<Vec2>,
    pub labels: Vec<bool>,
}

/// Output of the trace estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEstimate {
    pub value: f64,
    pub basis: MeasBasis,
    pub epsilon: f64,
    pub delta: f64,
    pub samples: u64,
    pub seed: u64,
}

/// One audit row per sample.
#[derive(Debug, Clone)]
pub struct AuditRow {
    pub sample_index: u64,
    pub labels: Vec<bool>,
    pub lambda: C64,
}

/// Hoeffding sample count `⌈(2/ε²)·ln(2/δ)⌉`.
pub fn hoeffding_samples(epsilon: f64, delta: f64) -> u64 {
    ((2.0 / (epsilon * epsilon)) * (2.0 / delta).ln()).ceil() as u64
}

/// The deterministic eigenvector selected by a full label string.
///
/// Basis-pinned and free lines resolve first; target lines then read
/// their controllers' labels to fix the 2x2 action whose eigenvector they
/// take. Distinct label strings give pairwise orthogonal eigenvectors.
pub fn eigenvector_for_labels(
    cls: &Classification,
    labels: &[bool],
) -> Result<ProductEigenvector, Error> {
    if labels.len() != cls.n {
        return Err(Error::Parameter(format!(
            "expected {} labels, got {}",
            cls.n,
            labels.len()
        )));
    }
    let mut factors: Vec<Option<Vec2>> = vec![None; cls.n];
    for q in 0..cls.n {
        match &cls.roles[q] {
            Role::Control { basis, .. } | Role::Ambiguous { basis, .. } => {
                factors[q] = Some(if labels[q] { basis.v1 } else { basis.v0 });
            }
            Role::Free { w } => {
                let (p, s) = eig2(w)?;
                factors[q] = Some(if labels[q] { s.vector } else { p.vector });
            }
            Role::Target { .. } => {}
        }
    }
    for q in 0..cls.n {
        if factors[q].is_some() {
            continue;
        }
        let steps = cls.line_steps(q);
        let ux = steps_action(&steps, &|line| labels[line]);
        let (p, s) = eig2(&ux)?;
        factors[q] = Some(if labels[q] { s.vector } else { p.vector });
    }
    Ok(ProductEigenvector {
        factors: factors.into_iter().map(|f| f.unwrap()).collect(),
        labels: labels.to_vec(),
    })
}

/// Sample a product eigenvector uniformly: one fair coin per line.
pub fn sample_eigenvector(
    cls: &Classification,
    rng: &mut impl RngCore,
) -> Result<ProductEigenvector, Error> {
    let labels: Vec<bool> = (0..cls.n).map(|_| coin(rng)).collect();
    eigenvector_for_labels(cls, &labels)
}

/// Evolve the factors through the admitted ledger and return the
/// eigenphase `λ` with `|λ| = 1`, where the final state is `λ·v`.
///
/// The evolved state is not an eigenvector at every slice; only the final
/// per-factor overlaps must come back with modulus 1. A modulus below
/// threshold signals a classifier soundness bug upstream.
pub fn eigenphase(cls: &Classification, v: &ProductEigenvector) -> Result<C64, Error> {
    let mut factors = v.factors.clone();
    for op in &cls.admitted {
        match op {
            AdmittedOp::Single { q, u } => {
                factors[*q] = u.apply(&factors[*q]);
            }
            AdmittedOp::Cu {
                control,
                target,
                basis,
                branch0,
                branch1,
                pre_control,
                pre_target,
            } => {
                if let Some(p) = pre_control {
                    factors[*control] = p.apply(&factors[*control]);
                }
                if let Some(p) = pre_target {
                    factors[*target] = p.apply(&factors[*target]);
                }
                let g = BasisControlledGate::new(ControlSlot::First, *basis, *branch0, *branch1);
                let branch = control_branch(&g, &factors[*control])?;
                factors[*target] = branch.apply(&factors[*target]);
            }
        }
    }
    let mut lambda = C64::new(1.0, 0.0);
    for (k, (initial, fin)) in v.factors.iter().zip(factors.iter()).enumerate() {
        let ov = initial.inner(fin);
        if ov.norm() < 1.0 - 1e-7 {
            return Err(Error::PhaseIncoherent {
                line: k,
                modulus: ov.norm(),
            });
        }
        lambda *= ov;
    }
    Ok(lambda / C64::new(lambda.norm(), 0.0))
}

fn check_params(epsilon: f64, delta: f64) -> Result<(), Error> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Parameter(format!(
            "epsilon must be in (0, 1), got {epsilon}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// Monte-Carlo estimate of `Re` or `Im` of `Tr(V)/2^n` for an accepted
/// circuit: draws `⌈(2/ε²)·ln(2/δ)⌉` eigenvectors and averages their
/// eigenphase component, guaranteeing additive error `ε` with probability
/// at least `1 − δ`. Sample `s` reads stream `(seed, s)`, so the result
/// does not depend on how samples are scheduled.
pub fn estimate_normalized_trace(
    cls: &Classification,
    basis: MeasBasis,
    epsilon: f64,
    delta: f64,
    seed: u64,
) -> Result<TraceEstimate, Error> {
    let (est, _) = estimate_inner(cls, basis, epsilon, delta, seed, false)?;
    Ok(est)
}

/// Same estimate, also returning one audit row per sample.
pub fn estimate_with_audit(
    cls: &Classification,
    basis: MeasBasis,
    epsilon: f64,
    delta: f64,
    seed: u64,
) -> Result<(TraceEstimate, Vec<AuditRow>), Error> {
    estimate_inner(cls, basis, epsilon, delta, seed, true)
}

fn estimate_inner(
    cls: &Classification,
    basis: MeasBasis,
    epsilon: f64,
    delta: f64,
    seed: u64,
    audit: bool,
) -> Result<(TraceEstimate, Vec<AuditRow>), Error> {
    check_params(epsilon, delta)?;
    let samples = hoeffding_samples(epsilon, delta);
    let mut acc = 0.0_f64;
    let mut rows = Vec::new();
    for s in 0..samples {
        let mut rng = stream_rng(seed, s);
        let v = sample_eigenvector(cls, &mut rng)?;
        let lambda = eigenphase(cls, &v)?;
        acc += match basis {
            MeasBasis::X => lambda.re,
            MeasBasis::Y => lambda.im,
        };
        if audit {
            rows.push(AuditRow {
                sample_index: s,
                labels: v.labels.clone(),
                lambda,
            });
        }
    }
    Ok((
        TraceEstimate {
            value: acc / samples as f64,
            basis,
            epsilon,
            delta,
            samples,
            seed,
        },
        rows,
    ))
}

/// CSV audit dump: `sample_index, label_bits, re_lambda, im_lambda`.
pub fn audit_csv(rows: &[AuditRow]) -> String {
    let mut out = String::from("sample_index,label_bits,re_lambda,im_lambda\n");
    for r in rows {
        let bits: String = r
            .labels
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect();
        out.push_str(&format!(
            "{},{},{:.17e},{:.17e}\n",
            r.sample_index, bits, r.lambda.re, r.lambda.im
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{Circuit, Gate};
    use crate::classifier::classify_circuit;
    use crate::mat::{Mat2, QubitBasis, ONE, ZERO};

    fn cnot_gate() -> Gate {
        let x = Mat2::from_rows([ZERO, ONE], [ONE, ZERO]);
        Gate::TwoDecomposed {
            i: 0,
            j: 1,
            g: BasisControlledGate::new(
                ControlSlot::First,
                QubitBasis::COMPUTATIONAL,
                Mat2::IDENTITY,
                x,
            ),
        }
    }

    #[test]
    fn hoeffding_sample_count_example() {
        assert_eq!(hoeffding_samples(0.1, 0.05), 738);
    }

    #[test]
    fn identity_circuit_phase_is_one() {
        let c = Circuit::new(3, vec![]).unwrap();
        let cls = classify_circuit(&c).unwrap();
        for labels in [[false, false, false], [true, false, true]] {
            let v = eigenvector_for_labels(&cls, &labels).unwrap();
            let lam = eigenphase(&cls, &v).unwrap();
            assert!((lam - ONE).norm() < 1e-12);
        }
    }

    #[test]
    fn cnot_labels_give_orthonormal_eigenvectors() {
        let c = Circuit::new(2, vec![cnot_gate()]).unwrap();
        let cls = classify_circuit(&c).unwrap();
        let full = c.build_full_unitary(4).unwrap();
        let mut vecs = Vec::new();
        for mask in 0..4u32 {
            let labels = [mask & 1 == 1, mask & 2 == 2];
            let v = eigenvector_for_labels(&cls, &labels).unwrap();
            let lam = eigenphase(&cls, &v).unwrap();
            let dense = crate::oracle::assemble(&v);
            let uv = full.apply(&dense);
            let mut resid = 0.0;
            for k in 0..4 {
                resid += (uv[k] - lam * dense[k]).norm_sqr();
            }
            assert!(resid.sqrt() < 1e-9, "labels {labels:?}");
            vecs.push(dense);
        }
        for a in 0..4 {
            for b in (a + 1)..4 {
                let ip: C64 = vecs[a]
                    .iter()
                    .zip(vecs[b].iter())
                    .map(|(x, y)| x.conj() * y)
                    .sum();
                assert!(ip.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn all_free_diagonal_singles_sample_computational() {
        let t = Mat2::from_rows(
            [ONE, ZERO],
            [ZERO, C64::from_polar(1.0, std::f64::consts::FRAC_PI_4)],
        );
        let c = Circuit::new(
            2,
            vec![Gate::Single { q: 0, u: t }, Gate::Single { q: 1, u: t }],
        )
        .unwrap();
        let cls = classify_circuit(&c).unwrap();
        for mask in 0..4u32 {
            let labels = [mask & 1 == 1, mask & 2 == 2];
            let v = eigenvector_for_labels(&cls, &labels).unwrap();
            for f in &v.factors {
                let e0 = f.inner(&Vec2::KET0).norm();
                let e1 = f.inner(&Vec2::KET1).norm();
                assert!(e0 > 1.0 - 1e-12 || e1 > 1.0 - 1e-12);
            }
        }
        // Single T on one line: phase e^{iπ/4} when the label picks |1>.
        let t1 = Circuit::new(1, vec![Gate::Single { q: 0, u: t }]).unwrap();
        let cls1 = classify_circuit(&t1).unwrap();
        let v = eigenvector_for_labels(&cls1, &[true]).unwrap();
        let lam = eigenphase(&cls1, &v).unwrap();
        assert!((lam - C64::from_polar(1.0, std::f64::consts::FRAC_PI_4)).norm() < 1e-12);
    }

    #[test]
    fn estimator_matches_known_traces() {
        // Identity on 3 lines: every eigenphase is 1.
        let c = Circuit::new(3, vec![]).unwrap();
        let cls = classify_circuit(&c).unwrap();
        let est = estimate_normalized_trace(&cls, MeasBasis::X, 0.1, 0.05, 2).unwrap();
        assert!((est.value - 1.0).abs() <= 0.1);
        assert_eq!(est.samples, 738);

        // A single Z on one of four lines: the trace vanishes.
        let z = Mat2::from_rows([ONE, ZERO], [ZERO, -ONE]);
        let c = Circuit::new(4, vec![Gate::Single { q: 1, u: z }]).unwrap();
        let cls = classify_circuit(&c).unwrap();
        let est = estimate_normalized_trace(&cls, MeasBasis::X, 0.1, 0.05, 2).unwrap();
        assert!(est.value.abs() <= 0.1);
    }

    #[test]
    fn estimator_is_seed_deterministic() {
        let c = Circuit::new(2, vec![cnot_gate()]).unwrap();
        let cls = classify_circuit(&c).unwrap();
        let a = estimate_normalized_trace(&cls, MeasBasis::X, 0.2, 0.1, 7).unwrap();
        let b = estimate_normalized_trace(&cls, MeasBasis::X, 0.2, 0.1, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimator_validates_parameters() {
        let c = Circuit::new(2, vec![]).unwrap();
        let cls = classify_circuit(&c).unwrap();
        assert!(matches!(
            estimate_normalized_trace(&cls, MeasBasis::X, 0.0, 0.1, 1),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            estimate_normalized_trace(&cls, MeasBasis::X, 0.1, 1.0, 1),
            Err(Error::Parameter(_))
        ));
    }
}
