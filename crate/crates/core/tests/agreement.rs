//! At two qubits, a prefix has a product eigenbasis exactly when its
//! composed 4x4 decomposes, so the classifier can be checked step by step
//! against dense ground truth through deep structured circuits that force
//! repeated role transitions.

use rand::RngCore;
use sepsim::circuit::Gate;
use sepsim::classifier::{classify_step, Classification};
use sepsim::dense::{haar_mat2, haar_mat4, haar_state2};
use sepsim::gate::{decompose_4x4, BasisControlledGate, ControlSlot};
use sepsim::mat::{Mat2, Mat4, QubitBasis};
use sepsim::rng::stream_rng;

fn random_structured_gate(rng: &mut impl RngCore, prior: Option<&QubitBasis>) -> Mat4 {
    match rng.next_u64() % 6 {
        0 => haar_mat4(rng),
        1 => BasisControlledGate::new(
            ControlSlot::First,
            QubitBasis::from_v0(haar_state2(rng)),
            haar_mat2(rng),
            haar_mat2(rng),
        )
        .to_matrix(),
        2 => BasisControlledGate::new(
            ControlSlot::Second,
            QubitBasis::from_v0(haar_state2(rng)),
            haar_mat2(rng),
            haar_mat2(rng),
        )
        .to_matrix(),
        3 | 4 => {
            let basis = prior.copied().unwrap_or(QubitBasis::COMPUTATIONAL);
            let slot = if rng.next_u64() & 1 == 0 {
                ControlSlot::First
            } else {
                ControlSlot::Second
            };
            BasisControlledGate::new(slot, basis, haar_mat2(rng), haar_mat2(rng)).to_matrix()
        }
        _ => {
            // diagonal-ish: commuting branches in a random basis
            let b = QubitBasis::from_v0(haar_state2(rng));
            let v = b.as_matrix();
            let d = |rng: &mut dyn RngCore| {
                let th1 =
                    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
                let th2 =
                    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
                v.mul(&Mat2::from_rows(
                    [
                        num_complex::Complex64::from_polar(1.0, th1),
                        num_complex::Complex64::new(0.0, 0.0),
                    ],
                    [
                        num_complex::Complex64::new(0.0, 0.0),
                        num_complex::Complex64::from_polar(1.0, th2),
                    ],
                ))
                .mul(&v.dagger())
            };
            BasisControlledGate::new(
                ControlSlot::First,
                prior.copied().unwrap_or(QubitBasis::COMPUTATIONAL),
                d(rng),
                d(rng),
            )
            .to_matrix()
        }
    }
}

#[test]
fn multi_gate_agreement_with_dense_ground_truth() {
    let mut unsound = 0u32;
    let mut incomplete = 0u32;
    let mut steps_total = 0u32;
    let mut accepted_steps = 0u32;
    for trial in 0..400u64 {
        let mut rng = stream_rng(0xd1a6, trial);
        let mut cls = Classification::new(2);
        let mut composed = Mat4::identity();
        let mut prior_basis: Option<QubitBasis> = None;
        for step in 0..6 {
            let m = random_structured_gate(&mut rng, prior_basis.as_ref());
            if let Ok(Some(g)) = decompose_4x4(&m) {
                prior_basis = Some(g.control_basis);
            }
            let gate = Gate::Two { i: 0, j: 1, m };
            let next = m.mul(&composed);
            let decomposable = decompose_4x4(&next).unwrap().is_some();
            let mut probe = cls.clone();
            let accepted = classify_step(&mut probe, step, &gate).is_ok();
            steps_total += 1;
            if accepted {
                accepted_steps += 1;
                cls = probe;
                composed = next;
                if !decomposable {
                    unsound += 1;
                }
            } else if decomposable {
                incomplete += 1;
            } else {
                // Agreement on rejection; a rejected circuit ends here.
                break;
            }
        }
    }
    println!("steps {steps_total}, accepted {accepted_steps}, unsound {unsound}, incomplete {incomplete}");
    assert_eq!(unsound, 0, "classifier accepted an entangling prefix");
    assert_eq!(incomplete, 0, "classifier rejected a decomposable prefix");
    assert!(accepted_steps >= 300, "want substantial accepted coverage");
}
