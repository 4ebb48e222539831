//! Incremental qubit-role classification: a circuit is admitted gate by
//! gate exactly when every prefix keeps a product eigenbasis.
//!
//! Each line carries a role. `Free` lines have only seen single-qubit
//! gates. `Control` and `Ambiguous` lines are pinned to an orthonormal
//! basis: every admitted gate touching them is controlled on them in that
//! basis. A control has a witnessed pair of non-commuting branch actions
//! on some target; an ambiguous line does not (yet), so it may still turn
//! into a control or a target. `Target` lines are acted on by branch
//! unitaries selected by the basis labels of their controllers.
//!
//! Alongside the roles, the classifier maintains an *admitted ledger*: an
//! equivalent rewriting of the circuit into single-qubit gates and
//! basis-controlled gates whose control line is basis-pinned by the time
//! the controlled part fires. The ledger reproduces the input circuit's
//! unitary exactly, and it is the sequence the sampler evolves product
//! eigenvectors through.

use num_complex::Complex64 as C64;
use rand::RngCore;

use crate::circuit::{Circuit, Gate};
use crate::dense::{haar_mat2, haar_state2, DMat};
use crate::error::Error;
use crate::gate::{
    as_controlled_on, decompose_4x4, gate_kind, BasisControlledGate, ControlSlot, GateKind,
};
use crate::mat::{
    commutator_norm, eig2, in_basis, is_diagonal_in, Mat2, Mat4, QubitBasis, TOL_COMMUTE, ZERO,
};

/// Condition checks enumerate control strings over at most this many
/// controller lines; past the cap the check is declined and the gate
/// conservatively rejected (or the promotion skipped).
pub const CAP_CONTROLS: usize = 12;

/// One branch action recorded on a target line: `control`'s basis label
/// selects which branch multiplies the line's accumulated action.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetAction {
    pub control: usize,
    pub branch0: Mat2,
    pub branch1: Mat2,
}

/// History item on an ambiguous line, chronological.
#[derive(Debug, Clone, PartialEq)]
pub enum AmbStep {
    /// A single-qubit gate diagonal in the line's basis.
    Diag(Mat2),
    /// A cross gate recorded as the action on *this* line selected by the
    /// partner's basis label. Both sides of a doubly diagonal gate hold
    /// mirrored entries until one of them stops being basis-pinned.
    Link { partner: usize, d0: Mat2, d1: Mat2 },
}

/// Role of one line of the register.
#[derive(Debug, Clone, PartialEq)]
pub enum Role {
    Free {
        w: Mat2,
    },
    Control {
        basis: QubitBasis,
        targets: Vec<usize>,
    },
    Ambiguous {
        basis: QubitBasis,
        steps: Vec<AmbStep>,
        /// Set when the line's pre-history is no longer expressible as
        /// links (a demoted control or a promoted former target); such a
        /// line stays basis-pinned for good.
        pinned: bool,
    },
    Target {
        local_prefix: Mat2,
        actions: Vec<TargetAction>,
    },
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Free { .. } => "free",
            Role::Control { .. } => "control",
            Role::Ambiguous { .. } => "ambiguous",
            Role::Target { .. } => "target",
        }
    }

    pub fn basis(&self) -> Option<&QubitBasis> {
        match self {
            Role::Control { basis, .. } | Role::Ambiguous { basis, .. } => Some(basis),
            _ => None,
        }
    }
}

/// One entry of the admitted ledger.
#[derive(Debug, Clone, PartialEq)]
pub enum AdmittedOp {
    Single {
        q: usize,
        u: Mat2,
    },
    /// A basis-controlled gate preceded by optional single-qubit factors
    /// (applied first). The `pre_*` factors undo accumulated singles, or
    /// on a promoted former target the reference action `W_{x0}†`, so the
    /// control factor is back in its basis when the controlled part fires.
    Cu {
        control: usize,
        target: usize,
        basis: QubitBasis,
        branch0: Mat2,
        branch1: Mat2,
        pre_control: Option<Mat2>,
        pre_target: Option<Mat2>,
    },
}

impl AdmittedOp {
    fn touches(&self, line: usize) -> bool {
        match self {
            AdmittedOp::Single { q, .. } => *q == line,
            AdmittedOp::Cu {
                control, target, ..
            } => *control == line || *target == line,
        }
    }
}

/// Result of classifying a circuit prefix: per-line roles plus the
/// admitted ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub n: usize,
    pub roles: Vec<Role>,
    pub admitted: Vec<AdmittedOp>,
}

/// Which admission rule failed; each variant is re-checkable against the
/// state the classifier was in when it rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectRule {
    /// The gate (after undoing accumulated singles where the row says to)
    /// has no product eigenbasis.
    NoProductEigenbasis,
    /// A single-qubit gate on a basis-pinned line is not diagonal in the
    /// line's basis, and the line cannot be re-read as a target.
    SingleNotDiagonal { line: usize },
    /// The row requires the gate to be controlled on `line` in its stored
    /// basis, and it is not (nor does any permitted alternative apply).
    NotControlledOnBasis { line: usize },
    /// Control x control requires diagonality in the joint basis.
    NotDiagonalInBases,
    /// The recorded control strings admit no common diagonalizer, or the
    /// undone gate is not controlled as the row requires. The index names
    /// which row's side condition failed: 1 target x target, 2 target x
    /// free, 3 target x ambiguous.
    ConditionFailed { condition: u8 },
    /// Neither control reading of an ambiguous pair admits the gate.
    AmbiguousPairUnmatched,
    /// A special case the classifier only checks in restricted form
    /// (single controller / bounded enumeration); declined conservatively.
    SpecialCaseDeclined,
}

/// A rejected gate: index, violated rule, and human-readable detail.
#[derive(Debug, Clone)]
pub struct Rejection {
    pub gate_index: usize,
    pub rule: RejectRule,
    pub detail: String,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "gate {} rejected ({:?}): {}",
            self.gate_index, self.rule, self.detail
        )
    }
}

impl std::error::Error for Rejection {}

// ---------------------------------------------------------------------------
// Line histories and condition checks
// ---------------------------------------------------------------------------

/// A line's history as a walkable sequence, used to evaluate `U_x`.
#[derive(Debug, Clone)]
pub enum LineStep {
    Fixed(Mat2),
    Branch { by: usize, b0: Mat2, b1: Mat2 },
}

pub fn steps_controllers(steps: &[LineStep]) -> Vec<usize> {
    let mut out = Vec::new();
    for s in steps {
        if let LineStep::Branch { by, .. } = s {
            if !out.contains(by) {
                out.push(*by);
            }
        }
    }
    out
}

pub fn steps_action(steps: &[LineStep], bit_of: &dyn Fn(usize) -> bool) -> Mat2 {
    let mut acc = Mat2::IDENTITY;
    for s in steps {
        let m = match s {
            LineStep::Fixed(m) => m,
            LineStep::Branch { by, b0, b1 } => {
                if bit_of(*by) {
                    b1
                } else {
                    b0
                }
            }
        };
        acc = m.mul(&acc);
    }
    acc
}

/// All bit assignments over `lines`, or `None` past the enumeration cap.
fn enumerate_assignments(lines: &[usize]) -> Option<Vec<Vec<(usize, bool)>>> {
    if lines.len() > CAP_CONTROLS {
        return None;
    }
    let count = 1usize << lines.len();
    let mut out = Vec::with_capacity(count);
    for mask in 0..count {
        out.push(
            lines
                .iter()
                .enumerate()
                .map(|(k, &l)| (l, mask >> k & 1 == 1))
                .collect(),
        );
    }
    Some(out)
}

fn bit_lookup(assign: &[(usize, bool)]) -> impl Fn(usize) -> bool + '_ {
    move |line| {
        assign
            .iter()
            .find(|(l, _)| *l == line)
            .map(|(_, b)| *b)
            .unwrap_or(false)
    }
}

fn scalar_part(m: &Mat2) -> Option<C64> {
    let half = C64::new(0.5, 0.0);
    let s = m.trace() * half;
    if m.frobenius_distance(&Mat2::IDENTITY.scale(s)) <= TOL_COMMUTE {
        Some(s)
    } else {
        None
    }
}

/// Outcome of the common-diagonalizer search over a line's control strings.
enum CommonDiag {
    /// Every residual is scalar: any basis diagonalizes.
    Any,
    Basis(QubitBasis),
    NoCommon,
    Overflow,
}

/// Search a basis diagonalizing `W_{x0}† W_x` for every control string x
/// (x0 = all zeros); also returns the reference action `W_{x0}`.
///
/// The candidate basis comes from the first non-scalar residual; a common
/// diagonalizer, if any exists, must diagonalize that one too.
fn common_diagonalizer(steps: &[LineStep]) -> (CommonDiag, Mat2) {
    let controllers = steps_controllers(steps);
    let w0 = steps_action(steps, &|_| false);
    let Some(assigns) = enumerate_assignments(&controllers) else {
        return (CommonDiag::Overflow, w0);
    };
    let w0d = w0.dagger();
    let mut residuals = Vec::with_capacity(assigns.len());
    for a in &assigns {
        let wx = steps_action(steps, &bit_lookup(a));
        residuals.push(w0d.mul(&wx));
    }
    let mut basis = None;
    for r in &residuals {
        if scalar_part(r).is_none() {
            match eig2(r) {
                Ok((p, q)) => {
                    basis = Some(QubitBasis {
                        v0: p.vector,
                        v1: q.vector,
                    });
                }
                Err(_) => return (CommonDiag::NoCommon, w0),
            }
            break;
        }
    }
    let Some(basis) = basis else {
        return (CommonDiag::Any, w0);
    };
    for r in &residuals {
        if !is_diagonal_in(r, &basis) {
            return (CommonDiag::NoCommon, w0);
        }
    }
    (CommonDiag::Basis(basis), w0)
}

/// Does `candidate` witness a non-commuting branch pair on a line whose
/// history is `steps` (already including the candidate's branches)?
/// Enumeration overflow counts as no witness, which only under-promotes.
fn has_witness(steps: &[LineStep], candidate: usize) -> bool {
    let mut others = steps_controllers(steps);
    others.retain(|&l| l != candidate);
    let Some(assigns) = enumerate_assignments(&others) else {
        return false;
    };
    for a in &assigns {
        let with = |bit: bool| {
            let mut assign = a.clone();
            assign.push((candidate, bit));
            let u = steps_action(steps, &bit_lookup(&assign));
            u
        };
        if commutator_norm(&with(false), &with(true)) > TOL_COMMUTE {
            return true;
        }
    }
    false
}

/// Kron factorisation `m = A ⊗ B` with unitary factors, within 1e-8.
pub(crate) fn factor_kron(m: &Mat4) -> Option<(Mat2, Mat2)> {
    let block = |r: usize, c: usize| -> Mat2 {
        Mat2([
            [m.0[2 * r][2 * c], m.0[2 * r][2 * c + 1]],
            [m.0[2 * r + 1][2 * c], m.0[2 * r + 1][2 * c + 1]],
        ])
    };
    let mut best = (0, 0);
    let mut best_norm = -1.0;
    for r in 0..2 {
        for c in 0..2 {
            let n = block(r, c).frobenius_norm();
            if n > best_norm {
                best_norm = n;
                best = (r, c);
            }
        }
    }
    if best_norm < 1e-6 {
        return None;
    }
    // For m = A⊗B every block is a_rc·B; normalise the largest to unitary.
    let b_raw = block(best.0, best.1);
    let scale = (b_raw.dagger().mul(&b_raw).trace().re / 2.0).sqrt();
    if scale < 1e-9 {
        return None;
    }
    let b = b_raw.scale(C64::new(1.0 / scale, 0.0));
    if !b.is_unitary() {
        return None;
    }
    let half = C64::new(0.5, 0.0);
    let mut a = [[ZERO; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            a[r][c] = b.dagger().mul(&block(r, c)).trace() * half;
        }
    }
    let a = Mat2(a);
    if !a.is_unitary() || a.kron(&b).frobenius_distance(m) > 1e-8 {
        return None;
    }
    Some((a, b))
}

/// Basis diagonalizing two commuting unitaries, from whichever is further
/// from scalar.
fn common_eig_basis(b: &Mat2, c: &Mat2) -> Option<QubitBasis> {
    let pick = if scalar_part(b).is_none() { b } else { c };
    if scalar_part(pick).is_some() {
        return None;
    }
    let (p, q) = eig2(pick).ok()?;
    let basis = QubitBasis {
        v0: p.vector,
        v1: q.vector,
    };
    if is_diagonal_in(b, &basis) && is_diagonal_in(c, &basis) {
        Some(basis)
    } else {
        None
    }
}

/// Read `m` as controlled on `want` in some basis, flipping the canonical
/// decomposition when the gate kind permits both control sides.
fn as_controlled_any(m: &Mat4, want: ControlSlot) -> Option<(QubitBasis, Mat2, Mat2)> {
    let g = decompose_4x4(m).ok()??;
    if g.control_slot == want {
        return Some((g.control_basis, g.branch0, g.branch1));
    }
    match g.kind() {
        GateKind::Ordinary => None,
        GateKind::Product => {
            let (a, b) = factor_kron(m)?;
            let own = match want {
                ControlSlot::First => a,
                ControlSlot::Second => b,
            };
            let (p, q) = eig2(&own).ok()?;
            let basis = QubitBasis {
                v0: p.vector,
                v1: q.vector,
            };
            as_controlled_on(m, want, &basis).map(|(k, h)| (basis, k, h))
        }
        GateKind::Phase => {
            let basis = common_eig_basis(&g.branch0, &g.branch1)?;
            as_controlled_on(m, want, &basis).map(|(k, h)| (basis, k, h))
        }
    }
}

/// Diagonal entries of `d` in `basis`.
fn diag_entries(d: &Mat2, basis: &QubitBasis) -> (C64, C64) {
    let t = in_basis(d, basis);
    (t.0[0][0], t.0[1][1])
}

/// A gate controlled on one side with branches diagonal in the other
/// side's basis is equally controlled the other way; this produces the
/// mirrored branch pair acting on the original control line.
fn mirror_branches(
    ctrl_basis: &QubitBasis,
    branch0: &Mat2,
    branch1: &Mat2,
    other_basis: &QubitBasis,
) -> (Mat2, Mat2) {
    let (k0, k1) = diag_entries(branch0, other_basis);
    let (h0, h1) = diag_entries(branch1, other_basis);
    let v = ctrl_basis.as_matrix();
    let diag = |a: C64, b: C64| {
        v.mul(&Mat2::from_rows([a, ZERO], [ZERO, b]))
            .mul(&v.dagger())
    };
    // The other line's label 0 picks each branch's first diagonal entry.
    (diag(k0, h0), diag(k1, h1))
}

// ---------------------------------------------------------------------------
// Classification state
// ---------------------------------------------------------------------------

impl Classification {
    pub fn new(n: usize) -> Self {
        Classification {
            n,
            roles: (0..n).map(|_| Role::Free { w: Mat2::IDENTITY }).collect(),
            admitted: Vec::new(),
        }
    }

    /// A line's history as walkable steps. Control lines walk empty: their
    /// admitted gates act on the other side or contribute pure phases.
    pub fn line_steps(&self, line: usize) -> Vec<LineStep> {
        match &self.roles[line] {
            Role::Free { w } => vec![LineStep::Fixed(*w)],
            Role::Control { .. } => Vec::new(),
            Role::Ambiguous { steps, .. } => steps
                .iter()
                .map(|s| match s {
                    AmbStep::Diag(d) => LineStep::Fixed(*d),
                    AmbStep::Link { partner, d0, d1 } => LineStep::Branch {
                        by: *partner,
                        b0: *d0,
                        b1: *d1,
                    },
                })
                .collect(),
            Role::Target {
                local_prefix,
                actions,
            } => {
                let mut out = vec![LineStep::Fixed(*local_prefix)];
                out.extend(actions.iter().map(|a| LineStep::Branch {
                    by: a.control,
                    b0: a.branch0,
                    b1: a.branch1,
                }));
                out
            }
        }
    }

    fn push_single(&mut self, q: usize, u: Mat2) {
        self.admitted.push(AdmittedOp::Single { q, u });
    }

    #[allow(clippy::too_many_arguments)]
    fn push_cu(
        &mut self,
        control: usize,
        target: usize,
        basis: QubitBasis,
        branch0: Mat2,
        branch1: Mat2,
        pre_control: Option<Mat2>,
        pre_target: Option<Mat2>,
    ) {
        self.admitted.push(AdmittedOp::Cu {
            control,
            target,
            basis,
            branch0,
            branch1,
            pre_control,
            pre_target,
        });
    }

    /// Convert an ambiguous line's steps into target bookkeeping.
    fn amb_steps_to_target(steps: &[AmbStep]) -> (Mat2, Vec<TargetAction>) {
        let mut prefix = Mat2::IDENTITY;
        let mut actions: Vec<TargetAction> = Vec::new();
        for s in steps {
            match s {
                AmbStep::Diag(d) => {
                    if let Some(last) = actions.last_mut() {
                        last.branch0 = d.mul(&last.branch0);
                        last.branch1 = d.mul(&last.branch1);
                    } else {
                        prefix = d.mul(&prefix);
                    }
                }
                AmbStep::Link { partner, d0, d1 } => actions.push(TargetAction {
                    control: *partner,
                    branch0: *d0,
                    branch1: *d1,
                }),
            }
        }
        (prefix, actions)
    }

    /// When `line` stops being basis-pinned its partners may no longer
    /// rely on its label: their mirror links are removed (the shared gates
    /// are hereafter read as controlled on the partner, acting on `line`).
    fn pin_mirrors_of(&mut self, line: usize) {
        let partners: Vec<usize> = match &self.roles[line] {
            Role::Ambiguous { steps, .. } => steps
                .iter()
                .filter_map(|s| match s {
                    AmbStep::Link { partner, .. } => Some(*partner),
                    _ => None,
                })
                .collect(),
            _ => Vec::new(),
        };
        for p in partners {
            if let Role::Ambiguous { steps, .. } = &mut self.roles[p] {
                steps.retain(|s| !matches!(s, AmbStep::Link { partner, .. } if *partner == line));
            }
        }
    }

    /// Is this ledger entry, with `line` as its control, re-expressible
    /// without relying on `line`'s basis label? Either the branches are
    /// proportional (two singles) or the target side is basis-pinned with
    /// branches diagonal in its basis (flip the control side).
    fn cu_rewritable(&self, op: &AdmittedOp, line: usize) -> bool {
        let AdmittedOp::Cu {
            control,
            target,
            branch0,
            branch1,
            ..
        } = op
        else {
            return true;
        };
        if *control != line {
            return true;
        }
        if crate::mat::proportionality_phase(branch0, branch1).is_some() {
            return true;
        }
        match self.roles[*target].basis() {
            Some(bt) => is_diagonal_in(branch0, bt) && is_diagonal_in(branch1, bt),
            None => false,
        }
    }

    /// Can `line` (an unpinned ambiguous line) stop being basis-pinned?
    /// Requires every ledger entry controlled on it to be rewritable.
    fn is_convertible(&self, line: usize) -> bool {
        match &self.roles[line] {
            Role::Ambiguous { pinned: false, .. } => {}
            _ => return false,
        }
        self.admitted.iter().all(|op| self.cu_rewritable(op, line))
    }

    /// Rewrite every ledger entry controlled on `line` so that evolution
    /// never needs `line`'s factor to sit in a basis: flip fully diagonal
    /// gates onto their partner, split proportional-branch gates into two
    /// singles. Must be called before `line` loses its basis pin.
    fn rewrite_controls_of(&mut self, line: usize) {
        let basis_of = |roles: &Vec<Role>, q: usize| roles[q].basis().copied();
        let mut rewritten: Vec<AdmittedOp> = Vec::with_capacity(self.admitted.len());
        let ops = std::mem::take(&mut self.admitted);
        for op in ops {
            match &op {
                AdmittedOp::Cu {
                    control,
                    target,
                    basis,
                    branch0,
                    branch1,
                    pre_control,
                    pre_target,
                } if *control == line => {
                    if let Some(phi) = crate::mat::proportionality_phase(branch0, branch1) {
                        // CU(B, φB) = diag(1, φ) ⊗ B in the control basis.
                        let v = basis.as_matrix();
                        let d = v
                            .mul(&Mat2::from_rows([crate::mat::ONE, ZERO], [ZERO, phi]))
                            .mul(&v.dagger());
                        if let Some(p) = pre_control {
                            rewritten.push(AdmittedOp::Single { q: line, u: *p });
                        }
                        if let Some(p) = pre_target {
                            rewritten.push(AdmittedOp::Single { q: *target, u: *p });
                        }
                        rewritten.push(AdmittedOp::Single { q: line, u: d });
                        rewritten.push(AdmittedOp::Single {
                            q: *target,
                            u: *branch0,
                        });
                    } else {
                        let bt = basis_of(&self.roles, *target)
                            .expect("rewrite requires a basis-pinned partner");
                        let (a0, a1) = mirror_branches(basis, branch0, branch1, &bt);
                        rewritten.push(AdmittedOp::Cu {
                            control: *target,
                            target: line,
                            basis: bt,
                            branch0: a0,
                            branch1: a1,
                            pre_control: *pre_target,
                            pre_target: *pre_control,
                        });
                    }
                }
                _ => rewritten.push(op),
            }
        }
        self.admitted = rewritten;
    }

    /// Turn an ambiguous line into a target. Callers must have checked
    /// `is_convertible` first.
    fn convert_amb_to_target(&mut self, line: usize, new_action: TargetAction) {
        self.rewrite_controls_of(line);
        self.pin_mirrors_of(line);
        let Role::Ambiguous { steps, .. } = &self.roles[line] else {
            unreachable!("convert_amb_to_target on a non-ambiguous line");
        };
        let (prefix, mut actions) = Self::amb_steps_to_target(steps);
        actions.push(new_action);
        self.roles[line] = Role::Target {
            local_prefix: prefix,
            actions,
        };
    }

    /// A former target became basis-pinned: controllers lose it from their
    /// target lists, and a control left with no targets demotes to a
    /// pinned ambiguous line (its witness is gone and its history is not
    /// link-representable).
    fn untarget(&mut self, line: usize) {
        for q in 0..self.n {
            if q == line {
                continue;
            }
            let demote = if let Role::Control { basis, targets } = &mut self.roles[q] {
                targets.retain(|&t| t != line);
                if targets.is_empty() {
                    Some(*basis)
                } else {
                    None
                }
            } else {
                None
            };
            if let Some(basis) = demote {
                self.roles[q] = Role::Ambiguous {
                    basis,
                    steps: Vec::new(),
                    pinned: true,
                };
            }
        }
    }

    fn add_target_to(&mut self, control: usize, target: usize) {
        if let Role::Control { targets, .. } = &mut self.roles[control] {
            if !targets.contains(&target) {
                targets.push(target);
            }
        }
    }

    /// Replay the admitted ledger into a dense unitary; must reproduce the
    /// input circuit's unitary.
    pub fn replay_unitary(&self, cap: usize) -> Result<DMat, Error> {
        let mut gates: Vec<Gate> = Vec::new();
        for op in &self.admitted {
            match op {
                AdmittedOp::Single { q, u } => gates.push(Gate::Single { q: *q, u: *u }),
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
                        gates.push(Gate::Single { q: *control, u: *p });
                    }
                    if let Some(p) = pre_target {
                        gates.push(Gate::Single { q: *target, u: *p });
                    }
                    gates.push(Gate::TwoDecomposed {
                        i: *control,
                        j: *target,
                        g: BasisControlledGate::new(ControlSlot::First, *basis, *branch0, *branch1),
                    });
                }
            }
        }
        let c = Circuit { n: self.n, gates };
        c.build_full_unitary(cap)
    }

    /// JSON classification report: per-line role name, basis vectors, and
    /// action lists, in the circuit format's complex encoding.
    pub fn report_json(&self) -> serde_json::Value {
        use serde_json::json;
        let basis_json = |b: &QubitBasis| {
            json!([
                crate::circuit::vec2_pairs(&b.v0),
                crate::circuit::vec2_pairs(&b.v1)
            ])
        };
        let roles: Vec<serde_json::Value> = self
            .roles
            .iter()
            .map(|r| match r {
                Role::Free { w } => json!({
                    "role": "free",
                    "w": crate::circuit::mat2_pairs(w),
                }),
                Role::Control { basis, targets } => json!({
                    "role": "control",
                    "basis": basis_json(basis),
                    "targets": targets,
                }),
                Role::Ambiguous { basis, steps, .. } => json!({
                    "role": "ambiguous",
                    "basis": basis_json(basis),
                    "diagonal_partners": steps.iter().filter_map(|s| match s {
                        AmbStep::Link { partner, .. } => Some(*partner),
                        _ => None,
                    }).collect::<Vec<_>>(),
                }),
                Role::Target {
                    local_prefix,
                    actions,
                } => json!({
                    "role": "target",
                    "local_prefix": crate::circuit::mat2_pairs(local_prefix),
                    "actions": actions.iter().map(|a| json!({
                        "control": a.control,
                        "b0": crate::circuit::mat2_pairs(&a.branch0),
                        "b1": crate::circuit::mat2_pairs(&a.branch1),
                    })).collect::<Vec<_>>(),
                }),
            })
            .collect();
        json!({ "n": self.n, "roles": roles })
    }
}

// ---------------------------------------------------------------------------
// classify_step: single-qubit gates
// ---------------------------------------------------------------------------

/// Plan for admitting a single-qubit gate, decided before any mutation.
enum SinglePlan {
    FreeAbsorb,
    DiagOnControl,
    DiagOnAmbiguous,
    AmbConvert,
    TargetMerge,
}

fn plan_single(cls: &Classification, q: usize, u: &Mat2) -> Result<SinglePlan, RejectRule> {
    match &cls.roles[q] {
        Role::Free { .. } => Ok(SinglePlan::FreeAbsorb),
        Role::Control { basis, .. } => {
            if is_diagonal_in(u, basis) {
                Ok(SinglePlan::DiagOnControl)
            } else {
                Err(RejectRule::SingleNotDiagonal { line: q })
            }
        }
        Role::Ambiguous { basis, .. } => {
            if is_diagonal_in(u, basis) {
                Ok(SinglePlan::DiagOnAmbiguous)
            } else if cls.is_convertible(q) {
                Ok(SinglePlan::AmbConvert)
            } else {
                Err(RejectRule::SingleNotDiagonal { line: q })
            }
        }
        Role::Target { .. } => Ok(SinglePlan::TargetMerge),
    }
}

fn commit_single(cls: &mut Classification, q: usize, u: &Mat2, plan: SinglePlan) {
    match plan {
        SinglePlan::FreeAbsorb => {
            if let Role::Free { w } = &mut cls.roles[q] {
                *w = u.mul(w);
            }
        }
        SinglePlan::DiagOnControl => {}
        SinglePlan::DiagOnAmbiguous => {
            if let Role::Ambiguous { steps, .. } = &mut cls.roles[q] {
                steps.push(AmbStep::Diag(*u));
            }
        }
        SinglePlan::AmbConvert => {
            // A non-diagonal single re-reads the line's diagonal history as
            // controlled on the partners; the line becomes their target.
            cls.rewrite_controls_of(q);
            cls.pin_mirrors_of(q);
            let Role::Ambiguous { steps, .. } = &cls.roles[q] else {
                unreachable!();
            };
            let (mut prefix, mut actions) = Classification::amb_steps_to_target(steps);
            if let Some(last) = actions.last_mut() {
                last.branch0 = u.mul(&last.branch0);
                last.branch1 = u.mul(&last.branch1);
            } else {
                prefix = u.mul(&prefix);
            }
            cls.roles[q] = Role::Target {
                local_prefix: prefix,
                actions,
            };
        }
        SinglePlan::TargetMerge => {
            if let Role::Target {
                local_prefix,
                actions,
            } = &mut cls.roles[q]
            {
                if let Some(last) = actions.last_mut() {
                    last.branch0 = u.mul(&last.branch0);
                    last.branch1 = u.mul(&last.branch1);
                } else {
                    *local_prefix = u.mul(local_prefix);
                }
            }
        }
    }
    cls.push_single(q, *u);
}

fn reject(gate_index: usize, rule: RejectRule, detail: impl Into<String>) -> Rejection {
    Rejection {
        gate_index,
        rule,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// classify_step: two-qubit dispatch
// ---------------------------------------------------------------------------

/// Admit one gate into the classification, or reject it. The state is
/// unchanged on rejection.
pub fn classify_step(
    cls: &mut Classification,
    gate_index: usize,
    gate: &Gate,
) -> Result<(), Rejection> {
    match gate {
        Gate::Single { q, u } => {
            let plan = plan_single(cls, *q, u)
                .map_err(|rule| reject(gate_index, rule, "single-qubit gate not admissible"))?;
            commit_single(cls, *q, u, plan);
            Ok(())
        }
        Gate::Two { i, j, m } => admit_two(cls, gate_index, *i, *j, m),
        Gate::TwoDecomposed { i, j, g } => admit_two(cls, gate_index, *i, *j, &g.to_matrix()),
    }
}

/// Fold `classify_step` over the gate list: acceptance certifies that
/// every prefix has a product eigenbasis.
pub fn classify_circuit(c: &Circuit) -> Result<Classification, Rejection> {
    let mut cls = Classification::new(c.n);
    for (idx, g) in c.gates.iter().enumerate() {
        classify_step(&mut cls, idx, g)?;
    }
    Ok(cls)
}

/// A line paired with the tensor slot it occupies in the incoming gate.
#[derive(Clone, Copy)]
struct End {
    line: usize,
    slot: ControlSlot,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Tag {
    Free,
    Control,
    Ambiguous,
    Target,
}

fn tag_of(r: &Role) -> Tag {
    match r {
        Role::Free { .. } => Tag::Free,
        Role::Control { .. } => Tag::Control,
        Role::Ambiguous { .. } => Tag::Ambiguous,
        Role::Target { .. } => Tag::Target,
    }
}

fn admit_two(
    cls: &mut Classification,
    idx: usize,
    i: usize,
    j: usize,
    m: &Mat4,
) -> Result<(), Rejection> {
    let ei = End {
        line: i,
        slot: ControlSlot::First,
    };
    let ej = End {
        line: j,
        slot: ControlSlot::Second,
    };

    // Product-kind gates are two singles; route them through the
    // single-gate rules so roles change exactly as those dictate.
    if let Some((a, b)) = factor_kron(m) {
        let plan_a = plan_single(cls, i, &a)
            .map_err(|rule| reject(idx, rule, "product gate: first factor inadmissible"))?;
        let plan_b = plan_single(cls, j, &b)
            .map_err(|rule| reject(idx, rule, "product gate: second factor inadmissible"))?;
        commit_single(cls, i, &a, plan_a);
        commit_single(cls, j, &b, plan_b);
        return Ok(());
    }

    let (ti, tj) = (tag_of(&cls.roles[i]), tag_of(&cls.roles[j]));
    match (ti, tj) {
        (Tag::Free, Tag::Free) => free_free(cls, idx, ei, ej, m),
        (Tag::Control, Tag::Control) => ctrl_ctrl(cls, idx, ei, ej, m),
        (Tag::Control, Tag::Free) => ctrl_loose(cls, idx, ei, ej, m, false),
        (Tag::Free, Tag::Control) => ctrl_loose(cls, idx, ej, ei, m, false),
        (Tag::Control, Tag::Ambiguous) => ctrl_loose(cls, idx, ei, ej, m, true),
        (Tag::Ambiguous, Tag::Control) => ctrl_loose(cls, idx, ej, ei, m, true),
        (Tag::Control, Tag::Target) => ctrl_target(cls, idx, ei, ej, m),
        (Tag::Target, Tag::Control) => ctrl_target(cls, idx, ej, ei, m),
        (Tag::Ambiguous, Tag::Ambiguous) => amb_amb(cls, idx, ei, ej, m),
        (Tag::Ambiguous, Tag::Free) => amb_free(cls, idx, ei, ej, m, true),
        (Tag::Free, Tag::Ambiguous) => amb_free(cls, idx, ej, ei, m, false),
        (Tag::Target, Tag::Ambiguous) => target_amb(cls, idx, ei, ej, m, true),
        (Tag::Ambiguous, Tag::Target) => target_amb(cls, idx, ej, ei, m, false),
        (Tag::Target, Tag::Free) => target_free(cls, idx, ei, ej, m, true),
        (Tag::Free, Tag::Target) => target_free(cls, idx, ej, ei, m, false),
        (Tag::Target, Tag::Target) => target_target(cls, idx, ei, ej, m),
    }
}

/// Embed a 2x2 on one end of the (first, second) slot pair.
fn embed_on(end: End, u: &Mat2) -> Mat4 {
    match end.slot {
        ControlSlot::First => u.kron(&Mat2::IDENTITY),
        ControlSlot::Second => Mat2::IDENTITY.kron(u),
    }
}

/// Free x free: undo the accumulated singles; any basis-controlled gate is
/// then admissible, with roles following the gate kind.
fn free_free(
    cls: &mut Classification,
    idx: usize,
    ei: End,
    ej: End,
    m: &Mat4,
) -> Result<(), Rejection> {
    let w_of = |cls: &Classification, l: usize| match &cls.roles[l] {
        Role::Free { w } => *w,
        _ => unreachable!(),
    };
    let (wi, wj) = (w_of(cls, ei.line), w_of(cls, ej.line));
    let total = m.mul(&wi.kron(&wj));
    let g = decompose_4x4(&total)
        .map_err(|_| reject(idx, RejectRule::NoProductEigenbasis, "gate is not unitary"))?;
    let Some(g) = g else {
        return Err(reject(
            idx,
            RejectRule::NoProductEigenbasis,
            "composed with the accumulated singles, the gate has no product eigenbasis",
        ));
    };
    let (ctrl_end, tgt_end, wc, wt) = match g.control_slot {
        ControlSlot::First => (ei, ej, wi, wj),
        ControlSlot::Second => (ej, ei, wj, wi),
    };
    match g.kind() {
        GateKind::Product => {
            // Reachable only on numerical margins (factor_kron declined):
            // absorb as two singles.
            let Some((a, b)) = factor_kron(&total) else {
                return Err(reject(
                    idx,
                    RejectRule::NoProductEigenbasis,
                    "borderline product gate",
                ));
            };
            cls.push_single(ei.line, a.mul(&wi.dagger()));
            cls.push_single(ej.line, b.mul(&wj.dagger()));
            cls.roles[ei.line] = Role::Free { w: a };
            cls.roles[ej.line] = Role::Free { w: b };
        }
        GateKind::Ordinary => {
            cls.roles[ctrl_end.line] = Role::Control {
                basis: g.control_basis,
                targets: vec![tgt_end.line],
            };
            cls.roles[tgt_end.line] = Role::Target {
                local_prefix: Mat2::IDENTITY,
                actions: vec![TargetAction {
                    control: ctrl_end.line,
                    branch0: g.branch0,
                    branch1: g.branch1,
                }],
            };
            cls.push_cu(
                ctrl_end.line,
                tgt_end.line,
                g.control_basis,
                g.branch0,
                g.branch1,
                Some(wc.dagger()),
                Some(wt.dagger()),
            );
        }
        GateKind::Phase => {
            let other_basis = common_eig_basis(&g.branch0, &g.branch1).ok_or_else(|| {
                reject(
                    idx,
                    RejectRule::NoProductEigenbasis,
                    "degenerate phase gate",
                )
            })?;
            let (a0, a1) = mirror_branches(&g.control_basis, &g.branch0, &g.branch1, &other_basis);
            cls.roles[ctrl_end.line] = Role::Ambiguous {
                basis: g.control_basis,
                steps: vec![AmbStep::Link {
                    partner: tgt_end.line,
                    d0: a0,
                    d1: a1,
                }],
                pinned: false,
            };
            cls.roles[tgt_end.line] = Role::Ambiguous {
                basis: other_basis,
                steps: vec![AmbStep::Link {
                    partner: ctrl_end.line,
                    d0: g.branch0,
                    d1: g.branch1,
                }],
                pinned: false,
            };
            cls.push_cu(
                ctrl_end.line,
                tgt_end.line,
                g.control_basis,
                g.branch0,
                g.branch1,
                Some(wc.dagger()),
                Some(wt.dagger()),
            );
        }
    }
    Ok(())
}

/// Control x control: diagonal in the joint basis or rejected.
fn ctrl_ctrl(
    cls: &mut Classification,
    idx: usize,
    ei: End,
    ej: End,
    m: &Mat4,
) -> Result<(), Rejection> {
    let bi = *cls.roles[ei.line].basis().unwrap();
    let bj = *cls.roles[ej.line].basis().unwrap();
    let Some((k, h)) = as_controlled_on(m, ei.slot, &bi) else {
        return Err(reject(
            idx,
            RejectRule::NotDiagonalInBases,
            "gate is not controlled on the first control line in its basis",
        ));
    };
    if !is_diagonal_in(&k, &bj) || !is_diagonal_in(&h, &bj) {
        return Err(reject(
            idx,
            RejectRule::NotDiagonalInBases,
            "branch actions are not diagonal in the partner control's basis",
        ));
    }
    cls.push_cu(ei.line, ej.line, bi, k, h, None, None);
    Ok(())
}

/// Control x (free | ambiguous): the gate must be controlled on the
/// control line in its stored basis; the other line's role follows the
/// total branch pair.
fn ctrl_loose(
    cls: &mut Classification,
    idx: usize,
    ec: End,
    eo: End,
    m: &Mat4,
    other_is_amb: bool,
) -> Result<(), Rejection> {
    let bc = *cls.roles[ec.line].basis().unwrap();
    let Some((k, h)) = as_controlled_on(m, ec.slot, &bc) else {
        return Err(reject(
            idx,
            RejectRule::NotControlledOnBasis { line: ec.line },
            "gate is not controlled on the control line in its basis",
        ));
    };

    if other_is_amb {
        let bo = *cls.roles[eo.line].basis().unwrap();
        if is_diagonal_in(&k, &bo) && is_diagonal_in(&h, &bo) {
            if let Role::Ambiguous { steps, .. } = &mut cls.roles[eo.line] {
                steps.push(AmbStep::Link {
                    partner: ec.line,
                    d0: k,
                    d1: h,
                });
            }
        } else {
            if !cls.is_convertible(eo.line) {
                return Err(reject(
                    idx,
                    RejectRule::NotControlledOnBasis { line: eo.line },
                    "the basis line's history cannot be re-read to make it a target",
                ));
            }
            cls.convert_amb_to_target(
                eo.line,
                TargetAction {
                    control: ec.line,
                    branch0: k,
                    branch1: h,
                },
            );
            cls.add_target_to(ec.line, eo.line);
        }
        cls.push_cu(ec.line, eo.line, bc, k, h, None, None);
        return Ok(());
    }

    let wo = match &cls.roles[eo.line] {
        Role::Free { w } => *w,
        _ => unreachable!(),
    };
    let t0 = k.mul(&wo);
    let t1 = h.mul(&wo);
    match gate_kind(&t0, &t1) {
        GateKind::Product => {
            // Phases on the control times a single on the free line.
            cls.roles[eo.line] = Role::Free { w: t0 };
            cls.push_cu(ec.line, eo.line, bc, k, h, None, None);
        }
        GateKind::Ordinary => {
            cls.roles[eo.line] = Role::Target {
                local_prefix: wo,
                actions: vec![TargetAction {
                    control: ec.line,
                    branch0: k,
                    branch1: h,
                }],
            };
            cls.add_target_to(ec.line, eo.line);
            cls.push_cu(ec.line, eo.line, bc, k, h, None, None);
        }
        GateKind::Phase => {
            let bo = common_eig_basis(&t0, &t1).ok_or_else(|| {
                reject(
                    idx,
                    RejectRule::NotControlledOnBasis { line: ec.line },
                    "degenerate branch pair",
                )
            })?;
            cls.roles[eo.line] = Role::Ambiguous {
                basis: bo,
                steps: vec![AmbStep::Link {
                    partner: ec.line,
                    d0: t0,
                    d1: t1,
                }],
                pinned: false,
            };
            cls.push_cu(ec.line, eo.line, bc, k, h, None, None);
        }
    }
    Ok(())
}

/// Compose a ledger entry onto an ordered line pair as a 4x4.
fn admitted_on_pair(op: &AdmittedOp, first: usize, second: usize) -> Mat4 {
    match op {
        AdmittedOp::Single { q, u } => {
            if *q == first {
                u.kron(&Mat2::IDENTITY)
            } else {
                debug_assert_eq!(*q, second);
                Mat2::IDENTITY.kron(u)
            }
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
            let slot = if *control == first {
                ControlSlot::First
            } else {
                debug_assert_eq!(*control, second);
                ControlSlot::Second
            };
            let g = BasisControlledGate::new(slot, *basis, *branch0, *branch1);
            let mut m = g.to_matrix();
            // pre parts fire first
            let mut pre = Mat4::identity();
            if let Some(p) = pre_control {
                let e = End {
                    line: *control,
                    slot,
                };
                pre = embed_on(e, p).mul(&pre);
            }
            if let Some(p) = pre_target {
                let tslot = if *target == first {
                    ControlSlot::First
                } else {
                    ControlSlot::Second
                };
                pre = embed_on(
                    End {
                        line: *target,
                        slot: tslot,
                    },
                    p,
                )
                .mul(&pre);
            }
            m = m.mul(&pre);
            m
        }
    }
}

/// Control x target. The regular reading keeps the control in charge; when
/// the pair is exclusive (single target, single controller) the whole pair
/// history may instead rewrite into a gate controlled on the target line.
fn ctrl_target(
    cls: &mut Classification,
    idx: usize,
    ec: End,
    et: End,
    m: &Mat4,
) -> Result<(), Rejection> {
    let bc = *cls.roles[ec.line].basis().unwrap();
    if let Some((k, h)) = as_controlled_on(m, ec.slot, &bc) {
        if let Role::Target { actions, .. } = &mut cls.roles[et.line] {
            actions.push(TargetAction {
                control: ec.line,
                branch0: k,
                branch1: h,
            });
        }
        cls.add_target_to(ec.line, et.line);
        cls.push_cu(ec.line, et.line, bc, k, h, None, None);
        return Ok(());
    }

    // Special case: t is c's only target and c is t's only controller; the
    // whole (c, t) history composes with the new gate into a gate
    // controlled on t. Anything wider is declined conservatively.
    let c_targets = match &cls.roles[ec.line] {
        Role::Control { targets, .. } => targets.clone(),
        _ => unreachable!(),
    };
    let t_controllers = steps_controllers(&cls.line_steps(et.line));
    if c_targets != vec![et.line] || t_controllers != vec![ec.line] {
        return Err(reject(
            idx,
            RejectRule::SpecialCaseDeclined,
            "not controlled on the control line, and the exclusive-pair rewrite does not apply",
        ));
    }

    let (first, second) = match ec.slot {
        ControlSlot::First => (ec.line, et.line),
        ControlSlot::Second => (et.line, ec.line),
    };
    let hist_idx: Vec<usize> = (0..cls.admitted.len())
        .filter(|&k| cls.admitted[k].touches(et.line))
        .collect();
    let mut hist = Mat4::identity();
    for &k in &hist_idx {
        hist = admitted_on_pair(&cls.admitted[k], first, second).mul(&hist);
    }
    let composed = m.mul(&hist);
    let Some((bt, e, f)) = as_controlled_any(&composed, et.slot) else {
        return Err(reject(
            idx,
            RejectRule::NotControlledOnBasis { line: ec.line },
            "neither the control reading nor the target-side rewrite applies",
        ));
    };

    // Decide the outcome fully before mutating, so a rejection leaves the
    // state untouched.
    let ordinary = commutator_norm(&e, &f) > TOL_COMMUTE;
    let bc_new = if ordinary {
        None
    } else {
        match common_eig_basis(&e, &f) {
            Some(b) => Some(b),
            None => {
                return Err(reject(
                    idx,
                    RejectRule::SpecialCaseDeclined,
                    "rewrite produced a degenerate branch pair",
                ))
            }
        }
    };

    // Rewrite: drop the absorbed history and append the combined gate
    // controlled on t. Remaining entries commute past the removed ones
    // (disjoint support, or control-diagonal singles), so the replayed
    // unitary is unchanged.
    for &k in hist_idx.iter().rev() {
        cls.admitted.remove(k);
    }
    cls.untarget(et.line);
    if ordinary {
        cls.roles[et.line] = Role::Control {
            basis: bt,
            targets: vec![ec.line],
        };
        cls.roles[ec.line] = Role::Target {
            local_prefix: Mat2::IDENTITY,
            actions: vec![TargetAction {
                control: et.line,
                branch0: e,
                branch1: f,
            }],
        };
    } else {
        let bc_new = bc_new.unwrap();
        let (m0, m1) = mirror_branches(&bt, &e, &f, &bc_new);
        cls.roles[et.line] = Role::Ambiguous {
            basis: bt,
            steps: vec![AmbStep::Link {
                partner: ec.line,
                d0: m0,
                d1: m1,
            }],
            pinned: false,
        };
        cls.roles[ec.line] = Role::Ambiguous {
            basis: bc_new,
            steps: vec![AmbStep::Link {
                partner: et.line,
                d0: e,
                d1: f,
            }],
            pinned: false,
        };
    }
    cls.push_cu(et.line, ec.line, bt, e, f, None, None);
    Ok(())
}

/// Ambiguous x ambiguous: the gate must be controlled on one of the two
/// lines in its stored basis (tried in gate order).
fn amb_amb(
    cls: &mut Classification,
    idx: usize,
    ei: End,
    ej: End,
    m: &Mat4,
) -> Result<(), Rejection> {
    for (ec, eo) in [(ei, ej), (ej, ei)] {
        let bc = *cls.roles[ec.line].basis().unwrap();
        let Some((k, h)) = as_controlled_on(m, ec.slot, &bc) else {
            continue;
        };
        let bo = *cls.roles[eo.line].basis().unwrap();
        if is_diagonal_in(&k, &bo) && is_diagonal_in(&h, &bo) {
            // Fully diagonal: both stay ambiguous with mirrored links.
            let (a0, a1) = mirror_branches(&bc, &k, &h, &bo);
            if let Role::Ambiguous { steps, .. } = &mut cls.roles[eo.line] {
                steps.push(AmbStep::Link {
                    partner: ec.line,
                    d0: k,
                    d1: h,
                });
            }
            if let Role::Ambiguous { steps, .. } = &mut cls.roles[ec.line] {
                steps.push(AmbStep::Link {
                    partner: eo.line,
                    d0: a0,
                    d1: a1,
                });
            }
            cls.push_cu(ec.line, eo.line, bc, k, h, None, None);
            return Ok(());
        }
        if !cls.is_convertible(eo.line) {
            continue;
        }
        // The other line becomes a target of ec; promote ec by witness.
        cls.convert_amb_to_target(
            eo.line,
            TargetAction {
                control: ec.line,
                branch0: k,
                branch1: h,
            },
        );
        if has_witness(&cls.line_steps(eo.line), ec.line) {
            cls.roles[ec.line] = Role::Control {
                basis: bc,
                targets: vec![eo.line],
            };
        }
        cls.push_cu(ec.line, eo.line, bc, k, h, None, None);
        return Ok(());
    }
    Err(reject(
        idx,
        RejectRule::AmbiguousPairUnmatched,
        "gate is controlled on neither ambiguous line in its basis",
    ))
}

/// Ambiguous x free: controlled on the ambiguous line in its basis, or on
/// the free line in any basis after undoing its accumulated single. The
/// route belonging to the gate's first line is tried first.
fn amb_free(
    cls: &mut Classification,
    idx: usize,
    ea: End,
    ef: End,
    m: &Mat4,
    amb_first: bool,
) -> Result<(), Rejection> {
    let routes: [bool; 2] = if amb_first {
        [true, false]
    } else {
        [false, true]
    };
    for via_amb in routes {
        let admitted = if via_amb {
            amb_free_via_amb(cls, ea, ef, m)
        } else {
            amb_free_via_free(cls, ea, ef, m)
        };
        if admitted {
            return Ok(());
        }
    }
    Err(reject(
        idx,
        RejectRule::NotControlledOnBasis { line: ea.line },
        "controlled on neither the ambiguous line in its basis nor the free line",
    ))
}

fn amb_free_via_amb(cls: &mut Classification, ea: End, ef: End, m: &Mat4) -> bool {
    let ba = *cls.roles[ea.line].basis().unwrap();
    let wf = match &cls.roles[ef.line] {
        Role::Free { w } => *w,
        _ => unreachable!(),
    };
    let Some((k, h)) = as_controlled_on(m, ea.slot, &ba) else {
        return false;
    };
    let t0 = k.mul(&wf);
    let t1 = h.mul(&wf);
    match gate_kind(&t0, &t1) {
        GateKind::Product => {
            // Phases on the ambiguous line times a single on the free one;
            // the phase pair matters if the line converts later.
            if let Some(phi) = crate::mat::proportionality_phase(&k, &h) {
                let v = ba.as_matrix();
                let d = v
                    .mul(&Mat2::from_rows([crate::mat::ONE, ZERO], [ZERO, phi]))
                    .mul(&v.dagger());
                if let Role::Ambiguous { steps, .. } = &mut cls.roles[ea.line] {
                    steps.push(AmbStep::Diag(d));
                }
            }
            cls.roles[ef.line] = Role::Free { w: t0 };
        }
        GateKind::Ordinary => {
            cls.roles[ef.line] = Role::Target {
                local_prefix: wf,
                actions: vec![TargetAction {
                    control: ea.line,
                    branch0: k,
                    branch1: h,
                }],
            };
            if has_witness(&cls.line_steps(ef.line), ea.line) {
                cls.roles[ea.line] = Role::Control {
                    basis: ba,
                    targets: vec![ef.line],
                };
            }
        }
        GateKind::Phase => {
            let Some(bo) = common_eig_basis(&t0, &t1) else {
                return false;
            };
            cls.roles[ef.line] = Role::Ambiguous {
                basis: bo,
                steps: vec![AmbStep::Link {
                    partner: ea.line,
                    d0: t0,
                    d1: t1,
                }],
                pinned: false,
            };
            // The composed gate is diagonal in both bases; mirror it on
            // the ambiguous line.
            let (a0, a1) = mirror_branches(&ba, &t0, &t1, &bo);
            if let Role::Ambiguous { steps, .. } = &mut cls.roles[ea.line] {
                steps.push(AmbStep::Link {
                    partner: ef.line,
                    d0: a0,
                    d1: a1,
                });
            }
        }
    }
    cls.push_cu(ea.line, ef.line, ba, k, h, None, None);
    true
}

fn amb_free_via_free(cls: &mut Classification, ea: End, ef: End, m: &Mat4) -> bool {
    let ba = *cls.roles[ea.line].basis().unwrap();
    let wf = match &cls.roles[ef.line] {
        Role::Free { w } => *w,
        _ => unreachable!(),
    };
    let m_undone = m.mul(&embed_on(ef, &wf));
    let Some((be, e, f)) = as_controlled_any(&m_undone, ef.slot) else {
        return false;
    };
    let amb_stays = is_diagonal_in(&e, &ba) && is_diagonal_in(&f, &ba);
    if !amb_stays && !cls.is_convertible(ea.line) {
        return false;
    }
    if amb_stays {
        if let Role::Ambiguous { steps, .. } = &mut cls.roles[ea.line] {
            steps.push(AmbStep::Link {
                partner: ef.line,
                d0: e,
                d1: f,
            });
        }
        // The free line becomes basis-pinned and carries the mirrored
        // phases of this gate in case it converts later.
        let (m0, m1) = mirror_branches(&be, &e, &f, &ba);
        cls.roles[ef.line] = Role::Ambiguous {
            basis: be,
            steps: vec![AmbStep::Link {
                partner: ea.line,
                d0: m0,
                d1: m1,
            }],
            pinned: false,
        };
    } else {
        cls.convert_amb_to_target(
            ea.line,
            TargetAction {
                control: ef.line,
                branch0: e,
                branch1: f,
            },
        );
        if has_witness(&cls.line_steps(ea.line), ef.line) {
            cls.roles[ef.line] = Role::Control {
                basis: be,
                targets: vec![ea.line],
            };
        } else {
            cls.roles[ef.line] = Role::Ambiguous {
                basis: be,
                steps: Vec::new(),
                pinned: false,
            };
        }
    }
    cls.push_cu(ef.line, ea.line, be, e, f, Some(wf.dagger()), None);
    true
}

/// Target x ambiguous: either the promotion reading (control on the
/// former target after undoing its reference action) or the primary form
/// (controlled on the ambiguous line in its basis), tried with the
/// gate's first line first.
fn target_amb(
    cls: &mut Classification,
    idx: usize,
    et: End,
    ea: End,
    m: &Mat4,
    target_first: bool,
) -> Result<(), Rejection> {
    let routes: [bool; 2] = if target_first {
        [true, false]
    } else {
        [false, true]
    };
    for promote in routes {
        let admitted = if promote {
            try_promote_target_control(cls, et, ea, m)
        } else {
            target_amb_via_amb(cls, et, ea, m)
        };
        if admitted {
            return Ok(());
        }
    }
    Err(reject(
        idx,
        RejectRule::ConditionFailed { condition: 3 },
        "no common diagonalizer on the target line, and the gate is not controlled on the ambiguous line in its basis",
    ))
}

fn target_amb_via_amb(cls: &mut Classification, et: End, ea: End, m: &Mat4) -> bool {
    let ba = *cls.roles[ea.line].basis().unwrap();
    let Some((e, f)) = as_controlled_on(m, ea.slot, &ba) else {
        return false;
    };
    if let Role::Target { actions, .. } = &mut cls.roles[et.line] {
        actions.push(TargetAction {
            control: ea.line,
            branch0: e,
            branch1: f,
        });
    }
    if has_witness(&cls.line_steps(et.line), ea.line) {
        cls.roles[ea.line] = Role::Control {
            basis: ba,
            targets: vec![et.line],
        };
    }
    cls.push_cu(ea.line, et.line, ba, e, f, None, None);
    true
}

/// Target x free: either the promotion reading (control on the former
/// target) or control on the free line in any basis, tried with the
/// gate's first line first.
fn target_free(
    cls: &mut Classification,
    idx: usize,
    et: End,
    ef: End,
    m: &Mat4,
    target_first: bool,
) -> Result<(), Rejection> {
    let routes: [bool; 2] = if target_first {
        [true, false]
    } else {
        [false, true]
    };
    for promote in routes {
        let admitted = if promote {
            try_promote_target_control(cls, et, ef, m)
        } else {
            target_free_via_free(cls, et, ef, m)
        };
        if admitted {
            return Ok(());
        }
    }
    Err(reject(
        idx,
        RejectRule::ConditionFailed { condition: 2 },
        "no common diagonalizer on the target line, and the gate is not controlled on the free line",
    ))
}

fn target_free_via_free(cls: &mut Classification, et: End, ef: End, m: &Mat4) -> bool {
    let wf = match &cls.roles[ef.line] {
        Role::Free { w } => *w,
        _ => unreachable!(),
    };
    let m_undone = m.mul(&embed_on(ef, &wf));
    let Some((be, e, f)) = as_controlled_any(&m_undone, ef.slot) else {
        return false;
    };
    if let Role::Target { actions, .. } = &mut cls.roles[et.line] {
        actions.push(TargetAction {
            control: ef.line,
            branch0: e,
            branch1: f,
        });
    }
    if has_witness(&cls.line_steps(et.line), ef.line) {
        cls.roles[ef.line] = Role::Control {
            basis: be,
            targets: vec![et.line],
        };
    } else {
        cls.roles[ef.line] = Role::Ambiguous {
            basis: be,
            steps: Vec::new(),
            pinned: false,
        };
    }
    cls.push_cu(ef.line, et.line, be, e, f, Some(wf.dagger()), None);
    true
}

/// Shared promotion mechanism for gates that put a former target in
/// charge: if the residuals `W_{x0}† W_x` of the target line have a
/// common diagonalizer basis, and the gate right-multiplied by the
/// reference action is controlled on the target line in that basis, the
/// line promotes to control/ambiguous. The residual phases stay in the
/// ledger behind the `W_{x0}†` undo, so the promoted line is pinned: its
/// remaining history is not expressible as links.
fn try_promote_target_control(cls: &mut Classification, et: End, other: End, m: &Mat4) -> bool {
    let steps = cls.line_steps(et.line);
    let (cd, w0) = common_diagonalizer(&steps);
    let m_undone = m.mul(&embed_on(et, &w0));
    let found = match cd {
        CommonDiag::Overflow | CommonDiag::NoCommon => None,
        CommonDiag::Basis(basis) => {
            as_controlled_on(&m_undone, et.slot, &basis).map(|(k, h)| (basis, k, h))
        }
        CommonDiag::Any => as_controlled_any(&m_undone, et.slot),
    };
    let Some((basis, k, h)) = found else {
        return false;
    };

    let other_amb_diag = match &cls.roles[other.line] {
        Role::Ambiguous { basis: bo, .. } => {
            if is_diagonal_in(&k, bo) && is_diagonal_in(&h, bo) {
                Some(*bo)
            } else if !cls.is_convertible(other.line) {
                return false;
            } else {
                None
            }
        }
        Role::Free { .. } => None,
        _ => return false,
    };

    cls.untarget(et.line);
    if let Some(_bo) = other_amb_diag {
        // Fully diagonal across both lines: both stay/become ambiguous.
        if let Role::Ambiguous { steps, .. } = &mut cls.roles[other.line] {
            steps.push(AmbStep::Link {
                partner: et.line,
                d0: k,
                d1: h,
            });
        }
        cls.roles[et.line] = Role::Ambiguous {
            basis,
            steps: Vec::new(),
            pinned: true,
        };
        cls.push_cu(et.line, other.line, basis, k, h, Some(w0.dagger()), None);
        return true;
    }

    // The other side takes the branch pair as a fresh action.
    match &cls.roles[other.line] {
        Role::Free { w } => {
            let prefix = *w;
            cls.roles[other.line] = Role::Target {
                local_prefix: prefix,
                actions: vec![TargetAction {
                    control: et.line,
                    branch0: k,
                    branch1: h,
                }],
            };
        }
        Role::Ambiguous { .. } => {
            cls.convert_amb_to_target(
                other.line,
                TargetAction {
                    control: et.line,
                    branch0: k,
                    branch1: h,
                },
            );
        }
        _ => unreachable!(),
    }
    if has_witness(&cls.line_steps(other.line), et.line) {
        cls.roles[et.line] = Role::Control {
            basis,
            targets: vec![other.line],
        };
    } else {
        cls.roles[et.line] = Role::Ambiguous {
            basis,
            steps: Vec::new(),
            pinned: true,
        };
    }
    cls.push_cu(et.line, other.line, basis, k, h, Some(w0.dagger()), None);
    true
}

/// Target x target: the common-diagonalizer promotion on either side,
/// tried in gate order.
fn target_target(
    cls: &mut Classification,
    idx: usize,
    ei: End,
    ej: End,
    m: &Mat4,
) -> Result<(), Rejection> {
    for (ec, eo) in [(ei, ej), (ej, ei)] {
        let steps = cls.line_steps(ec.line);
        let (cd, w0) = common_diagonalizer(&steps);
        let m_undone = m.mul(&embed_on(ec, &w0));
        let found = match cd {
            CommonDiag::Overflow | CommonDiag::NoCommon => None,
            CommonDiag::Basis(basis) => {
                as_controlled_on(&m_undone, ec.slot, &basis).map(|(k, h)| (basis, k, h))
            }
            CommonDiag::Any => as_controlled_any(&m_undone, ec.slot),
        };
        let Some((basis, k, h)) = found else {
            continue;
        };
        cls.untarget(ec.line);
        if let Role::Target { actions, .. } = &mut cls.roles[eo.line] {
            actions.push(TargetAction {
                control: ec.line,
                branch0: k,
                branch1: h,
            });
        }
        if has_witness(&cls.line_steps(eo.line), ec.line) {
            cls.roles[ec.line] = Role::Control {
                basis,
                targets: vec![eo.line],
            };
        } else {
            cls.roles[ec.line] = Role::Ambiguous {
                basis,
                steps: Vec::new(),
                pinned: true,
            };
        }
        cls.push_cu(ec.line, eo.line, basis, k, h, Some(w0.dagger()), None);
        return Ok(());
    }
    Err(reject(
        idx,
        RejectRule::ConditionFailed { condition: 1 },
        "neither target line's recorded actions admit a common diagonalizer matching the gate",
    ))
}

// ---------------------------------------------------------------------------
// Witness search (spec invariant hook) and rejection rechecking
// ---------------------------------------------------------------------------

/// Find a witness for a control line: a target and an assignment of the
/// other controllers under which the two branch actions do not commute.
pub fn find_control_witness(
    cls: &Classification,
    line: usize,
) -> Option<(usize, Vec<(usize, bool)>)> {
    let Role::Control { targets, .. } = &cls.roles[line] else {
        return None;
    };
    for &t in targets {
        let steps = cls.line_steps(t);
        let mut others = steps_controllers(&steps);
        others.retain(|&l| l != line);
        let assigns = enumerate_assignments(&others)?;
        for a in &assigns {
            let with = |bit: bool| {
                let mut assign = a.clone();
                assign.push((line, bit));
                let u = steps_action(&steps, &bit_lookup(&assign));
                u
            };
            if commutator_norm(&with(false), &with(true)) > TOL_COMMUTE {
                return Some((t, a.clone()));
            }
        }
    }
    None
}

impl Rejection {
    /// Re-evaluate the cited rule against the pre-rejection state: the
    /// same gate must fail the same way (classify_step is deterministic
    /// and side-effect free on rejection).
    pub fn holds_against(&self, state_before: &Classification, gate: &Gate) -> bool {
        let mut clone = state_before.clone();
        match classify_step(&mut clone, self.gate_index, gate) {
            Err(r) => r.rule == self.rule,
            Ok(()) => false,
        }
    }
}

// ---------------------------------------------------------------------------
// retarget_diagonal
// ---------------------------------------------------------------------------

/// Move the control of a multi-controlled diagonal structure onto `line`:
/// an equivalent classification in which `line` is a control and a chosen
/// former partner is the target.
///
/// Applies to an ambiguous line (whose recorded cross gates are diagonal
/// by construction) or to a target line whose recorded actions all share a
/// diagonalizing basis; anything else is `NotDiagonal`.
pub fn retarget_diagonal(cls: &Classification, line: usize) -> Result<Classification, Error> {
    let mut out = cls.clone();
    match &cls.roles[line] {
        Role::Ambiguous { basis, steps, .. } => {
            let partners: Vec<usize> = steps
                .iter()
                .filter_map(|s| match s {
                    AmbStep::Link { partner, .. } => Some(*partner),
                    _ => None,
                })
                .collect();
            let Some(&chosen) = partners.first() else {
                return Err(Error::NotDiagonal);
            };
            let basis = *basis;
            // Rewrite every ledger gate between `line` and `chosen` as
            // controlled on `line`.
            for op in out.admitted.iter_mut() {
                if let AdmittedOp::Cu {
                    control,
                    target,
                    basis: cb,
                    branch0,
                    branch1,
                    pre_control,
                    pre_target,
                } = op
                {
                    if *control == chosen
                        && *target == line
                        && pre_control.is_none()
                        && pre_target.is_none()
                    {
                        let (a0, a1) = mirror_branches(cb, branch0, branch1, &basis);
                        *op = AdmittedOp::Cu {
                            control: line,
                            target: chosen,
                            basis,
                            branch0: a0,
                            branch1: a1,
                            pre_control: None,
                            pre_target: None,
                        };
                    }
                }
            }
            // Roles: line becomes the control; the chosen partner becomes
            // its target. The partner's links (including those back at
            // `line`, which are exactly the mirrored rewritten gates)
            // become branch actions. Mirror pinning must run while the
            // partner is still ambiguous.
            let chosen_steps = match &out.roles[chosen] {
                Role::Ambiguous { steps, .. } => steps.clone(),
                _ => Vec::new(),
            };
            out.pin_mirrors_of(chosen);
            let (prefix, actions) = Classification::amb_steps_to_target(&chosen_steps);
            out.roles[chosen] = Role::Target {
                local_prefix: prefix,
                actions,
            };
            out.roles[line] = Role::Control {
                basis,
                targets: vec![chosen],
            };
            Ok(out)
        }
        Role::Target {
            local_prefix,
            actions,
        } => {
            // All branch matrices (and the prefix) must share a
            // diagonalizing basis.
            let mut mats: Vec<Mat2> = vec![*local_prefix];
            for a in actions {
                mats.push(a.branch0);
                mats.push(a.branch1);
            }
            let mut basis = None;
            for m in &mats {
                if scalar_part(m).is_none() {
                    let (p, q) = eig2(m).map_err(|_| Error::NotDiagonal)?;
                    basis = Some(QubitBasis {
                        v0: p.vector,
                        v1: q.vector,
                    });
                    break;
                }
            }
            let basis = basis.ok_or(Error::NotDiagonal)?;
            if !mats.iter().all(|m| is_diagonal_in(m, &basis)) {
                return Err(Error::NotDiagonal);
            }
            // Choose the first controller whose only target is this line.
            let controllers = steps_controllers(&cls.line_steps(line));
            let chosen = controllers
                .iter()
                .copied()
                .find(|&c| match &cls.roles[c] {
                    Role::Control { targets, .. } => targets == &vec![line],
                    Role::Ambiguous { .. } => true,
                    _ => false,
                })
                .ok_or(Error::NotDiagonal)?;
            let cb = *cls.roles[chosen].basis().ok_or(Error::NotDiagonal)?;
            for op in out.admitted.iter_mut() {
                if let AdmittedOp::Cu {
                    control,
                    target,
                    basis: gate_basis,
                    branch0,
                    branch1,
                    pre_control,
                    pre_target,
                } = op
                {
                    if *control == chosen
                        && *target == line
                        && pre_control.is_none()
                        && pre_target.is_none()
                    {
                        let (a0, a1) = mirror_branches(gate_basis, branch0, branch1, &basis);
                        *op = AdmittedOp::Cu {
                            control: line,
                            target: chosen,
                            basis,
                            branch0: a0,
                            branch1: a1,
                            pre_control: None,
                            pre_target: None,
                        };
                    }
                }
            }
            // Role swap: `line` controls; `chosen` becomes a target whose
            // actions are the mirrored diagonals of the rewritten gates.
            let mut chosen_actions = Vec::new();
            for a in actions.iter().filter(|a| a.control == chosen) {
                let (a0, a1) = mirror_branches(&cb, &a.branch0, &a.branch1, &basis);
                chosen_actions.push(TargetAction {
                    control: line,
                    branch0: a0,
                    branch1: a1,
                });
            }
            if chosen_actions.is_empty() {
                return Err(Error::NotDiagonal);
            }
            // Actions of other controllers stay in the ledger as pure
            // phases on `line`; the role ledger drops them because a
            // control line no longer samples from actions.
            out.roles[line] = Role::Control {
                basis,
                targets: vec![chosen],
            };
            out.roles[chosen] = Role::Target {
                local_prefix: Mat2::IDENTITY,
                actions: chosen_actions,
            };
            Ok(out)
        }
        _ => Err(Error::NotDiagonal),
    }
}

// ---------------------------------------------------------------------------
// Admissible circuit generation
// ---------------------------------------------------------------------------

fn uniform_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn pick(rng: &mut impl RngCore, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

fn random_phase_diag(rng: &mut impl RngCore) -> Mat2 {
    let a = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * uniform_f64(rng));
    let b = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * uniform_f64(rng));
    Mat2::from_rows([a, ZERO], [ZERO, b])
}

fn random_diag_in(basis: &QubitBasis, rng: &mut impl RngCore) -> Mat2 {
    let v = basis.as_matrix();
    v.mul(&random_phase_diag(rng)).mul(&v.dagger())
}

fn random_commuting_pair(rng: &mut impl RngCore) -> (QubitBasis, Mat2, Mat2) {
    let basis = QubitBasis::from_v0(haar_state2(rng));
    (
        basis,
        random_diag_in(&basis, rng),
        random_diag_in(&basis, rng),
    )
}

/// Forward-sample an admissible circuit: each step picks a random line or
/// pair and a gate template allowed by the current roles, verifying
/// admission as it goes. Deterministic per seed.
pub fn generate_product_control_circuit(n: usize, depth: usize, seed: u64) -> Circuit {
    assert!(n >= 2, "need at least two lines");
    assert!(depth >= 1, "need at least one gate");
    let mut rng = crate::rng::stream_rng(seed, u64::MAX);
    let mut cls = Classification::new(n);
    let mut gates: Vec<Gate> = Vec::new();

    while gates.len() < depth {
        let gate = propose_gate(&cls, &mut rng);
        let Some(gate) = gate else { continue };
        let mut probe = cls.clone();
        if classify_step(&mut probe, gates.len(), &gate).is_ok() {
            cls = probe;
            gates.push(gate);
        }
    }
    Circuit { n, gates }
}

fn propose_gate(cls: &Classification, rng: &mut impl RngCore) -> Option<Gate> {
    let n = cls.n;
    // Roughly one single-qubit gate in four.
    if rng.next_u64() % 4 == 0 {
        let q = pick(rng, n);
        let u = match &cls.roles[q] {
            Role::Free { .. } | Role::Target { .. } => haar_mat2(rng),
            Role::Control { basis, .. } => random_diag_in(basis, rng),
            Role::Ambiguous { basis, pinned, .. } => {
                if *pinned || rng.next_u64() % 2 == 0 {
                    random_diag_in(basis, rng)
                } else {
                    haar_mat2(rng)
                }
            }
        };
        return Some(Gate::Single { q, u });
    }

    let i = pick(rng, n);
    let mut j = pick(rng, n - 1);
    if j >= i {
        j += 1;
    }
    let emit = |g: BasisControlledGate, i: usize, j: usize, rng: &mut dyn RngCore| -> Gate {
        // Mix the wire forms so both schema variants are exercised.
        if g.control_slot == ControlSlot::First && rng.next_u64() % 2 == 0 {
            Gate::TwoDecomposed { i, j, g }
        } else {
            Gate::Two {
                i,
                j,
                m: g.to_matrix(),
            }
        }
    };

    let role_i = &cls.roles[i];
    let role_j = &cls.roles[j];
    let gate = match (tag_of(role_i), tag_of(role_j)) {
        (Tag::Free, Tag::Free) => {
            let (wi, wj) = match (role_i, role_j) {
                (Role::Free { w: a }, Role::Free { w: b }) => (*a, *b),
                _ => unreachable!(),
            };
            let kind = rng.next_u64() % 3;
            let g = if kind == 0 {
                BasisControlledGate::new(
                    ControlSlot::First,
                    QubitBasis::from_v0(haar_state2(rng)),
                    haar_mat2(rng),
                    haar_mat2(rng),
                )
            } else {
                let (_, d0, d1) = random_commuting_pair(rng);
                let cb = QubitBasis::from_v0(haar_state2(rng));
                BasisControlledGate::new(ControlSlot::First, cb, d0, d1)
            };
            // Undo the accumulated singles so the composed prefix is a
            // clean basis-controlled gate.
            let m = g.to_matrix().mul(&wi.dagger().kron(&wj.dagger()));
            Gate::Two { i, j, m }
        }
        (Tag::Control, _) => {
            let basis = *role_i.basis().unwrap();
            let branches = control_branches_for(cls, j, rng);
            let (b0, b1) = branches?;
            emit(
                BasisControlledGate::new(ControlSlot::First, basis, b0, b1),
                i,
                j,
                rng,
            )
        }
        (_, Tag::Control) => {
            let basis = *role_j.basis().unwrap();
            let (b0, b1) = control_branches_for(cls, i, rng)?;
            emit(
                BasisControlledGate::new(ControlSlot::First, basis, b0, b1),
                j,
                i,
                rng,
            )
        }
        (Tag::Ambiguous, _) => {
            let basis = *role_i.basis().unwrap();
            let (b0, b1) = control_branches_for(cls, j, rng)?;
            emit(
                BasisControlledGate::new(ControlSlot::First, basis, b0, b1),
                i,
                j,
                rng,
            )
        }
        (_, Tag::Ambiguous) => {
            let basis = *role_j.basis().unwrap();
            let (b0, b1) = control_branches_for(cls, i, rng)?;
            emit(
                BasisControlledGate::new(ControlSlot::First, basis, b0, b1),
                j,
                i,
                rng,
            )
        }
        (Tag::Target, Tag::Free) => {
            // Control on the free line, any basis, undoing its single.
            let wf = match role_j {
                Role::Free { w } => *w,
                _ => unreachable!(),
            };
            let g = BasisControlledGate::new(
                ControlSlot::First,
                QubitBasis::from_v0(haar_state2(rng)),
                haar_mat2(rng),
                haar_mat2(rng),
            );
            // Gate listed as (j, i): control slot first = line j, and the
            // undo of the free line's single sits on that same slot.
            let m = g.to_matrix().mul(&wf.dagger().kron(&Mat2::IDENTITY));
            Gate::Two { i: j, j: i, m }
        }
        (Tag::Free, Tag::Target) => {
            let wf = match role_i {
                Role::Free { w } => *w,
                _ => unreachable!(),
            };
            let g = BasisControlledGate::new(
                ControlSlot::First,
                QubitBasis::from_v0(haar_state2(rng)),
                haar_mat2(rng),
                haar_mat2(rng),
            );
            let m = g.to_matrix().mul(&wf.dagger().kron(&Mat2::IDENTITY));
            Gate::Two { i, j, m }
        }
        (Tag::Target, Tag::Target) => return None,
    };
    Some(gate)
}

/// Branch pair admissible when the named line is the target side.
fn control_branches_for(
    cls: &Classification,
    target: usize,
    rng: &mut impl RngCore,
) -> Option<(Mat2, Mat2)> {
    match &cls.roles[target] {
        Role::Free { .. } | Role::Target { .. } => Some((haar_mat2(rng), haar_mat2(rng))),
        Role::Ambiguous { basis, pinned, .. } => {
            if *pinned || rng.next_u64() % 2 == 0 {
                Some((random_diag_in(basis, rng), random_diag_in(basis, rng)))
            } else {
                Some((haar_mat2(rng), haar_mat2(rng)))
            }
        }
        Role::Control { basis, .. } => {
            Some((random_diag_in(basis, rng), random_diag_in(basis, rng)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::haar_mat4;
    use crate::mat::{Vec2, ONE};
    use crate::oracle::verify_eigenvector;
    use crate::sampler::{eigenphase, eigenvector_for_labels};
    use crate::testutil::test_rng;

    fn x() -> Mat2 {
        Mat2::from_rows([ZERO, ONE], [ONE, ZERO])
    }

    fn z() -> Mat2 {
        Mat2::from_rows([ONE, ZERO], [ZERO, -ONE])
    }

    fn cnot4() -> Mat4 {
        let mut m = [[ZERO; 4]; 4];
        m[0][0] = ONE;
        m[1][1] = ONE;
        m[2][3] = ONE;
        m[3][2] = ONE;
        Mat4(m)
    }

    fn cz4() -> Mat4 {
        let mut m = Mat4::identity();
        m.0[3][3] = -ONE;
        m
    }

    fn two(i: usize, j: usize, m: Mat4) -> Gate {
        Gate::Two { i, j, m }
    }

    /// Soundness: every label string of an accepted circuit yields a
    /// genuine eigenvector whose oracle phase matches the sampler's.
    fn assert_sound(c: &Circuit, cls: &Classification) {
        let full = c.build_full_unitary(8).unwrap();
        let replay = cls.replay_unitary(8).unwrap();
        let dist = replay.frobenius_distance(&full);
        assert!(dist <= 1e-8, "replay distance {dist}");
        let count = 1usize << c.n.min(6);
        for mask in 0..count {
            let labels: Vec<bool> = (0..c.n).map(|q| mask >> q & 1 == 1).collect();
            let v = eigenvector_for_labels(cls, &labels).unwrap();
            let lam_s = eigenphase(cls, &v).unwrap();
            let lam_o = verify_eigenvector(&full, &v)
                .unwrap_or_else(|| panic!("labels {labels:?}: not an eigenvector"));
            assert!(
                (lam_s - lam_o).norm() <= 1e-7,
                "phase mismatch at {labels:?}: {lam_s} vs {lam_o}"
            );
        }
    }

    #[test]
    fn cnot_then_cz_then_reversed_cnot() {
        // CNOT admits (both lines basis-pinned: branches I and X commute,
        // so no non-commuting witness exists yet), CZ admits, and the
        // reversed CNOT breaks the product structure: the composed 4x4 has
        // an entangled nondegenerate eigenvector.
        let c = Circuit::new(
            2,
            vec![two(0, 1, cnot4()), two(0, 1, cz4()), two(1, 0, cnot4())],
        )
        .unwrap();
        let rej = classify_circuit(&c).unwrap_err();
        assert_eq!(rej.gate_index, 2);

        let prefix = Circuit::new(2, vec![two(0, 1, cnot4()), two(0, 1, cz4())]).unwrap();
        let cls = classify_circuit(&prefix).unwrap();
        assert_sound(&prefix, &cls);
        // Ground truth for the rejected composition.
        let full = c.build_full_unitary(4).unwrap();
        assert!(decompose_4x4(&full.to_mat4()).unwrap().is_none());
    }

    #[test]
    fn fanout_cnots_admit() {
        let c = Circuit::new(
            4,
            vec![two(0, 1, cnot4()), two(0, 2, cnot4()), two(0, 3, cnot4())],
        )
        .unwrap();
        let cls = classify_circuit(&c).unwrap();
        assert_sound(&c, &cls);
    }

    #[test]
    fn cnot_chain_is_admissible_with_valid_eigenbasis() {
        // CNOT(0,1); CNOT(1,2): reading the second gate as controlled on
        // line 2 in the ± basis keeps everything product. The dense
        // eigencheck below confirms every sampled vector.
        let c = Circuit::new(3, vec![two(0, 1, cnot4()), two(1, 2, cnot4())]).unwrap();
        let cls = classify_circuit(&c).unwrap();
        assert_sound(&c, &cls);
    }

    #[test]
    fn empty_circuit_is_all_free() {
        let c = Circuit::new(4, vec![]).unwrap();
        let cls = classify_circuit(&c).unwrap();
        assert!(cls.roles.iter().all(|r| matches!(r, Role::Free { .. })));
    }

    #[test]
    fn haar_two_gate_agreement() {
        // classify accepts a 2-gate Haar circuit iff the composed matrix
        // decomposes (almost always both fail for Haar gates).
        let mut rng = test_rng(61);
        for _ in 0..100 {
            let m1 = haar_mat4(&mut rng);
            let m2 = haar_mat4(&mut rng);
            let c = Circuit::new(2, vec![two(0, 1, m1), two(0, 1, m2)]).unwrap();
            let accepted = classify_circuit(&c).is_ok();
            let composed = c.build_full_unitary(4).unwrap().to_mat4();
            let decomposable = decompose_4x4(&m1).unwrap().is_some()
                && decompose_4x4(&composed).unwrap().is_some();
            assert_eq!(accepted, decomposable);
        }
    }

    #[test]
    fn structured_two_gate_agreement() {
        // Structured pairs where the first gate admits: acceptance must
        // track decomposability of the composed matrix exactly.
        let mut rng = test_rng(62);
        let mut accepted_count = 0;
        for k in 0..300 {
            let g1 = BasisControlledGate::new(
                ControlSlot::First,
                QubitBasis::from_v0(haar_state2(&mut rng)),
                haar_mat2(&mut rng),
                haar_mat2(&mut rng),
            );
            // Mix: sometimes a second basis-controlled gate (random slot),
            // sometimes Haar.
            let m2 = match k % 3 {
                0 => haar_mat4(&mut rng),
                1 => BasisControlledGate::new(
                    ControlSlot::Second,
                    QubitBasis::from_v0(haar_state2(&mut rng)),
                    haar_mat2(&mut rng),
                    haar_mat2(&mut rng),
                )
                .to_matrix(),
                _ => BasisControlledGate::new(
                    ControlSlot::First,
                    g1.control_basis,
                    haar_mat2(&mut rng),
                    haar_mat2(&mut rng),
                )
                .to_matrix(),
            };
            let c = Circuit::new(2, vec![two(0, 1, g1.to_matrix()), two(0, 1, m2)]).unwrap();
            let accepted = classify_circuit(&c).is_ok();
            let composed = c.build_full_unitary(4).unwrap().to_mat4();
            let decomposable = decompose_4x4(&composed).unwrap().is_some();
            assert_eq!(accepted, decomposable, "case {k}");
            if accepted {
                accepted_count += 1;
                let cls = classify_circuit(&c).unwrap();
                assert_sound(&c, &cls);
            }
        }
        assert!(
            accepted_count >= 90,
            "want plenty of accepted cases, got {accepted_count}"
        );
    }

    #[test]
    fn generation_is_deterministic_and_accepted() {
        let a = generate_product_control_circuit(3, 5, 7);
        let b = generate_product_control_circuit(3, 5, 7);
        assert_eq!(a, b);
        for seed in 0..8 {
            let c = generate_product_control_circuit(4, 10, seed);
            assert_eq!(c.gates.len(), 10);
            let cls = classify_circuit(&c).unwrap();
            assert_sound(&c, &cls);
        }
    }

    #[test]
    fn rejection_honesty() {
        let mut rng = test_rng(63);
        let mut checked = 0;
        for _ in 0..60 {
            let c = generate_product_control_circuit(3, 4, rng.next_u64());
            let cls = classify_circuit(&c).unwrap();
            // Try to append a Haar gate; if rejected, the cited rule must
            // re-fail against the stored state.
            let m = haar_mat4(&mut rng);
            let gate = two(0, 1, m);
            let mut probe = cls.clone();
            if let Err(rej) = classify_step(&mut probe, c.gates.len(), &gate) {
                assert!(rej.holds_against(&cls, &gate));
                checked += 1;
            }
        }
        assert!(checked > 30, "want plenty of rejections, got {checked}");
    }

    #[test]
    fn retarget_cz_is_symmetric() {
        let c = Circuit::new(2, vec![two(0, 1, cz4())]).unwrap();
        let cls = classify_circuit(&c).unwrap();
        let before = cls.replay_unitary(4).unwrap();
        let re = retarget_diagonal(&cls, 1).unwrap();
        assert!(matches!(re.roles[1], Role::Control { .. }));
        assert!(matches!(re.roles[0], Role::Target { .. }));
        let after = re.replay_unitary(4).unwrap();
        assert!(before.frobenius_distance(&after) <= 1e-8);
    }

    #[test]
    fn retarget_diagonal_cu_matches() {
        let d = Mat2::from_rows([ONE, ZERO], [ZERO, C64::new(0.0, 1.0)]);
        let g = BasisControlledGate::new(
            ControlSlot::First,
            QubitBasis::COMPUTATIONAL,
            Mat2::IDENTITY,
            d,
        );
        let c = Circuit::new(2, vec![Gate::TwoDecomposed { i: 0, j: 1, g }]).unwrap();
        let cls = classify_circuit(&c).unwrap();
        let before = cls.replay_unitary(4).unwrap();
        let re = retarget_diagonal(&cls, 1).unwrap();
        let after = re.replay_unitary(4).unwrap();
        assert!(before.frobenius_distance(&after) <= 1e-8);
    }

    #[test]
    fn retarget_rejects_noncodiagonal_actions() {
        // An ordinary gate leaves the target with branch actions that do
        // not share a diagonalizing basis.
        let g = BasisControlledGate::new(ControlSlot::First, QubitBasis::COMPUTATIONAL, z(), x());
        let c = Circuit::new(2, vec![Gate::TwoDecomposed { i: 0, j: 1, g }]).unwrap();
        let cls = classify_circuit(&c).unwrap();
        assert!(matches!(cls.roles[1], Role::Target { .. }));
        assert!(matches!(
            retarget_diagonal(&cls, 1),
            Err(Error::NotDiagonal)
        ));
    }

    #[test]
    fn singles_on_all_roles() {
        let mut rng = test_rng(64);
        // Build a circuit with a control/target pair, then hit every line
        // with singles and check soundness.
        let g = BasisControlledGate::new(ControlSlot::First, QubitBasis::COMPUTATIONAL, z(), x());
        let mut gates = vec![Gate::TwoDecomposed { i: 0, j: 1, g }];
        // Diagonal single on the control line.
        gates.push(Gate::Single {
            q: 0,
            u: Mat2::from_rows([ONE, ZERO], [ZERO, C64::from_polar(1.0, 0.3)]),
        });
        // Arbitrary single on the target line.
        gates.push(Gate::Single {
            q: 1,
            u: haar_mat2(&mut rng),
        });
        // Anything on the free line.
        gates.push(Gate::Single {
            q: 2,
            u: haar_mat2(&mut rng),
        });
        let c = Circuit::new(3, gates).unwrap();
        let cls = classify_circuit(&c).unwrap();
        assert_sound(&c, &cls);

        // A non-diagonal single on a control line is rejected.
        let mut gates = vec![Gate::TwoDecomposed {
            i: 0,
            j: 1,
            g: BasisControlledGate::new(ControlSlot::First, QubitBasis::COMPUTATIONAL, z(), x()),
        }];
        gates.push(Gate::Single {
            q: 0,
            u: Mat2::from_rows([C64::new(0.0, 0.0), ONE], [ONE, C64::new(0.0, 0.0)]),
        });
        let c = Circuit::new(2, gates).unwrap();
        let rej = classify_circuit(&c).unwrap_err();
        assert_eq!(rej.gate_index, 1);
        assert_eq!(rej.rule, RejectRule::SingleNotDiagonal { line: 0 });
    }

    #[test]
    fn target_promotes_to_control_when_residuals_share_a_basis() {
        // CNOT(0,1) then H on 1 leaves line 1 a target whose residual
        // actions are co-diagonal in the ± basis. A gate on (1, 2) built
        // as a ±-controlled unitary times the reference-action undo is
        // admitted by promoting line 1.
        let mut rng = test_rng(71);
        let s = 1.0 / 2.0_f64.sqrt();
        let h = Mat2::from_rows(
            [C64::new(s, 0.0), C64::new(s, 0.0)],
            [C64::new(s, 0.0), C64::new(-s, 0.0)],
        );
        let plus_basis = QubitBasis::from_v0(Vec2::new(C64::new(s, 0.0), C64::new(s, 0.0)));
        let mut gates = vec![two(0, 1, cnot4()), Gate::Single { q: 1, u: h }];
        // Reference action on line 1 for the all-zero control string.
        let w0 = h; // branch0 of (0 -> 1) is I, composed with the single
        let cu = BasisControlledGate::new(
            ControlSlot::First,
            plus_basis,
            haar_mat2(&mut rng),
            haar_mat2(&mut rng),
        );
        let m = cu.to_matrix().mul(&w0.dagger().kron(&Mat2::IDENTITY));
        gates.push(two(1, 2, m));
        let c = Circuit::new(3, gates).unwrap();
        let cls = classify_circuit(&c).unwrap();
        assert!(
            cls.roles[1].basis().is_some(),
            "line 1 should be basis-pinned"
        );
        assert!(matches!(cls.roles[2], Role::Target { .. }));
        assert_sound(&c, &cls);

        // The promoted line only takes singles diagonal in its basis: Z is
        // not diagonal in ±, so it must be rejected (the line's residual
        // history is not re-readable).
        let mut extended = c.gates.clone();
        extended.push(Gate::Single { q: 1, u: z() });
        let c2 = Circuit::new(3, extended).unwrap();
        let rej = classify_circuit(&c2).expect_err("Z is not diagonal in the promoted basis");
        assert_eq!(rej.gate_index, 3);
        assert_eq!(rej.rule, RejectRule::SingleNotDiagonal { line: 1 });
    }

    #[test]
    fn exclusive_pair_rewrites_control_onto_target() {
        // An ordinary gate pins (0 control, 1 target). A follow-up gate
        // equal to a target-controlled unitary times the inverse of the
        // first gate re-reads the pair with line 1 in charge.
        let mut rng = test_rng(72);
        let g1 = BasisControlledGate::new(
            ControlSlot::First,
            QubitBasis::COMPUTATIONAL,
            haar_mat2(&mut rng),
            haar_mat2(&mut rng),
        );
        let target_side = BasisControlledGate::new(
            ControlSlot::Second,
            QubitBasis::from_v0(crate::testutil::haar_state2(&mut rng)),
            haar_mat2(&mut rng),
            haar_mat2(&mut rng),
        );
        let m1 = g1.to_matrix();
        let m2 = target_side.to_matrix().mul(&m1.dagger());
        let c = Circuit::new(2, vec![two(0, 1, m1), two(0, 1, m2)]).unwrap();
        let cls = classify_circuit(&c).unwrap();
        assert!(matches!(cls.roles[1], Role::Control { .. }));
        assert!(matches!(cls.roles[0], Role::Target { .. }));
        assert_sound(&c, &cls);
    }

    #[test]
    fn hadamard_after_cnot_flips_reading() {
        // (H⊗I)·CNOT has a product eigenbasis controlled on the second
        // qubit; an ambiguous first line must convert rather than reject.
        let h = {
            let s = 1.0 / 2.0_f64.sqrt();
            Mat2::from_rows(
                [C64::new(s, 0.0), C64::new(s, 0.0)],
                [C64::new(s, 0.0), C64::new(-s, 0.0)],
            )
        };
        let c = Circuit::new(2, vec![two(0, 1, cnot4()), Gate::Single { q: 0, u: h }]).unwrap();
        let cls = classify_circuit(&c).unwrap();
        assert_sound(&c, &cls);
    }
}
