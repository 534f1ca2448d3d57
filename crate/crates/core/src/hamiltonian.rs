//! Stoquastic XY Hamiltonians and their Trotterized operator schedules.
//!
//! The Hamiltonian family is
//!
//!   H = Σ_{i<j} (−a_ij X_iX_j + b_ij Y_iY_j) + Σ_i d_i Z_i
//!
//! with |b_ij| ≤ a_ij ≤ 1/2 and |d_i| ≤ 1. Under those constraints every
//! factor of the Trotter product
//!
//!   C = Π_{i<j} (I + δ(a_ij X_iX_j − b_ij Y_iY_j)) · Π_i (I − δ d_i Z_i)
//!
//! has nonnegative matrix elements in the computational basis, so the
//! worldline weights downstream are nonnegative (no sign problem). A
//! schedule is the flattened operator sequence of 2L half-steps with step
//! width δ = β/2L; the trace of the full product approximates Z = Tr[e^{−βH}]
//! within a multiplicative e^{±ε/4} once L = O(n²β²ε⁻¹).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Two-qubit coupling term: −a·X_iX_j + b·Y_iY_j on qubits i < j.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTerm {
    pub i: u32,
    pub j: u32,
    pub a: f64,
    pub b: f64,
}

/// Single-qubit field term: d·Z_i.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldTerm {
    pub i: u32,
    pub d: f64,
}

/// A stoquastic XY Hamiltonian: coefficient tables plus the qubit count.
///
/// Serialization matches the on-disk input document
/// `{n, pairs: [{i, j, a, b}], fields: [{i, d}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XYHamiltonian {
    /// Number of qubits.
    pub n: u32,
    /// Two-qubit coupling terms, at most one per unordered pair.
    #[serde(default)]
    pub pairs: Vec<PairTerm>,
    /// Single-qubit field terms, at most one per qubit.
    #[serde(default)]
    pub fields: Vec<FieldTerm>,
}

/// Outcome of [`XYHamiltonian::validate`]: hard constraint violations and
/// soft warnings (degenerate but legal parameter choices).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl XYHamiltonian {
    /// Check every coefficient constraint.
    ///
    /// Violations are hard errors; a warning (not an error) is emitted when
    /// c_min = min_{ij}(a_ij − b_ij, a_ij + b_ij) = 0, where the chain's
    /// mixing guarantee degenerates because one off-diagonal element class
    /// vanishes.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let viol = &mut report.violations;

        if self.n == 0 {
            viol.push("qubit count n must be positive".into());
        }
        let mut seen_pairs = std::collections::HashSet::new();
        for t in &self.pairs {
            let name = format!("pair ({}, {})", t.i, t.j);
            if !(t.a.is_finite() && t.b.is_finite()) {
                viol.push(format!("{name}: non-finite coefficient"));
                continue;
            }
            if t.i >= t.j {
                viol.push(format!("{name}: requires i < j"));
            }
            if t.j >= self.n {
                viol.push(format!("{name}: qubit index out of range [0, {})", self.n));
            }
            if t.b.abs() > t.a {
                viol.push(format!("{name}: |b| > a (|{}| > {})", t.b, t.a));
            }
            if t.a > 0.5 {
                viol.push(format!("{name}: a > 1/2 ({})", t.a));
            }
            if !seen_pairs.insert((t.i.min(t.j), t.i.max(t.j))) {
                viol.push(format!("{name}: duplicate pair term"));
            }
        }
        let mut seen_fields = std::collections::HashSet::new();
        for t in &self.fields {
            let name = format!("field ({})", t.i);
            if !t.d.is_finite() {
                viol.push(format!("{name}: non-finite coefficient"));
                continue;
            }
            if t.i >= self.n {
                viol.push(format!("{name}: qubit index out of range [0, {})", self.n));
            }
            if t.d.abs() > 1.0 {
                viol.push(format!("{name}: |d| > 1 ({})", t.d));
            }
            if !seen_fields.insert(t.i) {
                viol.push(format!("{name}: duplicate field term"));
            }
        }
        if report.is_ok() {
            if let Some(c) = self.c_min() {
                if c == 0.0 {
                    report.warnings.push(
                        "c_min = min(a - b, a + b) = 0: one off-diagonal element class \
                         vanishes and the mixing-time guarantee degenerates"
                            .into(),
                    );
                }
            }
        }
        report
    }

    /// Err with the full violation list when the Hamiltonian is invalid.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidHamiltonian(report.violations.join("; ")))
        }
    }

    /// min_{ij}(a_ij − b_ij, a_ij + b_ij), the smallest off-diagonal element
    /// scale; `None` when there are no pair terms.
    pub fn c_min(&self) -> Option<f64> {
        self.pairs
            .iter()
            .map(|t| (t.a - t.b).min(t.a + t.b))
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))))
    }

    /// Triangle-inequality operator-norm bound Σ_{i<j}(a+|b|) + Σ_i |d|;
    /// sets the β-grid spacing of the telescoping estimator.
    pub fn operator_norm_bound(&self) -> f64 {
        let pairs: f64 = self.pairs.iter().map(|t| t.a + t.b.abs()).sum();
        let fields: f64 = self.fields.iter().map(|t| t.d.abs()).sum();
        pairs + fields
    }

    /// True when some pair term has a nonzero off-diagonal element
    /// (a + |b| > 0), i.e. worldlines can host two-qubit flip events.
    pub fn has_offdiagonal_pairs(&self) -> bool {
        self.pairs.iter().any(|t| t.a + t.b.abs() > 0.0)
    }

    /// Per-qubit field coefficients with 0 for qubits without a field term.
    pub fn field_table(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n as usize];
        for t in &self.fields {
            d[t.i as usize] = t.d;
        }
        d
    }
}

/// Pick the Trotter number L = ceil(c_L · n² · β² / ε), clamped to ≥ 1.
///
/// The asymptotic order is all the theory pins down; c_L is a knob
/// (default [`DEFAULT_C_L`]) whose adequacy is checked empirically against
/// the exact oracle.
pub fn choose_trotter_number(h: &XYHamiltonian, beta: f64, eps: f64, c_l: f64) -> Result<u32> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "trotter error budget eps must be positive, got {eps}"
        )));
    }
    if !(c_l > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "trotter constant c_L must be positive, got {c_l}"
        )));
    }
    let n = h.n as f64;
    let l = (c_l * n * n * beta * beta / eps).ceil();
    Ok((l as u32).max(1))
}

/// Default Trotter constant c_L.
pub const DEFAULT_C_L: f64 = 4.0;

/// Which factor of the Trotter product an operator is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OpKind {
    /// I + δ(a X_iX_j − b Y_iY_j) acting on qubits i < j.
    TwoQubit { i: u32, j: u32, a: f64, b: f64 },
    /// I − δ d Z_i acting on one qubit.
    OneQubit { i: u32, d: f64 },
}

/// One factor of the flattened operator sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorDescriptor {
    pub kind: OpKind,
}

impl OperatorDescriptor {
    /// Number of qubits the operator acts on (1 or 2).
    pub fn arity(&self) -> usize {
        match self.kind {
            OpKind::TwoQubit { .. } => 2,
            OpKind::OneQubit { .. } => 1,
        }
    }

    /// Number of worldline legs (2 per acted qubit).
    pub fn leg_count(&self) -> usize {
        2 * self.arity()
    }

    /// Acted qubits in ascending order.
    pub fn qubits(&self) -> (u32, Option<u32>) {
        match self.kind {
            OpKind::TwoQubit { i, j, .. } => (i, Some(j)),
            OpKind::OneQubit { i, .. } => (i, None),
        }
    }

    /// ⟨bra|O|ket⟩ with bra/ket packed as bit masks, bit 0 = the
    /// lower-indexed acted qubit.
    ///
    /// Two-qubit: diagonal entries are 1, ⟨00|O|11⟩ = ⟨11|O|00⟩ = δ(a+b),
    /// ⟨01|O|10⟩ = ⟨10|O|01⟩ = δ(a−b), parity-violating entries vanish.
    /// One-qubit: ⟨0|O|0⟩ = 1 − δd, ⟨1|O|1⟩ = 1 + δd, off-diagonal 0.
    #[inline]
    pub fn element(&self, delta: f64, bra: u8, ket: u8) -> f64 {
        match self.kind {
            OpKind::TwoQubit { a, b, .. } => {
                if bra == ket {
                    1.0
                } else if bra ^ ket == 0b11 {
                    // both qubits flip: 00<->11 carries a+b, 01<->10 carries a-b
                    if bra == 0b00 || bra == 0b11 {
                        delta * (a + b)
                    } else {
                        delta * (a - b)
                    }
                } else {
                    0.0
                }
            }
            OpKind::OneQubit { d, .. } => {
                if bra != ket {
                    0.0
                } else if bra == 0 {
                    1.0 - delta * d
                } else {
                    1.0 + delta * d
                }
            }
        }
    }

    /// [`Self::element`] on a packed leg mask: bra bits in the low `arity`
    /// positions, ket bits above them.
    #[inline]
    pub fn element_mask(&self, delta: f64, mask: u8) -> f64 {
        let arity = self.arity() as u8;
        let bra = mask & ((1 << arity) - 1);
        let ket = mask >> arity;
        self.element(delta, bra, ket)
    }
}

/// ⟨in|O|out⟩ with the bits given one per acted qubit, lowest-indexed first.
pub fn matrix_element(op: &OperatorDescriptor, delta: f64, in_bits: &[u8], out_bits: &[u8]) -> f64 {
    assert_eq!(in_bits.len(), op.arity(), "in_bits sized to operator arity");
    assert_eq!(
        out_bits.len(),
        op.arity(),
        "out_bits sized to operator arity"
    );
    let pack = |bits: &[u8]| bits.iter().rev().fold(0u8, |m, &b| (m << 1) | (b & 1));
    op.element(delta, pack(in_bits), pack(out_bits))
}

/// The flattened Trotter sequence: 2L half-steps, each all pair factors in
/// lexicographic (i, j) order then all single-qubit factors in ascending i.
///
/// Every qubit emits a single-qubit factor in every half-step even when its
/// field coefficient is zero, so every worldline is cut into at least 2L
/// segments and worm heads are everywhere well-defined. Immutable once built;
/// safe to share across chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSchedule {
    pub n: u32,
    pub ops: Vec<OperatorDescriptor>,
    /// Trotter number L.
    pub l: u32,
    pub beta: f64,
    /// Step width δ = β/2L, exactly.
    pub delta: f64,
    /// One-qubit operator count, 2·L·n.
    pub m1: u32,
    /// Two-qubit operator count, 2·L·P.
    pub m2: u32,
}

impl OperatorSchedule {
    /// Total operator count M = M1 + M2.
    pub fn m(&self) -> u32 {
        self.m1 + self.m2
    }

    /// Leg-junction count 4·M2 + 2·M1, the denominator of the worm-insertion
    /// move.
    pub fn junction_count(&self) -> u32 {
        4 * self.m2 + 2 * self.m1
    }

    /// The same sequence re-weighted to a different inverse temperature
    /// (identical operator pattern and L, new δ).
    pub fn at_beta(&self, beta: f64) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must be nonnegative, got {beta}"
            )));
        }
        let mut s = self.clone();
        s.beta = beta;
        s.delta = beta / (2.0 * self.l as f64);
        Ok(s)
    }
}

/// Build the operator schedule for a validated Hamiltonian.
///
/// β = 0 is permitted (δ = 0, every factor acts as the identity); it anchors
/// the telescoping product.
pub fn build_schedule(h: &XYHamiltonian, beta: f64, l: u32) -> Result<OperatorSchedule> {
    h.ensure_valid()?;
    if !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta must be nonnegative, got {beta}"
        )));
    }
    if l == 0 {
        return Err(Error::InvalidParameter(
            "Trotter number L must be >= 1".into(),
        ));
    }

    let mut pairs = h.pairs.clone();
    pairs.sort_by_key(|t| (t.i, t.j));
    let d = h.field_table();

    let mut half_step = Vec::with_capacity(pairs.len() + h.n as usize);
    for t in &pairs {
        half_step.push(OperatorDescriptor {
            kind: OpKind::TwoQubit {
                i: t.i,
                j: t.j,
                a: t.a,
                b: t.b,
            },
        });
    }
    for i in 0..h.n {
        half_step.push(OperatorDescriptor {
            kind: OpKind::OneQubit {
                i,
                d: d[i as usize],
            },
        });
    }

    let reps = 2 * l as usize;
    let mut ops = Vec::with_capacity(reps * half_step.len());
    for _ in 0..reps {
        ops.extend_from_slice(&half_step);
    }

    Ok(OperatorSchedule {
        n: h.n,
        ops,
        l,
        beta,
        delta: beta / (2.0 * l as f64),
        m1: 2 * l * h.n,
        m2: 2 * l * pairs.len() as u32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pair_h(a: f64, b: f64) -> XYHamiltonian {
        XYHamiltonian {
            n: 2,
            pairs: vec![PairTerm { i: 0, j: 1, a, b }],
            fields: vec![],
        }
    }

    #[test]
    fn validate_accepts_legal_coefficients() {
        assert!(pair_h(0.5, 0.25).validate().is_ok());
    }

    #[test]
    fn validate_rejects_b_larger_than_a() {
        let report = pair_h(0.3, 0.4).validate();
        assert!(!report.is_ok());
        assert!(report.violations[0].contains("|b| > a"));
    }

    #[test]
    fn validate_rejects_field_above_one() {
        let h = XYHamiltonian {
            n: 1,
            pairs: vec![],
            fields: vec![FieldTerm { i: 0, d: 1.5 }],
        };
        let report = h.validate();
        assert!(!report.is_ok());
        assert!(report.violations[0].contains("|d| > 1"));
    }

    #[test]
    fn validate_warns_on_degenerate_c_min() {
        let report = pair_h(0.5, 0.5).validate();
        assert!(report.is_ok());
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(pair_h(0.5, 0.5).c_min(), Some(0.0));
    }

    #[test]
    fn validate_rejects_duplicates_and_bad_indices() {
        let h = XYHamiltonian {
            n: 2,
            pairs: vec![
                PairTerm {
                    i: 0,
                    j: 1,
                    a: 0.1,
                    b: 0.0,
                },
                PairTerm {
                    i: 0,
                    j: 1,
                    a: 0.2,
                    b: 0.0,
                },
                PairTerm {
                    i: 1,
                    j: 1,
                    a: 0.1,
                    b: 0.0,
                },
            ],
            fields: vec![FieldTerm { i: 5, d: 0.0 }],
        };
        let report = h.validate();
        assert_eq!(report.violations.len(), 3);
    }

    #[test]
    fn trotter_number_examples() {
        let h2 = XYHamiltonian {
            n: 2,
            pairs: vec![],
            fields: vec![],
        };
        assert_eq!(choose_trotter_number(&h2, 1.0, 0.1, 1.0).unwrap(), 40);
        let h1 = XYHamiltonian {
            n: 1,
            pairs: vec![],
            fields: vec![],
        };
        assert_eq!(choose_trotter_number(&h1, 1.0, 4.0, 1.0).unwrap(), 1);
        let h3 = XYHamiltonian {
            n: 3,
            pairs: vec![],
            fields: vec![],
        };
        assert_eq!(choose_trotter_number(&h3, 2.0, 0.5, 4.0).unwrap(), 288);
        assert!(choose_trotter_number(&h3, 1.0, 0.0, 4.0).is_err());
    }

    #[test]
    fn schedule_counts_single_field() {
        let h = XYHamiltonian {
            n: 1,
            pairs: vec![],
            fields: vec![FieldTerm { i: 0, d: 0.5 }],
        };
        let s = build_schedule(&h, 1.0, 2).unwrap();
        assert_eq!((s.m1, s.m2, s.m()), (4, 0, 4));
        assert_eq!(s.delta, 0.25);
    }

    #[test]
    fn schedule_counts_pair_with_implicit_fields() {
        let s = build_schedule(&pair_h(0.5, 0.25), 1.0, 3).unwrap();
        assert_eq!((s.m2, s.m1, s.m()), (6, 12, 18));
        // zero-field single-qubit factors are emitted with identity weight
        assert!(s
            .ops
            .iter()
            .any(|o| matches!(o.kind, OpKind::OneQubit { d, .. } if d == 0.0)));
    }

    #[test]
    fn schedule_at_beta_zero_is_identity() {
        let s = build_schedule(&pair_h(0.5, 0.25), 0.0, 1).unwrap();
        assert_eq!(s.delta, 0.0);
        for op in &s.ops {
            for bra in 0..4u8 {
                for ket in 0..4u8 {
                    if (bra as usize) < 1 << op.arity() && (ket as usize) < 1 << op.arity() {
                        let e = op.element(s.delta, bra, ket);
                        assert_eq!(e, if bra == ket { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }

    #[test]
    fn matrix_element_examples() {
        let two = OperatorDescriptor {
            kind: OpKind::TwoQubit {
                i: 0,
                j: 1,
                a: 0.5,
                b: 0.25,
            },
        };
        assert_relative_eq!(matrix_element(&two, 0.1, &[0, 0], &[1, 1]), 0.075);
        assert_eq!(matrix_element(&two, 0.1, &[0, 0], &[0, 1]), 0.0);
        let one = OperatorDescriptor {
            kind: OpKind::OneQubit { i: 0, d: 0.3 },
        };
        assert_relative_eq!(matrix_element(&one, 0.1, &[1], &[1]), 1.03);
        assert_relative_eq!(matrix_element(&one, 0.1, &[0], &[0]), 0.97);
    }

    /// Entrywise reconstruction of the dense two-qubit factor from Kronecker
    /// products, the independent route to the matrix form.
    #[test]
    fn dense_reconstruction_matches_kronecker_form() {
        let (a, b, delta) = (0.41, -0.17, 0.23);
        let op = OperatorDescriptor {
            kind: OpKind::TwoQubit { i: 0, j: 1, a, b },
        };
        // I + delta*(a XX - b YY) with qubit i as the most significant bit;
        // YY is real: kron(Y,Y) = [[0,0,0,-1],[0,0,1,0],[0,1,0,0],[-1,0,0,0]]
        let xx = [
            [0., 0., 0., 1.],
            [0., 0., 1., 0.],
            [0., 1., 0., 0.],
            [1., 0., 0., 0.],
        ];
        let yy = [
            [0., 0., 0., -1.],
            [0., 0., 1., 0.],
            [0., 1., 0., 0.],
            [-1., 0., 0., 0.],
        ];
        for bi in 0..2u8 {
            for bj in 0..2u8 {
                for ki in 0..2u8 {
                    for kj in 0..2u8 {
                        let row = (2 * bi + bj) as usize;
                        let col = (2 * ki + kj) as usize;
                        let dense = (if row == col { 1.0 } else { 0.0 })
                            + delta * (a * xx[row][col] - b * yy[row][col]);
                        let got = op.element(delta, bi | (bj << 1), ki | (kj << 1));
                        assert_relative_eq!(got, dense, max_relative = 1e-15);
                    }
                }
            }
        }
        let (d, delta) = (0.73, 0.19);
        let op = OperatorDescriptor {
            kind: OpKind::OneQubit { i: 0, d },
        };
        assert_relative_eq!(op.element(delta, 0, 0), 1.0 - delta * d);
        assert_relative_eq!(op.element(delta, 1, 1), 1.0 + delta * d);
        assert_eq!(op.element(delta, 0, 1), 0.0);
    }

    proptest! {
        /// Symmetry and nonnegativity of all elements for validated
        /// coefficients and δ ≤ 1.
        #[test]
        fn elements_symmetric_and_nonnegative(
            a in 0.0..=0.5f64,
            t in -1.0..=1.0f64,
            d in -1.0..=1.0f64,
            delta in 0.0..=1.0f64,
        ) {
            let b = a * t; // |b| <= a by construction
            let two = OperatorDescriptor { kind: OpKind::TwoQubit { i: 0, j: 1, a, b } };
            for bra in 0..4u8 {
                for ket in 0..4u8 {
                    let e = two.element(delta, bra, ket);
                    prop_assert!(e >= 0.0);
                    prop_assert_eq!(e, two.element(delta, ket, bra));
                }
            }
            let one = OperatorDescriptor { kind: OpKind::OneQubit { i: 0, d } };
            for bra in 0..2u8 {
                for ket in 0..2u8 {
                    let e = one.element(delta, bra, ket);
                    prop_assert!(e >= 0.0);
                    prop_assert_eq!(e, one.element(delta, ket, bra));
                }
            }
        }

        /// M = 2L(n + P) for every schedule.
        #[test]
        fn operator_counts(n in 1u32..5, p_mask in 0u32..8, l in 1u32..4) {
            let mut pairs = vec![];
            let all: Vec<(u32, u32)> =
                (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
            for (k, (i, j)) in all.into_iter().enumerate() {
                if p_mask & (1 << k) != 0 {
                    pairs.push(PairTerm { i, j, a: 0.25, b: 0.1 });
                }
            }
            let p = pairs.len() as u32;
            let h = XYHamiltonian { n, pairs, fields: vec![] };
            let s = build_schedule(&h, 1.3, l).unwrap();
            prop_assert_eq!(s.m(), 2 * l * (n + p));
            prop_assert_eq!(s.m1, 2 * l * n);
            prop_assert_eq!(s.m2, 2 * l * p);
            prop_assert_eq!(s.m() as usize, s.ops.len());
        }
    }
}
