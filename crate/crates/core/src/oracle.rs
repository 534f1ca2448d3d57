//! Exact desk-scale ground truth.
//!
//! Everything here is deliberately small: dense diagonalization up to a
//! configurable qubit cap, exhaustive enumeration of nonzero-weight
//! worldline configurations up to a state cap, the explicit transition
//! matrix of the worm chain assembled from the same candidate kernel the
//! sampler runs, and spectral/stationarity checks. These are the reference
//! values every statistical claim is tested against.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::chain::{apply_move, candidate_set, Chain, Junction};
use crate::hamiltonian::{OpKind, XYHamiltonian};
use crate::worldline::{Geometry, SegmentId, StateKey, WorldlineConfig};
use crate::{Error, Result};

/// Default cap on the dense-oracle qubit count (2^10 x 2^10 matrices).
pub const DEFAULT_QUBIT_CAP: u32 = 10;
/// Default cap on enumerated configuration counts.
pub const DEFAULT_STATE_CAP: u64 = 1_000_000;
/// Largest space the dense spectral-gap path will densify.
pub const DENSE_GAP_CAP: usize = 1024;

/// Dense H = Σ_{i<j}(−a XX + b YY) + Σ_i d Z in the computational basis
/// (qubit 0 is the least significant bit).
pub fn dense_hamiltonian(h: &XYHamiltonian) -> DMatrix<f64> {
    let dim = 1usize << h.n;
    let mut m = DMatrix::zeros(dim, dim);
    let d = h.field_table();
    for s in 0..dim {
        let mut diag = 0.0;
        for (q, dq) in d.iter().enumerate() {
            let bit = (s >> q) & 1;
            diag += dq * if bit == 0 { 1.0 } else { -1.0 };
        }
        m[(s, s)] = diag;
        for t in &h.pairs {
            let flipped = s ^ (1 << t.i) ^ (1 << t.j);
            let parity = ((s >> t.i) & 1) ^ ((s >> t.j) & 1);
            // <flipped|(-a XX + b YY)|s> = -a - b(-1)^{b_i + b_j}
            let sign = if parity == 0 { 1.0 } else { -1.0 };
            m[(flipped, s)] += -t.a - t.b * sign;
        }
    }
    m
}

fn check_qubit_cap(n: u32, cap: u32) -> Result<()> {
    if n > cap {
        Err(Error::QubitCap { n, cap })
    } else {
        Ok(())
    }
}

/// Z = Tr[e^{−βH}] by symmetric eigendecomposition.
pub fn exact_z(h: &XYHamiltonian, beta: f64, qubit_cap: u32) -> Result<f64> {
    check_qubit_cap(h.n, qubit_cap)?;
    h.ensure_valid()?;
    let m = dense_hamiltonian(h);
    debug_assert!(
        (&m - m.transpose()).amax() <= 1e-12,
        "dense Hamiltonian must be symmetric"
    );
    let eig = m.symmetric_eigen();
    Ok(eig.eigenvalues.iter().map(|l| (-beta * l).exp()).sum())
}

/// Left-multiply `m` by one Trotter factor in O(dim²).
fn apply_factor(kind: &OpKind, delta: f64, m: &mut DMatrix<f64>) {
    let dim = m.nrows();
    match *kind {
        OpKind::OneQubit { i, d } => {
            for s in 0..dim {
                let scale = if (s >> i) & 1 == 0 {
                    1.0 - delta * d
                } else {
                    1.0 + delta * d
                };
                for c in 0..dim {
                    m[(s, c)] *= scale;
                }
            }
        }
        OpKind::TwoQubit { i, j, a, b } => {
            let mask = (1usize << i) | (1usize << j);
            for s in 0..dim {
                let f = s ^ mask;
                if f < s {
                    continue; // handle each row pair once
                }
                let parity = ((s >> i) & 1) ^ ((s >> j) & 1);
                let off = if parity == 0 {
                    delta * (a + b)
                } else {
                    delta * (a - b)
                };
                for c in 0..dim {
                    let (rs, rf) = (m[(s, c)], m[(f, c)]);
                    m[(s, c)] = rs + off * rf;
                    m[(f, c)] = rf + off * rs;
                }
            }
        }
    }
}

/// The dense half-step factor C = Π pair factors · Π field factors, in the
/// same fixed order the schedule builder emits.
pub fn dense_half_step(h: &XYHamiltonian, delta: f64) -> DMatrix<f64> {
    let dim = 1usize << h.n;
    let mut c = DMatrix::identity(dim, dim);
    let mut pairs = h.pairs.clone();
    pairs.sort_by_key(|t| (t.i, t.j));
    let d = h.field_table();
    // C = F_1 F_2 ... F_K applied to I from the right means multiplying
    // factors in reverse emission order on the left
    for i in (0..h.n).rev() {
        apply_factor(
            &OpKind::OneQubit {
                i,
                d: d[i as usize],
            },
            delta,
            &mut c,
        );
    }
    for t in pairs.iter().rev() {
        apply_factor(
            &OpKind::TwoQubit {
                i: t.i,
                j: t.j,
                a: t.a,
                b: t.b,
            },
            delta,
            &mut c,
        );
    }
    c
}

/// Z̃(β, H) = the trace of the full scheduled operator product, i.e. the
/// half-step factor raised to the 2L-th power. Matches the sampler's
/// flattened sequence exactly, so enumeration sums reproduce it to
/// round-off.
pub fn exact_trotterized_z(h: &XYHamiltonian, beta: f64, l: u32, qubit_cap: u32) -> Result<f64> {
    check_qubit_cap(h.n, qubit_cap)?;
    h.ensure_valid()?;
    if !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta must be nonnegative, got {beta}"
        )));
    }
    let delta = beta / (2.0 * l as f64);
    let c = dense_half_step(h, delta);
    Ok(matrix_power(&c, 2 * l as u64).trace())
}

/// Dense matrix power by binary exponentiation.
pub fn matrix_power(m: &DMatrix<f64>, mut e: u64) -> DMatrix<f64> {
    let mut result = DMatrix::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}

/// The complete list of nonzero-weight configurations of a schedule, with
/// weights and the stationary law π (two-head states re-weighted by
/// 2/(M1 + 2M2)).
pub struct EnumeratedSpace {
    geom: Arc<Geometry>,
    states: Vec<StateKey>,
    index: HashMap<StateKey, usize>,
    weights: Vec<f64>,
    pi: Vec<f64>,
    c0_weight_sum: f64,
    c2_weight_sum: f64,
}

impl EnumeratedSpace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn geometry(&self) -> &Arc<Geometry> {
        &self.geom
    }

    pub fn states(&self) -> &[StateKey] {
        &self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Stationary probabilities, summing to 1.
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn index_of(&self, key: &StateKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn config(&self, i: usize) -> WorldlineConfig {
        WorldlineConfig::from_state_key(Arc::clone(&self.geom), &self.states[i])
    }

    pub fn is_c0(&self, i: usize) -> bool {
        self.states[i].heads.is_none()
    }

    /// Σ_{C0} W, which must reproduce the dense Trotterized trace.
    pub fn c0_weight_sum(&self) -> f64 {
        self.c0_weight_sum
    }

    pub fn c2_weight_sum(&self) -> f64 {
        self.c2_weight_sum
    }

    /// Exact sector mass ratio (Σ_{C2} π)/(Σ_{C0} π).
    pub fn sector_mass_ratio(&self) -> f64 {
        let s = self.geom.schedule();
        let reweight = 2.0 / (s.m1 as f64 + 2.0 * s.m2 as f64);
        reweight * self.c2_weight_sum / self.c0_weight_sum
    }

    /// Index of the all-zeros closed configuration.
    pub fn canonical_initial_index(&self) -> usize {
        let cfg = WorldlineConfig::canonical_initial(Arc::clone(&self.geom));
        self.index_of(&cfg.state_key())
            .expect("all-zeros configuration has positive weight")
    }
}

/// Exhaustive depth-first generation of nonzero-weight configurations for
/// one head assignment. `cur[q]` walks each qubit's bit through imaginary
/// time, flipping when it crosses a head segment; the walk closes only if
/// the final bits match the initial guess.
struct Enumerator<'a> {
    geom: &'a Geometry,
    head_flag: Vec<bool>,
    heads: Option<(SegmentId, SegmentId)>,
    bits: Vec<u8>,
    cur: Vec<u8>,
    init: Vec<u8>,
    count: u64,
    cap: u64,
}

impl<'a> Enumerator<'a> {
    fn run(&mut self, visit: &mut impl FnMut(StateKey, f64)) -> Result<()> {
        let n = self.geom.schedule().n;
        for guess in 0..(1u32 << n) {
            for q in 0..n {
                let bit = ((guess >> q) & 1) as u8;
                self.cur[q as usize] = bit;
                self.init[q as usize] = bit;
            }
            self.dfs(0, 1.0, visit)?;
        }
        Ok(())
    }

    fn dfs(&mut self, m: usize, weight: f64, visit: &mut impl FnMut(StateKey, f64)) -> Result<()> {
        let sched = self.geom.schedule();
        if m == sched.ops.len() {
            if self.cur == self.init {
                self.count += 1;
                if self.count > self.cap {
                    return Err(Error::EnumerationCap {
                        estimate: self.count as f64,
                        cap: self.cap,
                    });
                }
                visit(
                    StateKey {
                        bits: self.bits.clone().into_boxed_slice(),
                        heads: self.heads,
                    },
                    weight,
                );
            }
            return Ok(());
        }

        let op = sched.ops[m];
        let delta = sched.delta;
        let arity = op.arity();
        let (q0, q1) = op.qubits();
        let bra = match q1 {
            None => self.cur[q0 as usize],
            Some(q1) => self.cur[q0 as usize] | (self.cur[q1 as usize] << 1),
        };
        // candidate kets: the diagonal, and for pair operators the double flip
        let kets: [Option<u8>; 2] = match arity {
            1 => [Some(bra), None],
            _ => [Some(bra), Some(bra ^ 0b11)],
        };
        for ket in kets.into_iter().flatten() {
            let e = op.element(delta, bra, ket);
            if e == 0.0 {
                continue;
            }
            self.bits[m] = bra | (ket << arity);
            let saved0 = self.cur[q0 as usize];
            let saved1 = q1.map(|q| self.cur[q as usize]);
            // advance each acted qubit across the segment below this operator
            let ket0 = ket & 1;
            let seg0 = self
                .geom
                .leg_segment(self.geom.leg_id(m as u32, arity as u8));
            self.cur[q0 as usize] = ket0 ^ self.head_flag[seg0.0 as usize] as u8;
            if let Some(q1) = q1 {
                let ket1 = (ket >> 1) & 1;
                let seg1 = self
                    .geom
                    .leg_segment(self.geom.leg_id(m as u32, arity as u8 + 1));
                self.cur[q1 as usize] = ket1 ^ self.head_flag[seg1.0 as usize] as u8;
            }
            self.dfs(m + 1, weight * e, visit)?;
            self.cur[q0 as usize] = saved0;
            if let (Some(q1), Some(s)) = (q1, saved1) {
                self.cur[q1 as usize] = s;
            }
        }
        self.bits[m] = 0;
        Ok(())
    }
}

/// Enumerate every nonzero-weight configuration (closed sector plus all
/// two-head placements) of a schedule.
///
/// A cheap upper estimate (closed-sector count × head-pair count) is checked
/// against the cap before the full sweep; the sweep itself re-checks as it
/// counts.
pub fn enumerate_space(geom: &Arc<Geometry>, cap: u64) -> Result<EnumeratedSpace> {
    let sched = geom.schedule();
    let segs = geom.segment_count() as u64;
    let seg_pairs = segs * (segs - 1) / 2;

    let mut scratch = Enumerator {
        geom,
        head_flag: vec![false; segs as usize],
        heads: None,
        bits: vec![0; sched.ops.len()],
        cur: vec![0; sched.n as usize],
        init: vec![0; sched.n as usize],
        count: 0,
        cap,
    };
    let mut c0_count = 0u64;
    scratch.run(&mut |_, _| c0_count += 1)?;
    let estimate = c0_count as f64 * (1.0 + seg_pairs as f64);
    if estimate > cap as f64 {
        return Err(Error::EnumerationCap { estimate, cap });
    }

    let mut states = Vec::new();
    let mut weights = Vec::new();
    let mut visit = |key: StateKey, w: f64| {
        states.push(key);
        weights.push(w);
    };

    let mut en = Enumerator {
        geom,
        head_flag: vec![false; segs as usize],
        heads: None,
        bits: vec![0; sched.ops.len()],
        cur: vec![0; sched.n as usize],
        init: vec![0; sched.n as usize],
        count: 0,
        cap,
    };
    en.run(&mut visit)?;
    for s1 in 0..segs as u32 {
        for s2 in (s1 + 1)..segs as u32 {
            en.heads = Some((SegmentId(s1), SegmentId(s2)));
            en.head_flag[s1 as usize] = true;
            en.head_flag[s2 as usize] = true;
            en.run(&mut visit)?;
            en.head_flag[s1 as usize] = false;
            en.head_flag[s2 as usize] = false;
        }
    }

    let reweight = 2.0 / (sched.m1 as f64 + 2.0 * sched.m2 as f64);
    let mut c0_weight_sum = 0.0;
    let mut c2_weight_sum = 0.0;
    let mut pi = Vec::with_capacity(states.len());
    for (key, w) in states.iter().zip(&weights) {
        if key.heads.is_none() {
            c0_weight_sum += w;
            pi.push(*w);
        } else {
            c2_weight_sum += w;
            pi.push(w * reweight);
        }
    }
    let w_total: f64 = pi.iter().sum();
    for p in &mut pi {
        *p /= w_total;
    }

    let mut index = HashMap::with_capacity(states.len());
    for (i, key) in states.iter().enumerate() {
        let prev = index.insert(key.clone(), i);
        debug_assert!(prev.is_none(), "enumeration produced a duplicate state");
    }

    Ok(EnumeratedSpace {
        geom: Arc::clone(geom),
        states,
        index,
        weights,
        pi,
        c0_weight_sum,
        c2_weight_sum,
    })
}

/// Sparse row-stochastic transition matrix over an enumerated space.
pub struct TransitionMatrix {
    rows: Vec<Vec<(u32, f64)>>,
}

impl TransitionMatrix {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self.rows[i].binary_search_by_key(&(j as u32), |&(c, _)| c) {
            Ok(pos) => self.rows[i][pos].1,
            Err(_) => 0.0,
        }
    }

    /// Largest |row sum − 1|.
    pub fn row_sum_residual(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// p ↦ pP (distribution pushed one step forward).
    pub fn multiply_left(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (i, row) in self.rows.iter().enumerate() {
            let pi = p[i];
            if pi == 0.0 {
                continue;
            }
            for &(j, prob) in row {
                out[j as usize] += pi * prob;
            }
        }
        out
    }

    /// ‖πP − π‖∞.
    pub fn stationarity_residual(&self, pi: &[f64]) -> f64 {
        self.multiply_left(pi)
            .iter()
            .zip(pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// max over edges of |π_i P_ij − π_j P_ji| / max(flows), the relative
    /// detailed-balance defect.
    pub fn detailed_balance_residual(&self, pi: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                let j = j as usize;
                if j < i {
                    continue; // each unordered pair once
                }
                let fwd = pi[i] * p;
                let bwd = pi[j] * self.entry(j, i);
                let scale = fwd.max(bwd);
                if scale > 0.0 {
                    worst = worst.max((fwd - bwd).abs() / scale);
                }
            }
        }
        worst
    }

    /// Communicating classes of the underlying (reversible) chain graph.
    pub fn communicating_classes(&self) -> Vec<Vec<usize>> {
        let n = self.dim();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                if p > 0.0 && j as usize != i {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j as usize));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut classes: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            classes.entry(root).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = classes.into_values().collect();
        out.sort_by_key(|c| c[0]);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                m[(i, j as usize)] = p;
            }
        }
        m
    }

    /// Build a matrix directly from dense rows (tests, toy chains).
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut rows = rows;
        for row in &mut rows {
            row.sort_by_key(|&(c, _)| c);
        }
        Self { rows }
    }
}

/// Assemble the exact transition matrix of the worm chain over an
/// enumerated space: junction-selection probability × heat-bath probability
/// per candidate, plus the lazy hold on the diagonal. Uses the sampler's own
/// candidate kernel.
pub fn build_transition_matrix(space: &EnumeratedSpace, laziness: f64) -> TransitionMatrix {
    let geom = space.geometry();
    let act = 1.0 - laziness;
    let junctions = geom.leg_count();
    let mut rows = Vec::with_capacity(space.len());

    for z in 0..space.len() {
        let cfg = space.config(z);
        let mut entries: Vec<(u32, f64)> = vec![(z as u32, laziness)];
        let push_moves = |entry_global: u32, select_prob: f64, entries: &mut Vec<(u32, f64)>| {
            let junction = Junction::at(geom, entry_global);
            let (op, entry_leg) = (junction.op, junction.entry_leg);
            let cs = candidate_set(&cfg, junction);
            for g in 0..cs.leg_count {
                let w = cs.weights[g as usize];
                if w == 0.0 {
                    continue;
                }
                let target = if g == entry_leg {
                    z
                } else {
                    let mut next = cfg.clone();
                    apply_move(&mut next, op, entry_leg, g);
                    space
                        .index_of(&next.state_key())
                        .expect("moves stay inside the nonzero-weight space")
                };
                entries.push((target as u32, act * select_prob * w / cs.total));
            }
        };

        if space.is_c0(z) {
            let sel = 1.0 / junctions as f64;
            for j in 0..junctions {
                push_moves(j, sel, &mut entries);
            }
        } else {
            for t in 0..4u8 {
                let entry = Chain::head_junction(&cfg, t);
                push_moves(entry, 0.25, &mut entries);
            }
        }

        entries.sort_by_key(|&(c, _)| c);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (c, p) in entries {
            match merged.last_mut() {
                Some((lc, lp)) if *lc == c => *lp += p,
                _ => merged.push((c, p)),
            }
        }
        rows.push(merged);
    }
    TransitionMatrix { rows }
}

/// Spectral-gap outcome: a gap for irreducible chains, or the communicating
/// classes when the chain is reducible.
#[derive(Debug, Clone)]
pub enum SpectralOutcome {
    Gap(f64),
    Reducible(Vec<Vec<usize>>),
}

/// 1 − λ₂ of the similarity-symmetrized transition matrix.
///
/// Reversibility w.r.t. π is a precondition and is verified first; a
/// reducible chain gets its class decomposition reported instead of a gap.
pub fn spectral_gap(p: &TransitionMatrix, pi: &[f64]) -> Result<SpectralOutcome> {
    let db = p.detailed_balance_residual(pi);
    if db > 1e-9 {
        return Err(Error::NotReversible(format!(
            "detailed-balance defect {db:.3e} exceeds 1e-9"
        )));
    }
    let classes = p.communicating_classes();
    if classes.len() > 1 {
        return Ok(SpectralOutcome::Reducible(classes));
    }
    let n = p.dim();
    if n > DENSE_GAP_CAP {
        return Err(Error::InvalidParameter(format!(
            "space of {n} states exceeds the dense spectral-gap cap {DENSE_GAP_CAP}"
        )));
    }
    // S = D^{1/2} P D^{-1/2} is symmetric under reversibility
    let mut s = DMatrix::zeros(n, n);
    for (i, row) in (0..n).map(|i| (i, p.row(i))) {
        for &(j, prob) in row {
            let j = j as usize;
            s[(i, j)] = (pi[i] / pi[j]).sqrt() * prob;
        }
    }
    let s = (&s + s.transpose()) / 2.0; // fold residual asymmetry
    let mut eigs: Vec<f64> = s.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    debug_assert!((eigs[0] - 1.0).abs() < 1e-8, "leading eigenvalue must be 1");
    Ok(SpectralOutcome::Gap(1.0 - eigs[1]))
}
