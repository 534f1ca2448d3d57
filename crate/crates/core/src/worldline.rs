//! Worldline configurations: bit assignments on operator legs with periodic
//! imaginary time, plus worm-head segments.
//!
//! A schedule's diagram has one column per qubit and one row per operator.
//! Each operator carries 2 legs per acted qubit: the bra (upper) legs face
//! the previous imaginary-time slice, the ket (lower) legs the next. A
//! *segment* is the interval of a qubit's worldline between two consecutive
//! operators acting on it, cyclic in imaginary time. A configuration stores
//! one bit per leg; a segment is consistent when its two bounding leg bits
//! agree, unless it hosts a worm head, in which case they differ (the head
//! is the flip point; its position inside the segment is an equivalence
//! class and is not stored).
//!
//! The weight of a configuration is the product over operators of the
//! single-operator matrix elements evaluated on that operator's leg bits;
//! worm heads contribute a factor 1.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::hamiltonian::{OpKind, OperatorSchedule};
use crate::{Error, Result};

/// Identity of one worldline interval: (qubit, upper_op → lower_op).
/// Indexes the geometry's segment tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentId(pub u32);

/// Which sector a configuration is in: no worm heads or two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sector {
    /// Closed worldlines, zero worm heads.
    C0,
    /// Two worm heads.
    C2,
}

/// Immutable adjacency tables for one operator schedule: leg numbering,
/// segment boundaries, and leg <-> segment maps. Built once per schedule so
/// a Markov step touches O(1) memory; shared read-only across chains.
#[derive(Debug)]
pub struct Geometry {
    schedule: OperatorSchedule,
    /// Prefix sums of per-operator leg counts; global leg id space.
    leg_offset: Vec<u32>,
    /// Global leg id -> operator index.
    leg_op: Vec<u32>,
    /// Global leg id -> adjacent segment (above for bra legs, below for ket).
    leg_segment: Vec<u32>,
    /// Segment -> its upper-end leg (a ket leg of the operator above).
    seg_upper_leg: Vec<u32>,
    /// Segment -> its lower-end leg (a bra leg of the operator below).
    seg_lower_leg: Vec<u32>,
    /// Segment -> qubit.
    seg_qubit: Vec<u32>,
    /// Per-qubit prefix offsets into the segment id space.
    qubit_seg_offset: Vec<u32>,
    /// Per-qubit, time-ordered operator indices (segment t of qubit q lies
    /// below ops_on_qubit[q][t]).
    ops_on_qubit: Vec<Vec<u32>>,
}

impl Geometry {
    /// Precompute adjacency for a schedule. Every qubit must be acted on by
    /// at least two operators (always true for built schedules, which emit
    /// 2L >= 2 single-qubit factors per qubit).
    pub fn new(schedule: OperatorSchedule) -> Result<Arc<Self>> {
        let m = schedule.ops.len();
        let n = schedule.n as usize;

        let mut leg_offset = Vec::with_capacity(m + 1);
        let mut acc = 0u32;
        for op in &schedule.ops {
            leg_offset.push(acc);
            acc += op.leg_count() as u32;
        }
        leg_offset.push(acc);
        let total_legs = acc as usize;

        let mut leg_op = vec![0u32; total_legs];
        for (mi, op) in schedule.ops.iter().enumerate() {
            for l in 0..op.leg_count() {
                leg_op[leg_offset[mi] as usize + l] = mi as u32;
            }
        }

        let mut ops_on_qubit: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (mi, op) in schedule.ops.iter().enumerate() {
            let (q0, q1) = op.qubits();
            ops_on_qubit[q0 as usize].push(mi as u32);
            if let Some(q1) = q1 {
                ops_on_qubit[q1 as usize].push(mi as u32);
            }
        }
        for (q, ops) in ops_on_qubit.iter().enumerate() {
            if ops.len() < 2 {
                return Err(Error::InvalidParameter(format!(
                    "qubit {q} is acted on by {} operator(s); need at least 2",
                    ops.len()
                )));
            }
        }

        let mut qubit_seg_offset = Vec::with_capacity(n + 1);
        let mut seg_acc = 0u32;
        for ops in &ops_on_qubit {
            qubit_seg_offset.push(seg_acc);
            seg_acc += ops.len() as u32;
        }
        qubit_seg_offset.push(seg_acc);
        let total_segs = seg_acc as usize;

        let bra_leg = |m: u32, q: u32| -> u32 {
            let op = &schedule.ops[m as usize];
            let slot = if op.qubits().0 == q { 0 } else { 1 };
            leg_offset[m as usize] + slot
        };
        let ket_leg = |m: u32, q: u32| -> u32 {
            let op = &schedule.ops[m as usize];
            let slot = if op.qubits().0 == q { 0 } else { 1 };
            leg_offset[m as usize] + op.arity() as u32 + slot
        };

        let mut leg_segment = vec![0u32; total_legs];
        let mut seg_upper_leg = vec![0u32; total_segs];
        let mut seg_lower_leg = vec![0u32; total_segs];
        let mut seg_qubit = vec![0u32; total_segs];

        for (q, ops) in ops_on_qubit.iter().enumerate() {
            let k = ops.len();
            for t in 0..k {
                let seg = qubit_seg_offset[q] + t as u32;
                let upper_op = ops[t];
                let lower_op = ops[(t + 1) % k];
                seg_qubit[seg as usize] = q as u32;
                seg_upper_leg[seg as usize] = ket_leg(upper_op, q as u32);
                seg_lower_leg[seg as usize] = bra_leg(lower_op, q as u32);
                leg_segment[ket_leg(upper_op, q as u32) as usize] = seg;
                leg_segment[bra_leg(lower_op, q as u32) as usize] = seg;
            }
        }

        Ok(Arc::new(Self {
            schedule,
            leg_offset,
            leg_op,
            leg_segment,
            seg_upper_leg,
            seg_lower_leg,
            seg_qubit,
            qubit_seg_offset,
            ops_on_qubit,
        }))
    }

    pub fn schedule(&self) -> &OperatorSchedule {
        &self.schedule
    }

    /// Total number of legs = 4·M2 + 2·M1, the junction count.
    pub fn leg_count(&self) -> u32 {
        *self.leg_offset.last().unwrap()
    }

    pub fn segment_count(&self) -> u32 {
        *self.qubit_seg_offset.last().unwrap()
    }

    /// Global leg id of (operator, local leg index).
    #[inline]
    pub fn leg_id(&self, op: u32, local: u8) -> u32 {
        self.leg_offset[op as usize] + local as u32
    }

    /// (operator, local leg index) of a global leg id.
    #[inline]
    pub fn leg_home(&self, leg: u32) -> (u32, u8) {
        let op = self.leg_op[leg as usize];
        (op, (leg - self.leg_offset[op as usize]) as u8)
    }

    /// Segment adjacent to a leg: above it for bra legs, below for ket legs.
    #[inline]
    pub fn leg_segment(&self, leg: u32) -> SegmentId {
        SegmentId(self.leg_segment[leg as usize])
    }

    /// The ket leg of the operator bounding the segment from above.
    #[inline]
    pub fn segment_upper_leg(&self, seg: SegmentId) -> u32 {
        self.seg_upper_leg[seg.0 as usize]
    }

    /// The bra leg of the operator bounding the segment from below.
    #[inline]
    pub fn segment_lower_leg(&self, seg: SegmentId) -> u32 {
        self.seg_lower_leg[seg.0 as usize]
    }

    pub fn segment_qubit(&self, seg: SegmentId) -> u32 {
        self.seg_qubit[seg.0 as usize]
    }

    /// (upper_op, lower_op) bounding a segment in imaginary time.
    pub fn segment_ops(&self, seg: SegmentId) -> (u32, u32) {
        (
            self.leg_op[self.seg_upper_leg[seg.0 as usize] as usize],
            self.leg_op[self.seg_lower_leg[seg.0 as usize] as usize],
        )
    }

    /// Segments of one qubit, in time order.
    pub fn qubit_segments(&self, q: u32) -> impl Iterator<Item = SegmentId> {
        (self.qubit_seg_offset[q as usize]..self.qubit_seg_offset[q as usize + 1]).map(SegmentId)
    }

    pub fn ops_on_qubit(&self, q: u32) -> &[u32] {
        &self.ops_on_qubit[q as usize]
    }
}

/// The Markov chain state: one bit per operator leg plus 0 or 2 worm heads.
///
/// Single-owner mutable; the shared geometry is behind an `Arc`.
#[derive(Debug, Clone)]
pub struct WorldlineConfig {
    geom: Arc<Geometry>,
    /// Per-operator packed leg masks: bra bits low, ket bits high.
    bits: Vec<u8>,
    /// Worm-head segments, sorted ascending; `None` in the closed sector.
    heads: Option<(SegmentId, SegmentId)>,
}

/// Hashable canonical identity of a configuration: leg bits plus the sorted
/// head pair. Realizes the worm-position equivalence classes exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateKey {
    pub bits: Box<[u8]>,
    pub heads: Option<(SegmentId, SegmentId)>,
}

impl WorldlineConfig {
    /// The all-zeros closed configuration; its weight Π(1−δd_i)^{2L} is
    /// positive whenever δ|d_i| < 1.
    pub fn canonical_initial(geom: Arc<Geometry>) -> Self {
        let m = geom.schedule().ops.len();
        Self {
            geom,
            bits: vec![0; m],
            heads: None,
        }
    }

    pub fn geometry(&self) -> &Arc<Geometry> {
        &self.geom
    }

    pub fn sector(&self) -> Sector {
        if self.heads.is_none() {
            Sector::C0
        } else {
            Sector::C2
        }
    }

    /// The worm-head segments, sorted, or `None` in C0.
    pub fn heads(&self) -> Option<(SegmentId, SegmentId)> {
        self.heads
    }

    pub fn is_head(&self, seg: SegmentId) -> bool {
        match self.heads {
            Some((a, b)) => a == seg || b == seg,
            None => false,
        }
    }

    /// Replace the head set. Any count other than 0 or 2, or a repeated
    /// segment, is structural corruption and is rejected.
    pub fn set_heads(&mut self, heads: &[SegmentId]) -> Result<()> {
        match heads {
            [] => {
                self.heads = None;
                Ok(())
            }
            [a, b] if a != b => {
                self.heads = Some((*a.min(b), *a.max(b)));
                Ok(())
            }
            [a, b] if a == b => Err(Error::Inconsistent(
                "worm heads must sit on distinct segments (heads that meet annihilate)".into(),
            )),
            other => Err(Error::Inconsistent(format!(
                "configuration has {} worm head(s); only 0 or 2 are valid",
                other.len()
            ))),
        }
    }

    /// Toggle the head-status of the pair of segments touched by one
    /// heat-bath move. The head count stays in {0, 2}: toggling two
    /// head-free segments creates a worm pair, toggling a head plus a free
    /// segment relocates that head, toggling both heads annihilates them.
    pub fn toggle_head_pair(&mut self, s1: SegmentId, s2: SegmentId) {
        if s1 == s2 {
            return;
        }
        let other = |pair: (SegmentId, SegmentId), s: SegmentId| {
            if pair.0 == s {
                pair.1
            } else {
                pair.0
            }
        };
        self.heads = match (self.heads, self.is_head(s1), self.is_head(s2)) {
            (None, _, _) => Some((s1.min(s2), s1.max(s2))),
            (Some(_), true, true) => None,
            (Some(pair), true, false) => {
                let keep = other(pair, s1);
                Some((keep.min(s2), keep.max(s2)))
            }
            (Some(pair), false, true) => {
                let keep = other(pair, s2);
                Some((keep.min(s1), keep.max(s1)))
            }
            (Some(_), false, false) => {
                unreachable!("chain moves always toggle the entry head's segment")
            }
        };
    }

    #[inline]
    pub fn op_mask(&self, op: u32) -> u8 {
        self.bits[op as usize]
    }

    /// Directly set one operator's packed leg mask (oracle/test construction).
    pub fn set_op_mask(&mut self, op: u32, mask: u8) {
        self.bits[op as usize] = mask;
    }

    #[inline]
    pub fn leg_bit(&self, leg: u32) -> u8 {
        let (op, local) = self.geom.leg_home(leg);
        (self.bits[op as usize] >> local) & 1
    }

    #[inline]
    pub fn flip_leg(&mut self, leg: u32) {
        let (op, local) = self.geom.leg_home(leg);
        self.bits[op as usize] ^= 1 << local;
    }

    /// Matrix element of one operator on the current leg bits.
    #[inline]
    pub fn op_element(&self, op: u32) -> f64 {
        let s = self.geom.schedule();
        s.ops[op as usize].element_mask(s.delta, self.bits[op as usize])
    }

    /// Product of all operator elements; 0 iff some element is 0.
    pub fn weight(&self) -> f64 {
        debug_assert!(
            self.check_consistency().is_ok(),
            "weight on inconsistent configuration"
        );
        let s = self.geom.schedule();
        let mut w = 1.0;
        for (mi, op) in s.ops.iter().enumerate() {
            w *= op.element_mask(s.delta, self.bits[mi]);
            if w == 0.0 {
                return 0.0;
            }
        }
        w
    }

    /// ln of the weight as a sum of log-elements; −∞ iff the weight is 0.
    pub fn log_weight(&self) -> f64 {
        let s = self.geom.schedule();
        let mut lw = 0.0;
        for (mi, op) in s.ops.iter().enumerate() {
            let e = op.element_mask(s.delta, self.bits[mi]);
            if e == 0.0 {
                return f64::NEG_INFINITY;
            }
            lw += e.ln();
        }
        lw
    }

    /// Number of two-qubit operators currently on an off-diagonal element;
    /// a cheap observable that is sensitive to worm dynamics.
    pub fn count_offdiagonal(&self) -> u32 {
        let s = self.geom.schedule();
        s.ops
            .iter()
            .enumerate()
            .filter(|(mi, op)| {
                matches!(op.kind, OpKind::TwoQubit { .. }) && {
                    let m = self.bits[*mi];
                    (m & 0b11) != (m >> 2)
                }
            })
            .count() as u32
    }

    /// Verify the segment invariant: bounding bits agree exactly on
    /// head-free segments and differ exactly on head segments.
    pub fn check_consistency(&self) -> Result<()> {
        for seg in 0..self.geom.segment_count() {
            let seg = SegmentId(seg);
            let hi = self.leg_bit(self.geom.segment_upper_leg(seg));
            let lo = self.leg_bit(self.geom.segment_lower_leg(seg));
            let head = self.is_head(seg);
            if (hi != lo) != head {
                let q = self.geom.segment_qubit(seg);
                return Err(Error::Inconsistent(format!(
                    "segment {seg:?} on qubit {q}: bounding bits {hi}/{lo}, head = {head}"
                )));
            }
        }
        if let Some((a, b)) = self.heads {
            if a == b {
                return Err(Error::Inconsistent("two worm heads on one segment".into()));
            }
        }
        Ok(())
    }

    /// Local version of [`Self::check_consistency`] for the segments
    /// adjacent to one operator; used by debug assertions in the chain.
    pub(crate) fn check_op_neighborhood(&self, op: u32) -> bool {
        let g = &self.geom;
        let off = g.leg_offset[op as usize];
        let count = g.schedule().ops[op as usize].leg_count() as u32;
        (off..off + count).all(|leg| {
            let seg = g.leg_segment(leg);
            let hi = self.leg_bit(g.segment_upper_leg(seg));
            let lo = self.leg_bit(g.segment_lower_leg(seg));
            (hi != lo) == self.is_head(seg)
        })
    }

    /// Canonical hashable identity (leg bits + sorted head pair).
    pub fn state_key(&self) -> StateKey {
        StateKey {
            bits: self.bits.clone().into_boxed_slice(),
            heads: self.heads,
        }
    }

    /// Rebuild a configuration from a state key (oracle use).
    pub fn from_state_key(geom: Arc<Geometry>, key: &StateKey) -> Self {
        Self {
            geom,
            bits: key.bits.to_vec(),
            heads: key.heads,
        }
    }
}

/// How a four-leg difference is routed through an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Routing {
    /// Pair bra_i<->ket_i and bra_j<->ket_j (worldlines pass through).
    Vertical,
    /// Pair bra_i<->bra_j and ket_i<->ket_j.
    Horizontal,
}

/// The difference between two configurations, partitioned into closed loops
/// and (when exactly one configuration has worm heads) one open string.
/// Flipping every listed leg of `x` and toggling `toggled_heads` yields `y`.
#[derive(Debug, Clone)]
pub struct DifferenceDecomposition {
    /// Closed cycles of global leg ids.
    pub loops: Vec<Vec<u32>>,
    /// Open paths terminating at worm-head segments (0 or 1 of them here).
    pub strings: Vec<Vec<u32>>,
    /// Operators where all four legs differ, with the routing chosen there.
    pub routing: Vec<(u32, Routing)>,
    /// Segments whose head-status differs between the two configurations.
    pub toggled_heads: Vec<SegmentId>,
}

/// Decompose the difference between `x` and `y` into loops plus at most one
/// string. Both configurations must share a geometry and at least one must
/// be in C0.
///
/// At operators where all four legs differ the routing is fixed by the leg
/// bits: a diagonal element in `x` routes vertically, an off-diagonal one
/// horizontally. Any fixed deterministic table preserves the round-trip
/// property; this one keeps the weight accounting natural (vertical pairs
/// carry weight-1 products, horizontal pairs O(δ²)).
pub fn decompose_difference(
    x: &WorldlineConfig,
    y: &WorldlineConfig,
) -> Result<DifferenceDecomposition> {
    if !Arc::ptr_eq(&x.geom, &y.geom) {
        return Err(Error::Inconsistent(
            "decompose_difference requires configurations sharing one schedule".into(),
        ));
    }
    if x.sector() == Sector::C2 && y.sector() == Sector::C2 {
        return Err(Error::Inconsistent(
            "decompose_difference requires at least one closed-sector configuration".into(),
        ));
    }
    let g = &x.geom;
    let s = g.schedule();
    let total_legs = g.leg_count() as usize;

    const NONE: u32 = u32::MAX;
    let mut op_partner = vec![NONE; total_legs];
    let mut seg_partner = vec![NONE; total_legs];
    let mut routing = Vec::new();

    for (mi, op) in s.ops.iter().enumerate() {
        let diff = x.bits[mi] ^ y.bits[mi];
        if diff == 0 {
            continue;
        }
        let legs: Vec<u8> = (0..op.leg_count() as u8)
            .filter(|l| diff & (1 << l) != 0)
            .collect();
        let base = g.leg_id(mi as u32, 0);
        match (op.arity(), legs.len()) {
            (_, 2) => {
                op_partner[(base + legs[0] as u32) as usize] = base + legs[1] as u32;
                op_partner[(base + legs[1] as u32) as usize] = base + legs[0] as u32;
            }
            (2, 4) => {
                let mask = x.bits[mi];
                let route = if (mask & 0b11) == (mask >> 2) {
                    Routing::Vertical
                } else {
                    Routing::Horizontal
                };
                routing.push((mi as u32, route));
                let pairs: [(u32, u32); 2] = match route {
                    Routing::Vertical => [(0, 2), (1, 3)],
                    Routing::Horizontal => [(0, 1), (2, 3)],
                };
                for (p, q) in pairs {
                    op_partner[(base + p) as usize] = base + q;
                    op_partner[(base + q) as usize] = base + p;
                }
            }
            (arity, k) => {
                return Err(Error::Inconsistent(format!(
                    "operator {mi} (arity {arity}) differs on {k} legs; nonzero-weight \
                     configurations differ on 0, 2, or 4 legs"
                )));
            }
        }
    }

    let mut endpoints = Vec::new();
    let mut toggled_heads = Vec::new();
    for seg in 0..g.segment_count() {
        let seg = SegmentId(seg);
        let up = g.segment_upper_leg(seg);
        let lo = g.segment_lower_leg(seg);
        let d_up = x.leg_bit(up) != y.leg_bit(up);
        let d_lo = x.leg_bit(lo) != y.leg_bit(lo);
        let brk = x.is_head(seg) != y.is_head(seg);
        if (d_up ^ d_lo) != brk {
            return Err(Error::Inconsistent(format!(
                "segment {seg:?}: difference parity does not match head difference"
            )));
        }
        if brk {
            toggled_heads.push(seg);
            endpoints.push(if d_up { up } else { lo });
        } else if d_up {
            seg_partner[up as usize] = lo;
            seg_partner[lo as usize] = up;
        }
    }
    endpoints.sort_unstable();

    let mut visited = vec![false; total_legs];
    let mut strings = Vec::new();
    for &start in &endpoints {
        if visited[start as usize] {
            continue;
        }
        let mut path = vec![start];
        visited[start as usize] = true;
        let mut cur = start;
        loop {
            let nxt = op_partner[cur as usize];
            debug_assert_ne!(nxt, NONE, "string endpoint without operator partner");
            path.push(nxt);
            visited[nxt as usize] = true;
            let hop = seg_partner[nxt as usize];
            if hop == NONE {
                break; // reached the other endpoint
            }
            path.push(hop);
            visited[hop as usize] = true;
            cur = hop;
        }
        strings.push(path);
    }

    let mut loops = Vec::new();
    for leg in 0..total_legs as u32 {
        if visited[leg as usize] || op_partner[leg as usize] == NONE {
            continue;
        }
        let mut cycle = vec![leg];
        visited[leg as usize] = true;
        let mut cur = leg;
        loop {
            let nxt = op_partner[cur as usize];
            if nxt == leg {
                break;
            }
            cycle.push(nxt);
            visited[nxt as usize] = true;
            let hop = seg_partner[nxt as usize];
            debug_assert_ne!(hop, NONE, "loop leg without segment partner");
            if hop == leg {
                break;
            }
            cycle.push(hop);
            visited[hop as usize] = true;
            cur = hop;
        }
        loops.push(cycle);
    }

    Ok(DifferenceDecomposition {
        loops,
        strings,
        routing,
        toggled_heads,
    })
}

/// Apply a decomposition to `x`: flip every leg on every loop and string and
/// toggle the head-status of the break segments.
pub fn apply_difference(decomp: &DifferenceDecomposition, x: &WorldlineConfig) -> WorldlineConfig {
    let mut out = x.clone();
    for path in decomp.loops.iter().chain(decomp.strings.iter()) {
        for &leg in path {
            out.flip_leg(leg);
        }
    }
    let mut heads: Vec<SegmentId> = match out.heads {
        Some((a, b)) => vec![a, b],
        None => vec![],
    };
    for &seg in &decomp.toggled_heads {
        if let Some(pos) = heads.iter().position(|&h| h == seg) {
            heads.remove(pos);
        } else {
            heads.push(seg);
        }
    }
    out.set_heads(&heads)
        .expect("difference decomposition preserves the head-count invariant");
    out
}

/// Line-oriented rendering of the diagram: operators as rows (time going
/// down), qubits as columns, `*` marking worm-head segments on pass-through
/// rows, and an explicit head list in the footer. Stable format for
/// golden-file tests.
pub fn render_diagram(cfg: &WorldlineConfig) -> String {
    let g = cfg.geometry();
    let s = g.schedule();
    let n = s.n;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "n={} M={} L={} beta={} delta={} sector={:?}",
        n,
        s.m(),
        s.l,
        s.beta,
        s.delta,
        cfg.sector()
    );
    let mut header = format!("{:>4} {:<10}", "m", "op");
    for q in 0..n {
        header.push_str(&format!(" {:^3}", format!("q{q}")));
    }
    let _ = writeln!(out, "{}", header.trim_end());

    // cursor[q]: index into ops_on_qubit[q] of the next operator acting on q
    let mut cursor = vec![0usize; n as usize];
    for (mi, op) in s.ops.iter().enumerate() {
        let label = match op.kind {
            OpKind::TwoQubit { i, j, .. } => format!("XY({i},{j})"),
            OpKind::OneQubit { i, .. } => format!("Z({i})"),
        };
        let mut row = format!("{:>4} {:<10}", mi, label);
        let (q0, q1) = op.qubits();
        for q in 0..n {
            let acted = q == q0 || Some(q) == q1;
            if acted {
                let ops = g.ops_on_qubit(q);
                let slot = if q == q0 { 0 } else { 1 };
                let bra = (cfg.op_mask(mi as u32) >> slot) & 1;
                let ket = (cfg.op_mask(mi as u32) >> (op.arity() + slot as usize)) & 1;
                row.push_str(&format!(" {bra}/{ket}"));
                debug_assert_eq!(ops[cursor[q as usize]], mi as u32);
                cursor[q as usize] += 1;
            } else {
                // the segment of q active at this row is the one below q's
                // most recent operator (cyclically the last one before any
                // operator has acted)
                let k = g.ops_on_qubit(q).len();
                let t = (cursor[q as usize] + k - 1) % k;
                let seg = SegmentId(g.qubit_seg_offset[q as usize] + t as u32);
                row.push_str(if cfg.is_head(seg) { "  * " } else { "  | " });
            }
        }
        let _ = writeln!(out, "{}", row.trim_end());
    }
    match cfg.heads() {
        None => {
            let _ = writeln!(out, "heads: none");
        }
        Some((a, b)) => {
            let mut line = String::from("heads:");
            for seg in [a, b] {
                let (up, lo) = g.segment_ops(seg);
                let _ = write!(
                    line,
                    " s{}(q{} ops {}->{})",
                    seg.0,
                    g.segment_qubit(seg),
                    up,
                    lo
                );
            }
            let _ = writeln!(out, "{line}");
        }
    }
    out
}
