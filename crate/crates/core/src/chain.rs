//! The operator-loop (worm) update Markov chain.
//!
//! One step: with probability `laziness` hold; otherwise pick a junction and
//! resolve a heat-bath update there. From the closed sector the junction is
//! one of the 4M2 + 2M1 operator legs, chosen uniformly; a worm pair is
//! inserted at the entry leg and one of the operator's legs (possibly the
//! entry itself, the bounce). From the two-head sector one of the 4
//! (head × direction) choices is made, and the chosen head moves through the
//! neighboring operator. Either way the candidate for exit leg g flips the
//! bits at the entry and exit legs and carries weight equal to the
//! operator's matrix element *after* the move; the heat-bath normalization
//! is the sum over all exit legs.
//!
//! The normalization depends only on the operator (2 + 2δa for a pair
//! factor, 2 for a field factor), which together with the junction-count
//! prefactors makes the chain exactly detailed-balanced for the stationary
//! law that re-weights two-head configurations by 2/(M1 + 2M2). That
//! cancellation is the load-bearing fact checked by the oracle's transition
//! matrix.
//!
//! All randomness comes from a seeded ChaCha8 stream; a (seed, stream) pair
//! fully determines a trajectory, and parallel chains split streams.

use std::io::{BufWriter, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hamiltonian::{OpKind, OperatorSchedule};
use crate::worldline::{Geometry, Sector, SegmentId, WorldlineConfig};
use crate::{Error, Result};

/// Tunables of one chain.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChainParams {
    /// Pre-step hold probability in [0, 1). The default 1/2 matches the
    /// lazy-chain hypothesis of the mixing bound at a factor-2 cost.
    pub laziness: f64,
    /// 64-bit RNG seed.
    pub seed: u64,
    /// ChaCha stream id; distinct streams give independent parallel chains
    /// under one seed.
    pub stream: u64,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self {
            laziness: 0.5,
            seed: 0,
            stream: 0,
        }
    }
}

/// What a step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    /// Lazy hold, nothing touched.
    Hold = 0,
    /// Junction move from the closed sector (worm-pair insertion attempt).
    Insert = 1,
    /// Head move from the two-head sector.
    Shift = 2,
}

/// Per-step record; streamable to the binary trace format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub kind: MoveKind,
    /// Global id of the entry leg (the junction); `u32::MAX` on holds.
    pub junction: u32,
    /// Local exit leg chosen by the heat bath; `u8::MAX` on holds.
    pub exit_leg: u8,
    /// True iff the configuration changed (exit != entry).
    pub accepted: bool,
    pub sector_after: Sector,
}

/// Heat-bath candidates at one junction: per exit leg, the operator's
/// matrix element after the move. The bounce (exit = entry) carries the
/// current element, so the normalization is always positive on reachable
/// configurations.
#[derive(Debug, Clone, Copy)]
pub struct CandidateSet {
    pub junction: Junction,
    /// Element after flipping entry+exit, indexed by local exit leg.
    pub weights: [f64; 4],
    pub leg_count: u8,
    /// Heat-bath normalization U = Σ weights.
    pub total: f64,
}

impl CandidateSet {
    /// Selection probability of one exit leg.
    pub fn probability(&self, exit_leg: u8) -> f64 {
        self.weights[exit_leg as usize] / self.total
    }
}

/// Apply a resolved move: flip the bits at the entry and exit legs and
/// toggle the head-status of their segments. Exit = entry is the bounce and
/// leaves the configuration untouched.
pub fn apply_move(cfg: &mut WorldlineConfig, op: u32, entry_leg: u8, exit_leg: u8) {
    if entry_leg == exit_leg {
        return;
    }
    let geom = cfg.geometry().clone();
    let entry_global = geom.leg_id(op, entry_leg);
    let exit_global = geom.leg_id(op, exit_leg);
    cfg.flip_leg(entry_global);
    cfg.flip_leg(exit_global);
    cfg.toggle_head_pair(
        geom.leg_segment(entry_global),
        geom.leg_segment(exit_global),
    );
}

/// The locus of one heat-bath update: an operator, the leg the update
/// enters through, and the segment adjacent to that leg. Every leg of every
/// operator is one junction, so there are exactly 4M2 + 2M1 of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Junction {
    pub op: u32,
    pub entry_leg: u8,
    pub entry_segment: SegmentId,
}

impl Junction {
    /// Resolve the junction at a global leg id.
    pub fn at(geom: &Geometry, leg: u32) -> Self {
        let (op, entry_leg) = geom.leg_home(leg);
        Self {
            op,
            entry_leg,
            entry_segment: geom.leg_segment(leg),
        }
    }
}

/// Evaluate the heat-bath candidate set at a junction.
pub fn candidate_set(cfg: &WorldlineConfig, junction: Junction) -> CandidateSet {
    let sched = cfg.geometry().schedule();
    let desc = &sched.ops[junction.op as usize];
    let legs = desc.leg_count() as u8;
    let mask = cfg.op_mask(junction.op);
    let mut weights = [0.0; 4];
    let mut total = 0.0;
    for g in 0..legs {
        let w = desc.element_mask(sched.delta, mask ^ (1 << junction.entry_leg) ^ (1 << g));
        weights[g as usize] = w;
        total += w;
    }
    assert!(
        total > 0.0,
        "heat-bath normalization vanished at op {}; the bounce candidate \
         always carries the current nonzero element",
        junction.op
    );
    CandidateSet {
        junction,
        weights,
        leg_count: legs,
        total,
    }
}

/// Cumulative statistics of a run.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: u64,
    pub holds: u64,
    /// Non-hold steps whose exit differed from the entry.
    pub accepted: u64,
    /// Steps that ended in the closed sector.
    pub c0_steps: u64,
    /// Steps that ended in the two-head sector.
    pub c2_steps: u64,
}

impl RunStats {
    pub fn acceptance_rate(&self) -> f64 {
        let attempts = self.steps - self.holds;
        if attempts == 0 {
            0.0
        } else {
            self.accepted as f64 / attempts as f64
        }
    }

    /// Empirical (C2 steps)/(C0 steps); infinite when C0 was never seen.
    pub fn sector_ratio(&self) -> f64 {
        self.c2_steps as f64 / self.c0_steps as f64
    }
}

/// Incremental log-weight drift is reset by a full recomputation this often.
const REFRESH_INTERVAL: u64 = 1 << 20;

/// One worm chain: owns its configuration and RNG stream.
pub struct Chain {
    cfg: WorldlineConfig,
    params: ChainParams,
    rng: ChaCha8Rng,
    step_count: u64,
    log_weight: f64,
    offdiag: u32,
    stats: RunStats,
}

impl Chain {
    /// Start a chain on a configuration with nonzero weight.
    pub fn new(cfg: WorldlineConfig, params: ChainParams) -> Result<Self> {
        if !(0.0..1.0).contains(&params.laziness) {
            return Err(Error::InvalidParameter(format!(
                "laziness must be in [0, 1), got {}",
                params.laziness
            )));
        }
        let sched = cfg.geometry().schedule();
        for op in &sched.ops {
            if let OpKind::OneQubit { d, .. } = op.kind {
                if sched.delta * d.abs() > 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "delta*|d| = {} > 1: matrix elements go negative, the \
                         heat bath is undefined (increase L)",
                        sched.delta * d.abs()
                    )));
                }
            }
        }
        let log_weight = cfg.log_weight();
        if log_weight == f64::NEG_INFINITY {
            return Err(Error::InvalidParameter(
                "chain must start from a nonzero-weight configuration".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(params.stream);
        let offdiag = cfg.count_offdiagonal();
        Ok(Self {
            cfg,
            params,
            rng,
            step_count: 0,
            log_weight,
            offdiag,
            stats: RunStats::default(),
        })
    }

    pub fn config(&self) -> &WorldlineConfig {
        &self.cfg
    }

    pub fn into_config(self) -> WorldlineConfig {
        self.cfg
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn steps(&self) -> u64 {
        self.step_count
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    /// Incrementally maintained ln W of the current configuration.
    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    /// Incrementally maintained count of off-diagonal two-qubit elements.
    pub fn offdiag_count(&self) -> u32 {
        self.offdiag
    }

    /// Resolve the junction for a (head, direction) choice t in 0..4:
    /// heads in sorted order, direction 0 = up (into the operator above),
    /// 1 = down. Returns the global entry leg.
    pub fn head_junction(cfg: &WorldlineConfig, t: u8) -> u32 {
        let (a, b) = cfg.heads().expect("head junction in the two-head sector");
        let seg = if t < 2 { a } else { b };
        let g = cfg.geometry();
        if t.is_multiple_of(2) {
            g.segment_upper_leg(seg)
        } else {
            g.segment_lower_leg(seg)
        }
    }

    /// Advance one step, mutating the configuration in place.
    pub fn step(&mut self) -> StepRecord {
        self.step_count += 1;
        self.stats.steps += 1;

        if self.rng.gen::<f64>() < self.params.laziness {
            self.stats.holds += 1;
            let sector = self.cfg.sector();
            self.bump_sector(sector);
            return StepRecord {
                step: self.step_count,
                kind: MoveKind::Hold,
                junction: u32::MAX,
                exit_leg: u8::MAX,
                accepted: false,
                sector_after: sector,
            };
        }

        let geom = self.cfg.geometry().clone();
        let (kind, entry_global) = match self.cfg.sector() {
            Sector::C0 => {
                let j = self.rng.gen_range(0..geom.leg_count());
                (MoveKind::Insert, j)
            }
            Sector::C2 => {
                let t = self.rng.gen_range(0..4u8);
                (MoveKind::Shift, Self::head_junction(&self.cfg, t))
            }
        };
        let junction = Junction::at(&geom, entry_global);
        let (op, entry_leg) = (junction.op, junction.entry_leg);
        let cs = candidate_set(&self.cfg, junction);

        // inverse CDF over exit legs with a single uniform variate
        let u = self.rng.gen::<f64>() * cs.total;
        let mut exit = cs.leg_count - 1;
        let mut acc = 0.0;
        for g in 0..cs.leg_count {
            acc += cs.weights[g as usize];
            if u < acc {
                exit = g;
                break;
            }
        }
        if cs.weights[exit as usize] == 0.0 {
            // fp edge at the top of the CDF: land on the last positive width
            exit = (0..cs.leg_count)
                .rev()
                .find(|&g| cs.weights[g as usize] > 0.0)
                .unwrap();
        }

        let accepted = exit != entry_leg;
        if accepted {
            let old_mask = self.cfg.op_mask(op);
            apply_move(&mut self.cfg, op, entry_leg, exit);
            self.log_weight += cs.weights[exit as usize].ln() - cs.weights[entry_leg as usize].ln();
            if let OpKind::TwoQubit { .. } = geom.schedule().ops[op as usize].kind {
                let is_off = |m: u8| (m & 0b11) != (m >> 2);
                match (is_off(old_mask), is_off(self.cfg.op_mask(op))) {
                    (false, true) => self.offdiag += 1,
                    (true, false) => self.offdiag -= 1,
                    _ => {}
                }
            }
            debug_assert!(
                self.cfg.check_op_neighborhood(op),
                "segment invariant after step"
            );
        }

        if self.step_count.is_multiple_of(REFRESH_INTERVAL) {
            self.refresh();
        }

        let sector_after = self.cfg.sector();
        self.bump_sector(sector_after);
        if accepted {
            self.stats.accepted += 1;
        }
        StepRecord {
            step: self.step_count,
            kind,
            junction: entry_global,
            exit_leg: exit,
            accepted,
            sector_after,
        }
    }

    fn bump_sector(&mut self, sector: Sector) {
        match sector {
            Sector::C0 => self.stats.c0_steps += 1,
            Sector::C2 => self.stats.c2_steps += 1,
        }
    }

    /// Recompute the incrementally maintained quantities from scratch.
    pub fn refresh(&mut self) {
        let fresh = self.cfg.log_weight();
        debug_assert!(
            (fresh - self.log_weight).abs() <= 1e-9 * (1.0 + fresh.abs()),
            "log-weight bookkeeping drifted: incremental {} vs fresh {}",
            self.log_weight,
            fresh
        );
        self.log_weight = fresh;
        self.offdiag = self.cfg.count_offdiagonal();
    }

    /// Apply `steps` steps, invoking the observer after each one. Fully
    /// deterministic given (seed, stream).
    pub fn run(&mut self, steps: u64, mut observer: impl FnMut(&Chain, &StepRecord)) -> RunStats {
        let before = self.stats;
        for _ in 0..steps {
            let rec = self.step();
            observer(self, &rec);
        }
        RunStats {
            steps: self.stats.steps - before.steps,
            holds: self.stats.holds - before.holds,
            accepted: self.stats.accepted - before.accepted,
            c0_steps: self.stats.c0_steps - before.c0_steps,
            c2_steps: self.stats.c2_steps - before.c2_steps,
        }
    }
}

/// The rigorous mixing-time bound c₀ · c_min⁻¹ · n¹⁶ β⁸ ε⁻⁴, evaluated as a
/// step count. Astronomically conservative by design; real pipelines use
/// diagnostics-driven burn-in and keep this behind a flag. Assumes the lazy
/// (1/2-hold) chain.
pub fn rigorous_burnin(schedule: &OperatorSchedule, eps: f64, c_min: f64, c0: f64) -> Result<u128> {
    if !(c_min > 0.0) {
        return Err(Error::InvalidParameter(
            "no rigorous mixing bound available at c_min = 0".into(),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("eps must be positive".into()));
    }
    let n = schedule.n as f64;
    let beta = schedule.beta;
    let steps = c0 / c_min * n.powi(16) * beta.powi(8) * eps.powi(-4);
    if !steps.is_finite() {
        return Ok(u128::MAX);
    }
    Ok(steps.ceil() as u128)
}

/// Magic header of the binary step-trace format (4 bytes, version-carrying).
pub const TRACE_MAGIC: [u8; 4] = *b"WQT1";

/// Fixed-width size of one encoded trace record.
pub const TRACE_RECORD_BYTES: usize = 14;

/// Streams step records as fixed-width binary: step u64 LE, move kind u8,
/// junction id u32 LE, accepted u8.
pub struct TraceWriter<W: Write> {
    out: BufWriter<W>,
    records: u64,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut out = BufWriter::new(inner);
        out.write_all(&TRACE_MAGIC)?;
        Ok(Self { out, records: 0 })
    }

    pub fn write(&mut self, rec: &StepRecord) -> Result<()> {
        let mut buf = [0u8; TRACE_RECORD_BYTES];
        buf[0..8].copy_from_slice(&rec.step.to_le_bytes());
        buf[8] = rec.kind as u8;
        buf[9..13].copy_from_slice(&rec.junction.to_le_bytes());
        buf[13] = rec.accepted as u8;
        self.out.write_all(&buf)?;
        self.records += 1;
        Ok(())
    }

    pub fn records_written(&self) -> u64 {
        self.records
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// A decoded trace record (exit leg and sector are not part of the wire
/// format).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub step: u64,
    pub kind: MoveKind,
    pub junction: u32,
    pub accepted: bool,
}

/// Read back a whole binary trace.
pub fn read_trace<R: Read>(mut input: R) -> Result<Vec<TraceRecord>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != TRACE_MAGIC {
        return Err(Error::InvalidParameter(format!(
            "not a step trace: magic {magic:?} != {TRACE_MAGIC:?}"
        )));
    }
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % TRACE_RECORD_BYTES != 0 {
        return Err(Error::InvalidParameter(format!(
            "truncated trace: {} trailing bytes",
            bytes.len() % TRACE_RECORD_BYTES
        )));
    }
    let mut out = Vec::with_capacity(bytes.len() / TRACE_RECORD_BYTES);
    for chunk in bytes.chunks_exact(TRACE_RECORD_BYTES) {
        let kind = match chunk[8] {
            0 => MoveKind::Hold,
            1 => MoveKind::Insert,
            2 => MoveKind::Shift,
            k => {
                return Err(Error::InvalidParameter(format!(
                    "unknown move kind {k} in trace"
                )));
            }
        };
        out.push(TraceRecord {
            step: u64::from_le_bytes(chunk[0..8].try_into().unwrap()),
            kind,
            junction: u32::from_le_bytes(chunk[9..13].try_into().unwrap()),
            accepted: chunk[13] != 0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{build_schedule, FieldTerm, PairTerm, XYHamiltonian};
    use crate::worldline::{Geometry, SegmentId};
    use approx::assert_relative_eq;

    fn pair_cfg(a: f64, b: f64, beta: f64, l: u32) -> WorldlineConfig {
        let h = XYHamiltonian {
            n: 2,
            pairs: vec![PairTerm { i: 0, j: 1, a, b }],
            fields: vec![],
        };
        let geom = Geometry::new(build_schedule(&h, beta, l).unwrap()).unwrap();
        WorldlineConfig::canonical_initial(geom)
    }

    #[test]
    fn heat_bath_probabilities_two_qubit() {
        // delta = beta/2L = 0.1
        let cfg = pair_cfg(0.5, 0.5, 0.2, 1);
        let j = Junction::at(cfg.geometry(), cfg.geometry().leg_id(0, 0));
        let cs = candidate_set(&cfg, j); // entry at bra of qubit 0
        assert_relative_eq!(cs.total, 2.1, max_relative = 1e-14);
        assert_relative_eq!(cs.probability(0), 1.0 / 2.1, max_relative = 1e-12); // bounce
        assert_relative_eq!(cs.probability(2), 1.0 / 2.1, max_relative = 1e-12); // pass down
        assert_relative_eq!(cs.probability(1), 0.1 / 2.1, max_relative = 1e-12); // across top
        assert_eq!(cs.probability(3), 0.0); // a = b kills the anti-aligned exit
        assert_relative_eq!(cs.probability(0), 0.47619047619, max_relative = 1e-9);
        assert_relative_eq!(cs.probability(1), 0.047619047619, max_relative = 1e-9);
    }

    #[test]
    fn heat_bath_probabilities_one_qubit_from_worm() {
        // n=1, d=0.3, L=2, beta=0.4 -> delta=0.1; heads on segments 0 and 2
        let h = XYHamiltonian {
            n: 1,
            pairs: vec![],
            fields: vec![FieldTerm { i: 0, d: 0.3 }],
        };
        let geom = Geometry::new(build_schedule(&h, 0.4, 2).unwrap()).unwrap();
        let mut cfg = WorldlineConfig::canonical_initial(geom);
        cfg.set_op_mask(1, 0b11);
        cfg.set_op_mask(2, 0b11);
        cfg.set_heads(&[SegmentId(0), SegmentId(2)]).unwrap();
        cfg.check_consistency().unwrap();

        // the head on segment 2 moves down into op 3, whose legs read <0|.|0>
        let entry = cfg.geometry().segment_lower_leg(SegmentId(2));
        let j = Junction::at(cfg.geometry(), entry);
        assert_eq!(j.op, 3);
        assert_eq!(j.entry_segment, SegmentId(2));
        let cs = candidate_set(&cfg, j);
        assert_relative_eq!(cs.total, 2.0, max_relative = 1e-14);
        assert_relative_eq!(cs.probability(0), 0.485, max_relative = 1e-12);
        assert_relative_eq!(cs.probability(1), 0.515, max_relative = 1e-12);
    }

    #[test]
    fn zero_delta_moves_heads_along_columns() {
        let cfg = pair_cfg(0.5, 0.25, 0.0, 2);
        // candidates from the closed sector at a pair operator: only the
        // bounce and the same-column exit survive
        let j = Junction::at(cfg.geometry(), cfg.geometry().leg_id(0, 0));
        let cs = candidate_set(&cfg, j);
        assert_eq!(cs.weights, [1.0, 0.0, 1.0, 0.0]);
        let mut chain = Chain::new(
            cfg,
            ChainParams {
                laziness: 0.0,
                seed: 7,
                stream: 0,
            },
        )
        .unwrap();
        let mut saw_worm = false;
        for _ in 0..2000 {
            let rec = chain.step();
            saw_worm |= rec.sector_after == Sector::C2;
            assert_eq!(chain.log_weight(), 0.0); // every reachable weight is 1
        }
        assert!(saw_worm);
        chain.config().check_consistency().unwrap();
    }

    #[test]
    fn zero_steps_leaves_config_unchanged() {
        let cfg = pair_cfg(0.5, 0.25, 1.0, 2);
        let key = cfg.state_key();
        let mut chain = Chain::new(cfg, ChainParams::default()).unwrap();
        chain.run(0, |_, _| {});
        assert_eq!(chain.config().state_key(), key);
    }

    #[test]
    fn replay_is_bit_identical() {
        let params = ChainParams {
            laziness: 0.5,
            seed: 42,
            stream: 3,
        };
        let mut records1 = Vec::new();
        let mut chain1 = Chain::new(pair_cfg(0.5, 0.25, 1.5, 2), params).unwrap();
        chain1.run(5000, |_, r| records1.push(*r));

        let mut records2 = Vec::new();
        let mut chain2 = Chain::new(pair_cfg(0.5, 0.25, 1.5, 2), params).unwrap();
        chain2.run(5000, |_, r| records2.push(*r));

        assert_eq!(records1, records2);
        assert_eq!(chain1.config().state_key(), chain2.config().state_key());
        assert_eq!(chain1.log_weight(), chain2.log_weight());

        // a different stream decorrelates
        let mut chain3 = Chain::new(
            pair_cfg(0.5, 0.25, 1.5, 2),
            ChainParams {
                stream: 4,
                ..params
            },
        )
        .unwrap();
        let mut records3 = Vec::new();
        chain3.run(5000, |_, r| records3.push(*r));
        assert_ne!(records1, records3);
    }

    #[test]
    fn bookkeeping_matches_recomputation() {
        let mut chain = Chain::new(
            pair_cfg(0.5, 0.25, 2.0, 3),
            ChainParams {
                laziness: 0.5,
                seed: 11,
                stream: 0,
            },
        )
        .unwrap();
        chain.run(20_000, |_, _| {});
        let fresh = chain.config().log_weight();
        assert!(
            (chain.log_weight() - fresh).abs() <= 1e-9 * (1.0 + fresh.abs()),
            "drift: incremental {} vs fresh {}",
            chain.log_weight(),
            fresh
        );
        assert_eq!(chain.offdiag_count(), chain.config().count_offdiagonal());
        chain.config().check_consistency().unwrap();
        // sector counts partition the steps
        let s = chain.stats();
        assert_eq!(s.c0_steps + s.c2_steps, s.steps);
    }

    #[test]
    fn rigorous_burnin_formula() {
        let h = XYHamiltonian {
            n: 2,
            pairs: vec![],
            fields: vec![],
        };
        let s1 = build_schedule(&h, 1.0, 1).unwrap();
        assert!(matches!(
            rigorous_burnin(&s1, 0.1, 0.0, 1.0),
            Err(Error::InvalidParameter(_))
        ));
        let t2 = rigorous_burnin(&s1, 0.1, 1.0, 1.0).unwrap();
        assert_eq!(t2, 2u128.pow(16) * 10_000); // n^16 * eps^-4
        let h4 = XYHamiltonian {
            n: 4,
            pairs: vec![],
            fields: vec![],
        };
        let s4 = build_schedule(&h4, 1.0, 1).unwrap();
        let t4 = rigorous_burnin(&s4, 0.1, 1.0, 1.0).unwrap();
        assert_eq!(t4, t2 * 2u128.pow(16)); // doubling n costs 2^16
    }

    proptest::proptest! {
        /// Random short trajectories preserve the structural invariants:
        /// segment consistency, head counts in {0, 2}, sector tallies
        /// partitioning the steps, and positive weight throughout.
        #[test]
        fn random_trajectories_stay_consistent(
            seed in 0u64..512,
            lazy in 0.0..0.9f64,
            beta in 0.2..2.0f64,
        ) {
            let h = XYHamiltonian {
                n: 2,
                pairs: vec![PairTerm { i: 0, j: 1, a: 0.45, b: 0.2 }],
                fields: vec![FieldTerm { i: 1, d: 0.4 }],
            };
            let geom = Geometry::new(build_schedule(&h, beta, 2).unwrap()).unwrap();
            let cfg = WorldlineConfig::canonical_initial(geom);
            let mut chain =
                Chain::new(cfg, ChainParams { laziness: lazy, seed, stream: 9 }).unwrap();
            chain.run(500, |c, rec| {
                let heads = c.config().heads();
                match c.config().sector() {
                    Sector::C0 => assert!(heads.is_none()),
                    Sector::C2 => {
                        let (a, b) = heads.unwrap();
                        assert!(a != b);
                    }
                }
                assert_eq!(rec.sector_after, c.config().sector());
            });
            chain.config().check_consistency().unwrap();
            proptest::prop_assert!(chain.log_weight().is_finite());
            let s = chain.stats();
            proptest::prop_assert_eq!(s.c0_steps + s.c2_steps, s.steps);
        }
    }

    #[test]
    fn trace_roundtrip() {
        let mut chain = Chain::new(
            pair_cfg(0.5, 0.25, 1.0, 1),
            ChainParams {
                laziness: 0.25,
                seed: 5,
                stream: 0,
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        {
            let mut writer = TraceWriter::new(&mut buf).unwrap();
            let mut recs = Vec::new();
            chain.run(100, |_, r| recs.push(*r));
            for r in &recs {
                writer.write(r).unwrap();
            }
            assert_eq!(writer.records_written(), 100);
            writer.finish().unwrap();
        }
        assert_eq!(&buf[0..4], &TRACE_MAGIC);
        assert_eq!(buf.len(), 4 + 100 * TRACE_RECORD_BYTES);
        let decoded = read_trace(&buf[..]).unwrap();
        assert_eq!(decoded.len(), 100);
        assert_eq!(decoded[0].step, 1);
        assert!(read_trace(&b"XXXX1234"[..]).is_err());
    }
}
