//! Synchronous Communicate-Compute-Move execution.
//!
//! Each round, robots are grouped by node; an algorithm's group step reads
//! and writes only the co-located memories plus the local degree, then every
//! robot either stays or exits through a port. All moves apply atomically at
//! the round boundary. The engine owns the round counters, the per-robot
//! entry-port facts, bit-width enforcement, and trace/metrics recording.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphcore::{Node, Port, PortGraph};

/// Robot identifier in `1..=k`.
pub type RobotId = u32;

/// Sentinel for "no port" in `port_entered` / `port_exited`.
pub const NO_PORT: i16 = -1;

/// Per-robot per-round outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveDecision {
    Stay,
    Exit(Port),
}

/// The per-robot variable store. Every field has a declared bit width
/// (see [`WidthSpec`]); the engine asserts each write fits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RobotMemory {
    /// Robot identifier (read-only).
    pub id: RobotId,
    /// Round counter, engine-managed.
    pub round: u64,
    /// Pass counter for the arbitrary-graph algorithm.
    pub pass: u32,
    /// Port entered in forward phase; 0 = none.
    pub parent: Port,
    /// Smallest port not yet taken; 0 = none.
    pub child: Port,
    /// Port from which the robot entered a node; -1 = none.
    pub port_entered: i16,
    /// Port from which the robot exited a node; -1 = none.
    pub port_exited: i16,
    /// DFS tree label: a robot id, or top = k + 1.
    pub treelabel: u32,
    /// Set once the robot permanently claims its node.
    pub settled: bool,
    /// Robot count at the node at the start of a gathering stage.
    pub mult: u32,
    /// Id of the settled robot at the traversal's start node, or top.
    pub home: u32,
    /// Small algorithm-phase enumeration (3 bits).
    pub stage: u8,
}

impl RobotMemory {
    /// Initial variable values; `top` encodes as `k + 1`.
    pub fn initial(id: RobotId, k: u32) -> RobotMemory {
        RobotMemory {
            id,
            round: 0,
            pass: 0,
            parent: 0,
            child: 0,
            port_entered: NO_PORT,
            port_exited: NO_PORT,
            treelabel: k + 1,
            settled: false,
            mult: 1,
            home: k + 1,
            stage: 0,
        }
    }
}

/// Memory fields, for per-algorithm registration and bit accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Id,
    Round,
    Pass,
    Parent,
    Child,
    PortEntered,
    PortExited,
    Treelabel,
    Settled,
    Mult,
    Home,
    Stage,
}

pub const ALL_FIELDS: [Field; 12] = [
    Field::Id,
    Field::Round,
    Field::Pass,
    Field::Parent,
    Field::Child,
    Field::PortEntered,
    Field::PortExited,
    Field::Treelabel,
    Field::Settled,
    Field::Mult,
    Field::Home,
    Field::Stage,
];

/// A set of registered fields (bitmask over [`Field`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldSet(u16);

impl FieldSet {
    pub const fn empty() -> FieldSet {
        FieldSet(0)
    }

    pub const fn of(fields: &[Field]) -> FieldSet {
        let mut mask = 0u16;
        let mut i = 0;
        while i < fields.len() {
            mask |= 1 << fields[i] as u16;
            i += 1;
        }
        FieldSet(mask)
    }

    pub fn contains(&self, f: Field) -> bool {
        self.0 & (1 << f as u16) != 0
    }
}

/// Smallest `w` with `2^w >= v`, for `v >= 1`.
fn ceil_log2(v: u64) -> u32 {
    debug_assert!(v >= 1);
    if v <= 1 {
        0
    } else {
        64 - (v - 1).leading_zeros()
    }
}

/// Declared bit widths for one run, from the known parameters.
/// Minimum field width is 1 bit even when the formula gives 0.
#[derive(Debug, Clone)]
pub struct WidthSpec {
    pub k: u32,
    pub delta: u8,
    pub max_rounds: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("robot {robot}: {field:?} value {value} exceeds its {width}-bit width")]
pub struct WidthOverflow {
    pub robot: RobotId,
    pub field: Field,
    pub value: i64,
    pub width: u32,
}

impl WidthSpec {
    pub fn new(k: u32, delta: u8, max_rounds: u64) -> WidthSpec {
        WidthSpec {
            k,
            delta,
            max_rounds,
        }
    }

    /// Declared width of a field, floored at 1 bit.
    pub fn width(&self, f: Field) -> u32 {
        let k = self.k as u64;
        let d = self.delta as u64;
        let w = match f {
            Field::Id => ceil_log2(k),
            Field::Round => ceil_log2(self.max_rounds + 1),
            Field::Pass => ceil_log2(ceil_log2(k).max(1) as u64) + 1,
            Field::Parent | Field::Child => ceil_log2(d + 1),
            Field::PortEntered | Field::PortExited => ceil_log2(d + 2),
            Field::Treelabel | Field::Home => ceil_log2(k + 2),
            Field::Settled => 1,
            Field::Mult => ceil_log2(k + 1),
            Field::Stage => 3,
        };
        w.max(1)
    }

    /// Sum of declared widths of the registered fields.
    pub fn total_bits(&self, fields: FieldSet) -> u32 {
        ALL_FIELDS
            .iter()
            .filter(|f| fields.contains(**f))
            .map(|f| self.width(*f))
            .sum()
    }

    /// Checks that every field's current value fits its declared width,
    /// using the canonical zero-based encoding of each field.
    pub fn check(&self, mem: &RobotMemory) -> Result<(), WidthOverflow> {
        let entries: [(Field, i64); 12] = [
            (Field::Id, mem.id as i64 - 1),
            (Field::Round, mem.round as i64),
            (Field::Pass, mem.pass as i64),
            (Field::Parent, mem.parent as i64),
            (Field::Child, mem.child as i64),
            (Field::PortEntered, mem.port_entered as i64 + 1),
            (Field::PortExited, mem.port_exited as i64 + 1),
            (Field::Treelabel, mem.treelabel as i64),
            (Field::Settled, mem.settled as i64),
            (Field::Mult, mem.mult as i64),
            (Field::Home, mem.home as i64),
            (Field::Stage, mem.stage as i64),
        ];
        for (field, encoded) in entries {
            let width = self.width(field);
            let fits = encoded >= 0 && (width >= 63 || encoded < (1i64 << width));
            if !fits {
                let value = match field {
                    Field::Id => mem.id as i64,
                    Field::PortEntered => mem.port_entered as i64,
                    Field::PortExited => mem.port_exited as i64,
                    _ => encoded,
                };
                return Err(WidthOverflow {
                    robot: mem.id,
                    field,
                    value,
                    width,
                });
            }
        }
        Ok(())
    }
}

/// Engine execution faults. These indicate implementation bugs, not
/// expected run outcomes.
#[derive(Debug, Error)]
pub enum EngineFault {
    #[error("robot {robot} exited through invalid port {port} at a node of degree {degree}")]
    InvalidExit {
        robot: RobotId,
        port: Port,
        degree: u8,
    },
    #[error("settled robot {robot} attempted to move")]
    SettledMoved { robot: RobotId },
    #[error(transparent)]
    Memory(#[from] WidthOverflow),
    #[error("algorithm fault: {0}")]
    Algorithm(String),
    #[error("group step returned {got} decisions for {expected} robots")]
    DecisionMismatch { got: usize, expected: usize },
}

/// View of one co-located robot inside a group step: its memory with
/// mutation rights plus the engine's entry-port fact for its last move.
pub struct RobotView<'a> {
    pub mem: &'a mut RobotMemory,
    /// Port by which the robot entered this node, if it moved last round.
    pub entered_via: Option<Port>,
}

/// Everything a group step may read: the round, the local degree (ports are
/// `1..=degree`), and the co-located robots sorted by id. Node identity is
/// deliberately absent.
pub struct GroupCtx<'a> {
    pub round: u64,
    pub degree: u8,
    pub robots: Vec<RobotView<'a>>,
}

impl GroupCtx<'_> {
    pub fn ports(&self) -> impl Iterator<Item = Port> {
        1..=self.degree
    }
}

/// Resolution of the algorithms' free choices: fully deterministic
/// lowest-port by default, or a seeded id-salted pick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChoicePolicy {
    LowestPort,
    Seeded(u64),
}

impl ChoicePolicy {
    /// Picks one of `candidates` (must be non-empty, ascending).
    pub fn pick(&self, round: u64, salt: u64, candidates: &[Port]) -> Port {
        debug_assert!(!candidates.is_empty());
        match self {
            ChoicePolicy::LowestPort => candidates[0],
            ChoicePolicy::Seeded(seed) => {
                let mix = seed
                    .wrapping_mul(0x9e3779b97f4a7c15)
                    .wrapping_add(round.wrapping_mul(0x2545f4914f6cdd1d))
                    .wrapping_add(salt);
                let mut rng = ChaCha8Rng::seed_from_u64(mix);
                candidates[rng.gen_range(0..candidates.len())]
            }
        }
    }
}

/// Named interval of the algorithm's fixed round schedule.
#[derive(Debug, Clone)]
pub struct StageSpan {
    pub label: String,
    /// First round of the span (inclusive).
    pub start: u64,
    /// One past the last round of the span.
    pub end: u64,
}

/// A round-synchronous dispersion algorithm: a node-group step procedure
/// plus its round budget, schedule, and registered memory fields.
pub trait Algorithm {
    fn name(&self) -> &'static str;
    /// Total declared round budget as a function of the known parameters.
    fn round_budget(&self) -> u64;
    /// Memory fields the algorithm registers as used (for bit accounting).
    fn used_fields(&self) -> FieldSet;
    /// Fixed schedule spans, for per-stage metrics and auditing.
    fn schedule(&self) -> Vec<StageSpan>;
    /// Number of passes touched after `rounds` executed rounds.
    fn passes_used(&self, rounds: u64) -> u64 {
        let _ = rounds;
        1
    }
    /// Computes one round's decisions for the robots co-located at a node.
    fn step_group(&self, ctx: &mut GroupCtx) -> Result<Vec<MoveDecision>, EngineFault>;
}

/// Robot placement, memories, and the global round counter over a graph.
#[derive(Debug, Clone)]
pub struct WorldState {
    graph: Arc<PortGraph>,
    placement: Vec<Node>,
    memories: Vec<RobotMemory>,
    entered_via: Vec<Option<Port>>,
    global_round: u64,
}

impl WorldState {
    pub fn new(graph: Arc<PortGraph>, placement: Vec<Node>) -> Result<WorldState, EngineFault> {
        let k = placement.len();
        if k == 0 || k > graph.node_count() {
            return Err(EngineFault::Algorithm(format!(
                "need 1 <= k <= n, got k={k}, n={}",
                graph.node_count()
            )));
        }
        for &v in &placement {
            if v >= graph.node_count() {
                return Err(EngineFault::Algorithm(format!(
                    "placement node {v} out of range"
                )));
            }
        }
        let memories = (1..=k as u32)
            .map(|id| RobotMemory::initial(id, k as u32))
            .collect();
        Ok(WorldState {
            graph,
            placement,
            memories,
            entered_via: vec![None; k],
            global_round: 0,
        })
    }

    pub fn graph(&self) -> &PortGraph {
        &self.graph
    }

    pub fn graph_arc(&self) -> Arc<PortGraph> {
        Arc::clone(&self.graph)
    }

    pub fn robot_count(&self) -> u32 {
        self.placement.len() as u32
    }

    pub fn node_of(&self, id: RobotId) -> Node {
        self.placement[(id - 1) as usize]
    }

    pub fn memory(&self, id: RobotId) -> &RobotMemory {
        &self.memories[(id - 1) as usize]
    }

    pub fn global_round(&self) -> u64 {
        self.global_round
    }

    /// Robot ids at each occupied node, sorted; nodes in index order.
    pub fn occupancy(&self) -> BTreeMap<Node, Vec<RobotId>> {
        let mut map: BTreeMap<Node, Vec<RobotId>> = BTreeMap::new();
        for (i, &v) in self.placement.iter().enumerate() {
            map.entry(v).or_default().push(i as u32 + 1);
        }
        map
    }

    /// True iff every robot is settled and placement is injective.
    pub fn is_dispersed(&self) -> bool {
        if !self.memories.iter().all(|m| m.settled) {
            return false;
        }
        let mut nodes: Vec<Node> = self.placement.clone();
        nodes.sort_unstable();
        nodes.windows(2).all(|w| w[0] != w[1])
    }
}

/// Executes one synchronous round.
///
/// Group steps see the pre-round placement; all exits apply atomically.
/// Returns the number of robots that moved.
pub fn step(
    world: &mut WorldState,
    algo: &dyn Algorithm,
    widths: &WidthSpec,
) -> Result<u32, EngineFault> {
    let k = world.placement.len();
    let mut decisions: Vec<MoveDecision> = vec![MoveDecision::Stay; k];
    let occupancy = world.occupancy();
    for (node, ids) in occupancy {
        let degree = world.graph.degree(node);
        // Memories are cloned per group so writes stay inside the group
        // until the round commits; groups are disjoint by construction.
        let mut mems: Vec<RobotMemory> =
            ids.iter().map(|&id| world.memories[(id - 1) as usize].clone()).collect();
        let settled_before: Vec<bool> = mems.iter().map(|m| m.settled).collect();
        let entered: Vec<Option<Port>> =
            ids.iter().map(|&id| world.entered_via[(id - 1) as usize]).collect();
        let group_decisions = {
            let robots: Vec<RobotView> = mems
                .iter_mut()
                .zip(entered.iter())
                .map(|(mem, &entered_via)| RobotView { mem, entered_via })
                .collect();
            let mut ctx = GroupCtx {
                round: world.global_round,
                degree,
                robots,
            };
            algo.step_group(&mut ctx)?
        };
        if group_decisions.len() != ids.len() {
            return Err(EngineFault::DecisionMismatch {
                got: group_decisions.len(),
                expected: ids.len(),
            });
        }
        for ((&id, mem), (&was_settled, &decision)) in ids
            .iter()
            .zip(mems.iter())
            .zip(settled_before.iter().zip(group_decisions.iter()))
        {
            if let MoveDecision::Exit(port) = decision {
                if was_settled || mem.settled {
                    return Err(EngineFault::SettledMoved { robot: id });
                }
                if port == 0 || port > degree {
                    return Err(EngineFault::InvalidExit {
                        robot: id,
                        port,
                        degree,
                    });
                }
            }
            decisions[(id - 1) as usize] = decision;
        }
        for (&id, mem) in ids.iter().zip(mems) {
            world.memories[(id - 1) as usize] = mem;
        }
    }
    // Commit moves atomically.
    let mut moved = 0u32;
    for (i, decision) in decisions.iter().enumerate() {
        match *decision {
            MoveDecision::Stay => world.entered_via[i] = None,
            MoveDecision::Exit(port) => {
                let from = world.placement[i];
                let (to, entry) = world
                    .graph
                    .neighbor_via(from, port)
                    .map_err(|e| EngineFault::Algorithm(e.to_string()))?;
                world.placement[i] = to;
                world.entered_via[i] = Some(entry);
                moved += 1;
            }
        }
    }
    world.global_round += 1;
    for mem in &mut world.memories {
        mem.round = world.global_round;
        widths.check(mem)?;
    }
    Ok(moved)
}

// ---------------------------------------------------------------------------
// Traces and metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RobotFrame {
    pub id: RobotId,
    pub node: Node,
    pub settled: u8,
}

/// State after one executed round.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TraceFrame {
    pub round: u64,
    pub robots: Vec<RobotFrame>,
}

impl TraceFrame {
    /// Snapshot of the world's placement and settled flags.
    pub fn of_world(world: &WorldState, round: u64) -> TraceFrame {
        RunTrace::capture(world, round)
    }
}

/// Per-round records of one run; `records[t]` is the state after round `t`.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub records: Vec<TraceFrame>,
}

impl RunTrace {
    fn capture(world: &WorldState, round: u64) -> TraceFrame {
        TraceFrame {
            round,
            robots: (1..=world.robot_count())
                .map(|id| RobotFrame {
                    id,
                    node: world.node_of(id),
                    settled: world.memory(id).settled as u8,
                })
                .collect(),
        }
    }

    /// Number of nodes holding unsettled robots in the frame.
    pub fn unsettled_node_count(frame: &TraceFrame) -> usize {
        let mut nodes: Vec<Node> = frame
            .robots
            .iter()
            .filter(|r| r.settled == 0)
            .map(|r| r.node)
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes.len()
    }
}

/// Summary of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMetrics {
    /// Rounds executed when the dispersion predicate first held.
    pub rounds_to_dispersion: Option<u64>,
    pub total_rounds: u64,
    pub passes_used: u64,
    /// Sum of declared widths of the algorithm's registered fields.
    pub max_memory_bits: u32,
    /// Rounds with at least one move inside each schedule span.
    pub per_stage_active_rounds: Vec<(String, u64)>,
}

/// Runs the algorithm for at most `min(budget, max_rounds)` rounds,
/// recording the trace and stopping once dispersion holds (settled robots
/// never move, so the remaining schedule is a no-op).
pub fn run(
    world: &mut WorldState,
    algo: &dyn Algorithm,
    max_rounds: u64,
) -> Result<(RunTrace, RunMetrics), EngineFault> {
    let widths = WidthSpec::new(
        world.robot_count(),
        world.graph.max_degree(),
        algo.round_budget().min(max_rounds),
    );
    let cap = algo.round_budget().min(max_rounds);
    let schedule = algo.schedule();
    let mut per_stage: Vec<(String, u64)> =
        schedule.iter().map(|s| (s.label.clone(), 0)).collect();
    let mut trace = RunTrace::default();
    let mut rounds_to_dispersion = None;
    let mut executed = 0;
    for t in 0..cap {
        let moved = step(world, algo, &widths)?;
        executed = t + 1;
        trace.records.push(RunTrace::capture(world, t));
        if moved > 0 {
            for (span, counter) in schedule.iter().zip(per_stage.iter_mut()) {
                if t >= span.start && t < span.end {
                    counter.1 += 1;
                }
            }
        }
        if rounds_to_dispersion.is_none() && world.is_dispersed() {
            rounds_to_dispersion = Some(executed);
            break;
        }
    }
    let metrics = RunMetrics {
        rounds_to_dispersion,
        total_rounds: executed,
        passes_used: algo.passes_used(rounds_to_dispersion.unwrap_or(executed)),
        max_memory_bits: widths.total_bits(algo.used_fields()),
        per_stage_active_rounds: per_stage,
    };
    Ok((trace, metrics))
}

/// Writes the trace as one JSON object per line:
/// `{"round":t,"robots":[{"id":i,"node":v,"settled":0|1},...]}`.
pub fn write_trace_jsonl<W: Write>(trace: &RunTrace, mut sink: W) -> std::io::Result<()> {
    for frame in &trace.records {
        let line = serde_json::to_string(frame).expect("trace frames serialize");
        writeln!(sink, "{line}")?;
    }
    Ok(())
}

pub const METRICS_CSV_HEADER: &str =
    "graph,n,m,k,delta,algo,seed,rounds_to_dispersion,total_rounds,passes,max_memory_bits";

/// One metrics CSV row matching [`METRICS_CSV_HEADER`].
#[allow(clippy::too_many_arguments)]
pub fn metrics_csv_row(
    graph_spec: &str,
    n: usize,
    m: usize,
    k: u32,
    delta: u8,
    algo: &str,
    seed: u64,
    metrics: &RunMetrics,
) -> String {
    let rtd = metrics
        .rounds_to_dispersion
        .map(|r| r.to_string())
        .unwrap_or_default();
    format!(
        "{graph_spec},{n},{m},{k},{delta},{algo},{seed},{rtd},{},{},{}",
        metrics.total_rounds, metrics.passes_used, metrics.max_memory_bits
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphcore::{build_grid, build_path, LabelPolicy};

    struct AllStay;
    impl Algorithm for AllStay {
        fn name(&self) -> &'static str {
            "stay"
        }
        fn round_budget(&self) -> u64 {
            8
        }
        fn used_fields(&self) -> FieldSet {
            FieldSet::of(&[Field::Id, Field::Round, Field::Settled])
        }
        fn schedule(&self) -> Vec<StageSpan> {
            vec![StageSpan {
                label: "all".into(),
                start: 0,
                end: 8,
            }]
        }
        fn step_group(&self, ctx: &mut GroupCtx) -> Result<Vec<MoveDecision>, EngineFault> {
            Ok(vec![MoveDecision::Stay; ctx.robots.len()])
        }
    }

    /// Everyone unsettled exits through port 1 forever.
    struct AllPortOne;
    impl Algorithm for AllPortOne {
        fn name(&self) -> &'static str {
            "port1"
        }
        fn round_budget(&self) -> u64 {
            4
        }
        fn used_fields(&self) -> FieldSet {
            FieldSet::of(&[Field::Id, Field::Round, Field::Settled])
        }
        fn schedule(&self) -> Vec<StageSpan> {
            vec![]
        }
        fn step_group(&self, ctx: &mut GroupCtx) -> Result<Vec<MoveDecision>, EngineFault> {
            Ok(ctx
                .robots
                .iter()
                .map(|r| {
                    if r.mem.settled {
                        MoveDecision::Stay
                    } else {
                        MoveDecision::Exit(1)
                    }
                })
                .collect())
        }
    }

    fn world_on_path(n: usize, placement: Vec<Node>) -> WorldState {
        let g = Arc::new(build_path(n).unwrap());
        WorldState::new(g, placement).unwrap()
    }

    #[test]
    fn stay_leaves_placement_and_increments_round() {
        let mut w = world_on_path(3, vec![0, 1]);
        let widths = WidthSpec::new(2, 2, 8);
        step(&mut w, &AllStay, &widths).unwrap();
        assert_eq!(w.node_of(1), 0);
        assert_eq!(w.node_of(2), 1);
        assert_eq!(w.global_round(), 1);
        assert_eq!(w.memory(1).round, 1);
    }

    #[test]
    fn two_robots_share_an_edge() {
        // Both exit port 1 from node 0 of a path; both arrive at node 1.
        let mut w = world_on_path(3, vec![0, 0]);
        let widths = WidthSpec::new(2, 2, 8);
        step(&mut w, &AllPortOne, &widths).unwrap();
        assert_eq!(w.node_of(1), 1);
        assert_eq!(w.node_of(2), 1);
        assert_eq!(w.entered_via, vec![Some(1), Some(1)]);
    }

    #[test]
    fn swap_without_interaction() {
        // Robots at both ends of P2 exit toward each other and cross.
        let mut w = world_on_path(2, vec![0, 1]);
        let widths = WidthSpec::new(2, 1, 8);
        step(&mut w, &AllPortOne, &widths).unwrap();
        assert_eq!(w.node_of(1), 1);
        assert_eq!(w.node_of(2), 0);
    }

    #[test]
    fn max_rounds_zero_is_empty() {
        let mut w = world_on_path(3, vec![0, 1]);
        let before = w.clone();
        let (trace, metrics) = run(&mut w, &AllStay, 0).unwrap();
        assert!(trace.records.is_empty());
        assert_eq!(metrics.total_rounds, 0);
        assert_eq!(w.placement, before.placement);
    }

    #[test]
    fn deterministic_traces() {
        let mk = || {
            let mut w = world_on_path(5, vec![0, 0, 2]);
            run(&mut w, &AllPortOne, 64).unwrap().0
        };
        let a = mk();
        let b = mk();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_trace_jsonl(&a, &mut buf_a).unwrap();
        write_trace_jsonl(&b, &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn invalid_exit_is_engine_fault() {
        struct BadPort;
        impl Algorithm for BadPort {
            fn name(&self) -> &'static str {
                "bad"
            }
            fn round_budget(&self) -> u64 {
                1
            }
            fn used_fields(&self) -> FieldSet {
                FieldSet::empty()
            }
            fn schedule(&self) -> Vec<StageSpan> {
                vec![]
            }
            fn step_group(&self, ctx: &mut GroupCtx) -> Result<Vec<MoveDecision>, EngineFault> {
                Ok(vec![MoveDecision::Exit(ctx.degree + 1); ctx.robots.len()])
            }
        }
        let mut w = world_on_path(3, vec![1]);
        let widths = WidthSpec::new(1, 2, 1);
        let err = step(&mut w, &BadPort, &widths).unwrap_err();
        assert!(matches!(err, EngineFault::InvalidExit { .. }));
    }

    #[test]
    fn width_overflow_is_memory_fault() {
        struct Overflow;
        impl Algorithm for Overflow {
            fn name(&self) -> &'static str {
                "overflow"
            }
            fn round_budget(&self) -> u64 {
                1
            }
            fn used_fields(&self) -> FieldSet {
                FieldSet::empty()
            }
            fn schedule(&self) -> Vec<StageSpan> {
                vec![]
            }
            fn step_group(&self, ctx: &mut GroupCtx) -> Result<Vec<MoveDecision>, EngineFault> {
                for r in ctx.robots.iter_mut() {
                    r.mem.treelabel = 1_000_000;
                }
                Ok(vec![MoveDecision::Stay; ctx.robots.len()])
            }
        }
        let mut w = world_on_path(3, vec![1]);
        let widths = WidthSpec::new(1, 2, 1);
        let err = step(&mut w, &Overflow, &widths).unwrap_err();
        assert!(matches!(err, EngineFault::Memory(_)));
    }

    #[test]
    fn world_rejects_bad_parameters() {
        let g = Arc::new(build_path(3).unwrap());
        assert!(WorldState::new(Arc::clone(&g), vec![]).is_err());
        assert!(WorldState::new(Arc::clone(&g), vec![0; 4]).is_err()); // k > n
        assert!(WorldState::new(Arc::clone(&g), vec![7]).is_err()); // node range
        assert!(WorldState::new(g, vec![0, 2, 1]).is_ok());
    }

    #[test]
    fn declared_widths_match_formulas() {
        // Grid parameters: k = 16, delta = 4.
        let w = WidthSpec::new(16, 4, 100);
        assert_eq!(w.width(Field::Settled), 1);
        assert_eq!(w.width(Field::Parent), 3); // ceil(log2 5)
        assert_eq!(w.width(Field::Child), 3);
        assert_eq!(w.width(Field::PortEntered), 3); // ceil(log2 6)
        assert_eq!(w.width(Field::Treelabel), 5); // ceil(log2 18)
        assert_eq!(w.width(Field::Mult), 5); // ceil(log2 17)
        assert_eq!(w.width(Field::Id), 4);
        // k = 1: id width floors at 1 bit.
        let w1 = WidthSpec::new(1, 2, 4);
        assert_eq!(w1.width(Field::Id), 1);
    }

    #[test]
    fn anonymity_under_node_relabeling() {
        // Permute grid node indices (ports preserved); the same algorithm
        // produces the permuted trace.
        use crate::graphcore::{Edge, PortGraph};
        let (g, _) = build_grid(3, LabelPolicy::Canonical).unwrap();
        let n = g.node_count();
        let perm: Vec<Node> = (0..n).map(|v| (v * 4 + 1) % n).collect();
        {
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        }
        let edges: Vec<Edge> = g
            .edge_set()
            .iter()
            .map(|e| Edge {
                u: perm[e.u],
                port_u: e.port_u,
                v: perm[e.v],
                port_v: e.port_v,
            })
            .collect();
        let g2 = PortGraph::from_edges(n, edges).unwrap();
        let start = 4usize; // grid center
        let mut w1 = WorldState::new(Arc::new(g), vec![start, start]).unwrap();
        let mut w2 = WorldState::new(Arc::new(g2), vec![perm[start], perm[start]]).unwrap();
        let (t1, _) = run(&mut w1, &AllPortOne, 16).unwrap();
        let (t2, _) = run(&mut w2, &AllPortOne, 16).unwrap();
        assert_eq!(t1.records.len(), t2.records.len());
        for (f1, f2) in t1.records.iter().zip(t2.records.iter()) {
            for (r1, r2) in f1.robots.iter().zip(f2.robots.iter()) {
                assert_eq!(perm[r1.node], r2.node);
                assert_eq!(r1.settled, r2.settled);
            }
        }
    }
}
