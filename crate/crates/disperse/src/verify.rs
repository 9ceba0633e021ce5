//! Global-view checkers and oracles.
//!
//! Everything here reads node identities, coordinates, and whole-world
//! state that robots must never see; the module boundary enforces that
//! asymmetry. Checks reference the structural facts the algorithms are
//! supposed to maintain: the stage-1 dichotomy, the sub-component map,
//! gathering completion, the per-pass halving, and the exact round and
//! memory budgets.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use crate::algo_arbitrary::{GraphDisperse, LexicoPriority, PassSchedule};
use crate::engine::{
    self, Field, RobotId, RunMetrics, RunTrace, TraceFrame, WidthSpec, WorldState,
};
use crate::graphcore::{save_graph, GridMeta, Node, NodeClass, PortGraph};

/// True iff placement is injective and every robot has settled.
pub fn check_dispersed(world: &WorldState) -> bool {
    world.is_dispersed()
}

// ---------------------------------------------------------------------------
// Component structure
// ---------------------------------------------------------------------------

/// Settled-node structure plus the unsettled census.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentReport {
    /// treelabel -> sorted settled nodes carrying it.
    pub sub_components: BTreeMap<u32, Vec<Node>>,
    /// Maximal connected sets of settled nodes, each sorted, ordered by
    /// smallest member.
    pub ccsns: Vec<Vec<Node>>,
    /// node -> (unsettled robot count, minimum unsettled id).
    pub unsettled_census: BTreeMap<Node, (usize, RobotId)>,
}

impl ComponentReport {
    /// Index of the CCSN containing `node`, if it is settled.
    pub fn ccsn_of(&self, node: Node) -> Option<usize> {
        self.ccsns.iter().position(|c| c.binary_search(&node).is_ok())
    }
}

/// Computes sub-components, CCSNs, and the unsettled census by breadth-first
/// search over settled nodes.
pub fn component_report(world: &WorldState) -> ComponentReport {
    let graph = world.graph();
    let mut settled_nodes: BTreeMap<Node, u32> = BTreeMap::new();
    let mut sub_components: BTreeMap<u32, Vec<Node>> = BTreeMap::new();
    let mut unsettled_census: BTreeMap<Node, (usize, RobotId)> = BTreeMap::new();
    for id in 1..=world.robot_count() {
        let mem = world.memory(id);
        let node = world.node_of(id);
        if mem.settled {
            settled_nodes.insert(node, mem.treelabel);
            sub_components.entry(mem.treelabel).or_default().push(node);
        } else {
            let entry = unsettled_census.entry(node).or_insert((0, id));
            entry.0 += 1;
            entry.1 = entry.1.min(id);
        }
    }
    for nodes in sub_components.values_mut() {
        nodes.sort_unstable();
    }
    let mut seen: BTreeSet<Node> = BTreeSet::new();
    let mut ccsns = Vec::new();
    for &start in settled_nodes.keys() {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = vec![];
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(u) = queue.pop_front() {
            comp.push(u);
            for p in 1..=graph.degree(u) {
                let (v, _) = graph.neighbor_via(u, p).expect("valid port");
                if settled_nodes.contains_key(&v) && seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        ccsns.push(comp);
    }
    ccsns.sort();
    ComponentReport {
        sub_components,
        ccsns,
        unsettled_census,
    }
}

// ---------------------------------------------------------------------------
// Halving monitor (trace-based)
// ---------------------------------------------------------------------------

/// Per-pass unsettled-node counts at stage-1 start and stage-2 end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HalvingReport {
    pub per_pass: Vec<(usize, usize)>,
    pub violations: Vec<String>,
}

/// Counts nodes holding unsettled robots at each pass boundary of a
/// Graph_Disperse trace and flags any pass violating
/// `u_end <= floor(u_start / 2)`. `initial` is the pre-run configuration.
pub fn halving_monitor(
    initial: &TraceFrame,
    trace: &RunTrace,
    sched: &PassSchedule,
) -> HalvingReport {
    let state_before = |round: u64| -> &TraceFrame {
        if round == 0 || trace.records.is_empty() {
            return initial;
        }
        let idx = (round as usize - 1).min(trace.records.len() - 1);
        &trace.records[idx]
    };
    let mut per_pass = Vec::new();
    let mut violations = Vec::new();
    for p in 0..sched.pass_count {
        let u_start = RunTrace::unsettled_node_count(state_before(sched.pass_start(p)));
        let u_end = RunTrace::unsettled_node_count(state_before(sched.pass_start(p + 1)));
        if u_end > u_start / 2 {
            violations.push(format!(
                "pass {}: u_end = {u_end} exceeds floor(u_start / 2) with u_start = {u_start}",
                p + 1
            ));
        }
        per_pass.push((u_start, u_end));
    }
    HalvingReport {
        per_pass,
        violations,
    }
}

// ---------------------------------------------------------------------------
// Bound auditor
// ---------------------------------------------------------------------------

/// Which algorithm's exact finite bounds to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgoKind {
    DfsSingleSource,
    GraphDisperse,
    /// Staged grid algorithm on an x-by-y grid.
    GridStaged { x: usize, y: usize },
    /// Line-walk grid algorithm; `interior_start` says whether every
    /// multi-robot pile starts on an interior node (`Some(true)`), every
    /// pile on the boundary (`Some(false)`), or mixed (`None`).
    GridSmallK {
        x: usize,
        y: usize,
        interior_start: Option<bool>,
    },
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    pub pass: bool,
    pub lines: Vec<String>,
}

impl BoundReport {
    fn check(&mut self, label: &str, actual: u64, bound: u64) {
        let ok = actual <= bound;
        self.pass &= ok;
        self.lines.push(format!(
            "{}: {} <= {} [{}] (margin {})",
            label,
            actual,
            bound,
            if ok { "ok" } else { "FAIL" },
            bound as i64 - actual as i64
        ));
    }
}

/// Checks the exact finite round bounds for a completed run.
pub fn bound_auditor(
    metrics: &RunMetrics,
    n: usize,
    m: usize,
    k: u32,
    delta: u8,
    kind: AlgoKind,
) -> BoundReport {
    let mut report = BoundReport {
        pass: true,
        lines: Vec::new(),
    };
    let rtd = match metrics.rounds_to_dispersion {
        Some(r) => r,
        None => {
            report.pass = false;
            report.lines.push("dispersion not reached [FAIL]".into());
            return report;
        }
    };
    let traversal = (4 * m as u64).saturating_sub(2 * n as u64) + 2;
    match kind {
        AlgoKind::DfsSingleSource => {
            let bound = if n <= 1 {
                1
            } else {
                traversal.min(k as u64 * delta as u64)
            };
            report.check("dfs rounds", rtd, bound);
        }
        AlgoKind::GraphDisperse => {
            let sched = PassSchedule::new(n, m, k, delta);
            report.check("graph rounds", rtd, sched.total_budget());
            report.check("graph passes", metrics.passes_used, sched.pass_count);
            report.check(
                "graph final-pass stage-1 completion",
                rtd,
                sched.pass_start(sched.pass_count - 1) + sched.stage1_budget,
            );
        }
        AlgoKind::GridStaged { x, y } => {
            // Squares carry the exact five-stage sum; rectangles the
            // longer-dimension analogue.
            let side = x.max(y) as u64;
            let bound = if x == y { 17 * side - 14 } else { 17 * side };
            report.check("grid rounds", rtd, bound);
        }
        AlgoKind::GridSmallK {
            x: _,
            y: _,
            interior_start,
        } => {
            let kk = k as u64;
            let bound = match interior_start {
                Some(true) => 2 * kk - 1,
                Some(false) => kk + 4,
                None => (2 * kk - 1).max(kk + 4),
            };
            report.check("small-k rounds", rtd, bound);
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Deep auditor for Graph_Disperse
// ---------------------------------------------------------------------------

/// Result of re-executing a Graph_Disperse run with invariant checks at
/// every stage and pass boundary.
#[derive(Debug, Clone)]
pub struct GraphAudit {
    pub violations: Vec<String>,
    pub rounds_to_dispersion: Option<u64>,
    pub passes_used: u64,
}

impl GraphAudit {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn unsettled_groups(world: &WorldState) -> BTreeMap<Node, Vec<RobotId>> {
    let mut groups: BTreeMap<Node, Vec<RobotId>> = BTreeMap::new();
    for id in 1..=world.robot_count() {
        if !world.memory(id).settled {
            groups.entry(world.node_of(id)).or_default().push(id);
        }
    }
    groups
}

fn settled_robot_at(world: &WorldState, node: Node) -> Option<RobotId> {
    (1..=world.robot_count())
        .find(|&id| world.memory(id).settled && world.node_of(id) == node)
}

/// Runs Graph_Disperse on the given placement, checking the stage-1
/// dichotomy, the sub-component map, gathering completion, halving, and the
/// final budgets. Violations are collected, not panicked.
pub fn audit_graph_run(
    graph: &Arc<PortGraph>,
    placement: &[Node],
) -> Result<GraphAudit, engine::EngineFault> {
    let k = placement.len() as u32;
    let algo = GraphDisperse::new(graph.node_count(), graph.edge_count(), k, graph.max_degree());
    audit_graph_run_with(graph, placement, &algo)
}

pub(crate) fn audit_graph_run_with(
    graph: &Arc<PortGraph>,
    placement: &[Node],
    algo: &GraphDisperse,
) -> Result<GraphAudit, engine::EngineFault> {
    let k = placement.len() as u32;
    let sched = algo.pass_schedule().clone();
    let widths = WidthSpec::new(k, graph.max_degree(), sched.total_budget());
    let mut world = WorldState::new(Arc::clone(graph), placement.to_vec())?;
    let mut violations = Vec::new();
    let mut rounds_to_dispersion = None;
    let mut passes_used = 0;

    'passes: for p in 0..sched.pass_count {
        passes_used = p + 1;
        let start_groups = unsettled_groups(&world);
        let u_start = start_groups.len();

        for _ in 0..sched.stage1_budget {
            engine::step(&mut world, algo, &widths)?;
            if rounds_to_dispersion.is_none() && world.is_dispersed() {
                rounds_to_dispersion = Some(world.global_round());
            }
        }

        // Stage-1 dichotomy per start group: fully settled, or the
        // unsettled remainder sits together at one node whose settled
        // robot's treelabel is below the group minimum.
        for (v, ids) in &start_groups {
            let min_id = ids[0];
            let unsettled_now: Vec<RobotId> = ids
                .iter()
                .copied()
                .filter(|&id| !world.memory(id).settled)
                .collect();
            if unsettled_now.is_empty() {
                continue;
            }
            if world.memory(min_id).settled {
                violations.push(format!(
                    "pass {}: group at node {v} has its minimum id {min_id} settled \
                     while {unsettled_now:?} are not",
                    p + 1
                ));
                continue;
            }
            let nodes: BTreeSet<Node> =
                unsettled_now.iter().map(|&id| world.node_of(id)).collect();
            if nodes.len() != 1 {
                violations.push(format!(
                    "pass {}: group at node {v} scattered over nodes {nodes:?} at stage-1 end",
                    p + 1
                ));
                continue;
            }
            let w = *nodes.iter().next().unwrap();
            match settled_robot_at(&world, w) {
                None => violations.push(format!(
                    "pass {}: stopped group from node {v} sits at free node {w}",
                    p + 1
                )),
                Some(r) => {
                    let label = world.memory(r).treelabel;
                    if label >= min_id {
                        violations.push(format!(
                            "pass {}: stopped group from node {v} sits at node {w} whose \
                             treelabel {label} is not below the group minimum {min_id}",
                            p + 1
                        ));
                    }
                }
            }
        }

        // Group count decreases by at least one per stage 1.
        let u_e1 = unsettled_groups(&world).len();
        if u_start > 0 && u_e1 > u_start - 1 {
            violations.push(format!(
                "pass {}: stage-1 group count did not decrease ({u_start} -> {u_e1})",
                p + 1
            ));
        }

        // Sub-component map: every real treelabel is the minimum of some
        // start group, and each sub-component lies inside one CCSN.
        let report = component_report(&world);
        let group_minima: BTreeSet<u32> = start_groups.values().map(|ids| ids[0]).collect();
        for (&label, nodes) in &report.sub_components {
            if label > k {
                continue; // top sentinel: robots settled in place
            }
            if !group_minima.contains(&label) {
                violations.push(format!(
                    "pass {}: settled treelabel {label} matches no start-group minimum",
                    p + 1
                ));
            }
            let ccsn_ids: BTreeSet<usize> = nodes
                .iter()
                .map(|&v| report.ccsn_of(v).expect("settled node in a CCSN"))
                .collect();
            if ccsn_ids.len() > 1 {
                violations.push(format!(
                    "pass {}: sub-component {label} spans multiple CCSNs",
                    p + 1
                ));
            }
        }

        if world.is_dispersed() {
            break 'passes;
        }

        // Stage-2 start: record each CCSN's expected winner.
        let occupancy = world.occupancy();
        let boundary_report = component_report(&world);
        let mut expected_winner: BTreeMap<usize, (LexicoPriority, RobotId)> = BTreeMap::new();
        for &node in boundary_report.unsettled_census.keys() {
            let Some(ccsn) = boundary_report.ccsn_of(node) else {
                continue;
            };
            let ids = occupancy.get(&node).expect("census node occupied");
            let count = ids.len() as u32;
            for &id in ids {
                if world.memory(id).settled {
                    continue;
                }
                let lp = LexicoPriority {
                    mult: count,
                    label: id,
                };
                let entry = expected_winner.entry(ccsn).or_insert((lp, id));
                if lp > entry.0 {
                    *entry = (lp, id);
                }
            }
        }

        for _ in 0..sched.stage2_budget {
            engine::step(&mut world, algo, &widths)?;
            if rounds_to_dispersion.is_none() && world.is_dispersed() {
                rounds_to_dispersion = Some(world.global_round());
            }
        }

        // Stage-2 end: gathering completed per CCSN; settled priorities
        // equal the winner's; winner parked at home; halving holds.
        for (&ccsn_idx, &(lp, winner)) in &expected_winner {
            let nodes = &boundary_report.ccsns[ccsn_idx];
            let mut gather_nodes: BTreeSet<Node> = BTreeSet::new();
            for id in 1..=world.robot_count() {
                if !world.memory(id).settled && nodes.binary_search(&world.node_of(id)).is_ok() {
                    gather_nodes.insert(world.node_of(id));
                }
            }
            if gather_nodes.len() > 1 {
                violations.push(format!(
                    "pass {}: CCSN {ccsn_idx} still has unsettled robots at {} nodes \
                     at stage-2 end",
                    p + 1,
                    gather_nodes.len()
                ));
            }
            for &v in nodes {
                if let Some(r) = settled_robot_at(&world, v) {
                    let mem = world.memory(r);
                    let actual = LexicoPriority {
                        mult: mem.mult,
                        label: mem.treelabel,
                    };
                    if actual != lp {
                        violations.push(format!(
                            "pass {}: settled robot {r} carries priority ({}, {}) instead of \
                             the winner's ({}, {})",
                            p + 1,
                            actual.mult,
                            actual.label,
                            lp.mult,
                            lp.label
                        ));
                    }
                }
            }
            if !world.memory(winner).settled {
                let home = world.memory(winner).home;
                let at = world.node_of(winner);
                match settled_robot_at(&world, at) {
                    Some(r) if r == home => {}
                    _ => violations.push(format!(
                        "pass {}: winner {winner} is not at its home node at stage-2 end",
                        p + 1
                    )),
                }
            }
        }
        for id in 1..=world.robot_count() {
            if !world.memory(id).settled
                && settled_robot_at(&world, world.node_of(id)).is_none()
            {
                violations.push(format!(
                    "pass {}: unsettled robot {id} is at a free node at stage-2 end",
                    p + 1
                ));
            }
        }
        let u_end = unsettled_groups(&world).len();
        if u_end > u_start / 2 {
            violations.push(format!(
                "pass {}: halving violated ({u_start} -> {u_end})",
                p + 1
            ));
        }
        if world.is_dispersed() {
            break 'passes;
        }
    }

    if !world.is_dispersed() {
        violations.push("not dispersed within the pass budget".into());
    }
    if let Some(r) = rounds_to_dispersion {
        let last_stage1_end = sched.pass_start(sched.pass_count - 1) + sched.stage1_budget;
        if r > last_stage1_end {
            violations.push(format!(
                "dispersion at round {r} is later than stage 1 of the final pass \
                 ({last_stage1_end})"
            ));
        }
    }
    Ok(GraphAudit {
        violations,
        rounds_to_dispersion,
        passes_used,
    })
}

// ---------------------------------------------------------------------------
// Deep auditor for Grid_Disperse
// ---------------------------------------------------------------------------

/// Result of re-executing a grid run with stage post-state checks.
#[derive(Debug, Clone)]
pub struct GridAudit {
    pub violations: Vec<String>,
    pub rounds_to_dispersion: Option<u64>,
}

impl GridAudit {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Whether every multi-robot pile starts interior (`Some(true)`), every
/// pile starts on the boundary (`Some(false)`), or mixed (`None`).
pub fn pile_start_class(meta: &GridMeta, placement: &[Node]) -> Option<bool> {
    let mut counts: BTreeMap<Node, usize> = BTreeMap::new();
    for &v in placement {
        *counts.entry(v).or_default() += 1;
    }
    let piles: Vec<Node> = counts
        .into_iter()
        .filter(|&(_, c)| c >= 2)
        .map(|(v, _)| v)
        .collect();
    if piles.is_empty() {
        return Some(true);
    }
    let interior = piles
        .iter()
        .filter(|&&v| meta.class(v) == NodeClass::Interior)
        .count();
    if interior == piles.len() {
        Some(true)
    } else if interior == 0 {
        Some(false)
    } else {
        None
    }
}

/// All positions in `positions` lie on a single grid row or column.
fn on_one_line(meta: &GridMeta, positions: &[Node]) -> bool {
    positions.iter().all(|&v| meta.row(v) == meta.row(positions[0]))
        || positions.iter().all(|&v| meta.col(v) == meta.col(positions[0]))
}

/// Runs Grid_Disperse on the placement, checking the staged post-states
/// (boundary by stage 1, corners by stage 2, one corner by stage 3, a
/// boundary-line prefix within capacity by stage 4), straight-line motion,
/// dispersion, exact cover for `k = n`, and the round bounds.
pub fn audit_grid_run(
    graph: &Arc<PortGraph>,
    meta: &GridMeta,
    placement: &[Node],
    policy: crate::engine::ChoicePolicy,
) -> Result<GridAudit, engine::EngineFault> {
    use crate::algo_grid::{GridDisperse, GridStage};
    use crate::engine::Algorithm;

    let k = placement.len() as u32;
    let (x, y) = (meta.width(), meta.height());
    let n = graph.node_count();
    let algo = GridDisperse::new(x, y, k, policy);
    let widths = WidthSpec::new(k, graph.max_degree(), algo.round_budget());
    let mut world = WorldState::new(Arc::clone(graph), placement.to_vec())?;
    let mut violations = Vec::new();
    let mut rounds_to_dispersion = None;
    let track = |world: &WorldState, rtd: &mut Option<u64>| {
        if rtd.is_none() && world.is_dispersed() {
            *rtd = Some(world.global_round());
        }
    };

    if let Some(sched) = algo.stage_schedule().cloned() {
        // Stage 1 with per-robot trajectory recording.
        let mut stage1_paths: Vec<Vec<Node>> =
            (1..=k).map(|id| vec![world.node_of(id)]).collect();
        for _ in 0..sched.stage_len(GridStage::One) {
            engine::step(&mut world, &algo, &widths)?;
            track(&world, &mut rounds_to_dispersion);
            for id in 1..=k {
                stage1_paths[(id - 1) as usize].push(world.node_of(id));
            }
        }
        for (i, path) in stage1_paths.iter().enumerate() {
            let mut dedup = path.clone();
            dedup.dedup();
            if !on_one_line(meta, &dedup) {
                violations.push(format!(
                    "robot {} left its stage-1 line: {dedup:?}",
                    i + 1
                ));
            }
        }
        for id in 1..=k {
            if meta.class(world.node_of(id)) == NodeClass::Interior {
                violations.push(format!("robot {id} not on the boundary after stage 1"));
            }
        }

        for _ in 0..sched.stage_len(GridStage::Two) {
            engine::step(&mut world, &algo, &widths)?;
            track(&world, &mut rounds_to_dispersion);
        }
        for id in 1..=k {
            if meta.class(world.node_of(id)) != NodeClass::Corner {
                violations.push(format!("robot {id} not at a corner after stage 2"));
            }
        }

        for _ in 0..sched.stage_len(GridStage::Three) {
            engine::step(&mut world, &algo, &widths)?;
            track(&world, &mut rounds_to_dispersion);
        }
        {
            let nodes: BTreeSet<Node> = (1..=k).map(|id| world.node_of(id)).collect();
            if nodes.len() != 1 {
                violations.push(format!(
                    "robots at {} distinct nodes after stage 3",
                    nodes.len()
                ));
            } else {
                let gather = *nodes.iter().next().unwrap();
                if world.node_of(1) != gather {
                    violations.push("gathering corner does not hold robot 1".into());
                }
            }
        }

        let ladder = x != y && x.min(y) == 2;
        for _ in 0..sched.stage_len(GridStage::Four) {
            engine::step(&mut world, &algo, &widths)?;
            track(&world, &mut rounds_to_dispersion);
            if ladder && world.is_dispersed() {
                break;
            }
        }
        if !ladder {
            let occupancy = world.occupancy();
            let occupied: Vec<Node> = occupancy.keys().copied().collect();
            if !on_one_line(meta, &occupied) {
                violations.push(format!(
                    "stage-4 deposits not on one boundary line: {occupied:?}"
                ));
            } else if !occupied
                .iter()
                .all(|&v| meta.class(v) != NodeClass::Interior)
            {
                violations.push("stage-4 deposits include interior nodes".into());
            } else {
                // Contiguous prefix starting at a corner.
                let mut rows: Vec<usize> = occupied.iter().map(|&v| meta.row(v)).collect();
                let mut cols: Vec<usize> = occupied.iter().map(|&v| meta.col(v)).collect();
                rows.sort_unstable();
                rows.dedup();
                cols.sort_unstable();
                cols.dedup();
                let along_row = rows.len() == 1;
                let coords: &Vec<usize> = if along_row { &cols } else { &rows };
                let contiguous = coords.windows(2).all(|w| w[1] == w[0] + 1);
                let anchored = coords.first() == Some(&0)
                    || coords.last() == Some(&(if along_row { x - 1 } else { y - 1 }));
                if !contiguous || !anchored {
                    violations.push(format!(
                        "stage-4 deposits are not a corner-anchored prefix: {occupied:?}"
                    ));
                }
                // Capacity: each group must fit its perpendicular line.
                let capacity = if along_row { y } else { x };
                for (&v, ids) in &occupancy {
                    if ids.len() > capacity {
                        violations.push(format!(
                            "stage-4 deposit of {} robots at node {v} exceeds the \
                             perpendicular capacity {capacity}",
                            ids.len()
                        ));
                    }
                }
            }
        }

        let mut stage5_paths: Vec<Vec<Node>> =
            (1..=k).map(|id| vec![world.node_of(id)]).collect();
        if !world.is_dispersed() {
            for _ in 0..sched.stage_len(GridStage::Five) {
                engine::step(&mut world, &algo, &widths)?;
                track(&world, &mut rounds_to_dispersion);
                for id in 1..=k {
                    stage5_paths[(id - 1) as usize].push(world.node_of(id));
                }
                if world.is_dispersed() {
                    break;
                }
            }
        }
        if !ladder {
            for (i, path) in stage5_paths.iter().enumerate() {
                let mut dedup = path.clone();
                dedup.dedup();
                if !on_one_line(meta, &dedup) {
                    violations.push(format!(
                        "robot {} left its stage-5 line: {dedup:?}",
                        i + 1
                    ));
                }
            }
        }
    } else {
        let cap = algo.round_budget();
        for _ in 0..cap {
            engine::step(&mut world, &algo, &widths)?;
            track(&world, &mut rounds_to_dispersion);
            if world.is_dispersed() {
                break;
            }
        }
    }

    if !world.is_dispersed() {
        violations.push("not dispersed within the schedule".into());
    } else if k as usize == n {
        let nodes: BTreeSet<Node> = (1..=k).map(|id| world.node_of(id)).collect();
        if nodes.len() != n {
            violations.push("k = n but cover is not exact".into());
        }
    }

    // Round bounds.
    let kind = if algo.is_staged() {
        AlgoKind::GridStaged { x, y }
    } else {
        AlgoKind::GridSmallK {
            x,
            y,
            interior_start: pile_start_class(meta, placement),
        }
    };
    if let Some(rtd) = rounds_to_dispersion {
        let metrics = RunMetrics {
            rounds_to_dispersion: Some(rtd),
            total_rounds: rtd,
            passes_used: 1,
            max_memory_bits: widths.total_bits(algo.used_fields()),
            per_stage_active_rounds: vec![],
        };
        let report = bound_auditor(&metrics, n, graph.edge_count(), k, 4, kind);
        if !report.pass {
            violations.extend(report.lines.into_iter().filter(|l| l.contains("FAIL")));
        }
        // Memory pin: the grid algorithm's non-round registered bits.
        let non_round = widths.total_bits(algo.used_fields()) - widths.width(Field::Round);
        let log_k2 = 32 - (k + 1).leading_zeros();
        if non_round > 4 * log_k2 + 12 {
            violations.push(format!(
                "grid memory {non_round} bits exceeds 4*ceil(log2(k+2)) + 12 = {}",
                4 * log_k2 + 12
            ));
        }
    }
    Ok(GridAudit {
        violations,
        rounds_to_dispersion,
    })
}

/// Exhaustively audits Grid_Disperse over every placement multiset of
/// `k <= n` robots on the given grid dimensions.
pub fn exhaustive_oracle_grids(
    dims: &[(usize, usize)],
    policy: crate::engine::ChoicePolicy,
) -> Result<Option<Counterexample>, engine::EngineFault> {
    exhaustive_oracle_grids_labeled(dims, policy, crate::graphcore::LabelPolicy::Canonical)
}

/// [`exhaustive_oracle_grids`] under an explicit port-label policy.
pub fn exhaustive_oracle_grids_labeled(
    dims: &[(usize, usize)],
    policy: crate::engine::ChoicePolicy,
    label: crate::graphcore::LabelPolicy,
) -> Result<Option<Counterexample>, engine::EngineFault> {
    use crate::graphcore::build_rect_grid;
    for &(x, y) in dims {
        let (graph, meta) = build_rect_grid(x, y, label)
            .map_err(|e| engine::EngineFault::Algorithm(e.to_string()))?;
        let graph = Arc::new(graph);
        let n = graph.node_count();
        for k in 1..=n as u32 {
            for placement in placements_multiset(n, k) {
                let audit = match audit_grid_run(&graph, &meta, &placement, policy) {
                    Ok(a) => a,
                    Err(fault) => {
                        return Ok(Some(Counterexample::new(
                            &graph,
                            &placement,
                            format!("engine fault: {fault}"),
                        )))
                    }
                };
                if !audit.ok() {
                    return Ok(Some(Counterexample::new(
                        &graph,
                        &placement,
                        audit.violations.join("; "),
                    )));
                }
            }
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Exhaustive oracle
// ---------------------------------------------------------------------------

/// A minimized failing instance, with everything needed to reproduce it.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub n: usize,
    pub m: usize,
    pub k: u32,
    pub graph_text: String,
    pub placement: Vec<Node>,
    pub violation: String,
}

impl Counterexample {
    pub(crate) fn new(graph: &PortGraph, placement: &[Node], violation: String) -> Counterexample {
        let mut text = Vec::new();
        save_graph(graph, &mut text).expect("in-memory write");
        Counterexample {
            n: graph.node_count(),
            m: graph.edge_count(),
            k: placement.len() as u32,
            graph_text: String::from_utf8(text).expect("ascii"),
            placement: placement.to_vec(),
            violation,
        }
    }

    /// Writes a reproducer directory: the graph file, the placement list,
    /// and the first violated invariant.
    pub fn write_reproducer(&self, dir: &std::path::Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("graph.txt"), &self.graph_text)?;
        let placement = self
            .placement
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("\n");
        std::fs::write(dir.join("placement.txt"), placement + "\n")?;
        std::fs::write(dir.join("violation.txt"), format!("{}\n", self.violation))?;
        Ok(())
    }
}

/// All multisets of `k` nodes out of `0..n`, as non-decreasing vectors.
/// Robot ids are dealt in node order when such a placement is used.
pub fn placements_multiset(n: usize, k: u32) -> Vec<Vec<Node>> {
    fn rec(n: usize, k: usize, lo: usize, current: &mut Vec<Node>, out: &mut Vec<Vec<Node>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for v in lo..n {
            current.push(v);
            rec(n, k, v, current, out);
            current.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, k as usize, 0, &mut Vec::with_capacity(k as usize), &mut out);
    out
}

/// Every connected graph on exactly `n` labeled nodes with the canonical
/// port labeling (ports at each node ordered by neighbor index), ordered by
/// edge count. Coverage rule: all edge subsets of the complete graph are
/// enumerated; no isomorphism deduplication is applied.
pub fn connected_graphs(n: usize) -> Vec<PortGraph> {
    if n == 1 {
        return vec![PortGraph::from_edges(1, vec![]).expect("single node")];
    }
    let pairs: Vec<(Node, Node)> = (0..n)
        .flat_map(|u| ((u + 1)..n).map(move |v| (u, v)))
        .collect();
    let mut by_m: Vec<Vec<PortGraph>> = vec![Vec::new(); pairs.len() + 1];
    for mask in 0u32..(1u32 << pairs.len()) {
        let chosen: Vec<(Node, Node)> = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &e)| e)
            .collect();
        if chosen.len() < n - 1 {
            continue;
        }
        if let Some(g) = canonical_ports(n, &chosen) {
            by_m[chosen.len()].push(g);
        }
    }
    by_m.into_iter().flatten().collect()
}

/// Assigns ports at each node in neighbor-index order; `None` when the
/// edge set is not a connected simple graph on all `n` nodes.
fn canonical_ports(n: usize, undirected: &[(Node, Node)]) -> Option<PortGraph> {
    let mut incident: Vec<Vec<(Node, usize)>> = vec![Vec::new(); n];
    for (idx, &(u, v)) in undirected.iter().enumerate() {
        incident[u].push((v, idx));
        incident[v].push((u, idx));
    }
    let mut port_of: BTreeMap<(usize, Node), u8> = BTreeMap::new();
    for (u, list) in incident.iter_mut().enumerate() {
        list.sort_unstable();
        for (i, &(_, idx)) in list.iter().enumerate() {
            port_of.insert((idx, u), i as u8 + 1);
        }
    }
    let edges = undirected
        .iter()
        .enumerate()
        .map(|(idx, &(u, v))| crate::graphcore::Edge {
            u,
            port_u: port_of[&(idx, u)],
            v,
            port_v: port_of[&(idx, v)],
        })
        .collect();
    PortGraph::from_edges(n, edges).ok()
}

/// Exhaustively audits Graph_Disperse over every connected graph with
/// `n <= n_max` (canonical ports) and every placement multiset of
/// `k <= k_max` robots. Returns the first counterexample in
/// (n, m, k, placement) order, or `None`. Enumeration is feasible only for
/// tiny sizes; larger requests are reported as over budget, not silently
/// truncated.
pub fn exhaustive_oracle_graphs(
    n_max: usize,
    k_max: u32,
) -> Result<Option<Counterexample>, engine::EngineFault> {
    if n_max > 6 {
        return Err(engine::EngineFault::Algorithm(format!(
            "enumeration budget exceeded: all connected graphs on {n_max} nodes \
             are not tractable (cap is 6)"
        )));
    }
    exhaustive_graphs_inner(n_max, k_max, false)
}

pub(crate) fn exhaustive_graphs_inner(
    n_max: usize,
    k_max: u32,
    broken: bool,
) -> Result<Option<Counterexample>, engine::EngineFault> {
    for n in 1..=n_max {
        for graph in connected_graphs(n) {
            let graph = Arc::new(graph);
            for k in 1..=k_max.min(n as u32) {
                let algo = if broken {
                    GraphDisperse::with_broken_priority(
                        n,
                        graph.edge_count(),
                        k,
                        graph.max_degree(),
                    )
                } else {
                    GraphDisperse::new(n, graph.edge_count(), k, graph.max_degree())
                };
                for placement in placements_multiset(n, k) {
                    let audit = match audit_graph_run_with(&graph, &placement, &algo) {
                        Ok(a) => a,
                        Err(fault) => {
                            return Ok(Some(Counterexample::new(
                                &graph,
                                &placement,
                                format!("engine fault: {fault}"),
                            )))
                        }
                    };
                    if !audit.ok() {
                        return Ok(Some(Counterexample::new(
                            &graph,
                            &placement,
                            audit.violations.join("; "),
                        )));
                    }
                }
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo_arbitrary::DfsSingleSource;
    use crate::engine::run;
    use crate::graphcore::{build_path, build_random_connected, build_ring};

    #[test]
    fn dispersed_predicate() {
        let g = Arc::new(build_path(3).unwrap());
        let algo = DfsSingleSource::new(3, 2, 2, 2);
        let mut w = WorldState::new(Arc::clone(&g), vec![0, 0]).unwrap();
        assert!(!check_dispersed(&w));
        run(&mut w, &algo, u64::MAX).unwrap();
        assert!(check_dispersed(&w));
        // Distinct nodes but unsettled robots: not dispersed.
        let w2 = WorldState::new(g, vec![0, 1]).unwrap();
        assert!(!check_dispersed(&w2));
    }

    #[test]
    fn component_report_after_dfs() {
        let g = Arc::new(build_ring(5).unwrap());
        let algo = DfsSingleSource::new(5, 5, 4, 2);
        let mut w = WorldState::new(g, vec![1; 4]).unwrap();
        run(&mut w, &algo, u64::MAX).unwrap();
        let report = component_report(&w);
        // One tree, label 1, all settled nodes connected: one CCSN.
        assert_eq!(report.sub_components.len(), 1);
        assert!(report.sub_components.contains_key(&1));
        assert_eq!(report.ccsns.len(), 1);
        assert!(report.unsettled_census.is_empty());
    }

    #[test]
    fn component_report_empty_world() {
        let g = Arc::new(build_path(4).unwrap());
        let w = WorldState::new(g, vec![0, 1]).unwrap();
        let report = component_report(&w);
        assert!(report.sub_components.is_empty());
        assert!(report.ccsns.is_empty());
        assert_eq!(report.unsettled_census.len(), 2);
    }

    #[test]
    fn adjacent_sub_components_share_a_ccsn() {
        // Two groups on the inner nodes of P4: after stage 1 of pass 1,
        // trees 1 and 3 have settled adjacent nodes and the stopped robot 3
        // waits on tree 1, so there are two sub-components in one CCSN.
        let g = Arc::new(build_path(4).unwrap());
        let algo = GraphDisperse::new(4, 3, 4, 2);
        let sched = algo.pass_schedule().clone();
        let widths = WidthSpec::new(4, 2, sched.total_budget());
        let mut w = WorldState::new(g, vec![1, 1, 2, 2]).unwrap();
        for _ in 0..sched.stage1_budget {
            engine::step(&mut w, &algo, &widths).unwrap();
        }
        let report = component_report(&w);
        assert_eq!(report.sub_components.len(), 2);
        assert!(report.sub_components.contains_key(&1));
        assert!(report.sub_components.contains_key(&3));
        assert_eq!(report.ccsns.len(), 1);
        assert_eq!(report.unsettled_census.len(), 1);
        // Idempotent and order-independent: recomputing gives the same report.
        assert_eq!(report, component_report(&w));
    }

    #[test]
    fn audit_accepts_correct_runs() {
        let g = Arc::new(build_random_connected(12, 20, 5).unwrap());
        for placement in [vec![0; 6], vec![0, 0, 3, 3, 7, 9], vec![1, 2, 4, 6, 8, 10]] {
            let audit = audit_graph_run(&g, &placement).unwrap();
            assert!(audit.ok(), "violations: {:?}", audit.violations);
        }
    }

    #[test]
    fn oracle_p3_all_placements() {
        for k in 1..=3u32 {
            for placement in placements_multiset(3, k) {
                let g = Arc::new(build_path(3).unwrap());
                let audit = audit_graph_run(&g, &placement).unwrap();
                assert!(
                    audit.ok(),
                    "placement {placement:?} k={k}: {:?}",
                    audit.violations
                );
            }
        }
    }

    #[test]
    fn oracle_small_graphs() {
        // Fast smoke version of the acceptance-scale oracle.
        let cex = exhaustive_oracle_graphs(4, 3).unwrap();
        assert!(cex.is_none(), "counterexample: {cex:?}");
    }

    #[test]
    fn broken_priority_is_caught() {
        let cex = exhaustive_graphs_inner(5, 4, true).unwrap();
        assert!(
            cex.is_some(),
            "mutated stage-2 priority must produce a counterexample"
        );
    }

    #[test]
    fn halving_monitor_counts() {
        let g = Arc::new(build_path(6).unwrap());
        let k = 6u32;
        let algo = GraphDisperse::new(6, 5, k, 2);
        let sched = algo.pass_schedule().clone();
        let mut w = WorldState::new(g, vec![0, 0, 0, 5, 5, 5]).unwrap();
        let initial = TraceFrame::of_world(&w, 0);
        let (trace, _) = run(&mut w, &algo, u64::MAX).unwrap();
        let report = halving_monitor(&initial, &trace, &sched);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        assert_eq!(report.per_pass[0].0, 2);
        assert_eq!(report.per_pass.last().unwrap().1, 0);
    }

    #[test]
    fn bound_auditor_flags_excess() {
        let metrics = RunMetrics {
            rounds_to_dispersion: Some(100),
            total_rounds: 100,
            passes_used: 1,
            max_memory_bits: 10,
            per_stage_active_rounds: vec![],
        };
        let report = bound_auditor(&metrics, 4, 3, 2, 2, AlgoKind::DfsSingleSource);
        assert!(!report.pass);
        let good = RunMetrics {
            rounds_to_dispersion: Some(3),
            ..metrics
        };
        let report = bound_auditor(&good, 4, 3, 2, 2, AlgoKind::DfsSingleSource);
        assert!(report.pass, "{:?}", report.lines);
    }
}
