//! Dispersion on arbitrary anonymous graphs.
//!
//! Two algorithms share one DFS core:
//!
//! * [`DfsSingleSource`] — all robots start at one node and disperse along a
//!   single DFS tree in at most `min(4m - 2n + 2, k*delta)` rounds;
//! * [`GraphDisperse`] — arbitrary placements, running `ceil(log2 k)` passes
//!   of two stages: parallel group DFS (trees may stop or absorb each other)
//!   and a gathering traversal of each connected component of settled nodes
//!   driven by lexico-priority.
//!
//! Settled robots act as movable signage: traversal state (`parent`,
//! `child`, `treelabel`) lives in the settled robot at each node, and the
//! moving group reads and rewrites it on arrival.

use crate::engine::{
    Algorithm, EngineFault, Field, FieldSet, GroupCtx, MoveDecision, StageSpan,
};
use crate::graphcore::Port;

/// Total order governing which stage-2 gathering traversal survives:
/// higher `mult` wins; ties break toward the lower label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LexicoPriority {
    pub mult: u32,
    pub label: u32,
}

impl PartialOrd for LexicoPriority {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for LexicoPriority {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.mult
            .cmp(&other.mult)
            .then_with(|| other.label.cmp(&self.label))
    }
}

/// Round offsets of the pass/stage structure, computed from the known
/// parameters exactly as the budgets state.
#[derive(Debug, Clone)]
pub struct PassSchedule {
    pub pass_count: u64,
    pub stage1_budget: u64,
    pub stage2_budget: u64,
}

/// Stage of the current round within its pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassStage {
    One,
    Two,
}

impl PassSchedule {
    pub fn new(n: usize, m: usize, k: u32, delta: u8) -> PassSchedule {
        if n <= 1 {
            // Degenerate single-node world: one settle-in-place round.
            return PassSchedule {
                pass_count: 1,
                stage1_budget: 1,
                stage2_budget: 0,
            };
        }
        let traversal = (4 * m as u64).saturating_sub(2 * n as u64) + 2;
        let kd = k as u64 * delta as u64;
        let passes = ceil_log2_u64(k as u64).max(1);
        PassSchedule {
            pass_count: passes,
            stage1_budget: traversal.min(kd),
            stage2_budget: traversal.min(2 * kd),
        }
    }

    pub fn pass_len(&self) -> u64 {
        self.stage1_budget + self.stage2_budget
    }

    pub fn total_budget(&self) -> u64 {
        self.pass_count * self.pass_len()
    }

    /// Maps an absolute round to (pass index, stage, round within stage).
    pub fn locate(&self, round: u64) -> (u64, PassStage, u64) {
        let pass = (round / self.pass_len()).min(self.pass_count - 1);
        let within = round - pass * self.pass_len();
        if within < self.stage1_budget {
            (pass, PassStage::One, within)
        } else {
            (pass, PassStage::Two, within - self.stage1_budget)
        }
    }

    /// Absolute round at which pass `p` starts.
    pub fn pass_start(&self, p: u64) -> u64 {
        p * self.pass_len()
    }

    /// Absolute round of the stage-1/stage-2 boundary of pass `p`.
    pub fn stage_boundary(&self, p: u64) -> u64 {
        p * self.pass_len() + self.stage1_budget
    }
}

fn ceil_log2_u64(v: u64) -> u64 {
    if v <= 1 {
        0
    } else {
        (64 - (v - 1).leading_zeros()) as u64
    }
}

/// Advances a settled robot's child pointer to the smallest untaken port,
/// skipping the parent port. `None` means every port has been taken.
fn next_child(parent: Port, old_child: Port, degree: u8) -> Option<Port> {
    let mut c = old_child + 1;
    if c == parent {
        c += 1;
    }
    (c <= degree).then_some(c)
}

/// DFS movement phase carried in the moving robots' `stage` field. Entry
/// ports alone cannot distinguish a forward arrival along a non-tree edge
/// from a backtrack return when the port numbers collide; the phase bit
/// makes the distinction exact.
const PHASE_FORWARD: u8 = 0;
const PHASE_BACKTRACK: u8 = 1;

/// Indices of settled robot (at most one) and unsettled robots (id order).
fn split_group(ctx: &GroupCtx) -> Result<(Option<usize>, Vec<usize>), EngineFault> {
    let mut settled = None;
    let mut unsettled = Vec::new();
    for (i, r) in ctx.robots.iter().enumerate() {
        if r.mem.settled {
            if settled.replace(i).is_some() {
                return Err(EngineFault::Algorithm(
                    "two settled robots share a node".into(),
                ));
            }
        } else {
            unsettled.push(i);
        }
    }
    Ok((settled, unsettled))
}

/// One round of the group-DFS of stage 1 (also the whole of `DFS(k)`).
///
/// The four visited-node cases: free node — the highest-id visitor settles
/// and the lowest-id visitor's DFS continues; settled node with treelabel
/// below / equal to / above the lowest visitor id — stop, continue own
/// tree, or absorb the node into the visitor's tree.
fn dfs_group_step(
    ctx: &mut GroupCtx,
    stage_round0: bool,
    global_round0: bool,
) -> Result<Vec<MoveDecision>, EngineFault> {
    let degree = ctx.degree;
    let mut decisions = vec![MoveDecision::Stay; ctx.robots.len()];
    let (settled_at, unsettled) = split_group(ctx)?;
    if unsettled.is_empty() {
        return Ok(decisions);
    }
    let x = unsettled[0];
    let x_id = ctx.robots[x].mem.id;
    // Group entry facts apply only to robots that moved last round; at a
    // stage boundary the DFS (re)starts from rest, so the start node is a
    // root regardless of any stale movement.
    let x_entry = if stage_round0 {
        None
    } else {
        ctx.robots[x].entered_via
    };
    let x_phase = ctx.robots[x].mem.stage;

    match settled_at {
        None => {
            // Lone robot at its start node settles without claiming a tree
            // (treelabel stays top), so any later tree absorbs it.
            if global_round0 && unsettled.len() == 1 && ctx.robots.len() == 1 {
                ctx.robots[x].mem.settled = true;
                return Ok(decisions);
            }
            // Free node: highest id settles, lowest id leads on.
            let settler = *unsettled.last().expect("non-empty");
            let parent = x_entry.unwrap_or(0);
            {
                let mem = &mut ctx.robots[settler].mem;
                mem.settled = true;
                mem.treelabel = x_id;
                mem.parent = parent;
                mem.child = 0;
            }
            let movers: Vec<usize> = unsettled[..unsettled.len() - 1].to_vec();
            if movers.is_empty() {
                return Ok(decisions);
            }
            match next_child(parent, 0, degree) {
                Some(c) => {
                    ctx.robots[settler].mem.child = c;
                    move_group(ctx, &mut decisions, &movers, c, PHASE_FORWARD);
                }
                None => move_group(ctx, &mut decisions, &movers, parent, PHASE_BACKTRACK),
            }
        }
        Some(s) => {
            let treelabel = ctx.robots[s].mem.treelabel;
            if treelabel < x_id {
                // Stop until ordered to move.
            } else if treelabel == x_id {
                let p = x_entry.ok_or_else(|| {
                    EngineFault::Algorithm("stage-1 tree owner has no entry port".into())
                })?;
                let (parent, old_child) = {
                    let mem = &ctx.robots[s].mem;
                    (mem.parent, mem.child)
                };
                if x_phase == PHASE_FORWARD {
                    // Forward arrival at an own-tree node: a non-tree edge.
                    // Bounce back; no variables of the settled robot change.
                    move_group(ctx, &mut decisions, &unsettled, p, PHASE_BACKTRACK);
                } else {
                    // Backtrack return, always along the current child edge.
                    if p != old_child && p != parent {
                        return Err(EngineFault::Algorithm(format!(
                            "backtrack into an own-tree node via port {p}, \
                             expected child {old_child} or parent {parent}"
                        )));
                    }
                    match next_child(parent, old_child, degree) {
                        Some(c) => {
                            ctx.robots[s].mem.child = c;
                            move_group(ctx, &mut decisions, &unsettled, c, PHASE_FORWARD);
                        }
                        None if parent == 0 => {
                            return Err(EngineFault::Algorithm(
                                "DFS root exhausted with unsettled robots remaining".into(),
                            ));
                        }
                        None => {
                            move_group(ctx, &mut decisions, &unsettled, parent, PHASE_BACKTRACK)
                        }
                    }
                }
            } else {
                // Absorb the node into x's tree.
                let parent = match x_entry {
                    Some(p) => p,
                    None if stage_round0 => 0,
                    None => {
                        return Err(EngineFault::Algorithm(
                            "stage-1 absorbing visitor has no entry port".into(),
                        ))
                    }
                };
                {
                    let mem = &mut ctx.robots[s].mem;
                    mem.treelabel = x_id;
                    mem.parent = parent;
                    mem.child = 0;
                }
                match next_child(parent, 0, degree) {
                    Some(c) => {
                        ctx.robots[s].mem.child = c;
                        move_group(ctx, &mut decisions, &unsettled, c, PHASE_FORWARD);
                    }
                    None if parent == 0 => {
                        return Err(EngineFault::Algorithm("absorbed root has no ports".into()));
                    }
                    None => move_group(ctx, &mut decisions, &unsettled, parent, PHASE_BACKTRACK),
                }
            }
        }
    }
    Ok(decisions)
}

/// Orders every robot in `list` out through `port`, stamping the shared
/// movement phase so arrivals are classified correctly next round.
fn move_group(
    ctx: &mut GroupCtx,
    decisions: &mut [MoveDecision],
    list: &[usize],
    port: Port,
    phase: u8,
) {
    for &i in list {
        ctx.robots[i].mem.stage = phase;
        decisions[i] = MoveDecision::Exit(port);
    }
}

fn lexico_of_robot(mult: u32, id: u32) -> LexicoPriority {
    LexicoPriority { mult, label: id }
}

/// One round of the stage-2 gathering traversal over a connected component
/// of settled nodes. Free nodes are probed and bounced off; at settled
/// nodes the lexico-priority comparison decides stop / continue / absorb.
fn gather_group_step(
    ctx: &mut GroupCtx,
    stage_round0: bool,
    broken_priority: bool,
) -> Result<Vec<MoveDecision>, EngineFault> {
    let degree = ctx.degree;
    let mut decisions = vec![MoveDecision::Stay; ctx.robots.len()];
    let (settled_at, unsettled) = split_group(ctx)?;

    let compare = |a: LexicoPriority, b: LexicoPriority| -> std::cmp::Ordering {
        if broken_priority {
            // Mutation-testing hook: invert the priority order.
            a.cmp(&b).reverse()
        } else {
            a.cmp(&b)
        }
    };

    if stage_round0 {
        // Settled robots reset parent/child at the stage boundary, then
        // everyone records the local robot count; the lowest unsettled
        // robot claims the settled robot's treelabel and starts off.
        let count = ctx.robots.len() as u32;
        for r in ctx.robots.iter_mut() {
            if r.mem.settled {
                r.mem.parent = 0;
                r.mem.child = 0;
            }
            r.mem.mult = count;
        }
        if let (Some(s), Some(&x)) = (settled_at, unsettled.first()) {
            let x_id = ctx.robots[x].mem.id;
            let settled_id = ctx.robots[s].mem.id;
            ctx.robots[x].mem.home = settled_id;
            ctx.robots[s].mem.treelabel = x_id;
            let c = next_child(0, 0, degree)
                .ok_or_else(|| EngineFault::Algorithm("initiator at degree-0 node".into()))?;
            ctx.robots[s].mem.child = c;
            ctx.robots[x].mem.stage = PHASE_FORWARD;
            decisions[x] = MoveDecision::Exit(c);
        }
        return Ok(decisions);
    }

    if unsettled.is_empty() {
        return Ok(decisions);
    }

    match settled_at {
        None => {
            // Free node: ignore it, every visitor retraces its step.
            for &i in &unsettled {
                if let Some(p) = ctx.robots[i].entered_via {
                    ctx.robots[i].mem.stage = PHASE_BACKTRACK;
                    decisions[i] = MoveDecision::Exit(p);
                }
            }
        }
        Some(s) => {
            let lp_settled = LexicoPriority {
                mult: ctx.robots[s].mem.mult,
                label: ctx.robots[s].mem.treelabel,
            };
            let &best = unsettled
                .iter()
                .max_by(|&&a, &&b| {
                    compare(
                        lexico_of_robot(ctx.robots[a].mem.mult, ctx.robots[a].mem.id),
                        lexico_of_robot(ctx.robots[b].mem.mult, ctx.robots[b].mem.id),
                    )
                })
                .expect("non-empty");
            let lp_best = lexico_of_robot(ctx.robots[best].mem.mult, ctx.robots[best].mem.id);
            match compare(lp_settled, lp_best) {
                std::cmp::Ordering::Greater => {
                    // All visitors stop until ordered to move.
                }
                std::cmp::Ordering::Equal => {
                    // best owns the tree rooted at its home node.
                    let x = best;
                    let x_home = ctx.robots[x].mem.home;
                    let x_phase = ctx.robots[x].mem.stage;
                    let settled_id = ctx.robots[s].mem.id;
                    let at_home = x_home == settled_id;
                    let Some(p) = ctx.robots[x].entered_via else {
                        // Traversal already completed; parked at home.
                        return Ok(decisions);
                    };
                    let (parent, old_child) = {
                        let mem = &ctx.robots[s].mem;
                        (mem.parent, mem.child)
                    };
                    // Followers accompany the traversal except through its
                    // home node, where collected robots are deposited.
                    let movers: Vec<usize> = unsettled
                        .iter()
                        .copied()
                        .filter(|&i| i == x || !at_home)
                        .collect();
                    if x_phase == PHASE_FORWARD {
                        // Non-tree edge inside the traversal's own tree.
                        move_group(ctx, &mut decisions, &movers, p, PHASE_BACKTRACK);
                    } else {
                        if p != old_child && p != parent {
                            return Err(EngineFault::Algorithm(format!(
                                "gathering backtrack via port {p}, expected child \
                                 {old_child} or parent {parent}"
                            )));
                        }
                        match next_child(parent, old_child, degree) {
                            Some(c) => {
                                ctx.robots[s].mem.child = c;
                                move_group(ctx, &mut decisions, &movers, c, PHASE_FORWARD);
                            }
                            None if parent == 0 => {
                                // Back home with every port explored: done.
                                if !at_home {
                                    return Err(EngineFault::Algorithm(
                                        "gathering traversal exhausted a foreign root".into(),
                                    ));
                                }
                            }
                            None => {
                                move_group(ctx, &mut decisions, &movers, parent, PHASE_BACKTRACK)
                            }
                        }
                    }
                }
                std::cmp::Ordering::Less => {
                    // best overrides the settled robot's tree and carries on.
                    let x = best;
                    let p = ctx.robots[x].entered_via.ok_or_else(|| {
                        EngineFault::Algorithm(
                            "stage-2 absorbing visitor has no entry port".into(),
                        )
                    })?;
                    let x_id = ctx.robots[x].mem.id;
                    let x_mult = ctx.robots[x].mem.mult;
                    {
                        let mem = &mut ctx.robots[s].mem;
                        mem.treelabel = x_id;
                        mem.mult = x_mult;
                        mem.parent = p;
                        mem.child = 0;
                    }
                    match next_child(p, 0, degree) {
                        Some(c) => {
                            ctx.robots[s].mem.child = c;
                            move_group(ctx, &mut decisions, &unsettled, c, PHASE_FORWARD);
                        }
                        None => move_group(ctx, &mut decisions, &unsettled, p, PHASE_BACKTRACK),
                    }
                }
            }
        }
    }
    Ok(decisions)
}

// ---------------------------------------------------------------------------
// Algorithms
// ---------------------------------------------------------------------------

/// `DFS(k)`: single-source DFS dispersion for robots starting on one node.
pub struct DfsSingleSource {
    budget: u64,
    schedule_end: u64,
}

impl DfsSingleSource {
    pub fn new(n: usize, m: usize, k: u32, delta: u8) -> DfsSingleSource {
        let budget = if n <= 1 {
            1
        } else {
            let traversal = (4 * m as u64).saturating_sub(2 * n as u64) + 2;
            traversal.min(k as u64 * delta as u64)
        };
        DfsSingleSource {
            budget,
            schedule_end: budget,
        }
    }
}

impl Algorithm for DfsSingleSource {
    fn name(&self) -> &'static str {
        "dfs"
    }

    fn round_budget(&self) -> u64 {
        self.budget
    }

    fn used_fields(&self) -> FieldSet {
        FieldSet::of(&[
            Field::Id,
            Field::Round,
            Field::Parent,
            Field::Child,
            Field::Treelabel,
            Field::Settled,
            Field::Stage,
        ])
    }

    fn schedule(&self) -> Vec<StageSpan> {
        vec![StageSpan {
            label: "dfs".into(),
            start: 0,
            end: self.schedule_end,
        }]
    }

    fn step_group(&self, ctx: &mut GroupCtx) -> Result<Vec<MoveDecision>, EngineFault> {
        let round0 = ctx.round == 0;
        dfs_group_step(ctx, round0, round0)
    }
}

/// The pass-structured algorithm for arbitrary placements.
pub struct GraphDisperse {
    schedule: PassSchedule,
    k: u32,
    broken_priority: bool,
}

impl GraphDisperse {
    pub fn new(n: usize, m: usize, k: u32, delta: u8) -> GraphDisperse {
        GraphDisperse {
            schedule: PassSchedule::new(n, m, k, delta),
            k,
            broken_priority: false,
        }
    }

    /// Mutation-testing variant with the stage-2 priority order inverted;
    /// the exhaustive oracle must find a counterexample against it.
    pub(crate) fn with_broken_priority(n: usize, m: usize, k: u32, delta: u8) -> GraphDisperse {
        GraphDisperse {
            schedule: PassSchedule::new(n, m, k, delta),
            k,
            broken_priority: true,
        }
    }

    pub fn pass_schedule(&self) -> &PassSchedule {
        &self.schedule
    }
}

impl Algorithm for GraphDisperse {
    fn name(&self) -> &'static str {
        "graph"
    }

    fn round_budget(&self) -> u64 {
        self.schedule.total_budget()
    }

    fn used_fields(&self) -> FieldSet {
        FieldSet::of(&[
            Field::Id,
            Field::Round,
            Field::Pass,
            Field::Parent,
            Field::Child,
            Field::Treelabel,
            Field::Settled,
            Field::Mult,
            Field::Home,
            Field::Stage,
        ])
    }

    fn schedule(&self) -> Vec<StageSpan> {
        let mut spans = Vec::new();
        for p in 0..self.schedule.pass_count {
            spans.push(StageSpan {
                label: format!("p{}.s1", p + 1),
                start: self.schedule.pass_start(p),
                end: self.schedule.stage_boundary(p),
            });
            spans.push(StageSpan {
                label: format!("p{}.s2", p + 1),
                start: self.schedule.stage_boundary(p),
                end: self.schedule.pass_start(p + 1),
            });
        }
        spans
    }

    fn passes_used(&self, rounds: u64) -> u64 {
        if rounds == 0 {
            return 1;
        }
        rounds
            .div_ceil(self.schedule.pass_len())
            .clamp(1, self.schedule.pass_count)
    }

    fn step_group(&self, ctx: &mut GroupCtx) -> Result<Vec<MoveDecision>, EngineFault> {
        let (pass, stage, stage_round) = self.schedule.locate(ctx.round);
        match stage {
            PassStage::One => {
                if stage_round == 0 {
                    // Pass-boundary reset: every robot clears its traversal
                    // state; treelabels return to top so trees from the
                    // previous pass cannot stop anyone.
                    let top = self.k + 1;
                    for r in ctx.robots.iter_mut() {
                        r.mem.parent = 0;
                        r.mem.child = 0;
                        r.mem.treelabel = top;
                        r.mem.mult = 1;
                        r.mem.home = top;
                        r.mem.pass = pass as u32 + 1;
                    }
                }
                dfs_group_step(ctx, stage_round == 0, ctx.round == 0)
            }
            PassStage::Two => gather_group_step(ctx, stage_round == 0, self.broken_priority),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, WorldState};
    use crate::graphcore::{build_path, build_ring};
    use std::sync::Arc;

    #[test]
    fn lexico_priority_order() {
        let a = LexicoPriority { mult: 3, label: 5 };
        let b = LexicoPriority { mult: 2, label: 1 };
        assert!(a > b);
        let c = LexicoPriority { mult: 2, label: 3 };
        let d = LexicoPriority { mult: 2, label: 7 };
        assert!(c > d);
        assert_eq!(c.cmp(&c), std::cmp::Ordering::Equal);
    }

    #[test]
    fn pass_schedule_budgets() {
        // n=4 path: m=3 -> 4m-2n+2 = 6; k=4, delta=2 -> k*delta = 8.
        let s = PassSchedule::new(4, 3, 4, 2);
        assert_eq!(s.stage1_budget, 6);
        assert_eq!(s.stage2_budget, 6);
        assert_eq!(s.pass_count, 2);
        assert_eq!(s.total_budget(), 24);
        assert_eq!(s.locate(0), (0, PassStage::One, 0));
        assert_eq!(s.locate(6), (0, PassStage::Two, 0));
        assert_eq!(s.locate(12), (1, PassStage::One, 0));
    }

    #[test]
    fn dfs_k1_settles_immediately() {
        let g = Arc::new(build_ring(5).unwrap());
        let algo = DfsSingleSource::new(5, 5, 1, 2);
        let mut w = WorldState::new(g, vec![2]).unwrap();
        let (trace, metrics) = run(&mut w, &algo, u64::MAX).unwrap();
        assert_eq!(metrics.rounds_to_dispersion, Some(1));
        assert_eq!(trace.records.len(), 1);
        // Zero moves anywhere.
        assert!(metrics.per_stage_active_rounds.iter().all(|(_, c)| *c == 0));
        assert_eq!(w.memory(1).treelabel, 2); // top = k+1 untouched
    }

    #[test]
    fn dfs_four_on_cycle() {
        // k=4 on a 4-cycle: three forward moves then the last robot settles.
        let g = Arc::new(build_ring(4).unwrap());
        let algo = DfsSingleSource::new(4, 4, 4, 2);
        assert_eq!(algo.round_budget(), 8); // min(4m-2n+2, k*delta) = min(10, 8)
        let mut w = WorldState::new(g, vec![0, 0, 0, 0]).unwrap();
        let (_, metrics) = run(&mut w, &algo, u64::MAX).unwrap();
        assert_eq!(metrics.rounds_to_dispersion, Some(4));
    }

    #[test]
    fn dfs_path_settles_one_per_round() {
        let k = 5usize;
        let g = Arc::new(build_path(k).unwrap());
        let algo = DfsSingleSource::new(k, k - 1, k as u32, 2);
        assert_eq!(algo.round_budget(), (2 * k - 2) as u64);
        let mut w = WorldState::new(g, vec![0; k]).unwrap();
        let (trace, metrics) = run(&mut w, &algo, u64::MAX).unwrap();
        assert_eq!(metrics.rounds_to_dispersion, Some(k as u64));
        for (t, frame) in trace.records.iter().enumerate() {
            let settled = frame.robots.iter().filter(|r| r.settled == 1).count();
            assert_eq!(settled, t + 1);
        }
    }

    #[test]
    fn graph_disperse_distinct_placement_settles_in_place() {
        let g = Arc::new(build_path(6).unwrap());
        let algo = GraphDisperse::new(6, 5, 4, 2);
        let mut w = WorldState::new(g, vec![0, 2, 3, 5]).unwrap();
        let (_, metrics) = run(&mut w, &algo, u64::MAX).unwrap();
        assert_eq!(metrics.rounds_to_dispersion, Some(1));
        assert_eq!(metrics.passes_used, 1);
    }

    #[test]
    fn graph_disperse_two_groups_on_p4() {
        // Groups {1,2} and {3,4} on the two inner nodes of P4: the group led
        // by 3 stops at a node with treelabel 1; the group led by 1 settles.
        let g = Arc::new(build_path(4).unwrap());
        let algo = GraphDisperse::new(4, 3, 4, 2);
        let sched = algo.pass_schedule().clone();
        let mut w = WorldState::new(g, vec![1, 1, 2, 2]).unwrap();
        let (trace, metrics) = run(&mut w, &algo, u64::MAX).unwrap();
        assert!(w.is_dispersed());
        assert_eq!(metrics.passes_used, 2);
        assert!(metrics.rounds_to_dispersion.unwrap() <= sched.total_budget());
        // At the end of pass-1 stage 1, robot 3 is stopped and unsettled.
        let boundary = sched.stage_boundary(0) as usize;
        let frame = &trace.records[boundary - 1];
        let r3 = frame.robots.iter().find(|r| r.id == 3).unwrap();
        assert_eq!(r3.settled, 0);
    }

    #[test]
    fn graph_disperse_single_pile_matches_dfs() {
        let g = Arc::new(build_path(5).unwrap());
        let dfs = DfsSingleSource::new(5, 4, 4, 2);
        let graph_algo = GraphDisperse::new(5, 4, 4, 2);
        let mut w1 = WorldState::new(Arc::clone(&g), vec![0; 4]).unwrap();
        let mut w2 = WorldState::new(g, vec![0; 4]).unwrap();
        let (_, m1) = run(&mut w1, &dfs, u64::MAX).unwrap();
        let (_, m2) = run(&mut w2, &graph_algo, u64::MAX).unwrap();
        assert_eq!(m1.rounds_to_dispersion, m2.rounds_to_dispersion);
        for id in 1..=4 {
            assert_eq!(w1.node_of(id), w2.node_of(id));
        }
    }

    #[test]
    fn graph_disperse_all_on_one_node_first_pass() {
        let g = Arc::new(build_ring(6).unwrap());
        let algo = GraphDisperse::new(6, 6, 5, 2);
        let sched = algo.pass_schedule().clone();
        let mut w = WorldState::new(g, vec![3; 5]).unwrap();
        let (_, metrics) = run(&mut w, &algo, u64::MAX).unwrap();
        // Dispersed during stage 1 of pass 1.
        assert!(metrics.rounds_to_dispersion.unwrap() <= sched.stage1_budget);
    }
}
