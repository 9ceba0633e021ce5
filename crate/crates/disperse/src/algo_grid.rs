//! Dispersion on grid graphs.
//!
//! The staged algorithm (for `k >= sqrt(n)` on squares, `k >= max(x, y)` on
//! rectangles) runs five fixed-schedule stages: reach the boundary by
//! straight-line walks, slide along the boundary to a corner, gather at the
//! corner holding robot 1, deposit groups along one boundary line, then fan
//! each group out along its perpendicular line. The small-`k` variant walks
//! a single line, reversing at the boundary, with a perpendicular fallback
//! on rectangles.
//!
//! Grid port labels increase clockwise around every node, so the second
//! port in cyclic order after the entry port continues a straight line
//! through an interior node. Boundary nodes have no such local rule; where
//! a walk must continue straight through degree-3 nodes, the group relies
//! on a one-bit wall-side orientation learned from a single probe (a
//! degree-4 arrival reveals which cyclic candidate points inward). Width-2
//! grids have no interior at all; there the deposit line is forced onto the
//! long dimension so every fan-out is a single forced rung crossing.

use crate::engine::{
    Algorithm, ChoicePolicy, EngineFault, Field, FieldSet, GroupCtx, MoveDecision, RobotView,
    StageSpan, NO_PORT,
};
use crate::graphcore::Port;

/// Exiting an interior node via the second port in cyclic order after the
/// entry port continues the straight line (the geometric opposite).
pub fn second_port_rule(entry: Port, degree: u8) -> Result<Port, EngineFault> {
    if degree != 4 {
        return Err(EngineFault::Algorithm(format!(
            "second-port rule applies at degree 4, called at degree {degree}"
        )));
    }
    Ok(cyclic_step(entry, degree, 2))
}

/// Port reached from `p` by `steps` clockwise positions among `1..=degree`.
fn cyclic_step(p: Port, degree: u8, steps: u8) -> Port {
    (p - 1 + steps) % degree + 1
}

/// The non-entry ports in clockwise order starting just after `entry`.
fn cyclic_candidates(entry: Port, degree: u8) -> Vec<Port> {
    (1..degree).map(|s| cyclic_step(entry, degree, s)).collect()
}

// Wall-side orientation codes kept in `parent` during stages 4-5.
const WALL_UNKNOWN: Port = 0;
/// The first cyclic candidate after the entry port points into the grid.
const WALL_INTERIOR_FIRST: Port = 1;
/// The second cyclic candidate points into the grid.
const WALL_INTERIOR_SECOND: Port = 2;
const WALL_PENDING_FIRST: Port = 3;
const WALL_PENDING_SECOND: Port = 4;

// Scout protocol states kept in `child` during stage 4.
const SCOUT_IDLE: Port = 0;
const SCOUT_OUT: Port = 1;
const SCOUT_PROBE: Port = 2;
const SCOUT_HOME_FAR: Port = 3;
const SCOUT_HOME_NEAR: Port = 4;
const SCOUT_DONE: Port = 5;
/// Stage-4 second deposit pass along the long line (one robot per node).
const PASS2_LONG: Port = 6;
/// Stage-4 second deposit pass along the short line (top-up deposits).
const PASS2_SHORT: Port = 7;

// `stage` flag for stages 2-4: set while returning from an interior probe.
const FLAG_NONE: u8 = 0;
const FLAG_RETURNING: u8 = 1;

// Small-k walk states kept in `stage`.
const SK_OFF: u8 = 1;
const SK_OFF_BACK: u8 = 2;
const SK_WALK: u8 = 3;
const SK_REV: u8 = 4;
const SK_PERP: u8 = 5;
const SK_PERP_BACK: u8 = 6;
const SK_REBASE: u8 = 7;

/// Absolute round intervals of the five stages.
#[derive(Debug, Clone)]
pub struct GridStageSchedule {
    ends: [u64; 5],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridStage {
    One,
    Two,
    Three,
    Four,
    Five,
}

impl GridStageSchedule {
    /// Square schedule: the per-stage budgets of the staged algorithm.
    pub fn square(side: usize) -> GridStageSchedule {
        let s = side as u64;
        GridStageSchedule::from_lens([s - 1, 3 * (s - 1), 9 * (s - 1), 3 * s - 1, s])
    }

    /// Rectangular schedule: the square budgets with the side replaced by
    /// the longer dimension, except stage 4, which must also cover a
    /// two-pass deposit along a short line.
    pub fn rect(x: usize, y: usize) -> GridStageSchedule {
        let l = x.max(y) as u64;
        GridStageSchedule::from_lens([
            l - 1,
            3 * (l - 1),
            9 * (l - 1),
            (3 * l - 1).max(2 * l + 10),
            l,
        ])
    }

    fn from_lens(lens: [u64; 5]) -> GridStageSchedule {
        let mut ends = [0u64; 5];
        let mut acc = 0;
        for (i, len) in lens.into_iter().enumerate() {
            acc += len;
            ends[i] = acc;
        }
        GridStageSchedule { ends }
    }

    pub fn stage_len(&self, stage: GridStage) -> u64 {
        let i = stage as usize;
        if i == 0 {
            self.ends[0]
        } else {
            self.ends[i] - self.ends[i - 1]
        }
    }

    pub fn total(&self) -> u64 {
        self.ends[4]
    }

    /// Stage and round-within-stage of an absolute round.
    pub fn locate(&self, round: u64) -> (GridStage, u64) {
        let stages = [
            GridStage::One,
            GridStage::Two,
            GridStage::Three,
            GridStage::Four,
            GridStage::Five,
        ];
        let mut start = 0;
        for (i, stage) in stages.into_iter().enumerate() {
            if round < self.ends[i] {
                return (stage, round - start);
            }
            start = self.ends[i];
        }
        (GridStage::Five, round - self.ends[3])
    }

    /// Absolute first round of a stage.
    pub fn stage_start(&self, stage: GridStage) -> u64 {
        match stage {
            GridStage::One => 0,
            GridStage::Two => self.ends[0],
            GridStage::Three => self.ends[1],
            GridStage::Four => self.ends[2],
            GridStage::Five => self.ends[3],
        }
    }
}

#[derive(Debug, Clone)]
enum Variant {
    Staged(GridStageSchedule),
    SmallK { budget: u64 },
}

/// Grid dispersion: staged for large `k`, line-walk otherwise.
pub struct GridDisperse {
    x: usize,
    y: usize,
    k: u32,
    policy: ChoicePolicy,
    variant: Variant,
}

impl GridDisperse {
    /// Selects the staged algorithm when `k` is at least the longer
    /// dimension (the side, for squares) and the line walk otherwise.
    pub fn new(x: usize, y: usize, k: u32, policy: ChoicePolicy) -> GridDisperse {
        let threshold = x.max(y) as u32;
        let variant = if k >= threshold {
            let sched = if x == y {
                GridStageSchedule::square(x)
            } else {
                GridStageSchedule::rect(x, y)
            };
            Variant::Staged(sched)
        } else {
            let budget = if x == y {
                2 * k as u64 + 8
            } else {
                4 * (x + y) as u64 + 4 * k as u64 + 16
            };
            Variant::SmallK { budget }
        };
        GridDisperse {
            x,
            y,
            k,
            policy,
            variant,
        }
    }

    pub fn is_staged(&self) -> bool {
        matches!(self.variant, Variant::Staged(_))
    }

    pub fn stage_schedule(&self) -> Option<&GridStageSchedule> {
        match &self.variant {
            Variant::Staged(s) => Some(s),
            Variant::SmallK { .. } => None,
        }
    }

    /// Width-2 rectangles: no interior nodes exist anywhere.
    fn is_ladder(&self) -> bool {
        self.x != self.y && self.x.min(self.y) == 2
    }

    /// Stage-4 deposit quota for the first pass: the perpendicular line's
    /// capacity on squares, the even spread on rectangles.
    fn deposit_quota(&self) -> u32 {
        if self.x == self.y {
            self.x as u32
        } else {
            self.k / self.x.max(self.y) as u32
        }
    }

    /// Stage-4 second-pass quota once the walked line's length is known.
    fn pass2_quota(&self, marker: Port) -> u32 {
        match marker {
            PASS2_LONG => 1,
            PASS2_SHORT => self.x.max(self.y) as u32 - self.deposit_quota(),
            _ => 0,
        }
    }

}

/// Indices of unsettled robots, ascending by id.
fn unsettled_indices(ctx: &GroupCtx) -> Vec<usize> {
    (0..ctx.robots.len())
        .filter(|&i| !ctx.robots[i].mem.settled)
        .collect()
}

fn has_settled(ctx: &GroupCtx) -> bool {
    ctx.robots.iter().any(|r| r.mem.settled)
}

fn record_entry(r: &mut RobotView) {
    if let Some(e) = r.entered_via {
        r.mem.port_entered = e as i16;
    }
}

/// Resolves a pending wall guess after observing the arrival degree.
fn resolve_wall(guess: Port, arrived_interior: bool) -> Port {
    match (guess, arrived_interior) {
        (WALL_PENDING_FIRST, true) => WALL_INTERIOR_FIRST,
        (WALL_PENDING_FIRST, false) => WALL_INTERIOR_SECOND,
        (WALL_PENDING_SECOND, true) => WALL_INTERIOR_SECOND,
        (WALL_PENDING_SECOND, false) => WALL_INTERIOR_FIRST,
        (p, _) => p,
    }
}

/// Continuation port at a degree-3 node given the wall orientation.
fn continuation_port(entry: Port, wall: Port) -> Result<Port, EngineFault> {
    match wall {
        WALL_INTERIOR_FIRST => Ok(cyclic_step(entry, 3, 2)),
        WALL_INTERIOR_SECOND => Ok(cyclic_step(entry, 3, 1)),
        _ => Err(EngineFault::Algorithm(
            "boundary continuation requested without a wall orientation".into(),
        )),
    }
}

fn invert_wall(wall: Port) -> Port {
    match wall {
        WALL_INTERIOR_FIRST => WALL_INTERIOR_SECOND,
        WALL_INTERIOR_SECOND => WALL_INTERIOR_FIRST,
        other => other,
    }
}

/// Width-2 grids have no interior nodes, so probe-by-degree cannot tell a
/// rung crossing from a line continuation. Alternating the cyclic hand by
/// round parity makes the walk column-monotone: it zigzags between the two
/// columns but never reverses, so it reaches a corner. At corners the
/// single candidate is the forced turn.
fn zigzag_port(entry: Port, degree: u8, round: u64) -> Port {
    let cands = cyclic_candidates(entry, degree);
    cands[(round as usize) % 2 % cands.len()]
}

impl Algorithm for GridDisperse {
    fn name(&self) -> &'static str {
        if self.x == self.y {
            "grid"
        } else {
            "grid-rect"
        }
    }

    fn round_budget(&self) -> u64 {
        match &self.variant {
            Variant::Staged(s) => s.total(),
            Variant::SmallK { budget } => *budget,
        }
    }

    fn used_fields(&self) -> FieldSet {
        match self.variant {
            Variant::Staged(_) => FieldSet::of(&[
                Field::Id,
                Field::Round,
                Field::Settled,
                Field::PortEntered,
                Field::PortExited,
                Field::Stage,
                Field::Parent,
                Field::Child,
            ]),
            Variant::SmallK { .. } => FieldSet::of(&[
                Field::Id,
                Field::Round,
                Field::Settled,
                Field::PortEntered,
                Field::PortExited,
                Field::Stage,
            ]),
        }
    }

    fn schedule(&self) -> Vec<StageSpan> {
        match &self.variant {
            Variant::Staged(s) => [
                ("stage1", GridStage::One),
                ("stage2", GridStage::Two),
                ("stage3", GridStage::Three),
                ("stage4", GridStage::Four),
                ("stage5", GridStage::Five),
            ]
            .into_iter()
            .map(|(label, st)| StageSpan {
                label: label.into(),
                start: s.stage_start(st),
                end: s.stage_start(st) + s.stage_len(st),
            })
            .collect(),
            Variant::SmallK { budget } => vec![StageSpan {
                label: "line-walk".into(),
                start: 0,
                end: *budget,
            }],
        }
    }

    fn step_group(&self, ctx: &mut GroupCtx) -> Result<Vec<MoveDecision>, EngineFault> {
        match &self.variant {
            Variant::Staged(sched) => {
                let (stage, rho) = sched.locate(ctx.round);
                match stage {
                    GridStage::One => self.stage1(ctx, rho),
                    GridStage::Two => self.stage2(ctx, rho),
                    GridStage::Three => self.stage3(ctx, rho),
                    GridStage::Four if self.is_ladder() => self.ladder_snake(ctx, rho == 0),
                    GridStage::Four => self.stage4(ctx, rho),
                    GridStage::Five if self.is_ladder() => self.ladder_snake(ctx, false),
                    GridStage::Five => self.stage5(ctx, rho),
                }
            }
            Variant::SmallK { .. } => self.smallk(ctx),
        }
    }
}

impl GridDisperse {
    // -- Stage 1: straight lines to the boundary ---------------------------

    fn stage1(&self, ctx: &mut GroupCtx, rho: u64) -> Result<Vec<MoveDecision>, EngineFault> {
        let degree = ctx.degree;
        let round = ctx.round;
        let mut decisions = vec![MoveDecision::Stay; ctx.robots.len()];
        for (i, r) in ctx.robots.iter_mut().enumerate() {
            record_entry(r);
            if degree < 4 {
                continue; // on the boundary already
            }
            let port = if rho == 0 {
                let ports: Vec<Port> = (1..=degree).collect();
                self.policy.pick(round, r.mem.id as u64, &ports)
            } else {
                let e = r.entered_via.ok_or_else(|| idle_fault("stage-1 walker"))?;
                second_port_rule(e, degree)?
            };
            decisions[i] = MoveDecision::Exit(port);
        }
        Ok(decisions)
    }

    // -- Stages 2 and 3: boundary walks toward corners ----------------------

    /// One robot's boundary-walk move for stages 2 and 3: probe-and-return
    /// at interior ports, excluding the recorded entry/exit ports.
    fn boundary_walk_step(
        &self,
        r: &mut RobotView,
        degree: u8,
        round: u64,
        first_round: bool,
    ) -> Result<MoveDecision, EngineFault> {
        let salt = r.mem.id as u64;
        if degree == 4 {
            // Interior: this was a probe; retrace the step.
            let e = r.entered_via.ok_or_else(|| idle_fault("interior prober"))?;
            r.mem.stage = FLAG_RETURNING;
            return Ok(MoveDecision::Exit(e));
        }
        if r.mem.stage == FLAG_RETURNING {
            // Back from a failed probe: take a port not yet tried here.
            r.mem.stage = FLAG_NONE;
            let cands: Vec<Port> = (1..=degree)
                .filter(|&p| {
                    (r.mem.port_entered < 0 || p as i16 != r.mem.port_entered)
                        && (r.mem.port_exited < 0 || p as i16 != r.mem.port_exited)
                })
                .collect();
            if cands.is_empty() {
                return Err(EngineFault::Algorithm(
                    "probe return with no remaining port".into(),
                ));
            }
            let port = self.policy.pick(round, salt, &cands);
            r.mem.port_exited = port as i16;
            return Ok(MoveDecision::Exit(port));
        }
        if let Some(e) = r.entered_via {
            // Fresh arrival at a boundary node: exclude the entry port.
            r.mem.port_entered = e as i16;
            r.mem.port_exited = NO_PORT;
            let cands: Vec<Port> = (1..=degree).filter(|&p| p != e).collect();
            let port = self.policy.pick(round, salt, &cands);
            r.mem.port_exited = port as i16;
            return Ok(MoveDecision::Exit(port));
        }
        if first_round {
            // Walk start: exclude the stored entry port if any.
            let cands: Vec<Port> = (1..=degree)
                .filter(|&p| r.mem.port_entered < 0 || p as i16 != r.mem.port_entered)
                .collect();
            let port = self.policy.pick(round, salt, &cands);
            r.mem.port_exited = port as i16;
            return Ok(MoveDecision::Exit(port));
        }
        Err(idle_fault("boundary walker"))
    }

    fn stage2(&self, ctx: &mut GroupCtx, rho: u64) -> Result<Vec<MoveDecision>, EngineFault> {
        let degree = ctx.degree;
        let round = ctx.round;
        let mut decisions = vec![MoveDecision::Stay; ctx.robots.len()];
        let ladder = self.is_ladder();
        for (i, r) in ctx.robots.iter_mut().enumerate() {
            if degree == 2 {
                // Corner reached: stage 2 is over for this robot.
                record_entry(r);
                r.mem.stage = FLAG_NONE;
                continue;
            }
            if ladder {
                let port = if let Some(e) = r.entered_via {
                    zigzag_port(e, degree, round)
                } else if rho == 0 {
                    let ports: Vec<Port> = (1..=degree).collect();
                    self.policy.pick(round, r.mem.id as u64, &ports)
                } else {
                    return Err(idle_fault("ladder walker"));
                };
                decisions[i] = MoveDecision::Exit(port);
                continue;
            }
            decisions[i] = self.boundary_walk_step(r, degree, round, rho == 0)?;
        }
        Ok(decisions)
    }

    fn stage3(&self, ctx: &mut GroupCtx, rho: u64) -> Result<Vec<MoveDecision>, EngineFault> {
        let degree = ctx.degree;
        let round = ctx.round;
        let mut decisions = vec![MoveDecision::Stay; ctx.robots.len()];
        // Everyone co-located with robot 1 stays put.
        if ctx.robots.iter().any(|r| r.mem.id == 1) {
            return Ok(decisions);
        }
        if self.is_ladder() {
            // Zigzag legs between corners; forced turns circulate through
            // all four corners, so robot 1's corner is always reached.
            for (i, r) in ctx.robots.iter_mut().enumerate() {
                let port = if let Some(e) = r.entered_via {
                    zigzag_port(e, degree, round)
                } else if rho == 0 {
                    let ports: Vec<Port> = (1..=degree).collect();
                    self.policy.pick(round, r.mem.id as u64, &ports)
                } else {
                    return Err(idle_fault("ladder walker"));
                };
                decisions[i] = MoveDecision::Exit(port);
            }
            return Ok(decisions);
        }
        for (i, r) in ctx.robots.iter_mut().enumerate() {
            if rho == 0 {
                // Fresh walk state for the corner-to-corner leg.
                r.mem.port_entered = NO_PORT;
                r.mem.port_exited = NO_PORT;
                r.mem.stage = FLAG_NONE;
            }
            if degree == 2 {
                // Intermediate corner: continue through the non-entry port.
                let port = if let Some(e) = r.entered_via {
                    record_entry(r);
                    cyclic_step(e, 2, 1)
                } else if rho == 0 {
                    let ports: Vec<Port> = (1..=degree).collect();
                    self.policy.pick(round, r.mem.id as u64, &ports)
                } else {
                    return Err(idle_fault("stage-3 corner robot"));
                };
                r.mem.port_exited = port as i16;
                decisions[i] = MoveDecision::Exit(port);
                continue;
            }
            decisions[i] = self.boundary_walk_step(r, degree, round, rho == 0)?;
        }
        Ok(decisions)
    }

    // -- Stage 4: deposit groups along one boundary line --------------------

    fn stage4(&self, ctx: &mut GroupCtx, rho: u64) -> Result<Vec<MoveDecision>, EngineFault> {
        let degree = ctx.degree;
        let round = ctx.round;
        let mut decisions = vec![MoveDecision::Stay; ctx.robots.len()];
        let leader_at = ctx.robots.iter().position(|r| r.mem.id == 1);

        if rho == 0 {
            // Everyone is at the gathering corner. The leader picks the
            // line; everyone records that exit and clears walk state.
            for r in ctx.robots.iter_mut() {
                r.mem.port_entered = NO_PORT;
                r.mem.port_exited = NO_PORT;
                r.mem.parent = WALL_UNKNOWN;
                r.mem.child = SCOUT_IDLE;
                r.mem.stage = FLAG_NONE;
            }
            let Some(lead) = leader_at else {
                return Err(EngineFault::Algorithm(
                    "stage 4 started without robot 1 at this node".into(),
                ));
            };
            let ports: Vec<Port> = (1..=degree).collect();
            let pick = self.policy.pick(round, 1, &ports);
            for r in ctx.robots.iter_mut() {
                r.mem.port_exited = pick as i16;
            }
            decisions[lead] = MoveDecision::Exit(pick);
            return Ok(decisions);
        }

        if rho == 1 {
            // Deposit round: the leader waits at its first line node while
            // the start corner splits into stayers and marchers.
            match leader_at {
                Some(lead) => {
                    // The leader waits one round for the others.
                    record_entry(&mut ctx.robots[lead]);
                    ctx.robots[lead].mem.port_exited = NO_PORT;
                }
                None => {
                    // At the start corner: the largest quota stay deposited,
                    // the rest follow the recorded exit port.
                    let mut ids = unsettled_indices(ctx);
                    ids.sort_by_key(|&i| std::cmp::Reverse(ctx.robots[i].mem.id));
                    let quota = self.deposit_quota() as usize;
                    for &i in ids.iter().skip(quota) {
                        let px = ctx.robots[i].mem.port_exited;
                        if px < 0 {
                            return Err(EngineFault::Algorithm(
                                "follower without a recorded exit port".into(),
                            ));
                        }
                        decisions[i] = MoveDecision::Exit(px as Port);
                    }
                }
            }
            return Ok(decisions);
        }

        match leader_at {
            None => self.stage4_deposited(ctx, rho, &mut decisions)?,
            Some(lead) => self.stage4_walking(ctx, rho, degree, round, lead, &mut decisions)?,
        }
        Ok(decisions)
    }

    /// Advances a robot mid-scout-protocol. Returns true when the robot is
    /// in a scout state and its decision for this round has been made.
    fn scout_step(
        &self,
        ctx: &mut GroupCtx,
        i: usize,
        decisions: &mut [MoveDecision],
    ) -> Result<bool, EngineFault> {
        let degree = ctx.degree;
        let group_size = ctx.robots.len();
        let r = &mut ctx.robots[i];
        match r.mem.child {
            SCOUT_OUT => {
                let e = r.entered_via.ok_or_else(|| idle_fault("scout"))?;
                r.mem.port_entered = e as i16;
                r.mem.child = SCOUT_PROBE;
                decisions[i] = MoveDecision::Exit(cyclic_candidates(e, degree)[0]);
                Ok(true)
            }
            SCOUT_PROBE => {
                let e = r.entered_via.ok_or_else(|| idle_fault("scout"))?;
                r.mem.parent = if degree == 4 {
                    WALL_INTERIOR_FIRST
                } else {
                    WALL_INTERIOR_SECOND
                };
                r.mem.child = SCOUT_HOME_FAR;
                decisions[i] = MoveDecision::Exit(e);
                Ok(true)
            }
            SCOUT_HOME_FAR => {
                if group_size > 1 {
                    // Returned to company: done. The stale entry record must
                    // not leak into the stage-5 port exclusion here.
                    r.mem.child = SCOUT_DONE;
                    r.mem.port_entered = NO_PORT;
                } else {
                    let back = r.mem.port_entered;
                    if back < 0 {
                        return Err(EngineFault::Algorithm("scout lost its way home".into()));
                    }
                    r.mem.child = SCOUT_HOME_NEAR;
                    decisions[i] = MoveDecision::Exit(back as Port);
                }
                Ok(true)
            }
            SCOUT_HOME_NEAR => {
                r.mem.child = SCOUT_DONE;
                r.mem.port_entered = NO_PORT;
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    /// Nodes without robot 1: deposited groups idle; the start corner's
    /// scout learns the wall orientation for its stage-5 column walk.
    fn stage4_deposited(
        &self,
        ctx: &mut GroupCtx,
        rho: u64,
        decisions: &mut [MoveDecision],
    ) -> Result<(), EngineFault> {
        let degree = ctx.degree;
        for i in 0..ctx.robots.len() {
            if self.scout_step(ctx, i, decisions)? {
                return Ok(());
            }
        }
        // Launch the start-corner scout one round after the marchers left:
        // its stage-5 walk crosses ambiguous degree-3 boundary nodes only
        // when the grid is at least 3 wide in both dimensions.
        if rho == 2 && degree == 2 && ctx.robots.len() >= 3 && self.x.min(self.y) >= 3 {
            let scout = (0..ctx.robots.len())
                .min_by_key(|&i| ctx.robots[i].mem.id)
                .expect("non-empty");
            let px = ctx.robots[scout].mem.port_exited;
            if let Some(&q) = (1..=degree)
                .filter(|&p| p as i16 != px)
                .collect::<Vec<_>>()
                .first()
            {
                ctx.robots[scout].mem.child = SCOUT_OUT;
                decisions[scout] = MoveDecision::Exit(q);
            }
        }
        Ok(())
    }

    /// The walking group: deposit the largest quota at each fresh boundary
    /// node, learn the wall orientation from the first pick's outcome, and
    /// reverse into a second deposit pass at the far corner on rectangles.
    fn stage4_walking(
        &self,
        ctx: &mut GroupCtx,
        rho: u64,
        degree: u8,
        round: u64,
        lead: usize,
        decisions: &mut [MoveDecision],
    ) -> Result<(), EngineFault> {
        // Scouts act first, independently of the walk: the leader's own
        // final-node orientation probe, or the start-corner scout coming
        // home to a node the walking group later parked on.
        let mut scouted = vec![false; ctx.robots.len()];
        for (i, flag) in scouted.iter_mut().enumerate() {
            *flag = self.scout_step(ctx, i, decisions)?;
        }
        if scouted[lead] {
            return Ok(());
        }

        if degree == 4 {
            // Probing interior: everyone retraces; resolve the wall guess.
            ctx.robots[lead].mem.parent = resolve_wall(ctx.robots[lead].mem.parent, true);
            for (i, r) in ctx.robots.iter_mut().enumerate() {
                if let Some(e) = r.entered_via {
                    r.mem.stage = FLAG_RETURNING;
                    decisions[i] = MoveDecision::Exit(e);
                }
            }
            return Ok(());
        }

        let movers_arrived: Vec<usize> = (0..ctx.robots.len())
            .filter(|&i| !scouted[i] && ctx.robots[i].entered_via.is_some())
            .collect();

        if ctx.robots[lead].mem.stage == FLAG_RETURNING {
            // Failed probe: the remaining untried port is the continuation.
            let pe = ctx.robots[lead].mem.port_entered;
            let px = ctx.robots[lead].mem.port_exited;
            let port = *(1..=degree)
                .filter(|&p| p as i16 != pe && p as i16 != px)
                .collect::<Vec<_>>()
                .first()
                .ok_or_else(|| {
                    EngineFault::Algorithm("probe return with no remaining port".into())
                })?;
            let wall = ctx.robots[lead].mem.parent;
            for r in ctx.robots.iter_mut() {
                r.mem.port_exited = port as i16;
                if r.mem.parent == WALL_UNKNOWN && matches!(wall, 1 | 2) {
                    r.mem.parent = wall;
                }
            }
            for &i in &movers_arrived {
                ctx.robots[i].mem.stage = FLAG_NONE;
                decisions[i] = MoveDecision::Exit(port);
            }
            return Ok(());
        }

        // Fresh node. Walkers are the robots that arrived this round, plus
        // the leader itself on the merge round (it waited one round ahead).
        let mut walkers = movers_arrived.clone();
        if rho == 2 && !walkers.contains(&lead) {
            // Merge round: the leader waited one round ahead of the group.
            walkers.push(lead);
        }
        if walkers.is_empty() {
            return Ok(()); // parked at the final node
        }
        // A successful boundary step confirms a pending wall guess.
        ctx.robots[lead].mem.parent = resolve_wall(ctx.robots[lead].mem.parent, false);
        for &i in &movers_arrived {
            let e = ctx.robots[i].entered_via.expect("arrived");
            ctx.robots[i].mem.port_entered = e as i16;
            ctx.robots[i].mem.port_exited = NO_PORT;
        }

        let pass2_marker = ctx.robots[lead].mem.child;
        let in_pass2 = matches!(pass2_marker, PASS2_LONG | PASS2_SHORT);
        let quota = if in_pass2 {
            self.pass2_quota(pass2_marker)
        } else {
            self.deposit_quota()
        } as usize;

        walkers.sort_by_key(|&i| std::cmp::Reverse(ctx.robots[i].mem.id));
        let entry = ctx.robots[lead]
            .entered_via
            .or((ctx.robots[lead].mem.port_entered >= 0)
                .then(|| ctx.robots[lead].mem.port_entered as Port))
            .ok_or_else(|| EngineFault::Algorithm("walking group without an entry".into()))?;

        if walkers.len() <= quota || quota == 0 {
            // Final node: everyone parks. A walk that ends mid-pass-2 has
            // been moving against its recorded orientation, so flip the
            // stored bit once to match the resting direction; every robot
            // parked here shares it.
            if in_pass2 {
                let inv = invert_wall(ctx.robots[lead].mem.parent);
                if matches!(inv, 1 | 2) {
                    for r in ctx.robots.iter_mut() {
                        if !r.mem.settled {
                            r.mem.parent = inv;
                        }
                    }
                }
            }
            // If the stage-5 exit here would still be ambiguous and the
            // orientation is unknown, the leader probes.
            let wall = ctx.robots[lead].mem.parent;
            if degree == 3 && walkers.len() >= 2 && !matches!(wall, 1 | 2) {
                ctx.robots[lead].mem.child = SCOUT_PROBE;
                decisions[lead] = MoveDecision::Exit(cyclic_candidates(entry, degree)[0]);
            }
            return Ok(());
        }

        if degree == 2 {
            if in_pass2 {
                return Err(EngineFault::Algorithm(
                    "second deposit pass overran the line".into(),
                ));
            }
            // Far corner with robots left over: top up this corner and
            // reverse into the second pass. The leftover count reveals
            // whether the walked line was the long or the short one.
            let d1 = self.deposit_quota();
            let rem = (walkers.len() - quota) as i64;
            let long_rem = self.k as i64 - d1 as i64 * self.x.max(self.y) as i64;
            let marker = if rem == long_rem { PASS2_LONG } else { PASS2_SHORT };
            let keep = (quota + self.pass2_quota(marker) as usize).min(walkers.len());
            let wall = ctx.robots[lead].mem.parent;
            for r in ctx.robots.iter_mut() {
                r.mem.port_exited = entry as i16;
                if r.mem.parent == WALL_UNKNOWN && matches!(wall, 1 | 2) {
                    r.mem.parent = wall;
                }
            }
            if keep >= walkers.len() {
                return Ok(()); // the top-up absorbs everyone
            }
            ctx.robots[lead].mem.child = marker;
            for &i in &walkers[keep..] {
                decisions[i] = MoveDecision::Exit(entry);
            }
            return Ok(());
        }

        let port = if in_pass2 {
            // Reversed walk: the wall side flips with the direction.
            continuation_port(entry, invert_wall(ctx.robots[lead].mem.parent))?
        } else {
            let wall = ctx.robots[lead].mem.parent;
            if matches!(wall, 1 | 2) {
                continuation_port(entry, wall)?
            } else {
                // First boundary step: pick by policy and remember which
                // cyclic candidate it was; the arrival resolves the guess.
                let cands = cyclic_candidates(entry, degree);
                let pick = self.policy.pick(round, 1, &cands);
                ctx.robots[lead].mem.parent = if pick == cands[0] {
                    WALL_PENDING_FIRST
                } else {
                    WALL_PENDING_SECOND
                };
                pick
            }
        };
        let wall = ctx.robots[lead].mem.parent;
        for r in ctx.robots.iter_mut() {
            r.mem.port_exited = port as i16;
            if r.mem.parent == WALL_UNKNOWN && matches!(wall, 1 | 2) {
                r.mem.parent = wall;
            }
        }
        for &i in &walkers[quota..] {
            decisions[i] = MoveDecision::Exit(port);
        }
        Ok(())
    }

    /// Ladder replacement for stages 4 and 5: the gathered group snakes
    /// along the grid, the largest robot settling at each fresh node. With
    /// a consistent cyclic hand the walk traces a face of the grid; the
    /// outer face is every node of a width-2 grid. Starting at a corner,
    /// the wrong hand traces the 4-node end face instead, which contains
    /// the settled start corner, so re-entering settled territory triggers
    /// a one-time hand switch onto the full perimeter.
    fn ladder_snake(
        &self,
        ctx: &mut GroupCtx,
        stage4_round0: bool,
    ) -> Result<Vec<MoveDecision>, EngineFault> {
        let degree = ctx.degree;
        let round = ctx.round;
        let mut decisions = vec![MoveDecision::Stay; ctx.robots.len()];
        let settled_before = has_settled(ctx);
        let mut unsettled = unsettled_indices(ctx);
        if unsettled.is_empty() {
            return Ok(decisions);
        }
        if !settled_before {
            let settler = *unsettled
                .iter()
                .max_by_key(|&&i| ctx.robots[i].mem.id)
                .expect("non-empty");
            ctx.robots[settler].mem.settled = true;
            unsettled.retain(|&i| i != settler);
            if unsettled.is_empty() {
                return Ok(decisions);
            }
        }
        if stage4_round0 {
            let ports: Vec<Port> = (1..=degree).collect();
            let port = self.policy.pick(round, 1, &ports);
            for &i in &unsettled {
                ctx.robots[i].mem.parent = WALL_INTERIOR_FIRST;
                decisions[i] = MoveDecision::Exit(port);
            }
            return Ok(decisions);
        }
        let leader = *unsettled
            .iter()
            .min_by_key(|&&i| ctx.robots[i].mem.id)
            .expect("non-empty");
        let e = ctx.robots[leader]
            .entered_via
            .ok_or_else(|| idle_fault("snake walker"))?;
        let mut hand = ctx.robots[leader].mem.parent;
        if settled_before && hand == WALL_INTERIOR_FIRST {
            hand = WALL_INTERIOR_SECOND;
        }
        let port = if degree == 2 {
            cyclic_step(e, 2, 1)
        } else {
            let cands = cyclic_candidates(e, degree);
            if hand == WALL_INTERIOR_FIRST {
                cands[0]
            } else {
                cands[1]
            }
        };
        for &i in &unsettled {
            ctx.robots[i].mem.parent = hand;
            decisions[i] = MoveDecision::Exit(port);
        }
        Ok(decisions)
    }

    // -- Stage 5: perpendicular fan-out -------------------------------------

    fn stage5(&self, ctx: &mut GroupCtx, rho: u64) -> Result<Vec<MoveDecision>, EngineFault> {
        let degree = ctx.degree;
        let mut decisions = vec![MoveDecision::Stay; ctx.robots.len()];
        let unsettled = unsettled_indices(ctx);
        if unsettled.is_empty() {
            return Ok(decisions);
        }
        if has_settled(ctx) {
            return Err(EngineFault::Algorithm(
                "stage-5 walkers collided with a settled node".into(),
            ));
        }
        // The largest id settles here.
        let settler = *unsettled
            .iter()
            .max_by_key(|&&i| ctx.robots[i].mem.id)
            .expect("non-empty");
        ctx.robots[settler].mem.settled = true;
        let walkers: Vec<usize> = unsettled.into_iter().filter(|&i| i != settler).collect();
        if walkers.is_empty() {
            return Ok(decisions);
        }
        let group_wall = || {
            ctx.robots
                .iter()
                .map(|r| r.mem.parent)
                .find(|w| matches!(w, 1 | 2))
        };

        let port = if rho == 0 {
            // Leaving a deposit node: the port excluded by the recorded
            // entry/exit pairs of the co-located robots; two leftover
            // candidates fall back to the learned wall orientation.
            let mut excluded: Vec<Port> = Vec::new();
            let mut entry: Option<Port> = None;
            for r in ctx.robots.iter() {
                for v in [r.mem.port_entered, r.mem.port_exited] {
                    if v >= 0 && !excluded.contains(&(v as Port)) {
                        excluded.push(v as Port);
                    }
                }
                if r.mem.port_entered >= 0 {
                    entry = Some(r.mem.port_entered as Port);
                }
            }
            let cands: Vec<Port> = (1..=degree).filter(|&p| !excluded.contains(&p)).collect();
            match cands.len() {
                1 => cands[0],
                2 => {
                    let wall = group_wall().ok_or_else(|| {
                        EngineFault::Algorithm(
                            "ambiguous stage-5 exit without a wall orientation".into(),
                        )
                    })?;
                    let entry = entry.ok_or_else(|| {
                        EngineFault::Algorithm("stage-5 exit without an entry record".into())
                    })?;
                    // The wall bit names the interior-pointing candidate.
                    let cands = cyclic_candidates(entry, degree);
                    match wall {
                        WALL_INTERIOR_FIRST => cands[0],
                        _ => cands[1],
                    }
                }
                n => {
                    let pairs: Vec<(i16, i16)> = ctx
                        .robots
                        .iter()
                        .map(|r| (r.mem.port_entered, r.mem.port_exited))
                        .collect();
                    return Err(EngineFault::Algorithm(format!(
                        "stage-5 exit with {n} candidates (degree {degree},                          excluded {excluded:?}, pairs {pairs:?})"
                    )))
                }
            }
        } else {
            // Mid-walk: straight through interior nodes, wall-oriented
            // continuation along boundary columns.
            let e = ctx.robots[walkers[0]]
                .entered_via
                .ok_or_else(|| idle_fault("stage-5 walker"))?;
            match degree {
                4 => second_port_rule(e, 4)?,
                3 => {
                    let wall = group_wall().ok_or_else(|| {
                        EngineFault::Algorithm(
                            "boundary-column walk without a wall orientation".into(),
                        )
                    })?;
                    continuation_port(e, wall)?
                }
                _ => {
                    return Err(EngineFault::Algorithm(format!(
                        "stage-5 walkers overran their line (degree {degree}, round {rho})"
                    )))
                }
            }
        };
        for &i in &walkers {
            decisions[i] = MoveDecision::Exit(port);
        }
        Ok(decisions)
    }

    // -- Small k: line walk with reversal and perpendicular fallback --------

    fn smallk(&self, ctx: &mut GroupCtx) -> Result<Vec<MoveDecision>, EngineFault> {
        let degree = ctx.degree;
        let round = ctx.round;
        let mut decisions = vec![MoveDecision::Stay; ctx.robots.len()];
        let settled_here = has_settled(ctx);
        let mut unsettled = unsettled_indices(ctx);
        if unsettled.is_empty() {
            return Ok(decisions);
        }

        // Greedy settling: the largest unsettled robot claims a free node.
        if !settled_here {
            let settler = *unsettled
                .iter()
                .max_by_key(|&&i| ctx.robots[i].mem.id)
                .expect("non-empty");
            ctx.robots[settler].mem.settled = true;
            unsettled.retain(|&i| i != settler);
            if unsettled.is_empty() {
                return Ok(decisions);
            }
        }

        let ladder = self.x.min(self.y) <= 2;
        let leader = *unsettled
            .iter()
            .min_by_key(|&&i| ctx.robots[i].mem.id)
            .expect("non-empty");
        let salt = ctx.robots[leader].mem.id as u64;

        if round == 0 {
            let ports: Vec<Port> = (1..=degree).collect();
            let port = self.policy.pick(round, salt, &ports);
            let state = if ladder || degree == 4 {
                SK_WALK
            } else if degree == 2 {
                // Corner pile: hop to a neighbor, then probe from there.
                SK_REBASE
            } else {
                for &i in &unsettled {
                    ctx.robots[i].mem.port_exited = port as i16;
                }
                SK_OFF
            };
            for &i in &unsettled {
                ctx.robots[i].mem.stage = state;
                decisions[i] = MoveDecision::Exit(port);
            }
            return Ok(decisions);
        }

        // Mid-run: merged groups adopt the lowest-id robot's walk.
        let entry = ctx.robots[leader].entered_via;
        let state = ctx.robots[leader].mem.stage;
        let (port, new_state): (Port, u8) = match state {
            SK_WALK if ladder => {
                let e = entry.ok_or_else(|| idle_fault("ladder walker"))?;
                (zigzag_port(e, degree, round), SK_WALK)
            }
            SK_WALK => {
                let e = entry.ok_or_else(|| idle_fault("line walker"))?;
                if degree == 4 {
                    (second_port_rule(e, 4)?, SK_WALK)
                } else {
                    // Boundary hit: reverse along the same line.
                    (e, SK_REV)
                }
            }
            SK_REV => {
                let e = entry.ok_or_else(|| idle_fault("reversed walker"))?;
                if degree == 4 {
                    (second_port_rule(e, 4)?, SK_REV)
                } else {
                    // Second boundary hit: switch to a perpendicular line.
                    let cands: Vec<Port> = (1..=degree).filter(|&p| p != e).collect();
                    let pick = self.policy.pick(round, salt, &cands);
                    for &i in &unsettled {
                        ctx.robots[i].mem.port_entered = e as i16;
                        ctx.robots[i].mem.port_exited = pick as i16;
                    }
                    (pick, SK_PERP)
                }
            }
            SK_OFF => {
                let e = entry.ok_or_else(|| idle_fault("probing walker"))?;
                if degree == 4 {
                    (second_port_rule(e, 4)?, SK_WALK)
                } else {
                    // Still on the boundary: back to the base to retry.
                    (e, SK_OFF_BACK)
                }
            }
            SK_OFF_BACK => {
                // Back at the probe base: try a port not yet taken.
                let pe = ctx.robots[leader].mem.port_entered;
                let px = ctx.robots[leader].mem.port_exited;
                let cands: Vec<Port> = (1..=degree)
                    .filter(|&p| (pe < 0 || p as i16 != pe) && (px < 0 || p as i16 != px))
                    .collect();
                if cands.is_empty() {
                    return Err(EngineFault::Algorithm(
                        "probe base exhausted without finding the interior".into(),
                    ));
                }
                let pick = self.policy.pick(round, salt, &cands);
                for &i in &unsettled {
                    ctx.robots[i].mem.port_entered = px;
                    ctx.robots[i].mem.port_exited = pick as i16;
                }
                (pick, SK_OFF)
            }
            SK_REBASE => {
                // First node after a corner start: probe from here.
                let e = entry.ok_or_else(|| idle_fault("rebasing walker"))?;
                let cands: Vec<Port> = (1..=degree).filter(|&p| p != e).collect();
                let pick = self.policy.pick(round, salt, &cands);
                for &i in &unsettled {
                    ctx.robots[i].mem.port_entered = e as i16;
                    ctx.robots[i].mem.port_exited = pick as i16;
                }
                (pick, SK_OFF)
            }
            SK_PERP => {
                let e = entry.ok_or_else(|| idle_fault("perpendicular walker"))?;
                if degree == 4 {
                    // Probed into the interior: return and take the third.
                    (e, SK_PERP_BACK)
                } else {
                    let cands: Vec<Port> = (1..=degree).filter(|&p| p != e).collect();
                    let pick = self.policy.pick(round, salt, &cands);
                    for &i in &unsettled {
                        ctx.robots[i].mem.port_entered = e as i16;
                        ctx.robots[i].mem.port_exited = pick as i16;
                    }
                    (pick, SK_PERP)
                }
            }
            SK_PERP_BACK => {
                let pe = ctx.robots[leader].mem.port_entered;
                let px = ctx.robots[leader].mem.port_exited;
                let cands: Vec<Port> = (1..=degree)
                    .filter(|&p| (pe < 0 || p as i16 != pe) && (px < 0 || p as i16 != px))
                    .collect();
                if cands.is_empty() {
                    return Err(EngineFault::Algorithm(
                        "perpendicular walk exhausted a node's ports".into(),
                    ));
                }
                let pick = self.policy.pick(round, salt, &cands);
                for &i in &unsettled {
                    ctx.robots[i].mem.port_exited = pick as i16;
                }
                (pick, SK_PERP)
            }
            other => {
                return Err(EngineFault::Algorithm(format!(
                    "unsettled robot in unexpected walk state {other}"
                )));
            }
        };
        for &i in &unsettled {
            ctx.robots[i].mem.stage = new_state;
            decisions[i] = MoveDecision::Exit(port);
        }
        Ok(decisions)
    }
}

fn idle_fault(who: &str) -> EngineFault {
    EngineFault::Algorithm(format!("{who} has no entry port when one is required"))
}
