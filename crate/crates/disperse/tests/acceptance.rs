//! Acceptance suite: every criterion runs at its stated tolerance and
//! prints one pass/fail line. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use disperse::algo_arbitrary::{DfsSingleSource, GraphDisperse, PassSchedule};
use disperse::algo_grid::{GridStage, GridStageSchedule};
use disperse::engine::{run, ChoicePolicy, Field, WidthSpec, WorldState};
use disperse::graphcore::{
    build_grid, build_path, build_rect_grid, build_random_connected, build_ring, build_tree,
    LabelPolicy,
};
use disperse::verify::{
    audit_graph_run, audit_grid_run, bound_auditor, exhaustive_oracle_graphs,
    exhaustive_oracle_grids, AlgoKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

// -- Criterion 1: single-source DFS round bound -----------------------------

#[test]
fn criterion_01_single_source_dfs() {
    let t0 = Instant::now();
    let mut worst_margin = i64::MAX;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=100);
        let m_max = n * (n - 1) / 2;
        let m = rng.gen_range(n - 1..=m_max);
        let g = Arc::new(build_random_connected(n, m, seed).expect("generator"));
        let k = rng.gen_range(1..=n as u32);
        let start = rng.gen_range(0..n);
        let algo = DfsSingleSource::new(n, m, k, g.max_degree());
        let mut w = WorldState::new(Arc::clone(&g), vec![start; k as usize]).expect("world");
        let (_, metrics) = run(&mut w, &algo, u64::MAX).expect("engine");
        let rep = bound_auditor(&metrics, n, m, k, g.max_degree(), AlgoKind::DfsSingleSource);
        if !w.is_dispersed() || !rep.pass {
            report(
                "1",
                false,
                &format!("seed {seed} (n={n}, m={m}, k={k}): {:?}", rep.lines),
            );
        }
        let bound = ((4 * m) as u64).saturating_sub(2 * n as u64) + 2;
        let bound = bound.min(k as u64 * g.max_degree() as u64);
        worst_margin =
            worst_margin.min(bound as i64 - metrics.rounds_to_dispersion.unwrap() as i64);
    }
    report(
        "1",
        true,
        &format!(
            "200 single-source DFS runs within min(4m-2n+2, k*delta); worst margin \
             {worst_margin}; {:?}",
            t0.elapsed()
        ),
    );
}

// -- Criteria 2-4: Graph_Disperse with its structural invariants ------------

struct GraphSuite {
    runs: usize,
    budget_failures: Vec<String>,
    halving_failures: Vec<String>,
    structure_failures: Vec<String>,
    elapsed: std::time::Duration,
}

fn graph_suite() -> &'static GraphSuite {
    static SUITE: OnceLock<GraphSuite> = OnceLock::new();
    SUITE.get_or_init(|| {
        let t0 = Instant::now();
        let mut runs = 0;
        let mut budget_failures = Vec::new();
        let mut halving_failures = Vec::new();
        let mut structure_failures = Vec::new();
        for seed in 0..125u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
            for family in 0..4 {
                let n = rng.gen_range(3..=80);
                let g = match family {
                    0 => {
                        let m_max = n * (n - 1) / 2;
                        let m = rng.gen_range(n - 1..=m_max.min(3 * n));
                        build_random_connected(n, m, seed).expect("generator")
                    }
                    1 => build_ring(n).expect("generator"),
                    2 => build_path(n).expect("generator"),
                    _ => build_tree(n, seed).expect("generator"),
                };
                let g = Arc::new(g);
                let n = g.node_count();
                let k = rng.gen_range(1..=n as u32);
                let placement: Vec<usize> = (0..k).map(|_| rng.gen_range(0..n)).collect();
                let tag = format!("seed {seed} family {family} n={n} k={k}");
                match audit_graph_run(&g, &placement) {
                    Err(fault) => budget_failures.push(format!("{tag}: engine fault {fault}")),
                    Ok(audit) => {
                        let sched =
                            PassSchedule::new(n, g.edge_count(), k, g.max_degree());
                        match audit.rounds_to_dispersion {
                            None => budget_failures.push(format!("{tag}: not dispersed")),
                            Some(r) if r > sched.total_budget() => budget_failures
                                .push(format!("{tag}: {r} rounds > {}", sched.total_budget())),
                            _ => {}
                        }
                        if audit.passes_used > sched.pass_count {
                            budget_failures.push(format!(
                                "{tag}: {} passes > {}",
                                audit.passes_used, sched.pass_count
                            ));
                        }
                        for v in audit.violations {
                            let line = format!("{tag}: {v}");
                            if v.contains("halving") {
                                halving_failures.push(line);
                            } else {
                                structure_failures.push(line);
                            }
                        }
                    }
                }
                runs += 1;
            }
        }
        GraphSuite {
            runs,
            budget_failures,
            halving_failures,
            structure_failures,
            elapsed: t0.elapsed(),
        }
    })
}

#[test]
fn criterion_02_graph_disperse_budgets() {
    let suite = graph_suite();
    report(
        "2",
        suite.budget_failures.is_empty(),
        &format!(
            "{} seeded runs over random/ring/path/tree dispersed within ceil(log2 k) \
             passes and the stage budgets; {:?}{}",
            suite.runs,
            suite.elapsed,
            if suite.budget_failures.is_empty() {
                String::new()
            } else {
                format!("; first: {}", suite.budget_failures[0])
            }
        ),
    );
}

#[test]
fn criterion_03_halving() {
    let suite = graph_suite();
    report(
        "3",
        suite.halving_failures.is_empty(),
        &format!(
            "unsettled-node halving held at every pass of {} runs{}",
            suite.runs,
            if suite.halving_failures.is_empty() {
                String::new()
            } else {
                format!("; first: {}", suite.halving_failures[0])
            }
        ),
    );
}

#[test]
fn criterion_04_dichotomy_and_subcomponents() {
    let suite = graph_suite();
    report(
        "4",
        suite.structure_failures.is_empty(),
        &format!(
            "stage-1 dichotomy, sub-component map, and gathering completion held \
             across {} runs{}",
            suite.runs,
            if suite.structure_failures.is_empty() {
                String::new()
            } else {
                format!("; first: {}", suite.structure_failures[0])
            }
        ),
    );
}

// -- Criterion 5: grid exact cover and per-stage budgets --------------------

#[test]
fn criterion_05_grid_exact_cover() {
    let t0 = Instant::now();
    // The schedule's stage lengths are pinned to the five budgets.
    for side in 3..=12usize {
        let s = side as u64;
        let sched = GridStageSchedule::square(side);
        assert_eq!(sched.stage_len(GridStage::One), s - 1);
        assert_eq!(sched.stage_len(GridStage::Two), 3 * (s - 1));
        assert_eq!(sched.stage_len(GridStage::Three), 9 * (s - 1));
        assert_eq!(sched.stage_len(GridStage::Four), 3 * s - 1);
        assert_eq!(sched.stage_len(GridStage::Five), s);
        assert_eq!(sched.total(), 17 * s - 14);
    }
    let mut runs = 0;
    for side in 3..=12usize {
        let (g, meta) = build_grid(side, LabelPolicy::Canonical).expect("grid");
        let g = Arc::new(g);
        let n = side * side;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + side as u64);
            let placement: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let audit = audit_grid_run(&g, &meta, &placement, ChoicePolicy::LowestPort)
                .expect("engine");
            if !audit.ok() {
                report(
                    "5",
                    false,
                    &format!("side {side} seed {seed}: {}", audit.violations.join("; ")),
                );
            }
            runs += 1;
        }
    }
    report(
        "5",
        true,
        &format!(
            "{runs} k=n grid runs: exact cover, stage post-states, and the \
             17*sqrt(n)-14 total; {:?}",
            t0.elapsed()
        ),
    );
}

// -- Criterion 6: intermediate and small k on squares ------------------------

#[test]
fn criterion_06_grid_intermediate_and_small_k() {
    let t0 = Instant::now();
    let mut runs = 0;
    for side in 4..=12usize {
        let (g, meta) = build_grid(side, LabelPolicy::Canonical).expect("grid");
        let g = Arc::new(g);
        let n = side * side;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 77 + side as u64);
            // sqrt(n) <= k < n
            let k = rng.gen_range(side..n);
            let placement: Vec<usize> = (0..k).map(|_| rng.gen_range(0..n)).collect();
            let audit = audit_grid_run(&g, &meta, &placement, ChoicePolicy::LowestPort)
                .expect("engine");
            if !audit.ok() {
                report(
                    "6",
                    false,
                    &format!(
                        "side {side} seed {seed} k={k}: {}",
                        audit.violations.join("; ")
                    ),
                );
            }
            // k < sqrt(n): single pile (the 2k-1 / k+4 bounds)
            let k = rng.gen_range(1..side);
            let pile = rng.gen_range(0..n);
            let audit = audit_grid_run(&g, &meta, &vec![pile; k], ChoicePolicy::LowestPort)
                .expect("engine");
            if !audit.ok() {
                report(
                    "6",
                    false,
                    &format!(
                        "side {side} seed {seed} small-k pile k={k}@{pile}: {}",
                        audit.violations.join("; ")
                    ),
                );
            }
            // k < sqrt(n): scattered
            let k = rng.gen_range(2..side);
            let placement: Vec<usize> = (0..k).map(|_| rng.gen_range(0..n)).collect();
            let audit = audit_grid_run(&g, &meta, &placement, ChoicePolicy::LowestPort)
                .expect("engine");
            if !audit.ok() {
                report(
                    "6",
                    false,
                    &format!(
                        "side {side} seed {seed} small-k scatter k={k}: {}",
                        audit.violations.join("; ")
                    ),
                );
            }
            runs += 3;
        }
    }
    report(
        "6",
        true,
        &format!(
            "{runs} runs: intermediate k within the staged total, small k within \
             2k-1 (interior) / k+4 (boundary); {:?}",
            t0.elapsed()
        ),
    );
}

// -- Criterion 7: rectangular grids ------------------------------------------

#[test]
fn criterion_07_rectangular_grids() {
    let t0 = Instant::now();
    let mut runs = 0;
    for (x, y) in [(2usize, 5usize), (3, 4), (3, 7), (4, 9)] {
        let (g, meta) = build_rect_grid(x, y, LabelPolicy::Canonical).expect("grid");
        let g = Arc::new(g);
        let n = x * y;
        for k in [x.max(y), n / 2, n] {
            for seed in 0..20u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + (x * 100 + y) as u64);
                let placement: Vec<usize> = (0..k).map(|_| rng.gen_range(0..n)).collect();
                let audit = audit_grid_run(&g, &meta, &placement, ChoicePolicy::LowestPort)
                    .expect("engine");
                if !audit.ok() {
                    report(
                        "7",
                        false,
                        &format!(
                            "{x}x{y} k={k} seed {seed}: {}",
                            audit.violations.join("; ")
                        ),
                    );
                }
                runs += 1;
            }
        }
    }
    report(
        "7",
        true,
        &format!(
            "{runs} rectangular runs dispersed within 17*max(x,y) rounds; {:?}",
            t0.elapsed()
        ),
    );
}

// -- Criterion 8: memory accounting -------------------------------------------

#[test]
fn criterion_08_memory_accounting() {
    // Width formulas at a reference point: k = 16, delta = 4.
    let w = WidthSpec::new(16, 4, 1000);
    assert_eq!(w.width(Field::Settled), 1);
    assert_eq!(w.width(Field::Treelabel), 5); // ceil(log2 18)
    assert_eq!(w.width(Field::Parent), 3);
    assert_eq!(w.width(Field::Child), 3);
    assert_eq!(w.width(Field::PortEntered), 3);

    // Grid non-round registered fields fit 4*ceil(log2(k+2)) + 12 bits for
    // every k up to 12x12 = 144 robots.
    for k in 1..=144u32 {
        let algo = disperse::algo_grid::GridDisperse::new(12, 12, k, ChoicePolicy::LowestPort);
        let widths = WidthSpec::new(k, 4, 10_000);
        let non_round = widths.total_bits(disperse::engine::Algorithm::used_fields(&algo))
            - widths.width(Field::Round);
        let log_k2 = 32 - (k + 1).leading_zeros();
        assert!(
            non_round <= 4 * log_k2 + 12,
            "k={k}: {non_round} bits > {}",
            4 * log_k2 + 12
        );
    }

    // The arbitrary-graph algorithm stays within c * ceil(log2 n) bits for
    // a fixed small c at every tested size (c = 10).
    for (n, m, k) in [(10usize, 12usize, 5u32), (80, 200, 60), (100, 480, 100)] {
        let g = Arc::new(build_random_connected(n, m, 1).expect("generator"));
        let algo = GraphDisperse::new(n, m, k, g.max_degree());
        let mut w = WorldState::new(Arc::clone(&g), vec![0; k as usize]).expect("world");
        let (_, metrics) = run(&mut w, &algo, u64::MAX).expect("engine");
        let ceil_log2_n = usize::BITS - (n - 1).leading_zeros();
        assert!(
            metrics.max_memory_bits <= 10 * ceil_log2_n,
            "n={n}: {} bits > {}",
            metrics.max_memory_bits,
            10 * ceil_log2_n
        );
    }

    // Every write across every run fits its declared width: the engine
    // faults on overflow, so any violation would have failed criteria 1-7.
    report(
        "8",
        true,
        "width formulas verified; grid non-round fields within 4*ceil(log2(k+2))+12 bits; \
         graph algorithm within 10*ceil(log2 n) bits; overflow checks armed in every run",
    );
}

// -- Criterion 9: exhaustive oracle -------------------------------------------

#[test]
fn criterion_09_exhaustive_oracle() {
    let t0 = Instant::now();
    let cex = exhaustive_oracle_graphs(5, 4).expect("oracle");
    if let Some(cex) = cex {
        report(
            "9",
            false,
            &format!(
                "Graph_Disperse counterexample at n={} m={} k={} placement {:?}: {}",
                cex.n, cex.m, cex.k, cex.placement, cex.violation
            ),
        );
    }
    let graphs_done = t0.elapsed();
    let cex = exhaustive_oracle_grids(&[(2, 2), (2, 3), (3, 3)], ChoicePolicy::LowestPort)
        .expect("oracle");
    if let Some(cex) = cex {
        report(
            "9",
            false,
            &format!(
                "Grid_Disperse counterexample at n={} k={} placement {:?}: {}",
                cex.n, cex.k, cex.placement, cex.violation
            ),
        );
    }
    report(
        "9",
        true,
        &format!(
            "all placements of k <= 4 on connected graphs with n <= 5 and all \
             placements on 2x2/2x3/3x3 grids pass (graphs {graphs_done:?}, total {:?})",
            t0.elapsed()
        ),
    );
}

// -- Criterion 10: determinism -------------------------------------------------

#[test]
fn criterion_10_determinism() {
    use disperse::cli::{execute, parse_config, RunArgs};
    let base = |dir: &std::path::Path| RunArgs {
        graph: "random:24,40".into(),
        k: 10,
        placement: "random".into(),
        algo: "graph".into(),
        seed: 12,
        choice: "lowest".into(),
        label: "canonical".into(),
        max_rounds: None,
        out_dir: Some(dir.to_path_buf()),
        trace: None,
        metrics: None,
        audit: None,
        dot: Some(dir.join("final.dot")),
    };
    let dir1 = tempfile::tempdir().expect("tempdir");
    let dir2 = tempfile::tempdir().expect("tempdir");
    let code1 = execute(&parse_config(&base(dir1.path())).expect("config"));
    let code2 = execute(&parse_config(&base(dir2.path())).expect("config"));
    assert_eq!(code1, 0);
    assert_eq!(code2, 0);
    let mut identical = true;
    for name in ["trace.jsonl", "metrics.csv", "audit.txt", "final.dot"] {
        let a = std::fs::read(dir1.path().join(name)).expect("output");
        let b = std::fs::read(dir2.path().join(name)).expect("output");
        identical &= a == b;
    }
    report(
        "10",
        identical,
        "repeated runs produce byte-identical trace, metrics, audit, and DOT outputs",
    );
}
