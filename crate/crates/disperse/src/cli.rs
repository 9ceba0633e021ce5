//! Configuration, batch execution, and export.
//!
//! One process runs one configuration: build the world from flags, run the
//! selected algorithm to its budget, write the trace (JSONL), metrics (CSV)
//! and audit report, and exit 0 only if dispersion was reached and every
//! audit passed. Outputs are byte-identical across reruns of the same
//! configuration. Sweeps are driven by scripting over configs.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algo_arbitrary::{DfsSingleSource, GraphDisperse};
use crate::algo_grid::GridDisperse;
use crate::engine::{
    metrics_csv_row, run, write_trace_jsonl, Algorithm, ChoicePolicy, RunMetrics, RunTrace,
    TraceFrame, WorldState, METRICS_CSV_HEADER,
};
use crate::graphcore::{
    build_grid, build_path, build_rect_grid, build_random_connected, build_ring, build_tree,
    load_graph, to_dot, GridMeta, LabelPolicy, Node, PortGraph,
};
use crate::verify::{
    bound_auditor, check_dispersed, halving_monitor, pile_start_class, AlgoKind,
};

/// Exit codes: distinct failure classes for scripting.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NOT_DISPERSED: i32 = 3;
pub const EXIT_AUDIT_FAILED: i32 = 4;
pub const EXIT_ENGINE_FAULT: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "disperse",
    about = "Round-synchronous simulator for mobile-robot dispersion on port-labeled graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a world, run an algorithm, write trace/metrics/audit.
    Run(RunArgs),
    /// Export a DOT snapshot of a graph, optionally annotated from a trace.
    Dot(DotArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Graph: grid:SxS | rect:XxY | ring:N | path:N | tree:N | random:N,M | file:PATH
    #[arg(long)]
    pub graph: String,
    /// Number of robots (1..=n).
    #[arg(long)]
    pub k: u32,
    /// Placement: single:NODE | distinct | random | file:PATH
    #[arg(long, default_value = "random")]
    pub placement: String,
    /// Algorithm: dfs | graph | grid | grid-rect
    #[arg(long)]
    pub algo: String,
    /// Seed for generators, placements, and the seeded choice policy.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Choice policy: lowest | seeded
    #[arg(long, default_value = "lowest")]
    pub choice: String,
    /// Grid port labeling: canonical | rotated
    #[arg(long, default_value = "canonical")]
    pub label: String,
    /// Cap on rounds; only shrinks the algorithm's own budget.
    #[arg(long)]
    pub max_rounds: Option<u64>,
    /// Output directory (default: env DISPERSE_OUT_DIR or ".").
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Trace path override (default OUT_DIR/trace.jsonl).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Metrics path override (default OUT_DIR/metrics.csv).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Audit report path override (default OUT_DIR/audit.txt).
    #[arg(long)]
    pub audit: Option<PathBuf>,
    /// Optional DOT export of the final world state.
    #[arg(long)]
    pub dot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DotArgs {
    /// Graph file in the text format.
    #[arg(long)]
    pub graph_file: PathBuf,
    /// Optional trace (JSONL) to annotate robots from.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Frame index within the trace (0-based round).
    #[arg(long)]
    pub frame: Option<usize>,
    /// Output path (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(msg.into()))
}

/// Parsed graph specification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphSpec {
    Grid { side: usize },
    Rect { x: usize, y: usize },
    Ring { n: usize },
    Path { n: usize },
    Tree { n: usize },
    Random { n: usize, m: usize },
    File { path: PathBuf },
}

impl std::fmt::Display for GraphSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GraphSpec::Grid { side } => write!(f, "grid:{side}x{side}"),
            GraphSpec::Rect { x, y } => write!(f, "rect:{x}x{y}"),
            GraphSpec::Ring { n } => write!(f, "ring:{n}"),
            GraphSpec::Path { n } => write!(f, "path:{n}"),
            GraphSpec::Tree { n } => write!(f, "tree:{n}"),
            GraphSpec::Random { n, m } => write!(f, "random:{n},{m}"),
            GraphSpec::File { path } => write!(f, "file:{}", path.display()),
        }
    }
}

/// Parsed placement specification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlacementSpec {
    Single { node: Node },
    Distinct,
    Random,
    File { path: PathBuf },
}

impl std::fmt::Display for PlacementSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlacementSpec::Single { node } => write!(f, "single:{node}"),
            PlacementSpec::Distinct => write!(f, "distinct"),
            PlacementSpec::Random => write!(f, "random"),
            PlacementSpec::File { path } => write!(f, "file:{}", path.display()),
        }
    }
}

/// A validated run configuration.
#[derive(Debug)]
pub struct RunConfig {
    pub graph_spec: GraphSpec,
    pub graph_spec_text: String,
    pub k: u32,
    pub placement_spec: PlacementSpec,
    pub algo: String,
    pub seed: u64,
    pub policy: ChoicePolicy,
    pub label: LabelPolicy,
    pub max_rounds: Option<u64>,
    pub trace_path: PathBuf,
    pub metrics_path: PathBuf,
    pub audit_path: PathBuf,
    pub dot_path: Option<PathBuf>,
}

fn parse_dims(text: &str, sep: char) -> Option<(usize, usize)> {
    let (a, b) = text.split_once(sep)?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

pub fn parse_graph_spec(text: &str) -> Result<GraphSpec, CliError> {
    let (kind, rest) = text
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("malformed --graph `{text}`")))?;
    match kind {
        "grid" => {
            let (x, y) = parse_dims(rest, 'x')
                .ok_or_else(|| CliError::Config(format!("bad grid dims `{rest}`")))?;
            if x != y {
                return config_err(format!(
                    "grid:{rest} is not square; use rect:{rest} instead"
                ));
            }
            Ok(GraphSpec::Grid { side: x })
        }
        "rect" => {
            let (x, y) = parse_dims(rest, 'x')
                .ok_or_else(|| CliError::Config(format!("bad rect dims `{rest}`")))?;
            Ok(GraphSpec::Rect { x, y })
        }
        "ring" => Ok(GraphSpec::Ring {
            n: rest
                .parse()
                .map_err(|_| CliError::Config(format!("bad ring size `{rest}`")))?,
        }),
        "path" => Ok(GraphSpec::Path {
            n: rest
                .parse()
                .map_err(|_| CliError::Config(format!("bad path size `{rest}`")))?,
        }),
        "tree" => Ok(GraphSpec::Tree {
            n: rest
                .parse()
                .map_err(|_| CliError::Config(format!("bad tree size `{rest}`")))?,
        }),
        "random" => {
            let (n, m) = parse_dims(rest, ',')
                .ok_or_else(|| CliError::Config(format!("bad random spec `{rest}`")))?;
            Ok(GraphSpec::Random { n, m })
        }
        "file" => Ok(GraphSpec::File {
            path: PathBuf::from(rest),
        }),
        other => config_err(format!("unknown graph kind `{other}`")),
    }
}

pub fn parse_placement_spec(text: &str) -> Result<PlacementSpec, CliError> {
    match text {
        "distinct" => return Ok(PlacementSpec::Distinct),
        "random" => return Ok(PlacementSpec::Random),
        _ => {}
    }
    let (kind, rest) = text
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("malformed --placement `{text}`")))?;
    match kind {
        "single" => Ok(PlacementSpec::Single {
            node: rest
                .parse()
                .map_err(|_| CliError::Config(format!("bad node `{rest}`")))?,
        }),
        "file" => Ok(PlacementSpec::File {
            path: PathBuf::from(rest),
        }),
        other => config_err(format!("unknown placement kind `{other}`")),
    }
}

/// Validates flags into a RunConfig; usage errors name the offending flag.
pub fn parse_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let graph_spec = parse_graph_spec(&args.graph)?;
    let placement_spec = parse_placement_spec(&args.placement)?;
    match args.algo.as_str() {
        "dfs" => {
            if !matches!(placement_spec, PlacementSpec::Single { .. }) {
                return config_err(
                    "--algo dfs requires --placement single:NODE (all robots on one node)",
                );
            }
        }
        "graph" => {}
        "grid" => {
            if !matches!(graph_spec, GraphSpec::Grid { .. }) {
                return config_err("grid algorithm requires grid graph (--graph grid:SxS)");
            }
        }
        "grid-rect" => {
            if !matches!(graph_spec, GraphSpec::Rect { .. } | GraphSpec::Grid { .. }) {
                return config_err(
                    "grid-rect algorithm requires a grid graph (--graph rect:XxY)",
                );
            }
        }
        other => return config_err(format!("unknown --algo `{other}`")),
    }
    let policy = match args.choice.as_str() {
        "lowest" => ChoicePolicy::LowestPort,
        "seeded" => ChoicePolicy::Seeded(args.seed),
        other => return config_err(format!("unknown --choice `{other}`")),
    };
    let label = match args.label.as_str() {
        "canonical" => LabelPolicy::Canonical,
        "rotated" => LabelPolicy::Rotated(args.seed),
        other => return config_err(format!("unknown --label `{other}`")),
    };
    if args.k == 0 {
        return config_err("--k must be at least 1");
    }
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| std::env::var_os("DISPERSE_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let path_or = |over: &Option<PathBuf>, name: &str| {
        over.clone().unwrap_or_else(|| out_dir.join(name))
    };
    Ok(RunConfig {
        graph_spec,
        graph_spec_text: args.graph.clone(),
        k: args.k,
        placement_spec,
        algo: args.algo.clone(),
        seed: args.seed,
        policy,
        label,
        max_rounds: args.max_rounds,
        trace_path: path_or(&args.trace, "trace.jsonl"),
        metrics_path: path_or(&args.metrics, "metrics.csv"),
        audit_path: path_or(&args.audit, "audit.txt"),
        dot_path: args.dot.clone(),
    })
}

fn build_graph(config: &RunConfig) -> Result<(PortGraph, Option<GridMeta>), CliError> {
    let err = |e: crate::graphcore::GraphError| CliError::Config(e.to_string());
    match &config.graph_spec {
        GraphSpec::Grid { side } => {
            let (g, meta) = build_grid(*side, config.label).map_err(err)?;
            Ok((g, Some(meta)))
        }
        GraphSpec::Rect { x, y } => {
            let (g, meta) = build_rect_grid(*x, *y, config.label).map_err(err)?;
            Ok((g, Some(meta)))
        }
        GraphSpec::Ring { n } => Ok((build_ring(*n).map_err(err)?, None)),
        GraphSpec::Path { n } => Ok((build_path(*n).map_err(err)?, None)),
        GraphSpec::Tree { n } => Ok((build_tree(*n, config.seed).map_err(err)?, None)),
        GraphSpec::Random { n, m } => {
            Ok((build_random_connected(*n, *m, config.seed).map_err(err)?, None))
        }
        GraphSpec::File { path } => {
            let file = fs::File::open(path).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Ok((load_graph(BufReader::new(file)).map_err(err)?, None))
        }
    }
}

fn build_placement(config: &RunConfig, n: usize) -> Result<Vec<Node>, CliError> {
    let k = config.k as usize;
    if k > n {
        return config_err(format!("k exceeds n ({k} > {n})"));
    }
    match &config.placement_spec {
        PlacementSpec::Single { node } => {
            if *node >= n {
                return config_err(format!("placement node {node} out of range (n = {n})"));
            }
            Ok(vec![*node; k])
        }
        PlacementSpec::Distinct => Ok((0..k).collect()),
        PlacementSpec::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_1007);
            Ok((0..k).map(|_| rng.gen_range(0..n)).collect())
        }
        PlacementSpec::File { path } => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let nodes: Result<Vec<Node>, _> = text
                .lines()
                .map(|l| l.trim())
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .flat_map(|l| l.split_whitespace())
                .map(|tok| tok.parse::<Node>())
                .collect();
            let nodes =
                nodes.map_err(|_| CliError::Config("bad placement file contents".into()))?;
            if nodes.len() != k {
                return config_err(format!(
                    "placement file lists {} nodes, expected k = {k}",
                    nodes.len()
                ));
            }
            for &v in &nodes {
                if v >= n {
                    return config_err(format!("placement node {v} out of range (n = {n})"));
                }
            }
            Ok(nodes)
        }
    }
}

struct PreparedRun {
    graph: Arc<PortGraph>,
    meta: Option<GridMeta>,
    placement: Vec<Node>,
    algorithm: Box<dyn Algorithm>,
}

fn prepare(config: &RunConfig) -> Result<PreparedRun, CliError> {
    let (graph, meta) = build_graph(config)?;
    let graph = Arc::new(graph);
    let n = graph.node_count();
    let m = graph.edge_count();
    let delta = graph.max_degree();
    let placement = build_placement(config, n)?;
    let algorithm: Box<dyn Algorithm> = match config.algo.as_str() {
        "dfs" => Box::new(DfsSingleSource::new(n, m, config.k, delta)),
        "graph" => Box::new(GraphDisperse::new(n, m, config.k, delta)),
        "grid" | "grid-rect" => {
            let meta = meta.as_ref().expect("grid graphs carry meta");
            Box::new(GridDisperse::new(
                meta.width(),
                meta.height(),
                config.k,
                config.policy,
            ))
        }
        other => return config_err(format!("unknown --algo `{other}`")),
    };
    Ok(PreparedRun {
        graph,
        meta,
        placement,
        algorithm,
    })
}

/// Text of the audit report; `passed` is false if any line failed.
fn audit_report(
    config: &RunConfig,
    prepared: &PreparedRun,
    world: &WorldState,
    initial: &TraceFrame,
    trace: &RunTrace,
    metrics: &RunMetrics,
) -> (String, bool) {
    let graph = &prepared.graph;
    let n = graph.node_count();
    let m = graph.edge_count();
    let delta = graph.max_degree();
    let k = config.k;
    let mut out = String::new();
    let mut pass = true;

    let dispersed = check_dispersed(world);
    pass &= dispersed;
    let _ = writeln!(
        out,
        "dispersed: {} [{}]",
        dispersed,
        if dispersed { "ok" } else { "FAIL" }
    );

    let kind = match config.algo.as_str() {
        "dfs" => Some(AlgoKind::DfsSingleSource),
        "graph" => Some(AlgoKind::GraphDisperse),
        "grid" | "grid-rect" => prepared.meta.as_ref().map(|meta| {
            let (x, y) = (meta.width(), meta.height());
            if k >= x.max(y) as u32 {
                AlgoKind::GridStaged { x, y }
            } else {
                AlgoKind::GridSmallK {
                    x,
                    y,
                    interior_start: pile_start_class(meta, &prepared.placement),
                }
            }
        }),
        _ => None,
    };
    if let Some(kind) = kind {
        let report = bound_auditor(metrics, n, m, k, delta, kind);
        pass &= report.pass;
        for line in report.lines {
            let _ = writeln!(out, "{line}");
        }
    }
    if config.algo == "graph" {
        let sched = crate::algo_arbitrary::PassSchedule::new(n, m, k, delta);
        let halving = halving_monitor(initial, trace, &sched);
        for (p, (start, end)) in halving.per_pass.iter().enumerate() {
            let _ = writeln!(out, "halving pass {}: {start} -> {end}", p + 1);
        }
        pass &= halving.violations.is_empty();
        for v in halving.violations {
            let _ = writeln!(out, "halving violation: {v} [FAIL]");
        }
    }
    let _ = writeln!(
        out,
        "memory bits (registered fields): {}",
        metrics.max_memory_bits
    );
    (out, pass)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|source| CliError::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }
    }
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// DOT text of a world, annotated with robot ids, settled flags, treelabel.
pub fn export_dot_world(world: &WorldState) -> String {
    let graph = world.graph();
    let occupancy = world.occupancy();
    to_dot(graph, &|v| match occupancy.get(&v) {
        None => String::new(),
        Some(ids) => ids
            .iter()
            .map(|&id| {
                let mem = world.memory(id);
                let star = if mem.settled { "*" } else { "" };
                format!("r{id}{star}(t{})", mem.treelabel)
            })
            .collect::<Vec<_>>()
            .join(","),
    })
}

/// DOT text of a trace frame over a graph: robot ids and settled flags.
pub fn export_dot_frame(graph: &PortGraph, frame: &TraceFrame) -> String {
    to_dot(graph, &|v| {
        frame
            .robots
            .iter()
            .filter(|r| r.node == v)
            .map(|r| format!("r{}{}", r.id, if r.settled == 1 { "*" } else { "" }))
            .collect::<Vec<_>>()
            .join(",")
    })
}

/// Executes a run configuration; returns the process exit code.
pub fn execute(config: &RunConfig) -> i32 {
    let prepared = match prepare(config) {
        Ok(p) => p,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            return EXIT_CONFIG;
        }
        Err(e @ CliError::Io { .. }) => {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
    };
    let mut world = match WorldState::new(Arc::clone(&prepared.graph), prepared.placement.clone())
    {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let initial = TraceFrame::of_world(&world, 0);
    let max_rounds = config.max_rounds.unwrap_or(u64::MAX);
    let (trace, metrics) = match run(&mut world, prepared.algorithm.as_ref(), max_rounds) {
        Ok(r) => r,
        Err(fault) => {
            eprintln!("engine fault: {fault}");
            return EXIT_ENGINE_FAULT;
        }
    };

    let mut trace_bytes = Vec::new();
    if write_trace_jsonl(&trace, &mut trace_bytes).is_err() {
        return EXIT_IO;
    }
    let metrics_text = format!(
        "{METRICS_CSV_HEADER}\n{}\n",
        metrics_csv_row(
            &config.graph_spec_text,
            prepared.graph.node_count(),
            prepared.graph.edge_count(),
            config.k,
            prepared.graph.max_degree(),
            &config.algo,
            config.seed,
            &metrics,
        )
    );
    let (audit_text, audits_pass) =
        audit_report(config, &prepared, &world, &initial, &trace, &metrics);

    for (path, bytes) in [
        (&config.trace_path, trace_bytes.as_slice()),
        (&config.metrics_path, metrics_text.as_bytes()),
        (&config.audit_path, audit_text.as_bytes()),
    ] {
        if let Err(e) = write_file(path, bytes) {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
    }
    if let Some(dot_path) = &config.dot_path {
        if let Err(e) = write_file(dot_path, export_dot_world(&world).as_bytes()) {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
    }

    print!("{audit_text}");
    if !check_dispersed(&world) {
        EXIT_NOT_DISPERSED
    } else if !audits_pass {
        EXIT_AUDIT_FAILED
    } else {
        EXIT_OK
    }
}

/// Executes the dot subcommand; returns the process exit code.
pub fn execute_dot(args: &DotArgs) -> i32 {
    let file = match fs::File::open(&args.graph_file) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot open {}: {e}", args.graph_file.display());
            return EXIT_IO;
        }
    };
    let graph = match load_graph(BufReader::new(file)) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let dot = match (&args.trace, args.frame) {
        (Some(trace_path), frame) => {
            let text = match fs::read_to_string(trace_path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", trace_path.display());
                    return EXIT_IO;
                }
            };
            let frames: Vec<TraceFrame> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .filter_map(|l| serde_json::from_str(l).ok())
                .collect();
            let idx = frame.unwrap_or(frames.len().saturating_sub(1));
            match frames.get(idx) {
                Some(f) => export_dot_frame(&graph, f),
                None => {
                    eprintln!("error: frame {idx} out of range ({} frames)", frames.len());
                    return EXIT_CONFIG;
                }
            }
        }
        (None, _) => to_dot(&graph, &|_| String::new()),
    };
    match &args.out {
        Some(path) => {
            if let Err(e) = write_file(path, dot.as_bytes()) {
                eprintln!("error: {e}");
                return EXIT_IO;
            }
        }
        None => print!("{dot}"),
    }
    EXIT_OK
}

/// Entry point for the binary.
pub fn main_with(cli: Cli) -> i32 {
    match &cli.command {
        Command::Run(args) => match parse_config(args) {
            Ok(config) => execute(&config),
            Err(CliError::Config(msg)) => {
                eprintln!("error: {msg}");
                EXIT_CONFIG
            }
            Err(e @ CliError::Io { .. }) => {
                eprintln!("error: {e}");
                EXIT_IO
            }
        },
        Command::Dot(args) => execute_dot(args),
    }
}
