//! Anonymous port-labeled graphs.
//!
//! Nodes carry no identifiers visible to algorithms; every node labels its
//! incident edges with ports `1..=degree`, and the two port numbers of an
//! edge are uncorrelated. Node indices exist only for simulator bookkeeping;
//! algorithm code never sees them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Simulator-internal node index, `0..n`.
pub type Node = usize;
/// Port label, `1..=degree` at each node.
pub type Port = u8;

/// An undirected edge with its two endpoint port labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub u: Node,
    pub port_u: Port,
    pub v: Node,
    pub port_v: Port,
}

impl Edge {
    /// Normalized form with the smaller endpoint first, for set comparisons.
    pub fn normalized(&self) -> Edge {
        if self.u <= self.v {
            *self
        } else {
            Edge {
                u: self.v,
                port_u: self.port_v,
                v: self.u,
                port_v: self.port_u,
            }
        }
    }
}

/// First violated invariant found by [`PortGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphViolation {
    #[error("node index {node} out of range (n = {n})")]
    NodeOutOfRange { node: Node, n: usize },
    #[error("self-loop at node {node}")]
    SelfLoop { node: Node },
    #[error("parallel edge between {u} and {v}")]
    ParallelEdge { u: Node, v: Node },
    #[error("port bijection violated at node {node}: {detail}")]
    PortBijection { node: Node, detail: String },
    #[error("graph is not connected: node {unreached} unreachable from node 0")]
    NotConnected { unreached: Node },
}

/// Errors from graph construction and serialization.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{0}")]
    Violation(#[from] GraphViolation),
    #[error("infeasible parameters: {0}")]
    Infeasible(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Connected, undirected, simple graph with per-node port labels.
///
/// Immutable after construction; shared read access is safe.
#[derive(Debug, Clone)]
pub struct PortGraph {
    node_count: usize,
    edges: Vec<Edge>,
    /// `adjacency[u][p-1] = (v, port of v entered through)` for port `p`.
    adjacency: Vec<Vec<(Node, Port)>>,
    max_degree: u8,
}

impl PortGraph {
    /// Builds a graph from an edge list and validates every invariant.
    pub fn from_edges(node_count: usize, edges: Vec<Edge>) -> Result<PortGraph, GraphViolation> {
        if node_count == 0 {
            return Err(GraphViolation::NodeOutOfRange { node: 0, n: 0 });
        }
        // Range, loop and parallel-edge checks on the raw list.
        let mut seen_pairs: BTreeSet<(Node, Node)> = BTreeSet::new();
        for e in &edges {
            for node in [e.u, e.v] {
                if node >= node_count {
                    return Err(GraphViolation::NodeOutOfRange {
                        node,
                        n: node_count,
                    });
                }
            }
            if e.u == e.v {
                return Err(GraphViolation::SelfLoop { node: e.u });
            }
            let key = (e.u.min(e.v), e.u.max(e.v));
            if !seen_pairs.insert(key) {
                return Err(GraphViolation::ParallelEdge { u: key.0, v: key.1 });
            }
        }
        // Port bijection: at every node the incident ports are exactly 1..=degree.
        let mut port_maps: Vec<BTreeMap<Port, (Node, Port)>> = vec![BTreeMap::new(); node_count];
        for e in &edges {
            if port_maps[e.u].insert(e.port_u, (e.v, e.port_v)).is_some() {
                return Err(GraphViolation::PortBijection {
                    node: e.u,
                    detail: format!("port {} used twice", e.port_u),
                });
            }
            if port_maps[e.v].insert(e.port_v, (e.u, e.port_u)).is_some() {
                return Err(GraphViolation::PortBijection {
                    node: e.v,
                    detail: format!("port {} used twice", e.port_v),
                });
            }
        }
        let mut adjacency = Vec::with_capacity(node_count);
        let mut max_degree = 0u8;
        for (node, map) in port_maps.iter().enumerate() {
            let degree = map.len();
            if degree > u8::MAX as usize {
                return Err(GraphViolation::PortBijection {
                    node,
                    detail: "degree exceeds supported port range".into(),
                });
            }
            let mut row = Vec::with_capacity(degree);
            for p in 1..=degree as u8 {
                match map.get(&p) {
                    Some(&target) => row.push(target),
                    None => {
                        return Err(GraphViolation::PortBijection {
                            node,
                            detail: format!("ports are not exactly 1..={degree}: missing {p}"),
                        })
                    }
                }
            }
            max_degree = max_degree.max(degree as u8);
            adjacency.push(row);
        }
        let g = PortGraph {
            node_count,
            edges,
            adjacency,
            max_degree,
        };
        if let Some(unreached) = g.first_unreachable() {
            return Err(GraphViolation::NotConnected { unreached });
        }
        Ok(g)
    }

    /// Re-checks all construction invariants; `Ok(())` or the first violation.
    pub fn validate(&self) -> Result<(), GraphViolation> {
        PortGraph::from_edges(self.node_count, self.edges.clone()).map(|_| ())
    }

    fn first_unreachable(&self) -> Option<Node> {
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::new();
        seen[0] = true;
        queue.push_back(0);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.iter().position(|s| !s)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges in normalized, sorted order (a canonical set representation).
    pub fn edge_set(&self) -> Vec<Edge> {
        let mut set: Vec<Edge> = self.edges.iter().map(Edge::normalized).collect();
        set.sort();
        set
    }

    pub fn degree(&self, node: Node) -> u8 {
        self.adjacency[node].len() as u8
    }

    pub fn max_degree(&self) -> u8 {
        self.max_degree
    }

    /// The node reached by leaving `node` through `port`, and the port by
    /// which it is entered.
    pub fn neighbor_via(&self, node: Node, port: Port) -> Result<(Node, Port), GraphError> {
        if node >= self.node_count {
            return Err(GraphViolation::NodeOutOfRange {
                node,
                n: self.node_count,
            }
            .into());
        }
        let row = &self.adjacency[node];
        if port == 0 || port as usize > row.len() {
            return Err(GraphError::Infeasible(format!(
                "port {port} out of range at a node of degree {}",
                row.len()
            )));
        }
        Ok(row[port as usize - 1])
    }
}

// ---------------------------------------------------------------------------
// Grid graphs
// ---------------------------------------------------------------------------

/// Geometric direction on a grid, in clockwise order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const CLOCKWISE: [Direction; 4] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
    ];

    pub fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::East => Direction::West,
            Direction::South => Direction::North,
            Direction::West => Direction::East,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::North => "N",
            Direction::East => "E",
            Direction::South => "S",
            Direction::West => "W",
        };
        f.write_str(s)
    }
}

/// Grid node classification by degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Corner,
    Boundary,
    Interior,
}

/// How grid port labels are assigned around each node.
///
/// Both policies keep increasing labels in clockwise geometric order, which
/// is what makes the second-port rule produce straight-line motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelPolicy {
    /// Label 1 points north where north exists; otherwise the first existing
    /// direction in the N, E, S, W scan gets label 1.
    Canonical,
    /// Per-node seeded cyclic rotation of the canonical assignment.
    Rotated(u64),
}

/// Verifier-side metadata for a generated grid: dimensions, coordinates,
/// classification and the recorded clockwise port order per node.
#[derive(Debug, Clone)]
pub struct GridMeta {
    width: usize,
    height: usize,
    /// Clockwise geometric order of (direction, port label) per node.
    cyclic: Vec<Vec<(Direction, Port)>>,
}

impl GridMeta {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn node_at(&self, col: usize, row: usize) -> Node {
        row * self.width + col
    }

    pub fn col(&self, node: Node) -> usize {
        node % self.width
    }

    pub fn row(&self, node: Node) -> usize {
        node / self.width
    }

    pub fn class(&self, node: Node) -> NodeClass {
        let (c, r) = (self.col(node), self.row(node));
        let on_col_edge = c == 0 || c + 1 == self.width;
        let on_row_edge = r == 0 || r + 1 == self.height;
        match (on_col_edge, on_row_edge) {
            (true, true) => NodeClass::Corner,
            (false, false) => NodeClass::Interior,
            _ => NodeClass::Boundary,
        }
    }

    /// Nodes on the outer frame.
    pub fn boundary_nodes(&self) -> Vec<Node> {
        (0..self.width * self.height)
            .filter(|&v| self.class(v) != NodeClass::Interior)
            .collect()
    }

    /// The clockwise geometric sequence of (direction, port) at `node`.
    pub fn cyclic_order(&self, node: Node) -> &[(Direction, Port)] {
        &self.cyclic[node]
    }

    /// Port label pointing in `dir` at `node`, if that neighbor exists.
    pub fn port_toward(&self, node: Node, dir: Direction) -> Option<Port> {
        self.cyclic[node]
            .iter()
            .find(|(d, _)| *d == dir)
            .map(|&(_, p)| p)
    }

    /// Direction of `port` at `node`.
    pub fn direction_of(&self, node: Node, port: Port) -> Option<Direction> {
        self.cyclic[node]
            .iter()
            .find(|(_, p)| *p == port)
            .map(|&(d, _)| d)
    }
}

fn grid_neighbor(width: usize, height: usize, node: Node, dir: Direction) -> Option<Node> {
    let (c, r) = (node % width, node / width);
    match dir {
        Direction::North => (r > 0).then(|| node - width),
        Direction::South => (r + 1 < height).then(|| node + width),
        Direction::West => (c > 0).then(|| node - 1),
        Direction::East => (c + 1 < width).then(|| node + 1),
    }
}

/// Builds an `x`-by-`y` rectangular grid with clockwise cyclic port labels.
pub fn build_rect_grid(
    x: usize,
    y: usize,
    policy: LabelPolicy,
) -> Result<(PortGraph, GridMeta), GraphError> {
    if x < 2 || y < 2 {
        return Err(GraphError::Infeasible(format!(
            "grid dimensions must be at least 2x2, got {x}x{y}"
        )));
    }
    let n = x * y;
    let mut cyclic: Vec<Vec<(Direction, Port)>> = Vec::with_capacity(n);
    let mut rng = match policy {
        LabelPolicy::Canonical => None,
        LabelPolicy::Rotated(seed) => Some(ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15)),
    };
    for node in 0..n {
        let dirs: Vec<Direction> = Direction::CLOCKWISE
            .into_iter()
            .filter(|&d| grid_neighbor(x, y, node, d).is_some())
            .collect();
        let delta = dirs.len();
        let offset = match &mut rng {
            None => 0,
            Some(r) => r.gen_range(0..delta),
        };
        // Label l sits at cyclic position (l-1+offset) mod delta.
        let mut order: Vec<(Direction, Port)> = Vec::with_capacity(delta);
        for (slot, &d) in dirs.iter().enumerate() {
            let label = ((slot + delta - offset) % delta) as Port + 1;
            order.push((d, label));
        }
        cyclic.push(order);
    }
    let mut edges = Vec::new();
    for node in 0..n {
        for &(d, p) in &cyclic[node] {
            if d == Direction::East || d == Direction::South {
                let other = grid_neighbor(x, y, node, d).expect("direction checked");
                let back = cyclic[other]
                    .iter()
                    .find(|(od, _)| *od == d.opposite())
                    .map(|&(_, q)| q)
                    .expect("grid symmetry");
                edges.push(Edge {
                    u: node,
                    port_u: p,
                    v: other,
                    port_v: back,
                });
            }
        }
    }
    let graph = PortGraph::from_edges(n, edges)?;
    let meta = GridMeta {
        width: x,
        height: y,
        cyclic,
    };
    Ok((graph, meta))
}

/// Builds a `side`-by-`side` square grid.
pub fn build_grid(side: usize, policy: LabelPolicy) -> Result<(PortGraph, GridMeta), GraphError> {
    build_rect_grid(side, side, policy)
}

// ---------------------------------------------------------------------------
// Other test-input families
// ---------------------------------------------------------------------------

/// Cycle on `n >= 3` nodes; port 1 leads forward, port 2 backward.
pub fn build_ring(n: usize) -> Result<PortGraph, GraphError> {
    if n < 3 {
        return Err(GraphError::Infeasible(format!("ring needs n >= 3, got {n}")));
    }
    let mut edges = Vec::with_capacity(n);
    for u in 0..n {
        let v = (u + 1) % n;
        edges.push(Edge {
            u,
            port_u: 1,
            v,
            port_v: 2,
        });
    }
    Ok(PortGraph::from_edges(n, edges)?)
}

/// Path on `n >= 1` nodes; interior ports 1 (back) and 2 (forward).
pub fn build_path(n: usize) -> Result<PortGraph, GraphError> {
    if n == 0 {
        return Err(GraphError::Infeasible("path needs n >= 1".into()));
    }
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for u in 0..n.saturating_sub(1) {
        let port_u = if u == 0 { 1 } else { 2 };
        edges.push(Edge {
            u,
            port_u,
            v: u + 1,
            port_v: 1,
        });
    }
    Ok(PortGraph::from_edges(n, edges)?)
}

/// Assigns each node's ports by a seeded permutation over its incident edges.
fn permute_ports(
    n: usize,
    undirected: &[(Node, Node)],
    rng: &mut ChaCha8Rng,
) -> Result<PortGraph, GraphError> {
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (idx, &(u, v)) in undirected.iter().enumerate() {
        incident[u].push(idx);
        incident[v].push(idx);
    }
    // ports[node][slot] -> edge index, slot order shuffled per node
    let mut labels: Vec<BTreeMap<usize, Port>> = vec![BTreeMap::new(); n];
    for node in 0..n {
        let mut slots = incident[node].clone();
        slots.shuffle(rng);
        for (i, edge_idx) in slots.into_iter().enumerate() {
            labels[node].insert(edge_idx, i as Port + 1);
        }
    }
    let edges = undirected
        .iter()
        .enumerate()
        .map(|(idx, &(u, v))| Edge {
            u,
            port_u: labels[u][&idx],
            v,
            port_v: labels[v][&idx],
        })
        .collect();
    Ok(PortGraph::from_edges(n, edges)?)
}

/// Random tree on `n` nodes by seeded attachment; ports seeded per node.
pub fn build_tree(n: usize, seed: u64) -> Result<PortGraph, GraphError> {
    if n == 0 {
        return Err(GraphError::Infeasible("tree needs n >= 1".into()));
    }
    // Salt so tree and random generators with equal seeds differ.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    let mut undirected = Vec::with_capacity(n.saturating_sub(1));
    for v in 1..n {
        let u = rng.gen_range(0..v);
        undirected.push((u, v));
    }
    permute_ports(n, &undirected, &mut rng)
}

/// Connected simple graph with exactly `m` edges: seeded spanning tree plus
/// rejection-sampled extra edges; ports by seeded per-node permutation.
pub fn build_random_connected(n: usize, m: usize, seed: u64) -> Result<PortGraph, GraphError> {
    if n == 0 {
        return Err(GraphError::Infeasible("graph needs n >= 1".into()));
    }
    let min_m = n - 1;
    let max_m = n * (n - 1) / 2;
    if m < min_m || m > max_m {
        return Err(GraphError::Infeasible(format!(
            "n={n} requires {min_m} <= m <= {max_m}, got m={m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
    let mut present: BTreeSet<(Node, Node)> = BTreeSet::new();
    let mut undirected = Vec::with_capacity(m);
    for v in 1..n {
        let u = rng.gen_range(0..v);
        undirected.push((u, v));
        present.insert((u, v));
    }
    while undirected.len() < m {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if present.insert(key) {
            undirected.push(key);
        }
    }
    permute_ports(n, &undirected, &mut rng)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Writes the graph text format: `n m` then `u pu v pv` per edge.
pub fn save_graph<W: Write>(g: &PortGraph, mut sink: W) -> Result<(), GraphError> {
    writeln!(sink, "{} {}", g.node_count(), g.edge_count())?;
    for e in &g.edges {
        writeln!(sink, "{} {} {} {}", e.u, e.port_u, e.v, e.port_v)?;
    }
    Ok(())
}

/// Parses the graph text format and validates the result.
pub fn load_graph<R: BufRead>(source: R) -> Result<PortGraph, GraphError> {
    let mut header: Option<(usize, usize)> = None;
    let mut edges = Vec::new();
    let mut data_lines = 0usize;
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        data_lines += 1;
        if data_lines == 1 {
            if fields.len() != 2 {
                return Err(GraphError::Parse {
                    line: line_no,
                    msg: format!("expected header `n m`, got `{body}`"),
                });
            }
            let n = fields[0].parse().map_err(|_| GraphError::Parse {
                line: line_no,
                msg: format!("bad node count `{}`", fields[0]),
            })?;
            let m = fields[1].parse().map_err(|_| GraphError::Parse {
                line: line_no,
                msg: format!("bad edge count `{}`", fields[1]),
            })?;
            header = Some((n, m));
            continue;
        }
        if fields.len() != 4 {
            return Err(GraphError::Parse {
                line: line_no,
                msg: format!("expected `u pu v pv`, got `{body}`"),
            });
        }
        let mut nums = [0usize; 4];
        for (i, f) in fields.iter().enumerate() {
            nums[i] = f.parse().map_err(|_| GraphError::Parse {
                line: line_no,
                msg: format!("bad integer `{f}`"),
            })?;
        }
        if nums[1] == 0 || nums[1] > u8::MAX as usize || nums[3] == 0 || nums[3] > u8::MAX as usize
        {
            return Err(GraphError::Parse {
                line: line_no,
                msg: "port labels must be in 1..=255".into(),
            });
        }
        edges.push(Edge {
            u: nums[0],
            port_u: nums[1] as Port,
            v: nums[2],
            port_v: nums[3] as Port,
        });
    }
    let (n, m) = header.ok_or(GraphError::Parse {
        line: 1,
        msg: "missing header line `n m`".into(),
    })?;
    if edges.len() != m {
        return Err(GraphError::Parse {
            line: data_lines + 1,
            msg: format!("edge count mismatch: header says {m}, found {}", edges.len()),
        });
    }
    Ok(PortGraph::from_edges(n, edges)?)
}

/// DOT export with `pu|pv` edge labels and optional per-node annotations.
pub fn to_dot(g: &PortGraph, node_labels: &dyn Fn(Node) -> String) -> String {
    let mut out = String::from("graph G {\n  node [shape=circle];\n");
    for v in 0..g.node_count() {
        let extra = node_labels(v);
        if extra.is_empty() {
            out.push_str(&format!("  {v} [label=\"{v}\"];\n"));
        } else {
            out.push_str(&format!("  {v} [label=\"{v}\\n{extra}\"];\n"));
        }
    }
    for e in &g.edges {
        out.push_str(&format!(
            "  {} -- {} [label=\"{}|{}\"];\n",
            e.u, e.v, e.port_u, e.port_v
        ));
    }
    out.push_str("}\n");
    out
}
