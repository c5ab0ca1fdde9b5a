//! Directed communication graphs and time-varying graph sequences.
//!
//! Node ids are 0-based internally. The line-oriented text format
//! ([`DigraphSeq::to_text`]) uses 1-based ids.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("node {node} out of range for a graph on {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("window [{start}, {end}) exceeds sequence length {len}")]
    WindowOutOfRange { start: usize, end: usize, len: usize },
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A directed graph on `n` nodes. An edge `(j, i)` means `j -> i`
/// (agent `i` receives from agent `j`). Self-loops are tracked per node
/// and never stored in the edge set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    loops: Vec<bool>,
}

impl Digraph {
    /// Graph with no edges and no self-loops.
    pub fn empty(n: usize) -> Self {
        Self { n, edges: BTreeSet::new(), loops: vec![false; n] }
    }

    /// Graph with a self-loop at every node and no other edges.
    pub fn with_self_loops(n: usize) -> Self {
        Self { n, edges: BTreeSet::new(), loops: vec![true; n] }
    }

    /// Directed cycle `0 -> 1 -> ... -> n-1 -> 0` with self-loops.
    pub fn cycle(n: usize) -> Self {
        let mut g = Self::with_self_loops(n);
        if n > 1 {
            for i in 0..n {
                g.edges.insert((i, (i + 1) % n));
            }
        }
        g
    }

    /// Bidirectional ring with self-loops.
    pub fn ring(n: usize) -> Self {
        let mut g = Self::cycle(n);
        if n > 1 {
            for i in 0..n {
                g.edges.insert(((i + 1) % n, i));
            }
        }
        g
    }

    /// Complete digraph with self-loops.
    pub fn complete(n: usize) -> Self {
        let mut g = Self::with_self_loops(n);
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    g.edges.insert((j, i));
                }
            }
        }
        g
    }

    /// Builds a graph with self-loops from an explicit edge list (0-based).
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut g = Self::with_self_loops(n);
        for &(j, i) in edges {
            g.add_edge(j, i)?;
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Adds `j -> i`; `j == i` marks a self-loop. Duplicates are ignored.
    pub fn add_edge(&mut self, j: usize, i: usize) -> Result<(), GraphError> {
        for node in [j, i] {
            if node >= self.n {
                return Err(GraphError::NodeOutOfRange { node, n: self.n });
            }
        }
        if j == i {
            self.loops[i] = true;
        } else {
            self.edges.insert((j, i));
        }
        Ok(())
    }

    pub fn set_self_loop(&mut self, i: usize, present: bool) {
        self.loops[i] = present;
    }

    pub fn has_self_loop(&self, i: usize) -> bool {
        self.loops[i]
    }

    pub fn has_all_self_loops(&self) -> bool {
        self.loops.iter().all(|&l| l)
    }

    /// True if `j -> i` is present, counting self-loops.
    pub fn has_edge(&self, j: usize, i: usize) -> bool {
        if j == i {
            j < self.n && self.loops[j]
        } else {
            self.edges.contains(&(j, i))
        }
    }

    /// Non-loop edges `(from, to)` in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect()
    }

    pub fn out_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.range((i, 0)..(i + 1, 0)).map(|e| e.1).collect()
    }

    /// True if every edge has its reverse.
    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|&(j, i)| self.edges.contains(&(i, j)))
    }

    fn out_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(j, i) in &self.edges {
            adj[j].push(i);
        }
        adj
    }

    fn in_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(j, i) in &self.edges {
            adj[i].push(j);
        }
        adj
    }
}

/// BFS hop distances from `source` over `adj`; `usize::MAX` marks unreachable.
fn bfs(adj: &[Vec<usize>], source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// True iff every node reaches every other node along directed edges.
pub fn is_strongly_connected(g: &Digraph) -> bool {
    if g.n <= 1 {
        return true;
    }
    let forward = bfs(&g.out_adjacency(), 0);
    let backward = bfs(&g.in_adjacency(), 0);
    forward.iter().chain(backward.iter()).all(|&d| d != usize::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    /// Longest shortest directed path over ordered pairs of distinct nodes.
    pub diameter: usize,
    /// Largest number of canonical shortest paths routed through one edge.
    pub max_edge_utility: usize,
    pub strongly_connected: bool,
}

/// Diameter and maximal edge-utility of a strongly connected graph.
///
/// Each ordered pair `(s, t)`, `s != t`, is routed along a single canonical
/// shortest path: the lexicographically smallest node sequence among all
/// shortest paths. The utility of an edge is the number of canonical paths
/// that traverse it. Self-loops never lie on a shortest path. A single node
/// has diameter 0 and utility 0.
pub fn graph_stats(g: &Digraph) -> Result<GraphStats, GraphError> {
    let (diameter, load) = canonical_routing(g)?;
    Ok(GraphStats {
        diameter,
        max_edge_utility: load.values().copied().max().unwrap_or(0),
        strongly_connected: true,
    })
}

/// Number of canonical shortest paths through each non-loop edge.
pub fn edge_utilities(g: &Digraph) -> Result<EdgeLoad, GraphError> {
    canonical_routing(g).map(|(_, load)| load)
}

/// Shortest-path load carried by each non-loop edge.
type EdgeLoad = BTreeMap<(usize, usize), usize>;

fn canonical_routing(g: &Digraph) -> Result<(usize, EdgeLoad), GraphError> {
    if !is_strongly_connected(g) {
        return Err(GraphError::NotStronglyConnected);
    }
    let n = g.n;
    let mut out_adj = g.out_adjacency();
    for list in &mut out_adj {
        list.sort_unstable();
    }
    let in_adj = g.in_adjacency();

    let mut diameter = 0;
    let mut load = BTreeMap::new();
    for t in 0..n {
        // distances to t
        let to_t = bfs(&in_adj, t);
        for s in 0..n {
            if s == t {
                continue;
            }
            diameter = diameter.max(to_t[s]);
            let mut u = s;
            while u != t {
                let next = out_adj[u]
                    .iter()
                    .copied()
                    .find(|&v| to_t[v] + 1 == to_t[u])
                    .expect("strongly connected graph has a shortest-path successor");
                *load.entry((u, next)).or_default() += 1;
                u = next;
            }
        }
    }
    Ok((diameter, load))
}

/// How a graph sequence is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    /// The same graph at every step.
    Static { topology: Topology },
    /// A fresh strongly connected graph at every step: a random Hamiltonian
    /// cycle plus each remaining ordered pair with probability `density`.
    PerStepRandom { density: f64 },
    /// A fixed random Hamiltonian cycle whose edges are spread over `period`
    /// slots; step `k` carries the slot `k mod period` edges plus random
    /// extra edges. Any `period` consecutive graphs have a strongly
    /// connected union, while single graphs usually are not.
    Periodic { period: usize, density: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Topology {
    Cycle,
    Ring,
    Complete,
    /// One random strongly connected graph drawn like a per-step graph.
    Random { density: f64 },
    /// Explicit 0-based edge list; self-loops are added at every node.
    Explicit { edges: Vec<(usize, usize)> },
}

impl GeneratorSpec {
    /// True if every single graph is meant to satisfy per-step strong
    /// connectivity.
    pub fn is_per_step_connected(&self) -> bool {
        !matches!(self, GeneratorSpec::Periodic { period, .. } if *period > 1)
    }

    pub fn period(&self) -> usize {
        match self {
            GeneratorSpec::Periodic { period, .. } => *period,
            _ => 1,
        }
    }
}

/// A realized sequence of graphs sharing a node count.
#[derive(Debug, Clone, PartialEq)]
pub struct DigraphSeq {
    pub graphs: Vec<Digraph>,
    pub spec: GeneratorSpec,
    pub seed: u64,
}

impl DigraphSeq {
    pub fn n(&self) -> usize {
        self.graphs.first().map_or(0, Digraph::n)
    }

    pub fn horizon(&self) -> usize {
        self.graphs.len()
    }

    /// Serializes as `n horizon` followed by one `k: j>i ...` line per step
    /// (1-based ids, self-loops written as `i>i`).
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n(), self.horizon());
        for (k, g) in self.graphs.iter().enumerate() {
            let _ = write!(out, "{k}:");
            let mut all: Vec<(usize, usize)> = g.edges().collect();
            all.extend((0..g.n()).filter(|&i| g.has_self_loop(i)).map(|i| (i, i)));
            all.sort_unstable();
            for (j, i) in all {
                let _ = write!(out, " {}>{}", j + 1, i + 1);
            }
            out.push('\n');
        }
        out
    }

    /// Parses the text format. The generator descriptor is not part of the
    /// format, so the result carries an explicit static placeholder spec.
    pub fn from_text(text: &str) -> Result<Self, GraphError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or(GraphError::Parse { line: 1, msg: "missing header".into() })?;
        let mut parts = header.split_whitespace();
        let parse_count = |tok: Option<&str>, what: &str| -> Result<usize, GraphError> {
            tok.and_then(|t| usize::from_str(t).ok())
                .ok_or_else(|| GraphError::Parse { line: 1, msg: format!("bad {what}") })
        };
        let n = parse_count(parts.next(), "node count")?;
        let horizon = parse_count(parts.next(), "horizon")?;
        let mut graphs = Vec::with_capacity(horizon);
        for (idx, line) in lines {
            let lineno = idx + 1;
            let err = |msg: String| GraphError::Parse { line: lineno, msg };
            let (step, rest) = line.split_once(':').ok_or_else(|| err("missing ':'".into()))?;
            let step: usize = step.trim().parse().map_err(|_| err(format!("bad step '{step}'")))?;
            if step != graphs.len() {
                return Err(err(format!("expected step {}, found {step}", graphs.len())));
            }
            let mut g = Digraph::empty(n);
            for tok in rest.split_whitespace() {
                let (j, i) = tok.split_once('>').ok_or_else(|| err(format!("bad edge '{tok}'")))?;
                let j: usize = j.parse().map_err(|_| err(format!("bad edge '{tok}'")))?;
                let i: usize = i.parse().map_err(|_| err(format!("bad edge '{tok}'")))?;
                if j == 0 || i == 0 {
                    return Err(err(format!("ids are 1-based: '{tok}'")));
                }
                g.add_edge(j - 1, i - 1).map_err(|e| err(e.to_string()))?;
            }
            graphs.push(g);
        }
        if graphs.len() != horizon {
            return Err(GraphError::Parse {
                line: 1,
                msg: format!("header declares {horizon} steps, found {}", graphs.len()),
            });
        }
        Ok(Self {
            graphs,
            spec: GeneratorSpec::Static { topology: Topology::Explicit { edges: Vec::new() } },
            seed: 0,
        })
    }
}

fn hamiltonian_cycle<R: Rng>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    (0..n).map(|t| (order[t], order[(t + 1) % n])).collect()
}

fn add_random_edges<R: Rng>(g: &mut Digraph, density: f64, rng: &mut R) {
    let n = g.n();
    for j in 0..n {
        for i in 0..n {
            // one draw per ordered pair keeps the stream layout independent of g
            let hit = rng.random_bool(density);
            if i != j && hit {
                g.edges.insert((j, i));
            }
        }
    }
}

fn random_connected<R: Rng>(n: usize, density: f64, rng: &mut R) -> Digraph {
    let mut g = Digraph::with_self_loops(n);
    for (j, i) in hamiltonian_cycle(n, rng) {
        g.edges.insert((j, i));
    }
    add_random_edges(&mut g, density, rng);
    g
}

fn check_density(density: f64) -> Result<(), GraphError> {
    if (0.0..=1.0).contains(&density) {
        Ok(())
    } else {
        Err(GraphError::InvalidSpec(format!("density {density} not in [0, 1]")))
    }
}

/// Generates `horizon` graphs on `n` nodes; deterministic given `seed`.
pub fn generate_sequence(
    n: usize,
    horizon: usize,
    spec: &GeneratorSpec,
    seed: u64,
) -> Result<DigraphSeq, GraphError> {
    if n == 0 {
        return Err(GraphError::InvalidSpec("node count must be at least 1".into()));
    }
    if horizon == 0 {
        return Err(GraphError::InvalidSpec("horizon must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = match spec {
        GeneratorSpec::Static { topology } => {
            let g = match topology {
                Topology::Cycle => Digraph::cycle(n),
                Topology::Ring => Digraph::ring(n),
                Topology::Complete => Digraph::complete(n),
                Topology::Random { density } => {
                    check_density(*density)?;
                    random_connected(n, *density, &mut rng)
                }
                Topology::Explicit { edges } => {
                    let g = Digraph::from_edges(n, edges)?;
                    if !is_strongly_connected(&g) {
                        return Err(GraphError::InvalidSpec(
                            "explicit edge list is not strongly connected".into(),
                        ));
                    }
                    g
                }
            };
            vec![g; horizon]
        }
        GeneratorSpec::PerStepRandom { density } => {
            check_density(*density)?;
            (0..horizon).map(|_| random_connected(n, *density, &mut rng)).collect()
        }
        GeneratorSpec::Periodic { period, density } => {
            check_density(*density)?;
            if *period == 0 {
                return Err(GraphError::InvalidSpec("period must be at least 1".into()));
            }
            if *period > horizon {
                return Err(GraphError::InvalidSpec(format!(
                    "period {period} exceeds horizon {horizon}"
                )));
            }
            let cycle = hamiltonian_cycle(n, &mut rng);
            let slots: Vec<usize> = cycle.iter().map(|_| rng.random_range(0..*period)).collect();
            (0..horizon)
                .map(|k| {
                    let mut g = Digraph::with_self_loops(n);
                    for (&(j, i), &slot) in cycle.iter().zip(&slots) {
                        if slot == k % period {
                            g.edges.insert((j, i));
                        }
                    }
                    add_random_edges(&mut g, *density, &mut rng);
                    g
                })
                .collect()
        }
    };
    Ok(DigraphSeq { graphs, spec: spec.clone(), seed })
}

/// Union of the edge sets over steps `[start, start + len)`.
pub fn union_graph(seq: &DigraphSeq, start: usize, len: usize) -> Result<Digraph, GraphError> {
    let end = start + len;
    if len == 0 || end > seq.horizon() {
        return Err(GraphError::WindowOutOfRange { start, end, len: seq.horizon() });
    }
    let mut union = seq.graphs[start].clone();
    for g in &seq.graphs[start + 1..end] {
        union.edges.extend(g.edges.iter().copied());
        for (l, &other) in union.loops.iter_mut().zip(&g.loops) {
            *l |= other;
        }
    }
    Ok(union)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bfs_oracle_connected(g: &Digraph) -> bool {
        // independent reachability: Floyd-Warshall style closure
        let n = g.n();
        let mut reach = vec![vec![false; n]; n];
        for (i, row) in reach.iter_mut().enumerate() {
            row[i] = true;
        }
        for (j, i) in g.edges() {
            reach[j][i] = true;
        }
        for m in 0..n {
            for a in 0..n {
                for b in 0..n {
                    if reach[a][m] && reach[m][b] {
                        reach[a][b] = true;
                    }
                }
            }
        }
        reach.iter().all(|r| r.iter().all(|&x| x))
    }

    #[test]
    fn three_cycle_is_strongly_connected() {
        let g = Digraph::cycle(3);
        assert!(is_strongly_connected(&g));
        let seq = generate_sequence(
            3,
            1,
            &GeneratorSpec::Static { topology: Topology::Cycle },
            0,
        )
        .unwrap();
        assert_eq!(seq.horizon(), 1);
        assert!(is_strongly_connected(&seq.graphs[0]));
    }

    #[test]
    fn single_edge_pair_is_not_strongly_connected() {
        let g = Digraph::from_edges(2, &[(0, 1)]).unwrap();
        assert!(!is_strongly_connected(&g));
        assert_eq!(graph_stats(&g), Err(GraphError::NotStronglyConnected));
    }

    #[test]
    fn single_node_sequences_are_self_loops() {
        for spec in [
            GeneratorSpec::Static { topology: Topology::Complete },
            GeneratorSpec::PerStepRandom { density: 0.5 },
            GeneratorSpec::Periodic { period: 2, density: 0.5 },
        ] {
            let seq = generate_sequence(1, 5, &spec, 3).unwrap();
            assert_eq!(seq.horizon(), 5);
            for g in &seq.graphs {
                assert_eq!(g.edge_count(), 0);
                assert!(g.has_all_self_loops());
            }
        }
    }

    #[test]
    fn per_step_graphs_match_reachability_oracle() {
        let seq =
            generate_sequence(10, 100, &GeneratorSpec::PerStepRandom { density: 0.3 }, 7).unwrap();
        for g in &seq.graphs {
            assert!(g.has_all_self_loops());
            assert!(bfs_oracle_connected(g));
            assert!(is_strongly_connected(g));
        }
    }

    #[test]
    fn random_graphs_agree_with_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut g = Digraph::with_self_loops(10);
            add_random_edges(&mut g, 0.15, &mut rng);
            assert_eq!(is_strongly_connected(&g), bfs_oracle_connected(&g));
        }
    }

    #[test]
    fn three_cycle_stats() {
        let stats = graph_stats(&Digraph::cycle(3)).unwrap();
        assert_eq!(stats.diameter, 2);
        // six ordered pairs: three 1-hop and three 2-hop paths, 9 edge uses on 3 edges
        assert_eq!(stats.max_edge_utility, 3);
    }

    #[test]
    fn complete_graph_stats() {
        let stats = graph_stats(&Digraph::complete(4)).unwrap();
        assert_eq!(stats.diameter, 1);
        assert_eq!(stats.max_edge_utility, 1);
    }

    #[test]
    fn canonical_paths_use_lexicographic_tie_break() {
        // 0->1->3 and 0->2->3 are both shortest; canonical picks via 1
        let g = Digraph::from_edges(4, &[(0, 1), (0, 2), (1, 3), (2, 3), (3, 0)]).unwrap();
        let load = edge_utilities(&g).unwrap();
        assert_eq!(load[&(0, 1)], 4);
        assert_eq!(load[&(0, 2)], 3);
        assert_eq!(load[&(1, 3)], 4);
        assert_eq!(load[&(2, 3)], 3);
        assert_eq!(load[&(3, 0)], 7);
        let stats = graph_stats(&g).unwrap();
        assert_eq!(stats.max_edge_utility, 7);
        assert_eq!(stats.diameter, 3);
    }

    #[test]
    fn union_windows() {
        let mut a = Digraph::with_self_loops(2);
        a.add_edge(0, 1).unwrap();
        let mut b = Digraph::with_self_loops(2);
        b.add_edge(1, 0).unwrap();
        let seq = DigraphSeq {
            graphs: vec![a.clone(), b],
            spec: GeneratorSpec::Static { topology: Topology::Cycle },
            seed: 0,
        };
        assert_eq!(union_graph(&seq, 0, 1).unwrap(), a);
        assert!(is_strongly_connected(&union_graph(&seq, 0, 2).unwrap()));
        assert!(matches!(union_graph(&seq, 1, 2), Err(GraphError::WindowOutOfRange { .. })));
    }

    #[test]
    fn periodic_windows_are_connected() {
        let spec = GeneratorSpec::Periodic { period: 3, density: 0.02 };
        let seq = generate_sequence(8, 30, &spec, 5).unwrap();
        let mut single_failures = 0;
        for start in 0..=27 {
            let u = union_graph(&seq, start, 3).unwrap();
            assert!(bfs_oracle_connected(&u));
        }
        for g in &seq.graphs {
            if !is_strongly_connected(g) {
                single_failures += 1;
            }
        }
        assert!(single_failures > 0);
    }

    #[test]
    fn periodic_rejects_period_beyond_horizon() {
        let spec = GeneratorSpec::Periodic { period: 5, density: 0.1 };
        assert!(matches!(generate_sequence(4, 3, &spec, 0), Err(GraphError::InvalidSpec(_))));
    }

    #[test]
    fn text_format_round_trip() {
        let seq =
            generate_sequence(5, 4, &GeneratorSpec::PerStepRandom { density: 0.2 }, 2).unwrap();
        let text = seq.to_text();
        assert!(text.starts_with("5 4\n0:"));
        let back = DigraphSeq::from_text(&text).unwrap();
        assert_eq!(back.graphs, seq.graphs);
    }

    #[test]
    fn text_format_errors_carry_line() {
        let err = DigraphSeq::from_text("2 1\n0: 1>3\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 2, .. }));
    }

    #[test]
    fn seeds_reproduce() {
        let spec = GeneratorSpec::PerStepRandom { density: 0.25 };
        let a = generate_sequence(6, 20, &spec, 99).unwrap();
        let b = generate_sequence(6, 20, &spec, 99).unwrap();
        let c = generate_sequence(6, 20, &spec, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.graphs, c.graphs);
    }

    proptest::proptest! {
        #[test]
        fn diameter_within_bounds(n in 2usize..9, density in 0.0f64..0.6, seed in 0u64..1000) {
            let seq = generate_sequence(n, 3, &GeneratorSpec::PerStepRandom { density }, seed).unwrap();
            for g in &seq.graphs {
                proptest::prop_assert!(g.has_all_self_loops());
                let s = graph_stats(g).unwrap();
                proptest::prop_assert!(s.diameter >= 1 && s.diameter < n);
                proptest::prop_assert!(s.max_edge_utility >= 1);
            }
        }
    }
}
