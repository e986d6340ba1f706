//! Directed communication graphs and the connectivity predicates the
//! protocol's guarantees depend on.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::num::NonZeroU32;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modreal::{ModScalar, ModValue, ModulusContext};

/// 1-based node identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct NodeId(NonZeroU32);

impl NodeId {
    pub fn new(id: u32) -> Option<Self> {
        NonZeroU32::new(id).map(NodeId)
    }

    /// Node id for a 0-based index.
    pub fn from_index(index: usize) -> Self {
        NodeId(NonZeroU32::new(index as u32 + 1).expect("index + 1 is nonzero"))
    }

    pub fn get(self) -> u32 {
        self.0.get()
    }

    pub fn index(self) -> usize {
        self.0.get() as usize - 1
    }
}

impl TryFrom<u32> for NodeId {
    type Error = String;
    fn try_from(v: u32) -> std::result::Result<Self, String> {
        NodeId::new(v).ok_or_else(|| "node ids start at 1".to_string())
    }
}

impl From<NodeId> for u32 {
    fn from(id: NodeId) -> u32 {
        id.get()
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Immutable directed graph on nodes `1..=m`: no self-loops, no duplicate
/// edges. Edge order is preserved and defines the incidence-matrix columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    node_count: usize,
    edges: Vec<(NodeId, NodeId)>,
    out_adj: Vec<Vec<NodeId>>,
    in_adj: Vec<Vec<NodeId>>,
}

impl DirectedGraph {
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::domain("a graph needs at least one node"));
        }
        if node_count > u32::MAX as usize {
            return Err(Error::domain("too many nodes"));
        }
        let mut g = DirectedGraph {
            node_count,
            edges: Vec::new(),
            out_adj: vec![Vec::new(); node_count],
            in_adj: vec![Vec::new(); node_count],
        };
        let mut seen = BTreeSet::new();
        for (i, j) in edges {
            g.push_edge(i, j, &mut seen)?;
        }
        for list in g.out_adj.iter_mut().chain(g.in_adj.iter_mut()) {
            list.sort_unstable();
        }
        Ok(g)
    }

    fn push_edge(&mut self, i: u32, j: u32, seen: &mut BTreeSet<(u32, u32)>) -> Result<()> {
        let m = self.node_count as u32;
        if i == 0 || j == 0 || i > m || j > m {
            return Err(Error::domain(format!("edge ({i}, {j}) has an endpoint outside 1..={m}")));
        }
        if i == j {
            return Err(Error::domain(format!("self-loop on node {i}")));
        }
        if !seen.insert((i, j)) {
            return Err(Error::domain(format!("duplicate edge ({i}, {j})")));
        }
        let (a, b) = (NodeId::new(i).unwrap(), NodeId::new(j).unwrap());
        self.edges.push((a, b));
        self.out_adj[a.index()].push(b);
        self.in_adj[b.index()].push(a);
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count).map(NodeId::from_index)
    }

    pub fn has_edge(&self, from: NodeId, to: NodeId) -> bool {
        self.out_adj.get(from.index()).is_some_and(|out| out.binary_search(&to).is_ok())
    }

    fn check(&self, i: NodeId) -> Result<usize> {
        if i.index() < self.node_count {
            Ok(i.index())
        } else {
            Err(Error::domain(format!("node {i} outside 1..={}", self.node_count)))
        }
    }

    /// Nodes `j` with an edge `j -> i`, ascending.
    pub fn in_neighbors(&self, i: NodeId) -> Result<&[NodeId]> {
        Ok(&self.in_adj[self.check(i)?])
    }

    /// Nodes `j` with an edge `i -> j`, ascending.
    pub fn out_neighbors(&self, i: NodeId) -> Result<&[NodeId]> {
        Ok(&self.out_adj[self.check(i)?])
    }

    fn bfs(&self, start: usize, adj: &[Vec<NodeId>]) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count];
        dist[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for v in &adj[u] {
                if dist[v.index()].is_none() {
                    dist[v.index()] = Some(du + 1);
                    queue.push_back(v.index());
                }
            }
        }
        dist
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.bfs(0, &self.out_adj).iter().all(Option::is_some) && self.bfs(0, &self.in_adj).iter().all(Option::is_some)
    }

    /// Longest shortest directed path over all ordered node pairs.
    pub fn diameter(&self) -> Result<usize> {
        let mut diameter = 0;
        for s in 0..self.node_count {
            for d in self.bfs(s, &self.out_adj) {
                match d {
                    Some(d) => diameter = diameter.max(d),
                    None => return Err(Error::domain("diameter is undefined: graph is not strongly connected")),
                }
            }
        }
        Ok(diameter)
    }

    /// Adjacency of the undirected graph obtained by adding every reversed edge.
    pub fn symmetrized(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.node_count];
        for &(i, j) in &self.edges {
            adj[i.index()].insert(j.index());
            adj[j.index()].insert(i.index());
        }
        adj.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Vertex connectivity of the symmetrized graph: the fewest nodes whose
    /// removal disconnects it, or `m - 1` when it is complete.
    pub fn weak_vertex_connectivity(&self) -> usize {
        let m = self.node_count;
        if m < 2 {
            return 0;
        }
        let adj = self.symmetrized();
        let mut best = m - 1;
        // Some node among the first best+1 survives any minimum cut, so pairs
        // anchored there are enough.
        let mut i = 0;
        while i < m && i <= best {
            for j in i + 1..m {
                if adj[i].binary_search(&j).is_err() {
                    best = best.min(local_vertex_connectivity(&adj, i, j, best));
                }
            }
            i += 1;
        }
        best
    }

    /// Signed node-by-edge incidence matrix: the receiver of edge `e` gets
    /// `+1`, the sender `-1`.
    pub fn incidence_matrix(&self) -> IncidenceMatrix {
        IncidenceMatrix {
            node_count: self.node_count,
            columns: self.edges.iter().map(|&(i, j)| (i.index(), j.index())).collect(),
        }
    }

    /// Edge-list text: node count on the first line, then one `i j` per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.node_count);
        for (i, j) in &self.edges {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }
}

/// Maximum number of internally vertex-disjoint `s`-`t` paths, stopping early
/// once `limit` is reached. `s` and `t` must be non-adjacent.
fn local_vertex_connectivity(adj: &[Vec<usize>], s: usize, t: usize, limit: usize) -> usize {
    // Split v into v_in = 2v and v_out = 2v + 1 joined by a unit arc.
    let n = adj.len() * 2;
    let mut graph: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut head: Vec<usize> = Vec::new();
    let mut cap: Vec<i32> = Vec::new();
    let mut add = |graph: &mut Vec<Vec<usize>>, u: usize, v: usize| {
        graph[u].push(head.len());
        head.push(v);
        cap.push(1);
        graph[v].push(head.len());
        head.push(u);
        cap.push(0);
    };
    for (v, nbrs) in adj.iter().enumerate() {
        add(&mut graph, 2 * v, 2 * v + 1);
        for &w in nbrs {
            add(&mut graph, 2 * v + 1, 2 * w);
        }
    }
    let (source, sink) = (2 * s + 1, 2 * t);
    let mut flow = 0;
    while flow < limit {
        let mut parent_arc = vec![usize::MAX; n];
        let mut visited = vec![false; n];
        visited[source] = true;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            if u == sink {
                break;
            }
            for &a in &graph[u] {
                let v = head[a];
                if cap[a] > 0 && !visited[v] {
                    visited[v] = true;
                    parent_arc[v] = a;
                    queue.push_back(v);
                }
            }
        }
        if !visited[sink] {
            break;
        }
        let mut v = sink;
        while v != source {
            let a = parent_arc[v];
            cap[a] -= 1;
            cap[a ^ 1] += 1;
            v = head[a ^ 1];
        }
        flow += 1;
    }
    flow
}

/// Node-by-edge matrix with entries in {-1, 0, +1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    node_count: usize,
    /// (sender, receiver) 0-based indices per column.
    columns: Vec<(usize, usize)>,
}

impl IncidenceMatrix {
    pub fn rows(&self) -> usize {
        self.node_count
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, node: usize, edge: usize) -> i8 {
        let (from, to) = self.columns[edge];
        if node == to {
            1
        } else if node == from {
            -1
        } else {
            0
        }
    }

    /// `mod(B r, M)` for one value per edge, in edge order.
    pub fn apply<S: ModScalar>(&self, ctx: &ModulusContext<S>, r: &[S]) -> Result<Vec<ModValue<S>>> {
        if r.len() != self.columns.len() {
            return Err(Error::domain(format!("expected {} edge values, got {}", self.columns.len(), r.len())));
        }
        let mut acc = vec![S::zero(); self.node_count];
        for (&(from, to), &v) in self.columns.iter().zip(r) {
            acc[to] = ctx.add(ctx.reduce(acc[to]), ctx.reduce(v)).value();
            acc[from] = ctx.sub(ctx.reduce(acc[from]), ctx.reduce(v)).value();
        }
        Ok(acc.into_iter().map(|v| ctx.reduce(v)).collect())
    }
}

/// Parses the edge-list format: first line `m`, then `i j` per directed
/// edge, 1-based. Blank lines and `#` comments are ignored.
pub fn parse_graph(text: &str) -> Result<DirectedGraph> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (first, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty graph file".into() })?;
    let m: usize = header
        .parse()
        .map_err(|_| Error::Parse { line: first, message: format!("expected node count, found {header:?}") })?;
    let mut edges = Vec::new();
    for (line, content) in lines {
        let parts: Vec<&str> = content.split_whitespace().collect();
        let parsed: Option<(u32, u32)> = match parts.as_slice() {
            [a, b] => a.parse().ok().zip(b.parse().ok()),
            _ => None,
        };
        let (a, b) =
            parsed.ok_or_else(|| Error::Parse { line, message: format!("expected \"i j\", found {content:?}") })?;
        edges.push((line, a, b));
    }
    // Re-validate edge by edge so errors carry their line number.
    let mut g =
        DirectedGraph::new(m, std::iter::empty()).map_err(|e| Error::Parse { line: first, message: e.to_string() })?;
    let mut seen = BTreeSet::new();
    for (line, a, b) in edges {
        g.push_edge(a, b, &mut seen).map_err(|e| Error::Parse { line, message: e.to_string() })?;
    }
    for list in g.out_adj.iter_mut().chain(g.in_adj.iter_mut()) {
        list.sort_unstable();
    }
    Ok(g)
}

/// Synthetic topologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    /// Directed ring 1 -> 2 -> ... -> m -> 1.
    Ring,
    /// Directed ring plus this many distinct random extra edges.
    RingWithChords(usize),
    /// Every ordered pair of distinct nodes.
    Complete,
    /// Node 1 linked both ways to every other node.
    Star,
}

/// Deterministic under `seed`; only [`GraphKind::RingWithChords`] uses it.
pub fn generate_graph(kind: GraphKind, m: usize, seed: u64) -> Result<DirectedGraph> {
    if m == 0 {
        return Err(Error::domain("a graph needs at least one node"));
    }
    let n = m as u32;
    let ring = move || (1..=n).filter(move |_| n > 1).map(move |i| (i, i % n + 1));
    match kind {
        GraphKind::Ring => DirectedGraph::new(m, ring()),
        GraphKind::Complete => {
            DirectedGraph::new(m, (1..=n).flat_map(|i| (1..=n).filter(move |&j| j != i).map(move |j| (i, j))))
        }
        GraphKind::Star => DirectedGraph::new(m, (2..=n).flat_map(|j| [(1, j), (j, 1)])),
        GraphKind::RingWithChords(count) => {
            let ring_edges: BTreeSet<(u32, u32)> = ring().collect();
            let mut candidates: Vec<(u32, u32)> = (1..=n)
                .flat_map(|i| (1..=n).map(move |j| (i, j)))
                .filter(|&(i, j)| i != j && !ring_edges.contains(&(i, j)))
                .collect();
            if count > candidates.len() {
                return Err(Error::domain(format!(
                    "{count} chords requested but only {} non-ring pairs exist",
                    candidates.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            candidates.shuffle(&mut rng);
            DirectedGraph::new(m, ring().chain(candidates.into_iter().take(count)))
        }
    }
}
