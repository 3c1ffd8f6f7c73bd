//! Communication graph, hop distances, and the consensus weight matrix.
//!
//! A [`NetworkTopology`] bundles everything the agents need to know about the
//! network: neighbor lists, all-pairs hop distances `b_ij`, the Metropolis
//! mixing matrix `W`, and the contraction factor `rho = ||W - 11^T/n||_2`.
//! It is immutable once built and can be shared across trial workers.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest agent count for which `rho` is computed (dense eigensolve).
pub const MAX_AGENTS: usize = 512;

/// Tolerance used when validating row/column sums and symmetry of `W`.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("graph has no nodes")]
    Empty,
    #[error("graph is disconnected: node {from} cannot reach node {to}")]
    DisconnectedGraph { from: usize, to: usize },
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("{n} agents exceeds the supported maximum of {MAX_AGENTS}")]
    TooLarge { n: usize },
    #[error("consensus matrix is not contractive: rho = {rho}")]
    NotContractive { rho: f64 },
    #[error("weight matrix violates invariant `{invariant}`: {detail}")]
    InvalidWeights {
        invariant: &'static str,
        detail: String,
    },
    #[error("dimension list has {got} entries, expected {expected}")]
    DimsMismatch { expected: usize, got: usize },
    #[error("edge list parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown topology generator `{0}`")]
    UnknownGenerator(String),
    #[error("Erdos-Renyi sampling found no connected graph after {0} attempts")]
    NoConnectedSample(usize),
}

/// Undirected simple graph stored as sorted neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(TopologyError::NodeOutOfRange(a, b, n));
            }
            if a == b {
                continue;
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { neighbors })
    }

    pub fn complete(n: usize) -> Result<Self, TopologyError> {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        Self::from_edges(n, &edges)
    }

    pub fn path(n: usize) -> Result<Self, TopologyError> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn ring(n: usize) -> Result<Self, TopologyError> {
        let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        if n > 2 {
            edges.push((n - 1, 0));
        }
        Self::from_edges(n, &edges)
    }

    /// Star with node 0 as the hub.
    pub fn star(n: usize) -> Result<Self, TopologyError> {
        let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
        Self::from_edges(n, &edges)
    }

    /// G(n, p) rejection-sampled until connected.
    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Self, TopologyError> {
        const ATTEMPTS: usize = 10_000;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for _ in 0..ATTEMPTS {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random::<f64>() < p {
                        edges.push((i, j));
                    }
                }
            }
            let g = Self::from_edges(n, &edges)?;
            if g.is_connected() {
                return Ok(g);
            }
        }
        Err(TopologyError::NoConnectedSample(ATTEMPTS))
    }

    /// Parses the plain-text edge list format: first line `n`, then `i j`
    /// pairs (0-based). Blank lines and `#` comments are ignored.
    pub fn parse_edge_list(text: &str) -> Result<Self, TopologyError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, first) = lines.next().ok_or(TopologyError::Parse {
            line: 1,
            msg: "missing node count".into(),
        })?;
        let n: usize = first.parse().map_err(|_| TopologyError::Parse {
            line,
            msg: format!("expected node count, got `{first}`"),
        })?;
        let mut edges = Vec::new();
        for (line, text) in lines {
            let mut parts = text.split_whitespace().map(str::parse::<usize>);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => edges.push((a, b)),
                _ => {
                    return Err(TopologyError::Parse {
                        line,
                        msg: format!("expected `i j`, got `{text}`"),
                    })
                }
            }
        }
        Self::from_edges(n, &edges)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.len());
        for (i, j) in self.edges() {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn is_connected(&self) -> bool {
        bfs_from(self, 0).iter().all(Option::is_some)
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, TopologyError> {
        let edges: Vec<_> = self.edges().map(|(i, j)| (perm[i], perm[j])).collect();
        Self::from_edges(self.len(), &edges)
    }
}

fn bfs_from(graph: &Graph, source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; graph.len()];
    let mut queue = VecDeque::new();
    dist[source] = Some(0);
    queue.push_back(source);
    while let Some(v) = queue.pop_front() {
        let dv = dist[v].unwrap_or(0);
        for &w in graph.neighbors(v) {
            if dist[w].is_none() {
                dist[w] = Some(dv + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// All-pairs hop distances by one BFS per source.
pub fn shortest_path_distances(graph: &Graph) -> Result<Vec<Vec<usize>>, TopologyError> {
    if graph.is_empty() {
        return Err(TopologyError::Empty);
    }
    (0..graph.len())
        .map(|i| {
            bfs_from(graph, i)
                .into_iter()
                .enumerate()
                .map(|(j, d)| d.ok_or(TopologyError::DisconnectedGraph { from: i, to: j }))
                .collect()
        })
        .collect()
}

/// Metropolis-Hastings weights: `W_ij = 1 / (1 + max(deg_i, deg_j))` on edges,
/// diagonal takes the remainder.
pub fn metropolis_weights(graph: &Graph) -> Result<DMatrix<f64>, TopologyError> {
    if !graph.is_connected() {
        let dist = bfs_from(graph, 0);
        let to = dist.iter().position(Option::is_none).unwrap_or(0);
        return Err(TopologyError::DisconnectedGraph { from: 0, to });
    }
    let n = graph.len();
    let mut w = DMatrix::zeros(n, n);
    for (i, j) in graph.edges() {
        let v = 1.0 / (1.0 + graph.degree(i).max(graph.degree(j)) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = graph.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    Ok(w)
}

/// `||W - 11^T/n||_2` for symmetric `W`, via dense eigendecomposition.
pub fn spectral_gap(weights: &DMatrix<f64>) -> Result<f64, TopologyError> {
    let n = weights.nrows();
    if n == 0 {
        return Err(TopologyError::Empty);
    }
    if n > MAX_AGENTS {
        return Err(TopologyError::TooLarge { n });
    }
    let centered = weights.map(|v| v - 1.0 / n as f64);
    let sym = (&centered + centered.transpose()) * 0.5;
    let rho = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if rho >= 1.0 {
        return Err(TopologyError::NotContractive { rho });
    }
    Ok(rho)
}

/// Returns `(b_bar, b_frak)`: the root-mean-square hop distance and its
/// dimension-weighted counterpart.
pub fn connectivity_metrics(distances: &[Vec<usize>], dims: &[usize]) -> (f64, f64) {
    let n = distances.len();
    assert_eq!(dims.len(), n, "dims must have one entry per agent");
    let d: usize = dims.iter().sum();
    let mut plain = 0.0;
    let mut weighted = 0.0;
    for (i, row) in distances.iter().enumerate() {
        for &b in row {
            let b2 = (b * b) as f64;
            plain += b2;
            weighted += b2 * dims[i] as f64;
        }
    }
    let nf = n as f64;
    let b_bar = (plain / (nf * nf)).sqrt();
    let b_frak = if d == 0 {
        0.0
    } else {
        (weighted / (nf * d as f64)).sqrt()
    };
    (b_bar, b_frak)
}

/// Checks the consensus-matrix invariants against `graph`; the error names
/// the first violated invariant.
pub fn validate_weights(graph: &Graph, w: &DMatrix<f64>) -> Result<(), TopologyError> {
    let n = graph.len();
    let bad = |invariant, detail| Err(TopologyError::InvalidWeights { invariant, detail });
    if w.nrows() != n || w.ncols() != n {
        return bad("shape", format!("{}x{} for {n} agents", w.nrows(), w.ncols()));
    }
    for i in 0..n {
        let row: f64 = w.row(i).iter().sum();
        if (row - 1.0).abs() > WEIGHT_TOLERANCE {
            return bad("row-stochastic", format!("row {i} sums to {row}"));
        }
    }
    for j in 0..n {
        let col: f64 = w.column(j).iter().sum();
        if (col - 1.0).abs() > WEIGHT_TOLERANCE {
            return bad("column-stochastic", format!("column {j} sums to {col}"));
        }
    }
    for i in 0..n {
        if w[(i, i)] <= 0.0 {
            return bad("positive-diagonal", format!("W[{i},{i}] = {}", w[(i, i)]));
        }
        for j in 0..n {
            if (w[(i, j)] - w[(j, i)]).abs() > WEIGHT_TOLERANCE {
                return bad("symmetric", format!("W[{i},{j}] != W[{j},{i}]"));
            }
            if i != j && !graph.has_edge(i, j) && w[(i, j)] != 0.0 {
                return bad("sparsity", format!("W[{i},{j}] = {} off-graph", w[(i, j)]));
            }
        }
    }
    Ok(())
}

/// Immutable network description shared by all agents and trials.
#[derive(Debug, Clone)]
pub struct NetworkTopology {
    graph: Graph,
    distances: Vec<Vec<usize>>,
    weights: DMatrix<f64>,
    rho: f64,
    dims: Vec<usize>,
    b_bar: f64,
    b_frak: f64,
}

impl NetworkTopology {
    /// Builds the topology with Metropolis weights.
    pub fn new(graph: Graph, dims: Vec<usize>) -> Result<Self, TopologyError> {
        let weights = metropolis_weights(&graph)?;
        Self::with_weights(graph, dims, weights)
    }

    pub fn with_weights(
        graph: Graph,
        dims: Vec<usize>,
        weights: DMatrix<f64>,
    ) -> Result<Self, TopologyError> {
        if dims.len() != graph.len() {
            return Err(TopologyError::DimsMismatch {
                expected: graph.len(),
                got: dims.len(),
            });
        }
        let distances = shortest_path_distances(&graph)?;
        validate_weights(&graph, &weights)?;
        let rho = spectral_gap(&weights)?;
        let (b_bar, b_frak) = connectivity_metrics(&distances, &dims);
        Ok(Self {
            graph,
            distances,
            weights,
            rho,
            dims,
            b_bar,
            b_frak,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.len()
    }
    pub fn graph(&self) -> &Graph {
        &self.graph
    }
    pub fn distances(&self) -> &[Vec<usize>] {
        &self.distances
    }
    pub fn distance(&self, i: usize, j: usize) -> usize {
        self.distances[i][j]
    }
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
    pub fn b_bar(&self) -> f64 {
        self.b_bar
    }
    pub fn b_frak(&self) -> f64 {
        self.b_frak
    }
    pub fn diameter(&self) -> usize {
        self.distances
            .iter()
            .flat_map(|r| r.iter().copied())
            .max()
            .unwrap_or(0)
    }
}

/// Named topology source, as accepted on the command line and in run
/// configuration files: `complete`, `ring`, `path`, `star`, `erdos:<p>`, or
/// `file:<path>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TopologySpec {
    Complete,
    Ring,
    Path,
    Star,
    ErdosRenyi { p: f64 },
    File(String),
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec::ErdosRenyi { p: 0.4 }
    }
}

impl TopologySpec {
    /// Realizes the graph. `seed` only matters for random generators.
    pub fn build(&self, n: usize, seed: u64) -> Result<Graph, TopologyError> {
        match self {
            TopologySpec::Complete => Graph::complete(n),
            TopologySpec::Ring => Graph::ring(n),
            TopologySpec::Path => Graph::path(n),
            TopologySpec::Star => Graph::star(n),
            TopologySpec::ErdosRenyi { p } => Graph::erdos_renyi(n, *p, seed),
            TopologySpec::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| TopologyError::Parse {
                    line: 0,
                    msg: format!("{path}: {e}"),
                })?;
                Graph::parse_edge_list(&text)
            }
        }
    }
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologySpec::Complete => write!(f, "complete"),
            TopologySpec::Ring => write!(f, "ring"),
            TopologySpec::Path => write!(f, "path"),
            TopologySpec::Star => write!(f, "star"),
            TopologySpec::ErdosRenyi { p } => write!(f, "erdos:{p}"),
            TopologySpec::File(p) => write!(f, "file:{p}"),
        }
    }
}

impl FromStr for TopologySpec {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "complete" => return Ok(TopologySpec::Complete),
            "ring" => return Ok(TopologySpec::Ring),
            "path" => return Ok(TopologySpec::Path),
            "star" => return Ok(TopologySpec::Star),
            _ => {}
        }
        if let Some(p) = s.strip_prefix("erdos:") {
            let p: f64 = p
                .parse()
                .map_err(|_| TopologyError::UnknownGenerator(s.into()))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(TopologyError::UnknownGenerator(s.into()));
            }
            return Ok(TopologySpec::ErdosRenyi { p });
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(TopologySpec::File(path.into()));
        }
        Err(TopologyError::UnknownGenerator(s.into()))
    }
}

impl TryFrom<String> for TopologySpec {
    type Error = TopologyError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TopologySpec> for String {
    fn from(t: TopologySpec) -> String {
        t.to_string()
    }
}
