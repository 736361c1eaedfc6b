//! Random regular contact networks and basic graph queries.
//!
//! The generator implements the pairing (configuration) model: a pool of
//! `N*d` stubs is consumed by uniform random draws, rejecting self-loops
//! and duplicate edges, restarting the whole pairing on deadlock, and
//! restarting again if the finished graph is disconnected. Adjacency is
//! stored in CSR form with per-node sorted neighbor slices so that edge
//! queries are binary searches and iteration is cache-friendly.
//!
//! `from_edges` accepts arbitrary (possibly irregular) simple graphs; the
//! regularity invariants are enforced by `generate_rrn`, not by the type.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::Rng;
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("graph generation failed after {restarts} restarts")]
    GenerationFailure { restarts: usize },
    #[error("malformed edge list: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable undirected simple graph. `l_pairs` equals the number of
/// ordered adjacent pairs, i.e. twice the edge count (`N*d` for a
/// d-regular network).
#[derive(Debug, Clone)]
pub struct Network {
    n_nodes: usize,
    offsets: Vec<u32>,
    neighbors: Vec<u32>,
    regular_degree: Option<u32>,
}

impl Network {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Number of ordered adjacent pairs (twice the edge count).
    pub fn l_pairs(&self) -> usize {
        self.neighbors.len()
    }

    /// Common degree, when the graph is degree-regular.
    pub fn regular_degree(&self) -> Option<usize> {
        self.regular_degree.map(|d| d as usize)
    }

    pub fn degree_of(&self, v: usize) -> usize {
        (self.offsets[v + 1] - self.offsets[v]) as usize
    }

    /// Neighbors of `v`, sorted ascending.
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbors[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&(v as u32)).is_ok()
    }

    /// Builds a network from an undirected edge list. Rejects self-loops,
    /// duplicate edges and out-of-range endpoints.
    pub fn from_edges(n_nodes: usize, edges: &[(u32, u32)]) -> Result<Self, GraphError> {
        if n_nodes == 0 {
            return Err(GraphError::InvalidArguments("n_nodes must be positive".into()));
        }
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n_nodes];
        for &(u, v) in edges {
            let (u, v) = (u as usize, v as usize);
            if u >= n_nodes || v >= n_nodes {
                return Err(GraphError::InvalidArguments(format!(
                    "edge ({u}, {v}) out of range for {n_nodes} nodes"
                )));
            }
            if u == v {
                return Err(GraphError::InvalidArguments(format!("self-loop at node {u}")));
            }
            if adj[u].contains(&(v as u32)) {
                return Err(GraphError::InvalidArguments(format!("duplicate edge ({u}, {v})")));
            }
            adj[u].push(v as u32);
            adj[v].push(u as u32);
        }
        Ok(Self::from_adjacency(adj))
    }

    fn from_adjacency(mut adj: Vec<Vec<u32>>) -> Self {
        let n_nodes = adj.len();
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        let mut neighbors = Vec::new();
        offsets.push(0u32);
        for list in &mut adj {
            list.sort_unstable();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len() as u32);
        }
        let first = adj.first().map(|l| l.len()).unwrap_or(0);
        let regular = adj.iter().all(|l| l.len() == first);
        Network {
            n_nodes,
            offsets,
            neighbors,
            regular_degree: if regular { Some(first as u32) } else { None },
        }
    }

    /// Writes `rrn N d seed` followed by one `i j` line (i < j) per edge.
    pub fn write_edge_list<W: Write>(&self, w: &mut W, seed: u64) -> Result<(), GraphError> {
        let d = self.regular_degree.ok_or_else(|| {
            GraphError::InvalidArguments("edge-list dump requires a regular network".into())
        })?;
        writeln!(w, "rrn {} {} {}", self.n_nodes, d, seed)?;
        for u in 0..self.n_nodes {
            for &v in self.neighbors(u) {
                if (v as usize) > u {
                    writeln!(w, "{} {}", u, v)?;
                }
            }
        }
        Ok(())
    }

    /// Reads a dump produced by [`write_edge_list`](Self::write_edge_list)
    /// and revalidates the regular-network invariants.
    pub fn read_edge_list<R: BufRead>(r: &mut R) -> Result<(Self, u64), GraphError> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "rrn" {
            return Err(GraphError::Parse(format!("bad header {header:?}")));
        }
        let n: usize = parts[1].parse().map_err(|_| GraphError::Parse("bad N".into()))?;
        let d: usize = parts[2].parse().map_err(|_| GraphError::Parse("bad d".into()))?;
        let seed: u64 = parts[3].parse().map_err(|_| GraphError::Parse("bad seed".into()))?;
        let mut edges = Vec::with_capacity(n * d / 2);
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let u: u32 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| GraphError::Parse(format!("bad edge line {line:?}")))?;
            let v: u32 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| GraphError::Parse(format!("bad edge line {line:?}")))?;
            edges.push((u, v));
        }
        let net = Self::from_edges(n, &edges)?;
        if net.regular_degree() != Some(d) {
            return Err(GraphError::Parse(format!("graph is not {d}-regular")));
        }
        if !is_connected(&net) {
            return Err(GraphError::Parse("graph is not connected".into()));
        }
        Ok((net, seed))
    }
}

/// True iff every node is reachable from node 0.
pub fn is_connected(net: &Network) -> bool {
    if net.n_nodes == 0 {
        return false;
    }
    let mut seen = vec![false; net.n_nodes];
    let mut queue = VecDeque::new();
    seen[0] = true;
    queue.push_back(0usize);
    let mut count = 1usize;
    while let Some(u) = queue.pop_front() {
        for &v in net.neighbors(u) {
            if !seen[v as usize] {
                seen[v as usize] = true;
                count += 1;
                queue.push_back(v as usize);
            }
        }
    }
    count == net.n_nodes
}

const MAX_RESTARTS: usize = 1000;
/// Consecutive rejected draws before running the exhaustive deadlock scan.
const REJECTION_CAP: usize = 64;

/// Generates a connected random d-regular network by stub pairing.
/// Identical seeds produce identical graphs.
pub fn generate_rrn(n_nodes: usize, degree: usize, seed: u64) -> Result<Network, GraphError> {
    if n_nodes == 0 || degree == 0 {
        return Err(GraphError::InvalidArguments(
            "n_nodes and degree must be positive".into(),
        ));
    }
    if degree >= n_nodes {
        return Err(GraphError::InvalidArguments(format!(
            "degree {degree} must be smaller than n_nodes {n_nodes}"
        )));
    }
    if n_nodes * degree % 2 != 0 {
        return Err(GraphError::InvalidArguments(format!(
            "n_nodes * degree = {} must be even",
            n_nodes * degree
        )));
    }

    let mut rng = rng::stream(rng::derive(seed, 0x7272_6e00, 0));
    for restart in 0..MAX_RESTARTS {
        if let Some(adj) = try_pairing(n_nodes, degree, &mut rng) {
            let net = Network::from_adjacency(adj);
            if is_connected(&net) {
                return Ok(net);
            }
        }
        let _ = restart;
    }
    Err(GraphError::GenerationFailure { restarts: MAX_RESTARTS })
}

/// One pairing attempt; `None` on deadlock (no legal draw remains).
fn try_pairing<R: Rng>(n_nodes: usize, degree: usize, rng: &mut R) -> Option<Vec<Vec<u32>>> {
    let mut adj: Vec<Vec<u32>> = vec![Vec::with_capacity(degree); n_nodes];
    let mut pool: Vec<u32> = Vec::with_capacity(n_nodes * degree);
    for v in 0..n_nodes as u32 {
        for _ in 0..degree {
            pool.push(v);
        }
    }

    while !pool.is_empty() {
        let mut rejected = 0usize;
        let (u, v) = loop {
            let a = rng.gen_range(0..pool.len());
            let mut b = rng.gen_range(0..pool.len() - 1);
            if b >= a {
                b += 1;
            }
            let (u, v) = (pool[a], pool[b]);
            if u != v && !adj[u as usize].contains(&v) {
                // Remove the higher index first so the lower stays valid.
                let (hi, lo) = if a > b { (a, b) } else { (b, a) };
                pool.swap_remove(hi);
                pool.swap_remove(lo);
                break (u, v);
            }
            rejected += 1;
            if rejected > REJECTION_CAP {
                match random_legal_pair(&pool, &adj, rng) {
                    Some((i, j)) => {
                        let (u, v) = (pool[i], pool[j]);
                        let (hi, lo) = if i > j { (i, j) } else { (j, i) };
                        pool.swap_remove(hi);
                        pool.swap_remove(lo);
                        break (u, v);
                    }
                    None => return None, // deadlock
                }
            }
        };
        adj[u as usize].push(v);
        adj[v as usize].push(u);
    }
    Some(adj)
}

/// Uniform draw over all legal index pairs of the residual pool, or `None`
/// if no legal pair exists (the deadlock test).
fn random_legal_pair<R: Rng>(
    pool: &[u32],
    adj: &[Vec<u32>],
    rng: &mut R,
) -> Option<(usize, usize)> {
    let mut legal = Vec::new();
    for i in 0..pool.len() {
        for j in (i + 1)..pool.len() {
            let (u, v) = (pool[i], pool[j]);
            if u != v && !adj[u as usize].contains(&v) {
                legal.push((i, j));
            }
        }
    }
    if legal.is_empty() {
        None
    } else {
        Some(legal[rng.gen_range(0..legal.len())])
    }
}
