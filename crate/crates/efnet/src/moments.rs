//! Restriction operators: first, second and third spatial moments of a
//! configuration over the network.
//!
//! Counting conventions. Pair densities are over *ordered* adjacent node
//! pairs, normalized by `l_pairs = N*d`; a mixed label such as `[SI]`
//! aggregates both orders, so `[AA] = 2*(#AA edges)/l_pairs` and
//! `[AB] = 2*(#AB edges)/l_pairs`. Under this convention the six
//! densities sum to exactly 1 and every raw count is even. Triples are
//! ordered paths `i-j-k` through a center `j`; a triple is *chain-like*
//! when the endpoints are non-adjacent and *loop-like* when they close a
//! triangle — the two classes are exclusive.
//!
//! All counting is exact integer arithmetic; densities are produced as
//! floating ratios only at the boundary.

use crate::epidemic::{Configuration, HealthState};
use crate::graph::Network;

/// The slow variables: susceptible and infected fractions. `[R]` is
/// implied as the complement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseState {
    pub s: f64,
    pub i: f64,
}

impl CoarseState {
    pub fn new(s: f64, i: f64) -> Self {
        CoarseState { s, i }
    }

    /// Recovered fraction implied by the simplex constraint.
    pub fn r(&self) -> f64 {
        1.0 - self.s - self.i
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.s, self.i]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        CoarseState { s: a[0], i: a[1] }
    }

    pub fn in_simplex(&self) -> bool {
        self.s >= 0.0 && self.i >= 0.0 && self.s + self.i <= 1.0
    }

    /// Euclidean distance in the (s, i) plane.
    pub fn distance(&self, other: &CoarseState) -> f64 {
        ((self.s - other.s).powi(2) + (self.i - other.i).powi(2)).sqrt()
    }
}

/// The six pair densities over ordered adjacent pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairDensities {
    pub ss: f64,
    pub si: f64,
    pub sr: f64,
    pub ii: f64,
    pub ir: f64,
    pub rr: f64,
}

impl PairDensities {
    pub fn as_array(&self) -> [f64; 6] {
        [self.ss, self.si, self.sr, self.ii, self.ir, self.rr]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        PairDensities { ss: a[0], si: a[1], sr: a[2], ii: a[3], ir: a[4], rr: a[5] }
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().sum()
    }

    /// Euclidean norm of the componentwise difference.
    pub fn distance(&self, other: &PairDensities) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Raw ordered pair counts indexed by `HealthState::index()`.
pub type OrderedPairCounts = [[u64; 3]; 3];

/// Counts ordered adjacent pairs by state; the building block behind
/// [`pair_densities`], exposed for exact-arithmetic tests and for the
/// incremental bookkeeping in the annealer.
pub fn ordered_pair_counts(net: &Network, cfg: &Configuration) -> OrderedPairCounts {
    debug_assert_eq!(cfg.len(), net.n_nodes());
    let mut counts = [[0u64; 3]; 3];
    for u in 0..net.n_nodes() {
        let su = cfg.state(u).index();
        for &v in net.neighbors(u) {
            counts[su][cfg.state(v as usize).index()] += 1;
        }
    }
    counts
}

pub(crate) fn densities_from_counts(counts: &OrderedPairCounts, l_pairs: usize) -> PairDensities {
    let l = l_pairs as f64;
    PairDensities {
        ss: counts[0][0] as f64 / l,
        si: (counts[0][1] + counts[1][0]) as f64 / l,
        sr: (counts[0][2] + counts[2][0]) as f64 / l,
        ii: counts[1][1] as f64 / l,
        ir: (counts[1][2] + counts[2][1]) as f64 / l,
        rr: counts[2][2] as f64 / l,
    }
}

/// First moments: exact state fractions.
pub fn mean_densities(cfg: &Configuration) -> CoarseState {
    let (s, i, _) = cfg.counts();
    let n = cfg.len() as f64;
    CoarseState { s: s as f64 / n, i: i as f64 / n }
}

/// Second moments: the six pair densities.
pub fn pair_densities(net: &Network, cfg: &Configuration) -> PairDensities {
    densities_from_counts(&ordered_pair_counts(net, cfg), net.l_pairs())
}

/// Ordered state-triple counts, split into open paths (`chain`) and
/// triangle triples (`loops`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleCounts {
    chain: [u64; 27],
    loops: [u64; 27],
}

#[inline]
fn triple_index(a: HealthState, b: HealthState, c: HealthState) -> usize {
    a.index() * 9 + b.index() * 3 + c.index()
}

impl TripleCounts {
    pub fn chain(&self, a: HealthState, b: HealthState, c: HealthState) -> u64 {
        self.chain[triple_index(a, b, c)]
    }

    pub fn loop_(&self, a: HealthState, b: HealthState, c: HealthState) -> u64 {
        self.loops[triple_index(a, b, c)]
    }

    pub fn chain_total(&self) -> u64 {
        self.chain.iter().sum()
    }

    pub fn loop_total(&self) -> u64 {
        self.loops.iter().sum()
    }
}

/// Third moments: enumerates every ordered path `(i, j, k)` with
/// `i != k` adjacent to a common center `j`, classifying by whether the
/// endpoints are themselves adjacent.
pub fn triple_counts(net: &Network, cfg: &Configuration) -> TripleCounts {
    debug_assert_eq!(cfg.len(), net.n_nodes());
    let mut chain = [0u64; 27];
    let mut loops = [0u64; 27];
    for center in 0..net.n_nodes() {
        let sb = cfg.state(center);
        let nbrs = net.neighbors(center);
        for (pos_a, &a) in nbrs.iter().enumerate() {
            let sa = cfg.state(a as usize);
            for (pos_c, &c) in nbrs.iter().enumerate() {
                if pos_a == pos_c {
                    continue;
                }
                let sc = cfg.state(c as usize);
                let idx = triple_index(sa, sb, sc);
                if net.has_edge(a as usize, c as usize) {
                    loops[idx] += 1;
                } else {
                    chain[idx] += 1;
                }
            }
        }
    }
    TripleCounts { chain, loops }
}
