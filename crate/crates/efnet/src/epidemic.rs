//! Synchronous discrete-time probabilistic SIRS dynamics on a contact
//! network.
//!
//! Per day, computed from the time-t snapshot into a fresh state array:
//!
//! * a susceptible undergoes one independent transmission trial per
//!   infected neighbor, each succeeding with probability `p_si` (so with
//!   k infected neighbors the effective infection probability is
//!   `1 - (1 - p_si)^k`; the per-link reading of the contact rule),
//! * an infected recovers with probability `1 - exp(-c1 * f^-c2)` where
//!   `f` is its infected-neighbor ratio, with the continuous limit
//!   `p = 1` at `f = 0`,
//! * a recovered loses immunity with probability `p_rs`.
//!
//! Randomness is drawn from per-node streams seeded off a per-step nonce,
//! so the outcome of a step is independent of node visit order and the
//! whole trajectory is reproducible from a single seed.

use rand::rngs::SmallRng;
use rand::{Rng, RngCore, SeedableRng};
use thiserror::Error;

use crate::graph::Network;
use crate::rng;

#[derive(Debug, Error)]
pub enum EpidemicError {
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
}

/// Per-node health state, coded 1/2/3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum HealthState {
    Susceptible = 1,
    Infected = 2,
    Recovered = 3,
}

impl HealthState {
    pub const ALL: [HealthState; 3] =
        [HealthState::Susceptible, HealthState::Infected, HealthState::Recovered];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(HealthState::Susceptible),
            2 => Some(HealthState::Infected),
            3 => Some(HealthState::Recovered),
            _ => None,
        }
    }

    /// Dense index 0/1/2 for moment bookkeeping.
    #[inline]
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn label(self) -> char {
        match self {
            HealthState::Susceptible => 'S',
            HealthState::Infected => 'I',
            HealthState::Recovered => 'R',
        }
    }
}

/// The microscopic state: one health state per node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    states: Vec<HealthState>,
}

impl Configuration {
    pub fn new(states: Vec<HealthState>) -> Self {
        Configuration { states }
    }

    pub fn uniform(n: usize, state: HealthState) -> Self {
        Configuration { states: vec![state; n] }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    #[inline]
    pub fn state(&self, node: usize) -> HealthState {
        self.states[node]
    }

    pub fn states(&self) -> &[HealthState] {
        &self.states
    }

    pub(crate) fn states_mut(&mut self) -> &mut [HealthState] {
        &mut self.states
    }

    /// Counts of (susceptible, infected, recovered) nodes.
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = [0usize; 3];
        for s in &self.states {
            c[s.index()] += 1;
        }
        (c[0], c[1], c[2])
    }
}

/// Transition-rule parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpidemicParams {
    /// Transmission probability per infected-susceptible link per step.
    pub p_si: f64,
    /// Recovery-law scale.
    pub c1: f64,
    /// Recovery-law exponent.
    pub c2: f64,
    /// Immunity-loss probability per step.
    pub p_rs: f64,
}

impl EpidemicParams {
    pub fn new(p_si: f64, c1: f64, c2: f64, p_rs: f64) -> Result<Self, EpidemicError> {
        let p = EpidemicParams { p_si, c1, c2, p_rs };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), EpidemicError> {
        if !(0.0..=1.0).contains(&self.p_si) || !(0.0..=1.0).contains(&self.p_rs) {
            return Err(EpidemicError::InvalidArguments(format!(
                "probabilities must lie in [0,1]: p_si={}, p_rs={}",
                self.p_si, self.p_rs
            )));
        }
        if !(self.c1 > 0.0) || !(self.c2 > 0.0) {
            return Err(EpidemicError::InvalidArguments(format!(
                "c1 and c2 must be positive: c1={}, c2={}",
                self.c1, self.c2
            )));
        }
        Ok(())
    }
}

/// Recovery probability `1 - exp(-c1 * f^-c2)`, with the limit value 1 at
/// `f = 0`. Strictly decreasing in `f` on (0, 1].
pub fn recovery_probability(f: f64, c1: f64, c2: f64) -> Result<f64, EpidemicError> {
    if !(0.0..=1.0).contains(&f) {
        return Err(EpidemicError::InvalidArguments(format!("f={f} outside [0,1]")));
    }
    if !(c1 > 0.0) || !(c2 > 0.0) {
        return Err(EpidemicError::InvalidArguments(format!(
            "c1 and c2 must be positive: c1={c1}, c2={c2}"
        )));
    }
    Ok(recovery_probability_unchecked(f, c1, c2))
}

#[inline]
fn recovery_probability_unchecked(f: f64, c1: f64, c2: f64) -> f64 {
    if f == 0.0 {
        1.0
    } else {
        1.0 - (-c1 * f.powf(-c2)).exp()
    }
}

/// Fraction of `node`'s neighbors that are infected.
pub fn infected_link_ratio(net: &Network, cfg: &Configuration, node: usize) -> f64 {
    let nbrs = net.neighbors(node);
    if nbrs.is_empty() {
        return 0.0;
    }
    let infected = nbrs
        .iter()
        .filter(|&&v| cfg.state(v as usize) == HealthState::Infected)
        .count();
    infected as f64 / nbrs.len() as f64
}

#[inline]
fn node_stream(step_nonce: u64, node: usize) -> SmallRng {
    SmallRng::seed_from_u64(rng::derive(step_nonce, node as u64, 0x51e9))
}

#[inline]
fn transition(
    net: &Network,
    cfg: &Configuration,
    params: &EpidemicParams,
    recovery_table: Option<&[f64]>,
    node: usize,
    draw: &mut SmallRng,
) -> HealthState {
    let current = cfg.state(node);
    match current {
        HealthState::Susceptible => {
            // One Bernoulli trial per infected neighbor, neighbor order
            // ascending; stop at the first success.
            for &v in net.neighbors(node) {
                if cfg.state(v as usize) == HealthState::Infected
                    && draw.gen::<f64>() < params.p_si
                {
                    return HealthState::Infected;
                }
            }
            HealthState::Susceptible
        }
        HealthState::Infected => {
            let nbrs = net.neighbors(node);
            let k = nbrs
                .iter()
                .filter(|&&v| cfg.state(v as usize) == HealthState::Infected)
                .count();
            let p = match recovery_table {
                Some(table) if nbrs.len() + 1 == table.len() => table[k],
                _ => {
                    let f = if nbrs.is_empty() { 0.0 } else { k as f64 / nbrs.len() as f64 };
                    recovery_probability_unchecked(f, params.c1, params.c2)
                }
            };
            if draw.gen::<f64>() < p {
                HealthState::Recovered
            } else {
                HealthState::Infected
            }
        }
        HealthState::Recovered => {
            if draw.gen::<f64>() < params.p_rs {
                HealthState::Susceptible
            } else {
                HealthState::Recovered
            }
        }
    }
}

fn step_with_nonce(
    net: &Network,
    cfg: &Configuration,
    params: &EpidemicParams,
    step_nonce: u64,
) -> Configuration {
    debug_assert_eq!(cfg.len(), net.n_nodes());
    let table: Option<Vec<f64>> = net.regular_degree().map(|d| {
        (0..=d)
            .map(|k| recovery_probability_unchecked(k as f64 / d as f64, params.c1, params.c2))
            .collect()
    });
    let mut next = Vec::with_capacity(cfg.len());
    for node in 0..cfg.len() {
        let mut draw = node_stream(step_nonce, node);
        next.push(transition(net, cfg, params, table.as_deref(), node, &mut draw));
    }
    Configuration::new(next)
}

/// Advances the configuration by one synchronous day.
pub fn step<R: RngCore>(
    net: &Network,
    cfg: &Configuration,
    params: &EpidemicParams,
    rng: &mut R,
) -> Configuration {
    step_with_nonce(net, cfg, params, rng.next_u64())
}

/// Applies [`step`] `n_steps` times; `n_steps = 0` returns the input
/// unchanged.
pub fn evolve<R: RngCore>(
    net: &Network,
    cfg: &Configuration,
    params: &EpidemicParams,
    n_steps: usize,
    rng: &mut R,
) -> Configuration {
    let mut current = cfg.clone();
    for _ in 0..n_steps {
        current = step(net, &current, params, rng);
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_rrn;

    fn params() -> EpidemicParams {
        EpidemicParams::new(0.17, 0.1, 0.5, 0.2).unwrap()
    }

    #[test]
    fn recovery_law_values() {
        // f = 0 forces the limit value exactly.
        assert_eq!(recovery_probability(0.0, 0.1, 0.5).unwrap(), 1.0);
        let p1 = recovery_probability(1.0, 0.1, 0.5).unwrap();
        assert!((p1 - (1.0 - (-0.1f64).exp())).abs() < 1e-15);
        // 0.25^-0.5 = 2.
        let p025 = recovery_probability(0.25, 0.1, 0.5).unwrap();
        assert!((p025 - (1.0 - (-0.2f64).exp())).abs() < 1e-15);
        assert!((p025 - 0.181_269_246_922_018_18).abs() < 1e-12);
    }

    #[test]
    fn recovery_law_is_strictly_decreasing() {
        let grid = [0.05, 0.1, 0.25, 0.5, 0.75, 1.0];
        for w in grid.windows(2) {
            let a = recovery_probability(w[0], 0.1, 0.5).unwrap();
            let b = recovery_probability(w[1], 0.1, 0.5).unwrap();
            assert!(a > b, "not decreasing between f={} and f={}", w[0], w[1]);
        }
    }

    #[test]
    fn recovery_law_rejects_bad_arguments() {
        assert!(recovery_probability(-0.1, 0.1, 0.5).is_err());
        assert!(recovery_probability(1.1, 0.1, 0.5).is_err());
        assert!(recovery_probability(0.5, 0.0, 0.5).is_err());
        assert!(recovery_probability(0.5, 0.1, -1.0).is_err());
    }

    #[test]
    fn infected_link_ratio_counts_neighbors() {
        let net = generate_rrn(10, 4, 3).unwrap();
        let mut states = vec![HealthState::Susceptible; 10];
        for &v in net.neighbors(0) {
            states[v as usize] = HealthState::Infected;
        }
        let cfg = Configuration::new(states);
        assert_eq!(infected_link_ratio(&net, &cfg, 0), 1.0);

        let mut states = vec![HealthState::Susceptible; 10];
        states[net.neighbors(0)[0] as usize] = HealthState::Infected;
        let cfg = Configuration::new(states);
        assert_eq!(infected_link_ratio(&net, &cfg, 0), 0.25);

        let cfg = Configuration::uniform(10, HealthState::Susceptible);
        assert_eq!(infected_link_ratio(&net, &cfg, 0), 0.0);
    }

    #[test]
    fn all_susceptible_is_absorbing() {
        let net = generate_rrn(50, 4, 1).unwrap();
        let cfg = Configuration::uniform(50, HealthState::Susceptible);
        let mut rng = crate::rng::stream(5);
        let next = step(&net, &cfg, &params(), &mut rng);
        assert_eq!(next, cfg);
    }

    #[test]
    fn certain_infection_and_isolated_recovery() {
        // Star: center 0 infected, 4 susceptible leaves, p_si = 1.
        let net = crate::graph::Network::from_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let mut states = vec![HealthState::Susceptible; 5];
        states[0] = HealthState::Infected;
        let cfg = Configuration::new(states);
        let p = EpidemicParams::new(1.0, 0.1, 0.5, 0.2).unwrap();
        let mut rng = crate::rng::stream(9);
        let next = step(&net, &cfg, &p, &mut rng);
        // f = 0 for the center, so it recovers with probability 1.
        assert_eq!(next.state(0), HealthState::Recovered);
        for leaf in 1..5 {
            assert_eq!(next.state(leaf), HealthState::Infected);
        }
    }

    #[test]
    fn certain_immunity_loss() {
        let net = generate_rrn(20, 4, 2).unwrap();
        let cfg = Configuration::uniform(20, HealthState::Recovered);
        let p = EpidemicParams::new(0.17, 0.1, 0.5, 1.0).unwrap();
        let mut rng = crate::rng::stream(4);
        let next = evolve(&net, &cfg, &p, 1, &mut rng);
        assert_eq!(next, Configuration::uniform(20, HealthState::Susceptible));
    }

    #[test]
    fn evolve_zero_steps_is_identity() {
        let net = generate_rrn(20, 4, 2).unwrap();
        let cfg = Configuration::uniform(20, HealthState::Infected);
        let mut rng = crate::rng::stream(4);
        assert_eq!(evolve(&net, &cfg, &params(), 0, &mut rng), cfg);
    }

    #[test]
    fn no_infection_without_infected() {
        let net = generate_rrn(100, 4, 6).unwrap();
        let mut states = vec![HealthState::Susceptible; 100];
        for v in 0..50 {
            states[v] = HealthState::Recovered;
        }
        let cfg = Configuration::new(states);
        let mut rng = crate::rng::stream(12);
        let mut current = cfg;
        for _ in 0..10 {
            current = step(&net, &current, &params(), &mut rng);
            let (_, i, _) = current.counts();
            assert_eq!(i, 0);
        }
    }

    #[test]
    fn trajectories_are_seed_deterministic() {
        let net = generate_rrn(150, 4, 3).unwrap();
        let mut states = vec![HealthState::Susceptible; 150];
        for v in 0..75 {
            states[v] = HealthState::Infected;
        }
        let cfg = Configuration::new(states);
        let mut r1 = crate::rng::stream(31);
        let mut r2 = crate::rng::stream(31);
        let a = evolve(&net, &cfg, &params(), 25, &mut r1);
        let b = evolve(&net, &cfg, &params(), 25, &mut r2);
        assert_eq!(a, b);
        let mut r3 = crate::rng::stream(32);
        let c = evolve(&net, &cfg, &params(), 25, &mut r3);
        assert_ne!(a, c);
    }

    #[test]
    fn step_outcome_is_visit_order_invariant() {
        let net = generate_rrn(80, 4, 5).unwrap();
        let mut states = vec![HealthState::Susceptible; 80];
        for v in 0..30 {
            states[v] = HealthState::Infected;
        }
        for v in 30..45 {
            states[v] = HealthState::Recovered;
        }
        let cfg = Configuration::new(states);
        let p = params();
        let nonce = 0xfeed_beef;
        let ascending = step_with_nonce(&net, &cfg, &p, nonce);
        // Same per-node draw schedule, reverse visit order.
        let mut reversed = vec![HealthState::Susceptible; 80];
        for node in (0..80).rev() {
            let mut draw = node_stream(nonce, node);
            reversed[node] = transition(&net, &cfg, &p, None, node, &mut draw);
        }
        assert_eq!(ascending.states(), reversed.as_slice());
    }

    #[test]
    fn population_is_conserved() {
        let net = generate_rrn(200, 4, 8).unwrap();
        let mut states = vec![HealthState::Susceptible; 200];
        for v in 0..100 {
            states[v] = HealthState::Infected;
        }
        let mut current = Configuration::new(states);
        let mut rng = crate::rng::stream(77);
        for _ in 0..50 {
            current = step(&net, &current, &params(), &mut rng);
            let (s, i, r) = current.counts();
            assert_eq!(s + i + r, 200);
        }
    }

    #[test]
    fn state_codes_match_convention() {
        assert_eq!(HealthState::Susceptible.code(), 1);
        assert_eq!(HealthState::Infected.code(), 2);
        assert_eq!(HealthState::Recovered.code(), 3);
        for s in HealthState::ALL {
            assert_eq!(HealthState::from_code(s.code()), Some(s));
        }
        assert_eq!(HealthState::from_code(0), None);
    }
}
