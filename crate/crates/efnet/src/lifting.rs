//! Lifting operators: constructing microscopic configurations consistent
//! with prescribed coarse variables.
//!
//! `random_lift` realizes exact rounded state counts at uniformly random
//! positions. `sa_lift` anneals such a configuration toward a target
//! pair-density vector with state-swap moves and the Metropolis
//! criterion; swaps exchange the states of two nodes, so the first
//! moment is pinned exactly throughout. `heal` alternates short bursts
//! of the microscopic dynamics with re-lifting to the prescribed coarse
//! state while carrying over the evolved pair densities, until the pair
//! densities stop moving — landing the initial condition on the slow
//! manifold.
//!
//! Uphill moves are accepted with probability `exp(-(O' - O)/Temp)`, the
//! standard Metropolis form, and the temperature cools geometrically
//! once per sweep.

use rand::Rng;
use thiserror::Error;

use crate::epidemic::{evolve, Configuration, EpidemicParams, HealthState};
use crate::graph::Network;
use crate::moments::{
    densities_from_counts, ordered_pair_counts, pair_densities, CoarseState, OrderedPairCounts,
    PairDensities,
};

#[derive(Debug, Error)]
pub enum LiftError {
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
}

/// Annealing schedule and convergence knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SAParams {
    pub temp_init: f64,
    /// Geometric temperature multiplier applied once per sweep.
    pub cooling: f64,
    pub sweeps_max: usize,
    /// Proposed swaps per sweep; 0 means "one per node".
    pub moves_per_sweep: usize,
    /// Objective threshold treated as converged.
    pub tol: f64,
    /// Stop after this many consecutive sweeps without relative progress
    /// on the best objective; 0 disables the stagnation exit. Infeasible
    /// targets settle on a best-effort floor above `tol`, and this is
    /// what keeps them from burning the whole sweep budget there.
    pub stall_sweeps: usize,
}

impl Default for SAParams {
    fn default() -> Self {
        SAParams {
            temp_init: 0.1,
            cooling: 0.95,
            sweeps_max: 200,
            moves_per_sweep: 0,
            tol: 1e-4,
            stall_sweeps: 10,
        }
    }
}

impl SAParams {
    pub fn validate(&self) -> Result<(), LiftError> {
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return Err(LiftError::InvalidArguments(format!(
                "cooling must lie in (0,1): {}",
                self.cooling
            )));
        }
        if !(self.temp_init > 0.0) || !(self.tol > 0.0) || self.sweeps_max == 0 {
            return Err(LiftError::InvalidArguments(
                "temp_init, tol must be positive and sweeps_max nonzero".into(),
            ));
        }
        Ok(())
    }

    fn moves(&self, n_nodes: usize) -> usize {
        if self.moves_per_sweep == 0 {
            n_nodes
        } else {
            self.moves_per_sweep
        }
    }
}

/// Constrained-runs (healing) loop knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HealParams {
    /// Microscopic steps per healing burst (the short time dT).
    pub dt: usize,
    pub max_rounds: usize,
    /// Convergence threshold on successive pair-density vectors.
    pub moment_tol: f64,
}

impl Default for HealParams {
    fn default() -> Self {
        HealParams { dt: 1, max_rounds: 10, moment_tol: 5e-4 }
    }
}

/// Rounded per-state node counts for a coarse state on `n` nodes.
fn lift_counts(n: usize, x: &CoarseState) -> Result<(usize, usize, usize), LiftError> {
    let n_s = (n as f64 * x.s).round() as i64;
    let n_i = (n as f64 * x.i).round() as i64;
    let n_r = n as i64 - n_s - n_i;
    if n_s < 0 || n_i < 0 || n_r < 0 {
        return Err(LiftError::InvalidArguments(format!(
            "coarse state ({}, {}) rounds to negative counts ({n_s}, {n_i}, {n_r})",
            x.s, x.i
        )));
    }
    Ok((n_s as usize, n_i as usize, n_r as usize))
}

/// Uniformly random configuration with exactly `round(N*s)` susceptible
/// and `round(N*i)` infected nodes.
pub fn random_lift<R: Rng>(
    net: &Network,
    x: &CoarseState,
    rng: &mut R,
) -> Result<Configuration, LiftError> {
    let (n_s, n_i, _) = lift_counts(net.n_nodes(), x)?;
    let mut states = vec![HealthState::Recovered; net.n_nodes()];
    states[..n_s].fill(HealthState::Susceptible);
    states[n_s..n_s + n_i].fill(HealthState::Infected);
    // Fisher-Yates shuffle.
    for k in (1..states.len()).rev() {
        states.swap(k, rng.gen_range(0..=k));
    }
    Ok(Configuration::new(states))
}

/// Exchanges the states of nodes `i` and `j`; mean densities are
/// untouched by construction.
pub fn swap_states(cfg: &Configuration, i: usize, j: usize) -> Result<Configuration, LiftError> {
    if i == j {
        return Err(LiftError::InvalidArguments(format!("swap of node {i} with itself")));
    }
    if i >= cfg.len() || j >= cfg.len() {
        return Err(LiftError::InvalidArguments(format!(
            "swap ({i}, {j}) out of range for {} nodes",
            cfg.len()
        )));
    }
    let mut out = cfg.clone();
    out.states_mut().swap(i, j);
    Ok(out)
}

/// Euclidean objective between the current pair densities and the target.
fn objective(counts: &OrderedPairCounts, l_pairs: usize, target: &PairDensities) -> f64 {
    densities_from_counts(counts, l_pairs).distance(target)
}

/// Updates the ordered pair counts for `node` changing state to
/// `new_state`, then writes the new state into `cfg`.
fn apply_state_change(
    counts: &mut OrderedPairCounts,
    net: &Network,
    cfg: &mut Configuration,
    node: usize,
    new_state: HealthState,
) {
    let old = cfg.state(node).index();
    let new = new_state.index();
    for &v in net.neighbors(node) {
        let sv = cfg.state(v as usize).index();
        counts[old][sv] -= 1;
        counts[sv][old] -= 1;
        counts[new][sv] += 1;
        counts[sv][new] += 1;
    }
    cfg.states_mut()[node] = new_state;
}

/// Per-class node registry allowing O(1) uniform sampling of a pair of
/// nodes with differing states.
struct ClassIndex {
    members: [Vec<u32>; 3],
    /// Position of each node inside its class list.
    position: Vec<u32>,
}

impl ClassIndex {
    fn new(cfg: &Configuration) -> Self {
        let mut members: [Vec<u32>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        let mut position = vec![0u32; cfg.len()];
        for (node, s) in cfg.states().iter().enumerate() {
            position[node] = members[s.index()].len() as u32;
            members[s.index()].push(node as u32);
        }
        ClassIndex { members, position }
    }

    /// Uniform draw over unordered pairs of nodes with differing states.
    /// `None` when fewer than two classes are populated.
    fn sample_pair<R: Rng>(&self, rng: &mut R) -> Option<(usize, usize)> {
        let n = [
            self.members[0].len() as u64,
            self.members[1].len() as u64,
            self.members[2].len() as u64,
        ];
        let w = [n[0] * n[1], n[0] * n[2], n[1] * n[2]];
        let total: u64 = w.iter().sum();
        if total == 0 {
            return None;
        }
        let pick = rng.gen_range(0..total);
        let (a, b) = if pick < w[0] {
            (0, 1)
        } else if pick < w[0] + w[1] {
            (0, 2)
        } else {
            (1, 2)
        };
        let u = self.members[a][rng.gen_range(0..self.members[a].len())];
        let v = self.members[b][rng.gen_range(0..self.members[b].len())];
        Some((u as usize, v as usize))
    }

    /// Records that nodes `u` and `v` exchanged states.
    fn swap(&mut self, cfg_after: &Configuration, u: usize, v: usize) {
        let cu = cfg_after.state(v).index(); // u's class before the swap
        let cv = cfg_after.state(u).index();
        let pu = self.position[u];
        let pv = self.position[v];
        self.members[cu][pu as usize] = v as u32;
        self.members[cv][pv as usize] = u as u32;
        self.position[u] = pv;
        self.position[v] = pu;
    }
}

/// Anneals a fresh random lift toward `y_target`. Returns the best
/// configuration seen and its objective; infeasible targets come back
/// best-effort with the achieved objective above tolerance.
pub fn sa_lift<R: Rng>(
    net: &Network,
    x: &CoarseState,
    y_target: &PairDensities,
    sa: &SAParams,
    rng: &mut R,
) -> Result<(Configuration, f64), LiftError> {
    sa.validate()?;
    let mut cfg = random_lift(net, x, rng)?;
    let l_pairs = net.l_pairs();
    let mut counts = ordered_pair_counts(net, &cfg);
    let mut obj = objective(&counts, l_pairs, y_target);
    let mut classes = ClassIndex::new(&cfg);

    // Journal of accepted swaps; the best configuration is reconstructed
    // by unwinding past the best index, avoiding snapshot clones in the
    // move loop.
    let mut journal: Vec<(u32, u32)> = Vec::new();
    let mut best_obj = obj;
    let mut best_len = 0usize;

    let mut temp = sa.temp_init;
    let mut stall_marker = best_obj;
    let mut stalled_sweeps = 0usize;
    'anneal: for _sweep in 0..sa.sweeps_max {
        for _ in 0..sa.moves(net.n_nodes()) {
            let Some((u, v)) = classes.sample_pair(rng) else {
                break 'anneal; // single-class configuration: nothing to move
            };
            let su = cfg.state(u);
            let sv = cfg.state(v);
            apply_state_change(&mut counts, net, &mut cfg, u, sv);
            apply_state_change(&mut counts, net, &mut cfg, v, su);
            let new_obj = objective(&counts, l_pairs, y_target);
            let delta = new_obj - obj;
            let accept = delta < 0.0 || rng.gen::<f64>() < (-delta / temp).exp();
            if accept {
                classes.swap(&cfg, u, v);
                journal.push((u as u32, v as u32));
                obj = new_obj;
                if obj < best_obj {
                    best_obj = obj;
                    best_len = journal.len();
                }
                if best_obj <= sa.tol {
                    break 'anneal;
                }
            } else {
                // Undo: the swap is its own inverse.
                apply_state_change(&mut counts, net, &mut cfg, u, su);
                apply_state_change(&mut counts, net, &mut cfg, v, sv);
            }
        }
        temp *= sa.cooling;
        if sa.stall_sweeps > 0 {
            if best_obj < stall_marker - 0.02 * stall_marker.abs() {
                stall_marker = best_obj;
                stalled_sweeps = 0;
            } else {
                stalled_sweeps += 1;
                if stalled_sweeps >= sa.stall_sweeps {
                    break;
                }
            }
        }
    }

    // Rewind to the best configuration seen.
    for &(u, v) in journal[best_len..].iter().rev() {
        cfg.states_mut().swap(u as usize, v as usize);
    }
    Ok((cfg, best_obj))
}

/// Outcome of the healing loop. `converged = false` means the round
/// budget ran out; the last iterate is still returned.
#[derive(Debug, Clone)]
pub struct HealResult {
    pub cfg: Configuration,
    pub converged: bool,
    pub rounds: usize,
    pub last_delta: f64,
}

/// Constrained-runs healing: evolve a short burst, record the evolved
/// pair densities, re-lift to `x0` with those densities as the target,
/// and repeat until successive pair-density vectors stop moving.
pub fn heal<R: Rng>(
    net: &Network,
    x0: &CoarseState,
    params: &EpidemicParams,
    hp: &HealParams,
    sa: &SAParams,
    rng: &mut R,
) -> Result<HealResult, LiftError> {
    if hp.dt == 0 || hp.max_rounds == 0 {
        return Err(LiftError::InvalidArguments("dt and max_rounds must be positive".into()));
    }
    let mut cfg = random_lift(net, x0, rng)?;
    let mut y_prev = pair_densities(net, &cfg);
    let mut last_delta = f64::INFINITY;
    for round in 1..=hp.max_rounds {
        let evolved = evolve(net, &cfg, params, hp.dt, rng);
        let y = pair_densities(net, &evolved);
        let (lifted, _) = sa_lift(net, x0, &y, sa, rng)?;
        cfg = lifted;
        last_delta = y.distance(&y_prev);
        if last_delta < hp.moment_tol {
            return Ok(HealResult { cfg, converged: true, rounds: round, last_delta });
        }
        y_prev = y;
    }
    Ok(HealResult { cfg, converged: false, rounds: hp.max_rounds, last_delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_rrn;
    use crate::moments::mean_densities;
    use HealthState::{Infected as I, Recovered as R, Susceptible as S};

    #[test]
    fn random_lift_realizes_rounded_counts() {
        let net = generate_rrn(4, 3, 1).unwrap();
        let mut rng = crate::rng::stream(2);
        let cfg = random_lift(&net, &CoarseState::new(1.0, 0.0), &mut rng).unwrap();
        assert_eq!(cfg, Configuration::uniform(4, S));

        let cfg = random_lift(&net, &CoarseState::new(0.5, 0.5), &mut rng).unwrap();
        assert_eq!(cfg.counts(), (2, 2, 0));
    }

    #[test]
    fn random_lift_at_scale_rounds_exactly() {
        let net = generate_rrn(20_000, 4, 42).unwrap();
        let mut rng = crate::rng::stream(3);
        let x = CoarseState::new(0.034, 0.903);
        let cfg = random_lift(&net, &x, &mut rng).unwrap();
        assert_eq!(cfg.counts(), (680, 18_060, 1_260));
        let m = mean_densities(&cfg);
        assert!((m.s - x.s).abs() <= 0.5 / 20_000.0);
        assert!((m.i - x.i).abs() <= 0.5 / 20_000.0);
    }

    #[test]
    fn random_lift_rejects_impossible_states() {
        let net = generate_rrn(10, 4, 1).unwrap();
        let mut rng = crate::rng::stream(4);
        assert!(random_lift(&net, &CoarseState::new(0.8, 0.8), &mut rng).is_err());
        assert!(random_lift(&net, &CoarseState::new(-0.2, 0.5), &mut rng).is_err());
    }

    #[test]
    fn lifts_with_different_seeds_differ() {
        let net = generate_rrn(100, 4, 1).unwrap();
        let x = CoarseState::new(0.5, 0.3);
        let a = random_lift(&net, &x, &mut crate::rng::stream(1)).unwrap();
        let b = random_lift(&net, &x, &mut crate::rng::stream(2)).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.counts(), b.counts());
    }

    #[test]
    fn swap_is_an_involution_and_validates() {
        let cfg = Configuration::new(vec![S, I, R, I]);
        let once = swap_states(&cfg, 0, 1).unwrap();
        assert_eq!(once.state(0), I);
        assert_eq!(once.state(1), S);
        assert_eq!(swap_states(&once, 0, 1).unwrap(), cfg);
        // Same-state swap changes nothing.
        assert_eq!(swap_states(&cfg, 1, 3).unwrap(), cfg);
        assert!(swap_states(&cfg, 2, 2).is_err());
        assert!(swap_states(&cfg, 0, 9).is_err());
    }

    #[test]
    fn swap_preserves_mean_densities() {
        let mut rng = crate::rng::stream(7);
        let net = generate_rrn(60, 4, 5).unwrap();
        let cfg = random_lift(&net, &CoarseState::new(0.4, 0.35), &mut rng).unwrap();
        for _ in 0..1000 {
            let i = rng.gen_range(0..60);
            let mut j = rng.gen_range(0..59);
            if j >= i {
                j += 1;
            }
            let swapped = swap_states(&cfg, i, j).unwrap();
            assert_eq!(mean_densities(&swapped), mean_densities(&cfg));
        }
    }

    #[test]
    fn incremental_pair_counts_match_full_recount() {
        let mut rng = crate::rng::stream(8);
        let net = generate_rrn(40, 4, 9).unwrap();
        let mut cfg = random_lift(&net, &CoarseState::new(0.4, 0.4), &mut rng).unwrap();
        let mut counts = ordered_pair_counts(&net, &cfg);
        for _ in 0..200 {
            let u = rng.gen_range(0..40);
            let new_state = HealthState::ALL[rng.gen_range(0..3)];
            apply_state_change(&mut counts, &net, &mut cfg, u, new_state);
            assert_eq!(counts, ordered_pair_counts(&net, &cfg));
        }
    }

    #[test]
    fn sa_lift_converges_immediately_when_already_at_target() {
        let net = generate_rrn(50, 4, 3).unwrap();
        let x = CoarseState::new(0.5, 0.3);
        // The annealer starts from random_lift on the same stream state,
        // so the initial configuration reproduces cfg0 and the objective
        // is exactly zero at initialization.
        let mut probe = crate::rng::stream(21);
        let cfg0 = random_lift(&net, &x, &mut probe.clone()).unwrap();
        let target = pair_densities(&net, &cfg0);
        let (out, obj) = sa_lift(&net, &x, &target, &SAParams::default(), &mut probe).unwrap();
        assert_eq!(obj, 0.0);
        assert_eq!(out, cfg0);
    }

    #[test]
    fn sa_lift_matches_feasible_target_exactly_on_small_graph() {
        let net = generate_rrn(8, 3, 17).unwrap();
        let mut rng = crate::rng::stream(30);
        let reference = random_lift(&net, &CoarseState::new(0.375, 0.375), &mut rng).unwrap();
        let target = pair_densities(&net, &reference);
        let x = mean_densities(&reference);
        let sa = SAParams { sweeps_max: 400, stall_sweeps: 0, ..SAParams::default() };
        let (cfg, obj) = sa_lift(&net, &x, &target, &sa, &mut rng).unwrap();
        assert!(obj <= sa.tol, "objective {obj} above tolerance");
        assert_eq!(pair_densities(&net, &cfg), target);
        assert_eq!(cfg.counts(), reference.counts());
    }

    #[test]
    fn sa_lift_reports_best_effort_on_infeasible_target() {
        let net = generate_rrn(30, 4, 3).unwrap();
        let x = CoarseState::new(0.5, 0.5);
        // All-susceptible pairs are impossible when half the nodes are
        // infected on a connected graph.
        let target = PairDensities { ss: 1.0, ..Default::default() };
        let mut rng = crate::rng::stream(5);
        let (cfg, obj) = sa_lift(&net, &x, &target, &SAParams::default(), &mut rng).unwrap();
        assert!(obj > 0.0);
        assert_eq!(cfg.counts(), (15, 15, 0));
    }

    #[test]
    fn sa_lift_only_improves_on_the_initial_objective() {
        let net = generate_rrn(60, 4, 13).unwrap();
        let x = CoarseState::new(0.4, 0.4);
        let target = PairDensities {
            ss: 0.3,
            si: 0.1,
            ii: 0.3,
            sr: 0.1,
            ir: 0.1,
            rr: 0.1,
        };
        let mut probe = crate::rng::stream(77);
        let cfg0 = random_lift(&net, &x, &mut probe.clone()).unwrap();
        let initial = pair_densities(&net, &cfg0).distance(&target);
        let (_, achieved) = sa_lift(&net, &x, &target, &SAParams::default(), &mut probe).unwrap();
        assert!(achieved <= initial);
    }

    /// Exhaustive minimum of the SA objective over every configuration
    /// with the given state counts.
    fn exhaustive_optimum(
        net: &Network,
        counts: (usize, usize, usize),
        target: &PairDensities,
    ) -> f64 {
        let n = net.n_nodes();
        let mut best = f64::INFINITY;
        let mut states = vec![S; n];
        fn rec(
            net: &Network,
            states: &mut Vec<HealthState>,
            pos: usize,
            left: (usize, usize, usize),
            target: &PairDensities,
            best: &mut f64,
        ) {
            if pos == states.len() {
                let cfg = Configuration::new(states.clone());
                let obj = pair_densities(net, &cfg).distance(target);
                if obj < *best {
                    *best = obj;
                }
                return;
            }
            if left.0 > 0 {
                states[pos] = S;
                rec(net, states, pos + 1, (left.0 - 1, left.1, left.2), target, best);
            }
            if left.1 > 0 {
                states[pos] = I;
                rec(net, states, pos + 1, (left.0, left.1 - 1, left.2), target, best);
            }
            if left.2 > 0 {
                states[pos] = R;
                rec(net, states, pos + 1, (left.0, left.1, left.2 - 1), target, best);
            }
        }
        rec(net, &mut states, 0, counts, target, &mut best);
        best
    }

    #[test]
    fn sa_lift_reaches_the_exhaustive_optimum_on_small_graphs() {
        let mut hits = 0;
        let runs = 5;
        for seed in 0..runs {
            let net = generate_rrn(8, 3, 100 + seed).unwrap();
            let mut rng = crate::rng::stream(200 + seed);
            let reference = random_lift(&net, &CoarseState::new(0.375, 0.375), &mut rng).unwrap();
            let target = pair_densities(&net, &reference);
            let optimum = exhaustive_optimum(&net, reference.counts(), &target);
            let sa = SAParams { sweeps_max: 400, tol: 1e-9, stall_sweeps: 0, ..SAParams::default() };
            let (_, achieved) =
                sa_lift(&net, &mean_densities(&reference), &target, &sa, &mut rng).unwrap();
            if (achieved - optimum).abs() < 1e-12 {
                hits += 1;
            }
        }
        assert_eq!(hits, runs);
    }

    #[test]
    fn heal_is_a_fixed_point_on_all_susceptible() {
        let net = generate_rrn(50, 4, 3).unwrap();
        let params = EpidemicParams::new(0.17, 0.1, 0.5, 0.2).unwrap();
        let mut rng = crate::rng::stream(6);
        let result = heal(
            &net,
            &CoarseState::new(1.0, 0.0),
            &params,
            &HealParams::default(),
            &SAParams::default(),
            &mut rng,
        )
        .unwrap();
        assert!(result.converged);
        assert_eq!(result.rounds, 1);
        assert_eq!(result.cfg, Configuration::uniform(50, S));
    }

    #[test]
    fn heal_pins_the_first_moment() {
        let net = generate_rrn(400, 4, 9).unwrap();
        let params = EpidemicParams::new(0.17, 0.1, 0.5, 0.2).unwrap();
        let x0 = CoarseState::new(0.45, 0.3);
        let mut rng = crate::rng::stream(10);
        let result =
            heal(&net, &x0, &params, &HealParams::default(), &SAParams::default(), &mut rng)
                .unwrap();
        let (n_s, n_i, _) = result.cfg.counts();
        assert_eq!(n_s, (400.0 * x0.s).round() as usize);
        assert_eq!(n_i, (400.0 * x0.i).round() as usize);
    }
}
