//! The coarse time-T map: lift to the slow manifold, evolve the
//! microscopic dynamics for a horizon of T days, restrict back to mean
//! densities, averaged over an ensemble of independent replicas.
//!
//! Replica seeds are derived from `(base_seed, group, replica)`, so a
//! caller that reuses a `group` across several evaluations gets common
//! random numbers — the variance-reduction device the finite-difference
//! Jacobians rely on. Replicas evaluate in parallel; the ensemble mean
//! is reduced in replica order, keeping results bitwise reproducible
//! regardless of scheduling.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::epidemic::{evolve, EpidemicParams};
use crate::graph::Network;
use crate::lifting::{heal, HealParams, LiftError, SAParams};
use crate::moments::{mean_densities, CoarseState};
use crate::numerics::CoarseMap;
use crate::rng;

/// Ensemble and healing configuration of the coarse map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseConfig {
    /// Evolution horizon T in microscopic steps.
    pub horizon_t: usize,
    /// Number of microscopic replicas per evaluation.
    pub ensemble: usize,
    pub heal: HealParams,
    pub sa: SAParams,
    pub base_seed: u64,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        CoarseConfig {
            horizon_t: 4,
            ensemble: 64,
            heal: HealParams::default(),
            sa: SAParams::default(),
            base_seed: 0,
        }
    }
}

/// One coarse step with its ensemble diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct CoarseStep {
    pub state: CoarseState,
    /// Standard error of the ensemble mean, per component.
    pub stderr: [f64; 2],
    /// Replicas whose healing loop hit the round budget.
    pub heal_failures: usize,
}

/// Projects onto the density simplex: componentwise clamp to [0, 1],
/// then rescale if the fractions exceed one.
pub fn clamp_simplex(x: CoarseState) -> CoarseState {
    let s = x.s.clamp(0.0, 1.0);
    let i = x.i.clamp(0.0, 1.0);
    let total = s + i;
    if total > 1.0 {
        CoarseState::new(s / total, i / total)
    } else {
        CoarseState::new(s, i)
    }
}

/// Evaluates the coarse map once under the given seed group.
pub fn coarse_timestep_grouped(
    net: &Network,
    x: &CoarseState,
    params: &EpidemicParams,
    cc: &CoarseConfig,
    group: u64,
) -> Result<CoarseStep, LiftError> {
    let results: Vec<Result<(CoarseState, bool), LiftError>> = (0..cc.ensemble)
        .into_par_iter()
        .map(|replica| {
            let seed = rng::derive(cc.base_seed, group, replica as u64);
            let mut stream = rng::stream(seed);
            let healed = heal(net, x, params, &cc.heal, &cc.sa, &mut stream)?;
            let evolved = evolve(net, &healed.cfg, params, cc.horizon_t, &mut stream);
            Ok((mean_densities(&evolved), !healed.converged))
        })
        .collect();

    let mut sum = [0.0f64; 2];
    let mut sum_sq = [0.0f64; 2];
    let mut heal_failures = 0usize;
    for r in &results {
        let (state, failed) = r.as_ref().map_err(clone_lift_err)?;
        let a = state.as_array();
        for c in 0..2 {
            sum[c] += a[c];
            sum_sq[c] += a[c] * a[c];
        }
        if *failed {
            heal_failures += 1;
        }
    }
    let m = cc.ensemble as f64;
    let mean = [sum[0] / m, sum[1] / m];
    let stderr = if cc.ensemble > 1 {
        let mut se = [0.0f64; 2];
        for c in 0..2 {
            let var = (sum_sq[c] - m * mean[c] * mean[c]).max(0.0) / (m - 1.0);
            se[c] = (var / m).sqrt();
        }
        se
    } else {
        [0.0, 0.0]
    };
    Ok(CoarseStep {
        state: CoarseState::new(mean[0], mean[1]),
        stderr,
        heal_failures,
    })
}

fn clone_lift_err(e: &LiftError) -> LiftError {
    match e {
        LiftError::InvalidArguments(msg) => LiftError::InvalidArguments(msg.clone()),
    }
}

/// Evaluates the coarse map under the default seed group.
pub fn coarse_timestep(
    net: &Network,
    x: &CoarseState,
    params: &EpidemicParams,
    cc: &CoarseConfig,
) -> Result<CoarseStep, LiftError> {
    coarse_timestep_grouped(net, x, params, cc, 0)
}

/// Chains coarse steps: returns `[x0, Phi(x0), Phi(Phi(x0)), ...]` of
/// length `n_hops + 1`, with the total count of heal warnings.
pub fn coarse_trajectory(
    net: &Network,
    x0: &CoarseState,
    params: &EpidemicParams,
    cc: &CoarseConfig,
    n_hops: usize,
) -> Result<(Vec<CoarseState>, usize), LiftError> {
    let mut states = Vec::with_capacity(n_hops + 1);
    states.push(*x0);
    let mut heal_failures = 0;
    for hop in 0..n_hops {
        let step = coarse_timestep_grouped(
            net,
            states.last().unwrap(),
            params,
            cc,
            rng::derive(0x686f_7073, hop as u64, 0),
        )?;
        heal_failures += step.heal_failures;
        states.push(step.state);
    }
    Ok((states, heal_failures))
}

/// The epidemic simulator exposed as an abstract coarse map with the
/// infection probability as the continuation parameter.
pub struct EpidemicCoarseMap<'a> {
    net: &'a Network,
    params: EpidemicParams,
    cc: CoarseConfig,
    heal_failures: AtomicUsize,
}

impl<'a> EpidemicCoarseMap<'a> {
    pub fn new(net: &'a Network, params: EpidemicParams, cc: CoarseConfig) -> Self {
        EpidemicCoarseMap { net, params, cc, heal_failures: AtomicUsize::new(0) }
    }

    pub fn config(&self) -> &CoarseConfig {
        &self.cc
    }

    /// Total healing non-convergence warnings accumulated over all
    /// evaluations so far.
    pub fn heal_failures(&self) -> usize {
        self.heal_failures.load(Ordering::Relaxed)
    }
}

impl CoarseMap for EpidemicCoarseMap<'_> {
    fn eval_with_err(&self, x: &CoarseState, p: f64, group: u64) -> (CoarseState, f64) {
        let params = EpidemicParams { p_si: p.clamp(0.0, 1.0), ..self.params };
        let step = coarse_timestep_grouped(self.net, &clamp_simplex(*x), &params, &self.cc, group)
            .expect("clamped coarse state must lift");
        self.heal_failures.fetch_add(step.heal_failures, Ordering::Relaxed);
        (step.state, step.stderr[0].max(step.stderr[1]))
    }

    fn clamp_domain(&self, x: CoarseState) -> CoarseState {
        clamp_simplex(x)
    }
}
