//! Experiment drivers: temporal simulation sweeps, slow-manifold phase
//! portraits, and bifurcation-branch tracing, each emitting a CSV file
//! whose comment header echoes the full resolved configuration.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::coarse::EpidemicCoarseMap;
use crate::config::{ConfigError, ExperimentConfig, Mode};
use crate::epidemic::{evolve, step, Configuration, EpidemicError, EpidemicParams};
use crate::graph::{generate_rrn, GraphError, Network};
use crate::lifting::{random_lift, sa_lift, LiftError};
use crate::moments::{mean_densities, pair_densities, CoarseState, PairDensities};
use crate::numerics::{newton_fixed_point, trace_branch, ContinuationConfig, FixedPoint};
use crate::rng;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Epidemic(#[from] EpidemicError),
    #[error(transparent)]
    Lift(#[from] LiftError),
    #[error("writing `{path}`: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// How a run ended. `PartialSolver` maps to exit code 2: the output file
/// exists but the solver gave up before completing the branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Complete,
    PartialSolver,
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    match cfg.mode {
        Mode::Temporal => run_temporal(cfg),
        Mode::Portrait => run_portrait(cfg),
        Mode::Continuation => run_continuation(cfg),
    }
}

struct CsvOut {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl CsvOut {
    fn create(cfg: &ExperimentConfig, columns: &str) -> Result<Self, ExperimentError> {
        let path = cfg.output.clone();
        let file = File::create(&path).map_err(|source| ExperimentError::Io {
            path: path.clone(),
            source,
        })?;
        let mut out = CsvOut { path, writer: BufWriter::new(file) };
        out.comment("efnet configuration")?;
        for (key, value) in cfg.resolved_pairs() {
            out.line(&format!("# {key} = {value}"))?;
        }
        out.comment(&format!("columns: {columns}"))?;
        out.line(columns)?;
        Ok(out)
    }

    fn comment(&mut self, text: &str) -> Result<(), ExperimentError> {
        self.line(&format!("# {text}"))
    }

    fn line(&mut self, text: &str) -> Result<(), ExperimentError> {
        writeln!(self.writer, "{text}").map_err(|source| ExperimentError::Io {
            path: self.path.clone(),
            source,
        })
    }

    fn finish(mut self) -> Result<(), ExperimentError> {
        self.writer.flush().map_err(|source| ExperimentError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

/// Parses the `# key = value` comment header of an output file back into
/// override pairs; the reproducibility hook.
pub fn read_header_pairs(text: &str) -> BTreeMap<String, String> {
    let mut pairs = BTreeMap::new();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else { break };
        if let Some((key, value)) = rest.split_once('=') {
            pairs.insert(key.trim().to_string(), value.trim().to_string());
        }
    }
    pairs
}

fn fractions(cfg_micro: &Configuration) -> (f64, f64, f64) {
    let x = mean_densities(cfg_micro);
    (x.s, x.i, x.r())
}

/// Temporal mode: for every swept infection probability and every listed
/// initial infected fraction, simulate forward and record the density
/// trajectory.
pub fn run_temporal(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    let net = generate_rrn(cfg.network.n_nodes, cfg.network.degree, cfg.network.seed)?;
    let mut out = CsvOut::create(cfg, "p_si,ic_label,t,S,I,R")?;
    for (pi, &p_si) in cfg.temporal.p_si_sweep.iter().enumerate() {
        let params = EpidemicParams { p_si, ..cfg.epidemic };
        params.validate()?;
        for (ci, &i0) in cfg.temporal.initial_infected.iter().enumerate() {
            let mut stream =
                rng::stream(rng::derive(cfg.temporal.run_seed, pi as u64, ci as u64));
            let x0 = CoarseState::new(1.0 - i0, i0);
            let mut micro = random_lift(&net, &x0, &mut stream)?;
            let label = format!("i0={i0}");
            for t in 0..=cfg.temporal.t_max {
                let (s, i, r) = fractions(&micro);
                out.line(&format!("{p_si},{label},{t},{s:.6},{i:.6},{r:.6}"))?;
                if t < cfg.temporal.t_max {
                    micro = step(&net, &micro, &params, &mut stream);
                }
            }
        }
    }
    out.finish()?;
    Ok(RunOutcome::Complete)
}

/// Random-mixing pair-density expectations for a coarse state.
fn mixing_pairs(x: &CoarseState) -> PairDensities {
    let (s, i, r) = (x.s, x.i, x.r());
    PairDensities {
        ss: s * s,
        si: 2.0 * s * i,
        sr: 2.0 * s * r,
        ii: i * i,
        ir: 2.0 * i * r,
        rr: r * r,
    }
}

/// A one-parameter family of pair-density targets at fixed first
/// moments: moving weight between `[SI]` and the `[SS]`/`[II]` diagonal
/// keeps every marginal consistent, so sweeping `si` spans configurations
/// from segregated to interleaved.
pub fn si_target(x: &CoarseState, si: f64) -> PairDensities {
    let base = mixing_pairs(x);
    let shift = (base.si - si) / 2.0;
    PairDensities { ss: base.ss + shift, si, ii: base.ii + shift, ..base }
}

/// The `[SI]` interval reachable by [`si_target`] without negative
/// components.
pub fn si_target_range(x: &CoarseState) -> (f64, f64) {
    let base = mixing_pairs(x);
    (0.0, base.si + 2.0 * base.ss.min(base.ii))
}

/// Portrait mode: launch trajectories from annealed states sharing the
/// anchor densities but spanning a range of `[SI]`, recording
/// `([S], [I], [SI])` per step for the 3-D phase portrait.
pub fn run_portrait(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    let net = generate_rrn(cfg.network.n_nodes, cfg.network.degree, cfg.network.seed)?;
    cfg.epidemic.validate()?;
    let anchor = CoarseState::new(cfg.portrait.anchor_s, cfg.portrait.anchor_i);
    let (lo, hi) = si_target_range(&anchor);
    let n = cfg.portrait.n_trajectories.max(1);
    let mut out = CsvOut::create(cfg, "trajectory_id,t,S,I,SI")?;
    for traj in 0..n {
        let frac = (traj as f64 + 0.5) / n as f64;
        let si = lo + (hi - lo) * (0.1 + 0.8 * frac);
        let target = si_target(&anchor, si);
        let mut stream = rng::stream(rng::derive(cfg.portrait.run_seed, traj as u64, 0));
        let (mut micro, _) = sa_lift(&net, &anchor, &target, &cfg.coarse.sa, &mut stream)?;
        for t in 0..=cfg.portrait.t_max {
            let x = mean_densities(&micro);
            let y = pair_densities(&net, &micro);
            out.line(&format!("{traj},{t},{:.6},{:.6},{:.6}", x.s, x.i, y.si))?;
            if t < cfg.portrait.t_max {
                micro = step(&net, &micro, &cfg.epidemic, &mut stream);
            }
        }
    }
    out.finish()?;
    Ok(RunOutcome::Complete)
}

/// Forward-simulated coarse state used to seed the first Newton solve.
fn warmup_guess(
    net: &Network,
    params: &EpidemicParams,
    i0: f64,
    steps: usize,
    seed: u64,
) -> Result<CoarseState, ExperimentError> {
    let mut stream = rng::stream(rng::derive(seed, 0x7761_726d, 0));
    let x0 = CoarseState::new(1.0 - i0, i0);
    let mut micro = random_lift(net, &x0, &mut stream)?;
    micro = evolve(net, &micro, params, steps, &mut stream);
    // Average a tail window to tame the per-step fluctuation.
    let window = (steps / 4).max(1);
    let mut acc = [0.0f64; 2];
    for _ in 0..window {
        micro = step(net, &micro, params, &mut stream);
        let x = mean_densities(&micro);
        acc[0] += x.s;
        acc[1] += x.i;
    }
    Ok(CoarseState::new(acc[0] / window as f64, acc[1] / window as f64))
}

fn continuation_point_row(idx: usize, fp: &FixedPoint, is_fold: bool) -> String {
    format!(
        "{idx},{:.6},{:.6},{:.6},{:.3e},{:.6},{:.6},{:.6},{:.6},{},{}",
        fp.p,
        fp.x.s,
        fp.x.i,
        fp.residual,
        fp.eigenvalues[0].re,
        fp.eigenvalues[0].im,
        fp.eigenvalues[1].re,
        fp.eigenvalues[1].im,
        u8::from(fp.stable),
        u8::from(is_fold)
    )
}

/// Continuation mode: seed two fixed points near `p_start` from a
/// forward-simulation warmup, trace the branch across the parameter
/// window, and write every point with its eigenvalues, stability and
/// fold flags. Aborts leave a partial file with a status footer and exit
/// code 2.
pub fn run_continuation(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    let net = generate_rrn(cfg.network.n_nodes, cfg.network.degree, cfg.network.seed)?;
    cfg.epidemic.validate()?;
    let c = &cfg.continuation;
    let ncfg = ContinuationConfig {
        ds: c.ds,
        newton_tol: c.newton_tol,
        newton_max_iter: c.newton_max_iter,
        fd_step: c.fd_step,
        n_points: c.n_points,
        damping: c.damping,
        p_window: (c.p_min, c.p_max),
    };
    let map = EpidemicCoarseMap::new(&net, cfg.epidemic, cfg.coarse);

    let mut out =
        CsvOut::create(cfg, "arc_index,p_si,S,I,residual,eig1_re,eig1_im,eig2_re,eig2_im,stable,is_fold")?;

    let params_start = EpidemicParams { p_si: c.p_start, ..cfg.epidemic };
    let guess = warmup_guess(&net, &params_start, c.warmup_i0, c.warmup_steps, cfg.coarse.base_seed)?;
    let seed0 = match newton_fixed_point(&map, &guess, c.p_start, &ncfg) {
        Ok(fp) => fp,
        Err(e) => {
            out.comment(&format!("status = aborted seeding first fixed point: {e}"))?;
            out.finish()?;
            return Ok(RunOutcome::PartialSolver);
        }
    };
    let p_next = c.p_start - c.ds;
    let seed1 = match newton_fixed_point(&map, &seed0.x, p_next, &ncfg) {
        Ok(fp) => fp,
        Err(e) => {
            out.line(&continuation_point_row(0, &seed0, false))?;
            out.comment(&format!("status = aborted seeding second fixed point: {e}"))?;
            out.finish()?;
            return Ok(RunOutcome::PartialSolver);
        }
    };
    if seed0.tol_below_noise || seed1.tol_below_noise {
        out.comment("warning: newton_tol sits below twice the ensemble noise floor")?;
    }

    let branch = trace_branch(&map, &seed0, &seed1, &ncfg);
    for (idx, pt) in branch.points.iter().enumerate() {
        out.line(&continuation_point_row(idx, &pt.point, pt.is_fold))?;
    }
    let status = if branch.aborted { "aborted corrector failure" } else { "complete" };
    out.comment(&format!("status = {status}"))?;
    out.comment(&format!("folds = {}", branch.fold_indices.len()))?;
    out.comment(&format!("heal_failures = {}", map.heal_failures()))?;
    out.finish()?;
    Ok(if branch.aborted { RunOutcome::PartialSolver } else { RunOutcome::Complete })
}

/// Optional raw trajectory dump: absolute counts per day.
pub fn dump_count_trajectory(
    path: &Path,
    rows: &[(usize, usize, usize, usize)],
) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let emit = |w: &mut BufWriter<File>, text: &str| {
        writeln!(w, "{text}").map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    emit(&mut w, "t,S_count,I_count,R_count")?;
    for &(t, s, i, r) in rows {
        emit(&mut w, &format!("{t},{s},{i},{r}"))?;
    }
    w.flush().map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn si_target_family_is_consistent() {
        let x = CoarseState::new(0.45, 0.29);
        let (lo, hi) = si_target_range(&x);
        assert_eq!(lo, 0.0);
        for k in 0..8 {
            let si = lo + (hi - lo) * (k as f64 + 0.5) / 8.0;
            let y = si_target(&x, si);
            assert!((y.sum() - 1.0).abs() < 1e-12);
            assert!(y.as_array().iter().all(|&v| v >= -1e-12));
            assert!((y.si - si).abs() < 1e-15);
            // First-moment marginals are untouched by the shift.
            assert!((y.ss + (y.si + y.sr) / 2.0 - x.s).abs() < 1e-12);
            assert!((y.ii + (y.si + y.ir) / 2.0 - x.i).abs() < 1e-12);
        }
    }

    #[test]
    fn header_pairs_roundtrip_through_an_output_file() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t.csv");
        let cfg = ExperimentConfig::from_text(
            &format!(
                "mode = temporal\noutput = {}\n[network]\nn_nodes = 60\nseed = 3\n\
                 [temporal]\np_si_sweep = 0.2\ninitial_infected = 0.3\nt_max = 5\n",
                out.display()
            ),
            &[],
        )
        .unwrap();
        assert_eq!(run(&cfg).unwrap(), RunOutcome::Complete);
        let text = std::fs::read_to_string(&out).unwrap();
        let pairs = read_header_pairs(&text);
        let back = ExperimentConfig::from_pairs(&pairs).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn temporal_output_reproduces_byte_for_byte_from_its_header() {
        let dir = tempfile::tempdir().unwrap();
        let out_a = dir.path().join("a.csv");
        let cfg = ExperimentConfig::from_text(
            &format!(
                "mode = temporal\noutput = {}\n[network]\nn_nodes = 60\nseed = 3\n\
                 [temporal]\np_si_sweep = 0.25,0.1\ninitial_infected = 0.4\nt_max = 8\nrun_seed = 9\n",
                out_a.display()
            ),
            &[],
        )
        .unwrap();
        run(&cfg).unwrap();
        let first = std::fs::read_to_string(&out_a).unwrap();

        // Rebuild the configuration purely from the emitted header,
        // point it at a fresh path, and compare everything but the
        // output-path line.
        let mut pairs = read_header_pairs(&first);
        let out_b = dir.path().join("b.csv");
        pairs.insert("output".into(), out_b.display().to_string());
        let cfg2 = ExperimentConfig::from_pairs(&pairs).unwrap();
        run(&cfg2).unwrap();
        let second = std::fs::read_to_string(&out_b).unwrap();

        let strip = |text: &str| {
            text.lines()
                .filter(|l| !l.starts_with("# output"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(strip(&first), strip(&second));
    }

    #[test]
    fn temporal_schema_is_locked() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t.csv");
        let cfg = ExperimentConfig::from_text(
            &format!(
                "mode = temporal\noutput = {}\n[network]\nn_nodes = 40\n\
                 [temporal]\np_si_sweep = 0.2\ninitial_infected = 0.5\nt_max = 3\n",
                out.display()
            ),
            &[],
        )
        .unwrap();
        run(&cfg).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        let mut lines = text.lines().skip_while(|l| l.starts_with('#'));
        assert_eq!(lines.next().unwrap(), "p_si,ic_label,t,S,I,R");
        let first = lines.next().unwrap();
        assert!(first.starts_with("0.2,i0=0.5,0,"), "unexpected row {first}");
        // 4 data rows: t = 0..=3.
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn portrait_mode_runs_and_spans_si() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("p.csv");
        let cfg = ExperimentConfig::from_text(
            &format!(
                "mode = portrait\noutput = {}\n[network]\nn_nodes = 120\n\
                 [portrait]\nn_trajectories = 3\nt_max = 4\nanchor_s = 0.4\nanchor_i = 0.35\n",
                out.display()
            ),
            &[],
        )
        .unwrap();
        run(&cfg).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "trajectory_id,t,S,I,SI");
        // Initial SI values differ across trajectories.
        let si_at_t0: Vec<f64> = rows[1..]
            .iter()
            .filter(|r| r.split(',').nth(1) == Some("0"))
            .map(|r| r.split(',').nth(4).unwrap().parse().unwrap())
            .collect();
        assert_eq!(si_at_t0.len(), 3);
        assert!(si_at_t0.windows(2).any(|w| (w[0] - w[1]).abs() > 0.01));
    }

    #[test]
    fn count_trajectory_dump_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.csv");
        dump_count_trajectory(&path, &[(0, 10, 5, 0), (1, 8, 6, 1)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "t,S_count,I_count,R_count\n0,10,5,0\n1,8,6,1\n");
    }
}
