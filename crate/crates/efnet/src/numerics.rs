//! Fixed points, stability and pseudo-arclength continuation wrapped
//! around an abstract coarse time-T map.
//!
//! The coarse system has two variables, so all linear algebra is dense
//! closed-form 2x2 (plus the 3x3 bordered system of the continuation
//! corrector); no iterative Krylov machinery is needed at this size.
//!
//! Stochastic maps are handled through two conventions. Every evaluation
//! takes a `group` key: evaluations sharing a group reuse identical
//! random streams (common random numbers), which is what makes
//! finite-difference derivatives of a noisy map usable. And the solvers
//! compare the requested tolerance against the map's reported standard
//! error, flagging tolerances below the noise floor instead of silently
//! iterating forever.

use num_complex::Complex64;
use thiserror::Error;

use crate::moments::CoarseState;

/// Abstract coarse timestepper `x -> Phi_T(x, p)`.
pub trait CoarseMap: Sync {
    /// Evaluates the map and reports the standard error of the returned
    /// mean (0 for deterministic maps). Identical `(x, p, group)` inputs
    /// must produce identical outputs.
    fn eval_with_err(&self, x: &CoarseState, p: f64, group: u64) -> (CoarseState, f64);

    fn eval(&self, x: &CoarseState, p: f64, group: u64) -> CoarseState {
        self.eval_with_err(x, p, group).0
    }

    /// Projects a proposed state into the map's admissible domain; the
    /// identity for maps defined on all of R^2.
    fn clamp_domain(&self, x: CoarseState) -> CoarseState {
        x
    }
}

pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("no convergence after {iterations} iterations (residual {residual:.3e} at x = ({:.6}, {:.6}), p = {p:.6})", x.s, x.i)]
    NoConvergence { x: CoarseState, p: f64, residual: f64, iterations: usize },
    #[error("singular Jacobian at x = ({:.6}, {:.6}), p = {p:.6} (near a fold?)", x.s, x.i)]
    SingularJacobian { x: CoarseState, p: f64 },
    #[error("continuation step failed after {halvings} step halvings at p = {p:.6}")]
    StepFailed { p: f64, halvings: usize },
}

/// A converged fixed point of the coarse map with its local stability
/// data.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub x: CoarseState,
    pub p: f64,
    pub residual: f64,
    /// Jacobian of the map itself, dPhi/dx.
    pub jacobian: Mat2,
    /// Eigenvalues of the Jacobian, sorted by descending real part.
    pub eigenvalues: [Complex64; 2],
    /// Both eigenvalue moduli strictly inside the unit circle.
    pub stable: bool,
    /// Set when the requested tolerance sits below twice the map's
    /// reported noise floor.
    pub tol_below_noise: bool,
}

impl FixedPoint {
    pub fn largest_modulus(&self) -> f64 {
        self.eigenvalues[0].norm().max(self.eigenvalues[1].norm())
    }
}

/// A fixed point on a continuation branch.
#[derive(Debug, Clone)]
pub struct ContinuationPoint {
    pub point: FixedPoint,
    /// Accumulated arc length along the branch.
    pub arc: f64,
    /// Marked by [`trace_branch`] where the parameter direction reverses.
    pub is_fold: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ContinuationConfig {
    /// Pseudo-arclength step in the (x, p) metric.
    pub ds: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Finite-difference step for Jacobian columns.
    pub fd_step: f64,
    /// Maximum number of continuation points to produce.
    pub n_points: usize,
    /// Initial Newton damping factor in (0, 1].
    pub damping: f64,
    /// Continuation stops once the parameter leaves this window.
    pub p_window: (f64, f64),
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            ds: 0.005,
            newton_tol: 1e-6,
            newton_max_iter: 50,
            fd_step: 5e-3,
            n_points: 100,
            damping: 1.0,
            p_window: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

#[inline]
fn norm2(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Closed-form eigenvalues of a real 2x2 matrix, sorted by descending
/// real part (descending imaginary part on ties).
pub fn eigenvalues_2x2(m: &Mat2) -> [Complex64; 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = tr * tr / 4.0 - det;
    let mut eig = if disc >= 0.0 {
        let root = disc.sqrt();
        [Complex64::new(tr / 2.0 + root, 0.0), Complex64::new(tr / 2.0 - root, 0.0)]
    } else {
        let root = (-disc).sqrt();
        [Complex64::new(tr / 2.0, root), Complex64::new(tr / 2.0, -root)]
    };
    if (eig[1].re, eig[1].im) > (eig[0].re, eig[0].im) {
        eig.swap(0, 1);
    }
    eig
}

fn solve2(a: &Mat2, b: [f64; 2]) -> Option<[f64; 2]> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let scale = a.iter().flatten().map(|v| v.abs()).fold(0.0f64, f64::max).max(1.0);
    if det.abs() < 1e-14 * scale * scale {
        return None;
    }
    Some([
        (b[0] * a[1][1] - b[1] * a[0][1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
    ])
}

/// Gaussian elimination with partial pivoting for the bordered system.
fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let mut m = *a;
    let mut rhs = *b;
    for col in 0..3 {
        let pivot = (col..3).max_by(|&r1, &r2| {
            m[r1][col].abs().partial_cmp(&m[r2][col].abs()).unwrap()
        })?;
        if m[pivot][col].abs() < 1e-14 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in (col + 1)..3 {
            let factor = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= factor * m[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = rhs[row];
        for k in (row + 1)..3 {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Central-difference Jacobian dPhi/dx (2x2) and parameter derivative
/// dPhi/dp (column), all evaluations sharing one `group` so a stochastic
/// map sees common random numbers. Perturbations leaving the map's
/// domain are clipped, degrading that column to a one-sided difference.
pub fn fd_jacobian<M: CoarseMap>(
    map: &M,
    x: &CoarseState,
    p: f64,
    h: f64,
    group: u64,
) -> (Mat2, [f64; 2]) {
    let base = x.as_array();
    let mut jac = [[0.0; 2]; 2];
    for col in 0..2 {
        let mut hi = base;
        let mut lo = base;
        hi[col] += h;
        lo[col] -= h;
        let hi = map.clamp_domain(CoarseState::from_array(hi));
        let lo = map.clamp_domain(CoarseState::from_array(lo));
        let denom = hi.as_array()[col] - lo.as_array()[col];
        if denom.abs() < f64::EPSILON {
            continue;
        }
        let f_hi = map.eval(&hi, p, group).as_array();
        let f_lo = map.eval(&lo, p, group).as_array();
        for row in 0..2 {
            jac[row][col] = (f_hi[row] - f_lo[row]) / denom;
        }
    }
    let f_hi = map.eval(x, p + h, group).as_array();
    let f_lo = map.eval(x, p - h, group).as_array();
    let dp = [(f_hi[0] - f_lo[0]) / (2.0 * h), (f_hi[1] - f_lo[1]) / (2.0 * h)];
    (jac, dp)
}

fn make_fixed_point(
    x: CoarseState,
    p: f64,
    residual: f64,
    jacobian: Mat2,
    tol_below_noise: bool,
) -> FixedPoint {
    let eigenvalues = eigenvalues_2x2(&jacobian);
    let stable = eigenvalues[0].norm() < 1.0 && eigenvalues[1].norm() < 1.0;
    FixedPoint { x, p, residual, jacobian, eigenvalues, stable, tol_below_noise }
}

/// Damped Newton iteration on `G(x) = x - Phi(x, p)`. Each iteration
/// draws a fresh random-number group; the Jacobian, residual and
/// line-search evaluations inside one iteration share that group.
pub fn newton_fixed_point<M: CoarseMap>(
    map: &M,
    x0: &CoarseState,
    p: f64,
    cfg: &ContinuationConfig,
) -> Result<FixedPoint, SolverError> {
    let mut x = map.clamp_domain(*x0);
    let mut tol_below_noise = false;
    let mut last_residual = f64::INFINITY;
    for iter in 0..cfg.newton_max_iter {
        let group = crate::rng::derive(0x6e77_746e, iter as u64, 0);
        let (phi, se) = map.eval_with_err(&x, p, group);
        if cfg.newton_tol < 2.0 * se {
            tol_below_noise = true;
        }
        let g = [x.s - phi.s, x.i - phi.i];
        let res = norm2(g);
        let (jac, _) = fd_jacobian(map, &x, p, cfg.fd_step, group);
        if res <= cfg.newton_tol {
            return Ok(make_fixed_point(x, p, res, jac, tol_below_noise));
        }
        let j_g = [[1.0 - jac[0][0], -jac[0][1]], [-jac[1][0], 1.0 - jac[1][1]]];
        let delta = solve2(&j_g, g).ok_or(SolverError::SingularJacobian { x, p })?;
        // Backtracking line search on the residual, evaluated under the
        // same group so the comparison is noise-consistent.
        let mut best: Option<(f64, CoarseState)> = None;
        let mut lambda = cfg.damping;
        for _ in 0..6 {
            let trial = map.clamp_domain(CoarseState::new(
                x.s - lambda * delta[0],
                x.i - lambda * delta[1],
            ));
            let phi_t = map.eval(&trial, p, group);
            let res_t = norm2([trial.s - phi_t.s, trial.i - phi_t.i]);
            if best.as_ref().map_or(true, |(b, _)| res_t < *b) {
                best = Some((res_t, trial));
            }
            if res_t < res {
                break;
            }
            lambda /= 2.0;
        }
        let (_, next) = best.unwrap();
        x = next;
        last_residual = res;
    }
    Err(SolverError::NoConvergence {
        x,
        p,
        residual: last_residual,
        iterations: cfg.newton_max_iter,
    })
}

/// One pseudo-arclength continuation step from two previously converged
/// points. The secant through them supplies the predictor and the
/// tangent `(alpha, beta)`; the corrector iterates the bordered
/// linearized system (frozen at the predictor) until both the fixed-point
/// residual and the arclength constraint fall below tolerance. Corrector
/// failure halves the step, up to 5 times.
pub fn arclength_step<M: CoarseMap>(
    map: &M,
    prev2: &FixedPoint,
    prev: &FixedPoint,
    cfg: &ContinuationConfig,
    group: u64,
) -> Result<FixedPoint, SolverError> {
    let dx = [prev.x.s - prev2.x.s, prev.x.i - prev2.x.i];
    let dp = prev.p - prev2.p;
    let spacing = (dx[0] * dx[0] + dx[1] * dx[1] + dp * dp).sqrt();
    let alpha = [dx[0] / spacing, dx[1] / spacing];
    let beta = dp / spacing;

    let mut ds = cfg.ds;
    for halving in 0..=5 {
        let x_pred =
            CoarseState::new(prev.x.s + ds * alpha[0], prev.x.i + ds * alpha[1]);
        let p_pred = prev.p + ds * beta;
        let (jac, dphi_dp) = fd_jacobian(map, &map.clamp_domain(x_pred), p_pred, cfg.fd_step, group);
        let bordered = [
            [1.0 - jac[0][0], -jac[0][1], -dphi_dp[0]],
            [-jac[1][0], 1.0 - jac[1][1], -dphi_dp[1]],
            [alpha[0], alpha[1], beta],
        ];

        let mut x = map.clamp_domain(x_pred);
        let mut p = p_pred;
        let mut tol_below_noise = false;
        for _ in 0..cfg.newton_max_iter {
            let (phi, se) = map.eval_with_err(&x, p, group);
            if cfg.newton_tol < 2.0 * se {
                tol_below_noise = true;
            }
            let g = [x.s - phi.s, x.i - phi.i];
            let ncon =
                alpha[0] * (x.s - prev.x.s) + alpha[1] * (x.i - prev.x.i) + beta * (p - prev.p)
                    - ds;
            if norm2(g) <= cfg.newton_tol && ncon.abs() <= cfg.newton_tol {
                return Ok(make_fixed_point(x, p, norm2(g), jac, tol_below_noise));
            }
            let rhs = [-g[0], -g[1], -ncon];
            let Some(delta) = solve3(&bordered, &rhs) else {
                break; // singular bordered system: retry with a smaller step
            };
            x = map.clamp_domain(CoarseState::new(x.s + delta[0], x.i + delta[1]));
            p += delta[2];
        }
        if halving < 5 {
            ds /= 2.0;
        }
    }
    Err(SolverError::StepFailed { p: prev.p, halvings: 5 })
}

/// A traced branch. `aborted` is set when repeated corrector failure cut
/// the trace short; the partial branch is still returned.
#[derive(Debug, Clone)]
pub struct Branch {
    pub points: Vec<ContinuationPoint>,
    /// Indices into `points` where the parameter direction reverses.
    pub fold_indices: Vec<usize>,
    pub aborted: bool,
}

/// Traces a branch by repeated arclength steps from two seed fixed
/// points, marking folds where the parameter direction reverses and
/// stopping when the parameter leaves the configured window, the point
/// budget is exhausted, or the corrector gives up.
pub fn trace_branch<M: CoarseMap>(
    map: &M,
    seed0: &FixedPoint,
    seed1: &FixedPoint,
    cfg: &ContinuationConfig,
) -> Branch {
    let mut points = vec![
        ContinuationPoint { point: seed0.clone(), arc: 0.0, is_fold: false },
        ContinuationPoint {
            point: seed1.clone(),
            arc: point_distance(seed0, seed1),
            is_fold: false,
        },
    ];
    let mut aborted = false;
    while points.len() < cfg.n_points {
        let k = points.len();
        let prev2 = &points[k - 2].point;
        let prev = &points[k - 1].point;
        let group = crate::rng::derive(0x6172_636c, k as u64, 0);
        match arclength_step(map, prev2, prev, cfg, group) {
            Ok(fp) => {
                let arc = points[k - 1].arc + point_distance(prev, &fp);
                let leave = fp.p < cfg.p_window.0 || fp.p > cfg.p_window.1;
                points.push(ContinuationPoint { point: fp, arc, is_fold: false });
                if leave {
                    break;
                }
            }
            Err(_) => {
                aborted = true;
                break;
            }
        }
    }
    let mut fold_indices = Vec::new();
    for k in 1..points.len().saturating_sub(1) {
        let before = points[k].point.p - points[k - 1].point.p;
        let after = points[k + 1].point.p - points[k].point.p;
        if before * after < 0.0 {
            points[k].is_fold = true;
            fold_indices.push(k);
        }
    }
    Branch { points, fold_indices, aborted }
}

fn point_distance(a: &FixedPoint, b: &FixedPoint) -> f64 {
    ((a.x.s - b.x.s).powi(2) + (a.x.i - b.x.i).powi(2) + (a.p - b.p).powi(2)).sqrt()
}
