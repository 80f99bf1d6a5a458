//! Penalized fitting by majorize-minimize with coordinate descent.
//!
//! Each outer iteration anchors a smooth surrogate at the current iterate:
//! the criterion itself for `Lpre` and `Ls`, the quadratic upper bounds from
//! [`crate::loss`] for `Lare` and `Lad`. Nonzero coefficients get the local
//! quadratic penalty model from [`crate::penalty`]; the surrogate then
//! majorizes the penalized objective and touches it at the anchor, so any
//! coordinate move that does not increase the surrogate cannot increase the
//! objective. That is the invariant behind the nonincreasing
//! `objective_trace`.
//!
//! Coefficients sitting at zero have no quadratic penalty model (its
//! curvature would blow up), so they are frozen: skipped during ordinary
//! passes and re-examined on refresh steps, where a coordinate moves off
//! zero only if a soft-threshold step against the penalty's subgradient
//! bound at zero lowers the surrogate. Refreshes run on the first outer
//! iteration, every tenth after that, and once more before convergence is
//! declared, so a fit never terminates with a profitable coordinate still
//! frozen.

use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

use crate::data::{CoefficientVector, InteractionDesign, SurvivalDataset};
use crate::loss::{objective_from_etas, LossKind, Surrogate};
use crate::penalty::{
    local_quadratic_coefficient, penalty_value, PenaltyKind, PenaltySpec, QuadCoefficient,
};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("objective became NaN at outer iteration {iteration}")]
    NanObjective { iteration: usize },
    #[error("design has {design} columns but start point has {start}")]
    DimensionMismatch { design: usize, start: usize },
    #[error("design has {rows} rows, dataset has {times}, weights have {weights}")]
    RowMismatch { rows: usize, times: usize, weights: usize },
    #[error("dataset must be sorted by observed time before fitting")]
    Unsorted,
    #[error("all observations carry zero weight; nothing to fit")]
    NoEvents,
    #[error("penalty level {0} must be finite and nonnegative")]
    BadLambda(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Outer-loop convergence threshold on the l2 change of the iterate.
    pub tol: f64,
    pub max_mm_iters: usize,
    /// Coordinate passes per outer iteration.
    pub max_cd_passes: usize,
    /// Newton iterations per coordinate slice.
    pub newton_max: usize,
    /// Magnitudes below this are treated as zero.
    pub eps_zero: f64,
    /// Floor applied to majorizer denominators.
    pub eps_denom: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-6,
            max_mm_iters: 500,
            max_cd_passes: 1,
            newton_max: 20,
            eps_zero: 1e-6,
            eps_denom: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: CoefficientVector,
    /// Penalized objective before the first iteration and after each one.
    pub objective_trace: Vec<f64>,
    pub mm_iterations: usize,
    pub converged: bool,
    /// Column indices of nonzero coefficients, ascending.
    pub active_set: Vec<usize>,
    /// Penalty level this fit was run at.
    pub lambda: f64,
    /// Coordinate updates abandoned on a nonfinite slice derivative. Zero in
    /// healthy fits.
    pub abandoned_updates: usize,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// Outcome of the matrix-level solver, before coefficients are given their
/// design identities.
#[derive(Debug, Clone)]
pub(crate) struct MmOutcome {
    pub theta: Array1<f64>,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub abandoned_updates: usize,
}

const GRAD_TOL: f64 = 1e-12;
const CURV_FLOOR: f64 = 1e-12;

/// Fits `kind` with `penalty` on the interaction design. A missing start
/// point is produced by [`lasso_init`] at the same level, matching the
/// two-stage scheme: lasso to find a starting support, concave penalty to
/// debias it.
pub fn fit_penalized(
    design: &InteractionDesign,
    data: &SurvivalDataset,
    weights: &[f64],
    kind: LossKind,
    penalty: &PenaltySpec,
    config: &SolverConfig,
    start: Option<&CoefficientVector>,
) -> Result<FitResult, SolverError> {
    validate_inputs(design.matrix(), data, weights)?;
    let theta0 = match start {
        Some(theta) => {
            if theta.d() != design.d() {
                return Err(SolverError::DimensionMismatch {
                    design: design.d(),
                    start: theta.d(),
                });
            }
            theta.values().clone()
        }
        None if penalty.kind == PenaltyKind::Lasso => Array1::zeros(design.d()),
        None => {
            let lasso = PenaltySpec::lasso(penalty.lambda).expect("level already validated");
            mm_cd(design.matrix(), data.times(), weights, kind, &lasso, config, Array1::zeros(design.d()))?
                .theta
        }
    };
    let outcome = mm_cd(design.matrix(), data.times(), weights, kind, penalty, config, theta0)?;
    Ok(outcome_to_result(outcome, design, penalty.lambda))
}

/// Lasso fit from the zero vector, the stock initializer for concave fits.
pub fn lasso_init(
    design: &InteractionDesign,
    data: &SurvivalDataset,
    weights: &[f64],
    kind: LossKind,
    lambda: f64,
    config: &SolverConfig,
) -> Result<FitResult, SolverError> {
    validate_inputs(design.matrix(), data, weights)?;
    let penalty = PenaltySpec::lasso(lambda).map_err(|_| SolverError::BadLambda(lambda))?;
    let outcome =
        mm_cd(design.matrix(), data.times(), weights, kind, &penalty, config, Array1::zeros(design.d()))?;
    Ok(outcome_to_result(outcome, design, lambda))
}

/// Smallest level at which the zero vector is stationary: the largest
/// coordinatewise gradient magnitude of the criterion's surrogate anchored
/// at zero. The surrogate touches the criterion there, so for the smooth
/// losses this is the exact gradient and for `Lare`/`Lad` a valid
/// subgradient.
pub fn lambda_max(
    design: &InteractionDesign,
    data: &SurvivalDataset,
    weights: &[f64],
    kind: LossKind,
    config: &SolverConfig,
) -> Result<f64, SolverError> {
    validate_inputs(design.matrix(), data, weights)?;
    let n = design.n();
    let zero = Array1::zeros(n);
    let sur = Surrogate::build(kind, zero.view(), data.times(), config.eps_denom);
    let times = data.times();
    let mut best = 0.0_f64;
    for j in 0..design.d() {
        let col = design.matrix().column(j);
        let mut g = 0.0;
        for i in 0..n {
            if weights[i] == 0.0 {
                continue;
            }
            g += weights[i] * col[i] * sur.grad_i(i, times[i], 0.0);
        }
        best = best.max(g.abs());
    }
    Ok(best)
}

/// Log-spaced grid from `lambda_max` down to `ratio * lambda_max`.
pub fn lambda_grid(lambda_max: f64, size: usize, ratio: f64) -> Vec<f64> {
    assert!(size >= 1, "grid needs at least one point");
    assert!(ratio > 0.0 && ratio <= 1.0, "ratio must lie in (0, 1]");
    if lambda_max <= 0.0 {
        return vec![0.0];
    }
    if size == 1 {
        return vec![lambda_max];
    }
    (0..size)
        .map(|t| lambda_max * ratio.powf(t as f64 / (size - 1) as f64))
        .collect()
}

/// Fits every level of `grid` from largest to smallest, warm-starting each
/// fit at the previous solution. The grid must be sorted descending.
///
/// `support_cap` turns the cap into the real terminator of the descent: once
/// a fit's active set exceeds the cap, that fit is kept and the path stops.
/// If the grid runs out first, the path keeps descending at the grid's own
/// geometric step until the cap triggers. Gradient scales at zero vary by
/// orders of magnitude across datasets for the absolute-error criteria, so
/// a fixed grid either misses the level where coordinates enter or wastes
/// most of its depth on near-saturated fits; anchoring the top at the
/// gradient bound and letting the support decide the bottom adapts to both.
/// The returned path can therefore be shorter or longer than the grid; each
/// fit records the level it was computed at. With `support_cap` `None` the
/// grid is fitted exactly as given.
pub fn lambda_path(
    design: &InteractionDesign,
    data: &SurvivalDataset,
    weights: &[f64],
    kind: LossKind,
    penalty_proto: &PenaltySpec,
    grid: &[f64],
    config: &SolverConfig,
    support_cap: Option<usize>,
) -> Result<Vec<FitResult>, SolverError> {
    validate_inputs(design.matrix(), data, weights)?;
    debug_assert!(grid.windows(2).all(|w| w[0] >= w[1]), "grid must descend");
    let mut fits = Vec::with_capacity(grid.len());
    let mut carry = Array1::zeros(design.d());
    let capped = |fits: &Vec<FitResult>| {
        support_cap
            .is_some_and(|cap| fits.last().is_some_and(|f: &FitResult| f.active_set.len() > cap))
    };
    for &lambda in grid {
        let penalty = penalty_proto.with_lambda(lambda);
        let outcome =
            mm_cd(design.matrix(), data.times(), weights, kind, &penalty, config, carry.clone())?;
        carry = outcome.theta.clone();
        fits.push(outcome_to_result(outcome, design, lambda));
        if capped(&fits) {
            return Ok(fits);
        }
    }
    if let Some(cap) = support_cap {
        // A cap no fit can exceed would extend forever; so would a grid too
        // short to define a step.
        if cap >= design.d() || grid.len() < 2 {
            return Ok(fits);
        }
        let step = path_step(grid);
        let mut lambda = grid[grid.len() - 1];
        let floor = lambda * 1e-10;
        while !capped(&fits) && lambda > floor {
            lambda *= step;
            let penalty = penalty_proto.with_lambda(lambda);
            let outcome = mm_cd(
                design.matrix(),
                data.times(),
                weights,
                kind,
                &penalty,
                config,
                carry.clone(),
            )?;
            carry = outcome.theta.clone();
            fits.push(outcome_to_result(outcome, design, lambda));
        }
    }
    Ok(fits)
}

/// Geometric ratio between consecutive levels of a descending grid.
pub fn path_step(grid: &[f64]) -> f64 {
    if grid.len() < 2 || grid[0] <= 0.0 || grid[grid.len() - 1] <= 0.0 {
        return 1.0;
    }
    (grid[grid.len() - 1] / grid[0]).powf(1.0 / (grid.len() - 1) as f64)
}

/// Penalized objective `sum_i w_i loss(y_i, u_i' theta) + sum_j phi(theta_j)`.
pub fn penalized_objective(
    design: &InteractionDesign,
    data: &SurvivalDataset,
    weights: &[f64],
    kind: LossKind,
    penalty: &PenaltySpec,
    theta: &Array1<f64>,
) -> f64 {
    let etas = design.matrix().dot(theta);
    objective_from_etas(kind, etas.view(), data.times(), weights)
        + theta.iter().map(|&t| penalty_value(penalty, t)).sum::<f64>()
}

fn validate_inputs(
    u: &Array2<f64>,
    data: &SurvivalDataset,
    weights: &[f64],
) -> Result<(), SolverError> {
    if u.nrows() != data.n() || weights.len() != data.n() {
        return Err(SolverError::RowMismatch {
            rows: u.nrows(),
            times: data.n(),
            weights: weights.len(),
        });
    }
    if !data.is_sorted_by_time() {
        return Err(SolverError::Unsorted);
    }
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(SolverError::NoEvents);
    }
    Ok(())
}

/// The solver proper, on a plain matrix. Used directly by the refit step,
/// which works on column subsets that are not full interaction designs.
pub(crate) fn mm_cd(
    u: &Array2<f64>,
    times: &[f64],
    weights: &[f64],
    kind: LossKind,
    penalty: &PenaltySpec,
    config: &SolverConfig,
    mut theta: Array1<f64>,
) -> Result<MmOutcome, SolverError> {
    let d = u.ncols();
    if theta.len() != d {
        return Err(SolverError::DimensionMismatch { design: d, start: theta.len() });
    }
    let mut eta = u.dot(&theta);
    let objective = |theta: &Array1<f64>, eta: ArrayView1<f64>| {
        objective_from_etas(kind, eta, times, weights)
            + theta.iter().map(|&t| penalty_value(penalty, t)).sum::<f64>()
    };

    let mut trace = Vec::with_capacity(32);
    let first = objective(&theta, eta.view());
    if first.is_nan() {
        return Err(SolverError::NanObjective { iteration: 0 });
    }
    trace.push(first);

    let mut failures = 0usize;
    let mut converged = false;
    let mut pending_refresh = false;
    let mut s = 0usize;
    while s < config.max_mm_iters {
        let refresh = s % 10 == 0 || pending_refresh;
        let surrogate = Surrogate::build(kind, eta.view(), times, config.eps_denom);
        let coefs: Vec<QuadCoefficient> = theta
            .iter()
            .map(|&t| local_quadratic_coefficient(penalty, t, config.eps_zero))
            .collect();
        let theta_prev = theta.clone();
        for _ in 0..config.max_cd_passes.max(1) {
            for j in 0..d {
                let col = u.column(j);
                match coefs[j] {
                    QuadCoefficient::Active(c) => update_active(
                        &mut theta, &mut eta, j, col, times, weights, kind, &surrogate, penalty,
                        c, config, &mut failures,
                    ),
                    QuadCoefficient::Frozen => {
                        if refresh {
                            update_frozen(
                                &mut theta, &mut eta, j, col, times, weights, kind, &surrogate,
                                penalty,
                            );
                        }
                    }
                }
            }
        }
        // Incremental eta updates drift over a pass; rebuild exactly.
        eta = u.dot(&theta);
        let obj = objective(&theta, eta.view());
        if obj.is_nan() {
            return Err(SolverError::NanObjective { iteration: s });
        }
        trace.push(obj);
        s += 1;

        let delta = theta
            .iter()
            .zip(theta_prev.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if delta < config.tol {
            if refresh {
                converged = true;
                break;
            }
            // Do not stop while frozen coordinates are unexamined.
            pending_refresh = true;
        } else {
            pending_refresh = false;
        }
    }

    // Coordinate moves cannot certify a minimum of the absolute-residual
    // losses: a point can be minimal along every axis while a joint move
    // still descends, because the kinks couple coordinates through the
    // design. Unpenalized fits are finished by a pass that handles those
    // kinks directly.
    if penalty.lambda == 0.0 && matches!(kind, LossKind::Lare | LossKind::Lad) {
        let certified = kink_polish(u, times, weights, kind, &mut theta, &mut eta);
        let obj = objective(&theta, eta.view());
        if obj.is_nan() {
            return Err(SolverError::NanObjective { iteration: s });
        }
        if obj < *trace.last().expect("trace holds the starting value") {
            trace.push(obj);
        }
        if certified {
            converged = true;
        }
    }

    // The quadratic penalty approximation leaves near-zero dust instead of
    // exact zeros. Dust is snapped out only when zeroing does not raise the
    // penalized objective: a genuinely tiny optimum survives, so the reported
    // estimate stays stationary.
    for j in 0..d {
        let t = theta[j];
        if t != 0.0 && t.abs() < config.eps_zero {
            let col = u.column(j);
            let now =
                true_slice_value(kind, times, weights, &eta, col, 0.0) + penalty_value(penalty, t);
            let at_zero = true_slice_value(kind, times, weights, &eta, col, -t);
            if at_zero.is_finite() && at_zero <= now {
                apply_move(&mut theta, &mut eta, j, col, 0.0);
            }
        }
    }
    Ok(MmOutcome { theta, trace, iterations: s, converged, abandoned_updates: failures })
}

fn outcome_to_result(outcome: MmOutcome, design: &InteractionDesign, lambda: f64) -> FitResult {
    let active_set = outcome
        .theta
        .iter()
        .enumerate()
        .filter_map(|(j, &t)| (t != 0.0).then_some(j))
        .collect();
    let theta = CoefficientVector::from_values(outcome.theta, design.q(), design.p())
        .expect("solver preserves dimension");
    FitResult {
        theta,
        objective_trace: outcome.trace,
        mm_iterations: outcome.iterations,
        converged: outcome.converged,
        active_set,
        lambda,
        abandoned_updates: outcome.abandoned_updates,
    }
}

/// True criterion value along coordinate `j` at offset `delta` from the
/// current iterate, data part only. Candidate steps are accepted against
/// this rather than the surrogate: descent of the true objective is what the
/// trace promises, and near a kink the surrogate's clamped curvature makes
/// its own slice a uselessly pessimistic yardstick.
fn true_slice_value(
    kind: LossKind,
    times: &[f64],
    weights: &[f64],
    eta: &Array1<f64>,
    col: ArrayView1<f64>,
    delta: f64,
) -> f64 {
    let mut total = 0.0;
    for i in 0..times.len() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        total += w * crate::loss::loss_term(kind, times[i], eta[i] + col[i] * delta);
        if !total.is_finite() {
            return total;
        }
    }
    total
}

/// First and second slice derivatives at offset `delta`, plus the positive
/// Gauss-Newton curvature used when the exact one fails.
fn slice_derivs(
    surrogate: &Surrogate,
    times: &[f64],
    weights: &[f64],
    eta: &Array1<f64>,
    col: ArrayView1<f64>,
    delta: f64,
) -> (f64, f64, f64) {
    let (mut g, mut h, mut h_gn) = (0.0, 0.0, 0.0);
    for i in 0..times.len() {
        let w = weights[i];
        if w == 0.0 || col[i] == 0.0 {
            continue;
        }
        let e = eta[i] + col[i] * delta;
        let wu = w * col[i];
        g += wu * surrogate.grad_i(i, times[i], e);
        let wuu = wu * col[i];
        h += wuu * surrogate.hess_i(i, times[i], e);
        h_gn += wuu * surrogate.gn_hess_i(i, times[i], e);
    }
    (g, h, h_gn)
}

/// Newton steps on the surrogate slice plus the local quadratic penalty
/// model, safeguarded by halving against the true penalized slice, for a
/// coordinate with a nonzero anchor. A full step that is accepted without
/// halving is extended by doubling while the true slice keeps improving:
/// when the anchor sits on a kink the clamped majorizer curvature makes the
/// Newton step absurdly short, and the extension walks out of that trap at
/// geometric speed.
#[allow(clippy::too_many_arguments)]
fn update_active(
    theta: &mut Array1<f64>,
    eta: &mut Array1<f64>,
    j: usize,
    col: ArrayView1<f64>,
    times: &[f64],
    weights: &[f64],
    kind: LossKind,
    surrogate: &Surrogate,
    penalty: &PenaltySpec,
    c: f64,
    config: &SolverConfig,
    abandoned: &mut usize,
) {
    let t0 = theta[j];
    let value_at = |t: f64| -> f64 {
        true_slice_value(kind, times, weights, eta, col, t - t0) + penalty_value(penalty, t)
    };
    let mut t = t0;
    let mut ft = value_at(t0);
    'newton: for _ in 0..config.newton_max {
        let (g_data, h_data, h_gn) = slice_derivs(surrogate, times, weights, eta, col, t - t0);
        let g = g_data + c * t;
        if !g.is_finite() {
            *abandoned += 1;
            break;
        }
        if g.abs() < GRAD_TOL {
            break;
        }
        let h = h_data + c;
        let h_eff = if h.is_finite() && h > CURV_FLOOR { h } else { (h_gn + c).max(CURV_FLOOR) };
        let mut step = -g / h_eff;
        let mut halved = false;
        loop {
            if step.abs() < 1e-16 * (1.0 + t.abs()) {
                // Flat to machine precision in the descent direction.
                break 'newton;
            }
            let cand = t + step;
            let fc = value_at(cand);
            if fc.is_finite() && fc <= ft {
                let progress = (cand - t).abs();
                t = cand;
                ft = fc;
                if !halved {
                    (t, ft) = extend_while_improving(t, ft, step, &value_at);
                }
                if progress < 1e-14 * (1.0 + t.abs()) {
                    break 'newton;
                }
                break;
            }
            halved = true;
            step *= 0.5;
        }
    }
    // A coefficient drifting under the zero threshold is pinned there when
    // doing so does not raise the slice, keeping the support honest.
    if t != 0.0 && t.abs() < config.eps_zero {
        let f_zero = value_at(0.0);
        if f_zero.is_finite() && f_zero <= ft {
            t = 0.0;
        }
    }
    apply_move(theta, eta, j, col, t);
}

/// Re-examines a frozen coordinate: a soft-threshold step against the
/// penalty's subgradient bound at zero, kept only if it lowers the true
/// penalized slice, then extended by doubling while that keeps paying.
#[allow(clippy::too_many_arguments)]
fn update_frozen(
    theta: &mut Array1<f64>,
    eta: &mut Array1<f64>,
    j: usize,
    col: ArrayView1<f64>,
    times: &[f64],
    weights: &[f64],
    kind: LossKind,
    surrogate: &Surrogate,
    penalty: &PenaltySpec,
) {
    let t0 = theta[j];
    let lambda = penalty.lambda;
    let (g, h_data, h_gn) = slice_derivs(surrogate, times, weights, eta, col, 0.0);
    if !g.is_finite() || g.abs() <= 0.5 * lambda {
        return;
    }
    let h = if h_data.is_finite() && h_data > CURV_FLOOR { h_data } else { h_gn.max(CURV_FLOOR) };
    let target = h * t0 - g;
    let mut t = soft_threshold(target, lambda) / h;
    if t == t0 {
        return;
    }
    let value_at = |t: f64| -> f64 {
        true_slice_value(kind, times, weights, eta, col, t - t0) + penalty_value(penalty, t)
    };
    let f0 = value_at(t0);
    loop {
        let fc = value_at(t);
        if fc.is_finite() && fc < f0 {
            let (t_ext, _) = extend_while_improving(t, fc, t - t0, &value_at);
            apply_move(theta, eta, j, col, t_ext);
            return;
        }
        t = t0 + (t - t0) * 0.5;
        if (t - t0).abs() < 1e-16 {
            return;
        }
    }
}

/// How close a weighted residual must sit to its kink before the polish
/// treats it as exactly interpolated.
const PIN_RADIUS: f64 = 1e-7;

/// Slope and curvature of one loss term as a function of the log-scale
/// residual, plus the largest slope magnitude the kink at zero can absorb.
fn residual_derivs(kind: LossKind, r: f64) -> (f64, f64, f64) {
    match kind {
        LossKind::Lad => (r.signum(), 0.0, 1.0),
        LossKind::Lare => (2.0 * r.signum() * r.cosh(), 2.0 * r.abs().sinh(), 2.0),
        _ => unreachable!("the polish only runs for the absolute-residual losses"),
    }
}

/// Finishing pass for unpenalized fits of the absolute-residual losses.
///
/// Residuals sitting on their kinks are held as equality constraints while a
/// Newton step on the smooth remainder moves inside their null space; the
/// constraint multipliers say how much slope each kink must absorb, and a
/// pin whose multiplier exceeds what the kink can supply is released, with
/// the kink's capped slope standing in for it on the descent side. Steps are
/// accepted by a backtracking search on the true objective, so the pass only
/// ever descends. Returns whether it reached a point where the null-space
/// gradient is flat and every multiplier is within its cap, which certifies
/// a minimum of the full nonsmooth objective up to the pin radius.
fn kink_polish(
    u: &Array2<f64>,
    times: &[f64],
    weights: &[f64],
    kind: LossKind,
    theta: &mut Array1<f64>,
    eta: &mut Array1<f64>,
) -> bool {
    let n = times.len();
    let d = u.ncols();
    let ln_y: Vec<f64> = times.iter().map(|&y| y.ln()).collect();
    let value = |eta: &Array1<f64>| objective_from_etas(kind, eta.view(), times, weights);

    for _ in 0..200 {
        *eta = u.dot(theta);
        let mut pins: Vec<usize> = (0..n)
            .filter(|&i| weights[i] > 0.0 && (eta[i] - ln_y[i]).abs() <= PIN_RADIUS)
            .collect();
        pins.sort_by(|&a, &b| (eta[a] - ln_y[a]).abs().total_cmp(&(eta[b] - ln_y[b]).abs()));
        pins.truncate(d);

        let mut grad = Array1::<f64>::zeros(d);
        let mut hess = Array2::<f64>::zeros((d, d));
        for i in 0..n {
            let w = weights[i];
            if w == 0.0 || pins.contains(&i) {
                continue;
            }
            let (l1, l2) = match residual_derivs(kind, eta[i] - ln_y[i]) {
                (l1, l2, _) if l1.is_finite() && l2.is_finite() => (l1, l2),
                _ => return false,
            };
            for j in 0..d {
                grad[j] += w * l1 * u[[i, j]];
                if l2 != 0.0 {
                    for k in 0..=j {
                        hess[[j, k]] += w * l2 * u[[i, j]] * u[[i, k]];
                    }
                }
            }
        }
        for j in 0..d {
            for k in (j + 1)..d {
                hess[[j, k]] = hess[[k, j]];
            }
        }

        let mut released: Option<(usize, f64)> = None;
        let (step, _) = loop {
            let mut g = grad.clone();
            if let Some((i, slope)) = released {
                for j in 0..d {
                    g[j] += weights[i] * slope * u[[i, j]];
                }
            }
            let held: Vec<usize> = pins
                .iter()
                .copied()
                .filter(|&i| !released.is_some_and(|(r, _)| r == i))
                .collect();
            let solved = constrained_newton(&hess, &g, u, &held);
            let Some((p, nu)) = solved else { return false };
            let residual = (0..d)
                .map(|j| {
                    let pull: f64 =
                        held.iter().zip(nu.iter()).map(|(&i, &v)| v * u[[i, j]]).sum();
                    (g[j] + pull).abs()
                })
                .fold(0.0, f64::max);
            let gscale = 1.0 + grad.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
            if residual > 1e-9 * gscale || released.is_some() {
                break (p, nu);
            }
            // Flat inside the null space: every kink must absorb its
            // multiplier, and one that cannot is released, its capped slope
            // pushing the next solve off that kink on the descent side.
            let cap = residual_derivs(kind, 0.0).2;
            let worst = held
                .iter()
                .zip(nu.iter())
                .map(|(&i, &v)| (i, v, v.abs() - cap * weights[i]))
                .max_by(|a, b| a.2.total_cmp(&b.2));
            match worst {
                Some((i, v, excess)) if excess > 1e-12 * gscale => {
                    released = Some((i, cap * v.signum()));
                }
                _ => return true,
            }
        };

        let mut p = step;
        let pmax = p.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
        if pmax == 0.0 {
            return false;
        }
        let tmax = theta.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
        if pmax > 10.0 * (1.0 + tmax) {
            p *= 10.0 * (1.0 + tmax) / pmax;
        }
        let up = u.dot(&p);
        let base = value(eta);
        let along = |t: f64| -> f64 {
            let moved = Array1::from_shape_fn(n, |i| eta[i] + t * up[i]);
            value(&moved)
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let ft = along(t);
            if ft.is_finite() && ft < base {
                accepted = Some(extend_while_improving(t, ft, t, &along));
                break;
            }
            t *= 0.5;
        }
        let Some((t, _)) = accepted else { return false };
        for j in 0..d {
            theta[j] += t * p[j];
        }
    }
    false
}

/// Minimizes `g'p + p'Hp/2` subject to the pinned design rows staying put,
/// through one dense solve of the stacked stationarity-and-constraint
/// system. Returns the step and one multiplier per held row.
fn constrained_newton(
    hess: &Array2<f64>,
    g: &Array1<f64>,
    u: &Array2<f64>,
    held: &[usize],
) -> Option<(Array1<f64>, Vec<f64>)> {
    let d = g.len();
    let m = held.len();
    let size = d + m;
    let mut a = Array2::<f64>::zeros((size, size));
    let mut b = Array1::<f64>::zeros(size);
    let ridge = 1e-8 * (1.0 + hess.diag().iter().fold(0.0f64, |acc, &v| acc.max(v.abs())));
    for j in 0..d {
        for k in 0..d {
            a[[j, k]] = hess[[j, k]];
        }
        a[[j, j]] += ridge;
        b[j] = -g[j];
    }
    for (row, &i) in held.iter().enumerate() {
        for j in 0..d {
            a[[d + row, j]] = u[[i, j]];
            a[[j, d + row]] = u[[i, j]];
        }
    }
    let x = solve_dense(a, b)?;
    let p = Array1::from_shape_fn(d, |j| x[j]);
    let nu = (0..m).map(|k| x[d + k]).collect();
    Some((p, nu))
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_dense(mut a: Array2<f64>, mut b: Array1<f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    let scale = a.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let floor = 1e-14 * (1.0 + scale);
    for col in 0..n {
        let mut piv = col;
        for row in (col + 1)..n {
            if a[[row, col]].abs() > a[[piv, col]].abs() {
                piv = row;
            }
        }
        if a[[piv, col]].abs() < floor {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap([piv, k], [col, k]);
            }
            b.swap(piv, col);
        }
        for row in (col + 1)..n {
            let f = a[[row, col]] / a[[col, col]];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[[row, k]] -= f * a[[col, k]];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = Array1::<f64>::zeros(n);
    for col in (0..n).rev() {
        let mut v = b[col];
        for k in (col + 1)..n {
            v -= a[[col, k]] * x[k];
        }
        x[col] = v / a[[col, col]];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// From an accepted point, keeps doubling the step while the slice value
/// strictly improves. Returns the best point found.
fn extend_while_improving(
    mut t: f64,
    mut ft: f64,
    step: f64,
    value_at: &dyn Fn(f64) -> f64,
) -> (f64, f64) {
    let mut ext = step;
    for _ in 0..60 {
        ext *= 2.0;
        let cand = t + ext;
        let fc = value_at(cand);
        if fc.is_finite() && fc < ft {
            t = cand;
            ft = fc;
        } else {
            break;
        }
    }
    (t, ft)
}

fn apply_move(
    theta: &mut Array1<f64>,
    eta: &mut Array1<f64>,
    j: usize,
    col: ArrayView1<f64>,
    t_new: f64,
) {
    let delta = t_new - theta[j];
    if delta == 0.0 {
        return;
    }
    theta[j] = t_new;
    for i in 0..eta.len() {
        eta[i] += col[i] * delta;
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}
