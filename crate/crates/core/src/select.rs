//! Model selection around the penalized fits: cross-validation over a
//! level grid, path-wise selection accuracy, unpenalized refitting onto a
//! hierarchy-closed support, stability frequencies under subject dropping,
//! and a marginal gene prescreen.

use ndarray::{Array1, Axis};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::data::{
    km_weights, CoefficientVector, Coordinate, DataError, InteractionDesign, SurvivalDataset,
};
use crate::loss::{objective_from_etas, LossKind};
use crate::penalty::PenaltySpec;
use crate::rng::{derive_seed, Stream};
use crate::solver::{mm_cd, path_step, FitResult, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("estimate has {estimate} coordinates, truth has {truth}")]
    LengthMismatch { estimate: usize, truth: usize },
    #[error("path is empty")]
    EmptyPath,
    #[error("truth vector is degenerate: {0}")]
    DegenerateTruth(&'static str),
    #[error("bad folds: {0}")]
    BadFolds(String),
    #[error("could not build folds with events on both sides of every split after {retries} tries")]
    DegenerateFolds { retries: usize },
    #[error("cannot drop {dropped} of {n} subjects")]
    BadDrop { dropped: usize, n: usize },
    #[error("resample {resample} kept drawing event-free subsets")]
    DegenerateResample { resample: usize },
    #[error("p-value threshold {0} must lie in (0, 1]")]
    BadThreshold(f64),
}

/// Support-recovery summary of one estimate against the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionMetrics {
    /// Squared estimation error `||estimate - truth||_2^2`.
    pub se: f64,
    /// Fraction of truly nonzero coordinates selected; `None` when the truth
    /// has no nonzero coordinates.
    pub tpr: Option<f64>,
    /// Fraction of truly zero coordinates selected; `None` when the truth
    /// has no zero coordinates.
    pub fpr: Option<f64>,
}

pub fn selection_metrics(
    estimate: &CoefficientVector,
    truth: &CoefficientVector,
) -> Result<SelectionMetrics, SelectError> {
    if estimate.d() != truth.d() {
        return Err(SelectError::LengthMismatch { estimate: estimate.d(), truth: truth.d() });
    }
    let mut se = 0.0;
    let (mut tp, mut fp, mut pos, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (e, t) in estimate.values().iter().zip(truth.values().iter()) {
        se += (e - t) * (e - t);
        if *t != 0.0 {
            pos += 1;
            if *e != 0.0 {
                tp += 1;
            }
        } else {
            neg += 1;
            if *e != 0.0 {
                fp += 1;
            }
        }
    }
    Ok(SelectionMetrics {
        se,
        tpr: (pos > 0).then(|| tp as f64 / pos as f64),
        fpr: (neg > 0).then(|| fp as f64 / neg as f64),
    })
}

/// Area under the (false positive rate, true positive rate) curve traced by
/// the supports along a fitted path, with the corners `(0,0)` and `(1,1)`
/// appended. A path that never selects anything scores 0.5.
pub fn auc_over_path(path: &[FitResult], truth: &CoefficientVector) -> Result<f64, SelectError> {
    if path.is_empty() {
        return Err(SelectError::EmptyPath);
    }
    let mut points = vec![(0.0_f64, 0.0_f64), (1.0, 1.0)];
    for fit in path {
        let m = selection_metrics(&fit.theta, truth)?;
        let tpr = m.tpr.ok_or(SelectError::DegenerateTruth("no nonzero coordinates"))?;
        let fpr = m.fpr.ok_or(SelectError::DegenerateTruth("no zero coordinates"))?;
        points.push((fpr, tpr));
    }
    points.sort_by(|a, b| a.partial_cmp(b).expect("rates are finite"));
    // At equal false positive rates only the best true positive rate counts.
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for (x, y) in points {
        match hull.last_mut() {
            Some((lx, ly)) if *lx == x => *ly = ly.max(y),
            _ => hull.push((x, y)),
        }
    }
    let mut auc = 0.0;
    for w in hull.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(auc)
}

/// Cross-validation outcome over a level grid.
#[derive(Debug, Clone)]
pub struct CvResult {
    pub lambda_opt: f64,
    /// Index of `lambda_opt` in the grid that was scored.
    pub opt_index: usize,
    /// Mean held-out score per grid point.
    pub curve: Vec<f64>,
    /// Held-out score per fold and grid point.
    pub fold_curves: Vec<Vec<f64>>,
    /// Row indices of each held-out fold.
    pub folds: Vec<Vec<usize>>,
}

/// K-fold cross-validation with folds stratified by event status.
///
/// Each fold's training rows are fitted along the whole grid with warm
/// starts, and the held-out rows are scored with the same criterion under
/// their own Kaplan-Meier weights. Fold draws that leave any training or
/// held-out side without events are redrawn up to ten times. Ties on the
/// mean curve resolve toward the larger level. `support_cap` is forwarded
/// to the fold paths, which then descend past the grid floor until their
/// support exceeds the cap; see [`crate::solver::lambda_path`]. The scored
/// ladder is the grid continued at its own geometric step, so one index
/// means one level in every fold.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    design: &InteractionDesign,
    data: &SurvivalDataset,
    kind: LossKind,
    penalty_proto: &PenaltySpec,
    k: usize,
    grid: &[f64],
    config: &SolverConfig,
    support_cap: Option<usize>,
    seed: u64,
) -> Result<CvResult, SelectError> {
    let n = data.n();
    if k < 2 || k > n {
        return Err(SelectError::BadFolds(format!("k={k} with n={n}")));
    }
    const RETRIES: usize = 10;
    for attempt in 0..RETRIES {
        let folds = stratified_folds(data.status(), k, derive_seed(seed, attempt as u64));
        let usable = folds.iter().all(|fold| {
            let held_events = fold.iter().filter(|&&i| data.status()[i] == 1).count();
            let train_events = data.n_events() - held_events;
            held_events > 0 && train_events > 0
        });
        if usable {
            return cv_with_folds(
                design, data, kind, penalty_proto, &folds, grid, config, support_cap,
            );
        }
    }
    Err(SelectError::DegenerateFolds { retries: RETRIES })
}

/// The scoring engine behind [`cross_validate`], taking the folds as given.
/// Fold paths may stop at different depths once their support cap triggers;
/// a fold that stopped early keeps its last held-out score for the deeper
/// levels, so the curves stay aligned and ties still resolve toward the
/// larger level.
#[allow(clippy::too_many_arguments)]
pub fn cv_with_folds(
    design: &InteractionDesign,
    data: &SurvivalDataset,
    kind: LossKind,
    penalty_proto: &PenaltySpec,
    folds: &[Vec<usize>],
    grid: &[f64],
    config: &SolverConfig,
    support_cap: Option<usize>,
) -> Result<CvResult, SelectError> {
    validate_folds(folds, data.n())?;
    if grid.is_empty() {
        return Err(SelectError::EmptyPath);
    }
    let fold_curves: Vec<Vec<f64>> = folds
        .par_iter()
        .map(|held| -> Result<Vec<f64>, SelectError> {
            let held_set: std::collections::HashSet<usize> = held.iter().copied().collect();
            let train: Vec<usize> = (0..data.n()).filter(|i| !held_set.contains(i)).collect();
            let train_design = design.subset_rows(&train);
            let train_data = data.subset(&train);
            let train_weights = km_weights(train_data.status())?;
            let path = crate::solver::lambda_path(
                &train_design, &train_data, &train_weights, kind, penalty_proto, grid, config,
                support_cap,
            )?;
            let held_data = data.subset(held);
            let held_design = design.subset_rows(held);
            let held_weights = km_weights(held_data.status())?;
            let scores: Vec<f64> = path
                .iter()
                .map(|fit| {
                    let etas = held_design.matrix().dot(fit.theta.values());
                    objective_from_etas(kind, etas.view(), held_data.times(), &held_weights)
                })
                .collect();
            Ok(scores)
        })
        .collect::<Result<_, _>>()?;

    let depth = fold_curves.iter().map(Vec::len).max().expect("at least two folds").max(grid.len());
    let fold_curves: Vec<Vec<f64>> = fold_curves
        .into_iter()
        .map(|mut scores| {
            let tail = *scores.last().expect("fold paths are nonempty");
            scores.resize(depth, tail);
            scores
        })
        .collect();

    let mut curve = vec![0.0; depth];
    for fold_curve in &fold_curves {
        for (c, v) in curve.iter_mut().zip(fold_curve) {
            *c += v;
        }
    }
    for c in curve.iter_mut() {
        *c /= folds.len() as f64;
    }
    // The grid descends, so scanning forward with a strict comparison keeps
    // the largest level among ties.
    let mut opt_index = 0;
    for (t, &v) in curve.iter().enumerate() {
        if v < curve[opt_index] {
            opt_index = t;
        }
    }
    Ok(CvResult {
        lambda_opt: level_at(grid, opt_index),
        opt_index,
        curve,
        fold_curves,
        folds: folds.to_vec(),
    })
}

/// The level at ladder position `t`: the grid itself while `t` is inside it,
/// then the grid's last level continued at its own geometric step.
pub fn level_at(grid: &[f64], t: usize) -> f64 {
    if t < grid.len() {
        return grid[t];
    }
    let step = path_step(grid);
    grid[grid.len() - 1] * step.powi((t + 1 - grid.len()) as i32)
}

fn validate_folds(folds: &[Vec<usize>], n: usize) -> Result<(), SelectError> {
    if folds.len() < 2 {
        return Err(SelectError::BadFolds("need at least two folds".into()));
    }
    let mut seen = vec![false; n];
    for fold in folds {
        if fold.is_empty() {
            return Err(SelectError::BadFolds("empty fold".into()));
        }
        for &i in fold {
            if i >= n || seen[i] {
                return Err(SelectError::BadFolds(format!(
                    "row {i} out of range or assigned twice"
                )));
            }
            seen[i] = true;
        }
    }
    if !seen.iter().all(|&s| s) {
        return Err(SelectError::BadFolds("folds do not cover every row".into()));
    }
    Ok(())
}

/// Round-robin fold assignment within each status stratum, after a seeded
/// shuffle, so event counts stay balanced across folds. Fold contents come
/// back sorted ascending, preserving the time order of subsets.
fn stratified_folds(status: &[u8], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut stream = Stream::new(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut slot = 0usize;
    for target in [1u8, 0u8] {
        let mut members: Vec<usize> =
            (0..status.len()).filter(|&i| status[i] == target).collect();
        stream.shuffle(&mut members);
        for idx in members {
            folds[slot % k].push(idx);
            slot += 1;
        }
    }
    for fold in folds.iter_mut() {
        fold.sort_unstable();
    }
    folds
}

/// A refit outcome: either the unpenalized fit on the hierarchy-closed
/// support, or the original fit when the closure is too large to refit.
#[derive(Debug, Clone)]
pub struct RefitOutcome {
    pub fit: FitResult,
    /// Set when the closure had as many coordinates as there are events and
    /// the refit was skipped.
    pub refused: bool,
}

/// Refits without penalty on the selected support closed under strong
/// hierarchy: every selected interaction pulls both of its main effects into
/// the model. The refit starts at the restriction of the penalized estimate,
/// so its objective cannot exceed the original fit's.
pub fn hierarchy_refit(
    fit: &FitResult,
    design: &InteractionDesign,
    data: &SurvivalDataset,
    weights: &[f64],
    kind: LossKind,
    config: &SolverConfig,
) -> Result<RefitOutcome, SelectError> {
    let mut included = vec![false; design.d()];
    for &j in &fit.active_set {
        included[j] = true;
        if let Coordinate::Interaction { env, gene } = design.coordinate(j) {
            included[design.index_of(Coordinate::Env(env)).expect("parent exists")] = true;
            included[design.index_of(Coordinate::Gene(gene)).expect("parent exists")] = true;
        }
    }
    let support: Vec<usize> = (0..design.d()).filter(|&j| included[j]).collect();
    if support.is_empty() {
        return Ok(RefitOutcome { fit: fit.clone(), refused: false });
    }
    if support.len() >= data.n_events() {
        return Ok(RefitOutcome { fit: fit.clone(), refused: true });
    }

    let sub = design.matrix().select(Axis(1), &support);
    let start = Array1::from_iter(support.iter().map(|&j| fit.theta.values()[j]));
    let unpenalized = PenaltySpec::lasso(0.0).expect("zero level is valid");
    // No zero threshold here: a refit main effect must survive however small
    // it comes out, or the reported support would break hierarchy again.
    let refit_config = SolverConfig { eps_zero: f64::MIN_POSITIVE, ..*config };
    let outcome =
        mm_cd(&sub, data.times(), weights, kind, &unpenalized, &refit_config, start)?;

    let mut theta = CoefficientVector::zeros(design.q(), design.p());
    for (slot, &j) in support.iter().enumerate() {
        theta.values_mut()[j] = outcome.theta[slot];
    }
    let active_set = theta.support();
    Ok(RefitOutcome {
        fit: FitResult {
            theta,
            objective_trace: outcome.trace,
            mm_iterations: outcome.iterations,
            converged: outcome.converged,
            active_set,
            lambda: 0.0,
            abandoned_updates: outcome.abandoned_updates,
        },
        refused: false,
    })
}

/// Per-coordinate selection frequencies across event-preserving resamples.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub frequencies: Vec<f64>,
    pub resamples: usize,
    pub dropped: usize,
    /// Resample draws discarded for keeping no events.
    pub redraws: usize,
}

/// Refits at a fixed level on `resamples` random subsets, each dropping
/// `dropped` subjects, and reports how often every coordinate is selected.
/// Subsets without events are redrawn, at most ten times each. With
/// `dropped = 0` every resample is the full dataset and the frequencies are
/// exactly its support indicator.
#[allow(clippy::too_many_arguments)]
pub fn stability_selection(
    design: &InteractionDesign,
    data: &SurvivalDataset,
    kind: LossKind,
    penalty: &PenaltySpec,
    resamples: usize,
    dropped: usize,
    config: &SolverConfig,
    seed: u64,
) -> Result<StabilityReport, SelectError> {
    let n = data.n();
    if resamples == 0 {
        return Err(SelectError::BadFolds("need at least one resample".into()));
    }
    if dropped >= n {
        return Err(SelectError::BadDrop { dropped, n });
    }
    const REDRAWS: usize = 10;
    let runs: Vec<(Vec<usize>, usize)> = (0..resamples)
        .into_par_iter()
        .map(|b| -> Result<(Vec<usize>, usize), SelectError> {
            let mut redraws = 0;
            loop {
                let mut stream =
                    Stream::new(derive_seed(seed, (b * (REDRAWS + 1) + redraws) as u64));
                let mut order: Vec<usize> = (0..n).collect();
                stream.shuffle(&mut order);
                let mut keep: Vec<usize> = order[dropped..].to_vec();
                keep.sort_unstable();
                let kept_data = data.subset(&keep);
                if kept_data.n_events() == 0 {
                    redraws += 1;
                    if redraws > REDRAWS {
                        return Err(SelectError::DegenerateResample { resample: b });
                    }
                    continue;
                }
                let kept_design = design.subset_rows(&keep);
                let weights = km_weights(kept_data.status())?;
                let fit = crate::solver::fit_penalized(
                    &kept_design, &kept_data, &weights, kind, penalty, config, None,
                )?;
                return Ok((fit.active_set, redraws));
            }
        })
        .collect::<Result<_, _>>()?;

    let mut frequencies = vec![0.0; design.d()];
    let mut redraws = 0;
    for (support, r) in &runs {
        redraws += r;
        for &j in support {
            frequencies[j] += 1.0;
        }
    }
    for f in frequencies.iter_mut() {
        *f /= resamples as f64;
    }
    Ok(StabilityReport { frequencies, resamples, dropped, redraws })
}

/// Serializes nonzero stability frequencies as
/// `coordinate_kind,j,k,frequency` rows with 1-based indices.
pub fn write_stability_csv(report: &StabilityReport, q: usize, p: usize) -> String {
    let template = CoefficientVector::zeros(q, p);
    let mut out = String::from("coordinate_kind,j,k,frequency\n");
    for (idx, &f) in report.frequencies.iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let (kind, j, k) = match template.coordinate(idx) {
            Coordinate::Env(j) => ("env", j + 1, 0),
            Coordinate::Gene(k) => ("gene", k + 1, 0),
            Coordinate::Interaction { env, gene } => ("interaction", env + 1, gene + 1),
        };
        out.push_str(&format!("{kind},{j},{k},{f}\n"));
    }
    out
}

/// Result of the marginal gene screen.
#[derive(Debug, Clone)]
pub struct PrescreenOutcome {
    /// Gene indices that passed both rules, ascending.
    pub kept: Vec<usize>,
    /// Two-sided Wald p-value per gene.
    pub p_values: Vec<f64>,
    /// Interquartile range per gene.
    pub iqrs: Vec<f64>,
    /// Genes skipped as (numerically) constant.
    pub excluded_constant: Vec<usize>,
}

/// Screens genes marginally: each gene is regressed on log observed time by
/// Kaplan-Meier-weighted least squares, and survives if its Wald p-value is
/// at most `p_threshold` and its interquartile range exceeds the median
/// interquartile range across genes. Constant genes are excluded outright.
pub fn prescreen(
    data: &SurvivalDataset,
    p_threshold: f64,
) -> Result<PrescreenOutcome, SelectError> {
    if !(p_threshold > 0.0 && p_threshold <= 1.0) {
        return Err(SelectError::BadThreshold(p_threshold));
    }
    let sorted = if data.is_sorted_by_time() { data.clone() } else { data.sort_by_time() };
    let weights = km_weights(sorted.status())?;
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(SelectError::Solver(SolverError::NoEvents));
    }
    let w: Vec<f64> = weights.iter().map(|v| v / total).collect();
    let log_times: Vec<f64> = sorted.times().iter().map(|t| t.ln()).collect();
    let mu_y: f64 = w.iter().zip(&log_times).map(|(wi, ly)| wi * ly).sum();
    let normal = Normal::new(0.0, 1.0).expect("standard normal parameters");
    let p = sorted.p();
    let n = sorted.n();

    let mut p_values = vec![1.0; p];
    let mut iqrs = vec![0.0; p];
    let mut excluded_constant = Vec::new();
    for k in 0..p {
        let z: Vec<f64> = (0..n).map(|i| sorted.genes()[[i, k]]).collect();
        iqrs[k] = interquartile_range(&z);
        let mu_z: f64 = w.iter().zip(&z).map(|(wi, zi)| wi * zi).sum();
        let mut s_zz = 0.0;
        let mut s_zy = 0.0;
        let mut a_sq = 0.0;
        for i in 0..n {
            let cz = z[i] - mu_z;
            s_zz += w[i] * cz * cz;
            s_zy += w[i] * cz * (log_times[i] - mu_y);
            a_sq += w[i] * w[i] * cz * cz;
        }
        if s_zz < 1e-12 {
            excluded_constant.push(k);
            log::warn!("prescreen: gene {} is constant and was excluded", k + 1);
            continue;
        }
        let slope = s_zy / s_zz;
        let events = w.iter().filter(|&&wi| wi > 0.0).count() as f64;
        let mut rss = 0.0;
        for i in 0..n {
            let r = log_times[i] - mu_y - slope * (z[i] - mu_z);
            rss += w[i] * r * r;
        }
        let dof_scale = if events > 2.0 { events / (events - 2.0) } else { 1.0 };
        let var = rss * dof_scale * a_sq / (s_zz * s_zz);
        p_values[k] = if var <= 0.0 {
            if slope == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            2.0 * (1.0 - normal.cdf((slope / var.sqrt()).abs()))
        };
    }

    let iqr_median = median(&iqrs);
    let kept = (0..p)
        .filter(|&k| {
            !excluded_constant.contains(&k) && p_values[k] <= p_threshold && iqrs[k] > iqr_median
        })
        .collect();
    Ok(PrescreenOutcome { kept, p_values, iqrs, excluded_constant })
}

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = (m - 1) as f64 * prob;
    let lo = h.floor() as usize;
    if lo + 1 >= m {
        return sorted[m - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

fn interquartile_range(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("gene values are finite"));
    quantile(&sorted, 0.75) - quantile(&sorted, 0.25)
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("values are finite"));
    quantile(&sorted, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossKind;
    use crate::penalty::PenaltySpec;
    use crate::solver::{fit_penalized, lambda_grid, lambda_max, lambda_path};
    use approx::assert_relative_eq;
    use ndarray::Array2;

    fn toy_dataset(seed: u64, n: usize, q: usize, p: usize) -> (InteractionDesign, SurvivalDataset, Vec<f64>, CoefficientVector) {
        let mut s = Stream::new(seed);
        let env = Array2::from_shape_fn((n, q), |_| s.normal());
        let genes = Array2::from_shape_fn((n, p), |_| s.normal());
        let mut truth = CoefficientVector::zeros(q, p);
        truth.set(Coordinate::Env(0), 0.9).unwrap();
        truth.set(Coordinate::Gene(1), -0.8).unwrap();
        truth.set(Coordinate::Interaction { env: 0, gene: 1 }, 0.7).unwrap();
        let design_tmp = InteractionDesign::build(&env, &genes).unwrap();
        let times: Vec<f64> = (0..n)
            .map(|i| {
                let eta: f64 = design_tmp
                    .matrix()
                    .row(i)
                    .iter()
                    .zip(truth.values())
                    .map(|(u, t)| u * t)
                    .sum();
                (eta + 0.3 * s.normal()).exp()
            })
            .collect();
        let status: Vec<u8> = (0..n).map(|_| u8::from(s.unit() > 0.2)).collect();
        let data = SurvivalDataset::new(times, status, env, genes).unwrap().sort_by_time();
        let design = InteractionDesign::from_dataset(&data).unwrap();
        let weights = km_weights(data.status()).unwrap();
        (design, data, weights, truth)
    }

    #[test]
    fn metrics_count_hits_and_misses() {
        let mut truth = CoefficientVector::zeros(1, 2);
        truth.set(Coordinate::Env(0), 1.0).unwrap();
        truth.set(Coordinate::Gene(0), -1.0).unwrap();
        let mut estimate = CoefficientVector::zeros(1, 2);
        estimate.set(Coordinate::Env(0), 0.5).unwrap();
        estimate.set(Coordinate::Gene(1), 0.25).unwrap();
        let m = selection_metrics(&estimate, &truth).unwrap();
        assert_relative_eq!(m.se, 0.25 + 1.0 + 0.0625);
        assert_relative_eq!(m.tpr.unwrap(), 0.5);
        assert_relative_eq!(m.fpr.unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn metrics_reject_mismatched_lengths() {
        let a = CoefficientVector::zeros(1, 2);
        let b = CoefficientVector::zeros(2, 2);
        assert!(matches!(
            selection_metrics(&a, &b),
            Err(SelectError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn empty_path_auc_is_half() {
        let (design, data, weights, truth) = toy_dataset(41, 60, 2, 3);
        let config = SolverConfig::default();
        let lmax = lambda_max(&design, &data, &weights, LossKind::Lpre, &config).unwrap();
        let proto = PenaltySpec::mcp(1.0, 6.0).unwrap();
        // A grid pinned at lambda_max keeps every fit empty.
        let path = lambda_path(
            &design, &data, &weights, LossKind::Lpre, &proto, &[lmax * 1.5, lmax * 1.2], &config,
            None,
        )
        .unwrap();
        assert!(path.iter().all(|f| f.active_set.is_empty()));
        let auc = auc_over_path(&path, &truth).unwrap();
        assert_relative_eq!(auc, 0.5);
    }

    #[test]
    fn good_path_scores_near_one() {
        let (design, data, weights, truth) = toy_dataset(42, 150, 2, 3);
        let config = SolverConfig::default();
        let lmax = lambda_max(&design, &data, &weights, LossKind::Lpre, &config).unwrap();
        let grid = lambda_grid(lmax, 30, 0.01);
        let proto = PenaltySpec::mcp(1.0, 6.0).unwrap();
        let path =
            lambda_path(&design, &data, &weights, LossKind::Lpre, &proto, &grid, &config, None)
                .unwrap();
        let auc = auc_over_path(&path, &truth).unwrap();
        assert!(auc > 0.9, "auc {auc}");

        // A tight cap truncates the path right after the first fit that exceeds it.
        let cap = 2;
        let first_over = path
            .iter()
            .position(|f| f.active_set.len() > cap)
            .expect("fixture should grow past the cap");
        assert!(first_over + 1 < path.len());
        let capped = lambda_path(
            &design,
            &data,
            &weights,
            LossKind::Lpre,
            &proto,
            &grid,
            &config,
            Some(cap),
        )
        .unwrap();
        assert_eq!(capped.len(), first_over + 1);
        assert!(capped.last().unwrap().active_set.len() > cap);
        assert!(capped[..capped.len() - 1].iter().all(|f| f.active_set.len() <= cap));
    }

    #[test]
    fn stratified_folds_partition_and_balance() {
        let status: Vec<u8> = (0..40).map(|i| u8::from(i % 4 != 0)).collect();
        let folds = stratified_folds(&status, 5, 7);
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        for fold in &folds {
            let events = fold.iter().filter(|&&i| status[i] == 1).count();
            assert_eq!(events, 6);
            assert_eq!(fold.len(), 8);
        }
    }

    #[test]
    fn cv_picks_an_interior_level_and_larger_on_ties() {
        let (design, data, _, _) = toy_dataset(43, 120, 2, 3);
        let config = SolverConfig::default();
        let weights = km_weights(data.status()).unwrap();
        let lmax = lambda_max(&design, &data, &weights, LossKind::Lpre, &config).unwrap();
        let grid = lambda_grid(lmax, 12, 0.01);
        let proto = PenaltySpec::mcp(1.0, 6.0).unwrap();
        let cv = cross_validate(&design, &data, LossKind::Lpre, &proto, 5, &grid, &config, None, 9)
            .unwrap();
        assert_eq!(cv.curve.len(), grid.len());
        assert_eq!(cv.fold_curves.len(), 5);
        assert_eq!(cv.lambda_opt, grid[cv.opt_index]);
        // The optimum beats the all-zero end of the curve.
        assert!(cv.curve[cv.opt_index] < cv.curve[0]);
        // Tie resolution: feed a constant curve through the picker.
        let tied = CvResult {
            lambda_opt: 0.0,
            opt_index: 0,
            curve: vec![1.0; 4],
            fold_curves: vec![],
            folds: vec![],
        };
        let mut opt = 0;
        for (t, &v) in tied.curve.iter().enumerate() {
            if v < tied.curve[opt] {
                opt = t;
            }
        }
        assert_eq!(opt, 0);
    }

    #[test]
    fn cv_is_deterministic_in_the_seed() {
        let (design, data, _, _) = toy_dataset(44, 80, 2, 2);
        let config = SolverConfig::default();
        let weights = km_weights(data.status()).unwrap();
        let lmax = lambda_max(&design, &data, &weights, LossKind::Ls, &config).unwrap();
        let grid = lambda_grid(lmax, 8, 0.05);
        let proto = PenaltySpec::mcp(1.0, 6.0).unwrap();
        let a = cross_validate(&design, &data, LossKind::Ls, &proto, 4, &grid, &config, None, 5).unwrap();
        let b = cross_validate(&design, &data, LossKind::Ls, &proto, 4, &grid, &config, None, 5).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.folds, b.folds);
        let c = cross_validate(&design, &data, LossKind::Ls, &proto, 4, &grid, &config, None, 6).unwrap();
        assert_ne!(a.folds, c.folds);
    }

    #[test]
    fn refit_restores_parents_of_selected_interactions() {
        let (design, data, weights, _) = toy_dataset(45, 100, 2, 3);
        let config = SolverConfig::default();
        let penalty = PenaltySpec::mcp(0.08, 6.0).unwrap();
        let fit = fit_penalized(&design, &data, &weights, LossKind::Lpre, &penalty, &config, None)
            .unwrap();
        let refit = hierarchy_refit(&fit, &design, &data, &weights, LossKind::Lpre, &config)
            .unwrap();
        assert!(!refit.refused);
        // Strong hierarchy: every selected interaction has both parents.
        for &j in &refit.fit.active_set {
            if let Coordinate::Interaction { env, gene } = design.coordinate(j) {
                assert!(refit.fit.theta.get(Coordinate::Env(env)).unwrap() != 0.0);
                assert!(refit.fit.theta.get(Coordinate::Gene(gene)).unwrap() != 0.0);
            }
        }
        // Unpenalized refit from the restriction cannot do worse on the
        // criterion over the closed support.
        let before = crate::loss::weighted_objective(
            LossKind::Lpre, &design, fit.theta.values(), data.times(), &weights,
        );
        let after = crate::loss::weighted_objective(
            LossKind::Lpre, &design, refit.fit.theta.values(), data.times(), &weights,
        );
        assert!(after <= before + 1e-10, "{after} vs {before}");
    }

    #[test]
    fn refit_refuses_when_support_exceeds_events() {
        let (design, data, weights, _) = toy_dataset(46, 14, 2, 3);
        // Keep only a couple of events so any closed support is too big.
        let mut status = data.status().to_vec();
        for s in status.iter_mut() {
            *s = 0;
        }
        status[0] = 1;
        status[1] = 1;
        let data = SurvivalDataset::new(
            data.times().to_vec(),
            status,
            data.env().clone(),
            data.genes().clone(),
        )
        .unwrap();
        let weights2 = km_weights(data.status()).unwrap();
        let _ = weights;
        let penalty = PenaltySpec::mcp(0.01, 6.0).unwrap();
        let config = SolverConfig::default();
        let fit =
            fit_penalized(&design, &data, &weights2, LossKind::Ls, &penalty, &config, None)
                .unwrap();
        if fit.active_set.len() >= 2 {
            let refit =
                hierarchy_refit(&fit, &design, &data, &weights2, LossKind::Ls, &config).unwrap();
            assert!(refit.refused);
            assert_eq!(refit.fit.theta, fit.theta);
        }
    }

    #[test]
    fn stability_with_no_dropping_is_the_support_indicator() {
        let (design, data, weights, _) = toy_dataset(47, 80, 2, 2);
        let config = SolverConfig::default();
        let penalty = PenaltySpec::mcp(0.08, 6.0).unwrap();
        let fit = fit_penalized(&design, &data, &weights, LossKind::Lpre, &penalty, &config, None)
            .unwrap();
        let report = stability_selection(
            &design, &data, LossKind::Lpre, &penalty, 12, 0, &config, 3,
        )
        .unwrap();
        for (j, &f) in report.frequencies.iter().enumerate() {
            let expected = if fit.active_set.contains(&j) { 1.0 } else { 0.0 };
            assert_eq!(f, expected, "coordinate {j}");
        }
        assert_eq!(report.redraws, 0);
    }

    #[test]
    fn stability_is_deterministic_and_bounded() {
        let (design, data, _, _) = toy_dataset(48, 70, 2, 2);
        let config = SolverConfig::default();
        let penalty = PenaltySpec::mcp(0.1, 6.0).unwrap();
        let a = stability_selection(&design, &data, LossKind::Ls, &penalty, 16, 7, &config, 11)
            .unwrap();
        let b = stability_selection(&design, &data, LossKind::Ls, &penalty, 16, 7, &config, 11)
            .unwrap();
        assert_eq!(a.frequencies, b.frequencies);
        assert!(a.frequencies.iter().all(|&f| (0.0..=1.0).contains(&f)));
        let csv = write_stability_csv(&a, design.q(), design.p());
        assert!(csv.starts_with("coordinate_kind,j,k,frequency\n"));
    }

    #[test]
    fn stability_rejects_dropping_everyone() {
        let (design, data, _, _) = toy_dataset(49, 20, 1, 2);
        let config = SolverConfig::default();
        let penalty = PenaltySpec::mcp(0.1, 6.0).unwrap();
        assert!(matches!(
            stability_selection(&design, &data, LossKind::Ls, &penalty, 4, 20, &config, 1),
            Err(SelectError::BadDrop { .. })
        ));
    }

    #[test]
    fn prescreen_keeps_the_informative_gene() {
        let mut s = Stream::new(50);
        let n = 50;
        let mut genes = Array2::zeros((n, 5));
        let times: Vec<f64> = (0..n).map(|_| s.uniform(0.5, 4.0)).collect();
        for i in 0..n {
            genes[[i, 0]] = times[i].ln();
            for k in 1..5 {
                // Narrow noise keeps these genes under the IQR median rule.
                genes[[i, k]] = 0.05 * s.normal();
            }
        }
        let data = SurvivalDataset::new(
            times,
            vec![1; n],
            Array2::zeros((n, 0)),
            genes,
        )
        .unwrap();
        let out = prescreen(&data, 0.1).unwrap();
        assert!(out.kept.contains(&0));
        assert!(out.p_values[0] < 1e-6);
    }

    #[test]
    fn prescreen_excludes_constant_gene_with_warning() {
        let mut s = Stream::new(51);
        let n = 40;
        let mut genes = Array2::zeros((n, 3));
        for i in 0..n {
            genes[[i, 0]] = 1.0;
            genes[[i, 1]] = s.normal();
            genes[[i, 2]] = s.normal();
        }
        let times: Vec<f64> = (0..n).map(|_| s.uniform(0.5, 4.0)).collect();
        let data =
            SurvivalDataset::new(times, vec![1; n], Array2::zeros((n, 0)), genes).unwrap();
        let out = prescreen(&data, 0.5).unwrap();
        assert_eq!(out.excluded_constant, vec![0]);
        assert!(!out.kept.contains(&0));
    }

    #[test]
    fn prescreen_rejects_bad_threshold() {
        let (_, data, _, _) = toy_dataset(52, 20, 1, 2);
        assert!(matches!(prescreen(&data, 0.0), Err(SelectError::BadThreshold(_))));
        assert!(matches!(prescreen(&data, 1.5), Err(SelectError::BadThreshold(_))));
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile(&xs, 0.5), 2.5);
        assert_relative_eq!(quantile(&xs, 0.25), 1.75);
        assert_relative_eq!(interquartile_range(&[4.0, 1.0, 3.0, 2.0]), 1.5);
        assert_relative_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
