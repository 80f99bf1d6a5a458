//! Synthetic data generation and the replicate study harness.
//!
//! Survival times follow a log-linear model: environment columns are
//! standard normal, gene columns are drawn with a chosen correlation and
//! optionally recoded to three levels, and the log time is the linear
//! predictor plus noise. Censoring times are uniform with their upper end
//! calibrated to hit a requested censoring rate. Each random ingredient
//! (coefficients, environments, genes, noise, censoring) runs on its own
//! derived stream, so planting a custom coefficient vector reproduces the
//! same covariates and noise the default truth would have seen.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{
    fmt_f64, km_weights, CoefficientVector, Coordinate, DataError, InteractionDesign,
    SurvivalDataset,
};
use crate::loss::LossKind;
use crate::penalty::PenaltySpec;
use crate::rng::{derive_seed, Stream};
use crate::select::{auc_over_path, cross_validate, selection_metrics, SelectError};
use crate::solver::{lambda_grid, lambda_max, lambda_path, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad scenario: {0}")]
    BadConfig(String),
    #[error("correlation matrix is not positive definite at column {column}")]
    NotPositiveDefinite { column: usize },
    #[error("scenario file line {line}: {message}")]
    BadScenarioFile { line: usize, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Select(#[from] SelectError),
}

/// Correlation structure of the latent gene draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrelationSpec {
    Independent,
    /// First-order autoregressive decay `rho^|j-k|`.
    Ar(f64),
    /// 0.3 between adjacent genes, zero beyond.
    Band1,
    /// 0.6 between adjacent genes, 0.3 at lag two, zero beyond.
    Band2,
}

impl CorrelationSpec {
    pub fn parse(token: &str) -> Result<Self, SimError> {
        match token {
            "independent" => Ok(CorrelationSpec::Independent),
            "band1" => Ok(CorrelationSpec::Band1),
            "band2" => Ok(CorrelationSpec::Band2),
            _ => {
                if let Some(rho) = token.strip_prefix("ar:") {
                    let rho: f64 = rho.parse().map_err(|_| {
                        SimError::BadConfig(format!("cannot parse ar decay from {token:?}"))
                    })?;
                    if !(rho.abs() < 1.0) {
                        return Err(SimError::BadConfig(format!(
                            "ar decay {rho} must satisfy |rho| < 1"
                        )));
                    }
                    Ok(CorrelationSpec::Ar(rho))
                } else {
                    Err(SimError::BadConfig(format!(
                        "unknown correlation {token:?}; expected independent, ar:<rho>, band1, or band2"
                    )))
                }
            }
        }
    }

    pub fn token(&self) -> String {
        match self {
            CorrelationSpec::Independent => "independent".into(),
            CorrelationSpec::Ar(rho) => format!("ar:{}", fmt_f64(*rho)),
            CorrelationSpec::Band1 => "band1".into(),
            CorrelationSpec::Band2 => "band2".into(),
        }
    }
}

pub fn correlation_matrix(spec: CorrelationSpec, p: usize) -> Array2<f64> {
    Array2::from_shape_fn((p, p), |(j, k)| {
        let lag = j.abs_diff(k);
        match spec {
            CorrelationSpec::Independent => f64::from(lag == 0),
            CorrelationSpec::Ar(rho) => rho.powi(lag as i32),
            CorrelationSpec::Band1 => match lag {
                0 => 1.0,
                1 => 0.3,
                _ => 0.0,
            },
            CorrelationSpec::Band2 => match lag {
                0 => 1.0,
                1 => 0.6,
                2 => 0.3,
                _ => 0.0,
            },
        }
    })
}

/// Lower-triangular Cholesky factor, refusing matrices whose pivots fall
/// under 1e-12.
fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>, SimError> {
    let p = a.nrows();
    let mut l = Array2::zeros((p, p));
    for j in 0..p {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if diag <= 1e-12 {
            return Err(SimError::NotPositiveDefinite { column: j });
        }
        let root = diag.sqrt();
        l[[j, j]] = root;
        for i in (j + 1)..p {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / root;
        }
    }
    Ok(l)
}

/// Distribution of the noise added to the log survival time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorLaw {
    /// Standard normal.
    Normal,
    /// Uniform on (-2, 2).
    Uniform,
}

impl ErrorLaw {
    pub fn parse(token: &str) -> Result<Self, SimError> {
        match token {
            "normal" => Ok(ErrorLaw::Normal),
            "uniform" => Ok(ErrorLaw::Uniform),
            _ => Err(SimError::BadConfig(format!(
                "unknown error law {token:?}; expected normal or uniform"
            ))),
        }
    }

    pub fn token(&self) -> &'static str {
        match self {
            ErrorLaw::Normal => "normal",
            ErrorLaw::Uniform => "uniform",
        }
    }
}

/// Everything that defines one synthetic scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub n: usize,
    pub q: usize,
    pub p: usize,
    pub correlation: CorrelationSpec,
    pub env_signals: usize,
    pub gene_signals: usize,
    pub interaction_signals: usize,
    pub coef_low: f64,
    pub coef_high: f64,
    pub error_law: ErrorLaw,
    /// Requested fraction of censored subjects; zero disables censoring.
    pub censor_rate: f64,
    /// Recode genes to three levels before standardizing.
    pub dichotomize: bool,
    /// Let interaction signals land on any gene instead of only signal genes.
    pub interactions_anywhere: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n: 200,
            q: 5,
            p: 50,
            correlation: CorrelationSpec::Independent,
            env_signals: 5,
            gene_signals: 10,
            interaction_signals: 20,
            coef_low: 0.4,
            coef_high: 1.2,
            error_law: ErrorLaw::Normal,
            censor_rate: 0.2,
            dichotomize: false,
            interactions_anywhere: false,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::BadConfig(m));
        if self.n < 2 {
            return bad(format!("n={} is too small", self.n));
        }
        if self.p == 0 {
            return bad("need at least one gene".into());
        }
        if self.env_signals > self.q {
            return bad(format!("{} environment signals with q={}", self.env_signals, self.q));
        }
        if self.gene_signals > self.p {
            return bad(format!("{} gene signals with p={}", self.gene_signals, self.p));
        }
        let candidates = self.interaction_candidates();
        if self.interaction_signals > candidates {
            return bad(format!(
                "{} interaction signals but only {candidates} candidate pairs",
                self.interaction_signals
            ));
        }
        let total = self.env_signals + self.gene_signals + self.interaction_signals;
        let d = self.q + self.p + self.q * self.p;
        if total == 0 || total >= d {
            return bad(format!("{total} signals among {d} coordinates leaves nothing to find"));
        }
        if !(self.coef_low < self.coef_high) {
            return bad(format!(
                "coefficient range [{}, {}] is empty",
                self.coef_low, self.coef_high
            ));
        }
        if !(0.0..1.0).contains(&self.censor_rate) {
            return bad(format!("censor rate {} must lie in [0, 1)", self.censor_rate));
        }
        Ok(())
    }

    fn interaction_candidates(&self) -> usize {
        let genes = if self.interactions_anywhere { self.p } else { self.gene_signals };
        self.q * genes
    }

    /// Parses a flat `key = value` scenario description. Unset keys keep
    /// their defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut config = ScenarioConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| {
                SimError::BadScenarioFile { line, message: format!("expected key = value, got {raw:?}") }
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |message: String| SimError::BadScenarioFile { line, message };
            macro_rules! parse_to {
                ($field:expr) => {
                    $field = value
                        .parse()
                        .map_err(|_| bad(format!("cannot parse {value:?} for {key}")))?
                };
            }
            match key {
                "n" => parse_to!(config.n),
                "q" => parse_to!(config.q),
                "p" => parse_to!(config.p),
                "correlation" => {
                    config.correlation = CorrelationSpec::parse(value)
                        .map_err(|e| bad(e.to_string()))?;
                }
                "env_signals" => parse_to!(config.env_signals),
                "gene_signals" => parse_to!(config.gene_signals),
                "interaction_signals" => parse_to!(config.interaction_signals),
                "coef_low" => parse_to!(config.coef_low),
                "coef_high" => parse_to!(config.coef_high),
                "error_law" => {
                    config.error_law =
                        ErrorLaw::parse(value).map_err(|e| bad(e.to_string()))?;
                }
                "censor_rate" => parse_to!(config.censor_rate),
                "dichotomize" => parse_to!(config.dichotomize),
                "interactions_anywhere" => parse_to!(config.interactions_anywhere),
                "seed" => parse_to!(config.seed),
                _ => return Err(bad(format!("unknown key {key:?}"))),
            }
        }
        config.validate()?;
        Ok(config)
    }
}

/// Draws the true coefficient vector for a scenario. Environment signals
/// occupy the leading environment coordinates, gene signals the leading gene
/// coordinates, and interaction signals are sampled without replacement from
/// the candidate pairs. Magnitudes are uniform on the configured range.
pub fn draw_truth(config: &ScenarioConfig) -> Result<CoefficientVector, SimError> {
    config.validate()?;
    let mut stream = Stream::new(derive_seed(config.seed, 0));
    let mut theta = CoefficientVector::zeros(config.q, config.p);
    for j in 0..config.env_signals {
        theta.set(Coordinate::Env(j), stream.uniform(config.coef_low, config.coef_high))?;
    }
    for k in 0..config.gene_signals {
        theta.set(Coordinate::Gene(k), stream.uniform(config.coef_low, config.coef_high))?;
    }
    let gene_pool = if config.interactions_anywhere { config.p } else { config.gene_signals };
    let mut pairs: Vec<(usize, usize)> =
        (0..config.q).flat_map(|j| (0..gene_pool).map(move |k| (j, k))).collect();
    for i in 0..config.interaction_signals {
        let swap = i + stream.below(pairs.len() - i);
        pairs.swap(i, swap);
    }
    for &(env, gene) in pairs.iter().take(config.interaction_signals) {
        theta.set(
            Coordinate::Interaction { env, gene },
            stream.uniform(config.coef_low, config.coef_high),
        )?;
    }
    Ok(theta)
}

/// Maps a latent standard normal value to the level codes 0, 1, 2 with
/// cut points at -1 and 0.5.
pub fn dichotomize_level(value: f64) -> f64 {
    if value < -1.0 {
        0.0
    } else if value < 0.5 {
        1.0
    } else {
        2.0
    }
}

fn standardize_columns(genes: &mut Array2<f64>) {
    let n = genes.nrows() as f64;
    for mut col in genes.columns_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd < 1e-12 {
            col.fill(0.0);
        } else {
            col.mapv_inplace(|v| (v - mean) / sd);
        }
    }
}

/// Finds the upper end of a uniform censoring distribution so the expected
/// fraction of censored subjects matches `target`. With `C ~ U(0, c)` the
/// expected rate is the mean of `min(t_i / c, 1)`, which falls continuously
/// from one toward zero as `c` grows, so bisection applies. A zero target
/// returns a sentinel ten times the largest survival time.
pub fn calibrate_censoring(times: &[f64], target: f64) -> Result<f64, SimError> {
    if times.is_empty() {
        return Err(SimError::BadConfig("no survival times to calibrate against".into()));
    }
    if !(0.0..1.0).contains(&target) {
        return Err(SimError::BadConfig(format!("censor target {target} must lie in [0, 1)")));
    }
    let t_max = times.iter().cloned().fold(f64::MIN, f64::max);
    if target == 0.0 {
        log::warn!("censor target 0 cannot be hit exactly by a finite upper end; using 10 * max(t)");
        return Ok(10.0 * t_max);
    }
    let rate = |c: f64| {
        times.iter().map(|&t| (t / c).min(1.0)).sum::<f64>() / times.len() as f64
    };
    let mut lo = t_max * 1e-12;
    let mut hi = t_max;
    while rate(hi) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Generates one dataset under the default truth for the scenario.
pub fn generate_dataset(
    config: &ScenarioConfig,
) -> Result<(SurvivalDataset, CoefficientVector), SimError> {
    let truth = draw_truth(config)?;
    let data = generate_with_theta(config, &truth)?;
    Ok((data, truth))
}

/// Generates one dataset with a caller-supplied truth. Covariates, noise,
/// and censoring draws are identical to what [`generate_dataset`] would
/// produce for the same scenario, because every ingredient runs on its own
/// derived stream.
pub fn generate_with_theta(
    config: &ScenarioConfig,
    theta: &CoefficientVector,
) -> Result<SurvivalDataset, SimError> {
    config.validate()?;
    if theta.d() != config.q + config.p + config.q * config.p {
        return Err(SimError::BadConfig(format!(
            "coefficient vector has {} coordinates, scenario needs {}",
            theta.d(),
            config.q + config.p + config.q * config.p
        )));
    }
    let (n, q, p) = (config.n, config.q, config.p);

    let mut env_stream = Stream::new(derive_seed(config.seed, 1));
    let env = Array2::from_shape_fn((n, q), |_| env_stream.normal());

    let mut gene_stream = Stream::new(derive_seed(config.seed, 2));
    let factor = cholesky(&correlation_matrix(config.correlation, p))?;
    let mut genes = Array2::zeros((n, p));
    let mut latent = Array1::zeros(p);
    for i in 0..n {
        latent.mapv_inplace(|_| gene_stream.normal());
        for j in 0..p {
            let mut v = 0.0;
            for k in 0..=j {
                v += factor[[j, k]] * latent[k];
            }
            genes[[i, j]] = v;
        }
    }
    if config.dichotomize {
        genes.mapv_inplace(dichotomize_level);
        standardize_columns(&mut genes);
    }

    let mut error_stream = Stream::new(derive_seed(config.seed, 3));
    let support = theta.support();
    let times: Vec<f64> = (0..n)
        .map(|i| {
            let mut eta = 0.0;
            for &idx in &support {
                let u = match theta.coordinate(idx) {
                    Coordinate::Env(j) => env[[i, j]],
                    Coordinate::Gene(k) => genes[[i, k]],
                    Coordinate::Interaction { env: j, gene: k } => env[[i, j]] * genes[[i, k]],
                };
                eta += u * theta.values()[idx];
            }
            let noise = match config.error_law {
                ErrorLaw::Normal => error_stream.normal(),
                ErrorLaw::Uniform => error_stream.uniform(-2.0, 2.0),
            };
            (eta + noise).exp()
        })
        .collect();

    let (observed, status) = if config.censor_rate <= 0.0 {
        (times, vec![1u8; n])
    } else {
        let c_max = calibrate_censoring(&times, config.censor_rate)?;
        let mut censor_stream = Stream::new(derive_seed(config.seed, 4));
        let mut observed = Vec::with_capacity(n);
        let mut status = Vec::with_capacity(n);
        for &t in &times {
            let c = censor_stream.uniform(0.0, c_max);
            observed.push(t.min(c));
            status.push(u8::from(t <= c));
        }
        (observed, status)
    };

    Ok(SurvivalDataset::new(observed, status, env, genes)?.sort_by_time())
}

/// How each replicate is fitted and scored.
#[derive(Debug, Clone)]
pub struct EvalProtocol {
    pub grid_size: usize,
    pub grid_ratio: f64,
    pub cv_folds: usize,
    pub gamma: f64,
    pub solver: SolverConfig,
    /// Path support cap; `None` caps at three quarters of the sample size.
    pub support_cap: Option<usize>,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            grid_size: 60,
            grid_ratio: 1e-4,
            cv_folds: 5,
            gamma: PenaltySpec::DEFAULT_GAMMA,
            solver: SolverConfig::default(),
            support_cap: None,
        }
    }
}

/// Scores for one method on one replicate.
#[derive(Debug, Clone, Copy)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub auc: f64,
    pub se: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub lambda_opt: f64,
    /// Fraction of subjects censored in the generated data.
    pub censor_rate: f64,
}

/// Aggregate of one method across the completed replicates.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: LossKind,
    pub completed: usize,
    pub failed: usize,
    pub mean_auc: f64,
    pub sd_auc: f64,
    pub mean_se: f64,
    pub sd_se: f64,
    pub mean_tpr: f64,
    pub mean_fpr: f64,
}

/// Replicate study output: `outcomes[m][r]` holds method `m` on replicate
/// `r`, with failures recorded as missing rather than aborting the study.
#[derive(Debug, Clone)]
pub struct SimReport {
    pub methods: Vec<LossKind>,
    pub outcomes: Vec<Vec<Option<ReplicateOutcome>>>,
    pub summaries: Vec<MethodSummary>,
}

/// Runs `replicates` independent datasets of a scenario, fitting every
/// method on each. Replicate `r` uses scenario seed `base + r`, runs a full
/// level path for the selection curve, and picks its reported estimate by
/// cross-validation. Replicates run in parallel.
pub fn run_replicates(
    scenario: &ScenarioConfig,
    methods: &[LossKind],
    protocol: &EvalProtocol,
    replicates: usize,
) -> Result<SimReport, SimError> {
    scenario.validate()?;
    if methods.is_empty() || replicates == 0 {
        return Err(SimError::BadConfig("need at least one method and one replicate".into()));
    }
    let penalty_proto = PenaltySpec::mcp(1.0, protocol.gamma)
        .map_err(|e| SimError::BadConfig(e.to_string()))?;

    let per_replicate: Vec<Vec<Option<ReplicateOutcome>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let rep_config = ScenarioConfig { seed: scenario.seed + r as u64, ..scenario.clone() };
            let generated = match generate_dataset(&rep_config) {
                Ok(pair) => pair,
                Err(e) => {
                    log::warn!("replicate {r}: data generation failed: {e}");
                    return vec![None; methods.len()];
                }
            };
            let (data, truth) = generated;
            let censor_rate =
                1.0 - data.n_events() as f64 / data.n() as f64;
            let design = match InteractionDesign::from_dataset(&data) {
                Ok(d) => d,
                Err(e) => {
                    log::warn!("replicate {r}: design construction failed: {e}");
                    return vec![None; methods.len()];
                }
            };
            let weights = match km_weights(data.status()) {
                Ok(w) => w,
                Err(e) => {
                    log::warn!("replicate {r}: weighting failed: {e}");
                    return vec![None; methods.len()];
                }
            };
            methods
                .iter()
                .map(|&kind| {
                    evaluate_method(
                        &design, &data, &weights, &truth, kind, &penalty_proto, protocol,
                        rep_config.seed,
                    )
                    .map(|mut o| {
                        o.replicate = r;
                        o.censor_rate = censor_rate;
                        o
                    })
                    .map_err(|e| log::warn!("replicate {r}, method {}: {e}", kind.name()))
                    .ok()
                })
                .collect()
        })
        .collect();

    let mut outcomes = vec![Vec::with_capacity(replicates); methods.len()];
    for row in per_replicate {
        for (m, outcome) in row.into_iter().enumerate() {
            outcomes[m].push(outcome);
        }
    }
    let summaries = methods
        .iter()
        .zip(&outcomes)
        .map(|(&method, runs)| summarize(method, runs))
        .collect();
    Ok(SimReport { methods: methods.to_vec(), outcomes, summaries })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_method(
    design: &InteractionDesign,
    data: &SurvivalDataset,
    weights: &[f64],
    truth: &CoefficientVector,
    kind: LossKind,
    penalty_proto: &PenaltySpec,
    protocol: &EvalProtocol,
    rep_seed: u64,
) -> Result<ReplicateOutcome, SimError> {
    let cap = protocol.support_cap.unwrap_or(3 * data.n() / 4);
    let lmax = lambda_max(design, data, weights, kind, &protocol.solver)?;
    let grid = lambda_grid(lmax, protocol.grid_size, protocol.grid_ratio);
    let path = lambda_path(
        design, data, weights, kind, penalty_proto, &grid, &protocol.solver, Some(cap),
    )?;
    let auc = auc_over_path(&path, truth)?;
    // Fold training sets are smaller than the full sample, so the cap that
    // keeps the full-data path out of the saturated regime is rescaled to the
    // training size before handing it to the folds.
    let train_n = data.n() - data.n() / protocol.cv_folds;
    let cv_cap = cap.min(3 * train_n / 4);
    let cv = cross_validate(
        design,
        data,
        kind,
        penalty_proto,
        protocol.cv_folds,
        &grid,
        &protocol.solver,
        Some(cv_cap),
        derive_seed(rep_seed, 0xCF),
    )?;
    let chosen = &path[cv.opt_index.min(path.len() - 1)];
    let metrics = selection_metrics(&chosen.theta, truth)?;
    Ok(ReplicateOutcome {
        replicate: 0,
        auc,
        se: metrics.se,
        tpr: metrics.tpr.expect("scenario truth has nonzero coordinates"),
        fpr: metrics.fpr.expect("scenario truth has zero coordinates"),
        lambda_opt: chosen.lambda,
        censor_rate: 0.0,
    })
}

fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = kahan_sum(values.iter().copied()) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = kahan_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / (n - 1.0)).sqrt())
}

fn summarize(method: LossKind, runs: &[Option<ReplicateOutcome>]) -> MethodSummary {
    let done: Vec<&ReplicateOutcome> = runs.iter().flatten().collect();
    let failed = runs.len() - done.len();
    let pull = |f: fn(&ReplicateOutcome) -> f64| -> Vec<f64> { done.iter().map(|o| f(o)).collect() };
    let (mean_auc, sd_auc) = mean_sd(&pull(|o| o.auc));
    let (mean_se, sd_se) = mean_sd(&pull(|o| o.se));
    let (mean_tpr, _) = mean_sd(&pull(|o| o.tpr));
    let (mean_fpr, _) = mean_sd(&pull(|o| o.fpr));
    MethodSummary {
        method,
        completed: done.len(),
        failed,
        mean_auc,
        sd_auc,
        mean_se,
        sd_se,
        mean_tpr,
        mean_fpr,
    }
}

/// One row per method with aggregate columns.
pub fn write_summary_csv(label: &str, summaries: &[MethodSummary]) -> String {
    let mut out = String::from(
        "scenario,method,completed,failed,mean_auc,sd_auc,mean_se,sd_se,mean_tpr,mean_fpr\n",
    );
    for s in summaries {
        out.push_str(&format!(
            "{label},{},{},{},{},{},{},{},{},{}\n",
            s.method.name(),
            s.completed,
            s.failed,
            fmt_f64(s.mean_auc),
            fmt_f64(s.sd_auc),
            fmt_f64(s.mean_se),
            fmt_f64(s.sd_se),
            fmt_f64(s.mean_tpr),
            fmt_f64(s.mean_fpr),
        ));
    }
    out
}

/// One row per completed method-replicate pair.
pub fn write_records_csv(label: &str, report: &SimReport) -> String {
    let mut out =
        String::from("scenario,method,replicate,auc,se,tpr,fpr,lambda_opt,censor_rate\n");
    for (method, runs) in report.methods.iter().zip(&report.outcomes) {
        for outcome in runs.iter().flatten() {
            out.push_str(&format!(
                "{label},{},{},{},{},{},{},{},{}\n",
                method.name(),
                outcome.replicate,
                fmt_f64(outcome.auc),
                fmt_f64(outcome.se),
                fmt_f64(outcome.tpr),
                fmt_f64(outcome.fpr),
                fmt_f64(outcome.lambda_opt),
                fmt_f64(outcome.censor_rate),
            ));
        }
    }
    out
}
