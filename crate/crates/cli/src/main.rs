//! Command line front end for penalized relative-error survival fits.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use relerr_core::data::{
    km_weights, read_dataset_csv, write_coefficients_csv, write_dataset_csv, CoefficientVector,
    Coordinate, InteractionDesign, SurvivalDataset,
};
use relerr_core::loss::LossKind;
use relerr_core::penalty::PenaltySpec;
use relerr_core::select::{
    cross_validate, hierarchy_refit, prescreen, stability_selection, write_stability_csv,
};
use relerr_core::sim::{
    generate_dataset, run_replicates, write_records_csv, write_summary_csv, EvalProtocol,
    ScenarioConfig,
};
use relerr_core::solver::{
    fit_penalized, lambda_grid, lambda_max, lambda_path, FitResult, SolverConfig,
};

#[derive(Parser)]
#[command(
    name = "relerr",
    version,
    about = "Penalized relative-error estimation for right-censored survival data \
             with gene-environment interaction designs"
)]
struct Cli {
    /// Worker threads. Falls back to RELERR_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicate study described by a scenario file.
    Simulate(SimulateArgs),
    /// Fit one dataset read from CSV.
    Fit(FitArgs),
    /// Selection frequencies under random subject dropping.
    Stability(StabilityArgs),
    /// Time representative path fits.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Lare,
    Lpre,
    Lad,
    Ls,
}

impl From<Method> for LossKind {
    fn from(m: Method) -> LossKind {
        match m {
            Method::Lare => LossKind::Lare,
            Method::Lpre => LossKind::Lpre,
            Method::Lad => LossKind::Lad,
            Method::Ls => LossKind::Ls,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file with key = value lines.
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated method list.
    #[arg(long, default_value = "lare,lpre,lad,ls")]
    methods: String,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    /// Level grid as size,ratio.
    #[arg(long, default_value = "60,0.0001")]
    grid: String,
    /// Cross-validation folds for picking the reported level.
    #[arg(long, default_value_t = 5)]
    cv: usize,
    /// Concavity parameter of the penalty.
    #[arg(long, default_value_t = PenaltySpec::DEFAULT_GAMMA)]
    gamma: f64,
    /// Solver convergence threshold.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Iteration ceiling per fit.
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Largest active set fitted before a path stops descending.
    #[arg(long)]
    cap: Option<usize>,
    /// Overrides the seed in the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV with header time,status,x1..xq,z1..zp.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    /// Fit at this penalty level.
    #[arg(long, conflicts_with = "cv")]
    lambda: Option<f64>,
    /// Pick the level by k-fold cross-validation.
    #[arg(long)]
    cv: Option<usize>,
    /// Level grid as size,ratio (used with --cv).
    #[arg(long, default_value = "60,0.0001")]
    grid: String,
    #[arg(long, default_value_t = PenaltySpec::DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Fold shuffling seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Refit without penalty on the hierarchy-closed support.
    #[arg(long)]
    hierarchy_refit: bool,
    /// Keep only genes passing the marginal screen at this p-value.
    #[arg(long)]
    prescreen: Option<f64>,
    /// Center and scale covariate columns before fitting. Runs after the
    /// prescreen, which wants raw dispersions.
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StabilityArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    /// Penalty level to refit at.
    #[arg(long, conflicts_with = "cv")]
    lambda: Option<f64>,
    /// Pick the level by cross-validation first.
    #[arg(long)]
    cv: Option<usize>,
    #[arg(long, default_value = "60,0.0001")]
    grid: String,
    #[arg(long, default_value_t = 200)]
    resamples: usize,
    /// Subjects removed per resample.
    #[arg(long, default_value_t = 10)]
    drop: usize,
    #[arg(long, default_value_t = PenaltySpec::DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Use the large benchmark shape instead of the desk-sized one.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("RELERR_THREADS").ok().and_then(|v| v.parse().ok())
    });
    let run = move || match cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Fit(args) => run_fit(args),
        Command::Stability(args) => run_stability(args),
        Command::Bench(args) => run_bench(args),
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building the thread pool")?
            .install(run),
        None => run(),
    }
}

fn parse_methods(list: &str) -> Result<Vec<LossKind>> {
    let mut methods = Vec::new();
    for token in list.split(',') {
        let token = token.trim();
        let kind = LossKind::parse(token)
            .with_context(|| format!("unknown method {token:?}; expected lare, lpre, lad, or ls"))?;
        if !methods.contains(&kind) {
            methods.push(kind);
        }
    }
    if methods.is_empty() {
        bail!("method list is empty");
    }
    Ok(methods)
}

fn parse_grid(spec: &str) -> Result<(usize, f64)> {
    let (size, ratio) = spec
        .split_once(',')
        .with_context(|| format!("grid {spec:?} should look like 100,0.01"))?;
    let size: usize = size.trim().parse().context("grid size")?;
    let ratio: f64 = ratio.trim().parse().context("grid ratio")?;
    if size == 0 || !(ratio > 0.0 && ratio <= 1.0) {
        bail!("grid needs a positive size and a ratio in (0, 1]");
    }
    Ok((size, ratio))
}

fn write_manifest(dir: &Path, entries: &[(&str, String)]) -> Result<()> {
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH)?.as_secs();
    let mut out = format!("timestamp = {stamp}\nversion = {}\n", env!("CARGO_PKG_VERSION"));
    for (key, value) in entries {
        out.push_str(&format!("{key} = {value}\n"));
    }
    fs::write(dir.join("manifest.txt"), out).context("writing manifest.txt")?;
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let text = fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading {}", args.scenario.display()))?;
    let mut scenario = ScenarioConfig::parse(&text)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let methods = parse_methods(&args.methods)?;
    let (grid_size, grid_ratio) = parse_grid(&args.grid)?;
    if args.cv < 2 {
        bail!("cross-validation needs at least two folds");
    }
    let protocol = EvalProtocol {
        grid_size,
        grid_ratio,
        cv_folds: args.cv,
        gamma: args.gamma,
        solver: SolverConfig {
            tol: args.tol,
            max_mm_iters: args.max_iters,
            ..SolverConfig::default()
        },
        support_cap: args.cap,
    };
    fs::create_dir_all(&args.out)?;

    let started = Instant::now();
    let report = run_replicates(&scenario, &methods, &protocol, args.replicates)?;
    let elapsed = started.elapsed().as_secs_f64();

    let label = scenario.correlation.token();
    fs::write(args.out.join("summary.csv"), write_summary_csv(&label, &report.summaries))?;
    fs::write(args.out.join("records.csv"), write_records_csv(&label, &report))?;

    // The first replicate's data double as a reproducibility anchor.
    let (sample, truth) = generate_dataset(&scenario)?;
    fs::write(args.out.join("data.csv"), write_dataset_csv(&sample))?;
    fs::write(args.out.join("truth.csv"), write_coefficients_csv(&truth, "truth"))?;

    write_manifest(
        &args.out,
        &[
            ("command", "simulate".into()),
            ("scenario", args.scenario.display().to_string()),
            ("methods", methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")),
            ("replicates", args.replicates.to_string()),
            ("grid", format!("{grid_size},{grid_ratio}")),
            ("cv_folds", args.cv.to_string()),
            ("gamma", args.gamma.to_string()),
            ("tol", args.tol.to_string()),
            ("seed", scenario.seed.to_string()),
            ("correlation", label.clone()),
            ("n", scenario.n.to_string()),
            ("q", scenario.q.to_string()),
            ("p", scenario.p.to_string()),
            ("seconds", format!("{elapsed:.3}")),
        ],
    )?;

    for summary in &report.summaries {
        println!(
            "{label} {}: auc {:.3} (sd {:.3}), se {:.3}, tpr {:.3}, fpr {:.3}, {}/{} completed",
            summary.method.name(),
            summary.mean_auc,
            summary.sd_auc,
            summary.mean_se,
            summary.mean_tpr,
            summary.mean_fpr,
            summary.completed,
            summary.completed + summary.failed,
        );
    }
    Ok(())
}

struct ScaleRow {
    kind: &'static str,
    index: usize,
    mean: f64,
    sd: f64,
}

fn standardize_columns(matrix: &mut Array2<f64>, kind: &'static str, rows: &mut Vec<ScaleRow>) {
    let n = matrix.nrows() as f64;
    for (index, mut col) in matrix.columns_mut().into_iter().enumerate() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd < 1e-12 {
            col.fill(0.0);
            rows.push(ScaleRow { kind, index: index + 1, mean, sd: 0.0 });
        } else {
            col.mapv_inplace(|v| (v - mean) / sd);
            rows.push(ScaleRow { kind, index: index + 1, mean, sd });
        }
    }
}

fn standardize_dataset(data: &SurvivalDataset) -> Result<(SurvivalDataset, String)> {
    let mut env = data.env().clone();
    let mut genes = data.genes().clone();
    let mut rows = Vec::new();
    standardize_columns(&mut env, "env", &mut rows);
    standardize_columns(&mut genes, "gene", &mut rows);
    let rescaled =
        SurvivalDataset::new(data.times().to_vec(), data.status().to_vec(), env, genes)?;
    let mut csv = String::from("kind,index,mean,sd\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.kind, r.index, r.mean, r.sd));
    }
    Ok((rescaled, csv))
}

fn keep_genes(data: &SurvivalDataset, kept: &[usize]) -> Result<SurvivalDataset> {
    let genes = data.genes().select(ndarray::Axis(1), kept);
    Ok(SurvivalDataset::new(
        data.times().to_vec(),
        data.status().to_vec(),
        data.env().clone(),
        genes,
    )?)
}

/// Maps a fit on prescreened gene columns back to the original gene indexing.
fn expand_coefficients(
    fitted: &CoefficientVector,
    kept: &[usize],
    q: usize,
    full_p: usize,
) -> CoefficientVector {
    let mut full = CoefficientVector::zeros(q, full_p);
    for idx in fitted.support() {
        let value = fitted.values()[idx];
        let coord = match fitted.coordinate(idx) {
            Coordinate::Env(j) => Coordinate::Env(j),
            Coordinate::Gene(k) => Coordinate::Gene(kept[k]),
            Coordinate::Interaction { env, gene } => {
                Coordinate::Interaction { env, gene: kept[gene] }
            }
        };
        full.set(coord, value).expect("expanded coordinate exists");
    }
    full
}

fn run_fit(args: FitArgs) -> Result<()> {
    let raw = read_dataset_csv(&args.data)
        .with_context(|| format!("reading {}", args.data.display()))?;
    let full_p = raw.p();
    let q = raw.q();
    let mut manifest: Vec<(&str, String)> = vec![
        ("command", "fit".into()),
        ("data", args.data.display().to_string()),
        ("method", LossKind::from(args.method).name().into()),
        ("n", raw.n().to_string()),
        ("q", q.to_string()),
        ("p", full_p.to_string()),
        ("gamma", args.gamma.to_string()),
        ("tol", args.tol.to_string()),
        ("standardize", args.standardize.to_string()),
    ];
    fs::create_dir_all(&args.out)?;

    let mut data = raw;
    let mut kept: Vec<usize> = (0..full_p).collect();
    if let Some(threshold) = args.prescreen {
        let screen = prescreen(&data, threshold)?;
        let mut csv = String::from("gene,p_value,iqr,kept\n");
        for k in 0..full_p {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                k + 1,
                screen.p_values[k],
                screen.iqrs[k],
                screen.kept.contains(&k)
            ));
        }
        fs::write(args.out.join("prescreen.csv"), csv)?;
        manifest.push(("prescreen_threshold", threshold.to_string()));
        manifest.push(("genes_kept", screen.kept.len().to_string()));
        if screen.kept.is_empty() {
            bail!("the prescreen kept no genes; nothing to fit");
        }
        kept = screen.kept.clone();
        data = keep_genes(&data, &kept)?;
    }
    if args.standardize {
        let (rescaled, scaling) = standardize_dataset(&data)?;
        fs::write(args.out.join("scaling.csv"), scaling)?;
        data = rescaled;
    }
    let data = data.sort_by_time();
    let design = InteractionDesign::from_dataset(&data)?;
    let weights = km_weights(data.status())?;
    let kind: LossKind = args.method.into();
    let config = SolverConfig { tol: args.tol, ..SolverConfig::default() };

    let fit: FitResult = if let Some(lambda) = args.lambda {
        if !(lambda >= 0.0) {
            bail!("penalty level {lambda} must be nonnegative");
        }
        let penalty = PenaltySpec::mcp(lambda, args.gamma)?;
        manifest.push(("lambda", lambda.to_string()));
        fit_penalized(&design, &data, &weights, kind, &penalty, &config, None)?
    } else if let Some(k) = args.cv {
        if k < 2 {
            bail!("cross-validation needs at least two folds");
        }
        let (grid_size, grid_ratio) = parse_grid(&args.grid)?;
        let cap = Some(3 * data.n() / 4);
        let cv_cap = Some(3 * (data.n() - data.n() / k) / 4);
        let lmax = lambda_max(&design, &data, &weights, kind, &config)?;
        let grid = lambda_grid(lmax, grid_size, grid_ratio);
        let proto = PenaltySpec::mcp(1.0, args.gamma)?;
        let cv =
            cross_validate(&design, &data, kind, &proto, k, &grid, &config, cv_cap, args.seed)?;
        let mut curve = String::from("lambda,score\n");
        for (lambda, score) in grid.iter().zip(&cv.curve) {
            curve.push_str(&format!("{lambda},{score}\n"));
        }
        fs::write(args.out.join("cv.csv"), curve)?;
        manifest.push(("cv_folds", k.to_string()));
        manifest.push(("grid", format!("{grid_size},{grid_ratio}")));
        manifest.push(("seed", args.seed.to_string()));
        let path = lambda_path(&design, &data, &weights, kind, &proto, &grid, &config, cap)?;
        let idx = cv.opt_index.min(path.len() - 1);
        manifest.push(("lambda", path[idx].lambda.to_string()));
        path.into_iter().nth(idx).expect("index is in the fitted prefix")
    } else {
        bail!("pass either --lambda or --cv");
    };

    manifest.push(("converged", fit.converged.to_string()));
    manifest.push(("iterations", fit.mm_iterations.to_string()));
    manifest.push(("active", fit.active_set.len().to_string()));
    manifest.push(("objective", fit.final_objective().to_string()));

    let expanded = expand_coefficients(&fit.theta, &kept, q, full_p);
    fs::write(args.out.join("coefficients.csv"), write_coefficients_csv(&expanded, "estimate"))?;

    if args.hierarchy_refit {
        let refit = hierarchy_refit(&fit, &design, &data, &weights, kind, &config)?;
        let refit_expanded = expand_coefficients(&refit.fit.theta, &kept, q, full_p);
        fs::write(args.out.join("refit.csv"), write_coefficients_csv(&refit_expanded, "estimate"))?;
        manifest.push(("refit_refused", refit.refused.to_string()));
        manifest.push(("refit_active", refit.fit.active_set.len().to_string()));
    }

    write_manifest(&args.out, &manifest)?;
    println!(
        "fit {} coordinates, {} active, objective {:.6}",
        design.d(),
        fit.active_set.len(),
        fit.final_objective()
    );
    Ok(())
}

fn run_stability(args: StabilityArgs) -> Result<()> {
    let data = read_dataset_csv(&args.data)
        .with_context(|| format!("reading {}", args.data.display()))?
        .sort_by_time();
    let design = InteractionDesign::from_dataset(&data)?;
    let weights = km_weights(data.status())?;
    let kind: LossKind = args.method.into();
    let config = SolverConfig { tol: args.tol, ..SolverConfig::default() };
    fs::create_dir_all(&args.out)?;

    let lambda = if let Some(lambda) = args.lambda {
        lambda
    } else if let Some(k) = args.cv {
        if k < 2 {
            bail!("cross-validation needs at least two folds");
        }
        let (grid_size, grid_ratio) = parse_grid(&args.grid)?;
        let cap = Some(3 * (data.n() - data.n() / k) / 4);
        let lmax = lambda_max(&design, &data, &weights, kind, &config)?;
        let grid = lambda_grid(lmax, grid_size, grid_ratio);
        let proto = PenaltySpec::mcp(1.0, args.gamma)?;
        cross_validate(&design, &data, kind, &proto, k, &grid, &config, cap, args.seed)?
            .lambda_opt
    } else {
        bail!("pass either --lambda or --cv");
    };

    let penalty = PenaltySpec::mcp(lambda, args.gamma)?;
    let report = stability_selection(
        &design,
        &data,
        kind,
        &penalty,
        args.resamples,
        args.drop,
        &config,
        args.seed,
    )?;
    fs::write(args.out.join("stability.csv"), write_stability_csv(&report, design.q(), design.p()))?;
    write_manifest(
        &args.out,
        &[
            ("command", "stability".into()),
            ("data", args.data.display().to_string()),
            ("method", kind.name().into()),
            ("lambda", lambda.to_string()),
            ("resamples", args.resamples.to_string()),
            ("drop", args.drop.to_string()),
            ("redraws", report.redraws.to_string()),
            ("seed", args.seed.to_string()),
        ],
    )?;
    let stable = report.frequencies.iter().filter(|&&f| f >= 0.8).count();
    println!(
        "{} resamples dropping {}: {} coordinates at frequency 0.8 or higher",
        args.resamples, args.drop, stable
    );
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let (n, q, p) = if args.full { (500, 5, 1000) } else { (200, 5, 50) };
    let scenario = ScenarioConfig {
        n,
        q,
        p,
        gene_signals: 4.min(p),
        interaction_signals: 8.min(q * 4.min(p)),
        seed: args.seed,
        ..ScenarioConfig::default()
    };
    let (data, _) = generate_dataset(&scenario)?;
    let design = InteractionDesign::from_dataset(&data)?;
    let weights = km_weights(data.status())?;
    let config = SolverConfig::default();
    fs::create_dir_all(&args.out)?;

    let mut csv = String::from("method,n,q,p,d,grid,seconds\n");
    println!("shape: n = {n}, q = {q}, p = {p}, d = {}", design.d());
    for kind in LossKind::ALL {
        let proto = PenaltySpec::mcp(1.0, PenaltySpec::DEFAULT_GAMMA)?;
        let started = Instant::now();
        let lmax = lambda_max(&design, &data, &weights, kind, &config)?;
        let grid = lambda_grid(lmax, 60, 1e-4);
        let cap = Some(3 * data.n() / 4);
        let path = lambda_path(&design, &data, &weights, kind, &proto, &grid, &config, cap)?;
        let seconds = started.elapsed().as_secs_f64();
        let densest = path.iter().map(|f| f.active_set.len()).max().unwrap_or(0);
        println!("{:>4}: {seconds:8.3}s over {} levels, densest fit {densest}", kind.name(), grid.len());
        csv.push_str(&format!("{},{n},{q},{p},{},{},{seconds}\n", kind.name(), design.d(), grid.len()));
    }
    fs::write(args.out.join("bench.csv"), csv)?;
    write_manifest(
        &args.out,
        &[
            ("command", "bench".into()),
            ("full", args.full.to_string()),
            ("seed", args.seed.to_string()),
            ("n", n.to_string()),
            ("q", q.to_string()),
            ("p", p.to_string()),
        ],
    )?;
    Ok(())
}
