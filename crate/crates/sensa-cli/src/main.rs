//! Command-line front end for the sensitivity-analysis library.
//!
//! Every subcommand reads a CSV plus a JSON role schema (or, for
//! `simulate`, a structural configuration) and prints one JSON document to
//! stdout with run metadata embedded; tabular outputs offer `--format csv`
//! as a plain table instead. Domain failures exit with code 1 and a
//! single-line JSON error record on stderr; usage errors exit with code 2
//! through the argument parser.

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use sensa::bias::{
    bias_soo_from_extended, iv_bias_terms, prox_bias_terms, IvBiasDecomposition, IvBiasInputs,
    ProxBiasDecomposition, ProxBiasInputs, SooParams,
};
use sensa::contour::{compute_grid, default_levels, render_svg, write_csv, GridSpec};
use sensa::estimators::{estimate_all, taus_from_moments, Estimate, Estimates, TauSet};
use sensa::ingest::{self, Dataset, RoleSchema};
use sensa::sensitivity::{
    benchmark_covariates, bootstrap, rho_star, trv, BenchmarkRow, BootstrapOptions,
    BootstrapSummary, TrvOptions, TrvResult,
};
use sensa::sigma::{self, Rho};
use sensa::sim::{self, Config, Preset};
use sensa::{Error, Result, Strategy};
use serde::Serialize;
use std::fmt;
use std::fs;
use std::num::NonZeroUsize;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "sensa",
    version,
    about = "Causal effect estimation and sensitivity analysis on proxy-based designs"
)]
struct Cli {
    /// Worker threads for the search and surface computations; defaults to
    /// the SENSA_THREADS environment variable, then to the available
    /// parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Point estimates and standard errors for all three strategies.
    Estimate(EstimateArgs),
    /// Labeled bias terms at user-supplied confounding parameters.
    ///
    /// `bias` holds the exact implied bias of each strategy at the supplied
    /// parameters. The adjusted and instrumental decompositions reproduce
    /// their entry identically; the proximal decomposition maintains the
    /// design's assumption that the outcome proxy has no direct treatment
    /// effect, so its total matches `bias.prox` only when the implied joint
    /// distribution satisfies that restriction.
    BiasDecompose(BiasDecomposeArgs),
    /// Targeted robustness value for one strategy and bias target.
    Trv(TrvArgs),
    /// Confounding benchmarks from omit-one-covariate comparisons.
    Benchmark(BenchmarkArgs),
    /// Fractional-weight bootstrap of estimates and robustness values.
    Bootstrap(BootstrapArgs),
    /// Bias surface over the confounding plane with dominance labels.
    Contour(ContourArgs),
    /// Synthetic data generation from a structural configuration.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

/// Input flags shared by every data-driven subcommand.
#[derive(Args)]
struct DataArgs {
    /// CSV file holding the observed columns.
    #[arg(long)]
    data: PathBuf,
    /// JSON schema mapping columns to roles.
    #[arg(long)]
    schema: PathBuf,
}

impl DataArgs {
    fn dataset(&self) -> Result<Dataset> {
        let schema = RoleSchema::from_json_file(&self.schema)?;
        let d = ingest::load_dataset(&self.data, schema)?;
        ingest::standardize(&d)
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Recompute the adjustment with this covariate left out.
    #[arg(long)]
    drop_covariate: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct BiasDecomposeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Confounder partial correlations r1,r2,r3,r4 against the proxies,
    /// treatment, and outcome under nested conditioning.
    #[arg(long, value_parser = parse_rho, allow_hyphen_values = true)]
    rho: Rho,
}

#[derive(Args)]
struct TrvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Strategy,
    /// Bias target: a number, 'Nse' for N standard errors of the strategy's
    /// estimate, or 'estimate' for a bias the size of the point estimate.
    #[arg(long, value_parser = BiasTarget::parse, allow_hyphen_values = true)]
    b: BiasTarget,
    #[command(flatten)]
    search: SearchArgs,
    /// Also report the minimal-norm confounding parameters at the optimum.
    #[arg(long)]
    rho_star: bool,
}

/// Optional overrides of the search defaults.
#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    constraint_tol: Option<f64>,
    #[arg(long)]
    objective_tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

impl SearchArgs {
    fn options(&self) -> TrvOptions {
        let mut o = TrvOptions::default();
        if let Some(v) = self.starts {
            o.starts = v;
        }
        if let Some(v) = self.lambda0 {
            o.lambda0 = v;
        }
        if let Some(v) = self.constraint_tol {
            o.constraint_tol = v;
        }
        if let Some(v) = self.objective_tol {
            o.objective_tol = v;
        }
        if let Some(v) = self.max_iters {
            o.max_iters = v;
        }
        o
    }
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_strategy, default_value = "soo")]
    strategy: Strategy,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Add per-strategy robustness values at this bias target to the
    /// bootstrapped statistics. Resolved once on the point estimates, so
    /// every replicate searches for the same target.
    #[arg(long, value_parser = BiasTarget::parse, allow_hyphen_values = true)]
    b: Option<BiasTarget>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct ContourArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    r_z_min: Option<f64>,
    #[arg(long)]
    r_z_max: Option<f64>,
    #[arg(long)]
    r_y_min: Option<f64>,
    #[arg(long)]
    r_y_max: Option<f64>,
    #[arg(long)]
    n_z: Option<usize>,
    #[arg(long)]
    n_y: Option<usize>,
    /// Number of signed contour levels.
    #[arg(long, default_value_t = 6)]
    levels: usize,
    /// Render the surface to this SVG file.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// `csv` streams the long-format grid table to stdout.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

impl ContourArgs {
    fn spec(&self) -> GridSpec {
        let mut spec = GridSpec::default();
        if let Some(v) = self.r_z_min {
            spec.r_z_min = v;
        }
        if let Some(v) = self.r_z_max {
            spec.r_z_max = v;
        }
        if let Some(v) = self.r_y_min {
            spec.r_y_min = v;
        }
        if let Some(v) = self.r_y_max {
            spec.r_y_max = v;
        }
        if let Some(v) = self.n_z {
            spec.n_z = v;
        }
        if let Some(v) = self.n_y {
            spec.n_y = v;
        }
        spec
    }
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["preset", "config"])))]
struct SimulateArgs {
    /// Named structural preset.
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// JSON structural configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path for the observed columns.
    #[arg(long)]
    out: PathBuf,
    /// Output path for the matching role schema.
    #[arg(long)]
    schema_out: PathBuf,
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    s.parse()
}

fn parse_rho(s: &str) -> std::result::Result<Rho, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(format!(
            "expected four comma-separated values, got {}",
            parts.len()
        ));
    }
    let mut v = [0.0; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .trim()
            .parse()
            .map_err(|_| format!("'{p}' is not a number"))?;
    }
    Ok(Rho::from_array(v))
}

fn parse_preset(s: &str) -> Result<Preset> {
    s.parse()
}

/// Bias-target specification for `--b`.
#[derive(Debug, Clone, Copy)]
enum BiasTarget {
    Literal(f64),
    SeMultiple(f64),
    PointEstimate,
}

impl BiasTarget {
    fn parse(s: &str) -> std::result::Result<BiasTarget, String> {
        if s == "estimate" {
            return Ok(BiasTarget::PointEstimate);
        }
        if let Some(prefix) = s.strip_suffix("se") {
            return prefix
                .parse()
                .map(BiasTarget::SeMultiple)
                .map_err(|_| format!("'{s}' is not a standard-error multiple like '2se'"));
        }
        s.parse()
            .map(BiasTarget::Literal)
            .map_err(|_| format!("'{s}' is not a number, 'Nse', or 'estimate'"))
    }

    /// The concrete bias value for one strategy's point estimate.
    fn resolve(&self, e: &Estimate) -> f64 {
        match self {
            BiasTarget::Literal(v) => *v,
            BiasTarget::SeMultiple(n) => n * e.se,
            BiasTarget::PointEstimate => e.tau,
        }
    }
}

impl fmt::Display for BiasTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BiasTarget::Literal(v) => write!(f, "{v}"),
            BiasTarget::SeMultiple(n) => write!(f, "{n}se"),
            BiasTarget::PointEstimate => write!(f, "estimate"),
        }
    }
}

/// Run metadata embedded in every JSON output.
#[derive(Serialize)]
struct Meta {
    version: &'static str,
    command: &'static str,
    threads: usize,
}

fn meta(command: &'static str, threads: usize) -> Meta {
    Meta {
        version: env!("CARGO_PKG_VERSION"),
        command,
        threads,
    }
}

fn emit<T: Serialize>(value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("output is not serializable: {e}")))?;
    println!("{json}");
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(e) => fail(&e),
    };
    // Only the search and surface paths fan out; every other subcommand is
    // sequential regardless of this pool.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    if let Err(e) = run(cli.command, threads) {
        fail(&e);
    }
}

fn fail(e: &Error) -> ! {
    let record = serde_json::json!({
        "error": { "kind": e.kind(), "message": e.to_string() }
    });
    eprintln!("{record}");
    std::process::exit(1);
}

fn thread_count(flag: Option<usize>) -> Result<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("SENSA_THREADS") {
            Ok(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("SENSA_THREADS='{v}' is not a thread count")))?,
            Err(_) => std::thread::available_parallelism()
                .map(NonZeroUsize::get)
                .unwrap_or(1),
        },
    };
    if n == 0 {
        return Err(Error::Config("thread count must be positive".into()));
    }
    Ok(n)
}

fn run(command: Command, threads: usize) -> Result<()> {
    match command {
        Command::Estimate(a) => run_estimate(a, threads),
        Command::BiasDecompose(a) => run_bias_decompose(a, threads),
        Command::Trv(a) => run_trv(a, threads),
        Command::Benchmark(a) => run_benchmark(a, threads),
        Command::Bootstrap(a) => run_bootstrap(a, threads),
        Command::Contour(a) => run_contour(a, threads),
        Command::Simulate(a) => run_simulate(a, threads),
    }
}

fn run_estimate(a: EstimateArgs, threads: usize) -> Result<()> {
    let d = a.data.dataset()?;
    let r = ingest::partial_out(&d, a.drop_covariate.as_deref())?;
    let est = estimate_all(&r)?;

    #[derive(Serialize)]
    struct Output {
        meta: Meta,
        dropped_covariate: Option<String>,
        estimates: Estimates,
    }
    match a.format {
        Format::Json => emit(&Output {
            meta: meta("estimate", threads),
            dropped_covariate: a.drop_covariate,
            estimates: est,
        }),
        Format::Csv => {
            println!("strategy,tau,se,n,dof");
            for s in Strategy::ALL {
                let e = est.get(s);
                println!("{},{},{},{},{}", s.tag(), e.tau, e.se, e.n, e.dof);
            }
            Ok(())
        }
    }
}

fn run_bias_decompose(a: BiasDecomposeArgs, threads: usize) -> Result<()> {
    let d = a.data.dataset()?;
    let r = ingest::partial_out(&d, None)?;
    let m = ingest::moments(&r)?;
    let rho = a.rho;
    let ext = sigma::extend_covariance(&m.cov, &rho)?;

    let taus = taus_from_moments(&m.cov)?;
    let tau_true = sigma::tau_true(&ext)?;

    #[derive(Serialize)]
    struct StrategyValues {
        soo: f64,
        iv: f64,
        prox: f64,
    }
    #[derive(Serialize)]
    struct SooOutput {
        params: SooParams,
        bias: f64,
    }
    #[derive(Serialize)]
    struct Output {
        meta: Meta,
        rho: Rho,
        taus: TauSet,
        tau_true: f64,
        bias: StrategyValues,
        soo: SooOutput,
        iv: IvBiasDecomposition,
        prox: ProxBiasDecomposition,
    }
    emit(&Output {
        meta: meta("bias-decompose", threads),
        rho,
        bias: StrategyValues {
            soo: taus.soo - tau_true,
            iv: taus.iv - tau_true,
            prox: taus.prox - tau_true,
        },
        taus,
        tau_true,
        soo: SooOutput {
            params: SooParams::from_extended(&ext)?,
            bias: bias_soo_from_extended(&ext)?,
        },
        iv: iv_bias_terms(&IvBiasInputs::from_extended(&ext)?)?,
        prox: prox_bias_terms(&ProxBiasInputs::from_extended(&ext)?)?,
    })
}

fn run_trv(a: TrvArgs, threads: usize) -> Result<()> {
    let d = a.data.dataset()?;
    let r = ingest::partial_out(&d, None)?;
    let est = estimate_all(&r)?;
    let m = ingest::moments(&r)?;
    let opts = a.search.options();
    let b = a.b.resolve(est.get(a.strategy));
    let result = trv(&m.cov, a.strategy, b, &opts)?;
    let rho_star = if a.rho_star {
        Some(rho_star(&m.cov, &result, &opts)?)
    } else {
        None
    };

    #[derive(Serialize)]
    struct Output {
        meta: Meta,
        b_spec: String,
        result: TrvResult,
        #[serde(skip_serializing_if = "Option::is_none")]
        rho_star: Option<Rho>,
    }
    emit(&Output {
        meta: meta("trv", threads),
        b_spec: a.b.to_string(),
        result,
        rho_star,
    })
}

fn run_benchmark(a: BenchmarkArgs, threads: usize) -> Result<()> {
    let d = a.data.dataset()?;
    let rows = benchmark_covariates(&d, a.strategy)?;

    #[derive(Serialize)]
    struct Output {
        meta: Meta,
        strategy: Strategy,
        rows: Vec<BenchmarkRow>,
    }
    match a.format {
        Format::Json => emit(&Output {
            meta: meta("benchmark", threads),
            strategy: a.strategy,
            rows,
        }),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            let to_io = |e: csv::Error| Error::Io {
                path: "<stdout>".into(),
                source: std::io::Error::other(e),
            };
            w.write_record([
                "covariate",
                "r1",
                "r2",
                "r3",
                "r4",
                "violation_norm_sq",
                "delta_tau",
                "error",
            ])
            .map_err(to_io)?;
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            for row in rows {
                let rho = row.rho_hat.map(|r| r.as_array());
                w.write_record([
                    row.covariate.clone(),
                    opt(rho.map(|r| r[0])),
                    opt(rho.map(|r| r[1])),
                    opt(rho.map(|r| r[2])),
                    opt(rho.map(|r| r[3])),
                    opt(row.violation_norm_sq),
                    opt(row.delta_tau),
                    row.error.clone().unwrap_or_default(),
                ])
                .map_err(to_io)?;
            }
            w.flush().map_err(|e| Error::Io {
                path: "<stdout>".into(),
                source: e,
            })
        }
    }
}

fn run_bootstrap(a: BootstrapArgs, threads: usize) -> Result<()> {
    let d = a.data.dataset()?;

    // Resolve the bias target once against the point estimates; replicates
    // then all search for the same fixed target.
    let resolved_b = match a.b {
        Some(spec) => {
            let r = ingest::partial_out(&d, None)?;
            let est = estimate_all(&r)?;
            Some([
                spec.resolve(&est.soo),
                spec.resolve(&est.iv),
                spec.resolve(&est.prox),
            ])
        }
        None => None,
    };
    // Replicate searches trade starts for speed; the point search in a
    // standalone `trv` run keeps the full default.
    let trv_opts = TrvOptions {
        starts: 16,
        ..TrvOptions::default()
    };

    let mut names = vec!["tau_soo", "se_soo", "tau_iv", "se_iv", "tau_prox", "se_prox"];
    if resolved_b.is_some() {
        names.extend(["trv_soo", "trv_iv", "trv_prox"]);
    }
    let stat = |db: &Dataset| {
        let r = ingest::partial_out(db, None)?;
        let est = estimate_all(&r)?;
        let mut out = vec![
            est.soo.tau,
            est.soo.se,
            est.iv.tau,
            est.iv.se,
            est.prox.tau,
            est.prox.se,
        ];
        if let Some(bs) = resolved_b {
            let m = ingest::moments(&r)?;
            for (s, b) in Strategy::ALL.into_iter().zip(bs) {
                out.push(trv(&m.cov, s, b, &trv_opts)?.trv);
            }
        }
        Ok(out)
    };
    let opts = BootstrapOptions {
        replicates: a.replicates,
        seed: a.seed,
        equal_weights: false,
    };
    let summary = bootstrap(&d, &names, stat, &opts)?;

    #[derive(Serialize)]
    struct Output {
        meta: Meta,
        #[serde(skip_serializing_if = "Option::is_none")]
        b_spec: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        b: Option<[f64; 3]>,
        #[serde(skip_serializing_if = "Option::is_none")]
        search: Option<TrvOptions>,
        summary: BootstrapSummary,
    }
    match a.format {
        Format::Json => emit(&Output {
            meta: meta("bootstrap", threads),
            b_spec: a.b.map(|s| s.to_string()),
            b: resolved_b,
            search: resolved_b.map(|_| trv_opts),
            summary,
        }),
        Format::Csv => {
            println!("statistic,point,median,mad");
            for (i, name) in summary.names.iter().enumerate() {
                println!(
                    "{name},{},{},{}",
                    summary.point[i], summary.median[i], summary.mad[i]
                );
            }
            Ok(())
        }
    }
}

fn run_contour(a: ContourArgs, threads: usize) -> Result<()> {
    let d = a.data.dataset()?;
    let r = ingest::partial_out(&d, None)?;
    let est = estimate_all(&r)?;
    let m = ingest::moments(&r)?;
    let spec = a.spec();
    let grid = compute_grid(&m.cov, &est, &spec)?;
    let levels = default_levels(&grid, a.levels);

    if let Some(path) = &a.svg {
        fs::write(path, render_svg(&grid, &levels)).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }

    #[derive(Serialize)]
    struct Dominance {
        soo: usize,
        iv: usize,
        prox: usize,
        unlabeled: usize,
    }
    #[derive(Serialize)]
    struct Output {
        meta: Meta,
        spec: GridSpec,
        estimates: Estimates,
        max_abs_bias: f64,
        levels: Vec<f64>,
        dominance: Dominance,
        #[serde(skip_serializing_if = "Option::is_none")]
        svg: Option<PathBuf>,
    }
    match a.format {
        Format::Json => {
            let mut dom = Dominance {
                soo: 0,
                iv: 0,
                prox: 0,
                unlabeled: 0,
            };
            for label in &grid.label {
                match label {
                    Some(Strategy::Soo) => dom.soo += 1,
                    Some(Strategy::Iv) => dom.iv += 1,
                    Some(Strategy::Prox) => dom.prox += 1,
                    None => dom.unlabeled += 1,
                }
            }
            emit(&Output {
                meta: meta("contour", threads),
                spec,
                estimates: est,
                max_abs_bias: grid.max_abs_bias(),
                levels,
                dominance: dom,
                svg: a.svg,
            })
        }
        Format::Csv => write_csv(&grid, std::io::stdout().lock()),
    }
}

fn run_simulate(a: SimulateArgs, threads: usize) -> Result<()> {
    let mut cfg = match (&a.preset, &a.config) {
        (Some(p), None) => Config::preset(*p),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            Config::from_json_str(&text)?
        }
        _ => unreachable!("the argument group admits exactly one source"),
    };
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }

    let d = sim::simulate(&cfg)?;
    let mut csv_out = Vec::new();
    sim::write_observed_csv(&d, &mut csv_out)?;
    fs::write(&a.out, csv_out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let schema_json = serde_json::to_string_pretty(&sim::simulation_schema())
        .map_err(|e| Error::Config(format!("schema is not serializable: {e}")))?;
    fs::write(&a.schema_out, schema_json + "\n").map_err(|e| Error::Io {
        path: a.schema_out.clone(),
        source: e,
    })?;

    #[derive(Serialize)]
    struct Output {
        meta: Meta,
        config: Config,
        /// Population estimands implied by the configuration; absent for a
        /// thresholded binary treatment, where the linear identities hold
        /// only approximately.
        #[serde(skip_serializing_if = "Option::is_none")]
        population_taus: Option<TauSet>,
        n: usize,
        data: PathBuf,
        schema: PathBuf,
    }
    emit(&Output {
        meta: meta("simulate", threads),
        config: cfg,
        population_taus: sim::population_taus(&cfg).ok(),
        n: d.n(),
        data: a.out,
        schema: a.schema_out,
    })
}
