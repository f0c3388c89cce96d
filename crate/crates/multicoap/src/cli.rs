//! Command-line surface: `simulate`, `fit`, `select`, and `benchmark`.
//!
//! Every command reads/writes the CSV/JSON layouts of [`crate::io`] and
//! drops a `manifest.json` beside its outputs with the resolved
//! configuration, seeds, paths, and timings — enough to reproduce the run.
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure.
//!
//! Parallelism defaults to one thread so repeated runs are bit-identical;
//! `--threads N` (or the `MULTICOAP_THREADS` environment variable) enables a
//! wider pool. Results are identical at any width: cross-study reductions
//! fold in study order regardless of which thread computed each piece.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::{run_scenario, Scenario, DEFAULT_BASE_SEED};
use crate::error::{Error, Result};
use crate::io;
use crate::params::FitConfig;
use crate::rrr::{select_rank, RankSelection};
use crate::selection::{select_factors, FactorSelection};
use crate::simgen::{generate, SimConfig};
use crate::vem::fit;

#[derive(Parser)]
#[command(
    name = "multicoap",
    version,
    about = "Multi-study covariate-augmented Poisson factor models"
)]
struct Cli {
    /// Worker threads (default 1; env fallback MULTICOAP_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (with ground truth) from a JSON config.
    Simulate(SimulateArgs),
    /// Fit the model to a dataset directory.
    Fit(FitArgs),
    /// Select the numbers of factors and the coefficient rank.
    Select(SelectArgs),
    /// Run a benchmark scenario end to end and summarize it.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON simulation config; see `SimConfig`.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
    /// Replicate seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset directory in the simulate layout (truth/ optional).
    #[arg(long)]
    data_dir: PathBuf,
    /// JSON fit config; see `FitConfig`.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    /// Dataset directory in the simulate layout.
    #[arg(long)]
    data_dir: PathBuf,
    /// Upper bound on the number of shared factors.
    #[arg(long, default_value_t = 6)]
    q_max: usize,
    /// Upper bound on every study's specific factor count.
    #[arg(long, default_value_t = 4)]
    qs_max: usize,
    /// Upper bound on the coefficient rank (default min(p, d)).
    #[arg(long)]
    r_max: Option<usize>,
    /// Cumulative explained-variance threshold.
    #[arg(long, default_value_t = 0.95)]
    tau: f64,
    /// Output directory (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
    /// Seed for the selection fits.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Scenario: example1-n, example1-p, example2, or example5.
    #[arg(long)]
    scenario: String,
    /// Replicates per grid cell.
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    /// Output directory (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
    /// Base seed; replicate r uses seed + r.
    #[arg(long, default_value_t = DEFAULT_BASE_SEED)]
    seed: u64,
}

/// Parses arguments, runs the selected command, and returns the process
/// exit code; errors are reported on stderr.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let threads = resolve_threads(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a {threads}-thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Fit(args) => cmd_fit(&args),
        Command::Select(args) => cmd_select(&args),
        Command::Benchmark(args) => cmd_benchmark(&args),
    })
}

fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    let threads = match flag {
        Some(n) => n,
        None => match std::env::var("MULTICOAP_THREADS") {
            Ok(text) => text.parse::<usize>().map_err(|_| {
                Error::Config(format!("MULTICOAP_THREADS must be a positive integer, got {text:?}"))
            })?,
            Err(_) => 1,
        },
    };
    if threads == 0 {
        return Err(Error::Config("thread count must be at least 1".to_string()));
    }
    Ok(threads)
}

/// `simulate` config file: `n` and `p` are required, everything else takes
/// the two-study defaults.
#[derive(Debug, Serialize, Deserialize)]
struct SimFileConfig {
    n: Vec<usize>,
    p: usize,
    d: Option<usize>,
    q: Option<usize>,
    qs: Option<Vec<usize>>,
    r0: Option<usize>,
    rho_a: Option<f64>,
    rho_b: Option<f64>,
    rho_z: Option<f64>,
    sigma0_sq: Option<f64>,
    a_range: Option<(u64, u64)>,
    seed: Option<u64>,
}

impl SimFileConfig {
    fn resolve(self) -> SimConfig {
        let mut config = SimConfig::new(self.n, self.p);
        if let Some(d) = self.d {
            config.d = d;
        }
        if let Some(q) = self.q {
            config.q = q;
        }
        if let Some(qs) = self.qs {
            config.qs = qs;
        } else {
            config.qs = vec![2; config.n.len()];
        }
        if let Some(r0) = self.r0 {
            config.r0 = r0;
        }
        if let Some(rho_a) = self.rho_a {
            config.rho_a = rho_a;
        }
        if let Some(rho_b) = self.rho_b {
            config.rho_b = rho_b;
        }
        if let Some(rho_z) = self.rho_z {
            config.rho_z = rho_z;
        }
        if let Some(sigma0_sq) = self.sigma0_sq {
            config.sigma0_sq = sigma0_sq;
        }
        if let Some(a_range) = self.a_range {
            config.a_range = a_range;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let total = Instant::now();
    let file: SimFileConfig = io::read_json(&args.config)?;
    let mut config = file.resolve();
    if let Some(seed) = args.seed {
        config.seed = seed;
    }

    let generated = Instant::now();
    let (data, truth) = generate(&config)?;
    let generate_seconds = generated.elapsed().as_secs_f64();

    io::ensure_dir(&args.out_dir)?;
    let mut outputs = io::write_dataset(&args.out_dir, &data)?;
    outputs.extend(io::write_truth(&args.out_dir, &truth)?);

    let mut manifest = io::RunManifest::new("simulate", serde_json::to_value(&config).unwrap());
    manifest.seeds = vec![config.seed, config.structure_seed()];
    manifest.inputs = vec![args.config.display().to_string()];
    manifest.outputs = paths_to_strings(&outputs);
    manifest.timings.insert("generate".into(), generate_seconds);
    manifest
        .timings
        .insert("total".into(), total.elapsed().as_secs_f64());
    write_manifest(&args.out_dir, &manifest)?;

    println!(
        "simulated {} studies (p = {}) into {}",
        data.n_studies(),
        data.p(),
        args.out_dir.display()
    );
    Ok(())
}

/// `fit` config file: `q` and `qs` are required; stopping parameters default
/// to max_iter = 200, eps = 1e-5.
#[derive(Debug, Serialize, Deserialize)]
struct FitFileConfig {
    q: usize,
    qs: Vec<usize>,
    rank: Option<usize>,
    max_iter: Option<usize>,
    eps: Option<f64>,
    seed: Option<u64>,
}

impl FitFileConfig {
    fn resolve(self) -> FitConfig {
        let mut config = FitConfig::new(self.q, self.qs);
        config.rank = self.rank;
        if let Some(max_iter) = self.max_iter {
            config.max_iter = max_iter;
        }
        if let Some(eps) = self.eps {
            config.eps = eps;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config
    }
}

/// Scalar summary written by `fit` alongside the parameter matrices.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitSummary {
    pub converged: bool,
    pub iterations: usize,
    pub final_elbo: f64,
    pub worst_elbo_decrease: f64,
    pub read_seconds: f64,
    pub fit_seconds: f64,
    pub write_seconds: f64,
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let reading = Instant::now();
    let data = io::read_dataset(&args.data_dir)?;
    let file: FitFileConfig = io::read_json(&args.config)?;
    let config = file.resolve();
    let read_seconds = reading.elapsed().as_secs_f64();

    let fitting = Instant::now();
    let result = fit(&data, &config)?;
    let fit_seconds = fitting.elapsed().as_secs_f64();

    let writing = Instant::now();
    io::ensure_dir(&args.out_dir)?;
    let out = &args.out_dir;
    let mut outputs = Vec::new();

    let path = out.join("beta.csv");
    io::write_matrix_csv(&path, &result.params.beta, "z")?;
    outputs.push(path);
    let path = out.join("A.csv");
    io::write_matrix_csv(&path, &result.params.a, "f")?;
    outputs.push(path);
    let path = out.join("lambda.csv");
    io::write_vector_csv(&path, &result.params.lambda, "lambda")?;
    outputs.push(path);
    for s in 0..data.n_studies() {
        let vp = &result.vparams.studies[s];
        for (stem, matrix, prefix) in [
            ("B", &result.params.b[s], "h"),
            ("Mf", &vp.mf, "f"),
            ("Sf", &vp.sf, "f"),
            ("Mh", &vp.mh, "h"),
            ("Sh", &vp.sh, "h"),
        ] {
            let path = out.join(format!("{stem}_{}.csv", s + 1));
            io::write_matrix_csv(&path, matrix, prefix)?;
            outputs.push(path);
        }
    }
    let path = out.join("elbo_trace.csv");
    io::write_elbo_trace_csv(&path, &result.elbo_trace)?;
    outputs.push(path);

    let summary = FitSummary {
        converged: result.converged,
        iterations: result.iterations,
        final_elbo: result.elbo(),
        worst_elbo_decrease: result.worst_elbo_decrease(),
        read_seconds,
        fit_seconds,
        write_seconds: writing.elapsed().as_secs_f64(),
    };
    let path = out.join("fit_summary.json");
    io::write_json(&path, &summary)?;
    outputs.push(path);

    let mut manifest = io::RunManifest::new("fit", serde_json::to_value(&config).unwrap());
    manifest.seeds = vec![config.seed];
    manifest.inputs = vec![
        args.data_dir.display().to_string(),
        args.config.display().to_string(),
    ];
    manifest.outputs = paths_to_strings(&outputs);
    manifest.timings.insert("read".into(), read_seconds);
    manifest.timings.insert("fit".into(), fit_seconds);
    manifest
        .timings
        .insert("write".into(), summary.write_seconds);
    write_manifest(out, &manifest)?;

    println!(
        "fit {} (converged = {}, iterations = {}, elbo = {:.6e})",
        if result.converged { "converged" } else { "stopped at max_iter" },
        result.converged,
        result.iterations,
        result.elbo()
    );
    Ok(())
}

/// Combined payload of `select`: factor counts and coefficient rank.
#[derive(Debug, Serialize, Deserialize)]
pub struct SelectionReport {
    pub factors: FactorSelection,
    pub rank: RankSelection,
}

fn cmd_select(args: &SelectArgs) -> Result<()> {
    let total = Instant::now();
    let data = io::read_dataset(&args.data_dir)?;

    let base = FitConfig::new(1, vec![1; data.n_studies()])
        .with_stopping(2000, 1e-10)
        .with_seed(args.seed);
    let selecting = Instant::now();
    let factors = select_factors(&data, args.q_max, args.qs_max, args.tau, &base)?;
    let select_seconds = selecting.elapsed().as_secs_f64();

    // rank selection needs a coefficient estimate: refit unconstrained at the
    // chosen factor counts
    let refitting = Instant::now();
    let mut refit_config = FitConfig::new(factors.q_hat, factors.qs_hat.clone())
        .with_stopping(2000, 1e-9)
        .with_seed(args.seed);
    refit_config.rank = None;
    let refit = fit(&data, &refit_config)?;
    let r_max = args.r_max.unwrap_or_else(|| data.p().min(data.d()));
    let rank = select_rank(&refit.params.beta, r_max, args.tau)?;
    let refit_seconds = refitting.elapsed().as_secs_f64();

    io::ensure_dir(&args.out_dir)?;
    let report = SelectionReport { factors, rank };
    let path = args.out_dir.join("selection.json");
    io::write_json(&path, &report)?;

    let config = serde_json::json!({
        "q_max": args.q_max,
        "qs_max": args.qs_max,
        "r_max": r_max,
        "tau": args.tau,
        "fit_config_base": &base,
    });
    let mut manifest = io::RunManifest::new("select", config);
    manifest.seeds = vec![args.seed];
    manifest.inputs = vec![args.data_dir.display().to_string()];
    manifest.outputs = vec![path.display().to_string()];
    manifest.timings.insert("select".into(), select_seconds);
    manifest.timings.insert("refit".into(), refit_seconds);
    manifest
        .timings
        .insert("total".into(), total.elapsed().as_secs_f64());
    write_manifest(&args.out_dir, &manifest)?;

    println!(
        "selected q = {}, qs = {:?}, r = {}",
        report.factors.q_hat, report.factors.qs_hat, report.rank.r_hat
    );
    Ok(())
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let total = Instant::now();
    let scenario = Scenario::parse(&args.scenario)?;
    let outcome = run_scenario(scenario, args.replicates, args.seed)?;

    io::ensure_dir(&args.out_dir)?;
    let mut outputs = Vec::new();

    let results_path = args.out_dir.join("results.csv");
    io::write_benchmark_results_csv(&results_path, &outcome.results)?;
    outputs.push(results_path);
    let summary_path = args.out_dir.join("summary.csv");
    io::write_benchmark_summary_csv(&summary_path, &outcome.summaries)?;
    outputs.push(summary_path);
    if !outcome.failures.is_empty() {
        let failures_path = args.out_dir.join("failures.csv");
        io::write_benchmark_failures_csv(&failures_path, &outcome.failures)?;
        outputs.push(failures_path);
        for failure in &outcome.failures {
            eprintln!(
                "warning: {} cell {} replicate {} failed: {}",
                failure.scenario, failure.cell, failure.replicate, failure.message
            );
        }
    }

    let config = serde_json::json!({
        "scenario": scenario.name(),
        "replicates": args.replicates,
        "base_seed": args.seed,
    });
    let mut manifest = io::RunManifest::new("benchmark", config);
    manifest.seeds = (0..args.replicates as u64).map(|r| args.seed + r).collect();
    manifest.outputs = paths_to_strings(&outputs);
    manifest
        .timings
        .insert("total".into(), total.elapsed().as_secs_f64());
    write_manifest(&args.out_dir, &manifest)?;

    let failed = outcome.failures.len();
    println!(
        "benchmark {} finished: {} summary rows, {} failed replicates",
        scenario.name(),
        outcome.summaries.len(),
        failed
    );
    Ok(())
}

fn write_manifest(dir: &Path, manifest: &io::RunManifest) -> Result<()> {
    io::write_json(&dir.join("manifest.json"), manifest)
}

fn paths_to_strings(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}
