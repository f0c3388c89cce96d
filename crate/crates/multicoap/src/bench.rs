//! Benchmark harness: the reference simulation scenarios, run end to end
//! (generate → fit → score) with deterministic seeding.
//!
//! Each scenario is a grid of cells (a sample-size, dimension, or
//! overdispersion sweep). Within a cell, the structural truth is fixed and
//! replicates redraw the data; replicate r uses seed `base_seed + r`, so any
//! row of the output can be reproduced in isolation. Failures are recorded
//! per replicate and the run continues.
//!
//! Estimation fits use a deliberately tight stopping rule (`max_iter` 2000,
//! `eps` 1e-9): the overdispersion sweep's hardest cell moves by ~0.01 in
//! loading recovery between 1e-7 and 1e-9, which is material when comparing
//! against reference values. Factor-count selection fits stop tighter still
//! (2000, 1e-10); see [`selection_base_config`] for why. The selection
//! scenario refits at the selected counts before scoring, so its estimation
//! metrics describe the model a practitioner would keep.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::score;
use crate::params::FitConfig;
use crate::selection::select_factors;
use crate::simgen::{generate, SimConfig};
use crate::vem::fit;

/// Default base for replicate seeds; replicate r uses `base + r`.
pub const DEFAULT_BASE_SEED: u64 = 1000;

/// One benchmark scenario: a named grid of simulation cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Sample-size sweep at p = 100: (n₁,n₂) ∈ {(50,80), (100,150), (200,300)}.
    Example1N,
    /// Dimension sweep at (n₁,n₂) = (100,150): p ∈ {50, 100, 200}.
    Example1P,
    /// Overdispersion sweep: σ₀² ∈ {1, 4, 8} at p = 100, (n₁,n₂) = (100,200).
    Example2,
    /// Factor-count selection at upper bounds (6, 4), then refit and score.
    Example5,
}

impl Scenario {
    /// Parses the CLI scenario name.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "example1-n" => Ok(Scenario::Example1N),
            "example1-p" => Ok(Scenario::Example1P),
            "example2" => Ok(Scenario::Example2),
            "example5" => Ok(Scenario::Example5),
            other => Err(Error::Config(format!(
                "unknown scenario {other:?}; expected one of example1-n, example1-p, example2, example5"
            ))),
        }
    }

    /// The CLI name of the scenario.
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Example1N => "example1-n",
            Scenario::Example1P => "example1-p",
            Scenario::Example2 => "example2",
            Scenario::Example5 => "example5",
        }
    }
}

/// One metric value from one replicate: a row of `results.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub scenario: String,
    /// Which grid cell the replicate belongs to, e.g. `sigma0_sq=4`.
    pub cell: String,
    pub replicate: usize,
    pub metric: String,
    pub value: f64,
}

/// Mean and spread of one metric within one cell: a row of `summary.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub scenario: String,
    pub cell: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; `None` with a single replicate.
    pub sd: Option<f64>,
    pub replicates: usize,
}

/// A replicate that errored instead of producing metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub scenario: String,
    pub cell: String,
    pub replicate: usize,
    pub message: String,
}

/// Everything a benchmark run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkOutcome {
    pub results: Vec<ReplicateRecord>,
    pub summaries: Vec<CellSummary>,
    pub failures: Vec<ReplicateFailure>,
}

/// Stopping rule for benchmark estimation fits.
fn estimation_config(q: usize, qs: Vec<usize>, rank: usize) -> FitConfig {
    FitConfig::new(q, qs)
        .with_rank(rank)
        .with_stopping(2000, 1e-9)
}

/// Stopping rule for the selection fit at the factor-count upper bounds.
/// Tighter than the estimation rule: with surplus columns the ELBO can
/// plateau briefly while a direction migrates between the shared and
/// study-specific blocks, and stopping inside the plateau inflates the
/// selected counts.
fn selection_base_config(n_studies: usize) -> FitConfig {
    FitConfig::new(1, vec![1; n_studies]).with_stopping(2000, 1e-10)
}

/// The shared simulation defaults behind examples 1, 2, and 4: two studies,
/// q = 3 shared / 2 specific factors, d = 10 covariates of true rank 2.
fn example1_config(n: Vec<usize>, p: usize) -> SimConfig {
    SimConfig::new(n, p)
}

fn example2_config(sigma0_sq: f64) -> SimConfig {
    let mut config = SimConfig::new(vec![100, 200], 100);
    config.rho_z = 1.0;
    config.sigma0_sq = sigma0_sq;
    config
}

fn example5_config() -> SimConfig {
    let mut config = SimConfig::new(vec![150, 200], 100);
    config.d = 3;
    config.r0 = 3;
    config.rho_b = 5.0;
    config.rho_z = 1.0;
    config
}

/// Runs a scenario: `replicates` runs per cell, seeds `base_seed + r`.
pub fn run_scenario(
    scenario: Scenario,
    replicates: usize,
    base_seed: u64,
) -> Result<BenchmarkOutcome> {
    if replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".to_string()));
    }
    let mut outcome = BenchmarkOutcome {
        results: Vec::new(),
        summaries: Vec::new(),
        failures: Vec::new(),
    };

    match scenario {
        Scenario::Example1N => {
            for (n1, n2) in [(50, 80), (100, 150), (200, 300)] {
                let config = example1_config(vec![n1, n2], 100);
                let cell = format!("n=({n1},{n2})");
                run_estimation_cell(&mut outcome, scenario, &cell, config, replicates, base_seed);
            }
        }
        Scenario::Example1P => {
            for p in [50, 100, 200] {
                let config = example1_config(vec![100, 150], p);
                let cell = format!("p={p}");
                run_estimation_cell(&mut outcome, scenario, &cell, config, replicates, base_seed);
            }
        }
        Scenario::Example2 => {
            for sigma0_sq in [1.0, 4.0, 8.0] {
                let config = example2_config(sigma0_sq);
                let cell = format!("sigma0_sq={sigma0_sq}");
                run_estimation_cell(&mut outcome, scenario, &cell, config, replicates, base_seed);
            }
        }
        Scenario::Example5 => {
            run_selection_cell(&mut outcome, scenario, replicates, base_seed);
        }
    }

    summarize(&mut outcome);
    Ok(outcome)
}

/// Generate → fit → score for every replicate of one estimation cell.
fn run_estimation_cell(
    outcome: &mut BenchmarkOutcome,
    scenario: Scenario,
    cell: &str,
    mut config: SimConfig,
    replicates: usize,
    base_seed: u64,
) {
    for rep in 0..replicates {
        config.seed = base_seed + rep as u64;
        let run = || -> Result<Vec<(String, f64)>> {
            let (data, truth) = generate(&config)?;
            let fit_config = estimation_config(config.q, config.qs.clone(), config.r0)
                .with_seed(config.seed);
            let started = Instant::now();
            let result = fit(&data, &fit_config)?;
            let seconds = started.elapsed().as_secs_f64();
            let report = score(&result, &truth)?;
            Ok(estimation_metrics(&report, &result, seconds))
        };
        record(outcome, scenario, cell, rep, run());
    }
}

/// Generate → select → refit at the selected counts → score, per replicate.
///
/// Selection uses upper bounds q_max = 6, qs_max = 4 and τ = 0.95; the refit
/// keeps the scenario's rank constraint. Selected counts are reported as
/// metrics (`q_hat`, `qs_hat_1`, …) alongside the refit's estimation scores.
fn run_selection_cell(
    outcome: &mut BenchmarkOutcome,
    scenario: Scenario,
    replicates: usize,
    base_seed: u64,
) {
    let mut config = example5_config();
    for rep in 0..replicates {
        config.seed = base_seed + rep as u64;
        let run = || -> Result<Vec<(String, f64)>> {
            let (data, truth) = generate(&config)?;
            let base = selection_base_config(data.n_studies()).with_seed(config.seed);
            let selection = select_factors(&data, 6, 4, 0.95, &base)?;

            let fit_config =
                estimation_config(selection.q_hat, selection.qs_hat.clone(), config.r0)
                    .with_seed(config.seed);
            let started = Instant::now();
            let result = fit(&data, &fit_config)?;
            let seconds = started.elapsed().as_secs_f64();

            let mut metrics = vec![("q_hat".to_string(), selection.q_hat as f64)];
            for (s, &qs) in selection.qs_hat.iter().enumerate() {
                metrics.push((format!("qs_hat_{}", s + 1), qs as f64));
            }
            // scoring against truth is only meaningful at matching counts;
            // selection misses still contribute their q̂ metrics above
            if selection.q_hat == config.q && selection.qs_hat == config.qs {
                let report = score(&result, &truth)?;
                metrics.extend(estimation_metrics(&report, &result, seconds));
            } else {
                metrics.push(("fit_seconds".to_string(), seconds));
                metrics.push((
                    "converged".to_string(),
                    if result.converged { 1.0 } else { 0.0 },
                ));
                metrics.push((
                    "worst_elbo_decrease".to_string(),
                    result.worst_elbo_decrease(),
                ));
            }
            Ok(metrics)
        };
        record(outcome, scenario, "base", rep, run());
    }
}

fn estimation_metrics(
    report: &crate::metrics::ScoreReport,
    result: &crate::params::FitResult,
    seconds: f64,
) -> Vec<(String, f64)> {
    vec![
        ("A_tr".to_string(), report.a_tr),
        ("F_tr".to_string(), report.f_tr),
        ("B_tr".to_string(), report.b_tr),
        ("H_tr".to_string(), report.h_tr),
        ("beta_er".to_string(), report.beta_er),
        ("fit_seconds".to_string(), seconds),
        ("iterations".to_string(), result.iterations as f64),
        (
            "converged".to_string(),
            if result.converged { 1.0 } else { 0.0 },
        ),
        (
            "worst_elbo_decrease".to_string(),
            result.worst_elbo_decrease(),
        ),
    ]
}

fn record(
    outcome: &mut BenchmarkOutcome,
    scenario: Scenario,
    cell: &str,
    replicate: usize,
    run: Result<Vec<(String, f64)>>,
) {
    match run {
        Ok(metrics) => {
            for (metric, value) in metrics {
                outcome.results.push(ReplicateRecord {
                    scenario: scenario.name().to_string(),
                    cell: cell.to_string(),
                    replicate,
                    metric,
                    value,
                });
            }
        }
        Err(err) => outcome.failures.push(ReplicateFailure {
            scenario: scenario.name().to_string(),
            cell: cell.to_string(),
            replicate,
            message: err.to_string(),
        }),
    }
}

/// Collapses replicate records into per-cell means and sample SDs, in first-
/// appearance order of (cell, metric).
fn summarize(outcome: &mut BenchmarkOutcome) {
    let mut order: Vec<(String, String)> = Vec::new();
    for row in &outcome.results {
        let key = (row.cell.clone(), row.metric.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    for (cell, metric) in order {
        let rows: Vec<&ReplicateRecord> = outcome
            .results
            .iter()
            .filter(|r| r.cell == cell && r.metric == metric)
            .collect();
        let n = rows.len();
        let mean = rows.iter().map(|r| r.value).sum::<f64>() / n as f64;
        let sd = if n > 1 {
            let var =
                rows.iter().map(|r| (r.value - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Some(var.sqrt())
        } else {
            None
        };
        outcome.summaries.push(CellSummary {
            scenario: rows[0].scenario.clone(),
            cell,
            metric,
            mean,
            sd,
            replicates: n,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_names_round_trip() {
        for name in ["example1-n", "example1-p", "example2", "example5"] {
            assert_eq!(Scenario::parse(name).unwrap().name(), name);
        }
        assert!(matches!(
            Scenario::parse("example3"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_replicates_is_a_config_error() {
        assert!(matches!(
            run_scenario(Scenario::Example2, 0, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn summaries_use_sample_sd_and_single_rep_has_none() {
        let mut outcome = BenchmarkOutcome {
            results: vec![
                ReplicateRecord {
                    scenario: "example2".into(),
                    cell: "c".into(),
                    replicate: 0,
                    metric: "A_tr".into(),
                    value: 0.9,
                },
                ReplicateRecord {
                    scenario: "example2".into(),
                    cell: "c".into(),
                    replicate: 1,
                    metric: "A_tr".into(),
                    value: 0.7,
                },
                ReplicateRecord {
                    scenario: "example2".into(),
                    cell: "c".into(),
                    replicate: 0,
                    metric: "beta_er".into(),
                    value: 0.1,
                },
            ],
            summaries: Vec::new(),
            failures: Vec::new(),
        };
        summarize(&mut outcome);
        let a = &outcome.summaries[0];
        assert_eq!(a.metric, "A_tr");
        assert!((a.mean - 0.8).abs() < 1e-15);
        let expected_sd = (2.0 * 0.1f64.powi(2) / 1.0).sqrt();
        assert!((a.sd.unwrap() - expected_sd).abs() < 1e-12);
        let b = &outcome.summaries[1];
        assert_eq!(b.metric, "beta_er");
        assert!(b.sd.is_none());
        assert_eq!(b.replicates, 1);
    }
}
