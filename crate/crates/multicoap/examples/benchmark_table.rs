// Runs one benchmark scenario end to end and prints the per-cell summary
// as a table. Scenario names match the CLI: example1-n, example1-p,
// example2, example5. A small replicate count keeps this quick; the full
// suite uses 20.
//
//     cargo run --release --example benchmark_table -- example1-n 3

use std::env;

use multicoap::bench::{run_scenario, Scenario, DEFAULT_BASE_SEED};

fn main() -> Result<(), multicoap::Error> {
    let mut args = env::args().skip(1);
    let scenario = Scenario::parse(&args.next().unwrap_or_else(|| "example1-n".into()))?;
    let replicates: usize = args
        .next()
        .map(|s| s.parse().expect("replicate count must be an integer"))
        .unwrap_or(3);

    println!(
        "running {} with {} replicate(s), base seed {}",
        scenario.name(),
        replicates,
        DEFAULT_BASE_SEED
    );
    let outcome = run_scenario(scenario, replicates, DEFAULT_BASE_SEED)?;

    println!(
        "\n{:<14} {:<20} {:>10} {:>10}",
        "cell", "metric", "mean", "sd"
    );
    for row in &outcome.summaries {
        let sd = row
            .sd
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<14} {:<20} {:>10.4} {:>10}",
            row.cell, row.metric, row.mean, sd
        );
    }

    if outcome.failures.is_empty() {
        println!("\nall replicates completed");
    } else {
        println!("\n{} replicate(s) failed:", outcome.failures.len());
        for f in &outcome.failures {
            println!("  {} rep {}: {}", f.cell, f.replicate, f.message);
        }
    }
    Ok(())
}
