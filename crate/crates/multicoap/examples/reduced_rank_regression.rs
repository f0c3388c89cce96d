// Compares the unconstrained coefficient estimate with its reduced-rank
// projection when the true coefficient matrix is low rank. The projection
// keeps the leading directions of variation and discards estimation noise
// in the trailing ones, so the constrained estimate has lower error.
//
//     cargo run --example reduced_rank_regression

use multicoap::{beta_error, fit, generate, select_rank, FitConfig, SimConfig};

fn main() -> Result<(), multicoap::Error> {
    let mut config = SimConfig::new(vec![100, 150], 60);
    config.d = 10;
    config.r0 = 2;
    config.rho_z = 1.0;
    config.seed = 3;

    let (data, truth) = generate(&config)?;

    let unconstrained = FitConfig::new(3, vec![2, 2])
        .with_stopping(1000, 1e-8)
        .with_seed(3);
    let full = fit(&data, &unconstrained)?;

    let constrained = unconstrained.clone().with_rank(2);
    let reduced = fit(&data, &constrained)?;

    let err_full = beta_error(&full.params.beta, &truth.beta0)?;
    let err_reduced = beta_error(&reduced.params.beta, &truth.beta0)?;
    println!("true rank r0 = {}", config.r0);
    println!("beta error, unconstrained:   {:.5}", err_full);
    println!("beta error, rank-2 estimate: {:.5}", err_reduced);

    // The rank can also be read off the unconstrained estimate after the fact.
    let selection = select_rank(&full.params.beta, 6, 0.95)?;
    println!("\nrank selected from the unconstrained estimate: {}", selection.r_hat);
    println!("eigenvalues of beta'beta: {:?}", selection.eigenvalues);
    println!("cumulative shares:        {:?}", selection.cumulative_ratio);
    Ok(())
}
