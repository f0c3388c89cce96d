// Shows the file workflow for data that does not come from the simulator:
// build studies in memory, write them in the on-disk layout (X_s.csv,
// Z_s.csv, a_s.csv per study), read the directory back, fit, and export
// the estimates. The same layout is what `multicoap fit --data-dir` reads.
//
//     cargo run --example custom_data_pipeline

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::Poisson;

use multicoap::io;
use multicoap::{fit, FitConfig, MultiStudyDataset, StudyData};

fn main() -> Result<(), multicoap::Error> {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);

    // Two cohorts measured on the same 30 variables, with one intercept-only
    // covariate column and per-row exposure totals in 1..=4.
    let data = MultiStudyDataset::new(vec![
        synthetic_cohort(80, 30, &mut rng)?,
        synthetic_cohort(120, 30, &mut rng)?,
    ])?;

    let dir = Path::new("target/example-custom");
    io::write_dataset(dir, &data)?;
    println!("wrote {} studies under {}", data.n_studies(), dir.display());

    // Round trip through the CSV layout, as an external pipeline would.
    let reloaded = io::read_dataset(dir)?;
    assert_eq!(reloaded.p(), data.p());

    let config = FitConfig::new(2, vec![1, 1]).with_seed(2024);
    let result = fit(&reloaded, &config)?;
    println!(
        "fit: converged = {}, iterations = {}, ELBO = {:.4e}",
        result.converged,
        result.iterations,
        result.elbo()
    );

    io::write_matrix_csv(&dir.join("A.csv"), &result.params.a, "f")?;
    io::write_matrix_csv(&dir.join("beta.csv"), &result.params.beta, "z")?;
    io::write_elbo_trace_csv(&dir.join("elbo_trace.csv"), &result.elbo_trace)?;
    println!("exported A.csv, beta.csv, elbo_trace.csv");
    Ok(())
}

// A crude overdispersed count cohort: log rates from two latent directions
// plus noise, counts Poisson given the rates.
fn synthetic_cohort(
    n: usize,
    p: usize,
    rng: &mut ChaCha20Rng,
) -> Result<StudyData, multicoap::Error> {
    let load_a = DVector::from_fn(p, |j, _| ((j as f64) * 0.7).sin() * 0.8);
    let load_b = DVector::from_fn(p, |j, _| ((j as f64) * 0.3).cos() * 0.5);

    let mut x = DMatrix::zeros(n, p);
    let a = DVector::from_fn(n, |_, _| rng.gen_range(1..=4) as f64);
    for i in 0..n {
        let f1: f64 = rng.sample(rand_distr::StandardNormal);
        let f2: f64 = rng.sample(rand_distr::StandardNormal);
        for j in 0..p {
            let eps: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.3;
            let rate = a[i] * (f1 * load_a[j] + f2 * load_b[j] + eps).exp();
            x[(i, j)] = Poisson::new(rate.max(f64::MIN_POSITIVE))
                .expect("rate is positive")
                .sample(rng) as i64;
        }
    }
    let z = DMatrix::from_element(n, 1, 1.0);
    StudyData::new(x, z, a)
}
