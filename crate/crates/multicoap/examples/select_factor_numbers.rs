// Chooses the numbers of shared and study-specific factors with the
// cumulative-proportion rule: fit once at generous upper bounds, then cut
// each loading-energy spectrum at the first index whose cumulative share
// exceeds tau.
//
//     cargo run --example select_factor_numbers

use multicoap::{generate, select_factors, FitConfig, SimConfig};

fn main() -> Result<(), multicoap::Error> {
    let mut config = SimConfig::new(vec![150, 200], 100);
    config.q = 3;
    config.qs = vec![2, 2];
    config.d = 3;
    config.r0 = 3;
    config.rho_a = 3.5;
    config.rho_b = 5.0;
    config.rho_z = 1.0;
    config.seed = 1002;

    let (data, _) = generate(&config)?;

    let base = FitConfig::new(1, vec![1, 1])
        .with_stopping(2000, 1e-10)
        .with_seed(5);
    let selection = select_factors(&data, 6, 4, 0.95, &base)?;

    println!("true q = {}, true qs = {:?}", config.q, config.qs);
    println!(
        "selected q_hat = {}, qs_hat = {:?} at tau = {}",
        selection.q_hat, selection.qs_hat, selection.tau
    );

    println!("\nshared spectrum (column energies of the fitted A):");
    print_spectrum(&selection.nu_f);
    for (s, nu) in selection.nu_h.iter().enumerate() {
        println!("study {} spectrum:", s + 1);
        print_spectrum(nu);
    }
    Ok(())
}

fn print_spectrum(nu: &[f64]) {
    let total: f64 = nu.iter().sum();
    let mut running = 0.0;
    for (k, &v) in nu.iter().enumerate() {
        running += v;
        println!(
            "  k={}  energy {:>10.4}  cumulative share {:.4}",
            k + 1,
            v,
            running / total
        );
    }
}
