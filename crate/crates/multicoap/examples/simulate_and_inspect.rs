// Generates a two-study count dataset and prints its basic structure:
// per-study shapes, count summaries, and the energy profile of the true
// loading matrices. Writes the dataset to target/example-data/ in the
// same CSV layout the CLI uses.
//
//     cargo run --example simulate_and_inspect

use std::path::Path;

use multicoap::io;
use multicoap::{generate, SimConfig};

fn main() -> Result<(), multicoap::Error> {
    let mut config = SimConfig::new(vec![100, 150], 50);
    config.q = 3;
    config.qs = vec![2, 2];
    config.d = 8;
    config.r0 = 2;
    config.seed = 42;

    let (data, truth) = generate(&config)?;

    println!("studies: {}", data.n_studies());
    for s in 0..data.n_studies() {
        let study = data.study(s);
        let x = study.x();
        let total: i64 = x.iter().sum();
        let max = x.iter().copied().max().unwrap_or(0);
        println!(
            "  study {}: x is {}x{}, z is {}x{}, total count {}, max count {}",
            s + 1,
            x.nrows(),
            x.ncols(),
            study.z().nrows(),
            study.z().ncols(),
            total,
            max
        );
    }

    println!("\ntrue shared loading column energies:");
    for (k, col) in truth.a0.column_iter().enumerate() {
        println!("  |A0[,{}]|^2 = {:.3}", k + 1, col.norm_squared());
    }
    for (s, b) in truth.b0.iter().enumerate() {
        println!("study {} specific loading column energies:", s + 1);
        for (k, col) in b.column_iter().enumerate() {
            println!("  |B0[,{}]|^2 = {:.3}", k + 1, col.norm_squared());
        }
    }

    let out = Path::new("target/example-data");
    let files = io::write_dataset(out, &data)?;
    io::write_truth(out, &truth)?;
    println!("\nwrote {} data files under {}", files.len(), out.display());
    Ok(())
}
