//! Run a reduced Y-shape ensemble, compress it and store the kernel.
//!
//!     cargo run --release --example build_kernel -- [samples]

use std::path::Path;

use vasckernel::kernel::{build_kernel, energy_profile, load_kernel, save_kernel};
use vasckernel::scenarios::Scenario;

fn main() -> vasckernel::Result<()> {
    let samples = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(40);
    let mut s = Scenario::yshape();
    s.samples = samples;
    let u = s.run_ensemble(0)?;
    let k = build_kernel(&u, s.energy_threshold)?;

    println!("U is {} x {}", u.values.nrows(), u.samples());
    let energy = energy_profile(k.singular_values());
    for (i, (sigma, e)) in k.singular_values().iter().zip(&energy).take(12).enumerate() {
        println!("  sigma_{:<2} = {sigma:>10.3}  cumulative energy {e:.5}", i + 1);
    }
    println!(
        "r = {} at threshold {} (captured {:.5})",
        k.rank(),
        s.energy_threshold,
        k.captured_energy()
    );
    println!("basis orthonormality error {:.2e}", k.orthonormality_error());

    let path = Path::new("yshape.hkrn");
    save_kernel(&k, path)?;
    let back = load_kernel(path)?;
    assert_eq!(back.basis(), k.basis());
    println!(
        "wrote {} ({} bytes)",
        path.display(),
        std::fs::metadata(path).map(|m| m.len()).unwrap_or(0)
    );
    Ok(())
}
