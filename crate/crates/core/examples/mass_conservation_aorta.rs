//! Rigid-wall aorta-style network: posterior means inherit the junction flux
//! balance of every ensemble member.

use vasckernel::gp::{fit_noise, mass_audit, predict};
use vasckernel::kernel::build_kernel;
use vasckernel::scenarios::{layout_measurements, Noise, Scenario};

fn main() -> vasckernel::Result<()> {
    let mut s = Scenario::aorta();
    s.samples = 60;
    let u = s.run_ensemble(0)?;
    let k = build_kernel(&u, s.energy_threshold)?;
    println!(
        "{} vessels, {} junctions, r = {} of s = {}",
        s.network.vessels().len(),
        s.network.junctions().len(),
        k.rank(),
        u.samples()
    );

    let truth = s.holdout(0)?;
    let noise = Noise {
        fraction: s.noise_fraction,
        seed: 1,
    };
    let m = layout_measurements(s.layout("case2")?, &truth, Some(noise))?;
    let post = predict(&k, &m, fit_noise(&k, &m)?, &s.prediction_points())?;
    let audit = mass_audit(&post, &s.network, &k)?;
    for (j, r) in audit.residual.iter().enumerate() {
        println!(
            "  junction {j}: max relative flux residual {:.2e}",
            r.iter().copied().fold(0.0, f64::max)
        );
    }
    println!("overall {:.2e}", audit.max());
    Ok(())
}
