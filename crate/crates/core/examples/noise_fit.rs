//! NLML over the noise variance for data drawn from a known prior.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use vasckernel::gp::{fit_noise, nlml, MeasurementSet};
use vasckernel::kernel::build_kernel;
use vasckernel::scenarios::{layout_measurements, Scenario};

fn main() -> vasckernel::Result<()> {
    let mut s = Scenario::yshape();
    s.samples = 30;
    let u = s.run_ensemble(0)?;
    let k = build_kernel(&u, s.energy_threshold)?;
    let points = layout_measurements(s.layout("case2")?, &s.holdout(0)?, None)?.points;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = DVector::from_fn(k.rank(), |i, _| {
        k.eigenvalues()[i].sqrt() * Distribution::<f64>::sample(&StandardNormal, &mut rng)
    });
    let f = k.basis_rows(&points)? * z;
    let std = 0.05 * (f.norm_squared() / f.len() as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let values = f.iter().map(|v| v + normal.sample(&mut rng)).collect();
    let m = MeasurementSet::new(points, values)?;

    for factor in [0.1, 0.3, 1.0, 3.0, 10.0] {
        let var = (factor * std).powi(2);
        println!("sigma_n = {:>4} x true: NLML {:>12.3}", factor, nlml(&k, &m, var)?);
    }
    let fitted = fit_noise(&k, &m)?.sqrt();
    println!("injected {std:.4e}, fitted {fitted:.4e} (ratio {:.3})", fitted / std);
    Ok(())
}
