//! Reconstruct a held-out Y-shape flow from Case 1 and Case 2 measurements.
//!
//!     cargo run --release --example reconstruct_yshape -- [samples]

use vasckernel::gp::{fit_noise, predict};
use vasckernel::kernel::{build_kernel_with, KernelOptions, RankSelection};
use vasckernel::scenarios::{layout_measurements, truth_at, Noise, Scenario};

fn main() -> vasckernel::Result<()> {
    let samples = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    let mut s = Scenario::yshape();
    s.samples = samples;
    let u = s.run_ensemble(0)?;
    let truth = s.holdout(0)?;
    let queries = s.prediction_points();

    for selection in [RankSelection::Energy(s.energy_threshold), RankSelection::Fixed(u.samples())] {
        let k = build_kernel_with(
            &u.values,
            &u.grid,
            &KernelOptions {
                selection,
                keep_right_vectors: false,
            },
        )?;
        println!("kernel rank {}", k.rank());
        for case in ["case1", "case2"] {
            let noise = Noise {
                fraction: s.noise_fraction,
                seed: 1,
            };
            let m = layout_measurements(s.layout(case)?, &truth, Some(noise))?;
            let var = fit_noise(&k, &m)?;
            let post = predict(&k, &m, var, &queries)?;
            let (mut e2, mut t2, mut inside) = (0.0, 0.0, 0);
            for (i, q) in queries.iter().enumerate() {
                let t = truth_at(&truth, q)?;
                e2 += (post.mean[i] - t).powi(2);
                t2 += t * t;
                inside += ((post.mean[i] - t).abs() <= 2.0 * post.std[i]) as usize;
            }
            println!(
                "  {case}: {} obs, sigma_n = {:.4}, rel. L2 error {:.3}, coverage {:.2}, mean std {:.4}",
                m.len(),
                var.sqrt(),
                (e2 / t2).sqrt(),
                inside as f64 / queries.len() as f64,
                post.std.iter().sum::<f64>() / post.std.len() as f64
            );
        }
    }
    Ok(())
}
