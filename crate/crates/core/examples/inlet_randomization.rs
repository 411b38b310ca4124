//! Draw randomized parameters for the Y-shape and show the spread of the
//! resulting inlet waveforms.

use vasckernel::ensemble::sample_parameters;
use vasckernel::scenarios::Scenario;

fn main() -> vasckernel::Result<()> {
    let s = Scenario::yshape();
    let spec = s.randomization_spec()?;
    for p in spec.parameters() {
        let (lo, hi) = p.support();
        println!("{:<32} mean {:>10.4e}  support [{lo:.4e}, {hi:.4e}]", p.name, p.mean);
    }

    let draws = 50;
    let times: Vec<f64> = (0..16).map(|k| k as f64 * 0.05).collect();
    let mut band = vec![(f64::INFINITY, f64::NEG_INFINITY); times.len()];
    for i in 0..draws {
        let sample = sample_parameters(&spec, i)?;
        let net = spec.realize(&s.network, &sample)?;
        let w = &net.inlets()[0].waveform;
        for (b, t) in band.iter_mut().zip(&times) {
            let u = w.evaluate(*t);
            *b = (b.0.min(u), b.1.max(u));
        }
    }
    println!("\ninlet velocity envelope over {draws} draws:");
    let mean = &s.network.inlets()[0].waveform;
    for (t, (lo, hi)) in times.iter().zip(&band) {
        println!("  t = {t:.2}  [{lo:>6.3}, {hi:>6.3}]  mean-parameter {:.3}", mean.evaluate(*t));
    }
    Ok(())
}
