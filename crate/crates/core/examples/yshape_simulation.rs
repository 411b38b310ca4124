//! Y-shape bifurcation at mean parameters. Writes `yshape.csv` and reports
//! junction conservation and the mass budget of the last cycle.

use std::fs::File;
use std::io::BufWriter;

use vasckernel::scenarios::Scenario;
use vasckernel::solver::simulate;

fn main() -> vasckernel::Result<()> {
    let s = Scenario::yshape();
    let net = s.network.with_nodes(s.nodes)?;
    let r = simulate(&net, &s.solver, s.snapshots)?;
    println!(
        "converged in {} cycles, last residual {:.2e}",
        r.cycles,
        r.residual_history.last().copied().unwrap_or(0.0)
    );
    println!(
        "max junction residual {:.2e}",
        r.junction_residual.iter().copied().fold(0.0, f64::max)
    );
    println!("mass imbalance over the last cycle {:.2e}", r.mass_budget.relative_imbalance());
    for (vi, v) in r.grid.vessels.iter().enumerate() {
        let mid = v.x.len() / 2;
        let u: Vec<f64> = (0..r.grid.m()).map(|k| r.u(vi, mid, k)).collect();
        let (lo, hi) = u
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
        println!("vessel {} midpoint: u in [{lo:.3}, {hi:.3}] m/s", v.id);
    }
    let out = File::create("yshape.csv").map_err(|e| vasckernel::Error::Io {
        path: "yshape.csv".into(),
        source: e,
    })?;
    r.write_csv(BufWriter::new(out))?;
    println!("wrote yshape.csv ({} rows)", r.grid.len());
    Ok(())
}
