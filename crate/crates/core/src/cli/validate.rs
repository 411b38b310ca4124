//! `validate`: quick invariant checks across modules.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensemble::{sample_parameters, InletWaveform};
use crate::error::{Error, Result};
use crate::gp::{self, MeasurementSet};
use crate::kernel::{self, KernelOptions, RankSelection};
use crate::scenarios::Scenario;
use crate::solver::{simulate, SimulationResult};

struct Check {
    name: &'static str,
    outcome: Result<String>,
}

fn ensure(ok: bool, detail: String) -> Result<String> {
    if ok {
        Ok(detail)
    } else {
        Err(Error::Invariant(detail))
    }
}

fn tube_law() -> Result<String> {
    let s = Scenario::yshape();
    let mut worst: f64 = 0.0;
    for v in s.network.vessels() {
        let law = v.tube_law(0.0);
        let a0 = v.area0(0.0);
        let p0 = law.pressure(a0)?;
        worst = worst.max((p0 - v.external_pressure).abs());
        if !(law.pressure(0.9 * a0)? < p0 && p0 < law.pressure(1.1 * a0)?) {
            return Err(Error::Invariant(format!("pressure not increasing in A on vessel {}", v.id)));
        }
    }
    ensure(worst == 0.0, "p(A0) equals external pressure, p increasing in A".into())
}

fn waveform() -> Result<String> {
    let s = Scenario::yshape();
    let w: &InletWaveform = &s.network.inlets()[0].waveform;
    let mut err: f64 = 0.0;
    for i in 0..50 {
        let t = i as f64 * w.period / 50.0;
        err = err.max((w.evaluate(t) - w.evaluate(t + 3.0 * w.period)).abs());
    }
    ensure(err < 1e-12, format!("max |Q(t) - Q(t + 3T)| = {err:.1e}"))
}

fn sampling() -> Result<String> {
    let spec = Scenario::yshape().randomization_spec()?;
    for i in 0..64 {
        let a = sample_parameters(&spec, i)?;
        let b = sample_parameters(&spec, i)?;
        if a.values != b.values {
            return Err(Error::Invariant(format!("sample {i} not reproducible")));
        }
        for (p, v) in spec.parameters().iter().zip(&a.values) {
            let (lo, hi) = p.support();
            if !(*v >= lo && *v <= hi) {
                return Err(Error::Invariant(format!("{} = {v} outside [{lo}, {hi}]", p.name)));
            }
        }
    }
    Ok("64 draws reproducible and inside their supports".into())
}

fn coarse_solve() -> Result<SimulationResult> {
    let s = Scenario::yshape();
    let mut cfg = s.solver.clone();
    cfg.max_dx = Some(3e-3);
    simulate(&s.network.with_nodes(6)?, &cfg, 20)
}

fn junction(r: &SimulationResult) -> Result<String> {
    let res = r.junction_residual.iter().copied().fold(0.0, f64::max);
    let mass = r.mass_budget.relative_imbalance();
    ensure(
        res <= 1e-6 && mass < 1e-3,
        format!("junction residual {res:.1e}, mass imbalance {mass:.1e}"),
    )
}

fn kernel_checks(r: &SimulationResult) -> Result<String> {
    let grid = r.grid.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = 12;
    let u = DMatrix::from_fn(grid.len(), s, |_, _| rng.gen::<f64>() - 0.5);
    let k = kernel::build_kernel_with(
        &u,
        &grid,
        &KernelOptions {
            selection: RankSelection::Energy(1.0),
            keep_right_vectors: true,
        },
    )?;
    let ortho = k.orthonormality_error();
    let dense = &u * u.transpose() / s as f64;
    let mut err: f64 = 0.0;
    for (a, b) in [(0, 0), (0, 1), (1, 3), (2, 5)] {
        let (p, q) = (grid.node(0, a, b), grid.node(grid.vessels.len() - 1, b, a));
        err = err.max((k.eval_kernel(&p, &q)? - dense[(grid.index(0, a, b), grid.index(grid.vessels.len() - 1, b, a))]).abs());
    }
    let sorted = k.eigenvalues().windows(2).all(|w| w[0] >= w[1]) && k.eigenvalues().iter().all(|l| *l >= 0.0);
    ensure(
        ortho < 1e-10 && err < 1e-12 && sorted,
        format!("orthonormality {ortho:.1e}, dense-oracle error {err:.1e}, eigenvalues sorted and non-negative: {sorted}"),
    )
}

fn gp_checks(r: &SimulationResult) -> Result<String> {
    let grid = r.grid.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u = DMatrix::from_fn(grid.len(), 10, |_, _| rng.gen::<f64>() - 0.5);
    let k = kernel::build_kernel_with(&u, &grid, &KernelOptions::default())?;
    let points: Vec<_> = (0..5).map(|j| grid.node(0, j, j)).collect();
    let values: Vec<f64> = points.iter().map(|p| k.eval_kernel(p, &points[0])).collect::<Result<_>>()?;
    let m = MeasurementSet::new(points.clone(), values)?;
    let queries: Vec<_> = (0..grid.m()).map(|t| grid.node(1, 2, t)).chain(points.iter().cloned()).collect();
    let post = gp::predict(&k, &m, 0.0, &queries)?;
    let mut excess: f64 = 0.0;
    for (q, sd) in queries.iter().zip(&post.std) {
        excess = excess.max(sd * sd - k.eval_kernel(q, q)?);
    }
    let fit = post.mean[grid.m()..]
        .iter()
        .zip(&m.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(
        excess <= 1e-12 && fit < 1e-6,
        format!("posterior variance excess {excess:.1e}, noise-free interpolation error {fit:.1e}"),
    )
}

fn container(r: &SimulationResult) -> Result<String> {
    let grid = r.grid.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = DMatrix::from_fn(grid.len(), 6, |_, _| rng.gen::<f64>());
    let k = kernel::build_kernel_with(
        &u,
        &grid,
        &KernelOptions {
            selection: RankSelection::Fixed(4),
            keep_right_vectors: true,
        },
    )?;
    let path = std::env::temp_dir().join(format!("vasckernel-validate-{}.hkrn", std::process::id()));
    kernel::save_kernel(&k, &path)?;
    let back = kernel::load_kernel(&path);
    let _ = std::fs::remove_file(&path);
    let back = back?;
    let same = back.basis() == k.basis()
        && back.eigenvalues() == k.eigenvalues()
        && back.singular_values() == k.singular_values()
        && back.right_vectors() == k.right_vectors()
        && back.grid() == k.grid();
    ensure(same, "save/load is bit-identical".into())
}

fn fixtures() -> Result<String> {
    let y = Scenario::parse(crate::scenarios::YSHAPE)?;
    let a = Scenario::parse(crate::scenarios::AORTA)?;
    Ok(format!(
        "{} ({} vessels) and {} ({} vessels) parse",
        y.name,
        y.network.vessels().len(),
        a.name,
        a.network.vessels().len()
    ))
}

pub(super) fn cmd_validate() -> Result<()> {
    let mut checks = vec![
        Check {
            name: "tube law",
            outcome: tube_law(),
        },
        Check {
            name: "inlet periodicity",
            outcome: waveform(),
        },
        Check {
            name: "parameter sampling",
            outcome: sampling(),
        },
        Check {
            name: "scenario fixtures",
            outcome: fixtures(),
        },
    ];
    match coarse_solve() {
        Ok(r) => {
            checks.push(Check {
                name: "junction conservation",
                outcome: junction(&r),
            });
            checks.push(Check {
                name: "kernel decomposition",
                outcome: kernel_checks(&r),
            });
            checks.push(Check {
                name: "posterior variance",
                outcome: gp_checks(&r),
            });
            checks.push(Check {
                name: "hkrn round trip",
                outcome: container(&r),
            });
        }
        Err(e) => checks.push(Check {
            name: "coarse y-shape solve",
            outcome: Err(e),
        }),
    }
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut failed = 0;
    for c in &checks {
        match &c.outcome {
            Ok(d) => println!("PASS  {:width$}  {d}", c.name),
            Err(e) => {
                failed += 1;
                println!("FAIL  {:width$}  {e}", c.name)
            }
        }
    }
    if failed > 0 {
        return Err(Error::Invariant(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}
