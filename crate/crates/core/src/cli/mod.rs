//! Command-line front-end.

mod plot;
mod validate;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::ensemble::{run_ensemble, EnsembleManifest, EnsembleOptions};
use crate::error::{Error, Result};
use crate::gp::{self, MeasurementSet};
use crate::kernel::{self, energy_profile, KernelOptions, RankSelection};
use crate::scenarios::{layout_measurements, Noise, Scenario};
use crate::solver::{simulate, SolverConfig};
use crate::vasc_model::{load_network, NetworkTopology};

pub use plot::{render_svg, PlotSeries};

const FORMATS: &str = "\
FILE FORMATS

  simulate output CSV      vessel_id,x,t,u,A        rows ordered by vessel, x, t
  measurement CSV          vessel_id,x,t,u
  prediction request CSV   vessel_id,x,t
  posterior CSV            vessel_id,x,t,mean,std
  spectrum CSV             index,sigma,lambda,energy

  Units: x in m, t in s, u in m/s, A in m^2.

.hkrn CONTAINER (little-endian, f64 as IEEE-754)

  magic \"HKRN\" | version u32 | flags u32 (bit0: Y stored, bit1: snapshot matrix)
  N u64 | r u64 | s u64 | vessel count u32 | m u32 | period f64 | energy threshold f64
  per vessel: id u32, n u32, length f64, x[n] f64
  t[m] f64 | sigma[s] f64 | lambda[r] f64 | Phi N x r row-major | Y s x r row-major
  crc32 u32 over all preceding bytes
  (a snapshot matrix stores U, N x s, in place of sigma/lambda/Phi/Y)

EXIT CODES

  0 success, 2 input error, 3 numerical or convergence error, 4 invariant violation";

#[derive(Debug, Parser)]
#[command(name = "vasckernel", version, about = "Empirical GP kernels for 1D blood-flow reconstruction", after_long_help = FORMATS)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation to a periodic state and write its snapshots.
    Simulate(SimulateArgs),
    /// Run a randomized ensemble and store the snapshot matrix.
    Ensemble(EnsembleArgs),
    /// Compress a stored ensemble into a low-rank kernel.
    BuildKernel(BuildKernelArgs),
    /// Sample a scenario's held-out ground truth at a measurement layout.
    Measure(MeasureArgs),
    /// Posterior mean and std at query points.
    Predict(PredictArgs),
    /// Run the invariant checks of every module.
    Validate(ValidateArgs),
    /// SVG time series of a posterior with a ±2σ band and ground truth.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Network or scenario config (TOML).
    pub config: PathBuf,
    #[arg(long, default_value = "simulation.csv")]
    pub out: PathBuf,
    /// Maximum number of cardiac cycles.
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub periodicity_tol: Option<f64>,
    /// Snapshots per period; defaults to the scenario's value or 100.
    #[arg(long)]
    pub snapshots: Option<usize>,
    /// Output nodes per vessel; defaults to the config's values.
    #[arg(long)]
    pub nodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Scenario config (TOML).
    pub scenario: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "ensemble")]
    pub out: PathBuf,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Also write the snapshot matrix as CSV.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct BuildKernelArgs {
    /// Directory written by `ensemble`.
    pub ensemble: PathBuf,
    #[arg(long, default_value_t = 0.99, conflicts_with = "rank")]
    pub energy: f64,
    /// Fixed rank instead of the energy rule.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub keep_right_vectors: bool,
    /// Defaults to `<ensemble>/kernel.hkrn`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    /// Scenario config (TOML).
    pub scenario: PathBuf,
    #[arg(long, default_value = "case2")]
    pub layout: String,
    /// Sampling interval; defaults to the layout's.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Noise std as a fraction of the signal RMS; defaults to the scenario's.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Index into the held-out sample stream.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    #[arg(long, default_value = "measurements.csv")]
    pub out: PathBuf,
    /// Write the full ground-truth simulation CSV here.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Write the scenario's prediction points here.
    #[arg(long)]
    pub queries: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    pub kernel: PathBuf,
    pub measurements: PathBuf,
    pub queries: PathBuf,
    /// Fit σ_n by minimizing the NLML (default when --noise-std is absent).
    #[arg(long, conflicts_with = "noise_std")]
    pub fit_noise: bool,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long, default_value = "posterior.csv")]
    pub out: PathBuf,
    /// Also plot the series at the first query's vessel and x.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Posterior CSV.
    pub posterior: PathBuf,
    /// Ground truth: any CSV with vessel_id,x,t,u columns.
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub vessel: u32,
    #[arg(long)]
    pub x: f64,
    #[arg(long, default_value = "plot.svg")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Ensemble(a) => cmd_ensemble(a),
        Command::BuildKernel(a) => cmd_build_kernel(a),
        Command::Measure(a) => cmd_measure(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Validate(_) => validate::cmd_validate(),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Network plus solver settings and snapshot count from a config that may or
/// may not carry a `[scenario]` table.
fn load_config(path: &Path) -> Result<(NetworkTopology, SolverConfig, Option<usize>)> {
    let text = read_text(path)?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    if table.contains_key("scenario") {
        let s = Scenario::parse(&text)?;
        let net = s.network.with_nodes(s.nodes)?;
        return Ok((net, s.solver, Some(s.snapshots)));
    }
    let net = load_network(&text)?;
    let solver = match table.get("solver") {
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse(format!("[solver]: {e}")))?,
        None => SolverConfig::default(),
    };
    Ok((net, solver, None))
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let (mut net, mut cfg, m) = load_config(&a.config)?;
    if let Some(n) = a.nodes {
        net = net.with_nodes(n)?;
    }
    if let Some(c) = a.cycles {
        cfg.max_cycles = c;
        cfg.warmup_cycles = cfg.warmup_cycles.min(c);
    }
    if let Some(t) = a.periodicity_tol {
        cfg.periodicity_tol = t;
    }
    let m = a.snapshots.or(m).unwrap_or(100);
    let result = simulate(&net, &cfg, m)?;
    let mut log: Vec<String> = result
        .residual_history
        .iter()
        .enumerate()
        .map(|(i, r)| format!("cycle {}: periodicity residual {r:.6e}", i + 1))
        .collect();
    log.push(format!(
        "converged after {} cycles ({} steps); max junction residual {:.3e}; mass imbalance {:.3e}",
        result.cycles,
        result.steps,
        result.junction_residual.iter().copied().fold(0.0, f64::max),
        result.mass_budget.relative_imbalance()
    ));
    let log_path = a.out.with_extension("log");
    std::fs::write(&log_path, log.join("\n") + "\n").map_err(|e| Error::io(&log_path, e))?;
    for line in &log {
        println!("{line}");
    }
    result.write_csv(create(&a.out)?)?;
    println!(
        "wrote {} rows to {} and the convergence log to {}",
        result.grid.len(),
        a.out.display(),
        log_path.display()
    );
    Ok(())
}

fn cmd_ensemble(a: EnsembleArgs) -> Result<()> {
    let seed = a
        .seed
        .ok_or_else(|| Error::Domain("ensemble requires --seed (no implicit randomness)".into()))?;
    let text = read_text(&a.scenario)?;
    let s = Scenario::parse(&text)?;
    let spec = s.randomization_spec()?.with_seed(seed);
    let options = EnsembleOptions {
        samples: a.samples.unwrap_or(s.samples),
        ..s.ensemble_options(a.jobs)
    };
    let u = run_ensemble(&s.network, &spec, &options, &s.solver)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    u.manifest.save(&a.out.join("manifest.toml"))?;
    kernel::save_snapshots(&u, &a.out.join("snapshots.hkrn"))?;
    std::fs::write(a.out.join("scenario.toml"), &text).map_err(|e| Error::io(a.out.join("scenario.toml"), e))?;
    if a.csv {
        u.write_csv(create(&a.out.join("snapshots.csv"))?)?;
    }
    println!(
        "ensemble: {} samples, N = {} ({} nodes x {} snapshots), written to {}",
        u.samples(),
        u.grid.len(),
        u.grid.space_nodes(),
        u.grid.m(),
        a.out.display()
    );
    Ok(())
}

fn cmd_build_kernel(a: BuildKernelArgs) -> Result<()> {
    let manifest = EnsembleManifest::load(&a.ensemble.join("manifest.toml"))?;
    let u = kernel::load_snapshots(&a.ensemble.join("snapshots.hkrn"), manifest)?;
    let selection = match a.rank {
        Some(r) => RankSelection::Fixed(r),
        None => RankSelection::Energy(a.energy),
    };
    let k = kernel::build_kernel_with(
        &u.values,
        &u.grid,
        &KernelOptions {
            selection,
            keep_right_vectors: a.keep_right_vectors,
        },
    )?;
    let out = a.out.unwrap_or_else(|| a.ensemble.join("kernel.hkrn"));
    kernel::save_kernel(&k, &out)?;
    let spectrum = out.with_file_name("spectrum.csv");
    let mut w = create(&spectrum)?;
    let energy = energy_profile(k.singular_values());
    let s = k.samples() as f64;
    writeln!(w, "index,sigma,lambda,energy").map_err(|e| Error::io(&spectrum, e))?;
    for (i, (sigma, e)) in k.singular_values().iter().zip(&energy).enumerate() {
        writeln!(w, "{},{},{},{}", i + 1, sigma, sigma * sigma / s, e).map_err(|e| Error::io(&spectrum, e))?;
    }
    w.flush().map_err(|e| Error::io(&spectrum, e))?;
    println!(
        "rank r = {} of s = {}; energy captured {:.6}",
        k.rank(),
        k.samples(),
        k.captured_energy()
    );
    println!("wrote {} and {}", out.display(), spectrum.display());
    Ok(())
}

fn cmd_measure(a: MeasureArgs) -> Result<()> {
    let s = Scenario::load(&a.scenario)?;
    let layout = s.layout(&a.layout)?;
    let layout = match a.dt {
        Some(dt) => layout.with_dt(dt),
        None => layout.clone(),
    };
    let truth = s.holdout(a.holdout)?;
    let fraction = a.noise.unwrap_or(s.noise_fraction);
    let noise = (fraction > 0.0).then(|| Noise {
        fraction,
        seed: a.seed.unwrap_or(s.holdout_seed),
    });
    let m = layout_measurements(&layout, &truth, noise)?;
    gp::write_measurements(create(&a.out)?, &m)?;
    println!("wrote {} measurements to {}", m.len(), a.out.display());
    if let Some(path) = &a.truth {
        truth.write_csv(create(path)?)?;
    }
    if let Some(path) = &a.queries {
        gp::write_queries(create(path)?, &s.prediction_points())?;
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let k = kernel::load_kernel(&a.kernel)?;
    let mut m: MeasurementSet = gp::read_measurements(open(&a.measurements)?)?;
    m.noise_std = a.noise_std;
    let queries = gp::read_queries(open(&a.queries)?)?;
    let variance = gp::noise_variance(&k, &m)?;
    if a.noise_std.is_none() {
        println!("fitted noise std sigma_n = {:.6e} m/s", variance.sqrt());
    }
    let post = gp::predict(&k, &m, variance, &queries)?;
    gp::write_posterior(create(&a.out)?, &post)?;
    println!("wrote {} predictions to {}", post.points.len(), a.out.display());
    if let (Some(path), Some(first)) = (&a.plot, post.points.first()) {
        let mut rows: Vec<usize> = (0..post.points.len())
            .filter(|&i| post.points[i].vessel == first.vessel && post.points[i].x == first.x)
            .collect();
        rows.sort_by(|i, j| post.points[*i].t.total_cmp(&post.points[*j].t));
        let series = PlotSeries {
            t: rows.iter().map(|&i| post.points[i].t).collect(),
            mean: rows.iter().map(|&i| post.mean[i]).collect(),
            std: rows.iter().map(|&i| post.std[i]).collect(),
            truth: None,
            title: format!("vessel {} at x = {} m", first.vessel, first.x),
        };
        std::fs::write(path, render_svg(&series)).map_err(|e| Error::io(path, e))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct PosteriorRow {
    vessel_id: u32,
    x: f64,
    t: f64,
    mean: f64,
    std: f64,
}

#[derive(serde::Deserialize)]
struct TruthRow {
    vessel_id: u32,
    x: f64,
    t: f64,
    u: f64,
}

fn read_csv<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    rd.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Rows of `vessel` at the stored x closest to `x`, sorted by time.
fn select<T>(rows: Vec<T>, key: impl Fn(&T) -> (u32, f64, f64), vessel: u32, x: f64, what: &Path) -> Result<Vec<T>> {
    let nearest = rows
        .iter()
        .map(&key)
        .filter(|(v, _, _)| *v == vessel)
        .map(|(_, px, _)| px)
        .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
        .ok_or_else(|| Error::Domain(format!("{} has no rows for vessel {vessel}", what.display())))?;
    let mut out: Vec<T> = rows.into_iter().filter(|r| key(r).0 == vessel && key(r).1 == nearest).collect();
    out.sort_by(|a, b| key(a).2.total_cmp(&key(b).2));
    Ok(out)
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let post: Vec<PosteriorRow> = read_csv(&a.posterior)?;
    let post = select(post, |r| (r.vessel_id, r.x, r.t), a.vessel, a.x, &a.posterior)?;
    let series = PlotSeries {
        t: post.iter().map(|r| r.t).collect(),
        mean: post.iter().map(|r| r.mean).collect(),
        std: post.iter().map(|r| r.std).collect(),
        truth: match &a.truth {
            Some(path) => {
                let rows: Vec<TruthRow> = read_csv(path)?;
                let rows = select(rows, |r| (r.vessel_id, r.x, r.t), a.vessel, a.x, path)?;
                Some(rows.iter().map(|r| (r.t, r.u)).collect())
            }
            None => None,
        },
        title: format!("vessel {} at x = {} m", a.vessel, post[0].x),
    };
    std::fs::write(&a.out, render_svg(&series)).map_err(|e| Error::io(&a.out, e))?;
    println!("wrote {}", a.out.display());
    Ok(())
}
