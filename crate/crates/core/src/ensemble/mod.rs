//! Randomized parameter sampling and ensemble simulation.
//!
//! Each scalar parameter `ξ` is drawn from its mean `ξ̄` and spread `σ` with
//! `ψ ~ U[−0.5, 0.5]`:
//!
//! * additive (inlet waveform): `ξ = ξ̄ + σψ`
//! * multiplicative (outflow `Rt`, `C`; vessel area): `ξ = ξ̄(1 + σψ)`
//!
//! Sample `i` draws from a ChaCha8 stream selected by `i`, so any column can be
//! regenerated from `(seed, i)` alone.

mod waveform;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::solver::{simulate, SolverConfig};
use crate::vasc_model::{Inlet, NetworkTopology, Vessel, WindkesselOutlet};

pub use waveform::InletWaveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadMode {
    Additive,
    Multiplicative,
}

/// Spreads for one inlet waveform; component lists match the waveform's.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InletSpread {
    pub a0: f64,
    pub peaks: Vec<f64>,
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutletSpread {
    pub total_resistance: f64,
    pub compliance: f64,
}

/// `[randomize]` section of a scenario document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    /// Keyed by inlet vessel id.
    pub inlet: BTreeMap<String, InletSpread>,
    /// Applied to every outlet.
    pub outlet: OutletSpread,
    /// Spread of the equilibrium-area multiplier, applied to every vessel.
    pub area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    InletBase(usize),
    InletPeak(usize, usize),
    InletCenter(usize, usize),
    InletWidth(usize, usize),
    Resistance(usize),
    Compliance(usize),
    AreaMultiplier(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarParameter {
    pub name: String,
    pub mean: f64,
    pub spread: f64,
    pub mode: SpreadMode,
    target: Target,
}

impl ScalarParameter {
    /// Closed interval of attainable values.
    pub fn support(&self) -> (f64, f64) {
        match self.mode {
            SpreadMode::Additive => (self.mean - 0.5 * self.spread, self.mean + 0.5 * self.spread),
            SpreadMode::Multiplicative => {
                let (a, b) = (self.mean * (1.0 - 0.5 * self.spread), self.mean * (1.0 + 0.5 * self.spread));
                (a.min(b), a.max(b))
            }
        }
    }

    fn realize(&self, psi: f64) -> f64 {
        match self.mode {
            SpreadMode::Additive => self.mean + self.spread * psi,
            SpreadMode::Multiplicative => self.mean * (1.0 + self.spread * psi),
        }
    }

    /// Physical admissibility of a realized value.
    fn admissible(&self, value: f64) -> bool {
        match self.target {
            Target::InletWidth(..) | Target::Resistance(_) | Target::AreaMultiplier(_) => value > 0.0,
            Target::Compliance(_) => value >= 0.0,
            _ => value.is_finite(),
        }
    }
}

/// Flat list of randomized scalars for one network, plus the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizationSpec {
    pub seed: u64,
    parameters: Vec<ScalarParameter>,
}

impl RandomizationSpec {
    /// Means come from the nominal network; spreads from `config`.
    pub fn new(net: &NetworkTopology, config: &RandomizationConfig, seed: u64) -> Result<Self> {
        let mut parameters = Vec::new();
        let mut push = |name: String, mean: f64, spread: f64, mode: SpreadMode, target: Target| {
            parameters.push(ScalarParameter {
                name,
                mean,
                spread,
                mode,
                target,
            })
        };
        for key in config.inlet.keys() {
            let id: u32 = key
                .parse()
                .map_err(|_| Error::Parse(format!("[randomize.inlet.{key}]: key must be a vessel id")))?;
            if !net.inlets().iter().any(|i| i.vessel == id) {
                return Err(Error::Topology(format!("randomize.inlet.{key}: vessel {id} has no inlet")));
            }
        }
        for (ii, inlet) in net.inlets().iter().enumerate() {
            let w = &inlet.waveform;
            let n = w.components();
            let spread = config.inlet.get(&inlet.vessel.to_string()).cloned().unwrap_or_default();
            let list = |v: &Vec<f64>, what: &str| -> Result<Vec<f64>> {
                match v.len() {
                    0 => Ok(vec![0.0; n]),
                    len if len == n => Ok(v.clone()),
                    len => Err(Error::Domain(format!(
                        "randomize.inlet.{}.{what}: {len} spreads for {n} components",
                        inlet.vessel
                    ))),
                }
            };
            let (peaks, centers, widths) = (
                list(&spread.peaks, "peaks")?,
                list(&spread.centers, "centers")?,
                list(&spread.widths, "widths")?,
            );
            let prefix = format!("inlet.{}", inlet.vessel);
            push(format!("{prefix}.a0"), w.a0, spread.a0, SpreadMode::Additive, Target::InletBase(ii));
            for c in 0..n {
                push(
                    format!("{prefix}.peaks[{c}]"),
                    w.peaks[c],
                    peaks[c],
                    SpreadMode::Additive,
                    Target::InletPeak(ii, c),
                );
                push(
                    format!("{prefix}.centers[{c}]"),
                    w.centers[c],
                    centers[c],
                    SpreadMode::Additive,
                    Target::InletCenter(ii, c),
                );
                push(
                    format!("{prefix}.widths[{c}]"),
                    w.widths[c],
                    widths[c],
                    SpreadMode::Additive,
                    Target::InletWidth(ii, c),
                );
            }
        }
        for (o, out) in net.outlets().iter().enumerate() {
            let prefix = format!("outlet.{}", out.vessel);
            push(
                format!("{prefix}.total_resistance"),
                out.total_resistance,
                config.outlet.total_resistance,
                SpreadMode::Multiplicative,
                Target::Resistance(o),
            );
            push(
                format!("{prefix}.compliance"),
                out.compliance,
                config.outlet.compliance,
                SpreadMode::Multiplicative,
                Target::Compliance(o),
            );
        }
        for (k, v) in net.vessels().iter().enumerate() {
            push(
                format!("vessel.{}.area_multiplier", v.id),
                1.0,
                config.area,
                SpreadMode::Multiplicative,
                Target::AreaMultiplier(k),
            );
        }
        let spec = RandomizationSpec { seed, parameters };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.parameters {
            if !(p.spread >= 0.0 && p.spread.is_finite()) {
                return Err(Error::Domain(format!("{}: spread must be non-negative, got {}", p.name, p.spread)));
            }
            if p.mode == SpreadMode::Multiplicative && p.mean != 0.0 && !(p.mean * (1.0 - 0.5 * p.spread) > 0.0) {
                return Err(Error::Domain(format!(
                    "{}: multiplicative spread {} admits non-positive values",
                    p.name, p.spread
                )));
            }
        }
        Ok(())
    }

    pub fn parameters(&self) -> &[ScalarParameter] {
        &self.parameters
    }

    pub fn names(&self) -> Vec<String> {
        self.parameters.iter().map(|p| p.name.clone()).collect()
    }

    /// Same spreads around the same means, different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        RandomizationSpec {
            seed,
            parameters: self.parameters.clone(),
        }
    }

    /// Realized network for `sample`. Proximal resistances stay at their
    /// nominal values.
    pub fn realize(&self, net: &NetworkTopology, sample: &ParameterSample) -> Result<NetworkTopology> {
        if sample.values.len() != self.parameters.len() {
            return Err(Error::Invariant(format!(
                "sample has {} values for {} parameters",
                sample.values.len(),
                self.parameters.len()
            )));
        }
        let mut inlets: Vec<Inlet> = net.inlets().to_vec();
        let mut outlet_values: Vec<(f64, f64)> = net.outlets().iter().map(|o| (o.total_resistance, o.compliance)).collect();
        let mut vessels: Vec<Vessel> = net.vessels().to_vec();
        for (p, &value) in self.parameters.iter().zip(&sample.values) {
            match p.target {
                Target::InletBase(i) => inlets[i].waveform.a0 = value,
                Target::InletPeak(i, c) => inlets[i].waveform.peaks[c] = value,
                Target::InletCenter(i, c) => inlets[i].waveform.centers[c] = value,
                Target::InletWidth(i, c) => inlets[i].waveform.widths[c] = value,
                Target::Resistance(o) => outlet_values[o].0 = value,
                Target::Compliance(o) => outlet_values[o].1 = value,
                Target::AreaMultiplier(k) => vessels[k].area = vessels[k].area.scaled(value),
            }
        }
        let outlets = net
            .outlets()
            .iter()
            .zip(&outlet_values)
            .map(|(o, (rt, c))| {
                o.with_parameters(*rt, *c).map_err(|_| Error::Rejected {
                    sample: sample.index,
                    parameter: format!("outlet.{}.distal_resistance", o.vessel),
                    value: rt - o.proximal_resistance(),
                })
            })
            .collect::<Result<Vec<WindkesselOutlet>>>()?;
        net.rebuild(vessels, inlets, outlets)
    }
}

/// One realized draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSample {
    pub index: usize,
    pub seed: u64,
    /// In [`RandomizationSpec::parameters`] order.
    pub values: Vec<f64>,
}

impl ParameterSample {
    pub fn describe(&self, names: &[String]) -> String {
        let mut s = format!("seed {} index {}:", self.seed, self.index);
        for (n, v) in names.iter().zip(&self.values) {
            let _ = write!(s, " {n}={v}");
        }
        s
    }
}

/// Deterministic draw for `(spec.seed, index)`. Every scalar consumes one
/// variate whether or not its spread is zero.
pub fn sample_parameters(spec: &RandomizationSpec, index: usize) -> Result<ParameterSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let mut values = Vec::with_capacity(spec.parameters.len());
    for p in &spec.parameters {
        let psi: f64 = rng.gen::<f64>() - 0.5;
        let value = if p.spread == 0.0 { p.mean } else { p.realize(psi) };
        if !p.admissible(value) {
            return Err(Error::Rejected {
                sample: index,
                parameter: p.name.clone(),
                value,
            });
        }
        values.push(value);
    }
    Ok(ParameterSample {
        index,
        seed: spec.seed,
        values,
    })
}

/// Per-sample diagnostics recorded next to the realized parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub values: Vec<f64>,
    pub cycles: usize,
    pub max_junction_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub seed: u64,
    pub parameters: Vec<String>,
    #[serde(rename = "sample")]
    pub samples: Vec<SampleRecord>,
}

impl EnsembleManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always serializable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("manifest", e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Realized parameter set of column `j`.
    pub fn sample(&self, j: usize) -> ParameterSample {
        ParameterSample {
            index: self.samples[j].index,
            seed: self.seed,
            values: self.samples[j].values.clone(),
        }
    }
}

/// `N × s` ensemble of flattened velocity fields.
#[derive(Debug, Clone)]
pub struct SnapshotMatrix {
    pub values: DMatrix<f64>,
    pub grid: SpaceTimeGrid,
    pub manifest: EnsembleManifest,
}

impl SnapshotMatrix {
    pub fn samples(&self) -> usize {
        self.values.ncols()
    }

    /// Columns `range` as a new matrix.
    pub fn columns(&self, range: std::ops::Range<usize>) -> SnapshotMatrix {
        SnapshotMatrix {
            values: self.values.columns(range.start, range.len()).into_owned(),
            grid: self.grid.clone(),
            manifest: EnsembleManifest {
                seed: self.manifest.seed,
                parameters: self.manifest.parameters.clone(),
                samples: self.manifest.samples[range].to_vec(),
            },
        }
    }

    /// Debug export: `vessel_id,x,t,s0,s1,…` in grid order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Numerical(format!("csv write failed: {e}"));
        let mut header = vec!["vessel_id".to_string(), "x".into(), "t".into()];
        header.extend((0..self.samples()).map(|j| format!("s{j}")));
        w.write_record(&header).map_err(err)?;
        for (i, p) in self.grid.points().iter().enumerate() {
            let mut row = vec![p.vessel.to_string(), p.x.to_string(), p.t.to_string()];
            row.extend(self.values.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Numerical(format!("csv write failed: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOptions {
    pub samples: usize,
    /// Snapshots per period `m`.
    pub snapshots: usize,
    /// Output nodes per vessel; the network's own counts when `None`.
    pub nodes: Option<usize>,
    /// Worker threads; 0 lets the thread pool decide.
    pub jobs: usize,
}

/// Run `options.samples` independent simulations and stack their velocity
/// fields column by column.
pub fn run_ensemble(
    net: &NetworkTopology,
    spec: &RandomizationSpec,
    options: &EnsembleOptions,
    cfg: &SolverConfig,
) -> Result<SnapshotMatrix> {
    if options.samples < 2 {
        return Err(Error::Domain(format!("ensemble needs at least 2 samples, got {}", options.samples)));
    }
    let net = match options.nodes {
        Some(n) => net.with_nodes(n)?,
        None => net.clone(),
    };
    let grid = SpaceTimeGrid::from_network(&net, options.snapshots)?;
    let names = spec.names();
    let run_one = |index: usize| -> Result<(Vec<f64>, SampleRecord)> {
        let sample = sample_parameters(spec, index)?;
        let wrap = |e: Error| Error::Sample {
            index,
            parameters: sample.describe(&names),
            source: Box::new(e),
        };
        let realized = spec.realize(&net, &sample).map_err(wrap)?;
        let result = simulate(&realized, cfg, options.snapshots).map_err(wrap)?;
        log::info!("sample {index}: {} cycles, {} steps", result.cycles, result.steps);
        let record = SampleRecord {
            index,
            values: sample.values,
            cycles: result.cycles,
            max_junction_residual: result.junction_residual.iter().copied().fold(0.0, f64::max),
        };
        Ok((result.flat_velocity(), record))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    let columns: Vec<(Vec<f64>, SampleRecord)> =
        pool.install(|| (0..options.samples).into_par_iter().map(run_one).collect::<Result<Vec<_>>>())?;
    let n = grid.len();
    let mut values = DMatrix::zeros(n, options.samples);
    let mut samples = Vec::with_capacity(options.samples);
    for (j, (col, record)) in columns.into_iter().enumerate() {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("non-finite velocity in sample {}", record.index)));
        }
        values.column_mut(j).copy_from_slice(&col);
        samples.push(record);
    }
    Ok(SnapshotMatrix {
        values,
        grid,
        manifest: EnsembleManifest {
            seed: spec.seed,
            parameters: names,
            samples,
        },
    })
}
