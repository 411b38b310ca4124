//! Bundled configurations and measurement layouts.
//!
//! A scenario document is a network config with extra tables:
//!
//! ```toml
//! [scenario]            # name, version, samples, nodes, snapshots,
//!                       # energy_threshold, seed, holdout_seed, noise_fraction
//! [solver]              # SolverConfig fields
//! [randomize]           # RandomizationConfig
//! [layout.<name>]       # dt, points = [{ vessel, x }]
//! [predict]             # points = [{ vessel, x }]
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::ensemble::{run_ensemble, sample_parameters, EnsembleOptions, RandomizationConfig, RandomizationSpec, SnapshotMatrix};
use crate::error::{Error, Result};
use crate::gp::MeasurementSet;
use crate::grid::SpaceTimePoint;
use crate::solver::{simulate, SimulationResult, SolverConfig};
use crate::vasc_model::{load_network, NetworkTopology, VesselId};

pub const YSHAPE: &str = include_str!("../../../scenarios/yshape.toml");
pub const AORTA: &str = include_str!("../../../scenarios/aorta.toml");

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutPoint {
    pub vessel: VesselId,
    pub x: f64,
}

/// Points sampled every `dt` over one period.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub dt: f64,
    pub points: Vec<LayoutPoint>,
}

impl Layout {
    /// Same points at a different sampling interval.
    pub fn with_dt(&self, dt: f64) -> Layout {
        Layout {
            dt,
            points: self.points.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    name: String,
    version: u32,
    samples: usize,
    nodes: usize,
    snapshots: usize,
    #[serde(default = "default_energy")]
    energy_threshold: f64,
    seed: u64,
    holdout_seed: u64,
    #[serde(default)]
    noise_fraction: f64,
}

fn default_energy() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct Predict {
    points: Vec<LayoutPoint>,
}

#[derive(Deserialize)]
struct Doc {
    scenario: Header,
    #[serde(default)]
    solver: SolverConfig,
    #[serde(default)]
    randomize: RandomizationConfig,
    #[serde(default)]
    layout: BTreeMap<String, Layout>,
    #[serde(default)]
    predict: Option<Predict>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub version: u32,
    pub network: NetworkTopology,
    pub randomization: RandomizationConfig,
    pub solver: SolverConfig,
    /// Ensemble size `s`.
    pub samples: usize,
    /// Output nodes per vessel `n`.
    pub nodes: usize,
    /// Snapshots per period `m`.
    pub snapshots: usize,
    pub energy_threshold: f64,
    pub seed: u64,
    /// Reserved for the held-out ground truth; never used by the ensemble.
    pub holdout_seed: u64,
    /// Measurement noise std as a fraction of the signal RMS.
    pub noise_fraction: f64,
    pub layouts: BTreeMap<String, Layout>,
    pub predict: Vec<LayoutPoint>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let network = load_network(text)?;
        let doc: Doc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let h = doc.scenario;
        doc.solver.validate()?;
        let scenario = Scenario {
            name: h.name,
            version: h.version,
            network,
            randomization: doc.randomize,
            solver: doc.solver,
            samples: h.samples,
            nodes: h.nodes,
            snapshots: h.snapshots,
            energy_threshold: h.energy_threshold,
            seed: h.seed,
            holdout_seed: h.holdout_seed,
            noise_fraction: h.noise_fraction,
            layouts: doc.layout,
            predict: doc.predict.map(|p| p.points).unwrap_or_default(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn yshape() -> Self {
        Self::parse(YSHAPE).expect("bundled fixture is valid")
    }

    pub fn aorta() -> Self {
        Self::parse(AORTA).expect("bundled fixture is valid")
    }

    fn validate(&self) -> Result<()> {
        if self.seed == self.holdout_seed {
            return Err(Error::Domain("holdout_seed must differ from the ensemble seed".into()));
        }
        if self.samples < 2 || self.nodes < 2 || self.snapshots < 2 {
            return Err(Error::Domain("samples, nodes and snapshots must each be at least 2".into()));
        }
        if !(self.noise_fraction >= 0.0) {
            return Err(Error::Domain(format!(
                "noise_fraction must be non-negative, got {}",
                self.noise_fraction
            )));
        }
        let check = |p: &LayoutPoint, what: &str| -> Result<()> {
            let v = self
                .network
                .vessel(p.vessel)
                .ok_or_else(|| Error::Topology(format!("{what} references unknown vessel {}", p.vessel)))?;
            if !(p.x >= 0.0 && p.x <= v.length) {
                return Err(Error::Domain(format!(
                    "{what}: x = {} outside vessel {} (length {})",
                    p.x, v.id, v.length
                )));
            }
            Ok(())
        };
        for (name, layout) in &self.layouts {
            if !(layout.dt > 0.0) || layout.points.is_empty() {
                return Err(Error::Domain(format!("layout {name} needs dt > 0 and at least one point")));
            }
            for p in &layout.points {
                check(p, &format!("layout {name}"))?;
            }
        }
        for p in &self.predict {
            check(p, "predict")?;
        }
        self.randomization_spec().map(|_| ())
    }

    pub fn layout(&self, name: &str) -> Result<&Layout> {
        self.layouts
            .get(name)
            .ok_or_else(|| Error::Domain(format!("scenario {} has no layout {name}", self.name)))
    }

    pub fn randomization_spec(&self) -> Result<RandomizationSpec> {
        RandomizationSpec::new(&self.network, &self.randomization, self.seed)
    }

    pub fn ensemble_options(&self, jobs: usize) -> EnsembleOptions {
        EnsembleOptions {
            samples: self.samples,
            snapshots: self.snapshots,
            nodes: Some(self.nodes),
            jobs,
        }
    }

    pub fn run_ensemble(&self, jobs: usize) -> Result<SnapshotMatrix> {
        run_ensemble(
            &self.network,
            &self.randomization_spec()?,
            &self.ensemble_options(jobs),
            &self.solver,
        )
    }

    /// Ground truth drawn with the reserved seed.
    pub fn holdout(&self, index: usize) -> Result<SimulationResult> {
        let spec = self.randomization_spec()?.with_seed(self.holdout_seed);
        let sample = sample_parameters(&spec, index)?;
        let net = spec.realize(&self.network.with_nodes(self.nodes)?, &sample)?;
        simulate(&net, &self.solver, self.snapshots)
    }

    /// Prediction points at every snapshot time.
    pub fn prediction_points(&self) -> Vec<SpaceTimePoint> {
        let m = self.snapshots;
        let period = self.network.period().expect("validated");
        self.predict
            .iter()
            .flat_map(|p| (0..m).map(move |k| SpaceTimePoint::new(p.vessel, p.x, k as f64 * period / m as f64)))
            .collect()
    }
}

/// Additive Gaussian noise with std `fraction · RMS(signal)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub fraction: f64,
    pub seed: u64,
}

/// Sample `truth` at the layout's points every `dt` over one period.
/// Points must coincide with nodes of the ground-truth grid.
pub fn layout_measurements(layout: &Layout, truth: &SimulationResult, noise: Option<Noise>) -> Result<MeasurementSet> {
    let grid = &truth.grid;
    let m = grid.m();
    let per = grid.period / layout.dt;
    let count = per.round() as usize;
    if count == 0 || (per - count as f64).abs() > 1e-9 * per {
        return Err(Error::Domain(format!(
            "dt = {} does not divide the period {}",
            layout.dt, grid.period
        )));
    }
    if !m.is_multiple_of(count) {
        return Err(Error::Domain(format!(
            "dt = {} is not a multiple of the ground-truth snapshot interval {}",
            layout.dt,
            grid.period / m as f64
        )));
    }
    let stride = m / count;
    let mut points = Vec::with_capacity(layout.points.len() * count);
    let mut values = Vec::with_capacity(points.capacity());
    for lp in &layout.points {
        let vi = grid
            .vessel_index(lp.vessel)
            .ok_or_else(|| Error::Domain(format!("layout vessel {} not in the ground truth", lp.vessel)))?;
        let v = &grid.vessels[vi];
        let j =
            v.x.iter()
                .position(|x| (x - lp.x).abs() <= 1e-12 * v.length)
                .ok_or_else(|| Error::Domain(format!("layout point x = {} is not a grid node of vessel {}", lp.x, lp.vessel)))?;
        for c in 0..count {
            let k = c * stride;
            points.push(SpaceTimePoint::new(lp.vessel, v.x[j], grid.times[k]));
            values.push(truth.u(vi, j, k));
        }
    }
    if let Some(noise) = noise {
        let rms = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
        let std = noise.fraction * rms;
        if std > 0.0 {
            let normal = Normal::new(0.0, std).map_err(|e| Error::Domain(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            for v in &mut values {
                *v += normal.sample(&mut rng);
            }
        }
    }
    MeasurementSet::new(points, values)
}

/// Ground-truth velocity at an arbitrary point by bilinear interpolation.
pub fn truth_at(truth: &SimulationResult, p: &SpaceTimePoint) -> Result<f64> {
    let grid = &truth.grid;
    let vi = grid
        .vessel_index(p.vessel)
        .ok_or_else(|| Error::Domain(format!("unknown vessel {}", p.vessel)))?;
    let base = grid.offset(vi) * grid.m();
    Ok(grid.locate(p)?.iter().map(|(i, w)| w * truth.velocity[vi][i - base]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::SpreadMode;
    use crate::vasc_model::serialize_network;

    #[test]
    fn yshape_fixture_values() {
        let s = Scenario::yshape();
        let net = &s.network;
        let expect = [
            (1, 0.1703, 1.36e-5, 6.97e7),
            (2, 0.007, 1.81e-6, 5.42e8),
            (3, 0.00667, 1.36e-5, 6.96e7),
        ];
        for (id, length, area, beta) in expect {
            let v = net.vessel(id).unwrap();
            assert_eq!(v.length, length);
            assert_eq!(v.area0(0.0), area);
            assert_eq!(v.beta, beta);
        }
        assert_eq!(net.outlets()[0].total_resistance, 1.19e10);
        assert_eq!(net.outlets()[0].compliance, 0.3428e-10);
        assert_eq!(net.outlets()[1].total_resistance, 0.2702e10);
        assert_eq!(net.outlets()[1].compliance, 0.6661e-10);
        let w = &net.inlets()[0].waveform;
        assert_eq!((w.period, w.a0), (0.8, 0.5));
        assert_eq!(w.peaks, vec![-0.5, 3.0, -1.0, -0.1]);
        assert_eq!(w.centers, vec![0.08, 0.2, 0.4, 0.6]);
        assert_eq!(w.widths, vec![2e-3, 5e-3, 1.5e-2, 0.01]);
        let r = &s.randomization;
        let i = &r.inlet["1"];
        assert_eq!(i.a0, 0.5);
        assert_eq!(i.peaks, vec![0.0, 0.9, 0.5, 0.9]);
        assert_eq!(i.centers, vec![0.02, 0.1, 0.15, 0.3]);
        assert_eq!(i.widths, vec![0.0, 1e-3, 1e-3, 0.0]);
        assert_eq!((r.outlet.total_resistance, r.outlet.compliance, r.area), (0.05, 0.05, 0.5));
        assert_eq!((s.samples, s.nodes, s.snapshots, s.energy_threshold), (200, 100, 160, 0.99));
        let spec = s.randomization_spec().unwrap();
        assert!(spec
            .parameters()
            .iter()
            .filter(|p| p.name.starts_with("outlet"))
            .all(|p| p.mode == SpreadMode::Multiplicative));
    }

    #[test]
    fn aorta_fixture_shape() {
        let s = Scenario::aorta();
        assert_eq!(s.network.vessels().len(), 17);
        assert_eq!(s.network.outlets().len(), 9);
        assert_eq!(s.network.junctions().len(), 8);
        assert_eq!(s.samples, 150);
        assert_eq!(s.network.period().unwrap(), 1.0);
        let spec = s.randomization_spec().unwrap();
        for p in spec.parameters() {
            if !p.name.starts_with("inlet") {
                assert_eq!(p.spread, 0.0, "{}", p.name);
            }
        }
        for (id, rt) in [(9, 4.1823e10), (17, 9.5299e10)] {
            let o = s.network.outlets().iter().find(|o| o.vessel == id).unwrap();
            assert_eq!(o.total_resistance, rt);
            assert!(o.distal_resistance() > 0.0);
        }
    }

    #[test]
    fn fixtures_round_trip_through_network_loader() {
        for text in [YSHAPE, AORTA] {
            let net = load_network(text).unwrap();
            assert!(!net.has_loops());
            assert_eq!(load_network(&serialize_network(&net)).unwrap(), net);
        }
    }

    #[test]
    fn midpoints_are_half_lengths() {
        for s in [Scenario::yshape(), Scenario::aorta()] {
            for p in &s.predict {
                assert_eq!(p.x, s.network.vessel(p.vessel).unwrap().length / 2.0);
            }
        }
    }

    fn cheap_truth() -> SimulationResult {
        let s = Scenario::yshape();
        let net = s.network.with_nodes(6).unwrap();
        let cfg = SolverConfig {
            max_dx: Some(4e-3),
            ..s.solver.clone()
        };
        simulate(&net, &cfg, 160).unwrap()
    }

    #[test]
    fn case_layouts_have_expected_sizes() {
        let s = Scenario::yshape();
        let truth = cheap_truth();
        let case1 = layout_measurements(s.layout("case1").unwrap(), &truth, None).unwrap();
        assert_eq!(case1.len(), 160);
        assert!(case1.points.iter().all(|p| p.vessel == 1 && p.x == 0.0));
        let case2 = layout_measurements(s.layout("case2").unwrap(), &truth, None).unwrap();
        assert_eq!(case2.len(), 240);
        for id in 1..=3 {
            assert_eq!(case2.points.iter().filter(|p| p.vessel == id).count(), 80);
        }
        // Noiseless extraction is exact.
        for (p, u) in case2.points.iter().zip(&case2.values) {
            assert_eq!(*u, truth_at(&truth, p).unwrap());
        }
    }

    #[test]
    fn noise_is_seeded_and_scaled() {
        let s = Scenario::yshape();
        let truth = cheap_truth();
        let layout = s.layout("case1").unwrap();
        let clean = layout_measurements(layout, &truth, None).unwrap();
        let noise = Some(Noise { fraction: 0.05, seed: 3 });
        let a = layout_measurements(layout, &truth, noise).unwrap();
        let b = layout_measurements(layout, &truth, noise).unwrap();
        assert_eq!(a, b);
        let rms = (clean.values.iter().map(|v| v * v).sum::<f64>() / 160.0).sqrt();
        let resid = (a.values.iter().zip(&clean.values).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 160.0).sqrt();
        assert!((resid / (0.05 * rms) - 1.0).abs() < 0.25, "{}", resid / (0.05 * rms));
    }

    #[test]
    fn off_grid_layouts_are_rejected() {
        let truth = cheap_truth();
        let off_x = Layout {
            dt: 0.01,
            points: vec![LayoutPoint { vessel: 1, x: 0.001 }],
        };
        assert!(layout_measurements(&off_x, &truth, None).is_err());
        let off_t = Layout {
            dt: 0.003,
            points: vec![LayoutPoint { vessel: 1, x: 0.0 }],
        };
        assert!(layout_measurements(&off_t, &truth, None).is_err());
        let unknown = Layout {
            dt: 0.01,
            points: vec![LayoutPoint { vessel: 8, x: 0.0 }],
        };
        assert!(layout_measurements(&unknown, &truth, None).is_err());
    }

    #[test]
    fn bad_scenarios_are_rejected() {
        let same_seed = YSHAPE.replace("holdout_seed = 9001", "holdout_seed = 20240611");
        assert!(Scenario::parse(&same_seed).is_err());
        let bad_layout = YSHAPE.replace("{ vessel = 2, x = 0.0 }", "{ vessel = 5, x = 0.0 }");
        assert!(Scenario::parse(&bad_layout).is_err());
        let bad_x = YSHAPE.replace("{ vessel = 2, x = 0.0035 }", "{ vessel = 2, x = 0.5 }");
        assert!(Scenario::parse(&bad_x).is_err());
    }
}
