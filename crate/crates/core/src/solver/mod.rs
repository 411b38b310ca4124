//! Time-domain 1D blood-flow solver on vessel networks.
//!
//! Two integrators share one driver:
//!
//! * [`Mode::Compliant`] advances `(A, u)` with a two-step Lax–Wendroff
//!   scheme, characteristic boundaries, Windkessel outlets and Newton-coupled
//!   junctions.
//! * [`Mode::Rigid`] integrates the stiff-wall limit, where every vessel
//!   carries a uniform flow `Q(t)` and `A = A0(x)`.
//!
//! [`simulate`] spins the network up from rest until two consecutive cardiac
//! cycles agree and returns `m` equispaced snapshots of the final cycle.

mod compliant;
mod rigid;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{resample, SpaceTimeGrid};
use crate::vasc_model::NetworkTopology;

pub use compliant::{BoundaryValue, JunctionFlux, Solver, StepReport};
pub use rigid::RigidSolver;

/// Pressure matched across a junction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JunctionClosure {
    /// `p + ½ρu²`
    #[default]
    TotalPressure,
    StaticPressure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Compliant,
    Rigid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub cfl_number: f64,
    /// s
    pub max_dt: f64,
    pub warmup_cycles: usize,
    pub max_cycles: usize,
    /// Relative L2 change of u between consecutive cycles.
    pub periodicity_tol: f64,
    pub junction_newton_tol: f64,
    pub junction_max_iter: usize,
    pub closure: JunctionClosure,
    /// Upper bound on the solver grid spacing (m). When set, each vessel is
    /// solved on `max(5, ⌈L/max_dx⌉ + 1)` nodes and resampled to its output
    /// nodes; otherwise the output nodes are used directly.
    pub max_dx: Option<f64>,
    pub mode: Mode,
    /// Rigid mode time steps per snapshot interval.
    pub rigid_substeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            cfl_number: 0.5,
            max_dt: 1e-3,
            warmup_cycles: 5,
            max_cycles: 30,
            periodicity_tol: 1e-3,
            junction_newton_tol: 1e-10,
            junction_max_iter: 50,
            closure: JunctionClosure::TotalPressure,
            max_dx: None,
            mode: Mode::Compliant,
            rigid_substeps: 4,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Domain(format!("solver config: {what}")));
        if !(self.cfl_number > 0.0 && self.cfl_number <= 1.0) {
            return bad("cfl_number must lie in (0, 1]");
        }
        if !(self.max_dt > 0.0) {
            return bad("max_dt must be positive");
        }
        if self.warmup_cycles < 1 {
            return bad("warmup_cycles must be at least 1");
        }
        if self.max_cycles < self.warmup_cycles {
            return bad("max_cycles must be at least warmup_cycles");
        }
        if !(self.periodicity_tol > 0.0) || !(self.junction_newton_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.junction_max_iter < 1 {
            return bad("junction_max_iter must be at least 1");
        }
        if let Some(dx) = self.max_dx {
            if !(dx > 0.0) {
                return bad("max_dx must be positive");
            }
        }
        if self.rigid_substeps < 1 {
            return bad("rigid_substeps must be at least 1");
        }
        Ok(())
    }
}

/// Solution on one vessel's solver grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VesselField {
    pub area: Vec<f64>,
    pub velocity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub t: f64,
    pub vessels: Vec<VesselField>,
    /// Windkessel capacitor pressure per outlet.
    pub outlet_pressure: Vec<f64>,
}

/// Volumes over the accepted cycle (m³).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MassBudget {
    pub inflow: f64,
    pub outflow: f64,
    /// Change in vessel volume plus Windkessel charge `C·p_c`.
    pub storage_change: f64,
}

impl MassBudget {
    /// `|in − out − Δstorage| / in`
    pub fn relative_imbalance(&self) -> f64 {
        (self.inflow - self.outflow - self.storage_change).abs() / self.inflow.abs()
    }
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub grid: SpaceTimeGrid,
    /// Per vessel, `[j·m + k]`.
    pub velocity: Vec<Vec<f64>>,
    pub area: Vec<Vec<f64>>,
    /// Per outlet, static pressure at the vessel end for each snapshot.
    pub outlet_pressure: Vec<Vec<f64>>,
    /// Per outlet, volume flow leaving through it for each snapshot.
    pub outlet_flow: Vec<Vec<f64>>,
    /// Cycle-to-cycle relative L2 change of u, one entry per completed cycle after the first.
    pub residual_history: Vec<f64>,
    pub cycles: usize,
    /// Per junction, the largest `|ΣQ_in − ΣQ_out|` over every step of the run
    /// divided by the largest junction flux of the run.
    pub junction_residual: Vec<f64>,
    pub mass_budget: MassBudget,
    pub steps: usize,
    /// Largest `dt / dt_cfl` used.
    pub max_cfl_ratio: f64,
}

impl SimulationResult {
    /// Velocity flattened in grid order.
    pub fn flat_velocity(&self) -> Vec<f64> {
        self.velocity.concat()
    }

    /// Velocity at output node `j`, snapshot `k` of vessel position `vi`.
    pub fn u(&self, vi: usize, j: usize, k: usize) -> f64 {
        self.velocity[vi][j * self.grid.m() + k]
    }

    /// CSV with header `vessel_id,x,t,u,A`, rows ordered by vessel, x, t.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Numerical(format!("csv write failed: {e}"));
        w.write_record(["vessel_id", "x", "t", "u", "A"]).map_err(csv_err)?;
        let m = self.grid.m();
        for (vi, v) in self.grid.vessels.iter().enumerate() {
            for (j, x) in v.x.iter().enumerate() {
                for (k, t) in self.grid.times.iter().enumerate() {
                    w.write_record(&[
                        v.id.to_string(),
                        x.to_string(),
                        t.to_string(),
                        self.velocity[vi][j * m + k].to_string(),
                        self.area[vi][j * m + k].to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        w.flush().map_err(|e| Error::Numerical(format!("csv write failed: {e}")))?;
        Ok(())
    }
}

/// One periodic-state integrator.
trait Integrator {
    /// Advance to exactly `t_target`.
    fn advance_to(&mut self, t_target: f64) -> Result<()>;
    /// Current solution on the solver grid.
    fn fields(&self) -> Vec<(Vec<f64>, Vec<f64>)>;
    fn outlet_state(&self) -> (Vec<f64>, Vec<f64>);
    fn stored_volume(&self) -> f64;
    /// Cumulative boundary volumes since start: (in, out).
    fn boundary_volumes(&self) -> (f64, f64);
    fn junction_residual(&self) -> Vec<f64>;
    fn steps(&self) -> usize;
    fn max_cfl_ratio(&self) -> f64;
    fn solver_grids(&self) -> Vec<Vec<f64>>;
}

/// Solver node count for a vessel under `cfg`.
pub fn solver_nodes(length: f64, output_nodes: usize, cfg: &SolverConfig) -> usize {
    match cfg.max_dx {
        Some(dx) => ((length / dx).ceil() as usize + 1).max(5),
        None => output_nodes,
    }
}

/// Run the network to a periodic state and record `m` snapshots of the final cycle.
pub fn simulate(net: &NetworkTopology, cfg: &SolverConfig, m: usize) -> Result<SimulationResult> {
    cfg.validate()?;
    let grid = SpaceTimeGrid::from_network(net, m)?;
    let period = grid.period;
    let mut integrator: Box<dyn Integrator> = match cfg.mode {
        Mode::Compliant => Box::new(Solver::new(net, cfg.clone())?),
        Mode::Rigid => Box::new(RigidSolver::new(net, cfg.clone(), period / (m * cfg.rigid_substeps) as f64)?),
    };
    let solver_grids = integrator.solver_grids();
    let nv = grid.vessels.len();
    let no = net.outlets().len();

    let mut history = Vec::new();
    let mut scratch = Vec::new();
    // Cycle 1 is compared with the initial state held constant in time.
    let mut previous: Vec<Vec<f64>> = {
        let fields = integrator.fields();
        (0..nv)
            .map(|vi| {
                resample(&solver_grids[vi], &fields[vi].1, &grid.vessels[vi].x, &mut scratch);
                scratch.iter().flat_map(|u| std::iter::repeat_n(*u, m)).collect()
            })
            .collect()
    };
    for cycle in 1..=cfg.max_cycles {
        let start = (cycle - 1) as f64 * period;
        let mut velocity: Vec<Vec<f64>> = grid.vessels.iter().map(|v| vec![0.0; v.x.len() * m]).collect();
        let mut area = velocity.clone();
        let mut outlet_pressure = vec![vec![0.0; m]; no];
        let mut outlet_flow = vec![vec![0.0; m]; no];
        let volume0 = integrator.stored_volume();
        let (in0, out0) = integrator.boundary_volumes();
        for k in 0..m {
            let fields = integrator.fields();
            for vi in 0..nv {
                let xo = &grid.vessels[vi].x;
                let (a, u) = &fields[vi];
                resample(&solver_grids[vi], u, xo, &mut scratch);
                for (j, val) in scratch.iter().enumerate() {
                    velocity[vi][j * m + k] = *val;
                }
                resample(&solver_grids[vi], a, xo, &mut scratch);
                for (j, val) in scratch.iter().enumerate() {
                    area[vi][j * m + k] = *val;
                }
            }
            let (p, q) = integrator.outlet_state();
            for o in 0..no {
                outlet_pressure[o][k] = p[o];
                outlet_flow[o][k] = q[o];
            }
            integrator.advance_to(start + (k + 1) as f64 * period / m as f64)?;
        }
        let (in1, out1) = integrator.boundary_volumes();
        let budget = MassBudget {
            inflow: in1 - in0,
            outflow: out1 - out0,
            storage_change: integrator.stored_volume() - volume0,
        };
        {
            let (mut diff, mut norm) = (0.0, 0.0);
            for (a, b) in velocity.iter().flatten().zip(previous.iter().flatten()) {
                diff += (a - b) * (a - b);
                norm += a * a;
            }
            let residual = if diff == 0.0 { 0.0 } else { (diff / norm).sqrt() };
            history.push(residual);
            log::debug!("cycle {cycle}: periodicity residual {residual:.3e}");
            if cycle >= cfg.warmup_cycles && residual < cfg.periodicity_tol {
                return Ok(SimulationResult {
                    grid,
                    velocity,
                    area,
                    outlet_pressure,
                    outlet_flow,
                    residual_history: history,
                    cycles: cycle,
                    junction_residual: integrator.junction_residual(),
                    mass_budget: budget,
                    steps: integrator.steps(),
                    max_cfl_ratio: integrator.max_cfl_ratio(),
                });
            }
        }
        previous = velocity;
    }
    Err(Error::Periodicity { history })
}

#[cfg(test)]
mod tests;
