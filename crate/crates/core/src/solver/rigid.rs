//! Stiff-wall limit of the 1D equations.
//!
//! With `A ≡ A0(x)` continuity makes the flow `Q(t)` uniform along each
//! vessel, and integrating momentum over the length gives
//!
//! `ρ·I·dQ/dt = H_start − H_end − 22πμ·J·Q`,  `I = ∫dx/A0`, `J = ∫dx/A0²`,
//!
//! with `H = p + ½ρu²` the total pressure at each end. Junctions impose flux
//! balance and a common pressure, outlets the RCR circuit. The resulting DAE
//! is integrated with BDF2 (backward Euler on the first step).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::vasc_model::{uniform_grid, Attachment, NetworkTopology, FRICTION_PROFILE};

use super::{Integrator, JunctionClosure, SolverConfig};

struct RigidVessel {
    inertance: f64,
    resistance: f64,
    a_start: f64,
    a_end: f64,
    volume: f64,
    x: Vec<f64>,
    a0: Vec<f64>,
}

pub struct RigidSolver {
    net: NetworkTopology,
    cfg: SolverConfig,
    dt: f64,
    rho: f64,
    /// `22πμ`
    friction: f64,
    vessels: Vec<RigidVessel>,
    /// Unknowns: `[Q per vessel, pressure per junction, p_c per outlet]`.
    y: DVector<f64>,
    y_prev: Option<DVector<f64>>,
    t: f64,
    inflow_volume: f64,
    outflow_volume: f64,
    /// Per junction: largest `|ΣQ_in − ΣQ_out|` and largest `|Q|`.
    junction_flux: Vec<(f64, f64)>,
    steps: usize,
}

fn simpson(f: impl Fn(f64) -> f64, length: f64) -> f64 {
    let n = 256;
    let h = length / n as f64;
    let mut s = f(0.0) + f(length);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

impl RigidSolver {
    pub fn new(net: &NetworkTopology, cfg: SolverConfig, dt: f64) -> Result<Self> {
        cfg.validate()?;
        net.period()?;
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("rigid time step must be positive, got {dt}")));
        }
        let vessels = net
            .vessels()
            .iter()
            .map(|v| {
                let x = uniform_grid(v.length, v.nodes);
                RigidVessel {
                    inertance: simpson(|x| 1.0 / v.area0(x), v.length),
                    resistance: simpson(|x| v.area0(x).powi(-2), v.length),
                    a_start: v.area0(0.0),
                    a_end: v.area0(v.length),
                    volume: simpson(|x| v.area0(x), v.length),
                    a0: x.iter().map(|x| v.area0(*x)).collect(),
                    x,
                }
            })
            .collect();
        let (nv, nj) = (net.vessels().len(), net.junctions().len());
        let mut y = DVector::zeros(nv + nj + net.outlets().len());
        for (o, out) in net.outlets().iter().enumerate() {
            y[nv + nj + o] = out.downstream_pressure;
        }
        Ok(RigidSolver {
            net: net.clone(),
            rho: net.blood().density,
            friction: FRICTION_PROFILE * net.blood().viscosity,
            cfg,
            dt,
            vessels,
            y,
            y_prev: None,
            t: 0.0,
            inflow_volume: 0.0,
            outflow_volume: 0.0,
            junction_flux: vec![(0.0, 0.0); nj],
            steps: 0,
        })
    }

    fn junction_var(&self, j: usize) -> usize {
        self.net.vessels().len() + j
    }

    fn outlet_var(&self, o: usize) -> usize {
        self.net.vessels().len() + self.net.junctions().len() + o
    }

    /// Residual and Jacobian at the candidate `y` for the step ending at `t`.
    fn system(&self, y: &DVector<f64>, hist: &DVector<f64>, alpha: f64, dt: f64, t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = y.len();
        let mut f = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, n);
        let rho = self.rho;
        let dynamic = match self.cfg.closure {
            JunctionClosure::TotalPressure => 0.0,
            JunctionClosure::StaticPressure => 1.0,
        };
        for (k, v) in self.vessels.iter().enumerate() {
            let q = y[k];
            let ends = self.net.ends(k);
            if let Attachment::Inlet(i) = ends.start {
                f[k] = q - v.a_start * self.net.inlets()[i].waveform.evaluate(t);
                jac[(k, k)] = 1.0;
                continue;
            }
            let mut value = rho * v.inertance * (alpha * q + hist[k]) / dt + self.friction * v.resistance * q;
            let mut slope = rho * v.inertance * alpha / dt + self.friction * v.resistance;
            if let Attachment::Junction(j) = ends.start {
                let jv = self.junction_var(j);
                value -= y[jv] + dynamic * 0.5 * rho * (q / v.a_start).powi(2);
                slope -= dynamic * rho * q / (v.a_start * v.a_start);
                jac[(k, jv)] = -1.0;
            }
            match ends.end {
                Attachment::Junction(j) => {
                    let jv = self.junction_var(j);
                    value += y[jv] + dynamic * 0.5 * rho * (q / v.a_end).powi(2);
                    slope += dynamic * rho * q / (v.a_end * v.a_end);
                    jac[(k, jv)] = 1.0;
                }
                Attachment::Outlet(o) => {
                    let ov = self.outlet_var(o);
                    let r1 = self.net.outlets()[o].proximal_resistance();
                    value += y[ov] + r1 * q + 0.5 * rho * (q / v.a_end).powi(2);
                    slope += r1 + rho * q / (v.a_end * v.a_end);
                    jac[(k, ov)] = 1.0;
                }
                Attachment::Inlet(_) => unreachable!("inlets attach to vessel starts"),
            }
            f[k] = value;
            jac[(k, k)] = slope;
        }
        for (j, jn) in self.net.junctions().iter().enumerate() {
            let row = self.junction_var(j);
            for id in &jn.parents {
                let k = self.net.position(*id).expect("validated");
                f[row] += y[k];
                jac[(row, k)] = 1.0;
            }
            for id in &jn.children {
                let k = self.net.position(*id).expect("validated");
                f[row] -= y[k];
                jac[(row, k)] = -1.0;
            }
        }
        for (o, out) in self.net.outlets().iter().enumerate() {
            let row = self.outlet_var(o);
            let k = self.net.position(out.vessel).expect("validated");
            let pc = y[row];
            let r2 = out.distal_resistance();
            if r2 > 0.0 {
                f[row] = out.compliance * (alpha * pc + hist[row]) / dt - y[k] + (pc - out.downstream_pressure) / r2;
                jac[(row, row)] = out.compliance * alpha / dt + 1.0 / r2;
                jac[(row, k)] = -1.0;
            } else {
                f[row] = pc - out.downstream_pressure;
                jac[(row, row)] = 1.0;
            }
        }
        (f, jac)
    }

    fn flows(&self, y: &DVector<f64>) -> (f64, f64) {
        let inflow = self
            .net
            .inlets()
            .iter()
            .map(|i| y[self.net.position(i.vessel).expect("validated")])
            .sum();
        let outflow = self
            .net
            .outlets()
            .iter()
            .map(|o| y[self.net.position(o.vessel).expect("validated")])
            .sum();
        (inflow, outflow)
    }

    fn step(&mut self, dt: f64) -> Result<()> {
        let t_new = self.t + dt;
        // BDF2: (3y − 4yⁿ + yⁿ⁻¹)/(2dt); first step backward Euler.
        let (alpha, hist) = match &self.y_prev {
            Some(prev) => (1.5, &self.y * -2.0 + prev * 0.5),
            None => (1.0, -&self.y),
        };
        let nv = self.net.vessels().len();
        let mut y = self.y.clone();
        let mut converged = false;
        let mut residual_norm = f64::INFINITY;
        for _ in 0..self.cfg.junction_max_iter {
            let (f, jac) = self.system(&y, &hist, alpha, dt, t_new);
            residual_norm = f.amax();
            let delta = jac
                .lu()
                .solve(&(-f))
                .ok_or_else(|| Error::Numerical("singular rigid-network Jacobian".into()))?;
            y += &delta;
            let q_scale = y.rows(0, nv).amax().max(1e-300);
            let p_scale = y.rows(nv, y.len() - nv).amax().max(1.0);
            let small = (0..y.len()).all(|i| {
                let scale = if i < nv { q_scale } else { p_scale };
                delta[i].abs() <= 1e-12 * scale
            });
            if small {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Newton {
                location: format!("rigid network at t = {t_new}"),
                iterations: self.cfg.junction_max_iter,
                residual: residual_norm,
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite rigid solution at t = {t_new}")));
        }
        for (j, jn) in self.net.junctions().iter().enumerate() {
            let q = |id: &u32| y[self.net.position(*id).expect("validated")];
            let net_flux: f64 = jn.parents.iter().map(q).sum::<f64>() - jn.children.iter().map(q).sum::<f64>();
            let max_q = jn.parents.iter().chain(&jn.children).map(|id| q(id).abs()).fold(0.0, f64::max);
            let acc = &mut self.junction_flux[j];
            acc.0 = acc.0.max(net_flux.abs());
            acc.1 = acc.1.max(max_q);
        }
        let (in0, out0) = self.flows(&self.y);
        let (in1, out1) = self.flows(&y);
        self.inflow_volume += 0.5 * dt * (in0 + in1);
        self.outflow_volume += 0.5 * dt * (out0 + out1);
        self.y_prev = Some(std::mem::replace(&mut self.y, y));
        self.t = t_new;
        self.steps += 1;
        Ok(())
    }

    /// Current volume flow through each vessel.
    pub fn flows_per_vessel(&self) -> Vec<f64> {
        self.y.rows(0, self.net.vessels().len()).iter().copied().collect()
    }
}

impl Integrator for RigidSolver {
    fn advance_to(&mut self, t_target: f64) -> Result<()> {
        let steps = ((t_target - self.t) / self.dt).round().max(1.0) as usize;
        let dt = (t_target - self.t) / steps as f64;
        for _ in 0..steps {
            self.step(dt)?;
        }
        self.t = t_target;
        Ok(())
    }

    fn fields(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.vessels
            .iter()
            .enumerate()
            .map(|(k, v)| (v.a0.clone(), v.a0.iter().map(|a| self.y[k] / a).collect()))
            .collect()
    }

    fn outlet_state(&self) -> (Vec<f64>, Vec<f64>) {
        self.net
            .outlets()
            .iter()
            .enumerate()
            .map(|(o, out)| {
                let q = self.y[self.net.position(out.vessel).expect("validated")];
                (self.y[self.outlet_var(o)] + out.proximal_resistance() * q, q)
            })
            .unzip()
    }

    fn stored_volume(&self) -> f64 {
        let vessels: f64 = self.vessels.iter().map(|v| v.volume).sum();
        let windkessel: f64 = self
            .net
            .outlets()
            .iter()
            .enumerate()
            .map(|(o, out)| out.compliance * self.y[self.outlet_var(o)])
            .sum();
        vessels + windkessel
    }

    fn boundary_volumes(&self) -> (f64, f64) {
        (self.inflow_volume, self.outflow_volume)
    }

    fn junction_residual(&self) -> Vec<f64> {
        self.junction_flux.iter().map(|(r, q)| if *q > 0.0 { r / q } else { *r }).collect()
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn max_cfl_ratio(&self) -> f64 {
        0.0
    }

    fn solver_grids(&self) -> Vec<Vec<f64>> {
        self.vessels.iter().map(|v| v.x.clone()).collect()
    }
}
