use crate::error::{Error, Result};
use crate::vasc_model::{uniform_grid, NetworkTopology, FRICTION_PROFILE};

use super::{solver_nodes, FieldState, Integrator, JunctionClosure, SolverConfig, VesselField};

/// Discretized, immutable per-vessel data.
#[derive(Debug, Clone)]
struct Geometry {
    n: usize,
    dx: f64,
    x: Vec<f64>,
    a0: Vec<f64>,
    sqrt_a0: Vec<f64>,
    c0: Vec<f64>,
    /// `√A0` at cell midpoints, from the average of the two nodal areas.
    sqrt_a0_half: Vec<f64>,
    beta: f64,
    pext: f64,
}

impl Geometry {
    #[inline]
    fn c(&self, area: f64, rho: f64) -> f64 {
        (self.beta * area.sqrt() / (2.0 * rho)).sqrt()
    }

    #[inline]
    fn pressure(&self, area: f64, j: usize) -> f64 {
        self.pext + self.beta * (area.sqrt() - self.sqrt_a0[j])
    }

    fn a0(&self, j: usize) -> f64 {
        self.a0[j]
    }
}

/// Boundary node values produced by a boundary condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryValue {
    pub area: f64,
    pub velocity: f64,
}

/// Flux balance at one junction after a solve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JunctionFlux {
    /// `|ΣQ_parents − ΣQ_children|`
    pub residual: f64,
    /// Largest `|Q|` over the attached ends.
    pub max_flux: f64,
}

impl JunctionFlux {
    /// Residual over flux scale; zero when nothing flows.
    pub fn relative(&self) -> f64 {
        if self.max_flux > 0.0 {
            self.residual / self.max_flux
        } else {
            self.residual
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub junctions: Vec<JunctionFlux>,
    /// Total inlet volume flow at the new time.
    pub inflow: f64,
    /// Total outlet volume flow at the new time.
    pub outflow: f64,
}

/// Compliant-wall Lax–Wendroff solver bound to one network.
pub struct Solver {
    net: NetworkTopology,
    cfg: SolverConfig,
    geom: Vec<Geometry>,
    rho: f64,
    /// `22πμ/ρ`
    friction: f64,
    state: FieldState,
    inflow_volume: f64,
    outflow_volume: f64,
    last_flows: (f64, f64),
    /// Per junction: largest flux residual and largest flux seen.
    junction_flux: Vec<JunctionFlux>,
    steps: usize,
    max_courant: f64,
}

/// A vessel end attached to a junction. `sign` is +1 for a parent's distal
/// end and −1 for a child's proximal end.
struct JunctionEnd {
    vessel: usize,
    node: usize,
    sign: f64,
    invariant: f64,
}

impl Solver {
    pub fn new(net: &NetworkTopology, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        net.period()?;
        let blood = *net.blood();
        let rho = blood.density;
        let geom: Vec<Geometry> = net
            .vessels()
            .iter()
            .map(|v| {
                let n = solver_nodes(v.length, v.nodes, &cfg);
                let x = uniform_grid(v.length, n);
                let a0: Vec<f64> = x.iter().map(|x| v.area0(*x)).collect();
                let sqrt_a0: Vec<f64> = a0.iter().map(|a| a.sqrt()).collect();
                let c0 = a0.iter().map(|a| (v.beta * a.sqrt() / (2.0 * rho)).sqrt()).collect();
                let sqrt_a0_half = a0.windows(2).map(|w: &[f64]| ((w[0] + w[1]) * 0.5).sqrt()).collect();
                Geometry {
                    n,
                    dx: v.length / (n - 1) as f64,
                    x,
                    a0,
                    sqrt_a0,
                    c0,
                    sqrt_a0_half,
                    beta: v.beta,
                    pext: v.external_pressure,
                }
            })
            .collect();
        for (v, g) in net.vessels().iter().zip(&geom) {
            if (0..g.n).any(|j| !(g.a0(j) > 0.0)) {
                return Err(Error::Invalid {
                    vessel: v.id,
                    field: "area",
                    reason: "non-positive equilibrium area on solver grid".into(),
                });
            }
        }
        let mut solver = Solver {
            net: net.clone(),
            cfg,
            rho,
            friction: FRICTION_PROFILE * blood.viscosity / rho,
            state: FieldState {
                t: 0.0,
                vessels: Vec::new(),
                outlet_pressure: Vec::new(),
            },
            geom,
            inflow_volume: 0.0,
            outflow_volume: 0.0,
            last_flows: (0.0, 0.0),
            junction_flux: vec![JunctionFlux::default(); net.junctions().len()],
            steps: 0,
            max_courant: 0.0,
        };
        solver.state = solver.initial_state();
        solver.last_flows = solver.boundary_flows(&solver.state);
        Ok(solver)
    }

    /// `A = A0`, `u = 0`, capacitor pressures at `p∞`.
    pub fn initial_state(&self) -> FieldState {
        FieldState {
            t: 0.0,
            vessels: self
                .geom
                .iter()
                .map(|g| VesselField {
                    area: (0..g.n).map(|j| g.a0(j)).collect(),
                    velocity: vec![0.0; g.n],
                })
                .collect(),
            outlet_pressure: self.net.outlets().iter().map(|o| o.downstream_pressure).collect(),
        }
    }

    pub fn state(&self) -> &FieldState {
        &self.state
    }

    pub fn set_state(&mut self, state: FieldState) {
        self.last_flows = self.boundary_flows(&state);
        self.state = state;
    }

    /// Solver grid of the vessel at position `vi`.
    pub fn grid(&self, vi: usize) -> &[f64] {
        &self.geom[vi].x
    }

    /// Largest step satisfying `dt·max(|u| + c)/Δx ≤ cfl` on every vessel.
    pub fn stable_dt(&self, state: &FieldState) -> f64 {
        self.cfg.cfl_number / self.max_speed_over_dx(state)
    }

    fn max_speed_over_dx(&self, state: &FieldState) -> f64 {
        let mut worst = 0.0f64;
        for (g, f) in self.geom.iter().zip(&state.vessels) {
            let s = f
                .area
                .iter()
                .zip(&f.velocity)
                .map(|(a, u)| u.abs() + g.c(*a, self.rho))
                .fold(0.0, f64::max);
            worst = worst.max(s / g.dx);
        }
        worst
    }

    /// Advance `state` by `dt`: interior Lax–Wendroff update, then every
    /// boundary from characteristics of the old state, then friction.
    pub fn step(&self, state: &FieldState, dt: f64) -> Result<(FieldState, StepReport)> {
        let limit = self.stable_dt(state);
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, limit });
        }
        let t_new = state.t + dt;
        let mut next = FieldState {
            t: t_new,
            vessels: Vec::with_capacity(self.geom.len()),
            outlet_pressure: state.outlet_pressure.clone(),
        };
        for (vi, (g, f)) in self.geom.iter().zip(&state.vessels).enumerate() {
            next.vessels.push(self.interior(vi, g, f, dt, state.t)?);
        }
        for i in 0..self.net.inlets().len() {
            let vi = self.net.position(self.net.inlets()[i].vessel).expect("validated");
            let b = self.apply_inlet(state, i, t_new, dt)?;
            next.vessels[vi].area[0] = b.area;
            next.vessels[vi].velocity[0] = b.velocity;
        }
        for o in 0..self.net.outlets().len() {
            let vi = self.net.position(self.net.outlets()[o].vessel).expect("validated");
            let (b, pc) = self.apply_windkessel(state, o, dt)?;
            let last = self.geom[vi].n - 1;
            next.vessels[vi].area[last] = b.area;
            next.vessels[vi].velocity[last] = b.velocity;
            next.outlet_pressure[o] = pc;
        }
        let mut report = StepReport {
            junctions: Vec::with_capacity(self.net.junctions().len()),
            ..Default::default()
        };
        for jn in 0..self.net.junctions().len() {
            let (values, residual) = self.apply_junction(state, jn, dt)?;
            for (vi, node, b) in values {
                next.vessels[vi].area[node] = b.area;
                next.vessels[vi].velocity[node] = b.velocity;
            }
            report.junctions.push(residual);
        }
        for (vi, f) in next.vessels.iter().enumerate() {
            if let Some(node) = f.area.iter().position(|a| !(*a > 0.0 && a.is_finite())) {
                return Err(Error::NegativeArea {
                    vessel: self.net.vessels()[vi].id,
                    node,
                    time: t_new,
                });
            }
            if let Some(node) = f.velocity.iter().position(|u| !u.is_finite()) {
                return Err(Error::NegativeArea {
                    vessel: self.net.vessels()[vi].id,
                    node,
                    time: t_new,
                });
            }
        }
        let (inflow, outflow) = self.boundary_flows(&next);
        report.inflow = inflow;
        report.outflow = outflow;
        Ok((next, report))
    }

    fn interior(&self, vi: usize, g: &Geometry, f: &VesselField, dt: f64, t: f64) -> Result<VesselField> {
        let n = g.n;
        let r = dt / g.dx;
        let rho = self.rho;
        let (a, u) = (&f.area, &f.velocity);
        let f1: Vec<f64> = (0..n).map(|j| a[j] * u[j]).collect();
        let f2: Vec<f64> = (0..n).map(|j| 0.5 * u[j] * u[j] + g.pressure(a[j], j) / rho).collect();
        let mut h1 = Vec::with_capacity(n - 1);
        let mut h2 = Vec::with_capacity(n - 1);
        for j in 0..n - 1 {
            let ah = 0.5 * (a[j] + a[j + 1]) - 0.5 * r * (f1[j + 1] - f1[j]);
            let uh = 0.5 * (u[j] + u[j + 1]) - 0.5 * r * (f2[j + 1] - f2[j]);
            if !(ah > 0.0) {
                return Err(Error::NegativeArea {
                    vessel: self.net.vessels()[vi].id,
                    node: j,
                    time: t + 0.5 * dt,
                });
            }
            h1.push(ah * uh);
            h2.push(0.5 * uh * uh + (g.pext + g.beta * (ah.sqrt() - g.sqrt_a0_half[j])) / rho);
        }
        let mut area = a.clone();
        let mut velocity = u.clone();
        for j in 1..n - 1 {
            let an = a[j] - r * (h1[j] - h1[j - 1]);
            let un = u[j] - r * (h2[j] - h2[j - 1]);
            area[j] = an;
            velocity[j] = un / (1.0 + dt * self.friction / an);
        }
        Ok(VesselField { area, velocity })
    }

    /// Forward invariant `W1 = u + 4(c − c0)` arriving at the distal end.
    fn trace_forward(&self, state: &FieldState, vi: usize, dt: f64) -> f64 {
        let g = &self.geom[vi];
        let f = &state.vessels[vi];
        let (ia, ib) = (g.n - 1, g.n - 2);
        let (ca, cb) = (g.c(f.area[ia], self.rho), g.c(f.area[ib], self.rho));
        let wa = f.velocity[ia] + 4.0 * (ca - g.c0[ia]);
        let wb = f.velocity[ib] + 4.0 * (cb - g.c0[ib]);
        let theta = ((f.velocity[ia] + ca) * dt / g.dx).clamp(0.0, 1.0);
        let w = wa - theta * (wa - wb);
        let uf = f.velocity[ia] - theta * (f.velocity[ia] - f.velocity[ib]);
        let af = f.area[ia] - theta * (f.area[ia] - f.area[ib]);
        w - dt * self.friction * uf / af
    }

    /// Backward invariant `W2 = u − 4(c − c0)` arriving at the proximal end.
    fn trace_backward(&self, state: &FieldState, vi: usize, dt: f64) -> f64 {
        let g = &self.geom[vi];
        let f = &state.vessels[vi];
        let (ca, cb) = (g.c(f.area[0], self.rho), g.c(f.area[1], self.rho));
        let wa = f.velocity[0] - 4.0 * (ca - g.c0[0]);
        let wb = f.velocity[1] - 4.0 * (cb - g.c0[1]);
        let theta = ((ca - f.velocity[0]) * dt / g.dx).clamp(0.0, 1.0);
        let w = wa + theta * (wb - wa);
        let uf = f.velocity[0] + theta * (f.velocity[1] - f.velocity[0]);
        let af = f.area[0] + theta * (f.area[1] - f.area[0]);
        w - dt * self.friction * uf / af
    }

    /// Prescribed inflow velocity at `t_new`; area from the outgoing invariant.
    pub fn apply_inlet(&self, state: &FieldState, inlet: usize, t_new: f64, dt: f64) -> Result<BoundaryValue> {
        let spec = &self.net.inlets()[inlet];
        let vi = self.net.position(spec.vessel).expect("validated");
        let g = &self.geom[vi];
        let velocity = spec.waveform.evaluate(t_new);
        let w2 = self.trace_backward(state, vi, dt);
        let c = g.c0[0] + 0.25 * (velocity - w2);
        if !(c > 0.0) {
            return Err(Error::NegativeArea {
                vessel: spec.vessel,
                node: 0,
                time: t_new,
            });
        }
        let ratio = c / g.c0[0];
        let r2 = ratio * ratio;
        Ok(BoundaryValue {
            area: g.a0(0) * r2 * r2,
            velocity,
        })
    }

    /// Backward-Euler RCR update solved jointly with the incoming invariant.
    /// Returns the boundary values and the new capacitor pressure.
    pub fn apply_windkessel(&self, state: &FieldState, outlet: usize, dt: f64) -> Result<(BoundaryValue, f64)> {
        let wk = &self.net.outlets()[outlet];
        let vi = self.net.position(wk.vessel).expect("validated");
        let g = &self.geom[vi];
        let last = g.n - 1;
        let w1 = self.trace_forward(state, vi, dt);
        let pc = state.outlet_pressure[outlet];
        let r1 = wk.proximal_resistance();
        let r2 = wk.distal_resistance();
        // p_c(new) = base + γ·Q
        let (base, gamma) = if r2 > 0.0 {
            let gamma = 1.0 / (wk.compliance / dt + 1.0 / r2);
            (pc - gamma * (pc - wk.downstream_pressure) / r2, gamma)
        } else {
            (wk.downstream_pressure, 0.0)
        };
        let rho = self.rho;
        let eval = |a: f64| {
            let c = g.c(a, rho);
            let u = w1 - 4.0 * (c - g.c0[last]);
            (c, u)
        };
        let mut a = state.vessels[vi].area[last];
        let mut residual = f64::INFINITY;
        let mut converged = false;
        for _ in 0..self.cfg.junction_max_iter {
            let (c, u) = eval(a);
            let q = a * u;
            residual = g.pressure(a, last) - r1 * q - base - gamma * q;
            let slope = rho * c * c / a - (r1 + gamma) * (u - c);
            let step = -residual / slope;
            let next = a + step;
            a = if next > 0.0 { next } else { 0.5 * a };
            if step.abs() <= 1e-14 * a {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Newton {
                location: format!("outlet of vessel {}", wk.vessel),
                iterations: self.cfg.junction_max_iter,
                residual,
            });
        }
        let (_, u) = eval(a);
        Ok((BoundaryValue { area: a, velocity: u }, base + gamma * a * u))
    }

    fn junction_ends(&self, state: &FieldState, junction: usize, dt: f64) -> Vec<JunctionEnd> {
        let jn = &self.net.junctions()[junction];
        let parents = jn.parents.iter().map(|id| {
            let vi = self.net.position(*id).expect("validated");
            JunctionEnd {
                vessel: vi,
                node: self.geom[vi].n - 1,
                sign: 1.0,
                invariant: self.trace_forward(state, vi, dt),
            }
        });
        let children = jn.children.iter().map(|id| {
            let vi = self.net.position(*id).expect("validated");
            JunctionEnd {
                vessel: vi,
                node: 0,
                sign: -1.0,
                invariant: self.trace_backward(state, vi, dt),
            }
        });
        parents.chain(children).collect()
    }

    /// Newton solve for the areas of all ends meeting at `junction`: flux
    /// balance plus pressure continuity, outgoing invariants fixed. Returns
    /// `(vessel position, node, value)` in parents-then-children order and the
    /// achieved flux balance.
    pub fn apply_junction(
        &self,
        state: &FieldState,
        junction: usize,
        dt: f64,
    ) -> Result<(Vec<(usize, usize, BoundaryValue)>, JunctionFlux)> {
        let ends = self.junction_ends(state, junction, dt);
        let k = ends.len();
        let rho = self.rho;
        let dynamic = match self.cfg.closure {
            JunctionClosure::TotalPressure => 1.0,
            JunctionClosure::StaticPressure => 0.0,
        };
        let mut a: Vec<f64> = ends.iter().map(|e| state.vessels[e.vessel].area[e.node]).collect();
        let mut u = vec![0.0; k];
        let mut jac = vec![0.0; k];
        let mut h = vec![0.0; k];
        let mut dh = vec![0.0; k];
        let tol = self.cfg.junction_newton_tol;
        let mut flux_residual = f64::INFINITY;
        for _ in 0..self.cfg.junction_max_iter {
            let mut max_q = 0.0f64;
            let mut pscale = 0.0f64;
            let mut roundoff = 0.0;
            flux_residual = 0.0;
            for (i, e) in ends.iter().enumerate() {
                let g = &self.geom[e.vessel];
                let c = g.c(a[i], rho);
                u[i] = e.invariant - 4.0 * e.sign * (c - g.c0[e.node]);
                let q = a[i] * u[i];
                max_q = max_q.max(q.abs());
                pscale = pscale.max(rho * c * c);
                roundoff += 64.0 * f64::EPSILON * a[i] * c;
                flux_residual += e.sign * q;
                jac[i] = e.sign * (u[i] - e.sign * c);
                h[i] = g.pressure(a[i], e.node) + dynamic * 0.5 * rho * u[i] * u[i];
                dh[i] = rho * c * c / a[i] - dynamic * rho * u[i] * e.sign * c / a[i];
            }
            // Near flow reversal the flux is limited by cancellation in c − c0.
            let flux_ok = flux_residual.abs() <= (tol * max_q).max(roundoff);
            let pressure_ok = (1..k).all(|i| (h[0] - h[i]).abs() <= tol * pscale);
            if flux_ok && pressure_ok {
                let values = ends
                    .iter()
                    .zip(a.iter().zip(&u))
                    .map(|(e, (a, u))| (e.vessel, e.node, BoundaryValue { area: *a, velocity: *u }))
                    .collect();
                return Ok((
                    values,
                    JunctionFlux {
                        residual: flux_residual.abs(),
                        max_flux: max_q,
                    },
                ));
            }
            // Arrow-structured Jacobian: eliminate the pressure rows.
            let (mut num, mut den) = (-flux_residual, jac[0]);
            for i in 1..k {
                let ri = h[0] - h[i];
                num -= jac[i] * ri / dh[i];
                den += dh[0] * jac[i] / dh[i];
            }
            let d0 = num / den;
            for i in 0..k {
                let di = if i == 0 { d0 } else { (h[0] - h[i] + dh[0] * d0) / dh[i] };
                let next = a[i] + di;
                a[i] = if next > 0.0 { next } else { 0.5 * a[i] };
            }
        }
        Err(Error::Newton {
            location: format!("junction {junction}"),
            iterations: self.cfg.junction_max_iter,
            residual: flux_residual,
        })
    }

    /// Summed inlet and outlet volume flows.
    fn boundary_flows(&self, state: &FieldState) -> (f64, f64) {
        let inflow = self
            .net
            .inlets()
            .iter()
            .map(|i| {
                let f = &state.vessels[self.net.position(i.vessel).expect("validated")];
                f.area[0] * f.velocity[0]
            })
            .sum();
        let outflow = self
            .net
            .outlets()
            .iter()
            .map(|o| {
                let f = &state.vessels[self.net.position(o.vessel).expect("validated")];
                let last = f.area.len() - 1;
                f.area[last] * f.velocity[last]
            })
            .sum();
        (inflow, outflow)
    }

    /// Take one step of at most `dt_max` on the internal state.
    pub fn advance(&mut self, dt_max: f64) -> Result<f64> {
        let speed = self.max_speed_over_dx(&self.state);
        let dt = dt_max.min(self.cfg.max_dt).min(self.cfg.cfl_number / speed);
        let (next, report) = self.step(&self.state, dt)?;
        self.inflow_volume += 0.5 * dt * (self.last_flows.0 + report.inflow);
        self.outflow_volume += 0.5 * dt * (self.last_flows.1 + report.outflow);
        self.last_flows = (report.inflow, report.outflow);
        for (acc, r) in self.junction_flux.iter_mut().zip(&report.junctions) {
            acc.residual = acc.residual.max(r.residual);
            acc.max_flux = acc.max_flux.max(r.max_flux);
        }
        self.steps += 1;
        self.max_courant = self.max_courant.max(dt * speed);
        self.state = next;
        Ok(dt)
    }
}

impl Integrator for Solver {
    fn advance_to(&mut self, t_target: f64) -> Result<()> {
        loop {
            let remaining = t_target - self.state.t;
            if remaining <= 1e-12 * t_target.abs().max(1.0) {
                self.state.t = t_target;
                return Ok(());
            }
            let speed = self.max_speed_over_dx(&self.state);
            let dt = self.cfg.max_dt.min(self.cfg.cfl_number / speed);
            if remaining <= dt {
                self.advance(remaining)?;
                self.state.t = t_target;
                return Ok(());
            }
            self.advance(dt)?;
        }
    }

    fn fields(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.state.vessels.iter().map(|f| (f.area.clone(), f.velocity.clone())).collect()
    }

    fn outlet_state(&self) -> (Vec<f64>, Vec<f64>) {
        self.net
            .outlets()
            .iter()
            .map(|o| {
                let vi = self.net.position(o.vessel).expect("validated");
                let g = &self.geom[vi];
                let f = &self.state.vessels[vi];
                let last = g.n - 1;
                (g.pressure(f.area[last], last), f.area[last] * f.velocity[last])
            })
            .unzip()
    }

    fn stored_volume(&self) -> f64 {
        let vessels: f64 = self
            .geom
            .iter()
            .zip(&self.state.vessels)
            .map(|(g, f)| {
                let inner: f64 = f.area[1..g.n - 1].iter().sum();
                g.dx * (inner + 0.5 * (f.area[0] + f.area[g.n - 1]))
            })
            .sum();
        let windkessel: f64 = self
            .net
            .outlets()
            .iter()
            .zip(&self.state.outlet_pressure)
            .map(|(o, p)| o.compliance * p)
            .sum();
        vessels + windkessel
    }

    fn boundary_volumes(&self) -> (f64, f64) {
        (self.inflow_volume, self.outflow_volume)
    }

    fn junction_residual(&self) -> Vec<f64> {
        self.junction_flux.iter().map(JunctionFlux::relative).collect()
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn max_cfl_ratio(&self) -> f64 {
        self.max_courant
    }

    fn solver_grids(&self) -> Vec<Vec<f64>> {
        self.geom.iter().map(|g| g.x.clone()).collect()
    }
}
