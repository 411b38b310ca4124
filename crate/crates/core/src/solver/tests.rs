use super::*;
use crate::ensemble::InletWaveform;
use crate::vasc_model::{BloodProperties, Inlet, Junction, Vessel, WindkesselOutlet};

fn blood(viscosity: f64) -> BloodProperties {
    BloodProperties {
        density: 1050.0,
        viscosity,
    }
}

fn single(length: f64, nodes: usize, waveform: InletWaveform, rt_factor: f64, compliance: f64, mu: f64) -> NetworkTopology {
    let b = blood(mu);
    let v = Vessel::new(1, length, nodes, 1.36e-5, 6.97e7);
    let r1 = b.density * v.tube_law(length).reference_wave_speed(&b) / 1.36e-5;
    let out = WindkesselOutlet::attach(&v, &b, rt_factor * r1, compliance, 0.0).unwrap();
    NetworkTopology::new(vec![v], vec![], vec![Inlet { vessel: 1, waveform }], vec![out], b).unwrap()
}

fn bifurcation(daughter_areas: [f64; 2], waveform: InletWaveform, nodes: usize) -> NetworkTopology {
    let b = blood(4e-3);
    let vessels = vec![
        Vessel::new(1, 0.1, nodes, 1.36e-5, 6.97e7),
        Vessel::new(2, 0.08, nodes, daughter_areas[0], 6.97e7),
        Vessel::new(3, 0.08, nodes, daughter_areas[1], 6.97e7),
    ];
    let outlets = vessels[1..]
        .iter()
        .map(|v| {
            let r1 = b.density * v.tube_law(v.length).reference_wave_speed(&b) / v.area0(v.length);
            WindkesselOutlet::attach(v, &b, 8.0 * r1, 5e-11, 0.0).unwrap()
        })
        .collect();
    NetworkTopology::new(
        vessels,
        vec![Junction {
            parents: vec![1],
            children: vec![2, 3],
        }],
        vec![Inlet { vessel: 1, waveform }],
        outlets,
        b,
    )
    .unwrap()
}

fn pulse_waveform() -> InletWaveform {
    InletWaveform {
        period: 0.8,
        a0: 0.3,
        peaks: vec![0.6],
        centers: vec![0.2],
        widths: vec![5e-3],
    }
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let net = bifurcation([1.0e-5, 6e-6], InletWaveform::constant(0.8, 0.0), 12);
    let mut solver = Solver::new(&net, SolverConfig::default()).unwrap();
    let start = solver.state().clone();
    for _ in 0..200 {
        solver.advance(1.0).unwrap();
    }
    let end = solver.state();
    assert_eq!(end.vessels, start.vessels);
    assert_eq!(end.outlet_pressure, start.outlet_pressure);
}

#[test]
fn zero_inflow_snapshots_are_rest_state() {
    let net = bifurcation([1.0e-5, 6e-6], InletWaveform::constant(0.8, 0.0), 8);
    let r = simulate(&net, &SolverConfig::default(), 10).unwrap();
    assert!(r.velocity.iter().flatten().all(|u| *u == 0.0));
    for (vi, v) in net.vessels().iter().enumerate() {
        assert!(r.area[vi].iter().all(|a| *a == v.area0(0.0)));
    }
}

#[test]
fn inlet_velocity_is_prescribed_exactly() {
    let net = single(0.1, 21, InletWaveform::constant(0.8, 0.37), 2.0, 1e-10, 4e-3);
    let mut solver = Solver::new(&net, SolverConfig::default()).unwrap();
    for _ in 0..300 {
        solver.advance(1.0).unwrap();
        assert_eq!(solver.state().vessels[0].velocity[0], 0.37);
    }
}

#[test]
fn inlet_boundary_is_periodic_in_time() {
    let net = single(0.1, 21, pulse_waveform(), 2.0, 1e-10, 4e-3);
    let solver = Solver::new(&net, SolverConfig::default()).unwrap();
    let state = solver.initial_state();
    let a = solver.apply_inlet(&state, 0, 0.23, 1e-5).unwrap();
    let b = solver.apply_inlet(&state, 0, 0.8 + 0.23, 1e-5).unwrap();
    assert!((a.velocity - b.velocity).abs() < 1e-12);
    assert!((a.area - b.area).abs() < 1e-12 * a.area);
}

#[test]
fn cfl_violation_is_reported() {
    let net = single(0.1, 21, pulse_waveform(), 2.0, 1e-10, 4e-3);
    let solver = Solver::new(&net, SolverConfig::default()).unwrap();
    let state = solver.initial_state();
    let limit = solver.stable_dt(&state);
    assert!(matches!(solver.step(&state, 1.5 * limit), Err(Error::Cfl { .. })));
    assert!(solver.step(&state, limit).is_ok());
}

#[test]
fn resistive_outlet_steady_pressure_is_exact() {
    // C = 0 and steady inflow: p = p∞ + Rt·Q once the transient has left.
    let net = single(0.05, 11, InletWaveform::constant(0.4, 0.5), 3.0, 0.0, 0.0);
    let cfg = SolverConfig {
        periodicity_tol: 1e-9,
        ..Default::default()
    };
    let r = simulate(&net, &cfg, 8).unwrap();
    let out = &net.outlets()[0];
    for (p, q) in r.outlet_pressure[0].iter().zip(&r.outlet_flow[0]) {
        let expected = out.total_resistance * q;
        assert!((p - expected).abs() <= 1e-9 * expected, "{p} vs {expected}");
    }
}

#[test]
fn windkessel_steady_limit_with_compliance() {
    let net = single(0.1703, 40, InletWaveform::constant(0.8, 0.5), 4.0, 3e-11, 4e-3);
    let r = simulate(&net, &SolverConfig::default(), 16).unwrap();
    let out = &net.outlets()[0];
    // Velocity is prescribed, so the inflow is u0 times the distended inlet area.
    let q0 = 0.5 * r.area[0][0];
    let p = *r.outlet_pressure[0].last().unwrap();
    let expected = out.downstream_pressure + out.total_resistance * q0;
    assert!((p - expected).abs() / expected < 0.01, "{p} vs {expected}");
    assert!(r.cycles >= 5);
}

#[test]
fn periodicity_failure_carries_history() {
    let net = single(0.1, 11, pulse_waveform(), 2.0, 1e-10, 4e-3);
    let cfg = SolverConfig {
        warmup_cycles: 2,
        max_cycles: 2,
        periodicity_tol: 1e-12,
        ..Default::default()
    };
    match simulate(&net, &cfg, 8) {
        Err(Error::Periodicity { history }) => assert_eq!(history.len(), 2),
        other => panic!("expected periodicity error, got {other:?}"),
    }
}

#[test]
fn symmetric_daughters_carry_equal_flux() {
    let net = bifurcation([8e-6, 8e-6], pulse_waveform(), 15);
    let mut solver = Solver::new(&net, SolverConfig::default()).unwrap();
    for _ in 0..2000 {
        solver.advance(1.0).unwrap();
        let s = solver.state();
        let q = |vi: usize| s.vessels[vi].area[0] * s.vessels[vi].velocity[0];
        assert!((q(1) - q(2)).abs() <= 1e-14 * q(1).abs().max(1e-12));
    }
}

#[test]
fn junction_residual_within_tolerance_every_step() {
    let net = bifurcation([1.0e-5, 4e-6], pulse_waveform(), 15);
    let cfg = SolverConfig::default();
    let mut solver = Solver::new(&net, cfg.clone()).unwrap();
    for _ in 0..3000 {
        let state = solver.state().clone();
        let (next, report) = solver.step(&state, solver.stable_dt(&state)).unwrap();
        let q = |vi: usize, j: usize| next.vessels[vi].area[j] * next.vessels[vi].velocity[j];
        let parent = q(0, 14);
        let children = q(1, 0) + q(2, 0);
        let scale = parent.abs().max(q(1, 0).abs()).max(q(2, 0).abs());
        assert!((report.junctions[0].residual - (parent - children).abs()).abs() < 1e-18);
        // Outside flow reversal the relative balance meets the Newton tolerance;
        // near it an absolute roundoff floor of a few ulps of A·c applies.
        let floor = 64.0 * f64::EPSILON * 3.0 * 1.36e-5 * 12.0;
        assert!((parent - children).abs() <= (cfg.junction_newton_tol * scale).max(floor));
        solver.set_state(next);
    }
}

#[test]
fn larger_daughter_takes_more_flow() {
    let net = bifurcation([1.0e-5, 5e-6], InletWaveform::constant(0.8, 0.4), 21);
    let r = simulate(&net, &SolverConfig::default(), 8).unwrap();
    let mean = |o: usize| r.outlet_flow[o].iter().sum::<f64>() / 8.0;
    assert!(mean(0) > 1.5 * mean(1), "{} vs {}", mean(0), mean(1));
}

#[test]
fn static_pressure_closure_also_conserves_flux() {
    let net = bifurcation([1.0e-5, 4e-6], pulse_waveform(), 11);
    let cfg = SolverConfig {
        closure: JunctionClosure::StaticPressure,
        ..Default::default()
    };
    let r = simulate(&net, &cfg, 16).unwrap();
    assert!(r.junction_residual[0] <= cfg.junction_newton_tol);
}

#[test]
fn periodic_mass_budget_closes() {
    let net = bifurcation([1.0e-5, 6e-6], pulse_waveform(), 41);
    let cfg = SolverConfig {
        periodicity_tol: 1e-6,
        max_cycles: 40,
        ..Default::default()
    };
    let r = simulate(&net, &cfg, 16).unwrap();
    let imbalance = r.mass_budget.relative_imbalance();
    assert!(imbalance < 1e-3, "{:?} → {imbalance:e}", r.mass_budget);
}

#[test]
fn courant_number_never_exceeds_cfl() {
    let net = bifurcation([1.0e-5, 6e-6], pulse_waveform(), 21);
    let cfg = SolverConfig::default();
    let r = simulate(&net, &cfg, 16).unwrap();
    assert!(r.max_cfl_ratio <= cfg.cfl_number * (1.0 + 1e-12));
    assert!(r.max_cfl_ratio > 0.4);
}

/// Tube long enough that a right-running pulse stays clear of both ends.
fn pulse_tube(nodes: usize) -> (NetworkTopology, Solver) {
    let net = single(1.0, nodes, InletWaveform::constant(10.0, 0.0), 1.0, 0.0, 0.0);
    let solver = Solver::new(&net, SolverConfig::default()).unwrap();
    (net, solver)
}

/// Simple right-running wave: area bump with `W2 = 0`.
fn right_running_pulse(solver: &Solver, amplitude: f64, center: f64, width: f64) -> FieldState {
    let mut state = solver.initial_state();
    let rho = 1050.0;
    let (beta, a0) = (6.97e7, 1.36e-5);
    let c = |a: f64| (beta * f64::sqrt(a) / (2.0 * rho)).sqrt();
    let c0 = c(a0);
    for (j, x) in solver.grid(0).iter().enumerate() {
        let a = a0 * (1.0 + amplitude * (-((x - center) / width).powi(2)).exp());
        state.vessels[0].area[j] = a;
        state.vessels[0].velocity[j] = 4.0 * (c(a) - c0);
    }
    state
}

fn peak_position(solver: &Solver, state: &FieldState) -> f64 {
    let a = &state.vessels[0].area;
    let x = solver.grid(0);
    let j = (1..a.len() - 1).max_by(|i, k| a[*i].total_cmp(&a[*k])).unwrap();
    // Vertex of the parabola through the three nodes around the maximum.
    let (l, c, r) = (a[j - 1], a[j], a[j + 1]);
    let h = x[1] - x[0];
    x[j] + 0.5 * h * (l - r) / (l - 2.0 * c + r)
}

#[test]
fn small_pulse_travels_at_reference_wave_speed() {
    let (_, mut solver) = pulse_tube(801);
    let state = right_running_pulse(&solver, 1e-4, 0.2, 0.03);
    let x0 = peak_position(&solver, &state);
    solver.set_state(state);
    let duration = 0.05;
    Integrator::advance_to(&mut solver, duration).unwrap();
    let x1 = peak_position(&solver, solver.state());
    let c0 = (6.97e7 * 1.36e-5f64.sqrt() / 2100.0).sqrt();
    let speed = (x1 - x0) / duration;
    assert!((speed / c0 - 1.0).abs() < 0.02, "speed {speed} vs c0 {c0}");
}

/// L2 difference of area on the coarse nodes after a fixed time, for
/// grids with `n`, `2n − 1`, `4n − 3` nodes and steps refined alongside.
pub(crate) fn refinement_errors(base: usize) -> (f64, f64) {
    let final_time = 0.02;
    let run = |level: usize| {
        let nodes = (base - 1) * (1 << level) + 1;
        let (_, solver) = pulse_tube(nodes);
        let mut state = right_running_pulse(&solver, 0.05, 0.35, 0.05);
        let dx = 1.0 / (nodes - 1) as f64;
        let steps = (final_time / (0.4 * dx / 14.0)).ceil() as usize;
        let dt = final_time / steps as f64;
        for _ in 0..steps {
            state = solver.step(&state, dt).unwrap().0;
        }
        let stride = 1 << level;
        state.vessels[0].area.iter().step_by(stride).copied().collect::<Vec<_>>()
    };
    let (a, b, c) = (run(0), run(1), run(2));
    let norm = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    (norm(&a, &b), norm(&b, &c))
}

#[test]
fn second_order_convergence() {
    let (coarse, fine) = refinement_errors(101);
    let order = (coarse / fine).log2();
    assert!((1.7..=2.3).contains(&order), "observed order {order}");
}

#[test]
fn rigid_network_conserves_flux_and_reaches_steady_pressure() {
    let net = bifurcation([1.0e-5, 6e-6], InletWaveform::constant(0.8, 0.5), 9);
    let cfg = SolverConfig {
        mode: Mode::Rigid,
        periodicity_tol: 1e-10,
        ..Default::default()
    };
    let r = simulate(&net, &cfg, 16).unwrap();
    assert!(r.junction_residual[0] < 1e-13);
    let q_in = 0.5 * 1.36e-5;
    let q_out: f64 = r.outlet_flow.iter().map(|q| q[15]).sum();
    assert!((q_out - q_in).abs() < 1e-6 * q_in);
    for (o, out) in net.outlets().iter().enumerate() {
        let expected = out.total_resistance * r.outlet_flow[o][15];
        assert!((r.outlet_pressure[o][15] - expected).abs() < 1e-6 * expected);
    }
    // Rigid walls: recorded area is the equilibrium area and u·A0 is uniform.
    let m = r.grid.m();
    for k in 0..m {
        let q0 = r.u(0, 0, k) * 1.36e-5;
        let q1 = r.u(0, 8, k) * 1.36e-5;
        assert!((q0 - q1).abs() <= 1e-14 * q0.abs().max(1e-20));
    }
}

#[test]
fn stiff_compliant_solution_approaches_rigid_limit() {
    let b = blood(4e-3);
    let build = |beta: f64| {
        let v = Vessel::new(1, 0.1, 21, 1.36e-5, beta);
        let out = WindkesselOutlet::with_proximal(1, 2e8, 2e9, 1e-10, 0.0).unwrap();
        NetworkTopology::new(
            vec![v],
            vec![],
            vec![Inlet {
                vessel: 1,
                waveform: pulse_waveform(),
            }],
            vec![out],
            b,
        )
        .unwrap()
    };
    let rigid = simulate(
        &build(6.97e7),
        &SolverConfig {
            mode: Mode::Rigid,
            ..Default::default()
        },
        32,
    )
    .unwrap();
    let mut previous = f64::INFINITY;
    for factor in [1.0, 30.0] {
        let r = simulate(&build(6.97e7 * factor), &SolverConfig::default(), 32).unwrap();
        let (mut diff, mut norm) = (0.0, 0.0);
        for (a, b) in r.flat_velocity().iter().zip(rigid.flat_velocity()) {
            diff += (a - b).powi(2);
            norm += b * b;
        }
        let rel = (diff / norm).sqrt();
        assert!(rel < previous, "β×{factor}: {rel}");
        previous = rel;
    }
    assert!(previous < 0.05, "{previous}");
}

#[test]
fn solver_grid_can_differ_from_output_grid() {
    let net = bifurcation([1.0e-5, 6e-6], pulse_waveform(), 50);
    let cfg = SolverConfig {
        max_dx: Some(0.01),
        ..Default::default()
    };
    let r = simulate(&net, &cfg, 16).unwrap();
    assert_eq!(r.grid.len(), 150 * 16);
    assert_eq!(r.velocity[0].len(), 50 * 16);
    assert!(r.flat_velocity().iter().all(|u| u.is_finite()));
}

#[test]
fn csv_rows_follow_vessel_x_t_order() {
    let net = bifurcation([1.0e-5, 6e-6], InletWaveform::constant(0.8, 0.0), 4);
    let r = simulate(&net, &SolverConfig::default(), 3).unwrap();
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "vessel_id,x,t,u,A");
    assert_eq!(lines.len(), 1 + 3 * 4 * 3);
    assert!(lines[1].starts_with("1,0,0,"));
    assert!(lines[2].starts_with("1,0,0.2666"));
    assert!(lines[4].starts_with("1,0.0333"));
    assert!(lines[13].starts_with("2,0,0,"));
}
