//! One compliant vessel feeding an RCR outlet under constant inflow.
//! The outlet pressure settles at p_inf + Rt·Q0.

use vasckernel::ensemble::InletWaveform;
use vasckernel::solver::{simulate, SolverConfig};
use vasckernel::vasc_model::{BloodProperties, Inlet, NetworkTopology, Vessel, WindkesselOutlet};

fn main() -> vasckernel::Result<()> {
    let blood = BloodProperties {
        density: 1050.0,
        viscosity: 4e-3,
    };
    let vessel = Vessel::new(1, 0.1703, 40, 1.36e-5, 6.97e7);
    let outlet = WindkesselOutlet::attach(&vessel, &blood, 0.2702e10, 0.6661e-10, 0.0)?;
    println!(
        "R1 = {:.3e}, R2 = {:.3e} Pa s/m^3",
        outlet.proximal_resistance(),
        outlet.distal_resistance()
    );
    let inlet = Inlet {
        vessel: 1,
        waveform: InletWaveform::constant(0.8, 0.5),
    };
    let net = NetworkTopology::new(vec![vessel], vec![], vec![inlet], vec![outlet], blood)?;
    let r = simulate(&net, &SolverConfig::default(), 32)?;

    let q0 = 0.5 * r.area[0][0];
    let p = r.outlet_pressure[0].last().copied().unwrap_or_default();
    let expected = outlet.downstream_pressure + outlet.total_resistance * q0;
    println!("{} cycles, {} steps", r.cycles, r.steps);
    println!(
        "outlet pressure {p:.1} Pa, steady limit {expected:.1} Pa ({:.2e} relative)",
        (p - expected).abs() / expected
    );
    Ok(())
}
