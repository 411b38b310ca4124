//! Pressure and wave speed of the Y-shape vessels around their reference area.

use vasckernel::scenarios::Scenario;

fn main() -> vasckernel::Result<()> {
    let net = Scenario::yshape().network;
    let blood = net.blood();
    for v in net.vessels() {
        let law = v.tube_law(0.0);
        println!(
            "vessel {}: A0 = {:.3e} m^2, beta = {:.3e} Pa/m, c0 = {:.2} m/s",
            v.id,
            law.area0,
            law.beta,
            law.reference_wave_speed(blood)
        );
        for f in [0.8, 1.0, 1.2, 1.5] {
            let a = f * law.area0;
            println!(
                "  A = {f:.1} A0  p = {:>9.1} Pa  c = {:.2} m/s",
                law.pressure(a)?,
                law.wave_speed(a, blood)?
            );
        }
    }
    Ok(())
}
