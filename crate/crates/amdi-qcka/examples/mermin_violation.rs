//! Lower bound on the Mermin value certified from the intensity-set counts.

use amdi_qcka::keyrate::Mode;
use amdi_qcka::mermin::{mermin_scan, simulated_correlators, mermin_inequality, CLASSICAL_BOUND};
use amdi_qcka::model::ProtocolConfig;
use amdi_qcka::sift::CountModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = ProtocolConfig::default();
    config.channel.distance_km = 10.0;
    let model = CountModel::new(&config, config.eta()?);
    let c = simulated_correlators(&model);
    println!("raw coherent-state correlators XXX, XYY, YXY, YYX: {c:.4?}");
    println!("Mermin value of the raw correlators: {:.4}", mermin_inequality(c)?);

    config.security.total_pulses = 1e16;
    let distances = [0.0, 100.0, 200.0, 300.0];
    for mode in [Mode::Asymptotic, Mode::Finite] {
        println!("{mode}");
        for e in mermin_scan(&config, &distances, mode, true, 1)? {
            let verdict = if e.violates_local_realism() { "violates" } else { "no violation" };
            println!("  {:>4.0} km  M >= {:.4}  ({verdict}, classical bound {CLASSICAL_BOUND})", e.distance_km, e.m_lower);
        }
    }
    Ok(())
}
