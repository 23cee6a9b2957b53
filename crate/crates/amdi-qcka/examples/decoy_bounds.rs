//! Decoy-state single-photon estimates: exact asymptotic values against the
//! two-intensity bounds, with and without statistical fluctuations.

use amdi_qcka::decoy::{asymptotic_estimates, finite_bounds_3user};
use amdi_qcka::model::ProtocolConfig;
use amdi_qcka::sift::CountModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ProtocolConfig::default();
    let model = CountModel::new(&config, config.eta()?);
    let eps = config.security.eps_chernoff;
    let exact = asymptotic_estimates(&model)?;
    let decoy = finite_bounds_3user(&model, eps, config.security.eps_e, false)?;
    let finite = finite_bounds_3user(&model, eps, config.security.eps_e, true)?;
    println!("{:<10} {:>12} {:>12} {:>12} {:>10}", "", "s1_z", "s1_x", "t1_x", "phase err");
    for (name, e) in [("exact", &exact), ("decoy", &decoy), ("finite", &finite)] {
        println!("{name:<10} {:>12.4e} {:>12.4e} {:>12.4e} {:>10.4}", e.s1_z, e.s1_x, e.t1_x, e.phi_z);
    }
    println!("finite bounds charged {} epsilon terms", finite.ledger.total());
    Ok(())
}
