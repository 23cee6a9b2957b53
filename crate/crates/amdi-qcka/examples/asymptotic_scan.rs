//! Optimized asymptotic key rate for three and four users against the PLOB bound.

use amdi_qcka::keyrate::{plob_crossing, scan_distance, Mode};
use amdi_qcka::model::ProtocolConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let distances: Vec<f64> = (0..=8).map(|i| 50.0 * i as f64).collect();
    for n in [3, 4] {
        let mut config = ProtocolConfig::default();
        config.n_users = n;
        let rows = scan_distance(&config, &distances, Mode::Asymptotic, true, 1)?;
        println!("N = {n}");
        for r in &rows {
            println!("  {:>5.0} km  R = {:.3e}  PLOB = {:.3e}", r.distance_km, r.rate_per_pulse, r.plob_bound);
        }
        match plob_crossing(&rows) {
            Some(d) => println!("  exceeds PLOB from {d} km"),
            None => println!("  stays below PLOB on this grid"),
        }
    }
    Ok(())
}
