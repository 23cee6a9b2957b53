//! Finite-size key rate of the three-user protocol without phase locking.

use amdi_qcka::keyrate::{evaluate, Mode};
use amdi_qcka::model::ProtocolConfig;
use amdi_qcka::optimize::optimize_point;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for pulses in [1e14, 1e16] {
        for filtering in [false, true] {
            let mut config = ProtocolConfig::default();
            config.timing.phase_locked = false;
            config.click_filtering = filtering;
            config.security.total_pulses = pulses;
            println!("pulses {pulses:.0e}, filtering {filtering}");
            for d in [0.0, 100.0, 200.0, 300.0] {
                config.channel.distance_km = d;
                let fixed = evaluate(&config, Mode::Finite)?;
                let best = optimize_point(&config, Mode::Finite, None, 7)?;
                println!(
                    "  {d:>4.0} km  fixed {:.3e}  optimized {:.3e}  (mu {:.3}, nu {:.3}, T_c {:.2e} s)",
                    fixed.rate_per_pulse,
                    best.result.rate_per_pulse,
                    best.params.mu,
                    best.params.nu,
                    best.params.t_c_s.unwrap_or(f64::NAN),
                );
            }
        }
    }
    Ok(())
}
