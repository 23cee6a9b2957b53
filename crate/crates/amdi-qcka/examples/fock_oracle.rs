//! Brute-force Fock-space propagation checked against the closed-form yields.

use amdi_qcka::{fock_oracle, optics};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (eta, p_d) = (0.3, 1e-6);
    let brute = fock_oracle::pattern_yields(3, eta, p_d)?;
    let closed = optics::pattern_yields(3, eta, p_d)?;
    println!("pattern  enumerated      closed form");
    for (i, (a, b)) in brute.iter().zip(&closed).enumerate() {
        println!("{i:03b}      {a:.12e}  {b:.12e}");
    }
    for n in [3, 4] {
        for pi in [false, true] {
            let v = fock_oracle::parity_rule_check(n, pi)?;
            println!("N={n} theta_g={}: R-click parity {} holds={}", if pi { "pi" } else { "0" }, v.expected_parity, v.holds);
        }
    }
    Ok(())
}
