//! Concentration bounds used in the finite-size analysis.

use amdi_qcka::stats::{chernoff_expected, chernoff_observed, sampling_gamma_upper};
use amdi_qcka::validation::chernoff_violations;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let eps = 1e-10;
    for x in [1e2, 1e4, 1e6] {
        let o = chernoff_observed(x, eps)?;
        let e = chernoff_expected(x, eps)?;
        println!("x = {x:.0e}: observed in [{:.1}, {:.1}], expectation in [{:.1}, {:.1}]", o.lower, o.upper, e.lower, e.upper);
    }
    for lambda in [0.01, 0.05, 0.1] {
        println!("gamma(n=1e6, k=1e5, lambda={lambda}) = {:.3e}", sampling_gamma_upper(1e6, 1e5, lambda, 1e-7)?);
    }
    let (lo, hi) = chernoff_violations(20_000, 10_000, 0.05, 1e-2, 5);
    println!("binomial draws outside the eps=1e-2 interval: below {lo:.4}, above {hi:.4}");
    Ok(())
}
