//! Basis choice and key mapping for a few announced pairing events.

use amdi_qcka::sift::{assign_basis, key_map, theta_g_mod, z_bit_assign, TotalIntensity as T};
use amdi_qcka::model::Intensity;
use std::f64::consts::PI;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sets = [
        vec![T::MuNu, T::MuNu, T::MuNu],
        vec![T::Mu, T::Mu, T::Mu],
        vec![T::Mu, T::Mu, T::MuNu],
        vec![T::TwoNu, T::TwoNu, T::TwoNu],
        vec![T::Zero, T::Nu, T::TwoMu],
    ];
    for set in &sets {
        let labels: Vec<&str> = set.iter().map(|t| t.label()).collect();
        println!("{labels:?}: {:?}", assign_basis(set, 0.0, true));
    }
    println!("Z bit for (mu, o) = {}, (o, mu) = {}", z_bit_assign(Intensity::Mu, Intensity::O)?, z_bit_assign(Intensity::O, Intensity::Mu)?);
    for theta in [0.0, PI, 0.3] {
        println!("theta_g = {theta:.3}: key {:?}", key_map(theta_g_mod(theta), &[0, 1, 1]));
    }
    Ok(())
}
