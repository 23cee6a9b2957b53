//! Brute-force Fock-space oracle for the ring network.
//!
//! Input mode `2u` is user `u`'s early half and `2u+1` its late half. The early
//! half enters port `u-1` on the second input and the late half enters port `u`
//! on the first input. Beam splitter rules: first input → (L − R)/√2, second
//! input → (L + R)/√2. Loss is a beam splitter to an untracked environment
//! mode; detectors are threshold detectors with independent dark counts.
//! Detector `2p` is L_p and `2p+1` is R_p.

use num_complex::Complex64;
use std::collections::BTreeMap;
use thiserror::Error;

pub const DEFAULT_PHOTON_CAP: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FockError {
    #[error("input carries {photons} photons, above the cap of {cap}")]
    Capacity { photons: usize, cap: usize },
    #[error("state has {got} modes, expected {expected}")]
    Modes { expected: usize, got: usize },
    #[error("oracle supports 1 to 4 users, got {0}")]
    Users(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FockState {
    pub modes: usize,
    pub amplitudes: BTreeMap<Vec<u8>, Complex64>,
}

impl FockState {
    pub fn vacuum(modes: usize) -> Self {
        let mut amplitudes = BTreeMap::new();
        amplitudes.insert(vec![0; modes], Complex64::new(1.0, 0.0));
        Self { modes, amplitudes }
    }

    pub fn basis(occupation: Vec<u8>) -> Self {
        let modes = occupation.len();
        let mut amplitudes = BTreeMap::new();
        amplitudes.insert(occupation, Complex64::new(1.0, 0.0));
        Self { modes, amplitudes }
    }

    /// One photon per user in (|e⟩ + e^{iθ_u}|l⟩)/√2.
    pub fn single_photon_superposition(phases: &[f64]) -> Self {
        let n = phases.len();
        let mut amplitudes = BTreeMap::new();
        let scale = 0.5f64.powf(n as f64 / 2.0);
        for late in 0..1usize << n {
            let mut occ = vec![0u8; 2 * n];
            let mut amp = Complex64::new(scale, 0.0);
            for (u, &th) in phases.iter().enumerate() {
                if (late >> u) & 1 == 1 {
                    occ[2 * u + 1] = 1;
                    amp *= Complex64::from_polar(1.0, th);
                } else {
                    occ[2 * u] = 1;
                }
            }
            amplitudes.insert(occ, amp);
        }
        Self { modes: 2 * n, amplitudes }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    fn photons(&self) -> usize {
        self.amplitudes
            .keys()
            .map(|o| o.iter().map(|&n| n as usize).sum())
            .max()
            .unwrap_or(0)
    }
}

/// Probability of every detector click mask (bit d set when detector d fired).
#[derive(Debug, Clone, PartialEq)]
pub struct ClickDistribution {
    pub n_users: usize,
    pub probs: Vec<f64>,
}

impl ClickDistribution {
    /// Probability that each port has exactly one click, R at port i iff bit i
    /// of `pattern` is set.
    pub fn pattern(&self, pattern: usize) -> f64 {
        let mut mask = 0usize;
        for p in 0..self.n_users {
            mask |= 1 << (2 * p + ((pattern >> p) & 1));
        }
        self.probs[mask]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

fn factorial(n: u8) -> f64 {
    (1..=n as u32).map(f64::from).product()
}

/// Output photon-number distribution over the 2N detectors, environment traced.
pub fn output_occupations(
    input: &FockState,
    n_users: usize,
    transmittance: f64,
    cap: usize,
) -> Result<BTreeMap<Vec<u8>, f64>, FockError> {
    if !(1..=4).contains(&n_users) {
        return Err(FockError::Users(n_users));
    }
    let modes = 2 * n_users;
    if input.modes != modes {
        return Err(FockError::Modes { expected: modes, got: input.modes });
    }
    let photons = input.photons();
    if photons > cap {
        return Err(FockError::Capacity { photons, cap });
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let st = transmittance.sqrt();
    let sl = (1.0 - transmittance).max(0.0).sqrt();
    // Output image of each input creation operator: detectors 0..2N, env 2N..4N.
    let image: Vec<Vec<(usize, f64)>> = (0..modes)
        .map(|m| {
            let u = m / 2;
            let (port, r_sign) = if m % 2 == 1 { (u, -1.0) } else { ((u + n_users - 1) % n_users, 1.0) };
            vec![(2 * port, st * h), (2 * port + 1, r_sign * st * h), (modes + m, sl)]
        })
        .collect();

    let mut out: BTreeMap<Vec<u8>, Complex64> = BTreeMap::new();
    for (occ, &amp) in &input.amplitudes {
        let norm: f64 = occ.iter().map(|&n| factorial(n)).product();
        let mut terms: BTreeMap<Vec<u8>, Complex64> = BTreeMap::new();
        terms.insert(vec![0; 2 * modes], amp / norm.sqrt());
        for (m, &n) in occ.iter().enumerate() {
            for _ in 0..n {
                let mut next = BTreeMap::new();
                for (o, a) in &terms {
                    for &(target, c) in &image[m] {
                        if c == 0.0 {
                            continue;
                        }
                        let mut o2 = o.clone();
                        o2[target] += 1;
                        *next.entry(o2).or_insert(Complex64::new(0.0, 0.0)) += a * c;
                    }
                }
                terms = next;
            }
        }
        for (o, a) in terms {
            let f: f64 = o.iter().map(|&n| factorial(n)).product();
            *out.entry(o).or_insert(Complex64::new(0.0, 0.0)) += a * f.sqrt();
        }
    }
    let mut det: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
    for (o, a) in out {
        let p = a.norm_sqr();
        if p > 0.0 {
            *det.entry(o[..modes].to_vec()).or_insert(0.0) += p;
        }
    }
    Ok(det)
}

/// Exact click-mask distribution with threshold detectors and dark counts.
pub fn propagate(
    input: &FockState,
    n_users: usize,
    transmittance: f64,
    p_d: f64,
    cap: usize,
) -> Result<ClickDistribution, FockError> {
    let det = output_occupations(input, n_users, transmittance, cap)?;
    let nd = 2 * n_users;
    let mut probs = vec![0.0; 1 << nd];
    for (occ, p) in det {
        let lit: usize = (0..nd).filter(|&d| occ[d] > 0).map(|d| 1 << d).sum();
        let dark: Vec<usize> = (0..nd).filter(|&d| occ[d] == 0).collect();
        for s in 0..1usize << dark.len() {
            let mut mask = lit;
            let mut w = p;
            for (j, &d) in dark.iter().enumerate() {
                if (s >> j) & 1 == 1 {
                    mask |= 1 << d;
                    w *= p_d;
                } else {
                    w *= 1.0 - p_d;
                }
            }
            probs[mask] += w;
        }
    }
    Ok(ClickDistribution { n_users, probs })
}

/// Port yield with `a` photons on the first input and `b` on the second, each
/// surviving with probability `transmittance`: exactly one detector fires.
pub fn port_yield(a: u8, b: u8, transmittance: f64, p_d: f64) -> Result<f64, FockError> {
    // A one-user ring: the user's late half is the first input, early the second.
    let input = FockState::basis(vec![b, a]);
    let d = propagate(&input, 1, transmittance, p_d, DEFAULT_PHOTON_CAP)?;
    Ok(d.pattern(0) + d.pattern(1))
}

/// All 2^N single-click patterns for the zero-phase single-photon input.
pub fn pattern_yields(n_users: usize, transmittance: f64, p_d: f64) -> Result<Vec<f64>, FockError> {
    let input = FockState::single_photon_superposition(&vec![0.0; n_users]);
    let d = propagate(&input, n_users, transmittance, p_d, DEFAULT_PHOTON_CAP)?;
    Ok((0..1usize << n_users).map(|r| d.pattern(r)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParityVerdict {
    pub n_users: usize,
    pub theta_g_is_pi: bool,
    /// Parity of R clicks required for a nonzero coincidence.
    pub expected_parity: usize,
    /// Parity the alternative (N−1 mod 2) reading would require at θ_g = 0.
    pub alternative_parity: usize,
    /// Nonzero N-fold coincidences as (pattern, probability).
    pub coincidences: Vec<(usize, f64)>,
    pub holds: bool,
}

/// Lossless, dark-free check that N-fold coincidences obey the parity rule.
pub fn parity_rule_check(n_users: usize, theta_g_is_pi: bool) -> Result<ParityVerdict, FockError> {
    let mut phases = vec![0.0; n_users];
    if theta_g_is_pi {
        phases[0] = std::f64::consts::PI;
    }
    let input = FockState::single_photon_superposition(&phases);
    let d = propagate(&input, n_users, 1.0, 0.0, DEFAULT_PHOTON_CAP)?;
    let expected_parity = usize::from(theta_g_is_pi);
    let coincidences: Vec<(usize, f64)> = (0..1usize << n_users)
        .map(|r| (r, d.pattern(r)))
        .filter(|&(_, p)| p > 1e-12)
        .collect();
    let holds = !coincidences.is_empty()
        && coincidences
            .iter()
            .all(|&(r, _)| r.count_ones() as usize % 2 == expected_parity);
    Ok(ParityVerdict {
        n_users,
        theta_g_is_pi,
        expected_parity,
        alternative_parity: (n_users - 1 + expected_parity) % 2,
        coincidences,
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics;
    use approx::assert_relative_eq;

    #[test]
    fn vacuum_never_clicks() {
        let d = propagate(&FockState::vacuum(6), 3, 0.7, 0.0, 4).unwrap();
        assert_eq!(d.probs[0], 1.0);
    }

    #[test]
    fn unitarity() {
        for n in 1..=4 {
            let s = FockState::single_photon_superposition(&vec![0.4; n]);
            assert_relative_eq!(s.norm_sqr(), 1.0, epsilon = 1e-12);
            let occ = output_occupations(&s, n, 1.0, 4).unwrap();
            assert_relative_eq!(occ.values().sum::<f64>(), 1.0, epsilon = 1e-12);
            let lossy = propagate(&s, n, 0.3, 0.01, 4).unwrap();
            assert_relative_eq!(lossy.total(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn capacity_error() {
        let s = FockState::basis(vec![3, 2, 0, 0, 0, 0]);
        assert!(matches!(propagate(&s, 3, 1.0, 0.0, 4), Err(FockError::Capacity { .. })));
    }

    #[test]
    fn hong_ou_mandel_bunching() {
        let d = propagate(&FockState::basis(vec![1, 1]), 1, 1.0, 0.0, 4).unwrap();
        assert_relative_eq!(d.probs[0b11], 0.0, epsilon = 1e-15);
        assert_relative_eq!(d.probs[0b01] + d.probs[0b10], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn error_class_vanishes_ideally() {
        let y = pattern_yields(3, 1.0, 0.0).unwrap();
        for r in 0..8usize {
            if r.count_ones() % 2 == 1 {
                assert!(y[r].abs() < 1e-15);
            }
        }
    }

    #[test]
    fn matches_closed_forms() {
        for &(eta, pd) in &[(0.5, 1e-6), (0.9, 0.02), (0.1, 0.3)] {
            let y = optics::single_photon_yields(eta, pd);
            let e = eta / 2.0;
            assert_relative_eq!(port_yield(0, 0, e, pd).unwrap(), y.y00, epsilon = 1e-12);
            assert_relative_eq!(port_yield(1, 0, e, pd).unwrap(), y.y10, epsilon = 1e-12);
            assert_relative_eq!(port_yield(0, 1, e, pd).unwrap(), y.y01, epsilon = 1e-12);
            assert_relative_eq!(port_yield(1, 1, e, pd).unwrap(), y.y11, epsilon = 1e-12);
            for n in [3, 4] {
                let a = pattern_yields(n, eta, pd).unwrap();
                let b = optics::pattern_yields(n, eta, pd).unwrap();
                for (x, z) in a.iter().zip(&b) {
                    assert!((x - z).abs() < 1e-12, "n={n} {x} {z}");
                }
            }
        }
    }

    #[test]
    fn parity_rule() {
        for n in [3, 4] {
            for pi in [false, true] {
                let v = parity_rule_check(n, pi).unwrap();
                assert!(v.holds, "{v:?}");
            }
        }
        assert_eq!(parity_rule_check(4, false).unwrap().alternative_parity, 1);
    }
}
