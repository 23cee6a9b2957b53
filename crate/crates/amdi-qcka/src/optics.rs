//! Per-time-bin detection statistics of the ring interference network.
//!
//! Port `i` interferes user `i` and user `i+1` (cyclic). Each user's pulse is
//! split in half, so port `i` sees mean photon number α_i = η(k_i+k_{i+1})/4 per
//! detector before interference and β_i = η√(k_i k_{i+1})/2 of fringe.

use crate::model::{Intensity, ModelError, ProtocolConfig};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("expected {expected} entries, got {got}")]
    Length { expected: usize, got: usize },
    #[error("port index {0} out of range")]
    Port(usize),
    #[error("pattern yields are only defined for 3 or 4 users, got {0}")]
    UnsupportedUsers(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// I₀(x) for x ≥ 0, by power series below 30 and the asymptotic expansion above.
pub fn bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    if x < 30.0 {
        1.0 + i0m1_series(x)
    } else {
        // e^x/√(2πx) Σ ((2k-1)!!)² / (k! (8x)^k)
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..30 {
            let kk = k as f64;
            term *= (2.0 * kk - 1.0).powi(2) / (kk * 8.0 * x);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        x.exp() / (2.0 * PI * x).sqrt() * sum
    }
}

/// I₀(x) − 1 without cancellation for small x.
pub fn bessel_i0m1(x: f64) -> f64 {
    if x.abs() < 30.0 {
        i0m1_series(x.abs())
    } else {
        bessel_i0(x) - 1.0
    }
}

fn i0m1_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term <= 1e-17 * sum {
            break;
        }
    }
    sum
}

fn check_len(v: &[f64], n: usize) -> Result<(), OpticsError> {
    if v.len() != n {
        return Err(OpticsError::Length { expected: n, got: v.len() });
    }
    Ok(())
}

fn alpha_beta(kvec: &[f64], i: usize, eta: f64) -> (f64, f64) {
    let a = kvec[i];
    let b = kvec[(i + 1) % kvec.len()];
    (eta * (a + b) / 4.0, eta * (a * b).sqrt() / 2.0)
}

/// Click probabilities (E_L, E_R) of every port for fixed intensities and phases.
pub fn detector_click_probs(
    kvec: &[f64],
    theta_hat: &[f64],
    eta: f64,
    p_d: f64,
) -> Result<Vec<(f64, f64)>, OpticsError> {
    check_len(theta_hat, kvec.len())?;
    Ok((0..kvec.len())
        .map(|i| {
            let (a, b) = alpha_beta(kvec, i, eta);
            let c = b * theta_hat[i].cos();
            (
                1.0 - (1.0 - p_d) * (-(a + c)).exp(),
                1.0 - (1.0 - p_d) * (-(a - c)).exp(),
            )
        })
        .collect())
}

fn no_click_base(kvec: &[f64], eta: f64, p_d: f64) -> f64 {
    let n = kvec.len() as i32;
    let total: f64 = kvec.iter().sum();
    (1.0 - p_d).powi(2 * n - 1) * (-eta * total).exp()
}

/// Probability that only L_i (first) or only R_i (second) fires network-wide.
pub fn single_click_prob_phase(
    kvec: &[f64],
    i: usize,
    theta_hat_i: f64,
    eta: f64,
    p_d: f64,
) -> Result<(f64, f64), OpticsError> {
    if i >= kvec.len() {
        return Err(OpticsError::Port(i));
    }
    let (a, b) = alpha_beta(kvec, i, eta);
    let base = no_click_base(kvec, eta, p_d);
    let c = b * theta_hat_i.cos();
    Ok((base * ((a + c).exp_m1() + p_d), base * ((a - c).exp_m1() + p_d)))
}

/// Phase-averaged probability that only port i clicks (either detector).
pub fn port_click_prob(kvec: &[f64], i: usize, eta: f64, p_d: f64) -> Result<f64, OpticsError> {
    if i >= kvec.len() {
        return Err(OpticsError::Port(i));
    }
    let (a, b) = alpha_beta(kvec, i, eta);
    let base = no_click_base(kvec, eta, p_d);
    Ok(2.0 * base * (a.exp_m1() + a.exp() * bessel_i0m1(b) + p_d))
}

/// Probability of a single click anywhere in the network.
pub fn total_click_prob(kvec: &[f64], eta: f64, p_d: f64) -> Result<f64, OpticsError> {
    (0..kvec.len()).map(|i| port_click_prob(kvec, i, eta, p_d)).sum()
}

/// Port statistics with every user outside the port marginalized over the
/// configured intensity distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PortModel {
    pub n_users: usize,
    pub eta: f64,
    pub p_d: f64,
    pub values: [f64; 3],
    pub probs: [f64; 3],
    /// Phase-averaged single-click probability at a port whose left user sent
    /// intensity `a` and right user `b`, indexed `[a][b]`.
    pub q_ab: [[f64; 3]; 3],
    /// Σ p_a p_b q_ab.
    pub q_port: f64,
}

impl PortModel {
    pub fn new(config: &ProtocolConfig) -> Result<Self, OpticsError> {
        let eta = config.eta()?;
        Ok(Self::with_eta(config, eta))
    }

    pub fn with_eta(config: &ProtocolConfig, eta: f64) -> Self {
        let src = &config.source;
        let values = Intensity::ALL.map(|k| src.value(k));
        let probs = Intensity::ALL.map(|k| src.prob(k));
        let mut m = Self {
            n_users: config.n_users,
            eta,
            p_d: config.channel.p_d,
            values,
            probs,
            q_ab: [[0.0; 3]; 3],
            q_port: 0.0,
        };
        for a in 0..3 {
            for b in 0..3 {
                let (al, be) = m.alpha_beta(a, b);
                m.q_ab[a][b] = 2.0 * m.base(a, b) * (al.exp_m1() + al.exp() * bessel_i0m1(be) + m.p_d);
                m.q_port += probs[a] * probs[b] * m.q_ab[a][b];
            }
        }
        m
    }

    fn alpha_beta(&self, a: usize, b: usize) -> (f64, f64) {
        let (ka, kb) = (self.values[a], self.values[b]);
        (self.eta * (ka + kb) / 4.0, self.eta * (ka * kb).sqrt() / 2.0)
    }

    fn base(&self, a: usize, b: usize) -> f64 {
        let n = self.n_users as i32;
        let others: f64 = (0..3).map(|k| self.probs[k] * (-self.eta * self.values[k]).exp()).sum();
        (1.0 - self.p_d).powi(2 * n - 1)
            * (-self.eta * (self.values[a] + self.values[b])).exp()
            * others.powi(n - 2)
    }

    /// Phase-resolved (L, R) single-click probabilities for the pair (a, b).
    pub fn q_theta(&self, a: Intensity, b: Intensity, theta: f64) -> (f64, f64) {
        let (a, b) = (a.index(), b.index());
        let (al, be) = self.alpha_beta(a, b);
        let base = self.base(a, b);
        let c = be * theta.cos();
        (base * ((al + c).exp_m1() + self.p_d), base * ((al - c).exp_m1() + self.p_d))
    }

    pub fn q(&self, a: Intensity, b: Intensity) -> f64 {
        self.q_ab[a.index()][b.index()]
    }

    /// Network-wide single-click probability, N times the per-port value.
    pub fn q_total(&self) -> f64 {
        self.n_users as f64 * self.q_port
    }
}

/// Single-photon port yields and optional detector-pattern yields.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldTable {
    pub y00: f64,
    pub y01: f64,
    pub y10: f64,
    pub y11: f64,
    /// Indexed by pattern bitmask, bit i set when port i reports R.
    pub patterns: Option<Vec<f64>>,
}

/// Port yields for 0 or 1 photon on each input, with per-half transmittance η/2.
pub fn single_photon_yields(eta: f64, p_d: f64) -> YieldTable {
    let e = eta / 2.0;
    let y00 = 2.0 * p_d * (1.0 - p_d);
    let y10 = (2.0 * p_d * (1.0 - e) + e) * (1.0 - p_d);
    let y11 = (2.0 * p_d * (1.0 - e).powi(2) + 2.0 * e * (1.0 - e) + e * e) * (1.0 - p_d);
    YieldTable { y00, y01: y10, y10, y11, patterns: None }
}

/// Probability of each single-click-per-port pattern when every user sends one
/// photon in an equal early/late superposition with zero relative phases and
/// transmittance `t` per user.
///
/// Even-parity patterns (number of R clicks) are the correct class.
pub fn pattern_yields(n_users: usize, t: f64, p_d: f64) -> Result<Vec<f64>, OpticsError> {
    let s = 1.0 - t;
    let d = p_d;
    let (cor, err) = match n_users {
        3 => {
            let rest = t * t * s * (9.0 * d / 16.0 + 3.0 * d * d / 8.0)
                + t * s * s * (1.5 * d * d)
                + s.powi(3) * d.powi(3);
            let lead = t.powi(3) * (3.0 * d / 16.0);
            (t.powi(3) / 16.0 + lead + rest, lead + rest)
        }
        4 => {
            let rest = t.powi(3) * s * (d / 4.0 + d * d / 2.0)
                + t * t * s * s * (1.25 * d * d + 0.5 * d.powi(3))
                + t * s.powi(3) * (2.0 * d.powi(3))
                + s.powi(4) * d.powi(4);
            let lead = t.powi(4) * (3.0 * d / 32.0 + d * d / 32.0);
            (t.powi(4) / 64.0 + lead + rest, lead + rest)
        }
        n => return Err(OpticsError::UnsupportedUsers(n)),
    };
    let keep = (1.0 - p_d).powi(n_users as i32);
    Ok((0..1usize << n_users)
        .map(|r| if r.count_ones() % 2 == 0 { cor * keep } else { err * keep })
        .collect())
}

/// Class sums (𝒴^cor, 𝒴^err): each is 2^(N-1) times one pattern of its class.
pub fn pattern_classes(n_users: usize, t: f64, p_d: f64) -> Result<(f64, f64), OpticsError> {
    let y = pattern_yields(n_users, t, p_d)?;
    let k = (1u64 << (n_users - 1)) as f64;
    Ok((k * y[0], k * y[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bessel_values() {
        assert_eq!(bessel_i0(0.0), 1.0);
        assert_relative_eq!(bessel_i0(1.0), 1.2660658777520084, max_relative = 1e-13);
        assert_relative_eq!(bessel_i0(2.0), 2.2795853023360673, max_relative = 1e-13);
        assert_relative_eq!(bessel_i0(50.0), 2.93255378384934e20, max_relative = 1e-12);
        assert_relative_eq!(bessel_i0m1(1e-4), 2.5e-9, max_relative = 1e-7);
    }

    #[test]
    fn bessel_integral_identity() {
        let g = 256;
        for &(a, b, x) in &[(0.3, 0.4, 1.0), (1.0, 0.0, 2.5), (0.2, 0.9, 0.7)] {
            let mean: f64 = (0..g)
                .map(|j| {
                    let th = 2.0 * PI * j as f64 / g as f64;
                    (-x * (a * th.cos() + b * th.sin())).exp()
                })
                .sum::<f64>()
                / g as f64;
            let r = a * a + b * b;
            assert_relative_eq!(mean, bessel_i0(r.sqrt() * x), max_relative = 1e-9);
        }
    }

    #[test]
    fn detector_examples() {
        let e = detector_click_probs(&[0.0; 3], &[0.0; 3], 0.5, 0.0).unwrap();
        assert!(e.iter().all(|&(l, r)| l == 0.0 && r == 0.0));
        let e = detector_click_probs(&[0.3; 3], &[PI; 3], 0.5, 0.0).unwrap();
        assert!(e[0].0.abs() < 1e-15);
        assert_relative_eq!(e[0].1, 1.0 - (-0.5f64 * 0.3).exp(), max_relative = 1e-12);
    }

    #[test]
    fn single_click_matches_product_form() {
        let k = [0.4, 0.05, 0.0, 0.4];
        let th = [0.3, 1.1, 2.0, 4.0];
        let (eta, pd) = (0.3, 1e-3);
        let e = detector_click_probs(&k, &th, eta, pd).unwrap();
        for i in 0..4 {
            let others: f64 = (0..4).filter(|&j| j != i).map(|j| (1.0 - e[j].0) * (1.0 - e[j].1)).product();
            let (l, r) = single_click_prob_phase(&k, i, th[i], eta, pd).unwrap();
            assert_relative_eq!(l, e[i].0 * (1.0 - e[i].1) * others, max_relative = 1e-12);
            assert_relative_eq!(r, e[i].1 * (1.0 - e[i].0) * others, max_relative = 1e-12);
        }
    }

    #[test]
    fn port_prob_is_phase_average() {
        let k = [0.4, 0.1, 0.3];
        let (eta, pd) = (0.7, 1e-6);
        for i in 0..3 {
            let g = 128;
            let avg: f64 = (0..g)
                .map(|j| {
                    let (l, r) = single_click_prob_phase(&k, i, 2.0 * PI * j as f64 / g as f64, eta, pd).unwrap();
                    l + r
                })
                .sum::<f64>()
                / g as f64;
            assert!((avg - port_click_prob(&k, i, eta, pd).unwrap()).abs() < 1e-10);
        }
        assert_eq!(port_click_prob(&[0.0; 3], 0, 0.5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn cyclic_shift_rotates_ports() {
        let k = [0.4, 0.1, 0.0, 0.3];
        let rot = [0.1, 0.0, 0.3, 0.4];
        for i in 0..4 {
            assert_relative_eq!(
                port_click_prob(&k, (i + 1) % 4, 0.2, 1e-5).unwrap(),
                port_click_prob(&rot, i, 0.2, 1e-5).unwrap(),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn symmetric_total_is_n_times_port() {
        let k = [0.2; 3];
        let t = total_click_prob(&k, 0.1, 1e-7).unwrap();
        assert_relative_eq!(t, 3.0 * port_click_prob(&k, 1, 0.1, 1e-7).unwrap(), max_relative = 1e-14);
    }

    #[test]
    fn marginal_high_count_rate_approximation() {
        let mut c = ProtocolConfig::default();
        c.channel.p_d = 0.0;
        let m = PortModel::with_eta(&c, 1e-5);
        let approx = 3.0 * c.source.mean_intensity() * 1e-5;
        assert_relative_eq!(m.q_total(), approx, max_relative = 1e-3);
    }

    #[test]
    fn yields_examples() {
        let y = single_photon_yields(0.4, 0.0);
        assert_eq!(y.y00, 0.0);
        assert_relative_eq!(y.y10, 0.2);
        // Fock-correct two-photon yield: 2η'(1-η') + η'²
        assert_relative_eq!(y.y11, 2.0 * 0.2 * 0.8 + 0.04);
    }

    #[test]
    fn pattern_examples() {
        let t = 0.3;
        let y = pattern_yields(3, t, 0.0).unwrap();
        assert_eq!(y[0b111], 0.0);
        assert_relative_eq!(y[0], t.powi(3) / 16.0);
        let y = pattern_yields(4, t, 0.0).unwrap();
        assert_eq!(y[0b0001], 0.0);
        assert_relative_eq!(y[0], t.powi(4) / 64.0);
        assert!(pattern_yields(5, t, 0.0).is_err());
    }

    #[test]
    fn pattern_sum_matches_port_yields() {
        // Summing all patterns equals averaging port-yield products over routes.
        for n in [3usize, 4] {
            let (eta, pd) = (0.6, 1e-3);
            let y = single_photon_yields(eta, pd);
            let total: f64 = pattern_yields(n, eta / 2.0, pd).unwrap().iter().sum();
            let mut route_sum = 0.0;
            for late in 0..1usize << n {
                let mut p = 1.0;
                for i in 0..n {
                    let a = (late >> i) & 1;
                    let b = 1 - ((late >> ((i + 1) % n)) & 1);
                    p *= match (a, b) {
                        (0, 0) => y.y00,
                        (1, 1) => y.y11,
                        _ => y.y10,
                    };
                }
                route_sum += p;
            }
            assert_relative_eq!(total, route_sum / (1u64 << n) as f64, max_relative = 1e-12);
        }
    }
}
