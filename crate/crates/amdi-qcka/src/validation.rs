//! Self-checks run by the `validate` subcommand. Each check is independent and
//! reports a pass flag with a one-line detail.

use crate::fock_oracle;
use crate::keyrate::{evaluate, Mode};
use crate::mermin::{evaluate_mermin, QUANTUM_BOUND};
use crate::model::ProtocolConfig;
use crate::optics;
use crate::pairing::{monte_carlo_pair_count, MonteCarloSetup};
use crate::stats::{chernoff_observed, sampling_gamma_upper};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "ok  " } else { "FAIL" };
        write!(f, "{tag} {:<22} {}", self.name, self.detail)
    }
}

/// Largest gap between the Fock enumeration and the closed-form yields over a
/// `side`×`side` grid of (η, p_d), for N = 3 and N = 4 patterns.
pub fn oracle_gap(side: usize) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for i in 0..side {
        for j in 0..side {
            let eta = 0.05 + 0.9 * i as f64 / (side.max(2) - 1) as f64;
            let p_d = [0.0, 1e-10, 1e-6, 1e-3, 0.05][j % 5] * (1.0 + j as f64 / side as f64);
            let y = optics::single_photon_yields(eta, p_d);
            let t = eta / 2.0;
            let fock = |a, b| fock_oracle::port_yield(a, b, t, p_d).map_err(|e| e.to_string());
            for (got, want) in [(fock(0, 0)?, y.y00), (fock(1, 0)?, y.y10), (fock(0, 1)?, y.y01), (fock(1, 1)?, y.y11)] {
                worst = worst.max((got - want).abs());
            }
            for n in [3, 4] {
                let a = fock_oracle::pattern_yields(n, eta, p_d).map_err(|e| e.to_string())?;
                let b = optics::pattern_yields(n, eta, p_d).map_err(|e| e.to_string())?;
                for (x, z) in a.iter().zip(&b) {
                    worst = worst.max((x - z).abs());
                }
            }
        }
    }
    Ok(worst)
}

pub fn oracle_equivalence(side: usize) -> Check {
    match oracle_gap(side) {
        Ok(gap) => Check::new("oracle equivalence", gap <= 1e-10, format!("{} points, max gap {gap:.2e}", side * side)),
        Err(e) => Check::new("oracle equivalence", false, e),
    }
}

pub fn parity_rules() -> Check {
    let mut bad = Vec::new();
    for n in [3, 4] {
        for pi in [false, true] {
            match fock_oracle::parity_rule_check(n, pi) {
                Ok(v) if v.holds => {}
                Ok(v) => bad.push(format!("N={n} pi={pi} parity {}", v.expected_parity)),
                Err(e) => bad.push(e.to_string()),
            }
        }
    }
    let detail = if bad.is_empty() { "N=3,4 and theta_g=0,pi".to_string() } else { bad.join("; ") };
    Check::new("parity rule", bad.is_empty(), detail)
}

/// Violation frequencies (below, above) of the observed-count Chernoff interval.
pub fn chernoff_violations(draws: usize, trials: u64, p: f64, eps: f64, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Binomial::new(trials, p).expect("valid binomial");
    let b = chernoff_observed(trials as f64 * p, eps).expect("valid bound");
    let (mut lo, mut hi) = (0usize, 0usize);
    for _ in 0..draws {
        let k = dist.sample(&mut rng) as f64;
        if k < b.lower {
            lo += 1;
        }
        if k > b.upper {
            hi += 1;
        }
    }
    (lo as f64 / draws as f64, hi as f64 / draws as f64)
}

pub fn chernoff_coverage(draws: usize, seed: u64) -> Check {
    let eps = 1e-2;
    let mut worst = 0.0f64;
    for (i, &(n, p)) in [(10_000u64, 0.05), (200, 0.1), (1_000_000, 1e-4)].iter().enumerate() {
        let (lo, hi) = chernoff_violations(draws, n, p, eps, seed + i as u64);
        worst = worst.max(lo).max(hi);
    }
    Check::new("chernoff coverage", worst <= 2.0 * eps, format!("{draws} draws, worst side {worst:.2e} vs {:.0e}", 2.0 * eps))
}

pub fn gamma_monotone() -> Check {
    let mut prev = 0.0;
    let mut ok = true;
    let mut last = 0.0;
    for &lambda in &[0.01, 0.05, 0.1, 0.2, 0.3] {
        let g = sampling_gamma_upper(1e6, 1e5, lambda, 1e-7).unwrap_or(f64::NAN);
        ok &= g > 0.0 && g > prev;
        prev = g;
        last = g;
    }
    let mut prev = f64::INFINITY;
    for &n in &[1e4, 1e5, 1e6, 1e7] {
        let g = sampling_gamma_upper(n, n, 0.05, 1e-7).unwrap_or(f64::NAN);
        ok &= g > 0.0 && g < prev;
        prev = g;
    }
    Check::new("gamma monotone", ok, format!("increasing in lambda, decreasing in n, gamma(0.3)={last:.3e}"))
}

/// X-basis QBER at 10 km for N = 3 and N = 4.
pub fn intrinsic_qber() -> Result<(f64, f64), String> {
    let q = |n| {
        let mut c = ProtocolConfig::default();
        c.n_users = n;
        c.channel.distance_km = 10.0;
        evaluate(&c, Mode::Asymptotic).map(|r| r.qber_x).map_err(|e| e.to_string())
    };
    Ok((q(3)?, q(4)?))
}

pub fn qber_check() -> Check {
    match intrinsic_qber() {
        Ok((a, b)) => Check::new(
            "intrinsic qber",
            (0.355..=0.395).contains(&a) && (0.41..=0.45).contains(&b),
            format!("N=3 {a:.4}, N=4 {b:.4}"),
        ),
        Err(e) => Check::new("intrinsic qber", false, e),
    }
}

/// Largest single-photon phase error rate without noise over 0..=400 km.
pub fn noiseless_phase_error() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for n in [3, 4] {
        for d in (0..=400).step_by(50) {
            let mut c = ProtocolConfig::default();
            c.n_users = n;
            c.channel.e_d = 0.0;
            c.channel.p_d = 0.0;
            c.channel.distance_km = d as f64;
            let r = evaluate(&c, Mode::Asymptotic).map_err(|e| e.to_string())?;
            worst = worst.max(r.estimates.e1_x);
        }
    }
    Ok(worst)
}

pub fn phase_error_check() -> Check {
    match noiseless_phase_error() {
        Ok(e) => Check::new("zero phase error", e < 1e-9, format!("max {e:.2e} over 0-400 km")),
        Err(e) => Check::new("zero phase error", false, e),
    }
}

/// Named Monte Carlo parameter sets (q per port, window in bins).
pub const PAIRING_SETS: [(&str, f64, u64); 2] = [("saturated", 1e-4, 1_000_000), ("sparse", 1e-4, 1_000)];

pub fn pairing_check(name: &'static str, q: f64, t_c_bins: u64, bins: u64, seed: u64, threshold: f64) -> Check {
    let setup = MonteCarloSetup { q_ports: vec![q; 3], bins, t_c_bins, seed, shard_bins: (bins / 100).max(1) };
    match monte_carlo_pair_count(&setup) {
        Ok(r) => {
            let dev = r.relative_deviation();
            let within = (r.pairs as f64 - r.analytic).abs() <= 3.0 * r.sigma;
            Check::new(
                name,
                dev.abs() <= threshold && within,
                format!("qN={:.2} mc={} analytic={:.1} dev={:+.2}% sigma={:.1}", q * t_c_bins as f64, r.pairs, r.analytic, 100.0 * dev, r.sigma),
            )
        }
        Err(e) => Check::new(name, false, e.to_string()),
    }
}

pub fn mermin_range() -> Check {
    let mut worst = f64::NEG_INFINITY;
    for d in (0..=300).step_by(100) {
        let mut c = ProtocolConfig::default();
        c.channel.distance_km = d as f64;
        for mode in [Mode::Asymptotic, Mode::Decoy, Mode::Finite] {
            if let Ok(e) = evaluate_mermin(&c, mode) {
                if e.m_lower.is_finite() {
                    worst = worst.max(e.m_lower);
                }
            }
        }
    }
    Check::new("mermin bounded", worst <= QUANTUM_BOUND, format!("max lower bound {worst:.4}"))
}

/// Runs every check. `quick` trims grid sizes and sample counts.
pub fn run_all(quick: bool, seed: u64) -> Vec<Check> {
    let mut out = vec![
        oracle_equivalence(if quick { 2 } else { 5 }),
        parity_rules(),
        chernoff_coverage(if quick { 10_000 } else { 100_000 }, seed),
        gamma_monotone(),
        qber_check(),
        phase_error_check(),
        mermin_range(),
    ];
    if !quick {
        let (name, q, tc) = PAIRING_SETS[0];
        out.push(pairing_check(name, q, tc, 100_000_000, seed, 0.05));
    }
    out
}
