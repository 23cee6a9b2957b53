//! Key length and rate assembly, the star-network PLOB benchmark, and scans.

use crate::decoy::{asymptotic_estimates, finite_bounds_3user, DecoyError, DecoyEstimates};
use crate::model::{ModelError, ProtocolConfig, SecurityParams};
use crate::optimize::{optimize_point, OptimizeError, ParamVector};
use crate::sift::CountModel;
use crate::stats::{entropy_capped, EpsLedger};
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KeyRateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decoy(#[from] DecoyError),
    #[error("{0} mode supports only 3 users, got {1}")]
    Users(Mode, usize),
    #[error("transmittance {0} outside [0,1)")]
    Eta(f64),
    #[error("epsilon ledger charged {used} applications to {chain}, budget is {budget}")]
    Ledger { chain: String, used: usize, budget: usize },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("optimizer: {0}")]
    Optimize(Box<OptimizeError>),
}

impl From<OptimizeError> for KeyRateError {
    fn from(e: OptimizeError) -> Self {
        KeyRateError::Optimize(Box::new(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Infinite decoy intensities, infinite pulses.
    Asymptotic,
    /// Three intensities, infinite pulses.
    Decoy,
    /// Three intensities with composable finite-size corrections.
    Finite,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Asymptotic => "asymptotic",
            Mode::Decoy => "decoy",
            Mode::Finite => "finite",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "asymptotic" => Ok(Mode::Asymptotic),
            "decoy" => Ok(Mode::Decoy),
            "finite" => Ok(Mode::Finite),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyRateResult {
    pub distance_km: f64,
    pub eta: f64,
    pub mode: Mode,
    /// Key length after clamping at zero.
    pub key_length_bits: f64,
    /// Key length before clamping, used as an optimization surrogate.
    pub raw_key_length: f64,
    pub rate_per_pulse: f64,
    pub plob_bound: f64,
    pub qber_x: f64,
    pub n_tot: f64,
    pub n_z: f64,
    pub e_z: f64,
    pub leak_ec: f64,
    pub estimates: DecoyEstimates,
    pub params: ParamVector,
    pub quadrature_warning: bool,
    pub feasible: bool,
}

/// −log₂(1−η²).
pub fn plob_star_bound(eta: f64) -> Result<f64, KeyRateError> {
    if !(0.0..1.0).contains(&eta) {
        if eta == 1.0 {
            return Ok(f64::INFINITY);
        }
        return Err(KeyRateError::Eta(eta));
    }
    Ok(-(-eta * eta).ln_1p() / std::f64::consts::LN_2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecurityBudget {
    pub eps0: f64,
    pub eps3: f64,
    pub eps_sec: f64,
    pub eps_tot: f64,
}

pub const S111_APPLICATIONS: usize = 15;
pub const S0_APPLICATIONS: usize = 4;

/// ε_sec = 2(ε′+2ε_e+ε̂) + ε₀ + ε₃ + ε_β + ε_PA and ε_tot = ε_sec + ε_cor, with
/// ε₀ and ε₃ sized for 4 and 15 Chernoff applications. A ledger charging more
/// than that is rejected.
pub fn security_budget(sec: &SecurityParams, ledger: Option<&EpsLedger>) -> Result<SecurityBudget, KeyRateError> {
    sec.validate()?;
    if let Some(l) = ledger {
        for (chain, budget) in [("s111", S111_APPLICATIONS), ("s0", S0_APPLICATIONS)] {
            let used = l.count(chain);
            if used > budget {
                return Err(KeyRateError::Ledger { chain: chain.into(), used, budget });
            }
        }
    }
    let eps0 = S0_APPLICATIONS as f64 * sec.eps_chernoff;
    let eps3 = S111_APPLICATIONS as f64 * sec.eps_chernoff;
    let eps_sec = 2.0 * (sec.eps_prime + 2.0 * sec.eps_e + sec.eps_hat) + eps0 + eps3 + sec.eps_beta + sec.eps_pa;
    Ok(SecurityBudget { eps0, eps3, eps_sec, eps_tot: eps_sec + sec.eps_cor })
}

/// ℓ = s₁(1 − H₂(φ)) − leak, unclamped.
pub fn asymptotic_key_length(est: &DecoyEstimates, leak_ec: f64) -> f64 {
    est.s1_z * (1.0 - entropy_capped(est.phi_z)) - leak_ec
}

/// Composable key length, unclamped.
pub fn finite_key_length_3user(est: &DecoyEstimates, leak_ec: f64, sec: &SecurityParams) -> f64 {
    est.s0_z + est.s1_z * (1.0 - entropy_capped(est.phi_z))
        - leak_ec
        - (4.0 / sec.eps_cor).log2()
        - 2.0 * (2.0 / (sec.eps_prime * sec.eps_hat)).log2()
        - 2.0 * (1.0 / (2.0 * sec.eps_pa)).log2()
}

/// Evaluates one configuration at its configured distance.
pub fn evaluate(config: &ProtocolConfig, mode: Mode) -> Result<KeyRateResult, KeyRateError> {
    config.validate()?;
    if mode != Mode::Asymptotic && config.n_users != 3 {
        return Err(KeyRateError::Users(mode, config.n_users));
    }
    let eta = config.eta()?;
    let model = CountModel::new(config, eta);
    let sec = &config.security;
    let est = match mode {
        Mode::Asymptotic => asymptotic_estimates(&model)?,
        Mode::Decoy => finite_bounds_3user(&model, sec.eps_chernoff, sec.eps_e, false)?,
        Mode::Finite => finite_bounds_3user(&model, sec.eps_chernoff, sec.eps_e, true)?,
    };
    if mode == Mode::Finite {
        security_budget(sec, Some(&est.ledger))?;
    }
    let (n_z, e_z) = model.z_tallies();
    let leak_ec = sec.error_correction_f * n_z * entropy_capped(e_z);
    let raw = match mode {
        Mode::Asymptotic => asymptotic_key_length(&est, leak_ec),
        Mode::Decoy => est.s0_z + asymptotic_key_length(&est, leak_ec),
        Mode::Finite => finite_key_length_3user(&est, leak_ec, sec),
    };
    let key = if raw.is_finite() { raw.max(0.0) } else { 0.0 };
    let x = model.x_counts();
    Ok(KeyRateResult {
        distance_km: config.channel.distance_km,
        eta,
        mode,
        key_length_bits: key,
        raw_key_length: raw,
        rate_per_pulse: key / sec.total_pulses,
        plob_bound: plob_star_bound(eta)?,
        qber_x: if x.n > 0.0 { x.m / x.n } else { 0.0 },
        n_tot: model.n_tot,
        n_z,
        e_z,
        leak_ec,
        estimates: est,
        params: ParamVector::from_config(config),
        quadrature_warning: x.coarse_grid_warning,
        feasible: key > 0.0,
    })
}

/// Inclusive grid `start, start+step, …` up to `end`.
pub fn distance_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || end < start {
        return Vec::new();
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

/// Evaluates every distance. Without optimization points run in parallel; with
/// it they run in order so each point warm-starts from the previous optimum.
pub fn scan_distance(
    config: &ProtocolConfig,
    distances: &[f64],
    mode: Mode,
    optimize: bool,
    seed: u64,
) -> Result<Vec<KeyRateResult>, KeyRateError> {
    let at = |d: f64| {
        let mut c = config.clone();
        c.channel.distance_km = d;
        c
    };
    if !optimize {
        return distances.par_iter().map(|&d| evaluate(&at(d), mode)).collect();
    }
    let mut warm: Option<ParamVector> = None;
    let mut out = Vec::with_capacity(distances.len());
    for &d in distances {
        let best = optimize_point(&at(d), mode, warm.as_ref(), seed)?;
        if best.result.feasible {
            warm = Some(best.params.clone());
        }
        out.push(best.result);
    }
    Ok(out)
}

#[derive(Serialize)]
struct CsvRow {
    distance_km: f64,
    eta: f64,
    rate: f64,
    key_length: f64,
    plob: f64,
    qber_x: f64,
    phase_error: f64,
    n_tot: f64,
    mu: f64,
    nu: f64,
    p_mu: f64,
    p_nu: f64,
    t_c_s: f64,
    feasible: bool,
}

pub fn write_csv<W: Write>(writer: W, rows: &[KeyRateResult]) -> Result<(), KeyRateError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(CsvRow {
            distance_km: r.distance_km,
            eta: r.eta,
            rate: r.rate_per_pulse,
            key_length: r.key_length_bits,
            plob: r.plob_bound,
            qber_x: r.qber_x,
            phase_error: r.estimates.phi_z,
            n_tot: r.n_tot,
            mu: r.params.mu,
            nu: r.params.nu,
            p_mu: r.params.p_mu,
            p_nu: r.params.p_nu,
            t_c_s: r.params.t_c_s.unwrap_or(f64::NAN),
            feasible: r.feasible,
        })?;
    }
    if rows.is_empty() {
        w.write_record([
            "distance_km", "eta", "rate", "key_length", "plob", "qber_x", "phase_error", "n_tot", "mu", "nu",
            "p_mu", "p_nu", "t_c_s", "feasible",
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Least-squares slope of log₁₀ R against distance over feasible rows.
pub fn log_rate_slope(rows: &[KeyRateResult]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.rate_per_pulse > 0.0)
        .map(|r| (r.distance_km, r.rate_per_pulse.log10()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// First distance where the rate beats the PLOB bound.
pub fn plob_crossing(rows: &[KeyRateResult]) -> Option<f64> {
    rows.iter().find(|r| r.rate_per_pulse > r.plob_bound).map(|r| r.distance_km)
}
