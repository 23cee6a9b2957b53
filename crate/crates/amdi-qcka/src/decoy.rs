//! Decoy-state estimates of single-photon counts and phase errors.
//!
//! Three estimators share one output type: the infinite-decoy limit for any N,
//! the three-intensity bounds for N = 3 without fluctuations, and the same
//! bounds with Chernoff fluctuations and the random-sampling correction.

use crate::model::Intensity;
use crate::optics::{pattern_classes, single_photon_yields, OpticsError};
use crate::sift::{CountModel, TotalIntensity as T};
use crate::stats::{chernoff_expected, chernoff_observed, sampling_gamma_upper, EpsLedger, StatsError};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoyError {
    #[error("three-intensity bounds need exactly 3 users, got {0}")]
    Users(usize),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Infinite-decoy limit.
    Asymptotic,
    /// Three intensities, expected counts taken as exact.
    Decoy,
    /// Three intensities with Chernoff fluctuations.
    Finite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoyEstimates {
    pub s0_z: f64,
    pub s1_z: f64,
    pub s1_x: f64,
    pub t1_x: f64,
    /// Single-photon X error rate t1_x / s1_x before the sampling correction.
    pub e1_x: f64,
    /// Phase error rate, capped at 0.5.
    pub phi_z: f64,
    pub provenance: Provenance,
    /// Set when a bound was clamped at zero or the phase error hit the cap.
    pub clamped: bool,
    pub ledger: EpsLedger,
}

pub(crate) fn p_nc(model: &CountModel) -> f64 {
    let p = &model.ports;
    let mean: f64 = (0..3).map(|k| p.probs[k] * p.values[k]).sum();
    ((-mean * p.eta).exp() * (1.0 - p.p_d).powi(2)).powi(model.n_users as i32 - 1)
}

/// Σ over early/late routes of the product of port yields.
pub fn route_yield_sum(n_users: usize, eta: f64, p_d: f64) -> f64 {
    let y = single_photon_yields(eta, p_d);
    (0..1usize << n_users)
        .map(|late| {
            (0..n_users)
                .map(|i| {
                    let a = (late >> i) & 1;
                    let b = 1 - ((late >> ((i + 1) % n_users)) & 1);
                    match (a, b) {
                        (0, 0) => y.y00,
                        (1, 1) => y.y11,
                        _ => y.y10,
                    }
                })
                .product::<f64>()
        })
        .sum()
}

/// Closed forms of [`route_yield_sum`] for three and four users.
pub fn route_yield_closed_form(n_users: usize, eta: f64, p_d: f64) -> Option<f64> {
    let y = single_photon_yields(eta, p_d);
    match n_users {
        3 => Some(2.0 * y.y10.powi(3) + 6.0 * y.y11 * y.y10 * y.y00),
        4 => Some(2.0 * y.y10.powi(4) + 12.0 * y.y11 * y.y10.powi(2) * y.y00 + 2.0 * (y.y11 * y.y00).powi(2)),
        _ => None,
    }
}

/// Per-user weight of single-photon Z emissions summed over the Z intensities.
fn z_weight(model: &CountModel) -> f64 {
    let p = &model.ports;
    let w = |k: Intensity| p.probs[k.index()] * p.probs[Intensity::O.index()] * p.values[k.index()] * (-p.values[k.index()]).exp();
    if model.extended_z {
        w(Intensity::Mu) + w(Intensity::Nu)
    } else {
        w(Intensity::Mu)
    }
}

pub(crate) fn pair_norm(model: &CountModel) -> f64 {
    model.n_tot / (model.ports.q_port * model.p_s).powi(model.n_users as i32)
}

/// Single-photon Z count in the infinite-decoy limit, over every Z set in use.
pub fn asymptotic_s1_z(model: &CountModel) -> f64 {
    let n = model.n_users as i32;
    pair_norm(model) * (z_weight(model) * p_nc(model)).powi(n) * route_yield_sum(model.n_users, model.ports.eta, model.ports.p_d)
}

/// Rescales the Z single-photon count to the [2ν,…,2ν] X set.
pub fn asymptotic_s1_x(model: &CountModel, s1_z: f64) -> f64 {
    let n = model.n_users as i32;
    let nu = model.ports.values[Intensity::Nu.index()];
    let p_nu = model.ports.probs[Intensity::Nu.index()];
    let p_x = 2.0 * p_nu.powi(2 * n) / model.phase_slices as f64;
    let wz = z_weight(model);
    if wz == 0.0 {
        return 0.0;
    }
    s1_z * (2.0 * nu).powi(n) * (-2.0 * n as f64 * nu).exp() * p_x / (2f64.powi(n) * wz.powi(n))
}

/// Single-photon X errors from the detector-pattern class yields.
pub fn asymptotic_t1_x(model: &CountModel) -> Result<f64, DecoyError> {
    let n = model.n_users;
    let nu = model.ports.values[Intensity::Nu.index()];
    let p_nu = model.ports.probs[Intensity::Nu.index()];
    let (cor, err) = pattern_classes(n, model.ports.eta / 2.0, model.ports.p_d)?;
    let w = p_nu * p_nu * 2.0 * nu * (-2.0 * nu).exp() * p_nc(model);
    Ok(pair_norm(model) * 2.0 / model.phase_slices as f64
        * w.powi(n as i32)
        * ((1.0 - model.e_d) * err + model.e_d * cor))
}

pub fn asymptotic_estimates(model: &CountModel) -> Result<DecoyEstimates, DecoyError> {
    let s1_z = asymptotic_s1_z(model);
    let s1_x = asymptotic_s1_x(model, s1_z);
    let t1_x = asymptotic_t1_x(model)?;
    let e = if s1_x > 0.0 { t1_x / s1_x } else { 0.5 };
    Ok(DecoyEstimates {
        s0_z: 0.0,
        s1_z,
        s1_x,
        t1_x,
        e1_x: e,
        phi_z: e.min(0.5),
        provenance: Provenance::Asymptotic,
        clamped: e >= 0.5,
        ledger: EpsLedger::new(),
    })
}

const S111: &str = "s111";
const S0: &str = "s0";
const PHASE: &str = "phase";

struct Bounder<'a> {
    model: &'a CountModel,
    eps: f64,
    fluctuate: bool,
    ledger: EpsLedger,
}

impl Bounder<'_> {
    fn count(&mut self, chain: &str, set: &[T], upper: bool) -> Result<f64, DecoyError> {
        let n = self.model.n_k(set);
        self.raw(chain, set, n, upper)
    }

    fn raw(&mut self, chain: &str, set: &[T], n: f64, upper: bool) -> Result<f64, DecoyError> {
        if !self.fluctuate {
            return Ok(n);
        }
        let label: Vec<&str> = set.iter().map(|k| k.label()).collect();
        self.ledger.charge(chain, label.join(","));
        let b = chernoff_expected(n, self.eps)?;
        Ok(if upper { b.upper } else { b.lower })
    }

    fn p(&self, set: &[T]) -> f64 {
        self.model.p_k(set)
    }

    /// e^{3k} n_kkk/p − Σ e^{2k} n_kko/p + Σ e^{k} n_koo/p − n_ooo/p with the
    /// positive terms bounded in direction `up`.
    fn inclusion_exclusion(&mut self, k: T, kval: f64, up: bool) -> Result<f64, DecoyError> {
        let mut v = (3.0 * kval).exp() * self.count(S111, &[k, k, k], up)? / self.p(&[k, k, k]);
        for s in rotations([k, k, T::Zero]) {
            v -= (2.0 * kval).exp() * self.count(S111, &s, !up)? / self.p(&s);
        }
        for s in rotations([k, T::Zero, T::Zero]) {
            v += kval.exp() * self.count(S111, &s, up)? / self.p(&s);
        }
        let o = [T::Zero; 3];
        v -= self.count(S111, &o, !up)? / self.p(&o);
        Ok(v)
    }
}

fn rotations(s: [T; 3]) -> Vec<[T; 3]> {
    let mut v = vec![s, [s[1], s[2], s[0]], [s[2], s[0], s[1]]];
    v.sort();
    v.dedup();
    v
}

/// Three-intensity bounds for N = 3. With `fluctuate` every expected count is
/// replaced by its Chernoff bound in the direction its sign requires, and the
/// derived quantities are converted back to observed-count bounds.
pub fn finite_bounds_3user(model: &CountModel, eps: f64, eps_e: f64, fluctuate: bool) -> Result<DecoyEstimates, DecoyError> {
    if model.n_users != 3 {
        return Err(DecoyError::Users(model.n_users));
    }
    let p = &model.ports;
    let mu = p.values[Intensity::Mu.index()];
    let nu = p.values[Intensity::Nu.index()];
    let mut b = Bounder { model, eps, fluctuate, ledger: EpsLedger::new() };

    let p_mmm = b.p(&[T::Mu; 3]);
    let (coef, weight) = if model.extended_z {
        let p_mmn = b.p(&[T::Mu, T::Mu, T::Nu]);
        let p_mnn = b.p(&[T::Mu, T::Nu, T::Nu]);
        let p_nnn = b.p(&[T::Nu; 3]);
        let w = mu.powi(3) * (-3.0 * mu).exp() * p_mmm
            + 3.0 * mu * mu * nu * (-2.0 * mu - nu).exp() * p_mmn
            + 3.0 * mu * nu * nu * (-mu - 2.0 * nu).exp() * p_mnn
            + nu.powi(3) * (-3.0 * nu).exp() * p_nnn;
        (w / (mu.powi(3) * nu.powi(3)), w)
    } else {
        ((-3.0 * mu).exp() * p_mmm / nu.powi(3), mu.powi(3) * (-3.0 * mu).exp() * p_mmm)
    };
    let f_nu = b.inclusion_exclusion(T::Nu, nu, false)?;
    let f_mu = b.inclusion_exclusion(T::Mu, mu, true)?;
    let s111_star = coef / (mu - nu) * (mu.powi(4) * f_nu - nu.powi(4) * f_mu);

    let omm = [T::Zero, T::Mu, T::Mu];
    let mut s0_star = (-mu).exp() * p_mmm * b.count(S0, &omm, false)? / b.p(&omm);
    if model.extended_z {
        let omn = [T::Zero, T::Mu, T::Nu];
        let onn = [T::Zero, T::Nu, T::Nu];
        let p_mmn = b.p(&[T::Mu, T::Mu, T::Nu]);
        let p_mnn = b.p(&[T::Mu, T::Nu, T::Nu]);
        let p_nnn = b.p(&[T::Nu; 3]);
        let n_onn = b.count(S0, &onn, false)? / b.p(&onn);
        s0_star += 3.0 * (-mu).exp() * p_mmn * b.count(S0, &omn, false)? / b.p(&omn)
            + 3.0 * (-mu).exp() * p_mnn * n_onn
            + (-nu).exp() * p_nnn * n_onn;
    }

    let p_x = 2.0 * p.probs[Intensity::Nu.index()].powi(6) / model.phase_slices as f64;
    let s1x_star = s111_star * (2.0 * nu * (-2.0 * nu).exp()).powi(3) * p_x / weight;

    let x = model.x_counts();
    let m_up = b.raw(PHASE, &[T::TwoNu; 3], x.m, true)?;
    let mut inner = (6.0 * nu).exp() * m_up / p_x;
    for s in rotations([T::TwoNu, T::TwoNu, T::Zero]) {
        inner -= (4.0 * nu).exp() * b.count(PHASE, &s, false)? / (2.0 * b.p(&s));
    }
    for s in rotations([T::TwoNu, T::Zero, T::Zero]) {
        inner += (2.0 * nu).exp() * b.count(PHASE, &s, true)? / (2.0 * b.p(&s));
    }
    let o = [T::Zero; 3];
    inner -= b.count(PHASE, &o, false)? / (2.0 * b.p(&o));
    let t_star = (-6.0 * nu).exp() * p_x * inner;

    let (s111, s0, s1x, t1x) = if fluctuate {
        b.ledger.charge(S0, "conversion");
        (
            chernoff_observed(s111_star.max(0.0), eps)?.lower,
            chernoff_observed(s0_star.max(0.0), eps)?.lower,
            chernoff_observed(s1x_star.max(0.0), eps)?.lower,
            chernoff_observed(t_star.max(0.0), eps)?.upper,
        )
    } else {
        (s111_star.max(0.0), s0_star.max(0.0), s1x_star.max(0.0), t_star.max(0.0))
    };
    let mut clamped = s111_star < 0.0 || s0_star < 0.0 || s1x_star < 0.0 || t_star < 0.0;
    let e = if s1x > 0.0 { t1x / s1x } else { 0.5 };
    let phi = if e >= 0.5 || s1x < 1.0 || s111 < 1.0 {
        clamped = true;
        0.5
    } else if fluctuate {
        let g = sampling_gamma_upper(s111, s1x, e.max(1e-300), eps_e)?;
        (e + g).min(0.5)
    } else {
        e
    };
    Ok(DecoyEstimates {
        s0_z: s0,
        s1_z: s111,
        s1_x: s1x,
        t1_x: t1x,
        e1_x: e,
        phi_z: phi,
        provenance: if fluctuate { Provenance::Finite } else { Provenance::Decoy },
        clamped,
        ledger: b.ledger,
    })
}
