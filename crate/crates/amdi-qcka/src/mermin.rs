//! Mermin test on the post-selected three-user GHZ component.
//!
//! Signed counts n^{σ}_K are pairing events in set K where every user sent the
//! X-frame sign pattern σ and the outcome projected onto Φ₀⁺. For the
//! [2k,2k,2k] sets they come from the X-basis phase integral, split evenly over
//! the eight sign patterns; every other set contributes n_K/16.

use crate::decoy::{pair_norm, p_nc, DecoyError};
use crate::keyrate::Mode;
use crate::model::{Intensity, ModelError, ProtocolConfig, SecurityParams};
use crate::optics::{pattern_classes, OpticsError};
use crate::optimize::{search_params, ParamVector};
use crate::sift::{CountModel, IntensitySet, TotalIntensity as T};
use crate::stats::{chernoff_expected, chernoff_observed, EpsLedger, StatsError};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::io::Write;
use thiserror::Error;

pub const CLASSICAL_BOUND: f64 = 2.0;
pub const QUANTUM_BOUND: f64 = 4.0;
const CHAIN: &str = "mermin";

#[derive(Debug, Error)]
pub enum MerminError {
    #[error("the Mermin bound is only defined for three users, got {0}")]
    Users(usize),
    #[error("correlator {0} outside [-1, 1]")]
    Correlator(f64),
    #[error("Mermin ratio undefined: denominator is zero")]
    Undefined,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Decoy(#[from] DecoyError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

/// ⟨XXX⟩ − ⟨XYY⟩ − ⟨YXY⟩ − ⟨YYX⟩.
pub fn mermin_inequality(correlators: [f64; 4]) -> Result<f64, MerminError> {
    if let Some(&c) = correlators.iter().find(|c| !(-1.0..=1.0).contains(*c)) {
        return Err(MerminError::Correlator(c));
    }
    let [xxx, xyy, yxy, yyx] = correlators;
    Ok(xxx - xyy - yxy - yyx)
}

/// 4(s̲₊₊₊ − s̄₋₋₋)/(s̄₊₊₊ + s̄₋₋₋). Negative bounds are floored at zero first.
pub fn mermin_from_bounds(s_ppp_lower: f64, s_ppp_upper: f64, s_mmm_upper: f64) -> Result<f64, MerminError> {
    let (lo, hi, err) = (s_ppp_lower.max(0.0), s_ppp_upper.max(0.0), s_mmm_upper.max(0.0));
    let den = hi + err;
    if !(den > 0.0) {
        return Err(MerminError::Undefined);
    }
    Ok((4.0 * (lo - err) / den).min(QUANTUM_BOUND))
}

/// Sign pattern of the three users, `true` for |−⟩.
pub type Signs = [bool; 3];
pub const PPP: Signs = [false; 3];
pub const MMM: Signs = [true; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct SignedCounts {
    pub ppp: BTreeMap<IntensitySet, f64>,
    pub mmm: BTreeMap<IntensitySet, f64>,
    /// Selection probability used to normalize each set. The all-2k sets use
    /// the X-sifted probability 2p_k⁶/M.
    pub p: BTreeMap<IntensitySet, f64>,
}

fn sets_for(k: T) -> Vec<IntensitySet> {
    let o = T::Zero;
    vec![
        vec![k, k, k],
        vec![k, k, o],
        vec![k, o, k],
        vec![o, k, k],
        vec![k, o, o],
        vec![o, k, o],
        vec![o, o, k],
    ]
}

/// The fifteen distinct sets entering the decoy combinations.
pub fn mermin_sets() -> Vec<IntensitySet> {
    let mut v = sets_for(T::TwoNu);
    v.extend(sets_for(T::TwoMu));
    v.push(vec![T::Zero; 3]);
    v
}

fn single_intensity(set: &[T]) -> Option<Intensity> {
    match set {
        [T::TwoNu, T::TwoNu, T::TwoNu] => Some(Intensity::Nu),
        [T::TwoMu, T::TwoMu, T::TwoMu] => Some(Intensity::Mu),
        _ => None,
    }
}

fn p_x(model: &CountModel, k: Intensity) -> f64 {
    2.0 * model.ports.probs[k.index()].powi(6) / model.phase_slices as f64
}

/// Expected n^{σ}_K for one set and sign pattern.
pub fn signed_count(model: &CountModel, set: &[T], signs: Signs) -> Result<f64, MerminError> {
    if model.n_users != 3 {
        return Err(MerminError::Users(model.n_users));
    }
    Ok(match single_intensity(set) {
        Some(k) => {
            let x = model.x_counts_for(k);
            let e = model.e_d;
            let flipped = signs.iter().filter(|&&s| s).count() % 2 == 1;
            let (good, bad) = if flipped { (x.odd, x.even) } else { (x.even, x.odd) };
            ((1.0 - e) * good + e * bad) / 8.0
        }
        None => model.n_k(set) / 16.0,
    })
}

pub fn expected_signed_counts(model: &CountModel) -> Result<SignedCounts, MerminError> {
    if model.n_users != 3 {
        return Err(MerminError::Users(model.n_users));
    }
    let mut out = SignedCounts { ppp: BTreeMap::new(), mmm: BTreeMap::new(), p: BTreeMap::new() };
    for set in mermin_sets() {
        out.ppp.insert(set.clone(), signed_count(model, &set, PPP)?);
        out.mmm.insert(set.clone(), signed_count(model, &set, MMM)?);
        let p = match single_intensity(&set) {
            Some(k) => p_x(model, k),
            None => model.p_k(&set),
        };
        out.p.insert(set, p);
    }
    Ok(out)
}

/// Raw correlator for a frame choice (`true` = Y). Each Y frame shifts the
/// summed reference phase by π/2.
pub fn simulated_correlator(model: &CountModel, y_frames: [bool; 3]) -> f64 {
    let mut m = model.clone();
    m.delta += FRAC_PI_2 * y_frames.iter().filter(|&&y| y).count() as f64;
    let x = m.x_counts();
    if x.n > 0.0 {
        (x.n - 2.0 * x.m) / x.n
    } else {
        0.0
    }
}

/// (⟨XXX⟩, ⟨XYY⟩, ⟨YXY⟩, ⟨YYX⟩) of all detected X/Y events, multi-photon included.
pub fn simulated_correlators(model: &CountModel) -> [f64; 4] {
    [
        simulated_correlator(model, [false, false, false]),
        simulated_correlator(model, [false, true, true]),
        simulated_correlator(model, [true, false, true]),
        simulated_correlator(model, [true, true, false]),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct MerminEstimate {
    pub distance_km: f64,
    pub s_ppp_lower: f64,
    pub s_ppp_upper: f64,
    pub s_mmm_upper: f64,
    /// NaN when the ratio is undefined.
    pub m_lower: f64,
    pub mode: Mode,
    pub params: ParamVector,
    pub ledger: EpsLedger,
}

impl MerminEstimate {
    pub fn violates_local_realism(&self) -> bool {
        self.m_lower > CLASSICAL_BOUND
    }
}

struct Combiner<'a> {
    counts: &'a SignedCounts,
    eps: f64,
    fluctuate: bool,
    ledger: EpsLedger,
}

impl Combiner<'_> {
    fn term(&mut self, signs: Signs, set: &[T], up: bool) -> Result<f64, MerminError> {
        let table = if signs == PPP { &self.counts.ppp } else { &self.counts.mmm };
        let n = table[set];
        let n = if self.fluctuate {
            let tag = if signs == PPP { "+++" } else { "---" };
            let label: Vec<&str> = set.iter().map(|k| k.label()).collect();
            self.ledger.charge(CHAIN, format!("{tag}:{}", label.join(",")));
            let b = chernoff_expected(n, self.eps)?;
            if up { b.upper } else { b.lower }
        } else {
            n
        };
        Ok(n / self.counts.p[set])
    }

    /// e^{6k} n_kkk/p − Σ e^{4k} n_kko/p + Σ e^{2k} n_koo/p − n_ooo/p, positive
    /// terms bounded in direction `up`.
    fn combination(&mut self, signs: Signs, k: T, kval: f64, up: bool) -> Result<f64, MerminError> {
        let sets = sets_for(k);
        let mut v = (6.0 * kval).exp() * self.term(signs, &sets[0], up)?;
        for s in &sets[1..4] {
            v -= (4.0 * kval).exp() * self.term(signs, s, !up)?;
        }
        for s in &sets[4..7] {
            v += (2.0 * kval).exp() * self.term(signs, s, up)?;
        }
        v -= self.term(signs, &[T::Zero; 3], !up)?;
        Ok(v)
    }
}

/// Bounds on s₊₊₊ and s₋₋₋ and the resulting Mermin lower bound.
///
/// Asymptotic mode uses the exact single-photon class yields. Decoy mode runs
/// the two-intensity combination on expected counts; finite mode additionally
/// wraps every count in a Chernoff bound and converts the results back to
/// observed-count bounds.
pub fn mermin_lower_bound(model: &CountModel, sec: &SecurityParams, mode: Mode) -> Result<MerminEstimate, MerminError> {
    if model.n_users != 3 {
        return Err(MerminError::Users(model.n_users));
    }
    let p = &model.ports;
    let mu = p.values[Intensity::Mu.index()];
    let nu = p.values[Intensity::Nu.index()];
    let e = model.e_d;
    let (lo, hi, err, ledger) = match mode {
        Mode::Asymptotic => {
            let (cor, bad) = pattern_classes(3, p.eta / 2.0, p.p_d)?;
            let w = p.probs[Intensity::Nu.index()].powi(2) * 2.0 * nu * (-2.0 * nu).exp() * p_nc(model);
            let base = pair_norm(model) * 2.0 / model.phase_slices as f64 * w.powi(3) / 8.0;
            let s = base * ((1.0 - e) * cor + e * bad);
            (s, s, base * ((1.0 - e) * bad + e * cor), EpsLedger::new())
        }
        Mode::Decoy | Mode::Finite => {
            let counts = expected_signed_counts(model)?;
            let fluctuate = mode == Mode::Finite;
            let mut c = Combiner { counts: &counts, eps: sec.eps_chernoff, fluctuate, ledger: EpsLedger::new() };
            let pre = (-6.0 * nu).exp() * p_x(model, Intensity::Nu);
            let f_nu = c.combination(PPP, T::TwoNu, nu, false)?;
            let f_mu = c.combination(PPP, T::TwoMu, mu, true)?;
            let lo = pre / (mu.powi(3) * (mu - nu)) * (mu.powi(4) * f_nu - nu.powi(4) * f_mu);
            let hi = pre * c.combination(PPP, T::TwoNu, nu, true)?;
            let err = pre * c.combination(MMM, T::TwoNu, nu, true)?;
            if fluctuate {
                c.ledger.charge(CHAIN, "conversion");
                let lo = chernoff_observed(lo.max(0.0), sec.eps_chernoff)?.lower;
                let hi = chernoff_observed(hi.max(0.0), sec.eps_chernoff)?.upper;
                let err = chernoff_observed(err.max(0.0), sec.eps_chernoff)?.upper;
                (lo, hi, err, c.ledger)
            } else {
                (lo, hi, err, c.ledger)
            }
        }
    };
    let m_lower = match mermin_from_bounds(lo, hi, err) {
        Ok(m) => m,
        Err(MerminError::Undefined) => f64::NAN,
        Err(other) => return Err(other),
    };
    Ok(MerminEstimate {
        distance_km: 0.0,
        s_ppp_lower: lo,
        s_ppp_upper: hi,
        s_mmm_upper: err,
        m_lower,
        mode,
        params: ParamVector { mu, nu, p_mu: p.probs[Intensity::Mu.index()], p_nu: p.probs[Intensity::Nu.index()], t_c_s: None },
        ledger,
    })
}

pub fn evaluate_mermin(config: &ProtocolConfig, mode: Mode) -> Result<MerminEstimate, MerminError> {
    config.validate()?;
    if config.n_users != 3 {
        return Err(MerminError::Users(config.n_users));
    }
    let model = CountModel::new(config, config.eta()?);
    let mut est = mermin_lower_bound(&model, &config.security, mode)?;
    est.distance_km = config.channel.distance_km;
    est.params = ParamVector::from_config(config);
    Ok(est)
}

/// Chooses the source parameters that maximize M̲ at the configured distance.
pub fn optimize_mermin(
    config: &ProtocolConfig,
    mode: Mode,
    warm: Option<&ParamVector>,
    seed: u64,
) -> Result<MerminEstimate, MerminError> {
    if config.n_users != 3 {
        return Err(MerminError::Users(config.n_users));
    }
    let score = |c: &ProtocolConfig| match evaluate_mermin(c, mode) {
        Ok(e) if e.m_lower.is_finite() => e.m_lower,
        _ => -10.0,
    };
    let found = search_params(config, warm, seed, &score);
    evaluate_mermin(&found.params.apply(config), mode)
}

/// Mermin bound at every distance, optionally re-optimizing the source at
/// each point with a warm start from the previous one.
pub fn mermin_scan(
    config: &ProtocolConfig,
    distances: &[f64],
    mode: Mode,
    optimize: bool,
    seed: u64,
) -> Result<Vec<MerminEstimate>, MerminError> {
    let at = |d: f64| {
        let mut c = config.clone();
        c.channel.distance_km = d;
        c
    };
    if !optimize {
        return distances.par_iter().map(|&d| evaluate_mermin(&at(d), mode)).collect();
    }
    let mut warm: Option<ParamVector> = None;
    let mut out = Vec::with_capacity(distances.len());
    for &d in distances {
        let est = optimize_mermin(&at(d), mode, warm.as_ref(), seed)?;
        if est.m_lower.is_finite() {
            warm = Some(est.params.clone());
        }
        out.push(est);
    }
    Ok(out)
}

#[derive(Serialize)]
struct CsvRow {
    distance_km: f64,
    m_lower: f64,
    s_ppp_lower: f64,
    s_mmm_upper: f64,
    classical_bound: f64,
}

pub fn write_mermin_csv<W: Write>(writer: W, rows: &[MerminEstimate]) -> Result<(), MerminError> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(["distance_km", "m_lower", "s_ppp_lower", "s_mmm_upper", "classical_bound"])?;
    }
    for r in rows {
        w.serialize(CsvRow {
            distance_km: r.distance_km,
            m_lower: r.m_lower,
            s_ppp_lower: r.s_ppp_lower,
            s_mmm_upper: r.s_mmm_upper,
            classical_bound: CLASSICAL_BOUND,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model(c: &ProtocolConfig) -> CountModel {
        CountModel::new(c, c.eta().unwrap())
    }

    #[test]
    fn inequality_values() {
        assert_eq!(mermin_inequality([1.0, -1.0, -1.0, -1.0]).unwrap(), 4.0);
        assert_eq!(mermin_inequality([0.0; 4]).unwrap(), 0.0);
        assert_eq!(mermin_inequality([0.5, -0.5, -0.5, -0.5]).unwrap(), CLASSICAL_BOUND);
        assert!(matches!(mermin_inequality([1.2, 0.0, 0.0, 0.0]), Err(MerminError::Correlator(_))));
    }

    #[test]
    fn ratio_form_in_the_ideal_limit() {
        for e in [0.0, 0.1, 0.25, 0.4] {
            let m = mermin_from_bounds(1.0 - e, 1.0 - e, e).unwrap();
            assert_relative_eq!(m, 4.0 * (1.0 - 2.0 * e), epsilon = 1e-12);
        }
        assert_relative_eq!(mermin_from_bounds(0.75, 0.75, 0.25).unwrap(), 2.0);
        assert!(matches!(mermin_from_bounds(0.0, 0.0, 0.0), Err(MerminError::Undefined)));
    }

    #[test]
    fn no_errors_without_noise() {
        let mut c = ProtocolConfig::default();
        c.channel.e_d = 0.0;
        c.channel.p_d = 0.0;
        c.channel.distance_km = 0.0;
        let est = mermin_lower_bound(&model(&c), &c.security, Mode::Asymptotic).unwrap();
        assert!(est.s_mmm_upper.abs() < 1e-12 * est.s_ppp_lower);
        assert_relative_eq!(est.m_lower, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn sign_patterns_with_equal_parity_agree() {
        let m = model(&ProtocolConfig::default());
        let set = [T::TwoNu; 3];
        let a = signed_count(&m, &set, PPP).unwrap();
        for s in [[false, true, true], [true, false, true], [true, true, false]] {
            assert_eq!(signed_count(&m, &set, s).unwrap(), a);
        }
        let b = signed_count(&m, &set, MMM).unwrap();
        assert_relative_eq!(signed_count(&m, &set, [true, false, false]).unwrap(), b);
        let x = m.x_counts();
        assert_relative_eq!(8.0 * (a + b), x.n, max_relative = 1e-12);
        assert_relative_eq!(signed_count(&m, &[T::TwoNu, T::Zero, T::Zero], PPP).unwrap(), m.n_k(&[T::TwoNu, T::Zero, T::Zero]) / 16.0);
    }

    #[test]
    fn correlator_symmetry() {
        let m = model(&ProtocolConfig::default());
        let [xxx, xyy, yxy, yyx] = simulated_correlators(&m);
        for c in [xyy, yxy, yyx] {
            assert!((xxx + c).abs() < 1e-9, "{xxx} {c}");
        }
        assert_relative_eq!(mermin_inequality([xxx, xyy, yxy, yyx]).unwrap(), 4.0 * xxx, epsilon = 1e-9);
    }

    #[test]
    fn finite_bound_exceeds_classical_at_50km() {
        let mut c = ProtocolConfig::default();
        c.channel.distance_km = 50.0;
        c.security.total_pulses = 1e16;
        let fixed = evaluate_mermin(&c, Mode::Finite).unwrap();
        assert!(!fixed.violates_local_realism());
        assert_eq!(fixed.ledger.count(CHAIN), 24);
        let est = optimize_mermin(&c, Mode::Finite, None, 3).unwrap();
        assert!(est.violates_local_realism(), "{est:?}");
        assert!(est.m_lower <= QUANTUM_BOUND && est.m_lower > fixed.m_lower);
        assert!(est.params.is_valid());
    }

    #[test]
    fn misalignment_lowers_the_bound() {
        let mut last = f64::INFINITY;
        for e in [0.0, 0.02, 0.05, 0.1] {
            let mut c = ProtocolConfig::default();
            c.channel.distance_km = 50.0;
            c.channel.e_d = e;
            let m = evaluate_mermin(&c, Mode::Decoy).unwrap().m_lower;
            assert!(m < last, "{e} {m}");
            last = m;
        }
    }

    #[test]
    fn empty_csv_has_header() {
        let mut buf = Vec::new();
        write_mermin_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), "distance_km,m_lower,s_ppp_lower,s_mmm_upper,classical_bound");
    }
}
