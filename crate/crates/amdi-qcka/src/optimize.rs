//! Multi-start downhill simplex over (μ, ν, p_μ, p_ν, T_c).
//!
//! Parameters live in an unconstrained space: μ = 1.5·σ(x₀), ν = μ·σ(x₁),
//! p_μ = σ(x₂), p_ν = (1−p_μ)·σ(x₃), T_c = T_max·σ(x₄) with T_max the drift-limited
//! window (or e^{x₄} when there is no drift). Every point of that space is
//! a valid configuration, so the simplex never needs constraint handling.

use crate::keyrate::{evaluate, KeyRateError, KeyRateResult, Mode};
use crate::model::ProtocolConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub const STARTS: usize = 8;
pub const MAX_EVALS: usize = 400;
pub const DIAMETER_TOL: f64 = 1e-4;
pub const MU_MAX: f64 = 1.5;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("no start produced a valid evaluation: {0}")]
    NoValidPoint(KeyRateError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub mu: f64,
    pub nu: f64,
    pub p_mu: f64,
    pub p_nu: f64,
    /// Pairing window, absent when phase-locked.
    pub t_c_s: Option<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

impl ParamVector {
    pub fn from_config(c: &ProtocolConfig) -> Self {
        Self {
            mu: c.source.mu,
            nu: c.source.nu,
            p_mu: c.source.p_mu,
            p_nu: c.source.p_nu,
            t_c_s: (!c.timing.phase_locked).then_some(c.timing.t_c_s),
        }
    }

    pub fn apply(&self, c: &ProtocolConfig) -> ProtocolConfig {
        let mut out = c.clone();
        out.source.mu = self.mu;
        out.source.nu = self.nu;
        out.source.p_mu = self.p_mu;
        out.source.p_nu = self.p_nu;
        if let Some(t) = self.t_c_s {
            out.timing.t_c_s = t;
        }
        out
    }

    pub fn from_unconstrained(x: &[f64], t_c_max: f64) -> Self {
        let mu = MU_MAX * sigmoid(x[0]);
        let p_mu = sigmoid(x[2]);
        Self {
            mu,
            nu: mu * sigmoid(x[1]),
            p_mu,
            p_nu: (1.0 - p_mu) * sigmoid(x[3]),
            t_c_s: x.get(4).map(|&v| if t_c_max.is_finite() { t_c_max * sigmoid(v) } else { v.exp() }),
        }
    }

    pub fn to_unconstrained(&self, t_c_max: f64) -> Vec<f64> {
        let mut x = vec![
            logit(self.mu / MU_MAX),
            logit(self.nu / self.mu),
            logit(self.p_mu),
            logit(self.p_nu / (1.0 - self.p_mu)),
        ];
        if let Some(t) = self.t_c_s {
            x.push(if t_c_max.is_finite() { logit(t / t_c_max) } else { t.max(1e-300).ln() });
        }
        x
    }

    pub fn is_valid(&self) -> bool {
        self.nu > 0.0
            && self.nu < self.mu
            && self.mu <= MU_MAX
            && self.p_mu >= 0.0
            && self.p_nu >= 0.0
            && self.p_mu + self.p_nu <= 1.0
            && self.t_c_s.is_none_or(|t| t > 0.0)
    }
}

/// Objective maximized by the simplex: log₁₀ R when key is positive, otherwise
/// a penalty below −40 that still rewards approaching feasibility.
pub fn objective(r: &KeyRateResult, pulses: f64) -> f64 {
    if r.raw_key_length > 0.0 {
        (r.raw_key_length / pulses).log10()
    } else {
        -40.0 - (1.0 + r.raw_key_length.abs()).log10()
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub params: ParamVector,
    pub result: KeyRateResult,
    pub evaluations: usize,
    pub start_index: usize,
}

struct Scored {
    value: f64,
    x: Vec<f64>,
}

fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64) -> (Scored, usize) {
    let n = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        -f(x)
    };
    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n + 1);
    simplex.push((eval(x0), x0.to_vec()));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        simplex.push((eval(&x), x));
    }
    loop {
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
        let diameter = simplex[1..]
            .iter()
            .map(|(_, x)| x.iter().zip(&simplex[0].1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < DIAMETER_TOL || evals.get() >= MAX_EVALS {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|(_, x)| x[j]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (worst.1[j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < simplex[0].0 {
            let xe = along(-2.0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (fe, xe) } else { (fr, xr) };
        } else if fr < simplex[n - 1].0 {
            simplex[n] = (fr, xr);
        } else {
            let (xc, fc) = if fr < worst.0 {
                let x = along(-0.5);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(&x);
                (x, v)
            };
            if fc < worst.0.min(fr) {
                simplex[n] = (fc, xc);
            } else {
                let best = simplex[0].1.clone();
                for s in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = s.1.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    *s = (eval(&x), x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (v, x) = simplex.swap_remove(0);
    (Scored { value: -v, x }, evals.get())
}

/// Best point of a multi-start search over the source parameters.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub params: ParamVector,
    pub value: f64,
    pub evaluations: usize,
    pub start_index: usize,
}

/// Maximizes `score` over (μ, ν, p_μ, p_ν, T_c). Start 0 is the warm start
/// (or the config's own parameters), starts 1..8 are seeded scatters around
/// it. Ties between starts go to the lowest index.
pub fn search_params(
    config: &ProtocolConfig,
    warm: Option<&ParamVector>,
    seed: u64,
    score: &(dyn Fn(&ProtocolConfig) -> f64 + Sync),
) -> SearchOutcome {
    let mut base = warm.cloned().unwrap_or_else(|| ParamVector::from_config(config));
    if config.timing.phase_locked {
        base.t_c_s = None;
    } else if base.t_c_s.is_none() {
        base.t_c_s = Some(config.timing.t_c_s);
    }
    let t_c_max = config.timing.max_pairing_window();
    let x0 = base.to_unconstrained(t_c_max);
    let f = |x: &[f64]| score(&ParamVector::from_unconstrained(x, t_c_max).apply(config));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<Vec<f64>> = (0..STARTS)
        .map(|i| {
            if i == 0 {
                x0.clone()
            } else {
                x0.iter().map(|v| v + rng.random_range(-2.0..2.0)).collect()
            }
        })
        .collect();
    let runs: Vec<(Scored, usize)> = starts.par_iter().map(|s| nelder_mead(&f, s, 0.5)).collect();
    let evaluations = runs.iter().map(|r| r.1).sum();
    let (start_index, best) = runs
        .iter()
        .enumerate()
        .fold(None::<(usize, &Scored)>, |acc, (i, (s, _))| match acc {
            Some((_, b)) if b.value >= s.value => acc,
            _ => Some((i, s)),
        })
        .expect("at least one start");
    SearchOutcome {
        params: ParamVector::from_unconstrained(&best.x, t_c_max),
        value: best.value,
        evaluations,
        start_index,
    }
}

/// Maximizes the key rate at the configured distance.
pub fn optimize_point(
    config: &ProtocolConfig,
    mode: Mode,
    warm: Option<&ParamVector>,
    seed: u64,
) -> Result<OptimizeResult, OptimizeError> {
    let pulses = config.security.total_pulses;
    let score = |c: &ProtocolConfig| match evaluate(c, mode) {
        Ok(r) => objective(&r, pulses),
        Err(_) => -1e3,
    };
    let found = search_params(config, warm, seed, &score);
    let result = evaluate(&found.params.apply(config), mode).map_err(OptimizeError::NoValidPoint)?;
    Ok(OptimizeResult {
        params: found.params,
        result,
        evaluations: found.evaluations,
        start_index: found.start_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_round_trip_and_validity() {
        let p = ParamVector { mu: 0.4, nu: 0.05, p_mu: 0.5, p_nu: 0.2, t_c_s: Some(3e-4) };
        let q = ParamVector::from_unconstrained(&p.to_unconstrained(1e-3), 1e-3);
        assert!((q.mu - p.mu).abs() < 1e-12 && (q.nu - p.nu).abs() < 1e-12);
        assert!((q.p_nu - p.p_nu).abs() < 1e-12 && (q.t_c_s.unwrap() - 3e-4).abs() < 1e-15);
        let q = ParamVector::from_unconstrained(&p.to_unconstrained(f64::INFINITY), f64::INFINITY);
        assert!((q.t_c_s.unwrap() - 3e-4).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-30.0..30.0)).collect();
            let p = ParamVector::from_unconstrained(&x, 2e-3);
            assert!(p.is_valid() && p.t_c_s.unwrap() <= 2e-3);
        }
    }

    #[test]
    fn simplex_finds_quadratic_minimum() {
        let f = |x: &[f64]| -((x[0] - 1.0).powi(2) + 2.0 * (x[1] + 0.5).powi(2));
        let (s, evals) = nelder_mead(&f, &[3.0, 3.0], 0.5);
        assert!(evals <= MAX_EVALS + 3);
        assert!((s.x[0] - 1.0).abs() < 1e-3 && (s.x[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn optimum_dominates_probes_and_is_deterministic() {
        let mut c = ProtocolConfig::default();
        c.channel.distance_km = 150.0;
        let a = optimize_point(&c, Mode::Asymptotic, None, 9).unwrap();
        let b = optimize_point(&c, Mode::Asymptotic, None, 9).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.params.is_valid());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = ParamVector::from_unconstrained(&x, f64::INFINITY);
            let r = evaluate(&p.apply(&c), Mode::Asymptotic).unwrap();
            assert!(a.result.rate_per_pulse >= r.rate_per_pulse);
        }
    }

    #[test]
    fn hopeless_distance_is_infeasible() {
        let mut c = ProtocolConfig::default();
        c.channel.distance_km = 1500.0;
        let r = optimize_point(&c, Mode::Asymptotic, None, 1).unwrap();
        assert!(!r.result.feasible);
        assert_eq!(r.result.key_length_bits, 0.0);
    }
}
