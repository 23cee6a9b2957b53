//! Binary entropy, Chernoff bounds and the random-sampling correction.

use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("{what} = {value} outside its domain")]
    Domain { what: &'static str, value: f64 },
}

fn domain(what: &'static str, value: f64) -> StatsError {
    StatsError::Domain { what, value }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
}

pub fn binary_entropy(x: f64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(domain("x", x));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// H₂ of an error rate clamped into [0, 0.5].
pub fn entropy_capped(x: f64) -> f64 {
    let x = if x.is_nan() { 0.5 } else { x.clamp(0.0, 0.5) };
    binary_entropy(x).expect("clamped")
}

fn beta(eps: f64) -> Result<f64, StatsError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(domain("eps", eps));
    }
    Ok((1.0 / eps).ln())
}

/// Bounds on an observed count given its expectation.
pub fn chernoff_observed(expected: f64, eps: f64) -> Result<BoundPair, StatsError> {
    if !(expected >= 0.0) {
        return Err(domain("expected", expected));
    }
    let b = beta(eps)?;
    let upper = expected + b / 2.0 + (2.0 * b * expected + b * b / 4.0).sqrt();
    let lower = (expected - (2.0 * b * expected).sqrt()).max(0.0);
    Ok(BoundPair { lower, upper })
}

/// Bounds on an expectation given an observed count.
pub fn chernoff_expected(observed: f64, eps: f64) -> Result<BoundPair, StatsError> {
    if !(observed >= 0.0) {
        return Err(domain("observed", observed));
    }
    let b = beta(eps)?;
    let upper = observed + b + (2.0 * b * observed + b * b).sqrt();
    let lower = (observed - b / 2.0 - (2.0 * b * observed + b * b / 4.0).sqrt()).max(0.0);
    Ok(BoundPair { lower, upper })
}

/// Random-sampling-without-replacement correction γᵁ(n, k, λ, ε).
///
/// Returns 0 when the logarithm in G is non-positive, which only happens for
/// samples so large that no correction is needed.
pub fn sampling_gamma_upper(n: f64, k: f64, lambda: f64, eps: f64) -> Result<f64, StatsError> {
    if !(n >= 1.0) {
        return Err(domain("n", n));
    }
    if !(k >= 1.0) {
        return Err(domain("k", k));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(domain("lambda", lambda));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(domain("eps", eps));
    }
    let a = n.max(k);
    let s = n + k;
    let lv = lambda * (1.0 - lambda);
    let log_arg = s / (2.0 * std::f64::consts::PI * n * k * lv * eps * eps);
    let g = s / (n * k) * log_arg.ln();
    if !(g > 0.0) {
        return Ok(0.0);
    }
    let num = (1.0 - 2.0 * lambda) * a * g / s + (a * a * g * g / (s * s) + 4.0 * lv * g).sqrt();
    let den = 2.0 + 2.0 * a * a * g / (s * s);
    Ok(num / den)
}

/// Counts one ε per distinct (chain, item) bound application.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpsLedger {
    chains: BTreeMap<String, BTreeSet<String>>,
}

impl EpsLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&mut self, chain: &str, item: impl Into<String>) {
        self.chains
            .entry(chain.to_string())
            .or_default()
            .insert(item.into());
    }

    pub fn count(&self, chain: &str) -> usize {
        self.chains.get(chain).map_or(0, |s| s.len())
    }

    pub fn total(&self) -> usize {
        self.chains.values().map(|s| s.len()).sum()
    }

    pub fn chains(&self) -> impl Iterator<Item = (&str, usize)> {
        self.chains.iter().map(|(k, v)| (k.as_str(), v.len()))
    }
}
