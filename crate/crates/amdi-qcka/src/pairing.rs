//! Asynchronous pairing of single-click events into N-port groups.
//!
//! The greedy automaton: take the earliest unused click as the start, then scan
//! forward while `T ≤ T_start + t_c_bins`, taking the first unused click of each
//! port not yet covered. A complete group is emitted and its clicks marked used.
//! An incomplete window drops the start click. Either way the next start is the
//! earliest unused click after the current one, which is the first skipped
//! duplicate when there was one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PairingError {
    #[error("click stream I/O: {0}")]
    Csv(#[from] csv::Error),
    #[error("port {port} outside 1..={n_ports}")]
    Port { port: usize, n_ports: usize },
    #[error("click stream not time ordered at line {0}")]
    Order(usize),
    #[error("invalid Monte Carlo setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    L,
    R,
}

/// A detector firing. Ports are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClickEvent {
    pub time_bin: u64,
    pub port: usize,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingEvent {
    /// One click per port, in port order.
    pub clicks: Vec<ClickEvent>,
}

impl PairingEvent {
    pub fn span(&self) -> u64 {
        let lo = self.clicks.iter().map(|c| c.time_bin).min().unwrap_or(0);
        let hi = self.clicks.iter().map(|c| c.time_bin).max().unwrap_or(0);
        hi - lo
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairingOutcome {
    pub events: Vec<PairingEvent>,
    /// Clicks that ended up in no group.
    pub leftover: usize,
}

/// Runs the pairing automaton over time-ordered clicks.
pub fn pair_stream(events: &[ClickEvent], n_ports: usize, t_c_bins: u64) -> PairingOutcome {
    let mut out = PairingOutcome::default();
    pair_indices(events, n_ports, t_c_bins, |group| {
        let mut clicks: Vec<ClickEvent> = group.iter().map(|&i| events[i]).collect();
        clicks.sort_by_key(|c| c.port);
        out.events.push(PairingEvent { clicks });
    });
    out.leftover = events.len() - out.events.len() * n_ports;
    out
}

fn pair_indices(events: &[ClickEvent], n_ports: usize, t_c_bins: u64, mut emit: impl FnMut(&[usize])) {
    let n = events.len();
    let mut used = vec![false; n];
    let mut slot = vec![usize::MAX; n_ports + 1];
    let mut group = Vec::with_capacity(n_ports);
    for start in 0..n {
        if used[start] {
            continue;
        }
        group.clear();
        group.push(start);
        slot[events[start].port] = start;
        let limit = events[start].time_bin.saturating_add(t_c_bins);
        let mut j = start + 1;
        while j < n && group.len() < n_ports && events[j].time_bin <= limit {
            let p = events[j].port;
            if !used[j] && slot[p] == usize::MAX {
                slot[p] = j;
                group.push(j);
            }
            j += 1;
        }
        for &g in &group {
            slot[events[g].port] = usize::MAX;
        }
        if group.len() == n_ports {
            for &g in &group {
                used[g] = true;
            }
            emit(&group);
        }
        used[start] = true;
    }
}

/// Expected number of pairing events. `n_tc = None` means an unbounded window.
pub fn analytic_pair_count(q_ports: &[f64], pulses: f64, n_tc: Option<f64>) -> f64 {
    let n = q_ports.len();
    if n == 0 {
        return 0.0;
    }
    let Some(n_tc) = n_tc else {
        return pulses * q_ports.iter().sum::<f64>() / n as f64;
    };
    if n_tc <= 0.0 {
        return 0.0;
    }
    let cover: Vec<f64> = q_ports
        .iter()
        .map(|&q| if q >= 1.0 { 1.0 } else { -(n_tc * (-q).ln_1p()).exp_m1() })
        .collect();
    (0..n)
        .map(|i| {
            let prod: f64 = (0..n).filter(|&j| j != i).map(|j| cover[j]).product();
            if prod <= 0.0 {
                0.0
            } else {
                pulses * q_ports[i] / (1.0 + (n as f64 - 1.0) / prod)
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSetup {
    /// Per-bin click probability of each port.
    pub q_ports: Vec<f64>,
    pub bins: u64,
    pub t_c_bins: u64,
    pub seed: u64,
    /// Bins per independently seeded shard.
    pub shard_bins: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub pairs: u64,
    pub clicks: u64,
    pub mean_span: f64,
    /// Batch-means standard error of `pairs`, one batch per shard.
    pub sigma: f64,
    pub analytic: f64,
}

impl MonteCarloResult {
    pub fn relative_deviation(&self) -> f64 {
        (self.pairs as f64 - self.analytic) / self.analytic
    }
}

fn shard_clicks(setup: &MonteCarloSetup, shard: u64) -> Vec<ClickEvent> {
    let lo = shard * setup.shard_bins;
    let hi = (lo + setup.shard_bins).min(setup.bins);
    let mut clicks = Vec::new();
    for (p, &q) in setup.q_ports.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
        rng.set_stream(shard * 64 + p as u64);
        if q <= 0.0 {
            continue;
        }
        let geo = Geometric::new(q.min(1.0)).expect("q in (0,1]");
        let mut t = lo;
        loop {
            t = t.saturating_add(geo.sample(&mut rng));
            if t >= hi {
                break;
            }
            let side = if rng.random::<bool>() { Side::R } else { Side::L };
            clicks.push(ClickEvent { time_bin: t, port: p + 1, side });
            t += 1;
        }
    }
    clicks.sort_unstable_by_key(|c| (c.time_bin, c.port));
    clicks
}

/// Time-ordered Bernoulli click stream for every port, identical for any
/// thread count.
pub fn simulate_clicks(setup: &MonteCarloSetup) -> Vec<ClickEvent> {
    if setup.shard_bins == 0 {
        return Vec::new();
    }
    let shards = setup.bins.div_ceil(setup.shard_bins);
    let parts: Vec<Vec<ClickEvent>> = (0..shards).into_par_iter().map(|s| shard_clicks(setup, s)).collect();
    parts.concat()
}

/// Simulates Bernoulli click streams and pairs them. Shards are generated in
/// parallel and concatenated in order, so results do not depend on threads.
pub fn monte_carlo_pair_count(setup: &MonteCarloSetup) -> Result<MonteCarloResult, PairingError> {
    let n = setup.q_ports.len();
    if !(2..=64).contains(&n) {
        return Err(PairingError::Setup(format!("{n} ports")));
    }
    if setup.bins == 0 || setup.shard_bins == 0 {
        return Err(PairingError::Setup("bins must be positive".into()));
    }
    if setup.q_ports.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(PairingError::Setup("click probabilities must lie in [0,1]".into()));
    }
    let shards = setup.bins.div_ceil(setup.shard_bins);
    let clicks = simulate_clicks(setup);

    let mut per_shard = vec![0u64; shards as usize];
    let mut span_sum = 0u64;
    let mut pairs = 0u64;
    pair_indices(&clicks, n, setup.t_c_bins, |group| {
        let t: Vec<u64> = group.iter().map(|&i| clicks[i].time_bin).collect();
        let lo = *t.iter().min().unwrap();
        span_sum += t.iter().max().unwrap() - lo;
        per_shard[(lo / setup.shard_bins) as usize] += 1;
        pairs += 1;
    });
    let k = per_shard.len() as f64;
    let sigma = if per_shard.len() > 1 {
        let mean = pairs as f64 / k;
        let var = per_shard.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (k * var).sqrt()
    } else {
        (pairs as f64).sqrt()
    };
    let n_tc = Some(setup.t_c_bins as f64);
    Ok(MonteCarloResult {
        pairs,
        clicks: clicks.len() as u64,
        mean_span: if pairs > 0 { span_sum as f64 / pairs as f64 } else { 0.0 },
        sigma,
        analytic: analytic_pair_count(&setup.q_ports, setup.bins as f64, n_tc),
    })
}

/// Writes `time_bin,port,side` lines with a header.
pub fn write_clicks<W: Write>(writer: W, events: &[ClickEvent]) -> Result<(), PairingError> {
    let mut w = csv::Writer::from_writer(writer);
    for e in events {
        w.serialize(e)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a click stream written by [`write_clicks`], checking order and ports.
pub fn read_clicks<R: Read>(reader: R, n_ports: usize) -> Result<Vec<ClickEvent>, PairingError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out: Vec<ClickEvent> = Vec::new();
    for (line, rec) in r.deserialize().enumerate() {
        let e: ClickEvent = rec?;
        if e.port == 0 || e.port > n_ports {
            return Err(PairingError::Port { port: e.port, n_ports });
        }
        if let Some(prev) = out.last() {
            if (prev.time_bin, prev.port) > (e.time_bin, e.port) {
                return Err(PairingError::Order(line + 2));
            }
        }
        out.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(t: u64, p: usize) -> ClickEvent {
        ClickEvent { time_bin: t, port: p, side: Side::L }
    }

    #[test]
    fn simple_group() {
        let out = pair_stream(&[c(1, 2), c(2, 3), c(3, 1)], 3, 3);
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.events[0].span(), 2);
        assert_eq!(out.leftover, 0);
    }

    #[test]
    fn duplicates_are_skipped() {
        let ev = [c(1, 2), c(2, 3), c(3, 2), c(4, 3), c(5, 1)];
        let out = pair_stream(&ev, 3, 10);
        assert_eq!(out.events.len(), 1);
        let times: Vec<u64> = out.events[0].clicks.iter().map(|c| c.time_bin).collect();
        assert_eq!(times, vec![5, 1, 2]);
        assert_eq!(out.leftover, 2);
    }

    #[test]
    fn window_failure() {
        let out = pair_stream(&[c(1, 2), c(2, 3), c(50, 1)], 3, 10);
        assert!(out.events.is_empty());
        assert_eq!(out.leftover, 3);
        assert!(pair_stream(&[], 3, 10).events.is_empty());
    }

    #[test]
    fn analytic_limits() {
        let q = [1e-4; 3];
        assert_relative_eq!(analytic_pair_count(&q, 1e10, None), 1e6);
        assert_relative_eq!(analytic_pair_count(&q, 1e10, Some(1e12)), 1e6, max_relative = 1e-9);
        assert_eq!(analytic_pair_count(&[1e-4, 0.0, 1e-4], 1e10, Some(1e6)), 0.0);
        assert_eq!(analytic_pair_count(&q, 1e10, Some(0.0)), 0.0);
    }

    #[test]
    fn saturated_stream() {
        let setup = MonteCarloSetup { q_ports: vec![1.0; 3], bins: 1000, t_c_bins: 5, seed: 1, shard_bins: 100 };
        let r = monte_carlo_pair_count(&setup).unwrap();
        assert_eq!(r.pairs, 1000);
        assert_eq!(r.mean_span, 0.0);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let setup = MonteCarloSetup { q_ports: vec![0.01; 3], bins: 200_000, t_c_bins: 200, seed: 7, shard_bins: 10_000 };
        let run = |t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| monte_carlo_pair_count(&setup).unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(4));
        assert_eq!(a, run(16));
    }

    #[test]
    fn groups_are_disjoint_and_within_window() {
        let setup = MonteCarloSetup { q_ports: vec![0.05, 0.03, 0.04, 0.02], bins: 20_000, t_c_bins: 40, seed: 3, shard_bins: 5000 };
        let clicks: Vec<ClickEvent> = (0..4).flat_map(|s| shard_clicks(&setup, s)).collect();
        let out = pair_stream(&clicks, 4, 40);
        let mut seen = std::collections::HashSet::new();
        for e in &out.events {
            assert!(e.span() <= 40);
            let ports: Vec<usize> = e.clicks.iter().map(|c| c.port).collect();
            assert_eq!(ports, vec![1, 2, 3, 4]);
            for c in &e.clicks {
                assert!(seen.insert((c.time_bin, c.port)));
            }
        }
    }

    #[test]
    fn click_io_round_trip() {
        let ev = vec![c(1, 2), ClickEvent { time_bin: 4, port: 1, side: Side::R }];
        let mut buf = Vec::new();
        write_clicks(&mut buf, &ev).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time_bin,port,side\n1,2,L\n"));
        assert_eq!(read_clicks(&buf[..], 3).unwrap(), ev);
        assert!(read_clicks(&b"time_bin,port,side\n5,1,L\n4,1,L\n"[..], 3).is_err());
        assert!(read_clicks(&b"time_bin,port,side\n5,9,L\n"[..], 3).is_err());
    }
}
