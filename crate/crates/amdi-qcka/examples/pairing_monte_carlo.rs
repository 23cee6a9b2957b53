//! Simulates the click stream, pairs it and compares with the analytic count.

use amdi_qcka::pairing::{monte_carlo_pair_count, pair_stream, simulate_clicks, MonteCarloSetup};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (q, t_c) in [(1e-4, 1_000_000u64), (1e-4, 100_000), (1e-4, 10_000), (1e-4, 1_000)] {
        let setup = MonteCarloSetup { q_ports: vec![q; 3], bins: 100_000_000, t_c_bins: t_c, seed: 3, shard_bins: 1_000_000 };
        let r = monte_carlo_pair_count(&setup)?;
        println!(
            "q*T_c = {:>6.1}  simulated {:>6}  analytic {:>9.1}  deviation {:+.2}%  (sigma {:.1})",
            q * t_c as f64,
            r.pairs,
            r.analytic,
            100.0 * r.relative_deviation(),
            r.sigma
        );
    }

    let small = MonteCarloSetup { q_ports: vec![1e-3; 3], bins: 20_000, t_c_bins: 5_000, seed: 9, shard_bins: 20_000 };
    let clicks = simulate_clicks(&small);
    let outcome = pair_stream(&clicks, 3, small.t_c_bins);
    println!("\n{} clicks, {} events, {} leftover", clicks.len(), outcome.events.len(), outcome.leftover);
    for e in outcome.events.iter().take(3) {
        let bins: Vec<u64> = e.clicks.iter().map(|c| c.time_bin).collect();
        println!("  event spanning {} bins: {bins:?}", e.span());
    }
    Ok(())
}
