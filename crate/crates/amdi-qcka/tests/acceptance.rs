//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are reported but do not fail the run; every
//! other failure exits nonzero. Set `AMDI_REGEN_FIXTURES=1` to rewrite the
//! golden CSV files under `tests/fixtures`.

use amdi_qcka::cli;
use amdi_qcka::keyrate::{log_rate_slope, plob_crossing, scan_distance, KeyRateResult, Mode};
use amdi_qcka::mermin::{mermin_scan, QUANTUM_BOUND};
use amdi_qcka::model::ProtocolConfig;
use amdi_qcka::validation;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const KNOWN_RED: [u32; 2] = [5, 6];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

type Criterion = fn() -> Result<Outcome, String>;

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn scratch_root() -> PathBuf {
    std::env::temp_dir().join(format!("amdi-qcka-acceptance-{}", std::process::id()))
}

fn scratch_dir(tag: &str) -> PathBuf {
    let d = scratch_root().join(tag);
    std::fs::create_dir_all(&d).expect("scratch dir");
    d
}

fn close(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => (x - y).abs() <= 1e-6 * x.abs().max(y.abs()) + 1e-300,
        _ => false,
    }
}

/// Compares a CSV against its frozen fixture field by field.
fn golden(name: &str, produced: &Path) -> Result<String, String> {
    let path = fixtures_dir().join(name);
    let got = std::fs::read_to_string(produced).map_err(|e| e.to_string())?;
    if std::env::var_os("AMDI_REGEN_FIXTURES").is_some() {
        std::fs::write(&path, &got).map_err(|e| e.to_string())?;
        return Ok(format!("fixture {name} regenerated"));
    }
    let want = std::fs::read_to_string(&path).map_err(|e| format!("{name}: {e}"))?;
    let (g, w): (Vec<&str>, Vec<&str>) = (got.lines().collect(), want.lines().collect());
    if g.len() != w.len() {
        return Err(format!("{name}: {} rows, fixture has {}", g.len(), w.len()));
    }
    for (i, (a, b)) in g.iter().zip(&w).enumerate() {
        let (fa, fb): (Vec<&str>, Vec<&str>) = (a.split(',').collect(), b.split(',').collect());
        if fa.len() != fb.len() || !fa.iter().zip(&fb).all(|(x, y)| close(x, y)) {
            return Err(format!("{name}: row {i} differs"));
        }
    }
    Ok(format!("fixture {name} matches"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let mut full = vec!["amdi-qcka"];
    full.extend_from_slice(args);
    if cli::run(full.clone()) == ExitCode::SUCCESS {
        Ok(())
    } else {
        Err(format!("command failed: {}", full.join(" ")))
    }
}

fn c1_intrinsic_qber() -> Result<Outcome, String> {
    let (a, b) = validation::intrinsic_qber()?;
    let ok = (0.355..=0.395).contains(&a) && (0.41..=0.45).contains(&b);
    Ok(outcome(ok, format!("N=3 {a:.4} in [0.355,0.395], N=4 {b:.4} in [0.41,0.45]")))
}

fn c2_zero_phase_error() -> Result<Outcome, String> {
    let e = validation::noiseless_phase_error()?;
    Ok(outcome(e < 1e-9, format!("max single-photon phase error {e:.2e} over 0-400 km")))
}

fn c3_eta_scaling() -> Result<Outcome, String> {
    let distances: Vec<f64> = (0..=20).map(|i| 50.0 + 10.0 * i as f64).collect();
    let rows = scan_distance(&ProtocolConfig::default(), &distances, Mode::Asymptotic, true, 1).map_err(|e| e.to_string())?;
    let slope = log_rate_slope(&rows).ok_or("no feasible points")?;
    let rel = (slope / -0.016 - 1.0).abs();
    Ok(outcome(rel <= 0.15, format!("slope {slope:.5}/km, {:.1}% from -0.016", 100.0 * rel)))
}

fn c4_asymptotic_plob() -> Result<Outcome, String> {
    let dir = scratch_dir("c4");
    let out = dir.join("fig3.csv");
    run_cli(&["scan", "--fig", "3a", "--distance-km", "0:400:20", "--out", out.to_str().unwrap()])?;
    let mut detail = Vec::new();
    let mut ok = true;
    for n in [3, 4] {
        let mut c = ProtocolConfig::default();
        c.n_users = n;
        let d: Vec<f64> = (0..=20).map(|i| 20.0 * i as f64).collect();
        let rows = scan_distance(&c, &d, Mode::Asymptotic, true, 1).map_err(|e| e.to_string())?;
        let cross = plob_crossing(&rows).filter(|&d| d <= 300.0);
        ok &= cross.is_some();
        detail.push(format!("N={n} crosses PLOB at {}", cross.map_or("none".into(), |d| format!("{d} km"))));
        if n == 3 {
            let far = rows.iter().find(|r| r.distance_km == 400.0).map(|r: &KeyRateResult| r.feasible);
            ok &= far == Some(true);
            detail.push(format!("feasible at 400 km: {}", far == Some(true)));
        }
    }
    for n in ["n3", "n4"] {
        match golden(&format!("fig3_{n}.csv"), &dir.join(format!("fig3_{n}.csv"))) {
            Ok(_) => {}
            Err(e) => {
                ok = false;
                detail.push(e);
            }
        }
    }
    detail.push("fixtures checked".into());
    Ok(outcome(ok, detail.join(", ")))
}

fn c5_finite_plob() -> Result<Outcome, String> {
    let dir = scratch_dir("c5");
    let out = dir.join("fig6.csv");
    run_cli(&[
        "scan", "--fig", "6", "--pulses", "1e16", "--filtering", "--distance-km", "0:350:25", "--out",
        out.to_str().unwrap(),
    ])?;
    let mut c = ProtocolConfig::default();
    c.timing.phase_locked = false;
    c.click_filtering = true;
    c.security.total_pulses = 1e16;
    let rows = scan_distance(&c, &[200.0, 310.0, 320.0], Mode::Finite, true, 1).map_err(|e| e.to_string())?;
    let at200 = &rows[0];
    let beats = at200.rate_per_pulse > at200.plob_bound;
    let beyond = rows[1..].iter().filter(|r| r.feasible).map(|r| r.distance_km).fold(None, |a: Option<f64>, d| Some(a.map_or(d, |a| a.max(d))));
    let fixture = golden("fig6_n1e16_filtered.csv", &out);
    let ok = beats && beyond.is_some() && fixture.is_ok();
    Ok(outcome(
        ok,
        format!(
            "R(200)={:.3e} vs PLOB {:.3e} ({:+.1}%), feasible beyond 300 km: {}, {}",
            at200.rate_per_pulse,
            at200.plob_bound,
            100.0 * (at200.rate_per_pulse / at200.plob_bound - 1.0),
            beyond.map_or("no".into(), |d| format!("yes ({d} km)")),
            fixture.unwrap_or_else(|e| e),
        ),
    ))
}

fn c6_pairing() -> Result<Outcome, String> {
    let checks: Vec<validation::Check> = validation::PAIRING_SETS
        .iter()
        .map(|&(name, q, tc)| validation::pairing_check(name, q, tc, 100_000_000, 1, 0.05))
        .collect();
    let ok = checks.iter().all(|c| c.passed);
    let detail: Vec<String> = checks.iter().map(|c| format!("{} [{}] {}", c.name, if c.passed { "ok" } else { "bad" }, c.detail)).collect();
    Ok(outcome(ok, detail.join("; ")))
}

fn c7_oracle() -> Result<Outcome, String> {
    let gap = validation::oracle_gap(5)?;
    let parity = validation::parity_rules();
    Ok(outcome(gap <= 1e-10 && parity.passed, format!("25-point grid max gap {gap:.2e}, parity: {}", parity.detail)))
}

fn c8_statistics() -> Result<Outcome, String> {
    let cov = validation::chernoff_coverage(100_000, 1);
    let gamma = validation::gamma_monotone();
    Ok(outcome(cov.passed && gamma.passed, format!("{}; {}", cov.detail, gamma.detail)))
}

fn c9_mermin() -> Result<Outcome, String> {
    let dir = scratch_dir("c9");
    let out = dir.join("fig7.csv");
    run_cli(&["mermin", "--fig", "7", "--distance-km", "0:300:25", "--out", out.to_str().unwrap()])?;
    let rows = csv_column(&out, "m_lower")?;
    let first_100: Vec<f64> = rows.iter().filter(|(d, _)| *d <= 100.0).map(|r| r.1).collect();
    let above = first_100.iter().all(|&m| m > 2.0);
    let min_100 = first_100.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut c = ProtocolConfig::default();
    c.security.total_pulses = 1e16;
    let d: Vec<f64> = (0..=8).map(|i| 50.0 * i as f64).collect();
    let mut worst = rows.iter().map(|r| r.1).filter(|m| m.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    for mode in [Mode::Asymptotic, Mode::Decoy, Mode::Finite] {
        for e in mermin_scan(&c, &d, mode, false, 1).map_err(|e| e.to_string())? {
            if e.m_lower.is_finite() {
                worst = worst.max(e.m_lower);
            }
        }
    }
    let fixture = golden("fig7_mermin.csv", &out);
    let ok = above && worst <= QUANTUM_BOUND && fixture.is_ok();
    Ok(outcome(
        ok,
        format!("min over 0-100 km {min_100:.4}, max anywhere {worst:.4}, {}", fixture.unwrap_or_else(|e| e)),
    ))
}

fn csv_column(path: &Path, column: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let idx = r.headers().map_err(|e| e.to_string())?.iter().position(|h| h == column).ok_or("missing column")?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            let p = |i: usize| rec[i].parse::<f64>().map_err(|e| e.to_string());
            Ok((p(0)?, p(idx)?))
        })
        .collect()
}

fn c10_determinism() -> Result<Outcome, String> {
    let dir = scratch_dir("c10");
    let mut outputs: Vec<(String, Vec<Vec<u8>>)> = vec![("scan".into(), vec![]), ("montecarlo".into(), vec![])];
    for threads in ["1", "4", "16"] {
        let scan = dir.join(format!("scan_{threads}.csv"));
        run_cli(&[
            "--threads", threads, "scan", "--mode", "finite", "--no-phase-locked", "--optimize", "--distance-km",
            "50:250:50", "--seed", "11", "--out", scan.to_str().unwrap(),
        ])?;
        let mc = dir.join(format!("mc_{threads}.csv"));
        run_cli(&[
            "--threads", threads, "montecarlo", "--set", "saturated", "--bins", "2e7", "--shard-bins", "1e5", "--seed",
            "11", "--out", mc.to_str().unwrap(),
        ])?;
        for (slot, path) in outputs.iter_mut().zip([&scan, &mc]) {
            slot.1.push(std::fs::read(path).map_err(|e| e.to_string())?);
        }
    }
    let same: Vec<String> = outputs
        .iter()
        .map(|(name, v)| format!("{name} {}", if v.windows(2).all(|w| w[0] == w[1]) { "identical" } else { "DIFFERS" }))
        .collect();
    let ok = outputs.iter().all(|(_, v)| v.windows(2).all(|w| w[0] == w[1]));
    Ok(outcome(ok, format!("{} across 1, 4, 16 threads", same.join(", "))))
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let criteria: [(u32, &str, Criterion); 10] = [
        (1, "intrinsic X-basis QBER", c1_intrinsic_qber),
        (2, "zero intrinsic phase error", c2_zero_phase_error),
        (3, "O(eta) scaling", c3_eta_scaling),
        (4, "asymptotic PLOB crossing", c4_asymptotic_plob),
        (5, "finite-key PLOB crossing", c5_finite_plob),
        (6, "pairing Monte Carlo", c6_pairing),
        (7, "oracle equivalence", c7_oracle),
        (8, "statistics coverage", c8_statistics),
        (9, "Mermin violation", c9_mermin),
        (10, "determinism", c10_determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, f) in criteria {
        let t = Instant::now();
        let o = f().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        let tag = if o.passed { "PASS" } else { "FAIL" };
        let note = if !o.passed && KNOWN_RED.contains(&id) { " (known)" } else { "" };
        println!("{tag} {id:>2} {name}{note}: {} [{:.1}s]", o.detail, t.elapsed().as_secs_f64());
        if !o.passed && !KNOWN_RED.contains(&id) {
            unexpected.push(id);
        }
    }
    let _ = std::fs::remove_dir_all(scratch_root());
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
