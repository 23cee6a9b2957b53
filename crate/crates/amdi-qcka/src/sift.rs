//! Basis assignment, key mapping and expected counts per intensity set.
//!
//! A pairing event pairs user i's late half with user i+1's early half at
//! port i, so its intensity set is labelled by each user's early+late total.

use crate::model::{Intensity, ProtocolConfig};
use crate::optics::PortModel;
use crate::pairing::analytic_pair_count;
use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use thiserror::Error;

use Intensity::{Mu, Nu, O};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SiftError {
    #[error("split ({0:?}, {1:?}) is not a Z-basis encoding")]
    InvalidSplit(Intensity, Intensity),
}

/// Per-user total intensity k^e + k^l.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TotalIntensity {
    TwoMu,
    MuNu,
    Mu,
    TwoNu,
    Nu,
    Zero,
}

impl TotalIntensity {
    pub const ALL: [TotalIntensity; 6] = [
        TotalIntensity::TwoMu,
        TotalIntensity::MuNu,
        TotalIntensity::Mu,
        TotalIntensity::TwoNu,
        TotalIntensity::Nu,
        TotalIntensity::Zero,
    ];

    /// (early, late) choices producing this total.
    pub fn splits(self) -> &'static [(Intensity, Intensity)] {
        match self {
            TotalIntensity::TwoMu => &[(Mu, Mu)],
            TotalIntensity::MuNu => &[(Mu, Nu), (Nu, Mu)],
            TotalIntensity::Mu => &[(Mu, O), (O, Mu)],
            TotalIntensity::TwoNu => &[(Nu, Nu)],
            TotalIntensity::Nu => &[(Nu, O), (O, Nu)],
            TotalIntensity::Zero => &[(O, O)],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TotalIntensity::TwoMu => "2mu",
            TotalIntensity::MuNu => "mu+nu",
            TotalIntensity::Mu => "mu",
            TotalIntensity::TwoNu => "2nu",
            TotalIntensity::Nu => "nu",
            TotalIntensity::Zero => "0",
        }
    }
}

pub type IntensitySet = Vec<TotalIntensity>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Z,
    X,
    Discard,
}

/// θ_g/π reduced mod 2 when it is an integer, else `None`.
pub fn theta_g_mod(theta_g: f64) -> Option<u8> {
    let r = (theta_g / PI).rem_euclid(2.0);
    if r.abs() < 1e-9 || (r - 2.0).abs() < 1e-9 {
        Some(0)
    } else if (r - 1.0).abs() < 1e-9 {
        Some(1)
    } else {
        None
    }
}

pub fn assign_basis(set: &[TotalIntensity], theta_g: f64, extended_z: bool) -> Basis {
    use TotalIntensity as T;
    if set.iter().all(|&k| k == T::Mu) {
        return Basis::Z;
    }
    if extended_z && set.iter().all(|&k| k == T::Mu || k == T::Nu) {
        return Basis::Z;
    }
    if set.iter().all(|&k| k == T::TwoNu) && theta_g_mod(theta_g).is_some() {
        return Basis::X;
    }
    Basis::Discard
}

/// X-basis key mapping: U₁ takes the parity of all detector bits plus
/// θ_g/π mod 2; every other user takes 0. `None` discards.
pub fn key_map(theta_g_mod: Option<u8>, r: &[u8]) -> Option<Vec<u8>> {
    let t = theta_g_mod?;
    let mut bits = vec![0u8; r.len()];
    bits[0] = r.iter().fold(t & 1, |acc, &b| acc ^ (b & 1));
    Some(bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    X,
    Y,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetailedPhase {
    /// Reference phase ϑ in [0, π).
    pub reference: f64,
    pub kappa: u8,
    pub frame: Frame,
}

/// Splits each announced phase θ^d = ϑ + κπ.
pub fn key_map_detailed(theta_d: &[f64]) -> Vec<DetailedPhase> {
    theta_d
        .iter()
        .map(|&th| {
            let th = th.rem_euclid(TAU);
            let (mut reference, mut kappa) = if th >= PI - 1e-12 { (th - PI, 1) } else { (th, 0) };
            if reference < 0.0 {
                reference = 0.0;
            }
            if (reference - PI).abs() < 1e-12 {
                reference = 0.0;
                kappa ^= 1;
            }
            let frame = if reference.abs() < 1e-9 {
                Frame::X
            } else if (reference - PI / 2.0).abs() < 1e-9 {
                Frame::Y
            } else {
                Frame::Other
            };
            DetailedPhase { reference, kappa, frame }
        })
        .collect()
}

/// Key bits under the detailed rule: U₁ computes κ₁⊕r₁⊕…⊕r_N⊕(ϑ_g/π mod 2),
/// every other user keeps its κ_i.
pub fn detailed_key(theta_d: &[f64], r: &[u8]) -> Option<Vec<u8>> {
    let d = key_map_detailed(theta_d);
    let g = theta_g_mod(d.iter().map(|p| p.reference).sum())?;
    let mut bits: Vec<u8> = d.iter().map(|p| p.kappa).collect();
    bits[0] = r.iter().fold(d[0].kappa ^ g, |acc, &b| acc ^ (b & 1));
    Some(bits)
}

/// Z bit: 0 when the early half carried the nonzero intensity.
pub fn z_bit_assign(early: Intensity, late: Intensity) -> Result<u8, SiftError> {
    match (early, late) {
        (Mu | Nu, O) => Ok(0),
        (O, Mu | Nu) => Ok(1),
        _ => Err(SiftError::InvalidSplit(early, late)),
    }
}

/// Fraction of single clicks kept when mixed μ/ν neighbours are filtered.
pub fn click_filter_survival(ports: &PortModel, filtering: bool) -> f64 {
    if !filtering {
        return 1.0;
    }
    let (m, n) = (Mu.index(), Nu.index());
    let mixed = ports.probs[m] * ports.probs[n] * (ports.q_ab[m][n] + ports.q_ab[n][m]);
    1.0 - mixed / ports.q_port
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XCounts {
    /// Expected X events in the even (correct) detector class.
    pub even: f64,
    /// Expected X events in the odd (error) class.
    pub odd: f64,
    pub n: f64,
    /// Errors after misalignment e_d swaps the classes.
    pub m: f64,
    /// Relative change between the coarse and fine grid.
    pub quadrature_error: f64,
    pub coarse_grid_warning: bool,
}

/// Expected sifted counts for one configuration and transmittance.
#[derive(Debug, Clone, PartialEq)]
pub struct CountModel {
    pub n_users: usize,
    pub ports: PortModel,
    pub p_s: f64,
    /// Expected number of pairing events over all pulses.
    pub n_tot: f64,
    pub delta: f64,
    pub e_d: f64,
    pub phase_slices: u32,
    pub filtering: bool,
    pub extended_z: bool,
    c: [[f64; 3]; 3],
}

pub const DEFAULT_GRID: usize = 64;

impl CountModel {
    pub fn new(config: &ProtocolConfig, eta: f64) -> Self {
        let ports = PortModel::with_eta(config, eta);
        let p_s = click_filter_survival(&ports, config.click_filtering);
        let n = config.n_users;
        let q = vec![ports.q_port * p_s; n];
        let n_tot = analytic_pair_count(&q, config.security.total_pulses, config.timing.n_tc());
        let mut c = [[0.0; 3]; 3];
        for a in Intensity::ALL {
            for b in Intensity::ALL {
                let mixed = matches!((a, b), (Mu, Nu) | (Nu, Mu));
                if !(config.click_filtering && mixed) {
                    c[a.index()][b.index()] =
                        ports.probs[a.index()] * ports.probs[b.index()] * ports.q(a, b) / (ports.q_port * p_s);
                }
            }
        }
        Self {
            n_users: n,
            ports,
            p_s,
            n_tot,
            delta: config.timing.misalignment(config.source.phase_slices),
            e_d: config.channel.e_d,
            phase_slices: config.source.phase_slices,
            filtering: config.click_filtering,
            extended_z: config.uses_extended_z(),
            c,
        }
    }

    /// Probability that a paired port saw (late of left user, early of right user).
    pub fn pair_weight(&self, late: Intensity, early: Intensity) -> f64 {
        self.c[late.index()][early.index()]
    }

    fn split_sum(&self, set: &[TotalIntensity], mut keep: impl FnMut(&[(Intensity, Intensity)]) -> bool) -> f64 {
        let n = set.len();
        let mut choice = vec![0usize; n];
        let mut sp = vec![(O, O); n];
        let mut total = 0.0;
        loop {
            for i in 0..n {
                sp[i] = set[i].splits()[choice[i]];
            }
            if keep(&sp) {
                let mut p = 1.0;
                for i in 0..n {
                    p *= self.pair_weight(sp[i].1, sp[(i + 1) % n].0);
                }
                total += p;
            }
            let mut i = 0;
            loop {
                if i == n {
                    return total;
                }
                choice[i] += 1;
                if choice[i] < set[i].splits().len() {
                    break;
                }
                choice[i] = 0;
                i += 1;
            }
        }
    }

    /// Expected pairing events with intensity set `set`.
    pub fn n_k(&self, set: &[TotalIntensity]) -> f64 {
        self.n_tot * self.split_sum(set, |_| true)
    }

    /// Emission probability of a set, p_K = ∏ Σ p_e p_l.
    pub fn p_k(&self, set: &[TotalIntensity]) -> f64 {
        set.iter()
            .map(|k| {
                k.splits()
                    .iter()
                    .map(|&(e, l)| self.ports.probs[e.index()] * self.ports.probs[l.index()])
                    .sum::<f64>()
            })
            .product()
    }

    /// Expected events in `set` whose Z bits of user 0 and user j differ.
    pub fn m_z_pair(&self, set: &[TotalIntensity], j: usize) -> f64 {
        self.n_tot
            * self.split_sum(set, |sp| match (z_bit_assign(sp[0].0, sp[0].1), z_bit_assign(sp[j].0, sp[j].1)) {
                (Ok(a), Ok(b)) => a != b,
                _ => false,
            })
    }

    /// Intensity sets assigned to the Z basis.
    pub fn z_sets(&self) -> Vec<IntensitySet> {
        let n = self.n_users;
        if !self.extended_z {
            return vec![vec![TotalIntensity::Mu; n]];
        }
        (0..1usize << n)
            .map(|m| {
                (0..n)
                    .map(|i| if (m >> i) & 1 == 0 { TotalIntensity::Mu } else { TotalIntensity::Nu })
                    .collect()
            })
            .collect()
    }

    /// (n_z, largest marginal error rate E_{1,i}) over all Z sets.
    pub fn z_tallies(&self) -> (f64, f64) {
        let sets = self.z_sets();
        let n_z: f64 = sets.iter().map(|s| self.n_k(s)).sum();
        let worst = (1..self.n_users)
            .map(|j| sets.iter().map(|s| self.m_z_pair(s, j)).sum::<f64>())
            .fold(0.0, f64::max);
        (n_z, if n_z > 0.0 { worst / n_z } else { 0.0 })
    }

    /// Phase-averaged X-basis counts for the [2ν,…,2ν] set with the relative
    /// phases constrained to sum to the misalignment δ.
    pub fn x_counts_with_grid(&self, grid: usize) -> (f64, f64) {
        self.x_counts_at(Nu, grid)
    }

    /// Same as [`Self::x_counts_with_grid`] for the [2k,…,2k] set.
    pub fn x_counts_at(&self, k: Intensity, grid: usize) -> (f64, f64) {
        let n = self.n_users;
        let g = grid.max(4);
        let step = TAU / g as f64;
        let y = |th: f64| self.ports.q_theta(k, k, th);
        let plus: Vec<f64> = (0..g).map(|j| { let (l, r) = y(j as f64 * step); l + r }).collect();
        let minus: Vec<f64> = (0..g).map(|j| { let (l, r) = y(j as f64 * step); l - r }).collect();
        // Circular convolution of N-1 copies evaluated against the last port at δ - Σθ.
        let conv = |f: &[f64], sign: f64| -> f64 {
            let mut h = f.to_vec();
            for _ in 2..n {
                h = (0..g)
                    .map(|k| (0..g).map(|j| h[j] * f[(k + g - j) % g]).sum::<f64>() / g as f64)
                    .collect();
            }
            (0..g)
                .map(|j| {
                    let th = self.delta - j as f64 * step;
                    let (l, r) = y(th);
                    h[j] * (l + sign * r)
                })
                .sum::<f64>()
                / g as f64
        };
        let pp = conv(&plus, 1.0);
        let pm = conv(&minus, -1.0);
        let norm = self.n_tot * self.ports.probs[k.index()].powi(2 * n as i32) * 2.0
            / self.phase_slices as f64
            / (self.ports.q_port * self.p_s).powi(n as i32);
        ((pp + pm) / 2.0 * norm, (pp - pm) / 2.0 * norm)
    }

    pub fn x_counts(&self) -> XCounts {
        self.x_counts_for(Nu)
    }

    pub fn x_counts_for(&self, k: Intensity) -> XCounts {
        let (even, odd) = self.x_counts_at(k, DEFAULT_GRID);
        let (ce, co) = self.x_counts_at(k, DEFAULT_GRID / 2);
        let n = even + odd;
        let rel = if n > 0.0 { ((ce + co) - n).abs().max((co - odd).abs()) / n } else { 0.0 };
        XCounts {
            even,
            odd,
            n,
            m: (1.0 - self.e_d) * odd + self.e_d * even,
            quadrature_error: rel,
            coarse_grid_warning: rel > 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiftedTallies {
    pub n_tot: f64,
    /// Every intensity set with its expected count (N ≤ 5 only).
    pub n: BTreeMap<IntensitySet, f64>,
    pub n_z: f64,
    pub e_z: f64,
    pub x: XCounts,
}

pub fn expected_counts(model: &CountModel) -> SiftedTallies {
    let n_users = model.n_users;
    let mut n = BTreeMap::new();
    if n_users <= 5 {
        let mut idx = vec![0usize; n_users];
        'outer: loop {
            let set: IntensitySet = idx.iter().map(|&i| TotalIntensity::ALL[i]).collect();
            let v = model.n_k(&set);
            n.insert(set, v);
            for d in idx.iter_mut() {
                *d += 1;
                if *d < 6 {
                    continue 'outer;
                }
                *d = 0;
            }
            break;
        }
    }
    let (n_z, e_z) = model.z_tallies();
    SiftedTallies { n_tot: model.n_tot, n, n_z, e_z, x: model.x_counts() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProtocolConfig;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use TotalIntensity as T;

    fn model(n: usize, d: f64) -> CountModel {
        let mut c = ProtocolConfig::default();
        c.n_users = n;
        c.channel.distance_km = d;
        CountModel::new(&c, c.eta().unwrap())
    }

    #[test]
    fn basis_examples() {
        assert_eq!(assign_basis(&[T::Mu; 3], 0.0, false), Basis::Z);
        assert_eq!(assign_basis(&[T::TwoNu; 3], PI, false), Basis::X);
        assert_eq!(assign_basis(&[T::TwoNu, T::TwoNu, T::MuNu], 0.0, false), Basis::Discard);
        assert_eq!(assign_basis(&[T::TwoNu; 3], 0.5, false), Basis::Discard);
        assert_eq!(assign_basis(&[T::Mu, T::Nu, T::Mu], 0.0, true), Basis::Z);
        assert_eq!(assign_basis(&[T::Mu, T::Nu, T::Mu], 0.0, false), Basis::Discard);
    }

    #[test]
    fn key_map_examples() {
        assert_eq!(key_map(Some(0), &[0, 0, 0]), Some(vec![0, 0, 0]));
        assert_eq!(key_map(Some(1), &[0, 0, 0]), Some(vec![1, 0, 0]));
        assert_eq!(key_map(theta_g_mod(0.3), &[0, 0, 0]), None);
        for r in 0..8u8 {
            let bits: Vec<u8> = (0..3).map(|i| (r >> i) & 1).collect();
            for t in 0..2 {
                let k = key_map(Some(t), &bits).unwrap();
                let x = k.iter().fold(0, |a, b| a ^ b);
                assert_eq!(x, t ^ (r.count_ones() as u8 & 1));
            }
        }
    }

    #[test]
    fn detailed_examples() {
        let d = key_map_detailed(&[0.0, PI, 1.5 * PI]);
        assert_eq!((d[0].reference, d[0].kappa, d[0].frame), (0.0, 0, Frame::X));
        assert_eq!((d[1].reference, d[1].kappa, d[1].frame), (0.0, 1, Frame::X));
        assert_relative_eq!(d[2].reference, PI / 2.0);
        assert_eq!((d[2].kappa, d[2].frame), (1, Frame::Y));
        assert_eq!(detailed_key(&[0.0, PI, 0.0], &[0, 0, 0]), Some(vec![0, 1, 0]));
    }

    #[test]
    fn z_bits() {
        assert_eq!(z_bit_assign(Mu, O), Ok(0));
        assert_eq!(z_bit_assign(O, Mu), Ok(1));
        assert_eq!(z_bit_assign(Nu, O), Ok(0));
        assert!(z_bit_assign(Mu, Mu).is_err());
    }

    #[test]
    fn ideal_x_pairs_share_bits() {
        use crate::fock_oracle::parity_rule_check;
        for n in [3, 4] {
            for pi in [false, true] {
                let v = parity_rule_check(n, pi).unwrap();
                for &(r, _) in &v.coincidences {
                    let bits: Vec<u8> = (0..n).map(|i| ((r >> i) & 1) as u8).collect();
                    let k = key_map(Some(u8::from(pi)), &bits).unwrap();
                    assert!(k.iter().all(|&b| b == k[0]));
                }
            }
        }
    }

    #[test]
    fn intrinsic_x_error_rates() {
        let m = model(3, 10.0);
        let x = m.x_counts();
        let e = x.odd / x.n;
        assert!((e - 0.375).abs() < 0.01, "{e}");
        assert!(!x.coarse_grid_warning);
        let m = model(4, 10.0);
        let x = m.x_counts();
        assert!((x.odd / x.n - 0.4286).abs() < 0.01, "{}", x.odd / x.n);
    }

    #[test]
    fn convolution_matches_tensor_grid() {
        let m = model(3, 50.0);
        let g = 32;
        let step = TAU / g as f64;
        let (mut ev, mut od) = (0.0, 0.0);
        for a in 0..g {
            for b in 0..g {
                let th = [a as f64 * step, b as f64 * step];
                let t1 = m.delta - th[0] - th[1];
                let ys = [m.ports.q_theta(Nu, Nu, t1), m.ports.q_theta(Nu, Nu, th[0]), m.ports.q_theta(Nu, Nu, th[1])];
                for r in 0..8usize {
                    let p: f64 = (0..3).map(|i| if (r >> i) & 1 == 1 { ys[i].1 } else { ys[i].0 }).product();
                    if r.count_ones() % 2 == 0 { ev += p } else { od += p }
                }
            }
        }
        let norm = m.n_tot * m.ports.probs[1].powi(6) * 2.0 / 16.0 / m.ports.q_port.powi(3) / (g * g) as f64;
        let (e, o) = m.x_counts_with_grid(g);
        assert_relative_eq!(e, ev * norm, max_relative = 1e-10);
        assert_relative_eq!(o, od * norm, max_relative = 1e-10);
    }

    #[test]
    fn global_phase_shift_invariance() {
        let m = model(3, 30.0);
        let x1 = m.x_counts();
        let mut shifted = m.clone();
        shifted.delta += TAU;
        let x2 = shifted.x_counts();
        assert_relative_eq!(x1.m / x1.n, x2.m / x2.n, max_relative = 1e-9);
    }

    #[test]
    fn set_counts_partition_pairings() {
        for filt in [false, true] {
            let mut c = ProtocolConfig::default();
            c.click_filtering = filt;
            let m = CountModel::new(&c, 0.05);
            let t = expected_counts(&m);
            let s: f64 = t.n.values().sum();
            assert_relative_eq!(s, m.n_tot, max_relative = 1e-10);
        }
    }

    #[test]
    fn vacuum_set_without_darks() {
        let mut c = ProtocolConfig::default();
        c.channel.p_d = 0.0;
        let m = CountModel::new(&c, 0.1);
        assert_eq!(m.n_k(&[T::Zero; 3]), 0.0);
    }

    #[test]
    fn filter_survival_matches_sampling() {
        let mut c = ProtocolConfig::default();
        c.click_filtering = true;
        let eta = 0.3;
        let ports = PortModel::with_eta(&c, eta);
        let ps = click_filter_survival(&ports, true);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (mut all, mut kept) = (0.0, 0.0);
        for _ in 0..200_000 {
            let k: Vec<Intensity> = (0..3)
                .map(|_| {
                    let u: f64 = rng.random();
                    if u < c.source.p_mu { Mu } else if u < c.source.p_mu + c.source.p_nu { Nu } else { O }
                })
                .collect();
            let kv: Vec<f64> = k.iter().map(|&x| c.source.value(x)).collect();
            let q = crate::optics::port_click_prob(&kv, 0, eta, c.channel.p_d).unwrap();
            all += q;
            if !matches!((k[0], k[1]), (Mu, Nu) | (Nu, Mu)) {
                kept += q;
            }
        }
        assert!((kept / all - ps).abs() < 3e-3, "{} {}", kept / all, ps);
        let mut c2 = c.clone();
        c2.source.p_nu = 0.0;
        assert_eq!(click_filter_survival(&PortModel::with_eta(&c2, eta), true), 1.0);
        assert_eq!(click_filter_survival(&ports, false), 1.0);
    }
}
