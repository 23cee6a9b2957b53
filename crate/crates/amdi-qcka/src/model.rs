//! Configuration records and the lumped channel model.
//!
//! Every computation in the crate takes a [`ProtocolConfig`]. All fields have
//! defaults so a config file only needs to list what differs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("negative distance {0} km")]
    NegativeDistance(f64),
    #[error("config parse error: {0}")]
    Parse(String),
}

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::Invalid(msg.into())
}

/// Per-half-pulse intensity choice of one user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Intensity {
    Mu,
    Nu,
    O,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Mu, Intensity::Nu, Intensity::O];

    pub fn index(self) -> usize {
        match self {
            Intensity::Mu => 0,
            Intensity::Nu => 1,
            Intensity::O => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub mu: f64,
    pub nu: f64,
    pub p_mu: f64,
    pub p_nu: f64,
    /// Number of phase slices M.
    pub phase_slices: u32,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            mu: 0.4,
            nu: 0.05,
            p_mu: 0.5,
            p_nu: 0.2,
            phase_slices: 16,
        }
    }
}

impl SourceConfig {
    pub fn p_o(&self) -> f64 {
        1.0 - self.p_mu - self.p_nu
    }

    pub fn value(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Mu => self.mu,
            Intensity::Nu => self.nu,
            Intensity::O => 0.0,
        }
    }

    pub fn prob(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Mu => self.p_mu,
            Intensity::Nu => self.p_nu,
            Intensity::O => self.p_o(),
        }
    }

    /// Mean photon number per half pulse.
    pub fn mean_intensity(&self) -> f64 {
        self.p_mu * self.mu + self.p_nu * self.nu
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.mu.is_finite() && self.nu.is_finite()) {
            return Err(invalid("intensities must be finite"));
        }
        if !(self.mu > self.nu && self.nu > 0.0) {
            return Err(invalid(format!(
                "need mu > nu > 0, got mu={} nu={}",
                self.mu, self.nu
            )));
        }
        let p_o = self.p_o();
        if !(self.p_mu >= 0.0 && self.p_nu >= 0.0 && p_o >= -1e-12) {
            return Err(invalid(format!(
                "emission probabilities must be non-negative and sum to 1 (p_mu={}, p_nu={})",
                self.p_mu, self.p_nu
            )));
        }
        if self.phase_slices < 2 {
            return Err(invalid("phase_slices must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub distance_km: f64,
    pub alpha_db_per_km: f64,
    pub eta_det: f64,
    pub p_d: f64,
    pub e_d: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            distance_km: 100.0,
            alpha_db_per_km: 0.16,
            eta_det: 0.85,
            p_d: 1e-10,
            e_d: 0.012,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.distance_km.is_nan() || self.distance_km < 0.0 {
            return Err(ModelError::NegativeDistance(self.distance_km));
        }
        if !(self.alpha_db_per_km >= 0.0 && self.alpha_db_per_km.is_finite()) {
            return Err(invalid("alpha_db_per_km must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.eta_det) {
            return Err(invalid("eta_det must lie in [0,1]"));
        }
        if !(0.0..=1.0).contains(&self.p_d) {
            return Err(invalid("p_d must lie in [0,1]"));
        }
        if !(0.0..=1.0).contains(&self.e_d) {
            return Err(invalid("e_d must lie in [0,1]"));
        }
        Ok(())
    }

    pub fn at_distance(&self, distance_km: f64) -> Self {
        Self {
            distance_km,
            ..self.clone()
        }
    }
}

/// Lumped transmittance user→relay including detector efficiency.
pub fn transmittance(channel: &ChannelModel) -> Result<f64, ModelError> {
    if channel.distance_km.is_nan() || channel.distance_km < 0.0 {
        return Err(ModelError::NegativeDistance(channel.distance_km));
    }
    if channel.distance_km.is_infinite() {
        return Ok(0.0);
    }
    let db = channel.alpha_db_per_km * channel.distance_km;
    Ok(channel.eta_det * 10f64.powf(-db / 10.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub clock_hz: f64,
    pub delta_f_hz: f64,
    pub omega_fiber_rad_s: f64,
    pub t_c_s: f64,
    pub phase_locked: bool,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            clock_hz: 4e9,
            delta_f_hz: 10.0,
            omega_fiber_rad_s: 3000.0,
            t_c_s: 300e-6,
            phase_locked: true,
        }
    }
}

impl TimingConfig {
    /// Pulses per user inside the pairing window, or `None` when phase-locked.
    pub fn n_tc(&self) -> Option<f64> {
        if self.phase_locked {
            None
        } else {
            Some((self.t_c_s * self.clock_hz).floor())
        }
    }

    /// X-basis phase misalignment δ, using the mean pairing interval T_c/2.
    pub fn misalignment(&self, phase_slices: u32) -> f64 {
        let slice = std::f64::consts::PI / phase_slices as f64;
        if self.phase_locked {
            slice
        } else {
            0.5 * self.t_c_s * (2.0 * std::f64::consts::PI * self.delta_f_hz + self.omega_fiber_rad_s)
                + slice
        }
    }

    /// Longest pairing window whose mean drift stays within π. Beyond it the
    /// offset model aliases, so windows are never searched past this point.
    pub fn max_pairing_window(&self) -> f64 {
        let rate = 2.0 * std::f64::consts::PI * self.delta_f_hz + self.omega_fiber_rad_s;
        if rate > 0.0 {
            2.0 * std::f64::consts::PI / rate
        } else {
            f64::INFINITY
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.clock_hz > 0.0 && self.clock_hz.is_finite()) {
            return Err(invalid("clock_hz must be positive"));
        }
        if self.delta_f_hz < 0.0 || self.omega_fiber_rad_s < 0.0 {
            return Err(invalid("frequency offsets must be non-negative"));
        }
        if !self.phase_locked {
            if !(self.t_c_s > 0.0 && self.t_c_s.is_finite()) {
                return Err(invalid("t_c_s must be positive without phase locking"));
            }
            if self.n_tc().unwrap_or(0.0) < 1.0 {
                return Err(invalid("t_c_s * clock_hz must be at least one pulse"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityParams {
    pub eps_cor: f64,
    pub eps_prime: f64,
    pub eps_hat: f64,
    pub eps_e: f64,
    pub eps_pa: f64,
    pub eps_beta: f64,
    pub eps_chernoff: f64,
    pub total_pulses: f64,
    pub error_correction_f: f64,
}

impl Default for SecurityParams {
    fn default() -> Self {
        Self {
            eps_cor: 1e-7,
            eps_prime: 1e-7,
            eps_hat: 1e-7,
            eps_e: 1e-7,
            eps_pa: 1e-7,
            eps_beta: 1e-7,
            eps_chernoff: 1e-7,
            total_pulses: 1e16,
            error_correction_f: 1.02,
        }
    }
}

impl SecurityParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let eps = [
            ("eps_cor", self.eps_cor),
            ("eps_prime", self.eps_prime),
            ("eps_hat", self.eps_hat),
            ("eps_e", self.eps_e),
            ("eps_pa", self.eps_pa),
            ("eps_beta", self.eps_beta),
            ("eps_chernoff", self.eps_chernoff),
        ];
        for (name, v) in eps {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if !(self.total_pulses >= 1.0 && self.total_pulses.is_finite()) {
            return Err(invalid("total_pulses must be >= 1"));
        }
        if !(self.error_correction_f >= 1.0) {
            return Err(invalid("error_correction_f must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub n_users: usize,
    pub click_filtering: bool,
    pub extended_z_sets: bool,
    pub source: SourceConfig,
    pub channel: ChannelModel,
    pub timing: TimingConfig,
    pub security: SecurityParams,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            n_users: 3,
            click_filtering: false,
            extended_z_sets: true,
            source: SourceConfig::default(),
            channel: ChannelModel::default(),
            timing: TimingConfig::default(),
            security: SecurityParams::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_users < 3 {
            return Err(invalid(format!("n_users must be >= 3, got {}", self.n_users)));
        }
        if self.n_users > 12 {
            return Err(invalid("n_users above 12 is not supported"));
        }
        self.source.validate()?;
        self.channel.validate()?;
        self.timing.validate()?;
        self.security.validate()
    }

    /// Whether extended Z sets ([μ,μ,ν] etc.) contribute key.
    pub fn uses_extended_z(&self) -> bool {
        self.extended_z_sets && !self.click_filtering
    }

    pub fn eta(&self) -> Result<f64, ModelError> {
        transmittance(&self.channel)
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ModelError> {
        let cfg: ProtocolConfig = toml::from_str(s).map_err(|e| ModelError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
