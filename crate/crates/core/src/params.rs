//! System-level parameter set shared by the analysis and both simulators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phy_sim::PhyConfig;
use crate::slot_models::PhyFailureParams;

/// Number of slots that fit a latency budget: `⌊Ω B_s / (2 (N_P + N_D))⌋`.
pub fn derive_slots(latency_budget: f64, symbol_rate: f64, pilots: u32, payload_symbols: u32) -> Result<usize> {
    for (v, what) in [(latency_budget, "latency budget > 0"), (symbol_rate, "symbol rate > 0")] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::DomainError { value: v, domain: what });
        }
    }
    if pilots == 0 || payload_symbols == 0 {
        return Err(Error::InvalidParams("pilots and payload_symbols must be >= 1".into()));
    }
    let raw = latency_budget * symbol_rate / (2.0 * (pilots as f64 + payload_symbols as f64));
    // guard against 77.99999 from binary rounding of exact quotients
    let slots = (raw * (1.0 + 1e-12)).floor();
    if slots < 1.0 {
        return Err(Error::ZeroSlots(raw));
    }
    Ok(slots as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    pub antennas: u32,
    pub pilots: u32,
    pub payload_symbols: u32,
    pub correction: u32,
    /// Seconds.
    pub latency_budget: f64,
    /// Symbols per second.
    pub symbol_rate: f64,
    /// Explicit frame length; derived from the latency budget when absent.
    pub n_slots: Option<usize>,
    /// Per-antenna noise variance for symbol-level simulation (unit-power channels).
    pub noise_variance: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            antennas: 256,
            pilots: 64,
            payload_symbols: 256,
            correction: 10,
            latency_budget: 0.05,
            symbol_rate: 1e6,
            n_slots: None,
            noise_variance: 0.01,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        self.failure_params()?;
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::DomainError {
                value: self.noise_variance,
                domain: "noise variance in [0, inf)",
            });
        }
        if self.n_slots == Some(0) {
            return Err(Error::ZeroSlots(0.0));
        }
        self.slots().map(|_| ())
    }

    pub fn slots(&self) -> Result<usize> {
        match self.n_slots {
            Some(n) => Ok(n),
            None => derive_slots(self.latency_budget, self.symbol_rate, self.pilots, self.payload_symbols),
        }
    }

    pub fn failure_params(&self) -> Result<PhyFailureParams> {
        PhyFailureParams::new(self.antennas, self.payload_symbols, self.correction, self.pilots)
    }

    /// Receiver configuration with default decoding and SIC options.
    pub fn phy_config(&self) -> PhyConfig {
        PhyConfig {
            antennas: self.antennas,
            pilots: self.pilots,
            payload_symbols: self.payload_symbols,
            correction: self.correction,
            noise_variance: self.noise_variance,
            ..PhyConfig::default()
        }
    }
}
