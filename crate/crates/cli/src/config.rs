//! The JSON run configuration. Every section is optional in a file; missing
//! fields take library defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use irsa::campaign::CampaignOptions;
use irsa::density::DeConfig;
use irsa::opt::OptConfig;
use irsa::params::SystemParams;
use irsa::phy_sim::{DecodeCriterion, PhyConfig, SubtractionMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSearch {
    pub g_lo: f64,
    pub g_hi: f64,
    pub tol: f64,
}

impl Default for ThresholdSearch {
    fn default() -> Self {
        Self {
            g_lo: 1e-3,
            g_hi: 1.0,
            tol: 1e-3,
        }
    }
}

/// Receiver options of the symbol-level simulator beyond the system parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhyOptions {
    pub criterion: DecodeCriterion,
    pub subtraction: SubtractionMode,
    pub capture: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub system: SystemParams,
    pub de: DeConfig,
    pub threshold: ThresholdSearch,
    pub opt: OptConfig,
    pub campaign: CampaignOptions,
    pub phy: PhyOptions,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.de.validate()?;
        self.opt.validate()?;
        let t = &self.threshold;
        if !(t.g_lo > 0.0 && t.g_hi > t.g_lo && t.tol > 0.0) {
            bail!("threshold search needs 0 < g_lo < g_hi and tol > 0");
        }
        if self.campaign.trials == 0 {
            bail!("campaign.trials must be >= 1");
        }
        Ok(())
    }

    pub fn phy_config(&self) -> PhyConfig {
        PhyConfig {
            criterion: self.phy.criterion,
            subtraction: self.phy.subtraction,
            capture: self.phy.capture,
            ..self.system.phy_config()
        }
    }
}
