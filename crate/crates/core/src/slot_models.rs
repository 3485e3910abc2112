//! Per-slot edge-erasure updates `p^(c) = f(q, c)` for the three channel
//! abstractions, and the PHY failure probabilities behind the realistic one.

use std::collections::HashMap;
use std::fmt;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the massive-MIMO decoding failure model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhyFailureParams {
    /// Base-station antennas `M`.
    pub antennas: u32,
    /// QPSK payload symbols per burst `N_D`.
    pub payload_symbols: u32,
    /// Correction capability `t` of the channel code.
    pub correction: u32,
    /// Orthogonal pilot sequences `N_P`.
    pub pilots: u32,
}

impl Default for PhyFailureParams {
    fn default() -> Self {
        Self {
            antennas: 256,
            payload_symbols: 256,
            correction: 10,
            pilots: 64,
        }
    }
}

impl PhyFailureParams {
    pub fn new(antennas: u32, payload_symbols: u32, correction: u32, pilots: u32) -> Result<Self> {
        let p = Self {
            antennas,
            payload_symbols,
            correction,
            pilots,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 {
            return Err(Error::InvalidParams("antennas must be >= 1".into()));
        }
        if self.pilots == 0 {
            return Err(Error::InvalidParams("pilots must be >= 1".into()));
        }
        if self.payload_symbols == 0 {
            return Err(Error::InvalidParams("payload_symbols must be >= 1".into()));
        }
        if self.correction > self.payload_symbols {
            return Err(Error::InvalidParams(format!(
                "correction {} exceeds payload_symbols {}",
                self.correction, self.payload_symbols
            )));
        }
        Ok(())
    }
}

/// Channel abstraction used by density evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlotModel {
    Collision,
    OrthogonalResources { pilots: u32 },
    RealisticPhy(PhyFailureParams),
}

impl SlotModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            SlotModel::Collision => Ok(()),
            SlotModel::OrthogonalResources { pilots } if *pilots == 0 => {
                Err(Error::InvalidParams("pilots must be >= 1".into()))
            }
            SlotModel::OrthogonalResources { .. } => Ok(()),
            SlotModel::RealisticPhy(p) => p.validate(),
        }
    }

    /// Orthogonal resources per slot (1 for the plain collision channel).
    pub fn pilots(&self) -> u32 {
        match self {
            SlotModel::Collision => 1,
            SlotModel::OrthogonalResources { pilots } => *pilots,
            SlotModel::RealisticPhy(p) => p.pilots,
        }
    }

    /// Unmemoized `p^(c)` for this model.
    pub fn update(&self, q: f64, c: u32) -> f64 {
        match self {
            SlotModel::Collision => collision_update(q, c),
            SlotModel::OrthogonalResources { pilots } => resource_update(q, c, *pilots),
            SlotModel::RealisticPhy(p) => realistic_update(q, c, p),
        }
    }
}

impl fmt::Display for SlotModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotModel::Collision => f.write_str("collision"),
            SlotModel::OrthogonalResources { pilots } => write!(f, "resources(N_P={pilots})"),
            SlotModel::RealisticPhy(p) => write!(
                f,
                "realistic(M={}, N_P={}, N_D={}, t={})",
                p.antennas, p.pilots, p.payload_symbols, p.correction
            ),
        }
    }
}

/// `1 - (1 - x)^k` without cancellation for small `x`.
fn one_minus_pow(x: f64, k: u32) -> f64 {
    if k == 0 || x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    -f64::exp_m1(k as f64 * f64::ln_1p(-x))
}

/// Collision channel: the replica is lost unless all `c - 1` interferers are known.
pub fn collision_update(q: f64, c: u32) -> f64 {
    one_minus_pow(q, c.saturating_sub(1))
}

/// Collision channel with `pilots` orthogonal resources per slot.
pub fn resource_update(q: f64, c: u32, pilots: u32) -> f64 {
    one_minus_pow(q / pilots as f64, c.saturating_sub(1))
}

/// Hard-decision QPSK symbol error probability with `n` interferers and
/// `antennas` receive antennas. Zero when there is no interference.
pub fn symbol_error_prob(n: u64, antennas: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let e = libm::erfc((antennas as f64 / (2.0 * n as f64)).sqrt());
    e - 0.25 * e * e
}

/// Probability that more than `t` of `N_D` symbols are in error.
pub fn decode_fail_prob(n: u64, params: &PhyFailureParams) -> f64 {
    let pe = symbol_error_prob(n, params.antennas);
    binomial_upper_tail(params.payload_symbols, params.correction, pe)
}

/// `P(X > t)` for `X ~ Binomial(trials, p)`, evaluated term-wise in log space.
/// Whichever tail is smaller is summed directly so tiny results keep full
/// relative precision.
pub(crate) fn binomial_upper_tail(trials: u32, t: u32, p: f64) -> f64 {
    if p <= 0.0 || t >= trials {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (ln_p, ln_q) = (p.ln(), (-p).ln_1p());
    // ln C(trials, d) built incrementally
    let mut ln_binom = 0.0;
    let mut lower = 0.0;
    for d in 0..=t {
        if d > 0 {
            ln_binom += ((trials - d + 1) as f64).ln() - (d as f64).ln();
        }
        lower += (ln_binom + d as f64 * ln_p + (trials - d) as f64 * ln_q).exp();
    }
    if lower < 0.5 {
        return (1.0 - lower).clamp(0.0, 1.0);
    }
    let mode = ((trials + 1) as f64 * p).floor() as u32;
    let mut upper = 0.0;
    for d in (t + 1)..=trials {
        ln_binom += ((trials - d + 1) as f64).ln() - (d as f64).ln();
        let term = (ln_binom + d as f64 * ln_p + (trials - d) as f64 * ln_q).exp();
        upper += term;
        if d > mode && term <= upper * 1e-18 {
            break;
        }
    }
    upper.clamp(0.0, 1.0)
}

/// `P(i | c)`: probability of exactly `i` pilot colliders among the `c - 1`
/// other arrivals, for `i = 0..c`.
pub fn pilot_collider_pmf(c: u32, pilots: u32) -> Vec<f64> {
    let others = c.saturating_sub(1);
    binomial_pmf(others, 1.0 / pilots as f64)
}

/// `P(s | i)`: probability that exactly `s` of the `i` pilot colliders have
/// already been subtracted, for `s = 0..=i`.
pub fn subtraction_pmf(i: u32, q: f64) -> Vec<f64> {
    binomial_pmf(i, 1.0 - q)
}

fn binomial_pmf(trials: u32, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; trials as usize + 1];
    if p <= 0.0 {
        out[0] = 1.0;
        return out;
    }
    if p >= 1.0 {
        out[trials as usize] = 1.0;
        return out;
    }
    let (ln_p, ln_q) = (p.ln(), (-p).ln_1p());
    let mut ln_binom = 0.0;
    for k in 0..=trials {
        if k > 0 {
            ln_binom += ((trials - k + 1) as f64).ln() - (k as f64).ln();
        }
        out[k as usize] = (ln_binom + k as f64 * ln_p + (trials - k) as f64 * ln_q).exp();
    }
    out
}

/// Realistic massive-MIMO update: pilot collisions are fatal until every
/// colliding burst has been subtracted; a clean pilot still fails with
/// `P_fail((i + 1) c - 1)`.
pub fn realistic_update(q: f64, c: u32, params: &PhyFailureParams) -> f64 {
    let base = resource_update(q, c, params.pilots);
    let pmf = pilot_collider_pmf(c, params.pilots);
    let v = 1.0 - q;
    let extra: f64 = pmf
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            if w == 0.0 {
                return 0.0;
            }
            let n = (i as u64 + 1) * c as u64 - 1;
            v.powi(i as i32) * decode_fail_prob(n, params) * w
        })
        .sum();
    (base + extra).clamp(0.0, 1.0)
}

/// Thread-safe memo of [`decode_fail_prob`] for one parameter set.
#[derive(Debug)]
pub struct DecodeFailMemo {
    params: PhyFailureParams,
    cache: RwLock<HashMap<u64, f64>>,
}

impl DecodeFailMemo {
    pub fn new(params: PhyFailureParams) -> Self {
        Self {
            params,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn params(&self) -> &PhyFailureParams {
        &self.params
    }

    pub fn get(&self, n: u64) -> f64 {
        if let Some(&v) = self.cache.read().expect("memo poisoned").get(&n) {
            return v;
        }
        let v = decode_fail_prob(n, &self.params);
        self.cache.write().expect("memo poisoned").insert(n, v);
        v
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("memo poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Precomputed per-slot-degree update tables for `c = 1..=capacity`.
///
/// For the realistic model `fail_weights[c-1][i] = P_fail((i+1)c-1) P(i|c)`,
/// so that `p^(c)(q) = 1 - (1 - q/N_P)^(c-1) + Σ_i fail_weights[c-1][i] (1-q)^i`.
#[derive(Debug, Clone)]
pub struct SlotKernel {
    model: SlotModel,
    capacity: usize,
    fail_weights: Vec<Vec<f64>>,
}

impl SlotKernel {
    pub fn new(model: SlotModel, capacity: usize) -> Result<Self> {
        model.validate()?;
        let fail_weights = match model {
            SlotModel::RealisticPhy(params) => {
                let memo = DecodeFailMemo::new(params);
                (1..=capacity as u32)
                    .map(|c| {
                        pilot_collider_pmf(c, params.pilots)
                            .iter()
                            .enumerate()
                            .map(|(i, &w)| {
                                if w == 0.0 {
                                    0.0
                                } else {
                                    w * memo.get((i as u64 + 1) * c as u64 - 1)
                                }
                            })
                            .collect()
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        Ok(Self {
            model,
            capacity,
            fail_weights,
        })
    }

    pub fn model(&self) -> &SlotModel {
        &self.model
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Decode-failure weights `P_fail((i+1)c-1) P(i|c)` for slot degree `c`
    /// (empty for the ideal models).
    pub fn fail_weights(&self, c: u32) -> &[f64] {
        self.fail_weights
            .get(c as usize - 1)
            .map_or(&[], |w| w.as_slice())
    }

    /// Memoized `p^(c)`; `c` must not exceed the capacity for the realistic model.
    pub fn update(&self, q: f64, c: u32) -> f64 {
        let base = resource_update(q, c, self.model.pilots());
        let weights = self.fail_weights(c);
        if weights.is_empty() {
            return base;
        }
        let v = 1.0 - q;
        let extra = weights.iter().rev().fold(0.0, |acc, &w| acc * v + w);
        (base + extra).clamp(0.0, 1.0)
    }
}
