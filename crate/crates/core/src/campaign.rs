//! Monte Carlo campaigns over a list of active-user counts, with Wilson
//! confidence intervals and per-trial reproducible seeding.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// RNG streams derived from one trial seed.
pub(crate) const STREAM_FRAME: u64 = 0;
pub(crate) const STREAM_DECODE: u64 = 1;
pub(crate) const STREAM_PHY: u64 = 2;
const STREAM_ARRIVALS: u64 = 3;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Arrivals {
    /// Exactly `K_a` active users per frame.
    #[default]
    Fixed,
    /// `Poisson(K_a)` active users per frame.
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignOptions {
    pub trials: usize,
    pub base_seed: u64,
    pub arrivals: Arrivals,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            base_seed: 1,
            arrivals: Arrivals::Fixed,
        }
    }
}

/// Packets sent and lost in one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrialCount {
    pub packets: u64,
    pub lost: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub k_a: usize,
    pub trials: usize,
    pub packets: u64,
    pub lost: u64,
    /// Lost over sent packets; NaN when no packet was sent.
    pub plr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub rows: Vec<SimRow>,
    pub base_seed: u64,
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

impl SimRow {
    pub fn from_counts(k_a: usize, trials: usize, count: TrialCount) -> Self {
        let (ci_lo, ci_hi) = wilson_interval(count.lost, count.packets, Z_95);
        let plr = if count.packets == 0 {
            f64::NAN
        } else {
            count.lost as f64 / count.packets as f64
        };
        Self {
            k_a,
            trials,
            packets: count.packets,
            lost: count.lost,
            plr,
            ci_lo,
            ci_hi,
        }
    }
}

/// Active users in the frame with this seed, for a nominal load `k_a`.
pub fn active_users(k_a: usize, arrivals: Arrivals, seed: u64) -> usize {
    match arrivals {
        Arrivals::Fixed => k_a,
        Arrivals::Poisson if k_a == 0 => 0,
        Arrivals::Poisson => {
            let law = Poisson::new(k_a as f64).expect("positive mean");
            law.sample(&mut stream_rng(seed, STREAM_ARRIVALS)) as usize
        }
    }
}

/// Runs `trials` frames at every load. Trial `j` uses seed `base_seed + j` at
/// every load; `frame` receives the number of active users and the seed and
/// returns the packet counts. Trials run concurrently and are reduced in
/// index order.
pub fn run_trials<F>(loads: &[usize], opts: &CampaignOptions, frame: F) -> Result<SimStats>
where
    F: Fn(usize, u64) -> Result<TrialCount> + Sync + Send,
{
    if opts.trials == 0 {
        return Err(Error::InvalidParams("trials_per_point must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(loads.len());
    for &k_a in loads {
        let counts = par::map_range(opts.trials, |j| {
            let seed = opts.base_seed.wrapping_add(j as u64);
            let users = active_users(k_a, opts.arrivals, seed);
            if users == 0 {
                return Ok(TrialCount::default());
            }
            frame(users, seed)
        });
        let mut total = TrialCount::default();
        for c in counts {
            let c = c?;
            total.packets += c.packets;
            total.lost += c.lost;
        }
        rows.push(SimRow::from_counts(k_a, opts.trials, total));
    }
    Ok(SimStats {
        rows,
        base_seed: opts.base_seed,
    })
}

/// Formats a value with 6 significant digits.
pub fn sig6(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.5e}")
    }
}

impl SimStats {
    /// Writes `K_a,trials,plr,ci_lo,ci_hi,seed` rows, preceded by an optional
    /// `# ...` provenance line.
    pub fn write_csv<W: Write>(&self, out: W, header_comment: Option<&str>) -> Result<(), std::io::Error> {
        let mut out = out;
        if let Some(comment) = header_comment {
            writeln!(out, "# {comment}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["K_a", "trials", "plr", "ci_lo", "ci_hi", "seed"])?;
        for row in &self.rows {
            w.write_record([
                row.k_a.to_string(),
                row.trials.to_string(),
                sig6(row.plr),
                sig6(row.ci_lo),
                sig6(row.ci_hi),
                self.base_seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self, header_comment: Option<&str>) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, header_comment)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}
