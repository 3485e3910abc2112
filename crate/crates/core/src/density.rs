//! Density evolution for IRSA over a [`SlotModel`], asymptotic packet loss
//! and the load threshold `G*`.
//!
//! The recursion starts from `p_0 = 1` and alternates
//!
//! ```text
//! q_l = Σ_r λ_r p_{l-1}^(r-1)
//! p_l = Σ_c ρ_c p^(c)(q_l)
//! Q_l = Λ(p_l)
//! ```
//!
//! where `ρ_c` is the edge-perspective slot degree distribution, a Poisson
//! law of mean `G Λ'(1)` shifted by one.

use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::degree_dist::DegreeDistribution;
use crate::error::{Error, Result};
use crate::par;
use crate::slot_models::{resource_update, SlotKernel, SlotModel};

/// Target upper-tail mass left out by the Poisson truncation.
pub const TAIL_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeConfig {
    pub max_iterations: usize,
    /// Loads with `Q_l` below this value are declared achievable.
    pub convergence_plr: f64,
    pub stall_epsilon: f64,
    /// Fixed Poisson truncation; `None` picks the smallest `c_max` whose tail
    /// mass is below [`TAIL_MASS`].
    pub c_max: Option<usize>,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            convergence_plr: 1e-4,
            stall_epsilon: 1e-12,
            c_max: None,
        }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.convergence_plr > 0.0) {
            return Err(Error::InvalidParams("convergence_plr must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParams("max_iterations must be >= 1".into()));
        }
        if self.c_max == Some(0) {
            return Err(Error::InvalidParams("c_max must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub q: f64,
    pub p: f64,
    pub plr: f64,
}

/// Every iterate of one density-evolution run, starting with `p_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeTrace {
    pub load: f64,
    pub iterates: Vec<Iterate>,
    pub verdict: Verdict,
}

impl DeTrace {
    pub fn last(&self) -> &Iterate {
        self.iterates.last().expect("trace always holds p_0")
    }

    pub fn converged(&self) -> bool {
        self.verdict == Verdict::Converged
    }

    /// Limiting packet loss: 0 when converged, otherwise `Q` at the stall.
    pub fn limit_plr(&self) -> f64 {
        match self.verdict {
            Verdict::Converged => 0.0,
            Verdict::Stalled => self.last().plr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub g_star: f64,
    pub bracket: (f64, f64),
    pub bisection_tol: f64,
    pub model: String,
}

/// `ρ_c` for `c = 1..=c_max`, index `c - 1`.
///
/// With `c_max = None` the truncation is the smallest `c` leaving tail mass
/// below [`TAIL_MASS`]. A requested `c_max` that is too small is extended up to
/// `10 μ + 50` (`μ = G Λ'(1)`); past that cap a [`Error::TruncationError`] is
/// returned.
pub fn slot_edge_pmf(load: f64, mean_degree: f64, c_max: Option<usize>) -> Result<Vec<f64>> {
    if !(load >= 0.0) || !load.is_finite() {
        return Err(Error::DomainError {
            value: load,
            domain: "G >= 0",
        });
    }
    if !(mean_degree >= 1.0) {
        return Err(Error::DomainError {
            value: mean_degree,
            domain: "mean degree >= 1",
        });
    }
    let mu = load * mean_degree;
    if mu == 0.0 {
        let mut rho = vec![0.0; c_max.unwrap_or(1).max(1)];
        rho[0] = 1.0;
        return Ok(rho);
    }
    let cap = (10.0 * mu + 50.0).ceil() as usize;
    let ln_mu = mu.ln();
    let mut rho = Vec::new();
    let mut ln_term = -mu;
    let mut mass = 0.0;
    for c in 1..=cap {
        if c > 1 {
            ln_term += ln_mu - ((c - 1) as f64).ln();
        }
        let term = ln_term.exp();
        rho.push(term);
        mass += term;
        let enough = match c_max {
            Some(m) => c >= m && 1.0 - mass < TAIL_MASS,
            None => 1.0 - mass < TAIL_MASS,
        };
        // past the mode the remaining tail is bounded by the geometric series
        if enough && (c as f64) > mu {
            return Ok(rho);
        }
    }
    let tail = 1.0 - mass;
    if tail < TAIL_MASS {
        Ok(rho)
    } else {
        Err(Error::TruncationError { cap, tail })
    }
}

/// One density-evolution step through the generic per-degree mixing:
/// returns `(q_l, p_l)` from `p_{l-1}`.
pub fn de_step(
    p_prev: f64,
    dist: &DegreeDistribution,
    model: &SlotModel,
    load: f64,
    cfg: &DeConfig,
) -> Result<(f64, f64)> {
    model.validate()?;
    if !(0.0..=1.0).contains(&p_prev) {
        return Err(Error::DomainError {
            value: p_prev,
            domain: "[0, 1]",
        });
    }
    let rho = slot_edge_pmf(load, dist.mean_degree(), cfg.c_max)?;
    let q = edge_unknown(dist, p_prev);
    let p: f64 = rho
        .iter()
        .enumerate()
        .map(|(k, &w)| w * model.update(q, k as u32 + 1))
        .sum();
    Ok((q, p.clamp(0.0, 1.0)))
}

/// `q = Σ_r λ_r x^(r-1)`.
fn edge_unknown(dist: &DegreeDistribution, x: f64) -> f64 {
    let mean = dist.mean_degree();
    dist.entries()
        .iter()
        .map(|&(r, m)| r as f64 * m / mean * x.powi(r as i32 - 1))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Slot-side map `q -> p` for one load with the Poisson mixing folded in:
/// `p(q) = Σ_c ρ_c (1 - (1 - q/N_P)^(c-1)) + Σ_i W_i (1 - q)^i`
/// with `W_i = Σ_c ρ_c P_fail((i+1)c-1) P(i|c)`.
struct SlotMixture {
    rho: Vec<f64>,
    pilots: u32,
    fail: Vec<f64>,
}

impl SlotMixture {
    fn new(rho: Vec<f64>, kernel: &SlotKernel) -> Self {
        let mut fail = Vec::new();
        for (k, &w) in rho.iter().enumerate() {
            let weights = kernel.fail_weights(k as u32 + 1);
            if fail.len() < weights.len() {
                fail.resize(weights.len(), 0.0);
            }
            for (acc, &fw) in fail.iter_mut().zip(weights) {
                *acc += w * fw;
            }
        }
        Self {
            rho,
            pilots: kernel.model().pilots(),
            fail,
        }
    }

    fn eval(&self, q: f64) -> f64 {
        let base: f64 = self
            .rho
            .iter()
            .enumerate()
            .map(|(k, &w)| w * resource_update(q, k as u32 + 1, self.pilots))
            .sum();
        let v = 1.0 - q;
        let extra = self.fail.iter().rev().fold(0.0, |acc, &w| acc * v + w);
        (base + extra).clamp(0.0, 1.0)
    }
}

/// Density-evolution engine for one model and configuration.
///
/// Holds the precomputed slot kernel (including memoized `P_fail` values),
/// grown on demand and shared read-only between concurrent load evaluations.
#[derive(Debug)]
pub struct DensityEvolution {
    model: SlotModel,
    cfg: DeConfig,
    kernel: RwLock<Arc<SlotKernel>>,
}

impl DensityEvolution {
    pub fn new(model: SlotModel, cfg: DeConfig) -> Result<Self> {
        model.validate()?;
        cfg.validate()?;
        let kernel = SlotKernel::new(model, 64)?;
        Ok(Self {
            model,
            cfg,
            kernel: RwLock::new(Arc::new(kernel)),
        })
    }

    pub fn model(&self) -> &SlotModel {
        &self.model
    }

    pub fn config(&self) -> &DeConfig {
        &self.cfg
    }

    fn kernel_for(&self, c_max: usize) -> Result<Arc<SlotKernel>> {
        {
            let k = self.kernel.read().expect("kernel lock poisoned");
            if k.capacity() >= c_max {
                return Ok(Arc::clone(&k));
            }
        }
        let mut k = self.kernel.write().expect("kernel lock poisoned");
        if k.capacity() < c_max {
            let capacity = c_max.max(2 * k.capacity());
            *k = Arc::new(SlotKernel::new(self.model, capacity)?);
        }
        Ok(Arc::clone(&k))
    }

    /// Runs the recursion at one load until `Q_l < convergence_plr`
    /// (converged), `|p_l - p_{l-1}| < stall_epsilon` or `max_iterations`
    /// (stalled).
    pub fn run(&self, load: f64, dist: &DegreeDistribution) -> Result<DeTrace> {
        let rho = slot_edge_pmf(load, dist.mean_degree(), self.cfg.c_max)?;
        let kernel = self.kernel_for(rho.len())?;
        let mix = SlotMixture::new(rho, &kernel);
        let mut iterates = vec![Iterate {
            q: 1.0,
            p: 1.0,
            plr: 1.0,
        }];
        let mut p_prev = 1.0;
        for _ in 0..self.cfg.max_iterations {
            let q = edge_unknown(dist, p_prev);
            // p is non-increasing in exact arithmetic; clamp away rounding noise
            let p = mix.eval(q).min(p_prev);
            let plr = dist.pgf_unchecked(p);
            iterates.push(Iterate { q, p, plr });
            if plr < self.cfg.convergence_plr {
                return Ok(DeTrace {
                    load,
                    iterates,
                    verdict: Verdict::Converged,
                });
            }
            if (p_prev - p).abs() < self.cfg.stall_epsilon {
                break;
            }
            p_prev = p;
        }
        Ok(DeTrace {
            load,
            iterates,
            verdict: Verdict::Stalled,
        })
    }

    fn converges(&self, load: f64, dist: &DegreeDistribution) -> Result<bool> {
        Ok(self.run(load, dist)?.converged())
    }

    /// Bisection for `G*` on `[g_lo, g_hi]` down to `tol`.
    ///
    /// `g_lo` must converge. If `g_hi` converges too, the bracket is doubled
    /// upwards until a stalling load is found.
    pub fn threshold(
        &self,
        dist: &DegreeDistribution,
        g_lo: f64,
        g_hi: f64,
        tol: f64,
    ) -> Result<ThresholdResult> {
        if !(g_lo > 0.0 && g_hi > g_lo && tol > 0.0) {
            return Err(Error::BracketError(format!(
                "need 0 < g_lo < g_hi and tol > 0, got [{g_lo}, {g_hi}] tol {tol}"
            )));
        }
        if !self.converges(g_lo, dist)? {
            return Err(Error::BracketError(format!(
                "density evolution does not converge at g_lo = {g_lo}"
            )));
        }
        let (mut lo, mut hi) = (g_lo, g_hi);
        let mut expansions = 0;
        while self.converges(hi, dist)? {
            expansions += 1;
            if expansions > 30 {
                return Err(Error::BracketError(format!(
                    "no stalling load found up to {hi}"
                )));
            }
            lo = hi;
            hi *= 2.0;
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.converges(mid, dist)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(ThresholdResult {
            g_star: lo,
            bracket: (lo, hi),
            bisection_tol: tol,
            model: self.model.to_string(),
        })
    }

    /// Limiting packet loss at each load; loads are evaluated concurrently.
    pub fn plr_curve(&self, dist: &DegreeDistribution, loads: &[f64]) -> Result<Vec<(f64, f64)>> {
        if let Some(&bad) = loads.iter().find(|&&g| !(g > 0.0)) {
            return Err(Error::DomainError {
                value: bad,
                domain: "G > 0",
            });
        }
        par::map_slice(loads, |&g| Ok((g, self.run(g, dist)?.limit_plr())))
            .into_iter()
            .collect()
    }
}

pub fn run_de(
    load: f64,
    dist: &DegreeDistribution,
    model: &SlotModel,
    cfg: &DeConfig,
) -> Result<DeTrace> {
    DensityEvolution::new(*model, *cfg)?.run(load, dist)
}

pub fn threshold(
    dist: &DegreeDistribution,
    model: &SlotModel,
    cfg: &DeConfig,
    g_lo: f64,
    g_hi: f64,
    tol: f64,
) -> Result<ThresholdResult> {
    DensityEvolution::new(*model, *cfg)?.threshold(dist, g_lo, g_hi, tol)
}

pub fn plr_curve(
    dist: &DegreeDistribution,
    model: &SlotModel,
    cfg: &DeConfig,
    loads: &[f64],
) -> Result<Vec<(f64, f64)>> {
    DensityEvolution::new(*model, *cfg)?.plr_curve(dist, loads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slot_models::PhyFailureParams;

    fn cube() -> DegreeDistribution {
        DegreeDistribution::concentrated(3).unwrap()
    }

    /// Largest stable fixed point of `p = 1 - exp(-3 G p^2)` in (0, 1], by
    /// scanning for sign changes of `h(p) = 1 - exp(-3 G p^2) - p`.
    fn cube_collision_fixed_point(load: f64) -> Option<f64> {
        let h = |p: f64| 1.0 - (-3.0 * load * p * p).exp() - p;
        let n = 100_000;
        let mut best = None;
        for k in 1..n {
            let (a, b) = (k as f64 / n as f64, (k + 1) as f64 / n as f64);
            if h(a) == 0.0 || h(a).signum() != h(b).signum() {
                best = Some(a);
            }
        }
        best
    }

    #[test]
    fn poisson_pmf_examples() {
        let rho = slot_edge_pmf(0.0, 3.0, None).unwrap();
        assert_eq!(rho, vec![1.0]);
        let rho = slot_edge_pmf(0.5, 2.0, Some(20)).unwrap();
        let mut fact = 1.0;
        for (k, &r) in rho.iter().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            let expect = (-1.0f64).exp() / fact;
            assert!((r - expect).abs() < 1e-15, "c={}", k + 1);
        }
        assert!(rho.len() >= 20);

        let mu: f64 = 6.99 * 3.0;
        let rho = slot_edge_pmf(6.99, 3.0, None).unwrap();
        let mass: f64 = rho.iter().sum();
        assert!(mass >= 1.0 - 1e-12);
        assert!((rho.len() as f64) <= mu + 12.0 * mu.sqrt());
        // smallest such truncation: dropping the last term breaks the target
        assert!(mass - rho[rho.len() - 1] < 1.0 - 1e-12);
    }

    #[test]
    fn poisson_pmf_errors() {
        assert!(slot_edge_pmf(-1.0, 3.0, None).is_err());
        assert!(slot_edge_pmf(1.0, 0.5, None).is_err());
        assert!(slot_edge_pmf(f64::NAN, 3.0, None).is_err());
        // a huge load is still representable below the cap
        assert!(slot_edge_pmf(200.0, 3.0, None).is_ok());
    }

    #[test]
    fn step_matches_collision_closed_form() {
        let dists = [
            cube(),
            DegreeDistribution::new_from_coeffs(&[(2, 0.55), (3, 0.26), (6, 0.19)]).unwrap(),
        ];
        let cfg = DeConfig::default();
        for dist in &dists {
            for gi in 0..10 {
                for pi in 0..10 {
                    let g = 0.1 + 0.2 * gi as f64;
                    let p_prev = pi as f64 / 9.0;
                    let (_, p) = de_step(p_prev, dist, &SlotModel::Collision, g, &cfg).unwrap();
                    let s: f64 = dist
                        .entries()
                        .iter()
                        .map(|&(r, m)| r as f64 * m * p_prev.powi(r as i32 - 1))
                        .sum();
                    let closed = 1.0 - (-g * s).exp();
                    assert!((p - closed).abs() < 1e-9, "g={g} p={p_prev}");

                    let np = 4;
                    let model = SlotModel::OrthogonalResources { pilots: np };
                    let (_, p) = de_step(p_prev, dist, &model, g * 4.0, &cfg).unwrap();
                    let closed = 1.0 - (-(g * 4.0 / np as f64) * s).exp();
                    assert!((p - closed).abs() < 1e-9);
                }
            }
        }
        let (q, p) = de_step(0.0, &cube(), &SlotModel::Collision, 0.7, &cfg).unwrap();
        assert_eq!((q, p), (0.0, 0.0));
        assert!(de_step(1.2, &cube(), &SlotModel::Collision, 0.7, &cfg).is_err());
    }

    #[test]
    fn folded_mixture_matches_generic_step() {
        let params = PhyFailureParams::new(64, 128, 4, 16).unwrap();
        let models = [
            SlotModel::Collision,
            SlotModel::OrthogonalResources { pilots: 16 },
            SlotModel::RealisticPhy(params),
        ];
        let dist = DegreeDistribution::new_from_coeffs(&[(2, 0.5), (3, 0.3), (5, 0.2)]).unwrap();
        let cfg = DeConfig::default();
        for model in models {
            let engine = DensityEvolution::new(model, cfg).unwrap();
            for g in [0.3, 1.7, 4.2] {
                let rho = slot_edge_pmf(g, dist.mean_degree(), None).unwrap();
                let kernel = engine.kernel_for(rho.len()).unwrap();
                let mix = SlotMixture::new(rho, &kernel);
                for k in 0..=20 {
                    let p_prev = k as f64 / 20.0;
                    let (q, p) = de_step(p_prev, &dist, &model, g, &cfg).unwrap();
                    assert!((mix.eval(q) - p).abs() < 1e-12, "{model} g={g}");
                }
            }
        }
    }

    #[test]
    fn cube_collision_run_examples() {
        let cfg = DeConfig::default();
        assert!(cube_collision_fixed_point(0.5).is_none());
        let t = run_de(0.5, &cube(), &SlotModel::Collision, &cfg).unwrap();
        assert_eq!(t.verdict, Verdict::Converged);
        assert_eq!(t.iterates[0].p, 1.0);

        let fp = cube_collision_fixed_point(1.0).expect("fixed point at G = 1");
        let t = run_de(1.0, &cube(), &SlotModel::Collision, &cfg).unwrap();
        assert_eq!(t.verdict, Verdict::Stalled);
        assert!((t.last().p - fp).abs() < 1e-4, "{} vs {fp}", t.last().p);
    }

    #[test]
    fn trace_invariants() {
        let dist = DegreeDistribution::new_from_coeffs(&[(2, 0.5), (3, 0.5)]).unwrap();
        let models = [
            SlotModel::Collision,
            SlotModel::OrthogonalResources { pilots: 8 },
            SlotModel::RealisticPhy(PhyFailureParams::new(32, 64, 2, 8).unwrap()),
        ];
        for model in models {
            for g in [0.2, 0.6, 0.9, 1.5, 4.0] {
                let t = run_de(g, &dist, &model, &DeConfig::default()).unwrap();
                assert_eq!(t.iterates[0].p, 1.0);
                for w in t.iterates.windows(2) {
                    assert!(w[1].p <= w[0].p);
                }
                for it in &t.iterates[1..] {
                    assert_eq!(it.plr, dist.pgf_eval(it.p).unwrap());
                }
            }
        }
    }

    #[test]
    fn collision_threshold_of_cube() {
        // scan the fixed-point oracle for the smallest load with a fixed point
        let mut lo = 0.7;
        let mut hi = 0.9;
        while hi - lo > 1e-5 {
            let mid = 0.5 * (lo + hi);
            if cube_collision_fixed_point(mid).is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let r = threshold(&cube(), &SlotModel::Collision, &DeConfig::default(), 0.01, 0.5, 1e-3)
            .unwrap();
        assert!((r.g_star - lo).abs() < 5e-3, "{} vs {lo}", r.g_star);
        assert!(r.bracket.0 <= r.g_star && r.g_star <= r.bracket.1);
        assert!(r.bracket.1 - r.bracket.0 <= 1e-3);
        assert_eq!(r.model, "collision");
    }

    #[test]
    fn threshold_bracket_errors() {
        let cfg = DeConfig::default();
        let e = threshold(&cube(), &SlotModel::Collision, &cfg, 0.95, 2.0, 1e-3);
        assert!(matches!(e, Err(Error::BracketError(_))));
        let e = threshold(&cube(), &SlotModel::Collision, &cfg, 0.5, 0.4, 1e-3);
        assert!(matches!(e, Err(Error::BracketError(_))));
    }

    #[test]
    fn threshold_robust_to_truncation_and_iterations() {
        let model = SlotModel::OrthogonalResources { pilots: 4 };
        let base = threshold(&cube(), &model, &DeConfig::default(), 0.1, 1.0, 1e-3).unwrap();
        let wide = DeConfig {
            c_max: Some(120),
            max_iterations: 8000,
            ..DeConfig::default()
        };
        let other = threshold(&cube(), &model, &wide, 0.1, 1.0, 1e-3).unwrap();
        assert!((base.g_star - other.g_star).abs() <= 2e-3);
        let short = DeConfig {
            max_iterations: 2500,
            ..DeConfig::default()
        };
        let other = threshold(&cube(), &model, &short, 0.1, 1.0, 1e-3).unwrap();
        assert!((base.g_star - other.g_star).abs() <= 2e-3);
    }

    #[test]
    fn plr_curve_shape() {
        let cfg = DeConfig::default();
        let loads: Vec<f64> = (1..=30).map(|k| k as f64 * 0.1).collect();
        let curve = plr_curve(&cube(), &SlotModel::Collision, &cfg, &loads).unwrap();
        assert_eq!(curve[0].1, 0.0);
        for w in curve.windows(2) {
            assert!(w[1].1 >= w[0].1, "{w:?}");
        }
        let far = plr_curve(&cube(), &SlotModel::Collision, &cfg, &[50.0]).unwrap();
        assert!(far[0].1 > 0.99);
        assert!(plr_curve(&cube(), &SlotModel::Collision, &cfg, &[0.0]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DeConfig {
            convergence_plr: 0.0,
            ..DeConfig::default()
        }
        .validate()
        .is_err());
        assert!(DeConfig {
            c_max: Some(0),
            ..DeConfig::default()
        }
        .validate()
        .is_err());
    }
}
