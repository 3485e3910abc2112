//! Differential-evolution search for the degree distribution with the largest
//! load threshold under a fixed average repetition rate `Λ'(1)`.
//!
//! Candidates are unconstrained non-negative vectors over the allowed degrees.
//! Each one is mapped to the nearest feasible distribution (Euclidean
//! projection onto the probability simplex intersected with the mean-degree
//! plane) before its threshold is evaluated, so every evaluated distribution
//! satisfies both constraints exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degree_dist::DegreeDistribution;
use crate::density::{DeConfig, DensityEvolution};
use crate::error::{Error, Result};
use crate::par;
use crate::slot_models::SlotModel;

/// Lower end of every threshold bracket used during the search.
const SEARCH_G_LO: f64 = 1e-3;
const SEARCH_G_HI: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    pub target_mean: f64,
    pub allowed_degrees: Vec<u32>,
    pub population: usize,
    pub generations: usize,
    pub mutation_factor: f64,
    pub crossover_rate: f64,
    /// Bisection tolerance for fitness evaluations during the search.
    pub threshold_tol: f64,
    /// Bisection tolerance for the final re-evaluation of the winner.
    pub final_tol: f64,
    pub seed: u64,
    /// Permit degree-1 repetitions in `allowed_degrees`.
    pub allow_degree_one: bool,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            target_mean: 3.0,
            allowed_degrees: (2..=8).collect(),
            population: 40,
            generations: 200,
            mutation_factor: 0.5,
            crossover_rate: 0.9,
            threshold_tol: 5e-3,
            final_tol: 1e-3,
            seed: 0,
            allow_degree_one: false,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.population < 4 {
            return bad("population must be >= 4");
        }
        if !(self.mutation_factor > 0.0 && self.mutation_factor <= 2.0) {
            return bad("mutation factor must lie in (0, 2]");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad("crossover rate must lie in [0, 1]");
        }
        if !(self.threshold_tol > 0.0 && self.final_tol > 0.0) {
            return bad("threshold tolerances must be > 0");
        }
        if self.allowed_degrees.is_empty() {
            return bad("allowed_degrees is empty");
        }
        if self.allowed_degrees.contains(&0) {
            return bad("degree 0 is not a repetition degree");
        }
        if !self.allow_degree_one && self.allowed_degrees.contains(&1) {
            return bad("degree 1 requires allow_degree_one");
        }
        let mut sorted = self.allowed_degrees.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.allowed_degrees.len() {
            return bad("allowed_degrees contains duplicates");
        }
        let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
        if !(self.target_mean >= min as f64 && self.target_mean <= max as f64) {
            return Err(Error::InfeasibleConstraint {
                target: self.target_mean,
                min,
                max,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub best: DegreeDistribution,
    pub g_star: f64,
    /// Best fitness of the initial population followed by the best after each generation.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

/// Euclidean projection of a vector onto the probability simplex.
fn project_simplex(u: &[f64]) -> Vec<f64> {
    let mut sorted = u.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        acc += v;
        let t = (acc - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            tau = t;
        }
    }
    u.iter().map(|&v| (v - tau).max(0.0)).collect()
}

fn weighted_mean(x: &[f64], degrees: &[f64]) -> f64 {
    x.iter().zip(degrees).map(|(a, r)| a * r).sum()
}

/// Nearest distribution (Euclidean, after normalizing `raw`) over `degrees`
/// with `Σ Λ_r = 1` and `Σ r Λ_r = target_mean`.
///
/// The projection is `x(β) = Π_simplex(y - β r)` for the multiplier `β` that
/// meets the mean constraint. The mean of `x(β)` is non-increasing in `β`, so
/// `β` is found by bisection and then polished by solving the equality
/// constrained problem on the final support.
pub fn project_to_constraint(
    raw: &[f64],
    degrees: &[u32],
    target_mean: f64,
) -> Result<DegreeDistribution> {
    if raw.len() != degrees.len() || raw.is_empty() {
        return Err(Error::InvalidParams(format!(
            "{} raw weights for {} degrees",
            raw.len(),
            degrees.len()
        )));
    }
    if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParams("raw weights must be finite and >= 0".into()));
    }
    let min = *degrees.iter().min().expect("non-empty");
    let max = *degrees.iter().max().expect("non-empty");
    if !(target_mean >= min as f64 && target_mean <= max as f64) {
        return Err(Error::InfeasibleConstraint {
            target: target_mean,
            min,
            max,
        });
    }
    if min == max {
        return DegreeDistribution::concentrated(min);
    }
    let r: Vec<f64> = degrees.iter().map(|&d| d as f64).collect();
    let total: f64 = raw.iter().sum();
    let y: Vec<f64> = if total > 0.0 {
        raw.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    };
    let shifted = |beta: f64| -> Vec<f64> {
        let u: Vec<f64> = y.iter().zip(&r).map(|(a, b)| a - beta * b).collect();
        project_simplex(&u)
    };

    let mut bound = 4.0;
    while weighted_mean(&shifted(-bound), &r) < target_mean
        || weighted_mean(&shifted(bound), &r) > target_mean
    {
        bound *= 2.0;
    }
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if weighted_mean(&shifted(mid), &r) > target_mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = shifted(0.5 * (lo + hi));
    if let Some(polished) = polish_on_support(&x, &y, &r, target_mean) {
        x = polished;
    }
    let pairs: Vec<(u32, f64)> = degrees.iter().copied().zip(x).collect();
    DegreeDistribution::new_from_coeffs(&pairs)
}

/// Exact equality-constrained projection restricted to the support of `x`;
/// `None` if it leaves the non-negative orthant or the support is degenerate.
fn polish_on_support(x: &[f64], y: &[f64], r: &[f64], target: f64) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 0.0).collect();
    let n = support.len() as f64;
    let (mut sr, mut srr, mut sy, mut sry) = (0.0, 0.0, 0.0, 0.0);
    for &i in &support {
        sr += r[i];
        srr += r[i] * r[i];
        sy += y[i];
        sry += r[i] * y[i];
    }
    // [n  sr ] [a]   [sy - 1     ]
    // [sr srr] [b] = [sry - target]
    let det = n * srr - sr * sr;
    if support.len() < 2 || det.abs() < 1e-12 {
        return None;
    }
    let (c1, c2) = (sy - 1.0, sry - target);
    let a = (c1 * srr - sr * c2) / det;
    let b = (n * c2 - sr * c1) / det;
    let mut out = vec![0.0; x.len()];
    for &i in &support {
        let v = y[i] - a - b * r[i];
        if v < 0.0 {
            return None;
        }
        out[i] = v;
    }
    Some(out)
}

/// Differential evolution (DE/rand/1/bin) maximizing the load threshold.
pub fn optimize(model: &SlotModel, cfg: &OptConfig, de_cfg: &DeConfig) -> Result<OptResult> {
    cfg.validate()?;
    let engine = DensityEvolution::new(*model, *de_cfg)?;
    let degrees = &cfg.allowed_degrees;
    let dim = degrees.len();

    let fitness = |v: &[f64]| -> Result<f64> {
        let dist = project_to_constraint(v, degrees, cfg.target_mean)?;
        match engine.threshold(&dist, SEARCH_G_LO, SEARCH_G_HI, cfg.threshold_tol) {
            Ok(t) => Ok(t.g_star),
            Err(Error::BracketError(_)) => Ok(0.0),
            Err(e) => Err(e),
        }
    };
    let best_of = |fit: &[f64]| -> usize {
        // lowest index wins ties
        let mut best = 0;
        for (i, &f) in fit.iter().enumerate() {
            if f > fit[best] {
                best = i;
            }
        }
        best
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut population: Vec<Vec<f64>> = (0..cfg.population)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut fit: Vec<f64> = par::map_slice(&population, |v| fitness(v))
        .into_iter()
        .collect::<Result<_>>()?;
    let mut evaluations = population.len();
    let mut history = vec![fit[best_of(&fit)]];

    let single_point = degrees.iter().min() == degrees.iter().max();
    let generations = if single_point { 0 } else { cfg.generations };
    for _ in 0..generations {
        let trials: Vec<Vec<f64>> = (0..cfg.population)
            .map(|i| {
                let [a, b, c] = distinct_others(&mut rng, cfg.population, i);
                let forced = rng.random_range(0..dim);
                (0..dim)
                    .map(|k| {
                        let cross = rng.random::<f64>() < cfg.crossover_rate || k == forced;
                        if cross {
                            let m = population[a][k]
                                + cfg.mutation_factor * (population[b][k] - population[c][k]);
                            m.max(0.0)
                        } else {
                            population[i][k]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_fit: Vec<f64> = par::map_slice(&trials, |v| fitness(v))
            .into_iter()
            .collect::<Result<_>>()?;
        evaluations += trials.len();
        for (i, (trial, f)) in trials.into_iter().zip(trial_fit).enumerate() {
            if f >= fit[i] {
                population[i] = trial;
                fit[i] = f;
            }
        }
        history.push(fit[best_of(&fit)]);
    }

    let winner = best_of(&fit);
    let best = project_to_constraint(&population[winner], degrees, cfg.target_mean)?;
    let g_star = engine
        .threshold(&best, SEARCH_G_LO, SEARCH_G_HI, cfg.final_tol)?
        .g_star;
    Ok(OptResult {
        best,
        g_star,
        history,
        evaluations: evaluations + 1,
    })
}

fn distinct_others<R: Rng>(rng: &mut R, n: usize, exclude: usize) -> [usize; 3] {
    let mut picked = [usize::MAX; 3];
    let mut k = 0;
    while k < 3 {
        let cand = rng.random_range(0..n);
        if cand != exclude && !picked[..k].contains(&cand) {
            picked[k] = cand;
            k += 1;
        }
    }
    picked
}
