//! Burst-node degree distributions `Λ(x) = Σ_r Λ_r x^r`.
//!
//! A [`DegreeDistribution`] is a sparse, normalized list of `(degree, mass)`
//! pairs with strictly increasing degrees. Construction normalizes by the
//! total mass instead of rejecting unnormalized input, so optimizer candidates
//! can be fed in directly.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Degree cap used when none is given explicitly.
pub const DEFAULT_MAX_DEGREE: u32 = 16;

/// One `{degree, mass}` record of the JSON form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeMass {
    pub degree: u32,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<DegreeMass>", try_from = "Vec<DegreeMass>")]
pub struct DegreeDistribution {
    entries: Vec<(u32, f64)>,
    cumulative: Vec<f64>,
    max_degree: u32,
}

impl DegreeDistribution {
    /// Builds a distribution from `(degree, mass)` pairs with the default degree cap.
    ///
    /// Duplicate degrees are merged, masses are divided by their total and
    /// zero-mass entries are dropped.
    pub fn new_from_coeffs(pairs: &[(u32, f64)]) -> Result<Self> {
        Self::with_max_degree(pairs, DEFAULT_MAX_DEGREE)
    }

    pub fn with_max_degree(pairs: &[(u32, f64)], max_degree: u32) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(pairs.len());
        for &(degree, mass) in pairs {
            if degree == 0 || degree > max_degree {
                return Err(Error::InvalidDegree { degree, max_degree });
            }
            if mass.is_nan() || mass < 0.0 {
                return Err(Error::NegativeMass { degree, mass });
            }
            match merged.iter_mut().find(|(d, _)| *d == degree) {
                Some(entry) => entry.1 += mass,
                None => merged.push((degree, mass)),
            }
        }
        let total: f64 = merged.iter().map(|&(_, m)| m).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ZeroTotalMass);
        }
        merged.retain(|&(_, m)| m > 0.0);
        merged.sort_by_key(|&(d, _)| d);
        for entry in &mut merged {
            entry.1 /= total;
        }
        let mut acc = 0.0;
        let cumulative = merged
            .iter()
            .map(|&(_, m)| {
                acc += m;
                acc
            })
            .collect();
        Ok(Self {
            entries: merged,
            cumulative,
            max_degree,
        })
    }

    /// Concentrated distribution `x^r`.
    pub fn concentrated(degree: u32) -> Result<Self> {
        Self::new_from_coeffs(&[(degree, 1.0)])
    }

    /// Recovers node-perspective masses from edge-perspective ones via
    /// `Λ_r = (λ_r / r) / Σ_h (λ_h / h)`.
    pub fn from_edge_perspective(edge: &[(u32, f64)]) -> Result<Self> {
        let node: Vec<(u32, f64)> = edge
            .iter()
            .map(|&(r, l)| (r, if r == 0 { l } else { l / r as f64 }))
            .collect();
        Self::new_from_coeffs(&node)
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn min_support(&self) -> u32 {
        self.entries[0].0
    }

    pub fn max_support(&self) -> u32 {
        self.entries[self.entries.len() - 1].0
    }

    /// Mass on `degree`, zero if it is outside the support.
    pub fn mass(&self, degree: u32) -> f64 {
        self.entries
            .iter()
            .find(|&&(d, _)| d == degree)
            .map_or(0.0, |&(_, m)| m)
    }

    /// `Λ'(1) = Σ_r r Λ_r`, the average number of replicas per user.
    pub fn mean_degree(&self) -> f64 {
        self.entries.iter().map(|&(r, m)| r as f64 * m).sum()
    }

    /// Edge-perspective masses `λ_r = r Λ_r / Λ'(1)`.
    pub fn edge_perspective(&self) -> Vec<(u32, f64)> {
        let mean = self.mean_degree();
        self.entries
            .iter()
            .map(|&(r, m)| (r, r as f64 * m / mean))
            .collect()
    }

    /// `Λ(x)` for `x ∈ [0, 1]`.
    pub fn pgf_eval(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::DomainError {
                value: x,
                domain: "[0, 1]",
            });
        }
        Ok(self.pgf_unchecked(x))
    }

    pub(crate) fn pgf_unchecked(&self, x: f64) -> f64 {
        self.entries
            .iter()
            .map(|&(r, m)| m * x.powi(r as i32))
            .sum()
    }

    /// Draws one repetition degree.
    pub fn sample_degree<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        self.entries[idx.min(self.entries.len() - 1)].0
    }
}

impl From<DegreeDistribution> for Vec<DegreeMass> {
    fn from(dist: DegreeDistribution) -> Self {
        dist.entries
            .iter()
            .map(|&(degree, mass)| DegreeMass { degree, mass })
            .collect()
    }
}

impl TryFrom<Vec<DegreeMass>> for DegreeDistribution {
    type Error = Error;

    fn try_from(value: Vec<DegreeMass>) -> Result<Self> {
        let pairs: Vec<(u32, f64)> = value.iter().map(|e| (e.degree, e.mass)).collect();
        Self::new_from_coeffs(&pairs)
    }
}

impl fmt::Display for DegreeDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, &(r, m)) in self.entries.iter().enumerate() {
            if k > 0 {
                f.write_str("+")?;
            }
            if self.entries.len() > 1 || m != 1.0 {
                write!(f, "{m}*")?;
            }
            write!(f, "x^{r}")?;
        }
        Ok(())
    }
}

impl FromStr for DegreeDistribution {
    type Err = Error;

    /// Parses polynomial text such as `0.55*x^2+0.26*x^3+0.19*x^6` or `x^3`.
    fn from_str(s: &str) -> Result<Self> {
        let fail = |reason: &str| Error::Parse {
            input: s.to_string(),
            reason: reason.to_string(),
        };
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(fail("empty input"));
        }
        let mut pairs = Vec::new();
        for term in compact.split('+') {
            if term.is_empty() {
                return Err(fail("empty term"));
            }
            let Some(xpos) = term.find(['x', 'X']) else {
                return Err(fail("term without x"));
            };
            let coef = term[..xpos].trim_end_matches('*');
            let mass = if coef.is_empty() {
                1.0
            } else {
                coef.parse::<f64>()
                    .map_err(|_| fail(&format!("bad coefficient {coef:?}")))?
            };
            let rest = &term[xpos + 1..];
            let degree = if rest.is_empty() {
                1
            } else if let Some(exp) = rest.strip_prefix('^') {
                exp.parse::<u32>()
                    .map_err(|_| fail(&format!("bad exponent {exp:?}")))?
            } else {
                return Err(fail(&format!("unexpected {rest:?} after x")));
            };
            pairs.push((degree, mass));
        }
        Self::new_from_coeffs(&pairs)
    }
}
