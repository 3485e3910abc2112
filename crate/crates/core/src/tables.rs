//! Threshold tables under the realistic channel: a fixed set of repetition
//! distributions at one antenna count, and `x^3` (or an optimized
//! distribution) across antenna counts.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::campaign::sig6;
use crate::degree_dist::DegreeDistribution;
use crate::density::{DeConfig, DensityEvolution};
use crate::error::Result;
use crate::opt::{self, OptConfig};
use crate::par;
use crate::slot_models::{PhyFailureParams, SlotModel};

/// Threshold bracket start; every tabulated distribution converges here.
const G_LO: f64 = 1e-3;
const G_HI: f64 = 1.0;

pub const ANTENNA_SWEEP: [u32; 6] = [8, 16, 32, 64, 128, 256];

/// Distributions of the first table, in row order.
pub fn table_one_distributions() -> Vec<DegreeDistribution> {
    let mixes: [&[(u32, f64)]; 8] = [
        &[(2, 1.0)],
        &[(3, 1.0)],
        &[(4, 1.0)],
        &[(5, 1.0)],
        &[(2, 0.55), (3, 0.26), (6, 0.19)],
        &[(2, 0.5), (3, 0.5)],
        &[(2, 0.51), (3, 0.27), (8, 0.22)],
        &[(2, 0.55), (3, 0.16), (6, 0.29)],
    ];
    mixes
        .iter()
        .map(|m| DegreeDistribution::new_from_coeffs(m).expect("valid distribution"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableOneRow {
    pub distribution: DegreeDistribution,
    pub mean_degree: f64,
    pub g_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableTwoRow {
    pub antennas: u32,
    pub distribution: DegreeDistribution,
    pub g_star: f64,
    pub g_star_per_antenna: f64,
}

/// Thresholds of `dists` under the realistic model, rows evaluated concurrently.
pub fn table_one(
    dists: &[DegreeDistribution],
    params: &PhyFailureParams,
    de: &DeConfig,
    tol: f64,
) -> Result<Vec<TableOneRow>> {
    let engine = DensityEvolution::new(SlotModel::RealisticPhy(*params), *de)?;
    par::map_slice(dists, |d| {
        Ok(TableOneRow {
            distribution: d.clone(),
            mean_degree: d.mean_degree(),
            g_star: engine.threshold(d, G_LO, G_HI, tol)?.g_star,
        })
    })
    .into_iter()
    .collect()
}

/// Thresholds across antenna counts. With `search` set, each row runs the
/// optimizer at that antenna count and reports its winner; otherwise `dist`
/// is used for every row.
pub fn table_two(
    antennas: &[u32],
    dist: &DegreeDistribution,
    base: &PhyFailureParams,
    de: &DeConfig,
    tol: f64,
    search: Option<&OptConfig>,
) -> Result<Vec<TableTwoRow>> {
    let rows = |&m: &u32| -> Result<TableTwoRow> {
        let params = PhyFailureParams::new(m, base.payload_symbols, base.correction, base.pilots)?;
        let model = SlotModel::RealisticPhy(params);
        let (distribution, g_star) = match search {
            Some(cfg) => {
                let cfg = OptConfig {
                    final_tol: tol,
                    ..cfg.clone()
                };
                let r = opt::optimize(&model, &cfg, de)?;
                (r.best, r.g_star)
            }
            None => {
                let g = DensityEvolution::new(model, *de)?.threshold(dist, G_LO, G_HI, tol)?;
                (dist.clone(), g.g_star)
            }
        };
        Ok(TableTwoRow {
            antennas: m,
            distribution,
            g_star,
            g_star_per_antenna: g_star / m as f64,
        })
    };
    match search {
        // the optimizer already spreads its own evaluations
        Some(_) => antennas.iter().map(rows).collect(),
        None => par::map_slice(antennas, rows).into_iter().collect(),
    }
}

fn write_with_header<W: Write>(
    out: W,
    header_comment: Option<&str>,
    columns: &[&str],
    records: impl Iterator<Item = Vec<String>>,
) -> std::io::Result<()> {
    let mut out = out;
    if let Some(c) = header_comment {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns)?;
    for r in records {
        w.write_record(&r)?;
    }
    w.flush()
}

pub fn write_table_one_csv<W: Write>(out: W, header_comment: Option<&str>, rows: &[TableOneRow]) -> std::io::Result<()> {
    write_with_header(
        out,
        header_comment,
        &["distribution", "mean_degree", "g_star"],
        rows.iter()
            .map(|r| vec![r.distribution.to_string(), sig6(r.mean_degree), sig6(r.g_star)]),
    )
}

pub fn write_table_two_csv<W: Write>(out: W, header_comment: Option<&str>, rows: &[TableTwoRow]) -> std::io::Result<()> {
    write_with_header(
        out,
        header_comment,
        &["M", "g_star", "g_star_per_M", "distribution"],
        rows.iter().map(|r| {
            vec![
                r.antennas.to_string(),
                sig6(r.g_star),
                sig6(r.g_star_per_antenna),
                r.distribution.to_string(),
            ]
        }),
    )
}

/// Writes `G,plr` rows of a density-evolution curve.
pub fn write_curve_csv<W: Write>(out: W, header_comment: Option<&str>, curve: &[(f64, f64)]) -> std::io::Result<()> {
    write_with_header(
        out,
        header_comment,
        &["G", "plr"],
        curve.iter().map(|&(g, q)| vec![sig6(g), sig6(q)]),
    )
}
