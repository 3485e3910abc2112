mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use irsa::campaign::{Arrivals, CampaignOptions, SimStats};
use irsa::degree_dist::DegreeDistribution;
use irsa::density::DensityEvolution;
use irsa::mac_sim::{self, PeelMode};
use irsa::opt;
use irsa::phy_sim;
use irsa::slot_models::SlotModel;
use irsa::tables;
use serde::Serialize;
use serde_json::json;

use config::Config;

#[derive(Parser, Debug)]
#[command(name = "irsa", version, about = "Density evolution, optimization and simulation for IRSA")]
struct Cli {
    /// JSON run configuration; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for simulation campaigns and the optimizer.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write the effective configuration as JSON to this path.
    #[arg(long, global = true)]
    emit_config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct SystemArgs {
    /// Receive antennas M.
    #[arg(long)]
    antennas: Option<u32>,
    /// Orthogonal pilots N_P.
    #[arg(long)]
    pilots: Option<u32>,
    /// Payload symbols N_D.
    #[arg(long)]
    payload: Option<u32>,
    /// Correctable symbol errors t.
    #[arg(long)]
    correction: Option<u32>,
    /// Slots per frame (default: derived from the latency budget).
    #[arg(long)]
    slots: Option<usize>,
    /// Latency budget in seconds.
    #[arg(long)]
    latency_budget: Option<f64>,
    /// Symbol rate in symbols per second.
    #[arg(long)]
    symbol_rate: Option<f64>,
    /// Per-antenna noise variance (symbol-level simulation).
    #[arg(long)]
    noise_variance: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Collision,
    Resources,
    Realistic,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum MacMode {
    Collision,
    Resources,
    Stochastic,
    StochasticResidual,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Asymptotic threshold G* of a distribution (JSON).
    Threshold {
        #[arg(long, default_value = "x^3")]
        dist: DegreeDistribution,
        #[arg(long, value_enum, default_value = "realistic")]
        model: ModelKind,
        #[arg(long)]
        g_lo: Option<f64>,
        #[arg(long)]
        g_hi: Option<f64>,
        /// Bisection tolerance.
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        system: SystemArgs,
    },
    /// Limiting packet loss against load (CSV).
    PlrCurve {
        #[arg(long, default_value = "x^3")]
        dist: DegreeDistribution,
        #[arg(long, value_enum, default_value = "realistic")]
        model: ModelKind,
        /// Loads as `a,b,c` or `start:stop:step` (default depends on the model).
        #[arg(long)]
        loads: Option<String>,
        #[command(flatten)]
        system: SystemArgs,
    },
    /// Search for the distribution with the largest threshold (JSON).
    Optimize {
        #[arg(long, value_enum, default_value = "realistic")]
        model: ModelKind,
        /// Allowed repetition degrees, comma separated.
        #[arg(long, value_delimiter = ',')]
        degrees: Option<Vec<u32>>,
        #[arg(long)]
        target_mean: Option<f64>,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        generations: Option<usize>,
        #[command(flatten)]
        system: SystemArgs,
    },
    /// Graph-level frame simulation (CSV).
    SimMac {
        #[arg(long, default_value = "x^3")]
        dist: DegreeDistribution,
        #[arg(long, value_enum, default_value = "stochastic")]
        mode: MacMode,
        /// Active users per frame as `a,b,c` or `start:stop:step`.
        #[arg(long)]
        loads: String,
        #[arg(long)]
        trials: Option<usize>,
        /// Poisson number of active users with mean K_a.
        #[arg(long)]
        poisson: bool,
        #[command(flatten)]
        system: SystemArgs,
    },
    /// Symbol-level massive-MIMO frame simulation (CSV).
    SimPhy {
        #[arg(long, default_value = "x^3")]
        dist: DegreeDistribution,
        /// Active users per frame as `a,b,c` or `start:stop:step`.
        #[arg(long)]
        loads: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        poisson: bool,
        /// Decode the strongest of several same-pilot bursts.
        #[arg(long)]
        capture: bool,
        /// Write per-frame traces of the first N frames at each load as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        trace_frames: usize,
        #[command(flatten)]
        system: SystemArgs,
    },
    /// Threshold tables under the realistic channel (CSV).
    Tables {
        /// 1: fixed distributions at one antenna count; 2: antenna sweep.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        table: u8,
        /// Distribution for the antenna sweep.
        #[arg(long, default_value = "x^3")]
        dist: DegreeDistribution,
        /// Optimize the distribution separately at every antenna count.
        #[arg(long)]
        optimize: bool,
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        system: SystemArgs,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Threshold { .. } => "threshold",
            Command::PlrCurve { .. } => "plr-curve",
            Command::Optimize { .. } => "optimize",
            Command::SimMac { .. } => "sim-mac",
            Command::SimPhy { .. } => "sim-phy",
            Command::Tables { .. } => "tables",
        }
    }

    fn system(&self) -> &SystemArgs {
        match self {
            Command::Threshold { system, .. }
            | Command::PlrCurve { system, .. }
            | Command::Optimize { system, .. }
            | Command::SimMac { system, .. }
            | Command::SimPhy { system, .. }
            | Command::Tables { system, .. } => system,
        }
    }
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn effective_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let s = cli.command.system();
    let sys = &mut cfg.system;
    set(&mut sys.antennas, s.antennas);
    set(&mut sys.pilots, s.pilots);
    set(&mut sys.payload_symbols, s.payload);
    set(&mut sys.correction, s.correction);
    set(&mut sys.latency_budget, s.latency_budget);
    set(&mut sys.symbol_rate, s.symbol_rate);
    set(&mut sys.noise_variance, s.noise_variance);
    if s.slots.is_some() {
        sys.n_slots = s.slots;
    }
    if let Some(seed) = cli.seed {
        cfg.campaign.base_seed = seed;
        cfg.opt.seed = seed;
    }
    match &cli.command {
        Command::Threshold { g_lo, g_hi, tol, .. } => {
            set(&mut cfg.threshold.g_lo, *g_lo);
            set(&mut cfg.threshold.g_hi, *g_hi);
            set(&mut cfg.threshold.tol, *tol);
        }
        Command::Tables { tol, .. } => set(&mut cfg.threshold.tol, *tol),
        Command::Optimize { degrees, target_mean, population, generations, .. } => {
            if let Some(d) = degrees {
                cfg.opt.allowed_degrees = d.clone();
            }
            set(&mut cfg.opt.target_mean, *target_mean);
            set(&mut cfg.opt.population, *population);
            set(&mut cfg.opt.generations, *generations);
        }
        Command::SimMac { trials, poisson, .. } => {
            set(&mut cfg.campaign.trials, *trials);
            if *poisson {
                cfg.campaign.arrivals = Arrivals::Poisson;
            }
        }
        Command::SimPhy { trials, poisson, capture, .. } => {
            set(&mut cfg.campaign.trials, *trials);
            if *poisson {
                cfg.campaign.arrivals = Arrivals::Poisson;
            }
            if *capture {
                cfg.phy.capture = true;
            }
        }
        Command::PlrCurve { .. } => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `a,b,c` or an inclusive `start:stop:step` range.
fn parse_grid<T>(spec: &str) -> Result<Vec<T>>
where
    T: FromStr + Copy + PartialOrd + Into<f64>,
    T::Err: std::error::Error + Send + Sync + 'static,
{
    let spec = spec.trim();
    let parse = |s: &str| s.trim().parse::<T>().with_context(|| format!("bad grid value {s:?}"));
    let values = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [a, b, step] = parts[..] else {
            bail!("range must be start:stop:step, got {spec:?}");
        };
        let (a, b, step) = (parse(a)?.into(), parse(b)?.into(), parse(step)?.into());
        if !(step > 0.0) || b < a {
            bail!("range needs start <= stop and step > 0, got {spec:?}");
        }
        let n = ((b - a) / step * (1.0 + 1e-12)).floor() as usize;
        (0..=n)
            .map(|k| {
                let v = a + k as f64 * step;
                // round-trip through text keeps integer grids integral and decimals tidy
                parse(&format!("{}", (v * 1e9).round() / 1e9))
            })
            .collect::<Result<Vec<T>>>()?
    } else {
        spec.split(',').map(parse).collect::<Result<Vec<T>>>()?
    };
    if values.is_empty() {
        bail!("empty grid");
    }
    Ok(values)
}

/// Loads in users; `usize` does not convert into `f64` losslessly so grids go through `u32`.
fn parse_users(spec: &str) -> Result<Vec<usize>> {
    Ok(parse_grid::<u32>(spec)?.into_iter().map(|k| k as usize).collect())
}

fn model(kind: ModelKind, cfg: &Config) -> Result<SlotModel> {
    Ok(match kind {
        ModelKind::Collision => SlotModel::Collision,
        ModelKind::Resources => SlotModel::OrthogonalResources {
            pilots: cfg.system.pilots,
        },
        ModelKind::Realistic => SlotModel::RealisticPhy(cfg.system.failure_params()?),
    })
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut out = open_out(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Provenance line for CSV outputs: the command, its inputs and the full configuration.
fn provenance(command: &str, inputs: serde_json::Value, cfg: &Config) -> Result<String> {
    Ok(serde_json::to_string(&json!({
        "command": command,
        "inputs": inputs,
        "config": cfg,
    }))?)
}

fn write_sim_csv(path: Option<&Path>, header: &str, stats: &SimStats) -> Result<()> {
    let mut out = open_out(path)?;
    stats.write_csv(&mut out, Some(header))?;
    out.flush()?;
    Ok(())
}

fn run(cli: &Cli, cfg: &Config) -> Result<()> {
    let out = cli.out.as_deref();
    let name = cli.command.name();
    match &cli.command {
        Command::Threshold { dist, model: kind, .. } => {
            let engine = DensityEvolution::new(model(*kind, cfg)?, cfg.de)?;
            let t = &cfg.threshold;
            let r = engine.threshold(dist, t.g_lo, t.g_hi, t.tol)?;
            write_json(
                out,
                &json!({
                    "distribution": dist,
                    "mean_degree": dist.mean_degree(),
                    "g_star": r.g_star,
                    "bracket": r.bracket,
                    "bisection_tol": r.bisection_tol,
                    "model": r.model,
                }),
            )
        }
        Command::PlrCurve { dist, model: kind, loads, .. } => {
            let spec = loads.clone().unwrap_or_else(|| match kind {
                ModelKind::Realistic => "0.5:20:0.5".into(),
                _ => "0.05:1.5:0.05".into(),
            });
            let grid = parse_grid::<f64>(&spec)?;
            let m = model(*kind, cfg)?;
            let curve = DensityEvolution::new(m, cfg.de)?.plr_curve(dist, &grid)?;
            let header = provenance(name, json!({"dist": dist.to_string(), "model": m, "loads": spec}), cfg)?;
            let mut w = open_out(out)?;
            tables::write_curve_csv(&mut w, Some(&header), &curve)?;
            w.flush()?;
            Ok(())
        }
        Command::Optimize { model: kind, .. } => {
            let r = opt::optimize(&model(*kind, cfg)?, &cfg.opt, &cfg.de)?;
            write_json(out, &json!({"config": cfg.opt, "result": r}))
        }
        Command::SimMac { dist, mode, loads, .. } => {
            let users = parse_users(loads)?;
            let peel = match mode {
                MacMode::Collision => PeelMode::IdealCollision,
                MacMode::Resources => PeelMode::IdealResources,
                MacMode::Stochastic => PeelMode::StochasticPhy { residual: false },
                MacMode::StochasticResidual => PeelMode::StochasticPhy { residual: true },
            };
            let stats = mac_sim::run_campaign(
                &users,
                dist,
                peel,
                &cfg.system.failure_params()?,
                cfg.system.slots()?,
                &cfg.campaign,
            )?;
            let header = provenance(name, json!({"dist": dist.to_string(), "mode": peel, "loads": loads}), cfg)?;
            write_sim_csv(out, &header, &stats)
        }
        Command::SimPhy { dist, loads, trace, trace_frames, .. } => {
            let users = parse_users(loads)?;
            let phy = cfg.phy_config();
            let n_slots = cfg.system.slots()?;
            let stats = phy_sim::run_campaign(&users, dist, &phy, n_slots, &cfg.campaign)?;
            let header = provenance(name, json!({"dist": dist.to_string(), "loads": loads}), cfg)?;
            write_sim_csv(out, &header, &stats)?;
            if let Some(path) = trace {
                write_json(Some(path), &phy_traces(&users, dist, cfg, n_slots, *trace_frames)?)?;
            }
            Ok(())
        }
        Command::Tables { table, dist, optimize, .. } => {
            let params = cfg.system.failure_params()?;
            let tol = cfg.threshold.tol;
            let mut w = open_out(out)?;
            if *table == 1 {
                let rows = tables::table_one(&tables::table_one_distributions(), &params, &cfg.de, tol)?;
                let header = provenance(name, json!({"table": 1}), cfg)?;
                tables::write_table_one_csv(&mut w, Some(&header), &rows)?;
            } else {
                let search = optimize.then_some(&cfg.opt);
                let rows = tables::table_two(&tables::ANTENNA_SWEEP, dist, &params, &cfg.de, tol, search)?;
                let inputs = json!({"table": 2, "dist": dist.to_string(), "optimize": optimize});
                tables::write_table_two_csv(&mut w, Some(&provenance(name, inputs, cfg)?), &rows)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct FrameTrace {
    k_a: usize,
    trial: usize,
    seed: u64,
    active_users: usize,
    outcome: Option<irsa::mac_sim::FrameOutcome>,
}

fn phy_traces(users: &[usize], dist: &DegreeDistribution, cfg: &Config, n_slots: usize, frames: usize) -> Result<Vec<FrameTrace>> {
    let phy = cfg.phy_config();
    let opts: &CampaignOptions = &cfg.campaign;
    let mut traces = Vec::new();
    for &k_a in users {
        for trial in 0..frames.min(opts.trials) {
            let seed = opts.base_seed.wrapping_add(trial as u64);
            let outcome = phy_sim::replay_frame(k_a, dist, &phy, n_slots, opts, trial)?;
            traces.push(FrameTrace {
                k_a,
                trial,
                seed,
                active_users: irsa::campaign::active_users(k_a, opts.arrivals, seed),
                outcome,
            });
        }
    }
    Ok(traces)
}

#[cfg(feature = "parallel")]
fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => bail!("--jobs must be >= 1"),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == Some(0) {
        bail!("--jobs must be >= 1");
    }
    Ok(f())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = effective_config(&cli)?;
    if let Some(path) = &cli.emit_config {
        write_json(Some(path), &cfg)?;
    }
    with_jobs(cli.jobs, || run(&cli, &cfg))?
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid::<f64>("0.5:2:0.5").unwrap(), vec![0.5, 1.0, 1.5, 2.0]);
        assert_eq!(parse_grid::<f64>("0.1:0.3:0.1").unwrap(), vec![0.1, 0.2, 0.3]);
        assert_eq!(parse_users("100:300:100").unwrap(), vec![100, 200, 300]);
        assert_eq!(parse_users("5, 7,9").unwrap(), vec![5, 7, 9]);
        assert!(parse_users("3:1:1").is_err());
        assert!(parse_users("1:3").is_err());
        assert!(parse_users("1:3:0").is_err());
        assert!(parse_users("a").is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
