//! Symbol-level frame simulator: Rayleigh block fading at an `M`-antenna
//! receiver, Hadamard pilots, MRC payload estimation with hard QPSK decisions,
//! and cross-slot SIC.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::campaign::{self, CampaignOptions, SimStats};
use crate::degree_dist::DegreeDistribution;
use crate::error::{Error, Result};
use crate::mac_sim::{self, FrameGraph, FrameOutcome};

const C0: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Complex64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn column(&self, c: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Squared Frobenius norm.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Adds `h · v` (outer product).
    pub fn add_outer(&mut self, h: &[Complex64], v: &[Complex64], sign: f64) {
        for (r, &hr) in h.iter().enumerate() {
            let hr = hr * sign;
            for (dst, &x) in self.row_mut(r).iter_mut().zip(v) {
                *dst += hr * x;
            }
        }
    }
}

/// Sylvester-Hadamard pilot book: `n` rows of length `n`, entries ±1.
/// Row `j` has entry `(-1)^popcount(j & k)` at position `k`.
pub fn hadamard_pilots(n: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    Ok((0..n)
        .map(|j| {
            (0..n)
                .map(|k| if (j & k).count_ones() % 2 == 0 { 1.0 } else { -1.0 })
                .collect()
        })
        .collect())
}

/// In-place unnormalized Walsh-Hadamard transform in Sylvester order.
fn fwht(v: &mut [Complex64]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        for block in (0..n).step_by(2 * h) {
            for k in block..block + h {
                let (a, b) = (v[k], v[k + h]);
                v[k] = a + b;
                v[k + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// Gray-mapped unit-energy QPSK symbol for bits `(b0, b1)`.
pub fn qpsk_symbol(b0: u8, b1: u8) -> Complex64 {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(if b0 == 0 { a } else { -a }, if b1 == 0 { a } else { -a })
}

/// Quadrant slicer, inverse of [`qpsk_symbol`].
pub fn qpsk_decide(z: Complex64) -> (u8, u8) {
    (u8::from(z.re < 0.0), u8::from(z.im < 0.0))
}

/// A user's payload: `2·N_D` bits and their QPSK symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    pub bits: Vec<u8>,
    pub symbols: Vec<Complex64>,
}

impl Codeword {
    pub fn random<R: Rng + ?Sized>(payload_symbols: usize, rng: &mut R) -> Self {
        let bits: Vec<u8> = (0..2 * payload_symbols).map(|_| rng.random_range(0..2)).collect();
        let symbols = bits.chunks(2).map(|b| qpsk_symbol(b[0], b[1])).collect();
        Self { bits, symbols }
    }

    /// Wrong bits and wrong symbols of the hard decisions on `estimate`.
    pub fn errors(&self, estimate: &[Complex64]) -> (usize, usize) {
        let mut bits = 0;
        let mut symbols = 0;
        for (b, &z) in self.bits.chunks(2).zip(estimate) {
            let (d0, d1) = qpsk_decide(z);
            let wrong = usize::from(d0 != b[0]) + usize::from(d1 != b[1]);
            bits += wrong;
            symbols += usize::from(wrong > 0);
        }
        (bits, symbols)
    }
}

/// Complex standard normal vector with `E|z|² = variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(len: usize, variance: f64, rng: &mut R) -> Vec<Complex64> {
    let s = (variance / 2.0).sqrt();
    (0..len)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * s, im * s)
        })
        .collect()
}

/// One replica as seen by a slot.
#[derive(Debug, Clone, Copy)]
pub struct UserBurst<'a> {
    pub user: usize,
    pub channel: &'a [Complex64],
    pub pilot: usize,
    pub codeword: &'a Codeword,
}

/// Received pilot part `P` (M × N_P) and data part `Y` (M × N_D).
#[derive(Debug, Clone, PartialEq)]
pub struct SlotSignal {
    pub pilot_part: CMatrix,
    pub data_part: CMatrix,
}

impl SlotSignal {
    pub fn energy(&self) -> f64 {
        self.pilot_part.energy() + self.data_part.energy()
    }
}

pub fn synthesize_slot<R: Rng + ?Sized>(
    bursts: &[UserBurst<'_>],
    pilots: &[Vec<f64>],
    antennas: usize,
    payload_symbols: usize,
    noise_variance: f64,
    rng: &mut R,
) -> SlotSignal {
    let n_p = pilots.len();
    let mut pilot_part = CMatrix::zeros(antennas, n_p);
    let mut data_part = CMatrix::zeros(antennas, payload_symbols);
    for b in bursts {
        let s: Vec<Complex64> = pilots[b.pilot].iter().map(|&v| Complex64::new(v, 0.0)).collect();
        pilot_part.add_outer(b.channel, &s, 1.0);
        data_part.add_outer(b.channel, &b.codeword.symbols, 1.0);
    }
    if noise_variance > 0.0 {
        for m in [&mut pilot_part, &mut data_part] {
            let noise = complex_gaussian(m.data.len(), noise_variance, rng);
            m.data.iter_mut().zip(noise).for_each(|(d, z)| *d += z);
        }
    }
    SlotSignal {
        pilot_part,
        data_part,
    }
}

/// Channel estimates for every pilot: column `j` is `P s_j^H / ‖s_j‖²`.
pub fn channel_estimates(pilot_part: &CMatrix) -> CMatrix {
    let n_p = pilot_part.cols();
    let mut out = pilot_part.clone();
    let scale = 1.0 / n_p as f64;
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        fwht(row);
        row.iter_mut().for_each(|z| *z *= scale);
    }
    out
}

/// MRC payload estimate `φ^H Y / ‖φ‖²`.
pub fn payload_estimate(phi: &[Complex64], data_part: &CMatrix) -> Vec<Complex64> {
    let energy: f64 = phi.iter().map(|z| z.norm_sqr()).sum();
    let mut x = vec![C0; data_part.cols()];
    for (r, &p) in phi.iter().enumerate() {
        let w = p.conj();
        for (acc, &y) in x.iter_mut().zip(data_part.row(r)) {
            *acc += w * y;
        }
    }
    x.iter_mut().for_each(|z| *z /= energy);
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecodeCriterion {
    /// At most `t` wrong bits among the `2·N_D` hard-decided bits.
    #[default]
    Bits,
    /// At most `t` wrong symbols among the `N_D`.
    Symbols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubtractionMode {
    /// Subtract with the true channel of the replica.
    Prce,
    /// Least-squares channel re-estimate over the whole known burst.
    #[default]
    ReEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhyConfig {
    pub antennas: u32,
    pub pilots: u32,
    pub payload_symbols: u32,
    pub correction: u32,
    /// Per-antenna noise variance (channel entries have unit variance).
    pub noise_variance: f64,
    pub criterion: DecodeCriterion,
    pub subtraction: SubtractionMode,
    /// Lets the strongest of several same-pilot bursts be decoded. When off,
    /// a pilot carrying more than one unsubtracted burst is never decoded.
    pub capture: bool,
}

impl Default for PhyConfig {
    fn default() -> Self {
        Self {
            antennas: 256,
            pilots: 64,
            payload_symbols: 256,
            correction: 10,
            noise_variance: 0.01,
            criterion: DecodeCriterion::Bits,
            subtraction: SubtractionMode::ReEstimate,
            capture: false,
        }
    }
}

impl PhyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.payload_symbols == 0 {
            return Err(Error::InvalidParams("antennas and payload_symbols must be >= 1".into()));
        }
        if !(self.pilots as usize).is_power_of_two() {
            return Err(Error::NotPowerOfTwo(self.pilots as usize));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::DomainError {
                value: self.noise_variance,
                domain: "noise variance in [0, inf)",
            });
        }
        Ok(())
    }

    /// Energy below which a channel estimate is treated as an unused pilot.
    pub fn empty_pilot_threshold(&self) -> f64 {
        let m = self.antennas as f64;
        (10.0 * self.noise_variance * m / self.pilots as f64).max(1e-10 * m)
    }

    fn accepts(&self, codeword: &Codeword, estimate: &[Complex64]) -> bool {
        let (bits, symbols) = codeword.errors(estimate);
        let errors = match self.criterion {
            DecodeCriterion::Bits => bits,
            DecodeCriterion::Symbols => symbols,
        };
        errors <= self.correction as usize
    }
}

/// A not-yet-decoded user present in a slot, with its true codeword for
/// validation.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub user: usize,
    pub codeword: &'a Codeword,
}

/// Tries every pilot of the slot. Returns `(pilot, user)` for each success;
/// at most one user per pilot, and each candidate at most once.
pub fn estimate_and_decode(slot: &SlotSignal, candidates: &[Candidate<'_>], cfg: &PhyConfig) -> Vec<(usize, usize)> {
    estimate_and_decode_pilots(slot, candidates, cfg, 0..slot.pilot_part.cols())
}

/// [`estimate_and_decode`] restricted to the given pilots.
pub fn estimate_and_decode_pilots(
    slot: &SlotSignal,
    candidates: &[Candidate<'_>],
    cfg: &PhyConfig,
    pilots: impl IntoIterator<Item = usize>,
) -> Vec<(usize, usize)> {
    let phis = channel_estimates(&slot.pilot_part);
    let floor = cfg.empty_pilot_threshold();
    let mut taken = vec![false; candidates.len()];
    let mut out = Vec::new();
    for j in pilots {
        let phi = phis.column(j);
        if phi.iter().map(|z| z.norm_sqr()).sum::<f64>() <= floor {
            continue;
        }
        let x_hat = payload_estimate(&phi, &slot.data_part);
        if let Some(k) = (0..candidates.len()).find(|&k| !taken[k] && cfg.accepts(candidates[k].codeword, &x_hat)) {
            taken[k] = true;
            out.push((j, candidates[k].user));
        }
    }
    out
}

/// Removes one known burst from a slot. `channel` is only read in
/// [`SubtractionMode::Prce`].
pub fn sic_subtract(
    slot: &mut SlotSignal,
    pilot: &[f64],
    codeword: &Codeword,
    channel: &[Complex64],
    mode: SubtractionMode,
) {
    let s: Vec<Complex64> = pilot.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let h = match mode {
        SubtractionMode::Prce => channel.to_vec(),
        SubtractionMode::ReEstimate => {
            let norm = (s.len() + codeword.symbols.len()) as f64;
            (0..slot.pilot_part.rows())
                .map(|r| {
                    let from_pilot: Complex64 =
                        slot.pilot_part.row(r).iter().zip(&s).map(|(p, v)| p * v.conj()).sum();
                    let from_data: Complex64 =
                        slot.data_part.row(r).iter().zip(&codeword.symbols).map(|(y, x)| y * x.conj()).sum();
                    (from_pilot + from_data) / norm
                })
                .collect()
        }
    };
    slot.pilot_part.add_outer(&h, &s, -1.0);
    slot.data_part.add_outer(&h, &codeword.symbols, -1.0);
}

/// Residual slot signals plus bookkeeping of what has been subtracted.
#[derive(Debug, Clone)]
pub struct SicState {
    pub slots: Vec<SlotSignal>,
    subtracted: Vec<Vec<bool>>,
    /// Unsubtracted bursts per slot and pilot.
    on_pilot: Vec<Vec<u32>>,
    pub passes: usize,
}

impl SicState {
    pub fn new(slots: Vec<SlotSignal>, frame: &FrameGraph) -> Self {
        let mut on_pilot = vec![vec![0; frame.n_pilots as usize]; frame.n_slots];
        for u in &frame.users {
            for (&s, &j) in u.slots.iter().zip(&u.pilots) {
                on_pilot[s][j as usize] += 1;
            }
        }
        Self {
            slots,
            subtracted: frame.users.iter().map(|u| vec![false; u.slots.len()]).collect(),
            on_pilot,
            passes: 0,
        }
    }

    /// Number of bursts still present on pilot `j` of slot `s`.
    pub fn bursts_on_pilot(&self, s: usize, j: usize) -> u32 {
        self.on_pilot[s][j]
    }

    /// Subtracts every replica of `user`; returns the affected slots.
    pub fn subtract_user(
        &mut self,
        frame: &FrameGraph,
        user: usize,
        world: &FrameWorld,
        pilots: &[Vec<f64>],
        mode: SubtractionMode,
    ) -> Result<Vec<usize>> {
        let replicas = &frame.users[user];
        if self.subtracted[user].iter().any(|&d| d) {
            return Err(Error::DoubleSubtraction {
                user,
                slot: replicas.slots[self.subtracted[user].iter().position(|&d| d).unwrap_or(0)],
            });
        }
        for (k, &s) in replicas.slots.iter().enumerate() {
            sic_subtract(
                &mut self.slots[s],
                &pilots[replicas.pilots[k] as usize],
                &world.codewords[user],
                &world.channels[user][k],
                mode,
            );
            self.subtracted[user][k] = true;
            self.on_pilot[s][replicas.pilots[k] as usize] -= 1;
        }
        Ok(replicas.slots.clone())
    }
}

/// Random payloads and per-replica channels of one frame.
#[derive(Debug, Clone)]
pub struct FrameWorld {
    pub codewords: Vec<Codeword>,
    pub channels: Vec<Vec<Vec<Complex64>>>,
}

impl FrameWorld {
    pub fn draw<R: Rng + ?Sized>(frame: &FrameGraph, cfg: &PhyConfig, rng: &mut R) -> Self {
        let m = cfg.antennas as usize;
        let mut codewords = Vec::with_capacity(frame.users.len());
        let mut channels = Vec::with_capacity(frame.users.len());
        for u in &frame.users {
            codewords.push(Codeword::random(cfg.payload_symbols as usize, rng));
            channels.push(u.slots.iter().map(|_| complex_gaussian(m, 1.0, rng)).collect());
        }
        Self { codewords, channels }
    }
}

/// Two-phase receiver over a whole frame: one in-order scan of all slots,
/// then SIC passes until no new user is found.
pub fn simulate_frame<R: Rng + ?Sized>(frame: &FrameGraph, cfg: &PhyConfig, rng: &mut R) -> Result<FrameOutcome> {
    cfg.validate()?;
    if frame.n_pilots != cfg.pilots {
        return Err(Error::InvalidParams(format!(
            "frame uses {} pilots, receiver expects {}",
            frame.n_pilots, cfg.pilots
        )));
    }
    let pilots = hadamard_pilots(cfg.pilots as usize)?;
    let world = FrameWorld::draw(frame, cfg, rng);
    let members = frame.slot_members();
    let slots = members
        .iter()
        .map(|m| {
            let bursts: Vec<UserBurst<'_>> = m
                .iter()
                .map(|&(u, k)| UserBurst {
                    user: u,
                    channel: &world.channels[u][k],
                    pilot: frame.users[u].pilots[k] as usize,
                    codeword: &world.codewords[u],
                })
                .collect();
            synthesize_slot(
                &bursts,
                &pilots,
                cfg.antennas as usize,
                cfg.payload_symbols as usize,
                cfg.noise_variance,
                rng,
            )
        })
        .collect();
    let mut state = SicState::new(slots, frame);
    let mut decoded = vec![false; frame.users.len()];
    let mut decode_order = Vec::new();

    let attempt = |s: usize, state: &SicState, decoded: &mut Vec<bool>, order: &mut Vec<usize>| {
        let candidates: Vec<Candidate<'_>> = members[s]
            .iter()
            .filter(|&&(u, _)| !decoded[u])
            .map(|&(u, _)| Candidate {
                user: u,
                codeword: &world.codewords[u],
            })
            .collect();
        if candidates.is_empty() {
            return Vec::new();
        }
        // Without capture only a pilot holding a single burst can succeed, and
        // a pilot whose bursts are all decoded would only be tested against
        // codewords of other pilots.
        let usable: Vec<usize> = if cfg.capture {
            (0..cfg.pilots as usize).collect()
        } else {
            let mut js: Vec<usize> = members[s]
                .iter()
                .filter(|&&(u, _)| !decoded[u])
                .map(|&(u, k)| frame.users[u].pilots[k] as usize)
                .filter(|&j| state.bursts_on_pilot(s, j) == 1)
                .collect();
            js.sort_unstable();
            js
        };
        let found: Vec<usize> = estimate_and_decode_pilots(&state.slots[s], &candidates, cfg, usable)
            .into_iter()
            .map(|(_, u)| u)
            .collect();
        for &u in &found {
            decoded[u] = true;
            order.push(u);
        }
        found
    };

    let mut buffer = Vec::new();
    for s in 0..frame.n_slots {
        buffer.extend(attempt(s, &state, &mut decoded, &mut decode_order));
    }
    while !buffer.is_empty() {
        state.passes += 1;
        let mut affected = vec![false; frame.n_slots];
        for u in buffer.drain(..) {
            for s in state.subtract_user(frame, u, &world, &pilots, cfg.subtraction)? {
                affected[s] = true;
            }
        }
        for s in (0..frame.n_slots).filter(|&s| affected[s]) {
            buffer.extend(attempt(s, &state, &mut decoded, &mut decode_order));
        }
    }
    let (dec, lost): (Vec<usize>, Vec<usize>) = (0..frame.users.len()).partition(|&u| decoded[u]);
    Ok(FrameOutcome {
        decoded: dec,
        lost,
        sic_iterations: state.passes,
        decode_order,
    })
}

/// Symbol-level campaign; frames are drawn exactly as in the graph-level
/// simulator for the same seeds.
pub fn run_campaign(
    loads: &[usize],
    dist: &DegreeDistribution,
    cfg: &PhyConfig,
    n_slots: usize,
    opts: &CampaignOptions,
) -> Result<SimStats> {
    cfg.validate()?;
    campaign::run_trials(loads, opts, |k_a, seed| {
        let frame = mac_sim::build_frame(k_a, dist, n_slots, cfg.pilots, seed)?;
        let mut rng = campaign::stream_rng(seed, campaign::STREAM_PHY);
        Ok(simulate_frame(&frame, cfg, &mut rng)?.count())
    })
}

/// Replays trial `trial` of [`run_campaign`] at load `k_a` and returns the
/// whole outcome, decode order and SIC passes included. `None` when the
/// frame has no active users.
pub fn replay_frame(
    k_a: usize,
    dist: &DegreeDistribution,
    cfg: &PhyConfig,
    n_slots: usize,
    opts: &CampaignOptions,
    trial: usize,
) -> Result<Option<FrameOutcome>> {
    cfg.validate()?;
    let seed = opts.base_seed.wrapping_add(trial as u64);
    let users = campaign::active_users(k_a, opts.arrivals, seed);
    if users == 0 {
        return Ok(None);
    }
    let frame = mac_sim::build_frame(users, dist, n_slots, cfg.pilots, seed)?;
    let mut rng = campaign::stream_rng(seed, campaign::STREAM_PHY);
    simulate_frame(&frame, cfg, &mut rng).map(Some)
}
