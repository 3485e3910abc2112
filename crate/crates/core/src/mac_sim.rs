//! Graph-level frame simulator: random burst/slot graphs with per-replica
//! pilot choices, decoded by iterative peeling under the slot-model semantics.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::campaign::{self, CampaignOptions, SimStats, TrialCount};
use crate::degree_dist::DegreeDistribution;
use crate::error::{Error, Result};
use crate::slot_models::{DecodeFailMemo, PhyFailureParams};

/// Replicas of one active user. Slot indices are distinct; pilots are
/// 0-based indices into the `N_P` orthogonal sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserReplicas {
    pub degree: u32,
    pub slots: Vec<usize>,
    pub pilots: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameGraph {
    pub n_slots: usize,
    pub n_pilots: u32,
    pub users: Vec<UserReplicas>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PeelMode {
    /// A replica is decodable iff it is alone in its slot (pilots ignored).
    IdealCollision,
    /// A replica is decodable iff it is alone on its pilot in its slot.
    IdealResources,
    /// As `IdealResources`, plus a decoding success draw with probability
    /// `1 - P_fail(n)`. By default `n = (i+1)c - 1` uses the replica's
    /// original slot occupancy `c` and pilot-collider count `i`; with
    /// `residual` set it uses the current occupancy instead (`n = c_res - 1`).
    StochasticPhy { residual: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub decoded: Vec<usize>,
    pub lost: Vec<usize>,
    pub sic_iterations: usize,
    /// Users in the order they were decoded.
    pub decode_order: Vec<usize>,
}

impl FrameOutcome {
    pub fn count(&self) -> TrialCount {
        TrialCount {
            packets: (self.decoded.len() + self.lost.len()) as u64,
            lost: self.lost.len() as u64,
        }
    }
}

impl FrameGraph {
    /// Draws a frame: each user samples a degree from `dist`, that many
    /// distinct slots, and an independent uniform pilot per replica.
    pub fn generate<R: Rng + ?Sized>(
        k_a: usize,
        dist: &DegreeDistribution,
        n_slots: usize,
        n_pilots: u32,
        rng: &mut R,
    ) -> Result<Self> {
        if n_pilots == 0 {
            return Err(Error::InvalidParams("pilots must be >= 1".into()));
        }
        if dist.max_support() as usize > n_slots {
            return Err(Error::DegreeExceedsSlots {
                degree: dist.max_support(),
                slots: n_slots,
            });
        }
        let users = (0..k_a)
            .map(|_| {
                let degree = dist.sample_degree(rng);
                let slots = index::sample(rng, n_slots, degree as usize).into_vec();
                let pilots = (0..degree).map(|_| rng.random_range(0..n_pilots)).collect();
                UserReplicas {
                    degree,
                    slots,
                    pilots,
                }
            })
            .collect();
        Ok(Self {
            n_slots,
            n_pilots,
            users,
            seed: 0,
        })
    }

    /// `(user, replica)` pairs in each slot, by increasing user id.
    pub fn slot_members(&self) -> Vec<Vec<(usize, usize)>> {
        let mut members = vec![Vec::new(); self.n_slots];
        for (u, user) in self.users.iter().enumerate() {
            for (k, &s) in user.slots.iter().enumerate() {
                members[s].push((u, k));
            }
        }
        members
    }

    pub fn slot_occupancy(&self) -> Vec<usize> {
        self.slot_members().iter().map(Vec::len).collect()
    }
}

/// Reproducible frame for one trial seed.
pub fn build_frame(
    k_a: usize,
    dist: &DegreeDistribution,
    n_slots: usize,
    n_pilots: u32,
    seed: u64,
) -> Result<FrameGraph> {
    let mut rng = campaign::stream_rng(seed, campaign::STREAM_FRAME);
    let mut frame = FrameGraph::generate(k_a, dist, n_slots, n_pilots, &mut rng)?;
    frame.seed = seed;
    Ok(frame)
}

/// Iterative SIC peeling of `frame`. `memo` supplies `P_fail` for the
/// stochastic mode and is ignored otherwise.
pub fn peel<R: Rng + ?Sized>(
    frame: &FrameGraph,
    mode: PeelMode,
    memo: &DecodeFailMemo,
    rng: &mut R,
) -> FrameOutcome {
    let order: Vec<usize> = (0..frame.n_slots).collect();
    peel_in_order(frame, mode, memo, rng, &order)
}

/// [`peel`] with an explicit slot processing order.
pub fn peel_in_order<R: Rng + ?Sized>(
    frame: &FrameGraph,
    mode: PeelMode,
    memo: &DecodeFailMemo,
    rng: &mut R,
    order: &[usize],
) -> FrameOutcome {
    let n_users = frame.users.len();
    let pilots = match mode {
        PeelMode::IdealCollision => 1,
        _ => frame.n_pilots as usize,
    };
    let pilot_of = |u: usize, k: usize| match mode {
        PeelMode::IdealCollision => 0,
        _ => frame.users[u].pilots[k] as usize,
    };
    let members = frame.slot_members();
    let mut on_pilot = vec![0u32; frame.n_slots * pilots];
    for (s, m) in members.iter().enumerate() {
        for &(u, k) in m {
            on_pilot[s * pilots + pilot_of(u, k)] += 1;
        }
    }
    let original_colliders: Vec<Vec<u32>> = frame
        .users
        .iter()
        .enumerate()
        .map(|(u, user)| {
            user.slots
                .iter()
                .enumerate()
                .map(|(k, &s)| on_pilot[s * pilots + pilot_of(u, k)] - 1)
                .collect()
        })
        .collect();
    let original_occupancy: Vec<usize> = members.iter().map(Vec::len).collect();
    let mut occupancy = original_occupancy.clone();
    // slot occupancy at the last failed decoding draw of each replica
    let mut failed_at: Vec<Vec<Option<usize>>> = frame
        .users
        .iter()
        .map(|u| vec![None; u.slots.len()])
        .collect();

    let mut decoded = vec![false; n_users];
    let mut decode_order = Vec::new();
    let mut dirty = vec![true; frame.n_slots];
    let mut sic_iterations = 0;
    loop {
        let mut progress = false;
        for &s in order {
            if !dirty[s] {
                continue;
            }
            dirty[s] = false;
            for &(u, k) in &members[s] {
                if decoded[u] || on_pilot[s * pilots + pilot_of(u, k)] != 1 {
                    continue;
                }
                if let PeelMode::StochasticPhy { residual } = mode {
                    if matches!(failed_at[u][k], Some(occ) if occ <= occupancy[s]) {
                        continue;
                    }
                    let n = if residual {
                        occupancy[s] as u64 - 1
                    } else {
                        (original_colliders[u][k] as u64 + 1) * original_occupancy[s] as u64 - 1
                    };
                    let p_fail = memo.get(n);
                    if p_fail > 0.0 && rng.random::<f64>() < p_fail {
                        failed_at[u][k] = Some(occupancy[s]);
                        continue;
                    }
                }
                decoded[u] = true;
                decode_order.push(u);
                progress = true;
                for (kk, &ss) in frame.users[u].slots.iter().enumerate() {
                    on_pilot[ss * pilots + pilot_of(u, kk)] -= 1;
                    occupancy[ss] -= 1;
                    dirty[ss] = true;
                }
            }
        }
        if !progress {
            break;
        }
        sic_iterations += 1;
    }
    let (dec, lost): (Vec<usize>, Vec<usize>) = (0..n_users).partition(|&u| decoded[u]);
    FrameOutcome {
        decoded: dec,
        lost,
        sic_iterations,
        decode_order,
    }
}

/// Graph-level campaign over `loads` active users per frame.
pub fn run_campaign(
    loads: &[usize],
    dist: &DegreeDistribution,
    mode: PeelMode,
    params: &PhyFailureParams,
    n_slots: usize,
    opts: &CampaignOptions,
) -> Result<SimStats> {
    params.validate()?;
    let memo = DecodeFailMemo::new(*params);
    campaign::run_trials(loads, opts, |k_a, seed| {
        let frame = build_frame(k_a, dist, n_slots, params.pilots, seed)?;
        let mut rng = campaign::stream_rng(seed, campaign::STREAM_DECODE);
        Ok(peel(&frame, mode, &memo, &mut rng).count())
    })
}
