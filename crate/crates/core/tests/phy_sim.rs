use irsa::campaign::CampaignOptions;
use irsa::degree_dist::DegreeDistribution;
use irsa::mac_sim::{self, FrameGraph, UserReplicas};
use irsa::phy_sim::*;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use rand_distr::Distribution;
use statrs::distribution::{Continuous, Gamma};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn channel_estimate_ignores_other_pilots() {
    let pilots = hadamard_pilots(16).unwrap();
    let mut r = rng(1);
    let cws: Vec<Codeword> = (0..5).map(|_| Codeword::random(24, &mut r)).collect();
    let hs: Vec<Vec<Complex64>> = (0..5).map(|_| complex_gaussian(32, 1.0, &mut r)).collect();
    let assign = [3usize, 3, 7, 9, 15];
    let bursts = |hs: &[Vec<Complex64>]| -> SlotSignal {
        let b: Vec<UserBurst<'_>> = (0..5)
            .map(|k| UserBurst { user: k, channel: &hs[k], pilot: assign[k], codeword: &cws[k] })
            .collect();
        synthesize_slot(&b, &pilots, 32, 24, 0.0, &mut rng(0))
    };
    let base = channel_estimates(&bursts(&hs).pilot_part).column(3);
    let mut perturbed = hs.clone();
    for h in &mut perturbed[2..] {
        h.iter_mut().for_each(|z| *z = *z * 7.5 + Complex64::new(3.0, -1.0));
    }
    let moved = channel_estimates(&bursts(&perturbed).pilot_part).column(3);
    for ((a, b), (h0, h1)) in base.iter().zip(&moved).zip(hs[0].iter().zip(&hs[1])) {
        assert!((a - b).norm() < 1e-12);
        assert!((a - (h0 + h1)).norm() < 1e-12);
    }
}

#[test]
fn noise_has_requested_variance() {
    let pilots = hadamard_pilots(8).unwrap();
    let slot = synthesize_slot(&[], &pilots, 64, 128, 0.25, &mut rng(2));
    let cells = (64 * (8 + 128)) as f64;
    let mean_energy = slot.energy() / cells;
    assert!((mean_energy - 0.25).abs() < 0.01, "{mean_energy}");
}

#[test]
fn capture_can_resolve_same_pilot_pairs() {
    let cfg = PhyConfig {
        antennas: 64,
        pilots: 4,
        payload_symbols: 64,
        correction: 6,
        noise_variance: 0.0,
        ..PhyConfig::default()
    };
    let frame = FrameGraph {
        n_slots: 1,
        n_pilots: 4,
        users: (0..2).map(|_| UserReplicas { degree: 1, slots: vec![0], pilots: vec![2] }).collect(),
        seed: 0,
    };
    let mut strict = 0;
    let mut captured = 0;
    for seed in 0..50 {
        strict += simulate_frame(&frame, &cfg, &mut rng(seed)).unwrap().decoded.len();
        let with_capture = PhyConfig { capture: true, ..cfg };
        captured += simulate_frame(&frame, &with_capture, &mut rng(seed)).unwrap().decoded.len();
    }
    assert_eq!(strict, 0);
    assert!(captured > 0);
}

#[test]
fn subtraction_modes_agree_at_light_load() {
    let dist = DegreeDistribution::concentrated(2).unwrap();
    let frame = mac_sim::build_frame(30, &dist, 20, 8, 3).unwrap();
    for subtraction in [SubtractionMode::Prce, SubtractionMode::ReEstimate] {
        let cfg = PhyConfig {
            antennas: 64,
            pilots: 8,
            payload_symbols: 64,
            correction: 4,
            subtraction,
            ..PhyConfig::default()
        };
        let out = simulate_frame(&frame, &cfg, &mut rng(4)).unwrap();
        assert_eq!(out.decoded.len() + out.lost.len(), 30);
        assert!(out.lost.len() <= 3, "{subtraction:?}: {:?}", out.lost);
        let mut order = out.decode_order.clone();
        order.sort_unstable();
        assert_eq!(order, out.decoded);
    }
}

#[test]
fn trace_serializes() {
    let dist = DegreeDistribution::concentrated(3).unwrap();
    let frame = mac_sim::build_frame(10, &dist, 10, 8, 1).unwrap();
    let cfg = PhyConfig { antennas: 32, pilots: 8, payload_symbols: 32, ..PhyConfig::default() };
    let out = simulate_frame(&frame, &cfg, &mut rng(5)).unwrap();
    let json = serde_json::to_string(&out).unwrap();
    assert!(json.contains("\"decode_order\""));
    assert!(json.contains("\"sic_iterations\""));
}

/// `E[f(X)]` for `X ~ Gamma(shape, 1)` by composite Simpson over the bulk.
fn gamma_expectation(shape: f64, f: impl Fn(f64) -> f64) -> f64 {
    let law = Gamma::new(shape, 1.0).unwrap();
    let hi = shape + 30.0 * shape.sqrt() + 30.0;
    let n = 20_000;
    let h = hi / n as f64;
    let mut acc = 0.0;
    for k in 0..=n {
        let x = k as f64 * h;
        let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        let g = if x == 0.0 { 0.0 } else { law.pdf(x) * f(x) };
        acc += w * g;
    }
    acc * h / 3.0
}

/// QPSK symbol error with interference `CN(0, n/x)` after MRC on a known channel of energy `x`.
fn ser_given_energy(x: f64, n: f64) -> f64 {
    let e = libm::erfc((x / (2.0 * n)).sqrt());
    e - 0.25 * e * e
}

fn z_score(count: u64, total: u64, p: f64) -> f64 {
    let est = count as f64 / total as f64;
    let sigma = (p * (1.0 - p) / total as f64).sqrt();
    if sigma == 0.0 {
        if count == 0 { 0.0 } else { f64::INFINITY }
    } else {
        (est - p).abs() / sigma
    }
}

fn two_sample_z(a: u64, b: u64, n: u64) -> f64 {
    let pooled = (a + b) as f64 / (2 * n) as f64;
    let sigma = (2.0 * pooled * (1.0 - pooled) / n as f64).sqrt();
    if sigma == 0.0 {
        0.0
    } else {
        (a as f64 - b as f64).abs() / n as f64 / sigma
    }
}

/// Codeword failures of the equivalent scalar channel: with a known target
/// channel of energy `X ~ Gamma(M, 1)`, MRC leaves `x + Σ a_i x_i` with
/// `a_i ~ CN(0, 1/X)` fixed over the codeword.
fn reduced_model_failures(antennas: usize, n: usize, payload: usize, t: u32, codewords: u64, r: &mut ChaCha8Rng) -> u64 {
    let energy = rand_distr::Gamma::new(antennas as f64, 1.0).unwrap();
    let mut failed = 0;
    for _ in 0..codewords {
        let x: f64 = energy.sample(r);
        let a = complex_gaussian(n, 1.0 / x, r);
        let mut wrong = 0;
        for _ in 0..payload {
            let sym = qpsk_symbol(r.random_range(0..2), r.random_range(0..2));
            let mut z = sym;
            for ai in &a {
                z += ai * qpsk_symbol(r.random_range(0..2), r.random_range(0..2));
            }
            wrong += u32::from(qpsk_decide(z) != qpsk_decide(sym));
        }
        failed += u64::from(wrong > t);
    }
    failed
}

/// The simulator against the exact fading-averaged error rates: the
/// closed forms replace `‖h‖²` by its mean `M`, the simulation does not.
#[test]
fn error_rates_match_fading_average() {
    let pilots = hadamard_pilots(16).unwrap();
    for antennas in [16usize, 64] {
        for n in [1usize, 2, 4, 8] {
            let mut r = rng(100 * antennas as u64 + n as u64);
            let exact_ser = gamma_expectation(antennas as f64, |x| ser_given_energy(x, n as f64));
            // one symbol per independent slot: symbols sharing a channel draw
            // have correlated errors
            let payload = 1;
            let slots = 100_000;
            let mut errors = 0u64;
            for _ in 0..slots {
                let cws: Vec<Codeword> = (0..=n).map(|_| Codeword::random(payload, &mut r)).collect();
                let hs: Vec<_> = (0..=n).map(|_| complex_gaussian(antennas, 1.0, &mut r)).collect();
                let b: Vec<UserBurst<'_>> =
                    (0..=n).map(|k| UserBurst { user: k, channel: &hs[k], pilot: k, codeword: &cws[k] }).collect();
                let slot = synthesize_slot(&b, &pilots, antennas, payload, 0.0, &mut r);
                let phi = channel_estimates(&slot.pilot_part).column(0);
                errors += cws[0].errors(&payload_estimate(&phi, &slot.data_part)).1 as u64;
            }
            let z = z_score(errors, (slots * payload) as u64, exact_ser);
            assert!(z <= 3.0, "SER M={antennas} n={n}: {errors} errors vs {exact_ser}, z={z}");

            for t in [0u32, 2] {
                let reference = reduced_model_failures(antennas, n, 32, t, 3000, &mut r);
                let cfg = PhyConfig {
                    antennas: antennas as u32,
                    pilots: 16,
                    payload_symbols: 32,
                    correction: t as u32,
                    noise_variance: 0.0,
                    criterion: DecodeCriterion::Symbols,
                    ..PhyConfig::default()
                };
                let frames = 3000u64;
                let mut failed = 0u64;
                for _ in 0..frames {
                    let cws: Vec<Codeword> = (0..=n).map(|_| Codeword::random(32, &mut r)).collect();
                    let hs: Vec<_> = (0..=n).map(|_| complex_gaussian(antennas, 1.0, &mut r)).collect();
                    let b: Vec<UserBurst<'_>> =
                        (0..=n).map(|k| UserBurst { user: k, channel: &hs[k], pilot: k, codeword: &cws[k] }).collect();
                    let slot = synthesize_slot(&b, &pilots, antennas, 32, 0.0, &mut r);
                    let cand = [Candidate { user: 0, codeword: &cws[0] }];
                    failed += u64::from(estimate_and_decode_pilots(&slot, &cand, &cfg, [0]).is_empty());
                }
                let z = two_sample_z(failed, reference, frames);
                assert!(z <= 3.0, "P_fail M={antennas} n={n} t={t}: {failed} vs {reference} of {frames}, z={z}");
            }
        }
    }
}

#[test]
fn campaigns_are_reproducible() {
    let dist = DegreeDistribution::concentrated(3).unwrap();
    let cfg = PhyConfig { antennas: 32, pilots: 8, payload_symbols: 48, correction: 3, ..PhyConfig::default() };
    let opts = CampaignOptions { trials: 5, base_seed: 11, ..CampaignOptions::default() };
    let a = run_campaign(&[10, 25], &dist, &cfg, 10, &opts).unwrap();
    let b = run_campaign(&[10, 25], &dist, &cfg, 10, &opts).unwrap();
    assert_eq!(a, b);
    assert!(run_campaign(&[10], &dist, &PhyConfig { pilots: 12, ..cfg }, 10, &opts).is_err());
}

#[test]
fn replayed_frames_add_up_to_the_campaign() {
    let dist = DegreeDistribution::concentrated(3).unwrap();
    let cfg = PhyConfig { antennas: 32, pilots: 8, payload_symbols: 48, correction: 3, ..PhyConfig::default() };
    for arrivals in [irsa::campaign::Arrivals::Fixed, irsa::campaign::Arrivals::Poisson] {
        let opts = CampaignOptions { trials: 6, base_seed: 21, arrivals };
        let stats = run_campaign(&[30], &dist, &cfg, 12, &opts).unwrap();
        let mut lost = 0;
        let mut packets = 0;
        for trial in 0..6 {
            if let Some(out) = replay_frame(30, &dist, &cfg, 12, &opts, trial).unwrap() {
                lost += out.lost.len() as u64;
                packets += (out.lost.len() + out.decoded.len()) as u64;
            }
        }
        assert_eq!((packets, lost), (stats.rows[0].packets, stats.rows[0].lost));
    }
}

/// Full parameters, well below the waterfall.
#[test]
fn full_scale_light_load() {
    let dist = DegreeDistribution::concentrated(3).unwrap();
    let opts = CampaignOptions { trials: 200, base_seed: 1, ..CampaignOptions::default() };
    let stats = run_campaign(&[300], &dist, &PhyConfig::default(), 78, &opts).unwrap();
    let row = &stats.rows[0];
    assert!(row.plr < 1e-2, "{row:?}");
}
