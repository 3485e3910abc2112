use irsa::campaign::{Arrivals, CampaignOptions};
use irsa::degree_dist::DegreeDistribution;
use irsa::density::{self, DeConfig};
use irsa::mac_sim::{self, PeelMode};
use irsa::slot_models::{DecodeFailMemo, PhyFailureParams, SlotModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn x3() -> DegreeDistribution {
    DegreeDistribution::concentrated(3).unwrap()
}

fn opts(trials: usize, base_seed: u64) -> CampaignOptions {
    CampaignOptions {
        trials,
        base_seed,
        ..CampaignOptions::default()
    }
}

#[test]
fn stochastic_mode_without_failures_is_ideal() {
    // t = N_D makes every P_fail vanish
    let lossless = PhyFailureParams::new(16, 32, 32, 8).unwrap();
    let memo = DecodeFailMemo::new(lossless);
    for seed in 0..30 {
        let frame = mac_sim::build_frame(150, &x3(), 40, 8, seed).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ideal = mac_sim::peel(&frame, PeelMode::IdealResources, &memo, &mut r);
        for residual in [false, true] {
            let stoch = mac_sim::peel(&frame, PeelMode::StochasticPhy { residual }, &memo, &mut r);
            assert_eq!(ideal.decoded, stoch.decoded);
        }
    }
}

#[test]
fn loss_grows_with_load() {
    let stats = mac_sim::run_campaign(
        &[20, 40, 60, 80, 100],
        &x3(),
        PeelMode::IdealCollision,
        &PhyFailureParams::default(),
        78,
        &opts(400, 3),
    )
    .unwrap();
    for w in stats.rows.windows(2) {
        assert!(w[1].plr >= w[0].plr || w[1].ci_hi >= w[0].ci_lo, "{:?}", w);
    }
    assert!(stats.rows[4].plr > stats.rows[0].plr);
}

#[test]
fn finite_frames_approach_the_asymptotic_limit() {
    // collision channel, x^3, load below the 0.818 threshold: the limit is 0
    let load = 0.65;
    let q = density::plr_curve(&x3(), &SlotModel::Collision, &DeConfig::default(), &[load]).unwrap()[0].1;
    assert_eq!(q, 0.0);
    let gaps: Vec<f64> = [100usize, 200, 400]
        .iter()
        .map(|&n_slots| {
            let k_a = (load * n_slots as f64).round() as usize;
            let trials = 800_000 / k_a;
            let s = mac_sim::run_campaign(&[k_a], &x3(), PeelMode::IdealCollision, &PhyFailureParams::default(), n_slots, &opts(trials, 5))
                .unwrap();
            (s.rows[0].plr - q).abs()
        })
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

#[test]
fn realistic_loss_follows_density_evolution_above_threshold() {
    let model = SlotModel::RealisticPhy(PhyFailureParams::default());
    let loads = [12.0, 14.0, 16.0];
    let curve = density::plr_curve(&x3(), &model, &DeConfig::default(), &loads).unwrap();
    let k: Vec<usize> = loads.iter().map(|g| (g * 78.0) as usize).collect();
    let sim = mac_sim::run_campaign(&k, &x3(), PeelMode::StochasticPhy { residual: false }, &PhyFailureParams::default(), 78, &opts(200, 6))
        .unwrap();
    for (row, &(_, q)) in sim.rows.iter().zip(&curve) {
        assert!((row.plr - q).abs() <= 0.3 * q, "K_a {}: {} vs {q}", row.k_a, row.plr);
    }
}

/// The loss rate reaches the `1e-4` level used to declare convergence close
/// to `N_s G*`.
#[test]
fn realistic_loss_reaches_target_near_threshold() {
    let model = SlotModel::RealisticPhy(PhyFailureParams::default());
    let g_star = density::threshold(&x3(), &model, &DeConfig::default(), 1e-3, 1.0, 1e-3).unwrap().g_star;
    let k_star = 78.0 * g_star;
    let lo = (0.9 * k_star) as usize;
    let hi = (1.1 * k_star).ceil() as usize;
    let s = mac_sim::run_campaign(&[lo, hi], &x3(), PeelMode::StochasticPhy { residual: false }, &PhyFailureParams::default(), 78, &opts(1500, 7))
        .unwrap();
    assert!(s.rows[0].plr < 1e-4, "{:?}", s.rows[0]);
    assert!(s.rows[1].plr > 1e-4, "{:?}", s.rows[1]);
}

#[test]
fn residual_counting_never_hurts() {
    let params = PhyFailureParams::default();
    let frozen = mac_sim::run_campaign(&[900], &x3(), PeelMode::StochasticPhy { residual: false }, &params, 78, &opts(100, 8)).unwrap();
    let residual = mac_sim::run_campaign(&[900], &x3(), PeelMode::StochasticPhy { residual: true }, &params, 78, &opts(100, 8)).unwrap();
    assert!(residual.rows[0].plr <= frozen.rows[0].plr);
}

#[test]
fn poisson_arrivals_run() {
    let o = CampaignOptions { arrivals: Arrivals::Poisson, ..opts(200, 9) };
    let s = mac_sim::run_campaign(&[0, 50], &x3(), PeelMode::IdealResources, &PhyFailureParams::default(), 78, &o).unwrap();
    assert!(s.rows[0].plr.is_nan());
    assert!(s.rows[1].packets > 0);
    let csv = s.to_csv_string(Some("poisson"));
    assert!(csv.contains("\n0,200,NaN,0,1,9\n"), "{csv}");
}
