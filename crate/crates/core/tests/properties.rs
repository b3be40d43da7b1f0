use std::sync::Arc;

use panoabr::env::{EnvConfig, Predictor, StreamingEnv, TrajectoryFixture};
use panoabr::madrl::{discounted_returns, gae};
use panoabr::media::{NetworkTrace, VideoManifest, DEFAULT_LADDER};
use panoabr::qoe::{qoe_total, rebuffer_time, spatial_variation, viewport_quality, QoEInputs, QoEWeights};
use panoabr::region::{partition_points, Fov, TileGrid};
use panoabr::sphere::{great_circle_distance, Vec3};
use proptest::prelude::*;

fn psi_q(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max).prop_flat_map(|n| {
        (
            prop::collection::vec(0.01f64..1.0, n).prop_map(|p| {
                let s: f64 = p.iter().sum();
                p.into_iter().map(|x| x / s).collect()
            }),
            prop::collection::vec(0.0f64..40.0, n),
        )
    })
}

proptest! {
    #[test]
    fn spatial_variation_is_permutation_invariant((psi, q) in psi_q(6), rot in 0usize..6) {
        let n = psi.len();
        let k = rot % n;
        let psi2: Vec<f64> = (0..n).map(|i| psi[(i + k) % n]).collect();
        let q2: Vec<f64> = (0..n).map(|i| q[(i + k) % n]).collect();
        let a = spatial_variation(&psi, &q, false).unwrap();
        let b = spatial_variation(&psi2, &q2, false).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn quality_is_monotone((psi, q) in psi_q(6), idx in 0usize..6, bump in 0.0f64..10.0) {
        let mut up = q.clone();
        up[idx % q.len()] += bump;
        prop_assert!(viewport_quality(&psi, &up).unwrap() >= viewport_quality(&psi, &q).unwrap() - 1e-12);
    }

    #[test]
    fn rebuffer_non_increasing_in_buffer(dl in 0.0f64..10.0, b in 0.0f64..10.0, extra in 0.0f64..10.0) {
        prop_assert!(rebuffer_time(dl, b + extra, 1.0) <= rebuffer_time(dl, b, 1.0));
        prop_assert!(rebuffer_time(dl, b, 1.0) >= 0.0);
    }

    #[test]
    fn total_is_linear_in_weights((psi, q) in psi_q(4), a in 0.0f64..3.0, b in 0.0f64..3.0, reb in 0.0f64..2.0) {
        let inputs = QoEInputs { probabilities: psi.clone(), qualities: q.clone(), previous: Some(q.iter().map(|x| x * 0.5).collect()), rebuffer_s: reb };
        let total = |w: QoEWeights| qoe_total(&w, &inputs, false).unwrap().total;
        let wa = QoEWeights::new(1.0, a, 1.0, 1.0).unwrap();
        let wb = QoEWeights::new(1.0, b, 1.0, 1.0).unwrap();
        let wab = QoEWeights::new(2.0, a + b, 2.0, 2.0).unwrap();
        prop_assert!((total(wa) + total(wb) - total(wab)).abs() < 1e-9);
    }

    #[test]
    fn gae_lambda_one_is_return_minus_value(
        rv in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20),
        boot in -5.0f64..5.0,
        gamma in 0.0f64..1.0,
    ) {
        let (r, v): (Vec<f64>, Vec<f64>) = rv.into_iter().unzip();
        let adv = gae(&r, &v, boot, gamma, 1.0);
        let ret = discounted_returns(&r, boot, gamma);
        for t in 0..r.len() {
            prop_assert!((adv[t] - (ret[t] - v[t])).abs() < 1e-9);
        }
    }

    #[test]
    fn partition_covers_every_tile_once(
        pts in prop::collection::vec((-89.0f64..89.0, -180.0f64..180.0), 1..6),
        h in 30.0f64..180.0,
        v in 30.0f64..180.0,
    ) {
        let grid = TileGrid::new(6, 12);
        let points: Vec<Vec3> = pts.iter().map(|&(la, lo)| Vec3::from_lat_lon_deg(la, lo)).collect();
        let n = points.len();
        let probs: Vec<f64> = (0..n).map(|i| (n - i) as f64 / (n * (n + 1) / 2) as f64).collect();
        let a = partition_points(&points, &probs, grid, Fov::new(h, v).unwrap(), 0).unwrap();
        prop_assert!(a.validate(grid.num_tiles()).is_ok());
    }

    #[test]
    fn distance_is_symmetric_and_bounded(a in (-90.0f64..90.0, -180.0f64..180.0), b in (-90.0f64..90.0, -180.0f64..180.0)) {
        let (p, q) = (Vec3::from_lat_lon_deg(a.0, a.1), Vec3::from_lat_lon_deg(b.0, b.1));
        let d = great_circle_distance(p, q).unwrap();
        prop_assert!((d - great_circle_distance(q, p).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&d));
        prop_assert!(great_circle_distance(p, p).unwrap() == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn buffer_and_clock_stay_consistent(
        seed in 0u64..1000,
        mbps in 0.5f64..60.0,
        actions in prop::collection::vec(prop::collection::vec(0usize..6, 3), 20),
    ) {
        let manifest = VideoManifest::generate(6, 12, 20, 1.0, &DEFAULT_LADDER, seed).unwrap();
        let trace = NetworkTrace::synthetic(30, mbps, seed).unwrap();
        let fixture = TrajectoryFixture::generate(20, 3, seed).unwrap();
        let cfg = EnvConfig::new(Arc::new(manifest), Arc::new(trace), Predictor::OracleLog(Arc::new(fixture)));
        let cap = cfg.max_buffer_s;
        let mut env = StreamingEnv::new(cfg).unwrap();
        let mut clock = 0.0;
        for a in &actions {
            let out = env.step(a).unwrap();
            prop_assert!(env.buffer_s() >= 0.0 && env.buffer_s() <= cap);
            prop_assert!(out.breakdown.rebuffer_s >= 0.0);
            let rec = env.log().records.last().unwrap().clone();
            prop_assert!((env.clock_s() - (clock + rec.download_s + rec.qoe.rebuffer_s)).abs() < 1e-9);
            clock = env.clock_s();
            let local: f64 = out.local_rewards.iter().sum();
            prop_assert!((local - out.reward).abs() < 1e-9);
        }
        prop_assert!(env.is_done());
    }
}
