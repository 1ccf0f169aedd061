use std::sync::OnceLock;

use proptest::prelude::*;

use tempovox_core::geom::{se3_exp, Twist};
use tempovox_core::scenario::{Scenario, ScenarioConfig};
use tempovox_core::warp::{
    compose_pseudo_future, forward_splat, forward_splat_sequential, FrameBundle, IdentityRefiner,
};

fn scenario() -> &'static Scenario {
    static S: OnceLock<Scenario> = OnceLock::new();
    S.get_or_init(|| Scenario::build(ScenarioConfig::standard(4)).unwrap())
}

#[test]
fn identity_warp_reproduces_a_rendered_frame() {
    let s = scenario();
    let k = s.config.intrinsics;
    let src = s.current();
    let w = forward_splat(std::slice::from_ref(src), &src.pose, src.frame_index, &k).unwrap();
    for r in 0..k.height {
        for c in 0..k.width {
            let d = src.depth.get(r, c, 0);
            assert_eq!(w.hit_mask[r * k.width + c], d > 0.0);
            if d > 0.0 {
                assert_eq!(w.depth.get(r, c, 0), d);
                assert_eq!(w.image.pixel(r, c), src.image.pixel(r, c));
            }
        }
    }
}

#[test]
fn history_covers_more_of_the_future_than_the_current_frame() {
    for seed in [0, 7, 13] {
        let s = Scenario::build(ScenarioConfig::standard(seed)).unwrap();
        let k = s.config.intrinsics;
        let pose = s.forecast_pose().unwrap();
        let all = compose_pseudo_future(&s.frames, &pose, &k, 5, &IdentityRefiner).unwrap();
        let alone = compose_pseudo_future(std::slice::from_ref(s.current()), &pose, &k, 5, &IdentityRefiner).unwrap();
        assert!(
            all.warp.hit_count() > alone.warp.hit_count(),
            "seed {seed}: {} vs {}",
            all.warp.hit_count(),
            alone.warp.hit_count()
        );
    }
}

fn perturbation() -> impl Strategy<Value = Twist> {
    (
        prop::array::uniform3(-0.05f64..0.05),
        prop::array::uniform3(-1.0f64..1.0),
    )
        .prop_map(|(w, v)| Twist::new(w[0], w[1], w[2], v[0], v[1], v[2] + 2.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn parallel_splat_equals_sequential(xi in perturbation(), mask in 1u8..32) {
        let s = scenario();
        let k = s.config.intrinsics;
        let sources: Vec<FrameBundle> = s.frames.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, f)| f.clone()).collect();
        let dst = s.current().pose.compose(&se3_exp(&xi));
        let par = forward_splat(&sources, &dst, 25, &k).unwrap();
        let seq = forward_splat_sequential(&sources, &dst, 25, &k).unwrap();
        prop_assert_eq!(par, seq);
    }

    #[test]
    fn adding_a_source_never_loses_coverage(xi in perturbation(), mask in 1u8..32, extra in 0usize..5) {
        let s = scenario();
        let k = s.config.intrinsics;
        let dst = s.current().pose.compose(&se3_exp(&xi));
        let pick = |m: u8| -> Vec<FrameBundle> {
            s.frames.iter().enumerate().filter(|(i, _)| m & (1 << i) != 0).map(|(_, f)| f.clone()).collect()
        };
        let base = forward_splat(&pick(mask), &dst, 25, &k).unwrap();
        let more = forward_splat(&pick(mask | (1 << extra)), &dst, 25, &k).unwrap();
        prop_assert!(more.hit_count() >= base.hit_count());
        for (a, b) in base.hit_mask.iter().zip(&more.hit_mask) {
            prop_assert!(!a || *b);
        }
    }

    #[test]
    fn misses_are_blank_and_hits_have_depth(xi in perturbation()) {
        let s = scenario();
        let k = s.config.intrinsics;
        let dst = s.current().pose.compose(&se3_exp(&xi));
        let w = forward_splat(&s.frames, &dst, 25, &k).unwrap();
        for r in 0..k.height {
            for c in 0..k.width {
                let i = r * k.width + c;
                if w.hit_mask[i] {
                    prop_assert!(w.depth.get(r, c, 0) > 0.0);
                    prop_assert!(w.source_index[i] >= 0 && (w.source_index[i] as usize) < s.frames.len());
                } else {
                    prop_assert_eq!(w.depth.get(r, c, 0), 0.0);
                    prop_assert!(w.image.pixel(r, c).iter().all(|v| *v == 0.0));
                    prop_assert_eq!(w.source_index[i], -1);
                }
            }
        }
    }
}
