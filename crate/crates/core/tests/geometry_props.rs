use nalgebra::{Vector3, Vector6};
use proptest::prelude::*;

use tempovox_core::forecast::{forecast_next, momentum, pose_mse, PoseSequence};
use tempovox_core::geom::{
    backproject, bilinear_sample, project, relative_pose, se3_exp, se3_log, CameraIntrinsics, Field2, Se3Pose, Twist,
};

fn twist(max_rot: f64, max_trans: f64) -> impl Strategy<Value = Twist> {
    (
        prop::array::uniform3(-max_rot..max_rot),
        prop::array::uniform3(-max_trans..max_trans),
    )
        .prop_map(|(w, v)| Vector6::new(w[0], w[1], w[2], v[0], v[1], v[2]))
}

fn pose() -> impl Strategy<Value = Se3Pose> {
    twist(1.7, 20.0).prop_map(|xi| se3_exp(&xi))
}

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(64.0, 60.0, 63.5, 47.5, 128, 96).unwrap()
}

proptest! {
    #[test]
    fn compose_is_associative(a in pose(), b in pose(), c in pose()) {
        let left = a.compose(&b).compose(&c);
        let right = a.compose(&b.compose(&c));
        prop_assert!(left.max_entry_diff(&right) < 1e-9);
    }

    #[test]
    fn identity_is_neutral_and_inverse_cancels(a in pose()) {
        let id = Se3Pose::identity();
        prop_assert!(a.compose(&id).max_entry_diff(&a) < 1e-12);
        prop_assert!(id.compose(&a).max_entry_diff(&a) < 1e-12);
        prop_assert!(a.compose(&a.inverse()).max_entry_diff(&id) < 1e-9);
    }

    #[test]
    fn exp_inverts_log(xi in twist(1.7, 20.0)) {
        let p = se3_exp(&xi);
        let back = se3_exp(&se3_log(&p).unwrap());
        prop_assert!(back.max_entry_diff(&p) < 1e-9);
    }

    #[test]
    fn log_inverts_exp_below_pi(xi in twist(1.7, 20.0)) {
        prop_assume!(xi.fixed_rows::<3>(0).norm() < std::f64::consts::PI - 1e-3);
        let back = se3_log(&se3_exp(&xi)).unwrap();
        prop_assert!((back - xi).amax() < 1e-9);
    }

    #[test]
    fn relative_pose_maps_between_camera_frames(a in pose(), b in pose(), p in prop::array::uniform3(-10.0f64..10.0)) {
        let rel = relative_pose(&a, &b);
        prop_assert!(b.compose(&rel).max_entry_diff(&a) < 1e-9);
        let p = Vector3::from(p);
        let via_world = b.inverse().transform_point(&a.transform_point(&p));
        prop_assert!((rel.transform_point(&p) - via_world).amax() < 1e-9);
    }

    #[test]
    fn project_inverts_backproject(u in 0.0f64..127.0, v in 0.0f64..95.0, d in 0.1f64..80.0) {
        let k = camera();
        let p = project(&backproject(u, v, d, &k).unwrap(), &k).unwrap();
        prop_assert!((p.u - u).abs() < 1e-9 && (p.v - v).abs() < 1e-9 && (p.d - d).abs() < 1e-12);
    }

    #[test]
    fn bilinear_hits_pixels_and_reproduces_affine_fields(
        r in 0usize..12, c in 0usize..16, u in 0.0f64..15.0, v in 0.0f64..11.0,
        a in -3.0f64..3.0, b in -3.0f64..3.0, off in -5.0f64..5.0,
    ) {
        let f = Field2::from_fn(12, 16, 2, |row, col, ch| if ch == 0 { a * col as f64 + b * row as f64 + off } else { off });
        prop_assert_eq!(bilinear_sample(&f, c as f64, r as f64).unwrap(), f.pixel(r, c).to_vec());
        let s = bilinear_sample(&f, u, v).unwrap();
        prop_assert!((s[0] - (a * u + b * v + off)).abs() < 1e-9);
        prop_assert!((s[1] - off).abs() < 1e-12);
        prop_assert!(bilinear_sample(&f, -1e-9, v).is_none());
        prop_assert!(bilinear_sample(&f, u, 11.0 + 1e-9).is_none());
    }

    #[test]
    fn pose_mse_is_a_symmetric_nonnegative_discrepancy(a in pose(), b in pose()) {
        let m = pose_mse(&a, &b);
        prop_assert!(m >= 0.0);
        prop_assert_eq!(m, pose_mse(&b, &a));
        prop_assert_eq!(pose_mse(&a, &a), 0.0);
    }

    #[test]
    fn pose_mse_of_pure_translation_offset(a in pose(), dt in prop::array::uniform3(-5.0f64..5.0)) {
        let t = Vector3::from(dt);
        let shifted = Se3Pose::new(*a.rotation(), a.translation() + t).unwrap();
        prop_assert!((pose_mse(&a, &shifted) - t.norm_squared() / 12.0).abs() < 1e-12);
    }

    #[test]
    fn constant_twist_is_extrapolated_exactly(start in pose(), xi in twist(0.6, 4.0), n in 2usize..7) {
        let step = se3_exp(&xi);
        let mut poses = vec![start];
        for i in 1..=n {
            poses.push(poses[i - 1].compose(&step));
        }
        let truth = poses.pop().unwrap();
        let seq = PoseSequence::evenly_spaced(poses, 0, 5).unwrap();
        for window in 1..=seq.len() - 1 {
            prop_assert!(forecast_next(&seq, window).unwrap().max_entry_diff(&truth) < 1e-9);
        }
    }

    #[test]
    fn momentum_is_invariant_to_world_reanchoring(
        g in pose(),
        steps in prop::collection::vec(twist(0.3, 3.0), 2..6),
    ) {
        let mut poses = vec![Se3Pose::identity()];
        for xi in &steps {
            let last = *poses.last().unwrap();
            poses.push(last.compose(&se3_exp(xi)));
        }
        let moved: Vec<Se3Pose> = poses.iter().map(|p| g.compose(p)).collect();
        let a = PoseSequence::evenly_spaced(poses, 0, 5).unwrap();
        let b = PoseSequence::evenly_spaced(moved, 0, 5).unwrap();
        let w = a.default_window();
        let (ma, mb) = (momentum(&a, w).unwrap(), momentum(&b, w).unwrap());
        prop_assert!((ma.xi - mb.xi).amax() < 1e-9);
        let fa = g.compose(&forecast_next(&a, w).unwrap());
        prop_assert!(fa.max_entry_diff(&forecast_next(&b, w).unwrap()) < 1e-8);
    }
}
