use std::path::Path;

use nalgebra::Vector3;
use proptest::prelude::*;

use tempovox_core::dataio::{
    decode_blocks, decode_depth, decode_fused, decode_grid, decode_intrinsics, decode_poses, decode_ppm, encode_blocks,
    encode_depth, encode_fused, encode_grid, encode_intrinsics, encode_poses, encode_ppm, load_frame_sequence,
    read_grid, write_frame, write_poses, POSES_FILE,
};
use tempovox_core::fusion::{BlockVisibility, FrameBlocks, FusedVolume, SceneGrid, SceneRange};
use tempovox_core::geom::{se3_exp, CameraIntrinsics, Field2, PixelDepth, Se3Pose, Twist};
use tempovox_core::warp::FrameBundle;
use tempovox_core::Error;

fn mem() -> &'static Path {
    Path::new("mem")
}

fn f32v(lo: f32, hi: f32) -> impl Strategy<Value = f64> {
    (lo..hi).prop_map(f64::from)
}

fn pose() -> impl Strategy<Value = Se3Pose> {
    prop::array::uniform6(-3.0f64..3.0).prop_map(|x| se3_exp(&Twist::from_row_slice(&x)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grid_round_trips(dims in prop::array::uniform3(1usize..6), vs in f32v(0.05, 1.0), o in prop::array::uniform3(f32v(-30.0, 30.0)), seed in any::<u8>()) {
        let range = SceneRange::from_dims(Vector3::from(o), dims, vs).unwrap();
        let n = range.voxel_count();
        let labels = (0..n).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let g = SceneGrid::from_labels(range, labels).unwrap();
        prop_assert_eq!(decode_grid(mem(), &encode_grid(&g)).unwrap(), g);
    }

    #[test]
    fn depth_and_image_round_trip(h in 1usize..12, w in 1usize..12, seed in any::<u32>()) {
        let depth = Field2::from_fn(h, w, 1, |r, c, _| if (r * w + c + seed as usize) % 4 == 0 { 0.0 } else { f64::from((seed % 1000) as f32 * 0.01 + (r * w + c) as f32 * 0.25) });
        prop_assert_eq!(decode_depth(mem(), &encode_depth(&depth).unwrap()).unwrap(), depth);
        let image = Field2::from_fn(h, w, 3, |r, c, ch| ((r * 7 + c * 3 + ch + seed as usize) % 256) as f64 / 255.0);
        prop_assert_eq!(decode_ppm(mem(), &encode_ppm(&image).unwrap()).unwrap(), image);
    }

    #[test]
    fn poses_and_intrinsics_round_trip(poses in prop::collection::vec(pose(), 0..8), fx in 10.0f64..500.0, w in 2usize..400, h in 2usize..400) {
        prop_assert_eq!(decode_poses(mem(), &encode_poses(&poses)).unwrap(), poses);
        let k = CameraIntrinsics::new(fx, fx * 0.9, w as f64 / 2.0 - 0.5, h as f64 / 2.0 - 0.5, w, h).unwrap();
        prop_assert_eq!(decode_intrinsics(mem(), &encode_intrinsics(&k)).unwrap(), k);
    }

    #[test]
    fn fused_and_blocks_round_trip(bd in prop::array::uniform3(1usize..4), frames in 1usize..4, channels in 1usize..4, seed in any::<u16>()) {
        let nb: usize = bd.iter().product();
        let features = (0..nb * frames * channels).map(|i| f64::from(i as f32 * 0.5 - seed as f32)).collect();
        let fused = FusedVolume { block_dims: bd, frames, channels, features };
        prop_assert_eq!(decode_fused(mem(), &encode_fused(&fused)).unwrap(), fused);
        let bv = BlockVisibility {
            block_dims: bd,
            frames: (0..frames)
                .map(|f| FrameBlocks {
                    projections: (0..nb)
                        .map(|b| ((b + f + seed as usize) % 3 != 0).then(|| PixelDepth { u: b as f64 * 1.5, v: f as f64 - 2.25, d: 0.125 * (b + 1) as f64 }))
                        .collect(),
                })
                .collect(),
        };
        prop_assert_eq!(decode_blocks(mem(), &encode_blocks(&bv)).unwrap(), bv);
    }

    #[test]
    fn truncated_grid_is_rejected(cut in 0usize..56) {
        let range = SceneRange::from_dims(Vector3::zeros(), [2, 3, 4], 0.5).unwrap();
        let bytes = encode_grid(&SceneGrid::empty(range));
        let truncated = matches!(decode_grid(mem(), &bytes[..cut]), Err(Error::Binary { .. }));
        prop_assert!(truncated);
    }
}

fn write_sequence(dir: &Path, n: usize) {
    let poses: Vec<Se3Pose> = (0..n).map(|i| Se3Pose::from_translation(0.0, 0.0, i as f64)).collect();
    for (i, p) in poses.iter().enumerate() {
        let frame = FrameBundle::new(
            Field2::filled(4, 6, 3, 0.2),
            Field2::filled(4, 6, 1, 1.0 + i as f64),
            *p,
            i as i64,
        )
        .unwrap();
        write_frame(dir, &frame).unwrap();
    }
    write_poses(&dir.join(POSES_FILE), &poses).unwrap();
}

#[test]
fn frame_sequence_is_sampled_at_the_interval() {
    let dir = tempfile::tempdir().unwrap();
    write_sequence(dir.path(), 21);
    let every5: Vec<i64> = load_frame_sequence(dir.path(), 5)
        .unwrap()
        .iter()
        .map(|f| f.frame_index)
        .collect();
    assert_eq!(every5, vec![0, 5, 10, 15, 20]);
    let all = load_frame_sequence(dir.path(), 1).unwrap();
    assert_eq!(all.len(), 21);
    assert_eq!(all[7].depth.get(0, 0, 0), 8.0);
    assert_eq!(all[7].pose.translation().z, 7.0);
}

#[test]
fn missing_frame_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    write_sequence(dir.path(), 11);
    std::fs::remove_file(dir.path().join("000010.dpt")).unwrap();
    match load_frame_sequence(dir.path(), 5) {
        Err(e @ Error::Io { .. }) => assert!(e.to_string().contains("000010.dpt"), "{e}"),
        other => panic!("expected an io error, got {other:?}"),
    }
    assert!(matches!(
        read_grid(&dir.path().join("absent.vxg")),
        Err(Error::Io { .. })
    ));
}
