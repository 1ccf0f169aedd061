use std::path::Path;

use tempovox_core::dataio::{
    load_frame_sequence, read_grid, read_intrinsics, read_poses, write_atomic, write_blocks, write_depth, write_frame,
    write_fused, write_grid, write_intrinsics, write_poses, write_ppm, INTRINSICS_FILE, POSES_FILE,
};
use tempovox_core::forecast::{forecast_next, pose_mse, PoseSequence};
use tempovox_core::fusion::{fuse_pipeline, sample_fuse, BlockVisibility, INVALID_LABEL};
use tempovox_core::geom::{CameraIntrinsics, Se3Pose};
use tempovox_core::gradcheck::run_grad_check;
use tempovox_core::metrics::{confusion, coverage, iou_geometry, miou_semantic};
use tempovox_core::scenario::{default_fusion_range, default_intrinsics, run_ablation, FutureMode, Scenario};
use tempovox_core::synth::{build_scene, extract_features, make_trajectory, render_frame, TrajectorySpec};
use tempovox_core::warp::{compose_pseudo_future, FrameBundle};

use crate::settings::Settings;
use crate::CliError;

const GRAD_TOLERANCE: f64 = 1e-4;

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::config(format!("csv: {e}"));
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(r).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| CliError::config(format!("csv: {e}")))
}

/// Writes the CSV atomically and echoes it to stdout.
fn emit_csv(path: Option<&Path>, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let bytes = csv_bytes(header, rows)?;
    if let Some(p) = path {
        write_atomic(p, &bytes)?;
    }
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::Core(tempovox_core::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

fn pose_row(p: &Se3Pose) -> Vec<String> {
    p.to_row_major_3x4().iter().map(|v| v.to_string()).collect()
}

const POSE_COLUMNS: [&str; 12] = [
    "r00", "r01", "r02", "tx", "r10", "r11", "r12", "ty", "r20", "r21", "r22", "tz",
];

fn window_for(s: &Settings, seq: &PoseSequence) -> usize {
    s.window.unwrap_or_else(|| seq.default_window())
}

fn first_pose(path: &Path) -> Result<Se3Pose, CliError> {
    read_poses(path)?
        .into_iter()
        .next()
        .ok_or_else(|| CliError::config(format!("{}: no pose lines", path.display())))
}

pub fn synth(s: &Settings) -> Result<(), CliError> {
    let out = &s.out_dir;
    ensure_dir(out)?;
    let world = build_scene(&s.scene())?;
    let traj = make_trajectory(&TrajectorySpec {
        kind: s.trajectory,
        speed: s.speed,
        turn_rate: s.turn_rate,
        frames: s.raw_frames(),
        frame_interval: 1,
    })?;
    let k = default_intrinsics();
    write_grid(&out.join("world.vxg"), &world)?;
    write_intrinsics(&out.join(INTRINSICS_FILE), &k)?;
    write_poses(&out.join(POSES_FILE), traj.poses())?;
    let mut rows = Vec::new();
    for (pose, &idx) in traj.poses().iter().zip(traj.frame_indices()) {
        let frame = render_frame(&world, pose, &k, idx);
        write_frame(out, &frame)?;
        rows.push(vec![idx.to_string(), frame.valid_depth_count().to_string()]);
    }
    emit_csv(
        Some(&out.join("frames.csv")),
        &["frame_index", "valid_depth_pixels"],
        &rows,
    )
}

/// Every `interval`-th pose of a KITTI pose file, as a sequence.
fn sampled_sequence(poses: &[Se3Pose], interval: i64) -> Result<PoseSequence, CliError> {
    let picked: Vec<Se3Pose> = poses.iter().step_by(interval as usize).copied().collect();
    Ok(PoseSequence::evenly_spaced(picked, 0, interval)?)
}

pub fn forecast(s: &Settings, poses: &Path, gt: Option<&Path>, holdout: bool) -> Result<(), CliError> {
    let mut seq = sampled_sequence(&read_poses(poses)?, s.interval)?;
    let mut truth = gt.map(first_pose).transpose()?;
    if holdout {
        if truth.is_some() {
            return Err(CliError::config("--holdout and --gt are mutually exclusive"));
        }
        truth = seq.last().copied();
        seq = seq.prefix(seq.len().saturating_sub(1));
    }
    let window = window_for(s, &seq);
    let pred = forecast_next(&seq, window)?;
    let next_index = seq.frame_indices().last().copied().unwrap_or(0) + s.interval;
    ensure_dir(&s.out_dir)?;
    write_poses(&s.out_dir.join("forecast.txt"), &[pred])?;
    let mut header = vec!["frame_index", "window", "pose_mse"];
    header.extend(POSE_COLUMNS);
    let mut row = vec![
        next_index.to_string(),
        window.to_string(),
        truth.map(|t| pose_mse(&pred, &t).to_string()).unwrap_or_default(),
    ];
    row.extend(pose_row(&pred));
    emit_csv(Some(&s.out_dir.join("forecast.csv")), &header, &[row])
}

struct Sequence {
    k: CameraIntrinsics,
    /// Past frames then the current one.
    history: Vec<FrameBundle>,
    next: Option<FrameBundle>,
}

fn load_sequence(s: &Settings, dir: &Path) -> Result<Sequence, CliError> {
    let k = read_intrinsics(&dir.join(INTRINSICS_FILE))?;
    let mut frames = load_frame_sequence(dir, s.interval as usize)?;
    let needed = s.past + 1;
    if frames.len() < needed {
        return Err(CliError::config(format!(
            "{}: {} frames at interval {}, {} past frames need {needed}",
            dir.display(),
            frames.len(),
            s.interval,
            s.past
        )));
    }
    let rest = frames.split_off(needed);
    Ok(Sequence {
        k,
        history: frames,
        next: rest.into_iter().next(),
    })
}

fn history_poses(frames: &[FrameBundle], interval: i64) -> Result<PoseSequence, CliError> {
    Ok(PoseSequence::new(
        frames.iter().map(|f| f.pose).collect(),
        frames.iter().map(|f| f.frame_index).collect(),
        interval,
    )?)
}

fn forecast_from(s: &Settings, frames: &[FrameBundle]) -> Result<Se3Pose, CliError> {
    let seq = history_poses(frames, s.interval)?;
    Ok(forecast_next(&seq, window_for(s, &seq))?)
}

pub fn warp(s: &Settings, input: &Path, target: Option<&Path>) -> Result<(), CliError> {
    let seq = load_sequence(s, input)?;
    let pose = match target {
        Some(p) => first_pose(p)?,
        None => forecast_from(s, &seq.history)?,
    };
    let pf = compose_pseudo_future(&seq.history, &pose, &seq.k, s.interval, s.refiner.refiner())?;
    let out = &s.out_dir;
    ensure_dir(out)?;
    write_ppm(&out.join("warp.ppm"), &pf.warp.image)?;
    write_depth(&out.join("warp.dpt"), &pf.warp.depth)?;
    write_ppm(&out.join("pseudo_future.ppm"), &pf.frame.image)?;
    write_depth(&out.join("pseudo_future.dpt"), &pf.frame.depth)?;
    write_poses(&out.join("target_pose.txt"), &[pose])?;
    let pixels = seq.k.width * seq.k.height;
    let hits = pf.warp.hit_count();
    let row = vec![
        pf.frame.frame_index.to_string(),
        pixels.to_string(),
        hits.to_string(),
        (pixels - hits).to_string(),
        ((pixels - hits) as f64 / pixels as f64).to_string(),
        pf.covered_count().to_string(),
    ];
    emit_csv(
        Some(&out.join("warp_coverage.csv")),
        &[
            "frame_index",
            "pixels",
            "hits",
            "holes",
            "hole_fraction",
            "refined_valid",
        ],
        &[row],
    )
}

/// Frame sets reported in coverage tables: current, current+past and, when a
/// future frame follows the current one, current+past+future.
fn frame_sets(current: usize, with_future: bool) -> Vec<(&'static str, Vec<usize>)> {
    let mut sets = vec![("current", vec![current]), ("current+past", (0..=current).collect())];
    if with_future {
        sets.push(("current+past+future", (0..=current + 1).collect()));
    }
    sets
}

fn coverage_rows(bv: &BlockVisibility, current: usize, with_future: bool) -> Vec<Vec<String>> {
    frame_sets(current, with_future)
        .into_iter()
        .map(|(name, idx)| {
            let c = coverage(&bv.select_frames(&idx));
            vec![name.to_string(), idx.len().to_string(), c.union.to_string()]
        })
        .collect()
}

pub fn fuse(s: &Settings, input: &Path) -> Result<(), CliError> {
    let seq = load_sequence(s, input)?;
    let mut frames = seq.history.clone();
    match s.future {
        FutureMode::None => {}
        FutureMode::Pseudo => {
            let pose = forecast_from(s, &seq.history)?;
            frames.push(compose_pseudo_future(&seq.history, &pose, &seq.k, s.interval, s.refiner.refiner())?.frame);
        }
        FutureMode::GroundTruth => frames.push(
            seq.next
                .clone()
                .ok_or_else(|| CliError::config("--future gt needs the frame after the current one in the sequence"))?,
        ),
    }
    let range = default_fusion_range(s.voxel_size)?;
    let current = s.past;
    let out = fuse_pipeline(&frames, current, &range, &seq.k, s.theta_d, extract_features)?;
    ensure_dir(&s.out_dir)?;
    write_fused(&s.out_dir.join("fused.fvl"), &out.fused)?;
    write_blocks(&s.out_dir.join("blocks.bvs"), &out.blocks)?;
    let rows = coverage_rows(&out.blocks, current, s.future != FutureMode::None);
    emit_csv(
        Some(&s.out_dir.join("coverage.csv")),
        &["frame_set", "frames", "visible_blocks"],
        &rows,
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn eval(s: &Settings, pred: &Path, gt: &Path, output: Option<&Path>) -> Result<(), CliError> {
    let p = read_grid(pred)?;
    let g = read_grid(gt)?;
    let observed = p
        .labels()
        .iter()
        .chain(g.labels())
        .filter(|l| **l != INVALID_LABEL)
        .max()
        .map_or(0, |m| *m as usize + 1);
    let classes = s.classes.max(observed);
    let cm = confusion(&p, &g, classes)?;
    let iou = iou_geometry(&cm);
    let miou = miou_semantic(&cm);
    let mut rows = vec![
        vec!["iou".to_string(), iou.value.to_string(), iou.degenerate.to_string()],
        vec!["miou".to_string(), miou.value.to_string(), miou.degenerate.to_string()],
    ];
    for (c, v) in cm.per_class_iou().into_iter().enumerate() {
        rows.push(vec![format!("iou_class_{c}"), fmt_opt(v), v.is_none().to_string()]);
    }
    emit_csv(output, &["metric", "value", "degenerate"], &rows)
}

pub fn grad_check(s: &Settings, volumes: usize, output: Option<&Path>) -> Result<(), CliError> {
    let report = run_grad_check(s.seed, volumes)?;
    let rows: Vec<Vec<String>> = report
        .iter()
        .map(|r| {
            vec![
                r.loss.to_string(),
                r.volumes.to_string(),
                r.max_relative_error.to_string(),
                GRAD_TOLERANCE.to_string(),
                (r.max_relative_error <= GRAD_TOLERANCE).to_string(),
            ]
        })
        .collect();
    emit_csv(
        output,
        &["loss", "volumes", "max_relative_error", "tolerance", "pass"],
        &rows,
    )?;
    if let Some(bad) = report.iter().find(|r| r.max_relative_error > GRAD_TOLERANCE) {
        return Err(CliError::CheckFailed(format!(
            "{} gradient off by {} relative",
            bad.loss, bad.max_relative_error
        )));
    }
    Ok(())
}

pub fn demo(s: &Settings) -> Result<(), CliError> {
    let scenario = Scenario::build(s.scenario()?)?;
    let report = run_ablation(&scenario)?;
    let out = &s.out_dir;
    let frames_dir = out.join("frames");
    ensure_dir(&frames_dir)?;
    let k = &scenario.config.intrinsics;

    write_grid(&out.join("world.vxg"), &scenario.world)?;
    write_grid(&out.join("ground_truth.vxg"), &report.ground_truth)?;
    write_grid(&out.join("oracle_completion.vxg"), &report.completion)?;
    write_intrinsics(&out.join(INTRINSICS_FILE), k)?;
    write_poses(&out.join("trajectory.txt"), scenario.trajectory.poses())?;
    for f in &scenario.frames {
        write_frame(&frames_dir, f)?;
    }
    write_poses(&out.join("forecast.txt"), &[report.forecast_pose])?;
    let mut all: Vec<&FrameBundle> = scenario.frames.iter().collect();
    if let Some(future) = &report.future {
        write_ppm(&out.join("future.ppm"), &future.image)?;
        write_depth(&out.join("future.dpt"), &future.depth)?;
        all.push(future);
    }
    let maps: Vec<_> = all.iter().map(|f| extract_features(&f.image)).collect();
    let fused = sample_fuse(&report.blocks, &maps, k.width, k.height)?;
    write_fused(&out.join("fused.fvl"), &fused)?;
    write_blocks(&out.join("blocks.bvs"), &report.blocks)?;

    let forecast_row = vec![
        report.forecast_mse.to_string(),
        report.warp_hits.map(|h| h.to_string()).unwrap_or_default(),
    ];
    let bytes = csv_bytes(&["pose_mse", "warp_hits"], &[forecast_row])?;
    write_atomic(&out.join("forecast.csv"), &bytes)?;

    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.frame_set.clone(),
                r.frames.to_string(),
                r.visible_blocks.to_string(),
                r.iou.to_string(),
                r.miou.to_string(),
            ]
        })
        .collect();
    emit_csv(
        Some(&out.join("coverage.csv")),
        &["frame_set", "frames", "visible_blocks", "oracle_iou", "oracle_miou"],
        &rows,
    )
}
