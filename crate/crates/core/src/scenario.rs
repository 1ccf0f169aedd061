//! End-to-end synthetic runs: render a trajectory through a seeded scene,
//! forecast the next pose, synthesize the pseudo-future frame, measure block
//! coverage for growing frame sets and score oracle-assisted completions.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::forecast::{forecast_next, pose_mse, PoseSequence};
use crate::fusion::{block_visibility, BlockVisibility, FrameBlocks, SceneGrid, SceneRange, DEFAULT_THETA_D};
use crate::geom::{CameraIntrinsics, Se3Pose};
use crate::metrics::{confusion, coverage, iou_geometry, majority_complete, miou_semantic};
use crate::synth::{build_scene, make_trajectory, render_frame, Layout, SceneSpec, TrajectoryKind, TrajectorySpec};
use crate::warp::{compose_pseudo_future, FrameBundle, PseudoFuture, RefinerKind};

pub const DEFAULT_PAST_FRAMES: usize = 4;

/// Meters per frame of the standard run: about 29 km/h at 10 Hz, and each
/// 5-frame step spans a whole number of 0.4 m voxels.
pub const STANDARD_SPEED: f64 = 0.8;

/// Which frame, if any, plays the future role.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FutureMode {
    None,
    /// Warped from past and current frames at the forecast pose.
    Pseudo,
    /// Rendered directly at the true next pose.
    GroundTruth,
}

impl std::str::FromStr for FutureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FutureMode::None),
            "pseudo" => Ok(FutureMode::Pseudo),
            "gt" => Ok(FutureMode::GroundTruth),
            other => Err(Error::domain(format!("unknown future mode '{other}'"))),
        }
    }
}

/// Desk-scale camera: 128×96 pixels with a 90° horizontal field of view.
pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::from_fov(128, 96, std::f64::consts::FRAC_PI_2).expect("valid default camera")
}

/// KITTI-shaped range anchored at the current camera, at a desk-scale voxel size.
pub fn default_fusion_range(voxel_size: f64) -> Result<SceneRange> {
    SceneRange::new(
        Vector3::new(-25.6, 0.0, -2.0),
        Vector3::new(51.2, 51.2, 6.4),
        voxel_size,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    /// Past frames before the current one.
    pub past: usize,
    pub intrinsics: CameraIntrinsics,
    pub fusion_range: SceneRange,
    pub theta_d: f64,
    pub refiner: RefinerKind,
    pub future: FutureMode,
    /// Momentum window; `None` uses the sequence default.
    pub window: Option<usize>,
}

impl ScenarioConfig {
    /// The standard corridor run for `seed`: 4 past frames and the current one
    /// at interval 5 on a straight trajectory at [`STANDARD_SPEED`], with the
    /// pseudo-future built at the forecast pose.
    pub fn standard(seed: u64) -> Self {
        let scene = SceneSpec {
            seed,
            layout: Layout::Corridor,
            ..SceneSpec::default()
        };
        Self {
            scene,
            trajectory: TrajectorySpec {
                kind: TrajectoryKind::Straight,
                speed: STANDARD_SPEED,
                turn_rate: 0.0,
                frames: DEFAULT_PAST_FRAMES + 2,
                frame_interval: crate::synth::DEFAULT_FRAME_INTERVAL,
            },
            past: DEFAULT_PAST_FRAMES,
            intrinsics: default_intrinsics(),
            fusion_range: default_fusion_range(scene.voxel_size).expect("valid default range"),
            theta_d: DEFAULT_THETA_D,
            refiner: RefinerKind::Identity,
            future: FutureMode::Pseudo,
            window: None,
        }
    }
}

/// Rendered inputs of one run. The trajectory holds the past, current and
/// true next poses; `frames` holds past and current only.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub world: SceneGrid,
    pub trajectory: PoseSequence,
    pub frames: Vec<FrameBundle>,
}

impl Scenario {
    pub fn build(config: ScenarioConfig) -> Result<Self> {
        let needed = config.past + 2;
        if config.trajectory.frames < needed {
            return Err(Error::domain(format!(
                "trajectory has {} frames, {} past frames need {needed}",
                config.trajectory.frames, config.past
            )));
        }
        let world = build_scene(&config.scene)?;
        let trajectory = make_trajectory(&config.trajectory)?.prefix(needed);
        let frames = trajectory.poses()[..needed - 1]
            .iter()
            .zip(trajectory.frame_indices())
            .map(|(p, &i)| render_frame(&world, p, &config.intrinsics, i))
            .collect();
        Ok(Self {
            config,
            world,
            trajectory,
            frames,
        })
    }

    /// Poses of the past and current frames.
    pub fn history(&self) -> PoseSequence {
        self.trajectory.prefix(self.frames.len())
    }

    pub fn current(&self) -> &FrameBundle {
        self.frames.last().expect("scenario has a current frame")
    }

    pub fn true_next_pose(&self) -> Se3Pose {
        *self.trajectory.last().expect("scenario has a next pose")
    }

    pub fn forecast_pose(&self) -> Result<Se3Pose> {
        let history = self.history();
        let window = self.config.window.unwrap_or_else(|| history.default_window());
        forecast_next(&history, window)
    }

    pub fn pseudo_future(&self, pose: &Se3Pose) -> Result<PseudoFuture> {
        compose_pseudo_future(
            &self.frames,
            pose,
            &self.config.intrinsics,
            self.trajectory.frame_interval(),
            self.config.refiner.refiner(),
        )
    }

    /// Direct render at the true next pose.
    pub fn true_future(&self) -> FrameBundle {
        let next = self.trajectory.frame_indices().last().copied().unwrap_or_default();
        render_frame(&self.world, &self.true_next_pose(), &self.config.intrinsics, next)
    }

    /// Ground-truth labels over the fusion range anchored at the current camera.
    pub fn ground_truth(&self) -> SceneGrid {
        self.world.resample(&self.config.fusion_range, &self.current().pose)
    }

    pub fn frame_blocks(&self, frame: &FrameBundle) -> Result<FrameBlocks> {
        block_visibility(
            &self.config.fusion_range,
            frame,
            &self.current().pose,
            &self.config.intrinsics,
            self.config.theta_d,
        )
    }
}

/// One row of the coverage table.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageRow {
    pub frame_set: String,
    pub frames: usize,
    pub visible_blocks: usize,
    pub iou: f64,
    pub miou: f64,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub rows: Vec<CoverageRow>,
    pub forecast_pose: Se3Pose,
    pub forecast_mse: f64,
    /// Pixels hit by forward splatting before refinement, when a pseudo-future was built.
    pub warp_hits: Option<usize>,
    pub future: Option<FrameBundle>,
    pub blocks: BlockVisibility,
    pub ground_truth: SceneGrid,
    pub completion: SceneGrid,
}

impl AblationReport {
    pub fn row(&self, frame_set: &str) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.frame_set == frame_set)
    }
}

/// Coverage and completion scores for current-only, current+past and, unless
/// the future mode is `None`, current+past+future.
pub fn run_ablation(scenario: &Scenario) -> Result<AblationReport> {
    let cfg = &scenario.config;
    let forecast_pose = scenario.forecast_pose()?;
    let forecast_mse = pose_mse(&forecast_pose, &scenario.true_next_pose());
    let (future, warp_hits) = match cfg.future {
        FutureMode::None => (None, None),
        FutureMode::Pseudo => {
            let pf = scenario.pseudo_future(&forecast_pose)?;
            let hits = pf.warp.hit_count();
            (Some(pf.frame), Some(hits))
        }
        FutureMode::GroundTruth => (Some(scenario.true_future()), None),
    };
    let mut frames: Vec<&FrameBundle> = scenario.frames.iter().collect();
    frames.extend(future.as_ref());
    let per_frame = frames
        .iter()
        .map(|f| scenario.frame_blocks(f))
        .collect::<Result<Vec<_>>>()?;
    let blocks = BlockVisibility {
        block_dims: cfg.fusion_range.block_dims()?,
        frames: per_frame,
    };
    let gt = scenario.ground_truth();
    let classes = cfg.scene.classes;
    let current = scenario.frames.len() - 1;
    let mut sets: Vec<(&str, Vec<usize>)> = vec![("current", vec![current]), ("current+past", (0..=current).collect())];
    if future.is_some() {
        sets.push(("current+past+future", (0..=current + 1).collect()));
    }
    let mut rows = Vec::with_capacity(sets.len());
    let mut completion = SceneGrid::empty(*gt.range());
    for (name, idx) in sets {
        let bv = blocks.select_frames(&idx);
        completion = majority_complete(&bv, &gt)?;
        let cm = confusion(&completion, &gt, classes)?;
        rows.push(CoverageRow {
            frame_set: name.to_string(),
            frames: idx.len(),
            visible_blocks: coverage(&bv).union,
            iou: iou_geometry(&cm).value,
            miou: miou_semantic(&cm).value,
        });
    }
    Ok(AblationReport {
        rows,
        forecast_pose,
        forecast_mse,
        warp_hits,
        future,
        blocks,
        ground_truth: gt,
        completion,
    })
}
