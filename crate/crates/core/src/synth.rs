//! Synthetic ground truth: seeded voxel scenes, camera trajectories, exact
//! planar depth by voxel ray casting, palette images and a deterministic
//! stride-4 feature extractor.
//!
//! World coordinates follow the KITTI odometry convention: the first camera
//! of a trajectory sits at the identity, x right, y down, z forward. Scene
//! grids use the `(lateral, forward, up)` axes of [`crate::fusion`].

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forecast::PoseSequence;
use crate::fusion::{camera_to_grid_axes, SceneGrid, SceneRange, EMPTY_LABEL, INVALID_LABEL};
use crate::geom::{se3_exp, CameraIntrinsics, Field2, Se3Pose, Twist};
use crate::warp::{FrameBundle, DEFAULT_MAX_DEPTH};

pub const GROUND_LABEL: u8 = 1;
pub const WALL_LABEL: u8 = 2;

/// Camera height above the top of the ground layer, meters.
pub const CAMERA_HEIGHT: f64 = 1.6;

/// World extent behind the first camera, meters.
pub const REAR_MARGIN: f64 = 4.0;

/// Lateral half-width kept free of obstacles along the driving line.
pub const LANE_HALF_WIDTH: f64 = 2.0;

pub const DEFAULT_FRAME_INTERVAL: i64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Empty,
    Corridor,
    Intersection,
    RandomBoxes,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empty" => Ok(Layout::Empty),
            "corridor" => Ok(Layout::Corridor),
            "intersection" => Ok(Layout::Intersection),
            "random_boxes" | "random-boxes" => Ok(Layout::RandomBoxes),
            other => Err(Error::domain(format!("unknown layout '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub layout: Layout,
    /// Class count including the empty class 0.
    pub classes: usize,
    pub dims: [usize; 3],
    pub voxel_size: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            layout: Layout::Corridor,
            classes: 6,
            dims: [128, 128, 16],
            voxel_size: 0.4,
        }
    }
}

impl SceneSpec {
    /// World range: laterally centered on the first camera, starting
    /// [`REAR_MARGIN`] behind it, ground layer top [`CAMERA_HEIGHT`] below it.
    pub fn range(&self) -> Result<SceneRange> {
        let vs = self.voxel_size;
        let lateral = self.dims[0] as f64 * vs;
        let rear = (REAR_MARGIN / vs).round() * vs;
        SceneRange::from_dims(
            Vector3::new(-0.5 * lateral, -rear, -(CAMERA_HEIGHT + vs)),
            self.dims,
            vs,
        )
    }
}

struct Builder<'a> {
    grid: SceneGrid,
    rng: ChaCha8Rng,
    spec: &'a SceneSpec,
}

impl Builder<'_> {
    /// Voxel index along `axis` containing grid coordinate `x` (meters), clamped.
    fn index(&self, axis: usize, x: f64) -> usize {
        let r = self.grid.range();
        let i = ((x - r.origin[axis]) / r.voxel_size).floor();
        i.clamp(0.0, (r.dims()[axis] - 1) as f64) as usize
    }

    fn fill(&mut self, lo: [usize; 3], hi: [usize; 3], label: u8) {
        for i in lo[0]..hi[0] {
            for j in lo[1]..hi[1] {
                for k in lo[2]..hi[2] {
                    self.grid.set(i, j, k, label);
                }
            }
        }
    }

    fn ground(&mut self) {
        let [x, y, _] = self.grid.dims();
        self.fill([0, 0, 0], [x, y, 1], GROUND_LABEL);
    }

    /// Walls at `±half_width`, skipping forward intervals listed in `gaps` (meters).
    fn walls(&mut self, half_width: f64, height: f64, gaps: &[(f64, f64)]) {
        let [_, y, z] = self.grid.dims();
        let vs = self.spec.voxel_size;
        let top = (1 + (height / vs).round() as usize).min(z);
        for side in [-1.0, 1.0] {
            let inner = self.index(0, side * half_width);
            let (lo, hi) = if side < 0.0 {
                (inner.saturating_sub(1), inner + 1)
            } else {
                (inner, (inner + 2).min(self.grid.dims()[0]))
            };
            for j in 0..y {
                let fwd = self.grid.range().origin[1] + (j as f64 + 0.5) * vs;
                if gaps.iter().any(|(a, b)| fwd >= *a && fwd < *b) {
                    continue;
                }
                self.fill([lo, j, 1], [hi, j + 1, top], WALL_LABEL);
            }
        }
    }

    fn boxes(&mut self, count: usize, lateral_limit: f64) {
        if self.spec.classes <= 3 {
            return;
        }
        let r = *self.grid.range();
        let fwd_lo = r.origin[1] + REAR_MARGIN + 2.0;
        let fwd_hi = r.origin[1] + r.extents[1];
        for _ in 0..count {
            let label = self.rng.gen_range(3..self.spec.classes) as u8;
            let w = self.rng.gen_range(0.8..3.0);
            let l = self.rng.gen_range(1.0..5.0);
            let h = self.rng.gen_range(0.8..3.0);
            let side = if self.rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let near = LANE_HALF_WIDTH + 0.5;
            if lateral_limit - w <= near {
                continue;
            }
            let inner = self.rng.gen_range(near..lateral_limit - w);
            let (a, b) = if side > 0.0 {
                (inner, inner + w)
            } else {
                (-inner - w, -inner)
            };
            let f = self.rng.gen_range(fwd_lo..fwd_hi);
            let lo = [self.index(0, a), self.index(1, f), 1];
            let top = (1 + (h / self.spec.voxel_size).round() as usize).min(self.grid.dims()[2]);
            let hi = [self.index(0, b) + 1, self.index(1, f + l) + 1, top];
            self.fill(lo, hi, label);
        }
    }
}

/// Deterministic scene from its spec: same spec, bit-identical grid.
pub fn build_scene(spec: &SceneSpec) -> Result<SceneGrid> {
    if spec.classes < 2 || spec.classes > 255 {
        return Err(Error::domain(format!(
            "class count {} must be in 2..=255",
            spec.classes
        )));
    }
    let mut b = Builder {
        grid: SceneGrid::empty(spec.range()?),
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        spec,
    };
    let lateral_half = 0.5 * spec.dims[0] as f64 * spec.voxel_size;
    match spec.layout {
        Layout::Empty => {}
        Layout::Corridor => {
            b.ground();
            let half_width = b.rng.gen_range(6.0..9.0_f64).min(lateral_half - 1.0);
            let height = b.rng.gen_range(2.5..4.5);
            b.walls(half_width, height, &[]);
            let n = b.rng.gen_range(14..22);
            b.boxes(n, half_width - 0.5);
        }
        Layout::Intersection => {
            b.ground();
            let half_width = b.rng.gen_range(6.0..9.0_f64).min(lateral_half - 1.0);
            let height = b.rng.gen_range(2.5..4.5);
            let cross = b.rng.gen_range(15.0..30.0);
            let cross_w = b.rng.gen_range(8.0..12.0);
            b.walls(half_width, height, &[(cross, cross + cross_w)]);
            let n = b.rng.gen_range(10..18);
            b.boxes(n, half_width - 0.5);
        }
        Layout::RandomBoxes => {
            b.ground();
            let n = b.rng.gen_range(30..50);
            b.boxes(n, lateral_half - 0.5);
        }
    }
    Ok(b.grid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    Straight,
    ConstantTurn,
    /// Straight for the first half of the steps, then a constant turn.
    Piecewise,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(TrajectoryKind::Straight),
            "constant_turn" | "constant-turn" | "turn" => Ok(TrajectoryKind::ConstantTurn),
            "piecewise" => Ok(TrajectoryKind::Piecewise),
            other => Err(Error::domain(format!("unknown trajectory kind '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    /// Meters per frame.
    pub speed: f64,
    /// Yaw radians per frame (positive turns right).
    pub turn_rate: f64,
    pub frames: usize,
    pub frame_interval: i64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Straight,
            speed: 0.4,
            turn_rate: 0.0,
            frames: 6,
            frame_interval: DEFAULT_FRAME_INTERVAL,
        }
    }
}

impl TrajectorySpec {
    /// Relative pose between consecutive sampled frames.
    pub fn step_twist(&self, turning: bool) -> Twist {
        let n = self.frame_interval as f64;
        let yaw = if turning { self.turn_rate * n } else { 0.0 };
        Twist::new(0.0, yaw, 0.0, 0.0, 0.0, self.speed * n)
    }
}

/// Poses at frame indices `0, interval, 2 * interval, ...`, starting at the identity.
pub fn make_trajectory(spec: &TrajectorySpec) -> Result<PoseSequence> {
    if spec.frame_interval <= 0 {
        return Err(Error::domain("frame interval must be positive"));
    }
    if !(spec.speed.is_finite() && spec.turn_rate.is_finite()) {
        return Err(Error::domain("trajectory speed and turn rate must be finite"));
    }
    let step_len = spec.speed * spec.frame_interval as f64;
    let mut poses: Vec<Se3Pose> = Vec::with_capacity(spec.frames);
    for i in 0..spec.frames {
        let pose = match (spec.kind, i) {
            (_, 0) => Se3Pose::identity(),
            (TrajectoryKind::Straight, _) => Se3Pose::from_translation(0.0, 0.0, step_len * i as f64),
            (TrajectoryKind::ConstantTurn, _) => poses[i - 1].compose(&se3_exp(&spec.step_twist(true))),
            (TrajectoryKind::Piecewise, _) => {
                let turning = i > spec.frames / 2;
                poses[i - 1].compose(&se3_exp(&spec.step_twist(turning)))
            }
        };
        poses.push(pose);
    }
    PoseSequence::evenly_spaced(poses, 0, spec.frame_interval)
}

/// Per-pixel planar depth and first-hit label.
#[derive(Clone, Debug, PartialEq)]
pub struct Render {
    pub depth: Field2,
    pub labels: Vec<u8>,
}

#[inline]
fn occupied(label: u8) -> bool {
    label != EMPTY_LABEL && label != INVALID_LABEL
}

/// First occupied voxel along `origin + t * dir` (grid axes, meters),
/// returning the entry parameter and label. Amanatides-Woo traversal.
pub fn cast_ray(grid: &SceneGrid, origin: &Vector3<f64>, dir: &Vector3<f64>, t_max: f64) -> Option<(f64, u8)> {
    let r = grid.range();
    let dims = r.dims();
    let o = (origin - r.origin) / r.voxel_size;
    let d = dir / r.voxel_size;
    let (mut t0, mut t1) = (0.0_f64, t_max);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < 0.0 || o[a] >= dims[a] as f64 {
                return None;
            }
        } else {
            let ta = (0.0 - o[a]) / d[a];
            let tb = (dims[a] as f64 - o[a]) / d[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    if t0 > t1 {
        return None;
    }
    let p = o + d * t0;
    let mut idx = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_next = [f64::INFINITY; 3];
    for a in 0..3 {
        idx[a] = (p[a].floor() as i64).clamp(0, dims[a] as i64 - 1);
        if d[a] > 0.0 {
            step[a] = 1;
            t_next[a] = (idx[a] as f64 + 1.0 - o[a]) / d[a];
        } else if d[a] < 0.0 {
            step[a] = -1;
            t_next[a] = (idx[a] as f64 - o[a]) / d[a];
        }
    }
    let mut t_entry = t0;
    loop {
        let label = grid.get(idx[0] as usize, idx[1] as usize, idx[2] as usize);
        if occupied(label) {
            return Some((t_entry, label));
        }
        let a = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
            0
        } else if t_next[1] <= t_next[2] {
            1
        } else {
            2
        };
        t_entry = t_next[a];
        if t_entry > t1 {
            return None;
        }
        idx[a] += step[a];
        if idx[a] < 0 || idx[a] >= dims[a] as i64 {
            return None;
        }
        if step[a] > 0 {
            t_next[a] = (idx[a] as f64 + 1.0 - o[a]) / d[a];
        } else {
            t_next[a] = (idx[a] as f64 - o[a]) / d[a];
        }
    }
}

/// Ray casts every pixel; depth is the camera-z distance to the entry face of
/// the first occupied voxel, 0 on a miss or beyond the depth cap.
pub fn render(grid: &SceneGrid, pose: &Se3Pose, k: &CameraIntrinsics) -> Render {
    let (h, w) = (k.height, k.width);
    let origin = camera_to_grid_axes(pose.translation());
    let rows: Vec<(Vec<f64>, Vec<u8>)> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut depth = vec![0.0; w];
            let mut labels = vec![EMPTY_LABEL; w];
            for c in 0..w {
                let cam = Vector3::new((c as f64 - k.cx) / k.fx, (r as f64 - k.cy) / k.fy, 1.0);
                let dir = camera_to_grid_axes(&(pose.rotation() * cam));
                if let Some((t, label)) = cast_ray(grid, &origin, &dir, DEFAULT_MAX_DEPTH) {
                    if t > 0.0 {
                        depth[c] = t;
                        labels[c] = label;
                    }
                }
            }
            (depth, labels)
        })
        .collect();
    let mut depth = Vec::with_capacity(h * w);
    let mut labels = Vec::with_capacity(h * w);
    for (d, l) in rows {
        depth.extend(d);
        labels.extend(l);
    }
    Render {
        depth: Field2::from_vec(h, w, 1, depth).expect("render size"),
        labels,
    }
}

pub fn render_depth(grid: &SceneGrid, pose: &Se3Pose, k: &CameraIntrinsics) -> Field2 {
    render(grid, pose, k).depth
}

const PALETTE: [[f64; 3]; 20] = [
    [0.0, 0.0, 0.0],
    [0.55, 0.45, 0.35],
    [0.30, 0.50, 0.90],
    [0.90, 0.20, 0.20],
    [0.20, 0.85, 0.30],
    [0.95, 0.85, 0.10],
    [0.70, 0.30, 0.90],
    [0.10, 0.80, 0.80],
    [1.00, 0.55, 0.15],
    [0.95, 0.40, 0.70],
    [0.40, 0.90, 0.60],
    [0.60, 0.20, 0.40],
    [0.25, 0.25, 0.60],
    [0.75, 0.75, 0.45],
    [0.15, 0.45, 0.25],
    [0.85, 0.65, 0.90],
    [0.45, 0.15, 0.05],
    [0.05, 0.35, 0.55],
    [0.90, 0.95, 0.70],
    [0.50, 0.60, 0.15],
];

/// Fixed RGB of a class; classes past the table reuse it cyclically from class 1.
pub fn palette_color(label: u8) -> [f64; 3] {
    let n = PALETTE.len();
    match label as usize {
        0 => PALETTE[0],
        l if l < n => PALETTE[l],
        l => PALETTE[1 + (l - 1) % (n - 1)],
    }
}

/// Class whose palette direction best explains a shaded color, `None` for black.
pub fn palette_class(rgb: &[f64]) -> Option<u8> {
    if rgb.iter().all(|v| *v == 0.0) {
        return None;
    }
    let mut best = (f64::INFINITY, 0u8);
    for (label, p) in PALETTE.iter().enumerate().skip(1) {
        let pp: f64 = p.iter().map(|v| v * v).sum();
        let s: f64 = p.iter().zip(rgb).map(|(a, b)| a * b).sum::<f64>() / pp;
        let resid: f64 = p.iter().zip(rgb).map(|(a, b)| (b - s * a).powi(2)).sum();
        if resid < best.0 {
            best = (resid, label as u8);
        }
    }
    Some(best.1)
}

/// Palette color of the hit class shaded by `1 / (1 + 0.05 * depth)`; misses are black.
pub fn shade(render: &Render) -> Field2 {
    let (h, w, _) = render.depth.shape();
    let mut img = Field2::zeros(h, w, 3);
    for (i, &l) in render.labels.iter().enumerate() {
        let d = render.depth.data()[i];
        if d > 0.0 {
            let s = 1.0 / (1.0 + 0.05 * d);
            let c = palette_color(l);
            img.pixel_mut(i / w, i % w)
                .copy_from_slice(&[c[0] * s, c[1] * s, c[2] * s]);
        }
    }
    img
}

pub fn render_image(grid: &SceneGrid, pose: &Se3Pose, k: &CameraIntrinsics) -> Field2 {
    shade(&render(grid, pose, k))
}

/// Rendered image and depth at `pose` as a frame bundle.
pub fn render_frame(grid: &SceneGrid, pose: &Se3Pose, k: &CameraIntrinsics, frame_index: i64) -> FrameBundle {
    let r = render(grid, pose, k);
    let image = shade(&r);
    FrameBundle::new(image, r.depth, *pose, frame_index).expect("rendered frames are valid")
}

pub const FEATURE_STRIDE: usize = 4;
pub const FEATURE_CHANNELS: usize = 8;

/// Deterministic stand-in image encoder at stride 4. Channels per cell:
/// mean R, G, B, gray; mean |Sobel x|, |Sobel y| of gray; min and max gray.
/// Single-channel images are treated as gray.
pub fn extract_features(image: &Field2) -> Field2 {
    let (h, w, ch) = image.shape();
    let gray: Vec<f64> = (0..h * w)
        .map(|i| {
            let p = &image.data()[i * ch..(i + 1) * ch];
            if ch >= 3 {
                0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
            } else {
                p[0]
            }
        })
        .collect();
    let g = |r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        gray[r * w + c]
    };
    let (fh, fw) = (h / FEATURE_STRIDE, w / FEATURE_STRIDE);
    let mut out = Field2::zeros(fh, fw, FEATURE_CHANNELS);
    let cell = (FEATURE_STRIDE * FEATURE_STRIDE) as f64;
    for fr in 0..fh {
        for fc in 0..fw {
            let mut acc = [0.0; FEATURE_CHANNELS];
            acc[6] = f64::INFINITY;
            acc[7] = f64::NEG_INFINITY;
            for dr in 0..FEATURE_STRIDE {
                for dc in 0..FEATURE_STRIDE {
                    let (r, c) = (fr * FEATURE_STRIDE + dr, fc * FEATURE_STRIDE + dc);
                    let px = image.pixel(r, c);
                    let gv = gray[r * w + c];
                    for (a, v) in acc.iter_mut().zip(if ch >= 3 { &px[..3] } else { &[] as &[f64] }) {
                        *a += v;
                    }
                    if ch < 3 {
                        for a in acc.iter_mut().take(3) {
                            *a += gv;
                        }
                    }
                    acc[3] += gv;
                    let (ri, ci) = (r as isize, c as isize);
                    let sx = (g(ri - 1, ci + 1) + 2.0 * g(ri, ci + 1) + g(ri + 1, ci + 1))
                        - (g(ri - 1, ci - 1) + 2.0 * g(ri, ci - 1) + g(ri + 1, ci - 1));
                    let sy = (g(ri + 1, ci - 1) + 2.0 * g(ri + 1, ci) + g(ri + 1, ci + 1))
                        - (g(ri - 1, ci - 1) + 2.0 * g(ri - 1, ci) + g(ri - 1, ci + 1));
                    acc[4] += sx.abs();
                    acc[5] += sy.abs();
                    acc[6] = acc[6].min(gv);
                    acc[7] = acc[7].max(gv);
                }
            }
            for a in acc.iter_mut().take(6) {
                *a /= cell;
            }
            out.pixel_mut(fr, fc).copy_from_slice(&acc);
        }
    }
    out
}
