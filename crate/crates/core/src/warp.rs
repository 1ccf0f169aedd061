//! Depth-and-pose reprojection of past/current frames onto a future viewpoint.
//!
//! Source pixels are forward-splatted to the nearest destination pixel and
//! merged through a z-buffer. A [`Refiner`] post-processes the raw warp; the
//! built-ins are the identity and a nearest-valid hole fill.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{backproject_unchecked, project, relative_pose, CameraIntrinsics, Field2, PixelDepth, Se3Pose};

/// Depths beyond this are treated as invalid.
pub const DEFAULT_MAX_DEPTH: f64 = 80.0;

/// Depths closer than this are merged as ties in the z-buffer.
pub const DEPTH_TIE_TOLERANCE: f64 = 1e-9;

/// One frame: image in `[0, 1]`, planar depth in meters (0 = invalid), world-from-camera pose.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBundle {
    pub image: Field2,
    pub depth: Field2,
    pub pose: Se3Pose,
    pub frame_index: i64,
}

impl FrameBundle {
    pub fn new(image: Field2, depth: Field2, pose: Se3Pose, frame_index: i64) -> Result<Self> {
        if depth.channels() != 1 {
            return Err(Error::shape("depth channels", 1, depth.channels()));
        }
        if (image.height(), image.width()) != (depth.height(), depth.width()) {
            return Err(Error::shape(
                "image/depth size",
                format!("{}x{}", image.height(), image.width()),
                format!("{}x{}", depth.height(), depth.width()),
            ));
        }
        if let Some(d) = depth.data().iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::domain(format!("invalid depth value {d}")));
        }
        Ok(Self {
            image,
            depth,
            pose,
            frame_index,
        })
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    /// Number of pixels with valid (positive) depth.
    pub fn valid_depth_count(&self) -> usize {
        self.depth.data().iter().filter(|d| **d > 0.0).count()
    }
}

/// Per-pixel reprojection of a source frame into a destination camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprojectionFlow {
    pub height: usize,
    pub width: usize,
    /// Destination `(u', v', d')` per source pixel, row-major.
    pub coords: Vec<PixelDepth>,
    pub valid: Vec<bool>,
}

const INVALID_COORD: PixelDepth = PixelDepth {
    u: f64::NAN,
    v: f64::NAN,
    d: 0.0,
};

/// Backprojects every valid source pixel, moves it into `dst_pose`'s camera
/// frame and projects it. Invalid where depth is 0, the point is behind the
/// destination camera, its nearest pixel is off-image, or `d'` exceeds the depth cap.
/// A destination pose equal to the source pose gives the exact identity flow.
pub fn reprojection_flow(src: &FrameBundle, dst_pose: &Se3Pose, k: &CameraIntrinsics) -> ReprojectionFlow {
    let (h, w) = (src.height(), src.width());
    let same_pose = *dst_pose == src.pose;
    let rel = relative_pose(&src.pose, dst_pose);
    let mut coords = vec![INVALID_COORD; h * w];
    let mut valid = vec![false; h * w];
    coords
        .par_chunks_mut(w)
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(row, (crow, vrow))| {
            for col in 0..w {
                let d = src.depth.get(row, col, 0);
                if !(d > 0.0) {
                    continue;
                }
                let projected = if same_pose {
                    Some(PixelDepth {
                        u: col as f64,
                        v: row as f64,
                        d,
                    })
                } else {
                    project(
                        &rel.transform_point(&backproject_unchecked(col as f64, row as f64, d, k)),
                        k,
                    )
                };
                if let Some(pd) = projected {
                    if pd.d <= DEFAULT_MAX_DEPTH && k.nearest_pixel(pd.u, pd.v).is_some() {
                        crow[col] = pd;
                        vrow[col] = true;
                    }
                }
            }
        });
    ReprojectionFlow {
        height: h,
        width: w,
        coords,
        valid,
    }
}

/// Raw splatting output before refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpResult {
    pub image: Field2,
    pub depth: Field2,
    pub hit_mask: Vec<bool>,
    /// Position in the source list of the winning source, -1 where nothing landed.
    pub source_index: Vec<i32>,
}

impl WarpResult {
    pub fn hit_count(&self) -> usize {
        self.hit_mask.iter().filter(|h| **h).count()
    }
}

/// z-buffer ordering key; smaller wins. Total, so the merge result does not
/// depend on visiting order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct SplatKey {
    depth_ticks: i64,
    temporal_distance: i64,
    source: usize,
    pixel: usize,
}

fn splat_key(d: f64, temporal_distance: i64, source: usize, pixel: usize) -> SplatKey {
    SplatKey {
        depth_ticks: (d / DEPTH_TIE_TOLERANCE).round() as i64,
        temporal_distance,
        source,
        pixel,
    }
}

fn check_sources(sources: &[FrameBundle], k: &CameraIntrinsics) -> Result<usize> {
    let first = sources
        .first()
        .ok_or_else(|| Error::domain("forward splatting needs at least one source frame"))?;
    let shape = (k.height, k.width, first.image.channels());
    for s in sources {
        if (s.height(), s.width(), s.image.channels()) != shape {
            return Err(Error::shape(
                "source frame shape",
                format!("{shape:?}"),
                format!("{:?}", (s.height(), s.width(), s.image.channels())),
            ));
        }
    }
    Ok(shape.2)
}

type ZBuffer = Vec<Option<(SplatKey, f64)>>;

/// Depth of the splatted surface at the center of its destination pixel.
///
/// Inverse depth is affine in image coordinates over a plane, so a plane is
/// fitted through the pixel and one horizontal and one vertical source
/// neighbor and evaluated at the pixel center. On each axis the neighbor with
/// the smaller inverse-depth jump is used, which keeps the fit on the pixel's
/// own surface at silhouettes. Falls back to the point depth when no usable
/// neighbors exist.
fn surface_depth(flow: &ReprojectionFlow, col: usize, row: usize, target: (usize, usize)) -> f64 {
    let w = flow.width;
    let p = flow.coords[row * w + col];
    let (du, dv) = (target.0 as f64 - p.u, target.1 as f64 - p.v);
    if du == 0.0 && dv == 0.0 {
        return p.d;
    }
    let q = 1.0 / p.d;
    let pick = |candidates: [Option<usize>; 2]| {
        candidates
            .into_iter()
            .flatten()
            .filter(|&i| flow.valid[i])
            .map(|i| {
                let n = flow.coords[i];
                (n.u - p.u, n.v - p.v, 1.0 / n.d - q)
            })
            .min_by(|a, b| a.2.abs().total_cmp(&b.2.abs()))
    };
    let horizontal = pick([
        col.checked_sub(1).map(|c| row * w + c),
        (col + 1 < w).then(|| row * w + col + 1),
    ]);
    let vertical = pick([
        row.checked_sub(1).map(|r| r * w + col),
        (row + 1 < flow.height).then(|| (row + 1) * w + col),
    ]);
    let (Some((u1, v1, q1)), Some((u2, v2, q2))) = (horizontal, vertical) else {
        return p.d;
    };
    let det = u1 * v2 - u2 * v1;
    if det.abs() < 1e-12 {
        return p.d;
    }
    let a = (q1 * v2 - q2 * v1) / det;
    let b = (u1 * q2 - u2 * q1) / det;
    let d = 1.0 / (q + a * du + b * dv);
    if d.is_finite() && d > 0.5 * p.d && d < 2.0 * p.d {
        d
    } else {
        p.d
    }
}

fn splat_source(
    source_pos: usize,
    src: &FrameBundle,
    dst_pose: &Se3Pose,
    dst_frame_index: i64,
    k: &CameraIntrinsics,
    zbuf: &mut ZBuffer,
) {
    let flow = reprojection_flow(src, dst_pose, k);
    let tdist = (src.frame_index - dst_frame_index).abs();
    for (pixel, (pd, ok)) in flow.coords.iter().zip(&flow.valid).enumerate() {
        if !*ok {
            continue;
        }
        let (c, r) = k.nearest_pixel(pd.u, pd.v).expect("valid flow lands in image");
        let key = splat_key(pd.d, tdist, source_pos, pixel);
        let slot = &mut zbuf[r * k.width + c];
        if slot.is_none_or(|(cur, _)| key < cur) {
            *slot = Some((
                key,
                surface_depth(&flow, pixel % flow.width, pixel / flow.width, (c, r)),
            ));
        }
    }
}

fn resolve(sources: &[FrameBundle], zbuf: &ZBuffer, k: &CameraIntrinsics, channels: usize) -> WarpResult {
    let (h, w) = (k.height, k.width);
    let mut image = Field2::zeros(h, w, channels);
    let mut depth = Field2::zeros(h, w, 1);
    let mut hit_mask = vec![false; h * w];
    let mut source_index = vec![-1; h * w];
    for (i, entry) in zbuf.iter().enumerate() {
        let Some((key, d)) = entry else { continue };
        let src = &sources[key.source];
        let (sr, sc) = (key.pixel / src.width(), key.pixel % src.width());
        let (r, c) = (i / w, i % w);
        image.pixel_mut(r, c).copy_from_slice(src.image.pixel(sr, sc));
        depth.set(r, c, 0, *d);
        hit_mask[i] = true;
        source_index[i] = key.source as i32;
    }
    WarpResult {
        image,
        depth,
        hit_mask,
        source_index,
    }
}

/// Sequential reference splatting; defines the canonical output.
///
/// Each valid source pixel lands on the nearest destination pixel and carries
/// its surface depth at that pixel's center. The smallest point depth wins; depths within 1e-9 m tie and are
/// resolved by temporal distance to `dst_frame_index`, then source list
/// position, then source linear pixel index.
pub fn forward_splat_sequential(
    sources: &[FrameBundle],
    dst_pose: &Se3Pose,
    dst_frame_index: i64,
    k: &CameraIntrinsics,
) -> Result<WarpResult> {
    let channels = check_sources(sources, k)?;
    let mut zbuf: ZBuffer = vec![None; k.width * k.height];
    for (pos, src) in sources.iter().enumerate() {
        splat_source(pos, src, dst_pose, dst_frame_index, k, &mut zbuf);
    }
    Ok(resolve(sources, &zbuf, k, channels))
}

/// Parallel splatting: one z-buffer per source, merged by the same total
/// key order, so the result equals [`forward_splat_sequential`].
pub fn forward_splat(
    sources: &[FrameBundle],
    dst_pose: &Se3Pose,
    dst_frame_index: i64,
    k: &CameraIntrinsics,
) -> Result<WarpResult> {
    let channels = check_sources(sources, k)?;
    let n = k.width * k.height;
    let zbuf = sources
        .par_iter()
        .enumerate()
        .map(|(pos, src)| {
            let mut zbuf: ZBuffer = vec![None; n];
            splat_source(pos, src, dst_pose, dst_frame_index, k, &mut zbuf);
            zbuf
        })
        .reduce(
            || vec![None; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    if let Some(yv) = y {
                        if x.is_none_or(|xv| yv.0 < xv.0) {
                            *x = Some(yv);
                        }
                    }
                }
                a
            },
        );
    Ok(resolve(sources, &zbuf, k, channels))
}

/// Post-processing seam between the raw warp and the pseudo-future frame.
/// Implementations must return an image and a depth map with the warp's shapes.
pub trait Refiner: Sync {
    fn refine(&self, warp: &WarpResult) -> (Field2, Field2);
}

/// Returns the warp unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityRefiner;

impl Refiner for IdentityRefiner {
    fn refine(&self, warp: &WarpResult) -> (Field2, Field2) {
        (warp.image.clone(), warp.depth.clone())
    }
}

/// Fills every hole with the value of the nearest hit pixel (4-connected
/// breadth-first distance, seeds in raster order). Leaves an all-hole warp empty.
#[derive(Clone, Copy, Debug, Default)]
pub struct NearestFillRefiner;

impl Refiner for NearestFillRefiner {
    fn refine(&self, warp: &WarpResult) -> (Field2, Field2) {
        let (h, w) = (warp.depth.height(), warp.depth.width());
        let mut image = warp.image.clone();
        let mut depth = warp.depth.clone();
        let mut filled = warp.hit_mask.clone();
        let mut queue: VecDeque<usize> = (0..h * w).filter(|&i| filled[i]).collect();
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            let neighbors = [
                (r > 0).then(|| i - w),
                (c > 0).then(|| i - 1),
                (c + 1 < w).then(|| i + 1),
                (r + 1 < h).then(|| i + w),
            ];
            for j in neighbors.into_iter().flatten() {
                if filled[j] {
                    continue;
                }
                filled[j] = true;
                let (jr, jc) = (j / w, j % w);
                let px = image.pixel(r, c).to_vec();
                image.pixel_mut(jr, jc).copy_from_slice(&px);
                depth.set(jr, jc, 0, depth.get(r, c, 0));
                queue.push_back(j);
            }
        }
        (image, depth)
    }
}

/// Built-in refiner selector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RefinerKind {
    #[default]
    Identity,
    Fill,
}

impl RefinerKind {
    pub fn refiner(self) -> &'static dyn Refiner {
        match self {
            RefinerKind::Identity => &IdentityRefiner,
            RefinerKind::Fill => &NearestFillRefiner,
        }
    }
}

impl std::str::FromStr for RefinerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(RefinerKind::Identity),
            "fill" => Ok(RefinerKind::Fill),
            other => Err(Error::domain(format!("unknown refiner '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PseudoFuture {
    pub frame: FrameBundle,
    pub warp: WarpResult,
}

impl PseudoFuture {
    /// Pixels carrying a valid depth after refinement.
    pub fn covered_count(&self) -> usize {
        self.frame.valid_depth_count()
    }
}

/// Warps the ordered past/current frames onto `future_pose` and refines the result.
/// The pseudo-future frame index is the last source index plus `frame_interval`.
pub fn compose_pseudo_future(
    past_and_current: &[FrameBundle],
    future_pose: &Se3Pose,
    k: &CameraIntrinsics,
    frame_interval: i64,
    refiner: &dyn Refiner,
) -> Result<PseudoFuture> {
    if past_and_current
        .windows(2)
        .any(|w| w[0].frame_index >= w[1].frame_index)
    {
        return Err(Error::domain("source frames must be ordered by ascending frame index"));
    }
    let current = past_and_current
        .last()
        .ok_or_else(|| Error::domain("forward splatting needs at least one source frame"))?;
    let future_index = current.frame_index + frame_interval;
    let warp = forward_splat(past_and_current, future_pose, future_index, k)?;
    let (image, depth) = refiner.refine(&warp);
    warp.image.ensure_same_shape(&image, "refined image")?;
    warp.depth.ensure_same_shape(&depth, "refined depth")?;
    let frame = FrameBundle::new(image, depth, *future_pose, future_index)?;
    Ok(PseudoFuture { frame, warp })
}
