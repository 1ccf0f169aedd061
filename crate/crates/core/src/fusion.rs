//! Multi-frame voxel visibility and 3D feature fusion.
//!
//! Every voxel center of the current frame's scene range is moved into each
//! temporal frame, projected, and marked visible when its projected depth is
//! within `theta_d` of that frame's depth map at the nearest pixel. Voxels are
//! then grouped into 4x4x4 blocks (OR over visibility, mean of projections over
//! visible members) and per-frame 2D features are bilinearly sampled at the
//! block projections and concatenated frame-major, zero where absent.
//!
//! Grid axes are `(lateral, forward, up)`. A grid point `(a, b, c)` sits at
//! camera coordinates `(a, -c, b)` of the frame the range is anchored to
//! (x right, y down, z forward), so the third grid axis is height.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{
    bilinear_sample_into, project, relative_pose, CameraIntrinsics, Field2, PixelDepth, Point3, Se3Pose,
};
use crate::warp::FrameBundle;

pub const BLOCK_SIZE: usize = 4;

/// Visibility band half-width in meters.
pub const DEFAULT_THETA_D: f64 = 0.5;

/// Label of empty space.
pub const EMPTY_LABEL: u8 = 0;

/// Label of unknown / unevaluated voxels.
pub const INVALID_LABEL: u8 = 255;

const DIVISIBILITY_TOL: f64 = 1e-9;

/// Maps grid-axis coordinates to the anchor frame's camera axes.
#[inline]
pub fn grid_to_camera_axes(p: &Vector3<f64>) -> Point3 {
    Point3::new(p.x, -p.z, p.y)
}

#[inline]
pub fn camera_to_grid_axes(p: &Point3) -> Vector3<f64> {
    Vector3::new(p.x, p.z, -p.y)
}

/// Axis-aligned voxel volume anchored to a camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneRange {
    /// Minimum corner in grid axes, meters, relative to the anchor camera.
    pub origin: Vector3<f64>,
    pub extents: Vector3<f64>,
    pub voxel_size: f64,
    dims: [usize; 3],
}

impl SceneRange {
    pub fn new(origin: Vector3<f64>, extents: Vector3<f64>, voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::domain(format!("voxel size must be positive, got {voxel_size}")));
        }
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("scene origin must be finite"));
        }
        let mut dims = [0usize; 3];
        for (axis, (d, e)) in dims.iter_mut().zip(extents.iter()).enumerate() {
            let n = (e / voxel_size).round();
            if !(n >= 1.0) || (e - n * voxel_size).abs() > DIVISIBILITY_TOL {
                return Err(Error::domain(format!(
                    "extent {e} along axis {axis} is not a positive multiple of voxel size {voxel_size}"
                )));
            }
            *d = n as usize;
        }
        Ok(Self {
            origin,
            extents,
            voxel_size,
            dims,
        })
    }

    /// Builds a range from voxel counts.
    pub fn from_dims(origin: Vector3<f64>, dims: [usize; 3], voxel_size: f64) -> Result<Self> {
        let extents = Vector3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64) * voxel_size;
        Self::new(origin, extents, voxel_size)
    }

    /// 51.2 m x 51.2 m x 6.4 m at 0.2 m, laterally centered on the camera,
    /// extending forward from it, 2 m below to 4.4 m above.
    pub fn kitti_default() -> Self {
        Self::new(Vector3::new(-25.6, 0.0, -2.0), Vector3::new(51.2, 51.2, 6.4), 0.2).expect("default range is valid")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// `dims / 4`, failing when any dim is not divisible by the block size.
    pub fn block_dims(&self) -> Result<[usize; 3]> {
        block_dims_of(self.dims)
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    /// Center of voxel `(i, j, k)` in grid axes.
    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.voxel_size
    }

    /// Center of voxel `(i, j, k)` in the anchor camera frame.
    #[inline]
    pub fn voxel_center_in_anchor(&self, i: usize, j: usize, k: usize) -> Point3 {
        grid_to_camera_axes(&self.voxel_center(i, j, k))
    }

    /// Voxel containing a grid-axis point, if inside the range.
    pub fn voxel_of(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }
}

fn block_dims_of(dims: [usize; 3]) -> Result<[usize; 3]> {
    if dims.iter().any(|d| d % BLOCK_SIZE != 0) {
        return Err(Error::domain(format!(
            "voxel dims {dims:?} are not divisible by the block size {BLOCK_SIZE}"
        )));
    }
    Ok(dims.map(|d| d / BLOCK_SIZE))
}

/// All voxel centers in grid axes, x-major (x slowest, z fastest).
pub fn voxel_centers(range: &SceneRange) -> Vec<Vector3<f64>> {
    let [x, y, z] = range.dims();
    let mut out = Vec::with_capacity(range.voxel_count());
    for i in 0..x {
        for j in 0..y {
            for k in 0..z {
                out.push(range.voxel_center(i, j, k));
            }
        }
    }
    out
}

/// Labeled voxel volume, x-major (x slowest, z fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrid {
    range: SceneRange,
    labels: Vec<u8>,
}

impl SceneGrid {
    pub fn empty(range: SceneRange) -> Self {
        Self {
            labels: vec![EMPTY_LABEL; range.voxel_count()],
            range,
        }
    }

    pub fn from_labels(range: SceneRange, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != range.voxel_count() {
            return Err(Error::shape("grid label count", range.voxel_count(), labels.len()));
        }
        Ok(Self { range, labels })
    }

    pub fn range(&self) -> &SceneRange {
        &self.range
    }

    pub fn dims(&self) -> [usize; 3] {
        self.range.dims()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        self.labels[self.range.linear_index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, label: u8) {
        let idx = self.range.linear_index(i, j, k);
        self.labels[idx] = label;
    }

    /// Label at a point given in the anchor frame's camera axes; empty outside.
    pub fn label_at(&self, p: &Point3) -> u8 {
        self.range
            .voxel_of(&camera_to_grid_axes(p))
            .map_or(EMPTY_LABEL, |[i, j, k]| self.get(i, j, k))
    }

    /// Samples this grid at the voxel centers of `target`, whose anchor sits at
    /// `self_from_target` relative to this grid's anchor.
    pub fn resample(&self, target: &SceneRange, self_from_target: &Se3Pose) -> SceneGrid {
        let [x, y, z] = target.dims();
        let mut labels = Vec::with_capacity(target.voxel_count());
        for i in 0..x {
            for j in 0..y {
                for k in 0..z {
                    let p = self_from_target.transform_point(&target.voxel_center_in_anchor(i, j, k));
                    labels.push(self.label_at(&p));
                }
            }
        }
        SceneGrid { range: *target, labels }
    }

    pub fn occupied_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| **l != EMPTY_LABEL && **l != INVALID_LABEL)
            .count()
    }
}

/// Per-voxel visibility of one frame plus the projection of every voxel that
/// lands in front of the camera and inside the image.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelVisibility {
    pub dims: [usize; 3],
    pub visible: Vec<bool>,
    pub projections: Vec<Option<PixelDepth>>,
}

impl VoxelVisibility {
    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }
}

/// Affine voxel-index-to-frame-camera map: `p(i,j,k) = base + i*di + j*dj + k*dk`.
struct VoxelProjector<'a> {
    base: Point3,
    di: Point3,
    dj: Point3,
    dk: Point3,
    k: &'a CameraIntrinsics,
    depth: &'a Field2,
    theta_d: f64,
}

impl<'a> VoxelProjector<'a> {
    fn new(
        range: &SceneRange,
        frame: &'a FrameBundle,
        current_pose: &Se3Pose,
        k: &'a CameraIntrinsics,
        theta_d: f64,
    ) -> Result<Self> {
        if !(theta_d > 0.0) {
            return Err(Error::domain(format!("theta_d must be positive, got {theta_d}")));
        }
        if (frame.height(), frame.width()) != (k.height, k.width) {
            return Err(Error::shape(
                "depth map size",
                format!("{}x{}", k.height, k.width),
                format!("{}x{}", frame.height(), frame.width()),
            ));
        }
        let rel = relative_pose(current_pose, &frame.pose);
        let r = rel.rotation();
        let s = range.voxel_size;
        let axis = |a: Vector3<f64>| r * grid_to_camera_axes(&(a * s));
        Ok(Self {
            base: rel.transform_point(&range.voxel_center_in_anchor(0, 0, 0)),
            di: axis(Vector3::x()),
            dj: axis(Vector3::y()),
            dk: axis(Vector3::z()),
            k,
            depth: &frame.depth,
            theta_d,
        })
    }

    /// Returns `(visible, projection)` for one voxel.
    #[inline]
    fn voxel(&self, i: usize, j: usize, k: usize) -> (bool, Option<PixelDepth>) {
        let p = self.base + self.di * i as f64 + self.dj * j as f64 + self.dk * k as f64;
        let Some(pd) = project(&p, self.k) else {
            return (false, None);
        };
        let Some((c, r)) = self.k.nearest_pixel(pd.u, pd.v) else {
            return (false, None);
        };
        let d = self.depth.get(r, c, 0);
        (d > 0.0 && (pd.d - d).abs() <= self.theta_d, Some(pd))
    }
}

/// Visibility band test of every voxel of `range` (anchored at `current_pose`) against `frame`.
pub fn visibility(
    range: &SceneRange,
    frame: &FrameBundle,
    current_pose: &Se3Pose,
    k: &CameraIntrinsics,
    theta_d: f64,
) -> Result<VoxelVisibility> {
    let proj = VoxelProjector::new(range, frame, current_pose, k, theta_d)?;
    let [x, y, z] = range.dims();
    let slab = y * z;
    let mut visible = vec![false; x * slab];
    let mut projections = vec![None; x * slab];
    visible
        .par_chunks_mut(slab)
        .zip(projections.par_chunks_mut(slab))
        .enumerate()
        .for_each(|(i, (vis, prj))| {
            for j in 0..y {
                for k in 0..z {
                    let (v, p) = proj.voxel(i, j, k);
                    vis[j * z + k] = v;
                    prj[j * z + k] = p;
                }
            }
        });
    Ok(VoxelVisibility {
        dims: range.dims(),
        visible,
        projections,
    })
}

/// Block-level visibility of one frame; `Some` holds the mean projection of
/// the block's visible voxels.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBlocks {
    pub projections: Vec<Option<PixelDepth>>,
}

impl FrameBlocks {
    #[inline]
    pub fn is_visible(&self, block: usize) -> bool {
        self.projections[block].is_some()
    }

    pub fn visible_count(&self) -> usize {
        self.projections.iter().filter(|p| p.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockVisibility {
    pub block_dims: [usize; 3],
    /// One entry per frame, in frame order.
    pub frames: Vec<FrameBlocks>,
}

impl BlockVisibility {
    pub fn block_count(&self) -> usize {
        self.block_dims.iter().product()
    }

    /// Block visible in at least one frame.
    pub fn union_visible(&self) -> Vec<bool> {
        (0..self.block_count())
            .map(|b| self.frames.iter().any(|f| f.is_visible(b)))
            .collect()
    }

    /// Keeps only the listed frames, in the given order.
    pub fn select_frames(&self, frames: &[usize]) -> BlockVisibility {
        BlockVisibility {
            block_dims: self.block_dims,
            frames: frames.iter().map(|&f| self.frames[f].clone()).collect(),
        }
    }
}

#[derive(Default)]
struct BlockAccumulator {
    n: usize,
    u: f64,
    v: f64,
    d: f64,
}

impl BlockAccumulator {
    #[inline]
    fn add(&mut self, p: &PixelDepth) {
        self.n += 1;
        self.u += p.u;
        self.v += p.v;
        self.d += p.d;
    }

    fn mean(&self) -> Option<PixelDepth> {
        (self.n > 0).then(|| {
            let n = self.n as f64;
            PixelDepth {
                u: self.u / n,
                v: self.v / n,
                d: self.d / n,
            }
        })
    }
}

/// Visits the member voxels of block `b` in x-major order.
#[inline]
fn for_each_member(block_dims: [usize; 3], b: usize, mut f: impl FnMut(usize, usize, usize)) {
    let (by, bz) = (block_dims[1], block_dims[2]);
    let (bi, bj, bk) = (b / (by * bz), (b / bz) % by, b % bz);
    for i in bi * BLOCK_SIZE..(bi + 1) * BLOCK_SIZE {
        for j in bj * BLOCK_SIZE..(bj + 1) * BLOCK_SIZE {
            for k in bk * BLOCK_SIZE..(bk + 1) * BLOCK_SIZE {
                f(i, j, k);
            }
        }
    }
}

/// Groups voxels into 4x4x4 blocks: visible if any member is, with the mean
/// `(u, v, d)` over the visible members only.
pub fn downsample_blocks(per_frame: &[VoxelVisibility]) -> Result<BlockVisibility> {
    let first = per_frame
        .first()
        .ok_or_else(|| Error::domain("downsampling needs at least one frame"))?;
    let dims = first.dims;
    if let Some(f) = per_frame.iter().find(|f| f.dims != dims) {
        return Err(Error::shape(
            "voxel visibility dims",
            format!("{dims:?}"),
            format!("{:?}", f.dims),
        ));
    }
    let block_dims = block_dims_of(dims)?;
    let nblocks: usize = block_dims.iter().product();
    let index = |i: usize, j: usize, k: usize| (i * dims[1] + j) * dims[2] + k;
    let frames = per_frame
        .iter()
        .map(|vis| FrameBlocks {
            projections: (0..nblocks)
                .into_par_iter()
                .map(|b| {
                    let mut acc = BlockAccumulator::default();
                    for_each_member(block_dims, b, |i, j, k| {
                        let idx = index(i, j, k);
                        if vis.visible[idx] {
                            acc.add(vis.projections[idx].as_ref().expect("visible voxels are projected"));
                        }
                    });
                    acc.mean()
                })
                .collect(),
        })
        .collect();
    Ok(BlockVisibility { block_dims, frames })
}

/// Streaming equivalent of `downsample_blocks(&[visibility(..)])` for one
/// frame; never materializes voxel-level arrays.
pub fn block_visibility(
    range: &SceneRange,
    frame: &FrameBundle,
    current_pose: &Se3Pose,
    k: &CameraIntrinsics,
    theta_d: f64,
) -> Result<FrameBlocks> {
    let block_dims = range.block_dims()?;
    let proj = VoxelProjector::new(range, frame, current_pose, k, theta_d)?;
    let nblocks: usize = block_dims.iter().product();
    let projections = (0..nblocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = BlockAccumulator::default();
            for_each_member(block_dims, b, |i, j, k| {
                if let (true, Some(p)) = proj.voxel(i, j, k) {
                    acc.add(&p);
                }
            });
            acc.mean()
        })
        .collect();
    Ok(FrameBlocks { projections })
}

/// Fused per-block features, frame-major: block `b` owns
/// `features[b * frames * channels..][..frames * channels]`, oldest frame first.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedVolume {
    pub block_dims: [usize; 3],
    pub frames: usize,
    pub channels: usize,
    pub features: Vec<f64>,
}

impl FusedVolume {
    pub fn block_features(&self, block: usize) -> &[f64] {
        let stride = self.frames * self.channels;
        &self.features[block * stride..(block + 1) * stride]
    }

    /// Slot of `frame` within one block's feature vector.
    pub fn frame_slot(&self, block: usize, frame: usize) -> &[f64] {
        let start = frame * self.channels;
        &self.block_features(block)[start..start + self.channels]
    }
}

/// Samples each frame's feature map at the block projections and concatenates.
///
/// Image coordinates are mapped to feature-map coordinates with pixel-center
/// alignment, `u_f = (u + 0.5) * W_f / W - 0.5`. Invisible blocks and
/// out-of-bounds samples contribute zeros.
pub fn sample_fuse(
    bv: &BlockVisibility,
    feature_maps: &[Field2],
    image_width: usize,
    image_height: usize,
) -> Result<FusedVolume> {
    if feature_maps.len() != bv.frames.len() {
        return Err(Error::shape("feature map count", bv.frames.len(), feature_maps.len()));
    }
    let channels = feature_maps.first().map_or(0, Field2::channels);
    if let Some(m) = feature_maps.iter().find(|m| m.channels() != channels) {
        return Err(Error::shape("feature channels", channels, m.channels()));
    }
    let frames = bv.frames.len();
    let stride = frames * channels;
    let mut features = vec![0.0; bv.block_count() * stride];
    if stride == 0 {
        return Ok(FusedVolume {
            block_dims: bv.block_dims,
            frames,
            channels,
            features,
        });
    }
    let scales: Vec<(f64, f64)> = feature_maps
        .iter()
        .map(|m| {
            (
                m.width() as f64 / image_width as f64,
                m.height() as f64 / image_height as f64,
            )
        })
        .collect();
    features.par_chunks_mut(stride).enumerate().for_each(|(b, out)| {
        for (f, (fb, map)) in bv.frames.iter().zip(feature_maps).enumerate() {
            let Some(p) = fb.projections[b] else { continue };
            let (sx, sy) = scales[f];
            let slot = &mut out[f * channels..(f + 1) * channels];
            bilinear_sample_into(map, (p.u + 0.5) * sx - 0.5, (p.v + 0.5) * sy - 0.5, slot);
        }
    });
    Ok(FusedVolume {
        block_dims: bv.block_dims,
        frames,
        channels,
        features,
    })
}

#[derive(Clone, Debug)]
pub struct FusionOutput {
    pub fused: FusedVolume,
    pub blocks: BlockVisibility,
    /// Visible blocks per frame, in frame order.
    pub visible_blocks_per_frame: Vec<usize>,
}

/// Visibility, block downsampling and feature fusion over ordered frames.
/// `current` is the position of the frame whose camera anchors `range`.
pub fn fuse_pipeline<F>(
    frames: &[FrameBundle],
    current: usize,
    range: &SceneRange,
    k: &CameraIntrinsics,
    theta_d: f64,
    extractor: F,
) -> Result<FusionOutput>
where
    F: Fn(&Field2) -> Field2 + Sync,
{
    if frames.windows(2).any(|w| w[0].frame_index >= w[1].frame_index) {
        return Err(Error::domain("frames must be ordered by ascending frame index"));
    }
    let current_pose = frames
        .get(current)
        .ok_or_else(|| Error::domain(format!("current frame {current} out of range")))?
        .pose;
    let per_frame: Vec<(FrameBlocks, Field2)> = frames
        .par_iter()
        .map(|f| {
            Ok((
                block_visibility(range, f, &current_pose, k, theta_d)?,
                extractor(&f.image),
            ))
        })
        .collect::<Result<_>>()?;
    let (frame_blocks, maps): (Vec<_>, Vec<_>) = per_frame.into_iter().unzip();
    let blocks = BlockVisibility {
        block_dims: range.block_dims()?,
        frames: frame_blocks,
    };
    let fused = sample_fuse(&blocks, &maps, k.width, k.height)?;
    let visible_blocks_per_frame = blocks.frames.iter().map(FrameBlocks::visible_count).collect();
    Ok(FusionOutput {
        fused,
        blocks,
        visible_blocks_per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_k() -> CameraIntrinsics {
        CameraIntrinsics::new(8.0, 8.0, 7.5, 5.5, 16, 12).unwrap()
    }

    fn frame_with_depth(depth: f64) -> FrameBundle {
        let k = toy_k();
        FrameBundle::new(
            Field2::zeros(k.height, k.width, 3),
            Field2::filled(k.height, k.width, 1, depth),
            Se3Pose::identity(),
            0,
        )
        .unwrap()
    }

    #[test]
    fn kitti_dims() {
        let r = SceneRange::kitti_default();
        assert_eq!(r.dims(), [256, 256, 32]);
        assert_eq!(r.block_dims().unwrap(), [64, 64, 8]);
        let c = r.voxel_center(0, 0, 0) - r.origin;
        assert!((c - Vector3::new(0.1, 0.1, 0.1)).amax() < 1e-12);
    }

    #[test]
    fn range_validation() {
        assert!(SceneRange::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.05), 0.2).is_err());
        assert!(SceneRange::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), 0.0).is_err());
        assert!(SceneRange::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), 0.25).is_ok());
        let r = SceneRange::from_dims(Vector3::zeros(), [6, 4, 4], 1.0).unwrap();
        assert!(r.block_dims().is_err());
    }

    #[test]
    fn voxel_centers_layout() {
        let r = SceneRange::from_dims(Vector3::new(1.0, 2.0, 3.0), [2, 3, 4], 0.5).unwrap();
        let c = voxel_centers(&r);
        assert_eq!(c.len(), 24);
        assert_eq!(c[0], Vector3::new(1.25, 2.25, 3.25));
        assert_eq!(c[1], Vector3::new(1.25, 2.25, 3.75));
        assert_eq!(c[r.linear_index(1, 2, 3)], Vector3::new(1.75, 3.25, 4.75));
        assert_eq!(r.voxel_of(&Vector3::new(1.7, 3.2, 4.9)), Some([1, 2, 3]));
        assert_eq!(r.voxel_of(&Vector3::new(0.9, 3.2, 4.9)), None);
    }

    #[test]
    fn band_test_threshold() {
        // a single voxel straight ahead at 10 m
        let range = SceneRange::from_dims(Vector3::new(-0.5, 9.5, -0.5), [1, 1, 1], 1.0).unwrap();
        let k = toy_k();
        let vis = visibility(&range, &frame_with_depth(10.4), &Se3Pose::identity(), &k, 0.5).unwrap();
        assert!(vis.visible[0]);
        let p = vis.projections[0].unwrap();
        assert_eq!((p.u, p.v, p.d), (7.5, 5.5, 10.0));
        let vis = visibility(&range, &frame_with_depth(10.6), &Se3Pose::identity(), &k, 0.5).unwrap();
        assert!(!vis.visible[0]);
        assert!(vis.projections[0].is_some());
        let vis = visibility(&range, &frame_with_depth(0.0), &Se3Pose::identity(), &k, 0.5).unwrap();
        assert!(!vis.visible[0]);
        assert!(visibility(&range, &frame_with_depth(10.0), &Se3Pose::identity(), &k, 0.0).is_err());
    }

    fn single_voxel_vis(dims: [usize; 3], members: &[([usize; 3], f64)]) -> VoxelVisibility {
        let n = dims.iter().product();
        let mut v = VoxelVisibility {
            dims,
            visible: vec![false; n],
            projections: vec![None; n],
        };
        for ([i, j, k], u) in members {
            let idx = (i * dims[1] + j) * dims[2] + k;
            v.visible[idx] = true;
            v.projections[idx] = Some(PixelDepth { u: *u, v: 1.0, d: 2.0 });
        }
        v
    }

    #[test]
    fn downsample_examples() {
        let one = single_voxel_vis([4, 4, 8], &[([1, 2, 3], 7.0)]);
        let bv = downsample_blocks(&[one]).unwrap();
        assert_eq!(bv.block_dims, [1, 1, 2]);
        assert_eq!(bv.frames[0].projections[0], Some(PixelDepth { u: 7.0, v: 1.0, d: 2.0 }));
        assert_eq!(bv.frames[0].projections[1], None);

        let two = single_voxel_vis([4, 4, 4], &[([0, 0, 0], 10.0), ([3, 3, 3], 12.0)]);
        let bv = downsample_blocks(&[two]).unwrap();
        assert_eq!(bv.frames[0].projections[0].unwrap().u, 11.0);

        let bad = single_voxel_vis([4, 4, 6], &[]);
        assert!(downsample_blocks(&[bad]).is_err());
    }

    #[test]
    fn downsample_ignores_projections_of_invisible_voxels() {
        let mut v = single_voxel_vis([4, 4, 4], &[([0, 0, 0], 10.0)]);
        v.projections[5] = Some(PixelDepth {
            u: 100.0,
            v: 1.0,
            d: 2.0,
        });
        let bv = downsample_blocks(&[v]).unwrap();
        assert_eq!(bv.frames[0].projections[0].unwrap().u, 10.0);
    }

    fn blocks(vis: &[Option<(f64, f64)>]) -> FrameBlocks {
        FrameBlocks {
            projections: vis
                .iter()
                .map(|p| p.map(|(u, v)| PixelDepth { u, v, d: 1.0 }))
                .collect(),
        }
    }

    #[test]
    fn sample_fuse_examples() {
        let map = Field2::filled(3, 4, 2, 0.75);
        let bv = BlockVisibility {
            block_dims: [1, 1, 2],
            frames: vec![blocks(&[None, Some((1.0, 1.0))])],
        };
        let fused = sample_fuse(&bv, std::slice::from_ref(&map), 4, 3).unwrap();
        assert_eq!(fused.block_features(0), &[0.0, 0.0]);
        assert_eq!(fused.block_features(1), &[0.75, 0.75]);

        let two = BlockVisibility {
            block_dims: [1, 1, 1],
            frames: vec![blocks(&[Some((1.0, 1.0))]), blocks(&[None])],
        };
        let fused = sample_fuse(&two, &[map.clone(), map.clone()], 4, 3).unwrap();
        assert_eq!(fused.block_features(0), &[0.75, 0.75, 0.0, 0.0]);

        let off = BlockVisibility {
            block_dims: [1, 1, 1],
            frames: vec![blocks(&[Some((-3.0, 1.0))])],
        };
        assert_eq!(
            sample_fuse(&off, std::slice::from_ref(&map), 4, 3).unwrap().features,
            vec![0.0, 0.0]
        );

        let mismatch = Field2::filled(3, 4, 3, 0.0);
        assert!(sample_fuse(&two, &[map, mismatch], 4, 3).is_err());
    }

    #[test]
    fn sample_fuse_scales_to_feature_resolution() {
        // 2x2 feature map for an 8x8 image: feature pixel centers at image 1.5 and 5.5
        let map = Field2::from_vec(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let bv = BlockVisibility {
            block_dims: [1, 1, 1],
            frames: vec![blocks(&[Some((5.5, 1.5))])],
        };
        assert_eq!(
            sample_fuse(&bv, std::slice::from_ref(&map), 8, 8).unwrap().features,
            vec![1.0]
        );
        let mid = BlockVisibility {
            block_dims: [1, 1, 1],
            frames: vec![blocks(&[Some((3.5, 3.5))])],
        };
        assert_eq!(sample_fuse(&mid, &[map], 8, 8).unwrap().features, vec![1.5]);
    }

    #[test]
    fn streaming_blocks_match_two_stage_path() {
        let k = toy_k();
        let range = SceneRange::from_dims(Vector3::new(-4.0, 2.0, -2.0), [8, 8, 4], 1.0).unwrap();
        let mut f = frame_with_depth(6.3);
        f.pose = Se3Pose::rot_y(0.1).compose(&Se3Pose::from_translation(0.2, 0.0, -0.5));
        for c in 0..8 {
            f.depth.set(3, c, 0, 4.1);
        }
        let cur = Se3Pose::from_translation(0.0, 0.1, 0.0);
        let vis = visibility(&range, &f, &cur, &k, 0.5).unwrap();
        assert!(vis.visible_count() > 0);
        let two_stage = downsample_blocks(&[vis]).unwrap();
        let streamed = block_visibility(&range, &f, &cur, &k, 0.5).unwrap();
        assert_eq!(two_stage.frames[0], streamed);
    }

    #[test]
    fn resample_identity_copies_labels() {
        let r = SceneRange::from_dims(Vector3::new(-2.0, 0.0, -1.0), [4, 4, 4], 0.5).unwrap();
        let labels = (0..64).map(|i| (i % 5) as u8).collect();
        let g = SceneGrid::from_labels(r, labels).unwrap();
        assert_eq!(g.resample(&r, &Se3Pose::identity()), g);
    }
}
