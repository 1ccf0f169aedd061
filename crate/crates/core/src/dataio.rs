//! On-disk formats. Binary formats are little-endian and start with a
//! 4-byte magic:
//!
//! * grid `VXG1`: u32 X, Y, Z; f32 voxel size; f32 origin[3]; X·Y·Z label
//!   bytes, x slowest and z fastest.
//! * depth `DPT1`: u32 H, W; H·W f32 meters, row-major, 0 = invalid.
//! * fused volume `FVL1`: u32 block dims[3], frames, channels; f32 features
//!   in [`FusedVolume`] order.
//! * block visibility `BVS1`: u32 block dims[3], frames; then per frame and
//!   block a u8 flag followed by f32 u, v, d (zeros when invisible).
//!
//! Images are binary PPM (P6, maxval 255) holding `round(255 v)`. Poses are
//! KITTI odometry text, one row-major 3×4 world-from-camera matrix per line.
//! Intrinsics are `key = value` lines for fx, fy, cx, cy, width and height.
//!
//! Writes go to a temporary file in the target directory that is then renamed
//! over the destination.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::fusion::{BlockVisibility, FrameBlocks, FusedVolume, SceneGrid, SceneRange};
use crate::geom::{CameraIntrinsics, Field2, PixelDepth, Se3Pose};
use crate::warp::FrameBundle;

pub const GRID_MAGIC: &[u8; 4] = b"VXG1";
pub const DEPTH_MAGIC: &[u8; 4] = b"DPT1";
pub const FUSED_MAGIC: &[u8; 4] = b"FVL1";
pub const BLOCKS_MAGIC: &[u8; 4] = b"BVS1";

pub const POSES_FILE: &str = "poses.txt";
pub const INTRINSICS_FILE: &str = "intrinsics.txt";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::domain(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(io_err(path, e));
    }
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Bounds-checked little-endian cursor that reports failures by byte offset.
struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    fn error(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Binary {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.error(
                self.bytes.len(),
                format!(
                    "truncated {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            )),
        }
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(self.error(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u32(what)? as usize;
        if v == 0 {
            return Err(self.error(at, format!("{what} must be positive")));
        }
        Ok(v)
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let at = self.pos;
        let v = f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(self.error(at, format!("non-finite {what}")));
        }
        Ok(v)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn checked_product(dims: &[usize], r: &Reader<'_>) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| r.error(4, "dimensions overflow"))
}

pub fn encode_grid(grid: &SceneGrid) -> Vec<u8> {
    let r = grid.range();
    let mut out = Vec::with_capacity(32 + grid.labels().len());
    out.extend_from_slice(GRID_MAGIC);
    for d in r.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(r.voxel_size as f32).to_le_bytes());
    for o in r.origin.iter() {
        out.extend_from_slice(&(*o as f32).to_le_bytes());
    }
    out.extend_from_slice(grid.labels());
    out
}

pub fn decode_grid(path: &Path, bytes: &[u8]) -> Result<SceneGrid> {
    let mut r = Reader::new(path, bytes);
    r.magic(GRID_MAGIC)?;
    let dims = [r.dim("X")?, r.dim("Y")?, r.dim("Z")?];
    let vs_at = r.pos;
    let vs = r.f32("voxel size")?;
    let origin = Vector3::new(
        r.f32("origin x")? as f64,
        r.f32("origin y")? as f64,
        r.f32("origin z")? as f64,
    );
    let n = checked_product(&dims, &r)?;
    let labels = r.take(n, "label payload")?.to_vec();
    r.finish()?;
    let range = SceneRange::from_dims(origin, dims, vs as f64).map_err(|e| r.error(vs_at, e.to_string()))?;
    SceneGrid::from_labels(range, labels)
}

pub fn write_grid(path: &Path, grid: &SceneGrid) -> Result<()> {
    write_atomic(path, &encode_grid(grid))
}

pub fn read_grid(path: &Path) -> Result<SceneGrid> {
    decode_grid(path, &read_bytes(path)?)
}

/// Depth maps are stored as f32; values are rounded on write.
pub fn encode_depth(depth: &Field2) -> Result<Vec<u8>> {
    if depth.channels() != 1 {
        return Err(Error::shape("depth channels", 1, depth.channels()));
    }
    let mut out = Vec::with_capacity(12 + 4 * depth.data().len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(depth.height() as u32).to_le_bytes());
    out.extend_from_slice(&(depth.width() as u32).to_le_bytes());
    for (i, &d) in depth.data().iter().enumerate() {
        if !(d.is_finite() && d >= 0.0) {
            return Err(Error::domain(format!(
                "depth at index {i} is {d}; depths must be finite and >= 0"
            )));
        }
        out.extend_from_slice(&(d as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_depth(path: &Path, bytes: &[u8]) -> Result<Field2> {
    let mut r = Reader::new(path, bytes);
    r.magic(DEPTH_MAGIC)?;
    let (h, w) = (r.dim("height")?, r.dim("width")?);
    let n = checked_product(&[h, w], &r)?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.pos;
        let d = r.f32("depth")?;
        if d < 0.0 {
            return Err(r.error(at, format!("negative depth {d}")));
        }
        data.push(d as f64);
    }
    r.finish()?;
    Field2::from_vec(h, w, 1, data)
}

pub fn write_depth(path: &Path, depth: &Field2) -> Result<()> {
    write_atomic(path, &encode_depth(depth)?)
}

pub fn read_depth(path: &Path) -> Result<Field2> {
    decode_depth(path, &read_bytes(path)?)
}

/// 8-bit P6 encoding of an image in [0, 1]; single-channel images are written as gray.
pub fn encode_ppm(image: &Field2) -> Result<Vec<u8>> {
    let (h, w, c) = image.shape();
    if c != 3 && c != 1 {
        return Err(Error::shape("image channels", "1 or 3", c));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for px in image.data().chunks(c) {
        for ch in 0..3 {
            let v = px[if c == 1 { 0 } else { ch }];
            out.push((255.0 * v.clamp(0.0, 1.0)).round() as u8);
        }
    }
    Ok(out)
}

pub fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<Field2> {
    let mut pos = 0usize;
    let err = |offset: usize, msg: String| Error::Binary {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    let token = |pos: &mut usize| -> Result<(usize, String)> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(err(start, "truncated PPM header".into()));
        }
        Ok((start, String::from_utf8_lossy(&bytes[start..*pos]).into_owned()))
    };
    let (at, magic) = token(&mut pos)?;
    if magic != "P6" {
        return Err(err(at, format!("bad magic {magic:?}, expected \"P6\"")));
    }
    let mut fields = [0usize; 3];
    for (f, name) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        let (at, t) = token(&mut pos)?;
        *f = t
            .parse()
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| err(at, format!("invalid {name} {t:?}")))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(err(pos, format!("unsupported maxval {maxval}, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| err(pos, "dimensions overflow".into()))?;
    if bytes.len() < pos + n {
        return Err(err(
            bytes.len(),
            format!("truncated raster: need {n} bytes at offset {pos}"),
        ));
    }
    if bytes.len() > pos + n {
        return Err(err(pos + n, format!("{} trailing bytes", bytes.len() - pos - n)));
    }
    let data = bytes[pos..pos + n].iter().map(|b| *b as f64 / 255.0).collect();
    Field2::from_vec(h, w, 3, data)
}

pub fn write_ppm(path: &Path, image: &Field2) -> Result<()> {
    write_atomic(path, &encode_ppm(image)?)
}

pub fn read_ppm(path: &Path) -> Result<Field2> {
    decode_ppm(path, &read_bytes(path)?)
}

/// One line of 12 floats; shortest round-trip decimal formatting.
pub fn format_pose(pose: &Se3Pose) -> String {
    pose.to_row_major_3x4()
        .iter()
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn encode_poses(poses: &[Se3Pose]) -> String {
    poses.iter().map(|p| format_pose(p) + "\n").collect()
}

/// Parses KITTI pose lines; blank lines are skipped, rotations re-orthonormalized.
pub fn decode_poses(path: &Path, text: &str) -> Result<Vec<Se3Pose>> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |msg: String| Error::Text {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("invalid number {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let m: [f64; 12] = values
            .as_slice()
            .try_into()
            .map_err(|_| err(format!("expected 12 values, found {}", values.len())))?;
        poses.push(Se3Pose::from_row_major_3x4(&m).map_err(|e| err(e.to_string()))?);
    }
    Ok(poses)
}

pub fn write_poses(path: &Path, poses: &[Se3Pose]) -> Result<()> {
    write_atomic(path, encode_poses(poses).as_bytes())
}

pub fn read_poses(path: &Path) -> Result<Vec<Se3Pose>> {
    decode_poses(path, &read_text(path)?)
}

pub fn encode_intrinsics(k: &CameraIntrinsics) -> String {
    format!(
        "fx = {:e}\nfy = {:e}\ncx = {:e}\ncy = {:e}\nwidth = {}\nheight = {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    )
}

pub fn decode_intrinsics(path: &Path, text: &str) -> Result<CameraIntrinsics> {
    let mut f = [None::<f64>; 4];
    let mut size = [None::<usize>; 2];
    let mut last_line = 0;
    for (i, line) in text.lines().enumerate() {
        last_line = i + 1;
        let err = |msg: String| Error::Text {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
        match key {
            "fx" | "fy" | "cx" | "cy" => {
                let idx = ["fx", "fy", "cx", "cy"]
                    .iter()
                    .position(|k| *k == key)
                    .expect("known key");
                f[idx] = Some(
                    value
                        .parse()
                        .ok()
                        .filter(|v: &f64| v.is_finite())
                        .ok_or_else(|| err(format!("invalid {key} {value:?}")))?,
                );
            }
            "width" | "height" => {
                let idx = usize::from(key == "height");
                size[idx] = Some(value.parse().map_err(|_| err(format!("invalid {key} {value:?}")))?);
            }
            other => return Err(err(format!("unknown key {other:?}"))),
        }
    }
    let missing = |name: &str| Error::Text {
        path: path.to_path_buf(),
        line: last_line,
        msg: format!("missing {name}"),
    };
    let [fx, fy, cx, cy] =
        [("fx", f[0]), ("fy", f[1]), ("cx", f[2]), ("cy", f[3])].map(|(n, v)| v.ok_or_else(|| missing(n)));
    let width = size[0].ok_or_else(|| missing("width"))?;
    let height = size[1].ok_or_else(|| missing("height"))?;
    CameraIntrinsics::new(fx?, fy?, cx?, cy?, width, height)
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    write_atomic(path, encode_intrinsics(k).as_bytes())
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    decode_intrinsics(path, &read_text(path)?)
}

/// Features are stored as f32.
pub fn encode_fused(v: &FusedVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 4 * v.features.len());
    out.extend_from_slice(FUSED_MAGIC);
    for d in v.block_dims.iter().chain([&v.frames, &v.channels]) {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for f in &v.features {
        out.extend_from_slice(&(*f as f32).to_le_bytes());
    }
    out
}

pub fn decode_fused(path: &Path, bytes: &[u8]) -> Result<FusedVolume> {
    let mut r = Reader::new(path, bytes);
    r.magic(FUSED_MAGIC)?;
    let block_dims = [r.dim("block X")?, r.dim("block Y")?, r.dim("block Z")?];
    let frames = r.u32("frames")? as usize;
    let channels = r.u32("channels")? as usize;
    let n = checked_product(&[block_dims[0], block_dims[1], block_dims[2], frames, channels], &r)?;
    let features = (0..n).map(|_| r.f32("feature").map(f64::from)).collect::<Result<_>>()?;
    r.finish()?;
    Ok(FusedVolume {
        block_dims,
        frames,
        channels,
        features,
    })
}

pub fn write_fused(path: &Path, v: &FusedVolume) -> Result<()> {
    write_atomic(path, &encode_fused(v))
}

pub fn read_fused(path: &Path) -> Result<FusedVolume> {
    decode_fused(path, &read_bytes(path)?)
}

/// Projections are stored as f32.
pub fn encode_blocks(bv: &BlockVisibility) -> Vec<u8> {
    let n = bv.block_count();
    let mut out = Vec::with_capacity(20 + bv.frames.len() * n * 13);
    out.extend_from_slice(BLOCKS_MAGIC);
    for d in bv.block_dims.iter().chain([&bv.frames.len()]) {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for f in &bv.frames {
        for p in &f.projections {
            let (flag, p) = match p {
                Some(p) => (1u8, *p),
                None => (0u8, PixelDepth { u: 0.0, v: 0.0, d: 0.0 }),
            };
            out.push(flag);
            for x in [p.u, p.v, p.d] {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_blocks(path: &Path, bytes: &[u8]) -> Result<BlockVisibility> {
    let mut r = Reader::new(path, bytes);
    r.magic(BLOCKS_MAGIC)?;
    let block_dims = [r.dim("block X")?, r.dim("block Y")?, r.dim("block Z")?];
    let frames = r.u32("frames")? as usize;
    let n = checked_product(&block_dims, &r)?;
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut projections = Vec::with_capacity(n);
        for _ in 0..n {
            let at = r.pos;
            let flag = r.u8("visibility flag")?;
            let p = PixelDepth {
                u: r.f32("u")? as f64,
                v: r.f32("v")? as f64,
                d: r.f32("d")? as f64,
            };
            projections.push(match flag {
                0 => None,
                1 => Some(p),
                other => return Err(r.error(at, format!("visibility flag must be 0 or 1, got {other}"))),
            });
        }
        out.push(FrameBlocks { projections });
    }
    r.finish()?;
    Ok(BlockVisibility {
        block_dims,
        frames: out,
    })
}

pub fn write_blocks(path: &Path, bv: &BlockVisibility) -> Result<()> {
    write_atomic(path, &encode_blocks(bv))
}

pub fn read_blocks(path: &Path) -> Result<BlockVisibility> {
    decode_blocks(path, &read_bytes(path)?)
}

/// `NNNNNN.ppm` / `NNNNNN.dpt` paths of a frame inside a sequence directory.
pub fn frame_paths(dir: &Path, index: i64) -> (PathBuf, PathBuf) {
    (dir.join(format!("{index:06}.ppm")), dir.join(format!("{index:06}.dpt")))
}

/// Writes a frame's image and depth under its index; poses live in `poses.txt`.
pub fn write_frame(dir: &Path, frame: &FrameBundle) -> Result<()> {
    let (img, dpt) = frame_paths(dir, frame.frame_index);
    write_ppm(&img, &frame.image)?;
    write_depth(&dpt, &frame.depth)
}

/// Loads every `frame_interval`-th frame, starting at 0, of the sequence whose
/// length is the number of poses in `poses.txt` (line i is frame i).
pub fn load_frame_sequence(dir: &Path, frame_interval: usize) -> Result<Vec<FrameBundle>> {
    if frame_interval == 0 {
        return Err(Error::domain("frame interval must be positive"));
    }
    let poses = read_poses(&dir.join(POSES_FILE))?;
    (0..poses.len())
        .step_by(frame_interval)
        .map(|i| {
            let (img, dpt) = frame_paths(dir, i as i64);
            let image = read_ppm(&img)?;
            let depth = read_depth(&dpt)?;
            FrameBundle::new(image, depth, poses[i], i as i64)
                .map_err(|e| Error::Domain(format!("{}: {e}", img.display())))
        })
        .collect()
}
