//! Constant-velocity pose extrapolation in the Lie algebra of SE(3).

use crate::error::{Error, Result};
use crate::geom::{se3_exp, se3_log, Se3Pose, Twist};

/// Upper bound on the default averaging window.
pub const DEFAULT_MAX_WINDOW: usize = 3;

/// World-from-camera poses sampled every `frame_interval` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    poses: Vec<Se3Pose>,
    frame_indices: Vec<i64>,
    frame_interval: i64,
}

impl PoseSequence {
    pub fn new(poses: Vec<Se3Pose>, frame_indices: Vec<i64>, frame_interval: i64) -> Result<Self> {
        if frame_interval <= 0 {
            return Err(Error::domain("frame interval must be positive"));
        }
        if poses.len() != frame_indices.len() {
            return Err(Error::shape("frame index count", poses.len(), frame_indices.len()));
        }
        if let Some(w) = frame_indices.windows(2).find(|w| w[1] - w[0] != frame_interval) {
            return Err(Error::domain(format!(
                "frame indices {} and {} are not spaced by the interval {frame_interval}",
                w[0], w[1]
            )));
        }
        Ok(Self {
            poses,
            frame_indices,
            frame_interval,
        })
    }

    /// Indices `first, first + interval, ...` for the given poses.
    pub fn evenly_spaced(poses: Vec<Se3Pose>, first_index: i64, frame_interval: i64) -> Result<Self> {
        let indices = (0..poses.len() as i64)
            .map(|i| first_index + i * frame_interval)
            .collect();
        Self::new(poses, indices, frame_interval)
    }

    pub fn poses(&self) -> &[Se3Pose] {
        &self.poses
    }

    pub fn frame_indices(&self) -> &[i64] {
        &self.frame_indices
    }

    pub fn frame_interval(&self) -> i64 {
        self.frame_interval
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn last(&self) -> Option<&Se3Pose> {
        self.poses.last()
    }

    /// Sub-sequence of the first `n` poses.
    pub fn prefix(&self, n: usize) -> PoseSequence {
        let n = n.min(self.len());
        PoseSequence {
            poses: self.poses[..n].to_vec(),
            frame_indices: self.frame_indices[..n].to_vec(),
            frame_interval: self.frame_interval,
        }
    }

    /// `min(k, 3)` where `k` is the number of past steps available.
    pub fn default_window(&self) -> usize {
        self.len().saturating_sub(1).min(DEFAULT_MAX_WINDOW)
    }
}

/// Mean per-step body twist of the recent motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentumTwist {
    pub xi: Twist,
}

/// Averages `log(P_{i-1}⁻¹ ∘ P_i)` over the last `window` consecutive pose pairs.
pub fn momentum(seq: &PoseSequence, window: usize) -> Result<MomentumTwist> {
    if window == 0 {
        return Err(Error::domain("momentum window must be positive"));
    }
    if seq.len() < window + 1 {
        return Err(Error::domain(format!(
            "momentum window {window} needs {} poses, sequence has {}",
            window + 1,
            seq.len()
        )));
    }
    let tail = &seq.poses[seq.len() - window - 1..];
    let mut sum = Twist::zeros();
    for pair in tail.windows(2) {
        sum += se3_log(&pair[0].inverse().compose(&pair[1]))?;
    }
    let xi = sum / window as f64;
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("momentum twist is not finite"));
    }
    Ok(MomentumTwist { xi })
}

/// Predicted next pose `P_t ∘ exp(xi)`.
pub fn extrapolate(seq: &PoseSequence, m: &MomentumTwist) -> Result<Se3Pose> {
    let current = seq
        .last()
        .ok_or_else(|| Error::domain("cannot extrapolate an empty pose sequence"))?;
    Ok(current.compose(&se3_exp(&m.xi)))
}

/// Convenience: momentum over `window` steps followed by extrapolation.
pub fn forecast_next(seq: &PoseSequence, window: usize) -> Result<Se3Pose> {
    let m = momentum(seq, window)?;
    extrapolate(seq, &m)
}

/// Mean squared difference over the 12 entries of the `[R | t]` matrices.
pub fn pose_mse(pred: &Se3Pose, gt: &Se3Pose) -> f64 {
    let a = pred.to_row_major_3x4();
    let b = gt.to_row_major_3x4();
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 12.0
}
