//! Training-loss kernels: scene-class affinity (semantic and geometric),
//! class-weighted cross-entropy, and the image/feature/depth/pose losses
//! used to supervise pseudo-future synthesis.
//!
//! Voxel losses return analytic gradients with respect to every input
//! probability. All reductions go through [`pairwise_sum`], so results do not
//! depend on thread scheduling.

use crate::error::{Error, Result};
use crate::forecast::pose_mse;
use crate::fusion::{SceneGrid, EMPTY_LABEL, INVALID_LABEL};
use crate::geom::{Field2, Se3Pose};

/// Lower clamp applied to every log argument.
pub const LOG_CLAMP: f64 = 1e-8;

const SIMPLEX_TOL: f64 = 1e-6;
const PAIRWISE_LEAF: usize = 32;

/// Deterministic tree summation of `f(0) + ... + f(n - 1)`.
pub fn pairwise_sum(n: usize, f: &impl Fn(usize) -> f64) -> f64 {
    fn go(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
        if hi - lo <= PAIRWISE_LEAF {
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            return s;
        }
        let mid = lo + (hi - lo) / 2;
        go(lo, mid, f) + go(mid, hi, f)
    }
    go(0, n, f)
}

/// Per-voxel class probabilities, voxel-major with the class index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVolume {
    dims: [usize; 3],
    classes: usize,
    probs: Vec<f64>,
}

impl ProbVolume {
    /// Validates entries in `[0, 1]` summing to 1 (within 1e-6) per voxel.
    pub fn new(dims: [usize; 3], classes: usize, probs: Vec<f64>) -> Result<Self> {
        let v = Self::from_raw(dims, classes, probs)?;
        for (i, p) in v.probs.chunks(classes).enumerate() {
            if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::domain(format!("voxel {i} has a probability outside [0, 1]")));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::domain(format!("voxel {i} probabilities sum to {s}")));
            }
        }
        Ok(v)
    }

    /// Shape-checked only; the loss kernels accept off-simplex inputs, which
    /// finite-difference checks rely on.
    pub fn from_raw(dims: [usize; 3], classes: usize, probs: Vec<f64>) -> Result<Self> {
        if classes == 0 || classes > INVALID_LABEL as usize {
            return Err(Error::domain(format!("class count {classes} must be in 1..=255")));
        }
        let n = dims.iter().product::<usize>() * classes;
        if probs.len() != n {
            return Err(Error::shape("probability count", n, probs.len()));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("probabilities must be finite"));
        }
        Ok(Self { dims, classes, probs })
    }

    /// One-hot volume from labels; invalid voxels get a uniform distribution.
    pub fn one_hot(gt: &LabelVolume, classes: usize) -> Result<Self> {
        gt.check_classes(classes)?;
        let mut probs = vec![0.0; gt.len() * classes];
        for (i, &l) in gt.labels.iter().enumerate() {
            let p = &mut probs[i * classes..(i + 1) * classes];
            if l == INVALID_LABEL {
                p.fill(1.0 / classes as f64);
            } else {
                p[l as usize] = 1.0;
            }
        }
        Ok(Self {
            dims: gt.dims,
            classes,
            probs,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn probs_mut(&mut self) -> &mut [f64] {
        &mut self.probs
    }

    #[inline]
    pub fn get(&self, voxel: usize, class: usize) -> f64 {
        self.probs[voxel * self.classes + class]
    }

    /// Most probable class per voxel (lowest index on ties).
    pub fn argmax_labels(&self) -> Vec<u8> {
        self.probs
            .chunks(self.classes)
            .map(|p| {
                let mut best = 0;
                for (c, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// Ground-truth class ids; `255` marks voxels excluded from every loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 3],
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], labels: Vec<u8>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if labels.len() != n {
            return Err(Error::shape("label count", n, labels.len()));
        }
        Ok(Self { dims, labels })
    }

    pub fn from_grid(grid: &SceneGrid) -> Self {
        Self {
            dims: grid.dims(),
            labels: grid.labels().to_vec(),
        }
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn is_valid(&self, voxel: usize) -> bool {
        self.labels[voxel] != INVALID_LABEL
    }

    pub fn valid_count(&self) -> usize {
        self.labels.iter().filter(|l| **l != INVALID_LABEL).count()
    }

    fn check_classes(&self, classes: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .find(|&&l| l != INVALID_LABEL && l as usize >= classes)
        {
            Some(l) => Err(Error::domain(format!(
                "label {l} is not below the class count {classes}"
            ))),
            None => Ok(()),
        }
    }
}

/// Loss value plus its gradient with respect to every input probability.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWithGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Some log argument fell below the clamp; the loss is finite but the
    /// clamped term contributes no gradient.
    pub degenerate: bool,
}

fn check_pair(pred: &ProbVolume, gt: &LabelVolume) -> Result<()> {
    if pred.dims != gt.dims {
        return Err(Error::shape(
            "label dims",
            format!("{:?}", pred.dims),
            format!("{:?}", gt.dims),
        ));
    }
    gt.check_classes(pred.classes)
}

/// `ln(max(x, LOG_CLAMP))` and whether the clamp was inactive.
#[inline]
fn clamped_ln(x: f64) -> (f64, bool) {
    if x >= LOG_CLAMP {
        (x.ln(), true)
    } else {
        (LOG_CLAMP.ln(), false)
    }
}

/// Per-class terms for one class.
struct ClassTerms {
    value: f64,
    // derivative coefficients: d/dp_{i,c} = y * on_target + (1 - y) * off_target + all
    on_target: f64,
    off_target: f64,
    all: f64,
    degenerate: bool,
}

fn class_terms(tp: f64, psum: f64, positives: f64, tn: f64, negatives: f64) -> ClassTerms {
    let mut t = ClassTerms {
        value: 0.0,
        on_target: 0.0,
        off_target: 0.0,
        all: 0.0,
        degenerate: false,
    };
    if psum > 0.0 {
        let (v, live) = clamped_ln(tp / psum);
        t.value += v;
        if live {
            t.on_target += 1.0 / tp;
            t.all -= 1.0 / psum;
        } else {
            t.degenerate = true;
        }
    }
    if positives > 0.0 {
        let (v, live) = clamped_ln(tp / positives);
        t.value += v;
        if live {
            t.on_target += 1.0 / tp;
        } else {
            t.degenerate = true;
        }
    }
    if negatives > 0.0 {
        let (v, live) = clamped_ln(tn / negatives);
        t.value += v;
        if live {
            t.off_target -= 1.0 / tn;
        } else {
            t.degenerate = true;
        }
    }
    t
}

/// Scene-class affinity loss over a flat `n x classes` probability array.
fn scal_flat(probs: &[f64], labels: &[u8], classes: usize) -> LossWithGrad {
    let n = labels.len();
    let valid = |i: usize| labels[i] != INVALID_LABEL;
    let mut grad = vec![0.0; probs.len()];
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let is_c = |i: usize| labels[i] as usize == c;
        let p = |i: usize| probs[i * classes + c];
        let tp = pairwise_sum(n, &|i| if is_c(i) { p(i) } else { 0.0 });
        let psum = pairwise_sum(n, &|i| if valid(i) { p(i) } else { 0.0 });
        let positives = pairwise_sum(n, &|i| if is_c(i) { 1.0 } else { 0.0 });
        let negatives = pairwise_sum(n, &|i| if valid(i) && !is_c(i) { 1.0 } else { 0.0 });
        let tn = pairwise_sum(n, &|i| if valid(i) && !is_c(i) { 1.0 - p(i) } else { 0.0 });
        // classes with neither support nor predicted mass have no defined terms
        if positives == 0.0 && psum == 0.0 {
            per_class.push(None);
            continue;
        }
        per_class.push(Some(class_terms(tp, psum, positives, tn, negatives)));
    }
    let contributing = per_class.iter().filter(|t| t.is_some()).count();
    if contributing == 0 {
        return LossWithGrad {
            loss: 0.0,
            grad,
            degenerate: false,
        };
    }
    let scale = -1.0 / contributing as f64;
    let loss = scale * per_class.iter().flatten().map(|t| t.value).sum::<f64>();
    for i in (0..n).filter(|&i| valid(i)) {
        for (c, t) in per_class.iter().enumerate() {
            let Some(t) = t else { continue };
            let coef = if labels[i] as usize == c {
                t.on_target
            } else {
                t.off_target
            };
            grad[i * classes + c] = scale * (coef + t.all);
        }
    }
    LossWithGrad {
        loss,
        grad,
        degenerate: per_class.iter().flatten().any(|t| t.degenerate),
    }
}

/// Semantic scene-class affinity loss `-(1/C') Σ_c (P_c + R_c + S_c)` over the
/// `C'` classes that have ground-truth support or predicted mass.
pub fn scal_sem(pred: &ProbVolume, gt: &LabelVolume) -> Result<LossWithGrad> {
    check_pair(pred, gt)?;
    Ok(scal_flat(&pred.probs, &gt.labels, pred.classes))
}

/// Geometric affinity loss: the same loss on the binary empty/occupied
/// problem with occupancy probability `1 - p_empty`.
pub fn scal_geo(pred: &ProbVolume, gt: &LabelVolume) -> Result<LossWithGrad> {
    check_pair(pred, gt)?;
    let c = pred.classes;
    let n = gt.len();
    let mut binary = Vec::with_capacity(2 * n);
    for i in 0..n {
        let empty = pred.probs[i * c + EMPTY_LABEL as usize];
        binary.push(empty);
        binary.push(1.0 - empty);
    }
    let labels: Vec<u8> = gt
        .labels
        .iter()
        .map(|&l| match l {
            INVALID_LABEL => INVALID_LABEL,
            EMPTY_LABEL => 0,
            _ => 1,
        })
        .collect();
    let inner = scal_flat(&binary, &labels, 2);
    let mut grad = vec![0.0; pred.probs.len()];
    for i in 0..n {
        grad[i * c + EMPTY_LABEL as usize] = inner.grad[2 * i] - inner.grad[2 * i + 1];
    }
    Ok(LossWithGrad {
        loss: inner.loss,
        grad,
        degenerate: inner.degenerate,
    })
}

/// Inverse class frequency over valid ground-truth voxels, normalized to mean
/// 1 over the represented classes. Unrepresented classes get weight 1.
pub fn inverse_frequency_weights(gt: &LabelVolume, classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &l in &gt.labels {
        if l != INVALID_LABEL && (l as usize) < classes {
            counts[l as usize] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let inv: Vec<Option<f64>> = counts
        .iter()
        .map(|&n| (n > 0).then(|| total as f64 / n as f64))
        .collect();
    let present: Vec<f64> = inv.iter().flatten().copied().collect();
    if present.is_empty() {
        return vec![1.0; classes];
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    inv.iter().map(|w| w.map_or(1.0, |w| w / mean)).collect()
}

/// Mean over valid voxels of `-w[y] ln(max(p[y], 1e-8))`.
pub fn weighted_ce(pred: &ProbVolume, gt: &LabelVolume, class_weights: &[f64]) -> Result<LossWithGrad> {
    check_pair(pred, gt)?;
    let c = pred.classes;
    if class_weights.len() != c {
        return Err(Error::shape("class weight count", c, class_weights.len()));
    }
    if class_weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::domain("class weights must be non-negative"));
    }
    let n = gt.len();
    let valid = gt.valid_count();
    let mut grad = vec![0.0; pred.probs.len()];
    if valid == 0 {
        return Ok(LossWithGrad {
            loss: 0.0,
            grad,
            degenerate: false,
        });
    }
    let nv = valid as f64;
    let term = |i: usize| {
        let l = gt.labels[i];
        if l == INVALID_LABEL {
            return 0.0;
        }
        -class_weights[l as usize] * clamped_ln(pred.probs[i * c + l as usize]).0
    };
    let loss = pairwise_sum(n, &term) / nv;
    let mut degenerate = false;
    for (i, &l) in gt.labels.iter().enumerate() {
        if l == INVALID_LABEL {
            continue;
        }
        let idx = i * c + l as usize;
        let p = pred.probs[idx];
        if p >= LOG_CLAMP {
            grad[idx] = -class_weights[l as usize] / (nv * p);
        } else {
            degenerate = true;
        }
    }
    Ok(LossWithGrad { loss, grad, degenerate })
}

/// Binary cross-entropy `-[y ln p + (1 - y) ln(1 - p)]`, averaged; the C = 2
/// special case of [`weighted_ce`] with unit weights and soft targets.
pub fn binary_ce(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape("binary target count", pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let term = |i: usize| {
        let (p, y) = (pred[i], target[i]);
        -(y * clamped_ln(p).0 + (1.0 - y) * clamped_ln(1.0 - p).0)
    };
    Ok(pairwise_sum(pred.len(), &term) / pred.len() as f64)
}

/// Absolute difference summed over channels, averaged over the `H * W` positions.
pub fn l1_field(a: &Field2, b: &Field2) -> Result<f64> {
    a.ensure_same_shape(b, "l1 field")?;
    let (da, db) = (a.data(), b.data());
    let hw = (a.height() * a.width()) as f64;
    if hw == 0.0 {
        return Ok(0.0);
    }
    Ok(pairwise_sum(da.len(), &|i| (da[i] - db[i]).abs()) / hw)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable 'valid' Gaussian filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            let mut s = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                s += kv * plane[r * w + c + t];
            }
            horiz[r * ow + c] = s;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            let mut s = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                s += kv * horiz[(r + t) * ow + c];
            }
            out[r * ow + c] = s;
        }
    }
    out
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5) over valid window
/// positions, computed per channel and averaged across channels.
pub fn ssim(a: &Field2, b: &Field2) -> Result<f64> {
    a.ensure_same_shape(b, "ssim image")?;
    let (h, w, ch) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::domain(format!(
            "image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    if ch == 0 {
        return Err(Error::domain("ssim needs at least one channel"));
    }
    let kernel = gaussian_kernel();
    let mut total = 0.0;
    for c in 0..ch {
        let x: Vec<f64> = (0..h * w).map(|i| a.data()[i * ch + c]).collect();
        let y: Vec<f64> = (0..h * w).map(|i| b.data()[i * ch + c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, exx, eyy, exy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &kernel));
        let map = |i: usize| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cov = exy[i] - ux * uy;
            ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
        };
        total += pairwise_sum(mx.len(), &map) / mx.len() as f64;
    }
    Ok(total / ch as f64)
}

/// `1 - ssim(a, b)`, in `[0, 2]`.
pub fn ssim_loss(a: &Field2, b: &Field2) -> Result<f64> {
    Ok(1.0 - ssim(a, b)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SscLoss {
    pub geo: f64,
    pub sem: f64,
    pub ce: f64,
    pub total: f64,
}

/// `scal_geo + scal_sem + weighted_ce` with inverse-frequency class weights.
pub fn total_ssc_loss(pred: &ProbVolume, gt: &LabelVolume) -> Result<SscLoss> {
    let weights = inverse_frequency_weights(gt, pred.classes);
    ssc_loss_with_weights(pred, gt, &weights)
}

pub fn ssc_loss_with_weights(pred: &ProbVolume, gt: &LabelVolume, class_weights: &[f64]) -> Result<SscLoss> {
    let geo = scal_geo(pred, gt)?.loss;
    let sem = scal_sem(pred, gt)?.loss;
    let ce = weighted_ce(pred, gt, class_weights)?.loss;
    Ok(SscLoss {
        geo,
        sem,
        ce,
        total: geo + sem + ce,
    })
}

/// Weights of the synthesis loss terms.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub pose: f64,
    pub image: f64,
    pub feature: f64,
    pub ssim: f64,
    pub depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pose: 0.1,
            image: 1.0,
            feature: 1.0,
            ssim: 1.0,
            depth: 1.0,
        }
    }
}

/// Predictions and targets for the synthesis loss.
#[derive(Clone, Copy, Debug)]
pub struct SynthTargets<'a> {
    pub pose: &'a Se3Pose,
    pub image: &'a Field2,
    pub features: &'a Field2,
    pub depth: &'a Field2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthLoss {
    pub pose_mse: f64,
    pub image_l1: f64,
    pub feature_l1: f64,
    pub image_ssim: f64,
    pub depth_l1: f64,
    pub total: f64,
}

/// Weighted sum of pose MSE, image/feature/depth L1 and image SSIM loss.
pub fn total_synth_loss(pred: SynthTargets<'_>, gt: SynthTargets<'_>, w: &LossWeights) -> Result<SynthLoss> {
    let weights = [w.pose, w.image, w.feature, w.ssim, w.depth];
    if weights.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::domain("loss weights must be non-negative"));
    }
    let pose = pose_mse(pred.pose, gt.pose);
    let image_l1 = l1_field(pred.image, gt.image)?;
    let feature_l1 = l1_field(pred.features, gt.features)?;
    let image_ssim = ssim_loss(pred.image, gt.image)?;
    let depth_l1 = l1_field(pred.depth, gt.depth)?;
    Ok(SynthLoss {
        pose_mse: pose,
        image_l1,
        feature_l1,
        image_ssim,
        depth_l1,
        total: w.pose * pose + w.image * image_l1 + w.feature * feature_l1 + w.ssim * image_ssim + w.depth * depth_l1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(probs: &[&[f64]]) -> ProbVolume {
        let c = probs[0].len();
        ProbVolume::new([probs.len(), 1, 1], c, probs.concat()).unwrap()
    }

    fn labels(l: &[u8]) -> LabelVolume {
        LabelVolume::new([l.len(), 1, 1], l.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let gt = labels(&[0, 1, 2, 1, 255]);
        let pred = ProbVolume::one_hot(&gt, 4).unwrap();
        assert_eq!(scal_sem(&pred, &gt).unwrap().loss, 0.0);
        assert_eq!(scal_geo(&pred, &gt).unwrap().loss, 0.0);
        assert_eq!(weighted_ce(&pred, &gt, &[1.0; 4]).unwrap().loss, 0.0);
        assert_eq!(total_ssc_loss(&pred, &gt).unwrap().total, 0.0);
    }

    #[test]
    fn ce_single_voxel() {
        let r = weighted_ce(&vol(&[&[0.5, 0.5]]), &labels(&[1]), &[1.0, 1.0]).unwrap();
        assert!((r.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(r.grad, vec![0.0, -2.0]);
    }

    #[test]
    fn invalid_voxels_are_ignored() {
        let pred = vol(&[&[0.8, 0.2], &[0.4, 0.6], &[0.1, 0.9]]);
        let with_invalid = labels(&[0, 1, 255]);
        let trimmed_pred = vol(&[&[0.8, 0.2], &[0.4, 0.6]]);
        let trimmed = labels(&[0, 1]);
        let a = scal_sem(&pred, &with_invalid).unwrap();
        let b = scal_sem(&trimmed_pred, &trimmed).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-15);
        assert_eq!(&a.grad[4..], &[0.0, 0.0]);
    }

    #[test]
    fn label_out_of_range_rejected() {
        assert!(scal_sem(&vol(&[&[0.5, 0.5]]), &labels(&[2])).is_err());
        assert!(weighted_ce(&vol(&[&[0.5, 0.5]]), &labels(&[0]), &[1.0]).is_err());
    }

    #[test]
    fn absent_predicted_class_is_degenerate_but_finite() {
        // class 1 has no support but receives mass: precision is log(0) clamped
        let r = scal_sem(&vol(&[&[0.7, 0.3], &[0.9, 0.1]]), &labels(&[0, 0])).unwrap();
        assert!(r.loss.is_finite());
        assert!(r.degenerate);
    }

    #[test]
    fn inverse_frequency_normalized() {
        let w = inverse_frequency_weights(&labels(&[0, 0, 0, 1, 255]), 3);
        // raw 4/3 and 4/1, mean 8/3
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 1.5).abs() < 1e-15);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn binary_ce_values() {
        assert!((binary_ce(&[0.5], &[1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(binary_ce(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        // matches the two-class weighted CE on hard targets
        let multi = weighted_ce(&vol(&[&[0.3, 0.7], &[0.6, 0.4]]), &labels(&[1, 0]), &[1.0, 1.0]).unwrap();
        let bin = binary_ce(&[0.7, 0.4], &[1.0, 0.0]).unwrap();
        assert!((multi.loss - bin).abs() < 1e-15);
    }

    #[test]
    fn l1_examples() {
        let a = Field2::from_vec(1, 2, 1, vec![0.0, 0.0]).unwrap();
        let b = Field2::from_vec(1, 2, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(l1_field(&a, &b).unwrap(), 2.0);
        assert_eq!(l1_field(&b, &a).unwrap(), 2.0);
        assert_eq!(l1_field(&a, &a).unwrap(), 0.0);
        let c = Field2::zeros(2, 1, 1);
        assert!(l1_field(&a, &c).is_err());
        // channels are summed, not averaged
        let x = Field2::zeros(1, 1, 3);
        let y = Field2::filled(1, 1, 3, 1.0);
        assert_eq!(l1_field(&x, &y).unwrap(), 3.0);
    }

    #[test]
    fn ssim_examples() {
        let a = Field2::from_fn(16, 20, 3, |r, c, ch| ((r * 7 + c * 3 + ch) % 11) as f64 / 10.0);
        let b = Field2::from_fn(16, 20, 3, |r, c, ch| ((r * 5 + c + 2 * ch) % 13) as f64 / 12.0);
        assert!(ssim_loss(&a, &a).unwrap().abs() < 1e-9);
        let ab = ssim_loss(&a, &b).unwrap();
        assert!((ab - ssim_loss(&b, &a).unwrap()).abs() < 1e-15);
        assert!((0.0..=2.0).contains(&ab));

        let (v, w) = (0.3, 0.8);
        let cv = Field2::filled(12, 12, 1, v);
        let cw = Field2::filled(12, 12, 1, w);
        let expected = (2.0 * v * w + SSIM_C1) / (v * v + w * w + SSIM_C1);
        assert!((ssim(&cv, &cw).unwrap() - expected).abs() < 1e-9);

        assert!(ssim(&Field2::zeros(10, 12, 1), &Field2::zeros(10, 12, 1)).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let f = |i: usize| i as f64;
        assert_eq!(pairwise_sum(1000, &f), 499500.0);
        assert_eq!(pairwise_sum(0, &f), 0.0);
    }
}
