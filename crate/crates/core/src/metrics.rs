//! SSC evaluation: geometric IoU, semantic mIoU and block coverage.

use crate::error::{Error, Result};
use crate::fusion::{BlockVisibility, SceneGrid, BLOCK_SIZE, EMPTY_LABEL, INVALID_LABEL};

/// `counts[gt][pred]` over voxels whose ground truth is not 255.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, gt: usize) -> u64 {
        (0..self.classes).map(|p| self.get(gt, p)).sum()
    }

    fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|g| self.get(g, pred)).sum()
    }

    /// Per-class IoU; `None` where the class is absent from both gt and prediction.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let union = self.row_sum(c) + self.col_sum(c) - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }
}

/// Accumulates the confusion matrix; predicted 255 counts as empty.
pub fn confusion(pred: &SceneGrid, gt: &SceneGrid, classes: usize) -> Result<ConfusionMatrix> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(
            "grid dims",
            format!("{:?}", gt.dims()),
            format!("{:?}", pred.dims()),
        ));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if g == INVALID_LABEL {
            continue;
        }
        let p = if p == INVALID_LABEL { EMPTY_LABEL } else { p };
        if g as usize >= classes || p as usize >= classes {
            return Err(Error::domain(format!(
                "label pair (gt {g}, pred {p}) exceeds class count {classes}"
            )));
        }
        cm.counts[g as usize * classes + p as usize] += 1;
    }
    Ok(cm)
}

/// A ratio whose 0/0 case is reported as 1 with `degenerate` set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub value: f64,
    pub degenerate: bool,
}

/// Occupied-vs-empty IoU, occupied meaning any class other than 0.
pub fn iou_geometry(cm: &ConfusionMatrix) -> Score {
    let e = EMPTY_LABEL as usize;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for g in 0..cm.classes {
        for p in 0..cm.classes {
            let n = cm.get(g, p);
            match (g != e, p != e) {
                (true, true) => tp += n,
                (false, true) => fp += n,
                (true, false) => fn_ += n,
                (false, false) => {}
            }
        }
    }
    let denom = tp + fp + fn_;
    if denom == 0 {
        Score {
            value: 1.0,
            degenerate: true,
        }
    } else {
        Score {
            value: tp as f64 / denom as f64,
            degenerate: false,
        }
    }
}

/// Mean IoU over the non-empty classes present in gt or prediction.
pub fn miou_semantic(cm: &ConfusionMatrix) -> Score {
    let ious: Vec<f64> = cm
        .per_class_iou()
        .into_iter()
        .enumerate()
        .filter(|(c, _)| *c != EMPTY_LABEL as usize)
        .filter_map(|(_, v)| v)
        .collect();
    if ious.is_empty() {
        return Score {
            value: 1.0,
            degenerate: true,
        };
    }
    Score {
        value: ious.iter().sum::<f64>() / ious.len() as f64,
        degenerate: false,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coverage {
    pub per_frame: Vec<usize>,
    pub union: usize,
}

pub fn coverage(bv: &BlockVisibility) -> Coverage {
    Coverage {
        per_frame: bv.frames.iter().map(|f| f.visible_count()).collect(),
        union: bv.union_visible().iter().filter(|v| **v).count(),
    }
}

/// Oracle-assisted completion: copies ground truth inside blocks visible in
/// any frame and leaves everything else empty. An upper bound for what can be
/// recovered from visible space, used for end-to-end demos only.
pub fn majority_complete(bv: &BlockVisibility, gt: &SceneGrid) -> Result<SceneGrid> {
    let dims = gt.dims();
    let expected = dims.map(|d| d / BLOCK_SIZE);
    if dims.iter().any(|d| d % BLOCK_SIZE != 0) || expected != bv.block_dims {
        return Err(Error::shape(
            "block dims",
            format!("{expected:?}"),
            format!("{:?}", bv.block_dims),
        ));
    }
    let union = bv.union_visible();
    let mut out = SceneGrid::empty(*gt.range());
    let [_, by, bz] = bv.block_dims;
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let b = ((i / BLOCK_SIZE) * by + j / BLOCK_SIZE) * bz + k / BLOCK_SIZE;
                if union[b] {
                    out.set(i, j, k, gt.get(i, j, k));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{FrameBlocks, SceneRange};
    use crate::geom::PixelDepth;
    use nalgebra::Vector3;

    fn grid(dims: [usize; 3], labels: Vec<u8>) -> SceneGrid {
        SceneGrid::from_labels(SceneRange::from_dims(Vector3::zeros(), dims, 1.0).unwrap(), labels).unwrap()
    }

    #[test]
    fn confusion_diagonal() {
        let g = grid([2, 2, 1], vec![0, 1, 2, 1]);
        let cm = confusion(&g, &g, 3).unwrap();
        assert_eq!(cm.get(0, 0), 1);
        assert_eq!(cm.get(1, 1), 2);
        assert_eq!(cm.get(2, 2), 1);
        assert_eq!(cm.total(), 4);
        assert_eq!(iou_geometry(&cm).value, 1.0);
        assert_eq!(miou_semantic(&cm).value, 1.0);
    }

    #[test]
    fn confusion_all_mass_off_diagonal() {
        let cm = confusion(&grid([2, 1, 1], vec![0, 0]), &grid([2, 1, 1], vec![1, 1]), 2).unwrap();
        assert_eq!(cm.get(1, 0), 2);
        assert_eq!(cm.total(), 2);
    }

    #[test]
    fn confusion_hand_counted() {
        // gt:   1 2 255
        // pred: 1 1 2
        let cm = confusion(&grid([3, 1, 1], vec![1, 1, 2]), &grid([3, 1, 1], vec![1, 2, 255]), 3).unwrap();
        assert_eq!(cm.total(), 2);
        assert_eq!(cm.get(1, 1), 1);
        assert_eq!(cm.get(2, 1), 1);
        assert_eq!(cm.get(2, 2), 0);
    }

    #[test]
    fn confusion_dim_mismatch() {
        assert!(confusion(&grid([2, 1, 1], vec![0, 0]), &grid([1, 2, 1], vec![0, 0]), 2).is_err());
    }

    #[test]
    fn geometric_iou_set_example() {
        // pred occupies {a, b}, gt occupies {b, c}
        let cm = confusion(
            &grid([4, 1, 1], vec![1, 1, 0, 0]),
            &grid([4, 1, 1], vec![0, 1, 1, 0]),
            2,
        )
        .unwrap();
        assert!((iou_geometry(&cm).value - 1.0 / 3.0).abs() < 1e-15);
        let empty = confusion(&grid([2, 1, 1], vec![0, 0]), &grid([2, 1, 1], vec![0, 0]), 2).unwrap();
        assert_eq!(
            iou_geometry(&empty),
            Score {
                value: 1.0,
                degenerate: true
            }
        );
    }

    #[test]
    fn miou_mean_and_exclusion() {
        // class 1: tp 1, union 2 -> 0.5; class 2: tp 1, union 4 -> 0.25; class 3 absent
        let pred = grid([6, 1, 1], vec![1, 1, 2, 2, 2, 0]);
        let gt = grid([6, 1, 1], vec![1, 0, 2, 0, 0, 2]);
        let cm = confusion(&pred, &gt, 4).unwrap();
        let ious = cm.per_class_iou();
        assert_eq!(ious[1], Some(0.5));
        assert_eq!(ious[2], Some(0.25));
        assert_eq!(ious[3], None);
        assert!((miou_semantic(&cm).value - 0.375).abs() < 1e-15);
    }

    fn bv(vis: Vec<Vec<bool>>, block_dims: [usize; 3]) -> BlockVisibility {
        let p = PixelDepth { u: 0.0, v: 0.0, d: 1.0 };
        BlockVisibility {
            block_dims,
            frames: vis
                .into_iter()
                .map(|f| FrameBlocks {
                    projections: f.into_iter().map(|v| v.then_some(p)).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn coverage_counts() {
        assert_eq!(coverage(&bv(vec![vec![false; 4]], [1, 2, 2])).union, 0);
        let c = coverage(&bv(vec![vec![true, false, true, false]], [1, 2, 2]));
        assert_eq!((c.per_frame.clone(), c.union), (vec![2], 2));
        let c = coverage(&bv(
            vec![vec![true, false, true, false], vec![false, true, true, false]],
            [1, 2, 2],
        ));
        assert_eq!(c.per_frame, vec![2, 2]);
        assert_eq!(c.union, 3);
        assert!(c.union >= *c.per_frame.iter().max().unwrap());
    }

    #[test]
    fn majority_complete_extremes() {
        let labels: Vec<u8> = (0..8 * 4 * 4).map(|i| (i % 3) as u8).collect();
        let gt = grid([8, 4, 4], labels);
        let all = majority_complete(&bv(vec![vec![true, true]], [2, 1, 1]), &gt).unwrap();
        assert_eq!(all, gt);
        let none = majority_complete(&bv(vec![vec![false, false]], [2, 1, 1]), &gt).unwrap();
        assert_eq!(none.occupied_count(), 0);
    }

    #[test]
    fn majority_complete_half_visible_iou() {
        let labels: Vec<u8> = (0..8 * 4 * 4).map(|i| if i % 5 == 0 { 2 } else { 0 }).collect();
        let gt = grid([8, 4, 4], labels);
        let pred = majority_complete(&bv(vec![vec![true, false]], [2, 1, 1]), &gt).unwrap();
        // counting oracle: occupied gt voxels inside the visible half over all occupied
        let visible_occupied = (0..4 * 4 * 4).filter(|i| i % 5 == 0).count();
        let occupied = (0..8 * 4 * 4).filter(|i| i % 5 == 0).count();
        let cm = confusion(&pred, &gt, 3).unwrap();
        assert!((iou_geometry(&cm).value - visible_occupied as f64 / occupied as f64).abs() < 1e-15);
    }
}
