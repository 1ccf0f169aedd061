//! Central finite-difference checks of the analytic SSC loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fusion::INVALID_LABEL;
use crate::losses::{
    inverse_frequency_weights, scal_geo, scal_sem, weighted_ce, LabelVolume, LossWithGrad, ProbVolume,
};

pub const FD_STEP: f64 = 1e-5;

/// Random probability volume and labels with every class present and about
/// one voxel in ten marked invalid. Probabilities stay in [0.02, 0.98].
pub fn random_case(rng: &mut impl Rng, dims: [usize; 3], classes: usize) -> Result<(ProbVolume, LabelVolume)> {
    let n = dims.iter().product::<usize>();
    let mut probs = Vec::with_capacity(n * classes);
    for _ in 0..n {
        let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.1..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        probs.extend(raw.iter().map(|r| r / sum));
    }
    let mut labels: Vec<u8> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.1) {
                INVALID_LABEL
            } else {
                rng.gen_range(0..classes) as u8
            }
        })
        .collect();
    for c in 0..classes.min(n) {
        labels[c] = c as u8;
    }
    Ok((ProbVolume::new(dims, classes, probs)?, LabelVolume::new(dims, labels)?))
}

/// `|a - n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Largest relative error between `loss`'s analytic gradient and central
/// differences over every probability entry. Entries are perturbed
/// independently, without renormalization.
pub fn max_relative_error<F>(pred: &ProbVolume, loss: F, h: f64) -> Result<f64>
where
    F: Fn(&ProbVolume) -> Result<LossWithGrad>,
{
    let analytic = loss(pred)?.grad;
    let mut probe = pred.clone();
    let mut worst = 0.0f64;
    for (idx, a) in analytic.iter().enumerate() {
        let x = pred.probs()[idx];
        probe.probs_mut()[idx] = x + h;
        let up = loss(&probe)?.loss;
        probe.probs_mut()[idx] = x - h;
        let down = loss(&probe)?.loss;
        probe.probs_mut()[idx] = x;
        worst = worst.max(relative_error(*a, (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckRow {
    pub loss: &'static str,
    pub volumes: usize,
    pub max_relative_error: f64,
}

/// Checks scal_sem, scal_geo and weighted_ce on `volumes` random cases with
/// dims up to 8×8×4 and 4 classes.
pub fn run_grad_check(seed: u64, volumes: usize) -> Result<Vec<GradCheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..volumes {
        let dims = [rng.gen_range(2..=8), rng.gen_range(2..=8), rng.gen_range(1..=4)];
        let (pred, gt) = random_case(&mut rng, dims, 4)?;
        let w = inverse_frequency_weights(&gt, pred.classes());
        let errs = [
            max_relative_error(&pred, |p| scal_sem(p, &gt), FD_STEP)?,
            max_relative_error(&pred, |p| scal_geo(p, &gt), FD_STEP)?,
            max_relative_error(&pred, |p| weighted_ce(p, &gt, &w), FD_STEP)?,
        ];
        for (acc, e) in worst.iter_mut().zip(errs) {
            *acc = acc.max(e);
        }
    }
    Ok(["scal_sem", "scal_geo", "weighted_ce"]
        .into_iter()
        .zip(worst)
        .map(|(loss, max_relative_error)| GradCheckRow {
            loss,
            volumes,
            max_relative_error,
        })
        .collect())
}
