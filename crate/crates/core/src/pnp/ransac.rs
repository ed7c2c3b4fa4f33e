use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{epnp_solve, refine_pose, reprojection_residual, Correspondence, PnPConfig, PnPResult};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};

/// Correspondences drawn per RANSAC hypothesis.
pub const SAMPLE_SIZE: usize = 6;
const CONFIDENCE: f64 = 0.999;

/// Draws `k` distinct indices below `n` by a partial Fisher–Yates shuffle.
pub(crate) fn sample_indices<const K: usize>(rng: &mut ChaCha8Rng, scratch: &mut [usize]) -> [usize; K] {
    let n = scratch.len();
    let mut out = [0usize; K];
    for (i, slot) in out.iter_mut().enumerate() {
        let j = rng.random_range(i..n);
        scratch.swap(i, j);
        *slot = scratch[i];
    }
    out
}

/// Hypotheses needed to draw one all-inlier sample with probability [`CONFIDENCE`].
pub(crate) fn required_hypotheses(inlier_ratio: f64, sample: usize, cap: usize) -> usize {
    let p_good = libm::pow(inlier_ratio.clamp(0.0, 1.0), sample as f64);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return cap;
    }
    let needed = libm::log(1.0 - CONFIDENCE) / libm::log(1.0 - p_good);
    if needed.is_finite() {
        (libm::ceil(needed) as usize).clamp(1, cap)
    } else {
        cap
    }
}

pub(crate) fn inlier_mask(pose: &Pose, corrs: &[Correspondence], intr: &CameraIntrinsics, threshold: f64) -> Vec<bool> {
    corrs
        .iter()
        .map(|c| reprojection_residual(pose, c, intr).is_some_and(|r| r < threshold))
        .collect()
}

/// Seeded RANSAC around EPnP with a final Levenberg–Marquardt refinement.
///
/// Hypotheses come from one `ChaCha8` stream seeded by `cfg.seed` and are scored
/// in order; ties keep the earliest hypothesis. Sampling stops once the best
/// consensus makes a better one unlikely, so the outcome depends only on the
/// inputs and the seed.
pub fn ransac_pnp(corrs: &[Correspondence], intr: &CameraIntrinsics, cfg: &PnPConfig) -> Result<PnPResult> {
    cfg.validate()?;
    let n = corrs.len();
    let needed = SAMPLE_SIZE.max(cfg.min_inliers);
    if n < needed {
        return Err(Error::InsufficientCorrespondences { needed, got: n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scratch: Vec<usize> = (0..n).collect();
    let mut subset = Vec::with_capacity(SAMPLE_SIZE);
    let mut best: Option<(Pose, usize)> = None;
    let mut budget = cfg.ransac_iterations;
    let mut hypothesis = 0;
    while hypothesis < budget {
        hypothesis += 1;
        let idx = sample_indices::<SAMPLE_SIZE>(&mut rng, &mut scratch);
        subset.clear();
        subset.extend(idx.iter().map(|&i| corrs[i]));
        let Ok(pose) = epnp_solve(&subset, intr) else {
            continue;
        };
        let count = corrs
            .iter()
            .filter(|c| reprojection_residual(&pose, c, intr).is_some_and(|r| r < cfg.inlier_threshold_px))
            .count();
        if best.as_ref().is_none_or(|(_, b)| count > *b) {
            best = Some((pose, count));
            budget = budget.min(required_hypotheses(count as f64 / n as f64, SAMPLE_SIZE, cfg.ransac_iterations));
        }
    }

    let (hypothesis_pose, count) = best.unwrap_or((Pose::identity(), 0));
    if count < cfg.min_inliers {
        return Err(Error::NoConsensus {
            inliers: count,
            needed: cfg.min_inliers,
        });
    }
    let mask = inlier_mask(&hypothesis_pose, corrs, intr, cfg.inlier_threshold_px);
    let inliers: Vec<Correspondence> = corrs.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| *c).collect();
    let refined = refine_pose(&hypothesis_pose, &inliers, intr, cfg)?;

    let mask = inlier_mask(&refined.pose, corrs, intr, cfg.inlier_threshold_px);
    let final_inliers: Vec<Correspondence> = corrs.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| *c).collect();
    if final_inliers.len() < cfg.min_inliers {
        return Err(Error::NoConsensus {
            inliers: final_inliers.len(),
            needed: cfg.min_inliers,
        });
    }
    let rmse_px = super::reprojection_rmse(&refined.pose, &final_inliers, intr)?;
    Ok(PnPResult {
        pose: refined.pose,
        inlier_mask: mask,
        rmse_px,
        converged: refined.converged,
    })
}
