//! Absolute camera pose from 2D–3D correspondences.
//!
//! [`epnp_solve`] gives a closed-form estimate, [`refine_pose`] polishes it by
//! Levenberg–Marquardt on the reprojection error, and [`ransac_pnp`] wraps both
//! in a seeded consensus loop for match sets that contain outliers.

mod epnp;
pub(crate) mod ransac;
mod refine;

use alloc::vec::Vec;

pub use epnp::epnp_solve;
pub use ransac::{ransac_pnp, SAMPLE_SIZE};
pub use refine::{refine_pose, Refinement};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pixel, Pose, Vec3};

/// A keypoint pixel paired with the world point it observes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub pixel: Pixel,
    pub point: Vec3,
    pub landmark_id: Option<u64>,
}

impl Correspondence {
    pub fn new(pixel: Pixel, point: Vec3) -> Self {
        Correspondence {
            pixel,
            point,
            landmark_id: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnPConfig {
    /// Upper bound on RANSAC hypotheses; sampling stops earlier once the best
    /// consensus makes further hypotheses pointless at 99.9% confidence.
    pub ransac_iterations: usize,
    pub inlier_threshold_px: f64,
    pub min_inliers: usize,
    pub refine_max_iterations: usize,
    /// Refinement stops once an accepted step improves the RMSE by less than this.
    pub refine_convergence_px: f64,
    pub seed: u64,
}

impl Default for PnPConfig {
    fn default() -> Self {
        PnPConfig {
            ransac_iterations: 200,
            inlier_threshold_px: 2.0,
            min_inliers: 12,
            refine_max_iterations: 50,
            refine_convergence_px: 1e-9,
            seed: 0,
        }
    }
}

impl PnPConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ransac_iterations < 1 {
            return Err(Error::InvalidConfig("ransac_iterations must be at least 1"));
        }
        if !(self.inlier_threshold_px > 0.0) {
            return Err(Error::InvalidConfig("inlier_threshold_px must be positive"));
        }
        if self.min_inliers < 4 {
            return Err(Error::InvalidConfig("min_inliers must be at least 4"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnPResult {
    pub pose: Pose,
    pub inlier_mask: Vec<bool>,
    /// RMSE over inliers only.
    pub rmse_px: f64,
    /// Whether the final refinement met its convergence criterion.
    pub converged: bool,
}

impl PnPResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&m| m).count()
    }
}

/// Pixel residual of one correspondence, or `None` when the point is behind the camera.
#[inline]
pub fn reprojection_residual(pose: &Pose, c: &Correspondence, intr: &CameraIntrinsics) -> Option<f64> {
    intr.project(pose, &c.point)
        .ok()
        .map(|px| (px - c.pixel).norm())
}

/// Root-mean-square pixel residual over the correspondences in front of the camera.
pub fn reprojection_rmse(pose: &Pose, corrs: &[Correspondence], intr: &CameraIntrinsics) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in corrs {
        if let Some(r) = reprojection_residual(pose, c, intr) {
            sum += r * r;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::AllBehindCamera);
    }
    Ok(libm::sqrt(sum / count as f64))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::geometry::Rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    pub fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(800.0, 780.0, 320.0, 240.0, 640, 480).unwrap()
    }

    pub fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.random_range(0.0..core::f64::consts::PI);
        let t = Vec3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        Pose::new(Rotation::exp(&(axis * angle)), t)
    }

    /// Exact projections of points scattered in front of a random camera.
    /// With `planar`, the world points lie on a common plane.
    pub fn synthetic(seed: u64, n: usize, planar: bool, noise_px: f64) -> (Pose, Vec<Correspondence>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_pose(&mut rng);
        let intr = intr();
        let normal = Normal::new(0.0, noise_px.max(1e-300)).unwrap();
        let plane_tilt = Rotation::exp(&Vec3::new(
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
            0.0,
        ));
        let depth0 = rng.random_range(3.0..6.0);
        let mut corrs = Vec::with_capacity(n);
        while corrs.len() < n {
            let local = if planar {
                plane_tilt * Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.2..1.2), 0.0)
            } else {
                Vec3::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.0..1.0),
                )
            };
            let cam = local + Vec3::new(0.0, 0.0, depth0);
            let mut px = intr.project_camera(&cam).unwrap();
            if !intr.contains(&px) {
                continue;
            }
            if noise_px > 0.0 {
                px.x += normal.sample(&mut rng);
                px.y += normal.sample(&mut rng);
            }
            corrs.push(Correspondence::new(px, pose.transform_point(&cam)));
        }
        (pose, corrs)
    }

    pub fn pose_errors(a: &Pose, b: &Pose) -> (f64, f64) {
        (a.rotation.angle_to(&b.rotation), (a.translation - b.translation).norm())
    }
}
