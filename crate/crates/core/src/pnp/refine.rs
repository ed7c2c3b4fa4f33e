use alloc::vec::Vec;

use nalgebra::{Matrix2x6, Matrix3x6, Matrix6, Vector2, Vector6};

use super::{Correspondence, PnPConfig};
use crate::error::{Error, Result};
use crate::geometry::{skew, CameraIntrinsics, Pose, Rotation, Vec3, MIN_DEPTH};

const INITIAL_DAMPING: f64 = 1e-3;
const MAX_DAMPING: f64 = 1e12;

/// Outcome of [`refine_pose`].
#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    pub pose: Pose,
    pub rmse_px: f64,
    pub initial_rmse_px: f64,
    /// Accepted steps.
    pub iterations: usize,
    /// False when the iteration budget ran out before the RMSE settled.
    pub converged: bool,
    /// RMSE after the start and after every accepted step.
    pub trace: Vec<f64>,
}

/// Residual `project(p) − observed` and its Jacobian with respect to a left
/// increment `(ω, v)` of the world-to-camera transform, `p_c ← exp(ω)·p_c + v`.
#[inline]
pub(crate) fn residual_and_jacobian(
    world_to_camera: &Pose,
    c: &Correspondence,
    intr: &CameraIntrinsics,
) -> Option<(Vector2<f64>, Matrix2x6<f64>)> {
    let p = world_to_camera.transform_point(&c.point);
    if p.z <= MIN_DEPTH {
        return None;
    }
    let inv_z = 1.0 / p.z;
    let r = Vector2::new(
        intr.fx * p.x * inv_z + intr.cx - c.pixel.x,
        intr.fy * p.y * inv_z + intr.cy - c.pixel.y,
    );
    let dproj = nalgebra::Matrix2x3::new(
        intr.fx * inv_z,
        0.0,
        -intr.fx * p.x * inv_z * inv_z,
        0.0,
        intr.fy * inv_z,
        -intr.fy * p.y * inv_z * inv_z,
    );
    let mut dp = Matrix3x6::zeros();
    dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&p)));
    dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&nalgebra::Matrix3::identity());
    Some((r, dproj * dp))
}

fn apply_increment(world_to_camera: &Pose, delta: &Vector6<f64>) -> Pose {
    let rot = Rotation::exp(&Vec3::new(delta[0], delta[1], delta[2]));
    let v = Vec3::new(delta[3], delta[4], delta[5]);
    Pose::new(rot * world_to_camera.rotation, rot * world_to_camera.translation + v)
}

fn sum_squared(world_to_camera: &Pose, corrs: &[&Correspondence], intr: &CameraIntrinsics) -> Option<f64> {
    let mut sum = 0.0;
    for c in corrs {
        let p = world_to_camera.transform_point(&c.point);
        if p.z <= MIN_DEPTH {
            return None;
        }
        let du = intr.fx * p.x / p.z + intr.cx - c.pixel.x;
        let dv = intr.fy * p.y / p.z + intr.cy - c.pixel.y;
        sum += du * du + dv * dv;
    }
    Some(sum)
}

/// Levenberg–Marquardt refinement of the reprojection error.
///
/// Only correspondences in front of the camera at `initial` take part; a step
/// that pushes any of them behind the camera is rejected. Steps are accepted
/// only when they lower the cost, so the returned RMSE never exceeds the
/// initial one.
pub fn refine_pose(
    initial: &Pose,
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    cfg: &PnPConfig,
) -> Result<Refinement> {
    let mut current = initial.inverse();
    let active: Vec<&Correspondence> = corrs
        .iter()
        .filter(|c| current.transform_point(&c.point).z > MIN_DEPTH)
        .collect();
    if active.is_empty() {
        return Err(Error::DivergedBehindCamera);
    }
    if active.len() < 4 {
        return Err(Error::InsufficientCorrespondences {
            needed: 4,
            got: active.len(),
        });
    }
    let count = active.len() as f64;
    let rmse = |cost: f64| libm::sqrt(cost / count);

    let mut cost = sum_squared(&current, &active, intr).ok_or(Error::DivergedBehindCamera)?;
    let initial_rmse = rmse(cost);
    let mut trace = alloc::vec![initial_rmse];
    let mut lambda = INITIAL_DAMPING;
    let mut iterations = 0;
    let mut converged = false;

    'outer: for _ in 0..cfg.refine_max_iterations {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for c in &active {
            if let Some((r, j)) = residual_and_jacobian(&current, c, intr) {
                h += j.transpose() * j;
                g += j.transpose() * r;
            }
        }
        loop {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let step = damped.cholesky().map(|ch| ch.solve(&(-g)));
            let candidate = step
                .filter(|s| s.iter().all(|v| v.is_finite()))
                .map(|s| apply_increment(&current, &s));
            let trial = candidate.and_then(|p| sum_squared(&p, &active, intr).map(|c| (p, c)));
            match trial {
                Some((pose, new_cost)) if new_cost < cost => {
                    let improvement = rmse(cost) - rmse(new_cost);
                    current = pose;
                    cost = new_cost;
                    iterations += 1;
                    trace.push(rmse(cost));
                    lambda = (lambda / 10.0).max(1e-12);
                    if improvement < cfg.refine_convergence_px {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > MAX_DAMPING {
                        // No descent direction left: a (numerical) minimum.
                        converged = true;
                        break 'outer;
                    }
                }
            }
        }
    }
    Ok(Refinement {
        pose: current.inverse(),
        rmse_px: rmse(cost),
        initial_rmse_px: initial_rmse,
        iterations,
        converged,
        trace,
    })
}
