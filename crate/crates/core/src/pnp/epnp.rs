//! Closed-form EPnP with a Gauss–Newton polish of the null-space weights.
//!
//! World points are expressed as barycentric combinations of control points
//! (the centroid plus the principal axes of the cloud). The camera-frame control
//! points lie in the null space of a `2n × 3m` system built from the projection
//! equations; their weights are fixed by requiring the camera-frame control
//! points to keep their world-frame pairwise distances.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3};

use super::{reprojection_rmse, Correspondence};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, Vec3};
use crate::linalg::{align_rigid, least_squares, smallest_right_singular_vectors};

/// Smallest-to-largest eigenvalue ratio of the point scatter below which the
/// cloud is handled as planar.
const PLANARITY_RATIO: f64 = 1e-6;
const BETA_ITERATIONS: usize = 50;

struct ControlPoints {
    /// World-frame control points; `len()` is 3 (planar) or 4.
    world: Vec<Vec3>,
    /// Principal axes scaled by their standard deviation.
    axes: Vec<Vec3>,
}

impl ControlPoints {
    /// Control points for `points`; `full` keeps all three axes even for a
    /// nearly planar cloud. Returns the control points and whether the cloud
    /// was treated as planar while still having some out-of-plane extent.
    fn new(points: &[Vec3], full: bool) -> Result<(Self, bool)> {
        let n = points.len() as f64;
        let centroid = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
        let mut scatter = Matrix3::zeros();
        for p in points {
            let d = p - centroid;
            scatter += d * d.transpose();
        }
        scatter /= n;
        let eig = scatter.symmetric_eigen();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let lambda = order.map(|i| eig.eigenvalues[i].max(0.0));

        if !(lambda[0] > 0.0) || lambda[1] / lambda[0] < PLANARITY_RATIO {
            return Err(Error::DegenerateConfiguration);
        }
        let planar = !full && lambda[2] / lambda[0] < PLANARITY_RATIO;
        let used = if planar { 2 } else { 3 };
        let thin = planar && lambda[2] > lambda[0] * 1e-20;

        let mut world = Vec::with_capacity(used + 1);
        let mut axes = Vec::with_capacity(used);
        world.push(centroid);
        for (&i, &l) in order.iter().zip(lambda.iter()).take(used) {
            let axis: Vec3 = eig.eigenvectors.column(i).into_owned() * libm::sqrt(l);
            axes.push(axis);
            world.push(centroid + axis);
        }
        Ok((ControlPoints { world, axes }, thin))
    }

    fn len(&self) -> usize {
        self.world.len()
    }

    /// Barycentric weights; the first entry belongs to the centroid.
    fn barycentric(&self, p: &Vec3) -> [f64; 4] {
        let d = p - self.world[0];
        let mut a = [0.0; 4];
        let mut rest = 0.0;
        for (j, axis) in self.axes.iter().enumerate() {
            a[j + 1] = d.dot(axis) / axis.norm_squared();
            rest += a[j + 1];
        }
        a[0] = 1.0 - rest;
        a
    }
}

/// Pairwise-distance constraints on the null-space weights.
struct DistanceSystem {
    /// `diffs[k][pair]`: difference of kernel vector `k` between the pair's control points.
    diffs: Vec<Vec<Vec3>>,
    /// Squared world distance of each control point pair.
    rho: Vec<f64>,
}

impl DistanceSystem {
    fn new(controls: &ControlPoints, kernel: &[DVector<f64>]) -> Self {
        let m = controls.len();
        let mut pairs = Vec::new();
        for a in 0..m {
            for b in (a + 1)..m {
                pairs.push((a, b));
            }
        }
        let rho = pairs
            .iter()
            .map(|&(a, b)| (controls.world[a] - controls.world[b]).norm_squared())
            .collect();
        let diffs = kernel
            .iter()
            .map(|v| {
                pairs
                    .iter()
                    .map(|&(a, b)| {
                        Vec3::new(
                            v[3 * a] - v[3 * b],
                            v[3 * a + 1] - v[3 * b + 1],
                            v[3 * a + 2] - v[3 * b + 2],
                        )
                    })
                    .collect()
            })
            .collect();
        DistanceSystem { diffs, rho }
    }

    fn pairs(&self) -> usize {
        self.rho.len()
    }

    /// Coefficient of the monomial `β_k β_l` in the squared distance of `pair`.
    fn monomial(&self, pair: usize, k: usize, l: usize) -> f64 {
        let d = self.diffs[k][pair].dot(&self.diffs[l][pair]);
        if k == l {
            d
        } else {
            2.0 * d
        }
    }

    /// Solves the linearized system restricted to the given monomials.
    fn linearized(&self, monomials: &[(usize, usize)]) -> Option<DVector<f64>> {
        if monomials.len() > self.pairs() {
            return None;
        }
        let l = DMatrix::from_fn(self.pairs(), monomials.len(), |p, c| {
            let (k, j) = monomials[c];
            self.monomial(p, k, j)
        });
        least_squares(&l, &DVector::from_column_slice(&self.rho))
    }

    /// Gauss–Newton on `Σ_pairs (‖Σ β_k d_k‖² − ρ)²`.
    fn refine(&self, beta: &mut [f64]) {
        let n = beta.len();
        for _ in 0..BETA_ITERATIONS {
            let mut jac = DMatrix::zeros(self.pairs(), n);
            let mut res = DVector::zeros(self.pairs());
            for p in 0..self.pairs() {
                let s = (0..n).fold(Vec3::zeros(), |acc, k| acc + self.diffs[k][p] * beta[k]);
                res[p] = self.rho[p] - s.norm_squared();
                for k in 0..n {
                    jac[(p, k)] = 2.0 * s.dot(&self.diffs[k][p]);
                }
            }
            let Some(step) = least_squares(&jac, &res) else {
                return;
            };
            if !step.iter().all(|v| v.is_finite()) {
                return;
            }
            for (b, d) in beta.iter_mut().zip(step.iter()) {
                *b += d;
            }
            if step.amax() <= 1e-15 * beta.iter().fold(0.0f64, |a, b| a.max(b.abs())) {
                return;
            }
        }
    }

    /// Initial weights for a kernel of dimension `dim`.
    fn initial_betas(&self, dim: usize) -> Option<Vec<f64>> {
        let sqrt_abs = |v: f64| libm::sqrt(v.abs());
        match dim {
            1 => {
                let b = self.linearized(&[(0, 0)])?;
                Some(alloc::vec![sqrt_abs(b[0])])
            }
            2 => {
                let b = self.linearized(&[(0, 0), (0, 1), (1, 1)])?;
                let b1 = sqrt_abs(b[0]);
                let b2 = sqrt_abs(b[2]) * if b[1] * b[0] < 0.0 { -1.0 } else { 1.0 };
                Some(alloc::vec![b1, b2])
            }
            3 => {
                let b = self.linearized(&[(0, 0), (0, 1), (1, 1), (0, 2), (1, 2)])?;
                let b1 = sqrt_abs(b[0]);
                if b1 == 0.0 {
                    return None;
                }
                let b2 = sqrt_abs(b[2]) * if b[1] * b[0] < 0.0 { -1.0 } else { 1.0 };
                Some(alloc::vec![b1, b2, b[3] / b1])
            }
            4 => {
                let b = self.linearized(&[(0, 0), (0, 1), (0, 2), (0, 3)])?;
                let b1 = sqrt_abs(b[0]);
                if b1 == 0.0 {
                    return None;
                }
                Some(alloc::vec![b1, b[1] / b1, b[2] / b1, b[3] / b1])
            }
            _ => None,
        }
    }

    /// Weights for a four-dimensional kernel by relinearization.
    ///
    /// The ten products `β_a β_b` satisfy only six distance equations, so they
    /// form a four-parameter affine family. Requiring the products to come from
    /// a rank-one matrix gives linear equations in the pairwise products of the
    /// family parameters, whose null vector fixes them.
    fn relinearized(&self) -> Option<Vec<f64>> {
        const DIM: usize = 4;
        let monomials: Vec<(usize, usize)> = (0..DIM).flat_map(|a| (a..DIM).map(move |b| (a, b))).collect();
        let l = DMatrix::from_fn(self.pairs(), monomials.len(), |p, c| {
            let (k, j) = monomials[c];
            self.monomial(p, k, j)
        });
        let particular = least_squares(&l, &DVector::from_column_slice(&self.rho))?;
        let mut basis = alloc::vec![particular];
        basis.extend(smallest_right_singular_vectors(&l, monomials.len() - self.pairs()));
        let q = basis.len();
        let index = |a: usize, b: usize| monomials.iter().position(|&m| m == (a.min(b), a.max(b))).unwrap();
        let products: Vec<(usize, usize)> = (0..q).flat_map(|i| (i..q).map(move |j| (i, j))).collect();

        // B_ab B_cd − B_ad B_cb = 0 for every 2×2 minor of the rank-one product matrix.
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for a in 0..DIM {
            for c in (a + 1)..DIM {
                for b in 0..DIM {
                    for d in (b + 1)..DIM {
                        let (ab, cd, ad, cb) = (index(a, b), index(c, d), index(a, d), index(c, b));
                        let row = products
                            .iter()
                            .map(|&(i, j)| {
                                let term = |x: usize, y: usize| {
                                    let v = basis[i][x] * basis[j][y];
                                    if i == j {
                                        v
                                    } else {
                                        v + basis[j][x] * basis[i][y]
                                    }
                                };
                                term(ab, cd) - term(ad, cb)
                            })
                            .collect();
                        rows.push(row);
                    }
                }
            }
        }
        let system = DMatrix::from_fn(rows.len(), products.len(), |r, c| rows[r][c]);
        let mu = smallest_right_singular_vectors(&system, 1).pop()?;
        if mu[0].abs() < 1e-300 {
            return None;
        }
        // mu[(0, i)] = λ_0 λ_i with λ_0 = 1 for the particular solution.
        let mut b = basis[0].clone();
        for i in 1..q {
            b += &basis[i] * (mu[i] / mu[0]);
        }
        let diag: Vec<f64> = (0..DIM).map(|a| b[index(a, a)]).collect();
        let pivot = (0..DIM).max_by(|&x, &y| diag[x].total_cmp(&diag[y]))?;
        if !(diag[pivot] > 0.0) {
            return None;
        }
        let root = libm::sqrt(diag[pivot]);
        Some((0..DIM).map(|a| if a == pivot { root } else { b[index(pivot, a)] / root }).collect())
    }
}

/// Pose from 2D–3D correspondences by EPnP.
///
/// Candidate null-space dimensions 1 through 4 (1 through 3 for planar clouds)
/// are all evaluated; the candidate with the lowest reprojection RMSE wins.
pub fn epnp_solve(corrs: &[Correspondence], intr: &CameraIntrinsics) -> Result<Pose> {
    let n = corrs.len();
    if n < 4 {
        return Err(Error::InsufficientCorrespondences { needed: 4, got: n });
    }
    let world: Vec<Vec3> = corrs.iter().map(|c| c.point).collect();
    let (controls, thin) = ControlPoints::new(&world, false)?;
    let mut best = solve_with(&controls, &world, corrs, intr);
    if thin {
        // Nearly planar: the three-point basis cannot represent the small
        // out-of-plane extent exactly, so the full basis competes as well.
        let (full, _) = ControlPoints::new(&world, true)?;
        if let Some((pose, rmse)) = solve_with(&full, &world, corrs, intr) {
            if best.as_ref().is_none_or(|(_, b)| rmse < *b) {
                best = Some((pose, rmse));
            }
        }
    }
    best.map(|(pose, _)| pose).ok_or(Error::DegenerateConfiguration)
}

fn solve_with(
    controls: &ControlPoints,
    world: &[Vec3],
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
) -> Option<(Pose, f64)> {
    let n = corrs.len();
    let m = controls.len();
    let alphas: Vec<[f64; 4]> = world.iter().map(|p| controls.barycentric(p)).collect();

    let mut system = DMatrix::zeros(2 * n, 3 * m);
    for (i, (c, a)) in corrs.iter().zip(&alphas).enumerate() {
        let x = (c.pixel.x - intr.cx) / intr.fx;
        let y = (c.pixel.y - intr.cy) / intr.fy;
        for (j, &aj) in a.iter().enumerate().take(m) {
            system[(2 * i, 3 * j)] = aj;
            system[(2 * i, 3 * j + 2)] = -aj * x;
            system[(2 * i + 1, 3 * j + 1)] = aj;
            system[(2 * i + 1, 3 * j + 2)] = -aj * y;
        }
    }
    let max_dim = if m == 4 { 4 } else { 3 };
    let kernel = smallest_right_singular_vectors(&system, max_dim);
    if kernel.len() < max_dim {
        return None;
    }

    let mut best: Option<(Pose, f64)> = None;
    let mut previous: Vec<Vec<f64>> = Vec::new();
    for dim in 1..=max_dim {
        let distances = DistanceSystem::new(controls, &kernel[..dim]);
        // The linearized start plus every lower-dimensional solution padded with zeros.
        let mut starts: Vec<Vec<f64>> = distances.initial_betas(dim).into_iter().collect();
        if dim == 4 {
            starts.extend(distances.relinearized());
        }
        for p in &previous {
            let mut s = p.clone();
            s.resize(dim, 0.0);
            starts.push(s);
        }
        let mut refined = Vec::with_capacity(starts.len());
        for mut beta in starts {
            distances.refine(&mut beta);
            if let Some((pose, rmse)) = pose_from_betas(&beta, &kernel, controls, &alphas, corrs, intr) {
                if best.as_ref().is_none_or(|(_, b)| rmse < *b) {
                    best = Some((pose, rmse));
                }
            }
            refined.push(beta);
        }
        previous = refined;
    }
    best
}

fn pose_from_betas(
    beta: &[f64],
    kernel: &[DVector<f64>],
    controls: &ControlPoints,
    alphas: &[[f64; 4]],
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
) -> Option<(Pose, f64)> {
    if !beta.iter().all(|b| b.is_finite()) {
        return None;
    }
    let m = controls.len();
    let mut camera_controls = [Vec3::zeros(); 4];
    for (j, cc) in camera_controls.iter_mut().enumerate().take(m) {
        for (b, v) in beta.iter().zip(kernel) {
            *cc += Vec3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]) * *b;
        }
    }
    let mut camera: Vec<Vec3> = alphas
        .iter()
        .map(|a| (0..m).fold(Vec3::zeros(), |acc, j| acc + camera_controls[j] * a[j]))
        .collect();
    let behind = camera.iter().filter(|p| p.z < 0.0).count();
    if 2 * behind > camera.len() {
        for p in &mut camera {
            *p = -*p;
        }
    }
    let world: Vec<Vec3> = corrs.iter().map(|c| c.point).collect();
    let pose = align_rigid(&camera, &world)?;
    let rmse = reprojection_rmse(&pose, corrs, intr).ok()?;
    rmse.is_finite().then_some((pose, rmse))
}
