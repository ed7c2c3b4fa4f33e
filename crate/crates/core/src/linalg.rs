//! Small dense linear-algebra helpers shared by the solvers.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::geometry::{Pose, Rotation, Vec3};

/// Right singular vectors of `a` for its `k` smallest singular values, smallest first.
///
/// Wide matrices are padded with zero rows so the full right basis is available.
pub(crate) fn smallest_right_singular_vectors(a: &DMatrix<f64>, k: usize) -> Vec<DVector<f64>> {
    let cols = a.ncols();
    let padded;
    let m = if a.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.rows_mut(0, a.nrows()).copy_from(a);
        padded = p;
        &padded
    } else {
        a
    };
    let svd = m.clone().svd(false, true);
    let v_t = match svd.v_t {
        Some(v) => v,
        None => return Vec::new(),
    };
    // `svd` sorts singular values in descending order.
    (0..k.min(cols))
        .map(|i| v_t.row(cols - 1 - i).transpose())
        .collect()
}

/// Least-squares solution of `a x = b` via SVD.
pub(crate) fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let eps = svd.singular_values.max() * 1e-14;
    svd.solve(b, eps).ok()
}

/// Rigid transform `pose` minimizing `Σ ‖pose(src_i) − dst_i‖²` (reflection corrected).
pub(crate) fn align_rigid(src: &[Vec3], dst: &[Vec3]) -> Option<Pose> {
    let n = src.len();
    if n == 0 || n != dst.len() {
        return None;
    }
    let inv_n = 1.0 / n as f64;
    let cs = src.iter().fold(Vec3::zeros(), |a, p| a + p) * inv_n;
    let cd = dst.iter().fold(Vec3::zeros(), |a, p| a + p) * inv_n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v * d * u.transpose();
    if !r.iter().all(|x| x.is_finite()) {
        return None;
    }
    let rotation = Rotation::from_matrix_unchecked(r);
    Some(Pose::new(rotation, cd - rotation * cs))
}

/// Least-squares plane through `points`: `(centroid, unit normal)`.
pub(crate) fn fit_plane(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    if points.len() < 3 {
        return None;
    }
    let c = points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len() as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - c;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut k = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[k] {
            k = i;
        }
    }
    let normal: Vec3 = eig.eigenvectors.column(k).into_owned();
    let norm = normal.norm();
    (norm > 0.0).then(|| (c, normal / norm))
}
