//! Detection of reference appearances in scanning video and their lifting into 3D regions of interest.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{match_descriptors, Descriptor, Keypoint, VocabularyTree};
use crate::geometry::{CameraIntrinsics, Pixel, Pose, Vec3};
use crate::linalg::{fit_plane, smallest_right_singular_vectors};
use crate::pnp::ransac::{required_hypotheses, sample_indices};
use crate::world::OccupancyGrid;

/// Minimum keypoints a reference appearance must carry.
pub const MIN_REFERENCE_KEYPOINTS: usize = 8;
/// Homography consensus below this is `NoConsensus`.
pub const MIN_HOMOGRAPHY_INLIERS: usize = 8;
/// Largest point-to-plane distance of a lifted quad, in meters.
pub const PLANE_TOLERANCE_M: f64 = 0.02;
/// Centroid distance under which same-label regions merge, in meters.
pub const MERGE_DISTANCE_M: f64 = 0.15;
const MAX_HOMOGRAPHY_HYPOTHESES: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceAppearance {
    pub roi_label: String,
    /// Keypoints in reference-image pixels.
    pub keypoints: Vec<Keypoint>,
    /// Width and height in pixels.
    pub reference_size: (f64, f64),
}

impl ReferenceAppearance {
    pub fn new(roi_label: impl Into<String>, keypoints: Vec<Keypoint>, reference_size: (f64, f64)) -> Result<Self> {
        if keypoints.len() < MIN_REFERENCE_KEYPOINTS {
            return Err(Error::TooFewKeypoints {
                needed: MIN_REFERENCE_KEYPOINTS,
                got: keypoints.len(),
            });
        }
        if !(reference_size.0 > 0.0 && reference_size.1 > 0.0) {
            return Err(Error::InvalidSpec("reference size must be positive".into()));
        }
        Ok(ReferenceAppearance {
            roi_label: roi_label.into(),
            keypoints,
            reference_size,
        })
    }

    /// Corners `(0,0)`, `(w,0)`, `(w,h)`, `(0,h)` of the reference image.
    pub fn corners(&self) -> [Pixel; 4] {
        let (w, h) = self.reference_size;
        [Pixel::new(0.0, 0.0), Pixel::new(w, 0.0), Pixel::new(w, h), Pixel::new(0.0, h)]
    }

    fn descriptors(&self) -> Vec<Descriptor> {
        self.keypoints.iter().map(|k| k.descriptor.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoiDetection {
    pub roi_label: String,
    pub frame_index: u64,
    /// Maps reference pixels to frame pixels, normalized so `h33 = 1`.
    pub homography: Matrix3<f64>,
    pub corner_quad: [Pixel; 4],
    pub inlier_count: usize,
}

/// A labeled planar quad in world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Roi3D {
    pub roi_label: String,
    pub polygon: [Vec3; 4],
    /// Unit normal facing the camera that observed the region.
    pub normal: Vec3,
    pub support_count: u32,
}

impl Roi3D {
    pub fn centroid(&self) -> Vec3 {
        self.polygon.iter().fold(Vec3::zeros(), |a, p| a + p) / 4.0
    }
}

/// Applies a homography to a pixel; `None` when it maps to infinity.
pub fn apply_homography(h: &Matrix3<f64>, p: &Pixel) -> Option<Pixel> {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    (v.z.abs() > 1e-12).then(|| Pixel::new(v.x / v.z, v.y / v.z))
}

/// Similarity moving the centroid to the origin with mean distance √2.
fn normalizer(points: &[Pixel]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let c = points.iter().fold(Pixel::zeros(), |a, p| a + p) / n;
    let mean = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if !(mean > 0.0 && mean.is_finite()) {
        return None;
    }
    let s = core::f64::consts::SQRT_2 / mean;
    Some(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

/// Normalized DLT over all given pairs.
fn dlt(src: &[Pixel], dst: &[Pixel]) -> Option<Matrix3<f64>> {
    let t1 = normalizer(src)?;
    let t2 = normalizer(dst)?;
    let mut a = DMatrix::zeros(2 * src.len(), 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let s = t1 * Vector3::new(s.x, s.y, 1.0);
        let d = t2 * Vector3::new(d.x, d.y, 1.0);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let h = smallest_right_singular_vectors(&a, 1).into_iter().next()?;
    let hn = Matrix3::from_row_slice(h.as_slice());
    let h = t2.try_inverse()? * hn * t1;
    let h33 = h[(2, 2)];
    if !(h33.abs() > 1e-12) || !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(h / h33)
}

/// Whether any three of four points are (nearly) collinear after normalization.
fn degenerate(points: &[Pixel; 4]) -> bool {
    let Some(t) = normalizer(points) else {
        return true;
    };
    let q = points.map(|p| {
        let v = t * Vector3::new(p.x, p.y, 1.0);
        Pixel::new(v.x, v.y)
    });
    let tri = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    tri.iter().any(|&(a, b, c)| {
        let (u, v) = (q[b] - q[a], q[c] - q[a]);
        (u.x * v.y - u.y * v.x).abs() < 1e-6
    })
}

/// Root-mean-square of the forward and backward transfer errors.
fn symmetric_transfer_error(h: &Matrix3<f64>, h_inv: &Matrix3<f64>, src: &Pixel, dst: &Pixel) -> f64 {
    match (apply_homography(h, src), apply_homography(h_inv, dst)) {
        (Some(f), Some(b)) => libm::sqrt(((f - dst).norm_squared() + (b - src).norm_squared()) / 2.0),
        _ => f64::INFINITY,
    }
}

fn homography_mask(h: &Matrix3<f64>, pairs: &[(Pixel, Pixel)], threshold: f64) -> Option<Vec<bool>> {
    let h_inv = h.try_inverse()?;
    Some(
        pairs
            .iter()
            .map(|(s, d)| symmetric_transfer_error(h, &h_inv, s, d) < threshold)
            .collect(),
    )
}

/// Seeded RANSAC over 4-point normalized-DLT hypotheses.
///
/// A pair is an inlier when the RMS of its forward and backward transfer
/// errors is below `threshold_px`. The best hypothesis is re-estimated by DLT
/// on its inliers and the mask recomputed once. The result has `h33 = 1`.
pub fn homography_dlt_ransac(pairs: &[(Pixel, Pixel)], threshold_px: f64, seed: u64) -> Result<(Matrix3<f64>, Vec<bool>)> {
    let n = pairs.len();
    if n < 4 {
        return Err(Error::InsufficientPairs(n));
    }
    if !(threshold_px > 0.0) {
        return Err(Error::InvalidConfig("threshold_px must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scratch: Vec<usize> = (0..n).collect();
    let mut best: Option<(Matrix3<f64>, usize)> = None;
    let mut budget = MAX_HOMOGRAPHY_HYPOTHESES;
    let mut hypothesis = 0;
    while hypothesis < budget {
        hypothesis += 1;
        let idx = sample_indices::<4>(&mut rng, &mut scratch);
        let src = idx.map(|i| pairs[i].0);
        let dst = idx.map(|i| pairs[i].1);
        if degenerate(&src) || degenerate(&dst) {
            continue;
        }
        let Some(h) = dlt(&src, &dst) else { continue };
        let Some(mask) = homography_mask(&h, pairs, threshold_px) else {
            continue;
        };
        let count = mask.iter().filter(|&&m| m).count();
        if best.as_ref().is_none_or(|&(_, b)| count > b) {
            best = Some((h, count));
            budget = budget.min(required_hypotheses(count as f64 / n as f64, 4, MAX_HOMOGRAPHY_HYPOTHESES).max(hypothesis));
        }
    }
    let best_count = best.as_ref().map_or(0, |b| b.1);
    let Some((h, _)) = best.filter(|&(_, c)| c >= MIN_HOMOGRAPHY_INLIERS) else {
        return Err(Error::NoConsensus {
            inliers: best_count,
            needed: MIN_HOMOGRAPHY_INLIERS,
        });
    };
    let mask = homography_mask(&h, pairs, threshold_px).unwrap_or_default();
    let (src, dst): (Vec<Pixel>, Vec<Pixel>) = pairs.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).unzip();
    let refit = dlt(&src, &dst)
        .and_then(|h| homography_mask(&h, pairs, threshold_px).map(|m| (h, m)))
        .filter(|(_, m)| m.iter().filter(|&&v| v).count() >= MIN_HOMOGRAPHY_INLIERS);
    Ok(refit.unwrap_or((h, mask)))
}

/// Signed shoelace area of a polygon.
pub fn polygon_area(q: &[Pixel]) -> f64 {
    let n = q.len();
    (0..n).map(|i| q[i].x * q[(i + 1) % n].y - q[(i + 1) % n].x * q[i].y).sum::<f64>() / 2.0
}

/// Strict convexity of a polygon with either winding.
pub fn is_convex(q: &[Pixel]) -> bool {
    let n = q.len();
    let mut sign = 0.0;
    for i in 0..n {
        let (a, b, c) = (q[i], q[(i + 1) % n], q[(i + 2) % n]);
        let (u, v) = (b - a, c - b);
        let cross = u.x * v.y - u.y * v.x;
        if cross == 0.0 || !cross.is_finite() || cross * sign < 0.0 {
            return false;
        }
        sign = cross;
    }
    true
}

/// Reference appearances registered in a vocabulary tree under their index.
#[derive(Clone, Debug)]
pub struct RoiDatabase {
    pub tree: VocabularyTree,
    pub references: Vec<ReferenceAppearance>,
}

impl RoiDatabase {
    /// Trains a tree on all reference descriptors and registers each reference.
    pub fn build(references: Vec<ReferenceAppearance>, branching: usize, depth: usize, seed: u64) -> Result<Self> {
        let all: Vec<Descriptor> = references.iter().flat_map(|r| r.descriptors()).collect();
        let tree = VocabularyTree::build(&all, branching, depth, seed)?;
        Self::with_tree(tree, references)
    }

    /// Registers references in an already trained tree.
    pub fn with_tree(mut tree: VocabularyTree, references: Vec<ReferenceAppearance>) -> Result<Self> {
        for (i, r) in references.iter().enumerate() {
            tree.add_image(i as u64, &r.descriptors())?;
        }
        tree.refresh_weights();
        Ok(RoiDatabase { tree, references })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionConfig {
    pub top_n: usize,
    pub ratio: f64,
    pub threshold_px: f64,
    pub min_inliers: usize,
    pub min_area_px: f64,
    pub seed: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            top_n: 5,
            ratio: 0.8,
            threshold_px: 3.0,
            min_inliers: 12,
            min_area_px: 400.0,
            seed: 0,
        }
    }
}

/// Detects references in one frame: shortlist by vocabulary score, ratio-test
/// matching, then homography verification. Detections are ordered by
/// shortlist rank.
pub fn detect_roi(db: &RoiDatabase, frame_index: u64, keypoints: &[Keypoint], cfg: &DetectionConfig) -> Vec<RoiDetection> {
    if keypoints.is_empty() || db.references.is_empty() {
        return Vec::new();
    }
    let frame_desc: Vec<Descriptor> = keypoints.iter().map(|k| k.descriptor.clone()).collect();
    let Ok(shortlist) = db.tree.query_image(&frame_desc, cfg.top_n) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (id, _) in shortlist {
        let reference = &db.references[id as usize];
        let Ok(matches) = match_descriptors(&frame_desc, &reference.descriptors(), cfg.ratio) else {
            continue;
        };
        let pairs: Vec<(Pixel, Pixel)> = matches
            .iter()
            .map(|m| (reference.keypoints[m.train_index].pixel, keypoints[m.query_index].pixel))
            .collect();
        let Ok((h, mask)) = homography_dlt_ransac(&pairs, cfg.threshold_px, cfg.seed) else {
            continue;
        };
        let inliers = mask.iter().filter(|&&m| m).count();
        if inliers < cfg.min_inliers {
            continue;
        }
        let mut quad = [Pixel::zeros(); 4];
        let mut finite = true;
        for (q, c) in quad.iter_mut().zip(reference.corners()) {
            match apply_homography(&h, &c) {
                Some(p) => *q = p,
                None => finite = false,
            }
        }
        if !finite || !is_convex(&quad) || polygon_area(&quad).abs() < cfg.min_area_px {
            continue;
        }
        out.push(RoiDetection {
            roi_label: reference.roi_label.clone(),
            frame_index,
            homography: h,
            corner_quad: quad,
            inlier_count: inliers,
        });
    }
    out
}

/// Plane through a quad, projection onto it, and the normal oriented toward `viewer`.
fn planar_quad(points: &[Vec3; 4], viewer: &Vec3) -> Option<([Vec3; 4], Vec3, f64)> {
    let (c, mut n) = fit_plane(points)?;
    let max_dist = points.iter().map(|p| (p - c).dot(&n).abs()).fold(0.0, f64::max);
    let polygon = points.map(|p| p - n * (p - c).dot(&n));
    if n.dot(&(viewer - c)) < 0.0 {
        n = -n;
    }
    Some((polygon, n, max_dist))
}

/// Lifts a detection into the world by casting its corner rays into the grid.
///
/// Returns `None` when a corner misses or the hits are not planar within 2 cm.
pub fn lift_roi(
    detection: &RoiDetection,
    frame_pose: &Pose,
    intr: &CameraIntrinsics,
    grid: &OccupancyGrid,
    max_range: f64,
) -> Option<Roi3D> {
    let mut hits = [Vec3::zeros(); 4];
    for (h, px) in hits.iter_mut().zip(&detection.corner_quad) {
        let ray = intr.pixel_to_ray(frame_pose, px).ok()?;
        *h = grid.cast_ray(&ray, max_range)?.point;
    }
    let (polygon, normal, max_dist) = planar_quad(&hits, &frame_pose.translation)?;
    if max_dist > PLANE_TOLERANCE_M {
        return None;
    }
    Some(Roi3D {
        roi_label: detection.roi_label.clone(),
        polygon,
        normal,
        support_count: 1,
    })
}

/// Cyclic shift or reversal of `quad` closest to `reference`.
fn align_corners(reference: &[Vec3; 4], quad: &[Vec3; 4]) -> [Vec3; 4] {
    let mut best = *quad;
    let mut best_cost = f64::INFINITY;
    for reversed in [false, true] {
        for shift in 0..4 {
            let cand: [Vec3; 4] = core::array::from_fn(|i| {
                let j = if reversed { (4 + shift - i) % 4 } else { (shift + i) % 4 };
                quad[j]
            });
            let cost: f64 = cand.iter().zip(reference).map(|(a, b)| (a - b).norm_squared()).sum();
            if cost < best_cost {
                best_cost = cost;
                best = cand;
            }
        }
    }
    best
}

/// Support-weighted average of two regions; corners follow the heavier one.
fn merge_pair(a: &Roi3D, b: &Roi3D) -> Roi3D {
    let (a, b) = if b.support_count > a.support_count { (b, a) } else { (a, b) };
    let bq = align_corners(&a.polygon, &b.polygon);
    let (wa, wb) = (f64::from(a.support_count), f64::from(b.support_count));
    let avg: [Vec3; 4] = core::array::from_fn(|i| (a.polygon[i] * wa + bq[i] * wb) / (wa + wb));
    let facing = a.normal * wa + b.normal * wb;
    let c = avg.iter().fold(Vec3::zeros(), |s, p| s + p) / 4.0;
    let (polygon, normal) = match planar_quad(&avg, &(c + facing)) {
        Some((p, n, _)) => (p, n),
        None => (avg, a.normal),
    };
    Roi3D {
        roi_label: a.roi_label.clone(),
        polygon,
        normal,
        support_count: a.support_count + b.support_count,
    }
}

/// Merges sightings of the same label whose centroids lie within 15 cm.
///
/// Clusters agglomerate closest pair first until every pair of same-label
/// regions is at least 15 cm apart, so merging the output again changes
/// nothing. Output is ordered by label, then by first appearance.
pub fn merge_rois(rois: &[Roi3D]) -> Vec<Roi3D> {
    let mut labels: Vec<&str> = rois.iter().map(|r| r.roi_label.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut out = Vec::new();
    for label in labels {
        let mut clusters: Vec<Roi3D> = rois.iter().filter(|r| r.roi_label == label).cloned().collect();
        loop {
            let mut closest: Option<(f64, usize, usize)> = None;
            for i in 0..clusters.len() {
                for j in i + 1..clusters.len() {
                    let d = (clusters[i].centroid() - clusters[j].centroid()).norm();
                    if d < MERGE_DISTANCE_M && closest.is_none_or(|(b, _, _)| d < b) {
                        closest = Some((d, i, j));
                    }
                }
            }
            let Some((_, i, j)) = closest else { break };
            let b = clusters.remove(j);
            clusters[i] = merge_pair(&clusters[i], &b);
        }
        out.extend(clusters);
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AnnotationSummary {
    pub frames: usize,
    pub detections: usize,
    pub lifted: usize,
    /// Detections dropped by [`lift_roi`] or seen from an unlocalized frame.
    pub rejected: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub detections: Vec<RoiDetection>,
    pub rois: Vec<Roi3D>,
    pub summary: AnnotationSummary,
}

/// Detects, lifts and merges ROIs over a frame sequence. Each frame carries
/// its index, keypoints and estimated pose, if any.
pub fn annotate<'a>(
    db: &RoiDatabase,
    frames: impl IntoIterator<Item = (u64, &'a [Keypoint], Option<Pose>)>,
    intr: &CameraIntrinsics,
    grid: &OccupancyGrid,
    cfg: &DetectionConfig,
    max_range: f64,
) -> Annotation {
    let mut summary = AnnotationSummary::default();
    let mut detections = Vec::new();
    let mut lifted = Vec::new();
    for (index, keypoints, pose) in frames {
        summary.frames += 1;
        for det in detect_roi(db, index, keypoints, cfg) {
            match pose.and_then(|p| lift_roi(&det, &p, intr, grid, max_range)) {
                Some(r) => lifted.push(r),
                None => summary.rejected += 1,
            }
            detections.push(det);
        }
    }
    summary.detections = detections.len();
    summary.lifted = lifted.len();
    Annotation {
        detections,
        rois: merge_rois(&lifted),
        summary,
    }
}
