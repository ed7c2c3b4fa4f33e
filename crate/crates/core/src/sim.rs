//! Seeded synthetic scenes, trajectories, RGB-D frames and gaze sessions with exact ground truth.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::{Descriptor, Keypoint};
use crate::gaze::{GazePoint3D, GazeSample, GazeStatus, SessionFrame};
use crate::geometry::{angular_error, CameraIntrinsics, Pixel, Pose, Ray, Vec3, MIN_DEPTH};
use crate::roi::ReferenceAppearance;
use crate::world::{DepthFrame, DepthSample, GridGeometry};

/// Pixel spacing of the dense depth samples.
pub const DENSE_DEPTH_STEP_PX: u32 = 4;
/// Reference-image pixels per meter of ROI patch.
pub const REFERENCE_PX_PER_M: f64 = 1000.0;

// Random sub-stream families; the low bits carry the frame or sample index.
const STREAM_LANDMARKS: u64 = 1 << 56;
const STREAM_SCAN: u64 = 2 << 56;
const STREAM_ETG: u64 = 3 << 56;
const STREAM_GAZE: u64 = 4 << 56;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"))
}

/// A world rectangle `origin + a·edge_u + b·edge_v`, `a, b ∈ [0, 1]`,
/// visible from the side its normal `edge_u × edge_v` points to.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub origin: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    /// Landmarks per square meter.
    pub density: f64,
    pub roi_label: Option<String>,
}

impl Patch {
    pub fn normal(&self) -> Vec3 {
        self.edge_u.cross(&self.edge_v).normalize()
    }

    pub fn area(&self) -> f64 {
        self.edge_u.cross(&self.edge_v).norm()
    }

    pub fn point(&self, a: f64, b: f64) -> Vec3 {
        self.origin + self.edge_u * a + self.edge_v * b
    }

    /// Corners in `(0,0)`, `(1,0)`, `(1,1)`, `(0,1)` order.
    pub fn corners(&self) -> [Vec3; 4] {
        [self.point(0.0, 0.0), self.point(1.0, 0.0), self.point(1.0, 1.0), self.point(0.0, 1.0)]
    }

    fn local(&self, p: &Vec3) -> (f64, f64) {
        let d = p - self.origin;
        // edges need not be orthogonal: solve the 2x2 Gram system
        let (uu, uv, vv) = (self.edge_u.dot(&self.edge_u), self.edge_u.dot(&self.edge_v), self.edge_v.dot(&self.edge_v));
        let (du, dv) = (d.dot(&self.edge_u), d.dot(&self.edge_v));
        let det = uu * vv - uv * uv;
        ((du * vv - dv * uv) / det, (dv * uu - du * uv) / det)
    }

    /// Distance along `ray` to the front face, if it is hit.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        let n = self.normal();
        let denom = n.dot(&ray.direction);
        if denom >= 0.0 {
            return None;
        }
        let t = n.dot(&(self.origin - ray.origin)) / denom;
        if t <= 0.0 {
            return None;
        }
        let (a, b) = self.local(&ray.at(t));
        ((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)).then_some(t)
    }

    /// Whether a viewer at `eye` sees the front face.
    pub fn faces(&self, eye: &Vec3) -> bool {
        self.normal().dot(&(eye - self.origin)) > 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub patches: Vec<Patch>,
    pub bounds_min: Vec3,
    pub bounds_max: Vec3,
    /// Occupancy grid resolution in meters.
    pub resolution: f64,
    pub descriptor_dim: usize,
    /// Per-component descriptor noise of one observation; landmark
    /// descriptors are kept at least ten times this far apart.
    pub descriptor_noise: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.patches.is_empty() {
            return bad("scene has no patches".into());
        }
        if self.descriptor_dim == 0 {
            return bad("descriptor_dim must be positive".into());
        }
        if !(self.descriptor_noise >= 0.0 && self.descriptor_noise.is_finite()) {
            return bad("descriptor_noise must be finite and nonnegative".into());
        }
        self.grid_geometry()?;
        let tol = 1e-9;
        for (i, p) in self.patches.iter().enumerate() {
            if !(p.density > 0.0 && p.density.is_finite()) {
                return bad(format!("patches[{i}].density must be positive"));
            }
            if !(p.area() > 0.0 && p.area().is_finite()) {
                return bad(format!("patches[{i}] edges must span a rectangle"));
            }
            for c in p.corners() {
                let inside = (0..3).all(|a| c[a] >= self.bounds_min[a] - tol && c[a] <= self.bounds_max[a] + tol);
                if !inside {
                    return bad(format!("patches[{i}] leaves the bounding box"));
                }
            }
        }
        Ok(())
    }

    /// Grid covering the bounding box, anchored at `bounds_min`.
    pub fn grid_geometry(&self) -> Result<GridGeometry> {
        GridGeometry::covering(self.bounds_min, self.bounds_max, self.resolution)
            .map_err(|e| Error::InvalidSpec(format!("bounding box: {e}")))
    }

    /// Smallest pairwise landmark descriptor distance the generator guarantees.
    pub fn descriptor_floor(&self) -> f64 {
        10.0 * self.descriptor_noise
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimLandmark {
    pub id: u64,
    pub position: Vec3,
    pub descriptor: Descriptor,
    pub patch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub landmarks: Vec<SimLandmark>,
    /// One per ROI patch, in patch order.
    pub references: Vec<ReferenceAppearance>,
}

/// Rejects candidates closer than `floor` to an accepted descriptor, using a
/// hash on the leading components to limit comparisons.
struct DescriptorPool {
    floor: f64,
    keys: usize,
    accepted: Vec<Vec<f64>>,
    cells: BTreeMap<Vec<i64>, Vec<u32>>,
}

impl DescriptorPool {
    fn new(floor: f64, dim: usize) -> Self {
        DescriptorPool {
            floor,
            keys: dim.min(4),
            accepted: Vec::new(),
            cells: BTreeMap::new(),
        }
    }

    fn key(&self, v: &[f64]) -> Vec<i64> {
        v[..self.keys].iter().map(|x| libm::floor(x / self.floor) as i64).collect()
    }

    fn try_insert(&mut self, v: Vec<f64>) -> bool {
        if self.floor > 0.0 {
            let key = self.key(&v);
            let mut offsets = alloc::vec![0i64; self.keys];
            loop {
                let probe: Vec<i64> = key.iter().zip(&offsets).map(|(k, o)| k + o).collect();
                if let Some(ids) = self.cells.get(&probe) {
                    for &i in ids {
                        if crate::features::squared_distance(&self.accepted[i as usize], &v) < self.floor * self.floor {
                            return false;
                        }
                    }
                }
                // odometer over {-1, 0, 1}^keys
                let mut a = 0;
                while a < self.keys {
                    offsets[a] = match offsets[a] {
                        0 => 1,
                        1 => -1,
                        _ => 0,
                    };
                    if offsets[a] != 0 {
                        break;
                    }
                    a += 1;
                }
                if a == self.keys {
                    break;
                }
            }
            self.cells.entry(key).or_default().push(self.accepted.len() as u32);
        } else if self.accepted.contains(&v) {
            return false;
        }
        self.accepted.push(v);
        true
    }
}

/// Landmarks uniform on each patch, `round(area · density)` per patch, with
/// standard-normal descriptors kept apart by [`SceneSpec::descriptor_floor`].
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, STREAM_LANDMARKS);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut pool = DescriptorPool::new(spec.descriptor_floor(), spec.descriptor_dim);
    let mut landmarks = Vec::new();
    let mut references = Vec::new();
    for (pi, patch) in spec.patches.iter().enumerate() {
        let count = libm::round(patch.area() * patch.density) as usize;
        let mut ref_kps = Vec::new();
        for _ in 0..count {
            let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
            let desc = loop {
                let v: Vec<f64> = (0..spec.descriptor_dim).map(|_| unit.sample(&mut rng)).collect();
                if pool.try_insert(v.clone()) {
                    break Descriptor::new(v).map_err(|_| Error::InvalidSpec("degenerate descriptor".into()))?;
                }
            };
            if patch.roi_label.is_some() {
                let px = Pixel::new(a * patch.edge_u.norm() * REFERENCE_PX_PER_M, b * patch.edge_v.norm() * REFERENCE_PX_PER_M);
                ref_kps.push(Keypoint::new(px, desc.clone()));
            }
            landmarks.push(SimLandmark {
                id: landmarks.len() as u64,
                position: patch.point(a, b),
                descriptor: desc,
                patch: pi,
            });
        }
        if let Some(label) = &patch.roi_label {
            let size = (patch.edge_u.norm() * REFERENCE_PX_PER_M, patch.edge_v.norm() * REFERENCE_PX_PER_M);
            let r = ReferenceAppearance::new(label.clone(), ref_kps, size)
                .map_err(|e| Error::InvalidSpec(format!("patches[{pi}] ({label}): {e}")))?;
            references.push(r);
        }
    }
    Ok(Scene {
        spec: spec.clone(),
        landmarks,
        references,
    })
}

impl Scene {
    /// Nearest front-face hit along `ray`: distance and patch index.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in self.spec.patches.iter().enumerate() {
            if let Some(t) = p.intersect(ray) {
                if best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    /// Whether `point` on patch `patch` is unoccluded from `eye`.
    fn visible(&self, eye: &Vec3, point: &Vec3, patch: usize) -> bool {
        if !self.spec.patches[patch].faces(eye) {
            return false;
        }
        let d = point - eye;
        let dist = d.norm();
        let Ok(ray) = Ray::new(*eye, d) else { return false };
        let eps = 1e-6 * dist.max(1.0);
        self.spec
            .patches
            .iter()
            .enumerate()
            .all(|(i, p)| i == patch || p.intersect(&ray).is_none_or(|t| t >= dist - eps))
    }

    /// ROI labels and their true world polygons, in patch order.
    pub fn roi_polygons(&self) -> Vec<(String, [Vec3; 4])> {
        self.spec
            .patches
            .iter()
            .filter_map(|p| p.roi_label.clone().map(|l| (l, p.corners())))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseProfile {
    pub keypoint_px_sigma: f64,
    pub depth_sigma_m: f64,
    pub detection_dropout: f64,
    /// Per-component noise added to observed descriptors.
    pub descriptor_sigma: f64,
    /// Per-axis gaze noise, as an angle at the principal point.
    pub gaze_sigma_deg: f64,
    /// Landmarks and surfaces farther than this from the camera go unobserved.
    pub max_range_m: Option<f64>,
}

impl NoiseProfile {
    pub fn zero() -> Self {
        NoiseProfile {
            keypoint_px_sigma: 0.0,
            depth_sigma_m: 0.0,
            detection_dropout: 0.0,
            descriptor_sigma: 0.0,
            gaze_sigma_deg: 0.0,
            max_range_m: None,
        }
    }

    /// 0.5 px keypoints, 5 mm depth, 0.5° gaze.
    pub fn nominal() -> Self {
        NoiseProfile {
            keypoint_px_sigma: 0.5,
            depth_sigma_m: 0.005,
            detection_dropout: 0.0,
            descriptor_sigma: 0.05,
            gaze_sigma_deg: 0.5,
            max_range_m: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !(ok(self.keypoint_px_sigma) && ok(self.depth_sigma_m) && ok(self.descriptor_sigma) && ok(self.gaze_sigma_deg)) {
            return Err(Error::InvalidSpec("noise sigmas must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.detection_dropout) {
            return Err(Error::InvalidSpec("detection_dropout must lie in [0, 1]".into()));
        }
        if self.max_range_m.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidSpec("max_range_m must be positive".into()));
        }
        Ok(())
    }
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile::nominal()
    }
}

/// Keypoints of every visible landmark, in landmark order.
///
/// Each keypoint carries its landmark id as label. Noise draws come from the
/// sub-stream `stream`, so frames render identically in any order.
pub fn render_keypoints(scene: &Scene, pose: &Pose, intr: &CameraIntrinsics, noise: &NoiseProfile, stream: u64) -> Vec<Keypoint> {
    render(scene, pose, intr, noise, stream, false).keypoints
}

/// One RGB-D frame: keypoints as in [`render_keypoints`], a depth sample at
/// every keypoint and a dense depth grid every [`DENSE_DEPTH_STEP_PX`] pixels.
pub fn render_frame(scene: &Scene, pose: &Pose, intr: &CameraIntrinsics, noise: &NoiseProfile, stream: u64) -> DepthFrame {
    render(scene, pose, intr, noise, stream, true)
}

fn render(scene: &Scene, pose: &Pose, intr: &CameraIntrinsics, noise: &NoiseProfile, stream: u64, dense: bool) -> DepthFrame {
    let mut rng = stream_rng(scene.spec.seed, stream);
    let px_noise = normal(noise.keypoint_px_sigma);
    let depth_noise = normal(noise.depth_sigma_m);
    let desc_noise = normal(noise.descriptor_sigma);
    let eye = pose.translation;
    let range = noise.max_range_m.unwrap_or(f64::INFINITY);
    let mut frame = DepthFrame::default();
    for lm in &scene.landmarks {
        if (lm.position - eye).norm() > range {
            continue;
        }
        let c = pose.inverse_transform_point(&lm.position);
        if c.z <= MIN_DEPTH {
            continue;
        }
        let Ok(px) = intr.project_camera(&c) else { continue };
        if !intr.contains(&px) || !scene.visible(&eye, &lm.position, lm.patch) {
            continue;
        }
        // fixed draw count per visible landmark keeps streams aligned across profiles
        let drop = rng.random::<f64>() < noise.detection_dropout;
        let mut px = px;
        let (nu, nv) = (px_noise.map_or(0.0, |n| n.sample(&mut rng)), px_noise.map_or(0.0, |n| n.sample(&mut rng)));
        px += Pixel::new(nu, nv);
        let depth = c.z + depth_noise.map_or(0.0, |n| n.sample(&mut rng));
        let desc = match desc_noise {
            Some(n) => {
                let v: Vec<f64> = lm.descriptor.as_slice().iter().map(|x| x + n.sample(&mut rng)).collect();
                Descriptor::new(v).unwrap_or_else(|_| lm.descriptor.clone())
            }
            None => lm.descriptor.clone(),
        };
        if drop || !intr.contains(&px) {
            continue;
        }
        if dense && depth > MIN_DEPTH {
            frame.samples.push(DepthSample { pixel: px, depth });
        }
        frame.keypoints.push(Keypoint {
            pixel: px,
            descriptor: desc,
            landmark_id: Some(lm.id),
        });
    }
    if dense {
        let step = DENSE_DEPTH_STEP_PX as usize;
        let half = DENSE_DEPTH_STEP_PX as f64 / 2.0;
        for v in (0..intr.height as usize).step_by(step) {
            for u in (0..intr.width as usize).step_by(step) {
                let px = Pixel::new(u as f64 + half, v as f64 + half);
                let Ok(ray) = intr.pixel_to_ray(pose, &px) else { continue };
                let Some((t, _)) = scene.intersect(&ray).filter(|&(t, _)| t <= range) else { continue };
                let z = pose.inverse_transform_point(&ray.at(t)).z;
                let depth = z + depth_noise.map_or(0.0, |n| n.sample(&mut rng));
                if depth > MIN_DEPTH {
                    frame.samples.push(DepthSample { pixel: px, depth });
                }
            }
        }
    }
    frame
}

/// Poses interpolated through waypoints at a fixed frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub waypoints: Vec<Pose>,
    pub frame_count: usize,
    pub frame_rate: f64,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::InvalidSpec("trajectory needs at least 2 waypoints".into()));
        }
        if self.frame_count < 2 {
            return Err(Error::InvalidSpec("trajectory needs at least 2 frames".into()));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::InvalidSpec("frame_rate must be positive".into()));
        }
        Ok(())
    }

    /// Pose at parameter `s ∈ [0, 1]` along the waypoint polyline, segments equally weighted.
    pub fn pose_at(&self, s: f64) -> Pose {
        let segments = self.waypoints.len() - 1;
        let x = s.clamp(0.0, 1.0) * segments as f64;
        let k = (libm::floor(x) as usize).min(segments - 1);
        self.waypoints[k].interpolate(&self.waypoints[k + 1], x - k as f64)
    }

    pub fn poses(&self) -> Vec<Pose> {
        (0..self.frame_count)
            .map(|i| self.pose_at(i as f64 / (self.frame_count - 1) as f64))
            .collect()
    }

    pub fn timestamp_ms(&self, frame: usize) -> i64 {
        libm::round(frame as f64 * 1000.0 / self.frame_rate) as i64
    }

    pub fn duration_ms(&self) -> i64 {
        libm::round(self.frame_count as f64 * 1000.0 / self.frame_rate) as i64
    }

    /// Video frame on screen at time `t_ms`.
    pub fn frame_at(&self, t_ms: i64) -> usize {
        let f = libm::floor(t_ms as f64 * self.frame_rate / 1000.0 + 1e-9);
        (f.max(0.0) as usize).min(self.frame_count - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GazeTarget {
    /// Looks at a world point.
    Fixate(Vec3),
    /// Sweeps linearly from the previous fixation target to the next one.
    Saccade,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScriptEntry {
    pub start_ms: i64,
    /// Exclusive.
    pub end_ms: i64,
    pub target: GazeTarget,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleTruth {
    pub timestamp_ms: i64,
    pub frame_index: u64,
    pub ray: Ray,
    /// Exact intersection with the scene patches.
    pub point: Option<Vec3>,
    /// Script entry active at this sample.
    pub script_entry: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GazeSession {
    pub samples: Vec<GazeSample>,
    pub frames: Vec<SessionFrame>,
    pub frame_poses: Vec<Pose>,
    pub truth: Vec<SampleTruth>,
}

fn fixation_target(script: &[ScriptEntry], k: usize, backward: bool) -> Option<Vec3> {
    let pick = |e: &ScriptEntry| match e.target {
        GazeTarget::Fixate(p) => Some(p),
        GazeTarget::Saccade => None,
    };
    if backward {
        script[..k].iter().rev().find_map(pick)
    } else {
        script[k + 1..].iter().find_map(pick)
    }
}

/// Gaze samples at `rate_hz` along the scene-camera trajectory.
///
/// Each sample uses the pose of the video frame on screen at its timestamp.
/// Samples outside every script entry, or whose noisy pixel leaves the image,
/// are marked invalid. Noise is per-axis Gaussian in pixels with
/// `σ = fx · tan(gaze_sigma_deg)`.
pub fn generate_gaze_session(
    scene: &Scene,
    trajectory: &TrajectorySpec,
    script: &[ScriptEntry],
    intr: &CameraIntrinsics,
    noise: &NoiseProfile,
    rate_hz: f64,
) -> Result<GazeSession> {
    trajectory.validate()?;
    noise.validate()?;
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(Error::InvalidSpec("gaze rate must be positive".into()));
    }
    let poses = trajectory.poses();
    let frames: Vec<SessionFrame> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| SessionFrame {
            frame_index: i as u64,
            keypoints: render_keypoints(scene, p, intr, noise, STREAM_ETG | i as u64),
        })
        .collect();
    let gaze_noise = normal(intr.fx * libm::tan(noise.gaze_sigma_deg.to_radians()));
    let mut samples = Vec::new();
    let mut truth = Vec::new();
    let duration = trajectory.duration_ms();
    let mut i = 0u64;
    loop {
        let t = libm::round(i as f64 * 1000.0 / rate_hz) as i64;
        if t >= duration {
            break;
        }
        let frame = trajectory.frame_at(t);
        let pose = &poses[frame];
        let entry = script.iter().position(|e| e.start_ms <= t && t < e.end_ms);
        let target = match entry.map(|k| (k, script[k].target)) {
            Some((_, GazeTarget::Fixate(p))) => Some(p),
            Some((k, GazeTarget::Saccade)) => {
                let e = &script[k];
                match (fixation_target(script, k, true), fixation_target(script, k, false)) {
                    (Some(a), Some(b)) => {
                        let s = (t - e.start_ms) as f64 / (e.end_ms - e.start_ms) as f64;
                        Some(a + (b - a) * s)
                    }
                    (a, b) => a.or(b),
                }
            }
            None => None,
        };
        let mut rng = stream_rng(scene.spec.seed, STREAM_GAZE | i);
        let (nu, nv) = (gaze_noise.map_or(0.0, |n| n.sample(&mut rng)), gaze_noise.map_or(0.0, |n| n.sample(&mut rng)));
        let (sample, sample_truth) = match target {
            Some(p) => {
                let c = pose.inverse_transform_point(&p);
                let true_px = intr.project_camera(&c).ok().filter(|px| intr.contains(px));
                let fixating = matches!(entry.map(|k| script[k].target), Some(GazeTarget::Fixate(_)));
                let Some(true_px) = true_px else {
                    return Err(Error::TargetNotVisible { t_ms: t });
                };
                let ray = intr.pixel_to_ray(pose, &true_px)?;
                let hit = scene.intersect(&ray);
                if fixating && hit.is_none_or(|(d, _)| d < (p - ray.origin).norm() - 1e-3) {
                    return Err(Error::TargetNotVisible { t_ms: t });
                }
                let noisy = true_px + Pixel::new(nu, nv);
                (
                    GazeSample {
                        timestamp_ms: t,
                        frame_index: frame as u64,
                        gaze_px: noisy,
                        valid: intr.contains(&noisy),
                    },
                    SampleTruth {
                        timestamp_ms: t,
                        frame_index: frame as u64,
                        ray,
                        point: hit.map(|(d, _)| ray.at(d)),
                        script_entry: entry,
                    },
                )
            }
            None => {
                let centre = Pixel::new(intr.cx, intr.cy);
                let ray = intr.pixel_to_ray(pose, &centre)?;
                (
                    GazeSample {
                        timestamp_ms: t,
                        frame_index: frame as u64,
                        gaze_px: centre,
                        valid: false,
                    },
                    SampleTruth {
                        timestamp_ms: t,
                        frame_index: frame as u64,
                        ray,
                        point: scene.intersect(&ray).map(|(d, _)| ray.at(d)),
                        script_entry: None,
                    },
                )
            }
        };
        samples.push(sample);
        truth.push(sample_truth);
        i += 1;
    }
    Ok(GazeSession {
        samples,
        frames,
        frame_poses: poses,
        truth,
    })
}

/// Complete simulation input: scene, cameras, scan and scene-camera
/// trajectories, gaze script and noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationSpec {
    pub scene: SceneSpec,
    pub rgbd_intrinsics: CameraIntrinsics,
    pub etg_intrinsics: CameraIntrinsics,
    pub scan: TrajectorySpec,
    pub etg: TrajectorySpec,
    pub gaze_rate_hz: f64,
    pub gaze_script: Vec<ScriptEntry>,
    pub noise: NoiseProfile,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub scene: Scene,
    pub scan_poses: Vec<Pose>,
    pub scan_frames: Vec<DepthFrame>,
    pub session: GazeSession,
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.scan.validate()?;
        self.etg.validate()?;
        self.noise.validate()?;
        self.rgbd_intrinsics.validate().map_err(|e| Error::InvalidSpec(format!("rgbd_intrinsics: {e}")))?;
        self.etg_intrinsics.validate().map_err(|e| Error::InvalidSpec(format!("etg_intrinsics: {e}")))?;
        for (i, e) in self.gaze_script.iter().enumerate() {
            if e.end_ms <= e.start_ms {
                return Err(Error::InvalidSpec(format!("gaze_script[{i}]: end must follow start")));
            }
        }
        Ok(())
    }
}

/// Runs the whole generator. Scan frames are timestamped at the scan frame rate.
pub fn simulate(spec: &SimulationSpec) -> Result<Simulation> {
    spec.validate()?;
    let scene = generate_scene(&spec.scene)?;
    let scan_poses = spec.scan.poses();
    let scan_frames = scan_poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut f = render_frame(&scene, p, &spec.rgbd_intrinsics, &spec.noise, STREAM_SCAN | i as u64);
            f.timestamp_ms = spec.scan.timestamp_ms(i);
            f
        })
        .collect();
    let session = generate_gaze_session(&scene, &spec.etg, &spec.gaze_script, &spec.etg_intrinsics, &spec.noise, spec.gaze_rate_hz)?;
    Ok(Simulation {
        scene,
        scan_poses,
        scan_frames,
        session,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub median_angular_deg: f64,
    pub mean_angular_deg: f64,
    pub median_error_m: f64,
    pub mean_error_m: f64,
    pub localized_pct: f64,
    pub hit_pct: f64,
    pub samples: usize,
    /// Samples entering the angular statistics.
    pub angular_count: usize,
    /// Samples entering the 3D statistics.
    pub point_count: usize,
}

fn median_mean(mut v: Vec<f64>) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
    (median, v.iter().sum::<f64>() / n as f64)
}

/// Errors of recovered gaze against ground truth, index-aligned.
///
/// Only hit samples enter the error statistics; the 3D error also needs a
/// true intersection. Rates are percentages of all samples.
pub fn evaluate(recovered: &[GazePoint3D], truth: &[SampleTruth]) -> Result<Metrics> {
    if recovered.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: recovered.len(),
            right: truth.len(),
        });
    }
    let mut angular = Vec::new();
    let mut metric = Vec::new();
    for (r, t) in recovered.iter().zip(truth) {
        if r.status != GazeStatus::Hit {
            continue;
        }
        if let Some(ray) = r.ray {
            angular.push(angular_error(&ray.direction, &t.ray.direction)?);
        }
        if let (Some(p), Some(q)) = (r.point, t.point) {
            metric.push((p - q).norm());
        }
    }
    let n = recovered.len();
    let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
    let (angular_count, point_count) = (angular.len(), metric.len());
    let (median_angular_deg, mean_angular_deg) = median_mean(angular);
    let (median_error_m, mean_error_m) = median_mean(metric);
    Ok(Metrics {
        median_angular_deg,
        mean_angular_deg,
        median_error_m,
        mean_error_m,
        localized_pct: pct(recovered.iter().filter(|r| r.status != GazeStatus::FrameLost).count()),
        hit_pct: pct(recovered.iter().filter(|r| r.is_hit()).count()),
        samples: n,
        angular_count,
        point_count,
    })
}

/// The bundled desk scene: a back wall 1.2 m ahead, a desk top, a monitor
/// panel and three logo regions. Scanning starts at the identity pose.
pub fn desk_scene(seed: u64) -> SimulationSpec {
    use crate::geometry::Rotation;
    let v = Vec3::new;
    let patch = |origin: Vec3, u: Vec3, w: Vec3, density: f64, label: Option<&str>| Patch {
        origin,
        edge_u: u,
        edge_v: w,
        density,
        roi_label: label.map(String::from),
    };
    let scene = SceneSpec {
        patches: alloc::vec![
            patch(v(-1.2, 0.6, 1.2), v(2.4, 0.0, 0.0), v(0.0, -1.4, 0.0), 120.0, None),
            patch(v(-1.2, 0.4, 0.3), v(2.4, 0.0, 0.0), v(0.0, 0.0, 0.9), 100.0, None),
            patch(v(-0.3, 0.05, 0.9), v(0.6, 0.0, 0.0), v(0.0, -0.4, 0.0), 150.0, None),
            patch(v(-0.9, -0.25, 1.2), v(0.3, 0.0, 0.0), v(0.0, -0.2, 0.0), 600.0, Some("logo_a")),
            patch(v(0.55, -0.1, 1.2), v(0.25, 0.0, 0.0), v(0.0, -0.25, 0.0), 600.0, Some("logo_b")),
            patch(v(-0.1, -0.05, 0.9), v(0.2, 0.0, 0.0), v(0.0, -0.15, 0.0), 900.0, Some("screen")),
        ],
        // faces of the 2 cm grid sit 5 mm in front of the wall, panel and desk planes
        bounds_min: v(-1.305, -0.905, -0.005),
        bounds_max: v(1.295, 0.615, 1.275),
        resolution: 0.02,
        descriptor_dim: 32,
        descriptor_noise: 0.05,
        seed,
    };
    let yaw = |deg: f64| Rotation::exp(&v(0.0, deg.to_radians(), 0.0));
    let pose = |deg: f64, t: Vec3| Pose::new(yaw(deg), t);
    let scan = TrajectorySpec {
        waypoints: alloc::vec![
            Pose::identity(),
            pose(-12.0, v(-0.5, -0.05, 0.0)),
            pose(12.0, v(0.5, -0.05, 0.0)),
            pose(0.0, v(0.0, -0.1, 0.25)),
        ],
        frame_count: 40,
        frame_rate: 5.0,
    };
    let etg = TrajectorySpec {
        waypoints: alloc::vec![
            pose(-5.0, v(-0.15, -0.05, 0.2)),
            pose(5.0, v(0.15, -0.1, 0.25)),
            pose(0.0, v(0.0, -0.05, 0.2)),
        ],
        frame_count: 240,
        frame_rate: 24.0,
    };
    let targets = [
        v(-0.75, -0.35, 1.2),
        v(0.0, -0.12, 0.9),
        v(0.67, -0.22, 1.2),
        v(-0.45, 0.25, 1.2),
        v(0.3, -0.5, 1.2),
    ];
    let mut gaze_script = Vec::new();
    let mut t = 0;
    for (k, target) in targets.iter().enumerate() {
        gaze_script.push(ScriptEntry {
            start_ms: t,
            end_ms: t + 1920,
            target: GazeTarget::Fixate(*target),
        });
        t += 1920;
        if k + 1 < targets.len() {
            gaze_script.push(ScriptEntry {
                start_ms: t,
                end_ms: t + 100,
                target: GazeTarget::Saccade,
            });
            t += 100;
        }
    }
    SimulationSpec {
        scene,
        rgbd_intrinsics: CameraIntrinsics::new(525.0, 525.0, 320.0, 240.0, 640, 480).expect("valid intrinsics"),
        etg_intrinsics: CameraIntrinsics::new(850.0, 850.0, 640.0, 480.0, 1280, 960).expect("valid intrinsics"),
        scan,
        etg,
        gaze_rate_hz: 30.0,
        gaze_script,
        noise: NoiseProfile::nominal(),
    }
}

/// The desk scene watched from about 2 m: the scene camera stands 1 m
/// behind the scan start and fixates only wall targets.
pub fn desk_scene_far(seed: u64) -> SimulationSpec {
    let mut spec = desk_scene(seed);
    let back = Pose::from_translation(Vec3::new(0.0, 0.0, -1.0));
    for w in &mut spec.etg.waypoints {
        *w = back.compose(w);
    }
    let wall = [
        Vec3::new(-0.75, -0.35, 1.2),
        Vec3::new(0.0, -0.6, 1.2),
        Vec3::new(0.67, -0.22, 1.2),
        Vec3::new(-0.45, 0.25, 1.2),
        Vec3::new(0.3, -0.5, 1.2),
    ];
    let mut fixations = spec.gaze_script.iter_mut().filter(|e| e.target != GazeTarget::Saccade);
    for target in wall {
        if let Some(e) = fixations.next() {
            e.target = GazeTarget::Fixate(target);
        }
    }
    spec
}

/// A straight corridor 2 m wide and 2.5 m high, walked for `walk_m` meters
/// in `frame_count` scan frames at 10 frames/s with a slight sway.
pub fn corridor_scene(seed: u64, walk_m: f64, frame_count: usize) -> SimulationSpec {
    use crate::geometry::Rotation;
    let v = Vec3::new;
    let len = walk_m + 2.0;
    let end = walk_m + 1.5;
    let patch = |origin: Vec3, u: Vec3, w: Vec3| Patch {
        origin,
        edge_u: u,
        edge_v: w,
        density: 25.0,
        roi_label: None,
    };
    let scene = SceneSpec {
        patches: alloc::vec![
            patch(v(-1.0, 1.2, -0.5), v(0.0, 0.0, len), v(0.0, -2.5, 0.0)),
            patch(v(1.0, 1.2, -0.5), v(0.0, -2.5, 0.0), v(0.0, 0.0, len)),
            patch(v(-1.0, 1.2, -0.5), v(2.0, 0.0, 0.0), v(0.0, 0.0, len)),
            patch(v(-1.0, -1.3, -0.5), v(0.0, 0.0, len), v(2.0, 0.0, 0.0)),
            patch(v(-1.0, 1.2, end), v(2.0, 0.0, 0.0), v(0.0, -2.5, 0.0)),
        ],
        bounds_min: v(-1.05, -1.35, -0.55),
        bounds_max: v(1.05, 1.25, end + 0.05),
        resolution: 0.05,
        descriptor_dim: 32,
        descriptor_noise: 0.05,
        seed,
    };
    let pose = |deg: f64, t: Vec3| Pose::new(Rotation::exp(&v(0.0, deg.to_radians(), 0.0)), t);
    let waypoints = alloc::vec![
        Pose::identity(),
        pose(5.0, v(0.1, 0.0, walk_m / 3.0)),
        pose(-5.0, v(-0.1, 0.0, 2.0 * walk_m / 3.0)),
        pose(0.0, v(0.0, 0.0, walk_m)),
    ];
    let scan = TrajectorySpec {
        waypoints: waypoints.clone(),
        frame_count,
        frame_rate: 10.0,
    };
    let etg = TrajectorySpec {
        waypoints,
        frame_count: (frame_count as f64 * 2.4) as usize,
        frame_rate: 24.0,
    };
    let gaze_script = alloc::vec![ScriptEntry {
        start_ms: 0,
        end_ms: etg.duration_ms(),
        target: GazeTarget::Fixate(v(0.0, 0.0, end)),
    }];
    let d = desk_scene(seed);
    SimulationSpec {
        scene,
        scan,
        etg,
        gaze_script,
        noise: NoiseProfile {
            max_range_m: Some(6.0),
            ..d.noise
        },
        ..d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn single_patch(density: f64) -> SceneSpec {
        SceneSpec {
            patches: vec![Patch {
                origin: Vec3::new(-1.0, 1.0, 2.0),
                edge_u: Vec3::new(2.0, 0.0, 0.0),
                edge_v: Vec3::new(0.0, -2.0, 0.0),
                density,
                roi_label: None,
            }],
            bounds_min: Vec3::new(-1.5, -1.5, -0.5),
            bounds_max: Vec3::new(1.5, 1.5, 2.5),
            resolution: 0.05,
            descriptor_dim: 32,
            descriptor_noise: 0.05,
            seed: 4,
        }
    }

    #[test]
    fn landmark_count_and_plane() {
        let s = generate_scene(&single_patch(25.0)).unwrap();
        assert_eq!(s.landmarks.len(), 100);
        assert!(s.landmarks.iter().all(|l| l.position.z == 2.0 && l.position.x.abs() <= 1.0 && l.position.y.abs() <= 1.0));
        assert_eq!(generate_scene(&single_patch(25.0)).unwrap(), s);
    }

    #[test]
    fn descriptor_floor_holds() {
        let spec = single_patch(2500.0);
        let s = generate_scene(&spec).unwrap();
        assert_eq!(s.landmarks.len(), 10_000);
        let floor = spec.descriptor_floor();
        // exhaustive pairwise check
        let mut min = f64::INFINITY;
        for i in 0..s.landmarks.len() {
            for j in i + 1..s.landmarks.len() {
                min = min.min(s.landmarks[i].descriptor.distance_squared(&s.landmarks[j].descriptor));
            }
        }
        assert!(libm::sqrt(min) >= floor);
    }

    #[test]
    fn pool_rejects_close_descriptors() {
        let mut pool = DescriptorPool::new(0.5, 6);
        assert!(pool.try_insert(vec![0.0; 6]));
        assert!(!pool.try_insert(vec![0.3, -0.3, 0.0, 0.0, 0.0, 0.1]));
        assert!(pool.try_insert(vec![0.3, -0.3, 0.0, 0.0, 0.0, 0.4]));
    }

    #[test]
    fn invalid_specs() {
        let mut s = single_patch(25.0);
        s.patches[0].density = 0.0;
        assert!(matches!(generate_scene(&s), Err(Error::InvalidSpec(m)) if m.contains("patches[0].density")));
        let mut s = single_patch(25.0);
        s.patches[0].origin.z = 3.0;
        assert!(matches!(generate_scene(&s), Err(Error::InvalidSpec(_))));
    }

    fn rgbd() -> CameraIntrinsics {
        CameraIntrinsics::new(525.0, 525.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn noiseless_render_is_exact() {
        let s = generate_scene(&single_patch(25.0)).unwrap();
        let f = render_frame(&s, &Pose::identity(), &rgbd(), &NoiseProfile::zero(), 0);
        assert!(!f.keypoints.is_empty());
        for k in &f.keypoints {
            let lm = &s.landmarks[k.landmark_id.unwrap() as usize];
            assert_eq!(k.pixel, rgbd().project(&Pose::identity(), &lm.position).unwrap());
            assert_eq!(k.descriptor, lm.descriptor);
        }
        for d in &f.samples {
            assert!((d.depth - 2.0).abs() < 1e-12);
        }
        let mut all = NoiseProfile::zero();
        all.detection_dropout = 1.0;
        assert!(render_frame(&s, &Pose::identity(), &rgbd(), &all, 0).keypoints.is_empty());
    }

    #[test]
    fn back_faces_are_invisible() {
        let s = generate_scene(&single_patch(25.0)).unwrap();
        let behind = Pose::new(crate::geometry::Rotation::exp(&Vec3::new(0.0, core::f64::consts::PI, 0.0)), Vec3::new(0.0, 0.0, 4.0));
        assert!(render_frame(&s, &behind, &rgbd(), &NoiseProfile::zero(), 0).keypoints.is_empty());
    }

    #[test]
    fn pixel_noise_is_half_normal() {
        let s = generate_scene(&single_patch(1000.0)).unwrap();
        let mut noise = NoiseProfile::zero();
        noise.keypoint_px_sigma = 0.5;
        let mut sum = 0.0;
        let mut n = 0usize;
        let mut stream = 0;
        while n < 10_000 {
            for k in render_keypoints(&s, &Pose::identity(), &rgbd(), &noise, stream) {
                let lm = &s.landmarks[k.landmark_id.unwrap() as usize];
                let truth = rgbd().project(&Pose::identity(), &lm.position).unwrap();
                sum += (k.pixel.x - truth.x).abs();
                n += 1;
            }
            stream += 1;
        }
        let mean = sum / n as f64;
        // mean |N(0, σ²)| = σ·√(2/π)
        assert!((mean - 0.5 * libm::sqrt(2.0 / core::f64::consts::PI)).abs() < 0.01, "{mean}");
    }

    #[test]
    fn occluded_landmarks_are_hidden() {
        let mut spec = single_patch(25.0);
        spec.patches.push(Patch {
            origin: Vec3::new(-0.5, 0.5, 1.0),
            edge_u: Vec3::new(1.0, 0.0, 0.0),
            edge_v: Vec3::new(0.0, -1.0, 0.0),
            density: 1.0,
            roi_label: None,
        });
        let s = generate_scene(&spec).unwrap();
        let f = render_frame(&s, &Pose::identity(), &rgbd(), &NoiseProfile::zero(), 0);
        for k in &f.keypoints {
            let lm = &s.landmarks[k.landmark_id.unwrap() as usize];
            if lm.patch == 0 {
                // wall points behind the occluder project inside its image
                let hidden = lm.position.x.abs() < 1.0 && lm.position.y.abs() < 1.0;
                assert!(!hidden, "{:?}", lm.position);
            }
        }
    }

    #[test]
    fn static_gaze_projects_to_target() {
        let s = generate_scene(&single_patch(25.0)).unwrap();
        let etg = CameraIntrinsics::new(850.0, 850.0, 640.0, 480.0, 1280, 960).unwrap();
        let traj = TrajectorySpec {
            waypoints: vec![Pose::from_translation(Vec3::new(0.0, 0.0, 1.0)); 2],
            frame_count: 24,
            frame_rate: 24.0,
        };
        let target = Vec3::new(0.1, 0.2, 2.0);
        let script = [ScriptEntry {
            start_ms: 0,
            end_ms: 1000,
            target: GazeTarget::Fixate(target),
        }];
        let g = generate_gaze_session(&s, &traj, &script, &etg, &NoiseProfile::zero(), 30.0).unwrap();
        assert_eq!(g.samples.len(), 30);
        let px = etg.project(&traj.waypoints[0], &target).unwrap();
        for (smp, t) in g.samples.iter().zip(&g.truth) {
            assert_eq!(smp.gaze_px, px);
            assert!(smp.valid);
            assert!((t.point.unwrap() - target).norm() < 1e-12);
        }
        assert_eq!(g.samples[1].frame_index, 0);
        assert_eq!(g.samples[2].frame_index, 1);
    }

    #[test]
    fn gaze_noise_in_pixels() {
        let sigma = 850.0 * libm::tan(0.5f64.to_radians());
        assert!((sigma - 7.4).abs() < 0.05);
    }

    #[test]
    fn invisible_target_is_rejected() {
        let s = generate_scene(&single_patch(25.0)).unwrap();
        let etg = CameraIntrinsics::new(850.0, 850.0, 640.0, 480.0, 1280, 960).unwrap();
        let traj = TrajectorySpec {
            waypoints: vec![Pose::identity(); 2],
            frame_count: 10,
            frame_rate: 24.0,
        };
        let script = [ScriptEntry {
            start_ms: 0,
            end_ms: 1000,
            target: GazeTarget::Fixate(Vec3::new(0.0, 0.0, -1.0)),
        }];
        assert_eq!(
            generate_gaze_session(&s, &traj, &script, &etg, &NoiseProfile::zero(), 30.0),
            Err(Error::TargetNotVisible { t_ms: 0 })
        );
    }

    #[test]
    fn evaluate_examples() {
        let ray = Ray::new(Vec3::zeros(), Vec3::z()).unwrap();
        let truth: Vec<SampleTruth> = (0..5)
            .map(|i| SampleTruth {
                timestamp_ms: i,
                frame_index: 0,
                ray,
                point: Some(Vec3::new(0.0, 0.0, 2.0)),
                script_entry: None,
            })
            .collect();
        let perfect: Vec<GazePoint3D> = truth
            .iter()
            .map(|t| GazePoint3D {
                timestamp_ms: t.timestamp_ms,
                point: t.point,
                ray: Some(t.ray),
                status: GazeStatus::Hit,
            })
            .collect();
        let m = evaluate(&perfect, &truth).unwrap();
        assert_eq!((m.median_angular_deg, m.mean_error_m, m.hit_pct), (0.0, 0.0, 100.0));

        let tilted = Ray::new(Vec3::zeros(), Vec3::new(libm::tan(1f64.to_radians()), 0.0, 1.0)).unwrap();
        let off: Vec<GazePoint3D> = perfect.iter().map(|p| GazePoint3D { ray: Some(tilted), ..*p }).collect();
        assert!((evaluate(&off, &truth).unwrap().median_angular_deg - 1.0).abs() < 1e-9);
        assert!(matches!(evaluate(&off[..2], &truth), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn desk_scene_is_deterministic() {
        let spec = desk_scene(7);
        let mut small = spec.clone();
        small.scan.frame_count = 3;
        let a = simulate(&small).unwrap();
        let b = simulate(&small).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scan_poses[0], Pose::identity());
        assert_eq!(a.scene.references.len(), 3);
    }
}
