//! Per-frame localization of the scene camera and 3D gaze recovery by ray casting.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::features::Keypoint;
use crate::geometry::{CameraIntrinsics, Frustum, Pixel, Pose, Ray, Vec3};
use crate::pnp::PnPConfig;
use crate::world::{track_pose, OccupancyGrid, SparseMap};

/// Default ray-cast range in meters.
pub const DEFAULT_MAX_RANGE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GazeSample {
    pub timestamp_ms: i64,
    pub frame_index: u64,
    pub gaze_px: Pixel,
    pub valid: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameStatus {
    Localized,
    Lost,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizedFrame {
    pub frame_index: u64,
    /// Present iff the frame is localized.
    pub pose: Option<Pose>,
    pub inlier_count: usize,
    pub rmse_px: f64,
    pub status: FrameStatus,
}

impl LocalizedFrame {
    pub fn lost(frame_index: u64) -> Self {
        LocalizedFrame {
            frame_index,
            pose: None,
            inlier_count: 0,
            rmse_px: 0.0,
            status: FrameStatus::Lost,
        }
    }

    pub fn localized(frame_index: u64, pose: Pose, inlier_count: usize, rmse_px: f64) -> Self {
        LocalizedFrame {
            frame_index,
            pose: Some(pose),
            inlier_count,
            rmse_px,
            status: FrameStatus::Localized,
        }
    }

    pub fn is_localized(&self) -> bool {
        self.status == FrameStatus::Localized
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GazeStatus {
    Hit,
    Miss,
    FrameLost,
    Invalid,
}

impl GazeStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            GazeStatus::Hit => "hit",
            GazeStatus::Miss => "miss",
            GazeStatus::FrameLost => "frame_lost",
            GazeStatus::Invalid => "invalid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "hit" => GazeStatus::Hit,
            "miss" => GazeStatus::Miss,
            "frame_lost" => GazeStatus::FrameLost,
            "invalid" => GazeStatus::Invalid,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GazePoint3D {
    pub timestamp_ms: i64,
    /// Present iff `status` is `Hit`.
    pub point: Option<Vec3>,
    /// The cast gaze ray; absent when no ray could be formed.
    pub ray: Option<Ray>,
    pub status: GazeStatus,
}

impl GazePoint3D {
    fn without_ray(timestamp_ms: i64, status: GazeStatus) -> Self {
        GazePoint3D {
            timestamp_ms,
            point: None,
            ray: None,
            status,
        }
    }

    pub fn is_hit(&self) -> bool {
        self.status == GazeStatus::Hit
    }
}

/// Localizes one scene-camera frame against the map.
///
/// The previous frame's pose, when localized, seeds gated matching. Any
/// tracking failure yields a `Lost` frame.
pub fn localize_frame(
    map: &SparseMap,
    frame_index: u64,
    keypoints: &[Keypoint],
    intr: &CameraIntrinsics,
    prev: Option<&LocalizedFrame>,
    cfg: &PnPConfig,
) -> LocalizedFrame {
    let prior = prev.and_then(|p| p.pose.as_ref());
    match track_pose(map, keypoints, intr, prior, cfg) {
        Ok(t) => LocalizedFrame::localized(frame_index, t.pnp.pose, t.inlier_count(), t.pnp.rmse_px),
        Err(_) => LocalizedFrame::lost(frame_index),
    }
}

/// 3D gaze point of one sample seen from `frame`.
pub fn recover_gaze(
    sample: &GazeSample,
    frame: &LocalizedFrame,
    intr: &CameraIntrinsics,
    grid: &OccupancyGrid,
    max_range: f64,
) -> GazePoint3D {
    let t = sample.timestamp_ms;
    if !sample.valid {
        return GazePoint3D::without_ray(t, GazeStatus::Invalid);
    }
    let Some(pose) = frame.pose.filter(|_| frame.is_localized()) else {
        return GazePoint3D::without_ray(t, GazeStatus::FrameLost);
    };
    let Ok(ray) = intr.pixel_to_ray(&pose, &sample.gaze_px) else {
        return GazePoint3D::without_ray(t, GazeStatus::Invalid);
    };
    match grid.cast_ray(&ray, max_range) {
        Some(hit) => GazePoint3D {
            timestamp_ms: t,
            point: Some(hit.point),
            ray: Some(ray),
            status: GazeStatus::Hit,
        },
        None => GazePoint3D {
            timestamp_ms: t,
            point: None,
            ray: Some(ray),
            status: GazeStatus::Miss,
        },
    }
}

/// Keypoints extracted from one scene-video frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionFrame {
    pub frame_index: u64,
    pub keypoints: Vec<Keypoint>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GazeConfig {
    pub pnp: PnPConfig,
    pub max_range: f64,
}

impl Default for GazeConfig {
    fn default() -> Self {
        GazeConfig {
            pnp: PnPConfig::default(),
            max_range: DEFAULT_MAX_RANGE,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SessionSummary {
    pub frames: usize,
    pub localized_frames: usize,
    pub samples: usize,
    pub hits: usize,
}

impl SessionSummary {
    pub fn localized_fraction(&self) -> f64 {
        fraction(self.localized_frames, self.frames)
    }

    pub fn hit_fraction(&self) -> f64 {
        fraction(self.hits, self.samples)
    }
}

fn fraction(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionResult {
    /// One per gaze sample, in sample order.
    pub points: Vec<GazePoint3D>,
    /// One per session frame, in frame order.
    pub frames: Vec<LocalizedFrame>,
    pub summary: SessionSummary,
}

/// Localizes every frame in order, chaining each pose into the next frame's
/// prior, then recovers every gaze sample. Samples whose frame is missing
/// from `frames` count as lost.
pub fn recover_session(
    samples: &[GazeSample],
    frames: &[SessionFrame],
    map: &SparseMap,
    grid: &OccupancyGrid,
    intr: &CameraIntrinsics,
    cfg: &GazeConfig,
) -> Result<SessionResult> {
    if samples.is_empty() {
        return Err(Error::EmptySession);
    }
    let mut localized: Vec<LocalizedFrame> = Vec::with_capacity(frames.len());
    let mut prev: Option<LocalizedFrame> = None;
    for f in frames {
        let lf = localize_frame(map, f.frame_index, &f.keypoints, intr, prev.as_ref(), &cfg.pnp);
        if lf.is_localized() {
            prev = Some(lf);
        }
        localized.push(lf);
    }
    let mut by_index: Vec<(u64, usize)> = localized.iter().enumerate().map(|(i, f)| (f.frame_index, i)).collect();
    by_index.sort_unstable();
    let points: Vec<GazePoint3D> = samples
        .iter()
        .map(|s| {
            let frame = match by_index.binary_search_by_key(&s.frame_index, |&(k, _)| k) {
                Ok(j) => localized[by_index[j].1],
                Err(_) => LocalizedFrame::lost(s.frame_index),
            };
            recover_gaze(s, &frame, intr, grid, cfg.max_range)
        })
        .collect();
    let summary = SessionSummary {
        frames: localized.len(),
        localized_frames: localized.iter().filter(|f| f.is_localized()).count(),
        samples: points.len(),
        hits: points.iter().filter(|p| p.is_hit()).count(),
    };
    Ok(SessionResult {
        points,
        frames: localized,
        summary,
    })
}

/// View frustum of every localized frame; lost frames are skipped.
pub fn frustum_track(frames: &[LocalizedFrame], intr: &CameraIntrinsics, near: f64, far: f64) -> Result<Vec<Frustum>> {
    frames
        .iter()
        .filter_map(|f| f.pose.filter(|_| f.is_localized()))
        .map(|pose| Frustum::new(&pose, intr, near, far))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{angular_error, Rotation};
    use crate::world::map_testutil::{render, scene};
    use crate::world::{bootstrap_map, GridGeometry, Landmark};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn etg() -> CameraIntrinsics {
        CameraIntrinsics::new(850.0, 850.0, 640.0, 480.0, 1280, 960).unwrap()
    }

    /// Grid whose voxels straddling z = 2 are occupied.
    fn wall_grid() -> OccupancyGrid {
        let g = GridGeometry::new(Vec3::new(-3.025, -2.025, -0.025), 0.05, [121, 81, 50]).unwrap();
        let mut grid = OccupancyGrid::new(g).unwrap();
        for x in 0..121 {
            for y in 0..81 {
                grid.set_log_odds([x, y, 40], 3.5);
            }
        }
        grid
    }

    fn sample(t: i64, px: Pixel) -> GazeSample {
        GazeSample {
            timestamp_ms: t,
            frame_index: 0,
            gaze_px: px,
            valid: true,
        }
    }

    fn identity_frame() -> LocalizedFrame {
        LocalizedFrame::localized(0, Pose::identity(), 100, 0.0)
    }

    #[test]
    fn principal_point_hits_voxel_entry_face() {
        let grid = wall_grid();
        let g = recover_gaze(&sample(0, Pixel::new(640.0, 480.0)), &identity_frame(), &etg(), &grid, 10.0);
        assert_eq!(g.status, GazeStatus::Hit);
        let p = g.point.unwrap();
        assert!((p - Vec3::new(0.0, 0.0, 1.975)).norm() < 1e-12, "{p:?}");
        let eps = grid.geometry().resolution / 100.0;
        assert!(grid.is_occupied(&(p + g.ray.unwrap().direction * eps)));
    }

    #[test]
    fn invalid_lost_and_miss() {
        let grid = wall_grid();
        let mut s = sample(5, Pixel::new(640.0, 480.0));
        s.valid = false;
        let g = recover_gaze(&s, &identity_frame(), &etg(), &grid, 10.0);
        assert_eq!((g.status, g.ray, g.point), (GazeStatus::Invalid, None, None));

        let g = recover_gaze(&sample(5, Pixel::new(640.0, 480.0)), &LocalizedFrame::lost(0), &etg(), &grid, 10.0);
        assert_eq!(g.status, GazeStatus::FrameLost);

        let away = LocalizedFrame::localized(0, Pose::new(Rotation::exp(&Vec3::new(0.0, core::f64::consts::PI, 0.0)), Vec3::zeros()), 50, 0.0);
        let g = recover_gaze(&sample(5, Pixel::new(640.0, 480.0)), &away, &etg(), &grid, 10.0);
        assert_eq!(g.status, GazeStatus::Miss);
        assert!(g.ray.is_some() && g.point.is_none());

        let g = recover_gaze(&sample(5, Pixel::new(-3.0, 480.0)), &identity_frame(), &etg(), &grid, 10.0);
        assert_eq!(g.status, GazeStatus::Invalid);
    }

    #[test]
    fn hits_lie_in_occupied_voxels() {
        let grid = wall_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps = grid.geometry().resolution / 100.0;
        for t in 0..2000 {
            let px = Pixel::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..960.0));
            let g = recover_gaze(&sample(t, px), &identity_frame(), &etg(), &grid, 10.0);
            if let Some(p) = g.point {
                assert!(grid.is_occupied(&(p + g.ray.unwrap().direction * eps)));
            }
        }
    }

    fn scene_map(seed: u64) -> (Vec<(Vec3, crate::features::Descriptor)>, SparseMap) {
        let s = scene(seed, 2000);
        let landmarks = s
            .iter()
            .enumerate()
            .map(|(i, (p, d))| Landmark {
                id: i as u64,
                position: *p,
                descriptor: d.clone(),
                observation_count: 1,
            })
            .collect();
        (s, SparseMap::from_parts(32, landmarks, Vec::new()).unwrap())
    }

    fn etg_view(rng: &mut ChaCha8Rng) -> Pose {
        Pose::new(
            Rotation::exp(&Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.15..0.15), rng.random_range(-0.05..0.05))),
            Vec3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.2..0.2), rng.random_range(-0.3..0.3)),
        )
    }

    fn etg_keypoints(s: &[(Vec3, crate::features::Descriptor)], pose: &Pose, sigma: f64, seed: u64) -> Vec<Keypoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        let w2c = pose.inverse();
        s.iter()
            .filter_map(|(p, d)| {
                let mut px = etg().project_camera(&w2c.transform_point(p)).ok()?;
                if !etg().contains(&px) {
                    return None;
                }
                if sigma > 0.0 {
                    px += Pixel::new(n.sample(&mut rng), n.sample(&mut rng));
                }
                Some(Keypoint::new(px, d.clone()))
            })
            .collect()
    }

    #[test]
    fn localization_rotation_error_median() {
        let mut errors = Vec::new();
        for seed in 0..100 {
            let (s, map) = scene_map(1000 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = etg_view(&mut rng);
            let kps = etg_keypoints(&s, &truth, 0.5, seed);
            let f = localize_frame(&map, 0, &kps, &etg(), None, &PnPConfig::default());
            assert!(f.is_localized());
            assert!(f.inlier_count >= PnPConfig::default().min_inliers);
            errors.push(f.pose.unwrap().rotation.angle_to(&truth.rotation).to_degrees());
        }
        errors.sort_by(f64::total_cmp);
        assert!(errors[50] < 0.2, "median {}", errors[50]);
    }

    #[test]
    fn keyframe_image_localizes_at_keyframe_pose() {
        let s = scene(9, 600);
        let frame = render(&s, &Pose::identity(), 0.0, 1);
        let map = bootstrap_map(&frame, &crate::world::map_testutil::intr()).unwrap();
        let kf = &map.keyframes()[0];
        let f = localize_frame(&map, 3, &kf.keypoints, &crate::world::map_testutil::intr(), None, &PnPConfig::default());
        let pose = f.pose.unwrap();
        assert!((pose.translation - kf.pose.translation).norm() < 1e-6);
        assert!(pose.rotation.angle_to(&kf.pose.rotation) < 1e-6);
    }

    #[test]
    fn unmapped_view_is_lost() {
        let (_, map) = scene_map(1);
        let (other, _) = scene_map(2);
        let kps = etg_keypoints(&other, &Pose::identity(), 0.0, 0);
        let f = localize_frame(&map, 7, &kps, &etg(), None, &PnPConfig::default());
        assert_eq!(f, LocalizedFrame::lost(7));
    }

    /// Session over the wall scene where frames 40..=60 see an unmapped scene.
    fn session() -> (SparseMap, Vec<SessionFrame>, Vec<GazeSample>, Vec<Pose>) {
        let (s, map) = scene_map(21);
        let (foreign, _) = scene_map(22);
        let mut frames = Vec::new();
        let mut samples = Vec::new();
        let mut poses = Vec::new();
        let start = Pose::from_translation(Vec3::new(-0.3, 0.0, 0.0));
        let end = Pose::new(Rotation::exp(&Vec3::new(0.0, 0.1, 0.0)), Vec3::new(0.3, 0.05, 0.2));
        for i in 0..100u64 {
            let pose = start.interpolate(&end, i as f64 / 99.0);
            let lost = (40..=60).contains(&i);
            let kps = etg_keypoints(if lost { &foreign } else { &s }, &pose, 0.5, i);
            frames.push(SessionFrame { frame_index: i, keypoints: kps });
            poses.push(pose);
            samples.push(GazeSample {
                timestamp_ms: (i as i64) * 33,
                frame_index: i,
                gaze_px: Pixel::new(600.0 + i as f64, 470.0),
                valid: true,
            });
        }
        (map, frames, samples, poses)
    }

    #[test]
    fn session_with_unmapped_stretch() {
        let (map, frames, samples, poses) = session();
        let grid = wall_grid();
        let out = recover_session(&samples, &frames, &map, &grid, &etg(), &GazeConfig::default()).unwrap();
        assert_eq!(out.points.len(), 100);
        for (i, (f, p)) in out.frames.iter().zip(&out.points).enumerate() {
            if (40..=60).contains(&i) {
                assert_eq!(f.status, FrameStatus::Lost);
                assert_eq!(p.status, GazeStatus::FrameLost);
            } else {
                assert!(f.is_localized(), "frame {i}");
                assert_eq!(p.status, GazeStatus::Hit);
                let truth = etg().pixel_to_ray(&poses[i], &samples[i].gaze_px).unwrap();
                assert!(angular_error(&p.ray.unwrap().direction, &truth.direction).unwrap() < 0.2);
            }
        }
        assert_eq!(out.summary.localized_frames, 79);
        assert_eq!(out.summary.hits, 79);
        let again = recover_session(&samples, &frames, &map, &grid, &etg(), &GazeConfig::default()).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn empty_session() {
        let (map, frames, _, _) = session();
        assert_eq!(
            recover_session(&[], &frames, &map, &wall_grid(), &etg(), &GazeConfig::default()),
            Err(Error::EmptySession)
        );
    }

    #[test]
    fn frustums_skip_lost_frames() {
        let mut frames = vec![identity_frame(); 10];
        frames.insert(3, LocalizedFrame::lost(3));
        frames.push(LocalizedFrame::lost(11));
        let fr = frustum_track(&frames, &etg(), 0.1, 5.0).unwrap();
        assert_eq!(fr.len(), 10);
        assert_eq!(fr[0].apex, Vec3::zeros());
        let expected = 2.0 * libm::atan(640.0 / 850.0);
        assert!((etg().horizontal_fov_deg() - expected.to_degrees()).abs() < 1e-12);
        assert!((expected.to_degrees() - 73.9).abs() < 0.1);
    }

    #[test]
    fn pixel_noise_maps_to_angular_error() {
        // With exact poses the ray error equals the pixel offset pushed through the intrinsics.
        let intr = etg();
        let truth = Pixel::new(640.0, 480.0);
        for d in [1.0, 7.4, 20.0] {
            let a = intr.pixel_to_ray(&Pose::identity(), &truth).unwrap();
            let b = intr.pixel_to_ray(&Pose::identity(), &(truth + Pixel::new(d, 0.0))).unwrap();
            let err = angular_error(&a.direction, &b.direction).unwrap();
            let expected = libm::atan(d / 850.0).to_degrees();
            assert!((err - expected).abs() <= 0.01 * expected);
        }
    }
}
