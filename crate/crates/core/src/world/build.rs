use alloc::vec::Vec;

use super::{bootstrap_map, maybe_insert_keyframe, track_pose, DepthFrame, GridGeometry, KeyframePolicy, LogOdds, OccupancyGrid, SparseMap};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::pnp::PnPConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MapBuildConfig {
    pub pnp: PnPConfig,
    pub keyframes: KeyframePolicy,
    pub log_odds: LogOdds,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MapBuildSummary {
    pub frames: usize,
    pub tracked_frames: usize,
    pub keyframes: usize,
    pub landmarks: usize,
    pub skipped_samples: usize,
}

impl MapBuildSummary {
    pub fn keyframe_fraction(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.keyframes as f64 / self.frames as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapBuild {
    pub map: SparseMap,
    pub grid: OccupancyGrid,
    /// Estimated pose per input frame; `None` where tracking failed.
    pub poses: Vec<Option<Pose>>,
    pub summary: MapBuildSummary,
}

/// Incremental map builder fed one RGB-D frame at a time.
///
/// The first frame bootstraps the map at the identity pose. Each later frame
/// is tracked with a constant-velocity prediction as prior, may become a
/// keyframe, and has its depth integrated through its estimated pose. Frames
/// that fail to track are left out of both the map and the grid.
#[derive(Clone, Debug)]
pub struct MapBuilder {
    intr: CameraIntrinsics,
    cfg: MapBuildConfig,
    map: Option<SparseMap>,
    grid: OccupancyGrid,
    poses: Vec<Option<Pose>>,
    last: Pose,
    // motion between the last two consecutively tracked frames
    velocity: Option<Pose>,
}

impl MapBuilder {
    pub fn new(intr: CameraIntrinsics, geometry: GridGeometry, cfg: MapBuildConfig) -> Result<Self> {
        Ok(MapBuilder {
            intr,
            cfg,
            map: None,
            grid: OccupancyGrid::with_params(geometry, cfg.log_odds)?,
            poses: Vec::new(),
            last: Pose::identity(),
            velocity: None,
        })
    }

    /// Adds the next frame and returns its estimated pose, or `None` when it
    /// could not be tracked. Only a failed bootstrap is an error.
    pub fn push(&mut self, frame: &DepthFrame) -> Result<Option<Pose>> {
        let intr = &self.intr;
        let Some(map) = self.map.as_mut() else {
            self.map = Some(bootstrap_map(frame, intr)?);
            self.grid.integrate_depth(frame, &Pose::identity(), intr);
            self.poses.push(Some(Pose::identity()));
            return Ok(Some(Pose::identity()));
        };
        let prior = self.velocity.map_or(self.last, |v| self.last.compose(&v));
        let Ok(track) = track_pose(map, &frame.keypoints, intr, Some(&prior), &self.cfg.pnp) else {
            self.poses.push(None);
            self.velocity = None;
            return Ok(None);
        };
        maybe_insert_keyframe(map, &frame.keypoints, &track, frame, intr, &self.cfg.keyframes);
        let pose = track.pnp.pose;
        self.velocity = self.poses.last().copied().flatten().map(|prev| prev.inverse().compose(&pose));
        self.grid.integrate_depth(frame, &pose, intr);
        self.poses.push(Some(pose));
        self.last = pose;
        Ok(Some(pose))
    }

    pub fn map(&self) -> Option<&SparseMap> {
        self.map.as_ref()
    }

    pub fn finish(self) -> Result<MapBuild> {
        let map = self.map.ok_or(Error::TooFewKeypoints {
            needed: super::MIN_BOOTSTRAP_KEYPOINTS,
            got: 0,
        })?;
        let summary = MapBuildSummary {
            frames: self.poses.len(),
            tracked_frames: self.poses.iter().filter(|p| p.is_some()).count(),
            keyframes: map.keyframes().len(),
            landmarks: map.landmarks().len(),
            skipped_samples: self.grid.skipped_samples(),
        };
        Ok(MapBuild {
            map,
            grid: self.grid,
            poses: self.poses,
            summary,
        })
    }
}

/// Runs a [`MapBuilder`] over a whole RGB-D sequence.
pub fn build_map(frames: &[DepthFrame], intr: &CameraIntrinsics, geometry: GridGeometry, cfg: &MapBuildConfig) -> Result<MapBuild> {
    let mut builder = MapBuilder::new(*intr, geometry, *cfg)?;
    for f in frames {
        builder.push(f)?;
    }
    builder.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::map_testutil::{intr, render, scene};
    use crate::geometry::Vec3;

    #[test]
    fn builds_from_a_short_sequence() {
        let sc = scene(3, 400);
        let frames: Vec<DepthFrame> = (0..6)
            .map(|i| render(&sc, &Pose::from_translation(Vec3::new(0.06 * i as f64, 0.0, 0.0)), 0.0, i))
            .collect();
        let geometry = GridGeometry::covering(Vec3::new(-3.0, -2.0, -0.5), Vec3::new(3.0, 1.5, 3.0), 0.05).unwrap();
        let built = build_map(&frames, &intr(), geometry, &MapBuildConfig::default()).unwrap();
        assert_eq!(built.summary.tracked_frames, 6);
        for (i, p) in built.poses.iter().enumerate() {
            assert!((p.unwrap().translation.x - 0.06 * i as f64).abs() < 1e-6);
        }
        assert!(built.map.links_resolve());
        assert!(built.grid.occupied_count() > 0);
    }

    #[test]
    fn empty_sequence_fails() {
        let geometry = GridGeometry::new(Vec3::zeros(), 0.1, [2, 2, 2]).unwrap();
        assert!(build_map(&[], &intr(), geometry, &MapBuildConfig::default()).is_err());
    }
}
