//! Sparse landmark map with keyframes, and the dense occupancy grid.

mod build;
mod grid;
mod map;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

pub use build::{build_map, MapBuild, MapBuilder, MapBuildConfig, MapBuildSummary};
pub use grid::{GridGeometry, LogOdds, OccupancyGrid, RayHit};
pub use map::{
    bootstrap_map, maybe_insert_keyframe, track_pose, KeyframePolicy, Keyframe, Landmark, SparseMap, TrackResult,
    GATE_PX, MATCH_RATIO, MIN_BOOTSTRAP_KEYPOINTS,
};

use crate::features::Keypoint;
use crate::geometry::Pixel;

#[cfg(test)]
pub(crate) use map::tests as map_testutil;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthSample {
    pub pixel: Pixel,
    /// Meters along the optical axis.
    pub depth: f64,
}

/// One RGB-D frame: sparse depth samples plus the keypoints extracted from it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DepthFrame {
    pub timestamp_ms: i64,
    pub samples: Vec<DepthSample>,
    pub keypoints: Vec<Keypoint>,
}

/// Nearest-depth lookup over a frame's samples, bucketed by whole pixels.
pub struct DepthLookup<'a> {
    samples: &'a [DepthSample],
    buckets: BTreeMap<(i64, i64), Vec<u32>>,
}

impl<'a> DepthLookup<'a> {
    pub fn new(samples: &'a [DepthSample]) -> Self {
        let mut buckets: BTreeMap<(i64, i64), Vec<u32>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if s.pixel.x.is_finite() && s.pixel.y.is_finite() {
                let key = (libm::floor(s.pixel.x) as i64, libm::floor(s.pixel.y) as i64);
                buckets.entry(key).or_default().push(i as u32);
            }
        }
        DepthLookup { samples, buckets }
    }

    /// Depth of the nearest sample within 1 px of `px`; ties keep the earlier sample.
    pub fn depth_at(&self, px: &Pixel) -> Option<f64> {
        let (bx, by) = (libm::floor(px.x) as i64, libm::floor(px.y) as i64);
        let mut best: Option<(f64, u32)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(ids) = self.buckets.get(&(bx + dx, by + dy)) else {
                    continue;
                };
                for &i in ids {
                    let d2 = (self.samples[i as usize].pixel - px).norm_squared();
                    if d2 <= 1.0 && best.is_none_or(|(b, bi)| d2 < b || (d2 == b && i < bi)) {
                        best = Some((d2, i));
                    }
                }
            }
        }
        best.map(|(_, i)| self.samples[i as usize].depth)
    }
}
