//! Line records of recovered gaze, frame poses and ground truth, and the
//! ROI and metrics documents.

use std::path::Path;

use gaze3d_core::gaze::{GazePoint3D, GazeStatus, LocalizedFrame};
use gaze3d_core::geometry::Pose;
use gaze3d_core::roi::Roi3D;
use gaze3d_core::sim::{Metrics, SampleTruth};
use serde::{Deserialize, Serialize};

use super::{pose_from, to_vec3, vec3, RayRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaze3dRecord {
    pub t_ms: i64,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ray: Option<RayRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_pose: Option<[f64; 7]>,
}

impl Gaze3dRecord {
    pub fn new(p: &GazePoint3D, frame_pose: Option<&Pose>) -> Self {
        Gaze3dRecord {
            t_ms: p.timestamp_ms,
            status: p.status.as_str().to_string(),
            point: p.point.as_ref().map(vec3),
            ray: p.ray.as_ref().map(RayRecord::from),
            frame_pose: frame_pose.map(Pose::to_array),
        }
    }

    pub fn to_core(&self, path: &Path) -> Result<GazePoint3D> {
        let status = GazeStatus::parse(&self.status)
            .ok_or_else(|| Error::format(path, format!("t_ms {}: unknown status `{}`", self.t_ms, self.status)))?;
        if (status == GazeStatus::Hit) != self.point.is_some() {
            return Err(Error::format(path, format!("t_ms {}: a point is present iff status is hit", self.t_ms)));
        }
        Ok(GazePoint3D {
            timestamp_ms: self.t_ms,
            point: self.point.map(to_vec3),
            ray: self.ray.as_ref().map(|r| r.to_core(path)).transpose()?,
            status,
        })
    }
}

pub fn gaze_points(path: &Path, records: &[Gaze3dRecord]) -> Result<Vec<GazePoint3D>> {
    records.iter().map(|r| r.to_core(path)).collect()
}

/// Localization outcome of one scene-video frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame: u64,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<[f64; 7]>,
    pub inliers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_px: Option<f64>,
}

impl From<&LocalizedFrame> for FrameRecord {
    fn from(f: &LocalizedFrame) -> Self {
        let localized = f.is_localized();
        FrameRecord {
            frame: f.frame_index,
            status: if localized { "localized" } else { "lost" }.to_string(),
            pose: f.pose.as_ref().filter(|_| localized).map(Pose::to_array),
            inliers: f.inlier_count,
            rmse_px: Some(f.rmse_px).filter(|r| localized && r.is_finite()),
        }
    }
}

impl FrameRecord {
    pub fn to_core(&self, path: &Path) -> Result<LocalizedFrame> {
        match (self.status.as_str(), &self.pose) {
            ("localized", Some(p)) => Ok(LocalizedFrame::localized(
                self.frame,
                pose_from(path, p)?,
                self.inliers,
                self.rmse_px.unwrap_or(0.0),
            )),
            ("lost", None) => Ok(LocalizedFrame::lost(self.frame)),
            _ => Err(Error::format(path, format!("frame {}: inconsistent status `{}`", self.frame, self.status))),
        }
    }
}


/// Ground truth of one gaze sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub t_ms: i64,
    pub frame: u64,
    pub ray: RayRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 3]>,
    /// Index of the active gaze-script entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_entry: Option<usize>,
}

impl From<&SampleTruth> for TruthRecord {
    fn from(t: &SampleTruth) -> Self {
        TruthRecord {
            t_ms: t.timestamp_ms,
            frame: t.frame_index,
            ray: RayRecord::from(&t.ray),
            point: t.point.as_ref().map(vec3),
            script_entry: t.script_entry,
        }
    }
}

impl TruthRecord {
    pub fn to_core(&self, path: &Path) -> Result<SampleTruth> {
        Ok(SampleTruth {
            timestamp_ms: self.t_ms,
            frame_index: self.frame,
            ray: self.ray.to_core(path)?,
            point: self.point.map(to_vec3),
            script_entry: self.script_entry,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiRecord {
    pub label: String,
    pub polygon: [[f64; 3]; 4],
    pub normal: [f64; 3],
    pub support: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiFile {
    pub rois: Vec<RoiRecord>,
}

impl RoiFile {
    pub fn from_rois(rois: &[Roi3D]) -> Self {
        RoiFile {
            rois: rois
                .iter()
                .map(|r| RoiRecord {
                    label: r.roi_label.clone(),
                    polygon: r.polygon.map(|p| vec3(&p)),
                    normal: vec3(&r.normal),
                    support: r.support_count,
                })
                .collect(),
        }
    }

    pub fn to_rois(&self, path: &Path) -> Result<Vec<Roi3D>> {
        self.rois
            .iter()
            .map(|r| {
                let normal = to_vec3(r.normal);
                if (normal.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::format(path, format!("roi `{}`: normal is not unit length", r.label)));
                }
                Ok(Roi3D {
                    roi_label: r.label.clone(),
                    polygon: r.polygon.map(to_vec3),
                    normal,
                    support_count: r.support,
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    pub samples: usize,
    pub median_angular_deg: f64,
    pub mean_angular_deg: f64,
    pub median_error_m: f64,
    pub mean_error_m: f64,
    pub localized_pct: f64,
    pub hit_pct: f64,
    pub angular_count: usize,
    pub point_count: usize,
}

impl From<&Metrics> for MetricsFile {
    fn from(m: &Metrics) -> Self {
        MetricsFile {
            samples: m.samples,
            median_angular_deg: m.median_angular_deg,
            mean_angular_deg: m.mean_angular_deg,
            median_error_m: m.median_error_m,
            mean_error_m: m.mean_error_m,
            localized_pct: m.localized_pct,
            hit_pct: m.hit_pct,
            angular_count: m.angular_count,
            point_count: m.point_count,
        }
    }
}
