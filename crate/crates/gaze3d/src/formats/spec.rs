//! Simulation spec documents and the bundled scenes.

use std::path::Path;

use gaze3d_core::geometry::Pose;
use gaze3d_core::sim::{self, GazeTarget, NoiseProfile, Patch, SceneSpec, ScriptEntry, SimulationSpec, TrajectorySpec};
use serde::{Deserialize, Serialize};

use super::{pose_from, to_vec3, vec3, Intrinsics};
use crate::error::{Error, Result};

/// Names accepted in place of a spec file.
pub const BUNDLED: [&str; 3] = ["desk-scene", "desk-far", "corridor"];

pub fn bundled(name: &str, seed: u64) -> Option<SimulationSpec> {
    match name {
        "desk-scene" => Some(sim::desk_scene(seed)),
        "desk-far" => Some(sim::desk_scene_far(seed)),
        "corridor" => Some(sim::corridor_scene(seed, 4.0, 40)),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchDoc {
    pub origin: [f64; 3],
    pub edge_u: [f64; 3],
    pub edge_v: [f64; 3],
    pub density: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi_label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDoc {
    pub patches: Vec<PatchDoc>,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub resolution: f64,
    pub descriptor_dim: usize,
    pub descriptor_noise: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryDoc {
    /// `[qw, qx, qy, qz, tx, ty, tz]` camera-to-world.
    pub waypoints: Vec<[f64; 7]>,
    pub frame_count: usize,
    pub frame_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetDoc {
    Fixate([f64; 3]),
    Saccade,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntryDoc {
    pub start_ms: i64,
    pub end_ms: i64,
    pub target: TargetDoc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseDoc {
    pub keypoint_px_sigma: f64,
    pub depth_sigma_m: f64,
    pub detection_dropout: f64,
    pub descriptor_sigma: f64,
    pub gaze_sigma_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_range_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationDoc {
    pub scene: SceneDoc,
    pub rgbd_intrinsics: Intrinsics,
    pub etg_intrinsics: Intrinsics,
    pub scan: TrajectoryDoc,
    pub etg: TrajectoryDoc,
    pub gaze_rate_hz: f64,
    pub gaze_script: Vec<ScriptEntryDoc>,
    pub noise: NoiseDoc,
}

fn trajectory_doc(t: &TrajectorySpec) -> TrajectoryDoc {
    TrajectoryDoc {
        waypoints: t.waypoints.iter().map(Pose::to_array).collect(),
        frame_count: t.frame_count,
        frame_rate: t.frame_rate,
    }
}

impl From<&SimulationSpec> for SimulationDoc {
    fn from(s: &SimulationSpec) -> Self {
        let n = &s.noise;
        SimulationDoc {
            scene: SceneDoc {
                patches: s
                    .scene
                    .patches
                    .iter()
                    .map(|p| PatchDoc {
                        origin: vec3(&p.origin),
                        edge_u: vec3(&p.edge_u),
                        edge_v: vec3(&p.edge_v),
                        density: p.density,
                        roi_label: p.roi_label.clone(),
                    })
                    .collect(),
                bounds_min: vec3(&s.scene.bounds_min),
                bounds_max: vec3(&s.scene.bounds_max),
                resolution: s.scene.resolution,
                descriptor_dim: s.scene.descriptor_dim,
                descriptor_noise: s.scene.descriptor_noise,
                seed: s.scene.seed,
            },
            rgbd_intrinsics: Intrinsics::from(&s.rgbd_intrinsics),
            etg_intrinsics: Intrinsics::from(&s.etg_intrinsics),
            scan: trajectory_doc(&s.scan),
            etg: trajectory_doc(&s.etg),
            gaze_rate_hz: s.gaze_rate_hz,
            gaze_script: s
                .gaze_script
                .iter()
                .map(|e| ScriptEntryDoc {
                    start_ms: e.start_ms,
                    end_ms: e.end_ms,
                    target: match e.target {
                        GazeTarget::Fixate(p) => TargetDoc::Fixate(vec3(&p)),
                        GazeTarget::Saccade => TargetDoc::Saccade,
                    },
                })
                .collect(),
            noise: NoiseDoc {
                keypoint_px_sigma: n.keypoint_px_sigma,
                depth_sigma_m: n.depth_sigma_m,
                detection_dropout: n.detection_dropout,
                descriptor_sigma: n.descriptor_sigma,
                gaze_sigma_deg: n.gaze_sigma_deg,
                max_range_m: n.max_range_m,
            },
        }
    }
}

impl SimulationDoc {
    pub fn to_spec(&self, path: &Path) -> Result<SimulationSpec> {
        let trajectory = |name: &str, t: &TrajectoryDoc| -> Result<TrajectorySpec> {
            let waypoints = t
                .waypoints
                .iter()
                .enumerate()
                .map(|(i, w)| pose_from(path, w).map_err(|e| Error::format(path, format!("{name}.waypoints[{i}]: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrajectorySpec {
                waypoints,
                frame_count: t.frame_count,
                frame_rate: t.frame_rate,
            })
        };
        let sc = &self.scene;
        let spec = SimulationSpec {
            scene: SceneSpec {
                patches: sc
                    .patches
                    .iter()
                    .map(|p| Patch {
                        origin: to_vec3(p.origin),
                        edge_u: to_vec3(p.edge_u),
                        edge_v: to_vec3(p.edge_v),
                        density: p.density,
                        roi_label: p.roi_label.clone(),
                    })
                    .collect(),
                bounds_min: to_vec3(sc.bounds_min),
                bounds_max: to_vec3(sc.bounds_max),
                resolution: sc.resolution,
                descriptor_dim: sc.descriptor_dim,
                descriptor_noise: sc.descriptor_noise,
                seed: sc.seed,
            },
            rgbd_intrinsics: self.rgbd_intrinsics.to_core(path)?,
            etg_intrinsics: self.etg_intrinsics.to_core(path)?,
            scan: trajectory("scan", &self.scan)?,
            etg: trajectory("etg", &self.etg)?,
            gaze_rate_hz: self.gaze_rate_hz,
            gaze_script: self
                .gaze_script
                .iter()
                .map(|e| ScriptEntry {
                    start_ms: e.start_ms,
                    end_ms: e.end_ms,
                    target: match e.target {
                        TargetDoc::Fixate(p) => GazeTarget::Fixate(to_vec3(p)),
                        TargetDoc::Saccade => GazeTarget::Saccade,
                    },
                })
                .collect(),
            noise: NoiseProfile {
                keypoint_px_sigma: self.noise.keypoint_px_sigma,
                depth_sigma_m: self.noise.depth_sigma_m,
                detection_dropout: self.noise.detection_dropout,
                descriptor_sigma: self.noise.descriptor_sigma,
                gaze_sigma_deg: self.noise.gaze_sigma_deg,
                max_range_m: self.noise.max_range_m,
            },
        };
        spec.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(spec)
    }
}

/// Per-frame true poses, landmark positions and ROI polygons of a simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneTruth {
    pub scan_poses: Vec<[f64; 7]>,
    pub etg_poses: Vec<[f64; 7]>,
    pub landmarks: Vec<(u64, [f64; 3])>,
    pub rois: Vec<(String, [[f64; 3]; 4])>,
}

impl SceneTruth {
    pub fn new(s: &sim::Simulation) -> Self {
        SceneTruth {
            scan_poses: s.scan_poses.iter().map(Pose::to_array).collect(),
            etg_poses: s.session.frame_poses.iter().map(Pose::to_array).collect(),
            landmarks: s.scene.landmarks.iter().map(|l| (l.id, vec3(&l.position))).collect(),
            rois: s.scene.roi_polygons().into_iter().map(|(l, p)| (l, p.map(|c| vec3(&c)))).collect(),
        }
    }
}
