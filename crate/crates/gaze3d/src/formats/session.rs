//! Session directory: manifest, scene-video features, RGB-D features and
//! depth, gaze samples and reference appearances.

use std::path::{Path, PathBuf};

use gaze3d_core::features::{Descriptor, Keypoint};
use gaze3d_core::gaze::{GazeSample, SessionFrame};
use gaze3d_core::geometry::{CameraIntrinsics, Pixel};
use gaze3d_core::roi::ReferenceAppearance;
use gaze3d_core::world::{DepthFrame, DepthSample, GridGeometry};
use serde::{Deserialize, Serialize};

use super::{check_finite, to_vec3, vec3, Intrinsics};
use crate::error::{Error, Result};
use crate::io::{read_json, read_jsonl};

pub const MANIFEST: &str = "manifest.json";
pub const REFERENCE_MANIFEST: &str = "references.json";

/// One gaze sample per JSON line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GazeRecord {
    pub t_ms: i64,
    pub frame: u64,
    pub gaze_px: [f64; 2],
    pub valid: bool,
}

impl From<&GazeSample> for GazeRecord {
    fn from(s: &GazeSample) -> Self {
        GazeRecord {
            t_ms: s.timestamp_ms,
            frame: s.frame_index,
            gaze_px: [s.gaze_px.x, s.gaze_px.y],
            valid: s.valid,
        }
    }
}

impl From<&GazeRecord> for GazeSample {
    fn from(r: &GazeRecord) -> Self {
        GazeSample {
            timestamp_ms: r.t_ms,
            frame_index: r.frame,
            gaze_px: Pixel::new(r.gaze_px[0], r.gaze_px[1]),
            valid: r.valid,
        }
    }
}

/// Keypoints of one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFile {
    pub frame: u64,
    pub keypoints: Vec<[f64; 2]>,
    pub descriptors: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark_ids: Option<Vec<u64>>,
}

impl FeatureFile {
    /// Generator labels are written only when every keypoint carries one.
    pub fn from_keypoints(frame: u64, keypoints: &[Keypoint]) -> Self {
        let ids: Option<Vec<u64>> = keypoints.iter().map(|k| k.landmark_id).collect();
        FeatureFile {
            frame,
            keypoints: keypoints.iter().map(|k| [k.pixel.x, k.pixel.y]).collect(),
            descriptors: keypoints.iter().map(|k| k.descriptor.as_slice().to_vec()).collect(),
            landmark_ids: ids.filter(|v| !v.is_empty()),
        }
    }

    pub fn to_keypoints(&self, path: &Path, dim: usize) -> Result<Vec<Keypoint>> {
        if self.descriptors.len() != self.keypoints.len() {
            return Err(Error::format(
                path,
                format!("{} keypoints but {} descriptors", self.keypoints.len(), self.descriptors.len()),
            ));
        }
        if let Some(ids) = &self.landmark_ids {
            if ids.len() != self.keypoints.len() {
                return Err(Error::format(path, format!("{} keypoints but {} landmark_ids", self.keypoints.len(), ids.len())));
            }
        }
        self.keypoints
            .iter()
            .zip(&self.descriptors)
            .enumerate()
            .map(|(i, (px, d))| {
                if d.len() != dim {
                    return Err(Error::format(path, format!("descriptors[{i}] has dimension {}, expected {dim}", d.len())));
                }
                let descriptor =
                    Descriptor::new(d.clone()).map_err(|e| Error::format(path, format!("descriptors[{i}]: {e}")))?;
                Ok(Keypoint {
                    pixel: Pixel::new(px[0], px[1]),
                    descriptor,
                    landmark_id: self.landmark_ids.as_ref().map(|ids| ids[i]),
                })
            })
            .collect()
    }
}

/// Depth samples of one RGB-D frame as `[u, v, depth_m]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthFile {
    pub frame: u64,
    pub samples: Vec<[f64; 3]>,
}

impl DepthFile {
    pub fn from_samples(frame: u64, samples: &[DepthSample]) -> Self {
        DepthFile {
            frame,
            samples: samples.iter().map(|s| [s.pixel.x, s.pixel.y, s.depth]).collect(),
        }
    }

    pub fn to_samples(&self, path: &Path, intr: &CameraIntrinsics) -> Result<Vec<DepthSample>> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let pixel = Pixel::new(s[0], s[1]);
                if !(s[2] > 0.0 && s[2].is_finite()) {
                    return Err(Error::format(path, format!("samples[{i}]: depth must be positive")));
                }
                if !intr.contains(&pixel) {
                    return Err(Error::format(path, format!("samples[{i}]: pixel outside the image")));
                }
                Ok(DepthSample { pixel, depth: s[2] })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionManifest {
    pub descriptor_dim: usize,
    /// Scene camera of the eye-tracking glasses.
    pub etg_intrinsics: Intrinsics,
    pub rgbd_intrinsics: Intrinsics,
    /// Scene-video frame rate.
    pub frame_rate: f64,
    pub scan_frame_rate: f64,
    /// Paths below are relative to the session directory.
    pub gaze: String,
    pub etg_frames: Vec<String>,
    pub scan_features: Vec<String>,
    pub scan_depth: Vec<String>,
    /// Voxel grid the map is built into.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub references: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDoc {
    pub origin: [f64; 3],
    pub resolution: f64,
    pub dims: [usize; 3],
}

impl From<&GridGeometry> for GridDoc {
    fn from(g: &GridGeometry) -> Self {
        GridDoc {
            origin: vec3(&g.origin),
            resolution: g.resolution,
            dims: g.dims,
        }
    }
}

impl GridDoc {
    pub fn to_core(&self, path: &Path) -> Result<GridGeometry> {
        GridGeometry::new(to_vec3(self.origin), self.resolution, self.dims).map_err(|e| Error::format(path, format!("grid: {e}")))
    }
}

/// A loaded session manifest bound to its directory.
#[derive(Clone, Debug)]
pub struct Session {
    pub dir: PathBuf,
    pub manifest: SessionManifest,
    pub etg_intrinsics: CameraIntrinsics,
    pub rgbd_intrinsics: CameraIntrinsics,
}

impl Session {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let manifest: SessionManifest = read_json(&path)?;
        if manifest.descriptor_dim == 0 {
            return Err(Error::format(&path, "descriptor_dim must be positive"));
        }
        for rate in [manifest.frame_rate, manifest.scan_frame_rate] {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::format(&path, "frame rates must be positive"));
            }
        }
        if manifest.scan_depth.len() > manifest.scan_features.len() {
            return Err(Error::format(&path, "more depth files than scan feature files"));
        }
        let all = std::iter::once(&manifest.gaze)
            .chain(&manifest.etg_frames)
            .chain(&manifest.scan_features)
            .chain(&manifest.scan_depth);
        for rel in all {
            if !dir.join(rel).is_file() {
                return Err(Error::format(&path, format!("referenced file `{rel}` does not exist")));
            }
        }
        Ok(Session {
            dir: dir.to_path_buf(),
            etg_intrinsics: manifest.etg_intrinsics.to_core(&path)?,
            rgbd_intrinsics: manifest.rgbd_intrinsics.to_core(&path)?,
            manifest,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn gaze_samples(&self) -> Result<Vec<GazeSample>> {
        let records: Vec<GazeRecord> = read_jsonl(&self.path(&self.manifest.gaze))?;
        Ok(records.iter().map(GazeSample::from).collect())
    }

    fn features(&self, rel: &str) -> Result<(u64, Vec<Keypoint>)> {
        let path = self.path(rel);
        let f: FeatureFile = read_json(&path)?;
        let kps = f.to_keypoints(&path, self.manifest.descriptor_dim)?;
        Ok((f.frame, kps))
    }

    /// Scene-video frames in manifest order.
    pub fn etg_frames(&self) -> Result<Vec<SessionFrame>> {
        self.manifest
            .etg_frames
            .iter()
            .map(|rel| {
                let (frame_index, keypoints) = self.features(rel)?;
                Ok(SessionFrame { frame_index, keypoints })
            })
            .collect()
    }

    pub fn scan_frame_count(&self) -> usize {
        self.manifest.scan_features.len()
    }

    /// Keypoints of scan frame `i` and its index.
    pub fn scan_features(&self, i: usize) -> Result<(u64, Vec<Keypoint>)> {
        self.features(&self.manifest.scan_features[i])
    }

    /// Scan frame `i` with its depth; a missing depth file is an error naming the frame.
    pub fn scan_frame(&self, i: usize) -> Result<DepthFrame> {
        let (index, keypoints) = self.scan_features(i)?;
        let rel = self.manifest.scan_depth.get(i).ok_or_else(|| {
            Error::format(
                self.path(MANIFEST),
                format!("scan frame {index} ({}) has no depth file", self.manifest.scan_features[i]),
            )
        })?;
        let path = self.path(rel);
        let depth: DepthFile = read_json(&path)?;
        if depth.frame != index {
            return Err(Error::format(&path, format!("depth is for frame {}, expected frame {index}", depth.frame)));
        }
        Ok(DepthFrame {
            timestamp_ms: (index as f64 * 1000.0 / self.manifest.scan_frame_rate).round() as i64,
            samples: depth.to_samples(&path, &self.rgbd_intrinsics)?,
            keypoints,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceEntry {
    pub label: String,
    pub size: [f64; 2],
    /// Feature file, relative to the reference directory.
    pub features: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceManifest {
    pub descriptor_dim: usize,
    pub references: Vec<ReferenceEntry>,
}

pub fn load_references(dir: &Path) -> Result<Vec<ReferenceAppearance>> {
    let path = dir.join(REFERENCE_MANIFEST);
    let m: ReferenceManifest = read_json(&path)?;
    m.references
        .iter()
        .map(|r| {
            let fpath = dir.join(&r.features);
            let f: FeatureFile = read_json(&fpath)?;
            let kps = f.to_keypoints(&fpath, m.descriptor_dim)?;
            check_finite("reference size", &r.size)?;
            ReferenceAppearance::new(r.label.clone(), kps, (r.size[0], r.size[1]))
                .map_err(|e| Error::format(&path, format!("reference `{}`: {e}", r.label)))
        })
        .collect()
}
