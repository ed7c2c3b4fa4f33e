//! Sparse map file: one line of canonical JSON followed by a line holding
//! the CRC-32 of that JSON as 8 lowercase hex digits.

use std::path::Path;

use gaze3d_core::features::Descriptor;
use gaze3d_core::world::{Keyframe, Landmark, SparseMap};
use serde::{Deserialize, Serialize};

use super::{pose_from, to_vec3, vec3};
use crate::error::{Error, Result};
use crate::io::parse_json;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkRecord {
    pub id: u64,
    pub xyz: [f64; 3],
    pub desc: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframeRecord {
    pub id: u64,
    pub pose: [f64; 7],
    pub links: Vec<(usize, u64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    pub d: usize,
    pub landmarks: Vec<LandmarkRecord>,
    pub keyframes: Vec<KeyframeRecord>,
}

impl From<&SparseMap> for MapFile {
    fn from(map: &SparseMap) -> Self {
        MapFile {
            d: map.dimension(),
            landmarks: map
                .landmarks()
                .iter()
                .map(|l| LandmarkRecord {
                    id: l.id,
                    xyz: vec3(&l.position),
                    desc: l.descriptor.as_slice().to_vec(),
                })
                .collect(),
            keyframes: map
                .keyframes()
                .iter()
                .map(|k| KeyframeRecord {
                    id: k.id,
                    pose: k.pose.to_array(),
                    links: k.landmark_links.clone(),
                })
                .collect(),
        }
    }
}

impl MapFile {
    pub fn to_map(&self, path: &Path) -> Result<SparseMap> {
        let landmarks = self
            .landmarks
            .iter()
            .map(|l| {
                let descriptor = Descriptor::new(l.desc.clone()).map_err(|e| Error::format(path, format!("landmark {}: {e}", l.id)))?;
                Ok(Landmark {
                    id: l.id,
                    position: to_vec3(l.xyz),
                    descriptor,
                    observation_count: 1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let keyframes = self
            .keyframes
            .iter()
            .map(|k| {
                Ok(Keyframe {
                    id: k.id,
                    pose: pose_from(path, &k.pose)?,
                    keypoints: Vec::new(),
                    landmark_links: k.links.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SparseMap::from_parts(self.d, landmarks, keyframes).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub fn encode_map(map: &SparseMap) -> Vec<u8> {
    let json = crate::io::to_json(&MapFile::from(map));
    let crc = crc32fast::hash(json.as_bytes());
    format!("{json}\n{crc:08x}\n").into_bytes()
}

/// Verifies the checksum before parsing anything.
pub fn decode_map(path: &Path, bytes: &[u8]) -> Result<SparseMap> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::format(path, "map file is not UTF-8"))?;
    let mut lines = text.strip_suffix('\n').unwrap_or(text).splitn(2, '\n');
    let (json, footer) = match (lines.next(), lines.next()) {
        (Some(j), Some(f)) if !f.contains('\n') => (j, f),
        _ => return Err(Error::format(path, "expected a JSON line followed by a CRC-32 line")),
    };
    let stored = u32::from_str_radix(footer.trim(), 16).map_err(|_| Error::format(path, format!("bad checksum line `{footer}`")))?;
    let computed = crc32fast::hash(json.as_bytes());
    if stored != computed {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    let file: MapFile = parse_json(path, json)?;
    file.to_map(path)
}

pub fn load_map(path: &Path) -> Result<SparseMap> {
    decode_map(path, &crate::io::read_bytes(path)?)
}
