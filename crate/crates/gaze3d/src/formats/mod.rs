//! Persistent file formats and their conversions to the core types.
//!
//! Text formats are JSON or JSON Lines with shortest round-trip floats and no
//! NaN or infinity; optional values are omitted. Only voxel arrays are binary.

pub mod grid;
pub mod map;
pub mod records;
pub mod report;
pub mod session;
pub mod spec;

use gaze3d_core::geometry::{CameraIntrinsics, Pose, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use std::path::Path;

pub(crate) fn vec3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub(crate) fn to_vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub(crate) fn pose_from(path: &Path, a: &[f64; 7]) -> Result<Pose> {
    Pose::from_array(a).map_err(|e| Error::format(path, format!("invalid pose {a:?}: {e}")))
}

/// Rejects NaN and infinities before they reach a JSON writer.
pub(crate) fn check_finite<'a>(what: &str, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Usage(format!("{what} contains a non-finite number")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&CameraIntrinsics> for Intrinsics {
    fn from(c: &CameraIntrinsics) -> Self {
        Intrinsics {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl Intrinsics {
    pub fn to_core(&self, path: &Path) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .map_err(|e| Error::format(path, format!("intrinsics: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RayRecord {
    pub o: [f64; 3],
    pub d: [f64; 3],
}

impl From<&gaze3d_core::geometry::Ray> for RayRecord {
    fn from(r: &gaze3d_core::geometry::Ray) -> Self {
        RayRecord {
            o: vec3(&r.origin),
            d: vec3(&r.direction),
        }
    }
}

impl RayRecord {
    /// Rebuilds the ray bit for bit; the direction must already be unit length.
    pub fn to_core(&self, path: &Path) -> Result<gaze3d_core::geometry::Ray> {
        let d = to_vec3(self.d);
        if !(d.iter().chain(self.o.iter()).all(|v| v.is_finite()) && (d.norm() - 1.0).abs() < 1e-9) {
            return Err(Error::format(path, format!("ray direction {:?} is not a unit vector", self.d)));
        }
        Ok(gaze3d_core::geometry::Ray {
            origin: to_vec3(self.o),
            direction: d,
        })
    }
}
