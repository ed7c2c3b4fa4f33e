//! Binary voxel grid, little-endian: magic `G3DG`, u32 version 1, f64 origin
//! ×3, f64 resolution, u32 dims ×3, then f32 values with x fastest, then the
//! CRC-32 of all preceding bytes. Occupancy grids store log-odds, saliency
//! grids store mass.

use std::path::Path;

use gaze3d_core::geometry::Vec3;
use gaze3d_core::world::{GridGeometry, OccupancyGrid};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"G3DG";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 * 4 + 4 * 3;

pub fn encode_grid(geometry: &GridGeometry, values: impl ExactSizeIterator<Item = f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [geometry.origin.x, geometry.origin.y, geometry.origin.z, geometry.resolution] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for d in geometry.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Geometry and raw values of a grid file, checksum verified.
pub fn decode_grid(path: &Path, bytes: &[u8]) -> Result<(GridGeometry, Vec<f32>)> {
    if bytes.len() < HEADER_LEN + 4 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not a G3DG grid file"));
    }
    let (body, footer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(footer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(body[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported grid version {version}")));
    }
    let origin = Vec3::new(f64_at(8), f64_at(16), f64_at(24));
    let resolution = f64_at(32);
    let dims = [u32_at(40) as usize, u32_at(44) as usize, u32_at(48) as usize];
    let geometry = GridGeometry::new(origin, resolution, dims).map_err(|e| Error::format(path, e.to_string()))?;
    let count = geometry.voxel_count();
    let payload = &body[HEADER_LEN..];
    if payload.len() != 4 * count {
        return Err(Error::format(path, format!("expected {count} voxel values, found {} bytes", payload.len())));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((geometry, values))
}

pub fn encode_occupancy(grid: &OccupancyGrid) -> Vec<u8> {
    encode_grid(grid.geometry(), grid.values().iter().copied())
}

pub fn load_occupancy(path: &Path) -> Result<OccupancyGrid> {
    let (geometry, values) = decode_grid(path, &crate::io::read_bytes(path)?)?;
    OccupancyGrid::from_values(geometry, values).map_err(|e| Error::format(path, e.to_string()))
}

/// Geometry only, for commands that need the voxel layout but not the values.
pub fn load_geometry(path: &Path) -> Result<GridGeometry> {
    Ok(decode_grid(path, &crate::io::read_bytes(path)?)?.0)
}
