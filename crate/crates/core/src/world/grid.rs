use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, Ray, Vec3};
use crate::world::DepthFrame;

/// Placement and resolution of an axis-aligned voxel grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    /// World position of the minimum corner of voxel (0, 0, 0).
    pub origin: Vec3,
    /// Edge length of a voxel in meters.
    pub resolution: f64,
    pub dims: [usize; 3],
}

impl GridGeometry {
    pub fn new(origin: Vec3, resolution: f64, dims: [usize; 3]) -> Result<Self> {
        let g = GridGeometry {
            origin,
            resolution,
            dims,
        };
        g.validate()?;
        Ok(g)
    }

    /// Smallest grid at `resolution` covering the box `[min, max]`, anchored at `min`.
    pub fn covering(min: Vec3, max: Vec3, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::InvalidGrid("resolution must be positive"));
        }
        let extent = max - min;
        if !extent.iter().all(|e| e.is_finite() && *e > 0.0) {
            return Err(Error::InvalidGrid("bounding box must have positive extent"));
        }
        let dims = [0, 1, 2].map(|a| libm::ceil(extent[a] / resolution).max(1.0) as usize);
        GridGeometry::new(min, resolution, dims)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(Error::InvalidGrid("resolution must be positive"));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite"));
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidGrid("every dimension needs at least one voxel"));
        }
        if self.dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).is_none_or(|n| n > u32::MAX as usize) {
            return Err(Error::InvalidGrid("too many voxels"));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Length of a voxel's space diagonal.
    pub fn voxel_diagonal(&self) -> f64 {
        self.resolution * libm::sqrt(3.0)
    }

    /// Coordinate of the `i`-th voxel face along `axis`. Traversal and the
    /// tests' slab oracle share this expression so their hits agree exactly.
    #[inline]
    pub fn face(&self, axis: usize, i: i64) -> f64 {
        self.origin[axis] + i as f64 * self.resolution
    }

    /// Voxel containing `p`, if inside the grid.
    #[inline]
    pub fn voxel_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = libm::floor((p[a] - self.origin[a]) / self.resolution);
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }

    /// Linear index, x fastest.
    #[inline]
    pub fn linear(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    #[inline]
    pub fn unlinear(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[0];
        let yz = i / self.dims[0];
        [x, yz % self.dims[1], yz / self.dims[1]]
    }

    pub fn center(&self, idx: [usize; 3]) -> Vec3 {
        Vec3::from_fn(|a, _| self.origin[a] + (idx[a] as f64 + 0.5) * self.resolution)
    }

    /// Parameter interval `[t_in, t_out]` over which `origin + t·dir` is inside the grid box.
    fn clip(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t_in = f64::NEG_INFINITY;
        let mut t_out = f64::INFINITY;
        for a in 0..3 {
            let lo = self.face(a, 0);
            let hi = self.face(a, self.dims[a] as i64);
            if dir[a] == 0.0 {
                if origin[a] < lo || origin[a] >= hi {
                    return None;
                }
                continue;
            }
            let t0 = (lo - origin[a]) / dir[a];
            let t1 = (hi - origin[a]) / dir[a];
            t_in = t_in.max(t0.min(t1));
            t_out = t_out.min(t0.max(t1));
        }
        (t_in <= t_out).then_some((t_in, t_out))
    }

    /// Amanatides–Woo traversal of the voxels met by `origin + t·dir` for
    /// `t ∈ [t_start, t_end]`, in order. `visit` receives the voxel and the
    /// parameter at which the ray enters it, and returns `false` to stop.
    pub fn traverse(&self, origin: &Vec3, dir: &Vec3, t_start: f64, t_end: f64, mut visit: impl FnMut([usize; 3], f64) -> bool) {
        let Some((t_in, t_out)) = self.clip(origin, dir) else {
            return;
        };
        let t0 = t_start.max(t_in);
        let t1 = t_end.min(t_out);
        if !(t0 <= t1) {
            return;
        }
        let entry = origin + dir * t0;
        let mut idx = [0i64; 3];
        let mut step = [0i64; 3];
        let mut t_next = [f64::INFINITY; 3];
        for a in 0..3 {
            let f = libm::floor((entry[a] - self.origin[a]) / self.resolution) as i64;
            idx[a] = f.clamp(0, self.dims[a] as i64 - 1);
            if dir[a] > 0.0 {
                step[a] = 1;
            } else if dir[a] < 0.0 {
                step[a] = -1;
            }
        }
        let next_face = |a: usize, i: i64, s: i64| -> f64 {
            let face = if s > 0 { i + 1 } else { i };
            (self.face(a, face) - origin[a]) / dir[a]
        };
        for a in 0..3 {
            if step[a] != 0 {
                t_next[a] = next_face(a, idx[a], step[a]);
            }
        }
        let mut t_enter = t0;
        loop {
            let voxel = [idx[0] as usize, idx[1] as usize, idx[2] as usize];
            if !visit(voxel, t_enter) {
                return;
            }
            let mut axis = 0;
            for a in 1..3 {
                if t_next[a] < t_next[axis] {
                    axis = a;
                }
            }
            let t = t_next[axis];
            if !(t <= t1) {
                return;
            }
            idx[axis] += step[axis];
            if idx[axis] < 0 || idx[axis] >= self.dims[axis] as i64 {
                return;
            }
            t_enter = t_enter.max(t);
            t_next[axis] = next_face(axis, idx[axis], step[axis]);
        }
    }
}

/// Log-odds update constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogOdds {
    pub occupied: f32,
    pub free: f32,
    pub min: f32,
    pub max: f32,
    /// A voxel is occupied when its log-odds is strictly above this.
    pub threshold: f32,
}

impl Default for LogOdds {
    fn default() -> Self {
        LogOdds {
            occupied: 0.85,
            free: -0.4,
            min: -2.0,
            max: 3.5,
            threshold: 0.0,
        }
    }
}

/// Ray-cast hit: the point where the ray enters the first occupied voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub point: Vec3,
    pub voxel: [usize; 3],
    /// Distance along the ray.
    pub distance: f64,
}

/// Dense log-odds occupancy grid.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    geometry: GridGeometry,
    params: LogOdds,
    values: Vec<f32>,
    skipped_samples: usize,
}

impl OccupancyGrid {
    pub fn new(geometry: GridGeometry) -> Result<Self> {
        Self::with_params(geometry, LogOdds::default())
    }

    pub fn with_params(geometry: GridGeometry, params: LogOdds) -> Result<Self> {
        geometry.validate()?;
        if !(params.min <= 0.0 && params.max >= 0.0 && params.min < params.max) {
            return Err(Error::InvalidGrid("log-odds clamp range must contain 0"));
        }
        Ok(OccupancyGrid {
            geometry,
            params,
            values: alloc::vec![0.0; geometry.voxel_count()],
            skipped_samples: 0,
        })
    }

    /// Rebuilds a grid from stored values (x fastest), clamping them into range.
    pub fn from_values(geometry: GridGeometry, values: Vec<f32>) -> Result<Self> {
        let mut grid = Self::new(geometry)?;
        if values.len() != grid.values.len() {
            return Err(Error::InvalidGrid("value count does not match dimensions"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGrid("log-odds must be finite"));
        }
        let (lo, hi) = (grid.params.min, grid.params.max);
        grid.values = values.into_iter().map(|v| v.clamp(lo, hi)).collect();
        Ok(grid)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn params(&self) -> &LogOdds {
        &self.params
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Depth samples skipped because their endpoint fell outside the grid.
    pub fn skipped_samples(&self) -> usize {
        self.skipped_samples
    }

    pub fn log_odds(&self, idx: [usize; 3]) -> f32 {
        self.values[self.geometry.linear(idx)]
    }

    pub fn voxel_occupied(&self, idx: [usize; 3]) -> bool {
        self.log_odds(idx) > self.params.threshold
    }

    /// Directly sets a voxel (clamped); used to build test scenes.
    pub fn set_log_odds(&mut self, idx: [usize; 3], value: f32) {
        let i = self.geometry.linear(idx);
        self.values[i] = value.clamp(self.params.min, self.params.max);
    }

    pub fn is_occupied(&self, p: &Vec3) -> bool {
        self.geometry.voxel_of(p).is_some_and(|v| self.voxel_occupied(v))
    }

    /// Free-space voxels of one depth ray, and the endpoint voxel.
    ///
    /// The voxel holding the camera center is not updated: it is neither
    /// observed free nor occupied by the measurement.
    fn ray_updates(&self, camera: &Vec3, endpoint: &Vec3, free: &mut Vec<u32>) -> Result<u32> {
        let g = &self.geometry;
        let end = g.voxel_of(endpoint).ok_or(Error::EndpointOutsideGrid)?;
        let start = g.voxel_of(camera);
        let offset = endpoint - camera;
        let length = offset.norm();
        if length > 0.0 {
            let dir = offset / length;
            g.traverse(camera, &dir, 0.0, length, |v, t| {
                if v == end || t >= length {
                    return false;
                }
                if Some(v) != start {
                    free.push(g.linear(v) as u32);
                }
                true
            });
        }
        Ok(g.linear(end) as u32)
    }

    /// Integrates one depth frame seen from `pose`.
    ///
    /// Every sample adds `free` to the voxels its ray crosses and `occupied`
    /// to its endpoint voxel. The frame's updates are summed per voxel before
    /// being applied, so the result does not depend on sample order. Returns
    /// the number of samples skipped because their endpoint is outside the grid.
    pub fn integrate_depth(&mut self, frame: &DepthFrame, pose: &Pose, intr: &CameraIntrinsics) -> usize {
        let camera = pose.translation;
        let mut free = Vec::new();
        let mut occupied = Vec::new();
        let mut skipped = 0;
        for s in &frame.samples {
            let Ok(p) = intr.backproject(&s.pixel, s.depth) else {
                skipped += 1;
                continue;
            };
            let endpoint = pose.transform_point(&p);
            let mark = free.len();
            match self.ray_updates(&camera, &endpoint, &mut free) {
                Ok(end) => occupied.push(end),
                Err(_) => {
                    free.truncate(mark);
                    skipped += 1;
                }
            }
        }
        free.sort_unstable();
        occupied.sort_unstable();
        let mut counts: Vec<(u32, u32, u32)> = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < free.len() || j < occupied.len() {
            let next = match (free.get(i), occupied.get(j)) {
                (Some(&f), Some(&o)) => f.min(o),
                (Some(&f), None) => f,
                (None, Some(&o)) => o,
                (None, None) => unreachable!(),
            };
            let mut entry = (next, 0u32, 0u32);
            while free.get(i) == Some(&next) {
                entry.1 += 1;
                i += 1;
            }
            while occupied.get(j) == Some(&next) {
                entry.2 += 1;
                j += 1;
            }
            counts.push(entry);
        }
        let p = self.params;
        for (v, n_free, n_occ) in counts {
            let cell = &mut self.values[v as usize];
            let delta = n_free as f32 * p.free + n_occ as f32 * p.occupied;
            *cell = (*cell + delta).clamp(p.min, p.max);
        }
        self.skipped_samples += skipped;
        skipped
    }

    /// First occupied voxel along `ray` within `max_range`, entered at the
    /// returned point. A ray starting inside an occupied voxel hits at its origin.
    pub fn cast_ray(&self, ray: &Ray, max_range: f64) -> Option<RayHit> {
        if !(max_range > 0.0) {
            return None;
        }
        let mut hit = None;
        self.geometry.traverse(&ray.origin, &ray.direction, 0.0, max_range, |v, t| {
            if self.voxel_occupied(v) {
                hit = Some(RayHit {
                    point: ray.at(t),
                    voxel: v,
                    distance: t,
                });
                return false;
            }
            true
        });
        hit
    }

    /// Centers and log-odds of all occupied voxels in ascending (z, y, x) order.
    pub fn export_occupied_voxels(&self) -> Vec<(Vec3, f32)> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > self.params.threshold)
            .map(|(i, &v)| (self.geometry.center(self.geometry.unlinear(i)), v))
            .collect()
    }

    pub fn occupied_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > self.params.threshold).count()
    }
}
