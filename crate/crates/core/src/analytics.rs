//! Fixations, AOI hits, dwell times and 3D saliency from recovered gaze points.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::gaze::{GazePoint3D, GazeStatus};
use crate::geometry::{angular_error, Vec3};
use crate::roi::Roi3D;
use crate::world::GridGeometry;

/// Fixations at least this long count as recognition-capable, in ms.
pub const RECOGNITION_MS: i64 = 100;
/// Default plane-distance tolerance of an AOI hit, in meters.
pub const DEFAULT_AOI_TOLERANCE_M: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Fixation {
    pub start_ms: i64,
    pub duration_ms: i64,
    pub centroid: Vec3,
    /// Indices into the gaze point list.
    pub samples: Range<usize>,
    /// Mean angle between each member ray and the direction to the centroid, in degrees.
    pub mean_dispersion_deg: f64,
}

impl Fixation {
    pub fn end_ms(&self) -> i64 {
        self.start_ms + self.duration_ms
    }

    pub fn recognition_capable(&self) -> bool {
        self.duration_ms >= RECOGNITION_MS
    }
}

/// Angle at `a`'s origin between its ray and the direction to `b`'s hit point.
fn seen_from(a: &GazePoint3D, b: &GazePoint3D) -> f64 {
    let (Some(ray), Some(p)) = (a.ray, b.point) else {
        return f64::INFINITY;
    };
    angular_error(&ray.direction, &(p - ray.origin)).unwrap_or(0.0)
}

/// Angular separation of two hit samples, measured at both ray origins.
pub fn angular_separation(a: &GazePoint3D, b: &GazePoint3D) -> f64 {
    seen_from(a, b).max(seen_from(b, a))
}

/// Dispersion-threshold fixation detection over 3D gaze points.
///
/// Windows of consecutive hits grow greedily from the left while every pair
/// stays within `dispersion_deg`. A window spanning at least `min_duration_ms`
/// from first to last timestamp becomes a fixation and the scan resumes after
/// it; otherwise the scan restarts one sample later. Non-hit samples end a window.
pub fn detect_fixations(points: &[GazePoint3D], dispersion_deg: f64, min_duration_ms: i64) -> Vec<Fixation> {
    let mut out = Vec::new();
    let n = points.len();
    let mut i = 0;
    while i < n {
        if points[i].status != GazeStatus::Hit {
            i += 1;
            continue;
        }
        let mut end = i + 1;
        while end < n
            && points[end].status == GazeStatus::Hit
            && (i..end).all(|k| angular_separation(&points[k], &points[end]) <= dispersion_deg)
        {
            end += 1;
        }
        let duration = points[end - 1].timestamp_ms - points[i].timestamp_ms;
        if duration >= min_duration_ms {
            out.push(fixation(points, i..end));
            i = end;
        } else {
            i += 1;
        }
    }
    out
}

fn fixation(points: &[GazePoint3D], range: Range<usize>) -> Fixation {
    let members = &points[range.clone()];
    let centroid = members.iter().filter_map(|p| p.point).fold(Vec3::zeros(), |a, p| a + p) / members.len() as f64;
    let dispersion = members
        .iter()
        .filter_map(|p| p.ray)
        .map(|r| angular_error(&r.direction, &(centroid - r.origin)).unwrap_or(0.0))
        .sum::<f64>()
        / members.len() as f64;
    Fixation {
        start_ms: members[0].timestamp_ms,
        duration_ms: members[members.len() - 1].timestamp_ms - members[0].timestamp_ms,
        centroid,
        samples: range,
        mean_dispersion_deg: dispersion,
    }
}

/// In-plane orthonormal basis of a unit normal.
fn plane_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = n.cross(&helper).normalize();
    (u, n.cross(&u))
}

/// Point-in-polygon with the boundary counted inside.
fn inside_polygon(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let n = poly.len();
    let scale = poly.iter().map(|q| q.0.abs().max(q.1.abs())).fold(1.0, f64::max);
    let eps = 1e-12 * scale;
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (ex, ey) = (b.0 - a.0, b.1 - a.1);
        let (px, py) = (p.0 - a.0, p.1 - a.1);
        let len2 = ex * ex + ey * ey;
        let t = if len2 > 0.0 { ((px * ex + py * ey) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let (dx, dy) = (px - t * ex, py - t * ey);
        if dx * dx + dy * dy <= eps * eps {
            return true;
        }
        if (a.1 > p.1) != (b.1 > p.1) && p.0 < a.0 + (p.1 - a.1) / (b.1 - a.1) * ex {
            inside = !inside;
        }
    }
    inside
}

/// Plane distance of `p` to `roi` when `p` lies inside it within `tolerance`.
pub fn roi_distance(roi: &Roi3D, p: &Vec3, tolerance: f64) -> Option<f64> {
    let c = roi.centroid();
    let n = roi.normal;
    let d = (p - c).dot(&n);
    if d.abs() > tolerance {
        return None;
    }
    let (u, v) = plane_basis(&n);
    let flat = |q: &Vec3| ((q - c).dot(&u), (q - c).dot(&v));
    let poly = roi.polygon.map(|q| flat(&q));
    inside_polygon(flat(p), &poly).then_some(d.abs())
}

/// ROI index hit by `p`: nearest plane first, ties by label then index.
pub fn assign_point(p: &Vec3, rois: &[Roi3D], tolerance: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, r) in rois.iter().enumerate() {
        if let Some(d) = roi_distance(r, p, tolerance) {
            let better = match best {
                None => true,
                Some((bd, bi)) => d < bd || (d == bd && r.roi_label < rois[bi].roi_label),
            };
            if better {
                best = Some((d, i));
            }
        }
    }
    best.map(|(_, i)| i)
}

/// Per-sample ROI index; only hit samples can hit an ROI.
pub fn aoi_hits(points: &[GazePoint3D], rois: &[Roi3D], tolerance: f64) -> Vec<Option<usize>> {
    points
        .iter()
        .map(|g| g.point.filter(|_| g.is_hit()).and_then(|p| assign_point(&p, rois, tolerance)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DwellRecord {
    pub roi_label: String,
    pub entry_ms: i64,
    pub exit_ms: i64,
    pub sample_count: usize,
}

impl DwellRecord {
    pub fn dwell_ms(&self) -> i64 {
        self.exit_ms - self.entry_ms
    }
}

/// Median spacing of consecutive timestamps, the lower middle for even counts.
pub fn sample_period(timestamps: &[i64]) -> i64 {
    let mut gaps: Vec<i64> = timestamps.windows(2).map(|w| w[1] - w[0]).filter(|&g| g > 0).collect();
    if gaps.is_empty() {
        return 0;
    }
    gaps.sort_unstable();
    gaps[(gaps.len() - 1) / 2]
}

/// Dwells as maximal runs of samples hitting one ROI.
///
/// Between two hits of the same ROI, the skipped time is counted in whole
/// sample periods; the run splits when it exceeds `max_gap_ms`. A dwell
/// exits one sample period after its last hit. Records are ordered by entry
/// time, then label.
pub fn dwell_times(hits: &[Option<usize>], timestamps: &[i64], rois: &[Roi3D], max_gap_ms: i64) -> Result<Vec<DwellRecord>> {
    if hits.len() != timestamps.len() {
        return Err(Error::LengthMismatch {
            left: hits.len(),
            right: timestamps.len(),
        });
    }
    let period = sample_period(timestamps);
    let mut out = Vec::new();
    for (r, roi) in rois.iter().enumerate() {
        let mut run: Option<(i64, i64, usize)> = None;
        for (&h, &t) in hits.iter().zip(timestamps) {
            if h != Some(r) {
                continue;
            }
            run = match run {
                Some((entry, last, count)) => {
                    let slots = if period > 0 { libm::round((t - last) as f64 / period as f64) as i64 - 1 } else { 0 };
                    if slots.max(0) * period > max_gap_ms {
                        out.push(DwellRecord {
                            roi_label: roi.roi_label.clone(),
                            entry_ms: entry,
                            exit_ms: last + period,
                            sample_count: count,
                        });
                        Some((t, t, 1))
                    } else {
                        Some((entry, t, count + 1))
                    }
                }
                None => Some((t, t, 1)),
            };
        }
        if let Some((entry, last, count)) = run {
            out.push(DwellRecord {
                roi_label: roi.roi_label.clone(),
                entry_ms: entry,
                exit_ms: last + period,
                sample_count: count,
            });
        }
    }
    out.sort_by(|a, b| a.entry_ms.cmp(&b.entry_ms).then_with(|| a.roi_label.cmp(&b.roi_label)));
    Ok(out)
}

/// Nonnegative mass per voxel over an occupancy-grid geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyGrid {
    pub geometry: GridGeometry,
    pub mass: Vec<f64>,
}

impl SaliencyGrid {
    pub fn new(geometry: GridGeometry) -> Self {
        SaliencyGrid {
            mass: alloc::vec![0.0; geometry.voxel_count()],
            geometry,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Index of the heaviest voxel; ties keep the lowest index.
    pub fn argmax(&self) -> Option<[usize; 3]> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &m) in self.mass.iter().enumerate() {
            if m > 0.0 && best.is_none_or(|(_, b)| m > b) {
                best = Some((i, m));
            }
        }
        best.map(|(i, _)| self.geometry.unlinear(i))
    }

    /// Adds a truncated Gaussian of total `weight` centered at `center`.
    ///
    /// Returns `false` when no voxel center lies within 3σ.
    pub fn splat(&mut self, center: &Vec3, sigma: f64, weight: f64) -> bool {
        let g = self.geometry;
        let reach = 3.0 * sigma;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let first = libm::ceil((center[a] - reach - g.origin[a]) / g.resolution - 0.5);
            let last = libm::floor((center[a] + reach - g.origin[a]) / g.resolution - 0.5);
            if last < 0.0 || first > (g.dims[a] - 1) as f64 || first > last {
                return false;
            }
            lo[a] = first.max(0.0) as usize;
            hi[a] = last.min((g.dims[a] - 1) as f64) as usize;
        }
        let mut cells = Vec::new();
        let mut sum = 0.0;
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let d2 = (g.center([x, y, z]) - center).norm_squared();
                    if d2 <= reach * reach {
                        let w = libm::exp(-d2 / (2.0 * sigma * sigma));
                        sum += w;
                        cells.push((g.linear([x, y, z]), w));
                    }
                }
            }
        }
        if !(sum > 0.0) {
            return false;
        }
        for (i, w) in cells {
            self.mass[i] += weight * w / sum;
        }
        true
    }
}

/// Accumulates one unit-mass Gaussian per fixation, or mass equal to the
/// duration in seconds when `duration_weighted`.
pub fn saliency_map(fixations: &[Fixation], geometry: GridGeometry, sigma: f64, duration_weighted: bool) -> Result<SaliencyGrid> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig("sigma must be positive"));
    }
    geometry.validate()?;
    let mut grid = SaliencyGrid::new(geometry);
    for f in fixations {
        let w = if duration_weighted { f.duration_ms as f64 / 1000.0 } else { 1.0 };
        grid.splat(&f.centroid, sigma, w);
    }
    Ok(grid)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoiStats {
    pub roi_label: String,
    pub total_dwell_ms: i64,
    pub dwell_count: usize,
    pub aoi_hit_count: usize,
    pub fixation_count: usize,
    pub recognition_capable_fixations: usize,
    /// Summed duration of the fixations on this ROI.
    pub fixation_dwell_ms: i64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionTotals {
    pub samples: usize,
    pub localized_samples: usize,
    pub hit_samples: usize,
    pub fixations: usize,
    pub duration_ms: i64,
    pub total_dwell_ms: i64,
    pub aoi_hit_count: usize,
    pub roi_fixations: usize,
}

impl SessionTotals {
    pub fn localized_pct(&self) -> f64 {
        pct(self.localized_samples, self.samples)
    }

    pub fn hit_pct(&self) -> f64 {
        pct(self.hit_samples, self.samples)
    }

    /// Fixations per second of session time.
    pub fn fixation_rate(&self) -> f64 {
        if self.duration_ms > 0 {
            self.fixations as f64 * 1000.0 / self.duration_ms as f64
        } else {
            0.0
        }
    }
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionReport {
    /// One row per ROI, in ROI order.
    pub rois: Vec<RoiStats>,
    pub totals: SessionTotals,
}

/// Aggregates per-ROI statistics for one session.
///
/// A fixation counts toward the ROI its centroid hits under the AOI rule.
pub fn summarize(points: &[GazePoint3D], fixations: &[Fixation], dwells: &[DwellRecord], rois: &[Roi3D], tolerance: f64) -> AttentionReport {
    let hits = aoi_hits(points, rois, tolerance);
    let mut stats: Vec<RoiStats> = rois
        .iter()
        .map(|r| RoiStats {
            roi_label: r.roi_label.clone(),
            ..RoiStats::default()
        })
        .collect();
    for h in hits.iter().flatten() {
        stats[*h].aoi_hit_count += 1;
    }
    for f in fixations {
        if let Some(i) = assign_point(&f.centroid, rois, tolerance) {
            stats[i].fixation_count += 1;
            stats[i].fixation_dwell_ms += f.duration_ms;
            if f.recognition_capable() {
                stats[i].recognition_capable_fixations += 1;
            }
        }
    }
    for d in dwells {
        // dwell records carry labels; the first ROI with that label owns them
        if let Some(s) = stats.iter_mut().find(|s| s.roi_label == d.roi_label) {
            s.total_dwell_ms += d.dwell_ms();
            s.dwell_count += 1;
        }
    }
    let timestamps: Vec<i64> = points.iter().map(|p| p.timestamp_ms).collect();
    let duration_ms = match (timestamps.first(), timestamps.last()) {
        (Some(a), Some(b)) => b - a + sample_period(&timestamps),
        _ => 0,
    };
    let totals = SessionTotals {
        samples: points.len(),
        localized_samples: points.iter().filter(|p| p.status != GazeStatus::FrameLost).count(),
        hit_samples: points.iter().filter(|p| p.is_hit()).count(),
        fixations: fixations.len(),
        duration_ms,
        total_dwell_ms: stats.iter().map(|s| s.total_dwell_ms).sum(),
        aoi_hit_count: stats.iter().map(|s| s.aoi_hit_count).sum(),
        roi_fixations: stats.iter().map(|s| s.fixation_count).sum(),
    };
    AttentionReport { rois: stats, totals }
}
