use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{DepthFrame, DepthLookup};
use crate::error::{Error, Result};
use crate::features::{ratio_test, two_nearest, Descriptor, Keypoint};
use crate::geometry::{CameraIntrinsics, Pose, Vec3, MIN_DEPTH};
use crate::pnp::{ransac_pnp, Correspondence, PnPConfig, PnPResult};

/// Keypoints with depth needed to start a map.
pub const MIN_BOOTSTRAP_KEYPOINTS: usize = 10;
/// Ratio-test threshold for frame-to-map matching.
pub const MATCH_RATIO: f64 = 0.8;
/// Radius around a landmark's predicted projection searched when a prior pose is given.
pub const GATE_PX: f64 = 50.0;
/// Reprojection distance within which a keyframe keypoint is tied to an
/// existing landmark instead of creating a new one.
pub const REASSOCIATION_PX: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Landmark {
    pub id: u64,
    pub position: Vec3,
    pub descriptor: Descriptor,
    /// Number of keyframes linking to this landmark.
    pub observation_count: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Keyframe {
    pub id: u64,
    pub pose: Pose,
    /// Not persisted in map files; empty after loading.
    pub keypoints: Vec<Keypoint>,
    /// `(keypoint index, landmark id)`, at most one link per landmark.
    pub landmark_links: Vec<(usize, u64)>,
}

/// Landmarks (sorted by id) and keyframes (sorted by id) sharing one descriptor dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMap {
    dim: usize,
    landmarks: Vec<Landmark>,
    keyframes: Vec<Keyframe>,
}

impl SparseMap {
    pub fn new(dim: usize) -> Self {
        SparseMap {
            dim,
            landmarks: Vec::new(),
            keyframes: Vec::new(),
        }
    }

    /// Assembles a map from stored parts, checking every invariant.
    ///
    /// Observation counts are recomputed from the keyframe links.
    pub fn from_parts(dim: usize, mut landmarks: Vec<Landmark>, keyframes: Vec<Keyframe>) -> Result<Self> {
        landmarks.sort_by_key(|l| l.id);
        if landmarks.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidSpec("duplicate landmark id".into()));
        }
        if let Some(l) = landmarks.iter().find(|l| l.descriptor.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: l.descriptor.len(),
            });
        }
        if keyframes.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(Error::InvalidSpec("keyframe ids must be strictly increasing".into()));
        }
        let mut map = SparseMap {
            dim,
            landmarks,
            keyframes: Vec::new(),
        };
        for l in &mut map.landmarks {
            l.observation_count = 0;
        }
        for kf in keyframes {
            for &(_, id) in &kf.landmark_links {
                let i = map.index_of(id).ok_or_else(|| Error::InvalidSpec(alloc::format!("keyframe {} links unknown landmark {id}", kf.id)))?;
                map.landmarks[i].observation_count += 1;
            }
            map.keyframes.push(kf);
        }
        for l in &mut map.landmarks {
            l.observation_count = l.observation_count.max(1);
        }
        Ok(map)
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    fn index_of(&self, id: u64) -> Option<usize> {
        self.landmarks.binary_search_by_key(&id, |l| l.id).ok()
    }

    pub fn landmark(&self, id: u64) -> Option<&Landmark> {
        self.index_of(id).map(|i| &self.landmarks[i])
    }

    fn next_landmark_id(&self) -> u64 {
        self.landmarks.last().map_or(0, |l| l.id + 1)
    }

    fn next_keyframe_id(&self) -> u64 {
        self.keyframes.last().map_or(0, |k| k.id + 1)
    }

    /// Adds a keyframe at `pose`: links `links` and creates a landmark for
    /// every `(keypoint index, camera-frame point)` in `new_points`.
    fn insert_keyframe(&mut self, pose: Pose, keypoints: Vec<Keypoint>, links: Vec<(usize, u64)>, new_points: Vec<(usize, Vec3)>) {
        let mut all_links = Vec::with_capacity(links.len() + new_points.len());
        let mut seen = BTreeMap::new();
        for (kp, id) in links {
            if let Some(i) = self.index_of(id) {
                if seen.insert(id, ()).is_none() {
                    self.landmarks[i].observation_count += 1;
                    all_links.push((kp, id));
                }
            }
        }
        let mut id = self.next_landmark_id();
        for (kp, p) in new_points {
            self.landmarks.push(Landmark {
                id,
                position: pose.transform_point(&p),
                descriptor: keypoints[kp].descriptor.clone(),
                observation_count: 1,
            });
            all_links.push((kp, id));
            id += 1;
        }
        all_links.sort_unstable();
        let kf = Keyframe {
            id: self.next_keyframe_id(),
            pose,
            keypoints,
            landmark_links: all_links,
        };
        self.keyframes.push(kf);
    }

    /// Checks that every keyframe link resolves to a landmark.
    pub fn links_resolve(&self) -> bool {
        self.keyframes
            .iter()
            .all(|kf| kf.landmark_links.iter().all(|&(_, id)| self.index_of(id).is_some()))
    }
}

/// Starts a map from one RGB-D frame: the first keyframe sits at the identity
/// pose and every keypoint with a depth sample within 1 px becomes a landmark.
pub fn bootstrap_map(frame: &DepthFrame, intr: &CameraIntrinsics) -> Result<SparseMap> {
    let dim = frame.keypoints.first().map_or(0, |k| k.descriptor.len());
    crate::features::validate_keypoints(&frame.keypoints, dim)?;
    let lookup = DepthLookup::new(&frame.samples);
    let new_points: Vec<(usize, Vec3)> = frame
        .keypoints
        .iter()
        .enumerate()
        .filter_map(|(i, kp)| {
            let depth = lookup.depth_at(&kp.pixel)?;
            intr.backproject(&kp.pixel, depth).ok().map(|p| (i, p))
        })
        .collect();
    if new_points.len() < MIN_BOOTSTRAP_KEYPOINTS {
        return Err(Error::TooFewKeypoints {
            needed: MIN_BOOTSTRAP_KEYPOINTS,
            got: new_points.len(),
        });
    }
    let mut map = SparseMap::new(dim);
    map.insert_keyframe(Pose::identity(), frame.keypoints.clone(), Vec::new(), new_points);
    Ok(map)
}

/// Pose of a frame plus which keypoint and landmark each correspondence came from.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub pnp: PnPResult,
    /// Keypoint index per correspondence, aligned with `pnp.inlier_mask`.
    pub keypoint_indices: Vec<usize>,
    /// Landmark id per correspondence, aligned with `pnp.inlier_mask`.
    pub landmark_ids: Vec<u64>,
    /// Whether matching used the prior-pose gate.
    pub gated: bool,
}

impl TrackResult {
    pub fn pose(&self) -> &Pose {
        &self.pnp.pose
    }

    pub fn inlier_count(&self) -> usize {
        self.pnp.inlier_count()
    }
}

fn global_matches(map: &SparseMap, keypoints: &[Keypoint]) -> Vec<(usize, usize)> {
    keypoints
        .iter()
        .enumerate()
        .filter_map(|(qi, kp)| {
            let hit = two_nearest(&kp.descriptor, map.landmarks.iter().map(|l| &l.descriptor).enumerate())?;
            ratio_test(qi, hit, MATCH_RATIO).map(|m| (qi, m.train_index))
        })
        .collect()
}

/// Matches restricted to landmarks whose projection under `prior` lies within
/// `gate` pixels of the keypoint.
fn gated_matches(map: &SparseMap, keypoints: &[Keypoint], intr: &CameraIntrinsics, prior: &Pose, gate: f64) -> Vec<(usize, usize)> {
    let w2c = prior.inverse();
    let cell = gate;
    let (w, h) = (intr.width as f64, intr.height as f64);
    let mut buckets: BTreeMap<(i64, i64), Vec<(u32, f64, f64)>> = BTreeMap::new();
    for (i, l) in map.landmarks.iter().enumerate() {
        let p = w2c.transform_point(&l.position);
        if p.z <= MIN_DEPTH {
            continue;
        }
        let u = intr.fx * p.x / p.z + intr.cx;
        let v = intr.fy * p.y / p.z + intr.cy;
        if u < -cell || v < -cell || u > w + cell || v > h + cell {
            continue;
        }
        let key = (libm::floor(u / cell) as i64, libm::floor(v / cell) as i64);
        buckets.entry(key).or_default().push((i as u32, u, v));
    }
    let gate_sq = gate * gate;
    let mut candidates: Vec<u32> = Vec::new();
    keypoints
        .iter()
        .enumerate()
        .filter_map(|(qi, kp)| {
            candidates.clear();
            let (bx, by) = (libm::floor(kp.pixel.x / cell) as i64, libm::floor(kp.pixel.y / cell) as i64);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(list) = buckets.get(&(bx + dx, by + dy)) {
                        for &(i, u, v) in list {
                            let (du, dv) = (u - kp.pixel.x, v - kp.pixel.y);
                            if du * du + dv * dv <= gate_sq {
                                candidates.push(i);
                            }
                        }
                    }
                }
            }
            candidates.sort_unstable();
            let hit = two_nearest(
                &kp.descriptor,
                candidates.iter().map(|&i| (i as usize, &map.landmarks[i as usize].descriptor)),
            )?;
            ratio_test(qi, hit, MATCH_RATIO).map(|m| (qi, m.train_index))
        })
        .collect()
}

/// Pose of a frame from its keypoints against the map.
///
/// Descriptors are matched with a 0.8 ratio test. With a prior pose the
/// search is first limited to landmarks projecting within 50 px of each
/// keypoint. Matching falls back to the whole map when the gated matches are
/// too few or reach no consensus. The matches go through [`ransac_pnp`].
pub fn track_pose(
    map: &SparseMap,
    keypoints: &[Keypoint],
    intr: &CameraIntrinsics,
    prior: Option<&Pose>,
    cfg: &PnPConfig,
) -> Result<TrackResult> {
    if map.is_empty() {
        return Err(Error::TooFewMatches {
            got: 0,
            needed: cfg.min_inliers,
        });
    }
    if let Some(kp) = keypoints.iter().find(|k| k.descriptor.len() != map.dim) {
        return Err(Error::DimensionMismatch {
            expected: map.dim,
            got: kp.descriptor.len(),
        });
    }
    let needed = cfg.min_inliers.max(crate::pnp::SAMPLE_SIZE);
    if let Some(prior) = prior {
        let matches = gated_matches(map, keypoints, intr, prior, GATE_PX);
        if matches.len() >= needed {
            if let Ok(out) = solve_matches(map, keypoints, intr, cfg, matches, true) {
                return Ok(out);
            }
        }
    }
    let matches = global_matches(map, keypoints);
    if matches.len() < needed {
        return Err(Error::TooFewMatches {
            got: matches.len(),
            needed,
        });
    }
    solve_matches(map, keypoints, intr, cfg, matches, false)
}

fn solve_matches(
    map: &SparseMap,
    keypoints: &[Keypoint],
    intr: &CameraIntrinsics,
    cfg: &PnPConfig,
    matches: Vec<(usize, usize)>,
    gated: bool,
) -> Result<TrackResult> {
    let corrs: Vec<Correspondence> = matches
        .iter()
        .map(|&(k, l)| Correspondence {
            pixel: keypoints[k].pixel,
            point: map.landmarks[l].position,
            landmark_id: Some(map.landmarks[l].id),
        })
        .collect();
    let pnp = ransac_pnp(&corrs, intr, cfg)?;
    Ok(TrackResult {
        pnp,
        keypoint_indices: matches.iter().map(|&(k, _)| k).collect(),
        landmark_ids: matches.iter().map(|&(_, l)| map.landmarks[l].id).collect(),
        gated,
    })
}

/// When a tracked frame becomes a keyframe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyframePolicy {
    pub min_translation_m: f64,
    pub min_rotation_deg: f64,
    /// Inliers over keypoints below which the frame is inserted.
    pub min_inlier_ratio: f64,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        KeyframePolicy {
            min_translation_m: 0.25,
            min_rotation_deg: 10.0,
            min_inlier_ratio: 0.5,
        }
    }
}

impl KeyframePolicy {
    /// Whether a frame at `pose` with `inliers` of `keypoints` tracked should be inserted.
    pub fn wants(&self, map: &SparseMap, pose: &Pose, inliers: usize, keypoints: usize) -> bool {
        // Both distances are measured to the keyframe nearest in translation.
        let nearest = map.keyframes.iter().min_by(|a, b| {
            let da = (a.pose.translation - pose.translation).norm();
            let db = (b.pose.translation - pose.translation).norm();
            da.total_cmp(&db)
        });
        let Some(nearest) = nearest else {
            return true;
        };
        let translation = (nearest.pose.translation - pose.translation).norm();
        let rotation = nearest.pose.rotation.angle_to(&pose.rotation).to_degrees();
        let ratio = if keypoints == 0 { 0.0 } else { inliers as f64 / keypoints as f64 };
        translation >= self.min_translation_m || rotation >= self.min_rotation_deg || ratio < self.min_inlier_ratio
    }
}

/// Inserts the tracked frame as a keyframe when the policy asks for it.
///
/// Inlier keypoints link to their landmarks; keypoints that matched nothing
/// and have depth become new landmarks placed through the frame pose.
pub fn maybe_insert_keyframe(
    map: &mut SparseMap,
    keypoints: &[Keypoint],
    track: &TrackResult,
    depth: &DepthFrame,
    intr: &CameraIntrinsics,
    policy: &KeyframePolicy,
) -> bool {
    let pose = track.pnp.pose;
    if !policy.wants(map, &pose, track.inlier_count(), keypoints.len()) {
        return false;
    }
    let mut matched = alloc::vec![false; keypoints.len()];
    let mut links = Vec::new();
    for ((&k, &id), &inlier) in track.keypoint_indices.iter().zip(&track.landmark_ids).zip(&track.pnp.inlier_mask) {
        matched[k] = true;
        if inlier {
            links.push((k, id));
        }
    }
    // A keypoint missed by gating may still see a mapped landmark; creating
    // it again would leave two near-identical descriptors that defeat the
    // ratio test from then on.
    let unmatched: Vec<usize> = (0..keypoints.len()).filter(|&i| !matched[i]).collect();
    let candidates: Vec<Keypoint> = unmatched.iter().map(|&i| keypoints[i].clone()).collect();
    for (qi, l) in gated_matches(map, &candidates, intr, &pose, REASSOCIATION_PX) {
        matched[unmatched[qi]] = true;
        links.push((unmatched[qi], map.landmarks[l].id));
    }
    let lookup = DepthLookup::new(&depth.samples);
    let new_points: Vec<(usize, Vec3)> = keypoints
        .iter()
        .enumerate()
        .filter(|(i, _)| !matched[*i])
        .filter_map(|(i, kp)| {
            let d = lookup.depth_at(&kp.pixel)?;
            intr.backproject(&kp.pixel, d).ok().map(|p| (i, p))
        })
        .collect();
    map.insert_keyframe(pose, keypoints.to_vec(), links, new_points);
    true
}
