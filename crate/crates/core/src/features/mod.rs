//! Appearance descriptors, ratio-test matching and the vocabulary tree.

mod vocab;

use alloc::vec::Vec;

pub use vocab::{build_vocabulary, VocabularyTree, WordId};

use crate::error::{Error, Result};
use crate::geometry::Pixel;

/// Default descriptor dimension.
pub const DEFAULT_DIMENSION: usize = 32;

/// Appearance vector attached to a keypoint or landmark.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor(Vec<f64>);

impl Descriptor {
    /// Rejects non-finite components and the zero vector.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || !values.iter().all(|v| v.is_finite()) || values.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidDescriptor);
        }
        Ok(Descriptor(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn distance_squared(&self, other: &Descriptor) -> f64 {
        squared_distance(&self.0, &other.0)
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        libm::sqrt(self.distance_squared(other))
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Keypoint {
    pub pixel: Pixel,
    pub descriptor: Descriptor,
    /// Generator label; only simulated data carries it.
    pub landmark_id: Option<u64>,
}

impl Keypoint {
    pub fn new(pixel: Pixel, descriptor: Descriptor) -> Self {
        Keypoint {
            pixel,
            descriptor,
            landmark_id: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub query_index: usize,
    pub train_index: usize,
    pub distance: f64,
    /// Nearest over second-nearest distance.
    pub ratio: f64,
}

/// Checks that every keypoint has a finite pixel and a descriptor of dimension `dim`.
pub fn validate_keypoints(keypoints: &[Keypoint], dim: usize) -> Result<()> {
    for kp in keypoints {
        if kp.descriptor.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: kp.descriptor.len(),
            });
        }
        if !(kp.pixel.x.is_finite() && kp.pixel.y.is_finite()) {
            return Err(Error::InvalidConfig("keypoint pixel must be finite"));
        }
    }
    Ok(())
}

/// Nearest and second-nearest squared distances among `candidates`.
/// Ties keep the candidate seen first.
#[inline]
pub(crate) fn two_nearest<'a>(
    query: &Descriptor,
    candidates: impl Iterator<Item = (usize, &'a Descriptor)>,
) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut second = f64::INFINITY;
    for (i, d) in candidates {
        let dist = query.distance_squared(d);
        match best {
            Some((_, b)) if dist >= b => second = second.min(dist),
            Some((_, b)) => {
                second = b;
                best = Some((i, dist));
            }
            None => best = Some((i, dist)),
        }
    }
    best.map(|(i, d)| (i, d, second))
}

/// Applies Lowe's ratio test to a nearest/second-nearest pair of squared distances.
#[inline]
pub(crate) fn ratio_test(query_index: usize, hit: (usize, f64, f64), ratio_threshold: f64) -> Option<Match> {
    let (train_index, d1_sq, d2_sq) = hit;
    if d2_sq == 0.0 {
        return None;
    }
    let distance = libm::sqrt(d1_sq);
    let ratio = if d2_sq.is_infinite() { 0.0 } else { distance / libm::sqrt(d2_sq) };
    (ratio < ratio_threshold).then_some(Match {
        query_index,
        train_index,
        distance,
        ratio,
    })
}

/// Brute-force nearest-neighbour matching with a ratio test.
///
/// A query is matched to its nearest train descriptor when the nearest
/// distance is below `ratio_threshold` times the second-nearest one. A
/// single train descriptor has no competitor and passes with ratio 0.
pub fn match_descriptors(query: &[Descriptor], train: &[Descriptor], ratio_threshold: f64) -> Result<Vec<Match>> {
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if !(ratio_threshold > 0.0 && ratio_threshold <= 1.0) {
        return Err(Error::InvalidConfig("ratio_threshold must lie in (0, 1]"));
    }
    Ok(query
        .iter()
        .enumerate()
        .filter_map(|(qi, q)| {
            let hit = two_nearest(q, train.iter().enumerate())?;
            ratio_test(qi, hit, ratio_threshold)
        })
        .collect())
}
