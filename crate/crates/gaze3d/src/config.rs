//! Pipeline parameters read from `--config`; every field has a default.

use std::path::Path;

use gaze3d_core::gaze::GazeConfig;
use gaze3d_core::pnp::PnPConfig;
use gaze3d_core::roi::DetectionConfig;
use gaze3d_core::world::{KeyframePolicy, LogOdds, MapBuildConfig};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PnpSection {
    pub ransac_iterations: usize,
    pub inlier_threshold_px: f64,
    pub min_inliers: usize,
    pub refine_max_iterations: usize,
    pub refine_convergence_px: f64,
}

impl Default for PnpSection {
    fn default() -> Self {
        let d = PnPConfig::default();
        PnpSection {
            ransac_iterations: d.ransac_iterations,
            inlier_threshold_px: d.inlier_threshold_px,
            min_inliers: d.min_inliers,
            refine_max_iterations: d.refine_max_iterations,
            refine_convergence_px: d.refine_convergence_px,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingSection {
    pub keyframe_translation_m: f64,
    pub keyframe_rotation_deg: f64,
    pub keyframe_inlier_ratio: f64,
    pub log_odds_occupied: f32,
    pub log_odds_free: f32,
    pub log_odds_min: f32,
    pub log_odds_max: f32,
    pub occupied_threshold: f32,
}

impl Default for MappingSection {
    fn default() -> Self {
        let k = KeyframePolicy::default();
        let l = LogOdds::default();
        MappingSection {
            keyframe_translation_m: k.min_translation_m,
            keyframe_rotation_deg: k.min_rotation_deg,
            keyframe_inlier_ratio: k.min_inlier_ratio,
            log_odds_occupied: l.occupied,
            log_odds_free: l.free,
            log_odds_min: l.min,
            log_odds_max: l.max,
            occupied_threshold: l.threshold,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GazeSection {
    pub max_range_m: f64,
}

impl Default for GazeSection {
    fn default() -> Self {
        GazeSection {
            max_range_m: gaze3d_core::gaze::DEFAULT_MAX_RANGE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiSection {
    pub top_n: usize,
    pub ratio: f64,
    pub threshold_px: f64,
    pub min_inliers: usize,
    pub min_area_px: f64,
    pub tree_branching: usize,
    pub tree_depth: usize,
}

impl Default for RoiSection {
    fn default() -> Self {
        let d = DetectionConfig::default();
        RoiSection {
            top_n: d.top_n,
            ratio: d.ratio,
            threshold_px: d.threshold_px,
            min_inliers: d.min_inliers,
            min_area_px: d.min_area_px,
            tree_branching: 8,
            tree_depth: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsSection {
    pub dispersion_deg: f64,
    pub min_fixation_ms: i64,
    pub max_gap_ms: i64,
    pub aoi_tolerance_m: f64,
    pub saliency_sigma_m: f64,
    pub duration_weighted: bool,
}

impl Default for AnalyticsSection {
    fn default() -> Self {
        AnalyticsSection {
            dispersion_deg: 1.0,
            min_fixation_ms: 100,
            max_gap_ms: 0,
            aoi_tolerance_m: gaze3d_core::analytics::DEFAULT_AOI_TOLERANCE_M,
            saliency_sigma_m: 0.05,
            duration_weighted: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seeds every randomized step; `--seed` overrides it.
    pub seed: u64,
    pub pnp: PnpSection,
    pub mapping: MappingSection,
    pub gaze: GazeSection,
    pub roi: RoiSection,
    pub analytics: AnalyticsSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn pnp(&self) -> PnPConfig {
        let p = &self.pnp;
        PnPConfig {
            ransac_iterations: p.ransac_iterations,
            inlier_threshold_px: p.inlier_threshold_px,
            min_inliers: p.min_inliers,
            refine_max_iterations: p.refine_max_iterations,
            refine_convergence_px: p.refine_convergence_px,
            seed: self.seed,
        }
    }

    pub fn map_build(&self) -> MapBuildConfig {
        let m = &self.mapping;
        MapBuildConfig {
            pnp: self.pnp(),
            keyframes: KeyframePolicy {
                min_translation_m: m.keyframe_translation_m,
                min_rotation_deg: m.keyframe_rotation_deg,
                min_inlier_ratio: m.keyframe_inlier_ratio,
            },
            log_odds: LogOdds {
                occupied: m.log_odds_occupied,
                free: m.log_odds_free,
                min: m.log_odds_min,
                max: m.log_odds_max,
                threshold: m.occupied_threshold,
            },
        }
    }

    pub fn gaze(&self) -> GazeConfig {
        GazeConfig {
            pnp: self.pnp(),
            max_range: self.gaze.max_range_m,
        }
    }

    pub fn detection(&self) -> DetectionConfig {
        let r = &self.roi;
        DetectionConfig {
            top_n: r.top_n,
            ratio: r.ratio,
            threshold_px: r.threshold_px,
            min_inliers: r.min_inliers,
            min_area_px: r.min_area_px,
            seed: self.seed,
        }
    }
}
