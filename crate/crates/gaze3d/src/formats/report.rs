//! Attention report as CSV (one row per ROI) and JSON (rows, session totals,
//! dwells and fixations).

use std::path::Path;

use gaze3d_core::analytics::{AttentionReport, DwellRecord, Fixation, RoiStats, SessionTotals};
use serde::{Deserialize, Serialize};

use super::vec3;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = [
    "roi_label",
    "total_dwell_ms",
    "dwell_count",
    "aoi_hit_count",
    "fixation_count",
    "recognition_capable_fixations",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiRow {
    pub roi_label: String,
    pub total_dwell_ms: i64,
    pub dwell_count: usize,
    pub aoi_hit_count: usize,
    pub fixation_count: usize,
    pub recognition_capable_fixations: usize,
    pub fixation_dwell_ms: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Totals {
    pub samples: usize,
    pub localized_samples: usize,
    pub hit_samples: usize,
    pub fixations: usize,
    pub duration_ms: i64,
    pub total_dwell_ms: i64,
    pub aoi_hit_count: usize,
    pub roi_fixations: usize,
    pub localized_pct: f64,
    pub hit_pct: f64,
    pub fixation_rate_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DwellRow {
    pub roi_label: String,
    pub entry_ms: i64,
    pub exit_ms: i64,
    pub sample_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixationRow {
    pub start_ms: i64,
    pub duration_ms: i64,
    pub centroid: [f64; 3],
    /// Half-open range of gaze sample indices.
    pub samples: [usize; 2],
    pub mean_dispersion_deg: f64,
    pub recognition_capable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub rois: Vec<RoiRow>,
    pub totals: Totals,
    pub dwells: Vec<DwellRow>,
    pub fixations: Vec<FixationRow>,
}

impl ReportFile {
    pub fn new(report: &AttentionReport, dwells: &[DwellRecord], fixations: &[Fixation]) -> Self {
        let t = &report.totals;
        ReportFile {
            rois: report
                .rois
                .iter()
                .map(|r| RoiRow {
                    roi_label: r.roi_label.clone(),
                    total_dwell_ms: r.total_dwell_ms,
                    dwell_count: r.dwell_count,
                    aoi_hit_count: r.aoi_hit_count,
                    fixation_count: r.fixation_count,
                    recognition_capable_fixations: r.recognition_capable_fixations,
                    fixation_dwell_ms: r.fixation_dwell_ms,
                })
                .collect(),
            totals: Totals {
                samples: t.samples,
                localized_samples: t.localized_samples,
                hit_samples: t.hit_samples,
                fixations: t.fixations,
                duration_ms: t.duration_ms,
                total_dwell_ms: t.total_dwell_ms,
                aoi_hit_count: t.aoi_hit_count,
                roi_fixations: t.roi_fixations,
                localized_pct: t.localized_pct(),
                hit_pct: t.hit_pct(),
                fixation_rate_hz: t.fixation_rate(),
            },
            dwells: dwells
                .iter()
                .map(|d| DwellRow {
                    roi_label: d.roi_label.clone(),
                    entry_ms: d.entry_ms,
                    exit_ms: d.exit_ms,
                    sample_count: d.sample_count,
                })
                .collect(),
            fixations: fixations
                .iter()
                .map(|f| FixationRow {
                    start_ms: f.start_ms,
                    duration_ms: f.duration_ms,
                    centroid: vec3(&f.centroid),
                    samples: [f.samples.start, f.samples.end],
                    mean_dispersion_deg: f.mean_dispersion_deg,
                    recognition_capable: f.recognition_capable(),
                })
                .collect(),
        }
    }

    /// The per-ROI table and session counts; derived rates are recomputed.
    pub fn to_report(&self) -> AttentionReport {
        let t = &self.totals;
        AttentionReport {
            rois: self
                .rois
                .iter()
                .map(|r| RoiStats {
                    roi_label: r.roi_label.clone(),
                    total_dwell_ms: r.total_dwell_ms,
                    dwell_count: r.dwell_count,
                    aoi_hit_count: r.aoi_hit_count,
                    fixation_count: r.fixation_count,
                    recognition_capable_fixations: r.recognition_capable_fixations,
                    fixation_dwell_ms: r.fixation_dwell_ms,
                })
                .collect(),
            totals: SessionTotals {
                samples: t.samples,
                localized_samples: t.localized_samples,
                hit_samples: t.hit_samples,
                fixations: t.fixations,
                duration_ms: t.duration_ms,
                total_dwell_ms: t.total_dwell_ms,
                aoi_hit_count: t.aoi_hit_count,
                roi_fixations: t.roi_fixations,
            },
        }
    }
}

pub fn encode_csv(report: &AttentionReport) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in &report.rois {
        w.write_record([
            r.roi_label.clone(),
            r.total_dwell_ms.to_string(),
            r.dwell_count.to_string(),
            r.aoi_hit_count.to_string(),
            r.fixation_count.to_string(),
            r.recognition_capable_fixations.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

/// Per-ROI rows of a report CSV; fields absent from the CSV are zero.
pub fn decode_csv(path: &Path, bytes: &[u8]) -> Result<Vec<RoiStats>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::format(path, format!("unexpected header, expected `{}`", CSV_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let line = i + 2;
        let num = |k: usize| -> Result<i64> {
            rec[k].parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                column: 0,
                message: format!("`{}` is not an integer in column {}", &rec[k], CSV_HEADER[k]),
            })
        };
        out.push(RoiStats {
            roi_label: rec[0].to_string(),
            total_dwell_ms: num(1)?,
            dwell_count: num(2)? as usize,
            aoi_hit_count: num(3)? as usize,
            fixation_count: num(4)? as usize,
            recognition_capable_fixations: num(5)? as usize,
            fixation_dwell_ms: 0,
        });
    }
    Ok(out)
}
