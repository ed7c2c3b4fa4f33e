//! Pipeline commands. Each one reads its inputs, computes every output in
//! memory and only then writes, so a failure leaves no partial files.

use std::path::{Path, PathBuf};

use gaze3d_core::analytics::{aoi_hits, detect_fixations, dwell_times, saliency_map, summarize};
use gaze3d_core::features::Keypoint;
use gaze3d_core::gaze::{localize_frame, recover_gaze, recover_session, GazeSample, LocalizedFrame, SessionFrame};
use gaze3d_core::geometry::{CameraIntrinsics, Pose};
use gaze3d_core::pnp::PnPConfig;
use gaze3d_core::roi::{annotate, RoiDatabase};
use gaze3d_core::sim::{self, SimulationSpec};
use gaze3d_core::world::{MapBuilder, SparseMap};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::formats::grid::{encode_grid, encode_occupancy, load_geometry, load_occupancy};
use crate::formats::map::{encode_map, load_map};
use crate::formats::records::{gaze_points, FrameRecord, Gaze3dRecord, MetricsFile, RoiFile, TruthRecord};
use crate::formats::report::{encode_csv, ReportFile};
use crate::formats::session::{
    load_references, DepthFile, FeatureFile, GazeRecord, GridDoc, ReferenceEntry, ReferenceManifest, Session, SessionManifest,
    MANIFEST, REFERENCE_MANIFEST,
};
use crate::formats::spec::{bundled, SceneTruth, SimulationDoc, BUNDLED};
use crate::formats::Intrinsics;
use crate::io::{read_json, read_jsonl, to_json, to_json_pretty, to_jsonl, OutputSet};

/// File names inside a simulated session directory.
pub mod layout {
    pub const GAZE: &str = "gaze.jsonl";
    pub const TRUTH: &str = "truth.jsonl";
    pub const TRUTH_SCENE: &str = "truth_scene.json";
    pub const SPEC: &str = "spec.json";
    pub const REFS: &str = "refs";
    pub const REPORT_CSV: &str = "report.csv";
    pub const REPORT_JSON: &str = "report.json";
    pub const SALIENCY: &str = "saliency.g3dg";
}

/// Resolves a bundled scene name or a spec file. `seed` replaces the scene
/// seed of a spec file when given; bundled scenes use it or zero.
pub fn resolve_spec(spec: &str, seed: Option<u64>) -> Result<SimulationSpec> {
    if let Some(s) = bundled(spec, seed.unwrap_or(0)) {
        return Ok(s);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Error::Usage(format!(
            "`{spec}` is neither a spec file nor a bundled scene ({})",
            BUNDLED.join(", ")
        )));
    }
    let doc: SimulationDoc = read_json(path)?;
    let mut s = doc.to_spec(path)?;
    if let Some(seed) = seed {
        s.scene.seed = seed;
    }
    Ok(s)
}

fn frame_name(dir: &str, i: usize) -> String {
    format!("{dir}/{i:06}.json")
}

pub fn simulate(spec: &SimulationSpec, out: &Path) -> Result<String> {
    let s = sim::simulate(spec).map_err(Error::core("simulation"))?;
    let mut files = OutputSet::new();

    let etg_frames: Vec<String> = (0..s.session.frames.len()).map(|i| frame_name("etg", i)).collect();
    for (f, name) in s.session.frames.iter().zip(&etg_frames) {
        files.add(out.join(name), to_json(&FeatureFile::from_keypoints(f.frame_index, &f.keypoints)));
    }
    let scan_features: Vec<String> = (0..s.scan_frames.len()).map(|i| frame_name("scan/features", i)).collect();
    let scan_depth: Vec<String> = (0..s.scan_frames.len()).map(|i| frame_name("scan/depth", i)).collect();
    for (i, f) in s.scan_frames.iter().enumerate() {
        files.add(out.join(&scan_features[i]), to_json(&FeatureFile::from_keypoints(i as u64, &f.keypoints)));
        files.add(out.join(&scan_depth[i]), to_json(&DepthFile::from_samples(i as u64, &f.samples)));
    }

    let mut refs = Vec::new();
    for r in &s.scene.references {
        let rel = format!("{}.json", r.roi_label);
        files.add(out.join(layout::REFS).join(&rel), to_json(&FeatureFile::from_keypoints(0, &r.keypoints)));
        refs.push(ReferenceEntry {
            label: r.roi_label.clone(),
            size: [r.reference_size.0, r.reference_size.1],
            features: rel,
        });
    }
    let dim = spec.scene.descriptor_dim;
    files.add(
        out.join(layout::REFS).join(REFERENCE_MANIFEST),
        to_json(&ReferenceManifest {
            descriptor_dim: dim,
            references: refs,
        }),
    );

    let gaze: Vec<GazeRecord> = s.session.samples.iter().map(GazeRecord::from).collect();
    files.add(out.join(layout::GAZE), to_jsonl(&gaze));
    let truth: Vec<TruthRecord> = s.session.truth.iter().map(TruthRecord::from).collect();
    files.add(out.join(layout::TRUTH), to_jsonl(&truth));
    files.add(out.join(layout::TRUTH_SCENE), to_json(&SceneTruth::new(&s)));
    files.add(out.join(layout::SPEC), to_json_pretty(&SimulationDoc::from(spec)));

    let geometry = spec.scene.grid_geometry().map_err(Error::core("scene grid"))?;
    let manifest = SessionManifest {
        descriptor_dim: dim,
        etg_intrinsics: Intrinsics::from(&spec.etg_intrinsics),
        rgbd_intrinsics: Intrinsics::from(&spec.rgbd_intrinsics),
        frame_rate: spec.etg.frame_rate,
        scan_frame_rate: spec.scan.frame_rate,
        gaze: layout::GAZE.into(),
        etg_frames,
        scan_features,
        scan_depth,
        grid: Some(GridDoc::from(&geometry)),
        references: Some(layout::REFS.into()),
        truth: Some(layout::TRUTH.into()),
    };
    files.add(out.join(MANIFEST), to_json(&manifest));
    files.commit()?;
    Ok(format!(
        "simulated {} landmarks, {} scan frames, {} scene frames, {} gaze samples into {}",
        s.scene.landmarks.len(),
        s.scan_frames.len(),
        s.session.frames.len(),
        s.session.samples.len(),
        out.display()
    ))
}

pub fn map_build(session_dir: &Path, map_out: &Path, grid_out: &Path, cfg: &Config) -> Result<String> {
    let session = Session::open(session_dir)?;
    let manifest_path = session.path(MANIFEST);
    let geometry = session
        .manifest
        .grid
        .as_ref()
        .ok_or_else(|| Error::format(&manifest_path, "manifest has no `grid` to build the occupancy grid into"))?
        .to_core(&manifest_path)?;
    if session.scan_frame_count() == 0 {
        return Err(Error::format(&manifest_path, "session has no scan frames"));
    }
    let mut builder =
        MapBuilder::new(session.rgbd_intrinsics, geometry, cfg.map_build()).map_err(Error::core("map building"))?;
    for i in 0..session.scan_frame_count() {
        let frame = session.scan_frame(i)?;
        builder
            .push(&frame)
            .map_err(Error::core(format!("scan frame {}", session.manifest.scan_features[i])))?;
    }
    let built = builder.finish().map_err(Error::core("map building"))?;
    let mut files = OutputSet::new();
    files.add(map_out, encode_map(&built.map));
    files.add(grid_out, encode_occupancy(&built.grid));
    files.commit()?;
    let s = built.summary;
    Ok(format!(
        "{} landmarks, {} keyframes from {} frames ({} tracked, keyframe fraction {:.3}, {} occupied voxels)",
        s.landmarks,
        s.keyframes,
        s.frames,
        s.tracked_frames,
        s.keyframe_fraction(),
        built.grid.occupied_count()
    ))
}

/// Localizes frames in order, each seeded by the last localized pose.
fn localize_all<'a>(
    map: &SparseMap,
    frames: impl IntoIterator<Item = (u64, &'a [Keypoint])>,
    intr: &CameraIntrinsics,
    pnp: &PnPConfig,
) -> Vec<LocalizedFrame> {
    let mut out = Vec::new();
    let mut prev: Option<LocalizedFrame> = None;
    for (index, kps) in frames {
        let lf = localize_frame(map, index, kps, intr, prev.as_ref(), pnp);
        if lf.is_localized() {
            prev = Some(lf);
        }
        out.push(lf);
    }
    out
}

fn frame_summary(frames: &[LocalizedFrame]) -> String {
    let n = frames.iter().filter(|f| f.is_localized()).count();
    format!("{n} of {} frames localized", frames.len())
}

pub fn localize(map_path: &Path, session_dir: &Path, out: &Path, cfg: &Config) -> Result<String> {
    let map = load_map(map_path)?;
    let session = Session::open(session_dir)?;
    let frames = session.etg_frames()?;
    let localized = localize_all(
        &map,
        frames.iter().map(|f| (f.frame_index, f.keypoints.as_slice())),
        &session.etg_intrinsics,
        &cfg.pnp(),
    );
    let records: Vec<FrameRecord> = localized.iter().map(FrameRecord::from).collect();
    crate::io::write_atomic(out, to_jsonl(&records).as_bytes())?;
    Ok(frame_summary(&localized))
}

fn load_frames(path: &Path) -> Result<Vec<LocalizedFrame>> {
    let records: Vec<FrameRecord> = read_jsonl(path)?;
    records.iter().map(|r| r.to_core(path)).collect()
}

/// Recovers gaze points with frames localized from scratch or read from
/// `poses`. Returns the gaze and, when localized here, frame records.
pub fn gaze_recover(
    map_path: &Path,
    grid_path: &Path,
    session_dir: &Path,
    poses: Option<&Path>,
    out: &Path,
    poses_out: Option<&Path>,
    cfg: &Config,
) -> Result<String> {
    let map = load_map(map_path)?;
    let grid = load_occupancy(grid_path)?;
    let session = Session::open(session_dir)?;
    let samples = session.gaze_samples()?;
    let intr = session.etg_intrinsics;
    let gcfg = cfg.gaze();
    let (points, frames) = match poses {
        Some(p) => {
            if samples.is_empty() {
                return Err(Error::core(session.manifest.gaze.clone())(gaze3d_core::Error::EmptySession));
            }
            let frames = load_frames(p)?;
            let points = samples_with_frames(&samples, &frames, &intr, &grid, gcfg.max_range);
            (points, frames)
        }
        None => {
            let etg: Vec<SessionFrame> = session.etg_frames()?;
            let mut frames = recover_session(&samples, &etg, &map, &grid, &intr, &gcfg)
                .map_err(Error::core(session.manifest.gaze.clone()))?
                .frames;
            // Cast from poses as they are written to disk so that a later `--poses` run is bit-identical.
            for f in &mut frames {
                f.pose = f.pose.and_then(|p| Pose::from_array(&p.to_array()).ok());
            }
            let points = samples_with_frames(&samples, &frames, &intr, &grid, gcfg.max_range);
            (points, frames)
        }
    };
    let records: Vec<Gaze3dRecord> = samples
        .iter()
        .zip(&points)
        .map(|(s, p)| {
            let pose = frames.iter().find(|f| f.frame_index == s.frame_index).and_then(|f| f.pose);
            Gaze3dRecord::new(p, pose.as_ref())
        })
        .collect();
    let mut files = OutputSet::new();
    files.add(out, to_jsonl(&records));
    if let Some(po) = poses_out {
        let fr: Vec<FrameRecord> = frames.iter().map(FrameRecord::from).collect();
        files.add(po, to_jsonl(&fr));
    }
    files.commit()?;
    let hits = points.iter().filter(|p| p.is_hit()).count();
    Ok(format!("{hits} of {} samples hit the model; {}", points.len(), frame_summary(&frames)))
}

fn samples_with_frames(
    samples: &[GazeSample],
    frames: &[LocalizedFrame],
    intr: &CameraIntrinsics,
    grid: &gaze3d_core::world::OccupancyGrid,
    max_range: f64,
) -> Vec<gaze3d_core::gaze::GazePoint3D> {
    let mut by_index: Vec<(u64, usize)> = frames.iter().enumerate().map(|(i, f)| (f.frame_index, i)).collect();
    by_index.sort_unstable();
    samples
        .iter()
        .map(|s| {
            let frame = match by_index.binary_search_by_key(&s.frame_index, |&(k, _)| k) {
                Ok(j) => frames[by_index[j].1],
                Err(_) => LocalizedFrame::lost(s.frame_index),
            };
            recover_gaze(s, &frame, intr, grid, max_range)
        })
        .collect()
}

pub fn roi_annotate(
    map_path: &Path,
    grid_path: &Path,
    refs: Option<&Path>,
    session_dir: &Path,
    out: &Path,
    cfg: &Config,
) -> Result<String> {
    let map = load_map(map_path)?;
    let grid = load_occupancy(grid_path)?;
    let session = Session::open(session_dir)?;
    let refs_dir: PathBuf = match refs {
        Some(r) => r.to_path_buf(),
        None => session
            .manifest
            .references
            .as_ref()
            .map(|r| session.path(r))
            .ok_or_else(|| Error::Usage("no --refs given and the session manifest names no references".into()))?,
    };
    let references = load_references(&refs_dir)?;
    let db = RoiDatabase::build(references, cfg.roi.tree_branching, cfg.roi.tree_depth, cfg.seed)
        .map_err(Error::core(format!("reference database from {}", refs_dir.display())))?;
    let scan: Vec<(u64, Vec<Keypoint>)> =
        (0..session.scan_frame_count()).map(|i| session.scan_features(i)).collect::<Result<_>>()?;
    let localized = localize_all(&map, scan.iter().map(|(i, k)| (*i, k.as_slice())), &session.rgbd_intrinsics, &cfg.pnp());
    let frames = scan.iter().zip(&localized).map(|((i, k), lf)| (*i, k.as_slice(), lf.pose));
    let ann = annotate(&db, frames, &session.rgbd_intrinsics, &grid, &cfg.detection(), cfg.gaze.max_range_m);
    crate::io::write_atomic(out, to_json(&RoiFile::from_rois(&ann.rois)).as_bytes())?;
    let s = ann.summary;
    let labels: Vec<&str> = ann.rois.iter().map(|r| r.roi_label.as_str()).collect();
    Ok(format!(
        "{} ROIs [{}] from {} detections in {} frames ({} lifted, {} rejected)",
        ann.rois.len(),
        labels.join(", "),
        s.detections,
        s.frames,
        s.lifted,
        s.rejected
    ))
}

pub fn analyze(gaze3d: &Path, rois: Option<&Path>, grid: &Path, out_dir: &Path, cfg: &Config) -> Result<String> {
    let records: Vec<Gaze3dRecord> = read_jsonl(gaze3d)?;
    let points = gaze_points(gaze3d, &records)?;
    let rois = match rois {
        Some(p) => read_json::<RoiFile>(p)?.to_rois(p)?,
        None => Vec::new(),
    };
    let geometry = load_geometry(grid)?;
    let a = &cfg.analytics;
    let fixations = detect_fixations(&points, a.dispersion_deg, a.min_fixation_ms);
    let hits = aoi_hits(&points, &rois, a.aoi_tolerance_m);
    let timestamps: Vec<i64> = points.iter().map(|p| p.timestamp_ms).collect();
    let dwells = dwell_times(&hits, &timestamps, &rois, a.max_gap_ms).map_err(Error::core("dwell times"))?;
    let report = summarize(&points, &fixations, &dwells, &rois, a.aoi_tolerance_m);
    let saliency =
        saliency_map(&fixations, geometry, a.saliency_sigma_m, a.duration_weighted).map_err(Error::core("saliency map"))?;
    let mut files = OutputSet::new();
    files.add(out_dir.join(layout::REPORT_CSV), encode_csv(&report));
    files.add(out_dir.join(layout::REPORT_JSON), to_json(&ReportFile::new(&report, &dwells, &fixations)));
    files.add(
        out_dir.join(layout::SALIENCY),
        encode_grid(&saliency.geometry, saliency.mass.iter().map(|&m| m as f32)),
    );
    files.commit()?;
    let t = &report.totals;
    Ok(format!(
        "{} samples, {} fixations, {} ROI rows, total dwell {} ms, saliency mass {:.6}",
        t.samples,
        t.fixations,
        report.rois.len(),
        t.total_dwell_ms,
        saliency.total_mass()
    ))
}

pub fn evaluate(gaze3d: &Path, truth: &Path, out: &Path) -> Result<String> {
    let records: Vec<Gaze3dRecord> = read_jsonl(gaze3d)?;
    let points = gaze_points(gaze3d, &records)?;
    let truth_records: Vec<TruthRecord> = read_jsonl(truth)?;
    let truth: Vec<_> = truth_records.iter().map(|r| r.to_core(truth)).collect::<Result<_>>()?;
    let m = sim::evaluate(&points, &truth).map_err(Error::core("evaluation"))?;
    crate::io::write_atomic(out, to_json(&MetricsFile::from(&m)).as_bytes())?;
    Ok(format!(
        "median angular error {:.3} deg, median 3D error {:.2} cm, localized {:.1}%, hit {:.1}%",
        m.median_angular_deg,
        100.0 * m.median_error_m,
        m.localized_pct,
        m.hit_pct
    ))
}
