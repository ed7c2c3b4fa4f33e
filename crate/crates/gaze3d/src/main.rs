use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gaze3d::commands;
use gaze3d::config::Config;
use gaze3d::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "gaze3d", version, about = "3D gaze recovery and semantic attention analytics")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file of pipeline parameters.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Suppress the summary line.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic session from a spec file or bundled scene.
    Simulate {
        /// Spec file, or one of: desk-scene, desk-far, corridor.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the landmark map and occupancy grid from the RGB-D scan.
    MapBuild {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        grid: PathBuf,
    },
    /// Localize every scene-camera frame against the map.
    Localize {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map gaze samples onto the 3D model.
    GazeRecover {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        session: PathBuf,
        /// Frame poses from `localize`; frames are localized here otherwise.
        #[arg(long)]
        poses: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-frame localization records.
        #[arg(long)]
        poses_out: Option<PathBuf>,
    },
    /// Detect reference appearances in the scan and lift them to 3D ROIs.
    RoiAnnotate {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// Reference directory; defaults to the one named in the session manifest.
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fixations, dwell times, per-ROI report and saliency grid.
    Analyze {
        #[arg(long)]
        gaze3d: PathBuf,
        #[arg(long)]
        rois: Option<PathBuf>,
        /// Grid whose geometry the saliency map uses.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare recovered gaze with simulator ground truth.
    Evaluate {
        #[arg(long)]
        gaze3d: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Simulate { spec, out } => {
            let seed = cli.seed.or(cli.config.as_ref().map(|_| cfg.seed));
            let spec = commands::resolve_spec(&spec, seed)?;
            commands::simulate(&spec, &out)
        }
        Command::MapBuild { session, map, grid } => commands::map_build(&session, &map, &grid, &cfg),
        Command::Localize { map, session, out } => commands::localize(&map, &session, &out, &cfg),
        Command::GazeRecover {
            map,
            grid,
            session,
            poses,
            out,
            poses_out,
        } => commands::gaze_recover(&map, &grid, &session, poses.as_deref(), &out, poses_out.as_deref(), &cfg),
        Command::RoiAnnotate {
            map,
            grid,
            refs,
            session,
            out,
        } => commands::roi_annotate(&map, &grid, refs.as_deref(), &session, &out, &cfg),
        Command::Analyze { gaze3d, rois, grid, out } => commands::analyze(&gaze3d, rois.as_deref(), &grid, &out, &cfg),
        Command::Evaluate { gaze3d, truth, out } => commands::evaluate(&gaze3d, &truth, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // help and version requests are successes
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let quiet = cli.quiet;
    match run(cli) {
        Ok(summary) => {
            if !quiet {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", chain(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn chain(e: &Error) -> String {
    let mut s = e.to_string();
    let mut src = std::error::Error::source(e);
    while let Some(inner) = src {
        let msg = inner.to_string();
        if !s.contains(&msg) {
            s.push_str(": ");
            s.push_str(&msg);
        }
        src = inner.source();
    }
    s
}
