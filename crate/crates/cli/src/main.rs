//! `fieldct`: simulate, preprocess, calibrate, reconstruct and report.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage or parse error, 3 I/O
//! error or missing input, 4 no view could be calibrated, 5 the volume sink
//! failed.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    CalibrateArgs, CmdResult, Failure, PreprocessArgs, ReconstructArgs, ReportArgs, Session, SimulateArgs, EXIT_IO,
    EXIT_PARSE,
};
use config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "fieldct", version, about = "Self-calibrating cone-beam CT pipeline")]
struct Cli {
    /// Pipeline configuration (JSON); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Seed for the simulated trajectory and for RANSAC.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Debug-level log records.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a raw scan with ground truth from a scenario file.
    Simulate {
        scenario: Option<PathBuf>,
        /// Run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exact expected counts instead of photon and read noise.
        #[arg(long)]
        noise_off: bool,
        /// Number of stuck pixels to inject.
        #[arg(long)]
        defects: Option<usize>,
    },
    /// Normalize the raw stack, detect and inpaint defects, take logs.
    Preprocess {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Raw stack directory [default: <out>/raw].
        #[arg(long)]
        raw: Option<PathBuf>,
        /// Output stack directory [default: <out>/proj].
        #[arg(long)]
        stack: Option<PathBuf>,
        /// Detector saturation level [default: from the run's scenario].
        #[arg(long)]
        saturation: Option<f32>,
        #[arg(long)]
        no_defect_map: bool,
        #[arg(long)]
        no_inpaint: bool,
    },
    /// Estimate one projection matrix per view from the bead phantom.
    Calibrate {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Line-integral stack [default: <out>/proj].
        #[arg(long)]
        stack: Option<PathBuf>,
        /// Phantom file [default: <out>/phantom.json].
        #[arg(long)]
        phantom: Option<PathBuf>,
        /// Re-estimate poses with shared intrinsics.
        #[arg(long)]
        pool_intrinsics: bool,
        /// Print the largest source-position error against the truth file.
        #[arg(long)]
        compare_truth: bool,
        /// Ground truth [default: <out>/truth.json].
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Filtered backprojection into a blocked raw volume and a slice image.
    Reconstruct {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stack: Option<PathBuf>,
        /// Calibration file [default: <out>/calibration.json].
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Scenario for --ideal-trajectory and --compare-truth [default: <out>/scenario.json].
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Ignore the calibration and assume the nominal equidistant circle.
        #[arg(long)]
        ideal_trajectory: bool,
        /// Print the RMSE against the voxelized scenario phantom.
        #[arg(long)]
        compare_truth: bool,
        /// Voxels per axis, one value or three.
        #[arg(long, num_args = 1..=3)]
        dims: Option<Vec<usize>>,
        /// Voxel size in mm, one value or three.
        #[arg(long, num_args = 1..=3)]
        spacing: Option<Vec<f64>>,
        /// Block size in voxels, one value or three.
        #[arg(long, num_args = 1..=3)]
        block: Option<Vec<usize>>,
        /// Slice gray-value window: low high.
        #[arg(long, num_args = 2, allow_negative_numbers = true)]
        window: Option<Vec<f32>>,
    },
    /// Trajectory and per-view reprojection-error tables for plotting.
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
}

fn init_logging(verbose: bool) {
    let level = if verbose { log::LevelFilter::Debug } else { log::LevelFilter::Info };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format(|buf, r| {
            writeln!(
                buf,
                "level={} target={} {}",
                r.level().as_str().to_ascii_lowercase(),
                r.target(),
                r.args()
            )
        })
        .init();
}

fn load_config(path: Option<&PathBuf>) -> CmdResult<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_IO, anyhow::Error::new(e).context(format!("reading {}", path.display()))))?;
    let mut cfg = PipelineConfig::from_json(&text)
        .map_err(|e| Failure::new(EXIT_PARSE, anyhow::Error::new(e).context(format!("parsing {}", path.display()))))?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    cfg.resolve_paths(&base);
    Ok(cfg)
}

fn set_threads(threads: usize) -> CmdResult {
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::new(commands::EXIT_FAILURE, e))?;
    #[cfg(not(feature = "parallel"))]
    if threads > 1 {
        log::warn!("threads={threads} ignored: built without the parallel feature");
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    set_threads(cli.threads)?;
    let session = Session {
        config: load_config(cli.config.as_ref())?,
        seed: cli.seed,
    };
    match cli.command {
        Command::Simulate {
            scenario,
            out,
            noise_off,
            defects,
        } => commands::simulate(
            &session,
            &SimulateArgs {
                scenario,
                out,
                noise_off,
                defects,
            },
        ),
        Command::Preprocess {
            out,
            raw,
            stack,
            saturation,
            no_defect_map,
            no_inpaint,
        } => commands::preprocess(
            &session,
            &PreprocessArgs {
                raw,
                stack,
                out,
                saturation,
                no_defect_map,
                no_inpaint,
            },
        ),
        Command::Calibrate {
            out,
            stack,
            phantom,
            pool_intrinsics,
            compare_truth,
            truth,
        } => commands::calibrate(
            &session,
            &CalibrateArgs {
                stack,
                phantom,
                out,
                pool_intrinsics,
                compare_truth,
                truth,
            },
        ),
        Command::Reconstruct {
            out,
            stack,
            calibration,
            scenario,
            ideal_trajectory,
            compare_truth,
            dims,
            spacing,
            block,
            window,
        } => commands::reconstruct(
            &session,
            &ReconstructArgs {
                stack,
                calibration,
                scenario,
                out,
                ideal_trajectory,
                compare_truth,
                dims,
                spacing_mm: spacing,
                block_dims: block,
                window,
            },
        ),
        Command::Report { out, calibration } => commands::report(&session, &ReportArgs { calibration, out }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("code={} error=\"{}\"", f.code, f);
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
