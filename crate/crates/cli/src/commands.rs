//! The five pipeline stages. Each reads its inputs from the run directory
//! unless a path is given explicitly, and writes every output through a
//! `.partial` file that is renamed once complete.

use std::fmt;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use fieldct::calibration::{
    calibrate_stack, read_calibration_json, write_calibration_json, write_reprojection_csv, CalibrationConfig,
    CalibrationFile, TrajectoryReport,
};
use fieldct::phantom::{read_phantom, write_phantom, ReferenceVolume};
use fieldct::preprocess::{
    build_defect_map, preprocess_stack, read_reference_frames, write_reference_frames, ProjectionStack, StackKind,
};
use fieldct::rawio::write_atomic;
use fieldct::reconstruction::{central_slice_pgm, filter_stack, reconstruct_blocked, FileSink, VolumeGrid};
use fieldct::simulator::{ideal_view_geometries, random_stuck_pixels, render_raw_scan, Scenario};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_PARSE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_ALL_VIEWS_FAILED: u8 = 4;
pub const EXIT_SINK_FAILURE: u8 = 5;

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

impl From<fieldct::Error> for Failure {
    fn from(e: fieldct::Error) -> Self {
        use fieldct::Error as E;
        let code = match &e {
            E::AllViewsFailed => EXIT_ALL_VIEWS_FAILED,
            E::SinkFailure { .. } => EXIT_SINK_FAILURE,
            E::Io(_) => EXIT_IO,
            E::Format { .. } | E::Json(_) => EXIT_PARSE,
            _ => EXIT_FAILURE,
        };
        Self::new(code, e)
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

trait Context<T> {
    fn context(self, what: impl fmt::Display) -> CmdResult<T>;
}

impl<T, E: Into<Failure>> Context<T> for Result<T, E> {
    fn context(self, what: impl fmt::Display) -> CmdResult<T> {
        self.map_err(|e| {
            let f: Failure = e.into();
            Failure::new(f.code, f.error.context(what.to_string()))
        })
    }
}

fn io_error(e: std::io::Error) -> Failure {
    Failure::new(EXIT_IO, e)
}

/// Settings shared by all commands.
pub struct Session {
    pub config: PipelineConfig,
    pub seed: Option<u64>,
}

impl Session {
    fn run_dir(&self, out: Option<&Path>) -> CmdResult<PathBuf> {
        out.map(Path::to_path_buf)
            .or_else(|| self.config.paths.output_dir.clone())
            .ok_or_else(|| {
                Failure::new(
                    EXIT_PARSE,
                    anyhow::anyhow!("no run directory: pass --out or set paths.output_dir"),
                )
            })
    }

    fn scenario_path(&self, explicit: Option<&Path>, run: &Path) -> PathBuf {
        pick(explicit, &self.config.paths.scenario, || run.join(SCENARIO_FILE))
    }
}

fn pick(explicit: Option<&Path>, configured: &Option<PathBuf>, default: impl FnOnce() -> PathBuf) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| configured.clone())
        .unwrap_or_else(default)
}

const RAW_DIR: &str = "raw";
const STACK_DIR: &str = "proj";
const PHANTOM_FILE: &str = "phantom.json";
const TRUTH_FILE: &str = "truth.json";
const SCENARIO_FILE: &str = "scenario.json";
const CONFIG_FILE: &str = "config.json";
const CALIBRATION_FILE: &str = "calibration.json";
const TRAJECTORY_FILE: &str = "trajectory.csv";
const DEFECT_FILE: &str = "defects.raw";

/// Simulated ground truth of one view.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthView {
    pub view_index: usize,
    pub angle_rad: f64,
    pub source_mm: [f64; 3],
    /// Row-major projection matrix.
    pub matrix: [f64; 12],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub seed: u64,
    pub views: Vec<TruthView>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    write_atomic(path, text.as_bytes()).context(format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir)
        .map_err(io_error)
        .context(format!("creating {}", dir.display()))
}

pub struct SimulateArgs {
    pub scenario: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub noise_off: bool,
    pub defects: Option<usize>,
}

pub fn simulate(s: &Session, a: &SimulateArgs) -> CmdResult {
    let path = a
        .scenario
        .clone()
        .or_else(|| s.config.paths.scenario.clone())
        .ok_or_else(|| Failure::new(EXIT_PARSE, anyhow::anyhow!("no scenario file given")))?;
    // an unreadable scenario is a usage error, like a malformed one
    let mut sc = Scenario::read(&path)
        .map_err(|e| Failure::new(EXIT_PARSE, e))
        .context(format!("reading scenario {}", path.display()))?;
    let run = s.run_dir(a.out.as_deref())?;
    if let Some(seed) = s.seed {
        sc.trajectory.seed = seed;
    }
    if a.noise_off || s.config.simulate.noise_off {
        sc.noise.enabled = false;
    }
    if let Some(n) = a.defects.or(s.config.simulate.defects) {
        sc.defect_count = n;
    }
    let cfg = sc.trajectory;
    log::info!("cmd=simulate views={} width={} height={} seed={}", cfg.n_views, cfg.width, cfg.height, cfg.seed);

    let model = sc.phantom_model()?;
    let ph = sc.analytic_phantom(&model)?;
    let stuck = random_stuck_pixels(cfg.width, cfg.height, sc.defect_count, sc.noise.saturation as f32, sc.defect_seed);
    let raw = render_raw_scan(&ph, &cfg, &sc.noise, &stuck)?;
    log::info!("cmd=simulate stage=rendered frames={}", raw.stack.len());

    create_dir(&run)?;
    let raw_dir = run.join(RAW_DIR);
    raw.stack.write(&raw_dir).context("writing raw stack")?;
    write_reference_frames(&raw_dir, &raw.darks, &raw.flats).context("writing reference frames")?;
    write_phantom(&run.join(PHANTOM_FILE), &model).context("writing phantom")?;
    let truth = TruthFile {
        seed: cfg.seed,
        views: raw
            .views
            .iter()
            .enumerate()
            .map(|(i, v)| TruthView {
                view_index: i,
                angle_rad: v.angle_rad,
                source_mm: v.source_mm.into(),
                matrix: v.matrix.to_row_major(),
            })
            .collect(),
    };
    write_json(&run.join(TRUTH_FILE), &truth)?;
    write_atomic(&run.join(SCENARIO_FILE), sc.to_json().as_bytes()).context("writing scenario")?;

    // a config for the remaining stages of this run
    let mut next = PipelineConfig::default();
    next.paths.output_dir = Some(".".into());
    next.paths.scenario = Some(SCENARIO_FILE.into());
    next.calibration = Some(sc.calibration_config());
    next.preprocess = s.config.preprocess.clone();
    next.reconstruct = s.config.reconstruct.clone();
    write_atomic(&run.join(CONFIG_FILE), next.to_json().as_bytes()).context("writing config")?;

    println!("views={} defects={} seed={}", raw.stack.len(), raw.defects.count(), cfg.seed);
    Ok(())
}

pub struct PreprocessArgs {
    pub raw: Option<PathBuf>,
    pub stack: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub saturation: Option<f32>,
    pub no_defect_map: bool,
    pub no_inpaint: bool,
}

pub fn preprocess(s: &Session, a: &PreprocessArgs) -> CmdResult {
    let run = s.run_dir(a.out.as_deref())?;
    let raw_dir = pick(a.raw.as_deref(), &s.config.paths.raw_dir, || run.join(RAW_DIR));
    let out_dir = pick(a.stack.as_deref(), &s.config.paths.stack_dir, || run.join(STACK_DIR));
    let raw = ProjectionStack::read(&raw_dir).context(format!("reading raw stack {}", raw_dir.display()))?;
    if raw.kind != StackKind::Raw {
        return Err(Failure::new(
            EXIT_PARSE,
            anyhow::anyhow!("{} does not hold raw detector counts", raw_dir.display()),
        ));
    }
    let (darks, flats) = read_reference_frames(&raw_dir, raw.width, raw.height).context("reading reference frames")?;
    let use_map = s.config.preprocess.defect_map && !a.no_defect_map;
    let inpaint = s.config.preprocess.inpaint && !a.no_inpaint;
    let defects = if use_map {
        let saturation = match a.saturation {
            Some(v) => v,
            None => {
                let path = s.scenario_path(None, &run);
                Scenario::read(&path)
                    .context(format!("saturation level unknown: pass --saturation or provide {}", path.display()))?
                    .noise
                    .saturation as f32
            }
        };
        Some(build_defect_map(&darks, &flats, saturation)?)
    } else {
        None
    };
    log::info!(
        "cmd=preprocess views={} defects={} inpaint={inpaint}",
        raw.len(),
        defects.as_ref().map_or(0, |d| d.count())
    );
    let li = preprocess_stack(&raw, &darks, &flats, defects.as_ref(), inpaint)?;
    li.write(&out_dir).context(format!("writing {}", out_dir.display()))?;
    if let Some(d) = &defects {
        d.write(&out_dir.join(DEFECT_FILE)).context("writing defect map")?;
    }
    println!("views={} defects={}", li.len(), defects.map_or(0, |d| d.count()));
    Ok(())
}

pub struct CalibrateArgs {
    pub stack: Option<PathBuf>,
    pub phantom: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub pool_intrinsics: bool,
    pub compare_truth: bool,
    pub truth: Option<PathBuf>,
}

fn calibration_config(s: &Session, run: &Path) -> CmdResult<CalibrationConfig> {
    if let Some(c) = s.config.calibration {
        return Ok(c);
    }
    let path = s.scenario_path(None, run);
    if path.exists() {
        return Ok(Scenario::read(&path).context(format!("reading {}", path.display()))?.calibration_config());
    }
    Ok(CalibrationConfig::default())
}

fn read_line_integrals(dir: &Path) -> CmdResult<ProjectionStack> {
    let stack = ProjectionStack::read(dir).context(format!("reading stack {}", dir.display()))?;
    if stack.kind == StackKind::Raw {
        return Err(Failure::new(
            EXIT_PARSE,
            anyhow::anyhow!("{} holds raw counts; run preprocess first", dir.display()),
        ));
    }
    Ok(stack)
}

pub fn calibrate(s: &Session, a: &CalibrateArgs) -> CmdResult {
    let run = s.run_dir(a.out.as_deref())?;
    let stack_dir = pick(a.stack.as_deref(), &s.config.paths.stack_dir, || run.join(STACK_DIR));
    let phantom_path = pick(a.phantom.as_deref(), &s.config.paths.phantom, || run.join(PHANTOM_FILE));
    let stack = read_line_integrals(&stack_dir)?;
    let phantom = read_phantom(&phantom_path).context(format!("reading phantom {}", phantom_path.display()))?;
    let mut config = calibration_config(s, &run)?;
    if let Some(seed) = s.seed {
        config.ransac.seed = seed;
    }
    config.pool_intrinsics |= a.pool_intrinsics;
    log::info!("cmd=calibrate views={} elements={}", stack.len(), phantom.elements().len());

    let st = calibrate_stack(&stack, &phantom, &config)?;
    for f in st.failed() {
        log::warn!("cmd=calibrate view={} failed=\"{}\"", f.view_index, f.reason);
    }
    let file = CalibrationFile::new(stack.len(), &st.views, st.failed());
    create_dir(&run)?;
    let cal_path = pick(None, &s.config.paths.calibration, || run.join(CALIBRATION_FILE));
    write_calibration_json(&cal_path, &file).context("writing calibration")?;
    st.report.write_csv(&run.join(TRAJECTORY_FILE)).context("writing trajectory")?;
    println!("calibrated={}/{} mean_err_px={:.6}", st.views.len(), stack.len(), st.mean_error());

    if a.compare_truth {
        let truth_path = pick(a.truth.as_deref(), &s.config.paths.truth, || run.join(TRUTH_FILE));
        let text = std::fs::read_to_string(&truth_path)
            .map_err(io_error)
            .context(format!("reading {}", truth_path.display()))?;
        let truth: TruthFile = serde_json::from_str(&text)
            .map_err(|e| Failure::new(EXIT_PARSE, e))
            .context(format!("parsing {}", truth_path.display()))?;
        let mut max_err = 0.0f64;
        for c in &st.views {
            let t = truth.views.iter().find(|t| t.view_index == c.view_index).ok_or_else(|| {
                Failure::new(EXIT_PARSE, anyhow::anyhow!("truth file lacks view {}", c.view_index))
            })?;
            let p = c.matrix.source_position()?;
            let err = (0..3).map(|i| (p[i] - t.source_mm[i]).powi(2)).sum::<f64>().sqrt();
            max_err = max_err.max(err);
        }
        println!("max_source_err_mm={max_err:.6}");
    }
    Ok(())
}

pub struct ReconstructArgs {
    pub stack: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ideal_trajectory: bool,
    pub compare_truth: bool,
    pub dims: Option<Vec<usize>>,
    pub spacing_mm: Option<Vec<f64>>,
    pub block_dims: Option<Vec<usize>>,
    pub window: Option<Vec<f32>>,
}

fn triple<T: Copy>(v: &Option<Vec<T>>, default: [T; 3], name: &str) -> CmdResult<[T; 3]> {
    match v.as_deref() {
        None => Ok(default),
        Some([a]) => Ok([*a; 3]),
        Some([a, b, c]) => Ok([*a, *b, *c]),
        Some(_) => Err(Failure::new(EXIT_PARSE, anyhow::anyhow!("--{name} takes one or three values"))),
    }
}

/// Reads only the central z slice of a raw x-fastest volume.
fn read_central_slice(path: &Path, dims: [usize; 3]) -> std::io::Result<Vec<f32>> {
    let [nx, ny, nz] = dims;
    let mut f = File::open(path)?;
    f.seek(SeekFrom::Start(((nz / 2) * nx * ny * 4) as u64))?;
    let mut bytes = vec![0u8; nx * ny * 4];
    f.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn reconstruct(s: &Session, a: &ReconstructArgs) -> CmdResult {
    let run = s.run_dir(a.out.as_deref())?;
    let rc = &s.config.reconstruct;
    let stack_dir = pick(a.stack.as_deref(), &s.config.paths.stack_dir, || run.join(STACK_DIR));
    let stack = read_line_integrals(&stack_dir)?;
    let ideal = a.ideal_trajectory || rc.ideal_trajectory;
    let scenario_path = s.scenario_path(a.scenario.as_deref(), &run);
    let scenario = || Scenario::read(&scenario_path).context(format!("reading scenario {}", scenario_path.display()));

    let (images, geometries) = if ideal {
        let sc = scenario()?;
        let geo = ideal_view_geometries(&sc.trajectory)?;
        if geo.len() != stack.len() {
            return Err(Failure::new(
                EXIT_PARSE,
                anyhow::anyhow!("scenario has {} views but the stack {}", geo.len(), stack.len()),
            ));
        }
        (stack.views.clone(), geo)
    } else {
        let cal_path = pick(a.calibration.as_deref(), &s.config.paths.calibration, || run.join(CALIBRATION_FILE));
        let file = read_calibration_json(&cal_path).context(format!("reading calibration {}", cal_path.display()))?;
        if file.n_views != stack.len() {
            return Err(Failure::new(
                EXIT_PARSE,
                anyhow::anyhow!("calibration covers {} views but the stack has {}", file.n_views, stack.len()),
            ));
        }
        let mats = file.matrices()?;
        let report = trajectory_report(&file)?;
        let geo = report.view_geometries(&mats);
        let images = report.entries.iter().map(|e| stack.views[e.view_index].clone()).collect();
        (images, geo)
    };
    let grid = VolumeGrid::centered(
        triple(&a.dims, rc.dims, "dims")?,
        triple(&a.spacing_mm, rc.spacing_mm, "spacing")?,
        triple(&a.block_dims, rc.block_dims, "block")?,
    )?;
    let window = match a.window.as_deref() {
        None => rc.window.map(|[lo, hi]| (lo, hi)),
        Some([lo, hi]) => Some((*lo, *hi)),
        Some(_) => return Err(Failure::new(EXIT_PARSE, anyhow::anyhow!("--window takes two values"))),
    };
    log::info!(
        "cmd=reconstruct views={} dims={:?} blocks={} ideal={ideal}",
        images.len(),
        grid.dims,
        grid.n_blocks()
    );

    let filtered = filter_stack(&images, &geometries, stack.pixel_pitch_mm)?;
    drop(images);
    create_dir(&run)?;
    let suffix = if ideal { "_ideal" } else { "" };
    let vol_path = run.join(format!("volume{suffix}.raw"));
    let mut sink = FileSink::create(&vol_path, &grid)
        .map_err(io_error)
        .context(format!("creating {}", vol_path.display()))?;
    let summary = reconstruct_blocked(&filtered, &grid, &mut sink)?;
    let slice = read_central_slice(&vol_path, grid.dims).map_err(io_error).context("reading central slice")?;
    let [nx, ny, _] = grid.dims;
    let pgm = central_slice_pgm(&slice, [nx, ny, 1], window);
    write_atomic(&run.join(format!("slice{suffix}.pgm")), &pgm).context("writing slice")?;
    println!(
        "voxels={} blocks={} min={:.6} max={:.6} mean={:.6e}",
        grid.voxel_count(),
        summary.n_blocks,
        summary.min,
        summary.max,
        summary.mean
    );

    if a.compare_truth {
        let sc = scenario()?;
        let ph = sc.analytic_phantom(&sc.phantom_model()?)?;
        let truth = ph.voxelize(&grid, 2);
        let vol = ReferenceVolume::read(&vol_path)?.voxels;
        let sse: f64 = vol.iter().zip(&truth).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        println!("rmse={:.6e}", (sse / vol.len() as f64).sqrt());
    }
    Ok(())
}

fn trajectory_report(file: &CalibrationFile) -> CmdResult<TrajectoryReport> {
    let sources = file
        .matrices()?
        .iter()
        .map(|(i, m)| Ok((*i, m.source_position()?)))
        .collect::<fieldct::Result<Vec<_>>>()?;
    Ok(TrajectoryReport::from_sources(file.n_views, &sources, file.failed.clone()))
}

pub struct ReportArgs {
    pub calibration: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn report(s: &Session, a: &ReportArgs) -> CmdResult {
    let run = s.run_dir(a.out.as_deref())?;
    let cal_path = pick(a.calibration.as_deref(), &s.config.paths.calibration, || run.join(CALIBRATION_FILE));
    let file = read_calibration_json(&cal_path).context(format!("reading calibration {}", cal_path.display()))?;
    let report = trajectory_report(&file)?;
    let dir = run.join("report");
    create_dir(&dir)?;
    report.write_csv(&dir.join(TRAJECTORY_FILE)).context("writing trajectory")?;
    write_reprojection_csv(&dir.join("reprojection.csv"), &file).context("writing reprojection errors")?;
    let max_residual = report.entries.iter().map(|e| e.circle_residual_mm.abs()).fold(0.0, f64::max);
    println!(
        "rows={} failed={} radius_mm={:.6} max_circle_residual_mm={max_residual:.3e}",
        report.entries.len(),
        report.failed.len(),
        report.radius_mm
    );
    Ok(())
}
