//! `lftomo`: phantom generation, camera rendering, reconstruction and
//! comparison on raw f32 files with JSON sidecars.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use lftomo_core::config::{BuiltinCamera, CameraConfig, CameraRef, GridConfig, InitConfig, ReconConfig};
use lftomo_core::io::{self, ImageMeta};
use lftomo_core::metrics;
use lftomo_core::phantom::{rasterize, PhantomSpec, Shape};
use lftomo_core::recon::{absorb_weights, fista_run, FistaOptions, IdentityOp, LinearOp, ReconProblem};
use lftomo_core::selftest::{run_selftest, Fault, SelftestOptions};
use lftomo_core::system::SystemOperator;
use lftomo_core::volume::{VolumeGrid, VoxelVolume};

#[derive(Parser)]
#[command(name = "lftomo", version, about = "Light-field camera rendering and multi-camera volume reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run every operator on one thread.
    #[arg(long, global = true)]
    serial: bool,
    /// Seed for commands that draw random numbers.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write machine-readable records (JSON lines) to this file.
    #[arg(long, global = true)]
    log_json: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a phantom description onto a voxel grid.
    Phantom {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// 8-bit PGM of the middle z slice.
        #[arg(long)]
        preview: Option<PathBuf>,
    },
    /// Render a volume through one posed camera.
    Render {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        preview: Option<PathBuf>,
    },
    /// Reconstruct a volume from one or more camera images.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the output path in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ground truth volume; reports the final NRMSE.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Normalized squared difference between two raw files.
    Compare {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Nsd)]
        metric: Metric,
    },
    /// Adjoint, dense-oracle, majorizer and rotation checks on tiny setups.
    Selftest {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Test hook: perturb one transport kernel.
        #[arg(long, hide = true)]
        corrupt_kernel: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Metric {
    Nsd,
    Nrmse,
}

#[derive(Deserialize)]
struct PhantomConfig {
    grid: GridConfig,
    /// Adds the built-in pronged object scaled to the grid.
    #[serde(default)]
    pronged: bool,
    #[serde(default)]
    shapes: Vec<Shape>,
    #[serde(default = "default_supersample")]
    supersample: usize,
}

fn default_supersample() -> usize {
    2
}

/// Failure after the inputs were accepted.
#[derive(Debug)]
struct NumericalFailure(String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn grid_of(g: &GridConfig) -> Result<VolumeGrid> {
    Ok(VolumeGrid::new([g.n_x, g.n_y, g.n_z], [g.delta_x_mm, g.delta_y_mm, g.delta_z_mm])?)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parent_of(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

struct JsonLog(Option<fs::File>);

impl JsonLog {
    fn open(path: Option<&Path>) -> Result<Self> {
        Ok(JsonLog(match path {
            Some(p) => Some(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
            None => None,
        }))
    }

    fn record<T: Serialize>(&mut self, value: &T) -> Result<()> {
        if let Some(f) = &mut self.0 {
            serde_json::to_writer(&mut *f, value)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn cmd_phantom(config: &Path, out: &Path, preview: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: PhantomConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    let grid = grid_of(&cfg.grid)?;
    let mut spec = PhantomSpec { shapes: cfg.shapes, supersample: cfg.supersample };
    if cfg.pronged {
        spec.shapes.extend(PhantomSpec::pronged_for(&grid).shapes);
    }
    let vol = rasterize(&spec, &grid)?;
    io::save_volume(out, &vol)?;
    if let Some(p) = preview {
        io::write_pgm(p, vol.slice(grid.n[2] / 2), grid.n[0], grid.n[1])?;
    }
    println!("phantom {}x{}x{} written to {}", grid.n[0], grid.n[1], grid.n[2], out.display());
    Ok(())
}

fn cmd_render(config: &Path, volume: &Path, out: &Path, preview: Option<&Path>) -> Result<()> {
    let cfg = CameraConfig::load(config)?;
    let vol = io::load_volume(volume)?;
    let op = SystemOperator::from_config(&cfg, vol.grid)?;
    let y = op.forward(&vol.data)?;
    let meta = ImageMeta { n_s: cfg.detector.n_s, n_t: cfg.detector.n_t, pitch_mm: cfg.detector.pitch_mm };
    io::save_image(out, &meta, &y)?;
    if let Some(p) = preview {
        io::write_pgm(p, &y, meta.n_s, meta.n_t)?;
    }
    println!("image {}x{} written to {}", meta.n_s, meta.n_t, out.display());
    Ok(())
}

fn camera_op(cam: &CameraRef, pose: Option<lftomo_core::config::Pose>, base: &Path, grid: VolumeGrid) -> Result<Box<dyn LinearOp>> {
    let cfg = match cam {
        CameraRef::Builtin(BuiltinCamera::Identity) => return Ok(Box::new(IdentityOp { n: grid.len() })),
        CameraRef::Inline(c) => (**c).clone(),
        CameraRef::Path(p) => CameraConfig::load(&resolve(base, p))?,
    };
    let mut cfg = cfg;
    if let Some(p) = pose {
        cfg.pose = p;
    }
    Ok(Box::new(SystemOperator::from_config(&cfg, grid)?))
}

#[derive(Serialize)]
struct ReconSummary {
    output: PathBuf,
    iters: usize,
    cost: f64,
    gains: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nrmse: Option<f64>,
}

fn cmd_reconstruct(config: &Path, out: Option<&Path>, truth: Option<&Path>, log: &mut JsonLog) -> Result<()> {
    let cfg = ReconConfig::load(config)?;
    let base = parent_of(config);
    let grid = grid_of(&cfg.grid)?;
    let mut cams = Vec::with_capacity(cfg.cameras.len());
    for (c, rc) in cfg.cameras.iter().enumerate() {
        let op = camera_op(&rc.camera, rc.pose, &base, grid).with_context(|| format!("camera {c}"))?;
        let data = io::read_raw_f32(&resolve(&base, &rc.data_path))?;
        let weights = match &rc.weights_path {
            Some(p) => Some(io::read_raw_f32(&resolve(&base, p))?),
            None => None,
        };
        cams.push(absorb_weights(op, &data, weights.as_deref()).with_context(|| format!("camera {c}"))?);
    }
    let init = match &cfg.init {
        InitConfig::Constant(v) => vec![*v; grid.len()],
        InitConfig::Path(p) => {
            let v = io::load_volume(&resolve(&base, p))?;
            if v.grid != grid {
                bail!("initial volume grid does not match the reconstruction grid");
            }
            v.data
        }
    };
    let problem = ReconProblem::new(cams, grid, cfg.beta, cfg.nu, cfg.n_subset)?;
    let every = cfg.log_every.max(1);
    let mut log_err = None;
    let state = fista_run(&problem, init, &FistaOptions { iters: cfg.iters, ..Default::default() }, &mut |r| {
        if r.iter % every == 0 || r.iter == cfg.iters {
            eprintln!("iter {:>5} cost {:.6e} grad {:.3e} {:.1}s", r.iter, r.cost, r.grad_norm, r.seconds);
            if let Err(e) = log.record(&serde_json::json!({
                "iter": r.iter,
                "cost": r.cost,
                "gains": r.gains,
                "grad_norm": r.grad_norm,
                "seconds": r.seconds,
            })) {
                log_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    let output = match out {
        Some(p) => p.to_path_buf(),
        None => resolve(&base, &cfg.output_path),
    };
    let vol = VoxelVolume::from_data(grid, state.x)?;
    io::save_volume(&output, &vol)?;
    let nrmse = match truth {
        Some(p) => Some(metrics::nrmse(&io::load_volume(p)?.data, &vol.data)?),
        None => None,
    };
    let cost = state.history.last().map(|h| h.cost).unwrap_or(f64::NAN);
    if !cost.is_finite() && cfg.iters > 0 {
        return Err(NumericalFailure(format!("final cost {cost}")).into());
    }
    let summary = ReconSummary { output, iters: cfg.iters, cost, gains: state.gains, nrmse };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

/// Sidecars must agree when both files have one.
fn check_shapes(a: &Path, b: &Path) -> Result<()> {
    let read = |p: &Path| -> Result<Option<serde_json::Value>> {
        let side = io::sidecar_path(p);
        if !side.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&side)?;
        Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", side.display()))?))
    };
    if let (Some(x), Some(y)) = (read(a)?, read(b)?) {
        if x != y {
            bail!("shape mismatch: {} has {x}, {} has {y}", a.display(), b.display());
        }
    }
    Ok(())
}

fn cmd_compare(reference: &Path, test: &Path, metric: Metric, log: &mut JsonLog) -> Result<()> {
    check_shapes(reference, test)?;
    let r = io::read_raw_f32(reference)?;
    let t = io::read_raw_f32(test)?;
    if r.len() != t.len() {
        bail!("shape mismatch: {} values vs {}", r.len(), t.len());
    }
    let value = match metric {
        Metric::Nsd => metrics::nsd(&r, &t)?,
        Metric::Nrmse => metrics::nrmse(&r, &t)?,
    };
    let record = serde_json::json!({ "metric": metric, "value": value });
    println!("{}", record);
    log.record(&record)?;
    Ok(())
}

fn cmd_selftest(seeds: u64, seed: u64, corrupt: bool, log: &mut JsonLog) -> Result<()> {
    let fault = if corrupt { Fault::CorruptKernel } else { Fault::None };
    let report = run_selftest(&SelftestOptions { seeds, base_seed: seed, fault })?;
    print!("{report}");
    for c in &report.checks {
        log.record(c)?;
    }
    if !report.all_passed() {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(NumericalFailure(format!("self-test failed: {}", failed.join(", "))).into());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut log = JsonLog::open(cli.log_json.as_deref())?;
    match cli.command {
        Command::Phantom { config, out, preview } => cmd_phantom(&config, &out, preview.as_deref()),
        Command::Render { config, volume, out, preview } => cmd_render(&config, &volume, &out, preview.as_deref()),
        Command::Reconstruct { config, out, truth } => cmd_reconstruct(&config, out.as_deref(), truth.as_deref(), &mut log),
        Command::Compare { reference, test, metric } => cmd_compare(&reference, &test, metric, &mut log),
        Command::Selftest { seeds, corrupt_kernel } => cmd_selftest(seeds, cli.seed, corrupt_kernel, &mut log),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        e.downcast_ref::<NumericalFailure>().is_some()
            || matches!(e.downcast_ref::<lftomo_core::Error>(), Some(lftomo_core::Error::Numerical(_)))
    });
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.serial {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
