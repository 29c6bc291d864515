//! The `s2s` binary: subcommands for scene simulation, the selection /
//! estimation / linking pipeline, evaluation against truth, and the two
//! calibration experiments. Exit codes: 0 success, 1 runtime failure,
//! 2 configuration or usage failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndarray::Array3;

use s2s_cli::config::Config;
use s2s_cli::io;
use s2s_cli::pipeline::{run_pipeline, Estimator, Linker, PipelineError, PipelineSettings, Stage};
use s2s_core::acaf::Sided;
use s2s_core::rng::substream;
use s2s_core::sim::{
    default_label_map, deformation_ramp, gen_scene, power_experiment, rmse_per_acquisition,
    s_grid_experiment, sigma2_percentile_selfcheck, CoherenceParams, SceneSpec,
};

/// Substream tags for the experiment subcommands; the pipeline uses 1 and
/// scene generation the bare pixel coordinates.
const POWER_STREAM: u64 = 2;
const SGRID_STREAM: u64 = 3;

#[derive(Parser)]
#[command(
    name = "s2s",
    version,
    about = "Distributed-scatterer InSAR toolkit: SSHP selection, robust coherence estimation, phase linking",
    after_help = "CSV schemas: power.csv (tau,p_const,coherence_diff,rejection_rate); \
sgrid.csv (n,xi,s_hat,at_boundary); rmse.csv (acquisition,rmse_rad); \
summary.csv (pixels,failures,mean_sshp_count,mean_coherence); failures.csv (row,col,code)."
)]
struct Cli {
    /// JSON config file; omitted means built-in defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for all random draws
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Window side length (odd)
    #[arg(long, global = true)]
    window: Option<usize>,

    /// Test level for selection and the power experiment
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Phase-linking method: cgg-mle | cfpl | pta
    #[arg(long, global = true)]
    method: Option<String>,

    /// Coherence estimator: cgg | tyler | regscm
    #[arg(long, global = true)]
    estimator: Option<String>,

    /// Worker threads, 0 = one per core (falls back to S2S_THREADS)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Full-scale preset: 30 acquisitions, 300x300 raster, 11x11 window
    #[arg(long, global = true)]
    paper_scale: bool,

    /// Output directory, created if missing
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-class scene: stack plus ground truth
    Simulate,
    /// Run SSHP selection only
    Select {
        /// Stack file (.slc payload with .json sidecar)
        stack: PathBuf,
    },
    /// Run selection and coherence estimation
    Estimate {
        stack: PathBuf,
    },
    /// Run the full chain through phase linking
    Link {
        stack: PathBuf,
    },
    /// Per-acquisition phase RMSE of estimated phases against truth
    Evaluate {
        /// Estimated phase raster (phases.f32)
        estimated: PathBuf,
        /// Truth phase raster (truth_phases.f32)
        truth: PathBuf,
    },
    /// Detection-power curve across decorrelation parameter pairs
    Power {
        /// Test sidedness: right | two (overrides config)
        #[arg(long)]
        sided: Option<String>,
    },
    /// Shape-parameter recovery grid over (N, texture) cells
    Sgrid,
}

enum AppError {
    /// Bad configuration or arguments; nothing was run. Exit 2.
    Validation(String),
    /// Failure while running. Exit 1.
    Runtime(String),
}

impl From<PipelineError> for AppError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Invalid(msg) => AppError::Validation(msg),
            PipelineError::Threads(e) => AppError::Runtime(e.to_string()),
        }
    }
}

impl From<io::FormatError> for AppError {
    fn from(e: io::FormatError) -> Self {
        AppError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(AppError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// Merges config file and flags, validates, and dispatches. Returns the
/// one-line success summary.
fn run(cli: Cli) -> Result<String, AppError> {
    let mut config = match &cli.config {
        Some(path) => Config::from_file(path).map_err(AppError::Validation)?,
        None => Config::default(),
    };

    // preset first, explicit flags afterwards so they win
    if cli.paper_scale {
        config.apply_paper_scale();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(window) = cli.window {
        config.select.window = window;
    }
    if let Some(alpha) = cli.alpha {
        config.select.alpha = alpha;
        config.power.alpha = alpha;
    }
    if let Some(method) = &cli.method {
        config.link.method = method.clone();
    }
    if let Some(estimator) = &cli.estimator {
        config.estimate.estimator = estimator.clone();
    }
    if let Command::Power { sided: Some(s) } = &cli.command {
        config.power.sided = s.clone();
    }
    config.threads = resolve_threads(cli.threads, config.threads)?;

    let problems = config.problems();
    if !problems.is_empty() {
        return Err(AppError::Validation(problems.join("; ")));
    }

    fs::create_dir_all(&cli.out)
        .map_err(|e| AppError::Runtime(format!("{}: {e}", cli.out.display())))?;

    match &cli.command {
        Command::Simulate => cmd_simulate(&config, &cli.out),
        Command::Select { stack } => cmd_pipeline(&config, stack, &cli.out, Stage::Select),
        Command::Estimate { stack } => cmd_pipeline(&config, stack, &cli.out, Stage::Estimate),
        Command::Link { stack } => cmd_pipeline(&config, stack, &cli.out, Stage::Link),
        Command::Evaluate { estimated, truth } => cmd_evaluate(estimated, truth, &cli.out),
        Command::Power { .. } => cmd_power(&config, &cli.out),
        Command::Sgrid => cmd_sgrid(&config, &cli.out),
    }
}

fn resolve_threads(flag: Option<usize>, from_config: usize) -> Result<usize, AppError> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var("S2S_THREADS") {
        Ok(text) => text.parse().map_err(|_| {
            AppError::Validation(format!("S2S_THREADS must be an integer, got {text:?}"))
        }),
        Err(_) => Ok(from_config),
    }
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool, AppError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| AppError::Runtime(e.to_string()))
}

fn cmd_simulate(config: &Config, out: &Path) -> Result<String, AppError> {
    sigma2_percentile_selfcheck::<f64>().map_err(|e| AppError::Runtime(e.to_string()))?;

    let sc = &config.scene;
    let spec = SceneSpec {
        n_acquisitions: sc.n_acquisitions,
        labels: default_label_map(sc.rows, sc.cols),
        classes: sc.classes.iter().map(|c| c.to_params()).collect(),
        dt: sc.dt,
        deformation: deformation_ramp(
            sc.n_acquisitions,
            sc.rows,
            sc.cols,
            sc.ramp_amplitude,
            sc.ramp_coeffs,
        ),
        seed: config.seed,
    };
    let pool = thread_pool(config.threads)?;
    let (stack, truth) = pool
        .install(|| gen_scene(&spec))
        .map_err(|e| AppError::Runtime(e.to_string()))?;

    let provenance = format!(
        "s2s simulate seed {} n {} raster {}x{}",
        config.seed, sc.n_acquisitions, sc.rows, sc.cols
    );
    io::write_stack(&out.join("stack.slc"), &stack, &provenance)?;
    let phases32 = truth.phases.mapv(|v| v as f32);
    io::write_f32_raster(&out.join("truth_phases.f32"), &phases32, &provenance)?;
    let labels32 = truth.labels.mapv(|v| i32::from(v));
    io::write_i32_raster(&out.join("labels.i32"), &labels32, &provenance)?;

    Ok(format!(
        "simulate: {} acquisitions over {}x{}, seed {} -> {}",
        sc.n_acquisitions,
        sc.rows,
        sc.cols,
        config.seed,
        out.display()
    ))
}

fn cmd_pipeline(
    config: &Config,
    stack_path: &Path,
    out: &Path,
    stage: Stage,
) -> Result<String, AppError> {
    let (stack, _header) = io::read_stack(stack_path)?;
    let estimator: Estimator = config
        .estimate
        .estimator
        .parse()
        .map_err(AppError::Validation)?;
    let linker: Linker = config.link.method.parse().map_err(AppError::Validation)?;
    let settings = PipelineSettings {
        window: config.select.window,
        select: config.select.to_core(),
        estimator,
        shrinkage: config.estimate.shrinkage,
        linker,
        seed: config.seed,
        threads: config.threads,
        stage,
    };
    let products = run_pipeline(&stack, &settings)?;

    let (verb, method) = match stage {
        Stage::Select => ("select", String::new()),
        Stage::Estimate => ("estimate", format!(" estimator {estimator}")),
        Stage::Link => ("link", format!(" estimator {estimator} linker {linker}")),
    };
    let provenance = format!(
        "s2s {verb} seed {} window {}{method} stack {}",
        config.seed,
        config.select.window,
        stack_path.display()
    );
    products.write(out, &provenance)?;

    Ok(format!(
        "{verb}: {}x{} pixels, window {},{} {} failures -> {}",
        stack.rows(),
        stack.cols(),
        config.select.window,
        method,
        products.failures(),
        out.display()
    ))
}

fn cmd_evaluate(estimated: &Path, truth: &Path, out: &Path) -> Result<String, AppError> {
    let (est, _) = io::read_f32_raster(estimated)?;
    let (tru, _) = io::read_f32_raster(truth)?;
    let est64: Array3<f64> = est.mapv(f64::from);
    let tru64: Array3<f64> = tru.mapv(f64::from);
    let rmse =
        rmse_per_acquisition(&est64, &tru64).map_err(|e| AppError::Runtime(e.to_string()))?;

    let rows: Vec<String> = rmse
        .iter()
        .enumerate()
        .map(|(a, v)| format!("{a},{v}"))
        .collect();
    io::write_csv(&out.join("rmse.csv"), "acquisition,rmse_rad", &rows)?;

    let mean = rmse.iter().sum::<f64>() / rmse.len() as f64;
    Ok(format!(
        "evaluate: mean RMSE {:.4} rad over {} acquisitions -> {}",
        mean,
        rmse.len(),
        out.join("rmse.csv").display()
    ))
}

fn cmd_power(config: &Config, out: &Path) -> Result<String, AppError> {
    let p = &config.power;
    let sided = match p.sided.as_str() {
        "right" => Sided::Right,
        _ => Sided::Two,
    };
    let grid: Vec<CoherenceParams<f64>> = p
        .het_taus
        .iter()
        .zip(&p.het_p_consts)
        .map(|(&tau, &p_const)| CoherenceParams { tau, p_const })
        .collect();
    let mut rng = substream(config.seed, &[POWER_STREAM]);
    let points = power_experiment(
        p.n_acquisitions,
        p.dt,
        CoherenceParams {
            tau: p.ref_tau,
            p_const: p.ref_p_const,
        },
        &grid,
        p.alpha,
        sided,
        p.trials,
        &mut rng,
    )
    .map_err(|e| AppError::Runtime(e.to_string()))?;

    let rows: Vec<String> = points
        .iter()
        .map(|pt| {
            format!(
                "{},{},{},{}",
                pt.het.tau, pt.het.p_const, pt.coherence_diff, pt.rejection_rate
            )
        })
        .collect();
    io::write_csv(
        &out.join("power.csv"),
        "tau,p_const,coherence_diff,rejection_rate",
        &rows,
    )?;

    Ok(format!(
        "power: {} grid points, {} trials each, alpha {}, {} -> {}",
        points.len(),
        p.trials,
        p.alpha,
        p.sided,
        out.join("power.csv").display()
    ))
}

fn cmd_sgrid(config: &Config, out: &Path) -> Result<String, AppError> {
    let g = &config.sgrid;
    let mut rng = substream(config.seed, &[SGRID_STREAM]);
    let cells = s_grid_experiment(&g.n_list, &g.xi_list, g.samples_per_cell, &mut rng)
        .map_err(|e| AppError::Runtime(e.to_string()))?;

    let rows: Vec<String> = cells
        .iter()
        .map(|c| format!("{},{},{},{}", c.n, c.xi, c.s_hat, c.at_boundary))
        .collect();
    io::write_csv(&out.join("sgrid.csv"), "n,xi,s_hat,at_boundary", &rows)?;

    Ok(format!(
        "sgrid: {} cells, {} samples each -> {}",
        cells.len(),
        g.samples_per_cell,
        out.join("sgrid.csv").display()
    ))
}
