//! Sliding-window execution of select → estimate → link over a stack.
//!
//! Every pixel is processed independently: its clipped window is extracted,
//! the SSHP mask selected, the coherence matrix estimated over the mask,
//! and the phase history linked. Rows run in parallel and are merged by
//! index; each pixel draws from the substream keyed by (seed, row, col),
//! so products are byte-identical for any worker count. Per-pixel failures
//! are recorded in a diagnostics raster and never abort the run.

use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use num_complex::Complex;
use rayon::prelude::*;

use s2s_core::acaf::{select_sshp, SelectConfig, WindowSamples};
use s2s_core::ces::{
    normalize_to_coherence, sample_covariance, shrink_to_identity, tyler_estimate,
    CoherenceMatrix, ShapeMatrix, Shrinkage,
};
use s2s_core::cgg::{estimate_cgg, CggConfig};
use s2s_core::linalg::{CMat, CVec};
use s2s_core::phase_linking::{
    cfpl_phases, cgg_mle_phases, phase_stat, pta_phases, spectral_init, PhaseHistory,
};
use s2s_core::rng::substream;
use s2s_core::stack::SlcStack;
use s2s_core::Error as CoreError;

use crate::io::{self, FormatError};

/// Substream tag distinguishing pipeline selection draws from other
/// consumers of the same seed (scene generation uses bare (row, col)).
const SELECT_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Cgg,
    Tyler,
    RegScm,
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cgg" => Ok(Estimator::Cgg),
            "tyler" => Ok(Estimator::Tyler),
            "regscm" => Ok(Estimator::RegScm),
            other => Err(format!(
                "unknown estimator {other:?}; expected cgg, tyler, or regscm"
            )),
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Cgg => "cgg",
            Estimator::Tyler => "tyler",
            Estimator::RegScm => "regscm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linker {
    CggMle,
    Cfpl,
    Pta,
}

impl FromStr for Linker {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cgg-mle" => Ok(Linker::CggMle),
            "cfpl" => Ok(Linker::Cfpl),
            "pta" => Ok(Linker::Pta),
            other => Err(format!(
                "unknown linker {other:?}; expected cgg-mle, cfpl, or pta"
            )),
        }
    }
}

impl std::fmt::Display for Linker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Linker::CggMle => "cgg-mle",
            Linker::Cfpl => "cfpl",
            Linker::Pta => "pta",
        })
    }
}

/// How far down the chain to run; later stages imply the earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Select,
    Estimate,
    Link,
}

#[derive(Debug, Clone)]
pub struct PipelineSettings {
    /// Window side length; odd. 1 degenerates to the pixel itself.
    pub window: usize,
    pub select: SelectConfig<f64>,
    pub estimator: Estimator,
    /// Fixed shrinkage weight for the regularized SCM; data-driven when
    /// absent. Ignored by the other estimators, which regularize
    /// internally.
    pub shrinkage: Option<f64>,
    pub linker: Linker,
    pub seed: u64,
    /// Worker threads; 0 means one per available core.
    pub threads: usize,
    pub stage: Stage,
}

/// Per-pixel diagnostics codes. Zero is success; nonzero names the first
/// stage that failed, and every later product of that pixel is NaN.
pub mod diag {
    pub const OK: i32 = 0;
    pub const SELECT_FAILED: i32 = 1;
    pub const ESTIMATE_FAILED: i32 = 2;
    pub const LINK_FAILED: i32 = 3;
    pub const PHASE_STAT_FAILED: i32 = 4;
}

/// Raster products of one run. All rasters share (rows, cols); the phase
/// cube carries one plane per acquisition. Stages not reached are None
/// (phases, phase_stat) or NaN-filled (s_map for non-CGG estimators).
#[derive(Debug, Clone)]
pub struct ProductSet {
    pub sshp_count: Array2<i32>,
    pub mean_coherence: Array2<f32>,
    pub s_map: Array2<f32>,
    pub phases: Option<Array3<f32>>,
    pub phase_stat: Option<Array2<f32>>,
    pub diagnostics: Array2<i32>,
}

struct PixelOut {
    count: i32,
    mean_coherence: f32,
    s: f32,
    theta: Option<Vec<f32>>,
    stat: f32,
    diag: i32,
}

impl PixelOut {
    fn failed(code: i32) -> Self {
        PixelOut {
            count: 0,
            mean_coherence: f32::NAN,
            s: f32::NAN,
            theta: None,
            stat: f32::NAN,
            diag: code,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline settings: {0}")]
    Invalid(String),
    #[error("thread pool: {0}")]
    Threads(#[from] rayon::ThreadPoolBuildError),
}

fn estimate_gamma(
    samples: &[CVec<f64>],
    settings: &PipelineSettings,
) -> Result<(CoherenceMatrix<f64>, Option<f64>), CoreError<f64>> {
    match settings.estimator {
        Estimator::Cgg => {
            let fit = estimate_cgg(samples, &CggConfig::default())?;
            let gamma = normalize_to_coherence(&fit.scatter)?;
            Ok((gamma, Some(fit.s)))
        }
        Estimator::Tyler => {
            let sigma = match tyler_estimate(samples, &settings.select.tyler) {
                Ok(s) => s,
                // a loose fixed point is still a usable scatter here
                Err(CoreError::NoConvergence { last, .. }) => ShapeMatrix::new(*last)?,
                Err(e) => return Err(e),
            };
            Ok((normalize_to_coherence(sigma.matrix())?, None))
        }
        Estimator::RegScm => {
            let scm = sample_covariance(samples)?;
            let how = match settings.shrinkage {
                Some(w) => Shrinkage::Fixed(w),
                None => Shrinkage::Auto {
                    n_samples: samples.len(),
                },
            };
            let (shrunk, _rho) = shrink_to_identity(&scm, how)?;
            Ok((normalize_to_coherence(&shrunk)?, None))
        }
    }
}

fn link_phases(
    samples: &[CVec<f64>],
    gamma: &CoherenceMatrix<f64>,
    s: Option<f64>,
    linker: Linker,
) -> Result<PhaseHistory<f64>, CoreError<f64>> {
    match linker {
        Linker::Cfpl => Ok(cfpl_phases(gamma)?.phases),
        Linker::Pta => Ok(pta_phases(gamma)?.phases),
        Linker::CggMle => {
            let gm = gamma.matrix();
            let n = gm.nrows();
            let mut g = CMat::<f64>::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    g[(i, j)] = Complex::new(gm[(i, j)].norm(), 0.0);
                }
            }
            let init = spectral_init(gm)?;
            let s = s.ok_or_else(|| {
                CoreError::InvalidArgument(
                    "cgg-mle linking needs the fitted shape parameter".into(),
                )
            })?;
            Ok(cgg_mle_phases(samples, &g, s, &init)?.phases)
        }
    }
}

fn process_pixel(stack: &SlcStack<f64>, row: usize, col: usize, settings: &PipelineSettings) -> PixelOut {
    let (vectors, layout) = stack.window(row, col, settings.window);
    let ws = match WindowSamples::new(vectors, layout) {
        Ok(w) => w,
        Err(_) => return PixelOut::failed(diag::SELECT_FAILED),
    };
    let mut rng = substream(settings.seed, &[SELECT_STREAM, row as u64, col as u64]);
    let sel = match select_sshp(&ws, &settings.select, &mut rng) {
        Ok(s) => s,
        Err(_) => return PixelOut::failed(diag::SELECT_FAILED),
    };

    let mut out = PixelOut {
        count: sel.mask.final_size as i32,
        mean_coherence: sel
            .mean_coherence
            .map(|v| v as f32)
            .unwrap_or(f32::NAN),
        s: f32::NAN,
        theta: None,
        stat: f32::NAN,
        diag: diag::OK,
    };
    if settings.stage == Stage::Select {
        return out;
    }

    let samples: Vec<CVec<f64>> = ws
        .vectors()
        .iter()
        .zip(&sel.mask.selected)
        .filter(|(_, &keep)| keep)
        .map(|(z, _)| z.clone())
        .collect();
    let (gamma, s_hat) = match estimate_gamma(&samples, settings) {
        Ok(pair) => pair,
        Err(_) => {
            out.diag = diag::ESTIMATE_FAILED;
            return out;
        }
    };
    // estimation-stage coherence supersedes the selection-stage value
    out.mean_coherence = gamma.mean_upper_magnitude() as f32;
    out.s = s_hat.map(|v| v as f32).unwrap_or(f32::NAN);
    if settings.stage == Stage::Estimate {
        return out;
    }

    let theta = match link_phases(&samples, &gamma, s_hat, settings.linker) {
        Ok(t) => t,
        Err(_) => {
            out.diag = diag::LINK_FAILED;
            return out;
        }
    };
    out.theta = Some(theta.as_slice().iter().map(|&v| v as f32).collect());
    match phase_stat(&ws.vectors()[ws.ref_index()], &theta) {
        Ok(v) => out.stat = v as f32,
        Err(_) => out.diag = diag::PHASE_STAT_FAILED,
    }
    out
}

fn validate(stack: &SlcStack<f64>, settings: &PipelineSettings) -> Result<(), PipelineError> {
    let mut problems = Vec::new();
    if settings.window % 2 == 0 {
        problems.push(format!("window must be odd, got {}", settings.window));
    }
    if settings.window == 0 {
        problems.push("window must be at least 1".to_string());
    }
    if stack.n_acquisitions() < 2 {
        problems.push(format!(
            "stack needs at least 2 acquisitions, got {}",
            stack.n_acquisitions()
        ));
    }
    if stack.rows() == 0 || stack.cols() == 0 {
        problems.push("stack raster is empty".to_string());
    }
    if settings.linker == Linker::CggMle
        && settings.estimator != Estimator::Cgg
        && settings.stage == Stage::Link
    {
        problems.push(format!(
            "cgg-mle linking requires the cgg estimator, got {}",
            settings.estimator
        ));
    }
    if let Some(w) = settings.shrinkage {
        if !(0.0..1.0).contains(&w) {
            problems.push(format!("shrinkage must lie in [0, 1), got {w}"));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::Invalid(problems.join("; ")))
    }
}

/// Runs the configured stages over every pixel of the stack.
pub fn run_pipeline(
    stack: &SlcStack<f64>,
    settings: &PipelineSettings,
) -> Result<ProductSet, PipelineError> {
    validate(stack, settings)?;
    let (n, rows, cols) = stack.data.dim();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.threads)
        .build()?;
    let row_outputs: Vec<Vec<PixelOut>> = pool.install(|| {
        (0..rows)
            .into_par_iter()
            .map(|r| {
                (0..cols)
                    .map(|c| process_pixel(stack, r, c, settings))
                    .collect()
            })
            .collect()
    });

    let mut products = ProductSet {
        sshp_count: Array2::zeros((rows, cols)),
        mean_coherence: Array2::from_elem((rows, cols), f32::NAN),
        s_map: Array2::from_elem((rows, cols), f32::NAN),
        phases: (settings.stage == Stage::Link)
            .then(|| Array3::from_elem((n, rows, cols), f32::NAN)),
        phase_stat: (settings.stage == Stage::Link)
            .then(|| Array2::from_elem((rows, cols), f32::NAN)),
        diagnostics: Array2::zeros((rows, cols)),
    };
    for (r, row) in row_outputs.into_iter().enumerate() {
        for (c, px) in row.into_iter().enumerate() {
            products.sshp_count[(r, c)] = px.count;
            products.mean_coherence[(r, c)] = px.mean_coherence;
            products.s_map[(r, c)] = px.s;
            products.diagnostics[(r, c)] = px.diag;
            if let (Some(cube), Some(theta)) = (products.phases.as_mut(), px.theta.as_ref()) {
                for (a, &v) in theta.iter().enumerate() {
                    cube[(a, r, c)] = v;
                }
            }
            if let Some(stat) = products.phase_stat.as_mut() {
                stat[(r, c)] = px.stat;
            }
        }
    }
    Ok(products)
}

impl ProductSet {
    /// Count of pixels with a nonzero diagnostics code.
    pub fn failures(&self) -> usize {
        self.diagnostics.iter().filter(|&&d| d != diag::OK).count()
    }

    /// Writes every raster product plus summary and failure CSVs.
    pub fn write(&self, dir: &Path, provenance: &str) -> Result<(), FormatError> {
        io::write_i32_raster(&dir.join("sshp_count.i32"), &self.sshp_count, provenance)?;
        io::write_f32_map(
            &dir.join("mean_coherence.f32"),
            &self.mean_coherence,
            provenance,
        )?;
        io::write_f32_map(&dir.join("s_map.f32"), &self.s_map, provenance)?;
        io::write_i32_raster(&dir.join("diagnostics.i32"), &self.diagnostics, provenance)?;
        if let Some(cube) = &self.phases {
            io::write_f32_raster(&dir.join("phases.f32"), cube, provenance)?;
        }
        if let Some(stat) = &self.phase_stat {
            io::write_f32_map(&dir.join("phase_stat.f32"), stat, provenance)?;
        }

        let (rows, cols) = self.sshp_count.dim();
        let pixels = rows * cols;
        let mean_count =
            self.sshp_count.iter().map(|&v| v as f64).sum::<f64>() / pixels as f64;
        let finite_coh: Vec<f64> = self
            .mean_coherence
            .iter()
            .filter(|v| v.is_finite())
            .map(|&v| v as f64)
            .collect();
        let mean_coh = if finite_coh.is_empty() {
            f64::NAN
        } else {
            finite_coh.iter().sum::<f64>() / finite_coh.len() as f64
        };
        io::write_csv(
            &dir.join("summary.csv"),
            "pixels,failures,mean_sshp_count,mean_coherence",
            &[format!(
                "{pixels},{},{mean_count},{mean_coh}",
                self.failures()
            )],
        )?;

        let mut failure_rows = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let code = self.diagnostics[(r, c)];
                if code != diag::OK {
                    failure_rows.push(format!("{r},{c},{code}"));
                }
            }
        }
        io::write_csv(&dir.join("failures.csv"), "row,col,code", &failure_rows)
    }
}
