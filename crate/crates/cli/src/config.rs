//! Run configuration: JSON file plus command-line overrides.
//!
//! Every section has complete defaults, so an empty config file (or none at
//! all) describes the standard desk-scale run. Unknown keys are rejected to
//! catch typos early. Validation collects every problem before reporting.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use s2s_core::acaf::SelectConfig;
use s2s_core::sim::{default_classes, ClassParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Worker threads; 0 means one per available core.
    pub threads: usize,
    pub scene: SceneSection,
    pub select: SelectSection,
    pub estimate: EstimateSection,
    pub link: LinkSection,
    pub power: PowerSection,
    pub sgrid: SgridSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            threads: 0,
            scene: SceneSection::default(),
            select: SelectSection::default(),
            estimate: EstimateSection::default(),
            link: LinkSection::default(),
            power: PowerSection::default(),
            sgrid: SgridSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub n_acquisitions: usize,
    pub rows: usize,
    pub cols: usize,
    /// Acquisition spacing in the same unit as the class tau values.
    pub dt: f64,
    pub classes: Vec<ClassSection>,
    pub ramp_amplitude: f64,
    pub ramp_coeffs: [f64; 4],
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection {
            n_acquisitions: 20,
            rows: 100,
            cols: 100,
            dt: 1.0,
            classes: default_classes::<f64>()
                .iter()
                .map(ClassSection::from_params)
                .collect(),
            ramp_amplitude: 4.0 * std::f64::consts::PI,
            ramp_coeffs: [0.5, 0.3, 0.0, 0.2],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSection {
    pub tau: f64,
    pub p_const: f64,
    pub xi: f64,
    pub sigma2: f64,
}

impl ClassSection {
    fn from_params(p: &ClassParams<f64>) -> Self {
        ClassSection {
            tau: p.tau,
            p_const: p.p_const,
            xi: p.xi,
            sigma2: p.sigma2,
        }
    }

    pub fn to_params(&self) -> ClassParams<f64> {
        ClassParams {
            tau: self.tau,
            p_const: self.p_const,
            xi: self.xi,
            sigma2: self.sigma2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    /// Window side length; must be odd.
    pub window: usize,
    pub alpha: f64,
    pub n_draws: usize,
    pub max_lag: usize,
    pub k_max: usize,
    pub refine_epsilon: f64,
    pub coherence_floor: f64,
    pub aux_side: usize,
}

impl Default for SelectSection {
    fn default() -> Self {
        let c = SelectConfig::<f64>::default();
        SelectSection {
            window: 9,
            alpha: c.alpha,
            n_draws: c.n_draws,
            max_lag: c.max_lag,
            k_max: c.k_max,
            refine_epsilon: c.refine_epsilon,
            coherence_floor: c.coherence_floor,
            aux_side: c.aux_side,
        }
    }
}

impl SelectSection {
    pub fn to_core(&self) -> SelectConfig<f64> {
        SelectConfig {
            alpha: self.alpha,
            n_draws: self.n_draws,
            max_lag: self.max_lag,
            k_max: self.k_max,
            refine_epsilon: self.refine_epsilon,
            coherence_floor: self.coherence_floor,
            aux_side: self.aux_side,
            ..SelectConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    /// One of "cgg", "tyler", "regscm".
    pub estimator: String,
    /// Fixed shrinkage weight in [0, 1); absent means data-driven.
    pub shrinkage: Option<f64>,
}

impl Default for EstimateSection {
    fn default() -> Self {
        EstimateSection {
            estimator: "cgg".to_string(),
            shrinkage: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    /// One of "cgg-mle", "cfpl", "pta".
    pub method: String,
}

impl Default for LinkSection {
    fn default() -> Self {
        LinkSection {
            method: "cfpl".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerSection {
    pub n_acquisitions: usize,
    pub dt: f64,
    pub ref_tau: f64,
    pub ref_p_const: f64,
    /// Heterogeneous-class tau values, paired elementwise with
    /// `het_p_consts` to form one series of alternatives.
    pub het_taus: Vec<f64>,
    pub het_p_consts: Vec<f64>,
    pub alpha: f64,
    /// "right" or "two"; the right-sided test is the operating default.
    pub sided: String,
    pub trials: usize,
}

impl Default for PowerSection {
    fn default() -> Self {
        PowerSection {
            n_acquisitions: 20,
            dt: 1.0,
            ref_tau: 20.0,
            ref_p_const: 0.3,
            het_taus: vec![1.0, 2.0, 4.0, 8.0, 12.0, 16.0, 20.0],
            het_p_consts: vec![0.1, 0.13, 0.17, 0.21, 0.25, 0.28, 0.3],
            alpha: 0.05,
            sided: "right".to_string(),
            trials: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgridSection {
    pub n_list: Vec<usize>,
    pub xi_list: Vec<f64>,
    pub samples_per_cell: usize,
}

impl Default for SgridSection {
    fn default() -> Self {
        SgridSection {
            n_list: vec![5, 10, 20, 30],
            xi_list: vec![0.0, 0.3, 0.6],
            samples_per_cell: 10_000,
        }
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Collects every validation problem; an empty list means usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.scene.n_acquisitions < 2 {
            out.push(format!(
                "scene.n_acquisitions must be at least 2, got {}",
                self.scene.n_acquisitions
            ));
        }
        if self.scene.rows == 0 || self.scene.cols == 0 {
            out.push(format!(
                "scene geometry must be nonzero, got {}x{}",
                self.scene.rows, self.scene.cols
            ));
        }
        if !(self.scene.dt > 0.0) {
            out.push(format!("scene.dt must be positive, got {}", self.scene.dt));
        }
        if self.scene.classes.is_empty() {
            out.push("scene.classes must not be empty".to_string());
        }
        for (i, class) in self.scene.classes.iter().enumerate() {
            for p in class.to_params().problems() {
                out.push(format!("scene.classes[{i}]: {p}"));
            }
        }
        if self.select.window % 2 == 0 || self.select.window < 3 {
            out.push(format!(
                "select.window must be odd and at least 3, got {}",
                self.select.window
            ));
        }
        if !(self.select.alpha > 0.0 && self.select.alpha < 1.0) {
            out.push(format!(
                "select.alpha must lie in (0, 1), got {}",
                self.select.alpha
            ));
        }
        if self.select.n_draws < 100 {
            out.push(format!(
                "select.n_draws must be at least 100, got {}",
                self.select.n_draws
            ));
        }
        match self.estimate.estimator.as_str() {
            "cgg" | "tyler" | "regscm" => {}
            other => out.push(format!(
                "estimate.estimator must be one of cgg, tyler, regscm; got {other:?}"
            )),
        }
        if let Some(w) = self.estimate.shrinkage {
            if !(0.0..1.0).contains(&w) {
                out.push(format!(
                    "estimate.shrinkage must lie in [0, 1), got {w}"
                ));
            }
        }
        match self.link.method.as_str() {
            "cgg-mle" | "cfpl" | "pta" => {}
            other => out.push(format!(
                "link.method must be one of cgg-mle, cfpl, pta; got {other:?}"
            )),
        }
        if self.link.method == "cgg-mle" && self.estimate.estimator != "cgg" {
            out.push(format!(
                "link.method \"cgg-mle\" requires estimate.estimator \"cgg\", got {:?}",
                self.estimate.estimator
            ));
        }
        if self.power.het_taus.len() != self.power.het_p_consts.len() {
            out.push(format!(
                "power.het_taus and power.het_p_consts must pair up elementwise, got lengths {} and {}",
                self.power.het_taus.len(),
                self.power.het_p_consts.len()
            ));
        }
        if self.power.het_taus.is_empty() {
            out.push("power.het_taus must not be empty".to_string());
        }
        if self.power.n_acquisitions < 2 {
            out.push(format!(
                "power.n_acquisitions must be at least 2, got {}",
                self.power.n_acquisitions
            ));
        }
        if !(self.power.alpha > 0.0 && self.power.alpha < 1.0) {
            out.push(format!(
                "power.alpha must lie in (0, 1), got {}",
                self.power.alpha
            ));
        }
        match self.power.sided.as_str() {
            "right" | "two" => {}
            other => out.push(format!(
                "power.sided must be \"right\" or \"two\", got {other:?}"
            )),
        }
        if self.power.trials < 1000 {
            out.push(format!(
                "power.trials must be at least 1000, got {}",
                self.power.trials
            ));
        }
        if self.sgrid.n_list.is_empty() || self.sgrid.xi_list.is_empty() {
            out.push("sgrid.n_list and sgrid.xi_list must not be empty".to_string());
        }
        if self.sgrid.n_list.iter().any(|&n| n < 2) {
            out.push("sgrid.n_list entries must be at least 2".to_string());
        }
        if self.sgrid.samples_per_cell < 100 {
            out.push(format!(
                "sgrid.samples_per_cell must be at least 100, got {}",
                self.sgrid.samples_per_cell
            ));
        }
        out
    }

    /// Switches scene and window to the large-raster preset. Applied before
    /// explicit flag overrides so --window etc. still win.
    pub fn apply_paper_scale(&mut self) {
        self.scene.n_acquisitions = 30;
        self.scene.rows = 300;
        self.scene.cols = 300;
        self.select.window = 11;
    }
}
