//! TOML run configuration. Every key is optional; an empty file gives the
//! published operating point.
//!
//! ```toml
//! [spin]
//! g = 2.0
//! D = 317.0
//! D_strain_fwhm = 150.0
//! populations = { plus = 0.025, zero = 0.95, minus = 0.025 }
//!
//! [experiment]
//! mw_freq = 9.7
//! field_Z = "auto"
//! field_Int = 340.0
//! field_XY = "auto"
//! tau = 2.0
//! E = 1.5e6
//! geometry = "both"
//!
//! [sec]
//! kappa = 0.59
//! sigma_kappa = 0.15
//!
//! [paths]
//! inputs = ["data"]
//! output_dir = "out"
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fit::{FitModel, FitOptions};
use crate::powder::{FieldPosition, FieldWindow};
use crate::sec::{FieldGeometry, SecParams, ShiftModel};
use crate::spin::{Populations, SpinSystem};
use crate::{Error, Numerics, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub spin: SpinConfig,
    pub experiment: ExperimentConfig,
    pub numerics: NumericsConfig,
    pub sec: SecConfig,
    pub fit: FitConfig,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpinConfig {
    pub g: f64,
    #[serde(rename = "D")]
    pub d: f64,
    /// Gaussian FWHM of the D distribution, MHz.
    #[serde(rename = "D_strain_fwhm")]
    pub d_strain_fwhm: f64,
    pub populations: PopulationsConfig,
}

impl Default for SpinConfig {
    fn default() -> Self {
        let s = SpinSystem::default();
        Self { g: s.g, d: s.d, d_strain_fwhm: s.d_strain_fwhm, populations: PopulationsConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationsConfig {
    pub plus: f64,
    pub zero: f64,
    pub minus: f64,
}

impl Default for PopulationsConfig {
    fn default() -> Self {
        let p = Populations::default();
        Self { plus: p.plus, zero: p.zero, minus: p.minus }
    }
}

/// A field in mT or `"auto"` (taken from the simulated spectrum).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSetting {
    Field(f64),
    Auto(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

impl FieldSetting {
    pub const AUTO: FieldSetting = FieldSetting::Auto(AutoKeyword::Auto);

    pub fn value(&self) -> Option<f64> {
        match self {
            FieldSetting::Field(b) => Some(*b),
            FieldSetting::Auto(_) => None,
        }
    }
}

impl fmt::Display for FieldSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldSetting::Field(b) => write!(f, "{b}"),
            FieldSetting::Auto(_) => f.write_str("auto"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometrySetting {
    #[serde(alias = "parallel")]
    Par,
    #[serde(alias = "perpendicular")]
    Perp,
    Both,
}

impl GeometrySetting {
    pub fn geometries(&self) -> Vec<FieldGeometry> {
        match self {
            GeometrySetting::Par => vec![FieldGeometry::Parallel],
            GeometrySetting::Perp => vec![FieldGeometry::Perpendicular],
            GeometrySetting::Both => FieldGeometry::ALL.to_vec(),
        }
    }
}

impl std::str::FromStr for GeometrySetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "both" => Ok(GeometrySetting::Both),
            other => match other.parse::<FieldGeometry>()? {
                FieldGeometry::Parallel => Ok(GeometrySetting::Par),
                FieldGeometry::Perpendicular => Ok(GeometrySetting::Perp),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// GHz.
    pub mw_freq: f64,
    #[serde(rename = "field_Z")]
    pub field_z: FieldSetting,
    #[serde(rename = "field_Int")]
    pub field_int: FieldSetting,
    #[serde(rename = "field_XY")]
    pub field_xy: FieldSetting,
    /// μs.
    pub tau: f64,
    /// V/m.
    #[serde(rename = "E")]
    pub e_field: f64,
    pub geometry: GeometrySetting,
    /// Gaussian FWHM of the pulse excitation profile, MHz.
    pub excitation_fwhm: f64,
    /// Gaussian FWHM of the spectral line used for field sweeps, MHz.
    pub linewidth_fwhm: f64,
    /// Phase memory time, μs; scales absolute echo outputs only.
    #[serde(rename = "T2", skip_serializing_if = "Option::is_none")]
    pub t2: Option<f64>,
    /// Field sweep range, mT; derived from D and ν_mw when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field_max: Option<f64>,
    /// Field sweep step, mT.
    pub field_step: f64,
    /// Points of the t_E grid over [0, 2τ].
    pub t_points: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mw_freq: 9.7,
            field_z: FieldSetting::AUTO,
            field_int: FieldSetting::Field(340.0),
            field_xy: FieldSetting::AUTO,
            tau: 2.0,
            e_field: 1.5e6,
            geometry: GeometrySetting::Both,
            excitation_fwhm: 30.0,
            linewidth_fwhm: 30.0,
            t2: Some(2.5),
            field_min: None,
            field_max: None,
            field_step: 0.05,
            t_points: 41,
        }
    }
}

impl ExperimentConfig {
    pub fn field_setting(&self, pos: FieldPosition) -> FieldSetting {
        match pos {
            FieldPosition::Z => self.field_z,
            FieldPosition::Int => self.field_int,
            FieldPosition::XY => self.field_xy,
        }
    }

    /// Uniform t_E grid over [0, 2τ], μs.
    pub fn t_grid(&self) -> Vec<f64> {
        crate::quadrature::linspace(0.0, 2.0 * self.tau, self.t_points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    pub theta_points: usize,
    pub strain_nodes: usize,
    pub strain_span: f64,
    pub kappa_nodes: usize,
    pub phi_points: usize,
    pub scan_points: usize,
    pub root_tol_mhz: f64,
    pub branch_jump_mt: f64,
    pub shift_model: String,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        let n = Numerics::default();
        Self {
            theta_points: n.theta_points,
            strain_nodes: n.strain_nodes,
            strain_span: n.strain_span,
            kappa_nodes: n.kappa_nodes,
            phi_points: n.phi_points,
            scan_points: n.scan_points,
            root_tol_mhz: n.root_tol_mhz,
            branch_jump_mt: n.branch_jump_mt,
            shift_model: ShiftModel::default().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecConfig {
    pub kappa: f64,
    pub sigma_kappa: f64,
}

impl Default for SecConfig {
    fn default() -> Self {
        let s = SecParams::default();
        Self { kappa: s.kappa, sigma_kappa: s.sigma_kappa }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub init_kappa: f64,
    pub init_sigma_kappa: f64,
    pub max_iterations: usize,
    /// Smallest resolvable frequency shift, Hz.
    pub delta_f_min: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { init_kappa: 0.30, init_sigma_kappa: 0.05, max_iterations: FitOptions::default().max_iterations, delta_f_min: 62e3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Experimental curve files, or directories scanned for `*.csv`.
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { inputs: Vec::new(), output_dir: PathBuf::from("out") }
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be non-negative, got {v}")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.spin_system()?;
        let e = &self.experiment;
        positive("mw_freq", e.mw_freq)?;
        for pos in FieldPosition::ALL {
            if let Some(b) = e.field_setting(pos).value() {
                non_negative(&format!("field_{}", pos.label()), b)?;
            }
        }
        positive("tau", e.tau)?;
        non_negative("E", e.e_field)?;
        positive("excitation_fwhm", e.excitation_fwhm)?;
        positive("linewidth_fwhm", e.linewidth_fwhm)?;
        if let Some(t2) = e.t2 {
            positive("T2", t2)?;
        }
        positive("field_step", e.field_step)?;
        if let Some(b) = e.field_min {
            non_negative("field_min", b)?;
        }
        if let Some(b) = e.field_max {
            non_negative("field_max", b)?;
        }
        if let (Some(lo), Some(hi)) = (e.field_min, e.field_max) {
            FieldWindow::new(lo, hi).map_err(|_| Error::invalid("field_max", "must exceed field_min"))?;
        }
        if e.t_points < 2 {
            return Err(Error::invalid("t_points", "need at least 2 points"));
        }
        self.numerics()?;
        self.shift_model()?;
        self.sec_params()?;
        SecParams::new(self.fit.init_kappa, self.fit.init_sigma_kappa)
            .map_err(|_| Error::invalid("init_sigma_kappa", "must be non-negative"))?;
        if self.fit.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be positive"));
        }
        non_negative("delta_f_min", self.fit.delta_f_min)?;
        Ok(())
    }

    pub fn spin_system(&self) -> Result<SpinSystem> {
        let p = &self.spin.populations;
        let pops = Populations::new(p.zero, p.plus, p.minus)?;
        SpinSystem::new(self.spin.g, self.spin.d, self.spin.d_strain_fwhm, pops)
    }

    pub fn numerics(&self) -> Result<Numerics> {
        let c = &self.numerics;
        let n = Numerics {
            theta_points: c.theta_points,
            strain_nodes: c.strain_nodes,
            strain_span: c.strain_span,
            kappa_nodes: c.kappa_nodes,
            phi_points: c.phi_points,
            scan_points: c.scan_points,
            root_tol_mhz: c.root_tol_mhz,
            branch_jump_mt: c.branch_jump_mt,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn shift_model(&self) -> Result<ShiftModel> {
        self.numerics.shift_model.parse()
    }

    pub fn sec_params(&self) -> Result<SecParams> {
        SecParams::new(self.sec.kappa, self.sec.sigma_kappa)
    }

    pub fn fit_model(&self) -> Result<FitModel> {
        Ok(FitModel {
            sys: self.spin_system()?,
            mw_freq_ghz: self.experiment.mw_freq,
            excitation_fwhm: self.experiment.excitation_fwhm,
            numerics: self.numerics()?,
            shift_model: self.shift_model()?,
        })
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { max_iterations: self.fit.max_iterations, ..FitOptions::default() }
    }

    /// Sweep range: the configured limits or one covering all resonances.
    pub fn field_window(&self) -> Result<FieldWindow> {
        let auto = FieldWindow::covering(&self.spin_system()?, self.experiment.mw_freq);
        FieldWindow::new(self.experiment.field_min.unwrap_or(auto.min), self.experiment.field_max.unwrap_or(auto.max))
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    RunConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
