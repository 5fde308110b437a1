//! Pipeline stages behind the `sec-sim` subcommands. Each stage writes its
//! files atomically into the output directory and returns the paths written
//! plus the lines to show the user.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{GeometrySetting, RunConfig};
use crate::fit::{fit_problem, min_detectable_field, sensitivity, ExperimentalCurve, FitProblem, FitResult};
use crate::powder::{
    angular_resonance_map, edfs_spectrum, effective_field_profile, orientation_distribution, resolve_field_positions,
    FieldPosition, FieldPositions, OrientationDistribution, Polarity, Spectrum,
};
use crate::quadrature::linspace;
use crate::sec::{EchoCurve, EchoKernel, FieldGeometry, SecParams};
use crate::table::{write_atomic, Table};
use crate::{Error, Result};

/// Values quoted for the published sample, printed next to fitted results.
pub const REFERENCE_KAPPA: (f64, f64) = (0.59, 0.03);
pub const REFERENCE_SENSITIVITY_MAIN: f64 = 0.51;
pub const REFERENCE_SENSITIVITY_SUPPLEMENT: f64 = 0.36;

/// Command-line overrides shared by all stages.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out_dir: Option<PathBuf>,
    /// Restrict to one position; `None` means all three.
    pub position: Option<FieldPosition>,
    pub geometry: Option<GeometrySetting>,
    /// Explicit B₀ (mT) for `orientations`, instead of the named positions.
    pub field: Option<f64>,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub messages: Vec<String>,
    /// Failure reported after the outputs were written (a fit that did not converge).
    pub failure: Option<Error>,
}

impl Outcome {
    fn write(&mut self, path: PathBuf, table: &Table) -> Result<()> {
        table.write(&path)?;
        self.files.push(path);
        Ok(())
    }
}

fn out_dir(cfg: &RunConfig, opts: &Options) -> Result<PathBuf> {
    let dir = opts.out_dir.clone().unwrap_or_else(|| cfg.paths.output_dir.clone());
    fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
    Ok(dir)
}

fn positions_of(opts: &Options) -> Vec<FieldPosition> {
    opts.position.map_or_else(|| FieldPosition::ALL.to_vec(), |p| vec![p])
}

fn geometries_of(cfg: &RunConfig, opts: &Options) -> Vec<FieldGeometry> {
    opts.geometry.unwrap_or(cfg.experiment.geometry).geometries()
}

pub fn simulate_spectrum(cfg: &RunConfig) -> Result<Spectrum> {
    let window = cfg.field_window()?;
    let n = ((window.max - window.min) / cfg.experiment.field_step).round() as usize + 1;
    let grid = linspace(window.min, window.max, n.max(2));
    edfs_spectrum(&cfg.spin_system()?, cfg.experiment.mw_freq, &grid, cfg.experiment.linewidth_fwhm, &cfg.numerics()?)
}

/// Configured fields, with `auto` entries taken from the simulated spectrum.
pub fn field_positions(cfg: &RunConfig) -> Result<FieldPositions> {
    let e = &cfg.experiment;
    let (z, int, xy) = (e.field_z.value(), e.field_int.value(), e.field_xy.value());
    if let (Some(z), Some(int), Some(xy)) = (z, int, xy) {
        return Ok(FieldPositions { z, int, xy });
    }
    let spectrum = simulate_spectrum(cfg)?;
    let p = resolve_field_positions(&spectrum, z, int, xy)?;
    log::info!("field positions: Z {:.3} mT, Int {:.3} mT, XY {:.3} mT", p.z, p.int, p.xy);
    Ok(p)
}

fn describe_system(table: &mut Table, cfg: &RunConfig) {
    let s = &cfg.spin;
    table
        .set_meta("g", s.g)
        .set_meta("D_MHz", s.d)
        .set_meta("D_strain_fwhm_MHz", s.d_strain_fwhm)
        .set_meta("D_strain_model", "gaussian_fwhm")
        .set_meta("populations_plus_zero_minus", format!("{}/{}/{}", s.populations.plus, s.populations.zero, s.populations.minus))
        .set_meta("mw_freq_GHz", cfg.experiment.mw_freq);
}

fn describe_positions(table: &mut Table, cfg: &RunConfig, p: &FieldPositions) {
    for pos in FieldPosition::ALL {
        let source = if cfg.experiment.field_setting(pos).value().is_some() { "config" } else { "auto" };
        table.set_meta(&format!("field_{}_mT", pos.label()), p.get(pos));
        table.set_meta(&format!("field_{}_source", pos.label()), source);
    }
}

pub fn run_spectrum(cfg: &RunConfig, opts: &Options) -> Result<Outcome> {
    let dir = out_dir(cfg, opts)?;
    let spectrum = simulate_spectrum(cfg)?;
    let mut table = Table::new(["B_mT", "intensity"]);
    describe_system(&mut table, cfg);
    table.set_meta("linewidth_fwhm_MHz", cfg.experiment.linewidth_fwhm);
    let mut out = Outcome::default();
    if spectrum.max_abs() == 0.0 || cfg.spin_system()?.populations.polarization() < 1e-12 {
        log::warn!("spectrum is identically zero (no population difference between levels)");
        out.messages.push("warning: spectrum is identically zero".into());
    } else {
        let e = &cfg.experiment;
        match resolve_field_positions(&spectrum, e.field_z.value(), e.field_int.value(), e.field_xy.value()) {
            Ok(p) => {
                describe_positions(&mut table, cfg, &p);
                out.messages.push(format!("field positions: Z {:.3} mT, Int {:.3} mT, XY {:.3} mT", p.z, p.int, p.xy));
            }
            Err(err) => log::warn!("could not locate field positions: {err}"),
        }
    }
    for (b, v) in spectrum.field.iter().zip(&spectrum.intensity) {
        table.push_row(vec![*b, *v]);
    }
    out.write(dir.join("spectrum.csv"), &table)?;
    Ok(out)
}

fn distribution_at(cfg: &RunConfig, b0: f64) -> Result<OrientationDistribution> {
    orientation_distribution(&cfg.spin_system()?, cfg.experiment.mw_freq, b0, cfg.experiment.excitation_fwhm, &cfg.numerics()?)
}

pub fn run_orientations(cfg: &RunConfig, opts: &Options) -> Result<Outcome> {
    let dir = out_dir(cfg, opts)?;
    let mut out = Outcome::default();
    let targets: Vec<(String, f64)> = match opts.field {
        Some(b) => vec![(format!("B{b}"), b)],
        None => {
            let p = field_positions(cfg)?;
            positions_of(opts).into_iter().map(|pos| (pos.label().to_string(), p.get(pos))).collect()
        }
    };
    for (label, b0) in targets {
        let dist = distribution_at(cfg, b0)?;
        let mut cols = vec!["theta_deg".to_string(), "weight".to_string()];
        cols.extend(dist.branches.iter().map(|b| format!("weight_pair{}", b.transition)));
        let mut table = Table::new(cols);
        describe_system(&mut table, cfg);
        table
            .set_meta("position", &label)
            .set_meta("B0_mT", b0)
            .set_meta("excitation_fwhm_MHz", cfg.experiment.excitation_fwhm)
            .set_meta("normalization", "unit_area_per_radian");
        let total = dist.total();
        for (i, t) in dist.theta.iter().enumerate() {
            let mut row = vec![t.to_degrees(), total[i]];
            row.extend(dist.branches.iter().map(|b| b.weights[i]));
            table.push_row(row);
        }
        out.write(dir.join(format!("distribution_{label}.csv")), &table)?;

        let mut eff = Table::new(["theta_deg", "Eeff_V_per_m"]);
        eff.set_meta("position", &label).set_meta("B0_mT", b0).set_meta("E_V_per_m", cfg.experiment.e_field);
        for (t, v) in effective_field_profile(&dist, cfg.experiment.e_field)? {
            eff.push_row(vec![t.to_degrees(), v]);
        }
        out.write(dir.join(format!("effective_field_{label}.csv")), &eff)?;
        out.messages.push(format!("{label}: B0 {b0:.3} mT, distribution peak at {:.1} deg", dist.peak_theta().to_degrees()));
    }

    let branches = angular_resonance_map(&cfg.spin_system()?, cfg.experiment.mw_freq, &cfg.numerics()?.theta_grid(), cfg.field_window()?, &cfg.numerics()?)?;
    let mut map = Table::new(["branch", "transition", "theta_deg", "B_mT", "polarity"]);
    describe_system(&mut map, cfg);
    map.set_meta("polarity_codes", "1=absorptive,-1=emissive");
    for (k, b) in branches.iter().enumerate() {
        for i in 0..b.len() {
            let pol = if b.polarity[i] == Polarity::Absorptive { 1.0 } else { -1.0 };
            map.push_row(vec![k as f64, b.transition as f64, b.theta[i].to_degrees(), b.field[i], pol]);
        }
    }
    out.write(dir.join("resonance_map.csv"), &map)?;
    Ok(out)
}

fn echo_table(curve: &EchoCurve, label: &str) -> Table {
    let m = &curve.meta;
    let mut t = Table::new(["t_E_us", "in_phase", "quadrature"]);
    t.set_meta("position", label)
        .set_meta("geometry", m.geometry)
        .set_meta("B0_mT", m.b0)
        .set_meta("E_V_per_m", m.e_field)
        .set_meta("tau_us", m.tau)
        .set_meta("kappa", m.sec.kappa)
        .set_meta("sigma_kappa", m.sec.sigma_kappa)
        .set_meta("shift_model", m.model)
        .set_meta("absolute_scale", m.absolute_scale);
    for i in 0..curve.t_e.len() {
        t.push_row(vec![curve.t_e[i], curve.in_phase[i], curve.quadrature[i]]);
    }
    t
}

pub fn run_echo(cfg: &RunConfig, opts: &Options) -> Result<Outcome> {
    let dir = out_dir(cfg, opts)?;
    let sys = cfg.spin_system()?;
    let numerics = cfg.numerics()?;
    let sec = cfg.sec_params()?;
    let model = cfg.shift_model()?;
    let e = &cfg.experiment;
    let t_grid = e.t_grid();
    let positions = field_positions(cfg)?;
    let mut out = Outcome::default();
    let mut summary = Table::new(["position", "geometry", "B0_mT", "depth_at_tau", "min_in_phase", "max_abs_quadrature"]);
    summary
        .set_meta("position_codes", "0=Z,1=Int,2=XY")
        .set_meta("geometry_codes", "0=par,1=perp")
        .set_meta("kappa", sec.kappa)
        .set_meta("sigma_kappa", sec.sigma_kappa)
        .set_meta("E_V_per_m", e.e_field)
        .set_meta("tau_us", e.tau);
    describe_positions(&mut summary, cfg, &positions);
    for pos in positions_of(opts) {
        let b0 = positions.get(pos);
        let dist = distribution_at(cfg, b0)?;
        for geometry in geometries_of(cfg, opts) {
            let kernel = EchoKernel::new(&sys, &dist, b0, geometry, &numerics)?;
            let curve = kernel.curve(&sec, e.e_field, e.tau, &t_grid, model, e.t2, Some(pos.label().into()))?;
            let table = echo_table(&curve, pos.label());
            out.write(dir.join(format!("echo_{}_{}.csv", pos.label(), geometry.label())), &table)?;
            let depth = curve.depth_at_tau();
            let min = curve.in_phase.iter().copied().fold(f64::INFINITY, f64::min);
            let quad = crate::sec::quadrature_residual(&curve);
            let pos_code = FieldPosition::ALL.iter().position(|p| *p == pos).unwrap_or(0);
            let geo_code = if geometry == FieldGeometry::Parallel { 0.0 } else { 1.0 };
            summary.push_row(vec![pos_code as f64, geo_code, b0, depth, min, quad]);
            out.messages.push(format!("{:<3} {:<4} B0 {b0:.3} mT  depth at tau {depth:.4}  max|Q| {quad:.1e}", pos.label(), geometry.label()));
        }
    }
    out.write(dir.join("echo_summary.csv"), &summary)?;
    Ok(out)
}

/// Input files: listed files plus every `*.csv` in listed directories, sorted.
pub fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let entries = fs::read_dir(p).map_err(|source| Error::Io { path: p.clone(), source })?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn meta_error(path: &Path, message: String) -> Error {
    Error::Data { path: path.to_path_buf(), line: 0, message }
}

/// Reads one curve file and normalises it to its echo at `t_E = 0`. `B0_mT`
/// falls back to the configured field of the named position.
pub fn read_curve(path: &Path, positions: Option<&FieldPositions>) -> Result<ExperimentalCurve> {
    let table = Table::read(path)?;
    let need = |key: &str| table.meta(key).ok_or_else(|| meta_error(path, format!("missing metadata `{key}`")));
    let number = |key: &str| -> Result<f64> {
        need(key)?.parse::<f64>().map_err(|_| meta_error(path, format!("metadata `{key}` is not a number")))
    };
    let position = need("position")?.to_string();
    let geometry: FieldGeometry = need("geometry")?.parse().map_err(|e: Error| meta_error(path, e.to_string()))?;
    let e_field = number("E_V_per_m")?;
    let tau = number("tau_us")?;
    let b0 = match table.meta("B0_mT") {
        Some(_) => number("B0_mT")?,
        None => {
            let pos: FieldPosition = position.parse().map_err(|e: Error| meta_error(path, e.to_string()))?;
            positions.ok_or_else(|| meta_error(path, "missing metadata `B0_mT`".into()))?.get(pos)
        }
    };
    let t_e = table.column("t_E_us").ok_or_else(|| meta_error(path, "missing column `t_E_us`".into()))?;
    let mut values = table
        .column("echo")
        .or_else(|| table.column("in_phase"))
        .ok_or_else(|| meta_error(path, "missing column `echo`".into()))?;
    let mut sigma = table.column("sigma");
    let first = *values.first().ok_or_else(|| meta_error(path, "no data rows".into()))?;
    if t_e[0] != 0.0 {
        log::warn!("{}: first sample is at t_E = {} us, normalising to it", path.display(), t_e[0]);
    }
    if first == 0.0 || !first.is_finite() {
        return Err(meta_error(path, "echo at t_E = 0 is zero; cannot normalise".into()));
    }
    values.iter_mut().for_each(|v| *v /= first);
    if let Some(s) = sigma.as_mut() {
        s.iter_mut().for_each(|v| *v /= first.abs());
    }
    ExperimentalCurve::new(position, geometry, b0, e_field, tau, t_e, values, sigma)
        .map_err(|e| meta_error(path, e.to_string()))
}

fn render_fit(r: &FitResult, sens: f64, limit: &crate::fit::DetectionLimit, cfg: &RunConfig) -> String {
    let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| x.to_string());
    let lines = [
        ("kappa", r.kappa.to_string()),
        ("kappa_err", opt(r.kappa_err)),
        ("sigma_kappa", r.sigma_kappa.to_string()),
        ("sigma_kappa_err", opt(r.sigma_kappa_err)),
        ("objective", r.objective.to_string()),
        ("iterations", r.iterations.to_string()),
        ("evaluations", r.evaluations.to_string()),
        ("converged", r.converged.to_string()),
        ("modulation_visible", r.modulation_visible.to_string()),
        ("n_points", r.n_points.to_string()),
        ("sensitivity_Hz_per_V_per_m", sens.to_string()),
        ("delta_f_min_Hz", cfg.fit.delta_f_min.to_string()),
        ("tau_us", cfg.experiment.tau.to_string()),
        ("depth_at_delta_f_min", limit.depth.to_string()),
        ("E_min_V_per_m", opt(limit.e_min)),
        ("reference_kappa", format!("{}+-{}", REFERENCE_KAPPA.0, REFERENCE_KAPPA.1)),
        ("reference_sensitivity_main", REFERENCE_SENSITIVITY_MAIN.to_string()),
        ("reference_sensitivity_supplement", REFERENCE_SENSITIVITY_SUPPLEMENT.to_string()),
    ];
    lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Sensitivity at the Z position, parallel geometry, for the given κ.
fn z_sensitivity(cfg: &RunConfig, sec: &SecParams, positions: &FieldPositions) -> Result<f64> {
    let b0 = positions.z;
    let dist = distribution_at(cfg, b0)?;
    sensitivity(&cfg.spin_system()?, sec, &dist, b0, FieldGeometry::Parallel, &cfg.numerics()?)
}

pub fn run_fit(cfg: &RunConfig, opts: &Options) -> Result<Outcome> {
    let files = collect_inputs(&cfg.paths.inputs)?;
    if files.is_empty() {
        return Err(Error::Config("no experimental curves: set paths.inputs to CSV files or directories".into()));
    }
    let dir = out_dir(cfg, opts)?;
    let positions = field_positions(cfg)?;
    let curves = files.iter().map(|f| read_curve(f, Some(&positions))).collect::<Result<Vec<_>>>()?;
    let problem = FitProblem::new(&cfg.fit_model()?, curves)?;
    let init = SecParams::new(cfg.fit.init_kappa, cfg.fit.init_sigma_kappa)?;
    let result = fit_problem(&problem, &init, &cfg.fit_options())?;
    let sens = z_sensitivity(cfg, &result.params(), &positions)?;
    let limit = min_detectable_field(cfg.fit.delta_f_min, cfg.experiment.tau, sens)?;

    let mut out = Outcome::default();
    let path = dir.join("fit_result.txt");
    write_atomic(&path, &render_fit(&result, sens, &limit, cfg))?;
    out.files.push(path);
    let sims = problem.simulate(&result.params())?;
    for (i, (c, sim)) in problem.curves().iter().zip(&sims).enumerate() {
        let mut t = Table::new(["t_E_us", "echo", "model"]);
        t.set_meta("source", files[i].display())
            .set_meta("position", &c.position)
            .set_meta("geometry", c.geometry)
            .set_meta("B0_mT", c.b0)
            .set_meta("E_V_per_m", c.e_field)
            .set_meta("tau_us", c.tau)
            .set_meta("kappa", result.kappa)
            .set_meta("sigma_kappa", result.sigma_kappa);
        for ((t_e, v), s) in c.t_e.iter().zip(&c.values).zip(sim.iter()) {
            t.push_row(vec![*t_e, *v, *s]);
        }
        out.write(dir.join(format!("fit_overlay_{i:02}_{}_{}.csv", c.position, c.geometry)), &t)?;
    }
    let pm = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    out.messages.push(format!("kappa       = {:.4} +- {} Hz/(V/m)", result.kappa, pm(result.kappa_err)));
    out.messages.push(format!("sigma_kappa = {:.4} +- {} Hz/(V/m)", result.sigma_kappa, pm(result.sigma_kappa_err)));
    out.messages.push(format!("sensitivity = {sens:.4} Hz/(V/m) (Z, E parallel to B0)"));
    out.messages.push(match limit.e_min {
        Some(e) => format!("min detectable field = {e:.3e} V/m (delta_f_min {} kHz, depth {:.3})", cfg.fit.delta_f_min / 1e3, limit.depth),
        None => "min detectable field = undefined (zero sensitivity)".into(),
    });
    out.messages.push(format!(
        "objective {:.3e} after {} iterations, converged: {}",
        result.objective, result.iterations, result.converged
    ));
    out.messages.push(format!(
        "reference: kappa = {} +- {} Hz/(V/m); sensitivity {} (main text) / {} (supplement) Hz/(V/m)",
        REFERENCE_KAPPA.0, REFERENCE_KAPPA.1, REFERENCE_SENSITIVITY_MAIN, REFERENCE_SENSITIVITY_SUPPLEMENT
    ));
    if !result.modulation_visible {
        out.messages.push("warning: no curve shows modulation above its noise floor".into());
    }
    if !result.converged {
        out.failure = Some(Error::NotConverged { iterations: result.iterations, objective: result.objective });
    }
    Ok(out)
}

pub fn run_sensitivity(cfg: &RunConfig, opts: &Options) -> Result<Outcome> {
    let dir = out_dir(cfg, opts)?;
    let sys = cfg.spin_system()?;
    let numerics = cfg.numerics()?;
    let sec = cfg.sec_params()?;
    let positions = field_positions(cfg)?;
    let mut out = Outcome::default();
    let mut text = String::new();
    for pos in positions_of(opts) {
        let b0 = positions.get(pos);
        let dist = distribution_at(cfg, b0)?;
        for geometry in geometries_of(cfg, opts) {
            let s = sensitivity(&sys, &sec, &dist, b0, geometry, &numerics)?;
            let limit = min_detectable_field(cfg.fit.delta_f_min, cfg.experiment.tau, s)?;
            let key = format!("{}_{}", pos.label(), geometry.label());
            let e_min = limit.e_min.map_or("undefined".into(), |e| e.to_string());
            text.push_str(&format!("sensitivity_{key}={s}\nE_min_{key}={e_min}\n"));
            out.messages.push(format!(
                "{:<3} {:<4} B0 {b0:.3} mT  sensitivity {s:.4} Hz/(V/m)  E_min {}",
                pos.label(),
                geometry.label(),
                limit.e_min.map_or("undefined".into(), |e| format!("{e:.3e} V/m"))
            ));
        }
    }
    let depth = min_detectable_field(cfg.fit.delta_f_min, cfg.experiment.tau, 1.0)?.depth;
    text.push_str(&format!("delta_f_min_Hz={}\ntau_us={}\ndepth_at_delta_f_min={depth}\n", cfg.fit.delta_f_min, cfg.experiment.tau));
    out.messages.push(format!("echo change at delta_f_min = {} kHz after tau: {depth:.4}", cfg.fit.delta_f_min / 1e3));
    let path = dir.join("sensitivity.txt");
    write_atomic(&path, &text)?;
    out.files.push(path);
    Ok(out)
}
