//! Estimation of κ and σ_κ from measured echo curves.
//!
//! All curves share (κ, σ_κ). The objective is the mean over curves of the
//! variance-normalised squared deviation, minimised with a Nelder–Mead simplex
//! in (κ, σ_κ) where σ_κ enters through |σ_κ|. Uncertainties come from a
//! quadratic fitted to the objective around the optimum.

use std::collections::hash_map::{Entry, HashMap};

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::powder::{orientation_distribution, OrientationDistribution};
use crate::sec::{EchoKernel, FieldGeometry, SecParams, ShiftModel};
use crate::spin::SpinSystem;
use crate::{Error, Numerics, Result};

pub const MIN_SAMPLES: usize = 8;

/// One measured echo trace, normalised so that the echo at `t_E = 0` is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentalCurve {
    pub position: String,
    pub geometry: FieldGeometry,
    /// Resonant field of the trace, mT.
    pub b0: f64,
    pub e_field: f64,
    pub tau: f64,
    pub t_e: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

impl ExperimentalCurve {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        position: impl Into<String>,
        geometry: FieldGeometry,
        b0: f64,
        e_field: f64,
        tau: f64,
        t_e: Vec<f64>,
        values: Vec<f64>,
        sigma: Option<Vec<f64>>,
    ) -> Result<Self> {
        let c = Self { position: position.into(), geometry, b0, e_field, tau, t_e, values, sigma };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_e.len() < MIN_SAMPLES {
            return Err(Error::invalid("t_E", format!("need at least {MIN_SAMPLES} samples, got {}", self.t_e.len())));
        }
        if self.values.len() != self.t_e.len() {
            return Err(Error::invalid("echo", "length differs from t_E"));
        }
        if self.t_e.windows(2).any(|w| !(w[1] >= w[0])) || self.t_e.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("t_E", "must be finite and non-decreasing"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("echo", "values must be finite"));
        }
        if let Some(s) = &self.sigma {
            if s.len() != self.t_e.len() || s.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::invalid("sigma", "must be positive, one per sample"));
            }
        }
        if !(self.b0 >= 0.0) {
            return Err(Error::invalid("B0", "must be non-negative"));
        }
        if !(self.e_field >= 0.0) {
            return Err(Error::invalid("E", "must be non-negative"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau", "must be positive"));
        }
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        match &self.sigma {
            Some(s) => s.iter().map(|x| 1.0 / (x * x)).collect(),
            None => vec![1.0; self.values.len()],
        }
    }

    /// Noise level estimated from second differences, or the median σ if given.
    pub fn noise_floor(&self) -> f64 {
        if let Some(s) = &self.sigma {
            let mut v = s.clone();
            v.sort_by(f64::total_cmp);
            return v[v.len() / 2];
        }
        let y = &self.values;
        let n = y.len() - 2;
        let ss: f64 = (1..=n).map(|i| (y[i + 1] - 2.0 * y[i] + y[i - 1]).powi(2)).sum();
        (ss / (6.0 * n as f64)).sqrt()
    }

    pub fn peak_to_peak(&self) -> f64 {
        let (lo, hi) = self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        hi - lo
    }

    /// Peak-to-peak clearly above the noise floor.
    pub fn modulation_visible(&self) -> bool {
        self.peak_to_peak() > (3.0 * self.noise_floor()).max(1e-9)
    }
}

/// Everything needed to simulate a curve apart from (κ, σ_κ).
#[derive(Debug, Clone)]
pub struct FitModel {
    pub sys: SpinSystem,
    pub mw_freq_ghz: f64,
    pub excitation_fwhm: f64,
    pub numerics: Numerics,
    pub shift_model: ShiftModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative spread of the objective over the simplex.
    pub f_tol: f64,
    /// Iterations the objective criterion must hold in a row.
    pub f_tol_iterations: usize,
    /// Relative size of the simplex.
    pub x_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 500, f_tol: 1e-6, f_tol_iterations: 3, x_tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub kappa: f64,
    pub sigma_kappa: f64,
    /// Standard uncertainties; `None` when the local quadratic is not convex.
    pub kappa_err: Option<f64>,
    pub sigma_kappa_err: Option<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub modulation_visible: bool,
    pub n_points: usize,
}

impl FitResult {
    pub fn params(&self) -> SecParams {
        SecParams { kappa: self.kappa, sigma_kappa: self.sigma_kappa }
    }
}

/// Curves with their echo kernels built once for repeated objective calls.
pub struct FitProblem {
    curves: Vec<ExperimentalCurve>,
    kernels: Vec<EchoKernel>,
    shift_model: ShiftModel,
}

impl FitProblem {
    pub fn new(model: &FitModel, curves: Vec<ExperimentalCurve>) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::invalid("curves", "no experimental curves"));
        }
        let mut dists: HashMap<u64, OrientationDistribution> = HashMap::new();
        let mut kernels = Vec::with_capacity(curves.len());
        for c in &curves {
            c.validate()?;
            let key = c.b0.to_bits();
            let dist = match dists.entry(key) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(orientation_distribution(
                    &model.sys,
                    model.mw_freq_ghz,
                    c.b0,
                    model.excitation_fwhm,
                    &model.numerics,
                )?),
            };
            kernels.push(EchoKernel::new(&model.sys, dist, c.b0, c.geometry, &model.numerics)?);
        }
        Ok(Self { curves, kernels, shift_model: model.shift_model })
    }

    pub fn curves(&self) -> &[ExperimentalCurve] {
        &self.curves
    }

    pub fn kernels(&self) -> &[EchoKernel] {
        &self.kernels
    }

    pub fn n_points(&self) -> usize {
        self.curves.iter().map(|c| c.t_e.len()).sum()
    }

    /// Simulated in-phase echo for every curve.
    pub fn simulate(&self, sec: &SecParams) -> Result<Vec<Vec<f64>>> {
        self.curves
            .iter()
            .zip(&self.kernels)
            .map(|(c, k)| Ok(k.signal(sec, c.e_field, c.tau, &c.t_e, self.shift_model)?.iter().map(|z| z.re).collect()))
            .collect()
    }

    pub fn objective(&self, sec: &SecParams) -> Result<f64> {
        let sims = self.simulate(sec)?;
        let total: f64 = self.curves.iter().zip(&sims).map(|(c, s)| normalized_deviation(c, s)).sum();
        Ok(total / self.curves.len() as f64)
    }

    /// Objective with σ_κ taken as |σ_κ|.
    fn reflected(&self, kappa: f64, sigma: f64) -> Result<f64> {
        self.objective(&SecParams { kappa, sigma_kappa: sigma.abs() })
    }
}

/// `Σ w (S_sim − S_exp)² / Σ w (S_exp − mean)²`. A flat trace is normalised
/// by `Σ w` instead of its vanishing variance.
fn normalized_deviation(curve: &ExperimentalCurve, sim: &[f64]) -> f64 {
    let w = curve.weights();
    let wsum: f64 = w.iter().sum();
    let mean = curve.values.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>() / wsum;
    let var: f64 = curve.values.iter().zip(&w).map(|(v, w)| w * (v - mean).powi(2)).sum();
    let ss: f64 = curve.values.iter().zip(sim).zip(&w).map(|((e, s), w)| w * (s - e).powi(2)).sum();
    let denom = if var > 1e-12 * wsum { var } else { wsum };
    ss / denom
}

/// Builds the problem and evaluates the objective once.
pub fn objective(params: &SecParams, curves: &[ExperimentalCurve], model: &FitModel) -> Result<f64> {
    FitProblem::new(model, curves.to_vec())?.objective(params)
}

pub fn fit_kappa(curves: &[ExperimentalCurve], init: &SecParams, model: &FitModel, options: &FitOptions) -> Result<FitResult> {
    let problem = FitProblem::new(model, curves.to_vec())?;
    fit_problem(&problem, init, options)
}

pub fn fit_problem(problem: &FitProblem, init: &SecParams, options: &FitOptions) -> Result<FitResult> {
    init.validate()?;
    let visible = problem.curves.iter().any(ExperimentalCurve::modulation_visible);
    if !visible {
        log::warn!("no curve shows modulation above its noise floor; kappa is poorly constrained");
    }
    let mut evals = 0usize;
    let mut f = |x: [f64; 2]| -> Result<f64> {
        evals += 1;
        problem.reflected(x[0], x[1])
    };
    let step = [(0.25 * init.kappa.abs()).max(0.05), (0.25 * init.sigma_kappa).max(0.05)];
    let x0 = [init.kappa, init.sigma_kappa];
    let mut simplex = vec![x0, [x0[0] + step[0], x0[1]], [x0[0], x0[1] + step[1]]];
    let mut values = simplex.iter().map(|&x| f(x)).collect::<Result<Vec<_>>>()?;

    let mut iterations = 0;
    let mut f_streak = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i]).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let (best, worst) = (values[0], values[2]);
        if worst - best <= options.f_tol * best.abs() + 1e-15 {
            f_streak += 1;
        } else {
            f_streak = 0;
        }
        let size = (1..3)
            .flat_map(|v| (0..2).map(move |k| (v, k)))
            .map(|(v, k)| (simplex[v][k] - simplex[0][k]).abs() / simplex[0][k].abs().max(1e-3))
            .fold(0.0, f64::max);
        if f_streak >= options.f_tol_iterations || size < options.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid = [0.5 * (simplex[0][0] + simplex[1][0]), 0.5 * (simplex[0][1] + simplex[1][1])];
        let along = |t: f64| [centroid[0] + t * (simplex[2][0] - centroid[0]), centroid[1] + t * (simplex[2][1] - centroid[1])];
        let xr = along(-1.0);
        let fr = f(xr)?;
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(xe)?;
            if fe < fr {
                simplex[2] = xe;
                values[2] = fe;
            } else {
                simplex[2] = xr;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = xr;
            values[2] = fr;
        } else {
            let (xc, fc) = if fr < values[2] {
                let x = along(-0.5);
                (x, f(x)?)
            } else {
                let x = along(0.5);
                (x, f(x)?)
            };
            if fc < values[2].min(fr) {
                simplex[2] = xc;
                values[2] = fc;
            } else {
                for v in 1..3 {
                    simplex[v] = [0.5 * (simplex[0][0] + simplex[v][0]), 0.5 * (simplex[0][1] + simplex[v][1])];
                    values[v] = f(simplex[v])?;
                }
            }
        }
    }
    let (ib, _) = values.iter().enumerate().fold((0, f64::INFINITY), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
    let best = simplex[ib];
    let fmin = values[ib];
    let (kappa, sigma) = (best[0], best[1].abs());
    let n = problem.n_points();
    let errs = quadratic_uncertainty(&mut f, kappa, sigma, fmin, n)?;
    if !converged {
        log::warn!("fit stopped after {iterations} iterations without meeting the tolerance");
    }
    Ok(FitResult {
        kappa,
        sigma_kappa: sigma,
        kappa_err: errs.map(|e| e[0]),
        sigma_kappa_err: errs.map(|e| e[1]),
        objective: fmin,
        iterations,
        evaluations: evals,
        converged,
        modulation_visible: visible,
        n_points: n,
    })
}

/// Standard errors from a quadratic fitted on a 3×3 stencil around the minimum:
/// `Cov = 2·F_min/(N − 2)·H⁻¹`.
fn quadratic_uncertainty(
    f: &mut impl FnMut([f64; 2]) -> Result<f64>,
    kappa: f64,
    sigma: f64,
    fmin: f64,
    n_points: usize,
) -> Result<Option<[f64; 2]>> {
    if n_points <= 2 {
        return Ok(None);
    }
    let h = [(0.02 * kappa.abs()).max(2e-3), (0.05 * sigma).max(2e-3)];
    let mut rows = Vec::with_capacity(9);
    let mut rhs = Vec::with_capacity(9);
    for i in -1i32..=1 {
        for j in -1i32..=1 {
            let (u, v) = (i as f64, j as f64);
            let value = if i == 0 && j == 0 { fmin } else { f([kappa + u * h[0], sigma + v * h[1]])? };
            rows.extend_from_slice(&[1.0, u, v, 0.5 * u * u, u * v, 0.5 * v * v]);
            rhs.push(value);
        }
    }
    let a = DMatrix::from_row_slice(9, 6, &rows);
    let b = DVector::from_vec(rhs);
    let Ok(coef) = a.svd(true, true).solve(&b, 1e-14) else {
        return Ok(None);
    };
    let hess = Matrix2::new(
        coef[3] / (h[0] * h[0]),
        coef[4] / (h[0] * h[1]),
        coef[4] / (h[0] * h[1]),
        coef[5] / (h[1] * h[1]),
    );
    if !(hess[(0, 0)] > 0.0) || !(hess.determinant() > 0.0) {
        return Ok(None);
    }
    let Some(inv) = hess.try_inverse() else {
        return Ok(None);
    };
    let scale = 2.0 * fmin.max(0.0) / (n_points - 2) as f64;
    Ok(Some([(scale * inv[(0, 0)]).sqrt(), (scale * inv[(1, 1)]).sqrt()]))
}

/// Weighted mean of |δf|/E at the mean κ, Hz/(V/m).
pub fn sensitivity(
    sys: &SpinSystem,
    sec: &SecParams,
    dist: &OrientationDistribution,
    b0: f64,
    geometry: FieldGeometry,
    numerics: &Numerics,
) -> Result<f64> {
    sec.validate()?;
    Ok(EchoKernel::new(sys, dist, b0, geometry, numerics)?.mean_abs_shift_per_field(sec.kappa))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionLimit {
    /// `1 − cos(2π·δf_min·τ)`.
    pub depth: f64,
    /// `δf_min / sensitivity` in V/m; `None` for zero sensitivity.
    pub e_min: Option<f64>,
}

/// Echo change produced by a shift of `delta_f_min` Hz after τ μs, and the
/// field needed for it at the given sensitivity (Hz/(V/m)).
pub fn min_detectable_field(delta_f_min: f64, tau: f64, sensitivity: f64) -> Result<DetectionLimit> {
    if !(tau > 0.0) {
        return Err(Error::invalid("tau", "must be positive"));
    }
    if !(delta_f_min >= 0.0) {
        return Err(Error::invalid("delta_f_min", "must be non-negative"));
    }
    let depth = 1.0 - (std::f64::consts::TAU * delta_f_min * 1e-6 * tau).cos();
    let e_min = if delta_f_min == 0.0 {
        Some(0.0)
    } else if sensitivity.abs() > 0.0 {
        Some(delta_f_min / sensitivity.abs())
    } else {
        None
    };
    Ok(DetectionLimit { depth, e_min })
}
