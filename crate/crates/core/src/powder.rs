//! Powder averages over molecular orientation for a frozen isotropic sample.
//!
//! The polar angle θ between the molecular axis and B₀ is sampled on a uniform
//! grid over [0, π] with `sinθ` weights. The axial Hamiltonian makes the
//! azimuth irrelevant here. D-strain is a Gaussian average over D.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use crate::quadrature::{fwhm_to_sigma, gaussian, trapezoid_weights, GaussianNodes};
use crate::spin::{axial_levels, lines_at, SpinSystem, TransitionLine, PAIRS};
use crate::{Error, Numerics, Result};

/// Excitation offsets beyond this many standard deviations count as off-resonant.
const RESONANT_SIGMAS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Absorptive,
    Emissive,
}

impl Polarity {
    fn of(amplitude: f64) -> Self {
        if amplitude < 0.0 {
            Polarity::Emissive
        } else {
            Polarity::Absorptive
        }
    }
}

/// Closed field interval in mT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldWindow {
    pub min: f64,
    pub max: f64,
}

impl FieldWindow {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min >= 0.0 && max > min) {
            return Err(Error::invalid("field window", format!("[{min}, {max}] mT is empty")));
        }
        Ok(Self { min, max })
    }

    /// Window wide enough for every allowed line including D-strain tails.
    pub fn covering(sys: &SpinSystem, mw_freq_ghz: f64) -> Self {
        let centre = sys.field_for_frequency(mw_freq_ghz * 1e3);
        let half_mhz = 1.2 * sys.d.abs() + 4.0 * fwhm_to_sigma(sys.d_strain_fwhm) + 50.0;
        let half = sys.field_for_frequency(half_mhz);
        Self { min: (centre - half).max(0.0), max: centre + half }
    }

    pub fn extended(&self, pad: f64) -> Self {
        Self { min: (self.min - pad).max(0.0), max: self.max + pad }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonanceRoot {
    /// Resonance field, mT.
    pub field: f64,
    /// Level pair index (see [`TransitionLine::pair_index`]).
    pub transition: usize,
    pub polarity: Polarity,
    pub line: TransitionLine,
}

fn check_mw(mw_freq_ghz: f64) -> Result<f64> {
    if !(mw_freq_ghz > 0.0) || !mw_freq_ghz.is_finite() {
        return Err(Error::invalid("mw_freq", "microwave frequency must be positive"));
    }
    Ok(mw_freq_ghz * 1e3)
}

fn pair_frequencies(sys: &SpinSystem, b: f64, theta: f64) -> [f64; 3] {
    let e = axial_levels(sys.d, sys.zeeman_frequency(b), theta);
    PAIRS.map(|(i, j)| e[j] - e[i])
}

/// All fields in `window` where an allowed transition matches the microwave
/// frequency: coarse scan, then bisection to `numerics.root_tol_mhz`.
pub fn resonance_fields(
    sys: &SpinSystem,
    mw_freq_ghz: f64,
    theta: f64,
    window: FieldWindow,
    numerics: &Numerics,
) -> Result<Vec<ResonanceRoot>> {
    let nu_mw = check_mw(mw_freq_ghz)?;
    Ok(roots_mhz(sys, nu_mw, theta, window, numerics))
}

fn roots_mhz(
    sys: &SpinSystem,
    nu_mw: f64,
    theta: f64,
    window: FieldWindow,
    numerics: &Numerics,
) -> Vec<ResonanceRoot> {
    let n = numerics.scan_points.max(2);
    let h = (window.max - window.min) / (n - 1) as f64;
    let mut fields = Vec::new();
    let mut prev_b = window.min;
    let mut prev = pair_frequencies(sys, prev_b, theta).map(|f| f - nu_mw);
    for (k, p) in prev.iter().enumerate() {
        if *p == 0.0 {
            fields.push((k, prev_b));
        }
    }
    for step in 1..n {
        let b = if step == n - 1 { window.max } else { window.min + h * step as f64 };
        let cur = pair_frequencies(sys, b, theta).map(|f| f - nu_mw);
        for k in 0..3 {
            if cur[k] == 0.0 {
                fields.push((k, b));
            } else if prev[k] != 0.0 && prev[k].signum() != cur[k].signum() {
                fields.push((k, bisect(sys, nu_mw, theta, k, prev_b, b, prev[k], numerics)));
            }
        }
        prev = cur;
        prev_b = b;
    }
    let mut roots = Vec::new();
    for (k, field) in fields {
        let lines = lines_at(sys, sys.zeeman_frequency(field), theta);
        if let Some(line) = lines[k] {
            roots.push(ResonanceRoot { field, transition: k, polarity: Polarity::of(line.amplitude), line });
        }
    }
    roots.sort_by(|a, b| a.field.total_cmp(&b.field));
    roots
}

#[allow(clippy::too_many_arguments)]
fn bisect(
    sys: &SpinSystem,
    nu_mw: f64,
    theta: f64,
    pair: usize,
    mut lo: f64,
    mut hi: f64,
    mut f_lo: f64,
    numerics: &Numerics,
) -> f64 {
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let f_mid = pair_frequencies(sys, mid, theta)[pair] - nu_mw;
        if f_mid.abs() < numerics.root_tol_mhz || hi - lo < 1e-12 {
            break;
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    mid
}

/// Resonance field versus θ for one transition, split wherever the curve jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceBranch {
    pub transition: usize,
    pub theta: Vec<f64>,
    pub field: Vec<f64>,
    pub polarity: Vec<Polarity>,
}

impl ResonanceBranch {
    fn new(transition: usize) -> Self {
        Self { transition, theta: Vec::new(), field: Vec::new(), polarity: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

pub fn angular_resonance_map(
    sys: &SpinSystem,
    mw_freq_ghz: f64,
    theta_grid: &[f64],
    window: FieldWindow,
    numerics: &Numerics,
) -> Result<Vec<ResonanceBranch>> {
    let nu_mw = check_mw(mw_freq_ghz)?;
    let lo = theta_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = theta_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if theta_grid.is_empty() || lo > 1e-12 || hi < FRAC_PI_2 - 1e-12 {
        return Err(Error::invalid("theta_grid", "must cover at least [0, pi/2]"));
    }
    // Open segments keyed by (transition, root rank at this θ).
    let mut finished: Vec<ResonanceBranch> = Vec::new();
    let mut open: Vec<((usize, usize), ResonanceBranch)> = Vec::new();
    for &theta in theta_grid {
        let roots = roots_mhz(sys, nu_mw, theta, window, numerics);
        let mut still_open = Vec::new();
        let mut rank = [0usize; 3];
        for root in roots {
            let key = (root.transition, rank[root.transition]);
            rank[root.transition] += 1;
            let pos = open.iter().position(|(k, _)| *k == key);
            let mut branch = match pos {
                Some(p) => {
                    let (_, b) = open.swap_remove(p);
                    let last = *b.field.last().expect("open branch is never empty");
                    if (root.field - last).abs() > numerics.branch_jump_mt {
                        finished.push(b);
                        ResonanceBranch::new(root.transition)
                    } else {
                        b
                    }
                }
                None => ResonanceBranch::new(root.transition),
            };
            branch.theta.push(theta);
            branch.field.push(root.field);
            branch.polarity.push(root.polarity);
            still_open.push((key, branch));
        }
        finished.extend(open.drain(..).map(|(_, b)| b));
        open = still_open;
    }
    finished.extend(open.into_iter().map(|(_, b)| b));
    finished.sort_by(|a, b| a.transition.cmp(&b.transition).then(a.theta[0].total_cmp(&b.theta[0])));
    Ok(finished)
}

/// Echo-detected field-swept spectrum; positive intensity is absorptive.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub field: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl Spectrum {
    pub fn new(field: Vec<f64>, intensity: Vec<f64>) -> Result<Self> {
        if field.len() != intensity.len() || field.len() < 3 {
            return Err(Error::invalid("spectrum", "need matching grids with at least 3 points"));
        }
        if field.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("B_grid", "field grid must be strictly increasing"));
        }
        if intensity.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("spectrum", "non-finite intensity"));
        }
        Ok(Self { field, intensity })
    }

    pub fn max_abs(&self) -> f64 {
        self.intensity.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// ∫|S| dB by the trapezoid rule.
    pub fn abs_area(&self) -> f64 {
        trapezoid_weights(&self.field)
            .iter()
            .zip(&self.intensity)
            .map(|(w, s)| w * s.abs())
            .sum()
    }
}

/// Powder spectrum over `b_grid`. Each orientation and D-strain node deposits
/// its lines as Gaussians of `linewidth_fwhm` (MHz) mapped into field through
/// the local slope `∂ν/∂B₀`, including the `1/|∂ν/∂B₀|` field-sweep factor.
pub fn edfs_spectrum(
    sys: &SpinSystem,
    mw_freq_ghz: f64,
    b_grid: &[f64],
    linewidth_fwhm: f64,
    numerics: &Numerics,
) -> Result<Spectrum> {
    let nu_mw = check_mw(mw_freq_ghz)?;
    if !(linewidth_fwhm > 0.0) {
        return Err(Error::invalid("linewidth_fwhm", "must be positive"));
    }
    numerics.validate()?;
    let mut intensity = vec![0.0; b_grid.len()];
    // Validates the grid before the expensive part.
    Spectrum::new(b_grid.to_vec(), intensity.clone())?;
    let sigma_nu = fwhm_to_sigma(linewidth_fwhm);
    let pad = 6.0 * sys.field_for_frequency(sigma_nu) + 1.0;
    let window = FieldWindow::new(b_grid[0], b_grid[b_grid.len() - 1])?.extended(pad);
    let strain = strain_nodes(sys, numerics);
    let theta = numerics.theta_grid();
    let qw = trapezoid_weights(&theta);
    let step = (b_grid[b_grid.len() - 1] - b_grid[0]) / (b_grid.len() - 1) as f64;
    for (t, w_t) in theta.iter().zip(&qw) {
        let w_theta = t.sin() * w_t;
        if w_theta == 0.0 {
            continue;
        }
        for (d, w_d) in strain.iter() {
            let s = sys.with_d(d);
            for root in roots_mhz(&s, nu_mw, *t, window, numerics) {
                let slope = root.line.field_slope.abs();
                if slope < 1e-9 {
                    continue;
                }
                let sigma_b = sigma_nu / slope;
                let scale = w_theta * w_d * root.line.amplitude / slope;
                deposit(&mut intensity, b_grid, step, root.field, sigma_b, scale);
            }
        }
    }
    Spectrum::new(b_grid.to_vec(), intensity)
}

// Adds `scale·N(B; centre, sigma)` over ±7σ. A frequency-domain Gaussian of
// width σ_ν seen through ν(B) ≈ ν_r + s·(B − B_r) is N(B; B_r, σ_ν/s)/s.
fn deposit(out: &mut [f64], grid: &[f64], step: f64, centre: f64, sigma: f64, scale: f64) {
    let reach = 7.0 * sigma;
    let lo = ((centre - reach - grid[0]) / step).floor().max(0.0) as usize;
    let hi = (((centre + reach - grid[0]) / step).ceil().max(0.0) as usize + 1).min(grid.len());
    for i in lo.min(grid.len())..hi {
        out[i] += scale * gaussian(grid[i] - centre, sigma);
    }
}

pub(crate) fn strain_nodes(sys: &SpinSystem, numerics: &Numerics) -> GaussianNodes {
    GaussianNodes::uniform(sys.d, fwhm_to_sigma(sys.d_strain_fwhm), numerics.strain_nodes, numerics.strain_span)
}

/// How the weights of an [`OrientationDistribution`] have been scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// ∫ P(θ) dθ = 1 over [0, π].
    UnitArea,
    /// max P(θ) = 1; for plotting only.
    Peak,
    /// Weights of individual grid points sum to one (point distributions).
    Discrete,
}

/// Per-transition weights of one transition (level pair) on the θ grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchWeights {
    pub transition: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationDistribution {
    pub theta: Vec<f64>,
    pub branches: Vec<BranchWeights>,
    pub normalization: Normalization,
}

impl OrientationDistribution {
    /// Builds a unit-area distribution from raw per-transition weights.
    pub fn from_weights(theta: Vec<f64>, branches: Vec<BranchWeights>) -> Result<Self> {
        if branches.iter().any(|b| b.weights.len() != theta.len()) {
            return Err(Error::invalid("distribution", "weights must match the theta grid"));
        }
        if branches.iter().flat_map(|b| &b.weights).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("distribution", "weights must be finite and non-negative"));
        }
        let mut dist = Self { theta, branches, normalization: Normalization::UnitArea };
        let area = dist.area();
        if !(area > 0.0) {
            return Err(Error::NoResonantPopulation);
        }
        for b in &mut dist.branches {
            b.weights.iter_mut().for_each(|w| *w /= area);
        }
        Ok(dist)
    }

    /// All weight at a single orientation on one transition.
    pub fn point(theta: f64, transition: usize) -> Self {
        Self {
            theta: vec![theta],
            branches: vec![BranchWeights { transition, weights: vec![1.0] }],
            normalization: Normalization::Discrete,
        }
    }

    /// Summed weight over transitions at each θ.
    pub fn total(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.theta.len()];
        for b in &self.branches {
            for (o, w) in out.iter_mut().zip(&b.weights) {
                *o += w;
            }
        }
        out
    }

    /// Integration weights for sums over this distribution's θ grid.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        match self.normalization {
            Normalization::Discrete => vec![1.0; self.theta.len()],
            _ => trapezoid_weights(&self.theta),
        }
    }

    /// `Σ_θ q(θ)·P(θ)`: the integral for grids, the plain sum for point sets.
    pub fn area(&self) -> f64 {
        self.quadrature_weights().iter().zip(self.total()).map(|(q, p)| q * p).sum()
    }

    pub fn peak_normalized(&self) -> Self {
        let peak = self.total().into_iter().fold(0.0, f64::max);
        let mut out = self.clone();
        if peak > 0.0 {
            for b in &mut out.branches {
                b.weights.iter_mut().for_each(|w| *w /= peak);
            }
        }
        out.normalization = Normalization::Peak;
        out
    }

    /// θ (radians) of the largest total weight.
    pub fn peak_theta(&self) -> f64 {
        let total = self.total();
        let (i, _) = total
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &w)| if w > acc.1 { (i, w) } else { acc });
        self.theta[i]
    }

    /// Largest |P(θ) − P(π − θ)| on a grid symmetric about π/2.
    pub fn asymmetry(&self) -> f64 {
        let total = self.total();
        let n = total.len();
        (0..n).map(|i| (total[i] - total[n - 1 - i]).abs()).fold(0.0, f64::max)
    }
}

/// Orientation selection at fixed B₀:
/// `P(θ) ∝ sinθ·Σ_tr ∫dD' G(D')·G_exc(ν_tr − ν_mw)·|amplitude|`, unit area over [0, π].
pub fn orientation_distribution(
    sys: &SpinSystem,
    mw_freq_ghz: f64,
    b0: f64,
    excitation_fwhm: f64,
    numerics: &Numerics,
) -> Result<OrientationDistribution> {
    let nu_mw = check_mw(mw_freq_ghz)?;
    if !(excitation_fwhm > 0.0) {
        return Err(Error::invalid("excitation_fwhm", "must be positive"));
    }
    if !(b0 >= 0.0) {
        return Err(Error::invalid("B0", "must be non-negative"));
    }
    numerics.validate()?;
    let sigma_exc = fwhm_to_sigma(excitation_fwhm);
    let nu_b = sys.zeeman_frequency(b0);
    let theta = numerics.theta_grid();
    let strain = strain_nodes(sys, numerics);
    let mut weights = [vec![0.0; theta.len()], vec![0.0; theta.len()], vec![0.0; theta.len()]];
    let mut closest = f64::INFINITY;
    for (i, &t) in theta.iter().enumerate() {
        let sin_t = t.sin();
        for (d, w_d) in strain.iter() {
            for line in lines_at(&sys.with_d(d), nu_b, t).into_iter().flatten() {
                let z = (line.frequency - nu_mw) / sigma_exc;
                closest = closest.min(z.abs());
                let k = line.pair_index();
                weights[k][i] += sin_t * w_d * (-0.5 * z * z).exp() * line.amplitude.abs();
            }
        }
    }
    if closest > RESONANT_SIGMAS {
        return Err(Error::NoResonantPopulation);
    }
    let branches = weights
        .into_iter()
        .enumerate()
        .filter(|(_, w)| w.iter().any(|&v| v > 0.0))
        .map(|(transition, weights)| BranchWeights { transition, weights })
        .collect();
    OrientationDistribution::from_weights(theta, branches)
}

/// `E·cosθ·P(θ)` in V/m on the distribution's grid (E parallel to B₀).
pub fn effective_field_profile(dist: &OrientationDistribution, e_field: f64) -> Result<Vec<(f64, f64)>> {
    if !(e_field >= 0.0) {
        return Err(Error::invalid("E", "must be non-negative"));
    }
    Ok(dist.theta.iter().zip(dist.total()).map(|(&t, p)| (t, e_field * t.cos() * p)).collect())
}

/// Named measurement positions on the field-swept spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldPosition {
    Z,
    Int,
    XY,
}

impl FieldPosition {
    pub const ALL: [FieldPosition; 3] = [FieldPosition::Z, FieldPosition::Int, FieldPosition::XY];

    pub fn label(&self) -> &'static str {
        match self {
            FieldPosition::Z => "Z",
            FieldPosition::Int => "Int",
            FieldPosition::XY => "XY",
        }
    }
}

impl fmt::Display for FieldPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FieldPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "z" => Ok(FieldPosition::Z),
            "int" | "int." => Ok(FieldPosition::Int),
            "xy" => Ok(FieldPosition::XY),
            other => Err(Error::invalid("position", format!("unknown field position `{other}`"))),
        }
    }
}

/// Resolved fields (mT) of the three measurement positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPositions {
    pub z: f64,
    pub int: f64,
    pub xy: f64,
}

impl FieldPositions {
    pub fn get(&self, pos: FieldPosition) -> f64 {
        match pos {
            FieldPosition::Z => self.z,
            FieldPosition::Int => self.int,
            FieldPosition::XY => self.xy,
        }
    }
}

/// Features of the outermost lobe of a spectrum, seen from one end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFeatures {
    /// Steepest point of the outer edge: the θ=0 turning point.
    pub inflection: f64,
    /// Onset of the edge (largest curvature outside the inflection).
    pub knee: f64,
    /// Maximum of the lobe.
    pub lobe_peak: f64,
    /// Sign of the lobe (+1 absorptive, −1 emissive).
    pub sign: f64,
}

/// Analyses the outer lobe at the low-field (`from_high = false`) or
/// high-field end of `spectrum`. The grid must be uniform.
pub fn edge_features(spectrum: &Spectrum, from_high: bool) -> Result<EdgeFeatures> {
    let mut b = spectrum.field.clone();
    let mut s = spectrum.intensity.clone();
    if from_high {
        b.reverse();
        s.reverse();
    }
    let smax = spectrum.max_abs();
    if !(smax > 0.0) {
        return Err(Error::NoResonantPopulation);
    }
    let n = s.len();
    let start = s.iter().position(|v| v.abs() > 0.02 * smax).ok_or(Error::NoResonantPopulation)?;
    let sign = s[start].signum();
    let f: Vec<f64> = s.iter().map(|v| sign * v).collect();
    let end = (start..n).find(|&i| f[i] < 0.0).unwrap_or(n);
    let peak = (start..end).fold(start, |best, i| if f[i] > f[best] { i } else { best });
    // Derivatives along the scan direction (index steps).
    let d1 = |i: usize| 0.5 * (f[i + 1] - f[i - 1]);
    let d2 = |i: usize| f[i + 1] - 2.0 * f[i] + f[i - 1];
    let lo = 1usize;
    let hi = peak.max(2).min(n - 2);
    let max_d1 = (lo..=hi).map(d1).fold(0.0, f64::max);
    let inflection = (lo.max(2)..hi)
        .find(|&i| {
            let v = d1(i);
            v > 0.1 * max_d1 && v >= d1(i - 1) && v > d1(i + 1)
        })
        .unwrap_or(hi);
    let knee = (lo..=inflection).fold(lo, |best, i| if d2(i) > d2(best) { i } else { best });
    Ok(EdgeFeatures { inflection: b[inflection], knee: b[knee], lobe_peak: b[peak], sign })
}

/// Fills in the positions left as `None` from the low-field lobe of `spectrum`:
/// Z at the knee of the outer edge, XY at the lobe maximum, Int halfway between.
pub fn resolve_field_positions(
    spectrum: &Spectrum,
    z: Option<f64>,
    int: Option<f64>,
    xy: Option<f64>,
) -> Result<FieldPositions> {
    if let (Some(z), Some(int), Some(xy)) = (z, int, xy) {
        return Ok(FieldPositions { z, int, xy });
    }
    let edge = edge_features(spectrum, false)?;
    let z = z.unwrap_or(edge.knee);
    let xy = xy.unwrap_or(edge.lobe_peak);
    let int = int.unwrap_or(0.5 * (z + xy));
    Ok(FieldPositions { z, int, xy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::linspace;
    use crate::spin::Populations;
    use std::f64::consts::PI;

    fn sharp() -> SpinSystem {
        SpinSystem { d_strain_fwhm: 0.0, ..SpinSystem::default() }
    }

    fn gmu() -> f64 {
        2.0 * crate::spin::MU_B_OVER_H
    }

    #[test]
    fn theta_zero_resonances() {
        let s = sharp();
        let roots = resonance_fields(&s, 9.7, 0.0, FieldWindow::covering(&s, 9.7), &Numerics::default()).unwrap();
        assert_eq!(roots.len(), 2);
        let lo = (9700.0 - 317.0) / gmu();
        let hi = (9700.0 + 317.0) / gmu();
        assert!((roots[0].field - 335.20).abs() < 0.005, "{}", roots[0].field);
        assert!((roots[1].field - 357.85).abs() < 0.005, "{}", roots[1].field);
        assert!((roots[0].field - lo).abs() < 1e-4);
        assert!((roots[1].field - hi).abs() < 1e-4);
        assert_eq!(roots[0].polarity, Polarity::Absorptive);
        assert_eq!(roots[1].polarity, Polarity::Emissive);
    }

    #[test]
    fn perpendicular_resonances_match_closed_form() {
        // Closed-form θ=π/2 transitions: D/2 + r − D and r − D/2 with r = √(D²/4 + ν_B²).
        let s = sharp();
        let roots = resonance_fields(&s, 9.7, FRAC_PI_2, FieldWindow::covering(&s, 9.7), &Numerics::default()).unwrap();
        assert_eq!(roots.len(), 2);
        let d = 317.0f64;
        let nu = 9700.0f64;
        let lo = (nu * nu - nu * d).sqrt() / gmu();
        let hi = (nu * nu + nu * d).sqrt() / gmu();
        assert!((roots[0].field - lo).abs() < 1e-4);
        assert!((roots[1].field - hi).abs() < 1e-4);
    }

    #[test]
    fn isotropic_limit_single_field() {
        let s = SpinSystem { d: 0.0, ..sharp() };
        let b_iso = 9700.0 / gmu();
        for theta in [0.0, 0.7, FRAC_PI_2] {
            let roots = resonance_fields(&s, 9.7, theta, FieldWindow::new(300.0, 400.0).unwrap(), &Numerics::default())
                .unwrap();
            assert!(!roots.is_empty());
            for r in roots {
                assert!((r.field - b_iso).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn window_without_crossings_is_empty() {
        let s = sharp();
        let roots = resonance_fields(&s, 9.7, 0.3, FieldWindow::new(100.0, 120.0).unwrap(), &Numerics::default()).unwrap();
        assert!(roots.is_empty());
        assert!(resonance_fields(&s, 0.0, 0.3, FieldWindow::new(100.0, 120.0).unwrap(), &Numerics::default()).is_err());
    }

    #[test]
    fn resonance_map_spread_and_symmetry() {
        let s = sharp();
        let grid = linspace(0.0, PI, 181);
        let map = angular_resonance_map(&s, 9.7, &grid, FieldWindow::covering(&s, 9.7), &Numerics::default()).unwrap();
        let first: Vec<f64> = map.iter().filter(|b| b.theta[0] == 0.0).map(|b| b.field[0]).collect();
        let spread = first.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - first.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((spread - 2.0 * 317.0 / gmu()).abs() < 1e-3);
        assert!((spread - 22.65).abs() < 0.01);
        for b in &map {
            let n = b.len();
            if n == grid.len() {
                for i in 0..n {
                    assert!((b.field[i] - b.field[n - 1 - i]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn resonance_map_isotropic_is_flat() {
        let s = SpinSystem { d: 0.0, ..sharp() };
        let grid = linspace(0.0, FRAC_PI_2, 31);
        let map = angular_resonance_map(&s, 9.7, &grid, FieldWindow::new(330.0, 360.0).unwrap(), &Numerics::default())
            .unwrap();
        assert!(!map.is_empty());
        for b in map {
            let f0 = b.field[0];
            assert!(b.field.iter().all(|f| (f - f0).abs() < 1e-4));
        }
    }

    #[test]
    fn resonance_map_requires_half_range() {
        let s = sharp();
        let grid = linspace(0.0, 1.0, 11);
        assert!(angular_resonance_map(&s, 9.7, &grid, FieldWindow::covering(&s, 9.7), &Numerics::default()).is_err());
    }

    #[test]
    fn unpolarized_spectrum_vanishes() {
        let s = SpinSystem { populations: Populations::unpolarized(), ..SpinSystem::default() };
        let n = Numerics { theta_points: 91, strain_nodes: 5, ..Numerics::default() };
        let grid = linspace(325.0, 370.0, 181);
        let spec = edfs_spectrum(&s, 9.7, &grid, 30.0, &n).unwrap();
        assert!(spec.max_abs() < 1e-12);
    }

    #[test]
    fn spectrum_rejects_bad_inputs() {
        let s = sharp();
        let n = Numerics::default();
        assert!(edfs_spectrum(&s, 9.7, &[330.0, 331.0, 332.0], 0.0, &n).is_err());
        assert!(edfs_spectrum(&s, 9.7, &[330.0, 330.0, 332.0], 10.0, &n).is_err());
    }

    #[test]
    fn distribution_unit_area_and_symmetric() {
        let n = Numerics { theta_points: 361, ..Numerics::default() };
        let d = orientation_distribution(&SpinSystem::default(), 9.7, 340.0, 30.0, &n).unwrap();
        assert!((d.area() - 1.0).abs() < 1e-12);
        assert!(d.asymmetry() < 1e-6);
        assert_eq!(d.normalization, Normalization::UnitArea);
    }

    #[test]
    fn distribution_off_resonance_is_an_error() {
        let r = orientation_distribution(&SpinSystem::default(), 9.7, 200.0, 30.0, &Numerics::default());
        assert!(matches!(r, Err(Error::NoResonantPopulation)));
    }

    #[test]
    fn wide_excitation_recovers_powder_weight() {
        // Unlimited bandwidth: every molecule resonates and P(θ) ∝ sinθ·Σ|a|.
        let s = sharp();
        let n = Numerics { theta_points: 181, strain_nodes: 1, ..Numerics::default() };
        let d = orientation_distribution(&s, 9.7, 346.5, 1e7, &n).unwrap();
        let total = d.total();
        let reference = |t: f64| {
            let a: f64 = crate::spin::transition_lines(&s, 346.5, t).unwrap().iter().map(|l| l.amplitude.abs()).sum();
            t.sin() * a
        };
        let scale = total[45] / reference(d.theta[45]);
        for (i, &t) in d.theta.iter().enumerate() {
            assert!((total[i] - scale * reference(t)).abs() < 1e-9, "theta index {i}");
        }
    }

    #[test]
    fn effective_field_profile_cases() {
        let theta = linspace(0.0, PI, 721);
        let half_sin: Vec<f64> = theta.iter().map(|t| 0.5 * t.sin()).collect();
        let d = OrientationDistribution::from_weights(
            theta.clone(),
            vec![BranchWeights { transition: 0, weights: half_sin }],
        )
        .unwrap();
        let prof = effective_field_profile(&d, 1.5e6).unwrap();
        let q = trapezoid_weights(&theta);
        let integral: f64 = prof.iter().zip(&q).map(|((_, v), w)| v * w).sum();
        assert!(integral.abs() < 1e-6 * 1.5e6);
        assert!(effective_field_profile(&d, 0.0).unwrap().iter().all(|(_, v)| *v == 0.0));
        assert!(effective_field_profile(&d, -1.0).is_err());
    }

    #[test]
    fn point_distribution() {
        let d = OrientationDistribution::point(0.0, 1);
        assert_eq!(d.area(), 1.0);
        assert_eq!(d.peak_theta(), 0.0);
    }

    #[test]
    fn edge_features_on_synthetic_step() {
        // Logistic step at 335 mT rising into a peak at 341 mT, then a negative lobe.
        let grid = linspace(320.0, 350.0, 3001);
        let inten: Vec<f64> = grid
            .iter()
            .map(|&b| {
                let step = 0.3 / (1.0 + (-(b - 335.0) / 0.6).exp());
                let peak = (-(b - 341.0f64).powi(2) / 2.0).exp();
                let tail = if b > 344.0 { -2.0 * (b - 344.0) } else { 0.0 };
                step + peak + tail
            })
            .collect();
        let spec = Spectrum::new(grid, inten).unwrap();
        let e = edge_features(&spec, false).unwrap();
        assert!((e.inflection - 335.0).abs() < 0.1, "{e:?}");
        // Logistic curvature peaks at the centre − 0.6·ln(2 + √3).
        assert!((e.knee - (335.0 - 0.6 * (2.0 + 3f64.sqrt()).ln())).abs() < 0.05, "{e:?}");
        assert!((e.lobe_peak - 341.0).abs() < 0.1);
        assert_eq!(e.sign, 1.0);
    }

    #[test]
    fn position_labels_parse() {
        assert_eq!("z".parse::<FieldPosition>().unwrap(), FieldPosition::Z);
        assert_eq!("Int".parse::<FieldPosition>().unwrap(), FieldPosition::Int);
        assert_eq!("XY".parse::<FieldPosition>().unwrap(), FieldPosition::XY);
        assert!("auto".parse::<FieldPosition>().is_err());
    }
}
