//! Spin-electric coupling and the E-field-modulated Hahn echo.
//!
//! An E-field pulse of duration `t_E` starts right after the π/2 pulse and
//! shifts D by `δD = κ·E·cos(angle between E and the molecular axis)`. The
//! phase `2π·δf·t` acquired before the π pulse is inverted by it, so a pulse
//! that outlasts τ refocuses: the effective time is `t_E` up to τ and `2τ − t_E`
//! after. The echo is the orientation-, transition- and κ-weighted sum of
//! `exp(i·2π·δf·t_eff)`, normalised to 1 at `t_E = 0`.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::Complex;

use crate::powder::OrientationDistribution;
use crate::quadrature::GaussianNodes;
use crate::spin::{axial_eigen, lines_at, pair_d_slopes, SpinSystem, PAIRS};
use crate::{Error, Numerics, Result};

/// Hz → MHz.
const HZ_TO_MHZ: f64 = 1e-6;

/// Below this overlap a level of the perturbed Hamiltonian is not matched.
const PAIRING_OVERLAP: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecParams {
    /// Mean coupling, Hz/(V/m).
    pub kappa: f64,
    /// Gaussian spread of κ over the ensemble, Hz/(V/m).
    pub sigma_kappa: f64,
}

impl SecParams {
    pub fn new(kappa: f64, sigma_kappa: f64) -> Result<Self> {
        let p = Self { kappa, sigma_kappa };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.kappa.is_finite() {
            return Err(Error::invalid("kappa", "must be finite"));
        }
        if !(self.sigma_kappa >= 0.0) || !self.sigma_kappa.is_finite() {
            return Err(Error::invalid("sigma_kappa", "must be non-negative"));
        }
        Ok(())
    }

    fn nodes(&self, n: usize) -> GaussianNodes {
        GaussianNodes::hermite(self.kappa, self.sigma_kappa, n)
    }
}

impl Default for SecParams {
    fn default() -> Self {
        Self { kappa: 0.59, sigma_kappa: 0.15 }
    }
}

/// Direction of the applied E-field relative to B₀.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldGeometry {
    Parallel,
    Perpendicular,
}

impl FieldGeometry {
    pub const ALL: [FieldGeometry; 2] = [FieldGeometry::Parallel, FieldGeometry::Perpendicular];

    pub fn label(&self) -> &'static str {
        match self {
            FieldGeometry::Parallel => "par",
            FieldGeometry::Perpendicular => "perp",
        }
    }
}

impl fmt::Display for FieldGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FieldGeometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "par" | "parallel" => Ok(FieldGeometry::Parallel),
            "perp" | "perpendicular" => Ok(FieldGeometry::Perpendicular),
            other => Err(Error::invalid("geometry", format!("unknown geometry `{other}`"))),
        }
    }
}

/// How the frequency shift of a transition follows from δD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftModel {
    /// `δf = (∂ν/∂D)·δD`: the part of the eigenvalue difference linear in E.
    #[default]
    Linear,
    /// `δf = ν(D + δD) − ν(D)` from two full diagonalisations per term.
    Exact,
}

impl FromStr for ShiftModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(ShiftModel::Linear),
            "exact" => Ok(ShiftModel::Exact),
            other => Err(Error::invalid("shift_model", format!("unknown model `{other}`"))),
        }
    }
}

impl fmt::Display for ShiftModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShiftModel::Linear => "linear",
            ShiftModel::Exact => "exact",
        })
    }
}

/// `δD = κ·E·cos_angle`, returned in MHz (κ in Hz/(V/m), E in V/m).
pub fn delta_d(e_field: f64, cos_angle: f64, kappa: f64) -> Result<f64> {
    if !(cos_angle.abs() <= 1.0) {
        return Err(Error::invalid("cos_angle", format!("{cos_angle} outside [-1, 1]")));
    }
    Ok(kappa * e_field * cos_angle * HZ_TO_MHZ)
}

/// Cosine between the E-field and the molecular axis at orientation (θ, φ).
pub fn cos_angle_to_dipole(theta: f64, phi: f64, geometry: FieldGeometry) -> f64 {
    match geometry {
        FieldGeometry::Parallel => theta.cos(),
        FieldGeometry::Perpendicular => theta.sin() * phi.cos(),
    }
}

/// Frequency shift of one allowed transition of the unperturbed Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionShift {
    /// Level pair index in the unperturbed Hamiltonian.
    pub transition: usize,
    /// Unperturbed transition frequency, MHz.
    pub frequency: f64,
    /// `ν(D + δD) − ν(D)`, MHz.
    pub shift: f64,
}

/// Per-transition shifts from diagonalising `H(D)` and `H(D + δD)`. Levels of
/// the perturbed Hamiltonian are matched to the unperturbed ones by maximum
/// eigenvector overlap rather than by energy order.
pub fn delta_f(sys: &SpinSystem, b0: f64, theta: f64, dd: f64) -> Result<Vec<TransitionShift>> {
    if !(b0 >= 0.0) {
        return Err(Error::invalid("B0", "must be non-negative"));
    }
    if sys.d != 0.0 && dd.abs() > 0.1 * sys.d.abs() {
        log::warn!("|dD| = {} MHz exceeds 10% of |D|; perturbative pairing may be poor", dd.abs());
    }
    let nu_b = sys.zeeman_frequency(b0);
    let base = axial_eigen(sys.d, nu_b, theta);
    let pert = axial_eigen(sys.d + dd, nu_b, theta);
    let mut map = [0usize; 3];
    for (a, slot) in map.iter_mut().enumerate() {
        let va = base.vectors.column(a);
        let (best, overlap) = (0..3)
            .map(|b| (b, va.dot(&pert.vectors.column(b)).powi(2)))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if overlap < PAIRING_OVERLAP {
            return Err(Error::PairingAmbiguity { overlap });
        }
        *slot = best;
    }
    if map[0] == map[1] || map[1] == map[2] || map[0] == map[2] {
        return Err(Error::PairingAmbiguity { overlap: 0.0 });
    }
    let lines = lines_at(sys, nu_b, theta);
    Ok(lines
        .into_iter()
        .flatten()
        .map(|line| {
            let (i, j) = PAIRS[line.pair_index()];
            let perturbed = pert.energies[map[j]] - pert.energies[map[i]];
            TransitionShift { transition: line.pair_index(), frequency: line.frequency, shift: perturbed - line.frequency }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoMeta {
    pub position: Option<String>,
    pub b0: f64,
    pub geometry: FieldGeometry,
    pub e_field: f64,
    pub tau: f64,
    pub sec: SecParams,
    pub model: ShiftModel,
    /// Un-normalised echo at `t_E = 0` including `exp(−2τ/T₂)` when T₂ is known.
    pub absolute_scale: f64,
}

/// In-phase and quadrature echo versus E-pulse duration.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoCurve {
    /// Pulse durations, μs.
    pub t_e: Vec<f64>,
    pub in_phase: Vec<f64>,
    pub quadrature: Vec<f64>,
    pub meta: EchoMeta,
}

impl EchoCurve {
    /// In-phase value at the grid point nearest `t`.
    pub fn in_phase_at(&self, t: f64) -> f64 {
        let i = self
            .t_e
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &x)| if (x - t).abs() < acc.1 { (i, (x - t).abs()) } else { acc })
            .0;
        self.in_phase[i]
    }

    /// `1 − in_phase(τ)`.
    pub fn depth_at_tau(&self) -> f64 {
        1.0 - self.in_phase_at(self.meta.tau)
    }

    /// In-phase signal scaled back to absolute units.
    pub fn absolute_in_phase(&self) -> Vec<f64> {
        self.in_phase.iter().map(|v| v * self.meta.absolute_scale).collect()
    }
}

/// Largest |quadrature| over the curve.
pub fn quadrature_residual(curve: &EchoCurve) -> f64 {
    curve.quadrature.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy)]
struct Term {
    weight: f64,
    /// `(∂ν/∂D)·cos(angle)`: δf in MHz per MHz of κ·E.
    coupling: f64,
    theta: f64,
    transition: usize,
    cos_angle: f64,
}

/// Orientation/transition terms of the echo sum for one distribution, field
/// and geometry. Independent of κ, σ_κ, E and τ, so a fit builds it once.
#[derive(Debug, Clone)]
pub struct EchoKernel {
    sys: SpinSystem,
    b0: f64,
    geometry: FieldGeometry,
    terms: Vec<Term>,
    total_weight: f64,
    kappa_nodes: usize,
}

impl EchoKernel {
    pub fn new(
        sys: &SpinSystem,
        dist: &OrientationDistribution,
        b0: f64,
        geometry: FieldGeometry,
        numerics: &Numerics,
    ) -> Result<Self> {
        numerics.validate()?;
        let nu_b = sys.zeeman_frequency(b0);
        let qw = dist.quadrature_weights();
        let phi_groups = phi_groups(numerics.phi_points);
        let total = dist.area();
        if !(total > 0.0) {
            return Err(Error::NoResonantPopulation);
        }
        let cutoff = 1e-15 * total;
        let mut terms = Vec::new();
        for (i, &theta) in dist.theta.iter().enumerate() {
            let slopes = pair_d_slopes(sys.d, nu_b, theta);
            for branch in &dist.branches {
                let w = branch.weights[i] * qw[i];
                if w <= cutoff {
                    continue;
                }
                let slope = slopes[branch.transition];
                match geometry {
                    FieldGeometry::Parallel => {
                        let c = cos_angle_to_dipole(theta, 0.0, geometry);
                        terms.push(Term { weight: w, coupling: slope * c, theta, transition: branch.transition, cos_angle: c });
                    }
                    FieldGeometry::Perpendicular => {
                        for &(phi, frac) in &phi_groups {
                            let c = cos_angle_to_dipole(theta, phi, geometry);
                            terms.push(Term {
                                weight: w * frac,
                                coupling: slope * c,
                                theta,
                                transition: branch.transition,
                                cos_angle: c,
                            });
                        }
                    }
                }
            }
        }
        Ok(Self { sys: *sys, b0, geometry, terms, total_weight: total, kappa_nodes: numerics.kappa_nodes })
    }

    pub fn geometry(&self) -> FieldGeometry {
        self.geometry
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Weighted mean of |δf|/E in Hz/(V/m) at the mean κ (linear shifts).
    pub fn mean_abs_shift_per_field(&self, kappa: f64) -> f64 {
        let s: f64 = self.terms.iter().map(|t| t.weight * t.coupling.abs()).sum();
        kappa.abs() * s / self.total_weight
    }

    /// Complex echo, normalised to `S(0) = 1`, on the durations `t_grid` (μs).
    pub fn signal(
        &self,
        sec: &SecParams,
        e_field: f64,
        tau: f64,
        t_grid: &[f64],
        model: ShiftModel,
    ) -> Result<Vec<Complex<f64>>> {
        sec.validate()?;
        if !(e_field >= 0.0) {
            return Err(Error::invalid("E", "must be non-negative"));
        }
        if !(tau > 0.0) {
            return Err(Error::invalid("tau", "must be positive"));
        }
        // Distinct effective times; mirror points about τ share one entry.
        let mut unique: Vec<f64> = Vec::new();
        let mut slot_of: HashMap<i64, usize> = HashMap::new();
        let mut slots = Vec::with_capacity(t_grid.len());
        for &t in t_grid {
            if !(t >= -1e-12 && t <= 2.0 * tau + 1e-12) {
                return Err(Error::invalid("t_E", format!("{t} us outside [0, 2 tau]")));
            }
            let t_eff = if t <= tau { t } else { 2.0 * tau - t }.max(0.0);
            let key = (t_eff * 1e9).round() as i64;
            let slot = *slot_of.entry(key).or_insert_with(|| {
                unique.push(t_eff);
                unique.len() - 1
            });
            slots.push(slot);
        }
        let nodes = sec.nodes(self.kappa_nodes);
        let mut acc = vec![Complex::new(0.0, 0.0); unique.len()];
        match model {
            ShiftModel::Linear => {
                // Phase per unit coupling and unit t_eff for each κ node.
                let rates: Vec<(f64, f64)> =
                    nodes.iter().map(|(k, w)| (TAU * k * e_field * HZ_TO_MHZ, w)).collect();
                let phasor = Phasor::new(&unique);
                for term in &self.terms {
                    for &(rate, w) in &rates {
                        phasor.accumulate(&mut acc, rate * term.coupling, term.weight * w);
                    }
                }
            }
            ShiftModel::Exact => {
                let phasor = Phasor::new(&unique);
                for term in &self.terms {
                    for (k, w) in nodes.iter() {
                        let dd = delta_d(e_field, term.cos_angle, k)?;
                        let shift = delta_f(&self.sys, self.b0, term.theta, dd)?
                            .into_iter()
                            .find(|s| s.transition == term.transition)
                            .map_or(0.0, |s| s.shift);
                        phasor.accumulate(&mut acc, TAU * shift, term.weight * w);
                    }
                }
            }
        }
        Ok(slots.into_iter().map(|s| acc[s] / self.total_weight).collect())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn curve(
        &self,
        sec: &SecParams,
        e_field: f64,
        tau: f64,
        t_grid: &[f64],
        model: ShiftModel,
        t2: Option<f64>,
        position: Option<String>,
    ) -> Result<EchoCurve> {
        let s = self.signal(sec, e_field, tau, t_grid, model)?;
        let decay = match t2 {
            Some(t2) if t2 > 0.0 => (-2.0 * tau / t2).exp(),
            _ => 1.0,
        };
        Ok(EchoCurve {
            t_e: t_grid.to_vec(),
            in_phase: s.iter().map(|z| z.re).collect(),
            quadrature: s.iter().map(|z| z.im).collect(),
            meta: EchoMeta {
                position,
                b0: self.b0,
                geometry: self.geometry,
                e_field,
                tau,
                sec: *sec,
                model,
                absolute_scale: self.total_weight * decay,
            },
        })
    }
}

/// Adds `w·exp(iωu)` over a set of times. When the times are `0, h, 2h, …` in
/// order the phasor is advanced by repeated multiplication instead of one
/// `sin_cos` per point.
struct Phasor<'a> {
    times: &'a [f64],
    step: Option<f64>,
}

impl<'a> Phasor<'a> {
    fn new(times: &'a [f64]) -> Self {
        let step = match times {
            [first, second, ..] if *first == 0.0 && *second > 0.0 => {
                let h = *second;
                let uniform = times.iter().enumerate().all(|(n, &u)| (u - n as f64 * h).abs() <= 1e-9 * h);
                uniform.then_some(h)
            }
            _ => None,
        };
        Self { times, step }
    }

    #[inline]
    fn accumulate(&self, acc: &mut [Complex<f64>], omega: f64, w: f64) {
        match self.step {
            Some(h) => {
                let (s, c) = (omega * h).sin_cos();
                let rot = Complex::new(c, s);
                let mut z = Complex::new(w, 0.0);
                for a in acc.iter_mut() {
                    *a += z;
                    z *= rot;
                }
            }
            None => {
                for (a, &u) in acc.iter_mut().zip(self.times) {
                    let (s, c) = (omega * u).sin_cos();
                    a.re += w * c;
                    a.im += w * s;
                }
            }
        }
    }
}

/// Uniform φ grid over [0, 2π) folded onto distinct cosφ values:
/// `(φ, fraction of grid points)` with `cos(φ_m) = cos(φ_{N−m})`.
fn phi_groups(n: usize) -> Vec<(f64, f64)> {
    let mut groups: Vec<(f64, f64)> = Vec::new();
    for m in 0..n {
        let rep = m.min(n - m);
        let phi = TAU * rep as f64 / n as f64;
        match groups.iter_mut().find(|g| g.0 == phi) {
            Some(g) => g.1 += 1.0 / n as f64,
            None => groups.push((phi, 1.0 / n as f64)),
        }
    }
    groups
}

/// Echo curve for one distribution with the default linear shift model.
#[allow(clippy::too_many_arguments)]
pub fn echo_modulation(
    sys: &SpinSystem,
    sec: &SecParams,
    dist: &OrientationDistribution,
    e_field: f64,
    tau: f64,
    t_grid: &[f64],
    geometry: FieldGeometry,
    b0: f64,
    numerics: &Numerics,
) -> Result<EchoCurve> {
    EchoKernel::new(sys, dist, b0, geometry, numerics)?.curve(sec, e_field, tau, t_grid, ShiftModel::Linear, None, None)
}
