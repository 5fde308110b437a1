//! Axial S=1 spin Hamiltonian `H/h = D·Sz² + ν_B·(sinθ·Sx + cosθ·Sz)` for a
//! single molecular orientation.
//!
//! Matrices are written in the molecular-frame basis `|m_s = +1, 0, −1⟩`. The
//! Hamiltonian itself is real symmetric; the public [`HamiltonianMatrix`] is
//! stored as a complex Hermitian matrix so that [`eigenlevels`] accepts any
//! Hermitian input. The powder sums use the real path in this module directly.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{Complex, Matrix3, Vector3};

use crate::{Error, Result};

/// μ_B/h in MHz/mT (13.9962449 GHz/T).
pub const MU_B_OVER_H: f64 = 13.996_244_9;

/// Lines whose azimuth-averaged transition moment falls below this are dropped.
pub const LINE_THRESHOLD: f64 = 1e-6;

const HERMITIAN_TOL: f64 = 1e-10;

/// Zero-field sublevel populations of the photoexcited triplet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Populations {
    pub zero: f64,
    pub plus: f64,
    pub minus: f64,
}

impl Populations {
    pub fn new(zero: f64, plus: f64, minus: f64) -> Result<Self> {
        let p = Self { zero, plus, minus };
        for (name, v) in [("p0", zero), ("p_plus", plus), ("p_minus", minus)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("population {v} outside [0, 1]")));
            }
        }
        let sum = zero + plus + minus;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("populations", format!("sum to {sum}, expected 1")));
        }
        Ok(p)
    }

    /// Largest population difference between any two levels.
    pub fn polarization(&self) -> f64 {
        let p = [self.zero, self.plus, self.minus];
        p.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) - p.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }

    pub fn unpolarized() -> Self {
        Self { zero: 1.0 / 3.0, plus: 1.0 / 3.0, minus: 1.0 / 3.0 }
    }

    /// Populations in basis order `|+1⟩, |0⟩, |−1⟩`.
    pub fn basis_order(&self) -> [f64; 3] {
        [self.plus, self.zero, self.minus]
    }
}

impl Default for Populations {
    /// 95 % in |0⟩, 2.5 % in each of |±1⟩.
    fn default() -> Self {
        Self { zero: 0.95, plus: 0.025, minus: 0.025 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinSystem {
    pub g: f64,
    /// Signed axial zero-field splitting, MHz.
    pub d: f64,
    /// FWHM of the Gaussian D distribution, MHz.
    pub d_strain_fwhm: f64,
    pub populations: Populations,
}

impl SpinSystem {
    pub fn new(g: f64, d: f64, d_strain_fwhm: f64, populations: Populations) -> Result<Self> {
        let sys = Self { g, d, d_strain_fwhm, populations };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0) || !self.g.is_finite() {
            return Err(Error::invalid("g", "must be positive"));
        }
        if !self.d.is_finite() {
            return Err(Error::invalid("D", "must be finite"));
        }
        if !(self.d_strain_fwhm >= 0.0) || !self.d_strain_fwhm.is_finite() {
            return Err(Error::invalid("D_strain_fwhm", "must be non-negative"));
        }
        let p = self.populations;
        Populations::new(p.zero, p.plus, p.minus)?;
        Ok(())
    }

    /// Electron Zeeman frequency ν_B = g·(μ_B/h)·B₀ in MHz for `b0` in mT.
    pub fn zeeman_frequency(&self, b0: f64) -> f64 {
        self.g * MU_B_OVER_H * b0
    }

    /// Field (mT) at which the Zeeman frequency equals `freq` (MHz).
    pub fn field_for_frequency(&self, freq: f64) -> f64 {
        freq / (self.g * MU_B_OVER_H)
    }

    /// Same system with a different D, used by the strain and SEC sums.
    pub fn with_d(&self, d: f64) -> Self {
        Self { d, ..*self }
    }
}

impl Default for SpinSystem {
    fn default() -> Self {
        Self { g: 2.0, d: 317.0, d_strain_fwhm: 150.0, populations: Populations::default() }
    }
}

/// Direction of the molecular z-axis relative to B₀.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    pub theta: f64,
    pub phi: f64,
}

impl Orientation {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=std::f64::consts::PI).contains(&theta) {
            return Err(Error::invalid("theta", format!("{theta} outside [0, pi]")));
        }
        if !(0.0..std::f64::consts::TAU).contains(&phi) {
            return Err(Error::invalid("phi", format!("{phi} outside [0, 2pi)")));
        }
        Ok(Self { theta, phi })
    }
}

/// Spin-1 operators in the `|+1, 0, −1⟩` basis.
pub mod operators {
    use super::*;

    pub fn sx() -> Matrix3<f64> {
        let s = FRAC_1_SQRT_2;
        Matrix3::new(0.0, s, 0.0, s, 0.0, s, 0.0, s, 0.0)
    }

    pub fn sy() -> Matrix3<Complex<f64>> {
        let s = FRAC_1_SQRT_2;
        let z = Complex::new(0.0, 0.0);
        let pi = Complex::new(0.0, s);
        Matrix3::new(z, -pi, z, pi, z, -pi, z, pi, z)
    }

    pub fn sz() -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, -1.0))
    }
}

/// `H/h` in MHz, Hermitian, in the molecular `|+1, 0, −1⟩` basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianMatrix(pub Matrix3<Complex<f64>>);

impl HamiltonianMatrix {
    pub fn matrix(&self) -> &Matrix3<Complex<f64>> {
        &self.0
    }

    /// Largest |H_ij − conj(H_ji)| in MHz.
    pub fn hermitian_deviation(&self) -> f64 {
        let m = &self.0;
        let mut dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn trace(&self) -> Complex<f64> {
        self.0.trace()
    }
}

fn real_hamiltonian(d: f64, nu_b: f64, theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    let x = nu_b * s * FRAC_1_SQRT_2;
    Matrix3::new(d + nu_b * c, x, 0.0, x, 0.0, x, 0.0, x, d - nu_b * c)
}

pub fn build_hamiltonian(sys: &SpinSystem, b0: f64, theta: f64) -> Result<HamiltonianMatrix> {
    if !(b0 >= 0.0) {
        return Err(Error::invalid("B0", format!("field {b0} mT must be non-negative")));
    }
    let h = real_hamiltonian(sys.d, sys.zeeman_frequency(b0), theta);
    Ok(HamiltonianMatrix(h.map(|v| Complex::new(v, 0.0))))
}

/// Energies (ascending) and matching orthonormal eigenvectors (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Eigensystem {
    pub energies: [f64; 3],
    pub vectors: Matrix3<Complex<f64>>,
}

pub fn eigenlevels(h: &HamiltonianMatrix) -> Result<Eigensystem> {
    let scale = h.0.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let dev = h.hermitian_deviation();
    if dev > HERMITIAN_TOL.max(1e-14 * scale) {
        return Err(Error::NonHermitian { deviation: dev });
    }
    let eig = h.0.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies = order.map(|k| eig.eigenvalues[k]);
    let vectors = Matrix3::from_columns(&order.map(|k| eig.eigenvectors.column(k).into_owned()));
    Ok(Eigensystem { energies, vectors })
}

/// Closed-form levels for the two canonical orientations, sorted ascending.
pub fn analytic_levels_axial(d: f64, nu_b: f64, theta: f64) -> Result<[f64; 3]> {
    let mut levels = if theta == 0.0 {
        [d - nu_b, 0.0, d + nu_b]
    } else if theta == std::f64::consts::FRAC_PI_2 {
        let r = (0.25 * d * d + nu_b * nu_b).sqrt();
        [0.5 * d - r, d, 0.5 * d + r]
    } else {
        return Err(Error::UnsupportedAngle(theta));
    };
    levels.sort_by(f64::total_cmp);
    Ok(levels)
}

/// Real eigen-decomposition used on the hot paths.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RealEigen {
    pub energies: [f64; 3],
    pub vectors: Matrix3<f64>,
}

pub(crate) fn axial_eigen(d: f64, nu_b: f64, theta: f64) -> RealEigen {
    let eig = real_hamiltonian(d, nu_b, theta).symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    RealEigen {
        energies: order.map(|k| eig.eigenvalues[k]),
        vectors: Matrix3::from_columns(&order.map(|k| eig.eigenvectors.column(k).into_owned())),
    }
}

/// Sorted eigenvalues only; cheaper than a full decomposition.
pub(crate) fn axial_levels(d: f64, nu_b: f64, theta: f64) -> [f64; 3] {
    let ev = real_hamiltonian(d, nu_b, theta).symmetric_eigenvalues();
    let mut e = [ev[0], ev[1], ev[2]];
    e.sort_by(f64::total_cmp);
    e
}

/// ∂ν/∂D of the three level pairs `(0,1), (1,2), (0,2)` by Hellmann–Feynman:
/// `⟨j|Sz²|j⟩ − ⟨i|Sz²|i⟩`.
pub(crate) fn pair_d_slopes(d: f64, nu_b: f64, theta: f64) -> [f64; 3] {
    let v = axial_eigen(d, nu_b, theta).vectors;
    let sz2 = |i: usize| v[(0, i)].powi(2) + v[(2, i)].powi(2);
    PAIRS.map(|(i, j)| sz2(j) - sz2(i))
}

/// Eigenstate populations after sudden projection of the zero-field |m_s⟩
/// populations: `pop_i = Σ_m p_m·|⟨i|m⟩|²`.
pub fn project_populations(sys: &SpinSystem, vectors: &Matrix3<Complex<f64>>) -> [f64; 3] {
    let p = sys.populations.basis_order();
    std::array::from_fn(|i| (0..3).map(|m| p[m] * vectors[(m, i)].norm_sqr()).sum())
}

fn project_real(p: &[f64; 3], vectors: &Matrix3<f64>) -> [f64; 3] {
    std::array::from_fn(|i| (0..3).map(|m| p[m] * vectors[(m, i)].powi(2)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionLine {
    /// `E_upper − E_lower`, MHz.
    pub frequency: f64,
    /// `(pop_lower − pop_upper)·matrix_element_sq`; positive is absorptive.
    pub amplitude: f64,
    pub lower: usize,
    pub upper: usize,
    /// `½(|⟨j|Sx'|i⟩|² + |⟨j|Sy'|i⟩|²)` with x', y' ⊥ B₀.
    pub matrix_element_sq: f64,
    /// ∂frequency/∂D (dimensionless), from ⟨Sz²⟩ of the two levels.
    pub d_slope: f64,
    /// ∂frequency/∂B₀, MHz/mT.
    pub field_slope: f64,
}

impl TransitionLine {
    pub fn is_emissive(&self) -> bool {
        self.amplitude < 0.0
    }

    /// Index of the level pair among `(0,1), (1,2), (0,2)`.
    pub fn pair_index(&self) -> usize {
        pair_index(self.lower, self.upper)
    }
}

pub(crate) const PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];

pub(crate) fn pair_index(lower: usize, upper: usize) -> usize {
    match (lower, upper) {
        (0, 1) => 0,
        (1, 2) => 1,
        (0, 2) => 2,
        _ => unreachable!("levels are indexed 0..3"),
    }
}

/// Allowed EPR lines at one orientation; `lines[k]` is `None` for a dropped pair.
pub(crate) fn lines_at(sys: &SpinSystem, nu_b: f64, theta: f64) -> [Option<TransitionLine>; 3] {
    let eig = axial_eigen(sys.d, nu_b, theta);
    lines_from_eigen(sys, &eig, theta)
}

pub(crate) fn lines_from_eigen(
    sys: &SpinSystem,
    eig: &RealEigen,
    theta: f64,
) -> [Option<TransitionLine>; 3] {
    let (s, c) = theta.sin_cos();
    let sx = operators::sx();
    let sz = operators::sz();
    let sx_lab = sx * c - sz * s;
    // Sy = −i·K with K real antisymmetric, so |⟨j|Sy|i⟩|² = (v_jᵀ K v_i)².
    let k = FRAC_1_SQRT_2;
    let sy_k = Matrix3::new(0.0, k, 0.0, -k, 0.0, k, 0.0, -k, 0.0);
    let n_dot_s = sx * s + sz * c;
    let pops = project_real(&sys.populations.basis_order(), &eig.vectors);
    let v = &eig.vectors;
    let sz2 = |i: usize| v[(0, i)].powi(2) + v[(2, i)].powi(2);
    let zee = |i: usize| {
        let col = v.column(i);
        col.dot(&(n_dot_s * col))
    };
    let gmu = sys.g * MU_B_OVER_H;
    PAIRS.map(|(i, j)| {
        let frequency = eig.energies[j] - eig.energies[i];
        if frequency <= 1e-9 {
            return None;
        }
        let vi = v.column(i);
        let vj = v.column(j);
        let mx = vj.dot(&(sx_lab * vi));
        let my = vj.dot(&(sy_k * vi));
        let matrix_element_sq = 0.5 * (mx * mx + my * my);
        if matrix_element_sq < LINE_THRESHOLD {
            return None;
        }
        Some(TransitionLine {
            frequency,
            amplitude: (pops[i] - pops[j]) * matrix_element_sq,
            lower: i,
            upper: j,
            matrix_element_sq,
            d_slope: sz2(j) - sz2(i),
            field_slope: gmu * (zee(j) - zee(i)),
        })
    })
}

pub fn transition_lines(sys: &SpinSystem, b0: f64, theta: f64) -> Result<Vec<TransitionLine>> {
    if !(b0 >= 0.0) {
        return Err(Error::invalid("B0", format!("field {b0} mT must be non-negative")));
    }
    Ok(lines_at(sys, sys.zeeman_frequency(b0), theta).into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn sys() -> SpinSystem {
        SpinSystem { d_strain_fwhm: 0.0, ..SpinSystem::default() }
    }

    #[test]
    fn zero_field_hamiltonian_is_diagonal() {
        let h = build_hamiltonian(&sys(), 0.0, 0.0).unwrap();
        let m = h.matrix();
        assert_eq!(m[(0, 0)].re, 317.0);
        assert_eq!(m[(1, 1)].re, 0.0);
        assert_eq!(m[(2, 2)].re, 317.0);
        assert_eq!(m[(0, 1)].norm() + m[(1, 2)].norm() + m[(0, 2)].norm(), 0.0);
    }

    #[test]
    fn high_field_axial_hamiltonian() {
        let h = build_hamiltonian(&sys(), 340.0, 0.0).unwrap();
        let nu_b = 2.0 * MU_B_OVER_H * 340.0;
        assert!((nu_b - 9517.4465).abs() < 1e-3);
        let m = h.matrix();
        assert!((m[(0, 0)].re - (317.0 + nu_b)).abs() < 1e-9);
        assert!((m[(2, 2)].re - (317.0 - nu_b)).abs() < 1e-9);
        assert!((h.trace().re - 634.0).abs() < 1e-9);
    }

    #[test]
    fn hamiltonian_trace_and_hermiticity() {
        for &theta in &[0.0, 0.3, 1.1, FRAC_PI_2, 2.7, PI] {
            let h = build_hamiltonian(&sys(), 345.0, theta).unwrap();
            assert!(h.hermitian_deviation() < 1e-12);
            assert!((h.trace().re - 2.0 * 317.0).abs() < 1e-9);
            assert_eq!(h.trace().im, 0.0);
        }
    }

    #[test]
    fn negative_field_rejected() {
        assert!(build_hamiltonian(&sys(), -1.0, 0.0).is_err());
    }

    #[test]
    fn eigenlevels_theta_zero_and_perpendicular() {
        let nu_b = 9517.45;
        let b0 = nu_b / (2.0 * MU_B_OVER_H);
        let e0 = eigenlevels(&build_hamiltonian(&sys(), b0, 0.0).unwrap()).unwrap();
        let expect = [-9200.45, 0.0, 9834.45];
        for (a, b) in e0.energies.iter().zip(expect) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        let e90 = eigenlevels(&build_hamiltonian(&sys(), b0, FRAC_PI_2).unwrap()).unwrap();
        let r = (317.0f64.powi(2) / 4.0 + nu_b * nu_b).sqrt();
        assert!((r - 9518.7697).abs() < 1e-3);
        for (a, b) in e90.energies.iter().zip([158.5 - r, 317.0, 158.5 + r]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_field_levels_degenerate() {
        let e = eigenlevels(&build_hamiltonian(&sys(), 0.0, 0.7).unwrap()).unwrap();
        assert!(e.energies[0].abs() < 1e-10);
        assert!((e.energies[1] - 317.0).abs() < 1e-10);
        assert!((e.energies[2] - 317.0).abs() < 1e-10);
    }

    #[test]
    fn eigenvectors_orthonormal() {
        let e = eigenlevels(&build_hamiltonian(&sys(), 338.0, 0.9).unwrap()).unwrap();
        let gram = e.vectors.adjoint() * e.vectors;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - Complex::new(target, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut h = build_hamiltonian(&sys(), 340.0, 0.4).unwrap();
        h.0[(0, 1)] += Complex::new(0.0, 1e-3);
        assert!(matches!(eigenlevels(&h), Err(Error::NonHermitian { .. })));
    }

    #[test]
    fn complex_hermitian_input_accepted() {
        // A unitary phase change of the basis keeps the spectrum.
        let h = build_hamiltonian(&sys(), 340.0, 0.8).unwrap();
        let u = Matrix3::from_diagonal(&Vector3::new(
            Complex::new(1.0, 0.0),
            Complex::from_polar(1.0, 0.4),
            Complex::from_polar(1.0, -1.3),
        ));
        let rotated = HamiltonianMatrix(u * h.0 * u.adjoint());
        let a = eigenlevels(&h).unwrap().energies;
        let b = eigenlevels(&rotated).unwrap().energies;
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn analytic_levels_examples() {
        assert_eq!(analytic_levels_axial(317.0, 0.0, 0.0).unwrap(), [0.0, 317.0, 317.0]);
        let l0 = analytic_levels_axial(317.0, 9517.45, 0.0).unwrap();
        assert_eq!(l0, [-9200.45, 0.0, 9834.45]);
        let l90 = analytic_levels_axial(317.0, 9517.45, FRAC_PI_2).unwrap();
        assert!((l90[0] + 9360.2697).abs() < 1e-3);
        assert_eq!(l90[1], 317.0);
        assert!((l90[2] - 9677.2697).abs() < 1e-3);
        assert!(matches!(analytic_levels_axial(317.0, 1.0, 0.3), Err(Error::UnsupportedAngle(_))));
    }

    #[test]
    fn populations_at_theta_zero_follow_basis() {
        let s = sys();
        let e = eigenlevels(&build_hamiltonian(&s, 340.0, 0.0).unwrap()).unwrap();
        // Levels sorted: |−1⟩ (D − ν_B), |0⟩, |+1⟩ (D + ν_B).
        let p = project_populations(&s, &e.vectors);
        assert!((p[0] - 0.025).abs() < 1e-15);
        assert!((p[1] - 0.95).abs() < 1e-15);
        assert!((p[2] - 0.025).abs() < 1e-15);
    }

    #[test]
    fn unpolarized_populations_stay_uniform() {
        let s = SpinSystem { populations: Populations::unpolarized(), ..sys() };
        for &theta in &[0.0, 0.5, FRAC_PI_2, 2.0] {
            let e = eigenlevels(&build_hamiltonian(&s, 342.0, theta).unwrap()).unwrap();
            for p in project_populations(&s, &e.vectors) {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn population_validation() {
        assert!(Populations::new(0.9, 0.05, 0.05).is_ok());
        assert!(Populations::new(0.9, 0.05, 0.06).is_err());
        assert!(Populations::new(1.1, -0.05, -0.05).is_err());
        let bad = SpinSystem { d_strain_fwhm: -1.0, ..sys() };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("D_strain_fwhm"), "{err}");
        assert!(SpinSystem { g: 0.0, ..sys() }.validate().is_err());
    }

    #[test]
    fn orientation_ranges() {
        assert!(Orientation::new(0.0, 0.0).is_ok());
        assert!(Orientation::new(PI, 6.0).is_ok());
        assert!(Orientation::new(-0.1, 0.0).is_err());
        assert!(Orientation::new(1.0, std::f64::consts::TAU).is_err());
    }

    #[test]
    fn theta_zero_selection_rules() {
        let s = sys();
        let lines = transition_lines(&s, 340.0, 0.0).unwrap();
        let nu_b = s.zeeman_frequency(340.0);
        assert_eq!(lines.len(), 2);
        let mut f: Vec<f64> = lines.iter().map(|l| l.frequency).collect();
        f.sort_by(f64::total_cmp);
        assert!((f[0] - (nu_b - 317.0)).abs() < 1e-8);
        assert!((f[1] - (nu_b + 317.0)).abs() < 1e-8);
        for l in &lines {
            assert!((l.matrix_element_sq - 0.5).abs() < 1e-12);
            assert!((l.d_slope.abs() - 1.0).abs() < 1e-12);
        }
        assert!(lines.iter().all(|l| l.pair_index() != 2));
    }

    #[test]
    fn unpolarized_lines_have_zero_amplitude() {
        let s = SpinSystem { populations: Populations::unpolarized(), ..sys() };
        for l in transition_lines(&s, 340.0, 0.6).unwrap() {
            assert!(l.amplitude.abs() < 1e-15);
        }
    }

    #[test]
    fn polarization_pattern_for_positive_d() {
        // T_z-polarized triplet with D > 0: the low-field θ=0 line (ν_B + D)
        // is absorptive, the high-field line (ν_B − D) emissive.
        let s = sys();
        let lines = transition_lines(&s, 340.0, 0.0).unwrap();
        let upper = lines.iter().max_by(|a, b| a.frequency.total_cmp(&b.frequency)).unwrap();
        let lower = lines.iter().min_by(|a, b| a.frequency.total_cmp(&b.frequency)).unwrap();
        assert!(upper.amplitude > 0.0);
        assert!(lower.amplitude < 0.0);
        assert!((upper.amplitude - 0.925 * 0.5).abs() < 1e-12);
        for l in &lines {
            assert!(l.amplitude.abs() <= l.matrix_element_sq);
        }
    }

    #[test]
    fn field_slope_matches_finite_difference() {
        let s = sys();
        let theta = 0.8;
        let l = lines_at(&s, s.zeeman_frequency(340.0), theta);
        let lp = lines_at(&s, s.zeeman_frequency(340.001), theta);
        let lm = lines_at(&s, s.zeeman_frequency(339.999), theta);
        for k in 0..2 {
            let fd = (lp[k].unwrap().frequency - lm[k].unwrap().frequency) / 0.002;
            assert!((l[k].unwrap().field_slope - fd).abs() < 1e-4);
        }
    }
}
