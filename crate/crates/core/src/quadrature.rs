//! Deterministic quadrature rules shared by the powder and echo sums.

use nalgebra::DMatrix;

/// FWHM of a Gaussian expressed in units of its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / FWHM_PER_SIGMA
}

/// `n` evenly spaced points covering `[start, stop]` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (stop - start) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { stop } else { start + step * i as f64 })
                .collect()
        }
    }
}

/// Trapezoid weights for an arbitrary (sorted) grid. A single point gets weight 1,
/// so a one-point grid behaves like a discrete delta.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    if n == 1 {
        return vec![1.0];
    }
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let h = 0.5 * (grid[i + 1] - grid[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

/// A set of nodes and weights approximating an expectation over a distribution.
/// Weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNodes {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussianNodes {
    /// Degenerate rule for a zero-width distribution.
    pub fn delta(mean: f64) -> Self {
        Self { points: vec![mean], weights: vec![1.0] }
    }

    /// Probabilists' Gauss–Hermite rule for N(mean, sigma²), built with Golub–Welsch.
    pub fn hermite(mean: f64, sigma: f64, n: usize) -> Self {
        if sigma == 0.0 || n <= 1 {
            return Self::delta(mean);
        }
        // Jacobi matrix of the monic He_k recurrence: off-diagonal sqrt(k).
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = jacobi.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Symmetrize: the rule is exactly symmetric, eigen-solver noise is not.
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (pairs[j].0 - pairs[i].0);
            let w = 0.5 * (pairs[i].1 + pairs[j].1);
            pairs[i] = (-x, w);
            pairs[j] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            points: pairs.iter().map(|p| mean + sigma * p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    /// `n` uniformly spaced nodes over `mean ± span·sigma` with Gaussian weights,
    /// renormalized. Node spacing stays well below the width of the
    /// distribution, which keeps strain sums free of node ripple.
    pub fn uniform(mean: f64, sigma: f64, n: usize, span: f64) -> Self {
        if sigma == 0.0 || n <= 1 {
            return Self::delta(mean);
        }
        let xs = linspace(-span, span, n);
        let raw: Vec<f64> = xs.iter().map(|x| (-0.5 * x * x).exp()).collect();
        let total: f64 = raw.iter().sum();
        Self {
            points: xs.iter().map(|x| mean + sigma * x).collect(),
            weights: raw.iter().map(|w| w / total).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Unit-area Gaussian line shape evaluated at `offset` from the centre.
pub fn gaussian(offset: f64, sigma: f64) -> f64 {
    let z = offset / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}
