//! Two-level vibrational density matrix (v=0 ↔ v=1) and its τ series.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{RamanError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix {
    pub rho00: f64,
    pub rho11: f64,
    pub rho01: Complex64,
}

impl DensityMatrix {
    pub fn ground() -> Self {
        DensityMatrix {
            rho00: 1.0,
            rho11: 0.0,
            rho01: Complex64::new(0.0, 0.0),
        }
    }

    /// Pure state with |ρ₀₁| = `magnitude` on the ground-state branch:
    /// ρ₁₁ = (1 − √(1 − 4|ρ₀₁|²))/2. For 0.3 this gives ρ₀₀ = 0.9, ρ₁₁ = 0.1.
    pub fn pure_with_coherence(magnitude: f64, phase: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&magnitude) {
            return Err(RamanError::Config(format!(
                "|rho01| must lie in [0, 0.5], got {magnitude}"
            )));
        }
        let rho11 = 0.5 * (1.0 - (1.0 - 4.0 * magnitude * magnitude).max(0.0).sqrt());
        Ok(DensityMatrix {
            rho00: 1.0 - rho11,
            rho11,
            rho01: Complex64::from_polar(magnitude, phase),
        })
    }

    pub fn trace(&self) -> f64 {
        self.rho00 + self.rho11
    }

    pub fn is_finite(&self) -> bool {
        self.rho00.is_finite()
            && self.rho11.is_finite()
            && self.rho01.re.is_finite()
            && self.rho01.im.is_finite()
    }

    /// Positivity check |ρ₀₁|² ≤ ρ₀₀ρ₁₁ with slack `tol`.
    pub fn is_physical(&self, tol: f64) -> bool {
        self.is_finite()
            && self.rho00 >= -tol
            && self.rho11 >= -tol
            && self.rho00 <= 1.0 + tol
            && self.rho11 <= 1.0 + tol
            && self.rho01.norm_sqr() <= self.rho00 * self.rho11 + tol
    }
}

/// ρ(τ_j) on a τ grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceState {
    tau: Vec<f64>,
    points: Vec<DensityMatrix>,
}

impl CoherenceState {
    pub fn new(tau: Vec<f64>, points: Vec<DensityMatrix>) -> Result<Self> {
        if tau.len() != points.len() {
            return Err(RamanError::ShapeMismatch(format!(
                "{} tau samples but {} density matrices",
                tau.len(),
                points.len()
            )));
        }
        Ok(CoherenceState { tau, points })
    }

    pub fn uniform(tau: Vec<f64>, value: DensityMatrix) -> Self {
        let points = vec![value; tau.len()];
        CoherenceState { tau, points }
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn points(&self) -> &[DensityMatrix] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, j: usize) -> DensityMatrix {
        self.points[j]
    }

    pub fn max_trace_drift(&self, reference: f64) -> f64 {
        self.points
            .iter()
            .map(|p| (p.trace() - reference).abs())
            .fold(0.0, f64::max)
    }
}
