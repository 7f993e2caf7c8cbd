//! Medium description: molecular density, per-order dispersion and coupling
//! coefficients, decay rates and two-photon detuning.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{RamanError, Result};
use crate::spectrum::ModeLadder;
use crate::units::{EPSILON_0, HBAR, SPEED_OF_LIGHT};

/// Coefficient tables are indexed by ladder order: `a[i]`, `b[i]` belong to
/// order `q_min + i`, and `d[i]` couples orders `q_min + i` and `q_min + i + 1`.
///
/// The units of `a`, `b`, `d` are those of a polarizability divided by ħ
/// (C·m²·V⁻¹·J⁻¹·s⁻¹), so that `N ħ ω a / (ε₀ c)` is a wavenumber and
/// `rabi_scale · a |E|²` is an angular frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    /// Molecules per m³.
    pub density: f64,
    pub q_min: i32,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub d: Vec<Complex64>,
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub gamma_c: f64,
    /// Two-photon detuning δ in rad/s.
    pub detuning: f64,
    /// κ in Ω₀₀ = κ Σ a_q|E_q|² and friends.
    pub rabi_scale: f64,
}

/// Coefficients aligned with a particular ladder.
#[derive(Clone, Debug, PartialEq)]
pub struct LadderCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `d[i]` couples ladder index `i` and `i + 1`.
    pub d: Vec<Complex64>,
}

impl MediumSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.density.is_finite() && self.density > 0.0) {
            return Err(RamanError::Config(format!(
                "density must be positive, got {}",
                self.density
            )));
        }
        if self.b.len() != self.a.len() {
            return Err(RamanError::Config("a and b tables differ in length".into()));
        }
        if self.d.len() + 1 != self.a.len() {
            return Err(RamanError::Config(
                "d table must have one entry per adjacent pair".into(),
            ));
        }
        for g in [self.gamma_a, self.gamma_b, self.gamma_c] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(RamanError::Config("decay rates must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn q_max(&self) -> i32 {
        self.q_min + self.a.len() as i32 - 1
    }

    fn table_index(&self, q: i32) -> Option<usize> {
        (q >= self.q_min && q <= self.q_max()).then(|| (q - self.q_min) as usize)
    }

    pub fn a(&self, q: i32) -> Option<f64> {
        self.table_index(q).map(|i| self.a[i])
    }

    pub fn b(&self, q: i32) -> Option<f64> {
        self.table_index(q).map(|i| self.b[i])
    }

    /// Coupling between orders `q` and `q + 1`.
    pub fn d(&self, q: i32) -> Option<Complex64> {
        self.table_index(q).and_then(|i| self.d.get(i).copied())
    }

    /// N ħ / (ε₀ c); multiply by ω_q and a coefficient to get a wavenumber.
    pub fn propagation_constant(&self) -> f64 {
        self.density * HBAR / (EPSILON_0 * SPEED_OF_LIGHT)
    }

    /// Extracts the tables for every order (and adjacent pair) of `ladder`.
    pub fn for_ladder(&self, ladder: &ModeLadder) -> Result<LadderCoefficients> {
        let mut a = Vec::with_capacity(ladder.len());
        let mut b = Vec::with_capacity(ladder.len());
        for q in ladder.orders() {
            a.push(self.a(q).ok_or(RamanError::MissingCoefficient(q))?);
            b.push(self.b(q).ok_or(RamanError::MissingCoefficient(q))?);
        }
        let d = ladder
            .orders()
            .take(ladder.len() - 1)
            .map(|q| self.d(q).ok_or(RamanError::MissingCoefficient(q)))
            .collect::<Result<Vec<_>>>()?;
        Ok(LadderCoefficients { a, b, d })
    }

    /// Same decay rates, density and detuning with new coefficient tables.
    pub fn with_tables(&self, q_min: i32, a: Vec<f64>, b: Vec<f64>, d: Vec<Complex64>) -> Self {
        MediumSpec {
            q_min,
            a,
            b,
            d,
            ..self.clone()
        }
    }
}

/// Synthetic parahydrogen-like coefficient model with a single effective
/// electronic resonance at `resonance_wavelength_nm`.
///
/// With x = ω/ω_e:
///   a(ω) = a_strength · x²/(1 − x²)
///   b(ω) = b_strength · x²/(1 − x²)
///   d(ω̄) = d_static + d_resonant · x̄²/(1 − x̄²), ω̄ the mean frequency of the pair.
///
/// `a` and `b` hold only the dispersive excess over the static
/// polarizability; a frequency-independent index is a common phase velocity
/// and is absorbed by the co-moving frame. The numbers are not authoritative
/// parahydrogen data. Users with measured tables should supply them directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCoefficients {
    pub label: String,
    pub a_strength: f64,
    pub b_strength: f64,
    pub d_static: f64,
    pub d_resonant: f64,
    pub resonance_wavelength_nm: f64,
}

impl Default for SyntheticCoefficients {
    fn default() -> Self {
        SyntheticCoefficients {
            label: "synthetic-ph2-v1".into(),
            a_strength: 1.0e-7,
            b_strength: 1.1e-7,
            d_static: 3.0e-8,
            d_resonant: 1.6e-7,
            resonance_wavelength_nm: 90.0,
        }
    }
}

impl SyntheticCoefficients {
    fn resonance(&self) -> f64 {
        2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / (self.resonance_wavelength_nm * 1e-9)
    }

    fn dispersive(&self, omega: f64) -> f64 {
        let x2 = (omega / self.resonance()).powi(2);
        x2 / (1.0 - x2)
    }

    pub fn a_at(&self, omega: f64) -> f64 {
        self.a_strength * self.dispersive(omega)
    }

    pub fn b_at(&self, omega: f64) -> f64 {
        self.b_strength * self.dispersive(omega)
    }

    pub fn d_at(&self, omega_mean: f64) -> f64 {
        self.d_static + self.d_resonant * self.dispersive(omega_mean)
    }

    pub fn validate_for(&self, ladder: &ModeLadder) -> Result<()> {
        let top = ladder.angular_frequency(ladder.q_max());
        if top >= self.resonance() {
            return Err(RamanError::Config(format!(
                "ladder reaches {:.3} nm, beyond the model resonance at {} nm",
                ladder.wavelength_nm(ladder.q_max()),
                self.resonance_wavelength_nm
            )));
        }
        Ok(())
    }

    /// Medium for `ladder` sharing density, decay rates and detuning.
    pub fn medium_for(
        &self,
        ladder: &ModeLadder,
        density: f64,
        detuning: f64,
        gammas: [f64; 3],
        rabi_scale: f64,
    ) -> Result<MediumSpec> {
        self.validate_for(ladder)?;
        let omegas = ladder.angular_frequencies();
        let a = omegas.iter().map(|&w| self.a_at(w)).collect();
        let b = omegas.iter().map(|&w| self.b_at(w)).collect();
        let d = omegas
            .windows(2)
            .map(|p| Complex64::new(self.d_at(0.5 * (p[0] + p[1])), 0.0))
            .collect();
        let m = MediumSpec {
            density,
            q_min: ladder.q_min(),
            a,
            b,
            d,
            gamma_a: gammas[0],
            gamma_b: gammas[1],
            gamma_c: gammas[2],
            detuning,
            rabi_scale,
        };
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn medium() -> (ModeLadder, MediumSpec) {
        let l = ModeLadder::from_wavelength(210.0, 124.7451, -1, 8).unwrap();
        let m = SyntheticCoefficients::default()
            .medium_for(&l, 2.6e24, 0.0, [0.0; 3], 0.5)
            .unwrap();
        (l, m)
    }

    #[test]
    fn tables_cover_ladder() {
        let (l, m) = medium();
        let c = m.for_ladder(&l).unwrap();
        assert_eq!(c.a.len(), 10);
        assert_eq!(c.d.len(), 9);
        // dispersion grows toward the resonance
        assert!(c.a.windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn missing_coefficient_detected() {
        let (_, m) = medium();
        let wider = ModeLadder::from_wavelength(210.0, 124.7451, -2, 8).unwrap();
        assert!(matches!(
            m.for_ladder(&wider),
            Err(RamanError::MissingCoefficient(-2))
        ));
    }

    #[test]
    fn rejects_bad_density_and_resonance() {
        let (l, m) = medium();
        let mut bad = m.clone();
        bad.density = 0.0;
        assert!(bad.validate().is_err());
        let model = SyntheticCoefficients {
            resonance_wavelength_nm: 150.0,
            ..Default::default()
        };
        assert!(model.medium_for(&l, 1e24, 0.0, [0.0; 3], 0.5).is_err());
    }
}
