//! The Raman frequency ladder and the two equivalent representations of the
//! field: complex envelopes per order, or photon number density plus phase.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{RamanError, Result};
use crate::units::{m_to_nm, nm_to_m, thz_to_hz, EPSILON_0, HBAR, SPEED_OF_LIGHT};

/// Discrete comb ω_q = ω₀ + qΩ_R over the contiguous orders `q_min..=q_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeLadder {
    base_frequency: f64,
    raman_shift: f64,
    q_min: i32,
    q_max: i32,
}

impl ModeLadder {
    /// Frequencies in Hz. Fails if the range is empty, holds a single mode,
    /// excludes order 0, or reaches a non-positive frequency.
    pub fn new(base_frequency: f64, raman_shift: f64, q_min: i32, q_max: i32) -> Result<Self> {
        if !(base_frequency.is_finite() && base_frequency > 0.0) {
            return Err(RamanError::InvalidLadder(format!(
                "base frequency must be positive, got {base_frequency}"
            )));
        }
        if !raman_shift.is_finite() {
            return Err(RamanError::InvalidLadder("raman shift must be finite".into()));
        }
        if q_min > 0 || q_max < 0 {
            return Err(RamanError::InvalidLadder(format!(
                "order range [{q_min}, {q_max}] must contain 0"
            )));
        }
        let ladder = ModeLadder {
            base_frequency,
            raman_shift,
            q_min,
            q_max,
        };
        for q in [q_min, q_max] {
            let f = ladder.frequency(q);
            if f <= 0.0 {
                return Err(RamanError::InvalidLadder(format!(
                    "order {q} has non-positive frequency {f:.6e} Hz"
                )));
            }
        }
        Ok(ladder)
    }

    /// Builds a ladder from interface units. A single-mode ladder is accepted
    /// here so that wavelengths can be reported for `q_min == q_max == 0`;
    /// simulations require at least two modes (see [`ModeLadder::require_coupled`]).
    pub fn from_wavelength(
        base_wavelength_nm: f64,
        raman_shift_thz: f64,
        q_min: i32,
        q_max: i32,
    ) -> Result<Self> {
        if !(base_wavelength_nm.is_finite() && base_wavelength_nm > 0.0) {
            return Err(RamanError::InvalidLadder(format!(
                "base wavelength must be positive, got {base_wavelength_nm} nm"
            )));
        }
        Self::new(
            SPEED_OF_LIGHT / nm_to_m(base_wavelength_nm),
            thz_to_hz(raman_shift_thz),
            q_min,
            q_max,
        )
    }

    pub fn require_coupled(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(RamanError::InvalidLadder(
                "a simulation ladder needs at least two modes".into(),
            ));
        }
        Ok(())
    }

    pub fn base_frequency(&self) -> f64 {
        self.base_frequency
    }

    pub fn raman_shift(&self) -> f64 {
        self.raman_shift
    }

    pub fn q_min(&self) -> i32 {
        self.q_min
    }

    pub fn q_max(&self) -> i32 {
        self.q_max
    }

    pub fn len(&self) -> usize {
        (self.q_max - self.q_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn orders(&self) -> impl Iterator<Item = i32> + Clone {
        self.q_min..=self.q_max
    }

    pub fn contains(&self, q: i32) -> bool {
        (self.q_min..=self.q_max).contains(&q)
    }

    pub fn index(&self, q: i32) -> Option<usize> {
        self.contains(q).then(|| (q - self.q_min) as usize)
    }

    pub fn index_checked(&self, q: i32) -> Result<usize> {
        self.index(q).ok_or(RamanError::OrderOutOfLadder {
            order: q,
            q_min: self.q_min,
            q_max: self.q_max,
        })
    }

    pub fn order(&self, index: usize) -> i32 {
        self.q_min + index as i32
    }

    /// Optical frequency of order `q` in Hz.
    pub fn frequency(&self, q: i32) -> f64 {
        self.base_frequency + q as f64 * self.raman_shift
    }

    /// Angular frequency of order `q` in rad/s.
    pub fn angular_frequency(&self, q: i32) -> f64 {
        2.0 * PI * self.frequency(q)
    }

    /// Vacuum wavelength of order `q` in metres.
    pub fn wavelength(&self, q: i32) -> f64 {
        SPEED_OF_LIGHT / self.frequency(q)
    }

    pub fn wavelength_nm(&self, q: i32) -> f64 {
        m_to_nm(self.wavelength(q))
    }

    /// Angular frequencies of every order, lowest order first.
    pub fn angular_frequencies(&self) -> Vec<f64> {
        self.orders().map(|q| self.angular_frequency(q)).collect()
    }

    /// Same orders with the base frequency moved by `offset_hz`.
    pub fn shifted(&self, offset_hz: f64) -> Result<Self> {
        Self::new(
            self.base_frequency + offset_hz,
            self.raman_shift,
            self.q_min,
            self.q_max,
        )
    }
}

/// Photon number density (m⁻³) carried by an envelope of amplitude `e` (V/m)
/// at angular frequency `omega`: n = ε₀|E|²/(2ħω).
pub fn photon_density(e: Complex64, omega: f64) -> f64 {
    EPSILON_0 * e.norm_sqr() / (2.0 * HBAR * omega)
}

/// Envelope magnitude that carries photon density `n` at `omega`.
pub fn amplitude_from_density(n: f64, omega: f64) -> f64 {
    (2.0 * HBAR * omega * n / EPSILON_0).sqrt()
}

/// Complex envelopes E_q(τ_j). Stored slice-major: the orders of one τ sample
/// are contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    ladder: ModeLadder,
    tau: Vec<f64>,
    amplitudes: Vec<Complex64>,
}

impl FieldState {
    pub fn new(ladder: ModeLadder, tau: Vec<f64>, amplitudes: Vec<Complex64>) -> Result<Self> {
        if tau.is_empty() {
            return Err(RamanError::ShapeMismatch("tau grid is empty".into()));
        }
        if amplitudes.len() != ladder.len() * tau.len() {
            return Err(RamanError::ShapeMismatch(format!(
                "expected {} x {} amplitudes, got {}",
                ladder.len(),
                tau.len(),
                amplitudes.len()
            )));
        }
        if let Some(pos) = amplitudes
            .iter()
            .position(|e| !(e.re.is_finite() && e.im.is_finite()))
        {
            return Err(RamanError::NonFinite {
                xi: 0.0,
                tau_index: pos / ladder.len(),
                order: ladder.order(pos % ladder.len()),
            });
        }
        Ok(FieldState {
            ladder,
            tau,
            amplitudes,
        })
    }

    pub fn zeros(ladder: ModeLadder, tau: Vec<f64>) -> Self {
        let n = ladder.len() * tau.len();
        FieldState {
            ladder,
            tau,
            amplitudes: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn ladder(&self) -> &ModeLadder {
        &self.ladder
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn n_orders(&self) -> usize {
        self.ladder.len()
    }

    pub fn n_tau(&self) -> usize {
        self.tau.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    pub fn slice(&self, tau_index: usize) -> &[Complex64] {
        let n = self.n_orders();
        &self.amplitudes[tau_index * n..(tau_index + 1) * n]
    }

    pub fn slice_mut(&mut self, tau_index: usize) -> &mut [Complex64] {
        let n = self.n_orders();
        &mut self.amplitudes[tau_index * n..(tau_index + 1) * n]
    }

    pub fn get(&self, q: i32, tau_index: usize) -> Option<Complex64> {
        let i = self.ladder.index(q)?;
        self.amplitudes.get(tau_index * self.n_orders() + i).copied()
    }

    pub fn set(&mut self, q: i32, tau_index: usize, value: Complex64) -> Result<()> {
        let i = self.ladder.index_checked(q)?;
        let n = self.n_orders();
        let slot = self
            .amplitudes
            .get_mut(tau_index * n + i)
            .ok_or_else(|| RamanError::ShapeMismatch(format!("tau index {tau_index}")))?;
        *slot = value;
        Ok(())
    }

    /// Photon density n_q(τ_j) for every entry, same layout as the amplitudes.
    pub fn photon_densities(&self) -> Vec<f64> {
        let omegas = self.ladder.angular_frequencies();
        let n = self.n_orders();
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(k, e)| photon_density(*e, omegas[k % n]))
            .collect()
    }

    /// Σ over τ samples of n_q, per order (uniform τ weights).
    pub fn photons_per_order(&self) -> Vec<f64> {
        let n = self.n_orders();
        let mut out = vec![0.0; n];
        for (k, v) in self.photon_densities().into_iter().enumerate() {
            out[k % n] += v;
        }
        out
    }

    pub fn total_photons(&self) -> f64 {
        self.photons_per_order().iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.amplitudes
            .iter()
            .all(|e| e.re.is_finite() && e.im.is_finite())
    }
}

/// Photon number density and phase per order and τ sample; the
/// representation in which photon flow between orders is explicit.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    ladder: ModeLadder,
    tau: Vec<f64>,
    photon_density: Vec<f64>,
    phase: Vec<f64>,
}

impl FlowState {
    pub fn new(
        ladder: ModeLadder,
        tau: Vec<f64>,
        photon_density: Vec<f64>,
        phase: Vec<f64>,
    ) -> Result<Self> {
        let expected = ladder.len() * tau.len();
        if photon_density.len() != expected || phase.len() != expected {
            return Err(RamanError::ShapeMismatch(format!(
                "expected {expected} entries for density and phase"
            )));
        }
        Ok(FlowState {
            ladder,
            tau,
            photon_density,
            phase,
        })
    }

    pub fn ladder(&self) -> &ModeLadder {
        &self.ladder
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn n_orders(&self) -> usize {
        self.ladder.len()
    }

    pub fn n_tau(&self) -> usize {
        self.tau.len()
    }

    pub fn photon_density(&self) -> &[f64] {
        &self.photon_density
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    pub fn density_slice(&self, tau_index: usize) -> &[f64] {
        let n = self.n_orders();
        &self.photon_density[tau_index * n..(tau_index + 1) * n]
    }

    pub fn phase_slice(&self, tau_index: usize) -> &[f64] {
        let n = self.n_orders();
        &self.phase[tau_index * n..(tau_index + 1) * n]
    }

    pub fn photons_per_order(&self) -> Vec<f64> {
        let n = self.n_orders();
        let mut out = vec![0.0; n];
        for (k, v) in self.photon_density.iter().enumerate() {
            out[k % n] += v;
        }
        out
    }
}

/// Field → photon density and unwrapped phase. Zero amplitudes get phase 0
/// and do not move the unwrapping reference.
pub fn to_flow(fs: &FieldState) -> FlowState {
    let n = fs.n_orders();
    let omegas = fs.ladder.angular_frequencies();
    let mut density = vec![0.0; fs.amplitudes.len()];
    let mut phase = vec![0.0; fs.amplitudes.len()];
    for i in 0..n {
        let mut reference: Option<f64> = None;
        for j in 0..fs.n_tau() {
            let k = j * n + i;
            let e = fs.amplitudes[k];
            density[k] = photon_density(e, omegas[i]);
            if e.norm_sqr() == 0.0 {
                phase[k] = 0.0;
                continue;
            }
            let raw = e.arg();
            let p = match reference {
                Some(prev) => raw + 2.0 * PI * ((prev - raw) / (2.0 * PI)).round(),
                None => raw,
            };
            phase[k] = p;
            reference = Some(p);
        }
    }
    FlowState {
        ladder: fs.ladder.clone(),
        tau: fs.tau.clone(),
        photon_density: density,
        phase,
    }
}

/// Photon density and phase → field. Negative densities are rejected.
pub fn to_field(fl: &FlowState) -> Result<FieldState> {
    let n = fl.n_orders();
    let omegas = fl.ladder.angular_frequencies();
    let mut amplitudes = Vec::with_capacity(fl.photon_density.len());
    for (k, (&dens, &ph)) in fl.photon_density.iter().zip(&fl.phase).enumerate() {
        if dens < 0.0 || !dens.is_finite() {
            return Err(RamanError::NegativePhotonDensity {
                order: fl.ladder.order(k % n),
                tau_index: k / n,
                value: dens,
            });
        }
        amplitudes.push(Complex64::from_polar(
            amplitude_from_density(dens, omegas[k % n]),
            ph,
        ));
    }
    FieldState::new(fl.ladder.clone(), fl.tau.clone(), amplitudes)
}

/// Σ_q n_q at one τ sample.
pub fn total_photons(fl: &FlowState, tau_index: usize) -> Result<f64> {
    if tau_index >= fl.n_tau() {
        return Err(RamanError::ShapeMismatch(format!(
            "tau index {tau_index} out of {}",
            fl.n_tau()
        )));
    }
    Ok(fl.density_slice(tau_index).iter().sum())
}

/// Uniform τ grid of `n` samples spanning `[-half_width, half_width]`.
pub fn symmetric_tau_grid(half_width: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|j| -half_width + 2.0 * half_width * j as f64 / (n - 1) as f64)
        .collect()
}
