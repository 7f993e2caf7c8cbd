//! Optical Bloch equations for the effective two-level Raman transition,
//! integrated in local time τ at a fixed position ξ.
//!
//!   ∂ρ₀₀/∂τ = i(Ω₀₁ρ₀₁* − Ω₀₁*ρ₀₁) + γ_a ρ₁₁
//!   ∂ρ₁₁/∂τ = −i(Ω₀₁ρ₀₁* − Ω₀₁*ρ₀₁) − γ_b ρ₁₁
//!   ∂ρ₀₁/∂τ = i(Ω₀₀ − Ω₁₁ + δ + iγ_c)ρ₀₁ + iΩ₀₁(ρ₁₁ − ρ₀₀)
//!
//! The drive terms are built from the field envelopes as
//!   Ω₀₀ = κ Σ a_q|E_q|²,  Ω₁₁ = κ Σ b_q|E_q|²,  Ω₀₁ = κ Σ d_q E_q E*_{q+1}.
//! This orientation of the Ω₀₁ product is the one for which the energy taken
//! out of the fields by the propagation equation equals ħΩ_R times the rate
//! of change of ρ₁₁; the opposite conjugation would let Stokes light gain
//! photons while the molecules lose energy.

use num_complex::Complex64;

use crate::coherence::{CoherenceState, DensityMatrix};
use crate::error::{RamanError, Result};
use crate::medium::MediumSpec;
use crate::spectrum::FieldState;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Drive terms at one τ sample (rad/s).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RabiSample {
    pub omega00: f64,
    pub omega11: f64,
    pub omega01: Complex64,
}

impl RabiSample {
    pub fn constant_coupling(omega01: Complex64) -> Self {
        RabiSample {
            omega00: 0.0,
            omega11: 0.0,
            omega01,
        }
    }
}

impl std::ops::Add for RabiSample {
    type Output = RabiSample;
    fn add(self, o: RabiSample) -> RabiSample {
        RabiSample {
            omega00: self.omega00 + o.omega00,
            omega11: self.omega11 + o.omega11,
            omega01: self.omega01 + o.omega01,
        }
    }
}

/// Ac-Stark shifts and two-photon Rabi frequency on a τ grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RabiTerms {
    pub omega00: Vec<f64>,
    pub omega11: Vec<f64>,
    pub omega01: Vec<Complex64>,
}

impl RabiTerms {
    pub fn zeros(n: usize) -> Self {
        RabiTerms {
            omega00: vec![0.0; n],
            omega11: vec![0.0; n],
            omega01: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn from_samples(samples: &[RabiSample]) -> Self {
        RabiTerms {
            omega00: samples.iter().map(|s| s.omega00).collect(),
            omega11: samples.iter().map(|s| s.omega11).collect(),
            omega01: samples.iter().map(|s| s.omega01).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.omega00.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega00.is_empty()
    }

    pub fn sample(&self, j: usize) -> RabiSample {
        RabiSample {
            omega00: self.omega00[j],
            omega11: self.omega11[j],
            omega01: self.omega01[j],
        }
    }

    pub fn accumulate(&mut self, other: &RabiTerms) -> Result<()> {
        if other.len() != self.len() {
            return Err(RamanError::ShapeMismatch(
                "Rabi terms on different tau grids".into(),
            ));
        }
        for j in 0..self.len() {
            self.omega00[j] += other.omega00[j];
            self.omega11[j] += other.omega11[j];
            self.omega01[j] += other.omega01[j];
        }
        Ok(())
    }

    /// Drive at fraction `s` ∈ [0, 1] of interval `[j, j+1]` on a uniform
    /// grid: four-point cubic interpolation inside, three-point at the edges.
    fn at(&self, j: usize, s: f64) -> RabiSample {
        let n = self.len();
        let comb = |w: &[(usize, f64)]| {
            let mut out = RabiSample::default();
            for &(k, c) in w {
                let v = self.sample(k);
                out.omega00 += c * v.omega00;
                out.omega11 += c * v.omega11;
                out.omega01 += v.omega01 * c;
            }
            out
        };
        if n == 2 {
            comb(&[(0, 1.0 - s), (1, s)])
        } else if j == 0 {
            comb(&[
                (0, 0.5 * (s - 1.0) * (s - 2.0)),
                (1, -s * (s - 2.0)),
                (2, 0.5 * s * (s - 1.0)),
            ])
        } else if j + 2 == n {
            comb(&[
                (j - 1, 0.5 * s * (s - 1.0)),
                (j, -(1.0 + s) * (s - 1.0)),
                (j + 1, 0.5 * (1.0 + s) * s),
            ])
        } else {
            comb(&[
                (j - 1, -s * (s - 1.0) * (s - 2.0) / 6.0),
                (j, 0.5 * (s + 1.0) * (s - 1.0) * (s - 2.0)),
                (j + 1, -0.5 * (s + 1.0) * s * (s - 2.0)),
                (j + 2, (s + 1.0) * s * (s - 1.0) / 6.0),
            ])
        }
    }

    fn midpoint(&self, j: usize) -> RabiSample {
        self.at(j, 0.5)
    }
}

/// Drive terms produced by one field series in `medium`.
pub fn rabi_from_fields(fs: &FieldState, medium: &MediumSpec) -> Result<RabiTerms> {
    let c = medium.for_ladder(fs.ladder())?;
    let kappa = medium.rabi_scale;
    let mut out = RabiTerms::zeros(fs.n_tau());
    for j in 0..fs.n_tau() {
        let e = fs.slice(j);
        let s = rabi_sample(e, &c.a, &c.b, &c.d, kappa);
        out.omega00[j] = s.omega00;
        out.omega11[j] = s.omega11;
        out.omega01[j] = s.omega01;
    }
    Ok(out)
}

pub(crate) fn rabi_sample(
    e: &[Complex64],
    a: &[f64],
    b: &[f64],
    d: &[Complex64],
    kappa: f64,
) -> RabiSample {
    let mut s = RabiSample::default();
    for (i, ei) in e.iter().enumerate() {
        let p = ei.norm_sqr();
        s.omega00 += a[i] * p;
        s.omega11 += b[i] * p;
    }
    for (i, di) in d.iter().enumerate() {
        s.omega01 += di * e[i] * e[i + 1].conj();
    }
    s.omega00 *= kappa;
    s.omega11 *= kappa;
    s.omega01 *= kappa;
    s
}

#[derive(Clone, Copy)]
struct Deriv {
    d00: f64,
    d11: f64,
    d01: Complex64,
}

fn bloch_rhs(r: &DensityMatrix, s: &RabiSample, medium: &MediumSpec) -> Deriv {
    let exchange = I * (s.omega01 * r.rho01.conj() - s.omega01.conj() * r.rho01);
    // exchange is real up to rounding
    let x = exchange.re;
    let detuning = Complex64::new(
        s.omega00 - s.omega11 + medium.detuning,
        medium.gamma_c,
    );
    Deriv {
        d00: x + medium.gamma_a * r.rho11,
        d11: -x - medium.gamma_b * r.rho11,
        d01: I * detuning * r.rho01 + I * s.omega01 * (r.rho11 - r.rho00),
    }
}

fn advance(r: &DensityMatrix, k: &Deriv, h: f64) -> DensityMatrix {
    DensityMatrix {
        rho00: r.rho00 + h * k.d00,
        rho11: r.rho11 + h * k.d11,
        rho01: r.rho01 + k.d01 * h,
    }
}

/// One classical RK4 step of length `dtau` with the drive given at the start,
/// midpoint and end of the step.
pub fn step_bloch(
    state: &DensityMatrix,
    drive: [RabiSample; 3],
    medium: &MediumSpec,
    dtau: f64,
) -> Result<DensityMatrix> {
    if !(dtau > 0.0 && dtau.is_finite()) {
        return Err(RamanError::Config(format!("dtau must be positive, got {dtau}")));
    }
    let [s0, sm, s1] = drive;
    let k1 = bloch_rhs(state, &s0, medium);
    let k2 = bloch_rhs(&advance(state, &k1, 0.5 * dtau), &sm, medium);
    let k3 = bloch_rhs(&advance(state, &k2, 0.5 * dtau), &sm, medium);
    let k4 = bloch_rhs(&advance(state, &k3, dtau), &s1, medium);
    let h6 = dtau / 6.0;
    let next = DensityMatrix {
        rho00: state.rho00 + h6 * (k1.d00 + 2.0 * k2.d00 + 2.0 * k3.d00 + k4.d00),
        rho11: state.rho11 + h6 * (k1.d11 + 2.0 * k2.d11 + 2.0 * k3.d11 + k4.d11),
        rho01: state.rho01 + (k1.d01 + k2.d01 * 2.0 + k3.d01 * 2.0 + k4.d01) * h6,
    };
    let mag = next.rho01.norm();
    if !next.is_finite() || mag > 0.5 + 1e-6 {
        return Err(RamanError::CoherenceBound {
            tau_index: 0,
            magnitude: mag,
        });
    }
    Ok(next)
}

/// Integrates the Bloch equations across the τ grid of `rabi`, starting from
/// `initial` at the first sample. The grid is assumed uniform.
pub fn drive_adiabatic(
    rabi: &RabiTerms,
    tau: &[f64],
    medium: &MediumSpec,
    initial: DensityMatrix,
) -> Result<CoherenceState> {
    drive_adiabatic_substeps(rabi, tau, medium, initial, 1)
}

/// As [`drive_adiabatic`] with every τ interval split into `substeps` RK4
/// steps, the drive being interpolated inside the interval.
pub fn drive_adiabatic_substeps(
    rabi: &RabiTerms,
    tau: &[f64],
    medium: &MediumSpec,
    initial: DensityMatrix,
    substeps: usize,
) -> Result<CoherenceState> {
    let mut points = Vec::with_capacity(tau.len());
    integrate_into(rabi, tau, medium, initial, substeps, &mut points)?;
    CoherenceState::new(tau.to_vec(), points)
}

pub(crate) fn integrate_into(
    rabi: &RabiTerms,
    tau: &[f64],
    medium: &MediumSpec,
    initial: DensityMatrix,
    substeps: usize,
    points: &mut Vec<DensityMatrix>,
) -> Result<()> {
    let m = substeps.max(1);
    if rabi.len() != tau.len() {
        return Err(RamanError::ShapeMismatch(
            "Rabi terms and tau grid differ in length".into(),
        ));
    }
    points.clear();
    if tau.is_empty() {
        return Ok(());
    }
    let mut r = initial;
    points.push(r);
    for j in 0..tau.len() - 1 {
        let h = (tau[j + 1] - tau[j]) / m as f64;
        for k in 0..m {
            let s0 = k as f64 / m as f64;
            let s1 = (k + 1) as f64 / m as f64;
            let drive = if m == 1 {
                [rabi.sample(j), rabi.midpoint(j), rabi.sample(j + 1)]
            } else {
                [rabi.at(j, s0), rabi.at(j, 0.5 * (s0 + s1)), rabi.at(j, s1)]
            };
            r = step_bloch(&r, drive, medium, h).map_err(|e| match e {
                RamanError::CoherenceBound { magnitude, .. } => RamanError::CoherenceBound {
                    tau_index: j + 1,
                    magnitude,
                },
                other => other,
            })?;
        }
        points.push(r);
    }
    Ok(())
}

/// Convenience: drive terms from one field series, then integrate.
pub fn drive_fields(
    fs: &FieldState,
    medium: &MediumSpec,
    initial: DensityMatrix,
) -> Result<CoherenceState> {
    let rabi = rabi_from_fields(fs, medium)?;
    drive_adiabatic(&rabi, fs.tau(), medium, initial)
}
