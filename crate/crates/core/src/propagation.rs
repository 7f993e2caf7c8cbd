//! Coupled propagation of the Raman orders along ξ at fixed coherence ρ(τ).
//!
//! Field form:
//!   ∂E_q/∂ξ = i (Nħω_q/ε₀c)(a_qρ₀₀E_q + b_qρ₁₁E_q + d_{q−1}ρ₀₁*E_{q−1} + d_q*ρ₀₁E_{q+1})
//!
//! Flow form, with E_q = √n_q·√(2ħω_q/ε₀)·e^{iφ_q}, ρ₀₁ = |ρ₀₁|e^{iφ_ρ} and
//! d_q = |d_q|e^{iθ_q}:
//!   ∂√n_q/∂ξ = (Nħ|ρ₀₁|/ε₀c){ |d_{q−1}|√(ω_{q−1}ω_q) sin(φ_q − φ_{q−1} + φ_ρ − θ_{q−1}) √n_{q−1}
//!                            − |d_q|√(ω_qω_{q+1}) sin(φ_{q+1} − φ_q + φ_ρ − θ_q) √n_{q+1} }
//!   ∂φ_q/∂ξ  = (Nħ/ε₀c){ ω_q(a_qρ₀₀ + b_qρ₁₁)
//!                        + |ρ₀₁||d_{q−1}|√(ω_{q−1}ω_q) cos(…) √(n_{q−1}/n_q)
//!                        + |ρ₀₁||d_q|√(ω_qω_{q+1}) cos(…) √(n_{q+1}/n_q) }
//! For real positive d the θ terms vanish. Both forms are integrated with
//! classical RK4 on the same ξ grid; orders outside the ladder are dropped.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coherence::{CoherenceState, DensityMatrix};
use crate::error::{RamanError, Result};
use crate::medium::{LadderCoefficients, MediumSpec};
use crate::spectrum::{photon_density, to_field, FieldState, FlowState, ModeLadder};
use crate::units::SPEED_OF_LIGHT;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Phase added to every order at one position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseResetEvent {
    pub position: f64,
    pub offsets: Vec<f64>,
}

/// Ordered phase resets plus, for diagnostics, the order each event steers
/// toward and where the final concentration peaks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowSchedule {
    pub events: Vec<PhaseResetEvent>,
    pub targets: Vec<i32>,
    pub end_position: Option<f64>,
}

impl FlowSchedule {
    pub fn new(events: Vec<PhaseResetEvent>) -> Result<Self> {
        let s = FlowSchedule {
            targets: Vec::new(),
            events,
            end_position: None,
        };
        s.check_order()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    fn check_order(&self) -> Result<()> {
        for w in self.events.windows(2) {
            if w[1].position <= w[0].position {
                return Err(RamanError::Config(format!(
                    "schedule positions must increase strictly ({} then {})",
                    w[0].position, w[1].position
                )));
            }
        }
        Ok(())
    }

    /// Checks ordering, offset counts and that every event lies in `[0, length]`.
    pub fn validate(&self, ladder: &ModeLadder, length: f64) -> Result<()> {
        self.check_order()?;
        for ev in &self.events {
            if ev.offsets.len() != ladder.len() {
                return Err(RamanError::ShapeMismatch(format!(
                    "event at {} m has {} offsets for {} orders",
                    ev.position,
                    ev.offsets.len(),
                    ladder.len()
                )));
            }
            if !(0.0..=length * (1.0 + 1e-12)).contains(&ev.position) {
                return Err(RamanError::Config(format!(
                    "event at {} m outside [0, {length}] m",
                    ev.position
                )));
            }
            if ev.offsets.iter().any(|o| !o.is_finite()) {
                return Err(RamanError::Config("non-finite phase offset".into()));
            }
        }
        Ok(())
    }
}

/// Something applied to every order at a point: a pure phase jump or a thin
/// absorbing/retarding plate.
#[derive(Clone, Debug, PartialEq)]
pub struct Screen {
    pub position: f64,
    pub label: String,
    /// Phase added per order (rad).
    pub phase: Vec<f64>,
    /// Amplitude transmission per order; `None` for lossless resets.
    pub amplitude: Option<Vec<f64>>,
}

impl Screen {
    pub fn from_event(ev: &PhaseResetEvent, index: usize) -> Self {
        Screen {
            position: ev.position,
            label: format!("reset-{index}"),
            phase: ev.offsets.clone(),
            amplitude: None,
        }
    }

    fn apply(&self, e: &mut [Complex64]) {
        for (i, v) in e.iter_mut().enumerate() {
            let t = self.amplitude.as_ref().map_or(1.0, |a| a[i]);
            *v *= Complex64::from_polar(t, self.phase[i]);
        }
    }
}

/// Photons removed at one screen, summed over τ samples, per order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub position: f64,
    pub label: String,
    pub photons_lost: Vec<f64>,
}

impl LossRecord {
    pub fn total(&self) -> f64 {
        self.photons_lost.iter().fold(0.0, |a, b| a + b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub dxi: f64,
    pub n_steps: usize,
    /// Record photon fractions every `record_stride` steps (and at the end).
    pub record_stride: usize,
}

impl PropagationConfig {
    pub fn new(dxi: f64, n_steps: usize) -> Self {
        PropagationConfig {
            dxi,
            n_steps,
            record_stride: 1,
        }
    }

    /// Grid covering `length` with steps no longer than `max_dxi`.
    pub fn covering(length: f64, max_dxi: f64) -> Self {
        let n_steps = ((length / max_dxi).ceil() as usize).max(1);
        PropagationConfig::new(length / n_steps as f64, n_steps)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride.max(1);
        self
    }

    pub fn length(&self) -> f64 {
        self.dxi * self.n_steps as f64
    }

    fn validate(&self) -> Result<()> {
        if !(self.dxi > 0.0 && self.dxi.is_finite()) {
            return Err(RamanError::Config(format!("dxi must be positive, got {}", self.dxi)));
        }
        Ok(())
    }

    fn record_steps(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..=self.n_steps).step_by(self.record_stride.max(1)).collect();
        if *v.last().unwrap() != self.n_steps {
            v.push(self.n_steps);
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationResult {
    pub xi: Vec<f64>,
    /// `fractions[k][i]`: photons in ladder index `i` at `xi[k]`, summed over
    /// τ and divided by the input total.
    pub fractions: Vec<Vec<f64>>,
    pub final_field: FieldState,
    pub losses: Vec<LossRecord>,
    pub input_photons: f64,
}

impl PropagationResult {
    pub fn final_fractions(&self) -> &[f64] {
        self.fractions.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn fraction_at(&self, q: i32) -> Option<f64> {
        let i = self.final_field.ladder().index(q)?;
        self.final_fractions().get(i).copied()
    }

    pub fn total_loss(&self) -> f64 {
        self.losses.iter().map(LossRecord::total).fold(0.0, |a, b| a + b)
    }

    /// Loss recorded up to and including position `xi`, as a fraction of input.
    pub fn cumulative_loss_fraction(&self, xi: f64) -> f64 {
        if self.input_photons == 0.0 {
            return 0.0;
        }
        self.losses
            .iter()
            .filter(|l| l.position <= xi)
            .map(LossRecord::total)
            .sum::<f64>()
            / self.input_photons
    }

    /// max over records of |Σ fractions + cumulative loss − 1|.
    pub fn ledger_error(&self) -> f64 {
        self.xi
            .iter()
            .zip(&self.fractions)
            .map(|(&x, f)| (f.iter().sum::<f64>() + self.cumulative_loss_fraction(x) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with one row per (ξ, q).
    pub fn to_csv(&self) -> String {
        let ladder = self.final_field.ladder();
        let mut out = String::from("xi_m,order,photon_fraction\n");
        for (x, f) in self.xi.iter().zip(&self.fractions) {
            for (i, v) in f.iter().enumerate() {
                out.push_str(&format!("{:.9e},{},{:.12e}\n", x, ladder.order(i), v));
            }
        }
        out
    }
}

/// Per-slice tridiagonal generator of the field equation at fixed ρ.
#[derive(Clone, Debug)]
pub(crate) struct FieldStepper {
    k: Vec<f64>,
    coeffs: LadderCoefficients,
    diag: Vec<Complex64>,
    lower: Vec<Complex64>,
    upper: Vec<Complex64>,
    scratch: [Vec<Complex64>; 5],
}

impl FieldStepper {
    pub(crate) fn new(ladder: &ModeLadder, medium: &MediumSpec) -> Result<Self> {
        ladder.require_coupled()?;
        let coeffs = medium.for_ladder(ladder)?;
        let c0 = medium.propagation_constant();
        let k = ladder.angular_frequencies().iter().map(|w| c0 * w).collect();
        let n = ladder.len();
        let z = vec![Complex64::new(0.0, 0.0); n];
        Ok(FieldStepper {
            k,
            coeffs,
            diag: z.clone(),
            lower: z.clone(),
            upper: z.clone(),
            scratch: [z.clone(), z.clone(), z.clone(), z.clone(), z],
        })
    }

    /// Loads the coefficients for coherence `rho`.
    pub(crate) fn set_rho(&mut self, rho: &DensityMatrix) {
        let n = self.k.len();
        for i in 0..n {
            let alpha = self.coeffs.a[i] * rho.rho00 + self.coeffs.b[i] * rho.rho11;
            self.diag[i] = I * self.k[i] * alpha;
            self.lower[i] = if i > 0 {
                I * self.k[i] * self.coeffs.d[i - 1] * rho.rho01.conj()
            } else {
                Complex64::new(0.0, 0.0)
            };
            self.upper[i] = if i + 1 < n {
                I * self.k[i] * self.coeffs.d[i].conj() * rho.rho01
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
    }

    fn rhs(diag: &[Complex64], lower: &[Complex64], upper: &[Complex64], e: &[Complex64], out: &mut [Complex64]) {
        let n = e.len();
        for i in 0..n {
            let mut v = diag[i] * e[i];
            if i > 0 {
                v += lower[i] * e[i - 1];
            }
            if i + 1 < n {
                v += upper[i] * e[i + 1];
            }
            out[i] = v;
        }
    }

    /// One RK4 step of length `h` in place.
    pub(crate) fn step(&mut self, e: &mut [Complex64], h: f64) {
        let n = e.len();
        let [k1, k2, k3, k4, tmp] = &mut self.scratch;
        Self::rhs(&self.diag, &self.lower, &self.upper, e, k1);
        for i in 0..n {
            tmp[i] = e[i] + k1[i] * (0.5 * h);
        }
        Self::rhs(&self.diag, &self.lower, &self.upper, tmp, k2);
        for i in 0..n {
            tmp[i] = e[i] + k2[i] * (0.5 * h);
        }
        Self::rhs(&self.diag, &self.lower, &self.upper, tmp, k3);
        for i in 0..n {
            tmp[i] = e[i] + k3[i] * h;
        }
        Self::rhs(&self.diag, &self.lower, &self.upper, tmp, k4);
        let h6 = h / 6.0;
        for i in 0..n {
            e[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * h6;
        }
    }

    /// ∂E/∂ξ at the current coefficients.
    pub(crate) fn derivative(&self, e: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); e.len()];
        Self::rhs(&self.diag, &self.lower, &self.upper, e, &mut out);
        out
    }
}

/// Flow-form integrator for one τ slice.
#[derive(Clone, Debug)]
struct FlowStepper {
    /// N ħ / (ε₀ c)
    c0: f64,
    omega: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    d_abs: Vec<f64>,
    d_arg: Vec<f64>,
    sqrt_omega_pair: Vec<f64>,
    rho: DensityMatrix,
    floor: f64,
}

impl FlowStepper {
    fn new(ladder: &ModeLadder, medium: &MediumSpec) -> Result<Self> {
        ladder.require_coupled()?;
        let c = medium.for_ladder(ladder)?;
        let omega = ladder.angular_frequencies();
        let sqrt_omega_pair = omega.windows(2).map(|p| (p[0] * p[1]).sqrt()).collect();
        Ok(FlowStepper {
            c0: medium.propagation_constant(),
            a: c.a,
            b: c.b,
            d_abs: c.d.iter().map(|d| d.norm()).collect(),
            d_arg: c.d.iter().map(|d| d.arg()).collect(),
            sqrt_omega_pair,
            omega,
            rho: DensityMatrix::ground(),
            floor: 0.0,
        })
    }

    /// `s` is the signed square root of the photon density, `phi` the phase.
    fn rhs(&self, s: &[f64], phi: &[f64], ds: &mut [f64], dphi: &mut [f64]) {
        let n = s.len();
        let rm = self.rho.rho01.norm();
        let prho = self.rho.rho01.arg();
        for q in 0..n {
            let s_eff = if s[q].abs() < self.floor {
                self.floor.copysign(s[q])
            } else {
                s[q]
            };
            let mut amp = 0.0;
            let mut ph = self.omega[q] * (self.a[q] * self.rho.rho00 + self.b[q] * self.rho.rho11);
            if q > 0 {
                let arg = phi[q] - phi[q - 1] + prho - self.d_arg[q - 1];
                let g = rm * self.d_abs[q - 1] * self.sqrt_omega_pair[q - 1];
                amp += g * arg.sin() * s[q - 1];
                ph += g * arg.cos() * s[q - 1] / s_eff;
            }
            if q + 1 < n {
                let arg = phi[q + 1] - phi[q] + prho - self.d_arg[q];
                let g = rm * self.d_abs[q] * self.sqrt_omega_pair[q];
                amp -= g * arg.sin() * s[q + 1];
                ph += g * arg.cos() * s[q + 1] / s_eff;
            }
            ds[q] = self.c0 * amp;
            dphi[q] = self.c0 * ph;
        }
    }

    /// Advances by `h`, splitting the step wherever a nearly empty order makes
    /// its phase turn faster than `FLOW_MAX_PHASE_STEP` per substep.
    fn step(&self, s: &mut [f64], phi: &mut [f64], h: f64) {
        let n = s.len();
        let mut ds = vec![0.0; n];
        let mut dphi = vec![0.0; n];
        let min_sub = h / FLOW_MAX_SUBSTEPS as f64;
        let mut left = h;
        while left > 0.0 {
            self.rhs(s, phi, &mut ds, &mut dphi);
            let rate = dphi
                .iter()
                .zip(&self.omega)
                .zip(&self.a)
                .zip(&self.b)
                .map(|(((d, w), a), b)| {
                    (d - self.c0 * w * (a * self.rho.rho00 + b * self.rho.rho11)).abs()
                })
                .fold(0.0, f64::max);
            let mut sub = if rate > 0.0 { FLOW_MAX_PHASE_STEP / rate } else { left };
            sub = sub.max(min_sub).min(left);
            if left - sub < 1e-9 * h {
                sub = left;
            }
            self.rk4(s, phi, sub);
            left -= sub;
        }
    }

    fn rk4(&self, s: &mut [f64], phi: &mut [f64], h: f64) {
        let n = s.len();
        let mut ks = vec![vec![0.0; n]; 4];
        let mut kp = vec![vec![0.0; n]; 4];
        let mut ts = vec![0.0; n];
        let mut tp = vec![0.0; n];
        let weights = [0.0, 0.5, 0.5, 1.0];
        for stage in 0..4 {
            if stage == 0 {
                ts.copy_from_slice(s);
                tp.copy_from_slice(phi);
            } else {
                for i in 0..n {
                    ts[i] = s[i] + weights[stage] * h * ks[stage - 1][i];
                    tp[i] = phi[i] + weights[stage] * h * kp[stage - 1][i];
                }
            }
            let (a, b) = (&mut ks[stage], &mut kp[stage]);
            self.rhs(&ts, &tp, a, b);
        }
        let h6 = h / 6.0;
        for i in 0..n {
            s[i] += h6 * (ks[0][i] + 2.0 * ks[1][i] + 2.0 * ks[2][i] + ks[3][i]);
            phi[i] += h6 * (kp[0][i] + 2.0 * kp[1][i] + 2.0 * kp[2][i] + kp[3][i]);
        }
    }
}

/// Relative floor applied to n_q in the phase equation.
pub const FLOW_DENSITY_FLOOR: f64 = 1e-30;
/// Largest coupling-driven phase change per flow substep (rad).
pub const FLOW_MAX_PHASE_STEP: f64 = 0.02;
/// Upper bound on flow substeps per propagation step.
pub const FLOW_MAX_SUBSTEPS: usize = 100_000;

fn check_rho(rho: &CoherenceState, n_tau: usize) -> Result<()> {
    if rho.len() != n_tau {
        return Err(RamanError::ShapeMismatch(format!(
            "coherence has {} samples, field has {}",
            rho.len(),
            n_tau
        )));
    }
    Ok(())
}

fn sorted_screens(schedule: &FlowSchedule, extra: &[Screen]) -> Vec<Screen> {
    let mut screens: Vec<Screen> = schedule
        .events
        .iter()
        .enumerate()
        .map(|(k, ev)| Screen::from_event(ev, k))
        .chain(extra.iter().cloned())
        .collect();
    screens.sort_by(|a, b| a.position.total_cmp(&b.position));
    screens
}

/// Walks one slice through the ξ grid, applying screens at their exact
/// positions (partial steps are taken to reach them). `advance(h)` moves the
/// state by `h`; `screen(k)` applies screen `k`; `record(r)` is called at
/// every recorded step.
fn march(
    cfg: &PropagationConfig,
    screens: &[Screen],
    mut advance: impl FnMut(f64, f64) -> Result<()>,
    mut screen: impl FnMut(usize),
    mut record: impl FnMut(usize),
) -> Result<()> {
    let records = cfg.record_steps();
    let mut next_record = 0;
    let mut next_screen = 0;
    let mut xi = 0.0;
    let eps = cfg.dxi * 1e-9;
    let apply_due = |upto: f64, next_screen: &mut usize, xi: &mut f64, advance: &mut dyn FnMut(f64, f64) -> Result<()>, screen: &mut dyn FnMut(usize)| -> Result<()> {
        while *next_screen < screens.len() && screens[*next_screen].position <= upto + eps {
            let pos = screens[*next_screen].position;
            if pos > *xi + eps {
                advance(*xi, pos - *xi)?;
                *xi = pos;
            }
            screen(*next_screen);
            *next_screen += 1;
        }
        Ok(())
    };
    apply_due(0.0, &mut next_screen, &mut xi, &mut advance, &mut screen)?;
    if records[0] == 0 {
        record(0);
        next_record = 1;
    }
    for step in 0..cfg.n_steps {
        let target = (step + 1) as f64 * cfg.dxi;
        // screens strictly inside this step
        while next_screen < screens.len() && screens[next_screen].position < target - eps {
            let pos = screens[next_screen].position;
            if pos > xi + eps {
                advance(xi, pos - xi)?;
                xi = pos;
            }
            screen(next_screen);
            next_screen += 1;
        }
        if target > xi + eps {
            advance(xi, target - xi)?;
        }
        xi = target;
        // screens sitting on the grid point are applied before recording
        apply_due(target, &mut next_screen, &mut xi, &mut advance, &mut screen)?;
        if next_record < records.len() && records[next_record] == step + 1 {
            record(next_record);
            next_record += 1;
        }
    }
    Ok(())
}

/// Integrates the field form across `cfg` with phase resets from `schedule`.
pub fn propagate_field(
    fs: &FieldState,
    rho: &CoherenceState,
    medium: &MediumSpec,
    cfg: &PropagationConfig,
    schedule: &FlowSchedule,
) -> Result<PropagationResult> {
    propagate_field_with_screens(fs, rho, medium, cfg, schedule, &[])
}

/// Field-form integration with additional thin screens (plates).
pub fn propagate_field_with_screens(
    fs: &FieldState,
    rho: &CoherenceState,
    medium: &MediumSpec,
    cfg: &PropagationConfig,
    schedule: &FlowSchedule,
    plates: &[Screen],
) -> Result<PropagationResult> {
    cfg.validate()?;
    check_rho(rho, fs.n_tau())?;
    schedule.validate(fs.ladder(), cfg.length())?;
    let ladder = fs.ladder().clone();
    let n = ladder.len();
    let omegas = ladder.angular_frequencies();
    let screens = sorted_screens(schedule, plates);
    let records = cfg.record_steps();
    let mut photons = vec![vec![0.0; n]; records.len()];
    let mut lost = vec![vec![0.0; n]; screens.len()];
    let input: f64 = fs.total_photons();
    let mut stepper = FieldStepper::new(&ladder, medium)?;
    let mut out = fs.clone();

    for j in 0..fs.n_tau() {
        stepper.set_rho(&rho.get(j));
        let mut e: Vec<Complex64> = fs.slice(j).to_vec();
        let e_cell = std::cell::RefCell::new(&mut e);
        march(
            cfg,
            &screens,
            |x0, h| {
                let mut e = e_cell.borrow_mut();
                stepper.step(&mut e, h);
                if let Some(i) = e.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
                    return Err(RamanError::NonFinite {
                        xi: x0 + h,
                        tau_index: j,
                        order: ladder.order(i),
                    });
                }
                Ok(())
            },
            |k| {
                let mut e = e_cell.borrow_mut();
                let sc = &screens[k];
                if sc.amplitude.is_some() {
                    for i in 0..n {
                        lost[k][i] += photon_density(e[i], omegas[i]);
                    }
                    sc.apply(&mut e);
                    for i in 0..n {
                        lost[k][i] -= photon_density(e[i], omegas[i]);
                    }
                } else {
                    sc.apply(&mut e);
                }
            },
            |r| {
                let e = e_cell.borrow();
                for i in 0..n {
                    photons[r][i] += photon_density(e[i], omegas[i]);
                }
            },
        )?;
        out.slice_mut(j).copy_from_slice(&e);
    }
    Ok(assemble(cfg, &records, photons, &screens, lost, out, input))
}

fn assemble(
    cfg: &PropagationConfig,
    records: &[usize],
    photons: Vec<Vec<f64>>,
    screens: &[Screen],
    lost: Vec<Vec<f64>>,
    final_field: FieldState,
    input: f64,
) -> PropagationResult {
    let norm = if input > 0.0 { 1.0 / input } else { 0.0 };
    let fractions = photons
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * norm).collect())
        .collect();
    let losses = screens
        .iter()
        .zip(lost)
        .filter(|(s, _)| s.amplitude.is_some())
        .map(|(s, l)| LossRecord {
            position: s.position,
            label: s.label.clone(),
            photons_lost: l,
        })
        .collect();
    PropagationResult {
        xi: records.iter().map(|&r| r as f64 * cfg.dxi).collect(),
        fractions,
        final_field,
        losses,
        input_photons: input,
    }
}

/// Integrates the photon-number/phase form across `cfg`.
pub fn propagate_flow(
    fl: &FlowState,
    rho: &CoherenceState,
    medium: &MediumSpec,
    cfg: &PropagationConfig,
    schedule: &FlowSchedule,
) -> Result<PropagationResult> {
    cfg.validate()?;
    check_rho(rho, fl.n_tau())?;
    schedule.validate(fl.ladder(), cfg.length())?;
    let ladder = fl.ladder().clone();
    let n = ladder.len();
    let screens = sorted_screens(schedule, &[]);
    let records = cfg.record_steps();
    let mut photons = vec![vec![0.0; n]; records.len()];
    let input: f64 = fl.photon_density().iter().sum();
    let mut stepper = FlowStepper::new(&ladder, medium)?;
    let mut out_n = vec![0.0; fl.photon_density().len()];
    let mut out_phi = vec![0.0; fl.phase().len()];

    for j in 0..fl.n_tau() {
        stepper.rho = rho.get(j);
        let dens = fl.density_slice(j);
        if let Some(i) = dens.iter().position(|&v| v < 0.0) {
            return Err(RamanError::NegativePhotonDensity {
                order: ladder.order(i),
                tau_index: j,
                value: dens[i],
            });
        }
        let total: f64 = dens.iter().sum();
        stepper.floor = (FLOW_DENSITY_FLOOR * total).sqrt();
        let state = std::cell::RefCell::new((
            dens.iter().map(|v| v.sqrt()).collect::<Vec<f64>>(),
            fl.phase_slice(j).to_vec(),
        ));
        march(
            cfg,
            &screens,
            |x0, h| {
                let mut st = state.borrow_mut();
                let (s, phi) = &mut *st;
                stepper.step(s, phi, h);
                if let Some(i) = (0..n).position(|i| !(s[i].is_finite() && phi[i].is_finite())) {
                    return Err(RamanError::NonFinite {
                        xi: x0 + h,
                        tau_index: j,
                        order: ladder.order(i),
                    });
                }
                Ok(())
            },
            |k| {
                let mut st = state.borrow_mut();
                for i in 0..n {
                    st.1[i] += screens[k].phase[i];
                }
            },
            |r| {
                let st = state.borrow();
                for i in 0..n {
                    photons[r][i] += st.0[i] * st.0[i];
                }
            },
        )?;
        let (s, phi) = state.into_inner();
        for i in 0..n {
            out_n[j * n + i] = s[i] * s[i];
            out_phi[j * n + i] = if s[i] < 0.0 { phi[i] + std::f64::consts::PI } else { phi[i] };
        }
    }
    let final_flow = FlowState::new(ladder, fl.tau().to_vec(), out_n, out_phi)?;
    let final_field = to_field(&final_flow)?;
    Ok(assemble(cfg, &records, photons, &screens, vec![vec![0.0; n]; screens.len()], final_field, input))
}

/// Photon current from order q−1 into order q for every adjacent pair of one
/// τ slice, computed from the field equation: (N/c)·Re(i d_{q−1} ρ₀₁* E_{q−1} E_q*).
/// `currents[i]` belongs to the pair (ladder index i, i+1).
pub fn pair_currents(
    e: &[Complex64],
    coeffs: &LadderCoefficients,
    rho: &DensityMatrix,
    density: f64,
) -> Vec<f64> {
    coeffs
        .d
        .iter()
        .enumerate()
        .map(|(i, d)| (density / SPEED_OF_LIGHT) * (I * d * rho.rho01.conj() * e[i] * e[i + 1].conj()).re)
        .collect()
}

/// Direction of the q−1 → q exchange predicted by the flow form: the sign of
/// |d_{q−1}|·sin(φ_q − φ_{q−1} + φ_ρ − θ_{q−1}), i.e. of d·sin(φ(q, q−1)) for
/// real d. `+1` means photons move up the ladder.
pub fn flow_direction(phases: &[f64], d: &[Complex64], rho01: Complex64) -> Vec<i8> {
    d.iter()
        .enumerate()
        .map(|(i, di)| {
            let v = di.norm() * (phases[i + 1] - phases[i] + rho01.arg() - di.arg()).sin();
            if v > 0.0 {
                1
            } else if v < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect()
}

/// φ(q, q−1) = φ_q − φ_{q−1} + φ_ρ for every pair, wrapped to (−π, π].
pub fn relative_phases(phases: &[f64], rho01: Complex64) -> Vec<f64> {
    phases
        .windows(2)
        .map(|p| crate::units::wrap_phase(p[1] - p[0] + rho01.arg()))
        .collect()
}

/// Uniform coherence on the τ grid of `fs`.
pub fn uniform_coherence(fs: &FieldState, value: DensityMatrix) -> CoherenceState {
    CoherenceState::uniform(fs.tau().to_vec(), value)
}

/// Photon density per order (m⁻³) carried in `e`.
pub fn slice_photons(e: &[Complex64], ladder: &ModeLadder) -> Vec<f64> {
    e.iter()
        .enumerate()
        .map(|(i, v)| photon_density(*v, ladder.angular_frequency(ladder.order(i))))
        .collect()
}

/// ∂E/∂ξ for one slice, exposed for diagnostics and tests.
pub fn field_derivative(
    e: &[Complex64],
    ladder: &ModeLadder,
    medium: &MediumSpec,
    rho: &DensityMatrix,
) -> Result<Vec<Complex64>> {
    let mut st = FieldStepper::new(ladder, medium)?;
    st.set_rho(rho);
    Ok(st.derivative(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::SyntheticCoefficients;
    use crate::spectrum::to_flow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(qmin: i32, qmax: i32) -> (ModeLadder, MediumSpec) {
        let l = ModeLadder::from_wavelength(210.0, 124.7451, qmin, qmax).unwrap();
        let m = SyntheticCoefficients::default()
            .medium_for(&l, 2.6e24, 0.0, [0.0; 3], 0.5)
            .unwrap();
        (l, m)
    }

    fn single_mode(l: &ModeLadder, q: i32) -> FieldState {
        let mut fs = FieldState::zeros(l.clone(), vec![0.0]);
        fs.set(q, 0, Complex64::new(1e7, 0.0)).unwrap();
        fs
    }

    fn random_populated(l: &ModeLadder, n_tau: usize, rng: &mut ChaCha8Rng) -> FieldState {
        let amps = (0..n_tau * l.len())
            .map(|_| Complex64::from_polar(rng.gen_range(0.2e7..1.0e7), rng.gen_range(-3.0..3.0)))
            .collect();
        FieldState::new(l.clone(), (0..n_tau).map(|j| j as f64 * 1e-9).collect(), amps).unwrap()
    }

    #[test]
    fn no_coupling_no_dispersion_leaves_fields() {
        let (l, m) = setup(-1, 3);
        let m = m.with_tables(-1, vec![0.0; 5], vec![0.0; 5], vec![Complex64::new(0.0, 0.0); 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fs = random_populated(&l, 2, &mut rng);
        let rho = uniform_coherence(&fs, DensityMatrix::ground());
        let r = propagate_field(&fs, &rho, &m, &PropagationConfig::new(1e-3, 50), &FlowSchedule::default()).unwrap();
        for (a, b) in r.final_field.amplitudes().iter().zip(fs.amplitudes()) {
            assert!((a - b).norm() <= 1e-12 * b.norm());
        }
    }

    #[test]
    fn dispersion_only_rotates_phases_linearly() {
        let (l, m) = setup(-1, 3);
        let fs = random_populated(&l, 1, &mut ChaCha8Rng::seed_from_u64(2));
        let rho = DensityMatrix { rho00: 0.8, rho11: 0.2, rho01: Complex64::new(0.0, 0.0) };
        let cs = uniform_coherence(&fs, rho);
        let cfg = PropagationConfig::new(2e-4, 500);
        let r = propagate_field(&fs, &cs, &m, &cfg, &FlowSchedule::default()).unwrap();
        let k = m.propagation_constant();
        for (i, q) in l.orders().enumerate() {
            let rate = k * l.angular_frequency(q) * (m.a(q).unwrap() * 0.8 + m.b(q).unwrap() * 0.2);
            let expect = fs.slice(0)[i] * Complex64::from_polar(1.0, rate * cfg.length());
            let got = r.final_field.slice(0)[i];
            assert!((got.norm() - expect.norm()).abs() < 1e-9 * expect.norm());
            assert!((got - expect).norm() < 1e-7 * expect.norm(), "order {q}");
        }
    }

    #[test]
    fn two_mode_pendulum_matches_analytic_transfer() {
        let (l, m) = setup(0, 1);
        let d = m.d(0).unwrap();
        let m = m.with_tables(0, vec![0.0; 2], vec![0.0; 2], vec![d]);
        let fs = single_mode(&l, 0);
        let rho = DensityMatrix::pure_with_coherence(0.3, 0.4).unwrap();
        let cs = uniform_coherence(&fs, rho);
        let g = m.propagation_constant()
            * d.norm()
            * 0.3
            * (l.angular_frequency(0) * l.angular_frequency(1)).sqrt();
        let period = std::f64::consts::PI / g;
        let cfg = PropagationConfig::new(period / 2000.0, 2000);
        let r = propagate_field(&fs, &cs, &m, &cfg, &FlowSchedule::default()).unwrap();
        for (xi, f) in r.xi.iter().zip(&r.fractions) {
            let up = (g * xi).sin().powi(2);
            assert!((f[1] - up).abs() < 1e-6, "xi {xi}: {} vs {up}", f[1]);
            assert!((f[0] + f[1] - 1.0).abs() < 1e-9);
        }
        let half = r.fractions[1000][1];
        assert!(half > 1.0 - 1e-6, "full transfer at half period, got {half}");
    }

    #[test]
    fn field_and_flow_forms_agree() {
        let (l, m) = setup(-1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let fs = random_populated(&l, 2, &mut rng);
            let rho = DensityMatrix::pure_with_coherence(rng.gen_range(0.1..0.5), rng.gen_range(-3.0..3.0)).unwrap();
            let cs = uniform_coherence(&fs, rho);
            let cfg = PropagationConfig::new(1e-4, 400);
            let a = propagate_field(&fs, &cs, &m, &cfg, &FlowSchedule::default()).unwrap();
            let b = propagate_flow(&to_flow(&fs), &cs, &m, &cfg, &FlowSchedule::default()).unwrap();
            for (x, y) in a.fractions.iter().flatten().zip(b.fractions.iter().flatten()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn flow_form_follows_field_through_near_empty_order() {
        let (l, m) = setup(-1, 3);
        let amps = [1e7, 1e4, 8e6, 5e6, 2e6]
            .iter()
            .enumerate()
            .map(|(i, a)| Complex64::from_polar(*a, 0.9 * i as f64))
            .collect();
        let fs = FieldState::new(l, vec![0.0], amps).unwrap();
        let cs = uniform_coherence(&fs, DensityMatrix::pure_with_coherence(0.4, 1.1).unwrap());
        let cfg = PropagationConfig::new(2e-4, 300);
        let a = propagate_field(&fs, &cs, &m, &cfg, &FlowSchedule::default()).unwrap();
        let b = propagate_flow(&to_flow(&fs), &cs, &m, &cfg, &FlowSchedule::default()).unwrap();
        for (x, y) in a.fractions.iter().flatten().zip(b.fractions.iter().flatten()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn lossless_run_conserves_photons() {
        let (l, m) = setup(-1, 8);
        let fs = single_mode(&l, 0);
        let cs = uniform_coherence(&fs, DensityMatrix::pure_with_coherence(0.3, 0.0).unwrap());
        let cfg = PropagationConfig::covering(0.37295, 2e-4).with_stride(100);
        let r = propagate_field(&fs, &cs, &m, &cfg, &FlowSchedule::default()).unwrap();
        for f in &r.fractions {
            assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(r.ledger_error() < 1e-6);
    }

    #[test]
    fn field_currents_balance_photon_rates_and_follow_sign_law() {
        let (l, m) = setup(-1, 3);
        let c = m.for_ladder(&l).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let omegas = l.angular_frequencies();
        for _ in 0..200 {
            let e: Vec<Complex64> = (0..l.len())
                .map(|_| Complex64::from_polar(rng.gen_range(0.1e7..1.0e7), rng.gen_range(-3.2..3.2)))
                .collect();
            let rho = DensityMatrix::pure_with_coherence(0.3, rng.gen_range(-3.2..3.2)).unwrap();
            let de = field_derivative(&e, &l, &m, &rho).unwrap();
            let cur = pair_currents(&e, &c, &rho, m.density);
            for i in 0..l.len() {
                let rate = crate::units::EPSILON_0 * (e[i].conj() * de[i]).re / (crate::units::HBAR * omegas[i]);
                let inflow = if i > 0 { cur[i - 1] } else { 0.0 } - cur.get(i).copied().unwrap_or(0.0);
                assert!((rate - inflow).abs() <= 1e-9 * rate.abs().max(inflow.abs()).max(1e-30));
            }
            let phases: Vec<f64> = e.iter().map(|v| v.arg()).collect();
            let dir = flow_direction(&phases, &c.d, rho.rho01);
            for (s, j) in dir.iter().zip(&cur) {
                assert_eq!(*s as f64, j.signum());
            }
        }
    }

    #[test]
    fn quarter_turn_phase_starts_upward_flow() {
        let (l, m) = setup(0, 1);
        let rho = DensityMatrix::pure_with_coherence(0.3, 0.0).unwrap();
        let mut fs = FieldState::zeros(l.clone(), vec![0.0]);
        fs.set(0, 0, Complex64::new(1e7, 0.0)).unwrap();
        fs.set(1, 0, Complex64::from_polar(1e3, std::f64::consts::FRAC_PI_2)).unwrap();
        let c = m.for_ladder(&l).unwrap();
        let cur = pair_currents(fs.slice(0), &c, &rho, m.density);
        assert!(cur[0] > 0.0);
    }

    #[test]
    fn lone_mode_feeds_both_neighbours() {
        let (l, m) = setup(-1, 1);
        let fs = single_mode(&l, 0);
        let cs = uniform_coherence(&fs, DensityMatrix::pure_with_coherence(0.3, 0.0).unwrap());
        let r = propagate_field(&fs, &cs, &m, &PropagationConfig::new(1e-4, 20), &FlowSchedule::default()).unwrap();
        let f = r.final_fractions();
        assert!(f[0] > 0.0 && f[2] > 0.0);
    }

    #[test]
    fn reset_events_do_not_move_photons() {
        let (l, m) = setup(-1, 3);
        let fs = single_mode(&l, 0);
        let cs = uniform_coherence(&fs, DensityMatrix::pure_with_coherence(0.3, 0.0).unwrap());
        let cfg = PropagationConfig::new(1e-3, 20);
        let ev = PhaseResetEvent { position: 0.01, offsets: vec![0.3, -1.0, 2.0, 0.5, -2.5] };
        let sched = FlowSchedule::new(vec![ev]).unwrap();
        let with = propagate_field(&fs, &cs, &m, &cfg, &sched).unwrap();
        let without = propagate_field(&fs, &cs, &m, &cfg, &FlowSchedule::default()).unwrap();
        // the event lies on grid point 10; fractions recorded there are post-event
        for (a, b) in with.fractions[10].iter().zip(&without.fractions[10]) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(with.fractions[20].iter().zip(&without.fractions[20]).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn widening_the_ladder_leaves_interior_unchanged() {
        let (small, ms) = setup(-1, 8);
        let (wide, mw) = setup(-3, 10);
        let cfg = PropagationConfig::new(1e-4, 100);
        let run = |l: &ModeLadder, m: &MediumSpec| {
            let fs = single_mode(l, 3);
            let cs = uniform_coherence(&fs, DensityMatrix::pure_with_coherence(0.3, 0.0).unwrap());
            propagate_field(&fs, &cs, m, &cfg, &FlowSchedule::default()).unwrap()
        };
        let a = run(&small, &ms);
        let b = run(&wide, &mw);
        let fa = a.final_fractions();
        assert!(fa[0] < 1e-4 && fa[fa.len() - 1] < 1e-4);
        for (i, q) in small.orders().enumerate() {
            assert!((fa[i] - b.fraction_at(q).unwrap()).abs() < 1e-3);
        }
    }
}
