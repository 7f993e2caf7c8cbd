//! Full numerical experiments: driving and probe series sharing one Raman
//! coherence, plates on the optical path, ideal fixed-coherence runs and
//! probe tuning sweeps.
//!
//! Per ξ step the coherence is solved over the τ grid from the current fields
//! (driving series always, probe series only when fully coupled), then both
//! series are advanced with that coherence held fixed. Plates split the step
//! at their exact positions; the next coherence solve sees the changed phases.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::bloch::{drive_adiabatic_substeps, rabi_from_fields, RabiTerms};
use crate::coherence::{CoherenceState, DensityMatrix};
use crate::error::{RamanError, Result};
use crate::medium::{MediumSpec, SyntheticCoefficients};
use crate::plates::{
    default_catalog, stack_screens, Absorption, Material, MaterialCatalog, Plate, PlateStack,
    Series,
};
use crate::schedule::{concentration_schedule, ScheduleDesign, ScheduleOptions};
use crate::propagation::{
    FieldStepper, FlowSchedule, LossRecord, PropagationResult, Screen,
};
use crate::spectrum::{photon_density, symmetric_tau_grid, FieldState, ModeLadder};
use crate::units::{
    amplitude_from_intensity, gw_cm2_to_w_m2, mhz_to_rad_per_s, per_cm3_to_per_m3, thz_to_hz,
    SPEED_OF_LIGHT,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Probe sees the coherence but does not act back on it.
    #[default]
    WeakProbe,
    /// Probe fields add to the two-photon drive.
    FullyCoupled,
    /// Uniform fixed coherence, probe series only, no Bloch solve.
    Ideal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    pub density_cm3: f64,
    pub raman_shift_thz: f64,
    pub detuning_mhz: f64,
    #[serde(default)]
    pub gamma_a_per_s: f64,
    #[serde(default)]
    pub gamma_b_per_s: f64,
    #[serde(default)]
    pub gamma_c_per_s: f64,
    #[serde(default = "default_rabi_scale")]
    pub rabi_scale: f64,
    #[serde(default)]
    pub dataset: SyntheticCoefficients,
}

fn default_rabi_scale() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingConfig {
    /// E₀ wavelength, order 0 of the driving ladder.
    pub pump_wavelength_nm: f64,
    /// E₋₁ wavelength; must sit on order −1 of the ladder.
    pub stokes_wavelength_nm: f64,
    pub intensity_gw_cm2: f64,
    pub duration_ns: f64,
    pub q_min: i32,
    pub q_max: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub wavelength_nm: f64,
    pub intensity_gw_cm2: f64,
    pub duration_ns: f64,
    pub q_min: i32,
    pub q_max: i32,
    /// Frequency offset applied to the whole probe ladder.
    #[serde(default)]
    pub offset_ghz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub tau_samples: usize,
    /// Half width of the τ window in units of the driving FWHM.
    pub tau_half_width_fwhm: f64,
    pub xi_step_um: f64,
    /// Record fractions and coherence every this many ξ steps.
    pub record_every: usize,
    pub bloch_substeps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            tau_samples: 201,
            tau_half_width_fwhm: 1.5,
            xi_step_um: 200.0,
            record_every: 10,
            bloch_substeps: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdealConfig {
    pub rho01_magnitude: f64,
    pub start_order: i32,
    pub target_order: i32,
}

impl Default for IdealConfig {
    fn default() -> Self {
        IdealConfig {
            rho01_magnitude: 0.3,
            start_order: 0,
            target_order: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateRow {
    pub position_cm: f64,
    pub thickness_um: f64,
    pub material: String,
    pub axis: crate::plates::Axis,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatesConfig {
    /// Plate file (position_cm, thickness_um, material, axis).
    #[serde(default)]
    pub stack_file: Option<PathBuf>,
    #[serde(default)]
    pub rows: Vec<PlateRow>,
    /// Extra material files; MgF2 is always available.
    #[serde(default)]
    pub material_files: Vec<PathBuf>,
    /// Overrides the absorption of every material with a uniform per-plate
    /// intensity transmission.
    #[serde(default)]
    pub per_plate_transmission: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
    pub interaction_length_cm: f64,
    pub medium: MediumConfig,
    pub driving: DrivingConfig,
    pub probe: ProbeConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub ideal: IdealConfig,
    #[serde(default)]
    pub plates: PlatesConfig,
    /// Maximum probe/driving peak intensity ratio in weak-probe mode.
    #[serde(default = "default_weak_ratio")]
    pub weak_probe_ratio: f64,
}

fn default_weak_ratio() -> f64 {
    0.01
}

impl Default for Scenario {
    /// 210 nm probe behind 801/1202 nm driving lasers in parahydrogen.
    fn default() -> Self {
        Scenario {
            name: "vuv-210".into(),
            mode: Mode::WeakProbe,
            interaction_length_cm: 37.295,
            medium: MediumConfig {
                density_cm3: 2.6e18,
                raman_shift_thz: 124.7451,
                detuning_mhz: -500.0,
                gamma_a_per_s: 0.0,
                gamma_b_per_s: 0.0,
                gamma_c_per_s: 0.0,
                rabi_scale: 0.5,
                dataset: SyntheticCoefficients::default(),
            },
            driving: DrivingConfig {
                pump_wavelength_nm: 801.0817,
                stokes_wavelength_nm: 1201.6261,
                intensity_gw_cm2: 10.0,
                duration_ns: 10.0,
                q_min: -2,
                q_max: 6,
            },
            probe: ProbeConfig {
                wavelength_nm: 210.0,
                intensity_gw_cm2: 0.1,
                duration_ns: 5.0,
                q_min: -1,
                q_max: 8,
                offset_ghz: 0.0,
            },
            grid: GridConfig::default(),
            ideal: IdealConfig::default(),
            plates: PlatesConfig::default(),
            weak_probe_ratio: 0.01,
        }
    }
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| RamanError::Config(e.to_string()))
    }

    /// Reads a scenario file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut sc = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = sc.plates.stack_file.as_mut() {
            fix(p);
        }
        sc.plates.material_files.iter_mut().for_each(fix);
        Ok(sc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical serialized configuration.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn length(&self) -> f64 {
        self.interaction_length_cm * 1e-2
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(RamanError::Config(format!("{what} must be positive, got {v}")))
            }
        };
        positive(self.interaction_length_cm, "interaction_length_cm")?;
        positive(self.medium.density_cm3, "density_cm3")?;
        positive(self.medium.raman_shift_thz, "raman_shift_thz")?;
        positive(self.driving.duration_ns, "driving duration_ns")?;
        positive(self.probe.duration_ns, "probe duration_ns")?;
        positive(self.grid.xi_step_um, "xi_step_um")?;
        if self.driving.intensity_gw_cm2 < 0.0 || self.probe.intensity_gw_cm2 < 0.0 {
            return Err(RamanError::Config("intensities must be >= 0".into()));
        }
        if self.grid.tau_samples < 2 || self.grid.record_every == 0 {
            return Err(RamanError::Config(
                "need tau_samples >= 2 and record_every >= 1".into(),
            ));
        }
        if self.mode == Mode::WeakProbe
            && self.probe.intensity_gw_cm2 > self.weak_probe_ratio * self.driving.intensity_gw_cm2
        {
            return Err(RamanError::Config(format!(
                "probe {} GW/cm2 is too strong for weak-probe mode (limit {} of the driving intensity)",
                self.probe.intensity_gw_cm2, self.weak_probe_ratio
            )));
        }
        Ok(())
    }
}

/// Frequency-domain and numerical setup derived from a [`Scenario`].
#[derive(Clone, Debug)]
pub struct Experiment {
    pub scenario: Scenario,
    pub drive_ladder: ModeLadder,
    pub probe_ladder: ModeLadder,
    pub drive_medium: MediumSpec,
    pub probe_medium: MediumSpec,
    pub tau: Vec<f64>,
    pub stack: PlateStack,
    pub catalog: MaterialCatalog,
}

fn build_medium(sc: &Scenario, ladder: &ModeLadder) -> Result<MediumSpec> {
    let m = &sc.medium;
    m.dataset.medium_for(
        ladder,
        per_cm3_to_per_m3(m.density_cm3),
        mhz_to_rad_per_s(m.detuning_mhz),
        [m.gamma_a_per_s, m.gamma_b_per_s, m.gamma_c_per_s],
        m.rabi_scale,
    )
}

fn gaussian_series(
    ladder: &ModeLadder,
    tau: &[f64],
    orders: &[(i32, f64)],
    fwhm: f64,
) -> Result<FieldState> {
    let mut fs = FieldState::zeros(ladder.clone(), tau.to_vec());
    let c = 2.0 * std::f64::consts::LN_2 / (fwhm * fwhm);
    for &(q, peak) in orders {
        let e0 = amplitude_from_intensity(peak);
        for (j, t) in tau.iter().enumerate() {
            // intensity FWHM `fwhm` → amplitude exp(−2 ln2 τ²/fwhm²)
            fs.set(q, j, Complex64::new(e0 * (-c * t * t).exp(), 0.0))?;
        }
    }
    Ok(fs)
}

impl Experiment {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let shift = thz_to_hz(scenario.medium.raman_shift_thz);
        let d = &scenario.driving;
        let drive_ladder =
            ModeLadder::new(SPEED_OF_LIGHT / (d.pump_wavelength_nm * 1e-9), shift, d.q_min, d.q_max)?;
        if !drive_ladder.contains(-1) {
            return Err(RamanError::Config("driving ladder must contain order -1".into()));
        }
        let stokes = SPEED_OF_LIGHT / (d.stokes_wavelength_nm * 1e-9);
        let mismatch = (stokes - drive_ladder.frequency(-1)).abs();
        if mismatch > 1e10 {
            return Err(RamanError::Config(format!(
                "E-1 at {} nm is {:.3} GHz away from order -1 of the driving ladder",
                d.stokes_wavelength_nm,
                mismatch * 1e-9
            )));
        }
        let p = &scenario.probe;
        let probe_ladder = ModeLadder::new(
            SPEED_OF_LIGHT / (p.wavelength_nm * 1e-9) + p.offset_ghz * 1e9,
            shift,
            p.q_min,
            p.q_max,
        )?;
        let drive_medium = build_medium(&scenario, &drive_ladder)?;
        let probe_medium = build_medium(&scenario, &probe_ladder)?;
        let half = scenario.grid.tau_half_width_fwhm * d.duration_ns * 1e-9;
        let tau = symmetric_tau_grid(half, scenario.grid.tau_samples);

        let mut catalog = default_catalog();
        for f in &scenario.plates.material_files {
            let m = Material::load(f)?;
            catalog.insert(m.name.clone(), m);
        }
        if let Some(t) = scenario.plates.per_plate_transmission {
            for m in catalog.values_mut() {
                let edge = match &m.ordinary.absorption {
                    Absorption::PerPlate { transparent_above_nm, .. } => *transparent_above_nm,
                    Absorption::Table { .. } => None,
                };
                *m = m.clone().with_absorption(Absorption::PerPlate {
                    intensity_transmission: t,
                    transparent_above_nm: edge,
                });
            }
        }
        let mut plates: Vec<Plate> = Vec::new();
        if let Some(f) = &scenario.plates.stack_file {
            plates.extend(PlateStack::from_csv(&std::fs::read_to_string(f)?)?.plates().iter().cloned());
        }
        plates.extend(scenario.plates.rows.iter().map(|r| Plate {
            position: r.position_cm * 1e-2,
            thickness: r.thickness_um * 1e-6,
            material: r.material.clone(),
            axis: r.axis,
        }));
        plates.sort_by(|a, b| a.position.total_cmp(&b.position));
        let stack = PlateStack::new(plates)?;
        let exp = Experiment {
            scenario,
            drive_ladder,
            probe_ladder,
            drive_medium,
            probe_medium,
            tau,
            stack,
            catalog,
        };
        exp.check_stack(&exp.stack)?;
        Ok(exp)
    }

    fn check_stack(&self, stack: &PlateStack) -> Result<()> {
        stack.validate_within(self.scenario.length())?;
        stack_screens(stack, &self.probe_ladder, &self.catalog, Series::Probe)?;
        if self.scenario.mode != Mode::Ideal {
            stack_screens(stack, &self.drive_ladder, &self.catalog, Series::Driving)?;
        }
        Ok(())
    }

    /// Same experiment with another plate stack.
    pub fn with_stack(&self, stack: PlateStack) -> Result<Self> {
        let mut e = self.clone();
        e.check_stack(&stack)?;
        e.stack = stack;
        Ok(e)
    }

    /// Same experiment with the probe ladder shifted by `offset_hz`.
    pub fn with_probe_offset(&self, offset_hz: f64) -> Result<Self> {
        let mut sc = self.scenario.clone();
        sc.probe.offset_ghz = offset_hz * 1e-9;
        let mut e = Experiment::new(sc)?;
        e.catalog = self.catalog.clone();
        e.with_stack(self.stack.clone())
    }

    /// Same experiment on a different numerical grid.
    pub fn with_grid(&self, grid: GridConfig) -> Result<Self> {
        let mut sc = self.scenario.clone();
        sc.grid = grid;
        let mut e = Experiment::new(sc)?;
        e.catalog = self.catalog.clone();
        e.with_stack(self.stack.clone())
    }

    /// Same experiment over a different interaction length (m).
    pub fn with_length(&self, length: f64) -> Result<Self> {
        let mut sc = self.scenario.clone();
        sc.interaction_length_cm = length * 100.0;
        let mut e = Experiment::new(sc)?;
        e.catalog = self.catalog.clone();
        e.with_stack(self.stack.clone())
    }

    /// Concentration schedule for the configured ideal start and target orders.
    pub fn ideal_schedule(&self, opts: &ScheduleOptions) -> Result<ScheduleDesign> {
        let i = &self.scenario.ideal;
        concentration_schedule(
            &self.probe_ladder,
            i.start_order,
            i.target_order,
            &self.probe_medium,
            i.rho01_magnitude,
            opts,
        )
    }

    /// Ideal run that stops at the schedule end when the schedule records one.
    pub fn run_ideal_to_end(&self, schedule: &FlowSchedule) -> Result<ExperimentResult> {
        match schedule.end_position {
            Some(end) if end > 0.0 => self.with_length(end)?.run_ideal(schedule),
            _ => self.run_ideal(schedule),
        }
    }

    pub fn initial_driving(&self) -> Result<FieldState> {
        let d = &self.scenario.driving;
        let i = gw_cm2_to_w_m2(d.intensity_gw_cm2);
        gaussian_series(&self.drive_ladder, &self.tau, &[(0, i), (-1, i)], d.duration_ns * 1e-9)
    }

    pub fn initial_probe(&self) -> Result<FieldState> {
        let p = &self.scenario.probe;
        gaussian_series(
            &self.probe_ladder,
            &self.tau,
            &[(0, gw_cm2_to_w_m2(p.intensity_gw_cm2))],
            p.duration_ns * 1e-9,
        )
    }

    /// τ index of the driving pulse peak.
    pub fn peak_index(&self) -> usize {
        self.tau
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(j, _)| j)
            .unwrap_or(0)
    }

    fn ideal_rho(&self) -> Result<DensityMatrix> {
        DensityMatrix::pure_with_coherence(self.scenario.ideal.rho01_magnitude, 0.0)
    }

    /// Full self-consistent run with the current stack.
    pub fn run(&self) -> Result<ExperimentResult> {
        self.march(None, None)
    }

    /// Fixed uniform coherence, probe only, with phase resets from `schedule`
    /// (and any plates of the stack).
    pub fn run_ideal(&self, schedule: &FlowSchedule) -> Result<ExperimentResult> {
        schedule.validate(&self.probe_ladder, self.scenario.length())?;
        self.march(Some(self.ideal_rho()?), Some(schedule))
    }

    /// Runs in the configured mode; ideal mode uses no resets.
    pub fn run_configured(&self) -> Result<ExperimentResult> {
        match self.scenario.mode {
            Mode::Ideal => self.run_ideal(&FlowSchedule::default()),
            _ => self.run(),
        }
    }

    fn solve_rho(&self, drive: &FieldState, probe: &FieldState) -> Result<CoherenceState> {
        let mut rabi: RabiTerms = rabi_from_fields(drive, &self.drive_medium)?;
        if self.scenario.mode == Mode::FullyCoupled {
            rabi.accumulate(&rabi_from_fields(probe, &self.probe_medium)?)?;
        }
        drive_adiabatic_substeps(
            &rabi,
            &self.tau,
            &self.drive_medium,
            DensityMatrix::ground(),
            self.scenario.grid.bloch_substeps,
        )
    }

    fn march(
        &self,
        fixed_rho: Option<DensityMatrix>,
        schedule: Option<&FlowSchedule>,
    ) -> Result<ExperimentResult> {
        let ideal = fixed_rho.is_some();
        let mut probe_screens =
            stack_screens(&self.stack, &self.probe_ladder, &self.catalog, Series::Probe)?;
        if let Some(s) = schedule {
            probe_screens.extend(s.events.iter().enumerate().map(|(k, ev)| Screen::from_event(ev, k)));
        }
        probe_screens.sort_by(|a, b| a.position.total_cmp(&b.position));
        let drive_screens = if ideal {
            Vec::new()
        } else {
            stack_screens(&self.stack, &self.drive_ladder, &self.catalog, Series::Driving)?
        };

        let mut m = Marcher::new(self, fixed_rho, true)?;
        let mut probe_rec = SeriesRecorder::new(&m.probe, &probe_screens);
        let mut drive_rec = m.drive.as_ref().map(|d| SeriesRecorder::new(d, &drive_screens));

        // merged screen order; probe first at equal positions
        let mut order: Vec<(f64, bool, usize)> = probe_screens
            .iter()
            .enumerate()
            .map(|(k, s)| (s.position, true, k))
            .chain(drive_screens.iter().enumerate().map(|(k, s)| (s.position, false, k)))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        for (pos, is_probe, k) in order {
            m.advance_to(pos, Some(&mut probe_rec), drive_rec.as_mut())?;
            if is_probe {
                probe_rec.apply(&mut m.probe, &probe_screens[k], k);
            } else if let (Some(d), Some(r)) = (m.drive.as_mut(), drive_rec.as_mut()) {
                r.apply(d, &drive_screens[k], k);
            }
        }
        m.finish(Some(&mut probe_rec), drive_rec.as_mut())?;

        let peak = self.peak_index();
        let peak_coherence = m.coherence.rho01.iter().map(|row| row[peak].norm()).collect();
        Ok(ExperimentResult {
            probe: probe_rec.finish(m.probe),
            driving: match (drive_rec, m.drive) {
                (Some(r), Some(d)) => Some(r.finish(d)),
                _ => None,
            },
            coherence: m.coherence,
            peak_coherence,
            plate_positions: self.stack.plates().iter().map(|p| p.position).collect(),
            provenance: Provenance {
                config_hash: self.scenario.config_hash(),
                stack_hash: stack_hash(&self.stack),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: None,
            },
        })
    }

    /// Fraction of probe input photons in `order` at the output.
    pub fn probe_efficiency(&self, order: i32) -> Result<f64> {
        let r = self.run_configured()?;
        r.probe
            .fraction_at(order)
            .ok_or(RamanError::OrderOutOfLadder {
                order,
                q_min: self.probe_ladder.q_min(),
                q_max: self.probe_ladder.q_max(),
            })
    }
}

fn stack_hash(stack: &PlateStack) -> String {
    let digest = Sha256::digest(stack.to_csv().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Resumable ξ march on the fixed step grid of an experiment. A clone is a
/// checkpoint: continuing from it reproduces the uninterrupted run exactly.
#[derive(Clone)]
pub(crate) struct Marcher<'a> {
    exp: &'a Experiment,
    fixed_rho: Option<DensityMatrix>,
    pub(crate) probe: FieldState,
    pub(crate) drive: Option<FieldState>,
    probe_step: FieldStepper,
    drive_step: Option<FieldStepper>,
    pub(crate) xi: f64,
    step: usize,
    dxi: f64,
    n_steps: usize,
    recording: bool,
    last_record: Option<usize>,
    pub(crate) coherence: CoherenceRecord,
    /// |ρ₀₁| at the driving peak for every grid point passed, when tracking.
    pub(crate) peak_rho: Option<Vec<f64>>,
}

impl<'a> Marcher<'a> {
    pub(crate) fn new(exp: &'a Experiment, fixed_rho: Option<DensityMatrix>, recording: bool) -> Result<Self> {
        let sc = &exp.scenario;
        let length = sc.length();
        let n_steps = ((length / (sc.grid.xi_step_um * 1e-6)).round() as usize).max(1);
        let ideal = fixed_rho.is_some();
        Ok(Marcher {
            exp,
            fixed_rho,
            probe: exp.initial_probe()?,
            drive: if ideal { None } else { Some(exp.initial_driving()?) },
            probe_step: FieldStepper::new(&exp.probe_ladder, &exp.probe_medium)?,
            drive_step: if ideal {
                None
            } else {
                Some(FieldStepper::new(&exp.drive_ladder, &exp.drive_medium)?)
            },
            xi: 0.0,
            step: 0,
            dxi: length / n_steps as f64,
            n_steps,
            recording,
            last_record: None,
            coherence: CoherenceRecord {
                xi: Vec::new(),
                tau: exp.tau.clone(),
                rho01: Vec::new(),
            },
            peak_rho: None,
        })
    }

    pub(crate) fn track_peak_coherence(mut self) -> Self {
        self.peak_rho = Some(Vec::new());
        self
    }

    pub(crate) fn grid_index(&self) -> usize {
        self.step
    }

    fn track(&mut self, k: usize, rho: &CoherenceState) {
        let peak = self.exp.peak_index();
        if let Some(v) = self.peak_rho.as_mut() {
            if v.len() == k {
                v.push(rho.get(peak).rho01.norm());
            }
        }
    }

    pub(crate) fn length(&self) -> f64 {
        self.dxi * self.n_steps as f64
    }

    pub(crate) fn step_size(&self) -> f64 {
        self.dxi
    }

    /// Advances to the next grid point.
    pub(crate) fn advance_step(&mut self) -> Result<()> {
        let next = (self.step + 1) as f64 * self.dxi;
        self.advance_to(next, None, None)
    }

    pub(crate) fn rho(&self) -> Result<CoherenceState> {
        match (self.fixed_rho, &self.drive) {
            (Some(r), _) => Ok(CoherenceState::uniform(self.exp.tau.clone(), r)),
            (None, Some(d)) => self.exp.solve_rho(d, &self.probe),
            (None, None) => unreachable!("driving series exists outside ideal mode"),
        }
    }

    fn record(
        &mut self,
        k: usize,
        rho: &CoherenceState,
        probe_rec: Option<&mut SeriesRecorder>,
        drive_rec: Option<&mut SeriesRecorder>,
    ) {
        if !self.recording || self.last_record == Some(k) {
            return;
        }
        self.last_record = Some(k);
        if let Some(r) = probe_rec {
            r.record(self.xi, &self.probe);
        }
        if let (Some(r), Some(d)) = (drive_rec, self.drive.as_ref()) {
            r.record(self.xi, d);
        }
        self.coherence.xi.push(self.xi);
        self.coherence.rho01.push(rho.points().iter().map(|p| p.rho01).collect());
    }

    /// Marches to `x` (clamped to the interaction length), solving the
    /// coherence at the start of every step or partial step.
    pub(crate) fn advance_to(
        &mut self,
        x: f64,
        mut probe_rec: Option<&mut SeriesRecorder>,
        mut drive_rec: Option<&mut SeriesRecorder>,
    ) -> Result<()> {
        let eps = self.dxi * 1e-9;
        let x = x.min(self.length());
        let every = self.exp.scenario.grid.record_every;
        while self.xi < x - eps {
            let k = self.step;
            let rho = self.rho()?;
            let on_grid = (self.xi - k as f64 * self.dxi).abs() <= eps;
            if on_grid {
                self.track(k, &rho);
            }
            if on_grid && k % every == 0 {
                self.record(k, &rho, probe_rec.as_deref_mut(), drive_rec.as_deref_mut());
            }
            let next = (k + 1) as f64 * self.dxi;
            let end = if x < next - eps { x } else { next };
            let h = end - self.xi;
            advance_series(&mut self.probe, &mut self.probe_step, &rho, h, self.xi)?;
            if let (Some(d), Some(st)) = (self.drive.as_mut(), self.drive_step.as_mut()) {
                advance_series(d, st, &rho, h, self.xi)?;
            }
            if end == next {
                self.step += 1;
            }
            self.xi = end;
        }
        Ok(())
    }

    /// Marches to the exit and records the final state.
    pub(crate) fn finish(
        &mut self,
        mut probe_rec: Option<&mut SeriesRecorder>,
        mut drive_rec: Option<&mut SeriesRecorder>,
    ) -> Result<()> {
        self.advance_to(self.length(), probe_rec.as_deref_mut(), drive_rec.as_deref_mut())?;
        if self.recording || self.peak_rho.is_some() {
            let rho = self.rho()?;
            self.track(self.n_steps, &rho);
            self.record(self.n_steps, &rho, probe_rec, drive_rec);
        }
        Ok(())
    }

    /// Probe photons in each order relative to the probe input.
    pub(crate) fn probe_fractions(&self, input: f64) -> Vec<f64> {
        self.probe.photons_per_order().into_iter().map(|v| v / input).collect()
    }
}

fn advance_series(
    fs: &mut FieldState,
    stepper: &mut FieldStepper,
    rho: &CoherenceState,
    h: f64,
    xi: f64,
) -> Result<()> {
    let ladder = fs.ladder().clone();
    for j in 0..fs.n_tau() {
        stepper.set_rho(&rho.get(j));
        let e = fs.slice_mut(j);
        stepper.step(e, h);
        if let Some(i) = e.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(RamanError::NonFinite {
                xi: xi + h,
                tau_index: j,
                order: ladder.order(i),
            });
        }
    }
    Ok(())
}

/// Photon bookkeeping for one series during a run.
pub(crate) struct SeriesRecorder {
    omegas: Vec<f64>,
    input: f64,
    xi: Vec<f64>,
    photons: Vec<Vec<f64>>,
    losses: Vec<(f64, String, Vec<f64>)>,
    lossy: Vec<bool>,
}

impl SeriesRecorder {
    fn new(fs: &FieldState, screens: &[Screen]) -> Self {
        SeriesRecorder {
            omegas: fs.ladder().angular_frequencies(),
            input: fs.total_photons(),
            xi: Vec::new(),
            photons: Vec::new(),
            losses: screens
                .iter()
                .map(|s| (s.position, s.label.clone(), vec![0.0; fs.n_orders()]))
                .collect(),
            lossy: screens.iter().map(|s| s.amplitude.is_some()).collect(),
        }
    }

    fn apply(&mut self, fs: &mut FieldState, screen: &Screen, index: usize) {
        let n = fs.n_orders();
        let amp = screen.amplitude.as_deref();
        for j in 0..fs.n_tau() {
            for (i, e) in fs.slice_mut(j).iter_mut().enumerate() {
                let before = photon_density(*e, self.omegas[i]);
                *e *= Complex64::from_polar(amp.map_or(1.0, |a| a[i]), screen.phase[i]);
                if amp.is_some() {
                    self.losses[index].2[i] += before - photon_density(*e, self.omegas[i]);
                }
            }
        }
        debug_assert_eq!(self.losses[index].2.len(), n);
    }

    fn record(&mut self, xi: f64, fs: &FieldState) {
        self.xi.push(xi);
        let norm = if self.input > 0.0 { 1.0 / self.input } else { 0.0 };
        self.photons
            .push(fs.photons_per_order().into_iter().map(|v| v * norm).collect());
    }

    fn finish(self, fs: FieldState) -> PropagationResult {
        let losses = self
            .losses
            .into_iter()
            .zip(self.lossy)
            .filter(|(_, l)| *l)
            .map(|((position, label, photons_lost), _)| LossRecord {
                position,
                label,
                photons_lost,
            })
            .collect();
        PropagationResult {
            xi: self.xi,
            fractions: self.photons,
            final_field: fs,
            losses,
            input_photons: self.input,
        }
    }
}

/// ρ₀₁(τ) at every recorded ξ.
#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceRecord {
    pub xi: Vec<f64>,
    pub tau: Vec<f64>,
    pub rho01: Vec<Vec<Complex64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub stack_hash: String,
    pub version: String,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub probe: PropagationResult,
    pub driving: Option<PropagationResult>,
    pub coherence: CoherenceRecord,
    /// |ρ₀₁| at the driving peak for every recorded ξ.
    pub peak_coherence: Vec<f64>,
    pub plate_positions: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderFraction {
    pub order: i32,
    pub wavelength_nm: f64,
    pub photon_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub input_photons_per_m3: f64,
    pub output: Vec<OrderFraction>,
    pub plate_loss_fraction: f64,
    pub ledger_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub probe: SeriesSummary,
    pub driving: Option<SeriesSummary>,
    pub peak_coherence_min: f64,
    pub peak_coherence_max: f64,
    pub provenance: Provenance,
}

fn summarize(r: &PropagationResult) -> SeriesSummary {
    let l = r.final_field.ladder();
    SeriesSummary {
        input_photons_per_m3: r.input_photons,
        output: r
            .final_fractions()
            .iter()
            .enumerate()
            .map(|(i, f)| OrderFraction {
                order: l.order(i),
                wavelength_nm: l.wavelength_nm(l.order(i)),
                photon_fraction: *f,
            })
            .collect(),
        plate_loss_fraction: if r.input_photons > 0.0 {
            r.total_loss() / r.input_photons
        } else {
            0.0
        },
        ledger_error: r.ledger_error(),
    }
}

impl ExperimentResult {
    pub fn summary(&self, scenario: &str) -> RunSummary {
        let fold = |f: fn(f64, f64) -> f64, init| self.peak_coherence.iter().copied().fold(init, f);
        RunSummary {
            scenario: scenario.to_string(),
            probe: summarize(&self.probe),
            driving: self.driving.as_ref().map(summarize),
            peak_coherence_min: fold(f64::min, f64::INFINITY),
            peak_coherence_max: fold(f64::max, 0.0),
            provenance: self.provenance.clone(),
        }
    }

    /// Largest relative difference of the peak |ρ₀₁| between two runs on the
    /// same ξ records, skipping records within `exclusion` (m) of any plate
    /// of either run.
    pub fn coherence_deviation(&self, other: &ExperimentResult, exclusion: f64) -> f64 {
        let near = |x: f64| {
            self.plate_positions
                .iter()
                .chain(&other.plate_positions)
                .any(|p| (x - p).abs() < exclusion)
        };
        self.coherence
            .xi
            .iter()
            .zip(self.peak_coherence.iter().zip(&other.peak_coherence))
            .filter(|(x, _)| !near(**x))
            .map(|(_, (a, b))| if *b > 0.0 { (a - b).abs() / b } else { 0.0 })
            .fold(0.0, f64::max)
    }
}

/// Fractions CSV for one series: xi_cm, order, wavelength_nm, photon_fraction.
pub fn fractions_csv(r: &PropagationResult) -> String {
    let l = r.final_field.ladder();
    let mut s = String::from("xi_cm,order,wavelength_nm,photon_fraction\n");
    for (x, f) in r.xi.iter().zip(&r.fractions) {
        for (i, v) in f.iter().enumerate() {
            let q = l.order(i);
            s.push_str(&format!("{:.6},{},{:.6},{:.12e}\n", x * 100.0, q, l.wavelength_nm(q), v));
        }
    }
    s
}

/// Coherence CSV: xi_cm, tau_ns, abs_rho01, arg_rho01.
pub fn coherence_csv(c: &CoherenceRecord) -> String {
    let mut s = String::from("xi_cm,tau_ns,abs_rho01,arg_rho01\n");
    for (x, row) in c.xi.iter().zip(&c.rho01) {
        for (t, r) in c.tau.iter().zip(row) {
            s.push_str(&format!("{:.6},{:.6},{:.9e},{:.9e}\n", x * 100.0, t * 1e9, r.norm(), r.arg()));
        }
    }
    s
}

/// Probe efficiency in `order` as the probe ladder is shifted across `offsets_hz`
/// with the plate stack fixed.
pub fn tunability_sweep(exp: &Experiment, order: i32, offsets_hz: &[f64]) -> Result<Vec<(f64, f64)>> {
    offsets_hz
        .iter()
        .map(|&o| Ok((o, exp.with_probe_offset(o)?.probe_efficiency(order)?)))
        .collect()
}

/// Entry points mirroring the command line.
pub fn run_experiment(sc: &Scenario) -> Result<ExperimentResult> {
    Experiment::new(sc.clone())?.run()
}

pub fn run_ideal(sc: &Scenario, schedule: &FlowSchedule) -> Result<ExperimentResult> {
    Experiment::new(sc.clone())?.run_ideal(schedule)
}

const END_TAG: &str = "# end_position_m=";

/// Schedule files: one row per event, position_m then one offset (rad) per
/// order. A leading `# end_position_m=` comment carries the schedule end.
pub fn schedule_csv(schedule: &FlowSchedule, ladder: &ModeLadder) -> String {
    let mut s = String::new();
    if let Some(end) = schedule.end_position {
        s.push_str(&format!("{END_TAG}{end:e}\n"));
    }
    s.push_str("position_m");
    for q in ladder.orders() {
        s.push_str(&format!(",offset_q{q}"));
    }
    s.push('\n');
    for ev in &schedule.events {
        s.push_str(&format!("{:e}", ev.position));
        for o in &ev.offsets {
            s.push_str(&format!(",{:e}", o));
        }
        s.push('\n');
    }
    s
}

pub fn schedule_from_csv(text: &str, ladder: &ModeLadder) -> Result<FlowSchedule> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut events = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| RamanError::Config(e.to_string()))?;
        let vals: Vec<f64> = row
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| RamanError::Config(format!("schedule value '{v}': {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != ladder.len() + 1 {
            return Err(RamanError::ShapeMismatch(format!(
                "schedule row has {} offsets for {} orders",
                vals.len().saturating_sub(1),
                ladder.len()
            )));
        }
        events.push(crate::propagation::PhaseResetEvent {
            position: vals[0],
            offsets: vals[1..].to_vec(),
        });
    }
    let mut schedule = FlowSchedule::new(events)?;
    for line in text.lines() {
        if let Some(v) = line.trim().strip_prefix(END_TAG) {
            let end = v
                .trim()
                .parse::<f64>()
                .map_err(|e| RamanError::Config(format!("schedule end '{v}': {e}")))?;
            schedule.end_position = Some(end);
        }
    }
    Ok(schedule)
}
