//! Plate-stack design for probe photon concentration in the full model.
//!
//! Plates of two-plate hops start at the reset positions of the fixed-coherence
//! concentration schedule (evaluated at the probe-weighted entrance
//! coherence); single-plate hops get a position scan. Each thickness is the
//! grid value whose phase kick, applied to both series with the coherence
//! re-solved, best aligns the probe pair currents toward the plate's target
//! order while keeping the peak coherence within a band of the plate-free run.
//! An adaptive random search then polishes thicknesses (optionally positions)
//! on the exit efficiency.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{RamanError, Result};
use crate::optimizer::{random_search, DesignVector, ObjectiveReport, SearchConfig};
use crate::plates::{plate_screen, Axis, Plate, PlateStack, Series};
use crate::propagation::slice_photons;
use crate::scenario::{Experiment, GridConfig, Marcher};
use crate::schedule::{concentration_schedule, ScheduleOptions};
use crate::spectrum::{photon_density, FieldState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    pub material: String,
    /// Plate axis seen by the probe series.
    pub probe_axis: Axis,
    pub thickness_min_um: f64,
    pub thickness_max_um: f64,
    pub thickness_grid_um: f64,
    /// Thickness scan step before fine polishing.
    pub coarse_grid_um: f64,
    /// Thickness candidates tried per position of a scanned plate.
    pub candidates: usize,
    /// Position scan stride in design-grid steps.
    pub gap_stride_steps: usize,
    /// Smallest distance between consecutive plates.
    pub min_gap_mm: f64,
    /// Allowed relative change of the peak coherence against the plate-free
    /// run; `None` disables the guard.
    pub coherence_band: Option<f64>,
    /// Objective penalty per unit of coherence deviation beyond the band.
    pub coherence_penalty: f64,
    /// Also rank constructive thickness candidates by the band.
    pub screen_candidates: bool,
    /// Half width of the thickness search box around the constructive design.
    pub thickness_box_um: f64,
    pub optimize_positions: bool,
    pub position_box_mm: f64,
    pub search: SearchConfig,
    /// Coarser grid used while designing; `None` keeps the experiment grid.
    pub design_grid: Option<GridConfig>,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            material: "MgF2".into(),
            probe_axis: Axis::Ordinary,
            thickness_min_um: 5.0,
            thickness_max_um: 105.0,
            thickness_grid_um: 0.1,
            coarse_grid_um: 0.5,
            candidates: 3,
            gap_stride_steps: 4,
            min_gap_mm: 2.0,
            coherence_band: Some(0.04),
            coherence_penalty: 10.0,
            screen_candidates: false,
            thickness_box_um: 3.0,
            optimize_positions: false,
            position_box_mm: 10.0,
            search: SearchConfig {
                initial_step: 0.1,
                max_evaluations: 300,
                ..SearchConfig::default()
            },
            design_grid: Some(GridConfig {
                tau_samples: 41,
                xi_step_um: 400.0,
                ..GridConfig::default()
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackDesign {
    pub target: i32,
    /// Order each plate concentrates toward.
    pub plate_targets: Vec<i32>,
    pub constructive: PlateStack,
    pub constructive_efficiency: f64,
    pub stack: PlateStack,
    /// Exit efficiency on the design grid.
    pub efficiency: f64,
    /// Largest relative peak-coherence change against the plate-free run.
    pub coherence_deviation: f64,
    pub report: Option<ObjectiveReport>,
}

/// Target order of every plate: hops from `start` to `target` one order at a
/// time, two plates per hop for the earliest hops and one for the rest.
pub fn plate_targets(start: i32, target: i32, n_plates: usize) -> Result<Vec<i32>> {
    let hops = (target - start).unsigned_abs() as usize;
    if hops == 0 {
        return Err(RamanError::Config("target order equals the input order".into()));
    }
    if n_plates < hops || n_plates > 2 * hops {
        return Err(RamanError::Config(format!(
            "{n_plates} plates cannot serve {hops} hops (need {hops}..={})",
            2 * hops
        )));
    }
    let dir = (target - start).signum();
    let doubled = n_plates - hops;
    let mut out = Vec::with_capacity(n_plates);
    for h in 0..hops {
        let t = start + dir * (h as i32 + 1);
        out.push(t);
        if h < doubled {
            out.push(t);
        }
    }
    Ok(out)
}

fn apply_screen(fs: &mut FieldState, phase: &[f64], amplitude: Option<&[f64]>) {
    for j in 0..fs.n_tau() {
        for (i, e) in fs.slice_mut(j).iter_mut().enumerate() {
            *e *= Complex64::from_polar(amplitude.map_or(1.0, |a| a[i]), phase[i]);
        }
    }
}

fn apply_plate_to(m: &mut Marcher, exp: &Experiment, plate: &Plate, lossy: bool) -> Result<()> {
    let mat = exp
        .catalog
        .get(&plate.material)
        .ok_or_else(|| RamanError::Config(format!("unknown plate material '{}'", plate.material)))?;
    let p = plate_screen(&exp.probe_ladder, plate, mat.axis(plate.axis_for(Series::Probe)), String::new())?;
    apply_screen(&mut m.probe, &p.phase, p.amplitude.as_deref().filter(|_| lossy));
    if let Some(drive) = m.drive.as_mut() {
        let d = plate_screen(&exp.drive_ladder, plate, mat.axis(plate.axis_for(Series::Driving)), String::new())?;
        apply_screen(drive, &d.phase, d.amplitude.as_deref().filter(|_| lossy));
    }
    Ok(())
}

fn advance_steps(m: &mut Marcher, n: usize) -> Result<bool> {
    for _ in 0..n {
        if m.xi >= m.length() - 0.5 * m.step_size() {
            return Ok(false);
        }
        m.advance_step()?;
    }
    Ok(true)
}

/// Marches until the probe fraction in `order` stops growing, at most `limit`
/// beyond the current position; leaves `m` at the best step.
fn advance_to_peak(m: &mut Marcher, order: i32, limit: f64, input: f64) -> Result<f64> {
    let idx = m.probe.ladder().index_checked(order)?;
    let stop = (m.xi + limit).min(m.length());
    let mut prev = m.clone();
    let mut best = m.probe_fractions(input)[idx];
    while m.xi < stop - 0.5 * m.step_size() {
        m.advance_step()?;
        let f = m.probe_fractions(input)[idx];
        if f < best {
            *m = prev;
            return Ok(best);
        }
        best = f;
        prev = m.clone();
    }
    Ok(best)
}

/// Design context on the design grid.
struct Designer<'a> {
    exp: &'a Experiment,
    opts: &'a DesignOptions,
    /// Peak coherence of the plate-free run per grid point.
    baseline: Vec<f64>,
    input: f64,
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    thickness_um: f64,
    score: f64,
    deviation: f64,
}

impl Candidate {
    fn better_than(&self, other: &Candidate, band: f64) -> bool {
        match (self.deviation <= band, other.deviation <= band) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => self.score > other.score,
            (false, false) => self.deviation < other.deviation,
        }
    }
}

impl<'a> Designer<'a> {
    fn new(exp: &'a Experiment, opts: &'a DesignOptions) -> Result<Self> {
        let mut m = Marcher::new(exp, None, false)?.track_peak_coherence();
        let input = m.probe.total_photons();
        m.finish(None, None)?;
        Ok(Designer {
            exp,
            opts,
            baseline: m.peak_rho.take().unwrap_or_default(),
            input,
        })
    }

    fn band(&self) -> f64 {
        self.opts.coherence_band.unwrap_or(f64::INFINITY)
    }

    fn candidate_band(&self) -> f64 {
        if self.opts.screen_candidates {
            self.band()
        } else {
            f64::INFINITY
        }
    }

    fn marcher(&self) -> Result<Marcher<'a>> {
        Ok(Marcher::new(self.exp, None, false)?.track_peak_coherence())
    }

    fn plate_at(&self, m: &Marcher, thickness_um: f64) -> Plate {
        Plate {
            position: m.xi,
            thickness: thickness_um * 1e-6,
            material: self.opts.material.clone(),
            axis: self.opts.probe_axis,
        }
    }

    /// Photon-weighted alignment of the probe pair phases with the pattern
    /// converging on `target`, and the relative peak-coherence change.
    fn evaluate(&self, m: &Marcher, target: i32, t_um: f64) -> Result<Candidate> {
        let exp = self.exp;
        let mut trial = m.clone();
        apply_plate_to(&mut trial, exp, &self.plate_at(m, t_um), false)?;
        let rho = trial.rho()?;
        let coeffs = exp.probe_medium.for_ladder(&exp.probe_ladder)?;
        let ladder = &exp.probe_ladder;
        let omegas = ladder.angular_frequencies();
        let mut score = 0.0;
        for j in 0..trial.probe.n_tau() {
            let e = trial.probe.slice(j);
            let r = rho.get(j).rho01;
            for (i, d) in coeffs.d.iter().enumerate() {
                let sign = if ladder.order(i + 1) <= target { 1.0 } else { -1.0 };
                let rel = e[i + 1].arg() - e[i].arg() + r.arg() - d.arg();
                let w = photon_density(e[i], omegas[i]) + photon_density(e[i + 1], omegas[i + 1]);
                score += sign * w * r.norm() * d.norm() * rel.sin();
            }
        }
        let peak = rho.get(exp.peak_index()).rho01.norm();
        let base = self.baseline.get(m.grid_index()).copied().unwrap_or(peak);
        Ok(Candidate {
            thickness_um: t_um,
            score,
            deviation: (peak / base - 1.0).abs(),
        })
    }

    /// Best `k` thicknesses: local optima of a coarse scan, each polished on
    /// the fine grid.
    fn candidates(&self, m: &Marcher, target: i32, k: usize) -> Result<Vec<f64>> {
        let o = self.opts;
        let band = self.candidate_band();
        let n = ((o.thickness_max_um - o.thickness_min_um) / o.coarse_grid_um).round() as usize;
        let scan = (0..=n)
            .map(|i| self.evaluate(m, target, o.thickness_min_um + i as f64 * o.coarse_grid_um))
            .collect::<Result<Vec<_>>>()?;
        let mut peaks: Vec<Candidate> = (0..scan.len())
            .filter(|&i| {
                (i == 0 || !scan[i - 1].better_than(&scan[i], band))
                    && (i + 1 == scan.len() || !scan[i + 1].better_than(&scan[i], band))
            })
            .map(|i| scan[i])
            .collect();
        peaks.sort_by(|a, b| {
            if a.better_than(b, band) {
                std::cmp::Ordering::Less
            } else if b.better_than(a, band) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        });
        peaks.truncate(k.max(1));
        let steps = (o.coarse_grid_um / o.thickness_grid_um).round() as i64;
        let mut out = Vec::with_capacity(peaks.len());
        for c0 in peaks {
            let mut best = c0;
            for i in -steps..=steps {
                let t = c0.thickness_um + i as f64 * o.thickness_grid_um;
                if i == 0 || t < o.thickness_min_um || t > o.thickness_max_um {
                    continue;
                }
                let c = self.evaluate(m, target, t)?;
                if c.better_than(&best, band) {
                    best = c;
                }
            }
            out.push(best.thickness_um);
        }
        Ok(out)
    }

    fn deviation(&self, m: &Marcher) -> f64 {
        m.peak_rho
            .as_deref()
            .unwrap_or(&[])
            .iter()
            .zip(&self.baseline)
            .map(|(a, b)| (a / b - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Best single plate for `target` placed on a stride of design steps up
    /// to `to`, scored by the peak target fraction within `reach` or, with
    /// `exit`, by the exit fraction.
    fn scan_single(
        &self,
        start: &Marcher<'a>,
        target: i32,
        to: f64,
        reach: f64,
        exit: bool,
    ) -> Result<Option<(f64, Plate, Marcher<'a>)>> {
        let idx = self.exp.probe_ladder.index_checked(target)?;
        let mut m = start.clone();
        let mut best: Option<(f64, Plate, Marcher)> = None;
        while m.xi <= to + 1e-12 {
            for t in self.candidates(&m, target, self.opts.candidates)? {
                let p = self.plate_at(&m, t);
                let mut trial = m.clone();
                apply_plate_to(&mut trial, self.exp, &p, true)?;
                let v = if exit {
                    trial.finish(None, None)?;
                    trial.probe_fractions(self.input)[idx]
                } else {
                    advance_to_peak(&mut trial, target, reach, self.input)?
                };
                if best.as_ref().map_or(true, |b| v > b.0) {
                    best = Some((v, p, trial));
                }
            }
            if !advance_steps(&mut m, self.opts.gap_stride_steps.max(1))? {
                break;
            }
        }
        Ok(best)
    }

    fn constructive(&self, target: i32, n_plates: usize) -> Result<(PlateStack, Vec<i32>, f64)> {
        let exp = self.exp;
        let targets = plate_targets(0, target, n_plates)?;
        let hops = target.unsigned_abs() as usize;
        let doubled = n_plates - hops;
        let mut m = self.marcher()?;
        let rho = weighted_coherence(exp, &m)?;
        let template = concentration_schedule(
            &exp.probe_ladder,
            0,
            target,
            &exp.probe_medium,
            rho,
            &ScheduleOptions { max_pairs_per_hop: 1, ..ScheduleOptions::default() },
        )?;
        // a template longer than the cell is compressed to fit
        let fit = 0.98 * m.length() / template.length();
        let scale = if fit < 1.0 { fit } else { 1.0 };
        let mut plates: Vec<Plate> = Vec::with_capacity(n_plates);
        let mut value = 0.0;
        let min_gap = ((self.opts.min_gap_mm * 1e-3 / m.step_size()).ceil() as usize).max(1);
        for (h, hop) in template.hops.iter().enumerate() {
            let t = hop.target;
            let last = h + 1 == template.hops.len();
            if h < doubled {
                for e in 0..2 {
                    m.advance_to(scale * template.schedule.events[2 * h + e].position, None, None)?;
                    if let Some(prev) = plates.last() {
                        while m.xi < prev.position + self.opts.min_gap_mm * 1e-3 - 1e-12 {
                            if !advance_steps(&mut m, 1)? {
                                return Err(RamanError::Config("no room left for the remaining plates".into()));
                            }
                        }
                    }
                    let th = self.candidates(&m, t, 1)?[0];
                    let p = self.plate_at(&m, th);
                    apply_plate_to(&mut m, exp, &p, true)?;
                    plates.push(p);
                }
                if last {
                    m.finish(None, None)?;
                    value = m.probe_fractions(self.input)[exp.probe_ladder.index_checked(t)?];
                }
            } else {
                let mut start = m.clone();
                advance_steps(&mut start, min_gap)?;
                let prev_peak = if h == 0 { 0.0 } else { scale * template.hops[h - 1].peak_position };
                let span = scale * hop.peak_position - prev_peak;
                let to = if last { m.length() } else { m.xi + span };
                let (v, p, state) = self
                    .scan_single(&start, t, to, span, last)?
                    .ok_or_else(|| RamanError::Config("no room left for the remaining plates".into()))?;
                plates.push(p.clone());
                value = v;
                if last {
                    m = state;
                } else {
                    m.advance_to(p.position, None, None)?;
                    apply_plate_to(&mut m, exp, &p, true)?;
                }
            }
        }
        Ok((PlateStack::new(plates)?, targets, value))
    }

    /// Exit efficiency and peak-coherence deviation of `stack`.
    fn assess(&self, stack: &PlateStack, target: i32) -> Result<(f64, f64)> {
        let idx = self.exp.probe_ladder.index_checked(target)?;
        let mut m = self.marcher()?;
        for p in stack.plates() {
            m.advance_to(p.position, None, None)?;
            apply_plate_to(&mut m, self.exp, p, true)?;
        }
        m.finish(None, None)?;
        Ok((m.probe_fractions(self.input)[idx], self.deviation(&m)))
    }

    fn objective(&self, stack: &PlateStack, target: i32) -> Result<f64> {
        let (eff, dev) = self.assess(stack, target)?;
        Ok(eff - self.opts.coherence_penalty * (dev - self.band()).max(0.0))
    }

    fn refine(&self, stack: &PlateStack, target: i32) -> Result<(PlateStack, ObjectiveReport)> {
        let o = self.opts;
        let plates = stack.plates();
        let mut values: Vec<f64> = plates.iter().map(|p| p.thickness * 1e6).collect();
        let mut lower: Vec<f64> = values.iter().map(|t| (t - o.thickness_box_um).max(0.1)).collect();
        let mut upper: Vec<f64> = values.iter().map(|t| t + o.thickness_box_um).collect();
        let mut res = vec![1e-3; plates.len()];
        if o.optimize_positions {
            let length_mm = self.exp.scenario.length() * 1e3;
            for p in plates {
                let x = p.position * 1e3;
                values.push(x);
                lower.push((x - o.position_box_mm).max(0.0));
                upper.push((x + o.position_box_mm).min(length_mm));
                res.push(0.1);
            }
        }
        let x0 = DesignVector::new(values, lower, upper, res)?;
        let objective = |x: &DesignVector| match geometry(stack, x, o.optimize_positions) {
            Ok(s) => self.objective(&s, target).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        };
        let report = random_search(objective, &x0, &o.search)?;
        Ok((geometry(stack, &report.best, o.optimize_positions)?, report))
    }
}

/// Probe-photon-weighted |ρ₀₁| over the τ grid.
fn weighted_coherence(exp: &Experiment, m: &Marcher) -> Result<f64> {
    let rho = m.rho()?;
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..m.probe.n_tau() {
        let n: f64 = slice_photons(m.probe.slice(j), &exp.probe_ladder).iter().sum();
        num += n * rho.get(j).rho01.norm();
        den += n;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

fn geometry(stack: &PlateStack, x: &DesignVector, with_positions: bool) -> Result<PlateStack> {
    let n = stack.len();
    let thick: Vec<f64> = x.values[..n].iter().map(|t| t * 1e-6).collect();
    let pos: Option<Vec<f64>> = with_positions.then(|| x.values[n..].iter().map(|p| p * 1e-3).collect());
    stack.with_geometry(&thick, pos.as_deref())
}

fn design_experiment(exp: &Experiment, opts: &DesignOptions) -> Result<Experiment> {
    let e = match &opts.design_grid {
        Some(g) => exp.with_grid(g.clone())?,
        None => exp.clone(),
    };
    e.with_stack(PlateStack::empty())
}

/// Exit fraction of the probe in `target` with `stack` (no records kept).
pub fn exit_efficiency(exp: &Experiment, stack: &PlateStack, target: i32) -> Result<f64> {
    let idx = exp.probe_ladder.index_checked(target)?;
    let mut m = Marcher::new(exp, None, false)?;
    let input = m.probe.total_photons();
    for p in stack.plates() {
        m.advance_to(p.position, None, None)?;
        apply_plate_to(&mut m, exp, p, true)?;
    }
    m.finish(None, None)?;
    Ok(m.probe_fractions(input)[idx])
}

/// Constructive stack only, on the experiment's own grid.
pub fn constructive_stack(
    exp: &Experiment,
    target: i32,
    n_plates: usize,
    opts: &DesignOptions,
) -> Result<(PlateStack, Vec<i32>, f64)> {
    let e = exp.with_stack(PlateStack::empty())?;
    Designer::new(&e, opts)?.constructive(target, n_plates)
}

/// Designs `n_plates` plates concentrating the probe into `target`.
/// Zero plates returns the empty stack and its baseline efficiency.
pub fn design_stack(
    exp: &Experiment,
    target: i32,
    n_plates: usize,
    opts: &DesignOptions,
) -> Result<StackDesign> {
    exp.probe_ladder.index_checked(target)?;
    let dexp = design_experiment(exp, opts)?;
    let designer = Designer::new(&dexp, opts)?;
    if n_plates == 0 {
        let (eff, _) = designer.assess(&PlateStack::empty(), target)?;
        return Ok(StackDesign {
            target,
            plate_targets: Vec::new(),
            constructive: PlateStack::empty(),
            constructive_efficiency: eff,
            stack: PlateStack::empty(),
            efficiency: eff,
            coherence_deviation: 0.0,
            report: None,
        });
    }
    let (constructive, targets, constructive_efficiency) = designer.constructive(target, n_plates)?;
    let (stack, report) = designer.refine(&constructive, target)?;
    let (efficiency, coherence_deviation) = designer.assess(&stack, target)?;
    Ok(StackDesign {
        target,
        plate_targets: targets,
        constructive,
        constructive_efficiency,
        stack,
        efficiency,
        coherence_deviation,
        report: Some(report),
    })
}

/// Half widths (thickness in m, position in m) of the region where the exit
/// efficiency stays at or above `level` times its value at the design point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceWindow {
    pub plate: usize,
    pub thickness_half_width: f64,
    pub position_half_width: f64,
    /// (offset, efficiency) samples of the thickness scan.
    pub thickness_curve: Vec<(f64, f64)>,
    pub position_curve: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceOptions {
    pub thickness_span: f64,
    pub thickness_step: f64,
    pub position_span: f64,
    pub position_step: f64,
    pub level: f64,
}

impl Default for ToleranceOptions {
    fn default() -> Self {
        ToleranceOptions {
            thickness_span: 5e-6,
            thickness_step: 0.1e-6,
            position_span: 20e-3,
            position_step: 1e-3,
            level: 0.9,
        }
    }
}

fn half_width(curve: &[(f64, f64)], threshold: f64) -> f64 {
    // contiguous region around offset 0 above threshold
    let centre = curve
        .iter()
        .position(|(o, _)| o.abs() < 1e-15)
        .unwrap_or(curve.len() / 2);
    let mut hi = curve[centre].0;
    for &(o, v) in &curve[centre..] {
        if v < threshold {
            break;
        }
        hi = o;
    }
    let mut lo = curve[centre].0;
    for &(o, v) in curve[..=centre].iter().rev() {
        if v < threshold {
            break;
        }
        lo = o;
    }
    0.5 * (hi - lo)
}

fn scan(span: f64, step: f64, mut f: impl FnMut(f64) -> Result<Option<f64>>) -> Result<Vec<(f64, f64)>> {
    let n = (span / step).round() as i64;
    let mut out = Vec::new();
    for k in -n..=n {
        let o = k as f64 * step;
        if let Some(v) = f(o)? {
            out.push((o, v));
        }
    }
    Ok(out)
}

/// One-at-a-time tolerance scan of every plate around `stack`, using
/// `efficiency` as the figure of merit.
pub fn tolerance_scan(
    stack: &PlateStack,
    opts: &ToleranceOptions,
    mut efficiency: impl FnMut(&PlateStack) -> Result<f64>,
) -> Result<Vec<ToleranceWindow>> {
    let base = efficiency(stack)?;
    let threshold = opts.level * base;
    let n = stack.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let plates = stack.plates();
        let thick: Vec<f64> = plates.iter().map(|p| p.thickness).collect();
        let pos: Vec<f64> = plates.iter().map(|p| p.position).collect();
        let tcurve = scan(opts.thickness_span, opts.thickness_step, |o| {
            let mut t = thick.clone();
            t[i] += o;
            if t[i] <= 0.0 {
                return Ok(None);
            }
            Ok(Some(if o == 0.0 { base } else { efficiency(&stack.with_geometry(&t, None)?)? }))
        })?;
        let pcurve = scan(opts.position_span, opts.position_step, |o| {
            let mut x = pos.clone();
            x[i] += o;
            let ordered = (i == 0 || x[i] > x[i - 1]) && (i + 1 == n || x[i] < x[i + 1]) && x[i] >= 0.0;
            if !ordered {
                return Ok(None);
            }
            Ok(Some(if o == 0.0 { base } else { efficiency(&stack.with_geometry(&thick, Some(&x))?)? }))
        })?;
        out.push(ToleranceWindow {
            plate: i,
            thickness_half_width: half_width(&tcurve, threshold),
            position_half_width: half_width(&pcurve, threshold),
            thickness_curve: tcurve,
            position_curve: pcurve,
        });
    }
    Ok(out)
}
