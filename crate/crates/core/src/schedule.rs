//! Phase-reset schedules that walk photons one order at a time toward a
//! target order under uniform coherence.
//!
//! Every hop toward an intermediate order `t` uses two resets. Each reset sets
//! the effective relative phase of every adjacent pair to +π/2 below `t` and
//! −π/2 above it, so all flow converges on `t`. The first reset fixes the
//! direction after the previous concentration peak has spread; the second
//! re-phases once dispersion has rotated the pattern. Gaps are chosen by a
//! grid scan over one exchange window followed by golden-section polishing.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::coherence::DensityMatrix;
use crate::error::{RamanError, Result};
use crate::medium::MediumSpec;
use crate::propagation::{FlowSchedule, PhaseResetEvent};
use crate::spectrum::ModeLadder;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOptions {
    /// Grid points per gap in the coarse scan.
    pub grid_points: usize,
    /// Search window for each gap, in units of π/g with g the coupling of the
    /// pair feeding the target.
    pub window: f64,
    /// Golden-section sweeps over (gap A, gap B, dwell) after the grid scan.
    pub refine_sweeps: usize,
    /// Smallest gap between consecutive resets (m).
    pub min_gap: f64,
    /// Extra reset pairs are added to a hop until it reaches this fraction.
    pub hop_goal: f64,
    /// Upper bound on reset pairs per hop.
    pub max_pairs_per_hop: usize,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        ScheduleOptions {
            grid_points: 48,
            window: 1.2,
            refine_sweeps: 3,
            min_gap: 1e-5,
            hop_goal: 0.99,
            max_pairs_per_hop: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopReport {
    pub target: i32,
    /// Fraction of the input photons in `target` at `peak_position`.
    pub efficiency: f64,
    pub peak_position: f64,
    pub events: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDesign {
    pub schedule: FlowSchedule,
    pub hops: Vec<HopReport>,
}

impl ScheduleDesign {
    /// Position of the final concentration peak.
    pub fn length(&self) -> f64 {
        self.schedule.end_position.unwrap_or(0.0)
    }
}

/// Exact propagator of one τ slice at fixed ρ, in photon-normalized
/// amplitudes u_q = E_q/√ω_q, for which the generator is Hermitian.
pub(crate) struct SliceWalk {
    values: Vec<f64>,
    vectors: DMatrix<Complex64>,
    /// arg of the generator element coupling index i to i + 1 (below diagonal).
    coupling_arg: Vec<f64>,
    coupling_abs: Vec<f64>,
}

impl SliceWalk {
    pub(crate) fn new(ladder: &ModeLadder, medium: &MediumSpec, rho: &DensityMatrix) -> Result<Self> {
        ladder.require_coupled()?;
        let c = medium.for_ladder(ladder)?;
        let k = medium.propagation_constant();
        let w = ladder.angular_frequencies();
        let n = w.len();
        let mut h = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            h[(i, i)] = Complex64::new(k * w[i] * (c.a[i] * rho.rho00 + c.b[i] * rho.rho11), 0.0);
        }
        let mut coupling_arg = Vec::with_capacity(n - 1);
        let mut coupling_abs = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let g = c.d[i] * rho.rho01.conj() * (k * (w[i] * w[i + 1]).sqrt());
            h[(i + 1, i)] = g;
            h[(i, i + 1)] = g.conj();
            coupling_arg.push(g.arg());
            coupling_abs.push(g.norm());
        }
        let eig = h.symmetric_eigen();
        Ok(SliceWalk {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
            coupling_arg,
            coupling_abs,
        })
    }

    fn modal(&self, u: &[Complex64]) -> DVector<Complex64> {
        self.vectors.adjoint() * DVector::from_column_slice(u)
    }

    fn from_modal(&self, c: &DVector<Complex64>, z: f64) -> Vec<Complex64> {
        let rotated = DVector::from_iterator(
            c.len(),
            c.iter().zip(&self.values).map(|(ck, l)| ck * Complex64::from_polar(1.0, l * z)),
        );
        (&self.vectors * rotated).iter().copied().collect()
    }

    pub(crate) fn advance(&self, u: &[Complex64], z: f64) -> Vec<Complex64> {
        self.from_modal(&self.modal(u), z)
    }

    /// |u_i(z)|² for modal coefficients `c`.
    fn population(&self, c: &DVector<Complex64>, i: usize, z: f64) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, (ck, l)) in c.iter().zip(&self.values).enumerate() {
            acc += self.vectors[(i, k)] * ck * Complex64::from_polar(1.0, l * z);
        }
        acc.norm_sqr()
    }

    /// Phase offsets that make every pair converge on ladder index `target`,
    /// leaving the phase of `target` itself unchanged.
    pub(crate) fn converge_offsets(&self, u: &[Complex64], target: usize) -> Vec<f64> {
        let n = u.len();
        let mut wanted = vec![0.0; n];
        for p in 1..n {
            let turn = if p <= target { FRAC_PI_2 } else { -FRAC_PI_2 };
            wanted[p] = wanted[p - 1] + self.coupling_arg[p - 1] + turn;
        }
        let shift = u[target].arg() - wanted[target];
        (0..n).map(|i| wanted[i] + shift - u[i].arg()).collect()
    }

    fn reset(&self, u: &[Complex64], target: usize) -> (Vec<Complex64>, Vec<f64>) {
        let off = self.converge_offsets(u, target);
        let v = u.iter().zip(&off).map(|(x, o)| x * Complex64::from_polar(1.0, *o)).collect();
        (v, off)
    }
}

/// One reset pair: gap to reset A, gap to reset B, dwell to the peak.
#[derive(Clone, Copy, Debug)]
struct PairGaps {
    a: f64,
    b: f64,
    dwell: f64,
}

fn pair_outcome(walk: &SliceWalk, u: &[Complex64], target: usize, gaps: PairGaps) -> f64 {
    let (x, _) = walk.reset(&walk.advance(u, gaps.a), target);
    let (y, _) = walk.reset(&walk.advance(&x, gaps.b), target);
    let c = walk.modal(&y);
    walk.population(&c, target, gaps.dwell)
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 > f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

fn search_pair(
    walk: &SliceWalk,
    u: &[Complex64],
    target: usize,
    window: f64,
    opts: &ScheduleOptions,
) -> (PairGaps, f64) {
    let m = opts.grid_points.max(4);
    let lo = opts.min_gap;
    let step = (window - lo) / (m - 1) as f64;
    let grid: Vec<f64> = (0..m).map(|i| lo + i as f64 * step).collect();
    let dwell_pts = 4 * m;
    let dwell_step = window / (dwell_pts - 1) as f64;
    let mut best = (PairGaps { a: lo, b: lo, dwell: 0.0 }, -1.0);
    let c0 = walk.modal(u);
    for &ga in &grid {
        let (x, _) = walk.reset(&walk.from_modal(&c0, ga), target);
        let cx = walk.modal(&x);
        for &gb in &grid {
            let (y, _) = walk.reset(&walk.from_modal(&cx, gb), target);
            let cy = walk.modal(&y);
            for k in 0..dwell_pts {
                let z = k as f64 * dwell_step;
                let f = walk.population(&cy, target, z);
                if f > best.1 {
                    best = (PairGaps { a: ga, b: gb, dwell: z }, f);
                }
            }
        }
    }
    let (mut g, mut fbest) = best;
    for _ in 0..opts.refine_sweeps {
        let (a, fa) = golden_max(
            |a| pair_outcome(walk, u, target, PairGaps { a, ..g }),
            (g.a - step).max(lo),
            g.a + step,
            40,
        );
        if fa > fbest {
            g.a = a;
            fbest = fa;
        }
        let (b, fb) = golden_max(
            |b| pair_outcome(walk, u, target, PairGaps { b, ..g }),
            (g.b - step).max(lo),
            g.b + step,
            40,
        );
        if fb > fbest {
            g.b = b;
            fbest = fb;
        }
        let (d, fd) = golden_max(
            |dwell| pair_outcome(walk, u, target, PairGaps { dwell, ..g }),
            (g.dwell - dwell_step).max(0.0),
            g.dwell + dwell_step,
            40,
        );
        if fd > fbest {
            g.dwell = d;
            fbest = fd;
        }
    }
    (g, fbest)
}

/// Builds the reset schedule walking photons from `start` to `target` one
/// order at a time under uniform coherence of magnitude `rho_mag` (phase 0).
/// An empty schedule is returned when `start == target`.
pub fn concentration_schedule(
    ladder: &ModeLadder,
    start: i32,
    target: i32,
    medium: &MediumSpec,
    rho_mag: f64,
    opts: &ScheduleOptions,
) -> Result<ScheduleDesign> {
    let si = ladder.index_checked(start)?;
    let ti = ladder.index_checked(target)?;
    if si == ti {
        return Ok(ScheduleDesign {
            schedule: FlowSchedule::default(),
            hops: Vec::new(),
        });
    }
    let rho = DensityMatrix::pure_with_coherence(rho_mag, 0.0)?;
    let walk = SliceWalk::new(ladder, medium, &rho)?;
    let n = ladder.len();
    let mut u = vec![Complex64::new(0.0, 0.0); n];
    u[si] = Complex64::new(1.0, 0.0);
    let dir: isize = if ti > si { 1 } else { -1 };
    let mut position = 0.0;
    let mut events = Vec::new();
    let mut targets = Vec::new();
    let mut hops = Vec::new();
    let mut cur = si as isize;
    while cur != ti as isize {
        let next = (cur + dir) as usize;
        let feed = if dir > 0 { next - 1 } else { next };
        let window = opts.window * std::f64::consts::PI / walk.coupling_abs[feed];
        let mut n_events = 0;
        let mut eff = 0.0;
        for pair in 0..opts.max_pairs_per_hop.max(1) {
            let (g, f) = search_pair(&walk, &u, next, window, opts);
            if pair > 0 && f <= eff {
                break;
            }
            let (x, off_a) = walk.reset(&walk.advance(&u, g.a), next);
            position += g.a;
            events.push(PhaseResetEvent { position, offsets: off_a });
            let (y, off_b) = walk.reset(&walk.advance(&x, g.b), next);
            position += g.b;
            events.push(PhaseResetEvent { position, offsets: off_b });
            targets.extend([ladder.order(next), ladder.order(next)]);
            u = walk.advance(&y, g.dwell);
            position += g.dwell;
            n_events += 2;
            eff = f;
            if eff >= opts.hop_goal {
                break;
            }
        }
        hops.push(HopReport {
            target: ladder.order(next),
            efficiency: eff,
            peak_position: position,
            events: n_events,
        });
        cur = next as isize;
    }
    let mut schedule = FlowSchedule::new(events)?;
    schedule.targets = targets;
    schedule.end_position = Some(position);
    Ok(ScheduleDesign { schedule, hops })
}

/// Fraction of photons in every order after propagating a single unit-photon
/// slice through `schedule` with the exact propagator, up to `length`.
pub fn exact_fractions(
    ladder: &ModeLadder,
    start: i32,
    medium: &MediumSpec,
    rho: &DensityMatrix,
    schedule: &FlowSchedule,
    length: f64,
) -> Result<Vec<f64>> {
    let walk = SliceWalk::new(ladder, medium, rho)?;
    let mut u = vec![Complex64::new(0.0, 0.0); ladder.len()];
    u[ladder.index_checked(start)?] = Complex64::new(1.0, 0.0);
    let mut at = 0.0;
    for ev in &schedule.events {
        if ev.position > length {
            break;
        }
        u = walk.advance(&u, ev.position - at);
        for (x, o) in u.iter_mut().zip(&ev.offsets) {
            *x *= Complex64::from_polar(1.0, *o);
        }
        at = ev.position;
    }
    if length < at {
        return Err(RamanError::Config("length before last applied event".into()));
    }
    u = walk.advance(&u, length - at);
    Ok(u.iter().map(|x| x.norm_sqr()).collect())
}
