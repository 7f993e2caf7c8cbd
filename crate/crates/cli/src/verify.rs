//! Invariant checks run by `raman verify`.

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use raman_core::coherence::DensityMatrix;
use raman_core::medium::SyntheticCoefficients;
use raman_core::propagation::{
    flow_direction, pair_currents, propagate_field, propagate_flow, uniform_coherence,
    FlowSchedule, PropagationConfig,
};
use raman_core::scenario::{Experiment, GridConfig, Mode, Scenario};
use raman_core::spectrum::{to_flow, FieldState, ModeLadder};
use raman_core::Result;

use crate::{Failure, Outcome};

struct Check {
    name: &'static str,
    value: f64,
    limit: f64,
}

fn conservation() -> Result<f64> {
    let mut sc = Scenario::default();
    sc.mode = Mode::Ideal;
    sc.grid.tau_samples = 5;
    let r = Experiment::new(sc)?.run_ideal(&FlowSchedule::default())?;
    Ok(r.probe.ledger_error())
}

fn equivalence() -> Result<f64> {
    let l = ModeLadder::from_wavelength(210.0, 124.7451, -1, 3)?;
    let m = SyntheticCoefficients::default().medium_for(&l, 2.6e24, 0.0, [0.0; 3], 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let amps = (0..l.len())
            .map(|_| Complex64::from_polar(rng.gen_range(0.2e7..1e7), rng.gen_range(-3.1..3.1)))
            .collect();
        let fs = FieldState::new(l.clone(), vec![0.0], amps)?;
        let rho = DensityMatrix::pure_with_coherence(rng.gen_range(0.05..0.5), rng.gen_range(-3.1..3.1))?;
        let cs = uniform_coherence(&fs, rho);
        let cfg = PropagationConfig::new(1e-4, 300).with_stride(10);
        let a = propagate_field(&fs, &cs, &m, &cfg, &FlowSchedule::default())?;
        let b = propagate_flow(&to_flow(&fs), &cs, &m, &cfg, &FlowSchedule::default())?;
        for (x, y) in a.fractions.iter().flatten().zip(b.fractions.iter().flatten()) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

fn sign_law() -> Result<f64> {
    let l = ModeLadder::from_wavelength(210.0, 124.7451, -1, 3)?;
    let m = SyntheticCoefficients::default().medium_for(&l, 2.6e24, 0.0, [0.0; 3], 0.5)?;
    let c = m.for_ladder(&l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut violations = 0;
    for _ in 0..1000 {
        let phases: Vec<f64> = (0..l.len()).map(|_| rng.gen_range(-3.2..3.2)).collect();
        let e: Vec<Complex64> = phases.iter().map(|p| Complex64::from_polar(1e7, *p)).collect();
        let rho = DensityMatrix::pure_with_coherence(0.3, rng.gen_range(-3.2..3.2))?;
        let cur = pair_currents(&e, &c, &rho, m.density);
        let dir = flow_direction(&phases, &c.d, rho.rho01);
        violations += cur.iter().zip(&dir).filter(|(j, s)| j.signum() != **s as f64).count();
    }
    Ok(violations as f64)
}

fn scenario_checks(path: &Path) -> Result<Vec<Check>> {
    let exp = Experiment::new(Scenario::load(path)?)?;
    let target = exp.scenario.ideal.target_order;
    let r = exp.run_configured()?;
    let g = &exp.scenario.grid;
    let fine = exp.with_grid(GridConfig {
        tau_samples: 2 * g.tau_samples - 1,
        xi_step_um: 0.5 * g.xi_step_um,
        record_every: 2 * g.record_every,
        ..g.clone()
    })?;
    let rf = fine.run_configured()?;
    let frac = |x: &raman_core::scenario::ExperimentResult| x.probe.fraction_at(target).unwrap_or(0.0);
    Ok(vec![
        Check { name: "probe ledger closure", value: r.probe.ledger_error(), limit: 1e-6 },
        Check {
            name: "driving ledger closure",
            value: r.driving.as_ref().map_or(0.0, |d| d.ledger_error()),
            limit: 1e-6,
        },
        Check { name: "grid convergence of target fraction", value: (frac(&r) - frac(&rf)).abs(), limit: 1e-3 },
    ])
}

pub fn run(scenario: Option<&Path>) -> Outcome {
    let mut checks = vec![
        Check { name: "photon conservation, 10 orders over 37.295 cm", value: conservation()?, limit: 1e-6 },
        Check { name: "field vs flow form, 20 random instances", value: equivalence()?, limit: 1e-6 },
        Check { name: "flow sign law violations, 1000 phase sets", value: sign_law()?, limit: 0.5 },
    ];
    if let Some(p) = scenario {
        checks.extend(scenario_checks(p)?);
    }
    let mut failed = 0;
    for c in &checks {
        let ok = c.value < c.limit;
        failed += usize::from(!ok);
        println!("{} {}: {:.3e} (limit {:.1e})", if ok { "ok  " } else { "FAIL" }, c.name, c.value, c.limit);
    }
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} check(s) failed")));
    }
    Ok(())
}
