//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when any
//! criterion fails.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use raman_core::coherence::DensityMatrix;
use raman_core::design::{design_stack, exit_efficiency, tolerance_scan, DesignOptions, ToleranceOptions};
use raman_core::medium::SyntheticCoefficients;
use raman_core::optimizer::{random_search, DesignVector, SearchConfig};
use raman_core::plates::{apply_plate, Axis, Material, Plate, PlateStack};
use raman_core::propagation::{
    flow_direction, pair_currents, propagate_field, propagate_flow, uniform_coherence, FlowSchedule,
    PropagationConfig,
};
use raman_core::scenario::{Experiment, GridConfig, Mode, Scenario};
use raman_core::schedule::{exact_fractions, ScheduleOptions};
use raman_core::spectrum::{to_flow, FieldState, ModeLadder};

type Outcome = Result<String, String>;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn e<T: std::fmt::Display>(x: T) -> String {
    x.to_string()
}

fn ladder_fidelity() -> Outcome {
    let l = ModeLadder::from_wavelength(210.0, 124.7451, -1, 8).map_err(e)?;
    let mut worst: f64 = 0.0;
    for (q, nm) in [(1, 193.1243), (4, 155.6098), (8, 123.5978)] {
        worst = worst.max((l.wavelength_nm(q) - nm).abs());
    }
    let r = ModeLadder::from_wavelength(760.0, 124.7451, -3, 2).map_err(e)?;
    let um = r.wavelength_nm(-3) * 1e-3;
    let dum = (um - 14.8203).abs();
    check(
        worst <= 0.005 && dum <= 0.002,
        format!("max error {worst:.2e} nm, order -3 at 760 nm: {um:.5} um (error {dum:.1e} um)"),
    )
}

fn conservation() -> Outcome {
    let mut sc = Scenario::load(&data("ideal-210.toml")).map_err(e)?;
    sc.mode = Mode::Ideal;
    sc.ideal.rho01_magnitude = 0.3;
    sc.probe.q_min = -1;
    sc.probe.q_max = 8;
    sc.interaction_length_cm = 37.295;
    let r = Experiment::new(sc).map_err(e)?.run_ideal(&FlowSchedule::default()).map_err(e)?;
    let drift = (r.probe.final_field.total_photons() - r.probe.input_photons).abs() / r.probe.input_photons;
    check(
        drift < 1e-6 && r.probe.final_field.n_orders() == 10,
        format!("relative drift {drift:.2e} over 37.295 cm, 10 orders"),
    )
}

fn equivalence() -> Outcome {
    let l = ModeLadder::from_wavelength(210.0, 124.7451, -1, 3).map_err(e)?;
    let m = SyntheticCoefficients::default().medium_for(&l, 2.6e24, 0.0, [0.0; 3], 0.5).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut moved: f64 = 0.0;
    for _ in 0..20 {
        let amps: Vec<Complex64> = (0..l.len())
            .map(|_| Complex64::from_polar(rng.gen_range(0.1e7..1e7), rng.gen_range(-PI..PI)))
            .collect();
        let fs = FieldState::new(l.clone(), vec![0.0], amps).map_err(e)?;
        let rho = DensityMatrix::pure_with_coherence(rng.gen_range(0.05..0.5), rng.gen_range(-PI..PI)).map_err(e)?;
        let cs = uniform_coherence(&fs, rho);
        let cfg = PropagationConfig::new(1e-4, 400).with_stride(20);
        let a = propagate_field(&fs, &cs, &m, &cfg, &FlowSchedule::default()).map_err(e)?;
        let b = propagate_flow(&to_flow(&fs), &cs, &m, &cfg, &FlowSchedule::default()).map_err(e)?;
        for (x, y) in a.fractions.iter().flatten().zip(b.fractions.iter().flatten()) {
            worst = worst.max((x - y).abs());
        }
        for (x, y) in a.fractions[0].iter().zip(a.final_fractions()) {
            moved = moved.max((x - y).abs());
        }
    }
    check(
        worst < 1e-6 && moved > 0.05,
        format!("max fraction difference {worst:.2e} over 20 instances (largest redistribution {moved:.2})"),
    )
}

fn sign_law() -> Outcome {
    let l = ModeLadder::from_wavelength(210.0, 124.7451, -1, 3).map_err(e)?;
    let m = SyntheticCoefficients::default().medium_for(&l, 2.6e24, 0.0, [0.0; 3], 0.5).map_err(e)?;
    let c = m.for_ladder(&l).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut violations = 0;
    let mut pairs = 0;
    for _ in 0..1000 {
        let phases: Vec<f64> = (0..l.len()).map(|_| rng.gen_range(-PI..PI)).collect();
        let field: Vec<Complex64> =
            phases.iter().map(|p| Complex64::from_polar(rng.gen_range(0.1e7..1e7), *p)).collect();
        let rho = DensityMatrix::pure_with_coherence(rng.gen_range(0.01..0.5), rng.gen_range(-PI..PI)).map_err(e)?;
        let cur = pair_currents(&field, &c, &rho, m.density);
        let dir = flow_direction(&phases, &c.d, rho.rho01);
        pairs += cur.len();
        violations += cur.iter().zip(&dir).filter(|(j, s)| j.signum() != **s as f64).count();
    }
    check(violations == 0, format!("{violations} violations over {pairs} pairs"))
}

fn concentration() -> Outcome {
    let exp = Experiment::new(Scenario::load(&data("ideal-210.toml")).map_err(e)?).map_err(e)?;
    let d = exp.ideal_schedule(&ScheduleOptions::default()).map_err(e)?;
    let r = exp.run_ideal_to_end(&d.schedule).map_err(e)?;
    let fin = r.probe.fraction_at(8).unwrap_or(0.0);
    let worst_hop = d.hops.iter().map(|h| h.efficiency).fold(1.0, f64::min);
    let rho = DensityMatrix::pure_with_coherence(exp.scenario.ideal.rho01_magnitude, 0.0).map_err(e)?;
    let l = &exp.probe_ladder;
    // exhaustive line search over each hop's dwell
    let mut gap: f64 = 0.0;
    let mut start = 0.0;
    for (k, h) in d.hops.iter().enumerate() {
        let idx = l.index_checked(h.target).map_err(e)?;
        let last = d.schedule.events.iter().filter(|ev| ev.position <= h.peak_position).last();
        let from = last.map_or(start, |ev| ev.position);
        let to = d.hops.get(k + 1).map_or(h.peak_position + (h.peak_position - from), |_| {
            d.schedule.events.iter().find(|ev| ev.position > h.peak_position).unwrap().position
        });
        let at_peak =
            exact_fractions(l, 0, &exp.probe_medium, &rho, &d.schedule, h.peak_position).map_err(e)?[idx];
        let mut best: f64 = 0.0;
        for s in 0..=400 {
            let x = from + (to - from) * s as f64 / 400.0;
            best = best.max(exact_fractions(l, 0, &exp.probe_medium, &rho, &d.schedule, x).map_err(e)?[idx]);
        }
        gap = gap.max(best - at_peak).max((at_peak - h.efficiency).abs());
        start = h.peak_position;
    }
    check(
        d.schedule.len() == 16 && worst_hop >= 0.98 && fin >= 0.98 && gap < 1e-4,
        format!(
            "{} events, weakest hop {worst_hop:.4}, order +8 {fin:.4}, line-search gap {gap:.1e}",
            d.schedule.len()
        ),
    )
}

fn mgf2_ordinary_index(lambda_um: f64) -> f64 {
    let b = [0.48755108, 0.39875031, 2.3120353];
    let c = [0.001882178397, 0.008951888472, 566.135591308816];
    let l2 = lambda_um * lambda_um;
    (1.0 + (0..3).map(|i| b[i] * l2 / (l2 - c[i])).sum::<f64>()).sqrt()
}

fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

fn plate_analytics() -> Outcome {
    let mat = Material::mgf2();
    let disp = mat.axis(Axis::Ordinary);
    let l = ModeLadder::from_wavelength(210.0, 124.7451, -1, 8).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let amps: Vec<Complex64> =
        (0..l.len()).map(|_| Complex64::from_polar(rng.gen_range(1e6..1e7), rng.gen_range(-PI..PI))).collect();
    let fs = FieldState::new(l.clone(), vec![0.0], amps).map_err(e)?;
    let plate = |d: f64| Plate { position: 0.1, thickness: d, material: "MgF2".into(), axis: Axis::Ordinary };
    let (mut phase_err, mut add_err, mut ledger_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for d in [5e-6, 21.7e-6, 37.3e-6, 104.9e-6] {
        let (out, loss) = apply_plate(&fs, &plate(d), disp).map_err(e)?;
        for (i, q) in l.orders().enumerate() {
            let lam = l.wavelength(q);
            let expect = 2.0 * PI * mgf2_ordinary_index(lam * 1e6) * d / lam;
            let got = (out.slice(0)[i] / fs.slice(0)[i]).arg();
            phase_err = phase_err.max(wrap(got - expect).abs());
        }
        let closure = (out.total_photons() + loss.total() - fs.total_photons()).abs() / fs.total_photons();
        ledger_err = ledger_err.max(closure);
        let (half, _) = apply_plate(&fs, &plate(0.5 * d), disp).map_err(e)?;
        let (twice, _) = apply_plate(&half, &plate(0.5 * d), disp).map_err(e)?;
        for i in 0..l.len() {
            let a = (twice.slice(0)[i] / fs.slice(0)[i]).arg();
            let b = (out.slice(0)[i] / fs.slice(0)[i]).arg();
            add_err = add_err.max(wrap(a - b).abs());
        }
    }
    check(
        phase_err < 1e-9 && add_err < 1e-9 && ledger_err < 1e-12,
        format!("phase error {phase_err:.1e} rad, split-plate difference {add_err:.1e} rad, ledger {ledger_err:.1e}"),
    )
}

fn toy() -> Result<(Experiment, DesignOptions), String> {
    let mut sc = Scenario::default();
    sc.probe.q_min = -1;
    sc.probe.q_max = 1;
    sc.interaction_length_cm = 6.0;
    sc.grid = GridConfig { tau_samples: 41, xi_step_um: 400.0, ..GridConfig::default() };
    let opts = DesignOptions { design_grid: None, thickness_max_um: 45.0, ..DesignOptions::default() };
    Ok((Experiment::new(sc).map_err(e)?, opts))
}

fn optimizer() -> Outcome {
    let mut hits = 0;
    let mut worst_evals = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let centre: Vec<f64> = (0..15).map(|_| rng.gen_range(0.2..0.8)).collect();
        let x0 = DesignVector::uniform((0..15).map(|_| rng.gen_range(0.0..1.0)).collect(), 0.0, 1.0, 1e-9)
            .map_err(e)?;
        let cfg = SearchConfig { max_evaluations: 50_000, target_value: Some(-1e-6), seed, ..SearchConfig::default() };
        let r = random_search(
            |x| -x.values.iter().zip(&centre).map(|(v, c)| (v - c).powi(2)).sum::<f64>(),
            &x0,
            &cfg,
        )
        .map_err(e)?;
        let dist = r.best.values.iter().zip(&centre).map(|(v, c)| (v - c).powi(2)).sum::<f64>().sqrt();
        if dist <= 1e-3 {
            hits += 1;
            worst_evals = worst_evals.max(r.evaluations);
        }
    }
    let (exp, opts) = toy()?;
    let d = design_stack(&exp, 1, 1, &opts).map_err(e)?;
    let p = d.stack.plates()[0].clone();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 50..=450 {
        let um = k as f64 * 0.1;
        let st = PlateStack::new(vec![Plate { thickness: um * 1e-6, ..p.clone() }]).map_err(e)?;
        let v = exit_efficiency(&exp, &st, 1).map_err(e)?;
        if v > best.0 {
            best = (v, um);
        }
    }
    let diff = (p.thickness * 1e6 - best.1).abs();
    check(
        hits >= 19 && diff <= 1.0,
        format!(
            "sphere: {hits}/20 seeds within 1e-3 (most evaluations {worst_evals}); toy: {:.2} um vs sweep {:.1} um",
            p.thickness * 1e6,
            best.1
        ),
    )
}

struct FullDesign {
    efficiency: f64,
    loss: f64,
    coherence_deviation: f64,
    broad_orders: usize,
    broad_max: f64,
}

fn full_design() -> Result<FullDesign, String> {
    let exp = Experiment::new(Scenario::load(&data("vuv-210.toml")).map_err(e)?).map_err(e)?;
    let d = design_stack(&exp, 8, 15, &DesignOptions::default()).map_err(e)?;
    let with = exp.with_stack(d.stack.clone()).map_err(e)?.run().map_err(e)?;
    let without = exp.with_stack(PlateStack::empty()).map_err(e)?.run().map_err(e)?;
    let f = without.probe.final_fractions();
    Ok(FullDesign {
        efficiency: with.probe.fraction_at(8).unwrap_or(0.0),
        loss: with.probe.total_loss() / with.probe.input_photons,
        coherence_deviation: with.coherence_deviation(&without, 5e-3),
        broad_orders: f.iter().filter(|v| **v > 0.02).count(),
        broad_max: f.iter().copied().fold(0.0, f64::max),
    })
}

fn tolerance() -> Outcome {
    let (exp, opts) = toy()?;
    let d = design_stack(&exp, 1, 1, &opts).map_err(e)?;
    let w = tolerance_scan(&d.stack, &ToleranceOptions::default(), |s| exit_efficiency(&exp, s, 1)).map_err(e)?;
    let mut ok = !w.is_empty();
    let mut jump: f64 = 0.0;
    let mut parts = Vec::new();
    for win in &w {
        for hw in [win.thickness_half_width, win.position_half_width] {
            ok &= hw.is_finite() && hw > 0.0;
        }
        for s in win.thickness_curve.windows(2) {
            ok &= ((s[1].0 - s[0].0) - 0.1e-6).abs() < 1e-12;
            jump = jump.max((s[1].1 - s[0].1).abs());
        }
        parts.push(format!(
            "plate {}: +/-{:.2} um (reference 1), +/-{:.1} mm (reference 5)",
            win.plate + 1,
            win.thickness_half_width * 1e6,
            win.position_half_width * 1e3
        ));
    }
    ok &= jump < 0.05;
    check(ok, format!("{}; largest 0.1 um step {jump:.4}", parts.join(", ")))
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_raman")).args(args).output().map_err(e)?;
    if !out.status.success() {
        return Err(format!("raman {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn dir_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(e)?
        .map(|f| {
            let f = f.map_err(e)?;
            Ok((f.file_name().to_string_lossy().into_owned(), std::fs::read(f.path()).map_err(e)?))
        })
        .collect::<Result<_, String>>()?;
    v.sort();
    Ok(v)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e)?;
    let root = tmp.path();
    let mut sc = Scenario::default();
    sc.name = "toy".into();
    sc.probe.q_min = -1;
    sc.probe.q_max = 1;
    sc.ideal.target_order = 1;
    sc.interaction_length_cm = 6.0;
    sc.grid = GridConfig { tau_samples: 21, xi_step_um: 400.0, ..GridConfig::default() };
    let full = root.join("toy.toml");
    std::fs::write(&full, sc.to_toml()).map_err(e)?;
    sc.mode = Mode::Ideal;
    let ideal = root.join("toy-ideal.toml");
    std::fs::write(&ideal, sc.to_toml()).map_err(e)?;
    let (full, ideal) = (full.to_str().unwrap().to_string(), ideal.to_str().unwrap().to_string());

    let mut compared = 0;
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let o = |name: &str| root.join("out").join(name).to_str().unwrap().to_string();
        let _ = std::fs::remove_dir_all(root.join("out"));
        let mut stdout = Vec::new();
        stdout.push(run_cli(&["ladder", "--base-nm", "210", "--range", "-1:8"])?);
        stdout.push(run_cli(&["simulate", &full, "--out", &o("sim")])?);
        stdout.push(run_cli(&["ideal", &ideal, "--out", &o("ideal")])?);
        stdout.push(run_cli(&["design", &full, "--target-order", "1", "--plates", "1", "--seed", "3", "--out", &o("des")])?);
        let stack = format!("{}/stack.csv", o("des"));
        stdout.push(run_cli(&["sweep", &full, "--stack", &stack, "--target-order", "1", "--points", "3", "--out", &o("sweep")])?);
        let mut files = Vec::new();
        for name in ["sim", "ideal", "des", "sweep"] {
            files.extend(dir_files(Path::new(&o(name)))?);
        }
        outputs.push((stdout, files));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    let mut differ: Vec<&str> = Vec::new();
    if a.0 != b.0 {
        differ.push("stdout");
    }
    for (x, y) in a.1.iter().zip(&b.1) {
        if x != y {
            differ.push(&x.0);
        }
        compared += 1;
    }
    let same = differ.is_empty() && a.1.len() == b.1.len();
    let mut msg = format!("{compared} output files and 5 stdout streams compared byte-for-byte");
    if !differ.is_empty() {
        msg.push_str(&format!("; differing: {}", differ.join(", ")));
    }
    check(same && compared > 0, msg)
}

fn main() {
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut timed = |name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let r = f();
        results.push((name, r, t.elapsed().as_secs_f64()));
        let (n, r, s) = results.last().unwrap();
        print_line(n, r, *s);
    };
    timed("1 ladder fidelity", &ladder_fidelity);
    timed("2 photon conservation", &conservation);
    timed("3 field/flow equivalence", &equivalence);
    timed("4 flow sign law", &sign_law);
    timed("5 concentration efficiency", &concentration);
    timed("6 plate phase analytics", &plate_analytics);
    timed("7 optimizer sanity", &optimizer);

    let t = Instant::now();
    let full = full_design();
    let secs = t.elapsed().as_secs_f64();
    let parts: [(&str, Box<dyn Fn(&FullDesign) -> Outcome>); 4] = [
        ("8a coherence uniformity with plates", Box::new(|f| {
            check(f.coherence_deviation < 0.05, format!("max relative |rho01| change {:.3} (limit 0.05)", f.coherence_deviation))
        })),
        ("8b target efficiency", Box::new(|f| check(f.efficiency >= 0.5, format!("order +8 {:.4}", f.efficiency)))),
        ("8c plate absorption", Box::new(|f| {
            check((f.loss - 0.15).abs() < 1e-6, format!("recorded loss {:.9} (configured 0.15)", f.loss))
        })),
        ("8d broad distribution without plates", Box::new(|f| {
            check(
                f.broad_orders >= 5 && f.broad_max < 0.6,
                format!("{} orders above 2%, largest {:.3}", f.broad_orders, f.broad_max),
            )
        })),
    ];
    for (name, p) in parts.iter() {
        let r = match &full {
            Ok(f) => p(f),
            Err(m) => Err(m.clone()),
        };
        print_line(name, &r, secs);
        results.push((name, r, secs));
    }

    let mut timed = |name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let r = f();
        let s = t.elapsed().as_secs_f64();
        print_line(name, &r, s);
        results.push((name, r, s));
    };
    timed("9 tolerance windows", &tolerance);
    timed("10 determinism", &determinism);

    let failed = results.iter().filter(|(_, r, _)| r.is_err()).count();
    println!("acceptance: {} of {} passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn print_line(name: &str, r: &Outcome, secs: f64) {
    match r {
        Ok(m) => println!("PASS {name}: {m} [{secs:.1} s]"),
        Err(m) => println!("FAIL {name}: {m} [{secs:.1} s]"),
    }
}
