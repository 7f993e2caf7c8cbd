use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use raman_core::design::{design_stack, exit_efficiency, tolerance_scan, DesignOptions, ToleranceOptions};
use raman_core::plates::PlateStack;
use raman_core::propagation::FlowSchedule;
use raman_core::scenario::{
    coherence_csv, fractions_csv, schedule_csv, schedule_from_csv, tunability_sweep, Experiment,
    ExperimentResult, Scenario,
};
use raman_core::schedule::{HopReport, ScheduleOptions};
use raman_core::spectrum::ModeLadder;
use raman_core::RamanError;

mod verify;

#[derive(Parser)]
#[command(name = "raman", version, about = "Raman sideband generation with relative-phase control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full run of a scenario in its configured mode.
    Simulate {
        scenario: PathBuf,
        /// Plate file overriding the scenario's plates.
        #[arg(long)]
        stack: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Fixed uniform coherence with phase resets; generates the
    /// concentration schedule when none is given.
    Ideal {
        scenario: PathBuf,
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Plate-stack design for a target order.
    Design {
        scenario: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        target_order: i32,
        #[arg(long, default_value_t = 15)]
        plates: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Random-search evaluation budget.
        #[arg(long)]
        evaluations: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Prints the frequency ladder.
    Ladder {
        #[arg(long)]
        base_nm: f64,
        #[arg(long, default_value_t = 124.7451)]
        shift_thz: f64,
        /// Order range as MIN:MAX.
        #[arg(long, default_value = "-1:8", allow_hyphen_values = true)]
        range: String,
    },
    /// Target efficiency against probe frequency offset with a fixed stack.
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        stack: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        target_order: i32,
        #[arg(long, default_value_t = 20.0)]
        span_ghz: f64,
        #[arg(long, default_value_t = 9)]
        points: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// One-at-a-time thickness and position tolerance of a stack.
    Tolerance {
        scenario: PathBuf,
        #[arg(long)]
        stack: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        target_order: i32,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Conservation, equivalence and convergence checks.
    Verify {
        scenario: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Numerical(String),
}

impl From<RamanError> for Failure {
    fn from(e: RamanError) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    ExitCode::from(execute(std::env::args_os()))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
fn execute<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            2
        }
    }
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Simulate { scenario, stack, out } => simulate(&scenario, stack.as_deref(), &out),
        Command::Ideal { scenario, schedule, out } => ideal(&scenario, schedule.as_deref(), &out),
        Command::Design { scenario, target_order, plates, seed, evaluations, out } => {
            design(&scenario, target_order, plates, seed, evaluations, &out)
        }
        Command::Ladder { base_nm, shift_thz, range } => ladder(base_nm, shift_thz, &range),
        Command::Sweep { scenario, stack, target_order, span_ghz, points, out } => {
            sweep(&scenario, stack.as_deref(), target_order, span_ghz, points, &out)
        }
        Command::Tolerance { scenario, stack, target_order, out } => {
            tolerance(&scenario, &stack, target_order, &out)
        }
        Command::Verify { scenario } => verify::run(scenario.as_deref()),
    }
}

fn experiment(scenario: &Path, stack: Option<&Path>) -> Result<Experiment, Failure> {
    let exp = Experiment::new(Scenario::load(scenario)?)?;
    match stack {
        Some(p) => Ok(exp.with_stack(PlateStack::from_csv(&std::fs::read_to_string(p)?)?)?),
        None => Ok(exp),
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Outcome {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), body)?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Outcome {
    let body = serde_json::to_string_pretty(value).map_err(|e| Failure::Config(e.to_string()))?;
    write(dir, name, &(body + "\n"))
}

fn write_run(exp: &Experiment, r: &ExperimentResult, out: &Path) -> Outcome {
    write(out, "probe_fractions.csv", &fractions_csv(&r.probe))?;
    if let Some(d) = &r.driving {
        write(out, "driving_fractions.csv", &fractions_csv(d))?;
        write(out, "coherence.csv", &coherence_csv(&r.coherence))?;
    }
    write_json(out, "summary.json", &r.summary(&exp.scenario.name))
}

fn simulate(scenario: &Path, stack: Option<&Path>, out: &Path) -> Outcome {
    let exp = experiment(scenario, stack)?;
    let r = exp.run_configured()?;
    write_run(&exp, &r, out)?;
    let s = r.summary(&exp.scenario.name);
    println!("wrote {} (probe plate loss {:.4})", out.display(), s.probe.plate_loss_fraction);
    Ok(())
}

#[derive(Serialize)]
struct IdealReport {
    scenario: String,
    events: usize,
    end_position_cm: Option<f64>,
    target_order: i32,
    target_fraction: f64,
    hops: Vec<HopReport>,
}

fn ideal(scenario: &Path, schedule: Option<&Path>, out: &Path) -> Outcome {
    let exp = experiment(scenario, None)?;
    let (sched, hops): (FlowSchedule, Vec<HopReport>) = match schedule {
        Some(p) => (schedule_from_csv(&std::fs::read_to_string(p)?, &exp.probe_ladder)?, Vec::new()),
        None => {
            let d = exp.ideal_schedule(&ScheduleOptions::default())?;
            write(out, "schedule.csv", &schedule_csv(&d.schedule, &exp.probe_ladder))?;
            (d.schedule, d.hops)
        }
    };
    let r = exp.run_ideal_to_end(&sched)?;
    write_run(&exp, &r, out)?;
    let target = exp.scenario.ideal.target_order;
    let report = IdealReport {
        scenario: exp.scenario.name.clone(),
        events: sched.len(),
        end_position_cm: sched.end_position.map(|e| e * 100.0),
        target_order: target,
        target_fraction: r.probe.fraction_at(target).unwrap_or(0.0),
        hops,
    };
    write_json(out, "ideal.json", &report)?;
    println!(
        "{} events, order {target}: {:.4}",
        report.events, report.target_fraction
    );
    Ok(())
}

#[derive(Serialize)]
struct DesignReport {
    scenario: String,
    config_hash: String,
    seed: u64,
    target_order: i32,
    plates: usize,
    plate_targets: Vec<i32>,
    constructive_efficiency: f64,
    design_grid_efficiency: f64,
    efficiency: f64,
    coherence_deviation: f64,
    evaluations: usize,
}

fn design(
    scenario: &Path,
    target: i32,
    plates: usize,
    seed: u64,
    evaluations: Option<usize>,
    out: &Path,
) -> Outcome {
    let exp = experiment(scenario, None)?;
    let mut opts = DesignOptions::default();
    opts.search.seed = seed;
    if let Some(n) = evaluations {
        opts.search.max_evaluations = n.max(1);
    }
    let d = design_stack(&exp, target, plates, &opts)?;
    let with = exp.with_stack(d.stack.clone())?.run()?;
    let without = exp.with_stack(PlateStack::empty())?.run()?;
    let efficiency = with.probe.fraction_at(target).unwrap_or(0.0);
    write(out, "stack.csv", &d.stack.to_csv())?;
    if let Some(rep) = &d.report {
        write(out, "trace.csv", &rep.trace_csv())?;
    }
    let report = DesignReport {
        scenario: exp.scenario.name.clone(),
        config_hash: exp.scenario.config_hash(),
        seed,
        target_order: target,
        plates,
        plate_targets: d.plate_targets.clone(),
        constructive_efficiency: d.constructive_efficiency,
        design_grid_efficiency: d.efficiency,
        efficiency,
        coherence_deviation: with.coherence_deviation(&without, 5e-3),
        evaluations: d.report.as_ref().map_or(0, |r| r.evaluations),
    };
    write_json(out, "design.json", &report)?;
    println!("order {target}: {efficiency:.4} with {plates} plates");
    Ok(())
}

fn ladder(base_nm: f64, shift_thz: f64, range: &str) -> Outcome {
    let (lo, hi) = range
        .split_once(':')
        .and_then(|(a, b)| Some((a.trim().parse::<i32>().ok()?, b.trim().parse::<i32>().ok()?)))
        .ok_or_else(|| Failure::Config(format!("range '{range}' is not MIN:MAX")))?;
    let l = ModeLadder::from_wavelength(base_nm, shift_thz, lo, hi)?;
    println!("order,frequency_thz,wavelength_nm");
    for q in l.orders() {
        println!("{q},{:.6},{:.6}", l.frequency(q) * 1e-12, l.wavelength_nm(q));
    }
    Ok(())
}

fn sweep(
    scenario: &Path,
    stack: Option<&Path>,
    target: i32,
    span_ghz: f64,
    points: usize,
    out: &Path,
) -> Outcome {
    let exp = experiment(scenario, stack)?;
    let n = points.max(1);
    let offsets: Vec<f64> = (0..n)
        .map(|k| {
            if n == 1 {
                0.0
            } else {
                (-span_ghz + 2.0 * span_ghz * k as f64 / (n - 1) as f64) * 1e9
            }
        })
        .collect();
    let rows = tunability_sweep(&exp, target, &offsets)?;
    let mut s = String::from("offset_ghz,efficiency\n");
    for (o, e) in &rows {
        s.push_str(&format!("{:.6},{:.12e}\n", o * 1e-9, e));
    }
    write(out, "sweep.csv", &s)?;
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), (_, e)| (a.min(*e), b.max(*e)));
    println!("efficiency {lo:.4}..{hi:.4} over ±{span_ghz} GHz");
    Ok(())
}

fn tolerance(scenario: &Path, stack: &Path, target: i32, out: &Path) -> Outcome {
    let exp = experiment(scenario, Some(stack))?;
    let windows = tolerance_scan(&exp.stack, &ToleranceOptions::default(), |s| {
        exit_efficiency(&exp, s, target)
    })?;
    let mut s = String::from("plate,kind,offset,efficiency\n");
    for w in &windows {
        for (o, e) in &w.thickness_curve {
            s.push_str(&format!("{},thickness_um,{:.3},{:.12e}\n", w.plate + 1, o * 1e6, e));
        }
        for (o, e) in &w.position_curve {
            s.push_str(&format!("{},position_mm,{:.3},{:.12e}\n", w.plate + 1, o * 1e3, e));
        }
    }
    write(out, "tolerance_curves.csv", &s)?;
    let mut t = String::from("plate,thickness_half_width_um,position_half_width_mm\n");
    for w in &windows {
        t.push_str(&format!(
            "{},{:.3},{:.3}\n",
            w.plate + 1,
            w.thickness_half_width * 1e6,
            w.position_half_width * 1e3
        ));
        println!(
            "plate {}: ±{:.2} um, ±{:.1} mm",
            w.plate + 1,
            w.thickness_half_width * 1e6,
            w.position_half_width * 1e3
        );
    }
    write(out, "tolerance.csv", &t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use raman_core::scenario::{GridConfig, Mode};

    fn toy_scenario(dir: &Path, mode: Mode) -> PathBuf {
        let mut sc = Scenario::default();
        sc.name = "toy".into();
        sc.mode = mode;
        sc.probe.q_min = -1;
        sc.probe.q_max = 1;
        sc.ideal.target_order = 1;
        sc.interaction_length_cm = 6.0;
        sc.grid = GridConfig { tau_samples: 21, xi_step_um: 400.0, ..GridConfig::default() };
        let p = dir.join(format!("toy-{mode:?}.toml"));
        std::fs::write(&p, sc.to_toml()).unwrap();
        p
    }

    fn s(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    #[test]
    fn usage_errors_and_help() {
        assert_eq!(execute(["raman", "--help"]), 0);
        assert_eq!(execute(["raman", "frobnicate"]), 1);
        assert_eq!(execute(["raman", "ladder"]), 1);
        assert_eq!(execute(["raman", "ladder", "--base-nm", "210", "--range", "3"]), 1);
        assert_eq!(execute(["raman", "ladder", "--base-nm", "210", "--range", "2:5"]), 1);
        assert_eq!(execute(["raman", "ladder", "--base-nm", "210", "--range", "-2:8"]), 0);
    }

    #[test]
    fn bad_inputs_exit_with_one() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.toml");
        assert_eq!(execute(["raman", "simulate", s(&missing)]), 1);
        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "interaction_length_cm = -3.0\n").unwrap();
        assert_eq!(execute(["raman", "simulate", s(&bad), "--out", s(dir.path())]), 1);
    }

    #[test]
    fn numerical_errors_map_to_two() {
        let e = RamanError::NonFinite { xi: 0.0, tau_index: 0, order: 0 };
        assert!(matches!(Failure::from(e), Failure::Numerical(_)));
        assert!(matches!(Failure::from(RamanError::Config("x".into())), Failure::Config(_)));
    }

    #[test]
    fn simulate_design_sweep_tolerance() {
        let dir = tempfile::tempdir().unwrap();
        let sc = toy_scenario(dir.path(), Mode::WeakProbe);
        let out = dir.path().join("sim");
        assert_eq!(execute(["raman", "simulate", s(&sc), "--out", s(&out)]), 0);
        for f in ["probe_fractions.csv", "driving_fractions.csv", "coherence.csv", "summary.json"] {
            assert!(out.join(f).is_file(), "{f}");
        }
        let des = dir.path().join("des");
        let args = ["raman", "design", s(&sc), "--target-order", "1", "--plates", "1", "--evaluations", "10"];
        assert_eq!(execute(args.iter().copied().chain(["--out", s(&des)])), 0);
        let stack = des.join("stack.csv");
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(des.join("design.json")).unwrap()).unwrap();
        let eff = json["efficiency"].as_f64().unwrap();
        assert!(eff > 0.5, "{eff}");
        let sweep = dir.path().join("sweep");
        let a = ["raman", "sweep", s(&sc), "--stack", s(&stack), "--target-order", "1", "--points", "3"];
        assert_eq!(execute(a.iter().copied().chain(["--out", s(&sweep)])), 0);
        let rows = std::fs::read_to_string(sweep.join("sweep.csv")).unwrap();
        assert_eq!(rows.lines().count(), 4);
        let tol = dir.path().join("tol");
        let a = ["raman", "tolerance", s(&sc), "--stack", s(&stack), "--target-order", "1"];
        assert_eq!(execute(a.iter().copied().chain(["--out", s(&tol)])), 0);
        assert!(tol.join("tolerance.csv").is_file());
        let sim = dir.path().join("sim2");
        assert_eq!(execute(["raman", "simulate", s(&sc), "--stack", s(&stack), "--out", s(&sim)]), 0);
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(sim.join("summary.json")).unwrap()).unwrap();
        assert!((summary["probe"]["plate_loss_fraction"].as_f64().unwrap() - 0.01).abs() < 1e-3);
    }

    #[test]
    fn ideal_writes_and_reuses_schedule() {
        let dir = tempfile::tempdir().unwrap();
        let sc = toy_scenario(dir.path(), Mode::Ideal);
        let a = dir.path().join("a");
        assert_eq!(execute(["raman", "ideal", s(&sc), "--out", s(&a)]), 0);
        let sched = a.join("schedule.csv");
        assert!(sched.is_file());
        let b = dir.path().join("b");
        assert_eq!(execute(["raman", "ideal", s(&sc), "--schedule", s(&sched), "--out", s(&b)]), 0);
        let fa = std::fs::read_to_string(a.join("probe_fractions.csv")).unwrap();
        let fb = std::fs::read_to_string(b.join("probe_fractions.csv")).unwrap();
        assert_eq!(fa, fb);
    }

    #[test]
    fn verify_passes_on_defaults() {
        assert_eq!(execute(["raman", "verify"]), 0);
    }
}
