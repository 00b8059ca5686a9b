//! Command-line entry points and CSV emission.
//!
//! Subcommands:
//! - `toy2dof`: reproduce the planar two-joint example in both modes.
//! - `run`: play a scenario file in closed loop and write the logs.
//! - `predict`: one-shot jump prediction for a robot state file.
//!
//! Exit codes: 0 success, 2 configuration/parse error, 3 infeasible problem
//! or constraint violation, 4 numerical failure. Set `IMPACTQP_LOG` for log
//! verbosity.

mod predict;
mod toy;

pub use predict::{predict_csv, PredictInput};
pub use toy::{polytope_vertices_2d, toy_two_dof, ToyReport};

use crate::qp::ControlMode;
use crate::sim::{self, RunOutcome, SimError};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Parser)]
#[command(
    name = "impactqp",
    about = "Impact-aware task-space QP control: toy example, scenario runs, one-shot predictions"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Aware,
}

#[derive(Subcommand)]
enum Command {
    /// Reproduce the planar two-joint example and print both solutions.
    Toy2dof {
        /// Output directory for toy2dof.csv (stdout report always printed).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a closed-loop scenario and write per-step and event CSV logs.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory for the CSV logs.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the scenario's controller mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Violation tolerance override for the exit-code check.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Evaluate every jump predictor for a state file and emit CSV.
    Predict {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn main_entry<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Toy2dof { out } => cmd_toy2dof(out.as_deref()),
        Command::Run {
            scenario,
            out,
            seed,
            mode,
            tol,
        } => cmd_run(&scenario, out.as_deref(), seed, mode, tol),
        Command::Predict { state, out } => cmd_predict(&state, out.as_deref()),
    }
}

fn cmd_toy2dof(out: Option<&Path>) -> i32 {
    let report = match toy_two_dof() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("toy2dof failed: {e}");
            return EXIT_NUMERICAL;
        }
    };
    println!("planar two-joint example (dt = 5 ms, c_r = 0.02, normal = +y)");
    println!(
        "pre-impact joint velocity      [{:.3}, {:.3}] rad/s",
        report.pre_impact_velocity.x, report.pre_impact_velocity.y
    );
    println!(
        "unaware acceleration           [{:.3}, {:.3}] rad/s^2",
        report.unaware_acceleration.x, report.unaware_acceleration.y
    );
    println!(
        "unaware post-impact velocity   [{:.3}, {:.3}] rad/s",
        report.unaware_post_impact_velocity.x, report.unaware_post_impact_velocity.y
    );
    println!(
        "aware acceleration             [{:.3}, {:.3}] rad/s^2",
        report.aware_acceleration.x, report.aware_acceleration.y
    );
    println!(
        "aware post-impact velocity     [{:.3}, {:.3}] rad/s",
        report.aware_post_impact_velocity.x, report.aware_post_impact_velocity.y
    );
    let fmt_poly = |v: &[(f64, f64)]| {
        v.iter()
            .map(|(x, y)| format!("({x:.2}, {y:.2})"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!("baseline polytope vertices     {}", fmt_poly(&report.baseline_vertices));
    println!("aware polytope vertices        {}", fmt_poly(&report.aware_vertices));

    if let Some(dir) = out {
        if let Err(e) = write_toy_csv(&report, dir) {
            eprintln!("could not write toy2dof.csv: {e}");
            return EXIT_CONFIG;
        }
    }
    EXIT_OK
}

fn write_toy_csv(report: &ToyReport, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = String::from("# impactqp.toy2dof.v1\nrecord,index,value_1,value_2\n");
    let mut push = |record: &str, index: usize, a: f64, b: f64| {
        text.push_str(&format!("{record},{index},{a},{b}\n"));
    };
    push("pre_impact_velocity", 0, report.pre_impact_velocity.x, report.pre_impact_velocity.y);
    push("unaware_acceleration", 0, report.unaware_acceleration.x, report.unaware_acceleration.y);
    push(
        "unaware_post_impact_velocity",
        0,
        report.unaware_post_impact_velocity.x,
        report.unaware_post_impact_velocity.y,
    );
    push("aware_acceleration", 0, report.aware_acceleration.x, report.aware_acceleration.y);
    push(
        "aware_post_impact_velocity",
        0,
        report.aware_post_impact_velocity.x,
        report.aware_post_impact_velocity.y,
    );
    for (i, (x, y)) in report.baseline_vertices.iter().enumerate() {
        push("baseline_vertex", i, *x, *y);
    }
    for (i, (x, y)) in report.aware_vertices.iter().enumerate() {
        push("aware_vertex", i, *x, *y);
    }
    std::fs::write(dir.join("toy2dof.csv"), text)
}

fn cmd_run(
    scenario_path: &Path,
    out: Option<&Path>,
    seed: u64,
    mode: Option<ModeArg>,
    tol: f64,
) -> i32 {
    let scenario = match sim::load_scenario(scenario_path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("scenario error: {e}");
            return EXIT_CONFIG;
        }
    };
    let mode_override = mode.map(|m| match m {
        ModeArg::Baseline => ControlMode::Baseline,
        ModeArg::Aware => ControlMode::ImpactAware,
    });
    let outcome = match sim::run_closed_loop(&scenario, mode_override, seed) {
        Ok(o) => o,
        Err(SimError::BadScenario(e)) => {
            eprintln!("scenario error: {e}");
            return EXIT_CONFIG;
        }
        Err(SimError::Controller(e)) => {
            eprintln!("controller failure: {e}");
            return EXIT_INFEASIBLE;
        }
        Err(e) => {
            eprintln!("simulation failure: {e}");
            return EXIT_NUMERICAL;
        }
    };
    print_run_summary(&outcome, tol);
    if let Some(dir) = out {
        if let Err(e) = write_run_csv(&outcome, &scenario, dir) {
            eprintln!("could not write logs: {e}");
            return EXIT_CONFIG;
        }
    }
    let hard_violations = outcome
        .log
        .violations
        .iter()
        .filter(|v| v.excess > tol)
        .count();
    if hard_violations > 0 {
        return EXIT_INFEASIBLE;
    }
    EXIT_OK
}

fn print_run_summary(outcome: &RunOutcome, tol: f64) {
    let log = &outcome.log;
    println!("scenario          {}", log.scenario);
    println!("ticks             {}", log.records.len());
    println!("impact events     {}", log.events.len());
    for e in &log.events {
        println!(
            "  t = {:.4}s  ee {}  approach {:.3} m/s  |force jump| {:.1} N",
            e.time,
            e.end_effector,
            e.approach_speed,
            e.force_jump.norm()
        );
    }
    println!("achieved contact velocity  {:.3} m/s", outcome.achieved_contact_velocity);
    println!(
        "phases            {}",
        outcome
            .completed_phases
            .iter()
            .map(|p| p.as_str())
            .collect::<Vec<_>>()
            .join(" -> ")
    );
    println!("slack fallbacks   {}", log.slack_events.len());
    println!("violations        {} (tolerance {tol})", log.violations.len());
    for v in &log.violations {
        println!("  t = {:.4}s  {}  value {:.4}  bound {:.4}", v.time, v.what, v.value, v.bound);
    }
}

fn write_run_csv(
    outcome: &RunOutcome,
    scenario: &sim::Scenario,
    dir: &Path,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let log = &outcome.log;
    let nq = scenario.model.nq();
    let nv = scenario.model.nv();
    let n_act = scenario.model.n_actuated();
    let n_hands = scenario.approach.len();
    let n_slots = log
        .records
        .iter()
        .map(|r| r.measured_forces.len())
        .max()
        .unwrap_or(0);

    let mut text = format!("# impactqp.runlog.v1 scenario={} seed={}\n", log.scenario, log.seed);
    let mut header = vec![
        "time".to_string(),
        "phase".into(),
        "aware".into(),
        "solver_ok".into(),
        "slack".into(),
    ];
    for k in 0..nq {
        header.push(format!("q_{k}"));
    }
    for k in 0..nv {
        header.push(format!("v_{k}"));
    }
    for k in 0..nv {
        header.push(format!("qdd_{k}"));
    }
    for c in 0..n_slots {
        for axis in ["x", "y", "z"] {
            header.push(format!("f{c}_{axis}"));
        }
    }
    for k in 0..n_hands {
        header.push(format!("gap_{k}"));
        header.push(format!("approach_{k}"));
    }
    for k in 0..nv {
        header.push(format!("post_v_{k}"));
    }
    for k in 0..n_act {
        header.push(format!("gamma_{k}"));
    }
    header.push("zmp_x".into());
    header.push("zmp_y".into());
    text.push_str(&header.join(","));
    text.push('\n');

    for r in &log.records {
        let mut row: Vec<String> = vec![
            r.time.to_string(),
            r.phase.as_str().to_string(),
            (r.aware_active as u8).to_string(),
            (r.solver_ok as u8).to_string(),
            r.slack.to_string(),
        ];
        for k in 0..nq {
            row.push(r.q[k].to_string());
        }
        for k in 0..nv {
            row.push(r.v[k].to_string());
        }
        for k in 0..nv {
            row.push(r.qdd_cmd[k].to_string());
        }
        for c in 0..n_slots {
            match r.measured_forces.get(c) {
                Some(f) => {
                    row.push(f.x.to_string());
                    row.push(f.y.to_string());
                    row.push(f.z.to_string());
                }
                None => {
                    for _ in 0..3 {
                        row.push("NaN".into());
                    }
                }
            }
        }
        for k in 0..n_hands {
            row.push(r.gaps.get(k).copied().unwrap_or(f64::NAN).to_string());
            row.push(r.approach_speeds.get(k).copied().unwrap_or(f64::NAN).to_string());
        }
        match &r.predicted_post_velocity {
            Some(v) => {
                for k in 0..nv {
                    row.push(v[k].to_string());
                }
            }
            None => {
                for _ in 0..nv {
                    row.push("NaN".into());
                }
            }
        }
        match &r.predicted_torque_jump {
            Some(g) => {
                let offset = scenario.model.actuated_offset();
                for k in 0..n_act {
                    row.push(g[offset + k].to_string());
                }
            }
            None => {
                for _ in 0..n_act {
                    row.push("NaN".into());
                }
            }
        }
        match &r.zmp {
            Some(z) => {
                row.push(z.x.to_string());
                row.push(z.y.to_string());
            }
            None => {
                row.push("NaN".into());
                row.push("NaN".into());
            }
        }
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(dir.join(format!("{}_log.csv", log.scenario)), text)?;

    let mut events = String::from(
        "# impactqp.events.v1\ntime,end_effector,surface,pre_vx,pre_vy,pre_vz,post_vx,post_vy,post_vz,impulse_x,impulse_y,impulse_z,force_jump_x,force_jump_y,force_jump_z,approach_speed\n",
    );
    for e in &log.events {
        events.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            e.time,
            e.end_effector,
            e.surface,
            e.pre_velocity.x,
            e.pre_velocity.y,
            e.pre_velocity.z,
            e.post_velocity.x,
            e.post_velocity.y,
            e.post_velocity.z,
            e.impulse.x,
            e.impulse.y,
            e.impulse.z,
            e.force_jump.x,
            e.force_jump.y,
            e.force_jump.z,
            e.approach_speed
        ));
    }
    std::fs::write(dir.join(format!("{}_events.csv", log.scenario)), events)
}

fn cmd_predict(state_path: &Path, out: Option<&Path>) -> i32 {
    let input = match predict::load_input(state_path) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("state file error: {e}");
            return EXIT_CONFIG;
        }
    };
    match predict_csv(&input) {
        Ok(csv) => {
            match out {
                Some(dir) => {
                    if let Err(e) = std::fs::create_dir_all(dir)
                        .and_then(|_| std::fs::write(dir.join("predict.csv"), &csv))
                    {
                        eprintln!("could not write predict.csv: {e}");
                        return EXIT_CONFIG;
                    }
                }
                None => print!("{csv}"),
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("prediction failed: {e}");
            EXIT_NUMERICAL
        }
    }
}
