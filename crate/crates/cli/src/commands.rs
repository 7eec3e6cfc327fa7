use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use cbsde::bsde::{
    solve_bsde, solve_penalized_sequence_with, terminal_values, training_paths, Driver, PenaltyReport, Terminal,
};
use cbsde::facelift::terminal_jump_diagnostic;
use cbsde::hamiltonian::{driver_samples, pj_monotone_report};
use cbsde::model::{validate_model, ModelSpec};
use cbsde::oracle::{brute_force_dp, solve_hjb_fd, DpTerminal, FdVariant, Grid1D, TinyInstance};
use cbsde::policy::{evaluate_policy_strong, evaluate_policy_weak, extract_feedback, Policy, PolicyValue};
use cbsde::stats::combined_stderr;

use crate::config::{ExperimentConfig, PolicyName};
use crate::error::CliError;

const VALIDATION_TRIALS: usize = 2000;

/// CSV file that is flushed after every row, so an aborted run keeps what it finished.
pub struct Table {
    writer: csv::Writer<BufWriter<File>>,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, CliError> {
        let file = File::create(path)?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(file));
        writer.write_record(header).map_err(csv_err)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        self.writer.write_record(fields).map_err(csv_err)?;
        self.writer.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

/// Shortest representation that parses back to the same bits.
pub fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
    /// Nonzero when the command finished but its checks did not hold.
    pub failed_checks: bool,
}

pub fn solve(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let grid = cfg.time_grid()?;
    let solver = cfg.solver(&model);
    let report_path = out.join("penalty_report.csv");
    let mut table = Table::create(
        &report_path,
        &["j", "y0", "stderr", "constraint_violation_q_mean", "constraint_violation_q_max"],
    )?;
    let mut write_err = None;
    let report = solve_penalized_sequence_with(
        &model,
        &grid,
        cfg.mc.paths,
        cfg.mc.seed,
        &solver,
        &cfg.penalty.schedule,
        &Terminal::Reward,
        |r| {
            if let Err(e) = table.row(&[num(r.j), num(r.y0), num(r.stderr), num(r.q_mean), num(r.q_max)]) {
                write_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let mut files = vec![report_path];
    let summary_path = out.join("solve_summary.csv");
    let mut summary = Table::create(
        &summary_path,
        &["model", "m", "N", "seed", "limit_estimate", "extrapolated_limit", "monotone_ok", "warnings"],
    )?;
    summary.row(&[
        model.name.clone(),
        cfg.grid.steps.to_string(),
        cfg.mc.paths.to_string(),
        cfg.mc.seed.to_string(),
        num(report.limit_estimate),
        opt(report.extrapolated_limit),
        report.monotone_ok.to_string(),
        report.warnings.len().to_string(),
    ])?;
    files.push(summary_path);
    if cfg.output.dump_paths > 0 {
        files.push(dump_paths(cfg, &model, out)?);
    }
    Ok(Outcome {
        files,
        summary: solve_text(&report),
        failed_checks: false,
    })
}

fn solve_text(report: &PenaltyReport) -> String {
    let mut s = String::new();
    for r in &report.rows {
        s.push_str(&format!("j = {:>6}  y0 = {:.6}  (se {:.6})\n", r.j, r.y0, r.stderr));
    }
    s.push_str(&format!("limit estimate {:.6}", report.limit_estimate));
    if let Some(e) = report.extrapolated_limit {
        s.push_str(&format!(", extrapolated {e:.6}"));
    }
    if !report.monotone_ok {
        s.push_str("\nwarning: y0(j) decreases by more than 2 combined standard errors");
    }
    for w in &report.warnings {
        s.push_str(&format!("\nwarning: {w}"));
    }
    s
}

fn dump_paths(cfg: &ExperimentConfig, model: &ModelSpec, out: &Path) -> Result<PathBuf, CliError> {
    let grid = cfg.time_grid()?;
    let (_, x) = training_paths(model, &grid, cfg.mc.paths, cfg.mc.seed)?;
    let d = model.dims.state;
    let path = out.join("paths.csv");
    let mut header = vec!["path_id".to_string(), "step".into(), "time".into()];
    header.extend((0..d).map(|c| format!("x{c}")));
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut table = Table::create(&path, &header)?;
    for i in 0..cfg.output.dump_paths.min(x.paths()) {
        for s in 0..=grid.steps() {
            let mut row = vec![i.to_string(), s.to_string(), num(grid.times()[s])];
            row.extend(x.state(i, s).iter().map(|v| num(*v)));
            table.row(&row)?;
        }
    }
    Ok(path)
}

pub fn policy(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let grid = cfg.time_grid()?;
    let j = cfg.policy.j;
    let n = cfg.policy.eval_paths;
    let seed = cfg.mc.seed;
    let solution;
    let (policy, y0) = match cfg.policy.kind {
        PolicyName::Feedback => {
            let (bw, x) = training_paths(&model, &grid, cfg.mc.paths, seed)?;
            solution = solve_bsde(&model, &x, &bw, Driver::Penalized { j }, &Terminal::Reward, &cfg.solver(&model))?;
            (
                extract_feedback(&model, &solution)?,
                Some((solution.y0, solution.y0_stderr)),
            )
        }
        PolicyName::Zero => (
            Policy::constant(&model, 0, vec![0.0; model.dims.singular], j)?,
            None,
        ),
    };
    let values_path = out.join("policy_values.csv");
    let mut table = Table::create(&values_path, &["model", "j", "mode", "estimate", "stderr", "N", "seed", "m"])?;
    let row = |v: &PolicyValue| {
        vec![
            model.name.clone(),
            num(j),
            v.mode.as_str().to_string(),
            num(v.estimate),
            num(v.stderr),
            v.paths.to_string(),
            seed.to_string(),
            cfg.grid.steps.to_string(),
        ]
    };
    let strong = evaluate_policy_strong(&model, &grid, &policy, n, seed)?;
    table.row(&row(&strong))?;
    let weak = evaluate_policy_weak(&model, &grid, &policy, n, seed)?;
    table.row(&row(&weak))?;

    let gap_path = out.join("policy_gap.csv");
    let mut gap = Table::create(
        &gap_path,
        &[
            "model",
            "j",
            "policy",
            "y0",
            "y0_stderr",
            "strong",
            "weak",
            "strong_minus_y0",
            "weak_minus_strong",
            "combined_stderr_strong_weak",
        ],
    )?;
    let kind = match cfg.policy.kind {
        PolicyName::Feedback => "feedback",
        PolicyName::Zero => "zero",
    };
    gap.row(&[
        model.name.clone(),
        num(j),
        kind.into(),
        opt(y0.map(|v| v.0)),
        opt(y0.map(|v| v.1)),
        num(strong.estimate),
        num(weak.estimate),
        opt(y0.map(|v| strong.estimate - v.0)),
        num(weak.estimate - strong.estimate),
        num(combined_stderr(strong.stderr, weak.stderr)),
    ])?;
    let mut summary = format!(
        "strong {:.6} (se {:.6})\nweak   {:.6} (se {:.6})",
        strong.estimate, strong.stderr, weak.estimate, weak.stderr
    );
    if let Some((y, se)) = y0 {
        summary.push_str(&format!(
            "\ny0({j}) {y:.6} (se {se:.6}), strong - y0 = {:+.6}",
            strong.estimate - y
        ));
    }
    Ok(Outcome {
        files: vec![values_path, gap_path],
        summary,
        failed_checks: false,
    })
}

pub fn facelift(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let solver = cfg.solver(&model);
    let lift = cfg.facelift_config();
    lift.validate()?;
    let report_path = out.join("facelift_report.csv");
    let mut table = Table::create(&report_path, &["m", "terminal_kind", "y0", "stderr", "gap_at_T_minus"])?;
    let diff_path = out.join("facelift_difference.csv");
    let mut diff = Table::create(&diff_path, &["m", "y0_difference", "y0_difference_stderr"])?;
    let mut summary = Vec::new();
    for &m in &cfg.facelift.steps {
        let grid = cfg.time_grid_with(m)?;
        let d = terminal_jump_diagnostic(&model, &grid, cfg.mc.paths, cfg.mc.seed, cfg.facelift.j_large, &solver, &lift)?;
        table.row(&[m.to_string(), "h".into(), num(d.y0_h), num(d.stderr_h), num(d.gap_h)])?;
        table.row(&[m.to_string(), "facelift".into(), num(d.y0_lift), num(d.stderr_lift), num(d.gap_lift)])?;
        diff.row(&[m.to_string(), num(d.y0_difference), num(d.y0_difference_stderr)])?;
        summary.push(format!(
            "m = {m:>4}  gap_h {:.5}  gap_lift {:.5}  y0(h) - y0(lift) {:+.5} (se {:.5})",
            d.gap_h, d.gap_lift, d.y0_difference, d.y0_difference_stderr
        ));
    }
    Ok(Outcome {
        files: vec![report_path, diff_path],
        summary: summary.join("\n"),
        failed_checks: false,
    })
}

pub fn oracle_compare(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    // fails fast on models the finite-difference oracle cannot take
    let fd_grid = Grid1D::around(&model, cfg.grid.horizon, cfg.oracle.nx, FdVariant::Projected)?;
    let grid = cfg.time_grid()?;
    let solver = cfg.solver(&model);
    let report = solve_penalized_sequence_with(
        &model,
        &grid,
        cfg.mc.paths,
        cfg.mc.seed,
        &solver,
        &cfg.penalty.schedule,
        &Terminal::Reward,
        |_| {},
    )?;
    let fd = solve_hjb_fd(&model, cfg.grid.horizon, &fd_grid, FdVariant::Projected, cfg.oracle.snapshots)?;
    let dp = if cfg.oracle.dp_steps > 0 {
        let terminal = if cfg.oracle.dp_facelift {
            DpTerminal::Facelifted(cfg.facelift_config())
        } else {
            DpTerminal::Reward
        };
        Some(
            brute_force_dp(&TinyInstance {
                model: &model,
                horizon: cfg.grid.horizon,
                steps: cfg.oracle.dp_steps,
                b_levels: cfg.oracle.dp_levels.clone(),
                terminal,
            })?
            .value,
        )
    } else {
        None
    };
    let last = report.rows.last().expect("nonempty schedule");
    let hjb = fd.value_at_x0;
    let rel = (report.limit_estimate - hjb).abs() / (1.0 + hjb.abs());
    let path = out.join("oracle_compare.csv");
    let mut table = Table::create(
        &path,
        &[
            "model",
            "bsde_limit",
            "bsde_stderr",
            "hjb_value",
            "dp_value",
            "rel_gap_bsde_hjb",
            "abs_gap_hjb_dp",
        ],
    )?;
    table.row(&[
        model.name.clone(),
        num(report.limit_estimate),
        num(last.stderr),
        num(hjb),
        opt(dp),
        num(rel),
        opt(dp.map(|d| (hjb - d).abs())),
    ])?;
    let mut files = vec![path];
    if cfg.oracle.snapshots > 0 {
        let surface = out.join("hjb_surface.csv");
        let mut t = Table::create(&surface, &["t", "x", "u"])?;
        for (time, u) in fd.snapshot_times.iter().zip(&fd.snapshots) {
            for (x, v) in fd.x.iter().zip(u) {
                t.row(&[num(*time), num(*x), num(*v)])?;
            }
        }
        files.push(surface);
    }
    let mut summary = format!("bsde limit {:.6}  hjb {hjb:.6}  relative gap {rel:.5}", report.limit_estimate);
    if let Some(d) = dp {
        summary.push_str(&format!("\ndp ({} steps) {d:.6}  |hjb - dp| {:.5}", cfg.oracle.dp_steps, (hjb - d).abs()));
    }
    Ok(Outcome {
        files,
        summary,
        failed_checks: false,
    })
}

pub fn validate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let report = validate_model(&model, VALIDATION_TRIALS, cfg.mc.seed)?;
    let samples = driver_samples(&model, VALIDATION_TRIALS, 2.0, cfg.mc.seed);
    let mono = pj_monotone_report(&model, &samples, &cfg.penalty.schedule)?;
    // the terminal reward has to be finite on simulated paths
    let grid = cfg.time_grid()?;
    let (_, x) = training_paths(&model, &grid, 256, cfg.mc.seed)?;
    let terminal_ok = terminal_values(&model, &x, &Terminal::Reward)?.iter().all(|v| v.is_finite());

    let path = out.join("validation.csv");
    let mut table = Table::create(&path, &["check", "passed", "witness"])?;
    let mut lines = Vec::new();
    let mut all = true;
    let mut record = |name: &str, passed: bool, witness: String| -> Result<(), CliError> {
        all &= passed;
        lines.push(format!("{} {name}", if passed { "ok  " } else { "FAIL" }));
        table.row(&[name.to_string(), passed.to_string(), witness])
    };
    for c in &report.checks {
        record(&c.name, c.passed, c.witness.clone().unwrap_or_default())?;
    }
    let witness = mono
        .violations
        .first()
        .map(|v| format!("sample {} j {} -> {}: {} > {}", v.sample, v.j_low, v.j_high, v.value_low, v.value_high))
        .unwrap_or_default();
    record("pj_monotone_in_j", mono.ok(), witness)?;
    record("terminal_finite", terminal_ok, String::new())?;
    Ok(Outcome {
        files: vec![path],
        summary: lines.join("\n"),
        failed_checks: !all,
    })
}
