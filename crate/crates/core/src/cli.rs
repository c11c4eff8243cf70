//! Command-line front end: `solve`, `check`, `verify`, `sweep`.
//!
//! Exit codes: 0 ok, 1 configuration or input error, 2 iteration failure,
//! 3 existence criterion failed, 4 residual above tolerance.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::checker::certify;
use crate::config::{Loaded, ProblemFile};
use crate::fracops::{PiecewiseTrajectory, SampledFn, Segment, SegmentKind};
use crate::problem::ProblemSpec;
use crate::solver::{mild_solve, SolveError, SolveReport};
use crate::verifier::{integral_residual, kind_label};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ITERATION: i32 = 2;
pub const EXIT_CRITERION: i32 = 3;
pub const EXIT_RESIDUAL: i32 = 4;

/// Environment variable holding the log filter (`error`, `warn`, `info`, …).
pub const LOG_ENV: &str = "HILFER_LOG";

#[derive(Debug, Parser)]
#[command(name = "hilfer", version, about = "Hilfer fractional evolution equations with non-instantaneous impulses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the problem and write the trajectory CSV plus a JSON report.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Trajectory CSV; the report goes next to it with extension `.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the existence criterion and print the certificate.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recompute the integral-equation residual of a trajectory CSV.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        traj: PathBuf,
    },
    /// Solve (and verify) once per parameter value, concurrently.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values, e.g. `0,0.5,1`.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Alpha,
    Beta,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("{0}")]
    Input(String),
    #[error("writing {path}: {source}")]
    Output { path: String, source: std::io::Error },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("{0}")]
    Check(#[from] crate::checker::CheckError),
    #[error("{0}")]
    Verify(#[from] crate::verifier::VerifyError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) | CliError::Output { .. } | CliError::Check(_) | CliError::Verify(_) => {
                EXIT_CONFIG
            }
            CliError::Solve(e) => solve_exit_code(e),
        }
    }
}

fn solve_exit_code(e: &SolveError) -> i32 {
    match e {
        SolveError::Problem(_) | SolveError::Config(_) => EXIT_CONFIG,
        _ => EXIT_ITERATION,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Results go to `out`, diagnostics to `err`; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    let result = match cli.command {
        Command::Solve { config, out: path } => cmd_solve(&config, &path, out),
        Command::Check { config } => cmd_check(&config, out),
        Command::Verify { config, traj } => cmd_verify(&config, &traj, out),
        Command::Sweep {
            config,
            param,
            values,
            out: dir,
        } => cmd_sweep(&config, param, &values, &dir, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if let CliError::Solve(SolveError::Diverged { ratios, .. } | SolveError::NoConvergence { ratios, .. }) = &e {
                let _ = writeln!(err, "Picard ratio history: {}", format_ratios(ratios));
            }
            e.exit_code()
        }
    }
}

fn format_ratios(r: &[f64]) -> String {
    r.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ")
}

fn load(path: &Path) -> Result<Loaded, CliError> {
    Ok(ProblemFile::read(path)?.load()?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Output {
        path: path.display().to_string(),
        source,
    })
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|source| CliError::Output {
        path: "<stdout>".into(),
        source,
    })
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialise")
}

/// Path of the JSON report that accompanies a trajectory CSV.
pub fn report_path(traj: &Path) -> PathBuf {
    traj.with_extension("json")
}

#[derive(Debug, Serialize)]
pub struct SegmentSummary {
    pub segment: usize,
    pub kind: String,
    pub left: f64,
    pub right: f64,
    pub points: usize,
    pub iterations: usize,
    pub final_diff: f64,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct SolveSummary {
    pub status: String,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kernel_exponent: String,
    pub picard_tol: f64,
    pub segments: Vec<SegmentSummary>,
    pub max_ratio: Option<f64>,
    pub terminal: Vec<f64>,
    pub pc_norm: f64,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio_history: Option<Vec<f64>>,
}

fn summarize(l: &Loaded, rep: &SolveReport) -> SolveSummary {
    let traj = &rep.trajectory;
    let segments = traj
        .segments
        .iter()
        .zip(&rep.segments)
        .enumerate()
        .map(|(i, (s, r))| SegmentSummary {
            segment: i,
            kind: kind_label(s.kind),
            left: s.left,
            right: s.right,
            points: s.samples.grid.len(),
            iterations: r.iterations,
            final_diff: r.final_diff,
            ratios: r.ratios.clone(),
        })
        .collect();
    let last = traj.segments.last().and_then(|s| s.samples.values.last());
    SolveSummary {
        status: "converged".into(),
        alpha: l.problem.alpha,
        beta: l.problem.beta,
        gamma: l.problem.gamma(),
        kernel_exponent: l.solver.kernel_exponent.label().into(),
        picard_tol: l.solver.tolerance,
        segments,
        max_ratio: rep.max_ratio(),
        terminal: last.map(|v| v.iter().copied().collect()).unwrap_or_default(),
        pc_norm: crate::fracops::pc_norm(traj).unwrap_or(f64::NAN),
        warnings: rep.warnings.clone(),
        error: None,
        ratio_history: None,
    }
}

fn failure_summary(l: &Loaded, e: &SolveError) -> SolveSummary {
    let ratios = match e {
        SolveError::Diverged { ratios, .. } | SolveError::NoConvergence { ratios, .. } => Some(ratios.clone()),
        _ => None,
    };
    SolveSummary {
        status: match e {
            SolveError::Diverged { .. } => "diverged",
            SolveError::NoConvergence { .. } => "not_converged",
            _ => "failed",
        }
        .into(),
        alpha: l.problem.alpha,
        beta: l.problem.beta,
        gamma: l.problem.gamma(),
        kernel_exponent: l.solver.kernel_exponent.label().into(),
        picard_tol: l.solver.tolerance,
        segments: Vec::new(),
        max_ratio: ratios.as_ref().and_then(|r| r.iter().copied().reduce(f64::max)),
        terminal: Vec::new(),
        pc_norm: f64::NAN,
        warnings: Vec::new(),
        error: Some(e.to_string()),
        ratio_history: ratios,
    }
}

pub fn cmd_solve(config: &Path, path: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let l = load(config)?;
    match mild_solve(&l.problem, &l.solver) {
        Ok(rep) => {
            write_file(path, trajectory_csv(&rep.trajectory).as_bytes())?;
            let json = to_json(&summarize(&l, &rep));
            write_file(&report_path(path), json.as_bytes())?;
            emit(out, &json)?;
            info!("wrote {}", path.display());
            Ok(EXIT_OK)
        }
        Err(e) => {
            if solve_exit_code(&e) == EXIT_ITERATION {
                let json = to_json(&failure_summary(&l, &e));
                write_file(&report_path(path), json.as_bytes())?;
                emit(out, &json)?;
            }
            Err(e.into())
        }
    }
}

pub fn cmd_check(config: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let l = load(config)?;
    let cert = certify(&l.problem, &l.sampling)?;
    emit(out, &to_json(&cert))?;
    if let Some(c) = &cert.caveat {
        warn!("{c}");
    }
    Ok(if cert.passed() { EXIT_OK } else { EXIT_CRITERION })
}

pub fn cmd_verify(config: &Path, traj: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let l = load(config)?;
    let text = std::fs::read_to_string(traj).map_err(|e| CliError::Input(format!("reading {}: {e}", traj.display())))?;
    let t = parse_trajectory_csv(&text, &l.problem)?;
    let rep = integral_residual(&l.problem, &t, &l.residual)?;
    emit(out, &to_json(&rep))?;
    Ok(if rep.passed { EXIT_OK } else { EXIT_RESIDUAL })
}

#[derive(Debug, Serialize)]
struct SweepRow {
    param: &'static str,
    value: f64,
    status: String,
    iterations: Option<usize>,
    max_ratio: Option<f64>,
    terminal: Vec<f64>,
    max_residual: Option<f64>,
    residual_passed: Option<bool>,
    message: String,
}

pub fn cmd_sweep(config: &Path, param: SweepParam, values: &[f64], dir: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let file = ProblemFile::read(config)?;
    if values.is_empty() {
        return Err(CliError::Input("sweep needs at least one value".into()));
    }
    let dim = file.problem.dimension;
    std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.display().to_string(),
        source,
    })?;
    let rows: Vec<SweepRow> = values
        .par_iter()
        .enumerate()
        .map(|(i, &v)| sweep_member(&file, param, i, v, dir))
        .collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["param".to_string(), "value".into(), "status".into(), "iterations".into(), "max_ratio".into()];
    header.extend((1..=dim).map(|i| format!("u_{i}_end")));
    header.extend(["max_residual".into(), "residual_passed".into(), "message".into()]);
    w.write_record(&header).map_err(csv_out)?;
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    for r in &rows {
        let mut rec = vec![
            r.param.to_string(),
            num(r.value),
            r.status.clone(),
            r.iterations.map(|n| n.to_string()).unwrap_or_default(),
            opt(r.max_ratio),
        ];
        rec.extend((0..dim).map(|k| r.terminal.get(k).map(|&x| num(x)).unwrap_or_default()));
        rec.push(opt(r.max_residual));
        rec.push(r.residual_passed.map(|b| b.to_string()).unwrap_or_default());
        rec.push(r.message.clone());
        w.write_record(&rec).map_err(csv_out)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    write_file(&dir.join("summary.csv"), &bytes)?;
    emit(out, &to_json(&rows))?;
    let ok = rows.iter().all(|r| r.status == "ok");
    Ok(if ok {
        EXIT_OK
    } else {
        rows.iter()
            .map(|r| match r.status.as_str() {
                "config_error" => EXIT_CONFIG,
                "residual_failed" => EXIT_RESIDUAL,
                "ok" => EXIT_OK,
                _ => EXIT_ITERATION,
            })
            .max()
            .unwrap_or(EXIT_OK)
    })
}

/// Trajectory file name for sweep member `i`.
pub fn sweep_file_name(param: SweepParam, i: usize, value: f64) -> String {
    format!("{}_{:02}_{}.csv", param.name(), i, value)
}

fn sweep_member(file: &ProblemFile, param: SweepParam, i: usize, v: f64, dir: &Path) -> SweepRow {
    let mut row = SweepRow {
        param: param.name(),
        value: v,
        status: "ok".into(),
        iterations: None,
        max_ratio: None,
        terminal: Vec::new(),
        max_residual: None,
        residual_passed: None,
        message: String::new(),
    };
    let mut f = file.clone();
    match param {
        SweepParam::Alpha => f.problem.alpha = v,
        SweepParam::Beta => f.problem.beta = v,
    }
    let l = match f.load() {
        Ok(l) => l,
        Err(e) => {
            row.status = "config_error".into();
            row.message = e.to_string();
            return row;
        }
    };
    let rep = match mild_solve(&l.problem, &l.solver) {
        Ok(r) => r,
        Err(e) => {
            row.status = if solve_exit_code(&e) == EXIT_CONFIG { "config_error" } else { "solve_failed" }.into();
            row.message = e.to_string();
            return row;
        }
    };
    row.iterations = Some(rep.iterations());
    row.max_ratio = rep.max_ratio();
    row.terminal = rep
        .trajectory
        .segments
        .last()
        .and_then(|s| s.samples.values.last())
        .map(|v| v.iter().copied().collect())
        .unwrap_or_default();
    let path = dir.join(sweep_file_name(param, i, v));
    if let Err(e) = write_file(&path, trajectory_csv(&rep.trajectory).as_bytes()) {
        row.status = "output_failed".into();
        row.message = e.to_string();
        return row;
    }
    match integral_residual(&l.problem, &rep.trajectory, &l.residual) {
        Ok(r) => {
            row.max_residual = Some(r.max_residual);
            row.residual_passed = Some(r.passed);
            if !r.passed {
                row.status = "residual_failed".into();
            }
        }
        Err(e) => {
            row.status = "verify_failed".into();
            row.message = e.to_string();
        }
    }
    row
}

fn csv_out(e: csv::Error) -> CliError {
    CliError::Input(format!("writing CSV: {e}"))
}

/// 17 significant digits, locale-free; parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn side(s: &Segment, t: f64) -> &'static str {
    if t == s.left {
        "left"
    } else if t == s.right {
        "right"
    } else {
        "interior"
    }
}

/// Trajectory CSV: `segment,t,side,u_1..u_d,weighted_norm`, one row per
/// stored node. The weight `(t - left)^{1-γ}` is taken from the segment's
/// left breakpoint.
pub fn trajectory_csv(traj: &PiecewiseTrajectory) -> String {
    let d = traj.dim();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["segment".to_string(), "t".into(), "side".into()];
    header.extend((1..=d).map(|i| format!("u_{i}")));
    header.push("weighted_norm".into());
    w.write_record(&header).expect("in-memory CSV");
    let e = 1.0 - traj.gamma;
    for (k, s) in traj.segments.iter().enumerate() {
        for (t, v) in s.samples.grid.iter().zip(&s.samples.values) {
            let wt = if e == 0.0 { 1.0 } else { (t - s.left).powf(e) };
            let mut rec = vec![k.to_string(), num(*t), side(s, *t).to_string()];
            rec.extend(v.iter().map(|x| num(*x)));
            rec.push(num(wt * v.norm()));
            w.write_record(&rec).expect("in-memory CSV");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("ASCII output")
}

/// Reads a trajectory CSV back, checking it against the problem's
/// partition. Anything structurally wrong (bad header, short rows,
/// unparsable numbers, missing nodes, a file cut short) is an input error.
pub fn parse_trajectory_csv(text: &str, p: &ProblemSpec) -> Result<PiecewiseTrajectory, CliError> {
    let bad = |m: String| CliError::Input(format!("malformed trajectory CSV: {m}"));
    if !text.ends_with('\n') {
        return Err(bad("file does not end with a newline (truncated?)".into()));
    }
    let d = p.dim();
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let mut expect = vec!["segment".to_string(), "t".into(), "side".into()];
    expect.extend((1..=d).map(|i| format!("u_{i}")));
    expect.push("weighted_norm".into());
    if header.iter().ne(expect.iter().map(String::as_str)) {
        return Err(bad(format!("header must be `{}`", expect.join(","))));
    }
    let pieces = p.pieces();
    let mut grids: Vec<Vec<f64>> = vec![Vec::new(); pieces.len()];
    let mut values: Vec<Vec<DVector<f64>>> = vec![Vec::new(); pieces.len()];
    let mut last_seg = 0usize;
    for (n, rec) in r.records().enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| bad(format!("line {line}: {e}")))?;
        if rec.len() != d + 4 {
            return Err(bad(format!("line {line}: expected {} fields, found {}", d + 4, rec.len())));
        }
        let seg: usize = rec[0].parse().map_err(|_| bad(format!("line {line}: bad segment index {:?}", &rec[0])))?;
        if seg >= pieces.len() || seg < last_seg {
            return Err(bad(format!("line {line}: segment index {seg} out of order or range")));
        }
        last_seg = seg;
        let field = |i: usize| -> Result<f64, CliError> {
            rec[i].trim().parse::<f64>().map_err(|_| bad(format!("line {line}: cannot parse {:?}", &rec[i])))
        };
        let t = field(1)?;
        if !["left", "right", "interior"].contains(&&rec[2]) {
            return Err(bad(format!("line {line}: side must be left, right or interior")));
        }
        let u: Vec<f64> = (3..3 + d).map(field).collect::<Result<_, _>>()?;
        field(3 + d)?;
        if let Some(&prev) = grids[seg].last() {
            if !(t > prev) {
                return Err(bad(format!("line {line}: times must increase within a segment")));
            }
        }
        grids[seg].push(t);
        values[seg].push(DVector::from_vec(u));
    }
    let mut segments = Vec::with_capacity(pieces.len());
    for (k, (pc, (g, v))) in pieces.iter().zip(grids.into_iter().zip(values)).enumerate() {
        let Some(&end) = g.last() else {
            return Err(bad(format!("segment {k} has no rows")));
        };
        let tol = 1e-12 * p.horizon.max(1.0);
        if (end - pc.right).abs() > tol {
            return Err(bad(format!("segment {k} ends at {end}, expected {}", pc.right)));
        }
        if !matches!(pc.kind, SegmentKind::Initial) && (g[0] - pc.left).abs() > tol {
            return Err(bad(format!("segment {k} starts at {}, expected {}", g[0], pc.left)));
        }
        let samples = SampledFn::new(g, v).map_err(|e| bad(e.to_string()))?;
        segments.push(Segment {
            kind: pc.kind,
            left: pc.left,
            right: pc.right,
            samples,
        });
    }
    PiecewiseTrajectory::new(segments, p.gamma()).map_err(|e| bad(e.to_string()))
}
