//! Command-line front door: single simulations, oracle comparisons, studies,
//! offline estimation and gain design.
//!
//! Exit codes: 0 success (and all study tolerances met), 1 configuration or
//! usage error, 2 simulation blow-up or failed study tolerance. Summary files
//! are machine-parsable KEY=VALUE lines plus one PASS/FAIL line per check.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{self, convergence_metric, lyapunov_audit};
use crate::controller;
use crate::estimator::{build_stack, EstimatorConfig, SampleWindow};
use crate::numerics;
use crate::parallel;
use crate::scenarios;
use crate::simloop::{self, fmt_g17, RunConfig, SimError, Trace};

/// Environment variable overriding every `--out` directory.
pub const OUT_DIR_ENV: &str = "DDSTAB_OUT";

const CONFIG_SCHEMA_VERSION: &str = "1";

#[derive(Parser)]
#[command(
    name = "ddstab",
    version = concat!(env!("CARGO_PKG_VERSION"), " (config schema v1)"),
    about = "Data-driven stabilization of SISO feedback-linearizable systems"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop simulation from a config file.
    Simulate(SimulateArgs),
    /// Run a named certification study and report PASS/FAIL.
    Sweep(SweepArgs),
    /// Design and print a virtual gain with its Lyapunov certificate.
    Design(DesignArgs),
    /// Offline estimation: differentiate a sampled output CSV.
    Estimate(EstimateArgs),
    /// List the built-in presets and dump them as ready-to-edit configs.
    Presets(PresetsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Also run the known-model oracle controller on the same config.
    #[arg(long)]
    oracle: bool,
    /// Output directory for trace and summary files.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Write a gnuplot script next to the trace.
    #[arg(long)]
    emit_plots: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// One of: taylor-remainder, est-error, ultimate-bound, lyapunov,
    /// input-convergence.
    #[arg(long)]
    study: String,
    /// Base configuration; defaults to the drone-emulated preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Worker threads for the sweep (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct DesignArgs {
    /// Relative degree.
    #[arg(long)]
    n: usize,
    /// Desired continuous-time poles, comma separated, e.g. "-3,-3".
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    poles: Option<Vec<f64>>,
    /// Explicit gain row to certify instead of placing poles.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    k: Option<Vec<f64>>,
}

#[derive(Args)]
struct EstimateArgs {
    /// CSV of `t,y` samples (header line optional).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    rho: usize,
    /// Sample time; inferred from the t column when omitted.
    #[arg(long)]
    sample_time: Option<f64>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PresetsArgs {
    /// Write one `<name>.toml` per preset into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` and runs; returns the process exit code.
pub fn run_from<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version with success exits.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Design(a) => design(a),
        Command::Estimate(a) => estimate(a),
        Command::Presets(a) => presets(a),
    }
}

fn out_dir(requested: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) => PathBuf::from(dir),
        None => requested.to_path_buf(),
    }
}

fn fail(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    1
}

fn load_config(path: &Path) -> Result<RunConfig, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read config '{}': {e}", path.display()))?;
    RunConfig::from_toml(&text).map_err(|e| format!("in '{}': {e}", path.display()))
}

fn simulate(args: SimulateArgs) -> i32 {
    let cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let plant = match scenarios::plant(&cfg.plant.preset) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let dir = out_dir(&args.out);
    if let Err(e) = fs::create_dir_all(&dir) {
        return fail(format!("cannot create '{}': {e}", dir.display()));
    }

    let mut blew_up = false;
    let trace = match simloop::run(&plant, &cfg) {
        Ok(t) => t,
        Err(SimError::BlowUp { partial, steps, source }) => {
            eprintln!("blow-up after {steps} steps: {source}");
            blew_up = true;
            *partial
        }
        Err(e) => return fail(e),
    };

    let trace_path = dir.join("trace.csv");
    if let Err(e) = write_trace(&trace, &trace_path) {
        return fail(e);
    }
    let mut summary = summarize(&trace, &cfg);
    summary.push(("blowup".into(), blew_up.to_string()));

    if args.oracle {
        match simloop::run_oracle(&plant, &cfg) {
            Ok(oracle) => {
                if let Err(e) = write_trace(&oracle, &dir.join("trace_oracle.csv")) {
                    return fail(e);
                }
                if let Ok(gap) = analysis::input_convergence(&trace, &oracle) {
                    summary.push((
                        "oracle_gap_settled_at".into(),
                        gap.settled_at.map(|t| format!("{t:.4}")).unwrap_or("never".into()),
                    ));
                }
            }
            Err(e) => eprintln!("oracle run failed: {e}"),
        }
    }

    let summary_text: String =
        summary.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    if let Err(e) = fs::write(dir.join("summary.txt"), &summary_text) {
        return fail(e);
    }
    print!("{summary_text}");

    if args.emit_plots {
        let script = plot_script(&trace, "trace.csv");
        if let Err(e) = fs::write(dir.join("plots.gp"), script) {
            return fail(e);
        }
    }
    if blew_up {
        2
    } else {
        0
    }
}

fn summarize(trace: &Trace, cfg: &RunConfig) -> Vec<(String, String)> {
    let m = convergence_metric(trace);
    let audit = lyapunov_audit(trace, cfg.estimator.rho);
    vec![
        ("steps".into(), trace.records.len().to_string()),
        ("terminal_norm".into(), format!("{:.6e}", m.terminal_norm)),
        (
            "settling_time".into(),
            m.settling_time.map(|t| format!("{t:.4}")).unwrap_or("unsettled".into()),
        ),
        ("steady_error".into(), format!("{:.6e}", m.steady_error)),
        ("lyapunov_violations".into(), audit.violations.to_string()),
        ("lyapunov_min_margin".into(), format!("{:.6e}", audit.min_margin)),
    ]
}

fn write_trace(trace: &Trace, path: &Path) -> Result<(), String> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).map_err(|e| e.to_string())?;
    fs::write(path, buf).map_err(|e| format!("cannot write '{}': {e}", path.display()))
}

/// Gnuplot script mirroring the experiment figure layout: trajectory with
/// setpoints, tracking error, input, and the audited W.
fn plot_script(trace: &Trace, csv_name: &str) -> String {
    let mut r_expr = String::from("0.0");
    for s in &trace.setpoints {
        r_expr = format!("(x >= {}) ? {} : ({r_expr})", s.time, s.value);
    }
    let zhat_cols = trace.n + 1;
    let u_col = 4 + trace.n + zhat_cols + 1;
    format!(
        "set datafile separator ','\n\
         r(x) = {r_expr}\n\
         set multiplot layout 4,1 title 'closed-loop run'\n\
         set ylabel 'z1'\n\
         plot '{csv}' using 2:3 with lines title 'z1', r(x) with lines dashtype 2 title 'setpoint'\n\
         set ylabel 'z1 - r'\n\
         plot '{csv}' using 2:($3 - r($2)) with lines title 'tracking error'\n\
         set ylabel 'u'\n\
         plot '{csv}' using 2:{u_col} with lines title 'input'\n\
         set ylabel 'W'\n\
         set logscale y\n\
         plot '{csv}' using 2:{w_col} with lines title 'W'\n\
         unset multiplot\n",
        csv = csv_name,
        u_col = u_col,
        w_col = u_col + 5,
    )
}

fn sweep(args: SweepArgs) -> i32 {
    parallel::configure_threads(args.threads);
    let base = match &args.config {
        Some(path) => match load_config(path) {
            Ok(c) => c,
            Err(e) => return fail(e),
        },
        None => scenarios::preset("drone-emulated").expect("built-in preset"),
    };
    let report = match analysis::run_study(&args.study, &base) {
        Ok(r) => r,
        Err(analysis::AnalysisError::UnknownStudy(s)) => {
            return fail(format!(
                "unknown study '{s}' (known: {})",
                analysis::STUDY_NAMES.join(", ")
            ))
        }
        Err(analysis::AnalysisError::Sim(SimError::BlowUp { steps, .. })) => {
            eprintln!("simulation blew up after {steps} steps");
            return 2;
        }
        Err(e) => return fail(e),
    };
    let dir = out_dir(&args.out);
    if let Err(e) = fs::create_dir_all(&dir) {
        return fail(format!("cannot create '{}': {e}", dir.display()));
    }
    let mut buf = Vec::new();
    if report.write_csv(&mut buf).is_err() {
        return fail("cannot serialize study csv");
    }
    let csv_path = dir.join(format!("{}.csv", report.name));
    if let Err(e) = fs::write(&csv_path, buf) {
        return fail(format!("cannot write '{}': {e}", csv_path.display()));
    }
    let text = report.summary_text();
    if let Err(e) = fs::write(dir.join(format!("{}_summary.txt", report.name)), &text) {
        return fail(e);
    }
    print!("{text}");
    if report.passed() {
        0
    } else {
        2
    }
}

fn design(args: DesignArgs) -> i32 {
    let design = match (&args.poles, &args.k) {
        (Some(poles), None) => controller::design_gain(args.n, poles, None),
        (None, Some(k)) => controller::certify_gain(k, None),
        _ => return fail("provide exactly one of --poles or --k"),
    };
    let design = match design {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    let a_cl = controller::closed_loop_matrix(&design.k);
    let eigs = numerics::eig_real_parts(&a_cl).expect("certified gain has eigenvalues");
    println!("K={}", join_g17(&design.k));
    for i in 0..design.p_z.rows() {
        println!("P_z_row{}={}", i + 1, join_g17(design.p_z.row(i)));
    }
    for i in 0..design.q.rows() {
        println!("Q_row{}={}", i + 1, join_g17(design.q.row(i)));
    }
    println!("lambda_min_Q={}", fmt_g17(design.lambda_z));
    println!("closed_loop_eig_real_parts={}", join_g17(&eigs));
    0
}

fn join_g17(v: &[f64]) -> String {
    v.iter().map(|x| fmt_g17(*x)).collect::<Vec<_>>().join(",")
}

fn estimate(args: EstimateArgs) -> i32 {
    let text = match fs::read_to_string(&args.input) {
        Ok(t) => t,
        Err(e) => return fail(format!("cannot read '{}': {e}", args.input.display())),
    };
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (a, b) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
        match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            (Ok(t), Ok(y)) => samples.push((t, y)),
            _ if lineno == 0 => continue, // header
            _ => return fail(format!("line {}: expected 't,y'", lineno + 1)),
        }
    }
    if samples.len() < args.rho {
        return fail(format!("need at least rho = {} samples, got {}", args.rho, samples.len()));
    }
    let t_sample = match args.sample_time {
        Some(t) => t,
        None => {
            let dt = samples[1].0 - samples[0].0;
            let uniform = samples
                .windows(2)
                .all(|w| ((w[1].0 - w[0].0) - dt).abs() <= 1e-9 * dt.abs().max(1e-12));
            if !uniform {
                return fail("t column is not uniformly spaced; pass --sample-time");
            }
            dt
        }
    };
    let cfg = match EstimatorConfig::new(args.n, args.rho, t_sample) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let stack = match build_stack(cfg) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let mut window = SampleWindow::new(args.rho);
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    for i in 1..=args.n + 1 {
        header.push(format!("zhat{i}"));
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for (k, &(t, y)) in samples.iter().enumerate() {
        window.push(y);
        if let Some(w) = window.newest_first() {
            let est = match stack.estimate(&w, k) {
                Ok(e) => e,
                Err(e) => return fail(e),
            };
            let mut fields = vec![fmt_g17(t)];
            fields.extend(est.z_hat.iter().map(|v| fmt_g17(*v)));
            fields.push(fmt_g17(est.lifted_hat));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
    }
    match &args.out {
        Some(path) => {
            if let Err(e) = fs::write(path, out) {
                return fail(format!("cannot write '{}': {e}", path.display()));
            }
        }
        None => print!("{out}"),
    }
    0
}

fn presets(args: PresetsArgs) -> i32 {
    for name in scenarios::PRESET_NAMES {
        let cfg = scenarios::preset(name).expect("built-in preset");
        let text = cfg.to_toml();
        match &args.out {
            Some(dir) => {
                let dir = out_dir(dir);
                if let Err(e) = fs::create_dir_all(&dir) {
                    return fail(format!("cannot create '{}': {e}", dir.display()));
                }
                let path = dir.join(format!("{name}.toml"));
                if let Err(e) = fs::write(&path, &text) {
                    return fail(format!("cannot write '{}': {e}", path.display()));
                }
                println!("wrote {}", path.display());
            }
            None => {
                println!("# preset: {name} (schema v{CONFIG_SCHEMA_VERSION})");
                print!("{text}");
                println!();
            }
        }
    }
    0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_script_mentions_setpoints() {
        let plant = scenarios::plant("drone-emulated").unwrap();
        let mut cfg = scenarios::preset("drone-emulated").unwrap();
        cfg.horizon = 0.1;
        let trace = simloop::run(&plant, &cfg).unwrap();
        let script = plot_script(&trace, "trace.csv");
        assert!(script.contains("multiplot"));
        assert!(script.contains("0.5"));
        // For n = 2 the input column is k,t,z1,z2,y,d,zhat1..3 -> u at 10.
        assert!(script.contains("using 2:10"));
    }
}
