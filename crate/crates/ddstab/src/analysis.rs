//! Turns traces and sweeps into quantitative certificates: convergence
//! metrics, Lyapunov decrease audits, input-convergence gaps, scaling-law
//! fits and the steady-error-vs-noise study. Every study is seed-
//! deterministic and reports the raw points next to the fitted quantities,
//! and each certificate ships with a negative control somewhere in the test
//! suite so a vacuous pass cannot slip through.

use std::io::Write;

use thiserror::Error;

use crate::controller;
use crate::estimator;
use crate::lift::{self, RemainderStudy};
use crate::numerics;
use crate::parallel;
use crate::plant::NormalFormPlant;
use crate::scenarios;
use crate::simloop::{self, RunConfig, SimError, Trace};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("traces have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("unknown study '{0}'")]
    UnknownStudy(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Estimator(#[from] estimator::EstimatorError),
    #[error(transparent)]
    Lift(#[from] lift::LiftError),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Preset(#[from] scenarios::PresetError),
    #[error(transparent)]
    Controller(#[from] controller::ControllerError),
}

/// Terminal norm, 2% settling time and steady-state error of a trace, all on
/// the setpoint-shifted state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceMetrics {
    pub terminal_norm: f64,
    /// First time after which ‖z̃‖ stays inside 2% of its initial value;
    /// `None` when the band is never reached (reported, not thrown).
    pub settling_time: Option<f64>,
    /// max |z₁ - r| over the final 20% of each setpoint dwell, worst dwell.
    pub steady_error: f64,
}

pub fn convergence_metric(trace: &Trace) -> ConvergenceMetrics {
    if trace.records.is_empty() {
        return ConvergenceMetrics { terminal_norm: 0.0, settling_time: None, steady_error: 0.0 };
    }
    let norms: Vec<f64> = trace.records.iter().map(|r| trace.shifted_norm(r)).collect();
    let terminal_norm = *norms.last().unwrap();
    let initial = norms[0];
    let band = 0.02 * initial;
    let settling_time = if initial == 0.0 {
        Some(0.0)
    } else {
        let mut last_outside = None;
        for (i, n) in norms.iter().enumerate() {
            if *n > band {
                last_outside = Some(i);
            }
        }
        match last_outside {
            None => Some(0.0),
            Some(i) if i + 1 < norms.len() => Some(trace.records[i + 1].t),
            Some(_) => None,
        }
    };

    // Dwell boundaries: setpoint switch times plus the run edges.
    let t_end = trace.records.last().unwrap().t + trace.t_sample;
    let mut edges = vec![0.0];
    for s in &trace.setpoints {
        if s.time > 0.0 && s.time < t_end {
            edges.push(s.time);
        }
    }
    edges.push(t_end);
    let mut steady_error = 0.0f64;
    for w in edges.windows(2) {
        let (start, end) = (w[0], w[1]);
        let tail_start = end - 0.2 * (end - start);
        let dwell_err = trace
            .records
            .iter()
            .filter(|r| r.t >= tail_start && r.t < end)
            .map(|r| (r.z[0] - trace.setpoint_at(r.t)).abs())
            .fold(0.0f64, f64::max);
        steady_error = steady_error.max(dwell_err);
    }
    ConvergenceMetrics { terminal_norm, settling_time, steady_error }
}

/// Result of auditing W(k+1) - W(k) along a trace.
#[derive(Debug, Clone)]
pub struct LyapunovAudit {
    /// Steps after the skip where W increased beyond round-off.
    pub violations: usize,
    /// Smallest decrease margin W(k) - W(k+1) observed.
    pub min_margin: f64,
    /// Largest λ with W(k+1) - W(k) <= -λ(T‖z̃‖² + e_u²) on every audited
    /// step; `None` when nothing was audited.
    pub fitted_lambda: Option<f64>,
    pub audited_steps: usize,
}

/// Counts increases of W = V_z + V_eu after the first `skip` samples.
/// Increases smaller than 1e-12 (absolute, on W) are treated as round-off.
pub fn lyapunov_audit(trace: &Trace, skip: usize) -> LyapunovAudit {
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    let mut lambda: Option<f64> = None;
    let mut audited = 0;
    for pair in trace.records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.k < skip {
            continue;
        }
        audited += 1;
        let delta = b.w - a.w;
        if delta > 1e-12 {
            violations += 1;
        }
        min_margin = min_margin.min(-delta);
        let z_norm = trace.shifted_norm(a);
        let denom = trace.t_sample * z_norm * z_norm + a.e_u * a.e_u;
        if denom > 1e-18 {
            let this = (-delta / denom).max(0.0);
            lambda = Some(match lambda {
                None => this,
                Some(l) => l.min(this),
            });
        }
    }
    if audited == 0 {
        min_margin = 0.0;
    }
    LyapunovAudit { violations, min_margin, fitted_lambda: lambda, audited_steps: audited }
}

/// Per-step relative gap between two input sequences.
#[derive(Debug, Clone)]
pub struct InputGap {
    /// |u - ū| / (1 + |ū|) per step.
    pub gaps: Vec<f64>,
    /// First time from which the gap stays below 1% for the rest of the run.
    pub settled_at: Option<f64>,
}

/// Gap between the inputs of two runs of the same configuration (data-driven
/// vs oracle).
pub fn input_convergence(trace: &Trace, oracle: &Trace) -> Result<InputGap, AnalysisError> {
    if trace.records.len() != oracle.records.len() {
        return Err(AnalysisError::LengthMismatch {
            a: trace.records.len(),
            b: oracle.records.len(),
        });
    }
    let gaps: Vec<f64> = trace
        .records
        .iter()
        .zip(&oracle.records)
        .map(|(a, b)| (a.u - b.u).abs() / (1.0 + b.u.abs()))
        .collect();
    Ok(build_gap(trace, gaps))
}

fn build_gap(trace: &Trace, gaps: Vec<f64>) -> InputGap {
    let mut settled_idx = None;
    for i in (0..gaps.len()).rev() {
        if gaps[i] >= 0.01 {
            break;
        }
        settled_idx = Some(i);
    }
    InputGap { settled_at: settled_idx.map(|i| trace.records[i].t), gaps }
}

/// Gap between the data-driven input and the static oracle evaluated along
/// the same trajectory, the comparison the adaptation is designed to win.
/// The gain row is supplied by the caller (traces do not store it).
pub fn oracle_gap_with(
    plant: &NormalFormPlant,
    k: &[f64],
    trace: &Trace,
) -> Result<InputGap, AnalysisError> {
    let mut gaps = Vec::with_capacity(trace.records.len());
    for rec in &trace.records {
        let r = trace.setpoint_at(rec.t);
        let mut shifted = rec.z.clone();
        shifted[0] -= r;
        let v = controller::virtual_input(k, &shifted);
        let ubar = (-plant.alpha(&rec.z) + v) / plant.beta(&rec.z);
        gaps.push((rec.u - ubar).abs() / (1.0 + ubar.abs()));
    }
    Ok(build_gap(trace, gaps))
}

/// One grid point of the steady-error-vs-noise study.
#[derive(Debug, Clone)]
pub struct UltimateBoundPoint {
    pub d_bar: f64,
    pub t_sample: f64,
    pub seed: u64,
    pub steady_error: f64,
}

#[derive(Debug, Clone)]
pub struct UltimateBoundStudy {
    pub points: Vec<UltimateBoundPoint>,
    /// Exponent of d̄ in the fit steady_error ≈ c·d̄^p·T^q.
    pub p_dbar: f64,
    /// Exponent of T in the same fit. T^(-n) is an upper-bound exponent, not
    /// necessarily the realized rate.
    pub q_t: f64,
    pub c: f64,
    /// Mean steady-error ratios between consecutive d̄ values at fixed T.
    pub doubling_ratios: Vec<f64>,
}

/// Sweeps (d̄, T, seed), measures the steady-state error of each run and fits
/// steady_error ≈ c·d̄^p·T^q over the noisy points.
pub fn ultimate_bound_study(
    plant: &NormalFormPlant,
    base: &RunConfig,
    d_bar_list: &[f64],
    t_list: &[f64],
    seeds: &[u64],
) -> Result<UltimateBoundStudy, AnalysisError> {
    assert!(!d_bar_list.is_empty() && !t_list.is_empty() && !seeds.is_empty());
    let mut jobs = Vec::new();
    for &d in d_bar_list {
        for &t in t_list {
            for &seed in seeds {
                jobs.push((d, t, seed));
            }
        }
    }
    let results = parallel::map(jobs, |(d, t, seed)| {
        let mut cfg = base.clone();
        cfg.noise.d_bar = d;
        cfg.noise.seed = seed;
        cfg.estimator.sample_time = t;
        simloop::run(plant, &cfg).map(|trace| UltimateBoundPoint {
            d_bar: d,
            t_sample: t,
            seed,
            steady_error: convergence_metric(&trace).steady_error,
        })
    });
    let mut points = Vec::with_capacity(results.len());
    for r in results {
        points.push(r?);
    }

    // Mean steady error per (d̄, T) cell.
    let cell_mean = |d: f64, t: f64| -> f64 {
        let sel: Vec<f64> = points
            .iter()
            .filter(|p| p.d_bar == d && p.t_sample == t)
            .map(|p| p.steady_error)
            .collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    };

    // Two-variable log-log least squares over the noisy cells.
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for &d in d_bar_list.iter().filter(|d| **d > 0.0) {
        for &t in t_list {
            let m = cell_mean(d, t);
            if m > 0.0 {
                rows.push(vec![1.0, d.ln(), t.ln()]);
                rhs.push(m.ln());
            }
        }
    }
    let (c, p_dbar, q_t) = if rows.len() >= 3 {
        let m = numerics::Matrix::from_rows(&rows);
        match numerics::least_squares(&m, &rhs) {
            Ok(x) => (x[0].exp(), x[1], x[2]),
            Err(_) => (f64::NAN, f64::NAN, f64::NAN),
        }
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };

    let mut doubling_ratios = Vec::new();
    let noisy: Vec<f64> = d_bar_list.iter().copied().filter(|d| *d > 0.0).collect();
    for pair in noisy.windows(2) {
        for &t in t_list {
            let lo = cell_mean(pair[0], t);
            let hi = cell_mean(pair[1], t);
            if lo > 0.0 {
                doubling_ratios.push(hi / lo);
            }
        }
    }
    Ok(UltimateBoundStudy { points, p_dbar, q_t, c, doubling_ratios })
}

/// A named pass/fail check with its measured detail.
#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Raw points plus summary of one study, ready for CSV + text emission.
#[derive(Debug, Clone)]
pub struct StudyReport {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub summary: Vec<(String, String)>,
    pub checks: Vec<CheckLine>,
}

impl StudyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| simloop::fmt_g17(*v)).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Machine-parsable summary: KEY=VALUE lines then one PASS/FAIL line per
    /// check.
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("STUDY={}\n", self.name));
        for (k, v) in &self.summary {
            s.push_str(&format!("{k}={v}\n"));
        }
        for c in &self.checks {
            s.push_str(&format!(
                "{} {}: {}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
        s
    }
}

pub const STUDY_NAMES: [&str; 5] =
    ["taylor-remainder", "est-error", "ultimate-bound", "lyapunov", "input-convergence"];

/// Runs one named study against a base configuration.
pub fn run_study(name: &str, base: &RunConfig) -> Result<StudyReport, AnalysisError> {
    match name {
        "taylor-remainder" => taylor_remainder_report(base),
        "est-error" => est_error_report(base),
        "ultimate-bound" => ultimate_bound_report(base),
        "lyapunov" => lyapunov_report(base),
        "input-convergence" => input_convergence_report(base),
        other => Err(AnalysisError::UnknownStudy(other.to_string())),
    }
}

fn check(name: &str, pass: bool, detail: String) -> CheckLine {
    CheckLine { name: name.into(), pass, detail }
}

/// One-step remainder orders on the configured plant, with the integrator
/// chain as the exactness control.
fn taylor_remainder_report(base: &RunConfig) -> Result<StudyReport, AnalysisError> {
    let plant = scenarios::plant(&base.plant.preset)?;
    let study = remainder_study_default(&plant)?;
    let mut rows = Vec::new();
    for p in &study.points {
        let mut row = vec![p.t_sample];
        row.extend(p.max_err.iter().copied());
        rows.push(row);
    }
    let mut columns = vec!["T".to_string()];
    for i in 1..=plant.n() {
        columns.push(format!("max_err_{i}"));
    }
    let mut summary = Vec::new();
    let mut checks = Vec::new();
    for (i, slope) in study.slopes.iter().enumerate() {
        let label = format!("slope_{}", i + 1);
        match slope {
            Some(s) => summary.push((label, format!("{s:.4}"))),
            None => summary.push((label, "exact".into())),
        }
    }
    for (i, m) in study.fitted_m.iter().enumerate() {
        summary.push((format!("fitted_M_{}", i + 1), format!("{m:.6e}")));
    }
    if plant.n() == 2 {
        let s1 = study.slopes[0];
        let s2 = study.slopes[1];
        match (s1, s2) {
            (Some(s1), Some(s2)) => {
                checks.push(check(
                    "remainder_order_component_1",
                    (2.8..=3.2).contains(&s1),
                    format!("slope {s1:.3} expected in [2.8, 3.2]"),
                ));
                checks.push(check(
                    "remainder_order_component_2",
                    (1.8..=2.2).contains(&s2),
                    format!("slope {s2:.3} expected in [1.8, 2.2]"),
                ));
            }
            _ => {
                let max_err = study
                    .points
                    .iter()
                    .flat_map(|p| p.max_err.iter())
                    .fold(0.0f64, |m, e| m.max(*e));
                checks.push(check(
                    "remainder_exact",
                    max_err < 1e-12,
                    format!("model exact, max gap {max_err:.2e}"),
                ));
            }
        }
    }
    // Exactness control: the integrator chain must show zero remainder.
    let di = scenarios::plant("double-integrator")?;
    let control = remainder_study_default(&di)?;
    let worst = control
        .points
        .iter()
        .flat_map(|p| p.max_err.iter())
        .fold(0.0f64, |m, e| m.max(*e));
    checks.push(check(
        "integrator_chain_exact",
        worst < 1e-12,
        format!("max gap {worst:.2e} expected < 1e-12"),
    ));
    Ok(StudyReport {
        name: "taylor-remainder".into(),
        columns,
        rows,
        summary,
        checks,
    })
}

/// Standard remainder sweep: 5-per-axis state grid over 60% of the box, five
/// inputs around hover, T in {0.02, 0.01, 0.005, 0.0025}.
pub fn remainder_study_default(plant: &NormalFormPlant) -> Result<RemainderStudy, AnalysisError> {
    let inner = shrink_box(plant, 0.6);
    let grid = inner.grid(grid_points_for(plant.n()));
    let u0 = plant.equilibrium_input().map_err(SimError::Plant)?;
    let inputs: Vec<f64> = [-0.4, -0.2, 0.0, 0.3, 0.6].iter().map(|d| u0 + d).collect();
    Ok(lift::remainder_study(plant, &grid, &inputs, &[0.02, 0.01, 0.005, 0.0025])?)
}

fn grid_points_for(n: usize) -> usize {
    match n {
        1 => 9,
        2 => 5,
        _ => 3,
    }
}

fn shrink_box(plant: &NormalFormPlant, factor: f64) -> crate::plant::OperatingBox {
    plant.operating_box().inflate(factor)
}

fn est_error_report(base: &RunConfig) -> Result<StudyReport, AnalysisError> {
    let plant = scenarios::plant(&base.plant.preset)?;
    let mut cfg = base.clone();
    cfg.setpoints.clear();
    cfg.horizon = 6.0;
    if plant.n() == 2 {
        cfg.z0 = vec![0.5, 0.0];
    }
    let t_list = [0.02, 0.01, 0.005, 0.0025];
    let study =
        estimator::estimation_error_study(&plant, &cfg, &t_list, 1e-3, &[11, 12, 13])?;
    let rows: Vec<Vec<f64>> = study
        .points_clean
        .iter()
        .zip(&study.points_noise)
        .map(|(&(t, clean), &(_, noise))| vec![t, clean, noise])
        .collect();
    let n = plant.n() as f64;
    let noise_band = (-1.2 * n, -0.8 * n);
    let checks = vec![
        check(
            "clean_error_order",
            (0.7..=1.3).contains(&study.slope_clean),
            format!("slope {:.3} expected in [0.7, 1.3]", study.slope_clean),
        ),
        check(
            "noise_error_order",
            study.slope_noise >= noise_band.0 && study.slope_noise <= noise_band.1,
            format!(
                "slope {:.3} expected in [{:.1}, {:.1}]",
                study.slope_noise, noise_band.0, noise_band.1
            ),
        ),
    ];
    Ok(StudyReport {
        name: "est-error".into(),
        columns: vec!["T".into(), "sup_err_clean".into(), "sup_err_noise".into()],
        rows,
        summary: vec![
            ("slope_clean".into(), format!("{:.4}", study.slope_clean)),
            ("slope_noise".into(), format!("{:.4}", study.slope_noise)),
        ],
        checks,
    })
}

fn ultimate_bound_report(base: &RunConfig) -> Result<StudyReport, AnalysisError> {
    let plant = scenarios::plant(&base.plant.preset)?;
    let mut cfg = base.clone();
    cfg.horizon = 6.0;
    cfg.setpoints = vec![simloop::SetpointStep { time: 0.0, value: 0.5 }];
    let d_list = [0.0005, 0.001, 0.002];
    let t_list = [0.0028, 0.005, 0.01];
    let seeds: Vec<u64> = (0..20).collect();
    let study = ultimate_bound_study(&plant, &cfg, &d_list, &t_list, &seeds)?;
    let rows: Vec<Vec<f64>> = study
        .points
        .iter()
        .map(|p| vec![p.d_bar, p.t_sample, p.seed as f64, p.steady_error])
        .collect();
    let ratios_ok = study.doubling_ratios.iter().all(|r| (1.5..=2.5).contains(r));
    let ratio_str = study
        .doubling_ratios
        .iter()
        .map(|r| format!("{r:.2}"))
        .collect::<Vec<_>>()
        .join(" ");
    let checks = vec![
        check(
            "linear_in_noise_bound",
            (0.7..=1.3).contains(&study.p_dbar),
            format!("d-bar exponent {:.3} expected in [0.7, 1.3]", study.p_dbar),
        ),
        check(
            "doubling_ratio",
            ratios_ok,
            format!("ratios [{ratio_str}] expected in [1.5, 2.5]"),
        ),
    ];
    Ok(StudyReport {
        name: "ultimate-bound".into(),
        columns: vec!["d_bar".into(), "T".into(), "seed".into(), "steady_error".into()],
        rows,
        summary: vec![
            ("p_dbar".into(), format!("{:.4}", study.p_dbar)),
            ("q_T".into(), format!("{:.4}", study.q_t)),
            ("c".into(), format!("{:.6e}", study.c)),
        ],
        checks,
    })
}

fn lyapunov_report(base: &RunConfig) -> Result<StudyReport, AnalysisError> {
    let plant = scenarios::plant(&base.plant.preset)?;
    let mut cfg = base.clone();
    cfg.noise.d_bar = 0.0;
    cfg.setpoints.clear();
    if plant.n() == 2 {
        cfg.z0 = vec![0.5, 0.0];
    }
    let trace = simloop::run(&plant, &cfg)?;
    let audit = lyapunov_audit(&trace, cfg.estimator.rho);
    let rows: Vec<Vec<f64>> = trace
        .records
        .iter()
        .map(|r| vec![r.t, r.v_z, r.v_eu, r.w])
        .collect();

    // Negative control: a sample time far outside the small-T regime must
    // break the certificate (violations or a blow-up).
    let mut huge = cfg.clone();
    huge.estimator.sample_time = 0.5;
    let control_broke = match simloop::run(&plant, &huge) {
        Err(SimError::BlowUp { .. }) => true,
        Err(_) => false,
        Ok(t) => lyapunov_audit(&t, huge.estimator.rho).violations > 0,
    };

    let checks = vec![
        check(
            "monotone_decrease",
            audit.violations == 0,
            format!("{} violations over {} steps", audit.violations, audit.audited_steps),
        ),
        check(
            "negative_control_breaks",
            control_broke,
            "T = 0.5 must produce violations or divergence".to_string(),
        ),
    ];
    Ok(StudyReport {
        name: "lyapunov".into(),
        columns: vec!["t".into(), "Vz".into(), "Veu".into(), "W".into()],
        rows,
        summary: vec![
            ("violations".into(), audit.violations.to_string()),
            ("min_margin".into(), format!("{:.6e}", audit.min_margin)),
            (
                "fitted_lambda".into(),
                audit
                    .fitted_lambda
                    .map(|l| format!("{l:.6e}"))
                    .unwrap_or_else(|| "none".into()),
            ),
        ],
        checks,
    })
}

fn input_convergence_report(base: &RunConfig) -> Result<StudyReport, AnalysisError> {
    let plant = scenarios::plant(&base.plant.preset)?;
    let mut cfg = base.clone();
    cfg.noise.d_bar = 0.0;
    cfg.setpoints.clear();
    if plant.n() == 2 {
        cfg.z0 = vec![0.5, 0.0];
    }
    cfg.horizon = cfg.horizon.min(6.0);
    let design = simloop::resolve_gains(&cfg, plant.n())?;
    let trace = simloop::run(&plant, &cfg)?;
    let gap = oracle_gap_with(&plant, &design.k, &trace)?;
    let rows: Vec<Vec<f64>> = trace
        .records
        .iter()
        .zip(&gap.gaps)
        .map(|(r, g)| vec![r.t, r.u, *g])
        .collect();
    let settled = gap.settled_at;
    let checks = vec![check(
        "gap_below_1pct_within_2s",
        settled.map(|t| t <= 2.0).unwrap_or(false),
        format!(
            "gap settles below 1% at {}",
            settled.map(|t| format!("{t:.3}s")).unwrap_or_else(|| "never".into())
        ),
    )];
    Ok(StudyReport {
        name: "input-convergence".into(),
        columns: vec!["t".into(), "u".into(), "gap".into()],
        rows,
        summary: vec![(
            "settled_at".into(),
            settled.map(|t| format!("{t:.4}")).unwrap_or_else(|| "never".into()),
        )],
        checks,
    })
}
