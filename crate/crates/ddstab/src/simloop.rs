//! The sampled-data closed loop: exact plant flow between samples, noisy
//! output sampling, estimation-window management, controller stepping and
//! full trace recording.
//!
//! One loop is strictly sequential (it is a feedback loop); sweeps run many
//! loops concurrently, each with its own seeded noise stream, so traces are
//! bit-reproducible regardless of thread count.

use std::io::Write;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{self, step_controller, ControllerError, ControllerState, GainDesign};
use crate::estimator::{build_stack, Estimate, EstimatorConfig, EstimatorError, SampleWindow};
use crate::numerics::Matrix;
use crate::plant::{NormalFormPlant, PlantError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("trajectory escaped after {steps} steps: {source}")]
    BlowUp {
        steps: usize,
        partial: Box<Trace>,
        #[source]
        source: PlantError,
    },
    #[error(transparent)]
    Estimator(EstimatorError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Plant(PlantError),
}

// Manual From impls keep the BlowUp variant from being shadowed by the
// transparent ones.
impl From<EstimatorError> for SimError {
    fn from(e: EstimatorError) -> Self {
        SimError::Estimator(e)
    }
}

/// Measurement-noise model: i.i.d. uniform on [-d_bar, d_bar], one draw per
/// sampling instant, from a seeded stream.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NoiseConfig {
    pub d_bar: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { d_bar: 0.0, seed: 0 }
    }
}

/// Constant output setpoint taking effect at `time`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SetpointStep {
    pub time: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlantSection {
    /// Preset name: `double-integrator`, `drone-emulated` or `chain-3`.
    pub preset: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EstimatorSection {
    pub rho: usize,
    pub sample_time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ControllerSection {
    /// Desired continuous-time poles; mutually exclusive with `k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poles: Option<Vec<f64>>,
    /// Explicit gain row, bypassing pole placement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<f64>>,
    pub gamma: f64,
    /// Fixed inputs for the first rho - 1 steps while the window fills.
    pub transient_inputs: Vec<f64>,
    /// Optional input range [lo, hi] applied to the emitted input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp: Option<[f64; 2]>,
}

/// Complete description of one closed-loop run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub plant: PlantSection,
    pub estimator: EstimatorSection,
    pub controller: ControllerSection,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub z0: Vec<f64>,
    pub horizon: f64,
    #[serde(default)]
    pub setpoints: Vec<SetpointStep>,
}

impl RunConfig {
    pub fn setpoint_at(&self, t: f64) -> f64 {
        let mut r = 0.0;
        for s in &self.setpoints {
            if s.time <= t {
                r = s.value;
            }
        }
        r
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }
}

/// One sampling instant of a run.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    /// True state (ground truth, harness only).
    pub z: Vec<f64>,
    /// Sampled output z₁ + d.
    pub y: f64,
    /// Noise sample added to the output.
    pub d: f64,
    /// Estimate in output coordinates (setpoint added back), plus the lifted
    /// drive estimate; `None` while the window fills.
    pub estimate: Option<(Vec<f64>, f64)>,
    /// Input held over [t, t+T).
    pub u: f64,
    /// Virtual input v(ẑ) the adaptation chased; `NaN` during the transient.
    pub v: f64,
    /// Input error v(z) - (α + βu), computed from ground truth.
    pub e_u: f64,
    /// z̃ᵀP_z z̃ on the setpoint-shifted state.
    pub v_z: f64,
    /// e_u².
    pub v_eu: f64,
    /// v_z + v_eu.
    pub w: f64,
}

/// Complete time-indexed record of a run.
#[derive(Debug, Clone)]
pub struct Trace {
    pub n: usize,
    pub t_sample: f64,
    pub records: Vec<StepRecord>,
    pub setpoints: Vec<SetpointStep>,
    /// Step at which integration escaped, when it did.
    pub blowup_step: Option<usize>,
}

/// How the loop produces inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoopMode {
    /// Estimator + dynamic adaptation: the deliverable controller.
    DataDriven,
    /// Static feedback-linearizing input on the true state (ground truth).
    Oracle,
    /// Dynamic adaptation fed exact estimates; isolates the adaptation law.
    ExactEstimates,
}

/// Resolves the gain design from a controller section.
pub fn resolve_gains(cfg: &RunConfig, n: usize) -> Result<GainDesign, SimError> {
    match (&cfg.controller.poles, &cfg.controller.k) {
        (Some(poles), None) => Ok(controller::design_gain(n, poles, None)?),
        (None, Some(k)) => {
            if k.len() != n {
                return Err(SimError::Config(format!(
                    "gain row has {} entries, plant has {} states",
                    k.len(),
                    n
                )));
            }
            Ok(controller::certify_gain(k, None)?)
        }
        (Some(_), Some(_)) => {
            Err(SimError::Config("specify either poles or k, not both".into()))
        }
        (None, None) => Err(SimError::Config("controller needs poles or k".into())),
    }
}

fn validate(plant: &NormalFormPlant, cfg: &RunConfig) -> Result<(), SimError> {
    if !(cfg.horizon > 0.0) {
        return Err(SimError::Config("horizon must be positive".into()));
    }
    if cfg.estimator.sample_time > cfg.horizon {
        return Err(SimError::Config("sample time exceeds horizon".into()));
    }
    if cfg.z0.len() != plant.n() {
        return Err(SimError::Config(format!(
            "z0 has {} entries, plant has {} states",
            cfg.z0.len(),
            plant.n()
        )));
    }
    if !plant.operating_box().contains(&cfg.z0) {
        return Err(SimError::Config("z0 lies outside the operating box".into()));
    }
    if !(cfg.noise.d_bar >= 0.0) {
        return Err(SimError::Config("noise bound must be non-negative".into()));
    }
    if let Some([lo, hi]) = cfg.controller.clamp {
        if !(lo < hi) {
            return Err(SimError::Config("clamp range must satisfy lo < hi".into()));
        }
    }
    Ok(())
}

/// Runs the data-driven closed loop. Deterministic given the seed.
pub fn run(plant: &NormalFormPlant, cfg: &RunConfig) -> Result<Trace, SimError> {
    run_with_mode(plant, cfg, LoopMode::DataDriven)
}

/// Same loop, but the input is the static oracle on the true state.
pub fn run_oracle(plant: &NormalFormPlant, cfg: &RunConfig) -> Result<Trace, SimError> {
    run_with_mode(plant, cfg, LoopMode::Oracle)
}

/// Same loop with the dynamic controller fed exact estimates.
pub fn run_exact_estimates(plant: &NormalFormPlant, cfg: &RunConfig) -> Result<Trace, SimError> {
    run_with_mode(plant, cfg, LoopMode::ExactEstimates)
}

pub fn run_with_mode(
    plant: &NormalFormPlant,
    cfg: &RunConfig,
    mode: LoopMode,
) -> Result<Trace, SimError> {
    validate(plant, cfg)?;
    let n = plant.n();
    let t_sample = cfg.estimator.sample_time;
    let est_cfg = EstimatorConfig::new(n, cfg.estimator.rho, t_sample)?;
    let stack = build_stack(est_cfg)?;
    let design = resolve_gains(cfg, n)?;
    let mut ctrl = ControllerState::new(
        design.k.clone(),
        cfg.controller.gamma,
        cfg.controller.transient_inputs.clone(),
        cfg.estimator.rho,
        plant.beta_sign(),
    )?;
    let mut window = SampleWindow::new(cfg.estimator.rho);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed);
    let substeps = NormalFormPlant::default_substeps(t_sample);
    let steps = (cfg.horizon / t_sample + 1e-9).floor() as usize;

    let mut z = cfg.z0.clone();
    let mut trace = Trace {
        n,
        t_sample,
        records: Vec::with_capacity(steps),
        setpoints: cfg.setpoints.clone(),
        blowup_step: None,
    };

    for k in 0..steps {
        let t = k as f64 * t_sample;
        let r = cfg.setpoint_at(t);
        let d = cfg.noise.d_bar * (2.0 * rng.gen::<f64>() - 1.0);
        let y = z[0] + d;
        window.push(y);

        // Estimates live in setpoint-shifted coordinates: the window is
        // shifted by the current setpoint before the solve.
        let estimate: Option<Estimate> = match mode {
            LoopMode::DataDriven => window.newest_first().map(|mut w| {
                for s in w.iter_mut() {
                    *s -= r;
                }
                stack.estimate(&w, k).map_err(SimError::from)
            }).transpose()?,
            LoopMode::Oracle | LoopMode::ExactEstimates => {
                if window.is_full() {
                    let mut shifted = z.clone();
                    shifted[0] -= r;
                    let lifted = plant.drive(&z, ctrl.held_input());
                    Some(Estimate { z_hat: shifted, lifted_hat: lifted, k })
                } else {
                    None
                }
            }
        };

        let (u_raw, next_ctrl) = match mode {
            LoopMode::Oracle => {
                let mut shifted = z.clone();
                shifted[0] -= r;
                let v = controller::virtual_input(&design.k, &shifted);
                let b = plant.beta(&z);
                if b.abs() < 1e-12 {
                    return Err(SimError::Plant(PlantError::SingularGain { beta0: b }));
                }
                ((-plant.alpha(&z) + v) / b, ctrl.clone())
            }
            LoopMode::DataDriven | LoopMode::ExactEstimates => {
                step_controller(&ctrl, estimate.as_ref())?
            }
        };
        let mut next_ctrl = next_ctrl;
        let u = if let Some([lo, hi]) = cfg.controller.clamp {
            next_ctrl.saturate(lo, hi);
            u_raw.clamp(lo, hi)
        } else {
            u_raw
        };

        // Harness-side diagnostics from ground truth.
        let mut shifted = z.clone();
        shifted[0] -= r;
        let v_of_estimate = estimate
            .as_ref()
            .map(|e| controller::virtual_input(&design.k, &e.z_hat))
            .unwrap_or(f64::NAN);
        let e_u = controller::virtual_input(&design.k, &shifted) - plant.drive(&z, u);
        let v_z = quad_form(&design.p_z, &shifted);
        let v_eu = e_u * e_u;
        trace.records.push(StepRecord {
            k,
            t,
            z: z.clone(),
            y,
            d,
            estimate: estimate.map(|e| {
                let mut out = e.z_hat.clone();
                out[0] += r;
                (out, e.lifted_hat)
            }),
            u,
            v: v_of_estimate,
            e_u,
            v_z,
            v_eu,
            w: v_z + v_eu,
        });

        match plant.flow_exact(&z, u, t_sample, substeps) {
            Ok(next) => z = next,
            Err(e) => {
                trace.blowup_step = Some(k);
                return Err(SimError::BlowUp { steps: k, partial: Box::new(trace), source: e });
            }
        }
        ctrl = next_ctrl;
    }
    Ok(trace)
}

fn quad_form(p: &Matrix, z: &[f64]) -> f64 {
    let pz = p.matvec(z);
    z.iter().zip(&pz).map(|(a, b)| a * b).sum()
}

/// Formats a float with 17 significant digits, enough to round-trip f64.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.16e}")
    }
}

impl Trace {
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["k".to_string(), "t".to_string()];
        for i in 1..=self.n {
            cols.push(format!("z{i}"));
        }
        cols.push("y".into());
        cols.push("d".into());
        for i in 1..=self.n + 1 {
            cols.push(format!("zhat{i}"));
        }
        cols.extend(["u", "v", "e_u", "Vz", "Veu", "W"].map(String::from));
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.csv_header())?;
        for r in &self.records {
            let mut fields = vec![r.k.to_string(), fmt_g17(r.t)];
            fields.extend(r.z.iter().map(|v| fmt_g17(*v)));
            fields.push(fmt_g17(r.y));
            fields.push(fmt_g17(r.d));
            match &r.estimate {
                Some((z_hat, lifted)) => {
                    fields.extend(z_hat.iter().map(|v| fmt_g17(*v)));
                    fields.push(fmt_g17(*lifted));
                }
                None => {
                    for _ in 0..self.n + 1 {
                        fields.push("NaN".to_string());
                    }
                }
            }
            fields.push(fmt_g17(r.u));
            fields.push(fmt_g17(r.v));
            fields.push(fmt_g17(r.e_u));
            fields.push(fmt_g17(r.v_z));
            fields.push(fmt_g17(r.v_eu));
            fields.push(fmt_g17(r.w));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to vec");
        String::from_utf8(buf).expect("valid utf8")
    }

    pub fn setpoint_at(&self, t: f64) -> f64 {
        let mut r = 0.0;
        for s in &self.setpoints {
            if s.time <= t {
                r = s.value;
            }
        }
        r
    }

    /// ‖z - (r, 0, …)‖ at a record.
    pub fn shifted_norm(&self, rec: &StepRecord) -> f64 {
        let r = self.setpoint_at(rec.t);
        let mut s = (rec.z[0] - r) * (rec.z[0] - r);
        for v in &rec.z[1..] {
            s += v * v;
        }
        s.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;

    fn di_config() -> RunConfig {
        let mut cfg = scenarios::preset("double-integrator").unwrap();
        cfg.horizon = 20.0;
        cfg
    }

    #[test]
    fn oracle_double_integrator_converges() {
        let plant = scenarios::plant("double-integrator").unwrap();
        let mut cfg = di_config();
        cfg.controller.poles = None;
        cfg.controller.k = Some(vec![-1.0, -1.0]);
        cfg.z0 = vec![1.0, 0.0];
        let trace = run_oracle(&plant, &cfg).unwrap();
        let last = trace.records.last().unwrap();
        let norm = last.z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "terminal norm {norm:.3e}");
    }

    #[test]
    fn oracle_input_is_kz_for_integrator_chain() {
        let plant = scenarios::plant("double-integrator").unwrap();
        let cfg = di_config();
        let trace = run_oracle(&plant, &cfg).unwrap();
        let design = resolve_gains(&cfg, 2).unwrap();
        for rec in &trace.records {
            let expect = design.k[0] * rec.z[0] + design.k[1] * rec.z[1];
            assert!((rec.u - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn equilibrium_start_stays_at_origin() {
        let plant = scenarios::plant("drone-emulated").unwrap();
        let mut cfg = scenarios::preset("drone-emulated").unwrap();
        cfg.z0 = vec![0.0, 0.0];
        cfg.setpoints.clear();
        cfg.noise.d_bar = 0.0;
        cfg.horizon = 1.0;
        let trace = run_oracle(&plant, &cfg).unwrap();
        let u0 = plant.equilibrium_input().unwrap();
        for rec in &trace.records {
            assert!((rec.u - u0).abs() < 1e-9, "input drifted from hover");
            assert!(trace.shifted_norm(rec) < 1e-8);
        }
    }

    #[test]
    fn traces_are_bit_identical_across_runs() {
        let plant = scenarios::plant("drone-emulated").unwrap();
        let mut cfg = scenarios::preset("drone-emulated").unwrap();
        cfg.horizon = 0.5;
        cfg.noise.seed = 1234;
        let a = run(&plant, &cfg).unwrap().csv_string();
        let b = run(&plant, &cfg).unwrap().csv_string();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let plant = scenarios::plant("drone-emulated").unwrap();
        let mut cfg = scenarios::preset("drone-emulated").unwrap();
        cfg.horizon = 0.5;
        cfg.noise.seed = 1;
        let a = run(&plant, &cfg).unwrap().csv_string();
        cfg.noise.seed = 2;
        let b = run(&plant, &cfg).unwrap().csv_string();
        assert_ne!(a, b);
    }

    #[test]
    fn header_matches_layout() {
        let plant = scenarios::plant("double-integrator").unwrap();
        let mut cfg = di_config();
        cfg.horizon = 0.2;
        let trace = run(&plant, &cfg).unwrap();
        assert_eq!(
            trace.csv_header(),
            "k,t,z1,z2,y,d,zhat1,zhat2,zhat3,u,v,e_u,Vz,Veu,W"
        );
        let csv = trace.csv_string();
        assert_eq!(csv.lines().count(), trace.records.len() + 1);
    }

    #[test]
    fn estimates_missing_during_transient_only() {
        let plant = scenarios::plant("drone-emulated").unwrap();
        let mut cfg = scenarios::preset("drone-emulated").unwrap();
        cfg.horizon = 0.1;
        cfg.noise.d_bar = 0.0;
        let trace = run(&plant, &cfg).unwrap();
        let rho = cfg.estimator.rho;
        for rec in &trace.records {
            assert_eq!(rec.estimate.is_none(), rec.k < rho - 1, "at k = {}", rec.k);
        }
    }

    #[test]
    fn blow_up_carries_partial_trace() {
        let plant = scenarios::plant("drone-emulated").unwrap();
        let mut cfg = scenarios::preset("drone-emulated").unwrap();
        cfg.setpoints.clear();
        cfg.estimator.sample_time = 0.5;
        cfg.horizon = 15.0;
        cfg.noise.d_bar = 0.0;
        match run(&plant, &cfg) {
            Err(SimError::BlowUp { partial, .. }) => {
                assert!(!partial.records.is_empty());
            }
            Ok(trace) => {
                // If it survives the huge sample time, the certificate must
                // at least be violated; checked in the analysis tests.
                assert!(!trace.records.is_empty());
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = scenarios::preset("drone-emulated").unwrap();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn bad_configs_rejected() {
        let plant = scenarios::plant("double-integrator").unwrap();
        let mut cfg = di_config();
        cfg.z0 = vec![100.0, 0.0];
        assert!(matches!(run(&plant, &cfg), Err(SimError::Config(_))));

        let mut cfg = di_config();
        cfg.horizon = -1.0;
        assert!(matches!(run(&plant, &cfg), Err(SimError::Config(_))));

        let mut cfg = di_config();
        cfg.controller.k = Some(vec![-1.0, -1.0]);
        assert!(matches!(run(&plant, &cfg), Err(SimError::Config(_))));
    }
}
