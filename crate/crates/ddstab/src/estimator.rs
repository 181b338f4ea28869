//! Finite-time state estimation from a window of output samples: stacks the
//! last ρ outputs against powers of the inverted lift matrix and solves the
//! resulting overdetermined system by least squares, recovering the n chain
//! states plus the lifted drive estimate in one shot.
//!
//! The pseudo-inverse is precomputed once per (n, ρ, T); each estimate is then
//! a single matrix-vector product. Its second row carries 1/T gains, its third
//! 1/T² and so on, which is what makes the estimate noise-sensitive at small
//! sample times.

use std::collections::VecDeque;

use thiserror::Error;

use crate::numerics::{self, pseudo_inverse, Matrix, DEFAULT_COND_THRESHOLD};
use crate::simloop::{self, RunConfig};
use crate::plant::NormalFormPlant;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("window length rho = {rho} must be at least n + 1 = {min}")]
    WindowTooShort { rho: usize, min: usize },
    #[error("sample time must be positive, got {0}")]
    BadSampleTime(f64),
    #[error("observability stack is ill-conditioned: {source}")]
    IllConditioned {
        #[source]
        source: numerics::NumericsError,
    },
    #[error("window holds {got} samples, expected {expected}")]
    WindowLength { got: usize, expected: usize },
    #[error("non-finite sample in window")]
    NonFiniteSample,
    #[error(transparent)]
    Sim(Box<simloop::SimError>),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
}

impl From<simloop::SimError> for EstimatorError {
    fn from(e: simloop::SimError) -> Self {
        EstimatorError::Sim(Box::new(e))
    }
}

/// Window length ρ and sample time for a relative-degree-n estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub n: usize,
    pub rho: usize,
    pub t_sample: f64,
}

impl EstimatorConfig {
    pub fn new(n: usize, rho: usize, t_sample: f64) -> Result<Self, EstimatorError> {
        if rho < n + 1 {
            return Err(EstimatorError::WindowTooShort { rho, min: n + 1 });
        }
        if !(t_sample > 0.0) {
            return Err(EstimatorError::BadSampleTime(t_sample));
        }
        Ok(EstimatorConfig { n, rho, t_sample })
    }
}

/// Precomputed observability rows `C·A^(-j)` and their pseudo-inverse.
#[derive(Debug, Clone)]
pub struct ObservabilityStack {
    cfg: EstimatorConfig,
    o: Matrix,
    pinv: Matrix,
}

/// State estimate at sample `k`: the n chain states plus the lifted drive.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    /// Estimated chain state, length n.
    pub z_hat: Vec<f64>,
    /// Estimate of the drive α + βu treated as the extra lifted state.
    pub lifted_hat: f64,
    /// Sample index the estimate refers to.
    pub k: usize,
}

/// Builds the stack for the pair (A⁻¹, C). Row j is `C·A^(-j)`, which in
/// closed form is `(1, -jT, (jT)²/2, …)`; row 0 is C itself.
pub fn build_stack(cfg: EstimatorConfig) -> Result<ObservabilityStack, EstimatorError> {
    let dim = cfg.n + 1;
    let o = Matrix::from_fn(cfg.rho, dim, |j, m| {
        let x = -(j as f64) * cfg.t_sample;
        let mut c = 1.0;
        for i in 1..=m {
            c *= x / i as f64;
        }
        c
    });
    let pinv = pseudo_inverse(&o, DEFAULT_COND_THRESHOLD)
        .map_err(|source| EstimatorError::IllConditioned { source })?;
    Ok(ObservabilityStack { cfg, o, pinv })
}

impl ObservabilityStack {
    pub fn cfg(&self) -> EstimatorConfig {
        self.cfg
    }

    pub fn observability_matrix(&self) -> &Matrix {
        &self.o
    }

    pub fn pinv(&self) -> &Matrix {
        &self.pinv
    }

    /// Least-squares estimate from `window`, ordered newest first:
    /// `y(k), y(k-1), …, y(k-ρ+1)`.
    pub fn estimate(&self, window: &[f64], k: usize) -> Result<Estimate, EstimatorError> {
        if window.len() != self.cfg.rho {
            return Err(EstimatorError::WindowLength { got: window.len(), expected: self.cfg.rho });
        }
        if window.iter().any(|y| !y.is_finite()) {
            return Err(EstimatorError::NonFiniteSample);
        }
        let z = self.pinv.matvec(window);
        Ok(Estimate { z_hat: z[..self.cfg.n].to_vec(), lifted_hat: z[self.cfg.n], k })
    }
}

/// Rolling output window. Until ρ samples have arrived no estimate exists and
/// [`SampleWindow::newest_first`] reports that explicitly by returning `None`.
#[derive(Debug, Clone)]
pub struct SampleWindow {
    buf: VecDeque<f64>,
    rho: usize,
}

impl SampleWindow {
    pub fn new(rho: usize) -> Self {
        SampleWindow { buf: VecDeque::with_capacity(rho), rho }
    }

    pub fn push(&mut self, y: f64) {
        if self.buf.len() == self.rho {
            self.buf.pop_front();
        }
        self.buf.push_back(y);
    }

    pub fn is_full(&self) -> bool {
        self.buf.len() == self.rho
    }

    /// Samples ordered `y(k), y(k-1), …`; `None` while the window is filling.
    pub fn newest_first(&self) -> Option<Vec<f64>> {
        if !self.is_full() {
            return None;
        }
        Some(self.buf.iter().rev().copied().collect())
    }
}

/// Result of the closed-loop estimation-error scaling study.
#[derive(Debug, Clone)]
pub struct EstimationErrorStudy {
    /// (T, sup error of the n state components) for noise-free runs.
    pub points_clean: Vec<(f64, f64)>,
    /// (T, sup error of all n+1 lifted components over the run tail) under
    /// fixed noise, maximized over seeds.
    pub points_noise: Vec<(f64, f64)>,
    pub slope_clean: f64,
    pub slope_noise: f64,
}

/// Sweeps the sample time in closed loop and fits the decay/growth orders of
/// the estimation error.
///
/// The noise-free measurement uses the n state components of e_z (their error
/// shrinks with T); the noisy measurement includes the lifted component,
/// whose window gain grows as T^(-n) and dominates once noise is present, and
/// is taken over the second half of each run where the input adaptation has
/// settled.
pub fn estimation_error_study(
    plant: &NormalFormPlant,
    base: &RunConfig,
    t_list: &[f64],
    d_bar: f64,
    seeds: &[u64],
) -> Result<EstimationErrorStudy, EstimatorError> {
    assert!(t_list.len() >= 4, "need at least 4 sample times");
    assert!(!seeds.is_empty());
    let mut points_clean = Vec::with_capacity(t_list.len());
    let mut points_noise = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let mut cfg = base.clone();
        cfg.estimator.sample_time = t;
        cfg.noise.d_bar = 0.0;
        let trace = simloop::run(plant, &cfg)?;
        let errs = state_errors(plant, &trace);
        let sup = errs.iter().fold(0.0f64, |m, &(_, e)| m.max(e));
        points_clean.push((t, sup));

        let mut worst = 0.0f64;
        for &seed in seeds {
            let mut ncfg = cfg.clone();
            ncfg.noise.d_bar = d_bar;
            ncfg.noise.seed = seed;
            let trace = simloop::run(plant, &ncfg)?;
            let errs = lifted_errors(plant, &trace);
            let start = errs.len() / 2;
            let sup = errs[start..].iter().fold(0.0f64, |m, &(_, e)| m.max(e));
            worst = worst.max(sup);
        }
        points_noise.push((t, worst));
    }
    let slope_clean = numerics::loglog_slope(&points_clean)?;
    let slope_noise = numerics::loglog_slope(&points_noise)?;
    Ok(EstimationErrorStudy { points_clean, points_noise, slope_clean, slope_noise })
}

/// ‖ẑ - z‖ over the n state components, per sample with an estimate.
pub fn state_errors(_plant: &NormalFormPlant, trace: &simloop::Trace) -> Vec<(usize, f64)> {
    trace
        .records
        .iter()
        .filter_map(|r| {
            let (z_hat, _) = r.estimate.as_ref()?;
            let err = r
                .z
                .iter()
                .zip(z_hat)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            Some((r.k, err))
        })
        .collect()
}

/// ‖ẑ - z‖ over all n+1 lifted components; the true lifted state is
/// reconstructed from the plant ground truth as α(z) + β(z)u.
pub fn lifted_errors(plant: &NormalFormPlant, trace: &simloop::Trace) -> Vec<(usize, f64)> {
    trace
        .records
        .iter()
        .filter_map(|r| {
            let (z_hat, lifted_hat) = r.estimate.as_ref()?;
            let mut s: f64 = r
                .z
                .iter()
                .zip(z_hat)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let true_lifted = plant.drive(&r.z, r.u);
            s += (true_lifted - lifted_hat) * (true_lifted - lifted_hat);
            Some((r.k, s.sqrt()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn stack_matches_hand_computed_rows() {
        let cfg = EstimatorConfig::new(2, 3, 1.0).unwrap();
        let stack = build_stack(cfg).unwrap();
        let expect = [
            [1.0, 0.0, 0.0],
            [1.0, -1.0, 0.5],
            [1.0, -2.0, 2.0],
        ];
        for (j, row) in expect.iter().enumerate() {
            for (m, v) in row.iter().enumerate() {
                assert_close(stack.observability_matrix()[(j, m)], *v, 1e-15);
            }
        }
    }

    #[test]
    fn stack_rows_equal_inverse_powers() {
        // Independent route: multiply out A^(-j) numerically and read row 0.
        let cfg = EstimatorConfig::new(2, 5, 0.37).unwrap();
        let stack = build_stack(cfg).unwrap();
        let lift = crate::lift::LinearLift::new(2, 0.37);
        for j in 0..5 {
            let aj = lift.a_inverse_power(j);
            for m in 0..3 {
                assert_close(stack.observability_matrix()[(j, m)], aj[(0, m)], 1e-12);
            }
        }
    }

    #[test]
    fn n1_square_stack_is_its_own_inverse() {
        let cfg = EstimatorConfig::new(1, 2, 1.0).unwrap();
        let stack = build_stack(cfg).unwrap();
        let expect = [[1.0, 0.0], [1.0, -1.0]];
        for j in 0..2 {
            for m in 0..2 {
                assert_close(stack.observability_matrix()[(j, m)], expect[j][m], 1e-15);
                assert_close(stack.pinv()[(j, m)], expect[j][m], 1e-12);
            }
        }
    }

    #[test]
    fn pinv_is_left_inverse_at_experiment_config() {
        let cfg = EstimatorConfig::new(2, 4, 0.0028).unwrap();
        let stack = build_stack(cfg).unwrap();
        let prod = stack.pinv().matmul(stack.observability_matrix());
        let err = prod.sub(&Matrix::identity(3)).max_abs();
        assert!(err <= 1e-9, "pinv·O deviates from identity by {err:.2e}");
    }

    #[test]
    fn constant_window_gives_zero_derivatives() {
        let cfg = EstimatorConfig::new(2, 4, 0.05).unwrap();
        let stack = build_stack(cfg).unwrap();
        let est = stack.estimate(&[2.5; 4], 3).unwrap();
        assert_close(est.z_hat[0], 2.5, 1e-10);
        assert_close(est.z_hat[1], 0.0, 1e-10);
        assert_close(est.lifted_hat, 0.0, 1e-10);
    }

    #[test]
    fn recovers_quadratic_output_exactly() {
        // y(t) = 1 + 2t + 1.5t² sampled at t = 0, -1, -2 relative to k gives
        // the window (1, 0.5, 3) and the lifted state (1, 2, 3).
        let cfg = EstimatorConfig::new(2, 3, 1.0).unwrap();
        let stack = build_stack(cfg).unwrap();
        let window = stack.observability_matrix().matvec(&[1.0, 2.0, 3.0]);
        assert_close(window[0], 1.0, 1e-15);
        assert_close(window[1], 0.5, 1e-15);
        assert_close(window[2], 3.0, 1e-15);
        let est = stack.estimate(&window, 0).unwrap();
        assert_close(est.z_hat[0], 1.0, 1e-10);
        assert_close(est.z_hat[1], 2.0, 1e-10);
        assert_close(est.lifted_hat, 3.0, 1e-10);
    }

    #[test]
    fn exact_recovery_over_config_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &rho in &[3usize, 4, 6] {
            for &t in &[1.0, 0.01] {
                let cfg = EstimatorConfig::new(2, rho, t).unwrap();
                let stack = build_stack(cfg).unwrap();
                for _ in 0..100 {
                    let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
                    let window = stack.observability_matrix().matvec(&z);
                    let est = stack.estimate(&window, 0).unwrap();
                    let scale = 1.0 + z.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let err = est
                        .z_hat
                        .iter()
                        .chain(std::iter::once(&est.lifted_hat))
                        .zip(&z)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    assert!(err <= 1e-9 * scale, "recovery error {err:.2e} at rho={rho}, T={t}");
                }
            }
        }
    }

    #[test]
    fn pinv_rows_scale_like_inverse_powers_of_t() {
        // max|row i| * T^(i-1) stays bounded across a decade of T.
        let mut worst_ratio: f64 = 0.0;
        let mut per_t: Vec<Vec<f64>> = Vec::new();
        let t_values = [0.1, 0.05, 0.02, 0.01];
        for &t in &t_values {
            let cfg = EstimatorConfig::new(2, 4, t).unwrap();
            let stack = build_stack(cfg).unwrap();
            let scaled: Vec<f64> = (0..3)
                .map(|i| {
                    let row_max = (0..4)
                        .map(|j| stack.pinv()[(i, j)].abs())
                        .fold(0.0f64, f64::max);
                    row_max * t.powi(i as i32)
                })
                .collect();
            per_t.push(scaled);
        }
        for i in 0..3 {
            let vals: Vec<f64> = per_t.iter().map(|v| v[i]).collect();
            let hi = vals.iter().fold(0.0f64, |m, v| m.max(*v));
            let lo = vals.iter().fold(f64::INFINITY, |m, v| m.min(*v));
            worst_ratio = worst_ratio.max(hi / lo);
        }
        assert!(worst_ratio < 2.0, "scaled pinv rows drifted by {worst_ratio:.2}x over a decade");
    }

    #[test]
    fn noise_mse_non_increasing_in_window_length() {
        // Common random numbers across rho: longer windows reuse the same
        // noise stream prefix.
        let n = 2;
        let t = 0.02;
        let d_bar = 1e-3;
        let rhos = [3usize, 6, 9, 12];
        let truth = [0.4, -1.2, 2.0];
        let mut mse = Vec::new();
        for &rho in &rhos {
            let cfg = EstimatorConfig::new(n, rho, t).unwrap();
            let stack = build_stack(cfg).unwrap();
            let mut acc = 0.0;
            let seeds = 240;
            for seed in 0..seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let noise: Vec<f64> =
                    (0..12).map(|_| d_bar * (2.0 * rng.gen::<f64>() - 1.0)).collect();
                let mut window = stack.observability_matrix().matvec(&truth);
                for (w, d) in window.iter_mut().zip(&noise) {
                    *w += d;
                }
                let est = stack.estimate(&window, 0).unwrap();
                let err: f64 = est
                    .z_hat
                    .iter()
                    .chain(std::iter::once(&est.lifted_hat))
                    .zip(&truth)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                acc += err;
            }
            mse.push(acc / seeds as f64);
        }
        for w in mse.windows(2) {
            assert!(
                w[1] <= w[0] * 1.05,
                "mean-square error rose with window length: {:?}",
                mse
            );
        }
    }

    #[test]
    fn window_reports_not_ready_until_full() {
        let mut w = SampleWindow::new(3);
        assert!(w.newest_first().is_none());
        w.push(1.0);
        w.push(2.0);
        assert!(w.newest_first().is_none());
        w.push(3.0);
        assert_eq!(w.newest_first().unwrap(), vec![3.0, 2.0, 1.0]);
        w.push(4.0);
        assert_eq!(w.newest_first().unwrap(), vec![4.0, 3.0, 2.0]);
    }

    #[test]
    fn config_validation() {
        assert!(matches!(
            EstimatorConfig::new(2, 2, 0.1),
            Err(EstimatorError::WindowTooShort { .. })
        ));
        assert!(matches!(
            EstimatorConfig::new(2, 3, 0.0),
            Err(EstimatorError::BadSampleTime(_))
        ));
    }

    #[test]
    fn wrong_window_length_rejected() {
        let stack = build_stack(EstimatorConfig::new(2, 4, 0.1).unwrap()).unwrap();
        assert!(matches!(
            stack.estimate(&[1.0, 2.0], 0),
            Err(EstimatorError::WindowLength { got: 2, expected: 4 })
        ));
    }

    proptest! {
        #[test]
        fn prop_estimate_is_linear(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let stack = build_stack(EstimatorConfig::new(2, 5, 0.1).unwrap()).unwrap();
            let y1: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y2: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sum: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a + b).collect();
            let e1 = stack.estimate(&y1, 0).unwrap();
            let e2 = stack.estimate(&y2, 0).unwrap();
            let es = stack.estimate(&sum, 0).unwrap();
            for i in 0..2 {
                prop_assert!((es.z_hat[i] - e1.z_hat[i] - e2.z_hat[i]).abs() < 1e-9);
            }
            prop_assert!((es.lifted_hat - e1.lifted_hat - e2.lifted_hat).abs() < 1e-9);
        }

        #[test]
        fn prop_exact_on_model_consistent_data(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = rng.gen_range(3usize..8);
            let stack = build_stack(EstimatorConfig::new(2, rho, 0.05).unwrap()).unwrap();
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let window = stack.observability_matrix().matvec(&z);
            let est = stack.estimate(&window, 0).unwrap();
            let scale = 1.0 + z.iter().map(|v| v*v).sum::<f64>().sqrt();
            prop_assert!((est.z_hat[0] - z[0]).abs() < 1e-9 * scale);
            prop_assert!((est.z_hat[1] - z[1]).abs() < 1e-9 * scale);
            prop_assert!((est.lifted_hat - z[2]).abs() < 1e-9 * scale);
        }
    }
}
