//! The control stack: pole placement for the integrator chain with a
//! Lyapunov certificate, the virtual input v = Kz, and the dynamic input
//! adaptation law u(k+1) = u(k) + γ(v(ẑ) - ẑ_lift) that never reads the
//! plant's α, β or true state — its only runtime inputs are its own state and
//! the estimate.

use thiserror::Error;

use crate::estimator::Estimate;
use crate::lift::AffineStep;
use crate::numerics::{self, solve_lyapunov, symmetric_eigenvalues, Matrix};
use crate::plant::{NormalFormPlant, PlantError};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("all desired poles must have strictly negative real part, got {0:?}")]
    UnstablePoles(Vec<f64>),
    #[error("pole list has {got} entries, expected {expected}")]
    PoleCount { got: usize, expected: usize },
    #[error("gain design limited to {max} states, got {n}")]
    DegreeLimit { n: usize, max: usize },
    #[error("Lyapunov certificate failed: {source}")]
    LyapunovFailure {
        #[source]
        source: numerics::NumericsError,
    },
    #[error("controller is active but no estimate was supplied")]
    EstimateMissing,
    #[error("adaptation rate gamma must be positive, got {0}")]
    BadGamma(f64),
    #[error("transient input sequence has {got} entries, expected rho - 1 = {expected}")]
    TransientLength { got: usize, expected: usize },
    #[error(transparent)]
    Plant(#[from] PlantError),
}

/// Virtual gain with its Lyapunov certificate for the continuous chain
/// A₁ + B₁K.
#[derive(Debug, Clone)]
pub struct GainDesign {
    /// Gain row of v = Kz.
    pub k: Vec<f64>,
    /// Symmetric positive-definite solution of the closed-loop Lyapunov
    /// equation with the chosen Q.
    pub p_z: Matrix,
    pub q: Matrix,
    /// Certified decrease rate λ_min(Q).
    pub lambda_z: f64,
}

pub const MAX_DESIGN_DEGREE: usize = 4;

/// Places the closed-loop chain eigenvalues at `poles` by matching
/// characteristic-polynomial coefficients (the chain is already in companion
/// form, so placement is exact), then certifies the result with a Lyapunov
/// solve against `q` (identity when omitted).
pub fn design_gain(
    n: usize,
    poles: &[f64],
    q: Option<Matrix>,
) -> Result<GainDesign, ControllerError> {
    if n == 0 || n > MAX_DESIGN_DEGREE {
        return Err(ControllerError::DegreeLimit { n, max: MAX_DESIGN_DEGREE });
    }
    if poles.len() != n {
        return Err(ControllerError::PoleCount { got: poles.len(), expected: n });
    }
    if poles.iter().any(|p| !(p < &0.0) || !p.is_finite()) {
        return Err(ControllerError::UnstablePoles(poles.to_vec()));
    }
    // Expand prod (s - p_i) into monic coefficients c_0 + c_1 s + ... + s^n.
    let mut coeffs = vec![1.0];
    for &p in poles {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i + 1] += c;
            next[i] += -p * c;
        }
        coeffs = next;
    }
    // Companion last row of A₁ + B₁K is exactly K, so K_i = -c_{i-1}.
    let k: Vec<f64> = (0..n).map(|i| -coeffs[i]).collect();

    let q = q.unwrap_or_else(|| Matrix::identity(n));
    let a_cl = closed_loop_matrix(&k);
    let sol = solve_lyapunov(&a_cl, &q).map_err(|source| ControllerError::LyapunovFailure { source })?;
    let lambda_z = symmetric_eigenvalues(&q).last().copied().unwrap_or(0.0);
    Ok(GainDesign { k, p_z: sol.p, q, lambda_z })
}

/// Certifies an explicitly supplied gain row the same way `design_gain` does.
pub fn certify_gain(k: &[f64], q: Option<Matrix>) -> Result<GainDesign, ControllerError> {
    let n = k.len();
    if n == 0 || n > MAX_DESIGN_DEGREE {
        return Err(ControllerError::DegreeLimit { n, max: MAX_DESIGN_DEGREE });
    }
    let q = q.unwrap_or_else(|| Matrix::identity(n));
    let a_cl = closed_loop_matrix(k);
    let sol = solve_lyapunov(&a_cl, &q).map_err(|source| ControllerError::LyapunovFailure { source })?;
    let lambda_z = symmetric_eigenvalues(&q).last().copied().unwrap_or(0.0);
    Ok(GainDesign { k: k.to_vec(), p_z: sol.p, q, lambda_z })
}

/// A₁ + B₁K for the integrator chain: shift matrix with K as the last row.
pub fn closed_loop_matrix(k: &[f64]) -> Matrix {
    let n = k.len();
    let step = AffineStep::new(n, 1.0);
    let mut a_cl = step.a1().clone();
    for j in 0..n {
        a_cl[(n - 1, j)] += k[j];
    }
    a_cl
}

/// v(ẑ) = K·ẑ, using only the first n entries of the estimate.
pub fn virtual_input(k: &[f64], z_hat: &[f64]) -> f64 {
    k.iter().zip(z_hat).map(|(a, b)| a * b).sum()
}

/// Controller phase: a fixed input sequence while the estimation window
/// fills, then the adaptation law.
#[derive(Debug, Clone, PartialEq)]
pub enum Phase {
    Transient(usize),
    Active,
}

/// Dynamic controller memory, advanced functionally by [`step_controller`].
#[derive(Debug, Clone)]
pub struct ControllerState {
    u: f64,
    gamma: f64,
    k: Vec<f64>,
    transient_inputs: Vec<f64>,
    phase: Phase,
    beta_sign: f64,
}

impl ControllerState {
    /// `transient_inputs` must hold exactly ρ - 1 values; the held input is
    /// initialized to the last of them at the phase switch so the emitted
    /// signal is continuous.
    pub fn new(
        k: Vec<f64>,
        gamma: f64,
        transient_inputs: Vec<f64>,
        rho: usize,
        beta_sign: f64,
    ) -> Result<Self, ControllerError> {
        if !(gamma > 0.0) {
            return Err(ControllerError::BadGamma(gamma));
        }
        if transient_inputs.len() != rho - 1 {
            return Err(ControllerError::TransientLength {
                got: transient_inputs.len(),
                expected: rho - 1,
            });
        }
        let u0 = *transient_inputs.last().expect("rho >= 2 guarantees one transient input");
        Ok(ControllerState {
            u: u0,
            gamma,
            k,
            transient_inputs,
            phase: Phase::Transient(0),
            beta_sign: beta_sign.signum(),
        })
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn gain(&self) -> &[f64] {
        &self.k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Input the controller will emit on the next active step.
    pub fn held_input(&self) -> f64 {
        self.u
    }

    /// Clamps the held input; used when an input range is configured so the
    /// adaptation state tracks what the plant actually received.
    pub fn saturate(&mut self, lo: f64, hi: f64) {
        self.u = self.u.clamp(lo, hi);
    }
}

/// Advances the controller one sample: emits the transient sequence while the
/// window fills, then emits the held input and applies
/// u ← u + γ·sign(β)·(v(ẑ) - ẑ_lift).
pub fn step_controller(
    state: &ControllerState,
    estimate: Option<&Estimate>,
) -> Result<(f64, ControllerState), ControllerError> {
    let mut next = state.clone();
    match state.phase {
        Phase::Transient(step) => {
            let emitted = state.transient_inputs[step];
            if step + 1 == state.transient_inputs.len() {
                next.u = emitted;
                next.phase = Phase::Active;
            } else {
                next.phase = Phase::Transient(step + 1);
            }
            Ok((emitted, next))
        }
        Phase::Active => {
            let est = estimate.ok_or(ControllerError::EstimateMissing)?;
            let emitted = state.u;
            let v = virtual_input(&state.k, &est.z_hat);
            next.u = state.u + state.gamma * state.beta_sign * (v - est.lifted_hat);
            Ok((emitted, next))
        }
    }
}

/// The ideal feedback-linearizing input β(z)⁻¹(-α(z) + Kz) — ground truth for
/// the test harness and oracle runs only; the dynamic controller never sees
/// it.
pub fn static_oracle_input(
    plant: &NormalFormPlant,
    k: &[f64],
    z: &[f64],
) -> Result<f64, ControllerError> {
    let b = plant.beta(z);
    if b.abs() < 1e-12 {
        return Err(ControllerError::Plant(PlantError::SingularGain { beta0: b }));
    }
    Ok((-plant.alpha(z) + virtual_input(k, z)) / b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::integrator_chain;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn gain_examples() {
        let g = design_gain(2, &[-3.0, -3.0], None).unwrap();
        assert_eq!(g.k, vec![-9.0, -6.0]);

        let g = design_gain(1, &[-5.0], None).unwrap();
        assert_eq!(g.k, vec![-5.0]);

        let g = design_gain(3, &[-1.0, -2.0, -3.0], None).unwrap();
        assert_eq!(g.k, vec![-6.0, -11.0, -6.0]);
    }

    #[test]
    fn placed_eigenvalues_match_request() {
        let g = design_gain(3, &[-1.0, -2.0, -3.0], None).unwrap();
        let re = numerics::eig_real_parts(&closed_loop_matrix(&g.k)).unwrap();
        assert_close(re[0], -1.0, 1e-8);
        assert_close(re[1], -2.0, 1e-8);
        assert_close(re[2], -3.0, 1e-8);
    }

    #[test]
    fn unstable_poles_rejected() {
        assert!(matches!(
            design_gain(2, &[1.0, -1.0], None),
            Err(ControllerError::UnstablePoles(_))
        ));
        assert!(matches!(
            design_gain(2, &[0.0, -1.0], None),
            Err(ControllerError::UnstablePoles(_))
        ));
    }

    #[test]
    fn certificate_decrease_rate() {
        let g = design_gain(2, &[-3.0, -3.0], None).unwrap();
        let a_cl = closed_loop_matrix(&g.k);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let z = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let az = a_cl.matvec(&z);
            let paz = g.p_z.matvec(&az);
            // d/dt zᵀPz = 2 zᵀ P A_cl z = -zᵀQz.
            let deriv: f64 = 2.0 * z.iter().zip(&paz).map(|(a, b)| a * b).sum::<f64>();
            let qz = g.q.matvec(&z);
            let zqz: f64 = z.iter().zip(&qz).map(|(a, b)| a * b).sum();
            assert_close(deriv, -zqz, 1e-9);
            let norm2: f64 = z.iter().map(|v| v * v).sum();
            assert!(deriv <= -g.lambda_z * norm2 + 1e-9);
        }
    }

    #[test]
    fn virtual_input_examples() {
        assert_close(virtual_input(&[-9.0, -6.0], &[0.0, 0.0]), 0.0, 0.0);
        assert_close(virtual_input(&[-9.0, -6.0], &[1.0, 0.0]), -9.0, 0.0);
        assert_close(virtual_input(&[-9.0, -6.0], &[0.2, -0.5]), 1.2, 1e-15);
    }

    #[test]
    fn active_update_arithmetic() {
        let mut st =
            ControllerState::new(vec![-1.0, -1.0], 0.1, vec![0.0, 0.5], 3, 1.0).unwrap();
        st.phase = Phase::Active;
        st.u = 0.5;
        // K·ẑ = 2 with ẑ = (-2, 0), lifted estimate 1.
        let est = Estimate { z_hat: vec![-2.0, 0.0], lifted_hat: 1.0, k: 5 };
        let (emitted, next) = step_controller(&st, Some(&est)).unwrap();
        assert_close(emitted, 0.5, 0.0);
        assert_close(next.held_input(), 0.6, 1e-15);
    }

    #[test]
    fn adaptation_fixed_point() {
        let mut st =
            ControllerState::new(vec![-1.0, -1.0], 0.1, vec![0.0, 0.5], 3, 1.0).unwrap();
        st.phase = Phase::Active;
        st.u = 0.37;
        let est = Estimate { z_hat: vec![1.0, 1.0], lifted_hat: -2.0, k: 0 };
        let (_, next) = step_controller(&st, Some(&est)).unwrap();
        assert_close(next.held_input(), 0.37, 0.0);
    }

    #[test]
    fn transient_sequence_then_switch() {
        let st = ControllerState::new(vec![-9.0, -6.0], 0.002, vec![1.0, 1.5, 2.0], 4, 1.0)
            .unwrap();
        let (u0, st1) = step_controller(&st, None).unwrap();
        assert_close(u0, 1.0, 0.0);
        assert_eq!(*st1.phase(), Phase::Transient(1));
        let (u1, st2) = step_controller(&st1, None).unwrap();
        assert_close(u1, 1.5, 0.0);
        let (u2, st3) = step_controller(&st2, None).unwrap();
        assert_close(u2, 2.0, 0.0);
        assert_eq!(*st3.phase(), Phase::Active);
        // Held input starts at the last transient value: continuous signal.
        assert_close(st3.held_input(), 2.0, 0.0);
        assert!(matches!(
            step_controller(&st3, None),
            Err(ControllerError::EstimateMissing)
        ));
    }

    #[test]
    fn sandbox_contraction_is_exactly_geometric() {
        // Constant (α, β), exact estimates, frozen virtual target: the input
        // error obeys e_u(k+1) = (1 - βγ) e_u(k) exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let beta = rng.gen_range(0.2..5.0);
            let gamma = rng.gen_range(0.05..0.95) / beta;
            assert!(beta * gamma > 0.0 && beta * gamma < 1.0);
            let alpha = rng.gen_range(-2.0..2.0);
            let v_target = rng.gen_range(-3.0..3.0);
            let z_frozen = vec![v_target, 0.0];
            let k_gain = vec![1.0, 0.0];

            let mut st =
                ControllerState::new(k_gain.clone(), gamma, vec![0.0, 0.0], 3, 1.0).unwrap();
            st.phase = Phase::Active;
            st.u = rng.gen_range(-1.0..1.0);
            let mut e_prev = v_target - (alpha + beta * st.u);
            for _ in 0..40 {
                let est = Estimate {
                    z_hat: z_frozen.clone(),
                    lifted_hat: alpha + beta * st.held_input(),
                    k: 0,
                };
                let (_, next) = step_controller(&st, Some(&est)).unwrap();
                st = next;
                let e = v_target - (alpha + beta * st.held_input());
                let expected = (1.0 - beta * gamma) * e_prev;
                assert!(
                    (e - expected).abs() <= 1e-10 * (1.0 + expected.abs()),
                    "contraction not geometric: {e} vs {expected}"
                );
                e_prev = e;
            }
        }
    }

    #[test]
    fn oracle_input_examples() {
        let di = integrator_chain(2, 10.0);
        let u = static_oracle_input(&di, &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_close(u, -2.0, 1e-15);

        let drone = crate::scenarios::plant("drone-emulated").unwrap();
        let u0 = drone.equilibrium_input().unwrap();
        let at_origin = static_oracle_input(&drone, &[-9.0, -6.0], &[0.0, 0.0]).unwrap();
        assert_close(at_origin, u0, 1e-12);

        let z = [0.5, 0.0];
        let expect = (-drone.alpha(&z) - 4.5) / drone.beta(&z);
        let got = static_oracle_input(&drone, &[-9.0, -6.0], &z).unwrap();
        assert_close(got, expect, 1e-12);
    }

    #[test]
    fn transient_length_must_match_window() {
        assert!(matches!(
            ControllerState::new(vec![-1.0], 0.1, vec![0.0, 0.0], 4, 1.0),
            Err(ControllerError::TransientLength { got: 2, expected: 3 })
        ));
    }

    #[test]
    fn gamma_safety_for_presets() {
        // γ < 1/max β over the operating box for every shipped preset.
        for name in crate::scenarios::PRESET_NAMES {
            let plant = crate::scenarios::plant(name).unwrap();
            let cfg = crate::scenarios::preset(name).unwrap();
            let beta_max = plant
                .operating_box()
                .grid(9)
                .iter()
                .map(|z| plant.beta(z).abs())
                .fold(0.0f64, f64::max);
            assert!(
                cfg.controller.gamma * beta_max < 1.0,
                "preset {name}: gamma {} too large for beta_max {beta_max}",
                cfg.controller.gamma
            );
        }
    }
}
