//! Discrete-time approximate models indexed by the sample time `T`: the
//! one-step affine prediction of the chain, the (n+1)-state linear lift that
//! treats α + βu as a constant extra state, and remainder probing of the
//! one-step prediction against the exact flow.

use thiserror::Error;

use crate::numerics::{self, loglog_slope, Matrix};
use crate::plant::{NormalFormPlant, PlantError};

#[derive(Debug, Error)]
pub enum LiftError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error("remainder study needs at least {need} sample times, got {got}")]
    TooFewSampleTimes { need: usize, got: usize },
}

/// T^k / k!.
fn taylor_coeff(t: f64, k: usize) -> f64 {
    let mut c = 1.0;
    for i in 1..=k {
        c *= t / i as f64;
    }
    c
}

/// The (n+1)-state linear lift `z(k+1) = A z(k)`, `y = C z(k)` obtained by
/// treating the chain drive as a constant extra state.
///
/// `A[i][j] = T^(j-i)/(j-i)!` for `j >= i`: upper triangular with unit
/// diagonal, hence always invertible, and the inverse is the same matrix
/// evaluated at `-T`.
#[derive(Debug, Clone)]
pub struct LinearLift {
    n: usize,
    t_sample: f64,
    a: Matrix,
    c: Vec<f64>,
}

impl LinearLift {
    pub fn new(n: usize, t_sample: f64) -> Self {
        assert!(n >= 1 && t_sample > 0.0);
        let dim = n + 1;
        let a = Matrix::from_fn(dim, dim, |i, j| {
            if j >= i {
                taylor_coeff(t_sample, j - i)
            } else {
                0.0
            }
        });
        let mut c = vec![0.0; dim];
        c[0] = 1.0;
        LinearLift { n, t_sample, a, c }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t_sample(&self) -> f64 {
        self.t_sample
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// Closed-form inverse: the lift evaluated at `-T`.
    pub fn a_inverse(&self) -> Matrix {
        let dim = self.n + 1;
        Matrix::from_fn(dim, dim, |i, j| {
            if j >= i {
                taylor_coeff(-self.t_sample, j - i)
            } else {
                0.0
            }
        })
    }

    /// `A^(-j)`, again in closed form.
    pub fn a_inverse_power(&self, j: usize) -> Matrix {
        let dim = self.n + 1;
        let t = -(j as f64) * self.t_sample;
        Matrix::from_fn(dim, dim, |r, c| if c >= r { taylor_coeff(t, c - r) } else { 0.0 })
    }
}

/// One-step affine decomposition of the n-state chain:
/// `z(k+1) = A_z z(k) + B_T v` with `A_z = I + A₁T + …` and
/// `B_T[i] = T^(n-i+1)/(n-i+1)!` (1-indexed rows).
#[derive(Debug, Clone)]
pub struct AffineStep {
    n: usize,
    t_sample: f64,
    a_z: Matrix,
    b: Vec<f64>,
    a1: Matrix,
    b1: Vec<f64>,
}

impl AffineStep {
    pub fn new(n: usize, t_sample: f64) -> Self {
        assert!(n >= 1 && t_sample > 0.0);
        let a_z = Matrix::from_fn(n, n, |i, j| {
            if j >= i {
                taylor_coeff(t_sample, j - i)
            } else {
                0.0
            }
        });
        let b: Vec<f64> = (0..n).map(|i| taylor_coeff(t_sample, n - i)).collect();
        let a1 = Matrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
        let mut b1 = vec![0.0; n];
        b1[n - 1] = 1.0;
        let step = AffineStep { n, t_sample, a_z, b, a1, b1 };
        debug_assert!(step.controllable_pair_rank() == n);
        step
    }

    pub fn a_z(&self) -> &Matrix {
        &self.a_z
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Continuous-time chain matrix A₁ (pure shift).
    pub fn a1(&self) -> &Matrix {
        &self.a1
    }

    /// Continuous-time input vector B₁ (last unit vector).
    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn t_sample(&self) -> f64 {
        self.t_sample
    }

    /// Rank of [B₁ A₁B₁ … A₁^(n-1)B₁]; equals n for the chain.
    pub fn controllable_pair_rank(&self) -> usize {
        let n = self.n;
        let mut ctrb = Matrix::zeros(n, n);
        let mut col = self.b1.clone();
        for j in 0..n {
            for i in 0..n {
                ctrb[(i, j)] = col[i];
            }
            col = self.a1.matvec(&col);
        }
        // Columns are unit vectors e_n, e_{n-1}, ...; count distinct hits.
        let mut rank = 0;
        for i in 0..n {
            if (0..n).any(|j| ctrb[(i, j)].abs() > 0.5) {
                rank += 1;
            }
        }
        rank
    }

    /// Affine one-step prediction given the drive value w = α + βu.
    pub fn predict(&self, z: &[f64], w: f64) -> Vec<f64> {
        let mut out = self.a_z.matvec(z);
        for (o, b) in out.iter_mut().zip(&self.b) {
            *o += b * w;
        }
        out
    }
}

/// One step of the Taylor-truncated approximate model: each chain component
/// advances by its shift terms plus the drive α(z) + β(z)u entering through
/// the remaining Taylor coefficients.
pub fn approx_step(plant: &NormalFormPlant, z: &[f64], u: f64, t_sample: f64) -> Vec<f64> {
    assert!(t_sample > 0.0);
    let n = plant.n();
    assert_eq!(z.len(), n);
    let w = plant.drive(z, u);
    (0..n)
        .map(|i| {
            let mut v = 0.0;
            for j in i..n {
                v += z[j] * taylor_coeff(t_sample, j - i);
            }
            v + w * taylor_coeff(t_sample, n - i)
        })
        .collect()
}

/// Per-sample-time worst-case gap between exact flow and one-step prediction.
#[derive(Debug, Clone)]
pub struct RemainderPoint {
    pub t_sample: f64,
    /// max over the grid of |F^e_i - F^a_i|, one entry per state component.
    pub max_err: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RemainderStudy {
    pub points: Vec<RemainderPoint>,
    /// log-log slope of the worst-case gap per component; `None` when the
    /// model is exact to round-off for that component.
    pub slopes: Vec<Option<f64>>,
    /// Fitted remainder constants: max over grid and T of
    /// err_i / (T^(n-i+2) ‖(z, u - u₀)‖).
    pub fitted_m: Vec<f64>,
}

/// Measures ‖F^e - F^a‖ component-wise over a (states x inputs) grid for each
/// sample time, and fits the decay order of the worst-case gap.
///
/// The exact flow is evaluated with 10x the default substep count so the
/// integration error stays far below the remainder being measured.
pub fn remainder_study(
    plant: &NormalFormPlant,
    grid_states: &[Vec<f64>],
    grid_inputs: &[f64],
    t_list: &[f64],
) -> Result<RemainderStudy, LiftError> {
    if t_list.len() < 4 {
        return Err(LiftError::TooFewSampleTimes { need: 4, got: t_list.len() });
    }
    let n = plant.n();
    let u0 = plant.equilibrium_input()?;
    let mut points = Vec::with_capacity(t_list.len());
    let mut fitted_m = vec![0.0; n];
    for &t in t_list {
        let substeps = 10 * NormalFormPlant::default_substeps(t);
        let mut max_err = vec![0.0; n];
        for z in grid_states {
            for &u in grid_inputs {
                let exact = plant.flow_exact(z, u, t, substeps)?;
                let approx = approx_step(plant, z, u, t);
                let input_dist = u - u0;
                let scale = (z.iter().map(|v| v * v).sum::<f64>() + input_dist * input_dist)
                    .sqrt()
                    .max(1e-12);
                for i in 0..n {
                    let err = (exact[i] - approx[i]).abs();
                    if err > max_err[i] {
                        max_err[i] = err;
                    }
                    let order = (n - i + 1) as i32;
                    let m = err / (t.powi(order) * scale);
                    if m > fitted_m[i] {
                        fitted_m[i] = m;
                    }
                }
            }
        }
        points.push(RemainderPoint { t_sample: t, max_err });
    }
    let mut slopes = Vec::with_capacity(n);
    for i in 0..n {
        let series: Vec<(f64, f64)> =
            points.iter().map(|p| (p.t_sample, p.max_err[i])).collect();
        // Below ~1e-13 the measured gap is integration round-off, not
        // remainder; report the model as exact instead of fitting noise.
        if series.iter().all(|&(_, e)| e < 1e-13) {
            slopes.push(None);
        } else {
            slopes.push(Some(loglog_slope(&series)?));
        }
    }
    Ok(RemainderStudy { points, slopes, fitted_m })
}
