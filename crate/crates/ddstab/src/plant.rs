//! Continuous-time SISO plants in feedback-linearized normal form
//! ż₁ = z₂, …, ż_n = α(z) + β(z)u, integrated exactly (to integration
//! tolerance) under inputs held constant over each sampling interval.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Scalar field over the state, shared so plants can be cloned into sweeps.
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("beta changes sign or vanishes on the operating box at z = {at:?}")]
    SignViolation { at: Vec<f64> },
    #[error("non-finite field value on the operating box at z = {at:?}")]
    NonFinite { at: Vec<f64> },
    #[error("operating box must satisfy lower < upper and contain the origin")]
    BadBox,
    #[error("control gain at the origin is numerically zero (beta(0) = {beta0:.3e})")]
    SingularGain { beta0: f64 },
    #[error("trajectory left the inflated operating box after {elapsed:.6}s (state {state:?})")]
    BlowUp { elapsed: f64, state: Vec<f64> },
    #[error("state dimension {got} does not match relative degree {expected}")]
    Dimension { got: usize, expected: usize },
}

/// Axis-aligned state box on which a plant is declared valid.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl OperatingBox {
    /// Requires `lower < upper` componentwise with the origin strictly inside.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, PlantError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(PlantError::BadBox);
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo < hi) || !(*lo < 0.0) || !(*hi > 0.0) {
                return Err(PlantError::BadBox);
            }
        }
        Ok(OperatingBox { lower, upper })
    }

    pub fn symmetric(half_widths: &[f64]) -> Result<Self, PlantError> {
        OperatingBox::new(
            half_widths.iter().map(|w| -w).collect(),
            half_widths.to_vec(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dim()
            && z.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| v.is_finite() && *lo <= *v && *v <= *hi)
    }

    /// Box scaled about its center by `factor`.
    pub fn inflate(&self, factor: f64) -> OperatingBox {
        let lower = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi) - factor * 0.5 * (hi - lo))
            .collect();
        let upper = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi) + factor * 0.5 * (hi - lo))
            .collect();
        OperatingBox { lower, upper }
    }

    /// Evenly spaced grid with `points_per_axis` samples per dimension.
    pub fn grid(&self, points_per_axis: usize) -> Vec<Vec<f64>> {
        assert!(points_per_axis >= 2);
        let n = self.dim();
        let mut out = Vec::with_capacity(points_per_axis.pow(n as u32));
        let mut idx = vec![0usize; n];
        loop {
            let point: Vec<f64> = (0..n)
                .map(|d| {
                    let f = idx[d] as f64 / (points_per_axis - 1) as f64;
                    self.lower[d] + f * (self.upper[d] - self.lower[d])
                })
                .collect();
            out.push(point);
            let mut d = 0;
            loop {
                idx[d] += 1;
                if idx[d] < points_per_axis {
                    break;
                }
                idx[d] = 0;
                d += 1;
                if d == n {
                    return out;
                }
            }
        }
    }
}

/// A plant with declared relative degree `n`, drift `alpha`, control gain
/// `beta` and the (known) sign of `beta`.
///
/// The gain sign is declared, not inferred; construction spot-checks
/// `beta * beta_sign > 0` and finiteness of both fields on a grid over the
/// operating box.
#[derive(Clone)]
pub struct NormalFormPlant {
    n: usize,
    alpha: ScalarField,
    beta: ScalarField,
    beta_sign: f64,
    operating_box: OperatingBox,
}

impl fmt::Debug for NormalFormPlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NormalFormPlant")
            .field("n", &self.n)
            .field("beta_sign", &self.beta_sign)
            .field("operating_box", &self.operating_box)
            .finish()
    }
}

/// Grid density used for the construction-time sign spot check.
const SIGN_CHECK_POINTS: usize = 7;

impl NormalFormPlant {
    pub fn new(
        n: usize,
        alpha: ScalarField,
        beta: ScalarField,
        beta_sign: i8,
        operating_box: OperatingBox,
    ) -> Result<Self, PlantError> {
        assert!(n >= 1, "relative degree must be positive");
        assert!(beta_sign == 1 || beta_sign == -1, "beta_sign must be +1 or -1");
        if operating_box.dim() != n {
            return Err(PlantError::Dimension { got: operating_box.dim(), expected: n });
        }
        let sign = beta_sign as f64;
        for z in operating_box.grid(SIGN_CHECK_POINTS) {
            let a = alpha(&z);
            let b = beta(&z);
            if !a.is_finite() || !b.is_finite() {
                return Err(PlantError::NonFinite { at: z });
            }
            if b * sign <= 0.0 {
                return Err(PlantError::SignViolation { at: z });
            }
        }
        Ok(NormalFormPlant { n, alpha, beta, beta_sign: sign, operating_box })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn beta_sign(&self) -> f64 {
        self.beta_sign
    }

    pub fn operating_box(&self) -> &OperatingBox {
        &self.operating_box
    }

    pub fn alpha(&self, z: &[f64]) -> f64 {
        (self.alpha)(z)
    }

    pub fn beta(&self, z: &[f64]) -> f64 {
        (self.beta)(z)
    }

    /// α(z) + β(z)u, the drive entering the last chain component.
    pub fn drive(&self, z: &[f64], u: f64) -> f64 {
        self.alpha(z) + self.beta(z) * u
    }

    /// Chain vector field: the first n-1 components are shifts by
    /// construction, the last is α + βu.
    fn vector_field(&self, z: &[f64], u: f64, out: &mut [f64]) {
        for i in 0..self.n - 1 {
            out[i] = z[i + 1];
        }
        out[self.n - 1] = self.drive(z, u);
    }

    /// Default substep count for one sampling interval of length `t`.
    pub fn default_substeps(t: f64) -> usize {
        ((t / 1e-3).ceil() as usize).max(4)
    }

    /// State after `t` seconds under the constant input `u`, integrated with
    /// classical fixed-step fourth-order Runge-Kutta using `substeps` steps.
    ///
    /// Fails with [`PlantError::BlowUp`] as soon as an intermediate state
    /// leaves a 10x inflation of the operating box, the sampled-data stand-in
    /// for a finite escape time.
    pub fn flow_exact(
        &self,
        z0: &[f64],
        u: f64,
        t: f64,
        substeps: usize,
    ) -> Result<Vec<f64>, PlantError> {
        assert!(t > 0.0, "flow duration must be positive");
        assert!(substeps >= 1, "need at least one substep");
        if z0.len() != self.n {
            return Err(PlantError::Dimension { got: z0.len(), expected: self.n });
        }
        let guard = self.operating_box.inflate(10.0);
        let h = t / substeps as f64;
        let n = self.n;
        let mut z = z0.to_vec();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut stage = vec![0.0; n];
        for step in 0..substeps {
            self.vector_field(&z, u, &mut k1);
            for i in 0..n {
                stage[i] = z[i] + 0.5 * h * k1[i];
            }
            self.vector_field(&stage, u, &mut k2);
            for i in 0..n {
                stage[i] = z[i] + 0.5 * h * k2[i];
            }
            self.vector_field(&stage, u, &mut k3);
            for i in 0..n {
                stage[i] = z[i] + h * k3[i];
            }
            self.vector_field(&stage, u, &mut k4);
            for i in 0..n {
                z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if !guard.contains(&z) {
                return Err(PlantError::BlowUp { elapsed: h * (step + 1) as f64, state: z });
            }
        }
        Ok(z)
    }

    /// The input holding the origin fixed: -α(0)/β(0).
    pub fn equilibrium_input(&self) -> Result<f64, PlantError> {
        let zero = vec![0.0; self.n];
        let b0 = self.beta(&zero);
        if b0.abs() < 1e-12 {
            return Err(PlantError::SingularGain { beta0: b0 });
        }
        Ok(-self.alpha(&zero) / b0)
    }
}

/// α = 0, β = 1 chain of the given degree; the baseline where the one-step
/// discrete model is exact.
pub fn integrator_chain(n: usize, half_width: f64) -> NormalFormPlant {
    NormalFormPlant::new(
        n,
        Arc::new(|_: &[f64]| 0.0),
        Arc::new(|_: &[f64]| 1.0),
        1,
        OperatingBox::symmetric(&vec![half_width; n]).unwrap(),
    )
    .unwrap()
}
