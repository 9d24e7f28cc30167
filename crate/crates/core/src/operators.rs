//! Nodal Nemytskii operators: drift `F`, its diagonal Jacobian, the
//! Rosenbrock remainder and the multiplicative noise coefficient.
//!
//! Sign convention: the equation is `dX + [A X + F(X)] dt = B(X) dW`, so a
//! reaction `−κX/(1+X)` on the right-hand side is `F(u) = κu/(1+u)` here.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::noise::NoiseKind;
use crate::sparse::CsrMatrix;

/// Built-in pointwise drift functions `f(x, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Drift {
    /// `κ u / (1 + u)`.
    ReactiveFraction { coefficient: f64 },
    /// `c u`.
    Linear { c: f64 },
    /// `α + c u`.
    Affine { alpha: f64, c: f64 },
    Zero,
}

impl Default for Drift {
    fn default() -> Self {
        Drift::ReactiveFraction { coefficient: 10.0 }
    }
}

impl Drift {
    pub fn value(&self, _x: [f64; 2], u: f64) -> f64 {
        match *self {
            Drift::ReactiveFraction { coefficient } => coefficient * u / (1.0 + u),
            Drift::Linear { c } => c * u,
            Drift::Affine { alpha, c } => alpha + c * u,
            Drift::Zero => 0.0,
        }
    }

    pub fn derivative(&self, _x: [f64; 2], u: f64) -> f64 {
        match *self {
            Drift::ReactiveFraction { coefficient } => coefficient / ((1.0 + u) * (1.0 + u)),
            Drift::Linear { c } | Drift::Affine { c, .. } => c,
            Drift::Zero => 0.0,
        }
    }

    /// Bound on `|f_u|` over the admissible states (`u ≥ 0` for the reactive
    /// fraction, where it is attained at `u = 0`).
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match *self {
            Drift::ReactiveFraction { coefficient } => Some(coefficient.abs()),
            Drift::Linear { c } | Drift::Affine { c, .. } => Some(c.abs()),
            Drift::Zero => Some(0.0),
        }
    }

    fn check_state(&self, u: f64) -> Result<()> {
        if !u.is_finite() {
            return Err(Error::NumericalDomain(format!("non-finite state value {u}")));
        }
        if matches!(self, Drift::ReactiveFraction { .. }) && u == -1.0 {
            return Err(Error::NumericalDomain("reactive fraction is singular at u = -1".into()));
        }
        Ok(())
    }
}

/// A drift together with the coercivity shift `c0` it compensates:
/// `F(u) = f(u) − c0 u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftSpec {
    pub drift: Drift,
    pub shift: f64,
}

impl DriftSpec {
    pub fn new(drift: Drift) -> Self {
        Self { drift, shift: 0.0 }
    }

    pub fn with_shift(drift: Drift, shift: f64) -> Self {
        Self { drift, shift }
    }
}

/// Pointwise noise coefficient `b(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiffusionSpec {
    pub kind: NoiseKind,
}

impl DiffusionSpec {
    pub fn coefficient(&self, u: f64) -> f64 {
        match self.kind {
            NoiseKind::Additive => 1.0,
            NoiseKind::Multiplicative => u,
        }
    }
}

/// `M + Δt (K + M_lump diag(J))`.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub matrix: CsrMatrix,
    pub dt: f64,
    pub jacobian_diag: Vec<f64>,
}

/// Nodal values `f(x_n, u_n) − c0 u_n`.
pub fn eval_f(u: &[f64], spec: &DriftSpec, points: &[[f64; 2]]) -> Result<Vec<f64>> {
    check_len(points.len(), u.len())?;
    u.iter()
        .zip(points)
        .map(|(&un, &x)| {
            spec.drift.check_state(un)?;
            Ok(spec.drift.value(x, un) - spec.shift * un)
        })
        .collect()
}

/// Nodal values `f_u(x_n, u_n) − c0`.
pub fn eval_jacobian(u: &[f64], spec: &DriftSpec, points: &[[f64; 2]]) -> Result<Vec<f64>> {
    check_len(points.len(), u.len())?;
    u.iter()
        .zip(points)
        .map(|(&un, &x)| {
            spec.drift.check_state(un)?;
            Ok(spec.drift.derivative(x, un) - spec.shift)
        })
        .collect()
}

/// `G(u) = −F(u) + J ⊙ u`, with `J` taken at the linearization point.
pub fn eval_remainder(u: &[f64], jacobian: &[f64], spec: &DriftSpec, points: &[[f64; 2]]) -> Result<Vec<f64>> {
    check_len(u.len(), jacobian.len())?;
    let f = eval_f(u, spec, points)?;
    Ok(f.iter()
        .zip(jacobian.iter().zip(u))
        .map(|(fv, (j, un))| -fv + j * un)
        .collect())
}

/// Nodal `b(u_n) ΔW_n`.
pub fn eval_b_increment(u: &[f64], dw: &[f64], spec: &DiffusionSpec) -> Result<Vec<f64>> {
    check_len(u.len(), dw.len())?;
    Ok(match spec.kind {
        NoiseKind::Additive => dw.to_vec(),
        NoiseKind::Multiplicative => u.iter().zip(dw).map(|(&un, &w)| spec.coefficient(un) * w).collect(),
    })
}

pub fn build_linearized_system(
    mass: &CsrMatrix,
    stiffness: &CsrMatrix,
    lumped_mass: &[f64],
    jacobian: &[f64],
    dt: f64,
) -> Result<LinearizedSystem> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    check_len(mass.nrows(), lumped_mass.len())?;
    check_len(mass.nrows(), jacobian.len())?;
    let mut matrix = CsrMatrix::linear_combination(&[(1.0, mass), (dt, stiffness)])?;
    let diag: Vec<f64> = lumped_mass.iter().zip(jacobian).map(|(m, j)| dt * m * j).collect();
    matrix.add_to_diagonal(&diag)?;
    Ok(LinearizedSystem {
        matrix,
        dt,
        jacobian_diag: jacobian.to_vec(),
    })
}
