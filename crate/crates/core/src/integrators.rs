//! Time stepping for `M dX + [K X − g + M_lump F(X)] dt = M_lump B(X) dW`.
//!
//! * [`Scheme::Sros`]: linearly implicit Rosenbrock–Euler. Each step solves
//!   `(M + Δt K + Δt M_lump J_m) X_{m+1} = M X_m + Δt (M_lump G_m(X_m) + g) + M_lump B(X_m) ΔW_m`
//!   with `J_m = F'(X_m)` and `G_m(u) = −F(u) + J_m u`.
//! * [`Scheme::SemiImplicit`]: linear implicit Euler, `F` explicit.
//! * [`Scheme::ExplicitEm`]: Euler–Maruyama with lumped mass.
//! * [`Scheme::ExpoRosenbrock`]: exponential Rosenbrock–Euler with the same
//!   linearization, dense `exp` and `φ1` in place of the resolvent. A
//!   comparison baseline, restricted to small meshes.
//!
//! Noise enters at the left point of each step.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::expm::expm;
use crate::linsolve::{solve_robust, Ilu0, SolveReport, SolverSettings};
use crate::noise::{EigenfunctionTable, NoisePath};
use crate::operators::{eval_b_increment, eval_f, eval_jacobian, eval_remainder};
use crate::problem::SemiDiscreteSystem;
use crate::sparse::{norm2, CsrMatrix};

/// Trajectories whose state norm exceeds this are flagged as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Largest system the dense exponential comparison accepts.
pub const EXPO_SIZE_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Sros,
    SemiImplicit,
    ExplicitEm,
    ExpoRosenbrock,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Sros => "sros",
            Scheme::SemiImplicit => "semi_implicit",
            Scheme::ExplicitEm => "explicit_em",
            Scheme::ExpoRosenbrock => "expo_rosenbrock",
        }
    }

    /// Output label; the exponential scheme is an interpreted baseline.
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::ExpoRosenbrock => "expo_rosenbrock (comparison baseline; interpreted)",
            other => other.name(),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_final: f64,
    pub solver: SolverSettings,
    pub keep_history: bool,
}

impl SchemeConfig {
    pub fn new(scheme: Scheme, dt: f64, t_final: f64) -> Self {
        Self {
            scheme,
            dt,
            t_final,
            solver: SolverSettings::default(),
            keep_history: false,
        }
    }

    /// `T / Δt`, which must be a non-negative integer.
    pub fn n_steps(&self) -> Result<usize> {
        step_count(self.t_final, self.dt)
    }
}

pub fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!("final time must be non-negative, got {t_final}")));
    }
    let ratio = t_final / dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "final time {t_final} is not an integer multiple of dt = {dt}"
        )));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Full history when requested, including the initial state.
    pub states: Option<Vec<Vec<f64>>>,
    pub final_state: Vec<f64>,
    /// One report per step (trivial for the solver-free schemes).
    pub diagnostics: Vec<SolveReport>,
    /// Step after which the state left the admissible range.
    pub diverged_at: Option<usize>,
    pub elapsed_s: f64,
}

impl Trajectory {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn total_iterations(&self) -> usize {
        self.diagnostics.iter().map(|r| r.iterations).sum()
    }
}

/// Dense data for the exponential comparison scheme.
#[derive(Debug, Clone)]
struct ExpoData {
    mass_inv: DMatrix<f64>,
    /// `M⁻¹ K`.
    generator: DMatrix<f64>,
}

/// Step-size dependent data shared by every step and every realization:
/// the matrix `M + Δt K` and its ILU(0) factors.
#[derive(Debug, Clone)]
pub struct StepContext<'a> {
    pub system: &'a SemiDiscreteSystem,
    pub dt: f64,
    pub settings: SolverSettings,
    base: CsrMatrix,
    ilu: Option<Ilu0>,
    /// `M + Δt (K − c0 M_lump)` when the system carries a shift.
    unshifted: Option<(CsrMatrix, Option<Ilu0>)>,
    expo: Option<ExpoData>,
}

impl<'a> StepContext<'a> {
    pub fn new(system: &'a SemiDiscreteSystem, dt: f64, settings: SolverSettings) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let base = CsrMatrix::linear_combination(&[(1.0, &system.mass), (dt, &system.stiffness)])?;
        // A failed factorization leaves the solver unpreconditioned.
        let ilu = if settings.use_ilu { Ilu0::new(&base).ok() } else { None };
        let shift = system.drift.shift;
        let unshifted = if shift != 0.0 {
            let mut a = base.clone();
            let diag: Vec<f64> = system.lumped_mass.iter().map(|m| -dt * shift * m).collect();
            a.add_to_diagonal(&diag)?;
            let ilu = if settings.use_ilu { Ilu0::new(&a).ok() } else { None };
            Some((a, ilu))
        } else {
            None
        };
        Ok(Self {
            system,
            dt,
            settings,
            base,
            ilu,
            unshifted,
            expo: None,
        })
    }

    /// Also prepares the dense data needed by [`Scheme::ExpoRosenbrock`].
    pub fn with_exponential(mut self) -> Result<Self> {
        let n = self.system.dim();
        if n > EXPO_SIZE_LIMIT {
            return Err(Error::Unsupported(format!(
                "dense exponential scheme limited to {EXPO_SIZE_LIMIT} free nodes, got {n}"
            )));
        }
        let mass_inv = self
            .system
            .mass
            .to_dense()
            .try_inverse()
            .ok_or(Error::SingularMatrix)?;
        let generator = &mass_inv * self.system.stiffness.to_dense();
        self.expo = Some(ExpoData { mass_inv, generator });
        Ok(self)
    }

    pub fn for_scheme(system: &'a SemiDiscreteSystem, scheme: Scheme, dt: f64, settings: SolverSettings) -> Result<Self> {
        let ctx = Self::new(system, dt, settings)?;
        if scheme == Scheme::ExpoRosenbrock {
            ctx.with_exponential()
        } else {
            Ok(ctx)
        }
    }

    /// `M + Δt K`.
    pub fn base_matrix(&self) -> &CsrMatrix {
        &self.base
    }

    pub fn preconditioner(&self) -> Option<&Ilu0> {
        self.ilu.as_ref()
    }

    fn solve(&self, a: &CsrMatrix, rhs: &[f64], guess: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
        solve_robust(a, rhs, self.ilu.as_ref(), &self.settings, Some(guess))
    }

    /// `M u + Δt (M_lump v + g) + M_lump w`.
    fn rhs(&self, u: &[f64], v: &[f64], w: &[f64]) -> Vec<f64> {
        let s = self.system;
        let mut rhs = vec![0.0; u.len()];
        s.mass.mul_vec_into(u, &mut rhs);
        for i in 0..rhs.len() {
            rhs[i] += self.dt * (s.lumped_mass[i] * v[i] + s.lifting[i]) + s.lumped_mass[i] * w[i];
        }
        rhs
    }

    pub fn step(&self, scheme: Scheme, x: &[f64], dw: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
        match scheme {
            Scheme::Sros => self.sros_step(x, dw),
            Scheme::SemiImplicit => self.semi_implicit_step(x, dw),
            Scheme::ExplicitEm => self.explicit_em_step(x, dw).map(|v| (v, trivial_report())),
            Scheme::ExpoRosenbrock => self.expo_rosenbrock_step(x, dw).map(|v| (v, trivial_report())),
        }
    }

    /// One Rosenbrock–Euler step: a single linear solve with the
    /// Jacobian-augmented matrix, preconditioned by ILU(0) of `M + Δt K`.
    pub fn sros_step(&self, x: &[f64], dw: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
        let s = self.system;
        check_len(s.dim(), x.len())?;
        check_len(s.dim(), dw.len())?;
        let jac = eval_jacobian(x, &s.drift, &s.points)?;
        let g = eval_remainder(x, &jac, &s.drift, &s.points)?;
        let noise = eval_b_increment(x, dw, &s.diffusion)?;
        let rhs = self.rhs(x, &g, &noise);
        let mut matrix = self.base.clone();
        let diag: Vec<f64> = s.lumped_mass.iter().zip(&jac).map(|(m, j)| self.dt * m * j).collect();
        matrix.add_to_diagonal(&diag)?;
        self.solve(&matrix, &rhs, x)
    }

    pub fn semi_implicit_step(&self, x: &[f64], dw: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
        let s = self.system;
        check_len(s.dim(), x.len())?;
        check_len(s.dim(), dw.len())?;
        // Only the physical drift is explicit; the shift stays on the implicit side.
        let shift = s.drift.shift;
        let f: Vec<f64> = eval_f(x, &s.drift, &s.points)?
            .into_iter()
            .zip(x)
            .map(|(v, u)| -(v + shift * u))
            .collect();
        let noise = eval_b_increment(x, dw, &s.diffusion)?;
        let rhs = self.rhs(x, &f, &noise);
        match &self.unshifted {
            Some((a, ilu)) => solve_robust(a, &rhs, ilu.as_ref(), &self.settings, Some(x)),
            None => self.solve(&self.base, &rhs, x),
        }
    }

    pub fn explicit_em_step(&self, x: &[f64], dw: &[f64]) -> Result<Vec<f64>> {
        let s = self.system;
        check_len(s.dim(), x.len())?;
        check_len(s.dim(), dw.len())?;
        let f = eval_f(x, &s.drift, &s.points)?;
        let noise = eval_b_increment(x, dw, &s.diffusion)?;
        let kx = s.stiffness.mul_vec(x)?;
        Ok((0..x.len())
            .map(|i| {
                let m = s.lumped_mass[i];
                x[i] - self.dt * ((kx[i] - s.lifting[i]) / m + f[i]) + noise[i]
            })
            .collect())
    }

    /// `exp(−Δt A_m)(X_m + M⁻¹ M_lump B ΔW) + Δt φ1(−Δt A_m) M⁻¹(M_lump G_m + g)`
    /// with `A_m = M⁻¹ (K + M_lump J_m)`. Both terms come from one exponential
    /// of the matrix augmented by the forcing column.
    pub fn expo_rosenbrock_step(&self, x: &[f64], dw: &[f64]) -> Result<Vec<f64>> {
        let s = self.system;
        let expo = self.expo.as_ref().ok_or_else(|| {
            Error::Unsupported("step context was built without exponential data".into())
        })?;
        check_len(s.dim(), x.len())?;
        check_len(s.dim(), dw.len())?;
        let jac = eval_jacobian(x, &s.drift, &s.points)?;
        let g = eval_remainder(x, &jac, &s.drift, &s.points)?;
        let noise = eval_b_increment(x, dw, &s.diffusion)?;
        let n = x.len();
        let forcing = DVector::from_iterator(n, (0..n).map(|i| s.lumped_mass[i] * g[i] + s.lifting[i]));
        let kicked = DVector::from_iterator(n, (0..n).map(|i| s.lumped_mass[i] * noise[i]));
        let start = DVector::from_column_slice(x) + &expo.mass_inv * kicked;

        let mut aug = DMatrix::zeros(n + 1, n + 1);
        {
            let mut a = aug.view_mut((0, 0), (n, n));
            a.copy_from(&expo.generator);
            for (j, mut col) in a.column_iter_mut().enumerate() {
                col.axpy(s.lumped_mass[j] * jac[j], &expo.mass_inv.column(j), 1.0);
            }
            a.scale_mut(-self.dt);
        }
        aug.view_mut((0, n), (n, 1)).copy_from(&(&expo.mass_inv * forcing * self.dt));
        let e = expm(&aug)?;
        let next = e.view((0, 0), (n, n)) * start + e.view((0, n), (n, 1));
        Ok(next.as_slice().to_vec())
    }
}

fn trivial_report() -> SolveReport {
    SolveReport {
        iterations: 0,
        final_residual: 0.0,
        converged: true,
    }
}

/// Noise increments seen by the integrator.
pub enum NoiseInput<'p> {
    None,
    Path {
        path: &'p NoisePath,
        table: &'p EigenfunctionTable,
    },
}

impl NoiseInput<'_> {
    fn field(&self, step: usize, n: usize) -> Result<Vec<f64>> {
        match self {
            NoiseInput::None => Ok(vec![0.0; n]),
            NoiseInput::Path { path, table } => table.increment_field(&path.step(step)),
        }
    }
}

/// Runs `T/Δt` steps from `x0`. Divergence stops the run and is reported on
/// the trajectory; solver or domain errors carry the step index.
pub fn integrate(ctx: &StepContext<'_>, x0: &[f64], noise: &NoiseInput<'_>, cfg: &SchemeConfig) -> Result<Trajectory> {
    check_len(ctx.system.dim(), x0.len())?;
    if (ctx.dt - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::InvalidArgument(format!(
            "step context built for dt = {} but config asks for {}",
            ctx.dt, cfg.dt
        )));
    }
    let n_steps = cfg.n_steps()?;
    if let NoiseInput::Path { path, table } = noise {
        if path.n_steps != n_steps || (path.dt - cfg.dt).abs() > 1e-12 * cfg.dt {
            return Err(Error::InvalidArgument(format!(
                "noise path has {} steps of {} but the run needs {} steps of {}",
                path.n_steps, path.dt, n_steps, cfg.dt
            )));
        }
        check_len(table.n_modes(), path.n_modes())?;
        check_len(ctx.system.dim(), table.n_points())?;
    }
    let start = Instant::now();
    let mut x = x0.to_vec();
    let mut states = cfg.keep_history.then(|| vec![x.clone()]);
    let mut diagnostics = Vec::with_capacity(n_steps);
    let mut diverged_at = None;
    for m in 0..n_steps {
        let dw = noise.field(m, x.len())?;
        let (next, report) = ctx
            .step(cfg.scheme, &x, &dw)
            .map_err(|e| Error::Step { step: m, source: Box::new(e) })?;
        diagnostics.push(report);
        x = next;
        if let Some(h) = states.as_mut() {
            h.push(x.clone());
        }
        if x.iter().any(|v| !v.is_finite()) || norm2(&x) > DIVERGENCE_THRESHOLD {
            diverged_at = Some(m + 1);
            break;
        }
    }
    let steps_done = diagnostics.len();
    Ok(Trajectory {
        times: (0..=steps_done).map(|m| m as f64 * cfg.dt).collect(),
        states,
        final_state: x,
        diagnostics,
        diverged_at,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// Amplification factor of one scheme on the scalar test equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amplification {
    /// `None` at a pole of the factor.
    pub factor: Option<f64>,
    pub stable: bool,
}

impl Amplification {
    fn from_ratio(num: f64, den: f64) -> Self {
        if den == 0.0 {
            return Self { factor: None, stable: false };
        }
        let f = num / den;
        Self { factor: Some(f), stable: f.abs() < 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityRow {
    pub dt: f64,
    pub semi_implicit: Amplification,
    pub rosenbrock: Amplification,
    pub explicit: Amplification,
}

/// Amplification factors for `y' = a y + c y` with `a y` implicit and `c y`
/// treated as the nonlinear part:
/// semi-implicit `(1 + cΔt)/(1 − aΔt)`, Rosenbrock `1/(1 − (a + c)Δt)`,
/// explicit `1 + (a + c)Δt`. Stability means `|factor| < 1`.
pub fn scalar_stability_sweep(a: f64, c: f64, dt_list: &[f64]) -> Vec<StabilityRow> {
    dt_list
        .iter()
        .map(|&dt| StabilityRow {
            dt,
            semi_implicit: Amplification::from_ratio(1.0 + c * dt, 1.0 - a * dt),
            rosenbrock: Amplification::from_ratio(1.0, 1.0 - (a + c) * dt),
            explicit: Amplification::from_ratio(1.0 + (a + c) * dt, 1.0),
        })
        .collect()
}

/// Critical step `2/(a − c)` of the semi-implicit scheme.
pub fn semi_implicit_threshold(a: f64, c: f64) -> f64 {
    2.0 / (a - c)
}
