//! Darcy velocity `q = −(k/μ)∇p` from a P1 pressure solve with `p = p_left`
//! on `x = 0`, `p = p_right` on `x = L1` and no flow through `y = 0, L2`.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble_weighted_stiffness, dual_cell_outflow, DiffusionTensor};
use crate::linsolve::{solve_robust, Ilu0, SolverSettings};
use crate::mesh::Mesh;
use crate::noise::{cosine_mode, stream_rng, StreamId};

/// Keeps permeability streams apart from the noise streams of the same seed.
const PERMEABILITY_DOMAIN: u64 = 0x7065_726d_6561_6269;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PermeabilitySpec {
    Constant {
        k0: f64,
    },
    /// `k = exp(g)` with `g` a Gaussian cosine series whose spectrum decays
    /// like `exp(−π²(ℓ₁²i²/L₁² + ℓ₂²j²/L₂²)/2)`, normalized so that the
    /// domain-averaged pointwise variance of `g` equals `variance`.
    LognormalSpectral {
        mean: f64,
        variance: f64,
        correlation_length: [f64; 2],
        #[serde(default = "default_permeability_modes")]
        modes: usize,
    },
}

fn default_permeability_modes() -> usize {
    32
}

impl Default for PermeabilitySpec {
    fn default() -> Self {
        PermeabilitySpec::Constant { k0: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermeabilityField {
    pub k_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub q: Vec<[f64; 2]>,
}

/// Flux balance of a velocity field over the median-dual cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxBalance {
    /// Flux entering through `x = 0` (positive for inflow).
    pub inflow: f64,
    /// Flux leaving through `x = L1`.
    pub outflow: f64,
    /// Largest net outflow of a cell not on `x = 0` or `x = L1`, relative to
    /// the mean face-flux magnitude.
    pub max_cell_imbalance: f64,
}

impl FluxBalance {
    pub fn relative_mismatch(&self) -> f64 {
        (self.inflow - self.outflow).abs() / self.inflow.abs().max(f64::MIN_POSITIVE)
    }
}

/// Spectral weights `a_ij²` of the log-permeability series.
fn lognormal_weights(mesh: &Mesh, variance: f64, ell: [f64; 2], modes: usize) -> Vec<((usize, usize), f64)> {
    let pi2 = std::f64::consts::PI.powi(2);
    let mut w: Vec<((usize, usize), f64)> = (0..modes)
        .flat_map(|i| (0..modes).map(move |j| (i, j)))
        .map(|(i, j)| {
            let ex = ell[0] * i as f64 / mesh.l1;
            let ey = ell[1] * j as f64 / mesh.l2;
            ((i, j), (-0.5 * pi2 * (ex * ex + ey * ey)).exp())
        })
        .collect();
    let total: f64 = w.iter().map(|(_, v)| v).sum();
    let scale = variance * mesh.l1 * mesh.l2 / total;
    w.iter_mut().for_each(|(_, v)| *v *= scale);
    w
}

/// Pointwise variance of `log k` at `x` for the lognormal kind.
pub fn log_permeability_variance(mesh: &Mesh, spec: &PermeabilitySpec, x: [f64; 2]) -> f64 {
    match *spec {
        PermeabilitySpec::Constant { .. } => 0.0,
        PermeabilitySpec::LognormalSpectral { variance, correlation_length, modes, .. } => {
            lognormal_weights(mesh, variance, correlation_length, modes)
                .iter()
                .map(|&((i, j), w)| {
                    let e = cosine_mode(i, x[0], mesh.l1) * cosine_mode(j, x[1], mesh.l2);
                    w * e * e
                })
                .sum()
        }
    }
}

pub fn generate_permeability(mesh: &Mesh, spec: &PermeabilitySpec, seed: u64) -> Result<PermeabilityField> {
    match *spec {
        PermeabilitySpec::Constant { k0 } => {
            if !(k0 > 0.0 && k0.is_finite()) {
                return Err(Error::InvalidArgument(format!("permeability must be positive, got {k0}")));
            }
            Ok(PermeabilityField {
                k_values: vec![k0; mesh.n_triangles()],
            })
        }
        PermeabilitySpec::LognormalSpectral {
            mean,
            variance,
            correlation_length,
            modes,
        } => {
            if !(variance >= 0.0) || correlation_length.iter().any(|l| !(*l > 0.0)) || modes == 0 {
                return Err(Error::InvalidArgument(
                    "lognormal permeability needs variance >= 0, positive correlation lengths and modes >= 1".into(),
                ));
            }
            let centroids: Vec<[f64; 2]> = (0..mesh.n_triangles()).map(|t| mesh.centroid(t)).collect();
            let mut g = vec![mean; mesh.n_triangles()];
            if variance > 0.0 {
                for ((i, j), w) in lognormal_weights(mesh, variance, correlation_length, modes) {
                    let mut rng = stream_rng(seed ^ PERMEABILITY_DOMAIN, StreamId::new(0, (i, j)));
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    let amp = w.sqrt() * xi;
                    for (gt, c) in g.iter_mut().zip(&centroids) {
                        *gt += amp * cosine_mode(i, c[0], mesh.l1) * cosine_mode(j, c[1], mesh.l2);
                    }
                }
            }
            Ok(PermeabilityField {
                k_values: g.into_iter().map(f64::exp).collect(),
            })
        }
    }
}

/// Nodal pressure of `∇·((k/μ)∇p) = 0`.
pub fn solve_pressure(mesh: &Mesh, k: &PermeabilityField, mu: f64, p_left: f64, p_right: f64) -> Result<Vec<f64>> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidArgument(format!("viscosity must be positive, got {mu}")));
    }
    if k.k_values.len() != mesh.n_triangles() || k.k_values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument("permeability must be positive on every triangle".into()));
    }
    let stiffness =
        assemble_weighted_stiffness(mesh, &DiffusionTensor::identity(), |t| k.k_values[t] / mu);
    let mut p = vec![0.0; mesh.n_nodes()];
    let mut fixed = Vec::new();
    let mut free = Vec::new();
    for n in 0..mesh.n_nodes() {
        match mesh.grid_position(n).0 {
            0 => {
                p[n] = p_left;
                fixed.push(n);
            }
            ix if ix == mesh.nx => {
                p[n] = p_right;
                fixed.push(n);
            }
            _ => free.push(n),
        }
    }
    if free.is_empty() {
        return Ok(p);
    }
    let kff = stiffness.submatrix(&free, &free);
    let kfd = stiffness.submatrix(&free, &fixed);
    let pd: Vec<f64> = fixed.iter().map(|&n| p[n]).collect();
    let rhs: Vec<f64> = kfd.mul_vec(&pd)?.into_iter().map(|v| -v).collect();
    let settings = SolverSettings {
        tol: 1e-13,
        max_iter: 5000,
        use_ilu: true,
    };
    let ilu = Ilu0::new(&kff).ok();
    let (pf, _) = solve_robust(&kff, &rhs, ilu.as_ref(), &settings, None)?;
    for (&n, v) in free.iter().zip(pf) {
        p[n] = v;
    }
    Ok(p)
}

/// Per-triangle `q = −(k_T/μ)∇p|_T`.
pub fn velocity_from_pressure(mesh: &Mesh, p: &[f64], k: &PermeabilityField, mu: f64) -> Result<VelocityField> {
    crate::error::check_len(mesh.n_nodes(), p.len())?;
    crate::error::check_len(mesh.n_triangles(), k.k_values.len())?;
    let q = mesh
        .triangles
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let (grads, _) = mesh.hat_gradients(t);
            let mut gp = [0.0; 2];
            for a in 0..3 {
                gp[0] += p[tri[a]] * grads[a][0];
                gp[1] += p[tri[a]] * grads[a][1];
            }
            let c = -k.k_values[t] / mu;
            [c * gp[0], c * gp[1]]
        })
        .collect();
    Ok(VelocityField { q })
}

pub fn flux_balance(mesh: &Mesh, velocity: &VelocityField) -> Result<FluxBalance> {
    let net = dual_cell_outflow(mesh, &velocity.q)?;
    let fluxes = crate::fem::dual_face_fluxes(mesh, &velocity.q)?;
    let mean_face = fluxes.iter().flatten().map(|f| f.abs()).sum::<f64>() / (3 * fluxes.len()) as f64;
    let (mut inflow, mut outflow, mut worst) = (0.0, 0.0, 0.0f64);
    for (n, v) in net.iter().enumerate() {
        match mesh.grid_position(n).0 {
            // Interior faces carry the flux away from the inlet column, so the
            // boundary face brings in exactly that much.
            0 => inflow += v,
            ix if ix == mesh.nx => outflow -= v,
            _ => worst = worst.max(v.abs()),
        }
    }
    Ok(FluxBalance {
        inflow,
        outflow,
        max_cell_imbalance: worst / mean_face.max(f64::MIN_POSITIVE),
    })
}

/// CSV with columns `x,y,qx,qy` at triangle centroids.
pub fn write_velocity_csv<W: Write>(mesh: &Mesh, velocity: &VelocityField, mut out: W) -> std::io::Result<()> {
    writeln!(out, "x,y,qx,qy")?;
    for (t, q) in velocity.q.iter().enumerate() {
        let c = mesh.centroid(t);
        writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", c[0], c[1], q[0], q[1])?;
    }
    Ok(())
}

/// Pressure solve and velocity recovery in one call.
pub fn darcy_velocity(mesh: &Mesh, spec: &PermeabilitySpec, mu: f64, seed: u64) -> Result<(PermeabilityField, Vec<f64>, VelocityField)> {
    let k = generate_permeability(mesh, spec, seed)?;
    let p = solve_pressure(mesh, &k, mu, 1.0, 0.0)?;
    let q = velocity_from_pressure(mesh, &p, &k, mu)?;
    Ok((k, p, q))
}
