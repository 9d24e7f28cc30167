//! P1 finite-element assembly on a [`Mesh`]: mass, anisotropic diffusion
//! stiffness, node-centred upwind advection, the coercivity shift and the
//! L² projection.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linsolve::{solve_robust, Ilu0, SolverSettings};
use crate::mesh::Mesh;
use crate::sparse::CsrMatrix;

/// Extra amount added on top of `max(0, -λ_min)` when choosing the shift.
pub const SHIFT_MARGIN: f64 = 1e-8;

/// Free-node count up to which the shift is computed from a dense
/// eigen-decomposition instead of the analytic bound.
pub const DENSE_SHIFT_LIMIT: usize = 1200;

/// Constant symmetric positive definite 2×2 diffusion tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct DiffusionTensor([[f64; 2]; 2]);

impl DiffusionTensor {
    pub fn new(d: [[f64; 2]; 2]) -> Result<Self> {
        if d.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("diffusion tensor has non-finite entries".into()));
        }
        if (d[0][1] - d[1][0]).abs() > 1e-14 * (d[0][1].abs() + d[1][0].abs()).max(1.0) {
            return Err(Error::InvalidArgument("diffusion tensor must be symmetric".into()));
        }
        let t = DiffusionTensor(d);
        if t.min_eigenvalue() <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "diffusion tensor must be positive definite (smallest eigenvalue {})",
                t.min_eigenvalue()
            )));
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        DiffusionTensor([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn diagonal(dx: f64, dy: f64) -> Result<Self> {
        Self::new([[dx, 0.0], [0.0, dy]])
    }

    pub fn entries(&self) -> [[f64; 2]; 2] {
        self.0
    }

    /// Ellipticity constant: the smaller eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        let [[a, b], [_, d]] = self.0;
        let radius = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        // det / λ_max avoids cancellation for strongly anisotropic tensors.
        (a * d - b * b) / (0.5 * (a + d) + radius)
    }

    fn apply(&self, g: [f64; 2]) -> [f64; 2] {
        let [[a, b], [c, d]] = self.0;
        [a * g[0] + b * g[1], c * g[0] + d * g[1]]
    }
}

impl TryFrom<[[f64; 2]; 2]> for DiffusionTensor {
    type Error = Error;

    fn try_from(d: [[f64; 2]; 2]) -> Result<Self> {
        Self::new(d)
    }
}

impl From<DiffusionTensor> for [[f64; 2]; 2] {
    fn from(d: DiffusionTensor) -> Self {
        d.0
    }
}

/// Data defining the bilinear form of the spatial operator.
#[derive(Debug, Clone)]
pub struct BilinearFormSpec {
    pub diffusion: DiffusionTensor,
    /// Velocity per triangle; `None` means no advection.
    pub velocity: Option<Vec<[f64; 2]>>,
}

/// Mass and shifted stiffness of the discrete operator `A_h = M⁻¹K`.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub mass: CsrMatrix,
    pub lumped_mass: Vec<f64>,
    pub stiffness: CsrMatrix,
    pub shift: f64,
}

/// Zero-valued triplets on every triangle edge and the diagonal, so that all
/// assembled matrices share one pattern.
fn pattern_triplets(mesh: &Mesh) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    mesh.triangles
        .iter()
        .flat_map(|t| (0..3).flat_map(move |a| (0..3).map(move |b| (t[a], t[b], 0.0))))
}

pub fn assemble_mass(mesh: &Mesh, lumped: bool) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(9 * mesh.n_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.signed_area(t);
        for a in 0..3 {
            if lumped {
                triplets.push((tri[a], tri[a], area / 3.0));
            } else {
                for b in 0..3 {
                    let w = if a == b { 2.0 } else { 1.0 };
                    triplets.push((tri[a], tri[b], area * w / 12.0));
                }
            }
        }
    }
    if lumped {
        let n = mesh.n_nodes();
        let mut diag = vec![0.0; n];
        for (i, _, v) in triplets {
            diag[i] += v;
        }
        return CsrMatrix::from_diagonal(&diag);
    }
    CsrMatrix::from_triplets(mesh.n_nodes(), mesh.n_nodes(), triplets).expect("mesh indices in range")
}

pub fn lumped_mass_diagonal(mesh: &Mesh) -> Vec<f64> {
    assemble_mass(mesh, true).diagonal()
}

/// `K_ij = ∫ (D∇φ_j)·∇φ_i`.
pub fn assemble_stiffness(mesh: &Mesh, diffusion: &DiffusionTensor) -> CsrMatrix {
    assemble_weighted_stiffness(mesh, diffusion, |_| 1.0)
}

/// Stiffness with a per-triangle scalar factor in front of `D`.
pub fn assemble_weighted_stiffness(
    mesh: &Mesh,
    diffusion: &DiffusionTensor,
    weight: impl Fn(usize) -> f64,
) -> CsrMatrix {
    let mut triplets: Vec<_> = pattern_triplets(mesh).collect();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let (grads, area) = mesh.hat_gradients(t);
        let w = weight(t) * area;
        for a in 0..3 {
            let dg = diffusion.apply(grads[a]);
            for b in 0..3 {
                let v = w * (dg[0] * grads[b][0] + dg[1] * grads[b][1]);
                triplets.push((tri[b], tri[a], v));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.n_nodes(), mesh.n_nodes(), triplets).expect("mesh indices in range")
}

/// Fluxes of a per-triangle velocity through the median-dual faces.
///
/// Inside triangle `t` the dual cells of two vertices `i`, `j` meet along the
/// segment from the midpoint of edge `ij` to the centroid. Entry `[t][e]` is
/// the flux `∫ q·n` through that segment for the local edge `e = (a, (a+1)%3)`,
/// with `n` pointing from the first vertex towards the second.
pub fn dual_face_fluxes(mesh: &Mesh, velocity: &[[f64; 2]]) -> Result<Vec<[f64; 3]>> {
    check_len(mesh.n_triangles(), velocity.len())?;
    let mut out = Vec::with_capacity(mesh.n_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let q = velocity[t];
        if !(q[0].is_finite() && q[1].is_finite()) {
            return Err(Error::InvalidArgument(format!("velocity on triangle {t} is not finite")));
        }
        let g = mesh.centroid(t);
        let mut fluxes = [0.0; 3];
        for (e, flux) in fluxes.iter_mut().enumerate() {
            let pi = mesh.nodes[tri[e]];
            let pj = mesh.nodes[tri[(e + 1) % 3]];
            let mid = [0.5 * (pi[0] + pj[0]), 0.5 * (pi[1] + pj[1])];
            let s = [g[0] - mid[0], g[1] - mid[1]];
            let mut normal = [s[1], -s[0]];
            if normal[0] * (pj[0] - pi[0]) + normal[1] * (pj[1] - pi[1]) < 0.0 {
                normal = [-normal[0], -normal[1]];
            }
            *flux = q[0] * normal[0] + q[1] * normal[1];
        }
        out.push(fluxes);
    }
    Ok(out)
}

/// First-order upwind discretization of `q·∇u` on the median-dual cells.
///
/// Row `i` collects, for every neighbour `j` that sends flux into the dual
/// cell of `i`, the term `|f_ji| (u_i − u_j)`, so every row sums to zero.
pub fn assemble_advection(mesh: &Mesh, velocity: &[[f64; 2]]) -> Result<CsrMatrix> {
    let fluxes = dual_face_fluxes(mesh, velocity)?;
    let mut triplets: Vec<_> = pattern_triplets(mesh).collect();
    for (tri, f) in mesh.triangles.iter().zip(&fluxes) {
        for (e, &flux) in f.iter().enumerate() {
            let (i, j) = (tri[e], tri[(e + 1) % 3]);
            // flux > 0 flows i → j, so j receives from i.
            let (from, to, amount) = if flux > 0.0 { (i, j, flux) } else { (j, i, -flux) };
            triplets.push((to, to, amount));
            triplets.push((to, from, -amount));
        }
    }
    CsrMatrix::from_triplets(mesh.n_nodes(), mesh.n_nodes(), triplets)
}

/// Net flux leaving each dual cell through its interior faces.
pub fn dual_cell_outflow(mesh: &Mesh, velocity: &[[f64; 2]]) -> Result<Vec<f64>> {
    let fluxes = dual_face_fluxes(mesh, velocity)?;
    let mut out = vec![0.0; mesh.n_nodes()];
    for (tri, f) in mesh.triangles.iter().zip(&fluxes) {
        for (e, &flux) in f.iter().enumerate() {
            out[tri[e]] += flux;
            out[tri[(e + 1) % 3]] -= flux;
        }
    }
    Ok(out)
}

/// `K = K_diff + K_adv + c0·M_lump`.
///
/// The shift multiplies the lumped mass so that subtracting `c0·u` inside the
/// drift, which is paired with the lumped mass, cancels it exactly.
pub fn compose_operator(
    mass: CsrMatrix,
    lumped_mass: Vec<f64>,
    k_diff: &CsrMatrix,
    k_adv: Option<&CsrMatrix>,
    shift: f64,
) -> Result<DiscreteOperator> {
    check_len(mass.nrows(), k_diff.nrows())?;
    check_len(mass.nrows(), lumped_mass.len())?;
    if !(shift >= 0.0) {
        return Err(Error::InvalidArgument(format!("shift must be non-negative, got {shift}")));
    }
    let mut stiffness = match k_adv {
        Some(adv) => CsrMatrix::linear_combination(&[(1.0, k_diff), (1.0, adv)])?,
        None => k_diff.clone(),
    };
    let shift_diag: Vec<f64> = lumped_mass.iter().map(|m| shift * m).collect();
    stiffness.add_to_diagonal(&shift_diag)?;
    Ok(DiscreteOperator {
        mass,
        lumped_mass,
        stiffness,
        shift,
    })
}

/// Smallest eigenvalue of the symmetric pencil `(sym(K), M)`. This bounds the
/// real parts of all generalized eigenvalues of `(K, M)` from below.
pub fn min_symmetric_generalized_eigenvalue(k: &CsrMatrix, m: &CsrMatrix) -> Result<f64> {
    check_len(k.nrows(), m.nrows())?;
    let kd = k.to_dense();
    let ksym = (&kd + kd.transpose()) * 0.5;
    let chol = m
        .to_dense()
        .cholesky()
        .ok_or_else(|| Error::NumericalDomain("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or(Error::SingularMatrix)?;
    let c: DMatrix<f64> = &linv * ksym * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Shift `c0 ≥ 0` making `K + c0·M` coercive on the free nodes.
///
/// Small systems use the dense eigenvalue; larger ones fall back to the
/// continuous bound `‖q‖²_∞ / (2 c1)`.
pub fn coercivity_shift(
    k_unshifted: &CsrMatrix,
    mass: &CsrMatrix,
    diffusion: &DiffusionTensor,
    velocity: Option<&[[f64; 2]]>,
) -> Result<f64> {
    if k_unshifted.nrows() <= DENSE_SHIFT_LIMIT {
        let lambda = min_symmetric_generalized_eigenvalue(k_unshifted, mass)?;
        return Ok((-lambda).max(0.0) + SHIFT_MARGIN);
    }
    let qmax = velocity
        .map(|v| v.iter().map(|q| q[0].hypot(q[1])).fold(0.0, f64::max))
        .unwrap_or(0.0);
    Ok(qmax * qmax / (2.0 * diffusion.min_eigenvalue()) + SHIFT_MARGIN)
}

/// Right-hand side `b_i = ∫ f φ_i` by the edge-midpoint rule.
pub fn load_vector(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_nodes()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let w = mesh.signed_area(t) / 3.0;
        for e in 0..3 {
            let (i, j) = (tri[e], tri[(e + 1) % 3]);
            let (pi, pj) = (mesh.nodes[i], mesh.nodes[j]);
            let v = f(0.5 * (pi[0] + pj[0]), 0.5 * (pi[1] + pj[1]));
            b[i] += 0.5 * w * v;
            b[j] += 0.5 * w * v;
        }
    }
    b
}

/// L² projection onto the P1 space: solves `M c = b`.
pub fn l2_project(mesh: &Mesh, mass: &CsrMatrix, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
    check_len(mesh.n_nodes(), mass.nrows())?;
    let b = load_vector(mesh, f);
    let settings = SolverSettings {
        tol: 1e-14,
        max_iter: 2000,
        use_ilu: true,
    };
    let ilu = Ilu0::new(mass).ok();
    solve_robust(mass, &b, ilu.as_ref(), &settings, None).map(|(x, _)| x)
}

/// `sqrt(vᵀ M v)`.
pub fn l2_norm(v: &[f64], mass: &CsrMatrix) -> Result<f64> {
    Ok(mass.bilinear(v, v)?.max(0.0).sqrt())
}
