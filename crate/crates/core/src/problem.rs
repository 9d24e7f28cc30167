//! Assembly of a complete semi-discrete problem: mesh, operator, Dirichlet
//! elimination, drift, noise coefficient and eigenfunction table, all on the
//! free nodes.

use serde::{Deserialize, Serialize};

use crate::darcy::{darcy_velocity, PermeabilitySpec, VelocityField};
use crate::error::{check_len, Error, Result};
use crate::fem::{
    assemble_advection, assemble_mass, assemble_stiffness, coercivity_shift, compose_operator,
    l2_norm, l2_project, lumped_mass_diagonal, DiffusionTensor,
};
use crate::mesh::{BcLayout, Mesh};
use crate::noise::{cosine_mode, EigenfunctionTable, NoiseKind, NoiseSpec};
use crate::operators::{DiffusionSpec, Drift, DriftSpec};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainSpec {
    pub l1: f64,
    pub l2: f64,
    pub nx: usize,
    pub ny: usize,
    pub bc: BcLayout,
    /// Value held on Dirichlet nodes.
    pub dirichlet_value: f64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            l1: 2.0,
            l2: 2.0,
            nx: 16,
            ny: 16,
            bc: BcLayout::DirichletLeft,
            dirichlet_value: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocitySpec {
    None,
    Constant { q: [f64; 2] },
    Darcy { mu: f64, permeability: PermeabilitySpec },
}

impl Default for VelocitySpec {
    fn default() -> Self {
        VelocitySpec::Darcy {
            mu: 10.0,
            permeability: PermeabilitySpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub kind: NoiseKind,
    pub beta: f64,
    pub eps: f64,
    pub n1: usize,
    pub n2: usize,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Additive,
            beta: 2.0,
            eps: 0.1,
            n1: 32,
            n2: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// L² projection of the cosine eigenfunction `e_i ⊗ e_j`.
    Mode {
        i: usize,
        j: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSpec {
    pub domain: DomainSpec,
    pub diffusion_tensor: DiffusionTensorSpec,
    pub velocity: VelocitySpec,
    pub drift: Drift,
    pub noise: NoiseParams,
    pub initial: InitialCondition,
}

/// Serializable wrapper so the default `diag(1, 0.1)` tensor can be expressed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiffusionTensorSpec(pub DiffusionTensor);

impl Default for DiffusionTensorSpec {
    fn default() -> Self {
        DiffusionTensorSpec(DiffusionTensor::diagonal(1.0, 0.1).expect("SPD"))
    }
}

/// `M dX + [K X − g + M_lump F(X)] dt = M_lump B(X) dW` on the free nodes.
#[derive(Debug, Clone)]
pub struct SemiDiscreteSystem {
    pub mass: CsrMatrix,
    pub lumped_mass: Vec<f64>,
    /// Includes the coercivity shift `c0·M_lump`.
    pub stiffness: CsrMatrix,
    /// Dirichlet lifting `g = −K_fd x_d`.
    pub lifting: Vec<f64>,
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    /// Coordinates of the free nodes.
    pub points: Vec<[f64; 2]>,
}

impl SemiDiscreteSystem {
    pub fn new(
        mass: CsrMatrix,
        lumped_mass: Vec<f64>,
        stiffness: CsrMatrix,
        lifting: Vec<f64>,
        drift: DriftSpec,
        diffusion: DiffusionSpec,
        points: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let n = mass.nrows();
        if mass.ncols() != n || stiffness.nrows() != n || stiffness.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: stiffness.nrows(),
            });
        }
        check_len(n, lumped_mass.len())?;
        check_len(n, lifting.len())?;
        check_len(n, points.len())?;
        Ok(Self {
            mass,
            lumped_mass,
            stiffness,
            lifting,
            drift,
            diffusion,
            points,
        })
    }

    pub fn dim(&self) -> usize {
        self.mass.nrows()
    }

    pub fn norm(&self, v: &[f64]) -> Result<f64> {
        l2_norm(v, &self.mass)
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub mesh: Mesh,
    pub velocity: Option<VelocityField>,
    pub free: Vec<usize>,
    pub dirichlet: Vec<usize>,
    pub full_mass: CsrMatrix,
    pub system: SemiDiscreteSystem,
    /// Eigenfunctions on the free nodes.
    pub noise_table: EigenfunctionTable,
    pub noise_trace: f64,
}

impl Problem {
    /// `seed` drives every random ingredient of the problem (the permeability
    /// field); noise paths take their own seed.
    pub fn assemble(spec: &ProblemSpec, seed: u64) -> Result<Self> {
        let d = &spec.domain;
        let mesh = Mesh::structured(d.l1, d.l2, d.nx, d.ny, d.bc)?;
        let diffusion = spec.diffusion_tensor.0;

        let velocity = match &spec.velocity {
            VelocitySpec::None => None,
            VelocitySpec::Constant { q } => Some(VelocityField {
                q: vec![*q; mesh.n_triangles()],
            }),
            VelocitySpec::Darcy { mu, permeability } => {
                let flow_mesh = Mesh::structured(d.l1, d.l2, d.nx, d.ny, BcLayout::DirichletLeftRight)?;
                Some(darcy_velocity(&flow_mesh, permeability, *mu, seed)?.2)
            }
        };

        let mass = assemble_mass(&mesh, false);
        let lumped = lumped_mass_diagonal(&mesh);
        let k_diff = assemble_stiffness(&mesh, &diffusion);
        let k_adv = velocity
            .as_ref()
            .map(|v| assemble_advection(&mesh, &v.q))
            .transpose()?;

        let free = mesh.free_nodes();
        let dirichlet = mesh.dirichlet_nodes();
        if free.is_empty() {
            return Err(Error::InvalidArgument("mesh has no free nodes".into()));
        }

        let unshifted = match &k_adv {
            Some(adv) => CsrMatrix::linear_combination(&[(1.0, &k_diff), (1.0, adv)])?,
            None => k_diff.clone(),
        };
        let shift = coercivity_shift(
            &unshifted.submatrix(&free, &free),
            &mass.submatrix(&free, &free),
            &diffusion,
            velocity.as_ref().map(|v| v.q.as_slice()),
        )?;
        let op = compose_operator(mass.clone(), lumped.clone(), &k_diff, k_adv.as_ref(), shift)?;

        let xd = vec![d.dirichlet_value; dirichlet.len()];
        let lifting = if dirichlet.is_empty() {
            vec![0.0; free.len()]
        } else {
            op.stiffness
                .submatrix(&free, &dirichlet)
                .mul_vec(&xd)?
                .into_iter()
                .map(|v| -v)
                .collect()
        };

        let points: Vec<[f64; 2]> = free.iter().map(|&n| mesh.nodes[n]).collect();
        let system = SemiDiscreteSystem::new(
            op.mass.submatrix(&free, &free),
            free.iter().map(|&n| op.lumped_mass[n]).collect(),
            op.stiffness.submatrix(&free, &free),
            lifting,
            DriftSpec::with_shift(spec.drift, shift),
            DiffusionSpec { kind: spec.noise.kind },
            points,
        )?;

        let noise_spec = noise_spec(spec, seed);
        let noise_table = EigenfunctionTable::build(&mesh, &noise_spec)?.restrict(&free);
        Ok(Self {
            spec: spec.clone(),
            mesh,
            velocity,
            free,
            dirichlet,
            full_mass: mass,
            system,
            noise_table,
            noise_trace: noise_spec.trace(),
        })
    }

    pub fn shift(&self) -> f64 {
        self.system.drift.shift
    }

    /// `P_h X_0` on the free nodes.
    pub fn initial_state(&self) -> Result<Vec<f64>> {
        let (l1, l2) = (self.spec.domain.l1, self.spec.domain.l2);
        let full = match self.spec.initial {
            InitialCondition::Zero => vec![0.0; self.mesh.n_nodes()],
            InitialCondition::Constant { value } => vec![value; self.mesh.n_nodes()],
            InitialCondition::Mode { i, j } => l2_project(&self.mesh, &self.full_mass, |x, y| {
                cosine_mode(i, x, l1) * cosine_mode(j, y, l2)
            })?,
        };
        Ok(self.restrict(&full))
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&n| full[n]).collect()
    }

    /// Nodal vector on the whole mesh with Dirichlet values filled in.
    pub fn expand(&self, free_values: &[f64]) -> Vec<f64> {
        let mut full = vec![self.spec.domain.dirichlet_value; self.mesh.n_nodes()];
        for (&n, &v) in self.free.iter().zip(free_values) {
            full[n] = v;
        }
        full
    }
}

pub fn noise_spec(spec: &ProblemSpec, seed: u64) -> NoiseSpec {
    NoiseSpec {
        beta: spec.noise.beta,
        eps: spec.noise.eps,
        n1: spec.noise.n1,
        n2: spec.noise.n2,
        l1: spec.domain.l1,
        l2: spec.domain.l2,
        kind: spec.noise.kind,
        seed,
    }
}
