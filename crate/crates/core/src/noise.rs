//! Q-Wiener increments in the cosine eigenbasis of the Neumann Laplacian.
//!
//! `W(x, t) = Σ √λ_ij e_ij(x) β_ij(t)` with `λ_ij = (i² + j²)^{-(β+ε)}`. The
//! constant mode `(0, 0)` is left out of the expansion.
//!
//! Every `(realization, i, j)` triple owns its own ChaCha stream derived from
//! the master seed, so a path is reproducible on its own, independent of the
//! truncation level and of the order in which realizations are generated.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mesh::Mesh;

const PATH_MAGIC: &[u8; 8] = b"QWPATH01";

/// Largest per-axis mode index that fits in a stream identifier.
pub const MAX_MODE_INDEX: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub beta: f64,
    pub eps: f64,
    /// Modes `0..n1` along x and `0..n2` along y.
    pub n1: usize,
    pub n2: usize,
    pub l1: f64,
    pub l2: f64,
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise decay needs beta > 0 and eps > 0, got beta={}, eps={}",
                self.beta, self.eps
            )));
        }
        if self.n1 == 0 || self.n2 == 0 || self.n1 > MAX_MODE_INDEX || self.n2 > MAX_MODE_INDEX {
            return Err(Error::InvalidArgument(format!(
                "mode truncation must be in 1..={MAX_MODE_INDEX}, got {}x{}",
                self.n1, self.n2
            )));
        }
        if !(self.l1 > 0.0 && self.l2 > 0.0) {
            return Err(Error::InvalidArgument("noise domain sides must be positive".into()));
        }
        Ok(())
    }

    /// Retained modes ordered by `i² + j²`, then lexicographically.
    pub fn modes(&self) -> Vec<(usize, usize)> {
        let mut modes: Vec<(usize, usize)> = (0..self.n1)
            .flat_map(|i| (0..self.n2).map(move |j| (i, j)))
            .filter(|&(i, j)| (i, j) != (0, 0))
            .collect();
        modes.sort_by_key(|&(i, j)| (i * i + j * j, i, j));
        modes
    }

    pub fn eigenvalue(&self, i: usize, j: usize) -> f64 {
        eigenvalue(i, j, self.beta, self.eps)
    }

    /// `Σ λ_ij` over the retained modes.
    pub fn trace(&self) -> f64 {
        self.modes().iter().map(|&(i, j)| self.eigenvalue(i, j)).sum()
    }
}

/// `(i² + j²)^{-(β+ε)}`; the excluded constant mode gets 0.
pub fn eigenvalue(i: usize, j: usize, beta: f64, eps: f64) -> f64 {
    if i == 0 && j == 0 {
        return 0.0;
    }
    ((i * i + j * j) as f64).powf(-(beta + eps))
}

/// `e_i(x)` on `[0, L]`: `√(1/L)` for `i = 0`, `√(2/L) cos(iπx/L)` otherwise.
pub fn cosine_mode(i: usize, x: f64, len: f64) -> f64 {
    if i == 0 {
        (1.0 / len).sqrt()
    } else {
        (2.0 / len).sqrt() * (i as f64 * std::f64::consts::PI * x / len).cos()
    }
}

/// Eigenfunctions evaluated at a set of nodes.
#[derive(Debug, Clone)]
pub struct EigenfunctionTable {
    pub modes: Vec<(usize, usize)>,
    /// `values[(n, k)] = e_i(x_n) e_j(y_n)` for `modes[k] = (i, j)`.
    pub values: DMatrix<f64>,
    pub sqrt_lambda: Vec<f64>,
}

impl EigenfunctionTable {
    pub fn build(mesh: &Mesh, spec: &NoiseSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self::at_points(&mesh.nodes, spec))
    }

    pub fn at_points(points: &[[f64; 2]], spec: &NoiseSpec) -> Self {
        let modes = spec.modes();
        let values = DMatrix::from_fn(points.len(), modes.len(), |n, k| {
            let (i, j) = modes[k];
            cosine_mode(i, points[n][0], spec.l1) * cosine_mode(j, points[n][1], spec.l2)
        });
        let sqrt_lambda = modes.iter().map(|&(i, j)| spec.eigenvalue(i, j).sqrt()).collect();
        Self {
            modes,
            values,
            sqrt_lambda,
        }
    }

    pub fn n_points(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Keeps only the listed rows (e.g. the free nodes).
    pub fn restrict(&self, rows: &[usize]) -> Self {
        Self {
            modes: self.modes.clone(),
            values: self.values.select_rows(rows),
            sqrt_lambda: self.sqrt_lambda.clone(),
        }
    }

    /// Nodal values of `ΔW = Σ √λ_ij e_ij Δβ_ij`.
    pub fn increment_field(&self, modal_increments: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_modes(), modal_increments.len())?;
        let scaled = DVector::from_iterator(
            self.n_modes(),
            modal_increments.iter().zip(&self.sqrt_lambda).map(|(d, s)| d * s),
        );
        Ok((&self.values * scaled).as_slice().to_vec())
    }
}

/// Identifies the random stream of one mode of one realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId(pub u64);

impl StreamId {
    pub fn new(realization: u64, mode: (usize, usize)) -> Self {
        debug_assert!(mode.0 < MAX_MODE_INDEX && mode.1 < MAX_MODE_INDEX);
        debug_assert!(realization < 1 << 40);
        StreamId((realization << 24) | ((mode.0 as u64) << 12) | mode.1 as u64)
    }
}

/// 256-bit ChaCha key expanded from a 64-bit seed with SplitMix64.
pub(crate) fn key_from_seed(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    key
}

pub(crate) fn stream_rng(seed: u64, stream: StreamId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key_from_seed(seed));
    rng.set_stream(stream.0);
    rng
}

/// Brownian increments of every retained mode on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub seed: u64,
    pub realization: u64,
    pub dt: f64,
    pub n_steps: usize,
    pub modes: Vec<(usize, usize)>,
    /// Mode-major: `increments[k * n_steps + m]`.
    pub increments: Vec<f64>,
}

impl NoisePath {
    pub fn sample(spec: &NoiseSpec, t_final: f64, n_steps: usize, realization: u64) -> Result<Self> {
        spec.validate()?;
        if n_steps == 0 || !(t_final > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise path needs T > 0 and at least one step, got T={t_final}, steps={n_steps}"
            )));
        }
        let modes = spec.modes();
        let dt = t_final / n_steps as f64;
        let sd = dt.sqrt();
        let mut increments = Vec::with_capacity(modes.len() * n_steps);
        for &mode in &modes {
            let mut rng = stream_rng(spec.seed, StreamId::new(realization, mode));
            increments.extend((0..n_steps).map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            }));
        }
        Ok(Self {
            seed: spec.seed,
            realization,
            dt,
            n_steps,
            modes,
            increments,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn mode_increments(&self, k: usize) -> &[f64] {
        &self.increments[k * self.n_steps..(k + 1) * self.n_steps]
    }

    /// Modal increments of step `m`.
    pub fn step(&self, m: usize) -> Vec<f64> {
        (0..self.n_modes()).map(|k| self.increments[k * self.n_steps + m]).collect()
    }

    /// Sums blocks of `factor` consecutive increments.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "coarsening factor {factor} does not divide {} steps",
                self.n_steps
            )));
        }
        let n_steps = self.n_steps / factor;
        let increments = self
            .increments
            .chunks_exact(factor)
            .map(|block| block.iter().sum())
            .collect();
        Ok(Self {
            seed: self.seed,
            realization: self.realization,
            dt: self.dt * factor as f64,
            n_steps,
            modes: self.modes.clone(),
            increments,
        })
    }

    /// `β_ij(T)` for every mode.
    pub fn endpoint(&self) -> Vec<f64> {
        (0..self.n_modes()).map(|k| self.mode_increments(k).iter().sum()).collect()
    }

    /// Binary dump. Little-endian header: 8-byte magic, seed (u64),
    /// realization (u64), modes (u64), steps (u64), dt (f64); then the mode
    /// list as `(u32, u32)` pairs; then the increments row-major by mode.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(PATH_MAGIC)?;
        out.write_all(&self.seed.to_le_bytes())?;
        out.write_all(&self.realization.to_le_bytes())?;
        out.write_all(&(self.n_modes() as u64).to_le_bytes())?;
        out.write_all(&(self.n_steps as u64).to_le_bytes())?;
        out.write_all(&self.dt.to_le_bytes())?;
        for &(i, j) in &self.modes {
            out.write_all(&(i as u32).to_le_bytes())?;
            out.write_all(&(j as u32).to_le_bytes())?;
        }
        for v in &self.increments {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != PATH_MAGIC {
            return Err(Error::InvalidArgument("not a noise path dump".into()));
        }
        let mut word = [0u8; 8];
        let mut next_u64 = |input: &mut R| -> std::io::Result<u64> {
            input.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let seed = next_u64(&mut input)?;
        let realization = next_u64(&mut input)?;
        let n_modes = next_u64(&mut input)? as usize;
        let n_steps = next_u64(&mut input)? as usize;
        let dt = f64::from_bits(next_u64(&mut input)?);
        let mut half = [0u8; 4];
        let mut modes = Vec::with_capacity(n_modes);
        for _ in 0..n_modes {
            input.read_exact(&mut half)?;
            let i = u32::from_le_bytes(half) as usize;
            input.read_exact(&mut half)?;
            let j = u32::from_le_bytes(half) as usize;
            modes.push((i, j));
        }
        let mut increments = Vec::with_capacity(n_modes * n_steps);
        for _ in 0..n_modes * n_steps {
            increments.push(f64::from_bits(next_u64(&mut input)?));
        }
        Ok(Self {
            seed,
            realization,
            dt,
            n_steps,
            modes,
            increments,
        })
    }
}
