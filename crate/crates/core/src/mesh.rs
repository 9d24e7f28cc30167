//! Structured triangulations of a rectangle.
//!
//! Nodes are numbered row by row, `node(ix, iy) = iy * (nx + 1) + ix`. Each
//! rectangular cell is split along its lower-left to upper-right diagonal
//! into two counterclockwise triangles.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Interior,
    Dirichlet,
    Neumann,
}

/// Which boundary pieces carry a Dirichlet condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BcLayout {
    /// Homogeneous Neumann everywhere.
    Neumann,
    /// Dirichlet on `x = 0`, Neumann elsewhere.
    #[default]
    DirichletLeft,
    /// Dirichlet on `x = 0` and `x = L1`, Neumann on the horizontal sides.
    DirichletLeftRight,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub l1: f64,
    pub l2: f64,
    pub nx: usize,
    pub ny: usize,
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_tags: Vec<BoundaryTag>,
    pub layout: BcLayout,
}

impl Mesh {
    pub fn structured(l1: f64, l2: f64, nx: usize, ny: usize, layout: BcLayout) -> Result<Self> {
        if !(l1 > 0.0 && l2 > 0.0 && l1.is_finite() && l2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "domain sides must be positive, got L1={l1}, L2={l2}"
            )));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(format!(
                "cell counts must be positive, got nx={nx}, ny={ny}"
            )));
        }
        let hx = l1 / nx as f64;
        let hy = l2 / ny as f64;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut boundary_tags = Vec::with_capacity(nodes.capacity());
        for iy in 0..=ny {
            for ix in 0..=nx {
                // Pin the far edges exactly so boundary tests compare equal.
                let x = if ix == nx { l1 } else { ix as f64 * hx };
                let y = if iy == ny { l2 } else { iy as f64 * hy };
                nodes.push([x, y]);
                let on_left = ix == 0;
                let on_right = ix == nx;
                let on_boundary = on_left || on_right || iy == 0 || iy == ny;
                let tag = match layout {
                    BcLayout::DirichletLeft if on_left => BoundaryTag::Dirichlet,
                    BcLayout::DirichletLeftRight if on_left || on_right => BoundaryTag::Dirichlet,
                    _ if on_boundary => BoundaryTag::Neumann,
                    _ => BoundaryTag::Interior,
                };
                boundary_tags.push(tag);
            }
        }
        let node = |ix: usize, iy: usize| iy * (nx + 1) + ix;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                let (a, b, c, d) = (node(ix, iy), node(ix + 1, iy), node(ix + 1, iy + 1), node(ix, iy + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        Ok(Self {
            l1,
            l2,
            nx,
            ny,
            nodes,
            triangles,
            boundary_tags,
            layout,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        iy * (self.nx + 1) + ix
    }

    /// Grid coordinates `(ix, iy)` of a node.
    pub fn grid_position(&self, node: usize) -> (usize, usize) {
        (node % (self.nx + 1), node / (self.nx + 1))
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|n| self.nodes[n]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t].map(|n| self.nodes[n]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Gradients of the three P1 hat functions on triangle `t` and its area.
    pub fn hat_gradients(&self, t: usize) -> ([[f64; 2]; 3], f64) {
        let [p0, p1, p2] = self.triangles[t].map(|n| self.nodes[n]);
        let area = self.signed_area(t);
        let inv = 1.0 / (2.0 * area);
        let grads = [
            [(p1[1] - p2[1]) * inv, (p2[0] - p1[0]) * inv],
            [(p2[1] - p0[1]) * inv, (p0[0] - p2[0]) * inv],
            [(p0[1] - p1[1]) * inv, (p1[0] - p0[0]) * inv],
        ];
        (grads, area)
    }

    pub fn dirichlet_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&n| self.boundary_tags[n] == BoundaryTag::Dirichlet)
            .collect()
    }

    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&n| self.boundary_tags[n] != BoundaryTag::Dirichlet)
            .collect()
    }

    /// Plain-text dump: node lines `v x y tag`, then triangle lines `t a b c`.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "% nodes {} triangles {}", self.n_nodes(), self.n_triangles())?;
        for (p, tag) in self.nodes.iter().zip(&self.boundary_tags) {
            let tag = match tag {
                BoundaryTag::Interior => "interior",
                BoundaryTag::Dirichlet => "dirichlet",
                BoundaryTag::Neumann => "neumann",
            };
            writeln!(out, "v {:.16e} {:.16e} {tag}", p[0], p[1])?;
        }
        for t in &self.triangles {
            writeln!(out, "t {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}
