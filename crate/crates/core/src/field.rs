use alloc::vec;
use alloc::vec::Vec;

use crate::basis::{CartesianMesh, NodalBasis};
use crate::error::{check_len, Error, Result};
use crate::gas::{GasModel, NVAR};

/// Nodal values of the conserved variables on every element.
///
/// Layout is element-major, node-lexicographic (x fastest), variable-innermost:
/// `data[(e * np^3 + (k * np + j) * np + i) * 5 + v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub mesh: CartesianMesh,
    pub basis: NodalBasis,
    pub data: Vec<f64>,
    pub time: f64,
}

impl SolutionField {
    pub fn zeros(mesh: CartesianMesh, basis: NodalBasis) -> Self {
        let len = field_len(&mesh, &basis);
        Self {
            mesh,
            basis,
            data: vec![0.0; len],
            time: 0.0,
        }
    }

    pub fn from_data(mesh: CartesianMesh, basis: NodalBasis, data: Vec<f64>, time: f64) -> Result<Self> {
        check_len(field_len(&mesh, &basis), data.len())?;
        Ok(Self {
            mesh,
            basis,
            data,
            time,
        })
    }

    pub fn uniform(mesh: CartesianMesh, basis: NodalBasis, state: [f64; NVAR]) -> Self {
        let mut f = Self::zeros(mesh, basis);
        for node in f.data.chunks_exact_mut(NVAR) {
            node.copy_from_slice(&state);
        }
        f
    }

    #[inline]
    pub fn nodes_per_element(&self) -> usize {
        self.basis.np().pow(3)
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.mesh.num_elements() * self.nodes_per_element()
    }

    #[inline]
    pub fn node(&self, global_node: usize) -> [f64; NVAR] {
        let s = &self.data[global_node * NVAR..(global_node + 1) * NVAR];
        [s[0], s[1], s[2], s[3], s[4]]
    }

    /// Physical coordinates of every node, same ordering as the data.
    pub fn coordinates(&self) -> Vec<[f64; 3]> {
        node_coordinates(&self.mesh, &self.basis)
    }

    /// Checks positivity of density and pressure at every node.
    pub fn validate(&self, gas: &GasModel) -> Result<()> {
        let npe = self.nodes_per_element();
        for n in 0..self.num_nodes() {
            let u = self.node(n);
            if gas.primitive(&u).is_none() {
                return Err(Error::InvalidState {
                    element: n / npe,
                    node: n % npe,
                    rho: u[0],
                    p: gas.pressure(&u),
                });
            }
        }
        Ok(())
    }

    /// First element holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        first_non_finite(&self.data, self.nodes_per_element() * NVAR)
    }

    /// Velocity vector at every node.
    pub fn velocities(&self) -> Vec<[f64; 3]> {
        self.data
            .chunks_exact(NVAR)
            .map(|u| [u[1] / u[0], u[2] / u[0], u[3] / u[0]])
            .collect()
    }
}

pub(crate) fn first_non_finite(data: &[f64], per_element: usize) -> Option<usize> {
    data.iter().position(|v| !v.is_finite()).map(|i| i / per_element)
}

#[inline]
pub fn field_len(mesh: &CartesianMesh, basis: &NodalBasis) -> usize {
    mesh.num_elements() * basis.np().pow(3) * NVAR
}

pub fn node_coordinates(mesh: &CartesianMesh, basis: &NodalBasis) -> Vec<[f64; 3]> {
    let np = basis.np();
    let mut out = Vec::with_capacity(mesh.num_elements() * np * np * np);
    for e in 0..mesh.num_elements() {
        let [ex, ey, ez] = mesh.element_coords(e);
        for k in 0..np {
            for j in 0..np {
                for i in 0..np {
                    out.push([
                        mesh.coord(ex, basis.nodes[i]),
                        mesh.coord(ey, basis.nodes[j]),
                        mesh.coord(ez, basis.nodes[k]),
                    ]);
                }
            }
        }
    }
    out
}
