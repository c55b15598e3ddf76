use rayon::prelude::*;

use super::element::{field_gradient, mass, stiffness, tet_geometry};
use super::{FemError, MaterialParams, SimConfig, SimState};
use crate::mesh::{TetMesh, ELECTRODE_NEG, ELECTRODE_POS, OUTER_BOUNDARY};
use crate::sparse::{coo_to_csr, CooMatrix, CsrMatrix};

/// Elements per assembly work unit. Fixed, so the merge order of the COO
/// buffers never depends on the number of threads.
const ELEMENTS_PER_CHUNK: usize = 256;

pub fn v_dof(node: usize) -> usize {
    2 * node
}

pub fn t_dof(node: usize) -> usize {
    2 * node + 1
}

/// Dirichlet values per dof.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    values: Vec<Option<f64>>,
}

impl Constraints {
    pub fn none(dofs: usize) -> Self {
        Self {
            values: vec![None; dofs],
        }
    }

    /// V = `applied_voltage` on `electrode_pos`, V = 0 on `electrode_neg`,
    /// T = `boundary_temp` on `outer_boundary`.
    pub fn from_mesh(mesh: &TetMesh, applied_voltage: f64, boundary_temp: f64) -> Self {
        let mut c = Self::none(2 * mesh.node_count());
        for &n in mesh.node_set(OUTER_BOUNDARY) {
            c.values[t_dof(n)] = Some(boundary_temp);
        }
        for &n in mesh.node_set(ELECTRODE_POS) {
            c.values[v_dof(n)] = Some(applied_voltage);
        }
        for &n in mesh.node_set(ELECTRODE_NEG) {
            c.values[v_dof(n)] = Some(0.0);
        }
        c
    }

    pub fn set(&mut self, dof: usize, value: f64) {
        self.values[dof] = Some(value);
    }

    pub fn get(&self, dof: usize) -> Option<f64> {
        self.values[dof]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Eliminates constrained dofs symmetrically: constrained rows and columns
    /// are zeroed (entries stay stored), the diagonal is set to 1 and column
    /// contributions move to the right-hand side.
    pub fn apply(&self, a: &mut CsrMatrix, rhs: &mut [f64]) {
        for i in 0..a.nrows {
            let range = a.row_ptr[i]..a.row_ptr[i + 1];
            if let Some(g) = self.values[i] {
                for k in range {
                    a.vals[k] = if a.col_idx[k] == i { 1.0 } else { 0.0 };
                }
                rhs[i] = g;
                continue;
            }
            for k in range {
                if let Some(g) = self.values[a.col_idx[k]] {
                    rhs[i] -= a.vals[k] * g;
                    a.vals[k] = 0.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

/// Assembles the global system; element geometry is computed once.
#[derive(Debug, Clone)]
pub struct Assembler<'a> {
    mesh: &'a TetMesh,
    params: &'a MaterialParams,
    volumes: Vec<f64>,
    grads: Vec<[[f64; 3]; 4]>,
}

struct ChunkOutput {
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<(usize, f64)>,
}

impl<'a> Assembler<'a> {
    pub fn new(mesh: &'a TetMesh, params: &'a MaterialParams) -> Result<Self, FemError> {
        params.validate()?;
        let mut volumes = Vec::with_capacity(mesh.tets.len());
        let mut grads = Vec::with_capacity(mesh.tets.len());
        for t in 0..mesh.tets.len() {
            mesh.tet_volume(t)?;
            let (v, g) = tet_geometry(&mesh.tet_points(t));
            volumes.push(v);
            grads.push(g);
        }
        Ok(Self {
            mesh,
            params,
            volumes,
            grads,
        })
    }

    pub fn dofs(&self) -> usize {
        2 * self.mesh.node_count()
    }

    fn assemble_chunk(
        &self,
        tets: std::ops::Range<usize>,
        temperature: &[f64],
        voltage: &[f64],
        temperature_old: &[f64],
        dt: f64,
    ) -> Result<ChunkOutput, FemError> {
        let mut out = ChunkOutput {
            triplets: Vec::with_capacity(32 * tets.len()),
            rhs: Vec::with_capacity(4 * tets.len()),
        };
        for t in tets {
            let tet = &self.mesh.tets[t];
            let nodes = tet.nodes;
            let material = self.params.for_region(tet.region);
            let (volume, grads) = (self.volumes[t], &self.grads[t]);

            let t_mean = nodes.iter().map(|&n| temperature[n]).sum::<f64>() / 4.0;
            let sigma = material.sigma(t_mean);
            if !(sigma > 0.0) {
                return Err(FemError::PhysicsRange {
                    tet: t,
                    sigma,
                    temperature: t_mean,
                });
            }
            let k_sigma = stiffness(volume, grads, sigma);
            let k_k = stiffness(volume, grads, material.k);
            let m = mass(volume);
            let mass_scale = material.rho_c / dt;
            let grad_v = field_gradient(grads, &nodes.map(|n| voltage[n]));
            let joule = sigma * (grad_v[0] * grad_v[0] + grad_v[1] * grad_v[1] + grad_v[2] * grad_v[2]) * volume / 4.0;

            for i in 0..4 {
                let mut old_heat = 0.0;
                for j in 0..4 {
                    out.triplets.push((v_dof(nodes[i]), v_dof(nodes[j]), k_sigma[i][j]));
                    out.triplets
                        .push((t_dof(nodes[i]), t_dof(nodes[j]), mass_scale * m[i][j] + k_k[i][j]));
                    old_heat += mass_scale * m[i][j] * temperature_old[nodes[j]];
                }
                out.rhs.push((t_dof(nodes[i]), old_heat + joule));
            }
        }
        Ok(out)
    }

    /// Builds the `2N × 2N` system for one corrector iteration.
    ///
    /// `temperature`/`voltage` are the current iterate (σ and the Joule load
    /// are evaluated there); `temperature_old` is the last accepted
    /// temperature.
    pub fn assemble(
        &self,
        temperature: &[f64],
        voltage: &[f64],
        temperature_old: &[f64],
        dt: f64,
        constraints: &Constraints,
    ) -> Result<LinearSystem, FemError> {
        let n = self.mesh.node_count();
        for field in [temperature, voltage, temperature_old] {
            if field.len() != n {
                return Err(FemError::FieldLength {
                    expected: n,
                    found: field.len(),
                });
            }
        }
        if constraints.len() != 2 * n {
            return Err(FemError::FieldLength {
                expected: 2 * n,
                found: constraints.len(),
            });
        }
        if !(dt > 0.0) {
            return Err(FemError::InvalidConfig(format!("dt must be positive, got {dt}")));
        }

        let ntets = self.mesh.tets.len();
        let chunks: Vec<ChunkOutput> = (0..ntets.div_ceil(ELEMENTS_PER_CHUNK))
            .into_par_iter()
            .map(|c| {
                let range = c * ELEMENTS_PER_CHUNK..((c + 1) * ELEMENTS_PER_CHUNK).min(ntets);
                self.assemble_chunk(range, temperature, voltage, temperature_old, dt)
            })
            .collect::<Result<_, _>>()?;

        let dofs = 2 * n;
        let total: usize = chunks.iter().map(|c| c.triplets.len()).sum();
        let mut coo = CooMatrix::with_capacity(dofs, dofs, total);
        let mut rhs = vec![0.0; dofs];
        for chunk in &chunks {
            for &(r, c, v) in &chunk.triplets {
                coo.push(r, c, v).expect("element dofs are in range");
            }
            for &(r, v) in &chunk.rhs {
                rhs[r] += v;
            }
        }
        let mut matrix = coo_to_csr(&coo);
        constraints.apply(&mut matrix, &mut rhs);
        Ok(LinearSystem { matrix, rhs })
    }
}

/// One-shot assembly at the state's current fields, with the boundary
/// conditions from `config`.
pub fn assemble_global(
    mesh: &TetMesh,
    params: &MaterialParams,
    state: &SimState,
    config: &SimConfig,
    dt: f64,
) -> Result<LinearSystem, FemError> {
    let assembler = Assembler::new(mesh, params)?;
    let constraints = Constraints::from_mesh(mesh, config.applied_voltage, config.boundary_temp);
    assembler.assemble(&state.temperature, &state.voltage, &state.temperature, dt, &constraints)
}
