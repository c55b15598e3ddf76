use super::{FemError, MaterialParams};
use crate::mesh::TetMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementMatrices {
    /// σ(T̄) V_e ∇φ_i·∇φ_j
    pub k_sigma: [[f64; 4]; 4],
    /// k V_e ∇φ_i·∇φ_j
    pub k_k: [[f64; 4]; 4],
    /// Consistent mass V_e (1 + δ_ij) / 20.
    pub mass: [[f64; 4]; 4],
    /// σ(T̄) |∇V|² V_e / 4 per node.
    pub f_joule: [f64; 4],
}

/// Volume and P1 basis gradients of a tetrahedron.
pub(crate) fn tet_geometry(p: &[[f64; 3]; 4]) -> (f64, [[f64; 3]; 4]) {
    let e: [[f64; 3]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| p[r + 1][c] - p[0][c]));
    let det = e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1]) - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0])
        + e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0]);
    // Columns of E⁻¹ are the gradients of φ1..φ3.
    let cof = |r: usize, c: usize| -> f64 {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (c1, c2) = ((c + 1) % 3, (c + 2) % 3);
        e[r1][c1] * e[r2][c2] - e[r1][c2] * e[r2][c1]
    };
    let mut grads = [[0.0; 3]; 4];
    for i in 0..3 {
        for a in 0..3 {
            // (E⁻¹)[a][i] = cof(i, a) / det
            grads[i + 1][a] = cof(i, a) / det;
        }
    }
    for a in 0..3 {
        grads[0][a] = -(grads[1][a] + grads[2][a] + grads[3][a]);
    }
    (det.abs() / 6.0, grads)
}

pub(crate) fn stiffness(volume: f64, grads: &[[f64; 3]; 4], coeff: f64) -> [[f64; 4]; 4] {
    let mut k = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let g = grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1] + grads[i][2] * grads[j][2];
            k[i][j] = coeff * volume * g;
        }
    }
    k
}

pub(crate) fn mass(volume: f64) -> [[f64; 4]; 4] {
    let mut m = [[volume / 20.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = volume / 10.0;
    }
    m
}

pub(crate) fn field_gradient(grads: &[[f64; 3]; 4], values: &[f64; 4]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for (grad, v) in grads.iter().zip(values) {
        for a in 0..3 {
            g[a] += v * grad[a];
        }
    }
    g
}

/// Element matrices of tet `tet` for nodal temperatures `t_elem` and voltages `v_elem`.
pub fn element_matrices(
    mesh: &TetMesh,
    tet: usize,
    params: &MaterialParams,
    t_elem: &[f64; 4],
    v_elem: &[f64; 4],
) -> Result<ElementMatrices, FemError> {
    mesh.tet_volume(tet)?;
    let (volume, grads) = tet_geometry(&mesh.tet_points(tet));
    let material = params.for_region(mesh.tets[tet].region);
    let t_mean = t_elem.iter().sum::<f64>() / 4.0;
    let sigma = material.sigma(t_mean);
    if !(sigma > 0.0) {
        return Err(FemError::PhysicsRange {
            tet,
            sigma,
            temperature: t_mean,
        });
    }
    let grad_v = field_gradient(&grads, v_elem);
    let q = sigma * (grad_v[0] * grad_v[0] + grad_v[1] * grad_v[1] + grad_v[2] * grad_v[2]);
    Ok(ElementMatrices {
        k_sigma: stiffness(volume, &grads, sigma),
        k_k: stiffness(volume, &grads, material.k),
        mass: mass(volume),
        f_joule: [q * volume / 4.0; 4],
    })
}
