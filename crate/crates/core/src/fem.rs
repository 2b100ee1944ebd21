//! Classical sparse finite-element solver on the pixel mesh: ground-truth
//! solutions for evaluation and the brute-force reference for the stencil
//! residual engine. Everything here is plain element loops, sharing only
//! the basis tables with the convolution path.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::mesh::{build_basis_tables, build_surface_tables, BasisTables, GridSpec, NODE_OFFSETS};
use crate::physics::{neo_hookean_stress, neo_hookean_tangent, JClampPolicy, Material};
use crate::residual::{build_masks, is_imposed, BcChannels, BcMasks, ResidualBundle};
use crate::tensor::FieldTensor;

/// Flux/stress rows A[c][d] for a gradient grad[c][d]; diffusion occupies
/// row 0. The flag marks a clamped (excluded) quadrature point.
fn a_value(
    material: &Material,
    grad: [[f64; 2]; 2],
    clamp: &JClampPolicy,
) -> Result<([[f64; 2]; 2], bool)> {
    Ok(match material {
        Material::Diffusion(p) => {
            let h = crate::physics::diffusion_flux([grad[0][0], grad[0][1]], p);
            ([[h[0], h[1]], [0.0, 0.0]], false)
        }
        Material::Linear(p) => (crate::physics::linear_stress(grad, p), false),
        Material::Nonlinear(p) => {
            let res = neo_hookean_stress(grad, p, clamp)?;
            (res.piola, res.clamped)
        }
    })
}

/// Consistent tangent dA[c][d]/dgrad[e][f] at one quadrature point.
fn a_tangent(material: &Material, grad: [[f64; 2]; 2]) -> Result<[[[[f64; 2]; 2]; 2]; 2]> {
    let mut t = [[[[0.0; 2]; 2]; 2]; 2];
    match material {
        Material::Diffusion(p) => {
            for d in 0..2 {
                t[0][d][0][d] = -p.diffusivity;
            }
        }
        Material::Linear(p) => {
            for c in 0..2 {
                for d in 0..2 {
                    for e in 0..2 {
                        for f in 0..2 {
                            let mut v = p.lambda * ((c == d) as usize as f64)
                                * ((e == f) as usize as f64);
                            v += p.mu
                                * (((c == e) as usize as f64) * ((d == f) as usize as f64)
                                    + ((c == f) as usize as f64) * ((d == e) as usize as f64));
                            t[c][d][e][f] = v;
                        }
                    }
                }
            }
        }
        Material::Nonlinear(p) => {
            t = neo_hookean_tangent(grad, p)?;
        }
    }
    Ok(t)
}

fn gather_nodal(
    field: &FieldTensor<f64>,
    i: usize,
    j: usize,
    dof: usize,
) -> [[f64; 4]; 2] {
    let mut u = [[0.0; 4]; 2];
    for (a, &(di, dj)) in NODE_OFFSETS.iter().enumerate() {
        for c in 0..dof {
            u[c][a] = field.at4(0, i + di, j + dj, c);
        }
    }
    u
}

fn qp_gradient(tables: &BasisTables<f64>, qp: usize, u: &[[f64; 4]; 2], dof: usize) -> [[f64; 2]; 2] {
    let mut grad = [[0.0; 2]; 2];
    for c in 0..dof {
        for d in 0..2 {
            for a in 0..4 {
                grad[c][d] += tables.b_values[qp][d][a] * u[c][a];
            }
        }
    }
    grad
}

/// Apply Dirichlet values (denormalized) onto a copy of the solution.
pub fn impose_dirichlet_loop(
    solution: &FieldTensor<f64>,
    masks: &BcMasks<f64>,
) -> FieldTensor<f64> {
    let mut out = solution.clone();
    for idx in 0..out.len() {
        if masks.dirichlet_mask.data()[idx] == 1.0 {
            out.data_mut()[idx] = masks.dirichlet_values.data()[idx];
        }
    }
    out
}

/// Reference residual assembler: plain per-element and per-facet loops.
/// Independent of the convolution-stencil engine except for the shared
/// basis tables.
pub fn loop_residual(
    solution: &FieldTensor<f64>,
    bc: &BcChannels<f64>,
    material: &Material,
    clamp: &JClampPolicy,
    grid: &GridSpec,
) -> Result<ResidualBundle<f64>> {
    let (n, dof) = (bc.n(), bc.dof());
    if bc.batch() != 1 {
        return Err(Error::Contract("loop_residual expects a single example".into()));
    }
    let masks = build_masks(bc);
    let imposed = impose_dirichlet_loop(solution, &masks);
    let tables = build_basis_tables::<f64>(&grid.clone());
    let surface = build_surface_tables::<f64>(&grid.clone());

    let mut bulk = FieldTensor::zeros(&[1, n, n, dof]);
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            if masks.element_valid.at4(0, i, j, 0) == 0.0 {
                continue;
            }
            let u = gather_nodal(&imposed, i, j, dof);
            for qp in 0..4 {
                let grad = qp_gradient(&tables, qp, &u, dof);
                let (a_val, clamped) = a_value(material, grad, clamp).map_err(|e| match e {
                    Error::SingularDeformation { j: jv, .. } => {
                        Error::SingularDeformation { j: jv, row: i, col: j, qp }
                    }
                    other => other,
                })?;
                if clamped {
                    continue;
                }
                let w = tables.weights[qp] * tables.det_j;
                for (a, &(di, dj)) in NODE_OFFSETS.iter().enumerate() {
                    for c in 0..dof {
                        let mut r = 0.0;
                        for d in 0..2 {
                            r += tables.b_values[qp][d][a] * a_val[c][d];
                        }
                        let idx = bulk.idx4(0, i + di, j + dj, c);
                        bulk.data_mut()[idx] += w * r;
                    }
                }
            }
        }
    }

    // Neumann facets: vertical pairs from the x-normal channel, horizontal
    // pairs from the y-normal channel.
    let mut neumann = FieldTensor::zeros(&[1, n, n, dof]);
    let groups: [(&FieldTensor<f64>, (usize, usize)); 2] =
        [(&bc.neumann_x, (1, 0)), (&bc.neumann_y, (0, 1))];
    for (channel, (oi, oj)) in groups {
        for i in 0..n {
            for j in 0..n {
                let (i2, j2) = (i + oi, j + oj);
                if i2 >= n || j2 >= n {
                    continue;
                }
                let active1 = (0..dof).any(|c| is_imposed(channel.at4(0, i, j, c)));
                let active2 = (0..dof).any(|c| is_imposed(channel.at4(0, i2, j2, c)));
                if !active1 || !active2 {
                    continue;
                }
                for c in 0..dof {
                    let v = |vv: f64| if vv > 0.0 { bc.norm.denormalize_flux(vv) } else { 0.0 };
                    let j1 = v(channel.at4(0, i, j, c));
                    let j2v = v(channel.at4(0, i2, j2, c));
                    for qp in 0..2 {
                        let nv = &surface.n_values[qp];
                        let w = surface.weights[qp] * surface.det_j;
                        let val = nv[0] * j1 + nv[1] * j2v;
                        let idx1 = neumann.idx4(0, i, j, c);
                        neumann.data_mut()[idx1] += w * nv[0] * val;
                        let idx2 = neumann.idx4(0, i2, j2, c);
                        neumann.data_mut()[idx2] += w * nv[1] * val;
                    }
                }
            }
        }
    }

    let total = bulk.zip(&neumann, |b, s| b - s);
    let reduced_mask = masks.m_bulk.zip(&masks.m_d_rev, |a, b| a * b);
    let reduced = total.zip(&reduced_mask, |t, m| t * m);
    Ok(ResidualBundle { bulk, neumann, total, reduced })
}

/// Equation numbering: one index per in-domain, non-Dirichlet (pixel,
/// component) pair.
struct DofMap {
    /// n*n*dof -> equation index.
    map: Vec<Option<usize>>,
    n_eq: usize,
}

fn build_dof_map(masks: &BcMasks<f64>) -> DofMap {
    // Only element-supported in-domain pixels carry equations; isolated
    // staircase pixels have empty stiffness rows.
    let mut map = vec![None; masks.m_bulk.len()];
    let mut n_eq = 0;
    for idx in 0..map.len() {
        if masks.m_bulk.data()[idx] == 1.0 && masks.dirichlet_mask.data()[idx] == 0.0 {
            map[idx] = Some(n_eq);
            n_eq += 1;
        }
    }
    DofMap { map, n_eq }
}

/// Sparse matrix in triplet form with compressed-row conversion.
pub struct SparseSystem {
    pub n_eq: usize,
    triplets: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
}

struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSystem {
    fn new(n_eq: usize) -> Self {
        Self { n_eq, triplets: Vec::new(), rhs: vec![0.0; n_eq] }
    }

    fn add(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            self.triplets.push((r, c, v));
        }
    }

    fn to_csr(&self) -> Csr {
        let mut row_counts = vec![0usize; self.n_eq + 1];
        // Merge duplicate entries by sorting per row.
        let mut sorted = self.triplets.clone();
        sorted.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            if let Some(last) = merged.last_mut() {
                if last.0 == r && last.1 == c {
                    last.2 += v;
                    continue;
                }
            }
            merged.push((r, c, v));
        }
        for &(r, _, _) in &merged {
            row_counts[r + 1] += 1;
        }
        for i in 0..self.n_eq {
            row_counts[i + 1] += row_counts[i];
        }
        let mut cols = Vec::with_capacity(merged.len());
        let mut vals = Vec::with_capacity(merged.len());
        for (_, c, v) in merged {
            cols.push(c);
            vals.push(v);
        }
        Csr { row_ptr: row_counts, cols, vals }
    }
}

impl Csr {
    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.row_ptr.len() - 1 {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
    }

    fn diagonal(&self, n: usize) -> Vec<f64> {
        let mut d = vec![1.0; n];
        for r in 0..n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.cols[r.min(self.cols.len() - 1)] == r && false {
                    // unreachable; kept simple below
                }
                if self.cols[k] == r {
                    d[r] = self.vals[k];
                }
            }
        }
        d
    }
}

/// Jacobi-preconditioned conjugate gradient, relative tolerance on ||r||.
fn solve_cg(csr: &Csr, rhs: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = rhs.len();
    let diag = csr.diagonal(n);
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let norm_b = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        csr.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::SolverDiverged { iterations: it, residual: f64::NAN });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let norm_r = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_r <= tol * norm_b {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let norm_r = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(Error::SolverDiverged { iterations: max_iter, residual: norm_r / norm_b })
}

/// Dense Cholesky for moderate systems; errors on non-positive pivots.
fn solve_dense_cholesky(csr: &Csr, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    let mut a = vec![0.0; n * n];
    for r in 0..n {
        for k in csr.row_ptr[r]..csr.row_ptr[r + 1] {
            a[r * n + csr.cols[k]] = csr.vals[k];
        }
    }
    // In-place lower Cholesky.
    for k in 0..n {
        let mut d = a[k * n + k];
        for p in 0..k {
            d -= a[k * n + p] * a[k * n + p];
        }
        if d <= 0.0 {
            return Err(Error::SolverDiverged { iterations: k, residual: d });
        }
        let d = d.sqrt();
        a[k * n + k] = d;
        for r in k + 1..n {
            let mut v = a[r * n + k];
            for p in 0..k {
                v -= a[r * n + p] * a[k * n + p];
            }
            a[r * n + k] = v / d;
        }
    }
    // Forward then backward substitution.
    let mut y = rhs.to_vec();
    for r in 0..n {
        for p in 0..r {
            y[r] -= a[r * n + p] * y[p];
        }
        y[r] /= a[r * n + r];
    }
    for r in (0..n).rev() {
        for p in r + 1..n {
            y[r] -= a[p * n + r] * y[p];
        }
        y[r] /= a[r * n + r];
    }
    Ok(y)
}

const DENSE_LIMIT: usize = 2600;

fn solve_spd(sys: &SparseSystem) -> Result<Vec<f64>> {
    let csr = sys.to_csr();
    if sys.n_eq <= DENSE_LIMIT {
        solve_dense_cholesky(&csr, &sys.rhs)
    } else {
        solve_cg(&csr, &sys.rhs, 1e-12, 20_000)
    }
}

/// Assemble the tangent system K delta = -R restricted to free equations,
/// linearized about `state` (physical units, Dirichlet already imposed).
fn assemble_tangent(
    state: &FieldTensor<f64>,
    bc: &BcChannels<f64>,
    material: &Material,
    grid: &GridSpec,
    masks: &BcMasks<f64>,
    dofmap: &DofMap,
    residual: &FieldTensor<f64>,
) -> Result<SparseSystem> {
    let (n, dof) = (bc.n(), bc.dof());
    let tables = build_basis_tables::<f64>(&grid.clone());
    let mut sys = SparseSystem::new(dofmap.n_eq);

    // Sign flip keeps the system positive definite for diffusion, whose
    // flux tangent is negative definite.
    let sign = match material {
        Material::Diffusion(_) => -1.0,
        _ => 1.0,
    };

    for i in 0..n - 1 {
        for j in 0..n - 1 {
            if masks.element_valid.at4(0, i, j, 0) == 0.0 {
                continue;
            }
            let u = gather_nodal(state, i, j, dof);
            let nloc = 4 * dof;
            let mut ke = vec![0.0; nloc * nloc];
            for qp in 0..4 {
                let grad = qp_gradient(&tables, qp, &u, dof);
                let t = a_tangent(material, grad).map_err(|e| match e {
                    Error::SingularDeformation { j: jv, .. } => {
                        Error::SingularDeformation { j: jv, row: i, col: j, qp }
                    }
                    other => other,
                })?;
                let w = tables.weights[qp] * tables.det_j;
                for a in 0..4 {
                    for c in 0..dof {
                        for b in 0..4 {
                            for e in 0..dof {
                                let mut v = 0.0;
                                for d in 0..2 {
                                    for f in 0..2 {
                                        v += tables.b_values[qp][d][a]
                                            * t[c][d][e][f]
                                            * tables.b_values[qp][f][b];
                                    }
                                }
                                ke[(a * dof + c) * nloc + (b * dof + e)] += w * v;
                            }
                        }
                    }
                }
            }
            // Scatter with Dirichlet elimination.
            for (a, &(di, dj)) in NODE_OFFSETS.iter().enumerate() {
                for c in 0..dof {
                    let gi = state.idx4(0, i + di, j + dj, c);
                    let Some(row) = dofmap.map[gi] else { continue };
                    for (b, &(ei, ej)) in NODE_OFFSETS.iter().enumerate() {
                        for e in 0..dof {
                            let gj = state.idx4(0, i + ei, j + ej, e);
                            let v = sign * ke[(a * dof + c) * nloc + (b * dof + e)];
                            if let Some(col) = dofmap.map[gj] {
                                sys.add(row, col, v);
                            }
                            // Dirichlet columns multiply known values, which
                            // are already inside `state`; the residual terms
                            // account for them, so nothing to move here.
                        }
                    }
                }
            }
        }
    }
    // Right-hand side: -R at free equations (sign-adjusted).
    for idx in 0..residual.len() {
        if let Some(row) = dofmap.map[idx] {
            sys.rhs[row] = -sign * residual.data()[idx];
        }
    }
    Ok(sys)
}

fn free_residual_rms(residual: &FieldTensor<f64>, dofmap: &DofMap) -> f64 {
    if dofmap.n_eq == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for idx in 0..residual.len() {
        if dofmap.map[idx].is_some() {
            let v = residual.data()[idx];
            acc += v * v;
        }
    }
    (acc / dofmap.n_eq as f64).sqrt()
}

/// Direct solve of a linear BVP (diffusion or linear elasticity); returns
/// the physical solution field with Dirichlet values imposed.
pub fn solve_linear(
    bc: &BcChannels<f64>,
    material: &Material,
    grid: &GridSpec,
) -> Result<FieldTensor<f64>> {
    if matches!(material, Material::Nonlinear(_)) {
        return Err(Error::Contract("solve_linear cannot handle nonlinear physics".into()));
    }
    let masks = build_masks(bc);
    if masks.dirichlet_mask.data().iter().all(|&m| m == 0.0) {
        return Err(Error::WellPosedness("no Dirichlet pixel constrains the field".into()));
    }
    let dofmap = build_dof_map(&masks);
    let zero = FieldTensor::zeros(masks.in_domain.shape());
    let state = impose_dirichlet_loop(&zero, &masks);
    // Residual at the Dirichlet-only state provides the load vector; one
    // tangent solve is exact for linear physics.
    let clamp = JClampPolicy::disabled();
    let res = loop_residual(&zero, bc, material, &clamp, grid)?;
    let sys = assemble_tangent(&state, bc, material, grid, &masks, &dofmap, &res.total)?;
    let delta = solve_spd(&sys).map_err(|e| match e {
        Error::SolverDiverged { .. } => {
            Error::WellPosedness("singular stiffness (insufficient constraints)".into())
        }
        other => other,
    })?;
    let mut out = state;
    for idx in 0..out.len() {
        if let Some(eq) = dofmap.map[idx] {
            out.data_mut()[idx] += delta[eq];
        }
    }
    Ok(out)
}

/// Scale all imposed boundary data (Dirichlet and Neumann) by `s` in
/// physical space.
fn scale_bc(bc: &BcChannels<f64>, s: f64) -> BcChannels<f64> {
    let scale_field = |field: &FieldTensor<f64>, denorm: &dyn Fn(f64) -> f64, norm: &dyn Fn(f64) -> f64| {
        field.map(|v| if v > 0.0 { norm(denorm(v) * s) } else { v })
    };
    let n = bc.norm;
    BcChannels {
        dirichlet: scale_field(
            &bc.dirichlet,
            &|v| n.denormalize_solution(v),
            &|u| 0.5 + u / (2.0 * n.solution_amp),
        ),
        neumann_x: scale_field(
            &bc.neumann_x,
            &|v| n.denormalize_flux(v),
            &|u| 0.5 + u / (2.0 * n.flux_amp),
        ),
        neumann_y: scale_field(
            &bc.neumann_y,
            &|v| n.denormalize_flux(v),
            &|u| 0.5 + u / (2.0 * n.flux_amp),
        ),
        norm: n,
    }
}

pub struct NewtonReport {
    pub field: FieldTensor<f64>,
    pub load_steps: usize,
    pub total_iterations: usize,
}

/// Incremental-loading Newton-Raphson for the nonlinear problem.
/// Residual RMS tolerance 1e-10, at most 25 iterations per step, with
/// adaptive halving of a failed load increment.
pub fn solve_nonlinear(
    bc: &BcChannels<f64>,
    material: &Material,
    grid: &GridSpec,
    load_steps: usize,
) -> Result<NewtonReport> {
    if !matches!(material, Material::Nonlinear(_)) {
        return Err(Error::Contract("solve_nonlinear expects nonlinear physics".into()));
    }
    let clamp = JClampPolicy::disabled();
    let steps = load_steps.max(1);
    let full_masks = build_masks(bc);
    if full_masks.dirichlet_mask.data().iter().all(|&m| m == 0.0) {
        return Err(Error::WellPosedness("no Dirichlet pixel constrains the field".into()));
    }
    let mut field = FieldTensor::zeros(full_masks.in_domain.shape());
    let mut s = 0.0;
    let mut ds = 1.0 / steps as f64;
    let min_ds = ds / 64.0;
    let mut total_iterations = 0;
    let mut steps_taken = 0;

    while s < 1.0 - 1e-12 {
        let target = (s + ds).min(1.0);
        let bc_s = scale_bc(bc, target);
        let masks = build_masks(&bc_s);
        let dofmap = build_dof_map(&masks);
        let mut state = impose_dirichlet_loop(&field, &masks);
        let mut converged = false;
        let mut last_rms = f64::INFINITY;
        for _ in 0..25 {
            total_iterations += 1;
            let res = loop_residual(&state, &bc_s, material, &clamp, grid)?;
            last_rms = free_residual_rms(&res.total, &dofmap);
            if last_rms <= 1e-10 {
                converged = true;
                break;
            }
            let sys =
                assemble_tangent(&state, &bc_s, material, grid, &masks, &dofmap, &res.total);
            let delta = match sys.and_then(|s| solve_spd(&s)) {
                Ok(d) => d,
                Err(_) => break,
            };
            for idx in 0..state.len() {
                if let Some(eq) = dofmap.map[idx] {
                    state.data_mut()[idx] += delta[eq];
                }
            }
        }
        if converged {
            field = state;
            s = target;
            steps_taken += 1;
        } else {
            ds /= 2.0;
            if ds < min_ds {
                return Err(Error::NewtonDiverged { step: steps_taken, residual: last_rms });
            }
        }
    }
    Ok(NewtonReport { field, load_steps: steps_taken, total_iterations })
}

/// Monotonic wall-clock timing of one invocation, in milliseconds.
pub fn wall_time_probe<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{
        encode_bvp, BcAssign, BcKind, DomainSpec, EdgeSel, MarkerMode, Normalization, Profile,
        Side, DEFAULT_LAMBDA, DEFAULT_MU,
    };
    use crate::physics::{DiffusionParams, LameParams};

    fn linear_field_bc(n: usize) -> (BcChannels<f64>, GridSpec) {
        let grid = GridSpec::new(n).unwrap();
        let norm = Normalization::default();
        let assigns = [
            BcAssign {
                edge: EdgeSel::Side(Side::Left),
                kind: BcKind::Dirichlet,
                profile: Profile::Constant { value: 0.5 },
                component: 0,
            },
            BcAssign {
                edge: EdgeSel::Side(Side::Right),
                kind: BcKind::Dirichlet,
                profile: Profile::Constant { value: 1.0 },
                component: 0,
            },
        ];
        let bc = encode_bvp(&DomainSpec::Full, &assigns, &grid, 1, norm, MarkerMode::Small)
            .unwrap();
        (bc, grid)
    }

    #[test]
    fn diffusion_linear_field_is_exact() {
        let (bc, grid) = linear_field_bc(9);
        let material = Material::Diffusion(DiffusionParams::new(1.0).unwrap());
        let sol = solve_linear(&bc, &material, &grid).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let x = j as f64 * grid.h();
                assert!(
                    (sol.at4(0, i, j, 0) - x).abs() < 1e-10,
                    "C({i},{j}) = {} vs {x}",
                    sol.at4(0, i, j, 0)
                );
            }
        }
    }

    #[test]
    fn diffusion_constant_dirichlet_gives_constant_interior() {
        let grid = GridSpec::new(8).unwrap();
        let norm = Normalization::default();
        let c0 = 0.37;
        let value = norm.normalize_solution(c0).unwrap();
        let assigns: Vec<BcAssign> = [Side::Left, Side::Right, Side::Top, Side::Bottom]
            .into_iter()
            .map(|side| BcAssign {
                edge: EdgeSel::Side(side),
                kind: BcKind::Dirichlet,
                profile: Profile::Constant { value },
                component: 0,
            })
            .collect();
        let bc = encode_bvp(&DomainSpec::Full, &assigns, &grid, 1, norm, MarkerMode::Small)
            .unwrap();
        let material = Material::Diffusion(DiffusionParams::new(10.0).unwrap());
        let sol = solve_linear(&bc, &material, &grid).unwrap();
        for v in sol.data() {
            assert!((v - c0).abs() < 1e-11);
        }
    }

    #[test]
    fn missing_dirichlet_is_ill_posed() {
        let grid = GridSpec::new(6).unwrap();
        let bc = encode_bvp(
            &DomainSpec::Full,
            &[],
            &grid,
            1,
            Normalization::default(),
            MarkerMode::Small,
        )
        .unwrap();
        let material = Material::Diffusion(DiffusionParams::new(1.0).unwrap());
        assert!(matches!(
            solve_linear(&bc, &material, &grid),
            Err(Error::WellPosedness(_))
        ));
    }

    /// Uniform-strain Dirichlet data must be reproduced to machine
    /// precision by linear elasticity.
    #[test]
    fn elasticity_patch_test() {
        let n = 7;
        let grid = GridSpec::new(n).unwrap();
        let norm = Normalization::new(1.0, 1.0).unwrap();
        let (a, b, c, d) = (0.013, -0.007, 0.009, 0.011);
        let exact = |x: f64, y: f64| (a * x + b * y + 0.02, c * x + d * y + 0.015);

        let shape = [1, n, n, 2];
        let mut dirichlet = FieldTensor::zeros(&shape);
        let neumann = FieldTensor::zeros(&shape);
        for i in 0..n {
            for j in 0..n {
                let boundary = i == 0 || j == 0 || i == n - 1 || j == n - 1;
                if boundary {
                    let (x, y) = grid.xy(i, j);
                    let (ux, uy) = exact(x, y);
                    let iu = dirichlet.idx4(0, i, j, 0);
                    dirichlet.data_mut()[iu] = norm.normalize_solution(ux).unwrap();
                    let iv = dirichlet.idx4(0, i, j, 1);
                    dirichlet.data_mut()[iv] = norm.normalize_solution(uy).unwrap();
                }
            }
        }
        let bc = BcChannels::new(dirichlet, neumann.clone(), neumann, norm).unwrap();
        let material =
            Material::Linear(LameParams::new(DEFAULT_LAMBDA, DEFAULT_MU).unwrap());
        let sol = solve_linear(&bc, &material, &grid).unwrap();
        for i in 0..n {
            for j in 0..n {
                let (x, y) = grid.xy(i, j);
                let (ux, uy) = exact(x, y);
                assert!((sol.at4(0, i, j, 0) - ux).abs() < 1e-12);
                assert!((sol.at4(0, i, j, 1) - uy).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nonlinear_zero_load_converges_immediately() {
        let grid = GridSpec::new(6).unwrap();
        let norm = Normalization::default();
        let zero = norm.normalize_solution(0.0).unwrap();
        let assigns = [
            BcAssign {
                edge: EdgeSel::Side(Side::Left),
                kind: BcKind::Dirichlet,
                profile: Profile::Constant { value: zero },
                component: 0,
            },
            BcAssign {
                edge: EdgeSel::Side(Side::Left),
                kind: BcKind::Dirichlet,
                profile: Profile::Constant { value: zero },
                component: 1,
            },
        ];
        let bc = encode_bvp(&DomainSpec::Full, &assigns, &grid, 2, norm, MarkerMode::Small)
            .unwrap();
        let material =
            Material::Nonlinear(LameParams::new(DEFAULT_LAMBDA, DEFAULT_MU).unwrap());
        let report = solve_nonlinear(&bc, &material, &grid, 1).unwrap();
        assert_eq!(report.total_iterations, 1);
        assert!(report.field.max_abs() == 0.0);
    }

    /// Small loads: the nonlinear solution approaches the linear one with
    /// O(load^2) error (checked via a halving sequence).
    #[test]
    fn nonlinear_linearizes_at_small_load() {
        let n = 8;
        let grid = GridSpec::new(n).unwrap();
        let norm = Normalization::new(1.0, 1.0).unwrap();
        let zero = norm.normalize_solution(0.0).unwrap();
        let mut errs = Vec::new();
        for k in 0..3 {
            let load = 0.02 / f64::powi(2.0, k);
            let assigns = [
                BcAssign {
                    edge: EdgeSel::Side(Side::Left),
                    kind: BcKind::Dirichlet,
                    profile: Profile::Constant { value: zero },
                    component: 0,
                },
                BcAssign {
                    edge: EdgeSel::Side(Side::Left),
                    kind: BcKind::Dirichlet,
                    profile: Profile::Constant { value: zero },
                    component: 1,
                },
                BcAssign {
                    edge: EdgeSel::Side(Side::Right),
                    kind: BcKind::Dirichlet,
                    profile: Profile::Constant {
                        value: norm.normalize_solution(load).unwrap(),
                    },
                    component: 0,
                },
            ];
            let bc = encode_bvp(&DomainSpec::Full, &assigns, &grid, 2, norm, MarkerMode::Small)
                .unwrap();
            let lame = LameParams::new(DEFAULT_LAMBDA, DEFAULT_MU).unwrap();
            let lin = solve_linear(&bc, &Material::Linear(lame), &grid).unwrap();
            let non = solve_nonlinear(&bc, &Material::Nonlinear(lame), &grid, 2)
                .unwrap()
                .field;
            let diff = lin.zip(&non, |a, b| a - b).max_abs() / load;
            errs.push(diff);
        }
        // Relative deviation shrinks linearly with load (absolute is
        // quadratic), so each halving should halve the normalized error.
        assert!(errs[1] < 0.7 * errs[0], "{errs:?}");
        assert!(errs[2] < 0.7 * errs[1], "{errs:?}");
    }

    #[test]
    fn timing_probe_reports_positive_elapsed() {
        let (out, ms) = wall_time_probe(|| {
            let mut acc = 0.0f64;
            for i in 0..200_000 {
                acc += (i as f64).sqrt();
            }
            acc
        });
        assert!(out > 0.0);
        assert!(ms > 0.0);
    }
}
