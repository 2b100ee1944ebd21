//! Weak-form residual engine: vectorized convolution-stencil evaluation of
//! the discretized PDE residual (bulk + Neumann, masked) for batches of
//! boundary value problems, differentiable end to end.
//!
//! Channel conventions for a batch of BVPs on an n x n grid with `dof`
//! solution components per pixel:
//!   dirichlet  (B, n, n, dof): imposed values in (0, 1] (normalized),
//!                              interior marker 0 or -2, margin -1
//!   neumann_x  (B, n, n, dof): flux/traction on x-normal (vertical) facets
//!   neumann_y  (B, n, n, dof): flux/traction on y-normal (horizontal) facets

use crate::dataset::Normalization;
use crate::error::{Error, Result};
use crate::mesh::{build_basis_tables, build_surface_tables, BasisTables, GridSpec, NODE_OFFSETS};
use crate::ops::{self, Padding};
use crate::physics::{self, JClampPolicy, Material};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::FieldTensor;

/// Marker value for background-grid pixels outside the problem domain.
pub const MARGIN: f64 = -1.0;
/// Marker for interior pixels that get a fresh random fill each batch.
pub const FILL_MARKER: f64 = -2.0;

pub fn is_margin<T: Scalar>(v: T) -> bool {
    (v.to_f64().unwrap() - MARGIN).abs() < 0.25
}

pub fn is_imposed<T: Scalar>(v: T) -> bool {
    v > T::zero()
}

/// Channel-encoded boundary conditions for a batch of BVPs.
#[derive(Debug, Clone)]
pub struct BcChannels<T> {
    pub dirichlet: FieldTensor<T>,
    pub neumann_x: FieldTensor<T>,
    pub neumann_y: FieldTensor<T>,
    pub norm: Normalization,
}

impl<T: Scalar> BcChannels<T> {
    pub fn new(
        dirichlet: FieldTensor<T>,
        neumann_x: FieldTensor<T>,
        neumann_y: FieldTensor<T>,
        norm: Normalization,
    ) -> Result<Self> {
        let sh = dirichlet.shape();
        if sh.len() != 4 || sh[1] != sh[2] {
            return Err(Error::Dimension(format!(
                "BC channels must be (batch, n, n, dof), got {sh:?}"
            )));
        }
        if neumann_x.shape() != sh || neumann_y.shape() != sh {
            return Err(Error::Dimension(
                "Dirichlet/Neumann channel shapes differ".into(),
            ));
        }
        if !matches!(sh[3], 1 | 2) {
            return Err(Error::Dimension(format!("dof must be 1 or 2, got {}", sh[3])));
        }
        Ok(Self { dirichlet, neumann_x, neumann_y, norm })
    }

    pub fn batch(&self) -> usize {
        self.dirichlet.shape()[0]
    }

    pub fn n(&self) -> usize {
        self.dirichlet.shape()[1]
    }

    pub fn dof(&self) -> usize {
        self.dirichlet.shape()[3]
    }

    /// Stack single-example channel sets into one batch.
    pub fn stack(parts: &[&BcChannels<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Dimension("empty stack".into()))?;
        let d: Vec<&FieldTensor<T>> = parts.iter().map(|p| &p.dirichlet).collect();
        let nx: Vec<&FieldTensor<T>> = parts.iter().map(|p| &p.neumann_x).collect();
        let ny: Vec<&FieldTensor<T>> = parts.iter().map(|p| &p.neumann_y).collect();
        Ok(Self {
            dirichlet: ops::concat(&d, 0)?,
            neumann_x: ops::concat(&nx, 0)?,
            neumann_y: ops::concat(&ny, 0)?,
            norm: first.norm,
        })
    }

    /// Check the marker layout: margin pixels carry -1 in every channel,
    /// all other entries are markers (0, -2) or normalized values in (0, 1].
    pub fn validate(&self) -> Result<()> {
        let (b, n, dof) = (self.batch(), self.n(), self.dof());
        let channels = [&self.dirichlet, &self.neumann_x, &self.neumann_y];
        for bi in 0..b {
            for i in 0..n {
                for j in 0..n {
                    let margin = is_margin(self.dirichlet.at4(bi, i, j, 0));
                    for (ci, ch) in channels.iter().enumerate() {
                        for c in 0..dof {
                            let v = ch.at4(bi, i, j, c).to_f64().unwrap();
                            if margin {
                                if (v - MARGIN).abs() > 1e-6 {
                                    return Err(Error::Encoding(format!(
                                        "margin pixel ({i},{j}) carries {v} in channel group {ci}"
                                    )));
                                }
                            } else if ci == 0 {
                                let ok = v == 0.0
                                    || (v - FILL_MARKER).abs() < 1e-6
                                    || (v > 0.0 && v <= 1.0 + 1e-9);
                                if !ok {
                                    return Err(Error::Encoding(format!(
                                        "bad Dirichlet entry {v} at ({i},{j})"
                                    )));
                                }
                            } else {
                                let ok = v == 0.0 || (v > 0.0 && v <= 1.0 + 1e-9);
                                if !ok {
                                    return Err(Error::Encoding(format!(
                                        "bad Neumann entry {v} at ({i},{j})"
                                    )));
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Constant masks and imposed-value fields derived from one BC batch.
pub struct BcMasks<T> {
    /// 1 on in-domain pixels, 0 on margin; (B, n, n, dof).
    pub in_domain: FieldTensor<T>,
    /// Pixel-level bulk mask: zeroes the margin and staircase pixels that
    /// no valid element supports; (B, n, n, dof).
    pub m_bulk: FieldTensor<T>,
    /// Reverse Dirichlet mask (zeroes imposed pixels); (B, n, n, dof).
    pub m_d_rev: FieldTensor<T>,
    /// 1 where a Dirichlet value is imposed; (B, n, n, dof).
    pub dirichlet_mask: FieldTensor<T>,
    /// Denormalized imposed values, 0 elsewhere; (B, n, n, dof).
    pub dirichlet_values: FieldTensor<T>,
    /// 1 on elements whose four corners are all in-domain; (B, n, n, 1),
    /// zero on the trailing row/column.
    pub element_valid: FieldTensor<T>,
}

pub fn build_masks<T: Scalar>(bc: &BcChannels<T>) -> BcMasks<T> {
    let (b, n, dof) = (bc.batch(), bc.n(), bc.dof());
    let shape = [b, n, n, dof];
    let mut in_domain = FieldTensor::zeros(&shape);
    let mut m_d_rev = FieldTensor::zeros(&shape);
    let mut d_mask = FieldTensor::zeros(&shape);
    let mut d_values = FieldTensor::zeros(&shape);
    for bi in 0..b {
        for i in 0..n {
            for j in 0..n {
                let margin = is_margin(bc.dirichlet.at4(bi, i, j, 0));
                for c in 0..dof {
                    let idx = bc.dirichlet.idx4(bi, i, j, c);
                    let v = bc.dirichlet.data()[idx];
                    if !margin {
                        in_domain.data_mut()[idx] = T::one();
                    }
                    if is_imposed(v) {
                        d_mask.data_mut()[idx] = T::one();
                        d_values.data_mut()[idx] =
                            T::from_f64_lossy(bc.norm.denormalize_solution(v.to_f64().unwrap()));
                    } else {
                        m_d_rev.data_mut()[idx] = T::one();
                    }
                }
            }
        }
    }
    let mut element_valid = FieldTensor::zeros(&[b, n, n, 1]);
    let mut supported = vec![false; b * n * n];
    for bi in 0..b {
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                let ok = NODE_OFFSETS
                    .iter()
                    .all(|&(di, dj)| !is_margin(bc.dirichlet.at4(bi, i + di, j + dj, 0)));
                if ok {
                    let idx = element_valid.idx4(bi, i, j, 0);
                    element_valid.data_mut()[idx] = T::one();
                    for &(di, dj) in &NODE_OFFSETS {
                        supported[(bi * n + i + di) * n + j + dj] = true;
                    }
                }
            }
        }
    }
    // m_bulk zeroes the margin and unsupported staircase pixels; m_d_rev
    // additionally zeroes imposed pixels.
    let mut m_bulk = in_domain.clone();
    for p in 0..b * n * n {
        if !supported[p] {
            for c in 0..dof {
                m_bulk.data_mut()[p * dof + c] = T::zero();
            }
        }
    }
    let m_d_rev = m_d_rev.zip(&m_bulk, |a, b| a * b);
    BcMasks {
        in_domain,
        m_bulk,
        m_d_rev,
        dirichlet_mask: d_mask,
        dirichlet_values: d_values,
        element_valid,
    }
}

fn repeat_channel<T: Scalar>(mask: &FieldTensor<T>, k: usize) -> FieldTensor<T> {
    let sh = mask.shape();
    debug_assert_eq!(sh[3], 1);
    let mut out = FieldTensor::zeros(&[sh[0], sh[1], sh[2], k]);
    for (i, &v) in mask.data().iter().enumerate() {
        for c in 0..k {
            out.data_mut()[i * k + c] = v;
        }
    }
    out
}

/// One-hot 2x2 gather kernel (2, 2, dof, nodes*dof) selecting the node-major
/// channel layout: output channel a*dof + c holds component c at offset a.
fn gather_kernel<T: Scalar>(offsets: &[(usize, usize)], dof: usize) -> FieldTensor<T> {
    let nodes = offsets.len();
    let mut k = FieldTensor::zeros(&[2, 2, dof, nodes * dof]);
    for (a, &(di, dj)) in offsets.iter().enumerate() {
        for c in 0..dof {
            let idx = ((di * 2 + dj) * dof + c) * (nodes * dof) + a * dof + c;
            k.data_mut()[idx] = T::one();
        }
    }
    k
}

/// Tape nodes produced by one residual evaluation.
pub struct ResidualVars {
    /// Solution with Dirichlet values imposed (physical units).
    pub imposed: Var,
    pub bulk: Var,
    pub total: Var,
    pub reduced: Var,
}

/// Precomputed stencil tables for one (grid, material) pair.
pub struct ResidualEngine<T: Scalar> {
    pub grid: GridSpec,
    pub material: Material,
    pub clamp: JClampPolicy,
    dof: usize,
    surface_tables: BasisTables<T>,
    /// (2, 2, dof, 4*dof) one-hot node gather.
    gather4: FieldTensor<T>,
    /// Per quadrature point (1, 1, 4*dof, 2*dof): nodal values -> gradients.
    grad_maps: Vec<FieldTensor<T>>,
    /// Per quadrature point (1, 1, 2*dof, 4*dof): flux/stress -> element
    /// residual, with w * detJ folded in.
    scatter_maps: Vec<FieldTensor<T>>,
    /// Constitutive channel map for linear elasticity (1, 1, 4, 4).
    linear_map: Option<FieldTensor<T>>,
}

impl<T: Scalar> ResidualEngine<T> {
    pub fn new(grid: GridSpec, material: Material, clamp: JClampPolicy) -> Self {
        let dof = material.dof();
        let bulk_tables = build_basis_tables::<T>(&grid);
        let surface_tables = build_surface_tables::<T>(&grid);

        let mut grad_maps = Vec::with_capacity(4);
        let mut scatter_maps = Vec::with_capacity(4);
        for qp in 0..4 {
            let bt = &bulk_tables.b_values[qp];
            let w = bulk_tables.weights[qp] * bulk_tables.det_j;
            // in: a*dof + c, out: c*2 + d
            let mut gm = FieldTensor::zeros(&[1, 1, 4 * dof, 2 * dof]);
            // in: c*2 + d, out: a*dof + c
            let mut sm = FieldTensor::zeros(&[1, 1, 2 * dof, 4 * dof]);
            for a in 0..4 {
                for c in 0..dof {
                    for d in 0..2 {
                        let gi = (a * dof + c) * (2 * dof) + (c * 2 + d);
                        gm.data_mut()[gi] = bt[d][a];
                        let si = (c * 2 + d) * (4 * dof) + (a * dof + c);
                        sm.data_mut()[si] = w * bt[d][a];
                    }
                }
            }
            grad_maps.push(gm);
            scatter_maps.push(sm);
        }

        let linear_map = match &material {
            Material::Linear(p) => {
                let lambda = T::from_f64_lossy(p.lambda);
                let mu = T::from_f64_lossy(p.mu);
                let two_mu = mu + mu;
                // Stress channels from gradient channels, both laid out c*2+d.
                let mut m = FieldTensor::zeros(&[1, 1, 4, 4]);
                let set = |m: &mut FieldTensor<T>, ci: usize, co: usize, v: T| {
                    m.data_mut()[ci * 4 + co] = v;
                };
                // s00 = (lambda + 2mu) g00 + lambda g11
                set(&mut m, 0, 0, lambda + two_mu);
                set(&mut m, 3, 0, lambda);
                // s01 = s10 = mu (g01 + g10)
                set(&mut m, 1, 1, mu);
                set(&mut m, 2, 1, mu);
                set(&mut m, 1, 2, mu);
                set(&mut m, 2, 2, mu);
                // s11 = lambda g00 + (lambda + 2mu) g11
                set(&mut m, 0, 3, lambda);
                set(&mut m, 3, 3, lambda + two_mu);
                Some(m)
            }
            _ => None,
        };

        Self {
            grid,
            material,
            clamp,
            dof,
            surface_tables,
            gather4: gather_kernel(&NODE_OFFSETS, dof),
            grad_maps,
            scatter_maps,
            linear_map,
        }
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Replace solution entries at Dirichlet pixels by the imposed physical
    /// values; gradients do not flow through replaced entries.
    pub fn impose_dirichlet(
        &self,
        tape: &mut Tape<T>,
        solution: Var,
        masks: &BcMasks<T>,
    ) -> Result<Var> {
        let keep = masks.dirichlet_mask.map(|v| T::one() - v);
        let imposed_vals = masks.dirichlet_values.zip(&masks.dirichlet_mask, |v, m| v * m);
        let kept = tape.mask_mul(solution, keep)?;
        tape.add_field(kept, imposed_vals)
    }

    /// Node-to-element gather: channel a*dof + c of the output holds
    /// component c at node offset a, zero-padded on the trailing row/column.
    pub fn gather_elements(&self, tape: &mut Tape<T>, field: Var) -> Result<Var> {
        let kernel = tape.constant(self.gather4.clone());
        tape.conv2d(field, kernel, Padding::Same)
    }

    /// Element-like contributions scattered back to nodes via cyclic shifts
    /// and summed over the four local nodes.
    pub fn scatter_elements(&self, tape: &mut Tape<T>, elem: Var) -> Result<Var> {
        let sh = tape.value(elem).shape().to_vec();
        let (b, n, dof) = (sh[0], sh[1], self.dof);
        let mut acc: Option<Var> = None;
        for (a, &(di, dj)) in NODE_OFFSETS.iter().enumerate() {
            let part = tape.slice(elem, &[0, 0, 0, a * dof], &[b, n, n, dof])?;
            let moved = match (di, dj) {
                (0, 0) => part,
                (0, 1) => tape.roll(part, &[1], &[2])?,
                (1, 0) => tape.roll(part, &[1], &[1])?,
                _ => tape.roll(part, &[1, 1], &[1, 2])?,
            };
            acc = Some(match acc {
                Some(prev) => tape.add(prev, moved)?,
                None => moved,
            });
        }
        Ok(acc.unwrap())
    }

    /// Neo-Hookean Piola stress from gradient channels [g00, g01, g10, g11],
    /// with quadrature points outside the clamp window (and invalid
    /// elements) masked to zero.
    fn nonlinear_stress_channels(
        &self,
        tape: &mut Tape<T>,
        grad: Var,
        masks: &BcMasks<T>,
        params: &physics::LameParams,
    ) -> Result<Var> {
        let sh = tape.value(grad).shape().to_vec();
        let (b, n) = (sh[0], sh[1]);
        let g00 = tape.slice(grad, &[0, 0, 0, 0], &[b, n, n, 1])?;
        let g01 = tape.slice(grad, &[0, 0, 0, 1], &[b, n, n, 1])?;
        let g10 = tape.slice(grad, &[0, 0, 0, 2], &[b, n, n, 1])?;
        let g11 = tape.slice(grad, &[0, 0, 0, 3], &[b, n, n, 1])?;
        let f00 = tape.add_scalar(g00, T::one());
        let f11 = tape.add_scalar(g11, T::one());
        let t1 = tape.mul(f00, f11)?;
        let t2 = tape.mul(g01, g10)?;
        let j = tape.sub(t1, t2)?;

        // Quadrature-point mask: inside the clamp window and on a valid
        // element. With clamping disabled a non-positive J on a valid
        // element is an error; invalid elements stay masked so the inverse
        // below is finite everywhere.
        let j_vals = tape.value(j).clone();
        let mut qmask = masks.element_valid.clone();
        for bi in 0..b {
            for i in 0..n {
                for jj in 0..n {
                    let idx = qmask.idx4(bi, i, jj, 0);
                    if qmask.data()[idx] == T::zero() {
                        continue;
                    }
                    let jv = j_vals.data()[idx].to_f64().unwrap();
                    if self.clamp.enabled {
                        if !self.clamp.inside(jv) {
                            qmask.data_mut()[idx] = T::zero();
                        }
                    } else if !(jv > 0.0) {
                        return Err(Error::SingularDeformation { j: jv, row: i, col: jj, qp: 0 });
                    }
                }
            }
        }

        // J with masked entries replaced by one, to keep 1/J finite.
        let jm = tape.mask_mul(j, qmask.clone())?;
        let j_safe = tape.add_field(jm, qmask.map(|m| T::one() - m))?;
        let inv_j = tape.recip(j_safe);

        // F^{-T} entries (it00, it01, it10, it11).
        let it00 = tape.mul(f11, inv_j)?;
        let nf10 = tape.neg(g10);
        let it01 = tape.mul(nf10, inv_j)?;
        let nf01 = tape.neg(g01);
        let it10 = tape.mul(nf01, inv_j)?;
        let it11 = tape.mul(f00, inv_j)?;

        // coef = lambda (J^2 - J)
        let jsq = tape.mul(j_safe, j_safe)?;
        let jd = tape.sub(jsq, j_safe)?;
        let coef = tape.scale(jd, T::from_f64_lossy(params.lambda));
        let mu = T::from_f64_lossy(params.mu);

        let f_entries = [f00, g01, g10, f11];
        let it_entries = [it00, it01, it10, it11];
        let mut p_entries = Vec::with_capacity(4);
        for idx in 0..4 {
            let volumetric = tape.mul(coef, it_entries[idx])?;
            let dev = tape.sub(f_entries[idx], it_entries[idx])?;
            let dev = tape.scale(dev, mu);
            let p = tape.add(volumetric, dev)?;
            p_entries.push(p);
        }
        let stacked = tape.concat(&p_entries, 3)?;
        tape.mask_mul(stacked, repeat_channel(&qmask, 4))
    }

    /// Bulk residual of a physically-scaled solution with Dirichlet values
    /// already imposed.
    pub fn bulk_residual(
        &self,
        tape: &mut Tape<T>,
        imposed: Var,
        masks: &BcMasks<T>,
    ) -> Result<Var> {
        // Zero margin values so invalid-element physics stays evaluable.
        let field0 = tape.mask_mul(imposed, masks.in_domain.clone())?;
        let gathered = self.gather_elements(tape, field0)?;

        let mut acc: Option<Var> = None;
        for qp in 0..4 {
            let gk = tape.constant(self.grad_maps[qp].clone());
            let grad = tape.conv2d(gathered, gk, Padding::Same)?;
            let flux = match &self.material {
                Material::Diffusion(p) => tape.scale(grad, T::from_f64_lossy(-p.diffusivity)),
                Material::Linear(_) => {
                    let lm = tape.constant(self.linear_map.clone().unwrap());
                    tape.conv2d(grad, lm, Padding::Same)?
                }
                Material::Nonlinear(p) => {
                    self.nonlinear_stress_channels(tape, grad, masks, p)?
                }
            };
            let sk = tape.constant(self.scatter_maps[qp].clone());
            let contrib = tape.conv2d(flux, sk, Padding::Same)?;
            acc = Some(match acc {
                Some(prev) => tape.add(prev, contrib)?,
                None => contrib,
            });
        }
        let mut elem = acc.unwrap();
        if !matches!(self.material, Material::Nonlinear(_)) {
            elem = tape.mask_mul(elem, repeat_channel(&masks.element_valid, 4 * self.dof))?;
        }
        self.scatter_elements(tape, elem)
    }

    /// Residual contribution of the Neumann data; depends only on the BC
    /// channels, so it is evaluated outside the tape.
    pub fn neumann_residual(&self, bc: &BcChannels<T>) -> Result<FieldTensor<T>> {
        let (b, n, dof) = (bc.batch(), bc.n(), bc.dof());
        let h_half = self.surface_tables.det_j;
        let mut out = FieldTensor::zeros(&[b, n, n, dof]);

        // (channel tensor, second-node offset, roll axis for node 2)
        let groups: [(&FieldTensor<T>, (usize, usize), usize); 2] = [
            (&bc.neumann_x, (1, 0), 1),
            (&bc.neumann_y, (0, 1), 2),
        ];
        for (channel, offset, axis) in groups {
            // Physical flux values and per-pixel activity.
            let phys = channel.map(|v| {
                if is_imposed(v) {
                    T::from_f64_lossy(bc.norm.denormalize_flux(v.to_f64().unwrap()))
                } else {
                    T::zero()
                }
            });
            let mut act = FieldTensor::zeros(&[b, n, n, 1]);
            for bi in 0..b {
                for i in 0..n {
                    for j in 0..n {
                        if (0..dof).any(|c| is_imposed(channel.at4(bi, i, j, c))) {
                            let idx = act.idx4(bi, i, j, 0);
                            act.data_mut()[idx] = T::one();
                        }
                    }
                }
            }
            let pair_k = gather_kernel::<T>(&[(0, 0), offset], dof);
            let pairs = ops::conv2d(&phys, &pair_k, Padding::Same)?;
            let act_k = gather_kernel::<T>(&[(0, 0), offset], 1);
            let act_pairs = ops::conv2d(&act, &act_k, Padding::Same)?;
            // A facet exists only where both nodes carry imposed values; the
            // zero padding kills the trailing row/column automatically.
            let mut facet = FieldTensor::zeros(&[b, n, n, 1]);
            for i in 0..facet.len() {
                facet.data_mut()[i] = act_pairs.data()[2 * i] * act_pairs.data()[2 * i + 1];
            }

            // Per quadrature point: value = N . j_e, then contribution
            // w * (h/2) * N_a * value into node channel a*dof + c.
            let mut elem = FieldTensor::zeros(&[b, n, n, 2 * dof]);
            for qp in 0..2 {
                let nvals = &self.surface_tables.n_values[qp];
                let w = self.surface_tables.weights[qp] * h_half;
                for p in 0..b * n * n {
                    for c in 0..dof {
                        let val = nvals[0] * pairs.data()[p * 2 * dof + c]
                            + nvals[1] * pairs.data()[p * 2 * dof + dof + c];
                        let scaled = w * val * facet.data()[p];
                        elem.data_mut()[p * 2 * dof + c] += nvals[0] * scaled;
                        elem.data_mut()[p * 2 * dof + dof + c] += nvals[1] * scaled;
                    }
                }
            }
            // Scatter: node 1 in place, node 2 shifted one pixel along the
            // facet direction.
            let node1 = ops::slice(&elem, &[0, 0, 0, 0], &[b, n, n, dof])?;
            let node2 = ops::slice(&elem, &[0, 0, 0, dof], &[b, n, n, dof])?;
            let node2 = ops::roll(&node2, &[1], &[axis])?;
            out = out.zip(&node1, |a, v| a + v).zip(&node2, |a, v| a + v);
        }
        Ok(out)
    }

    /// Full evaluation: impose Dirichlet, bulk residual, total = bulk -
    /// Neumann, and the reduced residual with margin and Dirichlet pixels
    /// zeroed. `solution` must be in physical units.
    pub fn evaluate(
        &self,
        tape: &mut Tape<T>,
        solution: Var,
        bc: &BcChannels<T>,
    ) -> Result<ResidualVars> {
        let masks = build_masks(bc);
        let imposed = self.impose_dirichlet(tape, solution, &masks)?;
        let bulk = self.bulk_residual(tape, imposed, &masks)?;
        let neumann = self.neumann_residual(bc)?;
        let total = tape.add_field(bulk, neumann.scale(-T::one()))?;
        let reduced_mask = masks.m_bulk.zip(&masks.m_d_rev, |a, b| a * b);
        let reduced = tape.mask_mul(total, reduced_mask)?;
        Ok(ResidualVars { imposed, bulk, total, reduced })
    }

    /// Convenience non-differentiating evaluation returning plain tensors.
    pub fn bundle(
        &self,
        solution: &FieldTensor<T>,
        bc: &BcChannels<T>,
    ) -> Result<ResidualBundle<T>> {
        let mut tape = Tape::new();
        let sol = tape.leaf(solution.clone());
        let vars = self.evaluate(&mut tape, sol, bc)?;
        let neumann = self.neumann_residual(bc)?;
        Ok(ResidualBundle {
            bulk: tape.value(vars.bulk).clone(),
            neumann,
            total: tape.value(vars.total).clone(),
            reduced: tape.value(vars.reduced).clone(),
        })
    }

    /// Reaction recovery: per-example, per-component sums of the unreduced
    /// total residual over Dirichlet pixels.
    pub fn reaction_forces(&self, total: &FieldTensor<T>, bc: &BcChannels<T>) -> Vec<Vec<f64>> {
        let (b, n, dof) = (bc.batch(), bc.n(), bc.dof());
        let mut out = vec![vec![0.0; dof]; b];
        for bi in 0..b {
            for i in 0..n {
                for j in 0..n {
                    for c in 0..dof {
                        if is_imposed(bc.dirichlet.at4(bi, i, j, c)) {
                            out[bi][c] += total.at4(bi, i, j, c).to_f64().unwrap();
                        }
                    }
                }
            }
        }
        out
    }
}

/// Plain-tensor view of one residual evaluation.
#[derive(Debug, Clone)]
pub struct ResidualBundle<T> {
    pub bulk: FieldTensor<T>,
    pub neumann: FieldTensor<T>,
    pub total: FieldTensor<T>,
    pub reduced: FieldTensor<T>,
}
