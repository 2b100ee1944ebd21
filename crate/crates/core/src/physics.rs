//! Constitutive models: steady-state diffusion, isotropic linear elasticity,
//! and compressible neo-Hookean hyperelasticity in plane strain.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysicsKind {
    Diffusion,
    LinearElasticity,
    NonlinearElasticity,
}

impl PhysicsKind {
    /// Solution components per pixel.
    pub fn dof(self) -> usize {
        match self {
            PhysicsKind::Diffusion => 1,
            PhysicsKind::LinearElasticity | PhysicsKind::NonlinearElasticity => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiffusionParams {
    pub diffusivity: f64,
}

impl DiffusionParams {
    pub fn new(diffusivity: f64) -> Result<Self> {
        if !(diffusivity > 0.0) {
            return Err(Error::Range(format!(
                "diffusivity must be positive, got {diffusivity}"
            )));
        }
        Ok(Self { diffusivity })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LameParams {
    pub lambda: f64,
    pub mu: f64,
}

impl LameParams {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || lambda <= -2.0 / 3.0 * mu {
            return Err(Error::Range(format!(
                "Lame constants must satisfy mu > 0 and lambda > -2mu/3, got lambda={lambda}, mu={mu}"
            )));
        }
        Ok(Self { lambda, mu })
    }
}

/// Quadrature-point exclusion window on J = det(F) used to keep early
/// nonlinear training evaluable when predictions are far from physical.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JClampPolicy {
    pub j_min: f64,
    pub j_max: f64,
    pub enabled: bool,
}

impl JClampPolicy {
    pub fn enabled() -> Self {
        Self { j_min: 0.1, j_max: 5.0, enabled: true }
    }

    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::enabled() }
    }

    pub fn inside(&self, j: f64) -> bool {
        j >= self.j_min && j <= self.j_max
    }
}

impl Default for JClampPolicy {
    fn default() -> Self {
        Self::enabled()
    }
}

/// Bundled physics selection and material constants.
#[derive(Debug, Clone, Copy)]
pub enum Material {
    Diffusion(DiffusionParams),
    Linear(LameParams),
    Nonlinear(LameParams),
}

impl Material {
    pub fn kind(&self) -> PhysicsKind {
        match self {
            Material::Diffusion(_) => PhysicsKind::Diffusion,
            Material::Linear(_) => PhysicsKind::LinearElasticity,
            Material::Nonlinear(_) => PhysicsKind::NonlinearElasticity,
        }
    }

    pub fn dof(&self) -> usize {
        self.kind().dof()
    }
}

/// Diffusive flux H = -D grad(C).
pub fn diffusion_flux<T: Scalar>(grad_c: [T; 2], params: &DiffusionParams) -> [T; 2] {
    let d = T::from_f64_lossy(params.diffusivity);
    [-d * grad_c[0], -d * grad_c[1]]
}

/// Small-strain isotropic stress sigma = lambda tr(eps) 1 + 2 mu eps,
/// with eps the symmetric part of the displacement gradient.
pub fn linear_stress<T: Scalar>(grad_u: [[T; 2]; 2], params: &LameParams) -> [[T; 2]; 2] {
    let lambda = T::from_f64_lossy(params.lambda);
    let mu = T::from_f64_lossy(params.mu);
    let two = T::from_f64_lossy(2.0);
    let e00 = grad_u[0][0];
    let e11 = grad_u[1][1];
    let e01 = (grad_u[0][1] + grad_u[1][0]) / two;
    let tr = e00 + e11;
    [
        [lambda * tr + two * mu * e00, two * mu * e01],
        [two * mu * e01, lambda * tr + two * mu * e11],
    ]
}

/// Result of a neo-Hookean stress evaluation at one quadrature point.
#[derive(Debug, Clone, Copy)]
pub struct NeoHookeanStress<T> {
    pub piola: [[T; 2]; 2],
    pub j: T,
    /// True when J fell outside the clamp window; the residual engine zeroes
    /// this quadrature point's contribution.
    pub clamped: bool,
}

/// First Piola-Kirchhoff stress P = lambda (J^2 - J) F^{-T} + mu (F - F^{-T})
/// for F = 1 + grad(u), plane strain (out-of-plane stretch 1).
pub fn neo_hookean_stress<T: Scalar>(
    grad_u: [[T; 2]; 2],
    params: &LameParams,
    clamp: &JClampPolicy,
) -> Result<NeoHookeanStress<T>> {
    let one = T::one();
    let f = [
        [one + grad_u[0][0], grad_u[0][1]],
        [grad_u[1][0], one + grad_u[1][1]],
    ];
    let j = f[0][0] * f[1][1] - f[0][1] * f[1][0];
    let jf = j.to_f64().unwrap_or(f64::NAN);
    if clamp.enabled && !clamp.inside(jf) {
        return Ok(NeoHookeanStress { piola: [[T::zero(); 2]; 2], j, clamped: true });
    }
    if !(jf > 0.0) {
        return Err(Error::SingularDeformation { j: jf, row: 0, col: 0, qp: 0 });
    }
    let lambda = T::from_f64_lossy(params.lambda);
    let mu = T::from_f64_lossy(params.mu);
    // F^{-T} = (1/J) [[F11, -F10], [-F01, F00]]
    let inv_t = [
        [f[1][1] / j, -f[1][0] / j],
        [-f[0][1] / j, f[0][0] / j],
    ];
    let coef = lambda * (j * j - j);
    let mut p = [[T::zero(); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            p[r][c] = coef * inv_t[r][c] + mu * (f[r][c] - inv_t[r][c]);
        }
    }
    Ok(NeoHookeanStress { piola: p, j, clamped: false })
}

/// Compressible neo-Hookean free energy in plane strain,
/// W = mu (tr(C_3d) - 3 - 2 ln J) / 2 + lambda (J - 1)^2 / 2 where the
/// out-of-plane stretch contributes 1 to tr(C_3d), so W(F = 1) = 0.
pub fn strain_energy<T: Scalar>(grad_u: [[T; 2]; 2], params: &LameParams) -> Result<T> {
    let one = T::one();
    let f = [
        [one + grad_u[0][0], grad_u[0][1]],
        [grad_u[1][0], one + grad_u[1][1]],
    ];
    let j = f[0][0] * f[1][1] - f[0][1] * f[1][0];
    if !(j.to_f64().unwrap_or(f64::NAN) > 0.0) {
        return Err(Error::SingularDeformation {
            j: j.to_f64().unwrap_or(f64::NAN),
            row: 0,
            col: 0,
            qp: 0,
        });
    }
    let lambda = T::from_f64_lossy(params.lambda);
    let mu = T::from_f64_lossy(params.mu);
    let half = T::from_f64_lossy(0.5);
    let two = T::from_f64_lossy(2.0);
    let three = T::from_f64_lossy(3.0);
    let tr_c = f[0][0] * f[0][0]
        + f[0][1] * f[0][1]
        + f[1][0] * f[1][0]
        + f[1][1] * f[1][1]
        + one;
    let jm1 = j - one;
    Ok(half * mu * (tr_c - three - two * j.ln()) + half * lambda * jm1 * jm1)
}

/// Consistent material tangent A_{iJkL} = dP_{iJ}/dF_{kL} for the
/// neo-Hookean law, in closed form.
pub fn neo_hookean_tangent(grad_u: [[f64; 2]; 2], params: &LameParams) -> Result<[[[[f64; 2]; 2]; 2]; 2]> {
    let f = [
        [1.0 + grad_u[0][0], grad_u[0][1]],
        [grad_u[1][0], 1.0 + grad_u[1][1]],
    ];
    let j = f[0][0] * f[1][1] - f[0][1] * f[1][0];
    if !(j > 0.0) {
        return Err(Error::SingularDeformation { j, row: 0, col: 0, qp: 0 });
    }
    let inv_t = [
        [f[1][1] / j, -f[1][0] / j],
        [-f[0][1] / j, f[0][0] / j],
    ];
    let (lambda, mu) = (params.lambda, params.mu);
    let mut a = [[[[0.0; 2]; 2]; 2]; 2];
    for i in 0..2 {
        for jj in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    let delta = ((i == k) as usize as f64) * ((jj == l) as usize as f64);
                    a[i][jj][k][l] = lambda * (2.0 * j - 1.0) * j * inv_t[i][jj] * inv_t[k][l]
                        + (mu - lambda * (j * j - j)) * inv_t[i][l] * inv_t[k][jj]
                        + mu * delta;
                }
            }
        }
    }
    Ok(a)
}
