//! Bilinear quadrilateral machinery on the pixel grid: shape functions,
//! gradient tables, and Gauss quadrature for bulk and surface integrals.
//!
//! Conventions: pixel (i, j) sits at physical (x = j*h, y = (n-1-i)*h), so
//! row 0 is the top of the image. Element (i, j) owns the pixel corners
//! {(i,j), (i,j+1), (i+1,j), (i+1,j+1)} in that node order, matching the
//! 2x2 one-hot gather kernels.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Local node offsets (row, col) of one element, in gather-channel order.
pub const NODE_OFFSETS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Pixels per side; the grid is n x n.
    pub n: usize,
    /// Physical side length of the background grid.
    pub domain_extent: f64,
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_extent(n, 1.0)
    }

    pub fn with_extent(n: usize, domain_extent: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Dimension(format!("grid needs n >= 2, got {n}")));
        }
        if !(domain_extent > 0.0) {
            return Err(Error::Range(format!(
                "domain extent must be positive, got {domain_extent}"
            )));
        }
        Ok(Self { n, domain_extent })
    }

    /// Pixel spacing.
    pub fn h(&self) -> f64 {
        self.domain_extent / (self.n - 1) as f64
    }

    pub fn elements_per_side(&self) -> usize {
        self.n - 1
    }

    /// Physical coordinates of pixel (i, j).
    pub fn xy(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.h();
        (j as f64 * h, (self.n - 1 - i) as f64 * h)
    }
}

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Parent-domain coordinates, (xi, eta) for bulk or (xi, 0) for surface.
    pub points: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// 2x2 Gauss rule on [-1,1]^2; exact for bicubic polynomials.
    pub fn bulk() -> Self {
        let g = 1.0 / 3.0_f64.sqrt();
        Self {
            points: vec![(-g, -g), (g, -g), (-g, g), (g, g)],
            weights: vec![1.0; 4],
        }
    }

    /// 2-point Gauss rule on [-1,1].
    pub fn surface() -> Self {
        let g = 1.0 / 3.0_f64.sqrt();
        Self {
            points: vec![(-g, 0.0), (g, 0.0)],
            weights: vec![1.0; 2],
        }
    }
}

/// Shape-function values and physical gradients evaluated at the quadrature
/// points of one parent element.
#[derive(Debug, Clone)]
pub struct BasisTables<T> {
    /// n_values[qp][node].
    pub n_values: Vec<[T; 4]>,
    /// b_values[qp][dim][node]: physical gradients d(N_node)/d(x_dim).
    pub b_values: Vec<[[T; 4]; 2]>,
    pub weights: Vec<T>,
    /// Jacobian determinant: h^2/4 for bulk, h/2 for surface.
    pub det_j: T,
    /// Number of participating local nodes (4 bulk, 2 surface).
    pub nodes: usize,
}

/// Bilinear shape functions at (xi, eta), ordered [NW, NE, SW, SE].
/// The parent axes align with +x (columns) and +y (up), so NW = (-1, +1).
fn shape_bulk(xi: f64, eta: f64) -> [f64; 4] {
    [
        0.25 * (1.0 - xi) * (1.0 + eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
    ]
}

/// Parent-domain gradients [d/dxi, d/deta] of the bulk shape functions.
fn shape_bulk_grad(xi: f64, eta: f64) -> [[f64; 4]; 2] {
    [
        [
            -0.25 * (1.0 + eta),
            0.25 * (1.0 + eta),
            -0.25 * (1.0 - eta),
            0.25 * (1.0 - eta),
        ],
        [
            0.25 * (1.0 - xi),
            0.25 * (1.0 + xi),
            -0.25 * (1.0 - xi),
            -0.25 * (1.0 + xi),
        ],
    ]
}

pub fn build_basis_tables<T: Scalar>(grid: &GridSpec) -> BasisTables<T> {
    let rule = QuadratureRule::bulk();
    let h = grid.h();
    let scale = 2.0 / h; // parent-to-physical gradient scaling
    let mut n_values = Vec::with_capacity(4);
    let mut b_values = Vec::with_capacity(4);
    for &(xi, eta) in &rule.points {
        let n = shape_bulk(xi, eta);
        n_values.push([
            T::from_f64_lossy(n[0]),
            T::from_f64_lossy(n[1]),
            T::from_f64_lossy(n[2]),
            T::from_f64_lossy(n[3]),
        ]);
        let g = shape_bulk_grad(xi, eta);
        let mut b = [[T::zero(); 4]; 2];
        for a in 0..4 {
            b[0][a] = T::from_f64_lossy(g[0][a] * scale);
            b[1][a] = T::from_f64_lossy(g[1][a] * scale);
        }
        b_values.push(b);
    }
    BasisTables {
        n_values,
        b_values,
        weights: rule.weights.iter().map(|&w| T::from_f64_lossy(w)).collect(),
        det_j: T::from_f64_lossy(h * h / 4.0),
        nodes: 4,
    }
}

/// 2-node line elements for surface integration; node order matches the
/// facet gather kernels (origin pixel first).
pub fn build_surface_tables<T: Scalar>(grid: &GridSpec) -> BasisTables<T> {
    let rule = QuadratureRule::surface();
    let h = grid.h();
    let mut n_values = Vec::with_capacity(2);
    let mut b_values = Vec::with_capacity(2);
    for &(xi, _) in &rule.points {
        let n1 = 0.5 * (1.0 - xi);
        let n2 = 0.5 * (1.0 + xi);
        n_values.push([
            T::from_f64_lossy(n1),
            T::from_f64_lossy(n2),
            T::zero(),
            T::zero(),
        ]);
        // Tangential derivative along the facet, unused by the residual.
        let d = 2.0 / h;
        b_values.push([
            [
                T::from_f64_lossy(-0.5 * d),
                T::from_f64_lossy(0.5 * d),
                T::zero(),
                T::zero(),
            ],
            [T::zero(); 4],
        ]);
    }
    BasisTables {
        n_values,
        b_values,
        weights: rule.weights.iter().map(|&w| T::from_f64_lossy(w)).collect(),
        det_j: T::from_f64_lossy(h / 2.0),
        nodes: 2,
    }
}
