//! Shared fixtures for the integration suites: random BVP cases and fields.

use pixelfem::dataset::{
    encode_bvp, BcAssign, BcKind, DomainSpec, EdgeSel, MarkerMode, Normalization, Profile, Side,
    DEFAULT_LAMBDA, DEFAULT_MU,
};
use pixelfem::mesh::GridSpec;
use pixelfem::physics::{DiffusionParams, LameParams, Material, PhysicsKind};
use pixelfem::residual::BcChannels;
use pixelfem::FieldTensor;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn material_for(physics: PhysicsKind, diffusivity: f64) -> Material {
    match physics {
        PhysicsKind::Diffusion => {
            Material::Diffusion(DiffusionParams::new(diffusivity).unwrap())
        }
        PhysicsKind::LinearElasticity => {
            Material::Linear(LameParams::new(DEFAULT_LAMBDA, DEFAULT_MU).unwrap())
        }
        PhysicsKind::NonlinearElasticity => {
            Material::Nonlinear(LameParams::new(DEFAULT_LAMBDA, DEFAULT_MU).unwrap())
        }
    }
}

/// A BVP case cycling through domains with and without margin, mixing
/// Dirichlet and Neumann data.
pub fn random_bc_case(
    physics: PhysicsKind,
    n: usize,
    seed: u64,
) -> (BcChannels<f64>, Material, GridSpec) {
    let mut rng = StdRng::seed_from_u64(seed);
    let grid = GridSpec::new(n).unwrap();
    let dof = physics.dof();
    let norm = Normalization::new(1.0, 1.0).unwrap();

    let domain = match seed % 3 {
        0 => DomainSpec::Full,
        1 => DomainSpec::Rect {
            r0: 1,
            c0: 1,
            r1: n - 2,
            c1: n - 2,
        },
        _ => DomainSpec::octagon(),
    };
    let dirichlet_sides = [Side::Left, Side::Top];
    let neumann_sides = [Side::Right, Side::Bottom];
    let mut assigns = Vec::new();
    for (k, side) in dirichlet_sides.into_iter().enumerate() {
        for c in 0..dof {
            assigns.push(BcAssign {
                edge: side_edge(&domain, side, k),
                kind: BcKind::Dirichlet,
                profile: Profile::Linear {
                    start: rng.gen_range(0.2..0.9),
                    end: rng.gen_range(0.2..0.9),
                },
                component: c,
            });
        }
    }
    for (k, side) in neumann_sides.into_iter().enumerate() {
        for c in 0..dof {
            assigns.push(BcAssign {
                edge: side_edge(&domain, side, k + 2),
                kind: BcKind::Neumann,
                profile: Profile::Constant { value: rng.gen_range(0.55..0.95) },
                component: c,
            });
        }
    }
    let bc = encode_bvp(&domain, &assigns, &grid, dof, norm, MarkerMode::Small).unwrap();
    (bc, material_for(physics, 1.0 + 9.0 * (seed % 7) as f64), grid)
}

fn side_edge(domain: &DomainSpec, side: Side, _slot: usize) -> EdgeSel {
    match domain {
        DomainSpec::Polygon { .. } => EdgeSel::Poly(match side {
            Side::Top => 1,
            Side::Left => 3,
            Side::Bottom => 5,
            Side::Right => 7,
        }),
        _ => EdgeSel::Side(side),
    }
}

pub fn random_field(shape: &[usize], seed: u64, scale: f64) -> FieldTensor<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    FieldTensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}
