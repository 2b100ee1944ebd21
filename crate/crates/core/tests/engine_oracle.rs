//! Cross-checks between the convolution-stencil residual engine and the
//! plain element-loop reference assembler, plus the solver consistency and
//! differentiability properties that weld the two paths together.

mod common;

use common::{material_for, random_bc_case, random_field};
use pixelfem::dataset::{
    encode_bvp, BcAssign, BcKind, DomainSpec, EdgeSel, MarkerMode, Normalization, Profile, Side,
};
use pixelfem::fem::{loop_residual, solve_linear, solve_nonlinear};
use pixelfem::mesh::GridSpec;
use pixelfem::physics::{JClampPolicy, Material, PhysicsKind};
use pixelfem::residual::{BcChannels, ResidualEngine};
use pixelfem::tape::Tape;
use pixelfem::{Error, FieldTensor};

const PHYSICS: [PhysicsKind; 3] = [
    PhysicsKind::Diffusion,
    PhysicsKind::LinearElasticity,
    PhysicsKind::NonlinearElasticity,
];

#[test]
fn conv_stencil_matches_loop_assembler() {
    for physics in PHYSICS {
        for n in [5usize, 8, 16] {
            for trial in 0..4u64 {
                let seed = n as u64 * 100 + trial;
                let (bc, material, grid) = random_bc_case(physics, n, seed);
                let clamp = JClampPolicy::enabled();
                let engine = ResidualEngine::<f64>::new(grid, material, clamp);
                let field = random_field(
                    &[1, n, n, physics.dof()],
                    seed + 7,
                    0.4,
                );
                let fast = engine.bundle(&field, &bc).unwrap();
                let slow = loop_residual(&field, &bc, &material, &clamp, &grid).unwrap();
                for (name, a, b) in [
                    ("bulk", &fast.bulk, &slow.bulk),
                    ("neumann", &fast.neumann, &slow.neumann),
                    ("total", &fast.total, &slow.total),
                    ("reduced", &fast.reduced, &slow.reduced),
                ] {
                    let diff = a.zip(b, |x, y| x - y).max_abs();
                    assert!(
                        diff <= 1e-12,
                        "{physics:?} n={n} trial={trial}: {name} deviates by {diff}"
                    );
                }
            }
        }
    }
}

#[test]
fn constant_field_has_zero_interior_bulk_residual() {
    let (bc, material, grid) = random_bc_case(PhysicsKind::Diffusion, 8, 0);
    let engine = ResidualEngine::<f64>::new(grid, material, JClampPolicy::enabled());
    // Constant field along with constant Dirichlet values equal to it.
    let c0 = 0.25;
    let field = FieldTensor::filled(&[1, 8, 8, 1], c0);
    let mut dirichlet = bc.dirichlet.clone();
    for v in dirichlet.data_mut() {
        if *v > 0.0 {
            *v = bc.norm.normalize_solution(c0).unwrap();
        }
    }
    let bc = BcChannels::new(dirichlet, bc.neumann_x.clone(), bc.neumann_y.clone(), bc.norm)
        .unwrap();
    let bundle = engine.bundle(&field, &bc).unwrap();
    assert!(bundle.bulk.max_abs() < 1e-13);
}

#[test]
fn linear_field_is_galerkin_exact_for_diffusion() {
    // C = x with full Dirichlet boundary: every interior reduced entry is 0.
    let n = 9;
    let grid = GridSpec::new(n).unwrap();
    let norm = Normalization::default();
    let shape = [1, n, n, 1];
    let mut dirichlet = FieldTensor::zeros(&shape);
    let mut field = FieldTensor::zeros(&shape);
    for i in 0..n {
        for j in 0..n {
            let (x, _) = grid.xy(i, j);
            let idx = field.idx4(0, i, j, 0);
            field.data_mut()[idx] = x;
            if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                dirichlet.data_mut()[idx] = norm.normalize_solution(x).unwrap();
            }
        }
    }
    let zero = FieldTensor::zeros(&shape);
    let bc = BcChannels::new(dirichlet, zero.clone(), zero, norm).unwrap();
    let engine = ResidualEngine::<f64>::new(
        grid,
        material_for(PhysicsKind::Diffusion, 1.0),
        JClampPolicy::enabled(),
    );
    let bundle = engine.bundle(&field, &bc).unwrap();
    assert!(bundle.reduced.max_abs() < 1e-13);
}

#[test]
fn oracle_solutions_zero_the_reduced_residual() {
    // Linear physics at 1e-9 RMS.
    for physics in [PhysicsKind::Diffusion, PhysicsKind::LinearElasticity] {
        for seed in [0u64, 1, 2] {
            let (bc, material, grid) = random_bc_case(physics, 12, seed);
            let sol = solve_linear(&bc, &material, &grid).unwrap();
            let engine = ResidualEngine::<f64>::new(grid, material, JClampPolicy::disabled());
            let bundle = engine.bundle(&sol, &bc).unwrap();
            let rms = bundle.reduced.rms();
            assert!(rms <= 1e-9, "{physics:?} seed={seed}: reduced RMS {rms}");
        }
    }
}

#[test]
fn nonlinear_oracle_solution_zeroes_reduced_residual() {
    let n = 8;
    let grid = GridSpec::new(n).unwrap();
    let norm = Normalization::new(1.0, 5.0).unwrap();
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
        BcAssign {
            edge: EdgeSel::Side(Side::Right),
            kind: BcKind::Dirichlet,
            profile: Profile::Constant { value: norm.normalize_solution(0.15).unwrap() },
            component: 0,
        },
        BcAssign {
            edge: EdgeSel::Side(Side::Right),
            kind: BcKind::Neumann,
            profile: Profile::Constant { value: norm.normalize_flux(1.0).unwrap() },
            component: 1,
        },
    ];
    let bc = encode_bvp(&DomainSpec::Full, &assigns, &grid, 2, norm, MarkerMode::Small).unwrap();
    let material = material_for(PhysicsKind::NonlinearElasticity, 1.0);
    let report = solve_nonlinear(&bc, &material, &grid, 5).unwrap();
    let engine = ResidualEngine::<f64>::new(grid, material, JClampPolicy::disabled());
    let bundle = engine.bundle(&report.field, &bc).unwrap();
    let rms = bundle.reduced.rms();
    assert!(rms <= 1e-8, "nonlinear reduced RMS {rms}");
}

#[test]
fn residual_loss_gradient_matches_finite_differences() {
    for (k, physics) in PHYSICS.into_iter().enumerate() {
        let n = 5;
        // Seeds divisible by 3 select the full-grid domain, which keeps
        // enough free pixels on a 5x5 grid to make the check meaningful.
        let (bc, material, grid) = random_bc_case(physics, n, 3 * k as u64);
        let engine = ResidualEngine::<f64>::new(grid, material, JClampPolicy::enabled());
        let field = random_field(&[1, n, n, physics.dof()], 33, 0.2);

        let loss_of = |f: &FieldTensor<f64>| -> f64 {
            let mut tape = Tape::new();
            let sol = tape.leaf(f.clone());
            let vars = engine.evaluate(&mut tape, sol, &bc).unwrap();
            let loss = tape.sum_squares(vars.reduced).unwrap();
            tape.value(loss).item()
        };

        let mut tape = Tape::new();
        let sol = tape.leaf(field.clone());
        let vars = engine.evaluate(&mut tape, sol, &bc).unwrap();
        let loss = tape.sum_squares(vars.reduced).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = tape.grad_or_zero(&grads, sol);

        let h = 1e-6;
        let mut checked = 0;
        for idx in 0..field.len() {
            let mut plus = field.clone();
            plus.data_mut()[idx] += h;
            let mut minus = field.clone();
            minus.data_mut()[idx] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let an = g.data()[idx];
            let denom = fd.abs().max(an.abs());
            if denom < 1e-9 {
                continue;
            }
            checked += 1;
            assert!(
                (fd - an).abs() / denom <= 1e-5,
                "{physics:?} idx {idx}: analytic {an} vs fd {fd}"
            );
        }
        assert!(checked > 5, "{physics:?}: too few informative entries");
    }
}

#[test]
fn diffusion_residual_is_homogeneous_and_superposes() {
    // Zero-BC diffusion: R(alpha d) = alpha R(d), R(d1 + d2) = R(d1) + R(d2).
    let n = 8;
    let grid = GridSpec::new(n).unwrap();
    let norm = Normalization::default();
    let shape = [1, n, n, 1];
    let zero_bc = BcChannels::new(
        FieldTensor::zeros(&shape),
        FieldTensor::zeros(&shape),
        FieldTensor::zeros(&shape),
        norm,
    )
    .unwrap();
    let engine = ResidualEngine::<f64>::new(
        grid,
        material_for(PhysicsKind::Diffusion, 3.0),
        JClampPolicy::enabled(),
    );
    let d1 = random_field(&shape, 5, 1.0);
    let d2 = random_field(&shape, 6, 1.0);
    let r1 = engine.bundle(&d1, &zero_bc).unwrap().reduced;
    let r2 = engine.bundle(&d2, &zero_bc).unwrap().reduced;

    let alpha = 2.75;
    let scaled = engine.bundle(&d1.scale(alpha), &zero_bc).unwrap().reduced;
    let diff = scaled.zip(&r1.scale(alpha), |a, b| a - b).max_abs();
    assert!(diff < 1e-11, "homogeneity violated by {diff}");

    let sum = engine
        .bundle(&d1.zip(&d2, |a, b| a + b), &zero_bc)
        .unwrap()
        .reduced;
    let expect = r1.zip(&r2, |a, b| a + b);
    let diff = sum.zip(&expect, |a, b| a - b).max_abs();
    assert!(diff < 1e-11, "superposition violated by {diff}");
}

#[test]
fn reduced_residual_shifts_with_the_domain() {
    // Translating an interior subdomain (with its BCs and field) by one
    // pixel translates the reduced residual identically.
    let n = 12;
    let grid = GridSpec::new(n).unwrap();
    let norm = Normalization::default();

    let build = |r0: usize, c0: usize| {
        let domain = DomainSpec::Rect { r0, c0, r1: r0 + 5, c1: c0 + 5 };
        let assigns = [
            BcAssign {
                edge: EdgeSel::Side(Side::Left),
                kind: BcKind::Dirichlet,
                profile: Profile::Linear { start: 0.3, end: 0.9 },
                component: 0,
            },
            BcAssign {
                edge: EdgeSel::Side(Side::Right),
                kind: BcKind::Neumann,
                profile: Profile::Constant { value: 0.8 },
                component: 0,
            },
        ];
        encode_bvp(&domain, &assigns, &grid, 1, norm, MarkerMode::Small).unwrap()
    };
    let bc_a = build(2, 2);
    let bc_b = build(3, 3);
    let field_a = random_field(&[1, n, n, 1], 9, 0.5);
    let field_b = {
        let mut f = FieldTensor::zeros(&[1, n, n, 1]);
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                let idx = f.idx4(0, i + 1, j + 1, 0);
                f.data_mut()[idx] = field_a.at4(0, i, j, 0);
            }
        }
        f
    };
    let engine = ResidualEngine::<f64>::new(
        grid,
        material_for(PhysicsKind::Diffusion, 1.0),
        JClampPolicy::enabled(),
    );
    let ra = engine.bundle(&field_a, &bc_a).unwrap().reduced;
    let rb = engine.bundle(&field_b, &bc_b).unwrap().reduced;
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            let va = ra.at4(0, i, j, 0);
            let vb = rb.at4(0, i + 1, j + 1, 0);
            assert!(
                (va - vb).abs() < 1e-12,
                "shift mismatch at ({i},{j}): {va} vs {vb}"
            );
        }
    }
}

#[test]
fn neumann_constant_flux_column_sums_to_line_integral() {
    // Constant flux on one full vertical edge of a rectangle: the column' s
    // total equals flux * edge length, end pixels carrying half weight.
    let n = 9;
    let grid = GridSpec::new(n).unwrap();
    let norm = Normalization::new(1.0, 2.0).unwrap();
    let flux = 1.2;
    let domain = DomainSpec::Rect { r0: 1, c0: 1, r1: 7, c1: 7 };
    let assigns = [
        BcAssign {
            edge: EdgeSel::Side(Side::Left),
            kind: BcKind::Dirichlet,
            profile: Profile::Constant { value: 0.9 },
            component: 0,
        },
        BcAssign {
            edge: EdgeSel::Side(Side::Right),
            kind: BcKind::Neumann,
            profile: Profile::Constant { value: norm.normalize_flux(flux).unwrap() },
            component: 0,
        },
    ];
    let bc = encode_bvp(&domain, &assigns, &grid, 1, norm, MarkerMode::Small).unwrap();
    let engine = ResidualEngine::<f64>::new(
        grid,
        material_for(PhysicsKind::Diffusion, 1.0),
        JClampPolicy::enabled(),
    );
    let neu = engine.neumann_residual(&bc).unwrap();
    let h = grid.h();
    let edge_rows = 1..=7usize;
    let mut column_sum = 0.0;
    for i in edge_rows {
        column_sum += neu.at4(0, i, 7, 0);
    }
    let edge_len = 6.0 * h;
    assert!(
        (column_sum - flux * edge_len).abs() < 1e-12,
        "column sum {column_sum} vs {}",
        flux * edge_len
    );
    // End pixels take half the interior weight.
    let end = neu.at4(0, 1, 7, 0);
    let mid = neu.at4(0, 4, 7, 0);
    assert!((mid - 2.0 * end).abs() < 1e-12);
    // Off-edge pixels receive nothing.
    assert_eq!(neu.at4(0, 4, 4, 0), 0.0);
}

#[test]
fn reaction_forces_balance_applied_loads() {
    // Uniaxial strip: reaction at the fixed edge equals the applied
    // traction integral with opposite sign.
    let n = 10;
    let grid = GridSpec::new(n).unwrap();
    let norm = Normalization::new(1.0, 2.0).unwrap();
    let traction = 0.9;
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
        BcAssign {
            edge: EdgeSel::Side(Side::Right),
            kind: BcKind::Neumann,
            profile: Profile::Constant { value: norm.normalize_flux(traction).unwrap() },
            component: 0,
        },
    ];
    let bc = encode_bvp(&DomainSpec::Full, &assigns, &grid, 2, norm, MarkerMode::Small)
        .unwrap();
    let material = material_for(PhysicsKind::LinearElasticity, 1.0);
    let sol = solve_linear(&bc, &material, &grid).unwrap();
    let engine = ResidualEngine::<f64>::new(grid, material, JClampPolicy::disabled());
    let bundle = engine.bundle(&sol, &bc).unwrap();
    let reactions = engine.reaction_forces(&bundle.total, &bc);
    let applied = traction * 1.0; // edge length (n-1) h = 1
    assert!(
        (reactions[0][0] + applied).abs() <= 1e-8,
        "x reaction {} vs applied {applied}",
        reactions[0][0]
    );
    // Zero loading: reactions vanish.
    let zero_sol = solve_linear(
        &{
            let mut b = bc.clone();
            b.neumann_x = FieldTensor::zeros(b.neumann_x.shape());
            b
        },
        &material,
        &grid,
    )
    .unwrap();
    assert!(zero_sol.max_abs() < 1e-12);
}

#[test]
fn j_clamp_masks_contributions_and_errors_when_disabled() {
    // A displacement ramp strong enough to push J outside [0.1, 5] at every
    // quadrature point of the first element column.
    let n = 5;
    let grid = GridSpec::new(n).unwrap();
    let norm = Normalization::default();
    let shape = [1, n, n, 2];
    let zero_bc = BcChannels::new(
        FieldTensor::zeros(&shape),
        FieldTensor::zeros(&shape),
        FieldTensor::zeros(&shape),
        norm,
    )
    .unwrap();
    let material = material_for(PhysicsKind::NonlinearElasticity, 1.0);

    // ux = -0.95 x gives F00 = 0.05 everywhere: J = 0.05 < 0.1.
    let mut crushing = FieldTensor::zeros(&shape);
    for i in 0..n {
        for j in 0..n {
            let (x, _) = grid.xy(i, j);
            let idx = crushing.idx4(0, i, j, 0);
            crushing.data_mut()[idx] = -0.95 * x;
        }
    }
    let engine = ResidualEngine::<f64>::new(grid, material, JClampPolicy::enabled());
    let bundle = engine.bundle(&crushing, &zero_bc).unwrap();
    assert!(
        bundle.reduced.max_abs() == 0.0,
        "clamped deformation must contribute nothing"
    );

    // ux = 5 x gives J = 6 > 5: also clamped.
    let stretched = crushing.scale(-5.0 / 0.95);
    let bundle = engine.bundle(&stretched, &zero_bc).unwrap();
    assert!(bundle.reduced.max_abs() == 0.0);

    // With clamping disabled, J <= 0 raises the singular-deformation error.
    let engine = ResidualEngine::<f64>::new(grid, material, JClampPolicy::disabled());
    let collapsing = crushing.scale(1.2); // F00 = 1 - 1.14 < 0
    match engine.bundle(&collapsing, &zero_bc) {
        Err(Error::SingularDeformation { .. }) => {}
        other => panic!("expected singular-deformation error, got {other:?}"),
    }
}

#[test]
fn gather_enumerates_element_corners() {
    let n = 5;
    let grid = GridSpec::new(n).unwrap();
    let engine = ResidualEngine::<f64>::new(
        grid,
        material_for(PhysicsKind::Diffusion, 1.0),
        JClampPolicy::enabled(),
    );
    let field = FieldTensor::from_fn(&[1, n, n, 1], |i| i as f64);
    let mut tape = Tape::new();
    let f = tape.leaf(field.clone());
    let gathered = engine.gather_elements(&mut tape, f).unwrap();
    let g = tape.value(gathered);
    // Element (0,0): channels are the values at pixels (0,0),(0,1),(1,0),(1,1).
    assert_eq!(g.at4(0, 0, 0, 0), field.at4(0, 0, 0, 0));
    assert_eq!(g.at4(0, 0, 0, 1), field.at4(0, 0, 1, 0));
    assert_eq!(g.at4(0, 0, 0, 2), field.at4(0, 1, 0, 0));
    assert_eq!(g.at4(0, 0, 0, 3), field.at4(0, 1, 1, 0));
    // Constant field: all four channels equal the constant on valid elements.
    let cfield = FieldTensor::filled(&[1, n, n, 1], 3.25);
    let mut tape = Tape::new();
    let f = tape.leaf(cfield);
    let gathered = engine.gather_elements(&mut tape, f).unwrap();
    let g = tape.value(gathered);
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            for c in 0..4 {
                assert_eq!(g.at4(0, i, j, c), 3.25);
            }
        }
    }
}

#[test]
fn impose_dirichlet_replaces_only_imposed_pixels() {
    let n = 5;
    let (bc, material, grid) = random_bc_case(PhysicsKind::Diffusion, n, 3);
    let engine = ResidualEngine::<f64>::new(grid, material, JClampPolicy::enabled());
    let field = random_field(&[1, n, n, 1], 21, 0.3);
    let mut tape = Tape::new();
    let f = tape.leaf(field.clone());
    let masks = pixelfem::residual::build_masks(&bc);
    let imposed = engine.impose_dirichlet(&mut tape, f, &masks).unwrap();
    let im = tape.value(imposed);
    for i in 0..n {
        for j in 0..n {
            let d = bc.dirichlet.at4(0, i, j, 0);
            let expect = if d > 0.0 {
                bc.norm.denormalize_solution(d)
            } else {
                field.at4(0, i, j, 0)
            };
            assert_eq!(im.at4(0, i, j, 0), expect);
        }
    }
}

#[test]
fn batched_evaluation_matches_per_example() {
    let n = 8;
    let (bc_a, material, grid) = random_bc_case(PhysicsKind::Diffusion, n, 0);
    let (bc_b, _, _) = random_bc_case(PhysicsKind::Diffusion, n, 2);
    let engine = ResidualEngine::<f64>::new(grid, material, JClampPolicy::enabled());
    let fa = random_field(&[1, n, n, 1], 1, 0.5);
    let fb = random_field(&[1, n, n, 1], 2, 0.5);

    let stacked_bc = BcChannels::stack(&[&bc_a, &bc_b]).unwrap();
    let stacked_field = pixelfem::ops::concat(&[&fa, &fb], 0).unwrap();
    let batch = engine.bundle(&stacked_field, &stacked_bc).unwrap();
    let single_a = engine.bundle(&fa, &bc_a).unwrap();
    let single_b = engine.bundle(&fb, &bc_b).unwrap();
    for i in 0..n {
        for j in 0..n {
            assert_eq!(batch.reduced.at4(0, i, j, 0), single_a.reduced.at4(0, i, j, 0));
            assert_eq!(batch.reduced.at4(1, i, j, 0), single_b.reduced.at4(0, i, j, 0));
        }
    }
}
