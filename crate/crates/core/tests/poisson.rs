use mvrefine_core::deform3d::*;
use mvrefine_core::shapes::icosphere;
use mvrefine_core::{Mesh, Vec3};
use nalgebra::{Matrix3, Rotation3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn jittered_sphere(subdiv: u32, seed: u64, amount: f64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = icosphere(subdiv);
    for p in &mut m.vertices {
        *p *= 1.0 + rng.gen_range(-amount..amount);
    }
    m
}

fn random_field(rng: &mut ChaCha8Rng, faces: usize) -> JacobianField {
    JacobianField { mats: (0..faces).map(|_| Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect() }
}

#[test]
fn random_jacobians_match_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..3 {
        let mesh = jittered_sphere(1, seed, 0.1);
        assert!(mesh.num_vertices() <= 50);
        let sys = PoissonSystem::new(&mesh).unwrap();
        let j = random_field(&mut rng, mesh.num_faces());
        let fast = poisson_solve(&sys, &j).unwrap();
        let dense = dense_poisson_oracle(&mesh, &j).unwrap();
        let scale = dense.iter().map(|p| p.norm()).fold(0.0, f64::max);
        for (a, b) in fast.iter().zip(&dense) {
            assert!((a - b).norm() <= 1e-6 * scale, "{a} vs {b}");
        }
    }
}

#[test]
fn adjoint_matches_finite_differences() {
    let mesh = jittered_sphere(0, 9, 0.1);
    assert_eq!(mesh.num_vertices(), 12);
    let sys = PoissonSystem::new(&mesh).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let j = random_field(&mut rng, mesh.num_faces());
    let up: Vec<Vec3> = (0..12).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
    let adj = poisson_adjoint(&sys, &up).to_flat();
    let base = j.to_flat();
    let f = |x: &[f64]| -> f64 {
        let v = poisson_solve(&sys, &JacobianField::from_flat(x)).unwrap();
        v.iter().zip(&up).map(|(a, b)| a.dot(b)).sum()
    };
    let h = 1e-5;
    for _ in 0..5 {
        let k = rng.gen_range(0..base.len());
        let mut p = base.clone();
        p[k] += h;
        let mut m = base.clone();
        m[k] -= h;
        let fd = (f(&p) - f(&m)) / (2.0 * h);
        assert!((fd - adj[k]).abs() <= 1e-5 * fd.abs().max(1e-3), "entry {k}: {} vs {fd}", adj[k]);
    }
    let zero = poisson_adjoint(&sys, &vec![Vec3::zeros(); 12]);
    assert!(zero.to_flat().iter().all(|&x| x == 0.0));
}

#[test]
fn adjoint_is_linear() {
    let mesh = jittered_sphere(1, 2, 0.05);
    let sys = PoissonSystem::new(&mesh).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = mesh.num_vertices();
    let g1: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
    let g2: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
    let sum: Vec<Vec3> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
    let (a, b, c) = (poisson_adjoint(&sys, &g1).to_flat(), poisson_adjoint(&sys, &g2).to_flat(), poisson_adjoint(&sys, &sum).to_flat());
    for k in 0..a.len() {
        assert!((a[k] + b[k] - c[k]).abs() < 1e-10);
    }
}

#[test]
fn rotation_conjugates_jacobians() {
    let mesh = jittered_sphere(1, 3, 0.1);
    let r = Rotation3::from_euler_angles(0.3, -0.7, 1.1);
    let rotated = mesh.with_vertices(mesh.vertices.iter().map(|p| r * p).collect());
    let (ja, jb) = (init_jacobians(&mesh).unwrap(), init_jacobians(&rotated).unwrap());
    let rm = r.matrix();
    for (a, b) in ja.mats.iter().zip(&jb.mats) {
        assert!((rm * a * rm.transpose() - b).norm() < 1e-10);
    }
}

#[test]
fn vertex_and_grid_deformers_are_identity_at_rest() {
    let mesh = jittered_sphere(2, 1, 0.05);
    assert_eq!(VertexDeformer::new(&mesh).vertices().unwrap(), mesh.vertices);
    assert_eq!(GridDeformer::new(&mesh, DEFAULT_GRID3D_SIZE).vertices().unwrap(), mesh.vertices);
}

#[test]
fn grid_corner_moves_only_incident_cells() {
    let mesh = jittered_sphere(3, 4, 0.05);
    let mut grid = GridDeformer::new(&mesh, 4);
    grid.node_mut(1, 2, 1).copy_from_slice(&[0.0, 0.0, 0.2]);
    let (lo, hi) = mesh.bbox();
    for (p, q) in mesh.vertices.iter().zip(grid.vertices().unwrap()) {
        if (p - q).norm() > 0.0 {
            let u: Vec<f64> = (0..3).map(|a| (p[a] - lo[a]) / (hi[a] - lo[a]) * 3.0).collect();
            assert!((u[0] - 1.0).abs() < 1.0 && (u[1] - 2.0).abs() < 1.0 && (u[2] - 1.0).abs() < 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn identity_and_scaling_hold_on_random_meshes(seed in 0u64..10_000, subdiv in 0u32..3, s in 0.2f64..3.0) {
        let mesh = jittered_sphere(subdiv, seed, 0.2);
        let sys = PoissonSystem::new(&mesh).unwrap();
        let j0 = init_jacobians(&mesh).unwrap();
        let v = poisson_solve(&sys, &j0).unwrap();
        for (a, b) in v.iter().zip(&mesh.vertices) {
            prop_assert!((a - b).norm() < 1e-6);
        }
        let c = mesh.centroid();
        let vs = poisson_solve(&sys, &j0.scaled(s)).unwrap();
        for (a, b) in vs.iter().zip(&mesh.vertices) {
            prop_assert!((a - (c + (b - c) * s)).norm() < 1e-6);
        }
    }
}
