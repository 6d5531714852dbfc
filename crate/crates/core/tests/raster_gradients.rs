use mvrefine_core::camera::Camera;
use mvrefine_core::mesh::{Mesh, Vec3};
use mvrefine_core::raster::{render, render_backward, render_normal_map, RenderMode};
use mvrefine_core::shapes::icosphere;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn two_triangles() -> Mesh {
    // Slightly skewed quad in front of the camera at elevation 0 / azimuth 0.
    Mesh::new(
        vec![
            Vec3::new(0.1, -0.55, -0.5),
            Vec3::new(-0.1, 0.6, -0.45),
            Vec3::new(0.05, 0.5, 0.55),
            Vec3::new(0.0, -0.45, 0.5),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap()
    .with_colors(vec![[0.9, 0.1, 0.2, 1.0], [0.2, 0.8, 0.1, 1.0], [0.1, 0.3, 0.9, 1.0], [0.7, 0.7, 0.2, 1.0]])
    .unwrap()
}

fn weighted_sum(mesh: &Mesh, cam: &Camera, mode: RenderMode, weights: &[[f64; 4]]) -> f64 {
    let out = render(mesh, cam, mode).unwrap();
    out.image.pixels().iter().zip(weights).map(|(p, w)| (0..4).map(|c| p[c] * w[c]).sum::<f64>()).sum()
}

fn random_weights(n: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [0; 4].map(|_| rng.gen_range(-1.0..1.0))).collect()
}

#[test]
fn color_gradients_match_finite_differences() {
    let mesh = two_triangles();
    let cam = Camera::new(0.0, 0.0, 64);
    for mode in [RenderMode::Hard, RenderMode::Soft] {
        let w = random_weights(64 * 64, 1);
        let grads = render_backward(&mesh, &cam, mode, &w, false).unwrap();
        let h = 1e-3;
        for v in 0..4 {
            for c in 0..3 {
                let mut plus = mesh.clone();
                plus.colors.as_mut().unwrap()[v][c] += h;
                let mut minus = mesh.clone();
                minus.colors.as_mut().unwrap()[v][c] -= h;
                let fd = (weighted_sum(&plus, &cam, mode, &w) - weighted_sum(&minus, &cam, mode, &w)) / (2.0 * h);
                let an = grads.colors[v][c];
                assert!((fd - an).abs() <= 1e-4 * an.abs().max(1.0), "{mode:?} v{v} c{c}: fd {fd} vs {an}");
            }
        }
    }
}

#[test]
fn uniform_upstream_gives_barycentric_mass() {
    let mesh = two_triangles();
    let cam = Camera::new(0.0, 0.0, 64);
    let out = render(&mesh, &cam, RenderMode::Hard).unwrap();
    let covered = out.image.pixels().iter().filter(|p| p[3] > 0.0).count() as f64;
    let w = vec![[1.0, 0.0, 0.0, 0.0]; 64 * 64];
    let g = render_backward(&mesh, &cam, RenderMode::Hard, &w, false).unwrap();
    let total: f64 = g.colors.iter().map(|c| c[0]).sum();
    assert!((total - covered).abs() < 1e-9, "{total} vs {covered}");
    let zero = render_backward(&mesh, &cam, RenderMode::Hard, &vec![[0.0; 4]; 64 * 64], false).unwrap();
    assert!(zero.colors.iter().all(|c| c.iter().all(|&x| x == 0.0)));
}

#[test]
fn soft_position_gradients_match_finite_differences() {
    let mesh = two_triangles();
    let cam = Camera::new(0.0, 0.0, 64);
    let w = random_weights(64 * 64, 2);
    let grads = render_backward(&mesh, &cam, RenderMode::Soft, &w, true).unwrap();
    let pos = grads.positions.unwrap();
    let h = 1e-3;
    let mut checked = 0;
    for v in 0..4 {
        for d in 0..3 {
            let mut plus = mesh.clone();
            plus.vertices[v][d] += h;
            let mut minus = mesh.clone();
            minus.vertices[v][d] -= h;
            let fd = (weighted_sum(&plus, &cam, RenderMode::Soft, &w) - weighted_sum(&minus, &cam, RenderMode::Soft, &w))
                / (2.0 * h);
            let an = pos[v][d];
            println!("v{v} d{d}: analytic {an:.6} fd {fd:.6}");
            if an.abs() > 1e-4 {
                checked += 1;
                assert!((fd - an).abs() <= 5e-2 * an.abs(), "v{v} d{d}: fd {fd} vs {an}");
            }
        }
    }
    assert!(checked >= 8);
}

#[test]
fn sphere_normal_map_matches_analytic() {
    let mesh = icosphere(4);
    let cam = Camera::new(20.0, 30.0, 128);
    let img = render_normal_map(&mesh, &cam).unwrap();
    let f = cam.frame();
    let mut worst: f64 = 0.0;
    for y in 0..128 {
        for x in 0..128 {
            if img.alpha(x, y) < 1.0 {
                continue;
            }
            let p = img.get(x, y);
            let n = Vec3::new(2.0 * p[0] - 1.0, 2.0 * p[1] - 1.0, 2.0 * p[2] - 1.0).normalize();
            // analytic: intersect pixel ray with the unit sphere
            let d = f.ray_direction(x as f64 + 0.5, y as f64 + 0.5).normalize();
            let b = f.eye.dot(&d);
            let disc = b * b - (f.eye.norm_squared() - 1.0);
            if disc <= 0.0 {
                continue;
            }
            let hit = f.eye + d * (-b - disc.sqrt());
            let expected = f.direction_to_view(&hit.normalize());
            worst = worst.max(n.dot(&expected).clamp(-1.0, 1.0).acos().to_degrees());
        }
    }
    assert!(worst < 5.0, "worst normal error {worst} deg");
}
