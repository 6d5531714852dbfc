use mvrefine_core::camera::Camera;
use mvrefine_core::raster::{render, RenderMode};
use mvrefine_core::shapes::{make_gt_mesh, ColorPattern, Shape};
use mvrefine_core::unproject::{unproject, unproject_backward, unproject_weighted, PosedImage, UnprojectSettings};
use mvrefine_core::{ImageRGBA, Mesh, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn views_of(mesh: &Mesh, res: usize) -> Vec<PosedImage> {
    Camera::default_views(res)
        .into_iter()
        .map(|c| PosedImage::new(render(mesh, &c, RenderMode::Hard).unwrap().image, c).unwrap())
        .collect()
}

#[test]
fn render_then_unproject_recovers_colors() {
    let gt = make_gt_mesh(Shape::Sphere, 3, ColorPattern::Gradient, 1);
    let views = views_of(&gt, 256);
    let settings = UnprojectSettings::default();
    let (out, plan) = unproject_weighted(&gt.with_vertices(gt.vertices.clone()), &views, &[1.0; 6], &settings).unwrap();
    let (truth, got) = (gt.colors.as_ref().unwrap(), out.colors.as_ref().unwrap());
    let mut total = 0.0;
    let mut n = 0;
    for v in 0..gt.num_vertices() {
        if plan.max_weight[v] >= 0.3 {
            total += (0..3).map(|c| (truth[v][c] - got[v][c]).abs()).sum::<f64>() / 3.0;
            n += 1;
        }
    }
    assert!(n > gt.num_vertices() / 2);
    let mean = total / n as f64;
    assert!(mean <= 2.0 / 255.0, "mean error {mean}");
    assert!(got.iter().all(|c| c.iter().all(|x| x.is_finite())));
}

/// Two parallel planes seen head-on; the back plane is hidden by the front one.
#[test]
fn occluded_vertices_get_no_weight() {
    let quad = |x: f64, s: f64| {
        vec![Vec3::new(x, -s, -s), Vec3::new(x, s, -s), Vec3::new(x, s, s), Vec3::new(x, -s, s)]
    };
    let mut vertices = quad(0.5, 0.6);
    vertices.extend(quad(-0.5, 0.3));
    vertices.push(Vec3::new(-0.5, 0.0, 0.0));
    let faces = vec![[0, 1, 2], [0, 2, 3], [4, 5, 8], [5, 6, 8], [6, 7, 8], [7, 4, 8]];
    let mesh = Mesh::new(vertices, faces).unwrap();
    let cam = Camera::new(0.0, 0.0, 64);
    let view = PosedImage::new(ImageRGBA::filled(64, 64, [0.2, 0.4, 0.6, 1.0]), cam).unwrap();
    let (_, plan) = unproject_weighted(&mesh, &[view], &[1.0], &UnprojectSettings::default()).unwrap();
    for v in 0..4 {
        assert!(plan.max_weight[v] > 0.9, "front vertex {v}");
    }
    for v in 4..9 {
        assert_eq!(plan.max_weight[v], 0.0, "hidden vertex {v}");
    }
}

fn cube8() -> Mesh {
    let s = 0.5;
    let vertices = (0..8)
        .map(|i| Vec3::new(if i & 1 == 0 { -s } else { s }, if i & 2 == 0 { -s } else { s }, if i & 4 == 0 { -s } else { s }))
        .collect();
    let faces = vec![
        [0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6], [0, 1, 4], [1, 5, 4],
        [2, 6, 3], [3, 6, 7], [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5],
    ];
    Mesh::new(vertices, faces).unwrap()
}

#[test]
fn adjoint_matches_finite_differences() {
    let mesh = cube8();
    let cam = Camera::new(25.0, 35.0, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data: Vec<[f64; 4]> = (0..32 * 32).map(|_| [rng.gen(), rng.gen(), rng.gen(), 1.0]).collect();
    let image = ImageRGBA::from_pixels(32, 32, data).unwrap();
    let views = vec![PosedImage::new(image.clone(), cam).unwrap()];
    let upstream: Vec<[f64; 4]> = (0..8).map(|_| [rng.gen(), rng.gen(), rng.gen(), 0.0]).collect();
    let grads = unproject_backward(&mesh, &views, &upstream, &UnprojectSettings::default()).unwrap();
    let objective = |img: &ImageRGBA| -> f64 {
        let out = unproject(&mesh, &[PosedImage::new(img.clone(), cam).unwrap()], &UnprojectSettings::default()).unwrap();
        out.colors.unwrap().iter().zip(&upstream).map(|(c, g)| (0..3).map(|k| c[k] * g[k]).sum::<f64>()).sum()
    };
    let h = 1e-4;
    let mut nonzero = 0;
    for p in 0..32 * 32 {
        for c in 0..3 {
            let an = grads[0][p][c];
            if an == 0.0 && rng.gen::<f64>() > 0.02 {
                continue;
            }
            let mut a = image.clone();
            a.pixels_mut()[p][c] += h;
            let mut b = image.clone();
            b.pixels_mut()[p][c] -= h;
            let fd = (objective(&a) - objective(&b)) / (2.0 * h);
            assert!((an - fd).abs() <= 1e-4 * fd.abs().max(1e-2), "pixel {p} channel {c}: {an} vs {fd}");
            if an != 0.0 {
                nonzero += 1;
            }
        }
    }
    assert!(nonzero >= 12);
}

#[test]
fn single_vertex_gradient_mass_is_one() {
    let mesh = cube8();
    let cam = Camera::new(25.0, 35.0, 32);
    let views = vec![PosedImage::new(ImageRGBA::filled(32, 32, [0.5, 0.5, 0.5, 1.0]), cam).unwrap()];
    let (_, plan) = unproject_weighted(&mesh, &views, &[1.0], &UnprojectSettings::default()).unwrap();
    let v = plan.covered()[0];
    let mut upstream = vec![[0.0; 4]; 8];
    upstream[v] = [1.0, 0.0, 0.0, 0.0];
    let grads = unproject_backward(&mesh, &views, &upstream, &UnprojectSettings::default()).unwrap();
    let taps: Vec<f64> = grads[0].iter().map(|g| g[0]).filter(|&g| g != 0.0).collect();
    assert!(!taps.is_empty() && taps.len() <= 4);
    assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let zero = unproject_backward(&mesh, &views, &[[0.0; 4]; 8], &UnprojectSettings::default()).unwrap();
    assert!(zero[0].iter().all(|g| *g == [0.0; 4]));
}

#[test]
fn hidden_vertices_are_filled_by_diffusion() {
    let gt = make_gt_mesh(Shape::Sphere, 2, ColorPattern::Checker, 0);
    let cam = Camera::new(0.0, 0.0, 64);
    let view = PosedImage::new(render(&gt, &cam, RenderMode::Hard).unwrap().image, cam).unwrap();
    let (out, plan) = unproject_weighted(&gt, &[view], &[1.0], &UnprojectSettings::default()).unwrap();
    assert!(plan.covered().len() < gt.num_vertices());
    let colors = out.colors.unwrap();
    assert!(colors.iter().all(|c| c.iter().all(|x| x.is_finite() && *x >= 0.0 && *x <= 1.0)));
}
