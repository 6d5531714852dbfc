//! Procedural watertight shapes and vertex color patterns.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::{Mesh, Rgba, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere,
    Torus,
    Blob,
    Cube,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorPattern {
    Checker,
    Gradient,
    Spots,
}

impl std::str::FromStr for Shape {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sphere" => Ok(Shape::Sphere),
            "torus" => Ok(Shape::Torus),
            "blob" => Ok(Shape::Blob),
            "cube" => Ok(Shape::Cube),
            other => Err(format!("unknown shape {other:?}")),
        }
    }
}

impl std::str::FromStr for ColorPattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "checker" => Ok(ColorPattern::Checker),
            "gradient" => Ok(ColorPattern::Gradient),
            "spots" => Ok(ColorPattern::Spots),
            other => Err(format!("unknown color pattern {other:?}")),
        }
    }
}

/// Unit icosphere with `10 * 4^n + 2` vertices.
pub fn icosphere(subdivisions: u32) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh { vertices, faces, colors: None }
}

fn torus(subdivisions: u32) -> Mesh {
    let major = 12 * (1usize << subdivisions.min(5));
    let minor = 6 * (1usize << subdivisions.min(5));
    let (r_major, r_minor) = (1.0, 0.4);
    let mut vertices = Vec::with_capacity(major * minor);
    for i in 0..major {
        let u = i as f64 / major as f64 * std::f64::consts::TAU;
        for j in 0..minor {
            let v = j as f64 / minor as f64 * std::f64::consts::TAU;
            let r = r_major + r_minor * v.cos();
            vertices.push(Vec3::new(r * u.cos(), r * u.sin(), r_minor * v.sin()));
        }
    }
    let idx = |i: usize, j: usize| (i % major) * minor + (j % minor);
    let mut faces = Vec::with_capacity(2 * major * minor);
    for i in 0..major {
        for j in 0..minor {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    Mesh { vertices, faces, colors: None }
}

fn cube(subdivisions: u32) -> Mesh {
    let n = 2usize << subdivisions.min(6);
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut index: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut faces = Vec::new();
    let mut vid = |p: (i64, i64, i64), vertices: &mut Vec<Vec3>| -> usize {
        *index.entry(p).or_insert_with(|| {
            let s = n as f64 / 2.0;
            vertices.push(Vec3::new(p.0 as f64 / s - 1.0, p.1 as f64 / s - 1.0, p.2 as f64 / s - 1.0));
            vertices.len() - 1
        })
    };
    let m = n as i64;
    // (normal axis, side); grid axes chosen so the winding faces outward
    for axis in 0..3 {
        for side in [0, m] {
            let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
            for i in 0..m {
                for j in 0..m {
                    let corner = |di: i64, dj: i64| {
                        let mut p = [0i64; 3];
                        p[axis] = side;
                        p[ua] = i + di;
                        p[va] = j + dj;
                        (p[0], p[1], p[2])
                    };
                    let a = vid(corner(0, 0), &mut vertices);
                    let b = vid(corner(1, 0), &mut vertices);
                    let c = vid(corner(1, 1), &mut vertices);
                    let d = vid(corner(0, 1), &mut vertices);
                    if side == m {
                        faces.push([a, b, c]);
                        faces.push([a, c, d]);
                    } else {
                        faces.push([a, c, b]);
                        faces.push([a, d, c]);
                    }
                }
            }
        }
    }
    Mesh { vertices, faces, colors: None }
}

fn blob(subdivisions: u32, rng: &mut ChaCha8Rng) -> Mesh {
    let mut mesh = icosphere(subdivisions);
    let bumps: Vec<(Vec3, f64)> = (0..5)
        .map(|_| {
            let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let d = if d.norm() > 1e-6 { d.normalize() } else { Vec3::z() };
            (d, rng.gen_range(0.1..0.25))
        })
        .collect();
    for v in &mut mesh.vertices {
        let dir = *v;
        let r = 1.0 + bumps.iter().map(|(c, a)| a * (-(1.0 - dir.dot(c)) * 3.0).exp()).sum::<f64>();
        *v = dir * r;
    }
    mesh
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub fn paint(mesh: &Mesh, pattern: ColorPattern, seed: u64) -> Vec<Rgba> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c010);
    match pattern {
        ColorPattern::Checker => {
            let cells = 4.0;
            let a = hsv(rng.gen_range(0.0..1.0), 0.7, 0.9);
            let b = hsv(rng.gen_range(0.0..1.0), 0.6, 0.3);
            mesh.vertices
                .iter()
                .map(|p| {
                    let k = ((p.x + 1.0) * cells / 2.0).floor() as i64
                        + ((p.y + 1.0) * cells / 2.0).floor() as i64
                        + ((p.z + 1.0) * cells / 2.0).floor() as i64;
                    let c = if k.rem_euclid(2) == 0 { a } else { b };
                    [c[0], c[1], c[2], 1.0]
                })
                .collect()
        }
        ColorPattern::Gradient => {
            let phase: f64 = rng.gen_range(0.0..1.0);
            mesh.vertices
                .iter()
                .map(|p| {
                    let r = 0.5 + 0.4 * p.x.clamp(-1.0, 1.0);
                    let g = 0.5 + 0.4 * p.y.clamp(-1.0, 1.0);
                    let b = 0.5 + 0.3 * (p.z.clamp(-1.0, 1.0) + phase - 0.5).clamp(-1.0, 1.0);
                    [r, g, b, 1.0]
                })
                .collect()
        }
        ColorPattern::Spots => {
            let spots: Vec<(Vec3, [f64; 3])> = (0..8)
                .map(|_| {
                    let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    (d, hsv(rng.gen_range(0.0..1.0), 0.8, 0.95))
                })
                .collect();
            let base = [0.85, 0.85, 0.8];
            mesh.vertices
                .iter()
                .map(|p| {
                    let mut c = base;
                    for (center, col) in &spots {
                        let w = (-(p - center).norm_squared() / 0.08).exp();
                        for k in 0..3 {
                            c[k] = c[k] * (1.0 - w) + col[k] * w;
                        }
                    }
                    [c[0], c[1], c[2], 1.0]
                })
                .collect()
        }
    }
}

/// Watertight colored mesh normalized into `[-1, 1]^3`.
pub fn make_gt_mesh(shape: Shape, subdivisions: u32, pattern: ColorPattern, seed: u64) -> Mesh {
    assert!(subdivisions <= 6, "subdivisions above 6 exceed the vertex budget");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = match shape {
        Shape::Sphere => icosphere(subdivisions),
        Shape::Torus => torus(subdivisions),
        Shape::Blob => blob(subdivisions, &mut rng),
        Shape::Cube => cube(subdivisions),
    };
    let mesh = mesh.normalized();
    let colors = paint(&mesh, pattern, seed);
    Mesh { colors: Some(colors), ..mesh }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        for n in 0..4 {
            let m = icosphere(n);
            assert_eq!(m.num_vertices(), 10 * 4usize.pow(n) + 2);
            assert_eq!(m.num_faces(), 20 * 4usize.pow(n));
        }
    }

    #[test]
    fn shapes_are_closed_outward_and_normalized() {
        for shape in [Shape::Sphere, Shape::Torus, Shape::Blob, Shape::Cube] {
            let m = make_gt_mesh(shape, 2, ColorPattern::Gradient, 3);
            m.validate().unwrap();
            let (lo, hi) = m.bbox();
            assert!(lo.min() >= -1.0 - 1e-12 && hi.max() <= 1.0 + 1e-12, "{shape:?}");
            // every edge shared by exactly two faces
            let mut count: HashMap<[usize; 2], usize> = HashMap::new();
            for f in &m.faces {
                for k in 0..3 {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    *count.entry([a.min(b), a.max(b)]).or_default() += 1;
                }
            }
            assert!(count.values().all(|&c| c == 2), "{shape:?} not watertight");
            // outward orientation: positive signed volume
            let vol: f64 = m
                .faces
                .iter()
                .map(|&[a, b, c]| m.vertices[a].dot(&m.vertices[b].cross(&m.vertices[c])) / 6.0)
                .sum();
            assert!(vol > 0.0, "{shape:?} inward");
        }
    }

    #[test]
    fn same_seed_same_mesh() {
        let a = make_gt_mesh(Shape::Blob, 2, ColorPattern::Spots, 11);
        let b = make_gt_mesh(Shape::Blob, 2, ColorPattern::Spots, 11);
        assert_eq!(a, b);
    }
}
