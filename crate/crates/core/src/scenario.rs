//! Synthetic test scenarios with known ground truth.
//!
//! A scenario renders a procedurally generated, colored mesh from the six
//! standard views, warps each view by a random smooth 2D field, degrades a copy
//! of the mesh into an "initial mesh", and renders a frontal input image of the
//! true mesh. Everything derives from the scenario name and seed.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::deform2d::{deform_image, DeformationField2D, DEFAULT_GRID_SIZE};
use crate::error::{Error, Result};
use crate::image::ImageRGBA;
use crate::io::{read_mesh, write_mesh};
use crate::mesh::{Mesh, Rgba, Vec3};
use crate::raster::{render, render_normal_map, RenderMode};
use crate::shapes::{make_gt_mesh, ColorPattern, Shape};
use crate::unproject::PosedImage;

pub const DEFAULT_RESOLUTION: usize = 256;

/// Hard renders from the six standard poses.
pub fn render_views(mesh: &Mesh, resolution: usize) -> Result<Vec<PosedImage>> {
    Camera::default_views(resolution)
        .into_iter()
        .map(|cam| PosedImage::new(render(mesh, &cam, RenderMode::Hard)?.image, cam))
        .collect()
}

/// Hard normal maps from the six standard poses.
pub fn render_normal_views(mesh: &Mesh, resolution: usize) -> Result<Vec<PosedImage>> {
    Camera::default_views(resolution)
        .into_iter()
        .map(|cam| PosedImage::new(render_normal_map(mesh, &cam)?, cam))
        .collect()
}

/// Random smooth field: offsets uniform in `[-max, max]` per component, then
/// one pass of averaging each grid vertex with its 4-neighbors, rescaled so
/// the largest component is `max` again.
pub fn random_smooth_field(grid_size: usize, max_offset: f64, rng: &mut ChaCha8Rng) -> DeformationField2D {
    let g = grid_size;
    let raw: Vec<[f64; 2]> = (0..g * g)
        .map(|_| {
            if max_offset > 0.0 {
                [rng.gen_range(-max_offset..=max_offset), rng.gen_range(-max_offset..=max_offset)]
            } else {
                [0.0, 0.0]
            }
        })
        .collect();
    let mut smooth = vec![[0.0; 2]; g * g];
    for j in 0..g {
        for i in 0..g {
            let mut acc = raw[j * g + i];
            let mut n = 1.0;
            let mut add = |ii: usize, jj: usize| {
                acc[0] += raw[jj * g + ii][0];
                acc[1] += raw[jj * g + ii][1];
                n += 1.0;
            };
            if i > 0 {
                add(i - 1, j);
            }
            if i + 1 < g {
                add(i + 1, j);
            }
            if j > 0 {
                add(i, j - 1);
            }
            if j + 1 < g {
                add(i, j + 1);
            }
            smooth[j * g + i] = [acc[0] / n, acc[1] / n];
        }
    }
    let peak = smooth.iter().flat_map(|o| [o[0].abs(), o[1].abs()]).fold(0.0, f64::max);
    if peak > 0.0 {
        for o in &mut smooth {
            *o = [o[0] * max_offset / peak, o[1] * max_offset / peak];
        }
    }
    DeformationField2D::from_offsets(g, smooth).expect("grid size matches")
}

/// Warps every view by its own random smooth field.
pub fn perturb_views(views: &[PosedImage], max_offset_px: f64, seed: u64) -> Result<(Vec<PosedImage>, Vec<DeformationField2D>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut out = Vec::with_capacity(views.len());
    let mut fields = Vec::with_capacity(views.len());
    for v in views {
        let field = random_smooth_field(DEFAULT_GRID_SIZE, max_offset_px, &mut rng);
        out.push(PosedImage { image: deform_image(&v.image, &field)?, camera: v.camera });
        fields.push(field);
    }
    Ok((out, fields))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degradation {
    /// Edge collapse removing `amount` of the vertices.
    Decimate,
    /// `amount` rounds of Laplacian smoothing.
    Smooth,
    /// `amount` rounds of vertex-color neighborhood averaging.
    BlurColors,
    /// Smooth displacement along the normals, at most `amount` bounding-box diagonals.
    ShapeOffset,
}

impl std::str::FromStr for Degradation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "decimate" => Ok(Degradation::Decimate),
            "smooth" => Ok(Degradation::Smooth),
            "blur_colors" => Ok(Degradation::BlurColors),
            "shape_offset" => Ok(Degradation::ShapeOffset),
            other => Err(format!("unknown degradation {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Degraded {
    pub mesh: Mesh,
    /// Per-vertex displacement applied by `ShapeOffset`.
    pub displacement: Option<Vec<Vec3>>,
}

pub fn degrade_mesh(mesh: &Mesh, mode: Degradation, amount: f64, seed: u64) -> Result<Degraded> {
    if !(amount >= 0.0 && amount.is_finite()) {
        return Err(Error::Config(format!("degradation amount {amount} must be non-negative")));
    }
    let rounds = amount.round() as usize;
    Ok(match mode {
        Degradation::Decimate => Degraded { mesh: decimate(mesh, amount.min(0.95))?, displacement: None },
        Degradation::Smooth => {
            let nbrs = mesh.vertex_neighbors();
            let mut v = mesh.vertices.clone();
            for _ in 0..rounds {
                v = (0..v.len())
                    .map(|i| {
                        if nbrs[i].is_empty() {
                            return v[i];
                        }
                        let avg = nbrs[i].iter().map(|&j| v[j]).sum::<Vec3>() / nbrs[i].len() as f64;
                        v[i] * 0.5 + avg * 0.5
                    })
                    .collect();
            }
            Degraded { mesh: mesh.with_vertices(v), displacement: None }
        }
        Degradation::BlurColors => {
            let mut out = mesh.clone();
            out.colors = Some(blur_colors(mesh, mesh.colors_or_err()?, rounds));
            Degraded { mesh: out, displacement: None }
        }
        Degradation::ShapeOffset => {
            let d = smooth_displacement(mesh, amount * mesh.bbox_diagonal(), seed);
            let v = mesh.vertices.iter().zip(&d).map(|(p, q)| p + q).collect();
            Degraded { mesh: mesh.with_vertices(v), displacement: Some(d) }
        }
    })
}

pub fn blur_colors(mesh: &Mesh, colors: &[Rgba], rounds: usize) -> Vec<Rgba> {
    let nbrs = mesh.vertex_neighbors();
    let mut c = colors.to_vec();
    for _ in 0..rounds {
        c = (0..c.len())
            .map(|i| {
                let mut acc = c[i];
                for &j in &nbrs[i] {
                    for k in 0..4 {
                        acc[k] += c[j][k];
                    }
                }
                acc.map(|x| x / (nbrs[i].len() + 1) as f64)
            })
            .collect();
    }
    c
}

/// Low-frequency displacement along the vertex normals with largest magnitude `max`.
fn smooth_displacement(mesh: &Mesh, max: f64, seed: u64) -> Vec<Vec3> {
    if max == 0.0 {
        return vec![Vec3::zeros(); mesh.num_vertices()];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0ff5_e7);
    let waves: Vec<(Vec3, f64, f64)> = (0..3)
        .map(|_| {
            let dir = loop {
                let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let n = d.norm();
                if n > 0.2 && n <= 1.0 {
                    break d / n;
                }
            };
            let k = rng.gen_range(1.2..2.0);
            (dir * k, rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.5..1.0))
        })
        .collect();
    let f: Vec<f64> = mesh
        .vertices
        .iter()
        .map(|p| waves.iter().map(|(k, phase, a)| a * (k.dot(p) + phase).sin()).sum())
        .collect();
    let peak = f.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    mesh.vertex_normals().iter().zip(&f).map(|(n, x)| n * (max * x / peak)).collect()
}

/// Shortest-edge collapse to midpoints until `fraction` of the vertices are gone.
fn decimate(mesh: &Mesh, fraction: f64) -> Result<Mesh> {
    let n = mesh.num_vertices();
    let target = ((n as f64) * (1.0 - fraction)).round().max(4.0) as usize;
    let mut verts = mesh.vertices.clone();
    let mut colors = mesh.colors.clone();
    let mut faces = mesh.faces.clone();
    let mut alive = vec![true; n];
    let mut count = n;
    while count > target {
        let mut vf: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (f, face) in faces.iter().enumerate() {
            for &v in face {
                vf[v].push(f);
            }
        }
        let ring = |v: usize| -> HashSet<usize> { vf[v].iter().flat_map(|&f| faces[f]).filter(|&u| u != v).collect() };
        let mut edges: Vec<(f64, usize, usize)> = Vec::new();
        for face in &faces {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                if a < b {
                    edges.push(((verts[a] - verts[b]).norm(), a, b));
                }
            }
        }
        edges.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        edges.dedup_by(|x, y| x.1 == y.1 && x.2 == y.2);
        let mut locked = vec![false; n];
        let mut collapsed = Vec::new();
        for &(_, a, b) in &edges {
            if count - collapsed.len() <= target {
                break;
            }
            if locked[a] || locked[b] {
                continue;
            }
            let (ra, rb) = (ring(a), ring(b));
            if ra.intersection(&rb).count() != 2 || ra.len() + rb.len() < 8 {
                continue;
            }
            let mid = (verts[a] + verts[b]) * 0.5;
            let flips = vf[a].iter().chain(&vf[b]).any(|&f| {
                let face = faces[f];
                if face.contains(&a) && face.contains(&b) {
                    return false;
                }
                let old = [verts[face[0]], verts[face[1]], verts[face[2]]];
                let mut new = old;
                for k in 0..3 {
                    if face[k] == a || face[k] == b {
                        new[k] = mid;
                    }
                }
                let n0 = (old[1] - old[0]).cross(&(old[2] - old[0]));
                let n1 = (new[1] - new[0]).cross(&(new[2] - new[0]));
                n0.dot(&n1) <= 0.1 * n0.norm() * n1.norm()
            });
            if flips {
                continue;
            }
            for v in ra.iter().chain(rb.iter()).chain([a, b].iter()) {
                locked[*v] = true;
            }
            collapsed.push((a, b, mid));
        }
        if collapsed.is_empty() {
            break;
        }
        let mut remap: Vec<usize> = (0..n).collect();
        for &(a, b, mid) in &collapsed {
            verts[a] = mid;
            if let Some(c) = colors.as_mut() {
                let (ca, cb) = (c[a], c[b]);
                c[a] = [0, 1, 2, 3].map(|k| 0.5 * (ca[k] + cb[k]));
            }
            alive[b] = false;
            remap[b] = a;
        }
        faces = faces
            .iter()
            .map(|f| f.map(|v| remap[v]))
            .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
            .collect();
        count -= collapsed.len();
    }
    let mut index = vec![usize::MAX; n];
    let mut new_verts = Vec::with_capacity(count);
    let mut new_colors = Vec::with_capacity(count);
    for v in 0..n {
        if alive[v] {
            index[v] = new_verts.len();
            new_verts.push(verts[v]);
            if let Some(c) = &colors {
                new_colors.push(c[v]);
            }
        }
    }
    let faces = faces.iter().map(|f| f.map(|v| index[v])).collect();
    let out = Mesh::new(new_verts, faces)?;
    if colors.is_some() {
        return out.with_colors(new_colors);
    }
    Ok(out)
}

/// Generation parameters of a named scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub shape: Shape,
    pub subdivisions: u32,
    pub pattern: ColorPattern,
    pub resolution: usize,
    pub max_offset_px: f64,
    pub shape_offset: f64,
    pub color_blur: usize,
    pub input_elevation: f64,
}

pub const SCENARIO_NAMES: [&str; 4] = ["sphere", "torus", "blob", "cube"];

impl ScenarioSpec {
    pub fn named(name: &str) -> Result<Self> {
        let (shape, subdivisions, pattern) = match name {
            "sphere" => (Shape::Sphere, 4, ColorPattern::Checker),
            "torus" => (Shape::Torus, 3, ColorPattern::Checker),
            "blob" => (Shape::Blob, 4, ColorPattern::Checker),
            "cube" => (Shape::Cube, 4, ColorPattern::Checker),
            other => {
                return Err(Error::Config(format!("unknown scenario {other:?} (expected one of {})", SCENARIO_NAMES.join(", "))))
            }
        };
        Ok(ScenarioSpec {
            shape,
            subdivisions,
            pattern,
            resolution: DEFAULT_RESOLUTION,
            max_offset_px: 4.0,
            shape_offset: 0.05,
            color_blur: 5,
            input_elevation: 10.0,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub spec: ScenarioSpec,
    pub gt_mesh: Mesh,
    pub clean_views: Vec<PosedImage>,
    pub views: Vec<PosedImage>,
    /// Normal maps of the true shape, standing in for generated normal maps.
    pub normal_views: Vec<PosedImage>,
    pub injected_fields: Vec<DeformationField2D>,
    pub initial_mesh: Mesh,
    pub displacement: Vec<Vec3>,
    pub input_image: PosedImage,
}

impl Scenario {
    pub fn generate(name: &str, seed: u64) -> Result<Scenario> {
        Scenario::from_spec(name, ScenarioSpec::named(name)?, seed)
    }

    pub fn from_spec(name: &str, spec: ScenarioSpec, seed: u64) -> Result<Scenario> {
        let gt = make_gt_mesh(spec.shape, spec.subdivisions, spec.pattern, seed);
        let clean_views = render_views(&gt, spec.resolution)?;
        let normal_views = render_normal_views(&gt, spec.resolution)?;
        let (views, injected_fields) = perturb_views(&clean_views, spec.max_offset_px, seed)?;
        let offset = degrade_mesh(&gt, Degradation::ShapeOffset, spec.shape_offset, seed)?;
        let initial = degrade_mesh(&offset.mesh, Degradation::BlurColors, spec.color_blur as f64, seed)?.mesh;
        let input_cam = Camera::new(spec.input_elevation, 0.0, spec.resolution);
        let input_image = PosedImage::new(render(&gt, &input_cam, RenderMode::Hard)?.image, input_cam)?;
        Ok(Scenario {
            name: name.to_string(),
            seed,
            spec,
            gt_mesh: gt,
            clean_views,
            views,
            normal_views,
            injected_fields,
            initial_mesh: initial,
            displacement: offset.displacement.expect("shape offset stores its displacement"),
            input_image,
        })
    }

    /// Writes the bundle: `initial.ply`, `view_<k>.png`, `input.png`,
    /// `manifest.txt`, normal maps under `normals/`, and the ground truth
    /// (mesh, injected fields, displacement) under `truth/`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("truth"))?;
        std::fs::create_dir_all(dir.join("normals"))?;
        write_mesh(dir.join("initial.ply"), &self.initial_mesh)?;
        for (k, v) in self.views.iter().enumerate() {
            v.image.write_png(dir.join(format!("view_{k}.png")))?;
            std::fs::write(dir.join("truth").join(format!("field_{k}.json")), self.injected_fields[k].to_json())?;
        }
        for (k, v) in self.normal_views.iter().enumerate() {
            v.image.write_png(dir.join("normals").join(format!("normal_{k}.png")))?;
        }
        self.input_image.image.write_png(dir.join("input.png"))?;
        write_mesh(dir.join("truth").join("gt.ply"), &self.gt_mesh)?;
        let mut disp = String::new();
        for d in &self.displacement {
            let _ = writeln!(disp, "{} {} {}", d.x, d.y, d.z);
        }
        std::fs::write(dir.join("truth").join("displacement.txt"), disp)?;
        let mut m = String::new();
        let _ = writeln!(m, "name = {}", self.name);
        let _ = writeln!(m, "seed = {}", self.seed);
        let _ = writeln!(m, "spec = {}", serde_json::to_string(&self.spec)?);
        for (k, v) in self.views.iter().enumerate() {
            let _ = writeln!(m, "view_{k} = {}", camera_line(&v.camera));
        }
        let _ = writeln!(m, "input = {}", camera_line(&self.input_image.camera));
        std::fs::write(dir.join("manifest.txt"), m)?;
        Ok(())
    }
}

fn camera_line(c: &Camera) -> String {
    format!("{} {} {} {} {} {}", c.elevation_deg, c.azimuth_deg, c.distance, c.fov_deg, c.width, c.height)
}

fn parse_camera(s: &str) -> Result<Camera> {
    let t: Vec<&str> = s.split_whitespace().collect();
    let bad = || Error::parse("manifest", format!("bad camera line {s:?}"));
    if t.len() != 6 {
        return Err(bad());
    }
    let f = |i: usize| t[i].parse::<f64>().map_err(|_| bad());
    let u = |i: usize| t[i].parse::<usize>().map_err(|_| bad());
    let cam = Camera { elevation_deg: f(0)?, azimuth_deg: f(1)?, distance: f(2)?, fov_deg: f(3)?, width: u(4)?, height: u(5)? };
    cam.validate()?;
    Ok(cam)
}

/// The inputs a pipeline run reads back from a bundle directory.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub name: String,
    pub seed: u64,
    pub initial_mesh: Mesh,
    pub views: Vec<PosedImage>,
    /// Normal maps posed like `views`; empty when the bundle has none.
    pub normal_views: Vec<PosedImage>,
    pub input_image: PosedImage,
    pub gt_mesh: Option<Mesh>,
}

impl Bundle {
    pub fn load(dir: impl AsRef<Path>) -> Result<Bundle> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("manifest.txt");
        if !manifest_path.exists() {
            return Err(Error::MissingFiles(vec![manifest_path]));
        }
        let text = std::fs::read_to_string(&manifest_path)?;
        let mut name = String::new();
        let mut seed = 0;
        let mut cams: Vec<(usize, Camera)> = Vec::new();
        let mut input_cam = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::parse("manifest", format!("expected key = value: {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "name" => name = v.to_string(),
                "seed" => seed = v.parse().map_err(|_| Error::parse("manifest", "bad seed"))?,
                "spec" => {}
                "input" => input_cam = Some(parse_camera(v)?),
                _ if k.starts_with("view_") => {
                    let idx = k[5..].parse().map_err(|_| Error::parse("manifest", format!("bad key {k}")))?;
                    cams.push((idx, parse_camera(v)?));
                }
                _ => return Err(Error::parse("manifest", format!("unknown key {k}"))),
            }
        }
        cams.sort_by_key(|c| c.0);
        let mut needed: Vec<PathBuf> = vec![dir.join("initial.ply"), dir.join("input.png")];
        needed.extend(cams.iter().map(|(k, _)| dir.join(format!("view_{k}.png"))));
        let missing: Vec<PathBuf> = needed.into_iter().filter(|p| !p.exists()).collect();
        if !missing.is_empty() {
            return Err(Error::MissingFiles(missing));
        }
        let input_cam = input_cam.ok_or_else(|| Error::parse("manifest", "missing input camera"))?;
        let views = cams
            .iter()
            .map(|(k, c)| PosedImage::new(ImageRGBA::read_png(dir.join(format!("view_{k}.png")))?, *c))
            .collect::<Result<Vec<_>>>()?;
        let normal_paths: Vec<PathBuf> = cams.iter().map(|(k, _)| dir.join("normals").join(format!("normal_{k}.png"))).collect();
        let normal_views = if normal_paths.iter().all(|p| p.exists()) {
            normal_paths.iter().zip(&cams).map(|(p, (_, c))| PosedImage::new(ImageRGBA::read_png(p)?, *c)).collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let gt_path = dir.join("truth").join("gt.ply");
        Ok(Bundle {
            name,
            seed,
            initial_mesh: read_mesh(dir.join("initial.ply"))?,
            views,
            normal_views,
            input_image: PosedImage::new(ImageRGBA::read_png(dir.join("input.png"))?, input_cam)?,
            gt_mesh: if gt_path.exists() { Some(read_mesh(gt_path)?) } else { None },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::icosphere;

    #[test]
    fn zero_amount_is_identity() {
        let m = make_gt_mesh(Shape::Sphere, 2, ColorPattern::Checker, 1);
        for mode in [Degradation::Decimate, Degradation::Smooth, Degradation::BlurColors, Degradation::ShapeOffset] {
            let d = degrade_mesh(&m, mode, 0.0, 3).unwrap();
            assert_eq!(d.mesh.vertices, m.vertices, "{mode:?}");
            assert_eq!(d.mesh.faces, m.faces);
            assert_eq!(d.mesh.colors, m.colors);
        }
    }

    #[test]
    fn shape_offset_respects_bound() {
        let m = make_gt_mesh(Shape::Blob, 3, ColorPattern::Spots, 2);
        let d = degrade_mesh(&m, Degradation::ShapeOffset, 0.05, 9).unwrap();
        let bound = 0.05 * m.bbox_diagonal();
        let disp = d.displacement.unwrap();
        let max = disp.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(max <= bound * (1.0 + 1e-12) && max > 0.9 * bound);
    }

    #[test]
    fn blur_reduces_color_variance() {
        let m = make_gt_mesh(Shape::Sphere, 3, ColorPattern::Checker, 0);
        let var = |c: &[Rgba]| {
            let n = c.len() as f64;
            (0..3)
                .map(|k| {
                    let mean = c.iter().map(|x| x[k]).sum::<f64>() / n;
                    c.iter().map(|x| (x[k] - mean).powi(2)).sum::<f64>() / n
                })
                .sum::<f64>()
        };
        let d = degrade_mesh(&m, Degradation::BlurColors, 5.0, 0).unwrap();
        assert!(var(d.mesh.colors.as_ref().unwrap()) < var(m.colors.as_ref().unwrap()));
    }

    #[test]
    fn decimation_keeps_a_valid_closed_mesh() {
        let m = icosphere(3);
        let d = degrade_mesh(&m, Degradation::Decimate, 0.5, 0).unwrap().mesh;
        let target = (m.num_vertices() as f64 * 0.5).round() as usize;
        assert!(d.num_vertices() <= target + target / 10, "{}", d.num_vertices());
        assert_eq!(d.num_faces(), 2 * d.num_vertices() - 4);
        assert_eq!(d.connected_components().len(), 1);
    }

    #[test]
    fn zero_perturbation_keeps_views() {
        let m = make_gt_mesh(Shape::Sphere, 2, ColorPattern::Checker, 0);
        let views = render_views(&m, 32).unwrap();
        let (p, _) = perturb_views(&views, 0.0, 5).unwrap();
        assert_eq!(p, views);
        assert_eq!(views[0].camera.elevation_deg, 20.0);
        assert_eq!(views[0].camera.azimuth_deg, 30.0);
    }

    #[test]
    fn unknown_name_rejected() {
        assert!(ScenarioSpec::named("teapot").is_err());
    }
}
