//! Vertex colors from posed images.
//!
//! Each vertex takes the weighted mean of the pixels it projects to, with the
//! weight of view `k` equal to the cosine between the vertex normal and the
//! direction from the vertex to camera `k`. A view contributes nothing when the
//! cosine is below the threshold, the vertex is occluded, or it lands outside
//! the image or on a pixel with alpha below one half. Vertices no view sees are
//! filled by diffusing colors from their colored neighbors. Image colors are
//! premultiplied by alpha, so each bilinear sample is divided by its alpha.

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::ImageRGBA;
use crate::mesh::{Mesh, Rgba};
use crate::raster::{rasterize, RenderMode, SoftSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct PosedImage {
    pub image: ImageRGBA,
    pub camera: Camera,
}

impl PosedImage {
    pub fn new(image: ImageRGBA, camera: Camera) -> Result<Self> {
        camera.validate()?;
        if image.is_empty() {
            return Err(Error::Dimension("empty image".into()));
        }
        if image.dims() != (camera.width, camera.height) {
            return Err(Error::Dimension(format!(
                "image {:?} does not match camera resolution {}x{}",
                image.dims(),
                camera.width,
                camera.height
            )));
        }
        Ok(PosedImage { image, camera })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnprojectSettings {
    pub cos_threshold: f64,
    /// Occlusion tolerance as a fraction of the per-view depth range.
    pub depth_eps: f64,
    pub diffusion_iterations: usize,
}

impl Default for UnprojectSettings {
    fn default() -> Self {
        UnprojectSettings { cos_threshold: 0.1, depth_eps: 1e-3, diffusion_iterations: 50 }
    }
}

/// Where a vertex lands in one view and how much that view counts, before the
/// image-dependent alpha gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewHit {
    /// Bilinear sample position in pixel index coordinates.
    pub x: f64,
    pub y: f64,
    pub cos: f64,
}

/// Per-view visibility and cosine weights; depends only on geometry and cameras.
#[derive(Debug, Clone)]
pub struct ViewGeometry {
    pub hits: Vec<Vec<Option<ViewHit>>>,
}

impl ViewGeometry {
    pub fn new(mesh: &Mesh, cameras: &[Camera], settings: &UnprojectSettings) -> Result<Self> {
        let normals = mesh.vertex_normals();
        let mut hits = Vec::with_capacity(cameras.len());
        for cam in cameras {
            let tape = rasterize(&mesh.vertices, &mesh.faces, cam, RenderMode::Hard, &SoftSettings::default())?;
            let frame = cam.frame();
            let depths: Vec<f64> = mesh.vertices.iter().map(|v| frame.to_camera(v).z).collect();
            let (lo, hi) = depths.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
            let eps = settings.depth_eps * if hi > lo { hi - lo } else { 1.0 };
            let buffer = tape.depth();
            let (w, h) = (cam.width as i64, cam.height as i64);
            let view_hits = mesh
                .vertices
                .iter()
                .zip(&normals)
                .map(|(v, n)| {
                    let to_cam = frame.eye - v;
                    let cos = n.dot(&to_cam) / to_cam.norm();
                    if !(cos >= settings.cos_threshold) {
                        return None;
                    }
                    let p = frame.project(v);
                    if !p.in_front() {
                        return None;
                    }
                    let (px, py) = (p.x.floor() as i64, p.y.floor() as i64);
                    if px < 0 || py < 0 || px >= w || py >= h {
                        return None;
                    }
                    let mut visible = false;
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (qx, qy) = (px + dx, py + dy);
                            if qx < 0 || qy < 0 || qx >= w || qy >= h {
                                continue;
                            }
                            let d = buffer[(qy * w + qx) as usize];
                            if d.is_finite() && p.depth <= d + eps {
                                visible = true;
                            }
                        }
                    }
                    visible.then_some(ViewHit { x: p.x - 0.5, y: p.y - 0.5, cos })
                })
                .collect();
            hits.push(view_hits);
        }
        Ok(ViewGeometry { hits })
    }

    pub fn num_views(&self) -> usize {
        self.hits.len()
    }
}

/// Linear map from view colors to vertex colors, fixed for one set of image
/// alphas. Forward and adjoint share it, so the adjoint is exact in RGB.
#[derive(Debug, Clone)]
pub struct UnprojectionPlan {
    num_vertices: usize,
    /// Per vertex: `(view, pixel index, weight)`; weights sum to one.
    taps: Vec<Vec<(usize, usize, f64)>>,
    /// Largest raw cosine weight that passed every gate, per vertex.
    pub max_weight: Vec<f64>,
    /// Diffusion fills in order: vertex and the already-colored vertices it averages.
    fills: Vec<(usize, Vec<usize>)>,
    /// Vertices still uncolored after diffusion get the mean of all covered vertices.
    leftovers: Vec<usize>,
    covered: Vec<usize>,
}

impl UnprojectionPlan {
    pub fn new(mesh: &Mesh, geometry: &ViewGeometry, images: &[&ImageRGBA], view_scale: &[f64], settings: &UnprojectSettings) -> Result<Self> {
        assert_eq!(images.len(), geometry.num_views());
        assert_eq!(view_scale.len(), geometry.num_views());
        let n = mesh.num_vertices();
        let mut taps = vec![Vec::new(); n];
        let mut max_weight = vec![0.0; n];
        for v in 0..n {
            let mut total = 0.0;
            for (k, view) in geometry.hits.iter().enumerate() {
                let Some(hit) = view[v] else { continue };
                let img = images[k];
                if img.sample(hit.x, hit.y)[3] < 0.5 {
                    continue;
                }
                let w = hit.cos * view_scale[k];
                if w <= 0.0 {
                    continue;
                }
                // Colors are premultiplied, so dividing by the sampled alpha
                // recovers the surface color at rims.
                let bt = img.bilinear_taps(hit.x, hit.y);
                let mass: f64 = bt.iter().map(|&(xi, yi, bw)| bw * img.alpha(xi, yi)).sum();
                for &(xi, yi, bw) in bt.iter() {
                    if img.alpha(xi, yi) > 0.0 {
                        taps[v].push((k, yi * img.width() + xi, w * bw / mass));
                    }
                }
                total += w;
                max_weight[v] = f64::max(max_weight[v], hit.cos);
            }
            for t in &mut taps[v] {
                t.2 /= total;
            }
        }
        let covered: Vec<usize> = (0..n).filter(|&v| !taps[v].is_empty()).collect();
        if covered.is_empty() && n > 0 {
            return Err(Error::NoCoverage);
        }
        let neighbors = mesh.vertex_neighbors();
        let mut colored: Vec<bool> = taps.iter().map(|t| !t.is_empty()).collect();
        let mut fills = Vec::new();
        for _ in 0..settings.diffusion_iterations {
            let step: Vec<(usize, Vec<usize>)> = (0..n)
                .filter(|&v| !colored[v])
                .filter_map(|v| {
                    let src: Vec<usize> = neighbors[v].iter().copied().filter(|&u| colored[u]).collect();
                    (!src.is_empty()).then_some((v, src))
                })
                .collect();
            if step.is_empty() {
                break;
            }
            for (v, _) in &step {
                colored[*v] = true;
            }
            fills.extend(step);
        }
        let leftovers = (0..n).filter(|&v| !colored[v]).collect();
        Ok(UnprojectionPlan { num_vertices: n, taps, max_weight, fills, leftovers, covered })
    }

    pub fn covered(&self) -> &[usize] {
        &self.covered
    }

    pub fn apply(&self, images: &[&ImageRGBA]) -> Vec<Rgba> {
        let mut colors = vec![[0.0, 0.0, 0.0, 1.0]; self.num_vertices];
        for (v, taps) in self.taps.iter().enumerate() {
            for &(k, i, w) in taps {
                let s = images[k].pixels()[i];
                for c in 0..3 {
                    colors[v][c] += w * s[c];
                }
            }
        }
        for (v, src) in &self.fills {
            let mut acc = [0.0; 3];
            for &u in src {
                for c in 0..3 {
                    acc[c] += colors[u][c];
                }
            }
            colors[*v] = [acc[0] / src.len() as f64, acc[1] / src.len() as f64, acc[2] / src.len() as f64, 1.0];
        }
        if !self.leftovers.is_empty() {
            let mut mean = [0.0; 3];
            for &u in &self.covered {
                for c in 0..3 {
                    mean[c] += colors[u][c] / self.covered.len() as f64;
                }
            }
            for &v in &self.leftovers {
                colors[v] = [mean[0], mean[1], mean[2], 1.0];
            }
        }
        colors
    }

    /// Adjoint of [`apply`](Self::apply): vertex-color gradients (RGB used) to
    /// per-view image gradients.
    pub fn adjoint(&self, dims: &[(usize, usize)], upstream: &[Rgba]) -> Vec<Vec<[f64; 4]>> {
        let mut g: Vec<[f64; 3]> = upstream.iter().map(|u| [u[0], u[1], u[2]]).collect();
        if !self.leftovers.is_empty() {
            let mut total = [0.0; 3];
            for &v in &self.leftovers {
                for c in 0..3 {
                    total[c] += g[v][c];
                }
                g[v] = [0.0; 3];
            }
            for &u in &self.covered {
                for c in 0..3 {
                    g[u][c] += total[c] / self.covered.len() as f64;
                }
            }
        }
        for (v, src) in self.fills.iter().rev() {
            let gv = g[*v];
            g[*v] = [0.0; 3];
            for &u in src {
                for c in 0..3 {
                    g[u][c] += gv[c] / src.len() as f64;
                }
            }
        }
        let mut out: Vec<Vec<[f64; 4]>> = dims.iter().map(|&(w, h)| vec![[0.0; 4]; w * h]).collect();
        for (v, taps) in self.taps.iter().enumerate() {
            for &(k, i, w) in taps {
                for c in 0..3 {
                    out[k][i][c] += w * g[v][c];
                }
            }
        }
        out
    }
}

/// Colors `mesh` from the posed views.
pub fn unproject(mesh: &Mesh, views: &[PosedImage], settings: &UnprojectSettings) -> Result<Mesh> {
    Ok(unproject_weighted(mesh, views, &vec![1.0; views.len()], settings)?.0)
}

/// Like [`unproject`] with a per-view weight multiplier; also returns the plan.
pub fn unproject_weighted(
    mesh: &Mesh,
    views: &[PosedImage],
    view_scale: &[f64],
    settings: &UnprojectSettings,
) -> Result<(Mesh, UnprojectionPlan)> {
    if views.is_empty() {
        return Err(Error::NoCoverage);
    }
    let cameras: Vec<Camera> = views.iter().map(|v| v.camera).collect();
    let geometry = ViewGeometry::new(mesh, &cameras, settings)?;
    let images: Vec<&ImageRGBA> = views.iter().map(|v| &v.image).collect();
    let plan = UnprojectionPlan::new(mesh, &geometry, &images, view_scale, settings)?;
    let colors = plan.apply(&images);
    let mut out = mesh.clone();
    out.colors = Some(colors);
    Ok((out, plan))
}

/// Gradients of `sum(upstream * unproject(mesh, views).colors)` with respect
/// to each view's image. Weights are constants of the geometry.
pub fn unproject_backward(mesh: &Mesh, views: &[PosedImage], upstream: &[Rgba], settings: &UnprojectSettings) -> Result<Vec<Vec<[f64; 4]>>> {
    let (_, plan) = unproject_weighted(mesh, views, &vec![1.0; views.len()], settings)?;
    let dims: Vec<(usize, usize)> = views.iter().map(|v| v.image.dims()).collect();
    Ok(plan.adjoint(&dims, upstream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Vec3;

    fn facing_quad() -> Mesh {
        Mesh::new(
            vec![
                Vec3::new(0.0, -0.5, -0.5),
                Vec3::new(0.0, 0.5, -0.5),
                Vec3::new(0.0, 0.5, 0.5),
                Vec3::new(0.0, -0.5, 0.5),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn constant_red_image() {
        let cam = Camera::new(0.0, 0.0, 32);
        let view = PosedImage::new(ImageRGBA::filled(32, 32, [1.0, 0.0, 0.0, 1.0]), cam).unwrap();
        let out = unproject(&facing_quad(), &[view.clone()], &UnprojectSettings::default()).unwrap();
        let close = |a: &[Rgba], b: &[Rgba]| a.iter().zip(b).all(|(p, q)| (0..4).all(|c| (p[c] - q[c]).abs() < 1e-12));
        let red = vec![[1.0, 0.0, 0.0, 1.0]; 4];
        assert!(close(out.colors.as_ref().unwrap(), &red));
        let twice = unproject(&facing_quad(), &[view.clone(), view], &UnprojectSettings::default()).unwrap();
        assert!(close(twice.colors.as_ref().unwrap(), &red));
    }

    #[test]
    fn no_coverage_is_error() {
        // camera behind the quad (normals face +x)
        let cam = Camera::new(0.0, 180.0, 32);
        let view = PosedImage::new(ImageRGBA::filled(32, 32, [1.0; 4]), cam).unwrap();
        let err = unproject(&facing_quad(), &[view], &UnprojectSettings::default()).unwrap_err();
        assert_eq!(err.to_string(), "no view covers the mesh");
    }

    #[test]
    fn transparent_pixels_are_skipped() {
        let cam = Camera::new(0.0, 0.0, 32);
        let view = PosedImage::new(ImageRGBA::filled(32, 32, [1.0, 1.0, 1.0, 0.2]), cam).unwrap();
        assert!(matches!(unproject(&facing_quad(), &[view], &UnprojectSettings::default()), Err(Error::NoCoverage)));
    }

    #[test]
    fn mismatched_resolution_rejected() {
        assert!(PosedImage::new(ImageRGBA::new(16, 16), Camera::new(0.0, 0.0, 32)).is_err());
    }
}
