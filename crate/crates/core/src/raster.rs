//! Software rasterizer with a gradient contract.
//!
//! Rendering is split into a geometry pass that produces a [`RasterTape`]
//! (which face covers which pixel, with barycentrics and silhouette
//! distances) and a shading pass that interpolates per-vertex attributes.
//! Shading is linear in the attributes, so attribute gradients are exact in
//! both modes. In soft mode the tape also records everything needed to
//! differentiate pixels with respect to vertex positions:
//!
//! * alpha inside a band around the silhouette is
//!   `sigmoid(±d² / σ²)`, `d` the screen distance to the nearest silhouette
//!   edge, `+` on covered pixels;
//! * covered band pixels blend every face under the pixel with weights
//!   `exp(-depth / γ)`;
//! * uncovered band pixels take the attribute interpolated (perspective
//!   correct) along the nearest silhouette edge, scaled by `2 * alpha` so it fades out across the band.
//!
//! Away from the band soft mode falls back to hard coverage.

use std::collections::HashMap;

use crate::camera::{Camera, CameraFrame};
use crate::error::{Error, Result};
use crate::image::ImageRGBA;
use crate::mesh::{vertex_normals_backward, vertex_normals_of, Mesh, Vec3};

const NEAR: f64 = 1e-6;
/// Silhouette edges are cut into pieces no longer than this many pixels.
const SEGMENT_PIECE_PX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SoftSettings {
    /// Silhouette sharpness in pixels.
    pub sigma: f64,
    /// Depth-softmax temperature in model units; `None` uses 1% of the depth range.
    pub gamma: Option<f64>,
    /// Half-width of the silhouette band in pixels.
    pub band: f64,
}

impl Default for SoftSettings {
    fn default() -> Self {
        SoftSettings { sigma: 1.0, gamma: None, band: 4.0 }
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: ImageRGBA,
    /// Per-pixel depth, `+inf` where nothing is rasterized.
    pub depth: Vec<f64>,
    pub face_id: Vec<Option<u32>>,
}

#[derive(Debug, Clone, Default)]
pub struct RenderGradients {
    pub colors: Vec<[f64; 4]>,
    pub positions: Option<Vec<Vec3>>,
}

#[derive(Debug, Clone, Copy)]
struct Fragment {
    face: u32,
    bary: [f64; 3],
    depth: f64,
    /// Normalized blend weight.
    weight: f64,
}

#[derive(Debug, Clone, Copy)]
struct AlphaTerm {
    segment: u32,
    /// +1 on covered pixels, -1 outside.
    sign: f64,
    /// Line parameter of the closest point along the full edge.
    u: f64,
    alpha: f64,
}

#[derive(Debug, Clone)]
enum PixelSample {
    Empty,
    Surface { face: u32, bary: [f64; 3] },
    Blend { alpha: AlphaTerm, fragments: Vec<Fragment> },
    Rim { alpha: AlphaTerm },
}

/// A straight piece `[u0, u1]` of a silhouette edge `a -> b`.
#[derive(Debug, Clone, Copy)]
struct Segment {
    a: usize,
    b: usize,
    u0: f64,
    u1: f64,
}

/// Geometry pass of a render: everything except the attribute values.
#[derive(Debug, Clone)]
pub struct RasterTape {
    mode: RenderMode,
    width: usize,
    height: usize,
    frame: CameraFrame,
    sigma: f64,
    gamma: f64,
    /// Camera-space vertex positions (eye at origin, `z` = depth).
    cam: Vec<Vec3>,
    screen: Vec<[f64; 2]>,
    faces: Vec<[usize; 3]>,
    samples: Vec<PixelSample>,
    segments: Vec<Segment>,
    depth: Vec<f64>,
    face_id: Vec<Option<u32>>,
}

impl RasterTape {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mode(&self) -> RenderMode {
        self.mode
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn face_id(&self) -> &[Option<u32>] {
        &self.face_id
    }

    pub fn frame(&self) -> &CameraFrame {
        &self.frame
    }

    /// Ray through the center of pixel `(x, y)` in camera space, `z = 1`.
    fn ray(&self, x: usize, y: usize) -> Vec3 {
        let f = &self.frame;
        Vec3::new((x as f64 + 0.5 - f.cx) / f.focal, -(y as f64 + 0.5 - f.cy) / f.focal, 1.0)
    }
}

/// Perspective-correct barycentrics and depth of the ray `d` hitting the plane
/// of the camera-space triangle `p`.
fn ray_barycentrics(p: &[Vec3; 3], d: &Vec3) -> Option<([f64; 3], f64)> {
    let s = [d.dot(&p[1].cross(&p[2])), d.dot(&p[2].cross(&p[0])), d.dot(&p[0].cross(&p[1]))];
    let total = s[0] + s[1] + s[2];
    if total == 0.0 || !total.is_finite() {
        return None;
    }
    let b = [s[0] / total, s[1] / total, s[2] / total];
    let det = p[0].dot(&p[1].cross(&p[2]));
    Some((b, det / total))
}

/// Accumulates camera-space position gradients given gradients on the
/// barycentrics and on the depth of a ray/triangle hit.
fn ray_barycentrics_backward(p: &[Vec3; 3], d: &Vec3, g_bary: [f64; 3], g_depth: f64, out: &mut [Vec3; 3]) {
    let s = [d.dot(&p[1].cross(&p[2])), d.dot(&p[2].cross(&p[0])), d.dot(&p[0].cross(&p[1]))];
    let total = s[0] + s[1] + s[2];
    let b = [s[0] / total, s[1] / total, s[2] / total];
    let det = p[0].dot(&p[1].cross(&p[2]));
    let depth = det / total;
    let mix = g_bary[0] * b[0] + g_bary[1] * b[1] + g_bary[2] * b[2];
    let mut g_s = [0.0; 3];
    for k in 0..3 {
        g_s[k] = (g_bary[k] - mix) / total - g_depth * depth / total;
    }
    let g_det = g_depth / total;
    // s0 = d.(p1 x p2), s1 = d.(p2 x p0), s2 = d.(p0 x p1)
    out[1] += p[2].cross(d) * g_s[0];
    out[2] += d.cross(&p[1]) * g_s[0];
    out[2] += p[0].cross(d) * g_s[1];
    out[0] += d.cross(&p[2]) * g_s[1];
    out[0] += p[1].cross(d) * g_s[2];
    out[1] += d.cross(&p[0]) * g_s[2];
    out[0] += p[1].cross(&p[2]) * g_det;
    out[1] += p[2].cross(&p[0]) * g_det;
    out[2] += p[0].cross(&p[1]) * g_det;
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rasterizes the geometry of `vertices`/`faces` as seen by `camera`.
pub fn rasterize(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    camera: &Camera,
    mode: RenderMode,
    settings: &SoftSettings,
) -> Result<RasterTape> {
    camera.validate()?;
    let (width, height) = (camera.width, camera.height);
    let frame = camera.frame();
    let cam: Vec<Vec3> = vertices.iter().map(|v| frame.to_camera(v)).collect();
    let screen: Vec<[f64; 2]> = cam
        .iter()
        .map(|c| [frame.cx + frame.focal * c.x / c.z, frame.cy - frame.focal * c.y / c.z])
        .collect();
    let (zmin, zmax) = cam.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.z), hi.max(c.z)));
    let depth_range = if zmax > zmin { zmax - zmin } else { 1.0 };
    let gamma = settings.gamma.unwrap_or(1e-2 * depth_range);

    let n_px = width * height;
    let mut depth = vec![f64::INFINITY; n_px];
    let mut face_id: Vec<Option<u32>> = vec![None; n_px];
    let mut bary = vec![[0.0; 3]; n_px];

    let mut tape = RasterTape {
        mode,
        width,
        height,
        frame,
        sigma: settings.sigma,
        gamma,
        cam,
        screen,
        faces: faces.to_vec(),
        samples: Vec::new(),
        segments: Vec::new(),
        depth: Vec::new(),
        face_id: Vec::new(),
    };

    for (f, face) in faces.iter().enumerate() {
        let Some((x0, x1, y0, y1)) = tape.face_pixel_bounds(face) else { continue };
        let p = [tape.cam[face[0]], tape.cam[face[1]], tape.cam[face[2]]];
        for y in y0..y1 {
            for x in x0..x1 {
                let d = tape.ray(x, y);
                let Some((b, z)) = ray_barycentrics(&p, &d) else { continue };
                if b.iter().any(|&bi| bi < 0.0) || z <= NEAR {
                    continue;
                }
                let i = y * width + x;
                if z < depth[i] {
                    depth[i] = z;
                    face_id[i] = Some(f as u32);
                    bary[i] = b;
                }
            }
        }
    }

    let mut samples: Vec<PixelSample> = face_id
        .iter()
        .zip(&bary)
        .map(|(f, b)| match f {
            Some(f) => PixelSample::Surface { face: *f, bary: *b },
            None => PixelSample::Empty,
        })
        .collect();

    if mode == RenderMode::Soft && !faces.is_empty() {
        tape.segments = tape.silhouette_segments(&face_id);
        tape.soften(&mut samples, &face_id, settings.band);
    }
    tape.samples = samples;
    tape.depth = depth;
    tape.face_id = face_id;
    Ok(tape)
}

impl RasterTape {
    /// Pixel index range `[x0, x1) x [y0, y1)` whose centers may fall in the face.
    fn face_pixel_bounds(&self, face: &[usize; 3]) -> Option<(usize, usize, usize, usize)> {
        if face.iter().any(|&v| self.cam[v].z <= NEAR) {
            return None;
        }
        let xs = face.map(|v| self.screen[v][0]);
        let ys = face.map(|v| self.screen[v][1]);
        let lo_x = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi_x = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo_y = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi_y = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // pixel centers at i + 0.5
        let x0 = (lo_x - 0.5).ceil().max(0.0);
        let x1 = ((hi_x - 0.5).floor() + 1.0).min(self.width as f64);
        let y0 = (lo_y - 0.5).ceil().max(0.0);
        let y1 = ((hi_y - 0.5).floor() + 1.0).min(self.height as f64);
        if !(x0 < x1 && y0 < y1) {
            return None;
        }
        Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
    }

    /// Pieces of contour edges that lie on the coverage boundary.
    fn silhouette_segments(&self, face_id: &[Option<u32>]) -> Vec<Segment> {
        let mut edge_faces: HashMap<[usize; 2], Vec<usize>> = HashMap::new();
        for (f, face) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                edge_faces.entry([a.min(b), a.max(b)]).or_default().push(f);
            }
        }
        let facing = |f: usize| {
            let [a, b, c] = self.faces[f];
            self.cam[a].dot(&self.cam[b].cross(&self.cam[c])) > 0.0
        };
        let mut edges: Vec<[usize; 2]> = edge_faces
            .iter()
            .filter(|(e, fs)| {
                if e.iter().any(|&v| self.cam[v].z <= NEAR) {
                    return false;
                }
                fs.len() == 1 || fs.iter().any(|&f| facing(f) != facing(fs[0]))
            })
            .map(|(e, _)| *e)
            .collect();
        edges.sort_unstable();

        let covered = |x: i64, y: i64| -> bool {
            x >= 0
                && y >= 0
                && (x as usize) < self.width
                && (y as usize) < self.height
                && face_id[y as usize * self.width + x as usize].is_some()
        };
        let mut segments = Vec::new();
        for [a, b] in edges {
            let (pa, pb) = (self.screen[a], self.screen[b]);
            let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
            let pieces = ((len / SEGMENT_PIECE_PX).ceil() as usize).max(1);
            for k in 0..pieces {
                let u0 = k as f64 / pieces as f64;
                let u1 = (k + 1) as f64 / pieces as f64;
                let um = 0.5 * (u0 + u1);
                let mx = pa[0] + um * (pb[0] - pa[0]);
                let my = pa[1] + um * (pb[1] - pa[1]);
                let (px, py) = ((mx - 0.5).round() as i64, (my - 0.5).round() as i64);
                let mut any_in = false;
                let mut any_out = false;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if covered(px + dx, py + dy) {
                            any_in = true;
                        } else {
                            any_out = true;
                        }
                    }
                }
                if any_in && any_out {
                    segments.push(Segment { a, b, u0, u1 });
                }
            }
        }
        segments
    }

    fn segment_closest(&self, seg: &Segment, p: [f64; 2]) -> (f64, f64) {
        let (pa, pb) = (self.screen[seg.a], self.screen[seg.b]);
        let e = [pb[0] - pa[0], pb[1] - pa[1]];
        let len2 = e[0] * e[0] + e[1] * e[1];
        let u_line = if len2 > 0.0 { ((p[0] - pa[0]) * e[0] + (p[1] - pa[1]) * e[1]) / len2 } else { 0.0 };
        let u = u_line.clamp(seg.u0, seg.u1);
        let q = [pa[0] + u * e[0], pa[1] + u * e[1]];
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        (d2, u)
    }

    fn soften(&self, samples: &mut [PixelSample], face_id: &[Option<u32>], band: f64) {
        let (w, h) = (self.width, self.height);
        let mut nearest: Vec<Option<(f64, u32, f64)>> = vec![None; w * h];
        for (si, seg) in self.segments.iter().enumerate() {
            let (pa, pb) = (self.screen[seg.a], self.screen[seg.b]);
            let qa = [pa[0] + seg.u0 * (pb[0] - pa[0]), pa[1] + seg.u0 * (pb[1] - pa[1])];
            let qb = [pa[0] + seg.u1 * (pb[0] - pa[0]), pa[1] + seg.u1 * (pb[1] - pa[1])];
            let x0 = (qa[0].min(qb[0]) - band - 0.5).floor().max(0.0) as usize;
            let x1 = ((qa[0].max(qb[0]) + band - 0.5).ceil() + 1.0).clamp(0.0, w as f64) as usize;
            let y0 = (qa[1].min(qb[1]) - band - 0.5).floor().max(0.0) as usize;
            let y1 = ((qa[1].max(qb[1]) + band - 0.5).ceil() + 1.0).clamp(0.0, h as f64) as usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = [x as f64 + 0.5, y as f64 + 0.5];
                    let (d2, u) = self.segment_closest(seg, p);
                    if d2 >= band * band {
                        continue;
                    }
                    let slot = &mut nearest[y * w + x];
                    if slot.map_or(true, |(best, _, _)| d2 < best) {
                        *slot = Some((d2, si as u32, u));
                    }
                }
            }
        }

        // Faces binned by 8x8 pixel tiles for blend lookups.
        const TILE: usize = 8;
        let (tw, th) = (w.div_ceil(TILE), h.div_ceil(TILE));
        let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tw * th];
        for (f, face) in self.faces.iter().enumerate() {
            if let Some((x0, x1, y0, y1)) = self.face_pixel_bounds(face) {
                for ty in y0 / TILE..=(y1 - 1) / TILE {
                    for tx in x0 / TILE..=(x1 - 1) / TILE {
                        bins[ty * tw + tx].push(f as u32);
                    }
                }
            }
        }

        let sigma2 = self.sigma * self.sigma;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let Some((d2, segment, u)) = nearest[i] else { continue };
                let covered = face_id[i].is_some();
                let sign = if covered { 1.0 } else { -1.0 };
                let alpha = AlphaTerm { segment, sign, u, alpha: sigmoid(sign * d2 / sigma2) };
                if !covered {
                    samples[i] = PixelSample::Rim { alpha };
                    continue;
                }
                let d = self.ray(x, y);
                let mut fragments = Vec::new();
                for &f in &bins[(y / TILE) * tw + x / TILE] {
                    let face = self.faces[f as usize];
                    let p = [self.cam[face[0]], self.cam[face[1]], self.cam[face[2]]];
                    let Some((b, z)) = ray_barycentrics(&p, &d) else { continue };
                    if b.iter().all(|&bi| bi >= 0.0) && z > NEAR {
                        fragments.push(Fragment { face: f, bary: b, depth: z, weight: 0.0 });
                    }
                }
                let zmin = fragments.iter().map(|fr| fr.depth).fold(f64::INFINITY, f64::min);
                let mut total = 0.0;
                for fr in &mut fragments {
                    fr.weight = (-(fr.depth - zmin) / self.gamma).exp();
                    total += fr.weight;
                }
                for fr in &mut fragments {
                    fr.weight /= total;
                }
                fragments.retain(|fr| fr.weight > 1e-12);
                samples[i] = PixelSample::Blend { alpha, fragments };
            }
        }
    }

    fn interpolate(&self, face: u32, bary: &[f64; 3], attrs: &[[f64; 3]]) -> [f64; 3] {
        let f = self.faces[face as usize];
        let mut out = [0.0; 3];
        for k in 0..3 {
            for c in 0..3 {
                out[c] += bary[k] * attrs[f[k]][c];
            }
        }
        out
    }

    /// Perspective-correct edge parameter for screen parameter `u`, with its
    /// derivatives by `u` and by the camera depths of both endpoints.
    fn rim_param(&self, seg: &Segment, u: f64) -> (f64, f64, f64, f64) {
        let (za, zb) = (self.cam[seg.a].z, self.cam[seg.b].z);
        let den = (1.0 - u) * zb + u * za;
        let t = u * za / den;
        let den2 = den * den;
        (t, za * zb / den2, u * (1.0 - u) * zb / den2, -u * (1.0 - u) * za / den2)
    }

    fn rim_value(&self, alpha: &AlphaTerm, attrs: &[[f64; 3]]) -> [f64; 3] {
        let seg = &self.segments[alpha.segment as usize];
        let (ca, cb) = (attrs[seg.a], attrs[seg.b]);
        let t = self.rim_param(seg, alpha.u).0;
        [0, 1, 2].map(|c| (1.0 - t) * ca[c] + t * cb[c])
    }

    /// Interpolates per-vertex attributes into an RGBA buffer (`A` = coverage).
    pub fn shade(&self, attrs: &[[f64; 3]]) -> Vec<[f64; 4]> {
        self.samples
            .iter()
            .map(|s| match s {
                PixelSample::Empty => [0.0; 4],
                PixelSample::Surface { face, bary } => {
                    let c = self.interpolate(*face, bary, attrs);
                    [c[0], c[1], c[2], 1.0]
                }
                PixelSample::Blend { alpha, fragments } => {
                    let mut c = [0.0; 3];
                    for fr in fragments {
                        let v = self.interpolate(fr.face, &fr.bary, attrs);
                        for k in 0..3 {
                            c[k] += fr.weight * v[k];
                        }
                    }
                    [c[0], c[1], c[2], alpha.alpha]
                }
                PixelSample::Rim { alpha } => {
                    let c = self.rim_value(alpha, attrs);
                    let fade = 2.0 * alpha.alpha;
                    [c[0] * fade, c[1] * fade, c[2] * fade, alpha.alpha]
                }
            })
            .collect()
    }

    /// Reverse pass of [`shade`](Self::shade). Returns gradients on the
    /// attributes and, when requested (soft mode only), on the world-space
    /// vertex positions.
    pub fn shade_backward(
        &self,
        attrs: &[[f64; 3]],
        upstream: &[[f64; 4]],
        want_positions: bool,
    ) -> Result<(Vec<[f64; 3]>, Option<Vec<Vec3>>)> {
        if want_positions && self.mode != RenderMode::Soft {
            return Err(Error::HardPositionGradient);
        }
        if upstream.len() != self.samples.len() {
            return Err(Error::Dimension(format!("{} upstream pixels for {}", upstream.len(), self.samples.len())));
        }
        let n = self.cam.len();
        let mut g_attr = vec![[0.0; 3]; n];
        let mut g_cam = vec![Vec3::zeros(); n];
        let mut g_screen = vec![[0.0; 2]; n];
        for (i, (s, g)) in self.samples.iter().zip(upstream).enumerate() {
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (x, y) = (i % self.width, i / self.width);
            match s {
                PixelSample::Empty => {}
                PixelSample::Surface { face, bary } => {
                    let f = self.faces[*face as usize];
                    for k in 0..3 {
                        for c in 0..3 {
                            g_attr[f[k]][c] += bary[k] * g[c];
                        }
                    }
                    if want_positions {
                        let g_bary = [0, 1, 2].map(|k| (0..3).map(|c| g[c] * attrs[f[k]][c]).sum::<f64>());
                        self.face_backward(*face, x, y, g_bary, 0.0, &mut g_cam);
                    }
                }
                PixelSample::Blend { alpha, fragments } => {
                    let values: Vec<[f64; 3]> =
                        fragments.iter().map(|fr| self.interpolate(fr.face, &fr.bary, attrs)).collect();
                    let mut mean = [0.0; 3];
                    for (fr, v) in fragments.iter().zip(&values) {
                        for c in 0..3 {
                            mean[c] += fr.weight * v[c];
                        }
                    }
                    for (fr, v) in fragments.iter().zip(&values) {
                        let f = self.faces[fr.face as usize];
                        for k in 0..3 {
                            for c in 0..3 {
                                g_attr[f[k]][c] += fr.weight * fr.bary[k] * g[c];
                            }
                        }
                        if want_positions {
                            let g_bary =
                                [0, 1, 2].map(|k| fr.weight * (0..3).map(|c| g[c] * attrs[f[k]][c]).sum::<f64>());
                            // d mean / d depth_j = -w_j (v_j - mean) / gamma
                            let g_depth =
                                -fr.weight * (0..3).map(|c| g[c] * (v[c] - mean[c])).sum::<f64>() / self.gamma;
                            self.face_backward(fr.face, x, y, g_bary, g_depth, &mut g_cam);
                        }
                    }
                    if want_positions {
                        self.alpha_backward(alpha, x, y, g[3], &mut g_screen);
                    }
                }
                PixelSample::Rim { alpha } => {
                    let seg = self.segments[alpha.segment as usize];
                    let fade = 2.0 * alpha.alpha;
                    let (t, dt_du, dt_dza, dt_dzb) = self.rim_param(&seg, alpha.u);
                    for c in 0..3 {
                        g_attr[seg.a][c] += (1.0 - t) * fade * g[c];
                        g_attr[seg.b][c] += t * fade * g[c];
                    }
                    if want_positions {
                        let value = self.rim_value(alpha, attrs);
                        let g_alpha = g[3] + 2.0 * (0..3).map(|c| g[c] * value[c]).sum::<f64>();
                        self.alpha_backward(alpha, x, y, g_alpha, &mut g_screen);
                        let g_t: f64 = fade * (0..3).map(|c| g[c] * (attrs[seg.b][c] - attrs[seg.a][c])).sum::<f64>();
                        g_cam[seg.a].z += g_t * dt_dza;
                        g_cam[seg.b].z += g_t * dt_dzb;
                        if alpha.u > seg.u0 && alpha.u < seg.u1 {
                            self.line_param_backward(&seg, x, y, g_t * dt_du, &mut g_screen);
                        }
                    }
                }
            }
        }
        if !want_positions {
            return Ok((g_attr, None));
        }
        let f = &self.frame;
        let mut g_world = vec![Vec3::zeros(); n];
        for v in 0..n {
            let gc = g_cam[v];
            let mut gw = f.right * gc.x + f.up * gc.y + f.forward * gc.z;
            let [gx, gy] = g_screen[v];
            if gx != 0.0 || gy != 0.0 {
                let c = self.cam[v];
                // x = cx + F c.x / c.z, y = cy - F c.y / c.z
                let inv = 1.0 / c.z;
                let gcx = gx * f.focal * inv;
                let gcy = -gy * f.focal * inv;
                let gcz = -(gx * f.focal * c.x - gy * f.focal * c.y) * inv * inv;
                gw += f.right * gcx + f.up * gcy + f.forward * gcz;
            }
            g_world[v] = gw;
        }
        Ok((g_attr, Some(g_world)))
    }

    fn face_backward(&self, face: u32, x: usize, y: usize, g_bary: [f64; 3], g_depth: f64, g_cam: &mut [Vec3]) {
        let f = self.faces[face as usize];
        let p = [self.cam[f[0]], self.cam[f[1]], self.cam[f[2]]];
        let mut out = [Vec3::zeros(); 3];
        ray_barycentrics_backward(&p, &self.ray(x, y), g_bary, g_depth, &mut out);
        for k in 0..3 {
            g_cam[f[k]] += out[k];
        }
    }

    fn alpha_backward(&self, alpha: &AlphaTerm, x: usize, y: usize, g_alpha: f64, g_screen: &mut [[f64; 2]]) {
        if g_alpha == 0.0 {
            return;
        }
        let seg = self.segments[alpha.segment as usize];
        let (pa, pb) = (self.screen[seg.a], self.screen[seg.b]);
        let u = alpha.u;
        let q = [pa[0] + u * (pb[0] - pa[0]), pa[1] + u * (pb[1] - pa[1])];
        let p = [x as f64 + 0.5, y as f64 + 0.5];
        let r = [p[0] - q[0], p[1] - q[1]];
        // alpha = sigmoid(s d^2 / sigma^2); d d^2 / dA = -2 r (1 - u), d d^2 / dB = -2 r u
        let g_d2 = g_alpha * alpha.alpha * (1.0 - alpha.alpha) * alpha.sign / (self.sigma * self.sigma);
        for k in 0..2 {
            g_screen[seg.a][k] += g_d2 * -2.0 * r[k] * (1.0 - u);
            g_screen[seg.b][k] += g_d2 * -2.0 * r[k] * u;
        }
    }

    fn line_param_backward(&self, seg: &Segment, x: usize, y: usize, g_u: f64, g_screen: &mut [[f64; 2]]) {
        let (pa, pb) = (self.screen[seg.a], self.screen[seg.b]);
        let p = [x as f64 + 0.5, y as f64 + 0.5];
        let e = [pb[0] - pa[0], pb[1] - pa[1]];
        let r = [p[0] - pa[0], p[1] - pa[1]];
        let len2 = e[0] * e[0] + e[1] * e[1];
        if len2 == 0.0 {
            return;
        }
        let u = (r[0] * e[0] + r[1] * e[1]) / len2;
        // u = r.e / |e|^2, r = p - A, e = B - A
        for k in 0..2 {
            let du_db = (r[k] - 2.0 * u * e[k]) / len2;
            let du_da = (-e[k] - r[k] + 2.0 * u * e[k]) / len2;
            g_screen[seg.b][k] += g_u * du_db;
            g_screen[seg.a][k] += g_u * du_da;
        }
    }

    pub fn to_output(&self, rgba: Vec<[f64; 4]>) -> RenderOutput {
        RenderOutput {
            image: ImageRGBA::from_pixels(self.width, self.height, rgba).expect("tape dimensions"),
            depth: self.depth.clone(),
            face_id: self.face_id.clone(),
        }
    }
}

pub fn rgb_attributes(mesh: &Mesh) -> Result<Vec<[f64; 3]>> {
    Ok(mesh.colors_or_err()?.iter().map(|c| [c[0], c[1], c[2]]).collect())
}

pub fn render(mesh: &Mesh, camera: &Camera, mode: RenderMode) -> Result<RenderOutput> {
    render_with(mesh, camera, mode, &SoftSettings::default())
}

pub fn render_with(mesh: &Mesh, camera: &Camera, mode: RenderMode, settings: &SoftSettings) -> Result<RenderOutput> {
    let attrs = if mesh.vertices.is_empty() { Vec::new() } else { rgb_attributes(mesh)? };
    let tape = rasterize(&mesh.vertices, &mesh.faces, camera, mode, settings)?;
    Ok(tape.to_output(tape.shade(&attrs)))
}

/// Gradients of `sum(upstream * render(mesh))` with respect to the vertex
/// colors (RGBA, alpha gradient is always zero) and, in soft mode, positions.
pub fn render_backward(
    mesh: &Mesh,
    camera: &Camera,
    mode: RenderMode,
    upstream: &[[f64; 4]],
    want_positions: bool,
) -> Result<RenderGradients> {
    render_backward_with(mesh, camera, mode, &SoftSettings::default(), upstream, want_positions)
}

pub fn render_backward_with(
    mesh: &Mesh,
    camera: &Camera,
    mode: RenderMode,
    settings: &SoftSettings,
    upstream: &[[f64; 4]],
    want_positions: bool,
) -> Result<RenderGradients> {
    if want_positions && mode != RenderMode::Soft {
        return Err(Error::HardPositionGradient);
    }
    let attrs = rgb_attributes(mesh)?;
    let tape = rasterize(&mesh.vertices, &mesh.faces, camera, mode, settings)?;
    let (g_attr, g_pos) = tape.shade_backward(&attrs, upstream, want_positions)?;
    Ok(RenderGradients { colors: g_attr.into_iter().map(|g| [g[0], g[1], g[2], 0.0]).collect(), positions: g_pos })
}

/// Camera-space unit vertex normals (`+z` toward the viewer).
fn view_normals(vertices: &[Vec3], faces: &[[usize; 3]], frame: &CameraFrame) -> Vec<[f64; 3]> {
    vertex_normals_of(vertices, faces)
        .iter()
        .map(|n| {
            let v = frame.direction_to_view(n);
            [v.x, v.y, v.z]
        })
        .collect()
}

fn encode_normal(m: [f64; 3]) -> ([f64; 3], f64) {
    let len = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
    if len == 0.0 {
        return ([0.5, 0.5, 0.5], 0.0);
    }
    ([0.5 * m[0] / len + 0.5, 0.5 * m[1] / len + 0.5, 0.5 * m[2] / len + 0.5], len)
}

/// Normal map: RGB is the interpolated camera-space vertex normal mapped from
/// `[-1, 1]` to `[0, 1]`, alpha is coverage. Uncovered pixels are transparent black.
pub fn render_normal_map(mesh: &Mesh, camera: &Camera) -> Result<ImageRGBA> {
    Ok(render_normal_map_with(&mesh.vertices, &mesh.faces, camera, RenderMode::Hard, &SoftSettings::default())?.0)
}

pub fn render_normal_map_with(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    camera: &Camera,
    mode: RenderMode,
    settings: &SoftSettings,
) -> Result<(ImageRGBA, RasterTape)> {
    let tape = rasterize(vertices, faces, camera, mode, settings)?;
    let attrs = view_normals(vertices, faces, &tape.frame);
    let raw = tape.shade(&attrs);
    let rgba = raw
        .iter()
        .map(|p| {
            if p[3] == 0.0 {
                return [0.0; 4];
            }
            let (rgb, _) = encode_normal([p[0], p[1], p[2]]);
            [rgb[0], rgb[1], rgb[2], p[3]]
        })
        .collect();
    let image = ImageRGBA::from_pixels(tape.width, tape.height, rgba)?;
    Ok((image, tape))
}

/// Position gradients of `sum(upstream * normal_map)` for a soft-mode tape
/// produced by [`render_normal_map_with`].
pub fn render_normal_map_backward(vertices: &[Vec3], faces: &[[usize; 3]], tape: &RasterTape, upstream: &[[f64; 4]]) -> Result<Vec<Vec3>> {
    let attrs = view_normals(vertices, faces, &tape.frame);
    let raw = tape.shade(&attrs);
    let g_raw: Vec<[f64; 4]> = raw
        .iter()
        .zip(upstream)
        .map(|(p, g)| {
            if p[3] == 0.0 {
                return [0.0; 4];
            }
            let m = [p[0], p[1], p[2]];
            let (_, len) = encode_normal(m);
            if len == 0.0 {
                return [0.0, 0.0, 0.0, g[3]];
            }
            let n = m.map(|c| c / len);
            // rgb = 0.5 m / |m| + 0.5
            let gn = [0.5 * g[0], 0.5 * g[1], 0.5 * g[2]];
            let dot = gn[0] * n[0] + gn[1] * n[1] + gn[2] * n[2];
            [(gn[0] - dot * n[0]) / len, (gn[1] - dot * n[1]) / len, (gn[2] - dot * n[2]) / len, g[3]]
        })
        .collect();
    let (g_attr, g_pos) = tape.shade_backward(&attrs, &g_raw, true)?;
    let mut g_pos = g_pos.expect("soft tape");
    let f = &tape.frame;
    let g_normals: Vec<Vec3> =
        g_attr.iter().map(|g| f.right * g[0] + f.up * g[1] - f.forward * g[2]).collect();
    for (gp, gn) in g_pos.iter_mut().zip(vertex_normals_backward(vertices, faces, &g_normals)) {
        *gp += gn;
    }
    Ok(g_pos)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn facing_quad(half: f64, color: [f64; 4]) -> Mesh {
        // Camera at elevation 0, azimuth 0 sits on +x looking toward -x.
        Mesh::new(
            vec![
                Vec3::new(0.0, -half, -half),
                Vec3::new(0.0, half, -half),
                Vec3::new(0.0, half, half),
                Vec3::new(0.0, -half, half),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
        .with_colors(vec![color; 4])
        .unwrap()
    }

    #[test]
    fn empty_mesh_is_transparent() {
        let out = render(&Mesh::empty(), &Camera::new(0.0, 0.0, 16), RenderMode::Soft).unwrap();
        assert!(out.image.pixels().iter().all(|p| p[3] == 0.0));
    }

    #[test]
    fn full_screen_constant_color() {
        let c = [0.2, 0.4, 0.6, 1.0];
        let out = render(&facing_quad(10.0, c), &Camera::new(0.0, 0.0, 32), RenderMode::Hard).unwrap();
        for p in out.image.pixels() {
            assert!((p[0] - 0.2).abs() < 1e-12 && (p[1] - 0.4).abs() < 1e-12 && (p[2] - 0.6).abs() < 1e-12);
            assert_eq!(p[3], 1.0);
        }
    }

    #[test]
    fn missing_colors_is_error() {
        let mut m = facing_quad(0.5, [1.0; 4]);
        m.colors = None;
        assert!(matches!(render(&m, &Camera::new(0.0, 0.0, 16), RenderMode::Hard), Err(Error::MissingColors)));
    }

    #[test]
    fn hard_position_gradients_rejected() {
        let m = facing_quad(0.5, [1.0; 4]);
        let up = vec![[1.0; 4]; 16 * 16];
        assert!(matches!(
            render_backward(&m, &Camera::new(0.0, 0.0, 16), RenderMode::Hard, &up, true),
            Err(Error::HardPositionGradient)
        ));
    }

    #[test]
    fn frontal_normal_map() {
        let m = facing_quad(0.5, [1.0; 4]);
        let img = render_normal_map(&m, &Camera::new(0.0, 0.0, 32)).unwrap();
        let mut covered = 0;
        for p in img.pixels() {
            if p[3] > 0.0 {
                covered += 1;
                assert!((p[0] - 0.5).abs() < 1e-9 && (p[1] - 0.5).abs() < 1e-9 && (p[2] - 1.0).abs() < 1e-9);
            }
        }
        assert!(covered > 0);
    }

    #[test]
    fn edge_pixel_alpha_is_half() {
        // A vertical quad edge through the center column of pixels.
        let cam = Camera::new(0.0, 0.0, 64);
        let f = cam.frame();
        let half_px = 0.5 * 4.0 / f.focal;
        let m = Mesh::new(
            vec![
                Vec3::new(0.0, half_px, -0.5),
                Vec3::new(0.0, 0.6, -0.5),
                Vec3::new(0.0, 0.6, 0.5),
                Vec3::new(0.0, half_px, 0.5),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
        .with_colors(vec![[1.0; 4]; 4])
        .unwrap();
        let out = render(&m, &cam, RenderMode::Soft).unwrap();
        // world +y is camera right; x = cx + F * y_world / 4 = 32.5 is the center of pixel 32
        let a = out.image.alpha(32, 32);
        assert!((a - 0.5).abs() <= 0.05, "alpha {a}");
        assert!(out.image.alpha(34, 32) > 0.98);
        assert!(out.image.alpha(30, 32) < 0.02);
    }
}
