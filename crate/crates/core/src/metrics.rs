//! Image, geometry and consistency metrics.

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::ImageRGBA;
use crate::mesh::{Mesh, Vec3};
use crate::raster::{render, RenderMode};
use crate::unproject::PosedImage;

pub const PSNR_CAP: f64 = 99.0;
pub const DEFAULT_FSCORE_THRESHOLD: f64 = 0.2;
pub const DEFAULT_SAMPLES: usize = 100_000;

fn check_dims(a: &ImageRGBA, b: &ImageRGBA) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!("images {:?} and {:?} differ in size", a.dims(), b.dims())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio of the white-composited RGB, capped at 99 dB.
pub fn psnr(a: &ImageRGBA, b: &ImageRGBA) -> Result<f64> {
    check_dims(a, b)?;
    let (ca, cb) = (a.composite_white(), b.composite_white());
    let n = (3 * ca.len()) as f64;
    let mse: f64 = ca.iter().zip(&cb).map(|(p, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>()).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; 11] {
    let mut w = [0.0; 11];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - 5.0;
        *v = (-x * x / (2.0 * 1.5 * 1.5)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable 11-tap Gaussian filter over the valid region.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64; 11]) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w - 10, h - 10);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..11).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..11).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity over RGB channels of the white-composited
/// images, Gaussian window 11x11 with sigma 1.5.
pub fn ssim(a: &ImageRGBA, b: &ImageRGBA) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = a.dims();
    if w < 11 || h < 11 {
        return Err(Error::Dimension("SSIM needs images of at least 11x11".into()));
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let k = gaussian_window();
    let (ca, cb) = (a.composite_white(), b.composite_white());
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = ca.iter().map(|p| p[ch]).collect();
        let y: Vec<f64> = cb.iter().map(|p| p[ch]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter_valid(&x, w, h, &k);
        let (my, _, _) = filter_valid(&y, w, h, &k);
        let (sxx, _, _) = filter_valid(&xx, w, h, &k);
        let (syy, _, _) = filter_valid(&yy, w, h, &k);
        let (sxy, _, _) = filter_valid(&xy, w, h, &k);
        let mut s = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            s += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += s / mx.len() as f64;
    }
    Ok(total / 3.0)
}

/// Intersection over union of the `alpha > 0.5` masks; two empty masks score 1.
pub fn silhouette_iou(a: &ImageRGBA, b: &ImageRGBA) -> Result<f64> {
    check_dims(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, q) in a.pixels().iter().zip(b.pixels()) {
        let (x, y) = (p[3] > 0.5, q[3] > 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean absolute difference of surface colors (RGB over alpha) on the joint
/// foreground of two images.
pub fn foreground_difference(a: &ImageRGBA, b: &ImageRGBA) -> Result<f64> {
    check_dims(a, b)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, q) in a.pixels().iter().zip(b.pixels()) {
        if p[3] > 0.5 && q[3] > 0.5 {
            sum += (0..3).map(|k| (p[k] / p[3] - q[k] / q[3]).abs()).sum::<f64>() / 3.0;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyForeground);
    }
    Ok(sum / n as f64)
}

/// Cross-view inconsistency: mean over views of the foreground difference
/// between the mesh rendered from each view and that view's image.
pub fn ghosting_metric(mesh: &Mesh, views: &[PosedImage]) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::EmptyForeground);
    }
    let mut total = 0.0;
    for v in views {
        let r = render(mesh, &v.camera, RenderMode::Hard)?;
        total += foreground_difference(&r.image, &v.image)?;
    }
    Ok(total / views.len() as f64)
}

/// Area-weighted uniform surface samples.
pub fn sample_surface(mesh: &Mesh, count: usize, seed: u64) -> Vec<Vec3> {
    if mesh.faces.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut cdf = Vec::with_capacity(mesh.num_faces());
    let mut acc = 0.0;
    for a in mesh.face_areas() {
        acc += a;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let r = rng.gen::<f64>() * acc;
            let f = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
            let [a, b, c] = mesh.face_positions(f);
            let (u, v): (f64, f64) = (rng.gen(), rng.gen());
            let su = u.sqrt();
            a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v)
        })
        .collect()
}

fn nearest_distances(queries: &[Vec3], targets: &[Vec3]) -> Vec<f64> {
    let pts: Vec<[f64; 3]> = targets.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, u32, 3, 32> = ImmutableKdTree::new_from_slice(&pts);
    queries.iter().map(|q| tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]).distance.sqrt()).collect()
}

/// Chamfer distance and F-score between two point sets.
pub fn chamfer_fscore_points(a: &[Vec3], b: &[Vec3], threshold: f64) -> (f64, f64) {
    if a.is_empty() || b.is_empty() {
        return (f64::INFINITY, 0.0);
    }
    let (da, db) = (nearest_distances(a, b), nearest_distances(b, a));
    score(&da, &db, threshold)
}

fn score(da: &[f64], db: &[f64], threshold: f64) -> (f64, f64) {
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let cd = 0.5 * (mean(da) + mean(db));
    let precision = da.iter().filter(|&&d| d < threshold).count() as f64 / da.len() as f64;
    let recall = db.iter().filter(|&&d| d < threshold).count() as f64 / db.len() as f64;
    let f = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    (cd, f)
}

/// Quadratic-time reference for [`chamfer_fscore_points`].
pub fn chamfer_fscore_brute_force(a: &[Vec3], b: &[Vec3], threshold: f64) -> (f64, f64) {
    let nn = |q: &[Vec3], t: &[Vec3]| -> Vec<f64> {
        q.iter().map(|p| t.iter().map(|s| (p - s).norm_squared()).fold(f64::INFINITY, f64::min).sqrt()).collect()
    };
    score(&nn(a, b), &nn(b, a), threshold)
}

/// Symmetric Chamfer distance and F-score from `samples` surface points per
/// mesh drawn with `seed`.
pub fn chamfer_fscore(a: &Mesh, b: &Mesh, samples: usize, threshold: f64, seed: u64) -> (f64, f64) {
    let pa = sample_surface(a, samples, seed);
    let pb = sample_surface(b, samples, seed.wrapping_add(1));
    chamfer_fscore_points(&pa, &pb, threshold)
}

/// Distance from `p` to triangle `(a, b, c)`.
pub fn point_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let (v, w) = (vb * denom, vc * denom);
    (p - (a + ab * v + ac * w)).norm()
}

/// Mean over `points` of the exact distance to the surface of `mesh`.
pub fn mean_distance_to_surface(points: &[Vec3], mesh: &Mesh) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let tris: Vec<[Vec3; 3]> = (0..mesh.num_faces()).map(|f| mesh.face_positions(f)).collect();
    let total: f64 = points
        .iter()
        .map(|p| tris.iter().map(|t| point_triangle_distance(p, &t[0], &t[1], &t[2])).fold(f64::INFINITY, f64::min))
        .sum();
    total / points.len() as f64
}

/// Evaluation camera ring: `count` views spread over elevations 0, 15 and 30.
pub fn evaluation_cameras(count: usize, resolution: usize) -> Vec<Camera> {
    let elevations = [0.0, 15.0, 30.0];
    (0..count)
        .map(|i| {
            let e = elevations[i % 3];
            let az = 360.0 * i as f64 / count as f64;
            Camera::new(e, az, resolution)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub chamfer: f64,
    pub fscore: f64,
    pub ghosting: Option<f64>,
    pub silhouette_iou: Option<f64>,
    /// Neural metrics are not computed; kept so the schema is complete.
    pub lpips: Option<f64>,
    pub fid: Option<f64>,
    pub clip_similarity: Option<f64>,
}

impl EvalReport {
    pub fn to_key_values(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("absent".to_string(), |x| format!("{x}"));
        let mut s = String::new();
        for (i, (p, q)) in self.psnr.iter().zip(&self.ssim).enumerate() {
            s.push_str(&format!("psnr.{i} = {p}\nssim.{i} = {q}\n"));
        }
        s.push_str(&format!("mean_psnr = {}\nmean_ssim = {}\n", self.mean_psnr, self.mean_ssim));
        s.push_str(&format!("chamfer = {}\nfscore = {}\n", self.chamfer, self.fscore));
        s.push_str(&format!("ghosting = {}\nsilhouette_iou = {}\n", opt(self.ghosting), opt(self.silhouette_iou)));
        s.push_str(&format!("lpips = {}\nfid = {}\nclip_similarity = {}\n", opt(self.lpips), opt(self.fid), opt(self.clip_similarity)));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub views: usize,
    pub resolution: usize,
    pub samples: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { views: 24, resolution: 256, samples: DEFAULT_SAMPLES, threshold: DEFAULT_FSCORE_THRESHOLD, seed: 0 }
    }
}

/// Compares a generated mesh with the ground truth from the evaluation ring.
pub fn evaluate(generated: &Mesh, gt: &Mesh, settings: &EvalSettings) -> Result<EvalReport> {
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    for cam in evaluation_cameras(settings.views, settings.resolution) {
        let a = render(generated, &cam, RenderMode::Hard)?.image;
        let b = render(gt, &cam, RenderMode::Hard)?.image;
        psnrs.push(psnr(&a, &b)?);
        ssims.push(ssim(&a, &b)?);
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let (chamfer, fscore) = chamfer_fscore(generated, gt, settings.samples, settings.threshold, settings.seed);
    Ok(EvalReport {
        mean_psnr: mean(&psnrs),
        mean_ssim: mean(&ssims),
        psnr: psnrs,
        ssim: ssims,
        chamfer,
        fscore,
        ghosting: None,
        silhouette_iou: None,
        lpips: None,
        fid: None,
        clip_similarity: None,
    })
}
