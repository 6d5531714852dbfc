//! Optimization loops: cross-view appearance alignment, camera estimation,
//! input-image fidelity, and normal-map geometry refinement.

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::deform2d::{deform_backward, deform_image, smoothness_grad, smoothness_loss, DeformationField2D, DEFAULT_GRID_SIZE};
use crate::deform3d::{optimize_deformation, Deformer, Evaluation, GridDeformer, JacobianDeformer, LaplacianRegularizer, Objective, VertexDeformer, DEFAULT_GRID3D_SIZE};
use crate::error::{Error, Result};
use crate::image::ImageRGBA;
use crate::mesh::{vertex_normals_of, Mesh, Vec3};
use crate::optim::{Adam, LossLog, OptimConfig};
use crate::raster::{rasterize, render_normal_map_backward, render_normal_map_with, rgb_attributes, RenderMode, SoftSettings};
use crate::unproject::{unproject_weighted, PosedImage, UnprojectSettings, UnprojectionPlan, ViewGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
}

// Smoothness is measured in square pixels, where the commonly quoted
// w3 = 1e-3 over-regularizes the alignment.
impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w1: 1.0, w2: 1.0, w3: 1e-5, w4: 1.0, w5: 0.1, w6: 1e5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3), ("w4", self.w4), ("w5", self.w5), ("w6", self.w6)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} = {w} must be a non-negative number")));
            }
        }
        Ok(())
    }
}

/// Masked RGB MSE and mask MSE between a render and a target, with gradients
/// with respect to both. The RGB term averages over pixels where both alphas
/// exceed one half and compares the render with the target's surface color
/// (premultiplied RGB over alpha); the mask term averages over all pixels.
pub struct ImageLoss {
    pub mse: f64,
    pub mask: f64,
    pub g_render: Vec<[f64; 4]>,
    pub g_target: Vec<[f64; 4]>,
}

pub fn image_loss(render: &[[f64; 4]], target: &[[f64; 4]], w_mse: f64, w_mask: f64) -> ImageLoss {
    assert_eq!(render.len(), target.len());
    let n = render.len().max(1) as f64;
    let joint = render.iter().zip(target).filter(|(r, t)| r[3] > 0.5 && t[3] > 0.5).count();
    let m = (3 * joint).max(1) as f64;
    let (mut mse, mut mask) = (0.0, 0.0);
    let mut g_render = vec![[0.0; 4]; render.len()];
    let mut g_target = vec![[0.0; 4]; render.len()];
    for (i, (r, t)) in render.iter().zip(target).enumerate() {
        if r[3] > 0.5 && t[3] > 0.5 {
            for c in 0..3 {
                let d = r[c] - t[c] / t[3];
                mse += d * d / m;
                g_render[i][c] = w_mse * 2.0 * d / m;
                g_target[i][c] = -w_mse * 2.0 * d / m / t[3];
                g_target[i][3] += w_mse * 2.0 * d / m * t[c] / (t[3] * t[3]);
            }
        }
        let d = r[3] - t[3];
        mask += d * d / n;
        g_render[i][3] = w_mask * 2.0 * d / n;
        g_target[i][3] -= w_mask * 2.0 * d / n;
    }
    ImageLoss { mse, mask, g_render, g_target }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppearanceConfig {
    pub optim: OptimConfig,
    pub grid_size: usize,
    /// Offset bound in pixels; `None` uses a tenth of the smaller image side.
    pub max_offset: Option<f64>,
    pub unproject: UnprojectSettings,
}

impl Default for AppearanceConfig {
    fn default() -> Self {
        AppearanceConfig {
            optim: OptimConfig::new(100, 3e-3),
            grid_size: DEFAULT_GRID_SIZE,
            max_offset: None,
            unproject: UnprojectSettings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AppearanceResult {
    pub mesh: Mesh,
    pub fields: Vec<DeformationField2D>,
    pub deformed: Vec<PosedImage>,
    pub log: LossLog,
}

fn check_views(views: &[PosedImage]) -> Result<(usize, usize)> {
    let first = views.first().ok_or(Error::NoCoverage)?;
    let dims = first.image.dims();
    if views.iter().any(|v| v.image.dims() != dims) {
        return Err(Error::Dimension("views must share one resolution".into()));
    }
    Ok(dims)
}

/// Aligns the views with per-view 2D deformation fields so that the mesh
/// colored from the deformed views reproduces them. Geometry is untouched.
///
/// Field offsets are in pixels; the step size is relative to half the smaller
/// image side, so it means the same at every resolution.
pub fn enhance_appearance(mesh: &Mesh, views: &[PosedImage], weights: &LossWeights, config: &AppearanceConfig) -> Result<AppearanceResult> {
    weights.validate()?;
    config.optim.validate()?;
    let (w, h) = check_views(views)?;
    let k = views.len();
    let bound = config.max_offset.unwrap_or(DeformationField2D::default_bound(w, h));
    let cameras: Vec<Camera> = views.iter().map(|v| v.camera).collect();
    let geometry = ViewGeometry::new(mesh, &cameras, &config.unproject)?;
    let tapes = cameras
        .iter()
        .map(|c| rasterize(&mesh.vertices, &mesh.faces, c, RenderMode::Hard, &SoftSettings::default()))
        .collect::<Result<Vec<_>>>()?;
    let dims = vec![(w, h); k];
    let ones = vec![1.0; k];
    let g = config.grid_size;
    let mut fields = vec![DeformationField2D::zeros(g); k];
    let mut step = config.optim;
    step.step_size *= 0.5 * w.min(h) as f64;
    let mut adam = Adam::new(step, 2 * g * g * k);
    let mut log = LossLog::new(&["mse", "mask", "smooth"]);
    let mut best: Option<(f64, Vec<DeformationField2D>)> = None;

    for it in 0..=config.optim.iterations {
        let deformed = views.iter().zip(&fields).map(|(v, f)| deform_image(&v.image, f)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ImageRGBA> = deformed.iter().collect();
        let plan = UnprojectionPlan::new(mesh, &geometry, &refs, &ones, &config.unproject)?;
        let colors = plan.apply(&refs);
        let attrs: Vec<[f64; 3]> = colors.iter().map(|c| [c[0], c[1], c[2]]).collect();
        let (mut mse, mut mask) = (0.0, 0.0);
        let mut losses = Vec::with_capacity(k);
        for (tape, target) in tapes.iter().zip(&deformed) {
            let l = image_loss(&tape.shade(&attrs), target.pixels(), weights.w1 / k as f64, weights.w2 / k as f64);
            mse += l.mse / k as f64;
            mask += l.mask / k as f64;
            losses.push(l);
        }
        let smooth: f64 = fields.iter().map(smoothness_loss).sum();
        let total = weights.w1 * mse + weights.w2 * mask + weights.w3 * smooth;
        if !total.is_finite() {
            return Err(Error::Diverged { iteration: it });
        }
        log.push(it, total, vec![mse, mask, smooth]);
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, fields.clone()));
        }
        if it == config.optim.iterations {
            break;
        }

        let mut g_colors = vec![[0.0; 4]; mesh.num_vertices()];
        for (tape, l) in tapes.iter().zip(&losses) {
            let (ga, _) = tape.shade_backward(&attrs, &l.g_render, false)?;
            for (acc, g) in g_colors.iter_mut().zip(ga) {
                for c in 0..3 {
                    acc[c] += g[c];
                }
            }
        }
        let g_images = plan.adjoint(&dims, &g_colors);
        let mut grad = Vec::with_capacity(2 * g * g * k);
        for v in 0..k {
            let mut gi = g_images[v].clone();
            for (a, b) in gi.iter_mut().zip(&losses[v].g_target) {
                for c in 0..4 {
                    a[c] += b[c];
                }
            }
            let gf = deform_backward(&views[v].image, &fields[v], &gi)?;
            let gs = smoothness_grad(&fields[v]);
            for (a, b) in gf.offsets().iter().zip(gs.offsets()) {
                grad.push(a[0] + weights.w3 * b[0]);
                grad.push(a[1] + weights.w3 * b[1]);
            }
        }
        let mut params: Vec<f64> = fields.iter().flat_map(|f| f.offsets().iter().flat_map(|o| [o[0], o[1]]).collect::<Vec<_>>()).collect();
        adam.step(&mut params, &grad);
        for (v, f) in fields.iter_mut().enumerate() {
            for (i, o) in f.offsets_mut().iter_mut().enumerate() {
                let base = 2 * (v * g * g + i);
                *o = [params[base], params[base + 1]];
            }
            f.clamp_magnitude(bound);
        }
    }

    let fields = best.expect("at least one evaluation").1;
    let deformed = views
        .iter()
        .zip(&fields)
        .map(|(v, f)| Ok(PosedImage { image: deform_image(&v.image, f)?, camera: v.camera }))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&ImageRGBA> = deformed.iter().map(|d| &d.image).collect();
    let plan = UnprojectionPlan::new(mesh, &geometry, &refs, &ones, &config.unproject)?;
    let mut out = mesh.clone();
    out.colors = Some(plan.apply(&refs));
    Ok(AppearanceResult { mesh: out, fields, deformed, log })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSearch {
    pub coarse_step: f64,
    pub fine_radius: f64,
    pub fine_step: f64,
    pub pyramid_levels: usize,
    pub refine: OptimConfig,
    /// Adam step for elevation, in degrees.
    pub elevation_step: f64,
    /// Adam step for distance, relative to the starting distance.
    pub distance_step: f64,
    pub soft: SoftSettings,
}

impl Default for CameraSearch {
    fn default() -> Self {
        CameraSearch {
            coarse_step: 3.0,
            fine_radius: 3.0,
            fine_step: 1.0,
            pyramid_levels: 3,
            refine: OptimConfig::new(100, 1.0),
            elevation_step: 0.05,
            distance_step: 1e-3,
            soft: SoftSettings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CameraEstimate {
    pub camera: Camera,
    /// Elevation chosen by the grid search before continuous refinement.
    pub grid_elevation: f64,
    pub log: LossLog,
}

fn pyramid(img: &ImageRGBA, levels: usize) -> Vec<ImageRGBA> {
    let mut out = vec![img.clone()];
    while out.len() < levels {
        let next = out.last().expect("nonempty").downsample();
        out.push(next);
    }
    out
}

/// Equal-weight mean over pyramid levels of the loop loss: color error on the
/// joint foreground plus the weighted mask error. Keeping the two apart stops
/// a silhouette mismatch from outvoting the colors.
pub fn multiscale_loss(a: &[ImageRGBA], b: &[ImageRGBA], w_mse: f64, w_mask: f64) -> f64 {
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        let l = image_loss(x.pixels(), y.pixels(), w_mse, w_mask);
        total += w_mse * l.mse + w_mask * l.mask;
    }
    total / a.len().max(1) as f64
}

/// Grid search over elevation at azimuth zero followed by gradient
/// refinement of elevation and distance.
pub fn estimate_camera(mesh: &Mesh, input: &ImageRGBA, distance: f64, fov_deg: f64, weights: &LossWeights, search: &CameraSearch) -> Result<CameraEstimate> {
    let (w, h) = input.dims();
    let make = |el: f64, d: f64| Camera { fov_deg, distance: d, elevation_deg: el, azimuth_deg: 0.0, width: w, height: h };
    make(0.0, distance).validate()?;
    let attrs = rgb_attributes(mesh)?;
    let target = pyramid(input, search.pyramid_levels);
    let score = |el: f64| -> Result<f64> {
        let tape = rasterize(&mesh.vertices, &mesh.faces, &make(el, distance), RenderMode::Hard, &SoftSettings::default())?;
        let img = ImageRGBA::from_pixels(w, h, tape.shade(&attrs))?;
        Ok(multiscale_loss(&pyramid(&img, search.pyramid_levels), &target, weights.w4, weights.w5))
    };
    let better = |s: f64, el: f64, best: &Option<(f64, f64)>| match best {
        None => true,
        Some((bs, be)) => s < *bs || (s == *bs && el.abs() < be.abs()),
    };
    let mut best: Option<(f64, f64)> = None;
    let steps = (180.0 / search.coarse_step).round() as i64;
    for i in 0..=steps {
        let el = -90.0 + i as f64 * search.coarse_step;
        let s = score(el)?;
        if better(s, el, &best) {
            best = Some((s, el));
        }
    }
    let coarse = best.expect("coarse grid is nonempty").1;
    let fine_n = (search.fine_radius / search.fine_step).round() as i64;
    for i in -fine_n..=fine_n {
        let el = (coarse + i as f64 * search.fine_step).clamp(-90.0, 90.0);
        let s = score(el)?;
        if better(s, el, &best) {
            best = Some((s, el));
        }
    }
    let grid_elevation = best.expect("fine grid is nonempty").1;

    let mut log = LossLog::new(&["mse", "mask"]);
    let mut el = grid_elevation;
    let mut dist = distance;
    let mut adam_el = Adam::new(OptimConfig { step_size: search.elevation_step, ..search.refine }, 1);
    let mut adam_d = Adam::new(OptimConfig { step_size: search.distance_step * distance, ..search.refine }, 1);
    let mut best_cam: Option<(f64, Camera)> = None;
    for it in 0..=search.refine.iterations {
        let cam = make(el, dist);
        let tape = rasterize(&mesh.vertices, &mesh.faces, &cam, RenderMode::Soft, &search.soft)?;
        let l = image_loss(&tape.shade(&attrs), input.pixels(), weights.w4, weights.w5);
        let total = weights.w4 * l.mse + weights.w5 * l.mask;
        if !total.is_finite() {
            return Err(Error::Diverged { iteration: it });
        }
        log.push(it, total, vec![l.mse, l.mask]);
        if best_cam.as_ref().is_none_or(|(b, _)| total < *b) {
            best_cam = Some((total, cam));
        }
        if it == search.refine.iterations {
            break;
        }
        let (_, gpos) = tape.shade_backward(&attrs, &l.g_render, true)?;
        let gpos = gpos.expect("soft mode yields position gradients");
        // Raising the camera by dt equals rotating the scene by -dt about the
        // elevation axis; backing it off equals pushing the scene along forward.
        let axis = cam.elevation_axis();
        let forward = cam.frame().forward;
        let mut g_el = 0.0;
        let mut g_d = 0.0;
        for (g, v) in gpos.iter().zip(&mesh.vertices) {
            g_el -= g.dot(&axis.cross(v));
            g_d += g.dot(&forward);
        }
        g_el *= std::f64::consts::PI / 180.0;
        let mut p = [el];
        adam_el.step(&mut p, &[g_el]);
        el = p[0].clamp(-90.0, 90.0);
        let mut p = [dist];
        adam_d.step(&mut p, &[g_d]);
        dist = p[0].max(1e-3);
    }
    Ok(CameraEstimate { camera: best_cam.expect("at least one evaluation").1, grid_elevation, log })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeformerKind {
    Jacobian,
    VertexReplacement,
    Grid3d,
}

impl std::str::FromStr for DeformerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "jacobian" => Ok(DeformerKind::Jacobian),
            "vertex_replacement" => Ok(DeformerKind::VertexReplacement),
            "grid3d" => Ok(DeformerKind::Grid3d),
            other => Err(format!("unknown deformer {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityConfig {
    pub optim: OptimConfig,
    pub soft: SoftSettings,
    pub unproject: UnprojectSettings,
    /// Multiplier on the input view's unprojection weight.
    pub input_view_weight: f64,
    pub deformer: DeformerKind,
    pub grid3d_size: usize,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        FidelityConfig {
            optim: OptimConfig::new(200, 1e-3),
            soft: SoftSettings::default(),
            unproject: UnprojectSettings::default(),
            input_view_weight: 3.0,
            deformer: DeformerKind::Jacobian,
            grid3d_size: DEFAULT_GRID3D_SIZE,
        }
    }
}

/// Soft-rendered match of a colored mesh to one posed image plus the
/// Laplacian regularizer on the displacement.
pub struct FidelityObjective {
    faces: Vec<[usize; 3]>,
    attrs: Vec<[f64; 3]>,
    target: PosedImage,
    soft: SoftSettings,
    weights: LossWeights,
    regularizer: LaplacianRegularizer,
}

impl FidelityObjective {
    pub fn new(mesh: &Mesh, target: &PosedImage, weights: &LossWeights, soft: &SoftSettings) -> Result<Self> {
        Ok(FidelityObjective {
            faces: mesh.faces.clone(),
            attrs: rgb_attributes(mesh)?,
            target: target.clone(),
            soft: *soft,
            weights: *weights,
            regularizer: LaplacianRegularizer::relative(mesh)?,
        })
    }
}

impl Objective for FidelityObjective {
    fn term_names(&self) -> Vec<&'static str> {
        vec!["mse", "mask", "laplacian"]
    }

    fn evaluate(&mut self, vertices: &[Vec3]) -> Result<Evaluation> {
        let w = &self.weights;
        let tape = rasterize(vertices, &self.faces, &self.target.camera, RenderMode::Soft, &self.soft)?;
        let l = image_loss(&tape.shade(&self.attrs), self.target.image.pixels(), w.w4, w.w5);
        let (_, gpos) = tape.shade_backward(&self.attrs, &l.g_render, true)?;
        let mut grad = gpos.expect("soft mode yields position gradients");
        let (lap, glap) = self.regularizer.evaluate(vertices);
        for (g, gl) in grad.iter_mut().zip(glap) {
            *g += gl * w.w6;
        }
        Ok(Evaluation { total: w.w4 * l.mse + w.w5 * l.mask + w.w6 * lap, terms: vec![l.mse, l.mask, lap], grad })
    }
}

#[derive(Debug, Clone)]
pub struct FidelityResult {
    /// Deformed geometry with the input colors (`M_d`).
    pub deformed: Mesh,
    /// Deformed geometry recolored from the views and the input image (`M_out`).
    pub output: Mesh,
    pub log: LossLog,
}

/// Runs only the deformation part of the fidelity loop with the chosen deformer.
pub fn deform_to_image(mesh: &Mesh, input: &PosedImage, weights: &LossWeights, config: &FidelityConfig) -> Result<(Mesh, LossLog)> {
    weights.validate()?;
    input.camera.validate()?;
    let mut objective = FidelityObjective::new(mesh, input, weights, &config.soft)?;
    let mut deformer: Box<dyn Deformer> = match config.deformer {
        DeformerKind::Jacobian => Box::new(JacobianDeformer::new(mesh)?),
        DeformerKind::VertexReplacement => Box::new(VertexDeformer::new(mesh)),
        DeformerKind::Grid3d => Box::new(GridDeformer::new(mesh, config.grid3d_size)),
    };
    let (vertices, log) = optimize_deformation(&mesh.vertices, deformer.as_mut(), &mut objective, &config.optim)?;
    Ok((mesh.with_vertices(vertices), log))
}

/// Deforms `mesh` toward the input image, then recolors it from `views` and the
/// input, with the input view's weight multiplied by `input_view_weight`.
pub fn enhance_fidelity(
    mesh: &Mesh,
    input: &PosedImage,
    views: &[PosedImage],
    weights: &LossWeights,
    config: &FidelityConfig,
) -> Result<FidelityResult> {
    let (deformed, log) = deform_to_image(mesh, input, weights, config)?;
    let mut all: Vec<PosedImage> = views.to_vec();
    all.push(input.clone());
    let mut scale = vec![1.0; views.len()];
    scale.push(config.input_view_weight);
    let (output, _) = unproject_weighted(&deformed, &all, &scale, &config.unproject)?;
    Ok(FidelityResult { deformed, output, log })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineWeights {
    pub mse: f64,
    pub mask: f64,
    pub expansion: f64,
    pub laplacian: f64,
}

impl Default for RefineWeights {
    fn default() -> Self {
        RefineWeights { mse: 1.0, mask: 1.0, expansion: 0.1, laplacian: 1e5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub optim: OptimConfig,
    pub weights: RefineWeights,
    /// Distance along the original normals that the expansion loss pulls toward.
    pub expansion_delta: f64,
    pub soft: SoftSettings,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig { optim: OptimConfig::new(200, 1e-3), weights: RefineWeights::default(), expansion_delta: 0.0, soft: SoftSettings::default() }
    }
}

/// Normal-map match over several views, expansion anchoring and surface smoothness.
pub struct RefineObjective {
    faces: Vec<[usize; 3]>,
    views: Vec<PosedImage>,
    anchors: Vec<Vec3>,
    config: RefineConfig,
    regularizer: LaplacianRegularizer,
}

impl RefineObjective {
    pub fn new(mesh: &Mesh, normal_views: &[PosedImage], config: &RefineConfig) -> Result<Self> {
        let normals = vertex_normals_of(&mesh.vertices, &mesh.faces);
        let anchors = mesh.vertices.iter().zip(&normals).map(|(p, n)| p + n * config.expansion_delta).collect();
        Ok(RefineObjective {
            faces: mesh.faces.clone(),
            views: normal_views.to_vec(),
            anchors,
            config: *config,
            regularizer: LaplacianRegularizer::absolute(mesh)?,
        })
    }
}

impl Objective for RefineObjective {
    fn term_names(&self) -> Vec<&'static str> {
        vec!["mse", "mask", "expansion", "laplacian"]
    }

    fn evaluate(&mut self, vertices: &[Vec3]) -> Result<Evaluation> {
        let w = self.config.weights;
        let k = self.views.len().max(1) as f64;
        let mut grad = vec![Vec3::zeros(); vertices.len()];
        let (mut mse, mut mask) = (0.0, 0.0);
        for view in &self.views {
            let (img, tape) = render_normal_map_with(vertices, &self.faces, &view.camera, RenderMode::Soft, &self.config.soft)?;
            let l = image_loss(img.pixels(), view.image.pixels(), w.mse / k, w.mask / k);
            mse += l.mse / k;
            mask += l.mask / k;
            for (g, d) in grad.iter_mut().zip(render_normal_map_backward(vertices, &self.faces, &tape, &l.g_render)?) {
                *g += d;
            }
        }
        let n = vertices.len().max(1) as f64;
        let mut expansion = 0.0;
        for ((g, p), a) in grad.iter_mut().zip(vertices).zip(&self.anchors) {
            let d = p - a;
            expansion += d.norm_squared() / n;
            *g += d * (2.0 * w.expansion / n);
        }
        let (lap, glap) = self.regularizer.evaluate(vertices);
        for (g, gl) in grad.iter_mut().zip(glap) {
            *g += gl * w.laplacian;
        }
        let total = w.mse * mse + w.mask * mask + w.expansion * expansion + w.laplacian * lap;
        Ok(Evaluation { total, terms: vec![mse, mask, expansion, lap], grad })
    }
}

/// Moves vertices so that soft-rendered normal maps match `normal_views`.
pub fn refine_geometry(mesh: &Mesh, normal_views: &[PosedImage], config: &RefineConfig) -> Result<(Mesh, LossLog)> {
    check_views(normal_views)?;
    let mut objective = RefineObjective::new(mesh, normal_views, config)?;
    let mut deformer = VertexDeformer::new(mesh);
    let (vertices, log) = optimize_deformation(&mesh.vertices, &mut deformer, &mut objective, &config.optim)?;
    Ok((mesh.with_vertices(vertices), log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_loss_gradients_match_differences() {
        let render = vec![[0.2, 0.4, 0.6, 0.9], [0.1, 0.1, 0.1, 0.3], [0.5, 0.5, 0.5, 1.0]];
        let target = vec![[0.3, 0.2, 0.6, 1.0], [0.9, 0.9, 0.9, 1.0], [0.4, 0.5, 0.6, 0.8]];
        let l = image_loss(&render, &target, 1.0, 0.5);
        let f = |r: &[[f64; 4]]| {
            let l = image_loss(r, &target, 1.0, 0.5);
            l.mse + 0.5 * l.mask
        };
        for i in 0..3 {
            for c in 0..4 {
                let mut a = render.clone();
                a[i][c] += 1e-6;
                let mut b = render.clone();
                b[i][c] -= 1e-6;
                let fd = (f(&a) - f(&b)) / 2e-6;
                assert!((fd - l.g_render[i][c]).abs() < 1e-6, "{i} {c}");
                let g = |t: &[[f64; 4]]| {
                    let l = image_loss(&render, t, 1.0, 0.5);
                    l.mse + 0.5 * l.mask
                };
                let (mut a, mut b) = (target.clone(), target.clone());
                a[i][c] += 1e-6;
                b[i][c] -= 1e-6;
                let fd = (g(&a) - g(&b)) / 2e-6;
                assert!((fd - l.g_target[i][c]).abs() < 1e-6, "target {i} {c}");
            }
        }
    }

    #[test]
    fn default_weights() {
        let w = LossWeights::default();
        assert_eq!([w.w1, w.w2, w.w3, w.w4, w.w5, w.w6], [1.0, 1.0, 1e-5, 1.0, 0.1, 1e5]);
        let r = RefineWeights::default();
        assert_eq!([r.mse, r.mask, r.expansion, r.laplacian], [1.0, 1.0, 0.1, 1e5]);
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights { w3: -1.0, ..LossWeights::default() };
        assert!(w.validate().is_err());
    }
}
