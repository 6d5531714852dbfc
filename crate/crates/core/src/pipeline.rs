//! End-to-end driver: geometry refinement, appearance alignment, camera
//! estimation, fidelity deformation and final recoloring, with every
//! intermediate mesh and loss curve written to disk.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::camera::{Camera, DEFAULT_DISTANCE, DEFAULT_FOV_DEG};
use crate::deform2d::DEFAULT_GRID_SIZE;
use crate::enhance::{
    enhance_appearance, enhance_fidelity, estimate_camera, refine_geometry, AppearanceConfig, CameraEstimate, CameraSearch, DeformerKind,
    FidelityConfig, LossWeights, RefineConfig, RefineWeights,
};
use crate::error::{Error, Result};
use crate::io::write_mesh;
use crate::mesh::Mesh;
use crate::metrics::{evaluate, ghosting_metric, silhouette_iou, EvalReport, EvalSettings, DEFAULT_FSCORE_THRESHOLD, DEFAULT_SAMPLES};
use crate::optim::{LossLog, OptimConfig};
use crate::raster::{render, RenderMode, SoftSettings};
use crate::scenario::{Bundle, DEFAULT_RESOLUTION};
use crate::unproject::{PosedImage, UnprojectSettings};

/// Every tunable of a pipeline run. Serialized as flat `key = value` lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub resolution: usize,
    pub grid_size: usize,
    pub weights: LossWeights,
    pub appearance_iterations: usize,
    pub appearance_step: f64,
    pub camera_iterations: usize,
    pub fidelity_iterations: usize,
    pub fidelity_step: f64,
    pub refine_iterations: usize,
    pub refine_step: f64,
    pub refine_weights: RefineWeights,
    pub soft_sigma: f64,
    /// `None` derives the temperature from the depth range.
    pub soft_gamma: Option<f64>,
    pub cos_threshold: f64,
    pub input_view_weight: f64,
    pub deformer: DeformerKind,
    pub seed: u64,
    pub eval_views: usize,
    pub eval_samples: usize,
    pub fscore_threshold: f64,
    pub skip_refine: bool,
    pub skip_fidelity: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let refine = RefineConfig::default();
        PipelineConfig {
            resolution: DEFAULT_RESOLUTION,
            grid_size: DEFAULT_GRID_SIZE,
            weights: LossWeights::default(),
            appearance_iterations: 100,
            appearance_step: AppearanceConfig::default().optim.step_size,
            camera_iterations: 100,
            fidelity_iterations: 200,
            fidelity_step: FidelityConfig::default().optim.step_size,
            refine_iterations: refine.optim.iterations,
            refine_step: refine.optim.step_size,
            refine_weights: refine.weights,
            soft_sigma: SoftSettings::default().sigma,
            soft_gamma: SoftSettings::default().gamma,
            cos_threshold: UnprojectSettings::default().cos_threshold,
            input_view_weight: FidelityConfig::default().input_view_weight,
            deformer: DeformerKind::Jacobian,
            seed: 0,
            eval_views: 24,
            eval_samples: DEFAULT_SAMPLES,
            fscore_threshold: DEFAULT_FSCORE_THRESHOLD,
            skip_refine: false,
            skip_fidelity: false,
        }
    }
}

fn deformer_name(d: DeformerKind) -> &'static str {
    match d {
        DeformerKind::Jacobian => "jacobian",
        DeformerKind::VertexReplacement => "vertex_replacement",
        DeformerKind::Grid3d => "grid3d",
    }
}

impl PipelineConfig {
    /// `(key, value)` pairs in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let w = &self.weights;
        let r = &self.refine_weights;
        vec![
            ("resolution", self.resolution.to_string()),
            ("grid_size", self.grid_size.to_string()),
            ("w1", w.w1.to_string()),
            ("w2", w.w2.to_string()),
            ("w3", w.w3.to_string()),
            ("w4", w.w4.to_string()),
            ("w5", w.w5.to_string()),
            ("w6", w.w6.to_string()),
            ("appearance_iterations", self.appearance_iterations.to_string()),
            ("appearance_step", self.appearance_step.to_string()),
            ("camera_iterations", self.camera_iterations.to_string()),
            ("fidelity_iterations", self.fidelity_iterations.to_string()),
            ("fidelity_step", self.fidelity_step.to_string()),
            ("refine_iterations", self.refine_iterations.to_string()),
            ("refine_step", self.refine_step.to_string()),
            ("refine_mse", r.mse.to_string()),
            ("refine_mask", r.mask.to_string()),
            ("refine_expansion", r.expansion.to_string()),
            ("refine_laplacian", r.laplacian.to_string()),
            ("soft_sigma", self.soft_sigma.to_string()),
            ("soft_gamma", self.soft_gamma.map_or_else(|| "auto".to_string(), |g| g.to_string())),
            ("cos_threshold", self.cos_threshold.to_string()),
            ("input_view_weight", self.input_view_weight.to_string()),
            ("deformer", deformer_name(self.deformer).to_string()),
            ("seed", self.seed.to_string()),
            ("eval_views", self.eval_views.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("fscore_threshold", self.fscore_threshold.to_string()),
            ("skip_refine", self.skip_refine.to_string()),
            ("skip_fidelity", self.skip_fidelity.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# mvrefine pipeline configuration\n");
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "resolution" => self.resolution = num(key, value)?,
            "grid_size" => self.grid_size = num(key, value)?,
            "w1" => self.weights.w1 = num(key, value)?,
            "w2" => self.weights.w2 = num(key, value)?,
            "w3" => self.weights.w3 = num(key, value)?,
            "w4" => self.weights.w4 = num(key, value)?,
            "w5" => self.weights.w5 = num(key, value)?,
            "w6" => self.weights.w6 = num(key, value)?,
            "appearance_iterations" => self.appearance_iterations = num(key, value)?,
            "appearance_step" => self.appearance_step = num(key, value)?,
            "camera_iterations" => self.camera_iterations = num(key, value)?,
            "fidelity_iterations" => self.fidelity_iterations = num(key, value)?,
            "fidelity_step" => self.fidelity_step = num(key, value)?,
            "refine_iterations" => self.refine_iterations = num(key, value)?,
            "refine_step" => self.refine_step = num(key, value)?,
            "refine_mse" => self.refine_weights.mse = num(key, value)?,
            "refine_mask" => self.refine_weights.mask = num(key, value)?,
            "refine_expansion" => self.refine_weights.expansion = num(key, value)?,
            "refine_laplacian" => self.refine_weights.laplacian = num(key, value)?,
            "soft_sigma" => self.soft_sigma = num(key, value)?,
            "soft_gamma" => self.soft_gamma = if value == "auto" { None } else { Some(num(key, value)?) },
            "cos_threshold" => self.cos_threshold = num(key, value)?,
            "input_view_weight" => self.input_view_weight = num(key, value)?,
            "deformer" => self.deformer = value.parse().map_err(Error::Config)?,
            "seed" => self.seed = num(key, value)?,
            "eval_views" => self.eval_views = num(key, value)?,
            "eval_samples" => self.eval_samples = num(key, value)?,
            "fscore_threshold" => self.fscore_threshold = num(key, value)?,
            "skip_refine" => self.skip_refine = num(key, value)?,
            "skip_fidelity" => self.skip_fidelity = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let r = &self.refine_weights;
        let reals = [
            ("appearance_step", self.appearance_step),
            ("fidelity_step", self.fidelity_step),
            ("refine_step", self.refine_step),
            ("soft_sigma", self.soft_sigma),
        ];
        for (name, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        let weights = [
            ("refine_mse", r.mse),
            ("refine_mask", r.mask),
            ("refine_expansion", r.expansion),
            ("refine_laplacian", r.laplacian),
            ("cos_threshold", self.cos_threshold),
            ("input_view_weight", self.input_view_weight),
            ("fscore_threshold", self.fscore_threshold),
        ];
        for (name, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be non-negative")));
            }
        }
        if let Some(g) = self.soft_gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("soft_gamma = {g} must be positive or auto")));
            }
        }
        if self.grid_size < 2 {
            return Err(Error::Config("grid_size must be at least 2".into()));
        }
        if self.resolution == 0 || self.eval_views == 0 {
            return Err(Error::Config("resolution and eval_views must be positive".into()));
        }
        Ok(())
    }

    pub fn soft(&self) -> SoftSettings {
        SoftSettings { sigma: self.soft_sigma, gamma: self.soft_gamma, ..SoftSettings::default() }
    }

    pub fn unproject(&self) -> UnprojectSettings {
        UnprojectSettings { cos_threshold: self.cos_threshold, ..UnprojectSettings::default() }
    }

    fn optim(&self, iterations: usize, step: f64) -> OptimConfig {
        OptimConfig { seed: self.seed, ..OptimConfig::new(iterations, step) }
    }

    pub fn appearance(&self) -> AppearanceConfig {
        AppearanceConfig {
            optim: self.optim(self.appearance_iterations, self.appearance_step),
            grid_size: self.grid_size,
            unproject: self.unproject(),
            ..AppearanceConfig::default()
        }
    }

    pub fn camera_search(&self) -> CameraSearch {
        let d = CameraSearch::default();
        CameraSearch { refine: OptimConfig { iterations: self.camera_iterations, ..d.refine }, soft: self.soft(), ..d }
    }

    pub fn fidelity(&self) -> FidelityConfig {
        FidelityConfig {
            optim: self.optim(self.fidelity_iterations, self.fidelity_step),
            soft: self.soft(),
            unproject: self.unproject(),
            input_view_weight: self.input_view_weight,
            deformer: self.deformer,
            ..FidelityConfig::default()
        }
    }

    pub fn refine(&self) -> RefineConfig {
        RefineConfig {
            optim: self.optim(self.refine_iterations, self.refine_step),
            weights: self.refine_weights,
            soft: self.soft(),
            ..RefineConfig::default()
        }
    }

    pub fn eval(&self) -> EvalSettings {
        EvalSettings {
            views: self.eval_views,
            resolution: self.resolution,
            samples: self.eval_samples,
            threshold: self.fscore_threshold,
            seed: self.seed,
        }
    }
}

/// Meshes and logs of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Initial mesh after geometry refinement.
    pub m0: Mesh,
    /// Appearance-enhanced mesh.
    pub mc: Mesh,
    /// Views after appearance alignment.
    pub aligned: Vec<PosedImage>,
    /// Deformed mesh, absent with `skip_fidelity`.
    pub md: Option<Mesh>,
    /// Final mesh: recolored `md`, or `mc` when fidelity is skipped.
    pub out: Mesh,
    pub camera: Option<CameraEstimate>,
    pub logs: Vec<(&'static str, LossLog)>,
    pub report: Option<EvalReport>,
}

/// Estimates the input camera from the bundle's distance and field of view.
pub fn posed_input(mesh: &Mesh, bundle_input: &PosedImage, config: &PipelineConfig) -> Result<(PosedImage, CameraEstimate)> {
    let cam = bundle_input.camera;
    let est = estimate_camera(mesh, &bundle_input.image, cam.distance, cam.fov_deg, &config.weights, &config.camera_search())?;
    Ok((PosedImage::new(bundle_input.image.clone(), est.camera)?, est))
}

/// Runs every stage on a loaded bundle.
pub fn run_pipeline(bundle: &Bundle, config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let mut logs = Vec::new();
    let m0 = if config.skip_refine || bundle.normal_views.is_empty() {
        bundle.initial_mesh.clone()
    } else {
        let (m, log) = refine_geometry(&bundle.initial_mesh, &bundle.normal_views, &config.refine())?;
        logs.push(("refine", log));
        m
    };
    let appearance = enhance_appearance(&m0, &bundle.views, &config.weights, &config.appearance())?;
    logs.push(("appearance", appearance.log.clone()));
    let mc = appearance.mesh;
    let (md, out, camera) = if config.skip_fidelity {
        (None, mc.clone(), None)
    } else {
        let (input, est) = posed_input(&mc, &bundle.input_image, config)?;
        logs.push(("camera", est.log.clone()));
        let fid = enhance_fidelity(&mc, &input, &appearance.deformed, &config.weights, &config.fidelity())?;
        logs.push(("fidelity", fid.log));
        (Some(fid.deformed), fid.output, Some(est))
    };
    let report = match &bundle.gt_mesh {
        Some(gt) => {
            let settings = EvalSettings { resolution: bundle.views[0].image.width(), ..config.eval() };
            Some(evaluate_with_views(&out, gt, &bundle.views, &settings)?)
        }
        None => None,
    };
    Ok(PipelineOutput { m0, mc, aligned: appearance.deformed, md, out, camera, logs, report })
}

/// Ring evaluation plus ghosting and mean silhouette IoU against posed views,
/// which must all have the evaluation resolution.
pub fn evaluate_with_views(generated: &Mesh, gt: &Mesh, views: &[PosedImage], settings: &EvalSettings) -> Result<EvalReport> {
    for v in views {
        let (w, h) = v.image.dims();
        if (w, h) != (settings.resolution, settings.resolution) {
            return Err(Error::Dimension(format!(
                "view is {w}x{h} but the evaluation resolution is {r}x{r}",
                r = settings.resolution
            )));
        }
    }
    let mut report = evaluate(generated, gt, settings)?;
    if !views.is_empty() {
        report.ghosting = Some(ghosting_metric(generated, views)?);
        let mut iou = 0.0;
        for v in views {
            iou += silhouette_iou(&render(generated, &v.camera, RenderMode::Hard)?.image, &v.image)?;
        }
        report.silhouette_iou = Some(iou / views.len() as f64);
    }
    Ok(report)
}

pub fn camera_text(c: &Camera) -> String {
    format!(
        "elevation = {}\nazimuth = {}\ndistance = {}\nfov = {}\nwidth = {}\nheight = {}\n",
        c.elevation_deg, c.azimuth_deg, c.distance, c.fov_deg, c.width, c.height
    )
}

impl PipelineOutput {
    /// Writes `m0.ply`, `mc.ply`, `md.ply`, `out.ply`, `<stage>_loss.csv`,
    /// `camera.txt`, `report.txt`, `report.json` and the effective config.
    pub fn save(&self, dir: impl AsRef<Path>, config: &PipelineConfig) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let put_mesh = |name: &str, m: &Mesh, written: &mut Vec<PathBuf>| -> Result<()> {
            let p = dir.join(name);
            write_mesh(&p, m)?;
            written.push(p);
            Ok(())
        };
        put_mesh("m0.ply", &self.m0, &mut written)?;
        put_mesh("mc.ply", &self.mc, &mut written)?;
        if let Some(md) = &self.md {
            put_mesh("md.ply", md, &mut written)?;
            put_mesh("out.ply", &self.out, &mut written)?;
        }
        let aligned = dir.join("aligned");
        std::fs::create_dir_all(&aligned)?;
        for (k, v) in self.aligned.iter().enumerate() {
            let p = aligned.join(format!("view_{k}.png"));
            v.image.write_png(&p)?;
            written.push(p);
        }
        let mut put_text = |name: &str, text: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, text)?;
            written.push(p);
            Ok(())
        };
        for (stage, log) in &self.logs {
            put_text(&format!("{stage}_loss.csv"), log.to_csv())?;
        }
        if let Some(est) = &self.camera {
            put_text("camera.txt", camera_text(&est.camera))?;
        }
        if let Some(r) = &self.report {
            put_text("report.txt", r.to_key_values())?;
            put_text("report.json", r.to_json())?;
        }
        put_text("config.txt", config.to_text())?;
        Ok(written)
    }
}

/// Default input camera when a bundle does not provide one.
pub fn default_input_camera(resolution: usize) -> Camera {
    Camera { fov_deg: DEFAULT_FOV_DEG, distance: DEFAULT_DISTANCE, elevation_deg: 0.0, azimuth_deg: 0.0, width: resolution, height: resolution }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn edited_values_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.set("w3", "0.0025").unwrap();
        cfg.set("soft_gamma", "0.013").unwrap();
        cfg.set("deformer", "grid3d").unwrap();
        cfg.set("skip_fidelity", "true").unwrap();
        assert_eq!(PipelineConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = PipelineConfig::from_text("w7 = 1\n").unwrap_err();
        assert!(err.to_string().contains("w7"), "{err}");
    }

    #[test]
    fn negative_weight_is_an_error() {
        assert!(PipelineConfig::from_text("w2 = -1\n").is_err());
        assert!(PipelineConfig::from_text("resolution = abc\n").is_err());
    }

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        let w = c.weights;
        assert_eq!([w.w1, w.w2, w.w3, w.w4, w.w5, w.w6], [1.0, 1.0, 1e-5, 1.0, 0.1, 1e5]);
        assert_eq!((c.fidelity_iterations, c.camera_iterations, c.grid_size), (200, 100, 20));
        assert_eq!(c.fscore_threshold, 0.2);
    }
}
