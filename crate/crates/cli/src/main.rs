use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvrefine_core::enhance::{enhance_appearance, enhance_fidelity, refine_geometry};
use mvrefine_core::io::{read_mesh, write_mesh};
use mvrefine_core::optim::LossLog;
use mvrefine_core::pipeline::{camera_text, evaluate_with_views, posed_input, run_pipeline, PipelineConfig};
use mvrefine_core::scenario::{Bundle, Scenario, SCENARIO_NAMES};
use mvrefine_core::unproject::PosedImage;
use mvrefine_core::{Error, ImageRGBA, Result};

const OUT_ENV: &str = "MVREFINE_OUT";
const DEFAULT_OUT: &str = "mvrefine-out";

#[derive(Parser)]
#[command(name = "mvrefine", version, about = "Multiview-consistent mesh enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scenario bundle with its ground truth.
    GenerateScenario {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(SCENARIO_NAMES))]
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Refine the bundle's initial mesh against its normal maps.
    RefineGeometry {
        #[command(flatten)]
        input: StageInput,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Align the bundle's views and recolor the mesh from them.
    EnhanceAppearance {
        #[command(flatten)]
        input: StageInput,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Estimate the input camera, deform the mesh toward the input image and recolor it.
    EnhanceFidelity {
        #[command(flatten)]
        input: StageInput,
        /// Directory of aligned `view_<k>.png` images; defaults to the bundle's views.
        #[arg(long)]
        aligned: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Compare a mesh with the ground truth.
    Evaluate {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Bundle whose views add ghosting and silhouette IoU to the report.
        #[arg(long)]
        views: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Run every stage on a bundle.
    Pipeline {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, env = OUT_ENV, default_value = DEFAULT_OUT)]
    out: PathBuf,
}

#[derive(Args)]
struct StageInput {
    #[arg(long)]
    bundle: PathBuf,
    /// Mesh to process instead of the bundle's initial mesh.
    #[arg(long)]
    mesh: Option<PathBuf>,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    w2: Option<f64>,
    #[arg(long)]
    w3: Option<f64>,
    #[arg(long)]
    w4: Option<f64>,
    #[arg(long)]
    w5: Option<f64>,
    #[arg(long)]
    w6: Option<f64>,
    #[arg(long)]
    iterations_appearance: Option<usize>,
    #[arg(long)]
    iterations_camera: Option<usize>,
    #[arg(long)]
    iterations_fidelity: Option<usize>,
    #[arg(long)]
    iterations_refine: Option<usize>,
    #[arg(long)]
    step_appearance: Option<f64>,
    #[arg(long)]
    step_fidelity: Option<f64>,
    #[arg(long)]
    step_refine: Option<f64>,
    #[arg(long)]
    soft_sigma: Option<f64>,
    /// Soft rasterizer depth temperature, or `auto`.
    #[arg(long)]
    soft_gamma: Option<String>,
    #[arg(long)]
    cos_threshold: Option<f64>,
    #[arg(long)]
    input_view_weight: Option<f64>,
    #[arg(long, value_parser = ["jacobian", "vertex_replacement", "grid3d"])]
    deformer: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_views: Option<usize>,
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long)]
    fscore_threshold: Option<f64>,
    #[arg(long)]
    skip_refine: bool,
    #[arg(long)]
    skip_fidelity: bool,
}

impl ConfigArgs {
    /// File first, then `--set`, then dedicated flags.
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        let flags: [(&str, Option<String>); 24] = [
            ("resolution", self.resolution.map(|v| v.to_string())),
            ("grid_size", self.grid_size.map(|v| v.to_string())),
            ("w1", self.w1.map(|v| v.to_string())),
            ("w2", self.w2.map(|v| v.to_string())),
            ("w3", self.w3.map(|v| v.to_string())),
            ("w4", self.w4.map(|v| v.to_string())),
            ("w5", self.w5.map(|v| v.to_string())),
            ("w6", self.w6.map(|v| v.to_string())),
            ("appearance_iterations", self.iterations_appearance.map(|v| v.to_string())),
            ("camera_iterations", self.iterations_camera.map(|v| v.to_string())),
            ("fidelity_iterations", self.iterations_fidelity.map(|v| v.to_string())),
            ("refine_iterations", self.iterations_refine.map(|v| v.to_string())),
            ("appearance_step", self.step_appearance.map(|v| v.to_string())),
            ("fidelity_step", self.step_fidelity.map(|v| v.to_string())),
            ("refine_step", self.step_refine.map(|v| v.to_string())),
            ("soft_sigma", self.soft_sigma.map(|v| v.to_string())),
            ("soft_gamma", self.soft_gamma.clone()),
            ("cos_threshold", self.cos_threshold.map(|v| v.to_string())),
            ("input_view_weight", self.input_view_weight.map(|v| v.to_string())),
            ("deformer", self.deformer.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("eval_views", self.eval_views.map(|v| v.to_string())),
            ("eval_samples", self.eval_samples.map(|v| v.to_string())),
            ("fscore_threshold", self.fscore_threshold.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.skip_refine |= self.skip_refine;
        cfg.skip_fidelity |= self.skip_fidelity;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_stage(input: &StageInput) -> Result<(Bundle, mvrefine_core::Mesh)> {
    let bundle = Bundle::load(&input.bundle)?;
    let mesh = match &input.mesh {
        Some(p) => {
            if !p.exists() {
                return Err(Error::MissingFiles(vec![p.clone()]));
            }
            read_mesh(p)?
        }
        None => bundle.initial_mesh.clone(),
    };
    Ok((bundle, mesh))
}

fn write_log(dir: &Path, stage: &str, log: &LossLog) -> Result<()> {
    std::fs::write(dir.join(format!("{stage}_loss.csv")), log.to_csv())?;
    Ok(())
}

fn write_views(dir: &Path, views: &[PosedImage]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (k, v) in views.iter().enumerate() {
        v.image.write_png(dir.join(format!("view_{k}.png")))?;
    }
    Ok(())
}

fn read_aligned(dir: &Path, like: &[PosedImage]) -> Result<Vec<PosedImage>> {
    let paths: Vec<PathBuf> = (0..like.len()).map(|k| dir.join(format!("view_{k}.png"))).collect();
    let missing: Vec<PathBuf> = paths.iter().filter(|p| !p.exists()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    paths.iter().zip(like).map(|(p, v)| PosedImage::new(ImageRGBA::read_png(p)?, v.camera)).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateScenario { name, seed, out } => {
            Scenario::generate(&name, seed)?.save(&out.out)?;
            println!("wrote scenario {name} (seed {seed}) to {}", out.out.display());
        }
        Command::RefineGeometry { input, config, out } => {
            let cfg = config.resolve()?;
            let (bundle, mesh) = load_stage(&input)?;
            if bundle.normal_views.is_empty() {
                return Err(Error::MissingFiles(vec![input.bundle.join("normals")]));
            }
            let (m0, log) = refine_geometry(&mesh, &bundle.normal_views, &cfg.refine())?;
            std::fs::create_dir_all(&out.out)?;
            write_mesh(out.out.join("m0.ply"), &m0)?;
            write_log(&out.out, "refine", &log)?;
            println!("wrote {}", out.out.join("m0.ply").display());
        }
        Command::EnhanceAppearance { input, config, out } => {
            let cfg = config.resolve()?;
            let (bundle, mesh) = load_stage(&input)?;
            let res = enhance_appearance(&mesh, &bundle.views, &cfg.weights, &cfg.appearance())?;
            std::fs::create_dir_all(&out.out)?;
            write_mesh(out.out.join("mc.ply"), &res.mesh)?;
            write_views(&out.out.join("aligned"), &res.deformed)?;
            write_log(&out.out, "appearance", &res.log)?;
            println!("wrote {}", out.out.join("mc.ply").display());
        }
        Command::EnhanceFidelity { input, aligned, config, out } => {
            let cfg = config.resolve()?;
            let (bundle, mesh) = load_stage(&input)?;
            let views = match &aligned {
                Some(dir) => read_aligned(dir, &bundle.views)?,
                None => bundle.views.clone(),
            };
            let (posed, est) = posed_input(&mesh, &bundle.input_image, &cfg)?;
            let res = enhance_fidelity(&mesh, &posed, &views, &cfg.weights, &cfg.fidelity())?;
            std::fs::create_dir_all(&out.out)?;
            write_mesh(out.out.join("md.ply"), &res.deformed)?;
            write_mesh(out.out.join("out.ply"), &res.output)?;
            std::fs::write(out.out.join("camera.txt"), camera_text(&est.camera))?;
            write_log(&out.out, "camera", &est.log)?;
            write_log(&out.out, "fidelity", &res.log)?;
            println!("wrote {}", out.out.join("out.ply").display());
        }
        Command::Evaluate { mesh, gt, views, config, out } => {
            let cfg = config.resolve()?;
            let missing: Vec<PathBuf> = [&mesh, &gt].into_iter().filter(|p| !p.exists()).cloned().collect();
            if !missing.is_empty() {
                return Err(Error::MissingFiles(missing));
            }
            let views = match &views {
                Some(dir) => Bundle::load(dir)?.views,
                None => Vec::new(),
            };
            let report = evaluate_with_views(&read_mesh(&mesh)?, &read_mesh(&gt)?, &views, &cfg.eval())?;
            std::fs::create_dir_all(&out.out)?;
            std::fs::write(out.out.join("report.txt"), report.to_key_values())?;
            std::fs::write(out.out.join("report.json"), report.to_json())?;
            println!("chamfer {} fscore {} mean_psnr {} mean_ssim {}", report.chamfer, report.fscore, report.mean_psnr, report.mean_ssim);
        }
        Command::Pipeline { bundle, config, out } => {
            let cfg = config.resolve()?;
            let b = Bundle::load(&bundle)?;
            let result = run_pipeline(&b, &cfg)?;
            result.save(&out.out, &cfg)?;
            match &result.report {
                Some(r) => println!("wrote {}; chamfer {} fscore {} mean_psnr {}", out.out.display(), r.chamfer, r.fscore, r.mean_psnr),
                None => println!("wrote {}", out.out.display()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("mvrefine: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
