use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::dataset::{load_dataset, rgb_path};
use super::eval::{depth_pearson, evaluate, EvalReport};
use super::io::{load_depth, load_png, save_pfm, save_png};
use super::oracle::{
    distort_depth, make_oracle_scene, render_sprites, DepthNoise, OracleSceneSpec, OracleViews, SceneClass,
    SCENE_CLASSES,
};
use super::save_dataset;
use crate::autodiff::Tensor;
use crate::bridge::{check_endpoint, BridgeClient, RemoteCodec, RemoteDenoiser};
use crate::error::{Error, Result};
use crate::field::{Checkpoint, FieldParams};
use crate::objective::GradientMode;
use crate::prior::{
    concat_guidance, textual_inversion, train_toy_denoiser, AnalyticGaussianPrior, Denoiser, EmbeddingTable,
    GuidanceEmbedding, IdentityCodec, LatentCodec, NoiseSchedule, ToyConfig, ToyDenoiser,
};
use crate::raster::{DepthMap, Image};
use crate::render::{
    format_camera_record, parse_camera_file, render_image, CameraIntrinsics, CameraPose, RenderConfig, SceneBox,
};
use crate::trainer::{
    canonical_camera, orbit_camera, synthesize, NovelConfig, PriorBackend, SynthesisConfig, SynthesisInputs,
};

#[derive(Debug, Parser)]
#[command(name = "monoview", version, about = "Radiance field synthesis from a single image")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize a radiance field from one image.
    Synth(SynthArgs),
    /// Render views of a checkpoint.
    Render(RenderArgs),
    /// Invert a guidance embedding for an image under the toy prior.
    Invert(InvertArgs),
    /// Score renders against a dataset.
    Eval(EvalArgs),
    /// Build an oracle dataset.
    MakeScene(MakeSceneArgs),
    /// Train the toy denoiser on rendered sprites of the scene classes.
    TrainPrior(TrainPriorArgs),
    /// Run protocol checks against the bridge named by NERDI_BRIDGE_URL.
    CheckBridge,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum PriorArg {
    Analytic,
    Toy,
    Remote,
}

impl From<PriorArg> for PriorBackend {
    fn from(p: PriorArg) -> Self {
        match p {
            PriorArg::Analytic => PriorBackend::Analytic,
            PriorArg::Toy => PriorBackend::Toy,
            PriorArg::Remote => PriorBackend::Remote,
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    image: PathBuf,
    /// TOML configuration.
    #[arg(long)]
    config: PathBuf,
    /// `dotted.key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Depth estimate at the input view (.pfm or 16-bit .png).
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Distort the depth estimate: `scale,shift,std`.
    #[arg(long, value_name = "SCALE,SHIFT,STD")]
    depth_noise: Option<String>,
    #[arg(long, value_enum)]
    prior: Option<PriorArg>,
    /// Toy denoiser file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Class name whose embedding forms the caption section.
    #[arg(long)]
    caption_class: Option<String>,
    /// Precomputed inverted embedding (from `invert`).
    #[arg(long)]
    embedding: Option<PathBuf>,
    /// Camera file; the first record is the input camera.
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Turntable views written after training.
    #[arg(long, default_value_t = 8)]
    turntable: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Camera file, one view per record.
    #[arg(long, conflicts_with = "turntable")]
    camera: Option<PathBuf>,
    /// Number of orbit views when no camera file is given.
    #[arg(long)]
    turntable: Option<usize>,
    /// Image side for turntable views.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 128)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InvertArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    caption_class: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Reference dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint rendered at every dataset camera.
    #[arg(long, conflicts_with = "rendered", required_unless_present = "rendered")]
    checkpoint: Option<PathBuf>,
    /// Directory of already rendered `rgb/%04d.png` views.
    #[arg(long)]
    rendered: Option<PathBuf>,
    /// Skip these views (e.g. the input view), comma separated.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    samples: usize,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MakeSceneArgs {
    /// Random member of this class.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    class: Option<String>,
    /// Scene specification in TOML.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 9)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 512)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainPriorArgs {
    #[arg(long, default_value_t = 60)]
    per_class: usize,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Run the command line; returns the process exit code (0 success, 1 usage
/// error, 2 runtime error).
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command, stdout: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a, stdout),
        Command::Render(a) => render(a),
        Command::Invert(a) => invert(a, stdout),
        Command::Eval(a) => eval(a, stdout),
        Command::MakeScene(a) => make_scene(a, stdout),
        Command::TrainPrior(a) => train_prior(a, stdout),
        Command::CheckBridge => check_bridge(stdout),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))
}

fn parse_noise(text: &str, seed: u64) -> Result<DepthNoise> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("--depth-noise expects scale,shift,std; got {text:?}")))?;
    match v[..] {
        [scale, shift, std] => Ok(DepthNoise {
            scale,
            shift,
            std,
            seed,
        }),
        _ => Err(Error::invalid(format!(
            "--depth-noise expects three numbers, got {}",
            v.len()
        ))),
    }
}

fn class_row(table: &EmbeddingTable, class: Option<&str>) -> Result<Tensor> {
    match class {
        Some(name) => Ok(table.row(table.index_of(name)?)),
        None => Ok(table.mean_row()),
    }
}

struct Prior {
    denoiser: Box<dyn Denoiser>,
    codec: Box<dyn LatentCodec>,
    guidance: GuidanceEmbedding,
}

fn build_prior(a: &SynthArgs, cfg: &SynthesisConfig, image: &Image, stdout: &mut dyn Write) -> Result<Prior> {
    let p = cfg.novel.prior_size;
    let loaded_embedding = match &a.embedding {
        Some(path) => Some(EmbeddingTable::load(path)?.table().clone()),
        None => None,
    };
    match cfg.prior.backend {
        PriorBackend::Analytic => {
            let mu = IdentityCodec.encode(&image.resize(p, p)?)?;
            let denoiser = AnalyticGaussianPrior::new(mu, cfg.prior.sigma0, NoiseSchedule::default())?;
            let guidance = concat_guidance(Tensor::zeros(vec![1, 4]), Tensor::zeros(vec![1, 4]))?;
            Ok(Prior {
                denoiser: Box::new(denoiser),
                codec: Box::new(IdentityCodec),
                guidance,
            })
        }
        PriorBackend::Toy => {
            let path = cfg
                .prior
                .model
                .as_ref()
                .ok_or_else(|| Error::invalid("the toy prior needs --model or prior.model"))?;
            let (toy, table) = ToyDenoiser::load(path)?;
            let caption = class_row(&table, a.caption_class.as_deref())?;
            let inverted = match loaded_embedding {
                Some(e) => e,
                None => {
                    let inv = textual_inversion(
                        &[image.resize(p, p)?],
                        &toy,
                        &IdentityCodec,
                        toy.schedule(),
                        Some(&caption),
                        &table.mean_row(),
                        &cfg.inversion,
                    )?;
                    let _ = writeln!(
                        stdout,
                        "inversion: final loss {:.5}",
                        inv.losses.last().copied().unwrap_or(f64::NAN)
                    );
                    inv.embedding
                }
            };
            Ok(Prior {
                denoiser: Box::new(toy),
                codec: Box::new(IdentityCodec),
                guidance: concat_guidance(caption, inverted)?,
            })
        }
        PriorBackend::Remote => {
            if cfg.loss.mode == GradientMode::Full {
                return Err(Error::invalid(
                    "the remote prior supports only the distilled gradient mode",
                ));
            }
            let client = Arc::new(BridgeClient::from_env()?);
            let caption = client.text_embed(a.caption_class.as_deref().unwrap_or(""))?;
            // no in-process inversion through a remote model; the caption
            // doubles as the second section unless one is supplied
            let inverted = loaded_embedding.unwrap_or_else(|| caption.clone());
            Ok(Prior {
                denoiser: Box::new(RemoteDenoiser::connect(Arc::clone(&client))?),
                codec: Box::new(RemoteCodec::connect(client)?),
                guidance: concat_guidance(caption, inverted)?,
            })
        }
    }
}

fn input_camera(path: Option<&Path>, image: &Image) -> Result<(CameraIntrinsics, CameraPose)> {
    match path {
        Some(p) => {
            let cams = parse_camera_file(&read_text(p)?)?;
            let (intr, pose) = *cams
                .first()
                .ok_or_else(|| Error::format(format!("{} holds no camera record", p.display())))?;
            if intr.width != image.width() || intr.height != image.height() {
                return Err(Error::invalid(format!(
                    "camera is {}x{} but the image is {}x{}",
                    intr.width,
                    intr.height,
                    image.width(),
                    image.height()
                )));
            }
            Ok((intr, pose))
        }
        None => canonical_camera(image.width(), image.height()),
    }
}

/// Orbit through the input camera: same radius and elevation, `n` evenly
/// spaced azimuths starting at the input.
fn turntable_poses(pose: &CameraPose, n: usize) -> Result<Vec<CameraPose>> {
    let [x, y, z] = pose.translation;
    let r = (x * x + y * y + z * z).sqrt();
    if r < 1e-9 {
        return Err(Error::invalid("turntable needs a camera away from the origin"));
    }
    let el = (y / r).clamp(-1.0, 1.0).asin().to_degrees().clamp(-89.0, 89.0);
    let az = x.atan2(z).to_degrees();
    (0..n)
        .map(|i| orbit_camera(r, el, az + 360.0 * i as f64 / n as f64))
        .collect()
}

fn view_render(samples: usize) -> RenderConfig {
    RenderConfig {
        samples_per_ray: samples,
        stratified_jitter: false,
        ..Default::default()
    }
}

fn synth(a: SynthArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = SynthesisConfig::from_toml(&read_text(&a.config)?)?;
    for o in &a.overrides {
        cfg.set(o)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.prior {
        cfg.prior.backend = p.into();
    }
    if let Some(m) = &a.model {
        cfg.prior.model = Some(m.clone());
    }
    cfg.validate()?;

    let image = load_png(&a.image)?;
    let (intr, pose) = input_camera(a.camera.as_deref(), &image)?;
    let depth: Option<DepthMap> = match &a.depth {
        Some(path) => {
            let d = load_depth(path)?;
            Some(match &a.depth_noise {
                Some(text) => distort_depth(&d, &parse_noise(text, cfg.seed)?)?,
                None => d,
            })
        }
        None if a.depth_noise.is_some() => return Err(Error::invalid("--depth-noise needs --depth")),
        None => None,
    };
    let prior = build_prior(&a, &cfg, &image, stdout)?;

    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.toml"), cfg.to_toml())?;
    let mut log = BufWriter::new(fs::File::create(a.out.join("log.jsonl"))?);
    let result = synthesize(
        &SynthesisInputs {
            image: &image,
            intrinsics: intr,
            pose,
            depth: depth.as_ref(),
            mask: None,
            guidance: &prior.guidance,
            denoiser: prior.denoiser.as_ref(),
            codec: prior.codec.as_ref(),
            warm_start: None,
        },
        &cfg,
        Some(&mut log),
    )?;
    log.flush()?;
    result.checkpoint.save(&a.out.join("checkpoint.nrdf"))?;

    let dir = a.out.join("turntable");
    fs::create_dir_all(&dir)?;
    let render = view_render(cfg.render.samples_per_ray);
    for (i, p) in turntable_poses(&pose, a.turntable)?.iter().enumerate() {
        let view = render_image(&result.checkpoint.params, &intr, p, &render, &SceneBox::default())?;
        save_png(&view.image, &dir.join(format!("{i:03}.png")))?;
    }
    let last = result.log.last();
    writeln!(
        stdout,
        "synth: {} steps, final loss {}, wrote {}",
        result.log.len(),
        last.map_or("n/a".to_string(), |r| format!("{:.6}", r.total)),
        a.out.display()
    )?;
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cams: Vec<(CameraIntrinsics, CameraPose)> = match (&a.camera, a.turntable) {
        (Some(p), _) => parse_camera_file(&read_text(p)?)?,
        (None, Some(n)) => {
            let intr = CameraIntrinsics::from_fov(a.size, a.size, 50.0)?;
            OracleViews::default()
                .poses(n)?
                .into_iter()
                .map(|p| (intr, p))
                .collect()
        }
        (None, None) => return Err(Error::invalid("render needs --camera or --turntable")),
    };
    let views = render_views(&ck.params, &cams, a.samples)?;
    fs::create_dir_all(a.out.join("rgb"))?;
    fs::create_dir_all(a.out.join("depth"))?;
    let mut records = String::new();
    for (i, (img, depth)) in views.iter().enumerate() {
        save_png(img, &rgb_path(&a.out, i))?;
        save_pfm(depth, &super::dataset::depth_path(&a.out, i))?;
        records.push_str(&format_camera_record(&cams[i].0, &cams[i].1));
        records.push('\n');
    }
    fs::write(a.out.join("cameras.txt"), records)?;
    Ok(())
}

fn render_views(
    params: &FieldParams,
    cams: &[(CameraIntrinsics, CameraPose)],
    samples: usize,
) -> Result<Vec<(Image, DepthMap)>> {
    let cfg = view_render(samples);
    cams.iter()
        .map(|(intr, pose)| {
            let v = render_image(params, intr, pose, &cfg, &SceneBox::default())?;
            Ok((v.image, v.depth))
        })
        .collect()
}

fn invert(a: InvertArgs, stdout: &mut dyn Write) -> Result<()> {
    let (toy, table) = ToyDenoiser::load(&a.model)?;
    let size = toy.config().image_size;
    let image = load_png(&a.image)?.resize(size, size)?;
    let caption = match &a.caption_class {
        Some(c) => Some(table.row(table.index_of(c)?)),
        None => None,
    };
    let mut cfg = crate::prior::InversionConfig {
        seed: a.seed,
        ..Default::default()
    };
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    let inv = textual_inversion(
        &[image],
        &toy,
        &IdentityCodec,
        toy.schedule(),
        caption.as_ref(),
        &table.mean_row(),
        &cfg,
    )?;
    let rows = inv.embedding.shape()[0];
    let labels = (0..rows).map(|i| format!("inverted{i}")).collect();
    EmbeddingTable::new(labels, inv.embedding.clone())?.save(&a.out)?;
    let sims = table.cosine_to_rows(inv.embedding.data());
    let best = sims
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| table.labels()[i].clone())
        .unwrap_or_default();
    writeln!(stdout, "invert: nearest class {best}, wrote {}", a.out.display())?;
    Ok(())
}

fn load_rendered(dir: &Path, n: usize) -> Result<Vec<Image>> {
    (0..n).map(|i| load_png(&rgb_path(dir, i))).collect()
}

fn eval(a: EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    let data = load_dataset(&a.dataset)?;
    let n = data.images.len();
    let ids: Vec<usize> = (0..n).filter(|i| !a.exclude.contains(i)).collect();
    if ids.is_empty() {
        return Err(Error::invalid("every view is excluded"));
    }
    let (rendered, input_depth, config_hash) = match (&a.checkpoint, &a.rendered) {
        (Some(ck_path), _) => {
            let bytes =
                fs::read(ck_path).map_err(|e| Error::invalid(format!("cannot read {}: {e}", ck_path.display())))?;
            let ck = Checkpoint::from_bytes(&bytes)?;
            let views = render_views(&ck.params, &data.cameras, a.samples)?;
            let rho = depth_pearson(&views[0].1, &data.depths[0], None).ok();
            // hash of the run configuration written next to the checkpoint
            let hash = ck_path
                .parent()
                .map(|d| d.join("config.toml"))
                .and_then(|p| fs::read(p).ok())
                .map(|b| format!("{:x}", Sha256::digest(&b)));
            (views.into_iter().map(|v| v.0).collect::<Vec<_>>(), rho, hash)
        }
        (None, Some(dir)) => (load_rendered(dir, n)?, None, None),
        (None, None) => return Err(Error::invalid("eval needs --checkpoint or --rendered")),
    };
    let pick = |v: &[Image]| ids.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
    let mut report: EvalReport = evaluate(&pick(&rendered), &pick(&data.images), &ids)?;
    report.input_depth_pearson = input_depth;
    report.config_hash = config_hash;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::format(e.to_string()))?;
    match &a.out {
        Some(p) => {
            fs::write(p, &text)?;
            writeln!(
                stdout,
                "eval: psnr {:.3} ssim {:.4}",
                report.psnr_mean, report.ssim_mean
            )?;
        }
        None => writeln!(stdout, "{text}")?,
    }
    Ok(())
}

fn make_scene(a: MakeSceneArgs, stdout: &mut dyn Write) -> Result<()> {
    let spec = match (&a.class, &a.spec) {
        (Some(name), _) => {
            let class = SceneClass::from_name(name).ok_or_else(|| {
                let known: Vec<&str> = SCENE_CLASSES.iter().map(|c| c.name()).collect();
                Error::invalid(format!("unknown class {name:?}; known: {}", known.join(", ")))
            })?;
            class.instance(&mut ChaCha8Rng::seed_from_u64(a.seed), 40.0)
        }
        (None, Some(p)) => OracleSceneSpec::from_toml(&read_text(p)?)?,
        (None, None) => return Err(Error::invalid("make-scene needs --class or --spec")),
    };
    let mut views = OracleViews::default();
    views.render.samples_per_ray = a.samples;
    let data = make_oracle_scene(&spec, a.views, a.size, a.size, &views)?;
    save_dataset(&data, &a.out)?;
    fs::write(a.out.join("spec.toml"), spec.to_toml())?;
    writeln!(
        stdout,
        "make-scene: {} views of {} in {}",
        a.views,
        spec.label,
        a.out.display()
    )?;
    Ok(())
}

fn train_prior(a: TrainPriorArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = ToyConfig {
        seed: a.seed,
        ..Default::default()
    };
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    let views = NovelConfig {
        prior_size: cfg.image_size,
        ..Default::default()
    };
    let data = render_sprites(&SCENE_CLASSES, a.per_class, &views, 64, a.seed)?;
    let sched = NoiseSchedule::default();
    let trained = train_toy_denoiser(&data, &sched, &cfg)?;
    trained.denoiser.save(&trained.embeddings, &a.out)?;
    let tail = &trained.losses[trained.losses.len().saturating_sub(50)..];
    let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    writeln!(
        stdout,
        "train-prior: {} steps, recent loss {mean:.5}, wrote {}",
        cfg.steps,
        a.out.display()
    )?;
    Ok(())
}

fn check_bridge(stdout: &mut dyn Write) -> Result<()> {
    let client = BridgeClient::from_env()?;
    let results = check_endpoint(&client);
    for r in &results {
        writeln!(
            stdout,
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        )?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Error::Backend {
            backend: "remote".into(),
            detail: format!("{failed} of {} checks failed", results.len()),
        });
    }
    Ok(())
}
