//! Command-line front end.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};

pub use config::{keys_help, load_config, parse_config, RunConfig};

use crate::data::{
    degrade, list_images, load_dataset, load_image, modcrop, save_image, Degradation, DegradationSpec, ImageBuffer,
};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::model::{checkpoint, count_mult_adds, init_params, param_count, SwinIR, SwinIRConfig, Task, Upsampler};
use crate::rng::SeededRng;
use crate::trainer::{
    gradcheck, GradcheckOptions, TrainData, TrainState, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_LOG,
    STATE_FILE,
};

#[derive(Parser, Debug)]
#[command(
    name = "swinir",
    version,
    about = "Windowed-attention image restoration: degrade, train, infer, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize low-quality images from high-quality ones.
    Degrade(DegradeArgs),
    /// Train a model from a config file.
    #[command(after_help = keys_help())]
    Train(TrainArgs),
    /// Restore images with a trained checkpoint.
    Infer(InferArgs),
    /// Score images (optionally restored first) against references.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients in 64-bit mode.
    Gradcheck(GradcheckArgs),
    /// List the parameters of a checkpoint or config.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct DegradeArgs {
    #[arg(long)]
    task: Task,
    /// Downscaling factor (sr).
    #[arg(long, allow_negative_numbers = true)]
    scale: Option<i64>,
    /// Noise standard deviation in 0-255 units (denoise).
    #[arg(long, allow_negative_numbers = true)]
    sigma: Option<f64>,
    /// Quality factor 1-100 (car).
    #[arg(long, allow_negative_numbers = true)]
    quality: Option<i64>,
    /// Noise seed; a random one is chosen and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Input image or directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output image or directory.
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Training images: a directory or a manifest file.
    #[arg(long)]
    data: PathBuf,
    /// Validation images: a directory or a manifest file.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Directory for checkpoints, optimizer state and the metrics log.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config `iterations`.
    #[arg(long)]
    iterations: Option<usize>,
    /// Continue from the state saved in `--out`.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Input image or directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output image or directory.
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Restore the LQ images with this checkpoint before scoring.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    lq_dir: PathBuf,
    #[arg(long)]
    hq_dir: PathBuf,
    /// Pixels ignored at each edge (default: the model scale for sr, else 0).
    #[arg(long)]
    border: Option<usize>,
    /// Score RGB images on their luma channel.
    #[arg(long)]
    y_only: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Model keys are read from this file; without it a tiny x2 model is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Seed for parameters and probe data; random and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// LQ side of the probe input.
    #[arg(long, default_value_t = 6)]
    input_size: usize,
    /// Probe at most this many scalars per tensor.
    #[arg(long)]
    probes: Option<usize>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["ckpt", "config"])))]
struct InspectArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also print mult-adds for an output of this size, e.g. 1280x720.
    #[arg(long, value_name = "WxH")]
    mult_adds: Option<String>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_from<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Entry point of the `swinir` binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_from(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Degrade(a) => cmd_degrade(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Infer(a) => cmd_infer(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
    }
}

fn emit(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| Error::io("<stdout>", e))
}

fn pick_seed(seed: Option<u64>, out: &mut dyn Write) -> Result<u64> {
    match seed {
        Some(s) => Ok(s),
        None => {
            let s = rand::random::<u64>();
            emit(out, format!("seed {s} (chosen)"))?;
            Ok(s)
        }
    }
}

/// `(input, output)` pairs: a single file, or every image of a directory
/// mapped into an output directory under the same name.
fn io_pairs(input: &Path, output: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    if input.is_dir() {
        std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
        Ok(list_images(input)?
            .into_iter()
            .map(|p| {
                let o = output.join(p.file_name().unwrap_or_default());
                (p, o)
            })
            .collect())
    } else {
        Ok(vec![(input.to_path_buf(), output.to_path_buf())])
    }
}

fn degradation_from_flags(a: &DegradeArgs) -> Result<Degradation> {
    let positive = |name: &str, v: Option<i64>| -> Result<i64> {
        let v = v.ok_or_else(|| Error::invalid(format!("--{name} is required for task {}", a.task)))?;
        if v <= 0 {
            return Err(Error::invalid(format!("--{name} must be positive, got {v}")));
        }
        Ok(v)
    };
    let kind = match a.task {
        Task::Sr => Degradation::Bicubic {
            scale: positive("scale", a.scale)? as usize,
        },
        Task::Denoise => {
            let sigma = a
                .sigma
                .ok_or_else(|| Error::invalid("--sigma is required for task denoise"))?;
            Degradation::GaussianNoise { sigma, clip: true }
        }
        Task::Car => Degradation::DctQuantize {
            quality: u32::try_from(positive("quality", a.quality)?)
                .map_err(|_| Error::invalid("--quality out of range"))?,
        },
    };
    DegradationSpec { kind, seed: 0 }.validate()?;
    Ok(kind)
}

fn cmd_degrade(a: DegradeArgs, out: &mut dyn Write) -> Result<i32> {
    let kind = degradation_from_flags(&a)?;
    let seed = pick_seed(a.seed, out)?;
    let pairs = io_pairs(&a.input, &a.output)?;
    let many = pairs.len() > 1 || a.input.is_dir();
    for (i, (src, dst)) in pairs.iter().enumerate() {
        let img = load_image(src)?;
        let item_seed = if many {
            SeededRng::derived(seed, &[i as u64]).next_u64()
        } else {
            seed
        };
        let spec = DegradationSpec { kind, seed: item_seed };
        let lq = degrade(&img, &spec)?;
        save_image(&lq, dst)?;
        emit(
            out,
            format!(
                "{} -> {} ({}x{}) {spec}",
                src.display(),
                dst.display(),
                lq.width(),
                lq.height()
            ),
        )?;
    }
    Ok(0)
}

fn images_of(path: &Path) -> Result<Vec<ImageBuffer>> {
    Ok(load_dataset(path)?.into_iter().map(|(_, img)| img).collect())
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let mut rc = load_config(&a.config)?;
    let seed = pick_seed(a.seed.or(rc.seed), out)?;
    rc.train.seed = seed;
    if let Some(n) = a.iterations {
        rc.train.iterations = n;
    }
    let data = TrainData {
        train: images_of(&a.data)?,
        val: match &a.val {
            Some(p) => images_of(p)?,
            None => Vec::new(),
        },
        degradation: rc.degradation,
    };
    let mut trainer = if a.resume {
        let (cfg, params) = checkpoint::load(a.out.join(LAST_CHECKPOINT))?;
        if cfg != rc.model {
            return Err(Error::Config(
                "model keys differ from the checkpoint being resumed".into(),
            ));
        }
        let state = TrainState::load(a.out.join(STATE_FILE))?;
        if state.seed != seed {
            return Err(Error::Config(format!(
                "seed {seed} differs from the resumed run's seed {}",
                state.seed
            )));
        }
        Trainer::resume(rc.model.clone(), rc.train.clone(), data, params, state)?
    } else {
        Trainer::new(rc.model.clone(), rc.train.clone(), data)?
    };
    trainer = trainer.with_output_dir(&a.out)?;
    emit(
        out,
        format!(
            "model {} params, task {} x{}, {} iterations from step {}",
            trainer.params().num_scalars(),
            rc.model.task,
            rc.model.scale,
            rc.train.iterations,
            trainer.step_count()
        ),
    )?;
    if a.val.is_some() {
        emit(out, format!("baseline psnr {:.4}", trainer.baseline_psnr()?))?;
    }
    let report = trainer.run()?;
    for r in &report.records {
        emit(out, r.log_line())?;
    }
    if report.best_psnr.is_finite() {
        emit(out, format!("best psnr {:.4}", report.best_psnr))?;
    }
    let mut written = vec![LAST_CHECKPOINT, STATE_FILE];
    if a.out.join(BEST_CHECKPOINT).exists() {
        written.push(BEST_CHECKPOINT);
    }
    if a.out.join(METRICS_LOG).exists() {
        written.push(METRICS_LOG);
    }
    emit(out, format!("wrote {} in {}", written.join(", "), a.out.display()))?;
    Ok(0)
}

fn load_model(path: &Path) -> Result<SwinIR<f32>> {
    let (cfg, params) = checkpoint::load(path)?;
    SwinIR::from_parts(cfg, params)
}

fn restore(model: &SwinIR<f32>, img: &ImageBuffer) -> Result<ImageBuffer> {
    ImageBuffer::from_tensor(&model.infer(&img.to_tensor())?)
}

fn cmd_infer(a: InferArgs, out: &mut dyn Write) -> Result<i32> {
    let model = load_model(&a.ckpt)?;
    for (src, dst) in io_pairs(&a.input, &a.output)? {
        let restored = restore(&model, &load_image(&src)?)?;
        save_image(&restored, &dst)?;
        emit(
            out,
            format!(
                "{} -> {} ({}x{})",
                src.display(),
                dst.display(),
                restored.width(),
                restored.height()
            ),
        )?;
    }
    Ok(0)
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let model = a.ckpt.as_deref().map(load_model).transpose()?;
    let scale = model.as_ref().map_or(1, |m| m.config().scale);
    let border = a.border.unwrap_or(if scale > 1 { scale } else { 0 });
    let mut rows = Vec::new();
    for hq_path in list_images(&a.hq_dir)? {
        let name = hq_path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let lq_path = a.lq_dir.join(&name);
        if !lq_path.is_file() {
            return Err(Error::io(
                &lq_path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no LQ image with this name"),
            ));
        }
        let lq = load_image(&lq_path)?;
        let hq = load_image(&hq_path)?;
        let (pred, target) = match &model {
            Some(m) => (restore(m, &lq)?, modcrop(&hq, scale)?),
            None => (lq, hq),
        };
        rows.push((name, evaluate(&pred, &target, border, a.y_only)?));
    }
    let n = rows.len() as f64;
    let mean_psnr = rows.iter().map(|(_, s)| s.psnr).sum::<f64>() / n;
    let mean_ssim = rows.iter().map(|(_, s)| s.ssim).sum::<f64>() / n;
    let width = rows.iter().map(|(name, _)| name.len()).max().unwrap_or(0).max(5);
    emit(out, format!("{:<width$}  {:>10}  {:>8}", "image", "psnr", "ssim"))?;
    for (name, s) in &rows {
        emit(
            out,
            format!("{:<width$}  {:>10}  {:>8.4}", name, fmt_psnr(s.psnr), s.ssim),
        )?;
    }
    emit(
        out,
        format!("{:<width$}  {:>10}  {:>8.4}", "mean", fmt_psnr(mean_psnr), mean_ssim),
    )?;
    Ok(0)
}

/// Model checked when `gradcheck` gets no config file.
pub fn tiny_gradcheck_config() -> SwinIRConfig {
    SwinIRConfig {
        num_blocks: 1,
        layers_per_block: 1,
        window: 4,
        channels: 8,
        heads: 2,
        mlp_ratio: 2,
        task: Task::Sr,
        scale: 2,
        in_channels: 1,
        out_channels: 1,
        upsampler: Upsampler::PixelShuffle,
        num_feat: 8,
        block_residual: true,
    }
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = match &a.config {
        Some(p) => load_config(p)?.model,
        None => tiny_gradcheck_config(),
    };
    if a.tolerance.is_nan() || a.tolerance < 0.0 {
        return Err(Error::invalid(format!("--tolerance must be >= 0, got {}", a.tolerance)));
    }
    let opts = GradcheckOptions {
        tolerance: a.tolerance,
        seed: pick_seed(a.seed, out)?,
        input_size: a.input_size,
        max_probes: a.probes,
        ..Default::default()
    };
    emit(out, format!("model {} params", param_count(&cfg)?))?;
    let report = gradcheck(&cfg, &opts)?;
    emit(out, report.to_string())?;
    Ok(if report.passed() { 0 } else { 4 })
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::invalid(format!("--mult-adds expects WxH, got '{s}'"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((
        w.trim().parse().map_err(|_| bad())?,
        h.trim().parse().map_err(|_| bad())?,
    ))
}

fn describe(cfg: &SwinIRConfig) -> String {
    format!(
        "task {} scale {} blocks {} layers {} window {} channels {} heads {} mlp_ratio {} in {} out {} upsampler {} num_feat {} block_residual {}",
        cfg.task,
        cfg.scale,
        cfg.num_blocks,
        cfg.layers_per_block,
        cfg.window,
        cfg.channels,
        cfg.heads,
        cfg.mlp_ratio,
        cfg.in_channels,
        cfg.out_channels,
        cfg.upsampler,
        cfg.num_feat,
        cfg.block_residual
    )
}

fn cmd_inspect(a: InspectArgs, out: &mut dyn Write) -> Result<i32> {
    let (cfg, params) = match (&a.ckpt, &a.config) {
        (Some(p), _) => checkpoint::load(p)?,
        (None, Some(p)) => {
            let cfg = load_config(p)?.model;
            let params = init_params::<f32>(&cfg, 0)?;
            (cfg, params)
        }
        (None, None) => return Err(Error::invalid("one of --ckpt or --config is required")),
    };
    emit(out, describe(&cfg))?;
    let shapes: Vec<(String, String, usize)> = params
        .iter()
        .map(|(n, t)| {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            (n.to_string(), format!("[{}]", dims.join(", ")), t.numel())
        })
        .collect();
    let nw = shapes.iter().map(|s| s.0.len()).max().unwrap_or(4).max(4);
    let sw = shapes.iter().map(|s| s.1.len()).max().unwrap_or(5).max(5);
    emit(out, format!("{:<nw$}  {:<sw$}  {:>10}", "name", "shape", "count"))?;
    for (n, s, c) in &shapes {
        emit(out, format!("{n:<nw$}  {s:<sw$}  {c:>10}"))?;
    }
    emit(out, format!("total {}", params.num_scalars()))?;
    if let Some(size) = &a.mult_adds {
        let (w, h) = parse_size(size)?;
        emit(out, format!("mult-adds at {w}x{h}: {}", count_mult_adds(&cfg, h, w)?))?;
    }
    Ok(0)
}
