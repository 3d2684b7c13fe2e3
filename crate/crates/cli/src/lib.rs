//! Command-line surface: data generation, training, evaluation, mask
//! visualization and FLOP reports.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use aclip::attnmask::{
    build_view_plan, score_images, triptych, EmaResolution, MaskConfig, SelectionStrategy,
};
use aclip::dataio::{gen_synthetic, write_ppm, Corpus, SynthSpec};
use aclip::evalkit::{evaluate_checkpoint, flop_model, EvalOptions, FlopSpec};
use aclip::geometry::CropRect;
use aclip::losses::SslKind;
use aclip::trainer::{checkpoint_dir, LoadedModel, StrategyName, TrainConfig, Trainer, LAST_CHECKPOINT};
use aclip::AclipError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "aclip", version, about = "Attentive-mask contrastive image-text training")]
pub struct Cli {
    /// Seed; overrides the config file's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config for the command (see each command's help for its schema).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic image-caption corpus. Config: SynthSpec JSON.
    GenData(GenDataArgs),
    /// Train a model. Config: TrainConfig JSON; flags override its keys.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a metrics JSON. Config: EvalOptions JSON.
    Eval(EvalArgs),
    /// Write score-map and mask triptychs as PPM. Config: VisualizeConfig JSON.
    VisualizeMask(VisualizeArgs),
    /// Print the FLOP ledger of a training config. Config: TrainConfig JSON.
    Flops(FlopsArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Side length of the generated images.
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StrategyArg {
    Low,
    High,
    Mixed,
    Random,
}

impl From<StrategyArg> for StrategyName {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Low => StrategyName::Low,
            StrategyArg::High => StrategyName::High,
            StrategyArg::Mixed => StrategyName::Mixed,
            StrategyArg::Random => StrategyName::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SslArg {
    None,
    Simclr,
    Simsiam,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EmaArg {
    None,
    Full,
    Half,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for the log, config copy and checkpoints.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Start from a named profile (desk or full) instead of the defaults.
    #[arg(long)]
    pub profile: Option<String>,
    /// Continue from `<out>/checkpoints/last.ckpt`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub keep: Option<f64>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    pub ssl: Option<SslArg>,
    #[arg(long)]
    pub byol: Option<bool>,
    #[arg(long, value_enum)]
    pub ema_resolution: Option<EmaArg>,
    /// Stop (with a checkpoint) once this many steps are done; the schedule
    /// still spans the configured total.
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Print progress every this many steps (0 for silence).
    #[arg(long, default_value_t = 50)]
    pub progress: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint path, or `last` for `<run>/checkpoints/last.ckpt`.
    #[arg(long, default_value = "last")]
    pub checkpoint: String,
    #[arg(long, default_value = "run")]
    pub run: PathBuf,
    /// Evaluation corpus directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Use the EMA visual encoder.
    #[arg(long)]
    pub use_ema: bool,
    /// Metrics file; defaults to `<run>/metrics.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[arg(long, default_value = "last")]
    pub checkpoint: String,
    #[arg(long, default_value = "run")]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of images to render.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub keep: Option<f64>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub keep: Option<f64>,
    #[arg(long, value_enum)]
    pub ema: Option<EmaArg>,
}

/// Settings of `visualize-mask`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisualizeConfig {
    pub count: usize,
    pub keep: f64,
    pub strategy: StrategyName,
    /// Upscaling factor of each panel.
    pub scale: usize,
}

impl Default for VisualizeConfig {
    fn default() -> Self {
        Self {
            count: 8,
            keep: 0.5,
            strategy: StrategyName::Low,
            scale: 4,
        }
    }
}

/// Error carrying the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<AclipError> for Failure {
    fn from(e: AclipError) -> Self {
        let code = match e {
            AclipError::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: msg.into(),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AclipError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| AclipError::io(path, e).into())
}

fn resolve_checkpoint(arg: &str, run: &Path) -> PathBuf {
    if arg == "last" {
        checkpoint_dir(run).join(LAST_CHECKPOINT)
    } else {
        PathBuf::from(arg)
    }
}

fn gen_data(cli: &Cli, args: &GenDataArgs) -> Result<(), Failure> {
    let mut spec: SynthSpec = match &cli.config {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = args.image_size {
        spec.image_size = s;
    }
    let corpus = gen_synthetic(args.n, &spec, cli.seed.unwrap_or(0)).map_err(|e| config_error(e.to_string()))?;
    corpus.write(&args.out)?;
    eprintln!("wrote {} pairs to {}", corpus.len(), args.out.display());
    Ok(())
}

fn train_config(cli: &Cli, args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match (&cli.config, &args.profile) {
        (Some(p), _) => TrainConfig::load(p)?,
        (None, Some(name)) => TrainConfig::profile(name)?,
        (None, None) => TrainConfig::desk(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(v) = args.steps {
        cfg.total_steps = v;
        cfg.warmup_steps = cfg.warmup_steps.min(v);
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.views {
        cfg.views = v;
    }
    if let Some(v) = args.keep {
        cfg.keep_ratio = Some(v);
    }
    if let Some(v) = args.strategy {
        cfg.strategy = v.into();
    }
    if let Some(v) = args.ssl {
        cfg.ssl = match v {
            SslArg::None => SslKind::None,
            SslArg::Simclr => SslKind::Simclr,
            SslArg::Simsiam => SslKind::Simsiam,
        };
    }
    if let Some(v) = args.byol {
        cfg.byol = v;
    }
    match args.ema_resolution {
        Some(EmaArg::Full) => cfg.ema_resolution = EmaResolution::Full,
        Some(EmaArg::Half) => cfg.ema_resolution = EmaResolution::Half,
        Some(EmaArg::None) => return Err(config_error("--ema-resolution takes full or half")),
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<(), Failure> {
    let cfg = train_config(cli, args)?;
    let corpus = Arc::new(Corpus::load(&args.data)?);
    let mut trainer = if args.resume {
        let t = Trainer::resume(&checkpoint_dir(&args.out).join(LAST_CHECKPOINT), corpus)?;
        if t.cfg != cfg {
            eprintln!("note: resuming with the checkpoint's stored config");
        }
        t
    } else {
        Trainer::new(cfg, corpus)?
    };
    let every = args.progress;
    let total = trainer.cfg.total_steps;
    let stop = args.stop_after.unwrap_or(total).min(total);
    let logs = trainer.run_until(stop, Some(&args.out), |log| {
        if every > 0 && (log.step % every == 0 || log.step + 1 == total) {
            eprintln!(
                "step {:>5}/{total}  loss {:.4}  vl {:.4}  tau {:.4}  lr {:.2e}",
                log.step + 1,
                log.loss.total,
                log.loss.vl_mean,
                log.loss.tau,
                log.lr
            );
        }
    })?;
    eprintln!(
        "finished {} steps; checkpoint at {}",
        logs.len(),
        checkpoint_dir(&args.out).join(LAST_CHECKPOINT).display()
    );
    Ok(())
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<(), Failure> {
    let mut opts: EvalOptions = match &cli.config {
        Some(p) => read_json(p)?,
        None => EvalOptions::default(),
    };
    opts.use_ema |= args.use_ema;
    if let Some(s) = cli.seed {
        opts.seed = s;
    }
    let model = LoadedModel::load(&resolve_checkpoint(&args.checkpoint, &args.run))?;
    let corpus = Corpus::load(&args.data)?;
    let report = evaluate_checkpoint(&model, &corpus, &opts)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    let out = args.out.clone().unwrap_or_else(|| args.run.join("metrics.json"));
    write_text(&out, &format!("{json}\n"))?;
    println!("{json}");
    Ok(())
}

fn upscale(img: &aclip::dataio::Image, factor: usize) -> aclip::dataio::Image {
    if factor <= 1 {
        return img.clone();
    }
    let (h, w) = (img.height() * factor, img.width() * factor);
    let mut out = aclip::dataio::Image::filled(h, w, [0.0; 3]);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out.set(c, y, x, img.get(c, y / factor, x / factor));
            }
        }
    }
    out
}

fn visualize(cli: &Cli, args: &VisualizeArgs) -> Result<(), Failure> {
    let mut vc: VisualizeConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => VisualizeConfig::default(),
    };
    if let Some(v) = args.count {
        vc.count = v;
    }
    if let Some(v) = args.keep {
        vc.keep = v;
    }
    if let Some(v) = args.strategy {
        vc.strategy = v.into();
    }
    let model = LoadedModel::load(&resolve_checkpoint(&args.checkpoint, &args.run))?;
    let corpus = Corpus::load(&args.data)?;
    let vcfg = &model.dims.visual;
    let strategy = match vc.strategy {
        StrategyName::Low => SelectionStrategy::Low,
        StrategyName::High => SelectionStrategy::High,
        StrategyName::Mixed => SelectionStrategy::Mixed {
            random_fraction: model.cfg.mixed_random_fraction.min(vc.keep / 2.0),
        },
        StrategyName::Random => SelectionStrategy::Random,
    };
    let mask = MaskConfig {
        views: 1,
        keep_ratio: Some(vc.keep),
        strategy,
        granularity: model.cfg.mask_granularity,
        layers: model.cfg.score_layers,
        ema_resolution: EmaResolution::Full,
    };
    mask.validate(vcfg)?;
    let n = vc.count.min(corpus.len());
    let images: Vec<_> = corpus.images[..n].iter().collect();
    let scored = score_images(
        &model.shadow,
        vcfg,
        &images,
        &vec![CropRect::FULL; n],
        EmaResolution::Full,
        model.cfg.score_layers,
    )?;
    fs::create_dir_all(&args.out).map_err(|e| AclipError::io(&args.out, e))?;
    let seed = cli.seed.unwrap_or(model.cfg.seed);
    for (i, map) in scored.maps.iter().enumerate() {
        let plan = build_view_plan(Some(map), &[CropRect::FULL], &mask, vcfg, seed, 0, i)?;
        let img = corpus.images[i].crop_resize(&CropRect::FULL, vcfg.image_size, vcfg.image_size);
        let panel = triptych(&img, map, &plan.kept[0], vcfg.patch_size);
        write_ppm(&args.out.join(format!("mask_{i:04}.ppm")), &upscale(&panel, vc.scale))?;
    }
    eprintln!("wrote {n} triptychs to {}", args.out.display());
    Ok(())
}

fn flops(cli: &Cli, args: &FlopsArgs) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::desk(),
    };
    let mut spec = FlopSpec::from_config(&cfg)?;
    if let Some(v) = args.views {
        if v == 0 {
            return Err(config_error("--views must be >= 1"));
        }
        spec.views = v;
        if cfg.keep_ratio.is_none() && args.keep.is_none() {
            spec.keep = 1.0 / v as f64;
        }
    }
    if let Some(k) = args.keep {
        if !(k > 0.0 && k <= 1.0) {
            return Err(config_error(format!("--keep {k} outside (0, 1]")));
        }
        spec.keep = k;
    }
    match args.ema {
        Some(EmaArg::None) => spec.ema = None,
        Some(EmaArg::Full) => spec.ema = Some(EmaResolution::Full),
        Some(EmaArg::Half) => spec.ema = Some(EmaResolution::Half),
        None => {}
    }
    let ledger = flop_model(&spec);
    println!("{}", serde_json::to_string_pretty(&ledger).expect("ledger serializes"));
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::GenData(a) => gen_data(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::VisualizeMask(a) => visualize(cli, a),
        Command::Flops(a) => flops(cli, a),
    }
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
