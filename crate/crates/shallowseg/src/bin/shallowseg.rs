//! Command-line surface: dataset synthesis and statistics, color exchange,
//! training with run directories, inference, and evaluation reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use shallowseg::colorimetry::color_exchange;
use shallowseg::dataio::{
    load_dataset, load_rgb_png, save_dataset, save_mask_png, save_probability_png, save_rgb_png,
    synth_blobs, AugmentConfig, BlobSpec, DataError, Palette,
};
use shallowseg::metrics::{binarize, evaluate, size_histogram, EvalReport, MaskGT, Predictor};
use shallowseg::model::{
    load_checkpoint, save_checkpoint, Attention, CheckpointError, LossWeights, Network,
    NetworkConfig, TrainError, TrainSettings,
};
use shallowseg::pcs;
use shallowseg::Scalar;

// ---------------------------------------------------------------------------
// Argument surface

#[derive(Parser)]
#[command(name = "shallowseg", version, about = "Shallow-attention segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Swap color statistics between two images in LAB space.
    Exchange {
        /// First input PNG.
        img1: PathBuf,
        /// Second input PNG.
        img2: PathBuf,
        /// Output path for img1 recolored with img2's statistics.
        #[arg(long)]
        out1: PathBuf,
        /// Output path for img2 recolored with img1's statistics.
        #[arg(long)]
        out2: PathBuf,
    },
    /// Generate a synthetic blob dataset (images/ and masks/ under --out).
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = PaletteArg::Standard)]
        palette: PaletteArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the distribution of foreground area fractions in a dataset.
    Stats {
        /// Dataset root containing images/ and masks/.
        dataset: PathBuf,
        /// Optional CSV output path; defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train from a TOML config; writes config echo, loss log and checkpoint
    /// into the configured output directory.
    Train {
        /// Path to the run configuration file.
        config: PathBuf,
    },
    /// Run a checkpoint over a directory of PNGs, writing 16-bit probability
    /// maps and binary masks.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of input PNGs (flat) or a dataset root with images/.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Toggle::On)]
        pcs: Toggle,
        #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
        precision: PrecisionArg,
    },
    /// Score a checkpoint against a dataset; writes report.json, per-image
    /// scores and the dice-threshold curve.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root containing images/ and masks/.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Toggle::On)]
        pcs: Toggle,
        #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
        precision: PrecisionArg,
        /// Optional run config; the checkpoint must match its network
        /// settings exactly.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Identifier recorded in the report; defaults to the dataset path.
        #[arg(long)]
        dataset_id: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn is_on(self) -> bool {
        matches!(self, Toggle::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PaletteArg {
    Standard,
    ConfoundTrain,
    ConfoundTest,
}

impl From<PaletteArg> for Palette {
    fn from(p: PaletteArg) -> Palette {
        match p {
            PaletteArg::Standard => Palette::Standard,
            PaletteArg::ConfoundTrain => Palette::ConfoundTrain,
            PaletteArg::ConfoundTest => Palette::ConfoundTest,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

// ---------------------------------------------------------------------------
// Errors and exit codes

enum CliError {
    /// Invalid configuration; every detected problem is listed.
    Config(Vec<String>),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError::Config(vec![msg.into()])
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    fn report(&self) {
        match self {
            CliError::Config(problems) => {
                eprintln!("configuration error ({} problem(s)):", problems.len());
                for p in problems {
                    eprintln!("  - {p}");
                }
            }
            CliError::Data(msg) => eprintln!("data error: {msg}"),
            CliError::Numerical(msg) => eprintln!("numerical failure: {msg}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(_) => CliError::Data(e.to_string()),
            _ => CliError::config(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            TrainError::EmptyDataset => CliError::Data(e.to_string()),
        }
    }
}

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::Data(format!("{context}: {e}"))
}

// ---------------------------------------------------------------------------
// Run configuration

/// Flat, typed run configuration. Unknown keys are rejected; every default is
/// echoed back into the run directory for provenance.
#[derive(Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    /// Mandatory; there is no wall-clock fallback.
    seed: Option<u64>,
    precision: String,
    dataset: String,
    output_dir: String,
    input_size: usize,
    channels: [usize; 3],
    head_channels: usize,
    attention: String,
    use_sam: bool,
    lr: f64,
    momentum: f64,
    batch_size: usize,
    steps: usize,
    lambda_bce: f64,
    lambda_dice: f64,
    pcs: bool,
    flip_p: f64,
    rotate_p: f64,
    angles: Vec<u32>,
    scales: Vec<f64>,
    color_exchange: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let train = TrainSettings::default();
        let aug = AugmentConfig::default();
        Self {
            seed: None,
            precision: "f32".to_string(),
            dataset: String::new(),
            output_dir: String::new(),
            input_size: net.input_size,
            channels: net.channels,
            head_channels: net.head_channels,
            attention: "relu".to_string(),
            use_sam: net.use_sam,
            lr: train.lr,
            momentum: train.momentum,
            batch_size: train.batch_size,
            steps: train.steps,
            lambda_bce: 1.0,
            lambda_dice: 1.0,
            pcs: true,
            flip_p: aug.flip_p,
            rotate_p: aug.rotate_p,
            angles: aug.angles,
            scales: aug.scales,
            color_exchange: aug.color_exchange,
        }
    }
}

impl RunConfig {
    fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Collect every problem before failing, so a broken config is fixed in
    /// one pass.
    fn validate(&self, need_dataset: bool) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if self.seed.is_none() {
            problems.push("seed is required (reproducibility: no wall-clock default)".to_string());
        }
        if !matches!(self.precision.as_str(), "f32" | "f64") {
            problems.push(format!("precision must be \"f32\" or \"f64\", got {:?}", self.precision));
        }
        if !matches!(self.attention.as_str(), "relu" | "sigmoid") {
            problems
                .push(format!("attention must be \"relu\" or \"sigmoid\", got {:?}", self.attention));
        }
        if need_dataset {
            if self.dataset.is_empty() {
                problems.push("dataset path is required".to_string());
            } else if !Path::new(&self.dataset).is_dir() {
                problems.push(format!("dataset directory {:?} does not exist", self.dataset));
            }
            if self.output_dir.is_empty() {
                problems.push("output_dir is required".to_string());
            }
        }
        if let Err(e) = self.network_config().validate() {
            problems.push(e);
        }
        if let Err(e) = self.train_settings().validate() {
            problems.push(e);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems))
        }
    }

    fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            input_size: self.input_size,
            channels: self.channels,
            head_channels: self.head_channels,
            attention: if self.attention == "sigmoid" { Attention::Sigmoid } else { Attention::Relu },
            use_sam: self.use_sam,
            seed: self.seed.unwrap_or(0),
        }
    }

    fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            steps: self.steps,
            seed: self.seed.unwrap_or(0),
            loss: LossWeights { lambda_bce: self.lambda_bce, lambda_dice: self.lambda_dice },
            augment: AugmentConfig {
                flip_p: self.flip_p,
                rotate_p: self.rotate_p,
                angles: self.angles.clone(),
                scales: self.scales.clone(),
                color_exchange: self.color_exchange,
                seed: self.seed.unwrap_or(0),
            },
        }
    }
}

/// Architecture fields that must agree between a checkpoint and a config for
/// evaluation to be meaningful; the initialization seed is exempt.
fn arch_mismatches(ckpt: &NetworkConfig, cfg: &NetworkConfig) -> Vec<String> {
    let mut out = Vec::new();
    if ckpt.input_size != cfg.input_size {
        out.push(format!("input_size: checkpoint {} vs config {}", ckpt.input_size, cfg.input_size));
    }
    if ckpt.channels != cfg.channels {
        out.push(format!("channels: checkpoint {:?} vs config {:?}", ckpt.channels, cfg.channels));
    }
    if ckpt.head_channels != cfg.head_channels {
        out.push(format!(
            "head_channels: checkpoint {} vs config {}",
            ckpt.head_channels, cfg.head_channels
        ));
    }
    if ckpt.attention != cfg.attention {
        out.push(format!("attention: checkpoint {:?} vs config {:?}", ckpt.attention, cfg.attention));
    }
    if ckpt.use_sam != cfg.use_sam {
        out.push(format!("use_sam: checkpoint {} vs config {}", ckpt.use_sam, cfg.use_sam));
    }
    out
}

// ---------------------------------------------------------------------------
// Subcommand bodies

fn cmd_exchange(img1: &Path, img2: &Path, out1: &Path, out2: &Path) -> Result<(), CliError> {
    let a = load_rgb_png(img1)?;
    let b = load_rgb_png(img2)?;
    let (a2, b2) = color_exchange(&a, &b);
    save_rgb_png(&a2, out1)?;
    save_rgb_png(&b2, out2)?;
    println!("wrote {} and {}", out1.display(), out2.display());
    Ok(())
}

fn cmd_synth(
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
    palette: Palette,
    out: &Path,
) -> Result<(), CliError> {
    let spec = BlobSpec { palette, ..BlobSpec::new(count, height, width, seed) };
    let samples = synth_blobs(&spec);
    save_dataset(&samples, out)?;
    println!("wrote {count} samples under {}", out.display());
    Ok(())
}

fn cmd_stats(dataset: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let loaded = load_dataset(dataset, false)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    if loaded.samples.is_empty() {
        return Err(CliError::Data(format!("no usable samples under {}", dataset.display())));
    }
    let hist = size_histogram(loaded.samples.iter().map(|s| &s.mask));
    let mut csv = String::from("bin_low,bin_high,fraction\n");
    for (i, v) in hist.iter().enumerate() {
        writeln!(csv, "{:.1},{:.1},{v}", i as f64 / 10.0, (i + 1) as f64 / 10.0).unwrap();
    }
    match out {
        Some(path) => {
            std::fs::write(path, &csv).map_err(|e| io_err("writing stats", e))?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_train(config_path: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    cfg.validate(true)?;
    match cfg.precision.as_str() {
        "f64" => run_train::<f64>(&cfg),
        _ => run_train::<f32>(&cfg),
    }
}

fn run_train<F: Scalar>(cfg: &RunConfig) -> Result<(), CliError> {
    let run_dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&run_dir).map_err(|e| io_err("creating run directory", e))?;
    // Echo the fully resolved configuration (defaults included) for provenance.
    let echo = toml::to_string_pretty(cfg).expect("config serializes");
    std::fs::write(run_dir.join("config.toml"), echo)
        .map_err(|e| io_err("writing config echo", e))?;

    let loaded = load_dataset(Path::new(&cfg.dataset), false)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let mut net = Network::<F>::new(cfg.network_config());
    let settings = cfg.train_settings();
    let mut loss_log = String::from("step,loss\n");
    let steps = settings.steps;
    let result = shallowseg::model::train(&mut net, &loaded.samples, &settings, |step, loss| {
        writeln!(loss_log, "{step},{loss}").unwrap();
        if step % 50 == 0 || step + 1 == steps {
            println!("step {step:>5}  loss {loss:.5}");
        }
    });
    // The loss log is written even when training aborts, for diagnosis.
    std::fs::write(run_dir.join("loss.csv"), &loss_log)
        .map_err(|e| io_err("writing loss log", e))?;
    result?;
    let ckpt_path = run_dir.join("checkpoint.ckpt");
    save_checkpoint(&net, &ckpt_path)?;
    println!("wrote {}", ckpt_path.display());
    Ok(())
}

fn cmd_infer(
    checkpoint: &Path,
    images: &Path,
    out: &Path,
    pcs_on: bool,
    precision: PrecisionArg,
) -> Result<(), CliError> {
    match precision {
        PrecisionArg::F64 => run_infer::<f64>(checkpoint, images, out, pcs_on),
        PrecisionArg::F32 => run_infer::<f32>(checkpoint, images, out, pcs_on),
    }
}

fn run_infer<F: Scalar>(
    checkpoint: &Path,
    images: &Path,
    out: &Path,
    pcs_on: bool,
) -> Result<(), CliError> {
    let net = load_checkpoint::<F>(checkpoint)?;
    let image_dir = if images.join("images").is_dir() { images.join("images") } else {
        images.to_path_buf()
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&image_dir)
        .map_err(|e| io_err("reading image directory", e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no PNG images under {}", image_dir.display())));
    }
    std::fs::create_dir_all(out).map_err(|e| io_err("creating output directory", e))?;
    for path in &paths {
        let img = load_rgb_png(path)?;
        let logits = net
            .predict_logits(&img)
            .map_err(|e| CliError::Numerical(format!("{}: {e}", path.display())))?;
        let logits = if pcs_on { pcs::correct(&logits) } else { logits };
        let prob = pcs::to_probability(&logits);
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        save_probability_png(&prob, logits.height, logits.width, &out.join(format!("{stem}_prob.png")))?;
        let mask = MaskGT::new(logits.height, logits.width, binarize(&prob, 0.5));
        save_mask_png(&mask, &out.join(format!("{stem}_mask.png")))?;
    }
    println!("wrote {} prediction pairs under {}", paths.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: &Path,
    dataset: &Path,
    out: &Path,
    pcs_on: bool,
    precision: PrecisionArg,
    config: Option<&Path>,
    dataset_id: Option<&str>,
) -> Result<(), CliError> {
    let id = dataset_id.map(str::to_string).unwrap_or_else(|| dataset.display().to_string());
    match precision {
        PrecisionArg::F64 => run_eval::<f64>(checkpoint, dataset, out, pcs_on, config, &id),
        PrecisionArg::F32 => run_eval::<f32>(checkpoint, dataset, out, pcs_on, config, &id),
    }
}

fn run_eval<F: Scalar>(
    checkpoint: &Path,
    dataset: &Path,
    out: &Path,
    pcs_on: bool,
    config: Option<&Path>,
    dataset_id: &str,
) -> Result<(), CliError> {
    let net = load_checkpoint::<F>(checkpoint)?;
    if let Some(cfg_path) = config {
        let cfg = RunConfig::load(cfg_path)?;
        cfg.validate(false)?;
        let mismatches = arch_mismatches(&net.config, &cfg.network_config());
        if !mismatches.is_empty() {
            return Err(CliError::Config(
                mismatches
                    .into_iter()
                    .map(|m| format!("checkpoint does not match config: {m}"))
                    .collect(),
            ));
        }
    }
    let loaded = load_dataset(dataset, false)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    if loaded.samples.is_empty() {
        return Err(CliError::Data(format!("no usable samples under {}", dataset.display())));
    }
    let report = evaluate(&loaded.samples, &net, pcs_on, dataset_id);
    write_report(&report, out)?;
    println!(
        "mDice {:.4}  mIoU {:.4} over {} images ({} skipped); report under {}",
        report.m_dice,
        report.m_iou,
        report.per_image.len(),
        report.errors.len(),
        out.display()
    );
    Ok(())
}

fn write_report(report: &EvalReport, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| io_err("creating output directory", e))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(out.join("report.json"), json).map_err(|e| io_err("writing report", e))?;
    let mut per_image = String::from("id,dice,iou,soft_dice\n");
    for s in &report.per_image {
        writeln!(per_image, "{},{},{},{}", s.id, s.dice, s.iou, s.soft_dice).unwrap();
    }
    std::fs::write(out.join("per_image.csv"), per_image)
        .map_err(|e| io_err("writing per-image scores", e))?;
    let mut curve = String::from("threshold,mean_dice\n");
    for &(t, d) in &report.curve {
        writeln!(curve, "{t},{d}").unwrap();
    }
    std::fs::write(out.join("curve.csv"), curve).map_err(|e| io_err("writing dice curve", e))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Exchange { img1, img2, out1, out2 } => cmd_exchange(&img1, &img2, &out1, &out2),
        Command::Synth { count, height, width, seed, palette, out } => {
            cmd_synth(count, height, width, seed, palette.into(), &out)
        }
        Command::Stats { dataset, out } => cmd_stats(&dataset, out.as_deref()),
        Command::Train { config } => cmd_train(&config),
        Command::Infer { checkpoint, images, out, pcs, precision } => {
            cmd_infer(&checkpoint, &images, &out, pcs.is_on(), precision)
        }
        Command::Eval { checkpoint, dataset, out, pcs, precision, config, dataset_id } => cmd_eval(
            &checkpoint,
            &dataset,
            &out,
            pcs.is_on(),
            precision,
            config.as_deref(),
            dataset_id.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            ExitCode::from(e.exit_code())
        }
    }
}
