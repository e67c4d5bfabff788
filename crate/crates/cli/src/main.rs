use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dicforge::dataset::{self, DatasetConfig, DatasetError, GenerationParams, Sample, Split};
use dicforge::eval::{self, EvalError, VARIANCE_CLAMP};
use dicforge::grid::DisplacementField;
use dicforge::io::{self, IoError};
use dicforge::net::{self, Checkpoint, CheckpointError, Mode, Model, NetError, TrainConfig, TrainSet, Trainer};

const EX_USAGE: u8 = 64;
const EX_DATAERR: u8 = 65;
const EX_IOERR: u8 = 74;

#[derive(Parser)]
#[command(name = "dicforge", version, about = "Synthetic DIC datasets, Bayes-DIC Net training and uncertainty-aware inference")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a speckle/displacement dataset.
    Generate(GenerateArgs),
    /// Train a network on a generated dataset.
    Train(TrainArgs),
    /// Predict the displacement between two images with Monte-Carlo dropout.
    Infer(InferArgs),
    /// Score a checkpoint or a directory of predictions against a dataset.
    Eval(EvalArgs),
    /// Print the header of a manifest, checkpoint, DFLD field or PNG image.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Total number of samples.
    #[arg(long, default_value_t = 12_500)]
    count: usize,
    /// Samples assigned to the training split (the rest are test).
    #[arg(long, default_value_t = 10_000)]
    train: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side length of the stored samples; the speckle frame is twice this.
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Replace an existing dataset in `--out`.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory holding manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// Total epochs; a resumed run stops once this many are done.
    #[arg(long, default_value_t = 1000)]
    epochs: u64,
    #[arg(long, default_value_t = 12)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Checkpoint path, written every `--every` epochs and at the end.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 10)]
    every: u64,
    /// Continue from the checkpoint at `--ckpt`, including optimizer state.
    #[arg(long)]
    resume: bool,
    /// Train on centered windows of this size instead of full samples.
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON-lines training log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Reference image (grayscale PNG).
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Deformed image (grayscale PNG).
    #[arg(long = "def")]
    deformed: PathBuf,
    /// Number of stochastic passes.
    #[arg(long, default_value_t = 8)]
    mc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory holding manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to evaluate.
    #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
    ckpt: Option<PathBuf>,
    /// Directory of `<index>.dfld` predictions, six-digit zero-padded.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long, value_parser = ["train", "test"], default_value = "test")]
    split: String,
    /// Monte-Carlo passes per pair (0 uses the deterministic network).
    #[arg(long, default_value_t = 8)]
    mc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    /// Evaluate on centered windows of this size.
    #[arg(long)]
    crop: Option<usize>,
    /// Only the first N pairs of the split.
    #[arg(long)]
    limit: Option<usize>,
    /// Render maps for this many pairs.
    #[arg(long, default_value_t = 4)]
    maps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EX_USAGE,
            Failure::Data(_) => EX_DATAERR,
            Failure::Io(_) => EX_IOERR,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Io(m) => m,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io(_) => Failure::Io(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(inner) => inner.into(),
            DatasetError::OutputExists(_) | DatasetError::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<NetError> for Failure {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Io(_) | NetError::Checkpoint(CheckpointError::Io(_)) => Failure::Io(e.to_string()),
            NetError::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(inner) => inner.into(),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn json_err(e: serde_json::Error) -> Failure {
    Failure::Data(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EX_USAGE),
            };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => evaluate(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("dicforge: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn generate(a: GenerateArgs) -> Result<(), Failure> {
    if a.size == 0 || a.size % 2 != 0 {
        return Err(Failure::Usage(format!("--size {} must be a positive even number", a.size)));
    }
    let mut params = GenerationParams::default();
    params.speckle.frame_size = 2 * a.size;
    params.field.domain = (a.size, a.size);
    let cfg = DatasetConfig {
        out_dir: a.out.clone(),
        count: a.count,
        train: a.train,
        base_seed: a.seed,
        params,
        workers: a.workers,
        overwrite: a.overwrite,
    };
    let m = dataset::generate_dataset(&cfg)?;
    println!(
        "wrote {} samples ({} train / {} test) to {}",
        m.sample_count,
        m.train_count,
        m.test_count,
        a.out.display()
    );
    Ok(())
}

fn load_split(dir: &Path, split: Split, crop: Option<usize>, limit: Option<usize>) -> Result<Vec<Sample>, Failure> {
    let manifest = dataset::load_manifest(dir)?;
    let mut out = Vec::new();
    for e in manifest.entries(split).take(limit.unwrap_or(usize::MAX)) {
        let s = dataset::load_entry(dir, e)?;
        out.push(match crop {
            Some(c) if c > s.reference.height() || c > s.reference.width() => {
                return Err(Failure::Usage(format!("--crop {c} exceeds sample size {:?}", s.reference.dims())))
            }
            Some(c) => s.center_window(c),
            None => s,
        });
    }
    if out.is_empty() {
        return Err(Failure::Data(format!("no {split:?} samples in {}", dir.display())));
    }
    Ok(out)
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let samples = load_split(&a.data, Split::Train, a.crop, None)?;
    let data = TrainSet::from_samples(&samples)?;
    let model = if a.resume {
        Model::load(&a.ckpt, net::NetworkConfig::default().dropout_p)?
    } else {
        Model::new(net::NetworkConfig::default(), a.seed)?
    };
    let config = TrainConfig {
        batch_size: a.batch,
        lr: a.lr,
        seed: a.seed,
    };
    let mut trainer = Trainer::new(model, config)?;
    let mut log_file = match &a.log {
        Some(p) => Some(BufWriter::new(fs::OpenOptions::new().create(true).append(true).open(p)?)),
        None => None,
    };
    let every = a.every.max(1);
    let ckpt = a.ckpt.clone();
    let stats = trainer.fit(
        &data,
        a.epochs,
        log_file.as_mut().map(|w| w as &mut dyn Write),
        |t, s| {
            eprintln!("epoch {} step {} loss {:.6} ({:.1}s)", s.epoch, s.step, s.loss, s.wall_time);
            if (s.epoch + 1) % every == 0 {
                t.model.save(&ckpt, true)?;
            }
            Ok(())
        },
    )?;
    trainer.model.save(&a.ckpt, true)?;
    if let Some(w) = log_file.as_mut() {
        w.flush()?;
    }
    println!("trained {} epochs to step {}; checkpoint {}", stats.len(), trainer.step(), a.ckpt.display());
    Ok(())
}

fn infer(a: InferArgs) -> Result<(), Failure> {
    if a.mc == 0 {
        return Err(Failure::Usage("--mc must be at least 1".into()));
    }
    let model = Model::<f32>::load(&a.ckpt, a.dropout)?;
    let reference = io::read_png16(&a.reference)?;
    let deformed = io::read_png16(&a.deformed)?;
    let out = net::mc_infer(&model, &reference, &deformed, a.mc, a.seed)?;
    fs::create_dir_all(&a.out)?;
    io::write_dfld(&a.out.join("mean.dfld"), &out.mean)?;
    io::write_dfld(&a.out.join("variance.dfld"), &out.variance)?;
    eval::variance_map(&out.variance.u, VARIANCE_CLAMP).write_png(&a.out.join("variance_u.png"))?;
    eval::variance_map(&out.variance.v, VARIANCE_CLAMP).write_png(&a.out.join("variance_v.png"))?;
    println!("wrote mean and variance ({} passes) to {}", out.samples, a.out.display());
    Ok(())
}

fn evaluate(a: EvalArgs) -> Result<(), Failure> {
    let split = if a.split == "train" { Split::Train } else { Split::Test };
    let samples = load_split(&a.data, split, a.crop, a.limit)?;
    fs::create_dir_all(&a.out)?;
    let model = match &a.ckpt {
        Some(p) => Some(Model::<f32>::load(p, a.dropout)?),
        None => None,
    };
    let mut preds = Vec::with_capacity(samples.len());
    let mut variances = Vec::new();
    for s in &samples {
        match (&model, &a.pred) {
            (Some(m), _) if a.mc > 0 => {
                let out = net::mc_infer(m, &s.reference, &s.deformed, a.mc, dicforge::seed::mix(a.seed, s.index))?;
                preds.push(out.mean);
                variances.push(out.variance);
            }
            (Some(m), _) => preds.push(m.predict(&s.reference, &s.deformed, Mode::Deterministic, 0)?),
            (None, Some(dir)) => {
                let f = io::read_dfld(&dir.join(format!("{:06}.dfld", s.index)))?;
                preds.push(match a.crop {
                    Some(c) if f.dims() != (c, c) => f.center_window(c),
                    _ => f,
                });
            }
            (None, None) => return Err(Failure::Usage("one of --ckpt or --pred is required".into())),
        }
    }
    let gts: Vec<DisplacementField> = samples.iter().map(|s| s.field.clone()).collect();
    let report = eval::avg_error(&preds, &gts)?;
    let json = serde_json::to_string_pretty(&report).map_err(json_err)?;
    fs::write(a.out.join("metrics.json"), json.clone() + "\n")?;
    for (k, (s, p)) in samples.iter().zip(&preds).enumerate().take(a.maps) {
        let (eu, ev) = eval::error_map(p, &s.field)?;
        eu.write_png(&a.out.join(format!("{:06}_error_u.png", s.index)))?;
        ev.write_png(&a.out.join(format!("{:06}_error_v.png", s.index)))?;
        if let Some(var) = variances.get(k) {
            eval::variance_map(&var.u, VARIANCE_CLAMP).write_png(&a.out.join(format!("{:06}_variance_u.png", s.index)))?;
            eval::variance_map(&var.v, VARIANCE_CLAMP).write_png(&a.out.join(format!("{:06}_variance_v.png", s.index)))?;
        }
    }
    println!("{json}");
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<(), Failure> {
    let path = if a.path.is_dir() {
        a.path.join(dataset::MANIFEST_FILE)
    } else {
        a.path.clone()
    };
    let bytes = fs::read(&path)?;
    if bytes.starts_with(io::DFLD_MAGIC) {
        let h = io::decode_dfld_header(&bytes)?;
        io::decode_dfld(&bytes)?;
        println!("DFLD version {}", h.version);
        println!("H {}", h.height);
        println!("W {}", h.width);
        println!("channels={}", h.channels);
    } else if bytes.starts_with(b"DICM") {
        let ckpt = Checkpoint::read(bytes.as_slice()).map_err(|e| Failure::Data(e.to_string()))?;
        let total: usize = ckpt.params.iter().map(|e| e.data.len()).sum();
        println!("DICM version {}", ckpt.version);
        println!("parameters {} ({} values)", ckpt.params.len(), total);
        if let Some(adam) = &ckpt.adam {
            println!("adam step {}", adam.step);
        }
        for e in &ckpt.params {
            println!("  {} {:?}", e.name, e.dims);
        }
    } else if bytes.starts_with(b"\x89PNG") {
        let img = io::decode_png_bytes(&bytes)?;
        let (h, w) = img.pixels.dims();
        println!("PNG {}-bit grayscale {h}x{w}", img.bit_depth);
        for (k, v) in &img.text {
            println!("  {k}: {v}");
        }
    } else {
        let m: dataset::DatasetManifest = serde_json::from_slice(&bytes).map_err(json_err)?;
        m.validate()?;
        println!("manifest version {}", m.version);
        println!("samples {} (train {}, test {})", m.sample_count, m.train_count, m.test_count);
        println!("base seed {}", m.base_seed);
        println!("sample size {}", m.params.sample_size());
        println!("convention: {}", m.convention);
    }
    Ok(())
}
