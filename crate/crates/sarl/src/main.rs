use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sarl::config::TrainConfig;
use sarl::kv::KeyValues;
use sarl::manifest::Manifest;
use sarl::{checkpoint, dataset, pgm, predictions, trainer};
use sarl_core::gradcheck;
use sarl_core::metrics::{DEFAULT_THRESHOLD, DEFAULT_TOP_K};
use sarl_core::synthetic::{self, PayloadKind, SyntheticConfig};

#[derive(Parser)]
#[command(name = "sarl", version, about = "Multi-label head with transport-aligned attention")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded synthetic dataset (train.bin, test.bin, manifest.txt).
    GenData(GenData),
    /// Train a model and evaluate it on the test split.
    Train(Box<Train>),
    /// Evaluate a checkpoint and write a prediction file.
    Eval(Eval),
    /// Write class attention maps of one sample as PGM images.
    ExportAttention(Export),
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    n_train: usize,
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long)]
    strength: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 1.5)]
    cardinality: f64,
    /// Emit precomputed patch features instead of images.
    #[arg(long)]
    features: bool,
}

/// Training flags. Each one overrides the config file key of the same name.
#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lambda1: Option<String>,
    #[arg(long)]
    lambda2: Option<String>,
    #[arg(long)]
    gamma_pos: Option<String>,
    #[arg(long)]
    gamma_neg: Option<String>,
    #[arg(long)]
    clip: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    /// avg or max
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    n_heads: Option<String>,
    #[arg(long)]
    d_v: Option<String>,
    #[arg(long)]
    d_t: Option<String>,
    #[arg(long)]
    d_1: Option<String>,
    #[arg(long)]
    d_2: Option<String>,
    #[arg(long)]
    ema_decay: Option<String>,
    #[arg(long)]
    no_ema: bool,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    disable_self_attn: bool,
    #[arg(long)]
    disable_ot: bool,
    #[arg(long)]
    disable_gsp_fusion: bool,
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    top_k: Option<String>,
}

impl TrainFlags {
    fn overrides(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let opts = [
            ("preset", &self.preset),
            ("lr", &self.lr),
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("lambda1", &self.lambda1),
            ("lambda2", &self.lambda2),
            ("gamma_pos", &self.gamma_pos),
            ("gamma_neg", &self.gamma_neg),
            ("clip", &self.clip),
            ("weight_decay", &self.weight_decay),
            ("pooling", &self.pooling),
            ("n_heads", &self.n_heads),
            ("d_v", &self.d_v),
            ("d_t", &self.d_t),
            ("d_1", &self.d_1),
            ("d_2", &self.d_2),
            ("ema_decay", &self.ema_decay),
            ("seed", &self.seed),
            ("threshold", &self.threshold),
            ("top_k", &self.top_k),
        ];
        for (k, v) in opts {
            if let Some(v) = v {
                kv.set(k, v);
            }
        }
        let flags = [
            ("ema", self.no_ema, "false"),
            ("disable_self_attn", self.disable_self_attn, "true"),
            ("disable_ot", self.disable_ot, "true"),
            ("disable_gsp_fusion", self.disable_gsp_fusion, "true"),
        ];
        for (k, on, v) in flags {
            if on {
                kv.set(k, v);
            }
        }
        kv
    }
}

#[derive(Args)]
struct Train {
    /// Directory written by gen-data (train.bin, test.bin).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for run.log, checkpoint.bin, predictions.txt, report.txt.
    #[arg(long)]
    out: PathBuf,
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// Prediction file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
}

#[derive(Args)]
struct Export {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    sample: usize,
    #[arg(long)]
    class: usize,
    /// Output prefix; writes <prefix>_map.pgm and, with transport, <prefix>_attention.pgm.
    #[arg(long)]
    out: PathBuf,
}

fn gen_data(a: &GenData) -> Result<()> {
    let defaults = SyntheticConfig::default();
    let cfg = SyntheticConfig {
        seed: a.seed,
        n_train: a.n_train,
        n_test: a.n_test,
        num_classes: a.classes,
        height: a.height,
        width: a.width,
        channels: a.channels,
        kind: if a.features { PayloadKind::Features } else { PayloadKind::Image },
        strength: a.strength.unwrap_or(defaults.strength),
        noise: a.noise.unwrap_or(defaults.noise),
        cardinality: a.cardinality,
    };
    let (train, test) = synthetic::generate(&cfg)?;
    fs::create_dir_all(&a.out)?;
    dataset::save(&train, &a.out.join("train.bin"))?;
    dataset::save(&test, &a.out.join("test.bin"))?;
    let manifest = Manifest {
        name: format!("synthetic-seed{}", a.seed),
        num_classes: cfg.num_classes,
        splits: vec![
            Manifest::split_from_stats("train", Some("train.bin"), &train.stats()?),
            Manifest::split_from_stats("test", Some("test.bin"), &test.stats()?),
        ],
        cardinality: None,
    };
    manifest.save(&a.out.join("manifest.txt"))?;
    print!("{}", manifest.stats()?.table());
    Ok(())
}

fn train_cmd(a: &Train) -> Result<()> {
    let overrides = a.flags.overrides();
    let cfg = match &a.config {
        Some(p) => TrainConfig::load(p, &overrides),
        None => TrainConfig::from_sources(None, &overrides),
    }
    .context("building the training config")?;
    let train = dataset::load(&a.data.join("train.bin")).context("loading train.bin")?;
    let test_path = a.data.join("test.bin");
    let test = if test_path.exists() { Some(dataset::load(&test_path).context("loading test.bin")?) } else { None };
    fs::create_dir_all(&a.out)?;
    let mut log = Tee { file: File::create(a.out.join("run.log"))?, echo: io::stdout() };
    let result = trainer::train(&cfg, &train, test.as_ref(), &mut log)?;
    checkpoint::save(&result.model, &cfg.to_kv(), &a.out.join("checkpoint.bin"))?;
    if let (Some(p), Some(r)) = (&result.predictions, &result.report) {
        predictions::save(p, &a.out.join("predictions.txt"))?;
        fs::write(a.out.join("report.txt"), r.table())?;
        print!("{}", r.table());
    }
    Ok(())
}

fn eval_cmd(a: &Eval) -> Result<()> {
    let ck = checkpoint::load(&a.checkpoint).context("loading checkpoint")?;
    let ds = dataset::load(&a.data).context("loading dataset")?;
    let (preds, report) = trainer::evaluate(&ck.bundle, &ds, a.threshold, a.top_k)?;
    predictions::save(&preds, &a.out)?;
    print!("{}", report.table());
    Ok(())
}

fn export_cmd(a: &Export) -> Result<()> {
    let ck = checkpoint::load(&a.checkpoint).context("loading checkpoint")?;
    let ds = dataset::load(&a.data).context("loading dataset")?;
    let cfg = &ck.bundle.config;
    if a.class >= cfg.num_classes {
        bail!("class {} out of range for {} classes", a.class, cfg.num_classes);
    }
    if a.sample >= ds.len() {
        bail!("sample {} out of range for {} samples", a.sample, ds.len());
    }
    let (m, b) = ck.bundle.attention_maps(&ds.input(a.sample))?;
    let (h, w) = cfg.encoder.grid();
    let write = |t: &sarl_core::Tensor, suffix: &str| -> Result<()> {
        let path = with_suffix(&a.out, suffix);
        pgm::save(&t.column(a.class), h, w, &path)?;
        println!("wrote {}", path.display());
        Ok(())
    };
    write(&m, "_map.pgm")?;
    if let Some(b) = b {
        write(&b, "_attention.pgm")?;
    }
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

struct Tee<A, B> {
    file: A,
    echo: B,
}

impl<A: Write, B: Write> Write for Tee<A, B> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.file.write_all(buf)?;
        self.echo.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.file.flush()?;
        self.echo.flush()
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::GenData(a) => gen_data(a)?,
        Cmd::Train(a) => train_cmd(a)?,
        Cmd::Eval(a) => eval_cmd(a)?,
        Cmd::ExportAttention(a) => export_cmd(a)?,
        Cmd::Gradcheck { seed } => {
            let results = gradcheck::run_suite(*seed)?;
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed()).count();
            println!("{} checks, {failed} failed", results.len());
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
