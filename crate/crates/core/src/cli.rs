//! The `vcnn` command line.
//!
//! Exit codes: 0 success, 1 usage (bad flags, unreadable or invalid
//! config), 2 runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{self, BenchOptions, BenchReport, Mode};
use crate::denoise::{self, denoise_apply, train_denoiser};
use crate::error::{Error, Result};
use crate::io::{self, load_idx, load_idx_dataset, read_pgm, write_atomic, write_pgm, Dataset, Labels, ModelFile, RunConfig};
use crate::network::{accuracy, predict, NetworkSpec, Prediction, Trainer};
use crate::selftest::run_selftest;
use crate::synth::{smooth_scenes, synth_digits};
use crate::tensor::{DType, Scalar, Tensor};
use crate::variants::{Executor, Variant};
use crate::Network;

#[derive(Parser, Debug)]
#[command(name = "vcnn", version, about = "Vectorized convolutional networks on the CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a classifier and save it.
    Train(TrainArgs),
    /// Classify IDX images with a saved model.
    Predict(PredictArgs),
    /// Throughput benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Conv-only denoising networks.
    #[command(subcommand)]
    Denoise(DenoiseCommand),
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    precision: Option<Precision>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    epochs: Option<usize>,
    /// Model output path.
    #[arg(long, default_value = "model.vcnn")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// IDX image file.
    #[arg(long)]
    images: PathBuf,
    /// IDX label file; accuracy is reported when given.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    /// Write `index,class` rows here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Precision {
    F32,
    F64,
}

impl From<Precision> for DType {
    fn from(p: Precision) -> DType {
        match p {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Train,
    Test,
}

#[derive(Args, Debug)]
struct BenchCommon {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    scale: u8,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Per-cell time limit in seconds; slower cells report n/a.
    #[arg(long, default_value_t = 120.0)]
    timeout: f64,
    /// Worker threads (default: VCNN_THREADS or all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum BenchCommand {
    /// All six variants at one batch size.
    Ladder {
        #[command(flatten)]
        common: BenchCommon,
        #[arg(long, default_value_t = 100)]
        batch: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Train)]
        mode: ModeArg,
    },
    /// One variant over increasing batch sizes.
    Sweep {
        #[command(flatten)]
        common: BenchCommon,
        #[arg(long, default_value = "imp6")]
        variant: Variant,
        #[arg(long, value_delimiter = ',', default_value = "1,10,20,50,100,200")]
        batches: Vec<usize>,
        #[arg(long, value_enum, default_value_t = ModeArg::Train)]
        mode: ModeArg,
    },
    /// Per-component training time of one variant.
    Breakdown {
        #[command(flatten)]
        common: BenchCommon,
        #[arg(long, default_value = "imp6")]
        variant: Variant,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
}

#[derive(Subcommand, Debug)]
enum DenoiseCommand {
    /// Train on clean images with synthetic Gaussian noise.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value = "denoise.vcnn")]
        out: PathBuf,
    },
    /// Denoise one PGM image; the result is smaller by the kernel margin.
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Runs one command with `argv[0]` as the program name; returns the exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`cli_main`] with explicit output streams.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            let text = e.render().to_string();
            return match e.kind() {
                DisplayHelp | DisplayVersion | DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(out, "{text}");
                    if e.kind() == DisplayHelpOnMissingArgumentOrSubcommand {
                        1
                    } else {
                        0
                    }
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Bench(b) => cmd_bench(b, out, err),
        Command::Denoise(DenoiseCommand::Train { common, epochs, out: path }) => cmd_denoise_train(common, epochs, path, out),
        Command::Denoise(DenoiseCommand::Apply {
            model,
            input,
            out: path,
            variant,
        }) => cmd_denoise_apply(&model, &input, &path, variant, out),
        Command::Selftest => {
            let report = run_selftest();
            let _ = write!(out, "{report}");
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Runtime(Error::Config("selftest failed".into())))
            }
        }
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn load_config(common: &Common) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { path, source } => Failure::Usage(format!("cannot read config {}: {source}", path.display())),
            other => Failure::Usage(other.to_string()),
        })?,
        None => RunConfig::default(),
    };
    if let Some(v) = common.variant {
        cfg.variant = v;
    }
    if let Some(b) = common.batch {
        cfg.batch_size = b;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(p) = common.precision {
        cfg.precision = p.into();
    }
    cfg.train_config().validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn w(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(text).map_err(|e| Error::io("<stdout>", e))
}

/// Train and test sets from the config, or seeded synthetic digits.
fn classification_data<T: Scalar>(cfg: &RunConfig, out: &mut dyn Write) -> Result<(Dataset<T>, Option<Dataset<T>>)> {
    match (&cfg.train_images, &cfg.train_labels) {
        (Some(i), Some(l)) => {
            let train = load_idx_dataset(i, l, "train")?;
            let test = match (&cfg.test_images, &cfg.test_labels) {
                (Some(i), Some(l)) => Some(load_idx_dataset(i, l, "test")?),
                _ => None,
            };
            Ok((train, test))
        }
        (None, None) => {
            let n = cfg.synth_count.unwrap_or(5000);
            w(out, format_args!("no training files configured; using {n} synthetic digits\n"))?;
            let to_set = |(img, lab): (io::IdxArray, io::IdxArray), split: &str| -> Result<Dataset<T>> {
                let sample = crate::Dims::new(img.dims[1], img.dims[2], 1, 1);
                let pixels = img.data.iter().map(|&b| T::from_f64(b as f64 / 255.0)).collect();
                Dataset::new(sample, pixels, Labels::Classes(lab.data.iter().map(|&b| b as usize).collect()), split)
            };
            let train = to_set(synth_digits(n, cfg.seed), "train")?;
            let test = to_set(synth_digits((n / 5).max(1), cfg.seed.wrapping_add(0x5eed_0000)), "test")?;
            Ok((train, Some(test)))
        }
        _ => Err(Error::Config("train_images and train_labels must be given together".into())),
    }
}

fn check_input(spec: &NetworkSpec, set: &Dataset<impl Scalar>) -> Result<()> {
    let s = set.sample;
    if [s.height, s.width, s.channels] != spec.input {
        return Err(Error::shape("dataset vs network input", &[s.height, s.width, s.channels], &spec.input));
    }
    Ok(())
}

fn train_typed<T: Scalar>(cfg: &RunConfig, path: &Path, out: &mut dyn Write) -> Result<()> {
    let spec = cfg.network_spec("scale1-analog")?;
    let (train, test) = classification_data::<T>(cfg, out)?;
    check_input(&spec, &train)?;
    let labels = |d: &Dataset<T>| match &d.labels {
        Labels::Classes(c) => c.clone(),
        Labels::Images { .. } => Vec::new(),
    };
    let exec = Executor::new(cfg.variant);
    let mut net = Network::<T>::build(&spec)?;
    let mut trainer = Trainer::new(&net, cfg.train_config(), &exec)?;
    let (x, t) = (train.images()?, train.targets()?);
    let test_xy = match &test {
        Some(d) if !d.is_empty() => {
            check_input(&spec, d)?;
            Some((d.images()?, labels(d)))
        }
        _ => None,
    };
    w(
        out,
        format_args!(
            "training {} on {} images: variant {}, {}, batch {}, lr {}, momentum {}\n",
            net.spec.input.map(|v| v.to_string()).join("x"),
            train.len(),
            cfg.variant,
            cfg.precision.name(),
            cfg.batch_size,
            cfg.learning_rate,
            cfg.momentum
        ),
    )?;
    for epoch in 0..cfg.epochs {
        let loss = trainer.train_epoch(&mut net, &x, &t)?;
        match &test_xy {
            Some((tx, ty)) => {
                let acc = accuracy(&net, tx, ty, &exec, 500)?;
                w(out, format_args!("epoch {epoch} loss {loss:.6} test_accuracy {acc:.4}\n"))?;
            }
            None => w(out, format_args!("epoch {epoch} loss {loss:.6}\n"))?,
        }
    }
    io::save_model(&net, path)?;
    w(out, format_args!("saved {}\n", path.display()))
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> CliResult {
    let mut cfg = load_config(&a.common)?;
    if let Some(e) = a.epochs {
        if e == 0 {
            return Err(Failure::Usage("--epochs must be at least 1".into()));
        }
        cfg.epochs = e;
    }
    match cfg.precision {
        DType::F32 => train_typed::<f32>(&cfg, &a.out, out)?,
        DType::F64 => train_typed::<f64>(&cfg, &a.out, out)?,
    }
    Ok(())
}

fn predict_typed<T: Scalar>(model: &ModelFile, a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let net: Network<T> = model.to_network()?;
    let set = match &a.labels {
        Some(l) => load_idx_dataset::<T>(&a.images, l, "predict")?,
        None => load_idx::<T>(&a.images)?,
    };
    check_input(&net.spec, &set)?;
    let exec = Executor::new(a.variant.unwrap_or(Variant::Imp6));
    let x = set.images()?;
    let mut classes = Vec::with_capacity(set.len());
    for start in (0..set.len()).step_by(a.batch.max(1)) {
        let idx: Vec<usize> = (start..(start + a.batch.max(1)).min(set.len())).collect();
        match predict(&net, &crate::network::select_samples(&x, &idx)?, &exec)? {
            Prediction::Classes(c) => classes.extend(c),
            Prediction::Values(_) => {
                return Err(Error::Config("model has no classification head; use `denoise apply`".into()))
            }
        }
    }
    let mut rows = String::from("index,class\n");
    for (i, c) in classes.iter().enumerate() {
        rows.push_str(&format!("{i},{c}\n"));
    }
    match &a.out {
        Some(p) => write_atomic(p, rows.as_bytes())?,
        None => w(out, format_args!("{rows}"))?,
    }
    if let (Some(_), Labels::Classes(truth)) = (&a.labels, &set.labels) {
        let right = classes.iter().zip(truth).filter(|(p, t)| p == t).count();
        w(out, format_args!("accuracy {:.4} ({right}/{})\n", right as f64 / truth.len().max(1) as f64, truth.len()))?;
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> CliResult {
    if a.batch == 0 {
        return Err(Failure::Usage("--batch must be at least 1".into()));
    }
    let model = ModelFile::load(&a.model)?;
    match model.dtype().unwrap_or(DType::F32) {
        DType::F32 => predict_typed::<f32>(&model, &a, out)?,
        DType::F64 => predict_typed::<f64>(&model, &a, out)?,
    }
    Ok(())
}

fn bench_options(c: &BenchCommon) -> std::result::Result<BenchOptions, Failure> {
    if !(c.timeout > 0.0 && c.timeout.is_finite()) {
        return Err(Failure::Usage(format!("--timeout must be positive, got {}", c.timeout)));
    }
    let opts = BenchOptions {
        reps: c.reps,
        warmup: c.warmup,
        precision: c.precision.into(),
        seed: c.seed,
        timeout: Duration::from_secs_f64(c.timeout),
        threads: c.threads,
        ..BenchOptions::default()
    };
    opts.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(opts)
}

fn mode(m: ModeArg) -> Mode {
    match m {
        ModeArg::Train => Mode::Train,
        ModeArg::Test => Mode::Test,
    }
}

fn emit_reports(reports: &[BenchReport], c: &BenchCommon, out: &mut dyn Write) -> Result<()> {
    let text = match c.format {
        Format::Csv => bench::to_csv(reports)?,
        Format::Json => bench::to_json(reports)? + "\n",
    };
    match &c.out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => w(out, format_args!("{text}")),
    }
}

fn cmd_bench(b: BenchCommand, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let (common, reports) = match b {
        BenchCommand::Ladder { common, batch, mode: m } => {
            let opts = bench_options(&common)?;
            let scale = bench::scale_preset(common.scale)?;
            let r = bench::run_ladder(scale, batch, mode(m), &opts)?;
            (common, r)
        }
        BenchCommand::Sweep {
            common,
            variant,
            batches,
            mode: m,
        } => {
            let opts = bench_options(&common)?;
            let scale = bench::scale_preset(common.scale)?;
            let r = bench::run_sweep(scale, variant, &batches, mode(m), &opts)?;
            (common, r)
        }
        BenchCommand::Breakdown { common, variant, batch } => {
            let opts = bench_options(&common)?;
            let scale = bench::scale_preset(common.scale)?;
            let r = vec![bench::run_breakdown(scale, batch, variant, &opts)?];
            (common, r)
        }
    };
    let _ = writeln!(err, "{}", bench::environment_note());
    emit_reports(&reports, &common, out)?;
    Ok(())
}

fn denoise_typed<T: Scalar>(cfg: &RunConfig, path: &Path, out: &mut dyn Write) -> Result<()> {
    let mut spec = cfg.network_spec("denoise")?;
    let clean: Tensor<T> = if cfg.clean_images.is_empty() {
        let side = cfg.synth_size.unwrap_or(32);
        let n = cfg.synth_count.unwrap_or(500);
        w(out, format_args!("no clean images configured; using {n} synthetic {side}x{side} scenes\n"))?;
        smooth_scenes(n, side, side, cfg.seed)?
    } else {
        let imgs = cfg.clean_images.iter().map(|p| read_pgm::<T>(p)).collect::<Result<Vec<_>>>()?;
        crate::assemble_batch(&imgs)?
    };
    let d = clean.dims();
    spec.input = [d.height, d.width, d.channels];
    let exec = Executor::new(cfg.variant);
    let (net, losses) = train_denoiser(&spec, &clean, cfg.sigma, &cfg.train_config(), &exec)?;
    for (e, l) in losses.iter().enumerate() {
        w(out, format_args!("epoch {e} loss {l:.6}\n"))?;
    }
    let held_out = smooth_scenes::<T>(50, d.height, d.width, cfg.seed.wrapping_add(1))?;
    let score = denoise::evaluate(&net, &held_out, cfg.sigma, cfg.seed.wrapping_add(2), &exec)?;
    w(
        out,
        format_args!(
            "held-out psnr: noisy {:.2} dB, denoised {:.2} dB, gain {:+.2} dB\n",
            score.noisy_psnr,
            score.denoised_psnr,
            score.gain()
        ),
    )?;
    io::save_model(&net, path)?;
    w(out, format_args!("saved {}\n", path.display()))
}

fn cmd_denoise_train(common: Common, epochs: Option<usize>, path: PathBuf, out: &mut dyn Write) -> CliResult {
    let mut cfg = load_config(&common)?;
    if let Some(e) = epochs {
        if e == 0 {
            return Err(Failure::Usage("--epochs must be at least 1".into()));
        }
        cfg.epochs = e;
    }
    match cfg.precision {
        DType::F32 => denoise_typed::<f32>(&cfg, &path, out)?,
        DType::F64 => denoise_typed::<f64>(&cfg, &path, out)?,
    }
    Ok(())
}

fn apply_typed<T: Scalar>(model: &ModelFile, input: &Path, path: &Path, exec: &Executor) -> Result<(usize, usize)> {
    let net: Network<T> = model.to_network()?;
    let img = read_pgm::<T>(input)?;
    let y = denoise_apply(&net, &img, exec)?;
    write_pgm(path, &y)?;
    let d = y.dims();
    Ok((d.height, d.width))
}

fn cmd_denoise_apply(model: &Path, input: &Path, path: &Path, variant: Option<Variant>, out: &mut dyn Write) -> CliResult {
    let m = ModelFile::load(model)?;
    let exec = Executor::new(variant.unwrap_or(Variant::Imp6));
    let (h, wd) = match m.dtype().unwrap_or(DType::F32) {
        DType::F32 => apply_typed::<f32>(&m, input, path, &exec)?,
        DType::F64 => apply_typed::<f64>(&m, input, path, &exec)?,
    };
    w(out, format_args!("wrote {} ({wd}x{h})\n", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("vcnn").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let (code, _, err) = call(&["train", "--bogus"]);
        assert_eq!(code, 1);
        assert!(err.contains("Usage"), "{err}");
    }

    #[test]
    fn missing_config_names_path() {
        let (code, _, err) = call(&["train", "--config", "/no/such/run.json"]);
        assert_eq!(code, 1);
        assert!(err.contains("/no/such/run.json"), "{err}");
    }

    #[test]
    fn bad_scale_and_variant_are_usage_errors() {
        assert_eq!(call(&["bench", "ladder", "--scale", "4"]).0, 1);
        assert_eq!(call(&["train", "--variant", "imp7"]).0, 1);
        assert_eq!(call(&["bench", "ladder", "--reps", "2"]).0, 1);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = call(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("bench"));
    }

    #[test]
    fn runtime_error_exits_two() {
        let (code, _, err) = call(&["predict", "--model", "/no/such/model.vcnn", "--images", "/no/x"]);
        assert_eq!(code, 2);
        assert!(err.contains("/no/such/model.vcnn"));
    }
}
