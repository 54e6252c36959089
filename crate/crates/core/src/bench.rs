//! Throughput harness: variant ladder, batch-size sweep and per-component
//! breakdown.
//!
//! A cell runs `warmup` untimed batches and then `reps` timed ones on
//! seeded random data. Only the forward (and, in training mode, backward)
//! call is inside the clock; data synthesis is not. Throughput is the batch
//! size over the median repetition time. Component columns are mean seconds
//! per batch as recorded by the executor's profiler hooks.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{LossKind, Targets};
use crate::network::{Network, NetworkSpec};
use crate::tensor::{DType, Scalar, Tensor};
use crate::variants::{Component, Executor, Profiler, Variant};
use crate::vectorize::ConvGeometry;

pub const SCHEMA: &str = "vcnn-bench/1";

/// Default ceiling on the estimated working set of one cell.
pub const DEFAULT_MEMORY_BUDGET: usize = 3 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Test,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Test => "test",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Mode::Train),
            "test" => Ok(Mode::Test),
            other => Err(Error::Config(format!("unknown bench mode {other:?} (expected train or test)"))),
        }
    }
}

/// Preset name for `--scale {1,2,3}`.
pub fn scale_preset(scale: u8) -> Result<&'static str> {
    match scale {
        1 => Ok("scale1-analog"),
        2 => Ok("scale2-mini"),
        3 => Ok("scale3-mini"),
        other => Err(Error::Config(format!("unknown scale {other} (expected 1, 2 or 3)"))),
    }
}

/// Settings shared by every cell of a run.
#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub reps: usize,
    pub warmup: usize,
    pub precision: DType,
    pub seed: u64,
    pub timeout: Duration,
    pub memory_budget: usize,
    /// Worker threads for the primitives; `None` reads `VCNN_THREADS`.
    pub threads: Option<usize>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            reps: 3,
            warmup: 1,
            precision: DType::F32,
            seed: 1,
            timeout: Duration::from_secs(120),
            memory_budget: DEFAULT_MEMORY_BUDGET,
            threads: None,
        }
    }
}

impl BenchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 3 {
            return Err(Error::Bench(format!("repetitions must be at least 3, got {}", self.reps)));
        }
        if self.warmup < 1 {
            return Err(Error::Bench("warmup must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchScenario {
    /// Preset name, see [`NetworkSpec::preset`].
    pub scale: String,
    pub spec: NetworkSpec,
    pub variant: Variant,
    pub batch: usize,
    pub mode: Mode,
}

impl BenchScenario {
    pub fn new(scale: &str, variant: Variant, batch: usize, mode: Mode) -> Result<Self> {
        let spec = NetworkSpec::preset(scale)?;
        Self::with_spec(scale, spec, variant, batch, mode)
    }

    pub fn with_spec(scale: &str, spec: NetworkSpec, variant: Variant, batch: usize, mode: Mode) -> Result<Self> {
        spec.validate()?;
        if batch == 0 {
            return Err(Error::Bench("batch size must be at least 1".into()));
        }
        Ok(BenchScenario {
            scale: scale.to_string(),
            spec,
            variant,
            batch,
            mode,
        })
    }

    /// Rough upper bound on the bytes touched by one batch: activations,
    /// their gradients, patch matrices and parameters.
    pub fn estimated_bytes(&self, width: usize) -> usize {
        let Ok(dims) = self.spec.validate() else { return usize::MAX };
        let mut per_sample = self.spec.input_dims(1).len();
        let mut prev = self.spec.input_dims(1);
        for (l, d) in self.spec.layers.iter().zip(&dims) {
            per_sample += 2 * d.len();
            if let crate::network::LayerSpec::Conv { kernel, stride, .. } = *l {
                if let Ok(g) = ConvGeometry::new(prev.height, prev.width, prev.channels, (kernel[0], kernel[1]), stride) {
                    per_sample += 2 * g.patch_len() * g.out_plane();
                }
            }
            prev = *d;
        }
        let params = self.spec.parameter_count().unwrap_or(0);
        (per_sample.saturating_mul(self.batch).saturating_add(3 * params)).saturating_mul(width)
    }
}

/// Outcome of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    /// Skipped or abandoned: the cell would exceed the timeout or memory budget.
    #[serde(rename = "n/a")]
    NotAvailable { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub scale: String,
    pub variant: Variant,
    pub mode: Mode,
    pub batch: usize,
    pub images_per_sec: Option<f64>,
    /// Mean seconds per batch for each component, in [`Component::ALL`] order.
    pub components: Option<[f64; 8]>,
    /// Median wall time of one batch.
    pub median_secs: Option<f64>,
    pub reps: usize,
    pub warmup: usize,
    pub threads: usize,
    pub precision: DType,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    #[serde(flatten)]
    pub status: CellStatus,
}

impl BenchReport {
    pub fn is_available(&self) -> bool {
        self.status == CellStatus::Ok
    }

    /// Component shares of the summed component time.
    pub fn fractions(&self) -> Option<[f64; 8]> {
        let c = self.components?;
        let total: f64 = c.iter().sum();
        if total <= 0.0 {
            return None;
        }
        Some(c.map(|v| v / total))
    }

    pub fn component(&self, c: Component) -> Option<f64> {
        self.components.map(|v| v[c as usize])
    }
}

/// Images per second. Errors instead of dividing by zero.
pub fn throughput(images: usize, secs: f64) -> Result<f64> {
    if images == 0 {
        return Err(Error::Bench("no images processed".into()));
    }
    if !(secs > 0.0 && secs.is_finite()) {
        return Err(Error::Bench(format!("wall time must be positive, got {secs}")));
    }
    Ok(images as f64 / secs)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Thread count from `VCNN_THREADS`, if set and valid.
pub fn env_threads() -> Option<usize> {
    std::env::var("VCNN_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs `f` inside a rayon pool pinned to the configured thread count.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads.or_else(env_threads) {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Bench(format!("cannot build a {n}-thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Measures one cell.
pub fn run_cell(scenario: &BenchScenario, opts: &BenchOptions) -> Result<BenchReport> {
    opts.validate()?;
    with_threads(opts.threads, || match opts.precision {
        DType::F32 => run_cell_typed::<f32>(scenario, opts),
        DType::F64 => run_cell_typed::<f64>(scenario, opts),
    })?
}

fn random_batch<T: Scalar>(spec: &NetworkSpec, out_len: usize, batch: usize, seed: u64) -> (Tensor<T>, Targets<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(spec.input_dims(batch), |_| T::from_f64(rng.random::<f64>()));
    let t = match spec.loss {
        LossKind::SoftmaxCrossEntropy => Targets::Classes((0..batch).map(|_| rng.random_range(0..out_len)).collect()),
        LossKind::MeanSquaredError => {
            let dims = spec.validate().expect("validated").last().copied().expect("non-empty").with_batch(batch);
            Targets::Values(Tensor::from_fn(dims, |_| T::from_f64(rng.random::<f64>())))
        }
    };
    (x, t)
}

fn run_cell_typed<T: Scalar>(sc: &BenchScenario, opts: &BenchOptions) -> Result<BenchReport> {
    let started = now_ms();
    let threads = rayon::current_num_threads();
    let report = |status: CellStatus, ips: Option<f64>, comps: Option<[f64; 8]>, med: Option<f64>| BenchReport {
        scale: sc.scale.clone(),
        variant: sc.variant,
        mode: sc.mode,
        batch: sc.batch,
        images_per_sec: ips,
        components: comps,
        median_secs: med,
        reps: opts.reps,
        warmup: opts.warmup,
        threads,
        precision: T::DTYPE,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        status,
    };
    let need = sc.estimated_bytes(T::DTYPE.byte_width());
    if need > opts.memory_budget {
        let reason = format!("estimated {} MiB exceeds the {} MiB budget", need >> 20, opts.memory_budget >> 20);
        return Ok(report(CellStatus::NotAvailable { reason }, None, None, None));
    }

    let net = Network::<T>::build(&sc.spec)?;
    let out_len = net.output_dims(1).sample_len();
    let profiler = Arc::new(Profiler::new());
    let exec = Executor::new(sc.variant).with_profiler(profiler.clone());
    let run = |x: &Tensor<T>, t: &Targets<T>| -> Result<Duration> {
        let start = Instant::now();
        match sc.mode {
            Mode::Train => exec.run_batch(&net, x, Some(t))?,
            Mode::Test => exec.run_batch(&net, x, None)?,
        };
        Ok(start.elapsed())
    };
    let budget_start = Instant::now();
    let over = |reason: String| CellStatus::NotAvailable { reason };

    // Probe with one sample and extrapolate before committing to full batches.
    let (px, pt) = random_batch::<T>(&sc.spec, out_len, 1, opts.seed ^ 0x9e37);
    let probe = run(&px, &pt)?;
    let projected = probe.as_secs_f64() * (sc.batch * (opts.reps + opts.warmup)) as f64;
    if sc.batch > 1 && projected > 2.0 * opts.timeout.as_secs_f64() {
        let reason = format!("projected {projected:.0} s exceeds the {} s timeout", opts.timeout.as_secs());
        return Ok(report(over(reason), None, None, None));
    }

    let mut times = Vec::with_capacity(opts.reps);
    for i in 0..opts.warmup + opts.reps {
        if budget_start.elapsed() > opts.timeout {
            let reason = format!("exceeded the {} s timeout", opts.timeout.as_secs());
            return Ok(report(over(reason), None, None, None));
        }
        let (x, t) = random_batch::<T>(&sc.spec, out_len, sc.batch, opts.seed.wrapping_add(i as u64));
        if i == opts.warmup {
            profiler.reset();
        }
        let d = run(&x, &t)?;
        if i >= opts.warmup {
            times.push(d.as_secs_f64());
        }
    }
    let med = median(&times).expect("reps >= 3");
    let ips = throughput(sc.batch, med)?;
    let comps = profiler.snapshot().map(|s| s / opts.reps as f64);
    Ok(report(CellStatus::Ok, Some(ips), Some(comps), Some(med)))
}

/// One cell per variant, in ladder order.
pub fn run_ladder(scale: &str, batch: usize, mode: Mode, opts: &BenchOptions) -> Result<Vec<BenchReport>> {
    Variant::ALL
        .iter()
        .map(|&v| run_cell(&BenchScenario::new(scale, v, batch, mode)?, opts))
        .collect()
}

/// One cell per batch size; sizes must be strictly increasing.
pub fn run_sweep(
    scale: &str,
    variant: Variant,
    batches: &[usize],
    mode: Mode,
    opts: &BenchOptions,
) -> Result<Vec<BenchReport>> {
    if batches.is_empty() {
        return Err(Error::Bench("empty batch list".into()));
    }
    if batches.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Bench(format!("batch sizes must be strictly increasing: {batches:?}")));
    }
    batches
        .iter()
        .map(|&b| run_cell(&BenchScenario::new(scale, variant, b, mode)?, opts))
        .collect()
}

/// Training-mode cell whose component columns give the time breakdown.
pub fn run_breakdown(scale: &str, batch: usize, variant: Variant, opts: &BenchOptions) -> Result<BenchReport> {
    run_cell(&BenchScenario::new(scale, variant, batch, Mode::Train)?, opts)
}

pub const CSV_HEADER: [&str; 15] = [
    "scale",
    "variant",
    "mode",
    "batch",
    "images_per_sec",
    "conv_f",
    "conv_b",
    "pool_f",
    "pool_b",
    "full_f",
    "full_b",
    "other_f",
    "other_b",
    "reps",
    "warmup",
];

fn num_or_na(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

/// CSV with [`CSV_HEADER`] columns; unavailable cells read `n/a`.
pub fn write_csv<W: Write>(reports: &[BenchReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Bench(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in reports {
        let mut row = vec![
            r.scale.clone(),
            r.variant.name().to_string(),
            r.mode.name().to_string(),
            r.batch.to_string(),
            num_or_na(r.images_per_sec),
        ];
        for c in Component::ALL {
            row.push(num_or_na(r.component(c)));
        }
        row.push(r.reps.to_string());
        row.push(r.warmup.to_string());
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Bench(format!("csv: {e}")))
}

pub fn to_csv(reports: &[BenchReport]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is ascii"))
}

#[derive(Serialize)]
struct JsonRow<'a> {
    scale: &'a str,
    variant: Variant,
    mode: Mode,
    batch: usize,
    images_per_sec: Option<f64>,
    conv_f: Option<f64>,
    conv_b: Option<f64>,
    pool_f: Option<f64>,
    pool_b: Option<f64>,
    full_f: Option<f64>,
    full_b: Option<f64>,
    other_f: Option<f64>,
    other_b: Option<f64>,
    reps: usize,
    warmup: usize,
    median_secs: Option<f64>,
    threads: usize,
    precision: DType,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    #[serde(flatten)]
    status: &'a CellStatus,
}

#[derive(Serialize)]
struct JsonDoc<'a> {
    schema: &'static str,
    environment: String,
    reports: Vec<JsonRow<'a>>,
}

pub fn environment_note() -> String {
    format!(
        "vcnn {} on {}-{}, {} worker thread(s)",
        env!("CARGO_PKG_VERSION"),
        std::env::consts::OS,
        std::env::consts::ARCH,
        env_threads().unwrap_or_else(rayon::current_num_threads)
    )
}

/// JSON document with schema tag [`SCHEMA`] and the CSV fields per report.
pub fn to_json(reports: &[BenchReport]) -> Result<String> {
    let rows = reports
        .iter()
        .map(|r| {
            let c = |k: Component| r.component(k);
            JsonRow {
                scale: &r.scale,
                variant: r.variant,
                mode: r.mode,
                batch: r.batch,
                images_per_sec: r.images_per_sec,
                conv_f: c(Component::ConvF),
                conv_b: c(Component::ConvB),
                pool_f: c(Component::PoolF),
                pool_b: c(Component::PoolB),
                full_f: c(Component::FullF),
                full_b: c(Component::FullB),
                other_f: c(Component::OtherF),
                other_b: c(Component::OtherB),
                reps: r.reps,
                warmup: r.warmup,
                median_secs: r.median_secs,
                threads: r.threads,
                precision: r.precision,
                started_unix_ms: r.started_unix_ms,
                finished_unix_ms: r.finished_unix_ms,
                status: &r.status,
            }
        })
        .collect();
    let doc = JsonDoc {
        schema: SCHEMA,
        environment: environment_note(),
        reports: rows,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Bench(format!("json: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Activation;
    use crate::network::LayerSpec;

    fn tiny() -> NetworkSpec {
        NetworkSpec {
            input: [8, 8, 1],
            layers: vec![
                LayerSpec::conv(3, 2, Activation::Relu),
                LayerSpec::max_pool(2),
                LayerSpec::full(3, Activation::Identity),
            ],
            loss: LossKind::SoftmaxCrossEntropy,
            seed: 3,
        }
    }

    #[test]
    fn throughput_definition() {
        let t = throughput(200, 1.0599).unwrap();
        assert!((t - 188.7).abs() < 0.05, "{t}");
        assert!((t * 1.0599 - 200.0).abs() < 1e-9);
        assert!(throughput(0, 1.0).is_err());
        assert!(throughput(5, 0.0).is_err());
    }

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn options_enforce_minimums() {
        let mut o = BenchOptions::default();
        assert!(o.validate().is_ok());
        o.reps = 2;
        assert!(o.validate().is_err());
        o.reps = 3;
        o.warmup = 0;
        assert!(o.validate().is_err());
    }

    #[test]
    fn cell_reports_fractions_summing_to_one() {
        let sc = BenchScenario::with_spec("tiny", tiny(), Variant::Imp6, 4, Mode::Train).unwrap();
        let r = run_cell(&sc, &BenchOptions::default()).unwrap();
        assert!(r.is_available());
        let f = r.fractions().unwrap();
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(f.iter().all(|&v| v >= 0.0));
        assert!(r.images_per_sec.unwrap() > 0.0);
    }

    #[test]
    fn memory_budget_marks_cell_unavailable() {
        let sc = BenchScenario::with_spec("tiny", tiny(), Variant::Imp6, 4, Mode::Test).unwrap();
        let opts = BenchOptions {
            memory_budget: 16,
            ..BenchOptions::default()
        };
        let r = run_cell(&sc, &opts).unwrap();
        assert!(!r.is_available());
        assert_eq!(r.images_per_sec, None);
        assert!(to_csv(&[r]).unwrap().lines().nth(1).unwrap().contains("n/a"));
    }

    #[test]
    fn sweep_requires_increasing_batches() {
        let o = BenchOptions::default();
        assert!(run_sweep("scale1-analog", Variant::Imp6, &[4, 4], Mode::Test, &o).is_err());
        assert!(run_sweep("scale1-analog", Variant::Imp6, &[8, 2], Mode::Test, &o).is_err());
        assert!(run_sweep("scale1-analog", Variant::Imp6, &[], Mode::Test, &o).is_err());
    }

    #[test]
    fn csv_and_json_schema() {
        let sc = BenchScenario::with_spec("tiny", tiny(), Variant::Imp4, 2, Mode::Test).unwrap();
        let r = run_cell(&sc, &BenchOptions::default()).unwrap();
        let csv = to_csv(std::slice::from_ref(&r)).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 15);
        assert_eq!(&row[..4], &["tiny", "imp4", "test", "2"]);
        let v: serde_json::Value = serde_json::from_str(&to_json(&[r]).unwrap()).unwrap();
        assert_eq!(v["schema"], SCHEMA);
        let rep = &v["reports"][0];
        for key in CSV_HEADER {
            assert!(rep.get(key).is_some(), "missing {key}");
        }
        assert_eq!(rep["status"], "ok");
    }

    #[test]
    fn pinned_thread_count_is_recorded() {
        let sc = BenchScenario::with_spec("tiny", tiny(), Variant::Imp2, 3, Mode::Test).unwrap();
        let opts = BenchOptions {
            threads: Some(2),
            ..BenchOptions::default()
        };
        assert_eq!(run_cell(&sc, &opts).unwrap().threads, 2);
    }
}
