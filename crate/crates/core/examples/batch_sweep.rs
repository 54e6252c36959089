//! Throughput of one variant as the batch grows.
//!
//! cargo run --release --example batch_sweep -- [variant] [train|test]

use vcnn::bench::{run_sweep, BenchOptions, Mode};
use vcnn::Variant;

fn main() -> vcnn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: Variant = args.first().map(|s| s.parse()).transpose()?.unwrap_or(Variant::Imp6);
    let mode: Mode = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(Mode::Train);
    let batches = [1, 10, 20, 50, 100, 200, 400];
    let reports = run_sweep("scale1-analog", variant, &batches, mode, &BenchOptions::default())?;
    println!("{variant} {}:", mode.name());
    for r in reports {
        match r.images_per_sec {
            Some(v) => println!("  batch {:>3}: {v:8.1} img/s", r.batch),
            None => println!("  batch {:>3}: n/a", r.batch),
        }
    }
    Ok(())
}
