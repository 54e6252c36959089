//! Training throughput of the six variants on one preset.
//!
//! cargo run --release --example vectorization_ladder -- [scale] [batch] [train|test]

use vcnn::bench::{run_ladder, scale_preset, to_csv, BenchOptions, Mode};

fn main() -> vcnn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let scale: u8 = args.first().and_then(|s| s.parse().ok()).unwrap_or(1);
    let batch: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let mode: Mode = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(Mode::Train);

    let reports = run_ladder(scale_preset(scale)?, batch, mode, &BenchOptions::default())?;
    print!("{}", to_csv(&reports)?);
    let base = reports[0].images_per_sec;
    for r in &reports {
        match (r.images_per_sec, base) {
            (Some(v), Some(b)) => println!("{:>5}: {v:9.1} img/s  ({:.1}x imp1)", r.variant, v / b),
            (Some(v), None) => println!("{:>5}: {v:9.1} img/s", r.variant),
            (None, _) => println!("{:>5}: n/a", r.variant),
        }
    }
    Ok(())
}
