//! Where the time goes in one training batch.
//!
//! cargo run --release --example performance_breakdown -- [scale] [batch] [variant]

use vcnn::bench::{run_breakdown, scale_preset, BenchOptions};
use vcnn::variants::Component;
use vcnn::Variant;

fn main() -> vcnn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let scale: u8 = args.first().and_then(|s| s.parse().ok()).unwrap_or(3);
    let batch: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let variant: Variant = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(Variant::Imp6);

    let r = run_breakdown(scale_preset(scale)?, batch, variant, &BenchOptions::default())?;
    let (Some(secs), Some(frac)) = (r.components, r.fractions()) else {
        println!("n/a: {:?}", r.status);
        return Ok(());
    };
    println!("{} {variant} batch {batch}", r.scale);
    for c in Component::ALL {
        let i = c as usize;
        println!("  {:<8} {:9.3} ms  {:5.1}%  {}", c.name(), 1e3 * secs[i], 100.0 * frac[i], "#".repeat((frac[i] * 50.0) as usize));
    }
    Ok(())
}
