//! Trains the convolution-only denoiser on synthetic scenes with Gaussian
//! noise and reports PSNR on held-out scenes.
//!
//! cargo run --release --example denoise -- [epochs] [learning_rate]

use vcnn::denoise::{evaluate, train_denoiser};
use vcnn::synth::smooth_scenes;
use vcnn::{Executor, NetworkSpec, TrainConfig, Variant};

fn main() -> vcnn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(20);
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let sigma = 0.1;

    let train = smooth_scenes::<f32>(1000, 32, 32, 1)?;
    let held_out = smooth_scenes::<f32>(100, 32, 32, 2)?;
    let exec = Executor::new(Variant::Imp6);
    let config = TrainConfig {
        learning_rate: lr,
        momentum: 0.9,
        batch_size: 20,
        epochs,
        ..TrainConfig::default()
    };
    let (net, losses) = train_denoiser(&NetworkSpec::denoise(32, 32), &train, sigma, &config, &exec)?;
    for (e, l) in losses.iter().enumerate() {
        println!("epoch {e}: mse {l:.5}");
    }
    let score = evaluate(&net, &held_out, sigma, 99, &exec)?;
    println!(
        "held-out PSNR: noisy {:.2} dB, denoised {:.2} dB, gain {:+.2} dB",
        score.noisy_psnr,
        score.denoised_psnr,
        score.gain()
    );
    Ok(())
}
