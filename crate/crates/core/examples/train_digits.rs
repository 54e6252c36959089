//! Trains the LeNet-like `scale1-analog` network on MNIST-format digits.
//!
//! Reads the four MNIST IDX files from `VCNN_MNIST_DIR` when set; otherwise
//! writes a seeded synthetic digit set to a temporary directory first.
//!
//! cargo run --release --example train_digits -- [epochs] [train_count]

use std::path::PathBuf;
use std::time::Instant;

use vcnn::io::load_idx_dataset;
use vcnn::network::{accuracy, Trainer};
use vcnn::synth::{write_synthetic_mnist, MNIST_FILES};
use vcnn::{Executor, Network, NetworkSpec, TrainConfig, Variant};

fn main() -> vcnn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(3);
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);

    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = match std::env::var_os("VCNN_MNIST_DIR") {
        Some(d) => PathBuf::from(d),
        None => {
            write_synthetic_mnist(tmp.path(), n_train, 5_000, 7)?;
            tmp.path().to_path_buf()
        }
    };
    let f = |i: usize| dir.join(MNIST_FILES[i]);
    let train = load_idx_dataset::<f32>(&f(0), &f(1), "train")?;
    let test = load_idx_dataset::<f32>(&f(2), &f(3), "test")?;
    let (x, y) = (train.images()?, train.targets()?);
    let (tx, ty) = (test.images()?, test.targets()?);
    let labels = match ty {
        vcnn::Targets::Classes(c) => c,
        _ => unreachable!("label files hold classes"),
    };

    let mut net = Network::<f32>::build(&NetworkSpec::preset("scale1-analog")?)?;
    let exec = Executor::new(Variant::Imp6);
    let config = TrainConfig {
        learning_rate: 0.01,
        momentum: 0.9,
        batch_size: 50,
        epochs,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&net, config, &exec)?;
    println!("{} training / {} test images", train.len(), test.len());
    for epoch in 0..epochs {
        let start = Instant::now();
        let loss = trainer.train_epoch(&mut net, &x, &y)?;
        let acc = accuracy(&net, &tx, &labels, &exec, 500)?;
        println!(
            "epoch {epoch}: loss {loss:.4}, test accuracy {:.2}% ({:.1} s)",
            100.0 * acc,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
