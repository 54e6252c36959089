//! Saves a network, loads it back and checks that every parameter bit and
//! every output survives.

use vcnn::io::{load_model, save_model, ModelFile};
use vcnn::{Executor, Network, NetworkSpec, Tensor, Variant};

fn main() -> vcnn::Result<()> {
    let net = Network::<f32>::build(&NetworkSpec::preset("scale2-mini")?)?;
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("scale2.vcnn");
    save_model(&net, &path)?;

    let file = ModelFile::load(&path)?;
    println!(
        "{} bytes, version {}, {} blobs, {:?}",
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
        file.version,
        file.blobs.len(),
        file.dtype()
    );
    for b in &file.blobs {
        println!("  layer {} {:?} {:?}", b.layer, b.role, b.shape);
    }

    let back: Network<f32> = load_model(&path)?;
    let same = back.flat_params().iter().zip(net.flat_params()).all(|(a, b)| a.to_bits() == b.to_bits());
    let x = Tensor::from_fn(net.input_dims(3), |i| (i % 251) as f32 / 251.0);
    let exec = Executor::new(Variant::Imp6);
    println!("parameters bit-identical: {same}");
    println!("outputs identical: {}", exec.forward(&net, &x)? == exec.forward(&back, &x)?);
    Ok(())
}
