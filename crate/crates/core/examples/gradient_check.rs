//! Backpropagated gradients against central finite differences on a small
//! double-precision network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcnn::{Activation, Executor, LayerSpec, LossKind, Network, NetworkSpec, Targets, Tensor, Variant};

fn main() -> vcnn::Result<()> {
    let spec = NetworkSpec {
        input: [10, 10, 1],
        layers: vec![
            LayerSpec::conv(3, 3, Activation::Tanh),
            LayerSpec::max_pool(2),
            LayerSpec::full(6, Activation::Sigmoid),
            LayerSpec::full(3, Activation::Identity),
        ],
        loss: LossKind::SoftmaxCrossEntropy,
        seed: 5,
    };
    let mut net = Network::<f64>::build(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::from_fn(net.input_dims(2), |_| rng.random_range(-1.0..1.0));
    let t = Targets::Classes(vec![0, 2]);
    let exec = Executor::new(Variant::Imp6);

    let grads = exec.run_batch(&net, &x, Some(&t))?.gradients.expect("targets given").flatten();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (i, &g) in grads.iter().enumerate() {
        let p = *net.param_mut(i).expect("in range");
        *net.param_mut(i).expect("in range") = p + h;
        let up = exec.run_batch(&net, &x, Some(&t))?.loss.expect("targets given");
        *net.param_mut(i).expect("in range") = p - h;
        let down = exec.run_batch(&net, &x, Some(&t))?.loss.expect("targets given");
        *net.param_mut(i).expect("in range") = p;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-6));
    }
    println!("{} parameters, max relative error {worst:.2e}", grads.len());
    Ok(())
}
