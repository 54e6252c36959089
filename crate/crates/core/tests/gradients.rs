mod common;

use common::{finite_difference, rng, uniform};
use rand::Rng;
use vcnn::network::{LayerSpec, Network, NetworkSpec};
use vcnn::vectorize::{PoolBackward, PoolMode};
use vcnn::{Activation, LossKind, Targets};

fn pool(window: usize, stride: usize, mode: PoolMode, bias: bool, activation: Activation) -> LayerSpec {
    LayerSpec::Pool {
        window: [window, window],
        stride: Some(stride),
        mode,
        bias,
        activation,
        backward: PoolBackward::Exact,
    }
}

fn check(input: [usize; 3], layers: Vec<LayerSpec>, loss: LossKind, seed: u64) -> (f64, f64) {
    let spec = NetworkSpec { input, layers, loss, seed };
    let net = Network::<f64>::build(&spec).unwrap();
    let mut r = rng(seed);
    let x = uniform(&mut r, net.input_dims(2));
    let out = net.output_dims(2);
    let t = match loss {
        LossKind::SoftmaxCrossEntropy => Targets::Classes(vec![0, out.sample_len() - 1]),
        LossKind::MeanSquaredError => Targets::Values(uniform(&mut r, out)),
    };
    finite_difference(&net, &x, &t, 1e-5)
}

#[test]
fn conv_layer_each_activation() {
    for (i, a) in [Activation::Identity, Activation::Relu, Activation::Sigmoid, Activation::Tanh].into_iter().enumerate() {
        let (p, x) = check([6, 5, 2], vec![LayerSpec::conv(3, 3, a)], LossKind::MeanSquaredError, i as u64);
        assert!(p < 1e-4 && x < 1e-4, "{a:?}: params {p:e}, input {x:e}");
    }
}

#[test]
fn strided_conv() {
    let layers = vec![LayerSpec::Conv {
        kernel: [3, 2],
        maps: 2,
        stride: 2,
        activation: Activation::Tanh,
    }];
    let (p, x) = check([7, 8, 2], layers, LossKind::MeanSquaredError, 5);
    assert!(p < 1e-4 && x < 1e-4, "{p:e} {x:e}");
}

#[test]
fn pooling_modes_with_bias_and_overlap() {
    for (i, mode) in [PoolMode::Max, PoolMode::Avg].into_iter().enumerate() {
        for stride in [1, 2] {
            let layers = vec![LayerSpec::conv(2, 2, Activation::Tanh), pool(2, stride, mode, true, Activation::Sigmoid)];
            let (p, x) = check([7, 7, 1], layers, LossKind::MeanSquaredError, 10 + i as u64);
            assert!(p < 1e-4 && x < 1e-4, "{mode:?} stride {stride}: {p:e} {x:e}");
        }
    }
}

#[test]
fn full_layers_both_losses() {
    for loss in [LossKind::SoftmaxCrossEntropy, LossKind::MeanSquaredError] {
        let layers = vec![LayerSpec::full(6, Activation::Sigmoid), LayerSpec::full(4, Activation::Identity)];
        let (p, x) = check([3, 2, 2], layers, loss, 20);
        assert!(p < 1e-4 && x < 1e-4, "{loss:?}: {p:e} {x:e}");
    }
}

#[test]
fn whole_tiny_network() {
    let mut r = rng(30);
    let layers = vec![
        LayerSpec::conv(3, 3, Activation::Tanh),
        pool(2, 2, PoolMode::Max, false, Activation::Identity),
        LayerSpec::conv(2, 4, Activation::Relu),
        pool(2, 1, PoolMode::Avg, true, Activation::Tanh),
        LayerSpec::full(5, Activation::Tanh),
        LayerSpec::full(3, Activation::Identity),
    ];
    let (p, x) = check([12, 12, 2], layers, LossKind::SoftmaxCrossEntropy, r.random());
    assert!(p < 1e-4 && x < 1e-4, "{p:e} {x:e}");
}
