mod common;

use common::{rel_err, rng};
use proptest::prelude::*;
use vcnn::network::{train, LayerSpec, Network, NetworkSpec};
use vcnn::selftest::{random_batch, random_spec};
use vcnn::tensor::DType;
use vcnn::{assemble_batch, Activation, Executor, LossKind, TrainConfig, Variant};

#[test]
fn variants_agree_with_loop_reference() {
    let mut r = rng(40);
    for case in 0..20 {
        let net = Network::<f64>::build(&random_spec(&mut r, false)).unwrap();
        let (x, t) = random_batch(&mut r, &net, 1 + case % 4);
        let base = Executor::new(Variant::Imp1).run_batch(&net, &x, Some(&t)).unwrap();
        let base_g = base.gradients.unwrap().flatten();
        for v in &Variant::ALL[1..] {
            let o = Executor::new(*v).run_batch(&net, &x, Some(&t)).unwrap();
            assert!(o.output.max_abs_diff(&base.output) <= 1e-10, "{v} case {case}");
            assert!((o.loss.unwrap() - base.loss.unwrap()).abs() <= 1e-12);
            for (a, b) in o.gradients.unwrap().flatten().iter().zip(&base_g) {
                assert!(rel_err(*a, *b) <= 1e-8, "{v} case {case}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn one_epoch_of_training_agrees_across_variants() {
    let spec = NetworkSpec {
        input: [10, 10, 1],
        layers: vec![
            LayerSpec::conv(3, 4, Activation::Relu),
            LayerSpec::max_pool(2),
            LayerSpec::full(8, Activation::Tanh),
            LayerSpec::full(3, Activation::Identity),
        ],
        loss: LossKind::SoftmaxCrossEntropy,
        seed: 3,
    };
    let mut r = rng(41);
    let start = Network::<f64>::build(&spec).unwrap();
    let (x, t) = random_batch(&mut r, &start, 40);
    let cfg = TrainConfig {
        learning_rate: 0.1,
        momentum: 0.9,
        batch_size: 8,
        epochs: 1,
        precision: DType::F64,
        seed: 5,
    };
    let trained: Vec<Vec<f64>> = Variant::ALL
        .iter()
        .map(|&v| {
            let mut net = start.clone();
            train(&mut net, &x, &t, &cfg, &Executor::new(v)).unwrap();
            net.flat_params()
        })
        .collect();
    assert_ne!(trained[0], start.flat_params());
    for (v, p) in Variant::ALL.iter().zip(&trained) {
        let worst = p.iter().zip(&trained[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{v}: {worst:e}");
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let net = Network::<f32>::build(&NetworkSpec::preset("scale1-analog").unwrap()).unwrap();
    let x = vcnn::synth::smooth_scenes::<f32>(8, 28, 28, 2).unwrap();
    let t = vcnn::Targets::Classes((0..8).collect());
    for v in [Variant::Imp2, Variant::Imp6] {
        let exec = Executor::new(v);
        let runs: Vec<_> = [1, 3]
            .into_iter()
            .map(|n| {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
                pool.install(|| exec.run_batch(&net, &x, Some(&t)).unwrap())
            })
            .collect();
        assert_eq!(runs[0].output, runs[1].output, "{v}");
        assert_eq!(runs[0].gradients, runs[1].gradients, "{v}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn batched_forward_equals_per_sample(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let net = Network::<f64>::build(&random_spec(&mut r, false)).unwrap();
        let (x, _) = random_batch(&mut r, &net, n);
        let exec = Executor::new(Variant::Imp6);
        let singles: Vec<_> = (0..n).map(|b| exec.forward(&net, &x.sample(b).unwrap()).unwrap()).collect();
        let joined = assemble_batch(&singles).unwrap();
        prop_assert!(exec.forward(&net, &x).unwrap().max_abs_diff(&joined) <= 1e-10);
    }
}
