//! Oracle checks runnable from the command line (`vcnn selftest`).
//!
//! Each check compares the library against an independent brute-force
//! computation or an algebraic identity, in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::io::{parse_idx, IdxArray, ModelFile};
use crate::layers::{Activation, LossKind, Targets};
use crate::network::{LayerSpec, Network, NetworkSpec};
use crate::tensor::{Dims, Matrix, Tensor};
use crate::variants::{Executor, Variant};
use crate::vectorize::{col2im, im2col, pool_forward, ConvGeometry, PoolBackward, PoolGeometry, PoolMode};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl std::fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, dims: Dims) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
}

fn activation(rng: &mut ChaCha8Rng, smooth: bool) -> Activation {
    let all = if smooth {
        &[Activation::Identity, Activation::Sigmoid, Activation::Tanh][..]
    } else {
        &[Activation::Identity, Activation::Relu, Activation::Sigmoid, Activation::Tanh][..]
    };
    all[rng.random_range(0..all.len())]
}

/// A random valid small network. With `smooth`, activations are
/// differentiable everywhere and pooling is average pooling, for finite
/// difference checks.
pub fn random_spec(rng: &mut ChaCha8Rng, smooth: bool) -> NetworkSpec {
    loop {
        let input = [rng.random_range(5..11), rng.random_range(5..11), rng.random_range(1..4)];
        let mut layers = Vec::new();
        for _ in 0..rng.random_range(1..3) {
            let k = rng.random_range(1..4);
            layers.push(LayerSpec::Conv {
                kernel: [k, rng.random_range(1..4)],
                maps: rng.random_range(1..5),
                stride: if rng.random_bool(0.25) { 2 } else { 1 },
                activation: activation(rng, smooth),
            });
            if rng.random_bool(0.6) {
                let window = rng.random_range(2..4);
                layers.push(LayerSpec::Pool {
                    window: [window, window],
                    stride: Some(if rng.random_bool(0.3) { 1 } else { window }),
                    mode: if smooth || rng.random_bool(0.5) { PoolMode::Avg } else { PoolMode::Max },
                    bias: rng.random_bool(0.3),
                    activation: activation(rng, smooth),
                    backward: if !smooth && rng.random_bool(0.2) { PoolBackward::PaperNn } else { PoolBackward::Exact },
                });
            }
        }
        let classify = rng.random_bool(0.5);
        let fulls = if classify { rng.random_range(1..3) } else { rng.random_range(0..2) };
        for i in 0..fulls {
            let last = i + 1 == fulls;
            layers.push(LayerSpec::Full {
                units: rng.random_range(2..6),
                activation: if last { Activation::Identity } else { activation(rng, smooth) },
            });
        }
        let spec = NetworkSpec {
            input,
            layers,
            loss: if classify { LossKind::SoftmaxCrossEntropy } else { LossKind::MeanSquaredError },
            seed: rng.random(),
        };
        if spec.validate().is_ok() {
            return spec;
        }
    }
}

/// Random inputs and matching targets for `net`.
pub fn random_batch(rng: &mut ChaCha8Rng, net: &Network<f64>, batch: usize) -> (Tensor<f64>, Targets<f64>) {
    let x = uniform(rng, net.input_dims(batch));
    let out = net.output_dims(batch);
    let t = match net.spec.loss {
        LossKind::SoftmaxCrossEntropy => {
            Targets::Classes((0..batch).map(|_| rng.random_range(0..out.sample_len())).collect())
        }
        LossKind::MeanSquaredError => Targets::Values(uniform(rng, out)),
    };
    (x, t)
}

fn check(name: &'static str, worst: f64, tol: f64, what: &str) -> Check {
    Check {
        name,
        passed: worst <= tol,
        detail: format!("max {what} {worst:.2e} (tolerance {tol:.0e})"),
    }
}

fn conv_direct() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (h, w, c, b) = (rng.random_range(4..9), rng.random_range(4..9), rng.random_range(1..4), 2);
        let (kh, kw, s) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..3));
        let f = uniform(&mut rng, Dims::new(h, w, c, b));
        let g = ConvGeometry::new(h, w, c, (kh, kw), s)?;
        let maps = 3;
        let wm = Matrix::new(maps, g.patch_len(), (0..maps * g.patch_len()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let y = crate::tensor::matmul(&wm, &im2col(&f, (kh, kw), s)?.mat)?;
        let (oh, ow) = (g.out_h(), g.out_w());
        for m in 0..maps {
            for bb in 0..b {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for cc in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    acc += wm.get(m, (cc * kh + i) * kw + j) * f.at(oy * s + i, ox * s + j, cc, bb);
                                }
                            }
                        }
                        worst = worst.max((acc - y.get(m, bb * oh * ow + oy * ow + ox)).abs());
                    }
                }
            }
        }
    }
    Ok(check("conv-lowering-vs-direct", worst, 1e-12, "abs error"))
}

fn adjoint() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (h, w, c, b) = (rng.random_range(3..10), rng.random_range(3..10), rng.random_range(1..4), rng.random_range(1..3));
        let (kh, kw) = (rng.random_range(1..h.min(5) + 1), rng.random_range(1..w.min(5) + 1));
        let s = rng.random_range(1..3);
        let f = uniform(&mut rng, Dims::new(h, w, c, b));
        let p = im2col(&f, (kh, kw), s)?;
        let g = Matrix::new(p.mat.rows(), p.mat.cols(), (0..p.mat.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let lhs: f64 = p.mat.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = f.data().iter().zip(col2im(&g, &p.geometry)?.data()).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    Ok(check("im2col-col2im-adjoint", worst, 1e-10, "rel error"))
}

fn pool_direct() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let d = Dims::new(rng.random_range(3..9), rng.random_range(3..9), rng.random_range(1..3), 2);
        let win = rng.random_range(1..d.height.min(d.width).min(3) + 1);
        let s = rng.random_range(1..win + 1);
        for mode in [PoolMode::Max, PoolMode::Avg] {
            let g = PoolGeometry::new(d, (win, win), s, mode)?;
            let f = uniform(&mut rng, d);
            let (out, _) = pool_forward(&f, &g)?;
            for b in 0..d.batch {
                for c in 0..d.channels {
                    for y in 0..g.out_h() {
                        for x in 0..g.out_w() {
                            let vals: Vec<f64> = (0..win * win).map(|k| f.at(y * s + k / win, x * s + k % win, c, b)).collect();
                            let want = match mode {
                                PoolMode::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                                PoolMode::Avg => vals.iter().sum::<f64>() / vals.len() as f64,
                            };
                            worst = worst.max((want - out.at(y, x, c, b)).abs());
                        }
                    }
                }
            }
        }
    }
    Ok(check("pooling-vs-window-scan", worst, 1e-12, "abs error"))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest output and gradient disagreement of every variant against Imp-1.
pub fn variant_disagreement(net: &Network<f64>, x: &Tensor<f64>, t: &Targets<f64>) -> Result<(f64, f64)> {
    let reference = Executor::new(Variant::Imp1).run_batch(net, x, Some(t))?;
    let ref_grads = reference.gradients.expect("targets given").flatten();
    let (mut out_err, mut grad_err) = (0.0f64, 0.0f64);
    for v in &Variant::ALL[1..] {
        let r = Executor::new(*v).run_batch(net, x, Some(t))?;
        out_err = out_err.max(r.output.max_abs_diff(&reference.output));
        for (a, b) in r.gradients.expect("targets given").flatten().iter().zip(&ref_grads) {
            grad_err = grad_err.max(rel(*a, *b));
        }
    }
    Ok((out_err, grad_err))
}

fn variants_agree() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut out_err, mut grad_err) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let net = Network::<f64>::build(&random_spec(&mut rng, false))?;
        let batch = rng.random_range(1..5);
        let (x, t) = random_batch(&mut rng, &net, batch);
        let (o, g) = variant_disagreement(&net, &x, &t)?;
        out_err = out_err.max(o);
        grad_err = grad_err.max(g);
    }
    Ok(vec![
        check("variants-outputs-agree", out_err, 1e-10, "abs error"),
        check("variants-gradients-agree", grad_err, 1e-8, "rel error"),
    ])
}

/// Largest relative error between backpropagated and central-difference
/// parameter gradients of the batch loss.
pub fn finite_difference_error(net: &Network<f64>, x: &Tensor<f64>, t: &Targets<f64>, h: f64) -> Result<f64> {
    let exec = Executor::new(Variant::Imp6);
    let analytic = exec.run_batch(net, x, Some(t))?.gradients.expect("targets given").flatten();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let p0 = *probe.param_mut(i).expect("index in range");
        *probe.param_mut(i).expect("index in range") = p0 + h;
        let up = exec.run_batch(&probe, x, Some(t))?.loss.expect("targets given");
        *probe.param_mut(i).expect("index in range") = p0 - h;
        let down = exec.run_batch(&probe, x, Some(t))?.loss.expect("targets given");
        *probe.param_mut(i).expect("index in range") = p0;
        worst = worst.max(rel(a, (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

fn gradient_check() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let net = Network::<f64>::build(&random_spec(&mut rng, true))?;
        let (x, t) = random_batch(&mut rng, &net, 2);
        worst = worst.max(finite_difference_error(&net, &x, &t, 1e-5)?);
    }
    Ok(check("finite-difference-gradients", worst, 1e-4, "rel error"))
}

fn batch_equivalence() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let net = Network::<f64>::build(&random_spec(&mut rng, false))?;
        let n = rng.random_range(2..6);
        let (x, _) = random_batch(&mut rng, &net, n);
        let exec = Executor::new(Variant::Imp6);
        let whole = exec.forward(&net, &x)?;
        for b in 0..n {
            worst = worst.max(exec.forward(&net, &x.sample(b)?)?.max_abs_diff(&whole.sample(b)?));
        }
    }
    Ok(check("batched-equals-per-sample", worst, 1e-10, "abs error"))
}

fn persistence() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = Network::<f64>::build(&random_spec(&mut rng, false))?;
    let back: Network<f64> = ModelFile::decode(&ModelFile::from_network(&net).encode()?)?.to_network()?;
    let same_bits = back
        .flat_params()
        .iter()
        .zip(net.flat_params())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let arr = IdxArray {
        dims: vec![3, 4, 5],
        data: (0..60).map(|i| (i * 7) as u8).collect(),
    };
    let idx_ok = parse_idx(&crate::io::encode_idx(&arr)?)? == arr;
    Ok(Check {
        name: "model-and-idx-round-trip",
        passed: same_bits && back.spec == net.spec && idx_ok,
        detail: format!("model bit-exact: {same_bits}, idx identical: {idx_ok}"),
    })
}

/// Runs every check; errors inside a check count as failures.
pub fn run_selftest() -> SelftestReport {
    let mut checks = Vec::new();
    let mut push = |name: &'static str, r: Result<Vec<Check>>| match r {
        Ok(c) => checks.extend(c),
        Err(e) => checks.push(Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        }),
    };
    push("conv-lowering-vs-direct", conv_direct().map(|c| vec![c]));
    push("im2col-col2im-adjoint", adjoint().map(|c| vec![c]));
    push("pooling-vs-window-scan", pool_direct().map(|c| vec![c]));
    push("variants", variants_agree());
    push("finite-difference-gradients", gradient_check().map(|c| vec![c]));
    push("batched-equals-per-sample", batch_equivalence().map(|c| vec![c]));
    push("model-and-idx-round-trip", persistence().map(|c| vec![c]));
    SelftestReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        let r = run_selftest();
        assert!(r.passed(), "{r}");
        assert_eq!(r.checks.len(), 8);
    }

    #[test]
    fn random_specs_are_valid_and_varied() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let specs: Vec<_> = (0..20).map(|_| random_spec(&mut rng, false)).collect();
        assert!(specs.iter().all(|s| s.validate().is_ok()));
        assert!(specs.iter().any(|s| s.loss == LossKind::MeanSquaredError));
        assert!(specs.iter().any(|s| s.loss == LossKind::SoftmaxCrossEntropy));
    }
}
