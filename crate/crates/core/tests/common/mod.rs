//! Brute-force references shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcnn::layers::Targets;
use vcnn::network::Network;
use vcnn::tensor::{Dims, Matrix, Tensor};
use vcnn::variants::{Executor, Variant};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, dims: Dims) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn naive_matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    Matrix::new(m, n, out).unwrap()
}

/// Valid cross-correlation of every sample with `maps` kernels laid out as
/// `w[m][c][i][j]`, plus bias, before the activation.
pub fn naive_conv(
    f: &Tensor<f64>,
    w: &[f64],
    bias: &[f64],
    maps: usize,
    kernel: (usize, usize),
    stride: usize,
) -> Tensor<f64> {
    let d = f.dims();
    let (kh, kw) = kernel;
    let oh = (d.height - kh) / stride + 1;
    let ow = (d.width - kw) / stride + 1;
    let out = Dims::new(oh, ow, maps, d.batch);
    let mut data = vec![0.0; out.len()];
    for b in 0..d.batch {
        for m in 0..maps {
            for y in 0..oh {
                for x in 0..ow {
                    let mut s = bias[m];
                    for c in 0..d.channels {
                        for i in 0..kh {
                            for j in 0..kw {
                                s += w[((m * d.channels + c) * kh + i) * kw + j] * f.at(y * stride + i, x * stride + j, c, b);
                            }
                        }
                    }
                    data[out.index(y, x, m, b)] = s;
                }
            }
        }
    }
    Tensor::from_dims(out, data).unwrap()
}

fn loss(exec: &Executor, net: &Network<f64>, x: &Tensor<f64>, t: &Targets<f64>) -> f64 {
    exec.run_batch(net, x, Some(t)).unwrap().loss.unwrap()
}

/// Largest relative error of backpropagated parameter and input gradients
/// against central differences of the batch loss.
pub fn finite_difference(net: &Network<f64>, x: &Tensor<f64>, t: &Targets<f64>, h: f64) -> (f64, f64) {
    let exec = Executor::new(Variant::Imp6);
    let analytic = exec.run_batch(net, x, Some(t)).unwrap().gradients.unwrap().flatten();
    let mut probe = net.clone();
    let mut param_err: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let p0 = *probe.param_mut(i).unwrap();
        *probe.param_mut(i).unwrap() = p0 + h;
        let up = loss(&exec, &probe, x, t);
        *probe.param_mut(i).unwrap() = p0 - h;
        let down = loss(&exec, &probe, x, t);
        *probe.param_mut(i).unwrap() = p0;
        param_err = param_err.max(rel_err(a, (up - down) / (2.0 * h)));
    }

    let trace = exec.forward_trace(net, x).unwrap();
    let g_out = net.loss.gradient(trace.output(), t).unwrap();
    let (g_in, _) = exec.backward_trace(net, &trace, g_out).unwrap();
    let mut xp = x.clone();
    let mut input_err: f64 = 0.0;
    for i in 0..x.len() {
        let v = xp.data()[i];
        xp.data_mut()[i] = v + h;
        let up = loss(&exec, net, &xp, t);
        xp.data_mut()[i] = v - h;
        let down = loss(&exec, net, &xp, t);
        xp.data_mut()[i] = v;
        input_err = input_err.max(rel_err(g_in.data()[i], (up - down) / (2.0 * h)));
    }
    (param_err, input_err)
}
