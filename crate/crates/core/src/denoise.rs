//! Image denoising with a convolution-only network.
//!
//! Every layer is a stride-1 valid convolution, so the output is smaller
//! than the input by `sum(k - 1)` per axis and output pixel `(y, x)` lines
//! up with input pixel `(y + top, x + left)` where `top = sum((kh - 1) / 2)`
//! and `left = sum((kw - 1) / 2)`. Targets and PSNR use that region only.

use crate::error::{Error, Result};
use crate::layers::{LossKind, Targets};
use crate::network::{Layer, LayerSpec, Network, NetworkSpec, TrainConfig, Trainer};
use crate::synth::synth_denoise_pairs;
use crate::tensor::{Dims, Scalar, Tensor};
use crate::variants::Executor;

/// Rejects anything but stride-1 convolutions with an MSE head whose last
/// layer restores the input channel count.
pub fn validate_denoise_spec(spec: &NetworkSpec) -> Result<()> {
    spec.validate()?;
    for (i, l) in spec.layers.iter().enumerate() {
        match *l {
            LayerSpec::Conv { stride: 1, .. } => {}
            LayerSpec::Conv { stride, .. } => {
                return Err(Error::Spec(format!("denoise layer {i}: stride {stride}, only stride 1 keeps pixels aligned")))
            }
            _ => {
                return Err(Error::Spec(format!(
                    "denoise layer {i}: {} layers are not allowed, the network must be convolution-only",
                    l.kind().name()
                )))
            }
        }
    }
    if spec.loss != LossKind::MeanSquaredError {
        return Err(Error::Spec("denoise networks train with the mean-squared-error loss".into()));
    }
    if let Some(LayerSpec::Conv { maps, .. }) = spec.layers.last() {
        if *maps != spec.input[2] {
            return Err(Error::Spec(format!(
                "last layer has {maps} maps but the image has {} channels",
                spec.input[2]
            )));
        }
    }
    Ok(())
}

/// Total kernel margin `(sum(kh - 1), sum(kw - 1))` and the crop offset `(top, left)`.
pub fn margins(spec: &NetworkSpec) -> ([usize; 2], [usize; 2]) {
    let mut total = [0, 0];
    let mut offset = [0, 0];
    for l in &spec.layers {
        if let LayerSpec::Conv { kernel, .. } = l {
            for a in 0..2 {
                total[a] += kernel[a] - 1;
                offset[a] += (kernel[a] - 1) / 2;
            }
        }
    }
    (total, offset)
}

/// Output extents for an `h x w` input; errors when the margin does not fit.
pub fn output_extents(spec: &NetworkSpec, h: usize, w: usize) -> Result<(usize, usize)> {
    let ([mh, mw], _) = margins(spec);
    if h <= mh || w <= mw {
        return Err(Error::Geometry(format!(
            "image {h}x{w} is too small for a network margin of {mh}x{mw}"
        )));
    }
    Ok((h - mh, w - mw))
}

/// The part of `t` that lines up with the network output.
pub fn crop_valid<T: Scalar>(t: &Tensor<T>, spec: &NetworkSpec) -> Result<Tensor<T>> {
    let d = t.dims();
    let (oh, ow) = output_extents(spec, d.height, d.width)?;
    let (_, [top, left]) = margins(spec);
    let out = Dims::new(oh, ow, d.channels, d.batch);
    let mut data = Vec::with_capacity(out.len());
    for b in 0..d.batch {
        for c in 0..d.channels {
            for y in 0..oh {
                let src = d.index(y + top, left, c, b);
                data.extend_from_slice(&t.data()[src..src + ow]);
            }
        }
    }
    Tensor::from_dims(out, data)
}

/// Peak signal-to-noise ratio in dB with peak value 1.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", a.shape(), b.shape()));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// The same conv weights rebuilt for `h x w` inputs.
pub fn resize_input<T: Scalar>(net: &Network<T>, h: usize, w: usize) -> Result<Network<T>> {
    let mut spec = net.spec.clone();
    spec.input[0] = h;
    spec.input[1] = w;
    validate_denoise_spec(&spec)?;
    let mut out = Network::<T>::build(&spec)?;
    for (dst, src) in out.layers.iter_mut().zip(&net.layers) {
        match (dst, src) {
            (Layer::Conv(d), Layer::Conv(s)) => {
                d.weights = s.weights.clone();
                d.bias = s.bias.clone();
            }
            _ => return Err(Error::Spec("denoise networks are convolution-only".into())),
        }
    }
    Ok(out)
}

/// Denoises a batch of images of any size the margin allows; the result is
/// smaller than the input by the total kernel margin.
pub fn denoise_apply<T: Scalar>(net: &Network<T>, images: &Tensor<T>, executor: &Executor) -> Result<Tensor<T>> {
    validate_denoise_spec(&net.spec)?;
    let d = images.dims();
    if d.channels != net.spec.input[2] {
        return Err(Error::shape("denoise input channels", &[d.channels], &[net.spec.input[2]]));
    }
    output_extents(&net.spec, d.height, d.width)?;
    let sized = if [d.height, d.width] == [net.spec.input[0], net.spec.input[1]] {
        net.clone()
    } else {
        resize_input(net, d.height, d.width)?
    };
    executor.forward(&sized, images)
}

/// Mean PSNR over images, before and after denoising.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenoiseScore {
    pub noisy_psnr: f64,
    pub denoised_psnr: f64,
}

impl DenoiseScore {
    pub fn gain(&self) -> f64 {
        self.denoised_psnr - self.noisy_psnr
    }
}

fn mean_psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let n = a.dims().batch;
    let mut total = 0.0;
    for i in 0..n {
        total += psnr(&a.sample(i)?, &b.sample(i)?)?;
    }
    Ok(total / n as f64)
}

/// Adds seeded noise to `clean`, denoises it and scores both against the
/// clean images over the valid region.
pub fn evaluate<T: Scalar>(
    net: &Network<T>,
    clean: &Tensor<T>,
    sigma: f64,
    seed: u64,
    executor: &Executor,
) -> Result<DenoiseScore> {
    let pairs = synth_denoise_pairs(clean, sigma, seed)?;
    let noisy = pairs.images()?;
    let truth = crop_valid(clean, &net.spec)?;
    let out = denoise_apply(net, &noisy, executor)?;
    Ok(DenoiseScore {
        noisy_psnr: mean_psnr(&crop_valid(&noisy, &net.spec)?, &truth)?,
        denoised_psnr: mean_psnr(&out, &truth)?,
    })
}

/// Trains on noisy versions of `clean` (fresh noise every epoch) against
/// the cropped clean images. Returns the network and each epoch's mean loss.
pub fn train_denoiser<T: Scalar>(
    spec: &NetworkSpec,
    clean: &Tensor<T>,
    sigma: f64,
    config: &TrainConfig,
    executor: &Executor,
) -> Result<(Network<T>, Vec<f64>)> {
    validate_denoise_spec(spec)?;
    let d = clean.dims();
    let mut spec = spec.clone();
    spec.input = [d.height, d.width, d.channels];
    let mut net = Network::<T>::build(&spec)?;
    let targets = Targets::Values(crop_valid(clean, &spec)?);
    let mut trainer = Trainer::new(&net, config.clone(), executor)?;
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let noisy = synth_denoise_pairs(clean, sigma, config.seed.wrapping_mul(1000).wrapping_add(epoch as u64))?;
        losses.push(trainer.train_epoch(&mut net, &noisy.images()?, &targets)?);
    }
    Ok((net, losses))
}
