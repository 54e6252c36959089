//! Seeded synthetic data: handwriting-like digit images in the MNIST IDX
//! layout, piecewise-smooth grayscale scenes, and clean/noisy pairs.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::idx::{write_idx, IdxArray};
use crate::io::{Dataset, Labels};
use crate::tensor::{Dims, Scalar, Tensor};

pub const DIGIT_SIDE: usize = 28;

/// File names used for the four IDX files, as in the MNIST distribution.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64) -> Stroke {
    let steps = (((to_deg - from_deg).abs() / 15.0).ceil() as usize).max(2);
    (0..=steps)
        .map(|i| {
            let a = (from_deg + (to_deg - from_deg) * i as f64 / steps as f64) * PI / 180.0;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

fn chain(mut a: Stroke, b: Stroke) -> Stroke {
    a.extend(b);
    a
}

/// Glyph skeletons in a unit box, x to the right and y downwards.
fn glyph(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.28, 0.4, 0.0, 360.0)],
        1 => vec![vec![(0.36, 0.24), (0.52, 0.1), (0.52, 0.9)]],
        2 => vec![chain(arc(0.5, 0.32, 0.24, 0.22, 190.0, 380.0), vec![(0.24, 0.9), (0.8, 0.9)])],
        3 => vec![arc(0.48, 0.3, 0.22, 0.2, 200.0, 450.0), arc(0.48, 0.7, 0.25, 0.2, 270.0, 520.0)],
        4 => vec![vec![(0.64, 0.9), (0.64, 0.1), (0.2, 0.64), (0.82, 0.64)]],
        5 => vec![chain(vec![(0.76, 0.1), (0.34, 0.1), (0.3, 0.46)], arc(0.5, 0.66, 0.25, 0.23, 235.0, 500.0))],
        6 => vec![chain(vec![(0.7, 0.1), (0.46, 0.24)], arc(0.5, 0.66, 0.22, 0.23, 200.0, 560.0))],
        7 => vec![vec![(0.2, 0.1), (0.8, 0.1), (0.42, 0.9)]],
        8 => vec![arc(0.5, 0.29, 0.19, 0.19, 0.0, 360.0), arc(0.5, 0.69, 0.23, 0.21, 0.0, 360.0)],
        _ => vec![arc(0.5, 0.33, 0.21, 0.21, 0.0, 360.0), vec![(0.71, 0.33), (0.62, 0.9)]],
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders one digit as 28x28 bytes with a random affine pose, a smooth
/// warp, stroke width and gaps, control-point jitter, clutter strokes and
/// background noise.
pub fn render_digit(digit: u8, rng: &mut impl Rng) -> Vec<u8> {
    let n = DIGIT_SIDE;
    let rot = rng.random_range(-0.35..0.35f64);
    let shear = rng.random_range(-0.35..0.35f64);
    let (sx, sy) = (rng.random_range(0.65..1.1f64), rng.random_range(0.72..1.08f64));
    let (tx, ty) = (rng.random_range(-2.5..2.5f64), rng.random_range(-2.5..2.5f64));
    let (wa, wf, wp) = (rng.random_range(0.0..0.06f64), rng.random_range(2.0..5.0f64), rng.random_range(0.0..2.0 * PI));
    let radius = rng.random_range(0.7..2.1f64);
    let (c, s) = (rot.cos(), rot.sin());
    let jitter = 0.06;
    let pose = |(u, v): (f64, f64)| {
        let (u, v) = (u + wa * (wf * v + wp).sin(), v + wa * (wf * u + wp).cos());
        let (x, y) = ((u - 0.5) * sx + shear * (v - 0.5), (v - 0.5) * sy);
        let (x, y) = (c * x - s * y, s * x + c * y);
        (n as f64 / 2.0 + 20.0 * x + tx, n as f64 / 2.0 + 20.0 * y + ty)
    };
    let mut ink = vec![0.0f64; n * n];
    let mut draw = |a: (f64, f64), b: (f64, f64), radius: f64, level: f64| {
        let pad = radius + 1.5;
        let x0 = (a.0.min(b.0) - pad).floor().max(0.0) as usize;
        let x1 = ((a.0.max(b.0) + pad).ceil().max(0.0) as usize).min(n - 1);
        let y0 = (a.1.min(b.1) - pad).floor().max(0.0) as usize;
        let y1 = ((a.1.max(b.1) + pad).ceil().max(0.0) as usize).min(n - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = segment_distance((x as f64 + 0.5, y as f64 + 0.5), a, b);
                let cell = &mut ink[y * n + x];
                *cell = cell.max(level * (1.0 - (d - radius)).clamp(0.0, 1.0));
            }
        }
    };
    let level = rng.random_range(0.6..1.0f64);
    for stroke in glyph(digit) {
        let pts: Vec<(f64, f64)> = stroke
            .into_iter()
            .map(|(u, v)| pose((u + rng.random_range(-jitter..jitter), v + rng.random_range(-jitter..jitter))))
            .collect();
        for w in pts.windows(2) {
            if rng.random_bool(0.04) {
                continue;
            }
            draw(w[0], w[1], radius, level);
        }
    }
    for _ in 0..rng.random_range(0..3) {
        let a = (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64));
        let len = rng.random_range(2.0..7.0f64);
        let t = rng.random_range(0.0..2.0 * PI);
        let b = (a.0 + len * t.cos(), a.1 + len * t.sin());
        draw(a, b, rng.random_range(0.5..1.2), rng.random_range(0.2..0.6));
    }
    let noise = Normal::<f64>::new(0.0, rng.random_range(0.02..0.12)).expect("valid sigma");
    ink.iter()
        .map(|&v| ((v + noise.sample(rng).max(0.0)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// `n` digit images (`[n, 28, 28]`) and their labels (`[n]`), classes cycling 0..9.
pub fn synth_digits(n: usize, seed: u64) -> (IdxArray, IdxArray) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * DIGIT_SIDE * DIGIT_SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let d = (i % 10) as u8;
        pixels.extend(render_digit(d, &mut rng));
        labels.push(d);
    }
    (
        IdxArray {
            dims: vec![n, DIGIT_SIDE, DIGIT_SIDE],
            data: pixels,
        },
        IdxArray {
            dims: vec![n],
            data: labels,
        },
    )
}

/// Writes a train/test pair of synthetic digit sets under `dir` using the
/// MNIST file names; returns the four paths in [`MNIST_FILES`] order.
pub fn write_synthetic_mnist(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<[PathBuf; 4]> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = MNIST_FILES.map(|f| dir.join(f));
    let (ti, tl) = synth_digits(n_train, seed);
    let (vi, vl) = synth_digits(n_test, seed.wrapping_add(0x5eed_0000));
    for (p, a) in paths.iter().zip([&ti, &tl, &vi, &vl]) {
        write_idx(p, a)?;
    }
    Ok(paths)
}

/// Piecewise-smooth grayscale scenes: a linear gradient background with
/// overlapping rectangles and disks of smoothly varying intensity.
pub fn smooth_scenes<T: Scalar>(n: usize, height: usize, width: usize, seed: u64) -> Result<Tensor<T>> {
    let dims = Dims::new(height, width, 1, n);
    if dims.len() == 0 {
        return Err(Error::InvalidShape(dims.to_shape()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let mut data = Vec::with_capacity(dims.len());
    for _ in 0..n {
        let base = rng.random_range(0.2..0.8f64);
        let (gx, gy) = (rng.random_range(-0.3..0.3f64), rng.random_range(-0.3..0.3f64));
        let mut img: Vec<f64> = (0..height * width)
            .map(|i| base + gx * ((i % width) as f64 / w - 0.5) + gy * ((i / width) as f64 / h - 0.5))
            .collect();
        for _ in 0..rng.random_range(2..6) {
            let level = rng.random_range(0.0..1.0f64);
            let (sx, sy) = (rng.random_range(-0.2..0.2f64), rng.random_range(-0.2..0.2f64));
            let (cx, cy) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
            let disk = rng.random_bool(0.5);
            let (ax, ay) = (rng.random_range(0.1..0.35) * w, rng.random_range(0.1..0.35) * h);
            for y in 0..height {
                for x in 0..width {
                    let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    // Signed distance in pixels, negative inside.
                    let sd = if disk {
                        ((px / ax).powi(2) + (py / ay).powi(2)).sqrt().mul_add(ax.min(ay), -ax.min(ay))
                    } else {
                        (px.abs() - ax).max(py.abs() - ay)
                    };
                    let cover = (0.5 - sd).clamp(0.0, 1.0);
                    if cover > 0.0 {
                        let v = level + sx * px / w + sy * py / h;
                        let cell = &mut img[y * width + x];
                        *cell = *cell * (1.0 - cover) + v * cover;
                    }
                }
            }
        }
        data.extend(img.into_iter().map(|v| T::from_f64(v.clamp(0.0, 1.0))));
    }
    Tensor::from_dims(dims, data)
}

/// Seeded `N(0, sigma^2)` samples.
pub fn gaussian_noise(len: usize, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("noise sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len).map(|_| normal.sample(&mut rng)).collect())
}

/// Noisy inputs `clip(clean + N(0, sigma^2), 0, 1)` paired with the clean
/// images as targets.
pub fn synth_denoise_pairs<T: Scalar>(clean: &Tensor<T>, sigma: f64, seed: u64) -> Result<Dataset<T>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be non-negative, got {sigma}")));
    }
    let noise = gaussian_noise(clean.len(), sigma, seed)?;
    let noisy = clean
        .data()
        .iter()
        .zip(&noise)
        .map(|(&c, &e)| T::from_f64((c.as_f64() + e).clamp(0.0, 1.0)))
        .collect();
    let d = clean.dims();
    Dataset::new(
        d.with_batch(1),
        noisy,
        Labels::Images {
            dims: d,
            data: clean.data().to_vec(),
        },
        "denoise",
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digits_are_seeded_and_balanced() {
        let (a, la) = synth_digits(20, 4);
        let (b, _) = synth_digits(20, 4);
        assert_eq!(a, b);
        assert_eq!(a.dims, vec![20, 28, 28]);
        assert_eq!(la.data.iter().filter(|&&l| l == 3).count(), 2);
        let (c, _) = synth_digits(20, 5);
        assert_ne!(a, c);
    }

    #[test]
    fn digits_have_ink_inside_the_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for d in 0..10 {
            let img = render_digit(d, &mut rng);
            let ink = img.iter().filter(|&&v| v > 128).count();
            assert!((20..400).contains(&ink), "digit {d}: {ink} inked pixels");
        }
    }

    #[test]
    fn scenes_lie_in_unit_range() {
        let s = smooth_scenes::<f64>(4, 16, 20, 1).unwrap();
        assert_eq!(s.shape(), &[16, 20, 1, 4]);
        assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let s = smooth_scenes::<f32>(2, 8, 8, 2).unwrap();
        let d = synth_denoise_pairs(&s, 0.0, 3).unwrap();
        assert_eq!(d.pixels, s.data());
    }

    #[test]
    fn same_seed_same_noise() {
        let s = smooth_scenes::<f64>(2, 8, 8, 2).unwrap();
        assert_eq!(synth_denoise_pairs(&s, 0.1, 3).unwrap(), synth_denoise_pairs(&s, 0.1, 3).unwrap());
        assert_ne!(synth_denoise_pairs(&s, 0.1, 3).unwrap(), synth_denoise_pairs(&s, 0.1, 4).unwrap());
        assert!(synth_denoise_pairs(&s, -0.1, 3).is_err());
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let sigma = 0.1;
        let e = gaussian_noise(1_000_000, sigma, 11).unwrap();
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (e.len() - 1) as f64;
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "{var}");
    }
}
