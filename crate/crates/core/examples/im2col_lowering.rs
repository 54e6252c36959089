//! Convolution as one matrix product: unroll a small image into patch
//! columns, multiply by the kernel rows, fold gradients back with col2im.

use vcnn::tensor::{matmul, Dims, Matrix, Tensor};
use vcnn::vectorize::{col2im, im2col};

fn main() -> vcnn::Result<()> {
    let img = Tensor::from_fn(Dims::new(4, 4, 1, 1), |i| i as f64);
    let patches = im2col(&img, (2, 2), 1)?;
    println!("input 4x4, kernel 2x2 -> patch matrix {:?}", patches.mat.shape());
    for r in 0..patches.mat.rows() {
        println!("  {:?}", patches.mat.row(r));
    }

    // Two kernels: a horizontal difference and a box sum.
    let kernels = Matrix::new(2, 4, vec![-1.0, 1.0, -1.0, 1.0, 1.0, 1.0, 1.0, 1.0])?;
    let out = matmul(&kernels, &patches.mat)?;
    for (k, name) in ["difference", "box sum"].iter().enumerate() {
        println!("{name}: {:?}", out.row(k));
    }

    // col2im of an all-ones gradient counts how many patches cover each pixel.
    let ones = Matrix::new(patches.mat.rows(), patches.mat.cols(), vec![1.0; patches.mat.data().len()])?;
    let cover = col2im(&ones, &patches.geometry)?;
    for y in 0..4 {
        println!("coverage row {y}: {:?}", (0..4).map(|x| cover.at(y, x, 0, 0)).collect::<Vec<_>>());
    }
    Ok(())
}
