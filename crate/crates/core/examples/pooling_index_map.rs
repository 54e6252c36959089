//! Max pooling through a precomputed index map, and the argmax scatter of
//! its backward pass.

use vcnn::tensor::{Dims, Tensor};
use vcnn::vectorize::{build_pool_map, pool_backward, pool_forward, PoolBackward, PoolGeometry, PoolMode};

fn main() -> vcnn::Result<()> {
    let d = Dims::new(4, 4, 1, 1);
    let f = Tensor::from_fn(d, |i| ((i * 7) % 11) as f64);
    let geom = PoolGeometry::new(d, (2, 2), 2, PoolMode::Max)?;

    let map = build_pool_map(&geom);
    println!("{} input cells -> {} windows", map.source_len(), map.target_len());
    for t in 0..map.target_len() {
        println!("  window {t}: sources {:?}", map.sources_of(t));
    }

    let (out, arg) = pool_forward(&f, &geom)?;
    println!("input  {:?}", f.data());
    println!("pooled {:?}, winners {:?}", out.data(), arg.0);

    let grad = Tensor::from_fn(out.dims(), |i| (i + 1) as f64);
    let back = pool_backward(&grad, &geom, &arg, PoolBackward::Exact)?;
    println!("gradient routed to winners: {:?}", back.data());
    let nn = pool_backward(&grad, &geom, &arg, PoolBackward::PaperNn)?;
    println!("nearest-neighbour upscaling:  {:?}", nn.data());
    Ok(())
}
