//! Micro-timing of the costliest kernels in isolation.

use std::time::Instant;

use noise2norm::tensor::{ops, Shape, Tensor};

fn time<R>(label: &str, mut f: impl FnMut() -> R) {
    // warm
    let _ = f();
    let n = 20;
    let t = Instant::now();
    for _ in 0..n {
        let _ = f();
    }
    println!("{label:34} {:7.2} ms", t.elapsed().as_secs_f64() * 1e3 / n as f64);
}

fn main() {
    // The heavy encoder conv: 96 -> 32 at 32x32, batch 4.
    let x = Tensor::<f32>::randn(Shape::new(4, 96, 32, 32), 0.0, 1.0, 1).unwrap();
    let w = Tensor::<f32>::randn(Shape::new(32, 96, 3, 3), 0.0, 0.1, 2).unwrap();
    let b = Tensor::<f32>::zeros(Shape::new(1, 32, 1, 1));
    time("conv 96->32 @32x32 fwd", || {
        ops::conv2d(&x, &w, &b, 1, 1, ops::PadMode::Reflect).unwrap()
    });

    let x2 = Tensor::<f32>::randn(Shape::new(4, 384, 8, 8), 0.0, 1.0, 3).unwrap();
    let w2 = Tensor::<f32>::randn(Shape::new(128, 384, 3, 3), 0.0, 0.1, 4).unwrap();
    let b2 = Tensor::<f32>::zeros(Shape::new(1, 128, 1, 1));
    time("conv 384->128 @8x8 fwd", || {
        ops::conv2d(&x2, &w2, &b2, 1, 1, ops::PadMode::Reflect).unwrap()
    });

    let img = Tensor::<f32>::randn(Shape::new(4, 3, 64, 64), 0.0, 1.0, 5).unwrap();
    for sigma in [0.5, 2.0, 8.0] {
        time(&format!("blur sigma={sigma} @64x64x3 b4"), || {
            ops::gaussian_blur(&img, sigma).unwrap()
        });
    }

    let fine = Tensor::<f32>::randn(Shape::new(4, 16, 64, 64), 0.0, 1.0, 6).unwrap();
    let wf = Tensor::<f32>::randn(Shape::new(16, 16, 3, 3), 0.0, 0.1, 7).unwrap();
    let bf = Tensor::<f32>::zeros(Shape::new(1, 16, 1, 1));
    time("conv 16->16 @64x64 fwd", || {
        ops::conv2d(&fine, &wf, &bf, 1, 1, ops::PadMode::Reflect).unwrap()
    });
}
