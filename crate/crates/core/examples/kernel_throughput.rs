//! Measures convolution throughput for the three passes at a given shape
//! (best of three runs each).
//!
//! ```bash
//! cargo run --release --example kernel_throughput -- 128 128 512
//! ```
//!
//! Set `OVERSEG_THREADS` to let the kernels use more than one core.

use std::time::Instant;

use overseg::kernels::conv::{self, Geometry};
use overseg::Rng;

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (cin, cout, side) = match args.as_slice() {
        [a, b, c, ..] => (*a, *b, *c),
        _ => (64, 64, 256),
    };
    let g = Geometry {
        cin,
        cout,
        spatial: [1, side, side],
        kernel: [1, 3, 3],
    };
    let mut rng = Rng::new(1);
    let x: Vec<f32> = (0..cin * g.voxels()).map(|_| rng.next_f32() - 0.5).collect();
    let w: Vec<f32> = (0..cout * g.patch_len()).map(|_| rng.next_f32() - 0.5).collect();
    let b = vec![0.1f32; cout];
    let mut y = vec![0f32; cout * g.voxels()];
    let mut dx = vec![0f32; cin * g.voxels()];
    let mut dw = vec![0f32; w.len()];
    let flops = 2.0 * (cin * cout * 9 * g.voxels()) as f64;

    let best = |f: &mut dyn FnMut()| {
        (0..3)
            .map(|_| {
                let t = Instant::now();
                f();
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let f = best(&mut || conv::forward(g, &x, &w, Some(&b), &mut y));
    let bi = best(&mut || conv::backward_input(g, &y, &w, &mut dx));
    let bw = best(&mut || conv::backward_weight(g, &x, &y, &mut dw));
    println!("conv {cin}->{cout} at {side}x{side}");
    for (name, s) in [("forward", f), ("input grad", bi), ("weight grad", bw)] {
        println!("  {name:<12} {:8.3} s  {:6.1} GFLOP/s", s, flops / s / 1e9);
    }
}
