use ndarray::Array4;
use std::time::Instant;
fn main() {
    // Simulate the planned desk generator: batch 2 at 128x128, widths 12..96.
    let cases = [
        (2usize, 3usize, 12usize, 128usize, 1usize),
        (2, 12, 24, 64, 1),
        (2, 24, 48, 32, 1),
        (2, 48, 96, 16, 1),
        (2, 96, 96, 16, 1),
        (2, 96, 48, 32, 1),
        (2, 48, 24, 64, 1),
        (2, 24, 12, 128, 1),
    ];
    let mut total = 0.0;
    let mut flops = 0.0f64;
    for &(n, c, oc, hw, s) in &cases {
        let x = Array4::<f32>::from_elem((n, c, hw, hw), 0.5);
        let w = Array4::<f32>::from_elem((oc, c, 3, 3), 0.01);
        let t = Instant::now();
        let reps = 5;
        for _ in 0..reps {
            let out = satrans::nn::conv::conv2d_forward(&x.view(), &w.view(), s, 1);
            let dout = Array4::<f32>::ones(out.raw_dim());
            let _dx = satrans::nn::conv::conv2d_backward_input(&dout.view(), &w.view(), s, 1, (hw, hw));
            let _dw = satrans::nn::conv::conv2d_backward_weight(&dout.view(), &x.view(), s, 1, (3, 3));
        }
        let dt = t.elapsed().as_secs_f64() / reps as f64;
        total += dt;
        flops += 3.0 * 2.0 * (n * oc * c * 9 * hw * hw) as f64;
        println!("conv {c}->{oc} @{hw}: {:.1} ms fwd+bwd", dt * 1000.0);
    }
    println!("one G-ish pass: {:.1} ms; effective {:.1} GFLOP/s", total * 1000.0, flops / 5.0 / (total * 5.0) / 1e9 * 5.0);
}
