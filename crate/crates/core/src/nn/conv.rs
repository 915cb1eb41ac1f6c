//! im2col-based 2D convolution kernels (forward, input gradient, weight
//! gradient).
//!
//! All loops have a fixed iteration order and per-sample outputs are written
//! to disjoint slices, so results are bit-deterministic regardless of the
//! rayon thread count.

use ndarray::{Array2, Array4, ArrayView3, ArrayView4, Axis};
use rayon::prelude::*;

/// Output spatial size for a convolution along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Row-major matrix multiply `c = a [m,k] * b [k,n]` (c preallocated, overwritten).
fn gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-major `c += a [m,k] * b [k,n]`.
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds one sample into a `[C*KH*KW, OH*OW]` column matrix (zero padding).
fn im2col(
    x: &ArrayView3<f32>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    col: &mut [f32],
) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let oh = conv_out_len(h, kh, stride, pad);
    let ow = conv_out_len(w, kw, stride, pad);
    let x_slice = x.as_slice().expect("contiguous input");
    col.fill(0.0);
    let owh = oh * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * owh;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = (ci * h + iy as usize) * w;
                    let dst_row = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        col[dst_row + ox] = x_slice[src_row + ix as usize];
                    }
                }
            }
        }
    }
}

/// Folds a column-gradient matrix back onto the input (scatter-add).
fn col2im(
    col: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dx: &mut [f32],
) {
    let oh = conv_out_len(h, kh, stride, pad);
    let ow = conv_out_len(w, kw, stride, pad);
    let owh = oh * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * owh;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (ci * h + iy as usize) * w;
                    let src_row = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[dst_row + ix as usize] += col[src_row + ox];
                    }
                }
            }
        }
    }
}

/// Forward convolution: `x [N,C,H,W] * w [OC,C,KH,KW] -> [N,OC,OH,OW]`.
pub fn conv2d_forward(
    x: &ArrayView4<f32>,
    w: &ArrayView4<f32>,
    stride: usize,
    pad: usize,
) -> Array4<f32> {
    let (n, c, h, iw) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oc, wc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(c, wc, "channel mismatch");
    let oh = conv_out_len(h, kh, stride, pad);
    let ow = conv_out_len(iw, kw, stride, pad);
    let ckk = c * kh * kw;
    let w_std = w.as_standard_layout();
    let w_slice = w_std.as_slice().expect("contiguous weights");

    let mut out = Array4::zeros((n, oc, oh, ow));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(x.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut out_n, x_n)| {
            let mut col = vec![0.0f32; ckk * oh * ow];
            im2col(&x_n, kh, kw, stride, pad, &mut col);
            let out_slice = out_n.as_slice_mut().expect("contiguous output");
            gemm(oc, ckk, oh * ow, w_slice, &col, out_slice);
        });
    out
}

/// Gradient of the convolution output w.r.t. the input.
pub fn conv2d_backward_input(
    dout: &ArrayView4<f32>,
    w: &ArrayView4<f32>,
    stride: usize,
    pad: usize,
    input_hw: (usize, usize),
) -> Array4<f32> {
    let (n, oc, oh, ow) = (
        dout.shape()[0],
        dout.shape()[1],
        dout.shape()[2],
        dout.shape()[3],
    );
    let (_, c, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (h, iw) = input_hw;
    let ckk = c * kh * kw;
    // Transposed weight matrix [CKK, OC] from [OC, CKK].
    let w_std = w.as_standard_layout();
    let w_slice = w_std.as_slice().unwrap();
    let mut wt = vec![0.0f32; ckk * oc];
    for o in 0..oc {
        for j in 0..ckk {
            wt[j * oc + o] = w_slice[o * ckk + j];
        }
    }

    let mut dx = Array4::zeros((n, c, h, iw));
    dx.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(dout.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut dx_n, dout_n)| {
            let dout_std = dout_n.as_standard_layout();
            let dout_slice = dout_std.as_slice().unwrap();
            let mut col = vec![0.0f32; ckk * oh * ow];
            gemm(ckk, oc, oh * ow, &wt, dout_slice, &mut col);
            let dx_slice = dx_n.as_slice_mut().unwrap();
            col2im(&col, c, h, iw, kh, kw, stride, pad, dx_slice);
        });
    dx
}

/// Gradient of the convolution output w.r.t. the weights; accumulated over
/// the batch in index order.
pub fn conv2d_backward_weight(
    dout: &ArrayView4<f32>,
    x: &ArrayView4<f32>,
    stride: usize,
    pad: usize,
    kernel_hw: (usize, usize),
) -> Array4<f32> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let (oc, oh, ow) = (dout.shape()[1], dout.shape()[2], dout.shape()[3]);
    let (kh, kw) = kernel_hw;
    let ckk = c * kh * kw;

    // Per-sample dW computed in parallel, reduced in batch order.
    let partials: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x_n = x.index_axis(Axis(0), i);
            let dout_n = dout.index_axis(Axis(0), i);
            let mut col = vec![0.0f32; ckk * oh * ow];
            im2col(&x_n, kh, kw, stride, pad, &mut col);
            // dW_n [OC, CKK] = dout_n [OC, OHOW] * col^T [OHOW, CKK]
            let dout_std = dout_n.as_standard_layout();
            let dout_slice = dout_std.as_slice().unwrap();
            let mut colt = vec![0.0f32; oh * ow * ckk];
            for j in 0..ckk {
                for p in 0..oh * ow {
                    colt[p * ckk + j] = col[j * oh * ow + p];
                }
            }
            let mut dw = vec![0.0f32; oc * ckk];
            gemm(oc, oh * ow, ckk, dout_slice, &colt, &mut dw);
            dw
        })
        .collect();

    let mut acc = vec![0.0f32; oc * ckk];
    for dw in &partials {
        for (a, b) in acc.iter_mut().zip(dw.iter()) {
            *a += *b;
        }
    }
    Array4::from_shape_vec((oc, c, kh, kw), acc).unwrap()
}

/// Row-major dense matmul used by the graph: `[m,k] x [k,n] -> [m,n]`.
pub fn matmul(a: &Array2<f32>, b: &Array2<f32>) -> Array2<f32> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "inner dimension mismatch");
    let a_std = a.as_standard_layout();
    let b_std = b.as_standard_layout();
    let mut c = Array2::zeros((m, n));
    gemm(
        m,
        k,
        n,
        a_std.as_slice().unwrap(),
        b_std.as_slice().unwrap(),
        c.as_slice_mut().unwrap(),
    );
    c
}

/// `c += a^T [k,m]^T x b [k,n]` convenience for backward passes.
pub fn matmul_at_b_acc(a: &Array2<f32>, b: &Array2<f32>, c: &mut Array2<f32>) {
    let (k, m) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2);
    assert_eq!(c.shape(), [m, n]);
    // Transpose a into row-major [m,k].
    let a_std = a.as_standard_layout();
    let a_slice = a_std.as_slice().unwrap();
    let mut at = vec![0.0f32; m * k];
    for i in 0..k {
        for j in 0..m {
            at[j * k + i] = a_slice[i * m + j];
        }
    }
    let b_std = b.as_standard_layout();
    gemm_acc(
        m,
        k,
        n,
        &at,
        b_std.as_slice().unwrap(),
        c.as_slice_mut().unwrap(),
    );
}

/// `c += a [m,k] x b^T [n,k]^T`.
pub fn matmul_a_bt_acc(a: &Array2<f32>, b: &Array2<f32>, c: &mut Array2<f32>) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (n, k2) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2);
    assert_eq!(c.shape(), [m, n]);
    let b_std = b.as_standard_layout();
    let b_slice = b_std.as_slice().unwrap();
    let mut bt = vec![0.0f32; k * n];
    for i in 0..n {
        for j in 0..k {
            bt[j * n + i] = b_slice[i * k + j];
        }
    }
    let a_std = a.as_standard_layout();
    gemm_acc(
        m,
        k,
        n,
        a_std.as_slice().unwrap(),
        &bt,
        c.as_slice_mut().unwrap(),
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(
        x: &Array4<f32>,
        w: &Array4<f32>,
        stride: usize,
        pad: usize,
    ) -> Array4<f32> {
        let (n, c, h, iw) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oc, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let oh = conv_out_len(h, kh, stride, pad);
        let ow = conv_out_len(iw, kw, stride, pad);
        let mut out = Array4::zeros((n, oc, oh, ow));
        for ni in 0..n {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0f64;
                        for ci in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize || ix < 0 || ix >= iw as isize {
                                        continue;
                                    }
                                    acc += (x[[ni, ci, iy as usize, ix as usize]]
                                        * w[[o, ci, ky, kx]])
                                        as f64;
                                }
                            }
                        }
                        out[[ni, o, oy, ox]] = acc as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(stride, pad) in &[(1usize, 1usize), (2, 1), (1, 0), (2, 0)] {
            let x = Array4::from_shape_fn((2, 3, 7, 6), |_| rng.gen_range(-1.0..1.0f32));
            let w = Array4::from_shape_fn((4, 3, 3, 3), |_| rng.gen_range(-1.0..1.0f32));
            let fast = conv2d_forward(&x.view(), &w.view(), stride, pad);
            let slow = naive_conv(&x, &w, stride, pad);
            let diff = (&fast - &slow).iter().fold(0.0f32, |m, v| m.max(v.abs()));
            assert!(diff < 1e-4, "stride={stride} pad={pad} diff={diff}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array4::from_shape_fn((1, 2, 5, 5), |_| rng.gen_range(-1.0..1.0f32));
        let w = Array4::from_shape_fn((3, 2, 3, 3), |_| rng.gen_range(-1.0..1.0f32));
        // Loss = sum of outputs; dL/dout = ones.
        let out = conv2d_forward(&x.view(), &w.view(), 2, 1);
        let dout = Array4::ones(out.raw_dim());
        let dx = conv2d_backward_input(&dout.view(), &w.view(), 2, 1, (5, 5));
        let h = 1e-2f32;
        for idx in [[0, 0, 0, 0], [0, 1, 2, 3], [0, 0, 4, 4]] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fp: f32 = conv2d_forward(&xp.view(), &w.view(), 2, 1).sum();
            let fm: f32 = conv2d_forward(&xm.view(), &w.view(), 2, 1).sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (dx[idx] - fd).abs() < 1e-2,
                "idx {idx:?}: analytic {} vs fd {fd}",
                dx[idx]
            );
        }
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array4::from_shape_fn((2, 2, 5, 5), |_| rng.gen_range(-1.0..1.0f32));
        let w = Array4::from_shape_fn((2, 2, 3, 3), |_| rng.gen_range(-1.0..1.0f32));
        let out = conv2d_forward(&x.view(), &w.view(), 1, 1);
        let dout = Array4::ones(out.raw_dim());
        let dw = conv2d_backward_weight(&dout.view(), &x.view(), 1, 1, (3, 3));
        let h = 1e-2f32;
        for idx in [[0, 0, 0, 0], [1, 1, 2, 2], [0, 1, 1, 0]] {
            let mut wp = w.clone();
            wp[idx] += h;
            let mut wm = w.clone();
            wm[idx] -= h;
            let fp: f32 = conv2d_forward(&x.view(), &wp.view(), 1, 1).sum();
            let fm: f32 = conv2d_forward(&x.view(), &wm.view(), 1, 1).sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (dw[idx] - fd).abs() < 2e-2,
                "idx {idx:?}: analytic {} vs fd {fd}",
                dw[idx]
            );
        }
    }

    #[test]
    fn matmul_matches_ndarray_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Array2::from_shape_fn((4, 6), |_| rng.gen_range(-1.0..1.0f32));
        let b = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-1.0..1.0f32));
        let c = matmul(&a, &b);
        let expect = a.dot(&b);
        let diff = (&c - &expect).iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(diff < 1e-5);
    }
}
