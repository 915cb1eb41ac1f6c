//! A small reverse-mode autodiff tape over `f32` tensors.
//!
//! Each training step builds a fresh [`Graph`]; parameters enter as leaves
//! bound through a [`super::params::ParamStore`]. Backward sweeps the tape in
//! reverse creation order, which is a valid topological order by construction.
//!
//! Determinism: every op uses fixed iteration order, and the conv kernels only
//! parallelize over disjoint output slices, so repeated runs produce identical
//! bits on the same machine.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix1, Ix2, Ix3, Ix4, IxDyn};

use super::conv;

/// Dynamic-rank tensor used by the tape.
pub type Arr = ArrayD<f32>;

/// Handle to a node in the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Detach(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var, f32),
    BiasChannel(Var, Var),
    BiasRow(Var, Var),
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    UpsampleNearest2(Var),
    LeakyRelu(Var, f32),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    SumAll(Var),
    MeanAll(Var),
    StandardizeSpatial(Var, f32),
    ConcatChannels(Var, Var),
    ConcatRows(Var, Var),
    GatherPatches {
        x: Var,
        positions: Arc<Vec<usize>>,
    },
    RegionBroadcast {
        values: Var,
        labels: Arc<Vec<ndarray::Array2<u8>>>,
    },
    RegionMean {
        x: Var,
        sample: usize,
        pixels: Arc<Vec<(usize, usize)>>,
    },
    L2NormRows(Var),
    BatMulNT(Var, Var),
    MeanCeDiag(Var),
    GradScale(Var, f32),
    HypotMag(Var, Var),
    ReplicatePad1(Var),
    Reshape(Var),
    StackRows(Vec<Var>),
}

struct Node {
    value: Arr,
    op: Op,
    needs_grad: bool,
}

/// The autodiff tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Arr>>,
    bound_params: BTreeMap<usize, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Arr, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn any_needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.needs(*v))
    }

    /// Creates a leaf node.
    pub fn leaf(&mut self, value: Arr, needs_grad: bool) -> Var {
        self.push(value, Op::Leaf, needs_grad)
    }

    /// Creates a constant (non-differentiable) leaf.
    pub fn constant(&mut self, value: Arr) -> Var {
        self.leaf(value, false)
    }

    pub(crate) fn bind_param(&mut self, id: usize, value: &Arr, trainable: bool) -> Var {
        if let Some(&v) = self.bound_params.get(&id) {
            return v;
        }
        let var = self.leaf(value.clone(), trainable);
        self.bound_params.insert(id, var);
        var
    }

    /// Parameters bound into this graph, in parameter-id order.
    pub(crate) fn bound_params(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.bound_params.iter().map(|(&id, &v)| (id, v))
    }

    pub fn value(&self, v: Var) -> &Arr {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f32 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        *val.iter().next().unwrap()
    }

    pub fn grad(&self, v: Var) -> Option<&Arr> {
        self.grads[v.0].as_ref()
    }

    // ---- ops ----------------------------------------------------------

    /// Stops gradient flow; the value is passed through unchanged.
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::Detach(a), false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let value = self.value(a) + self.value(b);
        let ng = self.any_needs(&[a, b]);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let value = self.value(a) - self.value(b);
        let ng = self.any_needs(&[a, b]);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let value = self.value(a) * self.value(b);
        let ng = self.any_needs(&[a, b]);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f32) -> Var {
        let value = self.value(a).mapv(|v| v * k);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f32) -> Var {
        let value = self.value(a).mapv(|v| v + k);
        let ng = self.needs(a);
        self.push(value, Op::AddScalar(a, k), ng)
    }

    /// `x [N,C,H,W] + bias [C]`, broadcast over batch and space.
    pub fn bias_channel(&mut self, x: Var, b: Var) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let bv = self.value(b).view().into_dimensionality::<Ix1>().unwrap();
        assert_eq!(xv.shape()[1], bv.len());
        let mut out = xv.to_owned();
        for mut sample in out.outer_iter_mut() {
            for (c, mut plane) in sample.outer_iter_mut().enumerate() {
                plane += bv[c];
            }
        }
        let ng = self.any_needs(&[x, b]);
        self.push(out.into_dyn(), Op::BiasChannel(x, b), ng)
    }

    /// `x [R,F] + bias [F]`, broadcast over rows.
    pub fn bias_row(&mut self, x: Var, b: Var) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.value(b).view().into_dimensionality::<Ix1>().unwrap();
        assert_eq!(xv.shape()[1], bv.len());
        let out = &xv + &bv.insert_axis(Axis(0));
        let ng = self.any_needs(&[x, b]);
        self.push(out.into_dyn(), Op::BiasRow(x, b), ng)
    }

    /// `a [M,K] x b [K,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.value(b).view().into_dimensionality::<Ix2>().unwrap();
        let out = conv::matmul(&av.to_owned(), &bv.to_owned());
        let ng = self.any_needs(&[a, b]);
        self.push(out.into_dyn(), Op::MatMul(a, b), ng)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let wv = self.value(w).view().into_dimensionality::<Ix4>().unwrap();
        let out = conv::conv2d_forward(&xv, &wv, stride, pad);
        let ng = self.any_needs(&[x, w]);
        self.push(out.into_dyn(), Op::Conv2d { x, w, stride, pad }, ng)
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let mut out = Array4::zeros((n, c, h * 2, w * 2));
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x2 in 0..w {
                        let v = xv[[ni, ci, y, x2]];
                        out[[ni, ci, 2 * y, 2 * x2]] = v;
                        out[[ni, ci, 2 * y, 2 * x2 + 1]] = v;
                        out[[ni, ci, 2 * y + 1, 2 * x2]] = v;
                        out[[ni, ci, 2 * y + 1, 2 * x2 + 1]] = v;
                    }
                }
            }
        }
        let ng = self.needs(x);
        self.push(out.into_dyn(), Op::UpsampleNearest2(x), ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let value = self.value(x).mapv(|v| if v > 0.0 { v } else { slope * v });
        let ng = self.needs(x);
        self.push(value, Op::LeakyRelu(x, slope), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let ng = self.needs(x);
        self.push(value, Op::Sigmoid(x), ng)
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .mapv(|v| v.max(0.0) + (-v.abs()).exp().ln_1p());
        let ng = self.needs(x);
        self.push(value, Op::Softplus(x), ng)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f32::abs);
        let ng = self.needs(x);
        self.push(value, Op::Abs(x), ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().map(|&v| v as f64).sum();
        let value = ArrayD::from_elem(IxDyn(&[1]), s as f32);
        let ng = self.needs(x);
        self.push(value, Op::SumAll(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let len = self.value(x).len();
        let s: f64 = self.value(x).iter().map(|&v| v as f64).sum();
        let value = ArrayD::from_elem(IxDyn(&[1]), (s / len as f64) as f32);
        let ng = self.needs(x);
        self.push(value, Op::MeanAll(x), ng)
    }

    /// Per-channel spatial standardization: zero mean, unit variance over the
    /// spatial axes of each `(sample, channel)` plane, no learned affine.
    /// Constant planes standardize to exactly zero.
    pub fn standardize_spatial(&mut self, x: Var, eps: f32) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let m = (h * w) as f64;
        let mut out = Array4::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let plane = xv.index_axis(Axis(0), ni);
                let plane = plane.index_axis(Axis(0), ci);
                let mean: f64 = plane.iter().map(|&v| v as f64).sum::<f64>() / m;
                let var: f64 =
                    plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / m;
                let inv_std = 1.0 / (var + eps as f64).sqrt();
                for y in 0..h {
                    for x2 in 0..w {
                        out[[ni, ci, y, x2]] =
                            ((plane[[y, x2]] as f64 - mean) * inv_std) as f32;
                    }
                }
            }
        }
        let ng = self.needs(x);
        self.push(out.into_dyn(), Op::StandardizeSpatial(x, eps), ng)
    }

    /// Concatenates two `[N,C,H,W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).view().into_dimensionality::<Ix4>().unwrap();
        let bv = self.value(b).view().into_dimensionality::<Ix4>().unwrap();
        let out = ndarray::concatenate(Axis(1), &[av, bv]).unwrap();
        let ng = self.any_needs(&[a, b]);
        self.push(out.into_dyn(), Op::ConcatChannels(a, b), ng)
    }

    /// Concatenates two `[R,F]` matrices along the column axis.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.value(b).view().into_dimensionality::<Ix2>().unwrap();
        assert_eq!(av.shape()[0], bv.shape()[0]);
        let out = ndarray::concatenate(Axis(1), &[av, bv]).unwrap();
        let ng = self.any_needs(&[a, b]);
        self.push(out.into_dyn(), Op::ConcatRows(a, b), ng)
    }

    /// Samples feature vectors at flattened spatial positions (shared across
    /// the batch): `x [N,C,H,W] -> [N,P,C]`.
    pub fn gather_patches(&mut self, x: Var, positions: Arc<Vec<usize>>) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let p = positions.len();
        let mut out = ndarray::Array3::zeros((n, p, c));
        for ni in 0..n {
            for (pi, &pos) in positions.iter().enumerate() {
                let (y, x2) = (pos / w, pos % w);
                assert!(y < h);
                for ci in 0..c {
                    out[[ni, pi, ci]] = xv[[ni, ci, y, x2]];
                }
            }
        }
        let ng = self.needs(x);
        self.push(out.into_dyn(), Op::GatherPatches { x, positions }, ng)
    }

    /// Broadcasts one row of `values [K,C]` to every pixel that carries the
    /// corresponding label: output `[N,C,H,W]` with
    /// `out[n,:,y,x] = values[labels[n][y,x], :]`.
    ///
    /// Positions with equal labels receive bitwise-identical vectors, which is
    /// what makes modulation routing exactly local.
    pub fn region_broadcast(&mut self, values: Var, labels: Arc<Vec<Array2<u8>>>) -> Var {
        let vv = self.value(values).view().into_dimensionality::<Ix2>().unwrap();
        let (k, c) = (vv.shape()[0], vv.shape()[1]);
        let n = labels.len();
        let (h, w) = (labels[0].shape()[0], labels[0].shape()[1]);
        let mut out = Array4::zeros((n, c, h, w));
        for (ni, lab) in labels.iter().enumerate() {
            assert_eq!(lab.shape(), [h, w]);
            for y in 0..h {
                for x2 in 0..w {
                    let l = lab[[y, x2]] as usize;
                    assert!(l < k, "label {l} out of range for {k} style rows");
                    for ci in 0..c {
                        out[[ni, ci, y, x2]] = vv[[l, ci]];
                    }
                }
            }
        }
        let ng = self.needs(values);
        self.push(out.into_dyn(), Op::RegionBroadcast { values, labels }, ng)
    }

    /// Mean feature vector over a pixel set of one sample:
    /// `x [N,C,H,W] -> [C]`.
    pub fn region_mean(&mut self, x: Var, sample: usize, pixels: Arc<Vec<(usize, usize)>>) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let c = xv.shape()[1];
        assert!(!pixels.is_empty(), "region must contain pixels");
        let mut out = Array1::<f32>::zeros(c);
        for ci in 0..c {
            let mut acc = 0.0f64;
            for &(y, x2) in pixels.iter() {
                acc += xv[[sample, ci, y, x2]] as f64;
            }
            out[ci] = (acc / pixels.len() as f64) as f32;
        }
        let ng = self.needs(x);
        self.push(out.into_dyn(), Op::RegionMean { x, sample, pixels }, ng)
    }

    /// L2-normalizes the last axis of each row; rows of near-zero norm are
    /// guarded with a `1e-12` floor inside the square root.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let f = *xv.shape().last().unwrap();
        let rows = xv.len() / f;
        let xs = xv.as_standard_layout();
        let xs = xs.as_slice().unwrap();
        let mut out = vec![0.0f32; xv.len()];
        for r in 0..rows {
            let row = &xs[r * f..(r + 1) * f];
            let n2: f64 = row.iter().map(|&v| (v as f64) * (v as f64)).sum();
            let inv = 1.0 / (n2 + 1e-12).sqrt();
            for i in 0..f {
                out[r * f + i] = (row[i] as f64 * inv) as f32;
            }
        }
        let value = ArrayD::from_shape_vec(xv.raw_dim(), out).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::L2NormRows(x), ng)
    }

    /// Pairwise inner products: `a [N,P,E] x b [N,P,E] -> [N,P,P]` with
    /// `out[n,i,j] = a[n,i,:] . b[n,j,:]`.
    pub fn bat_mul_nt(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).view().into_dimensionality::<Ix3>().unwrap();
        let bv = self.value(b).view().into_dimensionality::<Ix3>().unwrap();
        assert_eq!(av.shape(), bv.shape());
        let (n, p, _e) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let mut out = ndarray::Array3::zeros((n, p, p));
        for ni in 0..n {
            let an = av.index_axis(Axis(0), ni).to_owned();
            let bn = bv.index_axis(Axis(0), ni).to_owned();
            let mut on = out.index_axis_mut(Axis(0), ni);
            let mut tmp = Array2::zeros((p, p));
            conv::matmul_a_bt_acc(&an, &bn, &mut tmp);
            on.assign(&tmp);
        }
        let ng = self.any_needs(&[a, b]);
        self.push(out.into_dyn(), Op::BatMulNT(a, b), ng)
    }

    /// Mean diagonal-target cross entropy over `[N,P,P]` logit matrices: for
    /// every row, the diagonal entry is the positive class.
    pub fn mean_ce_diag(&mut self, logits: Var) -> Var {
        let lv = self
            .value(logits)
            .view()
            .into_dimensionality::<Ix3>()
            .unwrap();
        let (n, p, _) = (lv.shape()[0], lv.shape()[1], lv.shape()[2]);
        let mut acc = 0.0f64;
        for ni in 0..n {
            for i in 0..p {
                let row = lv.index_axis(Axis(0), ni);
                let row = row.index_axis(Axis(0), i);
                let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
                let lse: f64 = m as f64
                    + row
                        .iter()
                        .map(|&v| ((v - m) as f64).exp())
                        .sum::<f64>()
                        .ln();
                acc += lse - row[i] as f64;
            }
        }
        let value = ArrayD::from_elem(IxDyn(&[1]), (acc / (n * p) as f64) as f32);
        let ng = self.needs(logits);
        self.push(value, Op::MeanCeDiag(logits), ng)
    }

    /// Identity forward; multiplies the incoming gradient by `k` on backward.
    pub fn grad_scale(&mut self, x: Var, k: f32) -> Var {
        let value = self.value(x).clone();
        let ng = self.needs(x);
        self.push(value, Op::GradScale(x, k), ng)
    }

    /// Elementwise `sqrt(a^2 + b^2)`, with zero gradient where the magnitude
    /// vanishes.
    pub fn hypot_mag(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = av.clone();
        out.zip_mut_with(bv, |x, &y| *x = (*x * *x + y * y).sqrt());
        let ng = self.any_needs(&[a, b]);
        self.push(out, Op::HypotMag(a, b), ng)
    }

    /// Pads the spatial borders of `[N,C,H,W]` by one pixel of edge
    /// replication.
    pub fn replicate_pad1(&mut self, x: Var) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let mut out = Array4::zeros((n, c, h + 2, w + 2));
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h + 2 {
                    let sy = y.saturating_sub(1).min(h - 1);
                    for x2 in 0..w + 2 {
                        let sx = x2.saturating_sub(1).min(w - 1);
                        out[[ni, ci, y, x2]] = xv[[ni, ci, sy, sx]];
                    }
                }
            }
        }
        let ng = self.needs(x);
        self.push(out.into_dyn(), Op::ReplicatePad1(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self
            .value(x)
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape size mismatch");
        let ng = self.needs(x);
        self.push(value, Op::Reshape(x), ng)
    }

    /// Stacks 1-D vectors of equal length into a `[K,F]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty());
        let f = self.value(rows[0]).len();
        let k = rows.len();
        let mut out = Array2::zeros((k, f));
        for (i, &r) in rows.iter().enumerate() {
            let rv = self.value(r);
            assert_eq!(rv.len(), f);
            for (j, &v) in rv.iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        let ng = self.any_needs(rows);
        self.push(out.into_dyn(), Op::StackRows(rows.to_vec()), ng)
    }

    // ---- backward -----------------------------------------------------

    fn acc_grad(&mut self, v: Var, delta: Arr) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    /// Runs reverse-mode accumulation from a scalar root. Existing gradients
    /// are cleared first.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[root.0] = Some(ArrayD::from_elem(IxDyn(&[1]), 1.0));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            self.propagate(&op, Var(i), &g);
            self.grads[i] = Some(g);
        }
    }

    fn propagate(&mut self, op: &Op, out: Var, g: &Arr) {
        match op {
            Op::Leaf | Op::Detach(_) => {}
            Op::Add(a, b) => {
                self.acc_grad(*a, g.clone());
                self.acc_grad(*b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc_grad(*a, g.clone());
                self.acc_grad(*b, g.mapv(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d = g * self.value(*b);
                    self.acc_grad(*a, d);
                }
                if self.needs(*b) {
                    let d = g * self.value(*a);
                    self.acc_grad(*b, d);
                }
            }
            Op::Scale(a, k) => self.acc_grad(*a, g.mapv(|v| v * k)),
            Op::AddScalar(a, _) => self.acc_grad(*a, g.clone()),
            Op::BiasChannel(x, b) => {
                if self.needs(*x) {
                    self.acc_grad(*x, g.clone());
                }
                if self.needs(*b) {
                    let gv = g.view().into_dimensionality::<Ix4>().unwrap();
                    let c = gv.shape()[1];
                    let mut db = Array1::zeros(c);
                    for ci in 0..c {
                        db[ci] = gv.index_axis(Axis(1), ci).iter().map(|&v| v as f64).sum::<f64>()
                            as f32;
                    }
                    self.acc_grad(*b, db.into_dyn());
                }
            }
            Op::BiasRow(x, b) => {
                if self.needs(*x) {
                    self.acc_grad(*x, g.clone());
                }
                if self.needs(*b) {
                    let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                    let db = gv.sum_axis(Axis(0));
                    self.acc_grad(*b, db.into_dyn());
                }
            }
            Op::MatMul(a, b) => {
                let gv = g
                    .view()
                    .into_dimensionality::<Ix2>()
                    .unwrap()
                    .to_owned();
                if self.needs(*a) {
                    let bv = self
                        .value(*b)
                        .view()
                        .into_dimensionality::<Ix2>()
                        .unwrap()
                        .to_owned();
                    let mut da = Array2::zeros((gv.shape()[0], bv.shape()[0]));
                    conv::matmul_a_bt_acc(&gv, &bv, &mut da);
                    self.acc_grad(*a, da.into_dyn());
                }
                if self.needs(*b) {
                    let av = self
                        .value(*a)
                        .view()
                        .into_dimensionality::<Ix2>()
                        .unwrap()
                        .to_owned();
                    let mut db = Array2::zeros((av.shape()[1], gv.shape()[1]));
                    conv::matmul_at_b_acc(&av, &gv, &mut db);
                    self.acc_grad(*b, db.into_dyn());
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let gv = g.view().into_dimensionality::<Ix4>().unwrap();
                if self.needs(*x) {
                    let wv = self.value(*w).view().into_dimensionality::<Ix4>().unwrap();
                    let xshape = self.value(*x).shape();
                    let dx = conv::conv2d_backward_input(
                        &gv,
                        &wv,
                        *stride,
                        *pad,
                        (xshape[2], xshape[3]),
                    );
                    self.acc_grad(*x, dx.into_dyn());
                }
                if self.needs(*w) {
                    let xv = self.value(*x).view().into_dimensionality::<Ix4>().unwrap();
                    let wshape = self.value(*w).shape();
                    let dw = conv::conv2d_backward_weight(
                        &gv,
                        &xv,
                        *stride,
                        *pad,
                        (wshape[2], wshape[3]),
                    );
                    self.acc_grad(*w, dw.into_dyn());
                }
            }
            Op::UpsampleNearest2(x) => {
                let gv = g.view().into_dimensionality::<Ix4>().unwrap();
                let (n, c, h2, w2) = (gv.shape()[0], gv.shape()[1], gv.shape()[2], gv.shape()[3]);
                let mut dx = Array4::zeros((n, c, h2 / 2, w2 / 2));
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h2 {
                            for x2 in 0..w2 {
                                dx[[ni, ci, y / 2, x2 / 2]] += gv[[ni, ci, y, x2]];
                            }
                        }
                    }
                }
                self.acc_grad(*x, dx.into_dyn());
            }
            Op::LeakyRelu(x, slope) => {
                let mut d = g.clone();
                d.zip_mut_with(self.value(*x), |gi, &xi| {
                    if xi <= 0.0 {
                        *gi *= slope;
                    }
                });
                self.acc_grad(*x, d);
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[out.0].value;
                let mut d = g.clone();
                d.zip_mut_with(y, |gi, &yi| *gi *= yi * (1.0 - yi));
                self.acc_grad(*x, d);
            }
            Op::Softplus(x) => {
                let mut d = g.clone();
                d.zip_mut_with(self.value(*x), |gi, &xi| {
                    *gi *= 1.0 / (1.0 + (-xi).exp());
                });
                self.acc_grad(*x, d);
            }
            Op::Abs(x) => {
                let mut d = g.clone();
                d.zip_mut_with(self.value(*x), |gi, &xi| {
                    *gi *= if xi > 0.0 {
                        1.0
                    } else if xi < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                });
                self.acc_grad(*x, d);
            }
            Op::SumAll(x) => {
                let s = g[[0]];
                let d = ArrayD::from_elem(self.value(*x).raw_dim(), s);
                self.acc_grad(*x, d);
            }
            Op::MeanAll(x) => {
                let len = self.value(*x).len() as f32;
                let s = g[[0]] / len;
                let d = ArrayD::from_elem(self.value(*x).raw_dim(), s);
                self.acc_grad(*x, d);
            }
            Op::StandardizeSpatial(x, eps) => {
                let xv = self.value(*x).view().into_dimensionality::<Ix4>().unwrap();
                let yv = self.nodes[out.0]
                    .value
                    .view()
                    .into_dimensionality::<Ix4>()
                    .unwrap();
                let gv = g.view().into_dimensionality::<Ix4>().unwrap();
                let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let m = (h * w) as f64;
                let mut dx = Array4::zeros((n, c, h, w));
                for ni in 0..n {
                    for ci in 0..c {
                        let mut mean_x = 0.0f64;
                        for y in 0..h {
                            for x2 in 0..w {
                                mean_x += xv[[ni, ci, y, x2]] as f64;
                            }
                        }
                        mean_x /= m;
                        let mut var = 0.0f64;
                        for y in 0..h {
                            for x2 in 0..w {
                                var += (xv[[ni, ci, y, x2]] as f64 - mean_x).powi(2);
                            }
                        }
                        var /= m;
                        let inv_std = 1.0 / (var + *eps as f64).sqrt();
                        let mut sum_g = 0.0f64;
                        let mut sum_gy = 0.0f64;
                        for y in 0..h {
                            for x2 in 0..w {
                                let gi = gv[[ni, ci, y, x2]] as f64;
                                sum_g += gi;
                                sum_gy += gi * yv[[ni, ci, y, x2]] as f64;
                            }
                        }
                        for y in 0..h {
                            for x2 in 0..w {
                                let gi = gv[[ni, ci, y, x2]] as f64;
                                let yi = yv[[ni, ci, y, x2]] as f64;
                                dx[[ni, ci, y, x2]] =
                                    (inv_std * (gi - sum_g / m - yi * sum_gy / m)) as f32;
                            }
                        }
                    }
                }
                self.acc_grad(*x, dx.into_dyn());
            }
            Op::ConcatChannels(a, b) => {
                let gv = g.view().into_dimensionality::<Ix4>().unwrap();
                let ca = self.value(*a).shape()[1];
                if self.needs(*a) {
                    let da = gv.slice(ndarray::s![.., ..ca, .., ..]).to_owned();
                    self.acc_grad(*a, da.into_dyn());
                }
                if self.needs(*b) {
                    let db = gv.slice(ndarray::s![.., ca.., .., ..]).to_owned();
                    self.acc_grad(*b, db.into_dyn());
                }
            }
            Op::ConcatRows(a, b) => {
                let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                let ca = self.value(*a).shape()[1];
                if self.needs(*a) {
                    let da = gv.slice(ndarray::s![.., ..ca]).to_owned();
                    self.acc_grad(*a, da.into_dyn());
                }
                if self.needs(*b) {
                    let db = gv.slice(ndarray::s![.., ca..]).to_owned();
                    self.acc_grad(*b, db.into_dyn());
                }
            }
            Op::GatherPatches { x, positions } => {
                let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                let xshape = self.value(*x).shape();
                let (n, c, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
                let mut dx = Array4::zeros((n, c, h, w));
                for ni in 0..n {
                    for (pi, &pos) in positions.iter().enumerate() {
                        let (y, x2) = (pos / w, pos % w);
                        for ci in 0..c {
                            dx[[ni, ci, y, x2]] += gv[[ni, pi, ci]];
                        }
                    }
                }
                self.acc_grad(*x, dx.into_dyn());
            }
            Op::RegionBroadcast { values, labels } => {
                let gv = g.view().into_dimensionality::<Ix4>().unwrap();
                let vshape = self.value(*values).shape();
                let (k, c) = (vshape[0], vshape[1]);
                let mut dv = Array2::<f32>::zeros((k, c));
                for (ni, lab) in labels.iter().enumerate() {
                    let (h, w) = (lab.shape()[0], lab.shape()[1]);
                    for y in 0..h {
                        for x2 in 0..w {
                            let l = lab[[y, x2]] as usize;
                            for ci in 0..c {
                                dv[[l, ci]] += gv[[ni, ci, y, x2]];
                            }
                        }
                    }
                }
                self.acc_grad(*values, dv.into_dyn());
            }
            Op::RegionMean { x, sample, pixels } => {
                let gv = g.view().into_dimensionality::<Ix1>().unwrap();
                let xshape = self.value(*x).shape();
                let (n, c, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
                let mut dx = Array4::zeros((n, c, h, w));
                let inv = 1.0 / pixels.len() as f32;
                for ci in 0..c {
                    let d = gv[ci] * inv;
                    for &(y, x2) in pixels.iter() {
                        dx[[*sample, ci, y, x2]] += d;
                    }
                }
                self.acc_grad(*x, dx.into_dyn());
            }
            Op::L2NormRows(x) => {
                let xv = self.value(*x);
                let f = *xv.shape().last().unwrap();
                let rows = xv.len() / f;
                let xs = xv.as_standard_layout();
                let xs = xs.as_slice().unwrap().to_vec();
                let ys = self.nodes[out.0].value.as_standard_layout();
                let ys = ys.as_slice().unwrap().to_vec();
                let gs = g.as_standard_layout();
                let gs = gs.as_slice().unwrap().to_vec();
                let mut dx = vec![0.0f32; xs.len()];
                for r in 0..rows {
                    let xrow = &xs[r * f..(r + 1) * f];
                    let yrow = &ys[r * f..(r + 1) * f];
                    let grow = &gs[r * f..(r + 1) * f];
                    let n2: f64 = xrow.iter().map(|&v| (v as f64) * (v as f64)).sum();
                    let norm = (n2 + 1e-12).sqrt();
                    let dot: f64 = yrow
                        .iter()
                        .zip(grow.iter())
                        .map(|(&y, &gg)| y as f64 * gg as f64)
                        .sum();
                    for i in 0..f {
                        dx[r * f + i] =
                            ((grow[i] as f64 - yrow[i] as f64 * dot) / norm) as f32;
                    }
                }
                let d = ArrayD::from_shape_vec(xv.raw_dim(), dx).unwrap();
                self.acc_grad(*x, d);
            }
            Op::BatMulNT(a, b) => {
                let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                let (n, p, _) = (gv.shape()[0], gv.shape()[1], gv.shape()[2]);
                let e = self.value(*a).shape()[2];
                if self.needs(*a) {
                    let bv = self.value(*b).view().into_dimensionality::<Ix3>().unwrap();
                    let mut da = ndarray::Array3::zeros((n, p, e));
                    for ni in 0..n {
                        let gn = gv.index_axis(Axis(0), ni).to_owned();
                        let bn = bv.index_axis(Axis(0), ni).to_owned();
                        let dan = conv::matmul(&gn, &bn);
                        da.index_axis_mut(Axis(0), ni).assign(&dan);
                    }
                    self.acc_grad(*a, da.into_dyn());
                }
                if self.needs(*b) {
                    let av = self.value(*a).view().into_dimensionality::<Ix3>().unwrap();
                    let mut db = ndarray::Array3::zeros((n, p, e));
                    for ni in 0..n {
                        let gn = gv.index_axis(Axis(0), ni).to_owned();
                        let an = av.index_axis(Axis(0), ni).to_owned();
                        // db[n] = g[n]^T x a[n]
                        let mut dbn = Array2::zeros((p, e));
                        conv::matmul_at_b_acc(&gn, &an, &mut dbn);
                        db.index_axis_mut(Axis(0), ni).assign(&dbn);
                    }
                    self.acc_grad(*b, db.into_dyn());
                }
            }
            Op::MeanCeDiag(logits) => {
                let lv = self
                    .value(*logits)
                    .view()
                    .into_dimensionality::<Ix3>()
                    .unwrap();
                let (n, p, _) = (lv.shape()[0], lv.shape()[1], lv.shape()[2]);
                let scale = g[[0]] / (n * p) as f32;
                let mut dl = ndarray::Array3::zeros((n, p, p));
                for ni in 0..n {
                    for i in 0..p {
                        let row = lv.index_axis(Axis(0), ni);
                        let row = row.index_axis(Axis(0), i);
                        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
                        let z: f64 = row.iter().map(|&v| ((v - m) as f64).exp()).sum();
                        for j in 0..p {
                            let soft = ((row[j] - m) as f64).exp() / z;
                            let delta = if i == j { 1.0 } else { 0.0 };
                            dl[[ni, i, j]] = scale * (soft - delta) as f32;
                        }
                    }
                }
                self.acc_grad(*logits, dl.into_dyn());
            }
            Op::GradScale(x, k) => {
                self.acc_grad(*x, g.mapv(|v| v * k));
            }
            Op::HypotMag(a, b) => {
                if self.needs(*a) {
                    let mut d = g.clone();
                    ndarray::Zip::from(&mut d)
                        .and(self.value(*a))
                        .and(&self.nodes[out.0].value)
                        .for_each(|di, &ai, &yi| {
                            *di = if yi > 0.0 { *di * ai / yi } else { 0.0 };
                        });
                    self.acc_grad(*a, d);
                }
                if self.needs(*b) {
                    let mut d = g.clone();
                    ndarray::Zip::from(&mut d)
                        .and(self.value(*b))
                        .and(&self.nodes[out.0].value)
                        .for_each(|di, &bi, &yi| {
                            *di = if yi > 0.0 { *di * bi / yi } else { 0.0 };
                        });
                    self.acc_grad(*b, d);
                }
            }
            Op::ReplicatePad1(x) => {
                let gv = g.view().into_dimensionality::<Ix4>().unwrap();
                let (n, c, hp, wp) = (gv.shape()[0], gv.shape()[1], gv.shape()[2], gv.shape()[3]);
                let (h, w) = (hp - 2, wp - 2);
                let mut dx = Array4::zeros((n, c, h, w));
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..hp {
                            let sy = y.saturating_sub(1).min(h - 1);
                            for x2 in 0..wp {
                                let sx = x2.saturating_sub(1).min(w - 1);
                                dx[[ni, ci, sy, sx]] += gv[[ni, ci, y, x2]];
                            }
                        }
                    }
                }
                self.acc_grad(*x, dx.into_dyn());
            }
            Op::Reshape(x) => {
                let d = g
                    .as_standard_layout()
                    .to_owned()
                    .into_shape_with_order(self.value(*x).raw_dim())
                    .unwrap();
                self.acc_grad(*x, d);
            }
            Op::StackRows(rows) => {
                let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                for (i, &r) in rows.iter().enumerate() {
                    if self.needs(r) {
                        let d = gv.index_axis(Axis(0), i).to_owned();
                        self.acc_grad(r, d.into_dyn());
                    }
                }
            }
        }
    }
}
