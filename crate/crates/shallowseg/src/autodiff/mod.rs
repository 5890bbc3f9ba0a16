//! Minimal reverse-mode autodiff engine.
//!
//! A [`Tape`] records operator nodes in execution order; values are computed
//! eagerly on insertion and gradients flow back through a reverse sweep over
//! the tape. Only the operators the segmentation network needs are provided,
//! and each one is certified against central finite differences (see
//! [`grad_check`]).

mod conv;
mod gradcheck;
mod resample;

pub use conv::brute_force_conv2d;
pub use gradcheck::{grad_check, grad_check_multi};
pub(crate) use resample::bilinear_taps;

use std::sync::Arc;

use crate::scalar::Scalar;

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Clone)]
pub(crate) enum OpKind<F: Scalar> {
    Leaf,
    Relu(TensorId),
    Sigmoid(TensorId),
    Add(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, F),
    Conv2d { x: TensorId, w: TensorId, b: TensorId, stride: usize, padding: usize },
    Upsample { x: TensorId },
    AvgPool2(TensorId),
    ReduceSum(TensorId),
    ReduceMean(TensorId),
    Bce { p: TensorId, target: Arc<Vec<F>> },
    Dice { p: TensorId, target: Arc<Vec<F>> },
}

pub(crate) struct Node<F: Scalar> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
    pub grad: Vec<F>,
    pub requires_grad: bool,
    pub op: OpKind<F>,
}

/// Recorded computation graph. Node order is the topological order.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

/// Probability clamp used inside the BCE node.
pub(crate) fn bce_clamp<F: Scalar>() -> F {
    F::from_f64(1e-7)
}

/// Soft-Dice smoothing constant.
pub(crate) fn dice_smooth<F: Scalar>() -> F {
    F::one()
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<F>, op: OpKind<F>) -> TensorId {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        let grad = vec![F::zero(); data.len()];
        self.nodes.push(Node { shape, data, grad, requires_grad: false, op });
        TensorId(self.nodes.len() - 1)
    }

    /// Insert an input tensor. Leaves with `requires_grad` receive gradients
    /// during [`Tape::backward`].
    pub fn leaf(&mut self, shape: &[usize], data: Vec<F>, requires_grad: bool) -> TensorId {
        let id = self.push(shape.to_vec(), data, OpKind::Leaf);
        self.nodes[id.0].requires_grad = requires_grad;
        id
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: TensorId) -> &[F] {
        &self.nodes[id.0].data
    }

    pub fn grad(&self, id: TensorId) -> &[F] {
        &self.nodes[id.0].grad
    }

    /// Value of a single-element tensor.
    pub fn scalar_value(&self, id: TensorId) -> F {
        assert_eq!(self.data(id).len(), 1, "not a scalar tensor");
        self.data(id)[0]
    }

    fn dims4(&self, id: TensorId) -> [usize; 4] {
        let s = self.shape(id);
        assert_eq!(s.len(), 4, "expected NCHW tensor, got shape {:?}", s);
        [s[0], s[1], s[2], s[3]]
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let data = self.data(x).iter().map(|&v| v.max(F::zero())).collect();
        self.push(self.shape(x).to_vec(), data, OpKind::Relu(x))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let data = self.data(x).iter().map(|&v| stable_sigmoid(v)).collect();
        self.push(self.shape(x).to_vec(), data, OpKind::Sigmoid(x))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        self.push(self.shape(a).to_vec(), data, OpKind::Add(a, b))
    }

    pub fn scale(&mut self, x: TensorId, c: F) -> TensorId {
        let data = self.data(x).iter().map(|&v| v * c).collect();
        self.push(self.shape(x).to_vec(), data, OpKind::Scale(x, c))
    }

    /// Elementwise product. Either both shapes are equal, or `b` is an NCHW
    /// tensor whose batch and/or channel extent is 1 and broadcasts over `a`
    /// (the attention-map case).
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        if self.shape(a) == self.shape(b) {
            let data = self
                .data(a)
                .iter()
                .zip(self.data(b))
                .map(|(&x, &y)| x * y)
                .collect();
            return self.push(self.shape(a).to_vec(), data, OpKind::Mul(a, b));
        }
        let [n, c, h, w] = self.dims4(a);
        let [bn, bc, bh, bw] = self.dims4(b);
        assert!(
            (bn == n || bn == 1) && (bc == c || bc == 1) && bh == h && bw == w,
            "mul: incompatible shapes {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let hw = h * w;
        let mut data = vec![F::zero(); n * c * hw];
        for ni in 0..n {
            for ci in 0..c {
                let a_off = (ni * c + ci) * hw;
                let b_off = bcast_offset(ni, ci, bn, bc, hw);
                let av = &self.data(a)[a_off..a_off + hw];
                let bv = &self.data(b)[b_off..b_off + hw];
                let out = &mut data[a_off..a_off + hw];
                for i in 0..hw {
                    out[i] = av[i] * bv[i];
                }
            }
        }
        self.push(self.shape(a).to_vec(), data, OpKind::Mul(a, b))
    }

    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        padding: usize,
    ) -> TensorId {
        assert!(stride >= 1, "conv2d: stride must be >= 1");
        let [n, ci, h, wd] = self.dims4(x);
        let [co, wci, kh, kw] = self.dims4(w);
        assert_eq!(ci, wci, "conv2d: channel mismatch");
        assert_eq!(kh, kw, "conv2d: only square kernels");
        assert_eq!(self.shape(b), &[co], "conv2d: bias shape");
        assert!(h + 2 * padding >= kh && wd + 2 * padding >= kw, "conv2d: kernel too large");
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (wd + 2 * padding - kw) / stride + 1;
        let data = conv::forward(
            self.data(x),
            self.data(w),
            self.data(b),
            [n, ci, h, wd],
            [co, kh],
            stride,
            padding,
            [oh, ow],
        );
        self.push(vec![n, co, oh, ow], data, OpKind::Conv2d { x, w, b, stride, padding })
    }

    /// Bilinear upsampling, align_corners=false. Target extents must be at
    /// least the source extents and nonzero.
    pub fn upsample_bilinear(&mut self, x: TensorId, out_h: usize, out_w: usize) -> TensorId {
        let [n, c, h, w] = self.dims4(x);
        assert!(out_h > 0 && out_w > 0, "upsample: zero target extent");
        assert!(out_h >= h && out_w >= w, "upsample: target smaller than source");
        let data = resample::upsample_forward(self.data(x), [n, c, h, w], [out_h, out_w]);
        self.push(vec![n, c, out_h, out_w], data, OpKind::Upsample { x })
    }

    /// 2×2 average pooling with stride 2; extents must be even.
    pub fn avg_pool2(&mut self, x: TensorId) -> TensorId {
        let [n, c, h, w] = self.dims4(x);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2: extents must be even");
        let data = resample::avgpool2_forward(self.data(x), [n, c, h, w]);
        self.push(vec![n, c, h / 2, w / 2], data, OpKind::AvgPool2(x))
    }

    pub fn reduce_sum(&mut self, x: TensorId) -> TensorId {
        let s: F = self.data(x).iter().copied().sum();
        self.push(vec![1], vec![s], OpKind::ReduceSum(x))
    }

    pub fn reduce_mean(&mut self, x: TensorId) -> TensorId {
        let n = F::from_f64(self.data(x).len() as f64);
        let s: F = self.data(x).iter().copied().sum();
        self.push(vec![1], vec![s / n], OpKind::ReduceMean(x))
    }

    /// Mean binary cross entropy of probabilities `p` against a constant
    /// binary target, with p clamped to [1e-7, 1-1e-7].
    pub fn bce_loss(&mut self, p: TensorId, target: &[F]) -> TensorId {
        assert_eq!(self.data(p).len(), target.len(), "bce: shape mismatch");
        let clamp = bce_clamp::<F>();
        let one = F::one();
        let n = F::from_f64(target.len() as f64);
        let mut acc = F::zero();
        for (&pv, &t) in self.data(p).iter().zip(target) {
            let pc = pv.max(clamp).min(one - clamp);
            acc = acc - (t * pc.ln() + (one - t) * (one - pc).ln());
        }
        self.push(vec![1], vec![acc / n], OpKind::Bce { p, target: Arc::new(target.to_vec()) })
    }

    /// Soft Dice loss 1 - (2·Σpg + ε)/(Σp + Σg + ε) with ε = 1.
    pub fn dice_loss(&mut self, p: TensorId, target: &[F]) -> TensorId {
        assert_eq!(self.data(p).len(), target.len(), "dice: shape mismatch");
        let eps = dice_smooth::<F>();
        let mut s_pg = F::zero();
        let mut s_p = F::zero();
        let mut s_g = F::zero();
        for (&pv, &t) in self.data(p).iter().zip(target) {
            s_pg = s_pg + pv * t;
            s_p = s_p + pv;
            s_g = s_g + t;
        }
        let loss = F::one() - (F::from_f64(2.0) * s_pg + eps) / (s_p + s_g + eps);
        self.push(vec![1], vec![loss], OpKind::Dice { p, target: Arc::new(target.to_vec()) })
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate additively
    /// across fan-out; leaf gradients are available afterwards via
    /// [`Tape::grad`].
    pub fn backward(&mut self, loss: TensorId) {
        assert_eq!(
            self.data(loss).len(),
            1,
            "backward: loss must be scalar, got shape {:?}",
            self.shape(loss)
        );
        self.nodes[loss.0].grad[0] = F::one();
        for i in (0..self.nodes.len()).rev() {
            let op = self.nodes[i].op.clone();
            let gy = self.nodes[i].grad.clone();
            if gy.iter().all(|g| g.is_zero()) {
                continue;
            }
            match op {
                OpKind::Leaf => {}
                OpKind::Relu(x) => {
                    let xdata = self.nodes[x.0].data.clone();
                    let gx = &mut self.nodes[x.0].grad;
                    for (j, &g) in gy.iter().enumerate() {
                        if xdata[j] > F::zero() {
                            gx[j] = gx[j] + g;
                        }
                    }
                }
                OpKind::Sigmoid(x) => {
                    let ydata = self.nodes[i].data.clone();
                    let gx = &mut self.nodes[x.0].grad;
                    for (j, &g) in gy.iter().enumerate() {
                        let y = ydata[j];
                        gx[j] = gx[j] + g * y * (F::one() - y);
                    }
                }
                OpKind::Add(a, b) => {
                    for id in [a, b] {
                        let gx = &mut self.nodes[id.0].grad;
                        for (j, &g) in gy.iter().enumerate() {
                            gx[j] = gx[j] + g;
                        }
                    }
                }
                OpKind::Scale(x, c) => {
                    let gx = &mut self.nodes[x.0].grad;
                    for (j, &g) in gy.iter().enumerate() {
                        gx[j] = gx[j] + g * c;
                    }
                }
                OpKind::Mul(a, b) => self.backward_mul(a, b, &gy),
                OpKind::Conv2d { x, w, b, stride, padding } => {
                    self.backward_conv(x, w, b, stride, padding, i, &gy)
                }
                OpKind::Upsample { x } => {
                    let [n, c, h, w] = self.dims4(x);
                    let out = self.nodes[i].shape.clone();
                    resample::upsample_backward(
                        &gy,
                        [n, c, h, w],
                        [out[2], out[3]],
                        &mut self.nodes[x.0].grad,
                    );
                }
                OpKind::AvgPool2(x) => {
                    let [n, c, h, w] = self.dims4(x);
                    resample::avgpool2_backward(&gy, [n, c, h, w], &mut self.nodes[x.0].grad);
                }
                OpKind::ReduceSum(x) => {
                    let g = gy[0];
                    for v in self.nodes[x.0].grad.iter_mut() {
                        *v = *v + g;
                    }
                }
                OpKind::ReduceMean(x) => {
                    let n = F::from_f64(self.nodes[x.0].data.len() as f64);
                    let g = gy[0] / n;
                    for v in self.nodes[x.0].grad.iter_mut() {
                        *v = *v + g;
                    }
                }
                OpKind::Bce { p, target } => {
                    let g = gy[0];
                    let clamp = bce_clamp::<F>();
                    let one = F::one();
                    let n = F::from_f64(target.len() as f64);
                    let pdata = self.nodes[p.0].data.clone();
                    let gp = &mut self.nodes[p.0].grad;
                    for (j, (&pv, &t)) in pdata.iter().zip(target.iter()).enumerate() {
                        // Zero gradient where the clamp is active.
                        if pv > clamp && pv < one - clamp {
                            let d = (pv - t) / (pv * (one - pv)) / n;
                            gp[j] = gp[j] + g * d;
                        }
                    }
                }
                OpKind::Dice { p, target } => {
                    let g = gy[0];
                    let eps = dice_smooth::<F>();
                    let two = F::from_f64(2.0);
                    let pdata = self.nodes[p.0].data.clone();
                    let mut s_pg = F::zero();
                    let mut s_p = F::zero();
                    let mut s_g = F::zero();
                    for (&pv, &t) in pdata.iter().zip(target.iter()) {
                        s_pg = s_pg + pv * t;
                        s_p = s_p + pv;
                        s_g = s_g + t;
                    }
                    let denom = s_p + s_g + eps;
                    let num = two * s_pg + eps;
                    let gp = &mut self.nodes[p.0].grad;
                    for (j, &t) in target.iter().enumerate() {
                        let d = (num - two * t * denom) / (denom * denom);
                        gp[j] = gp[j] + g * d;
                    }
                }
            }
        }
    }

    fn backward_mul(&mut self, a: TensorId, b: TensorId, gy: &[F]) {
        if self.nodes[a.0].shape == self.nodes[b.0].shape {
            let adata = self.nodes[a.0].data.clone();
            let bdata = self.nodes[b.0].data.clone();
            {
                let ga = &mut self.nodes[a.0].grad;
                for (j, &g) in gy.iter().enumerate() {
                    ga[j] = ga[j] + g * bdata[j];
                }
            }
            let gb = &mut self.nodes[b.0].grad;
            for (j, &g) in gy.iter().enumerate() {
                gb[j] = gb[j] + g * adata[j];
            }
            return;
        }
        let [n, c, h, w] = self.dims4(a);
        let [bn, bc, _, _] = self.dims4(b);
        let hw = h * w;
        let adata = self.nodes[a.0].data.clone();
        let bdata = self.nodes[b.0].data.clone();
        for ni in 0..n {
            for ci in 0..c {
                let a_off = (ni * c + ci) * hw;
                let b_off = bcast_offset(ni, ci, bn, bc, hw);
                {
                    let ga = &mut self.nodes[a.0].grad[a_off..a_off + hw];
                    let gyv = &gy[a_off..a_off + hw];
                    let bv = &bdata[b_off..b_off + hw];
                    for i in 0..hw {
                        ga[i] = ga[i] + gyv[i] * bv[i];
                    }
                }
                let gb = &mut self.nodes[b.0].grad[b_off..b_off + hw];
                let gyv = &gy[a_off..a_off + hw];
                let av = &adata[a_off..a_off + hw];
                for i in 0..hw {
                    // Broadcast axes sum-reduce here.
                    gb[i] = gb[i] + gyv[i] * av[i];
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_conv(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        padding: usize,
        out_idx: usize,
        gy: &[F],
    ) {
        let [n, ci, h, wd] = self.dims4(x);
        let [co, _, kh, _] = self.dims4(w);
        let oshape = self.nodes[out_idx].shape.clone();
        let (oh, ow) = (oshape[2], oshape[3]);
        let xdata = self.nodes[x.0].data.clone();
        let wdata = self.nodes[w.0].data.clone();
        let [nx, nw, nb] = self
            .nodes
            .get_disjoint_mut([x.0, w.0, b.0])
            .expect("conv2d inputs are distinct nodes");
        conv::backward(
            gy,
            &xdata,
            &wdata,
            [n, ci, h, wd],
            [co, kh],
            stride,
            padding,
            [oh, ow],
            &mut nx.grad,
            &mut nw.grad,
            &mut nb.grad,
        );
    }
}

#[inline]
fn bcast_offset(ni: usize, ci: usize, bn: usize, bc: usize, hw: usize) -> usize {
    let nn = if bn == 1 { 0 } else { ni };
    let cc = if bc == 1 { 0 } else { ci };
    (nn * bc + cc) * hw
}

#[inline]
fn stable_sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
