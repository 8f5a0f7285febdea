//! Wengert tape: every forward op appends a node, `backward` walks them in
//! reverse and accumulates vector-Jacobian products.
//!
//! Ops accept an optional leading batch axis and never broadcast beyond it.

use super::kernels::{axpy, col2im, dot, im2col};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        cols: Vec<F>,
        dims: [usize; 6], // b, c, h, w, k, c_out
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Exp(Var),
    ClampMax(Var, F),
    Concat(Var, Var),
    Gather {
        input: Var,
        idx: Vec<usize>,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    RowSqNorm(Var),
    RowNorm(Var),
    /// Identity whose backward rule is intentionally wrong; exists so the
    /// gradient checker can be shown to catch a broken rule.
    FaultyIdentity(Var),
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Recorded computation. Values are kept for the backward pass.
#[derive(Debug, Default)]
pub struct Tape<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn batch_split(shape: &[usize], rank: usize) -> Option<(usize, bool)> {
    if shape.len() == rank {
        Some((1, false))
    } else if shape.len() == rank + 1 {
        Some((shape[0], true))
    } else {
        None
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies a value out as a constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    /// Valid (no padding), stride-1 cross-correlation.
    ///
    /// `input` is `[C, H, W]` or `[B, C, H, W]`, `kernel` is `[C_out, C, k, k]`,
    /// `bias` is `[C_out]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let ishape = self.shape(input).to_vec();
        let kshape = self.shape(kernel).to_vec();
        let (b, batched) = batch_split(&ishape, 3).ok_or_else(|| {
            Error::shape(
                "conv2d_valid",
                format!("input must be [C,H,W] or [B,C,H,W], got {ishape:?}"),
            )
        })?;
        let off = usize::from(batched);
        let (c, h, w) = (ishape[off], ishape[off + 1], ishape[off + 2]);
        if kshape.len() != 4 || kshape[2] != kshape[3] {
            return Err(Error::shape(
                "conv2d_valid",
                format!("kernel must be [C_out,C_in,k,k], got {kshape:?}"),
            ));
        }
        let (co, k) = (kshape[0], kshape[2]);
        if kshape[1] != c {
            return Err(Error::shape(
                "conv2d_valid",
                format!("kernel expects {} input channels, input has {c}", kshape[1]),
            ));
        }
        if k == 0 || k > h || k > w {
            return Err(Error::shape(
                "conv2d_valid",
                format!("kernel size {k} does not fit input height {h} / width {w}"),
            ));
        }
        if self.shape(bias) != [co] {
            return Err(Error::shape(
                "conv2d_valid",
                format!("bias must be [{co}], got {:?}", self.shape(bias)),
            ));
        }
        let (oh, ow) = (h - k + 1, w - k + 1);
        let n = b * oh * ow;
        let r = c * k * k;
        let cols = im2col(self.value(input).data(), b, c, h, w, k);
        let kd = self.value(kernel).data();
        let bd = self.value(bias).data();
        let mut out = vec![F::zero(); b * co * oh * ow];
        let mut acc = vec![F::zero(); n];
        for o in 0..co {
            acc.iter_mut().for_each(|v| *v = bd[o]);
            for ri in 0..r {
                axpy(kd[o * r + ri], &cols[ri * n..(ri + 1) * n], &mut acc);
            }
            for bi in 0..b {
                let dst = &mut out[(bi * co + o) * oh * ow..(bi * co + o + 1) * oh * ow];
                dst.copy_from_slice(&acc[bi * oh * ow..(bi + 1) * oh * ow]);
            }
        }
        let shape = if batched {
            vec![b, co, oh, ow]
        } else {
            vec![co, oh, ow]
        };
        let rg = self.rg(&[input, kernel, bias]);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                cols,
                dims: [b, c, h, w, k, co],
            },
            rg,
        ))
    }

    /// Non-overlapping `k`×`k` max pooling. Trailing rows/cols that do not
    /// fill a window are pooled in a clipped window rather than dropped.
    pub fn maxpool2d(&mut self, input: Var, k: usize) -> Result<Var> {
        let ishape = self.shape(input).to_vec();
        let (b, batched) = batch_split(&ishape, 3).ok_or_else(|| {
            Error::shape(
                "maxpool2d",
                format!("input must be [C,H,W] or [B,C,H,W], got {ishape:?}"),
            )
        })?;
        let off = usize::from(batched);
        let (c, h, w) = (ishape[off], ishape[off + 1], ishape[off + 2]);
        if k == 0 || k > h || k > w {
            return Err(Error::shape(
                "maxpool2d",
                format!("window {k} does not fit input height {h} / width {w}"),
            ));
        }
        let (oh, ow) = (h.div_ceil(k), w.div_ceil(k));
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * k * w + ox * k;
                    for dy in 0..k.min(h - oy * k) {
                        for dx in 0..k.min(w - ox * k) {
                            let i = base + (oy * k + dy) * w + ox * k + dx;
                            // strict comparison keeps the first maximum in row-major order
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let shape = if batched {
            vec![b, c, oh, ow]
        } else {
            vec![c, oh, ow]
        };
        let rg = self.rg(&[input]);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    /// Affine map `W x + b` for `x` of shape `[n]` or `[B, n]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        let (b, batched) = batch_split(&ishape, 1).ok_or_else(|| {
            Error::shape(
                "dense",
                format!("input must be [n] or [B,n], got {ishape:?}"),
            )
        })?;
        let n = *ishape.last().unwrap();
        if wshape.len() != 2 || wshape[1] != n {
            return Err(Error::shape(
                "dense",
                format!("weights {wshape:?} do not accept input width {n}"),
            ));
        }
        let m = wshape[0];
        if self.shape(bias) != [m] {
            return Err(Error::shape(
                "dense",
                format!("bias must be [{m}], got {:?}", self.shape(bias)),
            ));
        }
        let x = self.value(input).data();
        let wd = self.value(weight).data();
        let bd = self.value(bias).data();
        let mut out = Vec::with_capacity(b * m);
        for bi in 0..b {
            let xr = &x[bi * n..(bi + 1) * n];
            for i in 0..m {
                out.push(bd[i] + dot(&wd[i * n..(i + 1) * n], xr));
            }
        }
        let shape = if batched { vec![b, m] } else { vec![m] };
        let rg = self.rg(&[input, weight, bias]);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.max(F::zero())).collect();
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| *v * c).collect();
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.exp()).collect();
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        let rg = self.rg(&[x]);
        self.push(value, Op::Exp(x), rg)
    }

    /// Elementwise `min(x, cap)`; no gradient where the cap is active.
    pub fn clamp_max(&mut self, x: Var, cap: F) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.min(cap)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        let rg = self.rg(&[x]);
        self.push(value, Op::ClampMax(x, cap), rg)
    }

    /// Concatenates along the last axis. Both inputs are `[n]`/`[m]` or
    /// `[B, n]`/`[B, m]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == sb.len() && (sa.len() == 1 || (sa.len() == 2 && sa[0] == sb[0]));
        if !ok {
            return Err(Error::shape("concat", format!("{sa:?} vs {sb:?}")));
        }
        let rows = if sa.len() == 2 { sa[0] } else { 1 };
        let (n, m) = (*sa.last().unwrap(), *sb.last().unwrap());
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(rows * (n + m));
        for r in 0..rows {
            data.extend_from_slice(&da[r * n..(r + 1) * n]);
            data.extend_from_slice(&db[r * m..(r + 1) * m]);
        }
        let shape = if sa.len() == 2 {
            vec![rows, n + m]
        } else {
            vec![n + m]
        };
        let rg = self.rg(&[a, b]);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    /// Selects rows (leading-axis slices) by index; repeats are allowed.
    pub fn gather(&mut self, input: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.is_empty() {
            return Err(Error::shape("gather", "cannot gather from a scalar"));
        }
        let rows = s[0];
        let w: usize = s[1..].iter().product();
        if let Some(bad) = idx.iter().find(|i| **i >= rows) {
            return Err(Error::shape(
                "gather",
                format!("row {bad} out of range for {rows} rows"),
            ));
        }
        let d = self.value(input).data();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(&d[i * w..(i + 1) * w]);
        }
        let mut shape = s.clone();
        shape[0] = idx.len();
        let rg = self.rg(&[input]);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Gather {
                input,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: F = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: F = t.data().iter().copied().sum::<F>() / F::c(t.len().max(1) as f64);
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    fn row_reduce(&self, op: &'static str, x: Var) -> Result<(usize, usize, bool)> {
        let s = self.shape(x);
        match s.len() {
            1 => Ok((1, s[0], false)),
            2 => Ok((s[0], s[1], true)),
            _ => Err(Error::shape(
                op,
                format!("expected [n] or [B,n], got {s:?}"),
            )),
        }
    }

    /// Squared Euclidean norm of each row: `[B, n] -> [B]`.
    pub fn row_sq_norm(&mut self, x: Var) -> Result<Var> {
        let (rows, n, batched) = self.row_reduce("row_sq_norm", x)?;
        let d = self.value(x).data();
        let data: Vec<F> = (0..rows)
            .map(|r| dot(&d[r * n..(r + 1) * n], &d[r * n..(r + 1) * n]))
            .collect();
        let value = if batched {
            Tensor::from_vec(data)
        } else {
            Tensor::scalar(data[0])
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::RowSqNorm(x), rg))
    }

    /// Euclidean norm of each row: `[B, n] -> [B]`. The subgradient at the
    /// origin is taken as zero.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let (rows, n, batched) = self.row_reduce("row_norm", x)?;
        let d = self.value(x).data();
        let data: Vec<F> = (0..rows)
            .map(|r| dot(&d[r * n..(r + 1) * n], &d[r * n..(r + 1) * n]).sqrt())
            .collect();
        let value = if batched {
            Tensor::from_vec(data)
        } else {
            Tensor::scalar(data[0])
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::RowNorm(x), rg))
    }

    #[doc(hidden)]
    pub fn faulty_identity(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        let rg = self.rg(&[x]);
        self.push(value, Op::FaultyIdentity(x), rg)
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every node on a path from a gradient-requiring leaf receives
    /// dLoss/dNode; contributions from fan-out are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<F>>], v: Var) -> Option<&'a mut Vec<F>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); n]))
    }

    fn backward_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                cols,
                dims,
            } => {
                let [b, c, h, w, k, co] = *dims;
                let (oh, ow) = (h - k + 1, w - k + 1);
                let n = b * oh * ow;
                let r = c * k * k;
                // gradient rearranged to [C_out, B*oh*ow]
                let mut gcb = vec![F::zero(); co * n];
                for bi in 0..b {
                    for o in 0..co {
                        let src = &g[(bi * co + o) * oh * ow..(bi * co + o + 1) * oh * ow];
                        gcb[o * n + bi * oh * ow..o * n + (bi + 1) * oh * ow].copy_from_slice(src);
                    }
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for o in 0..co {
                        gb[o] += gcb[o * n..(o + 1) * n].iter().copied().sum::<F>();
                    }
                }
                if let Some(gk) = self.acc(grads, *kernel) {
                    for o in 0..co {
                        let go = &gcb[o * n..(o + 1) * n];
                        for ri in 0..r {
                            gk[o * r + ri] += dot(go, &cols[ri * n..(ri + 1) * n]);
                        }
                    }
                }
                if self.nodes[input.0].requires_grad {
                    let kd = self.value(*kernel).data();
                    let mut dcols = vec![F::zero(); r * n];
                    for o in 0..co {
                        let go = &gcb[o * n..(o + 1) * n];
                        for ri in 0..r {
                            axpy(kd[o * r + ri], go, &mut dcols[ri * n..(ri + 1) * n]);
                        }
                    }
                    let gi = self.acc(grads, *input).unwrap();
                    col2im(&dcols, gi, b, c, h, w, k);
                }
            }
            Op::MaxPool { input, argmax } => {
                if let Some(gi) = self.acc(grads, *input) {
                    for (gv, &src) in g.iter().zip(argmax) {
                        gi[src] += *gv;
                    }
                }
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let ishape = self.shape(*input);
                let n = *ishape.last().unwrap();
                let b = self.value(*input).len() / n;
                let m = self.shape(*weight)[0];
                if let Some(gb) = self.acc(grads, *bias) {
                    for bi in 0..b {
                        for j in 0..m {
                            gb[j] += g[bi * m + j];
                        }
                    }
                }
                if self.nodes[weight.0].requires_grad {
                    let x = self.value(*input).data();
                    let gw = self.acc(grads, *weight).unwrap();
                    for bi in 0..b {
                        let xr = &x[bi * n..(bi + 1) * n];
                        for j in 0..m {
                            axpy(g[bi * m + j], xr, &mut gw[j * n..(j + 1) * n]);
                        }
                    }
                }
                if self.nodes[input.0].requires_grad {
                    let wd = self.value(*weight).data();
                    let gi = self.acc(grads, *input).unwrap();
                    for bi in 0..b {
                        let gr = &mut gi[bi * n..(bi + 1) * n];
                        for j in 0..m {
                            axpy(g[bi * m + j], &wd[j * n..(j + 1) * n], gr);
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if self.nodes[x.0].requires_grad {
                    let xv = self.value(*x).data();
                    let gi = self.acc(grads, *x).unwrap();
                    for ((d, gv), xi) in gi.iter_mut().zip(g).zip(xv) {
                        if *xi > F::zero() {
                            *d += *gv;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gi) = self.acc(grads, *v) {
                        axpy(F::one(), g, gi);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(gi) = self.acc(grads, *a) {
                    axpy(F::one(), g, gi);
                }
                if let Some(gi) = self.acc(grads, *b) {
                    axpy(-F::one(), g, gi);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(gi) = self.acc(grads, *a) {
                    for ((d, gv), o) in gi.iter_mut().zip(g).zip(bv) {
                        *d += *gv * *o;
                    }
                }
                if let Some(gi) = self.acc(grads, *b) {
                    for ((d, gv), o) in gi.iter_mut().zip(g).zip(av) {
                        *d += *gv * *o;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gi) = self.acc(grads, *x) {
                    axpy(*c, g, gi);
                }
            }
            Op::Exp(x) => {
                let out = node.value.data();
                if let Some(gi) = self.acc(grads, *x) {
                    for ((d, gv), o) in gi.iter_mut().zip(g).zip(out) {
                        *d += *gv * *o;
                    }
                }
            }
            Op::ClampMax(x, cap) => {
                let xv = self.value(*x).data();
                if let Some(gi) = self.acc(grads, *x) {
                    for ((d, gv), xi) in gi.iter_mut().zip(g).zip(xv) {
                        if *xi < *cap {
                            *d += *gv;
                        }
                    }
                }
            }
            Op::Concat(a, b) => {
                let n = *self.shape(*a).last().unwrap();
                let m = *self.shape(*b).last().unwrap();
                let rows = g.len() / (n + m);
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..rows {
                        axpy(
                            F::one(),
                            &g[r * (n + m)..r * (n + m) + n],
                            &mut ga[r * n..(r + 1) * n],
                        );
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for r in 0..rows {
                        axpy(
                            F::one(),
                            &g[r * (n + m) + n..(r + 1) * (n + m)],
                            &mut gb[r * m..(r + 1) * m],
                        );
                    }
                }
            }
            Op::Gather { input, idx } => {
                let w: usize = self.shape(*input)[1..].iter().product();
                if let Some(gi) = self.acc(grads, *input) {
                    for (k, &row) in idx.iter().enumerate() {
                        axpy(
                            F::one(),
                            &g[k * w..(k + 1) * w],
                            &mut gi[row * w..(row + 1) * w],
                        );
                    }
                }
            }
            Op::Reshape(x) | Op::FaultyIdentity(x) => {
                let factor = if matches!(node.op, Op::FaultyIdentity(_)) {
                    F::c(2.0)
                } else {
                    F::one()
                };
                if let Some(gi) = self.acc(grads, *x) {
                    axpy(factor, g, gi);
                }
            }
            Op::Sum(x) => {
                if let Some(gi) = self.acc(grads, *x) {
                    gi.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                let n = F::c(self.value(*x).len().max(1) as f64);
                if let Some(gi) = self.acc(grads, *x) {
                    gi.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
            Op::RowSqNorm(x) => {
                let xv = self.value(*x).data();
                let n = *self.shape(*x).last().unwrap();
                if let Some(gi) = self.acc(grads, *x) {
                    for (r, gv) in g.iter().enumerate() {
                        axpy(
                            F::c(2.0) * *gv,
                            &xv[r * n..(r + 1) * n],
                            &mut gi[r * n..(r + 1) * n],
                        );
                    }
                }
            }
            Op::RowNorm(x) => {
                let xv = self.value(*x).data();
                let out = node.value.data();
                let n = *self.shape(*x).last().unwrap();
                if let Some(gi) = self.acc(grads, *x) {
                    for (r, gv) in g.iter().enumerate() {
                        if out[r] > F::zero() {
                            axpy(
                                *gv / out[r],
                                &xv[r * n..(r + 1) * n],
                                &mut gi[r * n..(r + 1) * n],
                            );
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2, 3], &[1., -2., 3., 4., 5., -6.]));
        let k = tape.constant(t(&[1, 1, 1, 1], &[1.]));
        let b = tape.constant(t(&[1], &[0.]));
        let y = tape.conv2d(x, k, b).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 4, 4]));
        let k = tape.constant(Tensor::full(&[3, 2, 2, 2], 0.7));
        let b = tape.constant(t(&[3], &[1., -2., 0.5]));
        let y = tape.conv2d(x, k, b).unwrap();
        assert_eq!(tape.shape(y), &[3, 3, 3]);
        for (o, bias) in [1., -2., 0.5].iter().enumerate() {
            assert!(tape.value(y).data()[o * 9..(o + 1) * 9]
                .iter()
                .all(|v| v == bias));
        }
    }

    #[test]
    fn conv_window_sums() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let k = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = tape.constant(t(&[1], &[0.]));
        let y = tape.conv2d(x, k, b).unwrap();
        assert_eq!(tape.value(y).data(), &[12., 16., 24., 28.]);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 3, 3]));
        let k = tape.constant(Tensor::zeros(&[1, 3, 2, 2]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let err = tape.conv2d(x, k, b).unwrap_err().to_string();
        assert!(err.contains("3 input channels"), "{err}");
        let k4 = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        assert!(tape.conv2d(x, k4, b).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1, 2, 2], &[1., 2., 3., 4.]));
        let y = tape.maxpool2d(x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.]);
        let id = tape.maxpool2d(x, 1).unwrap();
        assert_eq!(tape.value(id), tape.value(x));
        assert!(tape.maxpool2d(x, 3).is_err());

        let odd = tape.param(t(&[1, 3, 3], &[1., 2., 9., 3., 4., 0., 5., 0., 6.]));
        let y = tape.maxpool2d(odd, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[4., 9., 5., 6.]);
    }

    #[test]
    fn maxpool_tie_routes_to_first_element() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(&[1, 4, 4], 2.0));
        let y = tape.maxpool2d(x, 2).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        let gx = g.get(x).unwrap();
        let hot: Vec<usize> = (0..16).filter(|i| gx[*i] != 0.0).collect();
        assert_eq!(hot, vec![0, 2, 8, 10]);
    }

    #[test]
    fn dense_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[1., 2.]));
        let w = tape.constant(t(&[2, 2], &[1., 1., 0., 1.]));
        let b = tape.constant(t(&[2], &[0., 1.]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3., 3.]);
        let eye = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let zb = tape.constant(Tensor::zeros(&[2]));
        let y2 = tape.dense(x, eye, zb).unwrap();
        assert_eq!(tape.value(y2).data(), &[1., 2.]);
        let zw = tape.constant(Tensor::zeros(&[2, 2]));
        let y3 = tape.dense(x, zw, b).unwrap();
        assert_eq!(tape.value(y3).data(), &[0., 1.]);
        let w3 = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(tape.dense(x, w3, b).is_err());
    }

    #[test]
    fn relu_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[-1., 0., 2.]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0., 0., 2.]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0., 0., 1.]);
    }

    #[test]
    fn backward_simple_rules() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[1., 2., 3.]));
        let s = tape.sum(x);
        assert_eq!(tape.backward(s).unwrap().get(x).unwrap(), &[1., 1., 1.]);

        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        assert_eq!(tape.backward(sq).unwrap().get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x*x + 3x at x=2 -> dy/dx = 2x + 3 = 7
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(2.0));
        let sq = tape.mul(x, x).unwrap();
        let lin = tape.scale(x, 3.0);
        let y = tape.add(sq, lin).unwrap();
        assert_eq!(tape.backward(y).unwrap().get(x).unwrap(), &[7.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(2.0));
        let d = tape.detach(x);
        let y = tape.mul(x, d).unwrap();
        assert_eq!(tape.backward(y).unwrap().get(x).unwrap(), &[2.0]);
    }
}
