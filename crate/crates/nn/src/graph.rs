//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Values that do not
//! depend on a trainable parameter are marked gradient-free, so frozen
//! sub-networks cost nothing in the backward pass.

use std::collections::HashMap;

use crate::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use crate::elem::{gemm, Elem};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param { store: u32, id: ParamId },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    BroadcastRows(Var),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    SpatialMean(Var),
    AvgPool { x: Var, k: usize },
    Min(Var, Var),
    Clamp { x: Var, lo: T, hi: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Pending running-statistics update produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BufferUpdate<T> {
    pub store: u32,
    pub id: ParamId,
    pub value: Vec<T>,
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    map: HashMap<(u32, ParamId), Tensor<T>>,
}

impl<T: Elem> Gradients<T> {
    pub fn get(&self, store: &ParamStore<T>, id: ParamId) -> Option<&Tensor<T>> {
        self.map.get(&(store.id(), id))
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Squared L2 norm of the gradients belonging to `store`.
    pub fn store_sum_sq(&self, store: &ParamStore<T>) -> f64 {
        self.map.iter().filter(|((s, _), _)| *s == store.id()).map(|(_, t)| t.sum_sq()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.map.values().map(Tensor::sum_sq).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = T::of(max_norm / (norm + 1e-6));
            for t in self.map.values_mut() {
                t.data.iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }

    fn accumulate(&mut self, key: (u32, ParamId), g: Tensor<T>) {
        match self.map.get_mut(&key) {
            Some(t) => t.data.iter_mut().zip(&g.data).for_each(|(a, &b)| *a += b),
            None => {
                self.map.insert(key, g);
            }
        }
    }
}

pub struct Graph<T: Elem> {
    nodes: Vec<Node<T>>,
    training: bool,
    buffer_updates: Vec<BufferUpdate<T>>,
}

const NORM_EPS: f64 = 1e-5;

impl<T: Elem> Graph<T> {
    /// `training` selects batch statistics in normalization layers.
    pub fn new(training: bool) -> Self {
        Self { nodes: Vec::new(), training, buffer_updates: Vec::new() }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Frozen stores and buffers yield
    /// constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let entry = store.entry(id);
        let trainable = !store.is_frozen() && entry.kind == crate::params::ParamKind::Weight;
        self.push(entry.value.clone(), Op::Param { store: store.id(), id }, trainable)
    }

    /// Constant copy of `v`; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.push(t, Op::Leaf, false)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, NnError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape != tb.shape {
            return Err(NnError::Shape(format!("elementwise {:?} vs {:?}", ta.shape, tb.shape)));
        }
        Ok(Tensor::new(ta.shape.clone(), ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect()))
    }

    fn unary(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let t = &self.nodes[a.0].value;
        Tensor::new(t.shape.clone(), t.data.iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let t = self.binary(a, b, |x, y| x + y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let t = self.binary(a, b, |x, y| x - y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let t = self.binary(a, b, |x, y| x * y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let t = self.binary(a, b, |x, y| if y < x { y } else { x })?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(t, Op::Min(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let t = self.unary(a, |x| x * c);
        let ng = self.ng(&[a]);
        self.push(t, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let t = self.unary(a, |x| x + c);
        let ng = self.ng(&[a]);
        self.push(t, Op::Offset(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| if x > T::zero() { x } else { T::zero() });
        let ng = self.ng(&[a]);
        self.push(t, Op::Relu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.tanh());
        let ng = self.ng(&[a]);
        self.push(t, Op::Tanh(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.exp());
        let ng = self.ng(&[a]);
        self.push(t, Op::Exp(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x * x);
        let ng = self.ng(&[a]);
        self.push(t, Op::Square(a), ng)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        let t = self.unary(a, |x| x.max(lo).min(hi));
        let ng = self.ng(&[a]);
        self.push(t, Op::Clamp { x: a, lo, hi }, ng)
    }

    /// `x [N, in] * w[out, in]^T + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(NnError::Shape(format!("linear input {xs:?} with weight {ws:?}")));
        }
        let (n, k, m) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); n * m];
        gemm(n, k, m, T::one(), &self.nodes[x.0].value.data, false, &self.nodes[w.0].value.data, true, T::zero(), &mut out);
        if let Some(b) = b {
            let bv = &self.nodes[b.0].value;
            if bv.shape != [m] {
                return Err(NnError::Shape(format!("bias {:?} for {m} outputs", bv.shape)));
            }
            for row in out.chunks_mut(m) {
                row.iter_mut().zip(&bv.data).for_each(|(o, &bb)| *o += bb);
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        Ok(self.push(Tensor::new(vec![n, m], out), Op::Linear { x, w, b }, ng))
    }

    /// 2-D convolution, `x [N, C, H, W]`, `w [O, C, KH, KW]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var, NnError> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad).ok_or_else(|| {
            NnError::Shape(format!(
                "conv input {:?} incompatible with kernel {:?} (stride {stride}, pad {pad})",
                self.shape(x),
                self.shape(w)
            ))
        })?;
        let bias = b.map(|b| self.nodes[b.0].value.data.as_slice());
        let y = conv2d_forward(&self.nodes[x.0].value.data, &self.nodes[w.0].value.data, bias, &geom);
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        Ok(self.push(Tensor::new(vec![geom.n, geom.o, geom.oh, geom.ow], y), Op::Conv { x, w, b, geom }, ng))
    }

    /// Batch normalization over `[N, C]` or `[N, C, H, W]`. In training
    /// graphs batch statistics are used and the running buffers are updated
    /// (queued; see [`commit_buffers`](Self::commit_buffers)). Frozen stores
    /// always use their running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        store: &ParamStore<T>,
        running_mean: ParamId,
        running_var: ParamId,
        momentum: f64,
    ) -> Result<Var, NnError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 && shape.len() != 4 {
            return Err(NnError::Shape(format!("batch norm input {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        let spatial: usize = shape[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(NnError::Shape("batch norm affine parameters".into()));
        }
        let batch_stats = self.training && !store.is_frozen();
        if batch_stats && n * spatial < 2 {
            return Err(NnError::Shape("batch statistics need more than one value per channel".into()));
        }
        let xv = &self.nodes[x.0].value.data;
        let m = (n * spatial) as f64;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        if batch_stats {
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * spatial;
                    mean[ch] += xv[base..base + spatial].iter().map(|v| v.f64()).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * spatial;
                    var[ch] += xv[base..base + spatial].iter().map(|v| (v.f64() - mean[ch]).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
        } else {
            let rm = store.get(running_mean);
            let rv = store.get(running_var);
            for ch in 0..c {
                mean[ch] = rm.data[ch].f64();
                var[ch] = rv.data[ch].f64();
            }
        }
        let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + NORM_EPS).sqrt())).collect();
        let meant: Vec<T> = mean.iter().map(|&v| T::of(v)).collect();
        let g = &self.nodes[gamma.0].value.data;
        let bt = &self.nodes[beta.0].value.data;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * spatial;
                for j in base..base + spatial {
                    let h = (xv[j] - meant[ch]) * inv_std[ch];
                    xhat[j] = h;
                    out[j] = g[ch] * h + bt[ch];
                }
            }
        }
        if batch_stats {
            let rm = store.get(running_mean);
            let rv = store.get(running_var);
            let unbias = m / (m - 1.0);
            let new_mean = (0..c).map(|ch| T::of((1.0 - momentum) * rm.data[ch].f64() + momentum * mean[ch])).collect();
            let new_var =
                (0..c).map(|ch| T::of((1.0 - momentum) * rv.data[ch].f64() + momentum * var[ch] * unbias)).collect();
            self.buffer_updates.push(BufferUpdate { store: store.id(), id: running_mean, value: new_mean });
            self.buffer_updates.push(BufferUpdate { store: store.id(), id: running_var, value: new_var });
        }
        let ng = self.ng(&[x, gamma, beta]);
        Ok(self.push(Tensor::new(shape, out), Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }, ng))
    }

    /// Layer normalization over the last dimension of a `[N, D]` input.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NnError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || self.shape(gamma) != [shape[1]] || self.shape(beta) != [shape[1]] {
            return Err(NnError::Shape(format!("layer norm input {shape:?}")));
        }
        let (n, d) = (shape[0], shape[1]);
        let xv = &self.nodes[x.0].value.data;
        let g = &self.nodes[gamma.0].value.data;
        let bt = &self.nodes[beta.0].value.data;
        let mut xhat = vec![T::zero(); n * d];
        let mut out = vec![T::zero(); n * d];
        let mut inv_std = vec![T::zero(); n];
        for i in 0..n {
            let row = &xv[i * d..(i + 1) * d];
            let mean = row.iter().map(|v| v.f64()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = T::of(1.0 / (var + NORM_EPS).sqrt());
            inv_std[i] = inv;
            let mt = T::of(mean);
            for j in 0..d {
                let h = (row[j] - mt) * inv;
                xhat[i * d + j] = h;
                out[i * d + j] = g[j] * h + bt[j];
            }
        }
        let ng = self.ng(&[x, gamma, beta]);
        Ok(self.push(Tensor::new(shape, out), Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NnError> {
        let t = &self.nodes[x.0].value;
        if shape.iter().product::<usize>() != t.len() {
            return Err(NnError::Shape(format!("reshape {:?} to {shape:?}", t.shape)));
        }
        let t = Tensor::new(shape, t.data.clone());
        let ng = self.ng(&[x]);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// Flattens everything after the first axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.shape(x);
        let (n, rest) = (s[0], s[1..].iter().product());
        self.reshape(x, vec![n, rest])
    }

    /// Concatenates `[N, d_i]` inputs along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let n = self.shape(parts[0])[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != n {
                return Err(NnError::Shape(format!("concat part {s:?} with {n} rows")));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[p.0].value.data[i * w..(i + 1) * w]);
            }
        }
        let ng = self.ng(parts);
        Ok(self.push(Tensor::new(vec![n, total], out), Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start + len > s[1] {
            return Err(NnError::Shape(format!("slice [{start}, {}) of {s:?}", start + len)));
        }
        let (n, w) = (s[0], s[1]);
        let src = &self.nodes[x.0].value.data;
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&src[i * w + start..i * w + start + len]);
        }
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(vec![n, len], out), Op::SliceCols { x, start }, ng))
    }

    /// Repeats a `[M]` vector into `n` rows.
    pub fn broadcast_rows(&mut self, v: Var, n: usize) -> Result<Var, NnError> {
        let t = &self.nodes[v.0].value;
        if t.shape.len() != 1 {
            return Err(NnError::Shape(format!("broadcast of {:?}", t.shape)));
        }
        let m = t.shape[0];
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(&t.data);
        }
        let ng = self.ng(&[v]);
        Ok(self.push(Tensor::new(vec![n, m], out), Op::BroadcastRows(v), ng))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data.iter().copied().sum::<T>();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let s = t.data.iter().copied().sum::<T>() / T::of(t.len() as f64);
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::MeanAll(x), ng)
    }

    /// Row sums of a `[N, M]` input, as `[N, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(NnError::Shape(format!("sum_cols of {s:?}")));
        }
        let out = self.nodes[x.0].value.data.chunks(s[1]).map(|r| r.iter().copied().sum::<T>()).collect();
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(vec![s[0], 1], out), Op::SumCols(x), ng))
    }

    /// Global average pooling `[N, C, H, W] -> [N, C]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(NnError::Shape(format!("spatial mean of {s:?}")));
        }
        let hw = s[2] * s[3];
        let inv = T::of(1.0 / hw as f64);
        let out = self.nodes[x.0].value.data.chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(vec![s[0], s[1]], out), Op::SpatialMean(x), ng))
    }

    /// Non-overlapping `k x k` average pooling; `H` and `W` must be
    /// multiples of `k`.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || k == 0 || s[2] % k != 0 || s[3] % k != 0 {
            return Err(NnError::Shape(format!("{k}x{k} average pool of {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (h / k, w / k);
        let inv = T::of(1.0 / (k * k) as f64);
        let xv = &self.nodes[x.0].value.data;
        let mut out = vec![T::zero(); s[0] * s[1] * oh * ow];
        for (p, plane) in xv.chunks(h * w).enumerate() {
            let o = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..h {
                for xx in 0..w {
                    o[(y / k) * ow + xx / k] += plane[y * w + xx];
                }
            }
            o.iter_mut().for_each(|v| *v *= inv);
        }
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(vec![s[0], s[1], oh, ow], out), Op::AvgPool { x, k }, ng))
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean_all(sq))
    }

    /// Applies the queued running-statistics updates that belong to `store`.
    pub fn commit_buffers(&mut self, store: &mut ParamStore<T>) {
        let id = store.id();
        let (mine, rest): (Vec<_>, Vec<_>) = self.buffer_updates.drain(..).partition(|u| u.store == id);
        self.buffer_updates = rest;
        for u in mine {
            store.get_mut(u.id).data.copy_from_slice(&u.value);
        }
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, NnError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NnError::Shape(format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop_node(&self, i: usize, g: Vec<T>, grads: &mut [Option<Vec<T>>], out: &mut Gradients<T>) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].needs_grad;
        let val = |v: Var| &nodes[v.0].value;
        let mut acc = |v: Var, d: Vec<T>| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.iter_mut().zip(&d).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(d),
            }
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Param { store, id } => {
                out.accumulate((*store, *id), Tensor::new(nodes[i].value.shape.clone(), g));
            }
            Op::Add(a, b) => {
                if wants(*b) {
                    acc(*b, g.clone());
                }
                acc(*a, g);
            }
            Op::Sub(a, b) => {
                if wants(*b) {
                    acc(*b, g.iter().map(|&v| -v).collect());
                }
                acc(*a, g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&val(*a).data, &val(*b).data);
                if wants(*a) {
                    acc(*a, g.iter().zip(vb).map(|(&d, &y)| d * y).collect());
                }
                if wants(*b) {
                    acc(*b, g.iter().zip(va).map(|(&d, &x)| d * x).collect());
                }
            }
            Op::Min(a, b) => {
                let (va, vb) = (&val(*a).data, &val(*b).data);
                if wants(*a) {
                    acc(*a, g.iter().zip(va.iter().zip(vb)).map(|(&d, (&x, &y))| if y < x { T::zero() } else { d }).collect());
                }
                if wants(*b) {
                    acc(*b, g.iter().zip(va.iter().zip(vb)).map(|(&d, (&x, &y))| if y < x { d } else { T::zero() }).collect());
                }
            }
            Op::Scale(a, c) => acc(*a, g.iter().map(|&d| d * *c).collect()),
            Op::Offset(a) | Op::Reshape(a) => acc(*a, g),
            Op::Relu(a) => {
                let y = &nodes[i].value.data;
                acc(*a, g.iter().zip(y).map(|(&d, &v)| if v > T::zero() { d } else { T::zero() }).collect());
            }
            Op::Tanh(a) => {
                let y = &nodes[i].value.data;
                acc(*a, g.iter().zip(y).map(|(&d, &v)| d * (T::one() - v * v)).collect());
            }
            Op::Exp(a) => {
                let y = &nodes[i].value.data;
                acc(*a, g.iter().zip(y).map(|(&d, &v)| d * v).collect());
            }
            Op::Square(a) => {
                let x = &val(*a).data;
                let two = T::of(2.0);
                acc(*a, g.iter().zip(x).map(|(&d, &v)| two * d * v).collect());
            }
            Op::Clamp { x, lo, hi } => {
                let xv = &val(*x).data;
                acc(*x, g.iter().zip(xv).map(|(&d, &v)| if v < *lo || v > *hi { T::zero() } else { d }).collect());
            }
            Op::Linear { x, w, b } => {
                let (xs, ws) = (&val(*x).shape, &val(*w).shape);
                let (n, k, m) = (xs[0], xs[1], ws[0]);
                if wants(*x) {
                    let mut dx = vec![T::zero(); n * k];
                    gemm(n, m, k, T::one(), &g, false, &val(*w).data, false, T::zero(), &mut dx);
                    acc(*x, dx);
                }
                if wants(*w) {
                    let mut dw = vec![T::zero(); m * k];
                    gemm(m, n, k, T::one(), &g, true, &val(*x).data, false, T::zero(), &mut dw);
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let mut db = vec![T::zero(); m];
                        for row in g.chunks(m) {
                            db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                        }
                        acc(*b, db);
                    }
                }
            }
            Op::Conv { x, w, b, geom } => {
                let grads_c = conv2d_backward(&val(*x).data, &val(*w).data, &g, geom, wants(*x));
                if let Some(dx) = grads_c.dx {
                    acc(*x, dx);
                }
                acc(*w, grads_c.dw);
                if let Some(b) = b {
                    acc(*b, grads_c.db);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let shape = &nodes[i].value.shape;
                let (n, c) = (shape[0], shape[1]);
                let spatial: usize = shape[2..].iter().product();
                let gm = &val(*gamma).data;
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * spatial;
                        for j in base..base + spatial {
                            dgamma[ch] += g[j] * xhat[j];
                            dbeta[ch] += g[j];
                        }
                    }
                }
                if wants(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    if *batch_stats {
                        let m = T::of((n * spatial) as f64);
                        for ch in 0..c {
                            // sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma
                            let sd = gm[ch] * dbeta[ch];
                            let sdx = gm[ch] * dgamma[ch];
                            let k = inv_std[ch] / m;
                            for s in 0..n {
                                let base = (s * c + ch) * spatial;
                                for j in base..base + spatial {
                                    dx[j] = k * (m * gm[ch] * g[j] - sd - xhat[j] * sdx);
                                }
                            }
                        }
                    } else {
                        for s in 0..n {
                            for ch in 0..c {
                                let base = (s * c + ch) * spatial;
                                let k = gm[ch] * inv_std[ch];
                                for j in base..base + spatial {
                                    dx[j] = g[j] * k;
                                }
                            }
                        }
                    }
                    acc(*x, dx);
                }
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let shape = &nodes[i].value.shape;
                let (n, d) = (shape[0], shape[1]);
                let gm = &val(*gamma).data;
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for r in 0..n {
                    for j in 0..d {
                        dgamma[j] += g[r * d + j] * xhat[r * d + j];
                        dbeta[j] += g[r * d + j];
                    }
                }
                if wants(*x) {
                    let mut dx = vec![T::zero(); n * d];
                    let dt = T::of(d as f64);
                    for r in 0..n {
                        let mut sd = T::zero();
                        let mut sdx = T::zero();
                        for j in 0..d {
                            let dh = g[r * d + j] * gm[j];
                            sd += dh;
                            sdx += dh * xhat[r * d + j];
                        }
                        let k = inv_std[r] / dt;
                        for j in 0..d {
                            let dh = g[r * d + j] * gm[j];
                            dx[r * d + j] = k * (dt * dh - sd - xhat[r * d + j] * sdx);
                        }
                    }
                    acc(*x, dx);
                }
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::ConcatCols(parts) => {
                let n = nodes[i].value.shape[0];
                let total = nodes[i].value.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).shape[1];
                    if wants(p) {
                        let mut d = Vec::with_capacity(n * w);
                        for r in 0..n {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        acc(p, d);
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (n, w) = (val(*x).shape[0], val(*x).shape[1]);
                let len = nodes[i].value.shape[1];
                let mut d = vec![T::zero(); n * w];
                for r in 0..n {
                    d[r * w + start..r * w + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                acc(*x, d);
            }
            Op::BroadcastRows(v) => {
                let m = val(*v).shape[0];
                let mut d = vec![T::zero(); m];
                for row in g.chunks(m) {
                    d.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                }
                acc(*v, d);
            }
            Op::SumAll(x) => acc(*x, vec![g[0]; val(*x).len()]),
            Op::MeanAll(x) => {
                let n = val(*x).len();
                acc(*x, vec![g[0] / T::of(n as f64); n]);
            }
            Op::SumCols(x) => {
                let m = val(*x).shape[1];
                let mut d = Vec::with_capacity(val(*x).len());
                for &gv in &g {
                    d.extend(std::iter::repeat_n(gv, m));
                }
                acc(*x, d);
            }
            Op::SpatialMean(x) => {
                let s = &val(*x).shape;
                let hw = s[2] * s[3];
                let inv = T::of(1.0 / hw as f64);
                let mut d = Vec::with_capacity(val(*x).len());
                for &gv in &g {
                    d.extend(std::iter::repeat_n(gv * inv, hw));
                }
                acc(*x, d);
            }
            Op::AvgPool { x, k } => {
                let s = &val(*x).shape;
                let (h, w) = (s[2], s[3]);
                let (oh, ow) = (h / k, w / k);
                let inv = T::of(1.0 / (k * k) as f64);
                let mut d = vec![T::zero(); val(*x).len()];
                for (p, plane) in d.chunks_mut(h * w).enumerate() {
                    let gp = &g[p * oh * ow..(p + 1) * oh * ow];
                    for y in 0..h {
                        for xx in 0..w {
                            plane[y * w + xx] = gp[(y / k) * ow + xx / k] * inv;
                        }
                    }
                }
                acc(*x, d);
            }
        }
    }
}
