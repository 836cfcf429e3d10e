use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, Broadcast};
use super::{Result, Scalar, Tensor, TensorError};
use crate::rng::{unit_f64, SeededRng};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

enum Op<T> {
    Leaf {
        name: Option<String>,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    MatMul(usize, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    Gelu(usize),
    Softmax(usize, usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        ignore: usize,
        probs: Vec<T>,
        count: usize,
    },
    Gather {
        table: usize,
        ids: Vec<usize>,
    },
    Dropout {
        x: usize,
        mask: Vec<T>,
    },
    Sum(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
///
/// A tape has a single writer. Independent tapes may run on different
/// threads over copies of the same parameters.
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    by_index: Vec<Option<Vec<T>>>,
    named: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a named leaf.
    pub fn named(&self, name: &str) -> Option<&Tensor<T>> {
        self.named.get(name)
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor<T>> {
        self.named
    }

    /// Gradient of any variable that required one, as a flat buffer.
    pub fn get(&self, var: Var) -> Result<Option<&[T]>> {
        if var.tape != self.tape {
            return Err(TensorError::ForeignVar);
        }
        Ok(self.by_index.get(var.index).and_then(|g| g.as_deref()))
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(v.index)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Trainable leaf whose gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        self.push(
            value,
            Op::Leaf {
                name: Some(name.into()),
            },
            true,
        )
    }

    /// Leaf with optional gradient tracking and no name.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf { name: None }, requires_grad)
    }

    /// Constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        let i = self.idx(v)?;
        Ok(&self.nodes[i].value)
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str) -> Result<(usize, usize, Vec<usize>)> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        let out = kernels::broadcast_shape(sa, sb).ok_or_else(|| TensorError::Shape {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        Ok((ia, ib, out))
    }

    fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Tensor<T>, usize, usize)> {
        let (ia, ib, shape) = self.binary(a, b, name)?;
        let va = &self.nodes[ia].value;
        let vb = &self.nodes[ib].value;
        let (ma, mb) = (Broadcast::new(va.shape(), &shape), Broadcast::new(vb.shape(), &shape));
        let n: usize = shape.iter().product();
        let data = match (&ma, &mb) {
            (Broadcast::Identity, Broadcast::Identity) => {
                va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect()
            }
            (Broadcast::Identity, Broadcast::Cyclic(_)) => va
                .data()
                .iter()
                .zip(vb.data().iter().cycle())
                .map(|(&x, &y)| f(x, y))
                .collect(),
            _ => (0..n)
                .map(|i| f(va.data()[ma.index(i)], vb.data()[mb.index(i)]))
                .collect(),
        };
        Ok((Tensor::new(shape, data)?, ia, ib))
    }

    /// Broadcasting addition.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, ia, ib) = self.elementwise(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Add(ia, ib), rg))
    }

    /// Broadcasting subtraction.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, ia, ib) = self.elementwise(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Sub(ia, ib), rg))
    }

    /// Broadcasting elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, ia, ib) = self.elementwise(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Mul(ia, ib), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| x * c).collect())?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Scale(ia, c), rg))
    }

    /// Batched matrix product `[.., m, k] · [.., k, n]` with broadcast batch axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (sa, sb) = (va.shape(), vb.shape());
        let err = || TensorError::Shape {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(err());
        }
        let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let batch = kernels::broadcast_shape(ba, bb).ok_or_else(err)?;
        let (ma, mb) = (Broadcast::new(ba, &batch), Broadcast::new(bb, &batch));
        let nb: usize = batch.iter().product();
        let mut out = vec![T::zero(); nb * m * n];
        for bi in 0..nb {
            let ao = ma.index(bi) * m * k;
            let bo = mb.index(bi) * k * n;
            kernels::matmul_acc(
                &va.data()[ao..ao + m * k],
                &vb.data()[bo..bo + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = batch;
        shape.extend([m, n]);
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(ia, ib), rg))
    }

    /// Reorders axes; `axes[i]` is the input axis placed at output position `i`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let rank = v.shape().len();
        let mut seen = vec![false; rank];
        for &ax in axes {
            if ax >= rank || seen[ax] {
                return Err(TensorError::Axis { axis: ax, rank });
            }
            seen[ax] = true;
        }
        if axes.len() != rank {
            return Err(TensorError::Axis { axis: axes.len(), rank });
        }
        let map = permute_map(v.shape(), axes);
        let shape: Vec<usize> = axes.iter().map(|&ax| v.shape()[ax]).collect();
        let data = map.iter().map(|&j| v.data()[j]).collect();
        let rg = self.rg(ia);
        Ok(self.push(Tensor::new(shape, data)?, Op::Permute(ia, axes.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        if shape.iter().product::<usize>() != v.len() {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: v.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor::new(shape.to_vec(), v.data().to_vec())?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Reshape(ia), rg))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| kernels::gelu(x)).collect())?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Gelu(ia), rg))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let rank = v.shape().len();
        if axis >= rank {
            return Err(TensorError::Axis { axis, rank });
        }
        let out = Tensor::new(v.shape().to_vec(), kernels::softmax(v.data(), v.shape(), axis))?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Softmax(ia, axis), rg))
    }

    /// Normalizes over the last axis (biased variance), then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        if eps.is_nan() || eps <= T::zero() {
            return Err(TensorError::Parameter(format!(
                "layer_norm eps must be > 0, got {eps:?}"
            )));
        }
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gain)?, self.idx(bias)?);
        let (vx, vg, vb) = (&self.nodes[ix].value, &self.nodes[ig].value, &self.nodes[ib].value);
        let d = *vx.shape().last().ok_or(TensorError::Axis { axis: 0, rank: 0 })?;
        for p in [vg, vb] {
            if p.shape() != [d] {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    lhs: vx.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let rows = vx.len() / d.max(1);
        let dn = T::from_usize(d).unwrap();
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = vec![T::zero(); vx.len()];
        for r in 0..rows {
            let row = &vx.data()[r * d..(r + 1) * d];
            let mu = row.iter().fold(T::zero(), |s, &v| s + v) / dn;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mu) * (v - mu)) / dn;
            let rs = T::one() / (var + eps).sqrt();
            for j in 0..d {
                out[r * d + j] = (row[j] - mu) * rs * vg.data()[j] + vb.data()[j];
            }
            mean.push(mu);
            rstd.push(rs);
        }
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(ix) || self.rg(ig) || self.rg(ib);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: ix,
                gain: ig,
                bias: ib,
                mean,
                rstd,
            },
            rg,
        ))
    }

    /// Mean token cross-entropy of `logits[positions, V]` against `targets`.
    /// Positions whose target equals `ignore` contribute nothing.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Result<Var> {
        let il = self.idx(logits)?;
        let v = &self.nodes[il].value;
        if v.shape().len() != 2 || v.shape()[0] != targets.len() {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                lhs: v.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let classes = v.shape()[1];
        for &t in targets {
            if t != ignore && t >= classes {
                return Err(TensorError::Target { id: t, classes });
            }
        }
        let count = targets.iter().filter(|&&t| t != ignore).count();
        if count == 0 {
            return Err(TensorError::NoSupervisedPositions);
        }
        let probs = kernels::softmax(v.data(), v.shape(), 1);
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t == ignore {
                continue;
            }
            let row = &v.data()[r * classes..(r + 1) * classes];
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let lse = row.iter().fold(T::zero(), |s, &x| s + (x - max).exp()).ln() + max;
            total = total + (lse - row[t]);
        }
        let loss = total / T::from_usize(count).unwrap();
        let rg = self.rg(il);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: il,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
            rg,
        ))
    }

    /// Selects rows of a `[rows, d]` table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.idx(table)?;
        let v = &self.nodes[it].value;
        if v.shape().len() != 2 {
            return Err(TensorError::Shape {
                op: "gather",
                lhs: v.shape().to_vec(),
                rhs: vec![ids.len()],
            });
        }
        let (rows, d) = (v.shape()[0], v.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::Index { index: id, rows });
            }
            out.extend_from_slice(&v.data()[id * d..(id + 1) * d]);
        }
        let rg = self.rg(it);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Gather {
                table: it,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Inverted dropout; draws one uniform per element from `rng`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut SeededRng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Parameter(format!("dropout p must be in [0, 1), got {p}")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let ix = self.idx(x)?;
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let v = &self.nodes[ix].value;
        let mask: Vec<T> = (0..v.len())
            .map(|_| if unit_f64(rng) >= p { keep } else { T::zero() })
            .collect();
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect(),
        )?;
        let rg = self.rg(ix);
        Ok(self.push(out, Op::Dropout { x: ix, mask }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.data().iter().fold(T::zero(), |s, &x| s + x);
        let rg = self.rg(ia);
        Ok(self.push(Tensor::scalar(s), Op::Sum(ia), rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let il = self.idx(loss)?;
        let lv = &self.nodes[il].value;
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(vec![T::one()]);
        let mut named = BTreeMap::new();

        for i in (0..=il).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            if let Op::Leaf { name: Some(name) } = &node.op {
                named.insert(name.clone(), Tensor::new(node.value.shape().to_vec(), g.clone())?);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            by_index: grads,
            named,
        })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let out_shape = nodes[i].value.shape();
        match &nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(nodes[i].op, Op::Sub(..));
                let (a, b) = (*a, *b);
                if let Some(ga) = slot(nodes, grads, a) {
                    let m = Broadcast::new(nodes[a].value.shape(), out_shape);
                    for (k, &gv) in g.iter().enumerate() {
                        let t = m.index(k);
                        ga[t] = ga[t] + gv;
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    let m = Broadcast::new(nodes[b].value.shape(), out_shape);
                    for (k, &gv) in g.iter().enumerate() {
                        let t = m.index(k);
                        gb[t] = if neg { gb[t] - gv } else { gb[t] + gv };
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let ma = Broadcast::new(nodes[a].value.shape(), out_shape);
                let mb = Broadcast::new(nodes[b].value.shape(), out_shape);
                let (va, vb) = (nodes[a].value.data(), nodes[b].value.data());
                if let Some(ga) = slot(nodes, grads, a) {
                    for (k, &gv) in g.iter().enumerate() {
                        let t = ma.index(k);
                        ga[t] = ga[t] + gv * vb[mb.index(k)];
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for (k, &gv) in g.iter().enumerate() {
                        let t = mb.index(k);
                        gb[t] = gb[t] + gv * va[ma.index(k)];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (d, &gv) in ga.iter_mut().zip(g) {
                        *d = *d + gv * *c;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (sa, sb) = (nodes[a].value.shape(), nodes[b].value.shape());
                let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
                let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
                let batch = &out_shape[..out_shape.len() - 2];
                let (ma, mb) = (Broadcast::new(ba, batch), Broadcast::new(bb, batch));
                let nb: usize = batch.iter().product();
                let (va, vb) = (nodes[a].value.data(), nodes[b].value.data());
                if let Some(ga) = slot(nodes, grads, a) {
                    for bi in 0..nb {
                        let ao = ma.index(bi) * m * k;
                        let bo = mb.index(bi) * k * n;
                        kernels::matmul_grad_a(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &vb[bo..bo + k * n],
                            &mut ga[ao..ao + m * k],
                            m,
                            k,
                            n,
                        );
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for bi in 0..nb {
                        let ao = ma.index(bi) * m * k;
                        let bo = mb.index(bi) * k * n;
                        kernels::matmul_grad_b(
                            &va[ao..ao + m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut gb[bo..bo + k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Permute(a, axes) => {
                let map = permute_map(nodes[*a].value.shape(), axes);
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (k, &j) in map.iter().enumerate() {
                        ga[j] = ga[j] + g[k];
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (d, &gv) in ga.iter_mut().zip(g) {
                        *d = *d + gv;
                    }
                }
            }
            Op::Gelu(a) => {
                let va = nodes[*a].value.data();
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((d, &gv), &x) in ga.iter_mut().zip(g).zip(va) {
                        *d = *d + gv * kernels::gelu_grad(x);
                    }
                }
            }
            Op::Softmax(a, axis) => {
                let y = nodes[i].value.data();
                if let Some(ga) = slot(nodes, grads, *a) {
                    kernels::softmax_grad(y, g, out_shape, *axis, ga);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let vx = nodes[x].value.data();
                let vg = nodes[gain].value.data();
                let d = vg.len();
                let dn = T::from_usize(d).unwrap();
                let xhat = |r: usize, j: usize| (vx[r * d + j] - mean[r]) * rstd[r];
                if let Some(gg) = slot(nodes, grads, gain) {
                    for r in 0..mean.len() {
                        for j in 0..d {
                            gg[j] = gg[j] + g[r * d + j] * xhat(r, j);
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, bias) {
                    for r in 0..mean.len() {
                        for j in 0..d {
                            gb[j] = gb[j] + g[r * d + j];
                        }
                    }
                }
                if let Some(gx) = slot(nodes, grads, x) {
                    for r in 0..mean.len() {
                        let mut mean_dxhat = T::zero();
                        let mut mean_dxhat_xhat = T::zero();
                        for j in 0..d {
                            let dxh = g[r * d + j] * vg[j];
                            mean_dxhat = mean_dxhat + dxh;
                            mean_dxhat_xhat = mean_dxhat_xhat + dxh * xhat(r, j);
                        }
                        mean_dxhat = mean_dxhat / dn;
                        mean_dxhat_xhat = mean_dxhat_xhat / dn;
                        for j in 0..d {
                            let dxh = g[r * d + j] * vg[j];
                            gx[r * d + j] = gx[r * d + j] + rstd[r] * (dxh - mean_dxhat - xhat(r, j) * mean_dxhat_xhat);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                count,
            } => {
                let classes = nodes[*logits].value.shape()[1];
                let scale = g[0] / T::from_usize(*count).unwrap();
                if let Some(gl) = slot(nodes, grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        for c in 0..classes {
                            let k = r * classes + c;
                            let onehot = if c == t { T::one() } else { T::zero() };
                            gl[k] = gl[k] + scale * (probs[k] - onehot);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let d = nodes[*table].value.shape()[1];
                if let Some(gt) = slot(nodes, grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] = gt[id * d + j] + g[r * d + j];
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((d, &gv), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *d = *d + gv * m;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for d in ga.iter_mut() {
                        *d = *d + g[0];
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot<'a, T: Scalar>(nodes: &[Node<T>], grads: &'a mut [Option<Vec<T>>], j: usize) -> Option<&'a mut Vec<T>> {
    if !nodes[j].requires_grad {
        return None;
    }
    Some(grads[j].get_or_insert_with(|| vec![T::zero(); nodes[j].value.len()]))
}

/// For each output flat index of a permutation, the input flat index.
fn permute_map(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = in_shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total: usize = in_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut at = 0usize;
    for _ in 0..total {
        map.push(at);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            at += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            at -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    map
}
