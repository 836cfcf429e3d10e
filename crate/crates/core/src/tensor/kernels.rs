//! Plain loops behind the tape operations.

use super::Scalar;

/// Numpy-style broadcast of two shapes, aligned from the right.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// How a broadcast source is addressed from an output flat index.
pub(crate) enum Broadcast {
    Identity,
    /// Source is a contiguous suffix block repeated over the leading axes.
    Cyclic(usize),
    Map(Vec<usize>),
}

impl Broadcast {
    pub(crate) fn new(src: &[usize], out: &[usize]) -> Self {
        if src == out {
            return Broadcast::Identity;
        }
        let src_len: usize = src.iter().product();
        let trimmed: Vec<usize> = src.iter().copied().skip_while(|&d| d == 1).collect();
        if out.ends_with(&trimmed) {
            return Broadcast::Cyclic(src_len.max(1));
        }
        let rank = out.len();
        let offset = rank - src.len();
        let mut strides = vec![0usize; rank];
        let mut acc = 1;
        for i in (0..src.len()).rev() {
            strides[i + offset] = if src[i] == 1 { 0 } else { acc };
            acc *= src[i];
        }
        let total: usize = out.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        for _ in 0..total {
            map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < out[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Broadcast::Map(map)
    }

    #[inline]
    pub(crate) fn index(&self, i: usize) -> usize {
        match self {
            Broadcast::Identity => i,
            Broadcast::Cyclic(n) => i % n,
            Broadcast::Map(m) => m[i],
        }
    }
}

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// `da[m,k] += dc[m,n] · bᵀ`
pub(crate) fn matmul_grad_a<T: Scalar>(dc: &[T], b: &[T], da: &mut [T], m: usize, k: usize, n: usize) {
    let mut bt = vec![T::zero(); n * k];
    for p in 0..k {
        for j in 0..n {
            bt[j * k + p] = b[p * n + j];
        }
    }
    matmul_acc(dc, &bt, da, m, n, k);
}

/// `db[k,n] += aᵀ · dc[m,n]`
pub(crate) fn matmul_grad_b<T: Scalar>(a: &[T], dc: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let db_row = &mut db[p * n..(p + 1) * n];
            for (d, &g) in db_row.iter_mut().zip(dc_row) {
                *d = *d + aip * g;
            }
        }
    }
}

/// Splits a shape around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax<T: Scalar>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = axis_extents(shape, axis);
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(x[at(j)]);
            }
            let mut sum = T::zero();
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                out[at(j)] = e;
                sum = sum + e;
            }
            for j in 0..len {
                out[at(j)] = out[at(j)] / sum;
            }
        }
    }
    out
}

pub(crate) fn softmax_grad<T: Scalar>(y: &[T], dy: &[T], shape: &[usize], axis: usize, dx: &mut [T]) {
    let (outer, len, inner) = axis_extents(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                dot = dot + y[at(j)] * dy[at(j)];
            }
            for j in 0..len {
                let idx = at(j);
                dx[idx] = dx[idx] + y[idx] * (dy[idx] - dot);
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}
