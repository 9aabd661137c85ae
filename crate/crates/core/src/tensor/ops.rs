use super::element::MatLayout;
use super::{numel_of, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// Which operand (if any) is broadcast over the other.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    Lhs,
    Rhs,
}

fn strip_leading_ones(shape: &[usize]) -> &[usize] {
    let lead = shape.iter().take_while(|&&d| d == 1).count();
    &shape[lead.min(shape.len().saturating_sub(1))..]
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    let small = strip_leading_ones(small);
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

/// Sums `g` (length `n_big`) down onto a trailing-broadcast operand of
/// length `n_small`.
fn fold_to<E: Element>(g: &[E], n_small: usize) -> Vec<E> {
    let mut out = vec![E::zero(); n_small];
    for chunk in g.chunks_exact(n_small) {
        out.iter_mut().zip(chunk).for_each(|(o, &v)| *o += v);
    }
    out
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// For each element of the iteration space `shape` (row-major order), calls
/// `f(flat_index, offset)` where `offset = Σ coord_i · strides[i]`.
fn for_each_offset(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = numel_of(shape);
    let nd = shape.len();
    let mut coord = vec![0usize; nd];
    let mut offset = 0usize;
    for flat in 0..n {
        f(flat, offset);
        for ax in (0..nd).rev() {
            coord[ax] += 1;
            offset += strides[ax];
            if coord[ax] < shape[ax] {
                break;
            }
            offset -= strides[ax] * shape[ax];
            coord[ax] = 0;
        }
    }
}

fn permute_data<E: Element>(data: &[E], shape: &[usize], axes: &[usize]) -> (Vec<E>, Vec<usize>) {
    let in_strides = row_major_strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let gather: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = vec![E::zero(); data.len()];
    for_each_offset(&out_shape, &gather, |flat, off| out[flat] = data[off]);
    (out, out_shape)
}

fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

fn gelu_forward<E: Element>(x: E) -> E {
    let c = E::of((2.0 / std::f64::consts::PI).sqrt());
    let k = E::of(0.044715);
    let half = E::of(0.5);
    half * x * (E::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_derivative<E: Element>(x: E) -> E {
    let c = E::of((2.0 / std::f64::consts::PI).sqrt());
    let k = E::of(0.044715);
    let half = E::of(0.5);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let dinner = c * (E::one() + E::of(3.0) * k * x * x);
    half * (E::one() + t) + half * x * (E::one() - t * t) * dinner
}

impl<E: Element> Tensor<E> {
    /// Elementwise `add`, `sub` or `mul`. One operand may be broadcast over
    /// the other when its shape (ignoring leading ones) is a trailing suffix
    /// of the other's.
    pub fn elementwise(&self, other: &Tensor<E>, kind: BinaryKind) -> Result<Tensor<E>> {
        let (bc, out_shape) = if self.shape() == other.shape() {
            (Broadcast::None, self.shape().to_vec())
        } else if is_suffix(other.shape(), self.shape()) {
            (Broadcast::Rhs, self.shape().to_vec())
        } else if is_suffix(self.shape(), other.shape()) {
            (Broadcast::Lhs, other.shape().to_vec())
        } else {
            return Err(Error::shape(format!(
                "cannot broadcast {:?} with {:?} for {kind:?}",
                self.shape(),
                other.shape()
            )));
        };
        let (a, b) = (self.data(), other.data());
        let n = numel_of(&out_shape);
        let (na, nb) = (a.len(), b.len());
        let f = match kind {
            BinaryKind::Add => |x: E, y: E| x + y,
            BinaryKind::Sub => |x: E, y: E| x - y,
            BinaryKind::Mul => |x: E, y: E| x * y,
        };
        let data: Vec<E> = (0..n).map(|i| f(a[i % na], b[i % nb])).collect();
        let op = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        Tensor::from_op(
            op,
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |parents, _out, g| {
                let (a, b) = (parents[0].data(), parents[1].data());
                let (na, nb) = (a.len(), b.len());
                let mut ga: Vec<E> = match kind {
                    BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                    BinaryKind::Mul => g.iter().enumerate().map(|(i, &gi)| gi * b[i % nb]).collect(),
                };
                let mut gb: Vec<E> = match kind {
                    BinaryKind::Add => g.to_vec(),
                    BinaryKind::Sub => g.iter().map(|&gi| -gi).collect(),
                    BinaryKind::Mul => g.iter().enumerate().map(|(i, &gi)| gi * a[i % na]).collect(),
                };
                match bc {
                    Broadcast::None => {}
                    Broadcast::Lhs => ga = fold_to(&ga, na),
                    Broadcast::Rhs => gb = fold_to(&gb, nb),
                }
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.elementwise(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.elementwise(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.elementwise(other, BinaryKind::Mul)
    }

    pub fn scale(&self, factor: E) -> Result<Tensor<E>> {
        let data = self.data().iter().map(|&v| v * factor).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |_, _, g| vec![Some(g.iter().map(|&v| v * factor).collect())]),
        )
    }

    fn unary(&self, op: &'static str, f: fn(E) -> E, df: fn(E, E) -> E) -> Result<Tensor<E>> {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(
            op,
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |parents, out, g| {
                let x = parents[0].data();
                vec![Some(
                    x.iter()
                        .zip(out)
                        .zip(g)
                        .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
                        .collect(),
                )]
            }),
        )
    }

    pub fn relu(&self) -> Result<Tensor<E>> {
        self.unary(
            "relu",
            |x| if x > E::zero() { x } else { E::zero() },
            |x, _| if x > E::zero() { E::one() } else { E::zero() },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Tensor<E>> {
        self.unary("gelu", gelu_forward, |x, _| gelu_derivative(x))
    }

    /// |x| with subgradient 0 at 0.
    pub fn abs(&self) -> Result<Tensor<E>> {
        self.unary(
            "abs",
            |x| x.abs(),
            |x, _| {
                if x > E::zero() {
                    E::one()
                } else if x < E::zero() {
                    -E::one()
                } else {
                    E::zero()
                }
            },
        )
    }

    pub fn exp(&self) -> Result<Tensor<E>> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    /// Matrix product over the last two axes.
    ///
    /// `[..., m, k] · [k, n]` shares the right operand across the batch;
    /// `[..., m, k] · [..., k, n]` requires equal leading dimensions.
    pub fn matmul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        let (sa, sb) = (self.shape(), other.shape());
        let mismatch = || Error::shape(format!("matmul: incompatible shapes {sa:?} and {sb:?}"));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let shared_rhs = sb.len() == 2;
        if !shared_rhs && sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(mismatch());
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out_shape = sa[..sa.len() - 1].to_vec();
        out_shape.push(n);
        let mut data = vec![E::zero(); batch * m * n];
        if shared_rhs {
            E::gemm_raw(
                self.data(),
                MatLayout::row_major(batch * m, k),
                other.data(),
                MatLayout::row_major(k, n),
                &mut data,
                MatLayout::row_major(batch * m, n),
                false,
            );
        } else {
            for bi in 0..batch {
                E::gemm_raw(
                    &self.data()[bi * m * k..(bi + 1) * m * k],
                    MatLayout::row_major(m, k),
                    &other.data()[bi * k * n..(bi + 1) * k * n],
                    MatLayout::row_major(k, n),
                    &mut data[bi * m * n..(bi + 1) * m * n],
                    MatLayout::row_major(m, n),
                    false,
                );
            }
        }
        Tensor::from_op(
            "matmul",
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |parents, _out, g| {
                let (a, b) = (parents[0].data(), parents[1].data());
                let want_a = parents[0].requires_grad();
                let want_b = parents[1].requires_grad();
                let mut ga = want_a.then(|| vec![E::zero(); a.len()]);
                let mut gb = want_b.then(|| vec![E::zero(); b.len()]);
                let (rows, batches) = if shared_rhs { (batch * m, 1) } else { (m, batch) };
                for bi in 0..batches {
                    let a_s = &a[bi * rows * k..(bi + 1) * rows * k];
                    let b_s = &b[bi * k * n..(bi + 1) * k * n];
                    let g_s = &g[bi * rows * n..(bi + 1) * rows * n];
                    if let Some(ga) = ga.as_mut() {
                        // dA = dC · Bᵀ
                        E::gemm_raw(
                            g_s,
                            MatLayout::row_major(rows, n),
                            b_s,
                            MatLayout::transposed(k, n),
                            &mut ga[bi * rows * k..(bi + 1) * rows * k],
                            MatLayout::row_major(rows, k),
                            false,
                        );
                    }
                    if let Some(gb) = gb.as_mut() {
                        // dB = Aᵀ · dC
                        E::gemm_raw(
                            a_s,
                            MatLayout::transposed(rows, k),
                            g_s,
                            MatLayout::row_major(rows, n),
                            &mut gb[bi * k * n..(bi + 1) * k * n],
                            MatLayout::row_major(k, n),
                            false,
                        );
                    }
                }
                vec![ga, gb]
            }),
        )
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<E>> {
        if numel_of(new_shape) != self.numel() || new_shape.contains(&0) {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {new_shape:?}",
                self.shape()
            )));
        }
        Tensor::from_op(
            "reshape",
            new_shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|_, _, g| vec![Some(g.to_vec())]),
        )
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<E>> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        let valid = axes.len() == nd && axes.iter().all(|&a| a < nd && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(Error::shape(format!(
                "{axes:?} is not a permutation of the axes of {:?}",
                self.shape()
            )));
        }
        let (data, out_shape) = permute_data(self.data(), self.shape(), axes);
        let inverse = inverse_permutation(axes);
        let grad_shape = out_shape.clone();
        Tensor::from_op(
            "permute",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |_, _, g| vec![Some(permute_data(g, &grad_shape, &inverse).0)]),
        )
    }

    /// Reshape followed by an axis permutation.
    pub fn reshape_permute(&self, new_shape: &[usize], axes: &[usize]) -> Result<Tensor<E>> {
        self.reshape(new_shape)?.permute(axes)
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor<E>> {
        let nd = self.ndim();
        if nd < 2 {
            return Err(Error::shape(format!("transpose of {:?}", self.shape())));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(&axes)
    }

    /// Reduces over `axes` (dropped from the result). Reducing every axis
    /// gives shape `[1]`. Max routes its gradient to the first maximal
    /// element in flat order.
    pub fn reduce(&self, axes: &[usize], kind: ReduceKind) -> Result<Tensor<E>> {
        let shape = self.shape().to_vec();
        let nd = shape.len();
        let mut reduced = vec![false; nd];
        for &a in axes {
            if a >= nd || reduced[a] {
                return Err(Error::shape(format!(
                    "invalid reduction axes {axes:?} for shape {shape:?}"
                )));
            }
            reduced[a] = true;
        }
        let mut out_shape: Vec<usize> = (0..nd).filter(|&a| !reduced[a]).map(|a| shape[a]).collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        // Strides into the output for each input axis (0 on reduced axes).
        let kept: Vec<usize> = (0..nd).filter(|&a| !reduced[a]).collect();
        let kept_strides = row_major_strides(&kept.iter().map(|&a| shape[a]).collect::<Vec<_>>());
        let mut out_strides = vec![0usize; nd];
        for (i, &a) in kept.iter().enumerate() {
            out_strides[a] = kept_strides[i];
        }
        let n_out = numel_of(&out_shape);
        let group = self.numel() / n_out;
        let x = self.data();
        let mut index_map = vec![0usize; x.len()];
        for_each_offset(&shape, &out_strides, |flat, off| index_map[flat] = off);

        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                let mut out = vec![E::zero(); n_out];
                for (i, &o) in index_map.iter().enumerate() {
                    out[o] += x[i];
                }
                let denom = if kind == ReduceKind::Mean {
                    E::of(group as f64)
                } else {
                    E::one()
                };
                if kind == ReduceKind::Mean {
                    out.iter_mut().for_each(|v| *v = *v / denom);
                }
                Tensor::from_op(
                    if kind == ReduceKind::Sum { "sum" } else { "mean" },
                    out_shape,
                    out,
                    vec![self.clone()],
                    Box::new(move |_, _, g| vec![Some(index_map.iter().map(|&o| g[o] / denom).collect())]),
                )
            }
            ReduceKind::Max => {
                let mut out = vec![E::neg_infinity(); n_out];
                let mut arg = vec![usize::MAX; n_out];
                for (i, &o) in index_map.iter().enumerate() {
                    if arg[o] == usize::MAX || x[i] > out[o] {
                        out[o] = x[i];
                        arg[o] = i;
                    }
                }
                let n_in = x.len();
                Tensor::from_op(
                    "max",
                    out_shape,
                    out,
                    vec![self.clone()],
                    Box::new(move |_, _, g| {
                        let mut gx = vec![E::zero(); n_in];
                        for (o, &i) in arg.iter().enumerate() {
                            gx[i] += g[o];
                        }
                        vec![Some(gx)]
                    }),
                )
            }
        }
    }

    pub fn sum_all(&self) -> Result<Tensor<E>> {
        let axes: Vec<usize> = (0..self.ndim()).collect();
        self.reduce(&axes, ReduceKind::Sum)
    }

    pub fn mean_all(&self) -> Result<Tensor<E>> {
        let axes: Vec<usize> = (0..self.ndim()).collect();
        self.reduce(&axes, ReduceKind::Mean)
    }

    /// Softmax along `axis`, shifted by the row maximum.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<E>> {
        let nd = self.ndim();
        if axis >= nd {
            return Err(Error::shape(format!(
                "softmax axis {axis} for shape {:?}",
                self.shape()
            )));
        }
        if axis == nd - 1 {
            return self.softmax_last();
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(axis, nd - 1);
        self.permute(&axes)?.softmax_last()?.permute(&axes)
    }

    fn softmax_last(&self) -> Result<Tensor<E>> {
        let cols = *self.shape().last().expect("non-empty shape");
        let mut out = self.to_vec();
        for row in out.chunks_exact_mut(cols) {
            let max = row.iter().copied().fold(E::neg_infinity(), E::max);
            let mut total = E::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v = *v / total);
        }
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |_, y, g| {
                let mut gx = vec![E::zero(); y.len()];
                for ((gxr, yr), gr) in gx
                    .chunks_exact_mut(cols)
                    .zip(y.chunks_exact(cols))
                    .zip(g.chunks_exact(cols))
                {
                    let dot: E = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yi), &gi) in gxr.iter_mut().zip(yr).zip(gr) {
                        *o = yi * (gi - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(tensors: &[Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        let first = tensors.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let nd = first.ndim();
        if axis >= nd {
            return Err(Error::shape(format!(
                "concat axis {axis} for shape {:?}",
                first.shape()
            )));
        }
        for t in tensors {
            let ok = t.ndim() == nd && (0..nd).all(|a| a == axis || t.shape()[a] == first.shape()[a]);
            if !ok {
                return Err(Error::shape(format!(
                    "concat along {axis}: {:?} vs {:?}",
                    first.shape(),
                    t.shape()
                )));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (t, &w) in tensors.iter().zip(&widths) {
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
        Tensor::from_op(
            "concat",
            out_shape,
            data,
            tensors.to_vec(),
            Box::new(move |_, _, g| {
                let mut grads: Vec<Vec<E>> = widths.iter().map(|&w| Vec::with_capacity(outer * w)).collect();
                for o in 0..outer {
                    let mut start = o * total;
                    for (gr, &w) in grads.iter_mut().zip(&widths) {
                        gr.extend_from_slice(&g[start..start + w]);
                        start += w;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        )
    }
}
