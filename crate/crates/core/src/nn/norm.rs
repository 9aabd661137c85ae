use super::params::{BufferStore, Initializer, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel statistics of a training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n − 1) variance, the value folded into running statistics.
    pub var: Vec<f64>,
}

/// Batch normalization over `[B,C,H,W]`.
///
/// Train mode normalizes with batch statistics and returns them; eval mode
/// uses `running_mean` / `running_var`.
pub fn batch_norm2d<E: Element>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &Tensor<E>,
    running_var: &Tensor<E>,
    mode: Mode,
) -> Result<(Tensor<E>, Option<BatchStats>)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!("batch_norm2d expects [B,C,H,W], got {s:?}")));
    }
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    for (what, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ] {
        if t.shape() != [c] {
            return Err(Error::shape(format!(
                "batch_norm2d {what} {:?} for {c} channels",
                t.shape()
            )));
        }
    }
    let n = b * hw;
    let eps = E::of(NORM_EPS);
    let xd = x.data();
    let idx = move |bi: usize, ch: usize| (bi * c + ch) * hw;

    let (mean, var, stats) = match mode {
        Mode::Train => {
            let mut mean = vec![E::zero(); c];
            let mut var = vec![E::zero(); c];
            for ch in 0..c {
                let mut sum = E::zero();
                for bi in 0..b {
                    sum += xd[idx(bi, ch)..][..hw].iter().copied().sum::<E>();
                }
                let m = sum / E::of(n as f64);
                let mut sq = E::zero();
                for bi in 0..b {
                    for &v in &xd[idx(bi, ch)..][..hw] {
                        sq += (v - m) * (v - m);
                    }
                }
                mean[ch] = m;
                var[ch] = sq / E::of(n as f64);
            }
            let unbiased = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            let stats = BatchStats {
                mean: mean.iter().map(|v| v.to_f64_lossy()).collect(),
                var: var.iter().map(|v| v.to_f64_lossy() * unbiased).collect(),
            };
            (mean, var, Some(stats))
        }
        Mode::Eval => (running_mean.to_vec(), running_var.to_vec(), None),
    };
    let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
    let (g, bt) = (gamma.data(), beta.data());
    let mut xhat = vec![E::zero(); xd.len()];
    let mut out = vec![E::zero(); xd.len()];
    for bi in 0..b {
        for ch in 0..c {
            let base = idx(bi, ch);
            for i in base..base + hw {
                let h = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                out[i] = g[ch] * h + bt[ch];
            }
        }
    }
    let y = Tensor::from_op(
        "batch_norm2d",
        s.to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |parents, _out, dy| {
            let g = parents[1].data();
            let mut dgamma = vec![E::zero(); c];
            let mut dbeta = vec![E::zero(); c];
            let mut dx = vec![E::zero(); dy.len()];
            let nn = E::of(n as f64);
            for ch in 0..c {
                let (mut sum_dy, mut sum_dy_xhat) = (E::zero(), E::zero());
                for bi in 0..b {
                    let base = idx(bi, ch);
                    for i in base..base + hw {
                        sum_dy += dy[i];
                        sum_dy_xhat += dy[i] * xhat[i];
                    }
                }
                dgamma[ch] = sum_dy_xhat;
                dbeta[ch] = sum_dy;
                for bi in 0..b {
                    let base = idx(bi, ch);
                    for i in base..base + hw {
                        dx[i] = match mode {
                            Mode::Train => g[ch] * inv_std[ch] / nn * (nn * dy[i] - sum_dy - xhat[i] * sum_dy_xhat),
                            Mode::Eval => dy[i] * g[ch] * inv_std[ch],
                        };
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
    )?;
    Ok((y, stats))
}

/// Normalizes each row over the last dimension, then applies `gamma`/`beta`.
pub fn layer_norm<E: Element>(x: &Tensor<E>, gamma: &Tensor<E>, beta: &Tensor<E>) -> Result<Tensor<E>> {
    let d = *x.shape().last().expect("non-empty shape");
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape(format!(
            "layer_norm over {:?} with gamma {:?}, beta {:?}",
            x.shape(),
            gamma.shape(),
            beta.shape()
        )));
    }
    let eps = E::of(NORM_EPS);
    let dd = E::of(d as f64);
    let rows = x.numel() / d;
    let mut xhat = vec![E::zero(); x.numel()];
    let mut inv_std = vec![E::zero(); rows];
    let mut out = vec![E::zero(); x.numel()];
    let (g, bt) = (gamma.data(), beta.data());
    for (r, row) in x.data().chunks_exact(d).enumerate() {
        let mean = row.iter().copied().sum::<E>() / dd;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() / dd;
        let inv = E::one() / (var + eps).sqrt();
        inv_std[r] = inv;
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xhat[r * d + j] = h;
            out[r * d + j] = g[j] * h + bt[j];
        }
    }
    Tensor::from_op(
        "layer_norm",
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |parents, _out, dy| {
            let g = parents[1].data();
            let mut dx = vec![E::zero(); dy.len()];
            let mut dgamma = vec![E::zero(); d];
            let mut dbeta = vec![E::zero(); d];
            for r in 0..rows {
                let dyr = &dy[r * d..(r + 1) * d];
                let xh = &xhat[r * d..(r + 1) * d];
                let (mut s1, mut s2) = (E::zero(), E::zero());
                for j in 0..d {
                    let dxh = dyr[j] * g[j];
                    s1 += dxh;
                    s2 += dxh * xh[j];
                    dgamma[j] += dyr[j] * xh[j];
                    dbeta[j] += dyr[j];
                }
                for j in 0..d {
                    let dxh = dyr[j] * g[j];
                    dx[r * d + j] = inv_std[r] / dd * (dd * dxh - s1 - xh[j] * s2);
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
    )
}

/// Where batch-norm running statistics are read from or written to.
pub enum Stats<'a, E: Element> {
    Frozen(&'a BufferStore<E>),
    Update(&'a mut BufferStore<E>),
}

impl<E: Element> Stats<'_, E> {
    pub fn mode(&self) -> Mode {
        match self {
            Stats::Frozen(_) => Mode::Eval,
            Stats::Update(_) => Mode::Train,
        }
    }

    fn get(&self, name: &str) -> Result<Tensor<E>> {
        match self {
            Stats::Frozen(b) => b.get(name).cloned(),
            Stats::Update(b) => b.get(name).cloned(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm2d {
            name: name.into(),
            channels,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn register<E: Element>(
        &self,
        ps: &mut ParamStore<E>,
        buffers: &mut BufferStore<E>,
        init: &mut Initializer,
    ) -> Result<()> {
        let c = [self.channels];
        ps.insert(format!("{}.gamma", self.name), init.constant(&c, 1.0))?;
        ps.insert(format!("{}.beta", self.name), init.constant(&c, 0.0))?;
        buffers.insert(format!("{}.running_mean", self.name), Tensor::zeros(&c))?;
        buffers.insert(format!("{}.running_var", self.name), Tensor::full(&c, E::one()))?;
        Ok(())
    }

    pub fn forward<E: Element>(
        &self,
        ps: &ParamStore<E>,
        stats: &mut Stats<'_, E>,
        x: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let mean_name = format!("{}.running_mean", self.name);
        let var_name = format!("{}.running_var", self.name);
        let rm = stats.get(&mean_name)?;
        let rv = stats.get(&var_name)?;
        let (y, batch) = batch_norm2d(
            x,
            ps.get(&format!("{}.gamma", self.name))?,
            ps.get(&format!("{}.beta", self.name))?,
            &rm,
            &rv,
            stats.mode(),
        )?;
        if let (Stats::Update(buffers), Some(batch)) = (stats, batch) {
            let blend = |running: &Tensor<E>, batch: &[f64]| -> Result<Tensor<E>> {
                let data: Vec<f64> = running
                    .data()
                    .iter()
                    .zip(batch)
                    .map(|(&r, &b)| (1.0 - BN_MOMENTUM) * r.to_f64_lossy() + BN_MOMENTUM * b)
                    .collect();
                Tensor::from_f64(running.shape(), &data)
            };
            buffers.replace(&mean_name, blend(&rm, &batch.mean)?)?;
            buffers.replace(&var_name, blend(&rv, &batch.var)?)?;
        }
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        LayerNorm { name: name.into(), dim }
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim
    }

    pub fn register<E: Element>(&self, ps: &mut ParamStore<E>, init: &mut Initializer) -> Result<()> {
        ps.insert(format!("{}.gamma", self.name), init.constant(&[self.dim], 1.0))?;
        ps.insert(format!("{}.beta", self.name), init.constant(&[self.dim], 0.0))?;
        Ok(())
    }

    pub fn forward<E: Element>(&self, ps: &ParamStore<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        layer_norm(
            x,
            ps.get(&format!("{}.gamma", self.name))?,
            ps.get(&format!("{}.beta", self.name))?,
        )
    }
}
