use rayon::prelude::*;

use super::params::{Initializer, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Element, MatLayout, Tensor};

/// Hyperparameters of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dConfig {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2dConfig {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride,
            padding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::config("kernel size must be at least 1"));
        }
        if self.stride == 0 {
            return Err(Error::config("stride must be at least 1"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("channel counts must be at least 1"));
        }
        Ok(())
    }

    /// Output extent along one axis, rejecting non-integral sizes.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        let span = input + 2 * self.padding;
        if span < kernel || !(span - kernel).is_multiple_of(self.stride) {
            return Err(Error::shape(format!(
                "conv output size ({input} + 2·{} − {kernel}) / {} + 1 is not integral",
                self.padding, self.stride
            )));
        }
        Ok((span - kernel) / self.stride + 1)
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one sample `[C,H,W]` into `[C·kh·kw, OH·OW]`.
    fn im2col<E: Element>(&self, x: &[E], cols: &mut [E]) {
        let n_out = self.out_len();
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * n_out..(row + 1) * n_out];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(E::zero());
                            continue;
                        }
                        let src = &x[(c * self.h + iy as usize) * self.w..][..self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                E::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters-adds columns back to `[C,H,W]`.
    fn col2im<E: Element>(&self, cols: &[E], dx: &mut [E]) {
        let n_out = self.out_len();
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * n_out..(row + 1) * n_out];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut dx[(c * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation: `x [B,C,H,W]`, `weight [C_out,C,kH,kW]`,
/// optional `bias [C_out]` → `[B,C_out,H',W']`.
pub fn conv2d<E: Element>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::shape(format!(
            "conv2d expects 4-D input and weight, got {xs:?} and {ws:?}"
        )));
    }
    if xs[1] != ws[1] {
        return Err(Error::shape(format!(
            "conv2d channel mismatch: input {xs:?}, weight {ws:?}"
        )));
    }
    let (b, co) = (xs[0], ws[0]);
    if let Some(bias) = bias {
        if bias.shape() != [co] {
            return Err(Error::shape(format!(
                "conv2d bias {:?} for {co} output channels",
                bias.shape()
            )));
        }
    }
    let cfg = Conv2dConfig {
        in_channels: xs[1],
        out_channels: co,
        kernel: (ws[2], ws[3]),
        stride,
        padding,
    };
    cfg.validate()?;
    let geo = Geometry {
        c: xs[1],
        h: xs[2],
        w: xs[3],
        kh: ws[2],
        kw: ws[3],
        oh: cfg.output_extent(xs[2], ws[2])?,
        ow: cfg.output_extent(xs[3], ws[3])?,
        stride,
        pad: padding,
    };
    let (plen, olen) = (geo.patch_len(), geo.out_len());
    let in_len = geo.c * geo.h * geo.w;

    let mut cols = vec![E::zero(); b * plen * olen];
    let mut out = vec![E::zero(); b * co * olen];
    let wdata = weight.data();
    let bdata = bias.map(|t| t.data());
    out.par_chunks_mut(co * olen)
        .zip(cols.par_chunks_mut(plen * olen))
        .zip(x.data().par_chunks(in_len))
        .for_each(|((o, col), xi)| {
            geo.im2col(xi, col);
            E::gemm_raw(
                wdata,
                MatLayout::row_major(co, plen),
                col,
                MatLayout::row_major(plen, olen),
                o,
                MatLayout::row_major(co, olen),
                false,
            );
            if let Some(bd) = bdata {
                for (oc, chunk) in o.chunks_exact_mut(olen).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bd[oc]);
                }
            }
        });

    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(bias) = bias {
        parents.push(bias.clone());
    }
    let has_bias = bias.is_some();
    Tensor::from_op(
        "conv2d",
        vec![b, co, geo.oh, geo.ow],
        out,
        parents,
        Box::new(move |parents, _out, g| {
            let w = parents[1].data();
            let mut grads = Vec::with_capacity(parents.len());

            let dx = parents[0].requires_grad().then(|| {
                let mut dx = vec![E::zero(); b * in_len];
                dx.par_chunks_mut(in_len)
                    .zip(g.par_chunks(co * olen))
                    .for_each(|(dxi, gi)| {
                        let mut dcol = vec![E::zero(); plen * olen];
                        // dcols = Wᵀ · dY
                        E::gemm_raw(
                            w,
                            MatLayout::transposed(co, plen),
                            gi,
                            MatLayout::row_major(co, olen),
                            &mut dcol,
                            MatLayout::row_major(plen, olen),
                            false,
                        );
                        geo.col2im(&dcol, dxi);
                    });
                dx
            });
            grads.push(dx);

            let dw = parents[1].requires_grad().then(|| {
                // dW = Σ_b dY_b · cols_bᵀ, reduced in sample order.
                let partial: Vec<Vec<E>> = g
                    .par_chunks(co * olen)
                    .zip(cols.par_chunks(plen * olen))
                    .map(|(gi, col)| {
                        let mut dw = vec![E::zero(); co * plen];
                        E::gemm_raw(
                            gi,
                            MatLayout::row_major(co, olen),
                            col,
                            MatLayout::transposed(plen, olen),
                            &mut dw,
                            MatLayout::row_major(co, plen),
                            false,
                        );
                        dw
                    })
                    .collect();
                let mut dw = vec![E::zero(); co * plen];
                for p in &partial {
                    dw.iter_mut().zip(p).for_each(|(a, &v)| *a += v);
                }
                dw
            });
            grads.push(dw);

            if has_bias {
                let db = parents[2].requires_grad().then(|| {
                    let mut db = vec![E::zero(); co];
                    for gi in g.chunks_exact(co * olen) {
                        for (oc, chunk) in gi.chunks_exact(olen).enumerate() {
                            db[oc] += chunk.iter().copied().sum::<E>();
                        }
                    }
                    db
                });
                grads.push(db);
            }
            grads
        }),
    )
}

/// A convolution whose weight and bias live in a [`ParamStore`] under
/// `{name}.weight` / `{name}.bias`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub config: Conv2dConfig,
    pub bias: bool,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, config: Conv2dConfig, bias: bool) -> Self {
        Conv2d {
            name: name.into(),
            config,
            bias,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        let c = &self.config;
        [c.out_channels, c.in_channels, c.kernel.0, c.kernel.1]
    }

    pub fn param_count(&self) -> usize {
        let w: usize = self.weight_shape().iter().product();
        w + if self.bias { self.config.out_channels } else { 0 }
    }

    pub fn register<E: Element>(&self, ps: &mut ParamStore<E>, init: &mut Initializer) -> Result<()> {
        self.config.validate()?;
        let shape = self.weight_shape();
        let fan_in = shape[1] * shape[2] * shape[3];
        ps.insert(format!("{}.weight", self.name), init.fan_in_uniform(&shape, fan_in))?;
        if self.bias {
            ps.insert(
                format!("{}.bias", self.name),
                init.constant(&[self.config.out_channels], 0.0),
            )?;
        }
        Ok(())
    }

    pub fn forward<E: Element>(&self, ps: &ParamStore<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let w = ps.get(&format!("{}.weight", self.name))?;
        let b = if self.bias {
            Some(ps.get(&format!("{}.bias", self.name))?)
        } else {
            None
        };
        conv2d(x, w, b, self.config.stride, self.config.padding)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::gradcheck::check_inputs;

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct six-nested-loop cross-correlation.
    #[allow(clippy::too_many_arguments)]
    fn naive_conv(
        x: &[f64],
        w: &[f64],
        bias: &[f64],
        (b, c, h, wd): (usize, usize, usize, usize),
        (co, kh, kw): (usize, usize, usize),
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; b * co * oh * ow];
        for n in 0..b {
            for o in 0..co {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut s = bias[o];
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (y * stride + i) as isize - pad as isize;
                                    let ix = (xo * stride + j) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    s += x[((n * c + ci) * h + iy as usize) * wd + ix as usize]
                                        * w[((o * c + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                        out[((n * co + o) * oh + y) * ow + xo] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_f64(&[1, 1, 1, 1], &[1.0]).unwrap();
        let b = Tensor::from_f64(&[1], &[0.0]).unwrap();
        assert_eq!(conv2d(&x, &w, Some(&b), 1, 0).unwrap().data(), x.data());
    }

    #[test]
    fn averaging_kernel_on_constant_image() {
        let x = Tensor::<f64>::full(&[1, 1, 5, 5], 0.7);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0);
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cases = [
            ((1, 1, 4, 4), (1, 3, 3), 1, 0),
            ((2, 3, 8, 8), (4, 3, 3), 1, 1),
            ((2, 3, 8, 8), (5, 4, 4), 2, 1),
            ((1, 2, 6, 6), (3, 2, 2), 2, 0),
        ];
        for (xs, (co, kh, kw), stride, pad) in cases {
            let xv = rand_vec(xs.0 * xs.1 * xs.2 * xs.3, &mut rng);
            let wv = rand_vec(co * xs.1 * kh * kw, &mut rng);
            let bv = rand_vec(co, &mut rng);
            let x = Tensor::<f64>::from_f64(&[xs.0, xs.1, xs.2, xs.3], &xv).unwrap();
            let w = Tensor::from_f64(&[co, xs.1, kh, kw], &wv).unwrap();
            let b = Tensor::from_f64(&[co], &bv).unwrap();
            let y = conv2d(&x, &w, Some(&b), stride, pad).unwrap();
            let oracle = naive_conv(&xv, &wv, &bv, xs, (co, kh, kw), stride, pad);
            for (a, e) in y.data().iter().zip(&oracle) {
                assert!((a - e).abs() <= 1e-6 * e.abs().max(1.0), "{a} vs {e}");
            }
        }
    }

    #[test]
    fn rejects_non_integral_output_and_channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 1, 8, 8]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(matches!(conv2d(&x, &w, None, 2, 1), Err(Error::Shape(_))));
        let w2 = Tensor::zeros(&[1, 2, 1, 1]);
        assert!(matches!(conv2d(&x, &w2, None, 1, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (stride, pad, k) in [(1, 1, 3), (2, 1, 4), (2, 0, 2)] {
            let x = Tensor::<f64>::from_f64(&[2, 2, 6, 6], &rand_vec(144, &mut rng)).unwrap();
            let w = Tensor::from_f64(&[3, 2, k, k], &rand_vec(6 * k * k, &mut rng)).unwrap();
            let b = Tensor::from_f64(&[3], &rand_vec(3, &mut rng)).unwrap();
            let probe = Tensor::from_f64(
                &[2, 3, 6 / stride, 6 / stride],
                &rand_vec(6 * 36 / (stride * stride), &mut rng),
            )
            .unwrap();
            let report = check_inputs(
                |v| conv2d(&v[0], &v[1], Some(&v[2]), stride, pad)?.mul(&probe)?.sum_all(),
                &[x, w, b],
                1e-6,
                None,
                0,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-6, "{report:?}");
        }
    }
}
