use crate::error::{Error, Result};
use crate::nn::{Activation, Initializer, LayerNorm, Linear, ParamStore};
use crate::tensor::{Element, Tensor};

/// `Q·Kᵀ`, divided by √d_k when `scaled`. Inputs are `[B,A,d_k]`.
pub fn attention_logits<E: Element>(q: &Tensor<E>, k: &Tensor<E>, scaled: bool) -> Result<Tensor<E>> {
    let dk = *q.shape().last().expect("non-empty shape");
    let logits = q.matmul(&k.transpose_last()?)?;
    if scaled {
        logits.scale(E::of(1.0 / (dk as f64).sqrt()))
    } else {
        Ok(logits)
    }
}

/// One scaled dot-product attention head over `x [B,A,d]`.
///
/// Returns the head output `softmax(Q·Kᵀ/√d_k)·V` of shape `[B,A,d_v]` and
/// the attention weights `[B,A,A]`.
pub fn attention_head<E: Element>(
    x: &Tensor<E>,
    w_q: &Tensor<E>,
    w_k: &Tensor<E>,
    w_v: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>)> {
    if x.ndim() != 3 {
        return Err(Error::shape(format!(
            "attention input must be [B,A,d], got {:?}",
            x.shape()
        )));
    }
    let q = x.matmul(w_q)?;
    let k = x.matmul(w_k)?;
    let v = x.matmul(w_v)?;
    if q.shape() != k.shape() {
        return Err(Error::shape(format!(
            "query {:?} and key {:?} projections differ",
            w_q.shape(),
            w_k.shape()
        )));
    }
    let weights = attention_logits(&q, &k, true)?.softmax(2)?;
    let out = weights.matmul(&v)?;
    Ok((out, weights))
}

/// Sinusoidal 2-D embedding `[h·w, d]`: channels `[0, d/2)` encode the row
/// index and `[d/2, d)` the column index; within each half, channel pairs
/// `(2i, 2i+1)` hold `sin`/`cos` of `pos / 10000^(2i/(d/2))`.
pub fn sine_embedding<E: Element>(h: usize, w: usize, d: usize) -> Result<Tensor<E>> {
    if !d.is_multiple_of(4) || d == 0 {
        return Err(Error::config(format!("sine embedding needs d divisible by 4, got {d}")));
    }
    let half = d / 2;
    let mut data = vec![0.0f64; h * w * d];
    for r in 0..h {
        for c in 0..w {
            let token = &mut data[(r * w + c) * d..][..d];
            for (offset, pos) in [(0, r), (half, c)] {
                for i in 0..half / 2 {
                    let freq = 10000f64.powf((2 * i) as f64 / half as f64);
                    let angle = pos as f64 / freq;
                    token[offset + 2 * i] = angle.sin();
                    token[offset + 2 * i + 1] = angle.cos();
                }
            }
        }
    }
    Tensor::from_f64(&[h * w, d], &data)
}

/// Post-norm transformer encoder layer:
/// `x₁ = LN(x + MHA(x))`, `out = LN(x₁ + FFN(x₁))`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub name: String,
    pub d: usize,
    pub n_heads: usize,
    pub activation: Activation,
    pub out_proj: Linear,
    pub norm1: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(name: &str, d: usize, n_heads: usize, ffn_hidden: usize, activation: Activation) -> Self {
        EncoderLayer {
            name: name.to_string(),
            d,
            n_heads,
            activation,
            out_proj: Linear::new(format!("{name}.attn.out"), d, d, true),
            norm1: LayerNorm::new(format!("{name}.norm1"), d),
            fc1: Linear::new(format!("{name}.ffn.fc1"), d, ffn_hidden, true),
            fc2: Linear::new(format!("{name}.ffn.fc2"), ffn_hidden, d, true),
            norm2: LayerNorm::new(format!("{name}.norm2"), d),
        }
    }

    fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }

    pub fn projection_name(&self, head: usize, which: &str) -> String {
        format!("{}.attn.head{head}.{which}", self.name)
    }

    pub fn param_count(&self) -> usize {
        3 * self.n_heads * self.d * self.head_dim()
            + self.out_proj.param_count()
            + self.norm1.param_count()
            + self.fc1.param_count()
            + self.fc2.param_count()
            + self.norm2.param_count()
    }

    pub fn register<E: Element>(&self, ps: &mut ParamStore<E>, init: &mut Initializer) -> Result<()> {
        let dk = self.head_dim();
        for h in 0..self.n_heads {
            for which in ["w_q", "w_k", "w_v"] {
                ps.insert(
                    self.projection_name(h, which),
                    init.fan_in_uniform(&[self.d, dk], self.d),
                )?;
            }
        }
        self.out_proj.register(ps, init)?;
        self.norm1.register(ps, init)?;
        self.fc1.register(ps, init)?;
        self.fc2.register(ps, init)?;
        self.norm2.register(ps, init)?;
        Ok(())
    }

    /// Concatenated head outputs projected back to width d.
    pub fn multi_head_attention<E: Element>(
        &self,
        ps: &ParamStore<E>,
        x: &Tensor<E>,
        mut attention: Option<&mut Vec<Tensor<E>>>,
    ) -> Result<Tensor<E>> {
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (z, weights) = attention_head(
                x,
                ps.get(&self.projection_name(h, "w_q"))?,
                ps.get(&self.projection_name(h, "w_k"))?,
                ps.get(&self.projection_name(h, "w_v"))?,
            )?;
            if let Some(rec) = attention.as_deref_mut() {
                rec.push(weights);
            }
            heads.push(z);
        }
        let z = Tensor::concat(&heads, 2)?;
        self.out_proj.forward(ps, &z)
    }

    pub fn forward<E: Element>(
        &self,
        ps: &ParamStore<E>,
        x: &Tensor<E>,
        attention: Option<&mut Vec<Tensor<E>>>,
    ) -> Result<Tensor<E>> {
        let attn = self.multi_head_attention(ps, x, attention)?;
        let x1 = self.norm1.forward(ps, &x.add(&attn)?)?;
        let hidden = self.activation.apply(&self.fc1.forward(ps, &x1)?)?;
        let ffn = self.fc2.forward(ps, &hidden)?;
        self.norm2.forward(ps, &x1.add(&ffn)?)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::gradcheck::check_inputs;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_f64(shape, &v).unwrap()
    }

    #[test]
    fn single_position_returns_value_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&[1, 1, 4], &mut rng);
        let (wq, wk, wv) = (
            rand_tensor(&[4, 2], &mut rng),
            rand_tensor(&[4, 2], &mut rng),
            rand_tensor(&[4, 2], &mut rng),
        );
        let (z, w) = attention_head(&x, &wq, &wk, &wv).unwrap();
        assert_eq!(w.data(), &[1.0]);
        let v = x.matmul(&wv).unwrap();
        assert_eq!(z.data(), v.data());
    }

    #[test]
    fn identical_positions_attend_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let row = rand_tensor(&[4], &mut rng).to_vec();
        let x = Tensor::from_vec(&[1, 3, 4], row.repeat(3)).unwrap();
        let (wq, wk, wv) = (
            rand_tensor(&[4, 4], &mut rng),
            rand_tensor(&[4, 4], &mut rng),
            rand_tensor(&[4, 4], &mut rng),
        );
        let (z, w) = attention_head(&x, &wq, &wk, &wv).unwrap();
        assert!(w.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
        let v = x.matmul(&wv).unwrap();
        for (a, b) in z.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unscaled_logits_differ_by_sqrt_dk() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = rand_tensor(&[2, 5, 4], &mut rng);
        let k = rand_tensor(&[2, 5, 4], &mut rng);
        let scaled = attention_logits(&q, &k, true).unwrap();
        let raw = attention_logits(&q, &k, false).unwrap();
        for (s, r) in scaled.data().iter().zip(raw.data()) {
            assert!((r - s * 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_embedding_properties() {
        let pe = sine_embedding::<f64>(4, 4, 8).unwrap();
        assert_eq!(pe.shape(), &[16, 8]);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(pe.data()[0], 0.0);
        for a in 0..16 {
            for b in a + 1..16 {
                assert_ne!(pe.data()[a * 8..(a + 1) * 8], pe.data()[b * 8..(b + 1) * 8]);
            }
        }
        // token (row 1, col 2): channel 0 = sin(1), channel d/2 = sin(2)
        assert!((pe.data()[6 * 8] - 1f64.sin()).abs() < 1e-12);
        assert!((pe.data()[6 * 8 + 4] - 2f64.sin()).abs() < 1e-12);
        assert!(sine_embedding::<f64>(2, 2, 6).is_err());
    }

    #[test]
    fn encoder_layer_gradient_check() {
        for activation in [Activation::Relu, Activation::Gelu] {
            let layer = EncoderLayer::new("enc", 4, 1, 8, activation);
            let mut ps = ParamStore::<f64>::new();
            layer.register(&mut ps, &mut Initializer::new(4)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let x = rand_tensor(&[2, 4, 4], &mut rng);
            let probe = rand_tensor(&[2, 4, 4], &mut rng);
            let mut inputs = vec![x];
            inputs.extend(ps.tensors().cloned());
            let report = check_inputs(
                |v| {
                    let ps = ps.with_tensors(v[1..].to_vec())?;
                    layer.forward(&ps, &v[0], None)?.mul(&probe)?.sum_all()
                },
                &inputs,
                1e-6,
                None,
                0,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{activation}: {report:?}");
        }
    }

    #[test]
    fn encoder_layer_is_permutation_equivariant() {
        let layer = EncoderLayer::new("enc", 8, 2, 16, Activation::Gelu);
        let mut ps = ParamStore::<f64>::new();
        layer.register(&mut ps, &mut Initializer::new(6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&[1, 5, 8], &mut rng);
        let perm = [3, 0, 4, 1, 2];
        let permute = |t: &Tensor<f64>| {
            let d = t.to_vec();
            let v: Vec<f64> = perm.iter().flat_map(|&p| d[p * 8..(p + 1) * 8].to_vec()).collect();
            Tensor::from_vec(&[1, 5, 8], v).unwrap()
        };
        let y = layer.forward(&ps, &x, None).unwrap();
        let y_perm = layer.forward(&ps, &permute(&x), None).unwrap();
        for (a, b) in permute(&y).data().iter().zip(y_perm.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(y.shape(), x.shape());
    }
}
