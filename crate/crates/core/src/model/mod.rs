//! The head-pose network: backbone, connector, positional embedding,
//! transformer encoder and prediction head.

mod config;
mod encoder;

use std::fmt;

pub use config::{BackboneDepth, HeadKind, ModelConfig, PosEmbedKind, StagePlan, STEM_CHANNELS};
pub use encoder::{attention_head, attention_logits, sine_embedding, EncoderLayer};

use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm2d, BufferStore, Conv2d, Conv2dConfig, Initializer, Linear, ParamStore, ResidualBlock, Stats,
};
use crate::tensor::{Element, ReduceKind, Tensor};

/// Name of the learnable positional embedding parameter.
pub const POS_EMBED: &str = "pos_embed";

/// Euler angles in degrees, in the fixed output order yaw, pitch, roll.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HeadPose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl HeadPose {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        HeadPose { yaw, pitch, roll }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.yaw, self.pitch, self.roll]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        HeadPose::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl fmt::Display for HeadPose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "yaw={:.2} pitch={:.2} roll={:.2}", self.yaw, self.pitch, self.roll)
    }
}

#[derive(Clone, Debug)]
enum Head {
    Conv(Conv2d),
    Fc(Linear),
}

/// Module structure derived from a config; holds no tensors.
#[derive(Clone, Debug)]
struct Layout {
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    blocks: Vec<ResidualBlock>,
    downsample: Conv2d,
    encoders: Vec<EncoderLayer>,
    head: Head,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let stem = Conv2d::new(
            "backbone.stem.conv",
            Conv2dConfig::new(3, STEM_CHANNELS, 4, 2, 1),
            false,
        );
        let mut blocks = Vec::new();
        for (i, stage) in c.stages().iter().enumerate() {
            for j in 0..stage.blocks {
                let (cin, stride) = if j == 0 {
                    (stage.in_channels, stage.stride)
                } else {
                    (stage.out_channels, 1)
                };
                blocks.push(ResidualBlock::new(
                    &format!("backbone.stage{i}.block{j}"),
                    cin,
                    stage.out_channels,
                    stride,
                ));
            }
        }
        let downsample = Conv2d::new(
            "connector.downsample",
            Conv2dConfig::new(c.backbone_channels(), c.d, 1, 1, 0),
            true,
        );
        let encoders = (0..c.n_encoders)
            .map(|i| EncoderLayer::new(&format!("encoder.{i}"), c.d, c.n_heads, c.ffn_width(), c.activation))
            .collect();
        let g = c.grid_side();
        let head = match c.head_kind {
            HeadKind::ConvK => Head::Conv(Conv2d::new("head.conv", Conv2dConfig::new(c.d, 3, g, 1, 0), true)),
            HeadKind::Conv1 => Head::Conv(Conv2d::new("head.conv", Conv2dConfig::new(c.d, 3, 1, 1, 0), true)),
            HeadKind::Fc => Head::Fc(Linear::new("head.fc", c.tokens() * c.d, 3, true)),
        };
        Layout {
            stem,
            stem_bn: BatchNorm2d::new("backbone.stem.bn", STEM_CHANNELS),
            blocks,
            downsample,
            encoders,
            head,
        }
    }

    fn register<E: Element>(
        &self,
        c: &ModelConfig,
        ps: &mut ParamStore<E>,
        buffers: &mut BufferStore<E>,
        init: &mut Initializer,
    ) -> Result<()> {
        self.stem.register(ps, init)?;
        self.stem_bn.register(ps, buffers, init)?;
        for b in &self.blocks {
            b.register(ps, buffers, init)?;
        }
        self.downsample.register(ps, init)?;
        if c.pos_embed == PosEmbedKind::Learnable {
            ps.insert(POS_EMBED, init.normal(&[c.tokens(), c.d], 0.02))?;
        }
        for e in &self.encoders {
            e.register(ps, init)?;
        }
        match &self.head {
            Head::Conv(conv) => conv.register(ps, init),
            Head::Fc(fc) => fc.register(ps, init),
        }
    }
}

/// A model with its parameters and batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct HeadPosr<E: Element = f32> {
    config: ModelConfig,
    layout: Layout,
    params: ParamStore<E>,
    buffers: BufferStore<E>,
}

impl<E: Element> HeadPosr<E> {
    /// Builds a freshly initialized model. The same config and seed always
    /// give the same parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = ParamStore::new();
        let mut buffers = BufferStore::new();
        layout.register(&config, &mut params, &mut buffers, &mut Initializer::new(seed))?;
        Ok(HeadPosr {
            config,
            layout,
            params,
            buffers,
        })
    }

    /// Reassembles a model from stored tensors. Names, order and shapes must
    /// match what `new` would create for this config.
    pub fn from_parts(config: ModelConfig, params: ParamStore<E>, buffers: BufferStore<E>) -> Result<Self> {
        let template = HeadPosr::<E>::new(config, 0)?;
        check_same_layout("parameter", &template.params, &params)?;
        check_same_layout("buffer", &template.buffers, &buffers)?;
        let params = params.with_tensors(params.tensors().map(|t| t.detach().into_param()).collect())?;
        Ok(HeadPosr {
            params,
            buffers,
            ..template
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<E> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<E> {
        &mut self.params
    }

    pub fn buffers(&self) -> &BufferStore<E> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut BufferStore<E> {
        &mut self.buffers
    }

    pub fn parameter_count(&self) -> usize {
        self.params.numel()
    }

    pub fn encoder_layers(&self) -> &[EncoderLayer] {
        &self.layout.encoders
    }

    pub fn cast<F: Element>(&self) -> HeadPosr<F> {
        HeadPosr {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
            buffers: self.buffers.cast(),
        }
    }

    /// `[B,3,H,W]` → `[B,C′,H/S,W/S]`.
    pub fn backbone_forward(&self, ps: &ParamStore<E>, stats: &mut Stats<'_, E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let n = self.config.input_size;
        if x.ndim() != 4 || x.shape()[1] != 3 || x.shape()[2] != n || x.shape()[3] != n {
            return Err(Error::shape(format!(
                "expected images of shape [B,3,{n},{n}], got {:?}",
                x.shape()
            )));
        }
        let l = &self.layout;
        let mut h = l.stem.forward(ps, x)?;
        h = l.stem_bn.forward(ps, stats, &h)?.relu()?;
        for b in &l.blocks {
            h = b.forward(ps, stats, &h)?;
        }
        Ok(h)
    }

    /// `[B,C′,h,w]` → `[B,A,d]` through a 1×1 convolution.
    pub fn connector_forward(&self, ps: &ParamStore<E>, features: &Tensor<E>) -> Result<Tensor<E>> {
        let f = self.layout.downsample.forward(ps, features)?;
        let (b, d) = (f.shape()[0], f.shape()[1]);
        let a = f.shape()[2] * f.shape()[3];
        f.reshape_permute(&[b, d, a], &[0, 2, 1])
    }

    /// The `[A,d]` tensor added to the encoder input.
    pub fn positional_embedding(&self, ps: &ParamStore<E>) -> Result<Tensor<E>> {
        let c = &self.config;
        match c.pos_embed {
            PosEmbedKind::None => Ok(Tensor::zeros(&[c.tokens(), c.d])),
            PosEmbedKind::Sine => sine_embedding(c.grid_side(), c.grid_side(), c.d),
            PosEmbedKind::Learnable => ps.get(POS_EMBED).cloned(),
        }
    }

    /// Adds `pos` once, then applies every encoder layer. Attention weights
    /// are appended to `attention` layer by layer, head by head.
    pub fn encoder_forward(
        &self,
        ps: &ParamStore<E>,
        seq: &Tensor<E>,
        pos: &Tensor<E>,
        mut attention: Option<&mut Vec<Tensor<E>>>,
    ) -> Result<Tensor<E>> {
        let mut h = seq.add(pos)?;
        for layer in &self.layout.encoders {
            h = layer.forward(ps, &h, attention.as_deref_mut())?;
        }
        Ok(h)
    }

    /// `[B,A,d]` → `[B,3]`.
    pub fn head_forward(&self, ps: &ParamStore<E>, seq: &Tensor<E>) -> Result<Tensor<E>> {
        let c = &self.config;
        let (b, g) = (seq.shape()[0], c.grid_side());
        if seq.shape()[1..] != [c.tokens(), c.d] {
            return Err(Error::shape(format!(
                "head expects [B,{},{}], got {:?}",
                c.tokens(),
                c.d,
                seq.shape()
            )));
        }
        match &self.layout.head {
            Head::Fc(fc) => fc.forward(ps, &seq.reshape(&[b, c.tokens() * c.d])?),
            Head::Conv(conv) => {
                let grid = seq.permute(&[0, 2, 1])?.reshape(&[b, c.d, g, g])?;
                let out = conv.forward(ps, &grid)?;
                match c.head_kind {
                    HeadKind::ConvK => out.reshape(&[b, 3]),
                    _ => out.reduce(&[2, 3], ReduceKind::Sum),
                }
            }
        }
    }

    /// Full forward pass with explicit parameters and statistics.
    pub fn forward_with(
        &self,
        ps: &ParamStore<E>,
        stats: &mut Stats<'_, E>,
        x: &Tensor<E>,
        attention: Option<&mut Vec<Tensor<E>>>,
    ) -> Result<Tensor<E>> {
        let features = self.backbone_forward(ps, stats, x)?;
        let seq = self.connector_forward(ps, &features)?;
        let pos = self.positional_embedding(ps)?;
        let encoded = self.encoder_forward(ps, &seq, &pos, attention)?;
        self.head_forward(ps, &encoded)
    }

    /// Eval-mode forward: batch norm uses running statistics.
    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        self.forward_with(&self.params, &mut Stats::Frozen(&self.buffers), x, None)
    }

    /// Eval-mode forward that also returns every attention weight tensor.
    pub fn forward_traced(&self, x: &Tensor<E>) -> Result<(Tensor<E>, Vec<Tensor<E>>)> {
        let mut attention = Vec::new();
        let y = self.forward_with(&self.params, &mut Stats::Frozen(&self.buffers), x, Some(&mut attention))?;
        Ok((y, attention))
    }

    /// Train-mode forward: batch statistics normalize and the running
    /// statistics are updated.
    pub fn forward_train(&mut self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let mut buffers = std::mem::replace(&mut self.buffers, BufferStore::new());
        let y = self.forward_with(&self.params, &mut Stats::Update(&mut buffers), x, None);
        self.buffers = buffers;
        y
    }

    /// Eval-mode predictions as poses.
    pub fn predict(&self, x: &Tensor<E>) -> Result<Vec<HeadPose>> {
        let _guard = crate::tensor::no_grad();
        let y = self.forward(x)?.to_f64_vec();
        Ok(y.chunks(3).map(|c| HeadPose::new(c[0], c[1], c[2])).collect())
    }
}

fn check_same_layout<E: Element>(what: &str, expected: &ParamStore<E>, got: &ParamStore<E>) -> Result<()> {
    if expected.len() != got.len() {
        return Err(Error::Format(format!(
            "expected {} {what} tensors, found {}",
            expected.len(),
            got.len()
        )));
    }
    for ((en, et), (gn, gt)) in expected.iter().zip(got.iter()) {
        if en != gn || et.shape() != gt.shape() {
            return Err(Error::Format(format!(
                "{what} mismatch: expected {en} {:?}, found {gn} {:?}",
                et.shape(),
                gt.shape()
            )));
        }
    }
    Ok(())
}
