use std::fmt;
use std::str::FromStr;

use crate::config::{parse_value, KvSection};
use crate::error::{Error, Result};
use crate::nn::Activation;

pub const STEM_CHANNELS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BackboneDepth {
    Tiny18,
    Tiny34,
    Tiny50,
}

impl BackboneDepth {
    /// Residual blocks in each stage.
    pub fn blocks_per_stage(self) -> usize {
        match self {
            BackboneDepth::Tiny18 => 1,
            BackboneDepth::Tiny34 => 2,
            BackboneDepth::Tiny50 => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PosEmbedKind {
    None,
    Sine,
    Learnable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// One convolution whose kernel covers the whole feature grid.
    ConvK,
    /// 1×1 convolution followed by a sum over both spatial axes.
    Conv1,
    /// Flatten then fully connected.
    Fc,
}

macro_rules! name_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::config(format!(
                        concat!("unknown ", $what, " {:?} (expected one of: {})"),
                        other,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

name_enum!(BackboneDepth, "backbone", BackboneDepth::Tiny18 => "tiny18", BackboneDepth::Tiny34 => "tiny34", BackboneDepth::Tiny50 => "tiny50");
name_enum!(PosEmbedKind, "position embedding", PosEmbedKind::None => "none", PosEmbedKind::Sine => "sine", PosEmbedKind::Learnable => "learnable");
name_enum!(HeadKind, "head kind", HeadKind::ConvK => "conv_k", HeadKind::Conv1 => "conv_1", HeadKind::Fc => "fc");

/// Architecture hyperparameters; every ablation axis is a field here.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Square input side in pixels.
    pub input_size: usize,
    pub backbone: BackboneDepth,
    /// Total backbone stride S (a power of two, at least 2).
    pub stride: usize,
    /// Token width after the connector.
    pub d: usize,
    pub n_encoders: usize,
    pub n_heads: usize,
    pub activation: Activation,
    pub pos_embed: PosEmbedKind,
    pub head_kind: HeadKind,
    /// Feed-forward hidden width; `None` means 4·d.
    pub ffn_hidden: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            backbone: BackboneDepth::Tiny18,
            stride: 8,
            d: 16,
            n_encoders: 3,
            n_heads: 4,
            activation: Activation::Relu,
            pos_embed: PosEmbedKind::Learnable,
            head_kind: HeadKind::ConvK,
            ffn_hidden: None,
        }
    }
}

/// One backbone stage: residual blocks at a fixed width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StagePlan {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub blocks: usize,
}

impl ModelConfig {
    /// 3 encoders, 8 heads.
    pub fn eh38() -> Self {
        ModelConfig {
            n_encoders: 3,
            n_heads: 8,
            ..Self::default()
        }
    }

    /// 6 encoders, 4 heads.
    pub fn eh64() -> Self {
        ModelConfig {
            n_encoders: 6,
            n_heads: 4,
            ..Self::default()
        }
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_hidden.unwrap_or(4 * self.d)
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }

    /// Side of the square feature grid, `input_size / S`.
    pub fn grid_side(&self) -> usize {
        self.input_size / self.stride
    }

    /// Number of tokens A.
    pub fn tokens(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// The stem has stride 2 and 16 channels; each further stage halves the
    /// resolution and doubles the width until the total stride reaches S.
    /// With S = 2 a single stride-1 stage follows the stem.
    pub fn stages(&self) -> Vec<StagePlan> {
        let blocks = self.backbone.blocks_per_stage();
        if self.stride == 2 {
            return vec![StagePlan {
                in_channels: STEM_CHANNELS,
                out_channels: STEM_CHANNELS,
                stride: 1,
                blocks,
            }];
        }
        let mut plans = Vec::new();
        let (mut reached, mut width) = (2, STEM_CHANNELS);
        while reached < self.stride {
            plans.push(StagePlan {
                in_channels: width,
                out_channels: 2 * width,
                stride: 2,
                blocks,
            });
            reached *= 2;
            width *= 2;
        }
        plans
    }

    /// Channel count C′ of the backbone output.
    pub fn backbone_channels(&self) -> usize {
        self.stages().last().map_or(STEM_CHANNELS, |s| s.out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.stride < 2 || !self.stride.is_power_of_two() {
            return err(format!("stride {} must be a power of two ≥ 2", self.stride));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(self.stride) {
            return err(format!(
                "input_size {} is not divisible by stride {}",
                self.input_size, self.stride
            ));
        }
        if !(1..=6).contains(&self.n_encoders) {
            return err(format!("n_encoders {} outside 1..=6", self.n_encoders));
        }
        if !(1..=16).contains(&self.n_heads) {
            return err(format!("n_heads {} outside 1..=16", self.n_heads));
        }
        if self.d == 0 || !self.d.is_multiple_of(self.n_heads) {
            return err(format!("d {} is not divisible by n_heads {}", self.d, self.n_heads));
        }
        let c = self.backbone_channels();
        if self.d >= c {
            return err(format!("d {} must be smaller than backbone channels {c}", self.d));
        }
        if self.pos_embed == PosEmbedKind::Sine && !self.d.is_multiple_of(4) {
            return err(format!("sine embedding needs d divisible by 4, got {}", self.d));
        }
        if self.head_kind == HeadKind::ConvK && self.grid_side() > 8 {
            return err(format!(
                "conv_k head needs a feature grid of at most 8×8, got {0}×{0}",
                self.grid_side()
            ));
        }
        if self.ffn_width() == 0 {
            return err("ffn_hidden must be positive".into());
        }
        Ok(())
    }
}

impl KvSection for ModelConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "input_size" => self.input_size = parse_value(key, value)?,
            "backbone" => self.backbone = value.parse()?,
            "stride" => self.stride = parse_value(key, value)?,
            "d" => self.d = parse_value(key, value)?,
            "n_encoders" => self.n_encoders = parse_value(key, value)?,
            "n_heads" => self.n_heads = parse_value(key, value)?,
            "activation" => self.activation = value.parse()?,
            "pos_embed" => self.pos_embed = value.parse()?,
            "head_kind" => self.head_kind = value.parse()?,
            "ffn_hidden" => {
                self.ffn_hidden = match value {
                    "auto" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("input_size", self.input_size.to_string()),
            ("backbone", self.backbone.to_string()),
            ("stride", self.stride.to_string()),
            ("d", self.d.to_string()),
            ("n_encoders", self.n_encoders.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("activation", self.activation.to_string()),
            ("pos_embed", self.pos_embed.to_string()),
            ("head_kind", self.head_kind.to_string()),
            (
                "ffn_hidden",
                self.ffn_hidden.map_or_else(|| "auto".to_string(), |v| v.to_string()),
            ),
        ]
    }
}
