use super::conv::{Conv2d, Conv2dConfig};
use super::norm::{BatchNorm2d, Stats};
use super::params::{BufferStore, Initializer, ParamStore};
use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Two-convolution residual block:
/// `relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))`.
///
/// Strided blocks downsample with a `(stride + 2)`-wide kernel and padding 1,
/// and the projection shortcut uses a `stride × stride` kernel, so the output
/// is exactly `input / stride` for every input divisible by the stride.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl ResidualBlock {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        let k1 = if stride == 1 { 3 } else { stride + 2 };
        let conv1 = Conv2d::new(
            format!("{name}.conv1"),
            Conv2dConfig::new(in_channels, out_channels, k1, stride, 1),
            false,
        );
        let conv2 = Conv2d::new(
            format!("{name}.conv2"),
            Conv2dConfig::new(out_channels, out_channels, 3, 1, 1),
            false,
        );
        let shortcut = (stride != 1 || in_channels != out_channels).then(|| {
            (
                Conv2d::new(
                    format!("{name}.shortcut.conv"),
                    Conv2dConfig::new(in_channels, out_channels, stride, stride, 0),
                    false,
                ),
                BatchNorm2d::new(format!("{name}.shortcut.bn"), out_channels),
            )
        });
        ResidualBlock {
            conv1,
            bn1: BatchNorm2d::new(format!("{name}.bn1"), out_channels),
            conv2,
            bn2: BatchNorm2d::new(format!("{name}.bn2"), out_channels),
            shortcut,
        }
    }

    pub fn param_count(&self) -> usize {
        let sc = self
            .shortcut
            .as_ref()
            .map_or(0, |(c, b)| c.param_count() + b.param_count());
        self.conv1.param_count() + self.bn1.param_count() + self.conv2.param_count() + self.bn2.param_count() + sc
    }

    pub fn register<E: Element>(
        &self,
        ps: &mut ParamStore<E>,
        buffers: &mut BufferStore<E>,
        init: &mut Initializer,
    ) -> Result<()> {
        self.conv1.register(ps, init)?;
        self.bn1.register(ps, buffers, init)?;
        self.conv2.register(ps, init)?;
        self.bn2.register(ps, buffers, init)?;
        if let Some((conv, bn)) = &self.shortcut {
            conv.register(ps, init)?;
            bn.register(ps, buffers, init)?;
        }
        Ok(())
    }

    pub fn forward<E: Element>(
        &self,
        ps: &ParamStore<E>,
        stats: &mut Stats<'_, E>,
        x: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let h = self.conv1.forward(ps, x)?;
        let h = self.bn1.forward(ps, stats, &h)?.relu()?;
        let h = self.conv2.forward(ps, &h)?;
        let h = self.bn2.forward(ps, stats, &h)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(ps, stats, &conv.forward(ps, x)?)?,
            None => x.clone(),
        };
        h.add(&skip)?.relu()
    }
}
