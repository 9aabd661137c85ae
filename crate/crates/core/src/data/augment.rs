use rand::Rng;

use super::Sample;
use crate::config::{parse_value, KvSection};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Largest shift of the crop center, as a fraction of the image side.
    /// Off by default: the scale draw already varies the crop, and the
    /// conv_k head reads each position with its own weights.
    pub crop_jitter_fraction: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            scale_min: 0.8,
            scale_max: 1.2,
            crop_jitter_fraction: 0.0,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::config(format!(
                "augmentation scale range [{}, {}] is invalid",
                self.scale_min, self.scale_max
            )));
        }
        if !(0.0..0.5).contains(&self.crop_jitter_fraction) {
            return Err(Error::config(format!(
                "crop_jitter {} must be in [0, 0.5)",
                self.crop_jitter_fraction
            )));
        }
        Ok(())
    }
}

impl KvSection for AugmentConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "augment" => self.enabled = parse_value(key, value)?,
            "scale_min" => self.scale_min = parse_value(key, value)?,
            "scale_max" => self.scale_max = parse_value(key, value)?,
            "crop_jitter" => self.crop_jitter_fraction = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("augment", self.enabled.to_string()),
            ("scale_min", self.scale_min.to_string()),
            ("scale_max", self.scale_max.to_string()),
            ("crop_jitter", self.crop_jitter_fraction.to_string()),
        ]
    }
}

/// Random scale followed by a crop (or zero pad) back to the original size
/// around a jittered center, with bilinear resampling. The pose label is
/// left unchanged.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, config: &AugmentConfig, rng: &mut R) -> Sample {
    if !config.enabled {
        return sample.clone();
    }
    let scale = rng.random_range(config.scale_min..=config.scale_max);
    let (h, w) = (sample.image.shape()[1], sample.image.shape()[2]);
    let jx = config.crop_jitter_fraction * w as f64;
    let jy = config.crop_jitter_fraction * h as f64;
    let shift_x = if jx > 0.0 { rng.random_range(-jx..=jx) } else { 0.0 };
    let shift_y = if jy > 0.0 { rng.random_range(-jy..=jy) } else { 0.0 };
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let src = sample.image.data();
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        let sy = cy + shift_y + (y as f64 - cy) / scale;
        for x in 0..w {
            let sx = cx + shift_x + (x as f64 - cx) / scale;
            for c in 0..3 {
                out[(c * h + y) * w + x] = bilinear(&src[c * h * w..(c + 1) * h * w], w, h, sx, sy);
            }
        }
    }
    Sample {
        image: Tensor::from_vec(sample.image.shape(), out).expect("resampled values are finite"),
        pose: sample.pose,
        id: sample.id.clone(),
    }
}

/// Zero outside the image.
fn bilinear(plane: &[f32], w: usize, h: usize, x: f64, y: f64) -> f32 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
    let at = |xi: f64, yi: f64| -> f32 {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            plane[yi as usize * w + xi as usize]
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
    (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0)
}
