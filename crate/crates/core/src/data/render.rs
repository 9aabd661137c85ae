use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rotation::{apply, euler_to_rotation};
use crate::error::{Error, Result};
use crate::model::HeadPose;

pub type Rgb = [f32; 3];

pub const RED: Rgb = [0.95, 0.15, 0.1];
pub const GREEN: Rgb = [0.1, 0.85, 0.2];
pub const BLUE: Rgb = [0.15, 0.35, 1.0];
/// Cube edges take a dimmed version of the axis color they run along.
const EDGE_DIM: f32 = 0.55;

/// Planar RGB image, channel-major, values in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in fill {
            data.extend(std::iter::repeat_n(c, width * height));
        }
        Canvas { width, height, data }
    }

    fn blend(&mut self, x: usize, y: usize, color: Rgb, alpha: f32) {
        let plane = self.width * self.height;
        let i = y * self.width + x;
        for (c, &v) in color.iter().enumerate() {
            let p = &mut self.data[c * plane + i];
            *p = *p * (1.0 - alpha) + v * alpha;
        }
    }

    /// Anti-aliased segment: coverage falls off linearly over one pixel at
    /// the edge of a `width`-wide stroke.
    pub fn line(&mut self, a: [f64; 2], b: [f64; 2], width: f64, color: Rgb) {
        let half = width / 2.0;
        let reach = half + 1.0;
        let lo_x = (a[0].min(b[0]) - reach).floor().max(0.0) as usize;
        let lo_y = (a[1].min(b[1]) - reach).floor().max(0.0) as usize;
        let hi_x = ((a[0].max(b[0]) + reach).ceil() as isize).min(self.width as isize - 1);
        let hi_y = ((a[1].max(b[1]) + reach).ceil() as isize).min(self.height as isize - 1);
        if hi_x < 0 || hi_y < 0 {
            return;
        }
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        for y in lo_y..=hi_y as usize {
            for x in lo_x..=hi_x as usize {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = if len2 > 0.0 {
                    (((px - a[0]) * dx + (py - a[1]) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let dist = (px - a[0] - t * dx).hypot(py - a[1] - t * dy);
                let coverage = (half + 0.5 - dist).clamp(0.0, 1.0);
                if coverage > 0.0 {
                    self.blend(x, y, color, coverage as f32);
                }
            }
        }
    }

    /// Rounds every value to the nearest 8-bit level so the canvas survives
    /// a PNG round trip unchanged.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }
}

struct Segment {
    a: [f64; 3],
    b: [f64; 3],
    width: f64,
    color: Rgb,
}

/// Draws the pose proxy (a unit cube plus side, down and facing axes)
/// rotated by `pose` and projected orthographically. Segments are painted
/// from far to near, with the viewer on the +z side, and dimmed with depth.
pub fn draw_pose(canvas: &mut Canvas, pose: HeadPose, center: [f64; 2], scale: f64, with_cube: bool) {
    let r = euler_to_rotation(pose);
    let base = (scale / 25.0).max(1.0);
    let mut segments = Vec::new();
    if with_cube {
        let corner = |i: usize| [0, 1, 2].map(|k| if i >> k & 1 == 1 { 0.5 } else { -0.5 });
        for i in 0..8usize {
            for k in 0..3 {
                let j = i | 1 << k;
                if j != i {
                    segments.push(Segment {
                        a: corner(i),
                        b: corner(j),
                        width: base,
                        color: [RED, GREEN, BLUE][k].map(|c| c * EDGE_DIM),
                    });
                }
            }
        }
    }
    for (axis, color) in [RED, GREEN, BLUE].into_iter().enumerate() {
        let mut tip = [0.0; 3];
        tip[axis] = 1.0;
        segments.push(Segment {
            a: [0.0; 3],
            b: tip,
            width: 2.6 * base,
            color,
        });
    }
    let mut placed: Vec<(f64, [f64; 3], [f64; 3], &Segment)> = segments
        .iter()
        .map(|s| {
            let (a, b) = (apply(&r, s.a), apply(&r, s.b));
            ((a[2] + b[2]) / 2.0, a, b, s)
        })
        .collect();
    placed.sort_by(|x, y| x.0.total_cmp(&y.0));
    let project = |p: [f64; 3]| [center[0] + scale * p[0], center[1] + scale * p[1]];
    for (z, a, b, s) in placed {
        let shade = (0.7 + 0.3 * z) as f32;
        canvas.line(
            project(a),
            project(b),
            s.width,
            s.color.map(|c| (c * shade).clamp(0.0, 1.0)),
        );
    }
}

pub const MAX_SYNTHETIC_ANGLE: f64 = 99.0;

/// Renders a square synthetic image for `pose`. The result depends only on
/// `(pose, size, seed, noise_level)`.
pub fn render_synthetic(pose: HeadPose, size: usize, seed: u64, noise_level: f64) -> Result<Canvas> {
    if !pose.is_finite() || pose.max_abs() > MAX_SYNTHETIC_ANGLE {
        return Err(Error::Contract(format!(
            "synthetic poses must lie within ±{MAX_SYNTHETIC_ANGLE}°, got {pose}"
        )));
    }
    if size < 8 {
        return Err(Error::Contract(format!("image size {size} is below 8 pixels")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tint: [f32; 3] = [0.0; 3].map(|_: f32| rng.random_range(0.08..0.22));
    let mut canvas = Canvas::new(size, size, tint);
    if noise_level > 0.0 {
        for v in &mut canvas.data {
            *v = (*v + rng.random_range(-noise_level..=noise_level) as f32).clamp(0.0, 1.0);
        }
    }
    let s = size as f64;
    draw_pose(&mut canvas, pose, [s / 2.0, s / 2.0], 0.4 * s, true);
    canvas.quantize();
    Ok(canvas)
}
