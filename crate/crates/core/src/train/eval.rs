use std::fmt;

use crate::data::{batch, Sample};
use crate::error::{Error, Result};
use crate::model::{HeadPose, HeadPosr};
use crate::tensor::{no_grad, Tensor};

/// Mean absolute error per angle, in degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub mae_yaw: f64,
    pub mae_pitch: f64,
    pub mae_roll: f64,
    pub mae_overall: f64,
    pub n_samples: usize,
}

impl Metrics {
    pub fn from_predictions(predictions: &[HeadPose], targets: &[HeadPose]) -> Result<Self> {
        if predictions.len() != targets.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} targets",
                predictions.len(),
                targets.len()
            )));
        }
        if targets.is_empty() {
            return Err(Error::config("cannot evaluate an empty split"));
        }
        let mut sums = [0.0f64; 3];
        for (p, t) in predictions.iter().zip(targets) {
            for (s, (a, b)) in sums.iter_mut().zip(p.to_array().into_iter().zip(t.to_array())) {
                *s += (a - b).abs();
            }
        }
        let n = targets.len() as f64;
        let [y, p, r] = sums.map(|s| s / n);
        Ok(Metrics {
            mae_yaw: y,
            mae_pitch: p,
            mae_roll: r,
            mae_overall: (y + p + r) / 3.0,
            n_samples: targets.len(),
        })
    }

    /// `yaw,pitch,roll,mae` with two decimals.
    pub fn csv_row(&self) -> String {
        format!(
            "{:.2},{:.2},{:.2},{:.2}",
            self.mae_yaw, self.mae_pitch, self.mae_roll, self.mae_overall
        )
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "yaw {:.2} pitch {:.2} roll {:.2} mae {:.2} (n={})",
            self.mae_yaw, self.mae_pitch, self.mae_roll, self.mae_overall, self.n_samples
        )
    }
}

/// Anything that maps a `[B,3,H,W]` batch to poses.
pub trait PosePredictor {
    fn predict_batch(&self, images: &Tensor<f32>) -> Result<Vec<HeadPose>>;
}

impl PosePredictor for HeadPosr<f32> {
    fn predict_batch(&self, images: &Tensor<f32>) -> Result<Vec<HeadPose>> {
        self.predict(images)
    }
}

/// Eval-mode predictions over `samples` in batches of `batch_size`.
pub fn evaluate<P: PosePredictor + ?Sized>(predictor: &P, samples: &[&Sample], batch_size: usize) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::config("cannot evaluate an empty split"));
    }
    let _guard = no_grad();
    let mut predictions = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let (images, _) = batch(chunk)?;
        let out = predictor.predict_batch(&images)?;
        if out.len() != chunk.len() {
            return Err(Error::Contract(format!(
                "predictor returned {} poses for {} images",
                out.len(),
                chunk.len()
            )));
        }
        predictions.extend(out);
    }
    let targets: Vec<HeadPose> = samples.iter().map(|s| s.pose).collect();
    Metrics::from_predictions(&predictions, &targets)
}
