//! Objective, optimizer, schedule, training loop, evaluation and ablation
//! sweeps.

mod ablation;
mod adam;
mod config;
mod eval;
mod loss;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use ablation::{ablation_run, AblationAxis, AblationRow, AblationTable};
pub use adam::{Adam, AdamConfig};
pub use config::{lr_schedule, TrainConfig};
pub use eval::{evaluate, Metrics, PosePredictor};
pub use loss::mae_loss;

use crate::data::{augment, batch, AugmentConfig, Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::model::HeadPosr;
use crate::nn::{BufferStore, ParamStore};
use crate::tensor::Tensor;

pub const EVAL_BATCH_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val: Option<Metrics>,
}

/// Weights captured at the epoch with the lowest validation MAE.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub epoch: usize,
    pub metrics: Metrics,
    pub params: ParamStore<f32>,
    pub buffers: BufferStore<f32>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best: Option<Snapshot>,
    pub optimizer: Adam<f32>,
}

impl TrainReport {
    pub fn steps(&self) -> u64 {
        self.optimizer.t
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,val_mae_yaw,val_mae_pitch,val_mae_roll,val_mae\n");
        for r in &self.history {
            let val = r.val.map_or_else(
                || ",,,".to_string(),
                |m| {
                    format!(
                        "{:.4},{:.4},{:.4},{:.4}",
                        m.mae_yaw, m.mae_pitch, m.mae_roll, m.mae_overall
                    )
                },
            );
            s.push_str(&format!("{},{},{:.6},{val}\n", r.epoch, r.lr, r.train_loss));
        }
        s
    }
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step(
    model: &mut HeadPosr<f32>,
    optimizer: &mut Adam<f32>,
    images: &Tensor<f32>,
    targets: &Tensor<f32>,
    lr: f64,
) -> Result<f64> {
    let pred = model.forward_train(images)?;
    let loss = mae_loss(&pred, targets)?;
    loss.backward()?;
    optimizer.step(model.params_mut(), lr)?;
    Ok(loss.item() as f64)
}

/// Trains on the train split. The per-epoch validation columns use the val
/// split, or the test split when there is none; the best-epoch snapshot is
/// only taken from a real val split.
pub fn train(
    model: &mut HeadPosr<f32>,
    data: &Dataset,
    config: &TrainConfig,
    augmentation: &AugmentConfig,
) -> Result<TrainReport> {
    config.validate()?;
    augmentation.validate()?;
    let train_set = data.split(Split::Train);
    if train_set.is_empty() {
        return Err(Error::config("the train split is empty"));
    }
    let mut val_set = data.split(Split::Val);
    let selectable = !val_set.is_empty();
    if !selectable {
        val_set = data.split(Split::Test);
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut augment_rng = ChaCha8Rng::seed_from_u64(config.seed);
    augment_rng.set_stream(1);
    let mut optimizer = Adam::new(config.adam);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<Snapshot> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let samples: Vec<Sample> = idx
                .iter()
                .map(|&i| augment(train_set[i], augmentation, &mut augment_rng))
                .collect();
            let refs: Vec<&Sample> = samples.iter().collect();
            let (images, targets) = batch(&refs)?;
            let loss = train_step(model, &mut optimizer, &images, &targets, lr).map_err(|e| Error::Training {
                epoch,
                batch: b,
                source: Box::new(e),
            })?;
            loss_sum += loss * idx.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(model, &val_set, EVAL_BATCH_SIZE)?)
        };
        log::info!(
            "epoch {epoch} lr {lr} train loss {train_loss:.4}{}",
            val.map_or(String::new(), |m| format!(" val {m}"))
        );
        if let (true, Some(m)) = (selectable, val) {
            if best.as_ref().is_none_or(|s| m.mae_overall < s.metrics.mae_overall) {
                best = Some(Snapshot {
                    epoch,
                    metrics: m,
                    params: model.params().clone(),
                    buffers: model.buffers().clone(),
                });
            }
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val,
        });
    }
    Ok(TrainReport {
        history,
        best,
        optimizer,
    })
}
