use std::fmt;
use std::str::FromStr;

use super::{evaluate, train, Metrics, TrainConfig, EVAL_BATCH_SIZE};
use crate::config::parse_value;
use crate::data::{AugmentConfig, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{HeadPosr, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Encoders,
    Heads,
    Activation,
    PosEmbed,
    Lr,
    HeadKind,
    D,
    Backbone,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 8] = [
        AblationAxis::Encoders,
        AblationAxis::Heads,
        AblationAxis::Activation,
        AblationAxis::PosEmbed,
        AblationAxis::Lr,
        AblationAxis::HeadKind,
        AblationAxis::D,
        AblationAxis::Backbone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Encoders => "encoders",
            AblationAxis::Heads => "heads",
            AblationAxis::Activation => "activation",
            AblationAxis::PosEmbed => "pos_embed",
            AblationAxis::Lr => "lr",
            AblationAxis::HeadKind => "head_kind",
            AblationAxis::D => "d",
            AblationAxis::Backbone => "backbone",
        }
    }

    /// Sets this axis to `value`, leaving every other setting alone.
    pub fn apply(self, value: &str, model: &mut ModelConfig, train: &mut TrainConfig) -> Result<()> {
        let key = self.name();
        match self {
            AblationAxis::Encoders => model.n_encoders = parse_value(key, value)?,
            AblationAxis::Heads => model.n_heads = parse_value(key, value)?,
            AblationAxis::Activation => model.activation = value.parse()?,
            AblationAxis::PosEmbed => model.pos_embed = value.parse()?,
            AblationAxis::Lr => train.lr0 = parse_value(key, value)?,
            AblationAxis::HeadKind => model.head_kind = value.parse()?,
            AblationAxis::D => model.d = parse_value(key, value)?,
            AblationAxis::Backbone => model.backbone = value.parse()?,
        }
        Ok(())
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationAxis::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = AblationAxis::ALL.iter().map(|a| a.name()).collect();
            Error::config(format!("unknown ablation axis {s:?} (supported: {})", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub value: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Header `<axis>,yaw,pitch,roll,mae`, one row per value.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},yaw,pitch,roll,mae\n", self.axis);
        for r in &self.rows {
            s.push_str(&format!("{},{}\n", r.value, r.metrics.csv_row()));
        }
        s
    }
}

/// Trains one model per value with the same seeds and evaluates the final
/// weights on the test split (or the val split when there is no test
/// split). Every value is validated before any training starts.
pub fn ablation_run(
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    augmentation: &AugmentConfig,
    axis: AblationAxis,
    values: &[String],
    data: &Dataset,
    model_seed: u64,
) -> Result<AblationTable> {
    if values.is_empty() {
        return Err(Error::config("no ablation values given"));
    }
    let mut runs = Vec::with_capacity(values.len());
    for v in values {
        let (mut m, mut t) = (base_model.clone(), base_train.clone());
        axis.apply(v, &mut m, &mut t)
            .and_then(|_| m.validate())
            .and_then(|_| t.validate())
            .map_err(|e| Error::config(format!("{axis}={v}: {e}")))?;
        runs.push((v.clone(), m, t));
    }
    let mut held_out = data.split(Split::Test);
    if held_out.is_empty() {
        held_out = data.split(Split::Val);
    }
    if held_out.is_empty() {
        return Err(Error::config("ablation needs a test or val split"));
    }
    let mut rows = Vec::with_capacity(runs.len());
    for (value, m, t) in runs {
        log::info!("ablation {axis}={value}");
        let mut model = HeadPosr::<f32>::new(m, model_seed)?;
        train(&mut model, data, &t, augmentation)?;
        rows.push(AblationRow {
            value,
            metrics: evaluate(&model, &held_out, EVAL_BATCH_SIZE)?,
        });
    }
    Ok(AblationTable { axis, rows })
}
