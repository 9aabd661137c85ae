use super::adam::AdamConfig;
use crate::config::{parse_value, KvSection};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_interval: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 90,
            batch_size: 16,
            lr0: 0.001,
            decay_factor: 0.1,
            decay_interval: 30,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config(format!("lr0 {} must be positive", self.lr0)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config(format!(
                "decay_factor {} must be in (0, 1]",
                self.decay_factor
            )));
        }
        if self.decay_interval == 0 {
            return Err(Error::config("decay_interval must be at least 1"));
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
            return Err(Error::config(format!("invalid Adam settings {:?}", self.adam)));
        }
        Ok(())
    }
}

/// `lr0 · decay_factor^⌊epoch / decay_interval⌋`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let k = (epoch / config.decay_interval) as i32;
    // Trim the rounding that repeated multiplication leaves in the power,
    // so 0.1² is 0.01 rather than 0.010000000000000002.
    let decay: f64 = format!("{:.15e}", config.decay_factor.powi(k))
        .parse()
        .expect("formatted float parses");
    config.lr0 * decay
}

impl KvSection for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr0" => self.lr0 = parse_value(key, value)?,
            "decay_factor" => self.decay_factor = parse_value(key, value)?,
            "decay_interval" => self.decay_interval = parse_value(key, value)?,
            "beta1" => self.adam.beta1 = parse_value(key, value)?,
            "beta2" => self.adam.beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam.eps = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr0", self.lr0.to_string()),
            ("decay_factor", self.decay_factor.to_string()),
            ("decay_interval", self.decay_interval.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn schedule_breakpoints() {
        let c = TrainConfig {
            lr0: 0.01,
            ..Default::default()
        };
        assert_eq!(lr_schedule(0, &c), 0.01);
        assert_eq!(lr_schedule(29, &c), 0.01);
        assert_eq!(lr_schedule(30, &c), 0.1 * 0.01);
        assert_eq!(lr_schedule(60, &c), 0.01 * 0.01);
    }

    proptest! {
        #[test]
        fn schedule_is_piecewise_constant_and_non_increasing(
            lr0 in 1e-6..1.0f64,
            factor in 0.01..=1.0f64,
            interval in 1usize..50,
            epoch in 0usize..500,
        ) {
            let c = TrainConfig { lr0, decay_factor: factor, decay_interval: interval, ..Default::default() };
            prop_assert!(lr_schedule(epoch + 1, &c) <= lr_schedule(epoch, &c));
            if (epoch + 1) % interval != 0 {
                prop_assert_eq!(lr_schedule(epoch + 1, &c), lr_schedule(epoch, &c));
            }
        }
    }

    #[test]
    fn validation() {
        TrainConfig::default().validate().unwrap();
        for bad in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                lr0: 0.0,
                ..Default::default()
            },
            TrainConfig {
                decay_factor: 1.5,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn kv_round_trip() {
        let c = TrainConfig {
            epochs: 3,
            lr0: 0.0005,
            seed: 9,
            ..Default::default()
        };
        let mut back = TrainConfig::default();
        for (k, v) in c.entries() {
            assert!(back.set(k, &v).unwrap());
        }
        assert_eq!(back, c);
    }
}
