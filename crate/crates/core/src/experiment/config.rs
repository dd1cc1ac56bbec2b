//! Experiment configuration: defaults, a flat `key = value` file format and
//! per-key overrides (the command-line flags map onto the same keys).
//!
//! ```text
//! # comment
//! seed = 0              experiment seed (training, noise, verification)
//! data_seed = 0         dataset seed
//! task = text-removal   text-removal | screentone
//! size = 32             image side, 8..=64
//! eval_size = 64        number of eval-split samples
//! grid_n = 20           sampler steps N
//! corrector = empty-prompt
//! m = 3                 corrected steps M
//! alpha = 0.01          blend strength
//! s = 0.005             flowchef steering step
//! noise_inversion_i = 1 start index of the noise-inversion baseline
//! reevaluate_v = false
//! record_states = false
//! steps = 1500          training steps
//! batch_size = 32
//! learning_rate = 0.001
//! hidden = 256,256
//! instances = 100       verification instances
//! checkpoint = path     model checkpoint
//! out = results         output directory
//! ```

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::sampler::{CorrectorConfig, CorrectorKind, TimeGrid};
use crate::synth::{Task, DEFAULT_SIZE};
use crate::velocity::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data_seed: u64,
    pub task: Task,
    pub size: usize,
    pub eval_size: usize,
    pub grid_n: usize,
    pub corrector: CorrectorConfig,
    pub noise_inversion_i: usize,
    pub record_states: bool,
    pub train: TrainConfig,
    pub instances: usize,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_seed: 0,
            task: Task::TextRemoval,
            size: DEFAULT_SIZE,
            eval_size: 64,
            grid_n: 20,
            corrector: CorrectorConfig::default(),
            noise_inversion_i: 1,
            record_states: false,
            train: TrainConfig::default(),
            instances: 100,
            checkpoint: None,
            out: PathBuf::from("results"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "seed" => {
                self.seed = parse(key, value)?;
                self.train.seed = self.seed;
            }
            "data_seed" => self.data_seed = parse(key, value)?,
            "task" => self.task = value.parse()?,
            "size" => self.size = parse(key, value)?,
            "eval_size" => self.eval_size = parse(key, value)?,
            "grid_n" => self.grid_n = parse(key, value)?,
            "corrector" => self.corrector.kind = value.parse::<CorrectorKind>()?,
            "m" => self.corrector.m = parse(key, value)?,
            "alpha" => self.corrector.alpha = parse(key, value)?,
            "s" => self.corrector.s = parse(key, value)?,
            "noise_inversion_i" => self.noise_inversion_i = parse(key, value)?,
            "reevaluate_v" => self.corrector.reevaluate_v = parse_bool(key, value)?,
            "record_states" => self.record_states = parse_bool(key, value)?,
            "steps" => self.train.steps = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "hidden" => self.train.hidden = value.split(',').map(|w| parse(key, w.trim())).collect::<Result<_>>()?,
            "instances" => self.instances = parse(key, value)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every non-blank, non-comment line of a config file.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.grid_n)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.corrector.validate(&grid)?;
        if self.noise_inversion_i >= self.grid_n {
            return Err(Error::Config(format!(
                "noise_inversion_i {} must be below grid_n {}",
                self.noise_inversion_i, self.grid_n
            )));
        }
        if self.eval_size == 0 {
            return Err(Error::Config("eval_size must be positive".into()));
        }
        self.train.validate()
    }

    /// Total generated samples; one in ten lands in the eval split.
    pub fn dataset_size(&self) -> usize {
        self.eval_size * 10
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_overrides() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_file("# demo\nseed = 4\nhidden = 8, 4\n\nalpha=0.1 # strong\ncorrector = flowchef\n")
            .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.train.seed, 4);
        assert_eq!(cfg.train.hidden, vec![8, 4]);
        assert_eq!(cfg.corrector.alpha, 0.1);
        assert_eq!(cfg.corrector.kind, CorrectorKind::FlowchefSteer);
        cfg.set("alpha", "0.2").unwrap();
        assert_eq!(cfg.corrector.alpha, 0.2);
        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.set("m", "x").is_err());
        assert!(cfg.apply_file("just words").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.corrector.m = 20;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.corrector.m = 3;
        cfg.noise_inversion_i = 20;
        assert!(cfg.validate().is_err());
    }
}
