//! Resolved run parameters. One `key = value` per line, `#` starts a
//! comment; defaults are overridden by a config file, which is overridden by
//! command-line flags of the same name.

use std::path::Path;

use crate::baseline::DpConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainConfig, TrainStop};
use crate::pipeline::{DatasetConfig, PatchConfig};
use crate::synthdata::{SynthConfig, SynthMode};

/// Every recognised key, in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "x",
    "y",
    "z",
    "n",
    "lambda",
    "mode",
    "noise_sigma",
    "bump_count",
    "conv_channels",
    "kernel_h",
    "kernel_w",
    "fc_hidden",
    "lr",
    "momentum",
    "batch_size",
    "epochs",
    "lr_decay",
    "decay_every",
    "max_iterations",
    "target_umspe",
    "stride",
    "pad",
    "augment",
    "translate_range",
    "max_rotation_deg",
    "delta_max",
    "smooth_weight",
    "smooth_exponent",
    "sep_min",
    "sep_max",
    "cost_sign",
    "max_states",
    "slice",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub n: usize,
    pub lambda: usize,
    pub mode: SynthMode,
    pub noise_sigma: f64,
    pub bump_count: usize,
    pub conv_channels: [usize; 3],
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub fc_hidden: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay: f64,
    pub decay_every: usize,
    /// 0 means no limit.
    pub max_iterations: usize,
    /// 0 means train for all epochs.
    pub target_umspe: f64,
    /// `None` means N/8.
    pub stride: Option<usize>,
    /// `None` means N/4, matching inference padding.
    pub pad: Option<usize>,
    pub augment: bool,
    /// `None` means Z/2.
    pub translate_range: Option<i64>,
    pub max_rotation_deg: f64,
    pub delta_max: usize,
    pub smooth_weight: Vec<f64>,
    pub smooth_exponent: u32,
    pub sep_min: usize,
    pub sep_max: usize,
    pub cost_sign: Vec<f64>,
    pub max_states: usize,
    pub slice: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let dp = DpConfig::default();
        Self {
            seed: 0,
            x: synth.x,
            y: synth.y,
            z: synth.z,
            n: model.n,
            lambda: synth.lambda,
            mode: SynthMode::Normal,
            noise_sigma: synth.noise_sigma,
            bump_count: synth.bump_count,
            conv_channels: model.conv_channels,
            kernel_h: model.kernel.0,
            kernel_w: model.kernel.1,
            fc_hidden: model.fc_hidden,
            lr: train.lr,
            momentum: train.momentum,
            batch_size: train.batch_size,
            epochs: train.epochs,
            lr_decay: train.lr_decay,
            decay_every: train.decay_every,
            max_iterations: 0,
            target_umspe: 0.0,
            stride: None,
            pad: None,
            augment: true,
            translate_range: None,
            max_rotation_deg: crate::pipeline::augment::MAX_ROTATION_DEG,
            delta_max: dp.delta_max,
            smooth_weight: dp.smooth_weight,
            smooth_exponent: dp.smooth_exponent,
            sep_min: dp.sep_min,
            sep_max: dp.sep_max,
            cost_sign: dp.cost_sign,
            max_states: dp.max_states,
            slice: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_auto<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "x" => self.x = parse(key, v)?,
            "y" => self.y = parse(key, v)?,
            "z" => self.z = parse(key, v)?,
            "n" => self.n = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "mode" => {
                self.mode = match v {
                    "normal" => SynthMode::Normal,
                    "amd" => SynthMode::AmdLike,
                    _ => return Err(Error::Config(format!("mode: expected normal or amd, got {v:?}"))),
                }
            }
            "noise_sigma" => self.noise_sigma = parse(key, v)?,
            "bump_count" => self.bump_count = parse(key, v)?,
            "conv_channels" => {
                let c: Vec<usize> = parse_list(key, v)?;
                self.conv_channels = c
                    .try_into()
                    .map_err(|_| Error::Config("conv_channels needs exactly 3 values".into()))?;
            }
            "kernel_h" => self.kernel_h = parse(key, v)?,
            "kernel_w" => self.kernel_w = parse(key, v)?,
            "fc_hidden" => self.fc_hidden = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr_decay" => self.lr_decay = parse(key, v)?,
            "decay_every" => self.decay_every = parse(key, v)?,
            "max_iterations" => self.max_iterations = parse(key, v)?,
            "target_umspe" => self.target_umspe = parse(key, v)?,
            "stride" => self.stride = parse_auto(key, v)?,
            "pad" => self.pad = parse_auto(key, v)?,
            "augment" => self.augment = parse(key, v)?,
            "translate_range" => self.translate_range = parse_auto(key, v)?,
            "max_rotation_deg" => self.max_rotation_deg = parse(key, v)?,
            "delta_max" => self.delta_max = parse(key, v)?,
            "smooth_weight" => self.smooth_weight = parse_list(key, v)?,
            "smooth_exponent" => self.smooth_exponent = parse(key, v)?,
            "sep_min" => self.sep_min = parse(key, v)?,
            "sep_max" => self.sep_max = parse(key, v)?,
            "cost_sign" => self.cost_sign = parse_list(key, v)?,
            "max_states" => self.max_states = parse(key, v)?,
            "slice" => self.slice = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "x" => self.x.to_string(),
            "y" => self.y.to_string(),
            "z" => self.z.to_string(),
            "n" => self.n.to_string(),
            "lambda" => self.lambda.to_string(),
            "mode" => match self.mode {
                SynthMode::Normal => "normal".into(),
                SynthMode::AmdLike => "amd".into(),
            },
            "noise_sigma" => self.noise_sigma.to_string(),
            "bump_count" => self.bump_count.to_string(),
            "conv_channels" => join(&self.conv_channels),
            "kernel_h" => self.kernel_h.to_string(),
            "kernel_w" => self.kernel_w.to_string(),
            "fc_hidden" => self.fc_hidden.to_string(),
            "lr" => self.lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr_decay" => self.lr_decay.to_string(),
            "decay_every" => self.decay_every.to_string(),
            "max_iterations" => self.max_iterations.to_string(),
            "target_umspe" => self.target_umspe.to_string(),
            "stride" => auto(&self.stride),
            "pad" => auto(&self.pad),
            "augment" => self.augment.to_string(),
            "translate_range" => auto(&self.translate_range),
            "max_rotation_deg" => self.max_rotation_deg.to_string(),
            "delta_max" => self.delta_max.to_string(),
            "smooth_weight" => join(&self.smooth_weight),
            "smooth_exponent" => self.smooth_exponent.to_string(),
            "sep_min" => self.sep_min.to_string(),
            "sep_max" => self.sep_max.to_string(),
            "cost_sign" => join(&self.cost_sign),
            "max_states" => self.max_states.to_string(),
            "slice" => self.slice.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Every key with its resolved value; parses back to an identical config.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            x: self.x,
            y: self.y,
            z: self.z,
            lambda: self.lambda,
            mode: self.mode,
            noise_sigma: self.noise_sigma,
            bump_count: self.bump_count,
            seed: self.seed,
            ..SynthConfig::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            conv_channels: self.conv_channels,
            kernel: (self.kernel_h, self.kernel_w),
            fc_hidden: self.fc_hidden,
            ..ModelConfig::new(self.n, self.z, self.lambda)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr_decay: self.lr_decay,
            decay_every: self.decay_every,
        }
    }

    pub fn train_stop(&self) -> TrainStop {
        TrainStop {
            max_iterations: (self.max_iterations > 0).then_some(self.max_iterations),
            target_umspe: (self.target_umspe > 0.0).then_some(self.target_umspe),
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            patch: PatchConfig {
                n: self.n,
                stride: self.stride.unwrap_or((self.n / 8).max(1)),
                pad: self.pad.unwrap_or(self.n / 4),
            },
            augment: self.augment,
            translate_range: self.translate_range.unwrap_or((self.z / 2) as i64),
            max_rotation_deg: self.max_rotation_deg,
        }
    }

    pub fn dp_config(&self) -> DpConfig {
        DpConfig {
            lambda: self.lambda,
            delta_max: self.delta_max,
            smooth_weight: self.smooth_weight.clone(),
            smooth_exponent: self.smooth_exponent,
            sep_min: self.sep_min,
            sep_max: self.sep_max,
            cost_sign: self.cost_sign.clone(),
            max_states: self.max_states,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_parses_back() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("lr = 0.000123\nmode = amd\nstride = 3\nsmooth_weight = 0.1, 0.30000000000000004\n")
            .unwrap();
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn every_key_round_trips() {
        let cfg = RunConfig::default();
        for k in KEYS {
            let mut other = RunConfig::default();
            other.set(k, &cfg.get(k).unwrap()).unwrap();
            assert_eq!(other, cfg, "{k}");
        }
    }

    #[test]
    fn comments_and_errors() {
        let cfg = RunConfig::from_text("# header\n\nepochs = 3 # trailing\n").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert!(matches!(RunConfig::from_text("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("epochs"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("epochs = many"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("conv_channels = 1,2"), Err(Error::Config(_))));
    }

    #[test]
    fn auto_values() {
        let cfg = RunConfig::default();
        let d = cfg.dataset_config();
        assert_eq!((d.patch.stride, d.patch.pad, d.translate_range), (4, 8, 32));
        let cfg = RunConfig::from_text("stride = auto\npad = 0").unwrap();
        assert_eq!(cfg.stride, None);
        assert_eq!(cfg.pad, Some(0));
    }
}
