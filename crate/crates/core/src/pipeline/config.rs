//! `key = value` configuration files with command-line overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::train::TrainConfig;
use crate::blocks::ChannelMixKind;
use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::stfm::FusionKind;

/// Ordered key/value pairs; a repeated key keeps its last value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    /// Parses lines of `key = value`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            kv.set_pair(line).map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` string.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got {pair:?}")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("empty key in {pair:?}")));
        }
        self.set(k, v.trim());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::Config(format!("bad value {v:?} for {key}"))))
            .transpose()
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v {
                "1" | "true" | "yes" | "on" => Ok(true),
                "0" | "false" | "no" | "off" => Ok(false),
                _ => Err(Error::Config(format!("bad flag {v:?} for {key}"))),
            })
            .transpose()
    }

    fn four(&self, key: &str) -> Result<Option<[usize; 4]>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let parts: Vec<usize> = v
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad list {v:?} for {key}")))?;
        let arr: [usize; 4] = parts.try_into().map_err(|_| Error::Config(format!("{key} needs exactly 4 values, got {v:?}")))?;
        Ok(Some(arr))
    }
}

pub const MODEL_KEYS: &[&str] = &["variant", "dims", "depths", "in_channels", "channel_mix", "fusion"];
pub const TRAIN_KEYS: &[&str] = &[
    "lr",
    "weight_decay",
    "batch_size",
    "epochs",
    "warmup_epochs",
    "grad_clip",
    "lambda",
    "seed",
    "cosine",
    "augment",
    "threshold",
    "max_steps",
];
pub const DATA_KEYS: &[&str] = &["train_dir", "val_dir", "train_samples", "val_samples", "size", "difficulty", "data_seed", "out"];

fn join(xs: [usize; 4]) -> String {
    xs.map(|x| x.to_string()).join(",")
}

pub fn model_from_kv(kv: &KeyValues) -> Result<ModelConfig> {
    let mut cfg = match kv.get("variant") {
        Some(v) => ModelConfig::by_name(v)?,
        None => ModelConfig::nano(),
    };
    if let Some(d) = kv.four("dims")? {
        cfg.dims = d;
    }
    if let Some(d) = kv.four("depths")? {
        cfg.depths = d;
    }
    if let Some(c) = kv.parsed("in_channels")? {
        cfg.in_channels = c;
    }
    if let Some(m) = kv.get("channel_mix") {
        cfg.channel_mix = ChannelMixKind::parse(m)?;
    }
    if let Some(f) = kv.get("fusion") {
        cfg.fusion = FusionKind::parse(f)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn model_to_kv(cfg: &ModelConfig) -> KeyValues {
    let mut kv = KeyValues::default();
    kv.set("variant", cfg.variant.clone());
    kv.set("dims", join(cfg.dims));
    kv.set("depths", join(cfg.depths));
    kv.set("in_channels", cfg.in_channels.to_string());
    kv.set("channel_mix", cfg.channel_mix.name());
    kv.set("fusion", cfg.fusion.name());
    kv
}

/// Overlays any training keys present in `kv` onto `base`.
pub fn train_from_kv(kv: &KeyValues, base: TrainConfig) -> Result<TrainConfig> {
    let mut t = base;
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = kv.parsed(stringify!($field))? {
                t.$field = v;
            }
        };
    }
    take!(lr);
    take!(weight_decay);
    take!(batch_size);
    take!(epochs);
    take!(warmup_epochs);
    take!(grad_clip);
    take!(lambda);
    take!(seed);
    take!(threshold);
    if let Some(v) = kv.flag("cosine")? {
        t.cosine = v;
    }
    if let Some(v) = kv.flag("augment")? {
        t.augment = v;
    }
    if let Some(v) = kv.parsed::<usize>("max_steps")? {
        t.max_steps = (v > 0).then_some(v);
    }
    t.validate()?;
    Ok(t)
}

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Dataset directories; synthetic data is generated when absent.
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub train_samples: usize,
    pub val_samples: usize,
    pub size: usize,
    pub difficulty: u8,
    pub data_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { train_dir: None, val_dir: None, train_samples: 512, val_samples: 64, size: 64, difficulty: 1, data_seed: 0 }
    }
}

/// A complete `train` invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_kv(kv: &KeyValues, base: TrainConfig) -> Result<Self> {
        for k in kv.keys() {
            if !MODEL_KEYS.contains(&k) && !TRAIN_KEYS.contains(&k) && !DATA_KEYS.contains(&k) {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
        }
        let mut data = DataConfig { train_dir: kv.get("train_dir").map(PathBuf::from), val_dir: kv.get("val_dir").map(PathBuf::from), ..DataConfig::default() };
        if let Some(v) = kv.parsed("train_samples")? {
            data.train_samples = v;
        }
        if let Some(v) = kv.parsed("val_samples")? {
            data.val_samples = v;
        }
        if let Some(v) = kv.parsed("size")? {
            data.size = v;
        }
        if let Some(v) = kv.parsed("difficulty")? {
            data.difficulty = v;
        }
        if let Some(v) = kv.parsed("data_seed")? {
            data.data_seed = v;
        }
        Ok(Self { model: model_from_kv(kv)?, train: train_from_kv(kv, base)?, data, out: kv.get("out").map(PathBuf::from) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut kv = KeyValues::parse("# run\nvariant = nano\nlr=0.01 # fast\n\nepochs = 3\n").unwrap();
        kv.set_pair("lr=0.002").unwrap();
        assert_eq!(kv.get("lr"), Some("0.002"));
        let run = RunConfig::from_kv(&kv, TrainConfig::desk()).unwrap();
        assert_eq!(run.train.lr, 0.002);
        assert_eq!(run.train.epochs, 3);
        assert_eq!(run.model, ModelConfig::nano());
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(KeyValues::parse("novalue\n").is_err());
        let kv = KeyValues::parse("colour=red").unwrap();
        assert!(RunConfig::from_kv(&kv, TrainConfig::desk()).is_err());
        let kv = KeyValues::parse("dims=1,2,3").unwrap();
        assert!(model_from_kv(&kv).is_err());
        let kv = KeyValues::parse("lr=-1").unwrap();
        assert!(train_from_kv(&kv, TrainConfig::desk()).is_err());
    }

    #[test]
    fn model_round_trip() {
        let mut cfg = ModelConfig::small();
        cfg.fusion = FusionKind::SiamConc;
        cfg.channel_mix = ChannelMixKind::Mlp;
        let back = model_from_kv(&KeyValues::parse(&model_to_kv(&cfg).render()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
