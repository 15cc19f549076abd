//! Experiment configuration with flat dotted keys.
//!
//! Files are TOML; nested tables and dotted keys are equivalent, so
//! `channel.sr.distance_m = 50` and `[channel.sr] distance_m = 50` set the
//! same field. Overrides use `key=value` with a TOML literal value.

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::channel::LinkParams;
use crate::codec::ArchConfig;
use crate::error::{Error, Result};
use crate::pipeline::RelayLinks;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchScale {
    Full,
    Desk,
    Tiny,
}

impl ArchScale {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "desk" => Ok(Self::Desk),
            "tiny" => Ok(Self::Tiny),
            _ => Err(Error::Config(format!("arch.scale must be full, desk or tiny, got {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Desk => "desk",
            Self::Tiny => "tiny",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HopConfig {
    pub distance_m: f64,
    pub noise_dbm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    pub scale: ArchScale,
    /// Overrides the scale's image size when set.
    pub image_height: Option<usize>,
    pub image_width: Option<usize>,
    pub n_images: usize,
    pub gamma_p: f64,
    pub path_loss: f64,
    pub power_dbm: f64,
    pub sr: HopConfig,
    pub rd: HopConfig,
    pub v1: f64,
    pub v2: f64,
    pub seed: u64,
    pub trials: usize,
    pub grid: usize,
    pub train: TrainConfig,
    pub checkpoint: PathBuf,
    pub data_dir: Option<PathBuf>,
    /// Synthetic groups used when no data directory is given.
    pub synthetic_groups: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            scale: ArchScale::Desk,
            image_height: None,
            image_width: None,
            n_images: 2,
            gamma_p: 0.5,
            path_loss: 3.0,
            power_dbm: 30.0,
            sr: HopConfig { distance_m: 50.0, noise_dbm: -80.0 },
            rd: HopConfig { distance_m: 50.0, noise_dbm: -80.0 },
            v1: 0.0,
            v2: 0.0,
            seed: 0,
            trials: 20,
            grid: 10,
            train: TrainConfig { epochs: 20, ..TrainConfig::default() },
            checkpoint: PathBuf::from("model.semrelay"),
            data_dir: None,
            synthetic_groups: 16,
        }
    }
}

/// Every accepted key, in the order used by [`SystemConfig::to_toml`].
pub const KEYS: &[&str] = &[
    "arch.scale",
    "arch.image_height",
    "arch.image_width",
    "system.n_images",
    "system.gamma_p",
    "channel.path_loss",
    "channel.power_dbm",
    "channel.sr.distance_m",
    "channel.sr.noise_dbm",
    "channel.rd.distance_m",
    "channel.rd.noise_dbm",
    "run.v1",
    "run.v2",
    "run.seed",
    "run.trials",
    "optimize.grid",
    "train.lambda",
    "train.eta",
    "train.learning_rate",
    "train.epochs",
    "train.seed",
    "train.distance_m",
    "train.path_loss",
    "train.power_dbm",
    "train.noise_dbm",
    "paths.checkpoint",
    "paths.data_dir",
    "data.synthetic_groups",
];

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("{key} expects a number, got {v}"))),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(Error::Config(format!("{key} expects a non-negative integer, got {v}"))),
    }
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::Config(format!("{key} expects a string, got {v}")))
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            _ => out.push((key, v.clone())),
        }
    }
}

impl SystemConfig {
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        match key {
            "arch.scale" => self.scale = ArchScale::parse(as_str(key, v)?)?,
            "arch.image_height" => self.image_height = Some(as_usize(key, v)?),
            "arch.image_width" => self.image_width = Some(as_usize(key, v)?),
            "system.n_images" => self.n_images = as_usize(key, v)?,
            "system.gamma_p" => self.gamma_p = as_f64(key, v)?,
            "channel.path_loss" => self.path_loss = as_f64(key, v)?,
            "channel.power_dbm" => self.power_dbm = as_f64(key, v)?,
            "channel.sr.distance_m" => self.sr.distance_m = as_f64(key, v)?,
            "channel.sr.noise_dbm" => self.sr.noise_dbm = as_f64(key, v)?,
            "channel.rd.distance_m" => self.rd.distance_m = as_f64(key, v)?,
            "channel.rd.noise_dbm" => self.rd.noise_dbm = as_f64(key, v)?,
            "run.v1" => self.v1 = as_f64(key, v)?,
            "run.v2" => self.v2 = as_f64(key, v)?,
            "run.seed" => self.seed = as_usize(key, v)? as u64,
            "run.trials" => self.trials = as_usize(key, v)?,
            "optimize.grid" => self.grid = as_usize(key, v)?,
            "train.lambda" => self.train.lambda = as_f64(key, v)?,
            "train.eta" => {
                self.train.eta = match v.as_str() {
                    Some("auto") => None,
                    _ => Some(as_f64(key, v)?),
                }
            }
            "train.learning_rate" => self.train.learning_rate = as_f64(key, v)?,
            "train.epochs" => self.train.epochs = as_usize(key, v)?,
            "train.seed" => self.train.seed = as_usize(key, v)? as u64,
            "train.distance_m" => self.train.distance_m = as_f64(key, v)?,
            "train.path_loss" => self.train.path_loss = as_f64(key, v)?,
            "train.power_dbm" => self.train.power_dbm = as_f64(key, v)?,
            "train.noise_dbm" => self.train.noise_dbm = as_f64(key, v)?,
            "paths.checkpoint" => self.checkpoint = PathBuf::from(as_str(key, v)?),
            "paths.data_dir" => {
                let s = as_str(key, v)?;
                self.data_dir = (!s.is_empty()).then(|| PathBuf::from(s));
            }
            "data.synthetic_groups" => self.synthetic_groups = as_usize(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        let mut pairs = Vec::new();
        flatten("", &table, &mut pairs);
        let mut cfg = Self::default();
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Applies `key=value`. The value is read as a TOML literal, falling back
    /// to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(key, &value)
    }

    pub fn arch(&self) -> ArchConfig {
        let mut a = match self.scale {
            ArchScale::Full => ArchConfig::full_scale(),
            ArchScale::Desk => ArchConfig::desk(),
            ArchScale::Tiny => ArchConfig::tiny(),
        };
        a.image_height = self.image_height.unwrap_or(a.image_height);
        a.image_width = self.image_width.unwrap_or(a.image_width);
        a.n_images = self.n_images;
        a.gamma_p = self.gamma_p;
        a
    }

    pub fn links_at(&self, power_dbm: f64) -> Result<RelayLinks> {
        Ok(RelayLinks {
            source_relay: LinkParams::from_dbm(self.sr.distance_m, self.path_loss, self.sr.noise_dbm, power_dbm)?,
            relay_destination: LinkParams::from_dbm(self.rd.distance_m, self.path_loss, self.rd.noise_dbm, power_dbm)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.arch().validate()?;
        let cfg = |e: Error| Error::Config(e.to_string());
        self.links_at(self.power_dbm).map_err(cfg)?;
        if !(0.0..1.0).contains(&self.v1) || !(0.0..1.0).contains(&self.v2) {
            return Err(Error::Config(format!("v1 = {} and v2 = {} must lie in [0, 1)", self.v1, self.v2)));
        }
        if self.trials == 0 || self.grid == 0 {
            return Err(Error::Config("run.trials and optimize.grid must be at least 1".into()));
        }
        if self.data_dir.is_none() && self.synthetic_groups == 0 {
            return Err(Error::Config("data.synthetic_groups must be at least 1 without a data directory".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    /// Flat `key = value` listing of the effective configuration.
    pub fn to_toml(&self) -> String {
        let a = self.arch();
        let eta = self.train.eta.map_or_else(|| "\"auto\"".to_string(), |e| format!("{e:e}"));
        let dir = self.data_dir.as_ref().map_or(String::new(), |d| d.display().to_string());
        let vals: Vec<String> = vec![
            format!("{:?}", self.scale.name()),
            a.image_height.to_string(),
            a.image_width.to_string(),
            self.n_images.to_string(),
            format!("{:?}", self.gamma_p),
            format!("{:?}", self.path_loss),
            format!("{:?}", self.power_dbm),
            format!("{:?}", self.sr.distance_m),
            format!("{:?}", self.sr.noise_dbm),
            format!("{:?}", self.rd.distance_m),
            format!("{:?}", self.rd.noise_dbm),
            format!("{:?}", self.v1),
            format!("{:?}", self.v2),
            self.seed.to_string(),
            self.trials.to_string(),
            self.grid.to_string(),
            format!("{:?}", self.train.lambda),
            eta,
            format!("{:?}", self.train.learning_rate),
            self.train.epochs.to_string(),
            self.train.seed.to_string(),
            format!("{:?}", self.train.distance_m),
            format!("{:?}", self.train.path_loss),
            format!("{:?}", self.train.power_dbm),
            format!("{:?}", self.train.noise_dbm),
            format!("{:?}", self.checkpoint.display().to_string()),
            format!("{dir:?}"),
            self.synthetic_groups.to_string(),
        ];
        KEYS.iter().zip(vals).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = SystemConfig::default();
        c.validate().unwrap();
        assert_eq!(c.arch(), ArchConfig::desk());
    }

    #[test]
    fn nested_and_dotted_keys_agree() {
        let a = SystemConfig::from_toml_str("channel.sr.distance_m = 20\nrun.v1 = 0.3\n").unwrap();
        let b = SystemConfig::from_toml_str("[channel.sr]\ndistance_m = 20.0\n[run]\nv1 = 0.3\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sr.distance_m, 20.0);
    }

    #[test]
    fn overrides_and_errors() {
        let mut c = SystemConfig::default();
        c.apply_override("arch.scale=tiny").unwrap();
        c.apply_override("train.eta = auto").unwrap();
        c.apply_override("paths.checkpoint=/tmp/x.bin").unwrap();
        c.apply_override("run.seed=42").unwrap();
        assert_eq!(c.scale, ArchScale::Tiny);
        assert_eq!(c.seed, 42);
        assert_eq!(c.checkpoint, PathBuf::from("/tmp/x.bin"));
        assert!(matches!(c.apply_override("nope=1"), Err(Error::Config(_))));
        assert!(matches!(c.apply_override("run.v1"), Err(Error::Config(_))));
        assert!(matches!(c.apply_override("run.trials=-1"), Err(Error::Config(_))));
        c.apply_override("run.v1=1.5").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(SystemConfig::from_toml_str("arch.image_height = 30").unwrap().validate().is_err());
    }

    #[test]
    fn listing_roundtrips() {
        let mut c = SystemConfig::default();
        c.apply_override("train.eta=1e-3").unwrap();
        c.apply_override("paths.data_dir=\"imgs\"").unwrap();
        let back = SystemConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back.arch(), c.arch());
        assert_eq!(back.train, c.train);
        assert_eq!(back.data_dir, c.data_dir);
        assert_eq!(back.sr, c.sr);
    }
}
