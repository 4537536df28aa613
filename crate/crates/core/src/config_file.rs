//! Flat `key = value` configuration files covering model and training
//! settings. `#` starts a comment; unknown or repeated keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::init::InitMode;
use crate::model::{OdVaeConfig, Variant};
use crate::training::TrainConfig;

/// Everything a config file can set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: OdVaeConfig,
    pub train: TrainConfig,
    /// Per-frame twin checkpoint used by tail and average initialization.
    pub init_from: Option<PathBuf>,
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {v:?}"
        ))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key}",
                    lineno + 1
                )));
            }
            seen.push(key.to_string());
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one field. `seed` applies to both weight init and training.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "variant" => m.variant = v.parse::<Variant>()?,
            "base_channels" => m.base_channels = parse_num(key, v)?,
            "channel_multipliers" => m.channel_multipliers = parse_list(key, v)?,
            "res_blocks_per_stage" => m.res_blocks_per_stage = parse_num(key, v)?,
            "latent_channels" => m.latent_channels = parse_num(key, v)?,
            "temporal_down_stages" => m.temporal_down_stages = parse_list(key, v)?,
            "norm_groups" => m.norm_groups = parse_num(key, v)?,
            "mid_attention" => m.mid_attention = parse_bool(key, v)?,
            "seed" => {
                m.seed = parse_num(key, v)?;
                t.seed = m.seed;
            }
            "learning_rate" => t.learning_rate = parse_num(key, v)?,
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "steps" => t.steps = parse_num(key, v)?,
            "kl_weight" => t.kl_weight = parse_num(key, v)?,
            "ema_decay" => t.ema_decay = parse_num(key, v)?,
            "init_mode" => t.init_mode = v.parse::<InitMode>()?,
            "eval_every" => t.eval_every = parse_num(key, v)?,
            "init_from" => self.init_from = Some(PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("writing to a String");
        put("variant", m.variant.to_string());
        put("base_channels", m.base_channels.to_string());
        put("channel_multipliers", list(&m.channel_multipliers));
        put("res_blocks_per_stage", m.res_blocks_per_stage.to_string());
        put("latent_channels", m.latent_channels.to_string());
        put("temporal_down_stages", list(&m.temporal_down_stages));
        put("norm_groups", m.norm_groups.to_string());
        put("mid_attention", m.mid_attention.to_string());
        put("seed", m.seed.to_string());
        put("learning_rate", t.learning_rate.to_string());
        put("batch_size", t.batch_size.to_string());
        put("steps", t.steps.to_string());
        put("kl_weight", t.kl_weight.to_string());
        put("ema_decay", t.ema_decay.to_string());
        put("init_mode", t.init_mode.to_string());
        put("eval_every", t.eval_every.to_string());
        if let Some(p) = &self.init_from {
            put("init_from", p.display().to_string());
        }
        s
    }
}
