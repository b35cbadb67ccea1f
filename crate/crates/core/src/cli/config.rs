//! Flat `key = value` run configuration files.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::Degradation;
use crate::error::{Error, Result};
use crate::losses::{LossConfig, Reduction, DEFAULT_CHARBONNIER_EPS};
use crate::model::{SwinIRConfig, Task, Upsampler};
use crate::trainer::TrainConfig;

struct Key {
    name: &'static str,
    default: &'static str,
    help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

const KEYS: &[Key] = &[
    key("task", "(required)", "sr, denoise or car"),
    key(
        "scale",
        "(required for sr)",
        "upscaling factor 2, 3 or 4; 1 for other tasks",
    ),
    key(
        "sigma",
        "(required for denoise)",
        "noise standard deviation in 0-255 units",
    ),
    key("quality", "(required for car)", "quantization quality factor 1-100"),
    key("blocks", "1", "residual Swin Transformer blocks (K)"),
    key("layers", "2", "Swin layers per block (L)"),
    key("window", "4", "attention window side (M)"),
    key("channels", "16", "feature channels (C)"),
    key("heads", "2", "attention heads"),
    key("mlp_ratio", "2", "MLP hidden width over C"),
    key("in_channels", "1", "image channels, 1 or 3"),
    key("out_channels", "in_channels", "output channels"),
    key(
        "upsampler",
        "pixelshuffledirect",
        "sr head: pixelshuffle or pixelshuffledirect",
    ),
    key("num_feat", "16", "feature width before pixelshuffle"),
    key("block_residual", "true", "skip connection around each block"),
    key("iterations", "2000", "optimizer steps"),
    key("batch_size", "8", "patches per step"),
    key("patch_size", "24", "LQ patch side"),
    key("lr", "2e-4", "initial learning rate"),
    key("beta1", "0.9", "Adam first-moment decay"),
    key("beta2", "0.999", "Adam second-moment decay"),
    key("eps", "1e-8", "Adam denominator epsilon"),
    key("weight_decay", "0", "L2 penalty added to gradients"),
    key("milestones", "0.5,0.75,0.9", "fractions of iterations where lr decays"),
    key("lr_decay", "0.5", "factor applied at each milestone"),
    key("val_every", "100", "steps between validations"),
    key("seed", "(random, printed)", "seed for init, sampling and noise"),
    key("loss", "l1 for sr, else charbonnier", "l1 or charbonnier"),
    key("charbonnier_eps", "1e-3", "Charbonnier epsilon"),
];

/// Help text listing every key with its default.
pub fn keys_help() -> String {
    let width = KEYS.iter().map(|k| k.name.len()).max().unwrap_or(0);
    let dwidth = KEYS.iter().map(|k| k.default.len()).max().unwrap_or(0);
    let mut s = String::from("Config file keys (`key = value`, `#` starts a comment):\n");
    for k in KEYS {
        s.push_str(&format!("  {:<width$}  {:<dwidth$}  {}\n", k.name, k.default, k.help));
    }
    s
}

/// Model, optimization and degradation settings from one file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: SwinIRConfig,
    pub train: TrainConfig,
    pub degradation: Degradation,
    /// `None` when the file has no `seed` key.
    pub seed: Option<u64>,
}

struct Entries {
    map: BTreeMap<&'static str, (String, usize)>,
}

impl Entries {
    fn raw(&self, name: &str) -> Option<(&str, usize)> {
        self.map.get(name).map(|(v, l)| (v.as_str(), *l))
    }

    fn parse<V: std::str::FromStr>(&self, name: &str) -> Result<Option<V>> {
        match self.raw(name) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {line}: invalid value '{v}' for key '{name}'"))),
        }
    }

    fn or<V: std::str::FromStr>(&self, name: &str, default: V) -> Result<V> {
        Ok(self.parse(name)?.unwrap_or(default))
    }

    fn required<V: std::str::FromStr>(&self, name: &str, why: &str) -> Result<V> {
        self.parse(name)?
            .ok_or_else(|| Error::Config(format!("missing required key '{name}' ({why})")))
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn tokenize(text: &str) -> Result<Entries> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`, got '{content}'")))?;
        let (k, v) = (k.trim(), v.trim());
        let spec = KEYS
            .iter()
            .find(|s| s.name == k)
            .ok_or_else(|| Error::Config(format!("line {line}: unknown key '{k}'")))?;
        if v.is_empty() {
            return Err(Error::Config(format!("line {line}: key '{k}' has no value")));
        }
        if let Some((_, first)) = map.insert(spec.name, (v.to_string(), line)) {
            return Err(Error::Config(format!(
                "line {line}: key '{k}' already set on line {first}"
            )));
        }
    }
    Ok(Entries { map })
}

/// Parses and validates a configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let e = tokenize(text)?;
    let task: Task = e.required("task", "sr, denoise or car")?;
    let scale = match task {
        Task::Sr => e.required("scale", "needed for task sr")?,
        _ => e.or("scale", 1usize)?,
    };
    let degradation = match task {
        Task::Sr => Degradation::Bicubic { scale },
        Task::Denoise => Degradation::GaussianNoise {
            sigma: e.required("sigma", "needed for task denoise")?,
            clip: true,
        },
        Task::Car => Degradation::DctQuantize {
            quality: e.required("quality", "needed for task car")?,
        },
    };
    let in_channels = e.or("in_channels", 1usize)?;
    let block_residual = match e.raw("block_residual") {
        None => true,
        Some((v, line)) => parse_bool(v)
            .ok_or_else(|| Error::Config(format!("line {line}: invalid value '{v}' for key 'block_residual'")))?,
    };
    let model = SwinIRConfig {
        num_blocks: e.or("blocks", 1)?,
        layers_per_block: e.or("layers", 2)?,
        window: e.or("window", 4)?,
        channels: e.or("channels", 16)?,
        heads: e.or("heads", 2)?,
        mlp_ratio: e.or("mlp_ratio", 2)?,
        task,
        scale,
        in_channels,
        out_channels: e.or("out_channels", in_channels)?,
        upsampler: e.or("upsampler", Upsampler::PixelShuffleDirect)?,
        num_feat: e.or("num_feat", 16)?,
        block_residual,
    };
    model.validate()?;

    let defaults = TrainConfig::default();
    let milestones = match e.raw("milestones") {
        None => defaults.milestones.clone(),
        Some((v, line)) => v
            .split(',')
            .map(|m| m.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("line {line}: invalid value '{v}' for key 'milestones'")))?,
    };
    let charbonnier_eps: f64 = e.or("charbonnier_eps", DEFAULT_CHARBONNIER_EPS)?;
    let loss = match e.raw("loss") {
        None => None,
        Some(("l1", _)) => Some(LossConfig::L1),
        Some(("charbonnier", _)) => Some(LossConfig::Charbonnier {
            eps: charbonnier_eps,
            reduction: Reduction::PerElement,
        }),
        Some((v, line)) => {
            return Err(Error::Config(format!(
                "line {line}: invalid value '{v}' for key 'loss' (expected l1 or charbonnier)"
            )))
        }
    };
    let seed = e.parse("seed")?;
    let train = TrainConfig {
        iterations: e.or("iterations", defaults.iterations)?,
        batch_size: e.or("batch_size", defaults.batch_size)?,
        patch_size: e.or("patch_size", defaults.patch_size)?,
        lr: e.or("lr", defaults.lr)?,
        beta1: e.or("beta1", defaults.beta1)?,
        beta2: e.or("beta2", defaults.beta2)?,
        eps: e.or("eps", defaults.eps)?,
        weight_decay: e.or("weight_decay", defaults.weight_decay)?,
        milestones,
        lr_decay: e.or("lr_decay", defaults.lr_decay)?,
        val_every: e.or("val_every", defaults.val_every)?,
        seed: seed.unwrap_or(0),
        loss,
    };
    train.validate()?;
    crate::data::DegradationSpec {
        kind: degradation,
        seed: 0,
    }
    .validate()
    .map_err(|err| Error::Config(err.to_string()))?;
    Ok(RunConfig {
        model,
        train,
        degradation,
        seed,
    })
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}
