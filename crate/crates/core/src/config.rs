//! Line-oriented `key = value` configuration text.
//!
//! Blank lines and text after `#` are ignored. Keys are the field names of
//! [`SmmtConfig`], [`TrainConfig`] and [`SyntheticSpec`]; `seed` applies to
//! all three. Lists are comma separated.

use std::path::Path;
use std::str::FromStr;

use crate::dataset::SyntheticSpec;
use crate::encoders::TabularTokens;
use crate::error::{input_err, Result};
use crate::model::{Modality, SmmtConfig};
use crate::training::TrainConfig;

/// A struct that can be read from and written to `key = value` pairs.
pub trait KeyValue {
    /// Applies one pair. Returns `Ok(false)` when the key is not a field.
    fn set_key(&mut self, key: &str, value: &str) -> Result<bool>;
    /// Every field, in a fixed order, formatted so that parsing restores it
    /// exactly.
    fn pairs(&self) -> Vec<(&'static str, String)>;
}

/// Splits text into `(key, value)` pairs.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(input_err!("line {}: expected `key = value`, got {raw:?}", i + 1));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(input_err!("line {}: empty key", i + 1));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn to_text(c: &impl KeyValue) -> String {
    c.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| input_err!("{key}: cannot parse {v:?}"))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(input_err!("{key}: expected a boolean, got {v:?}")),
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// `{:?}` prints the shortest text that parses back to the same f64.
fn float(v: f64) -> String {
    format!("{v:?}")
}

impl KeyValue for SmmtConfig {
    fn set_key(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "d_model" => self.d_model = num(key, v)?,
            "heads" => self.heads = num(key, v)?,
            "cascade_order" => {
                let parts = v.split(',').map(Modality::parse).collect::<Result<Vec<_>>>()?;
                self.cascade_order = parts
                    .try_into()
                    .map_err(|_| input_err!("cascade_order needs exactly three modalities"))?;
            }
            "use_sparse" => self.use_sparse = boolean(key, v)?,
            "use_mask" => self.use_mask = boolean(key, v)?,
            "mask_ratio" => self.mask.ratio = num(key, v)?,
            "mask_seed" => self.mask.seed = num(key, v)?,
            "scaled_logits" => self.flags.scaled_logits = boolean(key, v)?,
            "raw_logits" => self.flags.raw_logits = boolean(key, v)?,
            "classifier_hidden" => self.classifier_hidden = num(key, v)?,
            "image_channels" => self.image_channels = list(key, v)?,
            "numeric_hidden" => {
                self.numeric_hidden = list(key, v)?
                    .try_into()
                    .map_err(|_| input_err!("numeric_hidden needs two widths"))?
            }
            "tabular_tokens" => {
                self.tabular_tokens = match v {
                    "per_feature" => TabularTokens::PerFeature,
                    "single" => TabularTokens::Single,
                    _ => return Err(input_err!("tabular_tokens must be per_feature or single, got {v:?}")),
                }
            }
            "residual" => self.residual = boolean(key, v)?,
            "fused_as_query" => self.fused_as_query = boolean(key, v)?,
            "cascade_repeats" => self.cascade_repeats = num(key, v)?,
            "kmeans_iters" => self.kmeans_iters = num(key, v)?,
            "force_k" => self.force_k = num(key, v)?,
            "seed" => {
                self.seed = num(key, v)?;
                self.mask.seed = self.seed;
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d_model", self.d_model.to_string()),
            ("heads", self.heads.to_string()),
            ("cascade_order", self.cascade_order.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")),
            ("use_sparse", self.use_sparse.to_string()),
            ("use_mask", self.use_mask.to_string()),
            ("mask_ratio", float(self.mask.ratio)),
            ("scaled_logits", self.flags.scaled_logits.to_string()),
            ("raw_logits", self.flags.raw_logits.to_string()),
            ("classifier_hidden", self.classifier_hidden.to_string()),
            ("image_channels", join(&self.image_channels)),
            ("numeric_hidden", join(&self.numeric_hidden)),
            (
                "tabular_tokens",
                match self.tabular_tokens {
                    TabularTokens::PerFeature => "per_feature",
                    TabularTokens::Single => "single",
                }
                .to_string(),
            ),
            ("residual", self.residual.to_string()),
            ("fused_as_query", self.fused_as_query.to_string()),
            ("cascade_repeats", self.cascade_repeats.to_string()),
            ("kmeans_iters", self.kmeans_iters.to_string()),
            ("force_k", self.force_k.to_string()),
            ("seed", self.seed.to_string()),
            // after `seed`, which also sets it
            ("mask_seed", self.mask.seed.to_string()),
        ]
    }
}

impl KeyValue for TrainConfig {
    fn set_key(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "folds" => self.folds = num(key, v)?,
            "runs" => self.runs = num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", float(self.lr)),
            ("seed", self.seed.to_string()),
            ("folds", self.folds.to_string()),
            ("runs", self.runs.to_string()),
        ]
    }
}

impl KeyValue for SyntheticSpec {
    fn set_key(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "n_samples" => self.n_samples = num(key, v)?,
            "class_balance" => self.class_balance = num(key, v)?,
            "snr" => {
                let s: Vec<f64> = list(key, v)?;
                self.snr = match s.as_slice() {
                    [x] => [*x; 3],
                    [a, b, c] => [*a, *b, *c],
                    _ => return Err(input_err!("snr takes one value or three (imaging, numeric, categorical)")),
                };
            }
            "redundancy" => self.redundancy = num(key, v)?,
            "height" => self.height = num(key, v)?,
            "width" => self.width = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_samples", self.n_samples.to_string()),
            ("class_balance", float(self.class_balance)),
            ("snr", self.snr.iter().map(|&s| float(s)).collect::<Vec<_>>().join(",")),
            ("redundancy", float(self.redundancy)),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// Model, training and data settings read together.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: SmmtConfig,
    pub train: TrainConfig,
    pub data: SyntheticSpec,
}

impl RunConfig {
    /// Applies pairs in order. A key no struct recognizes is an error.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            let a = self.model.set_key(k, v)?;
            let b = self.train.set_key(k, v)?;
            let c = self.data.set_key(k, v)?;
            if !(a || b || c) {
                return Err(input_err!("unknown config key {k:?}"));
            }
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply(&parse_lines(text)?)?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn set_seed(&mut self, seed: u64) {
        let s = seed.to_string();
        self.model.set_key("seed", &s).expect("integer");
        self.train.seed = seed;
        self.data.seed = seed;
    }

    /// `seed` is shared, so the text restores the model's seed in all three
    /// structs; the model section comes last so `mask_seed` wins.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# training\n");
        out += &to_text(&self.train);
        out += "# data\n";
        out += &to_text(&self.data);
        out += "# model\n";
        out += &to_text(&self.model);
        out
    }
}
