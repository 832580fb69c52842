use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activation_sort::LabelScheme;
use crate::egat::Activations;
use crate::error::{Error, Result};
use crate::heads::{LossWeights, SORT_MARGIN};

/// What layer `l >= 2` reads from the previous layer's predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bridge {
    /// Activation Sort: rank labels of the detached predictions.
    #[default]
    Sort,
    /// Ablation: `tanh` of the live predictions, one scalar per clause.
    Tanh,
}

impl FromStr for Bridge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sort" => Ok(Bridge::Sort),
            "tanh" => Ok(Bridge::Tanh),
            other => Err(Error::config(format!(
                "bridge must be sort or tanh, got {other:?}"
            ))),
        }
    }
}

/// Every tunable of the model and the optimiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    /// Width of the sort position embedding; `None` means `hidden_size`.
    pub rank_embed_dim: Option<usize>,
    pub label_scheme: LabelScheme,
    pub bridge: Bridge,
    /// Project the integer ranks directly instead of embedding them.
    pub rank_raw_scalar: bool,
    /// Layers `l >= 2` aggregate `h^(l-1)` instead of the clause embeddings.
    pub feed_previous_h: bool,
    /// Largest document length the rank embedding table covers.
    pub max_doc_len: usize,
    pub leaky_slope: f64,
    pub elu_alpha: f64,
    pub epsilon: f64,
    pub loss_weights: LossWeights,
    pub paper_literal_bce: bool,
    pub sort_margin: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Rescale the summed batch gradient to at most this global L2 norm; 0 disables.
    pub grad_clip: f64,
    pub steps: usize,
    /// Documents per optimiser step; 0 means the whole corpus.
    pub batch_size: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Debug only: make `stop_gradient` the identity.
    pub disable_stop_gradient: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let act = Activations::default();
        ModelConfig {
            num_layers: 2,
            hidden_size: 64,
            rank_embed_dim: None,
            label_scheme: LabelScheme::Log2,
            bridge: Bridge::Sort,
            rank_raw_scalar: false,
            feed_previous_h: false,
            max_doc_len: 64,
            leaky_slope: act.leaky_slope,
            elu_alpha: act.elu_alpha,
            epsilon: act.epsilon,
            loss_weights: LossWeights::default(),
            paper_literal_bce: false,
            sort_margin: SORT_MARGIN,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            grad_clip: 1.0,
            steps: 500,
            batch_size: 0,
            seed: 0,
            threshold: 0.5,
            disable_stop_gradient: false,
        }
    }
}

/// Keys accepted by [`ModelConfig::set`], in the order `to_kv_text` writes them.
pub const CONFIG_KEYS: &[&str] = &[
    "num_layers",
    "hidden_size",
    "rank_embed_dim",
    "label_scheme",
    "bridge",
    "rank_raw_scalar",
    "feed_previous_h",
    "max_doc_len",
    "leaky_slope",
    "elu_alpha",
    "epsilon",
    "loss_weights.e",
    "loss_weights.c",
    "loss_weights.pair",
    "loss_weights.sort",
    "paper_literal_bce",
    "sort_margin",
    "learning_rate",
    "weight_decay",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "grad_clip",
    "steps",
    "batch_size",
    "seed",
    "threshold",
    "disable_stop_gradient",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

impl ModelConfig {
    pub fn activations(&self) -> Activations {
        Activations {
            leaky_slope: self.leaky_slope,
            elu_alpha: self.elu_alpha,
            epsilon: self.epsilon,
        }
    }

    pub fn rank_dim(&self) -> usize {
        self.rank_embed_dim.unwrap_or(self.hidden_size)
    }

    /// Input width of the attention score vectors of layers `l >= 2`.
    pub fn bridge_dim(&self) -> usize {
        match (self.bridge, self.rank_raw_scalar) {
            (Bridge::Sort, false) => self.rank_dim(),
            _ => 1,
        }
    }

    /// Whether the model owns a rank embedding table.
    pub fn uses_rank_embedding(&self) -> bool {
        self.num_layers >= 2 && self.bridge == Bridge::Sort && !self.rank_raw_scalar
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::config("num_layers must be at least 1"));
        }
        if self.hidden_size == 0 || self.rank_dim() == 0 || self.max_doc_len == 0 {
            return Err(Error::config("dimensions must be positive"));
        }
        self.loss_weights.validate()?;
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return Err(Error::config("learning_rate must be non-negative"));
        }
        if self.grad_clip.is_nan() || self.grad_clip < 0.0 {
            return Err(Error::config("grad_clip must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::config("epsilon must be non-negative"));
        }
        Ok(())
    }

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "num_layers" => self.num_layers = parse(key, value)?,
            "hidden_size" => self.hidden_size = parse(key, value)?,
            "rank_embed_dim" => {
                self.rank_embed_dim = match value {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "label_scheme" => self.label_scheme = value.parse()?,
            "bridge" => self.bridge = value.parse()?,
            "rank_raw_scalar" => self.rank_raw_scalar = parse(key, value)?,
            "feed_previous_h" => self.feed_previous_h = parse(key, value)?,
            "max_doc_len" => self.max_doc_len = parse(key, value)?,
            "leaky_slope" => self.leaky_slope = parse(key, value)?,
            "elu_alpha" => self.elu_alpha = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "loss_weights.e" => self.loss_weights.e = parse(key, value)?,
            "loss_weights.c" => self.loss_weights.c = parse(key, value)?,
            "loss_weights.pair" => self.loss_weights.pair = parse(key, value)?,
            "loss_weights.sort" => self.loss_weights.sort = parse(key, value)?,
            "paper_literal_bce" => self.paper_literal_bce = parse(key, value)?,
            "sort_margin" => self.sort_margin = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_epsilon" => self.adam_epsilon = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "disable_stop_gradient" => self.disable_stop_gradient = parse(key, value)?,
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` file on top of the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        cfg.apply_kv_text(text)?;
        Ok(cfg)
    }

    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(key.trim(), value).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// The config in the same flat format `from_kv_text` reads.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        for &key in CONFIG_KEYS {
            let value = match key {
                "num_layers" => self.num_layers.to_string(),
                "hidden_size" => self.hidden_size.to_string(),
                "rank_embed_dim" => self
                    .rank_embed_dim
                    .map_or_else(|| "auto".to_string(), |d| d.to_string()),
                "label_scheme" => self.label_scheme.to_string(),
                "bridge" => match self.bridge {
                    Bridge::Sort => "sort".into(),
                    Bridge::Tanh => "tanh".into(),
                },
                "rank_raw_scalar" => self.rank_raw_scalar.to_string(),
                "feed_previous_h" => self.feed_previous_h.to_string(),
                "max_doc_len" => self.max_doc_len.to_string(),
                "leaky_slope" => self.leaky_slope.to_string(),
                "elu_alpha" => self.elu_alpha.to_string(),
                "epsilon" => self.epsilon.to_string(),
                "loss_weights.e" => self.loss_weights.e.to_string(),
                "loss_weights.c" => self.loss_weights.c.to_string(),
                "loss_weights.pair" => self.loss_weights.pair.to_string(),
                "loss_weights.sort" => self.loss_weights.sort.to_string(),
                "paper_literal_bce" => self.paper_literal_bce.to_string(),
                "sort_margin" => self.sort_margin.to_string(),
                "learning_rate" => self.learning_rate.to_string(),
                "weight_decay" => self.weight_decay.to_string(),
                "adam_beta1" => self.adam_beta1.to_string(),
                "adam_beta2" => self.adam_beta2.to_string(),
                "adam_epsilon" => self.adam_epsilon.to_string(),
                "grad_clip" => self.grad_clip.to_string(),
                "steps" => self.steps.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "seed" => self.seed.to_string(),
                "threshold" => self.threshold.to_string(),
                "disable_stop_gradient" => self.disable_stop_gradient.to_string(),
                _ => unreachable!("CONFIG_KEYS and to_kv_text out of sync"),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut cfg = ModelConfig {
            num_layers: 3,
            label_scheme: LabelScheme::Linear,
            bridge: Bridge::Tanh,
            rank_embed_dim: Some(8),
            learning_rate: 0.0125,
            ..Default::default()
        };
        cfg.loss_weights.sort = 0.0;
        let back = ModelConfig::from_kv_text(&cfg.to_kv_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn kv_errors_carry_line_numbers() {
        let err = ModelConfig::from_kv_text("# c\nnum_layers = 2\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().starts_with("line 3"), "{err}");
        assert!(ModelConfig::from_kv_text("hidden_size 4").is_err());
        assert!(ModelConfig::from_kv_text("label_scheme = cubic").is_err());
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let cfg = ModelConfig {
            num_layers: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::default();
        cfg.loss_weights.pair = -0.5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
