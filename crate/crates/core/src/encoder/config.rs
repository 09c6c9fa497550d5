use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wiring of attention across the entities of one set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionMode {
    /// Tokens attend only within their own entity.
    #[serde(rename = "nia")]
    Nia,
    /// Other entities are represented by their pooled residual state,
    /// normalised and projected to keys and values.
    #[serde(rename = "sia-hid")]
    SiaHidMean,
    /// Other entities are represented by the mean of their token keys and values.
    #[serde(rename = "sia-kv")]
    SiaKvMean,
    /// Other entities are represented by the key and value of their first token.
    #[serde(rename = "sia-first")]
    SiaFirst,
    /// Tokens attend to every token of the set.
    #[serde(rename = "fia")]
    Fia,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 5] = [
        AttentionMode::Nia,
        AttentionMode::SiaHidMean,
        AttentionMode::SiaKvMean,
        AttentionMode::SiaFirst,
        AttentionMode::Fia,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionMode::Nia => "nia",
            AttentionMode::SiaHidMean => "sia-hid",
            AttentionMode::SiaKvMean => "sia-kv",
            AttentionMode::SiaFirst => "sia-first",
            AttentionMode::Fia => "fia",
        }
    }

    pub fn is_sia(self) -> bool {
        matches!(
            self,
            AttentionMode::SiaHidMean | AttentionMode::SiaKvMean | AttentionMode::SiaFirst
        )
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "nia" => AttentionMode::Nia,
            "sia-hid" | "sia-hid-mean" | "sia" => AttentionMode::SiaHidMean,
            "sia-kv" | "sia-kv-mean" => AttentionMode::SiaKvMean,
            "sia-first" => AttentionMode::SiaFirst,
            "fia" => AttentionMode::Fia,
            _ => return Err(Error::Config(format!("unknown attention mode `{s}`"))),
        };
        Ok(m)
    }
}

impl std::fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture hyperparameters of the set encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub attention_mode: AttentionMode,
    pub rel_pos_buckets: usize,
    pub max_rel_distance: usize,
    /// Maximum number of tokens over all entities of one set.
    pub token_budget: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 64,
            attention_mode: AttentionMode::SiaHidMean,
            rel_pos_buckets: 16,
            max_rel_distance: 32,
            token_budget: 2048,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("token_budget", self.token_budget),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.rel_pos_buckets < 4 || !self.rel_pos_buckets.is_multiple_of(2) {
            return Err(Error::Config("rel_pos_buckets must be even and at least 4".into()));
        }
        if self.max_rel_distance <= self.rel_pos_buckets / 4 {
            return Err(Error::Config(format!(
                "max_rel_distance must exceed {}",
                self.rel_pos_buckets / 4
            )));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}
