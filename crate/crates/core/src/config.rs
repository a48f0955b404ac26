//! Pipeline settings and their TOML override file.
//!
//! ```toml
//! k = 1.0
//! pause_steps = 16
//!
//! [merge]      # pitch -> class; -1 removes the pitch
//! "81" = 13
//!
//! [[genres]]   # replaces the whole keyword table, in priority order
//! label = "punk"
//! keywords = ["punk"]
//! ```

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use crate::pattern::{GenreRule, GenreTable, MergeTable};

pub const DEFAULT_ENTROPY_THRESHOLD: f64 = 1.0;
pub const DEFAULT_PAUSE_STEPS: usize = 16;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid merge table: {0}")]
    Merge(String),
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub merge: MergeTable,
    pub genres: GenreTable,
    /// Entropy gate `k`; patterns need strictly more bits than this.
    pub entropy_threshold: f64,
    /// Silent steps that split a track into chunks.
    pub pause_steps: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            merge: MergeTable::default(),
            genres: GenreTable::default(),
            entropy_threshold: DEFAULT_ENTROPY_THRESHOLD,
            pause_steps: DEFAULT_PAUSE_STEPS,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    k: Option<f64>,
    pause_steps: Option<usize>,
    #[serde(default)]
    merge: BTreeMap<String, i64>,
    genres: Option<Vec<RawGenre>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenre {
    label: String,
    keywords: Vec<String>,
}

impl PipelineConfig {
    pub fn with_entropy_threshold(mut self, k: f64) -> Self {
        self.entropy_threshold = k;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let mut config = Self::default();
        if let Some(k) = raw.k {
            if !k.is_finite() || k < 0.0 {
                return Err(ConfigError::Invalid(format!("k must be a non-negative number, got {k}")));
            }
            config.entropy_threshold = k;
        }
        if let Some(p) = raw.pause_steps {
            if p == 0 {
                return Err(ConfigError::Invalid("pause_steps must be positive".into()));
            }
            config.pause_steps = p;
        }
        let mut overrides = BTreeMap::new();
        for (pitch, class) in raw.merge {
            let pitch: u8 = pitch.trim().parse().map_err(|_| ConfigError::Merge(format!("bad pitch key {pitch:?}")))?;
            let class = match class {
                -1 => None,
                c => Some(u8::try_from(c).map_err(|_| ConfigError::Merge(format!("bad class {c}")))?),
            };
            overrides.insert(pitch, class);
        }
        config.merge = config.merge.with_overrides(&overrides).map_err(ConfigError::Merge)?;
        if let Some(genres) = raw.genres {
            config.genres = GenreTable {
                rules: genres.into_iter().map(|g| GenreRule { label: g.label, keywords: g.keywords }).collect(),
            };
        }
        Ok(config)
    }
}
