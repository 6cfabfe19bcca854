//! Engine configuration and its flat `key = value` text form.
//!
//! ```text
//! # comment
//! k = 256
//! threshold_policy.mode = fixed
//! threshold_policy.delta = 0.2
//! global.pinned = none
//! ```
//!
//! Environment overrides use [`ENV_PREFIX`] followed by the key upper-cased with
//! dots replaced by underscores, e.g. `HSGM_THRESHOLD_POLICY_DELTA=0.3`.

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbedderKind, EmbedderSpec};
use crate::error::{Error, Result};
use crate::local_graph::{ThresholdPolicy, DEFAULT_ALPHA, DEFAULT_BETA};
use crate::memory::{AggregatorConfig, GlobalThresholdConfig};
use crate::query::{Activation, GcnConfig, DEFAULT_TOP_K};

pub const DEFAULT_SEGMENT_SIZE: usize = 256;
pub const DEFAULT_ORACLE_CAP: usize = 20_000;
pub const ENV_PREFIX: &str = "HSGM_";

const DEFAULT_FIXED_DELTA: f64 = 0.2;
const DEFAULT_SERVICE_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub embedder: EmbedderSpec,
    /// Segment size.
    pub k: usize,
    pub threshold_policy: ThresholdPolicy,
    pub global: GlobalThresholdConfig,
    pub top_k: usize,
    pub gcn: GcnConfig,
    pub aggregator: AggregatorConfig,
    pub seed: u64,
    /// Largest document the dense oracle will materialize.
    pub oracle_cap: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            embedder: EmbedderSpec::default(),
            k: DEFAULT_SEGMENT_SIZE,
            threshold_policy: ThresholdPolicy::default(),
            global: GlobalThresholdConfig::default(),
            top_k: DEFAULT_TOP_K,
            gcn: GcnConfig::default(),
            aggregator: AggregatorConfig::default(),
            seed: 0,
            oracle_cap: DEFAULT_ORACLE_CAP,
        }
    }
}

/// Every key accepted by the text format, in canonical order.
pub const CONFIG_KEYS: &[&str] = &[
    "embedder.kind",
    "embedder.dimension",
    "embedder.seed",
    "embedder.endpoint",
    "embedder.model",
    "embedder.timeout_ms",
    "k",
    "threshold_policy.mode",
    "threshold_policy.alpha",
    "threshold_policy.beta",
    "threshold_policy.delta",
    "global.percentile",
    "global.margin",
    "global.fallback",
    "global.pinned",
    "global.recompute_on_append",
    "top_k",
    "gcn.layers",
    "gcn.activation",
    "gcn.identity_mode",
    "aggregator.hidden",
    "aggregator.identity_mode",
    "seed",
    "oracle_cap",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

/// Variant-independent view of the enum-shaped fields, so a mode switch can be
/// given before or after the parameters it uses.
struct Draft {
    embedder_kind: String,
    endpoint: String,
    model: String,
    timeout_ms: u64,
    mode: String,
    alpha: f64,
    beta: f64,
    delta: f64,
}

impl Draft {
    fn of(config: &EngineConfig) -> Self {
        let (embedder_kind, endpoint, model, timeout_ms) = match &config.embedder.kind {
            EmbedderKind::DeterministicHash => (
                "deterministic-hash".to_string(),
                String::new(),
                "default".to_string(),
                DEFAULT_SERVICE_TIMEOUT_MS,
            ),
            EmbedderKind::ExternalService {
                endpoint,
                model,
                timeout_ms,
            } => ("external-service".to_string(), endpoint.clone(), model.clone(), *timeout_ms),
        };
        let (mode, alpha, beta, delta) = match config.threshold_policy {
            ThresholdPolicy::Adaptive { alpha, beta } => ("adaptive", alpha, beta, DEFAULT_FIXED_DELTA),
            ThresholdPolicy::Fixed { delta } => ("fixed", DEFAULT_ALPHA, DEFAULT_BETA, delta),
        };
        Draft {
            embedder_kind,
            endpoint,
            model,
            timeout_ms,
            mode: mode.to_string(),
            alpha,
            beta,
            delta,
        }
    }

    fn finish(self, config: &mut EngineConfig) -> Result<()> {
        config.embedder.kind = match self.embedder_kind.as_str() {
            "deterministic-hash" => EmbedderKind::DeterministicHash,
            "external-service" => EmbedderKind::ExternalService {
                endpoint: self.endpoint,
                model: self.model,
                timeout_ms: self.timeout_ms,
            },
            other => return Err(Error::InvalidConfig(format!("embedder.kind: unknown kind {other:?}"))),
        };
        config.threshold_policy = match self.mode.as_str() {
            "adaptive" => ThresholdPolicy::Adaptive {
                alpha: self.alpha,
                beta: self.beta,
            },
            "fixed" => ThresholdPolicy::Fixed { delta: self.delta },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "threshold_policy.mode: unknown mode {other:?}"
                )))
            }
        };
        Ok(())
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        if self.k == 0 {
            return Err(Error::InvalidConfig("segment size k must be >= 1".into()));
        }
        self.threshold_policy.validate()?;
        let g = &self.global;
        if !(0.0..=100.0).contains(&g.percentile) {
            return Err(Error::InvalidConfig(format!(
                "global.percentile must lie in [0, 100], got {}",
                g.percentile
            )));
        }
        if !g.margin.is_finite() || !g.fallback.is_finite() || g.pinned.is_some_and(f64::is_nan) {
            return Err(Error::InvalidConfig("global threshold values must be finite".into()));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be >= 1".into()));
        }
        if self.aggregator.hidden == 0 {
            return Err(Error::InvalidConfig("aggregator.hidden must be >= 1".into()));
        }
        Ok(())
    }

    /// Applies `key = value` pairs in order. Unknown keys are errors.
    pub fn apply<K: AsRef<str>, V: AsRef<str>>(&mut self, pairs: &[(K, V)]) -> Result<()> {
        let mut draft = Draft::of(self);
        for (key, value) in pairs {
            let (key, value) = (key.as_ref().trim(), value.as_ref().trim());
            match key {
                "embedder.kind" => draft.embedder_kind = value.to_string(),
                "embedder.dimension" => self.embedder.dimension = parse(key, value)?,
                "embedder.seed" => self.embedder.seed = parse(key, value)?,
                "embedder.endpoint" => draft.endpoint = value.to_string(),
                "embedder.model" => draft.model = value.to_string(),
                "embedder.timeout_ms" => draft.timeout_ms = parse(key, value)?,
                "k" => self.k = parse(key, value)?,
                "threshold_policy.mode" => draft.mode = value.to_string(),
                "threshold_policy.alpha" => draft.alpha = parse(key, value)?,
                "threshold_policy.beta" => draft.beta = parse(key, value)?,
                "threshold_policy.delta" => draft.delta = parse(key, value)?,
                "global.percentile" => self.global.percentile = parse(key, value)?,
                "global.margin" => self.global.margin = parse(key, value)?,
                "global.fallback" => self.global.fallback = parse(key, value)?,
                "global.pinned" => {
                    self.global.pinned = match value {
                        "" | "none" => None,
                        v => Some(parse(key, v)?),
                    }
                }
                "global.recompute_on_append" => self.global.recompute_on_append = parse(key, value)?,
                "top_k" => self.top_k = parse(key, value)?,
                "gcn.layers" => self.gcn.layers = parse(key, value)?,
                "gcn.activation" => {
                    self.gcn.activation = match value {
                        "relu" => Activation::Relu,
                        "identity" => Activation::Identity,
                        other => {
                            return Err(Error::InvalidConfig(format!(
                                "gcn.activation: unknown activation {other:?}"
                            )))
                        }
                    }
                }
                "gcn.identity_mode" => self.gcn.identity_mode = parse(key, value)?,
                "aggregator.hidden" => self.aggregator.hidden = parse(key, value)?,
                "aggregator.identity_mode" => self.aggregator.identity_mode = parse(key, value)?,
                "seed" => self.seed = parse(key, value)?,
                "oracle_cap" => self.oracle_cap = parse(key, value)?,
                other => return Err(Error::InvalidConfig(format!("unknown config key {other:?}"))),
            }
        }
        draft.finish(self)
    }

    /// Parses the text form on top of the defaults.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", i + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut config = EngineConfig::default();
        config.apply(&pairs)?;
        Ok(config)
    }

    /// Canonical text form; every key is written.
    pub fn to_kv_string(&self) -> String {
        let draft = Draft::of(self);
        let bool_s = |b: bool| if b { "true" } else { "false" };
        let values: Vec<String> = vec![
            draft.embedder_kind,
            self.embedder.dimension.to_string(),
            self.embedder.seed.to_string(),
            draft.endpoint,
            draft.model,
            draft.timeout_ms.to_string(),
            self.k.to_string(),
            draft.mode,
            draft.alpha.to_string(),
            draft.beta.to_string(),
            draft.delta.to_string(),
            self.global.percentile.to_string(),
            self.global.margin.to_string(),
            self.global.fallback.to_string(),
            self.global.pinned.map_or("none".to_string(), |p| p.to_string()),
            bool_s(self.global.recompute_on_append).to_string(),
            self.top_k.to_string(),
            self.gcn.layers.to_string(),
            match self.gcn.activation {
                Activation::Relu => "relu".to_string(),
                Activation::Identity => "identity".to_string(),
            },
            bool_s(self.gcn.identity_mode).to_string(),
            self.aggregator.hidden.to_string(),
            bool_s(self.aggregator.identity_mode).to_string(),
            self.seed.to_string(),
            self.oracle_cap.to_string(),
        ];
        CONFIG_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// `(key, value)` overrides found in an environment listing.
    pub fn env_overrides<I: IntoIterator<Item = (String, String)>>(vars: I) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(name, value)| {
                let rest = name.strip_prefix(ENV_PREFIX)?;
                CONFIG_KEYS
                    .iter()
                    .find(|k| k.to_ascii_uppercase().replace('.', "_") == rest)
                    .map(|k| (k.to_string(), value))
            })
            .collect();
        // Environment iteration order is unspecified.
        out.sort_by_key(|(k, _)| CONFIG_KEYS.iter().position(|c| c == k));
        out
    }
}
