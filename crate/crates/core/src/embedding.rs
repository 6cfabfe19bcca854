//! Token and query vectors, plus the cosine kernel every graph is built from.
//!
//! Two embedders are available:
//!
//! * `deterministic-hash`: a pure function of `(token, seed, dimension)`. The
//!   token bytes are hashed with 64-bit FNV-1a, the hash is mixed with the seed
//!   through SplitMix64, the result seeds a `ChaCha8Rng`, and `dimension`
//!   standard-normal draws (`rand_distr::StandardNormal`) are normalized to unit
//!   length. The algorithm is identified by [`HASH_EMBEDDER_VERSION`]; any change
//!   to it must bump that string.
//! * `external-service`: one HTTP POST per batch carrying
//!   `{"model": .., "texts": [..]}` and expecting `{"dim": .., "vectors": [[..]]}`.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// A `d`-dimensional token vector.
pub type TokenEmbedding = Vec<f64>;

pub const HASH_EMBEDDER_VERSION: &str = "fnv1a64-splitmix64/chacha8/std-normal/v1";

pub const DEFAULT_DIMENSION: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EmbedderKind {
    DeterministicHash,
    ExternalService {
        endpoint: String,
        model: String,
        timeout_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub dimension: usize,
    pub seed: u64,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec {
            kind: EmbedderKind::DeterministicHash,
            dimension: DEFAULT_DIMENSION,
            seed: 0,
        }
    }
}

impl EmbedderSpec {
    pub fn hash(dimension: usize, seed: u64) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::DeterministicHash,
            dimension,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 {
            return Err(Error::InvalidConfig(format!(
                "embedding dimension must be >= 2, got {}",
                self.dimension
            )));
        }
        if let EmbedderKind::ExternalService { endpoint, .. } = &self.kind {
            if endpoint.is_empty() {
                return Err(Error::InvalidConfig(
                    "external-service embedder needs an endpoint".into(),
                ));
            }
        }
        Ok(())
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Unit vector for one token under the deterministic hash embedder.
pub fn hash_embedding(token: &str, seed: u64, dimension: usize) -> TokenEmbedding {
    let key = splitmix64(fnv1a64(token.as_bytes()) ^ splitmix64(seed));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    loop {
        let mut v: Vec<f64> = (0..dimension)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let n = norm(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

#[derive(Serialize)]
struct ServiceRequest<'a> {
    model: &'a str,
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct ServiceResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

/// Reusable embedder. Cheap to clone; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Embedder {
    spec: EmbedderSpec,
    client: Option<reqwest::blocking::Client>,
}

impl Embedder {
    pub fn new(spec: EmbedderSpec) -> Result<Self> {
        spec.validate()?;
        let client = match &spec.kind {
            EmbedderKind::DeterministicHash => None,
            EmbedderKind::ExternalService {
                endpoint,
                timeout_ms,
                ..
            } => Some(
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_millis(*timeout_ms))
                    .build()
                    .map_err(|e| Error::Transport {
                        endpoint: endpoint.clone(),
                        message: e.to_string(),
                    })?,
            ),
        };
        Ok(Embedder { spec, client })
    }

    pub fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }

    pub fn embed<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<TokenEmbedding>> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        match &self.spec.kind {
            EmbedderKind::DeterministicHash => Ok(tokens
                .iter()
                .map(|t| hash_embedding(t.as_ref(), self.spec.seed, self.spec.dimension))
                .collect()),
            EmbedderKind::ExternalService {
                endpoint, model, ..
            } => self.embed_remote(endpoint, model, tokens),
        }
    }

    fn embed_remote<S: AsRef<str>>(
        &self,
        endpoint: &str,
        model: &str,
        tokens: &[S],
    ) -> Result<Vec<TokenEmbedding>> {
        let transport = |message: String| Error::Transport {
            endpoint: endpoint.to_string(),
            message,
        };
        let texts: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        let client = self.client.as_ref().expect("client built for external kind");
        let resp = client
            .post(endpoint)
            .json(&ServiceRequest {
                model,
                texts: &texts,
            })
            .send()
            .map_err(|e| transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(transport(format!("HTTP status {status}")));
        }
        let body: ServiceResponse = resp.json().map_err(|e| transport(e.to_string()))?;
        if body.dim != self.spec.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.spec.dimension,
                found: body.dim,
            });
        }
        if body.vectors.len() != tokens.len() {
            return Err(transport(format!(
                "expected {} vectors, got {}",
                tokens.len(),
                body.vectors.len()
            )));
        }
        for v in &body.vectors {
            if v.len() != self.spec.dimension {
                return Err(Error::DimensionMismatch {
                    expected: self.spec.dimension,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(transport("non-finite vector entry".into()));
            }
        }
        Ok(body.vectors)
    }
}

/// One embedding per token, in order.
pub fn embed_tokens<S: AsRef<str>>(tokens: &[S], spec: &EmbedderSpec) -> Result<Vec<TokenEmbedding>> {
    Embedder::new(spec.clone())?.embed(tokens)
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let nu = dot(u, u);
    let nv = dot(v, v);
    if !(nu > 0.0 && nu.is_finite()) || !(nv > 0.0 && nv.is_finite()) {
        return Err(Error::DegenerateVector { index: None });
    }
    Ok(cosine_with_sq_norms(u, v, nu, nv))
}

/// Cosine given precomputed positive squared norms. Dividing by
/// `sqrt(|u|^2 |v|^2)` makes `cosine(v, v)` exactly 1.
pub(crate) fn cosine_with_sq_norms(u: &[f64], v: &[f64], nu2: f64, nv2: f64) -> f64 {
    (dot(u, v) / (nu2 * nv2).sqrt()).clamp(-1.0, 1.0)
}

/// Squared norms of every vector, failing on the first degenerate one.
pub(crate) fn checked_sq_norms(vectors: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            let n = dot(v, v);
            if n > 0.0 && n.is_finite() {
                Ok(n)
            } else {
                Err(Error::DegenerateVector { index: Some(i) })
            }
        })
        .collect()
}
