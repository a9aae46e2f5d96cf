use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tokenize;
use crate::error::{Error, Result};
use crate::numerics::axpy;
use crate::sae::SaeParams;

/// Maps texts to dense embeddings. Implementations must return one vector
/// per input text, in order.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Deterministic bag-of-tokens embedder: the embedding of a text is the sum
/// of one fixed vector per toolkit token. Tokens in the lexicon use their
/// given vector; any other token gets a seeded Gaussian vector with entries
/// N(0, scale²/dim).
#[derive(Debug, Clone)]
pub struct ToyHashingEmbedder {
    dim: usize,
    seed: u64,
    unknown_scale: f64,
    lexicon: HashMap<String, Vec<f64>>,
}

impl ToyHashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        ToyHashingEmbedder {
            dim,
            seed,
            unknown_scale: 1.0,
            lexicon: HashMap::new(),
        }
    }

    pub fn with_unknown_scale(mut self, scale: f64) -> Self {
        self.unknown_scale = scale;
        self
    }

    pub fn with_token(mut self, token: &str, vector: Vec<f64>) -> Result<Self> {
        self.insert_token(token, vector)?;
        Ok(self)
    }

    pub fn insert_token(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::dim(self.dim, vector.len(), format!("lexicon vector for {token:?}")));
        }
        self.lexicon.insert(token.to_lowercase(), vector);
        Ok(())
    }

    pub fn with_lexicon(mut self, lexicon: HashMap<String, Vec<f64>>) -> Result<Self> {
        for (t, v) in lexicon {
            self.insert_token(&t, v)?;
        }
        Ok(self)
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.lexicon.get(token) {
            return v.clone();
        }
        let h = crc32fast::hash(token.as_bytes()) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ h.rotate_left(29) ^ (token.len() as u64));
        let dist = Normal::new(0.0, self.unknown_scale / (self.dim as f64).sqrt()).expect("valid sigma");
        (0..self.dim).map(|_| dist.sample(&mut rng)).collect()
    }

    pub fn embed_tokens(&self, tokens: &[String]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for t in tokens {
            axpy(1.0, &self.token_vector(t), &mut x);
        }
        x
    }
}

impl Embedder for ToyHashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_tokens(&tokenize(t))).collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesMode {
    /// Activation on the prefix ending at each token.
    #[default]
    Raw,
    /// Increase over the previous prefix (first token against zero).
    FirstDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSeries {
    pub doc_id: String,
    pub feature: usize,
    pub tokens: Vec<String>,
    pub values: Vec<f64>,
}

fn feature_activation(params: &SaeParams, x: &[f64], feature: usize) -> Result<f64> {
    Ok(params.encode(x)?.get(feature).unwrap_or(0.0))
}

/// Embeds every prefix of `tokens` and records the feature's activation on it.
pub fn activation_series(
    params: &SaeParams,
    embedder: &dyn Embedder,
    doc_id: &str,
    tokens: &[String],
    feature: usize,
    mode: SeriesMode,
) -> Result<ActivationSeries> {
    if tokens.is_empty() {
        return Err(Error::invalid("activation series needs a non-empty text"));
    }
    if feature >= params.latent_dim() {
        return Err(Error::invalid(format!("feature {feature} out of range")));
    }
    let prefixes: Vec<String> = (1..=tokens.len()).map(|t| tokens[..t].join(" ")).collect();
    let embeddings = embedder.embed(&prefixes).map_err(|e| match e {
        Error::Embedder { .. } => e,
        other => Error::Embedder {
            position: 0,
            message: other.to_string(),
        },
    })?;
    if embeddings.len() != prefixes.len() {
        return Err(Error::Embedder {
            position: embeddings.len().min(prefixes.len()),
            message: format!("expected {} embeddings, got {}", prefixes.len(), embeddings.len()),
        });
    }
    let mut values = Vec::with_capacity(tokens.len());
    for (pos, x) in embeddings.iter().enumerate() {
        let v = feature_activation(params, x, feature).map_err(|e| Error::Embedder {
            position: pos,
            message: e.to_string(),
        })?;
        values.push(v);
    }
    if mode == SeriesMode::FirstDifference {
        for i in (1..values.len()).rev() {
            values[i] -= values[i - 1];
        }
    }
    Ok(ActivationSeries {
        doc_id: doc_id.to_owned(),
        feature,
        tokens: tokens.to_vec(),
        values,
    })
}

/// Activation of `feature` on the text formed by `tokens` in order.
pub fn replay_activation(params: &SaeParams, embedder: &dyn Embedder, tokens: &[String], feature: usize) -> Result<f64> {
    let x = embedder.embed(&[tokens.join(" ")])?;
    let x = x.into_iter().next().ok_or_else(|| Error::Embedder {
        position: tokens.len(),
        message: "embedder returned nothing".into(),
    })?;
    feature_activation(params, &x, feature)
}
