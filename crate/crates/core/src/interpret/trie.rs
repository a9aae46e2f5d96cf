use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::embedder::{replay_activation, ActivationSeries, Embedder};
use crate::error::{Error, Result};
use crate::sae::SaeParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrieConfig {
    /// Fraction of the feature's max activation that defines a peak.
    pub theta_peak: f64,
    /// Fraction of a path's activation that pruning and substitutes must keep.
    pub theta_keep: f64,
    pub context_window: usize,
}

impl Default for TrieConfig {
    fn default() -> Self {
        TrieConfig {
            theta_peak: 0.5,
            theta_keep: 0.8,
            context_window: 8,
        }
    }
}

impl TrieConfig {
    fn validate(&self) -> Result<()> {
        if !(self.theta_peak > 0.0 && self.theta_peak <= 1.0 && self.theta_keep > 0.0 && self.theta_keep <= 1.0) {
            return Err(Error::invalid("thresholds must lie in (0, 1]"));
        }
        if self.context_window == 0 {
            return Err(Error::invalid("context window must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrieNode {
    pub token: String,
    pub children: BTreeMap<String, usize>,
    /// Max activation recorded on paths ending here (terminal nodes only).
    pub activation: f64,
    pub count: u32,
    pub terminal: bool,
    /// Set on paths added by substitution.
    pub augmented: bool,
}

impl TrieNode {
    fn new(token: String) -> Self {
        TrieNode {
            token,
            children: BTreeMap::new(),
            activation: 0.0,
            count: 0,
            terminal: false,
            augmented: false,
        }
    }
}

/// Token-context trie for one feature. A path from the root starts at the
/// peak token and walks backwards through the preceding context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrie {
    pub feature: usize,
    nodes: Vec<TrieNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriePath {
    /// Peak token first.
    pub tokens: Vec<String>,
    pub activation: f64,
    pub count: u32,
    pub augmented: bool,
}

impl TriePath {
    /// Context in reading order (peak token last).
    pub fn forward(&self) -> Vec<String> {
        self.tokens.iter().rev().cloned().collect()
    }
}

impl FeatureTrie {
    pub fn new(feature: usize) -> Self {
        FeatureTrie {
            feature,
            nodes: vec![TrieNode::new(String::new())],
        }
    }

    pub fn root(&self) -> &TrieNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &TrieNode {
        &self.nodes[id]
    }

    /// Nodes excluding the root.
    pub fn node_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Adds a path (peak token first). An existing path gets its count
    /// increased and keeps the larger activation.
    pub fn insert(&mut self, tokens: &[String], activation: f64, count: u32, augmented: bool) {
        let end = self.walk_or_create(tokens);
        let node = &mut self.nodes[end];
        if node.terminal {
            node.count += count;
            node.activation = node.activation.max(activation);
            node.augmented &= augmented;
        } else {
            node.terminal = true;
            node.count = count;
            node.activation = activation;
            node.augmented = augmented;
        }
    }

    /// Adds a path only if it is not already terminal. Returns whether it was added.
    fn insert_if_absent(&mut self, tokens: &[String], activation: f64, augmented: bool) -> bool {
        if self.find(tokens).is_some_and(|n| self.nodes[n].terminal) {
            return false;
        }
        self.insert(tokens, activation, 1, augmented);
        true
    }

    fn walk_or_create(&mut self, tokens: &[String]) -> usize {
        let mut cur = 0;
        for t in tokens {
            cur = match self.nodes[cur].children.get(t) {
                Some(&c) => c,
                None => {
                    let id = self.nodes.len();
                    self.nodes.push(TrieNode::new(t.clone()));
                    self.nodes[cur].children.insert(t.clone(), id);
                    id
                }
            };
        }
        cur
    }

    fn find(&self, tokens: &[String]) -> Option<usize> {
        let mut cur = 0;
        for t in tokens {
            cur = *self.nodes[cur].children.get(t)?;
        }
        Some(cur)
    }

    /// Every terminal path, in lexicographic token order.
    pub fn paths(&self) -> Vec<TriePath> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::<String>::new())];
        while let Some((id, prefix)) = stack.pop() {
            let node = &self.nodes[id];
            if node.terminal {
                out.push(TriePath {
                    tokens: prefix.clone(),
                    activation: node.activation,
                    count: node.count,
                    augmented: node.augmented,
                });
            }
            for (tok, &c) in node.children.iter().rev() {
                let mut p = prefix.clone();
                p.push(tok.clone());
                stack.push((c, p));
            }
        }
        out
    }

    fn from_paths(feature: usize, paths: &[TriePath]) -> Self {
        let mut t = FeatureTrie::new(feature);
        for p in paths {
            t.insert(&p.tokens, p.activation, p.count, p.augmented);
        }
        t
    }
}

/// Inserts the reversed context window of every peak position.
pub fn build_trie(feature: usize, series: &[ActivationSeries], config: &TrieConfig) -> Result<FeatureTrie> {
    config.validate()?;
    let mut trie = FeatureTrie::new(feature);
    let max = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Ok(trie);
    }
    let threshold = config.theta_peak * max;
    for s in series {
        if s.values.len() != s.tokens.len() {
            return Err(Error::dim(s.tokens.len(), s.values.len(), format!("series of {}", s.doc_id)));
        }
        if s.feature != feature {
            return Err(Error::invalid(format!("series of {} is for feature {}", s.doc_id, s.feature)));
        }
        for (t, &v) in s.values.iter().enumerate() {
            if v >= threshold {
                let start = (t + 1).saturating_sub(config.context_window);
                let path: Vec<String> = s.tokens[start..=t].iter().rev().cloned().collect();
                trie.insert(&path, v, 1, false);
            }
        }
    }
    Ok(trie)
}

/// Drops the oldest context tokens of each path while the replayed
/// activation stays at or above `theta_keep` times the path's activation.
/// Paths whose windowed context replays below that bound are dropped: the
/// activation came from outside the window.
pub fn prune_trie(
    trie: &FeatureTrie,
    params: &SaeParams,
    embedder: &dyn Embedder,
    config: &TrieConfig,
) -> Result<FeatureTrie> {
    config.validate()?;
    let mut pruned = Vec::new();
    let mut dropped = 0;
    for path in trie.paths() {
        let replay = |tokens: &[String]| {
            let forward: Vec<String> = tokens.iter().rev().cloned().collect();
            replay_activation(params, embedder, &forward, trie.feature)
        };
        let full = replay(&path.tokens)?;
        if full < config.theta_keep * path.activation {
            dropped += 1;
            continue;
        }
        let baseline = full.max(path.activation);
        let mut len = path.tokens.len();
        let mut current = full;
        while len > 1 {
            let shorter = replay(&path.tokens[..len - 1])?;
            if shorter >= config.theta_keep * baseline {
                len -= 1;
                current = shorter;
            } else {
                break;
            }
        }
        pruned.push(TriePath {
            tokens: path.tokens[..len].to_vec(),
            activation: baseline.max(current),
            count: path.count,
            augmented: path.augmented,
        });
    }
    if dropped > 0 {
        log::debug!("feature {}: dropped {dropped} paths not reproduced by their window", trie.feature);
    }
    Ok(FeatureTrie::from_paths(trie.feature, &pruned))
}

/// Candidate replacements for a peak token.
pub trait SubstituteSource: Send + Sync {
    /// `context` is the path's preceding context in reading order.
    fn substitutes(&self, token: &str, context: &[String]) -> Result<Vec<String>>;
}

/// Fixed token → substitutes table. The empty table yields no substitutes.
#[derive(Debug, Clone, Default)]
pub struct StaticSubstitutes(pub HashMap<String, Vec<String>>);

impl SubstituteSource for StaticSubstitutes {
    fn substitutes(&self, token: &str, _context: &[String]) -> Result<Vec<String>> {
        Ok(self.0.get(token).cloned().unwrap_or_default())
    }
}

/// Tokens that most often share a peak context window with other peak
/// contexts of the feature, by frequency then token order.
#[derive(Debug, Clone, Default)]
pub struct CooccurrenceSubstitutes {
    ranked: Vec<String>,
    limit: usize,
}

impl CooccurrenceSubstitutes {
    pub fn from_contexts<'a, I>(contexts: I, limit: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for ctx in contexts {
            for t in ctx {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        CooccurrenceSubstitutes {
            ranked: ranked.into_iter().map(|(t, _)| t.to_owned()).collect(),
            limit,
        }
    }

    /// Uses the contexts recorded in a trie.
    pub fn from_trie(trie: &FeatureTrie, limit: usize) -> Self {
        let paths = trie.paths();
        Self::from_contexts(paths.iter().map(|p| p.tokens.as_slice()), limit)
    }
}

impl SubstituteSource for CooccurrenceSubstitutes {
    fn substitutes(&self, token: &str, _context: &[String]) -> Result<Vec<String>> {
        Ok(self.ranked.iter().filter(|t| *t != token).take(self.limit).cloned().collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutcome {
    pub trie: FeatureTrie,
    /// Set when the substitute source failed; the trie is then unchanged.
    pub warning: Option<String>,
    pub added: usize,
}

/// For each original path, tries each substitute for the peak token and
/// keeps variants whose replayed activation reaches `theta_keep` times the
/// path's activation. Variants inherit that activation.
pub fn augment_trie(
    trie: &FeatureTrie,
    params: &SaeParams,
    embedder: &dyn Embedder,
    substitutes: &dyn SubstituteSource,
    config: &TrieConfig,
) -> Result<AugmentOutcome> {
    config.validate()?;
    let mut out = trie.clone();
    let mut added = 0;
    for path in trie.paths().into_iter().filter(|p| !p.augmented) {
        let Some(peak) = path.tokens.first() else { continue };
        let context: Vec<String> = path.tokens[1..].iter().rev().cloned().collect();
        let candidates = match substitutes.substitutes(peak, &context) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("substitutes unavailable for feature {}: {e}", trie.feature);
                return Ok(AugmentOutcome {
                    trie: trie.clone(),
                    warning: Some(e.to_string()),
                    added: 0,
                });
            }
        };
        for cand in candidates {
            if &cand == peak {
                continue;
            }
            let mut variant = path.tokens.clone();
            variant[0] = cand;
            let forward: Vec<String> = variant.iter().rev().cloned().collect();
            let v = replay_activation(params, embedder, &forward, trie.feature)?;
            if v >= config.theta_keep * path.activation && out.insert_if_absent(&variant, path.activation, true) {
                added += 1;
            }
        }
    }
    Ok(AugmentOutcome {
        trie: out,
        warning: None,
        added,
    })
}
