//! Feature interpretation: usage frequency, top-activating documents,
//! prefix activation series, context tries and keyword explanations.

mod embedder;
mod explain;
mod trie;

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rank_order;
use crate::sae::SparseLatent;

pub use embedder::{activation_series, replay_activation, ActivationSeries, Embedder, SeriesMode, ToyHashingEmbedder};
pub use explain::{
    explain_feature, explain_features, offline_summary, read_explanations, render_prompt, write_explanations,
    ExplanationSource, FeatureExplanation, LlmClient, RecordingLlm, ReplayLlm, RetryingLlm, MAX_SUMMARY_TERMS,
};
pub use trie::{
    augment_trie, build_trie, prune_trie, AugmentOutcome, CooccurrenceSubstitutes, FeatureTrie, StaticSubstitutes,
    SubstituteSource, TrieConfig, TrieNode, TriePath,
};

/// Whitespace split, lowercase, strip punctuation; empty tokens dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.chars()
                .filter(|c| !c.is_ascii_punctuation())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyProfile {
    /// Per feature: number of documents where it is non-zero.
    pub feature_counts: Vec<u64>,
    /// (rank starting at 1, count), count descending, zero counts omitted.
    pub feature_rank_frequency: Vec<(usize, u64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_counts: Option<Vec<(String, u64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_rank_frequency: Option<Vec<(usize, u64)>>,
}

fn rank_frequency(mut counts: Vec<u64>) -> Vec<(usize, u64)> {
    counts.retain(|c| *c > 0);
    counts.sort_unstable_by(|a, b| b.cmp(a));
    counts.into_iter().enumerate().map(|(i, c)| (i + 1, c)).collect()
}

pub fn frequency_profile(latents: &[SparseLatent], texts: Option<&[String]>) -> Result<FrequencyProfile> {
    let first = latents.first().ok_or_else(|| Error::invalid("frequency profile needs a non-empty corpus"))?;
    let n = first.latent_dim();
    let mut counts = vec![0u64; n];
    for h in latents {
        if h.latent_dim() != n {
            return Err(Error::dim(n, h.latent_dim(), "latent_dim in corpus"));
        }
        for &(j, v) in h.entries() {
            if v != 0.0 {
                counts[j] += 1;
            }
        }
    }
    let (word_counts, word_rank_frequency) = match texts {
        Some(texts) => {
            let mut words: HashMap<String, u64> = HashMap::new();
            for t in texts {
                for tok in tokenize(t) {
                    *words.entry(tok).or_default() += 1;
                }
            }
            let mut list: Vec<(String, u64)> = words.into_iter().collect();
            list.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let rf = rank_frequency(list.iter().map(|w| w.1).collect());
            (Some(list), Some(rf))
        }
        None => (None, None),
    };
    Ok(FrequencyProfile {
        feature_rank_frequency: rank_frequency(counts.clone()),
        feature_counts: counts,
        word_counts,
        word_rank_frequency,
    })
}

impl FrequencyProfile {
    /// Rank (1-based) of each feature in the frequency ordering; `None` if never active.
    pub fn feature_ranks(&self) -> Vec<Option<usize>> {
        let mut order: Vec<usize> = (0..self.feature_counts.len()).filter(|&j| self.feature_counts[j] > 0).collect();
        order.sort_by(|&a, &b| self.feature_counts[b].cmp(&self.feature_counts[a]).then(a.cmp(&b)));
        let mut ranks = vec![None; self.feature_counts.len()];
        for (r, j) in order.into_iter().enumerate() {
            ranks[j] = Some(r + 1);
        }
        ranks
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("series\trank\tcount\n");
        for (r, c) in &self.feature_rank_frequency {
            s.push_str(&format!("latent\t{r}\t{c}\n"));
        }
        for (r, c) in self.word_rank_frequency.iter().flatten() {
            s.push_str(&format!("word\t{r}\t{c}\n"));
        }
        s
    }
}

/// Least-squares slope of ln(count) against ln(rank), over points with count ≥ `min_count`.
pub fn loglog_slope(rank_frequency: &[(usize, u64)], min_count: u64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = rank_frequency
        .iter()
        .filter(|p| p.1 >= min_count.max(1))
        .map(|&(r, c)| ((r as f64).ln(), (c as f64).ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::invalid("need at least two points to fit a slope"));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Documents where `feature` is non-zero, by activation descending, ties by
/// corpus order. `limit = None` returns all of them.
pub fn top_activating_docs(
    feature: usize,
    ids: &[String],
    latents: &[SparseLatent],
    limit: Option<usize>,
) -> Result<Vec<(String, f64)>> {
    if ids.len() != latents.len() {
        return Err(Error::dim(ids.len(), latents.len(), "latents vs ids"));
    }
    if let Some(h) = latents.first() {
        if feature >= h.latent_dim() {
            return Err(Error::invalid(format!("feature {feature} out of range for latent dimension {}", h.latent_dim())));
        }
    }
    let mut hits: Vec<(usize, f64)> = latents
        .iter()
        .enumerate()
        .filter_map(|(row, h)| h.get(feature).filter(|v| *v != 0.0).map(|v| (row, v)))
        .collect();
    hits.sort_by(|a, b| rank_order(*a, *b));
    if let Some(l) = limit {
        hits.truncate(l);
    }
    Ok(hits.into_iter().map(|(row, v)| (ids[row].clone(), v)).collect())
}

pub(crate) fn by_weight_then_token(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lat(entries: &[(usize, f64)], n: usize) -> SparseLatent {
        SparseLatent::new(entries.to_vec(), n).unwrap()
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Hello, World!  it's\tN.Y."), vec!["hello", "world", "its", "ny"]);
        assert!(tokenize(" ... ").is_empty());
    }

    #[test]
    fn frequency_examples() {
        let one = vec![lat(&[(3, 0.5), (7, -0.1)], 10)];
        let p = frequency_profile(&one, None).unwrap();
        assert_eq!(p.feature_counts[3], 1);
        assert_eq!(p.feature_counts[7], 1);
        assert_eq!(p.feature_counts.iter().sum::<u64>(), 2);
        let twice = vec![one[0].clone(), one[0].clone()];
        let p2 = frequency_profile(&twice, Some(&["a b".into(), "a".into()])).unwrap();
        assert!(p2.feature_counts.iter().zip(&p.feature_counts).all(|(a, b)| *a == 2 * b));
        assert_eq!(p2.word_counts.unwrap(), vec![("a".to_string(), 2), ("b".to_string(), 1)]);
        assert!(frequency_profile(&[], None).is_err());
        assert_eq!(p.feature_ranks()[3], Some(1));
        assert_eq!(p.feature_ranks()[0], None);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let rf: Vec<(usize, u64)> = (1..=200).map(|r| (r, (1e6 * (r as f64).powf(-1.1)).round() as u64)).collect();
        assert!((loglog_slope(&rf, 1).unwrap() + 1.1).abs() < 1e-3);
    }

    #[test]
    fn top_docs_examples() {
        let ids: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let lats = vec![lat(&[(1, 0.1)], 4), lat(&[(1, 0.9)], 4), lat(&[(1, 0.5)], 4), lat(&[(2, 1.0)], 4)];
        let top = top_activating_docs(1, &ids, &lats, Some(2)).unwrap();
        assert_eq!(top, vec![("b".to_string(), 0.9), ("c".to_string(), 0.5)]);
        assert!(top_activating_docs(0, &ids, &lats, None).unwrap().is_empty());
        assert!(top_activating_docs(4, &ids, &lats, None).is_err());
    }

    proptest! {
        #[test]
        fn counts_sum_to_nnz(rows in prop::collection::vec(prop::collection::btree_map(0usize..16, -2.0f64..2.0, 0..5), 1..20)) {
            let lats: Vec<SparseLatent> = rows.iter().map(|m| {
                SparseLatent::new(m.iter().filter(|e| *e.1 != 0.0).map(|(a, b)| (*a, *b)).collect(), 16).unwrap()
            }).collect();
            let p = frequency_profile(&lats, None).unwrap();
            prop_assert_eq!(p.feature_counts.iter().sum::<u64>() as usize, lats.iter().map(|h| h.nnz()).sum::<usize>());
        }

        #[test]
        fn unlimited_top_docs_is_permutation_of_active(rows in prop::collection::vec(prop::collection::btree_map(0usize..6, -2.0f64..2.0, 0..4), 0..30)) {
            let lats: Vec<SparseLatent> = rows.iter().map(|m| {
                SparseLatent::new(m.iter().filter(|e| *e.1 != 0.0).map(|(a, b)| (*a, *b)).collect(), 6).unwrap()
            }).collect();
            let ids: Vec<String> = (0..lats.len()).map(|i| format!("d{i:03}")).collect();
            let top = top_activating_docs(2, &ids, &lats, None).unwrap();
            prop_assert!(top.windows(2).all(|w| w[0].1 >= w[1].1));
            let mut got: Vec<&str> = top.iter().map(|t| t.0.as_str()).collect();
            got.sort_unstable();
            let want: Vec<&str> = ids.iter().zip(&lats).filter(|(_, h)| h.get(2).is_some()).map(|(i, _)| i.as_str()).collect();
            prop_assert_eq!(got, want);
        }
    }
}
