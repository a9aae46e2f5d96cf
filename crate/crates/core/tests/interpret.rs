mod common;

use common::*;
use rand::Rng;
use saeir::interpret::{
    activation_series, build_trie, explain_feature, frequency_profile, loglog_slope, prune_trie, replay_activation,
    tokenize, top_activating_docs, ExplanationSource, SeriesMode, ToyHashingEmbedder, TrieConfig,
};
use saeir::synth::{generate_synthetic, SynthConfig};
use saeir::SparseLatent;

#[test]
fn planted_zipf_exponent_is_recovered() {
    for exponent in [1.1, 1.4] {
        let b = generate_synthetic(&SynthConfig {
            n_atoms: 600,
            n_queries: 50,
            n_distractors: 40_000,
            zipf_exponent: exponent,
            ..SynthConfig::default()
        })
        .unwrap();
        let codes: Vec<SparseLatent> = (0..b.corpus.len()).map(|r| b.doc_code_latent(r)).collect();
        let profile = frequency_profile(&codes, None).unwrap();
        let slope = loglog_slope(&profile.feature_rank_frequency, 50).unwrap();
        assert!((slope + exponent).abs() <= 0.1, "exponent {exponent}: fitted slope {slope}");
        let total: u64 = profile.feature_counts.iter().sum();
        assert_eq!(total as usize, codes.iter().map(|h| h.nnz()).sum::<usize>());
    }
}

#[test]
fn top_documents_match_full_sort() {
    let mut r = rng(31);
    let latents: Vec<SparseLatent> = (0..300)
        .map(|_| {
            let mut idx: Vec<usize> = (0..4).map(|_| r.random_range(0..16)).collect();
            idx.sort_unstable();
            idx.dedup();
            SparseLatent::new(idx.into_iter().map(|j| (j, r.random_range(0..6) as f64 * 0.5)).collect(), 16).unwrap()
        })
        .collect();
    let ids: Vec<String> = (0..latents.len()).map(|i| format!("d{i}")).collect();
    for feature in 0..16 {
        let got = top_activating_docs(feature, &ids, &latents, Some(10)).unwrap();
        let mut want: Vec<(usize, f64)> = latents
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.get(feature).filter(|v| *v != 0.0).map(|v| (i, v)))
            .collect();
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let want: Vec<(String, f64)> = want.into_iter().take(10).map(|(i, v)| (ids[i].clone(), v)).collect();
        assert_eq!(got, want, "feature {feature}");
    }
}

#[test]
fn tries_on_synthetic_texts_respect_window_and_replay() {
    let b = generate_synthetic(&SynthConfig {
        n_queries: 60,
        n_distractors: 200,
        noise_sigma: 0.0,
        ..SynthConfig::default()
    })
    .unwrap();
    let params = b.oracle_params(b.config.k_true).unwrap();
    let embedder = ToyHashingEmbedder::new(b.config.dim, 7)
        .with_unknown_scale(0.05)
        .with_lexicon(b.lexicon())
        .unwrap();
    let config = TrieConfig::default();
    let mut checked = 0;
    for feature in [b.query_perspectives[0].0, b.query_perspectives[1].0, b.query_perspectives[2].1] {
        let rows: Vec<usize> = (0..b.corpus.len()).filter(|&r| b.doc_uses_atom(r, feature)).take(12).collect();
        let series: Vec<_> = rows
            .iter()
            .map(|&r| activation_series(&params, &embedder, b.corpus.id(r), &tokenize(&b.doc_texts[r]), feature, SeriesMode::Raw).unwrap())
            .collect();
        for s in &series {
            assert_eq!(s.values.len(), s.tokens.len());
        }
        let max = series.iter().flat_map(|s| s.values.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
        let trie = build_trie(feature, &series, &config).unwrap();
        assert!(!trie.is_empty());
        let peaks: usize = series.iter().map(|s| s.values.iter().filter(|&&v| v >= config.theta_peak * max).count()).sum();
        assert!(trie.node_count() <= peaks * config.context_window);
        for path in trie.paths() {
            assert!(path.tokens.len() <= config.context_window);
            assert!(path.activation >= config.theta_peak * max);
        }
        let pruned = prune_trie(&trie, &params, &embedder, &config).unwrap();
        assert!(pruned.node_count() <= trie.node_count());
        for path in pruned.paths() {
            let replay = replay_activation(&params, &embedder, &path.forward(), feature).unwrap();
            assert!(replay >= config.theta_keep * path.activation, "{:?} replays to {replay}", path.tokens);
            assert!(path.activation >= config.theta_peak * max);
            checked += 1;
        }
        let explanation = explain_feature(&pruned, None).unwrap();
        assert_eq!(explanation.source, ExplanationSource::Offline);
        assert!(explanation.keywords().contains(&saeir::synth::atom_word(feature).as_str()), "{:?}", explanation.summary);
    }
    assert!(checked > 0);
}
