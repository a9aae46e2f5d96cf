use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trie::FeatureTrie;
use super::by_weight_then_token;
use crate::error::{Error, Result};

pub const MAX_SUMMARY_TERMS: usize = 8;
const OFFLINE_TERMS: usize = 5;
const PROMPT_PATHS: usize = 40;

/// Chat-completion style text generator.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationSource {
    Llm,
    Offline,
    OfflineFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExplanation {
    pub feature: usize,
    pub summary: String,
    pub source: ExplanationSource,
    /// Context samples behind the trie (sum of path counts).
    pub samples: u64,
}

impl FeatureExplanation {
    pub fn keywords(&self) -> Vec<&str> {
        self.summary.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
    }
}

/// Top tokens by activation-weighted count over all trie paths.
pub fn offline_summary(trie: &FeatureTrie, terms: usize) -> Vec<String> {
    let mut weights: HashMap<&str, f64> = HashMap::new();
    let paths = trie.paths();
    for p in &paths {
        for t in &p.tokens {
            *weights.entry(t.as_str()).or_default() += p.count as f64 * p.activation;
        }
    }
    let mut ranked: Vec<(String, f64)> = weights.into_iter().map(|(t, w)| (t.to_owned(), w)).collect();
    ranked.sort_by(by_weight_then_token);
    ranked.into_iter().take(terms).map(|(t, _)| t).collect()
}

/// Fixed prompt listing the strongest paths in reading order.
pub fn render_prompt(trie: &FeatureTrie) -> String {
    let mut paths = trie.paths();
    paths.sort_by(|a, b| {
        b.activation
            .total_cmp(&a.activation)
            .then(b.count.cmp(&a.count))
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    let mut s = String::from(
        "Each line below is a short text context that strongly activates one latent feature of a \
         retrieval embedding model, with its activation and the number of times it was seen. \
         The last token of each context is where the activation peaks.\n\n",
    );
    for p in paths.iter().take(PROMPT_PATHS) {
        let _ = writeln!(s, "{:.4}\t{}\t{}", p.activation, p.count, p.forward().join(" "));
    }
    let _ = write!(
        s,
        "\nAnswer with at most {MAX_SUMMARY_TERMS} comma-separated lowercase keywords describing the shared concept. \
         No other text."
    );
    s
}

fn parse_keywords(reply: &str) -> Option<String> {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty())?;
    let terms: Vec<String> = line
        .split(',')
        .map(|t| t.trim().trim_matches(|c: char| c == '"' || c == '.' || c == '\'').to_lowercase())
        .filter(|t| !t.is_empty())
        .take(MAX_SUMMARY_TERMS)
        .collect();
    (!terms.is_empty()).then(|| terms.join(", "))
}

/// With a client, asks it for keywords and falls back to the offline
/// summary on transport or parse failure; without one, summarizes offline.
pub fn explain_feature(trie: &FeatureTrie, llm: Option<&dyn LlmClient>) -> Result<FeatureExplanation> {
    if trie.is_empty() {
        return Err(Error::invalid(format!("feature {} has an empty trie", trie.feature)));
    }
    let samples = trie.paths().iter().map(|p| p.count as u64).sum();
    let offline = || offline_summary(trie, OFFLINE_TERMS).join(", ");
    let (summary, source) = match llm {
        None => (offline(), ExplanationSource::Offline),
        Some(client) => match client.complete(&render_prompt(trie)) {
            Ok(reply) => match parse_keywords(&reply) {
                Some(s) => (s, ExplanationSource::Llm),
                None => {
                    log::warn!("feature {}: unparseable reply, using offline summary", trie.feature);
                    (offline(), ExplanationSource::OfflineFallback)
                }
            },
            Err(e) => {
                log::warn!("feature {}: {e}; using offline summary", trie.feature);
                (offline(), ExplanationSource::OfflineFallback)
            }
        },
    };
    Ok(FeatureExplanation {
        feature: trie.feature,
        summary,
        source,
        samples,
    })
}

/// Explains tries with at most `max_concurrency` requests in flight.
pub fn explain_features(
    tries: &[FeatureTrie],
    llm: Option<&dyn LlmClient>,
    max_concurrency: usize,
) -> Result<Vec<FeatureExplanation>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_concurrency.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        tries
            .par_iter()
            .filter(|t| !t.is_empty())
            .map(|t| explain_feature(t, llm))
            .collect()
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Exchange {
    prompt: String,
    response: String,
}

/// Forwards to `inner` and appends each exchange to a JSON-lines log.
pub struct RecordingLlm<C> {
    inner: C,
    path: PathBuf,
    log: Mutex<std::fs::File>,
}

impl<C: LlmClient> RecordingLlm<C> {
    pub fn new(inner: C, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(RecordingLlm {
            inner,
            path,
            log: Mutex::new(file),
        })
    }
}

impl<C: LlmClient> LlmClient for RecordingLlm<C> {
    fn complete(&self, prompt: &str) -> Result<String> {
        let response = self.inner.complete(prompt)?;
        let line = serde_json::to_string(&Exchange {
            prompt: prompt.to_owned(),
            response: response.clone(),
        })?;
        let mut f = self.log.lock().expect("log lock");
        writeln!(f, "{line}").map_err(|e| Error::io(&self.path, e))?;
        Ok(response)
    }
}

/// Answers from a recorded log; unknown prompts are an error.
#[derive(Debug, Clone, Default)]
pub struct ReplayLlm {
    responses: HashMap<String, String>,
}

impl ReplayLlm {
    pub fn from_pairs<I: IntoIterator<Item = (String, String)>>(pairs: I) -> Self {
        ReplayLlm {
            responses: pairs.into_iter().collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut responses = HashMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let ex: Exchange = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            responses.insert(ex.prompt, ex.response);
        }
        Ok(ReplayLlm { responses })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl LlmClient for ReplayLlm {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.responses
            .get(prompt)
            .cloned()
            .ok_or_else(|| Error::Llm("prompt not present in replay log".into()))
    }
}

/// Retries failed calls with exponential backoff.
pub struct RetryingLlm<C> {
    inner: C,
    attempts: usize,
    base_delay: Duration,
}

impl<C: LlmClient> RetryingLlm<C> {
    pub fn new(inner: C, attempts: usize, base_delay: Duration) -> Self {
        RetryingLlm {
            inner,
            attempts: attempts.max(1),
            base_delay,
        }
    }
}

impl<C: LlmClient> LlmClient for RetryingLlm<C> {
    fn complete(&self, prompt: &str) -> Result<String> {
        let mut delay = self.base_delay;
        let mut last = None;
        for attempt in 0..self.attempts {
            match self.inner.complete(prompt) {
                Ok(r) => return Ok(r),
                Err(e) => {
                    log::debug!("llm attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                    if attempt + 1 < self.attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

pub fn write_explanations(path: impl AsRef<Path>, explanations: &[FeatureExplanation]) -> Result<()> {
    let mut s = String::new();
    for e in explanations {
        s.push_str(&serde_json::to_string(e)?);
        s.push('\n');
    }
    crate::io::write_atomic(path.as_ref(), s.as_bytes())
}

pub fn read_explanations(path: impl AsRef<Path>) -> Result<Vec<FeatureExplanation>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn korea() -> FeatureTrie {
        let mut t = FeatureTrie::new(7);
        t.insert(&["korea".to_string()], 1.5, 3, false);
        t
    }

    fn mixed() -> FeatureTrie {
        let mut t = FeatureTrie::new(3);
        let p = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
        t.insert(&p("television the"), 2.0, 2, false);
        t.insert(&p("media"), 1.0, 1, false);
        t.insert(&p("production of"), 1.5, 1, false);
        t
    }

    #[test]
    fn offline_single_token() {
        let e = explain_feature(&korea(), None).unwrap();
        assert_eq!(e.summary, "korea");
        assert_eq!(e.source, ExplanationSource::Offline);
        assert_eq!(e.samples, 3);
        assert!(explain_feature(&FeatureTrie::new(1), None).is_err());
    }

    #[test]
    fn offline_is_deterministic_and_weighted() {
        let a = explain_feature(&mixed(), None).unwrap();
        assert_eq!(a, explain_feature(&mixed(), None).unwrap());
        assert_eq!(a.summary, "television, the, of, production, media");
    }

    struct Fixed(&'static str);

    impl LlmClient for Fixed {
        fn complete(&self, _: &str) -> Result<String> {
            Ok(self.0.to_owned())
        }
    }

    struct Flaky(AtomicUsize);

    impl LlmClient for Flaky {
        fn complete(&self, _: &str) -> Result<String> {
            if self.0.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(Error::Llm("503".into()))
            } else {
                Ok("ok".into())
            }
        }
    }

    #[test]
    fn llm_reply_is_parsed_and_capped() {
        let e = explain_feature(&mixed(), Some(&Fixed("Media, Production, television, entertainment.\n"))).unwrap();
        assert_eq!(e.summary, "media, production, television, entertainment");
        assert_eq!(e.source, ExplanationSource::Llm);
        let long = explain_feature(&mixed(), Some(&Fixed("a,b,c,d,e,f,g,h,i,j"))).unwrap();
        assert_eq!(long.keywords().len(), MAX_SUMMARY_TERMS);
    }

    #[test]
    fn failures_fall_back_offline() {
        let empty = explain_feature(&korea(), Some(&Fixed("  \n"))).unwrap();
        assert_eq!((empty.summary.as_str(), empty.source), ("korea", ExplanationSource::OfflineFallback));
        let missing = explain_feature(&korea(), Some(&ReplayLlm::default())).unwrap();
        assert_eq!(missing.source, ExplanationSource::OfflineFallback);
    }

    #[test]
    fn retry_then_succeed() {
        let c = RetryingLlm::new(Flaky(AtomicUsize::new(0)), 3, Duration::from_millis(1));
        assert_eq!(c.complete("p").unwrap(), "ok");
        let c = RetryingLlm::new(Flaky(AtomicUsize::new(0)), 2, Duration::from_millis(1));
        assert!(c.complete("p").is_err());
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("llm.jsonl");
        let rec = RecordingLlm::new(Fixed("korea, seoul"), &log).unwrap();
        let live = explain_feature(&korea(), Some(&rec)).unwrap();
        let replay = ReplayLlm::load(&log).unwrap();
        assert_eq!(replay.len(), 1);
        assert_eq!(explain_feature(&korea(), Some(&replay)).unwrap(), live);
    }

    #[test]
    fn explanations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        let all = explain_features(&[korea(), mixed(), FeatureTrie::new(9)], None, 2).unwrap();
        assert_eq!(all.len(), 2);
        write_explanations(&path, &all).unwrap();
        assert_eq!(read_explanations(&path).unwrap(), all);
        let line = std::fs::read_to_string(&path).unwrap();
        assert!(line.starts_with(r#"{"feature":7,"summary":"korea","source":"offline","samples":3}"#));
    }
}
