//! Hermetic synthetic retrieval benchmark with a planted sparse dictionary.
//!
//! Every embedding is a unit-norm, non-negative combination of exactly
//! `k_true` dictionary atoms plus clipped Gaussian noise. Atoms are drawn
//! from a Zipf distribution over atom index. Each query's first two atoms
//! are its two *perspectives*; relevant documents alternate between them,
//! reusing one and excluding the other, so documents carry a planted
//! cluster label. Texts spell each atom as a pseudo-word, padded with
//! stop words, so the text tooling has something to chew on.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, Matrix};
use crate::sae::{SaeParams, SparseLatent};
use crate::store::{EmbeddingStore, QrelSet, StoreKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub dim: usize,
    pub n_atoms: usize,
    pub k_true: usize,
    pub n_queries: usize,
    pub docs_per_query: usize,
    pub n_distractors: usize,
    pub noise_sigma: f64,
    pub zipf_exponent: f64,
    /// Scales the raw coefficient of a relevant doc's perspective atom
    /// before normalization; 1 leaves it among equals.
    #[serde(default = "unit")]
    pub cluster_weight: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            dim: 64,
            n_atoms: 256,
            k_true: 4,
            n_queries: 200,
            docs_per_query: 5,
            n_distractors: 2000,
            noise_sigma: 0.01,
            zipf_exponent: 1.1,
            cluster_weight: 1.0,
        }
    }
}

impl SynthConfig {
    /// Two perspective clusters per query, five docs each, with the
    /// perspective atom dominant in its cluster.
    pub fn two_cluster() -> Self {
        SynthConfig {
            docs_per_query: 10,
            cluster_weight: 3.0,
            ..SynthConfig::default()
        }
    }
}

/// Ground-truth sparse code of one embedding.
pub type Code = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub config: SynthConfig,
    /// n_atoms × dim, unit-norm rows.
    pub dictionary: Matrix,
    pub queries: EmbeddingStore,
    pub corpus: EmbeddingStore,
    pub qrels: QrelSet,
    pub query_codes: Vec<Code>,
    pub doc_codes: Vec<Code>,
    /// The two perspective atoms of each query.
    pub query_perspectives: Vec<(usize, usize)>,
    /// Perspective atom a relevant document was built around; `None` for distractors.
    pub doc_clusters: Vec<Option<usize>>,
    pub vocabulary: Vec<String>,
    pub query_texts: Vec<String>,
    pub doc_texts: Vec<String>,
}

const SYNTH_STREAM: u64 = 0x5359_4e54;

const STOP_WORDS: [&str; 12] = [
    "the", "of", "and", "a", "to", "in", "is", "for", "on", "with", "that", "by",
];
const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Deterministic pseudo-word for atom `i` (unique, never a stop word).
pub fn atom_word(i: usize) -> String {
    let mut word = String::from("z");
    let mut v = i;
    loop {
        word.push_str(ONSETS[v % ONSETS.len()]);
        v /= ONSETS.len();
        word.push_str(VOWELS[v % VOWELS.len()]);
        v /= VOWELS.len();
        if v == 0 {
            break;
        }
        v -= 1;
    }
    word
}

struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    fn new(n: usize, exponent: f64) -> Self {
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for r in 1..=n {
            acc += (r as f64).powf(-exponent);
            cdf.push(acc);
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        Zipf { cdf }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|c| *c < u).min(self.cdf.len() - 1)
    }

    /// `count` distinct atoms starting with `must`, avoiding `exclude`.
    fn distinct<R: Rng>(&self, rng: &mut R, count: usize, must: &[usize], exclude: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = must.to_vec();
        while out.len() < count {
            let a = self.sample(rng);
            if !out.contains(&a) && !exclude.contains(&a) {
                out.push(a);
            }
        }
        out
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn make_embedding<R: Rng>(
    rng: &mut R,
    dictionary: &Matrix,
    atoms: &[usize],
    noise: Option<&Normal<f64>>,
    sigma: f64,
    boost: Option<(usize, f64)>,
) -> (Vec<f64>, Code) {
    let mut coeffs: Vec<f64> = atoms.iter().map(|_| rng.random_range(0.5..1.5)).collect();
    if let Some((atom, w)) = boost {
        for (a, c) in atoms.iter().zip(coeffs.iter_mut()) {
            if *a == atom {
                *c *= w;
            }
        }
    }
    let mut x = vec![0.0; dictionary.cols()];
    for (a, c) in atoms.iter().zip(&coeffs) {
        axpy(*c, dictionary.row(*a), &mut x);
    }
    let norm = dot(&x, &x).sqrt();
    coeffs.iter_mut().for_each(|c| *c /= norm);
    let mut x = vec![0.0; dictionary.cols()];
    for (a, c) in atoms.iter().zip(&coeffs) {
        axpy(*c, dictionary.row(*a), &mut x);
    }
    if let Some(dist) = noise {
        for v in x.iter_mut() {
            *v += dist.sample(rng).clamp(-3.0 * sigma, 3.0 * sigma);
        }
    }
    let x = x.into_iter().map(round_f32).collect();
    let mut code: Code = atoms.iter().copied().zip(coeffs).collect();
    code.sort_by_key(|e| e.0);
    (x, code)
}

fn make_text<R: Rng>(rng: &mut R, code: &Code) -> String {
    let mut tokens: Vec<String> = Vec::new();
    for &(a, c) in code {
        let reps = ((c * 3.0).round() as usize).max(1);
        tokens.extend(std::iter::repeat_n(atom_word(a), reps));
    }
    let fillers = rng.random_range(4..10);
    let stop = Zipf::new(STOP_WORDS.len(), 1.0);
    for _ in 0..fillers {
        tokens.push(STOP_WORDS[stop.sample(rng)].to_owned());
    }
    use rand::seq::SliceRandom;
    tokens.shuffle(rng);
    tokens.join(" ")
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticBenchmark> {
    let c = config;
    if c.dim == 0 || c.n_atoms == 0 || c.k_true == 0 {
        return Err(Error::invalid("dim, n_atoms and k_true must be positive"));
    }
    if c.k_true > c.n_atoms {
        return Err(Error::invalid(format!("k_true {} exceeds n_atoms {}", c.k_true, c.n_atoms)));
    }
    if c.k_true >= 2 && c.k_true + 1 > c.n_atoms {
        return Err(Error::invalid("need at least k_true + 1 atoms to exclude the other perspective"));
    }
    if !(c.noise_sigma >= 0.0 && c.noise_sigma.is_finite()) {
        return Err(Error::invalid("noise_sigma must be finite and >= 0"));
    }
    if !(c.cluster_weight > 0.0 && c.cluster_weight.is_finite()) {
        return Err(Error::invalid("cluster_weight must be finite and > 0"));
    }
    if !(c.zipf_exponent >= 0.0 && c.zipf_exponent.is_finite()) {
        return Err(Error::invalid("zipf exponent must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    // own stream so a trainer seeded with the same value draws unrelated weights
    rng.set_stream(SYNTH_STREAM);
    let mut dictionary = Matrix::zeros(c.n_atoms, c.dim);
    for a in 0..c.n_atoms {
        let row = dictionary.row_mut(a);
        row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let n = dot(row, row).sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    let zipf = Zipf::new(c.n_atoms, c.zipf_exponent);
    let noise = (c.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, c.noise_sigma).map_err(|e| Error::invalid(e.to_string())))
        .transpose()?;

    let qw = digits(c.n_queries);
    let dw = digits(c.n_queries * c.docs_per_query + c.n_distractors);
    let mut queries = EmbeddingStore::new(c.dim, StoreKind::Query);
    let mut corpus = EmbeddingStore::new(c.dim, StoreKind::Document);
    let mut qrels = QrelSet::new();
    let (mut query_codes, mut doc_codes) = (Vec::new(), Vec::new());
    let (mut query_texts, mut doc_texts) = (Vec::new(), Vec::new());
    let mut query_perspectives = Vec::new();
    let mut doc_clusters = Vec::new();

    for qi in 0..c.n_queries {
        let query_atoms = zipf.distinct(&mut rng, c.k_true, &[], &[]);
        let (pa, pb) = (query_atoms[0], if c.k_true >= 2 { query_atoms[1] } else { query_atoms[0] });
        let (x, code) = make_embedding(&mut rng, &dictionary, &query_atoms, noise.as_ref(), c.noise_sigma, None);
        let qid = format!("q{qi:0qw$}");
        queries.push(qid.clone(), &x)?;
        query_texts.push(make_text(&mut rng, &code));
        query_codes.push(code);
        query_perspectives.push((pa, pb));
        for j in 0..c.docs_per_query {
            let (keep, drop) = if j % 2 == 0 { (pa, pb) } else { (pb, pa) };
            let exclude: Vec<usize> = if keep != drop { vec![drop] } else { vec![] };
            let mut must = vec![keep];
            if c.k_true >= 3 {
                // one non-perspective query atom, rotating through them
                must.push(query_atoms[2 + (j / 2) % (c.k_true - 2)]);
            }
            let atoms = zipf.distinct(&mut rng, c.k_true, &must, &exclude);
            let boost = (c.cluster_weight != 1.0).then_some((keep, c.cluster_weight));
            let (x, code) = make_embedding(&mut rng, &dictionary, &atoms, noise.as_ref(), c.noise_sigma, boost);
            let did = format!("d{:0dw$}", corpus.len());
            corpus.push(did.clone(), &x)?;
            qrels.insert(qid.clone(), did, 1);
            doc_texts.push(make_text(&mut rng, &code));
            doc_codes.push(code);
            doc_clusters.push(Some(keep));
        }
    }
    for _ in 0..c.n_distractors {
        let atoms = zipf.distinct(&mut rng, c.k_true, &[], &[]);
        let (x, code) = make_embedding(&mut rng, &dictionary, &atoms, noise.as_ref(), c.noise_sigma, None);
        corpus.push(format!("d{:0dw$}", corpus.len()), &x)?;
        doc_texts.push(make_text(&mut rng, &code));
        doc_codes.push(code);
        doc_clusters.push(None);
    }

    Ok(SyntheticBenchmark {
        config: c.clone(),
        dictionary,
        queries,
        corpus,
        qrels,
        query_codes,
        doc_codes,
        query_perspectives,
        doc_clusters,
        vocabulary: (0..c.n_atoms).map(atom_word).collect(),
        query_texts,
        doc_texts,
    })
}

fn digits(n: usize) -> usize {
    n.max(1).to_string().len()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedCheck {
    pub max_residual: f64,
    pub residual_bound: f64,
    pub embeddings: usize,
}

impl SyntheticBenchmark {
    /// Decoder = dictionary, encoder = dictionary (matched filter), zero biases.
    pub fn oracle_params(&self, k: usize) -> Result<SaeParams> {
        SaeParams::new(
            self.dictionary.clone(),
            vec![0.0; self.config.n_atoms],
            self.dictionary.clone(),
            vec![0.0; self.config.dim],
            k,
        )
    }

    /// Atom word → atom vector, for a toy embedder whose text space agrees
    /// with the planted embeddings.
    pub fn lexicon(&self) -> HashMap<String, Vec<f64>> {
        (0..self.config.n_atoms).map(|a| (atom_word(a), self.dictionary.row(a).to_vec())).collect()
    }

    /// Ground-truth code of a corpus row as a latent over the atoms.
    pub fn doc_code_latent(&self, row: usize) -> SparseLatent {
        SparseLatent::new(self.doc_codes[row].clone(), self.config.n_atoms).expect("sorted code")
    }

    pub fn query_code_latent(&self, row: usize) -> SparseLatent {
        SparseLatent::new(self.query_codes[row].clone(), self.config.n_atoms).expect("sorted code")
    }

    /// Whether a document's planted code uses `atom`.
    pub fn doc_uses_atom(&self, row: usize, atom: usize) -> bool {
        self.doc_codes[row].iter().any(|e| e.0 == atom)
    }

    /// Re-verifies the planted structure: exact support size, non-negative
    /// codes, relevant documents sharing a query atom, and each embedding's
    /// residual after least-squares projection onto its recorded atoms
    /// within the clipped-noise bound (plus f32 storage rounding).
    pub fn verify(&self) -> Result<PlantedCheck> {
        let c = &self.config;
        let bound = 3.0 * c.noise_sigma * (c.dim as f64).sqrt() + 1e-6;
        let mut max_residual: f64 = 0.0;
        let all = self
            .queries
            .rows()
            .zip(&self.query_codes)
            .chain(self.corpus.rows().zip(&self.doc_codes));
        let mut count = 0;
        for ((id, x), code) in all {
            if code.len() != c.k_true {
                return Err(Error::invalid(format!("{id}: support size {} != {}", code.len(), c.k_true)));
            }
            if code.iter().any(|e| e.1 < 0.0) {
                return Err(Error::invalid(format!("{id}: negative coefficient")));
            }
            let atoms: Vec<usize> = code.iter().map(|e| e.0).collect();
            let r = projection_residual(&self.dictionary, &atoms, x)?;
            max_residual = max_residual.max(r);
            if r > bound {
                return Err(Error::invalid(format!("{id}: residual {r} exceeds bound {bound}")));
            }
            count += 1;
        }
        for (qi, qid) in self.queries.ids().iter().enumerate() {
            for did in self.qrels.relevant(qid) {
                let row = self.corpus.position(did).ok_or_else(|| Error::invalid(format!("missing {did}")))?;
                let shared = self.doc_codes[row]
                    .iter()
                    .any(|(a, _)| self.query_codes[qi].iter().any(|(b, _)| a == b));
                if !shared {
                    return Err(Error::invalid(format!("{did} shares no atom with {qid}")));
                }
            }
        }
        Ok(PlantedCheck {
            max_residual,
            residual_bound: bound,
            embeddings: count,
        })
    }
}

/// ‖x − P x‖ where P projects onto span of the selected dictionary rows.
fn projection_residual(dictionary: &Matrix, atoms: &[usize], x: &[f64]) -> Result<f64> {
    let k = atoms.len();
    // normal equations G c = b, solved by Gaussian elimination with partial pivoting
    let mut g = vec![vec![0.0; k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            g[i][j] = dot(dictionary.row(atoms[i]), dictionary.row(atoms[j]));
        }
        g[i][k] = dot(dictionary.row(atoms[i]), x);
    }
    for col in 0..k {
        let piv = (col..k)
            .max_by(|a, b| g[*a][col].abs().total_cmp(&g[*b][col].abs()))
            .expect("non-empty");
        g.swap(col, piv);
        let p = g[col][col];
        if p.abs() < 1e-12 {
            return Err(Error::invalid("degenerate atom set"));
        }
        for r in 0..k {
            if r != col {
                let f = g[r][col] / p;
                for cc in col..=k {
                    g[r][cc] -= f * g[col][cc];
                }
            }
        }
    }
    let mut resid = x.to_vec();
    for i in 0..k {
        axpy(-(g[i][k] / g[i][i]), dictionary.row(atoms[i]), &mut resid);
    }
    Ok(dot(&resid, &resid).sqrt())
}

/// With an oracle SAE feature index equals atom index, so a document is
/// related to a feature when its planted code uses that atom.
impl crate::control::Labeler for SyntheticBenchmark {
    fn related(&self, doc_id: &str, feature: usize) -> Option<bool> {
        let row = self.corpus.position(doc_id)?;
        Some(self.doc_uses_atom(row, feature))
    }
}
