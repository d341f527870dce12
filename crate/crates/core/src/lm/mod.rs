//! Topic-cluster unigram language models.
//!
//! Each cluster keeps relative word frequencies over a content vocabulary
//! (stop words excluded). Queries interpolate the cluster distribution with a
//! global add-one smoothed unigram whose extra outcome is the unknown word, so
//! every distribution sums to one over `vocab ∪ {UNK}`.

mod kmeans;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chop::ChopUnit;
use crate::corpus::{Show, Story};
use crate::error::{read_to_string, Error, Result};

pub use kmeans::{cluster_stories, symmetric_kl, ClusterConfig, Clustering};

pub const UNK: &str = "<UNK>";
pub const DEFAULT_LAMBDA: f64 = 0.9;
pub const DEFAULT_CLUSTERS: usize = 100;
const FORMAT: &str = "topicseg-lm";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stoplist {
    pub words: BTreeSet<String>,
    /// Words shorter than this (in chars) are dropped as well.
    pub min_word_len: usize,
}

impl Stoplist {
    pub fn new<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Self {
        Stoplist {
            words: words.into_iter().map(Into::into).collect(),
            min_word_len: 1,
        }
    }

    pub fn empty() -> Self {
        Stoplist::new(Vec::<String>::new())
    }

    /// One word per line; blank lines and `#` comments ignored.
    pub fn parse(text: &str) -> Self {
        Stoplist::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Stoplist::parse(&read_to_string(path)?))
    }

    pub fn is_content(&self, word: &str) -> bool {
        word.chars().count() >= self.min_word_len && !self.words.contains(word)
    }

    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        h.update(format!("min_word_len={}", self.min_word_len).as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Content-word counts of a story.
pub fn content_bag(story: &Story, stoplist: &Stoplist) -> BTreeMap<String, u32> {
    story
        .word_counts
        .iter()
        .filter(|(w, _)| stoplist.is_content(w))
        .map(|(w, &c)| (w.clone(), c))
        .collect()
}

/// Which unigram distribution to query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    Topic(usize),
    Begin,
    End,
}

/// Word sequences of the first and last units of annotated training segments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeUnits {
    pub initial: Vec<Vec<String>>,
    pub final_: Vec<Vec<String>>,
}

impl EdgeUnits {
    /// First and last `n_words` running words of each story.
    pub fn from_stories_text(stories: &[Vec<String>], n_words: usize) -> Self {
        let mut edges = EdgeUnits::default();
        for words in stories.iter().filter(|w| !w.is_empty()) {
            let n = n_words.min(words.len());
            edges.initial.push(words[..n].to_vec());
            edges.final_.push(words[words.len() - n..].to_vec());
        }
        edges
    }

    /// First and last chopped unit of every reference segment of each show.
    pub fn from_chopped_shows(shows: &[(Show, Vec<ChopUnit>)]) -> Self {
        let mut edges = EdgeUnits::default();
        for (show, units) in shows {
            let words = |u: &ChopUnit| -> Vec<String> {
                show.tokens[u.first..=u.last]
                    .iter()
                    .map(|t| t.text.clone())
                    .collect()
            };
            let proj = crate::chop::project_boundaries(show, units);
            let mut seg_start = 0;
            for i in 0..units.len() {
                let ends_segment = i + 1 == units.len() || proj.labels[i];
                if ends_segment {
                    edges.initial.push(words(&units[seg_start]));
                    edges.final_.push(words(&units[i]));
                    seg_start = i + 1;
                }
            }
        }
        edges
    }
}

/// C smoothed topic unigrams plus global and optional BEGIN/END unigrams.
#[derive(Debug, Clone)]
pub struct TopicClusterModel {
    lambda: f64,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    /// Relative frequencies over `vocab`, one row per cluster.
    cluster_freq: Vec<Vec<f64>>,
    /// Add-one smoothed over `vocab` followed by UNK.
    global: Vec<f64>,
    begin_freq: Option<Vec<f64>>,
    end_freq: Option<Vec<f64>>,
    stoplist: Stoplist,
}

impl PartialEq for TopicClusterModel {
    fn eq(&self, other: &Self) -> bool {
        self.lambda == other.lambda
            && self.vocab == other.vocab
            && self.cluster_freq == other.cluster_freq
            && self.global == other.global
            && self.begin_freq == other.begin_freq
            && self.end_freq == other.end_freq
            && self.stoplist == other.stoplist
    }
}

fn relative_freq(counts: &[f64], fallback: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        counts.iter().map(|c| c / total).collect()
    } else {
        // no content words: fall back to the global shape over the vocabulary
        let z: f64 = fallback[..counts.len()].iter().sum();
        fallback[..counts.len()].iter().map(|g| g / z).collect()
    }
}

/// Estimates the cluster model from clustered stories.
pub fn estimate_model(
    stories: &[Story],
    assignment: &[usize],
    n_clusters: usize,
    lambda: f64,
    stoplist: &Stoplist,
    edges: Option<&EdgeUnits>,
) -> Result<TopicClusterModel> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::config(format!("lambda must lie in (0, 1], got {lambda}")));
    }
    if assignment.len() != stories.len() {
        return Err(Error::invalid("assignment length differs from story count"));
    }
    if let Some(&bad) = assignment.iter().find(|&&a| a >= n_clusters) {
        return Err(Error::invalid(format!("assignment names cluster {bad} >= {n_clusters}")));
    }
    let bags: Vec<_> = stories.iter().map(|s| content_bag(s, stoplist)).collect();
    let mut vocab: BTreeSet<String> = bags.iter().flat_map(|b| b.keys().cloned()).collect();
    if let Some(e) = edges {
        for w in e.initial.iter().chain(&e.final_).flatten() {
            if stoplist.is_content(w) {
                vocab.insert(w.clone());
            }
        }
    }
    let vocab: Vec<String> = vocab.into_iter().collect();
    let index: HashMap<String, usize> =
        vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    let v = vocab.len();

    let mut cluster_counts = vec![vec![0.0; v]; n_clusters];
    let mut members = vec![0usize; n_clusters];
    let mut global_counts = vec![0.0; v];
    for (bag, &c) in bags.iter().zip(assignment) {
        members[c] += 1;
        for (w, &n) in bag {
            let i = index[w];
            cluster_counts[c][i] += n as f64;
            global_counts[i] += n as f64;
        }
    }
    if let Some(empty) = members.iter().position(|&m| m == 0) {
        return Err(Error::invalid(format!("cluster {empty} has no stories")));
    }
    let total: f64 = global_counts.iter().sum();
    let denom = total + v as f64 + 1.0;
    let mut global: Vec<f64> = global_counts.iter().map(|c| (c + 1.0) / denom).collect();
    global.push(1.0 / denom);

    let cluster_freq = cluster_counts
        .iter()
        .map(|c| relative_freq(c, &global))
        .collect();
    let edge_freq = |units: &[Vec<String>]| {
        let mut counts = vec![0.0; v];
        for w in units.iter().flatten() {
            if let Some(&i) = index.get(w) {
                counts[i] += 1.0;
            }
        }
        relative_freq(&counts, &global)
    };
    Ok(TopicClusterModel {
        lambda,
        begin_freq: edges.map(|e| edge_freq(&e.initial)),
        end_freq: edges.map(|e| edge_freq(&e.final_)),
        vocab,
        index,
        cluster_freq,
        global,
        stoplist: stoplist.clone(),
    })
}

impl TopicClusterModel {
    pub fn n_clusters(&self) -> usize {
        self.cluster_freq.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn stoplist(&self) -> &Stoplist {
        &self.stoplist
    }

    pub fn has_begin_end(&self) -> bool {
        self.begin_freq.is_some() && self.end_freq.is_some()
    }

    /// Vocabulary index, or `vocab.len()` for UNK.
    pub fn word_id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(self.vocab.len())
    }

    pub fn global_prob(&self, word: &str) -> f64 {
        self.global[self.word_id(word)]
    }

    fn freq(&self, dist: Distribution) -> &[f64] {
        match dist {
            Distribution::Topic(j) => &self.cluster_freq[j],
            Distribution::Begin => self.begin_freq.as_deref().expect("model has no BEGIN unigram"),
            Distribution::End => self.end_freq.as_deref().expect("model has no END unigram"),
        }
    }

    fn prob_id(&self, dist: Distribution, id: usize) -> f64 {
        let rel = self.freq(dist).get(id).copied().unwrap_or(0.0);
        self.lambda * rel + (1.0 - self.lambda) * self.global[id]
    }

    /// Smoothed probability of `word` under `dist`.
    pub fn prob(&self, dist: Distribution, word: &str) -> f64 {
        self.prob_id(dist, self.word_id(word))
    }

    /// Log probability of the content words of a unit; stop words contribute nothing.
    pub fn unit_log_likelihood<'a>(
        &self,
        dist: Distribution,
        words: impl IntoIterator<Item = &'a str>,
    ) -> f64 {
        words
            .into_iter()
            .filter(|w| self.stoplist.is_content(w))
            .map(|w| self.prob(dist, w).ln())
            .sum()
    }

    /// Log likelihoods of every unit of a show under every topic cluster (and
    /// BEGIN/END when requested).
    pub fn unit_emissions(
        &self,
        show: &Show,
        units: &[ChopUnit],
        with_begin_end: bool,
    ) -> Result<crate::hmm::Emissions> {
        if with_begin_end && !self.has_begin_end() {
            return Err(Error::config("model has no BEGIN/END unigrams"));
        }
        let c = self.n_clusters();
        let mut topic = Vec::with_capacity(units.len() * c);
        let mut begin = Vec::new();
        let mut end = Vec::new();
        // per distribution, log probability of each distinct word id
        let mut ids: Vec<usize> = Vec::new();
        for u in units {
            ids.clear();
            ids.extend(
                show.tokens[u.first..=u.last]
                    .iter()
                    .filter(|t| self.stoplist.is_content(&t.text))
                    .map(|t| self.word_id(&t.text)),
            );
            for j in 0..c {
                topic.push(ids.iter().map(|&i| self.prob_id(Distribution::Topic(j), i).ln()).sum());
            }
            if with_begin_end {
                begin.push(ids.iter().map(|&i| self.prob_id(Distribution::Begin, i).ln()).sum());
                end.push(ids.iter().map(|&i| self.prob_id(Distribution::End, i).ln()).sum());
            }
        }
        let mut e = crate::hmm::Emissions::new(units.len(), c, topic)?;
        if with_begin_end {
            e = e.with_begin_end(begin, end)?;
        }
        Ok(e)
    }

    pub fn to_json(&self) -> Result<String> {
        let sparse = |row: &[f64]| -> BTreeMap<String, f64> {
            row.iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(i, &p)| (self.vocab[i].clone(), p))
                .collect()
        };
        let mut global: BTreeMap<String, f64> = self
            .vocab
            .iter()
            .cloned()
            .zip(self.global.iter().copied())
            .collect();
        global.insert(UNK.to_string(), self.global[self.vocab.len()]);
        let doc = ModelDocument {
            format: FORMAT.to_string(),
            version: VERSION,
            clusters: self.n_clusters(),
            lambda: self.lambda,
            vocab: self.vocab.clone(),
            stoplist: self.stoplist.words.iter().cloned().collect(),
            min_word_len: self.stoplist.min_word_len,
            stoplist_sha256: self.stoplist.sha256(),
            global_unigram: global,
            cluster_unigrams: self.cluster_freq.iter().map(|r| sparse(r)).collect(),
            begin_unigram: self.begin_freq.as_deref().map(sparse),
            end_unigram: self.end_freq.as_deref().map(sparse),
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(Error::invalid(format!(
                "unsupported model document {} v{}",
                doc.format, doc.version
            )));
        }
        if doc.cluster_unigrams.len() != doc.clusters {
            return Err(Error::invalid("cluster count does not match cluster_unigrams"));
        }
        let stoplist = Stoplist {
            words: doc.stoplist.into_iter().collect(),
            min_word_len: doc.min_word_len,
        };
        if stoplist.sha256() != doc.stoplist_sha256 {
            return Err(Error::invalid("stoplist hash mismatch"));
        }
        let index: HashMap<String, usize> =
            doc.vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let dense = |m: &BTreeMap<String, f64>| -> Result<Vec<f64>> {
            let mut row = vec![0.0; doc.vocab.len()];
            for (w, &p) in m {
                let i = *index
                    .get(w)
                    .ok_or_else(|| Error::invalid(format!("word {w:?} outside vocab")))?;
                row[i] = p;
            }
            Ok(row)
        };
        let mut global = Vec::with_capacity(doc.vocab.len() + 1);
        for w in &doc.vocab {
            global.push(*doc.global_unigram.get(w).ok_or_else(|| {
                Error::invalid(format!("global unigram lacks {w:?}"))
            })?);
        }
        global.push(
            *doc.global_unigram
                .get(UNK)
                .ok_or_else(|| Error::invalid("global unigram lacks UNK"))?,
        );
        Ok(TopicClusterModel {
            lambda: doc.lambda,
            cluster_freq: doc.cluster_unigrams.iter().map(dense).collect::<Result<_>>()?,
            begin_freq: doc.begin_unigram.as_ref().map(dense).transpose()?,
            end_freq: doc.end_unigram.as_ref().map(dense).transpose()?,
            global,
            vocab: doc.vocab,
            index,
            stoplist,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }

    /// Builds a model directly from per-cluster relative frequencies (rows over
    /// `vocab`), e.g. for generating synthetic data.
    pub fn from_distributions(
        vocab: Vec<String>,
        cluster_freq: Vec<Vec<f64>>,
        lambda: f64,
        stoplist: Stoplist,
    ) -> Result<Self> {
        let v = vocab.len();
        if cluster_freq.is_empty() || cluster_freq.iter().any(|r| r.len() != v) {
            return Err(Error::invalid("cluster rows must match the vocabulary"));
        }
        let unique: BTreeSet<&String> = vocab.iter().collect();
        if unique.len() != v {
            return Err(Error::invalid("vocabulary has duplicates"));
        }
        let c = cluster_freq.len() as f64;
        let mut global: Vec<f64> = (0..v)
            .map(|i| cluster_freq.iter().map(|r| r[i]).sum::<f64>() / c)
            .collect();
        let z: f64 = global.iter().sum::<f64>() + 1e-6;
        global.iter_mut().for_each(|g| *g /= z);
        global.push(1.0 - global.iter().sum::<f64>());
        let cluster_freq = cluster_freq
            .iter()
            .map(|r| relative_freq(r, &global))
            .collect();
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(TopicClusterModel {
            lambda,
            vocab,
            index,
            cluster_freq,
            global,
            begin_freq: None,
            end_freq: None,
            stoplist,
        })
    }

    /// Unsmoothed relative frequencies of cluster `j` over the vocabulary.
    pub fn cluster_frequencies(&self, j: usize) -> &[f64] {
        &self.cluster_freq[j]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    clusters: usize,
    lambda: f64,
    vocab: Vec<String>,
    stoplist: Vec<String>,
    min_word_len: usize,
    stoplist_sha256: String,
    global_unigram: BTreeMap<String, f64>,
    cluster_unigrams: Vec<BTreeMap<String, f64>>,
    begin_unigram: Option<BTreeMap<String, f64>>,
    end_unigram: Option<BTreeMap<String, f64>>,
}
