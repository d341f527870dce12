//! Synthetic multi-topic shows with known boundaries.
//!
//! Stories draw their content words from one cluster of a topic model;
//! sentence-final pauses, turn changes and an F0-difference feature come
//! from class-conditional profiles (topic boundary vs. other sentence end).

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    BoundaryFeatureVector, FeatureKind, FeatureSchema, FeatureTable, FeatureValue, Gender, Show, Story, Token, F0_MEAN_DIFF,
    GENDER, PAUSE_DURATION, TURN_FLAG,
};
use crate::error::{Error, Result};
use crate::lm::{Stoplist, TopicClusterModel};

pub const STOP_WORDS: [&str; 16] = [
    "the", "a", "of", "to", "and", "in", "is", "that", "for", "on", "with", "as", "at", "by", "it", "was",
];

/// Shape of a generated topic model: each cluster owns `topic_words` words
/// carrying `topic_share` of its mass; the rest is spread over shared words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedSpec {
    pub clusters: usize,
    pub topic_words: usize,
    pub shared_words: usize,
    pub topic_share: f64,
    /// Zipf exponent of word ranks within each group.
    pub zipf: f64,
    pub lambda: f64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            clusters: 100,
            topic_words: 40,
            shared_words: 400,
            topic_share: 0.5,
            zipf: 1.0,
            lambda: 0.9,
        }
    }
}

/// Builds a topic model with planted cluster-specific vocabularies.
pub fn planted_model(spec: &PlantedSpec, seed: u64) -> Result<TopicClusterModel> {
    if spec.clusters == 0 || spec.topic_words == 0 {
        return Err(Error::config("planted model needs clusters and topic words"));
    }
    if !(0.0..=1.0).contains(&spec.topic_share) || (spec.shared_words == 0 && spec.topic_share < 1.0) {
        return Err(Error::config("topic_share must be in [0, 1] and shared words must carry the rest"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = |n: usize| -> Vec<f64> {
        let w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-spec.zipf)).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    };
    let topic_w = zipf(spec.topic_words);
    let shared_w = zipf(spec.shared_words);
    let mut vocab: Vec<String> = Vec::new();
    for j in 0..spec.clusters {
        for m in 0..spec.topic_words {
            vocab.push(format!("t{j}w{m}"));
        }
    }
    for m in 0..spec.shared_words {
        vocab.push(format!("s{m}"));
    }
    let shared_base = spec.clusters * spec.topic_words;
    // shared words follow one distribution in every cluster
    let mut shared_ranks: Vec<usize> = (0..spec.shared_words).collect();
    shared_ranks.shuffle(&mut rng);
    let mut rows = Vec::with_capacity(spec.clusters);
    for j in 0..spec.clusters {
        let mut row = vec![0.0; vocab.len()];
        let mut ranks: Vec<usize> = (0..spec.topic_words).collect();
        ranks.shuffle(&mut rng);
        for (m, &r) in ranks.iter().enumerate() {
            row[j * spec.topic_words + m] = spec.topic_share * topic_w[r];
        }
        for (m, &r) in shared_ranks.iter().enumerate() {
            row[shared_base + m] = (1.0 - spec.topic_share) * shared_w[r];
        }
        rows.push(row);
    }
    TopicClusterModel::from_distributions(vocab, rows, spec.lambda, Stoplist::new(STOP_WORDS))
}

struct WordSampler<'a> {
    model: &'a TopicClusterModel,
    clusters: Vec<WeightedIndex<f64>>,
    stop_words: Vec<String>,
    stop_rate: f64,
}

impl<'a> WordSampler<'a> {
    fn new(model: &'a TopicClusterModel, stop_rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&stop_rate) {
            return Err(Error::config("stop_rate must lie in [0, 1)"));
        }
        let clusters = (0..model.n_clusters())
            .map(|j| {
                WeightedIndex::new(model.cluster_frequencies(j))
                    .map_err(|e| Error::invalid(format!("cluster {j} cannot be sampled: {e}")))
            })
            .collect::<Result<_>>()?;
        let stop_words: Vec<String> = model.stoplist().words.iter().cloned().collect();
        if stop_rate > 0.0 && stop_words.is_empty() {
            return Err(Error::config("stop_rate > 0 needs a model stoplist"));
        }
        Ok(WordSampler { model, clusters, stop_words, stop_rate })
    }

    fn word(&self, cluster: usize, rng: &mut ChaCha8Rng) -> String {
        if self.stop_rate > 0.0 && rng.random_bool(self.stop_rate) {
            self.stop_words[rng.random_range(0..self.stop_words.len())].clone()
        } else {
            self.model.vocab()[self.clusters[cluster].sample(rng)].clone()
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorySpec {
    pub count: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub stop_rate: f64,
}

impl Default for StorySpec {
    fn default() -> Self {
        StorySpec {
            count: 3000,
            min_words: 300,
            max_words: 600,
            stop_rate: 0.3,
        }
    }
}

/// A generated training story with its word sequence and source cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStory {
    pub story_id: String,
    pub cluster: usize,
    pub words: Vec<String>,
}

impl GeneratedStory {
    pub fn to_story(&self) -> Story {
        Story::from_words(self.story_id.clone(), self.words.iter().map(String::as_str))
    }
}

/// Training stories, each drawn from a uniformly chosen cluster.
pub fn generate_stories(model: &TopicClusterModel, spec: &StorySpec, seed: u64) -> Result<Vec<GeneratedStory>> {
    if spec.min_words == 0 || spec.min_words > spec.max_words {
        return Err(Error::config("story length range must satisfy 1 <= min_words <= max_words"));
    }
    let sampler = WordSampler::new(model, spec.stop_rate)?;
    Ok((0..spec.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let cluster = rng.random_range(0..model.n_clusters());
            let n = rng.random_range(spec.min_words..=spec.max_words);
            GeneratedStory {
                story_id: format!("story{i:05}"),
                cluster,
                words: (0..n).map(|_| sampler.word(cluster, &mut rng)).collect(),
            }
        })
        .collect())
}

/// Story file text: `<story_id> TAB <words>` per line.
pub fn write_stories(stories: &[GeneratedStory]) -> String {
    stories
        .iter()
        .map(|s| format!("{}\t{}\n", s.story_id, s.words.join(" ")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceTopology {
    pub name: String,
    pub shows: usize,
    pub sentences_per_show: (usize, usize),
    pub sentence_words: (usize, usize),
    /// Probability that a sentence end is also a story end.
    pub boundary_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    /// Pause after the sentence: log-normal parameters (log seconds).
    pub pause_log_mean: f64,
    pub pause_log_sd: f64,
    /// F0 difference across the boundary: normal parameters.
    pub f0_mean: f64,
    pub f0_sd: f64,
    pub turn_prob: f64,
}

impl ClassProfile {
    pub fn pause_mean(&self) -> f64 {
        (self.pause_log_mean + 0.5 * self.pause_log_sd * self.pause_log_sd).exp()
    }

    fn validate(&self, which: &str) -> Result<()> {
        if !(self.pause_log_sd > 0.0) || !(self.f0_sd > 0.0) {
            return Err(Error::config(format!("{which} profile needs positive spreads")));
        }
        if !self.pause_log_mean.is_finite() || !self.f0_mean.is_finite() {
            return Err(Error::config(format!("{which} profile means must be finite")));
        }
        if !(0.0..=1.0).contains(&self.turn_prob) {
            return Err(Error::config(format!("{which} turn_prob must lie in [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureProfiles {
    pub topic: ClassProfile,
    pub nontopic: ClassProfile,
    /// Pause between words inside a sentence (log-normal, log seconds).
    pub word_gap_log_mean: f64,
    pub word_gap_log_sd: f64,
    pub word_duration: f64,
    pub stop_rate: f64,
    /// Share of nontopic boundaries whose prosody is drawn from the topic profile.
    #[serde(default)]
    pub mimic_rate: f64,
}

impl Default for FeatureProfiles {
    fn default() -> Self {
        FeatureProfiles {
            topic: ClassProfile {
                pause_log_mean: 0.0,
                pause_log_sd: 0.5,
                f0_mean: -1.0,
                f0_sd: 1.0,
                turn_prob: 0.6,
            },
            nontopic: ClassProfile {
                pause_log_mean: -1.2,
                pause_log_sd: 0.6,
                f0_mean: 0.0,
                f0_sd: 1.0,
                turn_prob: 0.15,
            },
            word_gap_log_mean: -3.0,
            word_gap_log_sd: 0.5,
            word_duration: 0.3,
            stop_rate: 0.3,
            mimic_rate: 0.0,
        }
    }
}

/// Everything the generator needs besides the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub sources: Vec<SourceTopology>,
    pub profiles: FeatureProfiles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub shows: Vec<Show>,
    pub features: FeatureTable,
}

/// Schema of generated feature tables.
pub fn synth_schema() -> FeatureSchema {
    FeatureSchema::closed([
        (PAUSE_DURATION.to_string(), FeatureKind::Numeric),
        (F0_MEAN_DIFF.to_string(), FeatureKind::Numeric),
        (TURN_FLAG.to_string(), FeatureKind::Categorical),
        (GENDER.to_string(), FeatureKind::Categorical),
    ])
}

const SPEAKERS: [(&str, Gender); 4] = [
    ("spk0", Gender::Male),
    ("spk1", Gender::Female),
    ("spk2", Gender::Male),
    ("spk3", Gender::Female),
];

fn validate_spec(spec: &SynthSpec) -> Result<()> {
    let p = &spec.profiles;
    p.topic.validate("topic")?;
    p.nontopic.validate("nontopic")?;
    if !(0.0..=1.0).contains(&p.mimic_rate) {
        return Err(Error::config("mimic_rate must lie in [0, 1]"));
    }
    if !(p.word_gap_log_sd > 0.0) || !(p.word_duration > 0.0) || !p.word_gap_log_mean.is_finite() {
        return Err(Error::config("word timing parameters must be positive"));
    }
    for s in &spec.sources {
        let (a, b) = s.sentences_per_show;
        let (c, d) = s.sentence_words;
        if a == 0 || a > b || c == 0 || c > d {
            return Err(Error::config(format!("source {}: ranges must satisfy 1 <= min <= max", s.name)));
        }
        if !(0.0..=1.0).contains(&s.boundary_density) {
            return Err(Error::config(format!("source {}: boundary_density must lie in [0, 1]", s.name)));
        }
    }
    Ok(())
}

fn generate_show(
    show_id: String,
    source: &SourceTopology,
    profiles: &FeatureProfiles,
    sampler: &WordSampler,
    n_clusters: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Show, Vec<BoundaryFeatureVector>)> {
    let dist = |mu: f64, sd: f64| LogNormal::new(mu, sd).map_err(|e| Error::config(e.to_string()));
    let word_gap = dist(profiles.word_gap_log_mean, profiles.word_gap_log_sd)?;
    let pause = [
        dist(profiles.nontopic.pause_log_mean, profiles.nontopic.pause_log_sd)?,
        dist(profiles.topic.pause_log_mean, profiles.topic.pause_log_sd)?,
    ];
    let normal = |c: &ClassProfile| Normal::new(c.f0_mean, c.f0_sd).map_err(|e| Error::config(e.to_string()));
    let f0 = [normal(&profiles.nontopic)?, normal(&profiles.topic)?];
    let class = [&profiles.nontopic, &profiles.topic];

    let n_sent = rng.random_range(source.sentences_per_show.0..=source.sentences_per_show.1);
    let mut cluster = rng.random_range(0..n_clusters);
    let mut speaker = 0usize;
    let mut t = 0.0f64;
    let mut tokens = Vec::new();
    let mut sentence_ends = Vec::new();
    let mut refs = Vec::new();
    let mut vectors = Vec::new();
    for s in 0..n_sent {
        let n_words = rng.random_range(source.sentence_words.0..=source.sentence_words.1);
        let (spk, gender) = SPEAKERS[speaker];
        for w in 0..n_words {
            if w > 0 {
                t += word_gap.sample(rng);
            }
            let dur = profiles.word_duration * rng.random_range(0.5..1.5);
            tokens.push(Token::new(sampler.word(cluster, rng), t, t + dur).with_speaker(spk, Some(gender)));
            t += dur;
        }
        if s + 1 == n_sent {
            break;
        }
        let b = tokens.len();
        let topic = rng.random_bool(source.boundary_density);
        let c = usize::from(topic || rng.random_bool(profiles.mimic_rate));
        let gap = pause[c].sample(rng);
        let turn = rng.random_bool(class[c].turn_prob);
        if turn {
            speaker = (speaker + rng.random_range(1..SPEAKERS.len())) % SPEAKERS.len();
        }
        let mut v = BoundaryFeatureVector::new(show_id.clone(), b)
            .with(PAUSE_DURATION, FeatureValue::Num(gap))
            .with(TURN_FLAG, FeatureValue::Cat(if turn { "1" } else { "0" }.into()))
            .with(GENDER, FeatureValue::Cat(SPEAKERS[speaker].1.as_str().into()));
        if !turn {
            // F0 differences are undefined across speakers
            v = v.with(F0_MEAN_DIFF, FeatureValue::Num(f0[c].sample(rng)));
        }
        v.label = Some(topic);
        vectors.push(v);
        sentence_ends.push(b);
        if topic {
            refs.push(b);
            if n_clusters > 1 {
                cluster = (cluster + rng.random_range(1..n_clusters)) % n_clusters;
            }
        }
        t += gap;
    }
    let duration = t + 1.0;
    let show = Show {
        show_id,
        source_type: source.name.clone(),
        tokens,
        ref_boundaries: refs,
        sentence_boundaries: Some(sentence_ends),
        duration,
    };
    show.validate()?;
    Ok((show, vectors))
}

/// Generates every show of every source; show `i` uses its own random stream.
pub fn generate(model: &TopicClusterModel, spec: &SynthSpec, seed: u64) -> Result<SynthCorpus> {
    validate_spec(spec)?;
    let sampler = WordSampler::new(model, spec.profiles.stop_rate)?;
    let jobs: Vec<(String, &SourceTopology)> = spec
        .sources
        .iter()
        .flat_map(|s| (0..s.shows).map(move |i| (format!("{}_{i:03}", s.name), s)))
        .collect();
    let generated: Vec<(Show, Vec<BoundaryFeatureVector>)> = jobs
        .into_par_iter()
        .enumerate()
        .map(|(i, (id, src))| {
            let mut rng = stream_rng(seed, i as u64);
            generate_show(id, src, &spec.profiles, &sampler, model.n_clusters(), &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut shows = Vec::with_capacity(generated.len());
    let mut vectors = Vec::new();
    for (s, v) in generated {
        shows.push(s);
        vectors.extend(v);
    }
    Ok(SynthCorpus {
        shows,
        features: FeatureTable::new(synth_schema(), vectors)?,
    })
}

/// Mean of each numeric feature per class in a labeled table.
pub fn class_means(table: &FeatureTable, feature: &str) -> BTreeMap<bool, f64> {
    let mut acc: BTreeMap<bool, (f64, usize)> = BTreeMap::new();
    for v in &table.vectors {
        if let (Some(l), Some(x)) = (v.label, v.get(feature).and_then(FeatureValue::as_num)) {
            let e = acc.entry(l).or_default();
            e.0 += x;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect()
}
