//! The full synthetic pipeline: planted model, LM training by clustering,
//! synthetic shows, tree training, tuning of every mode and test scoring.

use std::collections::BTreeMap;

use topicseg::combine::{cm_dt_schema, tune, CombinerConfig, Mode, TuneGrid};
use topicseg::corpus::{write_feature_table, write_shows};
use topicseg::eval::{write_hypotheses, EvalConfig, EvalReport};
use topicseg::lm::{cluster_stories, content_bag, estimate_model, ClusterConfig, TopicClusterModel};
use topicseg::pipeline::{augmented_vectors, decode_all, lm_posteriors, prepare_shows, score, to_show_hypotheses, Models, PreparedShow};
use topicseg::synth::{generate, generate_stories, planted_model, synth_schema, FeatureProfiles, PlantedSpec, SourceTopology, StorySpec, SynthSpec};
use topicseg::tree::{train, TreeTrainConfig};
use topicseg::{ChopCriterion, DecisionTree, Story};

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub planted: PlantedSpec,
    pub stories: StorySpec,
    pub lm_clusters: usize,
    pub kmeans_passes: usize,
    pub synth: SynthSpec,
    pub grid: TuneGrid,
}

impl ExperimentSpec {
    /// Two sources with 25 shows each and a 100-cluster model. Topic words
    /// are rare enough that the LM misses short stories, and a few sentence
    /// boundaries carry topic-like prosody, which the PM mistakes for topic
    /// changes.
    pub fn standard(seed: u64) -> Self {
        let source = |name: &str, density: f64| SourceTopology {
            name: name.into(),
            shows: 25,
            sentences_per_show: (200, 260),
            sentence_words: (10, 20),
            boundary_density: density,
        };
        let mut profiles = FeatureProfiles::default();
        profiles.nontopic.pause_log_mean = -1.6;
        profiles.nontopic.pause_log_sd = 0.6;
        profiles.topic.pause_log_sd = 0.4;
        profiles.topic.f0_mean = -1.3;
        profiles.mimic_rate = 0.03;
        ExperimentSpec {
            seed,
            planted: PlantedSpec {
                topic_share: 0.08,
                ..PlantedSpec::default()
            },
            stories: StorySpec {
                count: 1500,
                min_words: 150,
                max_words: 300,
                stop_rate: 0.3,
            },
            lm_clusters: 100,
            kmeans_passes: 10,
            synth: SynthSpec {
                sources: vec![source("nwt", 0.05), source("bn", 0.08)],
                profiles,
            },
            grid: TuneGrid {
                tsp: (-48..=4).map(|e| 10f64.powf(e as f64 / 4.0)).collect(),
                mcw: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
                threshold: (1..20).map(|i| i as f64 * 0.05).chain([0.97, 0.98, 0.99, 0.995, 0.999]).collect(),
            },
        }
    }

    /// A scaled-down run for determinism checks.
    pub fn small(seed: u64) -> Self {
        let mut s = Self::standard(seed);
        s.planted.clusters = 8;
        s.stories.count = 120;
        s.lm_clusters = 8;
        for src in &mut s.synth.sources {
            src.shows = 5;
            src.sentences_per_show = (30, 50);
        }
        s.grid.tsp = vec![1e-6, 1e-3, 1e-1];
        s.grid.mcw = vec![0.5, 1.0];
        s.grid.threshold = vec![0.3, 0.5, 0.7];
        s
    }
}

pub struct ExperimentOutput {
    pub lm: TopicClusterModel,
    pub reports: BTreeMap<&'static str, EvalReport>,
    pub configs: BTreeMap<&'static str, CombinerConfig>,
    /// Serialized artifacts by name, for byte comparison.
    pub artifacts: BTreeMap<String, String>,
}

/// Show `i` of a source goes to tree training (i % 5 < 2), dev (== 2) or test.
fn split(prepared: Vec<PreparedShow>) -> (Vec<PreparedShow>, Vec<PreparedShow>, Vec<PreparedShow>) {
    let (mut tr, mut dev, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for p in prepared {
        let i: usize = p.show.show_id.rsplit('_').next().unwrap().parse().unwrap();
        match i % 5 {
            0 | 1 => tr.push(p),
            2 => dev.push(p),
            _ => te.push(p),
        }
    }
    (tr, dev, te)
}

pub fn run(spec: &ExperimentSpec) -> ExperimentOutput {
    let mut artifacts = BTreeMap::new();
    let planted = planted_model(&spec.planted, spec.seed).unwrap();
    let generated = generate_stories(&planted, &spec.stories, spec.seed + 1).unwrap();
    let stories: Vec<Story> = generated.iter().map(|g| g.to_story()).collect();
    let stoplist = planted.stoplist().clone();
    let bags: Vec<_> = stories.iter().map(|s| content_bag(s, &stoplist)).collect();
    let clustering = cluster_stories(
        &bags,
        &ClusterConfig {
            clusters: spec.lm_clusters,
            seed: spec.seed,
            max_passes: spec.kmeans_passes,
            ..ClusterConfig::default()
        },
    )
    .unwrap();
    let lm = estimate_model(&stories, &clustering.assignment, spec.lm_clusters, spec.planted.lambda, &stoplist, None).unwrap();
    artifacts.insert("lm.json".into(), lm.to_json().unwrap());

    let corpus = generate(&planted, &spec.synth, spec.seed + 2).unwrap();
    artifacts.insert("shows.txt".into(), write_shows(&corpus.shows));
    artifacts.insert("features.tsv".into(), write_feature_table(&corpus.features));
    let prepared = prepare_shows(&corpus.shows, &ChopCriterion::Sentence, Some(&lm), false, Some(&corpus.features)).unwrap();
    let (tree_train, dev, test) = split(prepared);

    let tree_cfg = TreeTrainConfig {
        seed: spec.seed,
        ..TreeTrainConfig::default()
    };
    let schema = synth_schema();
    let train_vectors: Vec<_> = tree_train.iter().flat_map(|p| p.vectors()).collect();
    let prosody = train(&train_vectors, &schema, &tree_cfg).unwrap();
    artifacts.insert("prosody_tree.json".into(), prosody.to_json().unwrap());

    let eval = EvalConfig::default();
    let base = CombinerConfig::new(Mode::Lm, spec.lm_clusters, 1e-3);
    let models = Models {
        lm: Some(&lm),
        prosody: Some(&prosody),
        cm_dt: None,
    };
    let mut configs = BTreeMap::new();
    let lm_cfg = tune(&dev, Mode::Lm, &spec.grid, &models, &base, &eval).unwrap().config;
    configs.insert("LM", lm_cfg.clone());
    configs.insert("PM", tune(&dev, Mode::Pm, &spec.grid, &models, &base, &eval).unwrap().config);
    configs.insert("CM-HMM", tune(&dev, Mode::CmHmm, &spec.grid, &models, &base, &eval).unwrap().config);

    let cm_vectors: Vec<_> = tree_train
        .iter()
        .flat_map(|p| {
            let post = lm_posteriors(p, &lm, lm_cfg.tsp_for(&p.show.source_type), false).unwrap();
            augmented_vectors(p, &post).unwrap()
        })
        .collect();
    let cm_tree: DecisionTree = train(&cm_vectors, &cm_dt_schema(&schema), &tree_cfg).unwrap();
    artifacts.insert("cm_dt_tree.json".into(), cm_tree.to_json().unwrap());
    let models = Models {
        cm_dt: Some(&cm_tree),
        ..models
    };
    let mut cm_base = lm_cfg.clone();
    cm_base.mode = Mode::CmDt;
    configs.insert("CM-DT", tune(&dev, Mode::CmDt, &spec.grid, &models, &cm_base, &eval).unwrap().config);

    let mut reports = BTreeMap::new();
    for (name, cfg) in &configs {
        let hyps = decode_all(&test, cfg, &models).unwrap();
        let report = score(&test, &hyps, &eval).unwrap();
        artifacts.insert(format!("{name}.config.json"), serde_json::to_string_pretty(cfg).unwrap());
        artifacts.insert(format!("{name}.hyp.tsv"), write_hypotheses(&to_show_hypotheses(&test, &hyps).unwrap()));
        artifacts.insert(format!("{name}.report.json"), serde_json::to_string_pretty(&report).unwrap());
        reports.insert(*name, report);
    }
    ExperimentOutput {
        lm,
        reports,
        configs,
        artifacts,
    }
}
