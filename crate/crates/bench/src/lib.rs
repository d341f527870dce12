//! Benchmark fixtures built from the synthetic generator.

use topicseg::pipeline::prepare_shows;
use topicseg::synth::{generate, planted_model, FeatureProfiles, PlantedSpec, SourceTopology, SynthSpec};
use topicseg::{ChopCriterion, PreparedShow, TopicClusterModel};

pub struct Fixture {
    pub lm: TopicClusterModel,
    pub prepared: Vec<PreparedShow>,
}

/// `clusters` planted topics, `shows` shows of about `sentences` sentences each.
pub fn fixture(clusters: usize, shows: usize, sentences: usize) -> Fixture {
    let lm = planted_model(
        &PlantedSpec {
            clusters,
            ..PlantedSpec::default()
        },
        1,
    )
    .expect("valid planted spec");
    let spec = SynthSpec {
        sources: vec![SourceTopology {
            name: "bench".into(),
            shows,
            sentences_per_show: (sentences, sentences),
            sentence_words: (8, 20),
            boundary_density: 0.08,
        }],
        profiles: FeatureProfiles::default(),
    };
    let corpus = generate(&lm, &spec, 1).expect("valid synth spec");
    let prepared = prepare_shows(&corpus.shows, &ChopCriterion::Sentence, Some(&lm), false, Some(&corpus.features))
        .expect("synthetic shows prepare");
    Fixture { lm, prepared }
}
