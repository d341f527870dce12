mod common;

use common::word_probe_oracle;
use proptest::prelude::*;
use topicseg::combine::{cm_dt_decide, cm_dt_schema, tune};
use topicseg::eval::{c_seg, ProbeCounts};
use topicseg::pipeline::{augmented_vectors, decode, lm_posteriors, prepare_shows, Models, PreparedShow};
use topicseg::synth::{generate, planted_model, synth_schema, FeatureProfiles, PlantedSpec, SourceTopology, SynthSpec};
use topicseg::tree::train;
use topicseg::{ChopCriterion, CombinerConfig, DecisionTree, EvalConfig, Mode, TopicClusterModel, TreeTrainConfig, TuneGrid};

struct Fixture {
    lm: TopicClusterModel,
    prosody: DecisionTree,
    cm_dt: DecisionTree,
    train: Vec<PreparedShow>,
    dev: Vec<PreparedShow>,
}

const CLUSTERS: usize = 6;

/// A planted model used directly as the LM, a sparse and a dense source,
/// and trees trained on the even-numbered shows.
fn fixture(seed: u64) -> Fixture {
    let lm = planted_model(
        &PlantedSpec {
            clusters: CLUSTERS,
            topic_words: 30,
            shared_words: 100,
            topic_share: 0.15,
            ..PlantedSpec::default()
        },
        seed,
    )
    .unwrap();
    let source = |name: &str, density: f64| SourceTopology {
        name: name.into(),
        shows: 12,
        sentences_per_show: (60, 80),
        sentence_words: (8, 14),
        boundary_density: density,
    };
    let spec = SynthSpec {
        sources: vec![source("sparse", 0.04), source("dense", 0.3)],
        profiles: FeatureProfiles::default(),
    };
    let corpus = generate(&lm, &spec, seed).unwrap();
    let prepared = prepare_shows(&corpus.shows, &ChopCriterion::Sentence, Some(&lm), false, Some(&corpus.features)).unwrap();
    let (train_shows, dev): (Vec<_>, Vec<_>) = prepared.into_iter().enumerate().partition(|(i, _)| i % 2 == 0);
    let train_shows: Vec<PreparedShow> = train_shows.into_iter().map(|x| x.1).collect();
    let dev: Vec<PreparedShow> = dev.into_iter().map(|x| x.1).collect();
    let cfg = TreeTrainConfig {
        seed,
        ..TreeTrainConfig::default()
    };
    let vectors: Vec<_> = train_shows.iter().flat_map(|p| p.vectors()).collect();
    let prosody = train(&vectors, &synth_schema(), &cfg).unwrap();
    let cm_vectors: Vec<_> = train_shows
        .iter()
        .flat_map(|p| augmented_vectors(p, &lm_posteriors(p, &lm, 1e-3, false).unwrap()).unwrap())
        .collect();
    let cm_dt = train(&cm_vectors, &cm_dt_schema(&synth_schema()), &cfg).unwrap();
    Fixture {
        lm,
        prosody,
        cm_dt,
        train: train_shows,
        dev,
    }
}

fn models(f: &Fixture) -> Models<'_> {
    Models {
        lm: Some(&f.lm),
        prosody: Some(&f.prosody),
        cm_dt: Some(&f.cm_dt),
    }
}

fn decisions(f: &Fixture, models: &Models, config: &CombinerConfig) -> Vec<Vec<bool>> {
    f.dev.iter().map(|p| decode(p, config, models).unwrap().decisions).collect()
}

fn hyp_boundaries(p: &PreparedShow, d: &[bool]) -> Vec<usize> {
    p.units.iter().zip(d).filter(|(_, &y)| y).map(|(u, _)| u.boundary_after()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn uninformative_prosody_leaves_lm_posteriors_unchanged(seed in 0u64..1000, log_tsp in -12.0f64..0.0, mcw in 0.1f64..4.0) {
        // p = 0.5 adds the same constant to every transition; compared on
        // posteriors because units of shared words alone tie exactly, and
        // rounding of the constant can flip which tied path Viterbi keeps
        let f = fixture(seed);
        let flat = DecisionTree::leaf(synth_schema(), [50, 50]).unwrap();
        let m = Models { prosody: Some(&flat), ..models(&f) };
        let tsp = log_tsp.exp();
        let mut cm = CombinerConfig::new(Mode::CmHmm, CLUSTERS, tsp);
        cm.mcw = mcw;
        for p in &f.dev {
            let a = decode(p, &CombinerConfig::new(Mode::Lm, CLUSTERS, tsp), &m).unwrap();
            let b = decode(p, &cm, &m).unwrap();
            for (x, y) in a.posteriors.iter().zip(&b.posteriors) {
                prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn zero_weight_prosody_equals_lm_only(seed in 0u64..1000, log_tsp in -12.0f64..0.0) {
        let f = fixture(seed);
        let m = models(&f);
        let tsp = log_tsp.exp();
        let mut cm = CombinerConfig::new(Mode::CmHmm, CLUSTERS, tsp);
        cm.mcw = 0.0;
        prop_assert_eq!(decisions(&f, &m, &cm), decisions(&f, &m, &CombinerConfig::new(Mode::Lm, CLUSTERS, tsp)));
    }

    #[test]
    fn raising_the_threshold_never_adds_boundaries(seed in 0u64..1000) {
        let f = fixture(seed);
        let mut last = usize::MAX;
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let yes: usize = f
                .dev
                .iter()
                .map(|p| {
                    let v = augmented_vectors(p, &lm_posteriors(p, &f.lm, 1e-3, false).unwrap()).unwrap();
                    cm_dt_decide(&f.cm_dt, &v, t).unwrap().decisions.iter().filter(|&&d| d).count()
                })
                .sum();
            prop_assert!(yes <= last);
            last = yes;
        }
        prop_assert_eq!(last, 0);
    }
}

#[test]
fn tuning_table_matches_independent_scoring_and_picks_minima() {
    let f = fixture(21);
    let m = models(&f);
    let eval = EvalConfig::default();
    let grid = TuneGrid {
        tsp: (-10..=0).map(|e| 10f64.powi(e)).collect(),
        mcw: vec![1.0],
        threshold: vec![],
    };
    let base = CombinerConfig::new(Mode::Lm, CLUSTERS, 1e-3);
    let report = tune(&f.dev, Mode::Lm, &grid, &m, &base, &eval).unwrap();

    let mut best_global = (f64::INFINITY, 0.0);
    for &tsp in &grid.tsp {
        let d = decisions(&f, &m, &CombinerConfig::new(Mode::Lm, CLUSTERS, tsp));
        let mut pooled = ProbeCounts::default();
        for (p, d) in f.dev.iter().zip(&d) {
            let (miss, miss_den, fa, fa_den) = word_probe_oracle(p.show.tokens.len(), &p.show.ref_boundaries, &hyp_boundaries(p, d), eval.k);
            pooled.add(&ProbeCounts { miss: miss as f64, miss_den: miss_den as f64, fa: fa as f64, fa_den: fa_den as f64 });
        }
        let cost = c_seg(pooled.p_miss(), pooled.p_fa(), &eval).unwrap();
        let row = report.table.iter().find(|r| r.source.is_none() && r.tsp == Some(tsp)).unwrap();
        assert!((row.c_seg.unwrap() - cost).abs() < 1e-12);
        if cost < best_global.0 {
            best_global = (cost, tsp);
        }
    }
    assert_eq!(report.config.tsp, best_global.1);
    for (src, params) in &report.config.per_source {
        let rows: Vec<_> = report.table.iter().filter(|r| r.source.as_deref() == Some(src)).collect();
        let min = rows.iter().filter_map(|r| r.c_seg).fold(f64::INFINITY, f64::min);
        let chosen = rows.iter().find(|r| r.tsp == params.tsp).unwrap();
        assert_eq!(chosen.c_seg, Some(min));
    }
}

#[test]
fn one_point_grid_returns_that_point() {
    let f = fixture(22);
    let m = models(&f);
    let grid = TuneGrid {
        tsp: vec![3e-4],
        mcw: vec![0.7],
        threshold: vec![0.4],
    };
    let eval = EvalConfig::default();
    let base = CombinerConfig::new(Mode::Lm, CLUSTERS, 1e-3);
    for mode in [Mode::Lm, Mode::Pm, Mode::CmHmm] {
        let cfg = tune(&f.dev, mode, &grid, &m, &base, &eval).unwrap().config;
        assert_eq!(cfg.tsp, 3e-4);
        assert!(cfg.per_source.values().all(|p| p.tsp == Some(3e-4)));
        if mode == Mode::CmHmm {
            assert_eq!(cfg.mcw, 0.7);
        }
    }
    let cfg = tune(&f.dev, Mode::CmDt, &grid, &m, &base, &eval).unwrap().config;
    assert_eq!(cfg.threshold, 0.4);
}

#[test]
fn denser_source_gets_a_weaker_switch_penalty() {
    let f = fixture(23);
    let m = models(&f);
    let grid = TuneGrid {
        tsp: (-40..=0).map(|e| 10f64.powf(e as f64 / 4.0)).collect(),
        mcw: vec![1.0],
        threshold: vec![],
    };
    let base = CombinerConfig::new(Mode::Lm, CLUSTERS, 1e-3);
    let mut both = f.dev.clone();
    both.extend(f.train.iter().cloned());
    let cfg = tune(&both, Mode::Lm, &grid, &m, &base, &EvalConfig::default()).unwrap().config;
    let (sparse, dense) = (cfg.tsp_for("sparse"), cfg.tsp_for("dense"));
    assert!(dense > sparse, "dense {dense} vs sparse {sparse}");
}

#[test]
fn tuning_without_reference_boundaries_fails() {
    let mut f = fixture(24);
    for p in &mut f.dev {
        p.show.ref_boundaries.clear();
    }
    let grid = TuneGrid {
        tsp: vec![1e-3],
        mcw: vec![1.0],
        threshold: vec![0.5],
    };
    let m = models(&f);
    let base = CombinerConfig::new(Mode::Lm, CLUSTERS, 1e-3);
    assert!(tune(&f.dev, Mode::Lm, &grid, &m, &base, &EvalConfig::default()).is_err());
}
