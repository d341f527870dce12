//! Show preparation and per-mode decoding shared by tuning, segmentation and
//! the CLI.

use rayon::prelude::*;

use crate::chop::{chop, project_boundaries, BoundaryProjection, ChopCriterion, ChopUnit};
use crate::combine::{cm_dt_decide, cm_dt_features, posterior_to_loglike, CombinerConfig, Mode};
use crate::corpus::{BoundaryFeatureVector, FeatureTable, Show};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport, ShowHypothesis};
use crate::hmm::{boundary_posteriors, build_hmm, prosody_only_segment, viterbi_segment, Emissions, HmmConfig, SegmentationHypothesis};
use crate::lm::TopicClusterModel;
use crate::tree::DecisionTree;

/// A chopped show with everything the decoders need.
#[derive(Debug, Clone)]
pub struct PreparedShow {
    pub show: Show,
    pub units: Vec<ChopUnit>,
    pub projection: BoundaryProjection,
    /// Unit likelihoods under the topic model, when one was supplied.
    pub emissions: Option<Emissions>,
    /// Feature vector per inter-unit boundary; `None` where the table has no row.
    pub features: Vec<Option<BoundaryFeatureVector>>,
}

impl PreparedShow {
    pub fn n_boundaries(&self) -> usize {
        self.units.len().saturating_sub(1)
    }

    /// Token indices of candidate boundaries without a feature vector.
    pub fn uncovered(&self) -> Vec<usize> {
        self.units
            .iter()
            .zip(&self.features)
            .filter(|(_, f)| f.is_none())
            .map(|(u, _)| u.boundary_after())
            .collect()
    }

    /// Feature vector at boundary `i` (all MISSING when uncovered), labeled
    /// from the reference.
    pub fn vector(&self, i: usize) -> BoundaryFeatureVector {
        let mut v = self.features[i]
            .clone()
            .unwrap_or_else(|| BoundaryFeatureVector::new(self.show.show_id.clone(), self.units[i].boundary_after()));
        v.label = Some(self.projection.labels[i]);
        v
    }

    pub fn vectors(&self) -> Vec<BoundaryFeatureVector> {
        (0..self.n_boundaries()).map(|i| self.vector(i)).collect()
    }
}

/// Trained models available to the decoders.
#[derive(Debug, Clone, Copy, Default)]
pub struct Models<'a> {
    pub lm: Option<&'a TopicClusterModel>,
    /// Prosodic tree used by PM and CM-HMM.
    pub prosody: Option<&'a DecisionTree>,
    /// Tree over prosodic features plus POST_TOPIC used by CM-DT.
    pub cm_dt: Option<&'a DecisionTree>,
}

impl<'a> Models<'a> {
    pub fn lm(&self) -> Result<&'a TopicClusterModel> {
        self.lm.ok_or_else(|| Error::config("this mode needs a topic language model"))
    }

    pub fn prosody(&self) -> Result<&'a DecisionTree> {
        self.prosody.ok_or_else(|| Error::config("this mode needs a prosodic decision tree"))
    }

    pub fn cm_dt(&self) -> Result<&'a DecisionTree> {
        self.cm_dt.ok_or_else(|| Error::config("this mode needs a CM-DT decision tree"))
    }
}

pub fn prepare_show(
    show: &Show,
    criterion: &ChopCriterion,
    lm: Option<&TopicClusterModel>,
    use_begin_end: bool,
    table: Option<&FeatureTable>,
) -> Result<PreparedShow> {
    prepare_from_units(show, chop(show, criterion)?, lm, use_begin_end, table)
}

/// Like [`prepare_show`] with units read from a file instead of chopped here.
pub fn prepare_from_units(
    show: &Show,
    units: Vec<ChopUnit>,
    lm: Option<&TopicClusterModel>,
    use_begin_end: bool,
    table: Option<&FeatureTable>,
) -> Result<PreparedShow> {
    let tiles = !units.is_empty()
        && units[0].first == 0
        && units.last().is_some_and(|u| u.last + 1 == show.tokens.len())
        && units.windows(2).all(|w| w[0].last + 1 == w[1].first)
        && units.iter().enumerate().all(|(i, u)| u.unit_index == i && u.first <= u.last && u.show_id == show.show_id);
    if !tiles {
        return Err(Error::invalid(format!(
            "units of show {} do not tile its {} tokens",
            show.show_id,
            show.tokens.len()
        )));
    }
    let projection = project_boundaries(show, &units);
    let emissions = lm.map(|m| m.unit_emissions(show, &units, use_begin_end)).transpose()?;
    let features = units[..units.len() - 1]
        .iter()
        .map(|u| table.and_then(|t| t.get(&show.show_id, u.boundary_after())).cloned())
        .collect();
    Ok(PreparedShow {
        show: show.clone(),
        units,
        projection,
        emissions,
        features,
    })
}

/// Prepares shows in parallel; output order follows input order.
pub fn prepare_shows(
    shows: &[Show],
    criterion: &ChopCriterion,
    lm: Option<&TopicClusterModel>,
    use_begin_end: bool,
    table: Option<&FeatureTable>,
) -> Result<Vec<PreparedShow>> {
    criterion.validate()?;
    shows
        .par_iter()
        .map(|s| prepare_show(s, criterion, lm, use_begin_end, table))
        .collect()
}

fn emissions(p: &PreparedShow) -> Result<&Emissions> {
    p.emissions
        .as_ref()
        .ok_or_else(|| Error::config(format!("show {} was prepared without a topic model", p.show.show_id)))
}

/// HMM configuration for a show under `config`.
pub fn hmm_config(config: &CombinerConfig, source_type: &str, mcw: f64) -> Result<HmmConfig> {
    Ok(HmmConfig::new(config.clusters, config.tsp_for(source_type))?
        .with_begin_end(config.use_begin_end)
        .with_mcw(mcw))
}

/// Tree posterior P(topic) at every boundary of the show.
pub fn tree_posteriors(p: &PreparedShow, tree: &DecisionTree) -> Result<Vec<f64>> {
    (0..p.n_boundaries()).map(|i| tree.predict(&p.vector(i))).collect()
}

/// Boundary log likelihoods (yes, no) from a balanced prosodic tree.
pub fn prosody_loglikes(p: &PreparedShow, tree: &DecisionTree) -> Result<Vec<(f64, f64)>> {
    tree_posteriors(p, tree)?
        .into_iter()
        .map(|q| posterior_to_loglike(q, tree.is_balanced()))
        .collect()
}

/// Words-only boundary posteriors from the topic HMM with switch penalty `tsp`.
pub fn lm_posteriors(p: &PreparedShow, lm: &TopicClusterModel, tsp: f64, use_begin_end: bool) -> Result<Vec<f64>> {
    let cfg = HmmConfig::new(lm.n_clusters(), tsp)?.with_begin_end(use_begin_end);
    let hmm = build_hmm(lm, cfg)?;
    if p.units.len() < 2 {
        return Ok(vec![]);
    }
    Ok(boundary_posteriors(&hmm, emissions(p)?, None)?.yes_all())
}

/// CM-DT input vectors: boundary features plus POST_TOPIC.
pub fn augmented_vectors(p: &PreparedShow, posteriors: &[f64]) -> Result<Vec<BoundaryFeatureVector>> {
    (0..p.n_boundaries())
        .map(|i| cm_dt_features(&p.vector(i), posteriors[i]))
        .collect()
}

/// Decodes one show under the combination mode in `config`.
pub fn decode(p: &PreparedShow, config: &CombinerConfig, models: &Models) -> Result<SegmentationHypothesis> {
    decode_with(p, config, models, None)
}

/// As [`decode`], but PM and CM-HMM take boundary log likelihoods `(yes, no)`
/// from `likes` when given instead of the prosodic tree.
pub fn decode_with(
    p: &PreparedShow,
    config: &CombinerConfig,
    models: &Models,
    likes: Option<&[(f64, f64)]>,
) -> Result<SegmentationHypothesis> {
    config.validate()?;
    let src = p.show.source_type.as_str();
    let boundary_likes = || -> Result<Vec<(f64, f64)>> {
        match likes {
            Some(l) if l.len() != p.n_boundaries() => Err(Error::invalid(format!(
                "show {} has {} boundaries but {} boundary likelihoods",
                p.show.show_id,
                p.n_boundaries(),
                l.len()
            ))),
            Some(l) => Ok(l.to_vec()),
            None => prosody_loglikes(p, models.prosody()?),
        }
    };
    match config.mode {
        Mode::Lm => {
            let hmm = build_hmm(models.lm()?, hmm_config(config, src, 0.0)?)?;
            viterbi_segment(&hmm, emissions(p)?, None)
        }
        Mode::Pm => prosody_only_segment(HmmConfig::new(1, config.tsp_for(src))?, &boundary_likes()?),
        Mode::CmHmm => {
            let hmm = build_hmm(models.lm()?, hmm_config(config, src, config.mcw)?)?;
            viterbi_segment(&hmm, emissions(p)?, Some(&boundary_likes()?))
        }
        Mode::CmDt => {
            let lm = models.lm()?;
            if lm.n_clusters() != config.clusters {
                return Err(Error::config(format!(
                    "model has {} clusters but the configuration expects {}",
                    lm.n_clusters(),
                    config.clusters
                )));
            }
            let post = lm_posteriors(p, lm, config.tsp_for(src), config.use_begin_end)?;
            let vectors = augmented_vectors(p, &post)?;
            cm_dt_decide(models.cm_dt()?, &vectors, config.threshold_for(src))
        }
    }
}

/// Decodes all shows in parallel, keeping input order.
pub fn decode_all(prepared: &[PreparedShow], config: &CombinerConfig, models: &Models) -> Result<Vec<SegmentationHypothesis>> {
    prepared.par_iter().map(|p| decode(p, config, models)).collect()
}

pub fn to_show_hypotheses(prepared: &[PreparedShow], hyps: &[SegmentationHypothesis]) -> Result<Vec<ShowHypothesis>> {
    prepared
        .iter()
        .zip(hyps)
        .map(|(p, h)| ShowHypothesis::from_units(&p.show.show_id, &p.units, h))
        .collect()
}

pub fn score(prepared: &[PreparedShow], hyps: &[SegmentationHypothesis], config: &EvalConfig) -> Result<EvalReport> {
    let shows: Vec<Show> = prepared.iter().map(|p| p.show.clone()).collect();
    evaluate(&shows, &to_show_hypotheses(prepared, hyps)?, config)
}
