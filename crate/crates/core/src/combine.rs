//! Combination of lexical and prosodic evidence, and held-out parameter tuning.
//!
//! CM-DT feeds the words-only HMM boundary posterior to a decision tree as
//! the POST_TOPIC feature and thresholds the tree posterior. CM-HMM turns
//! balanced-tree posteriors into boundary likelihoods and adds them, scaled by
//! the model combination weight, to the boundary states of the topic HMM.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BoundaryFeatureVector, FeatureKind, FeatureSchema, FeatureValue};
use crate::error::{Error, Result};
use crate::eval::{c_seg, word_counts, EvalConfig, ProbeCounts};
use crate::hmm::{build_hmm, viterbi, Emissions, HmmConfig, SegmentHmm, SegmentationHypothesis};
use crate::pipeline::{hmm_config, lm_posteriors, prosody_loglikes, tree_posteriors, augmented_vectors, Models, PreparedShow};
use crate::tree::DecisionTree;

pub const POST_TOPIC: &str = "POST_TOPIC";
/// Tree posteriors are clipped to `[POSTERIOR_CLAMP, 1 - POSTERIOR_CLAMP]` before logs.
pub const POSTERIOR_CLAMP: f64 = 1e-6;

/// Adds the HMM boundary posterior as POST_TOPIC.
pub fn cm_dt_features(base: &BoundaryFeatureVector, posterior: f64) -> Result<BoundaryFeatureVector> {
    if !(0.0..=1.0).contains(&posterior) {
        return Err(Error::invalid(format!("posterior {posterior} outside [0, 1]")));
    }
    if base.get(POST_TOPIC).is_some() {
        return Err(Error::invalid(format!(
            "({}, {}): feature already present: {POST_TOPIC}",
            base.show_id, base.boundary_index
        )));
    }
    Ok(base.clone().with(POST_TOPIC, FeatureValue::Num(posterior)))
}

/// Schema of CM-DT training data: `base` plus numeric POST_TOPIC.
pub fn cm_dt_schema(base: &FeatureSchema) -> FeatureSchema {
    let mut s = base.clone();
    s.kinds.insert(POST_TOPIC.to_string(), FeatureKind::Numeric);
    s
}

/// Declares a boundary wherever the tree posterior exceeds `threshold`.
pub fn cm_dt_decide(tree: &DecisionTree, vectors: &[BoundaryFeatureVector], threshold: f64) -> Result<SegmentationHypothesis> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config(format!("threshold {threshold} outside [0, 1]")));
    }
    if tree.schema().kind(POST_TOPIC) != Some(FeatureKind::Numeric) {
        return Err(Error::config(format!("tree schema has no numeric {POST_TOPIC} feature")));
    }
    let posteriors = vectors.iter().map(|v| tree.predict(v)).collect::<Result<Vec<_>>>()?;
    Ok(SegmentationHypothesis {
        decisions: posteriors.iter().map(|&p| p > threshold).collect(),
        posteriors,
        clusters: vec![],
    })
}

/// Boundary log likelihoods `(ln p, ln(1 - p))` from a tree posterior. Only
/// valid for trees trained on class-balanced data, where posteriors are
/// proportional to likelihoods.
pub fn posterior_to_loglike(p: f64, balanced_training: bool) -> Result<(f64, f64)> {
    if !balanced_training {
        return Err(Error::config(
            "tree posteriors are likelihoods only for balanced training data; retrain with downsampling",
        ));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("posterior {p} outside [0, 1]")));
    }
    let p = p.clamp(POSTERIOR_CLAMP, 1.0 - POSTERIOR_CLAMP);
    Ok((p.ln(), (1.0 - p).ln()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Topic language models only.
    Lm,
    /// Prosodic tree only.
    Pm,
    /// POST_TOPIC fed to a decision tree.
    CmDt,
    /// Prosodic likelihoods inside the topic HMM.
    CmHmm,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Lm, Mode::Pm, Mode::CmDt, Mode::CmHmm];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Lm => "lm",
            Mode::Pm => "pm",
            Mode::CmDt => "cm-dt",
            Mode::CmHmm => "cm-hmm",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown mode {s:?} (expected lm, pm, cm-dt or cm-hmm)")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tsp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// Decoding parameters. `tsp` is the switch penalty of the HMM the mode runs;
/// under CM-DT it is the penalty used to compute POST_TOPIC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinerConfig {
    pub mode: Mode,
    pub clusters: usize,
    pub tsp: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_mcw")]
    pub mcw: f64,
    #[serde(default)]
    pub use_begin_end: bool,
    #[serde(default)]
    pub per_source: BTreeMap<String, SourceParams>,
}

fn default_threshold() -> f64 {
    0.5
}

fn default_mcw() -> f64 {
    1.0
}

impl CombinerConfig {
    pub fn new(mode: Mode, clusters: usize, tsp: f64) -> Self {
        CombinerConfig {
            mode,
            clusters,
            tsp,
            threshold: default_threshold(),
            mcw: default_mcw(),
            use_begin_end: false,
            per_source: BTreeMap::new(),
        }
    }

    pub fn tsp_for(&self, source_type: &str) -> f64 {
        self.per_source.get(source_type).and_then(|p| p.tsp).unwrap_or(self.tsp)
    }

    pub fn threshold_for(&self, source_type: &str) -> f64 {
        self.per_source
            .get(source_type)
            .and_then(|p| p.threshold)
            .unwrap_or(self.threshold)
    }

    pub fn validate(&self) -> Result<()> {
        let tsps = std::iter::once(self.tsp).chain(self.per_source.values().filter_map(|p| p.tsp));
        for t in tsps {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::config(format!("topic switch penalty must be positive, got {t}")));
            }
        }
        let thresholds = std::iter::once(self.threshold).chain(self.per_source.values().filter_map(|p| p.threshold));
        for t in thresholds {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config(format!("threshold must lie in [0, 1], got {t}")));
            }
        }
        if !(self.mcw >= 0.0) || !self.mcw.is_finite() {
            return Err(Error::config(format!("model combination weight must be >= 0, got {}", self.mcw)));
        }
        if self.clusters == 0 {
            return Err(Error::config("cluster count must be positive"));
        }
        Ok(())
    }
}

/// Candidate parameter values, searched exhaustively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneGrid {
    #[serde(default)]
    pub tsp: Vec<f64>,
    #[serde(default)]
    pub mcw: Vec<f64>,
    #[serde(default)]
    pub threshold: Vec<f64>,
}

/// Dev-set result of one parameter setting on one source (or all sources).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    /// `None` for the pooled dev set.
    pub source: Option<String>,
    pub tsp: Option<f64>,
    pub mcw: Option<f64>,
    pub threshold: Option<f64>,
    pub p_miss: Option<f64>,
    pub p_fa: Option<f64>,
    pub c_seg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub config: CombinerConfig,
    /// Pooled word-based cost of `config` on the dev set.
    pub dev_c_seg: f64,
    pub table: Vec<GridRow>,
    /// Distinct pooled (P_Miss, P_FalseAlarm) pairs reachable on the grid.
    pub operating_points: Vec<(f64, f64)>,
}

fn require(values: &[f64], name: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::config(format!("grid has no {name} values")));
    }
    Ok(())
}

/// Word probe counts per grid value and show.
fn grid_counts<F>(dev: &[PreparedShow], values: &[f64], k: usize, decide: F) -> Result<Vec<Vec<ProbeCounts>>>
where
    F: Fn(usize, f64) -> Result<Vec<bool>> + Sync,
{
    values
        .par_iter()
        .map(|&v| {
            dev.iter()
                .enumerate()
                .map(|(s, p)| {
                    let d = decide(s, v)?;
                    let hyp: Vec<usize> = p.units.iter().zip(&d).filter(|(_, &y)| y).map(|(u, _)| u.boundary_after()).collect();
                    word_counts(p.show.tokens.len(), &p.show.ref_boundaries, &hyp, k)
                })
                .collect()
        })
        .collect()
}

fn pooled(counts: &[ProbeCounts], shows: impl IntoIterator<Item = usize>) -> ProbeCounts {
    let mut c = ProbeCounts::default();
    for s in shows {
        c.add(&counts[s]);
    }
    c
}

struct Choice {
    /// Chosen value index per source; sources absent fall back to `global`.
    per_source: BTreeMap<String, usize>,
    global: usize,
    rows: Vec<(Option<String>, usize, ProbeCounts)>,
}

fn cost(c: &ProbeCounts, eval: &EvalConfig) -> Option<f64> {
    c_seg(c.p_miss(), c.p_fa(), eval).ok()
}

/// Picks the value minimizing cost per source and overall; ties keep the
/// earliest grid value.
fn choose(dev: &[PreparedShow], counts: &[Vec<ProbeCounts>], eval: &EvalConfig) -> Result<Choice> {
    let mut sources: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, p) in dev.iter().enumerate() {
        sources.entry(p.show.source_type.clone()).or_default().push(i);
    }
    let mut rows = Vec::new();
    let mut pick = |label: Option<String>, shows: &[usize]| -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (v, per_show) in counts.iter().enumerate() {
            let c = pooled(per_show, shows.iter().copied());
            let cs = cost(&c, eval);
            rows.push((label.clone(), v, c));
            if let Some(cs) = cs {
                if best.map_or(true, |(_, b)| cs < b) {
                    best = Some((v, cs));
                }
            }
        }
        best.map(|b| b.0)
    };
    let all: Vec<usize> = (0..dev.len()).collect();
    let global = pick(None, &all).ok_or_else(|| Error::invalid("no reference boundaries in dev set"))?;
    let mut per_source = BTreeMap::new();
    for (src, shows) in &sources {
        if let Some(v) = pick(Some(src.clone()), shows) {
            per_source.insert(src.clone(), v);
        }
    }
    Ok(Choice { per_source, global, rows })
}

/// Pooled counts when each source uses its own choice.
fn combined_counts(dev: &[PreparedShow], counts: &[Vec<ProbeCounts>], choice: &Choice) -> ProbeCounts {
    let mut c = ProbeCounts::default();
    for (s, p) in dev.iter().enumerate() {
        let v = choice.per_source.get(&p.show.source_type).copied().unwrap_or(choice.global);
        c.add(&counts[v][s]);
    }
    c
}

fn row(label: Option<String>, c: &ProbeCounts, eval: &EvalConfig) -> GridRow {
    GridRow {
        source: label,
        tsp: None,
        mcw: None,
        threshold: None,
        p_miss: c.p_miss(),
        p_fa: c.p_fa(),
        c_seg: cost(c, eval),
    }
}

fn hmm_decisions(hmm: &SegmentHmm, em: &Emissions, bl: Option<&[(f64, f64)]>) -> Result<Vec<bool>> {
    Ok(viterbi(hmm, em, bl)?.decisions)
}

/// Grid search minimizing word-based cost on the dev set, per source with a
/// global fallback. `base` supplies the cluster count, BEGIN/END use and,
/// for CM-DT, the switch penalties used to compute POST_TOPIC.
pub fn tune(
    dev: &[PreparedShow],
    mode: Mode,
    grid: &TuneGrid,
    models: &Models,
    base: &CombinerConfig,
    eval: &EvalConfig,
) -> Result<TuneReport> {
    eval.validate()?;
    if dev.iter().all(|p| p.show.ref_boundaries.is_empty()) {
        return Err(Error::invalid("no reference boundaries in dev set"));
    }
    let mut config = base.clone();
    config.mode = mode;
    let k = eval.k;
    let mut table = Vec::new();

    let (choice, values, counts, mcw) = match mode {
        Mode::Lm | Mode::CmHmm => {
            require(&grid.tsp, "tsp")?;
            let lm = models.lm()?;
            let mcws = if mode == Mode::Lm { vec![0.0] } else { grid.mcw.clone() };
            require(&mcws, "mcw")?;
            let bls: Vec<Option<Vec<(f64, f64)>>> = if mode == Mode::CmHmm {
                let tree = models.prosody()?;
                dev.par_iter().map(|p| prosody_loglikes(p, tree).map(Some)).collect::<Result<_>>()?
            } else {
                vec![None; dev.len()]
            };
            let mut best: Option<(Choice, Vec<Vec<ProbeCounts>>, f64, f64)> = None;
            for &m in &mcws {
                let counts = grid_counts(dev, &grid.tsp, k, |s, tsp| {
                    let p = &dev[s];
                    let mut c = config.clone();
                    c.tsp = tsp;
                    c.per_source.clear();
                    let hmm = build_hmm(lm, hmm_config(&c, &p.show.source_type, m)?)?;
                    let em = p.emissions.as_ref().ok_or_else(|| Error::config("dev shows need unit likelihoods"))?;
                    hmm_decisions(&hmm, em, bls[s].as_deref())
                })?;
                let choice = choose(dev, &counts, eval)?;
                let total = cost(&combined_counts(dev, &counts, &choice), eval).unwrap_or(f64::INFINITY);
                for (label, v, c) in &choice.rows {
                    let mut r = row(label.clone(), c, eval);
                    r.tsp = Some(grid.tsp[*v]);
                    r.mcw = (mode == Mode::CmHmm).then_some(m);
                    table.push(r);
                }
                if best.as_ref().map_or(true, |b| total < b.2) {
                    best = Some((choice, counts, total, m));
                }
            }
            let (choice, counts, _, m) = best.expect("mcw grid is non-empty");
            (choice, grid.tsp.clone(), counts, m)
        }
        Mode::Pm => {
            require(&grid.tsp, "tsp")?;
            let tree = models.prosody()?;
            let bls: Vec<Vec<(f64, f64)>> = dev.par_iter().map(|p| prosody_loglikes(p, tree)).collect::<Result<_>>()?;
            let ems: Vec<Emissions> = dev.iter().map(|p| Emissions::uniform(p.units.len(), 1, false)).collect();
            let counts = grid_counts(dev, &grid.tsp, k, |s, tsp| {
                let hmm = SegmentHmm::new(HmmConfig::new(1, tsp)?)?;
                hmm_decisions(&hmm, &ems[s], Some(&bls[s]))
            })?;
            let choice = choose(dev, &counts, eval)?;
            for (label, v, c) in &choice.rows {
                let mut r = row(label.clone(), c, eval);
                r.tsp = Some(grid.tsp[*v]);
                table.push(r);
            }
            (choice, grid.tsp.clone(), counts, config.mcw)
        }
        Mode::CmDt => {
            require(&grid.threshold, "threshold")?;
            let lm = models.lm()?;
            let tree = models.cm_dt()?;
            let posts: Vec<Vec<f64>> = dev
                .par_iter()
                .map(|p| {
                    let post = lm_posteriors(p, lm, base.tsp_for(&p.show.source_type), base.use_begin_end)?;
                    let vectors = augmented_vectors(p, &post)?;
                    vectors.iter().map(|v| tree.predict(v)).collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<_>>()?;
            let counts = grid_counts(dev, &grid.threshold, k, |s, t| Ok(posts[s].iter().map(|&q| q > t).collect()))?;
            let choice = choose(dev, &counts, eval)?;
            for (label, v, c) in &choice.rows {
                let mut r = row(label.clone(), c, eval);
                r.threshold = Some(grid.threshold[*v]);
                table.push(r);
            }
            (choice, grid.threshold.clone(), counts, config.mcw)
        }
    };

    let sources: BTreeSet<&String> = choice.per_source.keys().collect();
    match mode {
        Mode::CmDt => {
            config.threshold = values[choice.global];
            for s in sources {
                config.per_source.entry(s.clone()).or_default().threshold = Some(values[choice.per_source[s]]);
            }
        }
        _ => {
            config.tsp = values[choice.global];
            config.mcw = mcw;
            config.per_source.clear();
            for s in sources {
                config.per_source.entry(s.clone()).or_default().tsp = Some(values[choice.per_source[s]]);
            }
        }
    }
    let dev_c_seg = cost(&combined_counts(dev, &counts, &choice), eval).ok_or_else(|| Error::invalid("no reference boundaries in dev set"))?;
    let mut operating_points: Vec<(f64, f64)> = table
        .iter()
        .filter(|r| r.source.is_none())
        .filter_map(|r| Some((r.p_miss?, r.p_fa?)))
        .collect();
    operating_points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    operating_points.dedup();
    Ok(TuneReport {
        config,
        dev_c_seg,
        table,
        operating_points,
    })
}

/// Decision posteriors of the CM-DT tree for every boundary of a show.
pub fn cm_dt_posteriors(p: &PreparedShow, config: &CombinerConfig, models: &Models) -> Result<Vec<f64>> {
    let post = lm_posteriors(p, models.lm()?, config.tsp_for(&p.show.source_type), config.use_begin_end)?;
    let vectors = augmented_vectors(p, &post)?;
    vectors.iter().map(|v| models.cm_dt()?.predict(v)).collect()
}

/// Prosodic-tree posteriors for every boundary of a show.
pub fn pm_posteriors(p: &PreparedShow, models: &Models) -> Result<Vec<f64>> {
    tree_posteriors(p, models.prosody()?)
}
