//! Segmentation HMM over chopped units.
//!
//! A path alternates unit states and boundary states:
//! `r_1, q_1, r_2, ..., q_{N-1}, r_N`. Unit states are topic clusters `T_j`
//! and, optionally, the shared BEGIN and END states; boundary states are
//! `B_j` (a topic change after a unit of cluster `j`) and `N_j` (a
//! topic-internal transition). BEGIN and END share one emission model each
//! but are tagged with the cluster of the segment they belong to, so every
//! boundary state stays attributable to a cluster.
//!
//! Transition weights are unnormalized: staying inside a segment costs
//! nothing, `B_j` into any next segment costs the topic switch penalty, and
//! BEGIN/END traversal is optional. All arithmetic runs in the log domain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::TopicClusterModel;

/// Unit log likelihoods for one show.
#[derive(Debug, Clone, PartialEq)]
pub struct Emissions {
    n_units: usize,
    n_clusters: usize,
    /// Row-major `n_units x n_clusters`.
    topic: Vec<f64>,
    begin: Option<Vec<f64>>,
    end: Option<Vec<f64>>,
}

fn check_loglikes(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::invalid("log likelihoods must be finite or -inf"));
    }
    Ok(())
}

impl Emissions {
    pub fn new(n_units: usize, n_clusters: usize, topic: Vec<f64>) -> Result<Self> {
        if n_clusters == 0 {
            return Err(Error::invalid("at least one cluster is required"));
        }
        if topic.len() != n_units * n_clusters {
            return Err(Error::invalid(format!(
                "emission matrix has {} entries, expected {n_units} x {n_clusters}",
                topic.len()
            )));
        }
        check_loglikes(&topic)?;
        Ok(Emissions {
            n_units,
            n_clusters,
            topic,
            begin: None,
            end: None,
        })
    }

    /// Emissions that carry no lexical evidence.
    pub fn uniform(n_units: usize, n_clusters: usize, with_begin_end: bool) -> Self {
        let (begin, end) = if with_begin_end {
            (Some(vec![0.0; n_units]), Some(vec![0.0; n_units]))
        } else {
            (None, None)
        };
        Emissions {
            n_units,
            n_clusters,
            topic: vec![0.0; n_units * n_clusters],
            begin,
            end,
        }
    }

    pub fn with_begin_end(mut self, begin: Vec<f64>, end: Vec<f64>) -> Result<Self> {
        if begin.len() != self.n_units || end.len() != self.n_units {
            return Err(Error::invalid("BEGIN/END likelihoods must have one entry per unit"));
        }
        check_loglikes(&begin)?;
        check_loglikes(&end)?;
        self.begin = Some(begin);
        self.end = Some(end);
        Ok(self)
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn has_begin_end(&self) -> bool {
        self.begin.is_some() && self.end.is_some()
    }

    pub fn topic(&self, unit: usize, cluster: usize) -> f64 {
        self.topic[unit * self.n_clusters + cluster]
    }

    pub fn begin(&self, unit: usize) -> Option<f64> {
        self.begin.as_ref().map(|b| b[unit])
    }

    pub fn end(&self, unit: usize) -> Option<f64> {
        self.end.as_ref().map(|e| e[unit])
    }

    /// Adds `delta` to every likelihood of one unit.
    pub fn shift_unit(&mut self, unit: usize, delta: f64) {
        let c = self.n_clusters;
        self.topic[unit * c..(unit + 1) * c].iter_mut().for_each(|v| *v += delta);
        if let Some(b) = self.begin.as_mut() {
            b[unit] += delta;
        }
        if let Some(e) = self.end.as_mut() {
            e[unit] += delta;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmConfig {
    pub clusters: usize,
    /// Natural log of the topic switch penalty; `-inf` forbids topic changes.
    pub log_tsp: f64,
    pub use_begin_end: bool,
    /// Exponent on boundary likelihoods.
    pub mcw: f64,
}

impl HmmConfig {
    pub fn new(clusters: usize, tsp: f64) -> Result<Self> {
        if !(tsp > 0.0) || !tsp.is_finite() {
            return Err(Error::config(format!("topic switch penalty must be positive, got {tsp}")));
        }
        Ok(HmmConfig {
            clusters,
            log_tsp: tsp.ln(),
            use_begin_end: false,
            mcw: 1.0,
        })
    }

    pub fn with_begin_end(mut self, on: bool) -> Self {
        self.use_begin_end = on;
        self
    }

    pub fn with_mcw(mut self, mcw: f64) -> Self {
        self.mcw = mcw;
        self
    }

    pub fn tsp(&self) -> f64 {
        self.log_tsp.exp()
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::config("at least one cluster is required"));
        }
        if self.log_tsp.is_nan() || self.log_tsp == f64::INFINITY {
            return Err(Error::config("topic switch penalty must be positive and finite"));
        }
        if !(self.mcw >= 0.0) || !self.mcw.is_finite() {
            return Err(Error::config(format!("model combination weight must be >= 0, got {}", self.mcw)));
        }
        Ok(())
    }
}

/// Topic switch penalties per source type with a global fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TspTable {
    pub global: f64,
    pub per_source: BTreeMap<String, f64>,
}

impl TspTable {
    pub fn lookup(&self, source_type: &str) -> f64 {
        self.per_source.get(source_type).copied().unwrap_or(self.global)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnitState {
    Topic(usize),
    /// Shared BEGIN state, traversed at the start of a segment of cluster `j`.
    Begin(usize),
    /// Shared END state, traversed at the end of a segment of cluster `j`.
    End(usize),
}

impl UnitState {
    pub fn cluster(self) -> usize {
        match self {
            UnitState::Topic(j) | UnitState::Begin(j) | UnitState::End(j) => j,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundaryState {
    /// `N_j`: topic-internal transition.
    Internal(usize),
    /// `B_j`: topic boundary.
    Topic(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum State {
    Unit(UnitState),
    Boundary(BoundaryState),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub from: State,
    pub to: State,
    pub log_weight: f64,
}

const BODY: usize = 0;
const BEGIN: usize = 1;
const END: usize = 2;

/// The segmentation HMM: topology plus decoding parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentHmm {
    config: HmmConfig,
}

/// Builds the HMM for a trained cluster model.
pub fn build_hmm(model: &TopicClusterModel, config: HmmConfig) -> Result<SegmentHmm> {
    if model.n_clusters() != config.clusters {
        return Err(Error::config(format!(
            "model has {} clusters but the HMM config expects {}",
            model.n_clusters(),
            config.clusters
        )));
    }
    if config.use_begin_end && !model.has_begin_end() {
        return Err(Error::config("BEGIN/END states requested but the model has no BEGIN/END unigrams"));
    }
    SegmentHmm::new(config)
}

impl SegmentHmm {
    pub fn new(config: HmmConfig) -> Result<Self> {
        config.validate()?;
        Ok(SegmentHmm { config })
    }

    pub fn config(&self) -> &HmmConfig {
        &self.config
    }

    pub fn n_clusters(&self) -> usize {
        self.config.clusters
    }

    fn roles(&self) -> usize {
        if self.config.use_begin_end {
            3
        } else {
            1
        }
    }

    /// Number of unit states in the decoding trellis (topic states plus the
    /// cluster-tagged copies of BEGIN and END).
    pub fn trellis_width(&self) -> usize {
        self.roles() * self.config.clusters
    }

    pub fn topic_state_count(&self) -> usize {
        self.config.clusters
    }

    /// BEGIN and END, shared by all clusters.
    pub fn shared_state_count(&self) -> usize {
        if self.config.use_begin_end {
            2
        } else {
            0
        }
    }

    pub fn boundary_state_count(&self) -> usize {
        2 * self.config.clusters
    }

    fn unit_state(&self, s: usize) -> UnitState {
        let c = self.config.clusters;
        match s / c {
            BODY => UnitState::Topic(s % c),
            BEGIN => UnitState::Begin(s % c),
            _ => UnitState::End(s % c),
        }
    }

    /// All arcs of the cluster-tagged topology.
    pub fn arcs(&self) -> Vec<Arc> {
        let c = self.config.clusters;
        let w = self.trellis_width();
        let mut arcs = Vec::new();
        for s in 0..w {
            let (role, j) = (s / c, s % c);
            for t in 0..w {
                let (role2, k) = (t / c, t % c);
                if j == k && internal_allowed(role, role2) {
                    arcs.push(Arc {
                        from: State::Unit(self.unit_state(s)),
                        to: State::Boundary(BoundaryState::Internal(j)),
                        log_weight: 0.0,
                    });
                    arcs.push(Arc {
                        from: State::Boundary(BoundaryState::Internal(j)),
                        to: State::Unit(self.unit_state(t)),
                        log_weight: 0.0,
                    });
                }
            }
            if can_end_segment(role) {
                arcs.push(Arc {
                    from: State::Unit(self.unit_state(s)),
                    to: State::Boundary(BoundaryState::Topic(j)),
                    log_weight: 0.0,
                });
            }
            if can_start_segment(role) {
                for b in 0..c {
                    arcs.push(Arc {
                        from: State::Boundary(BoundaryState::Topic(b)),
                        to: State::Unit(self.unit_state(s)),
                        log_weight: self.config.log_tsp,
                    });
                }
            }
        }
        arcs.sort_by(|a, b| (a.from, a.to).cmp(&(b.from, b.to)));
        arcs.dedup_by(|a, b| a.from == b.from && a.to == b.to);
        arcs
    }

    fn check(&self, em: &Emissions, bl: Option<&[(f64, f64)]>) -> Result<()> {
        if em.n_clusters() != self.config.clusters {
            return Err(Error::config(format!(
                "emissions have {} clusters but the HMM has {}",
                em.n_clusters(),
                self.config.clusters
            )));
        }
        if self.config.use_begin_end && !em.has_begin_end() {
            return Err(Error::config("BEGIN/END states need BEGIN/END likelihoods"));
        }
        if em.n_units() == 0 {
            return Err(Error::invalid("cannot decode a show without units"));
        }
        if let Some(bl) = bl {
            if bl.len() + 1 != em.n_units() {
                return Err(Error::invalid(format!(
                    "{} boundary likelihoods for {} units",
                    bl.len(),
                    em.n_units()
                )));
            }
            if bl.iter().any(|(y, n)| y.is_nan() || n.is_nan() || *y == f64::INFINITY || *n == f64::INFINITY) {
                return Err(Error::invalid("boundary log likelihoods must be finite or -inf"));
            }
        }
        Ok(())
    }

    fn emit(&self, em: &Emissions, unit: usize, s: usize) -> f64 {
        let c = self.config.clusters;
        match s / c {
            BODY => em.topic(unit, s % c),
            BEGIN => em.begin(unit).unwrap_or(f64::NEG_INFINITY),
            _ => em.end(unit).unwrap_or(f64::NEG_INFINITY),
        }
    }

    /// Weighted boundary log likelihoods (yes, no) at boundary `i`.
    fn boundary_weight(&self, bl: Option<&[(f64, f64)]>, i: usize) -> (f64, f64) {
        match bl {
            Some(bl) if self.config.mcw != 0.0 => (self.config.mcw * bl[i].0, self.config.mcw * bl[i].1),
            _ => (0.0, 0.0),
        }
    }
}

fn internal_allowed(from_role: usize, to_role: usize) -> bool {
    matches!((from_role, to_role), (BODY, BODY) | (BEGIN, BODY) | (BODY, END))
}

fn can_end_segment(role: usize) -> bool {
    role == BODY || role == END
}

fn can_start_segment(role: usize) -> bool {
    role == BODY || role == BEGIN
}

fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub states: Vec<UnitState>,
    /// `decisions[i]` is true when the path crosses a `B_j` after unit `i`.
    pub decisions: Vec<bool>,
    pub log_weight: f64,
}

/// Best state sequence. Ties go to the internal transition, then to the
/// lowest-numbered predecessor, then to the lowest-numbered final state.
pub fn viterbi(hmm: &SegmentHmm, em: &Emissions, bl: Option<&[(f64, f64)]>) -> Result<ViterbiPath> {
    hmm.check(em, bl)?;
    let c = hmm.config.clusters;
    let w = hmm.trellis_width();
    let n = em.n_units();
    let log_tsp = hmm.config.log_tsp;

    let mut delta: Vec<f64> = (0..w)
        .map(|s| if can_start_segment(s / c) { hmm.emit(em, 0, s) } else { f64::NEG_INFINITY })
        .collect();
    // back[i][s] = (predecessor at unit i, topic boundary taken) for state s at unit i + 1
    let mut back: Vec<Vec<(usize, bool)>> = Vec::with_capacity(n.saturating_sub(1));
    for i in 0..n.saturating_sub(1) {
        let (by, bn) = hmm.boundary_weight(bl, i);
        let mut best_end = (usize::MAX, f64::NEG_INFINITY);
        for s in (0..w).filter(|s| can_end_segment(s / c)) {
            if delta[s] > best_end.1 || best_end.0 == usize::MAX {
                best_end = (s, delta[s]);
            }
        }
        let mut next = vec![f64::NEG_INFINITY; w];
        let mut ptr = vec![(usize::MAX, false); w];
        for t in 0..w {
            let (role2, k) = (t / c, t % c);
            let mut best = (f64::NEG_INFINITY, usize::MAX, false);
            for role in 0..hmm.roles() {
                if internal_allowed(role, role2) {
                    let s = role * c + k;
                    let v = delta[s] + bn;
                    if v > best.0 || best.1 == usize::MAX {
                        best = (v, s, false);
                    }
                }
            }
            if can_start_segment(role2) {
                let v = best_end.1 + log_tsp + by;
                if v > best.0 || best.1 == usize::MAX {
                    best = (v, best_end.0, true);
                }
            }
            next[t] = best.0 + hmm.emit(em, i + 1, t);
            ptr[t] = (best.1, best.2);
        }
        back.push(ptr);
        delta = next;
    }
    let mut last = usize::MAX;
    let mut best = f64::NEG_INFINITY;
    for s in (0..w).filter(|s| can_end_segment(s / c)) {
        if delta[s] > best {
            best = delta[s];
            last = s;
        }
    }
    if last == usize::MAX {
        return Err(Error::Decode("no feasible path: every state sequence has zero weight".into()));
    }
    let mut states = vec![hmm.unit_state(last)];
    let mut decisions = Vec::with_capacity(n - 1);
    let mut s = last;
    for ptr in back.iter().rev() {
        let (prev, yes) = ptr[s];
        decisions.push(yes);
        states.push(hmm.unit_state(prev));
        s = prev;
    }
    states.reverse();
    decisions.reverse();
    Ok(ViterbiPath {
        states,
        decisions,
        log_weight: best,
    })
}

/// Per-boundary state posteriors from forward-backward.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPosteriors {
    /// `topic[i][j]` = P(q_i = B_j | observations).
    pub topic: Vec<Vec<f64>>,
    /// `internal[i][j]` = P(q_i = N_j | observations).
    pub internal: Vec<Vec<f64>>,
    /// Log of the total path weight.
    pub log_total: f64,
}

impl BoundaryPosteriors {
    /// P(boundary) at `i`, clipped to [0, 1] against rounding.
    pub fn yes(&self, i: usize) -> f64 {
        self.topic[i].iter().sum::<f64>().clamp(0.0, 1.0)
    }

    pub fn no(&self, i: usize) -> f64 {
        self.internal[i].iter().sum::<f64>().clamp(0.0, 1.0)
    }

    pub fn yes_all(&self) -> Vec<f64> {
        (0..self.topic.len()).map(|i| self.yes(i)).collect()
    }
}

pub fn boundary_posteriors(
    hmm: &SegmentHmm,
    em: &Emissions,
    bl: Option<&[(f64, f64)]>,
) -> Result<BoundaryPosteriors> {
    hmm.check(em, bl)?;
    let c = hmm.config.clusters;
    let w = hmm.trellis_width();
    let n = em.n_units();
    let log_tsp = hmm.config.log_tsp;
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![vec![ninf; w]; n];
    for s in (0..w).filter(|s| can_start_segment(s / c)) {
        alpha[0][s] = hmm.emit(em, 0, s);
    }
    for i in 0..n - 1 {
        let (by, bn) = hmm.boundary_weight(bl, i);
        let ends = log_sum_exp((0..w).filter(|s| can_end_segment(s / c)).map(|s| alpha[i][s]));
        for t in 0..w {
            let (role2, k) = (t / c, t % c);
            let mut terms: Vec<f64> = (0..hmm.roles())
                .filter(|&r| internal_allowed(r, role2))
                .map(|r| alpha[i][r * c + k] + bn)
                .collect();
            if can_start_segment(role2) {
                terms.push(ends + log_tsp + by);
            }
            alpha[i + 1][t] = log_sum_exp(terms) + hmm.emit(em, i + 1, t);
        }
    }
    let log_total = log_sum_exp((0..w).filter(|s| can_end_segment(s / c)).map(|s| alpha[n - 1][s]));
    if log_total == ninf {
        return Err(Error::Decode("zero total probability".into()));
    }

    let mut beta = vec![vec![ninf; w]; n];
    for s in (0..w).filter(|s| can_end_segment(s / c)) {
        beta[n - 1][s] = 0.0;
    }
    // starts[i + 1] = log sum over segment-opening states at unit i + 1 of emission + beta
    let mut starts = vec![ninf; n];
    for i in (0..n - 1).rev() {
        let (by, bn) = hmm.boundary_weight(bl, i);
        starts[i + 1] = log_sum_exp(
            (0..w)
                .filter(|t| can_start_segment(t / c))
                .map(|t| hmm.emit(em, i + 1, t) + beta[i + 1][t]),
        );
        for s in 0..w {
            let (role, j) = (s / c, s % c);
            let mut terms: Vec<f64> = (0..hmm.roles())
                .filter(|&r2| internal_allowed(role, r2))
                .map(|r2| bn + hmm.emit(em, i + 1, r2 * c + j) + beta[i + 1][r2 * c + j])
                .collect();
            if can_end_segment(role) {
                terms.push(log_tsp + by + starts[i + 1]);
            }
            beta[i][s] = log_sum_exp(terms);
        }
    }

    let mut topic = Vec::with_capacity(n - 1);
    let mut internal = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let (by, bn) = hmm.boundary_weight(bl, i);
        let mut t_row = vec![0.0; c];
        let mut n_row = vec![0.0; c];
        for j in 0..c {
            let ending = log_sum_exp(
                (0..hmm.roles())
                    .filter(|&r| can_end_segment(r))
                    .map(|r| alpha[i][r * c + j]),
            );
            t_row[j] = (ending + log_tsp + by + starts[i + 1] - log_total).exp();
            let mut terms = Vec::new();
            for r in 0..hmm.roles() {
                for r2 in 0..hmm.roles() {
                    if internal_allowed(r, r2) {
                        terms.push(
                            alpha[i][r * c + j] + bn + hmm.emit(em, i + 1, r2 * c + j) + beta[i + 1][r2 * c + j],
                        );
                    }
                }
            }
            n_row[j] = (log_sum_exp(terms) - log_total).exp();
        }
        topic.push(t_row);
        internal.push(n_row);
    }
    Ok(BoundaryPosteriors {
        topic,
        internal,
        log_total,
    })
}

/// Per-boundary decisions and posteriors for one show.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationHypothesis {
    pub decisions: Vec<bool>,
    /// P(boundary = yes) per inter-unit boundary.
    pub posteriors: Vec<f64>,
    /// Cluster of each unit on the best path; empty when not produced by an HMM.
    pub clusters: Vec<usize>,
}

impl SegmentationHypothesis {
    pub fn yes_count(&self) -> usize {
        self.decisions.iter().filter(|&&d| d).count()
    }
}

/// Viterbi decisions with forward-backward posteriors.
pub fn viterbi_segment(
    hmm: &SegmentHmm,
    em: &Emissions,
    bl: Option<&[(f64, f64)]>,
) -> Result<SegmentationHypothesis> {
    let path = viterbi(hmm, em, bl)?;
    let post = boundary_posteriors(hmm, em, bl)?;
    Ok(SegmentationHypothesis {
        decisions: path.decisions,
        posteriors: post.yes_all(),
        clusters: path.states.iter().map(|s| s.cluster()).collect(),
    })
}

/// Decodes with boundary likelihoods only: every unit likelihood is uniform.
pub fn prosody_only_segment(config: HmmConfig, bl: &[(f64, f64)]) -> Result<SegmentationHypothesis> {
    let hmm = SegmentHmm::new(config)?;
    let em = Emissions::uniform(bl.len() + 1, config.clusters, config.use_begin_end);
    viterbi_segment(&hmm, &em, Some(bl))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn em(rows: &[&[f64]]) -> Emissions {
        let c = rows[0].len();
        Emissions::new(rows.len(), c, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn structure_without_begin_end() {
        let hmm = SegmentHmm::new(HmmConfig::new(2, 0.1).unwrap()).unwrap();
        assert_eq!(hmm.topic_state_count(), 2);
        assert_eq!(hmm.boundary_state_count(), 4);
        assert_eq!(hmm.shared_state_count(), 0);
        let arcs = hmm.arcs();
        let into_topic_from_b: Vec<_> = arcs
            .iter()
            .filter(|a| matches!(a.from, State::Boundary(BoundaryState::Topic(_))))
            .collect();
        assert_eq!(into_topic_from_b.len(), 4);
        assert!(into_topic_from_b.iter().all(|a| (a.log_weight - 0.1f64.ln()).abs() < 1e-15));
        assert!(arcs
            .iter()
            .filter(|a| !matches!(a.from, State::Boundary(BoundaryState::Topic(_))))
            .all(|a| a.log_weight == 0.0));
    }

    #[test]
    fn single_cluster_switch_only_through_b1() {
        let hmm = SegmentHmm::new(HmmConfig::new(1, 0.5).unwrap()).unwrap();
        let weighted: Vec<_> = hmm.arcs().into_iter().filter(|a| a.log_weight != 0.0).collect();
        assert_eq!(weighted.len(), 1);
        assert_eq!(weighted[0].from, State::Boundary(BoundaryState::Topic(0)));
        assert_eq!(weighted[0].to, State::Unit(UnitState::Topic(0)));
    }

    #[test]
    fn begin_end_requires_unigrams() {
        let stories = [crate::corpus::Story::from_words("a", ["x", "y"])];
        let model = crate::lm::estimate_model(&stories, &[0], 1, 0.9, &crate::lm::Stoplist::empty(), None).unwrap();
        let cfg = HmmConfig::new(1, 0.5).unwrap().with_begin_end(true);
        assert!(build_hmm(&model, cfg).is_err());
        let err = build_hmm(&model, HmmConfig::new(3, 0.5).unwrap()).unwrap_err();
        assert!(err.to_string().contains("1 clusters") && err.to_string().contains("3"));
    }

    #[test]
    fn contrasting_units_split() {
        let hmm = SegmentHmm::new(HmmConfig::new(2, 1e-3).unwrap()).unwrap();
        let e = em(&[&[-1.0, -30.0], &[-30.0, -1.0]]);
        let h = viterbi_segment(&hmm, &e, None).unwrap();
        assert_eq!(h.decisions, vec![true]);
        assert_eq!(h.clusters, vec![0, 1]);
    }

    #[test]
    fn forbidden_switches_give_no_boundaries() {
        let mut cfg = HmmConfig::new(2, 1.0).unwrap();
        cfg.log_tsp = f64::NEG_INFINITY;
        let hmm = SegmentHmm::new(cfg).unwrap();
        let e = em(&[&[-1.0, -30.0], &[-30.0, -1.0], &[-1.0, -30.0]]);
        let h = viterbi_segment(&hmm, &e, None).unwrap();
        assert_eq!(h.decisions, vec![false, false]);
        assert!(h.posteriors.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn zero_mcw_ignores_prosody() {
        let e = em(&[&[-1.0, -2.0], &[-2.0, -1.5], &[-1.0, -3.0]]);
        let bl = [(-0.01, -9.0), (-9.0, f64::NEG_INFINITY)];
        let base = SegmentHmm::new(HmmConfig::new(2, 0.2).unwrap()).unwrap();
        let zero = SegmentHmm::new(HmmConfig::new(2, 0.2).unwrap().with_mcw(0.0)).unwrap();
        assert_eq!(
            viterbi_segment(&base, &e, None).unwrap(),
            viterbi_segment(&zero, &e, Some(&bl)).unwrap()
        );
    }

    #[test]
    fn single_feasible_path_has_degenerate_posteriors() {
        let hmm = SegmentHmm::new(HmmConfig::new(1, 0.3).unwrap()).unwrap();
        let e = em(&[&[-1.0], &[-2.0], &[-1.0]]);
        let bl = [(0.0, f64::NEG_INFINITY), (f64::NEG_INFINITY, 0.0)];
        let p = boundary_posteriors(&hmm, &e, Some(&bl)).unwrap();
        assert_eq!(p.yes_all(), vec![1.0, 0.0]);
    }

    #[test]
    fn symmetric_model_equal_posteriors() {
        let hmm = SegmentHmm::new(HmmConfig::new(3, 0.05).unwrap()).unwrap();
        let e = Emissions::uniform(5, 3, false);
        let p = boundary_posteriors(&hmm, &e, None).unwrap();
        for i in 1..4 {
            assert!((p.yes(i) - p.yes(0)).abs() < 1e-12);
        }
    }

    #[test]
    fn prosody_only_uniform_likelihoods_follow_tsp() {
        let bl = vec![(-0.7, -0.7); 6];
        let h = prosody_only_segment(HmmConfig::new(1, 0.5).unwrap(), &bl).unwrap();
        assert_eq!(h.yes_count(), 0);
        let h = prosody_only_segment(HmmConfig::new(1, 2.0).unwrap(), &bl).unwrap();
        assert_eq!(h.yes_count(), 6);
    }

    #[test]
    fn infeasible_inputs_rejected() {
        let hmm = SegmentHmm::new(HmmConfig::new(1, 0.3).unwrap()).unwrap();
        let e = em(&[&[f64::NEG_INFINITY], &[-1.0]]);
        assert!(matches!(viterbi(&hmm, &e, None), Err(Error::Decode(_))));
        assert!(matches!(boundary_posteriors(&hmm, &e, None), Err(Error::Decode(_))));
        assert!(Emissions::new(1, 1, vec![f64::NAN]).is_err());
        assert!(HmmConfig::new(1, 0.0).is_err());
        let e = em(&[&[-1.0], &[-1.0]]);
        assert!(viterbi(&hmm, &e, Some(&[])).is_err());
    }

    #[test]
    fn single_unit_show() {
        let hmm = SegmentHmm::new(HmmConfig::new(2, 0.3).unwrap()).unwrap();
        let h = viterbi_segment(&hmm, &em(&[&[-2.0, -1.0]]), None).unwrap();
        assert!(h.decisions.is_empty());
        assert_eq!(h.clusters, vec![1]);
    }
}
