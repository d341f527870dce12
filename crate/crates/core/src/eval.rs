//! TDT segmentation scoring: word- and time-distance probe metrics and the
//! weighted segmentation cost.
//!
//! A boundary at index `b` sits between words `b - 1` and `b`; word `i`
//! belongs to the story containing it. A boundary at time `τ` separates
//! `t < τ` from `t ≥ τ`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chop::ChopUnit;
use crate::corpus::Show;
use crate::error::{Error, Result};
use crate::hmm::SegmentationHypothesis;

pub const DEFAULT_K: usize = 50;
pub const DEFAULT_DELTA: f64 = 15.0;
pub const DEFAULT_P_SEG: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub delta: f64,
    pub c_miss: f64,
    pub c_fa: f64,
    pub p_seg: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: DEFAULT_K,
            delta: DEFAULT_DELTA,
            c_miss: 1.0,
            c_fa: 1.0,
            p_seg: DEFAULT_P_SEG,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("probe distance k must be at least 1"));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::config("probe duration delta must be positive"));
        }
        if !(self.p_seg > 0.0 && self.p_seg < 1.0) {
            return Err(Error::config("p_seg must lie in (0, 1)"));
        }
        if !(self.c_miss >= 0.0) || !(self.c_fa >= 0.0) {
            return Err(Error::config("costs must be non-negative"));
        }
        Ok(())
    }
}

/// Numerators and denominators of the miss and false-alarm rates. For the
/// word metric these are probe counts, for the time metric probe mass in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeCounts {
    pub miss: f64,
    /// Reference different-story probes.
    pub miss_den: f64,
    pub fa: f64,
    /// Reference same-story probes.
    pub fa_den: f64,
}

impl ProbeCounts {
    pub fn add(&mut self, other: &ProbeCounts) {
        self.miss += other.miss;
        self.miss_den += other.miss_den;
        self.fa += other.fa;
        self.fa_den += other.fa_den;
    }

    pub fn p_miss(&self) -> Option<f64> {
        (self.miss_den > 0.0).then(|| self.miss / self.miss_den)
    }

    pub fn p_fa(&self) -> Option<f64> {
        (self.fa_den > 0.0).then(|| self.fa / self.fa_den)
    }
}

/// Segmentation cost from the two rates.
pub fn c_seg(p_miss: Option<f64>, p_fa: Option<f64>, config: &EvalConfig) -> Result<f64> {
    let p_miss = p_miss.ok_or(Error::UndefinedRate("P_Miss"))?;
    let p_fa = p_fa.ok_or(Error::UndefinedRate("P_FalseAlarm"))?;
    Ok(config.c_miss * p_miss * config.p_seg + config.c_fa * p_fa * (1.0 - config.p_seg))
}

fn prefix_counts(n_words: usize, boundaries: &[usize]) -> Vec<u32> {
    let mut counts = vec![0u32; n_words];
    for &b in boundaries {
        counts[b] += 1;
    }
    let mut acc = 0;
    for c in counts.iter_mut() {
        acc += *c;
        *c = acc;
    }
    counts
}

fn check_word_boundaries(n_words: usize, boundaries: &[usize], what: &str) -> Result<()> {
    if let Some(b) = boundaries.iter().find(|&&b| b == 0 || b >= n_words) {
        return Err(Error::invalid(format!(
            "{what} boundary {b} outside [1, {}]",
            n_words.saturating_sub(1)
        )));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("{what} boundaries must be strictly increasing")));
    }
    Ok(())
}

/// Probe counts for one show over word pairs `(i, i + k)`.
pub fn word_counts(n_words: usize, reference: &[usize], hypothesis: &[usize], k: usize) -> Result<ProbeCounts> {
    check_word_boundaries(n_words, reference, "reference")?;
    check_word_boundaries(n_words, hypothesis, "hypothesis")?;
    if k == 0 {
        return Err(Error::config("probe distance k must be at least 1"));
    }
    let r = prefix_counts(n_words, reference);
    let h = prefix_counts(n_words, hypothesis);
    let (mut miss, mut miss_den, mut fa, mut fa_den) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n_words.saturating_sub(k) {
        let ref_same = r[i + k] == r[i];
        let hyp_same = h[i + k] == h[i];
        if ref_same {
            fa_den += 1;
            fa += u64::from(!hyp_same);
        } else {
            miss_den += 1;
            miss += u64::from(hyp_same);
        }
    }
    Ok(ProbeCounts {
        miss: miss as f64,
        miss_den: miss_den as f64,
        fa: fa as f64,
        fa_den: fa_den as f64,
    })
}

fn check_times(duration: f64, times: &[f64], what: &str) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid(format!("{what} boundary times must be finite")));
    }
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid(format!("{what} boundary times must be sorted")));
    }
    if !(duration >= 0.0) {
        return Err(Error::invalid("show duration must be non-negative"));
    }
    Ok(())
}

/// True when some boundary lies in `(t, t + delta]`.
fn separated(times: &[f64], t: f64, delta: f64) -> bool {
    let first_after = times.partition_point(|&x| x <= t);
    first_after < times.len() && times[first_after] <= t + delta
}

/// Probe mass for one show over time pairs `(t, t + delta)`, `t ∈ [0, T - delta]`.
///
/// Both indicators are constant between the breakpoints `τ - delta` and `τ`
/// of every boundary, so the integrals reduce to sums of interval lengths.
pub fn time_counts(duration: f64, reference: &[f64], hypothesis: &[f64], delta: f64) -> Result<ProbeCounts> {
    check_times(duration, reference, "reference")?;
    check_times(duration, hypothesis, "hypothesis")?;
    if !(delta > 0.0) {
        return Err(Error::config("probe duration delta must be positive"));
    }
    let hi = duration - delta;
    let mut out = ProbeCounts::default();
    if hi <= 0.0 {
        return Ok(out);
    }
    let mut cuts: Vec<f64> = vec![0.0, hi];
    for &tau in reference.iter().chain(hypothesis) {
        cuts.extend([tau - delta, tau]);
    }
    cuts.retain(|&c| c >= 0.0 && c <= hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    for w in cuts.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let ref_same = !separated(reference, mid, delta);
        let hyp_same = !separated(hypothesis, mid, delta);
        if ref_same {
            out.fa_den += len;
            if !hyp_same {
                out.fa += len;
            }
        } else {
            out.miss_den += len;
            if hyp_same {
                out.miss += len;
            }
        }
    }
    Ok(out)
}

/// Hypothesized boundaries of one show, indexed by token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShowHypothesis {
    pub show_id: String,
    /// Token index of every candidate boundary.
    pub boundary_index: Vec<usize>,
    pub decisions: Vec<bool>,
    pub posteriors: Vec<f64>,
}

impl ShowHypothesis {
    pub fn from_units(show_id: &str, units: &[ChopUnit], hyp: &SegmentationHypothesis) -> Result<Self> {
        if hyp.decisions.len() + 1 != units.len().max(1) {
            return Err(Error::invalid(format!(
                "show {show_id}: {} decisions for {} units",
                hyp.decisions.len(),
                units.len()
            )));
        }
        Ok(ShowHypothesis {
            show_id: show_id.to_string(),
            boundary_index: units.iter().take(hyp.decisions.len()).map(ChopUnit::boundary_after).collect(),
            decisions: hyp.decisions.clone(),
            posteriors: hyp.posteriors.clone(),
        })
    }

    /// A hypothesis that places a topic boundary exactly at each given index.
    pub fn from_boundaries(show_id: &str, boundaries: &[usize]) -> Self {
        ShowHypothesis {
            show_id: show_id.to_string(),
            boundary_index: boundaries.to_vec(),
            decisions: vec![true; boundaries.len()],
            posteriors: vec![1.0; boundaries.len()],
        }
    }

    pub fn boundaries(&self) -> Vec<usize> {
        self.boundary_index
            .iter()
            .zip(&self.decisions)
            .filter(|(_, &d)| d)
            .map(|(&b, _)| b)
            .collect()
    }
}

/// Writes hypotheses as TSV: `show_id boundary_index decision posterior`.
pub fn write_hypotheses(hyps: &[ShowHypothesis]) -> String {
    let mut out = String::from("show_id\tboundary_index\tdecision\tposterior\n");
    for h in hyps {
        for ((b, d), p) in h.boundary_index.iter().zip(&h.decisions).zip(&h.posteriors) {
            let d = if *d { "yes" } else { "no" };
            out.push_str(&format!("{}\t{b}\t{d}\t{p}\n", h.show_id));
        }
    }
    out
}

pub fn parse_hypotheses(text: &str) -> Result<Vec<ShowHypothesis>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.split('\t').collect::<Vec<_>>() == ["show_id", "boundary_index", "decision", "posterior"] => {}
        _ => return Err(Error::parse(1, "expected header: show_id, boundary_index, decision, posterior")),
    }
    let mut out: Vec<ShowHypothesis> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(lineno, format!("expected 4 fields, found {}", fields.len())));
        }
        let b: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("invalid boundary index {:?}", fields[1])))?;
        let d = match fields[2] {
            "yes" => true,
            "no" => false,
            other => return Err(Error::parse(lineno, format!("decision must be yes or no, got {other:?}"))),
        };
        let p: f64 = fields[3]
            .parse()
            .ok()
            .filter(|p: &f64| (0.0..=1.0).contains(p))
            .ok_or_else(|| Error::parse(lineno, format!("posterior must be in [0, 1], got {:?}", fields[3])))?;
        let slot = match seen.get(fields[0]) {
            Some(&s) if s + 1 == out.len() => s,
            Some(_) => return Err(Error::parse(lineno, format!("rows of show {} are not contiguous", fields[0]))),
            None => {
                seen.insert(fields[0].to_string(), out.len());
                out.push(ShowHypothesis {
                    show_id: fields[0].to_string(),
                    boundary_index: Vec::new(),
                    decisions: Vec::new(),
                    posteriors: Vec::new(),
                });
                out.len() - 1
            }
        };
        let h = &mut out[slot];
        if h.boundary_index.last().is_some_and(|&last| last >= b) {
            return Err(Error::parse(lineno, "boundary indices must increase within a show"));
        }
        h.boundary_index.push(b);
        h.decisions.push(d);
        h.posteriors.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub p_miss: Option<f64>,
    pub p_fa: Option<f64>,
    pub c_seg: Option<f64>,
    pub counts: ProbeCounts,
}

impl MetricReport {
    fn from_counts(counts: ProbeCounts, config: &EvalConfig) -> Self {
        let (p_miss, p_fa) = (counts.p_miss(), counts.p_fa());
        MetricReport {
            p_miss,
            p_fa,
            c_seg: c_seg(p_miss, p_fa, config).ok(),
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShowReport {
    pub show_id: String,
    pub word: ProbeCounts,
    pub time: ProbeCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub word: MetricReport,
    pub time: MetricReport,
    pub shows: Vec<ShowReport>,
}

/// Scores hypotheses against reference shows. A show without hypothesis rows
/// has no hypothesized boundaries; a hypothesis for an unknown show is an error.
pub fn evaluate(shows: &[Show], hyps: &[ShowHypothesis], config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    let by_id: BTreeMap<&str, &ShowHypothesis> = hyps.iter().map(|h| (h.show_id.as_str(), h)).collect();
    if by_id.len() != hyps.len() {
        return Err(Error::invalid("hypothesis lists a show twice"));
    }
    if let Some(extra) = hyps.iter().find(|h| !shows.iter().any(|s| s.show_id == h.show_id)) {
        return Err(Error::invalid(format!("hypothesis show {} has no reference", extra.show_id)));
    }
    let mut reports = Vec::with_capacity(shows.len());
    let (mut word, mut time) = (ProbeCounts::default(), ProbeCounts::default());
    for show in shows {
        let hb = by_id.get(show.show_id.as_str()).map(|h| h.boundaries()).unwrap_or_default();
        let n = show.tokens.len();
        let w = word_counts(n, &show.ref_boundaries, &hb, config.k)
            .map_err(|e| Error::invalid(format!("show {}: {e}", show.show_id)))?;
        let ref_t: Vec<f64> = show.ref_boundaries.iter().map(|&b| show.boundary_time(b)).collect();
        let hyp_t: Vec<f64> = hb.iter().map(|&b| show.boundary_time(b)).collect();
        let t = time_counts(show.duration, &ref_t, &hyp_t, config.delta)?;
        word.add(&w);
        time.add(&t);
        reports.push(ShowReport {
            show_id: show.show_id.clone(),
            word: w,
            time: t,
        });
    }
    Ok(EvalReport {
        config: *config,
        word: MetricReport::from_counts(word, config),
        time: MetricReport::from_counts(time, config),
        shows: reports,
    })
}
