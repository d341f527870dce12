//! Chopping: partitioning a show's token stream into pseudosentence units.
//!
//! Only positions between units are candidate topic boundaries, so the
//! criterion chosen here bounds what every later model can find.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Show;
use crate::error::{Error, Result};

pub const DEFAULT_PAUSE_THRESHOLD: f64 = 0.575;
pub const DEFAULT_BLOCK_LENGTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChopCriterion {
    /// Every `block_length` tokens; a short final block is kept.
    Fixed { block_length: usize },
    /// At every change of speaker label.
    Turn,
    /// Wherever the inter-token gap strictly exceeds `threshold` seconds.
    Pause { threshold: f64 },
    /// At the sentence boundaries supplied with the transcript.
    Sentence,
}

impl Default for ChopCriterion {
    fn default() -> Self {
        ChopCriterion::Pause {
            threshold: DEFAULT_PAUSE_THRESHOLD,
        }
    }
}

impl ChopCriterion {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ChopCriterion::Fixed { block_length } if block_length == 0 => {
                Err(Error::config("block_length must be at least 1"))
            }
            ChopCriterion::Pause { threshold } if !(threshold > 0.0) => {
                Err(Error::config("pause threshold must be positive"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChopUnit {
    pub show_id: String,
    pub unit_index: usize,
    /// First token of the unit.
    pub first: usize,
    /// Last token of the unit, inclusive.
    pub last: usize,
    /// Gap to the next unit in seconds, clamped at 0; 0 for the final unit.
    pub pause_after: f64,
    pub turn_change_after: bool,
}

impl ChopUnit {
    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Token index of the boundary following this unit.
    pub fn boundary_after(&self) -> usize {
        self.last + 1
    }
}

/// Splits a show into units according to `criterion`.
pub fn chop(show: &Show, criterion: &ChopCriterion) -> Result<Vec<ChopUnit>> {
    criterion.validate()?;
    let tokens = &show.tokens;
    if tokens.is_empty() {
        return Err(Error::invalid(format!("show {}: cannot chop an empty show", show.show_id)));
    }
    // tokens that open a new unit
    let breaks: Vec<usize> = match *criterion {
        ChopCriterion::Fixed { block_length } => {
            (1..tokens.len()).filter(|b| b % block_length == 0).collect()
        }
        ChopCriterion::Turn => (1..tokens.len())
            .filter(|&b| tokens[b].speaker != tokens[b - 1].speaker)
            .collect(),
        ChopCriterion::Pause { threshold } => (1..tokens.len())
            .filter(|&b| tokens[b].start - tokens[b - 1].end > threshold)
            .collect(),
        ChopCriterion::Sentence => show
            .sentence_boundaries
            .clone()
            .ok_or_else(|| {
                Error::invalid(format!(
                    "show {}: SENTENCE chopping requested but the transcript has no sentence markers",
                    show.show_id
                ))
            })?,
    };
    Ok(units_from_breaks(show, &breaks))
}

/// Builds units starting at token 0 and at every index in `breaks` (strictly increasing).
pub fn units_from_breaks(show: &Show, breaks: &[usize]) -> Vec<ChopUnit> {
    let tokens = &show.tokens;
    let mut starts = Vec::with_capacity(breaks.len() + 1);
    starts.push(0);
    starts.extend_from_slice(breaks);
    let mut units = Vec::with_capacity(starts.len());
    for (i, &first) in starts.iter().enumerate() {
        let last = starts.get(i + 1).map_or(tokens.len() - 1, |&next| next - 1);
        let (pause_after, turn_change_after) = match tokens.get(last + 1) {
            Some(next) => (
                (next.start - tokens[last].end).max(0.0),
                next.speaker != tokens[last].speaker,
            ),
            None => (0.0, false),
        };
        units.push(ChopUnit {
            show_id: show.show_id.clone(),
            unit_index: i,
            first,
            last,
            pause_after,
            turn_change_after,
        });
    }
    units
}

/// Reference labels for the inter-unit boundaries of a chopped show.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryProjection {
    /// `labels[i]` is true when the boundary after unit `i` is a topic boundary.
    pub labels: Vec<bool>,
    /// Reference boundaries falling strictly inside a unit.
    pub unreachable: Vec<usize>,
}

pub fn project_boundaries(show: &Show, units: &[ChopUnit]) -> BoundaryProjection {
    let cuts: Vec<usize> = units
        .iter()
        .take(units.len().saturating_sub(1))
        .map(ChopUnit::boundary_after)
        .collect();
    let labels = cuts
        .iter()
        .map(|c| show.ref_boundaries.binary_search(c).is_ok())
        .collect();
    let unreachable = show
        .ref_boundaries
        .iter()
        .copied()
        .filter(|b| cuts.binary_search(b).is_err())
        .collect();
    BoundaryProjection {
        labels,
        unreachable,
    }
}

/// Writes units as the documented TSV (one row per unit; `ref_label` describes
/// the boundary after the unit and is empty for the last unit of a show).
pub fn write_units(rows: &[(Vec<ChopUnit>, BoundaryProjection)]) -> String {
    let mut out = String::from(
        "show_id\tunit_index\tfirst\tlast\tpause_after\tturn_change_after\tref_label\n",
    );
    for (units, proj) in rows {
        for u in units {
            let label = match proj.labels.get(u.unit_index) {
                Some(true) => "topic",
                Some(false) => "nontopic",
                None => "",
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                u.show_id, u.unit_index, u.first, u.last, u.pause_after, u.turn_change_after, label
            );
        }
    }
    out
}

/// Reads a unit TSV back, grouped by show in file order.
pub fn parse_units(text: &str) -> Result<Vec<Vec<ChopUnit>>> {
    let mut shows: Vec<Vec<ChopUnit>> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let c: Vec<&str> = line.split('\t').collect();
        if c.len() != 7 {
            return Err(Error::parse(line_no, "unit row expects 7 columns"));
        }
        let num = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::parse(line_no, format!("bad integer {s:?}")))
        };
        let unit = ChopUnit {
            show_id: c[0].to_string(),
            unit_index: num(c[1])?,
            first: num(c[2])?,
            last: num(c[3])?,
            pause_after: c[4]
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad pause {:?}", c[4])))?,
            turn_change_after: c[5]
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad flag {:?}", c[5])))?,
        };
        match shows.last_mut() {
            Some(group) if group[0].show_id == unit.show_id => {
                if unit.unit_index != group.len() || unit.first != group[group.len() - 1].last + 1 {
                    return Err(Error::parse(line_no, "units do not tile the show"));
                }
                group.push(unit);
            }
            _ => {
                if unit.unit_index != 0 || unit.first != 0 {
                    return Err(Error::parse(line_no, "first unit of a show must start at token 0"));
                }
                shows.push(vec![unit]);
            }
        }
    }
    Ok(shows)
}
