//! Transcripts, training stories and boundary feature tables.
//!
//! Three line-oriented formats are supported:
//!
//! * transcripts: `#SHOW <id> <source_type>` opens a show, token lines are
//!   `<start> <end> <word> [speaker] [gender]`, `#TOPIC <index>` marks a
//!   reference story boundary before token `index`, `#SENT <index>` marks a
//!   sentence boundary and `#DURATION <seconds>` overrides the show length;
//! * stories: `<story_id> TAB <whitespace separated words>`;
//! * feature tables: tab separated with a `show_id`, `boundary_index` header
//!   prefix, one column per feature and an optional `label` column.
//!
//! Boundary indices always refer to inter-token positions: index `b` sits
//! between token `b - 1` and token `b`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
            Gender::Unknown => "U",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "M" | "m" | "male" => Some(Gender::Male),
            "F" | "f" | "female" => Some(Gender::Female),
            "U" | "u" | "unknown" => Some(Gender::Unknown),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: f64,
    pub end: f64,
    pub speaker: Option<String>,
    pub gender: Option<Gender>,
}

impl Token {
    pub fn new(text: impl Into<String>, start: f64, end: f64) -> Self {
        Token {
            text: text.into(),
            start,
            end,
            speaker: None,
            gender: None,
        }
    }

    pub fn with_speaker(mut self, speaker: impl Into<String>, gender: Option<Gender>) -> Self {
        self.speaker = Some(speaker.into());
        self.gender = gender;
        self
    }
}

/// A broadcast show: a time-aligned token stream with reference story boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Show {
    pub show_id: String,
    pub source_type: String,
    pub tokens: Vec<Token>,
    /// Inter-token indices in `[1, tokens.len() - 1]`, strictly increasing.
    pub ref_boundaries: Vec<usize>,
    /// Sentence boundaries, when the source provides them.
    pub sentence_boundaries: Option<Vec<usize>>,
    pub duration: f64,
}

impl Show {
    /// Checks every structural invariant, naming the show and field on failure.
    pub fn validate(&self) -> Result<()> {
        let id = &self.show_id;
        if self.tokens.is_empty() {
            return Err(Error::invalid(format!("show {id}: no tokens")));
        }
        let mut channel_end: BTreeMap<Option<&str>, f64> = BTreeMap::new();
        let mut prev_start = f64::NEG_INFINITY;
        for (ordinal, tok) in self.tokens.iter().enumerate() {
            if !tok.start.is_finite() || !tok.end.is_finite() {
                return Err(Error::invalid(format!(
                    "show {id}: token {ordinal} has a non-finite time"
                )));
            }
            if tok.start < 0.0 {
                return Err(Error::invalid(format!(
                    "show {id}: token {ordinal} start_time is negative"
                )));
            }
            if tok.end < tok.start {
                return Err(Error::invalid(format!(
                    "show {id}: token {ordinal} end_time < start_time"
                )));
            }
            if tok.start < prev_start {
                return Err(Error::invalid(format!(
                    "show {id}: token {ordinal} start_time is out of order"
                )));
            }
            prev_start = tok.start;
            let channel = tok.speaker.as_deref();
            if let Some(&end) = channel_end.get(&channel) {
                if tok.start < end {
                    return Err(Error::invalid(format!(
                        "show {id}: token {ordinal} overlaps the previous token of its speaker"
                    )));
                }
            }
            channel_end.insert(channel, tok.end);
        }
        check_boundaries(id, "ref_boundaries", &self.ref_boundaries, self.tokens.len())?;
        if let Some(sents) = &self.sentence_boundaries {
            check_boundaries(id, "sentence_boundaries", sents, self.tokens.len())?;
        }
        let last_end = self.tokens.iter().map(|t| t.end).fold(0.0, f64::max);
        if !(self.duration >= last_end) {
            return Err(Error::invalid(format!(
                "show {id}: duration {} shorter than the last token end {last_end}",
                self.duration
            )));
        }
        Ok(())
    }

    /// Time assigned to the boundary before token `index`: the middle of the
    /// pause between the adjacent tokens.
    pub fn boundary_time(&self, index: usize) -> f64 {
        let before = &self.tokens[index - 1];
        let after = &self.tokens[index];
        0.5 * (before.end + after.start.max(before.end))
    }
}

fn check_boundaries(show: &str, field: &str, bounds: &[usize], n_tokens: usize) -> Result<()> {
    let mut prev = 0;
    for &b in bounds {
        if b == 0 || b >= n_tokens {
            return Err(Error::invalid(format!(
                "show {show}: {field} index {b} is a boundary at stream edge"
            )));
        }
        if b <= prev {
            return Err(Error::invalid(format!(
                "show {show}: {field} index {b} is duplicated or out of order"
            )));
        }
        prev = b;
    }
    Ok(())
}

/// Parses a transcript document into validated shows.
pub fn parse_shows(text: &str) -> Result<Vec<Show>> {
    struct Pending {
        show: Show,
        duration: Option<f64>,
        header_line: usize,
    }

    fn finish(p: Pending) -> Result<Show> {
        let mut show = p.show;
        show.duration = match p.duration {
            Some(d) => d,
            None => show.tokens.iter().map(|t| t.end).fold(0.0, f64::max),
        };
        show.validate().map_err(|e| match e {
            Error::Invalid(m) => Error::parse(p.header_line, m),
            other => other,
        })?;
        Ok(show)
    }

    fn index_arg(line_no: usize, parts: &[&str], tag: &str) -> Result<usize> {
        match parts {
            [_, idx] => idx
                .parse()
                .map_err(|_| Error::parse(line_no, format!("{tag}: bad index {idx:?}"))),
            _ => Err(Error::parse(line_no, format!("{tag} expects one index"))),
        }
    }

    let mut shows = Vec::new();
    let mut current: Option<Pending> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts[0] == "#SHOW" {
            if parts.len() != 3 {
                return Err(Error::parse(line_no, "#SHOW expects <id> <source_type>"));
            }
            if let Some(p) = current.take() {
                shows.push(finish(p)?);
            }
            current = Some(Pending {
                show: Show {
                    show_id: parts[1].to_string(),
                    source_type: parts[2].to_string(),
                    tokens: Vec::new(),
                    ref_boundaries: Vec::new(),
                    sentence_boundaries: None,
                    duration: 0.0,
                },
                duration: None,
                header_line: line_no,
            });
            continue;
        }
        let Some(p) = current.as_mut() else {
            return Err(Error::parse(line_no, "record before the first #SHOW header"));
        };
        let show_id = p.show.show_id.clone();
        match parts[0] {
            "#TOPIC" => {
                let idx = index_arg(line_no, &parts, "#TOPIC")?;
                if idx == 0 {
                    return Err(Error::parse(
                        line_no,
                        format!("show {show_id}: boundary at stream edge (index 0)"),
                    ));
                }
                if p.show.ref_boundaries.last().is_some_and(|&last| idx <= last) {
                    return Err(Error::parse(
                        line_no,
                        format!("show {show_id}: #TOPIC {idx} duplicated or out of order"),
                    ));
                }
                p.show.ref_boundaries.push(idx);
            }
            "#SENT" => {
                let idx = index_arg(line_no, &parts, "#SENT")?;
                p.show.sentence_boundaries.get_or_insert_with(Vec::new).push(idx);
            }
            "#DURATION" => {
                let d: f64 = parts
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .filter(|d: &f64| d.is_finite())
                    .ok_or_else(|| Error::parse(line_no, "#DURATION expects seconds"))?;
                p.duration = Some(d);
            }
            tag if tag.starts_with('#') => {
                return Err(Error::parse(line_no, format!("unknown record {tag}")));
            }
            _ => {
                if parts.len() < 3 || parts.len() > 5 {
                    return Err(Error::parse(
                        line_no,
                        "token line expects <start> <end> <word> [speaker] [gender]",
                    ));
                }
                let ordinal = p.show.tokens.len();
                let time = |s: &str| -> Result<f64> {
                    s.parse::<f64>().ok().filter(|t| t.is_finite()).ok_or_else(|| {
                        Error::parse(line_no, format!("token {ordinal}: bad time {s:?}"))
                    })
                };
                let start = time(parts[0])?;
                let end = time(parts[1])?;
                if end < start {
                    return Err(Error::parse(
                        line_no,
                        format!("show {show_id}: token {ordinal} end_time < start_time"),
                    ));
                }
                let gender = match parts.get(4) {
                    Some(g) => Some(Gender::parse(g).ok_or_else(|| {
                        Error::parse(line_no, format!("token {ordinal}: bad gender {g:?}"))
                    })?),
                    None => None,
                };
                p.show.tokens.push(Token {
                    text: parts[2].to_string(),
                    start,
                    end,
                    speaker: parts.get(3).map(|s| s.to_string()),
                    gender,
                });
            }
        }
    }
    if let Some(p) = current.take() {
        shows.push(finish(p)?);
    }
    Ok(shows)
}

pub fn load_shows(path: &Path) -> Result<Vec<Show>> {
    parse_shows(&read_to_string(path)?)
}

/// Writes shows in the transcript format; `parse_shows` reads it back unchanged.
pub fn write_shows(shows: &[Show]) -> String {
    let mut out = String::new();
    for show in shows {
        let _ = writeln!(out, "#SHOW {} {}", show.show_id, show.source_type);
        let _ = writeln!(out, "#DURATION {}", show.duration);
        let topics: BTreeSet<usize> = show.ref_boundaries.iter().copied().collect();
        let sents: BTreeSet<usize> = show
            .sentence_boundaries
            .iter()
            .flatten()
            .copied()
            .collect();
        for (i, tok) in show.tokens.iter().enumerate() {
            if topics.contains(&i) {
                let _ = writeln!(out, "#TOPIC {i}");
            }
            if sents.contains(&i) {
                let _ = writeln!(out, "#SENT {i}");
            }
            let _ = write!(out, "{} {} {}", tok.start, tok.end, tok.text);
            match (&tok.speaker, tok.gender) {
                (Some(s), Some(g)) => {
                    let _ = write!(out, " {s} {}", g.as_str());
                }
                (Some(s), None) => {
                    let _ = write!(out, " {s}");
                }
                // A gender needs a speaker column to sit in.
                (None, _) => {}
            }
            out.push('\n');
        }
    }
    out
}

/// A training story reduced to word counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Story {
    pub story_id: String,
    pub word_counts: BTreeMap<String, u32>,
    /// Number of running words, stop words included.
    pub total_words: u64,
}

impl Story {
    pub fn from_words<'a>(story_id: impl Into<String>, words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut word_counts = BTreeMap::new();
        let mut total_words = 0;
        for w in words {
            *word_counts.entry(w.to_string()).or_insert(0) += 1;
            total_words += 1;
        }
        Story {
            story_id: story_id.into(),
            word_counts,
            total_words,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoryLoad {
    pub stories: Vec<Story>,
    pub dropped: usize,
}

/// Parses a story file keeping stories whose length lies in `[min_words, max_words]`.
pub fn parse_stories(text: &str, min_words: u64, max_words: u64) -> Result<StoryLoad> {
    if min_words >= max_words {
        return Err(Error::config(format!(
            "story length bounds must satisfy min < max (got {min_words}, {max_words})"
        )));
    }
    let mut stories = Vec::new();
    let mut dropped = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, words) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(i + 1, "story line expects <story_id> TAB <words>"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::parse(i + 1, "empty story id"));
        }
        let story = Story::from_words(id, words.split_whitespace());
        if story.total_words < min_words || story.total_words > max_words {
            dropped += 1;
        } else {
            stories.push(story);
        }
    }
    if stories.is_empty() {
        return Err(Error::invalid("no training stories"));
    }
    Ok(StoryLoad { stories, dropped })
}

pub fn load_stories(path: &Path, min_words: u64, max_words: u64) -> Result<StoryLoad> {
    parse_stories(&read_to_string(path)?, min_words, max_words)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// A present feature value. Absent features are MISSING.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureValue {
    Num(f64),
    Cat(String),
}

impl FeatureValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            FeatureValue::Num(v) => Some(*v),
            FeatureValue::Cat(_) => None,
        }
    }
}

pub const PAUSE_DURATION: &str = "PAU_DUR";
pub const TURN_FLAG: &str = "TURN_F";
pub const TURN_TIME: &str = "TURN_TIME";
pub const GENDER: &str = "GEN";
pub const F0_BASELINE: &str = "F0K_LR_MEAN_KBASELN";
pub const F0_MEAN_DIFF: &str = "F0K_WRD_DIFF_MNMN_N";
pub const F0_HILO_DIFF: &str = "F0K_WRD_DIFF_HILO_N";

/// Declared feature names and kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub kinds: BTreeMap<String, FeatureKind>,
    /// Open schemas accept undeclared columns (numeric unless suffixed `:cat`).
    pub open: bool,
}

impl FeatureSchema {
    pub fn closed(kinds: impl IntoIterator<Item = (String, FeatureKind)>) -> Self {
        FeatureSchema {
            kinds: kinds.into_iter().collect(),
            open: false,
        }
    }

    /// Open schema pre-declaring the usual prosodic boundary features.
    pub fn prosodic() -> Self {
        let mut kinds = BTreeMap::new();
        for name in [PAUSE_DURATION, TURN_TIME, F0_BASELINE, F0_MEAN_DIFF, F0_HILO_DIFF] {
            kinds.insert(name.to_string(), FeatureKind::Numeric);
        }
        kinds.insert(TURN_FLAG.to_string(), FeatureKind::Categorical);
        kinds.insert(GENDER.to_string(), FeatureKind::Categorical);
        FeatureSchema { kinds, open: true }
    }

    pub fn kind(&self, name: &str) -> Option<FeatureKind> {
        self.kinds.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.kinds.keys().map(String::as_str)
    }

    /// Restriction of the schema to `names`.
    pub fn subset<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Self {
        let kinds = names
            .into_iter()
            .filter_map(|n| self.kinds.get(n).map(|k| (n.to_string(), *k)))
            .collect();
        FeatureSchema { kinds, open: false }
    }
}

/// Features observed at one candidate boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFeatureVector {
    pub show_id: String,
    pub boundary_index: usize,
    pub features: BTreeMap<String, FeatureValue>,
    /// `Some(true)` for a topic boundary.
    pub label: Option<bool>,
}

impl BoundaryFeatureVector {
    pub fn new(show_id: impl Into<String>, boundary_index: usize) -> Self {
        BoundaryFeatureVector {
            show_id: show_id.into(),
            boundary_index,
            features: BTreeMap::new(),
            label: None,
        }
    }

    pub fn get(&self, name: &str) -> Option<&FeatureValue> {
        self.features.get(name)
    }

    pub fn with(mut self, name: &str, value: FeatureValue) -> Self {
        self.features.insert(name.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub schema: FeatureSchema,
    pub vectors: Vec<BoundaryFeatureVector>,
    index: BTreeMap<(String, usize), usize>,
}

impl FeatureTable {
    pub fn new(schema: FeatureSchema, vectors: Vec<BoundaryFeatureVector>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, v) in vectors.iter().enumerate() {
            for (name, value) in &v.features {
                check_value(&schema, name, value).map_err(Error::Invalid)?;
            }
            if index.insert((v.show_id.clone(), v.boundary_index), i).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate feature vector for ({}, {})",
                    v.show_id, v.boundary_index
                )));
            }
        }
        Ok(FeatureTable {
            schema,
            vectors,
            index,
        })
    }

    pub fn get(&self, show_id: &str, boundary_index: usize) -> Option<&BoundaryFeatureVector> {
        self.index
            .get(&(show_id.to_string(), boundary_index))
            .map(|&i| &self.vectors[i])
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

fn check_value(schema: &FeatureSchema, name: &str, value: &FeatureValue) -> Result<(), String> {
    match (schema.kind(name), value) {
        (None, _) if !schema.open => Err(format!("unknown feature {name}")),
        (Some(FeatureKind::Numeric), FeatureValue::Cat(c)) => {
            Err(format!("non-numeric value {c:?} in numeric column {name}"))
        }
        (Some(FeatureKind::Categorical), FeatureValue::Num(_)) => {
            Err(format!("numeric value in categorical column {name}"))
        }
        (_, FeatureValue::Num(v)) if !v.is_finite() => {
            Err(format!("non-finite value in column {name}"))
        }
        (_, FeatureValue::Num(v)) if name == PAUSE_DURATION && *v < 0.0 => {
            Err("negative pause duration".to_string())
        }
        _ => Ok(()),
    }
}

/// Parses a feature table. Undeclared columns are accepted only for an open schema.
pub fn parse_feature_table(text: &str, schema: &FeatureSchema) -> Result<FeatureTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "feature table has no header"))?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "show_id" || cols[1] != "boundary_index" {
        return Err(Error::parse(1, "header must start with show_id, boundary_index"));
    }
    let mut effective = FeatureSchema {
        kinds: BTreeMap::new(),
        open: schema.open,
    };
    enum Col {
        Feature(String),
        Label,
    }
    let mut columns = Vec::new();
    for raw in &cols[2..] {
        if *raw == "label" {
            columns.push(Col::Label);
            continue;
        }
        let (name, suffix) = match raw.split_once(':') {
            Some((n, s)) => (n, Some(s)),
            None => (*raw, None),
        };
        let declared = schema.kind(name);
        let kind = match (suffix, declared) {
            (Some("cat"), _) => FeatureKind::Categorical,
            (Some("num"), _) => FeatureKind::Numeric,
            (Some(s), _) => return Err(Error::parse(1, format!("unknown column kind :{s}"))),
            (None, Some(k)) => k,
            (None, None) => FeatureKind::Numeric,
        };
        if declared.is_none() && !schema.open {
            return Err(Error::parse(1, format!("unknown feature {name}")));
        }
        if declared.is_some_and(|d| d != kind) {
            return Err(Error::parse(1, format!("column {name} contradicts its declared kind")));
        }
        if effective.kinds.insert(name.to_string(), kind).is_some() {
            return Err(Error::parse(1, format!("duplicate column {name}")));
        }
        columns.push(Col::Feature(name.to_string()));
    }

    let mut vectors = Vec::new();
    let mut seen: BTreeMap<(String, usize), usize> = BTreeMap::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != cols.len() {
            return Err(Error::parse(
                line_no,
                format!("expected {} cells, found {}", cols.len(), cells.len()),
            ));
        }
        let show_id = cells[0].trim().to_string();
        let boundary_index: usize = cells[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad boundary_index {:?}", cells[1])))?;
        if let Some(first) = seen.insert((show_id.clone(), boundary_index), line_no) {
            return Err(Error::parse(
                line_no,
                format!(
                    "duplicate key ({show_id}, {boundary_index}) on lines {first} and {line_no}"
                ),
            ));
        }
        let mut v = BoundaryFeatureVector::new(show_id, boundary_index);
        for (col, cell) in columns.iter().zip(&cells[2..]) {
            let cell = cell.trim();
            match col {
                Col::Label => {
                    v.label = match cell {
                        "" => None,
                        "topic" => Some(true),
                        "nontopic" => Some(false),
                        other => {
                            return Err(Error::parse(line_no, format!("bad label {other:?}")))
                        }
                    }
                }
                Col::Feature(name) => {
                    if cell.is_empty() {
                        continue;
                    }
                    let value = match effective.kinds[name] {
                        FeatureKind::Numeric => FeatureValue::Num(cell.parse().map_err(|_| {
                            Error::parse(
                                line_no,
                                format!("non-numeric value {cell:?} in numeric column {name}"),
                            )
                        })?),
                        FeatureKind::Categorical => FeatureValue::Cat(cell.to_string()),
                    };
                    check_value(&effective, name, &value).map_err(|m| Error::parse(line_no, m))?;
                    v.features.insert(name.clone(), value);
                }
            }
        }
        vectors.push(v);
    }
    FeatureTable::new(effective, vectors)
}

pub fn load_feature_table(path: &Path, schema: &FeatureSchema) -> Result<FeatureTable> {
    parse_feature_table(&read_to_string(path)?, schema)
}

/// Writes a feature table with kind-suffixed headers so it reloads under any open schema.
pub fn write_feature_table(table: &FeatureTable) -> String {
    let mut out = String::from("show_id\tboundary_index");
    for (name, kind) in &table.schema.kinds {
        let suffix = match kind {
            FeatureKind::Numeric => "num",
            FeatureKind::Categorical => "cat",
        };
        let _ = write!(out, "\t{name}:{suffix}");
    }
    let labelled = table.vectors.iter().any(|v| v.label.is_some());
    if labelled {
        out.push_str("\tlabel");
    }
    out.push('\n');
    for v in &table.vectors {
        let _ = write!(out, "{}\t{}", v.show_id, v.boundary_index);
        for name in table.schema.kinds.keys() {
            out.push('\t');
            match v.features.get(name) {
                Some(FeatureValue::Num(x)) => {
                    let _ = write!(out, "{x}");
                }
                Some(FeatureValue::Cat(c)) => out.push_str(c),
                None => {}
            }
        }
        if labelled {
            out.push('\t');
            out.push_str(match v.label {
                Some(true) => "topic",
                Some(false) => "nontopic",
                None => "",
            });
        }
        out.push('\n');
    }
    out
}
