//! CART-style binary decision trees estimating P(topic boundary | features).
//!
//! Trees grow greedily by entropy gain and are pruned by cost-complexity with
//! the complexity parameter chosen by cross-validated held-out cross-entropy.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BoundaryFeatureVector, FeatureKind, FeatureSchema, FeatureValue};
use crate::error::{Error, Result};

/// Lower bound on the probability assigned to the observed label when scoring.
pub const POSTERIOR_FLOOR: f64 = 1e-6;
const MIN_GAIN: f64 = 1e-12;
const FORMAT: &str = "topicseg-tree";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeTrainConfig {
    pub min_leaf: usize,
    pub cv_folds: usize,
    pub max_depth: Option<usize>,
    pub downsample: bool,
    pub seed: u64,
}

impl Default for TreeTrainConfig {
    fn default() -> Self {
        TreeTrainConfig {
            min_leaf: 5,
            cv_folds: 10,
            max_depth: None,
            downsample: true,
            seed: 0,
        }
    }
}

impl TreeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_leaf == 0 {
            return Err(Error::config("min_leaf must be at least 1"));
        }
        if self.cv_folds < 2 {
            return Err(Error::config("cv_folds must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Question {
    /// Numeric: `value <= threshold` goes left.
    LessEq(f64),
    /// Categorical: listed categories go to their side; others are treated as missing.
    In { left: Vec<String>, right: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: String,
    pub question: Question,
    pub missing_left: bool,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Training counts `[nontopic, topic]`.
    pub counts: [u64; 2],
    pub split: Option<Split>,
}

impl Node {
    pub fn posterior(&self) -> f64 {
        posterior(self.counts)
    }
}

fn posterior(c: [u64; 2]) -> f64 {
    c[1] as f64 / (c[0] + c[1]) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    schema: FeatureSchema,
    nodes: Vec<Node>,
    balanced: bool,
}

#[derive(Serialize, Deserialize)]
struct TreeDocument {
    format: String,
    version: u32,
    balanced: bool,
    schema: BTreeMap<String, FeatureKind>,
    nodes: Vec<Node>,
}

impl DecisionTree {
    /// Validates and assembles a tree. Node 0 is the root; children follow their parent.
    pub fn from_nodes(schema: FeatureSchema, nodes: Vec<Node>, balanced: bool) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::invalid("tree has no nodes"));
        }
        let mut parents = vec![0usize; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if n.counts[0] + n.counts[1] == 0 {
                return Err(Error::invalid(format!("node {i} has no training examples")));
            }
            let Some(s) = &n.split else { continue };
            let kind = schema
                .kind(&s.feature)
                .ok_or_else(|| Error::invalid(format!("node {i} queries {} which is not in the schema", s.feature)))?;
            match (&s.question, kind) {
                (Question::LessEq(t), FeatureKind::Numeric) if t.is_finite() => {}
                (Question::In { .. }, FeatureKind::Categorical) => {}
                _ => return Err(Error::invalid(format!("node {i}: question does not fit feature {}", s.feature))),
            }
            for c in [s.left, s.right] {
                if c <= i || c >= nodes.len() || parents[c] != 0 {
                    return Err(Error::invalid(format!("node {i} has an invalid child {c}")));
                }
                parents[c] = i + 1;
            }
            let l = nodes[s.left].counts;
            let r = nodes[s.right].counts;
            if [l[0] + r[0], l[1] + r[1]] != n.counts {
                return Err(Error::invalid(format!("children of node {i} do not sum to its counts")));
            }
        }
        if parents.iter().skip(1).any(|&p| p == 0) {
            return Err(Error::invalid("tree has unreachable nodes"));
        }
        Ok(DecisionTree { schema, nodes, balanced })
    }

    /// A single-leaf tree with the given training counts `[nontopic, topic]`.
    pub fn leaf(schema: FeatureSchema, counts: [u64; 2]) -> Result<Self> {
        DecisionTree::from_nodes(schema, vec![Node { counts, split: None }], counts[0] == counts[1])
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// True when trained on class-balanced data, so leaf posteriors are
    /// proportional to class likelihoods.
    pub fn is_balanced(&self) -> bool {
        self.balanced
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.split.is_none()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i].split {
                None => 0,
                Some(s) => 1 + go(nodes, s.left).max(go(nodes, s.right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Node indices visited from the root to the leaf.
    pub fn path(&self, v: &BoundaryFeatureVector) -> Result<Vec<usize>> {
        let mut i = 0;
        let mut path = vec![0];
        while let Some(s) = &self.nodes[i].split {
            let go_left = match (&s.question, v.get(&s.feature)) {
                (_, None) => s.missing_left,
                (Question::LessEq(t), Some(FeatureValue::Num(x))) => *x <= *t,
                (Question::In { left, right }, Some(FeatureValue::Cat(c))) => {
                    if left.iter().any(|l| l == c) {
                        true
                    } else if right.iter().any(|r| r == c) {
                        false
                    } else {
                        s.missing_left
                    }
                }
                _ => {
                    return Err(Error::invalid(format!(
                        "feature {} of ({}, {}) has the wrong kind",
                        s.feature, v.show_id, v.boundary_index
                    )))
                }
            };
            i = if go_left { s.left } else { s.right };
            path.push(i);
        }
        Ok(path)
    }

    pub fn leaf_of(&self, v: &BoundaryFeatureVector) -> Result<usize> {
        Ok(*self.path(v)?.last().expect("path includes the root"))
    }

    /// P(topic boundary) at the leaf reached by `v`.
    pub fn predict(&self, v: &BoundaryFeatureVector) -> Result<f64> {
        Ok(self.nodes[self.leaf_of(v)?].posterior())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = TreeDocument {
            format: FORMAT.into(),
            version: VERSION,
            balanced: self.balanced,
            schema: self.schema.kinds.clone(),
            nodes: self.nodes.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TreeDocument = serde_json::from_str(text)?;
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(Error::invalid(format!(
                "unsupported tree document {} v{} (expected {FORMAT} v{VERSION})",
                doc.format, doc.version
            )));
        }
        DecisionTree::from_nodes(FeatureSchema::closed(doc.schema), doc.nodes, doc.balanced)
    }

    pub fn load(path: &Path) -> Result<Self> {
        DecisionTree::from_json(&crate::error::read_to_string(path)?)
    }
}

// ---- dense training data ----

const MISSING_CODE: u32 = u32::MAX;

enum ColData {
    /// NaN marks MISSING.
    Num(Vec<f64>),
    Cat { codes: Vec<u32>, levels: Vec<String> },
}

struct Column {
    name: String,
    data: ColData,
}

struct Dataset {
    cols: Vec<Column>,
    labels: Vec<bool>,
}

fn labels_of(data: &[BoundaryFeatureVector]) -> Result<Vec<bool>> {
    data.iter()
        .map(|v| {
            v.label.ok_or_else(|| {
                Error::invalid(format!("feature vector ({}, {}) has no label", v.show_id, v.boundary_index))
            })
        })
        .collect()
}

impl Dataset {
    fn build(data: &[BoundaryFeatureVector], schema: &FeatureSchema) -> Result<Dataset> {
        let labels = labels_of(data)?;
        let mut cols = Vec::new();
        for (name, kind) in &schema.kinds {
            let col = match kind {
                FeatureKind::Numeric => {
                    let mut vals = Vec::with_capacity(data.len());
                    for v in data {
                        vals.push(match v.get(name) {
                            None => f64::NAN,
                            Some(FeatureValue::Num(x)) if x.is_finite() => *x,
                            Some(_) => {
                                return Err(Error::invalid(format!(
                                    "({}, {}): {name} must be a finite number",
                                    v.show_id, v.boundary_index
                                )))
                            }
                        });
                    }
                    ColData::Num(vals)
                }
                FeatureKind::Categorical => {
                    let mut levels = BTreeSet::new();
                    for v in data {
                        match v.get(name) {
                            None => {}
                            Some(FeatureValue::Cat(c)) => {
                                levels.insert(c.clone());
                            }
                            Some(_) => {
                                return Err(Error::invalid(format!(
                                    "({}, {}): {name} must be categorical",
                                    v.show_id, v.boundary_index
                                )))
                            }
                        }
                    }
                    let levels: Vec<String> = levels.into_iter().collect();
                    let codes = data
                        .iter()
                        .map(|v| match v.get(name) {
                            Some(FeatureValue::Cat(c)) => levels.binary_search(c).expect("level collected") as u32,
                            _ => MISSING_CODE,
                        })
                        .collect();
                    ColData::Cat { codes, levels }
                }
            };
            cols.push(Column { name: name.clone(), data: col });
        }
        Ok(Dataset { cols, labels })
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn compare_rows(&self, a: usize, b: usize) -> Ordering {
        self.labels[a].cmp(&self.labels[b]).then_with(|| {
            for c in &self.cols {
                let o = match &c.data {
                    ColData::Num(v) => v[a].total_cmp(&v[b]),
                    ColData::Cat { codes, .. } => codes[a].cmp(&codes[b]),
                };
                if o != Ordering::Equal {
                    return o;
                }
            }
            Ordering::Equal
        })
    }

    /// Row order that does not depend on the input order.
    fn canonical_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = (0..self.len()).collect();
        rows.sort_by(|&a, &b| self.compare_rows(a, b));
        rows
    }

    fn counts(&self, rows: &[usize]) -> [u64; 2] {
        let mut c = [0u64; 2];
        for &r in rows {
            c[usize::from(self.labels[r])] += 1;
        }
        c
    }
}

fn xlog2x(c: f64, n: f64) -> f64 {
    if c > 0.0 {
        -c * (c / n).log2()
    } else {
        0.0
    }
}

/// Deviance `n * H` in bits.
fn deviance(c: [u64; 2]) -> f64 {
    let n = (c[0] + c[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    xlog2x(c[0] as f64, n) + xlog2x(c[1] as f64, n)
}

#[derive(Clone)]
enum IQuestion {
    Le(f64),
    /// Side per level: 0 left, 1 right, 2 unseen at this node.
    Cat(Vec<u8>),
}

#[derive(Clone)]
struct ISplit {
    col: usize,
    q: IQuestion,
    missing_left: bool,
    left: usize,
    right: usize,
}

#[derive(Clone)]
struct INode {
    counts: [u64; 2],
    split: Option<ISplit>,
}

struct Candidate {
    gain: f64,
    col: usize,
    q: IQuestion,
    missing_left: bool,
}

fn add(a: [u64; 2], b: [u64; 2]) -> [u64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub(a: [u64; 2], b: [u64; 2]) -> [u64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn size(c: [u64; 2]) -> u64 {
    c[0] + c[1]
}

/// Gain of a split given present-value child counts and missing counts; the
/// missing mass joins the larger present child (left on ties).
fn score_split(parent_dev: f64, l: [u64; 2], r: [u64; 2], miss: [u64; 2], min_leaf: u64) -> Option<(f64, bool)> {
    let missing_left = size(l) >= size(r);
    let (l, r) = if missing_left { (add(l, miss), r) } else { (l, add(r, miss)) };
    if size(l) < min_leaf || size(r) < min_leaf {
        return None;
    }
    Some((parent_dev - deviance(l) - deviance(r), missing_left))
}

fn best_numeric(ds: &Dataset, col: usize, vals: &[f64], rows: &[usize], parent_dev: f64, min_leaf: u64) -> Option<Candidate> {
    let mut present: Vec<(f64, bool)> = Vec::with_capacity(rows.len());
    let mut miss = [0u64; 2];
    for &r in rows {
        if vals[r].is_nan() {
            miss[usize::from(ds.labels[r])] += 1;
        } else {
            present.push((vals[r], ds.labels[r]));
        }
    }
    present.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let total = present.iter().fold([0u64; 2], |mut c, p| {
        c[usize::from(p.1)] += 1;
        c
    });
    let mut left = [0u64; 2];
    let mut best: Option<Candidate> = None;
    for i in 0..present.len().saturating_sub(1) {
        left[usize::from(present[i].1)] += 1;
        if present[i].0 == present[i + 1].0 {
            continue;
        }
        if let Some((gain, missing_left)) = score_split(parent_dev, left, sub(total, left), miss, min_leaf) {
            if best.as_ref().map_or(true, |b| gain > b.gain) {
                let t = present[i].0 + 0.5 * (present[i + 1].0 - present[i].0);
                best = Some(Candidate { gain, col, q: IQuestion::Le(t), missing_left });
            }
        }
    }
    best
}

fn best_categorical(
    ds: &Dataset,
    col: usize,
    codes: &[u32],
    n_levels: usize,
    rows: &[usize],
    parent_dev: f64,
    min_leaf: u64,
) -> Option<Candidate> {
    let mut per_level = vec![[0u64; 2]; n_levels];
    let mut miss = [0u64; 2];
    for &r in rows {
        let l = usize::from(ds.labels[r]);
        match codes[r] {
            MISSING_CODE => miss[l] += 1,
            c => per_level[c as usize][l] += 1,
        }
    }
    let seen: Vec<usize> = (0..n_levels).filter(|&c| size(per_level[c]) > 0).collect();
    if seen.len() < 2 {
        return None;
    }
    let mut partitions: Vec<Vec<usize>> = Vec::new();
    if seen.len() <= 3 {
        for mask in 1u32..(1 << seen.len()) - 1 {
            if mask & 1 == 1 {
                partitions.push((0..seen.len()).filter(|b| mask >> b & 1 == 1).map(|b| seen[b]).collect());
            }
        }
    } else {
        let mut order = seen.clone();
        order.sort_by(|&a, &b| {
            let ra = posterior(per_level[a]);
            let rb = posterior(per_level[b]);
            ra.total_cmp(&rb).then(a.cmp(&b))
        });
        for k in 1..order.len() {
            partitions.push(order[..k].to_vec());
        }
    }
    let total = seen.iter().fold([0u64; 2], |c, &l| add(c, per_level[l]));
    let mut best: Option<Candidate> = None;
    for left_levels in partitions {
        let left = left_levels.iter().fold([0u64; 2], |c, &l| add(c, per_level[l]));
        if let Some((gain, missing_left)) = score_split(parent_dev, left, sub(total, left), miss, min_leaf) {
            if best.as_ref().map_or(true, |b| gain > b.gain) {
                let mut sides = vec![2u8; n_levels];
                for &l in &seen {
                    sides[l] = 1;
                }
                for &l in &left_levels {
                    sides[l] = 0;
                }
                best = Some(Candidate { gain, col, q: IQuestion::Cat(sides), missing_left });
            }
        }
    }
    best
}

fn goes_left(ds: &Dataset, s: &ISplit, row: usize) -> bool {
    match (&s.q, &ds.cols[s.col].data) {
        (IQuestion::Le(t), ColData::Num(v)) => {
            if v[row].is_nan() {
                s.missing_left
            } else {
                v[row] <= *t
            }
        }
        (IQuestion::Cat(sides), ColData::Cat { codes, .. }) => match codes[row] {
            MISSING_CODE => s.missing_left,
            c => match sides[c as usize] {
                0 => true,
                1 => false,
                _ => s.missing_left,
            },
        },
        _ => unreachable!("question kind matches its column"),
    }
}

fn grow(ds: &Dataset, rows: Vec<usize>, config: &TreeTrainConfig) -> Vec<INode> {
    let min_leaf = config.min_leaf as u64;
    let mut nodes: Vec<INode> = Vec::new();
    // (rows, depth, parent slot to patch: (parent index, is_left))
    let mut stack: Vec<(Vec<usize>, usize, Option<(usize, bool)>)> = vec![(rows, 0, None)];
    while let Some((rows, depth, parent)) = stack.pop() {
        let id = nodes.len();
        if let Some((p, is_left)) = parent {
            let s = nodes[p].split.as_mut().expect("parent was split");
            if is_left {
                s.left = id;
            } else {
                s.right = id;
            }
        }
        let counts = ds.counts(&rows);
        nodes.push(INode { counts, split: None });
        let can_split = counts[0] > 0
            && counts[1] > 0
            && size(counts) >= 2 * min_leaf
            && config.max_depth.map_or(true, |d| depth < d);
        if !can_split {
            continue;
        }
        let parent_dev = deviance(counts);
        let mut best: Option<Candidate> = None;
        for (ci, col) in ds.cols.iter().enumerate() {
            let cand = match &col.data {
                ColData::Num(v) => best_numeric(ds, ci, v, &rows, parent_dev, min_leaf),
                ColData::Cat { codes, levels } => best_categorical(ds, ci, codes, levels.len(), &rows, parent_dev, min_leaf),
            };
            if let Some(c) = cand {
                if best.as_ref().map_or(true, |b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
        }
        let Some(best) = best.filter(|b| b.gain > MIN_GAIN) else { continue };
        let split = ISplit {
            col: best.col,
            q: best.q,
            missing_left: best.missing_left,
            left: 0,
            right: 0,
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&row| goes_left(ds, &split, row));
        nodes[id].split = Some(split);
        // right pushed first so the left subtree is numbered first
        stack.push((r, depth + 1, Some((id, false))));
        stack.push((l, depth + 1, Some((id, true))));
    }
    nodes
}

fn route(nodes: &[INode], collapsed: &[bool], ds: &Dataset, row: usize) -> usize {
    let mut i = 0;
    while let (Some(s), false) = (&nodes[i].split, collapsed[i]) {
        i = if goes_left(ds, s, row) { s.left } else { s.right };
    }
    i
}

/// Weakest-link pruning sequence: `(alpha, collapsed flags)` with increasing
/// alpha, ending at the root.
fn prune_sequence(nodes: &[INode]) -> Vec<(f64, Vec<bool>)> {
    let n = nodes.len();
    let mut collapsed = vec![false; n];
    let mut seq = vec![(0.0, collapsed.clone())];
    let mut alpha = 0.0f64;
    loop {
        let mut reach = vec![false; n];
        reach[0] = true;
        for i in 0..n {
            if let (true, false, Some(s)) = (reach[i], collapsed[i], &nodes[i].split) {
                reach[s.left] = true;
                reach[s.right] = true;
            }
        }
        let mut leaves = vec![0usize; n];
        let mut sub_dev = vec![0.0f64; n];
        for i in (0..n).rev() {
            match (&nodes[i].split, collapsed[i]) {
                (Some(s), false) => {
                    leaves[i] = leaves[s.left] + leaves[s.right];
                    sub_dev[i] = sub_dev[s.left] + sub_dev[s.right];
                }
                _ => {
                    leaves[i] = 1;
                    sub_dev[i] = deviance(nodes[i].counts);
                }
            }
        }
        let g: Vec<Option<f64>> = (0..n)
            .map(|i| {
                (reach[i] && !collapsed[i] && nodes[i].split.is_some())
                    .then(|| (deviance(nodes[i].counts) - sub_dev[i]) / (leaves[i] - 1) as f64)
            })
            .collect();
        let Some(gmin) = g.iter().flatten().copied().reduce(f64::min) else { break };
        for i in 0..n {
            if g[i].is_some_and(|v| v <= gmin + 1e-12) {
                collapsed[i] = true;
            }
        }
        alpha = alpha.max(gmin);
        seq.push((alpha, collapsed.clone()));
    }
    seq
}

/// Diagnostic record of cross-validated pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub alphas: Vec<f64>,
    /// Mean held-out cross-entropy in bits for each alpha.
    pub cv_cross_entropy: Vec<f64>,
    pub chosen: usize,
    pub unpruned_leaves: usize,
    pub pruned_leaves: usize,
}

fn cross_entropy_bits(p_topic: f64, label: bool) -> f64 {
    let p = if label { p_topic } else { 1.0 - p_topic };
    -p.max(POSTERIOR_FLOOR).log2()
}

fn stratified_folds(ds: &Dataset, rows: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; ds.len()];
    let mut next = 0;
    for class in [false, true] {
        let mut members: Vec<usize> = rows.iter().copied().filter(|&r| ds.labels[r] == class).collect();
        members.shuffle(&mut rng);
        for r in members {
            fold_of[r] = next % folds;
            next += 1;
        }
    }
    fold_of
}

fn fit(ds: &Dataset, rows: Vec<usize>, config: &TreeTrainConfig) -> (Vec<INode>, Vec<bool>, PruneReport) {
    let full = grow(ds, rows.clone(), config);
    let seq = prune_sequence(&full);
    let alphas: Vec<f64> = seq.iter().map(|s| s.0).collect();
    let unpruned_leaves = full.iter().filter(|n| n.split.is_none()).count();
    let folds = config.cv_folds.min(rows.len());
    if seq.len() == 1 || folds < 2 {
        let collapsed = seq[0].1.clone();
        let report = PruneReport {
            alphas,
            cv_cross_entropy: vec![],
            chosen: 0,
            unpruned_leaves,
            pruned_leaves: unpruned_leaves,
        };
        return (full, collapsed, report);
    }
    let betas: Vec<f64> = (0..alphas.len())
        .map(|k| if k + 1 < alphas.len() { (alphas[k] * alphas[k + 1]).sqrt() } else { f64::INFINITY })
        .collect();
    let fold_of = stratified_folds(ds, &rows, folds, config.seed);
    let per_fold: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = rows.iter().copied().filter(|&r| fold_of[r] != f).collect();
            let held: Vec<usize> = rows.iter().copied().filter(|&r| fold_of[r] == f).collect();
            let nodes = grow(ds, train, config);
            let fseq = prune_sequence(&nodes);
            betas
                .iter()
                .map(|&b| {
                    let idx = fseq.iter().rposition(|s| s.0 <= b).unwrap_or(0);
                    let collapsed = &fseq[idx].1;
                    held.iter()
                        .map(|&r| {
                            let leaf = route(&nodes, collapsed, ds, r);
                            cross_entropy_bits(posterior(nodes[leaf].counts), ds.labels[r])
                        })
                        .sum::<f64>()
                })
                .collect()
        })
        .collect();
    let n = rows.len() as f64;
    let scores: Vec<f64> = (0..betas.len())
        .map(|k| per_fold.iter().map(|f| f[k]).sum::<f64>() / n)
        .collect();
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * min.abs().max(1.0);
    let chosen = scores.iter().rposition(|&s| s <= min + tol).expect("non-empty");
    let collapsed = seq[chosen].1.clone();
    let pruned_leaves = {
        let mut reach = vec![false; full.len()];
        reach[0] = true;
        let mut count = 0;
        for i in 0..full.len() {
            if !reach[i] {
                continue;
            }
            match (&full[i].split, collapsed[i]) {
                (Some(s), false) => {
                    reach[s.left] = true;
                    reach[s.right] = true;
                }
                _ => count += 1,
            }
        }
        count
    };
    let report = PruneReport {
        alphas,
        cv_cross_entropy: scores,
        chosen,
        unpruned_leaves,
        pruned_leaves,
    };
    (full, collapsed, report)
}

fn materialize(ds: &Dataset, nodes: &[INode], collapsed: &[bool]) -> Vec<Node> {
    let mut out: Vec<Node> = Vec::new();
    // (internal node, parent slot)
    let mut stack: Vec<(usize, Option<(usize, bool)>)> = vec![(0, None)];
    while let Some((i, parent)) = stack.pop() {
        let id = out.len();
        if let Some((p, is_left)) = parent {
            let s = out[p].split.as_mut().expect("parent was split");
            if is_left {
                s.left = id;
            } else {
                s.right = id;
            }
        }
        let split = match (&nodes[i].split, collapsed[i]) {
            (Some(s), false) => {
                let col = &ds.cols[s.col];
                let question = match (&s.q, &col.data) {
                    (IQuestion::Le(t), _) => Question::LessEq(*t),
                    (IQuestion::Cat(sides), ColData::Cat { levels, .. }) => Question::In {
                        left: levels.iter().zip(sides).filter(|(_, &s)| s == 0).map(|(l, _)| l.clone()).collect(),
                        right: levels.iter().zip(sides).filter(|(_, &s)| s == 1).map(|(l, _)| l.clone()).collect(),
                    },
                    _ => unreachable!("question kind matches its column"),
                };
                stack.push((s.right, Some((id, false))));
                stack.push((s.left, Some((id, true))));
                Some(Split {
                    feature: col.name.clone(),
                    question,
                    missing_left: s.missing_left,
                    left: 0,
                    right: 0,
                })
            }
            _ => None,
        };
        out.push(Node { counts: nodes[i].counts, split });
    }
    out
}

/// Row indices of a class-balanced subsample: the majority class is sampled
/// without replacement down to the minority size, kept in input order.
fn balanced_rows(labels: &[bool], seed: u64) -> Result<Vec<usize>> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("downsampling needs examples of both classes"));
    }
    let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = rand::seq::index::sample(&mut rng, majority.len(), minority.len())
        .into_iter()
        .map(|i| majority[i])
        .collect();
    keep.extend(minority);
    keep.sort_unstable();
    Ok(keep)
}

/// Subsamples the majority class so both classes have equal counts.
pub fn downsample(data: &[BoundaryFeatureVector], seed: u64) -> Result<Vec<BoundaryFeatureVector>> {
    let labels = labels_of(data)?;
    Ok(balanced_rows(&labels, seed)?.into_iter().map(|i| data[i].clone()).collect())
}

/// Trains a pruned tree on the features declared in `schema`.
pub fn train(data: &[BoundaryFeatureVector], schema: &FeatureSchema, config: &TreeTrainConfig) -> Result<DecisionTree> {
    Ok(train_with_report(data, schema, config)?.0)
}

pub fn train_with_report(
    data: &[BoundaryFeatureVector],
    schema: &FeatureSchema,
    config: &TreeTrainConfig,
) -> Result<(DecisionTree, PruneReport)> {
    config.validate()?;
    if data.len() < 2 {
        return Err(Error::invalid("tree training needs at least 2 examples"));
    }
    let schema = FeatureSchema::closed(schema.kinds.clone());
    let ds = Dataset::build(data, &schema)?;
    let canonical = ds.canonical_rows();
    let mut counts = ds.counts(&canonical);
    let both = counts[0] > 0 && counts[1] > 0;
    let rows = if config.downsample && both {
        let labels: Vec<bool> = canonical.iter().map(|&r| ds.labels[r]).collect();
        let keep = balanced_rows(&labels, config.seed)?;
        let rows: Vec<usize> = keep.into_iter().map(|i| canonical[i]).collect();
        counts = ds.counts(&rows);
        rows
    } else {
        canonical
    };
    let (nodes, collapsed, report) = fit(&ds, rows, config);
    let tree = DecisionTree::from_nodes(schema, materialize(&ds, &nodes, &collapsed), counts[0] == counts[1])?;
    Ok((tree, report))
}

/// Held-out entropy reduction in bits per example: prior label entropy minus
/// the mean cross-entropy of the tree posteriors.
pub fn entropy_reduction(tree: &DecisionTree, heldout: &[BoundaryFeatureVector]) -> Result<f64> {
    let labels = labels_of(heldout)?;
    if labels.is_empty() {
        return Err(Error::invalid("entropy reduction needs held-out data"));
    }
    let mut per_leaf: BTreeMap<usize, [u64; 2]> = BTreeMap::new();
    for (v, &l) in heldout.iter().zip(&labels) {
        per_leaf.entry(tree.leaf_of(v)?).or_default()[usize::from(l)] += 1;
    }
    let mut cross = 0.0;
    for (leaf, c) in &per_leaf {
        let p = tree.nodes[*leaf].posterior();
        cross += c[1] as f64 * cross_entropy_bits(p, true) + c[0] as f64 * cross_entropy_bits(p, false);
    }
    let total = per_leaf.values().fold([0u64; 2], |a, &c| add(a, c));
    let q = posterior(total);
    let mut prior = 0.0;
    if total[1] > 0 {
        prior += total[1] as f64 * cross_entropy_bits(q, true);
    }
    if total[0] > 0 {
        prior += total[0] as f64 * cross_entropy_bits(q, false);
    }
    Ok((prior - cross) / size(total) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionPhase {
    LeaveOneOut,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub phase: SelectionPhase,
    pub subset: Vec<String>,
    pub score: f64,
    /// Features of the subset that the pruned tree never queries.
    pub unused: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub selected: Vec<String>,
    pub score: f64,
    pub avoided: Vec<String>,
    pub trace: Vec<SelectionStep>,
}

impl DecisionTree {
    /// Names of the features queried by some internal node.
    pub fn used_features(&self) -> BTreeSet<String> {
        self.nodes
            .iter()
            .filter_map(|n| n.split.as_ref().map(|s| s.feature.clone()))
            .collect()
    }
}

fn subset_step(
    train_data: &[BoundaryFeatureVector],
    heldout: &[BoundaryFeatureVector],
    schema: &FeatureSchema,
    subset: Vec<String>,
    phase: SelectionPhase,
    config: &TreeTrainConfig,
) -> Result<SelectionStep> {
    let tree = train(train_data, &schema.subset(subset.iter().map(String::as_str)), config)?;
    let score = entropy_reduction(&tree, heldout)?;
    let used = tree.used_features();
    let unused = subset.iter().filter(|f| !used.contains(*f)).cloned().collect();
    Ok(SelectionStep { phase, subset, score, unused })
}

/// Orders subsets best first: higher score, then fewer features, then names.
fn better(a: &(Vec<String>, f64), b: &(Vec<String>, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then(a.0.len().cmp(&b.0.len()))
        .then_with(|| a.0.cmp(&b.0))
}

/// Two-phase wrapper: drop features whose removal improves the held-out
/// score, then beam-search subsets of the survivors. An extension enters the
/// beam only if it beats its best parent and its tree queries every feature
/// of the subset.
pub fn select_features(
    train_data: &[BoundaryFeatureVector],
    heldout: &[BoundaryFeatureVector],
    schema: &FeatureSchema,
    beam_width: usize,
    config: &TreeTrainConfig,
) -> Result<FeatureSelection> {
    if beam_width == 0 {
        return Err(Error::config("beam width must be at least 1"));
    }
    let all: Vec<String> = schema.names().map(String::from).collect();
    if all.is_empty() {
        return Err(Error::invalid("feature selection needs at least one feature"));
    }
    let step = |subset: Vec<String>, phase| subset_step(train_data, heldout, schema, subset, phase, config);
    let mut trace = Vec::new();
    let full = step(all.clone(), SelectionPhase::LeaveOneOut)?;
    let full_score = full.score;
    trace.push(full);
    if all.len() == 1 {
        return Ok(FeatureSelection { selected: all, score: full_score, avoided: vec![], trace });
    }
    let without: Vec<SelectionStep> = all
        .par_iter()
        .map(|f| step(all.iter().filter(|g| *g != f).cloned().collect(), SelectionPhase::LeaveOneOut))
        .collect::<Result<_>>()?;
    let mut avoided = Vec::new();
    for (f, st) in all.iter().zip(without) {
        if st.score > full_score {
            avoided.push(f.clone());
        }
        trace.push(st);
    }
    let mut survivors: Vec<String> = all.iter().filter(|f| !avoided.contains(f)).cloned().collect();
    if survivors.is_empty() {
        survivors = all.clone();
    }

    let score_all = |subsets: Vec<Vec<String>>| -> Result<Vec<SelectionStep>> {
        subsets.into_par_iter().map(|s| step(s, SelectionPhase::Beam)).collect()
    };
    let mut level = Vec::new();
    for st in score_all(survivors.iter().map(|f| vec![f.clone()]).collect())? {
        level.push((st.subset.clone(), st.score));
        trace.push(st);
    }
    level.sort_by(better);
    level.truncate(beam_width);
    let mut best = level[0].clone();
    loop {
        // each candidate remembers the best score among the beam subsets that generate it
        let mut parents: BTreeMap<Vec<String>, f64> = BTreeMap::new();
        for (s, score) in &level {
            for f in survivors.iter().filter(|f| !s.contains(f)) {
                let mut ext = s.clone();
                ext.push(f.clone());
                ext.sort();
                let e = parents.entry(ext).or_insert(f64::NEG_INFINITY);
                *e = e.max(*score);
            }
        }
        if parents.is_empty() {
            break;
        }
        let mut next = Vec::new();
        for st in score_all(parents.keys().cloned().collect())? {
            if st.score > parents[&st.subset] && st.unused.is_empty() {
                next.push((st.subset.clone(), st.score));
            }
            trace.push(st);
        }
        if next.is_empty() {
            break;
        }
        next.sort_by(better);
        next.truncate(beam_width);
        if better(&next[0], &best) == Ordering::Less {
            best = next[0].clone();
        }
        level = next;
    }
    Ok(FeatureSelection { selected: best.0, score: best.1, avoided, trace })
}

/// Share of node queries per feature group over held-out traversals. Features
/// missing from `groups` form their own group.
pub fn feature_usage(
    tree: &DecisionTree,
    heldout: &[BoundaryFeatureVector],
    groups: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, f64>> {
    if heldout.is_empty() {
        return Err(Error::invalid("feature usage needs held-out data"));
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0u64;
    for v in heldout {
        let path = tree.path(v)?;
        for &i in &path[..path.len() - 1] {
            let f = &tree.nodes[i].split.as_ref().expect("inner node").feature;
            let g = groups.get(f).unwrap_or(f);
            *counts.entry(g.clone()).or_default() += 1;
            total += 1;
        }
    }
    Ok(counts.into_iter().map(|(g, c)| (g, c as f64 / total as f64)).collect())
}
