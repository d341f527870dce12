use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use topicseg::chop::{chop, parse_units, project_boundaries, write_units};
use topicseg::combine::{cm_dt_schema, tune, TuneReport};
use topicseg::corpus::{parse_feature_table, parse_shows, parse_stories, write_feature_table, write_shows};
use topicseg::eval::{evaluate, parse_hypotheses, write_hypotheses, EvalReport};
use topicseg::lm::{cluster_stories, content_bag, estimate_model, ClusterConfig, EdgeUnits};
use topicseg::pipeline::{augmented_vectors, decode_with, lm_posteriors, prepare_from_units, to_show_hypotheses};
use topicseg::synth::{generate, generate_stories, planted_model, write_stories};
use topicseg::tree::{select_features, train};
use topicseg::{
    ChopCriterion, ChopUnit, CombinerConfig, DecisionTree, EvalConfig, FeatureSchema, FeatureTable, Mode, Models,
    PreparedShow, Show, Stoplist, TopicClusterModel,
};

use crate::config::{self, ChopConfig, SynthConfig, TrainLmConfig, TrainTreeConfig, TuneConfig};
use crate::output::{manifest_for, read_input, Run};
use crate::{ChopArgs, EvaluateArgs, ReportFormat, SegmentArgs, SynthArgs, TrainLmArgs, TrainTreeArgs, TuneArgs};

fn load_shows(run: &mut Run, path: &Path) -> Result<Vec<Show>> {
    parse_shows(&read_input(run, path)?).with_context(|| format!("in {}", path.display()))
}

fn load_table(run: &mut Run, path: &Path, kinds: &FeatureSchema) -> Result<FeatureTable> {
    parse_feature_table(&read_input(run, path)?, kinds).with_context(|| format!("in {}", path.display()))
}

fn load_lm(run: &mut Run, path: &Path) -> Result<TopicClusterModel> {
    TopicClusterModel::from_json(&read_input(run, path)?).with_context(|| format!("in {}", path.display()))
}

fn load_tree(run: &mut Run, path: &Path) -> Result<DecisionTree> {
    DecisionTree::from_json(&read_input(run, path)?).with_context(|| format!("in {}", path.display()))
}

fn load_combiner(run: &mut Run, path: &Path) -> Result<CombinerConfig> {
    let cfg: CombinerConfig =
        serde_json::from_str(&read_input(run, path)?).with_context(|| format!("invalid combiner config {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Open schema: prosodic names pre-declared, plus kinds given in a config.
fn reading_schema(kinds: &BTreeMap<String, config::KindName>) -> FeatureSchema {
    let mut s = FeatureSchema::prosodic();
    s.kinds.insert(topicseg::POST_TOPIC.to_string(), topicseg::FeatureKind::Numeric);
    for (name, k) in kinds {
        s.kinds.insert(name.clone(), (*k).into());
    }
    s
}

struct Inputs {
    prepared: Vec<PreparedShow>,
    table: Option<FeatureTable>,
}

/// Joins shows with their units file, unit likelihoods and feature rows.
fn prepare(
    run: &mut Run,
    shows: &Path,
    units: &Path,
    features: Option<&Path>,
    lm: Option<&TopicClusterModel>,
    use_begin_end: bool,
) -> Result<Inputs> {
    let shows = load_shows(run, shows)?;
    let unit_rows = parse_units(&read_input(run, units)?).with_context(|| format!("in {}", units.display()))?;
    let mut by_show: BTreeMap<String, Vec<ChopUnit>> = BTreeMap::new();
    for u in unit_rows {
        let id = u[0].show_id.clone();
        if by_show.insert(id.clone(), u).is_some() {
            bail!("{} lists show {id} twice", units.display());
        }
    }
    let table = features.map(|f| load_table(run, f, &reading_schema(&BTreeMap::new()))).transpose()?;
    let prepared = shows
        .par_iter()
        .map(|s| {
            let u = by_show
                .get(&s.show_id)
                .cloned()
                .ok_or_else(|| anyhow!("show {} has no units in {}", s.show_id, units.display()))?;
            Ok(prepare_from_units(s, u, lm, use_begin_end, table.as_ref())?)
        })
        .collect::<Result<Vec<_>>>()?;
    for p in &prepared {
        if table.is_some() && !p.uncovered().is_empty() {
            eprintln!(
                "warning: show {}: {} boundaries have no feature row and are treated as all-missing",
                p.show.show_id,
                p.uncovered().len()
            );
        }
    }
    Ok(Inputs { prepared, table })
}

pub fn chop_cmd(args: &ChopArgs) -> Result<()> {
    let mut run = Run::new("chop");
    let mut cfg: ChopConfig = config::load(&mut run, args.config.as_deref())?;
    if let Some(c) = args.criterion {
        cfg.criterion = match c {
            crate::CriterionArg::Fixed => ChopCriterion::Fixed { block_length: 10 },
            crate::CriterionArg::Turn => ChopCriterion::Turn,
            crate::CriterionArg::Pause => ChopCriterion::default(),
            crate::CriterionArg::Sentence => ChopCriterion::Sentence,
        };
    }
    match &mut cfg.criterion {
        ChopCriterion::Fixed { block_length } => *block_length = args.block_length.unwrap_or(*block_length),
        ChopCriterion::Pause { threshold } => *threshold = args.pause_threshold.unwrap_or(*threshold),
        _ => {}
    }
    cfg.criterion.validate()?;
    let shows = load_shows(&mut run, &args.shows)?;
    let rows = shows
        .par_iter()
        .map(|s| {
            let units = chop(s, &cfg.criterion)?;
            let proj = project_boundaries(s, &units);
            if !proj.unreachable.is_empty() {
                eprintln!(
                    "warning: show {}: {} reference boundaries fall inside units",
                    s.show_id,
                    proj.unreachable.len()
                );
            }
            Ok((units, proj))
        })
        .collect::<Result<Vec<_>>>()?;
    run.write(&args.out, &write_units(&rows))?;
    run.finish(&manifest_for(&args.out), &cfg)
}

pub fn train_lm_cmd(args: &TrainLmArgs) -> Result<()> {
    let mut run = Run::new("train-lm");
    let mut cfg: TrainLmConfig = config::load(&mut run, args.config.as_deref())?;
    cfg.clusters = args.clusters.unwrap_or(cfg.clusters);
    cfg.lambda = args.lambda.unwrap_or(cfg.lambda);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.min_words = args.min_words.unwrap_or(cfg.min_words);
    cfg.max_words = args.max_words.unwrap_or(cfg.max_words);
    cfg.begin_end_words = args.begin_end_words.or(cfg.begin_end_words);

    let text = read_input(&mut run, &args.stories)?;
    let stoplist = Stoplist::parse(&read_input(&mut run, &args.stoplist)?);
    let load = parse_stories(&text, cfg.min_words, cfg.max_words).with_context(|| format!("in {}", args.stories.display()))?;
    eprintln!("{} stories kept, {} dropped by length", load.stories.len(), load.dropped);
    let bags: Vec<_> = load.stories.iter().map(|s| content_bag(s, &stoplist)).collect();
    let clustering = cluster_stories(
        &bags,
        &ClusterConfig {
            clusters: cfg.clusters,
            seed: cfg.seed,
            max_passes: cfg.max_passes,
            ..ClusterConfig::default()
        },
    )?;
    eprintln!("clustering objective {:.6}", clustering.objective());
    let edges = cfg.begin_end_words.map(|n| {
        let kept: BTreeSet<&str> = load.stories.iter().map(|s| s.story_id.as_str()).collect();
        let texts: Vec<Vec<String>> = text
            .lines()
            .filter_map(|l| l.split_once('\t'))
            .filter(|(id, _)| kept.contains(id.trim()))
            .map(|(_, w)| w.split_whitespace().filter(|w| stoplist.is_content(w)).map(String::from).collect())
            .collect();
        EdgeUnits::from_stories_text(&texts, n)
    });
    let model = estimate_model(&load.stories, &clustering.assignment, cfg.clusters, cfg.lambda, &stoplist, edges.as_ref())?;
    run.write(&args.out, &model.to_json()?)?;
    run.finish(&manifest_for(&args.out), &cfg)
}

pub fn train_tree_cmd(args: &TrainTreeArgs) -> Result<()> {
    let mut run = Run::new("train-tree");
    let mut cfg: TrainTreeConfig = config::load(&mut run, args.config.as_deref())?;
    cfg.tree.seed = args.seed.unwrap_or(cfg.tree.seed);
    let schema = reading_schema(&cfg.kinds);
    let table = load_table(&mut run, &args.features, &schema)?;
    let mut train_schema = table.schema.clone();
    if !cfg.features.is_empty() {
        if let Some(f) = cfg.features.iter().find(|f| train_schema.kind(f).is_none()) {
            bail!("feature {f} is not a column of {}", args.features.display());
        }
        train_schema = train_schema.subset(cfg.features.iter().map(String::as_str));
    }
    if args.posterior_feature && train_schema.kind(topicseg::POST_TOPIC).is_none() {
        bail!(
            "{} has no {} column; produce it with `segment --emit-features`",
            args.features.display(),
            topicseg::POST_TOPIC
        );
    }
    if table.vectors.iter().any(|v| v.label.is_none()) {
        bail!("{} has unlabeled rows; tree training needs a label column", args.features.display());
    }

    if args.select_features {
        let heldout_path = args
            .heldout
            .as_deref()
            .ok_or_else(|| anyhow!("--select-features needs --heldout"))?;
        let heldout = load_table(&mut run, heldout_path, &schema)?;
        let selection = select_features(&table.vectors, &heldout.vectors, &train_schema, cfg.beam_width, &cfg.tree)?;
        eprintln!("selected {:?} (score {:.6})", selection.selected, selection.score);
        let mut sel_path = args.out.as_os_str().to_owned();
        sel_path.push(".selection.json");
        run.write(Path::new(&sel_path), &(serde_json::to_string_pretty(&selection)? + "\n"))?;
        train_schema = train_schema.subset(selection.selected.iter().map(String::as_str));
    }
    let tree = train(&table.vectors, &train_schema, &cfg.tree)?;
    eprintln!("{} leaves, depth {}", tree.n_leaves(), tree.depth());
    run.write(&args.out, &tree.to_json()?)?;
    run.finish(&manifest_for(&args.out), &cfg)
}

fn mode_of(m: crate::ModeArg) -> Mode {
    match m {
        crate::ModeArg::Lm => Mode::Lm,
        crate::ModeArg::Pm => Mode::Pm,
        crate::ModeArg::CmDt => Mode::CmDt,
        crate::ModeArg::CmHmm => Mode::CmHmm,
    }
}

#[derive(Serialize)]
struct TuneEcho<'a> {
    mode: Mode,
    tune: &'a TuneConfig,
    base: &'a CombinerConfig,
}

pub fn tune_cmd(args: &TuneArgs) -> Result<()> {
    let mut run = Run::new("tune");
    let mut cfg: TuneConfig = config::load(&mut run, args.grid.as_deref())?;
    cfg.eval.k = args.word_k.unwrap_or(cfg.eval.k);
    cfg.use_begin_end |= args.use_begin_end;
    let mode = mode_of(args.mode);
    let lm = args.lm.as_deref().map(|p| load_lm(&mut run, p)).transpose()?;
    let prosody = args.prosody_tree.as_deref().map(|p| load_tree(&mut run, p)).transpose()?;
    let cm_dt = args.cm_dt_tree.as_deref().map(|p| load_tree(&mut run, p)).transpose()?;
    let mut base = match &args.lm_config {
        Some(p) => load_combiner(&mut run, p)?,
        None => CombinerConfig::new(mode, lm.as_ref().map_or(1, |m| m.n_clusters()), 1e-3),
    };
    base.use_begin_end = cfg.use_begin_end;
    if let Some(m) = &lm {
        check_clusters(&base, m)?;
    }
    let inputs = prepare(&mut run, &args.dev_shows, &args.units, args.features.as_deref(), lm.as_ref(), cfg.use_begin_end)?;
    let models = Models {
        lm: lm.as_ref(),
        prosody: prosody.as_ref(),
        cm_dt: cm_dt.as_ref(),
    };
    let report = tune(&inputs.prepared, mode, &cfg.grid, &models, &base, &cfg.eval)?;
    print!("{}", render_tune(&report, args.report));
    run.write(&args.out, &(serde_json::to_string_pretty(&report.config)? + "\n"))?;
    if let Some(p) = &args.report_out {
        run.write(p, &render_tune(&report, args.report))?;
    }
    run.finish(&manifest_for(&args.out), &TuneEcho { mode, tune: &cfg, base: &base })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| format!("{v}"))
}

fn render_tune(report: &TuneReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Tsv => {
            let mut out = String::from("source\ttsp\tmcw\tthreshold\tp_miss\tp_fa\tc_seg\n");
            for r in &report.table {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.source.as_deref().unwrap_or("*"),
                    opt(r.tsp),
                    opt(r.mcw),
                    opt(r.threshold),
                    opt(r.p_miss),
                    opt(r.p_fa),
                    opt(r.c_seg)
                );
            }
            let _ = writeln!(out, "# chosen dev c_seg\t{}", report.dev_c_seg);
            out
        }
    }
}

fn check_clusters(cfg: &CombinerConfig, lm: &TopicClusterModel) -> Result<()> {
    if cfg.mode != Mode::Pm && cfg.clusters != lm.n_clusters() {
        bail!(
            "cluster count mismatch: config has C = {} but model has C = {}",
            cfg.clusters,
            lm.n_clusters()
        );
    }
    Ok(())
}

/// Boundary log likelihoods `show_id TAB boundary_index TAB loglike_yes TAB loglike_no`.
fn parse_likes(text: &str) -> Result<BTreeMap<String, BTreeMap<usize, (f64, f64)>>> {
    let mut out: BTreeMap<String, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("show_id\t") {
            continue;
        }
        let c: Vec<&str> = line.split('\t').collect();
        if c.len() != 4 {
            bail!("line {}: expected show_id, boundary_index, loglike_yes, loglike_no", i + 1);
        }
        let idx: usize = c[1].parse().with_context(|| format!("line {}: bad boundary index", i + 1))?;
        let yes: f64 = c[2].parse().with_context(|| format!("line {}: bad loglike_yes", i + 1))?;
        let no: f64 = c[3].parse().with_context(|| format!("line {}: bad loglike_no", i + 1))?;
        if out.entry(c[0].to_string()).or_default().insert(idx, (yes, no)).is_some() {
            bail!("line {}: duplicate boundary {} of show {}", i + 1, idx, c[0]);
        }
    }
    Ok(out)
}

pub fn segment_cmd(args: &SegmentArgs) -> Result<()> {
    let mut run = Run::new("segment");
    let mut cfg = load_combiner(&mut run, &args.config)?;
    if let Some(m) = args.mode {
        cfg.mode = mode_of(m);
    }
    let lm = args.lm.as_deref().map(|p| load_lm(&mut run, p)).transpose()?;
    if let Some(m) = &lm {
        check_clusters(&cfg, m)?;
    }
    let prosody = args.prosody_tree.as_deref().map(|p| load_tree(&mut run, p)).transpose()?;
    let cm_dt = args.cm_dt_tree.as_deref().map(|p| load_tree(&mut run, p)).transpose()?;
    let likes = args
        .boundary_likes
        .as_deref()
        .map(|p| -> Result<_> { parse_likes(&read_input(&mut run, p)?).with_context(|| format!("in {}", p.display())) })
        .transpose()?;
    let inputs = prepare(&mut run, &args.shows, &args.units, args.features.as_deref(), lm.as_ref(), cfg.use_begin_end)?;
    let models = Models {
        lm: lm.as_ref(),
        prosody: prosody.as_ref(),
        cm_dt: cm_dt.as_ref(),
    };
    let hyps = inputs
        .prepared
        .par_iter()
        .map(|p| {
            let show_likes = match &likes {
                Some(l) => {
                    let rows = l.get(&p.show.show_id);
                    let v = p.units[..p.n_boundaries()]
                        .iter()
                        .map(|u| {
                            rows.and_then(|r| r.get(&u.boundary_after())).copied().ok_or_else(|| {
                                anyhow!("no boundary likelihood for show {} boundary {}", p.show.show_id, u.boundary_after())
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Some(v)
                }
                None => None,
            };
            Ok(decode_with(p, &cfg, &models, show_likes.as_deref())?)
        })
        .collect::<Result<Vec<_>>>()?;
    run.write(&args.out, &write_hypotheses(&to_show_hypotheses(&inputs.prepared, &hyps)?))?;
    if let Some(path) = &args.emit_features {
        let lm = lm.as_ref().ok_or_else(|| anyhow!("--emit-features needs --lm"))?;
        let vectors = inputs
            .prepared
            .par_iter()
            .map(|p| Ok(augmented_vectors(p, &lm_posteriors(p, lm, cfg.tsp_for(&p.show.source_type), cfg.use_begin_end)?)?))
            .collect::<Result<Vec<_>>>()?
            .concat();
        let base = inputs.table.as_ref().map_or_else(|| FeatureSchema::closed([]), |t| t.schema.clone());
        run.write(path, &write_feature_table(&FeatureTable::new(cm_dt_schema(&base), vectors)?))?;
    }
    run.finish(&manifest_for(&args.out), &cfg)
}

fn render_eval(report: &EvalReport, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(report)? + "\n",
        ReportFormat::Tsv => {
            let mut out = String::from("scope\tmetric\tp_miss\tp_fa\tc_seg\tmiss\tmiss_den\tfa\tfa_den\n");
            for (name, m) in [("word", &report.word), ("time", &report.time)] {
                let c = &m.counts;
                let _ = writeln!(
                    out,
                    "*\t{name}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    opt(m.p_miss),
                    opt(m.p_fa),
                    opt(m.c_seg),
                    c.miss,
                    c.miss_den,
                    c.fa,
                    c.fa_den
                );
            }
            for s in &report.shows {
                for (name, c) in [("word", &s.word), ("time", &s.time)] {
                    let _ = writeln!(
                        out,
                        "{}\t{name}\t{}\t{}\tNA\t{}\t{}\t{}\t{}",
                        s.show_id,
                        opt(c.p_miss()),
                        opt(c.p_fa()),
                        c.miss,
                        c.miss_den,
                        c.fa,
                        c.fa_den
                    );
                }
            }
            out
        }
    })
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let mut run = Run::new("evaluate");
    let cfg = EvalConfig {
        k: args.word_k,
        delta: args.time_delta,
        ..EvalConfig::default()
    };
    let shows = load_shows(&mut run, &args.reference)?;
    let hyps = parse_hypotheses(&read_input(&mut run, &args.hyp)?).with_context(|| format!("in {}", args.hyp.display()))?;
    let report = evaluate(&shows, &hyps, &cfg)?;
    let text = render_eval(&report, args.report)?;
    print!("{text}");
    if let Some(out) = &args.out {
        run.write(out, &text)?;
        run.finish(&manifest_for(out), &cfg)?;
    }
    Ok(())
}

pub fn synth_cmd(args: &SynthArgs) -> Result<()> {
    let mut run = Run::new("synth");
    let mut cfg: SynthConfig = config::load(&mut run, args.profile.as_deref())?;
    if let Some(n) = args.shows {
        for s in &mut cfg.sources {
            s.shows = n;
        }
    }
    if let Some(n) = args.stories {
        cfg.stories.get_or_insert_with(Default::default).count = n;
    }
    let dir = &args.out_dir;
    let model = match &args.model {
        Some(p) => load_lm(&mut run, p)?,
        None => {
            let m = planted_model(&cfg.planted, args.seed)?;
            run.write(&dir.join("model.json"), &m.to_json()?)?;
            m
        }
    };
    let spec = topicseg::synth::SynthSpec {
        sources: cfg.sources.clone(),
        profiles: cfg.profiles.clone(),
    };
    let corpus = generate(&model, &spec, args.seed)?;
    run.write(&dir.join("shows.txt"), &write_shows(&corpus.shows))?;
    run.write(&dir.join("features.tsv"), &write_feature_table(&corpus.features))?;
    let stop: Vec<&str> = model.stoplist().words.iter().map(String::as_str).collect();
    run.write(&dir.join("stoplist.txt"), &(stop.join("\n") + "\n"))?;
    if let Some(st) = &cfg.stories {
        let stories = generate_stories(&model, st, args.seed.wrapping_add(1))?;
        run.write(&dir.join("stories.txt"), &write_stories(&stories))?;
    }
    let echo = SynthEcho { seed: args.seed, config: &cfg };
    run.finish(&dir.join("manifest.json"), &echo)
}

#[derive(Serialize)]
struct SynthEcho<'a> {
    seed: u64,
    config: &'a SynthConfig,
}
