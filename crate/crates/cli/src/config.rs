//! TOML configuration files. Every file carries `schema_version`; command-line
//! flags override file values and the effective config lands in the manifest.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use topicseg::synth::{FeatureProfiles, PlantedSpec, SourceTopology, StorySpec};
use topicseg::{ChopCriterion, EvalConfig, FeatureKind, TreeTrainConfig, TuneGrid};

use crate::output::{read_input, Run};

pub const SCHEMA_VERSION: u32 = 1;

/// Reads a config file (or the defaults) and checks its schema version.
pub fn load<T>(run: &mut Run, path: Option<&Path>) -> Result<T>
where
    T: DeserializeOwned + Default + Versioned,
{
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = read_input(run, path)?;
    let cfg: T = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
    if cfg.schema_version() != SCHEMA_VERSION {
        bail!(
            "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            cfg.schema_version()
        );
    }
    Ok(cfg)
}

pub trait Versioned {
    fn schema_version(&self) -> u32;
}

macro_rules! versioned {
    ($($t:ty),*) => {$(
        impl Versioned for $t {
            fn schema_version(&self) -> u32 {
                self.schema_version
            }
        }
    )*};
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChopConfig {
    pub schema_version: u32,
    pub criterion: ChopCriterion,
}

impl Default for ChopConfig {
    fn default() -> Self {
        ChopConfig {
            schema_version: SCHEMA_VERSION,
            criterion: ChopCriterion::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainLmConfig {
    pub schema_version: u32,
    pub clusters: usize,
    pub lambda: f64,
    pub seed: u64,
    pub max_passes: usize,
    pub min_words: u64,
    pub max_words: u64,
    /// Estimate BEGIN/END unigrams from this many words at each story edge.
    pub begin_end_words: Option<usize>,
}

impl Default for TrainLmConfig {
    fn default() -> Self {
        TrainLmConfig {
            schema_version: SCHEMA_VERSION,
            clusters: 100,
            lambda: 0.9,
            seed: 0,
            max_passes: 50,
            min_words: 300,
            max_words: 3000,
            begin_end_words: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindName {
    Numeric,
    Categorical,
}

impl From<KindName> for FeatureKind {
    fn from(k: KindName) -> Self {
        match k {
            KindName::Numeric => FeatureKind::Numeric,
            KindName::Categorical => FeatureKind::Categorical,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainTreeConfig {
    pub schema_version: u32,
    pub tree: TreeTrainConfig,
    pub beam_width: usize,
    /// Kinds of columns without a `:num`/`:cat` header suffix.
    pub kinds: BTreeMap<String, KindName>,
    /// Restrict training to these features; empty means every column.
    pub features: Vec<String>,
}

impl Default for TrainTreeConfig {
    fn default() -> Self {
        TrainTreeConfig {
            schema_version: SCHEMA_VERSION,
            tree: TreeTrainConfig::default(),
            beam_width: 5,
            kinds: BTreeMap::new(),
            features: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub schema_version: u32,
    pub grid: TuneGrid,
    pub eval: EvalConfig,
    pub use_begin_end: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            schema_version: SCHEMA_VERSION,
            grid: TuneGrid {
                tsp: (-12..=0).map(|e| 10f64.powi(e)).collect(),
                mcw: vec![0.25, 0.5, 1.0, 2.0, 4.0],
                threshold: (1..20).map(|i| i as f64 * 0.05).collect(),
            },
            eval: EvalConfig::default(),
            use_begin_end: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub schema_version: u32,
    /// Planted model, used when no `--model` is given.
    pub planted: PlantedSpec,
    /// Training stories drawn from the model; none when absent.
    pub stories: Option<StorySpec>,
    pub sources: Vec<SourceTopology>,
    pub profiles: FeatureProfiles,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let source = |name: &str, density: f64| SourceTopology {
            name: name.into(),
            shows: 10,
            sentences_per_show: (100, 150),
            sentence_words: (8, 20),
            boundary_density: density,
        };
        SynthConfig {
            schema_version: SCHEMA_VERSION,
            planted: PlantedSpec::default(),
            stories: None,
            sources: vec![source("nwt", 0.05), source("bn", 0.08)],
            profiles: FeatureProfiles::default(),
        }
    }
}

versioned!(ChopConfig, TrainLmConfig, TrainTreeConfig, TuneConfig, SynthConfig);
