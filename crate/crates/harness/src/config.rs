//! Flat `key = value` run configuration. `#` starts a comment; unknown keys
//! are rejected. Relative paths resolve against the file's directory.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `beta`, `gamma`, `lambda` | 0.3, 0.15, 0.8 | loss weights |
//! | `knowledge` | both | none, cooccurrence, wup or both |
//! | `theta.cooccurrence`, `theta.wup` | 0.3, 0.5 | edge thresholds |
//! | `center_bias` | true | learnable prior maps |
//! | `priors`, `heads`, `channels`, `pool` | 16, 8, 32, 7 | model sizes |
//! | `lr`, `decay` | 1e-3, 1e-4 | optimizer |
//! | `batch`, `iterations` | 10, 200 | training length |
//! | `seed` | 0 | model init and batch order |
//! | `seeds` | 0,1,2 | ablation seeds |
//! | `val_fraction` | 0.2 | held-out share |
//! | `scenes` | 200 | scenes generated by `ablate` |
//! | `data_seed` | 7 | scene generator seed |
//! | `width`, `height` | 64, 64 | scene size |
//! | `min_objects`, `max_objects` | 3, 8 | objects per scene |
//! | `min_side`, `max_side` | 10, 16 | object box sides |
//! | `fixations`, `blur_sigma`, `noise` | 20, 1.0, 0.08 | scene rendering |
//! | `taxonomy`, `corpus`, `categories` | built in | knowledge sources |

use std::fs;
use std::path::{Path, PathBuf};

use grassnet_core::head::LossWeights;
use grassnet_core::knowledge::{
    build_cooccurrence_graph, build_wup_graph, parse_categories, CooccurrenceCorpus, ProximityGraph, Taxonomy,
};
use grassnet_core::model::{Knowledge, ModelConfig, Source};
use grassnet_core::tensor::AdamConfig;
use grassnet_core::{Error, Result};

use crate::defaults;
use crate::synth::SceneSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub weights: LossWeights,
    pub model: ModelConfig,
    pub lr: f64,
    pub decay: f64,
    pub batch: usize,
    pub iterations: usize,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub val_fraction: f64,
    pub scenes: usize,
    pub data_seed: u64,
    pub width: usize,
    pub height: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_side: usize,
    pub max_side: usize,
    pub fixations: usize,
    pub blur_sigma: f64,
    pub noise: f64,
    pub taxonomy: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub categories: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            weights: LossWeights::default(),
            model: ModelConfig::default(),
            lr: adam.lr,
            decay: adam.decay,
            batch: 10,
            iterations: 200,
            seed: 0,
            seeds: vec![0, 1, 2],
            val_fraction: 0.2,
            scenes: 200,
            data_seed: 7,
            width: 64,
            height: 64,
            min_objects: 3,
            max_objects: 8,
            min_side: 10,
            max_side: 16,
            fixations: 20,
            blur_sigma: 1.0,
            noise: 0.08,
            taxonomy: None,
            corpus: None,
            categories: None,
        }
    }
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "config",
        detail: detail.into(),
    }
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| bad(format!("{key}: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "beta" => c.weights.beta = value(k, v)?,
                "gamma" => c.weights.gamma = value(k, v)?,
                "lambda" => c.weights.lambda = value(k, v)?,
                "knowledge" => c.model.knowledge = v.parse::<Knowledge>().map_err(|e| bad(e.to_string()))?,
                "theta.cooccurrence" => c.model.theta_cooccurrence = value(k, v)?,
                "theta.wup" => c.model.theta_wup = value(k, v)?,
                "center_bias" => c.model.center_bias = value(k, v)?,
                "priors" => c.model.priors = value(k, v)?,
                "heads" => c.model.heads = value(k, v)?,
                "channels" => c.model.channels = value(k, v)?,
                "pool" => c.model.pool = value(k, v)?,
                "lr" => c.lr = value(k, v)?,
                "decay" => c.decay = value(k, v)?,
                "batch" => c.batch = value(k, v)?,
                "iterations" => c.iterations = value(k, v)?,
                "seed" => c.seed = value(k, v)?,
                "seeds" => c.seeds = v.split(',').map(|s| value(k, s.trim())).collect::<Result<_>>()?,
                "val_fraction" => c.val_fraction = value(k, v)?,
                "scenes" => c.scenes = value(k, v)?,
                "data_seed" => c.data_seed = value(k, v)?,
                "width" => c.width = value(k, v)?,
                "height" => c.height = value(k, v)?,
                "min_objects" => c.min_objects = value(k, v)?,
                "max_objects" => c.max_objects = value(k, v)?,
                "min_side" => c.min_side = value(k, v)?,
                "max_side" => c.max_side = value(k, v)?,
                "fixations" => c.fixations = value(k, v)?,
                "blur_sigma" => c.blur_sigma = value(k, v)?,
                "noise" => c.noise = value(k, v)?,
                "taxonomy" => c.taxonomy = Some(base.join(v)),
                "corpus" => c.corpus = Some(base.join(v)),
                "categories" => c.categories = Some(base.join(v)),
                _ => return Err(bad(format!("line {}: unknown key `{k}`", n + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.model.validate()?;
        if self.lr.is_nan() || self.lr <= 0.0 || self.decay.is_nan() || self.decay < 0.0 {
            return Err(bad("lr must be positive and decay non-negative"));
        }
        if self.batch == 0 || self.iterations == 0 || self.seeds.is_empty() {
            return Err(bad("batch, iterations and seeds must be non-empty"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(bad("val_fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            decay: self.decay,
            ..AdamConfig::default()
        }
    }

    pub fn category_list(&self) -> Result<Vec<String>> {
        match &self.categories {
            Some(p) => Ok(parse_categories(&fs::read_to_string(p)?)),
            None => Ok(defaults::categories()),
        }
    }

    /// External graph for one source, from configured files or the built-in
    /// world.
    pub fn graph(&self, source: Source) -> Result<ProximityGraph> {
        let cats = self.category_list()?;
        let g = match source {
            Source::Cooccurrence => match &self.corpus {
                Some(p) => build_cooccurrence_graph(&CooccurrenceCorpus::parse(&fs::read_to_string(p)?), &cats)?,
                None => build_cooccurrence_graph(&defaults::corpus(), &cats)?,
            },
            Source::Wup => match &self.taxonomy {
                Some(p) => build_wup_graph(&Taxonomy::parse(&fs::read_to_string(p)?)?, &cats)?,
                None => build_wup_graph(&defaults::taxonomy(), &cats)?,
            },
        };
        g.with_theta(self.model.theta(source))
    }

    pub fn scene_spec(&self) -> Result<SceneSpec> {
        let categories = self.category_list()?;
        let graph = ProximityGraph::mean_of(&[&self.graph(Source::Cooccurrence)?, &self.graph(Source::Wup)?])?;
        let spec = SceneSpec {
            width: self.width,
            height: self.height,
            appearances: (0..categories.len()).map(defaults::appearance).collect(),
            categories,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            min_side: self.min_side,
            max_side: self.max_side,
            gap: 2,
            fixations: self.fixations,
            blur_sigma: self.blur_sigma,
            noise: self.noise,
            graph,
            seed: self.data_seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}
