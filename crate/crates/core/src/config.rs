//! Plain-text experiment configuration.
//!
//! One `key = value` per line, `#` starts a comment, nesting uses dotted keys.
//! Lists are comma separated. Scenario variants override any key through
//! `variant.<name>.<key> = value`, e.g.
//!
//! ```text
//! scenario.name = 5-nodes
//! scenario.n_nodes = 5
//! variants = 5-nodes-missing-class
//! variant.5-nodes-missing-class.scenario.missing_classes = 3
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::analysis::SelectionPolicy;
use crate::data::{CifarOptions, SyntheticSpec};
use crate::error::{Error, Result};
use crate::flsim::{BoundConfig, Heterogeneity, ProbeConfig, ScenarioConfig};
use crate::model::ModelSpec;
use crate::probe::GMode;

/// Environment variable that replaces `repeat_seeds` with a single seed.
pub const SEED_ENV: &str = "FEDBOUND_SEED";

const KNOWN_KEYS: &[&str] = &[
    "output_dir",
    "repeat_seeds",
    "variants",
    "parallel",
    "dataset.source",
    "dataset.path",
    "dataset.pool",
    "dataset.grayscale",
    "synthetic.num_classes",
    "synthetic.feature_dim",
    "synthetic.samples_per_class",
    "synthetic.separation",
    "synthetic.sigma",
    "synthetic.label_skew",
    "synthetic.noise_multiplier",
    "synthetic.feature_gain",
    "model.kind",
    "model.hidden",
    "model.l2",
    "scenario.name",
    "scenario.n_nodes",
    "scenario.samples_per_node",
    "scenario.missing_classes",
    "scenario.local_epochs",
    "scenario.rounds",
    "scenario.lr",
    "scenario.batch_size",
    "scenario.test_fraction",
    "probe.n_probes",
    "probe.sampler",
    "probe.sigma",
    "probe.g_mode",
    "bound.squared_distance",
    "bound.distance",
    "selection.k",
    "selection.policies",
];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed but uninterpreted key-value pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, got {content:?}"),
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Config {
                    line,
                    message: format!("invalid key {key:?}"),
                });
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line,
            };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key {key:?} (first set on line {})", prev.line),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: &str) {
        let line = self.entries.get(key).map_or(0, |e| e.line);
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    fn err(&self, key: &str, message: impl Display) -> Error {
        Error::Config {
            line: self.line_of(key),
            message: format!("{key}: {message}"),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.entries
            .get(key)
            .map(|e| {
                e.value
                    .parse::<T>()
                    .map_err(|err| self.err(key, format!("{:?}: {err}", e.value)))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(e) = self.entries.get(key) else {
            return Ok(None);
        };
        if e.value.is_empty() {
            return Ok(Some(Vec::new()));
        }
        e.value
            .split(',')
            .map(|item| {
                let item = item.trim();
                item.parse::<T>()
                    .map_err(|err| self.err(key, format!("{item:?}: {err}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Keys that are neither known nor a variant override of a known key.
    fn check_keys(&self) -> Result<()> {
        let variants: Vec<String> = self.list::<String>("variants")?.unwrap_or_default();
        for (key, e) in &self.entries {
            if KNOWN_KEYS.contains(&key.as_str()) {
                continue;
            }
            let ok = key.strip_prefix("variant.").is_some_and(|rest| {
                variants.iter().any(|v| {
                    rest.strip_prefix(v.as_str())
                        .and_then(|r| r.strip_prefix('.'))
                        .is_some_and(|k| KNOWN_KEYS.contains(&k) && k.starts_with("scenario."))
                })
            });
            if !ok {
                return Err(Error::Config {
                    line: e.line,
                    message: format!("unknown key {key:?}"),
                });
            }
        }
        Ok(())
    }

    /// Copy of `self` with `variant.<name>.*` applied over the base keys.
    fn with_variant(&self, name: &str) -> RawConfig {
        let prefix = format!("variant.{name}.");
        let mut out = self.clone();
        for (key, e) in &self.entries {
            if let Some(target) = key.strip_prefix(&prefix) {
                out.entries.insert(target.to_string(), e.clone());
            }
        }
        out.entries.insert(
            "scenario.name".into(),
            Entry {
                value: name.to_string(),
                line: 0,
            },
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Cifar10 {
        path: PathBuf,
        options: CifarOptions,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub k: usize,
    pub policies: Vec<SelectionPolicy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Base scenario first, then variants in declaration order. Each
    /// scenario's `seed` is a placeholder replaced per repeat.
    pub scenarios: Vec<ScenarioConfig>,
    pub dataset: DatasetSource,
    pub output_dir: PathBuf,
    pub repeat_seeds: Vec<u64>,
    pub selection: Option<SelectionConfig>,
    pub parallel: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_raw(
            &RawConfig::parse(text)?,
            std::env::var(SEED_ENV).ok().as_deref(),
        )
    }

    /// Interprets `raw`; `seed_override` stands in for the environment.
    pub fn from_raw(raw: &RawConfig, seed_override: Option<&str>) -> Result<Self> {
        raw.check_keys()?;
        let dataset = parse_dataset(raw)?;
        let num_classes = match &dataset {
            DatasetSource::Synthetic(s) => s.num_classes,
            DatasetSource::Cifar10 { .. } => crate::data::CIFAR_CLASSES,
        };
        let feature_dim = match &dataset {
            DatasetSource::Synthetic(s) => s.feature_dim,
            DatasetSource::Cifar10 { options, .. } => options.feature_dim(),
        };

        let mut scenarios = vec![parse_scenario(raw, num_classes, feature_dim, &dataset)?];
        for name in raw.list::<String>("variants")?.unwrap_or_default() {
            if name.is_empty() || name.contains(['/', '\\']) || name == scenarios[0].name {
                return Err(raw.err("variants", format!("invalid variant name {name:?}")));
            }
            scenarios.push(parse_scenario(
                &raw.with_variant(&name),
                num_classes,
                feature_dim,
                &dataset,
            )?);
        }

        let repeat_seeds = match seed_override {
            Some(s) => vec![s.trim().parse::<u64>().map_err(|e| Error::Config {
                line: 0,
                message: format!("{SEED_ENV}={s:?}: {e}"),
            })?],
            None => raw.list::<u64>("repeat_seeds")?.unwrap_or_else(|| vec![0]),
        };
        if repeat_seeds.is_empty() {
            return Err(raw.err("repeat_seeds", "must list at least one seed"));
        }
        let unique: BTreeSet<_> = repeat_seeds.iter().collect();
        if unique.len() != repeat_seeds.len() {
            return Err(raw.err("repeat_seeds", "seeds must be distinct"));
        }

        let selection = match raw.get::<usize>("selection.k")? {
            None => None,
            Some(k) => {
                let policies = raw
                    .list::<SelectionPolicy>("selection.policies")?
                    .unwrap_or_else(|| vec![SelectionPolicy::TopL, SelectionPolicy::BottomL]);
                let n = scenarios.iter().map(|s| s.n_nodes).min().unwrap_or(0);
                if k == 0 || k > n {
                    return Err(raw.err("selection.k", format!("must be in 1..={n}")));
                }
                Some(SelectionConfig { k, policies })
            }
        };

        Ok(Self {
            scenarios,
            dataset,
            output_dir: raw.get_or("output_dir", PathBuf::from("runs"))?,
            repeat_seeds,
            selection,
            parallel: raw.get("parallel")?,
        })
    }
}

fn parse_dataset(raw: &RawConfig) -> Result<DatasetSource> {
    let source: String = raw.get_or("dataset.source", "synthetic".to_string())?;
    match source.as_str() {
        "synthetic" => {
            let d = SyntheticSpec::default();
            let spec = SyntheticSpec {
                num_classes: raw.get_or("synthetic.num_classes", d.num_classes)?,
                feature_dim: raw.get_or("synthetic.feature_dim", d.feature_dim)?,
                samples_per_class: raw
                    .get_or("synthetic.samples_per_class", d.samples_per_class)?,
                separation: raw.get_or("synthetic.separation", d.separation)?,
                sigma: raw.get_or("synthetic.sigma", d.sigma)?,
                label_skew: raw.list("synthetic.label_skew")?.unwrap_or_default(),
                noise_multiplier: raw.list("synthetic.noise_multiplier")?.unwrap_or_default(),
                feature_gain: raw.list("synthetic.feature_gain")?.unwrap_or_default(),
            };
            spec.validate().map_err(|e| raw.err("synthetic", e))?;
            Ok(DatasetSource::Synthetic(spec))
        }
        "cifar10" => {
            let path: PathBuf = raw
                .get("dataset.path")?
                .ok_or_else(|| raw.err("dataset.path", "required for cifar10"))?;
            let options = CifarOptions {
                pool: raw.get_or("dataset.pool", 1)?,
                grayscale: raw.get_or("dataset.grayscale", false)?,
            };
            if options.pool == 0 || !crate::data::CIFAR_SIDE.is_multiple_of(options.pool) {
                return Err(raw.err("dataset.pool", "must divide 32"));
            }
            Ok(DatasetSource::Cifar10 { path, options })
        }
        other => Err(raw.err("dataset.source", format!("unknown source {other:?}"))),
    }
}

fn parse_model(raw: &RawConfig, num_classes: usize, feature_dim: usize) -> Result<ModelSpec> {
    let l2 = raw.get_or("model.l2", 0.001)?;
    let kind: String = raw.get_or("model.kind", "softmax".to_string())?;
    let spec = match kind.as_str() {
        "softmax" => ModelSpec::softmax(feature_dim, num_classes, l2),
        "mlp" => ModelSpec::mlp(
            feature_dim,
            raw.get_or("model.hidden", 16)?,
            num_classes,
            l2,
        ),
        other => return Err(raw.err("model.kind", format!("unknown model {other:?}"))),
    };
    spec.validate().map_err(|e| raw.err("model", e))?;
    Ok(spec)
}

fn parse_scenario(
    raw: &RawConfig,
    num_classes: usize,
    feature_dim: usize,
    dataset: &DatasetSource,
) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::new(parse_model(raw, num_classes, feature_dim)?);
    cfg.name = raw.get_or("scenario.name", cfg.name)?;
    cfg.n_nodes = raw.get_or("scenario.n_nodes", cfg.n_nodes)?;
    cfg.samples_per_node = raw.get_or("scenario.samples_per_node", cfg.samples_per_node)?;
    cfg.missing_classes = raw
        .list::<usize>("scenario.missing_classes")?
        .unwrap_or_default()
        .into_iter()
        .collect();
    cfg.local_epochs = raw.get_or("scenario.local_epochs", cfg.local_epochs)?;
    cfg.rounds = raw.get_or("scenario.rounds", cfg.rounds)?;
    cfg.lr = raw.get_or("scenario.lr", cfg.lr)?;
    cfg.batch_size = raw.get_or("scenario.batch_size", cfg.batch_size)?;
    cfg.test_fraction = raw.get_or("scenario.test_fraction", cfg.test_fraction)?;

    let sampler: String = raw.get_or("probe.sampler", "init".to_string())?;
    cfg.probe = ProbeConfig {
        n_probes: raw.get_or("probe.n_probes", cfg.probe.n_probes)?,
        perturb_sigma: match sampler.as_str() {
            "init" => None,
            "perturb" => Some(raw.get_or("probe.sigma", 0.1)?),
            other => return Err(raw.err("probe.sampler", format!("unknown sampler {other:?}"))),
        },
        g_mode: match raw
            .get_or("probe.g_mode", "gradient-norm".to_string())?
            .as_str()
        {
            "gradient-norm" => GMode::GradientNorm,
            "loss-magnitude" => GMode::LossMagnitude,
            other => return Err(raw.err("probe.g_mode", format!("unknown mode {other:?}"))),
        },
    };
    cfg.bound = BoundConfig {
        squared_distance: raw.get_or("bound.squared_distance", false)?,
        dist_override: raw.get("bound.distance")?,
    };
    if let DatasetSource::Synthetic(s) = dataset {
        cfg.heterogeneity = Heterogeneity {
            label_skew: s.label_skew.clone(),
            noise_multiplier: s.noise_multiplier.clone(),
            feature_gain: s.feature_gain.clone(),
            // filled in once the data is generated
            base_sigma: 0.0,
        };
    }

    cfg.validate().map_err(|e| {
        let key = match &e {
            Error::InvalidArgument(m) if m.contains("missing class") => "scenario.missing_classes",
            Error::InvalidArgument(m) if m.contains("batch_size") => "scenario.batch_size",
            Error::InvalidArgument(m) if m.contains("rounds") => "scenario.rounds",
            Error::InvalidArgument(m)
                if m.contains("skew") || m.contains("noise") || m.contains("gain") =>
            {
                "synthetic.label_skew"
            }
            _ => "scenario.name",
        };
        raw.err(key, e)
    })?;
    Ok(cfg)
}

/// Plain-text `key = value` echo of a resolved scenario.
pub fn echo_scenario(cfg: &ScenarioConfig) -> String {
    use crate::model::ModelKind;
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut lines = vec![
        format!("scenario.name = {}", cfg.name),
        format!("seed = {}", cfg.seed),
        format!("scenario.n_nodes = {}", cfg.n_nodes),
        format!("scenario.samples_per_node = {}", cfg.samples_per_node),
        format!(
            "scenario.missing_classes = {}",
            cfg.missing_classes
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
        format!("scenario.local_epochs = {}", cfg.local_epochs),
        format!("scenario.rounds = {}", cfg.rounds),
        format!("scenario.lr = {}", cfg.lr),
        format!("scenario.batch_size = {}", cfg.batch_size),
        format!("scenario.test_fraction = {}", cfg.test_fraction),
    ];
    match &cfg.model.kind {
        ModelKind::SoftmaxRegression => lines.push("model.kind = softmax".into()),
        ModelKind::Mlp { hidden } => {
            lines.push("model.kind = mlp".into());
            lines.push(format!("model.hidden = {hidden}"));
        }
        ModelKind::Quadratic { diag } => {
            lines.push(format!("model.kind = quadratic({})", join(diag)))
        }
    }
    lines.push(format!("model.l2 = {}", cfg.model.l2));
    lines.push(format!("probe.n_probes = {}", cfg.probe.n_probes));
    match cfg.probe.perturb_sigma {
        None => lines.push("probe.sampler = init".into()),
        Some(s) => {
            lines.push("probe.sampler = perturb".into());
            lines.push(format!("probe.sigma = {s}"));
        }
    }
    lines.push(format!(
        "probe.g_mode = {}",
        match cfg.probe.g_mode {
            GMode::GradientNorm => "gradient-norm",
            GMode::LossMagnitude => "loss-magnitude",
        }
    ));
    lines.push(format!(
        "bound.squared_distance = {}",
        cfg.bound.squared_distance
    ));
    if let Some(d) = cfg.bound.dist_override {
        lines.push(format!("bound.distance = {d}"));
    }
    let h = &cfg.heterogeneity;
    lines.push(format!("synthetic.label_skew = {}", join(&h.label_skew)));
    lines.push(format!(
        "synthetic.noise_multiplier = {}",
        join(&h.noise_multiplier)
    ));
    lines.push(format!(
        "synthetic.feature_gain = {}",
        join(&h.feature_gain)
    ));
    if let Some(p) = &cfg.participants {
        lines.push(format!(
            "participants = {}",
            p.iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    lines.join("\n") + "\n"
}
