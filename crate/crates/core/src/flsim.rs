//! FedAvg simulation: scenario partitioning, local training, averaging and
//! per-round bookkeeping.
//!
//! A run first probes every node's local loss landscape at the initial
//! global model, then executes `rounds` cycles of broadcast, local SGD on
//! every participating node, and coordinate-wise averaging. Bound values are
//! filled in after the last round, once the optimum proxy is known.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::bound::{self, BoundParams};
use crate::error::{Error, Result};
use crate::model::{self, Dataset, LabeledSample, ModelSpec, ParamVector};
use crate::probe::{self, ConstantsEstimate, GMode, ProbeSample, ProbeSampler};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub n_probes: usize,
    /// `None` samples from the initialization distribution, `Some(sigma)`
    /// perturbs the initial global model.
    pub perturb_sigma: Option<f64>,
    pub g_mode: GMode,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            n_probes: 100,
            perturb_sigma: None,
            g_mode: GMode::GradientNorm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundConfig {
    /// Use `||w1 - w*||^2` instead of the unsquared distance.
    pub squared_distance: bool,
    /// Fixed distance in place of the post-hoc optimum proxy.
    pub dist_override: Option<f64>,
}

/// Per-node data heterogeneity. Empty vectors mean "homogeneous".
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Heterogeneity {
    /// Fraction of node `i`'s samples drawn from a single dominant class.
    pub label_skew: Vec<f64>,
    /// Node `i`'s features carry `noise_multiplier[i]` times the base noise.
    pub noise_multiplier: Vec<f64>,
    /// Node `i`'s features are multiplied by `feature_gain[i]` (contrast).
    pub feature_gain: Vec<f64>,
    /// Within-class feature noise of the source data, in feature units.
    pub base_sigma: f64,
}

impl Heterogeneity {
    fn skew(&self, node: usize) -> f64 {
        self.label_skew.get(node).copied().unwrap_or(0.0)
    }

    fn noise(&self, node: usize) -> f64 {
        self.noise_multiplier.get(node).copied().unwrap_or(1.0)
    }

    fn gain(&self, node: usize) -> f64 {
        self.feature_gain.get(node).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_nodes: usize,
    pub samples_per_node: usize,
    pub missing_classes: BTreeSet<usize>,
    pub local_epochs: usize,
    pub rounds: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub model: ModelSpec,
    pub probe: ProbeConfig,
    pub bound: BoundConfig,
    pub test_fraction: f64,
    pub heterogeneity: Heterogeneity,
    /// Nodes that train and aggregate; `None` means all of them.
    pub participants: Option<Vec<usize>>,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Defaults for a 5-node scenario over the given model.
    pub fn new(model: ModelSpec) -> Self {
        Self {
            name: "5-nodes".into(),
            n_nodes: 5,
            samples_per_node: 2000,
            missing_classes: BTreeSet::new(),
            local_epochs: 1,
            rounds: 20,
            lr: 0.05,
            batch_size: 32,
            model,
            probe: ProbeConfig::default(),
            bound: BoundConfig::default(),
            test_fraction: 0.1,
            heterogeneity: Heterogeneity::default(),
            participants: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.model.validate()?;
        let k = self.model.num_classes;
        if self.n_nodes == 0 || self.samples_per_node == 0 {
            return bad("n_nodes and samples_per_node must be >= 1".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if self.local_epochs == 0 {
            return bad("local_epochs must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be finite and >= 0", self.lr));
        }
        if self.batch_size == 0 || self.batch_size > self.samples_per_node {
            return bad(format!(
                "batch_size {} must be in 1..={}",
                self.batch_size, self.samples_per_node
            ));
        }
        if let Some(&c) = self.missing_classes.iter().find(|&&c| c >= k) {
            return bad(format!("missing class {c} out of range for {k} classes"));
        }
        if self.missing_classes.len() >= k {
            return bad("at least one class must remain in the training data".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!(
                "test_fraction {} must be in (0, 1)",
                self.test_fraction
            ));
        }
        if self.probe.n_probes < 2 {
            return bad("probe.n_probes must be >= 2".into());
        }
        if let Some(s) = self.probe.perturb_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("probe sigma {s} must be positive"));
            }
        }
        if let Some(d) = self.bound.dist_override {
            if !(d >= 0.0 && d.is_finite()) {
                return bad(format!("bound distance override {d} must be >= 0"));
            }
        }
        let h = &self.heterogeneity;
        for (name, len) in [
            ("label_skew", h.label_skew.len()),
            ("noise_multiplier", h.noise_multiplier.len()),
            ("feature_gain", h.feature_gain.len()),
        ] {
            if len != 0 && len != self.n_nodes {
                return bad(format!(
                    "{name} has {len} entries, expected {}",
                    self.n_nodes
                ));
            }
        }
        if h.label_skew.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return bad("label_skew entries must be in [0, 1]".into());
        }
        if h.noise_multiplier
            .iter()
            .any(|m| !(*m >= 1.0 && m.is_finite()))
        {
            return bad("noise_multiplier entries must be >= 1".into());
        }
        if h.feature_gain.iter().any(|g| !(*g > 0.0 && *g <= 1.0)) {
            return bad("feature_gain entries must be in (0, 1]".into());
        }
        if !(h.base_sigma >= 0.0 && h.base_sigma.is_finite()) {
            return bad("base_sigma must be >= 0".into());
        }
        if let Some(p) = &self.participants {
            let unique: BTreeSet<_> = p.iter().collect();
            if p.is_empty() || unique.len() != p.len() || p.iter().any(|&i| i >= self.n_nodes) {
                return bad(format!(
                    "participants {p:?} must be distinct node ids < {}",
                    self.n_nodes
                ));
            }
        }
        Ok(())
    }

    /// Participating node ids in ascending order.
    pub fn participant_ids(&self) -> Vec<usize> {
        match &self.participants {
            Some(p) => {
                let mut ids = p.clone();
                ids.sort_unstable();
                ids
            }
            None => (0..self.n_nodes).collect(),
        }
    }

    /// Human-readable reasons the bound's assumptions do not hold here.
    pub fn bound_warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.local_epochs != 1 {
            w.push(format!(
                "bound assumes one local epoch per round; configured {}",
                self.local_epochs
            ));
        }
        if !matches!(self.model.kind, model::ModelKind::SoftmaxRegression) || self.model.l2 <= 0.0 {
            w.push(
                "bound assumes a strongly convex loss; model is not softmax regression with l2 > 0"
                    .into(),
            );
        }
        w
    }
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: usize,
    pub local_data: Dataset,
    pub params: ParamVector,
    pub constants: Option<ConstantsEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    /// Mean over participating nodes of the aggregated model's local loss.
    pub train_loss: f64,
    /// Aggregated model on the held-out test set.
    pub test_loss: f64,
    /// `None` when the global constants do not admit a bound (e.g. `mu <= 0`).
    pub bound_value: Option<f64>,
    pub usefulness: Vec<(usize, f64)>,
    pub training_g: Vec<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FLRun {
    pub config: ScenarioConfig,
    pub rounds: Vec<RoundRecord>,
    pub initial_params: ParamVector,
    pub final_params: ParamVector,
    pub node_constants: Vec<(usize, ConstantsEstimate)>,
    pub probe_samples: Vec<(usize, Vec<ProbeSample>)>,
    pub global_constants: ConstantsEstimate,
    /// Distance term fed to the bound.
    pub bound_distance: f64,
    /// Lowest train loss seen in the run, the proxy for `F*`.
    pub min_train_loss: f64,
    pub warnings: Vec<String>,
}

fn partition_error(what: &str, need: usize, have: usize) -> Error {
    Error::InsufficientData(format!(
        "{what}: need {need} samples, only {have} available"
    ))
}

/// Splits `global` into an unfiltered test set and disjoint per-node
/// training sets with missing classes removed.
pub fn partition_dataset(
    global: &Dataset,
    cfg: &ScenarioConfig,
    rng_seed: u64,
) -> Result<(Dataset, Vec<Dataset>)> {
    if global.num_classes() != cfg.model.num_classes {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes, scenario expects {}",
            global.num_classes(),
            cfg.model.num_classes
        )));
    }
    let mut rng = seed::rng(seed::derive(rng_seed, &[seed::tag::PARTITION]));
    let mut order: Vec<usize> = (0..global.len()).collect();
    order.shuffle(&mut rng);

    let n_test = ((global.len() as f64) * cfg.test_fraction).round() as usize;
    let (test_idx, train_idx) = order.split_at(n_test.min(order.len()));
    let pool: Vec<usize> = train_idx
        .iter()
        .copied()
        .filter(|&i| !cfg.missing_classes.contains(&global.samples()[i].label))
        .collect();
    let need = cfg.n_nodes * cfg.samples_per_node;
    if pool.len() < need {
        return Err(partition_error(
            "training partition after class filtering",
            need,
            pool.len(),
        ));
    }

    let kept: Vec<usize> = (0..global.num_classes())
        .filter(|c| !cfg.missing_classes.contains(c))
        .collect();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); global.num_classes()];
    for &i in &pool {
        by_class[global.samples()[i].label].push(i);
    }
    let mut class_cursor = vec![0usize; global.num_classes()];
    let mut used = vec![false; global.len()];
    let mut pool_cursor = 0usize;

    let mut nodes = Vec::with_capacity(cfg.n_nodes);
    for node in 0..cfg.n_nodes {
        let mut idx = Vec::with_capacity(cfg.samples_per_node);
        let n_dominant =
            (cfg.heterogeneity.skew(node) * cfg.samples_per_node as f64).round() as usize;
        if n_dominant > 0 {
            let class = kept[node % kept.len()];
            let list = &by_class[class];
            while idx.len() < n_dominant && class_cursor[class] < list.len() {
                let i = list[class_cursor[class]];
                class_cursor[class] += 1;
                if !used[i] {
                    used[i] = true;
                    idx.push(i);
                }
            }
            if idx.len() < n_dominant {
                return Err(partition_error(
                    &format!("dominant class {class} of node {node}"),
                    n_dominant,
                    idx.len(),
                ));
            }
        }
        while idx.len() < cfg.samples_per_node {
            let Some(&i) = pool.get(pool_cursor) else {
                return Err(partition_error("training partition", need, pool.len()));
            };
            pool_cursor += 1;
            if !used[i] {
                used[i] = true;
                idx.push(i);
            }
        }
        let mut data = global.subset(&idx);
        let mult = cfg.heterogeneity.noise(node);
        if mult > 1.0 && cfg.heterogeneity.base_sigma > 0.0 {
            let extra = cfg.heterogeneity.base_sigma * (mult * mult - 1.0).sqrt();
            data = add_feature_noise(
                &data,
                extra,
                seed::derive(rng_seed, &[seed::tag::NOISE, node as u64]),
            )?;
        }
        let gain = cfg.heterogeneity.gain(node);
        if gain != 1.0 {
            data = scale_features(&data, gain)?;
        }
        nodes.push(data);
    }
    Ok((global.subset(test_idx), nodes))
}

/// Adds i.i.d. `N(0, sigma^2)` to every feature, clamped back to `[0, 1]`.
/// Stacked on data with noise `s`, the result has noise `sqrt(s^2 + sigma^2)`
/// before clamping.
pub fn add_feature_noise(data: &Dataset, sigma: f64, rng_seed: u64) -> Result<Dataset> {
    let normal =
        Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
    let mut rng = seed::rng(rng_seed);
    let samples = data
        .samples()
        .iter()
        .map(|s| LabeledSample {
            features: s
                .features
                .iter()
                .map(|x| (x + normal.sample(&mut rng)).clamp(0.0, 1.0))
                .collect(),
            label: s.label,
        })
        .collect();
    Dataset::new(samples, data.num_classes(), data.feature_dim())
}

/// Multiplies every feature by `gain` in `(0, 1]`.
pub fn scale_features(data: &Dataset, gain: f64) -> Result<Dataset> {
    let samples = data
        .samples()
        .iter()
        .map(|s| LabeledSample {
            features: s.features.iter().map(|x| x * gain).collect(),
            label: s.label,
        })
        .collect();
    Dataset::new(samples, data.num_classes(), data.feature_dim())
}

/// Coordinate-wise mean of equally weighted models.
///
/// Each coordinate is summed in sorted order as offsets from its minimum, so
/// the result is bitwise independent of input order and returns identical
/// inputs exactly.
pub fn fedavg(models: &[ParamVector]) -> Result<ParamVector> {
    let first = models.first().ok_or(Error::EmptyInput("fedavg models"))?;
    let dim = first.dim();
    if let Some(m) = models.iter().find(|m| m.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: m.dim(),
        });
    }
    let n = models.len() as f64;
    let mut column = Vec::with_capacity(models.len());
    let mean = (0..dim)
        .map(|j| {
            column.clear();
            column.extend(models.iter().map(|m| m.as_slice()[j]));
            column.sort_by(f64::total_cmp);
            let base = column[0];
            base + column.iter().map(|v| v - base).sum::<f64>() / n
        })
        .collect();
    ParamVector::new(mean)
}

/// Seed of node `node`'s `epoch`-th local epoch in round `round`.
pub fn local_epoch_seed(base_seed: u64, round: usize, node: usize, epoch: usize) -> u64 {
    seed::derive(
        base_seed,
        &[seed::tag::SGD, round as u64, node as u64, epoch as u64],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub params: ParamVector,
    pub usefulness_delta: f64,
    pub g_trace: Vec<f64>,
}

/// Replaces the node model with `global_params` and trains it locally.
///
/// `global_test_loss` must be the test loss of `global_params`; usefulness is
/// the test-loss drop achieved by the local epochs.
pub fn local_round(
    node: &NodeState,
    global_params: &ParamVector,
    test: &Dataset,
    global_test_loss: f64,
    cfg: &ScenarioConfig,
    round: usize,
) -> Result<LocalOutcome> {
    let mut params = global_params.clone();
    let mut g_trace = Vec::new();
    for epoch in 0..cfg.local_epochs {
        let (next, trace) = model::sgd_epoch_traced(
            &cfg.model,
            &params,
            &node.local_data,
            cfg.lr,
            cfg.batch_size,
            local_epoch_seed(cfg.seed, round, node.id, epoch),
        )?;
        params = next;
        g_trace.extend(trace);
    }
    let after = model::loss(&cfg.model, &params, test)?;
    Ok(LocalOutcome {
        params,
        usefulness_delta: global_test_loss - after,
        g_trace,
    })
}

/// Initial global model of a run.
pub fn initial_params(cfg: &ScenarioConfig) -> ParamVector {
    model::init_params(&cfg.model, seed::derive(cfg.seed, &[seed::tag::INIT]))
}

fn probe_node(
    cfg: &ScenarioConfig,
    node: &NodeState,
    w1: &ParamVector,
) -> Result<(ConstantsEstimate, Vec<ProbeSample>)> {
    let sampler = match cfg.probe.perturb_sigma {
        None => ProbeSampler::InitDistribution,
        Some(sigma) => ProbeSampler::GaussianAround {
            center: w1.clone(),
            sigma,
        },
    };
    probe::estimate_constants_with(
        &cfg.model,
        &node.local_data,
        cfg.probe.n_probes,
        &sampler,
        cfg.probe.g_mode,
        seed::derive(cfg.seed, &[seed::tag::PROBE, node.id as u64]),
    )
}

/// Builds node states for a scenario, probes them, and returns the test set.
pub fn setup_nodes(
    cfg: &ScenarioConfig,
    data: &Dataset,
) -> Result<(Dataset, Vec<NodeState>, Vec<Vec<ProbeSample>>)> {
    cfg.validate()?;
    let (test, parts) = partition_dataset(data, cfg, cfg.seed)?;
    let w1 = initial_params(cfg);
    let mut nodes: Vec<NodeState> = parts
        .into_iter()
        .enumerate()
        .map(|(id, local_data)| NodeState {
            id,
            local_data,
            params: w1.clone(),
            constants: None,
        })
        .collect();
    let probed: Vec<_> = nodes
        .par_iter()
        .map(|n| probe_node(cfg, n, &w1))
        .collect::<Result<_>>()?;
    let mut samples = Vec::with_capacity(nodes.len());
    for (node, (c, s)) in nodes.iter_mut().zip(probed) {
        node.constants = Some(c);
        samples.push(s);
    }
    Ok((test, nodes, samples))
}

/// Full simulation: probe phase, `cfg.rounds` FedAvg rounds, bound curve.
pub fn run_federated(cfg: &ScenarioConfig, data: &Dataset) -> Result<FLRun> {
    let (test, mut nodes, probe_samples) = setup_nodes(cfg, data)?;
    let ids = cfg.participant_ids();
    let node_constants: Vec<(usize, ConstantsEstimate)> = nodes
        .iter()
        .map(|n| (n.id, n.constants.expect("probed")))
        .collect();
    let participating: Vec<ConstantsEstimate> = ids.iter().map(|&i| node_constants[i].1).collect();
    let global_constants = probe::aggregate_global(&participating)?;

    let w1 = initial_params(cfg);
    let mut global = w1.clone();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut best: Option<(f64, ParamVector)> = None;

    for t in 1..=cfg.rounds {
        let global_test_loss = model::loss(&cfg.model, &global, &test)?;
        let outcomes: Vec<LocalOutcome> = ids
            .par_iter()
            .map(|&i| local_round(&nodes[i], &global, &test, global_test_loss, cfg, t))
            .collect::<Result<_>>()?;
        let locals: Vec<ParamVector> = outcomes.iter().map(|o| o.params.clone()).collect();
        global = fedavg(&locals)?;
        for &i in &ids {
            nodes[i].params = global.clone();
        }

        let local_losses: Vec<f64> = ids
            .par_iter()
            .map(|&i| model::loss(&cfg.model, &global, &nodes[i].local_data))
            .collect::<Result<_>>()?;
        let train_loss = local_losses.iter().sum::<f64>() / local_losses.len() as f64;
        let test_loss = model::loss(&cfg.model, &global, &test)?;
        if best.as_ref().is_none_or(|(b, _)| train_loss < *b) {
            best = Some((train_loss, global.clone()));
        }
        rounds.push(RoundRecord {
            t,
            train_loss,
            test_loss,
            bound_value: None,
            usefulness: ids
                .iter()
                .zip(&outcomes)
                .map(|(&i, o)| (i, o.usefulness_delta))
                .collect(),
            training_g: ids
                .iter()
                .zip(outcomes)
                .map(|(&i, o)| (i, o.g_trace))
                .collect(),
        });
    }

    let (min_train_loss, wstar) = best.expect("rounds >= 1");
    let bound_distance = match cfg.bound.dist_override {
        Some(d) => d,
        None => {
            let d = bound::estimate_initial_distance(&w1, &wstar)?;
            if cfg.bound.squared_distance {
                d * d
            } else {
                d
            }
        }
    };

    let mut warnings = cfg.bound_warnings();
    match BoundParams::from_constants(&global_constants, bound_distance) {
        Ok(p) => {
            for r in &mut rounds {
                r.bound_value = Some(bound::convergence_bound(r.t as u64, &p)?);
            }
        }
        Err(e) => warnings.push(format!("bound not evaluated: {e}")),
    }

    Ok(FLRun {
        config: cfg.clone(),
        rounds,
        initial_params: w1,
        final_params: global,
        node_constants,
        probe_samples: nodes.iter().map(|n| n.id).zip(probe_samples).collect(),
        global_constants,
        bound_distance,
        min_train_loss,
        warnings,
    })
}
