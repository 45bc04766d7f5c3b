//! Runs every scenario of an experiment over its repeat seeds.

use rayon::prelude::*;

use crate::analysis::{self, CdfSeries, CorrelationReport, SelectionPolicy, UsefulnessRecord};
use crate::config::{DatasetSource, ExperimentConfig, SelectionConfig};
use crate::data;
use crate::error::{Error, Result};
use crate::flsim::{self, FLRun, ScenarioConfig};
use crate::model::Dataset;
use crate::probe::{ConstantsEstimate, ProbeSample};
use crate::seed;

/// Derived statistics of one run.
#[derive(Debug, Clone)]
pub struct RunAnalysis {
    pub usefulness: Vec<UsefulnessRecord>,
    /// `None` when fewer than three nodes participate or a series is constant.
    pub correlations: Option<Vec<CorrelationReport>>,
    pub cdf_probe: CdfSeries,
    pub cdf_training: CdfSeries,
}

pub fn analyze(run: &FLRun) -> Result<RunAnalysis> {
    let usefulness = analysis::node_usefulness(run)?;
    let correlations = match analysis::correlate_constants(&run.node_constants, &usefulness) {
        Ok(c) => Some(c),
        Err(Error::InsufficientData(_) | Error::ZeroVariance(_)) => None,
        Err(e) => return Err(e),
    };
    let probe_g: Vec<f64> = run
        .probe_samples
        .iter()
        .flat_map(|(_, s)| s.iter().map(|p| p.g_value))
        .collect();
    let training_g: Vec<f64> = run
        .rounds
        .iter()
        .flat_map(|r| r.training_g.iter().flat_map(|(_, g)| g.iter().copied()))
        .collect();
    Ok(RunAnalysis {
        usefulness,
        correlations,
        cdf_probe: analysis::empirical_cdf(&probe_g)?,
        cdf_training: analysis::empirical_cdf(&training_g)?,
    })
}

/// A run restricted to the nodes picked by one selection policy.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub policy: SelectionPolicy,
    pub k: usize,
    pub chosen: Vec<usize>,
    pub run: FLRun,
    pub analysis: RunAnalysis,
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub scenario: String,
    pub seed: u64,
    pub run: FLRun,
    pub analysis: RunAnalysis,
    pub selections: Vec<SelectionOutcome>,
}

/// Dataset for one seed plus the normalized within-class sigma (0 for CIFAR).
pub fn load_dataset(source: &DatasetSource, run_seed: u64) -> Result<(Dataset, f64)> {
    match source {
        DatasetSource::Synthetic(spec) => {
            let s = data::gen_synthetic_scaled(spec, seed::derive(run_seed, &[seed::tag::DATA]))?;
            Ok((s.dataset, s.feature_sigma))
        }
        DatasetSource::Cifar10 { path, options } => Ok((data::load_cifar10(path, *options)?, 0.0)),
    }
}

/// `scenario` bound to a seed and to the dataset's noise scale.
pub fn instantiate(scenario: &ScenarioConfig, run_seed: u64, base_sigma: f64) -> ScenarioConfig {
    let mut cfg = scenario.clone();
    cfg.seed = run_seed;
    cfg.heterogeneity.base_sigma = base_sigma;
    cfg
}

pub fn run_one(
    scenario: &ScenarioConfig,
    dataset: &Dataset,
    selection: Option<&SelectionConfig>,
) -> Result<SeedResult> {
    let run = flsim::run_federated(scenario, dataset)?;
    let analysis = analyze(&run)?;
    let mut selections = Vec::new();
    if let Some(sel) = selection {
        for &policy in &sel.policies {
            let chosen = analysis::select_nodes(&run.node_constants, sel.k, policy)?;
            let mut cfg = scenario.clone();
            cfg.participants = Some(chosen.clone());
            let sub = flsim::run_federated(&cfg, dataset)?;
            let sub_analysis = analyze(&sub)?;
            selections.push(SelectionOutcome {
                policy,
                k: sel.k,
                chosen,
                run: sub,
                analysis: sub_analysis,
            });
        }
    }
    Ok(SeedResult {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        run,
        analysis,
        selections,
    })
}

/// All scenarios times all seeds, in config order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedResult>> {
    let cifar = match &cfg.dataset {
        DatasetSource::Cifar10 { .. } => Some(load_dataset(&cfg.dataset, 0)?),
        DatasetSource::Synthetic(_) => None,
    };
    let jobs: Vec<(&ScenarioConfig, u64)> = cfg
        .scenarios
        .iter()
        .flat_map(|s| cfg.repeat_seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    jobs.par_iter()
        .map(|&(scenario, run_seed)| {
            let owned;
            let (dataset, sigma) = match &cifar {
                Some((d, s)) => (d, *s),
                None => {
                    owned = load_dataset(&cfg.dataset, run_seed)?;
                    (&owned.0, owned.1)
                }
            };
            run_one(
                &instantiate(scenario, run_seed, sigma),
                dataset,
                cfg.selection.as_ref(),
            )
        })
        .collect()
}

/// Probe phase only: per-node estimates, raw samples and the global estimate.
#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub scenario: String,
    pub seed: u64,
    pub node_constants: Vec<(usize, ConstantsEstimate)>,
    pub samples: Vec<(usize, Vec<ProbeSample>)>,
    pub global: ConstantsEstimate,
}

pub fn probe_experiment(cfg: &ExperimentConfig) -> Result<Vec<ProbeReport>> {
    let mut out = Vec::new();
    for scenario in &cfg.scenarios {
        for &run_seed in &cfg.repeat_seeds {
            let (dataset, sigma) = load_dataset(&cfg.dataset, run_seed)?;
            let sc = instantiate(scenario, run_seed, sigma);
            let (_, nodes, samples) = flsim::setup_nodes(&sc, &dataset)?;
            let node_constants: Vec<(usize, ConstantsEstimate)> = nodes
                .iter()
                .map(|n| (n.id, n.constants.expect("probed")))
                .collect();
            let participating: Vec<ConstantsEstimate> = sc
                .participant_ids()
                .iter()
                .map(|&i| node_constants[i].1)
                .collect();
            out.push(ProbeReport {
                scenario: sc.name.clone(),
                seed: run_seed,
                global: crate::probe::aggregate_global(&participating)?,
                samples: nodes.iter().map(|n| n.id).zip(samples).collect(),
                node_constants,
            });
        }
    }
    Ok(out)
}
