//! Monte-Carlo estimation of the strong-convexity (`mu`), smoothness (`L`)
//! and gradient-bound (`G`) constants of a loss landscape.
//!
//! Each probe draws a random pair `(u, v)` and records
//!
//! ```text
//! m = 2 (F(u) - F(v) + (v - u)^T grad F(v)) / ||u - v||^2
//! g = ||grad F(v)||
//! ```
//!
//! `mu` is the smallest `m` seen, `L` the largest, and `G` the largest `g`.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{self, Dataset, ModelSpec, ParamVector};
use crate::seed;

/// Pairs closer than this (squared) are rejected as degenerate.
pub const DEGENERATE_DIST_SQ: f64 = 1e-30;

const MAX_REDRAWS: u64 = 64;

/// Distribution the random parameter pairs are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeSampler {
    /// Same distribution as [`model::init_params`].
    InitDistribution,
    /// Isotropic Gaussian perturbation of `center`.
    GaussianAround { center: ParamVector, sigma: f64 },
}

/// What the per-probe `g` value measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GMode {
    /// `||grad F(v)||_2`.
    #[default]
    GradientNorm,
    /// `sqrt(|F(v)|^2) = |F(v)|`, the literal reading of the probe formula.
    LossMagnitude,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSample {
    pub m_value: f64,
    pub g_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsEstimate {
    pub mu: f64,
    pub l_smooth: f64,
    pub g_max: f64,
    pub n_probes: usize,
}

impl ConstantsEstimate {
    /// Min/max reduction over a nonempty probe set.
    pub fn from_samples(samples: &[ProbeSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("probe samples"));
        }
        let init = ConstantsEstimate {
            mu: f64::INFINITY,
            l_smooth: f64::NEG_INFINITY,
            g_max: 0.0,
            n_probes: 0,
        };
        Ok(samples.iter().fold(init, |acc, s| ConstantsEstimate {
            mu: acc.mu.min(s.m_value),
            l_smooth: acc.l_smooth.max(s.m_value),
            g_max: acc.g_max.max(s.g_value),
            n_probes: acc.n_probes + 1,
        }))
    }
}

fn draw(spec: &ModelSpec, sampler: &ProbeSampler, seed: u64) -> Result<ParamVector> {
    match sampler {
        ProbeSampler::InitDistribution => Ok(model::init_params(spec, seed)),
        ProbeSampler::GaussianAround { center, sigma } => {
            let normal = Normal::new(0.0, *sigma)
                .map_err(|e| Error::InvalidArgument(format!("probe sigma: {e}")))?;
            let mut rng = seed::rng(seed);
            let values = center
                .as_slice()
                .iter()
                .map(|c| c + normal.sample(&mut rng))
                .collect();
            ParamVector::new(values)
        }
    }
}

fn check_sampler(spec: &ModelSpec, sampler: &ProbeSampler) -> Result<()> {
    if let ProbeSampler::GaussianAround { center, sigma } = sampler {
        if !(*sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "probe sigma must be positive and finite, got {sigma}"
            )));
        }
        let expected = model::param_dim(spec);
        if center.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: center.dim(),
            });
        }
    }
    Ok(())
}

/// Draws two distinct random parameter vectors, redrawing `v` on collision.
pub fn draw_probe_pair(
    spec: &ModelSpec,
    sampler: &ProbeSampler,
    rng_seed: u64,
) -> Result<(ParamVector, ParamVector)> {
    check_sampler(spec, sampler)?;
    let u = draw(
        spec,
        sampler,
        seed::derive(rng_seed, &[seed::tag::PROBE, 0]),
    )?;
    for attempt in 0..MAX_REDRAWS {
        let v = draw(
            spec,
            sampler,
            seed::derive(rng_seed, &[seed::tag::PROBE, 1, attempt]),
        )?;
        if u.sub(&v)?.norm_sq() >= DEGENERATE_DIST_SQ {
            return Ok((u, v));
        }
    }
    Err(Error::DegeneratePair(0.0))
}

/// The curvature sample `m` of a probe pair.
pub fn compute_m(
    spec: &ModelSpec,
    u: &ParamVector,
    v: &ParamVector,
    data: &Dataset,
) -> Result<f64> {
    let diff = u.sub(v)?;
    let dist_sq = diff.norm_sq();
    if dist_sq < DEGENERATE_DIST_SQ {
        return Err(Error::DegeneratePair(dist_sq));
    }
    Ok(2.0 * model::bregman_divergence(spec, u, v, data)? / dist_sq)
}

/// The gradient-bound sample `g` at `v`.
pub fn compute_g(spec: &ModelSpec, v: &ParamVector, data: &Dataset) -> Result<f64> {
    compute_g_with(spec, v, data, GMode::GradientNorm)
}

pub fn compute_g_with(
    spec: &ModelSpec,
    v: &ParamVector,
    data: &Dataset,
    mode: GMode,
) -> Result<f64> {
    match mode {
        GMode::GradientNorm => Ok(model::gradient(spec, v, data)?.norm()),
        GMode::LossMagnitude => Ok(model::loss(spec, v, data)?.abs()),
    }
}

/// Runs one probe (steps 1-5) with its own seed.
pub fn probe_once(
    spec: &ModelSpec,
    data: &Dataset,
    sampler: &ProbeSampler,
    g_mode: GMode,
    rng_seed: u64,
) -> Result<ProbeSample> {
    let (u, v) = draw_probe_pair(spec, sampler, rng_seed)?;
    let m_value = compute_m(spec, &u, &v, data)?;
    let g_value = compute_g_with(spec, &v, data, g_mode)?;
    if !m_value.is_finite() || !g_value.is_finite() {
        return Err(Error::NonFinite("probe sample"));
    }
    Ok(ProbeSample { m_value, g_value })
}

/// Seed of probe `index` under `base_seed`. Prefixes of a longer run reuse
/// the same probes.
pub fn probe_seed(base_seed: u64, index: usize) -> u64 {
    seed::derive(base_seed, &[seed::tag::PROBE, index as u64])
}

/// Runs `n_probes` probes in parallel and returns them in index order.
pub fn run_probes(
    spec: &ModelSpec,
    data: &Dataset,
    n_probes: usize,
    sampler: &ProbeSampler,
    g_mode: GMode,
    rng_seed: u64,
) -> Result<Vec<ProbeSample>> {
    check_sampler(spec, sampler)?;
    let results: Vec<Result<ProbeSample>> = (0..n_probes)
        .into_par_iter()
        .map(|i| probe_once(spec, data, sampler, g_mode, probe_seed(rng_seed, i)))
        .collect();
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::ProbeFailure {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Estimates `(mu, L, G)` from `n_probes >= 2` random probes.
pub fn estimate_constants(
    spec: &ModelSpec,
    data: &Dataset,
    n_probes: usize,
    sampler: &ProbeSampler,
    rng_seed: u64,
) -> Result<ConstantsEstimate> {
    estimate_constants_with(spec, data, n_probes, sampler, GMode::default(), rng_seed)
        .map(|(c, _)| c)
}

/// Like [`estimate_constants`], also returning the raw probe samples.
pub fn estimate_constants_with(
    spec: &ModelSpec,
    data: &Dataset,
    n_probes: usize,
    sampler: &ProbeSampler,
    g_mode: GMode,
    rng_seed: u64,
) -> Result<(ConstantsEstimate, Vec<ProbeSample>)> {
    if n_probes < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_probes must be >= 2, got {n_probes}"
        )));
    }
    let samples = run_probes(spec, data, n_probes, sampler, g_mode, rng_seed)?;
    Ok((ConstantsEstimate::from_samples(&samples)?, samples))
}

/// Worst case over nodes: smallest `mu`, largest `L` and `G`.
pub fn aggregate_global(per_node: &[ConstantsEstimate]) -> Result<ConstantsEstimate> {
    let (first, rest) = per_node
        .split_first()
        .ok_or(Error::EmptyInput("per-node constants"))?;
    Ok(rest.iter().fold(*first, |acc, c| ConstantsEstimate {
        mu: acc.mu.min(c.mu),
        l_smooth: acc.l_smooth.max(c.l_smooth),
        g_max: acc.g_max.max(c.g_max),
        n_probes: acc.n_probes + c.n_probes,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LabeledSample;

    fn no_data(d: usize) -> Dataset {
        Dataset::empty(1, d).unwrap()
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn est(mu: f64, l: f64, g: f64) -> ConstantsEstimate {
        ConstantsEstimate {
            mu,
            l_smooth: l,
            g_max: g,
            n_probes: 10,
        }
    }

    #[test]
    fn pair_is_deterministic_and_distinct() {
        let spec = ModelSpec::softmax(3, 2, 0.0);
        let a = draw_probe_pair(&spec, &ProbeSampler::InitDistribution, 5).unwrap();
        let b = draw_probe_pair(&spec, &ProbeSampler::InitDistribution, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.0.sub(&a.1).unwrap().norm() > 0.0);
    }

    #[test]
    fn zero_sigma_is_rejected() {
        let spec = ModelSpec::quadratic(vec![1.0, 1.0]);
        let sampler = ProbeSampler::GaussianAround {
            center: pv(&[1.0, 1.0]),
            sigma: 0.0,
        };
        assert!(matches!(
            draw_probe_pair(&spec, &sampler, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn gaussian_sampler_stays_near_center() {
        let spec = ModelSpec::quadratic(vec![1.0; 4]);
        let center = pv(&[10.0, -10.0, 5.0, 0.0]);
        let sampler = ProbeSampler::GaussianAround {
            center: center.clone(),
            sigma: 1e-3,
        };
        let (u, v) = draw_probe_pair(&spec, &sampler, 1).unwrap();
        assert!(u.distance(&center).unwrap() < 0.1);
        assert!(v.distance(&center).unwrap() < 0.1);
    }

    #[test]
    fn m_is_one_on_identity_quadratic() {
        let spec = ModelSpec::quadratic(vec![1.0; 3]);
        let u = pv(&[0.3, -1.0, 2.0]);
        let v = pv(&[4.0, 0.5, -0.25]);
        assert!((compute_m(&spec, &u, &v, &no_data(3)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn m_on_diag_quadratic_worked_example() {
        let spec = ModelSpec::quadratic(vec![1.0, 3.0]);
        let v = pv(&[1.0, 1.0]);
        let u = v.scaled(2.0);
        assert!((compute_m(&spec, &u, &v, &no_data(2)).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn m_rejects_degenerate_pair() {
        let spec = ModelSpec::quadratic(vec![1.0, 3.0]);
        let v = pv(&[1.0, 1.0]);
        assert!(matches!(
            compute_m(&spec, &v, &v, &no_data(2)),
            Err(Error::DegeneratePair(_))
        ));
    }

    #[test]
    fn g_is_gradient_norm() {
        let spec = ModelSpec::quadratic(vec![1.0, 1.0]);
        assert_eq!(
            compute_g(&spec, &pv(&[3.0, 4.0]), &no_data(2)).unwrap(),
            5.0
        );
        let literal = compute_g_with(&spec, &pv(&[3.0, 4.0]), &no_data(2), GMode::LossMagnitude);
        assert_eq!(literal.unwrap(), 12.5);
    }

    #[test]
    fn g_is_invariant_to_sample_order() {
        let spec = ModelSpec::softmax(2, 2, 0.0);
        let samples = vec![
            LabeledSample {
                features: vec![0.1, 0.7],
                label: 0,
            },
            LabeledSample {
                features: vec![0.9, 0.2],
                label: 1,
            },
            LabeledSample {
                features: vec![0.4, 0.4],
                label: 1,
            },
        ];
        let mut reversed = samples.clone();
        reversed.reverse();
        let a = Dataset::new(samples, 2, 2).unwrap();
        let b = Dataset::new(reversed, 2, 2).unwrap();
        let v = model::init_params(&spec, 3);
        let (ga, gb) = (
            compute_g(&spec, &v, &a).unwrap(),
            compute_g(&spec, &v, &b).unwrap(),
        );
        assert!((ga - gb).abs() <= 1e-15 * ga.max(1.0));
    }

    #[test]
    fn identity_quadratic_constants() {
        let spec = ModelSpec::quadratic(vec![1.0; 3]);
        let (c, samples) = estimate_constants_with(
            &spec,
            &no_data(3),
            50,
            &ProbeSampler::InitDistribution,
            GMode::GradientNorm,
            9,
        )
        .unwrap();
        assert!((c.mu - 1.0).abs() < 1e-9 && (c.l_smooth - 1.0).abs() < 1e-9);
        // G is the largest ||v|| over the probes
        let expected_g = (0..50)
            .map(|i| {
                draw_probe_pair(&spec, &ProbeSampler::InitDistribution, probe_seed(9, i))
                    .unwrap()
                    .1
                    .norm()
            })
            .fold(0.0, f64::max);
        assert_eq!(c.g_max, expected_g);
        assert_eq!(samples.len(), 50);
        assert_eq!(c.n_probes, 50);
    }

    #[test]
    fn single_probe_is_rejected() {
        let spec = ModelSpec::quadratic(vec![1.0]);
        let r = estimate_constants(&spec, &no_data(1), 1, &ProbeSampler::InitDistribution, 0);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn probe_failure_carries_index() {
        let spec = ModelSpec::softmax(2, 2, 0.0);
        let empty = Dataset::empty(2, 2).unwrap();
        let r = estimate_constants(&spec, &empty, 4, &ProbeSampler::InitDistribution, 0);
        assert!(matches!(r, Err(Error::ProbeFailure { index: 0, .. })));
    }

    #[test]
    fn aggregate_examples() {
        let nodes = [est(1.0, 2.0, 1.0), est(0.5, 3.0, 5.0), est(0.7, 1.0, 2.0)];
        assert_eq!(aggregate_global(&nodes).unwrap().g_max, 5.0);
        assert_eq!(aggregate_global(&nodes[..1]).unwrap(), nodes[0]);
        let g = aggregate_global(&[est(0.5, 2.0, 1.0), est(1.0, 1.5, 1.0)]).unwrap();
        assert_eq!((g.mu, g.l_smooth), (0.5, 2.0));
        assert_eq!(g.n_probes, 20);
        assert!(matches!(aggregate_global(&[]), Err(Error::EmptyInput(_))));
    }
}
