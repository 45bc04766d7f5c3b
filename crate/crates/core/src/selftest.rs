//! Built-in sanity suites: quadratic probe oracle, finite-difference gradient
//! checks and bound arithmetic.

use rand::Rng;

use crate::bound::{self, BoundParams};
use crate::error::Result;
use crate::model::{self, Dataset, LabeledSample, ModelSpec, ParamVector};
use crate::probe::{self, GMode, ProbeSampler};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        detail,
    }
}

fn quadratic_oracle(diag: &[f64], n_probes: usize) -> Result<(bool, String)> {
    let spec = ModelSpec::quadratic(diag.to_vec());
    let data = Dataset::empty(1, 1)?;
    let (est, samples) = probe::estimate_constants_with(
        &spec,
        &data,
        n_probes,
        &ProbeSampler::InitDistribution,
        GMode::GradientNorm,
        7,
    )?;
    let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ok = samples
        .iter()
        .all(|s| s.m_value >= lo - 1e-9 && s.m_value <= hi + 1e-9);
    Ok((
        ok,
        format!(
            "mu={:.12} L={:.12} over {} probes",
            est.mu, est.l_smooth, est.n_probes
        ),
    ))
}

fn random_dataset(rng: &mut impl Rng, n: usize, k: usize, d: usize) -> Result<Dataset> {
    let samples = (0..n)
        .map(|_| LabeledSample {
            features: (0..d).map(|_| rng.random_range(0.0..1.0)).collect(),
            label: rng.random_range(0..k),
        })
        .collect();
    Dataset::new(samples, k, d)
}

/// Worst relative max-norm error of the analytic gradient against central
/// differences over `configs` random models.
pub fn finite_difference_error(configs: usize, base_seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for c in 0..configs {
        let mut rng = seed::rng(seed::derive(base_seed, &[c as u64]));
        let (d, k) = (rng.random_range(1..6), rng.random_range(2..5));
        let l2 = rng.random_range(0.0..0.1);
        let spec = if c % 2 == 0 {
            ModelSpec::softmax(d, k, l2)
        } else {
            ModelSpec::mlp(d, rng.random_range(1..5), k, l2)
        };
        let data = random_dataset(&mut rng, 6, k, d)?;
        let w = model::init_params(&spec, rng.random());
        let g = model::gradient(&spec, &w, &data)?;
        let h = 1e-5;
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..w.dim() {
            let mut plus = w.clone().into_inner();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (model::loss(&spec, &ParamVector::new(plus)?, &data)?
                - model::loss(&spec, &ParamVector::new(minus)?, &data)?)
                / (2.0 * h);
            err = err.max((fd - g.as_slice()[i]).abs());
            scale = scale.max(fd.abs()).max(g.as_slice()[i].abs());
        }
        worst = worst.max(err / scale.max(1e-12));
    }
    Ok(worst)
}

pub fn run_all() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let (ok, detail) = quadratic_oracle(&[1.0, 4.0], 1000)?;
    out.push(check("quadratic diag(1,4): m in [1,4]", ok, detail));
    let spec = ModelSpec::quadratic(vec![1.0, 1.0]);
    let est = probe::estimate_constants(
        &spec,
        &Dataset::empty(1, 1)?,
        1000,
        &ProbeSampler::InitDistribution,
        11,
    )?;
    out.push(check(
        "quadratic identity: mu = L = 1",
        (est.mu - 1.0).abs() <= 1e-9 && (est.l_smooth - 1.0).abs() <= 1e-9,
        format!("mu={:.12} L={:.12}", est.mu, est.l_smooth),
    ));
    let fd = finite_difference_error(100, 3)?;
    out.push(check(
        "finite-difference gradients",
        fd <= 1e-5,
        format!("worst relative error {fd:.3e}"),
    ));
    let p = BoundParams::new(1.0, 2.0, 1.0, 1.0)?;
    let (b1, b17) = (
        bound::convergence_bound(1, &p)?,
        bound::convergence_bound(17, &p)?,
    );
    out.push(check(
        "bound arithmetic",
        b1 == 24.0 && b17 == 12.0,
        format!("B(1)={b1} B(17)={b17}"),
    ));
    Ok(out)
}
