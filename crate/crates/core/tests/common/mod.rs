#![allow(dead_code)]

use fedbound::data::SyntheticSpec;
use fedbound::model::{Dataset, LabeledSample, ModelKind, ModelSpec};
use rand::Rng;

/// Straightforward re-derivation of the regularized cross-entropy, written
/// without sharing code with the library.
pub fn reference_loss(spec: &ModelSpec, w: &[f64], data: &Dataset) -> f64 {
    let (d, k) = (spec.feature_dim, spec.num_classes);
    let mut total = 0.0;
    for s in data.samples() {
        let logits: Vec<f64> = match &spec.kind {
            ModelKind::SoftmaxRegression => (0..k)
                .map(|c| w[k * d + c] + (0..d).map(|j| w[c * d + j] * s.features[j]).sum::<f64>())
                .collect(),
            ModelKind::Mlp { hidden } => {
                let h = *hidden;
                let b1 = h * d;
                let w2 = b1 + h;
                let b2 = w2 + k * h;
                let a: Vec<f64> = (0..h)
                    .map(|i| {
                        (w[b1 + i] + (0..d).map(|j| w[i * d + j] * s.features[j]).sum::<f64>())
                            .tanh()
                    })
                    .collect();
                (0..k)
                    .map(|c| w[b2 + c] + (0..h).map(|i| w[w2 + c * h + i] * a[i]).sum::<f64>())
                    .collect()
            }
            ModelKind::Quadratic { .. } => unreachable!(),
        };
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let p = (logits[s.label] - max).exp() / z;
        total -= p.max(1e-12).ln();
    }
    total / data.len() as f64 + 0.5 * spec.l2 * w.iter().map(|x| x * x).sum::<f64>()
}

pub fn random_dataset(rng: &mut impl Rng, n: usize, k: usize, d: usize) -> Dataset {
    let samples = (0..n)
        .map(|_| LabeledSample {
            features: (0..d).map(|_| rng.random_range(0.0..1.0)).collect(),
            label: rng.random_range(0..k),
        })
        .collect();
    Dataset::new(samples, k, d).unwrap()
}

pub fn synthetic(k: usize, d: usize, per_class: usize) -> SyntheticSpec {
    SyntheticSpec {
        num_classes: k,
        feature_dim: d,
        samples_per_class: per_class,
        separation: 4.0,
        sigma: 1.0,
        ..Default::default()
    }
}
