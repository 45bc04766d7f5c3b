//! Differentiable classifiers, their regularized cross-entropy loss, exact
//! gradients and plain mini-batch SGD.
//!
//! Parameters are stored flat. Softmax regression lays out the `K x D` weight
//! matrix row-major followed by `K` biases. The one-hidden-layer MLP (tanh
//! activation) stores `W1 (H x D)`, `b1 (H)`, `W2 (K x H)`, `b2 (K)` in that
//! order.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed;

/// Probability floor applied before taking the log in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// Flat, finite, nonempty model parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "parameter vector must be nonempty".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "parameter dimension must be positive");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// `self - other`, coordinate-wise.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scaled(&self, factor: f64) -> ParamVector {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// A labeled classification dataset with fixed feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    num_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(
        samples: Vec<LabeledSample>,
        num_classes: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        if num_classes == 0 || feature_dim == 0 {
            return Err(Error::InvalidArgument(
                "num_classes and feature_dim must be positive".into(),
            ));
        }
        for s in &samples {
            check_dim(feature_dim, s.features.len())?;
            if s.label >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "label {} out of range for {} classes",
                    s.label, num_classes
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("sample features"));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            feature_dim,
        })
    }

    pub fn empty(num_classes: usize, feature_dim: usize) -> Result<Self> {
        Self::new(Vec::new(), num_classes, feature_dim)
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// New dataset holding clones of the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
        }
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    SoftmaxRegression,
    Mlp {
        hidden: usize,
    },
    /// `F(w) = 1/2 w^T diag(h) w`, independent of data. Test fixture with
    /// exactly known curvature.
    Quadratic {
        diag: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub l2: f64,
}

impl ModelSpec {
    pub fn softmax(feature_dim: usize, num_classes: usize, l2: f64) -> Self {
        Self {
            kind: ModelKind::SoftmaxRegression,
            feature_dim,
            num_classes,
            l2,
        }
    }

    pub fn mlp(feature_dim: usize, hidden: usize, num_classes: usize, l2: f64) -> Self {
        Self {
            kind: ModelKind::Mlp { hidden },
            feature_dim,
            num_classes,
            l2,
        }
    }

    pub fn quadratic(diag: Vec<f64>) -> Self {
        let d = diag.len();
        Self {
            kind: ModelKind::Quadratic { diag },
            feature_dim: d,
            num_classes: 1,
            l2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "l2 coefficient {} must be >= 0",
                self.l2
            )));
        }
        match &self.kind {
            ModelKind::Quadratic { diag } => {
                if diag.is_empty() || diag.iter().any(|h| !h.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "quadratic diagonal must be nonempty and finite".into(),
                    ));
                }
                return Ok(());
            }
            ModelKind::Mlp { hidden: 0 } => {
                return Err(Error::InvalidArgument(
                    "mlp hidden width must be positive".into(),
                ));
            }
            _ => {}
        }
        if self.feature_dim == 0 || self.num_classes < 2 {
            return Err(Error::InvalidArgument(
                "classifier needs feature_dim >= 1 and at least 2 classes".into(),
            ));
        }
        Ok(())
    }

    fn is_classifier(&self) -> bool {
        !matches!(self.kind, ModelKind::Quadratic { .. })
    }
}

/// Flat parameter count of the architecture.
pub fn param_dim(spec: &ModelSpec) -> usize {
    let (d, k) = (spec.feature_dim, spec.num_classes);
    match &spec.kind {
        ModelKind::SoftmaxRegression => k * d + k,
        ModelKind::Mlp { hidden } => hidden * d + hidden + k * hidden + k,
        ModelKind::Quadratic { diag } => diag.len(),
    }
}

/// Layer blocks as `(len, fan_in)`, in storage order.
fn layer_blocks(spec: &ModelSpec) -> Vec<(usize, usize)> {
    let (d, k) = (spec.feature_dim, spec.num_classes);
    match &spec.kind {
        ModelKind::SoftmaxRegression => vec![(k * d + k, d)],
        ModelKind::Mlp { hidden } => vec![(hidden * d + hidden, d), (k * hidden + k, *hidden)],
        ModelKind::Quadratic { diag } => vec![(diag.len(), 1)],
    }
}

/// Draws every entry i.i.d. from `N(0, 1/fan_in)` of its layer.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag::INIT]));
    let mut values = Vec::with_capacity(param_dim(spec));
    for (len, fan_in) in layer_blocks(spec) {
        let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive scale");
        values.extend((0..len).map(|_| normal.sample(&mut rng)));
    }
    ParamVector(values)
}

fn check_inputs(spec: &ModelSpec, params: &ParamVector, data: &Dataset) -> Result<()> {
    check_dim(param_dim(spec), params.dim())?;
    if spec.is_classifier() {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_dim(spec.feature_dim, data.feature_dim())?;
        if data.num_classes() != spec.num_classes {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} classes, model expects {}",
                data.num_classes(),
                spec.num_classes
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy plus `(l2/2) ||params||^2`.
pub fn loss(spec: &ModelSpec, params: &ParamVector, data: &Dataset) -> Result<f64> {
    check_inputs(spec, params, data)?;
    let all: Vec<usize> = (0..data.len()).collect();
    Ok(evaluate(spec, params.as_slice(), data, &all, None))
}

/// Exact gradient of [`loss`].
pub fn gradient(spec: &ModelSpec, params: &ParamVector, data: &Dataset) -> Result<ParamVector> {
    check_inputs(spec, params, data)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; params.dim()];
    evaluate(spec, params.as_slice(), data, &all, Some(&mut grad));
    Ok(ParamVector(grad))
}

/// `F(u) - F(v) - (u - v)^T grad F(v)`.
///
/// Quadratic parts (the l2 term, and the whole quadratic self-test model) are
/// evaluated in closed form as `(1/2) (u - v)^T H (u - v)`; only the
/// cross-entropy term is a difference of evaluations.
pub fn bregman_divergence(
    spec: &ModelSpec,
    u: &ParamVector,
    v: &ParamVector,
    data: &Dataset,
) -> Result<f64> {
    check_inputs(spec, u, data)?;
    check_inputs(spec, v, data)?;
    let d: Vec<f64> = u.0.iter().zip(&v.0).map(|(a, b)| a - b).collect();
    let quad = 0.5 * spec.l2 * d.iter().map(|x| x * x).sum::<f64>();
    let data_part = match &spec.kind {
        ModelKind::Quadratic { diag } => {
            0.5 * diag.iter().zip(&d).map(|(h, x)| h * x * x).sum::<f64>()
        }
        _ => {
            let all: Vec<usize> = (0..data.len()).collect();
            let mut grad = vec![0.0; v.dim()];
            let f_v = cross_entropy(spec, &v.0, data, &all, Some(&mut grad));
            let f_u = cross_entropy(spec, &u.0, data, &all, None);
            f_u - f_v - d.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>()
        }
    };
    Ok(data_part + quad)
}

/// Loss and gradient in a single pass.
pub fn loss_and_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    data: &Dataset,
) -> Result<(f64, ParamVector)> {
    check_inputs(spec, params, data)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; params.dim()];
    let value = evaluate(spec, params.as_slice(), data, &all, Some(&mut grad));
    Ok((value, ParamVector(grad)))
}

/// Fraction of samples whose arg-max logit equals the label.
pub fn accuracy(spec: &ModelSpec, params: &ParamVector, data: &Dataset) -> Result<f64> {
    check_inputs(spec, params, data)?;
    if !spec.is_classifier() {
        return Err(Error::InvalidArgument(
            "accuracy requires a classifier".into(),
        ));
    }
    let mut logits = vec![0.0; spec.num_classes];
    let mut hidden = Vec::new();
    let correct = data
        .samples()
        .iter()
        .filter(|s| {
            forward(
                spec,
                params.as_slice(),
                &s.features,
                &mut hidden,
                &mut logits,
            );
            let best = logits
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &z)| if z > acc.1 { (i, z) } else { acc },
                )
                .0;
            best == s.label
        })
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Computes logits for one sample. `hidden` receives tanh activations for the MLP.
fn forward(spec: &ModelSpec, w: &[f64], x: &[f64], hidden: &mut Vec<f64>, logits: &mut [f64]) {
    let (d, k) = (spec.feature_dim, spec.num_classes);
    match &spec.kind {
        ModelKind::SoftmaxRegression => {
            let bias = &w[k * d..];
            for c in 0..k {
                let row = &w[c * d..(c + 1) * d];
                logits[c] = bias[c] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        ModelKind::Mlp { hidden: h } => {
            let h = *h;
            let (w1, rest) = w.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(k * h);
            hidden.clear();
            hidden.extend((0..h).map(|j| {
                let row = &w1[j * d..(j + 1) * d];
                (b1[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).tanh()
            }));
            for c in 0..k {
                let row = &w2[c * h..(c + 1) * h];
                logits[c] = b2[c]
                    + row
                        .iter()
                        .zip(hidden.iter())
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
            }
        }
        ModelKind::Quadratic { .. } => unreachable!("quadratic model has no forward pass"),
    }
}

/// Loss over `indices` and, if requested, its gradient written into `grad`.
fn evaluate(
    spec: &ModelSpec,
    w: &[f64],
    data: &Dataset,
    indices: &[usize],
    mut grad: Option<&mut [f64]>,
) -> f64 {
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let reg = 0.5 * spec.l2 * w.iter().map(|v| v * v).sum::<f64>();

    let data_term = match &spec.kind {
        ModelKind::Quadratic { diag } => {
            if let Some(g) = grad.as_deref_mut() {
                for ((gi, hi), wi) in g.iter_mut().zip(diag).zip(w) {
                    *gi = hi * wi;
                }
            }
            0.5 * diag.iter().zip(w).map(|(h, v)| h * v * v).sum::<f64>()
        }
        _ => cross_entropy(spec, w, data, indices, grad.as_deref_mut()),
    };

    if let Some(g) = grad {
        if spec.l2 != 0.0 {
            for (gi, wi) in g.iter_mut().zip(w) {
                *gi += spec.l2 * wi;
            }
        }
    }
    data_term + reg
}

fn cross_entropy(
    spec: &ModelSpec,
    w: &[f64],
    data: &Dataset,
    indices: &[usize],
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let (d, k) = (spec.feature_dim, spec.num_classes);
    let cap = -PROB_FLOOR.ln();
    let scale = 1.0 / indices.len() as f64;
    let mut logits = vec![0.0; k];
    let mut hidden = Vec::new();
    let mut dz = vec![0.0; k];
    let mut dh = Vec::new();
    let mut total = 0.0;

    for &i in indices {
        let sample = &data.samples()[i];
        let x = &sample.features;
        forward(spec, w, x, &mut hidden, &mut logits);

        let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|z| (z - zmax).exp()).sum();
        let lse = zmax + sum_exp.ln();
        let nll = (lse - logits[sample.label]).max(0.0);
        // Past the floor the loss is constant, so the sample contributes no gradient.
        let clamped = nll > cap;
        total += nll.min(cap);

        let Some(g) = grad.as_deref_mut() else {
            continue;
        };
        if clamped {
            continue;
        }
        for c in 0..k {
            dz[c] = ((logits[c] - lse).exp() - if c == sample.label { 1.0 } else { 0.0 }) * scale;
        }
        match &spec.kind {
            ModelKind::SoftmaxRegression => {
                let (gw, gb) = g.split_at_mut(k * d);
                for c in 0..k {
                    let row = &mut gw[c * d..(c + 1) * d];
                    for (gj, xj) in row.iter_mut().zip(x) {
                        *gj += dz[c] * xj;
                    }
                    gb[c] += dz[c];
                }
            }
            ModelKind::Mlp { hidden: h } => {
                let h = *h;
                let w2 = &w[h * d + h..h * d + h + k * h];
                let (gw1, rest) = g.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(k * h);
                dh.clear();
                dh.resize(h, 0.0);
                for c in 0..k {
                    let row = &mut gw2[c * h..(c + 1) * h];
                    for j in 0..h {
                        row[j] += dz[c] * hidden[j];
                        dh[j] += dz[c] * w2[c * h + j];
                    }
                    gb2[c] += dz[c];
                }
                for j in 0..h {
                    let da = dh[j] * (1.0 - hidden[j] * hidden[j]);
                    let row = &mut gw1[j * d..(j + 1) * d];
                    for (gjx, xj) in row.iter_mut().zip(x) {
                        *gjx += da * xj;
                    }
                    gb1[j] += da;
                }
            }
            ModelKind::Quadratic { .. } => unreachable!(),
        }
    }
    total * scale
}

fn check_sgd_args(data: &Dataset, lr: f64, batch_size: usize) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate {lr} must be finite and >= 0"
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 || batch_size > data.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {} must be in 1..={}",
            batch_size,
            data.len()
        )));
    }
    Ok(())
}

/// One shuffled pass of mini-batch SGD. The input parameters are not modified.
pub fn sgd_epoch(
    spec: &ModelSpec,
    params: &ParamVector,
    data: &Dataset,
    lr: f64,
    batch_size: usize,
    rng_seed: u64,
) -> Result<ParamVector> {
    sgd_epoch_traced(spec, params, data, lr, batch_size, rng_seed).map(|(p, _)| p)
}

/// Like [`sgd_epoch`], also returning `||grad F_batch||` at every step.
pub fn sgd_epoch_traced(
    spec: &ModelSpec,
    params: &ParamVector,
    data: &Dataset,
    lr: f64,
    batch_size: usize,
    rng_seed: u64,
) -> Result<(ParamVector, Vec<f64>)> {
    check_sgd_args(data, lr, batch_size)?;
    check_inputs(spec, params, data)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(rng_seed, &[seed::tag::SGD])));

    let mut w = params.as_slice().to_vec();
    let mut grad = vec![0.0; w.len()];
    let mut trace = Vec::with_capacity(order.len().div_ceil(batch_size));
    for batch in order.chunks(batch_size) {
        evaluate(spec, &w, data, batch, Some(&mut grad));
        trace.push(grad.iter().map(|g| g * g).sum::<f64>().sqrt());
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= lr * gi;
        }
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SGD update (learning rate too large?)"));
    }
    Ok((ParamVector(w), trace))
}
