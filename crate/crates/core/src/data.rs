//! Dataset sources: a seeded Gaussian-cluster generator and a reader for the
//! CIFAR-10 binary batch format.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{Dataset, LabeledSample};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    /// Minimum distance between class centers, in raw units.
    pub separation: f64,
    /// Within-class standard deviation, in raw units.
    pub sigma: f64,
    /// Per-node fraction of samples drawn from one dominant class.
    pub label_skew: Vec<f64>,
    /// Per-node multiplier on `sigma`.
    pub noise_multiplier: Vec<f64>,
    /// Per-node factor in (0, 1] multiplying every feature.
    pub feature_gain: Vec<f64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            feature_dim: 8,
            samples_per_class: 500,
            separation: 3.0,
            sigma: 1.0,
            label_skew: Vec::new(),
            noise_multiplier: Vec::new(),
            feature_gain: Vec::new(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.feature_dim == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidArgument(
                "synthetic data needs >= 2 classes, feature_dim >= 1 and samples_per_class >= 1"
                    .into(),
            ));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::InvalidArgument("separation must be > 0".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument("sigma must be > 0".into()));
        }
        Ok(())
    }
}

/// Generated data plus the within-class noise level after normalization.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub feature_sigma: f64,
}

/// Class centers with pairwise distance >= `separation`.
fn class_centers(spec: &SyntheticSpec, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let (k, d) = (spec.num_classes, spec.feature_dim);
    if k <= d {
        // scaled basis vectors are exactly `separation` apart
        let r = spec.separation / std::f64::consts::SQRT_2;
        return (0..k)
            .map(|c| (0..d).map(|j| if j == c { r } else { 0.0 }).collect())
            .collect();
    }
    let mut side = 2.0 * spec.separation * (k as f64).powf(1.0 / d as f64);
    loop {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut attempts = 0;
        while centers.len() < k && attempts < 10_000 {
            attempts += 1;
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..side)).collect();
            let far = centers.iter().all(|o| {
                o.iter()
                    .zip(&c)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    >= spec.separation
            });
            if far {
                centers.push(c);
            }
        }
        if centers.len() == k {
            return centers;
        }
        side *= 1.5;
    }
}

/// Gaussian clusters mapped affinely into `[0, 1]` (clamped beyond 4 sigma).
pub fn gen_synthetic(spec: &SyntheticSpec, rng_seed: u64) -> Result<Dataset> {
    gen_synthetic_scaled(spec, rng_seed).map(|s| s.dataset)
}

pub fn gen_synthetic_scaled(spec: &SyntheticSpec, rng_seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = seed::rng(rng_seed);
    let centers = class_centers(spec, &mut rng);
    let coords = centers.iter().flatten();
    let lo = coords.clone().cloned().fold(f64::INFINITY, f64::min) - 4.0 * spec.sigma;
    let hi = coords.cloned().fold(f64::NEG_INFINITY, f64::max) + 4.0 * spec.sigma;
    let scale = 1.0 / (hi - lo);

    let normal = Normal::new(0.0, spec.sigma).expect("sigma validated");
    let mut samples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let features = center
                .iter()
                .map(|c| ((c + normal.sample(&mut rng) - lo) * scale).clamp(0.0, 1.0))
                .collect();
            samples.push(LabeledSample { features, label });
        }
    }
    Ok(SyntheticData {
        dataset: Dataset::new(samples, spec.num_classes, spec.feature_dim)?,
        feature_sigma: spec.sigma * scale,
    })
}

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = CIFAR_SIDE * CIFAR_SIDE * 3;
pub const CIFAR_RECORD: usize = CIFAR_PIXELS + 1;
pub const CIFAR_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CifarOptions {
    /// Side of the square average-pooling window; must divide 32.
    pub pool: usize,
    pub grayscale: bool,
}

impl Default for CifarOptions {
    fn default() -> Self {
        Self {
            pool: 1,
            grayscale: false,
        }
    }
}

impl CifarOptions {
    pub fn feature_dim(&self) -> usize {
        let side = CIFAR_SIDE / self.pool;
        side * side * if self.grayscale { 1 } else { 3 }
    }

    fn validate(&self) -> Result<()> {
        if self.pool == 0 || !CIFAR_SIDE.is_multiple_of(self.pool) {
            return Err(Error::InvalidArgument(format!(
                "pool {} must divide 32",
                self.pool
            )));
        }
        Ok(())
    }
}

/// Batch files under `path`: the file itself, or every `*.bin` in a directory
/// in lexicographic order.
fn batch_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .bin batch files under {}",
            path.display()
        )));
    }
    Ok(files)
}

pub fn load_cifar10(path: &Path, opts: CifarOptions) -> Result<Dataset> {
    opts.validate()?;
    let mut samples = Vec::new();
    for file in batch_files(path)? {
        let bytes = fs::read(&file)?;
        samples.extend(parse_cifar_records(&bytes, opts)?);
    }
    Dataset::new(samples, CIFAR_CLASSES, opts.feature_dim())
}

/// Parses one batch file's bytes.
pub fn parse_cifar10(bytes: &[u8], opts: CifarOptions) -> Result<Dataset> {
    opts.validate()?;
    Dataset::new(
        parse_cifar_records(bytes, opts)?,
        CIFAR_CLASSES,
        opts.feature_dim(),
    )
}

fn parse_cifar_records(bytes: &[u8], opts: CifarOptions) -> Result<Vec<LabeledSample>> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let offset = (bytes.len() / CIFAR_RECORD * CIFAR_RECORD) as u64;
        return Err(Error::Format {
            offset,
            message: format!(
                "file size {} is not a multiple of the {CIFAR_RECORD}-byte record; trailing {} bytes",
                bytes.len(),
                bytes.len() % CIFAR_RECORD
            ),
        });
    }
    bytes
        .chunks_exact(CIFAR_RECORD)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[0] as usize;
            if label >= CIFAR_CLASSES {
                return Err(Error::Format {
                    offset: (i * CIFAR_RECORD) as u64,
                    message: format!("label byte {label} > 9"),
                });
            }
            Ok(LabeledSample {
                features: downsample(&rec[1..], opts),
                label,
            })
        })
        .collect()
}

/// Pixel planes (R, G, B; each 32x32 row-major) to `[0, 1]` features, pooled
/// and optionally averaged across channels.
fn downsample(pixels: &[u8], opts: CifarOptions) -> Vec<f64> {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let side = CIFAR_SIDE / opts.pool;
    let cell = (opts.pool * opts.pool) as f64;
    let pooled: Vec<Vec<f64>> = (0..3)
        .map(|ch| {
            let p = &pixels[ch * plane..(ch + 1) * plane];
            let mut out = Vec::with_capacity(side * side);
            for by in 0..side {
                for bx in 0..side {
                    let mut s = 0.0;
                    for y in by * opts.pool..(by + 1) * opts.pool {
                        for x in bx * opts.pool..(bx + 1) * opts.pool {
                            s += p[y * CIFAR_SIDE + x] as f64;
                        }
                    }
                    out.push(s / (cell * 255.0));
                }
            }
            out
        })
        .collect();
    if opts.grayscale {
        (0..side * side)
            .map(|i| (pooled[0][i] + pooled[1][i] + pooled[2][i]) / 3.0)
            .collect()
    } else {
        pooled.concat()
    }
}
