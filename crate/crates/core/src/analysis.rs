//! Post-hoc analysis of finished runs: node usefulness, correlation between
//! local constants and usefulness, empirical CDFs, and constant-driven node
//! selection.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::flsim::FLRun;
use crate::probe::ConstantsEstimate;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UsefulnessRecord {
    pub node_id: usize,
    pub usefulness: f64,
}

/// Mean per-round test-loss improvement of each participating node.
pub fn node_usefulness(run: &FLRun) -> Result<Vec<UsefulnessRecord>> {
    if run.rounds.is_empty() {
        return Err(Error::EmptyInput("run rounds"));
    }
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in &run.rounds {
        for &(id, delta) in &r.usefulness {
            let e = sums.entry(id).or_insert((0.0, 0));
            e.0 += delta;
            e.1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(node_id, (s, n))| UsefulnessRecord {
            node_id,
            usefulness: s / n as f64,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Quantity {
    Mu,
    L,
    G,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::Mu, Quantity::L, Quantity::G];

    pub fn of(self, c: &ConstantsEstimate) -> f64 {
        match self {
            Quantity::Mu => c.mu,
            Quantity::L => c.l_smooth,
            Quantity::G => c.g_max,
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantity::Mu => "mu",
            Quantity::L => "L",
            Quantity::G => "G",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationReport {
    pub quantity: Quantity,
    pub pearson: f64,
    pub spearman: f64,
    pub n: usize,
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    let denom = (sxx * syy).sqrt();
    let denom = if denom.is_finite() && denom > 0.0 {
        denom
    } else {
        sxx.sqrt() * syy.sqrt()
    };
    Ok((sxy / denom).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Pearson product-moment and Spearman rank correlation of `x` and `y`.
pub fn correlate(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "correlation needs >= 3 points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    let pearson = pearson_unchecked(x, y)?;
    let spearman = pearson_unchecked(&average_ranks(x), &average_ranks(y))?;
    Ok((pearson, spearman))
}

/// Correlates each of `mu`, `L`, `G` with usefulness across nodes.
pub fn correlate_constants(
    constants: &[(usize, ConstantsEstimate)],
    usefulness: &[UsefulnessRecord],
) -> Result<Vec<CorrelationReport>> {
    let by_id: BTreeMap<usize, &ConstantsEstimate> =
        constants.iter().map(|(i, c)| (*i, c)).collect();
    let mut pairs = Vec::with_capacity(usefulness.len());
    for u in usefulness {
        let c = by_id.get(&u.node_id).ok_or_else(|| {
            Error::InvalidArgument(format!("no constants for node {}", u.node_id))
        })?;
        pairs.push((*c, u.usefulness));
    }
    let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Quantity::ALL
        .iter()
        .map(|&q| {
            let x: Vec<f64> = pairs.iter().map(|p| q.of(p.0)).collect();
            let (pearson, spearman) = correlate(&x, &y)?;
            Ok(CorrelationReport {
                quantity: q,
                pearson,
                spearman,
                n: x.len(),
            })
        })
        .collect()
}

/// Empirical CDF as `(distinct value, fraction <= value)` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfSeries {
    pub points: Vec<(f64, f64)>,
}

impl CdfSeries {
    /// Fraction of the sample `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        match self.points.partition_point(|&(v, _)| v <= x) {
            0 => 0.0,
            i => self.points[i - 1].1,
        }
    }

    /// Smallest value whose cumulative fraction reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let i = self.points.partition_point(|&(_, f)| f < q);
        self.points[i.min(self.points.len() - 1)].0
    }
}

pub fn empirical_cdf(values: &[f64]) -> Result<CdfSeries> {
    if values.is_empty() {
        return Err(Error::EmptyInput("cdf values"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("cdf values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut points = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        if i + 1 == n || sorted[i + 1] != v {
            points.push((v, (i + 1) as f64 / n as f64));
        }
    }
    Ok(CdfSeries { points })
}

/// Median with the usual midpoint rule for even lengths.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("median values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionPolicy {
    TopL,
    TopG,
    BottomMu,
    /// Lowest `L` first; the contrast arm of a top-`L` selection.
    BottomL,
    Random(u64),
    All,
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionPolicy::TopL => f.write_str("top-L"),
            SelectionPolicy::TopG => f.write_str("top-G"),
            SelectionPolicy::BottomMu => f.write_str("bottom-mu"),
            SelectionPolicy::BottomL => f.write_str("bottom-L"),
            SelectionPolicy::Random(s) => write!(f, "random({s})"),
            SelectionPolicy::All => f.write_str("all"),
        }
    }
}

impl FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "top-L" => SelectionPolicy::TopL,
            "top-G" => SelectionPolicy::TopG,
            "bottom-mu" => SelectionPolicy::BottomMu,
            "bottom-L" => SelectionPolicy::BottomL,
            "all" => SelectionPolicy::All,
            _ => {
                let seed = s
                    .strip_prefix("random(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|n| n.trim().parse().ok())
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("unknown selection policy {s:?}"))
                    })?;
                SelectionPolicy::Random(seed)
            }
        })
    }
}

/// Chooses `k` node ids using only the nodes' `(mu, L, G)` estimates.
/// Ties are broken by ascending node id. Output is sorted.
pub fn select_nodes(
    estimates: &[(usize, ConstantsEstimate)],
    k: usize,
    policy: SelectionPolicy,
) -> Result<Vec<usize>> {
    if k == 0 || k > estimates.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            estimates.len()
        )));
    }
    let mut ranked: Vec<(usize, f64)> = match policy {
        SelectionPolicy::All => estimates.iter().map(|(i, _)| (*i, 0.0)).collect(),
        SelectionPolicy::Random(s) => {
            let mut ids: Vec<usize> = estimates.iter().map(|(i, _)| *i).collect();
            ids.sort_unstable();
            ids.shuffle(&mut seed::rng(seed::derive(s, &[seed::tag::SELECT])));
            ids.into_iter()
                .enumerate()
                .map(|(r, i)| (i, -(r as f64)))
                .collect()
        }
        _ => estimates
            .iter()
            .map(|(i, c)| {
                let key = match policy {
                    SelectionPolicy::TopL => c.l_smooth,
                    SelectionPolicy::TopG => c.g_max,
                    SelectionPolicy::BottomMu => -c.mu,
                    SelectionPolicy::BottomL => -c.l_smooth,
                    _ => unreachable!(),
                };
                (*i, key)
            })
            .collect(),
    };
    if policy == SelectionPolicy::All {
        let mut all: Vec<usize> = ranked.into_iter().map(|(i, _)| i).collect();
        all.sort_unstable();
        return Ok(all);
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = ranked.into_iter().take(k).map(|(i, _)| i).collect();
    chosen.sort_unstable();
    Ok(chosen)
}
