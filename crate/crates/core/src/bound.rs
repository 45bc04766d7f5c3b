//! FedAvg convergence bound for strongly convex, smooth losses with bounded
//! gradients, under full participation, equal weights and one local epoch per
//! round:
//!
//! ```text
//! E[F(t)] - F* <= (8L/mu) / (t - 1 + 8L/mu) * (16 G^2 / mu + 4 L E||w1 - w*||)
//! ```

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::probe::ConstantsEstimate;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub mu: f64,
    pub l_smooth: f64,
    pub g_max: f64,
    /// Expected initial distance to the optimum, `E||w1 - w*||`.
    pub dist: f64,
}

impl BoundParams {
    pub fn new(mu: f64, l_smooth: f64, g_max: f64, dist: f64) -> Result<Self> {
        let p = Self {
            mu,
            l_smooth,
            g_max,
            dist,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_constants(c: &ConstantsEstimate, dist: f64) -> Result<Self> {
        Self::new(c.mu, c.l_smooth, c.g_max, dist)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if !(self.l_smooth >= self.mu && self.l_smooth.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "L must satisfy L >= mu, got L={} mu={}",
                self.l_smooth, self.mu
            )));
        }
        if !(self.g_max >= 0.0 && self.g_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "G must be >= 0, got {}",
                self.g_max
            )));
        }
        if !(self.dist >= 0.0 && self.dist.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "distance must be >= 0, got {}",
                self.dist
            )));
        }
        Ok(())
    }

    /// The round-independent factor `16 G^2 / mu + 4 L dist`.
    pub fn scale(&self) -> f64 {
        16.0 * self.g_max * self.g_max / self.mu + 4.0 * self.l_smooth * self.dist
    }

    /// Condition-like ratio `8 L / mu`.
    pub fn kappa8(&self) -> f64 {
        8.0 * self.l_smooth / self.mu
    }
}

/// Bound on the loss gap after `t >= 1` rounds.
pub fn convergence_bound(t: u64, p: &BoundParams) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidArgument("round index t must be >= 1".into()));
    }
    p.validate()?;
    let k = p.kappa8();
    Ok(k / ((t - 1) as f64 + k) * p.scale())
}

/// Bound values at `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCurve {
    pub values: Vec<(u64, f64)>,
}

pub fn bound_curve(rounds: u64, p: &BoundParams) -> Result<BoundCurve> {
    if rounds == 0 {
        return Err(Error::InvalidArgument("bound curve needs T >= 1".into()));
    }
    let values = (1..=rounds)
        .map(|t| convergence_bound(t, p).map(|b| (t, b)))
        .collect::<Result<_>>()?;
    Ok(BoundCurve { values })
}

/// `||w1 - w*||` for a proxy of the optimum.
pub fn estimate_initial_distance(w1: &ParamVector, wstar_proxy: &ParamVector) -> Result<f64> {
    w1.distance(wstar_proxy)
}
