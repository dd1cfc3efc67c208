//! Parameter-agnostic stepsize and momentum schedules.
//!
//! Decreasing mode uses `η_t = (2/(τ+2))^q` and `γ_t = γ₀ (2/(τ+2))^p`, with
//! `τ = t` per iteration or `τ = ⌊t / epoch_length⌋` per epoch. No problem
//! constant enters a schedule.

use crate::error::{Error, Result};
use crate::momentum::MomentumKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    PerIteration,
    PerEpoch { epoch_length: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Decreasing {
        gamma0: f64,
        /// stepsize exponent
        p: f64,
        /// momentum exponent
        q: f64,
        granularity: Granularity,
    },
    Constant {
        gamma: f64,
        eta: f64,
    },
}

pub const DEFAULT_GAMMA0: f64 = 1.0;

/// `(p, q)` = (stepsize exponent, momentum exponent) for each momentum kind.
pub fn default_exponents(kind: MomentumKind) -> (f64, f64) {
    match kind {
        MomentumKind::Sgdm => (3.0 / 4.0, 1.0 / 2.0),
        MomentumKind::Igt => (5.0 / 7.0, 4.0 / 7.0),
        MomentumKind::Rhm | MomentumKind::Hm | MomentumKind::Mvr => (2.0 / 3.0, 2.0 / 3.0),
    }
}

impl Schedule {
    pub fn decreasing(gamma0: f64, p: f64, q: f64, granularity: Granularity) -> Result<Self> {
        if !(gamma0 > 0.0 && gamma0.is_finite()) {
            return Err(Error::config("gamma0", "must be positive and finite"));
        }
        if !(p >= 0.0 && p.is_finite()) {
            return Err(Error::config("gamma-exponent", "must be nonnegative"));
        }
        if !(0.0..1.0).contains(&q) {
            return Err(Error::config("eta-exponent", "must lie in [0, 1)"));
        }
        if let Granularity::PerEpoch { epoch_length: 0 } = granularity {
            return Err(Error::config("granularity", "epoch length must be positive"));
        }
        Ok(Schedule::Decreasing { gamma0, p, q, granularity })
    }

    /// Decreasing schedule with the default exponents of `kind`.
    pub fn for_kind(kind: MomentumKind, gamma0: f64, granularity: Granularity) -> Result<Self> {
        let (p, q) = default_exponents(kind);
        Self::decreasing(gamma0, p, q, granularity)
    }

    pub fn constant(gamma: f64, eta: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::config("gamma", "must be positive and finite"));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::config("eta", "must lie in (0, 1]"));
        }
        Ok(Schedule::Constant { gamma, eta })
    }

    fn base(granularity: Granularity, t: usize) -> f64 {
        let tau = match granularity {
            Granularity::PerIteration => t,
            Granularity::PerEpoch { epoch_length } => t / epoch_length,
        };
        2.0 / (tau as f64 + 2.0)
    }

    pub fn eta_at(&self, t: usize) -> f64 {
        match *self {
            Schedule::Decreasing { q, granularity, .. } => Self::base(granularity, t).powf(q),
            Schedule::Constant { eta, .. } => eta,
        }
    }

    pub fn gamma_at(&self, t: usize) -> f64 {
        match *self {
            Schedule::Decreasing { gamma0, p, granularity, .. } => {
                gamma0 * Self::base(granularity, t).powf(p)
            }
            Schedule::Constant { gamma, .. } => gamma,
        }
    }
}
