//! Consistency scoring functions.
//!
//! A scoring function maps the residual of a geometric invariant (for example
//! the difference of two pairwise distances) to a consistency score in
//! `[0, 1]`. Both variants share the support `|x| <= epsilon`; the boundary
//! itself is consistent.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Truncated Gaussian `exp(-x^2 / (2 sigma^2))`.
    Weighted,
    /// Indicator of `|x| <= epsilon`.
    Binary,
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(ScoreKind::Weighted),
            "binary" => Ok(ScoreKind::Binary),
            other => Err(Error::Parameter(format!("unknown scoring kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScoreKind::Weighted => f.write_str("weighted"),
            ScoreKind::Binary => f.write_str("binary"),
        }
    }
}

/// Threshold, width and shape of the scoring function. Units follow the
/// invariant being scored (meters for distances, radians for angles).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringConfig {
    pub epsilon: f64,
    pub sigma: f64,
    pub kind: ScoreKind,
}

impl ScoringConfig {
    pub fn weighted(epsilon: f64, sigma: f64) -> Result<Self> {
        let cfg = ScoringConfig {
            epsilon,
            sigma,
            kind: ScoreKind::Weighted,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn binary(epsilon: f64) -> Result<Self> {
        let cfg = ScoringConfig {
            epsilon,
            sigma: f64::NAN,
            kind: ScoreKind::Binary,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Parameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.kind == ScoreKind::Weighted && !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Parameter(format!(
                "sigma must be positive for weighted scoring, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Scores `x` with whichever function `kind` selects.
    pub fn score(&self, x: f64) -> Result<f64> {
        match self.kind {
            ScoreKind::Weighted => score_weighted(x, self),
            ScoreKind::Binary => score_binary(x, self),
        }
    }
}

/// `exp(-x^2 / (2 sigma^2))` inside `|x| <= epsilon`, zero outside.
pub fn score_weighted(x: f64, cfg: &ScoringConfig) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::InvalidResidual(x));
    }
    if cfg.kind != ScoreKind::Weighted {
        return Err(Error::Parameter(
            "score_weighted needs a weighted config".into(),
        ));
    }
    if x.abs() > cfg.epsilon {
        return Ok(0.0);
    }
    Ok((-0.5 * x * x / (cfg.sigma * cfg.sigma)).exp())
}

/// One inside `|x| <= epsilon`, zero outside. The config's `kind` is not
/// consulted, so a weighted config can be reused for its support.
pub fn score_binary(x: f64, cfg: &ScoringConfig) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::InvalidResidual(x));
    }
    Ok(if x.abs() <= cfg.epsilon { 1.0 } else { 0.0 })
}
