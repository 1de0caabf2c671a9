//! Raw and reliability-corrected score rates.
//!
//! A raw rate is votes per presentation. Rates computed from very few
//! presentations are unreliable, so selection works on corrected rates
//! `f(S) / f(E)` where `f` is a sine ramp below `a` presentations and linear
//! above it. Ideas or families that have never been presented get the
//! constant `c`, which is larger than any perfect record's rate of 1 and so
//! pulls unexplored material forward.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::idea_store::FamilyStats;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("correction input must be non-negative, got {0}")]
    NegativeInput(f64),
    #[error("rate undefined without presentations")]
    NoPresentations,
    #[error("score {score} exceeds presentations {presentations}")]
    ScoreExceedsPresentations { score: u32, presentations: u32 },
    #[error("cannot normalize: all weights are zero")]
    AllZeroWeights,
    #[error("weight {0} is negative or not finite")]
    InvalidWeight(f64),
    #[error("invalid correction parameters: {0}")]
    InvalidParams(&'static str),
}

/// Strength of the reliability correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionParams {
    /// Presentation count below which rates are considered unreliable.
    pub a: f64,
    /// Vertical offset; `f(0) = b - 1`, so `b >= 1` keeps `f` non-negative.
    pub b: f64,
    /// Rate assigned to anything never presented.
    pub c: f64,
}

impl Default for CorrectionParams {
    fn default() -> Self {
        Self {
            a: 3.0,
            b: 1.5,
            c: 2.0,
        }
    }
}

impl CorrectionParams {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, ScoreError> {
        let params = Self { a, b, c };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(ScoreError::InvalidParams("a must be positive"));
        }
        if !(self.b.is_finite() && self.b >= 1.0) {
            return Err(ScoreError::InvalidParams("b must be at least 1"));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(ScoreError::InvalidParams("c must be positive"));
        }
        Ok(())
    }

    fn f_unchecked(&self, x: f64) -> f64 {
        let phase = FRAC_PI_2 * (x / self.a - 1.0);
        if x < self.a {
            phase.sin() + self.b
        } else {
            phase + self.b
        }
    }
}

/// The correction function `f`.
pub fn correction(x: f64, params: &CorrectionParams) -> Result<f64, ScoreError> {
    if x.is_nan() || x < 0.0 {
        return Err(ScoreError::NegativeInput(x));
    }
    Ok(params.f_unchecked(x))
}

fn check_counts(presentations: u32, score: u32) -> Result<(), ScoreError> {
    if score > presentations {
        return Err(ScoreError::ScoreExceedsPresentations {
            score,
            presentations,
        });
    }
    Ok(())
}

/// Individual score rate `S / E`.
pub fn raw_isr(presentations: u32, score: u32) -> Result<f64, ScoreError> {
    check_counts(presentations, score)?;
    if presentations == 0 {
        return Err(ScoreError::NoPresentations);
    }
    Ok(f64::from(score) / f64::from(presentations))
}

/// Familial score rate: total score over total presentations.
pub fn raw_fsr(stats: &FamilyStats) -> Result<f64, ScoreError> {
    if stats.total_presentations == 0 {
        return Err(ScoreError::NoPresentations);
    }
    Ok(stats.total_score as f64 / stats.total_presentations as f64)
}

/// Corrected familial rate; `c` until the family's root has been shown once.
pub fn modified_fsr(stats: &FamilyStats, params: &CorrectionParams) -> f64 {
    if stats.initial_presentations == 0 {
        return params.c;
    }
    params.f_unchecked(stats.total_score as f64) / params.f_unchecked(stats.total_presentations as f64)
}

/// True when an idea is permanently out of individual selection:
/// more than one presentation and a rate strictly below one half.
pub fn is_eliminated(presentations: u32, score: u32) -> bool {
    presentations > 1 && 2 * u64::from(score) < u64::from(presentations)
}

/// Corrected individual rate.
pub fn modified_isr(presentations: u32, score: u32, params: &CorrectionParams) -> Result<f64, ScoreError> {
    check_counts(presentations, score)?;
    if presentations == 0 {
        return Ok(params.c);
    }
    if is_eliminated(presentations, score) {
        return Ok(0.0);
    }
    Ok(params.f_unchecked(f64::from(score)) / params.f_unchecked(f64::from(presentations)))
}

/// Scale non-negative weights to a probability vector.
pub fn normalize_to_probabilities(weights: &[f64]) -> Result<Vec<f64>, ScoreError> {
    if let Some(&bad) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(ScoreError::InvalidWeight(bad));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(ScoreError::AllZeroWeights);
    }
    Ok(weights.iter().map(|w| w / total).collect())
}
