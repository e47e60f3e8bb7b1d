//! Performance-evaluation mathematics: center of mass, spatial proximity
//! score, threshold-gated computational capacity score, and their mean.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Position, ResourceProfile, ScoringParams};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoringError {
    #[error("cannot take the center of mass of zero positions")]
    EmptyInput,
    #[error("intensity factor must be in (0,1), got {0}")]
    InvalidIntensity(String),
}

/// A machine's score, split into its two factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    /// Spatial proximity score, in (0, 100].
    pub sp: f64,
    /// Computational capacity score: 0 when gated out, otherwise the mean
    /// of the three resource percentages.
    pub cc: f64,
    /// (sp + cc) / 2.
    pub total: f64,
}

/// Per-dimension arithmetic mean of all positions.
pub fn center_of_mass(positions: &[Position]) -> Result<Position, ScoringError> {
    if positions.is_empty() {
        return Err(ScoringError::EmptyInput);
    }
    let n = positions.len() as f64;
    let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
    for p in positions {
        sx += p.x;
        sy += p.y;
        sz += p.z;
    }
    Ok(Position::new(sx / n, sy / n, sz / n))
}

/// Spatial proximity score: 100 / (1 + a * dist(p, com)).
///
/// Strictly decreasing in distance; the denominator is at least 1, so the
/// result is always in (0, 100] and never divides by zero.
pub fn spatial_score(p: &Position, com: &Position, a: f64) -> Result<f64, ScoringError> {
    if !a.is_finite() || a <= 0.0 || a >= 1.0 {
        return Err(ScoringError::InvalidIntensity(a.to_string()));
    }
    Ok(100.0 / (1.0 + a * p.distance(com)))
}

/// Capacity score: mean of the three resource percentages iff every one
/// strictly exceeds its threshold, else 0.
pub fn capacity_score(r: &ResourceProfile, params: &ScoringParams) -> f64 {
    let passes = r.memory_pct > params.m_thres
        && r.battery_pct > params.b_thres
        && r.processor_pct > params.p_thres;
    if passes {
        (r.memory_pct + r.battery_pct + r.processor_pct) / 3.0
    } else {
        0.0
    }
}

/// Composes the two factors into the aggregate score.
pub fn aggregate_score(
    p: &Position,
    com: &Position,
    r: &ResourceProfile,
    params: &ScoringParams,
) -> Result<ScoreBreakdown, ScoringError> {
    let sp = spatial_score(p, com, params.intensity_a)?;
    let cc = capacity_score(r, params);
    Ok(ScoreBreakdown { sp, cc, total: (sp + cc) / 2.0 })
}
