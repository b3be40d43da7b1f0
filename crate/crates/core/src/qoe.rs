//! Per-segment QoE: probability-weighted viewport quality minus temporal
//! variation, spatial variation and rebuffering penalties.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights (alpha1..alpha4) of the four QoE terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoEWeights {
    pub quality: f64,
    pub temporal: f64,
    pub spatial: f64,
    pub rebuffer: f64,
}

impl QoEWeights {
    pub fn new(quality: f64, temporal: f64, spatial: f64, rebuffer: f64) -> Result<Self> {
        let w = Self {
            quality,
            temporal,
            spatial,
            rebuffer,
        };
        if w.as_array().iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::invalid("weights", "QoE weights must be finite and >= 0"));
        }
        Ok(w)
    }

    pub const BASELINE: Self = Self::preset(1.0, 1.0, 1.0, 1.0);
    pub const TEMPORAL: Self = Self::preset(1.0, 2.0, 1.0, 1.0);
    pub const SPATIAL: Self = Self::preset(1.0, 1.0, 2.0, 1.0);
    pub const REBUFFER: Self = Self::preset(1.0, 1.0, 1.0, 2.0);

    const fn preset(quality: f64, temporal: f64, spatial: f64, rebuffer: f64) -> Self {
        Self {
            quality,
            temporal,
            spatial,
            rebuffer,
        }
    }

    /// The four named objectives.
    pub fn presets() -> [(&'static str, Self); 4] {
        [
            ("1,1,1,1", Self::BASELINE),
            ("1,2,1,1", Self::TEMPORAL),
            ("1,1,2,1", Self::SPATIAL),
            ("1,1,1,2", Self::REBUFFER),
        ]
    }

    /// Parses a preset such as `(1,1,1,1)`, `1,2,1,1` or an alias
    /// (`baseline`, `temporal`, `spatial`, `rebuffer`).
    pub fn from_preset(name: &str) -> Result<Self> {
        let key: String = name
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '(' && *c != ')')
            .collect();
        let alias = match key.as_str() {
            "baseline" => Some(Self::BASELINE),
            "temporal" => Some(Self::TEMPORAL),
            "spatial" => Some(Self::SPATIAL),
            "rebuffer" => Some(Self::REBUFFER),
            _ => None,
        };
        alias
            .or_else(|| {
                Self::presets()
                    .into_iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, w)| w)
            })
            .ok_or_else(|| Error::Config(format!("unknown QoE objective preset `{name}`")))
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.quality, self.temporal, self.spatial, self.rebuffer]
    }
}

impl Default for QoEWeights {
    fn default() -> Self {
        Self::BASELINE
    }
}

/// The four QoE terms of one segment and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QoEBreakdown {
    /// Mbps
    pub viewport_quality: f64,
    /// Mbps
    pub temporal_variation: f64,
    /// Mbps
    pub spatial_variation: f64,
    /// seconds
    pub rebuffer_s: f64,
    pub total: f64,
}

impl QoEBreakdown {
    pub fn terms(&self) -> [f64; 4] {
        [
            self.viewport_quality,
            self.temporal_variation,
            self.spatial_variation,
            self.rebuffer_s,
        ]
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{a} probabilities for {b} qualities")));
    }
    Ok(())
}

/// Probability-weighted viewport quality.
pub fn viewport_quality(psi: &[f64], q: &[f64]) -> Result<f64> {
    check_len(psi.len(), q.len())?;
    Ok(psi.iter().zip(q).map(|(p, q)| p * q).sum())
}

/// Probability-weighted quality change of each region since the previous
/// segment; zero for the first segment. `signed` keeps the sign of each
/// difference instead of taking its magnitude.
pub fn temporal_variation(psi: &[f64], q_now: &[f64], q_prev: Option<&[f64]>, signed: bool) -> Result<f64> {
    check_len(psi.len(), q_now.len())?;
    let Some(prev) = q_prev else {
        return Ok(0.0);
    };
    check_len(psi.len(), prev.len())?;
    Ok(psi
        .iter()
        .zip(q_now.iter().zip(prev))
        .map(|(p, (a, b))| p * if signed { a - b } else { (a - b).abs() })
        .sum())
}

/// Half the sum over ordered region pairs of `psi_i * psi_j * |q_i - q_j|`.
pub fn spatial_variation(psi: &[f64], q: &[f64], signed: bool) -> Result<f64> {
    check_len(psi.len(), q.len())?;
    let mut total = 0.0;
    for i in 0..q.len() {
        for j in 0..q.len() {
            if i != j {
                let d = q[i] - q[j];
                total += psi[i] * psi[j] * if signed { d } else { d.abs() };
            }
        }
    }
    Ok(0.5 * total)
}

/// Rebuffer time `max(download - buffer + duration, 0)`.
pub fn rebuffer_time(download_time_s: f64, buffer_s: f64, segment_duration_s: f64) -> f64 {
    (download_time_s - buffer_s + segment_duration_s).max(0.0)
}

/// Everything needed to score one segment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QoEInputs {
    pub probabilities: Vec<f64>,
    pub qualities: Vec<f64>,
    pub previous: Option<Vec<f64>>,
    pub rebuffer_s: f64,
}

/// Composes the four terms into a breakdown with the weighted total.
pub fn qoe_total(weights: &QoEWeights, inputs: &QoEInputs, signed_variation: bool) -> Result<QoEBreakdown> {
    if inputs.rebuffer_s < 0.0 {
        return Err(Error::invalid("rebuffer_s", "rebuffer time must be >= 0"));
    }
    let q1 = viewport_quality(&inputs.probabilities, &inputs.qualities)?;
    let q2 = temporal_variation(
        &inputs.probabilities,
        &inputs.qualities,
        inputs.previous.as_deref(),
        signed_variation,
    )?;
    let q3 = spatial_variation(&inputs.probabilities, &inputs.qualities, signed_variation)?;
    let q4 = inputs.rebuffer_s;
    Ok(QoEBreakdown {
        viewport_quality: q1,
        temporal_variation: q2,
        spatial_variation: q3,
        rebuffer_s: q4,
        total: weights.quality * q1 - weights.temporal * q2 - weights.spatial * q3 - weights.rebuffer * q4,
    })
}

/// Agent i's share of the weighted total: its own quality, temporal and
/// spatial terms plus an equal share of the rebuffer penalty. The shares of
/// all agents sum to the total.
pub fn local_reward(weights: &QoEWeights, inputs: &QoEInputs, agent: usize, signed_variation: bool) -> Result<f64> {
    let n = inputs.qualities.len();
    check_len(inputs.probabilities.len(), n)?;
    if agent >= n {
        return Err(Error::OutOfRange {
            what: "agent",
            index: agent,
            limit: n,
        });
    }
    let psi = &inputs.probabilities;
    let q = &inputs.qualities;
    let diff = |d: f64| if signed_variation { d } else { d.abs() };
    let temporal = inputs
        .previous
        .as_ref()
        .map_or(0.0, |prev| psi[agent] * diff(q[agent] - prev[agent]));
    let spatial: f64 = (0..n)
        .filter(|&j| j != agent)
        .map(|j| psi[agent] * psi[j] * diff(q[agent] - q[j]))
        .sum::<f64>()
        * 0.5;
    Ok(weights.quality * psi[agent] * q[agent]
        - weights.temporal * temporal
        - weights.spatial * spatial
        - weights.rebuffer * inputs.rebuffer_s / n as f64)
}
