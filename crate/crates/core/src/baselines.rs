//! Rule-based ABR policies: buffer-based (BB), rate-based (RB), model
//! predictive control (MPC) and the BB/RB switch (Dynamic).
//!
//! All of them pick one rung for every viewport region. BB also fetches the
//! rest region at that rung; the others leave it at the lowest rung.

use serde::{Deserialize, Serialize};

use crate::env::{AbrPolicy, Decision, StreamingEnv};
use crate::error::{Error, Result};
use crate::qoe::{self, QoEWeights};

/// Thresholds and horizons of the rule-based policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Below this buffer level BB picks the lowest rung.
    pub bb_low_s: f64,
    /// Above this buffer level BB picks the highest rung.
    pub bb_high_s: f64,
    /// Throughput samples in RB's harmonic mean.
    pub rb_history: usize,
    pub mpc_horizon: usize,
    /// Dynamic uses BB strictly above this buffer level, RB otherwise.
    pub dynamic_threshold_s: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            bb_low_s: 5.0,
            bb_high_s: 15.0,
            rb_history: 5,
            mpc_horizon: 3,
            dynamic_threshold_s: 10.0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bb_low_s >= 0.0 && self.bb_low_s < self.bb_high_s) {
            return Err(Error::invalid("bb thresholds", "need 0 <= low < high"));
        }
        if self.rb_history == 0 {
            return Err(Error::invalid("rb_history", "must be >= 1"));
        }
        if self.mpc_horizon == 0 {
            return Err(Error::invalid("mpc_horizon", "must be >= 1"));
        }
        Ok(())
    }
}

/// Buffer-based rung: 0 below `low`, N-1 above `high`, otherwise
/// `floor((b - low) / (high - low) * (N - 1))`.
pub fn bb_select(buffer_s: f64, num_rungs: usize, low_s: f64, high_s: f64) -> usize {
    if buffer_s < low_s {
        return 0;
    }
    if buffer_s > high_s {
        return num_rungs - 1;
    }
    let idx = ((buffer_s - low_s) / (high_s - low_s) * (num_rungs - 1) as f64).floor() as usize;
    idx.min(num_rungs - 1)
}

/// Harmonic mean of the positive entries among the last `k` samples.
pub fn harmonic_mean(history: &[f64], k: usize) -> Option<f64> {
    let recent = &history[history.len().saturating_sub(k)..];
    let positive: Vec<f64> = recent.iter().copied().filter(|x| *x > 0.0).collect();
    if positive.is_empty() {
        return None;
    }
    Some(positive.len() as f64 / positive.iter().map(|x| 1.0 / x).sum::<f64>())
}

/// Largest rung whose bitrate does not exceed the harmonic mean of the last
/// `k` throughputs (zero entries are start-up padding and skipped); rung 0
/// when none qualifies.
pub fn rb_select(throughput_history: &[f64], ladder: &[f64], k: usize) -> Result<usize> {
    if throughput_history.is_empty() {
        return Err(Error::invalid("throughput history", "empty history"));
    }
    let Some(estimate) = harmonic_mean(throughput_history, k) else {
        return Ok(0);
    };
    Ok(ladder.iter().rposition(|&r| r <= estimate).unwrap_or(0))
}

/// Everything MPC needs to simulate the next segments.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcState {
    pub buffer_s: f64,
    pub max_buffer_s: f64,
    pub segment_duration_s: f64,
    pub predicted_throughput_mbps: f64,
    /// `sizes[h][r]`: megabits of the h-th future segment with every
    /// viewport region at rung r.
    pub sizes: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
    pub previous_qualities: Option<Vec<f64>>,
    pub ladder: Vec<f64>,
    pub weights: QoEWeights,
}

impl MpcState {
    /// Snapshot of `env` for a lookahead of `horizon` segments (truncated at
    /// the end of the video). Future segments reuse the current partition.
    pub fn from_env(env: &StreamingEnv, horizon: usize, rb_history: usize) -> Result<Self> {
        let manifest = env.manifest();
        let assignment = env.assignment();
        let owners = assignment.owners(manifest.num_tiles());
        let t0 = env.segment();
        let end = (t0 + horizon).min(manifest.segments());
        let mut sizes = Vec::with_capacity(end - t0);
        for t in t0..end {
            let row = (0..manifest.num_rungs())
                .map(|r| {
                    let rungs: Vec<usize> = owners.iter().map(|o| if o.is_some() { r } else { 0 }).collect();
                    manifest.segment_size(t, &rungs)
                })
                .collect::<Result<Vec<f64>>>()?;
            sizes.push(row);
        }
        let predicted = harmonic_mean(env.throughput_history(), rb_history)
            .unwrap_or_else(|| env.config().trace.throughput_at(env.clock_s()));
        Ok(Self {
            buffer_s: env.buffer_s(),
            max_buffer_s: env.config().max_buffer_s,
            segment_duration_s: manifest.segment_duration_s(),
            predicted_throughput_mbps: predicted,
            sizes,
            probabilities: assignment.probabilities.clone(),
            previous_qualities: env.last_qualities().map(<[f64]>::to_vec),
            ladder: manifest.ladder().to_vec(),
            weights: env.config().weights,
        })
    }

    /// Predicted QoE sum of a rung sequence.
    pub fn plan_value(&self, plan: &[usize]) -> Result<f64> {
        let mut buffer = self.buffer_s;
        let mut prev = self.previous_qualities.clone();
        let mut total = 0.0;
        for (h, &rung) in plan.iter().enumerate() {
            let download = self.sizes[h][rung] / self.predicted_throughput_mbps;
            let rebuffer = qoe::rebuffer_time(download, buffer, self.segment_duration_s);
            let q = vec![self.ladder[rung]; self.probabilities.len()];
            let inputs = qoe::QoEInputs {
                probabilities: self.probabilities.clone(),
                qualities: q.clone(),
                previous: prev,
                rebuffer_s: rebuffer,
            };
            total += qoe::qoe_total(&self.weights, &inputs, false)?.total;
            buffer = ((buffer - download).max(0.0) + self.segment_duration_s).min(self.max_buffer_s);
            prev = Some(q);
        }
        Ok(total)
    }
}

/// Exhaustive search over uniform-rung plans for the lookahead; returns the
/// first rung of the best plan (ties to the lower rung sequence).
pub fn mpc_select(state: &MpcState) -> Result<usize> {
    let h = state.sizes.len();
    let n = state.ladder.len();
    if h == 0 {
        return Err(Error::invalid("mpc horizon", "no future segments to plan"));
    }
    if !(state.predicted_throughput_mbps > 0.0) {
        return Err(Error::invalid("predicted throughput", "must be positive"));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    let mut plan = vec![0usize; h];
    for code in 0..n.pow(h as u32) {
        let mut c = code;
        for slot in plan.iter_mut().rev() {
            *slot = c % n;
            c /= n;
        }
        let v = state.plan_value(&plan)?;
        if v > best.0 {
            best = (v, plan[0]);
        }
    }
    Ok(best.1)
}

/// BB above the threshold (strictly), RB otherwise.
pub fn dynamic_select(
    buffer_s: f64,
    throughput_history: &[f64],
    ladder: &[f64],
    config: &BaselineConfig,
) -> Result<usize> {
    if buffer_s > config.dynamic_threshold_s {
        Ok(bb_select(buffer_s, ladder.len(), config.bb_low_s, config.bb_high_s))
    } else {
        rb_select(throughput_history, ladder, config.rb_history)
    }
}

/// The rule-based policy kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Bb,
    Rb,
    Mpc,
    Dynamic,
}

/// A rule-based policy usable with [`crate::env::run_episode`].
#[derive(Debug, Clone, PartialEq)]
pub struct RulePolicy {
    pub kind: RuleKind,
    pub config: BaselineConfig,
}

impl RulePolicy {
    pub fn new(kind: RuleKind, config: BaselineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { kind, config })
    }
}

impl AbrPolicy for RulePolicy {
    fn name(&self) -> &str {
        match self.kind {
            RuleKind::Bb => "bb",
            RuleKind::Rb => "rb",
            RuleKind::Mpc => "mpc",
            RuleKind::Dynamic => "dynamic",
        }
    }

    fn decide(&mut self, env: &StreamingEnv) -> Result<Decision> {
        let c = &self.config;
        let ladder = env.manifest().ladder();
        let agents = env.num_agents();
        let (rung, rest) = match self.kind {
            RuleKind::Bb => {
                let r = bb_select(env.buffer_s(), ladder.len(), c.bb_low_s, c.bb_high_s);
                (r, r)
            }
            RuleKind::Rb => (rb_select(env.throughput_history(), ladder, c.rb_history)?, 0),
            RuleKind::Mpc => (mpc_select(&MpcState::from_env(env, c.mpc_horizon, c.rb_history)?)?, 0),
            RuleKind::Dynamic => (dynamic_select(env.buffer_s(), env.throughput_history(), ladder, c)?, 0),
        };
        Ok(Decision {
            actions: vec![rung; agents],
            rest_rung: rest,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::DEFAULT_LADDER;

    #[test]
    fn bb_examples() {
        assert_eq!(bb_select(2.0, 6, 5.0, 15.0), 0);
        assert_eq!(bb_select(20.0, 6, 5.0, 15.0), 5);
        assert_eq!(bb_select(10.0, 6, 5.0, 15.0), 2);
        assert_eq!(bb_select(15.0, 6, 5.0, 15.0), 5);
        let mut last = 0;
        for i in 0..400 {
            let r = bb_select(i as f64 * 0.05, 6, 5.0, 15.0);
            assert!(r >= last && r < 6);
            last = r;
        }
    }

    #[test]
    fn rb_examples() {
        assert_eq!(rb_select(&[9.0; 5], &DEFAULT_LADDER, 5).unwrap(), 3);
        assert_eq!(rb_select(&[0.5, 0.4], &DEFAULT_LADDER, 5).unwrap(), 0);
        assert_eq!(rb_select(&[4.0, 12.0], &DEFAULT_LADDER, 5).unwrap(), 2);
        assert_eq!(rb_select(&[0.0, 0.0, 4.0, 12.0], &DEFAULT_LADDER, 5).unwrap(), 2);
        assert_eq!(rb_select(&[0.0; 8], &DEFAULT_LADDER, 5).unwrap(), 0);
        assert!(rb_select(&[], &DEFAULT_LADDER, 5).is_err());
    }

    #[test]
    fn dynamic_branches() {
        let cfg = BaselineConfig::default();
        let hist = [2.0; 5];
        assert_eq!(dynamic_select(12.0, &hist, &DEFAULT_LADDER, &cfg).unwrap(), bb_select(12.0, 6, 5.0, 15.0));
        assert_eq!(dynamic_select(3.0, &hist, &DEFAULT_LADDER, &cfg).unwrap(), 0);
        assert_eq!(dynamic_select(10.0, &[9.0; 5], &DEFAULT_LADDER, &cfg).unwrap(), 3);
    }

    fn state(throughput: f64, weights: QoEWeights) -> MpcState {
        MpcState {
            buffer_s: 4.0,
            max_buffer_s: 60.0,
            segment_duration_s: 1.0,
            predicted_throughput_mbps: throughput,
            sizes: vec![DEFAULT_LADDER.to_vec(); 1],
            probabilities: vec![0.5, 0.3, 0.2],
            previous_qualities: Some(vec![5.0; 3]),
            ladder: DEFAULT_LADDER.to_vec(),
            weights,
        }
    }

    #[test]
    fn mpc_examples() {
        let quality_only = QoEWeights::new(1.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(mpc_select(&state(1e6, quality_only)).unwrap(), 5);
        assert_eq!(mpc_select(&state(1e-3, QoEWeights::BASELINE)).unwrap(), 0);
        let mut s = state(7.0, QoEWeights::BASELINE);
        s.sizes = vec![DEFAULT_LADDER.to_vec(); 3];
        let r = mpc_select(&s).unwrap();
        assert!(r < 6);
        assert!(BaselineConfig {
            mpc_horizon: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
