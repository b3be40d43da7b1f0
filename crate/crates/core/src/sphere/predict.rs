use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{avg_great_circle_distance, Codebook, Vec3};
use crate::error::{Error, Result};
use crate::media::ViewpointLog;

/// I predicted viewpoint trajectories with their viewing probabilities,
/// most likely first.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    trajectories: Vec<Vec<Vec3>>,
    probabilities: Vec<f64>,
}

impl PredictionSet {
    pub fn new(trajectories: Vec<Vec<Vec3>>, probabilities: Vec<f64>) -> Result<Self> {
        if trajectories.is_empty() || trajectories.len() != probabilities.len() {
            return Err(Error::Shape(format!(
                "{} trajectories with {} probabilities",
                trajectories.len(),
                probabilities.len()
            )));
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid("probabilities", "must be strictly positive"));
        }
        if probabilities.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("probabilities", "must be sorted descending"));
        }
        if probabilities.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::invalid("probabilities", "sum exceeds 1"));
        }
        let len = trajectories[0].len();
        for tr in &trajectories {
            if tr.is_empty() || tr.len() != len {
                return Err(Error::Shape("trajectories must share a non-zero length".into()));
            }
            if tr.iter().any(|p| !p.is_unit(1e-9)) {
                return Err(Error::invalid("trajectories", "non-unit viewpoint"));
            }
        }
        Ok(Self {
            trajectories,
            probabilities,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories[0].len()
    }

    pub fn trajectories(&self) -> &[Vec<Vec3>] {
        &self.trajectories
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// First predicted point of every trajectory.
    pub fn first_points(&self) -> Vec<Vec3> {
        self.trajectories.iter().map(|t| t[0]).collect()
    }
}

/// Best-of-many error: the smallest average great-circle distance between
/// any candidate trajectory and the ground truth.
pub fn best_of_many(preds: &PredictionSet, truth: &[Vec3]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for tr in preds.trajectories() {
        best = best.min(avg_great_circle_distance(tr, truth)?);
    }
    Ok(best)
}

/// Repeats the last observed viewpoint for `horizon` steps, `count` times with
/// equal probability.
pub fn baseline_predict(history: &[Vec3], horizon: usize, count: usize) -> Result<PredictionSet> {
    let Some(&last) = history.last() else {
        return Err(Error::invalid("history", "empty history"));
    };
    if horizon == 0 || count == 0 {
        return Err(Error::invalid("horizon", "horizon and count must be positive"));
    }
    PredictionSet::new(
        vec![vec![last; horizon]; count],
        vec![1.0 / count as f64; count],
    )
}

/// Indices of the `count` largest entries, largest first; ties go to the
/// lower index.
pub(crate) fn top_indices(probs: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(count);
    idx
}

pub(crate) fn argmax(probs: &[f64]) -> usize {
    top_indices(probs, 1)[0]
}

/// Builds I trajectories from per-step class distributions: trajectory i
/// starts at the i-th most likely first-step class and continues with the
/// argmax class of each later step. Its probability is the first-step
/// probability of its class.
pub fn top_i_decode(step_probs: &[Vec<f64>], count: usize, codebook: &Codebook) -> Result<PredictionSet> {
    let Some(first) = step_probs.first() else {
        return Err(Error::Shape("no prediction steps".into()));
    };
    for p in step_probs {
        if p.len() != codebook.len() {
            return Err(Error::Shape(format!(
                "step distribution over {} classes, codebook has {}",
                p.len(),
                codebook.len()
            )));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-6 || p.iter().any(|v| *v < 0.0) {
            return Err(Error::invalid("step_probs", "not a probability vector"));
        }
    }
    if count == 0 || count > codebook.len() {
        return Err(Error::invalid("count", format!("I = {count} out of range")));
    }
    let tail: Vec<Vec3> = step_probs[1..]
        .iter()
        .map(|p| codebook.centroid(argmax(p)))
        .collect();
    let mut trajectories = Vec::with_capacity(count);
    let mut probabilities = Vec::with_capacity(count);
    for class in top_indices(first, count) {
        let mut tr = vec![codebook.centroid(class)];
        tr.extend_from_slice(&tail);
        trajectories.push(tr);
        // zero-probability classes cannot head a trajectory
        probabilities.push(first[class].max(f64::MIN_POSITIVE));
    }
    PredictionSet::new(trajectories, probabilities)
}

/// Parameters of the synthetic head-movement generator.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkConfig {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// Typical angular speed in degrees per second.
    pub speed_deg_s: f64,
    /// Probability per sample of a sudden speed change.
    pub jump_prob: f64,
    /// Standard deviation of the heading drift per sample, radians.
    pub turn_std: f64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            duration_s: 60.0,
            sample_rate_hz: 5.0,
            speed_deg_s: 20.0,
            jump_prob: 0.05,
            turn_std: 0.15,
        }
    }
}

/// Seeded great-circle random walk starting at the frame centre, with a
/// slowly drifting heading and occasional speed jumps.
pub fn synthetic_walk(cfg: &WalkConfig, seed: u64) -> Result<ViewpointLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (cfg.duration_s * cfg.sample_rate_hz).round().max(1.0) as usize;
    let dt = 1.0 / cfg.sample_rate_hz;
    let mut p = Vec3::new(1.0, 0.0, 0.0);
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut speed = cfg.speed_deg_s;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        samples.push((i as f64 * dt, p));
        if rng.random::<f64>() < cfg.jump_prob {
            speed = cfg.speed_deg_s * rng.random_range(0.0..4.0);
        }
        let z: f64 = StandardNormal.sample(&mut rng);
        heading += cfg.turn_std * z;
        // local tangent frame: east and north at p
        let up = Vec3::new(0.0, 0.0, 1.0);
        let mut east = up.cross(p);
        if east.norm() < 1e-9 {
            east = Vec3::new(0.0, 1.0, 0.0);
        }
        let east = east.normalized();
        let north = p.cross(east);
        let dir = east * heading.cos() + north * heading.sin();
        let angle = (speed * dt).to_radians();
        let next = (p * angle.cos() + dir * angle.sin()).normalized();
        // keep away from the poles where the heading frame degenerates
        if next.z.abs() > 0.95 {
            heading += std::f64::consts::PI;
        } else {
            p = next;
        }
    }
    ViewpointLog::new(samples, cfg.sample_rate_hz)
}
