//! The multi-agent streaming environment: one agent per predicted viewport
//! region, a shared QoE reward, trace-driven download timing and a bounded
//! playback buffer.
//!
//! Episode log columns (one row per segment, `I` agents):
//!
//! `segment action_1..action_I psi_1..psi_I q_1..q_I viewport_quality
//! temporal_variation spatial_variation rebuffer_s qoe buffer_s download_s
//! clock_s`
//!
//! `buffer_s` is the buffer after the segment was added and `clock_s` the
//! trace time at the end of the step.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionModel, FeatureGrid};
use crate::error::{Error, Result};
use crate::media::{NetworkTrace, VideoManifest, ViewpointLog};
use crate::qoe::{self, QoEBreakdown, QoEInputs, QoEWeights};
use crate::region::{self, Fov, RegionAssignment};
use crate::sphere::{baseline_predict, Codebook, PredictionSet, Vec3};
use crate::text;

/// Scripted first-point-of-segment predictions: for each segment, I
/// viewpoints with their probabilities (most likely first).
///
/// File format: a header line `F I`, then for every segment I lines
/// `prob x y z`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFixture {
    agents: usize,
    segments: Vec<(Vec<Vec3>, Vec<f64>)>,
}

impl TrajectoryFixture {
    pub fn new(agents: usize, segments: Vec<(Vec<Vec3>, Vec<f64>)>) -> Result<Self> {
        if agents == 0 || segments.is_empty() {
            return Err(Error::invalid("fixture", "need at least one agent and one segment"));
        }
        for (t, (points, probs)) in segments.iter().enumerate() {
            if points.len() != agents || probs.len() != agents {
                return Err(Error::Shape(format!("segment {t}: expected {agents} predictions")));
            }
            // reuse the prediction-set checks on a one-step trajectory
            PredictionSet::new(points.iter().map(|p| vec![*p]).collect(), probs.clone())?;
        }
        Ok(Self { agents, segments })
    }

    /// A seeded random walk with Dirichlet-like sorted probabilities.
    pub fn generate(segments: usize, agents: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centres: Vec<(f64, f64)> = (0..agents)
            .map(|_| (rng.random_range(-40.0..40.0), rng.random_range(-180.0..180.0)))
            .collect();
        let mut out = Vec::with_capacity(segments);
        for _ in 0..segments {
            let mut weights: Vec<f64> = (0..agents).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = weights.iter().sum::<f64>() * rng.random_range(1.0..1.25);
            weights.iter_mut().for_each(|w| *w /= total);
            weights.sort_by(|a, b| b.total_cmp(a));
            let points = centres
                .iter_mut()
                .map(|(lat, lon)| {
                    *lat = (*lat + rng.random_range(-5.0..5.0)).clamp(-80.0, 80.0);
                    *lon += rng.random_range(-15.0..15.0);
                    Vec3::from_lat_lon_deg(*lat, *lon)
                })
                .collect();
            out.push((points, weights));
        }
        Self::new(agents, out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ctx = path.display().to_string();
        let mut records = text::read_records(path)?.into_iter();
        let (line, header) = records
            .next()
            .ok_or_else(|| Error::parse(&ctx, 0, "empty fixture"))?;
        let dims: Vec<usize> = text::parse_tokens(&ctx, line, &header, Some(2))?;
        let (f, agents) = (dims[0], dims[1]);
        let mut segments = Vec::with_capacity(f);
        for t in 0..f {
            let mut points = Vec::with_capacity(agents);
            let mut probs = Vec::with_capacity(agents);
            for _ in 0..agents {
                let (line, tokens) = records
                    .next()
                    .ok_or_else(|| Error::parse(&ctx, 0, format!("segment {t} is incomplete")))?;
                let v: Vec<f64> = text::parse_tokens(&ctx, line, &tokens, Some(4))?;
                let p = Vec3::new(v[1], v[2], v[3]);
                if (p.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::parse(&ctx, line, "viewpoint is not a unit vector"));
                }
                probs.push(v[0]);
                points.push(p.normalized());
            }
            segments.push((points, probs));
        }
        if let Some((line, _)) = records.next() {
            return Err(Error::parse(&ctx, line, "trailing records after the last segment"));
        }
        Self::new(agents, segments)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# segments agents, then per segment: prob x y z\n{} {}\n", self.segments.len(), self.agents);
        for (points, probs) in &self.segments {
            for (p, w) in points.iter().zip(probs) {
                let _ = writeln!(out, "{w} {} {} {}", p.x, p.y, p.z);
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        text::write_file(path.as_ref(), &self.to_text())
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment(&self, t: usize) -> (&[Vec3], &[f64]) {
        let (p, w) = &self.segments[t];
        (p, w)
    }
}

/// Source of the per-segment viewport predictions.
#[derive(Debug, Clone)]
pub enum Predictor {
    /// Replays a fixture file.
    OracleLog(Arc<TrajectoryFixture>),
    /// Repeats the last viewpoint of a head-movement log.
    Baseline { log: Arc<ViewpointLog> },
    /// Runs an attention model on the log history; `frames[t]` holds the
    /// feature grid shown at segment t (zeros when absent).
    Model {
        model: Arc<AttentionModel>,
        codebook: Arc<Codebook>,
        log: Arc<ViewpointLog>,
        frames: Arc<Vec<FeatureGrid>>,
    },
}

impl Predictor {
    fn predict(&self, t: usize, agents: usize, dt: f64) -> Result<(Vec<Vec3>, Vec<f64>)> {
        // the viewpoint starts in the centre of the frame
        let centre = Vec3::from_lat_lon_deg(0.0, 0.0);
        match self {
            Predictor::OracleLog(fixture) => {
                if t >= fixture.len() {
                    return Err(Error::OutOfRange {
                        what: "fixture segment",
                        index: t,
                        limit: fixture.len(),
                    });
                }
                let (p, w) = fixture.segment(t);
                Ok((p.to_vec(), w.to_vec()))
            }
            Predictor::Baseline { log } => {
                let history = if t == 0 {
                    vec![centre]
                } else {
                    log.history_before(t as f64 * dt, 1)
                };
                let set = baseline_predict(&history, 1, agents)?;
                Ok((set.first_points(), set.probabilities().to_vec()))
            }
            Predictor::Model {
                model,
                codebook,
                log,
                frames,
            } => {
                let cfg = model.config();
                let history: Vec<usize> = if t == 0 {
                    vec![codebook.quantize(centre); cfg.history]
                } else {
                    let mut h: Vec<usize> = log
                        .history_before(t as f64 * dt, cfg.history)
                        .into_iter()
                        .map(|p| codebook.quantize(p))
                        .collect();
                    while h.len() < cfg.history {
                        h.insert(0, h[0]);
                    }
                    h
                };
                let window: Vec<FeatureGrid> = (0..cfg.frames)
                    .map(|j| {
                        (t + j + 1)
                            .checked_sub(cfg.frames)
                            .and_then(|idx| frames.get(idx))
                            .cloned()
                            .unwrap_or_else(|| FeatureGrid::zeros(cfg.frame_height, cfg.frame_width, cfg.channels))
                    })
                    .collect();
                let set = model.predict(&window, &history, agents, codebook)?;
                Ok((set.first_points(), set.probabilities().to_vec()))
            }
        }
    }
}

/// Environment configuration.
#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub manifest: Arc<VideoManifest>,
    pub trace: Arc<NetworkTrace>,
    pub weights: QoEWeights,
    /// Number of agents (I).
    pub agents: usize,
    /// History length k of the download-time and throughput observations.
    pub history_len: usize,
    pub max_buffer_s: f64,
    pub fov: Fov,
    pub predictor: Predictor,
    /// Start each episode at a seeded random point of the trace instead of
    /// time zero.
    pub random_trace_start: bool,
    pub seed: u64,
    /// Keep the sign of quality differences in the variation terms.
    pub signed_variation: bool,
}

impl EnvConfig {
    pub fn new(manifest: Arc<VideoManifest>, trace: Arc<NetworkTrace>, predictor: Predictor) -> Self {
        Self {
            manifest,
            trace,
            weights: QoEWeights::BASELINE,
            agents: 3,
            history_len: 8,
            max_buffer_s: 60.0,
            fov: Fov::default(),
            predictor,
            random_trace_start: false,
            seed: 0,
            signed_variation: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 {
            return Err(Error::invalid("agents", "at least one agent required"));
        }
        if self.history_len == 0 {
            return Err(Error::invalid("history_len", "k must be >= 1"));
        }
        if !(self.max_buffer_s > self.manifest.segment_duration_s()) {
            return Err(Error::invalid("max_buffer_s", "buffer cap must exceed the segment duration"));
        }
        Fov::new(self.fov.horizontal_deg, self.fov.vertical_deg)?;
        if let Predictor::OracleLog(f) = &self.predictor {
            if f.agents() != self.agents {
                return Err(Error::Config(format!(
                    "fixture has {} predictions per segment, env has {} agents",
                    f.agents(),
                    self.agents
                )));
            }
            if f.len() < self.manifest.segments() {
                return Err(Error::Config(format!(
                    "fixture covers {} segments, video has {}",
                    f.len(),
                    self.manifest.segments()
                )));
            }
        }
        Ok(())
    }

    /// Length of one agent observation: `2k + 2N + 3`.
    pub fn observation_len(&self) -> usize {
        2 * self.history_len + 2 * self.manifest.num_rungs() + 3
    }
}

/// One agent's local view in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Last k download times in seconds, oldest first, zero padded.
    pub download_times: Vec<f64>,
    /// Last k measured throughputs in Mbps.
    pub throughputs: Vec<f64>,
    /// Size of this agent's region in the next segment at every rung (Mb).
    pub region_sizes: Vec<f64>,
    pub probability: f64,
    pub remaining_segments: usize,
    pub last_rung: Option<usize>,
    pub buffer_s: f64,
}

impl Observation {
    /// Flat normalised vector: times /10 s, throughputs /100 Mbps, sizes
    /// /10 Mb, remaining /F, one-hot last rung, buffer /10 s.
    pub fn to_vector(&self, total_segments: usize) -> Vec<f64> {
        let n = self.region_sizes.len();
        let mut v = Vec::with_capacity(2 * self.download_times.len() + 2 * n + 3);
        v.extend(self.download_times.iter().map(|x| x / 10.0));
        v.extend(self.throughputs.iter().map(|x| x / 100.0));
        v.extend(self.region_sizes.iter().map(|x| x / 10.0));
        v.push(self.probability);
        v.push(self.remaining_segments as f64 / total_segments as f64);
        v.extend((0..n).map(|r| if self.last_rung == Some(r) { 1.0 } else { 0.0 }));
        v.push(self.buffer_s / 10.0);
        v
    }
}

/// One row of the episode log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub segment: usize,
    pub actions: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub qualities: Vec<f64>,
    pub qoe: QoEBreakdown,
    pub buffer_s: f64,
    pub download_s: f64,
    pub clock_s: f64,
}

/// The per-segment rows of one episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub records: Vec<StepRecord>,
}

impl EpisodeLog {
    pub fn header(agents: usize) -> String {
        let mut h = String::from("segment");
        for prefix in ["action", "psi", "q"] {
            for i in 1..=agents {
                let _ = write!(h, " {prefix}_{i}");
            }
        }
        h.push_str(" viewport_quality temporal_variation spatial_variation rebuffer_s qoe buffer_s download_s clock_s");
        h
    }

    pub fn to_text(&self) -> String {
        let agents = self.records.first().map_or(0, |r| r.actions.len());
        let mut out = format!("# {}\n", Self::header(agents));
        for r in &self.records {
            let _ = write!(out, "{}", r.segment);
            for a in &r.actions {
                let _ = write!(out, " {a}");
            }
            for x in r.probabilities.iter().chain(&r.qualities) {
                let _ = write!(out, " {x}");
            }
            let q = &r.qoe;
            let _ = writeln!(
                out,
                " {} {} {} {} {} {} {} {}",
                q.viewport_quality,
                q.temporal_variation,
                q.spatial_variation,
                q.rebuffer_s,
                q.total,
                r.buffer_s,
                r.download_s,
                r.clock_s
            );
        }
        out
    }

    /// Parses [`EpisodeLog::to_text`] output.
    pub fn parse(text_in: &str, agents: usize) -> Result<Self> {
        let mut records = Vec::new();
        for (line, tokens) in text::records(text_in) {
            let v: Vec<f64> = text::parse_tokens("episode log", line, &tokens, Some(1 + 3 * agents + 8))?;
            let take = |from: usize| v[from..from + agents].to_vec();
            let tail = &v[1 + 3 * agents..];
            records.push(StepRecord {
                segment: v[0] as usize,
                actions: take(1).into_iter().map(|a| a as usize).collect(),
                probabilities: take(1 + agents),
                qualities: take(1 + 2 * agents),
                qoe: QoEBreakdown {
                    viewport_quality: tail[0],
                    temporal_variation: tail[1],
                    spatial_variation: tail[2],
                    rebuffer_s: tail[3],
                    total: tail[4],
                },
                buffer_s: tail[5],
                download_s: tail[6],
                clock_s: tail[7],
            });
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        text::write_file(path.as_ref(), &self.to_text())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean QoE total over the episode's segments.
    pub fn mean_qoe(&self) -> f64 {
        self.mean_breakdown().total
    }

    /// Per-term means over the episode's segments.
    pub fn mean_breakdown(&self) -> QoEBreakdown {
        let n = self.records.len().max(1) as f64;
        let mut m = QoEBreakdown::default();
        for r in &self.records {
            m.viewport_quality += r.qoe.viewport_quality / n;
            m.temporal_variation += r.qoe.temporal_variation / n;
            m.spatial_variation += r.qoe.spatial_variation / n;
            m.rebuffer_s += r.qoe.rebuffer_s / n;
            m.total += r.qoe.total / n;
        }
        m
    }

    pub fn freeze_frequency(&self) -> f64 {
        freeze_frequency(self)
    }
}

/// Fraction of segments whose download stalled playback.
pub fn freeze_frequency(log: &EpisodeLog) -> f64 {
    if log.records.is_empty() {
        return 0.0;
    }
    let stalls = log.records.iter().filter(|r| r.qoe.rebuffer_s > 0.0).count();
    stalls as f64 / log.records.len() as f64
}

/// Result of one joint step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Normalised observations for the next decision (the final observation
    /// when `done`).
    pub observations: Vec<Vec<f64>>,
    /// Shared team reward: the segment's QoE total.
    pub reward: f64,
    pub breakdown: QoEBreakdown,
    /// Each agent's share of the reward (informational).
    pub local_rewards: Vec<f64>,
    pub done: bool,
}

/// The streaming environment. Cloning snapshots the full state.
#[derive(Debug, Clone)]
pub struct StreamingEnv {
    config: EnvConfig,
    segment: usize,
    buffer_s: f64,
    clock_s: f64,
    last_rungs: Option<Vec<usize>>,
    last_qualities: Option<Vec<f64>>,
    download_history: Vec<f64>,
    throughput_history: Vec<f64>,
    assignment: RegionAssignment,
    rebuffer_events: usize,
    episode: u64,
    log: EpisodeLog,
}

impl StreamingEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let k = config.history_len;
        let mut env = Self {
            assignment: RegionAssignment {
                segment: 0,
                regions: Vec::new(),
                probabilities: Vec::new(),
                rest: Vec::new(),
            },
            config,
            segment: 0,
            buffer_s: 0.0,
            clock_s: 0.0,
            last_rungs: None,
            last_qualities: None,
            download_history: vec![0.0; k],
            throughput_history: vec![0.0; k],
            rebuffer_events: 0,
            episode: 0,
            log: EpisodeLog::default(),
        };
        env.reset()?;
        Ok(env)
    }

    /// Starts a new episode and returns the initial observations.
    pub fn reset(&mut self) -> Result<Vec<Vec<f64>>> {
        let k = self.config.history_len;
        self.segment = 0;
        self.buffer_s = 0.0;
        self.clock_s = if self.config.random_trace_start && self.config.trace.period().is_finite() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(self.episode));
            rng.random_range(0.0..self.config.trace.period())
        } else {
            0.0
        };
        self.episode += 1;
        self.last_rungs = None;
        self.last_qualities = None;
        self.download_history = vec![0.0; k];
        self.throughput_history = vec![0.0; k];
        self.rebuffer_events = 0;
        self.log = EpisodeLog::default();
        self.assignment = self.partition(0)?;
        Ok(self.observation_vectors())
    }

    fn partition(&self, t: usize) -> Result<RegionAssignment> {
        let dt = self.config.manifest.segment_duration_s();
        let (points, probs) = self.config.predictor.predict(t, self.config.agents, dt)?;
        region::partition_points(&points, &probs, self.config.manifest.grid(), self.config.fov, t)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn manifest(&self) -> &VideoManifest {
        &self.config.manifest
    }

    pub fn num_agents(&self) -> usize {
        self.config.agents
    }

    pub fn num_rungs(&self) -> usize {
        self.config.manifest.num_rungs()
    }

    pub fn total_segments(&self) -> usize {
        self.config.manifest.segments()
    }

    pub fn segment(&self) -> usize {
        self.segment
    }

    pub fn is_done(&self) -> bool {
        self.segment >= self.total_segments()
    }

    pub fn buffer_s(&self) -> f64 {
        self.buffer_s
    }

    pub fn clock_s(&self) -> f64 {
        self.clock_s
    }

    pub fn rebuffer_events(&self) -> usize {
        self.rebuffer_events
    }

    /// Last k download times, oldest first.
    pub fn download_history(&self) -> &[f64] {
        &self.download_history
    }

    /// Last k measured throughputs, oldest first (zero padded at the start).
    pub fn throughput_history(&self) -> &[f64] {
        &self.throughput_history
    }

    pub fn last_qualities(&self) -> Option<&[f64]> {
        self.last_qualities.as_deref()
    }

    /// Region partition of the segment about to be downloaded.
    pub fn assignment(&self) -> &RegionAssignment {
        &self.assignment
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    /// Current per-agent observations in physical units.
    pub fn observe(&self) -> Vec<Observation> {
        let t = self.segment.min(self.total_segments() - 1);
        let n = self.num_rungs();
        (0..self.config.agents)
            .map(|i| Observation {
                download_times: self.download_history.clone(),
                throughputs: self.throughput_history.clone(),
                region_sizes: (0..n)
                    .map(|r| {
                        self.config
                            .manifest
                            .region_size(t, &self.assignment.regions[i], r)
                            .expect("segment and rungs in range")
                    })
                    .collect(),
                probability: self.assignment.probabilities[i],
                remaining_segments: self.total_segments() - self.segment,
                last_rung: self.last_rungs.as_ref().map(|l| l[i]),
                buffer_s: self.buffer_s,
            })
            .collect()
    }

    pub fn observation_vectors(&self) -> Vec<Vec<f64>> {
        let f = self.total_segments();
        self.observe().iter().map(|o| o.to_vector(f)).collect()
    }

    /// Concatenation of all agents' observations.
    pub fn global_state(&self) -> Vec<f64> {
        self.observation_vectors().concat()
    }

    /// Joint step with rest-region tiles at the lowest rung.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        self.step_with_rest(actions, 0)
    }

    /// Joint step with an explicit rung for the rest region.
    pub fn step_with_rest(&mut self, actions: &[usize], rest_rung: usize) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::EpisodeDone);
        }
        let n = self.num_rungs();
        if actions.len() != self.config.agents {
            return Err(Error::Shape(format!(
                "{} actions for {} agents",
                actions.len(),
                self.config.agents
            )));
        }
        if let Some(&bad) = actions.iter().chain([&rest_rung]).find(|&&a| a >= n) {
            return Err(Error::OutOfRange {
                what: "action",
                index: bad,
                limit: n,
            });
        }
        let manifest = &self.config.manifest;
        let t = self.segment;
        let dt = manifest.segment_duration_s();
        let rungs = self.assignment.tile_rungs(manifest.num_tiles(), actions, rest_rung);
        let size = manifest.segment_size(t, &rungs)?;
        let download = self.config.trace.download_time(size, self.clock_s);
        let rebuffer = qoe::rebuffer_time(download, self.buffer_s, dt);
        let throughput = if download > 0.0 {
            size / download
        } else {
            self.config.trace.throughput_at(self.clock_s)
        };
        let qualities: Vec<f64> = actions.iter().map(|&a| manifest.ladder()[a]).collect();
        let inputs = QoEInputs {
            probabilities: self.assignment.probabilities.clone(),
            qualities: qualities.clone(),
            previous: self.last_qualities.clone(),
            rebuffer_s: rebuffer,
        };
        let signed = self.config.signed_variation;
        let breakdown = qoe::qoe_total(&self.config.weights, &inputs, signed)?;
        let local_rewards = (0..self.config.agents)
            .map(|i| qoe::local_reward(&self.config.weights, &inputs, i, signed))
            .collect::<Result<Vec<f64>>>()?;

        self.clock_s += download + rebuffer;
        self.buffer_s = ((self.buffer_s - download).max(0.0) + dt).min(self.config.max_buffer_s);
        if rebuffer > 0.0 {
            self.rebuffer_events += 1;
        }
        push_history(&mut self.download_history, download);
        push_history(&mut self.throughput_history, throughput);
        self.log.records.push(StepRecord {
            segment: t,
            actions: actions.to_vec(),
            probabilities: self.assignment.probabilities.clone(),
            qualities: qualities.clone(),
            qoe: breakdown,
            buffer_s: self.buffer_s,
            download_s: download,
            clock_s: self.clock_s,
        });
        self.last_rungs = Some(actions.to_vec());
        self.last_qualities = Some(qualities);
        self.segment += 1;
        if !self.is_done() {
            self.assignment = self.partition(self.segment)?;
        }
        Ok(StepOutcome {
            observations: self.observation_vectors(),
            reward: breakdown.total,
            breakdown,
            local_rewards,
            done: self.is_done(),
        })
    }
}

fn push_history(history: &mut [f64], value: f64) {
    history.rotate_left(1);
    if let Some(last) = history.last_mut() {
        *last = value;
    }
}

/// Download time of `size_mb` megabits on `trace` starting at `start_s`.
pub fn download_time(size_mb: f64, trace: &NetworkTrace, start_s: f64) -> f64 {
    trace.download_time(size_mb, start_s)
}

/// Enumerates every joint action of `agents` agents over `rungs` rungs in
/// lexicographic order.
pub fn joint_actions(agents: usize, rungs: usize) -> Vec<Vec<usize>> {
    let total = rungs.pow(agents as u32);
    (0..total)
        .map(|mut code| {
            let mut a = vec![0; agents];
            for slot in a.iter_mut().rev() {
                *slot = code % rungs;
                code /= rungs;
            }
            a
        })
        .collect()
}

/// Plays an episode choosing, at every segment, the joint action with the
/// highest immediate reward (exhaustive search; ties to the first in
/// lexicographic order). Returns the episode log.
pub fn greedy_rollout(env: &mut StreamingEnv) -> Result<EpisodeLog> {
    env.reset()?;
    let candidates = joint_actions(env.num_agents(), env.num_rungs());
    while !env.is_done() {
        let mut best: Option<(f64, &Vec<usize>)> = None;
        for a in &candidates {
            let r = env.clone().step(a)?.reward;
            if best.is_none_or(|(b, _)| r > b) {
                best = Some((r, a));
            }
        }
        let (_, a) = best.expect("at least one joint action");
        env.step(&a.clone())?;
    }
    Ok(env.log().clone())
}

/// A joint bitrate decision: one rung per agent plus the rest-region rung.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub actions: Vec<usize>,
    pub rest_rung: usize,
}

impl Decision {
    pub fn regions(actions: Vec<usize>) -> Self {
        Self {
            actions,
            rest_rung: 0,
        }
    }
}

/// Anything that picks rungs from the environment state.
pub trait AbrPolicy {
    fn name(&self) -> &str;
    fn decide(&mut self, env: &StreamingEnv) -> Result<Decision>;
}

/// Resets `env`, plays one episode with `policy` and returns its log.
pub fn run_episode(env: &mut StreamingEnv, policy: &mut dyn AbrPolicy) -> Result<EpisodeLog> {
    env.reset()?;
    while !env.is_done() {
        let d = policy.decide(env)?;
        env.step_with_rest(&d.actions, d.rest_rung)?;
    }
    Ok(env.log().clone())
}

/// Uniformly random rungs for every region.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl AbrPolicy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, env: &StreamingEnv) -> Result<Decision> {
        let n = env.num_rungs();
        Ok(Decision::regions(
            (0..env.num_agents()).map(|_| self.rng.random_range(0..n)).collect(),
        ))
    }
}
