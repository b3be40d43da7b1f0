//! Batch experiments: configuration, the seeded train/test trace split,
//! `run`, `sweep`, `report` and synthetic fixture generation.
//!
//! Output layout of `run` under the output directory:
//!
//! ```text
//! <policy>/summary.tsv        rep rows, then mean and std rows
//! <policy>/summary.json
//! <policy>/rep<r>/episodes/<trace>.log
//! <policy>/rep<r>/curve.tsv   learned policies only
//! <policy>/rep<r>/checkpoint.{idx,bin}
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionModel};
use crate::baselines::{BaselineConfig, RuleKind, RulePolicy};
use crate::env::{self, AbrPolicy, EnvConfig, EpisodeLog, Predictor, RandomPolicy, StreamingEnv, TrajectoryFixture};
use crate::error::{Error, Result};
use crate::madrl::{curve_to_text, CriticMode, MultiAgentPpo, TrainConfig};
use crate::media::{NetworkTrace, VideoManifest, ViewpointLog, DEFAULT_LADDER};
use crate::qoe::QoEWeights;
use crate::region::Fov;
use crate::sphere::{synthetic_walk, Codebook, WalkConfig};
use crate::text;

/// Policies an experiment can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Mappo,
    Ippo,
    Bb,
    Rb,
    Mpc,
    Dynamic,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Mappo,
        PolicyKind::Ippo,
        PolicyKind::Bb,
        PolicyKind::Rb,
        PolicyKind::Mpc,
        PolicyKind::Dynamic,
        PolicyKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Mappo => "mappo",
            PolicyKind::Ippo => "ippo",
            PolicyKind::Bb => "bb",
            PolicyKind::Rb => "rb",
            PolicyKind::Mpc => "mpc",
            PolicyKind::Dynamic => "dynamic",
            PolicyKind::Random => "random",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, PolicyKind::Mappo | PolicyKind::Ippo)
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub policy: PolicyKind,
    /// QoE preset, e.g. `(1,1,1,1)` or `rebuffer`.
    pub objective: String,
    pub repetitions: usize,
    /// Fraction of traces used for training.
    pub split: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Mappo,
            objective: "(1,1,1,1)".into(),
            repetitions: 1,
            split: 0.8,
            seed: 0,
            out: PathBuf::from("results"),
        }
    }
}

/// Either a manifest file or the parameters of a generated one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoSection {
    pub manifest: Option<PathBuf>,
    pub rows: usize,
    pub cols: usize,
    pub segments: usize,
    pub duration_s: f64,
    pub ladder: Vec<f64>,
    pub seed: u64,
}

impl Default for VideoSection {
    fn default() -> Self {
        Self {
            manifest: None,
            rows: 6,
            cols: 12,
            segments: 60,
            duration_s: 1.0,
            ladder: DEFAULT_LADDER.to_vec(),
            seed: 0,
        }
    }
}

/// Trace files (a directory and/or explicit list) or synthetic traces when
/// neither is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    pub dir: Option<PathBuf>,
    pub files: Vec<PathBuf>,
    pub synthetic_count: usize,
    pub synthetic_duration_s: usize,
    pub synthetic_mean_mbps: f64,
    pub offset_mbps: f64,
}

impl Default for TraceSection {
    fn default() -> Self {
        Self {
            dir: None,
            files: Vec::new(),
            synthetic_count: 10,
            synthetic_duration_s: 300,
            synthetic_mean_mbps: 15.0,
            offset_mbps: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    OracleLog,
    Baseline,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub kind: PredictorKind,
    /// Trajectory fixture for `oracle-log`; generated from `fixture_seed`
    /// when absent.
    pub fixture: Option<PathBuf>,
    pub fixture_seed: u64,
    /// Head-movement log for `baseline` and `model`; a synthetic walk when
    /// absent.
    pub log: Option<PathBuf>,
    /// Checkpoint stem and codebook for `model`.
    pub checkpoint: Option<PathBuf>,
    pub codebook: Option<PathBuf>,
    pub model: AttentionConfig,
}

impl Default for PredictorSection {
    fn default() -> Self {
        Self {
            kind: PredictorKind::OracleLog,
            fixture: None,
            fixture_seed: 0,
            log: None,
            checkpoint: None,
            codebook: None,
            model: AttentionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub agents: usize,
    pub history_len: usize,
    pub max_buffer_s: f64,
    pub fov_horizontal_deg: f64,
    pub fov_vertical_deg: f64,
    pub signed_variation: bool,
    pub random_trace_start: bool,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            agents: 3,
            history_len: 8,
            max_buffer_s: 60.0,
            fov_horizontal_deg: 100.0,
            fov_vertical_deg: 100.0,
            signed_variation: false,
            random_trace_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub clip_eps: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            clip_eps: vec![0.05, 0.2, 0.3, 0.5],
            lambda: vec![0.05, 0.5, 0.95, 0.99],
        }
    }
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub video: VideoSection,
    pub traces: TraceSection,
    pub predictor: PredictorSection,
    pub env: EnvSection,
    pub train: TrainConfig,
    pub baselines: BaselineConfig,
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    /// Parses TOML; relative paths are resolved against `base_dir`.
    pub fn from_toml(source: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(source).map_err(|e| Error::Config(e.message().to_owned()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        fix(&mut cfg.experiment.out);
        for p in [
            cfg.video.manifest.as_mut(),
            cfg.traces.dir.as_mut(),
            cfg.predictor.fixture.as_mut(),
            cfg.predictor.log.as_mut(),
            cfg.predictor.checkpoint.as_mut(),
            cfg.predictor.codebook.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        cfg.traces.files.iter_mut().for_each(fix);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&source, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if !(e.split > 0.0 && e.split < 1.0) {
            return Err(Error::Config("experiment.split must be in (0, 1)".into()));
        }
        if e.repetitions == 0 {
            return Err(Error::Config("experiment.repetitions must be >= 1".into()));
        }
        QoEWeights::from_preset(&e.objective)?;
        self.train.validate().map_err(|err| Error::Config(format!("train: {err}")))?;
        self.baselines.validate().map_err(|err| Error::Config(format!("baselines: {err}")))?;
        Ok(())
    }

    /// The training configuration with the mode implied by the policy.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            mode: if self.experiment.policy == PolicyKind::Ippo {
                CriticMode::Ippo
            } else {
                CriticMode::Mappo
            },
            seed,
            ..self.train.clone()
        }
    }
}

/// Loaded inputs of an experiment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Arc<VideoManifest>,
    /// `(name, trace)` sorted by name.
    pub traces: Vec<(String, Arc<NetworkTrace>)>,
    pub predictor: Predictor,
}

fn stem_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

impl Dataset {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let v = &cfg.video;
        let manifest = match &v.manifest {
            Some(p) => VideoManifest::load(p)?,
            None => VideoManifest::generate(v.rows, v.cols, v.segments, v.duration_s, &v.ladder, v.seed)?,
        };
        let t = &cfg.traces;
        let mut files = t.files.clone();
        if let Some(dir) = &t.dir {
            let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
            for entry in entries {
                let path = entry.map_err(|e| Error::io(dir, e))?.path();
                if path.is_file() {
                    files.push(path);
                }
            }
        }
        let mut traces = Vec::new();
        if files.is_empty() {
            for i in 0..t.synthetic_count {
                let trace = NetworkTrace::synthetic(t.synthetic_duration_s, t.synthetic_mean_mbps, i as u64)?
                    .with_offset(t.offset_mbps)?;
                traces.push((format!("synthetic_{i:03}"), Arc::new(trace)));
            }
        } else {
            for f in &files {
                traces.push((stem_name(f), Arc::new(NetworkTrace::load(f, t.offset_mbps)?)));
            }
        }
        traces.sort_by(|a, b| a.0.cmp(&b.0));
        if traces.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("trace names must be unique".into()));
        }
        let p = &cfg.predictor;
        let walk_log = || -> Result<Arc<ViewpointLog>> {
            Ok(Arc::new(match &p.log {
                Some(path) => ViewpointLog::load(path)?,
                None => synthetic_walk(
                    &WalkConfig {
                        duration_s: manifest.segments() as f64 * manifest.segment_duration_s() + 1.0,
                        ..WalkConfig::default()
                    },
                    p.fixture_seed,
                )?,
            }))
        };
        let predictor = match p.kind {
            PredictorKind::OracleLog => Predictor::OracleLog(Arc::new(match &p.fixture {
                Some(path) => TrajectoryFixture::load(path)?,
                None => TrajectoryFixture::generate(manifest.segments(), cfg.env.agents, p.fixture_seed)?,
            })),
            PredictorKind::Baseline => Predictor::Baseline { log: walk_log()? },
            PredictorKind::Model => {
                let (Some(ckpt), Some(cb)) = (&p.checkpoint, &p.codebook) else {
                    return Err(Error::Config("the model predictor needs `checkpoint` and `codebook`".into()));
                };
                let mut model = AttentionModel::new(p.model.clone(), 0)?;
                model.load_params(ckpt)?;
                Predictor::Model {
                    model: Arc::new(model),
                    codebook: Arc::new(Codebook::load(cb)?),
                    log: walk_log()?,
                    frames: Arc::new(Vec::new()),
                }
            }
        };
        Ok(Self {
            manifest: Arc::new(manifest),
            traces,
            predictor,
        })
    }

    /// An environment on trace `index`.
    pub fn env(&self, cfg: &ExperimentConfig, index: usize, seed: u64) -> Result<StreamingEnv> {
        let e = &cfg.env;
        let mut ec = EnvConfig::new(self.manifest.clone(), self.traces[index].1.clone(), self.predictor.clone());
        ec.weights = QoEWeights::from_preset(&cfg.experiment.objective)?;
        ec.agents = e.agents;
        ec.history_len = e.history_len;
        ec.max_buffer_s = e.max_buffer_s;
        ec.fov = Fov::new(e.fov_horizontal_deg, e.fov_vertical_deg)?;
        ec.signed_variation = e.signed_variation;
        ec.random_trace_start = e.random_trace_start;
        ec.seed = seed;
        StreamingEnv::new(ec)
    }
}

/// Seeded disjoint split of `n` traces into sorted (train, test) index sets.
pub fn split_traces(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Config("at least two traces are needed for a train/test split".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// One row of a summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub mean_qoe: f64,
    pub viewport_quality: f64,
    pub temporal_variation: f64,
    pub spatial_variation: f64,
    pub rebuffer_s: f64,
    pub freeze_frequency: f64,
}

impl SummaryRow {
    fn values(&self) -> [f64; 6] {
        [
            self.mean_qoe,
            self.viewport_quality,
            self.temporal_variation,
            self.spatial_variation,
            self.rebuffer_s,
            self.freeze_frequency,
        ]
    }

    fn from_values(label: String, v: [f64; 6]) -> Self {
        Self {
            label,
            mean_qoe: v[0],
            viewport_quality: v[1],
            temporal_variation: v[2],
            spatial_variation: v[3],
            rebuffer_s: v[4],
            freeze_frequency: v[5],
        }
    }

    /// Episode-weighted means over a set of episode logs.
    pub fn from_logs(label: impl Into<String>, logs: &[EpisodeLog]) -> Self {
        let n = logs.len().max(1) as f64;
        let mut acc = [0.0; 6];
        for log in logs {
            let m = log.mean_breakdown();
            let v = [
                m.total,
                m.viewport_quality,
                m.temporal_variation,
                m.spatial_variation,
                m.rebuffer_s,
                log.freeze_frequency(),
            ];
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        Self::from_values(label.into(), acc.map(|a| a / n))
    }
}

/// Per-repetition rows followed by `mean` and `std` (sample standard
/// deviation, 0 for a single repetition).
pub fn aggregate_rows(reps: &[SummaryRow]) -> Vec<SummaryRow> {
    let n = reps.len() as f64;
    let mut mean = [0.0; 6];
    for r in reps {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v / n;
        }
    }
    let mut var = [0.0; 6];
    if reps.len() > 1 {
        for r in reps {
            for ((s, v), m) in var.iter_mut().zip(r.values()).zip(mean) {
                *s += (v - m) * (v - m) / (n - 1.0);
            }
        }
    }
    let mut rows = reps.to_vec();
    rows.push(SummaryRow::from_values("mean".into(), mean));
    rows.push(SummaryRow::from_values("std".into(), var.map(f64::sqrt)));
    rows
}

pub fn summary_to_tsv(policy: &str, rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "policy\trep\tmean_qoe\tviewport_quality\ttemporal_variation\tspatial_variation\trebuffer_s\tfreeze_freq\n",
    );
    for r in rows {
        let _ = write!(out, "{policy}\t{}", r.label);
        for v in r.values() {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

/// Result of [`run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: PolicyKind,
    pub objective: String,
    pub seed: u64,
    pub train_traces: Vec<String>,
    pub test_traces: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    text::write_file(path, &s)
}

fn build_rule(kind: PolicyKind, cfg: &BaselineConfig) -> Result<RulePolicy> {
    let k = match kind {
        PolicyKind::Bb => RuleKind::Bb,
        PolicyKind::Rb => RuleKind::Rb,
        PolicyKind::Mpc => RuleKind::Mpc,
        PolicyKind::Dynamic => RuleKind::Dynamic,
        other => return Err(Error::Config(format!("{} is not a rule-based policy", other.name()))),
    };
    RulePolicy::new(k, cfg.clone())
}

/// Trains (learned policies) and evaluates one repetition. Returns the test
/// episode logs in test-trace order.
fn run_repetition(
    cfg: &ExperimentConfig,
    data: &Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
    seed: u64,
    train_cfg: TrainConfig,
    rep_dir: &Path,
    curve_name: &str,
) -> Result<Vec<EpisodeLog>> {
    let mut test_envs = test_idx
        .iter()
        .map(|&i| data.env(cfg, i, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut policy: Box<dyn AbrPolicy> = match cfg.experiment.policy {
        PolicyKind::Mappo | PolicyKind::Ippo => {
            let mut train_envs = train_idx
                .iter()
                .map(|&i| data.env(cfg, i, seed))
                .collect::<Result<Vec<_>>>()?;
            let mut selection: Vec<StreamingEnv> = train_envs.iter().take(4).cloned().collect();
            let mut agent = MultiAgentPpo::for_env(train_cfg, &train_envs[0])?;
            let report = agent.train(&mut train_envs, &mut selection, None, Some(&rep_dir.join("checkpoint")))?;
            text::write_file(&rep_dir.join(curve_name), &curve_to_text(&report.curve))?;
            Box::new(agent)
        }
        PolicyKind::Random => Box::new(RandomPolicy::new(seed)),
        kind => Box::new(build_rule(kind, &cfg.baselines)?),
    };
    test_envs
        .iter_mut()
        .map(|env| env::run_episode(env, policy.as_mut()))
        .collect()
}

/// Runs every repetition of the configured policy and writes the result
/// bundle under `<out>/<policy>/`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let data = Dataset::load(cfg)?;
    let (train_idx, test_idx) = split_traces(data.traces.len(), cfg.experiment.split, cfg.experiment.seed)?;
    let policy = cfg.experiment.policy;
    let dir = cfg.experiment.out.join(policy.name());
    let mut reps = Vec::with_capacity(cfg.experiment.repetitions);
    for rep in 0..cfg.experiment.repetitions {
        let seed = cfg.experiment.seed.wrapping_add(rep as u64);
        let rep_dir = dir.join(format!("rep{rep}"));
        let logs = run_repetition(cfg, &data, &train_idx, &test_idx, seed, cfg.train_config(seed), &rep_dir, "curve.tsv")?;
        for (&i, log) in test_idx.iter().zip(&logs) {
            log.save(rep_dir.join("episodes").join(format!("{}.log", data.traces[i].0)))?;
        }
        reps.push(SummaryRow::from_logs(rep.to_string(), &logs));
    }
    let rows = aggregate_rows(&reps);
    text::write_file(&dir.join("summary.tsv"), &summary_to_tsv(policy.name(), &rows))?;
    let names = |idx: &[usize]| idx.iter().map(|&i| data.traces[i].0.clone()).collect::<Vec<_>>();
    let summary = RunSummary {
        policy,
        objective: cfg.experiment.objective.clone(),
        seed: cfg.experiment.seed,
        train_traces: names(&train_idx),
        test_traces: names(&test_idx),
        rows,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// One cell of a hyperparameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub clip_eps: f64,
    pub lambda: f64,
    pub curve_file: String,
    pub eval: SummaryRow,
}

pub fn sweep_curve_name(clip_eps: f64, lambda: f64) -> String {
    format!("curve_eps{clip_eps}_lambda{lambda}.tsv")
}

/// Trains one model per (clip_eps, lambda) cell with the first repetition's
/// seed and evaluates all of them on the same test traces. Writes curve
/// files, `sweep.tsv` and `eval_traces.txt` under `<out>/sweep/`.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepCell>> {
    cfg.validate()?;
    if !cfg.experiment.policy.is_learned() {
        return Err(Error::Config("sweeps need a learned policy (mappo or ippo)".into()));
    }
    let (eps_set, lambda_set) = (&cfg.sweep.clip_eps, &cfg.sweep.lambda);
    if eps_set.is_empty() || lambda_set.is_empty() {
        return Err(Error::Config("sweep.clip_eps and sweep.lambda must be non-empty".into()));
    }
    let data = Dataset::load(cfg)?;
    let (train_idx, test_idx) = split_traces(data.traces.len(), cfg.experiment.split, cfg.experiment.seed)?;
    let dir = cfg.experiment.out.join("sweep");
    let eval_names: Vec<&str> = test_idx.iter().map(|&i| data.traces[i].0.as_str()).collect();
    text::write_file(&dir.join("eval_traces.txt"), &(eval_names.join("\n") + "\n"))?;
    let seed = cfg.experiment.seed;
    let mut cells = Vec::new();
    for &eps in eps_set {
        for &lambda in lambda_set {
            let tc = TrainConfig {
                clip_eps: eps,
                lambda,
                ..cfg.train_config(seed)
            };
            tc.validate().map_err(|e| Error::Config(format!("sweep cell: {e}")))?;
            let name = sweep_curve_name(eps, lambda);
            let cell_dir = dir.join(format!("eps{eps}_lambda{lambda}"));
            let logs = run_repetition(cfg, &data, &train_idx, &test_idx, seed, tc, &cell_dir, "curve.tsv")?;
            fs::copy(cell_dir.join("curve.tsv"), dir.join(&name)).map_err(|e| Error::io(dir.join(&name), e))?;
            cells.push(SweepCell {
                clip_eps: eps,
                lambda,
                curve_file: name,
                eval: SummaryRow::from_logs(format!("eps{eps}_lambda{lambda}"), &logs),
            });
        }
    }
    let mut tsv = String::from("clip_eps\tlambda\tmean_qoe\tfreeze_freq\tcurve\n");
    for c in &cells {
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}",
            c.clip_eps, c.lambda, c.eval.mean_qoe, c.eval.freeze_frequency, c.curve_file
        );
    }
    text::write_file(&dir.join("sweep.tsv"), &tsv)?;
    Ok(cells)
}

/// One policy in a comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub policy: String,
    pub normalized_qoe: f64,
    pub summary: SummaryRow,
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads every `*.log` episode log in `dir`, sorted by file name.
pub fn read_episode_logs(dir: &Path) -> Result<Vec<EpisodeLog>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "log") {
            files.push(p);
        }
    }
    files.sort();
    files
        .iter()
        .map(|f| {
            let s = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
            let width = text::records(&s).first().map_or(0, |(_, t)| t.len());
            if width < 12 || (width - 9) % 3 != 0 {
                return Err(Error::parse(f.display().to_string(), 0, "not an episode log"));
            }
            EpisodeLog::parse(&s, (width - 9) / 3)
        })
        .collect()
}

/// Folds the per-episode logs of every policy directory under `dir` into a
/// comparison table normalised so the best mean QoE is 1.0. Writes
/// `report.tsv` and `report.json` into `dir`.
pub fn report(dir: &Path) -> Result<Vec<ReportRow>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("result directory {} does not exist", dir.display())));
    }
    let mut rows = Vec::new();
    for policy_dir in sorted_dirs(dir)? {
        let mut reps = Vec::new();
        for rep_dir in sorted_dirs(&policy_dir)? {
            let name = rep_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let Some(label) = name.strip_prefix("rep") else {
                continue;
            };
            let episodes = rep_dir.join("episodes");
            if !episodes.is_dir() {
                continue;
            }
            reps.push((label.parse::<usize>().unwrap_or(usize::MAX), label.to_owned(), read_episode_logs(&episodes)?));
        }
        if reps.is_empty() {
            continue;
        }
        reps.sort_by_key(|r| r.0);
        let rep_rows: Vec<SummaryRow> = reps.iter().map(|(_, l, logs)| SummaryRow::from_logs(l.clone(), logs)).collect();
        let mean = aggregate_rows(&rep_rows).swap_remove(rep_rows.len());
        let policy = policy_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        rows.push(ReportRow {
            policy,
            normalized_qoe: 0.0,
            summary: mean,
        });
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("no result bundles under {}", dir.display())));
    }
    let best = rows.iter().map(|r| r.summary.mean_qoe).fold(f64::NEG_INFINITY, f64::max);
    if !(best > 0.0) {
        return Err(Error::invalid("report", format!("best mean QoE {best} is not positive; cannot normalise")));
    }
    for r in &mut rows {
        r.normalized_qoe = r.summary.mean_qoe / best;
    }
    let mut tsv = String::from(
        "policy\tmean_qoe\tnormalized_qoe\tviewport_quality\ttemporal_variation\tspatial_variation\trebuffer_s\tfreeze_freq\n",
    );
    for r in &rows {
        let s = &r.summary;
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.policy,
            s.mean_qoe,
            r.normalized_qoe,
            s.viewport_quality,
            s.temporal_variation,
            s.spatial_variation,
            s.rebuffer_s,
            s.freeze_frequency
        );
    }
    text::write_file(&dir.join("report.tsv"), &tsv)?;
    write_json(&dir.join("report.json"), &rows)?;
    Ok(rows)
}

/// Writes a synthetic dataset and a matching `experiment.toml` into `dir`:
/// a generated manifest, `traces/`, a trajectory fixture and a
/// head-movement log.
pub fn generate_fixtures(dir: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    let v = VideoSection::default();
    let manifest = VideoManifest::generate(v.rows, v.cols, v.segments, v.duration_s, &v.ladder, seed)?;
    let mut written = Vec::new();
    let path = dir.join("manifest.txt");
    manifest.save(&path)?;
    written.push(path);
    for i in 0..10u64 {
        let mean = [6.0, 10.0, 15.0, 25.0, 40.0][i as usize % 5];
        let trace = NetworkTrace::synthetic(300, mean, seed.wrapping_mul(1000).wrapping_add(i))?;
        let path = dir.join("traces").join(format!("trace_{i:03}.txt"));
        trace.save(&path)?;
        written.push(path);
    }
    let fixture = TrajectoryFixture::generate(v.segments, 3, seed)?;
    let path = dir.join("fixture.txt");
    fixture.save(&path)?;
    written.push(path);
    let log = synthetic_walk(
        &WalkConfig {
            duration_s: v.segments as f64 + 1.0,
            ..WalkConfig::default()
        },
        seed,
    )?;
    let path = dir.join("viewpoints.txt");
    log.save(&path)?;
    written.push(path);
    let config = format!(
        "[experiment]\npolicy = \"mappo\"\nobjective = \"(1,1,1,1)\"\nrepetitions = 1\nsplit = 0.8\nseed = {seed}\nout = \"results\"\n\n\
         [video]\nmanifest = \"manifest.txt\"\n\n[traces]\ndir = \"traces\"\n\n\
         [predictor]\nkind = \"oracle-log\"\nfixture = \"fixture.txt\"\n\n[train]\nepisodes = 200\n"
    );
    let path = dir.join("experiment.toml");
    text::write_file(&path, &config)?;
    written.push(path);
    Ok(written)
}
