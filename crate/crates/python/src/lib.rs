//! Python bindings: media types, QoE arithmetic, region partitioning, the
//! streaming environment, the rule-based and learned policies and the
//! experiment runner.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use panoabr::baselines::{self, BaselineConfig, RuleKind, RulePolicy};
use panoabr::env::{self as penv, AbrPolicy, EnvConfig, Predictor, TrajectoryFixture};
use panoabr::experiment::{self, ExperimentConfig};
use panoabr::madrl::{self, CriticMode, TrainConfig};
use panoabr::media;
use panoabr::qoe::{self, QoEBreakdown, QoEInputs, QoEWeights};
use panoabr::region::{self, Fov, TileGrid};
use panoabr::sphere::Vec3;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: panoabr::Error) -> PyErr {
    if e.is_config_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn breakdown_dict(b: &QoEBreakdown) -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("viewport_quality", b.viewport_quality),
        ("temporal_variation", b.temporal_variation),
        ("spatial_variation", b.spatial_variation),
        ("rebuffer_s", b.rebuffer_s),
        ("total", b.total),
    ])
}

fn weights(w: (f64, f64, f64, f64)) -> PyResult<QoEWeights> {
    QoEWeights::new(w.0, w.1, w.2, w.3).map_err(to_py)
}

#[pyclass(name = "VideoManifest", module = "panoabr_py", frozen)]
struct PyManifest {
    inner: Arc<media::VideoManifest>,
}

#[pymethods]
impl PyManifest {
    #[staticmethod]
    #[pyo3(signature = (rows=6, cols=12, segments=60, duration_s=1.0, ladder=None, seed=0))]
    fn generate(rows: usize, cols: usize, segments: usize, duration_s: f64, ladder: Option<Vec<f64>>, seed: u64) -> PyResult<Self> {
        let ladder = ladder.unwrap_or_else(|| media::DEFAULT_LADDER.to_vec());
        let m = media::VideoManifest::generate(rows, cols, segments, duration_s, &ladder, seed).map_err(to_py)?;
        Ok(Self { inner: Arc::new(m) })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(media::VideoManifest::load(path).map_err(to_py)?),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn num_tiles(&self) -> usize {
        self.inner.num_tiles()
    }

    #[getter]
    fn segments(&self) -> usize {
        self.inner.segments()
    }

    #[getter]
    fn ladder(&self) -> Vec<f64> {
        self.inner.ladder().to_vec()
    }

    fn tile_size(&self, segment: usize, tile: usize, rung: usize) -> PyResult<f64> {
        self.inner.tile_size(segment, tile, rung).map_err(to_py)
    }

    /// Megabits of segment `segment` with one rung per tile.
    fn segment_size(&self, segment: usize, rungs: Vec<usize>) -> PyResult<f64> {
        self.inner.segment_size(segment, &rungs).map_err(to_py)
    }
}

#[pyclass(name = "NetworkTrace", module = "panoabr_py", frozen)]
struct PyTrace {
    inner: Arc<media::NetworkTrace>,
}

#[pymethods]
impl PyTrace {
    #[new]
    #[pyo3(signature = (samples, offset_mbps=0.0))]
    fn new(samples: Vec<(f64, f64)>, offset_mbps: f64) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(media::NetworkTrace::new(samples, offset_mbps).map_err(to_py)?),
        })
    }

    #[staticmethod]
    fn constant(mbps: f64) -> PyResult<Self> {
        Self::new(vec![(0.0, mbps)], 0.0)
    }

    #[staticmethod]
    #[pyo3(signature = (duration_s, mean_mbps, seed=0))]
    fn synthetic(duration_s: usize, mean_mbps: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(media::NetworkTrace::synthetic(duration_s, mean_mbps, seed).map_err(to_py)?),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, offset_mbps=0.0))]
    fn load(path: PathBuf, offset_mbps: f64) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(media::NetworkTrace::load(path, offset_mbps).map_err(to_py)?),
        })
    }

    fn throughput_at(&self, time_s: f64) -> f64 {
        self.inner.throughput_at(time_s)
    }

    fn download_time(&self, size_mb: f64, start_s: f64) -> f64 {
        self.inner.download_time(size_mb, start_s)
    }
}

#[pyfunction]
#[pyo3(signature = (probabilities, qualities, previous=None, rebuffer_s=0.0, weights=(1.0, 1.0, 1.0, 1.0), signed_variation=false))]
fn qoe_total(
    probabilities: Vec<f64>,
    qualities: Vec<f64>,
    previous: Option<Vec<f64>>,
    rebuffer_s: f64,
    weights: (f64, f64, f64, f64),
    signed_variation: bool,
) -> PyResult<BTreeMap<&'static str, f64>> {
    let inputs = QoEInputs {
        probabilities,
        qualities,
        previous,
        rebuffer_s,
    };
    let b = qoe::qoe_total(&self::weights(weights)?, &inputs, signed_variation).map_err(to_py)?;
    Ok(breakdown_dict(&b))
}

#[pyfunction]
fn rebuffer_time(download_time_s: f64, buffer_s: f64, segment_duration_s: f64) -> f64 {
    qoe::rebuffer_time(download_time_s, buffer_s, segment_duration_s)
}

#[pyfunction]
fn qoe_preset(name: &str) -> PyResult<(f64, f64, f64, f64)> {
    let [a, b, c, d] = QoEWeights::from_preset(name).map_err(to_py)?.as_array();
    Ok((a, b, c, d))
}

#[pyfunction]
#[pyo3(signature = (rewards, values, bootstrap_value, gamma=0.99, lam=0.95))]
fn gae(rewards: Vec<f64>, values: Vec<f64>, bootstrap_value: f64, gamma: f64, lam: f64) -> PyResult<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(PyValueError::new_err("rewards and values must be aligned"));
    }
    Ok(madrl::gae(&rewards, &values, bootstrap_value, gamma, lam))
}

#[pyfunction]
#[pyo3(signature = (rewards, bootstrap_value, gamma=0.99))]
fn discounted_returns(rewards: Vec<f64>, bootstrap_value: f64, gamma: f64) -> Vec<f64> {
    madrl::discounted_returns(&rewards, bootstrap_value, gamma)
}

/// Mean clipped surrogate and its gradient with respect to each new
/// log-probability.
#[pyfunction]
fn ppo_clip_objective(new_log_probs: Vec<f64>, old_log_probs: Vec<f64>, advantages: Vec<f64>, eps: f64) -> PyResult<(f64, Vec<f64>)> {
    madrl::ppo_clip_objective(&new_log_probs, &old_log_probs, &advantages, eps).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (lat_deg, lon_deg, rows=6, cols=12, fov=(100.0, 100.0)))]
fn viewport_tiles(lat_deg: f64, lon_deg: f64, rows: usize, cols: usize, fov: (f64, f64)) -> PyResult<Vec<usize>> {
    let f = Fov::new(fov.0, fov.1).map_err(to_py)?;
    region::viewport_tiles(Vec3::from_lat_lon_deg(lat_deg, lon_deg), TileGrid::new(rows, cols), f).map_err(to_py)
}

/// Partitions tiles among viewpoints given as `(lat, lon)` degrees with
/// descending probabilities. Returns `(regions, rest)`.
#[pyfunction]
#[pyo3(signature = (viewpoints, probabilities, rows=6, cols=12, fov=(100.0, 100.0)))]
fn partition(
    viewpoints: Vec<(f64, f64)>,
    probabilities: Vec<f64>,
    rows: usize,
    cols: usize,
    fov: (f64, f64),
) -> PyResult<(Vec<Vec<usize>>, Vec<usize>)> {
    let points: Vec<Vec3> = viewpoints.iter().map(|&(la, lo)| Vec3::from_lat_lon_deg(la, lo)).collect();
    let f = Fov::new(fov.0, fov.1).map_err(to_py)?;
    let a = region::partition_points(&points, &probabilities, TileGrid::new(rows, cols), f, 0).map_err(to_py)?;
    Ok((a.regions, a.rest))
}

#[pyfunction]
#[pyo3(signature = (buffer_s, num_rungs=6, low_s=5.0, high_s=15.0))]
fn bb_select(buffer_s: f64, num_rungs: usize, low_s: f64, high_s: f64) -> usize {
    baselines::bb_select(buffer_s, num_rungs, low_s, high_s)
}

#[pyfunction]
#[pyo3(signature = (throughput_history, ladder=None, k=5))]
fn rb_select(throughput_history: Vec<f64>, ladder: Option<Vec<f64>>, k: usize) -> PyResult<usize> {
    let ladder = ladder.unwrap_or_else(|| media::DEFAULT_LADDER.to_vec());
    baselines::rb_select(&throughput_history, &ladder, k).map_err(to_py)
}

#[pyclass(name = "StreamingEnv", module = "panoabr_py")]
struct PyEnv {
    inner: penv::StreamingEnv,
}

#[pymethods]
impl PyEnv {
    /// Environment with oracle trajectories generated from `fixture_seed`.
    #[new]
    #[pyo3(signature = (manifest, trace, agents=3, objective="(1,1,1,1)", fixture_seed=0))]
    fn new(manifest: &PyManifest, trace: &PyTrace, agents: usize, objective: &str, fixture_seed: u64) -> PyResult<Self> {
        let fixture = TrajectoryFixture::generate(manifest.inner.segments(), agents, fixture_seed).map_err(to_py)?;
        let mut cfg = EnvConfig::new(
            manifest.inner.clone(),
            trace.inner.clone(),
            Predictor::OracleLog(Arc::new(fixture)),
        );
        cfg.agents = agents;
        cfg.weights = QoEWeights::from_preset(objective).map_err(to_py)?;
        Ok(Self {
            inner: penv::StreamingEnv::new(cfg).map_err(to_py)?,
        })
    }

    fn reset(&mut self) -> PyResult<Vec<Vec<f64>>> {
        self.inner.reset().map_err(to_py)
    }

    /// Returns `(observations, reward, breakdown, done)`.
    #[allow(clippy::type_complexity)]
    fn step(&mut self, actions: Vec<usize>) -> PyResult<(Vec<Vec<f64>>, f64, BTreeMap<&'static str, f64>, bool)> {
        let out = self.inner.step(&actions).map_err(to_py)?;
        Ok((out.observations, out.reward, breakdown_dict(&out.breakdown), out.done))
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        self.inner.observation_vectors()
    }

    fn global_state(&self) -> Vec<f64> {
        self.inner.global_state()
    }

    #[getter]
    fn buffer_s(&self) -> f64 {
        self.inner.buffer_s()
    }

    #[getter]
    fn clock_s(&self) -> f64 {
        self.inner.clock_s()
    }

    #[getter]
    fn segment(&self) -> usize {
        self.inner.segment()
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.is_done()
    }

    #[getter]
    fn num_agents(&self) -> usize {
        self.inner.num_agents()
    }

    #[getter]
    fn observation_len(&self) -> usize {
        self.inner.config().observation_len()
    }

    /// The current episode log as text, one row per segment.
    fn log_text(&self) -> String {
        self.inner.log().to_text()
    }

    /// Plays a full episode with a rule policy (`bb`, `rb`, `mpc`,
    /// `dynamic`, `random`) and returns `(mean_qoe, freeze_frequency)`.
    #[pyo3(signature = (policy, seed=0))]
    fn run_policy(&mut self, policy: &str, seed: u64) -> PyResult<(f64, f64)> {
        let mut p: Box<dyn AbrPolicy> = match policy {
            "random" => Box::new(penv::RandomPolicy::new(seed)),
            other => {
                let kind = match other {
                    "bb" => RuleKind::Bb,
                    "rb" => RuleKind::Rb,
                    "mpc" => RuleKind::Mpc,
                    "dynamic" => RuleKind::Dynamic,
                    _ => return Err(PyValueError::new_err(format!("unknown policy `{other}`"))),
                };
                Box::new(RulePolicy::new(kind, BaselineConfig::default()).map_err(to_py)?)
            }
        };
        let log = penv::run_episode(&mut self.inner, p.as_mut()).map_err(to_py)?;
        Ok((log.mean_qoe(), log.freeze_frequency()))
    }
}

#[pyclass(name = "MultiAgentPpo", module = "panoabr_py")]
struct PyPpo {
    inner: madrl::MultiAgentPpo,
}

#[pymethods]
impl PyPpo {
    #[new]
    #[pyo3(signature = (env, mode="mappo", episodes=100, actor_lr=1e-4, critic_lr=1e-4, seed=0))]
    fn new(env: &PyEnv, mode: &str, episodes: usize, actor_lr: f64, critic_lr: f64, seed: u64) -> PyResult<Self> {
        let cfg = TrainConfig {
            mode: mode.parse::<CriticMode>().map_err(to_py)?,
            episodes,
            actor_lr,
            critic_lr,
            seed,
            ..TrainConfig::default()
        };
        Ok(Self {
            inner: madrl::MultiAgentPpo::for_env(cfg, &env.inner).map_err(to_py)?,
        })
    }

    /// Trains on `env` and returns the best greedy evaluation QoE.
    fn train(&mut self, env: &PyEnv) -> PyResult<f64> {
        let mut envs = vec![env.inner.clone()];
        let mut selection = vec![env.inner.clone()];
        let report = self.inner.train(&mut envs, &mut selection, None, None).map_err(to_py)?;
        Ok(report.best_eval_qoe)
    }

    /// Greedy joint action for the current observations.
    fn act(&self, env: &PyEnv) -> PyResult<Vec<usize>> {
        self.inner.act_greedy(&env.inner.observation_vectors()).map_err(to_py)
    }

    fn save(&self, stem: PathBuf) -> PyResult<()> {
        self.inner.save(stem).map_err(to_py)
    }

    fn load(&mut self, stem: PathBuf) -> PyResult<()> {
        self.inner.load(stem).map_err(to_py)
    }
}

/// Runs the experiment described by a TOML file; returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (config_path, policy=None, out=None))]
fn run_experiment(config_path: PathBuf, policy: Option<&str>, out: Option<PathBuf>) -> PyResult<String> {
    let mut cfg = ExperimentConfig::load(&config_path).map_err(to_py)?;
    if let Some(p) = policy {
        cfg.experiment.policy = p.parse().map_err(to_py)?;
    }
    if let Some(o) = out {
        cfg.experiment.out = o;
    }
    let summary = experiment::run(&cfg).map_err(to_py)?;
    serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn panoabr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyManifest>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyPpo>()?;
    m.add_function(wrap_pyfunction!(qoe_total, m)?)?;
    m.add_function(wrap_pyfunction!(rebuffer_time, m)?)?;
    m.add_function(wrap_pyfunction!(qoe_preset, m)?)?;
    m.add_function(wrap_pyfunction!(gae, m)?)?;
    m.add_function(wrap_pyfunction!(discounted_returns, m)?)?;
    m.add_function(wrap_pyfunction!(ppo_clip_objective, m)?)?;
    m.add_function(wrap_pyfunction!(viewport_tiles, m)?)?;
    m.add_function(wrap_pyfunction!(partition, m)?)?;
    m.add_function(wrap_pyfunction!(bb_select, m)?)?;
    m.add_function(wrap_pyfunction!(rb_select, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
