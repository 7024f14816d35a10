//! Anytime-query latency measurement: early-terminating solves against the
//! dense-predict-then-interpolate baseline, on identical query times.
//!
//! Timed regions are strictly single-threaded; timing uses the monotonic
//! high-resolution clock. Absolute numbers are machine-dependent, so every
//! report carries environment metadata — the stable claims are the ordering
//! between strategies and the evaluation-count mechanism behind it.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{initial_velocity, AnyPoseModel};
use crate::pose::{Pose, PoseSequence, TimeGrid};
use crate::util::{fmt_f64, SampleStats};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// One solver run per query, terminating at the queried time.
    AnytimeOde,
    /// Predict the full dense grid, then joint-wise linear interpolation.
    DenseInterpolate,
    /// `s0 + v0 * t` from the last two observed poses.
    ConstantVelocity,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::AnytimeOde => "anytime_ode",
            Strategy::DenseInterpolate => "dense_interpolate",
            Strategy::ConstantVelocity => "constant_velocity",
        }
    }

    pub fn all() -> Vec<Strategy> {
        vec![
            Strategy::AnytimeOde,
            Strategy::DenseInterpolate,
            Strategy::ConstantVelocity,
        ]
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anytime_ode" => Ok(Strategy::AnytimeOde),
            "dense_interpolate" => Ok(Strategy::DenseInterpolate),
            "constant_velocity" => Ok(Strategy::ConstantVelocity),
            other => Err(Error::invalid(format!(
                "unknown strategy '{other}' (anytime_ode|dense_interpolate|constant_velocity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub n_queries: usize,
    pub horizon_sec: f64,
    pub warmup: usize,
    /// Grid step of the dense baseline; 0.04 s gives 25 poses over 1 s.
    pub dense_grid_step_sec: f64,
    pub seed: u64,
    pub strategies: Vec<Strategy>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_queries: 1000,
            horizon_sec: 1.0,
            warmup: 50,
            dense_grid_step_sec: 0.04,
            seed: 0,
            strategies: Strategy::all(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_queries == 0 {
            return Err(Error::invalid("n_queries must be >= 1"));
        }
        if !(self.horizon_sec.is_finite() && self.horizon_sec > 0.0) {
            return Err(Error::invalid("horizon_sec must be positive"));
        }
        if !(self.dense_grid_step_sec.is_finite()
            && self.dense_grid_step_sec > 0.0
            && self.dense_grid_step_sec <= self.horizon_sec)
        {
            return Err(Error::invalid(
                "dense_grid_step_sec must be positive and at most the horizon",
            ));
        }
        if self.strategies.is_empty() {
            return Err(Error::invalid("at least one strategy required"));
        }
        Ok(())
    }
}

/// Per-strategy measurements over the common query set.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub mean_latency_sec: f64,
    /// Unbiased sample variance of the latencies, in sec^2.
    pub variance_sec2: f64,
    pub min_latency_sec: f64,
    pub max_latency_sec: f64,
    pub n_queries: usize,
    pub mean_dynamics_evals: f64,
    pub query_times_sec: Vec<f64>,
    pub latencies_sec: Vec<f64>,
    pub dynamics_evals: Vec<u64>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EnvironmentInfo {
    pub os: String,
    pub arch: String,
    pub debug_assertions: bool,
    pub precision: String,
    pub timer: String,
}

impl EnvironmentInfo {
    pub fn current() -> Self {
        EnvironmentInfo {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            debug_assertions: cfg!(debug_assertions),
            precision: "f64".to_string(),
            timer: "std::time::Instant (monotonic)".to_string(),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub environment: EnvironmentInfo,
    pub strategies: Vec<StrategyReport>,
}

impl BenchReport {
    /// Mean/variance table, one row per strategy.
    pub fn formatted_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<20} {:>14} {:>12} {:>12}\n",
            "strategy", "mean time cost", "variance", "mean evals"
        ));
        for s in &self.strategies {
            out.push_str(&format!(
                "{:<20} {:>11.3e} sec {:>12.1e} {:>12.1}\n",
                s.strategy.name(),
                s.mean_latency_sec,
                s.variance_sec2,
                s.mean_dynamics_evals
            ));
        }
        out
    }
}

/// The dense baseline for one query: forecast the FULL grid
/// `{step, 2*step, ..., horizon}` regardless of `t`, then linearly
/// interpolate each joint coordinate between the bracketing grid poses
/// (clamped to the first/last pose outside the grid range). Returns the
/// pose and the dynamics-evaluation count spent.
pub fn dense_interpolate_forecast(
    model: &AnyPoseModel,
    observed: &PoseSequence,
    t_sec: f64,
    horizon_sec: f64,
    grid_step_sec: f64,
) -> Result<(Pose, usize)> {
    if !(t_sec.is_finite() && t_sec > 0.0 && t_sec <= horizon_sec) {
        return Err(Error::BadTime { value: t_sec });
    }
    let n = (horizon_sec / grid_step_sec + 1e-9).floor() as usize;
    if n == 0 {
        return Err(Error::invalid("dense grid is empty"));
    }
    let times: Vec<f64> = (1..=n).map(|i| i as f64 * grid_step_sec).collect();
    let grid = TimeGrid::new(times)?;
    let (poses, trace) = model.forecast(observed, &grid)?;

    // Fractional index into the dense poses; clamp outside the grid range.
    let pos = t_sec / grid_step_sec - 1.0;
    let pose = if pos <= 0.0 {
        poses[0].clone()
    } else if pos >= (n - 1) as f64 {
        poses[n - 1].clone()
    } else {
        let i = pos.floor() as usize;
        let u = pos - i as f64;
        let a = poses[i].flatten();
        let b = poses[i + 1].flatten();
        let state: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (1.0 - u) * x + u * y)
            .collect();
        Pose::from_state(&state)?
    };
    Ok((pose, trace.n_evals))
}

fn forecast_once(
    model: &AnyPoseModel,
    observed: &PoseSequence,
    strategy: Strategy,
    t_sec: f64,
    cfg: &BenchConfig,
) -> Result<(Pose, usize)> {
    match strategy {
        Strategy::AnytimeOde => {
            let grid = TimeGrid::single(t_sec)?;
            let (poses, trace) = model.forecast(observed, &grid)?;
            Ok((poses.into_iter().next().expect("one query"), trace.n_evals))
        }
        Strategy::DenseInterpolate => dense_interpolate_forecast(
            model,
            observed,
            t_sec,
            cfg.horizon_sec,
            cfg.dense_grid_step_sec,
        ),
        Strategy::ConstantVelocity => {
            if observed.len() < 2 {
                return Err(Error::InsufficientHistory {
                    order: 2,
                    needed: 2,
                    got: observed.len(),
                });
            }
            let s0 = observed.last();
            let prev = observed.pose(observed.len() - 2);
            let v0 = initial_velocity(prev, s0, observed.frame_interval_sec())?;
            let state: Vec<f64> = s0
                .flatten()
                .iter()
                .zip(&v0)
                .map(|(s, v)| s + v * t_sec)
                .collect();
            Ok((Pose::from_state(&state)?, 0))
        }
    }
}

/// Time every strategy on the same `n_queries` uniformly random query times
/// in `(0, horizon]`, after warmup. Per-query latencies, variances, and
/// dynamics-evaluation counts are all recorded.
pub fn run_bench(
    model: &AnyPoseModel,
    observed: &PoseSequence,
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    cfg.validate()?;
    if observed.len() < model.order().history() {
        return Err(Error::InsufficientHistory {
            order: model.order().as_u8(),
            needed: model.order().history(),
            got: observed.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let query_times: Vec<f64> = (0..cfg.n_queries)
        .map(|_| cfg.horizon_sec * (1.0 - rng.gen::<f64>()))
        .collect();

    let mut strategies = Vec::with_capacity(cfg.strategies.len());
    for &strategy in &cfg.strategies {
        for _ in 0..cfg.warmup {
            forecast_once(model, observed, strategy, cfg.horizon_sec / 2.0, cfg)?;
        }
        let mut latencies = Vec::with_capacity(cfg.n_queries);
        let mut evals = Vec::with_capacity(cfg.n_queries);
        for &t in &query_times {
            let start = Instant::now();
            let (_, n_evals) = forecast_once(model, observed, strategy, t, cfg)?;
            latencies.push(start.elapsed().as_secs_f64());
            evals.push(n_evals as u64);
        }
        let stats = SampleStats::from_samples(&latencies);
        let mean_evals = evals.iter().sum::<u64>() as f64 / evals.len() as f64;
        strategies.push(StrategyReport {
            strategy,
            mean_latency_sec: stats.mean,
            variance_sec2: stats.variance,
            min_latency_sec: stats.min,
            max_latency_sec: stats.max,
            n_queries: cfg.n_queries,
            mean_dynamics_evals: mean_evals,
            query_times_sec: query_times.clone(),
            latencies_sec: latencies,
            dynamics_evals: evals,
        });
        log::info!(
            "{}: mean {} sec over {} queries",
            strategy.name(),
            fmt_f64(stats.mean),
            cfg.n_queries
        );
    }
    Ok(BenchReport {
        config: cfg.clone(),
        environment: EnvironmentInfo::current(),
        strategies,
    })
}
