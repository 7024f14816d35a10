//! Per-horizon accuracy tables and the baseline predictors they are
//! measured against.

use crate::data::{fk_pose, MotionSample};
use crate::model::{initial_velocity, AnyPoseModel};
use crate::pose::{Pose, TimeGrid};
use crate::train::{mpjpe, windows_for, Window};
use crate::{Error, Result};

/// Anything that can answer a forecast query for an evaluation window.
pub trait WindowPredictor {
    /// Observed poses required before the window origin.
    fn required_history(&self) -> usize;
    fn predict(&self, window: &Window<'_>, grid: &TimeGrid) -> Result<Vec<Pose>>;
}

impl WindowPredictor for AnyPoseModel {
    fn required_history(&self) -> usize {
        self.order().history()
    }
    fn predict(&self, window: &Window<'_>, grid: &TimeGrid) -> Result<Vec<Pose>> {
        let observed = window.observed(self.required_history())?;
        Ok(self.forecast(&observed, grid)?.0)
    }
}

/// Predicts the last observed pose at every horizon.
pub struct ZeroVelocity;

impl WindowPredictor for ZeroVelocity {
    fn required_history(&self) -> usize {
        1
    }
    fn predict(&self, window: &Window<'_>, grid: &TimeGrid) -> Result<Vec<Pose>> {
        let observed = window.observed(1)?;
        let s0 = observed.last().clone();
        Ok(vec![s0; grid.len()])
    }
}

/// Extrapolates the finite-difference velocity of the last two observed
/// poses: `s(t) = s0 + v0 * t`.
pub struct ConstantVelocity;

impl WindowPredictor for ConstantVelocity {
    fn required_history(&self) -> usize {
        2
    }
    fn predict(&self, window: &Window<'_>, grid: &TimeGrid) -> Result<Vec<Pose>> {
        let observed = window.observed(2)?;
        let s0 = observed.last();
        let prev = observed.pose(observed.len() - 2);
        let v0 = initial_velocity(prev, s0, observed.frame_interval_sec())?;
        let base = s0.flatten();
        grid.times()
            .iter()
            .map(|&t| {
                let state: Vec<f64> = base.iter().zip(&v0).map(|(s, v)| s + v * t).collect();
                Pose::from_state(&state)
            })
            .collect()
    }
}

/// The synthetic ground-truth oracle used as a forecaster; errors on samples
/// without a generating spec.
pub struct OracleForecaster;

impl WindowPredictor for OracleForecaster {
    fn required_history(&self) -> usize {
        1
    }
    fn predict(&self, window: &Window<'_>, grid: &TimeGrid) -> Result<Vec<Pose>> {
        let spec = window.sample.spec.as_ref().ok_or_else(|| {
            Error::invalid(format!(
                "sample {} has no oracle spec",
                window.sample.name
            ))
        })?;
        let origin = window.origin_time_sec();
        grid.times()
            .iter()
            .map(|&t| fk_pose(spec, origin + t))
            .collect()
    }
}

/// Mean MPJPE per horizon over a set of samples, one window per sample.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub horizons_sec: Vec<f64>,
    pub mpjpe_mm: Vec<f64>,
    pub n_windows: usize,
}

impl EvalReport {
    /// Two-row text table: horizons in ms, then MPJPE in mm.
    pub fn formatted_table(&self) -> String {
        let mut header = String::from("msec   ");
        let mut row = String::from("mpjpe  ");
        for (t, e) in self.horizons_sec.iter().zip(&self.mpjpe_mm) {
            header.push_str(&format!("{:>9.0}", t * 1000.0));
            row.push_str(&format!("{e:>9.2}"));
        }
        format!("{header}\n{row}\n")
    }
}

/// Evaluate `predictor` on one window per sample, comparing against the
/// exact oracle where available and frame-aligned ground truth otherwise.
pub fn evaluate(
    predictor: &dyn WindowPredictor,
    samples: &[MotionSample],
    grid: &TimeGrid,
    window_start_idx: usize,
) -> Result<EvalReport> {
    if !grid.is_canonical() {
        return Err(Error::NonCanonicalGrid);
    }
    let windows = windows_for(
        samples,
        window_start_idx,
        predictor.required_history(),
        grid.last(),
    )?;
    if windows.is_empty() {
        return Err(Error::invalid("no evaluation windows"));
    }
    let mut per_horizon = vec![0.0f64; grid.len()];
    for w in &windows {
        let pred = predictor.predict(w, grid)?;
        if pred.len() != grid.len() {
            return Err(Error::Dimension {
                context: "predictor output length",
                expected: grid.len(),
                got: pred.len(),
            });
        }
        let gt = w.ground_truth_grid(grid)?;
        for (i, (p, g)) in pred.iter().zip(&gt).enumerate() {
            per_horizon[i] += mpjpe(std::slice::from_ref(p), std::slice::from_ref(g))?;
        }
    }
    let n = windows.len();
    for v in &mut per_horizon {
        *v /= n as f64;
    }
    Ok(EvalReport {
        horizons_sec: grid.times().to_vec(),
        mpjpe_mm: per_horizon,
        n_windows: n,
    })
}
