//! Explicit Runge–Kutta IVP solvers over learned dynamics.
//!
//! A solve integrates segment-by-segment `0 -> t1 -> ... -> tN`, landing
//! exactly on every query time, and stops immediately after the last one.
//! Fixed-step methods truncate the final step of a segment to hit its
//! endpoint; the adaptive method clamps its step so a segment endpoint is
//! never overshot. Dynamics are autonomous: the right-hand side depends on
//! the state only.

use crate::mlp::GradBundle;
use crate::pose::TimeGrid;
use crate::{Error, Result};

/// An autonomous ODE right-hand side `dy/dt = f(y)`.
pub trait Dynamics {
    fn dim(&self) -> usize;
    fn eval(&self, y: &[f64], dy: &mut [f64]);
}

/// Dynamics that additionally support a reverse-mode vector-Jacobian
/// product, used when differentiating through an unrolled solve.
pub trait DynamicsVjp: Dynamics {
    /// A zeroed gradient bundle matching the underlying parameters.
    fn grad_zeros(&self) -> GradBundle;

    /// Given `upstream = dL/d f(y)`, accumulate parameter gradients into
    /// `grads` and return `dL/dy`.
    fn vjp(&self, y: &[f64], upstream: &[f64], grads: &mut GradBundle) -> Vec<f64>;
}

/// Wrap a closure as [`Dynamics`].
pub struct FnDynamics<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnDynamics<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnDynamics { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> Dynamics for FnDynamics<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        (self.f)(y, dy)
    }
}

/// Reduction of a second-order system to coupled first order on the
/// concatenated state `[position; velocity]` (each of width `3M`):
/// `d/dt [s; v] = [v; accel(s, v)]`.
pub struct SecondOrder<F> {
    accel: F,
    m_joints: usize,
}

/// Build the coupled first-order dynamics from an acceleration function
/// `accel(position, velocity, out_accel)` on `3M`-vectors.
pub fn second_order<F: Fn(&[f64], &[f64], &mut [f64])>(
    accel: F,
    m_joints: usize,
) -> SecondOrder<F> {
    SecondOrder { accel, m_joints }
}

impl<F: Fn(&[f64], &[f64], &mut [f64])> Dynamics for SecondOrder<F> {
    fn dim(&self) -> usize {
        6 * self.m_joints
    }
    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        let half = 3 * self.m_joints;
        debug_assert_eq!(y.len(), 2 * half);
        let (pos, vel) = y.split_at(half);
        let (d_pos, d_vel) = dy.split_at_mut(half);
        d_pos.copy_from_slice(vel);
        (self.accel)(pos, vel, d_vel);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Euler,
    Midpoint,
    Rk4,
    Dopri45,
}

impl SolverMethod {
    pub fn is_adaptive(self) -> bool {
        matches!(self, SolverMethod::Dopri45)
    }

    pub fn name(self) -> &'static str {
        match self {
            SolverMethod::Euler => "euler",
            SolverMethod::Midpoint => "midpoint",
            SolverMethod::Rk4 => "rk4",
            SolverMethod::Dopri45 => "dopri45",
        }
    }
}

impl std::str::FromStr for SolverMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(SolverMethod::Euler),
            "midpoint" => Ok(SolverMethod::Midpoint),
            "rk4" => Ok(SolverMethod::Rk4),
            "dopri45" => Ok(SolverMethod::Dopri45),
            other => Err(Error::invalid(format!(
                "unknown solver method '{other}' (euler|midpoint|rk4|dopri45)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Step size for fixed-step methods.
    pub fixed_step_sec: f64,
    /// Relative tolerance (adaptive).
    pub rtol: f64,
    /// Absolute tolerance (adaptive), in state units (mm for poses).
    pub atol: f64,
    /// Hard cap on attempted steps per solve.
    pub max_steps: usize,
    /// First trial step (adaptive).
    pub initial_step_sec: f64,
}

impl SolverConfig {
    pub fn fixed(method: SolverMethod, fixed_step_sec: f64) -> Self {
        SolverConfig {
            method,
            fixed_step_sec,
            rtol: 1e-3,
            atol: 1e-3,
            max_steps: 1_000_000,
            initial_step_sec: 0.05,
        }
    }

    /// Adaptive Dormand–Prince 4(5) with tolerances suited to
    /// millimeter-scale pose states.
    pub fn dopri45() -> Self {
        SolverConfig {
            method: SolverMethod::Dopri45,
            fixed_step_sec: 0.01,
            rtol: 1e-3,
            atol: 1e-3,
            max_steps: 10_000,
            initial_step_sec: 0.05,
        }
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be >= 1"));
        }
        if self.method.is_adaptive() {
            for (name, v) in [
                ("rtol", self.rtol),
                ("atol", self.atol),
                ("initial_step_sec", self.initial_step_sec),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::invalid(format!(
                        "{name} must be finite and positive, got {v}"
                    )));
                }
            }
        } else if !(self.fixed_step_sec.is_finite() && self.fixed_step_sec > 0.0) {
            return Err(Error::invalid(format!(
                "fixed_step_sec must be finite and positive, got {}",
                self.fixed_step_sec
            )));
        }
        Ok(())
    }
}

/// One recorded solver step: the step size actually taken and the input
/// fed to the dynamics at every stage (stage 0's input is the incoming
/// state itself).
#[derive(Debug, Clone)]
pub(crate) struct TapeStep {
    pub h: f64,
    pub stage_inputs: Vec<Vec<f64>>,
    /// Set when this step lands exactly on canonical query time `i`.
    pub ends_query: Option<usize>,
}

/// Record of the internal stage evaluations of a solve, sufficient for
/// reverse accumulation when produced by a fixed-step method.
#[derive(Debug, Clone)]
pub struct SolveTape {
    pub(crate) method: SolverMethod,
    pub(crate) dim: usize,
    pub(crate) steps: Vec<TapeStep>,
    pub(crate) n_queries: usize,
}

impl SolveTape {
    pub fn method(&self) -> SolverMethod {
        self.method
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    /// Stage inputs of step `k`, in stage order.
    pub fn stage_inputs(&self, k: usize) -> &[Vec<f64>] {
        &self.steps[k].stage_inputs
    }

    pub(crate) fn steps(&self) -> &[TapeStep] {
        &self.steps
    }
}

/// Output of [`solve`]: one state per canonical query time, plus counters.
#[derive(Debug, Clone)]
pub struct SolveTrace {
    pub states: Vec<Vec<f64>>,
    pub segment_steps: Vec<usize>,
    pub n_evals: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub tape: Option<SolveTape>,
}

const RK4_A: [&[f64]; 4] = [&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]];
const RK4_B: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
const MIDPOINT_A: [&[f64]; 2] = [&[], &[0.5]];
const MIDPOINT_B: [f64; 2] = [0.0, 1.0];
const EULER_A: [&[f64]; 1] = [&[]];
const EULER_B: [f64; 1] = [1.0];

pub(crate) fn tableau(method: SolverMethod) -> (&'static [&'static [f64]], &'static [f64]) {
    match method {
        SolverMethod::Euler => (&EULER_A, &EULER_B),
        SolverMethod::Midpoint => (&MIDPOINT_A, &MIDPOINT_B),
        SolverMethod::Rk4 => (&RK4_A, &RK4_B),
        SolverMethod::Dopri45 => unreachable!("dopri45 has its own path"),
    }
}

// Dormand–Prince 4(5) tableau. E = b5 - b4 gives the embedded error
// estimate; the 7th stage equals the 5th-order solution (FSAL). Stage time
// offsets are irrelevant for autonomous dynamics and are omitted.
const DP_A: [&[f64]; 7] = [
    &[],
    &[0.2],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    ],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
    &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `dy/dt = f(y)` from `t = 0` through every grid time.
///
/// The grid must be canonical (strictly increasing, positive). Returns one
/// state per grid time; integration terminates at the last grid time.
pub fn solve(
    dynamics: &dyn Dynamics,
    y0: &[f64],
    grid: &TimeGrid,
    cfg: &SolverConfig,
    record_tape: bool,
) -> Result<SolveTrace> {
    cfg.validate()?;
    if !grid.is_canonical() {
        return Err(Error::NonCanonicalGrid);
    }
    if y0.len() != dynamics.dim() {
        return Err(Error::Dimension {
            context: "solve initial state",
            expected: dynamics.dim(),
            got: y0.len(),
        });
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { t_reached: 0.0 });
    }
    if cfg.method.is_adaptive() {
        solve_adaptive(dynamics, y0, grid, cfg, record_tape)
    } else {
        solve_fixed(dynamics, y0, grid, cfg, record_tape)
    }
}

fn solve_fixed(
    dynamics: &dyn Dynamics,
    y0: &[f64],
    grid: &TimeGrid,
    cfg: &SolverConfig,
    record_tape: bool,
) -> Result<SolveTrace> {
    let (a, b) = tableau(cfg.method);
    let stages = b.len();
    let dim = y0.len();
    let h = cfg.fixed_step_sec;

    let mut y = y0.to_vec();
    let mut t = 0.0f64;
    let mut states = Vec::with_capacity(grid.len());
    let mut segment_steps = Vec::with_capacity(grid.len());
    let mut n_evals = 0usize;
    let mut total_steps = 0usize;
    let mut tape_steps: Vec<TapeStep> = Vec::new();

    let mut k = vec![vec![0.0; dim]; stages];
    let mut x = vec![0.0; dim];

    for (qi, &te) in grid.times().iter().enumerate() {
        let mut steps_this_segment = 0usize;
        while t < te {
            if total_steps >= cfg.max_steps {
                return Err(Error::MaxSteps {
                    max_steps: cfg.max_steps,
                    t_reached: t,
                });
            }
            let rem = te - t;
            let lands = rem <= h;
            let h_eff = if lands { rem } else { h };

            let mut stage_inputs: Vec<Vec<f64>> = Vec::new();
            for i in 0..stages {
                x.copy_from_slice(&y);
                for (j, &aij) in a[i].iter().enumerate() {
                    if aij != 0.0 {
                        for (xv, kv) in x.iter_mut().zip(&k[j]) {
                            *xv += h_eff * aij * kv;
                        }
                    }
                }
                if record_tape {
                    stage_inputs.push(x.clone());
                }
                dynamics.eval(&x, &mut k[i]);
                n_evals += 1;
            }
            for i in 0..stages {
                if b[i] != 0.0 {
                    for (yv, kv) in y.iter_mut().zip(&k[i]) {
                        *yv += h_eff * b[i] * kv;
                    }
                }
            }
            t = if lands { te } else { t + h_eff };
            total_steps += 1;
            steps_this_segment += 1;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { t_reached: t });
            }
            if record_tape {
                tape_steps.push(TapeStep {
                    h: h_eff,
                    stage_inputs,
                    ends_query: if lands { Some(qi) } else { None },
                });
            }
        }
        states.push(y.clone());
        segment_steps.push(steps_this_segment);
    }

    Ok(SolveTrace {
        states,
        segment_steps,
        n_evals,
        accepted_steps: total_steps,
        rejected_steps: 0,
        tape: record_tape.then(|| SolveTape {
            method: cfg.method,
            dim,
            steps: tape_steps,
            n_queries: grid.len(),
        }),
    })
}

fn solve_adaptive(
    dynamics: &dyn Dynamics,
    y0: &[f64],
    grid: &TimeGrid,
    cfg: &SolverConfig,
    record_tape: bool,
) -> Result<SolveTrace> {
    let dim = y0.len();
    let mut y = y0.to_vec();
    let mut t = 0.0f64;
    let mut states = Vec::with_capacity(grid.len());
    let mut segment_steps = Vec::with_capacity(grid.len());
    let mut n_evals = 0usize;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut tape_steps: Vec<TapeStep> = Vec::new();

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    let mut x = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];

    // FSAL: k[0] holds f(y) at the current state.
    dynamics.eval(&y, &mut k[0]);
    n_evals += 1;

    let mut h_ctrl = cfg.initial_step_sec;

    for (qi, &te) in grid.times().iter().enumerate() {
        let mut steps_this_segment = 0usize;
        while t < te {
            if accepted + rejected >= cfg.max_steps {
                return Err(Error::MaxSteps {
                    max_steps: cfg.max_steps,
                    t_reached: t,
                });
            }
            let rem = te - t;
            let clamped = h_ctrl > rem;
            let h = if clamped { rem } else { h_ctrl };

            let mut stage_inputs: Vec<Vec<f64>> = Vec::new();
            if record_tape {
                stage_inputs.push(y.clone());
            }
            for i in 1..7 {
                x.copy_from_slice(&y);
                for (j, &aij) in DP_A[i].iter().enumerate() {
                    if aij != 0.0 {
                        for (xv, kv) in x.iter_mut().zip(&k[j]) {
                            *xv += h * aij * kv;
                        }
                    }
                }
                if record_tape {
                    stage_inputs.push(x.clone());
                }
                dynamics.eval(&x, &mut k[i]);
                n_evals += 1;
            }
            // 5th-order solution (stage 7 input equals it, FSAL).
            y_new.copy_from_slice(&y);
            for i in 0..7 {
                if DP_B[i] != 0.0 {
                    for (yv, kv) in y_new.iter_mut().zip(&k[i]) {
                        *yv += h * DP_B[i] * kv;
                    }
                }
            }
            if y_new.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { t_reached: t });
            }
            // Scaled RMS of the embedded error estimate.
            let mut err_acc = 0.0f64;
            for j in 0..dim {
                let mut le = 0.0;
                for i in 0..7 {
                    if DP_E[i] != 0.0 {
                        le += DP_E[i] * k[i][j];
                    }
                }
                le *= h;
                let scale = cfg.atol + cfg.rtol * y[j].abs().max(y_new[j].abs());
                err_acc += (le / scale) * (le / scale);
            }
            let err = (err_acc / dim as f64).sqrt();
            let factor = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
            let proposal = h * factor;

            if err <= 1.0 {
                accepted += 1;
                steps_this_segment += 1;
                y.copy_from_slice(&y_new);
                k.swap(0, 6); // FSAL: f at the accepted state
                let lands = clamped || rem <= h;
                t = if lands { te } else { t + h };
                // A clamp shrank the step artificially; never let it also
                // shrink the controller's memory.
                h_ctrl = if clamped { h_ctrl.max(proposal) } else { proposal };
                if record_tape {
                    tape_steps.push(TapeStep {
                        h,
                        stage_inputs,
                        ends_query: if lands { Some(qi) } else { None },
                    });
                }
            } else {
                rejected += 1;
                h_ctrl = proposal;
                if !(h_ctrl.is_finite() && h_ctrl > 0.0) || h_ctrl < 1e-14 {
                    return Err(Error::NonFiniteState { t_reached: t });
                }
            }
        }
        states.push(y.clone());
        segment_steps.push(steps_this_segment);
    }

    Ok(SolveTrace {
        states,
        segment_steps,
        n_evals,
        accepted_steps: accepted,
        rejected_steps: rejected,
        tape: record_tape.then(|| SolveTape {
            method: SolverMethod::Dopri45,
            dim,
            steps: tape_steps,
            n_queries: grid.len(),
        }),
    })
}

/// Empirical convergence order of a fixed-step method on a problem with a
/// known solution, estimated from the error ratio under step halving.
#[derive(Debug, Clone, Copy)]
pub struct OrderEstimate {
    pub error_coarse: f64,
    pub error_fine: f64,
    /// `error(h) / error(h/2)`; about `2^p` for a method of order `p`.
    pub ratio: f64,
    pub order: f64,
}

pub fn convergence_order(
    method: SolverMethod,
    dynamics: &dyn Dynamics,
    y0: &[f64],
    t_end: f64,
    exact: &[f64],
    h: f64,
) -> Result<OrderEstimate> {
    let grid = TimeGrid::single(t_end)?;
    let sup_err = |states: &[Vec<f64>]| -> f64 {
        states[0]
            .iter()
            .zip(exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let coarse = solve(dynamics, y0, &grid, &SolverConfig::fixed(method, h), false)?;
    let fine = solve(
        dynamics,
        y0,
        &grid,
        &SolverConfig::fixed(method, h / 2.0),
        false,
    )?;
    let error_coarse = sup_err(&coarse.states);
    let error_fine = sup_err(&fine.states);
    let ratio = error_coarse / error_fine;
    Ok(OrderEstimate {
        error_coarse,
        error_fine,
        ratio,
        order: ratio.log2(),
    })
}
