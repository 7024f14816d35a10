//! The anytime forecasters: initial-state formation from one or two observed
//! poses, a single early-terminating solve per query grid, and checkpoint
//! I/O.
//!
//! An order-1 model integrates `ds/dt = f(s)` from the last observed pose; an
//! order-2 model integrates the coupled system `d/dt [s; v] = [v; g(s, v)]`
//! from the last pose and a finite-difference initial velocity.

use std::cell::RefCell;
use std::path::Path;

use crate::mlp::{GradBundle, MlpParams, MlpScratch};
use crate::ode::{solve, Dynamics, DynamicsVjp, SolveTrace, SolverConfig};
use crate::pose::{Pose, PoseSequence, TimeGrid};
use crate::util::{fmt_f64, write_atomic};
use crate::{Error, Result};

/// The dynamics network consumes meter-scaled state and produces
/// meter-scaled rates; poses stay in millimeters everywhere else. Without
/// this the tanh hidden units saturate on mm-scale coordinates and gradients
/// vanish at initialization.
pub const STATE_SCALE_MM: f64 = 1000.0;

/// Default refusal horizon for forecasts, in seconds.
pub const DEFAULT_HORIZON_CAP_SEC: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum OdeOrder {
    First,
    Second,
}

impl OdeOrder {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(OdeOrder::First),
            2 => Ok(OdeOrder::Second),
            other => Err(Error::Checkpoint(format!(
                "order must be 1 or 2, got {other}"
            ))),
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            OdeOrder::First => 1,
            OdeOrder::Second => 2,
        }
    }

    /// Observed poses needed to form the initial state.
    pub fn history(self) -> usize {
        match self {
            OdeOrder::First => 1,
            OdeOrder::Second => 2,
        }
    }

    /// Dynamics-network input width for `M` joints.
    pub fn input_dim(self, m_joints: usize) -> usize {
        match self {
            OdeOrder::First => 3 * m_joints,
            OdeOrder::Second => 6 * m_joints,
        }
    }
}

/// A trained (or freshly initialized) anytime forecaster.
#[derive(Debug, Clone)]
pub struct AnyPoseModel {
    order: OdeOrder,
    params: MlpParams,
    m_joints: usize,
    frame_interval_sec: f64,
    seed: u64,
    pub inference_solver: SolverConfig,
    pub horizon_cap_sec: f64,
}

/// Initial condition of a forecast solve.
#[derive(Debug, Clone)]
pub struct InitialState {
    pub s0: Pose,
    /// Per-coordinate joint velocities in mm/s; present iff order 2.
    pub v0: Option<Vec<f64>>,
}

impl AnyPoseModel {
    /// Fresh model with Glorot-initialized dynamics.
    pub fn new(
        order: OdeOrder,
        m_joints: usize,
        hidden_widths: &[usize],
        frame_interval_sec: f64,
        seed: u64,
    ) -> Result<Self> {
        if m_joints == 0 {
            return Err(Error::invalid("m_joints must be >= 1"));
        }
        if !(frame_interval_sec.is_finite() && frame_interval_sec > 0.0) {
            return Err(Error::invalid("frame_interval_sec must be positive"));
        }
        let mut widths = Vec::with_capacity(hidden_widths.len() + 2);
        widths.push(order.input_dim(m_joints));
        widths.extend_from_slice(hidden_widths);
        widths.push(3 * m_joints);
        let params = MlpParams::init(&widths, seed)?;
        Ok(AnyPoseModel {
            order,
            params,
            m_joints,
            frame_interval_sec,
            seed,
            inference_solver: SolverConfig::dopri45(),
            horizon_cap_sec: DEFAULT_HORIZON_CAP_SEC,
        })
    }

    pub fn from_params(
        order: OdeOrder,
        params: MlpParams,
        m_joints: usize,
        frame_interval_sec: f64,
        seed: u64,
    ) -> Result<Self> {
        if params.input_dim() != order.input_dim(m_joints) {
            return Err(Error::Checkpoint(format!(
                "order {} with {} joints needs input width {}, got {}",
                order.as_u8(),
                m_joints,
                order.input_dim(m_joints),
                params.input_dim()
            )));
        }
        if params.output_dim() != 3 * m_joints {
            return Err(Error::Checkpoint(format!(
                "output width must be {}, got {}",
                3 * m_joints,
                params.output_dim()
            )));
        }
        Ok(AnyPoseModel {
            order,
            params,
            m_joints,
            frame_interval_sec,
            seed,
            inference_solver: SolverConfig::dopri45(),
            horizon_cap_sec: DEFAULT_HORIZON_CAP_SEC,
        })
    }

    pub fn order(&self) -> OdeOrder {
        self.order
    }

    pub fn m_joints(&self) -> usize {
        self.m_joints
    }

    pub fn frame_interval_sec(&self) -> f64 {
        self.frame_interval_sec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    /// The solver state dimension: `3M` (order 1) or `6M` (order 2).
    pub fn state_dim(&self) -> usize {
        self.order.input_dim(self.m_joints)
    }

    pub fn dynamics(&self) -> ModelDynamics<'_> {
        ModelDynamics {
            order: self.order,
            params: &self.params,
            m_joints: self.m_joints,
            scratch: RefCell::new(MlpScratch::default()),
        }
    }

    /// Form the solve initial state from the tail of `observed`. History
    /// beyond what the order needs is ignored; the observed sequence's own
    /// frame interval is used for the finite-difference velocity.
    pub fn build_initial_state(&self, observed: &PoseSequence) -> Result<InitialState> {
        if observed.m_joints() != self.m_joints {
            return Err(Error::Dimension {
                context: "observed sequence joint count",
                expected: self.m_joints,
                got: observed.m_joints(),
            });
        }
        let needed = self.order.history();
        if observed.len() < needed {
            return Err(Error::InsufficientHistory {
                order: self.order.as_u8(),
                needed,
                got: observed.len(),
            });
        }
        let s0 = observed.last().clone();
        let v0 = match self.order {
            OdeOrder::First => None,
            OdeOrder::Second => {
                let prev = observed.pose(observed.len() - 2);
                Some(initial_velocity(
                    prev,
                    &s0,
                    observed.frame_interval_sec(),
                )?)
            }
        };
        Ok(InitialState { s0, v0 })
    }

    /// Forecast poses at every grid time with the model's inference solver.
    pub fn forecast(
        &self,
        observed: &PoseSequence,
        grid: &TimeGrid,
    ) -> Result<(Vec<Pose>, SolveTrace)> {
        self.forecast_with_solver(observed, grid, &self.inference_solver, false)
    }

    /// Forecast with an explicit solver configuration; one solve serves the
    /// whole grid and terminates at its last time.
    pub fn forecast_with_solver(
        &self,
        observed: &PoseSequence,
        grid: &TimeGrid,
        solver: &SolverConfig,
        record_tape: bool,
    ) -> Result<(Vec<Pose>, SolveTrace)> {
        if !grid.is_canonical() {
            return Err(Error::NonCanonicalGrid);
        }
        if grid.last() > self.horizon_cap_sec {
            return Err(Error::HorizonExceeded {
                t: grid.last(),
                cap: self.horizon_cap_sec,
            });
        }
        let init = self.build_initial_state(observed)?;
        let y0 = self.initial_state_vector(&init);
        let dynamics = self.dynamics();
        let trace = solve(&dynamics, &y0, grid, solver, record_tape)?;
        let poses = trace
            .states
            .iter()
            .map(|s| Pose::from_state(&s[..3 * self.m_joints]))
            .collect::<Result<Vec<_>>>()?;
        Ok((poses, trace))
    }

    pub fn initial_state_vector(&self, init: &InitialState) -> Vec<f64> {
        let mut y0 = init.s0.flatten();
        if let Some(v0) = &init.v0 {
            y0.extend_from_slice(v0);
        }
        y0
    }

    /// Serialize to the checkpoint JSON schema. Floats carry 17 significant
    /// digits so a load reproduces the exact parameters.
    pub fn to_checkpoint_json(&self) -> String {
        let widths = self.params.widths();
        let mut out = String::with_capacity(64 + 24 * self.params.n_params());
        out.push_str("{\n");
        out.push_str(&format!("  \"order\": {},\n", self.order.as_u8()));
        out.push_str(&format!("  \"m_joints\": {},\n", self.m_joints));
        out.push_str(&format!(
            "  \"widths\": [{}],\n",
            widths
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ));
        let join = |vals: &[f64]| {
            vals.iter()
                .map(|&v| fmt_f64(v))
                .collect::<Vec<_>>()
                .join(", ")
        };
        out.push_str("  \"weights\": [\n");
        for k in 0..self.params.n_layers() {
            let sep = if k + 1 < self.params.n_layers() { "," } else { "" };
            out.push_str(&format!("    [{}]{sep}\n", join(self.params.layer_weights(k))));
        }
        out.push_str("  ],\n");
        out.push_str("  \"biases\": [\n");
        for k in 0..self.params.n_layers() {
            let sep = if k + 1 < self.params.n_layers() { "," } else { "" };
            out.push_str(&format!("    [{}]{sep}\n", join(self.params.layer_biases(k))));
        }
        out.push_str("  ],\n");
        out.push_str(&format!("  \"seed\": {},\n", self.seed));
        out.push_str(&format!(
            "  \"frame_interval_sec\": {}\n",
            fmt_f64(self.frame_interval_sec)
        ));
        out.push_str("}\n");
        out
    }

    pub fn from_checkpoint_json(json: &str) -> Result<Self> {
        #[derive(serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Checkpoint {
            order: u8,
            m_joints: usize,
            widths: Vec<usize>,
            weights: Vec<Vec<f64>>,
            biases: Vec<Vec<f64>>,
            seed: u64,
            frame_interval_sec: f64,
        }
        let ck: Checkpoint = serde_json::from_str(json)?;
        let order = OdeOrder::from_u8(ck.order)?;
        if ck.m_joints == 0 {
            return Err(Error::Checkpoint("m_joints must be >= 1".into()));
        }
        if !(ck.frame_interval_sec.is_finite() && ck.frame_interval_sec > 0.0) {
            return Err(Error::Checkpoint(format!(
                "frame_interval_sec must be positive, got {}",
                ck.frame_interval_sec
            )));
        }
        let params = MlpParams::from_parts(&ck.widths, ck.weights, ck.biases)?;
        AnyPoseModel::from_params(order, params, ck.m_joints, ck.frame_interval_sec, ck.seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_checkpoint_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint_json(&text)
    }
}

/// Elementwise `(s0 - s_prev) / dt`, in mm/s.
pub fn initial_velocity(s_prev: &Pose, s0: &Pose, dt_sec: f64) -> Result<Vec<f64>> {
    if !(dt_sec.is_finite() && dt_sec > 0.0) {
        return Err(Error::invalid(format!(
            "dt_sec must be finite and positive, got {dt_sec}"
        )));
    }
    if s_prev.m_joints() != s0.m_joints() {
        return Err(Error::Dimension {
            context: "initial_velocity joint count",
            expected: s0.m_joints(),
            got: s_prev.m_joints(),
        });
    }
    let a = s_prev.flatten();
    let b = s0.flatten();
    Ok(a.iter().zip(&b).map(|(p, c)| (c - p) / dt_sec).collect())
}

/// The model's ODE right-hand side.
///
/// Order 1: `f(s) = SCALE * net(s / SCALE)`. Order 2 on `[s; v]`:
/// `[v; SCALE * net([s; v] / SCALE)]`. The scale cancels in the
/// state Jacobian, so `vjp` only rescales the upstream signal.
pub struct ModelDynamics<'a> {
    order: OdeOrder,
    params: &'a MlpParams,
    m_joints: usize,
    scratch: RefCell<MlpScratch>,
}

impl ModelDynamics<'_> {
    fn net_input(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v / STATE_SCALE_MM).collect()
    }
}

impl Dynamics for ModelDynamics<'_> {
    fn dim(&self) -> usize {
        self.order.input_dim(self.m_joints)
    }

    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        let x = self.net_input(y);
        let mut scratch = self.scratch.borrow_mut();
        match self.order {
            OdeOrder::First => {
                self.params.eval_into(&x, dy, &mut scratch);
                for v in dy.iter_mut() {
                    *v *= STATE_SCALE_MM;
                }
            }
            OdeOrder::Second => {
                let half = 3 * self.m_joints;
                let (d_pos, d_vel) = dy.split_at_mut(half);
                d_pos.copy_from_slice(&y[half..]);
                self.params.eval_into(&x, d_vel, &mut scratch);
                for v in d_vel.iter_mut() {
                    *v *= STATE_SCALE_MM;
                }
            }
        }
    }
}

impl DynamicsVjp for ModelDynamics<'_> {
    fn grad_zeros(&self) -> GradBundle {
        GradBundle::zeros_like(self.params)
    }

    fn vjp(&self, y: &[f64], upstream: &[f64], grads: &mut GradBundle) -> Vec<f64> {
        let x = self.net_input(y);
        match self.order {
            OdeOrder::First => {
                let (_, tape) = self.params.forward(&x).expect("width checked");
                let scaled: Vec<f64> = upstream.iter().map(|u| u * STATE_SCALE_MM).collect();
                let d_input = self
                    .params
                    .backward_accumulate(&tape, &scaled, grads)
                    .expect("shapes match");
                d_input.iter().map(|d| d / STATE_SCALE_MM).collect()
            }
            OdeOrder::Second => {
                let half = 3 * self.m_joints;
                let (u_pos, u_vel) = upstream.split_at(half);
                let (_, tape) = self.params.forward(&x).expect("width checked");
                let scaled: Vec<f64> = u_vel.iter().map(|u| u * STATE_SCALE_MM).collect();
                let d_input = self
                    .params
                    .backward_accumulate(&tape, &scaled, grads)
                    .expect("shapes match");
                let mut d_y: Vec<f64> = d_input.iter().map(|d| d / STATE_SCALE_MM).collect();
                // d/dv of the position half: the passthrough `ds/dt = v`.
                for (d, u) in d_y[half..].iter_mut().zip(u_pos) {
                    *d += u;
                }
                d_y
            }
        }
    }
}
