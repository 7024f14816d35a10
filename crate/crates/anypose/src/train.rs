//! MPJPE loss, reverse accumulation through the unrolled fixed-step solver,
//! the Adam optimizer, and the training loop.
//!
//! Gradients are discretize-then-optimize: every stage evaluation of every
//! recorded solver step is re-differentiated in reverse order, accumulating
//! parameter gradients exactly for the computed trajectory. Training is
//! deterministic for a given seed (seeded shuffling, fixed-step solver,
//! fixed summation order).

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetSplit, MotionSample};
use crate::mlp::{GradBundle, MlpParams};
use crate::model::{AnyPoseModel, OdeOrder};
use crate::ode::{tableau, Dynamics, DynamicsVjp, SolveTape, SolverConfig, SolverMethod};
use crate::pose::{Pose, PoseSequence, TimeGrid};
use crate::{Error, Result};

/// Mean Per Joint Position Error in millimeters: the mean over poses of the
/// per-pose mean Euclidean joint displacement.
pub fn mpjpe(pred: &[Pose], gt: &[Pose]) -> Result<f64> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(Error::Dimension {
            context: "mpjpe pose lists",
            expected: gt.len(),
            got: pred.len(),
        });
    }
    let m = gt[0].m_joints();
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        if p.m_joints() != m || g.m_joints() != m {
            return Err(Error::Dimension {
                context: "mpjpe joint count",
                expected: m,
                got: p.m_joints(),
            });
        }
        let mut pose_err = 0.0;
        for (a, b) in p.joints().iter().zip(g.joints()) {
            let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            pose_err += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        }
        total += pose_err / m as f64;
    }
    Ok(total / pred.len() as f64)
}

/// Gradient of [`mpjpe`] w.r.t. each predicted pose, flattened to per-pose
/// 3M vectors. A joint with zero displacement contributes a zero gradient
/// (the subgradient making pred == gt a stationary point).
pub fn mpjpe_grad(pred: &[Pose], gt: &[Pose]) -> Result<Vec<Vec<f64>>> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(Error::Dimension {
            context: "mpjpe_grad pose lists",
            expected: gt.len(),
            got: pred.len(),
        });
    }
    let m = gt[0].m_joints();
    let n = pred.len() as f64;
    let mut out = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gt) {
        if p.m_joints() != m || g.m_joints() != m {
            return Err(Error::Dimension {
                context: "mpjpe_grad joint count",
                expected: m,
                got: p.m_joints(),
            });
        }
        let mut grad = vec![0.0; 3 * m];
        for (j, (a, b)) in p.joints().iter().zip(g.joints()).enumerate() {
            let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if norm > 0.0 {
                let s = 1.0 / (m as f64 * n * norm);
                grad[3 * j] = d[0] * s;
                grad[3 * j + 1] = d[1] * s;
                grad[3 * j + 2] = d[2] * s;
            }
        }
        out.push(grad);
    }
    Ok(out)
}

/// Dynamics defined directly by a network (state in = state out), with the
/// reverse-mode product needed for training. Used for gradient checks on
/// arbitrary widths; pose models wrap their own scaling via
/// [`crate::model::ModelDynamics`].
pub struct NetDynamics<'a> {
    params: &'a MlpParams,
}

impl<'a> NetDynamics<'a> {
    pub fn new(params: &'a MlpParams) -> Result<Self> {
        if params.input_dim() != params.output_dim() {
            return Err(Error::Dimension {
                context: "NetDynamics square net",
                expected: params.input_dim(),
                got: params.output_dim(),
            });
        }
        Ok(NetDynamics { params })
    }
}

impl Dynamics for NetDynamics<'_> {
    fn dim(&self) -> usize {
        self.params.input_dim()
    }
    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        let (out, _) = self.params.forward(y).expect("width checked");
        dy.copy_from_slice(&out);
    }
}

impl DynamicsVjp for NetDynamics<'_> {
    fn grad_zeros(&self) -> GradBundle {
        GradBundle::zeros_like(self.params)
    }
    fn vjp(&self, y: &[f64], upstream: &[f64], grads: &mut GradBundle) -> Vec<f64> {
        let (_, tape) = self.params.forward(y).expect("width checked");
        self.params
            .backward_accumulate(&tape, upstream, grads)
            .expect("shapes match")
    }
}

/// Exact gradient of a loss on the solve outputs w.r.t. the dynamics
/// parameters, by reverse accumulation through the recorded fixed-step tape.
///
/// `d_states[i]` is `dLoss/d(state at canonical query time i)`. The returned
/// bundle's `d_input` holds `dLoss/d(initial state)`.
pub fn backward_through_solve(
    dynamics: &dyn DynamicsVjp,
    tape: &SolveTape,
    d_states: &[Vec<f64>],
) -> Result<GradBundle> {
    if tape.method().is_adaptive() {
        return Err(Error::AdaptiveTape);
    }
    if d_states.len() != tape.n_queries() {
        return Err(Error::Dimension {
            context: "backward_through_solve query gradients",
            expected: tape.n_queries(),
            got: d_states.len(),
        });
    }
    let dim = tape.dim();
    for d in d_states {
        if d.len() != dim {
            return Err(Error::Dimension {
                context: "backward_through_solve state gradient",
                expected: dim,
                got: d.len(),
            });
        }
    }
    let (a, b) = tableau(tape.method());
    let stages = b.len();

    let mut grads = dynamics.grad_zeros();
    let mut adjoint = vec![0.0; dim];

    for step in tape.steps().iter().rev() {
        if let Some(qi) = step.ends_query {
            for (acc, d) in adjoint.iter_mut().zip(&d_states[qi]) {
                *acc += d;
            }
        }
        let h = step.h;
        // k_bar[i] = h*b[i]*adjoint + sum_{l>i} h*a[l][i] * x_bar[l].
        let mut k_bar: Vec<Vec<f64>> = (0..stages)
            .map(|i| adjoint.iter().map(|v| h * b[i] * v).collect())
            .collect();
        let mut y_bar = adjoint.clone();
        for l in (0..stages).rev() {
            let x_bar = dynamics.vjp(&step.stage_inputs[l], &k_bar[l], &mut grads);
            for (acc, v) in y_bar.iter_mut().zip(&x_bar) {
                *acc += v;
            }
            for (j, &alj) in a[l].iter().enumerate() {
                if alj != 0.0 {
                    for (acc, v) in k_bar[j].iter_mut().zip(&x_bar) {
                        *acc += h * alj * v;
                    }
                }
            }
        }
        adjoint = y_bar;
    }
    grads.d_input = adjoint;
    Ok(grads)
}

/// Adam with bias correction. Moment state mirrors the parameter shapes.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
    step_count: u64,
}

impl Adam {
    pub fn new(params: &MlpParams, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = GradBundle::zeros_like(params);
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m_w: zeros.d_weights.clone(),
            v_w: zeros.d_weights.clone(),
            m_b: zeros.d_biases.clone(),
            v_b: zeros.d_biases,
            step_count: 0,
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &GradBundle) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for k in 0..params.n_layers() {
            update_slice(
                params.layer_weights_mut(k),
                &grads.d_weights[k],
                &mut self.m_w[k],
                &mut self.v_w[k],
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
            update_slice(
                params.layer_biases_mut(k),
                &grads.d_biases[k],
                &mut self.m_b[k],
                &mut self.v_b[k],
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_slice(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Table-style horizon grid used for the loss by default, in seconds.
pub fn default_loss_grid_sec() -> Vec<f64> {
    vec![0.08, 0.16, 0.32, 0.40, 0.56, 0.72, 0.88, 1.00]
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// May be zero (parameters then stay unchanged), otherwise positive.
    pub learning_rate: f64,
    pub seed: u64,
    /// Fixed RK4 step used for training solves.
    pub solver_step_sec: f64,
    pub loss_time_grid_sec: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Early-stop after this many epochs without validation improvement;
    /// 0 disables early stopping.
    pub patience: usize,
    pub grad_clip_max_norm: f64,
    pub hidden_widths: Vec<usize>,
    /// Index of the last observed pose of each training window.
    pub window_start_idx: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 7,
            solver_step_sec: 0.01,
            loss_time_grid_sec: default_loss_grid_sec(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 0,
            grad_clip_max_norm: 1.0,
            hidden_widths: vec![128, 128],
            window_start_idx: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if !(self.solver_step_sec.is_finite() && self.solver_step_sec > 0.0) {
            return Err(Error::invalid("solver_step_sec must be positive"));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v.is_finite() && (0.0..1.0).contains(&v)) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(self.grad_clip_max_norm.is_finite() && self.grad_clip_max_norm > 0.0) {
            return Err(Error::invalid("grad_clip_max_norm must be positive"));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        TimeGrid::new(self.loss_time_grid_sec.clone())?;
        Ok(())
    }

    pub fn loss_grid(&self) -> Result<TimeGrid> {
        let (grid, _) = TimeGrid::new(self.loss_time_grid_sec.clone())?.canonicalize();
        Ok(grid)
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub order: u8,
    pub seed: u64,
    pub epochs_completed: usize,
    pub train_mpjpe_mm: Vec<f64>,
    pub val_mpjpe_mm: Vec<f64>,
    pub wall_clock_sec_per_epoch: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_mpjpe_mm: f64,
    pub best_checkpoint_path: Option<String>,
    pub config: TrainConfig,
}

/// A supervised window: the last observed pose index within a sample, from
/// which the history slice and ground-truth targets are drawn.
pub struct Window<'a> {
    pub sample: &'a MotionSample,
    pub s0_idx: usize,
}

impl Window<'_> {
    pub fn observed(&self, history: usize) -> Result<PoseSequence> {
        if self.s0_idx + 1 < history {
            return Err(Error::InsufficientHistory {
                order: if history > 1 { 2 } else { 1 },
                needed: history,
                got: self.s0_idx + 1,
            });
        }
        self.sample
            .sequence
            .window(self.s0_idx + 1 - history, self.s0_idx + 1)
    }

    pub fn origin_time_sec(&self) -> f64 {
        self.sample.sequence.timestamp_sec(self.s0_idx)
    }

    /// Ground truth at `t_rel` seconds after the window origin: the exact
    /// oracle for synthetic samples, the matching frame otherwise.
    pub fn ground_truth(&self, t_rel: f64) -> Result<Pose> {
        let t_abs = self.origin_time_sec() + t_rel;
        if let Some(spec) = &self.sample.spec {
            return crate::data::fk_pose(spec, t_abs);
        }
        let seq = &self.sample.sequence;
        let pos = (t_abs - seq.start_time_sec()) / seq.frame_interval_sec();
        let idx = pos.round();
        if (pos - idx).abs() > 1e-6 || idx < 0.0 || idx as usize >= seq.len() {
            return Err(Error::GroundTruthUnavailable { t: t_rel });
        }
        Ok(seq.pose(idx as usize).clone())
    }

    pub fn ground_truth_grid(&self, grid: &TimeGrid) -> Result<Vec<Pose>> {
        grid.times().iter().map(|&t| self.ground_truth(t)).collect()
    }
}

/// One window per sample at `s0_idx`, validating that history and every
/// horizon in `[0, horizon_sec]` are available.
pub fn windows_for<'a>(
    samples: &'a [MotionSample],
    s0_idx: usize,
    history: usize,
    horizon_sec: f64,
) -> Result<Vec<Window<'a>>> {
    let mut out = Vec::with_capacity(samples.len());
    for sample in samples {
        let w = Window { sample, s0_idx };
        if s0_idx + 1 < history || s0_idx >= sample.sequence.len() {
            return Err(Error::InsufficientHistory {
                order: if history > 1 { 2 } else { 1 },
                needed: history + s0_idx,
                got: sample.sequence.len(),
            });
        }
        // Probe the farthest target so misconfigured windows fail up front.
        w.ground_truth(horizon_sec).map_err(|e| match e {
            Error::GroundTruthUnavailable { t } => Error::invalid(format!(
                "sample {} cannot supply ground truth at horizon {t} s from window index {s0_idx}",
                sample.name
            )),
            other => other,
        })?;
        out.push(w);
    }
    Ok(out)
}

/// Loss and parameter gradient for one window under a fixed-step solve.
fn window_loss_and_grad(
    model: &AnyPoseModel,
    window: &Window<'_>,
    grid: &TimeGrid,
    solver: &SolverConfig,
) -> Result<(f64, GradBundle)> {
    let observed = window.observed(model.order().history())?;
    let (pred, trace) = model.forecast_with_solver(&observed, grid, solver, true)?;
    let gt = window.ground_truth_grid(grid)?;
    let loss = mpjpe(&pred, &gt)?;
    let pose_grads = mpjpe_grad(&pred, &gt)?;
    let dim = model.state_dim();
    let d_states: Vec<Vec<f64>> = pose_grads
        .into_iter()
        .map(|mut g| {
            // Order 2 states carry a velocity half the loss does not touch.
            g.resize(dim, 0.0);
            g
        })
        .collect();
    let dynamics = model.dynamics();
    let tape = trace.tape.expect("tape recorded");
    let grads = backward_through_solve(&dynamics, &tape, &d_states)?;
    Ok((loss, grads))
}

fn validation_mpjpe(
    model: &AnyPoseModel,
    windows: &[Window<'_>],
    grid: &TimeGrid,
    solver: &SolverConfig,
) -> Result<f64> {
    let mut acc = 0.0;
    for w in windows {
        let observed = w.observed(model.order().history())?;
        let (pred, _) = model.forecast_with_solver(&observed, grid, solver, false)?;
        let gt = w.ground_truth_grid(grid)?;
        acc += mpjpe(&pred, &gt)?;
    }
    Ok(acc / windows.len() as f64)
}

/// Train a fresh model on the dataset's train split, tracking validation
/// MPJPE per epoch and retaining the best-validation parameters.
///
/// If `checkpoint_out` is given the best checkpoint is written there, also
/// on divergence abort.
pub fn train(
    order: OdeOrder,
    dataset: &DatasetSplit,
    cfg: &TrainConfig,
    checkpoint_out: Option<&Path>,
) -> Result<(AnyPoseModel, TrainReport)> {
    cfg.validate()?;
    let m = dataset.m_joints()?;
    let dt = dataset.frame_interval_sec()?;
    let grid = cfg.loss_grid()?;
    let solver = SolverConfig::fixed(SolverMethod::Rk4, cfg.solver_step_sec);

    let mut model = AnyPoseModel::new(order, m, &cfg.hidden_widths, dt, cfg.seed)?;
    let history = order.history();
    let train_windows = windows_for(&dataset.train, cfg.window_start_idx, history, grid.last())?;
    if train_windows.is_empty() {
        return Err(Error::invalid("no training windows"));
    }
    let val_windows = windows_for(
        &dataset.validation,
        cfg.window_start_idx,
        history,
        grid.last(),
    )?;

    let mut adam = Adam::new(
        model.params(),
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.epsilon,
    );

    let mut train_curve = Vec::with_capacity(cfg.epochs);
    let mut val_curve = Vec::with_capacity(cfg.epochs);
    let mut wall_clock = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.params().clone();

    let write_best = |params: &MlpParams, model: &AnyPoseModel| -> Result<Option<String>> {
        if let Some(path) = checkpoint_out {
            let mut best_model = model.clone();
            *best_model.params_mut() = params.clone();
            best_model.save(path)?;
            Ok(Some(path.display().to_string()))
        } else {
            Ok(None)
        }
    };

    let mut indices: Vec<usize> = (0..train_windows.len()).collect();
    for epoch in 0..cfg.epochs {
        let t_epoch = Instant::now();
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E3779B97F4A7C15));
        indices.shuffle(&mut rng);

        let mut loss_acc = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            let mut grads: Option<GradBundle> = None;
            let mut batch_loss = 0.0;
            for &wi in batch {
                // A solve blowing up mid-training is a divergence, not a
                // caller error: abort with the best checkpoint retained.
                let (loss, g) =
                    match window_loss_and_grad(&model, &train_windows[wi], &grid, &solver) {
                        Ok(r) => r,
                        Err(Error::NonFiniteState { .. } | Error::MaxSteps { .. }) => {
                            let path = write_best(&best_params, &model)?;
                            log::error!(
                                "training diverged at epoch {epoch}; best checkpoint: {path:?}"
                            );
                            return Err(Error::Diverged { epoch });
                        }
                        Err(e) => return Err(e),
                    };
                batch_loss += loss;
                match &mut grads {
                    Some(acc) => acc.add_assign_params(&g),
                    None => grads = Some(g),
                }
            }
            let mut grads = grads.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            grads.scale(inv);
            batch_loss *= inv;
            if !batch_loss.is_finite() || !grads.is_finite() {
                let path = write_best(&best_params, &model)?;
                log::error!(
                    "training diverged at epoch {epoch}; best checkpoint: {:?}",
                    path
                );
                return Err(Error::Diverged { epoch });
            }
            grads.clip_param_global_norm(cfg.grad_clip_max_norm);
            if cfg.learning_rate > 0.0 {
                adam.step(model.params_mut(), &grads);
            }
            loss_acc += batch_loss * batch.len() as f64;
        }
        let train_mpjpe = loss_acc / train_windows.len() as f64;

        let val_mpjpe = if val_windows.is_empty() {
            train_mpjpe
        } else {
            match validation_mpjpe(&model, &val_windows, &grid, &solver) {
                Ok(v) => v,
                Err(Error::NonFiniteState { .. } | Error::MaxSteps { .. }) => {
                    let path = write_best(&best_params, &model)?;
                    log::error!("validation diverged at epoch {epoch}; best checkpoint: {path:?}");
                    return Err(Error::Diverged { epoch });
                }
                Err(e) => return Err(e),
            }
        };
        if !val_mpjpe.is_finite() {
            let path = write_best(&best_params, &model)?;
            log::error!(
                "validation diverged at epoch {epoch}; best checkpoint: {:?}",
                path
            );
            return Err(Error::Diverged { epoch });
        }
        train_curve.push(train_mpjpe);
        val_curve.push(val_mpjpe);
        wall_clock.push(t_epoch.elapsed().as_secs_f64());
        if val_mpjpe < best_val {
            best_val = val_mpjpe;
            best_epoch = epoch;
            best_params = model.params().clone();
        }
        log::debug!("epoch {epoch}: train {train_mpjpe:.3} mm, val {val_mpjpe:.3} mm");

        if cfg.patience > 0 && epoch >= best_epoch + cfg.patience {
            log::info!("early stop at epoch {epoch} (best epoch {best_epoch})");
            break;
        }
    }

    *model.params_mut() = best_params;
    let best_checkpoint_path = write_best(model.params(), &model)?;
    let report = TrainReport {
        order: order.as_u8(),
        seed: cfg.seed,
        epochs_completed: train_curve.len(),
        train_mpjpe_mm: train_curve,
        val_mpjpe_mm: val_curve,
        wall_clock_sec_per_epoch: wall_clock,
        best_epoch,
        best_val_mpjpe_mm: best_val,
        best_checkpoint_path,
        config: cfg.clone(),
    };
    Ok((model, report))
}
