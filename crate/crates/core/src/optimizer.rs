//! Adam over the six local pose parameters, plateau step-size decay, and the
//! per-candidate refinement loop.

use crate::error::{Error, Result};
use crate::geometry::{LocalPoseParam, Panorama, PointCloud, Pose};
use crate::sampler::{sampling_loss_grad, LossGradient};

/// Step size used for every refinement unless configured otherwise.
pub const DEFAULT_STEP_SIZE: f64 = 0.1;
/// Step-size multiplier applied on a plateau.
pub const DEFAULT_DECAY_FACTOR: f64 = 0.8;
/// Consecutive non-improving iterations that count as a plateau.
pub const DEFAULT_PATIENCE: usize = 5;

/// Bias-corrected Adam moments for a 6-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: [f64; 6],
    pub v: [f64; 6],
    pub step_count: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(alpha: f64) -> Self {
        Self {
            m: [0.0; 6],
            v: [0.0; 6],
            step_count: 0,
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update to `param` in place.
    pub fn step(&mut self, grad: &[f64; 6], param: &mut [f64; 6]) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for i in 0..6 {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            param[i] -= self.alpha * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Decays the Adam step size after `patience` consecutive updates that fail
/// to strictly improve on the best loss seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState {
    pub best_loss: f64,
    pub stall_count: usize,
    pub decay_factor: f64,
    pub patience: usize,
}

impl SchedulerState {
    pub fn new(initial_loss: f64) -> Self {
        Self::with_rule(initial_loss, DEFAULT_DECAY_FACTOR, DEFAULT_PATIENCE)
    }

    pub fn with_rule(initial_loss: f64, decay_factor: f64, patience: usize) -> Self {
        Self {
            best_loss: initial_loss,
            stall_count: 0,
            decay_factor,
            patience,
        }
    }

    pub fn update(&mut self, adam: &mut AdamState, loss: f64) {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.stall_count = 0;
            return;
        }
        self.stall_count += 1;
        if self.stall_count >= self.patience {
            adam.alpha *= self.decay_factor;
            self.stall_count = 0;
        }
    }
}

/// Loss history of one refinement run. `loss_history[0]` is the loss at the
/// starting pose; entry `k` is the loss after `k` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTrace {
    pub loss_history: Vec<f64>,
    pub final_param: LocalPoseParam,
    pub final_loss: f64,
}

impl RefinementTrace {
    pub fn final_pose(&self) -> Pose {
        self.final_param.pose()
    }
}

/// Knobs of a refinement run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub n_iter: usize,
    pub alpha0: f64,
    pub gravity_known: bool,
    pub decay_factor: f64,
    pub patience: usize,
}

impl RefineOptions {
    pub fn new(n_iter: usize, alpha0: f64, gravity_known: bool) -> Self {
        Self {
            n_iter,
            alpha0,
            gravity_known,
            decay_factor: DEFAULT_DECAY_FACTOR,
            patience: DEFAULT_PATIENCE,
        }
    }
}

/// Runs Adam with plateau decay on an arbitrary objective returning the loss
/// and its gradient with respect to `(omega, tau)`.
///
/// The objective is evaluated exactly `n_iter + 1` times. An infinite loss
/// freezes the parameters for that iteration. With `gravity_known`, only the
/// z-component of `omega` is ever updated.
pub fn refine_with<F>(start: &Pose, options: &RefineOptions, mut objective: F) -> Result<RefinementTrace>
where
    F: FnMut(&LocalPoseParam) -> LossGradient,
{
    if options.n_iter == 0 {
        return Err(Error::InvalidArgument("refinement needs at least one iteration".into()));
    }
    if !(options.alpha0 > 0.0) {
        return Err(Error::InvalidArgument("step size must be positive".into()));
    }
    let mut param = LocalPoseParam::at(start);
    let mut current = objective(&param);
    let mut loss_history = Vec::with_capacity(options.n_iter + 1);
    loss_history.push(current.loss);

    let mut adam = AdamState::new(options.alpha0);
    let mut scheduler = SchedulerState::with_rule(current.loss, options.decay_factor, options.patience);
    for _ in 0..options.n_iter {
        if current.loss.is_finite() {
            let mut grad = current.as_array();
            if options.gravity_known {
                grad[0] = 0.0;
                grad[1] = 0.0;
            }
            let mut v = param.to_vector();
            adam.step(&grad, &mut v);
            if options.gravity_known {
                v[0] = 0.0;
                v[1] = 0.0;
            }
            param = param.with_vector(&v);
        }
        current = objective(&param);
        loss_history.push(current.loss);
        scheduler.update(&mut adam, current.loss);
    }
    Ok(RefinementTrace {
        final_loss: current.loss,
        loss_history,
        final_param: param,
    })
}

/// Sampling-loss refinement from `start`.
pub fn refine(cloud: &PointCloud, image: &Panorama, start: &Pose, options: &RefineOptions) -> Result<RefinementTrace> {
    refine_with(start, options, |p| sampling_loss_grad(cloud, image, p))
}
