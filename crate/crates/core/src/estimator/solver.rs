use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Adam;
use crate::camera_model::{project_to_world, CameraParams, WorldPoint};
use crate::cpl::{project_with_jacobian, Component, CorrespondenceSet, DISPARITY_GUARD, N_CAMERA};
use crate::error::{Error, Result};

/// Loss below which a fit counts as exact.
const EXACT_LOSS: f64 = 1e-12;
/// Smallest epoch-over-epoch improvement that resets the plateau counter.
const MIN_IMPROVEMENT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stopping_patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Factor applied to the learning rate each time training hits a
    /// plateau. `1.0` disables decay, so a plateau simply stops training.
    pub lr_decay: f64,
    pub min_learning_rate: f64,
    /// Camera parameters held at their initial value by `fit_parameters`.
    pub fixed: Vec<Component>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: 200,
            early_stopping_patience: 20,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            lr_decay: 0.5,
            min_learning_rate: 1e-9,
            fixed: Vec::new(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "max_epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig("lr_decay must lie in (0, 1]".into()));
        }
        if let Some(c) = self.fixed.iter().find(|c| !c.is_camera()) {
            return Err(Error::InvalidConfig(format!("cannot fix world head `{c}`")));
        }
        Ok(())
    }

    pub fn adam(&self, len: usize) -> Adam {
        Adam::new(
            len,
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.epsilon,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Best parameters seen.
    pub params: CameraParams,
    /// Full-data loss after every epoch.
    pub loss_trace: Vec<f64>,
    pub epochs_run: usize,
    pub converged: bool,
    /// Loss at `params`; never above `loss_trace[0]`.
    pub final_loss: f64,
}

/// Mean absolute world-coordinate error between projected observations and
/// the targets.
pub fn world_mae(obs: &CorrespondenceSet, target: &[WorldPoint], p: &CameraParams) -> Result<f64> {
    let mut sum = 0.0;
    for (o, t) in obs.observations().iter().zip(target) {
        let w = project_to_world(o, p)?;
        sum += (w.x - t.x).abs() + (w.y - t.y).abs() + (w.z - t.z).abs();
    }
    Ok(sum / (3.0 * obs.len() as f64))
}

fn batch_gradient(
    obs: &CorrespondenceSet,
    target: &[WorldPoint],
    p: &CameraParams,
    batch: &[usize],
) -> Result<[f64; N_CAMERA]> {
    let mut g = [0.0; N_CAMERA];
    for &i in batch {
        let (w, jac) = project_with_jacobian(&obs.observations()[i], p)?;
        let t = target[i];
        let r = [w.x - t.x, w.y - t.y, w.z - t.z];
        for (row, res) in r.iter().enumerate() {
            let s = if *res > 0.0 {
                1.0
            } else if *res < 0.0 {
                -1.0
            } else {
                continue;
            };
            for k in 0..N_CAMERA {
                g[k] += s * jac.0[row][k];
            }
        }
    }
    let norm = 3.0 * batch.len() as f64;
    g.iter_mut().for_each(|x| *x /= norm);
    Ok(g)
}

fn check_disparities(obs: &CorrespondenceSet, p: &CameraParams) -> Result<()> {
    if obs
        .observations()
        .iter()
        .any(|o| o.effective_disparity(p).abs() < DISPARITY_GUARD)
    {
        return Err(Error::ZeroDisparity);
    }
    Ok(())
}

/// Recovers camera parameters by minimising the world-point MAE with Adam.
///
/// Minibatches are drawn from a seeded shuffle. Each parameter's step is
/// scaled by `max(1, |initial value|)` so that a single learning rate suits
/// focal lengths, metres and radians alike. When the loss stops improving
/// for `early_stopping_patience` epochs the iterate returns to the best
/// point and the learning rate is multiplied by `lr_decay`; once it would
/// fall below `min_learning_rate` the fit is declared converged.
pub fn fit_parameters(
    obs: &CorrespondenceSet,
    target_world: &[WorldPoint],
    init: &CameraParams,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if obs.len() != target_world.len() {
        return Err(Error::LengthMismatch(obs.len(), target_world.len()));
    }
    let free: Vec<usize> = Component::CAMERA
        .iter()
        .filter(|c| !cfg.fixed.contains(c))
        .map(|c| c.index())
        .collect();
    if obs.len() < free.len() {
        return Err(Error::InvalidConfig(format!(
            "{} correspondences cannot constrain {} free parameters",
            obs.len(),
            free.len()
        )));
    }
    init.validate()?;
    check_disparities(obs, init)?;

    let mut p = init.to_array();
    let scale: Vec<f64> = free.iter().map(|&k| p[k].abs().max(1.0)).collect();
    let mut adam = cfg.adam(free.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..obs.len()).collect();

    let initial = world_mae(obs, target_world, init)?;
    if !initial.is_finite() {
        return Err(Error::DivergenceDetected(0));
    }
    let mut best = initial;
    let mut best_p = p;
    let mut stall = 0;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut free_vals = vec![0.0; free.len()];
    let mut free_grad = vec![0.0; free.len()];

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let params = CameraParams::from_array(p);
            let g = batch_gradient(obs, target_world, &params, batch)?;
            for (j, &k) in free.iter().enumerate() {
                free_vals[j] = p[k];
                free_grad[j] = g[k];
            }
            adam.step_scaled(&mut free_vals, &free_grad, Some(&scale));
            for (j, &k) in free.iter().enumerate() {
                p[k] = free_vals[j];
            }
            check_disparities(obs, &CameraParams::from_array(p))?;
        }
        let loss = world_mae(obs, target_world, &CameraParams::from_array(p))?;
        if !loss.is_finite() {
            return Err(Error::DivergenceDetected(epoch));
        }
        trace.push(loss);
        if loss < best - MIN_IMPROVEMENT {
            stall = 0;
        } else {
            stall += 1;
        }
        if loss < best {
            best = loss;
            best_p = p;
        }
        if best <= EXACT_LOSS {
            converged = true;
            break;
        }
        if stall >= cfg.early_stopping_patience {
            let next_lr = adam.learning_rate * cfg.lr_decay;
            if cfg.lr_decay < 1.0 && next_lr >= cfg.min_learning_rate {
                adam.learning_rate = next_lr;
                adam.reset();
                p = best_p;
                stall = 0;
            } else {
                converged = true;
                break;
            }
        }
    }
    Ok(FitResult {
        params: CameraParams::from_array(best_p),
        epochs_run: trace.len(),
        loss_trace: trace,
        converged,
        final_loss: best,
    })
}
