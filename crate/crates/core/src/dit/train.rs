//! Flow-matching training steps with Adam or plain gradient descent.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::flow::{gaussian_noise, make_xt, target_velocity};
use super::model::Dit;
use super::tape::Tape;
use super::tensor::Mat;
use crate::error::{Error, Result};
use crate::rng;

/// One training clip in raw token layout `[tokens, C*p*p]`.
#[derive(Debug, Clone)]
pub struct FlowExample {
    pub source: Mat,
    pub target: Mat,
    pub light: Option<Mat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd {
        lr: f64,
    },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    /// Lower end of the training time range `t ~ U[t_min, 1]`.
    pub t_min: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::adam(2e-3),
            clip: Some(1.0),
            t_min: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min <= 1.0) {
            return Err(Error::Config(format!(
                "t_min {} outside (0, 1]",
                self.t_min
            )));
        }
        let lr = match self.optimizer {
            Optimizer::Adam { lr, .. } | Optimizer::Sgd { lr } => lr,
        };
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {lr} is invalid")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Dit,
    pub config: TrainConfig,
    pub seed: u64,
    pub step: u64,
    /// Adam first and second moments per trainable tensor.
    pub moments: BTreeMap<String, (Mat, Mat)>,
}

const TRAIN_STREAM: u64 = 0x7a1;

impl TrainState {
    pub fn new(model: Dit, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(TrainState {
            model,
            config,
            seed,
            step: 0,
            moments: BTreeMap::new(),
        })
    }
}

/// Noise and time of sample `i` at training step `step`.
fn draw(seed: u64, step: u64, i: usize, rows: usize, cols: usize, t_min: f64) -> (Mat, f64) {
    let path = [TRAIN_STREAM, step, i as u64];
    let t = t_min + (1.0 - t_min) * rng::stream(seed, &path).random::<f64>();
    let eps = gaussian_noise(rows, cols, seed, &[TRAIN_STREAM, step, i as u64, 1]);
    (eps, t)
}

/// Loss and gradients of one example at a fixed `(eps, t)`.
pub fn example_gradients(
    model: &Dit,
    ex: &FlowExample,
    eps: &Mat,
    t: f64,
) -> Result<(f64, BTreeMap<String, Mat>)> {
    let x_t = make_xt(&ex.target, eps, t)?;
    let u = target_velocity(&ex.target, eps)?;
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, true);
    let v = model.forward(&mut tape, &p, &x_t, &ex.source, ex.light.as_ref(), t)?;
    let loss = tape.mse(v, u);
    let value = tape.value(loss).data[0];
    let mut grads = tape.backward(loss);
    let mut out = BTreeMap::new();
    for name in &model.trainable {
        if let Some(g) = grads.take(p[name]) {
            out.insert(name.clone(), g);
        }
    }
    Ok((value, out))
}

/// Mean flow loss of a batch at the noise and times step `step` would draw,
/// without updating anything.
pub fn batch_loss(state: &TrainState, batch: &[FlowExample], step: u64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let losses = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let (eps, t) = draw(
                state.seed,
                step,
                i,
                ex.target.rows,
                ex.target.cols,
                state.config.t_min,
            );
            let x_t = make_xt(&ex.target, &eps, t)?;
            let v = state
                .model
                .velocity(&x_t, &ex.source, ex.light.as_ref(), t)?;
            super::flow::flow_loss(&v, &ex.target, &eps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// One optimizer step on the trainable tensors. Returns the batch loss
/// measured before the update.
pub fn train_step(state: &mut TrainState, batch: &[FlowExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let step = state.step;
    let seed = state.seed;
    let t_min = state.config.t_min;
    let model = &state.model;
    let per_sample = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let (eps, t) = draw(seed, step, i, ex.target.rows, ex.target.cols, t_min);
            example_gradients(model, ex, &eps, t)
        })
        .collect::<Result<Vec<_>>>()?;

    // ordered reduction keeps the result independent of thread count
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads: BTreeMap<String, Mat> = BTreeMap::new();
    for (l, g) in per_sample {
        loss += l * scale;
        for (name, m) in g {
            match grads.get_mut(&name) {
                Some(acc) => acc.add_assign(&m),
                None => {
                    grads.insert(name, m);
                }
            }
        }
    }
    for g in grads.values_mut() {
        *g = g.scale(scale);
    }
    let norm = grads.values().map(Mat::sum_squares).sum::<f64>().sqrt();
    if !loss.is_finite() || !norm.is_finite() {
        return Err(Error::NonFiniteLoss {
            loss,
            step,
            detail: format!("gradient norm {norm}, batch of {}", batch.len()),
        });
    }
    let clip = match state.config.clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    apply_update(state, grads, clip);
    state.step += 1;
    Ok(loss)
}

fn apply_update(state: &mut TrainState, grads: BTreeMap<String, Mat>, clip: f64) {
    let step = state.step + 1;
    for (name, g) in grads {
        if !state.model.trainable.contains(&name) {
            continue;
        }
        let param = state.model.params.get_mut(&name).expect("bound parameter");
        match state.config.optimizer {
            Optimizer::Sgd { lr } => {
                for (p, gv) in param.data.iter_mut().zip(&g.data) {
                    *p -= lr * clip * gv;
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let (m, v) = state.moments.entry(name).or_insert_with(|| {
                    (
                        Mat::zeros(param.rows, param.cols),
                        Mat::zeros(param.rows, param.cols),
                    )
                });
                let bc1 = 1.0 - beta1.powi(step as i32);
                let bc2 = 1.0 - beta2.powi(step as i32);
                for i in 0..param.data.len() {
                    let gv = g.data[i] * clip;
                    m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gv;
                    v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gv * gv;
                    let mh = m.data[i] / bc1;
                    let vh = v.data[i] / bc2;
                    param.data[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}
