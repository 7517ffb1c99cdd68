//! Adam training on random windows of a token stream.

use super::Model;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Tape};

const TAG_BATCH: u64 = 0xba7c;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, batch_size: 8 }
    }
}

/// First and second moment estimates plus the number of updates applied.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let zeros = || model.params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }
}

/// Start offsets of the training windows for global step `step`; a pure
/// function of `(seed, step)` so resumed runs draw the same batches.
pub(crate) fn batch_offsets(seed: u64, step: u64, batch: usize, limit: usize) -> Vec<usize> {
    let mut rng = Rng::derive(seed, &[TAG_BATCH, step]);
    (0..batch).map(|_| rng.below(limit)).collect()
}

/// Runs `steps` Adam updates and returns the batch loss measured before each.
///
/// Gradients flow through queries, keys and values; the elliptical metric is a
/// constant of each forward pass.
pub fn train(model: &mut Model, state: &mut AdamState, tokens: &[usize], steps: usize, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let ctx = model.cfg.context;
    if tokens.len() < 10 * ctx {
        return Err(Error::Input(format!("{} training tokens, need at least {}", tokens.len(), 10 * ctx)));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Parameter("batch_size and lr must be positive".into()));
    }
    if state.m.len() != model.params.len() {
        return Err(Error::Parameter("optimizer state does not match the model".into()));
    }
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let offsets = batch_offsets(model.cfg.seed, state.step, cfg.batch_size, tokens.len() - ctx);
        let mut tape = Tape::new();
        let p = model.leaves(&mut tape);
        let mut per_seq = Vec::with_capacity(offsets.len());
        for &o in &offsets {
            let tr = model.forward_on_tape(&mut tape, &p, &tokens[o..o + ctx], Default::default())?;
            per_seq.push(tape.cross_entropy(tr.logits, &tokens[o + 1..o + ctx + 1])?);
        }
        let loss = tape.mean_scalars(&per_seq)?;
        let value = tape.value(loss)[(0, 0)];
        if !value.is_finite() {
            return Err(Error::Training { step: state.step as usize, loss: value });
        }
        let grads = tape.backward(loss)?;
        state.step += 1;
        let t = state.step as i32;
        let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
        for (i, param) in model.params.iter_mut().enumerate() {
            let Some(g) = grads.get(p[i]) else { continue };
            let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
            for (((w, &gi), mi), vi) in param.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                *w -= cfg.lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
            }
        }
        losses.push(value);
    }
    Ok(losses)
}
