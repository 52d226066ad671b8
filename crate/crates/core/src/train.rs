//! Supervised training with Adam on the L1 velocity-update loss.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gn::{self, GNParams, GraphBatch, ModelConfig};
use crate::sim::{Record, TrajectoryDataset};
use crate::{fmt17, mix_seed, Error, Result};

/// Records per forward pass when evaluating.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Graphs (snapshots) per optimizer step.
    pub batch_size: usize,
    pub steps: usize,
    pub eval_interval: usize,
    /// Cap on records scored for each loss-curve point; 0 means all.
    pub eval_max_records: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            steps: 20_000,
            eval_interval: 1000,
            eval_max_records: 2000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.eval_interval == 0 {
            return bad("eval interval must be at least 1");
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub train_loss: f64,
    /// `None` when the held-out split is empty.
    pub eval_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: GNParams,
    pub curve: Vec<LossPoint>,
}

/// Number of trailing simulations held out for evaluation.
pub fn holdout_sims(n_sims: usize) -> usize {
    if n_sims < 2 {
        0
    } else {
        (n_sims / 10).max(1)
    }
}

fn check_dims(params_dim: usize, dataset: &TrajectoryDataset) -> Result<()> {
    if dataset.env.dim != params_dim {
        return Err(Error::Dimension(format!(
            "dataset is {}D but the model is {}D",
            dataset.env.dim, params_dim
        )));
    }
    Ok(())
}

/// Sum of |Δv_pred − Δv_true| and the entry count over `records`.
fn abs_error_sum(params: &GNParams, dataset: &TrajectoryDataset, records: &[&Record]) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut count = 0;
    for chunk in records.chunks(EVAL_CHUNK) {
        let batch = GraphBatch::from_records(&dataset.env, chunk.iter().copied())?;
        let out = gn::forward(params, &batch.graph, &batch.attrs)?;
        sum += out
            .dv
            .data()
            .iter()
            .zip(batch.targets.data())
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>();
        count += batch.targets.data().len();
    }
    Ok((sum, count))
}

fn evaluate_records(params: &GNParams, dataset: &TrajectoryDataset, records: &[&Record]) -> Result<f64> {
    let (sum, count) = abs_error_sum(params, dataset, records)?;
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(sum / count as f64)
}

/// Mean absolute velocity-update error over every record, node and
/// component (fixed nodes included).
pub fn evaluate(params: &GNParams, dataset: &TrajectoryDataset) -> Result<f64> {
    check_dims(params.config.dim, dataset)?;
    let records: Vec<&Record> = dataset.records.iter().collect();
    evaluate_records(params, dataset, &records)
}

/// At most `cap` records picked at a fixed stride (all of them when `cap` is 0).
fn strided<'a>(records: &[&'a Record], cap: usize) -> Vec<&'a Record> {
    if cap == 0 || records.len() <= cap {
        return records.to_vec();
    }
    (0..cap).map(|i| records[i * records.len() / cap]).collect()
}

/// Trains from a fresh He initialization seeded by `train.seed`.
pub fn train(
    dataset: &TrajectoryDataset,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let init = gn::init_params(model, config.seed)?;
    train_from(dataset, init, config)
}

/// Trains starting from `params`. The loss curve is recorded before the first
/// update, every `eval_interval` steps, and after the last step.
pub fn train_from(
    dataset: &TrajectoryDataset,
    mut params: GNParams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    params.validate()?;
    check_dims(params.config.dim, dataset)?;
    let held = holdout_sims(dataset.n_sims);
    let first_held = dataset.n_sims - held;
    let (train_set, eval_set): (Vec<&Record>, Vec<&Record>) =
        dataset.records.iter().partition(|r| r.sim < first_held);
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let train_probe = strided(&train_set, config.eval_max_records);
    let eval_probe = strided(&eval_set, config.eval_max_records);

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed ^ 0x7472_6169_6e));
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len());
    let mut curve = Vec::new();

    let record_point = |params: &GNParams, step: usize, curve: &mut Vec<LossPoint>| -> Result<()> {
        let train_loss = evaluate_records(params, dataset, &train_probe)?;
        let eval_loss = if eval_probe.is_empty() {
            None
        } else {
            Some(evaluate_records(params, dataset, &eval_probe)?)
        };
        if !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("training loss evaluated to {train_loss}"),
            });
        }
        curve.push(LossPoint {
            step,
            train_loss,
            eval_loss,
        });
        Ok(())
    };

    record_point(&params, 0, &mut curve)?;
    for step in 1..=config.steps {
        let batch_records = (0..config.batch_size).map(|_| train_set[rng.random_range(0..train_set.len())]);
        let batch = GraphBatch::from_records(&dataset.env, batch_records)?;
        let (loss, grads) = gn::loss_and_grad(&params, &batch)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("batch loss {loss}; lower the learning rate or check the data"),
            });
        }
        adam_step(&mut flat, &grads, &mut adam, config)?;
        params.set_flat(&flat)?;
        if step % config.eval_interval == 0 || step == config.steps {
            record_point(&params, step, &mut curve)?;
        }
    }
    Ok(TrainOutcome { params, curve })
}

/// Loss curve as CSV with header `step,train_loss,eval_loss`; an empty
/// `eval_loss` field means there was no held-out data.
pub fn write_loss_csv<W: Write>(curve: &[LossPoint], mut out: W) -> Result<()> {
    writeln!(out, "step,train_loss,eval_loss")?;
    for p in curve {
        let eval = p.eval_loss.map(fmt17::format).unwrap_or_default();
        writeln!(out, "{},{},{}", p.step, fmt17::format(p.train_loss), eval)?;
    }
    out.flush()?;
    Ok(())
}
