//! Adam training loop with the step-decay schedule: learning rate
//! `lr0 / 10^(epoch/10)`, batches of 10, loss summed over the TAB heads.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{model_forward, ModelError, ModelParams};
use crate::sampler::{SampledInputs, Task};
use crate::tensor::{Element, Graph, Tensor};

/// Optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Task defaults: batch 10, lr 1e-4, dropout 0.3, and 15 epochs for
    /// anticipation or 25 otherwise.
    pub fn for_task(task: Task) -> Self {
        TrainConfig {
            batch_size: 10,
            lr0: 1e-4,
            dropout: 0.3,
            epochs: match task {
                Task::Anticipation => 15,
                Task::Recognition | Task::Activity => 25,
            },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.epochs == 0 || self.lr0 <= 0.0 {
            return Err(TrainError::InvalidConfig(format!("{self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Learning rate at a zero-based epoch index: `lr0 / 10^(epoch/10)`.
///
/// Division by an exactly representable power of ten keeps the decade
/// values exact (1e-4, 1e-5, 1e-6, ...).
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let decade = (epoch / 10) as i32;
    cfg.lr0 / 10f64.powi(decade)
}

/// Errors raised by the training loop.
#[derive(Debug)]
pub enum TrainError {
    InvalidConfig(String),
    EmptyDataset,
    GradientShape { tensor: usize, expected: usize, got: usize },
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    Model(ModelError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::InvalidConfig(msg) => write!(f, "invalid train config: {msg}"),
            TrainError::EmptyDataset => write!(f, "training dataset is empty"),
            TrainError::GradientShape { tensor, expected, got } => {
                write!(f, "gradient {tensor}: expected {expected} elements, got {got}")
            }
            TrainError::NonFiniteLoss { epoch, batch, loss } => {
                write!(f, "non-finite loss {loss} at epoch {epoch}, batch {batch}")
            }
            TrainError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

/// One training sample: the sampled snippet sets and the action label.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub id: String,
    pub inputs: SampledInputs,
    pub label: usize,
}

/// First/second moment buffers mirroring the model parameters.
#[derive(Debug, Clone)]
pub struct AdamState<E: Element> {
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
    step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl<E: Element> AdamState<E> {
    pub fn for_params(params: &ModelParams<E>) -> Self {
        let sizes: Vec<usize> = params.named_tensors().iter().map(|(_, t)| t.numel()).collect();
        AdamState {
            m: sizes.iter().map(|&n| vec![E::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![E::zero(); n]).collect(),
            step: 0,
        }
    }

    /// Zero-initialized buffers for explicitly given tensor sizes.
    pub fn for_sizes(sizes: &[usize]) -> Self {
        AdamState {
            m: sizes.iter().map(|&n| vec![E::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![E::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over aligned parameter/gradient lists.
pub fn adam_step<E: Element>(
    params: &mut [&mut Tensor<E>],
    grads: &[Vec<E>],
    state: &mut AdamState<E>,
    lr: f64,
) -> Result<(), TrainError> {
    assert_eq!(params.len(), state.m.len(), "optimizer state size mismatch");
    if params.len() != grads.len() {
        return Err(TrainError::GradientShape {
            tensor: 0,
            expected: params.len(),
            got: grads.len(),
        });
    }
    for (i, p) in params.iter().enumerate() {
        if grads[i].len() != p.numel() {
            return Err(TrainError::GradientShape {
                tensor: i,
                expected: p.numel(),
                got: grads[i].len(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let beta1 = E::from_f64(ADAM_BETA1);
    let beta2 = E::from_f64(ADAM_BETA2);
    let one_minus_beta1 = E::from_f64(1.0 - ADAM_BETA1);
    let one_minus_beta2 = E::from_f64(1.0 - ADAM_BETA2);
    let bc1 = E::from_f64(1.0 - ADAM_BETA1.powi(t));
    let bc2 = E::from_f64(1.0 - ADAM_BETA2.powi(t));
    let lr_e = E::from_f64(lr);
    let eps = E::from_f64(ADAM_EPS);
    for (i, p) in params.iter_mut().enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let data = p.data_mut();
        for (j, &g) in grads[i].iter().enumerate() {
            m[j] = beta1 * m[j] + one_minus_beta1 * g;
            v[j] = beta2 * v[j] + one_minus_beta2 * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            data[j] = data[j] - lr_e * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Per-epoch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

impl EpochStats {
    /// Line-delimited record for logs.
    pub fn record(&self) -> String {
        format!(
            "epoch={} lr={:e} loss={:.6} train_acc={:.2}",
            self.epoch, self.lr, self.mean_loss, self.train_accuracy
        )
    }
}

/// Owns the mutable training state: optimizer moments, the RNG that
/// drives shuffling and dropout, and the epoch counter.
#[derive(Debug, Clone)]
pub struct Trainer<E: Element> {
    pub config: TrainConfig,
    pub adam: AdamState<E>,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
}

impl<E: Element> Trainer<E> {
    pub fn new(config: TrainConfig, params: &ModelParams<E>) -> Result<Self, TrainError> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer {
            adam: AdamState::for_params(params),
            rng,
            epoch: 0,
            config,
        })
    }

    /// Restores a trainer mid-run (checkpoint resume).
    pub fn resume(
        config: TrainConfig,
        adam: AdamState<E>,
        rng: ChaCha8Rng,
        epoch: usize,
    ) -> Self {
        Trainer {
            config,
            adam,
            rng,
            epoch,
        }
    }

    /// Runs one epoch: seeded shuffle, minibatches of `batch_size` (final
    /// partial batch kept), loss summed over TAB heads, one Adam step per
    /// batch. Advances the epoch counter.
    pub fn epoch_step(
        &mut self,
        params: &mut ModelParams<E>,
        dataset: &[LabeledExample],
    ) -> Result<EpochStats, TrainError> {
        if dataset.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let lr = lr_at(self.epoch, &self.config);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut self.rng);

        let mut total_loss = 0.0f64;
        let mut correct = 0usize;
        for (batch_idx, batch) in order.chunks(self.config.batch_size).enumerate() {
            let mut g: Graph<E> = Graph::new();
            let bound = params.bind(&mut g, true);
            let mut head_logits: Vec<Vec<crate::tensor::Var>> =
                vec![Vec::with_capacity(batch.len()); params.tabs.len()];
            let labels: Vec<usize> = batch.iter().map(|&i| dataset[i].label).collect();
            for &i in batch {
                let out = model_forward(&mut g, &bound, &dataset[i].inputs, true, &mut self.rng)?;
                for (h, &lv) in out.per_tab_logits.iter().enumerate() {
                    head_logits[h].push(lv);
                }
                let probs = g.value(out.ensemble_probs).data();
                let pred = argmax(probs);
                if pred == dataset[i].label {
                    correct += 1;
                }
            }
            let mut loss = None;
            for parts in &head_logits {
                let stacked = g.concat(parts, 0).map_err(ModelError::from)?;
                let ce = g.cross_entropy(stacked, &labels).map_err(ModelError::from)?;
                loss = Some(match loss {
                    None => ce,
                    Some(acc) => g.add(acc, ce).map_err(ModelError::from)?,
                });
            }
            let loss = loss.expect("at least one TAB head");
            let loss_value = g.value(loss).data()[0].to_f64();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch: self.epoch,
                    batch: batch_idx,
                    loss: loss_value,
                });
            }
            total_loss += loss_value * batch.len() as f64;

            g.backward(loss).map_err(ModelError::from)?;
            let grads: Vec<Vec<E>> = bound
                .params
                .iter()
                .map(|&v| {
                    g.take_grad(v)
                        .unwrap_or_else(|| vec![E::zero(); g.value(v).numel()])
                })
                .collect();
            drop(g);
            let mut tensors = params.tensors_mut();
            adam_step(&mut tensors, &grads, &mut self.adam, lr)?;
        }

        let stats = EpochStats {
            epoch: self.epoch,
            lr,
            mean_loss: total_loss / dataset.len() as f64,
            train_accuracy: 100.0 * correct as f64 / dataset.len() as f64,
        };
        self.epoch += 1;
        Ok(stats)
    }
}

/// Ensemble probabilities for one sample in inference mode.
pub fn infer_probs<E: Element>(
    params: &ModelParams<E>,
    inputs: &SampledInputs,
) -> Result<Vec<E>, ModelError> {
    let mut g: Graph<E> = Graph::new();
    let bound = params.bind(&mut g, false);
    // Inference consumes no randomness; any seed gives the same output.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model_forward(&mut g, &bound, inputs, false, &mut rng)?;
    Ok(g.value(out.ensemble_probs).data().to_vec())
}

/// Top-1 accuracy (percent) of inference-mode predictions.
pub fn eval_top1<E: Element>(
    params: &ModelParams<E>,
    dataset: &[LabeledExample],
) -> Result<f64, ModelError> {
    let mut correct = 0usize;
    for ex in dataset {
        let probs = infer_probs(params, &ex.inputs)?;
        if argmax(&probs) == ex.label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / dataset.len().max(1) as f64)
}

fn argmax<E: Element>(values: &[E]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
