//! Adam and the training loop. Training is single-threaded and fully
//! deterministic given (seed, data, config): batches are reshuffled every
//! epoch with a seed derived as `seed ^ epoch_index`, and the constant
//! hyperparameters are never scheduled.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossWeights};
use crate::nets::{decode, encode, ModelParams};
use crate::tensor::Graph;

/// Per-parameter Adam moments plus the shared hyperparameters.
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams, lr: f64, beta1: f64, beta2: f64) -> AdamState {
        AdamState {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: params.params().iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            v: params.params().iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub(crate) fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    pub(crate) fn restore(&mut self, t: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}

/// One bias-corrected Adam update. Gradients are read from the parameter
/// tensors (accumulated by a preceding backward pass) and consumed; a
/// parameter without a gradient is treated as having a zero gradient.
pub fn adam_step(params: &mut ModelParams, state: &mut AdamState) -> Result<()> {
    if state.m.len() != params.params().len() {
        return Err(Error::Contract(format!(
            "optimizer state tracks {} tensors but the model has {}",
            state.m.len(),
            params.params().len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for (i, (name, tensor)) in params.params_mut().iter_mut().enumerate() {
        let grad = tensor
            .take_grad()
            .unwrap_or_else(|| vec![0.0; tensor.len()]);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter '{name}'"
            )));
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let mut values = tensor.values().to_vec();
        for j in 0..values.len() {
            let g = grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            values[j] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        *tensor = crate::tensor::Tensor::from_parts(tensor.shape().to_vec(), values);
    }
    Ok(())
}

/// Training-loop settings. `batch_size` must be at least 2 because the
/// decorrelation loss is defined on mini-batch statistics.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 100,
            epochs: 1,
            seed: 0,
            weights: LossWeights::default(),
            lr: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Contract(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Contract("epochs must be at least 1".to_string()));
        }
        self.weights.validate()
    }
}

/// Sample-weighted mean loss terms over one pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct EpochMetrics {
    pub total: f64,
    pub rec: f64,
    pub dis: f64,
    pub dec: f64,
}

/// One row of the training history.
#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: EpochMetrics,
    pub val_total: f64,
}

fn batch_indices(n: usize, batch_size: usize, shuffle_seed: Option<u64>) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
    }
    idx.chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| c.to_vec())
        .collect()
}

fn run_pass(
    params: &mut ModelParams,
    data: &Dataset,
    config: &TrainConfig,
    shuffle_seed: Option<u64>,
    mut adam: Option<&mut AdamState>,
) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(Error::Contract("dataset is empty".to_string()));
    }
    let batches = batch_indices(data.len(), config.batch_size, shuffle_seed);
    if batches.is_empty() {
        return Err(Error::Contract(
            "dataset has no batch of at least 2 samples".to_string(),
        ));
    }
    let peak = params.value_range.peak();
    let mut sums = EpochMetrics::default();
    let mut samples = 0usize;
    for batch in &batches {
        let lb = data.gather(batch)?;
        let g = Graph::new();
        let codes = encode(&g, params, &lb.x)?;
        let x_hat = decode(&g, params, &codes.y_hat, &codes.z)?;
        let (loss, bd) = total_loss(
            &g,
            &lb.x,
            &x_hat,
            &lb.labels,
            &codes.y_hat,
            &codes.z,
            params.mode,
            &config.weights,
            peak,
        )?;
        if !bd.total.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss {} on a batch of {}",
                bd.total, lb.n
            )));
        }
        if let Some(adam) = adam.as_deref_mut() {
            params.zero_grads();
            g.backward(&loss)?;
            adam_step(params, adam)?;
        }
        let w = lb.n as f64;
        sums.total += bd.total * w;
        sums.rec += bd.rec * w;
        sums.dis += bd.dis * w;
        sums.dec += bd.dec * w;
        samples += lb.n;
    }
    let inv = 1.0 / samples as f64;
    Ok(EpochMetrics {
        total: sums.total * inv,
        rec: sums.rec * inv,
        dis: sums.dis * inv,
        dec: sums.dec * inv,
    })
}

/// One shuffled pass over the dataset with parameter updates; returns the
/// sample-weighted mean loss terms. Trailing batches with fewer than 2
/// samples are dropped.
pub fn train_epoch(
    params: &mut ModelParams,
    data: &Dataset,
    config: &TrainConfig,
    epoch_index: usize,
    adam: &mut AdamState,
) -> Result<EpochMetrics> {
    config.validate()?;
    run_pass(
        params,
        data,
        config,
        Some(config.seed ^ epoch_index as u64),
        Some(adam),
    )
}

/// Forward-only pass (no shuffling, no updates) for validation metrics.
pub fn evaluate(params: &ModelParams, data: &Dataset, config: &TrainConfig) -> Result<EpochMetrics> {
    let mut scratch = params.snapshot();
    run_pass(&mut scratch, data, config, None, None)
}

/// Result of [`fit`]: the per-epoch history and the snapshot with the lowest
/// validation total loss.
pub struct FitResult {
    pub history: Vec<EpochRecord>,
    pub best: ModelParams,
    pub best_epoch: usize,
}

/// Train for the configured number of epochs, validating after each one, and
/// keep the parameters that minimized the validation total loss.
pub fn fit(
    params: &mut ModelParams,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    let mut adam = AdamState::new(params, config.lr, config.adam_beta1, config.adam_beta2);
    fit_with_state(params, train, val, config, &mut adam)
}

/// [`fit`] with caller-owned optimizer state, for resumed training.
pub fn fit_with_state(
    params: &mut ModelParams,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    adam: &mut AdamState,
) -> Result<FitResult> {
    config.validate()?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ModelParams, usize)> = None;
    for epoch in 0..config.epochs {
        let train_metrics = train_epoch(params, train, config, epoch, adam)?;
        let val_metrics = evaluate(params, val, config)?;
        history.push(EpochRecord {
            epoch: epoch + 1,
            train: train_metrics,
            val_total: val_metrics.total,
        });
        let better = match &best {
            Some((loss, _, _)) => val_metrics.total < *loss,
            None => true,
        };
        if better {
            best = Some((val_metrics.total, params.snapshot(), epoch + 1));
        }
    }
    let (_, best_params, best_epoch) = best.expect("at least one epoch");
    Ok(FitResult {
        history,
        best: best_params,
        best_epoch,
    })
}

/// Render a training history as the CSV consumed by the command-line tools.
/// Values print in shortest round-trip form, so parsing the file recovers
/// them exactly.
pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_rec,train_dis,train_dec,train_total,val_total\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.train.rec, r.train.dis, r.train.dec, r.train.total, r.val_total
        ));
    }
    out
}
