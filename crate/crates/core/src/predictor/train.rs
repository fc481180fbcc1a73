use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridPmf;

use super::loss::{logit_gradient, softmax_cells};
use super::{Adam, AdamMoments, Network, ParamBlock, PredictorConfig};

/// One subarea with its target grid. The patch is planar `c x d x d` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub patch: Vec<f64>,
    pub target: GridPmf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub weights: Vec<f64>,
    pub registry: Vec<ParamBlock>,
    pub moments: AdamMoments,
}

impl ModelState {
    /// He-normal weights, zero biases.
    pub fn initialize(network: &Network, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = vec![0.0; network.param_count()];
        for block in network.params() {
            if block.is_bias {
                continue;
            }
            let std = (2.0 / block.fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            for w in &mut weights[block.range()] {
                *w = normal.sample(&mut rng);
            }
        }
        ModelState {
            registry: network.params().to_vec(),
            moments: AdamMoments::zeros(weights.len()),
            weights,
        }
    }

    pub fn zeros(network: &Network) -> Self {
        ModelState {
            weights: vec![0.0; network.param_count()],
            registry: network.params().to_vec(),
            moments: AdamMoments::zeros(network.param_count()),
        }
    }
}

/// Configuration, compiled network and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: PredictorConfig,
    pub network: Network,
    pub state: ModelState,
}

impl Model {
    pub fn initialize(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let network = Network::new(&config)?;
        let state = ModelState::initialize(&network, config.seed);
        Ok(Model { config, network, state })
    }

    pub fn from_weights(config: PredictorConfig, weights: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let network = Network::new(&config)?;
        if weights.len() != network.param_count() {
            return Err(Error::data(format!(
                "{} weights given, configuration needs {}",
                weights.len(),
                network.param_count()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::numeric("weights", "non-finite weight"));
        }
        let state = ModelState {
            registry: network.params().to_vec(),
            moments: AdamMoments::zeros(weights.len()),
            weights,
        };
        Ok(Model { config, network, state })
    }

    /// Soft-maxed per-cell prediction for one planar patch.
    pub fn predict(&self, patch: &[f64]) -> Result<GridPmf> {
        let logits = self.network.forward(&self.state.weights, patch)?;
        let probs = softmax_cells(&logits, self.config.classes);
        GridPmf::from_parts(self.config.classes, probs, vec![false; self.config.head_cells()])
    }
}

fn check_sample(network: &Network, config: &PredictorConfig, s: &TrainingSample) -> Result<()> {
    if s.patch.len() != network.input_len() {
        return Err(Error::data(format!(
            "training patch has {} values, expected {}",
            s.patch.len(),
            network.input_len()
        )));
    }
    if s.target.cells() != config.head_cells() || s.target.classes() != config.classes {
        return Err(Error::data(format!(
            "target grid {}x{} does not match head {}x{}",
            s.target.cells(),
            s.target.classes(),
            config.head_cells(),
            config.classes
        )));
    }
    Ok(())
}

fn sample_gradient(model: &Model, sample: &TrainingSample) -> Result<(f64, Vec<f64>)> {
    let (logits, cache) = model.network.forward_cached(&model.state.weights, &sample.patch)?;
    let probs = softmax_cells(&logits, model.config.classes);
    let mut d_logits = vec![0.0; logits.len()];
    let l = logit_gradient(&probs, &sample.target, &mut d_logits);
    let mut grad = vec![0.0; model.network.param_count()];
    model.network.backward(&model.state.weights, &cache, &d_logits, &mut grad);
    Ok((l, grad))
}

/// Summed loss of `batch` and its gradient with respect to every weight.
///
/// Samples are processed in parallel; their gradients are added in batch
/// order, so the result does not depend on the thread count.
pub fn loss_gradient(model: &Model, batch: &[TrainingSample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    for s in batch {
        check_sample(&model.network, &model.config, s)?;
    }
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|s| sample_gradient(model, s))
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut grad) = iter.next().expect("non-empty");
    for (l, g) in iter {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
        let block = model
            .state
            .registry
            .iter()
            .find(|b| b.range().contains(&pos))
            .map_or("?", |b| b.name.as_str());
        return Err(Error::numeric(format!("gradient of {block}"), "non-finite value"));
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_ms: u128,
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        format!("epoch={} mean_loss={:.9} wall_ms={}", self.epoch, self.mean_loss, self.wall_ms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub epoch: usize,
    pub batch: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final state, or the last finite one when training diverged.
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub diverged: Option<Divergence>,
}

/// Mini-batch Adam over `samples` for `config.epochs` epochs.
///
/// The sample order is reshuffled every epoch from a generator seeded with
/// `config.seed`; identical inputs give bit-identical weights.
pub fn train(
    config: &PredictorConfig,
    samples: &[TrainingSample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let mut model = Model::initialize(config.clone())?;
    for s in samples {
        check_sample(&model.network, config, s)?;
    }
    let adam = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<TrainingSample> = idx.iter().map(|&i| samples[i].clone()).collect();
            let (l, g) = match loss_gradient(&model, &batch) {
                Ok(v) if v.0.is_finite() => v,
                Ok(v) => {
                    return Ok(diverged(model, log, epoch, bi, format!("loss became {}", v.0)));
                }
                Err(Error::Numeric { location, detail }) => {
                    return Ok(diverged(model, log, epoch, bi, format!("{location}: {detail}")));
                }
                Err(e) => return Err(e),
            };
            let before = model.state.weights.clone();
            let mut moments = std::mem::replace(&mut model.state.moments, AdamMoments::zeros(0));
            adam.step(&mut model.state.weights, &g, &mut moments);
            model.state.moments = moments;
            if model.state.weights.iter().any(|w| !w.is_finite()) {
                model.state.weights = before;
                return Ok(diverged(model, log, epoch, bi, "weights became non-finite".into()));
            }
            total += l;
        }
        let rec = EpochRecord {
            epoch,
            mean_loss: total / samples.len() as f64,
            wall_ms: start.elapsed().as_millis(),
        };
        on_epoch(&rec);
        log.push(rec);
    }
    Ok(TrainOutcome {
        model,
        log,
        diverged: None,
    })
}

fn diverged(model: Model, log: Vec<EpochRecord>, epoch: usize, batch: usize, reason: String) -> TrainOutcome {
    TrainOutcome {
        model,
        log,
        diverged: Some(Divergence { epoch, batch, reason }),
    }
}
