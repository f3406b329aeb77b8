use std::io::Write;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{stack, Instance, Mode, Network, NetworkSpec};
use super::tape::Tape;
use super::{Loss, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// GraphSAGE settings for irradiance.
    pub fn solar_gnn(seed: u64) -> Self {
        Self {
            learning_rate: 0.03,
            batch_size: 64,
            max_epochs: 300,
            patience: 15,
            validation_fraction: 0.3,
            seed,
        }
    }

    /// GraphSAGE settings for visibility.
    pub fn visibility_gnn(seed: u64) -> Self {
        Self {
            patience: 10,
            ..Self::solar_gnn(seed)
        }
    }

    /// Feed-forward baseline settings.
    pub fn mlp(seed: u64) -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 1200,
            max_epochs: 300,
            patience: 5,
            validation_fraction: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size and epoch count must be positive".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Adam with the usual moment decay rates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn reset(&mut self) {
        self.step = 0;
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[&Tensor]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *x -= self.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingLog {
    pub fn best_validation_loss(&self) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch).map(|e| e.validation_loss)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,validation_loss")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{}", e.epoch, e.train_loss, e.validation_loss)?;
        }
        Ok(())
    }
}

/// Tracks the best validation loss and signals when patience runs out.
#[derive(Clone, Debug)]
pub(crate) struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since: usize,
}

impl EarlyStopping {
    pub(crate) fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since: 0,
        }
    }

    /// Returns `(improved, stop)`.
    pub(crate) fn update(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since = 0;
            (true, false)
        } else {
            self.since += 1;
            (false, self.since >= self.patience)
        }
    }
}

fn mean_loss(net: &Network, data: &[&Instance], batch: usize, loss: &Loss) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    for chunk in data.chunks(batch) {
        let (f, nb, y, g) = stack(chunk)?;
        let mut tape = Tape::new();
        let fwd = net.forward(&mut tape, f, &nb, Mode::Eval, &mut rng)?;
        let l = loss.record(&mut tape, fwd.output, &y, &g)?;
        total += tape.value(l)?.item() * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

enum StepFailure {
    NonFinite(String),
    Other(Error),
}

fn train_epoch(
    net: &mut Network,
    adam: &mut Adam,
    batches: &[Vec<&Instance>],
    loss: &Loss,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<f64, StepFailure> {
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in batches {
        let (f, nb, y, g) = stack(batch).map_err(StepFailure::Other)?;
        let rows = f.rows();
        let mut tape = Tape::new();
        let fwd = match net.forward(&mut tape, f, &nb, Mode::Train, rng) {
            Ok(fwd) => fwd,
            Err(Error::Numerical(m)) => return Err(StepFailure::NonFinite(m)),
            Err(e) => return Err(StepFailure::Other(e)),
        };
        let l = loss.record(&mut tape, fwd.output, &y, &g).map_err(StepFailure::Other)?;
        let value = tape.value(l).map_err(StepFailure::Other)?.item();
        if !value.is_finite() {
            return Err(StepFailure::NonFinite(format!("loss {value}")));
        }
        let grads = tape.backward(l).map_err(StepFailure::Other)?;
        let gs: Vec<&Tensor> = fwd
            .params
            .iter()
            .map(|p| grads.get(*p))
            .collect::<Result<_>>()
            .map_err(StepFailure::Other)?;
        if gs.iter().any(|g| !g.is_finite()) {
            return Err(StepFailure::NonFinite("gradient".into()));
        }
        adam.step(net.params_mut(), &gs);
        net.update_running(&fwd.batch_stats, rows);
        total += value * batch.len() as f64;
        count += batch.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Trains `spec` with Adam and early stopping on a seeded validation split.
/// Returns the parameters of the best validation epoch.
pub fn train(spec: &NetworkSpec, instances: &[Instance], config: &TrainConfig, loss: &Loss) -> Result<(Network, TrainingLog)> {
    config.validate()?;
    spec.validate()?;
    if instances.len() < 2 {
        return Err(Error::invalid("training needs at least two instances"));
    }
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0001);
    order.shuffle(&mut split_rng);
    let n_val = ((instances.len() as f64 * config.validation_fraction).round() as usize).clamp(1, instances.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<&Instance> = val_idx.iter().map(|&i| &instances[i]).collect();
    let mut train_set: Vec<&Instance> = train_idx.iter().map(|&i| &instances[i]).collect();

    let mut net = Network::init(spec.clone(), config.seed)?;
    let n_obs: usize = train_set.iter().map(|i| i.observations.len()).sum();
    let mean_obs = train_set.iter().flat_map(|i| i.observations.iter()).sum::<f64>() / n_obs.max(1) as f64;
    net.set_output_bias(mean_obs);

    let mut adam = Adam::new(config.learning_rate, net.params());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0002);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0003);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = net.clone();
    let mut log = TrainingLog::default();
    let mut halved = false;

    for epoch in 1..=config.max_epochs {
        train_set.shuffle(&mut shuffle_rng);
        let batches: Vec<Vec<&Instance>> = train_set.chunks(config.batch_size).map(<[_]>::to_vec).collect();
        let outcome = match train_epoch(&mut net, &mut adam, &batches, loss, &mut dropout_rng) {
            Ok(train_loss) => match mean_loss(&net, &val, config.batch_size, loss) {
                Ok(v) if v.is_finite() => Ok((train_loss, v)),
                Ok(v) => Err(StepFailure::NonFinite(format!("validation loss {v}"))),
                Err(Error::Numerical(m)) => Err(StepFailure::NonFinite(m)),
                Err(e) => Err(StepFailure::Other(e)),
            },
            Err(e) => Err(e),
        };
        let (train_loss, validation_loss) = match outcome {
            Ok(v) => v,
            Err(StepFailure::Other(e)) => return Err(e),
            Err(StepFailure::NonFinite(msg)) => {
                if halved {
                    return Err(Error::Numerical(format!("training diverged again in epoch {epoch}: {msg}")));
                }
                warn!("non-finite training state in epoch {epoch} ({msg}); restoring checkpoint and halving the learning rate");
                halved = true;
                net = best.clone();
                adam.reset();
                adam.learning_rate *= 0.5;
                continue;
            }
        };
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            validation_loss,
        });
        let (improved, stop) = stopper.update(epoch, validation_loss);
        if improved {
            best = net.clone();
            log.best_epoch = epoch;
        }
        if stop {
            log.stopped_early = true;
            break;
        }
    }
    if log.epochs.is_empty() {
        return Err(Error::Numerical("no epoch completed".into()));
    }
    info!(
        "training finished after {} epochs, best epoch {}",
        log.epochs.len(),
        log.best_epoch
    );
    Ok((best, log))
}
