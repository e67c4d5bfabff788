use std::io::Write;
use std::time::Instant;

use dicforge_tensor::{Adam, Mode, Tape, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::Model;
use super::NetError;
use crate::dataset::Sample;
use crate::seed;

const DROPOUT_STREAM: u64 = 0x6472_6f70_6f75_7421;

/// Pairs and labels held as flat `(2, H, W)` blocks.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub height: usize,
    pub width: usize,
    inputs: Vec<Vec<f32>>,
    targets: Vec<Vec<f32>>,
}

impl TrainSet {
    pub fn from_samples(samples: &[Sample]) -> Result<Self, NetError> {
        let (height, width) = samples
            .first()
            .map(|s| s.reference.dims())
            .ok_or_else(|| NetError::Data("empty training set".into()))?;
        let mut inputs = Vec::with_capacity(samples.len());
        let mut targets = Vec::with_capacity(samples.len());
        for s in samples {
            if s.reference.dims() != (height, width) || s.deformed.dims() != (height, width) || s.field.dims() != (height, width) {
                return Err(NetError::Data(format!("sample {} does not match {height}x{width}", s.index)));
            }
            inputs.push(s.reference.data().iter().chain(s.deformed.data()).copied().collect());
            targets.push(s.field.u.data().iter().chain(s.field.v.data()).copied().collect());
        }
        Ok(Self {
            height,
            width,
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let shape = [idx.len(), 2, self.height, self.width];
        let gather = |src: &[Vec<f32>]| {
            let data = idx.iter().flat_map(|&i| src[i].iter().copied()).collect();
            Tensor::from_vec(&shape, data).expect("blocks have uniform size")
        };
        (gather(&self.inputs), gather(&self.targets))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Drives the per-epoch shuffles and the dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            lr: 1e-4,
            seed: 0,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u64,
    pub step: u64,
    /// Mean training MSE over the epoch's batches.
    pub loss: f64,
    pub wall_time: f64,
}

/// Mini-batch Adam on MSE. The position in the schedule is the optimizer step
/// count, so a model restored from a checkpoint with its Adam state continues
/// exactly where it stopped.
pub struct Trainer {
    pub model: Model<f32>,
    pub adam: Adam,
    pub config: TrainConfig,
    step: u64,
    order: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig) -> Result<Self, NetError> {
        if config.batch_size == 0 {
            return Err(NetError::Config("batch size must be positive".into()));
        }
        if !(config.lr > 0.0 && config.lr.is_finite()) {
            return Err(NetError::Config(format!("learning rate {}", config.lr)));
        }
        let step = model.params.iter().map(|p| p.adam.step).max().unwrap_or(0);
        Ok(Self {
            adam: Adam::with_lr(config.lr),
            model,
            config,
            step,
            order: None,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self, data: &TrainSet) -> u64 {
        data.len().div_ceil(self.config.batch_size) as u64
    }

    pub fn epoch(&self, data: &TrainSet) -> u64 {
        self.step / self.steps_per_epoch(data).max(1)
    }

    fn batch_indices(&mut self, data: &TrainSet) -> Vec<usize> {
        let spe = self.steps_per_epoch(data);
        let (epoch, pos) = (self.step / spe, (self.step % spe) as usize);
        if self.order.as_ref().map(|o| o.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..data.len()).collect();
            perm.shuffle(&mut seed::rng(seed::mix(self.config.seed, epoch)));
            self.order = Some((epoch, perm));
        }
        let perm = &self.order.as_ref().expect("set above").1;
        let bs = self.config.batch_size;
        perm[pos * bs..((pos + 1) * bs).min(perm.len())].to_vec()
    }

    /// One optimizer step; returns the batch loss.
    pub fn train_step(&mut self, data: &TrainSet) -> Result<f64, NetError> {
        if data.is_empty() {
            return Err(NetError::Data("empty training set".into()));
        }
        let idx = self.batch_indices(data);
        let (x, y) = data.batch(&idx);
        let tape_seed = seed::mix(self.config.seed ^ DROPOUT_STREAM, self.step);
        let mut tape = Tape::new(Mode::Train, tape_seed);
        let xv = tape.input(x, false);
        let pred = self.model.forward(&mut tape, xv)?;
        tape.set_scope(super::scope::LOSS);
        let yv = tape.input(y, false);
        let loss = tape.mse_loss(pred, yv)?;
        let value = tape.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(NetError::Data(format!("loss became {value} at step {}", self.step)));
        }
        tape.backward(loss);
        self.model.params.zero_grad();
        tape.accumulate_param_grads(&mut self.model.params);
        self.adam.step(&mut self.model.params);
        self.step += 1;
        Ok(value)
    }

    /// Run to the end of the current epoch.
    pub fn train_epoch(&mut self, data: &TrainSet) -> Result<EpochStats, NetError> {
        let start = Instant::now();
        let spe = self.steps_per_epoch(data);
        let epoch = self.epoch(data);
        let mut total = 0.0;
        let mut count = 0;
        while self.step < (epoch + 1) * spe {
            total += self.train_step(data)?;
            count += 1;
        }
        Ok(EpochStats {
            epoch,
            step: self.step,
            loss: total / count.max(1) as f64,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }

    /// Train until `epochs` complete epochs have run in total, writing one JSON
    /// line per epoch to `log` and calling `on_epoch` after each.
    pub fn fit(
        &mut self,
        data: &TrainSet,
        epochs: u64,
        mut log: Option<&mut dyn Write>,
        mut on_epoch: impl FnMut(&Trainer, &EpochStats) -> Result<(), NetError>,
    ) -> Result<Vec<EpochStats>, NetError> {
        let mut out = Vec::new();
        while self.epoch(data) < epochs {
            let stats = self.train_epoch(data)?;
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&stats).map_err(|e| NetError::Data(e.to_string()))?;
                writeln!(w, "{line}").map_err(NetError::Io)?;
            }
            on_epoch(self, &stats)?;
            out.push(stats);
        }
        Ok(out)
    }
}
