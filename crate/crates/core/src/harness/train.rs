//! Identity-balanced SGD training.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::PreparedSample;
use crate::error::{bail, Result};
use crate::model::{batch_loss_and_grad, Batch, Executor, GaitModel, LossWeights, ModelConfig, Sgd};
use crate::params;
use crate::snn::{BackwardOptions, SpikeFn};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub sgd: Sgd,
    pub iterations: usize,
    /// Identities per batch.
    pub p: usize,
    /// Samples per identity per batch.
    pub k: usize,
    pub seed: u64,
    /// Iteration at which the learning rate drops by 10x.
    pub lr_drop_at: Option<usize>,
    pub backward: BackwardOptions,
    /// Data-dependent rescaling of the spiking layers before training.
    pub calibration: Option<Calibration>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Training samples used, spread evenly over the training set.
    pub samples: usize,
    /// Target root-mean-square input current, in membrane-potential units.
    pub target_rms: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            samples: 16,
            target_rms: 1.0,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            sgd: Sgd::default(),
            iterations: 2000,
            p: 4,
            k: 2,
            seed: 0,
            lr_drop_at: None,
            backward: BackwardOptions::default(),
            calibration: Some(Calibration::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    /// One-based.
    pub iteration: usize,
    pub ce: f64,
    pub tri: f64,
    /// Unweighted alignment term; zero when alignment is off.
    pub align: f64,
    pub total: f64,
}

/// Picks `p` identities having at least `k` samples, then `k` distinct
/// samples of each. Returns indices into the label list.
pub fn pk_sample(rng: &mut ChaCha8Rng, labels: &[usize], p: usize, k: usize) -> Result<Vec<usize>> {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let eligible: Vec<&Vec<usize>> = by_label.values().filter(|v| v.len() >= k).collect();
    if p < 2 || k < 1 || eligible.len() < p {
        bail!(
            DegenerateBatch,
            "cannot draw {p} identities x {k} samples from {} eligible identities",
            eligible.len()
        );
    }
    let mut out = Vec::with_capacity(p * k);
    for id in index::sample(rng, eligible.len(), p) {
        let members = eligible[id];
        out.extend(index::sample(rng, members.len(), k).into_iter().map(|j| members[j]));
    }
    Ok(out)
}

/// Model, optimizer state, sampler state, and loss history.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: GaitModel,
    pub velocity: GaitModel,
    pub iteration: usize,
    pub log: Vec<LogRow>,
    sampler: ChaCha8Rng,
}

impl Trainer {
    /// Initialization is rounded to `f32` so a checkpoint taken at any point
    /// restores the exact state.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.loss.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = GaitModel::new(&mut rng, config.model.clone())?;
        params::round_to_f32(&mut model);
        let velocity = params::zeros_like(&model);
        Self::from_parts(config, model, velocity, 0)
    }

    /// [`Self::new`] followed by calibration on `samples` when configured.
    pub fn initialize(config: TrainConfig, samples: &[PreparedSample]) -> Result<Self> {
        let mut trainer = Self::new(config)?;
        if let (Some(cal), Some(dynamic)) = (trainer.config.calibration, trainer.model.dynamic_stream.as_mut()) {
            let n = cal.samples.min(samples.len());
            let picked: Vec<_> = (0..n).map(|i| &samples[i * samples.len() / n].input.dynamic).collect();
            if !picked.is_empty() {
                dynamic.calibrate(&picked, cal.target_rms)?;
                params::round_to_f32(&mut trainer.model);
            }
        }
        Ok(trainer)
    }

    /// Rebuilds a trainer from saved weights and momentum. The batch sampler
    /// restarts from the beginning of its stream.
    pub fn from_parts(config: TrainConfig, model: GaitModel, velocity: GaitModel, iteration: usize) -> Result<Self> {
        if params::specs(&model) != params::specs(&velocity) {
            bail!(InvalidArgument, "velocity layout does not match the model");
        }
        let mut sampler = ChaCha8Rng::seed_from_u64(config.seed);
        sampler.set_stream(1);
        Ok(Self {
            config,
            model,
            velocity,
            iteration,
            log: Vec::new(),
            sampler,
        })
    }

    fn learning_rate(&self) -> f64 {
        match self.config.lr_drop_at {
            Some(at) if self.iteration >= at => self.config.sgd.lr * 0.1,
            _ => self.config.sgd.lr,
        }
    }

    /// One SGD iteration on a freshly sampled batch.
    pub fn step<E: Executor>(&mut self, samples: &[PreparedSample], exec: &E) -> Result<LogRow> {
        let it = self.iteration + 1;
        let ctx = |e: crate::Error| e.context(&format!("iteration {it}"));
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let picks = pk_sample(&mut self.sampler, &labels, self.config.p, self.config.k).map_err(ctx)?;
        let batch = Batch {
            inputs: picks.iter().map(|&i| &samples[i].input).collect(),
            labels: picks.iter().map(|&i| samples[i].label).collect(),
            teachers: picks.iter().map(|&i| samples[i].teacher.as_deref()).collect(),
        };
        let (losses, grads) = batch_loss_and_grad(
            &self.model,
            &batch,
            &self.config.loss,
            SpikeFn::Heaviside,
            self.config.backward,
            exec,
        )
        .map_err(ctx)?;
        let sgd = Sgd {
            lr: self.learning_rate(),
            ..self.config.sgd
        };
        sgd.step(&mut self.model, &grads, &mut self.velocity).map_err(ctx)?;
        params::round_to_f32(&mut self.model);
        params::round_to_f32(&mut self.velocity);
        self.iteration = it;
        let row = LogRow {
            iteration: it,
            ce: losses.ce,
            tri: losses.tri,
            align: losses.align,
            total: losses.total,
        };
        self.log.push(row);
        Ok(row)
    }

    /// Runs until `config.iterations`, reporting each row to `on_row`.
    pub fn run<E: Executor>(
        &mut self,
        samples: &[PreparedSample],
        exec: &E,
        mut on_row: impl FnMut(&LogRow),
    ) -> Result<()> {
        while self.iteration < self.config.iterations {
            let row = self.step(samples, exec)?;
            on_row(&row);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pk_sampler_balances_identities() {
        let labels: Vec<usize> = (0..24).map(|i| i / 3).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let picks = pk_sample(&mut rng, &labels, 4, 2).unwrap();
            assert_eq!(picks.len(), 8);
            let mut count: BTreeMap<usize, usize> = BTreeMap::new();
            for &i in &picks {
                *count.entry(labels[i]).or_default() += 1;
            }
            assert_eq!(count.len(), 4);
            assert!(count.values().all(|&c| c == 2));
            let mut uniq = picks.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), 8);
        }
    }

    #[test]
    fn pk_sampler_rejects_impossible_requests() {
        let labels = [0, 0, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(pk_sample(&mut rng, &labels, 2, 2), Err(crate::Error::DegenerateBatch(_))));
    }
}
