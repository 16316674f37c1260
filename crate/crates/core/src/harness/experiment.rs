//! The toy recognition benchmark: render, simulate under several
//! illumination conditions, train on one set of recordings, and evaluate
//! gallery/probe retrieval on another.

use alloc::string::String;
use alloc::vec::Vec;

use super::data::{crop_frame, prepare_input, PipelineConfig, PreparedSample};
use super::eval::{evaluate, EvalResult};
use super::toy::{generate_toy_dataset, ToyGaitConfig, ToySequence};
use super::train::{LogRow, TrainConfig, Trainer};
use crate::error::{bail, Result};
use crate::event::{crop_stream, EventStream};
use crate::model::{Executor, GaitEmbedding, GaitModel, StreamMode};
use crate::sim::{generate_events, SimConfig};
use crate::static_stream::PseudoTeacher;

/// An illumination level: frame brightness plus the simulator settings used
/// to record it.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub brightness: f64,
    pub sim: SimConfig,
}

/// Bright: default simulator. Dim: darker frames, a slower photoreceptor,
/// and more background activity.
pub fn default_conditions() -> Vec<Condition> {
    alloc::vec![
        Condition {
            name: String::from("bright"),
            brightness: 1.0,
            sim: SimConfig::default(),
        },
        Condition {
            name: String::from("dim"),
            brightness: 0.02,
            sim: SimConfig {
                cutoff_hz: 5.0,
                noise_rate_hz: 5.0,
                ..SimConfig::default()
            },
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Evaluation recordings: the first sequence of each identity is the
    /// gallery, the rest are probes.
    pub toy: ToyGaitConfig,
    /// Training recordings per identity and condition, drawn with
    /// `train_nuisance_seed` so they differ from the evaluation recordings.
    pub train_sequences: usize,
    pub train_nuisance_seed: u64,
    pub conditions: Vec<Condition>,
    pub pipeline: PipelineConfig,
    pub teacher_dim: usize,
    pub teacher_seed: u64,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut toy = ToyGaitConfig::default();
        toy.nuisance_ranges.width_jitter = 3.0;
        toy.nuisance_ranges.torso_jitter = 3.0;
        toy.nuisance_ranges.amplitude_jitter = 0.15;
        let pipeline = PipelineConfig {
            static_scale: 0.5,
            ..PipelineConfig::default()
        };
        let mut train = TrainConfig::default();
        train.sgd.lr = 0.02;
        if let Some(c) = train.calibration.as_mut() {
            c.target_rms = 2.0;
        }
        Self {
            train_sequences: 16,
            train_nuisance_seed: toy.nuisance_seed + 1000,
            toy,
            conditions: default_conditions(),
            pipeline,
            teacher_dim: 64,
            teacher_seed: 7,
            train,
        }
        .with_consistent_shapes()
    }
}

impl ExperimentConfig {
    /// Derives model input shapes and class count from the data settings.
    pub fn with_consistent_shapes(mut self) -> Self {
        let m = &mut self.train.model;
        m.n_classes = self.toy.n_identities;
        m.static_stream.in_channels = 2 * self.pipeline.k_static;
        m.static_stream.input_size = self.pipeline.input_size;
        m.static_stream.teacher_dim = self.teacher_dim;
        m.dynamic_stream.in_channels = 2 * self.pipeline.k_dynamic;
        m.dynamic_stream.input_size = self.pipeline.input_size;
        self
    }

    pub fn with_mode(mut self, mode: StreamMode) -> Self {
        self.train.model.mode = mode;
        self
    }

    pub fn with_lambda(mut self, lambda_d: f64) -> Self {
        self.train.loss.lambda_d = lambda_d;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSplit {
    pub name: String,
    pub gallery: Vec<PreparedSample>,
    pub probes: Vec<PreparedSample>,
}

/// Simulated and preprocessed data, shared by runs that differ only in model
/// or loss settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBenchmark {
    pub train: Vec<PreparedSample>,
    pub eval: Vec<ConditionSplit>,
}

fn sim_seed(base: u64, condition: usize, split: u64, seq: &ToySequence) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((condition as u64) << 48)
        ^ (split << 40)
        ^ ((seq.identity as u64) << 20)
        ^ seq.sequence as u64
}

/// One simulated recording, cropped around the walker.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    /// Unique within a condition.
    pub sample_id: String,
    pub label: usize,
    pub events: EventStream,
    /// Pseudo-teacher feature of the middle frame, rounded to `f32`.
    pub teacher: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedSplit {
    pub name: String,
    pub gallery: Vec<Recording>,
    pub probes: Vec<Recording>,
}

/// Raw recordings of the benchmark. Training recordings of condition `c`
/// carry ids prefixed with `c_`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyRecordings {
    pub train: Vec<Recording>,
    pub eval: Vec<RecordedSplit>,
}

fn record_split<E: Executor>(
    seqs: &[ToySequence],
    condition: (usize, &Condition),
    split: u64,
    teacher: Option<(&PseudoTeacher, usize)>,
    exec: &E,
) -> Result<Vec<Recording>> {
    let (ci, cond) = condition;
    let recorded: Vec<Result<Recording>> = exec.map(seqs.len(), |i| {
        let seq = &seqs[i];
        let sim = SimConfig {
            seed: sim_seed(cond.sim.seed, ci, split, seq),
            ..cond.sim.clone()
        };
        let events = generate_events(&seq.frames.scaled(cond.brightness)?, &sim)?;
        // The teacher sees the unscaled frame, as it would an ordinary video,
        // cropped around the person like the event grids.
        let teacher = match teacher {
            Some((t, size)) => {
                let (w, h) = (seq.frames.width(), seq.frames.height());
                let crop = crop_frame(seq.middle_frame(), w, h, seq.middle_bbox, size)?;
                Some(t.project(&crop)?.into_iter().map(|v| f64::from(v as f32)).collect())
            }
            None => None,
        };
        Ok(Recording {
            sample_id: seq.sample_id.clone(),
            label: seq.identity,
            events: crop_stream(&events, seq.bbox)?,
            teacher,
        })
    });
    recorded.into_iter().collect()
}

/// Renders and simulates every recording of the benchmark.
pub fn record_benchmark<E: Executor>(cfg: &ExperimentConfig, exec: &E) -> Result<ToyRecordings> {
    if cfg.toy.sequences_per_identity < 2 {
        bail!(InvalidArgument, "evaluation needs a gallery and at least one probe sequence per identity");
    }
    if cfg.conditions.is_empty() {
        bail!(InvalidArgument, "at least one condition is required");
    }
    let base = ToyGaitConfig {
        brightness: 1.0,
        ..cfg.toy.clone()
    };
    let eval_seqs = generate_toy_dataset(&base)?;
    let train_seqs = generate_toy_dataset(&ToyGaitConfig {
        sequences_per_identity: cfg.train_sequences,
        nuisance_seed: cfg.train_nuisance_seed,
        ..base.clone()
    })?;
    let size = cfg.pipeline.input_size;
    let teacher = PseudoTeacher::new(cfg.teacher_dim, size * size, cfg.teacher_seed);

    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (ci, cond) in cfg.conditions.iter().enumerate() {
        let recorded = record_split(&train_seqs, (ci, cond), 1, Some((&teacher, size)), exec)?;
        train.extend(recorded.into_iter().map(|mut r| {
            r.sample_id = alloc::format!("{}_{}", cond.name, r.sample_id);
            r
        }));
        let all = record_split(&eval_seqs, (ci, cond), 0, None, exec)?;
        let (gallery, probes) = all
            .into_iter()
            .zip(&eval_seqs)
            .partition::<Vec<_>, _>(|(_, s)| s.sequence == 0);
        eval.push(RecordedSplit {
            name: cond.name.clone(),
            gallery: gallery.into_iter().map(|(r, _)| r).collect(),
            probes: probes.into_iter().map(|(r, _)| r).collect(),
        });
    }
    Ok(ToyRecordings { train, eval })
}

pub fn prepare_recordings<E: Executor>(
    recordings: &[Recording],
    pipeline: &PipelineConfig,
    exec: &E,
) -> Result<Vec<PreparedSample>> {
    let prepared: Vec<Result<PreparedSample>> = exec.map(recordings.len(), |i| {
        let r = &recordings[i];
        Ok(PreparedSample {
            sample_id: r.sample_id.clone(),
            label: r.label,
            input: prepare_input(&r.events, pipeline)?,
            teacher: r.teacher.clone(),
        })
    });
    prepared.into_iter().collect()
}

pub fn prepare_benchmark<E: Executor>(
    recordings: &ToyRecordings,
    pipeline: &PipelineConfig,
    exec: &E,
) -> Result<ToyBenchmark> {
    let mut eval = Vec::new();
    for split in &recordings.eval {
        eval.push(ConditionSplit {
            name: split.name.clone(),
            gallery: prepare_recordings(&split.gallery, pipeline, exec)?,
            probes: prepare_recordings(&split.probes, pipeline, exec)?,
        });
    }
    Ok(ToyBenchmark {
        train: prepare_recordings(&recordings.train, pipeline, exec)?,
        eval,
    })
}

/// [`record_benchmark`] followed by [`prepare_benchmark`].
pub fn build_benchmark<E: Executor>(cfg: &ExperimentConfig, exec: &E) -> Result<ToyBenchmark> {
    prepare_benchmark(&record_benchmark(cfg, exec)?, &cfg.pipeline, exec)
}

pub fn embed_all<E: Executor>(model: &GaitModel, samples: &[PreparedSample], exec: &E) -> Result<Vec<GaitEmbedding>> {
    let out: Vec<Result<GaitEmbedding>> = exec.map(samples.len(), |i| {
        let s = &samples[i];
        Ok(GaitEmbedding {
            f_gait: model.embed(&s.input)?,
            label: s.label,
            sample_id: s.sample_id.clone(),
        })
    });
    out.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub name: String,
    pub result: EvalResult,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub conditions: Vec<ConditionResult>,
    pub trainer: Trainer,
}

impl ExperimentResult {
    /// Mean rank-1 over conditions.
    pub fn overall_rank1(&self) -> f64 {
        self.conditions.iter().map(|c| c.result.rank1).sum::<f64>() / self.conditions.len().max(1) as f64
    }

    pub fn condition(&self, name: &str) -> Option<&EvalResult> {
        self.conditions.iter().find(|c| c.name == name).map(|c| &c.result)
    }

    pub fn log(&self) -> &[LogRow] {
        &self.trainer.log
    }
}

pub fn evaluate_model<E: Executor>(model: &GaitModel, bench: &ToyBenchmark, exec: &E) -> Result<Vec<ConditionResult>> {
    bench
        .eval
        .iter()
        .map(|split| {
            let gallery = embed_all(model, &split.gallery, exec)?;
            let probes = embed_all(model, &split.probes, exec)?;
            Ok(ConditionResult {
                name: split.name.clone(),
                result: evaluate(&gallery, &probes)?,
            })
        })
        .collect()
}

/// Trains a fresh model on the benchmark and evaluates it per condition.
pub fn run_on_benchmark<E: Executor>(
    bench: &ToyBenchmark,
    train: &TrainConfig,
    exec: &E,
    on_row: impl FnMut(&LogRow),
) -> Result<ExperimentResult> {
    let mut trainer = Trainer::initialize(train.clone(), &bench.train)?;
    trainer.run(&bench.train, exec, on_row)?;
    let conditions = evaluate_model(&trainer.model, bench, exec)?;
    Ok(ExperimentResult { conditions, trainer })
}
