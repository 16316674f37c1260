//! The work behind each command-line subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use eventgait_core::event::{two_scale_split, voxelize as voxelize_stream, EventStream, VoxelGrid};
use eventgait_core::harness::data::{prepare_input, PreparedSample};
use eventgait_core::harness::eval::{evaluate, EvalResult};
use eventgait_core::harness::experiment::{evaluate_model, prepare_benchmark, record_benchmark, ConditionResult, Recording};
use eventgait_core::harness::gradcheck::{gradcheck_toy_model, GradcheckReport};
use eventgait_core::harness::train::{LogRow, Trainer};
use eventgait_core::model::{GaitEmbedding, GaitModel};
use eventgait_core::sim::{generate_events, SimConfig};
use eventgait_core::static_stream::TeacherFeatureSet;

use crate::config::{GradcheckConfig, RunConfig};
use crate::error::{write_file, Error, Result};
use crate::exec::Exec;
use crate::formats::{ckpt, evs, frames, tfs, vox};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt1";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TEACHER_FILE: &str = "teacher.tfs1";

/// Frames directory to event file.
pub fn simulate(frames_dir: &Path, sim: &SimConfig, out: &Path) -> Result<EventStream> {
    let seq = frames::read_dir(frames_dir)?;
    let stream = generate_events(&seq, sim)?;
    evs::write(out, &stream)?;
    Ok(stream)
}

/// Splits the stream into `slices` equal sub-windows of `k` bins each; one
/// slice voxelizes the whole window.
pub fn voxelize(input: &Path, k: usize, slices: usize, out: &Path) -> Result<Vec<VoxelGrid>> {
    let stream = evs::read(input)?;
    let grids = if slices == 1 {
        vec![voxelize_stream(&stream, k)?]
    } else {
        two_scale_split(&stream, slices, k, k)?.dynamic
    };
    vox::write(out, &grids)?;
    Ok(grids)
}

pub fn log_csv_header() -> &'static str {
    "iteration,ce,tri,align,total\n"
}

pub fn log_csv_row(row: &LogRow) -> String {
    format!("{},{},{},{},{}\n", row.iteration, row.ce, row.tri, row.align, row.total)
}

fn metrics_csv(results: &[ConditionResult]) -> String {
    let mut out = String::from("condition,rank1,map,minp,evaluated,excluded\n");
    for c in results {
        let r = &c.result;
        writeln!(out, "{},{},{},{},{},{}", c.name, r.rank1, r.map, r.minp, r.evaluated(), r.excluded.len())
            .expect("writing to a String");
    }
    out
}

fn write_recordings(dir: &Path, recordings: &[Recording]) -> Result<()> {
    for r in recordings {
        evs::write(&dir.join(format!("{}.evs1", r.sample_id)), &r.events)?;
    }
    Ok(())
}

fn attach_teachers(cfg: &RunConfig, train: &mut [PreparedSample]) -> Result<Option<TeacherFeatureSet>> {
    if cfg.teacher_file.is_empty() {
        return Ok(None);
    }
    let set = tfs::read(Path::new(&cfg.teacher_file))?;
    if set.dim() != cfg.experiment.teacher_dim {
        return Err(Error::Config(format!(
            "{} has width {}, teacher.dim is {}",
            cfg.teacher_file,
            set.dim(),
            cfg.experiment.teacher_dim
        )));
    }
    for s in train.iter_mut() {
        s.teacher = Some(set.get(&s.sample_id)?.to_vec());
    }
    Ok(Some(set))
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub results: Vec<ConditionResult>,
}

/// Builds the toy benchmark, trains, and evaluates. Writes into `out_dir`:
/// the full configuration, the teacher features, the loss log, the final
/// checkpoint (periodic ones under `checkpoints/`), per-condition metrics,
/// and the evaluation recordings under `eval/<condition>/{gallery,probe}`.
pub fn train(cfg: &RunConfig, out_dir: &Path, mut on_row: impl FnMut(&LogRow)) -> Result<TrainOutcome> {
    let exec = Exec::with_threads(cfg.threads)?;
    write_file(&out_dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    let recordings = record_benchmark(&cfg.experiment, &exec)?;
    let mut bench = prepare_benchmark(&recordings, &cfg.experiment.pipeline, &exec)?;
    let teachers = match attach_teachers(cfg, &mut bench.train)? {
        Some(set) => set,
        None => {
            let mut set = TeacherFeatureSet::new(cfg.experiment.teacher_dim, "pseudo-teacher");
            for s in &bench.train {
                if let Some(t) = &s.teacher {
                    set.insert(s.sample_id.clone(), t.clone())?;
                }
            }
            set
        }
    };
    tfs::write(&out_dir.join(TEACHER_FILE), &teachers)?;
    for split in &recordings.eval {
        let dir = out_dir.join("eval").join(&split.name);
        write_recordings(&dir.join("gallery"), &split.gallery)?;
        write_recordings(&dir.join("probe"), &split.probes)?;
    }

    let mut trainer = Trainer::initialize(cfg.experiment.train.clone(), &bench.train)?;
    let mut log = String::from(log_csv_header());
    while trainer.iteration < trainer.config.iterations {
        let row = trainer.step(&bench.train, &exec)?;
        log.push_str(&log_csv_row(&row));
        on_row(&row);
        if cfg.checkpoint_every > 0 && row.iteration % cfg.checkpoint_every == 0 {
            let path = out_dir.join("checkpoints").join(format!("iter_{:06}.ckpt1", row.iteration));
            ckpt::write(&path, &ckpt::blobs(&trainer.model, Some(&trainer.velocity)))?;
            write_file(&out_dir.join(LOG_FILE), log.as_bytes())?;
        }
    }
    write_file(&out_dir.join(LOG_FILE), log.as_bytes())?;
    ckpt::write(&out_dir.join(CHECKPOINT_FILE), &ckpt::blobs(&trainer.model, Some(&trainer.velocity)))?;
    let results = evaluate_model(&trainer.model, &bench, &exec)?;
    write_file(&out_dir.join(METRICS_FILE), metrics_csv(&results).as_bytes())?;
    Ok(TrainOutcome { trainer, results })
}

/// Loads a checkpoint and the `config.txt` saved next to it.
pub fn load_model(checkpoint: &Path) -> Result<(RunConfig, GaitModel)> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let cfg_path = [dir.join(CONFIG_FILE), dir.join("..").join(CONFIG_FILE)]
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Config(format!("no {CONFIG_FILE} next to {}", checkpoint.display())))?;
    let cfg = RunConfig::load(&cfg_path)?;
    let (model, _) = ckpt::restore(&cfg.experiment.train.model, ckpt::read(checkpoint)?)?;
    Ok((cfg, model))
}

/// Event files (`.evs1` or `.csv`) in `dir`, sorted by name. The identity
/// is the file stem up to the first underscore.
pub fn list_recordings(dir: &Path) -> Result<Vec<(String, String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().map(|e| e.to_ascii_lowercase());
        if !matches!(ext.as_deref().and_then(|e| e.to_str()), Some("evs1" | "csv")) {
            continue;
        }
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let label = id.split('_').next().unwrap_or_default().to_string();
        out.push((id, label, path));
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Data(format!("no event files in {}", dir.display())));
    }
    Ok(out)
}

/// Embeds gallery and probe recordings with a trained model and scores
/// retrieval. Writes a one-row metrics CSV when `csv` is given.
pub fn eval(checkpoint: &Path, gallery: &Path, probe: &Path, csv: Option<&Path>) -> Result<EvalResult> {
    let (cfg, model) = load_model(checkpoint)?;
    let exec = Exec::with_threads(cfg.threads)?;
    let gallery = list_recordings(gallery)?;
    let probes = list_recordings(probe)?;
    let mut labels: Vec<&str> = gallery.iter().chain(&probes).map(|(_, l, _)| l.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    let embed = |files: &[(String, String, PathBuf)]| -> Result<Vec<GaitEmbedding>> {
        let out: Vec<Result<GaitEmbedding>> = eventgait_core::model::Executor::map(&exec, files.len(), |i| {
            let (id, label, path) = &files[i];
            let input = prepare_input(&evs::read(path)?, &cfg.experiment.pipeline)?;
            Ok(GaitEmbedding {
                f_gait: model.embed(&input)?,
                label: labels.binary_search(&label.as_str()).expect("label collected above"),
                sample_id: id.clone(),
            })
        });
        out.into_iter().collect()
    };
    let result = evaluate(&embed(&gallery)?, &embed(&probes)?)?;
    if let Some(csv) = csv {
        let text = format!(
            "rank1,map,minp,evaluated,excluded\n{},{},{},{},{}\n",
            result.rank1,
            result.map,
            result.minp,
            result.evaluated(),
            result.excluded.len()
        );
        write_file(csv, text.as_bytes())?;
    }
    Ok(result)
}

/// Gradient check of the built-in toy model; fails when the worst relative
/// error exceeds the configured tolerance.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let report = gradcheck_toy_model(cfg.seed, cfg.mode, cfg.fd)?;
    if !report.passes(cfg.tolerance) {
        return Err(Error::Gradcheck {
            max_rel_error: report.max_rel_error(),
            tolerance: cfg.tolerance,
        });
    }
    Ok(report)
}
