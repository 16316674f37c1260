//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is a valid configuration; unknown or repeated
//! keys are errors. [`RunConfig::to_text`] writes every key with its
//! documentation and parses back to the same configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use eventgait_core::harness::experiment::{Condition, ExperimentConfig};
use eventgait_core::harness::gradcheck::FdSettings;
use eventgait_core::harness::train::Calibration;
use eventgait_core::model::StreamMode;
use eventgait_core::sim::SimConfig;
use eventgait_core::snn::Synapse;

use crate::error::{read_file, Error, Result};

/// Settings of the built-in gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub mode: StreamMode,
    pub fd: FdSettings,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: StreamMode::Dual,
            fd: FdSettings::default(),
            tolerance: 1e-4,
        }
    }
}

/// Everything the command-line tools read from a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    /// Save a checkpoint every this many iterations; 0 saves only the last.
    pub checkpoint_every: usize,
    /// Worker threads; 1 is the bit-reproducible single-thread mode and 0
    /// uses every core.
    pub threads: usize,
    /// TFS1 teacher features keyed by training sample id; empty uses the
    /// pseudo-teacher.
    pub teacher_file: String,
    /// Simulator settings for the `simulate` command.
    pub sim: SimConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            checkpoint_every: 0,
            threads: 1,
            teacher_file: String::new(),
            sim: SimConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

/// A value that can appear on the right of `=`.
pub trait ConfigValue: Sized {
    fn parse(text: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! scalar_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse(text: &str) -> Option<Self> {
                text.parse().ok()
            }
            fn render(&self) -> String {
                format!("{self:?}")
            }
        }
    )*};
}

scalar_value!(usize, u64, f64, bool);

fn parse_list<T: ConfigValue>(text: &str) -> Option<Vec<T>> {
    text.split(',').map(|s| T::parse(s.trim())).collect()
}

fn render_list<T: ConfigValue>(items: &[T]) -> String {
    items.iter().map(T::render).collect::<Vec<_>>().join(", ")
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse(text: &str) -> Option<Self> {
        parse_list(text)
    }
    fn render(&self) -> String {
        render_list(self)
    }
}

impl<T: ConfigValue + Clone, const N: usize> ConfigValue for [T; N] {
    fn parse(text: &str) -> Option<Self> {
        parse_list(text)?.try_into().ok()
    }
    fn render(&self) -> String {
        render_list(self)
    }
}

impl ConfigValue for (f64, f64) {
    fn parse(text: &str) -> Option<Self> {
        let [a, b] = <[f64; 2]>::parse(text)?;
        Some((a, b))
    }
    fn render(&self) -> String {
        render_list(&[self.0, self.1])
    }
}

impl ConfigValue for Option<usize> {
    fn parse(text: &str) -> Option<Self> {
        match text {
            "none" => Some(None),
            _ => text.parse().ok().map(Some),
        }
    }
    fn render(&self) -> String {
        self.map_or_else(|| "none".into(), |v| v.to_string())
    }
}

impl ConfigValue for StreamMode {
    fn parse(text: &str) -> Option<Self> {
        match text {
            "dual" => Some(StreamMode::Dual),
            "static" => Some(StreamMode::StaticOnly),
            "dynamic" => Some(StreamMode::DynamicOnly),
            _ => None,
        }
    }
    fn render(&self) -> String {
        match self {
            StreamMode::Dual => "dual",
            StreamMode::StaticOnly => "static",
            StreamMode::DynamicOnly => "dynamic",
        }
        .into()
    }
}

impl ConfigValue for Synapse {
    fn parse(text: &str) -> Option<Self> {
        match text.split_once(':') {
            None if text == "impulse" => Some(Synapse::Impulse),
            Some(("exponential", decay)) => Some(Synapse::Exponential {
                decay: decay.trim().parse().ok()?,
            }),
            _ => None,
        }
    }
    fn render(&self) -> String {
        match self {
            Synapse::Impulse => "impulse".into(),
            Synapse::Exponential { decay } => format!("exponential:{decay:?}"),
        }
    }
}

impl ConfigValue for String {
    fn parse(text: &str) -> Option<Self> {
        Some(text.to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

trait Visitor {
    fn section(&mut self, title: &str);
    fn field<T: ConfigValue>(&mut self, key: &str, value: &mut T, doc: &str);
}

fn bind_sim<V: Visitor>(v: &mut V, prefix: &str, sim: &mut SimConfig) {
    let k = |name: &str| format!("{prefix}{name}");
    v.field(&k("threshold_c"), &mut sim.threshold_c, "log-intensity contrast threshold");
    v.field(&k("cutoff_hz"), &mut sim.cutoff_hz, "photoreceptor low-pass cutoff in Hz, 0 disables");
    v.field(&k("noise_rate_hz"), &mut sim.noise_rate_hz, "per-pixel background event rate in Hz");
    v.field(&k("refractory_us"), &mut sim.refractory_us, "per-pixel dead time after an event");
    v.field(&k("interp_factor"), &mut sim.interp_factor, "log-domain frame upsampling factor");
    v.field(&k("log_eps"), &mut sim.log_eps, "offset inside ln(I + eps)");
    v.field(&k("seed"), &mut sim.seed, "noise seed");
}

fn bind<V: Visitor>(v: &mut V, cfg: &mut RunConfig) {
    let e = &mut cfg.experiment;

    v.section("toy data (evaluation recordings)");
    let toy = &mut e.toy;
    v.field("toy.identities", &mut toy.n_identities, "number of walkers");
    v.field("toy.sequences", &mut toy.sequences_per_identity, "recordings per walker; the first is the gallery");
    v.field("toy.frames", &mut toy.frames_per_sequence, "frames per recording");
    v.field("toy.frame_size", &mut toy.frame_size, "square frame side in pixels");
    v.field("toy.fps", &mut toy.fps, "frame rate");
    v.field("toy.seed", &mut toy.seed, "seed of the identity latents");
    v.field("toy.nuisance_seed", &mut toy.nuisance_seed, "seed of the per-recording nuisance");
    v.field("toy.background", &mut toy.background, "background intensity");
    v.field("toy.foreground", &mut toy.foreground, "figure intensity");
    v.field("toy.head", &mut toy.with_head, "draw a head");
    let lat = &mut toy.latent_ranges;
    v.field("toy.frequency_hz", &mut lat.frequency_hz, "gait frequency range (min, max)");
    v.field("toy.phase", &mut lat.phase, "gait phase range in radians");
    v.field("toy.amplitude", &mut lat.amplitude, "leg swing amplitude range in radians");
    v.field("toy.body_width", &mut lat.body_width, "torso width range in pixels");
    let nui = &mut toy.nuisance_ranges;
    v.field("nuisance.speed", &mut nui.speed, "walking speed range in pixels per second");
    v.field("nuisance.start_jitter", &mut nui.start_jitter, "start position jitter in pixels");
    v.field("nuisance.phase_jitter", &mut nui.phase_jitter, "gait phase jitter in radians");
    v.field("nuisance.amplitude_jitter", &mut nui.amplitude_jitter, "relative swing amplitude jitter");
    v.field("nuisance.width_jitter", &mut nui.width_jitter, "torso width jitter in pixels");
    v.field("nuisance.torso_jitter", &mut nui.torso_jitter, "torso length jitter in pixels");
    v.field("data.train_sequences", &mut e.train_sequences, "training recordings per walker and condition");
    v.field("data.train_nuisance_seed", &mut e.train_nuisance_seed, "nuisance seed of the training recordings");

    v.section("illumination conditions");
    let mut names: Vec<String> = e.conditions.iter().map(|c| c.name.clone()).collect();
    v.field("conditions", &mut names, "condition names; each has condition.<name>.* keys");
    let mut conditions = Vec::new();
    for name in names {
        let mut c = e.conditions.iter().find(|c| c.name == name).cloned().unwrap_or(Condition {
            name: name.clone(),
            brightness: 1.0,
            sim: SimConfig::default(),
        });
        let prefix = format!("condition.{name}.");
        v.field(&format!("{prefix}brightness"), &mut c.brightness, "frame intensity scale");
        bind_sim(v, &prefix, &mut c.sim);
        conditions.push(c);
    }
    e.conditions = conditions;

    v.section("preprocessing");
    let pipe = &mut e.pipeline;
    v.field("pipeline.slices", &mut pipe.num_slices, "short-term slices per recording");
    v.field("pipeline.k_dynamic", &mut pipe.k_dynamic, "temporal bins per short-term slice");
    v.field("pipeline.k_static", &mut pipe.k_static, "temporal bins of the long-term grid");
    v.field("pipeline.input_size", &mut pipe.input_size, "network input side after pad-and-resize");
    v.field("pipeline.dynamic_scale", &mut pipe.dynamic_scale, "multiplier on short-term voxel values");
    v.field("pipeline.static_scale", &mut pipe.static_scale, "multiplier on long-term voxel values");
    v.field("teacher.dim", &mut e.teacher_dim, "pseudo-teacher feature width");
    v.field("teacher.seed", &mut e.teacher_seed, "pseudo-teacher projection seed");

    v.section("model");
    let m = &mut e.train.model;
    v.field("model.mode", &mut m.mode, "dual, static or dynamic");
    v.field("model.embed_dim", &mut m.embed_dim, "fused embedding width");
    v.field("static.widths", &mut m.static_stream.widths, "channels of the stride-2 conv blocks");
    v.field("static.embed_dim", &mut m.static_stream.embed_dim, "static feature width");
    let d = &mut m.dynamic_stream;
    v.field("dynamic.input_pool", &mut d.input_pool, "average pooling before the first expert layer");
    v.field("dynamic.mid_pool", &mut d.mid_pool, "average pooling between expert layers");
    v.field("dynamic.widths", &mut d.widths, "channels of the two expert layers");
    v.field("dynamic.taus", &mut d.taus, "membrane time constant of each expert, in steps");
    v.field("dynamic.gate_hidden", &mut d.gate_hidden, "spiking gate width");
    v.field("dynamic.init_gains", &mut d.init_gains, "initial weight gains of the two expert layers");
    v.field("dynamic.synapse", &mut d.synapse, "impulse or exponential:<decay>");
    v.field("lif.resistance", &mut d.lif.resistance, "membrane resistance R");
    v.field("lif.u_th", &mut d.lif.u_th, "firing threshold");
    v.field("lif.u_reset", &mut d.lif.u_reset, "reset and resting potential");
    v.field("lif.dt", &mut d.lif.dt, "integration step");
    v.field("surrogate.beta", &mut d.surrogate.beta, "fast-sigmoid surrogate sharpness");

    v.section("training");
    let t = &mut e.train;
    v.field("loss.lambda_d", &mut t.loss.lambda_d, "weight of the teacher alignment term");
    v.field("loss.margin", &mut t.loss.triplet_margin, "batch-hard triplet margin");
    v.field("sgd.lr", &mut t.sgd.lr, "learning rate");
    v.field("sgd.weight_decay", &mut t.sgd.weight_decay, "L2 weight decay");
    v.field("sgd.momentum", &mut t.sgd.momentum, "momentum");
    v.field("train.iterations", &mut t.iterations, "SGD iterations");
    v.field("train.p", &mut t.p, "identities per batch");
    v.field("train.k", &mut t.k, "recordings per identity per batch");
    v.field("train.seed", &mut t.seed, "initialization and sampler seed");
    v.field("train.lr_drop_at", &mut t.lr_drop_at, "iteration of the 10x learning-rate drop, or none");
    v.field("train.detach_reset", &mut t.backward.detach_reset, "stop gradients through the spike reset");
    let mut cal = t.calibration.unwrap_or(Calibration {
        samples: 0,
        ..Calibration::default()
    });
    v.field("calibration.samples", &mut cal.samples, "training recordings used to rescale spiking layers, 0 disables");
    v.field("calibration.target_rms", &mut cal.target_rms, "target RMS input current of each spiking layer");
    t.calibration = (cal.samples > 0).then_some(cal);
    v.field("teacher.file", &mut cfg.teacher_file, "TFS1 teacher features keyed by training sample id, empty uses the pseudo-teacher");
    v.field("train.checkpoint_every", &mut cfg.checkpoint_every, "checkpoint period in iterations, 0 keeps only the final one");
    v.field("train.threads", &mut cfg.threads, "worker threads, 1 is bit-reproducible, 0 uses every core");

    v.section("simulate command");
    bind_sim(v, "sim.", &mut cfg.sim);

    v.section("gradcheck command");
    let g = &mut cfg.gradcheck;
    v.field("gradcheck.seed", &mut g.seed, "toy model seed");
    v.field("gradcheck.mode", &mut g.mode, "dual, static or dynamic");
    v.field("gradcheck.step", &mut g.fd.step, "central-difference step");
    v.field("gradcheck.floor", &mut g.fd.floor, "denominator floor of the relative error");
    v.field("gradcheck.tolerance", &mut g.tolerance, "maximum accepted relative error");
}

struct Entry {
    value: String,
    line: usize,
}

struct Loader {
    entries: BTreeMap<String, Entry>,
    errors: Vec<String>,
}

impl Visitor for Loader {
    fn section(&mut self, _: &str) {}

    fn field<T: ConfigValue>(&mut self, key: &str, value: &mut T, _: &str) {
        if let Some(entry) = self.entries.remove(key) {
            match T::parse(&entry.value) {
                Some(v) => *value = v,
                None => self.errors.push(format!("line {}: cannot parse '{}' for {key}", entry.line, entry.value)),
            }
        }
    }
}

struct Dumper {
    out: String,
}

impl Visitor for Dumper {
    fn section(&mut self, title: &str) {
        write!(self.out, "\n# --- {title} ---\n").expect("writing to a String");
    }

    fn field<T: ConfigValue>(&mut self, key: &str, value: &mut T, doc: &str) {
        write!(self.out, "# {doc}\n{key} = {}\n", value.render()).expect("writing to a String");
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value, found '{line}'", i + 1)));
            };
            let key = key.trim().to_string();
            let entry = Entry {
                value: value.trim().to_string(),
                line: i + 1,
            };
            if let Some(prev) = entries.insert(key.clone(), entry) {
                return Err(Error::Config(format!("line {}: {key} already set on line {}", i + 1, prev.line)));
            }
        }
        let mut cfg = RunConfig::default();
        let mut loader = Loader {
            entries,
            errors: Vec::new(),
        };
        bind(&mut loader, &mut cfg);
        if let Some((key, entry)) = loader.entries.iter().next() {
            loader.errors.push(format!("line {}: unknown key {key}", entry.line));
        }
        if !loader.errors.is_empty() {
            return Err(Error::Config(loader.errors.join("; ")));
        }
        cfg.experiment = cfg.experiment.with_consistent_shapes();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read_file(path)?)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Every key with its current value and a one-line description.
    pub fn to_text(&self) -> String {
        let mut dumper = Dumper {
            out: String::from("# eventgait configuration\n"),
        };
        bind(&mut dumper, &mut self.clone());
        dumper.out
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let config = |r: eventgait_core::Result<()>| r.map_err(|err| Error::Config(err.to_string()));
        config(e.toy.validate())?;
        config(e.pipeline.validate())?;
        config(e.train.loss.validate())?;
        config(self.sim.validate())?;
        for c in &e.conditions {
            config(c.sim.validate())?;
            if c.brightness.is_nan() || c.brightness < 0.0 {
                return Err(Error::Config(format!("condition {} has negative brightness", c.name)));
            }
        }
        if e.conditions.is_empty() {
            return Err(Error::Config("at least one condition is required".into()));
        }
        let t = &e.train;
        if t.p < 2 || t.k < 2 {
            return Err(Error::Config(format!("batches need p >= 2 and k >= 2, got p={} k={}", t.p, t.k)));
        }
        if t.k > e.train_sequences * e.conditions.len() {
            return Err(Error::Config("train.k exceeds the training recordings per walker".into()));
        }
        if t.p > e.toy.n_identities {
            return Err(Error::Config("train.p exceeds the number of walkers".into()));
        }
        if e.toy.sequences_per_identity < 2 {
            return Err(Error::Config("need a gallery and at least one probe recording per walker".into()));
        }
        Ok(())
    }
}
