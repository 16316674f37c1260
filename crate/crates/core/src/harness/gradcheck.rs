//! Central finite-difference verification of analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{
    batch_loss_and_grad, triplet_loss, Batch, Fusion, GaitModel, LossWeights, ModelConfig,
    SampleInput, Sequential, StreamMode,
};
use crate::nn::Affine;
use crate::params::{self, Parameters};
use crate::snn::{BackwardOptions, DynamicConfig, DynamicInput, SpikeFn};
use crate::static_stream::StaticConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradcheckReport {
    pub entries: Vec<GradEntry>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradEntry> {
        self.entries.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSettings {
    /// Central-difference step. Near the cube root of machine epsilon the
    /// truncation and rounding errors balance.
    pub step: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to rounding do not produce huge ratios.
    pub floor: f64,
}

impl Default for FdSettings {
    fn default() -> Self {
        Self { step: 1e-5, floor: 1e-6 }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` (same type and layout as `params`) against central
/// differences of `loss` for every parameter entry.
pub fn finite_difference_check<P, L>(params_in: &P, analytic: &P, loss: L, fd: FdSettings) -> Result<GradcheckReport>
where
    P: Parameters + Clone,
    L: Fn(&P) -> Result<f64>,
{
    let flat = params::flatten(params_in);
    let grad = params::flatten(analytic);
    let mut names = Vec::with_capacity(flat.len());
    params_in.visit("", &mut |name, _, data| {
        for i in 0..data.len() {
            names.push((String::from(name), i));
        }
    });
    let mut probe = params_in.clone();
    let mut shifted = flat.clone();
    let mut entries = Vec::with_capacity(flat.len());
    for (i, (name, index)) in names.into_iter().enumerate() {
        shifted[i] = flat[i] + fd.step;
        params::load_flat(&mut probe, &shifted)?;
        let up = loss(&probe)?;
        shifted[i] = flat[i] - fd.step;
        params::load_flat(&mut probe, &shifted)?;
        let down = loss(&probe)?;
        shifted[i] = flat[i];
        let numeric = (up - down) / (2.0 * fd.step);
        entries.push(GradEntry {
            name,
            index,
            analytic: grad[i],
            numeric,
            rel_error: relative_error(grad[i], numeric, fd.floor),
        });
    }
    Ok(GradcheckReport { entries })
}

/// Model, inputs, labels and teacher features.
pub type ToyProblem = (GaitModel, Vec<SampleInput>, Vec<usize>, Vec<Vec<f64>>);

/// A dual-stream model small enough for exhaustive checking (under 2k
/// parameters) and a batch of random inputs for it.
pub fn toy_model_and_batch(seed: u64, mode: StreamMode) -> Result<ToyProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig {
        mode,
        static_stream: StaticConfig {
            in_channels: 2,
            input_size: 8,
            widths: alloc::vec![4, 6],
            embed_dim: 6,
            teacher_dim: 4,
        },
        dynamic_stream: DynamicConfig {
            in_channels: 2,
            input_size: 8,
            input_pool: 2,
            mid_pool: 2,
            widths: [4, 6],
            taus: alloc::vec![2.0, 4.0, 8.0],
            gate_hidden: 3,
            init_gains: [3.0, 3.0],
            ..DynamicConfig::default()
        },
        embed_dim: 6,
        n_classes: 3,
    };
    let model = GaitModel::new(&mut rng, config)?;
    let labels = alloc::vec![0, 0, 1, 1, 2, 2];
    let inputs = labels
        .iter()
        .map(|_| SampleInput {
            static_grid: params::gaussian(&mut rng, 2 * 64, 1.0).into_iter().map(f64::abs).collect(),
            dynamic: DynamicInput {
                channels: 2,
                size: 8,
                steps: (0..4)
                    .map(|_| params::gaussian(&mut rng, 2 * 64, 1.5).into_iter().map(f64::abs).collect())
                    .collect(),
            },
        })
        .collect();
    let teachers = labels.iter().map(|_| params::gaussian(&mut rng, 4, 0.5)).collect();
    Ok((model, inputs, labels, teachers))
}

/// Full objective check on the toy model with the smoothed spike function
/// and an undetached reset path, so forward and backward describe the same
/// function.
pub fn gradcheck_toy_model(seed: u64, mode: StreamMode, fd: FdSettings) -> Result<GradcheckReport> {
    let (model, inputs, labels, teachers) = toy_model_and_batch(seed, mode)?;
    let batch = Batch {
        inputs: inputs.iter().collect(),
        labels,
        teachers: teachers.iter().map(|t| Some(t.as_slice())).collect(),
    };
    let weights = LossWeights::default();
    let opts = BackwardOptions { detach_reset: false };
    let (_, grads) = batch_loss_and_grad(&model, &batch, &weights, SpikeFn::Smooth, opts, &Sequential)?;
    finite_difference_check(
        &model,
        &grads,
        |m| Ok(batch_loss_and_grad(m, &batch, &weights, SpikeFn::Smooth, opts, &Sequential)?.0.total),
        fd,
    )
}

#[derive(Debug, Clone, PartialEq)]
struct Heads {
    fusion: Fusion,
    classifier: Affine,
}

impl Parameters for Heads {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.fusion.visit(&params::join(prefix, "fusion"), f);
        self.classifier.visit(&params::join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.fusion.visit_mut(f);
        self.classifier.visit_mut(f);
    }
}

fn heads_loss(h: &Heads, feats: &[(Vec<f64>, Vec<f64>)], labels: &[usize], grads: Option<&mut Heads>) -> Result<f64> {
    let mut outs = Vec::new();
    let mut records = Vec::new();
    for (s, d) in feats {
        let (e, r) = h.fusion.forward(s, d)?;
        outs.push(e);
        records.push(r);
    }
    let (tri, d_tri) = triplet_loss(&outs, labels, 0.2)?;
    let n = feats.len() as f64;
    let mut ce = 0.0;
    let mut d_logits = Vec::new();
    for (e, &l) in outs.iter().zip(labels) {
        let (loss, g) = crate::model::ce_loss_grad(&h.classifier.forward(e)?, l)?;
        ce += loss / n;
        d_logits.push(g.into_iter().map(|v| v / n).collect::<Vec<_>>());
    }
    if let Some(g) = grads {
        for i in 0..feats.len() {
            let mut d_emb = h.classifier.backward(&outs[i], &d_logits[i], &mut g.classifier)?;
            params::add_into(&mut d_emb, &d_tri[i]);
            h.fusion.backward(&records[i], &d_emb, &mut g.fusion)?;
        }
    }
    Ok(ce + tri)
}

/// Check of the non-spiking heads alone (fusion and classifier) on fixed
/// random stream features; the map is smooth so agreement is much tighter.
pub fn gradcheck_heads(seed: u64, fd: FdSettings) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = Heads {
        fusion: Fusion::random(&mut rng, 5, 3, 4)?,
        classifier: Affine::random(&mut rng, 4, 3, 1.0)?,
    };
    let labels = [0, 0, 1, 1, 2, 2];
    let feats: Vec<(Vec<f64>, Vec<f64>)> = labels
        .iter()
        .map(|_| (params::gaussian(&mut rng, 5, 1.0), params::gaussian(&mut rng, 3, 1.0)))
        .collect();
    let mut grads = params::zeros_like(&heads);
    heads_loss(&heads, &feats, &labels, Some(&mut grads))?;
    finite_difference_check(&heads, &grads, |h| heads_loss(h, &feats, &labels, None), fd)
}
