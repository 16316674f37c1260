//! Feature fusion, recognition head, the training objective, and SGD.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::math;
use crate::nn::Affine;
use crate::params::{self, Parameters};
use crate::snn::{BackwardOptions, DynamicConfig, DynamicInput, DynamicRecord, DynamicStream, SpikeFn};
use crate::static_stream::{align_loss, align_loss_grad, StaticConfig, StaticEncoder, StaticRecord};

/// Which feature streams feed the fusion layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StreamMode {
    #[default]
    Dual,
    StaticOnly,
    DynamicOnly,
}

impl StreamMode {
    pub fn uses_static(self) -> bool {
        !matches!(self, StreamMode::DynamicOnly)
    }

    pub fn uses_dynamic(self) -> bool {
        !matches!(self, StreamMode::StaticOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub triplet_margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_d: 0.2,
            triplet_margin: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_d >= 0.0) || !(self.triplet_margin >= 0.0) {
            bail!(InvalidArgument, "loss weights must be non-negative: {self:?}");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitEmbedding {
    pub f_gait: Vec<f64>,
    pub label: usize,
    pub sample_id: String,
}

/// Scales `h` to unit length.
pub fn l2_normalize(h: &[f64]) -> Result<Vec<f64>> {
    let n = math::norm(h);
    if !(n > 0.0) || !n.is_finite() {
        return Err(crate::Error::DegenerateEmbedding);
    }
    Ok(h.iter().map(|v| v / n).collect())
}

/// Concatenation, affine projection, and l2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    static_width: usize,
    dynamic_width: usize,
    pub projection: Affine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseRecord {
    input: Vec<f64>,
    pre: Vec<f64>,
    norm: f64,
}

impl FuseRecord {
    /// Projection output before normalization.
    pub fn pre_normalization(&self) -> &[f64] {
        &self.pre
    }
}

impl Fusion {
    pub fn new(static_width: usize, dynamic_width: usize, projection: Affine) -> Result<Self> {
        if projection.n_in() != static_width + dynamic_width {
            bail!(
                InvalidArgument,
                "projection takes {} inputs, streams provide {}",
                projection.n_in(),
                static_width + dynamic_width
            );
        }
        Ok(Self {
            static_width,
            dynamic_width,
            projection,
        })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, static_width: usize, dynamic_width: usize, out: usize) -> Result<Self> {
        Self::new(static_width, dynamic_width, Affine::random(rng, static_width + dynamic_width, out, 1.0)?)
    }

    pub fn output_width(&self) -> usize {
        self.projection.n_out()
    }

    pub fn forward(&self, f_s: &[f64], f_d: &[f64]) -> Result<(Vec<f64>, FuseRecord)> {
        if f_s.len() != self.static_width || f_d.len() != self.dynamic_width {
            bail!(
                InvalidArgument,
                "fusion expects widths ({}, {}), got ({}, {})",
                self.static_width,
                self.dynamic_width,
                f_s.len(),
                f_d.len()
            );
        }
        if f_s.iter().chain(f_d).any(|v| !v.is_finite()) {
            bail!(Numeric, "non-finite stream feature");
        }
        let mut input = Vec::with_capacity(f_s.len() + f_d.len());
        input.extend_from_slice(f_s);
        input.extend_from_slice(f_d);
        let pre = self.projection.forward(&input)?;
        let out = l2_normalize(&pre)?;
        let norm = math::norm(&pre);
        Ok((out, FuseRecord { input, pre, norm }))
    }

    /// Returns the gradients of the static and dynamic inputs.
    pub fn backward(&self, record: &FuseRecord, d_out: &[f64], grads: &mut Fusion) -> Result<(Vec<f64>, Vec<f64>)> {
        let f: Vec<f64> = record.pre.iter().map(|v| v / record.norm).collect();
        let proj = math::dot(&f, d_out);
        let d_pre: Vec<f64> = d_out
            .iter()
            .zip(&f)
            .map(|(g, fi)| (g - fi * proj) / record.norm)
            .collect();
        let d_in = self.projection.backward(&record.input, &d_pre, &mut grads.projection)?;
        let (s, d) = d_in.split_at(self.static_width);
        Ok((s.to_vec(), d.to_vec()))
    }
}

impl Parameters for Fusion {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.projection.visit(&params::join(prefix, "projection"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.projection.visit_mut(f);
    }
}

/// Cross-entropy of `logits` against `label`, computed with log-sum-exp.
pub fn ce_loss(logits: &[f64], label: usize) -> Result<f64> {
    Ok(ce_loss_grad(logits, label)?.0)
}

/// Loss and its gradient `softmax(logits) - onehot(label)`.
pub fn ce_loss_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        bail!(InvalidArgument, "label {label} out of range for {} classes", logits.len());
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| math::exp(z - max)).sum();
    let lse = max + math::ln(sum);
    let mut grad: Vec<f64> = logits.iter().map(|&z| math::exp(z - lse)).collect();
    grad[label] -= 1.0;
    Ok((lse - logits[label], grad))
}

/// Batch-hard triplet loss over Euclidean distances. Returns the mean hinge
/// over anchors that have both a positive and a negative, and the gradient
/// for every embedding.
pub fn triplet_loss(embeddings: &[Vec<f64>], labels: &[usize], margin: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = embeddings.len();
    if labels.len() != n {
        bail!(InvalidArgument, "{n} embeddings but {} labels", labels.len());
    }
    if labels.iter().all(|&l| Some(&l) == labels.first()) {
        bail!(DegenerateBatch, "batch holds a single identity");
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = math::euclidean(&embeddings[i], &embeddings[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let dim = embeddings[0].len();
    let mut grads = vec![vec![0.0; dim]; n];
    let mut total = 0.0;
    let mut anchors = 0usize;
    for a in 0..n {
        let mut hardest_pos: Option<usize> = None;
        let mut hardest_neg: Option<usize> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            if labels[j] == labels[a] {
                if hardest_pos.is_none_or(|p| dist[a * n + j] > dist[a * n + p]) {
                    hardest_pos = Some(j);
                }
            } else if hardest_neg.is_none_or(|q| dist[a * n + j] < dist[a * n + q]) {
                hardest_neg = Some(j);
            }
        }
        let (Some(p), Some(q)) = (hardest_pos, hardest_neg) else {
            continue;
        };
        anchors += 1;
        let (dp, dn) = (dist[a * n + p], dist[a * n + q]);
        let hinge = dp - dn + margin;
        if hinge <= 0.0 {
            continue;
        }
        total += hinge;
        // d|a-b|/da = (a-b)/|a-b|; taken as zero at coincident points.
        for (other, sign, d) in [(p, 1.0, dp), (q, -1.0, dn)] {
            if d == 0.0 {
                continue;
            }
            for k in 0..dim {
                let unit = (embeddings[a][k] - embeddings[other][k]) / d;
                grads[a][k] += sign * unit;
                grads[other][k] -= sign * unit;
            }
        }
    }
    if anchors == 0 {
        bail!(DegenerateBatch, "no anchor has both a positive and a negative");
    }
    let scale = 1.0 / anchors as f64;
    grads.iter_mut().flatten().for_each(|g| *g *= scale);
    Ok((total * scale, grads))
}

pub fn total_loss(ce: f64, tri: f64, align: f64, weights: &LossWeights) -> f64 {
    ce + tri + weights.lambda_d * align
}

/// SGD with momentum and L2 weight decay:
/// `v = momentum * v + g + weight_decay * p`, `p = p - lr * v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
}

impl Default for Sgd {
    fn default() -> Self {
        Self {
            lr: 0.1,
            weight_decay: 5e-4,
            momentum: 0.9,
        }
    }
}

impl Sgd {
    /// Leaves parameters and velocity untouched when any gradient entry is
    /// not finite.
    pub fn step<P: Parameters>(&self, params: &mut P, grads: &P, velocity: &mut P) -> Result<()> {
        let g = params::flatten(grads);
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            bail!(Numeric, "non-finite gradient at flat index {i}; step aborted");
        }
        let mut p = params::flatten(params);
        let mut v = params::flatten(velocity);
        if p.len() != g.len() || v.len() != g.len() {
            bail!(InvalidArgument, "parameter, gradient and velocity sizes differ");
        }
        for i in 0..p.len() {
            v[i] = self.momentum * v[i] + g[i] + self.weight_decay * p[i];
            p[i] -= self.lr * v[i];
        }
        params::load_flat(params, &p)?;
        params::load_flat(velocity, &v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mode: StreamMode,
    pub static_stream: StaticConfig,
    pub dynamic_stream: DynamicConfig,
    pub embed_dim: usize,
    pub n_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: StreamMode::Dual,
            static_stream: StaticConfig::default(),
            dynamic_stream: DynamicConfig::default(),
            embed_dim: 64,
            n_classes: 8,
        }
    }
}

/// Network inputs for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInput {
    /// Long-term grid, `2 K_static x size x size`.
    pub static_grid: Vec<f64>,
    pub dynamic: DynamicInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
    /// Aligned static feature, when the static stream is active.
    pub aligned: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    static_record: Option<StaticRecord>,
    dynamic_record: Option<DynamicRecord>,
    fuse: FuseRecord,
}

impl ForwardRecord {
    pub fn dynamic(&self) -> Option<&DynamicRecord> {
        self.dynamic_record.as_ref()
    }

    pub fn fuse(&self) -> &FuseRecord {
        &self.fuse
    }
}

/// Dual-stream recognizer. Disabled streams are absent and contribute a
/// zero-width feature.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitModel {
    pub config: ModelConfig,
    pub static_stream: Option<StaticEncoder>,
    pub dynamic_stream: Option<DynamicStream>,
    pub fusion: Fusion,
    pub classifier: Affine,
}

impl GaitModel {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, config: ModelConfig) -> Result<Self> {
        if config.embed_dim == 0 || config.n_classes < 2 {
            bail!(InvalidArgument, "need a positive embedding width and at least two classes");
        }
        let static_stream = if config.mode.uses_static() {
            Some(StaticEncoder::new(rng, config.static_stream.clone())?)
        } else {
            None
        };
        let dynamic_stream = if config.mode.uses_dynamic() {
            Some(DynamicStream::new(rng, config.dynamic_stream.clone())?)
        } else {
            None
        };
        let ws = static_stream.as_ref().map_or(0, |s| s.embed_dim());
        let wd = dynamic_stream.as_ref().map_or(0, |d| d.output_width());
        let fusion = Fusion::random(rng, ws, wd, config.embed_dim)?;
        let classifier = Affine::random(rng, config.embed_dim, config.n_classes, 1.0)?;
        Ok(Self {
            config,
            static_stream,
            dynamic_stream,
            fusion,
            classifier,
        })
    }

    pub fn forward(&self, input: &SampleInput, mode: SpikeFn) -> Result<(ForwardOutput, ForwardRecord)> {
        let (f_s, aligned, static_record) = match &self.static_stream {
            Some(enc) => {
                let (out, rec) = enc.forward(&input.static_grid, enc.config.input_size)?;
                (out.embedding, Some(out.aligned), Some(rec))
            }
            None => (Vec::new(), None, None),
        };
        let (f_d, dynamic_record) = match &self.dynamic_stream {
            Some(dy) => {
                let (f, rec) = dy.forward(&input.dynamic, mode)?;
                (f, Some(rec))
            }
            None => (Vec::new(), None),
        };
        let (embedding, fuse) = self.fusion.forward(&f_s, &f_d)?;
        let logits = self.classifier.forward(&embedding)?;
        Ok((
            ForwardOutput {
                embedding,
                logits,
                aligned,
            },
            ForwardRecord {
                static_record,
                dynamic_record,
                fuse,
            },
        ))
    }

    pub fn embed(&self, input: &SampleInput) -> Result<Vec<f64>> {
        Ok(self.forward(input, SpikeFn::Heaviside)?.0.embedding)
    }

    pub fn backward(
        &self,
        record: &ForwardRecord,
        output: &ForwardOutput,
        upstream: &Upstream,
        opts: BackwardOptions,
        grads: &mut GaitModel,
    ) -> Result<()> {
        let mut d_emb = upstream.embedding.clone();
        let d_cls = self
            .classifier
            .backward(&output.embedding, &upstream.logits, &mut grads.classifier)?;
        params::add_into(&mut d_emb, &d_cls);
        let (d_s, d_d) = self.fusion.backward(&record.fuse, &d_emb, &mut grads.fusion)?;
        if let (Some(enc), Some(rec), Some(g)) = (&self.static_stream, &record.static_record, &mut grads.static_stream) {
            enc.backward(rec, Some(&d_s), upstream.aligned.as_deref(), g)?;
        }
        if let (Some(dy), Some(rec), Some(g)) = (&self.dynamic_stream, &record.dynamic_record, &mut grads.dynamic_stream) {
            dy.backward(rec, &d_d, opts, g)?;
        }
        Ok(())
    }
}

impl Parameters for GaitModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        if let Some(s) = &self.static_stream {
            s.visit(&params::join(prefix, "static"), f);
        }
        if let Some(d) = &self.dynamic_stream {
            d.visit(&params::join(prefix, "dynamic"), f);
        }
        self.fusion.visit(&params::join(prefix, "fusion"), f);
        self.classifier.visit(&params::join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        if let Some(s) = &mut self.static_stream {
            s.visit_mut(f);
        }
        if let Some(d) = &mut self.dynamic_stream {
            d.visit_mut(f);
        }
        self.fusion.visit_mut(f);
        self.classifier.visit_mut(f);
    }
}

/// Loss gradients with respect to one sample's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Upstream {
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
    pub aligned: Option<Vec<f64>>,
}

/// Runs independent per-sample jobs; implementations may parallelize but must
/// return results in index order.
pub trait Executor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub ce: f64,
    pub tri: f64,
    pub align: f64,
    pub total: f64,
}

pub struct Batch<'a> {
    pub inputs: Vec<&'a SampleInput>,
    pub labels: Vec<usize>,
    /// Teacher feature per sample; required when the static stream is active
    /// and `lambda_d > 0`.
    pub teachers: Vec<Option<&'a [f64]>>,
}

/// Evaluates the batch objective and its parameter gradient. Cross-entropy
/// and alignment are averaged over samples; per-sample gradients are summed
/// in index order so the result does not depend on the executor.
pub fn batch_loss_and_grad<E: Executor>(
    model: &GaitModel,
    batch: &Batch<'_>,
    weights: &LossWeights,
    mode: SpikeFn,
    opts: BackwardOptions,
    exec: &E,
) -> Result<(LossBreakdown, GaitModel)> {
    let n = batch.inputs.len();
    if batch.labels.len() != n || batch.teachers.len() != n {
        bail!(InvalidArgument, "batch inputs, labels and teachers differ in length");
    }
    if n == 0 {
        bail!(DegenerateBatch, "empty batch");
    }
    let forwards: Vec<Result<(ForwardOutput, ForwardRecord)>> = exec.map(n, |i| model.forward(batch.inputs[i], mode));
    let forwards = forwards.into_iter().collect::<Result<Vec<_>>>()?;
    let embeddings: Vec<Vec<f64>> = forwards.iter().map(|(o, _)| o.embedding.clone()).collect();
    let (tri, d_tri) = triplet_loss(&embeddings, &batch.labels, weights.triplet_margin)?;

    let inv_n = 1.0 / n as f64;
    let use_align = model.static_stream.is_some() && weights.lambda_d > 0.0;
    let mut ce = 0.0;
    let mut align = 0.0;
    let mut upstreams = Vec::with_capacity(n);
    for (i, (out, _)) in forwards.iter().enumerate() {
        let (l, mut d_logits) = ce_loss_grad(&out.logits, batch.labels[i])?;
        ce += l * inv_n;
        d_logits.iter_mut().for_each(|g| *g *= inv_n);
        let d_aligned = match (use_align, &out.aligned) {
            (true, Some(z)) => {
                let Some(teacher) = batch.teachers[i] else {
                    bail!(Data, "sample {i} has no teacher feature");
                };
                align += align_loss(z, teacher)? * inv_n;
                let mut g = align_loss_grad(z, teacher)?;
                g.iter_mut().for_each(|v| *v *= weights.lambda_d * inv_n);
                Some(g)
            }
            _ => None,
        };
        upstreams.push(Upstream {
            embedding: d_tri[i].clone(),
            logits: d_logits,
            aligned: d_aligned,
        });
    }
    let total = total_loss(ce, tri, align, weights);
    if !total.is_finite() {
        bail!(Numeric, "non-finite loss (ce {ce}, tri {tri}, align {align})");
    }

    let per_sample: Vec<Result<GaitModel>> = exec.map(n, |i| {
        let mut g = params::zeros_like(model);
        let (out, rec) = &forwards[i];
        model.backward(rec, out, &upstreams[i], opts, &mut g)?;
        Ok(g)
    });
    let mut grads = params::zeros_like(model);
    let mut acc = params::flatten(&grads);
    for g in per_sample {
        params::add_into(&mut acc, &params::flatten(&g?));
    }
    params::load_flat(&mut grads, &acc)?;
    Ok((LossBreakdown { ce, tri, align, total }, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ce_examples() {
        let uniform = [0.3; 5];
        assert!((ce_loss(&uniform, 2).unwrap() - math::ln(5.0)).abs() < 1e-12);
        assert!(ce_loss(&[1000.0, 0.0, 0.0], 0).unwrap() < 1e-6);
        let extreme = [1e4, -1e4, 0.0];
        assert!((ce_loss(&extreme, 1).unwrap() - 2e4).abs() < 1e-9);
        assert!(ce_loss(&extreme, 3).is_err());
    }

    #[test]
    fn ce_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..6).map(|_| rng.random_range(-50.0..50.0)).collect();
            let label = rng.random_range(0..6);
            let m = logits.iter().copied().fold(f64::MIN, f64::max);
            let s: f64 = logits.iter().map(|z| (z - m).exp()).sum();
            let want = -(logits[label] - m - s.ln());
            assert!((ce_loss(&logits, label).unwrap() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert!((total_loss(1.0, 0.5, 2.0, &w) - 1.9).abs() < 1e-15);
        let none = LossWeights { lambda_d: 0.0, ..w };
        assert_eq!(total_loss(1.0, 0.5, 2.0, &none), 1.5);
    }

    #[test]
    fn triplet_edge_cases() {
        let same = vec![vec![0.5, 0.5]; 4];
        let (l, _) = triplet_loss(&same, &[0, 0, 1, 1], 0.2).unwrap();
        assert!((l - 0.2).abs() < 1e-15);
        let apart = vec![vec![0.0, 0.0], vec![0.0, 0.1], vec![5.0, 0.0], vec![5.0, 0.1]];
        assert_eq!(triplet_loss(&apart, &[0, 0, 1, 1], 0.2).unwrap().0, 0.0);
        assert!(matches!(
            triplet_loss(&same, &[3, 3, 3, 3], 0.2),
            Err(crate::Error::DegenerateBatch(_))
        ));
        assert!(matches!(
            triplet_loss(&same[..2], &[0, 1], 0.2),
            Err(crate::Error::DegenerateBatch(_))
        ));
    }

    fn exhaustive_triplet(e: &[Vec<f64>], labels: &[usize], margin: f64) -> f64 {
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let mut total = 0.0;
        let mut anchors = 0;
        for a in 0..e.len() {
            let mut best: Option<f64> = None;
            for p in 0..e.len() {
                for q in 0..e.len() {
                    if p == a || labels[p] != labels[a] || labels[q] == labels[a] {
                        continue;
                    }
                    let v = (d(&e[a], &e[p]) - d(&e[a], &e[q]) + margin).max(0.0);
                    best = Some(best.map_or(v, |b: f64| b.max(v)));
                }
            }
            if let Some(b) = best {
                total += b;
                anchors += 1;
            }
        }
        total / anchors as f64
    }

    #[test]
    fn triplet_matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let e: Vec<Vec<f64>> = (0..8).map(|_| params::gaussian(&mut rng, 4, 0.3)).collect();
            let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
            let (l, _) = triplet_loss(&e, &labels, 0.2).unwrap();
            assert!((l - exhaustive_triplet(&e, &labels, 0.2)).abs() < 1e-10);
        }
    }

    #[test]
    fn triplet_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e: Vec<Vec<f64>> = (0..6).map(|_| params::gaussian(&mut rng, 3, 0.5)).collect();
        let labels = [0, 0, 1, 1, 2, 2];
        let (_, g) = triplet_loss(&e, &labels, 1.0).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            for k in 0..3 {
                let mut up = e.clone();
                up[i][k] += h;
                let mut down = e.clone();
                down[i][k] -= h;
                let fd = (triplet_loss(&up, &labels, 1.0).unwrap().0 - triplet_loss(&down, &labels, 1.0).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[i][k]).abs() < 1e-6, "{fd} vs {}", g[i][k]);
            }
        }
    }

    #[test]
    fn fuse_unit_norm_degenerate_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fusion = Fusion::random(&mut rng, 3, 2, 4).unwrap();
        let fs = params::gaussian(&mut rng, 3, 1.0);
        let fd = params::gaussian(&mut rng, 2, 1.0);
        let (out, rec) = fusion.forward(&fs, &fd).unwrap();
        assert!((math::norm(&out) - 1.0).abs() < 1e-9);
        assert!(fusion.forward(&fs, &fd[..1]).is_err());

        let mut biased = fusion.clone();
        biased.projection.bias = vec![0.5, 0.0, 0.0, 0.0];
        let (_, r) = biased.forward(&[0.0; 3], &[0.0; 2]).unwrap();
        assert_eq!(r.pre_normalization(), &[0.5, 0.0, 0.0, 0.0]);
        let zero = Fusion::new(3, 2, Affine::new(5, 4, vec![0.0; 20], vec![0.0; 4]).unwrap()).unwrap();
        assert!(matches!(zero.forward(&[0.0; 3], &[0.0; 2]), Err(crate::Error::DegenerateEmbedding)));

        let probe = [0.3, -1.0, 0.7, 0.2];
        let mut g = params::zeros_like(&fusion);
        let (ds, dd) = fusion.backward(&rec, &probe, &mut g).unwrap();
        let loss = |f: &Fusion, s: &[f64], d: &[f64]| math::dot(&f.forward(s, d).unwrap().0, &probe);
        let h = 1e-6;
        let flat = params::flatten(&fusion);
        for (i, a) in params::flatten(&g).iter().enumerate() {
            let mut f2 = fusion.clone();
            let mut p = flat.clone();
            p[i] += h;
            params::load_flat(&mut f2, &p).unwrap();
            let up = loss(&f2, &fs, &fd);
            p[i] -= 2.0 * h;
            params::load_flat(&mut f2, &p).unwrap();
            let num = (up - loss(&f2, &fs, &fd)) / (2.0 * h);
            assert!((num - a).abs() <= 1e-5 * num.abs().max(1e-3));
        }
        for (i, a) in ds.iter().chain(&dd).enumerate() {
            let mut x: Vec<f64> = fs.iter().chain(&fd).copied().collect();
            x[i] += h;
            let up = loss(&fusion, &x[..3], &x[3..]);
            x[i] -= 2.0 * h;
            let num = (up - loss(&fusion, &x[..3], &x[3..])) / (2.0 * h);
            assert!((num - a).abs() <= 1e-5 * num.abs().max(1e-3));
        }
    }

    #[derive(Clone)]
    struct Scalar(Vec<f64>);

    impl Parameters for Scalar {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
            f(prefix, &[self.0.len()], &self.0);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
            f(&mut self.0);
        }
    }

    #[test]
    fn sgd_examples() {
        let opt = Sgd {
            lr: 0.1,
            weight_decay: 0.0,
            momentum: 0.0,
        };
        let mut p = Scalar(vec![1.0]);
        let mut v = Scalar(vec![0.0]);
        opt.step(&mut p, &Scalar(vec![1.0]), &mut v).unwrap();
        assert!((p.0[0] - 0.9).abs() < 1e-15);

        let mut p = Scalar(vec![0.3, -2.0]);
        let before = p.0.clone();
        let mut v = Scalar(vec![0.0; 2]);
        Sgd { weight_decay: 0.0, ..Sgd::default() }
            .step(&mut p, &Scalar(vec![0.0; 2]), &mut v)
            .unwrap();
        assert_eq!(p.0, before);

        let frozen = Sgd { lr: 0.0, ..Sgd::default() };
        let mut v = Scalar(vec![0.0; 2]);
        frozen.step(&mut p, &Scalar(vec![3.0, 1.0]), &mut v).unwrap();
        assert_eq!(p.0, before);
    }

    #[test]
    fn sgd_momentum_trajectory_matches_recurrence() {
        let opt = Sgd {
            lr: 0.05,
            weight_decay: 0.01,
            momentum: 0.9,
        };
        let grads = [0.4, -0.2, 0.7];
        let mut p = Scalar(vec![1.5]);
        let mut v = Scalar(vec![0.0]);
        for g in grads {
            opt.step(&mut p, &Scalar(vec![g]), &mut v).unwrap();
        }
        let v1 = 0.4 + 0.01 * 1.5;
        let p1 = 1.5 - 0.05 * v1;
        let v2 = 0.9 * v1 - 0.2 + 0.01 * p1;
        let p2 = p1 - 0.05 * v2;
        let v3 = 0.9 * v2 + 0.7 + 0.01 * p2;
        let p3 = p2 - 0.05 * v3;
        assert!((p.0[0] - p3).abs() < 1e-12);
        assert!((v.0[0] - v3).abs() < 1e-12);
    }

    #[test]
    fn sgd_rejects_non_finite_gradient_without_mutation() {
        let mut p = Scalar(vec![1.0, 2.0]);
        let mut v = Scalar(vec![0.5, 0.5]);
        let err = Sgd::default().step(&mut p, &Scalar(vec![0.0, f64::NAN]), &mut v);
        assert!(matches!(err, Err(crate::Error::Numeric(_))));
        assert_eq!(p.0, vec![1.0, 2.0]);
        assert_eq!(v.0, vec![0.5, 0.5]);
    }
}
