use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{BackwardOptions, LayerRecord, LifParams, SpikeFn, SpikingLayer, SurrogateConfig, Synapse};
use crate::error::{bail, Result};
use crate::math;
use crate::params::{self, Parameters};

/// Mixture coefficients produced by the spiking gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateOutput {
    pub alpha: Vec<f64>,
    pub logits: Vec<f64>,
    /// Time-averaged spike rates of the gate's hidden neurons.
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateRecord {
    pub layer: LayerRecord,
    pub output: GateOutput,
    pub sites: usize,
}

/// Spatial average pool, one spiking layer, temporal rate average, affine
/// head, softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub layer: SpikingLayer,
    /// `n_experts x hidden`.
    pub head_weights: Vec<f64>,
    pub head_bias: Vec<f64>,
}

impl Gate {
    pub fn n_experts(&self) -> usize {
        self.head_bias.len()
    }

    /// Spatial mean of every channel at every step.
    fn pool(&self, inputs: &[Vec<f64>], sites: usize) -> Vec<Vec<f64>> {
        let channels = self.layer.n_in();
        inputs
            .iter()
            .map(|x| {
                (0..channels)
                    .map(|c| x[c * sites..(c + 1) * sites].iter().sum::<f64>() / sites as f64)
                    .collect()
            })
            .collect()
    }

    pub fn forward(
        &self,
        inputs: &[Vec<f64>],
        sites: usize,
        mode: SpikeFn,
    ) -> Result<(GateOutput, GateRecord)> {
        if inputs.is_empty() {
            bail!(InvalidArgument, "gate needs at least one time step");
        }
        let pooled = self.pool(inputs, sites);
        let (spikes, layer) = self.layer.forward(&pooled, 1, mode)?;
        let hidden = self.layer.n_out();
        let steps = spikes.len() as f64;
        let rates: Vec<f64> = (0..hidden)
            .map(|h| spikes.iter().map(|s| s[h]).sum::<f64>() / steps)
            .collect();
        let logits: Vec<f64> = (0..self.n_experts())
            .map(|i| self.head_bias[i] + math::dot(&self.head_weights[i * hidden..(i + 1) * hidden], &rates))
            .collect();
        let alpha = math::softmax(&logits);
        let output = GateOutput { alpha, logits, rates };
        Ok((
            output.clone(),
            GateRecord {
                layer,
                output,
                sites,
            },
        ))
    }

    /// Returns the gradient with respect to the gate's inputs.
    pub fn backward(
        &self,
        record: &GateRecord,
        grad_alpha: &[f64],
        opts: BackwardOptions,
        grads: &mut Gate,
    ) -> Result<Vec<Vec<f64>>> {
        let n = self.n_experts();
        if grad_alpha.len() != n {
            bail!(State, "alpha gradient has {} entries for {n} experts", grad_alpha.len());
        }
        let alpha = &record.output.alpha;
        let inner = math::dot(grad_alpha, alpha);
        let d_logits: Vec<f64> = (0..n).map(|i| alpha[i] * (grad_alpha[i] - inner)).collect();
        let hidden = self.layer.n_out();
        let mut d_rates = vec![0.0; hidden];
        for i in 0..n {
            grads.head_bias[i] += d_logits[i];
            for h in 0..hidden {
                grads.head_weights[i * hidden + h] += d_logits[i] * record.output.rates[h];
                d_rates[h] += self.head_weights[i * hidden + h] * d_logits[i];
            }
        }
        let steps = record.layer.steps();
        let d_spikes: Vec<Vec<f64>> = (0..steps)
            .map(|_| d_rates.iter().map(|d| d / steps as f64).collect())
            .collect();
        let d_pooled = self.layer.backward(&record.layer, &d_spikes, opts, &mut grads.layer)?;
        let sites = record.sites;
        Ok(d_pooled
            .iter()
            .map(|dp| {
                let mut dx = vec![0.0; dp.len() * sites];
                for (c, d) in dp.iter().enumerate() {
                    dx[c * sites..(c + 1) * sites].iter_mut().for_each(|v| *v = d / sites as f64);
                }
                dx
            })
            .collect())
    }
}

impl Parameters for Gate {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.layer.visit(&params::join(prefix, "layer"), f);
        let hidden = self.layer.n_out();
        f(&params::join(prefix, "head.weights"), &[self.n_experts(), hidden], &self.head_weights);
        f(&params::join(prefix, "head.bias"), &[self.n_experts()], &self.head_bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.layer.visit_mut(f);
        f(&mut self.head_weights);
        f(&mut self.head_bias);
    }
}

/// Parallel spiking experts with distinct membrane time constants, mixed by
/// the gate's convex coefficients at every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct MoseLayer {
    pub experts: Vec<SpikingLayer>,
    pub gate: Gate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoseRecord {
    pub sites: usize,
    pub experts: Vec<LayerRecord>,
    pub gate: GateRecord,
}

impl MoseLayer {
    /// Random experts, one per entry of `taus` (which must be pairwise
    /// distinct). The gate runs at the geometric mean of the expert taus.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        n_in: usize,
        n_out: usize,
        taus: &[f64],
        gate_hidden: usize,
        template: LifParams,
        surrogate: SurrogateConfig,
        synapse: Synapse,
        gain: f64,
    ) -> Result<Self> {
        if taus.is_empty() {
            bail!(InvalidArgument, "need at least one expert");
        }
        for (i, a) in taus.iter().enumerate() {
            if taus[..i].contains(a) {
                bail!(InvalidArgument, "expert time constants must be distinct, {a} repeats");
            }
        }
        let experts = taus
            .iter()
            .map(|&tau| SpikingLayer::random(rng, n_in, n_out, gain, template.with_tau(tau), surrogate, synapse))
            .collect::<Result<Vec<_>>>()?;
        let gate_tau = math::exp(taus.iter().map(|&t| math::ln(t)).sum::<f64>() / taus.len() as f64);
        let layer = SpikingLayer::random(rng, n_in, gate_hidden, gain, template.with_tau(gate_tau), surrogate, synapse)?;
        let head_std = 1.0 / libm::sqrt(gate_hidden.max(1) as f64);
        let gate = Gate {
            layer,
            head_weights: params::gaussian(rng, taus.len() * gate_hidden, head_std),
            head_bias: vec![0.0; taus.len()],
        };
        Self::from_parts(experts, gate)
    }

    /// Assembles a layer from explicit parts. Only shapes are checked; equal
    /// expert taus are allowed here so degenerate mixtures can be studied.
    pub fn from_parts(experts: Vec<SpikingLayer>, gate: Gate) -> Result<Self> {
        let Some(first) = experts.first() else {
            bail!(InvalidArgument, "need at least one expert");
        };
        let (n_in, n_out) = (first.n_in(), first.n_out());
        if experts.iter().any(|e| e.n_in() != n_in || e.n_out() != n_out) {
            bail!(InvalidArgument, "experts must share input and output shapes");
        }
        if gate.layer.n_in() != n_in
            || gate.n_experts() != experts.len()
            || gate.head_weights.len() != experts.len() * gate.layer.n_out()
        {
            bail!(InvalidArgument, "gate shape does not match the experts");
        }
        Ok(Self { experts, gate })
    }

    pub fn n_in(&self) -> usize {
        self.experts[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.experts[0].n_out()
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    /// Scales every expert and the gate's spiking layer so their input
    /// currents over `sequences` have root-mean-square `target`.
    pub fn calibrate(&mut self, sequences: &[&[Vec<f64>]], sites: usize, target: f64) {
        let flat: Vec<Vec<f64>> = sequences.iter().flat_map(|s| s.iter().cloned()).collect();
        for e in &mut self.experts {
            e.calibrate(&flat, sites, target);
        }
        let pooled = self.gate.pool(&flat, sites);
        self.gate.layer.calibrate(&pooled, 1, target);
    }

    pub fn gate_forward(&self, inputs: &[Vec<f64>], sites: usize, mode: SpikeFn) -> Result<GateOutput> {
        Ok(self.gate.forward(inputs, sites, mode)?.0)
    }

    /// Per-step mixture `sum_i alpha_i S_i(t)`.
    pub fn forward(
        &self,
        inputs: &[Vec<f64>],
        sites: usize,
        mode: SpikeFn,
    ) -> Result<(Vec<Vec<f64>>, MoseRecord)> {
        let (gate_out, gate_rec) = self.gate.forward(inputs, sites, mode)?;
        let width = self.n_out() * sites;
        let mut mixture = vec![vec![0.0; width]; inputs.len()];
        let mut records = Vec::with_capacity(self.experts.len());
        for (expert, &a) in self.experts.iter().zip(&gate_out.alpha) {
            let (spikes, rec) = expert.forward(inputs, sites, mode)?;
            for (m, s) in mixture.iter_mut().zip(&spikes) {
                for (mv, sv) in m.iter_mut().zip(s) {
                    *mv += a * sv;
                }
            }
            records.push(rec);
        }
        Ok((
            mixture,
            MoseRecord {
                sites,
                experts: records,
                gate: gate_rec,
            },
        ))
    }

    /// Time-averaged expert rates for a single expert, the readout that the
    /// mixture combines.
    pub fn expert_rates(&self, expert: usize, inputs: &[Vec<f64>], sites: usize, mode: SpikeFn) -> Result<Vec<f64>> {
        let (spikes, _) = self.experts[expert].forward(inputs, sites, mode)?;
        Ok(time_average(&spikes))
    }

    pub fn backward(
        &self,
        record: &MoseRecord,
        grad_out: &[Vec<f64>],
        opts: BackwardOptions,
        grads: &mut MoseLayer,
    ) -> Result<Vec<Vec<f64>>> {
        if record.experts.len() != self.experts.len() {
            bail!(State, "record holds {} experts, layer has {}", record.experts.len(), self.experts.len());
        }
        let alpha = &record.gate.output.alpha;
        let mut d_alpha = vec![0.0; self.experts.len()];
        let mut d_inputs: Option<Vec<Vec<f64>>> = None;
        for (i, expert) in self.experts.iter().enumerate() {
            let rec = &record.experts[i];
            if rec.steps() != grad_out.len() {
                bail!(State, "upstream gradient has {} steps, record has {}", grad_out.len(), rec.steps());
            }
            d_alpha[i] = rec
                .spikes
                .iter()
                .zip(grad_out)
                .map(|(s, g)| math::dot(s, g))
                .sum();
            let d_spikes: Vec<Vec<f64>> = grad_out
                .iter()
                .map(|g| g.iter().map(|v| v * alpha[i]).collect())
                .collect();
            let dx = expert.backward(rec, &d_spikes, opts, &mut grads.experts[i])?;
            accumulate(&mut d_inputs, dx);
        }
        let dx = self.gate.backward(&record.gate, &d_alpha, opts, &mut grads.gate)?;
        accumulate(&mut d_inputs, dx);
        Ok(d_inputs.unwrap_or_default())
    }
}

fn accumulate(acc: &mut Option<Vec<Vec<f64>>>, dx: Vec<Vec<f64>>) {
    match acc {
        None => *acc = Some(dx),
        Some(a) => {
            for (x, y) in a.iter_mut().zip(&dx) {
                params::add_into(x, y);
            }
        }
    }
}

pub(crate) fn time_average(seq: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; seq.first().map_or(0, Vec::len)];
    for s in seq {
        params::add_into(&mut out, s);
    }
    let n = seq.len().max(1) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

impl Parameters for MoseLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, e) in self.experts.iter().enumerate() {
            e.visit(&params::join(prefix, &alloc::format!("expert{i}")), f);
        }
        self.gate.visit(&params::join(prefix, "gate"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for e in &mut self.experts {
            e.visit_mut(f);
        }
        self.gate.visit_mut(f);
    }
}
