use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{BackwardOptions, LifParams, SpikeFn, SurrogateConfig};
use crate::error::{bail, Result};
use crate::params::{self, Parameters};

/// Post-synaptic current kernel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Synapse {
    /// `I_t = W S_t`.
    #[default]
    Impulse,
    /// `I_t = decay * I_{t-1} + W S_t`.
    Exponential { decay: f64 },
}

/// `out[o, p] = sum_c weights[o, c] * spikes[c, p]` for every site `p`.
///
/// Inputs and outputs are channel-major: entry `(c, p)` sits at `c * sites + p`.
pub fn synaptic_current(
    spikes: &[f64],
    weights: &[f64],
    n_in: usize,
    n_out: usize,
    sites: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; n_out * sites];
    for o in 0..n_out {
        let row = &mut out[o * sites..(o + 1) * sites];
        for c in 0..n_in {
            let w = weights[o * n_in + c];
            if w == 0.0 {
                continue;
            }
            for (r, s) in row.iter_mut().zip(&spikes[c * sites..(c + 1) * sites]) {
                *r += w * s;
            }
        }
    }
    out
}

/// A population of LIF neurons fed through a dense `n_out x n_in` weight
/// matrix. Applied independently at every spatial site (a 1x1 spiking
/// convolution).
#[derive(Debug, Clone, PartialEq)]
pub struct SpikingLayer {
    n_in: usize,
    n_out: usize,
    pub weights: Vec<f64>,
    pub params: LifParams,
    pub surrogate: SurrogateConfig,
    pub synapse: Synapse,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerRecord {
    pub sites: usize,
    pub mode: SpikeFn,
    pub inputs: Vec<Vec<f64>>,
    /// Membrane potential after integration, before reset.
    pub potentials: Vec<Vec<f64>>,
    pub spikes: Vec<Vec<f64>>,
}

impl LayerRecord {
    pub fn steps(&self) -> usize {
        self.spikes.len()
    }
}

impl SpikingLayer {
    pub fn new(
        n_in: usize,
        n_out: usize,
        weights: Vec<f64>,
        params: LifParams,
        surrogate: SurrogateConfig,
        synapse: Synapse,
    ) -> Result<Self> {
        if weights.len() != n_in * n_out {
            bail!(
                InvalidArgument,
                "weight matrix has {} entries, expected {n_out}x{n_in}",
                weights.len()
            );
        }
        params.validate()?;
        if !(surrogate.beta > 0.0) {
            bail!(InvalidArgument, "surrogate beta must be positive");
        }
        if let Synapse::Exponential { decay } = synapse {
            if !(0.0..1.0).contains(&decay) {
                bail!(InvalidArgument, "synaptic decay {decay} outside [0, 1)");
            }
        }
        Ok(Self {
            n_in,
            n_out,
            weights,
            params,
            surrogate,
            synapse,
        })
    }

    /// Gaussian weights with standard deviation `gain / sqrt(n_in)`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        n_in: usize,
        n_out: usize,
        gain: f64,
        params: LifParams,
        surrogate: SurrogateConfig,
        synapse: Synapse,
    ) -> Result<Self> {
        let std = gain / libm::sqrt(n_in.max(1) as f64);
        Self::new(n_in, n_out, params::gaussian(rng, n_in * n_out, std), params, surrogate, synapse)
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    /// Root-mean-square of the weighted input `W x` over every step, site
    /// and neuron of `inputs`.
    pub fn current_rms(&self, inputs: &[Vec<f64>], sites: usize) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for x in inputs {
            let i = synaptic_current(x, &self.weights, self.n_in, self.n_out, sites);
            sum += i.iter().map(|v| v * v).sum::<f64>();
            count += i.len();
        }
        if count == 0 {
            0.0
        } else {
            libm::sqrt(sum / count as f64)
        }
    }

    /// Rescales the weights so [`Self::current_rms`] over `inputs` equals
    /// `target`. Silent inputs leave the weights unchanged.
    pub fn calibrate(&mut self, inputs: &[Vec<f64>], sites: usize, target: f64) {
        let rms = self.current_rms(inputs, sites);
        if rms > 0.0 {
            let scale = target / rms;
            self.weights.iter_mut().for_each(|w| *w *= scale);
        }
    }

    /// Runs the layer over `inputs.len()` time steps starting from rest.
    /// Each `inputs[t]` is `n_in x sites`; each output step is `n_out x sites`.
    pub fn forward(
        &self,
        inputs: &[Vec<f64>],
        sites: usize,
        mode: SpikeFn,
    ) -> Result<(Vec<Vec<f64>>, LayerRecord)> {
        for (t, x) in inputs.iter().enumerate() {
            if x.len() != self.n_in * sites {
                bail!(
                    InvalidArgument,
                    "step {t}: input has {} values, expected {}x{sites}",
                    x.len(),
                    self.n_in
                );
            }
            if x.iter().any(|v| !v.is_finite()) {
                bail!(Numeric, "step {t}: non-finite layer input");
            }
        }
        let n = self.n_out * sites;
        let p = &self.params;
        let mut u = vec![p.u_reset; n];
        let mut syn = vec![0.0; n];
        let mut potentials = Vec::with_capacity(inputs.len());
        let mut spikes = Vec::with_capacity(inputs.len());
        for x in inputs {
            let mut current = synaptic_current(x, &self.weights, self.n_in, self.n_out, sites);
            if let Synapse::Exponential { decay } = self.synapse {
                for (s, c) in syn.iter_mut().zip(current.iter_mut()) {
                    *s = decay * *s + *c;
                    *c = *s;
                }
            }
            let mut v_t = current;
            let mut s_t = vec![0.0; n];
            for j in 0..n {
                let v = p.integrate(u[j], v_t[j]);
                let s = mode.fire(v, p, &self.surrogate);
                u[j] = mode.reset(v, s, p);
                v_t[j] = v;
                s_t[j] = s;
            }
            potentials.push(v_t);
            spikes.push(s_t);
        }
        let record = LayerRecord {
            sites,
            mode,
            inputs: inputs.to_vec(),
            potentials,
            spikes: spikes.clone(),
        };
        Ok((spikes, record))
    }

    /// Backpropagation through time. Accumulates weight gradients into
    /// `grads` and returns the gradient with respect to every input step.
    pub fn backward(
        &self,
        record: &LayerRecord,
        grad_spikes: &[Vec<f64>],
        opts: BackwardOptions,
        grads: &mut SpikingLayer,
    ) -> Result<Vec<Vec<f64>>> {
        let steps = record.steps();
        if steps == 0 {
            bail!(State, "backward called without a recorded forward pass");
        }
        let sites = record.sites;
        let n = self.n_out * sites;
        if grad_spikes.len() != steps || grad_spikes.iter().any(|g| g.len() != n) {
            bail!(State, "upstream gradient does not match the recorded forward pass");
        }
        if record.potentials.iter().any(|v| v.len() != n) || grads.weights.len() != self.weights.len()
        {
            bail!(State, "record or gradient buffer does not belong to this layer");
        }
        let p = &self.params;
        let (k, r) = (p.leak(), p.resistance);
        let mut du = vec![0.0; n];
        let mut d_syn = vec![0.0; n];
        let mut d_current = vec![vec![0.0; n]; steps];
        for t in (0..steps).rev() {
            let (v_t, s_t, g_t) = (&record.potentials[t], &record.spikes[t], &grad_spikes[t]);
            let dc = &mut d_current[t];
            for j in 0..n {
                let (v, s) = (v_t[j], s_t[j]);
                let mut ds = g_t[j];
                if !opts.detach_reset {
                    ds += du[j] * (p.u_reset - v);
                }
                let dv = ds * self.surrogate.grad(v - p.u_th) + du[j] * (1.0 - s);
                let mut di = dv * k * r;
                if let Synapse::Exponential { decay } = self.synapse {
                    di += decay * d_syn[j];
                    d_syn[j] = di;
                }
                dc[j] = di;
                du[j] = dv * (1.0 - k);
            }
        }

        let mut d_inputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = &record.inputs[t];
            let dc = &d_current[t];
            let mut dx = vec![0.0; self.n_in * sites];
            for o in 0..self.n_out {
                let dco = &dc[o * sites..(o + 1) * sites];
                for c in 0..self.n_in {
                    let xc = &x[c * sites..(c + 1) * sites];
                    let mut acc = 0.0;
                    for (a, b) in dco.iter().zip(xc) {
                        acc += a * b;
                    }
                    grads.weights[o * self.n_in + c] += acc;
                    let w = self.weights[o * self.n_in + c];
                    for (d, g) in dx[c * sites..(c + 1) * sites].iter_mut().zip(dco) {
                        *d += w * g;
                    }
                }
            }
            d_inputs.push(dx);
        }
        Ok(d_inputs)
    }
}

impl Parameters for SpikingLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&params::join(prefix, "weights"), &[self.n_out, self.n_in], &self.weights);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.weights);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::LifState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(n_in: usize, n_out: usize, seed: u64, synapse: Synapse) -> SpikingLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpikingLayer::random(
            &mut rng,
            n_in,
            n_out,
            2.0,
            LifParams::default().with_tau(3.0),
            SurrogateConfig::default(),
            synapse,
        )
        .unwrap()
    }

    #[test]
    fn zero_and_one_hot_currents() {
        let l = layer(4, 3, 1, Synapse::Impulse);
        assert!(synaptic_current(&[0.0; 4], &l.weights, 4, 3, 1).iter().all(|&v| v == 0.0));
        let i = synaptic_current(&[0.0, 0.0, 1.0, 0.0], &l.weights, 4, 3, 1);
        for o in 0..3 {
            assert_eq!(i[o], l.weights[o * 4 + 2]);
        }
    }

    #[test]
    fn current_matches_double_loop() {
        let l = layer(7, 5, 2, Synapse::Impulse);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sites = 3;
        let s: Vec<f64> = (0..7 * sites).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
        let i = synaptic_current(&s, &l.weights, 7, 5, sites);
        for o in 0..5 {
            for p in 0..sites {
                let mut acc = 0.0;
                for c in 0..7 {
                    acc += l.weights[o * 7 + c] * s[c * sites + p];
                }
                assert!((i[o * sites + p] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_agrees_with_lif_step() {
        let l = layer(3, 2, 4, Synapse::Impulse);
        let inputs: Vec<Vec<f64>> = (0..6).map(|t| vec![t as f64 * 0.3, 1.0, 0.5]).collect();
        let (spikes, rec) = l.forward(&inputs, 1, SpikeFn::Heaviside).unwrap();
        let mut state = LifState::resting(2, &l.params);
        for (t, x) in inputs.iter().enumerate() {
            let cur = synaptic_current(x, &l.weights, 3, 2, 1);
            assert_eq!(lif_step_ref(&mut state, &cur, &l.params), spikes[t]);
        }
        assert!(rec.spikes.iter().flatten().all(|&s| s == 0.0 || s == 1.0));
    }

    fn lif_step_ref(state: &mut LifState, cur: &[f64], p: &LifParams) -> Vec<f64> {
        crate::snn::lif_step(state, cur, p).unwrap()
    }

    #[test]
    fn backward_requires_forward_record() {
        let l = layer(2, 2, 5, Synapse::Impulse);
        let mut g = params::zeros_like(&l);
        let err = l.backward(&LayerRecord::default(), &[], BackwardOptions::default(), &mut g);
        assert!(matches!(err, Err(crate::Error::State(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let l = layer(3, 4, 6, Synapse::Impulse);
        let inputs: Vec<Vec<f64>> = (0..5).map(|_| vec![1.0, 0.5, 2.0, 0.0, 1.0, 1.0]).collect();
        let (_, rec) = l.forward(&inputs, 2, SpikeFn::Heaviside).unwrap();
        let mut g = params::zeros_like(&l);
        let dx = l
            .backward(&rec, &vec![vec![0.0; 8]; 5], BackwardOptions::default(), &mut g)
            .unwrap();
        assert!(g.weights.iter().all(|&v| v == 0.0));
        assert!(dx.iter().flatten().all(|&v| v == 0.0));
    }

    /// Smooth forward, full (non-detached) backward: gradients must match
    /// central differences of the smooth forward.
    fn check_against_fd(synapse: Synapse) {
        let l = layer(3, 2, 7, synapse);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sites = 2;
        let inputs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3 * sites).map(|_| rng.random_range(0.0..1.5)).collect())
            .collect();
        let probe: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..2 * sites).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let loss = |layer: &SpikingLayer, x: &[Vec<f64>]| {
            let (s, _) = layer.forward(x, sites, SpikeFn::Smooth).unwrap();
            s.iter().zip(&probe).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>()).sum::<f64>()
        };
        let (_, rec) = l.forward(&inputs, sites, SpikeFn::Smooth).unwrap();
        let mut g = params::zeros_like(&l);
        let dx = l
            .backward(&rec, &probe, BackwardOptions { detach_reset: false }, &mut g)
            .unwrap();
        let h = 1e-6;
        for i in 0..l.weights.len() {
            let (mut a, mut b) = (l.clone(), l.clone());
            a.weights[i] += h;
            b.weights[i] -= h;
            let fd = (loss(&a, &inputs) - loss(&b, &inputs)) / (2.0 * h);
            assert!((fd - g.weights[i]).abs() < 1e-7 * (1.0 + fd.abs()), "w{i}: {fd} vs {}", g.weights[i]);
        }
        let (mut xa, mut xb) = (inputs.clone(), inputs.clone());
        xa[2][1] += h;
        xb[2][1] -= h;
        let fd = (loss(&l, &xa) - loss(&l, &xb)) / (2.0 * h);
        assert!((fd - dx[2][1]).abs() < 1e-7 * (1.0 + fd.abs()));
    }

    #[test]
    fn bptt_matches_finite_differences() {
        check_against_fd(Synapse::Impulse);
    }

    #[test]
    fn bptt_matches_finite_differences_exponential_synapse() {
        check_against_fd(Synapse::Exponential { decay: 0.6 });
    }
}
