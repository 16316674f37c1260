//! Leaky integrate-and-fire dynamics, spiking layers, the spiking
//! mixture-of-experts and the dynamic (motion) stream built from them.

mod dynamic;
mod layer;
mod mose;

pub use dynamic::{avg_pool, DynamicConfig, DynamicInput, DynamicRecord, DynamicStream};
pub use layer::{synaptic_current, LayerRecord, SpikingLayer, Synapse};
pub use mose::{Gate, GateOutput, GateRecord, MoseLayer, MoseRecord};

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::math;

/// Neuron constants of one layer. Time is measured in steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifParams {
    pub tau: f64,
    pub resistance: f64,
    pub u_th: f64,
    pub u_reset: f64,
    pub dt: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau: 8.0,
            resistance: 1.0,
            u_th: 1.0,
            u_reset: 0.0,
            dt: 1.0,
        }
    }
}

impl LifParams {
    pub fn with_tau(self, tau: f64) -> Self {
        Self { tau, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.tau, self.resistance, self.u_th, self.u_reset, self.dt]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            bail!(InvalidArgument, "LIF parameters must be finite: {self:?}");
        }
        if !(self.dt > 0.0 && self.tau > self.dt / 2.0) {
            bail!(InvalidArgument, "explicit update needs tau > dt/2 (tau={}, dt={})", self.tau, self.dt);
        }
        if !(self.u_th > self.u_reset) {
            bail!(InvalidArgument, "threshold {} must exceed reset {}", self.u_th, self.u_reset);
        }
        Ok(())
    }

    /// `dt / tau`.
    pub fn leak(&self) -> f64 {
        self.dt / self.tau
    }

    /// Explicit Euler update before the spike check.
    #[inline]
    pub fn integrate(&self, u: f64, current: f64) -> f64 {
        u + self.leak() * (-u + self.resistance * current)
    }
}

/// Fast-sigmoid surrogate for the spike nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateConfig {
    pub beta: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self { beta: 4.0 }
    }
}

impl SurrogateConfig {
    /// `beta / (2 (1 + beta |x|)^2)`.
    #[inline]
    pub fn grad(&self, x: f64) -> f64 {
        let d = 1.0 + self.beta * math::abs(x);
        self.beta / (2.0 * d * d)
    }

    /// Antiderivative of [`Self::grad`], a sigmoid in `(0, 1)`.
    #[inline]
    pub fn smooth(&self, x: f64) -> f64 {
        0.5 * (1.0 + self.beta * x / (1.0 + self.beta * math::abs(x)))
    }
}

/// Spike nonlinearity used in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpikeFn {
    /// Binary spikes; the production path.
    #[default]
    Heaviside,
    /// Spikes replaced by the surrogate's sigmoid so the forward is smooth
    /// and finite differences are meaningful (gradient checks only).
    Smooth,
}

impl SpikeFn {
    #[inline]
    pub(crate) fn fire(self, v: f64, params: &LifParams, surrogate: &SurrogateConfig) -> f64 {
        match self {
            SpikeFn::Heaviside => {
                if v >= params.u_th {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeFn::Smooth => surrogate.smooth(v - params.u_th),
        }
    }

    #[inline]
    pub(crate) fn reset(self, v: f64, spike: f64, params: &LifParams) -> f64 {
        match self {
            SpikeFn::Heaviside => {
                if spike > 0.0 {
                    params.u_reset
                } else {
                    v
                }
            }
            SpikeFn::Smooth => v * (1.0 - spike) + params.u_reset * spike,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardOptions {
    /// Treat the reset as a constant in the backward pass.
    pub detach_reset: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self { detach_reset: true }
    }
}

/// Membrane potentials of a population.
#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub u: Vec<f64>,
}

impl LifState {
    pub fn new(u: Vec<f64>) -> Self {
        Self { u }
    }

    pub fn resting(n: usize, params: &LifParams) -> Self {
        Self {
            u: alloc::vec![params.u_reset; n],
        }
    }
}

/// One explicit-Euler step with hard threshold and hard reset. Returns the
/// binary spike vector.
pub fn lif_step(state: &mut LifState, current: &[f64], params: &LifParams) -> Result<Vec<f64>> {
    if current.len() != state.u.len() {
        bail!(
            InvalidArgument,
            "current has {} entries for {} neurons",
            current.len(),
            state.u.len()
        );
    }
    if let Some(i) = current.iter().position(|c| !c.is_finite()) {
        bail!(Numeric, "non-finite input current at neuron {i}");
    }
    let surrogate = SurrogateConfig::default();
    Ok(state
        .u
        .iter_mut()
        .zip(current)
        .map(|(u, &i)| {
            let v = params.integrate(*u, i);
            let s = SpikeFn::Heaviside.fire(v, params, &surrogate);
            *u = SpikeFn::Heaviside.reset(v, s, params);
            s
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn params(tau: f64, u_th: f64) -> LifParams {
        LifParams {
            tau,
            u_th,
            ..LifParams::default()
        }
    }

    #[test]
    fn zero_input_decays_geometrically() {
        let p = params(4.0, 10.0);
        let mut s = LifState::new(vec![1.0]);
        lif_step(&mut s, &[0.0], &p).unwrap();
        lif_step(&mut s, &[0.0], &p).unwrap();
        assert_eq!(s.u[0], 0.5625);
    }

    #[test]
    fn subthreshold_drive_settles_at_ri() {
        let p = LifParams {
            resistance: 1.5,
            ..params(5.0, 10.0)
        };
        let mut s = LifState::new(vec![0.0]);
        for _ in 0..500 {
            let spikes = lif_step(&mut s, &[2.0], &p).unwrap();
            assert_eq!(spikes[0], 0.0);
        }
        assert!((s.u[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn spiking_neurons_reset() {
        let p = LifParams {
            u_reset: -0.25,
            ..params(2.0, 1.0)
        };
        let mut s = LifState::new(vec![0.0, 0.0]);
        let spikes = lif_step(&mut s, &[5.0, 0.1], &p).unwrap();
        assert_eq!(spikes, vec![1.0, 0.0]);
        assert_eq!(s.u[0], -0.25);
    }

    #[test]
    fn non_finite_current_is_numeric_error() {
        let mut s = LifState::new(vec![0.0]);
        assert!(matches!(
            lif_step(&mut s, &[f64::NAN], &LifParams::default()),
            Err(crate::Error::Numeric(_))
        ));
    }

    #[test]
    fn surrogate_formula_and_antiderivative() {
        let sg = SurrogateConfig { beta: 4.0 };
        let x = -3.7;
        assert!((sg.grad(x) - 4.0 / (2.0 * (1.0 + 4.0 * 3.7f64).powi(2))).abs() < 1e-12);
        let h = 1e-6;
        let fd = (sg.smooth(x + h) - sg.smooth(x - h)) / (2.0 * h);
        assert!((fd - sg.grad(x)).abs() < 1e-8);
        assert_eq!(sg.smooth(0.0), 0.5);
    }

    #[test]
    fn params_validation() {
        assert!(params(0.4, 1.0).validate().is_err());
        assert!(LifParams {
            u_reset: 2.0,
            ..LifParams::default()
        }
        .validate()
        .is_err());
        assert!(LifParams::default().validate().is_ok());
    }
}
