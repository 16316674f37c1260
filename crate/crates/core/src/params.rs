//! Uniform access to learnable parameters: naming, flattening, loading.
//!
//! Gradients are stored in a value of the same type as the model, so the flat
//! order of a gradient always matches the flat order of the parameters.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub trait Parameters {
    /// Visits every tensor in a fixed order with its dotted name and shape.
    #[allow(clippy::type_complexity)]
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));

    /// Visits the same tensors, in the same order, mutably.
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        alloc::format!("{prefix}.{name}")
    }
}

pub fn specs<P: Parameters + ?Sized>(p: &P) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    p.visit("", &mut |name, shape, _| {
        out.push(ParamSpec {
            name: String::from(name),
            shape: shape.to_vec(),
        })
    });
    out
}

pub fn count<P: Parameters + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, _, data| n += data.len());
    n
}

pub fn flatten<P: Parameters + ?Sized>(p: &P) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit("", &mut |_, _, data| out.extend_from_slice(data));
    out
}

pub fn load_flat<P: Parameters + ?Sized>(p: &mut P, flat: &[f64]) -> Result<()> {
    let expected = count(p);
    if flat.len() != expected {
        bail!(InvalidArgument, "flat vector has {} values, model has {expected}", flat.len());
    }
    let mut offset = 0;
    p.visit_mut(&mut |data| {
        data.copy_from_slice(&flat[offset..offset + data.len()]);
        offset += data.len();
    });
    Ok(())
}

pub fn fill<P: Parameters + ?Sized>(p: &mut P, value: f64) {
    p.visit_mut(&mut |data| data.iter_mut().for_each(|v| *v = value));
}

/// Clone with every parameter set to zero: a gradient accumulator.
pub fn zeros_like<P: Parameters + Clone>(p: &P) -> P {
    let mut z = p.clone();
    fill(&mut z, 0.0);
    z
}

/// A parameter tensor in storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn to_named<P: Parameters + ?Sized>(p: &P) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    p.visit("", &mut |name, shape, data| {
        out.push(NamedTensor {
            name: String::from(name),
            shape: shape.to_vec(),
            data: data.iter().map(|&v| v as f32).collect(),
        })
    });
    out
}

/// Loads tensors produced by [`to_named`]; names, order, and shapes must
/// match the target exactly.
pub fn load_named<P: Parameters + ?Sized>(p: &mut P, tensors: &[NamedTensor]) -> Result<()> {
    let expected = specs(p);
    if expected.len() != tensors.len() {
        bail!(Data, "expected {} tensors, found {}", expected.len(), tensors.len());
    }
    for (spec, t) in expected.iter().zip(tensors) {
        if spec.name != t.name || spec.shape != t.shape {
            bail!(
                Data,
                "tensor '{}' {:?} does not match model tensor '{}' {:?}",
                t.name,
                t.shape,
                spec.name,
                spec.shape
            );
        }
        if t.data.len() != spec.len() {
            bail!(Data, "tensor '{}' holds {} values, shape needs {}", t.name, t.data.len(), spec.len());
        }
    }
    let mut iter = tensors.iter();
    p.visit_mut(&mut |data| {
        if let Some(t) = iter.next() {
            for (d, &v) in data.iter_mut().zip(&t.data) {
                *d = f64::from(v);
            }
        }
    });
    Ok(())
}

/// Rounds every parameter to the nearest `f32`.
pub fn round_to_f32<P: Parameters + ?Sized>(p: &mut P) {
    p.visit_mut(&mut |data| data.iter_mut().for_each(|v| *v = f64::from(*v as f32)));
}

/// `n` independent draws from a zero-mean normal with the given deviation.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

/// `dst += src` element-wise.
pub fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
