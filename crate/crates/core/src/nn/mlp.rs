use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::join;
use super::{Linear, NnError, ParamView, ParamViewMut, Parameterized, Tensor2};
use crate::cost::CostProbe;

/// Layer widths including the input width: `[4, 3, 1]` is 4→3→1.
/// ReLU sits between layers; a probability head ends in a sigmoid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub probability_head: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, probability_head: bool) -> Result<Self, NnError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NnError::InvalidConfig(format!("mlp widths {widths:?} need at least two positive entries")));
        }
        Ok(Self { widths, probability_head })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

/// Per-layer inputs and pre-activations of one forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Tensor2>,
    pre: Vec<Tensor2>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, std: f64, rng: &mut R) -> Self {
        let layers = spec.widths.windows(2).map(|w| Linear::new(w[0], w[1], std, rng)).collect();
        Self { spec, layers }
    }

    /// Builds an MLP from explicit layers; widths are taken from them.
    pub fn from_layers(layers: Vec<Linear>, probability_head: bool) -> Result<Self, NnError> {
        let mut widths = vec![layers.first().map_or(0, Linear::input_dim)];
        for (i, l) in layers.iter().enumerate() {
            if l.input_dim() != widths[i] {
                return Err(NnError::ShapeMismatch {
                    expected: format!("layer {i} input {}", widths[i]),
                    found: format!("{}", l.input_dim()),
                });
            }
            widths.push(l.output_dim());
        }
        Ok(Self { spec: MlpSpec::new(widths, probability_head)?, layers })
    }

    pub fn macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs(1)).sum()
    }

    fn check(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.spec.input_dim() {
            return Err(NnError::ShapeMismatch {
                expected: format!("input of length {}", self.spec.input_dim()),
                found: format!("length {}", input.len()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64], probe: Option<&CostProbe>) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_train(input, probe)?.0)
    }

    /// Output after the final activation (sigmoid for probability heads,
    /// identity otherwise) and the cache for [`backward`](Self::backward).
    pub fn forward_train(&self, input: &[f64], probe: Option<&CostProbe>) -> Result<(Vec<f64>, MlpCache), NnError> {
        self.check(input)?;
        if let Some(p) = probe {
            p.record_mlp(self.macs());
        }
        let mut x = Tensor2::row_vector(input);
        let mut cache = MlpCache { inputs: Vec::new(), pre: Vec::new() };
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&x);
            cache.inputs.push(x);
            let mut a = z.clone();
            if i < last {
                a.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            } else if self.spec.probability_head {
                a.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            cache.pre.push(z);
            x = a;
        }
        if !x.is_finite() {
            return Err(NnError::NonFinite("mlp forward"));
        }
        Ok((x.into_vec(), cache))
    }

    /// `d_pre_out` is the gradient with respect to the final layer's
    /// pre-activation (the logit, for probability heads). Returns `d_input`.
    pub fn backward(&self, cache: &MlpCache, d_pre_out: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let mut dz = Tensor2::row_vector(d_pre_out);
        for i in (0..self.layers.len()).rev() {
            let dx = self.layers[i].backward(&cache.inputs[i], &dz, Some(&mut grad.layers[i]));
            if i == 0 {
                return dx.into_vec();
            }
            dz = dx;
            for (g, z) in dz.data_mut().iter_mut().zip(cache.pre[i - 1].data()) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        unreachable!("mlp has at least one layer")
    }
}

impl Parameterized for Mlp {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_params(&join(prefix, &i.to_string()), out);
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect_params_mut(&join(prefix, &i.to_string()), out);
        }
    }
}
