//! Parameterized layers. Each layer holds ids into a [`ParamStore`] and is
//! applied with the store passed explicitly, so one layer description can be
//! evaluated against an online store or its target copy.

use rand::Rng;

use crate::elem::Elem;
use crate::graph::{Graph, Var};
use crate::init::orthogonal;
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;
use crate::NnError;

pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Elem, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = orthogonal::<T, R>(out_features, in_features, gain, rng);
        let weight = store.add(format!("{name}.weight"), Tensor::new(vec![out_features, in_features], w), ParamKind::Weight);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![out_features]), ParamKind::Weight);
        Self { weight, bias, in_features, out_features }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Elem, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let w = orthogonal::<T, R>(out_channels, fan_in, RELU_GAIN, rng);
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::new(vec![out_channels, in_channels, kernel, kernel], w),
            ParamKind::Weight,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![out_channels]), ParamKind::Weight);
        Self { weight, bias, in_channels, out_channels, kernel, stride, padding }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.padding)
    }

    /// Spatial output size for an `input`-sized square side.
    pub fn output_side(&self, input: usize) -> Option<usize> {
        (input + 2 * self.padding).checked_sub(self.kernel).map(|v| v / self.stride + 1)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new<T: Elem>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.weight"), Tensor::full(vec![channels], T::one()), ParamKind::Weight);
        let beta = store.add(format!("{name}.bias"), Tensor::zeros(vec![channels]), ParamKind::Weight);
        let running_mean = store.add(format!("{name}.running_mean"), Tensor::zeros(vec![channels]), ParamKind::Buffer);
        let running_var =
            store.add(format!("{name}.running_var"), Tensor::full(vec![channels], T::one()), ParamKind::Buffer);
        Self { gamma, beta, running_mean, running_var, momentum: 0.1 }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let gm = g.param(store, self.gamma);
        let bt = g.param(store, self.beta);
        g.batch_norm(x, gm, bt, store, self.running_mean, self.running_var, self.momentum)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Elem>(store: &mut ParamStore<T>, name: &str, features: usize) -> Self {
        let gamma = store.add(format!("{name}.weight"), Tensor::full(vec![features], T::one()), ParamKind::Weight);
        let beta = store.add(format!("{name}.bias"), Tensor::zeros(vec![features]), ParamKind::Weight);
        Self { gamma, beta }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let gm = g.param(store, self.gamma);
        let bt = g.param(store, self.beta);
        g.layer_norm(x, gm, bt)
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<T: Elem, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: &[usize],
        output: usize,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(store, &format!("{name}.{i}"), prev, h, 1.0, rng));
            prev = h;
        }
        layers.push(Linear::new(store, &format!("{name}.{}", hidden.len()), prev, output, 1.0, rng));
        Self { layers }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mut x: Var) -> Result<Var, NnError> {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, store, x)?;
            if i < last {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_features)
    }
}
