use rand::Rng;
use serde::{Deserialize, Serialize};
use vmc_nn::{BatchNorm, Elem, Graph, LayerNorm, Linear, Mlp, ParamStore, Var};

use crate::EncoderError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSpec {
    pub hidden: Vec<usize>,
    /// 1-D batch norm over the input features (used with pre-trained
    /// backbones).
    pub leading_batch_norm: bool,
    /// Linear + layer norm + tanh before the MLP.
    pub trunk: bool,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self { hidden: vec![256, 256, 256], leading_batch_norm: false, trunk: false }
    }
}

/// Feature vector to output (actions, or a value when `output = 1`).
#[derive(Debug, Clone)]
pub struct PolicyHead {
    bn: Option<BatchNorm>,
    trunk: Option<(Linear, LayerNorm)>,
    mlp: Mlp,
    input_dim: usize,
}

impl PolicyHead {
    pub fn new<T: Elem, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        spec: &HeadSpec,
        rng: &mut R,
    ) -> Self {
        let bn = spec.leading_batch_norm.then(|| BatchNorm::new(store, &format!("{name}.bn"), input_dim));
        let trunk = spec.trunk.then(|| {
            let lin = Linear::new(store, &format!("{name}.trunk"), input_dim, input_dim, 1.0, rng);
            let ln = LayerNorm::new(store, &format!("{name}.trunk_ln"), input_dim);
            (lin, ln)
        });
        let mlp = Mlp::new(store, &format!("{name}.mlp"), input_dim, &spec.hidden, output_dim, rng);
        Self { bn, trunk, mlp, input_dim }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// Output of the trunk (or the normalized input when there is none).
    pub fn trunk_forward<T: Elem>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var, EncoderError> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(EncoderError::Shape(format!("head expects [N, {}], got {s:?}", self.input_dim)));
        }
        let mut h = x;
        if let Some(bn) = &self.bn {
            h = bn.forward(g, store, h)?;
        }
        if let Some((lin, ln)) = &self.trunk {
            h = lin.forward(g, store, h)?;
            h = ln.forward(g, store, h)?;
            h = g.tanh(h);
        }
        Ok(h)
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var, EncoderError> {
        let h = self.trunk_forward(g, store, x)?;
        Ok(self.mlp.forward(g, store, h)?)
    }
}
