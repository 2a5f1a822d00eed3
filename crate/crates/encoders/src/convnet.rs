use rand::Rng;
use vmc_nn::{BatchNorm, Conv2d, Elem, Graph, LayerNorm, Linear, ParamStore, Var};

use crate::arch::{ConvNetSpec, Readout};
use crate::EncoderError;

/// A [`ConvNetSpec`] instantiated into a parameter store: conv (+ batch
/// norm) + ReLU per layer, then the readout.
#[derive(Debug, Clone)]
pub struct ConvNet {
    spec: ConvNetSpec,
    input: (usize, usize, usize),
    layers: Vec<(Conv2d, Option<BatchNorm>)>,
    projection: Option<(LayerNorm, Linear)>,
    output_dim: usize,
}

impl ConvNet {
    pub fn new<T: Elem, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: &ConvNetSpec,
        input: (usize, usize, usize),
        rng: &mut R,
    ) -> Result<Self, EncoderError> {
        let output_dim = spec.output_dim(input)?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut c = input.0;
        for (i, l) in spec.layers.iter().enumerate() {
            let conv = Conv2d::new(store, &format!("{name}.conv{i}"), c, l.out_channels, l.kernel, l.stride, l.padding, rng);
            let bn = l.batch_norm.then(|| BatchNorm::new(store, &format!("{name}.bn{i}"), l.out_channels));
            layers.push((conv, bn));
            c = l.out_channels;
        }
        let projection = match spec.readout {
            Readout::LayerNormProjection { dim } => {
                let flat = spec.flat_dim(input)?;
                let ln = LayerNorm::new(store, &format!("{name}.ln"), flat);
                let lin = Linear::new(store, &format!("{name}.proj"), flat, dim, 1.0, rng);
                Some((ln, lin))
            }
            _ => None,
        };
        Ok(Self { spec: spec.clone(), input, layers, projection, output_dim })
    }

    pub fn spec(&self) -> &ConvNetSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// `x` is `[M, C, H, W]`; returns `[M, output_dim]`.
    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var, EncoderError> {
        let s = g.shape(x);
        if s.len() != 4 || (s[1], s[2], s[3]) != self.input {
            return Err(EncoderError::Shape(format!("encoder expects [N, {:?}], got {s:?}", self.input)));
        }
        let mut h = x;
        for (conv, bn) in &self.layers {
            h = conv.forward(g, store, h)?;
            if let Some(bn) = bn {
                h = bn.forward(g, store, h)?;
            }
            h = g.relu(h);
        }
        if let Readout::GridPool { grid } = self.spec.readout {
            let side = g.shape(h)[2];
            h = g.avg_pool(h, side / grid)?;
        }
        h = g.flatten(h)?;
        if let Some((ln, lin)) = &self.projection {
            h = ln.forward(g, store, h)?;
            h = lin.forward(g, store, h)?;
        }
        Ok(h)
    }
}
