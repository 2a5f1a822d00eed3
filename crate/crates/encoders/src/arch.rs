use serde::{Deserialize, Serialize};

use crate::EncoderError;

/// The three scratch encoder layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    Bc,
    Onpolicy,
    Offpolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default)]
    pub batch_norm: bool,
}

impl ConvLayerSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize, batch_norm: bool) -> Self {
        Self { out_channels, kernel, stride, padding, batch_norm }
    }

    pub fn output_side(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }
}

/// What happens to the final feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Readout {
    Flatten,
    /// Flatten, layer-normalize, then a linear map to `dim` features.
    LayerNormProjection { dim: usize },
    /// Average-pool down to a `grid x grid` map, then flatten.
    GridPool { grid: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNetSpec {
    pub layers: Vec<ConvLayerSpec>,
    pub readout: Readout,
}

/// Default projection width of the on-policy encoder.
pub const ONPOLICY_PROJECTION_DIM: usize = 128;

impl ConvNetSpec {
    /// Full-size layer lists.
    pub fn scratch(variant: EncoderVariant) -> Self {
        match variant {
            EncoderVariant::Bc => Self {
                layers: vec![ConvLayerSpec::new(32, 3, 2, 1, true); 5],
                readout: Readout::Flatten,
            },
            EncoderVariant::Onpolicy => Self {
                layers: [7, 5, 3, 3, 3, 3].iter().map(|&k| ConvLayerSpec::new(32, k, 2, 0, false)).collect(),
                readout: Readout::LayerNormProjection { dim: ONPOLICY_PROJECTION_DIM },
            },
            EncoderVariant::Offpolicy => Self {
                layers: [2, 1, 1, 1].iter().map(|&s| ConvLayerSpec::new(32, 3, s, 0, false)).collect(),
                readout: Readout::Flatten,
            },
        }
    }

    /// Narrow, shallow versions of each variant sized for 8x8 inputs. Each
    /// keeps its variant's distinguishing pieces (batch norm, valid strided
    /// convs with a layer-normalized projection, a stride-1 tail).
    pub fn miniature(variant: EncoderVariant) -> Self {
        match variant {
            EncoderVariant::Bc => Self {
                layers: vec![ConvLayerSpec::new(4, 3, 2, 1, true); 2],
                readout: Readout::Flatten,
            },
            EncoderVariant::Onpolicy => Self {
                layers: vec![ConvLayerSpec::new(4, 3, 2, 0, false), ConvLayerSpec::new(4, 3, 1, 0, false)],
                readout: Readout::LayerNormProjection { dim: 6 },
            },
            EncoderVariant::Offpolicy => Self {
                layers: vec![ConvLayerSpec::new(4, 3, 2, 0, false), ConvLayerSpec::new(4, 2, 1, 0, false)],
                readout: Readout::Flatten,
            },
        }
    }

    /// Shape of the last convolutional feature map for a `(c, h, w)` input.
    pub fn feature_map(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize), EncoderError> {
        let (mut c, mut h, mut w) = (c, h, w);
        for (i, l) in self.layers.iter().enumerate() {
            match (l.output_side(h), l.output_side(w)) {
                (Some(nh), Some(nw)) => (h, w) = (nh, nw),
                _ => return Err(EncoderError::Shape(format!("layer {i} cannot consume a {h}x{w} map"))),
            }
            c = l.out_channels;
        }
        Ok((c, h, w))
    }

    /// Flattened size before any readout projection.
    pub fn flat_dim(&self, input: (usize, usize, usize)) -> Result<usize, EncoderError> {
        let (c, h, w) = self.feature_map(input)?;
        Ok(match self.readout {
            Readout::GridPool { grid } => {
                if grid == 0 || h % grid != 0 || w % grid != 0 {
                    return Err(EncoderError::Shape(format!("{h}x{w} map does not pool to a {grid}x{grid} grid")));
                }
                c * grid * grid
            }
            _ => c * h * w,
        })
    }

    pub fn output_dim(&self, input: (usize, usize, usize)) -> Result<usize, EncoderError> {
        let flat = self.flat_dim(input)?;
        Ok(match self.readout {
            Readout::LayerNormProjection { dim } => dim,
            _ => flat,
        })
    }
}
