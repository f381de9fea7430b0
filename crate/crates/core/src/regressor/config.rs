use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a sequential network. Convolutions are 3×3, stride 1,
/// zero "same" padding; pooling is 2×2 max with stride 2 (odd trailing
/// rows and columns are dropped). A dense layer after a spatial layer
/// flattens its input in channel, row, column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv { out_channels: usize },
    Relu,
    MaxPool,
    Dense { width: usize },
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `U(−√(6/fan_in), √(6/fan_in))` weights, zero biases.
    HeUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Activation tensor shape `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Size limits that keep every tensor length and parameter count far from
/// `usize` overflow.
pub const MAX_RESOLUTION: usize = 4096;
pub const MAX_WIDTH: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_resolution: usize,
    pub layers: Vec<Layer>,
    pub init: Init,
    pub precision: Precision,
}

impl NetworkConfig {
    /// Three conv/relu/pool blocks of 16, 32 and 64 channels, a 128-wide
    /// hidden layer and the two-output sigmoid head.
    pub fn reference(input_resolution: usize) -> Self {
        use Layer::*;
        NetworkConfig {
            input_resolution,
            layers: vec![
                Conv { out_channels: 16 },
                Relu,
                MaxPool,
                Conv { out_channels: 32 },
                Relu,
                MaxPool,
                Conv { out_channels: 64 },
                Relu,
                MaxPool,
                Dense { width: 128 },
                Relu,
                Dense { width: 2 },
                Sigmoid,
            ],
            init: Init::HeUniform,
            precision: Precision::F32,
        }
    }

    /// VGG-16 with a single-channel first convolution, a 1024-wide hidden
    /// dense layer and the two-output sigmoid head.
    pub fn vgg16(input_resolution: usize) -> Self {
        use Layer::*;
        let mut layers = Vec::new();
        for (width, convs) in [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)] {
            for _ in 0..convs {
                layers.push(Conv { out_channels: width });
                layers.push(Relu);
            }
            layers.push(MaxPool);
        }
        layers.extend([Dense { width: 1024 }, Relu, Dense { width: 2 }, Sigmoid]);
        NetworkConfig {
            input_resolution,
            layers,
            init: Init::HeUniform,
            precision: Precision::F32,
        }
    }

    /// Shapes of the input and of every layer output, after checking that
    /// the layer sequence is well formed.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let bad = |reason: String| Err(Error::InvalidInput(format!("network config: {reason}")));
        if self.input_resolution == 0 || self.input_resolution > MAX_RESOLUTION {
            return bad(format!("input resolution must lie in 1..={MAX_RESOLUTION}"));
        }
        let mut shapes = vec![Shape {
            channels: 1,
            height: self.input_resolution,
            width: self.input_resolution,
        }];
        let mut flat = false;
        for (k, layer) in self.layers.iter().enumerate() {
            let s = *shapes.last().unwrap();
            let next = match *layer {
                Layer::Conv { out_channels } => {
                    if out_channels == 0 || out_channels > MAX_WIDTH {
                        return bad(format!("layer {k}: {out_channels} convolution channels"));
                    }
                    if flat {
                        return bad(format!("layer {k}: convolution after a dense layer"));
                    }
                    Shape { channels: out_channels, ..s }
                }
                Layer::MaxPool => {
                    if flat || s.height < 2 || s.width < 2 {
                        return bad(format!("layer {k}: pooling a {}×{} map", s.height, s.width));
                    }
                    Shape {
                        channels: s.channels,
                        height: s.height / 2,
                        width: s.width / 2,
                    }
                }
                Layer::Dense { width } => {
                    if width == 0 || width > MAX_WIDTH {
                        return bad(format!("layer {k}: dense width {width}"));
                    }
                    flat = true;
                    Shape {
                        channels: width,
                        height: 1,
                        width: 1,
                    }
                }
                Layer::Relu | Layer::Sigmoid => s,
            };
            shapes.push(next);
        }
        let n = self.layers.len();
        if n < 2 || self.layers[n - 1] != Layer::Sigmoid || self.layers[n - 2] != (Layer::Dense { width: 2 }) {
            return bad("the network must end with a two-wide dense layer followed by a sigmoid".into());
        }
        if self.layers[..n - 1].contains(&Layer::Sigmoid) {
            return bad("sigmoid is only allowed as the output layer".into());
        }
        Ok(shapes)
    }

    /// `(weights, biases)` of each layer; zero for parameterless layers.
    pub fn parameter_shapes(&self) -> Result<Vec<(usize, usize)>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(k, layer)| match *layer {
                Layer::Conv { out_channels } => (out_channels * shapes[k].channels * 9, out_channels),
                Layer::Dense { width } => (width * shapes[k].len(), width),
                _ => (0, 0),
            })
            .collect())
    }

    pub fn parameter_count(&self) -> Result<usize> {
        self.parameter_shapes()?
            .iter()
            .try_fold(0usize, |acc, (w, b)| acc.checked_add(*w)?.checked_add(*b))
            .ok_or_else(|| Error::InvalidInput("network config: parameter count overflows".into()))
    }
}
