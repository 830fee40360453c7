use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One stage of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    /// `k×k` convolution, stride 1, same padding (`k` odd).
    Conv2d {
        kernel: usize,
        c_in: usize,
        c_out: usize,
    },
    Relu,
    /// 2×2 max pooling, stride 2.
    MaxPool,
    Flatten,
    Dense {
        n_in: usize,
        n_out: usize,
    },
    /// Terminal softmax. The network's `forward` stops before it and
    /// returns logits; the loss and `predict` apply it.
    Softmax,
}

impl LayerSpec {
    /// Number of weights and biases.
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv2d {
                kernel,
                c_in,
                c_out,
            } => (c_out * c_in * kernel * kernel, c_out),
            LayerSpec::Dense { n_in, n_out } => (n_in * n_out, n_out),
            _ => (0, 0),
        }
    }

    /// Fan-in used for initialization.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { kernel, c_in, .. } => c_in * kernel * kernel,
            LayerSpec::Dense { n_in, .. } => n_in,
            _ => 0,
        }
    }
}

/// A per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Image { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Image { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Image { c, h, w } => vec![c, h, w],
            Shape::Flat(n) => vec![n],
        }
    }
}

/// Input shape plus ordered layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

fn mismatch(i: usize, expected: impl Into<String>, got: Shape) -> Error {
    Error::ShapeMismatch {
        expected: format!("layer {}: {}", i, expected.into()),
        got: format!("{:?}", got),
    }
}

impl Architecture {
    /// Conv3×3×16, ReLU, pool, Conv3×3×32, ReLU, pool, flatten, Dense 64,
    /// ReLU, Dense `classes`, softmax.
    pub fn compact(channels: usize, height: usize, width: usize, classes: usize) -> Self {
        let flat = 32 * (height / 4) * (width / 4);
        Architecture {
            input: [channels, height, width],
            layers: vec![
                LayerSpec::Conv2d {
                    kernel: 3,
                    c_in: channels,
                    c_out: 16,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::Conv2d {
                    kernel: 3,
                    c_in: 16,
                    c_out: 32,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    n_in: flat,
                    n_out: 64,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    n_in: 64,
                    n_out: classes,
                },
                LayerSpec::Softmax,
            ],
        }
    }

    /// The production network: 3×64×64 RGB in, one logit per fault class out.
    pub fn default_for_images() -> Self {
        Self::compact(3, 64, 64, crate::motorsim::FaultClass::COUNT)
    }

    pub fn input_shape(&self) -> Shape {
        Shape::Image {
            c: self.input[0],
            h: self.input[1],
            w: self.input[2],
        }
    }

    /// Validates the shape chain and returns the input shape of every layer
    /// followed by the final output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        if self.input.contains(&0) {
            return Err(Error::invalid("input dimensions must be positive"));
        }
        let mut cur = self.input_shape();
        let mut out = vec![cur];
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, LayerSpec::Softmax) && i + 1 != self.layers.len() {
                return Err(Error::invalid("softmax must be the last layer"));
            }
            cur = match (*layer, cur) {
                (
                    LayerSpec::Conv2d {
                        kernel,
                        c_in,
                        c_out,
                    },
                    Shape::Image { c, h, w },
                ) => {
                    if kernel % 2 == 0 || kernel == 0 || c_out == 0 {
                        return Err(Error::invalid(
                            "convolution kernel must be odd and channels positive",
                        ));
                    }
                    if c != c_in {
                        return Err(mismatch(i, format!("{} input channels", c_in), cur));
                    }
                    Shape::Image { c: c_out, h, w }
                }
                (LayerSpec::MaxPool, Shape::Image { c, h, w }) => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(mismatch(i, "even spatial size for 2x2 pooling", cur));
                    }
                    Shape::Image {
                        c,
                        h: h / 2,
                        w: w / 2,
                    }
                }
                (LayerSpec::Flatten, s @ Shape::Image { .. }) => Shape::Flat(s.size()),
                (LayerSpec::Dense { n_in, n_out }, Shape::Flat(n)) => {
                    if n != n_in || n_out == 0 {
                        return Err(mismatch(i, format!("flat input of {}", n_in), cur));
                    }
                    Shape::Flat(n_out)
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::Softmax, s @ Shape::Flat(_)) => s,
                (l, s) => return Err(mismatch(i, format!("an input compatible with {:?}", l), s)),
            };
            out.push(cur);
        }
        if !matches!(cur, Shape::Flat(_)) {
            return Err(Error::invalid("network must end in a flat output"));
        }
        Ok(out)
    }

    /// Validates the chain and also that it maps `input` to `classes` outputs.
    pub fn check_contract(&self, input: [usize; 3], classes: usize) -> Result<()> {
        if self.input != input {
            return Err(Error::ShapeMismatch {
                expected: format!("input {:?}", input),
                got: format!("input {:?}", self.input),
            });
        }
        let out = *self.shapes()?.last().expect("non-empty");
        if out != Shape::Flat(classes) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} outputs", classes),
                got: format!("{:?}", out),
            });
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let (w, b) = l.param_counts();
                w + b
            })
            .sum()
    }

    pub fn classes(&self) -> Result<usize> {
        Ok(self.shapes()?.last().expect("non-empty").size())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_chain_is_valid() {
        let a = Architecture::default_for_images();
        a.check_contract([3, 64, 64], 5).unwrap();
        let s = a.shapes().unwrap();
        assert_eq!(s[7], Shape::Flat(32 * 16 * 16));
        assert_eq!(a.parameter_count(), 448 + 4640 + 8192 * 64 + 64 + 325);
    }

    #[test]
    fn broken_chains_are_rejected() {
        let mut a = Architecture::default_for_images();
        a.layers[3] = LayerSpec::Conv2d {
            kernel: 3,
            c_in: 8,
            c_out: 32,
        };
        assert!(matches!(a.shapes(), Err(Error::ShapeMismatch { .. })));
        let mut b = Architecture::default_for_images();
        b.layers.remove(6);
        assert!(b.shapes().is_err());
        let c = Architecture::compact(3, 62, 64, 5);
        assert!(c.shapes().is_err());
        let d = Architecture::compact(3, 32, 32, 5);
        assert!(d.check_contract([3, 64, 64], 5).is_err());
    }
}
